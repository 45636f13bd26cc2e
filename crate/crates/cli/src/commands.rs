//! One function per subcommand. Each returns the JSON report printed on
//! stdout.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use hierlogic::inference::{decode_path, run_inference, Engine, EVariant};
use hierlogic::io::{self, Format};
use hierlogic::metrics::{evaluate, violation_rate, EvalReport};
use hierlogic::rules::{derive_rules, total_loss, LabelMap, LossSummary};
use hierlogic::trainer::{corrupted_scores, evaluate_model, run_demo, write_history, EpochRecord, SyntheticSpec, TrainConfig};
use hierlogic::PeerScope;
use serde::Serialize;
use tracing::info;

use crate::config::RunConfig;
use crate::error::CliError;

#[derive(Debug, Serialize)]
pub struct ValidateReport {
    pub name: String,
    pub nodes: usize,
    pub levels: usize,
    /// Node count per level, leaf level first.
    pub level_sizes: Vec<usize>,
    /// Node counts from the root level down, e.g. `4/16/124`.
    pub summary: String,
    pub roots: usize,
    pub leaves: usize,
    pub paths: usize,
    pub peer_scope: PeerScope,
}

pub fn validate(cfg: &RunConfig) -> Result<ValidateReport, CliError> {
    let h = cfg.load_hierarchy()?;
    let level_sizes: Vec<usize> = (1..=h.levels()).map(|l| h.level_size(l)).collect();
    let summary = level_sizes.iter().rev().map(|n| n.to_string()).collect::<Vec<_>>().join("/");
    Ok(ValidateReport {
        name: h.name().to_string(),
        nodes: h.len(),
        levels: h.levels(),
        summary,
        level_sizes,
        roots: h.num_roots(),
        leaves: h.num_leaves(),
        paths: h.enumerate_paths().len(),
        peer_scope: h.peer_scope(),
    })
}

pub fn loss(cfg: &RunConfig) -> Result<LossSummary, CliError> {
    let h = cfg.load_hierarchy()?;
    let s = io::load_scores(cfg.scores_path()?, cfg.format, &h)?;
    let labels = io::load_labels(cfg.labels_path()?, cfg.format, &h)?;
    let rules = derive_rules(&h);
    let report = total_loss(&s, &labels, &rules, &cfg.loss)?;
    info!(pixels = s.num_pixels(), total = report.total, "loss evaluated");
    Ok(report.summary(&h, &cfg.loss))
}

#[derive(Debug, Serialize)]
pub struct InferReport {
    pub pixels: usize,
    pub height: usize,
    pub width: usize,
    pub iterations: usize,
    pub engine: Engine,
    pub e_variant: EVariant,
    /// Violation rate of the input scores.
    pub input_violation_rate: f64,
    /// Violation rate after message passing, before decoding.
    pub refined_violation_rate: f64,
    /// Violation rate of the decoded paths; always 0.
    pub decoded_violation_rate: f64,
    pub mean_path_score: f64,
    pub output: Option<PathBuf>,
    /// Present when labels were given.
    pub eval: Option<EvalReport>,
}

pub fn infer(cfg: &RunConfig) -> Result<InferReport, CliError> {
    let h = cfg.load_hierarchy()?;
    let s = io::load_scores(cfg.scores_path()?, cfg.format, &h)?;
    let labels = cfg.labels.as_ref().map(|p| io::load_labels(p, cfg.format, &h)).transpose()?;
    let input_rate = violation_rate(&s, &h);
    let refined = run_inference(&s, &h, &cfg.inference);
    let pred = decode_path(&refined, &h);
    info!(pixels = s.num_pixels(), iterations = cfg.inference.iterations, "decoded");

    if let Some(out) = &cfg.out {
        match cfg.format {
            Format::Binary => {
                let leaves = LabelMap::with_shape(&h, pred.leaves(), pred.height, pred.width)
                    .map_err(|e| CliError::new("format", e.to_string()))?;
                io::save_labels(out, Format::Binary, &leaves, &h)?;
            }
            Format::Csv => io::write_paths_csv(BufWriter::new(File::create(out)?), &pred, &h)?,
        }
    }
    let eval = match &labels {
        Some(gt) => Some(evaluate(&pred, gt, &h)?.with_violation_rate(input_rate)),
        None => None,
    };
    let k = pred.num_pixels();
    Ok(InferReport {
        pixels: k,
        height: pred.height,
        width: pred.width,
        iterations: cfg.inference.iterations,
        engine: cfg.inference.engine,
        e_variant: cfg.inference.e_variant,
        input_violation_rate: input_rate,
        refined_violation_rate: violation_rate(&refined, &h),
        decoded_violation_rate: violation_rate(&pred.to_score_map(&h), &h),
        mean_path_score: if k == 0 { 0.0 } else { pred.scores.iter().sum::<f64>() / k as f64 },
        output: cfg.out.clone(),
        eval,
    })
}

#[derive(Debug, Serialize)]
pub struct TrainDemoReport {
    pub hierarchy: String,
    pub spec: SyntheticSpec,
    pub config: TrainConfig,
    pub history: Vec<EpochRecord>,
    /// Held-out report with direct decoding.
    pub final_report: EvalReport,
    /// Held-out report after the configured message-passing rounds.
    pub refined_report: EvalReport,
    pub iterations: usize,
    pub step_seconds: f64,
    pub steps: usize,
}

pub fn train_demo(cfg: &RunConfig) -> Result<TrainDemoReport, CliError> {
    let h = cfg.load_hierarchy()?;
    let run = run_demo(&h, &cfg.synthetic, &cfg.train)?;
    if let Some(out) = &cfg.out {
        let mut w = BufWriter::new(File::create(out)?);
        write_history(&mut w, &run.outcome.history)?;
        w.flush()?;
    }
    let refined_report = evaluate_model(&run.outcome.model, &run.held_out, &h, &cfg.inference);
    Ok(TrainDemoReport {
        hierarchy: h.name().to_string(),
        spec: cfg.synthetic.clone(),
        config: cfg.train.clone(),
        history: run.outcome.history,
        final_report: run.outcome.final_report,
        refined_report,
        iterations: cfg.inference.iterations,
        step_seconds: run.outcome.step_seconds,
        steps: run.outcome.steps,
    })
}

#[derive(Debug, Serialize)]
pub struct GenDataReport {
    pub scores: PathBuf,
    pub labels: PathBuf,
    pub format: Format,
    pub nodes: usize,
    pub height: usize,
    pub width: usize,
    pub flip_rate: f64,
    pub seed: u64,
    pub violation_rate: f64,
}

pub fn gen_data(cfg: &RunConfig) -> Result<GenDataReport, CliError> {
    let h = cfg.load_hierarchy()?;
    let dir = cfg.out.as_ref().ok_or_else(|| CliError::config("--out directory is required"))?;
    fs::create_dir_all(dir)?;
    let (s, labels) = corrupted_scores(&h, &cfg.corruption)?;
    let (sp, lp) = match cfg.format {
        Format::Binary => (dir.join("scores.lsg"), dir.join("labels.lsl")),
        Format::Csv => (dir.join("scores.csv"), dir.join("labels.csv")),
    };
    io::save_scores(&sp, cfg.format, &s, &h)?;
    io::save_labels(&lp, cfg.format, &labels, &h)?;
    Ok(GenDataReport {
        scores: sp,
        labels: lp,
        format: cfg.format,
        nodes: h.len(),
        height: s.height(),
        width: s.width(),
        flip_rate: cfg.corruption.flip_rate,
        seed: cfg.corruption.seed,
        violation_rate: violation_rate(&s, &h),
    })
}
