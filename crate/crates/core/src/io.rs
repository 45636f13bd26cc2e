//! Score and label files.
//!
//! Binary scores: `"LSG1"`, then `u32` |V|, H, W, then |V|·H·W `f32`, node
//! major, pixels row major. Binary labels: `"LSL1"`, then `u32` H, W, then
//! H·W `u32` leaf ids. All integers and floats little-endian.
//!
//! CSV scores have a header of node names and one row per pixel; CSV labels
//! have a `label` header and one leaf name per row.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hierarchy::{Hierarchy, NodeId};
use crate::inference::PathPrediction;
use crate::rules::{LabelMap, MapError, ScoreMap};

pub const SCORE_MAGIC: &[u8; 4] = b"LSG1";
pub const LABEL_MAGIC: &[u8; 4] = b"LSL1";

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic bytes: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },
    #[error("file declares {declared} nodes, hierarchy has {expected}")]
    NodeCount { declared: usize, expected: usize },
    #[error("trailing bytes after payload")]
    Trailing,
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("unknown node name '{0}'")]
    UnknownName(String),
    #[error("csv header is missing node '{0}'")]
    MissingColumn(String),
    #[error("csv row {row}: {msg}")]
    BadRow { row: usize, msg: String },
    #[error(transparent)]
    Map(#[from] MapError),
}

/// File encodings accepted on the command line.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Binary,
    Csv,
}

impl std::str::FromStr for Format {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "binary" => Ok(Format::Binary),
            "csv" => Ok(Format::Csv),
            _ => Err(format!("unknown format '{s}' (expected binary or csv)")),
        }
    }
}

fn read_magic<R: Read>(r: &mut R, expected: &[u8; 4]) -> Result<(), FormatError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != expected {
        return Err(FormatError::BadMagic {
            expected: String::from_utf8_lossy(expected).into(),
            found: String::from_utf8_lossy(&magic).into(),
        });
    }
    Ok(())
}

fn expect_eof<R: Read>(r: &mut R) -> Result<(), FormatError> {
    let mut probe = [0u8; 1];
    match r.read(&mut probe)? {
        0 => Ok(()),
        _ => Err(FormatError::Trailing),
    }
}

/// Writes scores as `f32`; values are rounded to nearest.
pub fn write_scores<W: Write>(w: &mut W, s: &ScoreMap) -> Result<(), FormatError> {
    w.write_all(SCORE_MAGIC)?;
    for dim in [s.num_nodes(), s.height(), s.width()] {
        w.write_u32::<LittleEndian>(dim as u32)?;
    }
    for &x in s.values().iter() {
        w.write_f32::<LittleEndian>(x as f32)?;
    }
    Ok(())
}

pub fn read_scores<R: Read>(r: &mut R) -> Result<ScoreMap, FormatError> {
    read_magic(r, SCORE_MAGIC)?;
    let v = r.read_u32::<LittleEndian>()? as usize;
    let height = r.read_u32::<LittleEndian>()? as usize;
    let width = r.read_u32::<LittleEndian>()? as usize;
    let mut buf = vec![0f32; v * height * width];
    r.read_f32_into::<LittleEndian>(&mut buf)?;
    expect_eof(r)?;
    let values = Array2::from_shape_vec((v, height * width), buf.into_iter().map(f64::from).collect())
        .expect("length matches header");
    Ok(ScoreMap::with_shape(values, height, width)?)
}

pub fn write_labels<W: Write>(w: &mut W, labels: &LabelMap) -> Result<(), FormatError> {
    w.write_all(LABEL_MAGIC)?;
    w.write_u32::<LittleEndian>(labels.height() as u32)?;
    w.write_u32::<LittleEndian>(labels.width() as u32)?;
    for &l in labels.leaf_labels() {
        w.write_u32::<LittleEndian>(l as u32)?;
    }
    Ok(())
}

pub fn read_labels<R: Read>(r: &mut R, h: &Hierarchy) -> Result<LabelMap, FormatError> {
    read_magic(r, LABEL_MAGIC)?;
    let height = r.read_u32::<LittleEndian>()? as usize;
    let width = r.read_u32::<LittleEndian>()? as usize;
    let mut buf = vec![0u32; height * width];
    r.read_u32_into::<LittleEndian>(&mut buf)?;
    expect_eof(r)?;
    let leaves = buf.into_iter().map(|l| l as NodeId).collect();
    Ok(LabelMap::with_shape(h, leaves, height, width)?)
}

pub fn write_scores_csv<W: Write>(w: W, s: &ScoreMap, h: &Hierarchy) -> Result<(), FormatError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(h.nodes().iter().map(|n| n.name.as_str()))?;
    for k in 0..s.num_pixels() {
        out.write_record(s.column(k).iter().map(|x| x.to_string()))?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a CSV score table; columns may appear in any order.
pub fn read_scores_csv<R: Read>(r: R, h: &Hierarchy) -> Result<ScoreMap, FormatError> {
    let mut rdr = csv::Reader::from_reader(r);
    let header = rdr.headers()?.clone();
    let mut column_of = vec![None; h.len()];
    for (i, name) in header.iter().enumerate() {
        let v = h.id_of(name.trim()).ok_or_else(|| FormatError::UnknownName(name.into()))?;
        column_of[v] = Some(i);
    }
    let column_of: Vec<usize> = column_of
        .into_iter()
        .enumerate()
        .map(|(v, c)| c.ok_or_else(|| FormatError::MissingColumn(h.node(v).name.clone())))
        .collect::<Result<_, _>>()?;
    let mut cols: Vec<f64> = Vec::new();
    let mut k = 0;
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        for &c in &column_of {
            let field = record.get(c).unwrap_or("").trim();
            let x = field
                .parse::<f64>()
                .map_err(|e| FormatError::BadRow { row: row + 1, msg: format!("'{field}': {e}") })?;
            cols.push(x);
        }
        k += 1;
    }
    // cols is pixel-major; transpose into node-major
    let values = Array2::from_shape_vec((k, h.len()), cols).expect("row lengths checked").reversed_axes();
    Ok(ScoreMap::new(values.as_standard_layout().into_owned())?)
}

pub fn write_labels_csv<W: Write>(w: W, labels: &LabelMap, h: &Hierarchy) -> Result<(), FormatError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["label"])?;
    for &l in labels.leaf_labels() {
        out.write_record([h.node(l).name.as_str()])?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_labels_csv<R: Read>(r: R, h: &Hierarchy) -> Result<LabelMap, FormatError> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut leaves = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let name = record.get(0).unwrap_or("").trim();
        leaves.push(h.id_of(name).ok_or_else(|| FormatError::UnknownName(name.into()))?);
    }
    Ok(LabelMap::new(h, leaves)?)
}

/// Decoded paths as CSV: one row per pixel with the path's node names from
/// the root down and the path score.
pub fn write_paths_csv<W: Write>(w: W, pred: &PathPrediction, h: &Hierarchy) -> Result<(), FormatError> {
    let mut out = csv::Writer::from_writer(w);
    let mut header: Vec<String> = (1..=pred.levels).rev().map(|l| format!("level{l}")).collect();
    header.push("score".into());
    out.write_record(&header)?;
    for k in 0..pred.num_pixels() {
        let mut row: Vec<String> = pred.path(k).iter().rev().map(|&v| h.node(v).name.clone()).collect();
        row.push(pred.scores[k].to_string());
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

pub fn load_scores(path: &Path, format: Format, h: &Hierarchy) -> Result<ScoreMap, FormatError> {
    let mut r = BufReader::new(File::open(path)?);
    let s = match format {
        Format::Binary => read_scores(&mut r)?,
        Format::Csv => read_scores_csv(r, h)?,
    };
    if s.num_nodes() != h.len() {
        return Err(FormatError::NodeCount { declared: s.num_nodes(), expected: h.len() });
    }
    Ok(s)
}

pub fn load_labels(path: &Path, format: Format, h: &Hierarchy) -> Result<LabelMap, FormatError> {
    let mut r = BufReader::new(File::open(path)?);
    match format {
        Format::Binary => read_labels(&mut r, h),
        Format::Csv => read_labels_csv(r, h),
    }
}

pub fn save_scores(path: &Path, format: Format, s: &ScoreMap, h: &Hierarchy) -> Result<(), FormatError> {
    let mut w = BufWriter::new(File::create(path)?);
    match format {
        Format::Binary => write_scores(&mut w, s)?,
        Format::Csv => write_scores_csv(&mut w, s, h)?,
    }
    w.flush()?;
    Ok(())
}

pub fn save_labels(path: &Path, format: Format, labels: &LabelMap, h: &Hierarchy) -> Result<(), FormatError> {
    let mut w = BufWriter::new(File::create(path)?);
    match format {
        Format::Binary => write_labels(&mut w, labels)?,
        Format::Csv => write_labels_csv(&mut w, labels, h)?,
    }
    w.flush()?;
    Ok(())
}
