//! Hierarchies bundled with the crate.

use crate::hierarchy::Hierarchy;

pub const TOY6: &str = include_str!("../fixtures/toy6.json");
pub const CITYSCAPES: &str = include_str!("../fixtures/cityscapes.json");
pub const MAPILLARY: &str = include_str!("../fixtures/mapillary.json");
pub const PASCAL_PART108: &str = include_str!("../fixtures/pascal_part108.json");
pub const ADE20K: &str = include_str!("../fixtures/ade20k.json");

/// `(name, json)` for every bundled hierarchy.
pub const ALL: [(&str, &str); 5] = [
    ("toy6", TOY6),
    ("cityscapes", CITYSCAPES),
    ("mapillary", MAPILLARY),
    ("pascal_part108", PASCAL_PART108),
    ("ade20k", ADE20K),
];

pub fn by_name(name: &str) -> Option<&'static str> {
    ALL.iter().find(|(n, _)| *n == name).map(|(_, text)| *text)
}

fn load(text: &str) -> Hierarchy {
    Hierarchy::parse(text).expect("bundled fixture is valid")
}

/// The six-node tree a→{b,c}, b→{d,e}, c→{f}.
pub fn toy6() -> Hierarchy {
    load(TOY6)
}

pub fn cityscapes() -> Hierarchy {
    load(CITYSCAPES)
}

pub fn mapillary() -> Hierarchy {
    load(MAPILLARY)
}

pub fn pascal_part108() -> Hierarchy {
    load(PASCAL_PART108)
}

pub fn ade20k() -> Hierarchy {
    load(ADE20K)
}

pub fn all() -> Vec<Hierarchy> {
    ALL.iter().map(|(_, text)| load(text)).collect()
}
