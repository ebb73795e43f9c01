//! Bundled reference structures and data files.

use crate::structures::{CspInstance, Structure};

pub const NEQ2_JSON: &str = include_str!("../data/neq2.json");
pub const LE2_JSON: &str = include_str!("../data/le2.json");
pub const LE2C_JSON: &str = include_str!("../data/le2c.json");
pub const AFFINE_JSON: &str = include_str!("../data/affine.json");
pub const AFFINE_C_JSON: &str = include_str!("../data/affine_c.json");
pub const EDGE_JSON: &str = include_str!("../data/edge.json");
pub const UPSILON3_NEQ2_JSON: &str = include_str!("../data/upsilon3_neq2.json");
pub const CASE_TABLES_JSON: &str = include_str!("../data/case_tables.json");

fn load(s: &str) -> Structure {
    Structure::from_json_str(s).expect("bundled structure is valid")
}

/// `({0,1}; R = {01, 10})`.
pub fn neq2() -> Structure {
    load(NEQ2_JSON)
}

/// `({0,1}; Q = {00, 01, 10})`.
pub fn le2() -> Structure {
    load(LE2_JSON)
}

/// `le2` with both constants.
pub fn le2c() -> Structure {
    load(LE2C_JSON)
}

/// `({0,1}; x ⊕ y ⊕ z = 0)`.
pub fn affine() -> Structure {
    load(AFFINE_JSON)
}

/// `affine` with both constants.
pub fn affine_c() -> Structure {
    load(AFFINE_C_JSON)
}

/// A single edge `R(u, v)`, an instance over `neq2`.
pub fn edge_instance() -> CspInstance {
    let v = serde_json::from_str(EDGE_JSON).expect("bundled instance is valid json");
    CspInstance::from_json(&v, &neq2()).expect("bundled instance is valid")
}

/// Looks up a bundled structure by short name.
pub fn by_name(name: &str) -> Option<Structure> {
    Some(match name {
        "neq2" => neq2(),
        "le2" => le2(),
        "le2c" => le2c(),
        "affine" => affine(),
        "affine_c" => affine_c(),
        _ => return None,
    })
}
