//! Decides the Mal'tsev condition and builds the minority operation on a
//! 2-element structure.

use modcsp::fixtures;
use modcsp::polyclone::{has_maltsev, maltsev_by_membership, minority_from_maltsev, DEFAULT_POLY_LIMIT};

fn main() -> modcsp::Result<()> {
    for (name, h) in [("NEQ2", fixtures::neq2()), ("LE2", fixtures::le2()), ("affine", fixtures::affine())] {
        let m = has_maltsev(&h)?;
        let by_membership = maltsev_by_membership(&h, DEFAULT_POLY_LIMIT)?;
        println!("{name}: Mal'tsev = {}, membership test = {by_membership}", m.is_some());
        if let Some(m) = m {
            let c = minority_from_maltsev(&m)?;
            println!("  types {:?}, minority: {}", c.types, c.h.to_json(&h));
        }
    }
    Ok(())
}
