//! Evaluates modular primitive-positive formulas: the same quantifier
//! prefix defines different relations modulo 2 and modulo 3.

use modcsp::fixtures;
use modcsp::mpp::{eval_mpp, MppFormula};
use serde_json::json;

fn main() -> modcsp::Result<()> {
    let h = fixtures::le2c();
    // Keep (x, z) when the number of y with Q(x,y) and Q(y,z) is non-zero mod p.
    let phi = json!({
        "free": [{"var": "x", "sort": "H"}, {"var": "z", "sort": "H"}],
        "blocks": [["y"]],
        "atoms": [{"relation": "Q", "scope": ["x", "y"]}, {"relation": "Q", "scope": ["y", "z"]}],
    });
    let phi = MppFormula::from_json(&phi, &h)?;
    println!("{}", phi.render());
    for p in [2, 3] {
        let e = eval_mpp(&phi, &h, p)?;
        println!("mod {p}: {:?} (strict: {})", e.relation.tuples(), e.strict);
    }
    Ok(())
}
