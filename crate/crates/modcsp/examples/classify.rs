//! Classifies a handful of structures modulo 2 and 3.

use modcsp::classify::classify;
use modcsp::fixtures;
use modcsp::obstruction::ObstructionBudget;

fn main() -> modcsp::Result<()> {
    let budget = ObstructionBudget::default();
    for (name, h) in [("NEQ2", fixtures::neq2()), ("LE2+constants", fixtures::le2c()), ("affine+constants", fixtures::affine_c())] {
        for p in [2, 3] {
            let v = classify(&h, p, &budget)?;
            println!("{name:<18} p={p}: {}", v.label());
            for n in &v.notes {
                println!("    {n}");
            }
        }
    }
    Ok(())
}
