//! Searches the modular closure within a budget and checks whether a
//! Mal'tsev polymorphism survives it.

use modcsp::fixtures;
use modcsp::mpp::{closure_search, maltsev_for_closure, ClosureBudget};

fn main() -> modcsp::Result<()> {
    let budget = ClosureBudget::parse("relations=60,rounds=2")?;
    for (name, h) in [("LE2+constants", fixtures::le2c()), ("affine+constants", fixtures::affine_c())] {
        let c = closure_search(&h, 2, &budget)?;
        println!("{name}: {} relations after {} rounds ({:?})", c.relations.len(), c.rounds, c.status);
        for d in c.relations.iter().take(3) {
            println!("  {} = {}", d.relation.name, d.formula.render());
        }
        let v = maltsev_for_closure(&h, 2, &budget)?;
        println!("  no Mal'tsev in the closure: {}", v.has_no_maltsev());
    }
    Ok(())
}
