//! Builds a hardness certificate, replays it, and shows that tampering is
//! detected.

use modcsp::fixtures;
use modcsp::obstruction::{conservative_obstruction, two_element_reduce, verify_certificate, ObstructionBudget};

fn main() -> modcsp::Result<()> {
    let h = fixtures::le2c();
    let budget = ObstructionBudget::default();
    let out = conservative_obstruction(&h, 2, &budget)?;
    let cert = two_element_reduce(out.certificate().expect("LE2 with constants is hard"), &h, 2, &budget)?;
    println!("{} elimination steps, terminal pattern {:?}", cert.steps.len(), cert.terminal.as_ref().map(|t| t.pattern));
    for s in &cert.steps {
        println!("  {:?} on {}", s.rule, s.coordinate);
    }
    println!("replay: {:?}", verify_certificate(&cert, &h, 2)?);

    let mut forged = cert.clone();
    forged.pattern.excluded = forged.pattern.members[0].clone();
    println!("forged: {:?}", verify_certificate(&forged, &h, 2)?);
    Ok(())
}
