//! Lists automorphisms and computes p-rigid reducts.

use modcsp::autos::{automorphisms, p_automorphisms, p_rigid_reduce};
use modcsp::structures::Structure;

fn main() -> modcsp::Result<()> {
    // A triangle plus a loop on a fourth vertex.
    let edges = vec![vec![0, 1], vec![1, 0], vec![1, 2], vec![2, 1], vec![0, 2], vec![2, 0], vec![3, 3]];
    let h = Structure::single_sorted(4, vec![("E", edges)])?;
    println!("{} automorphisms", automorphisms(&h)?.len());
    for p in [2, 3] {
        let autos = p_automorphisms(&h, p)?;
        let (reduct, chain) = p_rigid_reduce(&h, p)?;
        println!(
            "p = {p}: {} automorphisms of order p; reduct after {} steps has elements {:?}",
            autos.len(),
            chain.len(),
            reduct.sorts[0].elements
        );
    }
    Ok(())
}
