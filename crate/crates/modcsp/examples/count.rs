//! Counts homomorphisms modulo p, with and without pinned variables, and
//! evaluates a partition function.

use modcsp::fixtures;
use modcsp::homcount::{count_homs, count_homs_mod, eval_partition_function, Digraph, FpMatrix};

fn main() -> modcsp::Result<()> {
    let h = fixtures::neq2();
    let edge = fixtures::edge_instance();
    println!("edge -> NEQ2: {} solutions", count_homs(&edge, &h, &[])?);
    for p in [2, 3] {
        println!("  mod {p}: {}", count_homs_mod(&edge, &h, p, &[])?);
    }
    println!("  with u = 0: {}", count_homs(&edge, &h, &[(0, 0)])?);

    let m = FpMatrix::new(3, vec![vec![1, 1], vec![1, 0]])?;
    for n in 1..=6 {
        let path = Digraph { n, edges: (1..n).map(|i| (i - 1, i)).collect() };
        println!("Z_M(path on {n} vertices) mod 3 = {}", eval_partition_function(&m, &path)?);
    }
    Ok(())
}
