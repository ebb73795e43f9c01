//! Reduces an instance over a 3-element structure with a 2-automorphic
//! polynomial and compares counts modulo 2.

use modcsp::homcount::count_homs_mod;
use modcsp::polyclone::find_p_automorphic_polynomial;
use modcsp::reduce::{reduce_instance, ReduceOptions};
use modcsp::structures::{Constraint, CspInstance, Structure, Variable};

fn main() -> modcsp::Result<()> {
    let h = Structure::single_sorted(3, vec![("E", vec![vec![0, 1], vec![1, 0], vec![2, 2]]), ("U", vec![vec![0], vec![1], vec![2]])])?;
    let Some(f) = find_p_automorphic_polynomial(&h, 2)? else {
        println!("no 2-automorphic polynomial");
        return Ok(());
    };
    println!("polynomial with witness a = {}: {}", f.a, f.f.to_json(&h));
    let vars = (0..4).map(|k| Variable { name: format!("x{k}"), sort: 0 }).collect();
    let cons = [(0, 1), (1, 2), (2, 3)].iter().map(|&(u, v)| Constraint { relation: 0, scope: vec![u, v] }).collect();
    let p = CspInstance::new(vars, cons);
    let r = reduce_instance(&p, &h, &f.f, 2, &ReduceOptions { witness: Some((f.sort, f.a)), ..ReduceOptions::default() })?;
    for d in &r.ledger {
        println!("  {} -> {} ({})", d.variable, d.action, d.mode);
    }
    println!("count mod 2 before: {}", count_homs_mod(&p, &h, 2, &[])?);
    println!("count mod 2 after:  {}", count_homs_mod(&r.instance, &r.split.structure, 2, &[])?);
    Ok(())
}
