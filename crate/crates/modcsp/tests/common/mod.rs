//! Random generators shared by the integration tests.
#![allow(dead_code)]

use modcsp::polyclone::OperationTable;
use modcsp::structures::{Constraint, CspInstance, Relation, Sort, Structure, Variable};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Seed for randomized suites; `MODCSP_SEED` overrides the default.
pub fn seed(default: u64) -> u64 {
    std::env::var("MODCSP_SEED").ok().and_then(|s| s.parse().ok()).unwrap_or(default)
}

pub fn rng(default: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed(default))
}

/// A random relation of the given sorts with roughly `density` of all
/// tuples, never empty.
pub fn random_relation(rng: &mut ChaCha8Rng, name: &str, sorts: Vec<usize>, sizes: &[usize], density: f64) -> Relation {
    let dims: Vec<usize> = sorts.iter().map(|&s| sizes[s]).collect();
    let total: usize = dims.iter().product();
    let mut tuples: Vec<Vec<usize>> = (0..total).filter(|_| rng.gen_bool(density)).map(|i| unrank(i, &dims)).collect();
    if tuples.is_empty() && total > 0 {
        tuples.push(unrank(rng.gen_range(0..total), &dims));
    }
    Relation::new(name, sorts, tuples)
}

pub fn unrank(mut i: usize, dims: &[usize]) -> Vec<usize> {
    let mut t = vec![0; dims.len()];
    for k in (0..dims.len()).rev() {
        t[k] = i % dims[k];
        i /= dims[k];
    }
    t
}

/// A random structure with the given sort sizes and `nrel` relations of
/// arity 1–3.
pub fn random_structure(rng: &mut ChaCha8Rng, sizes: &[usize], nrel: usize) -> Structure {
    let sorts: Vec<Sort> = sizes.iter().enumerate().map(|(k, &n)| Sort::numbered(format!("S{k}"), n)).collect();
    let relations = (0..nrel)
        .map(|k| {
            let arity = rng.gen_range(1..=3);
            let rs: Vec<usize> = (0..arity).map(|_| rng.gen_range(0..sizes.len())).collect();
            random_relation(rng, &format!("R{k}"), rs, sizes, 0.4)
        })
        .collect();
    Structure::new(sorts, relations).unwrap()
}

/// A random instance over `h` with `nv` variables and `nc` constraints.
pub fn random_instance(rng: &mut ChaCha8Rng, h: &Structure, nv: usize, nc: usize) -> CspInstance {
    let variables: Vec<Variable> = (0..nv).map(|k| Variable { name: format!("x{k}"), sort: rng.gen_range(0..h.sorts.len()) }).collect();
    let mut constraints = Vec::new();
    for _ in 0..nc * 4 {
        if constraints.len() == nc {
            break;
        }
        let r = rng.gen_range(0..h.relations.len());
        let mut scope = Vec::new();
        for &s in &h.relations[r].sorts {
            let fitting: Vec<usize> = (0..nv).filter(|&v| variables[v].sort == s).collect();
            match fitting.choose(rng) {
                Some(&v) => scope.push(v),
                None => break,
            }
        }
        if scope.len() == h.relations[r].arity() {
            constraints.push(Constraint { relation: r, scope });
        }
    }
    CspInstance::new(variables, constraints)
}

/// A binary operation on one 3-element sort whose sections `f(x, ·)` are
/// the identity or transpositions, at least one of them a transposition.
pub fn random_two_automorphic(rng: &mut ChaCha8Rng) -> OperationTable {
    let perms: Vec<Vec<usize>> = vec![vec![0, 1, 2], vec![1, 0, 2], vec![2, 1, 0], vec![0, 2, 1]];
    loop {
        let rows: Vec<Vec<usize>> = (0..3).map(|_| perms.choose(rng).unwrap().clone()).collect();
        if rows.iter().any(|r| (0..3).filter(|&i| r[i] != i).count() == 2) {
            return OperationTable::from_fn(&[3], 2, |_, a| rows[a[0]][a[1]]);
        }
    }
}

/// Smallest superset of `tuples` closed under coordinatewise `f`.
pub fn closed_under(f: &OperationTable, mut tuples: Vec<Vec<usize>>) -> Vec<Vec<usize>> {
    loop {
        let mut next = tuples.clone();
        for a in &tuples {
            for b in &tuples {
                let c: Vec<usize> = a.iter().zip(b).map(|(&x, &y)| f.apply(0, &[x, y])).collect();
                if !next.contains(&c) {
                    next.push(c);
                }
            }
        }
        if next.len() == tuples.len() {
            return tuples;
        }
        tuples = next;
    }
}

/// A 3-element structure with 1–2 relations, all preserved by `f`.
pub fn random_closed_structure(rng: &mut ChaCha8Rng, f: &OperationTable) -> Structure {
    let nrel = rng.gen_range(1..=2);
    let relations = (0..nrel)
        .map(|k| {
            let arity = rng.gen_range(1..=2);
            let seeds = (0..rng.gen_range(1..=2)).map(|_| (0..arity).map(|_| rng.gen_range(0..3)).collect()).collect();
            (format!("R{k}"), closed_under(f, seeds))
        })
        .collect::<Vec<_>>();
    Structure::single_sorted(3, relations.iter().map(|(n, t)| (n.as_str(), t.clone())).collect()).unwrap()
}
