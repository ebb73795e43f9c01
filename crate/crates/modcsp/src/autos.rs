//! Automorphism groups, p-automorphisms and the p-rigid reduction,
//! stabilizers and automorphism-stable sets, and M-automorphisms of cubes.

use std::collections::BTreeSet;
use std::ops::ControlFlow;

use serde_json::{json, Value};

use crate::error::{check_prime, guard, invalid, Result};
use crate::polyclone::{indicator_coordinates, lcm, perm_order, polymorphisms_pinned, OpPin, OperationTable, DEFAULT_POLY_LIMIT};
use crate::structures::{induced_substructure, power, search_isomorphisms, MultiSortedMap, Structure};

/// Default cap on `Π |H_i|!`, the size of the raw search space.
pub const DEFAULT_AUTO_GUARD: u128 = 10_000_000;

/// An automorphism with its order.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Automorphism {
    pub map: MultiSortedMap,
    pub order: usize,
}

impl Automorphism {
    pub fn new(map: MultiSortedMap) -> Self {
        let order = map_order(&map);
        Automorphism { map, order }
    }

    pub fn to_json(&self, h: &Structure) -> Value {
        json!({"order": self.order, "map": self.map.to_json(h, h)})
    }
}

/// Least `n ≥ 1` with `πⁿ = id`.
pub fn map_order(map: &MultiSortedMap) -> usize {
    map.maps.iter().map(|m| perm_order(m).expect("automorphisms are bijective")).fold(1, lcm)
}

/// True when `map` is a bijection preserving every relation both ways.
pub fn is_automorphism(h: &Structure, map: &MultiSortedMap) -> bool {
    map.maps.len() == h.sorts.len()
        && map.maps.iter().zip(&h.sorts).all(|(m, s)| m.len() == s.len() && perm_order(m).is_some())
        && h.relations.iter().all(|r| r.tuples().iter().all(|t| r.contains(&map.apply_tuple(&r.sorts, t))))
}

fn factorial_product(h: &Structure) -> u128 {
    h.sorts.iter().fold(1u128, |acc, s| (1..=s.len() as u128).fold(acc, |a, k| a.saturating_mul(k)))
}

/// The automorphism group, in lexicographic order of the mapping tables.
pub fn automorphisms(h: &Structure) -> Result<Vec<Automorphism>> {
    automorphisms_guarded(h, DEFAULT_AUTO_GUARD)
}

pub fn automorphisms_guarded(h: &Structure, limit: u128) -> Result<Vec<Automorphism>> {
    guard("automorphism search space (product of factorials)", factorial_product(h), limit)?;
    pinned_automorphisms(h, &[])
}

/// Automorphisms with prescribed images `(sort, element, image)`.
pub fn pinned_automorphisms(h: &Structure, pins: &[(usize, usize, usize)]) -> Result<Vec<Automorphism>> {
    let mut out = Vec::new();
    search_isomorphisms(h, h, pins, |m| {
        out.push(Automorphism::new(m.clone()));
        ControlFlow::Continue(())
    })?;
    Ok(out)
}

/// Automorphisms of order exactly `p`.
pub fn p_automorphisms(h: &Structure, p: u64) -> Result<Vec<Automorphism>> {
    check_prime(p)?;
    Ok(automorphisms(h)?.into_iter().filter(|a| a.order as u64 == p).collect())
}

/// Per-sort fixed points of a map.
pub fn fixed_points(map: &MultiSortedMap) -> Vec<Vec<usize>> {
    map.maps.iter().map(|m| (0..m.len()).filter(|&e| m[e] == e).collect()).collect()
}

/// One step of the p-rigid reduction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RigidStep {
    pub automorphism: Automorphism,
    /// Per sort, the original indices (in the structure before this step)
    /// kept by restricting to the fixed points.
    pub kept: Vec<Vec<usize>>,
}

/// Repeatedly restricts to the fixed points of the lexicographically first
/// p-automorphism until none is left.
pub fn p_rigid_reduce(h: &Structure, p: u64) -> Result<(Structure, Vec<RigidStep>)> {
    p_rigid_reduce_by(h, p, |_| 0)
}

/// Like [`p_rigid_reduce`], with the p-automorphism chosen by `pick` from
/// the (non-empty, canonically ordered) list available at each step.
pub fn p_rigid_reduce_by(h: &Structure, p: u64, mut pick: impl FnMut(&[Automorphism]) -> usize) -> Result<(Structure, Vec<RigidStep>)> {
    check_prime(p)?;
    let mut cur = h.clone();
    let mut chain = Vec::new();
    loop {
        let autos = p_automorphisms(&cur, p)?;
        if autos.is_empty() {
            return Ok((cur, chain));
        }
        let k = pick(&autos);
        let a = autos.get(k).ok_or_else(|| invalid("pick returned an index out of range"))?.clone();
        let fix = fixed_points(&a.map);
        let (next, kept) = induced_substructure(&cur, &fix)?;
        debug_assert!(next.total_size() < cur.total_size());
        chain.push(RigidStep { automorphism: a, kept });
        cur = next;
    }
}

/// Stabilizer query over a structure `K` (typically a power `Hⁿ`):
/// automorphisms fixing each point and, if given, mapping `stable` into
/// itself. Points are `(sort, element)` pairs of `K`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct StabilizerQuery {
    pub points: Vec<(usize, usize)>,
    pub stable: Option<Vec<(usize, usize)>>,
}

/// `Stab(ā₁…ā_s, A)` as a list of automorphisms.
pub fn stab(query: &StabilizerQuery, k: &Structure) -> Result<Vec<Automorphism>> {
    let pins: Vec<(usize, usize, usize)> = query.points.iter().map(|&(s, e)| (s, e, e)).collect();
    guard("automorphism search space (product of factorials)", factorial_product(k), DEFAULT_AUTO_GUARD)?;
    let all = pinned_automorphisms(k, &pins)?;
    Ok(match &query.stable {
        None => all,
        Some(a) => {
            let set: BTreeSet<(usize, usize)> = a.iter().copied().collect();
            all.into_iter().filter(|au| set.iter().all(|&(s, e)| set.contains(&(s, au.map.apply(s, e))))).collect()
        }
    })
}

/// True when a finite set of automorphisms is closed under composition
/// and contains the identity.
pub fn is_subgroup(set: &[Automorphism]) -> bool {
    let maps: BTreeSet<&MultiSortedMap> = set.iter().map(|a| &a.map).collect();
    maps.iter().any(|m| m.is_identity()) && maps.iter().all(|a| maps.iter().all(|b| maps.contains(&a.compose(b))))
}

/// Finds the first `ā ∈ A` for which `Stab(ā, A) = {π | π(ā) ∈ A}` is a
/// subgroup of `Aut(K)`.
pub fn is_automorphism_stable(a: &[(usize, usize)], k: &Structure) -> Result<Option<(usize, usize)>> {
    let group = automorphisms(k)?;
    let set: BTreeSet<(usize, usize)> = a.iter().copied().collect();
    for &(s, e) in &set {
        let st: Vec<Automorphism> = group.iter().filter(|au| set.contains(&(s, au.map.apply(s, e)))).cloned().collect();
        if is_subgroup(&st) {
            return Ok(Some((s, e)));
        }
    }
    Ok(None)
}

/// An M-automorphism of the cube, as three ternary polymorphisms.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MAutomorphism {
    pub g: [OperationTable; 3],
}

impl MAutomorphism {
    /// The bundled map on the elements of `power(H, 3)`.
    pub fn cube_map(&self) -> MultiSortedMap {
        let maps = self.g[0]
            .sizes
            .iter()
            .enumerate()
            .map(|(s, &n)| {
                (0..n * n * n)
                    .map(|i| {
                        let (a, b, c) = (self.g[0].tables[s][i], self.g[1].tables[s][i], self.g[2].tables[s][i]);
                        (a * n + b) * n + c
                    })
                    .collect()
            })
            .collect();
        MultiSortedMap { maps }
    }

    pub fn order(&self) -> usize {
        map_order(&self.cube_map())
    }

    pub fn is_identity(&self) -> bool {
        self.cube_map().is_identity()
    }

    pub fn from_cube_map(map: &MultiSortedMap, sizes: &[usize]) -> Self {
        let comp = |j: usize| OperationTable {
            arity: 3,
            sizes: sizes.to_vec(),
            tables: map.maps.iter().zip(sizes).map(|(m, &n)| m.iter().map(|&v| [v / (n * n), v / n % n, v % n][j]).collect()).collect(),
        };
        MAutomorphism { g: [comp(0), comp(1), comp(2)] }
    }
}

/// Ternary polymorphisms equal to the `j`-th projection on `I_H ∪ J_H`.
pub fn m_components(h: &Structure, j: usize) -> Result<Vec<OperationTable>> {
    let ic = indicator_coordinates(h);
    let pins: Vec<OpPin> = ic.i.iter().chain(&ic.j).map(|c| OpPin { sort: c.sort, args: c.triple.to_vec(), value: c.triple[j] }).collect();
    polymorphisms_pinned(h, 3, &pins, DEFAULT_POLY_LIMIT)
}

/// All M-automorphisms of `H³` (automorphisms fixing every `(a,b,b)` and
/// `(b,b,a)`), optionally only those of order 1 or `p`; lexicographic order
/// of `(g₁, g₂, g₃)`.
pub fn m_automorphisms(h: &Structure, p: Option<u64>) -> Result<Vec<MAutomorphism>> {
    if let Some(p) = p {
        check_prime(p)?;
    }
    let lists = [m_components(h, 0)?, m_components(h, 1)?, m_components(h, 2)?];
    let combos = lists.iter().fold(1u128, |acc, l| acc.saturating_mul(l.len() as u128));
    guard("M-automorphism candidate triples", combos, DEFAULT_AUTO_GUARD)?;
    let sizes = h.sizes();
    let mut out = Vec::new();
    let mut seen = vec![];
    for g1 in &lists[0] {
        for g2 in &lists[1] {
            // Prune: the first two components must already be injective on
            // every fibre of size n over (g1, g2).
            let ok12 = sizes.iter().enumerate().all(|(s, &n)| {
                seen.clear();
                seen.resize(n * n, 0usize);
                (0..n * n * n).all(|i| {
                    let k = g1.tables[s][i] * n + g2.tables[s][i];
                    seen[k] += 1;
                    seen[k] <= n
                })
            });
            if !ok12 {
                continue;
            }
            for g3 in &lists[2] {
                let m = MAutomorphism { g: [g1.clone(), g2.clone(), g3.clone()] };
                let cube = m.cube_map();
                if cube.maps.iter().any(|t| perm_order(t).is_none()) {
                    continue;
                }
                if let Some(p) = p {
                    let o = map_order(&cube) as u64;
                    if o != 1 && o != p {
                        continue;
                    }
                }
                out.push(m);
            }
        }
    }
    Ok(out)
}

/// M-automorphisms via a direct automorphism search on `power(H, 3)` with
/// every `(a,b,b)` and `(b,b,a)` pinned; an independent cross-check.
pub fn m_automorphisms_direct(h: &Structure) -> Result<Vec<MAutomorphism>> {
    let cube = power(h, 3)?;
    let ic = indicator_coordinates(h);
    let sizes = h.sizes();
    let pins: Vec<(usize, usize, usize)> =
        ic.i.iter()
            .chain(&ic.j)
            .map(|c| {
                let n = sizes[c.sort];
                let e = (c.triple[0] * n + c.triple[1]) * n + c.triple[2];
                (c.sort, e, e)
            })
            .collect();
    let mut out: Vec<MAutomorphism> =
        pinned_automorphisms(&cube, &pins)?.iter().map(|a| MAutomorphism::from_cube_map(&a.map, &sizes)).collect();
    out.sort();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::homcount::count_homs_mod;
    use crate::structures::{add_constants, find_isomorphism, Relation, Sort};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_structure(rng: &mut ChaCha8Rng, n: usize) -> Structure {
        let mut tuples = Vec::new();
        for a in 0..n {
            for b in 0..n {
                if rng.gen_bool(0.4) {
                    tuples.push(vec![a, b]);
                }
            }
        }
        Structure::single_sorted(n, vec![("R", tuples)]).unwrap()
    }

    #[test]
    fn neq2_group() {
        let g = automorphisms(&fixtures::neq2()).unwrap();
        assert_eq!(g.len(), 2);
        assert_eq!(g[1].map.maps, vec![vec![1, 0]]);
        assert_eq!(p_automorphisms(&fixtures::neq2(), 2).unwrap().len(), 1);
        assert!(p_automorphisms(&fixtures::neq2(), 3).unwrap().is_empty());
        assert_eq!(automorphisms(&add_constants(&fixtures::neq2()).unwrap()).unwrap().len(), 1);
        assert!(p_automorphisms(&fixtures::neq2(), 4).is_err());
    }

    #[test]
    fn groups_are_closed_on_random_structures() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let h = random_structure(&mut rng, 3);
            let g = automorphisms(&h).unwrap();
            assert!(is_subgroup(&g));
            for a in &g {
                assert!(is_automorphism(&h, &a.map));
                assert!(g.iter().any(|b| b.map == a.map.inverse()));
            }
        }
    }

    #[test]
    fn rigid_reduction() {
        let (r, chain) = p_rigid_reduce(&fixtures::neq2(), 2).unwrap();
        assert_eq!(r.total_size(), 0);
        assert_eq!(chain.len(), 1);
        let (r, chain) = p_rigid_reduce(&fixtures::le2(), 2).unwrap();
        assert_eq!(r, fixtures::le2());
        assert!(chain.is_empty());
    }

    #[test]
    fn rigid_reduction_is_order_independent() {
        // Two disjoint loops-free edges plus a loop: swaps inside each edge
        // and the swap of the two edges commute in part.
        let h = Structure::single_sorted(5, vec![("R", vec![vec![0, 1], vec![1, 0], vec![2, 3], vec![3, 2], vec![4, 4]])]).unwrap();
        let (a, ca) = p_rigid_reduce(&h, 2).unwrap();
        let (b, cb) = p_rigid_reduce_by(&h, 2, |l| l.len() - 1).unwrap();
        assert!(!ca.is_empty() && !cb.is_empty());
        assert!(find_isomorphism(&a, &b).unwrap().is_some());
        assert!(p_automorphisms(&a, 2).unwrap().is_empty());
    }

    #[test]
    fn rigid_reduction_preserves_counts_mod_p() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..15 {
            let h = random_structure(&mut rng, 4);
            let (r, _) = p_rigid_reduce(&h, 2).unwrap();
            let g = random_structure(&mut rng, 3);
            let inst = crate::structures::structure_as_instance(&g, &h).unwrap();
            let inst_r = crate::structures::structure_as_instance(&g, &r).unwrap();
            assert_eq!(count_homs_mod(&inst, &h, 2, &[]).unwrap(), count_homs_mod(&inst_r, &r, 2, &[]).unwrap());
        }
    }

    #[test]
    fn m_automorphisms_match_direct_search() {
        for h in [fixtures::neq2(), fixtures::le2(), fixtures::affine()] {
            let via_polys = m_automorphisms(&h, None).unwrap();
            assert_eq!(via_polys, m_automorphisms_direct(&h).unwrap());
            assert!(via_polys.iter().any(MAutomorphism::is_identity));
            let maps: BTreeSet<MultiSortedMap> = via_polys.iter().map(MAutomorphism::cube_map).collect();
            for a in &maps {
                assert!(maps.contains(&a.inverse()));
                for b in &maps {
                    assert!(maps.contains(&a.compose(b)));
                }
            }
        }
    }

    #[test]
    fn m_automorphisms_on_two_element_sorts() {
        // On a 2-element sort an M-automorphism is the identity on the cube
        // or swaps 010 and 101.
        let h = fixtures::affine();
        for m in m_automorphisms(&h, None).unwrap() {
            let c = &m.cube_map().maps[0];
            let moved: Vec<usize> = (0..8).filter(|&i| c[i] != i).collect();
            assert!(moved.is_empty() || moved == vec![0b010, 0b101]);
        }
        assert!(m_automorphisms(&h, Some(3)).unwrap().iter().all(MAutomorphism::is_identity));
    }

    #[test]
    fn stabilizers() {
        let h = fixtures::neq2();
        let all: Vec<(usize, usize)> = vec![(0, 0), (0, 1)];
        assert_eq!(stab(&StabilizerQuery { points: vec![], stable: Some(all.clone()) }, &h).unwrap().len(), 2);
        assert_eq!(is_automorphism_stable(&all, &h).unwrap(), Some((0, 0)));
        assert_eq!(stab(&StabilizerQuery { points: vec![(0, 0)], stable: None }, &h).unwrap().len(), 1);
        assert_eq!(is_automorphism_stable(&[(0, 1)], &h).unwrap(), Some((0, 1)));
        // A set whose point stabilizer is not closed: in the 3-cycle's
        // group, {0,1} gives {π | π(0) ∈ {0,1}} = {id, ρ}, not a subgroup.
        let cyc =
            Structure::new(vec![Sort::numbered("V", 3)], vec![Relation::new("R", vec![0, 0], vec![vec![0, 1], vec![1, 2], vec![2, 0]])])
                .unwrap();
        assert_eq!(is_automorphism_stable(&[(0, 0), (0, 1)], &cyc).unwrap(), None);
    }
}
