//! Ground-truth counting: homomorphism enumeration and counting (plain,
//! pointed, injective, modulo p), Möbius inversion over partition lattices,
//! and partition functions `Z_M(G)` evaluated modulo p.

use std::collections::BTreeMap;
use std::ops::ControlFlow;

use num_bigint::BigInt;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{check_prime, guard, invalid, Error, Result};
use crate::solver::Csp;
use crate::structures::{element_variable, structure_as_instance, CspInstance, Relation, Sort, Structure};

/// Visits the solutions of `P` over `H` extending the pins
/// (`(variable, element)` pairs), in lexicographic order.
pub fn for_each_hom<F: FnMut(&[usize]) -> ControlFlow<()>>(
    p: &CspInstance,
    h: &Structure,
    pins: &[(usize, usize)],
    visit: F,
) -> Result<()> {
    p.validate(h)?;
    Csp::from_instance(p, h, pins)?.for_each(visit);
    Ok(())
}

/// All solutions extending the pins, in lexicographic order.
pub fn enumerate_homs(p: &CspInstance, h: &Structure, pins: &[(usize, usize)]) -> Result<Vec<Vec<usize>>> {
    let mut out = Vec::new();
    for_each_hom(p, h, pins, |s| {
        out.push(s.to_vec());
        ControlFlow::Continue(())
    })?;
    Ok(out)
}

/// Exact number of solutions extending the pins.
pub fn count_homs(p: &CspInstance, h: &Structure, pins: &[(usize, usize)]) -> Result<u128> {
    p.validate(h)?;
    Ok(Csp::from_instance(p, h, pins)?.count())
}

/// Number of solutions modulo the prime `modulus`.
pub fn count_homs_mod(p: &CspInstance, h: &Structure, modulus: u64, pins: &[(usize, usize)]) -> Result<u64> {
    check_prime(modulus)?;
    Ok((count_homs(p, h, pins)? % modulus as u128) as u64)
}

/// `hom(G, H)` for similar structures.
pub fn hom_count(g: &Structure, h: &Structure) -> Result<u128> {
    count_homs(&structure_as_instance(g, h)?, h, &[])
}

/// Number of homomorphisms `G → H` sending each point `(sort, element)` of
/// `G` into the matching target subset of `H`.
pub fn count_pointed(g: &Structure, xs: &[(usize, usize)], h: &Structure, targets: &[Vec<usize>]) -> Result<u128> {
    if xs.len() != targets.len() {
        return Err(invalid("one target per point is required"));
    }
    let inst = structure_as_instance(g, h)?;
    let mut csp = Csp::from_instance(&inst, h, &[])?;
    for (&(s, e), t) in xs.iter().zip(targets) {
        if s >= g.sorts.len() || e >= g.sorts[s].len() {
            return Err(invalid("point outside the source structure"));
        }
        let mut mask = 0u128;
        for &a in t {
            if a >= h.sorts[s].len() {
                return Err(invalid(format!("target element #{a} is outside sort `{}`", h.sorts[s].name)));
            }
            mask |= 1u128 << a;
        }
        csp.domains[element_variable(g, s, e)] &= mask;
    }
    Ok(csp.count())
}

/// A multi-sorted partition: one restricted-growth label vector per sort.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MultiPartition(pub Vec<Vec<usize>>);

impl MultiPartition {
    pub fn discrete(sizes: &[usize]) -> Self {
        MultiPartition(sizes.iter().map(|&n| (0..n).collect()).collect())
    }

    pub fn top(sizes: &[usize]) -> Self {
        MultiPartition(sizes.iter().map(|&n| vec![0; n]).collect())
    }

    /// Number of classes per sort.
    pub fn class_counts(&self) -> Vec<usize> {
        self.0.iter().map(|l| l.iter().max().map_or(0, |m| m + 1)).collect()
    }

    pub fn total_classes(&self) -> usize {
        self.class_counts().iter().sum()
    }

    /// `self ≤ other`: every class of `self` lies inside a class of `other`.
    pub fn finer_or_equal(&self, other: &MultiPartition) -> bool {
        self.0.iter().zip(&other.0).all(|(a, b)| (0..a.len()).all(|i| (i + 1..a.len()).all(|j| a[i] != a[j] || b[i] == b[j])))
    }

    /// The classes of one sort, as element lists.
    pub fn blocks(&self, sort: usize) -> Vec<Vec<usize>> {
        let labels = &self.0[sort];
        let mut blocks = vec![Vec::new(); labels.iter().max().map_or(0, |m| m + 1)];
        for (e, &l) in labels.iter().enumerate() {
            blocks[l].push(e);
        }
        blocks
    }
}

/// All set partitions of `0..n` as restricted-growth strings, in
/// lexicographic order.
pub fn set_partitions(n: usize) -> Vec<Vec<usize>> {
    fn rec(k: usize, n: usize, cur: &mut Vec<usize>, max: usize, out: &mut Vec<Vec<usize>>) {
        if k == n {
            out.push(cur.clone());
            return;
        }
        let limit = if k == 0 { 0 } else { max + 1 };
        for l in 0..=limit {
            cur.push(l);
            rec(k + 1, n, cur, max.max(l), out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, &mut Vec::new(), 0, &mut out);
    out
}

/// Bell number, for the lattice-size guard.
pub fn bell(n: usize) -> u128 {
    let mut row: Vec<u128> = vec![1];
    for _ in 0..n {
        let mut next = vec![*row.last().unwrap()];
        for &x in &row {
            let last = *next.last().unwrap();
            next.push(last + x);
        }
        row = next;
    }
    row[0]
}

/// The lattice of multi-sorted partitions of a multi-sorted base set.
#[derive(Clone, Debug)]
pub struct PartitionLattice {
    pub sizes: Vec<usize>,
    pub elements: Vec<MultiPartition>,
}

/// Default cap on the total base size for partition-lattice enumeration.
pub const DEFAULT_PARTITION_CAP: usize = 8;

impl PartitionLattice {
    /// Enumerates the lattice; fails when the total base size exceeds `cap`.
    pub fn new(sizes: &[usize], cap: usize) -> Result<Self> {
        let total: usize = sizes.iter().sum();
        guard("partition lattice base size", total as u128, cap as u128)?;
        let mut elements = vec![MultiPartition(Vec::new())];
        for &n in sizes {
            let parts = set_partitions(n);
            let mut next = Vec::with_capacity(elements.len() * parts.len());
            for e in &elements {
                for p in &parts {
                    let mut v = e.0.clone();
                    v.push(p.clone());
                    next.push(MultiPartition(v));
                }
            }
            elements = next;
        }
        Ok(PartitionLattice { sizes: sizes.to_vec(), elements })
    }

    pub fn top(&self) -> MultiPartition {
        MultiPartition::top(&self.sizes)
    }

    pub fn bottom(&self) -> MultiPartition {
        MultiPartition::discrete(&self.sizes)
    }
}

/// Weight table `θ ↦ w(θ)`.
pub type WeightTable = BTreeMap<MultiPartition, BigInt>;

/// Weights anchored at the top: `w(top) = 1` and `w(θ) = −Σ_{γ>θ} w(γ)`,
/// i.e. the Möbius function `μ(θ, top)`.
pub fn mobius_weights(lattice: &PartitionLattice) -> WeightTable {
    let mut order: Vec<&MultiPartition> = lattice.elements.iter().collect();
    order.sort_by_key(|t| t.total_classes());
    let mut w: Vec<(&MultiPartition, BigInt)> = Vec::with_capacity(order.len());
    for theta in order {
        let s: BigInt = w.iter().filter(|(g, _)| *g != theta && theta.finer_or_equal(g)).map(|(_, x)| x.clone()).sum();
        let val = if w.is_empty() { BigInt::one() } else { -s };
        w.push((theta, val));
    }
    w.into_iter().map(|(t, x)| (t.clone(), x)).collect()
}

/// Weights anchored at the bottom: `w(⊥) = 1` and `w(θ) = −Σ_{γ<θ} w(γ)`,
/// i.e. `μ(⊥, θ)`. These invert `M(θ) = Σ_{η≥θ} N(η)` at the bottom.
pub fn mobius_weights_from_bottom(lattice: &PartitionLattice) -> WeightTable {
    let mut order: Vec<&MultiPartition> = lattice.elements.iter().collect();
    order.sort_by_key(|t| std::cmp::Reverse(t.total_classes()));
    let mut w: Vec<(&MultiPartition, BigInt)> = Vec::with_capacity(order.len());
    for theta in order {
        let s: BigInt = w.iter().filter(|(g, _)| *g != theta && g.finer_or_equal(theta)).map(|(_, x)| x.clone()).sum();
        let val = if w.is_empty() { BigInt::one() } else { -s };
        w.push((theta, val));
    }
    w.into_iter().map(|(t, x)| (t.clone(), x)).collect()
}

/// Quotient `H/θ`: domains are the classes; a class tuple is in `R` iff some
/// representative tuple is. Also returns, per sort, the class of each element.
pub fn quotient_structure(h: &Structure, theta: &MultiPartition) -> Result<(Structure, Vec<Vec<usize>>)> {
    if theta.0.len() != h.sorts.len() || theta.0.iter().zip(&h.sorts).any(|(l, s)| l.len() != s.len()) {
        return Err(invalid("partition does not match the structure's domains"));
    }
    let sorts = h
        .sorts
        .iter()
        .enumerate()
        .map(|(s, sort)| {
            let names = theta
                .blocks(s)
                .iter()
                .map(|b| format!("{{{}}}", b.iter().map(|&e| sort.elements[e].as_str()).collect::<Vec<_>>().join(",")))
                .collect();
            Sort::new(sort.name.clone(), names)
        })
        .collect();
    let relations = h
        .relations
        .iter()
        .map(|r| {
            let tuples = r.tuples().iter().map(|t| t.iter().zip(&r.sorts).map(|(&e, &s)| theta.0[s][e]).collect()).collect();
            Relation::new(r.name.clone(), r.sorts.clone(), tuples)
        })
        .collect();
    Ok((Structure::new(sorts, relations)?, theta.0.clone()))
}

fn injective(g: &Structure, sol: &[usize]) -> bool {
    let mut off = 0;
    for s in &g.sorts {
        let part = &sol[off..off + s.len()];
        for i in 0..part.len() {
            if part[i + 1..].contains(&part[i]) {
                return false;
            }
        }
        off += s.len();
    }
    true
}

/// Number of injective homomorphisms `G → H` respecting the pins
/// (`(sort, element of G, element of H)`), by filtered enumeration.
pub fn count_injective(g: &Structure, h: &Structure, pins: &[(usize, usize, usize)]) -> Result<u128> {
    let inst = structure_as_instance(g, h)?;
    if g.sorts.iter().zip(&h.sorts).any(|(a, b)| a.len() > b.len()) {
        return Ok(0);
    }
    let vpins: Vec<(usize, usize)> = pins.iter().map(|&(s, e, a)| (element_variable(g, s, e), a)).collect();
    let mut n = 0u128;
    for_each_hom(&inst, h, &vpins, |sol| {
        if injective(g, sol) {
            n += 1;
        }
        ControlFlow::Continue(())
    })?;
    Ok(n)
}

/// Injective homomorphism count by Möbius inversion over the partition
/// lattice of `G`: `N(⊥) = Σ_θ μ(⊥,θ) · hom(G/θ, H)` (pins carried to classes).
pub fn count_injective_mobius(g: &Structure, h: &Structure, pins: &[(usize, usize, usize)], cap: usize) -> Result<u128> {
    if !g.similar(h) {
        return Err(Error::Dissimilar("source and target signatures differ".into()));
    }
    let lattice = PartitionLattice::new(&g.sizes(), cap)?;
    let weights = mobius_weights_from_bottom(&lattice);
    let mut total = BigInt::zero();
    for (theta, w) in &weights {
        let (q, classes) = quotient_structure(g, theta)?;
        let mut qpins: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        let mut clash = false;
        for &(s, e, a) in pins {
            let key = (s, classes[s][e]);
            if let Some(&prev) = qpins.get(&key) {
                clash |= prev != a;
            }
            qpins.insert(key, a);
        }
        if clash {
            continue;
        }
        let inst = structure_as_instance(&q, h)?;
        let vp: Vec<(usize, usize)> = qpins.iter().map(|(&(s, c), &a)| (element_variable(&q, s, c), a)).collect();
        let m = count_homs(&inst, h, &vp)?;
        total += w * BigInt::from(m);
    }
    if total.is_negative() {
        return Err(invalid("Möbius sum is negative; weights are inconsistent"));
    }
    total.to_u128().ok_or_else(|| invalid("count does not fit in 128 bits"))
}

/// Square matrix over `Z_p`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FpMatrix {
    pub p: u64,
    pub rows: Vec<Vec<u64>>,
}

impl FpMatrix {
    pub fn new(p: u64, rows: Vec<Vec<u64>>) -> Result<Self> {
        check_prime(p)?;
        let k = rows.len();
        for (i, r) in rows.iter().enumerate() {
            if r.len() != k {
                return Err(invalid(format!("matrix row {i} has length {}, expected {k}", r.len())));
            }
        }
        Ok(FpMatrix { p, rows: rows.into_iter().map(|r| r.into_iter().map(|x| x % p).collect()).collect() })
    }

    pub fn dim(&self) -> usize {
        self.rows.len()
    }
}

/// Directed multigraph on `0..n`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Digraph {
    pub n: usize,
    pub edges: Vec<(usize, usize)>,
}

/// `Z_M(G) mod p` by direct summation over all vertex assignments.
pub fn eval_partition_function(m: &FpMatrix, g: &Digraph) -> Result<u64> {
    check_prime(m.p)?;
    for &(u, v) in &g.edges {
        if u >= g.n || v >= g.n {
            return Err(invalid(format!("edge ({u},{v}) has a vertex outside 0..{}", g.n)));
        }
    }
    let k = m.dim();
    if g.n == 0 {
        return Ok(1 % m.p);
    }
    if k == 0 {
        return Ok(0);
    }
    guard("assignments k^n", (k as u128).saturating_pow(g.n as u32), 1 << 26)?;
    let mut phi = vec![0usize; g.n];
    let mut total: u64 = 0;
    loop {
        let mut prod: u64 = 1;
        for &(u, v) in &g.edges {
            prod = prod * m.rows[phi[u]][phi[v]] % m.p;
            if prod == 0 {
                break;
            }
        }
        total = (total + prod) % m.p;
        let mut i = g.n;
        loop {
            if i == 0 {
                return Ok(total);
            }
            i -= 1;
            phi[i] += 1;
            if phi[i] < k {
                break;
            }
            phi[i] = 0;
        }
    }
}
