//! Domain reduction by a p-automorphic polynomial.
//!
//! The pipeline has four stages:
//!
//! - binarization `b(H)`, `b(P)`: one sort per relation, one variable per
//!   constraint, and agreement relations `Q^{ij}_{st}`;
//! - the permutation instance `s(P)` over the symmetric groups of the
//!   relations, and a solver for it;
//! - extraction of consistent permutation collections;
//! - the split structure `H^f` with the instance transformation that
//!   preserves the number of solutions modulo p.
//!
//! Permutations of a relation act on tuple indices: `φ[k]` is the index of
//! the image of tuple `k`. The group Mal'tsev term is
//! `m(φ₁, φ₂, φ₃) = φ₃ ∘ φ₂⁻¹ ∘ φ₁`, i.e. `x ↦ φ₃(φ₂⁻¹(φ₁(x)))`.

use std::collections::BTreeMap;

use serde::Serialize;
use serde_json::{json, Value};

use crate::error::{check_prime, guard, invalid, Error, Result};
use crate::polyclone::{is_p_automorphic, is_polymorphism, perm_order, section, OperationTable};
use crate::solver::{full_mask, Csp};
use crate::structures::{Constraint, CspInstance, Relation, Sort, Structure, Variable};

/// Default bound on `|R_v|` for explicitly enumerated permutation domains.
pub const DEFAULT_SYM_CAP: usize = 8;

/// Default bound on search nodes for one pinned `s(P)` query.
pub const DEFAULT_NODE_LIMIT: u64 = 200_000;

/// A permutation of the tuple indices of one relation.
pub type Perm = Vec<usize>;

/// Source of an agreement relation `Q^{ij}_{st}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct QIndex {
    pub i: usize,
    pub j: usize,
    pub s: usize,
    pub t: usize,
}

/// `H` with every sort present as a unary relation, and its binarization.
#[derive(Clone, Debug)]
pub struct Binarized {
    pub h: Structure,
    pub bh: Structure,
    /// Relation of `h` each sort of `b(H)` comes from (the identity map).
    pub sort_source: Vec<usize>,
    /// Source of every relation of `b(H)`.
    pub q_source: Vec<QIndex>,
    q_index: BTreeMap<QIndex, usize>,
}

impl Binarized {
    pub fn q_relation(&self, q: QIndex) -> Option<usize> {
        self.q_index.get(&q).copied()
    }
}

/// An instance together with its binarization.
#[derive(Clone, Debug)]
pub struct BinarizedPair {
    pub structure: Binarized,
    /// The instance over `structure.h`, with domain constraints added.
    pub instance: CspInstance,
    pub bp: CspInstance,
    /// Constraint of `instance` each variable of `b(P)` comes from.
    pub var_source: Vec<usize>,
}

/// Adds a unary relation `dom_<sort>` for every sort that lacks a full unary
/// relation.
pub fn with_domain_relations(h: &Structure) -> Result<Structure> {
    let mut rels = h.relations.clone();
    for (s, sort) in h.sorts.iter().enumerate() {
        let all: Vec<usize> = (0..sort.len()).collect();
        if h.unary_relation_for(s, &all).is_none() {
            let mut name = format!("dom_{}", sort.name);
            while rels.iter().any(|r| r.name == name) {
                name = format!("_{name}");
            }
            rels.push(Relation::new(name, vec![s], all.iter().map(|&e| vec![e]).collect()));
        }
    }
    Structure::new(h.sorts.clone(), rels)
}

/// The binarization `b(H)` of `H` (after [`with_domain_relations`]).
pub fn binarize(h: &Structure) -> Result<Binarized> {
    let h = with_domain_relations(h)?;
    let sorts: Vec<Sort> = h
        .relations
        .iter()
        .map(|r| {
            let elements = r.tuples().iter().map(|t| format!("({})", h.tuple_names(&r.sorts, t).join(","))).collect();
            Sort::new(r.name.clone(), elements)
        })
        .collect();
    let mut relations = Vec::new();
    let mut q_source = Vec::new();
    let mut q_index = BTreeMap::new();
    for (i, ri) in h.relations.iter().enumerate() {
        for (j, rj) in h.relations.iter().enumerate().skip(i) {
            for s in 0..ri.arity() {
                for t in 0..rj.arity() {
                    if ri.sorts[s] != rj.sorts[t] {
                        continue;
                    }
                    let mut tuples = Vec::new();
                    for (x, a) in ri.tuples().iter().enumerate() {
                        for (y, b) in rj.tuples().iter().enumerate() {
                            if a[s] == b[t] {
                                tuples.push(vec![x, y]);
                            }
                        }
                    }
                    let q = QIndex { i, j, s, t };
                    q_index.insert(q, relations.len());
                    q_source.push(q);
                    relations.push(Relation::new(format!("Q{i}_{j}_{s}_{t}"), vec![i, j], tuples));
                }
            }
        }
    }
    let bh = Structure::new(sorts, relations)?;
    Ok(Binarized { sort_source: (0..h.relations.len()).collect(), h, bh, q_source, q_index })
}

/// Adds `⟨(v), H_i⟩` for every variable not already carrying a full unary
/// constraint.
fn with_domain_constraints(p: &CspInstance, h: &Structure) -> Result<CspInstance> {
    let mut out = p.clone();
    for (v, var) in p.variables.iter().enumerate() {
        let all: Vec<usize> = (0..h.sorts[var.sort].len()).collect();
        let dom = h.unary_relation_for(var.sort, &all).ok_or_else(|| invalid("structure lacks a domain relation"))?;
        if !p.constraints.iter().any(|c| c.relation == dom && c.scope == [v]) {
            out.constraints.push(Constraint { relation: dom, scope: vec![v] });
        }
    }
    Ok(out)
}

/// The binarized instance `b(P)`: one variable per constraint and a
/// constraint `Q^{ij}_{st}` for every pair of constraint positions holding
/// the same variable.
pub fn binarize_instance(p: &CspInstance, h: &Structure) -> Result<BinarizedPair> {
    p.validate(h)?;
    let structure = binarize(h)?;
    // Constraint relation indices carry over: `with_domain_relations` only
    // appends.
    let instance = with_domain_constraints(p, &structure.h)?;
    let variables: Vec<Variable> =
        instance.constraints.iter().enumerate().map(|(k, c)| Variable { name: format!("v{k}"), sort: c.relation }).collect();
    let mut constraints = Vec::new();
    for (k1, c1) in instance.constraints.iter().enumerate() {
        for (k2, c2) in instance.constraints.iter().enumerate().skip(k1) {
            for (s, &x) in c1.scope.iter().enumerate() {
                for (t, &y) in c2.scope.iter().enumerate() {
                    if x != y || (k1 == k2 && s >= t) {
                        continue;
                    }
                    let (a, b, q) = if c1.relation <= c2.relation {
                        (k1, k2, QIndex { i: c1.relation, j: c2.relation, s, t })
                    } else {
                        (k2, k1, QIndex { i: c2.relation, j: c1.relation, s: t, t: s })
                    };
                    let r = structure.q_relation(q).expect("sorts match on a shared variable");
                    constraints.push(Constraint { relation: r, scope: vec![a, b] });
                }
            }
        }
    }
    let bp = CspInstance::new(variables, constraints);
    Ok(BinarizedPair { var_source: (0..instance.constraints.len()).collect(), structure, instance, bp })
}

/// Maps a solution of `P` to the solution `ψ(v_C) = φ(s_C)` of `b(P)`.
pub fn transfer_solution(pair: &BinarizedPair, phi: &[usize]) -> Result<Vec<usize>> {
    pair.instance
        .constraints
        .iter()
        .map(|c| {
            let r = &pair.structure.h.relations[c.relation];
            let t: Vec<usize> = c.scope.iter().map(|&v| phi[v]).collect();
            r.tuples().binary_search(&t).map_err(|_| Error::Precondition(format!("assignment violates a `{}` constraint", r.name)))
        })
        .collect()
}

/// Reads a solution of `b(P)` back as an assignment of `P`.
pub fn solution_from_binarized(pair: &BinarizedPair, psi: &[usize]) -> Vec<usize> {
    let mut phi = vec![0; pair.instance.variables.len()];
    for (c, &k) in pair.instance.constraints.iter().zip(psi) {
        let t = &pair.structure.h.relations[c.relation].tuples()[k];
        for (&v, &x) in c.scope.iter().zip(t) {
            phi[v] = x;
        }
    }
    phi
}

/// One constraint `⟨(v_u, v_w), S^{ij}_{st}⟩` of `s(P)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PermConstraint {
    pub u: usize,
    pub w: usize,
    pub s: usize,
    pub t: usize,
}

/// The instance `s(P)`: variable `v` ranges over the permutations of the
/// tuple list `relations[v]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PermDomainInstance {
    pub relations: Vec<Vec<Vec<usize>>>,
    pub constraints: Vec<PermConstraint>,
}

fn factorial(n: usize) -> u128 {
    (1..=n as u128).product()
}

/// All permutations of `0..n` in lexicographic order.
pub fn all_perms(n: usize) -> Vec<Perm> {
    let mut out = Vec::new();
    let mut cur: Perm = (0..n).collect();
    loop {
        out.push(cur.clone());
        // Next lexicographic permutation.
        let Some(i) = (1..n).rev().find(|&i| cur[i - 1] < cur[i]) else { break };
        let j = (i..n).rev().find(|&j| cur[j] > cur[i - 1]).expect("successor exists");
        cur.swap(i - 1, j);
        cur[i..].reverse();
    }
    out
}

pub fn perm_inverse(p: &[usize]) -> Perm {
    let mut inv = vec![0; p.len()];
    for (x, &y) in p.iter().enumerate() {
        inv[y] = x;
    }
    inv
}

/// `x ↦ g(f(x))`.
pub fn perm_then(f: &[usize], g: &[usize]) -> Perm {
    f.iter().map(|&y| g[y]).collect()
}

/// The group Mal'tsev term `x ↦ φ₃(φ₂⁻¹(φ₁(x)))`.
pub fn group_maltsev(p1: &[usize], p2: &[usize], p3: &[usize]) -> Perm {
    perm_then(&perm_then(p1, &perm_inverse(p2)), p3)
}

impl PermDomainInstance {
    /// `s(P)` for constraints given as scopes with explicit tuple lists.
    pub fn from_constraints(cons: &[(Vec<usize>, Vec<Vec<usize>>)]) -> Self {
        let mut constraints = Vec::new();
        for (u, (su, _)) in cons.iter().enumerate() {
            for (w, (sw, _)) in cons.iter().enumerate().skip(u) {
                for (s, &x) in su.iter().enumerate() {
                    for (t, &y) in sw.iter().enumerate() {
                        if x == y && !(u == w && s >= t) {
                            constraints.push(PermConstraint { u, w, s, t });
                        }
                    }
                }
            }
        }
        PermDomainInstance { relations: cons.iter().map(|(_, r)| r.clone()).collect(), constraints }
    }

    /// The explicit domain `Sym(R_v)`, refused above `cap`.
    pub fn domain(&self, v: usize, cap: usize) -> Result<Vec<Perm>> {
        let n = self.relations[v].len();
        if n > cap {
            guard("relation size for an explicit permutation domain", n as u128, cap as u128)?;
        }
        Ok(all_perms(n))
    }

    /// Membership of `(φ_u, φ_w)` in the constraint's `S^{ij}_{st}`.
    pub fn allows(&self, c: &PermConstraint, pu: &[usize], pw: &[usize]) -> bool {
        let (ru, rw) = (&self.relations[c.u], &self.relations[c.w]);
        for (x, a) in ru.iter().enumerate() {
            for (y, b) in rw.iter().enumerate() {
                if a[c.s] == b[c.t] && ru[pu[x]][c.s] != rw[pw[y]][c.t] {
                    return false;
                }
            }
        }
        true
    }

    pub fn is_solution(&self, phis: &[Perm]) -> bool {
        phis.len() == self.relations.len()
            && phis.iter().zip(&self.relations).all(|(p, r)| p.len() == r.len() && perm_order(p).is_some())
            && self.constraints.iter().all(|c| self.allows(c, &phis[c.u], &phis[c.w]))
    }

    /// Product of the domain sizes (for brute-force guards).
    pub fn search_space(&self) -> u128 {
        self.relations.iter().map(|r| factorial(r.len())).fold(1u128, |a, b| a.saturating_mul(b))
    }
}

/// `s(P)` of an instance over `H`; every `|R_v|` must be at most `cap`.
pub fn build_sp(p: &CspInstance, h: &Structure, cap: usize) -> Result<PermDomainInstance> {
    let pair = binarize_instance(p, h)?;
    let cons = local_constraints(&pair.instance, &pair.structure.h);
    for (scope, r) in &cons {
        if r.len() > cap {
            return Err(Error::Guard {
                what: format!("relation size {} on scope {:?} for Sym domains", r.len(), scope),
                actual: r.len() as u128,
                limit: cap as u128,
            });
        }
    }
    Ok(PermDomainInstance::from_constraints(&cons))
}

fn local_constraints(p: &CspInstance, h: &Structure) -> Vec<(Vec<usize>, Vec<Vec<usize>>)> {
    p.constraints.iter().map(|c| (c.scope.clone(), h.relations[c.relation].tuples().to_vec())).collect()
}

/// Decides `s(P)` with an optional pinned variable and returns a solution.
///
/// Every `S^{ij}_{st}` is equivalent to a shared partial map `σ` on values:
/// tuples of `R_u` with value `x` at `s` must go to tuples with value
/// `σ(x)` at `s`, and likewise for `R_w` at `t`. The search assigns tuple
/// images one at a time and maintains these maps. Returns an error when
/// `node_limit` search nodes are exceeded.
pub fn group_maltsev_solve_limited(sp: &PermDomainInstance, pin: Option<(usize, &[usize])>, node_limit: u64) -> Result<Option<Vec<Perm>>> {
    if let Some((v, phi)) = pin {
        if v >= sp.relations.len() || phi.len() != sp.relations[v].len() || perm_order(phi).is_none() {
            return Err(invalid("pin is not a permutation of the variable's relation"));
        }
    }
    let mut solver = ImageSearch::new(sp, node_limit);
    if let Some((v, phi)) = pin {
        for (k, &img) in phi.iter().enumerate() {
            if !solver.assign(v, k, img) {
                return Ok(None);
            }
        }
    }
    // Visit variables starting from the pinned one, then by connectivity.
    let mut order: Vec<usize> = Vec::new();
    let mut placed = vec![false; sp.relations.len()];
    let start = pin.map_or(0, |(v, _)| v);
    let mut queue = std::collections::VecDeque::new();
    for root in std::iter::once(start).chain(0..sp.relations.len()) {
        if root >= sp.relations.len() || placed[root] {
            continue;
        }
        placed[root] = true;
        queue.push_back(root);
        while let Some(u) = queue.pop_front() {
            order.push(u);
            for c in &sp.constraints {
                for (a, b) in [(c.u, c.w), (c.w, c.u)] {
                    if a == u && !placed[b] {
                        placed[b] = true;
                        queue.push_back(b);
                    }
                }
            }
        }
    }
    let slots: Vec<(usize, usize)> = order
        .iter()
        .flat_map(|&u| (0..sp.relations[u].len()).map(move |k| (u, k)))
        .filter(|&(u, k)| solver.img[u][k] == usize::MAX)
        .collect();
    match solver.search(&slots, 0) {
        Some(true) => Ok(Some(solver.img.clone())),
        Some(false) => Ok(None),
        None => Err(Error::Guard { what: "s(P) search nodes".into(), actual: solver.nodes as u128, limit: node_limit as u128 }),
    }
}

pub fn group_maltsev_solve(sp: &PermDomainInstance, pin: Option<(usize, &[usize])>) -> Result<Option<Vec<Perm>>> {
    group_maltsev_solve_limited(sp, pin, DEFAULT_NODE_LIMIT)
}

struct ImageSearch<'a> {
    sp: &'a PermDomainInstance,
    img: Vec<Perm>,
    used: Vec<Vec<bool>>,
    /// Per constraint: value map σ (by source value).
    sigma: Vec<BTreeMap<usize, usize>>,
    /// Per variable: `(constraint, position, is_u_side)`.
    touch: Vec<Vec<(usize, usize)>>,
    /// Values co-occurring on both sides of each constraint.
    shared: Vec<Vec<usize>>,
    trail: Vec<Undo>,
    nodes: u64,
    limit: u64,
}

enum Undo {
    Img(usize, usize),
    Sigma(usize, usize),
}

impl<'a> ImageSearch<'a> {
    fn new(sp: &'a PermDomainInstance, limit: u64) -> Self {
        let mut touch = vec![Vec::new(); sp.relations.len()];
        let mut shared = Vec::new();
        for (ci, c) in sp.constraints.iter().enumerate() {
            touch[c.u].push((ci, c.s));
            touch[c.w].push((ci, c.t));
            let mut xs: Vec<usize> =
                sp.relations[c.u].iter().map(|a| a[c.s]).filter(|x| sp.relations[c.w].iter().any(|b| b[c.t] == *x)).collect();
            xs.sort();
            xs.dedup();
            shared.push(xs);
        }
        ImageSearch {
            sp,
            img: sp.relations.iter().map(|r| vec![usize::MAX; r.len()]).collect(),
            used: sp.relations.iter().map(|r| vec![false; r.len()]).collect(),
            sigma: vec![BTreeMap::new(); sp.constraints.len()],
            touch,
            shared,
            trail: Vec::new(),
            nodes: 0,
            limit,
        }
    }

    /// Records `img[u][k] = y`; false on a conflict (state left for undo).
    fn assign(&mut self, u: usize, k: usize, y: usize) -> bool {
        if self.used[u][y] {
            return false;
        }
        self.img[u][k] = y;
        self.used[u][y] = true;
        self.trail.push(Undo::Img(u, k));
        let (src, dst) = (&self.sp.relations[u][k], &self.sp.relations[u][y]);
        for &(ci, pos) in &self.touch[u] {
            let x = src[pos];
            if self.shared[ci].binary_search(&x).is_err() {
                continue;
            }
            match self.sigma[ci].get(&x) {
                Some(&z) if z != dst[pos] => return false,
                Some(_) => {}
                None => {
                    self.sigma[ci].insert(x, dst[pos]);
                    self.trail.push(Undo::Sigma(ci, x));
                }
            }
        }
        true
    }

    fn undo_to(&mut self, mark: usize) {
        while self.trail.len() > mark {
            match self.trail.pop().expect("non-empty") {
                Undo::Img(u, k) => {
                    let y = self.img[u][k];
                    self.used[u][y] = false;
                    self.img[u][k] = usize::MAX;
                }
                Undo::Sigma(ci, x) => {
                    self.sigma[ci].remove(&x);
                }
            }
        }
    }

    /// `None` when the node limit was hit.
    fn search(&mut self, slots: &[(usize, usize)], at: usize) -> Option<bool> {
        if at == slots.len() {
            return Some(true);
        }
        self.nodes += 1;
        if self.nodes > self.limit {
            return None;
        }
        let (u, k) = slots[at];
        // Try the identity image first: it often completes quickly.
        let n = self.sp.relations[u].len();
        let candidates = std::iter::once(k).chain((0..n).filter(|&y| y != k));
        for y in candidates {
            if self.used[u][y] {
                continue;
            }
            let mark = self.trail.len();
            if self.assign(u, k, y) {
                match self.search(slots, at + 1) {
                    Some(true) => return Some(true),
                    None => return None,
                    Some(false) => {}
                }
            }
            self.undo_to(mark);
        }
        Some(false)
    }
}

/// Exhaustive search over the explicit domains (test oracle).
pub fn brute_force_sp(sp: &PermDomainInstance, pin: Option<(usize, &[usize])>, cap: usize) -> Result<Option<Vec<Perm>>> {
    guard("s(P) brute-force search space", sp.search_space(), 50_000_000)?;
    let domains: Vec<Vec<Perm>> = (0..sp.relations.len())
        .map(|v| match pin {
            Some((pv, phi)) if pv == v => Ok(vec![phi.to_vec()]),
            _ => sp.domain(v, cap),
        })
        .collect::<Result<_>>()?;
    let mut idx = vec![0usize; domains.len()];
    loop {
        let cand: Vec<Perm> = idx.iter().zip(&domains).map(|(&i, d)| d[i].clone()).collect();
        if sp.is_solution(&cand) {
            return Ok(Some(cand));
        }
        let mut k = 0;
        loop {
            if k == idx.len() {
                return Ok(None);
            }
            idx[k] += 1;
            if idx[k] < domains[k].len() {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}

/// A consistent collection of permutations, one per constraint of the
/// instance (domain constraints included, listed after the original ones).
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ConsistentCollection {
    pub perms: Vec<Perm>,
}

/// Checks the consistency condition: whenever two tuples agree on the
/// shared variables of their constraints, so do their images.
pub fn is_consistent(cons: &[(Vec<usize>, Vec<Vec<usize>>)], perms: &[Perm]) -> bool {
    for (c1, (s1, r1)) in cons.iter().enumerate() {
        for (c2, (s2, r2)) in cons.iter().enumerate() {
            let shared: Vec<(usize, usize)> = s1
                .iter()
                .enumerate()
                .flat_map(|(i, &x)| s2.iter().enumerate().filter(move |&(_, &y)| y == x).map(move |(j, _)| (i, j)))
                .collect();
            if shared.is_empty() {
                continue;
            }
            for (x, a) in r1.iter().enumerate() {
                for (y, b) in r2.iter().enumerate() {
                    if shared.iter().all(|&(i, j)| a[i] == b[j]) {
                        let (fa, fb) = (&r1[perms[c1][x]], &r2[perms[c2][y]]);
                        if !shared.iter().all(|&(i, j)| fa[i] == fb[j]) {
                            return false;
                        }
                    }
                }
            }
        }
    }
    true
}

/// A consistent collection with `φ_{C₀} = φ₀`, if one exists.
pub fn consistent_permutations(p: &CspInstance, h: &Structure, c0: usize, phi0: &[usize]) -> Result<Option<ConsistentCollection>> {
    let pair = binarize_instance(p, h)?;
    let cons = local_constraints(&pair.instance, &pair.structure.h);
    let sp = PermDomainInstance::from_constraints(&cons);
    let Some(perms) = group_maltsev_solve(&sp, Some((c0, phi0)))? else { return Ok(None) };
    if !is_consistent(&cons, &perms) {
        return Err(invalid("solver returned an inconsistent collection"));
    }
    Ok(Some(ConsistentCollection { perms }))
}

/// `x̄ ↦ f(ā, x̄)` on the tuple list of a relation, as a permutation.
pub fn polynomial_perm(f: &OperationTable, sorts: &[usize], tuples: &[Vec<usize>], a: &[usize]) -> Option<Perm> {
    let perm: Option<Perm> = tuples
        .iter()
        .map(|x| {
            let img: Vec<usize> = x.iter().enumerate().map(|(q, &xv)| f.apply(sorts[q], &[a[q], xv])).collect();
            tuples.binary_search(&img).ok()
        })
        .collect();
    perm.filter(|p| perm_order(p).is_some())
}

/// The witness `(sort, a)` of a p-automorphic polynomial and the union `B`
/// of the nontrivial orbits of `f(a, ·)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SplitWitness {
    pub sort: usize,
    pub a: usize,
    pub orbits: Vec<usize>,
}

fn split_witness(h: &Structure, f: &OperationTable, p: u64, witness: Option<(usize, usize)>) -> Result<SplitWitness> {
    check_prime(p)?;
    if f.sizes != h.sizes() || f.arity != 2 {
        return Err(Error::Dissimilar("f must be a binary operation on the sorts of H".into()));
    }
    if !is_polymorphism(f, h) {
        return Err(Error::Precondition("f is not a polymorphism".into()));
    }
    let first = is_p_automorphic(f, p as usize).ok_or_else(|| Error::Precondition(format!("f is not {p}-automorphic")))?;
    let (sort, a) = witness.unwrap_or(first);
    let sec = section(f, sort, a);
    if perm_order(&sec) != Some(p as usize) {
        return Err(Error::Precondition(format!("f(a, ·) does not have order {p} at the witness")));
    }
    let orbits = (0..sec.len()).filter(|&x| sec[x] != x).collect();
    Ok(SplitWitness { sort, a, orbits })
}

/// The split structure: sort `i` becomes `H'_i = H_i − {a}` (at index `i`)
/// and `H''_i = H_i − B` (appended). Every relation on sort `i` gets one
/// variant per assignment of primed sorts to its sort-`i` coordinates.
#[derive(Clone, Debug)]
pub struct SplitStructure {
    pub structure: Structure,
    pub witness: SplitWitness,
    /// `(source relation, per-coordinate choice: false = ′, true = ″)` → index.
    pub variants: BTreeMap<(usize, Vec<bool>), usize>,
    /// Element maps from `H_i` into `H'_i` and `H''_i`.
    pub prime: Vec<Option<usize>>,
    pub double_prime: Vec<Option<usize>>,
    pub double_prime_sort: usize,
}

fn split(h: &Structure, w: &SplitWitness, mixed: bool) -> Result<SplitStructure> {
    let i = w.sort;
    let n = h.sorts[i].len();
    let keep1: Vec<usize> = (0..n).filter(|&x| x != w.a).collect();
    let keep2: Vec<usize> = (0..n).filter(|x| !w.orbits.contains(x)).collect();
    let index = |keep: &[usize]| (0..n).map(|x| keep.iter().position(|&y| y == x)).collect::<Vec<_>>();
    let (prime, double_prime) = (index(&keep1), index(&keep2));
    let name = &h.sorts[i].name;
    let mut sorts = h.sorts.clone();
    sorts[i] = Sort::new(format!("{name}'"), keep1.iter().map(|&x| h.sorts[i].elements[x].clone()).collect());
    let dps = sorts.len();
    sorts.push(Sort::new(format!("{name}''"), keep2.iter().map(|&x| h.sorts[i].elements[x].clone()).collect()));
    let mut relations = Vec::new();
    let mut variants = BTreeMap::new();
    for (ri, r) in h.relations.iter().enumerate() {
        let pos: Vec<usize> = (0..r.arity()).filter(|&q| r.sorts[q] == i).collect();
        if pos.is_empty() {
            variants.insert((ri, Vec::new()), relations.len());
            relations.push(r.clone());
            continue;
        }
        let k = pos.len();
        for mask in 0..(1usize << k) {
            let choice: Vec<bool> = (0..k).map(|b| mask >> b & 1 == 1).collect();
            let uniform = choice.iter().all(|&c| c == choice[0]);
            if !mixed && !uniform {
                continue;
            }
            let suffix = if uniform {
                if choice[0] {
                    "''".to_string()
                } else {
                    "'".to_string()
                }
            } else {
                format!("<{}>", choice.iter().map(|&c| if c { "''" } else { "'" }).collect::<Vec<_>>().join("|"))
            };
            let mut sorts_r = r.sorts.clone();
            for (b, &q) in pos.iter().enumerate() {
                if choice[b] {
                    sorts_r[q] = dps;
                }
            }
            let tuples = r
                .tuples()
                .iter()
                .filter_map(|t| {
                    let mut u = t.clone();
                    for (b, &q) in pos.iter().enumerate() {
                        u[q] = if choice[b] { double_prime[t[q]]? } else { prime[t[q]]? };
                    }
                    Some(u)
                })
                .collect();
            variants.insert((ri, choice), relations.len());
            relations.push(Relation::new(format!("{}{suffix}", r.name), sorts_r, tuples));
        }
    }
    Ok(SplitStructure {
        structure: Structure::new(sorts, relations)?,
        witness: w.clone(),
        variants,
        prime,
        double_prime,
        double_prime_sort: dps,
    })
}

/// The structure `H^f`: `H_i` replaced by `H'_i` and `H''_i`, every relation
/// on sort `i` replaced by `R'` (all sort-`i` coordinates in `H'_i`) and
/// `R''` (all in `H''_i`). `witness` defaults to the first order-p section.
pub fn build_hf(h: &Structure, f: &OperationTable, p: u64, witness: Option<(usize, usize)>) -> Result<SplitStructure> {
    let w = split_witness(h, f, p, witness)?;
    split(h, &w, false)
}

/// How one variable of the split sort was reduced.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct VarDecision {
    pub variable: String,
    /// `"drop_orbits"` (domain `H''`) or `"drop_a"` (domain `H'`).
    pub action: &'static str,
    /// `"group"` when decided by `s(P)`, `"count"` when by direct counting.
    pub mode: &'static str,
    /// Orbit elements removed (their solutions cancel modulo p).
    pub removed: Vec<usize>,
    pub note: String,
}

/// An instance over the split structure with the same number of solutions
/// modulo p.
#[derive(Clone, Debug)]
pub struct Reduction {
    pub split: SplitStructure,
    pub instance: CspInstance,
    pub ledger: Vec<VarDecision>,
}

impl Reduction {
    pub fn to_json(&self, h: &Structure) -> Value {
        let w = &self.split.witness;
        json!({
            "witness": {"sort": h.sorts[w.sort].name, "a": h.sorts[w.sort].elements[w.a],
                        "orbits": w.orbits.iter().map(|&x| h.sorts[w.sort].elements[x].clone()).collect::<Vec<_>>()},
            "structure": self.split.structure.to_json(),
            "instance": self.instance.to_json(&self.split.structure),
            "ledger": self.ledger,
        })
    }
}

/// Options for [`reduce_instance`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReduceOptions {
    pub node_limit: u64,
    pub witness: Option<(usize, usize)>,
}

impl Default for ReduceOptions {
    fn default() -> Self {
        ReduceOptions { node_limit: DEFAULT_NODE_LIMIT, witness: None }
    }
}

fn count_local(nvars: usize, domains: &[u128], cons: &[(Vec<usize>, Vec<Vec<usize>>)], pins: &[(usize, u128)]) -> u128 {
    let mut d = domains.to_vec();
    for &(v, m) in pins {
        d[v] &= m;
    }
    let mut csp = Csp::new(d);
    for (scope, r) in cons {
        csp.add(scope.clone(), r);
    }
    debug_assert_eq!(csp.domains.len(), nvars);
    csp.count()
}

/// Rewrites `P` over the split structure. Variables of the split sort are
/// processed in order: pinning `v`'s domain constraint to `f(a, ·)` in
/// `s(P)` either succeeds, and then the solutions with `v` in a nontrivial
/// orbit cancel modulo p, or fails, and then no solution has `v = a`.
/// When the search exceeds its node limit, or the restricted domains are
/// not closed under `f` (so the failure direction is not justified), the
/// decision is made by direct counting instead.
pub fn reduce_instance(p_inst: &CspInstance, h: &Structure, f: &OperationTable, p: u64, opts: &ReduceOptions) -> Result<Reduction> {
    p_inst.validate(h)?;
    let w = split_witness(h, f, p, opts.witness)?;
    let sp_struct = split(h, &w, true)?;
    let i = w.sort;
    let n = h.sorts[i].len();
    let mask_of = |xs: &[usize]| xs.iter().fold(0u128, |m, &x| m | 1u128 << x);
    let d1: Vec<usize> = (0..n).filter(|&x| x != w.a).collect();
    let d2: Vec<usize> = (0..n).filter(|x| !w.orbits.contains(x)).collect();
    let closed = |d: &[usize]| d.iter().all(|&c| d.iter().all(|&x| d.contains(&f.apply(i, &[c, x]))));
    let failure_justified = closed(&d1) && closed(&d2);
    let sec = section(f, i, w.a);

    let nvars = p_inst.variables.len();
    let mut cons: Vec<(Vec<usize>, Vec<Vec<usize>>)> = local_constraints(p_inst, h);
    let mut dom_con = vec![0; nvars];
    for (v, var) in p_inst.variables.iter().enumerate() {
        dom_con[v] = cons.len();
        cons.push((vec![v], (0..h.sorts[var.sort].len()).map(|x| vec![x]).collect()));
    }
    let mut domains: Vec<u128> = p_inst.variables.iter().map(|v| full_mask(h.sorts[v.sort].len())).collect();
    let mut choice = vec![false; nvars];
    let mut ledger = Vec::new();
    for v in 0..nvars {
        if p_inst.variables[v].sort != i {
            continue;
        }
        let dc = dom_con[v];
        let phi0: Perm = cons[dc].1.iter().map(|t| cons[dc].1.binary_search(&vec![sec[t[0]]]).expect("full domain")).collect();
        let sp = PermDomainInstance::from_constraints(&cons);
        let name = p_inst.variables[v].name.clone();
        let decided = match group_maltsev_solve_limited(&sp, Some((dc, &phi0)), opts.node_limit) {
            Ok(Some(sol)) => {
                debug_assert!(sp.is_solution(&sol));
                Some(VarDecision {
                    variable: name.clone(),
                    action: "drop_orbits",
                    mode: "group",
                    removed: w.orbits.clone(),
                    note: String::new(),
                })
            }
            Ok(None) if failure_justified => {
                Some(VarDecision { variable: name.clone(), action: "drop_a", mode: "group", removed: vec![w.a], note: String::new() })
            }
            Ok(None) => None,
            Err(Error::Guard { .. }) => None,
            Err(e) => return Err(e),
        };
        let decision = match decided {
            Some(d) => d,
            None => {
                let pm = p as u128;
                let through_a = count_local(nvars, &domains, &cons, &[(v, 1u128 << w.a)]);
                let in_orbits = count_local(nvars, &domains, &cons, &[(v, mask_of(&w.orbits))]);
                if in_orbits.is_multiple_of(pm) {
                    VarDecision {
                        variable: name.clone(),
                        action: "drop_orbits",
                        mode: "count",
                        removed: w.orbits.clone(),
                        note: format!("{in_orbits} solutions in nontrivial orbits"),
                    }
                } else if through_a.is_multiple_of(pm) {
                    VarDecision {
                        variable: name.clone(),
                        action: "drop_a",
                        mode: "count",
                        removed: vec![w.a],
                        note: format!("{through_a} solutions through a"),
                    }
                } else {
                    return Err(Error::Precondition(format!("variable `{name}`: neither reduction preserves the count modulo {p}")));
                }
            }
        };
        let keep = if decision.action == "drop_orbits" { &d2 } else { &d1 };
        choice[v] = decision.action == "drop_orbits";
        domains[v] &= mask_of(keep);
        for (scope, r) in cons.iter_mut() {
            if scope.contains(&v) {
                r.retain(|t| scope.iter().zip(t).all(|(&u, &x)| u != v || keep.contains(&x)));
            }
        }
        ledger.push(decision);
    }

    let variables = p_inst
        .variables
        .iter()
        .enumerate()
        .map(|(v, var)| Variable {
            name: var.name.clone(),
            sort: if var.sort == i && choice[v] { sp_struct.double_prime_sort } else { var.sort },
        })
        .collect();
    let constraints = p_inst
        .constraints
        .iter()
        .map(|c| {
            let r = &h.relations[c.relation];
            let pat: Vec<bool> = c.scope.iter().zip(&r.sorts).filter(|(_, &s)| s == i).map(|(&v, _)| choice[v]).collect();
            Constraint { relation: sp_struct.variants[&(c.relation, pat)], scope: c.scope.clone() }
        })
        .collect();
    let instance = CspInstance::new(variables, constraints);
    instance.validate(&sp_struct.structure)?;
    Ok(Reduction { split: sp_struct, instance, ledger })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::homcount::count_homs;
    use crate::polyclone::has_maltsev;
    use crate::structures::{spectrum, spectrum_less};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_instance(rng: &mut ChaCha8Rng, h: &Structure, nv: usize, nc: usize) -> CspInstance {
        let variables: Vec<Variable> = (0..nv).map(|k| Variable { name: format!("x{k}"), sort: 0 }).collect();
        let constraints = (0..nc)
            .map(|_| {
                let r = rng.gen_range(0..h.relations.len());
                let scope = (0..h.relations[r].arity()).map(|_| rng.gen_range(0..nv)).collect();
                Constraint { relation: r, scope }
            })
            .collect();
        CspInstance::new(variables, constraints)
    }

    /// `f(2, ·) = (0 1)`, every other section the identity.
    fn swap_poly() -> OperationTable {
        OperationTable::from_fn(&[3], 2, |_, a| if a[0] == 2 && a[1] < 2 { 1 - a[1] } else { a[1] })
    }

    fn closed_under(f: &OperationTable, mut tuples: Vec<Vec<usize>>) -> Vec<Vec<usize>> {
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

    #[test]
    fn binarization_shapes() {
        let b = binarize(&fixtures::neq2()).unwrap();
        // NEQ (2 tuples) plus the added domain relation.
        assert_eq!(b.bh.sizes(), vec![2, 2]);
        for (k, q) in b.q_source.iter().enumerate() {
            let (ri, rj) = (&b.h.relations[q.i], &b.h.relations[q.j]);
            for (x, a) in ri.tuples().iter().enumerate() {
                for (y, c) in rj.tuples().iter().enumerate() {
                    assert_eq!(b.bh.relations[k].contains(&[x, y]), a[q.s] == c[q.t]);
                }
            }
        }
    }

    #[test]
    fn binarization_is_parsimonious() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for h in [fixtures::le2(), fixtures::neq2(), fixtures::le2c()] {
            for _ in 0..10 {
                let nv = rng.gen_range(1..5);
                let nc = rng.gen_range(0..5);
                let p = random_instance(&mut rng, &h, nv, nc);
                let pair = binarize_instance(&p, &h).unwrap();
                let n1 = count_homs(&p, &h, &[]).unwrap();
                let n2 = count_homs(&pair.bp, &pair.structure.bh, &[]).unwrap();
                assert_eq!(n1, n2);
                for phi in crate::homcount::enumerate_homs(&p, &h, &[]).unwrap() {
                    let psi = transfer_solution(&pair, &phi).unwrap();
                    assert_eq!(solution_from_binarized(&pair, &psi), phi);
                }
            }
        }
    }

    #[test]
    fn binarization_keeps_maltsev() {
        for h in [fixtures::neq2(), fixtures::le2()] {
            let b = binarize(&h).unwrap();
            assert_eq!(has_maltsev(&h).unwrap().is_some(), has_maltsev(&b.bh).unwrap().is_some());
        }
    }

    fn small_sp(rng: &mut ChaCha8Rng) -> PermDomainInstance {
        let h =
            Structure::single_sorted(3, vec![("R", vec![vec![0, 1], vec![1, 2], vec![2, 2], vec![0, 0]]), ("U", vec![vec![0], vec![2]])])
                .unwrap();
        let nv = rng.gen_range(1..4);
        let nc = rng.gen_range(1..4);
        let p = random_instance(rng, &h, nv, nc);
        let cons = local_constraints(&p, &h);
        PermDomainInstance::from_constraints(&cons)
    }

    #[test]
    fn s_constraints_are_subgroups_closed_under_the_group_term() {
        let r = vec![vec![0, 1], vec![1, 1], vec![1, 0]];
        let sp = PermDomainInstance::from_constraints(&[(vec![0, 1], r.clone()), (vec![1, 2], r.clone())]);
        for c in &sp.constraints {
            let du = sp.domain(c.u, 8).unwrap();
            let dw = sp.domain(c.w, 8).unwrap();
            let members: Vec<(Perm, Perm)> =
                du.iter().flat_map(|a| dw.iter().map(move |b| (a.clone(), b.clone()))).filter(|(a, b)| sp.allows(c, a, b)).collect();
            let id: Perm = (0..3).collect();
            assert!(members.contains(&(id.clone(), id)));
            for (a1, b1) in &members {
                assert!(sp.allows(c, &perm_inverse(a1), &perm_inverse(b1)));
                for (a2, b2) in &members {
                    assert!(sp.allows(c, &perm_then(a1, a2), &perm_then(b1, b2)));
                    for (a3, b3) in &members {
                        assert!(sp.allows(c, &group_maltsev(a1, a2, a3), &group_maltsev(b1, b2, b3)));
                    }
                }
            }
        }
    }

    #[test]
    fn solver_agrees_with_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let sp = small_sp(&mut rng);
            if sp.search_space() > 2_000_000 {
                continue;
            }
            let v = rng.gen_range(0..sp.relations.len());
            let doms = sp.domain(v, 8).unwrap();
            let phi = doms[rng.gen_range(0..doms.len())].clone();
            let fast = group_maltsev_solve(&sp, Some((v, &phi))).unwrap();
            let slow = brute_force_sp(&sp, Some((v, &phi)), 8).unwrap();
            assert_eq!(fast.is_some(), slow.is_some());
            if let Some(sol) = fast {
                assert!(sp.is_solution(&sol));
                assert_eq!(sol[v], phi);
            }
        }
    }

    #[test]
    fn unconstrained_pins_extend_by_identities() {
        let sp = PermDomainInstance::from_constraints(&[(vec![0], vec![vec![0], vec![1]]), (vec![1], vec![vec![0], vec![1]])]);
        let sol = group_maltsev_solve(&sp, Some((0, &[1, 0]))).unwrap().unwrap();
        assert_eq!(sol, vec![vec![1, 0], vec![0, 1]]);
        // Two unary constraints on one variable force equal permutations.
        let sp = PermDomainInstance::from_constraints(&[(vec![0], vec![vec![0], vec![1]]), (vec![0], vec![vec![0], vec![1]])]);
        let sol = group_maltsev_solve(&sp, Some((0, &[1, 0]))).unwrap().unwrap();
        assert_eq!(sol[1], vec![1, 0]);
    }

    #[test]
    fn polynomial_sections_solve_s_of_p() {
        let f = swap_poly();
        let h = Structure::single_sorted(3, vec![("R", closed_under(&f, vec![vec![0, 2], vec![2, 1]]))]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let p = random_instance(&mut rng, &h, 3, 3);
            let pair = binarize_instance(&p, &h).unwrap();
            let cons = local_constraints(&pair.instance, &pair.structure.h);
            let sp = PermDomainInstance::from_constraints(&cons);
            for psi in crate::homcount::enumerate_homs(&p, &h, &[]).unwrap() {
                let perms: Vec<Perm> = pair
                    .instance
                    .constraints
                    .iter()
                    .map(|c| {
                        let r = &pair.structure.h.relations[c.relation];
                        let a: Vec<usize> = c.scope.iter().map(|&v| psi[v]).collect();
                        polynomial_perm(&f, &r.sorts, r.tuples(), &a).unwrap()
                    })
                    .collect();
                assert!(sp.is_solution(&perms));
                assert!(is_consistent(&cons, &perms));
            }
        }
    }

    #[test]
    fn single_constraint_accepts_any_permutation() {
        let h = fixtures::le2();
        let p = CspInstance::new(
            vec![Variable { name: "x".into(), sort: 0 }, Variable { name: "y".into(), sort: 0 }],
            vec![Constraint { relation: 0, scope: vec![0, 1] }],
        );
        for phi in all_perms(3) {
            let c = consistent_permutations(&p, &h, 0, &phi).unwrap();
            // Domain constraints tie the coordinates, so only some survive;
            // whatever is returned must be consistent.
            if let Some(c) = c {
                assert_eq!(c.perms[0], phi);
            }
        }
        let lone = CspInstance::new(vec![Variable { name: "x".into(), sort: 0 }, Variable { name: "y".into(), sort: 0 }], vec![]);
        let pair = binarize_instance(&lone, &h).unwrap();
        assert_eq!(pair.instance.constraints.len(), 2);
    }

    #[test]
    fn split_structure_example() {
        let f = swap_poly();
        let h = Structure::single_sorted(3, vec![("R", closed_under(&f, vec![vec![0, 2], vec![2, 1], vec![1, 1]]))]).unwrap();
        let s = build_hf(&h, &f, 2, None).unwrap();
        assert_eq!(s.witness, SplitWitness { sort: 0, a: 2, orbits: vec![0, 1] });
        assert_eq!(s.structure.sorts[0].elements, vec!["0", "1"]);
        assert_eq!(s.structure.sorts[1].elements, vec!["2"]);
        assert!(spectrum_less(&spectrum(&s.structure), &spectrum(&h)));
        assert!(s.structure.relation("R'").is_some() && s.structure.relation("R''").is_some());
    }

    #[test]
    fn reduction_preserves_counts_mod_two() {
        let f = swap_poly();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut done = 0;
        while done < 12 {
            let seeds: Vec<Vec<usize>> = (0..rng.gen_range(1..4)).map(|_| vec![rng.gen_range(0..3), rng.gen_range(0..3)]).collect();
            let unary: Vec<Vec<usize>> = (0..rng.gen_range(1..3)).map(|_| vec![rng.gen_range(0..3)]).collect();
            let h = Structure::single_sorted(3, vec![("R", closed_under(&f, seeds)), ("U", closed_under(&f, unary))]).unwrap();
            let (nv, nc) = (rng.gen_range(1..6), rng.gen_range(1..6));
            let p = random_instance(&mut rng, &h, nv, nc);
            let red = reduce_instance(&p, &h, &f, 2, &ReduceOptions::default()).unwrap();
            let before = count_homs(&p, &h, &[]).unwrap() % 2;
            let after = count_homs(&red.instance, &red.split.structure, &[]).unwrap() % 2;
            assert_eq!(before, after, "instance {:?}", p);
            done += 1;
        }
    }

    #[test]
    fn failed_pins_exclude_a() {
        let f = swap_poly();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut checked = 0;
        for _ in 0..60 {
            let seeds: Vec<Vec<usize>> = (0..rng.gen_range(1..4)).map(|_| vec![rng.gen_range(0..3), rng.gen_range(0..3)]).collect();
            let h = Structure::single_sorted(3, vec![("R", closed_under(&f, seeds))]).unwrap();
            let p = random_instance(&mut rng, &h, 3, 3);
            let mut cons = local_constraints(&p, &h);
            for v in 0..3 {
                cons.push((vec![v], vec![vec![0], vec![1], vec![2]]));
            }
            let sp = PermDomainInstance::from_constraints(&cons);
            let phi0: Perm = vec![1, 0, 2];
            for v in 0..3 {
                if group_maltsev_solve(&sp, Some((cons.len() - 3 + v, &phi0))).unwrap().is_none() {
                    assert_eq!(count_homs(&p, &h, &[(v, 2)]).unwrap(), 0);
                    checked += 1;
                }
            }
        }
        assert!(checked > 0);
    }
}
