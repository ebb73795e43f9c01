//! p-indicator rectangularity obstructions.
//!
//! Starting from the indicator predicate `Υ₃` of an expansion of `H` by
//! p-mpp-definable relations (Mal'tsev killers and p-subalgebras), the
//! coordinates outside `I_H ∪ J_H` are eliminated one at a time and the
//! remaining coordinates are then reduced until a binary relation is left.
//! Throughout, the current relation contains the three tuples
//! `(ā,c̄), (b̄,c̄), (b̄,d̄)` and misses `(ā,d̄)` on the tracked coordinates.
//!
//! Every move is recorded as a p-mpp formula over the expansion plus the
//! previous relation, so a certificate can be replayed from scratch by
//! formula evaluation alone.

use std::collections::BTreeMap;
use std::ops::ControlFlow;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::autos::m_automorphisms;
use crate::error::{check_prime, invalid, Error, Result};
use crate::homcount::count_homs;
use crate::mpp::{
    conservativity_of, eval_mpp, maltsev_for_closure, p_subalgebras, relation_digest, structure_digest, Atom, ClosureBudget,
    Conservativity, DefinedRelation, MaltsevVerdict, MppFormula,
};
use crate::polyclone::{find_p_automorphic_polynomial, indicator_coordinates, indicator_instance, is_rectangular, OperationTable};
use crate::structures::{expand, Constraint, CspInstance, Relation, Structure, Variable};

/// Name under which the previous relation appears in step formulas.
pub const CURRENT: &str = "R_cur";

/// Cap on the size of the starting indicator relation.
pub const DEFAULT_BASE_LIMIT: usize = 2_000_000;

/// Role of a coordinate in the obstruction pattern. The pattern tuples are
/// `in₁ = (first, first)`, `in₂ = (second, first)`, `in₃ = (second,
/// second)` and the excluded `out = (first, second)`, reading (left,
/// right).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "side", rename_all = "snake_case")]
pub enum Role {
    Left { first: usize, second: usize },
    Right { first: usize, second: usize },
    Free,
}

impl Role {
    /// Value in pattern tuple `k` (0–2 members, 3 the excluded tuple).
    pub fn value(self, k: usize) -> Option<usize> {
        match self {
            Role::Left { first, second } => Some(if k == 0 || k == 3 { first } else { second }),
            Role::Right { first, second } => Some(if k <= 1 { first } else { second }),
            Role::Free => None,
        }
    }

    fn is_left(self) -> bool {
        matches!(self, Role::Left { .. })
    }

    fn is_right(self) -> bool {
        matches!(self, Role::Right { .. })
    }

    fn values(self) -> Option<(usize, usize)> {
        match self {
            Role::Left { first, second } | Role::Right { first, second } => Some((first, second)),
            Role::Free => None,
        }
    }
}

/// The move applied at a step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    /// A value common to all three extension sets is pinned, then
    /// quantified.
    CommonPin,
    /// Plain modular quantification.
    Quantify,
    /// Restriction to a p-subalgebra, then modular quantification.
    SubalgebraQuantify,
    /// A gadget-defined weight, then modular quantification.
    Gadget,
    /// A tracked coordinate pinned to a constant and quantified.
    Pin,
    /// All other coordinates of one side pinned; the pattern is re-read
    /// with possibly exchanged roles.
    Swap,
    /// A tracked coordinate restricted to the 2-element p-subalgebra
    /// spanned by its two pattern values.
    Restrict,
}

/// A pointed structure over the expansion: vertex 0 is the point.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Gadget {
    pub vertex_sorts: Vec<usize>,
    /// `(relation index in the expansion, scope)`.
    pub constraints: Vec<(usize, Vec<usize>)>,
}

impl Gadget {
    pub fn instance(&self) -> CspInstance {
        CspInstance::new(
            self.vertex_sorts.iter().enumerate().map(|(i, &s)| Variable { name: format!("g{i}"), sort: s }).collect(),
            self.constraints.iter().map(|(r, scope)| Constraint { relation: *r, scope: scope.clone() }).collect(),
        )
    }

    /// `hom((G, point ↦ v), H) mod p` for every `v` of the point's sort.
    pub fn weights(&self, h: &Structure, p: u64) -> Result<Vec<u64>> {
        let inst = self.instance();
        (0..h.sorts[self.vertex_sorts[0]].len()).map(|v| Ok((count_homs(&inst, h, &[(0, v)])? % p as u128) as u64)).collect()
    }
}

/// A gadget meeting the three pointed-count conditions
/// `Σ_{v ∈ B_k} hom((G, point ↦ v), H) ≢ 0 (mod p)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GadgetWitness {
    pub gadget: Gadget,
    pub weights: Vec<u64>,
    pub sums: Vec<u64>,
}

/// Limits for the gadget search.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GadgetBudget {
    pub max_vertices: usize,
    pub max_constraints: usize,
    pub max_candidates: usize,
}

impl Default for GadgetBudget {
    fn default() -> Self {
        GadgetBudget { max_vertices: 6, max_constraints: 10, max_candidates: 20_000 }
    }
}

/// All limits used by the obstruction pipelines.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObstructionBudget {
    pub closure: ClosureBudget,
    pub gadget: GadgetBudget,
}

/// Enumerates gadgets with the point of sort `sort` in canonical order:
/// by number of constraints, then lexicographically by strictly
/// increasing `(relation, scope)` lists whose new vertices appear in order.
/// Returns false when the candidate limit was hit.
pub fn for_each_gadget(h: &Structure, sort: usize, budget: &GadgetBudget, mut visit: impl FnMut(&Gadget) -> ControlFlow<()>) -> bool {
    let mut seen = 0usize;
    struct Search<'a, F> {
        h: &'a Structure,
        budget: &'a GadgetBudget,
        seen: &'a mut usize,
        visit: F,
    }
    impl<F: FnMut(&Gadget) -> ControlFlow<()>> Search<'_, F> {
        /// Returns Break when the visitor stopped or the limit was hit.
        fn rec(&mut self, g: &mut Gadget, left: usize) -> ControlFlow<()> {
            if left == 0 {
                *self.seen += 1;
                if *self.seen > self.budget.max_candidates {
                    return ControlFlow::Break(());
                }
                return (self.visit)(g);
            }
            let last = g.constraints.last().cloned();
            for (ri, r) in self.h.relations.iter().enumerate() {
                if last.as_ref().is_some_and(|(lr, _)| ri < *lr) {
                    continue;
                }
                let mut scope = Vec::with_capacity(r.arity());
                self.scopes(g, ri, &r.sorts, &mut scope, last.as_ref(), left)?;
            }
            ControlFlow::Continue(())
        }

        fn scopes(
            &mut self,
            g: &mut Gadget,
            ri: usize,
            sorts: &[usize],
            scope: &mut Vec<usize>,
            last: Option<&(usize, Vec<usize>)>,
            left: usize,
        ) -> ControlFlow<()> {
            let q = scope.len();
            if q == sorts.len() {
                if let Some((lr, ls)) = last {
                    if *lr == ri && scope.as_slice() <= ls.as_slice() {
                        return ControlFlow::Continue(());
                    }
                }
                g.constraints.push((ri, scope.clone()));
                let r = self.rec(g, left - 1);
                g.constraints.pop();
                return r;
            }
            let nv = g.vertex_sorts.len();
            for v in 0..=nv {
                if v == nv {
                    if nv >= self.budget.max_vertices {
                        continue;
                    }
                    g.vertex_sorts.push(sorts[q]);
                } else if g.vertex_sorts[v] != sorts[q] {
                    continue;
                }
                scope.push(v);
                let r = self.scopes(g, ri, sorts, scope, last, left);
                scope.pop();
                if v == nv {
                    g.vertex_sorts.pop();
                }
                r?;
            }
            ControlFlow::Continue(())
        }
    }
    let mut s = Search { h, budget, seen: &mut seen, visit: &mut visit };
    for k in 0..=budget.max_constraints {
        let mut g = Gadget { vertex_sorts: vec![sort], constraints: Vec::new() };
        if s.rec(&mut g, k).is_break() {
            return *s.seen <= budget.max_candidates;
        }
    }
    true
}

/// First gadget (canonical order) meeting the pointed-count conditions for
/// the target sets and accepted by `accept`.
pub fn find_gadget_with(
    h: &Structure,
    p: u64,
    sort: usize,
    targets: &[Vec<usize>],
    budget: &GadgetBudget,
    mut accept: impl FnMut(&GadgetWitness) -> bool,
) -> Result<Option<GadgetWitness>> {
    check_prime(p)?;
    let mut found = None;
    let mut error = None;
    for_each_gadget(h, sort, budget, |g| {
        let weights = match g.weights(h, p) {
            Ok(w) => w,
            Err(e) => {
                error = Some(e);
                return ControlFlow::Break(());
            }
        };
        let sums: Vec<u64> = targets.iter().map(|b| b.iter().map(|&v| weights[v]).sum::<u64>() % p).collect();
        if sums.iter().all(|&s| s != 0) {
            let w = GadgetWitness { gadget: g.clone(), weights, sums };
            if accept(&w) {
                found = Some(w);
                return ControlFlow::Break(());
            }
        }
        ControlFlow::Continue(())
    });
    match error {
        Some(e) => Err(e),
        None => Ok(found),
    }
}

pub fn find_gadget(h: &Structure, p: u64, sort: usize, targets: &[Vec<usize>], budget: &GadgetBudget) -> Result<Option<GadgetWitness>> {
    find_gadget_with(h, p, sort, targets, budget, |_| true)
}

/// Recounts a gadget witness.
pub fn verify_gadget(w: &GadgetWitness, h: &Structure, p: u64, targets: &[Vec<usize>]) -> Result<bool> {
    let weights = w.gadget.weights(h, p)?;
    let sums: Vec<u64> = targets.iter().map(|b| b.iter().map(|&v| weights[v]).sum::<u64>() % p).collect();
    Ok(weights == w.weights && sums == w.sums && sums.iter().all(|&s| s != 0))
}

/// One recorded move.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EliminationStep {
    pub rule: Rule,
    /// Label of the coordinate the move acted on.
    pub coordinate: String,
    /// Extension sets of the three member tuples at that coordinate.
    pub b_sets: Option<Vec<Vec<usize>>>,
    /// Definition over the expansion plus [`CURRENT`].
    pub formula: MppFormula,
    /// Base coordinates of the resulting relation.
    pub coords: Vec<usize>,
    pub roles: Vec<Role>,
    pub size: usize,
    pub digest: String,
}

/// The final pattern: roles of the remaining coordinates and the four
/// witness tuples.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinalPattern {
    pub coords: Vec<usize>,
    pub roles: Vec<Role>,
    pub members: Vec<Vec<usize>>,
    pub excluded: Vec<usize>,
    /// True when the roles of `ā, b̄` (or `c̄, d̄`) are exchanged relative
    /// to the indicator tuples on some tracked coordinate.
    pub swapped: bool,
}

/// For a binary final relation: its 0/1 matrix over the two sorts and the
/// 2×2 pattern read with rows `(first, second)` of the left coordinate and
/// columns `(second, first)` of the right coordinate.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Terminal {
    pub matrix: Vec<Vec<u8>>,
    pub pattern: [[u8; 2]; 2],
}

/// A replayable p-indicator rectangularity obstruction.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObstructionCertificate {
    pub p: u64,
    pub structure_digest: String,
    /// Relations added to `H`, each with a p-mpp definition over `H`.
    pub definitions: Vec<DefinedRelation>,
    /// Labels of the indicator coordinates of the expansion.
    pub base_coords: Vec<String>,
    pub base_size: usize,
    pub base_digest: String,
    pub steps: Vec<EliminationStep>,
    pub pattern: FinalPattern,
    pub terminal: Option<Terminal>,
    /// Moves that changed roles without changing the relation.
    pub trail: Vec<String>,
    pub case: String,
}

impl ObstructionCertificate {
    pub fn to_json(&self) -> Value {
        serde_json::to_value(self).expect("certificate serializes")
    }

    pub fn from_json(v: &Value) -> Result<Self> {
        Ok(serde_json::from_value(v.clone())?)
    }
}

/// Where a search stopped, with everything needed to inspect it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StuckReport {
    pub coordinate: String,
    pub b_sets: Option<Vec<Vec<usize>>>,
    pub rules_tried: Vec<String>,
    pub relation_size: usize,
    pub coords: Vec<String>,
    pub roles: Vec<Role>,
    pub steps_done: usize,
    pub note: String,
}

/// Result of an obstruction search.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ObstructionOutcome {
    Certificate(Box<ObstructionCertificate>),
    /// A p-automorphic polynomial was found instead; the structure should be
    /// reduced with it.
    AutomorphicPolynomial {
        f: OperationTable,
        sort: usize,
        a: usize,
        note: String,
    },
    Stuck(Box<StuckReport>),
}

impl ObstructionOutcome {
    pub fn certificate(&self) -> Option<&ObstructionCertificate> {
        match self {
            ObstructionOutcome::Certificate(c) => Some(c),
            _ => None,
        }
    }

    pub fn to_json(&self, h: &Structure) -> Value {
        match self {
            ObstructionOutcome::Certificate(c) => json!({"outcome": "certificate", "certificate": c.to_json()}),
            ObstructionOutcome::AutomorphicPolynomial { f, sort, a, note } => json!({
                "outcome": "automorphic_polynomial",
                "polynomial": f.to_json(h),
                "witness": {"sort": h.sorts[*sort].name, "element": h.sorts[*sort].elements[*a]},
                "note": note,
            }),
            ObstructionOutcome::Stuck(s) => json!({"outcome": "stuck", "report": s}),
        }
    }
}

/// The indicator problem of `h` as a formula with every variable free.
pub fn indicator_formula(h: &Structure) -> MppFormula {
    let inst = indicator_instance(h);
    MppFormula {
        free: (0..inst.variables.len()).collect(),
        vars: inst.variables,
        blocks: Vec::new(),
        atoms: inst
            .constraints
            .into_iter()
            .map(|c| Atom::Relation { relation: h.relations[c.relation].name.clone(), scope: c.scope })
            .collect(),
    }
}

#[derive(Clone, Debug)]
struct State {
    rel: Relation,
    coords: Vec<usize>,
    roles: Vec<Role>,
}

fn matches(t: &[usize], roles: &[Role], k: usize) -> bool {
    roles.iter().zip(t).all(|(r, &x)| r.value(k).is_none_or(|v| v == x))
}

fn pattern_holds(rel: &Relation, roles: &[Role]) -> bool {
    if !roles.iter().any(|r| r.is_left()) || !roles.iter().any(|r| r.is_right()) {
        return false;
    }
    (0..3).all(|k| rel.tuples().iter().any(|t| matches(t, roles, k))) && !rel.tuples().iter().any(|t| matches(t, roles, 3))
}

fn b_sets(st: &State, pos: usize) -> Vec<Vec<usize>> {
    (0..3)
        .map(|k| {
            let mut b: Vec<usize> = st.rel.tuples().iter().filter(|t| matches(t, &st.roles, k)).map(|t| t[pos]).collect();
            b.sort();
            b.dedup();
            b
        })
        .collect()
}

fn intersect(a: &[usize], b: &[usize]) -> Vec<usize> {
    a.iter().copied().filter(|x| b.contains(x)).collect()
}

/// A relation-changing move: `remove` is quantified jointly (together with
/// the gadget's other vertices); pins and restrictions apply first.
#[derive(Clone, Debug, Default)]
struct Op {
    remove: Vec<usize>,
    pins: Vec<(usize, usize)>,
    restrict: Vec<(usize, usize)>,
    gadget: Option<(usize, Gadget, Vec<u64>)>,
}

struct Ctx<'a> {
    p: u64,
    ex: Structure,
    labels: Vec<String>,
    /// `(sort, elements, relation index in the expansion)`.
    subalgebras: Vec<(usize, Vec<usize>, usize)>,
    budget: &'a ObstructionBudget,
    steps: Vec<EliminationStep>,
    trail: Vec<String>,
}

impl Ctx<'_> {
    fn apply(&self, st: &State, op: &Op) -> Relation {
        let kept: Vec<usize> = (0..st.coords.len()).filter(|i| !op.remove.contains(i)).collect();
        let mut counts: BTreeMap<Vec<usize>, u64> = BTreeMap::new();
        for t in st.rel.tuples() {
            if !op.pins.iter().all(|&(i, v)| t[i] == v) {
                continue;
            }
            if !op.restrict.iter().all(|&(i, r)| self.ex.relations[r].contains(&[t[i]])) {
                continue;
            }
            let w = op.gadget.as_ref().map_or(1, |(i, _, ws)| ws[t[*i]]);
            let c = counts.entry(kept.iter().map(|&i| t[i]).collect()).or_default();
            *c = (*c + w) % self.p;
        }
        let tuples = counts.into_iter().filter(|(_, c)| *c != 0).map(|(t, _)| t).collect();
        Relation::new("R", kept.iter().map(|&i| st.rel.sorts[i]).collect(), tuples)
    }

    fn formula(&self, st: &State, op: &Op) -> MppFormula {
        let n = st.coords.len();
        let mut vars: Vec<Variable> =
            st.coords.iter().zip(&st.rel.sorts).map(|(&c, &s)| Variable { name: self.labels[c].clone(), sort: s }).collect();
        let mut atoms = vec![Atom::Relation { relation: CURRENT.to_string(), scope: (0..n).collect() }];
        for &(i, v) in &op.pins {
            atoms.push(Atom::Constant { var: i, value: v });
        }
        for &(i, r) in &op.restrict {
            atoms.push(Atom::Relation { relation: self.ex.relations[r].name.clone(), scope: vec![i] });
        }
        let mut block = op.remove.clone();
        if let Some((i, g, _)) = &op.gadget {
            let mut map = vec![*i];
            for (k, &s) in g.vertex_sorts.iter().enumerate().skip(1) {
                map.push(vars.len());
                block.push(vars.len());
                vars.push(Variable { name: format!("g{k}"), sort: s });
            }
            for (r, scope) in &g.constraints {
                atoms.push(Atom::Relation { relation: self.ex.relations[*r].name.clone(), scope: scope.iter().map(|&v| map[v]).collect() });
            }
        }
        MppFormula {
            vars,
            free: (0..n).filter(|i| !op.remove.contains(i)).collect(),
            blocks: if block.is_empty() { Vec::new() } else { vec![block] },
            atoms,
        }
    }

    /// The state after `op`, if the pattern survives under `roles`
    /// (default: the kept roles).
    fn attempt(&self, st: &State, op: &Op, roles: Option<Vec<Role>>) -> Option<State> {
        let rel = self.apply(st, op);
        let kept: Vec<usize> = (0..st.coords.len()).filter(|i| !op.remove.contains(i)).collect();
        let roles = roles.unwrap_or_else(|| kept.iter().map(|&i| st.roles[i]).collect());
        if !pattern_holds(&rel, &roles) {
            return None;
        }
        Some(State { rel, coords: kept.iter().map(|&i| st.coords[i]).collect(), roles })
    }

    fn commit(&mut self, st: &mut State, op: &Op, next: State, rule: Rule, pos: usize, b: Option<Vec<Vec<usize>>>) {
        let formula = self.formula(st, op);
        self.steps.push(EliminationStep {
            rule,
            coordinate: self.labels[st.coords[pos]].clone(),
            b_sets: b,
            formula,
            coords: next.coords.clone(),
            roles: next.roles.clone(),
            size: next.rel.len(),
            digest: relation_digest(&next.rel),
        });
        *st = next;
    }

    fn subalgebras_of_sort(&self, sort: usize) -> Vec<usize> {
        self.subalgebras.iter().filter(|(s, _, _)| *s == sort).map(|&(_, _, r)| r).collect()
    }

    fn stuck(&self, st: &State, pos: usize, b: Option<Vec<Vec<usize>>>, tried: &[&str], note: impl Into<String>) -> StuckReport {
        StuckReport {
            coordinate: self.labels[st.coords[pos]].clone(),
            b_sets: b,
            rules_tried: tried.iter().map(|s| s.to_string()).collect(),
            relation_size: st.rel.len(),
            coords: st.coords.iter().map(|&c| self.labels[c].clone()).collect(),
            roles: st.roles.clone(),
            steps_done: self.steps.len(),
            note: note.into(),
        }
    }

    /// Removes a free coordinate, or (when allowed) promotes it into the
    /// tracked coordinates. `Err(report)` when no rule applies.
    fn eliminate_free(&mut self, st: &mut State, pos: usize, allow_promote: bool) -> Result<std::result::Result<(), StuckReport>> {
        let b = b_sets(st, pos);
        let sort = st.rel.sorts[pos];
        let common = intersect(&intersect(&b[0], &b[1]), &b[2]);
        if let Some(&c) = common.first() {
            let op = Op { remove: vec![pos], pins: vec![(pos, c)], ..Op::default() };
            if let Some(next) = self.attempt(st, &op, None) {
                self.commit(st, &op, next, Rule::CommonPin, pos, Some(b));
                return Ok(Ok(()));
            }
        }
        let op = Op { remove: vec![pos], ..Op::default() };
        if let Some(next) = self.attempt(st, &op, None) {
            self.commit(st, &op, next, Rule::Quantify, pos, Some(b));
            return Ok(Ok(()));
        }
        for r in self.subalgebras_of_sort(sort) {
            let op = Op { remove: vec![pos], restrict: vec![(pos, r)], ..Op::default() };
            if let Some(next) = self.attempt(st, &op, None) {
                self.commit(st, &op, next, Rule::SubalgebraQuantify, pos, Some(b));
                return Ok(Ok(()));
            }
        }
        if allow_promote {
            let i23 = intersect(&b[1], &b[2]);
            let i12 = intersect(&b[0], &b[1]);
            let mut options: Vec<Role> = Vec::new();
            for &x in &b[0] {
                for &y in &i23 {
                    options.push(Role::Left { first: x, second: y });
                }
            }
            for &x in &i12 {
                for &y in &b[2] {
                    options.push(Role::Right { first: x, second: y });
                }
            }
            options.sort_by_key(|r| r.values().map(|(x, y)| x == y));
            for role in options {
                let mut roles = st.roles.clone();
                roles[pos] = role;
                if pattern_holds(&st.rel, &roles) {
                    self.trail.push(format!("promote {} as {:?}", self.labels[st.coords[pos]], role));
                    st.roles = roles;
                    return Ok(Ok(()));
                }
            }
        }
        let ctx: &Ctx = self;
        let found = find_gadget_with(&ctx.ex, ctx.p, sort, &b, &ctx.budget.gadget, |w| {
            let op = Op { remove: vec![pos], gadget: Some((pos, w.gadget.clone(), w.weights.clone())), ..Op::default() };
            ctx.attempt(st, &op, None).is_some()
        })?;
        if let Some(w) = found {
            let op = Op { remove: vec![pos], gadget: Some((pos, w.gadget.clone(), w.weights.clone())), ..Op::default() };
            let next = self.attempt(st, &op, None).expect("accepted above");
            self.commit(st, &op, next, Rule::Gadget, pos, Some(b));
            return Ok(Ok(()));
        }
        let tried = ["common_pin", "quantify", "subalgebra_quantify", "promote", "gadget"];
        Ok(Err(self.stuck(st, pos, Some(b), &tried, "no elimination rule applies within budget")))
    }

    /// Shrinks the tracked coordinates until one remains on each side.
    fn reduce_tracked(&mut self, st: &mut State) -> Result<std::result::Result<(), StuckReport>> {
        loop {
            let left = st.roles.iter().filter(|r| r.is_left()).count();
            let right = st.roles.iter().filter(|r| r.is_right()).count();
            if left <= 1 && right <= 1 {
                return Ok(Ok(()));
            }
            let mut progressed = false;
            for pos in 0..st.coords.len() {
                let role = st.roles[pos];
                let side = if role.is_left() { left } else { right };
                if side < 2 {
                    continue;
                }
                if self.reduce_one(st, pos)? {
                    progressed = true;
                    break;
                }
            }
            if !progressed {
                let pos = st.roles.iter().position(|r| r.is_left()).unwrap_or(0);
                let tried = ["release", "quantify", "pin", "subalgebra_quantify", "swap"];
                return Ok(Err(self.stuck(st, pos, None, &tried, "no arity reduction applies")));
            }
        }
    }

    fn reduce_one(&mut self, st: &mut State, pos: usize) -> Result<bool> {
        let (first, second) = st.roles[pos].values().expect("tracked coordinate");
        let sort = st.rel.sorts[pos];
        if first == second {
            let saved = (st.roles.clone(), self.steps.len(), self.trail.len());
            st.roles[pos] = Role::Free;
            if pattern_holds(&st.rel, &st.roles) {
                self.trail.push(format!("release {}", self.labels[st.coords[pos]]));
                if self.eliminate_free(st, pos, false)?.is_ok() {
                    return Ok(true);
                }
            }
            st.roles = saved.0;
            self.trail.truncate(saved.2);
        }
        let op = Op { remove: vec![pos], ..Op::default() };
        if let Some(next) = self.attempt(st, &op, None) {
            self.commit(st, &op, next, Rule::Quantify, pos, None);
            return Ok(true);
        }
        for c in 0..self.ex.sorts[sort].len() {
            let op = Op { remove: vec![pos], pins: vec![(pos, c)], ..Op::default() };
            if let Some(next) = self.attempt(st, &op, None) {
                self.commit(st, &op, next, Rule::Pin, pos, None);
                return Ok(true);
            }
        }
        for r in self.subalgebras_of_sort(sort) {
            let op = Op { remove: vec![pos], restrict: vec![(pos, r)], ..Op::default() };
            if let Some(next) = self.attempt(st, &op, None) {
                self.commit(st, &op, next, Rule::SubalgebraQuantify, pos, None);
                return Ok(true);
            }
        }
        // Swap: pin the other coordinates of this side to one of their
        // pattern values and re-read the pattern on what is left.
        let this_left = st.roles[pos].is_left();
        let others: Vec<usize> =
            (0..st.coords.len()).filter(|&i| i != pos && st.roles[i].is_left() == this_left && st.roles[i] != Role::Free).collect();
        for pick_second in [false, true] {
            let pins: Vec<(usize, usize)> = others
                .iter()
                .map(|&i| {
                    let (f, s) = st.roles[i].values().expect("tracked");
                    (i, if pick_second { s } else { f })
                })
                .collect();
            let op = Op { remove: others.clone(), pins, ..Op::default() };
            let rel = self.apply(st, &op);
            let kept: Vec<usize> = (0..st.coords.len()).filter(|i| !others.contains(i)).collect();
            let n = self.ex.sorts[sort].len();
            for flip in [false, true] {
                for x in 0..n {
                    for y in 0..n {
                        if x == y {
                            continue;
                        }
                        let roles: Vec<Role> = kept
                            .iter()
                            .map(|&i| {
                                if i == pos {
                                    if this_left {
                                        Role::Left { first: x, second: y }
                                    } else {
                                        Role::Right { first: x, second: y }
                                    }
                                } else {
                                    match (st.roles[i], flip) {
                                        (Role::Left { first, second }, true) => Role::Left { first: second, second: first },
                                        (Role::Right { first, second }, true) => Role::Right { first: second, second: first },
                                        (r, _) => r,
                                    }
                                }
                            })
                            .collect();
                        if pattern_holds(&rel, &roles) {
                            let next = State { rel: rel.clone(), coords: kept.iter().map(|&i| st.coords[i]).collect(), roles };
                            self.commit(st, &op, next, Rule::Swap, pos, None);
                            return Ok(true);
                        }
                    }
                }
            }
        }
        Ok(false)
    }
}

/// Builds the expansion, checks the starting pattern and runs the
/// elimination. `restrict` narrows tracked coordinates to the 2-element
/// p-subalgebras spanned by their pattern values where available.
fn run_pipeline(
    h: &Structure,
    p: u64,
    definitions: Vec<DefinedRelation>,
    subalgebra_defs: &[(usize, Vec<usize>)],
    restrict: bool,
    budget: &ObstructionBudget,
    case: String,
) -> Result<ObstructionOutcome> {
    let ex = expand(h, definitions.iter().map(|d| d.relation.clone()).collect())?;
    if ex.relation(CURRENT).is_some() {
        return Err(invalid(format!("relation name `{CURRENT}` is reserved")));
    }
    let base_formula = indicator_formula(&ex);
    let base = eval_mpp(&base_formula, &ex, p)?.relation;
    let labels: Vec<String> = base_formula.vars.iter().map(|v| v.name.clone()).collect();
    let ic = indicator_coordinates(h);
    let mut roles = vec![Role::Free; labels.len()];
    for (k, c) in ic.i.iter().enumerate() {
        roles[c.var(h)] = Role::Left { first: ic.a[k], second: ic.b[k] };
    }
    for (k, c) in ic.j.iter().enumerate() {
        roles[c.var(h)] = Role::Right { first: ic.c[k], second: ic.d[k] };
    }
    if !pattern_holds(&base, &roles) {
        return Err(Error::Precondition("the indicator predicate of the expansion admits a Mal'tsev pattern".into()));
    }
    let base_size = base.len();
    let base_digest = relation_digest(&base);
    let h_rel_count = h.relations.len();
    let subalgebras = subalgebra_defs
        .iter()
        .enumerate()
        .filter_map(|(k, (s, e))| {
            let name = &definitions.get(k + definitions.len() - subalgebra_defs.len())?.relation.name;
            Some((*s, e.clone(), ex.relation_index(name)?))
        })
        .collect();
    let _ = h_rel_count;
    let mut ctx = Ctx { p, ex, labels, subalgebras, budget, steps: Vec::new(), trail: Vec::new() };
    let mut st = State { rel: base, coords: (0..roles.len()).collect(), roles };

    // Eliminate E in canonical order.
    while let Some(pos) = st.roles.iter().position(|r| *r == Role::Free) {
        if let Err(report) = ctx.eliminate_free(&mut st, pos, true)? {
            return stuck_or_polynomial(&ctx, h, p, &st, report);
        }
    }
    if restrict {
        for pos in 0..st.coords.len() {
            let (f, s) = st.roles[pos].values().expect("tracked");
            if f == s || ctx.ex.sorts[st.rel.sorts[pos]].len() <= 2 {
                continue;
            }
            let want = if f < s { vec![f, s] } else { vec![s, f] };
            let sort = st.rel.sorts[pos];
            if let Some(&(_, _, r)) = ctx.subalgebras.iter().find(|(so, e, _)| *so == sort && *e == want) {
                let op = Op { restrict: vec![(pos, r)], ..Op::default() };
                if let Some(next) = ctx.attempt(&st, &op, None) {
                    ctx.commit(&mut st, &op, next, Rule::Restrict, pos, None);
                }
            }
        }
    }
    if let Err(report) = ctx.reduce_tracked(&mut st)? {
        return stuck_or_polynomial(&ctx, h, p, &st, report);
    }
    let members: Vec<Vec<usize>> = (0..3).map(|k| st.roles.iter().map(|r| r.value(k).expect("tracked")).collect()).collect();
    let excluded: Vec<usize> = st.roles.iter().map(|r| r.value(3).expect("tracked")).collect();
    let swapped = st.coords.iter().zip(&st.roles).any(|(&c, r)| match (roles_of_base(h, c), r) {
        (Some(Role::Left { first, .. }), Role::Left { first: f, .. }) => first != *f,
        (Some(Role::Right { first, .. }), Role::Right { first: f, .. }) => first != *f,
        _ => false,
    });
    let terminal = terminal_of(&st.rel, &st.roles, &ctx.ex);
    Ok(ObstructionOutcome::Certificate(Box::new(ObstructionCertificate {
        p,
        structure_digest: structure_digest(h),
        definitions,
        base_coords: ctx.labels.clone(),
        base_size,
        base_digest,
        steps: ctx.steps,
        pattern: FinalPattern { coords: st.coords.clone(), roles: st.roles.clone(), members, excluded, swapped },
        terminal,
        trail: ctx.trail,
        case,
    })))
}

fn roles_of_base(h: &Structure, coord: usize) -> Option<Role> {
    let ic = indicator_coordinates(h);
    for (k, c) in ic.i.iter().enumerate() {
        if c.var(h) == coord {
            return Some(Role::Left { first: ic.a[k], second: ic.b[k] });
        }
    }
    for (k, c) in ic.j.iter().enumerate() {
        if c.var(h) == coord {
            return Some(Role::Right { first: ic.c[k], second: ic.d[k] });
        }
    }
    None
}

fn terminal_of(rel: &Relation, roles: &[Role], ex: &Structure) -> Option<Terminal> {
    if rel.arity() != 2 {
        return None;
    }
    let (l, r) = if roles[0].is_left() { (0, 1) } else { (1, 0) };
    let (lf, ls) = roles[l].values()?;
    let (rf, rs) = roles[r].values()?;
    let at = |x: usize, y: usize| {
        let mut t = vec![0; 2];
        t[l] = x;
        t[r] = y;
        u8::from(rel.contains(&t))
    };
    let matrix = (0..ex.sorts[rel.sorts[l]].len()).map(|x| (0..ex.sorts[rel.sorts[r]].len()).map(|y| at(x, y)).collect()).collect();
    Some(Terminal { matrix, pattern: [[at(lf, rs), at(lf, rf)], [at(ls, rs), at(ls, rf)]] })
}

/// On a stuck elimination, looks for an order-p M-automorphism moving every
/// triple of `B₁×B₂×B₃`; when one exists, a p-automorphic polynomial is
/// searched for instead.
fn stuck_or_polynomial(ctx: &Ctx, h: &Structure, p: u64, st: &State, mut report: StuckReport) -> Result<ObstructionOutcome> {
    if let Some(b) = report.b_sets.clone() {
        let pos = st.coords.iter().position(|&c| ctx.labels[c] == report.coordinate).expect("stuck coordinate is current");
        let sort = st.rel.sorts[pos];
        let n = ctx.ex.sorts[sort].len();
        match m_automorphisms(&ctx.ex, Some(p)) {
            Ok(ms) => {
                let mut triples = Vec::new();
                for &x in &b[0] {
                    for &y in &b[1] {
                        for &z in &b[2] {
                            triples.push((x * n + y) * n + z);
                        }
                    }
                }
                let mover = ms.iter().find(|m| {
                    let cube = m.cube_map();
                    triples.iter().all(|&t| cube.maps[sort][t] != t)
                });
                if mover.is_some() {
                    if let Some(f) = find_p_automorphic_polynomial(&ctx.ex, p)? {
                        return Ok(ObstructionOutcome::AutomorphicPolynomial {
                            f: f.f,
                            sort: f.sort,
                            a: f.a,
                            note: format!("an order-{p} M-automorphism moves every triple of B1×B2×B3 at {}", report.coordinate),
                        });
                    }
                    report.note.push_str("; an order-p M-automorphism moves every candidate triple");
                } else {
                    report.note.push_str("; some candidate triple is fixed by every order-p M-automorphism (gadget beyond budget)");
                }
            }
            Err(e) => report.note.push_str(&format!("; M-automorphisms not computed: {e}")),
        }
    }
    let _ = h;
    Ok(ObstructionOutcome::Stuck(Box::new(report)))
}

fn killer_definitions(verdict: &MaltsevVerdict) -> Vec<DefinedRelation> {
    verdict.killers().to_vec()
}

/// Subalgebras with at least 2 and fewer than all elements, named `S0,
/// S1, …`.
fn subalgebra_definitions(
    h: &Structure,
    p: u64,
    budget: &ClosureBudget,
) -> Result<(Vec<DefinedRelation>, Vec<(usize, Vec<usize>)>, Conservativity, usize)> {
    let subs = p_subalgebras(h, p, budget)?;
    let cons = conservativity_of(h, &subs);
    let mut defs = Vec::new();
    let mut keys = Vec::new();
    let mut two = 0;
    for s in subs {
        let n = h.sorts[s.sort].len();
        if s.elements.len() < 2 || s.elements.len() == n {
            continue;
        }
        if s.elements.len() == 2 {
            two += 1;
        }
        let mut d = s.definition.clone();
        d.relation = d.relation.renamed(format!("S{}", defs.len()));
        keys.push((s.sort, s.elements.clone()));
        defs.push(d);
    }
    Ok((defs, keys, cons, two))
}

fn no_maltsev(h: &Structure, p: u64, budget: &ClosureBudget) -> Result<MaltsevVerdict> {
    let v = maltsev_for_closure(h, p, budget)?;
    if !v.has_no_maltsev() {
        return Err(Error::Precondition("a Mal'tsev polymorphism survives the closure search".into()));
    }
    Ok(v)
}

fn rename_killers(mut killers: Vec<DefinedRelation>, h: &Structure) -> Vec<DefinedRelation> {
    for (k, d) in killers.iter_mut().enumerate() {
        let mut name = format!("Q{k}");
        while h.relation(&name).is_some() {
            name = format!("_{name}");
        }
        d.relation = d.relation.renamed(name);
    }
    killers
}

/// The conservative pipeline: requires certified p-conservativity and a
/// Mal'tsev-free closure.
pub fn conservative_obstruction(h: &Structure, p: u64, budget: &ObstructionBudget) -> Result<ObstructionOutcome> {
    check_prime(p)?;
    let verdict = no_maltsev(h, p, &budget.closure)?;
    let (mut subs, keys, cons, _) = subalgebra_definitions(h, p, &budget.closure)?;
    if cons != Conservativity::CertifiedYes {
        return Err(Error::Precondition("p-conservativity is not certified within the budget".into()));
    }
    let mut defs = rename_killers(killer_definitions(&verdict), h);
    for d in &mut subs {
        while h.relation(&d.relation.name).is_some() {
            d.relation = d.relation.renamed(format!("_{}", d.relation.name));
        }
    }
    defs.extend(subs);
    run_pipeline(h, p, defs, &keys, true, budget, "conservative".into())
}

/// The 2-element arity reduction applied to a certificate: replays it and
/// reduces the tracked coordinates to one per side.
pub fn two_element_reduce(
    cert: &ObstructionCertificate,
    h: &Structure,
    p: u64,
    budget: &ObstructionBudget,
) -> Result<ObstructionCertificate> {
    if h.sorts.iter().any(|s| s.len() > 2) {
        return Err(Error::Precondition("every sort must have at most 2 elements".into()));
    }
    let replay = replay(cert, h, p)?;
    let Some(rel) = replay.relation else {
        return Err(Error::Precondition(format!("certificate does not replay: {}", replay.divergence.unwrap_or_default())));
    };
    let ex = expand(h, cert.definitions.iter().map(|d| d.relation.clone()).collect())?;
    let mut ctx = Ctx {
        p,
        ex,
        labels: cert.base_coords.clone(),
        subalgebras: Vec::new(),
        budget,
        steps: cert.steps.clone(),
        trail: cert.trail.clone(),
    };
    let mut st = State { rel, coords: cert.pattern.coords.clone(), roles: cert.pattern.roles.clone() };
    if let Err(r) = ctx.reduce_tracked(&mut st)? {
        return Err(Error::Precondition(format!("reduction stuck at {}", r.coordinate)));
    }
    let mut out = cert.clone();
    out.pattern.members = (0..3).map(|k| st.roles.iter().map(|r| r.value(k).expect("tracked")).collect()).collect();
    out.pattern.excluded = st.roles.iter().map(|r| r.value(3).expect("tracked")).collect();
    out.terminal = terminal_of(&st.rel, &st.roles, &ctx.ex);
    out.pattern.coords = st.coords;
    out.pattern.roles = st.roles;
    out.steps = ctx.steps;
    out.trail = ctx.trail;
    Ok(out)
}

/// The 3-element pipeline.
pub fn three_element_obstruction(h: &Structure, p: u64, budget: &ObstructionBudget) -> Result<ObstructionOutcome> {
    check_prime(p)?;
    if h.sorts.len() != 1 || h.sorts[0].len() != 3 {
        return Err(Error::Precondition("a single 3-element sort is required".into()));
    }
    let verdict = no_maltsev(h, p, &budget.closure)?;
    if let Some(f) = find_p_automorphic_polynomial(h, p)? {
        return Ok(ObstructionOutcome::AutomorphicPolynomial {
            f: f.f,
            sort: f.sort,
            a: f.a,
            note: "the structure has a p-automorphic polynomial; reduce it first".into(),
        });
    }
    let (mut subs, keys, cons, two) = subalgebra_definitions(h, p, &budget.closure)?;
    if cons == Conservativity::CertifiedYes {
        return conservative_obstruction(h, p, budget);
    }
    let mut defs = rename_killers(killer_definitions(&verdict), h);
    for d in &mut subs {
        while h.relation(&d.relation.name).is_some() {
            d.relation = d.relation.renamed(format!("_{}", d.relation.name));
        }
    }
    defs.extend(subs);
    let case = match two {
        0 => "no 2-element p-subalgebra",
        1 => "one 2-element p-subalgebra",
        _ => "two 2-element p-subalgebras",
    };
    run_pipeline(h, p, defs, &keys, true, budget, case.into())
}

/// Result of replaying a certificate.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct VerifyReport {
    pub ok: bool,
    /// First place where the replay disagreed with the certificate.
    pub divergence: Option<String>,
}

struct Replay {
    relation: Option<Relation>,
    expansion: Option<Structure>,
    divergence: Option<String>,
}

fn replay(cert: &ObstructionCertificate, h: &Structure, p: u64) -> Result<Replay> {
    let fail = |msg: String| Ok(Replay { relation: None, expansion: None, divergence: Some(msg) });
    if cert.p != p {
        return fail(format!("certificate is for p = {}, checked with p = {p}", cert.p));
    }
    check_prime(p)?;
    if structure_digest(h) != cert.structure_digest {
        return fail("structure digest differs".into());
    }
    for (k, d) in cert.definitions.iter().enumerate() {
        let ev = match eval_mpp(&d.formula, h, p) {
            Ok(e) => e,
            Err(e) => return fail(format!("definition {k} (`{}`) does not evaluate: {e}", d.relation.name)),
        };
        if !ev.relation.same_content(&d.relation) {
            return fail(format!("definition {k} (`{}`) evaluates to a different relation", d.relation.name));
        }
    }
    let ex = match expand(h, cert.definitions.iter().map(|d| d.relation.clone()).collect()) {
        Ok(x) => x,
        Err(e) => return fail(format!("expansion: {e}")),
    };
    let base_formula = indicator_formula(&ex);
    let labels: Vec<String> = base_formula.vars.iter().map(|v| v.name.clone()).collect();
    if labels != cert.base_coords {
        return fail("indicator coordinates differ".into());
    }
    let mut rel = eval_mpp(&base_formula, &ex, p)?.relation;
    if relation_digest(&rel) != cert.base_digest {
        return fail("indicator predicate digest differs".into());
    }
    let mut coords: Vec<usize> = (0..labels.len()).collect();
    for (k, step) in cert.steps.iter().enumerate() {
        let cur = match expand(&ex, vec![rel.renamed(CURRENT)]) {
            Ok(x) => x,
            Err(e) => return fail(format!("step {k}: {e}")),
        };
        let scope_ok = step
            .formula
            .atoms
            .first()
            .is_some_and(|a| matches!(a, Atom::Relation { relation, scope } if relation == CURRENT && scope.len() == coords.len()));
        if !scope_ok {
            return fail(format!("step {k}: formula does not start from the previous relation"));
        }
        let next = match eval_mpp(&step.formula, &cur, p) {
            Ok(e) => e.relation,
            Err(e) => return fail(format!("step {k}: formula does not evaluate: {e}")),
        };
        let kept: Vec<usize> = step.formula.free.iter().map(|&v| coords[v]).collect();
        if kept != step.coords {
            return fail(format!("step {k}: coordinates differ"));
        }
        if relation_digest(&next) != step.digest || next.len() != step.size {
            return fail(format!("step {k} ({:?} at {}): relation differs", step.rule, step.coordinate));
        }
        rel = next;
        coords = kept;
    }
    if coords != cert.pattern.coords {
        return fail("final coordinates differ".into());
    }
    Ok(Replay { relation: Some(rel), expansion: Some(ex), divergence: None })
}

/// Replays a certificate from scratch: re-evaluates every definition over
/// `H`, the indicator predicate of the expansion and every step formula,
/// then re-checks the pattern and, for binary relations,
/// non-rectangularity.
pub fn verify_certificate(cert: &ObstructionCertificate, h: &Structure, p: u64) -> Result<VerifyReport> {
    let r = replay(cert, h, p)?;
    let Some(rel) = r.relation else {
        return Ok(VerifyReport { ok: false, divergence: r.divergence });
    };
    let fail = |msg: &str| Ok(VerifyReport { ok: false, divergence: Some(msg.to_string()) });
    let pat = &cert.pattern;
    if pat.roles.len() != rel.arity() || pat.members.len() != 3 {
        return fail("pattern shape differs from the final relation");
    }
    if !pat.roles.iter().any(|r| r.is_left()) || !pat.roles.iter().any(|r| r.is_right()) {
        return fail("pattern needs coordinates on both sides");
    }
    for k in 0..3 {
        let expect: Option<Vec<usize>> = pat.roles.iter().map(|r| r.value(k)).collect();
        if expect.as_ref() != Some(&pat.members[k]) {
            return fail(&format!("witness {k} does not follow the roles"));
        }
        if !rel.contains(&pat.members[k]) {
            return fail(&format!("witness {k} is not in the final relation"));
        }
    }
    let out: Option<Vec<usize>> = pat.roles.iter().map(|r| r.value(3)).collect();
    if out.as_ref() != Some(&pat.excluded) {
        return fail("excluded tuple does not follow the roles");
    }
    if rel.contains(&pat.excluded) {
        return fail("excluded tuple is in the final relation");
    }
    if rel.arity() == 2 && is_rectangular(&rel)?.is_none() {
        return fail("terminal binary relation is rectangular");
    }
    let ex = r.expansion.as_ref().expect("a replayed relation comes with its expansion");
    if terminal_of(&rel, &pat.roles, ex) != cert.terminal {
        return fail("terminal matrix differs from the final relation");
    }
    Ok(VerifyReport { ok: true, divergence: None })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::structures::{add_constants, Structure};

    fn budget() -> ObstructionBudget {
        ObstructionBudget {
            closure: ClosureBudget { max_relations: 80, max_rounds: 2, ..ClosureBudget::default() },
            gadget: GadgetBudget { max_candidates: 2000, ..GadgetBudget::default() },
        }
    }

    fn cert(h: &Structure, p: u64) -> ObstructionCertificate {
        match conservative_obstruction(h, p, &budget()).unwrap() {
            ObstructionOutcome::Certificate(c) => *c,
            other => panic!("no certificate: {other:?}"),
        }
    }

    #[test]
    fn le2_with_constants_gives_the_two_by_two_pattern() {
        let h = fixtures::le2c();
        let c = cert(&h, 2);
        let t = c.terminal.as_ref().expect("binary terminal");
        assert_eq!(t.pattern, [[0, 1], [1, 1]]);
        assert_eq!(verify_certificate(&c, &h, 2).unwrap(), VerifyReport { ok: true, divergence: None });
        let back = ObstructionCertificate::from_json(&c.to_json()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn mutations_are_caught() {
        let h = fixtures::le2c();
        let c = cert(&h, 2);
        let mut m = c.clone();
        m.pattern.members[0][0] ^= 1;
        assert!(!verify_certificate(&m, &h, 2).unwrap().ok);
        let mut m = c.clone();
        m.pattern.excluded[1] ^= 1;
        assert!(!verify_certificate(&m, &h, 2).unwrap().ok);
        assert!(!verify_certificate(&c, &h, 3).unwrap().ok);
        if let Some(k) = c.steps.iter().position(|s| s.formula.atoms.iter().any(|a| matches!(a, Atom::Constant { .. }))) {
            let mut m = c.clone();
            for a in &mut m.steps[k].formula.atoms {
                if let Atom::Constant { value, .. } = a {
                    *value ^= 1;
                }
            }
            let r = verify_certificate(&m, &h, 2).unwrap();
            assert!(!r.ok);
            assert!(r.divergence.unwrap().starts_with(&format!("step {k}")));
        }
        let mut m = c.clone();
        m.base_digest = "0".repeat(64);
        assert!(!verify_certificate(&m, &h, 2).unwrap().ok);
        let mut m = c.clone();
        if let Some(t) = m.terminal.as_mut() {
            t.matrix[0][0] ^= 1;
        }
        assert!(!verify_certificate(&m, &h, 2).unwrap().ok);
    }

    #[test]
    fn maltsev_structures_are_refused() {
        let r = conservative_obstruction(&fixtures::affine_c(), 2, &budget());
        assert!(matches!(r, Err(Error::Precondition(_))));
    }

    #[test]
    fn le2_modulo_three() {
        let h = fixtures::le2c();
        let c = cert(&h, 3);
        assert!(verify_certificate(&c, &h, 3).unwrap().ok);
        assert_eq!(c.terminal.unwrap().pattern, [[0, 1], [1, 1]]);
    }

    #[test]
    fn three_element_chain() {
        let mut rels: Vec<(&str, Vec<Vec<usize>>)> =
            vec![("LE", vec![vec![0, 0], vec![0, 1], vec![0, 2], vec![1, 1], vec![1, 2], vec![2, 2]])];
        rels.push(("A01", vec![vec![0], vec![1]]));
        rels.push(("A02", vec![vec![0], vec![2]]));
        rels.push(("A12", vec![vec![1], vec![2]]));
        let h = add_constants(&Structure::single_sorted(3, rels).unwrap()).unwrap();
        match three_element_obstruction(&h, 2, &budget()).unwrap() {
            ObstructionOutcome::Certificate(c) => {
                assert!(verify_certificate(&c, &h, 2).unwrap().ok);
                assert_eq!(c.case, "conservative");
                assert_eq!(c.pattern.coords.len(), 2);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn two_element_reduce_keeps_binary_certificates() {
        let h = fixtures::le2c();
        let c = cert(&h, 2);
        let again = two_element_reduce(&c, &h, 2, &budget()).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn gadget_search() {
        let h = fixtures::le2c();
        let g = find_gadget(&h, 2, 0, &[vec![0], vec![1], vec![0]], &GadgetBudget::default()).unwrap().unwrap();
        assert!(g.gadget.constraints.is_empty());
        assert!(verify_gadget(&g, &h, 2, &[vec![0], vec![1], vec![0]]).unwrap());
        // The swap of NEQ2 has order 2 and preserves every weight, so no
        // gadget can make a sum over {0,1} odd.
        let neq = fixtures::neq2();
        let small = GadgetBudget { max_vertices: 4, max_constraints: 4, max_candidates: 5000 };
        assert!(find_gadget(&neq, 2, 0, &[vec![0, 1], vec![0], vec![1]], &small).unwrap().is_none());
        // With a constant available the weights separate 0 and 1.
        let g = find_gadget(&h, 2, 0, &[vec![0, 1], vec![0, 1], vec![0, 1]], &small).unwrap().unwrap();
        assert!(verify_gadget(&g, &h, 2, &[vec![0, 1], vec![0, 1], vec![0, 1]]).unwrap());
    }

    #[test]
    fn elimination_rules_on_small_states() {
        // A relation over (L, R, z): singleton extension sets are removed
        // by plain quantification.
        let ex = fixtures::le2c();
        let b = budget();
        let mut ctx = Ctx {
            p: 2,
            ex,
            labels: vec!["l".into(), "r".into(), "z".into()],
            subalgebras: vec![],
            budget: &b,
            steps: vec![],
            trail: vec![],
        };
        let roles = vec![Role::Left { first: 0, second: 1 }, Role::Right { first: 0, second: 1 }, Role::Free];
        let rel = Relation::new("R", vec![0, 0, 0], vec![vec![0, 0, 1], vec![1, 0, 1], vec![1, 1, 0]]);
        let mut st = State { rel, coords: vec![0, 1, 2], roles: roles.clone() };
        assert_eq!(b_sets(&st, 2), vec![vec![1], vec![1], vec![0]]);
        assert!(ctx.eliminate_free(&mut st, 2, false).unwrap().is_ok());
        assert_eq!(ctx.steps.last().unwrap().rule, Rule::Quantify);
        // B₁ = {0,1}, B₂ = {0}, B₃ = {1}: plain quantification would drop
        // the first member (two extensions), so the coordinate is promoted.
        let rel = Relation::new("R", vec![0, 0, 0], vec![vec![0, 0, 0], vec![0, 0, 1], vec![1, 0, 0], vec![1, 1, 1]]);
        let mut st = State { rel, coords: vec![0, 1, 2], roles };
        assert_eq!(b_sets(&st, 2), vec![vec![0, 1], vec![0], vec![1]]);
        assert!(ctx.eliminate_free(&mut st, 2, true).unwrap().is_ok());
        assert!(pattern_holds(&st.rel, &st.roles));
    }
}
