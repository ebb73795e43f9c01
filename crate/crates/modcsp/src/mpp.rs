//! p-modular primitive-positive (p-mpp) definitions: formulas whose
//! quantifiers count extensions modulo a prime, extension counts and modular
//! projections, a bounded closure search approximating `⟨H⟩_p`,
//! p-subalgebras, p-conservativity and the `H^{†p}` expansion.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::ops::ControlFlow;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::{check_prime, invalid, Error, Result};
use crate::polyclone::{
    enumerate_polymorphisms, has_maltsev, is_rectangular, maltsev_polymorphisms, relation_violation, OperationTable, DEFAULT_POLY_LIMIT,
};
use crate::solver::{full_mask, Csp, MAX_DOMAIN};
use crate::structures::{expand, Relation, Structure, Variable};

/// Cap on the number of assignments materialized when evaluating a formula.
pub const DEFAULT_EVAL_LIMIT: usize = 4_000_000;

/// An atom of a formula's quantifier-free part.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Atom {
    /// `R(v₁, …, v_k)` for a relation of the structure, by name.
    Relation { relation: String, scope: Vec<usize> },
    /// `v = w`.
    Equal { equal: [usize; 2] },
    /// `v = e`.
    Constant { var: usize, value: usize },
}

/// A p-mpp formula `∃^{≡p}B₁ ⋯ ∃^{≡p}B_m (atoms)`. Blocks are listed
/// outermost first; the last block is quantified innermost. Each block is
/// quantified jointly: its variables are counted together.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MppFormula {
    pub vars: Vec<Variable>,
    pub free: Vec<usize>,
    pub blocks: Vec<Vec<usize>>,
    pub atoms: Vec<Atom>,
}

/// Outcome of evaluating a formula.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Evaluation {
    pub relation: Relation,
    /// Every surviving tuple had exactly one extension modulo p at every
    /// block.
    pub strict: bool,
}

impl MppFormula {
    /// A single atom over fresh free variables.
    pub fn atom(h: &Structure, relation: usize) -> Self {
        let r = &h.relations[relation];
        let vars = r.sorts.iter().enumerate().map(|(i, &s)| Variable { name: format!("x{i}"), sort: s }).collect();
        MppFormula {
            vars,
            free: (0..r.arity()).collect(),
            blocks: Vec::new(),
            atoms: vec![Atom::Relation { relation: r.name.clone(), scope: (0..r.arity()).collect() }],
        }
    }

    /// `x₀ = x₁` over a sort.
    pub fn equality(sort: usize) -> Self {
        MppFormula {
            vars: vec![Variable { name: "x0".into(), sort }, Variable { name: "x1".into(), sort }],
            free: vec![0, 1],
            blocks: Vec::new(),
            atoms: vec![Atom::Equal { equal: [0, 1] }],
        }
    }

    pub fn arity(&self) -> usize {
        self.free.len()
    }

    pub fn validate(&self, h: &Structure) -> Result<()> {
        let n = self.vars.len();
        for v in &self.vars {
            if v.sort >= h.sorts.len() {
                return Err(invalid(format!("variable `{}` has an unknown sort", v.name)));
            }
        }
        let mut role = vec![0u8; n];
        for &v in &self.free {
            if v >= n || role[v] != 0 {
                return Err(invalid("free variables must be distinct and declared"));
            }
            role[v] = 1;
        }
        for b in &self.blocks {
            if b.is_empty() {
                return Err(invalid("empty quantifier block"));
            }
            for &v in b {
                if v >= n || role[v] != 0 {
                    return Err(invalid("quantified variables must be distinct, declared and not free"));
                }
                role[v] = 2;
            }
        }
        if let Some(v) = role.iter().position(|&r| r == 0) {
            return Err(invalid(format!("variable `{}` is neither free nor quantified", self.vars[v].name)));
        }
        for a in &self.atoms {
            match a {
                Atom::Relation { relation, scope } => {
                    let r = h.relation(relation).ok_or_else(|| Error::Unknown { kind: "relation", name: relation.clone() })?;
                    if r.arity() != scope.len() {
                        return Err(Error::Arity(format!("`{relation}` has arity {}, used with {}", r.arity(), scope.len())));
                    }
                    for (&v, &s) in scope.iter().zip(&r.sorts) {
                        if v >= n || self.vars[v].sort != s {
                            return Err(invalid(format!("atom `{relation}` is ill-typed")));
                        }
                    }
                }
                Atom::Equal { equal: [u, v] } => {
                    if *u >= n || *v >= n || self.vars[*u].sort != self.vars[*v].sort {
                        return Err(invalid("equality is ill-typed"));
                    }
                }
                Atom::Constant { var, value } => {
                    if *var >= n || *value >= h.sorts[self.vars[*var].sort].len() {
                        return Err(invalid("constant atom is ill-typed"));
                    }
                }
            }
        }
        Ok(())
    }

    /// Sort of each free variable, in order.
    pub fn free_sorts(&self) -> Vec<usize> {
        self.free.iter().map(|&v| self.vars[v].sort).collect()
    }

    /// Ordering key used to pick canonical definitions: fewer atoms, fewer
    /// blocks, fewer variables, then the text.
    pub fn canonical_key(&self) -> (usize, usize, usize, String) {
        (self.atoms.len(), self.blocks.len(), self.vars.len(), self.render())
    }

    /// Human-readable rendering.
    pub fn render(&self) -> String {
        let name = |v: usize| format!("v{v}");
        let mut s = String::new();
        s.push('[');
        s.push_str(&self.free.iter().map(|&v| name(v)).collect::<Vec<_>>().join(","));
        s.push_str("] ");
        for b in &self.blocks {
            s.push_str(&format!("E^p{{{}}} ", b.iter().map(|&v| name(v)).collect::<Vec<_>>().join(",")));
        }
        let atoms: Vec<String> = self
            .atoms
            .iter()
            .map(|a| match a {
                Atom::Relation { relation, scope } => {
                    format!("{relation}({})", scope.iter().map(|&v| name(v)).collect::<Vec<_>>().join(","))
                }
                Atom::Equal { equal: [u, v] } => format!("{}={}", name(*u), name(*v)),
                Atom::Constant { var, value } => format!("{}=#{value}", name(*var)),
            })
            .collect();
        s.push_str(&atoms.join(" & "));
        s
    }

    pub fn to_json(&self, h: &Structure) -> Value {
        let var = |v: usize| Value::String(self.vars[v].name.clone());
        let sort = |v: usize| Value::String(h.sorts[self.vars[v].sort].name.clone());
        let bound: BTreeSet<usize> = self.blocks.iter().flatten().copied().collect();
        json!({
            "free": self.free.iter().map(|&v| json!({"var": var(v), "sort": sort(v)})).collect::<Vec<_>>(),
            "bound": bound.iter().map(|&v| json!({"var": var(v), "sort": sort(v)})).collect::<Vec<_>>(),
            "blocks": self.blocks.iter().map(|b| b.iter().map(|&v| var(v)).collect::<Vec<_>>()).collect::<Vec<_>>(),
            "atoms": self.atoms.iter().map(|a| match a {
                Atom::Relation { relation, scope } => json!({"relation": relation, "scope": scope.iter().map(|&v| var(v)).collect::<Vec<_>>()}),
                Atom::Equal { equal: [u, v] } => json!({"equal": [var(*u), var(*v)]}),
                Atom::Constant { var: v, value } => json!({"constant": h.sorts[self.vars[*v].sort].elements[*value], "scope": [var(*v)]}),
            }).collect::<Vec<_>>(),
        })
    }

    /// Reads `{free: [{var, sort}], bound?: [{var, sort}], blocks: [[var…]…],
    /// atoms: [{relation, scope} | {equal: [u, v]} | {constant, scope: [v]}]}`.
    /// Sorts of bound variables missing from `bound` are inferred from the
    /// relation atoms they occur in.
    pub fn from_json(v: &Value, h: &Structure) -> Result<Self> {
        let obj = v.as_object().ok_or_else(|| invalid("formula must be an object"))?;
        let mut names: BTreeMap<String, usize> = BTreeMap::new();
        let mut vars: Vec<Variable> = Vec::new();
        let mut sorts: Vec<Option<usize>> = Vec::new();
        let text = |x: &Value| -> Result<String> {
            match x {
                Value::String(s) => Ok(s.clone()),
                Value::Number(n) => Ok(n.to_string()),
                _ => Err(invalid("expected a name")),
            }
        };
        let mut declare = |name: String, sort: Option<usize>, vars: &mut Vec<Variable>, sorts: &mut Vec<Option<usize>>| -> usize {
            if let Some(&i) = names.get(&name) {
                if sorts[i].is_none() {
                    sorts[i] = sort;
                }
                return i;
            }
            names.insert(name.clone(), vars.len());
            vars.push(Variable { name, sort: 0 });
            sorts.push(sort);
            vars.len() - 1
        };
        let sort_of = |x: Option<&Value>| -> Result<Option<usize>> {
            match x {
                None => Ok(if h.sorts.len() == 1 { Some(0) } else { None }),
                Some(s) => {
                    let s = text(s)?;
                    h.sort_index(&s).map(Some).ok_or(Error::Unknown { kind: "sort", name: s })
                }
            }
        };
        let mut free = Vec::new();
        for f in obj.get("free").and_then(Value::as_array).ok_or_else(|| invalid("formula needs `free`"))? {
            let s = sort_of(f.get("sort"))?;
            free.push(declare(text(f.get("var").ok_or_else(|| invalid("free entry needs `var`"))?)?, s, &mut vars, &mut sorts));
        }
        if let Some(bs) = obj.get("bound").and_then(Value::as_array) {
            for f in bs {
                let s = sort_of(f.get("sort"))?;
                declare(text(f.get("var").ok_or_else(|| invalid("bound entry needs `var`"))?)?, s, &mut vars, &mut sorts);
            }
        }
        let mut blocks = Vec::new();
        for b in obj.get("blocks").and_then(Value::as_array).map(Vec::as_slice).unwrap_or(&[]) {
            let b = b.as_array().ok_or_else(|| invalid("a block must be a list of variables"))?;
            let mut block = Vec::new();
            for x in b {
                block.push(declare(text(x)?, None, &mut vars, &mut sorts));
            }
            blocks.push(block);
        }
        let mut atoms = Vec::new();
        for a in obj.get("atoms").and_then(Value::as_array).ok_or_else(|| invalid("formula needs `atoms`"))? {
            let scope_names: Vec<String> = a
                .get("scope")
                .and_then(Value::as_array)
                .map(|s| s.iter().map(text).collect::<Result<Vec<_>>>())
                .transpose()?
                .unwrap_or_default();
            if let Some(rel) = a.get("relation") {
                let rname = text(rel)?;
                let r = h.relation(&rname).ok_or_else(|| Error::Unknown { kind: "relation", name: rname.clone() })?;
                if r.arity() != scope_names.len() {
                    return Err(Error::Arity(format!("`{rname}` has arity {}, used with {}", r.arity(), scope_names.len())));
                }
                let scope = scope_names.into_iter().zip(&r.sorts).map(|(n, &s)| declare(n, Some(s), &mut vars, &mut sorts)).collect();
                atoms.push(Atom::Relation { relation: rname, scope });
            } else if let Some(eq) = a.get("equal").and_then(Value::as_array) {
                if eq.len() != 2 {
                    return Err(invalid("`equal` needs two variables"));
                }
                let u = declare(text(&eq[0])?, None, &mut vars, &mut sorts);
                let w = declare(text(&eq[1])?, None, &mut vars, &mut sorts);
                atoms.push(Atom::Equal { equal: [u, w] });
            } else if let Some(c) = a.get("constant") {
                let [vn] = scope_names.as_slice() else {
                    return Err(invalid("a constant atom needs a one-variable scope"));
                };
                let var = declare(vn.clone(), None, &mut vars, &mut sorts);
                atoms.push(Atom::Constant { var, value: usize::MAX });
                let _ = c;
            } else {
                return Err(invalid("unrecognized atom"));
            }
        }
        // Propagate sorts through equalities.
        loop {
            let mut changed = false;
            for a in &atoms {
                if let Atom::Equal { equal: [u, w] } = a {
                    match (sorts[*u], sorts[*w]) {
                        (Some(s), None) => {
                            sorts[*w] = Some(s);
                            changed = true;
                        }
                        (None, Some(s)) => {
                            sorts[*u] = Some(s);
                            changed = true;
                        }
                        _ => {}
                    }
                }
            }
            if !changed {
                break;
            }
        }
        for (i, v) in vars.iter_mut().enumerate() {
            v.sort = sorts[i].ok_or_else(|| invalid(format!("cannot infer the sort of `{}`", v.name)))?;
        }
        // Resolve constants now that sorts are known.
        let raw_atoms = obj.get("atoms").and_then(Value::as_array).expect("checked");
        for (a, raw) in atoms.iter_mut().zip(raw_atoms) {
            if let Atom::Constant { var, value } = a {
                let e = text(raw.get("constant").expect("checked"))?;
                *value = h.sorts[vars[*var].sort].index_of(&e).ok_or_else(|| Error::Unknown { kind: "element", name: e.clone() })?;
            }
        }
        let f = MppFormula { vars, free, blocks, atoms };
        f.validate(h)?;
        Ok(f)
    }
}

/// `(|Ext_R(ā)|, |Ext_R(ā)| mod p)` where `ā` is a tuple on `coords`.
pub fn ext_counts(r: &Relation, coords: &[usize], a: &[usize], p: u64) -> Result<(u128, u64)> {
    if coords.len() != a.len() || coords.iter().any(|&c| c >= r.arity()) {
        return Err(Error::Arity("prefix does not match the coordinates".into()));
    }
    let count = r.tuples().iter().filter(|t| coords.iter().zip(a).all(|(&c, &x)| t[c] == x)).count() as u128;
    Ok((count, (count % p as u128) as u64))
}

/// Tuples on `coords` (in the given order) with a number of extensions
/// not divisible by `p`, with their exact counts.
pub fn projection_counts(r: &Relation, coords: &[usize]) -> BTreeMap<Vec<usize>, u128> {
    let mut m: BTreeMap<Vec<usize>, u128> = BTreeMap::new();
    for t in r.tuples() {
        *m.entry(coords.iter().map(|&c| t[c]).collect()).or_default() += 1;
    }
    m
}

/// `pr^p_I R`.
pub fn pr_p(r: &Relation, coords: &[usize], p: u64) -> Result<Relation> {
    if coords.iter().any(|&c| c >= r.arity()) {
        return Err(Error::Arity("coordinate out of range".into()));
    }
    let tuples = projection_counts(r, coords).into_iter().filter(|(_, c)| c % p as u128 != 0).map(|(t, _)| t).collect();
    Ok(Relation::new(format!("{}_pr", r.name), coords.iter().map(|&c| r.sorts[c]).collect(), tuples))
}

/// All assignments of the formula's variables satisfying its atoms, in
/// lexicographic order.
fn satisfying_assignments(phi: &MppFormula, h: &Structure, limit: usize) -> Result<Vec<Vec<usize>>> {
    if h.sorts.iter().any(|s| s.len() > MAX_DOMAIN) {
        return Err(invalid("sort too large for formula evaluation"));
    }
    let eqs: Vec<Vec<Vec<usize>>> = h.sorts.iter().map(|s| (0..s.len()).map(|e| vec![e, e]).collect()).collect();
    let mut domains: Vec<u128> = phi.vars.iter().map(|v| full_mask(h.sorts[v.sort].len())).collect();
    for a in &phi.atoms {
        if let Atom::Constant { var, value } = a {
            domains[*var] &= 1u128 << value;
        }
    }
    let mut csp = Csp::new(domains);
    for a in &phi.atoms {
        match a {
            Atom::Relation { relation, scope } => {
                let r = h.relation(relation).expect("validated");
                csp.add(scope.clone(), r.tuples());
            }
            Atom::Equal { equal: [u, v] } => csp.add(vec![*u, *v], &eqs[phi.vars[*u].sort]),
            Atom::Constant { .. } => {}
        }
    }
    csp.solutions(limit)
}

/// Evaluates a formula: blocks are applied innermost first, each replacing
/// the current relation by its modular projection onto the variables still
/// live.
pub fn eval_mpp(phi: &MppFormula, h: &Structure, p: u64) -> Result<Evaluation> {
    eval_mpp_limited(phi, h, p, DEFAULT_EVAL_LIMIT)
}

pub fn eval_mpp_limited(phi: &MppFormula, h: &Structure, p: u64, limit: usize) -> Result<Evaluation> {
    check_prime(p)?;
    phi.validate(h)?;
    let rows = satisfying_assignments(phi, h, limit)?;
    let mut live: Vec<usize> = (0..phi.vars.len()).collect();
    let mut rows = rows;
    let mut strict = true;
    for block in phi.blocks.iter().rev() {
        let keep: Vec<usize> = (0..live.len()).filter(|&i| !block.contains(&live[i])).collect();
        let mut counts: BTreeMap<Vec<usize>, u128> = BTreeMap::new();
        for r in &rows {
            *counts.entry(keep.iter().map(|&i| r[i]).collect()).or_default() += 1;
        }
        rows = Vec::new();
        for (t, c) in counts {
            let res = c % p as u128;
            if res != 0 {
                strict &= res == 1;
                rows.push(t);
            }
        }
        live = keep.iter().map(|&i| live[i]).collect();
    }
    let pos: Vec<usize> = phi.free.iter().map(|v| live.iter().position(|x| x == v).expect("free variables stay live")).collect();
    let tuples: Vec<Vec<usize>> = rows.iter().map(|r| pos.iter().map(|&i| r[i]).collect()).collect();
    Ok(Evaluation { relation: Relation::new("phi", phi.free_sorts(), tuples), strict })
}

pub fn is_strict(phi: &MppFormula, h: &Structure, p: u64) -> Result<bool> {
    Ok(eval_mpp(phi, h, p)?.strict)
}

/// Hex SHA-256 of the structure's JSON form.
pub fn structure_digest(h: &Structure) -> String {
    let mut hasher = Sha256::new();
    hasher.update(h.to_json().to_string().as_bytes());
    format!("{:x}", hasher.finalize())
}

/// Hex SHA-256 of a relation's sorts and tuples.
pub fn relation_digest(r: &Relation) -> String {
    let mut hasher = Sha256::new();
    hasher.update(json!({"sorts": r.sorts, "tuples": r.tuples()}).to_string().as_bytes());
    format!("{:x}", hasher.finalize())
}

/// A relation together with a p-mpp definition of it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DefinedRelation {
    pub relation: Relation,
    pub formula: MppFormula,
    pub structure_digest: String,
}

impl DefinedRelation {
    /// Re-evaluates the stored formula and compares.
    pub fn check(&self, h: &Structure, p: u64) -> Result<bool> {
        Ok(structure_digest(h) == self.structure_digest && eval_mpp(&self.formula, h, p)?.relation.same_content(&self.relation))
    }

    pub fn to_json(&self, h: &Structure) -> Value {
        json!({
            "relation": h.relation_to_json(&self.relation),
            "formula": self.formula.to_json(h),
            "definition": self.formula.render(),
            "structure_digest": self.structure_digest,
        })
    }
}

/// Limits for the closure search.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClosureBudget {
    pub max_atoms: usize,
    pub max_free_arity: usize,
    pub max_blocks: usize,
    pub max_size: usize,
    /// Number of relation classes kept.
    pub max_relations: usize,
    /// Number of saturation rounds.
    pub max_rounds: usize,
}

impl Default for ClosureBudget {
    fn default() -> Self {
        ClosureBudget { max_atoms: 6, max_free_arity: 4, max_blocks: 3, max_size: 4096, max_relations: 200, max_rounds: 3 }
    }
}

impl ClosureBudget {
    pub fn validate(&self) -> Result<()> {
        if [self.max_atoms, self.max_free_arity, self.max_blocks, self.max_size, self.max_relations, self.max_rounds].contains(&0)
        {
            return Err(invalid("all budget limits must be positive"));
        }
        Ok(())
    }

    /// Parses `key=value,…` with keys atoms, arity, blocks, size, relations,
    /// rounds; unspecified keys keep their defaults.
    pub fn parse(s: &str) -> Result<Self> {
        let mut b = ClosureBudget::default();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = part.split_once('=').ok_or_else(|| invalid(format!("budget entry `{part}` needs key=value")))?;
            let v: usize = v.trim().parse().map_err(|_| invalid(format!("budget value `{v}` is not a number")))?;
            match k.trim() {
                "atoms" => b.max_atoms = v,
                "arity" => b.max_free_arity = v,
                "blocks" => b.max_blocks = v,
                "size" => b.max_size = v,
                "relations" => b.max_relations = v,
                "rounds" => b.max_rounds = v,
                other => return Err(invalid(format!("unknown budget key `{other}`"))),
            }
        }
        b.validate()?;
        Ok(b)
    }
}

/// Whether the closure reached a fixpoint.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ClosureStatus {
    Fixpoint,
    BudgetExhausted {
        reasons: Vec<String>,
    },
    /// Stopped early by the caller.
    Stopped,
}

#[derive(Clone, Debug)]
pub struct ClosureResult {
    pub relations: Vec<DefinedRelation>,
    pub status: ClosureStatus,
    pub rounds: usize,
}

type ClassKey = (Vec<usize>, Vec<Vec<usize>>);

fn permutations(k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur: Vec<usize> = (0..k).collect();
    fn rec(i: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if i == cur.len() {
            out.push(cur.clone());
            return;
        }
        for j in i..cur.len() {
            cur.swap(i, j);
            rec(i + 1, cur, out);
            cur.swap(i, j);
        }
    }
    rec(0, &mut cur, &mut out);
    out.sort();
    out
}

/// Content key of a relation up to coordinate permutation.
fn class_key(r: &Relation) -> ClassKey {
    permutations(r.arity())
        .into_iter()
        .map(|perm| {
            let sorts: Vec<usize> = perm.iter().map(|&i| r.sorts[i]).collect();
            let mut tuples: Vec<Vec<usize>> = r.tuples().iter().map(|t| perm.iter().map(|&i| t[i]).collect()).collect();
            tuples.sort();
            (sorts, tuples)
        })
        .min()
        .unwrap_or_default()
}

/// Renames `phi`'s variables by `map` into a formula over `nvars` variables.
fn shift(phi: &MppFormula, map: &[usize]) -> (Vec<Vec<usize>>, Vec<Atom>) {
    let blocks = phi.blocks.iter().map(|b| b.iter().map(|&v| map[v]).collect()).collect();
    let atoms = phi
        .atoms
        .iter()
        .map(|a| match a {
            Atom::Relation { relation, scope } => {
                Atom::Relation { relation: relation.clone(), scope: scope.iter().map(|&v| map[v]).collect() }
            }
            Atom::Equal { equal: [u, v] } => Atom::Equal { equal: [map[*u], map[*v]] },
            Atom::Constant { var, value } => Atom::Constant { var: map[*var], value: *value },
        })
        .collect();
    (blocks, atoms)
}

/// Drops unused variables and renumbers them in order of first use
/// (free variables first).
fn compact(vars: Vec<Variable>, free: Vec<usize>, blocks: Vec<Vec<usize>>, atoms: Vec<Atom>) -> MppFormula {
    let mut order: Vec<usize> = free.clone();
    for b in &blocks {
        order.extend(b);
    }
    let mut map = vec![usize::MAX; vars.len()];
    let mut new_vars = Vec::new();
    for &v in &order {
        if map[v] == usize::MAX {
            map[v] = new_vars.len();
            new_vars.push(Variable { name: format!("v{}", new_vars.len()), sort: vars[v].sort });
        }
    }
    let tmp = MppFormula { vars: vars.clone(), free: free.clone(), blocks: blocks.clone(), atoms: atoms.clone() };
    let (blocks, atoms) = shift(&tmp, &map);
    MppFormula { vars: new_vars, free: free.iter().map(|&v| map[v]).collect(), blocks, atoms }
}

/// `R(…)` with free coordinate `j` replaced by coordinate `i`.
fn identify(d: &DefinedRelation, i: usize, j: usize) -> (Relation, MppFormula) {
    let f = &d.formula;
    let (vi, vj) = (f.free[i], f.free[j]);
    let map: Vec<usize> = (0..f.vars.len()).map(|v| if v == vj { vi } else { v }).collect();
    let (blocks, atoms) = shift(f, &map);
    let free: Vec<usize> = f.free.iter().copied().filter(|&v| v != vj).collect();
    let formula = compact(f.vars.clone(), free, blocks, atoms);
    let keep: Vec<usize> = (0..d.relation.arity()).filter(|&c| c != j).collect();
    let tuples = d.relation.tuples().iter().filter(|t| t[i] == t[j]).map(|t| keep.iter().map(|&c| t[c]).collect()).collect();
    (Relation::new("id", keep.iter().map(|&c| d.relation.sorts[c]).collect(), tuples), formula)
}

/// `∃^{≡p}(coords in q) R`.
fn project(rel: &Relation, formula: &MppFormula, q: &[usize], p: u64) -> (Relation, MppFormula) {
    let keep: Vec<usize> = (0..rel.arity()).filter(|c| !q.contains(c)).collect();
    let r = pr_p(rel, &keep, p).expect("coordinates in range");
    let mut blocks = vec![q.iter().map(|&c| formula.free[c]).collect::<Vec<_>>()];
    blocks.extend(formula.blocks.iter().cloned());
    let free = keep.iter().map(|&c| formula.free[c]).collect();
    (r, compact(formula.vars.clone(), free, blocks, formula.atoms.clone()))
}

/// Conjunction of two defined relations, identifying coordinate `a` of the
/// first with coordinate `b` of the second for each `(a, b)` in `matching`.
fn conjoin(x: &DefinedRelation, y: &DefinedRelation, matching: &[(usize, usize)], max_size: usize) -> Option<(Relation, MppFormula)> {
    let (fx, fy) = (&x.formula, &y.formula);
    let off = fx.vars.len();
    let mut map: Vec<usize> = (0..fy.vars.len()).map(|v| v + off).collect();
    for &(a, b) in matching {
        map[fy.free[b]] = fx.free[a];
    }
    let mut vars = fx.vars.clone();
    vars.extend(fy.vars.iter().cloned());
    let (yblocks, yatoms) = shift(fy, &map);
    // Align blocks from the innermost.
    let depth = fx.blocks.len().max(yblocks.len());
    let mut blocks = vec![Vec::new(); depth];
    for (k, b) in fx.blocks.iter().rev().enumerate() {
        blocks[depth - 1 - k].extend(b);
    }
    for (k, b) in yblocks.iter().rev().enumerate() {
        blocks[depth - 1 - k].extend(b);
    }
    let unmatched: Vec<usize> = (0..y.relation.arity()).filter(|b| !matching.iter().any(|m| m.1 == *b)).collect();
    let mut free = fx.free.clone();
    free.extend(unmatched.iter().map(|&b| map[fy.free[b]]));
    let mut atoms = fx.atoms.clone();
    atoms.extend(yatoms);
    // The relation, by a direct join.
    let mut tuples = Vec::new();
    for s in x.relation.tuples() {
        for t in y.relation.tuples() {
            if matching.iter().all(|&(a, b)| s[a] == t[b]) {
                let mut u = s.clone();
                u.extend(unmatched.iter().map(|&b| t[b]));
                tuples.push(u);
                if tuples.len() > max_size {
                    return None;
                }
            }
        }
    }
    let mut sorts = x.relation.sorts.clone();
    sorts.extend(unmatched.iter().map(|&b| y.relation.sorts[b]));
    Some((Relation::new("join", sorts, tuples), compact(vars, free, blocks, atoms)))
}

/// Partial injective matchings between coordinates with equal sorts, in
/// lexicographic order, each of size at least `min`.
fn matchings(xs: &[usize], ys: &[usize], min: usize) -> Vec<Vec<(usize, usize)>> {
    let mut out = Vec::new();
    let mut cur = Vec::new();
    let mut used = vec![false; ys.len()];
    fn rec(a: usize, xs: &[usize], ys: &[usize], used: &mut Vec<bool>, cur: &mut Vec<(usize, usize)>, out: &mut Vec<Vec<(usize, usize)>>) {
        if a == xs.len() {
            out.push(cur.clone());
            return;
        }
        rec(a + 1, xs, ys, used, cur, out);
        for b in 0..ys.len() {
            if !used[b] && xs[a] == ys[b] {
                used[b] = true;
                cur.push((a, b));
                rec(a + 1, xs, ys, used, cur, out);
                cur.pop();
                used[b] = false;
            }
        }
    }
    rec(0, xs, ys, &mut used, &mut cur, &mut out);
    out.retain(|m| m.len() >= min);
    out
}

fn subsets(k: usize) -> impl Iterator<Item = Vec<usize>> {
    (1u32..(1u32 << k)).map(move |m| (0..k).filter(|&i| m & (1 << i) != 0).collect())
}

struct Candidates {
    best: BTreeMap<ClassKey, (Relation, MppFormula)>,
    memo: HashMap<ClassKey, ClassKey>,
}

impl Candidates {
    fn offer(&mut self, rel: Relation, formula: MppFormula, budget: &ClosureBudget, known: &BTreeSet<ClassKey>) {
        if rel.is_empty() || rel.arity() == 0 || rel.arity() > budget.max_free_arity || rel.len() > budget.max_size {
            return;
        }
        if formula.atoms.len() > budget.max_atoms || formula.blocks.len() > budget.max_blocks {
            return;
        }
        let exact = (rel.sorts.clone(), rel.tuples().to_vec());
        let key = self.memo.entry(exact).or_insert_with(|| class_key(&rel)).clone();
        if known.contains(&key) {
            return;
        }
        match self.best.get(&key) {
            Some((_, f)) if f.canonical_key() <= formula.canonical_key() => {}
            _ => {
                self.best.insert(key, (rel, formula));
            }
        }
    }
}

/// Bounded saturation of `H`'s relations and equalities under
/// identification of coordinates, conjunction and modular projection.
/// Relations are kept up to coordinate permutation, each with the least
/// formula (fewest atoms, then blocks, then text) found in the round where
/// it first appeared.
pub fn closure_search(h: &Structure, p: u64, budget: &ClosureBudget) -> Result<ClosureResult> {
    closure_search_with(h, p, budget, |_| ControlFlow::Continue(()))
}

/// [`closure_search`] with a callback after each round; `Break` stops the
/// search (status `Stopped`).
pub fn closure_search_with(
    h: &Structure,
    p: u64,
    budget: &ClosureBudget,
    on_round: impl FnMut(&[DefinedRelation]) -> ControlFlow<()>,
) -> Result<ClosureResult> {
    closure_search_ordered(h, p, budget, on_round, |_| {})
}

/// Core of the closure search; `reorder` may permute the work list of each
/// round (used to check that the result does not depend on the order).
pub(crate) fn closure_search_ordered(
    h: &Structure,
    p: u64,
    budget: &ClosureBudget,
    mut on_round: impl FnMut(&[DefinedRelation]) -> ControlFlow<()>,
    mut reorder: impl FnMut(&mut Vec<(usize, usize)>),
) -> Result<ClosureResult> {
    check_prime(p)?;
    budget.validate()?;
    let digest = structure_digest(h);
    let mut known: BTreeSet<ClassKey> = BTreeSet::new();
    let mut all: Vec<DefinedRelation> = Vec::new();
    let mut reasons: BTreeSet<String> = BTreeSet::new();

    // Seeds: every relation and one equality per sort, whatever their arity.
    let mut seeds = Candidates { best: BTreeMap::new(), memo: HashMap::new() };
    let seed_budget = ClosureBudget { max_free_arity: usize::MAX, max_size: usize::MAX, ..budget.clone() };
    for ri in 0..h.relations.len() {
        seeds.offer(h.relations[ri].clone(), MppFormula::atom(h, ri), &seed_budget, &known);
    }
    for s in 0..h.sorts.len() {
        let eq = Relation::new("EQ", vec![s, s], (0..h.sorts[s].len()).map(|e| vec![e, e]).collect());
        seeds.offer(eq, MppFormula::equality(s), &seed_budget, &known);
    }
    let mut fresh = admit(seeds, &mut known, &mut all, &digest, budget, &mut reasons);
    let mut rounds = 0;
    let mut status = None;
    if on_round(&all).is_break() {
        status = Some(ClosureStatus::Stopped);
    }
    while status.is_none() && !fresh.is_empty() {
        if rounds == budget.max_rounds {
            reasons.insert(format!("round limit {} reached", budget.max_rounds));
            break;
        }
        rounds += 1;
        let mut cand = Candidates { best: BTreeMap::new(), memo: HashMap::new() };
        for &i in &fresh {
            let d = &all[i];
            let k = d.relation.arity();
            for a in 0..k {
                for b in a + 1..k {
                    if d.relation.sorts[a] == d.relation.sorts[b] {
                        let (r, f) = identify(d, a, b);
                        cand.offer(r, f, budget, &known);
                    }
                }
            }
            if d.formula.blocks.len() < budget.max_blocks {
                for q in subsets(k).filter(|q| q.len() < k) {
                    let (r, f) = project(&d.relation, &d.formula, &q, p);
                    cand.offer(r, f, budget, &known);
                }
            }
        }
        let fresh_set: BTreeSet<usize> = fresh.iter().copied().collect();
        let mut pairs: Vec<(usize, usize)> = Vec::new();
        for &i in &fresh {
            for j in 0..all.len() {
                if fresh_set.contains(&j) && j < i {
                    continue;
                }
                pairs.push((i, j));
            }
        }
        reorder(&mut pairs);
        // Joins are collected first, one per class with its least formula,
        // so every class is projected once whatever the pair order.
        let mut joins = Candidates { best: BTreeMap::new(), memo: HashMap::new() };
        let join_budget = ClosureBudget { max_free_arity: budget.max_free_arity + 1, max_atoms: budget.max_atoms, ..budget.clone() };
        for (i, j) in pairs {
            let (x, y) = (&all[i], &all[j]);
            if x.formula.atoms.len() + y.formula.atoms.len() > budget.max_atoms {
                continue;
            }
            let (kx, ky) = (x.relation.arity(), y.relation.arity());
            let min = (kx + ky).saturating_sub(budget.max_free_arity + 1).max(usize::from(kx + ky > budget.max_free_arity));
            for m in matchings(&x.relation.sorts, &y.relation.sorts, min) {
                match conjoin(x, y, &m, budget.max_size) {
                    Some((r, f)) => joins.offer(r, f, &join_budget, &known),
                    None => {
                        reasons.insert(format!("join larger than {} tuples skipped", budget.max_size));
                    }
                }
            }
        }
        for (r, f) in joins.best.into_values() {
            let k = r.arity();
            if k <= budget.max_free_arity {
                cand.offer(r.clone(), f.clone(), budget, &known);
            }
            if f.blocks.len() < budget.max_blocks {
                for q in subsets(k).filter(|q| q.len() < k && k - q.len() <= budget.max_free_arity) {
                    let (r2, f2) = project(&r, &f, &q, p);
                    cand.offer(r2, f2, budget, &known);
                }
            }
        }
        fresh = admit(cand, &mut known, &mut all, &digest, budget, &mut reasons);
        if on_round(&all).is_break() {
            status = Some(ClosureStatus::Stopped);
        }
    }
    let status = status.unwrap_or(if reasons.is_empty() {
        ClosureStatus::Fixpoint
    } else {
        ClosureStatus::BudgetExhausted { reasons: reasons.into_iter().collect() }
    });
    Ok(ClosureResult { relations: all, status, rounds })
}

/// Adds a round's candidates in class-key order, up to the relation limit;
/// returns the indices of the admitted relations.
fn admit(
    cand: Candidates,
    known: &mut BTreeSet<ClassKey>,
    all: &mut Vec<DefinedRelation>,
    digest: &str,
    budget: &ClosureBudget,
    reasons: &mut BTreeSet<String>,
) -> Vec<usize> {
    let mut fresh = Vec::new();
    for (key, (rel, formula)) in cand.best {
        if all.len() >= budget.max_relations {
            reasons.insert(format!("relation limit {} reached", budget.max_relations));
            break;
        }
        known.insert(key);
        fresh.push(all.len());
        all.push(DefinedRelation { relation: rel.renamed(format!("D{}", all.len())), formula, structure_digest: digest.to_string() });
    }
    fresh
}

/// Verdict on p-conservativity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Conservativity {
    CertifiedYes,
    Unknown,
}

/// A p-subalgebra with its definition.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Subalgebra {
    pub sort: usize,
    pub elements: Vec<usize>,
    pub definition: DefinedRelation,
}

/// Unary relations found by the closure search, per sort, ordered by sort,
/// size and content.
pub fn p_subalgebras(h: &Structure, p: u64, budget: &ClosureBudget) -> Result<Vec<Subalgebra>> {
    let unary_budget = ClosureBudget { max_free_arity: budget.max_free_arity.max(1), ..budget.clone() };
    let res = closure_search(h, p, &unary_budget)?;
    Ok(subalgebras_of(&res.relations))
}

pub fn subalgebras_of(defs: &[DefinedRelation]) -> Vec<Subalgebra> {
    let mut out: Vec<Subalgebra> = defs
        .iter()
        .filter(|d| d.relation.arity() == 1)
        .map(|d| Subalgebra {
            sort: d.relation.sorts[0],
            elements: d.relation.tuples().iter().map(|t| t[0]).collect(),
            definition: d.clone(),
        })
        .collect();
    out.sort_by(|a, b| (a.sort, a.elements.len(), &a.elements).cmp(&(b.sort, b.elements.len(), &b.elements)));
    out
}

/// Certified when every nonempty subset of every sort is found.
pub fn is_p_conservative(h: &Structure, p: u64, budget: &ClosureBudget) -> Result<Conservativity> {
    let subs = p_subalgebras(h, p, budget)?;
    Ok(conservativity_of(h, &subs))
}

pub fn conservativity_of(h: &Structure, subs: &[Subalgebra]) -> Conservativity {
    let found: BTreeSet<(usize, &Vec<usize>)> = subs.iter().map(|s| (s.sort, &s.elements)).collect();
    let complete = h.sorts.iter().enumerate().all(|(s, sort)| {
        let n = sort.len();
        (1u64..(1u64 << n)).all(|m| {
            let set: Vec<usize> = (0..n).filter(|&i| m & (1 << i) != 0).collect();
            found.contains(&(s, &set))
        })
    });
    if complete {
        Conservativity::CertifiedYes
    } else {
        Conservativity::Unknown
    }
}

/// A ternary polymorphism and the first closure relation it fails to
/// preserve, with a violating triple of tuples.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Kill {
    pub op: OperationTable,
    /// Index into the killer list, `None` when the operation survived.
    pub killer: Option<usize>,
    pub violation: Option<Vec<Vec<usize>>>,
}

/// `H^{†p}`: `H` plus one killing relation for each ternary polymorphism
/// of `H` that fails to preserve some relation of the bounded closure.
#[derive(Clone, Debug)]
pub struct HDagger {
    pub expansion: Structure,
    pub killers: Vec<DefinedRelation>,
    pub kills: Vec<Kill>,
    pub closure_status: ClosureStatus,
}

impl HDagger {
    pub fn survivors(&self) -> Vec<&OperationTable> {
        self.kills.iter().filter(|k| k.killer.is_none()).map(|k| &k.op).collect()
    }

    pub fn to_json(&self, h: &Structure) -> Value {
        json!({
            "expansion": self.expansion.to_json(),
            "killers": self.killers.iter().map(|d| d.to_json(h)).collect::<Vec<_>>(),
            "kills": self.kills.iter().map(|k| json!({
                "operation": k.op.to_json(h),
                "killer": k.killer.map(|i| self.killers[i].relation.name.clone()),
                "violation": k.violation,
            })).collect::<Vec<_>>(),
            "closure": self.closure_status,
        })
    }
}

/// Picks killers from a closure: the first relation (closure order) each
/// operation fails to preserve.
fn assign_killers(ops: &[OperationTable], defs: &[DefinedRelation]) -> (Vec<DefinedRelation>, Vec<Kill>) {
    let mut killers: Vec<DefinedRelation> = Vec::new();
    let mut index_of: BTreeMap<usize, usize> = BTreeMap::new();
    let mut kills = Vec::new();
    for f in ops {
        let mut kill = Kill { op: f.clone(), killer: None, violation: None };
        for (di, d) in defs.iter().enumerate() {
            if let Some(v) = relation_violation(f, &d.relation) {
                let k = *index_of.entry(di).or_insert_with(|| {
                    let mut d = d.clone();
                    d.relation = d.relation.renamed(format!("Q{}", killers.len()));
                    killers.push(d);
                    killers.len() - 1
                });
                kill.killer = Some(k);
                kill.violation = Some(v);
                break;
            }
        }
        kills.push(kill);
    }
    (killers, kills)
}

/// Builds `H^{†p}` within the budget.
pub fn build_h_dagger(h: &Structure, p: u64, budget: &ClosureBudget) -> Result<HDagger> {
    let ops = enumerate_polymorphisms(h, 3, DEFAULT_POLY_LIMIT)?;
    let closure = closure_search(h, p, budget)?;
    let (killers, kills) = assign_killers(&ops, &closure.relations);
    let expansion = expand(h, killers.iter().map(|d| d.relation.clone()).collect())?;
    Ok(HDagger { expansion, killers, kills, closure_status: closure.status })
}

/// A relation no Mal'tsev operation preserves: every Mal'tsev operation
/// maps `triple` coordinatewise to `image`, which is missing.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UniformKill {
    pub killer: usize,
    pub triple: Vec<Vec<usize>>,
    pub image: Vec<usize>,
}

/// For a non-rectangular relation, three tuples that every Mal'tsev
/// operation sends to a tuple outside the relation.
pub fn maltsev_violation_triple(r: &Relation) -> Option<(Vec<Vec<usize>>, Vec<usize>)> {
    if r.arity() < 2 {
        return None;
    }
    let v = is_rectangular(r).ok()??;
    let rest: Vec<usize> = (0..r.arity()).filter(|i| !v.prefix.contains(i)).collect();
    let glue = |x: &[usize], y: &[usize]| {
        let mut t = vec![0; r.arity()];
        for (&i, &e) in v.prefix.iter().zip(x) {
            t[i] = e;
        }
        for (&i, &e) in rest.iter().zip(y) {
            t[i] = e;
        }
        t
    };
    // m(b,a,a) = b on the split's prefix and m(c,c,d) = d on the rest.
    Some((vec![glue(&v.b, &v.c), glue(&v.a, &v.c), glue(&v.a, &v.d)], glue(&v.b, &v.d)))
}

/// Mal'tsev verdict for the (approximated) closure.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum MaltsevVerdict {
    /// `H` itself has no Mal'tsev polymorphism.
    NoMaltsevForHItself,
    /// No Mal'tsev polymorphism of `H` preserves every killer. Either one
    /// killer is not rectangular (`uniform`), or each enumerated candidate
    /// has its own violated killer (`kills`).
    NoMaltsevCertified { killers: Vec<DefinedRelation>, kills: Vec<Kill>, uniform: Option<UniformKill> },
    /// Some Mal'tsev polymorphisms preserve every relation found within the
    /// budget. `listed` is false when the candidates were too many to
    /// enumerate and `survivors` holds a single representative.
    MaltsevUpToBudget { survivors: Vec<OperationTable>, listed: bool, budget: ClosureBudget, status: ClosureStatus },
}

impl MaltsevVerdict {
    pub fn has_no_maltsev(&self) -> bool {
        !matches!(self, MaltsevVerdict::MaltsevUpToBudget { .. })
    }

    /// The killing relations (empty unless certified).
    pub fn killers(&self) -> &[DefinedRelation] {
        match self {
            MaltsevVerdict::NoMaltsevCertified { killers, .. } => killers,
            _ => &[],
        }
    }

    pub fn to_json(&self, h: &Structure) -> Value {
        let names = |t: &[Vec<usize>], r: &Relation| t.iter().map(|x| h.tuple_names(&r.sorts, x)).collect::<Vec<_>>();
        match self {
            MaltsevVerdict::NoMaltsevForHItself => json!({"verdict": "no_maltsev_for_h_itself"}),
            MaltsevVerdict::NoMaltsevCertified { killers, kills, uniform } => json!({
                "verdict": "no_maltsev_certified",
                "killers": killers.iter().map(|d| d.to_json(h)).collect::<Vec<_>>(),
                "uniform": uniform.as_ref().map(|u| {
                    let r = &killers[u.killer].relation;
                    json!({
                        "killer": r.name,
                        "triple": names(&u.triple, r),
                        "image": h.tuple_names(&r.sorts, &u.image),
                    })
                }),
                "kills": kills.iter().map(|k| json!({
                    "operation": k.op.to_json(h),
                    "killer": k.killer.map(|i| killers[i].relation.name.clone()),
                    "violation": k.violation.as_ref().zip(k.killer).map(|(v, i)| names(v, &killers[i].relation)),
                })).collect::<Vec<_>>(),
            }),
            MaltsevVerdict::MaltsevUpToBudget { survivors, listed, budget, status } => json!({
                "verdict": "maltsev_up_to_budget",
                "survivors": survivors.iter().map(|m| m.to_json(h)).collect::<Vec<_>>(),
                "survivors_listed": listed,
                "budget": budget,
                "closure": status,
            }),
        }
    }
}

/// Cap on the Mal'tsev candidates enumerated from `Pol₃(H)`.
pub const MALTSEV_CANDIDATE_LIMIT: usize = 100_000;

/// Interleaves closure generation with elimination of Mal'tsev candidates.
/// A non-rectangular relation in the closure kills every candidate at once;
/// otherwise enumerated candidates are discarded one by one.
pub fn maltsev_for_closure(h: &Structure, p: u64, budget: &ClosureBudget) -> Result<MaltsevVerdict> {
    check_prime(p)?;
    let candidates = match maltsev_polymorphisms(h, MALTSEV_CANDIDATE_LIMIT) {
        Ok(c) => Some(c),
        Err(Error::Guard { .. }) => None,
        Err(e) => return Err(e),
    };
    let representative = match &candidates {
        Some(c) => c.first().cloned(),
        None => has_maltsev(h)?,
    };
    if representative.is_none() {
        return Ok(MaltsevVerdict::NoMaltsevForHItself);
    }
    let mut alive: Vec<usize> = (0..candidates.as_ref().map_or(0, Vec::len)).collect();
    let mut checked = 0;
    let mut uniform: Option<(usize, Vec<Vec<usize>>, Vec<usize>)> = None;
    let res = closure_search_with(h, p, budget, |defs| {
        for (i, d) in defs.iter().enumerate().skip(checked) {
            if let Some((triple, image)) = maltsev_violation_triple(&d.relation) {
                uniform = Some((i, triple, image));
                return ControlFlow::Break(());
            }
        }
        let new = &defs[checked..];
        checked = defs.len();
        if let Some(c) = &candidates {
            alive.retain(|&m| new.iter().all(|d| relation_violation(&c[m], &d.relation).is_none()));
            if alive.is_empty() {
                return ControlFlow::Break(());
            }
        }
        ControlFlow::Continue(())
    })?;
    if let Some((i, triple, image)) = uniform {
        let mut d = res.relations[i].clone();
        d.relation = d.relation.renamed("Q0");
        return Ok(MaltsevVerdict::NoMaltsevCertified {
            killers: vec![d],
            kills: Vec::new(),
            uniform: Some(UniformKill { killer: 0, triple, image }),
        });
    }
    match candidates {
        Some(c) => {
            let (killers, kills) = assign_killers(&c, &res.relations);
            if kills.iter().all(|k| k.killer.is_some()) {
                Ok(MaltsevVerdict::NoMaltsevCertified { killers, kills, uniform: None })
            } else {
                Ok(MaltsevVerdict::MaltsevUpToBudget {
                    survivors: kills.into_iter().filter(|k| k.killer.is_none()).map(|k| k.op).collect(),
                    listed: true,
                    budget: budget.clone(),
                    status: res.status,
                })
            }
        }
        None => Ok(MaltsevVerdict::MaltsevUpToBudget {
            survivors: representative.into_iter().collect(),
            listed: false,
            budget: budget.clone(),
            status: res.status,
        }),
    }
}

/// Replays a certified verdict: every killer re-evaluates, a uniform kill
/// is a genuine rectangularity failure, and every listed candidate
/// violates its killer on the stored triple.
pub fn verify_maltsev_certificate(v: &MaltsevVerdict, h: &Structure, p: u64) -> Result<bool> {
    let MaltsevVerdict::NoMaltsevCertified { killers, kills, uniform } = v else {
        return Ok(false);
    };
    for d in killers {
        if !d.check(h, p)? {
            return Ok(false);
        }
    }
    if let Some(u) = uniform {
        let Some(d) = killers.get(u.killer) else { return Ok(false) };
        let r = &d.relation;
        if u.triple.len() != 3 || !u.triple.iter().all(|t| r.contains(t)) || r.contains(&u.image) {
            return Ok(false);
        }
        // The image is forced by the Mal'tsev identities coordinatewise.
        for i in 0..r.arity() {
            let (x, y, z) = (u.triple[0][i], u.triple[1][i], u.triple[2][i]);
            let forced = if y == z {
                x
            } else if x == y {
                z
            } else {
                return Ok(false);
            };
            if forced != u.image[i] {
                return Ok(false);
            }
        }
        return Ok(true);
    }
    if kills.is_empty() {
        return Ok(false);
    }
    let all = maltsev_polymorphisms(h, MALTSEV_CANDIDATE_LIMIT)?;
    if all.len() != kills.len() {
        return Ok(false);
    }
    for (m, k) in all.iter().zip(kills) {
        if &k.op != m {
            return Ok(false);
        }
        let (Some(i), Some(rows)) = (k.killer, &k.violation) else { return Ok(false) };
        let Some(d) = killers.get(i) else { return Ok(false) };
        if rows.len() != 3 || !rows.iter().all(|t| d.relation.contains(t)) {
            return Ok(false);
        }
        let image: Vec<usize> =
            (0..d.relation.arity()).map(|c| m.apply(d.relation.sorts[c], &[rows[0][c], rows[1][c], rows[2][c]])).collect();
        if d.relation.contains(&image) {
            return Ok(false);
        }
    }
    Ok(true)
}
