//! Polymorphism machinery: operation tables, indicator problems and the
//! indicator predicate Υ₃, Mal'tsev and rectangularity tests, term
//! evaluation, automorphic polynomials and the minority construction.

pub mod tables;

use std::collections::BTreeMap;
use std::fmt;
use std::ops::ControlFlow;

use serde_json::{json, Value};

use crate::error::{check_prime, guard, invalid, Error, Result};
use crate::solver::{Csp, MAX_DOMAIN};
use crate::structures::{digits, power, Constraint, CspInstance, MultiSortedMap, Relation, Structure, Variable};

/// Default cap on the number of polymorphisms materialized by enumeration.
pub const DEFAULT_POLY_LIMIT: usize = 1_000_000;

/// A multi-sorted operation of fixed arity, one lookup table per sort.
/// Arguments `(x₁,…,x_r)` are addressed by the mixed-radix index
/// `Σ x_i n^{r-i}`, which coincides with the element order of `Hʳ`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct OperationTable {
    pub arity: usize,
    pub sizes: Vec<usize>,
    pub tables: Vec<Vec<usize>>,
}

pub(crate) fn tuple_index(n: usize, args: &[usize]) -> usize {
    args.iter().fold(0, |acc, &x| acc * n + x)
}

impl OperationTable {
    pub fn new(arity: usize, sizes: Vec<usize>, tables: Vec<Vec<usize>>) -> Result<Self> {
        if arity == 0 {
            return Err(invalid("operations must have positive arity"));
        }
        if tables.len() != sizes.len() {
            return Err(invalid("one table per sort is required"));
        }
        for (s, (t, &n)) in tables.iter().zip(&sizes).enumerate() {
            if t.len() != n.pow(arity as u32) {
                return Err(invalid(format!("table of sort #{s} has {} entries, expected {}", t.len(), n.pow(arity as u32))));
            }
            if t.iter().any(|&v| v >= n) {
                return Err(invalid(format!("table of sort #{s} has a value outside the sort")));
            }
        }
        Ok(OperationTable { arity, sizes, tables })
    }

    pub fn from_fn(sizes: &[usize], arity: usize, f: impl Fn(usize, &[usize]) -> usize) -> Self {
        let tables =
            sizes.iter().enumerate().map(|(s, &n)| (0..n.pow(arity as u32)).map(|i| f(s, &digits(i, n, arity))).collect()).collect();
        OperationTable { arity, sizes: sizes.to_vec(), tables }
    }

    /// The `k`-th projection (0-based).
    pub fn projection(sizes: &[usize], arity: usize, k: usize) -> Self {
        OperationTable::from_fn(sizes, arity, |_, a| a[k])
    }

    pub fn apply(&self, sort: usize, args: &[usize]) -> usize {
        self.tables[sort][tuple_index(self.sizes[sort], args)]
    }

    pub fn is_projection(&self) -> Option<usize> {
        (0..self.arity).find(|&k| *self == OperationTable::projection(&self.sizes, self.arity, k))
    }

    pub fn to_json(&self, h: &Structure) -> Value {
        let mut sorts = serde_json::Map::new();
        for (s, t) in self.tables.iter().enumerate() {
            let n = self.sizes[s];
            let mut m = serde_json::Map::new();
            for (i, &v) in t.iter().enumerate() {
                let key = digits(i, n, self.arity).iter().map(|&e| h.sorts[s].elements[e].as_str()).collect::<Vec<_>>().join(",");
                m.insert(key, Value::String(h.sorts[s].elements[v].clone()));
            }
            sorts.insert(h.sorts[s].name.clone(), Value::Object(m));
        }
        json!({"arity": self.arity, "tables": sorts})
    }

    /// Reads the format written by [`OperationTable::to_json`].
    pub fn from_json(v: &Value, h: &Structure) -> Result<Self> {
        let arity = v.get("arity").and_then(Value::as_u64).ok_or_else(|| invalid("operation file needs an integer `arity`"))? as usize;
        let tabs = v.get("tables").and_then(Value::as_object).ok_or_else(|| invalid("operation file needs a `tables` object"))?;
        let sizes = h.sizes();
        let mut tables = Vec::new();
        for (s, sort) in h.sorts.iter().enumerate() {
            let n = sizes[s];
            let entries = tabs
                .get(&sort.name)
                .and_then(Value::as_object)
                .ok_or_else(|| Error::Unknown { kind: "sort table", name: sort.name.clone() })?;
            let mut t = vec![usize::MAX; n.pow(arity as u32)];
            for (key, val) in entries {
                let args = key
                    .split(',')
                    .map(|e| sort.index_of(e.trim()).ok_or_else(|| Error::Unknown { kind: "element", name: e.to_string() }))
                    .collect::<Result<Vec<_>>>()?;
                if args.len() != arity {
                    return Err(Error::Arity(format!("entry `{key}` has {} arguments, expected {arity}", args.len())));
                }
                let name = match val {
                    Value::String(x) => x.clone(),
                    other => other.to_string(),
                };
                t[tuple_index(n, &args)] = sort.index_of(&name).ok_or(Error::Unknown { kind: "element", name })?;
            }
            if let Some(i) = t.iter().position(|&x| x == usize::MAX) {
                return Err(invalid(format!("operation is not total on sort `{}` (entry #{i} missing)", sort.name)));
            }
            tables.push(t);
        }
        OperationTable::new(arity, sizes, tables)
    }
}

/// Name of the indicator variable of an argument tuple.
fn indicator_var_name(h: &Structure, sort: usize, args: &[usize]) -> String {
    let els = &h.sorts[sort].elements;
    let compact = els.iter().all(|e| e.chars().count() == 1);
    let body = if compact {
        args.iter().map(|&a| els[a].as_str()).collect::<String>()
    } else {
        args.iter().map(|&a| els[a].as_str()).collect::<Vec<_>>().join(",")
    };
    if h.sorts.len() == 1 {
        format!("x{body}")
    } else {
        format!("x[{}]{body}", h.sorts[sort].name)
    }
}

/// Offsets of each sort's block of variables in an indicator instance.
pub fn indicator_offsets(h: &Structure, arity: usize) -> Vec<usize> {
    let mut off = Vec::with_capacity(h.sorts.len());
    let mut acc = 0;
    for s in &h.sorts {
        off.push(acc);
        acc += s.len().pow(arity as u32);
    }
    off
}

/// Indicator variable of the argument tuple `args` of sort `sort`.
pub fn indicator_var(h: &Structure, arity: usize, sort: usize, args: &[usize]) -> usize {
    indicator_offsets(h, arity)[sort] + tuple_index(h.sorts[sort].len(), args)
}

/// The indicator problem of the given arity: its solutions are exactly the
/// polymorphisms of that arity. Constraints are listed relation by relation
/// and, within a relation, in lexicographic order of the chosen tuples.
pub fn indicator_instance_arity(h: &Structure, arity: usize) -> CspInstance {
    let mut variables = Vec::new();
    for (s, sort) in h.sorts.iter().enumerate() {
        for i in 0..sort.len().pow(arity as u32) {
            variables.push(Variable { name: indicator_var_name(h, s, &digits(i, sort.len(), arity)), sort: s });
        }
    }
    let off = indicator_offsets(h, arity);
    let mut constraints = Vec::new();
    for (ri, r) in h.relations.iter().enumerate() {
        let m = r.len();
        for choice in 0..m.pow(arity as u32) {
            let picks = digits(choice, m, arity);
            let scope = (0..r.arity())
                .map(|q| {
                    let s = r.sorts[q];
                    let args: Vec<usize> = picks.iter().map(|&t| r.tuples()[t][q]).collect();
                    off[s] + tuple_index(h.sorts[s].len(), &args)
                })
                .collect();
            constraints.push(Constraint { relation: ri, scope });
        }
    }
    CspInstance::new(variables, constraints)
}

/// The ternary indicator problem `I₃(H)`.
pub fn indicator_instance(h: &Structure) -> CspInstance {
    indicator_instance_arity(h, 3)
}

fn check_domain_sizes(h: &Structure) -> Result<()> {
    match h.sorts.iter().find(|s| s.len() > MAX_DOMAIN) {
        Some(s) => Err(invalid(format!("sort `{}` is too large for polymorphism search", s.name))),
        None => Ok(()),
    }
}

fn solution_to_op(h: &Structure, arity: usize, sol: &[usize]) -> OperationTable {
    let off = indicator_offsets(h, arity);
    let sizes = h.sizes();
    let tables = sizes.iter().enumerate().map(|(s, &n)| sol[off[s]..off[s] + n.pow(arity as u32)].to_vec()).collect();
    OperationTable { arity, sizes, tables }
}

/// A pinned value of a polymorphism: `f_sort(args) = value`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OpPin {
    pub sort: usize,
    pub args: Vec<usize>,
    pub value: usize,
}

/// Visits the polymorphisms of the given arity that satisfy the pins, in
/// lexicographic order of their tables (sort-major).
pub fn for_each_polymorphism<F: FnMut(&OperationTable) -> ControlFlow<()>>(
    h: &Structure,
    arity: usize,
    pins: &[OpPin],
    mut visit: F,
) -> Result<()> {
    if !(1..=3).contains(&arity) {
        return Err(invalid(format!("arity {arity} is not supported (1..=3)")));
    }
    check_domain_sizes(h)?;
    let inst = indicator_instance_arity(h, arity);
    let vpins = pins
        .iter()
        .map(|p| {
            if p.args.len() != arity || p.sort >= h.sorts.len() || p.value >= h.sorts[p.sort].len() {
                return Err(invalid("malformed operation pin"));
            }
            Ok((indicator_var(h, arity, p.sort, &p.args), p.value))
        })
        .collect::<Result<Vec<_>>>()?;
    let csp = Csp::from_instance(&inst, h, &vpins)?;
    csp.for_each(|sol| visit(&solution_to_op(h, arity, sol)));
    Ok(())
}

/// All polymorphisms of arity 1–3 satisfying the pins, failing past `limit`.
pub fn polymorphisms_pinned(h: &Structure, arity: usize, pins: &[OpPin], limit: usize) -> Result<Vec<OperationTable>> {
    let mut out = Vec::new();
    let mut over = false;
    for_each_polymorphism(h, arity, pins, |f| {
        if out.len() == limit {
            over = true;
            return ControlFlow::Break(());
        }
        out.push(f.clone());
        ControlFlow::Continue(())
    })?;
    if over {
        guard("number of polymorphisms", limit as u128 + 1, limit as u128)?;
    }
    Ok(out)
}

/// All polymorphisms of the given arity (1–3).
pub fn enumerate_polymorphisms(h: &Structure, arity: usize, limit: usize) -> Result<Vec<OperationTable>> {
    polymorphisms_pinned(h, arity, &[], limit)
}

/// Number of polymorphisms of the given arity, without materializing them.
pub fn count_polymorphisms(h: &Structure, arity: usize) -> Result<u128> {
    check_domain_sizes(h)?;
    let inst = indicator_instance_arity(h, arity);
    Ok(Csp::from_instance(&inst, h, &[])?.count())
}

/// First relation tuple combination that `f` maps outside its relation.
pub fn polymorphism_violation(f: &OperationTable, h: &Structure) -> Option<(usize, Vec<Vec<usize>>)> {
    for (ri, r) in h.relations.iter().enumerate() {
        if let Some(rows) = relation_violation(f, r) {
            return Some((ri, rows));
        }
    }
    None
}

/// First choice of `arity` tuples of `r` whose coordinate-wise image under
/// `f` is not in `r`.
pub fn relation_violation(f: &OperationTable, r: &Relation) -> Option<Vec<Vec<usize>>> {
    let m = r.len();
    let mut img = vec![0; r.arity()];
    let mut args = vec![0; f.arity];
    for choice in 0..m.pow(f.arity as u32) {
        let picks = digits(choice, m, f.arity);
        for q in 0..r.arity() {
            for (k, &t) in picks.iter().enumerate() {
                args[k] = r.tuples()[t][q];
            }
            img[q] = f.apply(r.sorts[q], &args);
        }
        if !r.contains(&img) {
            return Some(picks.iter().map(|&t| r.tuples()[t].clone()).collect());
        }
    }
    None
}

pub fn preserves(f: &OperationTable, r: &Relation) -> bool {
    relation_violation(f, r).is_none()
}

pub fn is_polymorphism(f: &OperationTable, h: &Structure) -> bool {
    f.sizes == h.sizes() && polymorphism_violation(f, h).is_none()
}

/// A coordinate of `H^{(3)}`: a sort and a triple over it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Coord {
    pub sort: usize,
    pub triple: [usize; 3],
}

impl Coord {
    /// Index of the indicator variable for this triple.
    pub fn var(&self, h: &Structure) -> usize {
        indicator_var(h, 3, self.sort, &self.triple)
    }

    pub fn label(&self, h: &Structure) -> String {
        indicator_var_name(h, self.sort, &self.triple)
    }
}

/// `I_H`, `J_H` and the tuples `a_H, b_H` (read off `I_H`) and `c_H, d_H`
/// (read off `J_H`).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IndicatorCoordinates {
    pub i: Vec<Coord>,
    pub j: Vec<Coord>,
    pub a: Vec<usize>,
    pub b: Vec<usize>,
    pub c: Vec<usize>,
    pub d: Vec<usize>,
}

/// Canonical `I_H = {(a,b,b)}` (diagonal included) and
/// `J_H = {(b,b,a) | a ≠ b}`, both in lexicographic triple order, sort-major.
pub fn indicator_coordinates(h: &Structure) -> IndicatorCoordinates {
    let mut i = Vec::new();
    let mut j = Vec::new();
    for (s, sort) in h.sorts.iter().enumerate() {
        let n = sort.len();
        for a in 0..n {
            for b in 0..n {
                i.push(Coord { sort: s, triple: [a, b, b] });
            }
        }
        for b in 0..n {
            for a in 0..n {
                if a != b {
                    j.push(Coord { sort: s, triple: [b, b, a] });
                }
            }
        }
    }
    let a = i.iter().map(|c| c.triple[0]).collect();
    let b = i.iter().map(|c| c.triple[1]).collect();
    let c = j.iter().map(|c| c.triple[0]).collect();
    let d = j.iter().map(|c| c.triple[2]).collect();
    IndicatorCoordinates { i, j, a, b, c, d }
}

/// `E_H`: triples outside `I_H ∪ J_H`, canonical order.
pub fn e_coordinates(h: &Structure) -> Vec<Coord> {
    let mut out = Vec::new();
    for (s, sort) in h.sorts.iter().enumerate() {
        let n = sort.len();
        for idx in 0..n * n * n {
            let t = digits(idx, n, 3);
            let in_i = t[1] == t[2];
            let in_j = t[0] == t[1] && t[1] != t[2];
            if !in_i && !in_j {
                out.push(Coord { sort: s, triple: [t[0], t[1], t[2]] });
            }
        }
    }
    out
}

/// Pins forcing `m(x,y,y) = m(y,y,x) = x`.
pub fn maltsev_pins(h: &Structure) -> Vec<OpPin> {
    let ic = indicator_coordinates(h);
    let mut pins: Vec<OpPin> = ic.i.iter().map(|c| OpPin { sort: c.sort, args: c.triple.to_vec(), value: c.triple[0] }).collect();
    pins.extend(ic.j.iter().map(|c| OpPin { sort: c.sort, args: c.triple.to_vec(), value: c.triple[2] }));
    pins
}

pub fn is_maltsev(m: &OperationTable) -> bool {
    m.arity == 3
        && m.sizes
            .iter()
            .enumerate()
            .all(|(s, &n)| (0..n).all(|x| (0..n).all(|y| m.apply(s, &[x, y, y]) == x && m.apply(s, &[y, y, x]) == x)))
}

/// The lexicographically first Mal'tsev polymorphism, if any.
pub fn has_maltsev(h: &Structure) -> Result<Option<OperationTable>> {
    let mut found = None;
    for_each_polymorphism(h, 3, &maltsev_pins(h), |m| {
        found = Some(m.clone());
        ControlFlow::Break(())
    })?;
    if let Some(m) = &found {
        debug_assert!(is_maltsev(m) && is_polymorphism(m, h));
    }
    Ok(found)
}

/// All Mal'tsev polymorphisms, lexicographic order.
pub fn maltsev_polymorphisms(h: &Structure, limit: usize) -> Result<Vec<OperationTable>> {
    polymorphisms_pinned(h, 3, &maltsev_pins(h), limit)
}

/// The membership test `(a_H, d_H) ∈ pr_{I_H ∪ J_H} Υ₃(H)`, computed by
/// materializing Υ₃(H) and projecting it.
pub fn maltsev_by_membership(h: &Structure, limit: usize) -> Result<bool> {
    let ic = indicator_coordinates(h);
    let coords: Vec<usize> = ic.i.iter().chain(&ic.j).map(|c| c.var(h)).collect();
    let target: Vec<usize> = ic.a.iter().chain(&ic.d).copied().collect();
    let inst = indicator_instance(h);
    let csp = Csp::from_instance(&inst, h, &[])?;
    let sols = csp.solutions(limit)?;
    Ok(sols.iter().any(|s| coords.iter().zip(&target).all(|(&v, &x)| s[v] == x)))
}

/// A rectangularity failure: `(a,c), (a,d), (b,c) ∈ R` but `(b,d) ∉ R`
/// for the coordinate split `prefix | rest`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RectViolation {
    pub prefix: Vec<usize>,
    pub a: Vec<usize>,
    pub b: Vec<usize>,
    pub c: Vec<usize>,
    pub d: Vec<usize>,
}

/// Checks every proper nonempty coordinate split in increasing bitmask
/// order and returns the first violation (lexicographically least within
/// the split).
pub fn is_rectangular(r: &Relation) -> Result<Option<RectViolation>> {
    let n = r.arity();
    if n < 2 {
        return Err(Error::Arity("rectangularity needs arity at least 2".into()));
    }
    guard("relation arity for split enumeration", n as u128, 20)?;
    for mask in 1u32..(1u32 << n) - 1 {
        let prefix: Vec<usize> = (0..n).filter(|&i| mask & (1 << i) != 0).collect();
        let rest: Vec<usize> = (0..n).filter(|&i| mask & (1 << i) == 0).collect();
        let mut ext: BTreeMap<Vec<usize>, std::collections::BTreeSet<Vec<usize>>> = BTreeMap::new();
        for t in r.tuples() {
            let a: Vec<usize> = prefix.iter().map(|&i| t[i]).collect();
            let c: Vec<usize> = rest.iter().map(|&i| t[i]).collect();
            ext.entry(a).or_default().insert(c);
        }
        let keys: Vec<&Vec<usize>> = ext.keys().collect();
        for (x, &ka) in keys.iter().enumerate() {
            for &kb in keys.iter().skip(x + 1) {
                let (ea, eb) = (&ext[ka], &ext[kb]);
                let Some(c) = ea.intersection(eb).next() else { continue };
                if ea == eb {
                    continue;
                }
                // Orient so that `a` has the extra extension `d`.
                let (a, b, d) = match ea.difference(eb).next() {
                    Some(d) => (ka, kb, d),
                    None => (kb, ka, eb.difference(ea).next().unwrap()),
                };
                return Ok(Some(RectViolation { prefix: prefix.clone(), a: a.clone(), b: b.clone(), c: c.clone(), d: d.clone() }));
            }
        }
    }
    Ok(None)
}

/// `h(x̄) = g(f₁(x̄), …, f_r(x̄))`.
pub fn compose(g: &OperationTable, fs: &[OperationTable]) -> Result<OperationTable> {
    if fs.len() != g.arity {
        return Err(Error::Arity(format!("outer operation has arity {}, got {} inner operations", g.arity, fs.len())));
    }
    let q = fs.first().map(|f| f.arity).ok_or_else(|| invalid("no inner operations"))?;
    if fs.iter().any(|f| f.arity != q || f.sizes != g.sizes) {
        return Err(Error::Arity("inner operations must share arity and sorts".into()));
    }
    let mut args = vec![0; g.arity];
    let tables = g
        .sizes
        .iter()
        .enumerate()
        .map(|(s, &n)| {
            (0..n.pow(q as u32))
                .map(|i| {
                    for (k, f) in fs.iter().enumerate() {
                        args[k] = f.tables[s][i];
                    }
                    g.apply(s, &args)
                })
                .collect()
        })
        .collect();
    Ok(OperationTable { arity: q, sizes: g.sizes.clone(), tables })
}

/// A term over named operation symbols and variables.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Term {
    Var(usize),
    App(String, Vec<Term>),
}

impl Term {
    /// Parses `f1(y,f1(x,y))`-style terms. Identifiers in `vars` are
    /// variables; a bare operation symbol stands for itself applied to all
    /// declared variables in order.
    pub fn parse(s: &str, vars: &[&str]) -> Result<Term> {
        let chars: Vec<char> = s.chars().filter(|c| !c.is_whitespace()).collect();
        let mut pos = 0;
        let t = Term::parse_at(&chars, &mut pos, vars)?;
        if pos != chars.len() {
            return Err(invalid(format!("trailing input in term `{s}` at position {pos}")));
        }
        Ok(t)
    }

    fn parse_at(c: &[char], pos: &mut usize, vars: &[&str]) -> Result<Term> {
        let start = *pos;
        while *pos < c.len() && (c[*pos].is_alphanumeric() || c[*pos] == '_') {
            *pos += 1;
        }
        if start == *pos {
            return Err(invalid(format!("expected an identifier at position {start}")));
        }
        let name: String = c[start..*pos].iter().collect();
        if *pos < c.len() && c[*pos] == '(' {
            *pos += 1;
            let mut args = vec![Term::parse_at(c, pos, vars)?];
            while *pos < c.len() && c[*pos] == ',' {
                *pos += 1;
                args.push(Term::parse_at(c, pos, vars)?);
            }
            if *pos >= c.len() || c[*pos] != ')' {
                return Err(invalid(format!("expected `)` at position {}", *pos)));
            }
            *pos += 1;
            return Ok(Term::App(name, args));
        }
        match vars.iter().position(|v| *v == name) {
            Some(i) => Ok(Term::Var(i)),
            None => Ok(Term::App(name, Vec::new())),
        }
    }

    /// Evaluates the term pointwise: `args` are the variable values,
    /// `op(name, sort, values)` evaluates an operation symbol.
    pub fn eval_with<E>(
        &self,
        sort: usize,
        args: &[usize],
        op: &mut impl FnMut(&str, usize, &[usize]) -> std::result::Result<usize, E>,
    ) -> std::result::Result<usize, E> {
        match self {
            Term::Var(i) => Ok(args[*i]),
            Term::App(name, sub) if sub.is_empty() => op(name, sort, args),
            Term::App(name, sub) => {
                let mut vals = Vec::with_capacity(sub.len());
                for t in sub {
                    vals.push(t.eval_with(sort, args, op)?);
                }
                op(name, sort, &vals)
            }
        }
    }

    pub fn display(&self, vars: &[&str]) -> String {
        match self {
            Term::Var(i) => vars[*i].to_string(),
            Term::App(n, a) if a.is_empty() => n.clone(),
            Term::App(n, a) => format!("{n}({})", a.iter().map(|t| t.display(vars)).collect::<Vec<_>>().join(",")),
        }
    }

    /// Renames operation symbols.
    pub fn rename(&self, map: &impl Fn(&str) -> String) -> Term {
        match self {
            Term::Var(i) => Term::Var(*i),
            Term::App(n, a) => Term::App(map(n), a.iter().map(|t| t.rename(map)).collect()),
        }
    }

    /// Maps every variable index through `perm`.
    pub fn permute_vars(&self, perm: &[usize]) -> Term {
        match self {
            Term::Var(i) => Term::Var(perm[*i]),
            Term::App(n, a) => Term::App(n.clone(), a.iter().map(|t| t.permute_vars(perm)).collect()),
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.display(&["x", "y", "z"]))
    }
}

/// Evaluates a term whose variables are `x₀…x_{n-1}` into an operation of
/// arity `nvars`, with symbols bound in `env`.
pub fn eval_term(t: &Term, env: &BTreeMap<String, OperationTable>, sizes: &[usize], nvars: usize) -> Result<OperationTable> {
    for op in env.values() {
        if op.sizes != sizes {
            return Err(invalid("operation sorts do not match"));
        }
    }
    let mut tables = Vec::with_capacity(sizes.len());
    for (s, &n) in sizes.iter().enumerate() {
        let mut tab = Vec::with_capacity(n.pow(nvars as u32));
        for i in 0..n.pow(nvars as u32) {
            let args = digits(i, n, nvars);
            let v = t.eval_with(s, &args, &mut |name: &str, sort: usize, vals: &[usize]| {
                let op = env.get(name).ok_or_else(|| Error::Unknown { kind: "operation symbol", name: name.to_string() })?;
                if op.arity != vals.len() {
                    return Err(Error::Arity(format!("`{name}` has arity {}, applied to {}", op.arity, vals.len())));
                }
                Ok(op.apply(sort, vals))
            })?;
            tab.push(v);
        }
        tables.push(tab);
    }
    Ok(OperationTable { arity: nvars, sizes: sizes.to_vec(), tables })
}

/// The section `f_s(a, ·)` of a binary operation.
pub fn section(f: &OperationTable, sort: usize, a: usize) -> Vec<usize> {
    (0..f.sizes[sort]).map(|y| f.apply(sort, &[a, y])).collect()
}

/// Order of a permutation, or `None` if the map is not bijective.
pub fn perm_order(perm: &[usize]) -> Option<usize> {
    let n = perm.len();
    let mut seen = vec![false; n];
    for &x in perm {
        if x >= n || seen[x] {
            return None;
        }
        seen[x] = true;
    }
    let mut order = 1usize;
    let mut visited = vec![false; n];
    for start in 0..n {
        if visited[start] {
            continue;
        }
        let mut len = 0;
        let mut x = start;
        while !visited[x] {
            visited[x] = true;
            x = perm[x];
            len += 1;
        }
        order = lcm(order, len);
    }
    Some(order)
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

pub(crate) fn lcm(a: usize, b: usize) -> usize {
    a / gcd(a, b) * b
}

/// True when every section `f_s(a, ·)` is a permutation.
pub fn is_automorphic(f: &OperationTable) -> bool {
    f.arity == 2 && f.sizes.iter().enumerate().all(|(s, &n)| (0..n).all(|a| perm_order(&section(f, s, a)).is_some()))
}

/// For a binary operation whose sections are permutations of order 1 or
/// `p`, returns the first `(sort, a)` whose section has order `p`.
pub fn is_p_automorphic(f: &OperationTable, p: usize) -> Option<(usize, usize)> {
    if f.arity != 2 {
        return None;
    }
    let mut witness = None;
    for (s, &n) in f.sizes.iter().enumerate() {
        for a in 0..n {
            match perm_order(&section(f, s, a)) {
                Some(1) => {}
                Some(o) if o == p => {
                    witness.get_or_insert((s, a));
                }
                _ => return None,
            }
        }
    }
    witness
}

/// A p-automorphic polynomial with a witness section of order p.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PAutomorphicPolynomial {
    pub f: OperationTable,
    pub sort: usize,
    pub a: usize,
}

/// The lexicographically least binary polymorphism that is p-automorphic.
pub fn find_p_automorphic_polynomial(h: &Structure, p: u64) -> Result<Option<PAutomorphicPolynomial>> {
    check_prime(p)?;
    let mut found = None;
    let mut seen: u128 = 0;
    for_each_polymorphism(h, 2, &[], |f| {
        seen += 1;
        if let Some((sort, a)) = is_p_automorphic(f, p as usize) {
            found = Some(PAutomorphicPolynomial { f: f.clone(), sort, a });
            return ControlFlow::Break(());
        }
        if seen > DEFAULT_POLY_LIMIT as u128 {
            return ControlFlow::Break(());
        }
        ControlFlow::Continue(())
    })?;
    if found.is_none() {
        guard("binary polymorphisms scanned", seen, DEFAULT_POLY_LIMIT as u128)?;
    }
    Ok(found)
}

/// Type of a Mal'tsev operation on a 2-element sort `{a, b}` (a = element
/// 0): 0 when `m(a,b,a)=b, m(b,a,b)=a`; 1 when `m(a,b,a)=a, m(b,a,b)=b`;
/// 2 when both are `a`; 3 when both are `b`.
pub fn maltsev_type(m: &OperationTable, sort: usize) -> u8 {
    match (m.apply(sort, &[0, 1, 0]), m.apply(sort, &[1, 0, 1])) {
        (1, 0) => 0,
        (0, 1) => 1,
        (0, 0) => 2,
        _ => 3,
    }
}

/// Result of the minority construction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MinorityConstruction {
    pub h: OperationTable,
    pub types: Vec<u8>,
}

/// From a Mal'tsev operation on 2-element sorts builds
/// `f(x,y,z) = m(m(x,y,z), x, m(x,z,y))`, `g(x,y) = f(x,x,y)` and
/// `h(x,y,z) = g(m(x,y,z), f(x,y,z))`, which is the minority operation on
/// every sort.
pub fn minority_from_maltsev(m: &OperationTable) -> Result<MinorityConstruction> {
    if let Some(s) = m.sizes.iter().position(|&n| n != 2) {
        return Err(Error::Precondition(format!("sort #{s} does not have exactly 2 elements")));
    }
    if !is_maltsev(m) {
        return Err(Error::Precondition("the operation is not Mal'tsev".into()));
    }
    let mut env = BTreeMap::new();
    env.insert("m".to_string(), m.clone());
    let f = eval_term(&Term::parse("m(m(x,y,z),x,m(x,z,y))", &["x", "y", "z"])?, &env, &m.sizes, 3)?;
    env.insert("f".to_string(), f);
    let g = eval_term(&Term::parse("f(x,x,y)", &["x", "y"])?, &env, &m.sizes, 2)?;
    env.insert("g".to_string(), g);
    let h = eval_term(&Term::parse("g(m(x,y,z),f(x,y,z))", &["x", "y", "z"])?, &env, &m.sizes, 3)?;
    let types = (0..m.sizes.len()).map(|s| maltsev_type(m, s)).collect();
    Ok(MinorityConstruction { h, types })
}

/// The minority operation `x ⊕ y ⊕ z` on 2-element sorts.
pub fn minority(sorts: usize) -> OperationTable {
    OperationTable::from_fn(&vec![2; sorts], 3, |_, a| a[0] ^ a[1] ^ a[2])
}

/// A 2-automorphic polynomial obtained from an automorphism of `H²`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SquareAutomorphismPolynomial {
    pub f: OperationTable,
    pub term: String,
    /// Whether the term is the one tabulated for this case.
    pub as_tabulated: bool,
    pub note: String,
}

/// Given an automorphism `g = (g₁, g₂)` of `H²` (a map on the elements of
/// `power(H, 2)`) that swaps `(c,a)` and `(c,b)` and keeps `{a,b}²`, builds a
/// 2-automorphic polynomial from `g₁, g₂`. The tabulated term for the case
/// is tried first; if it is not 2-automorphic, the fixed list of short
/// alternatives is tried and the choice is reported in `note`.
pub fn two_auto_poly_from_square_automorphism(
    h: &Structure,
    g: &MultiSortedMap,
    a: usize,
    b: usize,
    c: usize,
) -> Result<SquareAutomorphismPolynomial> {
    if h.sorts.len() != 1 || h.sorts[0].len() != 3 {
        return Err(Error::Precondition("a single-sorted 3-element structure is required".into()));
    }
    let mut es = [a, b, c];
    es.sort_unstable();
    if es != [0, 1, 2] {
        return Err(Error::Precondition("a, b, c must be the three distinct elements".into()));
    }
    let h2 = power(h, 2)?;
    let map = g.maps.first().ok_or_else(|| invalid("empty map"))?;
    if map.len() != 9 || perm_order(map).is_none() {
        return Err(Error::Precondition("g is not a permutation of H²".into()));
    }
    for r in &h2.relations {
        for t in r.tuples() {
            if !r.contains(&g.apply_tuple(&r.sorts, t)) {
                return Err(Error::Precondition(format!("g does not preserve `{}` on H²", r.name)));
            }
        }
    }
    let pair = |x: usize, y: usize| x * 3 + y;
    if map[pair(c, a)] != pair(c, b) || map[pair(c, b)] != pair(c, a) {
        return Err(Error::Precondition("g does not swap (c,a) and (c,b)".into()));
    }
    for x in [a, b] {
        for y in [a, b] {
            let v = map[pair(x, y)];
            if ![a, b].contains(&(v / 3)) || ![a, b].contains(&(v % 3)) {
                return Err(Error::Precondition("{a,b}² is not closed under g".into()));
            }
        }
    }
    let sizes = vec![3];
    let g1 = OperationTable { arity: 2, sizes: sizes.clone(), tables: vec![(0..9).map(|i| map[i] / 3).collect()] };
    let g2 = OperationTable { arity: 2, sizes: sizes.clone(), tables: vec![(0..9).map(|i| map[i] % 3).collect()] };
    let ab_swapped = map[pair(a, b)] == pair(b, a);
    let ac_swapped = map[pair(a, c)] == pair(b, c);
    let tabulated = match (ab_swapped, ac_swapped) {
        (false, _) => "g1(x,y)",
        (true, false) => "g1(g2(x,y),g1(x,y))",
        (true, true) => "g1(x,g1(y,x))",
    };
    let alternatives = [
        tabulated,
        "g1(x,y)",
        "g2(x,y)",
        "g1(y,x)",
        "g2(y,x)",
        "g1(g2(x,y),g1(x,y))",
        "g1(g2(y,x),g1(y,x))",
        "g2(g1(x,y),g2(x,y))",
        "g2(g1(y,x),g2(y,x))",
        "g1(x,g1(y,x))",
        "g1(y,g1(x,y))",
        "g2(x,g2(y,x))",
        "g2(y,g2(x,y))",
    ];
    let mut env = BTreeMap::new();
    env.insert("g1".to_string(), g1);
    env.insert("g2".to_string(), g2);
    for (k, term) in alternatives.iter().enumerate() {
        let f = eval_term(&Term::parse(term, &["x", "y"])?, &env, &sizes, 2)?;
        if is_p_automorphic(&f, 2).is_some() && is_polymorphism(&f, h) {
            let note = if k == 0 {
                "tabulated term is 2-automorphic".to_string()
            } else {
                format!("tabulated term `{tabulated}` is not 2-automorphic here; `{term}` is")
            };
            return Ok(SquareAutomorphismPolynomial { f, term: term.to_string(), as_tabulated: k == 0, note });
        }
    }
    Err(Error::Precondition("no listed term yields a 2-automorphic polynomial".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::structures::Sort;

    #[test]
    fn indicator_sizes() {
        let neq = indicator_instance(&fixtures::neq2());
        assert_eq!(neq.variables.len(), 8);
        assert_eq!(neq.constraints.len(), 8);
        let le = indicator_instance(&fixtures::le2());
        assert_eq!(le.constraints.len(), 27);
        // Every dual pair (x_t, x_¬t) is constrained.
        let h = fixtures::neq2();
        for t in 0..8 {
            let args = digits(t, 2, 3);
            let neg: Vec<usize> = args.iter().map(|x| 1 - x).collect();
            let (u, v) = (indicator_var(&h, 3, 0, &args), indicator_var(&h, 3, 0, &neg));
            assert!(neq.constraints.iter().any(|c| c.scope == vec![u, v]));
        }
    }

    #[test]
    fn indicator_constraint_count_is_sum_of_cubes() {
        let h = Structure::single_sorted(
            3,
            vec![("R", vec![vec![0, 1], vec![1, 2]]), ("S", vec![vec![0, 0, 1], vec![2, 2, 2], vec![1, 0, 0]])],
        )
        .unwrap();
        assert_eq!(indicator_instance(&h).constraints.len(), 8 + 27);
    }

    #[test]
    fn neq2_polymorphisms_are_self_dual() {
        let h = fixtures::neq2();
        let polys = enumerate_polymorphisms(&h, 3, 100).unwrap();
        assert_eq!(polys.len(), 16);
        let all: Vec<OperationTable> = (0..256usize)
            .map(|code| OperationTable::from_fn(&[2], 3, |_, a| (code >> tuple_index(2, a)) & 1))
            .filter(|f| {
                (0..8).all(|i| {
                    let a = digits(i, 2, 3);
                    let neg: Vec<usize> = a.iter().map(|x| 1 - x).collect();
                    f.apply(0, &neg) == 1 - f.apply(0, &a)
                })
            })
            .collect();
        let mut sorted = polys.clone();
        sorted.sort();
        let mut all_sorted = all;
        all_sorted.sort();
        assert_eq!(sorted, all_sorted);
        for k in 0..3 {
            assert!(polys.contains(&OperationTable::projection(&[2], 3, k)));
        }
    }

    #[test]
    fn polymorphisms_preserve_every_relation() {
        let h = Structure::single_sorted(3, vec![("R", vec![vec![0, 1], vec![1, 1], vec![2, 0]]), ("C", vec![vec![0, 0]])]).unwrap();
        for arity in 1..=2 {
            let all = enumerate_polymorphisms(&h, arity, 100_000).unwrap();
            assert_eq!(all.len() as u128, count_polymorphisms(&h, arity).unwrap());
            for f in all {
                assert!(is_polymorphism(&f, &h));
            }
        }
    }

    #[test]
    fn coordinates() {
        let ic = indicator_coordinates(&fixtures::neq2());
        let names: Vec<String> = ic.i.iter().map(|c| c.label(&fixtures::neq2())).collect();
        assert_eq!(names, ["x000", "x011", "x100", "x111"]);
        assert_eq!(ic.a, [0, 0, 1, 1]);
        assert_eq!(ic.b, [0, 1, 0, 1]);
        assert_eq!(ic.c, [0, 1]);
        assert_eq!(ic.d, [1, 0]);
        let j: Vec<String> = ic.j.iter().map(|c| c.label(&fixtures::neq2())).collect();
        assert_eq!(j, ["x001", "x110"]);
        let three = Structure::single_sorted(3, vec![]).unwrap();
        let ic3 = indicator_coordinates(&three);
        assert_eq!((ic3.i.len(), ic3.j.len(), e_coordinates(&three).len()), (9, 6, 12));
    }

    #[test]
    fn maltsev_detection() {
        let m = has_maltsev(&fixtures::neq2()).unwrap().unwrap();
        assert!(is_maltsev(&m) && is_polymorphism(&m, &fixtures::neq2()));
        assert!(maltsev_polymorphisms(&fixtures::neq2(), 10).unwrap().contains(&minority(1)));
        assert!(has_maltsev(&fixtures::le2()).unwrap().is_none());
    }

    #[test]
    fn rectangularity() {
        let v = is_rectangular(&fixtures::le2().relations[0]).unwrap().unwrap();
        assert_eq!((v.a, v.b, v.c, v.d), (vec![0], vec![1], vec![0], vec![1]));
        assert!(is_rectangular(&fixtures::neq2().relations[0]).unwrap().is_none());
        assert!(is_rectangular(&Relation::new("U", vec![0], vec![vec![0]])).is_err());
    }

    #[test]
    fn composition_and_terms() {
        let sizes = [3];
        let f = OperationTable::from_fn(&sizes, 2, |_, a| (a[0] + 2 * a[1]) % 3);
        let g = OperationTable::from_fn(&sizes, 2, |_, a| a[0].max(a[1]));
        let e1 = OperationTable::projection(&sizes, 2, 0);
        assert_eq!(compose(&e1, &[f.clone(), g.clone()]).unwrap(), f);
        let m = minority(1);
        let mut env = BTreeMap::new();
        env.insert("m".to_string(), m);
        let t = eval_term(&Term::parse("m(x,y,y)", &["x", "y"]).unwrap(), &env, &[2], 2).unwrap();
        assert_eq!(t, OperationTable::projection(&[2], 2, 0));
        assert!(eval_term(&Term::parse("q(x)", &["x"]).unwrap(), &env, &[2], 1).is_err());
        assert!(compose(&e1, &[f]).is_err());
    }

    #[test]
    fn automorphic_polynomials() {
        let second = OperationTable::projection(&[3], 2, 1);
        assert!(is_automorphic(&second));
        assert!(is_p_automorphic(&second, 2).is_none());
        let target = OperationTable::new(2, vec![3], vec![vec![0, 1, 2, 0, 1, 2, 1, 0, 2]]).unwrap();
        assert_eq!(is_p_automorphic(&target, 2), Some((0, 2)));
        assert_eq!(perm_order(&[1, 2, 0]), Some(3));
        assert_eq!(perm_order(&[1, 1, 0]), None);
    }

    #[test]
    fn minority_on_one_sort_per_type() {
        for (v010, v101, ty) in [(1, 0, 0), (0, 1, 1), (0, 0, 2), (1, 1, 3)] {
            let m = OperationTable::from_fn(&[2], 3, |_, a| {
                if a[1] == a[2] {
                    a[0]
                } else if a[0] == a[1] {
                    a[2]
                } else if a[0] == 0 {
                    v010
                } else {
                    v101
                }
            });
            let r = minority_from_maltsev(&m).unwrap();
            assert_eq!(r.types, vec![ty]);
            assert_eq!(r.h, minority(1));
            if ty == 0 {
                assert_eq!(r.h, m);
            }
        }
        assert!(minority_from_maltsev(&OperationTable::projection(&[2], 3, 0)).is_err());
        assert!(minority_from_maltsev(&OperationTable::projection(&[3], 3, 0)).is_err());
    }

    #[test]
    fn operation_json_roundtrip() {
        let h = fixtures::neq2();
        let m = minority(1);
        assert_eq!(OperationTable::from_json(&m.to_json(&h), &h).unwrap(), m);
        let h2 = Structure::new(vec![Sort::numbered("A", 2), Sort::numbered("B", 2)], vec![]).unwrap();
        let m2 = minority(2);
        assert_eq!(OperationTable::from_json(&m2.to_json(&h2), &h2).unwrap(), m2);
    }
}
