//! Finite multi-sorted relational structures, CSP instances and the basic
//! constructions on them: products and powers, induced substructures,
//! expansions, spectra and isomorphism search.
//!
//! Elements are addressed by their index inside their sort; names are kept
//! only for I/O. Every enumeration walks sorts and elements in their canonical
//! (input) order, so all outputs are deterministic.

use std::collections::BTreeSet;
use std::ops::ControlFlow;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{invalid, Error, Result};

/// A named finite domain.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Sort {
    pub name: String,
    pub elements: Vec<String>,
}

impl Sort {
    pub fn new(name: impl Into<String>, elements: Vec<String>) -> Self {
        Sort { name: name.into(), elements }
    }

    /// A sort whose elements are named `0, 1, …, n-1`.
    pub fn numbered(name: impl Into<String>, n: usize) -> Self {
        Sort::new(name, (0..n).map(|i| i.to_string()).collect())
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn index_of(&self, element: &str) -> Option<usize> {
        self.elements.iter().position(|e| e == element)
    }
}

/// A typed relation: a name, the sort of every coordinate and a canonical
/// (sorted, deduplicated) tuple list of element indices.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "RelationRepr")]
pub struct Relation {
    pub name: String,
    pub sorts: Vec<usize>,
    tuples: Vec<Vec<usize>>,
}

#[derive(Deserialize)]
struct RelationRepr {
    name: String,
    sorts: Vec<usize>,
    tuples: Vec<Vec<usize>>,
}

impl From<RelationRepr> for Relation {
    fn from(r: RelationRepr) -> Self {
        Relation::new(r.name, r.sorts, r.tuples)
    }
}

impl Relation {
    pub fn new(name: impl Into<String>, sorts: Vec<usize>, mut tuples: Vec<Vec<usize>>) -> Self {
        tuples.sort();
        tuples.dedup();
        Relation { name: name.into(), sorts, tuples }
    }

    pub fn arity(&self) -> usize {
        self.sorts.len()
    }

    pub fn tuples(&self) -> &[Vec<usize>] {
        &self.tuples
    }

    pub fn len(&self) -> usize {
        self.tuples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tuples.is_empty()
    }

    pub fn contains(&self, t: &[usize]) -> bool {
        self.tuples.binary_search_by(|x| x.as_slice().cmp(t)).is_ok()
    }

    pub fn renamed(&self, name: impl Into<String>) -> Relation {
        Relation { name: name.into(), sorts: self.sorts.clone(), tuples: self.tuples.clone() }
    }

    /// Same sorts and tuples, ignoring the name.
    pub fn same_content(&self, other: &Relation) -> bool {
        self.sorts == other.sorts && self.tuples == other.tuples
    }
}

/// A finite multi-sorted relational structure.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Structure {
    pub sorts: Vec<Sort>,
    pub relations: Vec<Relation>,
    /// Set when every element of every sort has its singleton unary relation.
    pub constants: bool,
}

/// A per-sort collection of element maps between two similar structures.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MultiSortedMap {
    pub maps: Vec<Vec<usize>>,
}

impl MultiSortedMap {
    pub fn identity(sizes: &[usize]) -> Self {
        MultiSortedMap { maps: sizes.iter().map(|&n| (0..n).collect()).collect() }
    }

    pub fn apply(&self, sort: usize, e: usize) -> usize {
        self.maps[sort][e]
    }

    pub fn apply_tuple(&self, sorts: &[usize], t: &[usize]) -> Vec<usize> {
        t.iter().zip(sorts).map(|(&e, &s)| self.maps[s][e]).collect()
    }

    /// `self ∘ other` (apply `other` first).
    pub fn compose(&self, other: &MultiSortedMap) -> MultiSortedMap {
        MultiSortedMap { maps: self.maps.iter().zip(&other.maps).map(|(f, g)| g.iter().map(|&x| f[x]).collect()).collect() }
    }

    pub fn inverse(&self) -> MultiSortedMap {
        MultiSortedMap {
            maps: self
                .maps
                .iter()
                .map(|f| {
                    let mut inv = vec![0; f.len()];
                    for (i, &x) in f.iter().enumerate() {
                        inv[x] = i;
                    }
                    inv
                })
                .collect(),
        }
    }

    pub fn is_identity(&self) -> bool {
        self.maps.iter().all(|f| f.iter().enumerate().all(|(i, &x)| i == x))
    }

    pub fn to_json(&self, source: &Structure, target: &Structure) -> Value {
        let mut out = serde_json::Map::new();
        for (s, f) in self.maps.iter().enumerate() {
            let mut m = serde_json::Map::new();
            for (i, &x) in f.iter().enumerate() {
                m.insert(source.sorts[s].elements[i].clone(), Value::String(target.sorts[s].elements[x].clone()));
            }
            out.insert(source.sorts[s].name.clone(), Value::Object(m));
        }
        Value::Object(out)
    }
}

/// A CSP variable with its sort.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Variable {
    pub name: String,
    pub sort: usize,
}

/// A constraint `⟨scope, relation⟩`; the relation is an index into the
/// structure the instance is bound to.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Constraint {
    pub relation: usize,
    pub scope: Vec<usize>,
}

/// A CSP instance over (the signature of) a fixed structure.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct CspInstance {
    pub variables: Vec<Variable>,
    pub constraints: Vec<Constraint>,
}

impl CspInstance {
    pub fn new(variables: Vec<Variable>, constraints: Vec<Constraint>) -> Self {
        CspInstance { variables, constraints }
    }

    /// Checks scope lengths and sorts against the structure.
    pub fn validate(&self, h: &Structure) -> Result<()> {
        for v in &self.variables {
            if v.sort >= h.sorts.len() {
                return Err(invalid(format!("variable `{}` has unknown sort", v.name)));
            }
        }
        for (ci, c) in self.constraints.iter().enumerate() {
            let rel = h.relations.get(c.relation).ok_or_else(|| invalid(format!("constraint {ci} refers to an unknown relation")))?;
            if rel.arity() != c.scope.len() {
                return Err(Error::Arity(format!(
                    "constraint {ci}: scope length {} but `{}` has arity {}",
                    c.scope.len(),
                    rel.name,
                    rel.arity()
                )));
            }
            for (pos, (&v, &s)) in c.scope.iter().zip(&rel.sorts).enumerate() {
                let var = self.variables.get(v).ok_or_else(|| invalid(format!("constraint {ci}: unknown variable {v}")))?;
                if var.sort != s {
                    return Err(invalid(format!(
                        "constraint {ci}: variable `{}` at position {pos} has sort `{}`, relation `{}` expects `{}`",
                        var.name, h.sorts[var.sort].name, rel.name, h.sorts[s].name
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn var_index(&self, name: &str) -> Option<usize> {
        self.variables.iter().position(|v| v.name == name)
    }

    pub fn from_json(value: &Value, h: &Structure) -> Result<Self> {
        let file: InstanceFile = serde_json::from_value(value.clone())?;
        let mut variables = Vec::new();
        for v in &file.variables {
            let sort = h.sort_index(&v.sort).ok_or_else(|| Error::Unknown { kind: "sort", name: v.sort.clone() })?;
            if variables.iter().any(|x: &Variable| x.name == v.name) {
                return Err(Error::Duplicate { kind: "variable", name: v.name.clone() });
            }
            variables.push(Variable { name: v.name.clone(), sort });
        }
        let mut constraints = Vec::new();
        for c in &file.constraints {
            let relation = h.relation_index(&c.relation).ok_or_else(|| Error::Unknown { kind: "relation", name: c.relation.clone() })?;
            let scope = c
                .scope
                .iter()
                .map(|n| variables.iter().position(|v| v.name == n.0).ok_or_else(|| Error::Unknown { kind: "variable", name: n.0.clone() }))
                .collect::<Result<Vec<_>>>()?;
            constraints.push(Constraint { relation, scope });
        }
        let inst = CspInstance { variables, constraints };
        inst.validate(h)?;
        Ok(inst)
    }

    pub fn to_json(&self, h: &Structure) -> Value {
        json!({
            "variables": self.variables.iter().map(|v| json!({"name": v.name, "sort": h.sorts[v.sort].name})).collect::<Vec<_>>(),
            "constraints": self.constraints.iter().map(|c| json!({
                "relation": h.relations[c.relation].name,
                "scope": c.scope.iter().map(|&v| self.variables[v].name.clone()).collect::<Vec<_>>(),
            })).collect::<Vec<_>>(),
        })
    }
}

/// An element name in a JSON file: strings and integers are both accepted.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Name(pub String);

impl<'de> Deserialize<'de> for Name {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match Value::deserialize(d)? {
            Value::String(s) => Ok(Name(s)),
            Value::Number(n) => Ok(Name(n.to_string())),
            other => Err(serde::de::Error::custom(format!("expected an element name, found {other}"))),
        }
    }
}

impl Serialize for Name {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.0)
    }
}

#[derive(Deserialize)]
struct SortFile {
    name: String,
    elements: Vec<Name>,
}

#[derive(Deserialize)]
struct RelationFile {
    name: String,
    #[serde(rename = "type")]
    ty: Vec<String>,
    tuples: Vec<Vec<Name>>,
}

#[derive(Deserialize)]
struct StructureFile {
    sorts: Vec<SortFile>,
    relations: Vec<RelationFile>,
}

#[derive(Deserialize)]
struct VariableFile {
    name: String,
    sort: String,
}

#[derive(Deserialize)]
struct ConstraintFile {
    relation: String,
    scope: Vec<Name>,
}

#[derive(Deserialize)]
struct InstanceFile {
    variables: Vec<VariableFile>,
    constraints: Vec<ConstraintFile>,
}

impl Structure {
    /// Builds and validates a structure; the constants flag is detected.
    pub fn new(sorts: Vec<Sort>, relations: Vec<Relation>) -> Result<Self> {
        let mut h = Structure { sorts, relations, constants: false };
        h.validate()?;
        h.constants = h.detect_constants();
        Ok(h)
    }

    /// Single-sorted convenience constructor with elements `0..n`; a relation
    /// given without tuples is taken to be binary.
    pub fn single_sorted(n: usize, relations: Vec<(&str, Vec<Vec<usize>>)>) -> Result<Self> {
        let rels = relations
            .into_iter()
            .map(|(name, tuples)| {
                let arity = tuples.first().map_or(2, |t| t.len());
                Relation::new(name, vec![0; arity], tuples)
            })
            .collect();
        Structure::new(vec![Sort::numbered("H", n)], rels)
    }

    pub fn sort_index(&self, name: &str) -> Option<usize> {
        self.sorts.iter().position(|s| s.name == name)
    }

    pub fn relation_index(&self, name: &str) -> Option<usize> {
        self.relations.iter().position(|r| r.name == name)
    }

    pub fn relation(&self, name: &str) -> Option<&Relation> {
        self.relations.iter().find(|r| r.name == name)
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.sorts.iter().map(Sort::len).collect()
    }

    pub fn total_size(&self) -> usize {
        self.sorts.iter().map(Sort::len).sum()
    }

    /// Checks every invariant, reporting the first violation with its location.
    pub fn validate(&self) -> Result<()> {
        let mut names = BTreeSet::new();
        for s in &self.sorts {
            if !names.insert(&s.name) {
                return Err(Error::Duplicate { kind: "sort", name: s.name.clone() });
            }
            let mut seen = BTreeSet::new();
            for e in &s.elements {
                if !seen.insert(e) {
                    return Err(Error::Duplicate { kind: "element", name: format!("{}.{}", s.name, e) });
                }
            }
        }
        let mut rnames = BTreeSet::new();
        for r in &self.relations {
            if !rnames.insert(&r.name) {
                return Err(Error::Duplicate { kind: "relation", name: r.name.clone() });
            }
            if r.sorts.is_empty() {
                return Err(Error::Arity(format!("relation `{}` has arity 0", r.name)));
            }
            for &s in &r.sorts {
                if s >= self.sorts.len() {
                    return Err(Error::Unknown { kind: "sort", name: format!("#{s} in relation `{}`", r.name) });
                }
            }
            for (index, t) in r.tuples.iter().enumerate() {
                if t.len() != r.arity() {
                    return Err(Error::BadTuple {
                        relation: r.name.clone(),
                        index,
                        message: format!("length {} but arity {}", t.len(), r.arity()),
                    });
                }
                for (pos, (&e, &s)) in t.iter().zip(&r.sorts).enumerate() {
                    if e >= self.sorts[s].len() {
                        return Err(Error::BadTuple {
                            relation: r.name.clone(),
                            index,
                            message: format!("coordinate {pos} is outside sort `{}`", self.sorts[s].name),
                        });
                    }
                }
            }
        }
        Ok(())
    }

    fn detect_constants(&self) -> bool {
        self.sorts.iter().enumerate().all(|(s, sort)| (0..sort.len()).all(|e| self.constant_relation(s, e).is_some()))
    }

    /// Index of a unary relation equal to `{e}` on sort `s`, if any.
    pub fn constant_relation(&self, s: usize, e: usize) -> Option<usize> {
        self.unary_relation_for(s, &[e])
    }

    /// Index of a unary relation on sort `s` with exactly the given elements.
    pub fn unary_relation_for(&self, s: usize, elems: &[usize]) -> Option<usize> {
        self.relations.iter().position(|r| r.sorts == [s] && r.len() == elems.len() && elems.iter().all(|&e| r.contains(&[e])))
    }

    pub fn from_json(value: &Value) -> Result<Self> {
        let file: StructureFile = serde_json::from_value(value.clone())?;
        let sorts: Vec<Sort> = file.sorts.into_iter().map(|s| Sort::new(s.name, s.elements.into_iter().map(|n| n.0).collect())).collect();
        let mut relations = Vec::new();
        for r in file.relations {
            let types =
                r.ty.iter()
                    .map(|t| {
                        sorts
                            .iter()
                            .position(|s| &s.name == t)
                            .ok_or_else(|| Error::Unknown { kind: "sort", name: format!("{t} (in relation `{}`)", r.name) })
                    })
                    .collect::<Result<Vec<_>>>()?;
            let mut tuples = Vec::new();
            for (index, t) in r.tuples.iter().enumerate() {
                if t.len() != types.len() {
                    return Err(Error::BadTuple {
                        relation: r.name.clone(),
                        index,
                        message: format!("length {} but arity {}", t.len(), types.len()),
                    });
                }
                let mut tuple = Vec::with_capacity(t.len());
                for (pos, (n, &s)) in t.iter().zip(&types).enumerate() {
                    let e = sorts[s].index_of(&n.0).ok_or_else(|| Error::BadTuple {
                        relation: r.name.clone(),
                        index,
                        message: format!("coordinate {pos}: `{}` is not an element of sort `{}`", n.0, sorts[s].name),
                    })?;
                    tuple.push(e);
                }
                tuples.push(tuple);
            }
            relations.push(Relation::new(r.name, types, tuples));
        }
        Structure::new(sorts, relations)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        Structure::from_json(&serde_json::from_str(s)?)
    }

    pub fn to_json(&self) -> Value {
        json!({
            "sorts": self.sorts.iter().map(|s| json!({"name": s.name, "elements": s.elements})).collect::<Vec<_>>(),
            "relations": self.relations.iter().map(|r| self.relation_to_json(r)).collect::<Vec<_>>(),
        })
    }

    pub fn relation_to_json(&self, r: &Relation) -> Value {
        json!({
            "name": r.name,
            "type": r.sorts.iter().map(|&s| self.sorts[s].name.clone()).collect::<Vec<_>>(),
            "tuples": r.tuples().iter().map(|t| self.tuple_names(&r.sorts, t)).collect::<Vec<_>>(),
        })
    }

    pub fn tuple_names(&self, sorts: &[usize], t: &[usize]) -> Vec<String> {
        t.iter().zip(sorts).map(|(&e, &s)| self.sorts[s].elements[e].clone()).collect()
    }

    /// True when both structures have the same sorts count and the same
    /// relation symbols with the same types.
    pub fn similar(&self, other: &Structure) -> bool {
        self.sorts.len() == other.sorts.len()
            && self.relations.len() == other.relations.len()
            && self.relations.iter().zip(&other.relations).all(|(a, b)| a.name == b.name && a.sorts == b.sorts)
    }

    fn require_similar(&self, other: &Structure) -> Result<()> {
        if self.similar(other) {
            Ok(())
        } else {
            Err(Error::Dissimilar("sort count or relation symbols/types differ".into()))
        }
    }
}

fn tuple_name(parts: &[&str]) -> String {
    format!("({})", parts.join(","))
}

/// Decodes a mixed-radix index into its digits (most significant first).
pub(crate) fn digits(mut index: usize, base: usize, len: usize) -> Vec<usize> {
    let mut out = vec![0; len];
    for slot in out.iter_mut().rev() {
        *slot = index % base;
        index /= base;
    }
    out
}

/// Direct product `H × G` of two similar structures.
pub fn product(h: &Structure, g: &Structure) -> Result<Structure> {
    h.require_similar(g)?;
    let sorts: Vec<Sort> = h
        .sorts
        .iter()
        .zip(&g.sorts)
        .map(|(a, b)| {
            let mut els = Vec::with_capacity(a.len() * b.len());
            for x in &a.elements {
                for y in &b.elements {
                    els.push(tuple_name(&[x, y]));
                }
            }
            Sort::new(a.name.clone(), els)
        })
        .collect();
    let relations = h
        .relations
        .iter()
        .zip(&g.relations)
        .map(|(r, q)| {
            let mut tuples = Vec::with_capacity(r.len() * q.len());
            for s in r.tuples() {
                for t in q.tuples() {
                    tuples.push(s.iter().zip(t).zip(&r.sorts).map(|((&a, &b), &sort)| a * g.sorts[sort].len() + b).collect());
                }
            }
            Relation::new(r.name.clone(), r.sorts.clone(), tuples)
        })
        .collect();
    Structure::new(sorts, relations)
}

/// The power `H^ℓ`; element `(a_1,…,a_ℓ)` has index `Σ a_i n^{ℓ-i}`.
pub fn power(h: &Structure, l: usize) -> Result<Structure> {
    if l == 0 {
        return Err(invalid("power exponent must be positive"));
    }
    let sorts: Vec<Sort> = h
        .sorts
        .iter()
        .map(|s| {
            let n = s.len();
            let count = n.pow(l as u32);
            let els = (0..count)
                .map(|i| {
                    if l == 1 {
                        s.elements[i].clone()
                    } else {
                        let ds = digits(i, n, l);
                        let names: Vec<&str> = ds.iter().map(|&d| s.elements[d].as_str()).collect();
                        tuple_name(&names)
                    }
                })
                .collect();
            Sort::new(s.name.clone(), els)
        })
        .collect();
    let relations = h
        .relations
        .iter()
        .map(|r| {
            let mut tuples = Vec::new();
            let m = r.len();
            let total = m.pow(l as u32);
            for idx in 0..total {
                let choice = digits(idx, m, l);
                let t: Vec<usize> = (0..r.arity())
                    .map(|pos| {
                        let n = h.sorts[r.sorts[pos]].len();
                        choice.iter().fold(0usize, |acc, &c| acc * n + r.tuples()[c][pos])
                    })
                    .collect();
                tuples.push(t);
            }
            Relation::new(r.name.clone(), r.sorts.clone(), tuples)
        })
        .collect();
    Structure::new(sorts, relations)
}

/// Substructure induced by per-sort element subsets (given as index lists).
/// Returns the substructure and, per sort, the kept original indices.
pub fn induced_substructure(h: &Structure, subsets: &[Vec<usize>]) -> Result<(Structure, Vec<Vec<usize>>)> {
    if subsets.len() != h.sorts.len() {
        return Err(invalid("one subset per sort is required"));
    }
    let mut kept: Vec<Vec<usize>> = Vec::new();
    let mut newidx: Vec<Vec<Option<usize>>> = Vec::new();
    for (s, sub) in subsets.iter().enumerate() {
        let mut k: Vec<usize> = sub.clone();
        k.sort_unstable();
        k.dedup();
        if let Some(&bad) = k.iter().find(|&&e| e >= h.sorts[s].len()) {
            return Err(invalid(format!("element #{bad} is not in sort `{}`", h.sorts[s].name)));
        }
        let mut map = vec![None; h.sorts[s].len()];
        for (i, &e) in k.iter().enumerate() {
            map[e] = Some(i);
        }
        kept.push(k);
        newidx.push(map);
    }
    let sorts =
        h.sorts.iter().zip(&kept).map(|(s, k)| Sort::new(s.name.clone(), k.iter().map(|&e| s.elements[e].clone()).collect())).collect();
    let relations = h
        .relations
        .iter()
        .map(|r| {
            let tuples =
                r.tuples().iter().filter_map(|t| t.iter().zip(&r.sorts).map(|(&e, &s)| newidx[s][e]).collect::<Option<Vec<_>>>()).collect();
            Relation::new(r.name.clone(), r.sorts.clone(), tuples)
        })
        .collect();
    Ok((Structure::new(sorts, relations)?, kept))
}

/// Name-based front end for [`induced_substructure`].
pub fn induced_by_names(h: &Structure, subsets: &[Vec<&str>]) -> Result<Structure> {
    let idx = subsets
        .iter()
        .enumerate()
        .map(|(s, names)| {
            names
                .iter()
                .map(|n| h.sorts[s].index_of(n).ok_or_else(|| Error::Unknown { kind: "element", name: (*n).to_string() }))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(induced_substructure(h, &idx)?.0)
}

/// `H + extra`: appends relations, keeping the existing order.
pub fn expand(h: &Structure, extra: Vec<Relation>) -> Result<Structure> {
    let mut relations = h.relations.clone();
    for r in extra {
        if relations.iter().any(|x| x.name == r.name) {
            return Err(Error::Duplicate { kind: "relation", name: r.name });
        }
        relations.push(r);
    }
    Structure::new(h.sorts.clone(), relations)
}

/// Canonical name of the constant relation `C_{H_s, e}`.
pub fn constant_name(h: &Structure, s: usize, e: usize) -> String {
    if h.sorts.len() == 1 {
        format!("C_{}", h.sorts[s].elements[e])
    } else {
        format!("C_{}_{}", h.sorts[s].name, h.sorts[s].elements[e])
    }
}

/// `H^c`: adds every missing singleton unary relation.
pub fn add_constants(h: &Structure) -> Result<Structure> {
    let mut extra = Vec::new();
    for (s, sort) in h.sorts.iter().enumerate() {
        for e in 0..sort.len() {
            if h.constant_relation(s, e).is_none() {
                extra.push(Relation::new(constant_name(h, s, e), vec![s], vec![vec![e]]));
            }
        }
    }
    expand(h, extra)
}

/// `H^=`: adds one binary equality relation per sort.
pub fn add_equalities(h: &Structure) -> Result<Structure> {
    let extra = h
        .sorts
        .iter()
        .enumerate()
        .map(|(s, sort)| {
            let name = if h.sorts.len() == 1 { "EQ".to_string() } else { format!("EQ_{}", sort.name) };
            Relation::new(name, vec![s, s], (0..sort.len()).map(|e| vec![e, e]).collect())
        })
        .collect();
    expand(h, extra)
}

/// Truncated spectrum: entry `j-1` counts the sorts of cardinality `j`.
pub fn spectrum(h: &Structure) -> Vec<usize> {
    let max = h.sorts.iter().map(Sort::len).max().unwrap_or(0);
    let mut sp = vec![0; max];
    for s in &h.sorts {
        if !s.is_empty() {
            sp[s.len() - 1] += 1;
        }
    }
    while sp.last() == Some(&0) {
        sp.pop();
    }
    sp
}

/// Strict order on truncated spectra where later entries are more senior.
pub fn spectrum_less(s: &[usize], t: &[usize]) -> bool {
    let n = s.len().max(t.len());
    for j in (0..n).rev() {
        let a = s.get(j).copied().unwrap_or(0);
        let b = t.get(j).copied().unwrap_or(0);
        if a != b {
            return a < b;
        }
    }
    false
}

/// Reads `G` as an instance of `CSP(H)`: one variable per element, one
/// constraint per tuple.
pub fn structure_as_instance(g: &Structure, h: &Structure) -> Result<CspInstance> {
    g.require_similar(h)?;
    let mut offsets = Vec::new();
    let mut variables = Vec::new();
    for (s, sort) in g.sorts.iter().enumerate() {
        offsets.push(variables.len());
        for e in &sort.elements {
            let name = if g.sorts.len() == 1 { e.clone() } else { format!("{}.{}", sort.name, e) };
            variables.push(Variable { name, sort: s });
        }
    }
    let mut constraints = Vec::new();
    for (ri, r) in g.relations.iter().enumerate() {
        for t in r.tuples() {
            constraints.push(Constraint { relation: ri, scope: t.iter().zip(&r.sorts).map(|(&e, &s)| offsets[s] + e).collect() });
        }
    }
    Ok(CspInstance::new(variables, constraints))
}

/// Variable index of element `e` of sort `s` in [`structure_as_instance`].
pub fn element_variable(g: &Structure, s: usize, e: usize) -> usize {
    g.sorts[..s].iter().map(Sort::len).sum::<usize>() + e
}

/// Reads an instance of `CSP(H)` as a structure similar to `H`.
pub fn instance_as_structure(p: &CspInstance, h: &Structure) -> Result<Structure> {
    p.validate(h)?;
    let mut local = vec![0usize; p.variables.len()];
    let mut sorts: Vec<Sort> = h.sorts.iter().map(|s| Sort::new(s.name.clone(), vec![])).collect();
    for (i, v) in p.variables.iter().enumerate() {
        local[i] = sorts[v.sort].elements.len();
        sorts[v.sort].elements.push(v.name.clone());
    }
    let relations = h
        .relations
        .iter()
        .enumerate()
        .map(|(ri, r)| {
            let tuples = p.constraints.iter().filter(|c| c.relation == ri).map(|c| c.scope.iter().map(|&v| local[v]).collect()).collect();
            Relation::new(r.name.clone(), r.sorts.clone(), tuples)
        })
        .collect();
    Structure::new(sorts, relations)
}

/// Enumerates isomorphisms `H → G` in lexicographic order of the mapping
/// tables (sort-major), with optional pinned images. The callback may stop
/// the search early.
pub fn search_isomorphisms<F>(h: &Structure, g: &Structure, pins: &[(usize, usize, usize)], mut visit: F) -> Result<()>
where
    F: FnMut(&MultiSortedMap) -> ControlFlow<()>,
{
    h.require_similar(g)?;
    if h.sizes() != g.sizes() || h.relations.iter().zip(&g.relations).any(|(a, b)| a.len() != b.len()) {
        return Ok(());
    }
    // Flatten elements in sort-major order.
    let order: Vec<(usize, usize)> = h.sorts.iter().enumerate().flat_map(|(s, sort)| (0..sort.len()).map(move |e| (s, e))).collect();
    let pos_of = |s: usize, e: usize| element_variable(h, s, e);
    // For each position, the tuples that become fully assigned there.
    let mut checks: Vec<Vec<(usize, usize)>> = vec![Vec::new(); order.len()];
    for (ri, r) in h.relations.iter().enumerate() {
        for (ti, t) in r.tuples().iter().enumerate() {
            let last = t.iter().zip(&r.sorts).map(|(&e, &s)| pos_of(s, e)).max().unwrap();
            checks[last].push((ri, ti));
        }
    }
    let mut pin_of: Vec<Option<usize>> = vec![None; order.len()];
    for &(s, e, t) in pins {
        if s >= h.sorts.len() || e >= h.sorts[s].len() || t >= g.sorts[s].len() {
            return Err(invalid("pin outside the structure"));
        }
        pin_of[pos_of(s, e)] = Some(t);
    }
    let mut map = MultiSortedMap { maps: h.sorts.iter().map(|s| vec![usize::MAX; s.len()]).collect() };
    let mut used: Vec<Vec<bool>> = g.sorts.iter().map(|s| vec![false; s.len()]).collect();

    fn rec<F: FnMut(&MultiSortedMap) -> ControlFlow<()>>(
        k: usize,
        order: &[(usize, usize)],
        checks: &[Vec<(usize, usize)>],
        pin_of: &[Option<usize>],
        h: &Structure,
        g: &Structure,
        map: &mut MultiSortedMap,
        used: &mut Vec<Vec<bool>>,
        visit: &mut F,
    ) -> ControlFlow<()> {
        if k == order.len() {
            return visit(map);
        }
        let (s, e) = order[k];
        let candidates: Vec<usize> = match pin_of[k] {
            Some(t) => vec![t],
            None => (0..g.sorts[s].len()).collect(),
        };
        for t in candidates {
            if used[s][t] {
                continue;
            }
            map.maps[s][e] = t;
            let ok = checks[k].iter().all(|&(ri, ti)| {
                let r = &h.relations[ri];
                let img = map.apply_tuple(&r.sorts, &r.tuples()[ti]);
                g.relations[ri].contains(&img)
            });
            if ok {
                used[s][t] = true;
                let flow = rec(k + 1, order, checks, pin_of, h, g, map, used, visit);
                used[s][t] = false;
                flow?;
            }
        }
        map.maps[s][e] = usize::MAX;
        ControlFlow::Continue(())
    }
    let _ = rec(0, &order, &checks, &pin_of, h, g, &mut map, &mut used, &mut visit);
    Ok(())
}

/// First isomorphism `H → G` in canonical enumeration order, if any.
pub fn find_isomorphism(h: &Structure, g: &Structure) -> Result<Option<MultiSortedMap>> {
    let mut found = None;
    search_isomorphisms(h, g, &[], |m| {
        found = Some(m.clone());
        ControlFlow::Break(())
    })?;
    Ok(found)
}

/// Applies an element relabeling to a structure (sort by sort).
pub fn relabel(h: &Structure, map: &MultiSortedMap) -> Result<Structure> {
    let inv = map.inverse();
    let sorts = h
        .sorts
        .iter()
        .enumerate()
        .map(|(s, sort)| Sort::new(sort.name.clone(), (0..sort.len()).map(|i| sort.elements[inv.maps[s][i]].clone()).collect()))
        .collect();
    let relations = h
        .relations
        .iter()
        .map(|r| Relation::new(r.name.clone(), r.sorts.clone(), r.tuples().iter().map(|t| map.apply_tuple(&r.sorts, t)).collect()))
        .collect();
    Structure::new(sorts, relations)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn neq2_validates() {
        let h = fixtures::neq2();
        assert!(h.validate().is_ok());
        assert!(!h.constants);
    }

    #[test]
    fn out_of_domain_tuple_is_rejected() {
        let err = Structure::single_sorted(2, vec![("R", vec![vec![0, 2]])]).unwrap_err();
        assert!(matches!(err, Error::BadTuple { index: 0, .. }));
    }

    #[test]
    fn duplicate_relation_name_is_rejected() {
        let err = Structure::single_sorted(2, vec![("R", vec![vec![0, 1]]), ("R", vec![vec![1, 0]])]).unwrap_err();
        assert!(matches!(err, Error::Duplicate { kind: "relation", .. }));
    }

    #[test]
    fn json_roundtrip() {
        let h = fixtures::le2();
        let back = Structure::from_json(&h.to_json()).unwrap();
        assert_eq!(h, back);
    }

    #[test]
    fn json_rejects_unknown_element() {
        let v = json!({"sorts": [{"name": "H", "elements": [0, 1]}],
                       "relations": [{"name": "R", "type": ["H", "H"], "tuples": [[0, 2]]}]});
        let err = Structure::from_json(&v).unwrap_err();
        assert!(matches!(err, Error::BadTuple { index: 0, .. }));
    }

    #[test]
    fn cube_of_neq2_has_eight_dual_pairs() {
        let h = fixtures::neq2();
        let h3 = power(&h, 3).unwrap();
        assert_eq!(h3.sorts[0].len(), 8);
        let r = &h3.relations[0];
        assert_eq!(r.len(), 8);
        // Oracle: brute force over all 8×8 pairs of triples.
        for a in 0..8 {
            for b in 0..8 {
                let da = digits(a, 2, 3);
                let db = digits(b, 2, 3);
                let dual = da.iter().zip(&db).all(|(x, y)| x != y);
                assert_eq!(r.contains(&[a, b]), dual);
            }
        }
    }

    #[test]
    fn power_one_is_isomorphic() {
        let h = fixtures::le2();
        let p1 = power(&h, 1).unwrap();
        assert!(find_isomorphism(&h, &p1).unwrap().is_some());
    }

    #[test]
    fn product_with_full_singleton_is_a_copy() {
        let h = fixtures::le2();
        let one = Structure::single_sorted(1, vec![("Q", vec![vec![0, 0]])]).unwrap();
        let prod = product(&h, &one).unwrap();
        assert!(find_isomorphism(&h, &prod).unwrap().is_some());
    }

    #[test]
    fn induced_substructures() {
        let h = fixtures::neq2();
        let (sub, _) = induced_substructure(&h, &[vec![0]]).unwrap();
        assert!(sub.relations[0].is_empty());
        let (full, _) = induced_substructure(&h, &[vec![0, 1]]).unwrap();
        assert_eq!(full, h);
        let h3 = Structure::single_sorted(3, vec![("R", vec![vec![0, 1], vec![1, 2], vec![2, 0], vec![1, 0]])]).unwrap();
        let (ab, _) = induced_substructure(&h3, &[vec![0, 1]]).unwrap();
        let expected: Vec<Vec<usize>> = h3.relations[0].tuples().iter().filter(|t| !t.contains(&2)).cloned().collect();
        assert_eq!(ab.relations[0].tuples(), expected.as_slice());
        assert!(induced_by_names(&h, &[vec!["7"]]).is_err());
    }

    #[test]
    fn expansions() {
        let h = fixtures::neq2();
        let hc = add_constants(&h).unwrap();
        assert_eq!(hc.relations.len(), 3);
        assert!(hc.constants);
        let he = add_equalities(&h).unwrap();
        assert_eq!(he.relations[1].tuples(), &[vec![0, 0], vec![1, 1]]);
        assert!(expand(&h, vec![h.relations[0].clone()]).is_err());
    }

    #[test]
    fn spectra() {
        assert_eq!(spectrum(&fixtures::neq2()), vec![0, 1]);
        assert!(spectrum_less(&[1], &[0, 1]));
        assert!(!spectrum_less(&[0, 1], &[1]));
        assert!(!spectrum_less(&[0, 1], &[0, 1]));
        assert!(spectrum_less(&[0, 2], &[5, 0, 1]));
    }

    #[test]
    fn instance_structure_translation() {
        let one = Structure::new(vec![Sort::numbered("H", 1)], vec![Relation::new("R", vec![0, 0], vec![])]).unwrap();
        let h = fixtures::neq2();
        let inst = structure_as_instance(&one, &h).unwrap();
        assert_eq!(inst.variables.len(), 1);
        assert!(inst.constraints.is_empty());
        let inst = structure_as_instance(&h, &h).unwrap();
        assert_eq!((inst.variables.len(), inst.constraints.len()), (2, 2));
        let back = instance_as_structure(&inst, &h).unwrap();
        assert_eq!(structure_as_instance(&back, &h).unwrap(), inst);
    }

    #[test]
    fn isomorphisms() {
        let h = fixtures::neq2();
        assert!(find_isomorphism(&h, &h).unwrap().unwrap().is_identity());
        assert!(find_isomorphism(&h, &fixtures::le2().relations[0].clone().pipe_structure()).unwrap().is_none());
        let h3 = Structure::single_sorted(3, vec![("R", vec![vec![0, 1], vec![1, 2], vec![1, 1]])]).unwrap();
        let sigma = MultiSortedMap { maps: vec![vec![2, 0, 1]] };
        let moved = relabel(&h3, &sigma).unwrap();
        let found = find_isomorphism(&h3, &moved).unwrap().unwrap();
        assert_eq!(found, sigma);
    }

    trait PipeStructure {
        fn pipe_structure(self) -> Structure;
    }

    impl PipeStructure for Relation {
        fn pipe_structure(self) -> Structure {
            Structure::new(vec![Sort::numbered("H", 2)], vec![self.renamed("R")]).unwrap()
        }
    }
}
