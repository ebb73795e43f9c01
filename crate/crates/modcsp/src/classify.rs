//! Top-level classifiers with budget-qualified verdicts and machine-checkable
//! evidence.
//!
//! Every classifier first normalizes the structure (p-rigid reduct, empty
//! sorts dropped, constants added). Hardness verdicts carry an obstruction
//! certificate over the normalized structure; tractability verdicts carry
//! the surviving Mal'tsev operation and, on 2-element sorts, the minority
//! operation built from it.

use std::collections::BTreeMap;

use serde_json::{json, Value};

use crate::autos::{p_rigid_reduce, RigidStep};
use crate::error::{check_prime, Error, Result};
use crate::mpp::{is_p_conservative, maltsev_for_closure, p_subalgebras, Conservativity, MaltsevVerdict};
use crate::obstruction::{
    conservative_obstruction, three_element_obstruction, two_element_reduce, verify_certificate, ObstructionBudget, ObstructionCertificate,
    ObstructionOutcome, StuckReport,
};
use crate::polyclone::{eval_term, find_p_automorphic_polynomial, is_polymorphism, minority, OperationTable, Term};
use crate::reduce::build_hf;
use crate::structures::{add_constants, Relation, Sort, Structure};

/// The structure after normalization, with what was done to it.
#[derive(Clone, Debug)]
pub struct Preprocessed {
    pub structure: Structure,
    pub rigid_chain: Vec<RigidStep>,
    /// Names of sorts dropped because the p-rigid reduct left them empty.
    pub dropped_sorts: Vec<String>,
    pub constants_added: bool,
}

impl Preprocessed {
    pub fn trail_json(&self, h: &Structure) -> Value {
        json!({
            "rigid_chain": self.rigid_chain.iter().map(|s| json!({
                "automorphism": s.automorphism.to_json(h),
                "kept": s.kept,
            })).collect::<Vec<_>>(),
            "dropped_sorts": self.dropped_sorts,
            "constants_added": self.constants_added,
        })
    }
}

fn drop_empty_sorts(h: &Structure) -> Result<(Structure, Vec<String>)> {
    let keep: Vec<usize> = (0..h.sorts.len()).filter(|&s| !h.sorts[s].is_empty()).collect();
    if keep.len() == h.sorts.len() {
        return Ok((h.clone(), Vec::new()));
    }
    let index: BTreeMap<usize, usize> = keep.iter().enumerate().map(|(k, &s)| (s, k)).collect();
    let sorts: Vec<Sort> = keep.iter().map(|&s| h.sorts[s].clone()).collect();
    let relations = h
        .relations
        .iter()
        .filter(|r| r.sorts.iter().all(|s| index.contains_key(s)))
        .map(|r| Relation::new(r.name.clone(), r.sorts.iter().map(|s| index[s]).collect(), r.tuples().to_vec()))
        .collect();
    let dropped = h.sorts.iter().filter(|s| s.is_empty()).map(|s| s.name.clone()).collect();
    Ok((Structure::new(sorts, relations)?, dropped))
}

/// p-rigid reduct, then constants. Sorts left empty by the reduct are
/// dropped: any instance using them has no solutions.
pub fn preprocess(h: &Structure, p: u64) -> Result<Preprocessed> {
    check_prime(p)?;
    let (rigid, chain) = p_rigid_reduce(h, p)?;
    let (nonempty, dropped) = drop_empty_sorts(&rigid)?;
    let constants_added = !nonempty.constants;
    let structure = if constants_added { add_constants(&nonempty)? } else { nonempty };
    Ok(Preprocessed { structure, rigid_chain: chain, dropped_sorts: dropped, constants_added })
}

/// The outcome of a classification.
#[derive(Clone, Debug)]
pub enum VerdictKind {
    /// Tractable; `budget_qualified` is true when the evidence is a
    /// Mal'tsev operation surviving a bounded closure search.
    PolyTime {
        evidence: Value,
        budget_qualified: bool,
    },
    SharpPHard {
        certificate: Box<ObstructionCertificate>,
        context: Value,
    },
    /// The case left open by the known dichotomy (`p > 2` with a Mal'tsev
    /// polymorphism surviving).
    OpenPerPaper {
        reason: String,
    },
    /// Our search limits were reached, or the structure is outside the
    /// supported families.
    UnknownWithinBudget {
        reason: String,
        stuck: Option<Box<StuckReport>>,
        partial: Value,
    },
}

/// A verdict with its preprocessing trail and the budgets used.
#[derive(Clone, Debug)]
pub struct Verdict {
    pub kind: VerdictKind,
    pub p: u64,
    /// The structure the evidence refers to.
    pub structure: Structure,
    pub trail: Value,
    pub budget: ObstructionBudget,
    pub notes: Vec<String>,
}

impl Verdict {
    pub fn label(&self) -> &'static str {
        match self.kind {
            VerdictKind::PolyTime { .. } => "PolyTime",
            VerdictKind::SharpPHard { .. } => "SharpPHard",
            VerdictKind::OpenPerPaper { .. } => "OpenPerPaper",
            VerdictKind::UnknownWithinBudget { .. } => "UnknownWithinBudget",
        }
    }

    pub fn certificate(&self) -> Option<&ObstructionCertificate> {
        match &self.kind {
            VerdictKind::SharpPHard { certificate, .. } => Some(certificate),
            _ => None,
        }
    }

    pub fn to_json(&self) -> Value {
        let body = match &self.kind {
            VerdictKind::PolyTime { evidence, budget_qualified } => json!({"evidence": evidence, "budget_qualified": budget_qualified}),
            VerdictKind::SharpPHard { certificate, context } => json!({"certificate": certificate.to_json(), "context": context}),
            VerdictKind::OpenPerPaper { reason } => json!({"reason": reason}),
            VerdictKind::UnknownWithinBudget { reason, stuck, partial } => json!({"reason": reason, "stuck": stuck, "partial": partial}),
        };
        json!({
            "verdict": self.label(),
            "p": self.p,
            "details": body,
            "structure": self.structure.to_json(),
            "preprocessing": self.trail,
            "budget": self.budget,
            "notes": self.notes,
        })
    }
}

struct Ctx {
    p: u64,
    structure: Structure,
    trail: Value,
    budget: ObstructionBudget,
    notes: Vec<String>,
}

impl Ctx {
    fn verdict(self, kind: VerdictKind) -> Verdict {
        Verdict { kind, p: self.p, structure: self.structure, trail: self.trail, budget: self.budget, notes: self.notes }
    }

    fn unknown(self, reason: impl Into<String>, stuck: Option<Box<StuckReport>>, partial: Value) -> Verdict {
        self.verdict(VerdictKind::UnknownWithinBudget { reason: reason.into(), stuck, partial })
    }
}

fn start(h: &Structure, p: u64, budget: &ObstructionBudget) -> Result<std::result::Result<Ctx, Verdict>> {
    let pre = preprocess(h, p)?;
    let ctx = Ctx { p, trail: pre.trail_json(h), structure: pre.structure.clone(), budget: budget.clone(), notes: Vec::new() };
    if pre.structure.sorts.is_empty() {
        let evidence = json!({"reason": "every sort is empty after the p-rigid reduction, so every count vanishes modulo p"});
        return Ok(Err(ctx.verdict(VerdictKind::PolyTime { evidence, budget_qualified: false })));
    }
    Ok(Ok(ctx))
}

/// `h(x,y,z) = g(m(x,y,z), f(x,y,z))` with `f(x,y,z) = m(m(x,y,z), x,
/// m(x,z,y))` and `g(x,y) = f(x,x,y)`, on sorts of size at most 2.
fn minority_evidence(m: &OperationTable, h: &Structure) -> Result<Value> {
    let mut env = BTreeMap::new();
    env.insert("m".to_string(), m.clone());
    let f = eval_term(&Term::parse("m(m(x,y,z),x,m(x,z,y))", &["x", "y", "z"])?, &env, &m.sizes, 3)?;
    env.insert("f".to_string(), f);
    let g = eval_term(&Term::parse("f(x,x,y)", &["x", "y"])?, &env, &m.sizes, 2)?;
    env.insert("g".to_string(), g);
    let op = eval_term(&Term::parse("g(m(x,y,z),f(x,y,z))", &["x", "y", "z"])?, &env, &m.sizes, 3)?;
    let mut checked = 0;
    for (s, &n) in m.sizes.iter().enumerate() {
        if n == 2 {
            let want = minority(1);
            for i in 0..8 {
                let args = [i >> 2 & 1, i >> 1 & 1, i & 1];
                if op.apply(s, &args) != want.apply(0, &args) {
                    return Err(Error::Precondition(format!("construction is not the minority on sort `{}`", h.sorts[s].name)));
                }
                checked += 1;
            }
        }
    }
    Ok(json!({
        "maltsev": m.to_json(h),
        "minority": op.to_json(h),
        "minority_inputs_checked": checked,
        "minority_is_polymorphism": is_polymorphism(&op, h),
    }))
}

fn survivor_of(v: &MaltsevVerdict) -> Option<(&OperationTable, bool, Value)> {
    match v {
        MaltsevVerdict::MaltsevUpToBudget { survivors, listed, budget, status } => Some((
            survivors.first()?,
            *listed,
            json!({"survivors": survivors.len(), "listed": listed, "closure_budget": budget, "closure_status": status}),
        )),
        _ => None,
    }
}

fn certificate_context(c: &ObstructionCertificate) -> Value {
    let eval = c.terminal.as_ref().map(|t| {
        let rows = &t.matrix;
        let cols: Vec<Vec<u8>> = (0..rows.first().map_or(0, Vec::len)).map(|j| rows.iter().map(|r| r[j]).collect()).collect();
        let dup = |v: &[Vec<u8>]| v.iter().enumerate().any(|(i, a)| v[i + 1..].contains(a));
        json!({
            "terminal_matrix": rows,
            "pattern": t.pattern,
            "equal_rows": dup(rows),
            "equal_columns": dup(&cols),
            "note": "counting is equivalent to evaluating the partition function of this matrix modulo p; hardness of that evaluation is recorded, not re-proved",
        })
    });
    json!({"steps": c.steps.len(), "case": c.case, "eval": eval})
}

fn hard(ctx: Ctx, c: ObstructionCertificate) -> Result<Verdict> {
    let report = verify_certificate(&c, &ctx.structure, ctx.p)?;
    if !report.ok {
        let reason = format!("emitted certificate does not replay: {}", report.divergence.unwrap_or_default());
        return Ok(ctx.unknown(reason, None, json!({})));
    }
    let context = certificate_context(&c);
    Ok(ctx.verdict(VerdictKind::SharpPHard { certificate: Box::new(c), context }))
}

fn from_outcome(ctx: Ctx, out: Result<ObstructionOutcome>) -> Result<Verdict> {
    match out {
        Ok(ObstructionOutcome::Certificate(c)) => hard(ctx, *c),
        Ok(ObstructionOutcome::Stuck(s)) => Ok(ctx.unknown("the obstruction search got stuck", Some(s), json!({}))),
        Ok(other) => {
            let partial = other.to_json(&ctx.structure);
            Ok(ctx.unknown("the obstruction search produced an automorphic polynomial", None, partial))
        }
        Err(e @ (Error::Guard { .. } | Error::Precondition(_))) => Ok(ctx.unknown(format!("obstruction search: {e}"), None, json!({}))),
        Err(e) => Err(e),
    }
}

/// Structures whose sorts have at most 2 elements.
pub fn classify_2element(h: &Structure, p: u64, budget: &ObstructionBudget) -> Result<Verdict> {
    if let Some(s) = h.sorts.iter().find(|s| s.len() > 2) {
        return Err(Error::Precondition(format!("sort `{}` has more than 2 elements", s.name)));
    }
    let mut ctx = match start(h, p, budget)? {
        Ok(c) => c,
        Err(v) => return Ok(v),
    };
    let verdict = maltsev_for_closure(&ctx.structure, p, &budget.closure)?;
    if let Some((m, _, info)) = survivor_of(&verdict) {
        let mut evidence = minority_evidence(m, &ctx.structure)?;
        evidence["closure"] = info;
        ctx.notes.push("a Mal'tsev polymorphism survives the bounded closure; on 2-element sorts it yields the minority operation".into());
        return Ok(ctx.verdict(VerdictKind::PolyTime { evidence, budget_qualified: true }));
    }
    let out = conservative_obstruction(&ctx.structure, p, budget).and_then(|o| match o {
        ObstructionOutcome::Certificate(c) if c.pattern.coords.len() > 2 => {
            Ok(ObstructionOutcome::Certificate(Box::new(two_element_reduce(&c, &ctx.structure, p, budget)?)))
        }
        other => Ok(other),
    });
    from_outcome(ctx, out)
}

/// Certified p-conservative structures.
pub fn classify_conservative(h: &Structure, p: u64, budget: &ObstructionBudget) -> Result<Verdict> {
    let mut ctx = match start(h, p, budget)? {
        Ok(c) => c,
        Err(v) => return Ok(v),
    };
    if is_p_conservative(&ctx.structure, p, &budget.closure)? != Conservativity::CertifiedYes {
        return Ok(ctx.unknown("p-conservativity is not certified within the closure budget", None, json!({})));
    }
    let verdict = maltsev_for_closure(&ctx.structure, p, &budget.closure)?;
    if let Some((m, _, info)) = survivor_of(&verdict) {
        if p == 2 {
            let mut evidence = json!({"maltsev": m.to_json(&ctx.structure), "closure": info});
            if ctx.structure.sorts.iter().all(|s| s.len() <= 2) {
                evidence = minority_evidence(m, &ctx.structure)?;
                evidence["closure"] = info;
            }
            ctx.notes.push("tractable by the known modulo-2 criterion; counts are executed by brute force here".into());
            return Ok(ctx.verdict(VerdictKind::PolyTime { evidence, budget_qualified: true }));
        }
        let reason = format!("a Mal'tsev polymorphism survives the bounded closure and p = {p} > 2: this case is open");
        return Ok(ctx.verdict(VerdictKind::OpenPerPaper { reason }));
    }
    let out = conservative_obstruction(&ctx.structure, p, budget);
    from_outcome(ctx, out)
}

/// Single-sorted 3-element structures.
pub fn classify_3element(h: &Structure, p: u64, budget: &ObstructionBudget) -> Result<Verdict> {
    if h.sorts.len() != 1 || h.sorts[0].len() != 3 {
        return Err(Error::Precondition("a single 3-element sort is required".into()));
    }
    let mut ctx = match start(h, p, budget)? {
        Ok(c) => c,
        Err(v) => return Ok(v),
    };
    if ctx.structure.sorts.iter().all(|s| s.len() <= 2) {
        ctx.notes.push("the p-rigid reduct has at most 2 elements".into());
        let mut v = classify_2element(&ctx.structure, p, budget)?;
        v.trail = json!({"outer": ctx.trail, "inner": v.trail});
        v.notes.splice(0..0, ctx.notes);
        return Ok(v);
    }
    let hs = ctx.structure.clone();
    if let Some(f) = find_p_automorphic_polynomial(&hs, p)? {
        let split = build_hf(&hs, &f.f, p, Some((f.sort, f.a)))?;
        let subs = p_subalgebras(&hs, p, &budget.closure)?;
        let has = |set: Vec<usize>| subs.iter().any(|s| s.sort == f.sort && s.elements == set);
        let rest: Vec<usize> = (0..3).filter(|&x| x != f.a).collect();
        let equivalent = has(vec![f.a]) && has(rest);
        let mut inner = classify_2element(&split.structure, p, budget)?;
        let mut notes = std::mem::take(&mut ctx.notes);
        notes.push(format!(
            "reduced by the {p}-automorphic polynomial with witness a = {}; the split structure is {}",
            hs.sorts[0].elements[f.a],
            if equivalent { "equivalent ({a} and its complement are p-subalgebras)" } else { "a reduction target only" }
        ));
        notes.append(&mut inner.notes);
        inner.notes = notes;
        inner.trail = json!({
            "outer": ctx.trail,
            "automorphic_polynomial": f.f.to_json(&hs),
            "split_structure": split.structure.to_json(),
            "equivalent": equivalent,
            "inner": inner.trail,
        });
        return Ok(inner);
    }
    let verdict = maltsev_for_closure(&hs, p, &budget.closure)?;
    if let Some((m, _, info)) = survivor_of(&verdict) {
        if p == 2 {
            let evidence = json!({"maltsev": m.to_json(&hs), "closure": info});
            ctx.notes.push("no 2-automorphic polynomial and a Mal'tsev polymorphism survives; tractable modulo 2".into());
            return Ok(ctx.verdict(VerdictKind::PolyTime { evidence, budget_qualified: true }));
        }
        let reason = format!("no {p}-automorphic polynomial, a Mal'tsev polymorphism survives and p = {p} > 2: this case is open");
        return Ok(ctx.verdict(VerdictKind::OpenPerPaper { reason }));
    }
    let out = three_element_obstruction(&hs, p, budget);
    from_outcome(ctx, out)
}

/// Dispatches on the shape of the normalized structure.
pub fn classify(h: &Structure, p: u64, budget: &ObstructionBudget) -> Result<Verdict> {
    if h.sorts.iter().all(|s| s.len() <= 2) {
        return classify_2element(h, p, budget);
    }
    if h.sorts.len() == 1 && h.sorts[0].len() == 3 {
        return classify_3element(h, p, budget);
    }
    let ctx = match start(h, p, budget)? {
        Ok(c) => c,
        Err(v) => return Ok(v),
    };
    if ctx.structure.sorts.iter().all(|s| s.len() <= 2) {
        return classify_2element(&ctx.structure, p, budget);
    }
    if is_p_conservative(&ctx.structure, p, &budget.closure)? == Conservativity::CertifiedYes {
        return classify_conservative(h, p, budget);
    }
    let partial = match maltsev_for_closure(&ctx.structure, p, &budget.closure) {
        Ok(v) => v.to_json(&ctx.structure),
        Err(e) => json!({"error": e.to_string()}),
    };
    Ok(ctx.unknown("structure is outside the supported families (at most 2 elements per sort, conservative, or 3 elements)", None, partial))
}
