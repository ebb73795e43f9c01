//! Acceptance suite: one PASS/FAIL line per criterion. Exits non-zero if
//! any criterion fails.

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use modcsp::classify::{classify_2element, classify_conservative};
use modcsp::fixtures;
use modcsp::homcount::{count_homs, count_homs_mod, count_injective, count_injective_mobius, DEFAULT_PARTITION_CAP};
use modcsp::mpp::ClosureBudget;
use modcsp::obstruction::{
    conservative_obstruction, three_element_obstruction, two_element_reduce, verify_certificate, GadgetBudget, ObstructionBudget,
    ObstructionCertificate, ObstructionOutcome,
};
use modcsp::polyclone::{
    enumerate_polymorphisms, has_maltsev, is_maltsev, is_polymorphism, maltsev_by_membership, minority, minority_from_maltsev, tables,
    OperationTable, DEFAULT_POLY_LIMIT,
};
use modcsp::reduce::{binarize_instance, reduce_instance, ReduceOptions};
use modcsp::structures::{add_constants, Relation, Sort, Structure};
use rand::Rng;
use serde_json::Value;

#[path = "common/mod.rs"]
mod common;

type Check = std::result::Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn e<E: std::fmt::Display>(x: E) -> String {
    x.to_string()
}

fn within(limit: Duration, t: Instant, what: &str) -> std::result::Result<(), String> {
    let el = t.elapsed();
    ensure(el < limit, || format!("{what} took {el:?}, limit {limit:?}"))
}

/// Operations listed column by column in the bundled indicator table.
fn upsilon_columns() -> std::result::Result<BTreeSet<Vec<usize>>, String> {
    let v: Value = serde_json::from_str(fixtures::UPSILON3_NEQ2_JSON).map_err(e)?;
    let rows = v["rows"].as_object().ok_or("table has no rows")?;
    let ncols = rows.values().next().and_then(Value::as_array).map_or(0, Vec::len);
    let mut cols = BTreeSet::new();
    for k in 0..ncols {
        let mut table = vec![0; 8];
        for (key, row) in rows {
            let idx = usize::from_str_radix(key, 2).map_err(e)?;
            table[idx] = row[k].as_u64().ok_or("non-numeric entry")? as usize;
        }
        cols.insert(table);
    }
    Ok(cols)
}

fn criterion_1() -> Check {
    let h = fixtures::neq2();
    let t = Instant::now();
    let ops = enumerate_polymorphisms(&h, 3, DEFAULT_POLY_LIMIT).map_err(e)?;
    within(Duration::from_secs(1), t, "enumeration")?;
    let got: BTreeSet<Vec<usize>> = ops.iter().map(|o| o.tables[0].clone()).collect();
    let want = upsilon_columns()?;
    ensure(ops.len() == 16, || format!("{} operations", ops.len()))?;
    ensure(got == want, || "operation set differs from the indicator table".into())?;
    Ok(format!("16 operations, equal to the tabulated columns, {:?}", t.elapsed()))
}

/// Independent oracle: all 256 ternary operations on {0,1}.
fn brute_maltsev(h: &Structure) -> bool {
    (0..256usize).any(|bits| {
        let op = OperationTable::from_fn(&[2], 3, |_, a| bits >> (a[0] * 4 + a[1] * 2 + a[2]) & 1);
        is_maltsev(&op) && is_polymorphism(&op, h)
    })
}

fn criterion_2() -> Check {
    ensure(has_maltsev(&fixtures::neq2()).map_err(e)?.is_some(), || "NEQ2 should have a Mal'tsev".into())?;
    ensure(has_maltsev(&fixtures::le2()).map_err(e)?.is_none(), || "LE2 should not have a Mal'tsev".into())?;
    let mut with = 0;
    for bits in 0..16usize {
        let tuples = (0..4).filter(|k| bits >> k & 1 == 1).map(|k| vec![k >> 1, k & 1]).collect();
        let h = Structure::single_sorted(2, vec![("R", tuples)]).map_err(e)?;
        let a = has_maltsev(&h).map_err(e)?.is_some();
        let b = maltsev_by_membership(&h, DEFAULT_POLY_LIMIT).map_err(e)?;
        let c = brute_maltsev(&h);
        ensure(a == b && b == c, || format!("relation #{bits}: search {a}, membership {b}, brute force {c}"))?;
        with += a as usize;
    }
    Ok(format!("16 binary relations agree ({with} with a Mal'tsev polymorphism)"))
}

fn criterion_3() -> Check {
    let t = Instant::now();
    let report = tables::verify_case_tables().map_err(e)?;
    within(Duration::from_secs(10), t, "table verification")?;
    let fails = report.unambiguous_failures();
    let square = report.square_failures();
    let tentative: Vec<String> =
        report.rows.iter().filter(|r| r.interpretation == "tentative").map(|r| format!("T{} r{}", r.table, r.row)).collect();
    if !fails.is_empty() || !square.is_empty() {
        let rows: Vec<String> =
            fails.iter().map(|r| format!("T{} r{}{}", r.table, r.row, if r.mirror { " (mirror)" } else { "" })).collect();
        return Err(format!("{} rows fail: {}; square-table failures: {}", rows.len(), rows.join(", "), square.len()));
    }
    Ok(format!("{} rows pass; tentative readings: {:?}", report.rows.len(), tentative))
}

/// Independent oracle: all maps, filtered by injectivity and preservation.
fn brute_injective(g: &Structure, h: &Structure) -> u128 {
    let (n, m) = (g.sorts[0].len(), h.sorts[0].len());
    let mut count = 0;
    for code in 0..m.pow(n as u32) {
        let map = common::unrank(code, &vec![m; n]);
        let inj = map.iter().collect::<BTreeSet<_>>().len() == n;
        if inj && g.relations[0].tuples().iter().all(|t| h.relations[0].contains(&[map[t[0]], map[t[1]]])) {
            count += 1;
        }
    }
    count
}

fn criterion_4() -> Check {
    let mut rng = common::rng(4);
    let mut cases = 0;
    for hn in 1..=3usize {
        for gn in 1..=4usize {
            for _ in 0..20 {
                let h = Structure::new(vec![Sort::numbered("V", hn)], vec![common::random_relation(&mut rng, "E", vec![0, 0], &[hn], 0.5)])
                    .map_err(e)?;
                let g = Structure::new(vec![Sort::numbered("V", gn)], vec![common::random_relation(&mut rng, "E", vec![0, 0], &[gn], 0.4)])
                    .map_err(e)?;
                let a = count_injective(&g, &h, &[]).map_err(e)?;
                let b = count_injective_mobius(&g, &h, &[], DEFAULT_PARTITION_CAP).map_err(e)?;
                let c = brute_injective(&g, &h);
                ensure(a == b && b == c, || format!("|H|={hn}, |G|={gn}: filtered {a}, Möbius {b}, brute force {c}"))?;
                cases += 1;
            }
        }
    }
    Ok(format!("{cases} cases agree"))
}

/// The Mal'tsev operation on `{0,1}` with `m(0,1,0) = t & 1`,
/// `m(1,0,1) = t >> 1`.
fn maltsev_of_types(types: &[usize]) -> OperationTable {
    OperationTable::from_fn(&vec![2; types.len()], 3, |s, a| match (a[0], a[1], a[2]) {
        (x, y, z) if y == z => x,
        (x, y, z) if x == y => z,
        (0, 1, 0) => types[s] & 1,
        _ => types[s] >> 1,
    })
}

fn criterion_5() -> Check {
    let mut tables = 0;
    for k in 1..=4usize {
        for code in 0..4usize.pow(k as u32) {
            let types = common::unrank(code, &vec![4; k]);
            let m = maltsev_of_types(&types);
            ensure(is_maltsev(&m), || format!("types {types:?} do not give a Mal'tsev operation"))?;
            let c = minority_from_maltsev(&m).map_err(e)?;
            let want = minority(k);
            for s in 0..k {
                for i in 0..8 {
                    let args = [i >> 2 & 1, i >> 1 & 1, i & 1];
                    ensure(c.h.apply(s, &args) == want.apply(s, &args), || format!("types {types:?}, sort {s}, input {args:?}"))?;
                }
            }
            tables += 1;
        }
    }
    Ok(format!("{tables} Mal'tsev tables yield the minority operation"))
}

fn criterion_6() -> Check {
    let mut rng = common::rng(6);
    let mut done = 0;
    let mut slowest = Duration::ZERO;
    while done < 40 {
        let f = common::random_two_automorphic(&mut rng);
        let h = common::random_closed_structure(&mut rng, &f);
        if !is_polymorphism(&f, &h) {
            return Err("generated structure is not closed under the polynomial".into());
        }
        let (nv, nc) = (rng.gen_range(1..=6), rng.gen_range(0..=6));
        let p = common::random_instance(&mut rng, &h, nv, nc);
        let t = Instant::now();
        let r = reduce_instance(&p, &h, &f, 2, &ReduceOptions::default()).map_err(e)?;
        let reduced = count_homs(&r.instance, &r.split.structure, &[]).map_err(e)? % 2;
        slowest = slowest.max(t.elapsed());
        within(Duration::from_secs(5), t, "reduction")?;
        let direct = count_homs_mod(&p, &h, 2, &[]).map_err(e)?;
        ensure(direct as u128 == reduced, || format!("instance #{done}: {direct} before, {reduced} after"))?;
        done += 1;
    }
    Ok(format!("{done} instances agree modulo 2; slowest {slowest:?}"))
}

fn criterion_7() -> Check {
    let mut rng = common::rng(7);
    let mut done = 0;
    while done < 40 {
        let sizes: Vec<usize> = (0..rng.gen_range(1..=2)).map(|_| rng.gen_range(1..=3)).collect();
        let nrel = rng.gen_range(1..=3);
        let h = common::random_structure(&mut rng, &sizes, nrel);
        let (nv, nc) = (rng.gen_range(1..=4), rng.gen_range(1..=4));
        let p = common::random_instance(&mut rng, &h, nv, nc);
        let pair = binarize_instance(&p, &h).map_err(e)?;
        let a = count_homs(&p, &h, &[]).map_err(e)?;
        let b = count_homs(&pair.bp, &pair.structure.bh, &[]).map_err(e)?;
        ensure(a == b, || format!("instance #{done}: {a} solutions, {b} after binarization"))?;
        done += 1;
    }
    Ok(format!("{done} instances have equal counts"))
}

fn mutations(c: &ObstructionCertificate) -> Vec<(&'static str, Value)> {
    let base = c.to_json();
    let mut out = Vec::new();
    let mut v = base.clone();
    v["p"] = Value::from(if c.p == 2 { 3 } else { 2 });
    out.push(("modulus", v));
    let mut v = base.clone();
    v["base_digest"] = Value::from("0".repeat(64));
    out.push(("base digest", v));
    let mut v = base.clone();
    if let Some(row) = v.pointer_mut("/terminal/matrix/0/0") {
        *row = Value::from(1 - row.as_u64().unwrap_or(0));
        out.push(("terminal matrix", v));
    }
    let mut v = base.clone();
    if let Some(steps) = v["steps"].as_array_mut() {
        if !steps.is_empty() {
            steps.pop();
            out.push(("dropped step", v));
        }
    }
    let mut v = base;
    v["structure_digest"] = Value::from("f".repeat(64));
    out.push(("structure digest", v));
    out
}

fn criterion_8() -> Check {
    let budget = ObstructionBudget {
        closure: ClosureBudget { max_relations: 80, max_rounds: 2, ..ClosureBudget::default() },
        gadget: GadgetBudget { max_candidates: 2000, ..GadgetBudget::default() },
    };
    let single = |tuples: Vec<Vec<usize>>| add_constants(&Structure::single_sorted(3, vec![("R", tuples)]).unwrap()).unwrap();
    let two_sorted = add_constants(
        &Structure::new(
            vec![Sort::numbered("A", 2), Sort::numbered("B", 2)],
            vec![Relation::new("R", vec![0, 1], vec![vec![0, 0], vec![0, 1], vec![1, 1]])],
        )
        .map_err(e)?,
    )
    .map_err(e)?;
    let cyclic = single(vec![vec![0, 0], vec![0, 1], vec![1, 1], vec![1, 2], vec![2, 2], vec![2, 0]]);
    let path = single(vec![vec![0, 1], vec![1, 0], vec![1, 2], vec![2, 1], vec![0, 0]]);
    let star = single(vec![vec![0, 0], vec![0, 1], vec![0, 2], vec![1, 1], vec![2, 2]]);
    let suite: Vec<(&str, Structure, u64)> = vec![
        ("LE2+constants", fixtures::le2c(), 2),
        ("LE2+constants", fixtures::le2c(), 3),
        ("two-sorted order", two_sorted, 2),
        ("3-cycle with loops", cyclic, 3),
        ("path with loop", path, 2),
        ("star with loops", star, 2),
    ];
    let mut lines = Vec::new();
    for (name, h, p) in &suite {
        let out = if h.sorts.len() == 1 && h.sorts[0].len() == 3 {
            three_element_obstruction(h, *p, &budget)
        } else {
            conservative_obstruction(h, *p, &budget)
        }
        .map_err(|x| format!("{name}, p={p}: {x}"))?;
        let ObstructionOutcome::Certificate(cert) = out else {
            return Err(format!("{name}, p={p}: no certificate"));
        };
        let cert = if h.sorts.iter().all(|s| s.len() <= 2) { two_element_reduce(&cert, h, *p, &budget).map_err(e)? } else { *cert };
        let report = verify_certificate(&cert, h, *p).map_err(e)?;
        ensure(report.ok, || format!("{name}, p={p}: {:?}", report.divergence))?;
        if *name == "LE2+constants" && *p == 2 {
            let pat = cert.terminal.as_ref().map(|t| t.pattern);
            ensure(pat == Some([[0, 1], [1, 1]]), || format!("LE2+constants terminates in {pat:?}"))?;
        }
        for (what, v) in mutations(&cert) {
            let rejected = match ObstructionCertificate::from_json(&v) {
                Ok(m) => !verify_certificate(&m, h, *p).map(|r| r.ok).unwrap_or(false),
                Err(_) => true,
            };
            ensure(rejected, || format!("{name}, p={p}: mutated {what} still verifies"))?;
        }
        lines.push(format!("{name}/p={p} ({})", cert.case));
    }
    Ok(format!("{} certificates verify, mutations rejected: {}", lines.len(), lines.join(", ")))
}

fn criterion_9() -> Check {
    let budget = ObstructionBudget::default();
    let v = classify_2element(&fixtures::le2c(), 2, &budget).map_err(e)?;
    ensure(v.label() == "SharpPHard", || format!("LE2+constants, p=2: {}", v.label()))?;
    let v = classify_2element(&fixtures::affine(), 2, &budget).map_err(e)?;
    ensure(v.label() == "PolyTime", || format!("affine, p=2: {}", v.label()))?;
    let v = classify_conservative(&fixtures::affine_c(), 3, &budget).map_err(e)?;
    ensure(v.label() == "OpenPerPaper", || format!("affine+constants, p=3: {}", v.label()))?;
    Ok("LE2+constants hard, affine tractable, conservative affine at p=3 open".into())
}

fn main() {
    let criteria: Vec<(&str, fn() -> Check)> = vec![
        ("indicator reproduction", criterion_1),
        ("Mal'tsev criterion", criterion_2),
        ("table verification", criterion_3),
        ("Möbius oracle equivalence", criterion_4),
        ("minority construction", criterion_5),
        ("reduction soundness", criterion_6),
        ("binarization parsimony", criterion_7),
        ("certificate integrity", criterion_8),
        ("classification sanity", criterion_9),
    ];
    let mut failed = 0;
    for (k, (name, check)) in criteria.into_iter().enumerate() {
        let t = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match result {
            Ok(detail) => println!("PASS criterion {} ({name}): {detail} [{:.2?}]", k + 1, t.elapsed()),
            Err(reason) => {
                failed += 1;
                println!("FAIL criterion {} ({name}): {reason} [{:.2?}]", k + 1, t.elapsed());
            }
        }
    }
    if failed > 0 {
        println!("{failed} criterion/criteria failed");
        std::process::exit(1);
    }
}
