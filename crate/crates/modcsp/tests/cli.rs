//! End-to-end runs of the `modcsp` binary.

use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::{json, Value};

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
}

fn modcsp(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_modcsp")).args(args).output().expect("binary runs");
    (out.status.code().unwrap_or(-1), String::from_utf8(out.stdout).unwrap(), String::from_utf8(out.stderr).unwrap())
}

fn json_of(s: &str) -> Value {
    serde_json::from_str(s).expect("stdout is JSON")
}

fn write(dir: &Path, name: &str, v: &Value) -> String {
    let p = dir.join(name);
    std::fs::write(&p, v.to_string()).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn count_edge_into_neq2() {
    let (code, out, _) = modcsp(&[
        "count",
        "--structure",
        data("neq2.json").to_str().unwrap(),
        "--instance",
        data("edge.json").to_str().unwrap(),
        "--mod",
        "2",
    ]);
    assert_eq!(code, 0);
    let v = json_of(&out);
    assert_eq!(v["count_mod_p"], 0);
    assert_eq!(v["count"], "2");
    let (code, out, _) =
        modcsp(&["count", "--structure", "@neq2", "--instance", data("edge.json").to_str().unwrap(), "--mod", "3", "--pin", "u=0"]);
    assert_eq!(code, 0);
    assert_eq!(json_of(&out)["count_mod_p"], 1);
}

#[test]
fn classify_then_verify_certificate() {
    let dir = tempfile::tempdir().unwrap();
    let (code, out, _) = modcsp(&["classify", "--structure", "@le2c", "--mod", "2"]);
    assert_eq!(code, 0);
    let v = json_of(&out);
    assert_eq!(v["verdict"], "SharpPHard");
    assert_eq!(v["details"]["certificate"]["terminal"]["pattern"], json!([[0, 1], [1, 1]]));
    let s = write(dir.path(), "s.json", &v["structure"]);
    let c = write(dir.path(), "verdict.json", &v);
    let (code, out, _) = modcsp(&["verify-cert", "--structure", &s, "--cert", &c, "--mod", "2"]);
    assert_eq!(code, 0);
    assert_eq!(json_of(&out)["ok"], true);
    let mut bad = v["details"]["certificate"].clone();
    bad["pattern"]["excluded"] = json!([0, 0]);
    let c = write(dir.path(), "bad.json", &bad);
    let (code, out, _) = modcsp(&["verify-cert", "--structure", &s, "--cert", &c, "--mod", "2"]);
    assert_eq!(code, 1);
    assert_eq!(json_of(&out)["ok"], false);
}

#[test]
fn outputs_do_not_depend_on_the_seed() {
    let a = modcsp(&["classify", "--structure", "@affine_c", "--mod", "3", "--seed", "1"]);
    let b = modcsp(&["classify", "--structure", "@affine_c", "--mod", "3", "--seed", "99"]);
    assert_eq!(a.0, 0);
    assert_eq!(a.1, b.1);
    assert_eq!(json_of(&a.1)["verdict"], "PolyTime");
}

#[test]
fn malformed_input_reports_its_location() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("broken.json");
    std::fs::write(&p, "{\"sorts\": [\n  {\"name\": \"H\",,}\n]}").unwrap();
    let (code, out, err) = modcsp(&["polys", "--structure", p.to_str().unwrap(), "--arity", "2"]);
    assert_eq!(code, 2);
    assert!(out.is_empty());
    assert!(err.contains("broken.json") && err.contains("line 2"), "{err}");
    let bad = write(
        dir.path(),
        "bad.json",
        &json!({"sorts": [{"name": "H", "elements": ["0"]}], "relations": [{"name": "R", "type": ["H"], "tuples": [["7"]]}]}),
    );
    let (code, _, err) = modcsp(&["autos", "--structure", &bad]);
    assert_eq!(code, 2);
    assert!(err.contains("bad.json"), "{err}");
}

#[test]
fn stuck_searches_exit_one() {
    // A Mal'tsev polymorphism survives, so no obstruction can exist.
    let (code, out, err) = modcsp(&["obstruction", "--structure", "@affine_c", "--mod", "2"]);
    assert_eq!(code, 1);
    assert!(out.is_empty());
    assert!(err.contains("Mal'tsev"), "{err}");
}

#[test]
fn matrix_autos_and_formulas() {
    let dir = tempfile::tempdir().unwrap();
    let m = write(dir.path(), "m.json", &json!({"p": 2, "rows": [[0, 1], [1, 0]]}));
    let g = write(dir.path(), "g.json", &json!({"n": 3, "edges": [[0, 1], [1, 2], [2, 0]]}));
    let (code, out, _) = modcsp(&["eval-matrix", "--matrix", &m, "--graph", &g]);
    assert_eq!(code, 0);
    // An odd cycle has no 2-colouring.
    assert_eq!(json_of(&out)["value"], 0);

    let (code, out, _) = modcsp(&["autos", "--structure", "@neq2", "--mod", "2", "--rigid-reduce"]);
    assert_eq!(code, 0);
    assert_eq!(json_of(&out)["reduct"]["sorts"][0]["elements"], json!([]));

    let phi = write(
        dir.path(),
        "phi.json",
        &json!({"free": [{"var": "x", "sort": "H"}, {"var": "z", "sort": "H"}], "blocks": [["y"]],
                "atoms": [{"relation": "R", "scope": ["x", "y"]}, {"relation": "R", "scope": ["y", "z"]}]}),
    );
    let (code, out, _) = modcsp(&["mpp-eval", "--structure", "@neq2", "--formula", &phi, "--mod", "2"]);
    assert_eq!(code, 0);
    assert_eq!(json_of(&out)["size"], 2);

    let (code, out, _) = modcsp(&["closure", "--structure", "@le2c", "--mod", "2", "--budget", "relations=10,rounds=1"]);
    assert_eq!(code, 0);
    assert!(!json_of(&out)["relations"].as_array().unwrap().is_empty());
}

#[test]
fn reduce_with_a_polynomial() {
    let dir = tempfile::tempdir().unwrap();
    let h = json!({"sorts": [{"name": "D", "elements": ["0", "1", "2"]}],
                   "relations": [{"name": "E", "type": ["D", "D"], "tuples": [["0", "1"], ["1", "0"], ["2", "2"]]}]});
    let hs = write(dir.path(), "h.json", &h);
    let inst = write(
        dir.path(),
        "p.json",
        &json!({"variables": [{"name": "u", "sort": "D"}, {"name": "v", "sort": "D"}, {"name": "w", "sort": "D"}],
        "constraints": [{"relation": "E", "scope": ["u", "v"]}, {"relation": "E", "scope": ["v", "w"]}]}),
    );
    // f(2, ·) swaps 0 and 1; every other section is the identity.
    let mut table = serde_json::Map::new();
    for x in 0..3 {
        for y in 0..3 {
            let v = if x == 2 && y < 2 { 1 - y } else { y };
            table.insert(format!("{x},{y}"), json!(v.to_string()));
        }
    }
    let fp = write(dir.path(), "f.json", &json!({"arity": 2, "tables": {"D": table}}));
    let (code, out, err) = modcsp(&["reduce", "--structure", &hs, "--instance", &inst, "--mod", "2", "--poly", &fp]);
    assert_eq!(code, 0, "{err}");
    let v = json_of(&out);
    assert!(v["ledger"].is_array());
    let rs = write(dir.path(), "rs.json", &v["structure"]);
    let ri = write(dir.path(), "ri.json", &v["instance"]);
    let before = json_of(&modcsp(&["count", "--structure", &hs, "--instance", &inst, "--mod", "2"]).1);
    let after = json_of(&modcsp(&["count", "--structure", &rs, "--instance", &ri, "--mod", "2"]).1);
    assert_eq!(before["count"], "3");
    assert_eq!(before["count_mod_p"], after["count_mod_p"]);
}

#[test]
fn verify_tables_reports_every_row() {
    let (code, out, _) = modcsp(&["verify-tables"]);
    let v = json_of(&out);
    assert!(v["rows"].as_array().unwrap().len() > 100);
    assert_eq!(code, if v["summary"]["all_pass"] == true { 0 } else { 1 });
}
