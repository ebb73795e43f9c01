//! Command-line front end: argument parsing, file I/O and dispatch.
//!
//! Results go to the output stream as JSON, diagnostics to the error stream.
//! Exit codes: 0 on success, 1 when a search gets stuck or a check fails,
//! 2 on malformed input.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use crate::autos::{automorphisms, p_automorphisms, p_rigid_reduce};
use crate::classify::{classify, preprocess, VerdictKind};
use crate::error::{check_prime, Error, Result};
use crate::fixtures;
use crate::homcount::{count_homs, eval_partition_function, Digraph, FpMatrix};
use crate::mpp::{closure_search, eval_mpp, maltsev_for_closure, ClosureBudget, ClosureStatus, MppFormula};
use crate::obstruction::{
    conservative_obstruction, three_element_obstruction, two_element_reduce, verify_certificate, GadgetBudget, ObstructionBudget,
    ObstructionCertificate, ObstructionOutcome,
};
use crate::polyclone::{enumerate_polymorphisms, has_maltsev, tables, OperationTable};
use crate::reduce::{reduce_instance, ReduceOptions, DEFAULT_NODE_LIMIT};
use crate::structures::{CspInstance, Structure};

pub const EXIT_OK: i32 = 0;
pub const EXIT_STUCK: i32 = 1;
pub const EXIT_INPUT: i32 = 2;

/// Counting CSPs modulo a prime: structures, polymorphisms, modular
/// closures, hardness certificates and reductions.
#[derive(Parser, Debug)]
#[command(name = "modcsp", version)]
pub struct RunConfig {
    /// Seed for randomized property checks; results of the subcommands
    /// themselves do not depend on it.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Write the JSON result to this file instead of standard output.
    #[arg(long, short, global = true)]
    pub output: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct StructureArg {
    /// Structure JSON file, or `@name` for a bundled fixture
    /// (neq2, le2, le2c, affine, affine_c).
    #[arg(long)]
    pub structure: String,
}

#[derive(Args, Debug, Clone)]
pub struct BudgetArgs {
    /// Closure budget as `key=value,…` (atoms, arity, blocks, size,
    /// relations, rounds).
    #[arg(long, default_value = "")]
    pub budget: String,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Count homomorphisms from an instance to a structure modulo p.
    Count {
        #[command(flatten)]
        s: StructureArg,
        #[arg(long)]
        instance: PathBuf,
        #[arg(long = "mod")]
        p: u64,
        /// Pin a variable: `var=element`; repeatable.
        #[arg(long = "pin")]
        pins: Vec<String>,
    },
    /// Evaluate a partition function `Z_M(G)` modulo p.
    EvalMatrix {
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long)]
        graph: PathBuf,
    },
    /// List automorphisms (of order p with `--mod`), or the p-rigid reduct.
    Autos {
        #[command(flatten)]
        s: StructureArg,
        #[arg(long = "mod")]
        p: Option<u64>,
        #[arg(long)]
        rigid_reduce: bool,
    },
    /// Enumerate polymorphisms of a given arity.
    Polys {
        #[command(flatten)]
        s: StructureArg,
        #[arg(long)]
        arity: usize,
        /// Refuse to enumerate more than this many operations.
        #[arg(long, default_value_t = 1_000_000)]
        limit: usize,
    },
    /// Decide whether the structure has a Mal'tsev polymorphism; with
    /// `--mod`, also search the modular closure.
    Maltsev {
        #[command(flatten)]
        s: StructureArg,
        #[arg(long = "mod")]
        p: Option<u64>,
        #[command(flatten)]
        b: BudgetArgs,
    },
    /// Evaluate a modular primitive-positive formula.
    MppEval {
        #[command(flatten)]
        s: StructureArg,
        #[arg(long)]
        formula: PathBuf,
        #[arg(long = "mod")]
        p: u64,
    },
    /// Enumerate relations of the modular closure within a budget.
    Closure {
        #[command(flatten)]
        s: StructureArg,
        #[arg(long = "mod")]
        p: u64,
        #[command(flatten)]
        b: BudgetArgs,
    },
    /// Search for a hardness certificate.
    Obstruction {
        #[command(flatten)]
        s: StructureArg,
        #[arg(long = "mod")]
        p: u64,
        #[command(flatten)]
        b: BudgetArgs,
        /// Normalize first (p-rigid reduct plus constants); the output then
        /// contains the structure the certificate refers to.
        #[arg(long)]
        preprocess: bool,
    },
    /// Replay a hardness certificate.
    VerifyCert {
        #[command(flatten)]
        s: StructureArg,
        #[arg(long)]
        cert: PathBuf,
        #[arg(long = "mod")]
        p: u64,
    },
    /// Reduce an instance with a p-automorphic polynomial.
    Reduce {
        #[command(flatten)]
        s: StructureArg,
        #[arg(long)]
        instance: PathBuf,
        #[arg(long = "mod")]
        p: u64,
        #[arg(long)]
        poly: PathBuf,
        #[arg(long, default_value_t = DEFAULT_NODE_LIMIT)]
        node_limit: u64,
    },
    /// Classify the counting problem modulo p.
    Classify {
        #[command(flatten)]
        s: StructureArg,
        #[arg(long = "mod")]
        p: u64,
        #[command(flatten)]
        b: BudgetArgs,
        /// Largest free arity of closure formulas.
        #[arg(long)]
        budget_arity: Option<usize>,
        /// Number of closure saturation rounds.
        #[arg(long)]
        budget_depth: Option<usize>,
        /// Largest gadget size.
        #[arg(long)]
        gadget_vertices: Option<usize>,
    },
    /// Check every row of the bundled term tables.
    VerifyTables {
        /// Alternative table data file.
        #[arg(long)]
        tables: Option<PathBuf>,
    },
}

/// A JSON result and the exit code it should produce.
pub struct Outcome {
    pub value: Value,
    pub code: i32,
}

impl Outcome {
    fn ok(value: Value) -> Self {
        Outcome { value, code: EXIT_OK }
    }

    fn stuck(value: Value) -> Self {
        Outcome { value, code: EXIT_STUCK }
    }

    fn by(ok: bool, value: Value) -> Self {
        Outcome { value, code: if ok { EXIT_OK } else { EXIT_STUCK } }
    }
}

fn read_json(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Json(format!("{}: {e}", path.display())))
}

fn at<T>(path: &Path, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))
}

pub fn load_structure(spec: &str) -> Result<Structure> {
    if let Some(name) = spec.strip_prefix('@') {
        return fixtures::by_name(name).ok_or_else(|| Error::Unknown { kind: "fixture", name: name.into() });
    }
    let path = Path::new(spec);
    at(path, Structure::from_json(&read_json(path)?))
}

fn load_instance(path: &Path, h: &Structure) -> Result<CspInstance> {
    at(path, CspInstance::from_json(&read_json(path)?, h))
}

fn load<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_value(read_json(path)?).map_err(|e| Error::Json(format!("{}: {e}", path.display())))
}

fn closure_budget(b: &BudgetArgs) -> Result<ClosureBudget> {
    ClosureBudget::parse(&b.budget)
}

fn parse_pins(pins: &[String], inst: &CspInstance, h: &Structure) -> Result<Vec<(usize, usize)>> {
    pins.iter()
        .map(|p| {
            let (var, elt) = p.split_once('=').ok_or_else(|| Error::Invalid(format!("pin `{p}` needs var=element")))?;
            let v = inst.var_index(var).ok_or_else(|| Error::Unknown { kind: "variable", name: var.into() })?;
            let sort = &h.sorts[inst.variables[v].sort];
            let e = sort.index_of(elt).ok_or_else(|| Error::Unknown { kind: "element", name: elt.into() })?;
            Ok((v, e))
        })
        .collect()
}

fn obstruction_json(out: &ObstructionOutcome, h: &Structure) -> Outcome {
    let value = out.to_json(h);
    match out {
        ObstructionOutcome::Certificate(_) => Outcome::ok(value),
        _ => Outcome::stuck(value),
    }
}

fn run_obstruction(h: &Structure, p: u64, budget: &ObstructionBudget) -> Result<ObstructionOutcome> {
    if h.sorts.len() == 1 && h.sorts[0].len() == 3 {
        return three_element_obstruction(h, p, budget);
    }
    let out = conservative_obstruction(h, p, budget)?;
    if let ObstructionOutcome::Certificate(c) = &out {
        if h.sorts.iter().all(|s| s.len() <= 2) && c.pattern.coords.len() > 2 {
            return Ok(ObstructionOutcome::Certificate(Box::new(two_element_reduce(c, h, p, budget)?)));
        }
    }
    Ok(out)
}

/// Runs one parsed command.
pub fn execute(cfg: &RunConfig) -> Result<Outcome> {
    Ok(match &cfg.command {
        Command::Count { s, instance, p, pins } => {
            check_prime(*p)?;
            let h = load_structure(&s.structure)?;
            let inst = load_instance(instance, &h)?;
            let pins = parse_pins(pins, &inst, &h)?;
            let n = count_homs(&inst, &h, &pins)?;
            Outcome::ok(json!({"p": p, "count_mod_p": (n % *p as u128) as u64, "count": n.to_string()}))
        }
        Command::EvalMatrix { matrix, graph } => {
            let m: FpMatrix = load(matrix)?;
            let m = at(matrix, FpMatrix::new(m.p, m.rows))?;
            let g: Digraph = load(graph)?;
            Outcome::ok(json!({"p": m.p, "value": at(graph, eval_partition_function(&m, &g))?}))
        }
        Command::Autos { s, p, rigid_reduce } => {
            let h = load_structure(&s.structure)?;
            if *rigid_reduce {
                let p = p.ok_or_else(|| Error::Invalid("--rigid-reduce needs --mod".into()))?;
                let (r, chain) = p_rigid_reduce(&h, p)?;
                let pre = crate::classify::Preprocessed {
                    structure: r.clone(),
                    rigid_chain: chain,
                    dropped_sorts: vec![],
                    constants_added: false,
                };
                Outcome::ok(json!({"p": p, "reduct": r.to_json(), "chain": pre.trail_json(&h)["rigid_chain"]}))
            } else {
                let autos = match p {
                    Some(p) => p_automorphisms(&h, *p)?,
                    None => automorphisms(&h)?,
                };
                Outcome::ok(json!({"p": p, "count": autos.len(), "automorphisms": autos.iter().map(|a| a.to_json(&h)).collect::<Vec<_>>()}))
            }
        }
        Command::Polys { s, arity, limit } => {
            let h = load_structure(&s.structure)?;
            let ops = enumerate_polymorphisms(&h, *arity, *limit)?;
            Outcome::ok(json!({"arity": arity, "count": ops.len(), "polymorphisms": ops.iter().map(|o| o.to_json(&h)).collect::<Vec<_>>()}))
        }
        Command::Maltsev { s, p, b } => {
            let h = load_structure(&s.structure)?;
            let m = has_maltsev(&h)?;
            let mut v = json!({"has_maltsev": m.is_some(), "witness": m.map(|m| m.to_json(&h))});
            if let Some(p) = p {
                v["closure"] = maltsev_for_closure(&h, *p, &closure_budget(b)?)?.to_json(&h);
            }
            Outcome::ok(v)
        }
        Command::MppEval { s, formula, p } => {
            check_prime(*p)?;
            let h = load_structure(&s.structure)?;
            let phi = at(formula, MppFormula::from_json(&read_json(formula)?, &h))?;
            let e = eval_mpp(&phi, &h, *p)?;
            Outcome::ok(
                json!({"p": p, "definition": phi.render(), "relation": h.relation_to_json(&e.relation), "size": e.relation.len(), "strict": e.strict}),
            )
        }
        Command::Closure { s, p, b } => {
            let h = load_structure(&s.structure)?;
            let budget = closure_budget(b)?;
            let r = closure_search(&h, *p, &budget)?;
            let fixpoint = r.status == ClosureStatus::Fixpoint;
            Outcome::ok(json!({
                "p": p,
                "budget": budget,
                "status": r.status,
                "fixpoint": fixpoint,
                "rounds": r.rounds,
                "relations": r.relations.iter().map(|d| d.to_json(&h)).collect::<Vec<_>>(),
            }))
        }
        Command::Obstruction { s, p, b, preprocess: pre } => {
            let h = load_structure(&s.structure)?;
            let budget = ObstructionBudget { closure: closure_budget(b)?, gadget: GadgetBudget::default() };
            let h = if *pre { preprocess(&h, *p)?.structure } else { h };
            let mut o = obstruction_json(&run_obstruction(&h, *p, &budget)?, &h);
            if *pre {
                o.value["structure"] = h.to_json();
            }
            o
        }
        Command::VerifyCert { s, cert, p } => {
            let h = load_structure(&s.structure)?;
            let value = read_json(cert)?;
            let value = value.pointer("/details/certificate").or_else(|| value.get("certificate")).cloned().unwrap_or(value);
            let c = at(cert, ObstructionCertificate::from_json(&value))?;
            let r = verify_certificate(&c, &h, *p)?;
            Outcome::by(r.ok, serde_json::to_value(&r)?)
        }
        Command::Reduce { s, instance, p, poly, node_limit } => {
            let h = load_structure(&s.structure)?;
            let inst = load_instance(instance, &h)?;
            let f = at(poly, OperationTable::from_json(&read_json(poly)?, &h))?;
            let r = reduce_instance(&inst, &h, &f, *p, &ReduceOptions { node_limit: *node_limit, witness: None })?;
            Outcome::ok(r.to_json(&h))
        }
        Command::Classify { s, p, b, budget_arity, budget_depth, gadget_vertices } => {
            let h = load_structure(&s.structure)?;
            let mut budget = ObstructionBudget { closure: closure_budget(b)?, gadget: GadgetBudget::default() };
            if let Some(k) = budget_arity {
                budget.closure.max_free_arity = *k;
            }
            if let Some(d) = budget_depth {
                budget.closure.max_rounds = *d;
            }
            if let Some(n) = gadget_vertices {
                budget.gadget.max_vertices = *n;
            }
            budget.closure.validate()?;
            let v = classify(&h, *p, &budget)?;
            let stuck = matches!(v.kind, VerdictKind::UnknownWithinBudget { .. });
            Outcome::by(!stuck, v.to_json())
        }
        Command::VerifyTables { tables: path } => {
            let report = match path {
                Some(p) => {
                    let text = std::fs::read_to_string(p).map_err(|e| Error::Io(format!("{}: {e}", p.display())))?;
                    at(p, tables::verify_case_tables_from(&text))?
                }
                None => tables::verify_case_tables()?,
            };
            Outcome::by(report.all_pass(), report.to_json())
        }
    })
}

fn error_code(e: &Error) -> i32 {
    match e {
        Error::Guard { .. } | Error::Precondition(_) => EXIT_STUCK,
        _ => EXIT_INPUT,
    }
}

/// Parses `args` (including the program name), runs the command and writes
/// to the given streams. Returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cfg = match RunConfig::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { err.write_all(text.as_bytes()) } else { out.write_all(text.as_bytes()) };
            return code;
        }
    };
    let outcome = match execute(&cfg) {
        Ok(o) => o,
        Err(e) => {
            let _ = writeln!(err, "modcsp: {e}");
            return error_code(&e);
        }
    };
    let text = serde_json::to_string_pretty(&outcome.value).expect("JSON values serialize") + "\n";
    let written = match &cfg.output {
        Some(path) => std::fs::write(path, &text).map_err(|e| Error::Io(format!("{}: {e}", path.display()))),
        None => out.write_all(text.as_bytes()).map_err(Error::from),
    };
    if let Err(e) = written {
        let _ = writeln!(err, "modcsp: {e}");
        return EXIT_INPUT;
    }
    if outcome.code == EXIT_STUCK {
        let _ = writeln!(err, "modcsp: no definite result (see the JSON report)");
    }
    outcome.code
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_args(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = run(std::iter::once("modcsp").chain(args.iter().copied()), &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn usage_errors_exit_two() {
        assert_eq!(run_args(&["count"]).0, EXIT_INPUT);
        assert_eq!(run_args(&["frobnicate"]).0, EXIT_INPUT);
        let (code, _, err) = run_args(&["polys", "--structure", "@nosuch", "--arity", "2"]);
        assert_eq!(code, EXIT_INPUT);
        assert!(err.contains("nosuch"));
    }

    #[test]
    fn help_goes_to_stdout() {
        let (code, out, _) = run_args(&["--help"]);
        assert_eq!(code, EXIT_OK);
        assert!(out.contains("verify-tables"));
    }

    #[test]
    fn fixtures_by_name() {
        let (code, out, _) = run_args(&["polys", "--structure", "@neq2", "--arity", "3"]);
        assert_eq!(code, EXIT_OK);
        let v: Value = serde_json::from_str(&out).unwrap();
        assert_eq!(v["count"], 16);
        let (code, out, _) = run_args(&["maltsev", "--structure", "@le2"]);
        assert_eq!(code, EXIT_OK);
        assert!(out.contains("\"has_maltsev\": false"));
    }

    #[test]
    fn not_prime_is_an_input_error() {
        assert_eq!(run_args(&["autos", "--structure", "@neq2", "--mod", "4"]).0, EXIT_INPUT);
    }
}
