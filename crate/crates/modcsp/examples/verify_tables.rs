//! Checks every row of the bundled term tables and prints a summary.

fn main() -> modcsp::Result<()> {
    let report = modcsp::polyclone::tables::verify_case_tables()?;
    for r in &report.rows {
        println!(
            "T{} r{:<2}{} {:<9} {:<10} n={:<4} {}  {}",
            r.table,
            r.row,
            if r.mirror { "m" } else { " " },
            format!("{:?}", r.status),
            r.interpretation,
            r.completions,
            r.term,
            r.rediscovered.as_deref().map(|t| format!("(works instead: {t})")).unwrap_or_default()
        );
    }
    for s in &report.square_rows {
        println!("square r{} {:?} {} {:?}", s.row, s.status, s.printed, s.witness);
    }
    if std::env::args().any(|a| a == "--json") {
        println!("{}", serde_json::to_string_pretty(&report.to_json()).unwrap());
    }
    println!("{}", report.summary());
    Ok(())
}
