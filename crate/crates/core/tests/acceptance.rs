//! Runs every acceptance criterion at its stated tolerance and prints one line each.

use std::process::ExitCode;

use twoscale::verify::{run_criterion, Lab, VerifySettings, CRITERIA};

fn main() -> ExitCode {
    let lab = Lab::new(VerifySettings::default());
    let mut reports = Vec::new();
    for id in CRITERIA {
        let r = run_criterion(&lab, id);
        print!("{}", r.table());
        reports.push(r);
    }
    println!("\nacceptance summary");
    for r in &reports {
        println!("{}", r.summary_line());
    }
    let failed = reports.iter().filter(|r| !r.passed()).count();
    println!("acceptance: {} passed, {failed} failed", reports.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
