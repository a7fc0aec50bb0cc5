//! Acceptance gate: every criterion of the verification suite at the
//! default configuration, one PASS/FAIL line each.

use std::process::ExitCode;
use std::time::Instant;

use chemostokes::cli::RunConfig;
use chemostokes::verify::run_suite;

fn main() -> ExitCode {
    let start = Instant::now();
    let setup = match RunConfig::default().setup() {
        Ok(s) => s,
        Err(e) => {
            eprintln!("acceptance: default configuration rejected: {e}");
            return ExitCode::FAILURE;
        }
    };
    let report = match run_suite(&setup, |_| {}) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("acceptance: suite aborted: {e}");
            return ExitCode::FAILURE;
        }
    };
    for c in &report.criteria {
        println!("{}", c.summary_line());
        for check in c.checks.iter().filter(|k| !k.passed) {
            println!("    {}: {}", check.name, check.detail);
        }
    }
    let failed = report.criteria.iter().filter(|c| !c.passed).count();
    println!(
        "acceptance: {} of {} criteria passed in {:.0} s",
        report.criteria.len() - failed,
        report.criteria.len(),
        start.elapsed().as_secs_f64()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
