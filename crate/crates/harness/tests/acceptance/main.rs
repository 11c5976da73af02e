//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.
//!
//! `ACCEPTANCE_ONLY=2,3` restricts the run to the listed criteria.

mod algorithms;
mod common;
mod distributed;
mod gradients;
mod learning;
mod nstep;
mod projection;
mod scoring;
mod wire;

use std::process::ExitCode;
use std::time::Instant;

type Check = fn() -> Result<String, String>;

fn main() -> ExitCode {
    // Ignore libtest-style arguments such as `--nocapture` or filters.
    let only: Option<Vec<u32>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let criteria: [(u32, &str, Check); 9] = [
        (1, "gradient soundness", gradients::check),
        (2, "projection oracle", projection::check),
        (3, "n-step oracle", nstep::check),
        (4, "algorithm contracts", algorithms::check),
        (5, "desk-scale learning", learning::check_scalar),
        (6, "distributional parity", learning::check_quantile),
        (7, "distributed equivalence and liveness", distributed::check),
        (8, "evaluation and aggregation arithmetic", scoring::check),
        (9, "wire protocol", wire::check),
    ];
    let mut failed = 0;
    let mut lines = Vec::new();
    for (id, name, check) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let started = Instant::now();
        let result = std::panic::catch_unwind(check).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = started.elapsed().as_secs_f64();
        let line = match &result {
            Ok(detail) => format!("PASS {id} {name} ({secs:.1}s): {detail}"),
            Err(detail) => {
                failed += 1;
                format!("FAIL {id} {name} ({secs:.1}s): {detail}")
            }
        };
        println!("{line}");
        lines.push(line);
    }
    println!("\nacceptance summary");
    for l in &lines {
        println!("{}", l.split(':').next().unwrap_or(l));
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
