//! Full acceptance battery on the desk scenario, one line per criterion.
//! Runs without the libtest harness so the lines always reach stdout.
//! Criterion 8 dominates the run time.

use std::path::Path;
use std::process::ExitCode;

use rtinv_harness::acceptance::{run, ALL};
use rtinv_harness::Scenario;

fn main() -> ExitCode {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios/desk.json");
    let scenario = Scenario::load(&path).expect("desk scenario loads");
    let outcomes = run(&scenario, &ALL, |o| println!("{}", o.line())).expect("battery runs");
    let failed: Vec<usize> = outcomes.iter().filter(|o| !o.passed).map(|o| o.id).collect();
    println!("acceptance: {} of {} criteria passed", outcomes.len() - failed.len(), outcomes.len());
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failed criteria {failed:?}");
        ExitCode::FAILURE
    }
}
