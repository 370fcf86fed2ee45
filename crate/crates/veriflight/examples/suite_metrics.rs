//! Run the adversarial ablation suite (verifier on vs. off) and print the
//! metrics report, CSV, and the comparison table against reference points.
//!
//! Run with: cargo run --example suite_metrics

use veriflight::metrics::{builtin_suite, comparison_table, report_csv, run_suite};
use veriflight::planner::ScriptedPlanner;

fn main() {
    let spec = builtin_suite("S4", 0, None).expect("builtin suite");
    let planner = ScriptedPlanner::new(2);
    let outputs = run_suite(&spec, &planner).expect("suite runs");
    let report = &outputs.report;

    for c in &report.results {
        println!(
            "{}: success {:.4}  safe {:.4}  zero-danger {:.4}",
            c.config, c.success_rate, c.safe_rate, c.zero_danger_rate
        );
    }

    println!("\nCSV:\n{}", report_csv(report));
    println!("{}", comparison_table(report));
}
