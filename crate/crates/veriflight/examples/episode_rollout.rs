//! Roll out one pursuit episode with the scripted planner, serialize it to
//! JSONL, and audit the record for internal consistency.
//!
//! Run with: cargo run --example episode_rollout

use veriflight::planner::ScriptedPlanner;
use veriflight::sim::{audit_episode, episode_jsonl_string, run_episode, Toggles};
use veriflight::world::{Scenario, StrategySpec};

fn main() {
    let scenario = Scenario::baseline(StrategySpec::StraightLine { heading: None, speed: 1.2 });
    let planner = ScriptedPlanner::new(scenario.dimension);
    let toggles = Toggles { use_cbf: true, use_rag: true };

    let record = run_episode(&scenario, &planner, toggles, 7).expect("episode runs");
    println!(
        "seed 7: {:?} after {} steps, {} danger steps",
        record.outcome, record.total_steps, record.danger_steps
    );

    // Count how often the safety controller had to intervene.
    let safety_steps = record
        .steps
        .iter()
        .filter(|s| matches!(s.controller, veriflight::sim::ControllerKind::Safety))
        .count();
    println!("safety controller active on {} / {} steps", safety_steps, record.total_steps);

    let jsonl = episode_jsonl_string(&record);
    println!("serialized episode: {} lines", jsonl.lines().count());

    audit_episode(&record).expect("fresh record must audit clean");
    println!("audit: clean");

    // A tampered record is caught.
    let mut tampered = record.clone();
    tampered.steps[3].danger = !tampered.steps[3].danger;
    let err = audit_episode(&tampered).expect_err("tampered record must fail");
    println!("tampered audit: step {} – {}", err.step, err.reason);
}
