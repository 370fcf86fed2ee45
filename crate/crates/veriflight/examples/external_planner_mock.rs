//! Drive the external-planner path with a mock chat backend: prompt
//! assembly, reply parsing (exact and fuzzy), and the scripted fallback on
//! garbage replies. No network access is needed.
//!
//! Run with: cargo run --example external_planner_mock

use veriflight::planner::{
    assemble_prompt, plan_external, Catalog, ChatBackend, Observation, PlanSource, PlannerError,
};
use veriflight::world::{AgentState, Obstacle, Vector};

struct CannedBackend(&'static str);

impl ChatBackend for CannedBackend {
    fn complete(&self, _prompt: &str) -> Result<String, PlannerError> {
        Ok(self.0.to_string())
    }
}

fn main() {
    let catalog = Catalog::standard(2);
    let obs = Observation {
        pursuer: AgentState::at_rest(Vector::new2(0.0, 0.0)),
        target: AgentState::at_rest(Vector::new2(10.0, 3.0)),
        obstacles: vec![Obstacle::Sphere { center: Vector::new2(5.0, 1.0), radius: 0.8 }],
        last_verdict: None,
        last_corrected: None,
        step: 0,
    };

    let prompt = assemble_prompt(&obs, "threat level: near", &catalog);
    println!("--- prompt sent to the endpoint ---\n{prompt}\n");

    // Exact catalog name.
    let p = plan_external(&obs, "", &catalog, &CannedBackend("TRACK_NE"), 0, None);
    println!("reply 'TRACK_NE'          -> {} ({:?})", p.action.name, p.source);
    assert_eq!(p.source, PlanSource::External);

    // Fuzzy phrasing still resolves through the synonym sets.
    let p = plan_external(&obs, "", &catalog, &CannedBackend("please evade to the northwest"), 0, None);
    println!("reply 'please evade ...'  -> {} ({:?})", p.action.name, p.source);

    // Unparseable output falls back to the scripted planner.
    let p = plan_external(&obs, "", &catalog, &CannedBackend("segmentation fault"), 1, None);
    println!("reply 'segmentation ...'  -> {} ({:?})", p.action.name, p.source);
    assert_eq!(p.source, PlanSource::Fallback);
}
