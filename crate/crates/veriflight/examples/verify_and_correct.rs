//! Verify a semantic action against an obstacle field and, when it is
//! hazardous, search for the minimal rotation that makes it safe.
//!
//! Run with: cargo run --example verify_and_correct

use veriflight::cbf::{correct_action, fuzzy_barrier, PredictionParams, VerdictStatus};
use veriflight::world::{AgentState, Obstacle, SemanticAction, SemanticClass, Vector};

fn main() {
    let state = AgentState::at_rest(Vector::new2(0.0, 0.0));
    let d_safe = 0.5;
    let obstacles = vec![
        Obstacle::Sphere { center: Vector::new2(3.0, 0.2), radius: 1.0 },
        Obstacle::Sphere { center: Vector::new2(2.0, -2.5), radius: 0.6 },
    ];
    let pp = PredictionParams::new(2.0, 17, 16);

    // A narrow tracking cone pointed straight at the first obstacle.
    let track_east = SemanticAction::new("TRACK_E", Vector::new2(1.0, 0.0), SemanticClass::Tracking);
    let verdict = fuzzy_barrier(&state, &track_east, &obstacles, &pp, d_safe);
    println!(
        "TRACK_E: {:?}, h_fuzzy = {:+.3} m (nearest obstacle #{:?})",
        verdict.status, verdict.h_fuzzy, verdict.nearest_obstacle
    );
    assert_eq!(verdict.status, VerdictStatus::Hazardous);

    // Correction keeps the cone width and rotates by the smallest angle that
    // verifies Safe.
    let (fixed, fixed_verdict) = correct_action(&state, &track_east, &obstacles, &pp, d_safe, 72);
    let turn = fixed.nominal.angle_to(&track_east.nominal).to_degrees();
    println!(
        "corrected: rotated {:.1} deg to ({:+.3}, {:+.3}), {:?}, h_fuzzy = {:+.3} m",
        turn,
        fixed.nominal.x(),
        fixed.nominal.y(),
        fixed_verdict.status,
        fixed_verdict.h_fuzzy
    );
    assert_eq!(fixed_verdict.status, VerdictStatus::Safe);

    // A wide evasion cone pointed away from everything verifies immediately.
    let evade_west = SemanticAction::new("EVADE_W", Vector::new2(-1.0, 0.0), SemanticClass::Evasion);
    let v = fuzzy_barrier(&state, &evade_west, &obstacles, &pp, d_safe);
    println!("EVADE_W: {:?}, h_fuzzy = {:+.3} m", v.status, v.h_fuzzy);
}
