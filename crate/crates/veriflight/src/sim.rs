//! Discrete-time pursuit-evasion episodes: perception, retrieval, planning,
//! verification, control dispatch, integration, and danger accounting, plus
//! the JSON-lines record format and its replay auditor.

use crate::cbf::{
    correct_action, discretize_cone, fuzzy_barrier, DirectionCone, PredictionParams, Verdict,
    VerdictStatus,
};
use crate::graph::{build_graph, render_context, retrieve, Embedder, KnowledgeGraph, Query, Subgraph, DEFAULT_KB};
use crate::planner::{compass_word_for, safety_control, task_control, Observation, PlanResult, Planner};
use crate::world::{
    clamp_speed, generate_scenario, signed_clearance, AgentState, Dynamics, Obstacle, Scenario,
    SemanticAction, SemanticClass, StrategySpec, Vector, WorldError,
};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    World(#[from] WorldError),
    #[error("record format: {0}")]
    Record(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Error)]
#[error("audit mismatch at step {step}: {reason}")]
pub struct AuditError {
    pub step: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Toggles {
    pub use_cbf: bool,
    pub use_rag: bool,
}

impl Default for Toggles {
    fn default() -> Self {
        Self { use_cbf: true, use_rag: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ControllerKind {
    Task,
    Safety,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    Captured,
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub pursuer: AgentState,
    pub target: AgentState,
    pub action: SemanticAction,
    pub verdict: Option<Verdict>,
    pub controller: ControllerKind,
    pub danger: bool,
    pub capture: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub scenario: Scenario,
    pub seed: u64,
    pub toggles: Toggles,
    pub steps: Vec<StepRecord>,
    pub outcome: Outcome,
    pub total_steps: usize,
    pub danger_steps: usize,
}

/// Replanning cadence in simulation steps; the verifier still runs every step.
pub const K_PLAN: usize = 5;

/// Explicit Euler with a speed cap on the commanded input.
pub fn step_agent(state: &AgentState, u: &Vector, dynamics: &Dynamics) -> AgentState {
    let v = clamp_speed(u, dynamics.v_max);
    AgentState { position: state.position.add(&v.scale(dynamics.dt)), velocity: v }
}

/// Concrete target strategy resolved from a scenario spec.
#[derive(Debug, Clone, PartialEq)]
pub enum TargetStrategy {
    StraightLine { heading: Vector, speed: f64 },
    MatrixGame { headings: usize, horizon_steps: usize },
}

impl TargetStrategy {
    pub fn from_spec(spec: &StrategySpec, dim: usize, v_max: f64, rng: &mut ChaCha8Rng) -> Self {
        match spec {
            StrategySpec::StraightLine { heading, speed } => {
                let h = match heading {
                    Some(h) => h.normalized().expect("strategy heading must be nonzero"),
                    None => {
                        let a = rng.gen_range(0.0..std::f64::consts::TAU);
                        if dim == 2 {
                            Vector::from_angle2(a)
                        } else {
                            Vector::new3(a.cos(), a.sin(), 0.0)
                        }
                    }
                };
                Self::StraightLine { heading: h, speed: speed.min(v_max) }
            }
            StrategySpec::MatrixGame { headings, horizon_steps } => {
                Self::MatrixGame { headings: (*headings).max(2), horizon_steps: (*horizon_steps).max(1) }
            }
        }
    }
}

fn planar_heading(k: usize, n: usize, dim: usize) -> Vector {
    let a = k as f64 * std::f64::consts::TAU / n as f64;
    if dim == 2 {
        Vector::from_angle2(a)
    } else {
        Vector::new3(a.cos(), a.sin(), 0.0)
    }
}

/// Minimum inflated-clearance shortfall along a straight segment, sampled.
fn path_breach(start: &Vector, end: &Vector, obstacles: &[Obstacle], d_safe: f64) -> f64 {
    let mut worst = 0.0f64;
    for s in 0..10 {
        let t = s as f64 / 9.0;
        let p = start.add(&end.sub(start).scale(t));
        for o in obstacles {
            worst = worst.max(d_safe - signed_clearance(&p, o));
        }
    }
    worst
}

/// Target control for this step. The matrix-game evader plays the maximin row
/// of a heading-vs-heading payoff of horizon-end separation minus an obstacle
/// breach penalty.
pub fn target_step(
    state: &AgentState,
    strategy: &TargetStrategy,
    pursuer: &AgentState,
    obstacles: &[Obstacle],
    dynamics: &Dynamics,
    pursuer_v_max: f64,
    d_safe: f64,
) -> Vector {
    match strategy {
        TargetStrategy::StraightLine { heading, speed } => heading.scale(*speed),
        TargetStrategy::MatrixGame { headings, horizon_steps } => {
            let n = *headings;
            let horizon = *horizon_steps as f64 * dynamics.dt;
            let dim = state.position.dim();
            let mut best_row = 0usize;
            let mut best_value = f64::NEG_INFINITY;
            for i in 0..n {
                let hi = planar_heading(i, n, dim);
                let t_end = state.position.add(&hi.scale(dynamics.v_max * horizon));
                let penalty = 10.0 * path_breach(&state.position, &t_end, obstacles, d_safe);
                let mut row_min = f64::INFINITY;
                for j in 0..n {
                    let hj = planar_heading(j, n, dim);
                    let p_end = pursuer.position.add(&hj.scale(pursuer_v_max * horizon));
                    row_min = row_min.min(t_end.dist(&p_end) - penalty);
                }
                if row_min > best_value {
                    best_value = row_min;
                    best_row = i;
                }
            }
            planar_heading(best_row, n, dim).scale(dynamics.v_max)
        }
    }
}

fn threat_bucket(min_clearance: f64) -> &'static str {
    if min_clearance > 2.0 {
        "clear"
    } else if min_clearance >= 0.5 {
        "near"
    } else {
        "critical"
    }
}

fn class_word(class: &SemanticClass) -> &'static str {
    match class {
        SemanticClass::Tracking => "tracking",
        SemanticClass::Evasion => "evasion",
        SemanticClass::Custom(_) => "tracking",
    }
}

/// Observation-to-query mapping: threat bucket and bearing sector drive the
/// policy query; the current action class drives the control query.
fn retrieval_context(
    graph: &KnowledgeGraph,
    embedder: &Embedder,
    obs: &Observation,
    current_class: &SemanticClass,
) -> String {
    let policy_q = Query::new(vec![
        threat_bucket(obs.min_clearance()).to_string(),
        compass_word_for(obs.bearing()).to_string(),
    ]);
    let control_q = Query::new(vec![class_word(current_class).to_string()]);
    let mut parts = Vec::new();
    if let Ok(p) = retrieve(graph, &policy_q, Subgraph::Policy, embedder) {
        parts.push(render_context(graph, &p));
    }
    if let Ok(p) = retrieve(graph, &control_q, Subgraph::Control, embedder) {
        parts.push(render_context(graph, &p));
    }
    parts.join("\n")
}

fn prediction_params(scenario: &Scenario) -> PredictionParams {
    let v = &scenario.verifier;
    PredictionParams::new(scenario.pursuer_v_max * v.t_pred, v.n_dir_samples, v.n_seg_samples)
}

/// Run one episode to capture or timeout. Fully deterministic for a given
/// (scenario, seed, toggles) with the scripted planner.
pub fn run_episode(
    scenario: &Scenario,
    planner: &dyn Planner,
    toggles: Toggles,
    seed: u64,
) -> Result<EpisodeRecord, SimError> {
    let (mut pursuer, mut target, obstacles) = generate_scenario(scenario, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_7a26);
    let strategy =
        TargetStrategy::from_spec(&scenario.target_strategy, scenario.dimension, scenario.target_v_max, &mut rng);
    let dyn_p = Dynamics::new(scenario.pursuer_v_max, scenario.dt);
    let dyn_t = Dynamics::new(scenario.target_v_max, scenario.dt);
    let pp = prediction_params(scenario);
    let vc = &scenario.verifier;

    let (graph, embedder) = if toggles.use_rag {
        let g = build_graph(DEFAULT_KB).expect("bundled knowledge base must validate");
        (Some(g), Some(Embedder::from_env()))
    } else {
        (None, None)
    };

    let mut steps: Vec<StepRecord> = Vec::new();
    let mut outcome = Outcome::Timeout;
    let mut last_verdict: Option<Verdict> = None;
    let mut last_corrected: Option<Vector> = None;
    let mut plan: Option<PlanResult> = None;

    for step in 0..scenario.max_steps {
        let obs = Observation {
            pursuer,
            target,
            obstacles: obstacles.clone(),
            last_verdict: last_verdict.clone(),
            last_corrected,
            step,
        };
        let current_class =
            plan.as_ref().map(|p| p.action.class).unwrap_or(SemanticClass::Tracking);
        let context = match (&graph, &embedder) {
            (Some(g), Some(e)) => retrieval_context(g, e, &obs, &current_class),
            _ => String::new(),
        };
        if step % K_PLAN == 0 || plan.is_none() {
            plan = Some(planner.plan(&obs, &context));
        }
        let planned = plan.as_ref().unwrap().action.clone();

        // The nominal that will actually be executed: tracking actions steer
        // by pure pursuit, so verification is centered on the live bearing.
        let bearing_dir = obs.target.position.sub(&obs.pursuer.position).normalized();
        let exec_action = match (&planned.class, planned.name.as_str(), bearing_dir) {
            (SemanticClass::Tracking, name, Some(b)) if name != "HOLD" => planned.with_nominal(b),
            _ => planned.clone(),
        };

        let (u, record_action, verdict_opt, controller) = if toggles.use_cbf {
            let verdict = fuzzy_barrier(&pursuer, &exec_action, &obstacles, &pp, scenario.d_safe);
            let arbitration = if verdict.status == VerdictStatus::Safe {
                // Execute the verified plan: tracking steers by pure pursuit,
                // evasion follows its own nominal so detours make progress.
                let u = match (&exec_action.class, exec_action.name.as_str()) {
                    (_, "HOLD") => Vector::zero(scenario.dimension),
                    (SemanticClass::Tracking, _) => task_control(&obs, scenario.pursuer_v_max),
                    _ => exec_action
                        .nominal
                        .normalized()
                        .map(|n| n.scale(scenario.pursuer_v_max))
                        .unwrap_or_else(|| Vector::zero(scenario.dimension)),
                };
                (u, exec_action.clone(), Some(verdict.clone()), ControllerKind::Task)
            } else {
                let (mut corrected, cv) = correct_action(
                    &pursuer,
                    &exec_action,
                    &obstacles,
                    &pp,
                    scenario.d_safe,
                    vc.correction_candidates,
                );
                // When no rotation verifies Safe the argmax carries no signal
                // and jitters step to step; keep the planned direction so the
                // safety filter pushes consistently instead of oscillating.
                if cv.status != VerdictStatus::Safe {
                    corrected = exec_action.clone();
                }
                let cone = DirectionCone::from_action(&corrected);
                let basis = discretize_cone(&cone, vc.basis_n)
                    .expect("corrected cone must discretize");
                let u = safety_control(
                    &pursuer,
                    &corrected,
                    &basis,
                    &obstacles,
                    vc.gamma,
                    scenario.pursuer_v_max,
                    scenario.d_safe,
                );
                (u, corrected, Some(verdict.clone()), ControllerKind::Safety)
            };

            // Planner feedback tracks the pursuit intention: evasion plans
            // hand back to tracking as soon as the bearing cone clears, so a
            // hazardous wide cone cannot latch the planner into evasion.
            let pursuit_verdict = match (&exec_action.class, bearing_dir) {
                (SemanticClass::Tracking, _) => verdict,
                (_, Some(b)) => {
                    let pursuit = planner
                        .catalog()
                        .tracking(crate::planner::snap_index(obs.bearing()))
                        .action
                        .with_nominal(b);
                    fuzzy_barrier(&pursuer, &pursuit, &obstacles, &pp, scenario.d_safe)
                }
                _ => verdict,
            };
            if pursuit_verdict.status == VerdictStatus::Safe {
                last_corrected = None;
            } else if let Some(b) = bearing_dir {
                let pursuit = planner
                    .catalog()
                    .tracking(crate::planner::snap_index(obs.bearing()))
                    .action
                    .with_nominal(b);
                let (pcorr, _) = correct_action(
                    &pursuer,
                    &pursuit,
                    &obstacles,
                    &pp,
                    scenario.d_safe,
                    vc.correction_candidates,
                );
                last_corrected = Some(pcorr.nominal);
            } else {
                last_corrected = arbitration.1.nominal.normalized();
            }
            last_verdict = Some(pursuit_verdict);
            arbitration
        } else {
            let u = if planned.name == "HOLD" {
                Vector::zero(scenario.dimension)
            } else {
                planned.nominal.scale(scenario.pursuer_v_max)
            };
            last_verdict = None;
            last_corrected = None;
            (u, planned.clone(), None, ControllerKind::Task)
        };

        let danger = obstacles
            .iter()
            .any(|o| signed_clearance(&pursuer.position, o) < 0.0);

        let u_t = target_step(&target, &strategy, &pursuer, &obstacles, &dyn_t, scenario.pursuer_v_max, scenario.d_safe);
        let next_pursuer = step_agent(&pursuer, &u, &dyn_p);
        let next_target = step_agent(&target, &u_t, &dyn_t);
        let captured = next_pursuer.position.dist(&next_target.position) <= scenario.capture_radius;

        steps.push(StepRecord {
            step,
            pursuer,
            target,
            action: record_action,
            verdict: verdict_opt,
            controller,
            danger,
            capture: captured,
        });

        pursuer = next_pursuer;
        target = next_target;
        if captured {
            outcome = Outcome::Captured;
            break;
        }
    }

    let total_steps = steps.len();
    let danger_steps = steps.iter().filter(|s| s.danger).count();
    Ok(EpisodeRecord {
        scenario: scenario.clone(),
        seed,
        toggles,
        steps,
        outcome,
        total_steps,
        danger_steps,
    })
}

// ---------------------------------------------------------------------------
// JSON-lines record format

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RecordHeader {
    schema: u32,
    scenario: Scenario,
    seed: u64,
    toggles: Toggles,
    outcome: Outcome,
    total_steps: usize,
    danger_steps: usize,
}

/// Serialize an episode as JSON lines: one header record, then one step per
/// line.
pub fn write_episode_jsonl(record: &EpisodeRecord, out: &mut dyn Write) -> Result<(), SimError> {
    let header = RecordHeader {
        schema: 1,
        scenario: record.scenario.clone(),
        seed: record.seed,
        toggles: record.toggles,
        outcome: record.outcome,
        total_steps: record.total_steps,
        danger_steps: record.danger_steps,
    };
    writeln!(out, "{}", serde_json::to_string(&header)?)?;
    for s in &record.steps {
        writeln!(out, "{}", serde_json::to_string(s)?)?;
    }
    Ok(())
}

pub fn episode_jsonl_string(record: &EpisodeRecord) -> String {
    let mut buf = Vec::new();
    write_episode_jsonl(record, &mut buf).expect("in-memory write");
    String::from_utf8(buf).expect("json is utf-8")
}

pub fn read_episode_jsonl(input: &mut dyn BufRead) -> Result<EpisodeRecord, SimError> {
    let mut lines = input.lines();
    let header_line = lines
        .next()
        .ok_or_else(|| SimError::Record("empty record file".into()))??;
    let header: RecordHeader = serde_json::from_str(&header_line)?;
    if header.schema != 1 {
        return Err(SimError::Record(format!("unsupported record schema {}", header.schema)));
    }
    let mut steps = Vec::with_capacity(header.total_steps);
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        steps.push(serde_json::from_str::<StepRecord>(&line)?);
    }
    Ok(EpisodeRecord {
        scenario: header.scenario,
        seed: header.seed,
        toggles: header.toggles,
        steps,
        outcome: header.outcome,
        total_steps: header.total_steps,
        danger_steps: header.danger_steps,
    })
}

/// Replay check over a record: danger flags, totals, capture flags, and the
/// h_fuzzy claim behind every Safe verdict are recomputed from raw states.
pub fn audit_episode(record: &EpisodeRecord) -> Result<(), AuditError> {
    let (_, _, obstacles) = generate_scenario(&record.scenario, record.seed)
        .map_err(|e| AuditError { step: 0, reason: format!("scenario replay failed: {e}") })?;
    let pp = prediction_params(&record.scenario);

    if record.total_steps != record.steps.len() {
        return Err(AuditError {
            step: 0,
            reason: format!("total_steps {} != step count {}", record.total_steps, record.steps.len()),
        });
    }
    let danger_count = record.steps.iter().filter(|s| s.danger).count();
    if record.danger_steps != danger_count {
        return Err(AuditError {
            step: 0,
            reason: format!("danger_steps {} != recount {}", record.danger_steps, danger_count),
        });
    }

    for (i, s) in record.steps.iter().enumerate() {
        if s.step != i {
            return Err(AuditError { step: i, reason: format!("step index {} out of order", s.step) });
        }
        let danger = obstacles
            .iter()
            .any(|o| signed_clearance(&s.pursuer.position, o) < 0.0);
        if danger != s.danger {
            return Err(AuditError {
                step: i,
                reason: format!("danger flag {} but clearance recomputation says {danger}", s.danger),
            });
        }
        if let Some(next) = record.steps.get(i + 1) {
            let cap = next.pursuer.position.dist(&next.target.position)
                <= record.scenario.capture_radius;
            if cap != s.capture {
                return Err(AuditError { step: i, reason: "capture flag mismatch".into() });
            }
        } else if (record.outcome == Outcome::Captured) != s.capture {
            return Err(AuditError { step: i, reason: "final capture flag inconsistent with outcome".into() });
        }
        if let Some(v) = &s.verdict {
            if v.status == VerdictStatus::Safe {
                let replay = fuzzy_barrier(&s.pursuer, &s.action, &obstacles, &pp, record.scenario.d_safe);
                if (replay.h_fuzzy - v.h_fuzzy).abs() > 1e-9 || replay.status != v.status {
                    return Err(AuditError {
                        step: i,
                        reason: format!("h_fuzzy replay {} != recorded {}", replay.h_fuzzy, v.h_fuzzy),
                    });
                }
            }
        }
    }
    Ok(())
}
