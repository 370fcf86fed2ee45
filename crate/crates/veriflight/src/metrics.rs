//! Batch metrics over episode records, the shipped experiment suites, and
//! machine-readable suite reports.

use crate::planner::Planner;
use crate::sim::{run_episode, EpisodeRecord, Outcome, SimError, Toggles};
use crate::world::{
    ObstacleSpec, Scenario, ShapeMix, StrategySpec, Vector,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("empty episode batch")]
    EmptyBatch,
    #[error("suite {suite}: {source}")]
    Suite {
        suite: String,
        #[source]
        source: SimError,
    },
    #[error("unknown suite id {0:?}; valid ids: S1, S2a, S2b, S2c, S4")]
    UnknownSuite(String),
}

/// Fraction of episodes ending in capture.
pub fn success_rate(records: &[EpisodeRecord]) -> Result<f64, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::EmptyBatch);
    }
    let captured = records.iter().filter(|r| r.outcome == Outcome::Captured).count();
    Ok(captured as f64 / records.len() as f64)
}

/// One minus the danger-step fraction, pooled over all steps in the batch.
pub fn safe_rate(records: &[EpisodeRecord]) -> Result<f64, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::EmptyBatch);
    }
    let total: usize = records.iter().map(|r| r.total_steps).sum();
    if total == 0 {
        return Err(MetricsError::EmptyBatch);
    }
    let danger: usize = records.iter().map(|r| r.danger_steps).sum();
    Ok(1.0 - danger as f64 / total as f64)
}

/// Mean over episodes of the per-episode safe fraction; the alternate reading
/// of the pooled rate, reported alongside it.
pub fn safe_rate_episode_mean(records: &[EpisodeRecord]) -> Result<f64, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::EmptyBatch);
    }
    let mut acc = 0.0;
    let mut n = 0usize;
    for r in records {
        if r.total_steps == 0 {
            continue;
        }
        acc += 1.0 - r.danger_steps as f64 / r.total_steps as f64;
        n += 1;
    }
    if n == 0 {
        return Err(MetricsError::EmptyBatch);
    }
    Ok(acc / n as f64)
}

/// Fraction of episodes with no danger step at all.
pub fn zero_danger_rate(records: &[EpisodeRecord]) -> Result<f64, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::EmptyBatch);
    }
    let clean = records.iter().filter(|r| r.danger_steps == 0).count();
    Ok(clean as f64 / records.len() as f64)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SuiteConfig {
    pub name: String,
    pub scenario: Scenario,
    pub toggles: Toggles,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SuiteSpec {
    pub id: String,
    pub configs: Vec<SuiteConfig>,
    pub seed_base: u64,
    pub episodes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigResult {
    pub config: String,
    pub toggles: Toggles,
    pub episodes: usize,
    pub seeds: Vec<u64>,
    pub success_rate: f64,
    pub safe_rate: f64,
    pub safe_rate_episode_mean: f64,
    pub zero_danger_rate: f64,
    pub captured: usize,
    pub total_steps: usize,
    pub danger_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub suite: String,
    pub seed_base: u64,
    pub results: Vec<ConfigResult>,
    /// Excluded from serialization so reports are byte-reproducible.
    #[serde(skip)]
    pub wall_clock_s: f64,
}

pub struct SuiteOutputs {
    pub report: SuiteReport,
    /// Raw records per config, in config order.
    pub records: Vec<(String, Vec<EpisodeRecord>)>,
}

/// Execute a suite: a parallel episode map per config, then a sequential fold
/// into the three rates.
pub fn run_suite(spec: &SuiteSpec, planner: &dyn Planner) -> Result<SuiteOutputs, MetricsError> {
    let start = Instant::now();
    let mut results = Vec::new();
    let mut all_records = Vec::new();
    for cfg in &spec.configs {
        let seeds: Vec<u64> = (0..spec.episodes as u64).map(|k| spec.seed_base + k).collect();
        let records: Vec<EpisodeRecord> = seeds
            .par_iter()
            .map(|&seed| run_episode(&cfg.scenario, planner, cfg.toggles, seed))
            .collect::<Result<_, _>>()
            .map_err(|e| MetricsError::Suite { suite: spec.id.clone(), source: e })?;
        results.push(ConfigResult {
            config: cfg.name.clone(),
            toggles: cfg.toggles,
            episodes: records.len(),
            seeds,
            success_rate: success_rate(&records)?,
            safe_rate: safe_rate(&records)?,
            safe_rate_episode_mean: safe_rate_episode_mean(&records)?,
            zero_danger_rate: zero_danger_rate(&records)?,
            captured: records.iter().filter(|r| r.outcome == Outcome::Captured).count(),
            total_steps: records.iter().map(|r| r.total_steps).sum(),
            danger_steps: records.iter().map(|r| r.danger_steps).sum(),
        });
        all_records.push((cfg.name.clone(), records));
    }
    Ok(SuiteOutputs {
        report: SuiteReport {
            suite: spec.id.clone(),
            seed_base: spec.seed_base,
            results,
            wall_clock_s: start.elapsed().as_secs_f64(),
        },
        records: all_records,
    })
}

/// Flat CSV rendering of a report, one row per config.
pub fn report_csv(report: &SuiteReport) -> String {
    let mut s = String::from(
        "suite,config,use_cbf,use_rag,episodes,success_rate,safe_rate,safe_rate_episode_mean,zero_danger_rate\n",
    );
    for r in &report.results {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            report.suite,
            r.config,
            r.toggles.use_cbf,
            r.toggles.use_rag,
            r.episodes,
            r.success_rate,
            r.safe_rate,
            r.safe_rate_episode_mean,
            r.zero_danger_rate
        ));
    }
    s
}

/// Published reference points the reports are compared against. These are
/// external results under richer physics and learned baselines; they are
/// comparison targets, never asserted as this harness's output.
#[derive(Debug, Clone, Copy)]
pub struct ReferencePoint {
    pub protocol: &'static str,
    pub metric: &'static str,
    pub value: f64,
}

pub const REFERENCE_POINTS: &[ReferencePoint] = &[
    ReferencePoint { protocol: "fixed-obstacles", metric: "success_rate", value: 0.90 },
    ReferencePoint { protocol: "fixed-obstacles", metric: "safe_rate", value: 0.9973 },
    ReferencePoint { protocol: "fixed-obstacles", metric: "zero_danger_rate", value: 0.92 },
    ReferencePoint { protocol: "randomized-obstacles", metric: "success_rate", value: 0.80 },
    ReferencePoint { protocol: "ablation-full", metric: "safe_rate", value: 0.9968 },
    ReferencePoint { protocol: "ablation-no-verifier", metric: "safe_rate", value: 0.9712 },
];

/// Text table comparing a report row against the stored reference points.
pub fn comparison_table(report: &SuiteReport) -> String {
    let mut s = format!("suite {}\n", report.suite);
    s.push_str(&format!(
        "{:<28} {:>8} {:>10} {:>10} {:>12}\n",
        "config", "success", "safe", "safe(ep)", "zero-danger"
    ));
    for r in &report.results {
        s.push_str(&format!(
            "{:<28} {:>8.4} {:>10.4} {:>10.4} {:>12.4}\n",
            r.config, r.success_rate, r.safe_rate, r.safe_rate_episode_mean, r.zero_danger_rate
        ));
    }
    s.push_str("reference points (external protocols, for comparison only):\n");
    for p in REFERENCE_POINTS {
        s.push_str(&format!("  {:<22} {:<18} {:.4}\n", p.protocol, p.metric, p.value));
    }
    s
}

fn straight_strategy() -> StrategySpec {
    StrategySpec::StraightLine { heading: None, speed: 1.2 }
}

fn matrix_strategy() -> StrategySpec {
    StrategySpec::MatrixGame { headings: 8, horizon_steps: 20 }
}

fn random_obstacles_2d(count: usize) -> ObstacleSpec {
    // Denser fields use smaller radii so separated placement stays feasible.
    let (radius_min, radius_max) = if count > 5 { (0.3, 0.5) } else { (0.4, 0.8) };
    ObstacleSpec::Random {
        count,
        shapes: ShapeMix::Spheres,
        region_min: Vector::new2(2.0, -4.0),
        region_max: Vector::new2(10.0, 4.0),
        radius_min,
        radius_max,
    }
}

fn scenario_with(obstacles: ObstacleSpec, strategy: StrategySpec) -> Scenario {
    let mut s = Scenario::baseline(strategy);
    s.obstacles = obstacles;
    s
}

fn scenario_3d(strategy: StrategySpec) -> Scenario {
    let mut s = Scenario::baseline(strategy);
    s.dimension = 3;
    s.pursuer_start = Vector::new3(0.0, 0.0, 2.0);
    s.target_start = Vector::new3(12.0, 0.0, 2.0);
    s.obstacles = ObstacleSpec::Random {
        count: 5,
        shapes: ShapeMix::SpheresAndCylinders,
        region_min: Vector::new3(2.0, -4.0, 0.5),
        region_max: Vector::new3(10.0, 4.0, 3.5),
        radius_min: 0.4,
        radius_max: 1.0,
    };
    s
}

/// Adversarial family for the ablation grid: one disc sampled directly on the
/// initial pursuit line, target fleeing straight east.
fn adversarial_scenario() -> Scenario {
    let mut s = Scenario::baseline(StrategySpec::StraightLine {
        heading: Some(Vector::new2(1.0, 0.0)),
        speed: 1.2,
    });
    s.obstacles = ObstacleSpec::Random {
        count: 1,
        shapes: ShapeMix::Spheres,
        region_min: Vector::new2(4.0, -0.3),
        region_max: Vector::new2(8.0, 0.3),
        radius_min: 0.6,
        radius_max: 0.9,
    };
    s
}

pub const SUITE_IDS: [&str; 5] = ["S1", "S2a", "S2b", "S2c", "S4"];

/// Built-in experiment suites.
pub fn builtin_suite(id: &str, seed_base: u64, episodes: Option<usize>) -> Result<SuiteSpec, MetricsError> {
    let on = Toggles::default();
    let spec = match id {
        "S1" => SuiteSpec {
            id: "S1".into(),
            seed_base,
            episodes: episodes.unwrap_or(50),
            configs: vec![
                SuiteConfig {
                    name: "fixed5_straight".into(),
                    scenario: Scenario::baseline(straight_strategy()),
                    toggles: on,
                },
                SuiteConfig {
                    name: "fixed5_matrix".into(),
                    scenario: Scenario::baseline(matrix_strategy()),
                    toggles: on,
                },
            ],
        },
        "S2a" => SuiteSpec {
            id: "S2a".into(),
            seed_base,
            episodes: episodes.unwrap_or(50),
            configs: vec![
                SuiteConfig {
                    name: "random5_straight".into(),
                    scenario: scenario_with(random_obstacles_2d(5), straight_strategy()),
                    toggles: on,
                },
                SuiteConfig {
                    name: "random5_matrix".into(),
                    scenario: scenario_with(random_obstacles_2d(5), matrix_strategy()),
                    toggles: on,
                },
            ],
        },
        "S2b" => SuiteSpec {
            id: "S2b".into(),
            seed_base,
            episodes: episodes.unwrap_or(50),
            configs: vec![
                SuiteConfig {
                    name: "count3_straight".into(),
                    scenario: scenario_with(random_obstacles_2d(3), straight_strategy()),
                    toggles: on,
                },
                SuiteConfig {
                    name: "count8_straight".into(),
                    scenario: scenario_with(random_obstacles_2d(8), straight_strategy()),
                    toggles: on,
                },
            ],
        },
        "S2c" => SuiteSpec {
            id: "S2c".into(),
            seed_base,
            episodes: episodes.unwrap_or(50),
            configs: vec![
                SuiteConfig {
                    name: "cylinders3d_straight".into(),
                    scenario: scenario_3d(straight_strategy()),
                    toggles: on,
                },
            ],
        },
        "S4" => {
            let mut configs = Vec::new();
            for (use_cbf, use_rag) in [(true, true), (true, false), (false, true), (false, false)] {
                configs.push(SuiteConfig {
                    name: format!(
                        "adversarial_cbf{}_rag{}",
                        if use_cbf { "1" } else { "0" },
                        if use_rag { "1" } else { "0" }
                    ),
                    scenario: adversarial_scenario(),
                    toggles: Toggles { use_cbf, use_rag },
                });
            }
            SuiteSpec { id: "S4".into(), seed_base, episodes: episodes.unwrap_or(20), configs }
        }
        other => return Err(MetricsError::UnknownSuite(other.to_string())),
    };
    Ok(spec)
}
