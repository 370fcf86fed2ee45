//! Shared geometric and dynamic vocabulary: vectors, agent states, obstacles,
//! semantic actions, and seeded scenario generation.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::SeedableRng;
use serde::de::{SeqAccess, Visitor};
use serde::ser::SerializeSeq;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Sentinel barrier value when no obstacle exists.
pub const NO_OBSTACLE_CLEARANCE: f64 = 1e9;

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("obstacle placement infeasible after {attempts} rejection attempts")]
    PlacementInfeasible { attempts: usize },
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
}

/// Fixed-capacity 2D/3D vector. The dimension is part of the value; mixing
/// dimensions in arithmetic is a logic error and panics in debug builds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Vector {
    data: [f64; 3],
    dim: usize,
}

impl Vector {
    pub fn new2(x: f64, y: f64) -> Self {
        Self { data: [x, y, 0.0], dim: 2 }
    }

    pub fn new3(x: f64, y: f64, z: f64) -> Self {
        Self { data: [x, y, z], dim: 3 }
    }

    pub fn zero(dim: usize) -> Self {
        assert!(dim == 2 || dim == 3);
        Self { data: [0.0; 3], dim }
    }

    pub fn from_slice(s: &[f64]) -> Self {
        match s.len() {
            2 => Self::new2(s[0], s[1]),
            3 => Self::new3(s[0], s[1], s[2]),
            n => panic!("vector dimension must be 2 or 3, got {n}"),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn x(&self) -> f64 {
        self.data[0]
    }

    pub fn y(&self) -> f64 {
        self.data[1]
    }

    pub fn z(&self) -> f64 {
        self.data[2]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data[..self.dim]
    }

    pub fn dot(&self, other: &Vector) -> f64 {
        debug_assert_eq!(self.dim, other.dim);
        self.data[0] * other.data[0] + self.data[1] * other.data[1] + self.data[2] * other.data[2]
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn scale(&self, k: f64) -> Vector {
        Vector {
            data: [self.data[0] * k, self.data[1] * k, self.data[2] * k],
            dim: self.dim,
        }
    }

    pub fn add(&self, other: &Vector) -> Vector {
        debug_assert_eq!(self.dim, other.dim);
        Vector {
            data: [
                self.data[0] + other.data[0],
                self.data[1] + other.data[1],
                self.data[2] + other.data[2],
            ],
            dim: self.dim,
        }
    }

    pub fn sub(&self, other: &Vector) -> Vector {
        self.add(&other.scale(-1.0))
    }

    pub fn dist(&self, other: &Vector) -> f64 {
        self.sub(other).norm()
    }

    /// Unit vector in the same direction, or `None` for (near-)zero input.
    pub fn normalized(&self) -> Option<Vector> {
        let n = self.norm();
        if n < 1e-12 {
            None
        } else {
            Some(self.scale(1.0 / n))
        }
    }

    pub fn is_finite(&self) -> bool {
        self.as_slice().iter().all(|c| c.is_finite())
    }

    /// Angle between two vectors in radians, in [0, pi].
    pub fn angle_to(&self, other: &Vector) -> f64 {
        let d = self.norm() * other.norm();
        if d < 1e-300 {
            return 0.0;
        }
        (self.dot(other) / d).clamp(-1.0, 1.0).acos()
    }

    /// Planar angle of a 2D vector, atan2 convention.
    pub fn angle2(&self) -> f64 {
        debug_assert_eq!(self.dim, 2);
        self.data[1].atan2(self.data[0])
    }

    pub fn from_angle2(a: f64) -> Vector {
        Vector::new2(a.cos(), a.sin())
    }

    /// Rotate a 2D vector counterclockwise by `a` radians.
    pub fn rotate2(&self, a: f64) -> Vector {
        debug_assert_eq!(self.dim, 2);
        let (s, c) = a.sin_cos();
        Vector::new2(c * self.data[0] - s * self.data[1], s * self.data[0] + c * self.data[1])
    }
}

impl Serialize for Vector {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut seq = serializer.serialize_seq(Some(self.dim))?;
        for c in self.as_slice() {
            seq.serialize_element(c)?;
        }
        seq.end()
    }
}

impl<'de> Deserialize<'de> for Vector {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = Vector;
            fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
                write!(f, "a sequence of 2 or 3 numbers")
            }
            fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> Result<Vector, A::Error> {
                let mut v = Vec::with_capacity(3);
                while let Some(c) = seq.next_element::<f64>()? {
                    v.push(c);
                }
                if v.len() == 2 || v.len() == 3 {
                    Ok(Vector::from_slice(&v))
                } else {
                    Err(serde::de::Error::invalid_length(v.len(), &self))
                }
            }
        }
        deserializer.deserialize_seq(V)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub position: Vector,
    pub velocity: Vector,
}

impl AgentState {
    pub fn at_rest(position: Vector) -> Self {
        let dim = position.dim();
        Self { position, velocity: Vector::zero(dim) }
    }
}

/// Single-integrator dynamics with a speed cap: drift is zero and the input
/// map is the identity, so Lie derivatives reduce to plain gradients.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Dynamics {
    pub v_max: f64,
    pub dt: f64,
}

impl Dynamics {
    pub fn new(v_max: f64, dt: f64) -> Self {
        assert!(v_max > 0.0 && dt > 0.0);
        Self { v_max, dt }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum Obstacle {
    Sphere { center: Vector, radius: f64 },
    /// Infinite-height cylinder with vertical axis; only valid in D = 3.
    CylinderZ { center_xy: [f64; 2], radius: f64 },
}

impl Obstacle {
    pub fn radius(&self) -> f64 {
        match self {
            Obstacle::Sphere { radius, .. } | Obstacle::CylinderZ { radius, .. } => *radius,
        }
    }
}

/// Euclidean distance from `p` to the obstacle surface; negative inside.
pub fn signed_clearance(p: &Vector, obs: &Obstacle) -> f64 {
    match obs {
        Obstacle::Sphere { center, radius } => p.dist(center) - radius,
        Obstacle::CylinderZ { center_xy, radius } => {
            let dx = p.x() - center_xy[0];
            let dy = p.y() - center_xy[1];
            (dx * dx + dy * dy).sqrt() - radius
        }
    }
}

/// Unit direction of steepest clearance increase at `p` (away from the
/// obstacle). Falls back to +x for the degenerate on-center case.
pub fn clearance_gradient(p: &Vector, obs: &Obstacle) -> Vector {
    let dim = p.dim();
    let raw = match obs {
        Obstacle::Sphere { center, .. } => p.sub(center),
        Obstacle::CylinderZ { center_xy, .. } => {
            let mut g = Vector::zero(dim);
            g.data[0] = p.x() - center_xy[0];
            g.data[1] = p.y() - center_xy[1];
            g
        }
    };
    raw.normalized().unwrap_or_else(|| {
        let mut g = Vector::zero(dim);
        g.data[0] = 1.0;
        g
    })
}

/// Rescale `v` to norm `v_max` when it exceeds the cap; identity otherwise.
pub fn clamp_speed(v: &Vector, v_max: f64) -> Vector {
    let n = v.norm();
    if n > v_max && n > 0.0 {
        v.scale(v_max / n)
    } else {
        *v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SemanticClass {
    Tracking,
    Evasion,
    Custom(f64),
}

pub const TRACKING_CONE_ANGLE: f64 = 10.0 * std::f64::consts::PI / 180.0;
pub const EVASION_CONE_ANGLE: f64 = 60.0 * std::f64::consts::PI / 180.0;

/// A discrete instruction as a directional cone: a nominal unit direction,
/// a cone half-angle in (0, pi], and the admissible set they induce.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticAction {
    pub name: String,
    pub nominal: Vector,
    pub cone_angle: f64,
    pub class: SemanticClass,
}

impl SemanticAction {
    pub fn new(name: impl Into<String>, nominal: Vector, class: SemanticClass) -> Self {
        let cone_angle = match class {
            SemanticClass::Tracking => TRACKING_CONE_ANGLE,
            SemanticClass::Evasion => EVASION_CONE_ANGLE,
            SemanticClass::Custom(a) => a,
        };
        let nominal = nominal.normalized().expect("nominal direction must be nonzero");
        Self { name: name.into(), nominal, cone_angle, class }
    }

    pub fn with_nominal(&self, nominal: Vector) -> Self {
        let mut out = self.clone();
        out.nominal = nominal.normalized().expect("nominal direction must be nonzero");
        out
    }

    /// Override the cone half-angle while keeping the semantic class.
    pub fn with_cone_angle(&self, cone_angle: f64) -> Self {
        let mut out = self.clone();
        out.cone_angle = cone_angle;
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeMix {
    Spheres,
    /// Spheres plus vertical cylinders, roughly half each. D = 3 only.
    SpheresAndCylinders,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "placement", rename_all = "snake_case")]
pub enum ObstacleSpec {
    Fixed {
        obstacles: Vec<Obstacle>,
    },
    Random {
        count: usize,
        shapes: ShapeMix,
        region_min: Vector,
        region_max: Vector,
        radius_min: f64,
        radius_max: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StrategySpec {
    /// Constant-velocity flight. With no fixed heading the direction is drawn
    /// from the scenario seed (horizontal in D = 3).
    StraightLine { heading: Option<Vector>, speed: f64 },
    /// Maximin evader over a discrete heading matrix.
    MatrixGame { headings: usize, horizon_steps: usize },
}

/// Verifier parameters surfaced in the scenario file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VerifierConfig {
    /// Slope of the linear class-K function alpha(h) = gamma * h, 1/s.
    pub gamma: f64,
    /// Lookahead time; prediction distance is v_max * t_pred.
    pub t_pred: f64,
    pub n_dir_samples: usize,
    pub n_seg_samples: usize,
    /// Basis directions per cone discretization.
    pub basis_n: usize,
    /// Candidate nominals scanned during action correction.
    pub correction_candidates: usize,
}

impl Default for VerifierConfig {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            t_pred: 1.0,
            n_dir_samples: 17,
            n_seg_samples: 16,
            basis_n: 5,
            correction_candidates: 72,
        }
    }
}

fn default_schema() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default = "default_schema")]
    pub schema: u32,
    pub dimension: usize,
    pub obstacles: ObstacleSpec,
    pub pursuer_start: Vector,
    pub target_start: Vector,
    pub target_strategy: StrategySpec,
    pub capture_radius: f64,
    pub max_steps: usize,
    pub d_safe: f64,
    pub pursuer_v_max: f64,
    pub target_v_max: f64,
    pub dt: f64,
    #[serde(default)]
    pub verifier: VerifierConfig,
    #[serde(default)]
    pub seed: u64,
}

impl Scenario {
    pub fn validate(&self) -> Result<(), WorldError> {
        if self.schema != 1 {
            return Err(WorldError::InvalidScenario(format!("unsupported schema {}", self.schema)));
        }
        if self.dimension != 2 && self.dimension != 3 {
            return Err(WorldError::InvalidScenario("dimension must be 2 or 3".into()));
        }
        if self.capture_radius <= 0.0 || self.d_safe < 0.0 || self.dt <= 0.0 {
            return Err(WorldError::InvalidScenario("capture_radius/d_safe/dt out of range".into()));
        }
        if self.pursuer_v_max <= 0.0 || self.target_v_max <= 0.0 {
            return Err(WorldError::InvalidScenario("speeds must be positive".into()));
        }
        if self.pursuer_start.dim() != self.dimension || self.target_start.dim() != self.dimension {
            return Err(WorldError::InvalidScenario("start positions must match dimension".into()));
        }
        if let ObstacleSpec::Fixed { obstacles } = &self.obstacles {
            for (i, o) in obstacles.iter().enumerate() {
                if o.radius() <= 0.0 {
                    return Err(WorldError::InvalidScenario(format!("obstacle {i} has nonpositive radius")));
                }
                if matches!(o, Obstacle::CylinderZ { .. }) && self.dimension != 3 {
                    return Err(WorldError::InvalidScenario(format!(
                        "obstacle {i}: cylinders require dimension 3"
                    )));
                }
            }
        }
        if let StrategySpec::StraightLine { speed, .. } = &self.target_strategy {
            if *speed > self.target_v_max + 1e-9 {
                return Err(WorldError::InvalidScenario("target strategy speed exceeds target v_max".into()));
            }
        }
        Ok(())
    }

    /// Baseline layout: five fixed spheres flanking the pursuit corridor,
    /// spaced so their inflated discs stay pairwise disjoint.
    pub fn baseline(strategy: StrategySpec) -> Self {
        Scenario {
            schema: 1,
            dimension: 2,
            obstacles: ObstacleSpec::Fixed {
                obstacles: vec![
                    Obstacle::Sphere { center: Vector::new2(3.0, 2.0), radius: 0.6 },
                    Obstacle::Sphere { center: Vector::new2(5.0, -2.2), radius: 0.7 },
                    Obstacle::Sphere { center: Vector::new2(7.5, 1.8), radius: 0.6 },
                    Obstacle::Sphere { center: Vector::new2(10.0, -2.0), radius: 0.8 },
                    Obstacle::Sphere { center: Vector::new2(13.5, 1.6), radius: 0.5 },
                ],
            },
            pursuer_start: Vector::new2(0.0, 0.0),
            target_start: Vector::new2(12.0, 0.0),
            target_strategy: strategy,
            capture_radius: 1.0,
            max_steps: 600,
            d_safe: 0.5,
            pursuer_v_max: 2.0,
            target_v_max: 1.2,
            dt: 0.05,
            verifier: VerifierConfig::default(),
            seed: 0,
        }
    }
}

const MAX_PLACEMENT_ATTEMPTS: usize = 1000;
const MAX_LAYOUT_RESTARTS: usize = 100;

/// Deterministic scenario realization: both agent states plus the obstacle
/// field, reproducible bit-for-bit from (spec, seed).
pub fn generate_scenario(
    spec: &Scenario,
    seed: u64,
) -> Result<(AgentState, AgentState, Vec<Obstacle>), WorldError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pursuer = AgentState::at_rest(spec.pursuer_start);
    let target = AgentState::at_rest(spec.target_start);

    let clear_of_starts = |o: &Obstacle| {
        signed_clearance(&spec.pursuer_start, o) >= spec.d_safe + 0.5
            && signed_clearance(&spec.target_start, o) >= spec.d_safe + 0.5
    };

    // No-overlap rule for random placement: inflated regions stay pairwise
    // disjoint with a corridor margin, so the field remains navigable.
    let corridor = 2.0 * spec.d_safe + 1.0;
    let separated = |a: &Obstacle, b: &Obstacle| {
        let center = |o: &Obstacle| match o {
            Obstacle::Sphere { center, .. } => *center,
            Obstacle::CylinderZ { center_xy, .. } => Vector::new2(center_xy[0], center_xy[1]),
        };
        let planar = |v: &Vector| Vector::new2(v.x(), v.y());
        // Cylinders are infinite in z, so compare in the xy plane, which is
        // conservative for sphere pairs as well.
        let d = planar(&center(a)).dist(&planar(&center(b)));
        d >= a.radius() + b.radius() + corridor
    };

    let obstacles = match &spec.obstacles {
        ObstacleSpec::Fixed { obstacles } => {
            for (i, o) in obstacles.iter().enumerate() {
                if !clear_of_starts(o) {
                    return Err(WorldError::InvalidScenario(format!(
                        "fixed obstacle {i} overlaps an agent start within d_safe"
                    )));
                }
            }
            obstacles.clone()
        }
        ObstacleSpec::Random { count, shapes, region_min, region_max, radius_min, radius_max } => {
            if matches!(shapes, ShapeMix::SpheresAndCylinders) && spec.dimension != 3 {
                return Err(WorldError::InvalidScenario("cylinder mix requires dimension 3".into()));
            }
            // Greedy placement can paint itself into a corner in dense
            // fields; on failure discard the partial layout and try afresh.
            let mut out = Vec::with_capacity(*count);
            let mut layout_ok = false;
            'layout: for _ in 0..MAX_LAYOUT_RESTARTS {
                out.clear();
                for i in 0..*count {
                    let mut placed = false;
                    for _ in 0..MAX_PLACEMENT_ATTEMPTS {
                        let radius = rng.gen_range(*radius_min..=*radius_max);
                        let mut coords = [0.0; 3];
                        for d in 0..spec.dimension {
                            coords[d] =
                                rng.gen_range(region_min.as_slice()[d]..=region_max.as_slice()[d]);
                        }
                        let cylinder = matches!(shapes, ShapeMix::SpheresAndCylinders) && i % 2 == 1;
                        let cand = if cylinder {
                            Obstacle::CylinderZ { center_xy: [coords[0], coords[1]], radius }
                        } else {
                            Obstacle::Sphere {
                                center: Vector::from_slice(&coords[..spec.dimension]),
                                radius,
                            }
                        };
                        if clear_of_starts(&cand) && out.iter().all(|o| separated(o, &cand)) {
                            out.push(cand);
                            placed = true;
                            break;
                        }
                    }
                    if !placed {
                        continue 'layout;
                    }
                }
                layout_ok = true;
                break;
            }
            if !layout_ok {
                return Err(WorldError::PlacementInfeasible {
                    attempts: MAX_LAYOUT_RESTARTS * MAX_PLACEMENT_ATTEMPTS,
                });
            }
            out
        }
    };
    Ok((pursuer, target, obstacles))
}
