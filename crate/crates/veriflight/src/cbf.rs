//! Semantic action certification: cone discretization into basis directions,
//! per-basis barrier certificates, convex mixing, worst-case fuzzy barrier
//! evaluation over the cone, and correction of hazardous actions.

use crate::world::{
    signed_clearance, AgentState, Obstacle, SemanticAction, Vector, NO_OBSTACLE_CLEARANCE,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

const FEASIBILITY_TOL: f64 = 1e-9;
/// Basis vectors are stretched just past the chord-tangency scale so the unit
/// cone arc stays inside the (origin-augmented) hull of the basis.
const SCALE_MARGIN: f64 = 1e-6;
/// Adjacent basis spacing above this makes chord coverage of the unit arc
/// impossible, so the effective basis count is raised instead.
const MAX_BASIS_SPACING: f64 = std::f64::consts::FRAC_PI_2;

#[derive(Debug, Error)]
pub enum CbfError {
    #[error("basis size {n} below minimum {min} for dimension {dim}")]
    InvalidN { n: usize, min: usize, dim: usize },
    #[error("direction lies {angle:.6} rad from nominal, outside cone half-angle {max:.6}")]
    OutsideCone { angle: f64, max: f64 },
    #[error("dimension mismatch: {left} weights vs {right} certificates")]
    DimensionMismatch { left: usize, right: usize },
    #[error("weights violate simplex constraints: {0}")]
    InvalidWeights(String),
}

/// Admissible direction set of a semantic action: all unit vectors within
/// `half_angle` of `nominal`.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionCone {
    pub nominal: Vector,
    pub half_angle: f64,
}

impl DirectionCone {
    pub fn new(nominal: Vector, half_angle: f64) -> Self {
        assert!(half_angle > 0.0 && half_angle <= std::f64::consts::PI + 1e-12);
        let nominal = nominal.normalized().expect("cone nominal must be nonzero");
        Self { nominal, half_angle }
    }

    pub fn from_action(action: &SemanticAction) -> Self {
        Self::new(action.nominal, action.cone_angle)
    }

    pub fn contains(&self, v: &Vector) -> bool {
        self.nominal.angle_to(v) <= self.half_angle + 1e-9
    }
}

/// Scaled basis directions whose convex combinations (with the origin) cover
/// every unit direction of the cone.
#[derive(Debug, Clone, PartialEq)]
pub struct ConeBasis {
    pub directions: Vec<Vector>,
    pub scale: f64,
    pub angular_spacing: f64,
    pub nominal: Vector,
    pub half_angle: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BasisCertificate {
    pub direction: Vector,
    pub h: f64,
    pub u: Vector,
    pub gamma: f64,
    pub grad: Vector,
    pub residual: f64,
    pub feasible: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixedCertificate {
    pub weights: Vec<f64>,
    pub u: Vector,
    pub h: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VerdictStatus {
    Safe,
    Hazardous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub status: VerdictStatus,
    pub h_fuzzy: f64,
    pub worst_direction: Vector,
    pub nearest_obstacle: Option<usize>,
}

/// Lookahead model for the predicted position: a straight segment of length
/// `d_pred` sampled at `n_seg_samples` points, min-pooled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionParams {
    pub d_pred: f64,
    pub n_dir_samples: usize,
    pub n_seg_samples: usize,
}

impl PredictionParams {
    pub fn new(d_pred: f64, n_dir_samples: usize, n_seg_samples: usize) -> Self {
        assert!(d_pred > 0.0 && n_dir_samples >= 3 && n_seg_samples >= 2);
        Self { d_pred, n_dir_samples, n_seg_samples }
    }
}

fn cross(a: &Vector, b: &Vector) -> Vector {
    Vector::new3(
        a.y() * b.z() - a.z() * b.y(),
        a.z() * b.x() - a.x() * b.z(),
        a.x() * b.y() - a.y() * b.x(),
    )
}

/// Orthonormal frame (t1, t2) perpendicular to a 3D unit vector.
fn tangent_frame(n: &Vector) -> (Vector, Vector) {
    let probe = if n.x().abs() < 0.9 {
        Vector::new3(1.0, 0.0, 0.0)
    } else {
        Vector::new3(0.0, 1.0, 0.0)
    };
    let t1 = cross(n, &probe).normalized().expect("degenerate frame");
    let t2 = cross(n, &t1).normalized().expect("degenerate frame");
    (t1, t2)
}

/// Unit direction at polar angle `polar` from `nominal` and azimuth `az`.
fn cap_direction(nominal: &Vector, polar: f64, az: f64) -> Vector {
    let (t1, t2) = tangent_frame(nominal);
    nominal
        .scale(polar.cos())
        .add(&t1.scale(polar.sin() * az.cos()))
        .add(&t2.scale(polar.sin() * az.sin()))
}

fn is_full_circle(theta: f64) -> bool {
    theta >= std::f64::consts::PI - 1e-12
}

/// Discretize a direction cone into scaled basis vectors. The requested count
/// is raised when adjacent spacing would otherwise reach 90 degrees, where
/// chord coverage of the unit arc breaks down.
pub fn discretize_cone(cone: &DirectionCone, n: usize) -> Result<ConeBasis, CbfError> {
    let dim = cone.nominal.dim();
    let min = if dim == 2 { 2 } else { 4 };
    if n < min {
        return Err(CbfError::InvalidN { n, min, dim });
    }
    if dim == 2 {
        discretize_cone_2d(cone, n)
    } else {
        Ok(discretize_cone_3d(cone, n))
    }
}

fn discretize_cone_2d(cone: &DirectionCone, n: usize) -> Result<ConeBasis, CbfError> {
    let theta = cone.half_angle;
    let base_angle = cone.nominal.angle2();
    if is_full_circle(theta) {
        let n_eff = n.max(4);
        let spacing = 2.0 * std::f64::consts::PI / n_eff as f64;
        let scale = (1.0 + SCALE_MARGIN) / (spacing / 2.0).cos();
        let directions = (0..n_eff)
            .map(|k| Vector::from_angle2(base_angle + k as f64 * spacing).scale(scale))
            .collect();
        return Ok(ConeBasis {
            directions,
            scale,
            angular_spacing: spacing,
            nominal: cone.nominal,
            half_angle: theta,
        });
    }
    let mut n_eff = n;
    let spacing_for = |count: usize| 2.0 * theta / (count - 1) as f64;
    while spacing_for(n_eff) >= MAX_BASIS_SPACING {
        n_eff += 1;
    }
    let spacing = spacing_for(n_eff);
    let scale = (1.0 + SCALE_MARGIN) / (spacing / 2.0).cos();
    let directions = (0..n_eff)
        .map(|k| {
            let a = base_angle - theta + k as f64 * spacing;
            Vector::from_angle2(a).scale(scale)
        })
        .collect();
    Ok(ConeBasis { directions, scale, angular_spacing: spacing, nominal: cone.nominal, half_angle: theta })
}

fn discretize_cone_3d(cone: &DirectionCone, n: usize) -> ConeBasis {
    let theta = cone.half_angle;
    let mut units: Vec<Vector> = vec![cone.nominal];
    let ring = |units: &mut Vec<Vector>, polar: f64, m: usize, offset: f64| {
        for k in 0..m {
            let az = offset + k as f64 * 2.0 * std::f64::consts::PI / m as f64;
            units.push(cap_direction(&cone.nominal, polar, az));
        }
    };
    if is_full_circle(theta) {
        ring(&mut units, std::f64::consts::FRAC_PI_4, 8, 0.0);
        ring(&mut units, std::f64::consts::FRAC_PI_2, 8, std::f64::consts::FRAC_PI_8);
        ring(&mut units, 3.0 * std::f64::consts::FRAC_PI_4, 8, 0.0);
        units.push(cone.nominal.scale(-1.0));
    } else {
        let budget = n.max(7) - 1;
        if budget >= 8 {
            let outer = (budget * 2).div_ceil(3).max(6);
            let inner = (budget - outer.min(budget)).max(3);
            ring(&mut units, theta / 2.0, inner, std::f64::consts::PI / outer as f64);
            ring(&mut units, theta, outer, 0.0);
        } else {
            ring(&mut units, theta, budget.max(6), 0.0);
        }
    }
    // Empirical containment scale: the smallest recomposition norm over a
    // dense cap sample determines how far the basis must be stretched.
    let samples = cap_sample_directions(&cone.nominal, theta, 160, 16);
    let mut min_norm: f64 = 1.0;
    for v in &samples {
        if let Some(w) = simplex_weights_for_units(v, &units) {
            let mut comb = Vector::zero(3);
            for (l, e) in w.iter().zip(units.iter()) {
                comb = comb.add(&e.scale(*l));
            }
            let nrm = comb.norm();
            if nrm > 1e-9 {
                min_norm = min_norm.min(nrm);
            }
        }
    }
    let scale = (1.0 + SCALE_MARGIN) / min_norm.max(0.2);
    let ring_spacing = 2.0 * std::f64::consts::PI / 8.0;
    ConeBasis {
        directions: units.into_iter().map(|u| u.scale(scale)).collect(),
        scale,
        angular_spacing: ring_spacing,
        nominal: cone.nominal,
        half_angle: theta,
    }
}

/// Deterministic cap sampling: a Fibonacci lattice over the cap plus the
/// boundary ring and the nominal direction.
fn cap_sample_directions(nominal: &Vector, theta: f64, n_lattice: usize, n_boundary: usize) -> Vec<Vector> {
    let golden = std::f64::consts::PI * (3.0 - 5.0_f64.sqrt());
    let cos_theta = theta.cos();
    let mut out = Vec::with_capacity(n_lattice + n_boundary + 1);
    out.push(*nominal);
    for k in 0..n_lattice {
        let z = 1.0 - (1.0 - cos_theta) * (k as f64 + 0.5) / n_lattice as f64;
        let polar = z.clamp(-1.0, 1.0).acos();
        out.push(cap_direction(nominal, polar, k as f64 * golden));
    }
    for k in 0..n_boundary {
        let az = k as f64 * 2.0 * std::f64::consts::PI / n_boundary as f64;
        out.push(cap_direction(nominal, theta, az));
    }
    out
}

/// Best simplex weights over unit directions whose combination points along
/// `v`: 3x3 barycentric solves over triples of the nearest basis directions.
fn simplex_weights_for_units(v: &Vector, units: &[Vector]) -> Option<Vec<f64>> {
    let mut order: Vec<usize> = (0..units.len()).collect();
    order.sort_by(|&a, &b| {
        units[a].angle_to(v).partial_cmp(&units[b].angle_to(v)).unwrap().then(a.cmp(&b))
    });
    // Nearest pool first; fall back to the full set when no enclosing triple
    // exists among the nearest directions.
    let near: Vec<usize> = order.iter().cloned().take(units.len().min(7)).collect();
    simplex_weights_over_pool(v, units, &near)
        .or_else(|| simplex_weights_over_pool(v, units, &order))
}

fn simplex_weights_over_pool(v: &Vector, units: &[Vector], pool: &[usize]) -> Option<Vec<f64>> {
    let mut best: Option<(f64, Vec<f64>, [usize; 3])> = None;
    for i in 0..pool.len() {
        for j in (i + 1)..pool.len() {
            for k in (j + 1)..pool.len() {
                let (a, b, c) = (pool[i], pool[j], pool[k]);
                if let Some(coeffs) = solve3(&units[a], &units[b], &units[c], v) {
                    let lo = coeffs.iter().cloned().fold(f64::INFINITY, f64::min);
                    if lo >= -1e-12 {
                        let better = match &best {
                            None => true,
                            Some((blo, _, _)) => lo > *blo,
                        };
                        if better {
                            best = Some((lo, coeffs.to_vec(), [a, b, c]));
                        }
                    }
                }
            }
        }
    }
    let (_, coeffs, idx) = best?;
    let sum: f64 = coeffs.iter().sum();
    if sum <= 1e-12 {
        return None;
    }
    let mut w = vec![0.0; units.len()];
    for (c, &ix) in coeffs.iter().zip(idx.iter()) {
        w[ix] = (c / sum).max(0.0);
    }
    let total: f64 = w.iter().sum();
    for x in &mut w {
        *x /= total;
    }
    Some(w)
}

fn solve3(e1: &Vector, e2: &Vector, e3: &Vector, v: &Vector) -> Option<[f64; 3]> {
    let m = [
        [e1.x(), e2.x(), e3.x()],
        [e1.y(), e2.y(), e3.y()],
        [e1.z(), e2.z(), e3.z()],
    ];
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    if det.abs() < 1e-12 {
        return None;
    }
    let rhs = [v.x(), v.y(), v.z()];
    let mut out = [0.0; 3];
    for col in 0..3 {
        let mut mm = m;
        for row in 0..3 {
            mm[row][col] = rhs[row];
        }
        let d = mm[0][0] * (mm[1][1] * mm[2][2] - mm[1][2] * mm[2][1])
            - mm[0][1] * (mm[1][0] * mm[2][2] - mm[1][2] * mm[2][0])
            + mm[0][2] * (mm[1][0] * mm[2][1] - mm[1][1] * mm[2][0]);
        out[col] = d / det;
    }
    Some(out)
}

/// Simplex weights whose basis combination points along `v`.
pub fn decompose_direction(v: &Vector, basis: &ConeBasis) -> Result<Vec<f64>, CbfError> {
    let v = v.normalized().ok_or_else(|| CbfError::InvalidWeights("zero direction".into()))?;
    let angle = basis.nominal.angle_to(&v);
    if !is_full_circle(basis.half_angle) && angle > basis.half_angle + 1e-9 {
        return Err(CbfError::OutsideCone { angle, max: basis.half_angle });
    }
    if v.dim() == 2 {
        decompose_2d(&v, basis)
    } else {
        let units: Vec<Vector> = basis
            .directions
            .iter()
            .map(|d| d.normalized().expect("basis direction must be nonzero"))
            .collect();
        simplex_weights_for_units(&v, &units)
            .ok_or_else(|| CbfError::InvalidWeights("no enclosing basis triple".into()))
    }
}

fn decompose_2d(v: &Vector, basis: &ConeBasis) -> Result<Vec<f64>, CbfError> {
    let n = basis.directions.len();
    // Exact ray hit: one-hot.
    for (i, e) in basis.directions.iter().enumerate() {
        if e.angle_to(v) < 1e-12 {
            let mut w = vec![0.0; n];
            w[i] = 1.0;
            return Ok(w);
        }
    }
    let mut best: Option<(f64, usize, usize, f64, f64)> = None;
    for i in 0..n {
        let j = (i + 1) % n;
        if n > 2 && j == 0 && !is_full_circle(basis.half_angle) {
            break; // no wraparound pair for a partial cone
        }
        let (e1, e2) = (&basis.directions[i], &basis.directions[j]);
        // Solve a*e1 + b*e2 = v.
        let det = e1.x() * e2.y() - e1.y() * e2.x();
        if det.abs() < 1e-12 {
            continue;
        }
        let a = (v.x() * e2.y() - v.y() * e2.x()) / det;
        let b = (e1.x() * v.y() - e1.y() * v.x()) / det;
        let lo = a.min(b);
        if best.map_or(true, |(blo, ..)| lo > blo) {
            best = Some((lo, i, j, a, b));
        }
    }
    let (lo, i, j, a, b) = best.ok_or_else(|| CbfError::InvalidWeights("degenerate basis".into()))?;
    if lo < -1e-9 {
        return Err(CbfError::OutsideCone { angle: basis.nominal.angle_to(v), max: basis.half_angle });
    }
    let (a, b) = (a.max(0.0), b.max(0.0));
    let sum = a + b;
    if sum <= 1e-12 {
        return Err(CbfError::InvalidWeights("zero combination".into()));
    }
    let mut w = vec![0.0; basis.directions.len()];
    w[i] = a / sum;
    w[j] = b / sum;
    Ok(w)
}

/// Recomposition of weights against the basis; the direction is the contract.
pub fn recompose(weights: &[f64], basis: &ConeBasis) -> Vector {
    let dim = basis.nominal.dim();
    let mut out = Vector::zero(dim);
    for (l, e) in weights.iter().zip(basis.directions.iter()) {
        out = out.add(&e.scale(*l));
    }
    out
}

/// Inflated worst-obstacle barrier: min clearance minus the safety margin,
/// with the argmin obstacle index.
pub fn barrier_value(position: &Vector, obstacles: &[Obstacle], d_safe: f64) -> (f64, Option<usize>) {
    if obstacles.is_empty() {
        return (NO_OBSTACLE_CLEARANCE, None);
    }
    let mut best = f64::INFINITY;
    let mut arg = 0;
    for (j, o) in obstacles.iter().enumerate() {
        let c = signed_clearance(position, o) - d_safe;
        if c < best {
            best = c;
            arg = j;
        }
    }
    (best, Some(arg))
}

/// Barrier gradient at `position`: the unit vector away from the nearest
/// inflated obstacle. Equidistant obstacles (within 1e-9) have their
/// gradient directions averaged and renormalized.
pub fn barrier_gradient(position: &Vector, obstacles: &[Obstacle], d_safe: f64) -> Vector {
    let dim = position.dim();
    if obstacles.is_empty() {
        return unit_x(dim);
    }
    let (h_min, _) = barrier_value(position, obstacles, d_safe);
    let mut acc = Vector::zero(dim);
    let mut count = 0;
    for o in obstacles {
        let c = signed_clearance(position, o) - d_safe;
        if c <= h_min + 1e-9 {
            acc = acc.add(&crate::world::clearance_gradient(position, o));
            count += 1;
        }
    }
    if count == 0 {
        return unit_x(dim);
    }
    acc.normalized().unwrap_or_else(|| unit_x(dim))
}

fn unit_x(dim: usize) -> Vector {
    if dim == 2 {
        Vector::new2(1.0, 0.0)
    } else {
        Vector::new3(1.0, 0.0, 0.0)
    }
}

/// Per-basis certificate: shared barrier value, full-speed control along the
/// basis direction, and the linear class-K condition residual.
pub fn basis_certificate(
    state: &AgentState,
    direction: &Vector,
    obstacles: &[Obstacle],
    gamma: f64,
    v_max: f64,
    d_safe: f64,
) -> BasisCertificate {
    let (h, _) = barrier_value(&state.position, obstacles, d_safe);
    let grad = barrier_gradient(&state.position, obstacles, d_safe);
    let u = direction
        .normalized()
        .map(|d| d.scale(v_max))
        .unwrap_or_else(|| Vector::zero(state.position.dim()));
    let residual = grad.dot(&u) + gamma * h;
    BasisCertificate { direction: *direction, h, u, gamma, grad, residual, feasible: residual >= -FEASIBILITY_TOL }
}

/// Convex mixture of basis certificates. All certificates share the barrier
/// value and gradient at one state, so the mixed gradient is unambiguous.
pub fn mix_certificates(weights: &[f64], certs: &[BasisCertificate]) -> Result<MixedCertificate, CbfError> {
    if weights.len() != certs.len() {
        return Err(CbfError::DimensionMismatch { left: weights.len(), right: certs.len() });
    }
    if certs.is_empty() {
        return Err(CbfError::InvalidWeights("empty certificate list".into()));
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > 1e-9 || weights.iter().any(|w| *w < -1e-12) {
        return Err(CbfError::InvalidWeights(format!("sum {sum}, min {:?}", weights.iter().cloned().fold(f64::INFINITY, f64::min))));
    }
    let dim = certs[0].u.dim();
    let mut u = Vector::zero(dim);
    let mut h = 0.0;
    let mut gamma_max = f64::NEG_INFINITY;
    for (l, c) in weights.iter().zip(certs.iter()) {
        u = u.add(&c.u.scale(*l));
        h += l * c.h;
        gamma_max = gamma_max.max(c.gamma);
    }
    let residual = certs[0].grad.dot(&u) + gamma_max * h;
    Ok(MixedCertificate { weights: weights.to_vec(), u, h, residual })
}

/// Cone direction sample set: deterministic, always includes the nominal and
/// the boundary of the cone.
pub fn cone_direction_samples(cone: &DirectionCone, n: usize) -> Vec<Vector> {
    let dim = cone.nominal.dim();
    if dim == 2 {
        let theta = cone.half_angle;
        let base = cone.nominal.angle2();
        let n = n.max(2);
        let mut dirs: Vec<Vector> = (0..n)
            .map(|k| {
                let a = -theta + 2.0 * theta * k as f64 / (n - 1) as f64;
                Vector::from_angle2(base + a)
            })
            .collect();
        if n % 2 == 0 {
            dirs.push(cone.nominal);
        }
        dirs
    } else {
        cap_sample_directions(&cone.nominal, cone.half_angle, n.max(3), 8)
    }
}

/// Worst-case inflated clearance over the cone and the lookahead segment.
pub fn fuzzy_barrier(
    state: &AgentState,
    action: &SemanticAction,
    obstacles: &[Obstacle],
    pp: &PredictionParams,
    d_safe: f64,
) -> Verdict {
    let cone = DirectionCone::from_action(action);
    if obstacles.is_empty() {
        let h = NO_OBSTACLE_CLEARANCE - d_safe;
        return Verdict { status: VerdictStatus::Safe, h_fuzzy: h, worst_direction: cone.nominal, nearest_obstacle: None };
    }
    let dirs = cone_direction_samples(&cone, pp.n_dir_samples);
    let mut min_c = f64::INFINITY;
    let mut worst = cone.nominal;
    let mut nearest = 0usize;
    for v in &dirs {
        for (j, o) in obstacles.iter().enumerate() {
            for s in 0..pp.n_seg_samples {
                let t = s as f64 / (pp.n_seg_samples - 1) as f64;
                let p = state.position.add(&v.scale(pp.d_pred * t));
                let c = signed_clearance(&p, o);
                if c < min_c {
                    min_c = c;
                    worst = *v;
                    nearest = j;
                }
            }
        }
    }
    let h_fuzzy = min_c - d_safe;
    Verdict {
        status: if h_fuzzy >= 0.0 { VerdictStatus::Safe } else { VerdictStatus::Hazardous },
        h_fuzzy,
        worst_direction: worst,
        nearest_obstacle: Some(nearest),
    }
}

/// Candidate nominal directions for correction: a deterministic scan of the
/// whole direction space, starting at the current nominal.
fn correction_candidates(nominal: &Vector, n: usize) -> Vec<Vector> {
    if nominal.dim() == 2 {
        let base = nominal.angle2();
        (0..n)
            .map(|k| Vector::from_angle2(base + k as f64 * 2.0 * std::f64::consts::PI / n as f64))
            .collect()
    } else {
        let golden = std::f64::consts::PI * (3.0 - 5.0_f64.sqrt());
        let mut out = vec![*nominal];
        for k in 0..n {
            let z = 1.0 - 2.0 * (k as f64 + 0.5) / n as f64;
            let polar = z.clamp(-1.0, 1.0).acos();
            out.push(cap_direction(nominal, polar, k as f64 * golden));
        }
        out
    }
}

/// Rotate a hazardous action's nominal to the direction maximizing the fuzzy
/// barrier, keeping the cone angle. Ties break toward the smallest rotation.
/// Safe inputs are returned unchanged; if every candidate stays hazardous the
/// argmax is returned with its (still hazardous) verdict.
pub fn correct_action(
    state: &AgentState,
    action: &SemanticAction,
    obstacles: &[Obstacle],
    pp: &PredictionParams,
    d_safe: f64,
    n_candidates: usize,
) -> (SemanticAction, Verdict) {
    let original = fuzzy_barrier(state, action, obstacles, pp, d_safe);
    if original.status == VerdictStatus::Safe {
        return (action.clone(), original);
    }
    let scored: Vec<(Vector, Verdict, f64)> = correction_candidates(&action.nominal, n_candidates)
        .into_iter()
        .map(|cand| {
            let trial = action.with_nominal(cand);
            let verdict = fuzzy_barrier(state, &trial, obstacles, pp, d_safe);
            let rot = action.nominal.angle_to(&cand);
            (cand, verdict, rot)
        })
        .collect();
    let h_max = scored.iter().map(|(_, v, _)| v.h_fuzzy).fold(f64::NEG_INFINITY, f64::max);
    // Minimal intervention: when any candidate verifies Safe, every Safe
    // candidate counts as tied and the smallest rotation wins. When none is
    // Safe, candidates within the stability band of the (negative) maximum
    // are tied, so the choice does not chatter between near-equal maxima.
    let floor = if h_max >= 0.0 { 0.0 } else { h_max - CORRECTION_STABILITY_BAND };
    let mut best: Option<&(Vector, Verdict, f64)> = None;
    for entry in &scored {
        if entry.1.h_fuzzy < floor {
            continue;
        }
        match best {
            Some(b) if b.2 <= entry.2 => {}
            _ => best = Some(entry),
        }
    }
    let (dir, verdict, _) = best.expect("candidate scan is nonempty");
    (action.with_nominal(*dir), verdict.clone())
}

/// Tolerance below the best correction score within which candidates are
/// treated as ties.
pub const CORRECTION_STABILITY_BAND: f64 = 0.3;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::SemanticClass;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn deg(d: f64) -> f64 {
        d.to_radians()
    }

    #[test]
    fn discretize_five_rays_over_60_degrees() {
        let cone = DirectionCone::new(Vector::new2(1.0, 0.0), deg(60.0));
        let basis = discretize_cone(&cone, 5).unwrap();
        assert_eq!(basis.directions.len(), 5);
        let expected_scale = (1.0 + 1e-6) / deg(15.0).cos();
        assert!((basis.scale - expected_scale).abs() < 1e-12);
        let angles: Vec<f64> = basis.directions.iter().map(|d| d.angle2().to_degrees()).collect();
        for (a, e) in angles.iter().zip([-60.0, -30.0, 0.0, 30.0, 60.0]) {
            assert!((a - e).abs() < 1e-9, "angle {a} vs {e}");
        }
    }

    #[test]
    fn discretize_two_boundary_rays() {
        let cone = DirectionCone::new(Vector::new2(0.0, 1.0), deg(10.0));
        let basis = discretize_cone(&cone, 2).unwrap();
        assert_eq!(basis.directions.len(), 2);
        assert!((basis.scale - (1.0 + 1e-6) / deg(10.0).cos()).abs() < 1e-12);
        // Nominal is the symmetric combination of the two rays.
        let w = decompose_direction(&cone.nominal, &basis).unwrap();
        assert!((w[0] - 0.5).abs() < 1e-9 && (w[1] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn discretize_rejects_small_n() {
        let cone = DirectionCone::new(Vector::new2(1.0, 0.0), deg(30.0));
        assert!(matches!(discretize_cone(&cone, 1), Err(CbfError::InvalidN { .. })));
        let cone3 = DirectionCone::new(Vector::new3(1.0, 0.0, 0.0), deg(30.0));
        assert!(matches!(discretize_cone(&cone3, 3), Err(CbfError::InvalidN { .. })));
    }

    #[test]
    fn full_circle_coverage() {
        let cone = DirectionCone::new(Vector::new2(1.0, 0.0), std::f64::consts::PI);
        for n in [2usize, 3, 8] {
            let basis = discretize_cone(&cone, n).unwrap();
            for k in 0..360 {
                let v = Vector::from_angle2(k as f64 * std::f64::consts::PI / 180.0);
                let w = decompose_direction(&v, &basis).unwrap();
                let r = recompose(&w, &basis);
                assert!(r.angle_to(&v) < 1e-6);
                assert!(r.norm() >= 1.0 - 1e-9, "norm {} n {}", r.norm(), n);
            }
        }
    }

    #[test]
    fn decompose_one_hot_on_ray() {
        let cone = DirectionCone::new(Vector::new2(1.0, 0.0), deg(60.0));
        let basis = discretize_cone(&cone, 5).unwrap();
        for (i, e) in basis.directions.iter().enumerate() {
            let v = e.normalized().unwrap();
            let w = decompose_direction(&v, &basis).unwrap();
            for (j, l) in w.iter().enumerate() {
                if j == i {
                    assert!((l - 1.0).abs() < 1e-9);
                } else {
                    assert!(*l < 1e-9);
                }
            }
        }
    }

    #[test]
    fn decompose_outside_cone_errors() {
        let cone = DirectionCone::new(Vector::new2(1.0, 0.0), deg(10.0));
        let basis = discretize_cone(&cone, 3).unwrap();
        let v = Vector::from_angle2(deg(45.0));
        assert!(matches!(decompose_direction(&v, &basis), Err(CbfError::OutsideCone { .. })));
    }

    #[test]
    fn recomposition_over_random_in_cone_directions() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cone = DirectionCone::new(Vector::from_angle2(deg(33.0)), deg(45.0));
        let basis = discretize_cone(&cone, 5).unwrap();
        for _ in 0..1000 {
            let a = rng.gen_range(-deg(45.0)..=deg(45.0));
            let v = Vector::from_angle2(deg(33.0) + a);
            let w = decompose_direction(&v, &basis).unwrap();
            let sum: f64 = w.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
            let r = recompose(&w, &basis);
            assert!(r.angle_to(&v) < 1e-6, "direction error {}", r.angle_to(&v));
            assert!(r.norm() >= 1.0 - 1e-9);
        }
    }

    #[test]
    fn decompose_3d_recomposes_direction() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cone = DirectionCone::new(Vector::new3(0.0, 0.0, 1.0), deg(60.0));
        let basis = discretize_cone(&cone, 13).unwrap();
        // Geodesic edges between outer-ring points bulge inward, so exact
        // enclosure is only guaranteed slightly inside the cone boundary.
        for _ in 0..300 {
            let polar = rng.gen_range(0.0..deg(57.0));
            let az = rng.gen_range(0.0..std::f64::consts::TAU);
            let v = cap_direction(&cone.nominal, polar, az);
            let w = decompose_direction(&v, &basis).unwrap();
            let r = recompose(&w, &basis);
            assert!(r.angle_to(&v) < 1e-6, "direction error {}", r.angle_to(&v));
            assert!(r.norm() >= 1.0 - 1e-6, "norm {}", r.norm());
        }
    }

    #[test]
    fn barrier_value_examples() {
        let obs = vec![Obstacle::Sphere { center: Vector::new2(5.0, 0.0), radius: 1.0 }];
        let (h, idx) = barrier_value(&Vector::new2(0.0, 0.0), &obs, 0.5);
        assert!((h - 3.5).abs() < 1e-12);
        assert_eq!(idx, Some(0));
        let (h, _) = barrier_value(&Vector::new2(3.5, 0.0), &obs, 0.5);
        assert!(h.abs() < 1e-12);
        let (h, idx) = barrier_value(&Vector::new2(0.0, 0.0), &[], 0.5);
        assert_eq!(h, NO_OBSTACLE_CLEARANCE);
        assert_eq!(idx, None);
    }

    #[test]
    fn basis_certificate_examples() {
        let obs = vec![Obstacle::Sphere { center: Vector::new2(5.0, 0.0), radius: 1.0 }];
        let state = AgentState::at_rest(Vector::new2(0.0, 0.0));
        let away = basis_certificate(&state, &Vector::new2(-1.0, 0.0), &obs, 1.0, 2.0, 0.5);
        assert!((away.grad.x() + 1.0).abs() < 1e-12);
        assert!((away.residual - 5.5).abs() < 1e-9);
        assert!(away.feasible);
        let toward = basis_certificate(&state, &Vector::new2(1.0, 0.0), &obs, 1.0, 2.0, 0.5);
        assert!((toward.residual - 1.5).abs() < 1e-9);
        assert!(toward.feasible);
        let close = AgentState::at_rest(Vector::new2(3.0, 0.0));
        let bad = basis_certificate(&close, &Vector::new2(1.0, 0.0), &obs, 1.0, 2.0, 0.5);
        assert!((bad.h - 0.5).abs() < 1e-9);
        assert!((bad.residual + 1.5).abs() < 1e-9);
        assert!(!bad.feasible);
    }

    #[test]
    fn mix_one_hot_is_identity() {
        let obs = vec![Obstacle::Sphere { center: Vector::new2(5.0, 0.0), radius: 1.0 }];
        let state = AgentState::at_rest(Vector::new2(0.0, 0.0));
        let c1 = basis_certificate(&state, &Vector::new2(-1.0, 0.0), &obs, 1.0, 2.0, 0.5);
        let c2 = basis_certificate(&state, &Vector::new2(0.0, 1.0), &obs, 1.0, 2.0, 0.5);
        let m = mix_certificates(&[1.0, 0.0], &[c1.clone(), c2]).unwrap();
        assert_eq!(m.u, c1.u);
        assert_eq!(m.h, c1.h);
        assert!((m.residual - c1.residual).abs() < 1e-12);
    }

    #[test]
    fn mix_averages_controls() {
        let obs = vec![Obstacle::Sphere { center: Vector::new2(50.0, 0.0), radius: 1.0 }];
        let state = AgentState::at_rest(Vector::new2(0.0, 0.0));
        let c1 = basis_certificate(&state, &Vector::new2(1.0, 0.0), &obs, 1.0, 2.0, 0.5);
        let c2 = basis_certificate(&state, &Vector::new2(0.0, 1.0), &obs, 1.0, 2.0, 0.5);
        let m = mix_certificates(&[0.5, 0.5], &[c1, c2]).unwrap();
        assert!((m.u.x() - 1.0).abs() < 1e-12 && (m.u.y() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mix_rejects_mismatch() {
        let obs = vec![Obstacle::Sphere { center: Vector::new2(5.0, 0.0), radius: 1.0 }];
        let state = AgentState::at_rest(Vector::new2(0.0, 0.0));
        let c = basis_certificate(&state, &Vector::new2(1.0, 0.0), &obs, 1.0, 2.0, 0.5);
        assert!(matches!(mix_certificates(&[1.0], &[c.clone(), c]), Err(CbfError::DimensionMismatch { .. })));
    }

    fn default_pp() -> PredictionParams {
        PredictionParams::new(4.0, 17, 16)
    }

    #[test]
    fn fuzzy_no_obstacles_is_safe() {
        let state = AgentState::at_rest(Vector::new2(0.0, 0.0));
        let a = SemanticAction::new("T", Vector::new2(1.0, 0.0), SemanticClass::Tracking);
        let v = fuzzy_barrier(&state, &a, &[], &default_pp(), 0.5);
        assert_eq!(v.status, VerdictStatus::Safe);
        assert!((v.h_fuzzy - (NO_OBSTACLE_CLEARANCE - 0.5)).abs() < 1e-6);
    }

    /// Dense-sampling oracle: same min-pooled clearance with far finer grids.
    fn dense_oracle(
        state: &AgentState,
        action: &SemanticAction,
        obstacles: &[Obstacle],
        d_pred: f64,
        d_safe: f64,
        n_dir: usize,
        n_seg: usize,
    ) -> f64 {
        let cone = DirectionCone::from_action(action);
        let dirs = cone_direction_samples(&cone, n_dir);
        let mut min_c = f64::INFINITY;
        for v in &dirs {
            for o in obstacles {
                for s in 0..n_seg {
                    let t = s as f64 / (n_seg - 1) as f64;
                    let p = state.position.add(&v.scale(d_pred * t));
                    min_c = min_c.min(signed_clearance(&p, o));
                }
            }
        }
        min_c - d_safe
    }

    #[test]
    fn fuzzy_head_on_is_hazardous() {
        let state = AgentState::at_rest(Vector::new2(0.0, 0.0));
        let a = SemanticAction::new("T", Vector::new2(1.0, 0.0), SemanticClass::Tracking);
        let obs = vec![Obstacle::Sphere { center: Vector::new2(3.0, 0.0), radius: 1.0 }];
        // 17 segment samples place one exactly at the sphere center (t=0.75),
        // so the minimum is the analytic -1.5.
        let pp = PredictionParams::new(4.0, 17, 17);
        let v = fuzzy_barrier(&state, &a, &obs, &pp, 0.5);
        assert_eq!(v.status, VerdictStatus::Hazardous);
        assert!((v.h_fuzzy + 1.5).abs() < 1e-9);
        let oracle = dense_oracle(&state, &a, &obs, 4.0, 0.5, 10_000, 1_000);
        assert!((v.h_fuzzy - oracle).abs() < 0.05);
    }

    #[test]
    fn fuzzy_obstacle_behind_is_safe() {
        let state = AgentState::at_rest(Vector::new2(0.0, 0.0));
        let a = SemanticAction::new("T", Vector::new2(1.0, 0.0), SemanticClass::Tracking);
        let obs = vec![Obstacle::Sphere { center: Vector::new2(-3.0, 0.0), radius: 1.0 }];
        let v = fuzzy_barrier(&state, &a, &obs, &default_pp(), 0.5);
        assert_eq!(v.status, VerdictStatus::Safe);
        assert!((v.h_fuzzy - 1.5).abs() < 1e-9);
        let oracle = dense_oracle(&state, &a, &obs, 4.0, 0.5, 10_000, 1_000);
        assert!((v.h_fuzzy - oracle).abs() < 0.05);
    }

    #[test]
    fn correction_turns_away_from_head_on_obstacle() {
        let state = AgentState::at_rest(Vector::new2(0.0, 0.0));
        let a = SemanticAction::new("T", Vector::new2(1.0, 0.0), SemanticClass::Tracking);
        let obs = vec![Obstacle::Sphere { center: Vector::new2(3.0, 0.0), radius: 1.0 }];
        let (fixed, verdict) = correct_action(&state, &a, &obs, &default_pp(), 0.5, 72);
        assert_eq!(verdict.status, VerdictStatus::Safe);
        // Minimal intervention: just enough rotation to clear the inflated
        // obstacle, not a swing toward the most open direction.
        let bearing = fixed.nominal.angle_to(&Vector::new2(1.0, 0.0));
        assert!(bearing.to_degrees() >= 15.0 && bearing.to_degrees() <= 90.0);
        assert_eq!(fixed.cone_angle, a.cone_angle);
    }

    #[test]
    fn correction_is_noop_for_safe_action() {
        let state = AgentState::at_rest(Vector::new2(0.0, 0.0));
        let a = SemanticAction::new("T", Vector::new2(1.0, 0.0), SemanticClass::Tracking);
        let obs = vec![Obstacle::Sphere { center: Vector::new2(-3.0, 0.0), radius: 1.0 }];
        let (fixed, verdict) = correct_action(&state, &a, &obs, &default_pp(), 0.5, 72);
        assert_eq!(fixed, a);
        assert_eq!(verdict.status, VerdictStatus::Safe);
    }

    #[test]
    fn correction_in_full_enclosure_stays_hazardous() {
        let state = AgentState::at_rest(Vector::new2(0.0, 0.0));
        let a = SemanticAction::new("T", Vector::new2(1.0, 0.0), SemanticClass::Tracking);
        // Overlapping ring of inflated obstacles around the origin.
        let obs: Vec<Obstacle> = (0..12)
            .map(|k| {
                let ang = k as f64 * std::f64::consts::TAU / 12.0;
                Obstacle::Sphere { center: Vector::from_angle2(ang).scale(1.5), radius: 1.0 }
            })
            .collect();
        let (_, verdict) = correct_action(&state, &a, &obs, &default_pp(), 0.5, 72);
        assert_eq!(verdict.status, VerdictStatus::Hazardous);
        // Every candidate direction must indeed be hazardous.
        for cand in correction_candidates(&a.nominal, 72) {
            let trial = a.with_nominal(cand);
            let v = fuzzy_barrier(&state, &trial, &obs, &default_pp(), 0.5);
            assert!(v.h_fuzzy < 0.0);
        }
    }

    #[test]
    fn adding_obstacles_never_raises_h_fuzzy() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let pp = default_pp();
        for _ in 0..100 {
            let state = AgentState::at_rest(Vector::new2(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)));
            let a = SemanticAction::new(
                "T",
                Vector::from_angle2(rng.gen_range(0.0..std::f64::consts::TAU)),
                SemanticClass::Evasion,
            );
            let mut obs = vec![Obstacle::Sphere {
                center: Vector::new2(rng.gen_range(-8.0..8.0), rng.gen_range(-8.0..8.0)),
                radius: rng.gen_range(0.3..1.5),
            }];
            let before = fuzzy_barrier(&state, &a, &obs, &pp, 0.5).h_fuzzy;
            obs.push(Obstacle::Sphere {
                center: Vector::new2(rng.gen_range(-8.0..8.0), rng.gen_range(-8.0..8.0)),
                radius: rng.gen_range(0.3..1.5),
            });
            let after = fuzzy_barrier(&state, &a, &obs, &pp, 0.5).h_fuzzy;
            assert!(after <= before + 1e-12);
        }
    }

    #[test]
    fn wider_cones_never_raise_h_fuzzy() {
        let mut rng = ChaCha8Rng::seed_from_u64(78);
        for _ in 0..100 {
            let state = AgentState::at_rest(Vector::new2(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)));
            let nominal = Vector::from_angle2(rng.gen_range(0.0..std::f64::consts::TAU));
            let obs = vec![Obstacle::Sphere {
                center: Vector::new2(rng.gen_range(-8.0..8.0), rng.gen_range(-8.0..8.0)),
                radius: rng.gen_range(0.3..1.5),
            }];
            let theta1 = deg(20.0);
            let theta2 = deg(60.0);
            // Equal per-radian sampling density.
            let pp1 = PredictionParams::new(4.0, 21, 16);
            let pp2 = PredictionParams::new(4.0, 61, 16);
            let a1 = SemanticAction::new("A", nominal, SemanticClass::Custom(theta1));
            let a2 = SemanticAction::new("A", nominal, SemanticClass::Custom(theta2));
            let h1 = fuzzy_barrier(&state, &a1, &obs, &pp1, 0.5).h_fuzzy;
            let h2 = fuzzy_barrier(&state, &a2, &obs, &pp2, 0.5).h_fuzzy;
            assert!(h2 <= h1 + 1e-9);
        }
    }

    #[test]
    fn fuzzy_is_rotation_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(79);
        let pp = default_pp();
        for _ in 0..50 {
            let rot = rng.gen_range(0.0..std::f64::consts::TAU);
            let pos = Vector::new2(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0));
            let nominal = Vector::from_angle2(rng.gen_range(0.0..std::f64::consts::TAU));
            let center = Vector::new2(rng.gen_range(-8.0..8.0), rng.gen_range(-8.0..8.0));
            let r = rng.gen_range(0.3..1.5);
            let a = SemanticAction::new("A", nominal, SemanticClass::Evasion);
            let obs = vec![Obstacle::Sphere { center, radius: r }];
            let h = fuzzy_barrier(&AgentState::at_rest(pos), &a, &obs, &pp, 0.5).h_fuzzy;
            let a_r = SemanticAction::new("A", nominal.rotate2(rot), SemanticClass::Evasion);
            let obs_r = vec![Obstacle::Sphere { center: center.rotate2(rot), radius: r }];
            let h_r = fuzzy_barrier(&AgentState::at_rest(pos.rotate2(rot)), &a_r, &obs_r, &pp, 0.5).h_fuzzy;
            assert!((h - h_r).abs() < 1e-9);
        }
    }

    #[test]
    fn verdict_sign_matches_status_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(80);
        let pp = default_pp();
        for _ in 0..200 {
            let state = AgentState::at_rest(Vector::new2(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)));
            let a = SemanticAction::new(
                "A",
                Vector::from_angle2(rng.gen_range(0.0..std::f64::consts::TAU)),
                SemanticClass::Evasion,
            );
            let obs = vec![Obstacle::Sphere {
                center: Vector::new2(rng.gen_range(-6.0..6.0), rng.gen_range(-6.0..6.0)),
                radius: rng.gen_range(0.3..1.5),
            }];
            let v = fuzzy_barrier(&state, &a, &obs, &pp, 0.5);
            assert_eq!(v.status == VerdictStatus::Safe, v.h_fuzzy >= 0.0);
        }
    }
}
