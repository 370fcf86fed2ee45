//! High-level action selection: the deterministic scripted planner, the
//! external chat-completion planner with parse fallback, and the two
//! low-level controllers dispatched by the safety arbitration.

use crate::cbf::{
    barrier_gradient, basis_certificate, decompose_direction, mix_certificates, ConeBasis, Verdict,
    VerdictStatus,
};
use crate::world::{signed_clearance, AgentState, Obstacle, SemanticAction, SemanticClass, Vector};
use serde::{Deserialize, Serialize};
use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;
use std::sync::Mutex;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PlannerError {
    #[error("chat transport failed: {0}")]
    Chat(String),
    #[error("endpoint configuration: {0}")]
    Config(String),
}

pub const COMPASS: [&str; 8] = ["E", "NE", "N", "NW", "W", "SW", "S", "SE"];

fn compass_direction(k: usize, dim: usize) -> Vector {
    let a = k as f64 * 45.0_f64.to_radians();
    if dim == 2 {
        Vector::from_angle2(a)
    } else {
        Vector::new3(a.cos(), a.sin(), 0.0)
    }
}

/// 8-way snap of a planar angle, ties toward the smaller compass angle.
pub fn snap_index(angle: f64) -> usize {
    let deg = angle.to_degrees().rem_euclid(360.0);
    let k_low = (deg / 45.0).floor() as usize % 8;
    let d_low = deg - 45.0 * k_low as f64;
    if d_low <= 45.0 - d_low {
        k_low
    } else {
        (k_low + 1) % 8
    }
}

/// Compass word for the 8-way sector containing a planar angle.
pub fn compass_word_for(angle: f64) -> &'static str {
    COMPASS_WORDS[snap_index(angle)]
}

#[derive(Debug, Clone)]
pub struct CatalogEntry {
    pub action: SemanticAction,
    pub summary: String,
    /// Token sets for fuzzy reply matching; a reply matches when it contains
    /// every token of any one set.
    pub synsets: Vec<Vec<String>>,
}

/// The finite semantic action catalog: 8 tracking headings, 8 evasion
/// headings, and HOLD (zero speed at the controller).
#[derive(Debug, Clone)]
pub struct Catalog {
    entries: Vec<CatalogEntry>,
}

pub const COMPASS_WORDS: [&str; 8] = [
    "east",
    "northeast",
    "north",
    "northwest",
    "west",
    "southwest",
    "south",
    "southeast",
];

impl Catalog {
    pub fn standard(dim: usize) -> Self {
        let mut entries = Vec::with_capacity(17);
        for (k, (code, word)) in COMPASS.iter().zip(COMPASS_WORDS.iter()).enumerate() {
            let dir = compass_direction(k, dim);
            entries.push(CatalogEntry {
                action: SemanticAction::new(format!("TRACK_{code}"), dir, SemanticClass::Tracking),
                summary: format!("pursue heading {word} with a narrow 10 degree cone"),
                synsets: vec![
                    vec!["track".into(), code.to_lowercase()],
                    vec!["track".into(), word.to_string()],
                    vec!["pursue".into(), word.to_string()],
                ],
            });
        }
        for (k, (code, word)) in COMPASS.iter().zip(COMPASS_WORDS.iter()).enumerate() {
            let dir = compass_direction(k, dim);
            entries.push(CatalogEntry {
                action: SemanticAction::new(format!("EVADE_{code}"), dir, SemanticClass::Evasion),
                summary: format!("evade toward {word} with a wide 60 degree cone"),
                synsets: vec![
                    vec!["evade".into(), code.to_lowercase()],
                    vec!["evade".into(), word.to_string()],
                    vec!["avoid".into(), word.to_string()],
                ],
            });
        }
        entries.push(CatalogEntry {
            action: SemanticAction::new("HOLD", compass_direction(0, dim), SemanticClass::Tracking),
            summary: "hold position at zero speed".into(),
            synsets: vec![vec!["hold".into()], vec!["hover".into()], vec!["wait".into()]],
        });
        Self { entries }
    }

    pub fn entries(&self) -> &[CatalogEntry] {
        &self.entries
    }

    pub fn find(&self, name: &str) -> Option<&CatalogEntry> {
        self.entries.iter().find(|e| e.action.name == name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.find(name).is_some()
    }

    pub fn tracking(&self, k: usize) -> &CatalogEntry {
        &self.entries[k % 8]
    }

    pub fn evasion(&self, k: usize) -> &CatalogEntry {
        &self.entries[8 + k % 8]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub pursuer: AgentState,
    pub target: AgentState,
    pub obstacles: Vec<Obstacle>,
    pub last_verdict: Option<Verdict>,
    pub last_corrected: Option<Vector>,
    pub step: usize,
}

impl Observation {
    pub fn dim(&self) -> usize {
        self.pursuer.position.dim()
    }

    pub fn min_clearance(&self) -> f64 {
        self.obstacles
            .iter()
            .map(|o| signed_clearance(&self.pursuer.position, o))
            .fold(f64::INFINITY, f64::min)
    }

    /// Planar bearing from pursuer to target.
    pub fn bearing(&self) -> f64 {
        let d = self.target.position.sub(&self.pursuer.position);
        d.y().atan2(d.x())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PlanSource {
    Scripted,
    External,
    Fallback,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanResult {
    pub action: SemanticAction,
    pub rationale: String,
    pub source: PlanSource,
}

/// Planning policy used by the simulator; implementations must be usable from
/// a parallel episode map.
pub trait Planner: Send + Sync {
    fn plan(&self, obs: &Observation, context: &str) -> PlanResult;
    fn catalog(&self) -> &Catalog;
}

pub struct ScriptedPlanner {
    pub catalog: Catalog,
}

impl ScriptedPlanner {
    pub fn new(dim: usize) -> Self {
        Self { catalog: Catalog::standard(dim) }
    }
}

impl Planner for ScriptedPlanner {
    fn plan(&self, obs: &Observation, context: &str) -> PlanResult {
        plan_scripted(obs, context, &self.catalog)
    }

    fn catalog(&self) -> &Catalog {
        &self.catalog
    }
}

pub struct ExternalPlanner {
    pub catalog: Catalog,
    pub backend: Box<dyn ChatBackend>,
    pub max_retries: u32,
    pub transcript: Option<TranscriptLog>,
}

impl Planner for ExternalPlanner {
    fn plan(&self, obs: &Observation, context: &str) -> PlanResult {
        plan_external(obs, context, &self.catalog, self.backend.as_ref(), self.max_retries, self.transcript.as_ref())
    }

    fn catalog(&self) -> &Catalog {
        &self.catalog
    }
}

/// Deterministic rule planner: evade along the corrected direction after a
/// hazardous verdict, otherwise track the catalog heading nearest the target.
pub fn plan_scripted(obs: &Observation, _context: &str, catalog: &Catalog) -> PlanResult {
    if let (Some(v), Some(corrected)) = (&obs.last_verdict, &obs.last_corrected) {
        if v.status == VerdictStatus::Hazardous {
            let k = snap_index(corrected.y().atan2(corrected.x()));
            let name = catalog.evasion(k).action.name.clone();
            // The corrected direction was certified with the tracking cone,
            // so the evade instruction keeps that width rather than the wide
            // class default; a wide cone would reject its own nominal.
            let action = catalog
                .evasion(k)
                .action
                .with_nominal(*corrected)
                .with_cone_angle(crate::world::TRACKING_CONE_ANGLE);
            debug_assert_eq!(action.name, name);
            return PlanResult { action, rationale: String::new(), source: PlanSource::Scripted };
        }
    }
    let d = obs.target.position.sub(&obs.pursuer.position);
    if d.norm() < 1e-12 {
        return PlanResult {
            action: catalog.tracking(0).action.clone(),
            rationale: String::new(),
            source: PlanSource::Scripted,
        };
    }
    let k = snap_index(obs.bearing());
    PlanResult { action: catalog.tracking(k).action.clone(), rationale: String::new(), source: PlanSource::Scripted }
}

// ---------------------------------------------------------------------------
// External planner

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EndpointConfig {
    pub base_url: String,
    pub api_key: Option<String>,
    pub model_name: String,
    pub timeout_s: f64,
    pub max_retries: u32,
}

impl EndpointConfig {
    pub fn from_env() -> Result<Self, PlannerError> {
        let base_url = std::env::var("LLM_URL")
            .map_err(|_| PlannerError::Config("LLM_URL is not set".into()))?;
        Ok(Self {
            base_url,
            api_key: std::env::var("LLM_KEY").ok(),
            model_name: std::env::var("LLM_MODEL").unwrap_or_else(|_| "default".into()),
            timeout_s: 30.0,
            max_retries: 2,
        })
    }
}

pub trait ChatBackend: Send + Sync {
    fn complete(&self, prompt: &str) -> Result<String, PlannerError>;
}

/// De-facto JSON chat schema over HTTP(S): messages array in, single text
/// reply out. Temperature pinned to zero for replayability.
pub struct HttpChatBackend {
    cfg: EndpointConfig,
    client: reqwest::blocking::Client,
}

impl HttpChatBackend {
    pub fn new(cfg: EndpointConfig) -> Self {
        let client = reqwest::blocking::Client::builder()
            .timeout(std::time::Duration::from_secs_f64(cfg.timeout_s))
            .build()
            .expect("client build");
        Self { cfg, client }
    }
}

impl ChatBackend for HttpChatBackend {
    fn complete(&self, prompt: &str) -> Result<String, PlannerError> {
        let body = serde_json::json!({
            "model": self.cfg.model_name,
            "temperature": 0,
            "messages": [{"role": "user", "content": prompt}],
        });
        let mut req = self.client.post(&self.cfg.base_url).json(&body);
        if let Some(k) = &self.cfg.api_key {
            req = req.bearer_auth(k);
        }
        let value: serde_json::Value = req
            .send()
            .map_err(|e| PlannerError::Chat(e.to_string()))?
            .json()
            .map_err(|e| PlannerError::Chat(e.to_string()))?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(|s| s.to_string())
            .ok_or_else(|| PlannerError::Chat("reply missing choices[0].message.content".into()))
    }
}

/// Append-only JSONL transcript of every chat call, for audit and replay.
pub struct TranscriptLog {
    file: Mutex<std::fs::File>,
}

impl TranscriptLog {
    pub fn create(path: &Path) -> std::io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self { file: Mutex::new(file) })
    }

    fn record(&self, prompt: &str, reply: Option<&str>, latency_ms: u128, outcome: &str) {
        let line = serde_json::json!({
            "prompt": prompt,
            "reply": reply,
            "latency_ms": latency_ms,
            "parse_outcome": outcome,
        });
        let mut f = self.file.lock().unwrap();
        let _ = writeln!(f, "{line}");
    }
}

fn reply_tokens(reply: &str) -> Vec<String> {
    reply
        .to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_string())
        .collect()
}

/// Exact-then-fuzzy catalog match of a planner reply.
pub fn parse_reply(reply: &str, catalog: &Catalog) -> Option<SemanticAction> {
    let trimmed = reply.trim().to_uppercase();
    if let Some(e) = catalog.find(&trimmed) {
        return Some(e.action.clone());
    }
    let toks = reply_tokens(reply);
    for entry in catalog.entries() {
        for synset in &entry.synsets {
            if synset.iter().all(|t| toks.contains(t)) {
                return Some(entry.action.clone());
            }
        }
    }
    None
}

/// Deterministic byte-for-byte prompt assembly from observation, retrieved
/// context, and the catalog.
pub fn assemble_prompt(obs: &Observation, context: &str, catalog: &Catalog) -> String {
    let mut s = String::new();
    s.push_str("Scene:\n");
    s.push_str(&format!("  step: {}\n", obs.step));
    s.push_str(&format!("  pursuer_position: {:?}\n", obs.pursuer.position.as_slice()));
    s.push_str(&format!("  target_position: {:?}\n", obs.target.position.as_slice()));
    s.push_str(&format!("  bearing_to_target_deg: {:.2}\n", obs.bearing().to_degrees()));
    let mc = obs.min_clearance();
    if mc.is_finite() {
        s.push_str(&format!("  min_clearance_m: {mc:.3}\n"));
    } else {
        s.push_str("  min_clearance_m: none\n");
    }
    for (j, o) in obs.obstacles.iter().enumerate() {
        let c = signed_clearance(&obs.pursuer.position, o);
        match o {
            Obstacle::Sphere { center, radius } => {
                s.push_str(&format!(
                    "  obstacle_{j}: sphere center={:?} radius={radius:.3} clearance={c:.3}\n",
                    center.as_slice()
                ));
            }
            Obstacle::CylinderZ { center_xy, radius } => {
                s.push_str(&format!(
                    "  obstacle_{j}: cylinder center_xy={center_xy:?} radius={radius:.3} clearance={c:.3}\n"
                ));
            }
        }
    }
    s.push_str("Context:\n");
    if context.is_empty() {
        s.push_str("  (none)\n");
    } else {
        for line in context.lines() {
            s.push_str(&format!("  {line}\n"));
        }
    }
    s.push_str("Actions:\n");
    for e in catalog.entries() {
        s.push_str(&format!("  {}: {}\n", e.action.name, e.summary));
    }
    s.push_str("Reply with exactly one action name.\n");
    s
}

/// Query the external endpoint with retries; any transport or parse failure
/// falls back to the scripted planner and is never surfaced to the caller.
pub fn plan_external(
    obs: &Observation,
    context: &str,
    catalog: &Catalog,
    backend: &dyn ChatBackend,
    max_retries: u32,
    transcript: Option<&TranscriptLog>,
) -> PlanResult {
    let prompt = assemble_prompt(obs, context, catalog);
    for attempt in 0..=max_retries {
        let start = Instant::now();
        match backend.complete(&prompt) {
            Ok(reply) => {
                let latency = start.elapsed().as_millis();
                match parse_reply(&reply, catalog) {
                    Some(action) => {
                        if let Some(t) = transcript {
                            t.record(&prompt, Some(&reply), latency, "parsed");
                        }
                        return PlanResult { action, rationale: reply, source: PlanSource::External };
                    }
                    None => {
                        if let Some(t) = transcript {
                            t.record(&prompt, Some(&reply), latency, "unparseable");
                        }
                        log::warn!("planner reply unparseable (attempt {attempt}): {reply:?}");
                    }
                }
            }
            Err(e) => {
                if let Some(t) = transcript {
                    t.record(&prompt, None, start.elapsed().as_millis(), "transport_error");
                }
                log::warn!("planner transport error (attempt {attempt}): {e}");
            }
        }
    }
    let mut fallback = plan_scripted(obs, context, catalog);
    fallback.source = PlanSource::Fallback;
    fallback
}

// ---------------------------------------------------------------------------
// Controllers

/// Pure pursuit at full speed toward the target.
pub fn task_control(obs: &Observation, v_max: f64) -> Vector {
    let d = obs.target.position.sub(&obs.pursuer.position);
    match d.normalized() {
        Some(dir) => dir.scale(v_max),
        None => Vector::zero(obs.dim()),
    }
}

/// Mixed control along the corrected nominal, built from feasible basis
/// certificates. With no feasible certificate the control retreats along the
/// barrier gradient.
pub fn safety_control(
    state: &AgentState,
    corrected: &SemanticAction,
    basis: &ConeBasis,
    obstacles: &[Obstacle],
    gamma: f64,
    v_max: f64,
    d_safe: f64,
) -> Vector {
    let certs: Vec<_> = basis
        .directions
        .iter()
        .map(|e| basis_certificate(state, e, obstacles, gamma, v_max, d_safe))
        .collect();
    let feasible_idx: Vec<usize> = certs.iter().enumerate().filter(|(_, c)| c.feasible).map(|(i, _)| i).collect();
    if feasible_idx.is_empty() {
        return barrier_gradient(&state.position, obstacles, d_safe).scale(v_max);
    }
    let sub_basis = ConeBasis {
        directions: feasible_idx.iter().map(|&i| basis.directions[i]).collect(),
        scale: basis.scale,
        angular_spacing: basis.angular_spacing,
        nominal: basis.nominal,
        half_angle: basis.half_angle,
    };
    let sub_certs: Vec<_> = feasible_idx.iter().map(|&i| certs[i].clone()).collect();
    let weights = match decompose_direction(&corrected.nominal, &sub_basis) {
        Ok(w) => w,
        Err(_) => {
            // Nominal outside the feasible span: one-hot on the nearest
            // feasible direction.
            let mut best = 0usize;
            let mut best_angle = f64::INFINITY;
            for (i, d) in sub_basis.directions.iter().enumerate() {
                let a = d.angle_to(&corrected.nominal);
                if a < best_angle {
                    best_angle = a;
                    best = i;
                }
            }
            let mut w = vec![0.0; sub_basis.directions.len()];
            w[best] = 1.0;
            w
        }
    };
    match mix_certificates(&weights, &sub_certs) {
        Ok(m) => m.u,
        Err(_) => barrier_gradient(&state.position, obstacles, d_safe).scale(v_max),
    }
}
