//! Star-hierarchical knowledge graph: build and validate the hub/policy/
//! control structure, score nodes with hybrid embedding + synonym matching,
//! and retrieve the best layered decision path.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::RwLock;
use thiserror::Error;

pub const EMBED_DIM: usize = 256;
pub const DEFAULT_W_SEM: f64 = 0.7;
pub const DEFAULT_EPSILON: f64 = 1e-6;
/// Below this best-candidate score a retrieval layer relaxes elastically.
pub const DEFAULT_PHI_MIN: f64 = 0.05;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("KB parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("KB structure error: {reason}")]
    Structure { reason: String },
    #[error("no reachable candidate at layer {layer}")]
    NoPath { layer: usize },
    #[error("invalid query: {0}")]
    InvalidQuery(String),
}

#[derive(Debug, Error)]
#[error("embedding backend failed: {0}")]
pub struct EmbedBackendError(pub String);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subgraph {
    Scene,
    Policy,
    Control,
}

impl std::fmt::Display for Subgraph {
    fn fmt(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
        match self {
            Subgraph::Scene => write!(f, "scene"),
            Subgraph::Policy => write!(f, "policy"),
            Subgraph::Control => write!(f, "control"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeNode {
    pub id: String,
    pub subgraph: Subgraph,
    pub layer: usize,
    pub value: String,
    #[serde(default)]
    pub synonyms: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    Hub,
    Seq,
    Rel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeEdge {
    pub from: String,
    pub to: String,
    pub kind: EdgeKind,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KbFile {
    pub schema: u32,
    pub nodes: Vec<KnowledgeNode>,
    pub edges: Vec<KnowledgeEdge>,
}

#[derive(Debug, Clone)]
pub struct KnowledgeGraph {
    nodes: BTreeMap<String, KnowledgeNode>,
    edges: Vec<KnowledgeEdge>,
    hub: String,
    hub_adjacent: Vec<String>,
    seq_children: HashMap<String, Vec<String>>,
    rel_neighbors: HashMap<String, Vec<String>>,
    depth: BTreeMap<Subgraph, usize>,
}

impl KnowledgeGraph {
    pub fn hub(&self) -> &KnowledgeNode {
        &self.nodes[&self.hub]
    }

    pub fn node(&self, id: &str) -> Option<&KnowledgeNode> {
        self.nodes.get(id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &KnowledgeNode> {
        self.nodes.values()
    }

    pub fn edges(&self) -> &[KnowledgeEdge] {
        &self.edges
    }

    pub fn depth(&self, sg: Subgraph) -> usize {
        self.depth.get(&sg).copied().unwrap_or(0)
    }

    pub fn node_counts(&self) -> BTreeMap<Subgraph, usize> {
        let mut out = BTreeMap::new();
        for n in self.nodes.values() {
            *out.entry(n.subgraph).or_insert(0) += 1;
        }
        out
    }

    pub fn edge_counts(&self) -> BTreeMap<EdgeKind, usize> {
        let mut out = BTreeMap::new();
        for e in &self.edges {
            *out.entry(e.kind).or_insert(0) += 1;
        }
        // stable ordering for display
        let mut ordered = BTreeMap::new();
        for k in [EdgeKind::Hub, EdgeKind::Seq, EdgeKind::Rel] {
            if let Some(c) = out.get(&k) {
                ordered.insert(k, *c);
            }
        }
        ordered
    }

    fn layer_nodes(&self, sg: Subgraph, layer: usize) -> Vec<&KnowledgeNode> {
        self.nodes.values().filter(|n| n.subgraph == sg && n.layer == layer).collect()
    }
}

impl Ord for EdgeKind {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        fn rank(k: &EdgeKind) -> u8 {
            match k {
                EdgeKind::Hub => 0,
                EdgeKind::Seq => 1,
                EdgeKind::Rel => 2,
            }
        }
        rank(self).cmp(&rank(other))
    }
}

impl PartialOrd for EdgeKind {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// Parse and validate a KB file into a graph. Embeddings are not computed.
pub fn build_graph(text: &str) -> Result<KnowledgeGraph, GraphError> {
    let file: KbFile = serde_json::from_str(text)?;
    if file.schema != 1 {
        return Err(GraphError::Structure { reason: format!("unsupported schema {}", file.schema) });
    }
    let mut nodes = BTreeMap::new();
    for n in file.nodes {
        if nodes.insert(n.id.clone(), n.clone()).is_some() {
            return Err(GraphError::Structure { reason: format!("duplicate node id '{}'", n.id) });
        }
    }
    let hubs: Vec<&KnowledgeNode> = nodes.values().filter(|n| n.subgraph == Subgraph::Scene).collect();
    if hubs.len() != 1 {
        return Err(GraphError::Structure { reason: format!("multiple hubs ({} scene nodes, need exactly 1)", hubs.len()) });
    }
    let hub = hubs[0].id.clone();
    if nodes[&hub].layer != 0 {
        return Err(GraphError::Structure { reason: format!("hub '{hub}' must be at layer 0") });
    }
    for n in nodes.values() {
        if n.subgraph != Subgraph::Scene && n.layer < 1 {
            return Err(GraphError::Structure { reason: format!("node '{}' must have layer >= 1", n.id) });
        }
    }

    let mut hub_adjacent = Vec::new();
    let mut seq_children: HashMap<String, Vec<String>> = HashMap::new();
    let mut rel_neighbors: HashMap<String, Vec<String>> = HashMap::new();
    for e in &file.edges {
        let from = nodes.get(&e.from).ok_or_else(|| GraphError::Structure {
            reason: format!("edge references dangling id '{}'", e.from),
        })?;
        let to = nodes.get(&e.to).ok_or_else(|| GraphError::Structure {
            reason: format!("edge references dangling id '{}'", e.to),
        })?;
        match e.kind {
            EdgeKind::Hub => {
                if from.id != hub {
                    return Err(GraphError::Structure {
                        reason: format!("hub edge '{}' -> '{}' does not originate at the hub", e.from, e.to),
                    });
                }
                if to.layer != 1 {
                    return Err(GraphError::Structure {
                        reason: format!("hub edge target '{}' is not a layer-1 node", e.to),
                    });
                }
                hub_adjacent.push(to.id.clone());
            }
            EdgeKind::Seq => {
                if from.subgraph != to.subgraph || from.subgraph == Subgraph::Scene {
                    return Err(GraphError::Structure {
                        reason: format!("seq edge '{}' -> '{}' crosses subgraphs", e.from, e.to),
                    });
                }
                if to.layer != from.layer + 1 {
                    return Err(GraphError::Structure {
                        reason: format!(
                            "seq edge '{}' -> '{}' skips a layer ({} -> {})",
                            e.from, e.to, from.layer, to.layer
                        ),
                    });
                }
                seq_children.entry(from.id.clone()).or_default().push(to.id.clone());
            }
            EdgeKind::Rel => {
                if from.id == to.id {
                    return Err(GraphError::Structure { reason: format!("rel self-loop on '{}'", e.from) });
                }
                if from.subgraph != to.subgraph || from.layer != to.layer {
                    return Err(GraphError::Structure {
                        reason: format!("cross-layer rel edge '{}' -> '{}'", e.from, e.to),
                    });
                }
                rel_neighbors.entry(from.id.clone()).or_default().push(to.id.clone());
                rel_neighbors.entry(to.id.clone()).or_default().push(from.id.clone());
            }
        }
    }
    hub_adjacent.sort();
    hub_adjacent.dedup();
    for v in seq_children.values_mut() {
        v.sort();
        v.dedup();
    }
    for v in rel_neighbors.values_mut() {
        v.sort();
        v.dedup();
    }

    // Every node deeper than layer 1 must be seq-reachable from layer 1.
    let mut reachable: BTreeSet<String> = nodes
        .values()
        .filter(|n| n.layer == 1 && n.subgraph != Subgraph::Scene)
        .map(|n| n.id.clone())
        .collect();
    let mut frontier: Vec<String> = reachable.iter().cloned().collect();
    while let Some(id) = frontier.pop() {
        if let Some(children) = seq_children.get(&id) {
            for c in children {
                if reachable.insert(c.clone()) {
                    frontier.push(c.clone());
                }
            }
        }
    }
    for n in nodes.values() {
        if n.subgraph != Subgraph::Scene && n.layer >= 2 && !reachable.contains(&n.id) {
            return Err(GraphError::Structure {
                reason: format!("node '{}' at layer {} is not seq-reachable from layer 1", n.id, n.layer),
            });
        }
    }

    let mut depth = BTreeMap::new();
    for n in nodes.values() {
        if n.subgraph != Subgraph::Scene {
            let d = depth.entry(n.subgraph).or_insert(0);
            *d = (*d).max(n.layer);
        }
    }

    Ok(KnowledgeGraph { nodes, edges: file.edges, hub, hub_adjacent, seq_children, rel_neighbors, depth })
}

// ---------------------------------------------------------------------------
// Embedding

pub trait EmbedBackend: Send + Sync {
    fn embed(&self, text: &str) -> Result<Vec<f64>, EmbedBackendError>;
}

fn fnv1a64(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x1_0000_0000_01b3);
    }
    h
}

fn tokens(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_string())
        .collect()
}

/// Deterministic no-network fallback: hashed bag of tokens, L2-normalized.
#[derive(Debug, Default, Clone)]
pub struct HashedBagEmbedder;

impl EmbedBackend for HashedBagEmbedder {
    fn embed(&self, text: &str) -> Result<Vec<f64>, EmbedBackendError> {
        let mut v = vec![0.0; EMBED_DIM];
        for t in tokens(text) {
            v[(fnv1a64(&t) % EMBED_DIM as u64) as usize] += 1.0;
        }
        let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            for x in &mut v {
                *x /= norm;
            }
        }
        Ok(v)
    }
}

/// External embedding endpoint configured by EMBED_URL / EMBED_KEY.
pub struct HttpEmbedder {
    pub url: String,
    pub key: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpEmbedder {
    pub fn from_env() -> Option<Self> {
        let url = std::env::var("EMBED_URL").ok()?;
        Some(Self {
            url,
            key: std::env::var("EMBED_KEY").ok(),
            client: reqwest::blocking::Client::new(),
        })
    }
}

impl EmbedBackend for HttpEmbedder {
    fn embed(&self, text: &str) -> Result<Vec<f64>, EmbedBackendError> {
        #[derive(Deserialize)]
        struct Resp {
            embedding: Vec<f64>,
        }
        let mut req = self.client.post(&self.url).json(&serde_json::json!({ "input": text }));
        if let Some(k) = &self.key {
            req = req.bearer_auth(k);
        }
        let resp: Resp = req
            .send()
            .map_err(|e| EmbedBackendError(e.to_string()))?
            .json()
            .map_err(|e| EmbedBackendError(e.to_string()))?;
        let norm: f64 = resp.embedding.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm <= 0.0 {
            return Err(EmbedBackendError("zero embedding".into()));
        }
        Ok(resp.embedding.into_iter().map(|x| x / norm).collect())
    }
}

/// Write-once-per-text embedding cache with automatic fallback to the hashed
/// bag backend when the external backend fails.
pub struct Embedder {
    backend: Box<dyn EmbedBackend>,
    fallback: HashedBagEmbedder,
    cache: RwLock<HashMap<String, Vec<f64>>>,
}

impl Default for Embedder {
    fn default() -> Self {
        Self::new(Box::new(HashedBagEmbedder))
    }
}

impl Embedder {
    pub fn new(backend: Box<dyn EmbedBackend>) -> Self {
        Self { backend, fallback: HashedBagEmbedder, cache: RwLock::new(HashMap::new()) }
    }

    pub fn from_env() -> Self {
        match HttpEmbedder::from_env() {
            Some(h) => Self::new(Box::new(h)),
            None => Self::default(),
        }
    }

    pub fn vector(&self, text: &str) -> Vec<f64> {
        if let Some(v) = self.cache.read().unwrap().get(text) {
            return v.clone();
        }
        let v = match self.backend.embed(text) {
            Ok(v) => v,
            Err(e) => {
                log::warn!("embed backend failed ({e}), using hashed-bag fallback");
                self.fallback.embed(text).expect("fallback embedder is total")
            }
        };
        self.cache
            .write()
            .unwrap()
            .entry(text.to_string())
            .or_insert_with(|| v.clone());
        v
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    if a.len() != b.len() {
        return 0.0;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na <= 0.0 || nb <= 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

fn normalize_text(s: &str) -> String {
    s.to_lowercase().split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Hybrid score: weighted clamped cosine plus the symbolic synonym indicator.
pub fn score(node: &KnowledgeNode, q: &str, w_sem: f64, embedder: &Embedder) -> f64 {
    let cos = cosine(&embedder.vector(&node.value), &embedder.vector(q)).clamp(0.0, 1.0);
    let qn = normalize_text(q);
    let syn = if normalize_text(&node.value) == qn
        || node.synonyms.iter().any(|s| normalize_text(s) == qn)
    {
        1.0
    } else {
        0.0
    };
    w_sem * cos + (1.0 - w_sem) * syn
}

#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub components: Vec<String>,
    pub w_sem: f64,
    pub epsilon: f64,
    pub phi_min: f64,
}

impl Query {
    pub fn new(components: Vec<String>) -> Self {
        assert!(!components.is_empty());
        Self { components, w_sem: DEFAULT_W_SEM, epsilon: DEFAULT_EPSILON, phi_min: DEFAULT_PHI_MIN }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedPath {
    pub nodes: Vec<String>,
    pub objective: f64,
    pub scores: Vec<f64>,
}

#[derive(Clone)]
struct Prefix {
    value: f64,
    path: Vec<String>,
    scores: Vec<f64>,
}

/// Exact layered maximizer of the log-score path objective, with elastic
/// relaxation when a whole layer scores below `phi_min`. Ties break to the
/// lexicographically smallest node-id sequence.
pub fn retrieve(
    graph: &KnowledgeGraph,
    query: &Query,
    target: Subgraph,
    embedder: &Embedder,
) -> Result<RetrievedPath, GraphError> {
    if target == Subgraph::Scene {
        return Err(GraphError::InvalidQuery("target subgraph must be policy or control".into()));
    }
    let depth = graph.depth(target);
    let levels = query.components.len();
    if levels > depth {
        return Err(GraphError::InvalidQuery(format!(
            "query has {levels} components but {target} subgraph depth is {depth}"
        )));
    }

    let mut survivors: Vec<(String, Prefix)> = Vec::new();
    for (layer_idx, q) in query.components.iter().enumerate() {
        let layer = layer_idx + 1;
        let scored = |id: &String| {
            let node = &graph.nodes[id];
            score(node, q, query.w_sem, embedder)
        };

        // Base candidates: hub-adjacent at layer 1, seq-children otherwise.
        let mut base: Vec<String> = if layer == 1 {
            graph
                .hub_adjacent
                .iter()
                .filter(|id| {
                    let n = &graph.nodes[*id];
                    n.subgraph == target && n.layer == 1
                })
                .cloned()
                .collect()
        } else {
            let mut set = BTreeSet::new();
            for (id, _) in &survivors {
                if let Some(children) = graph.seq_children.get(id) {
                    set.extend(children.iter().cloned());
                }
            }
            set.into_iter().collect()
        };
        base.sort();

        let all_below = |cands: &[String]| cands.iter().all(|id| scored(id) < query.phi_min);

        let mut floored = false;
        let mut relaxed_once = false;
        let mut candidates = base.clone();
        if candidates.is_empty() || all_below(&candidates) {
            // First relaxation: one lateral rel hop before descending.
            let mut set: BTreeSet<String> = candidates.iter().cloned().collect();
            if layer == 1 {
                for id in &base {
                    if let Some(nbrs) = graph.rel_neighbors.get(id) {
                        set.extend(nbrs.iter().cloned());
                    }
                }
            } else {
                for (id, _) in &survivors {
                    if let Some(nbrs) = graph.rel_neighbors.get(id) {
                        for r in nbrs {
                            if let Some(children) = graph.seq_children.get(r) {
                                set.extend(children.iter().cloned());
                            }
                        }
                    }
                }
            }
            let widened: Vec<String> = set.into_iter().collect();
            if !widened.is_empty() && !all_below(&widened) {
                candidates = widened;
                relaxed_once = true;
            } else {
                // Second relaxation: every node of the layer, scores floored.
                candidates = graph.layer_nodes(target, layer).iter().map(|n| n.id.clone()).collect();
                candidates.sort();
                floored = true;
            }
        }
        if candidates.is_empty() {
            return Err(GraphError::NoPath { layer });
        }

        let mut next: Vec<(String, Prefix)> = Vec::new();
        for id in &candidates {
            let phi_raw = scored(id);
            let phi = if floored { phi_raw.max(query.epsilon) } else { phi_raw };
            let gain = (phi + query.epsilon).ln();
            let prev: Option<&Prefix> = if layer == 1 {
                None
            } else if floored {
                // Connectivity waived: best predecessor by value, then path.
                survivors
                    .iter()
                    .map(|(_, p)| p)
                    .min_by(|a, b| b.value.partial_cmp(&a.value).unwrap().then_with(|| a.path.cmp(&b.path)))
            } else {
                let allowed = |pid: &String| {
                    let direct = graph.seq_children.get(pid).map_or(false, |c| c.contains(id));
                    if direct {
                        return true;
                    }
                    if relaxed_once {
                        if let Some(nbrs) = graph.rel_neighbors.get(pid) {
                            return nbrs.iter().any(|r| {
                                graph.seq_children.get(r).map_or(false, |c| c.contains(id))
                            });
                        }
                    }
                    false
                };
                survivors
                    .iter()
                    .filter(|(pid, _)| allowed(pid))
                    .map(|(_, p)| p)
                    .min_by(|a, b| b.value.partial_cmp(&a.value).unwrap().then_with(|| a.path.cmp(&b.path)))
            };
            let prefix = match (layer == 1, prev) {
                (true, _) => Prefix { value: gain, path: vec![id.clone()], scores: vec![phi] },
                (false, Some(p)) => {
                    let mut path = p.path.clone();
                    path.push(id.clone());
                    let mut scores = p.scores.clone();
                    scores.push(phi);
                    Prefix { value: p.value + gain, path, scores }
                }
                (false, None) => continue, // unreachable candidate
            };
            next.push((id.clone(), prefix));
        }
        if next.is_empty() {
            return Err(GraphError::NoPath { layer });
        }
        survivors = next;
    }

    let best = survivors
        .iter()
        .map(|(_, p)| p)
        .min_by(|a, b| b.value.partial_cmp(&a.value).unwrap().then_with(|| a.path.cmp(&b.path)))
        .expect("nonempty survivors");
    Ok(RetrievedPath { nodes: best.path.clone(), objective: best.value, scores: best.scores.clone() })
}

/// Deterministic textual rendering of a retrieved path, hub context first.
pub fn render_context(graph: &KnowledgeGraph, path: &RetrievedPath) -> String {
    let mut lines = vec![format!("scene: {}", graph.hub().value)];
    for id in &path.nodes {
        if let Some(n) = graph.node(id) {
            lines.push(format!("{}/{}: {}", n.subgraph, n.layer, n.value));
        }
    }
    lines.join("\n")
}

/// The default pursuit-evasion knowledge base shipped with the crate.
pub const DEFAULT_KB: &str = include_str!("../data/default_kb.json");
