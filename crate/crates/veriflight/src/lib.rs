//! Two-layer safe decision framework for pursuit-evasion: a fuzzy barrier
//! verifier over semantic action cones, a star-hierarchical knowledge graph
//! retriever, planners, a kinematic simulator, and a metrics harness.

pub mod cbf;
pub mod graph;
pub mod metrics;
pub mod planner;
pub mod sim;
pub mod world;
