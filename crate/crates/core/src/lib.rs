//! Probabilistic trajectory planning over a discretized action vocabulary.
//!
//! A scene snapshot is embedded into tokens, every candidate trajectory of a
//! [`PlanningVocabulary`] is scored against them, and a softmax across the
//! vocabulary gives a distribution over actions. A bundled 2D simulator
//! provides demonstrations and closed-loop evaluation.

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod model;
pub mod persist;
pub mod planner;
pub mod scenario;
pub mod scene;
pub mod sim;
pub mod vocabulary;

pub use error::{Error, Result};
pub use geometry::{Footprint, Polyline, PolylineKind, Pose2, Trajectory, Vec2};
pub use model::{ModelConfig, PlannerModel, PreparedVocab};
pub use planner::{ActionDistribution, TrainConfig};
pub use scene::{EnvTokenSet, SceneSnapshot};
pub use vocabulary::PlanningVocabulary;

pub type PlannerModel32 = PlannerModel<f32>;
pub type PlannerModel64 = PlannerModel<f64>;
pub type PreparedVocab32 = PreparedVocab<f32>;
pub type PreparedVocab64 = PreparedVocab<f64>;
pub type EnvTokenSet32 = EnvTokenSet<f32>;
pub type EnvTokenSet64 = EnvTokenSet<f64>;
