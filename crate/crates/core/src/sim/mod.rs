//! Closed-loop 2D driving simulator.

pub mod episode;
pub mod expert;
pub mod infractions;
pub mod vehicle;
pub mod world;

pub use episode::{
    parse_replay, simulate_episode, simulate_episode_with, AgentRecord, EpisodeResult, ExpertPolicy, FixedPolicy,
    LearnedPolicy, PlanChoice, Policy, ProgressTracker, ReplanView, SelectionMode, TickRecord,
};
pub use expert::{Expert, ExpertParams};
pub use infractions::{
    detect_infractions, score_episode, EpisodeMetrics, InfractionDetector, InfractionEvent, InfractionKind,
    ObservedAgent, ObservedElement, PenaltyConfig, TickObservation,
};
pub use vehicle::{
    bicycle_step, pid_control, ControlCommand, EgoState, PidController, PidGains, PlanTrack, VehicleParams,
};
pub use world::{jitter_start, RoutePath, SimConfig, World};
