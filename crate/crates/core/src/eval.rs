//! Open-loop and closed-loop evaluation.

use std::sync::Arc;

use autodiff::Scalar;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{agent_conflict_within, sample_poses, Trajectory};
use crate::model::{PlannerModel, PreparedVocab};
use crate::planner::predict;
use crate::scenario::ScenarioSpec;
use crate::scene::SceneSnapshot;
use crate::sim::{simulate_episode, EpisodeResult, PenaltyConfig, Policy, SimConfig};
use crate::vocabulary::PlanningVocabulary;

/// Evaluation horizons, seconds.
pub const HORIZONS: [f64; 3] = [1.0, 2.0, 3.0];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OpenLoopMetrics {
    pub frames: usize,
    /// Mean L2 error at 1, 2 and 3 s, meters.
    pub l2: [f64; 3],
    /// Percentage of frames colliding with an agent future within 1, 2, 3 s.
    pub collision: [f64; 3],
}

/// 0-based waypoint index closest to `seconds` on a `dt_wp` grid.
pub fn waypoint_index(seconds: f64, dt_wp: f64, horizon: usize) -> usize {
    ((seconds / dt_wp).round() as usize).clamp(1, horizon) - 1
}

/// Whether `plan` overlaps any agent future up to waypoint `max_index`.
pub fn collides_within(plan: &Trajectory, s: &SceneSnapshot, max_index: usize) -> bool {
    let samples = sample_poses(plan);
    s.agents
        .iter()
        .any(|a| agent_conflict_within(&samples, &s.ego_footprint, &a.future, &a.footprint, max_index as f64))
}

/// Open-loop metrics of an arbitrary planner over `(snapshot, gt)` pairs.
pub fn open_loop_metrics_with<'a>(
    frames: impl IntoIterator<Item = (&'a SceneSnapshot, &'a Trajectory)>,
    mut plan: impl FnMut(&SceneSnapshot) -> Result<Trajectory>,
) -> Result<OpenLoopMetrics> {
    let mut n = 0usize;
    let mut l2 = [0.0; 3];
    let mut hits = [0usize; 3];
    for (s, gt) in frames {
        let p = plan(s)?;
        if p.horizon() != gt.horizon() {
            return Err(Error::HorizonMismatch {
                expected: gt.horizon(),
                found: p.horizon(),
            });
        }
        for (k, &sec) in HORIZONS.iter().enumerate() {
            let i = waypoint_index(sec, s.dt_wp, gt.horizon());
            l2[k] += p.points[i].dist(gt.points[i]);
            if collides_within(&p, s, i) {
                hits[k] += 1;
            }
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::Validation("no frames to evaluate".into()));
    }
    Ok(OpenLoopMetrics {
        frames: n,
        l2: l2.map(|v| v / n as f64),
        collision: hits.map(|h| 100.0 * h as f64 / n as f64),
    })
}

/// Open-loop metrics of the model's argmax action.
pub fn open_loop_metrics<'a, T: Scalar>(
    model: &PlannerModel<T>,
    prepared: &PreparedVocab<T>,
    vocab: &PlanningVocabulary,
    frames: impl IntoIterator<Item = (&'a SceneSnapshot, &'a Trajectory)>,
) -> Result<OpenLoopMetrics> {
    open_loop_metrics_with(frames, |s| {
        let d = predict(model, prepared, s)?;
        Ok(vocab.action(d.argmax()).clone())
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioScore {
    pub scenario: String,
    pub seed: u64,
    pub route_completion: f64,
    pub infraction_score: f64,
    pub driving_score: f64,
    pub infractions: Vec<String>,
    pub conflicting_plans: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClosedLoopReport {
    pub policy: String,
    pub episodes: Vec<ScenarioScore>,
    pub mean_route_completion: f64,
    pub mean_infraction_score: f64,
    pub mean_driving_score: f64,
}

impl ScenarioScore {
    pub fn from_result(r: &EpisodeResult) -> Self {
        Self {
            scenario: r.scenario.clone(),
            seed: r.seed,
            route_completion: r.route_completion,
            infraction_score: r.infraction_score,
            driving_score: r.driving_score,
            infractions: r.events.iter().map(|e| e.kind.name().to_string()).collect(),
            conflicting_plans: r.conflicting_plans(),
        }
    }
}

/// Runs `make_policy()` on every scenario and seed, in order. Episodes are
/// returned alongside the report for replay export.
pub fn closed_loop_eval<'p>(
    scenarios: &[ScenarioSpec],
    seeds: &[u64],
    cfg: &SimConfig,
    penalties: &PenaltyConfig,
    mut make_policy: impl FnMut(&ScenarioSpec) -> Box<dyn Policy + 'p>,
) -> Result<(ClosedLoopReport, Vec<EpisodeResult>)> {
    if scenarios.is_empty() {
        return Err(Error::NoScenarios("the scenario list".into()));
    }
    let mut episodes = Vec::new();
    let mut name = String::new();
    for spec in scenarios {
        let spec = Arc::new(spec.clone());
        for &seed in seeds {
            let mut policy = make_policy(&spec);
            name = policy.name();
            episodes.push(simulate_episode(spec.clone(), policy.as_mut(), cfg, penalties, seed)?);
        }
    }
    let scores: Vec<ScenarioScore> = episodes.iter().map(ScenarioScore::from_result).collect();
    let n = scores.len() as f64;
    let mean = |f: fn(&ScenarioScore) -> f64| scores.iter().map(f).sum::<f64>() / n;
    Ok((
        ClosedLoopReport {
            policy: name,
            mean_route_completion: mean(|s| s.route_completion),
            mean_infraction_score: mean(|s| s.infraction_score),
            mean_driving_score: mean(|s| s.driving_score),
            episodes: scores,
        },
        episodes,
    ))
}
