use std::sync::Arc;

use autodiff::Scalar;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ConflictParams, Pose2, Trajectory, Vec2};
use crate::model::{PlannerModel, PreparedVocab};
use crate::planner::{predict, select_topk_with_rules, trajectory_conflicts, ConflictChecker};
use crate::scenario::{ExpertVariant, ScenarioSpec};
use crate::scene::SceneSnapshot;
use crate::vocabulary::PlanningVocabulary;

use super::expert::{Expert, ExpertParams};
use super::infractions::{
    score_episode, InfractionDetector, InfractionEvent, ObservedAgent, ObservedElement, PenaltyConfig, TickObservation,
};
use super::vehicle::{ControlCommand, PidController, PlanTrack};
use super::world::{SimConfig, World};

/// Output of a replanning call.
#[derive(Clone, Debug, PartialEq)]
pub struct PlanChoice {
    pub trajectory: Trajectory,
    pub argmax_index: Option<usize>,
    pub topk: Vec<usize>,
}

pub trait Policy {
    fn name(&self) -> String;

    /// Called on every replan tick.
    fn replan(&mut self, world: &World, snapshot: &SceneSnapshot, cfg: &SimConfig) -> Result<PlanChoice>;

    /// Direct per-tick control bypassing the tracking controller.
    fn direct_control(&mut self, _world: &World, _cfg: &SimConfig) -> Option<ControlCommand> {
        None
    }

    /// Whether selected plans should be checked against the conflict mask.
    fn audits_conflicts(&self) -> bool {
        false
    }
}

pub struct ExpertPolicy {
    variant: ExpertVariant,
    params: ExpertParams,
    expert: Option<Expert>,
}

impl ExpertPolicy {
    pub fn new(variant: ExpertVariant, params: ExpertParams) -> Self {
        Self {
            variant,
            params,
            expert: None,
        }
    }

    fn expert(&mut self, world: &World) -> &Expert {
        let (variant, params) = (&self.variant, self.params);
        self.expert.get_or_insert_with(|| Expert::new(world, variant, params))
    }
}

impl Policy for ExpertPolicy {
    fn name(&self) -> String {
        format!("expert:{}", self.variant.name)
    }

    fn replan(&mut self, world: &World, _snapshot: &SceneSnapshot, cfg: &SimConfig) -> Result<PlanChoice> {
        Ok(PlanChoice {
            trajectory: self.expert(world).plan(world, cfg),
            argmax_index: None,
            topk: Vec::new(),
        })
    }

    fn direct_control(&mut self, world: &World, cfg: &SimConfig) -> Option<ControlCommand> {
        Some(self.expert(world).control(world, cfg))
    }
}

/// Always executes the same ego-frame plan.
pub struct FixedPolicy(pub Trajectory);

impl Policy for FixedPolicy {
    fn name(&self) -> String {
        "fixed".into()
    }

    fn replan(&mut self, _world: &World, _snapshot: &SceneSnapshot, _cfg: &SimConfig) -> Result<PlanChoice> {
        Ok(PlanChoice {
            trajectory: self.0.clone(),
            argmax_index: None,
            topk: Vec::new(),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    Argmax,
    TopK { k: usize },
}

pub struct LearnedPolicy<'a, T> {
    pub model: &'a PlannerModel<T>,
    pub prepared: &'a PreparedVocab<T>,
    pub vocab: &'a PlanningVocabulary,
    pub checker: ConflictChecker,
    pub mode: SelectionMode,
}

impl<'a, T: Scalar> LearnedPolicy<'a, T> {
    pub fn new(
        model: &'a PlannerModel<T>,
        prepared: &'a PreparedVocab<T>,
        vocab: &'a PlanningVocabulary,
        mode: SelectionMode,
    ) -> Self {
        Self {
            model,
            prepared,
            vocab,
            checker: ConflictChecker::new(vocab, ConflictParams::default()),
            mode,
        }
    }
}

impl<T: Scalar> Policy for LearnedPolicy<'_, T> {
    fn name(&self) -> String {
        match self.mode {
            SelectionMode::Argmax => "argmax".into(),
            SelectionMode::TopK { k } => format!("top{k}"),
        }
    }

    fn replan(&mut self, _world: &World, snapshot: &SceneSnapshot, _cfg: &SimConfig) -> Result<PlanChoice> {
        let dist = predict(self.model, self.prepared, snapshot)?;
        let argmax = dist.argmax();
        match self.mode {
            SelectionMode::Argmax => Ok(PlanChoice {
                trajectory: self.vocab.action(argmax).clone(),
                argmax_index: Some(argmax),
                topk: vec![argmax],
            }),
            SelectionMode::TopK { k } => {
                let sel = select_topk_with_rules(&dist, self.vocab, snapshot, k, &self.checker);
                Ok(PlanChoice {
                    trajectory: self.vocab.action(sel.index).clone(),
                    argmax_index: Some(argmax),
                    topk: sel.topk,
                })
            }
        }
    }

    fn audits_conflicts(&self) -> bool {
        true
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentRecord {
    pub id: usize,
    pub pose: Pose2,
}

/// One replay line per tick.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    pub t: f64,
    pub ego_pose: Pose2,
    pub speed: f64,
    pub control: ControlCommand,
    pub argmax_index: Option<usize>,
    pub topk_indices: Vec<usize>,
    /// Plan selected at this tick (replan ticks only), ego frame.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan: Option<Vec<Vec2>>,
    /// Whether that plan conflicts in the snapshot it was chosen from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan_conflicts: Option<bool>,
    pub agents: Vec<AgentRecord>,
    pub events: Vec<InfractionEvent>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub scenario: String,
    pub policy: String,
    pub seed: u64,
    pub ticks: Vec<TickRecord>,
    pub events: Vec<InfractionEvent>,
    pub completed: bool,
    pub route_completion: f64,
    pub infraction_score: f64,
    pub driving_score: f64,
}

impl EpisodeResult {
    pub fn conflicting_plans(&self) -> usize {
        self.ticks.iter().filter(|t| t.plan_conflicts == Some(true)).count()
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for t in &self.ticks {
            out.push_str(&serde_json::to_string(t).expect("tick record serializes"));
            out.push('\n');
        }
        out
    }
}

pub fn parse_replay(text: &str) -> Result<Vec<TickRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::Parse(format!("replay line {}: {e}", i + 1))))
        .collect()
}

/// Route progress with distance covered while offroad excluded.
#[derive(Clone, Debug)]
pub struct ProgressTracker {
    start: f64,
    best: f64,
    lost: f64,
}

impl ProgressTracker {
    pub fn new(start_s: f64) -> Self {
        Self {
            start: start_s,
            best: start_s,
            lost: 0.0,
        }
    }

    pub fn update(&mut self, s: f64, offroad: bool) {
        if s > self.best {
            if offroad {
                self.lost += s - self.best;
            }
            self.best = s;
        }
    }

    pub fn reached(&self, goal_s: f64) -> bool {
        self.best >= goal_s
    }

    pub fn fraction(&self, goal_s: f64) -> f64 {
        let span = goal_s - self.start;
        if span <= 0.0 {
            return 1.0;
        }
        ((self.best - self.lost - self.start) / span).clamp(0.0, 1.0)
    }
}

/// What a replan tick looked like, handed to episode observers.
pub struct ReplanView<'a> {
    pub world: &'a World,
    pub snapshot: &'a SceneSnapshot,
    pub choice: &'a PlanChoice,
    pub control: ControlCommand,
}

/// Runs one closed-loop episode: the policy replans every `replan_every`
/// ticks; between replans the PID tracks the current plan.
pub fn simulate_episode(
    scenario: Arc<ScenarioSpec>,
    policy: &mut dyn Policy,
    cfg: &SimConfig,
    penalties: &PenaltyConfig,
    seed: u64,
) -> Result<EpisodeResult> {
    simulate_episode_with(scenario, policy, cfg, penalties, seed, &mut |_| {})
}

/// [`simulate_episode`], calling `on_replan` at every replan tick before the
/// world advances.
pub fn simulate_episode_with(
    scenario: Arc<ScenarioSpec>,
    policy: &mut dyn Policy,
    cfg: &SimConfig,
    penalties: &PenaltyConfig,
    seed: u64,
    on_replan: &mut dyn FnMut(ReplanView),
) -> Result<EpisodeResult> {
    cfg.validate()?;
    penalties.validate()?;
    let mut world = World::new(scenario.clone(), cfg, seed);
    let goal_s = world.route.length() - cfg.goal_tolerance;
    let mut progress = ProgressTracker::new(world.route_s());
    let mut detector = InfractionDetector::new();
    let mut pid = PidController::new(cfg.pid);
    let mut track: Option<(PlanTrack, f64)> = None;
    let max_ticks = (scenario.episode_seconds / cfg.dt).round() as usize;
    let mut ticks = Vec::with_capacity(max_ticks);
    let mut events = Vec::new();
    let mut completed = false;

    while world.tick < max_ticks {
        let mut record_plan = None;
        let mut plan_conflicts = None;
        let mut argmax_index = None;
        let mut topk = Vec::new();
        let mut replanned = None;
        if world.tick % cfg.replan_every == 0 {
            let snapshot = world.snapshot(cfg);
            let choice = policy.replan(&world, &snapshot, cfg)?;
            if policy.audits_conflicts() {
                plan_conflicts = Some(trajectory_conflicts(
                    &choice.trajectory,
                    &snapshot,
                    ConflictParams::default(),
                ));
            }
            argmax_index = choice.argmax_index;
            topk = choice.topk.clone();
            track = Some((
                PlanTrack::from_ego_plan(&world.ego.pose, &choice.trajectory.points, cfg.dt_wp),
                world.time,
            ));
            record_plan = Some(choice.trajectory.points.clone());
            replanned = Some((snapshot, choice));
        }
        let control = match policy.direct_control(&world, cfg) {
            Some(c) => c,
            None => {
                let (plan, start) = track.as_ref().expect("plan set on first tick");
                pid.control(&world.ego, plan, world.time - start, cfg.dt)
            }
        };
        if let Some((snapshot, choice)) = &replanned {
            on_replan(ReplanView {
                world: &world,
                snapshot,
                choice,
                control,
            });
        }

        let before = world.ego.pose;
        let elements: Vec<ObservedElement> = scenario
            .traffic_elements
            .iter()
            .enumerate()
            .map(|(id, e)| ObservedElement {
                id,
                kind: e.kind,
                state: world.signal_state(id),
                affects_ego: world.affects_ego(id),
                stop_line: e.stop_line,
            })
            .collect();
        world.step(control, cfg);
        if !world.ego.is_finite() {
            return Err(Error::Diverged { tick: world.tick });
        }
        let agents: Vec<ObservedAgent> = scenario
            .agents
            .iter()
            .enumerate()
            .map(|(id, a)| ObservedAgent {
                id,
                pose: a.state_at(world.time).pose,
                footprint: a.footprint,
                is_static: a.is_static(),
            })
            .collect();
        let obs = TickObservation {
            ego_before: before,
            ego_after: world.ego.pose,
            speed_after: world.ego.speed,
            ego_footprint: scenario.ego_footprint,
            agents,
            elements,
            map: &scenario.map,
        };
        let new_events = detector.observe(world.tick, &obs);
        let offroad = world.offroad();
        progress.update(world.route_s(), offroad);
        events.extend(new_events.iter().copied());
        ticks.push(TickRecord {
            t: world.time,
            ego_pose: world.ego.pose,
            speed: world.ego.speed,
            control,
            argmax_index,
            topk_indices: topk,
            plan: record_plan,
            plan_conflicts,
            agents: obs
                .agents
                .iter()
                .map(|a| AgentRecord { id: a.id, pose: a.pose })
                .collect(),
            events: new_events,
        });
        if progress.reached(goal_s) {
            completed = true;
            break;
        }
    }

    let m = score_episode(&events, progress.fraction(goal_s), penalties)?;
    Ok(EpisodeResult {
        scenario: scenario.name.clone(),
        policy: policy.name(),
        seed,
        ticks,
        events,
        completed,
        route_completion: m.route_completion,
        infraction_score: m.infraction_score,
        driving_score: m.driving_score,
    })
}
