//! Ground-truth scene snapshots and their embedding into the token sets the
//! planner attends over.

use autodiff::{Graph, ParamStore, Perceptron, Scalar, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Footprint, Polyline, PolylineKind, Pose2, Vec2};
use crate::scenario::{SignalState, TrafficKind};
use crate::sim::ControlCommand;

pub const POLYLINE_POINTS: usize = 20;
pub const MAX_AGENTS: usize = 16;
pub const MAX_TRAFFIC_ELEMENTS: usize = 4;
/// Ego-frame window kept in a snapshot: `(x_min, x_max, y_min, y_max)`.
pub const VIEW_WINDOW: (f64, f64, f64, f64) = (-20.0, 60.0, -30.0, 30.0);
pub const AGENT_RANGE: f64 = 120.0;

const POS_SCALE: f64 = 0.1;
const SPEED_SCALE: f64 = 0.1;
const SIZE_SCALE: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Follow,
    Left,
    Right,
    Straight,
    ChangeLeft,
    ChangeRight,
}

impl Command {
    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnapshotAgent {
    pub id: usize,
    pub pose: Pose2,
    pub footprint: Footprint,
    pub speed: f64,
    /// Poses at the `T` future waypoint times.
    pub future: Vec<Pose2>,
    /// Whether the agent is a static obstacle rather than a vehicle.
    #[serde(default)]
    pub is_static: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnapshotTrafficElement {
    pub id: usize,
    pub kind: TrafficKind,
    pub state: SignalState,
    pub affects_ego: bool,
    pub stop_line: [Vec2; 2],
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EgoObservation {
    pub speed: f64,
    pub yaw_rate: f64,
    pub last_control: ControlCommand,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Navigation {
    pub command: Command,
    pub target: Vec2,
}

/// Scene state at one tick, every spatial quantity in the ego frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSnapshot {
    pub map: Vec<Polyline>,
    pub agents: Vec<SnapshotAgent>,
    pub traffic_elements: Vec<SnapshotTrafficElement>,
    pub ego: EgoObservation,
    pub ego_footprint: Footprint,
    pub navigation: Navigation,
    pub horizon: usize,
    pub dt_wp: f64,
}

impl SceneSnapshot {
    pub fn validate(&self) -> Result<()> {
        if !self.map.iter().any(|p| p.kind == PolylineKind::RoadBoundary) {
            return Err(Error::Validation("snapshot has no road_boundary polyline".into()));
        }
        for p in &self.map {
            p.validate()?;
        }
        for a in &self.agents {
            if a.future.len() != self.horizon {
                return Err(Error::HorizonMismatch {
                    expected: self.horizon,
                    found: a.future.len(),
                });
            }
            let finite = a.pose.position.is_finite()
                && a.speed.is_finite()
                && a.future.iter().all(|p| p.position.is_finite() && p.heading.is_finite());
            if !finite {
                return Err(Error::Validation(format!("agent {} has non-finite state", a.id)));
            }
        }
        let e = &self.ego;
        if !(e.speed.is_finite() && e.yaw_rate.is_finite() && self.navigation.target.is_finite()) {
            return Err(Error::Validation("non-finite ego observation".into()));
        }
        Ok(())
    }

    pub fn boundaries(&self) -> Vec<Polyline> {
        self.map
            .iter()
            .filter(|p| p.kind == PolylineKind::RoadBoundary)
            .cloned()
            .collect()
    }
}

/// Clips a polyline to an axis-aligned box, returning the pieces (each with at
/// least two distinct points) that lie inside.
pub fn clip_polyline(points: &[Vec2], window: (f64, f64, f64, f64)) -> Vec<Vec<Vec2>> {
    let mut pieces: Vec<Vec<Vec2>> = Vec::new();
    let mut current: Vec<Vec2> = Vec::new();
    for w in points.windows(2) {
        match clip_segment(w[0], w[1], window) {
            Some((a, b)) => {
                if current.last() != Some(&a) {
                    if current.len() >= 2 {
                        pieces.push(std::mem::take(&mut current));
                    }
                    current.clear();
                    current.push(a);
                }
                if b != a {
                    current.push(b);
                }
            }
            None => {
                if current.len() >= 2 {
                    pieces.push(std::mem::take(&mut current));
                }
                current.clear();
            }
        }
    }
    if current.len() >= 2 {
        pieces.push(current);
    }
    pieces
}

/// Liang-Barsky segment clipping.
fn clip_segment(a: Vec2, b: Vec2, (x0, x1, y0, y1): (f64, f64, f64, f64)) -> Option<(Vec2, Vec2)> {
    let d = b - a;
    let mut t0: f64 = 0.0;
    let mut t1: f64 = 1.0;
    for (p, q) in [(-d.x, a.x - x0), (d.x, x1 - a.x), (-d.y, a.y - y0), (d.y, y1 - a.y)] {
        if p == 0.0 {
            if q < 0.0 {
                return None;
            }
        } else {
            let r = q / p;
            if p < 0.0 {
                t0 = t0.max(r);
            } else {
                t1 = t1.min(r);
            }
        }
    }
    if t0 > t1 {
        return None;
    }
    let s = if t0 > 0.0 { a + d * t0 } else { a };
    let e = if t1 < 1.0 { a + d * t1 } else { b };
    Some((s, e))
}

pub fn map_feature_width() -> usize {
    2 * POLYLINE_POINTS + 4
}

pub fn agent_feature_width(horizon: usize) -> usize {
    7 + 4 * horizon
}

pub const TRAFFIC_FEATURE_WIDTH: usize = 11;
pub const NAVI_FEATURE_WIDTH: usize = 8;
pub const STATE_FEATURE_WIDTH: usize = 5;

/// Fixed-width numeric features of one snapshot, one row per token.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneFeatures {
    pub map: Vec<Vec<f64>>,
    pub agents: Vec<Vec<f64>>,
    pub traffic: Vec<Vec<f64>>,
    pub navi: Vec<f64>,
    pub state: Vec<f64>,
    pub horizon: usize,
}

fn one_hot(n: usize, i: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |k| if k == i { 1.0 } else { 0.0 })
}

fn pose_features(p: &Pose2) -> [f64; 4] {
    [
        p.position.x * POS_SCALE,
        p.position.y * POS_SCALE,
        p.heading.cos(),
        p.heading.sin(),
    ]
}

pub fn scene_features(s: &SceneSnapshot) -> SceneFeatures {
    let map = s
        .map
        .iter()
        .map(|p| {
            let mut row: Vec<f64> = p
                .resample(POLYLINE_POINTS)
                .into_iter()
                .flat_map(|q| [q.x * POS_SCALE, q.y * POS_SCALE])
                .collect();
            row.extend(one_hot(4, p.kind.index()));
            row
        })
        .collect();
    let agents = s
        .agents
        .iter()
        .map(|a| {
            let mut row = pose_features(&a.pose).to_vec();
            row.extend([
                a.footprint.length * SIZE_SCALE,
                a.footprint.width * SIZE_SCALE,
                a.speed * SPEED_SCALE,
            ]);
            for f in &a.future {
                row.extend(pose_features(f));
            }
            row
        })
        .collect();
    let traffic = s
        .traffic_elements
        .iter()
        .map(|t| {
            let kind = match t.kind {
                TrafficKind::TrafficLight => 0,
                TrafficKind::StopSign => 1,
            };
            let mut row: Vec<f64> = one_hot(2, kind).collect();
            row.extend(one_hot(4, t.state.index()));
            row.push(if t.affects_ego { 1.0 } else { 0.0 });
            for p in t.stop_line {
                row.extend([p.x * POS_SCALE, p.y * POS_SCALE]);
            }
            row
        })
        .collect();
    let mut navi: Vec<f64> = one_hot(6, s.navigation.command.index()).collect();
    navi.extend([s.navigation.target.x * POS_SCALE, s.navigation.target.y * POS_SCALE]);
    let c = s.ego.last_control;
    let state = vec![s.ego.speed * SPEED_SCALE, s.ego.yaw_rate, c.steer, c.throttle, c.brake];
    SceneFeatures {
        map,
        agents,
        traffic,
        navi,
        state,
        horizon: s.horizon,
    }
}

/// Token groups and embeddings to drop, mirroring the scene-token ablations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ablation {
    #[serde(default)]
    pub no_map: bool,
    #[serde(default)]
    pub no_agents: bool,
    #[serde(default)]
    pub no_traffic: bool,
    #[serde(default)]
    pub no_navi: bool,
    #[serde(default)]
    pub no_state: bool,
}

impl Ablation {
    pub fn bits(&self) -> [bool; 5] {
        [
            self.no_map,
            self.no_agents,
            self.no_traffic,
            self.no_navi,
            self.no_state,
        ]
    }

    pub fn from_bits(b: [bool; 5]) -> Self {
        Self {
            no_map: b[0],
            no_agents: b[1],
            no_traffic: b[2],
            no_navi: b[3],
            no_state: b[4],
        }
    }
}

/// Scene embeddings as graph nodes: `env` is `[M, d]`, `navi` and `state` are
/// `[1, d]` (absent when ablated).
#[derive(Clone, Copy, Debug)]
pub struct EnvVars {
    pub env: Var,
    pub navi: Option<Var>,
    pub state: Option<Var>,
}

/// Embedded token set of one snapshot.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvTokenSet<T> {
    /// `[M, d]` map, agent and traffic-element tokens in that order.
    pub env_tokens: Tensor<T>,
    pub navi_embedding: Tensor<T>,
    pub state_embedding: Tensor<T>,
}

/// Two-layer perceptrons mapping each feature group to the model width.
#[derive(Clone, Debug)]
pub struct SceneEmbedder {
    pub map: Perceptron,
    pub agent: Perceptron,
    pub traffic: Perceptron,
    pub navi: Perceptron,
    pub state: Perceptron,
    pub dim: usize,
    pub horizon: usize,
}

impl SceneEmbedder {
    pub fn new<T: Scalar, R: Rng>(store: &mut ParamStore<T>, dim: usize, horizon: usize, rng: &mut R) -> Result<Self> {
        Ok(Self {
            map: Perceptron::new(store, "embed.map", (map_feature_width(), dim, dim), true, rng)?,
            agent: Perceptron::new(
                store,
                "embed.agent",
                (agent_feature_width(horizon), dim, dim),
                true,
                rng,
            )?,
            traffic: Perceptron::new(store, "embed.traffic", (TRAFFIC_FEATURE_WIDTH, dim, dim), true, rng)?,
            navi: Perceptron::new(store, "embed.navi", (NAVI_FEATURE_WIDTH, dim, dim), true, rng)?,
            state: Perceptron::new(store, "embed.state", (STATE_FEATURE_WIDTH, dim, dim), true, rng)?,
            dim,
            horizon,
        })
    }

    fn group<T: Scalar>(
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        net: &Perceptron,
        rows: &[Vec<f64>],
        width: usize,
    ) -> Result<Var> {
        let data: Vec<T> = rows.iter().flatten().map(|&v| T::of(v)).collect();
        let x = g.constant(Tensor::new(&[rows.len(), width], data)?)?;
        Ok(net.forward(g, store, x)?)
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        f: &SceneFeatures,
        ablation: &Ablation,
    ) -> Result<EnvVars> {
        if f.horizon != self.horizon {
            return Err(Error::HorizonMismatch {
                expected: self.horizon,
                found: f.horizon,
            });
        }
        let mut tokens = Vec::with_capacity(3);
        if !ablation.no_map && !f.map.is_empty() {
            tokens.push(Self::group(g, store, &self.map, &f.map, map_feature_width())?);
        }
        if !ablation.no_agents && !f.agents.is_empty() {
            tokens.push(Self::group(
                g,
                store,
                &self.agent,
                &f.agents,
                agent_feature_width(self.horizon),
            )?);
        }
        if !ablation.no_traffic && !f.traffic.is_empty() {
            tokens.push(Self::group(g, store, &self.traffic, &f.traffic, TRAFFIC_FEATURE_WIDTH)?);
        }
        let env = match tokens.len() {
            0 => g.constant(Tensor::zeros(&[1, self.dim]))?,
            1 => tokens[0],
            _ => g.concat_rows(&tokens)?,
        };
        let navi = if ablation.no_navi {
            None
        } else {
            Some(Self::group(
                g,
                store,
                &self.navi,
                std::slice::from_ref(&f.navi),
                NAVI_FEATURE_WIDTH,
            )?)
        };
        let state = if ablation.no_state {
            None
        } else {
            Some(Self::group(
                g,
                store,
                &self.state,
                std::slice::from_ref(&f.state),
                STATE_FEATURE_WIDTH,
            )?)
        };
        Ok(EnvVars { env, navi, state })
    }
}

/// Embeds a snapshot with every token group present.
pub fn embed_scene<T: Scalar>(
    s: &SceneSnapshot,
    embedder: &SceneEmbedder,
    store: &ParamStore<T>,
) -> Result<EnvTokenSet<T>> {
    s.validate()?;
    let mut g = Graph::new();
    let vars = embedder.forward(&mut g, store, &scene_features(s), &Ablation::default())?;
    Ok(EnvTokenSet {
        env_tokens: g.value(vars.env).clone(),
        navi_embedding: g.value(vars.navi.expect("navi present")).clone(),
        state_embedding: g.value(vars.state.expect("state present")).clone(),
    })
}
