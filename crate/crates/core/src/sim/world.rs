use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{footprint_hits_boundary, segments_intersect, Polyline, PolylineKind, Pose2, Vec2};
use crate::scenario::{ScenarioSpec, SignalState, TrafficKind};
use crate::scene::{
    clip_polyline, Command, EgoObservation, Navigation, SceneSnapshot, SnapshotAgent, SnapshotTrafficElement,
    AGENT_RANGE, MAX_AGENTS, MAX_TRAFFIC_ELEMENTS, VIEW_WINDOW,
};

use super::vehicle::{ControlCommand, EgoState, PidGains, VehicleParams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub dt: f64,
    /// Control ticks between replans.
    pub replan_every: usize,
    pub horizon: usize,
    pub dt_wp: f64,
    pub vehicle: VehicleParams,
    pub pid: PidGains,
    /// Distance before the route end that counts as arrival.
    pub goal_tolerance: f64,
    /// Distance ahead along the route of the navigation target.
    pub navigation_distance: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 0.05,
            replan_every: 10,
            horizon: 6,
            dt_wp: 0.5,
            vehicle: VehicleParams::default(),
            pid: PidGains::default(),
            goal_tolerance: 2.0,
            navigation_distance: 20.0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> crate::Result<()> {
        if !(self.dt > 0.0 && self.dt <= 0.1) {
            return Err(crate::Error::Config(format!(
                "sim dt must be in (0, 0.1], got {}",
                self.dt
            )));
        }
        if self.replan_every == 0 || self.horizon == 0 || !(self.dt_wp > 0.0) {
            return Err(crate::Error::Config(
                "replan_every, horizon and dt_wp must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Ticks between recorded frames (the replan period).
    pub fn replan_period(&self) -> f64 {
        self.dt * self.replan_every as f64
    }
}

/// A route polyline with arclength queries.
#[derive(Clone, Debug, PartialEq)]
pub struct RoutePath {
    pub points: Vec<Vec2>,
    cum: Vec<f64>,
}

impl RoutePath {
    pub fn new(points: Vec<Vec2>) -> Self {
        let mut cum = Vec::with_capacity(points.len());
        let mut s = 0.0;
        cum.push(0.0);
        for w in points.windows(2) {
            s += w[0].dist(w[1]);
            cum.push(s);
        }
        Self { points, cum }
    }

    pub fn length(&self) -> f64 {
        *self.cum.last().unwrap_or(&0.0)
    }

    fn segment_at(&self, s: f64) -> usize {
        let n = self.points.len() - 1;
        match self.cum.binary_search_by(|c| c.total_cmp(&s)) {
            Ok(i) => i.min(n - 1),
            Err(i) => i.saturating_sub(1).min(n - 1),
        }
    }

    /// Point at arclength `s`, extrapolated linearly past either end.
    pub fn point_at(&self, s: f64) -> Vec2 {
        let i = self.segment_at(s);
        let (a, b) = (self.points[i], self.points[i + 1]);
        let len = self.cum[i + 1] - self.cum[i];
        a + (b - a) * ((s - self.cum[i]) / len)
    }

    pub fn heading_at(&self, s: f64) -> f64 {
        let i = self.segment_at(s);
        (self.points[i + 1] - self.points[i]).angle()
    }

    /// Arclength and signed lateral offset (left positive) of `p`.
    pub fn project(&self, p: Vec2) -> (f64, f64) {
        let mut best = (0.0, 0.0, f64::INFINITY);
        let last = self.points.len() - 2;
        for (i, w) in self.points.windows(2).enumerate() {
            let d = w[1] - w[0];
            let len = self.cum[i + 1] - self.cum[i];
            let raw = (p - w[0]).dot(d) / (len * len);
            // The first and last segments extend past the route ends.
            let lo = if i == 0 { f64::NEG_INFINITY } else { 0.0 };
            let hi = if i == last { f64::INFINITY } else { 1.0 };
            let u = raw.clamp(lo, hi);
            let foot = w[0] + d * u;
            let dist = p.dist(foot);
            if dist < best.2 {
                let lateral = d.cross(p - w[0]) / len;
                best = (self.cum[i] + u * len, lateral, dist);
            }
        }
        (best.0, best.1)
    }

    /// Arclength where segment `a`-`b` first crosses the route.
    pub fn crossing(&self, a: Vec2, b: Vec2) -> Option<f64> {
        for (i, w) in self.points.windows(2).enumerate() {
            if segments_intersect(w[0], w[1], a, b) {
                let d = w[1] - w[0];
                let e = b - a;
                let denom = d.cross(e);
                let t = if denom.abs() < 1e-12 {
                    0.0
                } else {
                    (a - w[0]).cross(e) / denom
                };
                return Some(self.cum[i] + t.clamp(0.0, 1.0) * d.norm());
            }
        }
        None
    }
}

/// Ego state plus everything in the world that evolves with it. Agents and
/// lights are pure functions of time.
#[derive(Clone, Debug)]
pub struct World {
    pub scenario: Arc<ScenarioSpec>,
    pub route: Arc<RoutePath>,
    /// Arclength along the nominal route where each traffic element's stop
    /// line crosses it.
    pub stop_line_s: Arc<Vec<Option<f64>>>,
    pub time: f64,
    pub tick: usize,
    pub ego: EgoState,
    pub last_control: ControlCommand,
    pub yaw_rate: f64,
    pub stop_cleared: Vec<bool>,
}

/// Start-state perturbation: seed 0 is nominal; other seeds shift the ego up
/// to 0.5 m laterally, 0.05 rad in heading and 1 m/s in speed.
pub fn jitter_start(pose: Pose2, speed: f64, seed: u64) -> (Pose2, f64) {
    if seed == 0 {
        return (pose, speed);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lateral = rng.gen_range(-0.5..=0.5);
    let dh = rng.gen_range(-0.05..=0.05);
    let dv = rng.gen_range(-1.0..=1.0);
    let left = Vec2::from_angle(pose.heading).perp();
    (
        Pose2::new(
            pose.position.x + left.x * lateral,
            pose.position.y + left.y * lateral,
            pose.heading + dh,
        ),
        (speed + dv).max(0.0),
    )
}

impl World {
    pub fn new(scenario: Arc<ScenarioSpec>, cfg: &SimConfig, seed: u64) -> Self {
        let route = Arc::new(RoutePath::new(scenario.route.clone()));
        let stop_line_s = Arc::new(
            scenario
                .traffic_elements
                .iter()
                .map(|e| route.crossing(e.stop_line[0], e.stop_line[1]))
                .collect(),
        );
        let (pose, speed) = jitter_start(scenario.ego_start.pose, scenario.ego_start.speed, seed);
        let n = scenario.traffic_elements.len();
        Self {
            scenario,
            route,
            stop_line_s,
            time: 0.0,
            tick: 0,
            ego: EgoState {
                pose,
                speed,
                wheelbase: cfg.vehicle.wheelbase,
            },
            last_control: ControlCommand::default(),
            yaw_rate: 0.0,
            stop_cleared: vec![false; n],
        }
    }

    pub fn route_s(&self) -> f64 {
        self.route.project(self.ego.pose.position).0
    }

    pub fn front_s(&self) -> f64 {
        self.route_s() + self.scenario.ego_footprint.length / 2.0
    }

    pub fn signal_state(&self, i: usize) -> SignalState {
        self.scenario.traffic_elements[i].state_at(self.time)
    }

    /// Whether element `i` governs the ego: its stop line crosses the route
    /// ahead of (or at most half a meter behind) the front bumper, and for
    /// stop signs the ego has not yet come to a stop at it.
    pub fn affects_ego(&self, i: usize) -> bool {
        let Some(line_s) = self.stop_line_s[i] else {
            return false;
        };
        let gap = line_s - self.front_s();
        if gap < -0.5 || gap > 80.0 {
            return false;
        }
        !(self.scenario.traffic_elements[i].kind == TrafficKind::StopSign && self.stop_cleared[i])
    }

    /// Marks stop signs as served once the ego stands still close to the line.
    pub fn update_stop_signs(&mut self) {
        if self.ego.speed >= 0.1 {
            return;
        }
        let front = self.front_s();
        for (i, e) in self.scenario.traffic_elements.iter().enumerate() {
            if e.kind != TrafficKind::StopSign {
                continue;
            }
            if let Some(line_s) = self.stop_line_s[i] {
                let gap = line_s - front;
                if (-0.5..=6.0).contains(&gap) {
                    self.stop_cleared[i] = true;
                }
            }
        }
    }

    pub fn boundaries(&self) -> Vec<Polyline> {
        self.scenario.boundaries()
    }

    pub fn offroad(&self) -> bool {
        footprint_hits_boundary(&self.ego.pose, &self.scenario.ego_footprint, &self.scenario.map).is_some()
    }

    fn navigation(&self, cfg: &SimConfig) -> Navigation {
        let s = self.route_s();
        let ahead = s + cfg.navigation_distance;
        let target_world = self.route.point_at(ahead.min(self.route.length()));
        let target = self.ego.pose.to_local(target_world);
        let h0 = self.route.heading_at(s);
        let turn = crate::geometry::normalize_angle(self.route.heading_at(ahead.min(self.route.length())) - h0);
        let base = Pose2 {
            position: self.route.point_at(s),
            heading: h0,
        };
        let shift = base.to_local(target_world).y;
        let intersection_ahead = self
            .stop_line_s
            .iter()
            .any(|ls| ls.is_some_and(|ls| ls > s && ls - s < 30.0));
        let command = if turn > 0.5 {
            Command::Left
        } else if turn < -0.5 {
            Command::Right
        } else if shift > 1.5 {
            Command::ChangeLeft
        } else if shift < -1.5 {
            Command::ChangeRight
        } else if intersection_ahead {
            Command::Straight
        } else {
            Command::Follow
        };
        Navigation { command, target }
    }

    pub fn snapshot(&self, cfg: &SimConfig) -> SceneSnapshot {
        let pose = self.ego.pose;
        let mut map = Vec::new();
        for p in &self.scenario.map {
            let local: Vec<Vec2> = p.points.iter().map(|&q| pose.to_local(q)).collect();
            for piece in clip_polyline(&local, VIEW_WINDOW) {
                map.push(Polyline {
                    points: piece,
                    kind: p.kind,
                });
            }
        }
        if !map.iter().any(|p| p.kind == PolylineKind::RoadBoundary) {
            // Keep the snapshot valid when far from every boundary: the
            // nearest boundary piece, unclipped.
            if let Some(b) = self
                .scenario
                .map
                .iter()
                .filter(|p| p.kind == PolylineKind::RoadBoundary)
                .min_by(|a, b| dist_to(a, pose.position).total_cmp(&dist_to(b, pose.position)))
            {
                map.push(b.transformed(|q| pose.to_local(q)));
            }
        }

        let mut agents: Vec<(f64, SnapshotAgent)> = self
            .scenario
            .agents
            .iter()
            .enumerate()
            .filter_map(|(id, a)| {
                let now = a.state_at(self.time);
                let d = now.pose.position.dist(pose.position);
                (d <= AGENT_RANGE).then(|| {
                    let future = (1..=cfg.horizon)
                        .map(|k| pose.pose_to_local(&a.state_at(self.time + k as f64 * cfg.dt_wp).pose))
                        .collect();
                    (
                        d,
                        SnapshotAgent {
                            id,
                            pose: pose.pose_to_local(&now.pose),
                            footprint: a.footprint,
                            speed: now.speed,
                            future,
                            is_static: a.is_static(),
                        },
                    )
                })
            })
            .collect();
        agents.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.id.cmp(&b.1.id)));
        agents.truncate(MAX_AGENTS);

        let mut elements: Vec<(f64, SnapshotTrafficElement)> = self
            .scenario
            .traffic_elements
            .iter()
            .enumerate()
            .map(|(id, e)| {
                let mid = e.stop_line[0].lerp(e.stop_line[1], 0.5);
                (
                    mid.dist(pose.position),
                    SnapshotTrafficElement {
                        id,
                        kind: e.kind,
                        state: self.signal_state(id),
                        affects_ego: self.affects_ego(id),
                        stop_line: [pose.to_local(e.stop_line[0]), pose.to_local(e.stop_line[1])],
                    },
                )
            })
            .collect();
        elements.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.id.cmp(&b.1.id)));
        elements.truncate(MAX_TRAFFIC_ELEMENTS);

        SceneSnapshot {
            map,
            agents: agents.into_iter().map(|a| a.1).collect(),
            traffic_elements: elements.into_iter().map(|e| e.1).collect(),
            ego: EgoObservation {
                speed: self.ego.speed,
                yaw_rate: self.yaw_rate,
                last_control: self.last_control,
            },
            ego_footprint: self.scenario.ego_footprint,
            navigation: self.navigation(cfg),
            horizon: cfg.horizon,
            dt_wp: cfg.dt_wp,
        }
    }

    /// Advances the ego one tick under `c`; agents and lights follow the clock.
    pub fn step(&mut self, c: ControlCommand, cfg: &SimConfig) {
        let next = super::vehicle::bicycle_step(&self.ego, &c, &cfg.vehicle, cfg.dt);
        self.yaw_rate = crate::geometry::normalize_angle(next.pose.heading - self.ego.pose.heading) / cfg.dt;
        self.ego = next;
        self.last_control = c;
        self.tick += 1;
        self.time = self.tick as f64 * cfg.dt;
        self.update_stop_signs();
    }
}

fn dist_to(p: &Polyline, q: Vec2) -> f64 {
    p.points.iter().map(|&a| a.dist(q)).fold(f64::INFINITY, f64::min)
}
