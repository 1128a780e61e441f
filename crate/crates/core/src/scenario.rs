//! Scenario files: static map, ego route, scripted agents and traffic-element
//! programs. See `scenarios/SCHEMA.md` for the JSON layout.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Footprint, Polyline, PolylineKind, Pose2, Vec2, MIN_HEADING_STEP};
use crate::persist::{read_file, write_atomic};

fn default_desired_speed() -> f64 {
    10.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    pub map: Vec<Polyline>,
    pub route: Vec<Vec2>,
    #[serde(default)]
    pub agents: Vec<AgentSpec>,
    #[serde(default)]
    pub traffic_elements: Vec<TrafficElementSpec>,
    pub ego_start: EgoStart,
    pub episode_seconds: f64,
    /// Cruise speed of the scripted expert.
    #[serde(default = "default_desired_speed")]
    pub desired_speed: f64,
    #[serde(default)]
    pub ego_footprint: Footprint,
    /// Alternative expert behaviors; each one yields its own demonstrations.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub expert_variants: Vec<ExpertVariant>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EgoStart {
    pub pose: Pose2,
    #[serde(default)]
    pub speed: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpec {
    pub start_pose: Pose2,
    #[serde(default)]
    pub footprint: Footprint,
    pub behavior: Behavior,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case", deny_unknown_fields)]
pub enum Behavior {
    Stationary,
    /// Straight motion along the start heading.
    ConstantSpeed {
        speed: f64,
    },
    /// Motion along `path` from the projection of the start pose, departing at
    /// `depart_time` seconds.
    LaneFollow {
        path: Vec<Vec2>,
        speed: f64,
        #[serde(default)]
        depart_time: f64,
    },
    /// Piecewise-linear motion through timed world points.
    ScriptedWaypoints {
        waypoints: Vec<TimedPoint>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimedPoint {
    pub t: f64,
    pub x: f64,
    pub y: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrafficKind {
    TrafficLight,
    StopSign,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalState {
    Red,
    Yellow,
    Green,
    #[serde(rename = "n/a")]
    NotApplicable,
}

impl SignalState {
    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Phase {
    pub state: SignalState,
    pub duration: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrafficElementSpec {
    pub kind: TrafficKind,
    pub stop_line: [Vec2; 2],
    /// Light program, repeated cyclically. Empty for stop signs.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub phases: Vec<Phase>,
    #[serde(default)]
    pub phase_offset: f64,
}

impl TrafficElementSpec {
    pub fn state_at(&self, t: f64) -> SignalState {
        if self.kind == TrafficKind::StopSign {
            return SignalState::NotApplicable;
        }
        let cycle: f64 = self.phases.iter().map(|p| p.duration).sum();
        let mut tau = (t + self.phase_offset).rem_euclid(cycle);
        for p in &self.phases {
            if tau < p.duration {
                return p.state;
            }
            tau -= p.duration;
        }
        self.phases.last().map_or(SignalState::NotApplicable, |p| p.state)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpertVariant {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub route: Option<Vec<Vec2>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub desired_speed: Option<f64>,
}

/// Pose and speed of a scripted agent at time `t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AgentState {
    pub pose: Pose2,
    pub speed: f64,
}

impl AgentSpec {
    pub fn is_static(&self) -> bool {
        matches!(self.behavior, Behavior::Stationary)
    }

    pub fn state_at(&self, t: f64) -> AgentState {
        match &self.behavior {
            Behavior::Stationary => AgentState {
                pose: self.start_pose,
                speed: 0.0,
            },
            Behavior::ConstantSpeed { speed } => AgentState {
                pose: Pose2 {
                    position: self.start_pose.position + Vec2::from_angle(self.start_pose.heading) * (speed * t),
                    heading: self.start_pose.heading,
                },
                speed: *speed,
            },
            Behavior::LaneFollow {
                path,
                speed,
                depart_time,
            } => lane_follow_state(path, self.start_pose, *speed, *depart_time, t),
            Behavior::ScriptedWaypoints { waypoints } => scripted_state(waypoints, self.start_pose, t),
        }
    }
}

fn lane_follow_state(path: &[Vec2], start: Pose2, speed: f64, depart: f64, t: f64) -> AgentState {
    let (s0, _) = project_onto(path, start.position);
    let total: f64 = path.windows(2).map(|w| w[0].dist(w[1])).sum();
    let s = (s0 + speed * (t - depart).max(0.0)).min(total);
    let mut acc = 0.0;
    for w in path.windows(2) {
        let len = w[0].dist(w[1]);
        if s <= acc + len || acc + len >= total {
            let u = ((s - acc) / len).clamp(0.0, 1.0);
            let moving = t > depart && s < total;
            return AgentState {
                pose: Pose2 {
                    position: w[0].lerp(w[1], u),
                    heading: (w[1] - w[0]).angle(),
                },
                speed: if moving { speed } else { 0.0 },
            };
        }
        acc += len;
    }
    AgentState {
        pose: start,
        speed: 0.0,
    }
}

fn scripted_state(waypoints: &[TimedPoint], start: Pose2, t: f64) -> AgentState {
    let mut pts: Vec<(f64, Vec2)> = Vec::with_capacity(waypoints.len() + 1);
    if waypoints.first().is_none_or(|w| w.t > 0.0) {
        pts.push((0.0, start.position));
    }
    pts.extend(waypoints.iter().map(|w| (w.t, Vec2::new(w.x, w.y))));
    let mut heading = start.heading;
    for (k, w) in pts.windows(2).enumerate() {
        let ((t0, p0), (t1, p1)) = (w[0], w[1]);
        let d = p1 - p0;
        let moving = d.norm() >= MIN_HEADING_STEP;
        if moving {
            heading = d.angle();
        }
        if t < t1 {
            if t < t0 {
                debug_assert_eq!(k, 0);
                return AgentState {
                    pose: Pose2 {
                        position: p0,
                        heading: start.heading,
                    },
                    speed: 0.0,
                };
            }
            return AgentState {
                pose: Pose2 {
                    position: p0.lerp(p1, (t - t0) / (t1 - t0)),
                    heading,
                },
                speed: d.norm() / (t1 - t0),
            };
        }
    }
    let last = pts.last().map_or(start.position, |p| p.1);
    AgentState {
        pose: Pose2 {
            position: last,
            heading,
        },
        speed: 0.0,
    }
}

/// Arclength and lateral offset (positive left) of `p` projected onto the
/// nearest segment of `path`.
pub fn project_onto(path: &[Vec2], p: Vec2) -> (f64, f64) {
    let mut best = (0.0, 0.0, f64::INFINITY);
    let mut acc = 0.0;
    for w in path.windows(2) {
        let d = w[1] - w[0];
        let len = d.norm();
        let u = ((p - w[0]).dot(d) / (len * len)).clamp(0.0, 1.0);
        let foot = w[0] + d * u;
        let dist = p.dist(foot);
        if dist < best.2 {
            let lateral = d.cross(p - w[0]).signum() * dist;
            best = (acc + u * len, lateral, dist);
        }
        acc += len;
    }
    (best.0, best.1)
}

fn check_finite(what: &str, v: f64) -> Result<()> {
    if !v.is_finite() {
        return Err(Error::Parse(format!("{what}: non-finite value")));
    }
    Ok(())
}

fn check_points(what: &str, pts: &[Vec2]) -> Result<()> {
    for (i, p) in pts.iter().enumerate() {
        if !p.is_finite() {
            return Err(Error::Parse(format!("{what}[{i}]: non-finite coordinate")));
        }
    }
    Ok(())
}

fn check_path(what: &str, pts: &[Vec2]) -> Result<()> {
    check_points(what, pts)?;
    Polyline::new(pts.to_vec(), PolylineKind::LaneCenterline)
        .map(|_| ())
        .map_err(|e| Error::Validation(format!("{what}: {e}")))
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        check_finite("episode_seconds", self.episode_seconds)?;
        check_finite("desired_speed", self.desired_speed)?;
        check_finite("ego_start.speed", self.ego_start.speed)?;
        check_points("ego_start.pose", &[self.ego_start.pose.position])?;
        check_finite("ego_start.pose.heading", self.ego_start.pose.heading)?;
        for (i, p) in self.map.iter().enumerate() {
            check_points(&format!("map[{i}].points"), &p.points)?;
            p.validate().map_err(|e| Error::Validation(format!("map[{i}]: {e}")))?;
        }
        if !self.map.iter().any(|p| p.kind == PolylineKind::RoadBoundary) {
            return Err(Error::Validation(format!(
                "scenario `{}` has no road_boundary polyline",
                self.name
            )));
        }
        check_path("route", &self.route)?;
        if !(self.episode_seconds > 0.0 && self.episode_seconds <= 600.0) {
            return Err(Error::Validation(format!(
                "episode_seconds must be in (0, 600], got {}",
                self.episode_seconds
            )));
        }
        if !(self.desired_speed > 0.0 && self.desired_speed <= 40.0) {
            return Err(Error::Validation(format!(
                "desired_speed out of range: {}",
                self.desired_speed
            )));
        }
        if self.ego_start.speed < 0.0 {
            return Err(Error::Validation("ego_start.speed must be >= 0".into()));
        }
        self.ego_footprint
            .validate()
            .map_err(|e| Error::Validation(format!("ego_footprint: {e}")))?;
        for (i, a) in self.agents.iter().enumerate() {
            a.validate().map_err(|e| match e {
                Error::Parse(m) => Error::Parse(format!("agents[{i}].{m}")),
                other => Error::Validation(format!("agents[{i}]: {other}")),
            })?;
        }
        for (i, t) in self.traffic_elements.iter().enumerate() {
            t.validate().map_err(|e| match e {
                Error::Parse(m) => Error::Parse(format!("traffic_elements[{i}].{m}")),
                other => Error::Validation(format!("traffic_elements[{i}]: {other}")),
            })?;
        }
        let mut names = std::collections::BTreeSet::new();
        for (i, v) in self.expert_variants.iter().enumerate() {
            if !names.insert(v.name.as_str()) {
                return Err(Error::Validation(format!("duplicate expert variant `{}`", v.name)));
            }
            if let Some(r) = &v.route {
                check_path(&format!("expert_variants[{i}].route"), r)?;
            }
            if let Some(s) = v.desired_speed {
                check_finite(&format!("expert_variants[{i}].desired_speed"), s)?;
                if !(s > 0.0 && s <= 40.0) {
                    return Err(Error::Validation(format!(
                        "expert_variants[{i}].desired_speed out of range"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let spec: ScenarioSpec =
            serde_path_to_error::deserialize(de).map_err(|e| Error::Parse(format!("{}: {}", e.path(), e.inner())))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    /// Expert variants to demonstrate; a single nominal one when none are listed.
    pub fn variants(&self) -> Vec<ExpertVariant> {
        if self.expert_variants.is_empty() {
            vec![ExpertVariant {
                name: "nominal".into(),
                route: None,
                desired_speed: None,
            }]
        } else {
            self.expert_variants.clone()
        }
    }

    pub fn boundaries(&self) -> Vec<Polyline> {
        self.map
            .iter()
            .filter(|p| p.kind == PolylineKind::RoadBoundary)
            .cloned()
            .collect()
    }
}

impl AgentSpec {
    fn validate(&self) -> Result<()> {
        check_points("start_pose", &[self.start_pose.position])?;
        check_finite("start_pose.heading", self.start_pose.heading)?;
        self.footprint.validate()?;
        match &self.behavior {
            Behavior::Stationary => {}
            Behavior::ConstantSpeed { speed } => {
                check_finite("behavior.params.speed", *speed)?;
                if *speed < 0.0 {
                    return Err(Error::Validation("speed must be >= 0".into()));
                }
            }
            Behavior::LaneFollow {
                path,
                speed,
                depart_time,
            } => {
                check_finite("behavior.params.speed", *speed)?;
                check_finite("behavior.params.depart_time", *depart_time)?;
                check_path("behavior.params.path", path)?;
                if *speed < 0.0 || *depart_time < 0.0 {
                    return Err(Error::Validation("speed and depart_time must be >= 0".into()));
                }
            }
            Behavior::ScriptedWaypoints { waypoints } => {
                if waypoints.is_empty() {
                    return Err(Error::Validation(
                        "scripted_waypoints needs at least one waypoint".into(),
                    ));
                }
                for (i, w) in waypoints.iter().enumerate() {
                    check_finite(&format!("behavior.params.waypoints[{i}]"), w.t + w.x + w.y)?;
                }
                if waypoints[0].t < 0.0 || waypoints.windows(2).any(|w| w[1].t <= w[0].t) {
                    return Err(Error::Validation(
                        "waypoint times must be >= 0 and strictly increasing".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

impl TrafficElementSpec {
    fn validate(&self) -> Result<()> {
        check_points("stop_line", &self.stop_line)?;
        check_finite("phase_offset", self.phase_offset)?;
        if self.stop_line[0] == self.stop_line[1] {
            return Err(Error::Validation("stop line endpoints coincide".into()));
        }
        match self.kind {
            TrafficKind::StopSign if !self.phases.is_empty() => {
                Err(Error::Validation("stop signs take no phases".into()))
            }
            TrafficKind::TrafficLight if self.phases.is_empty() => {
                Err(Error::Validation("traffic lights need at least one phase".into()))
            }
            _ => {
                for (i, p) in self.phases.iter().enumerate() {
                    check_finite(&format!("phases[{i}].duration"), p.duration)?;
                    if p.duration <= 0.0 {
                        return Err(Error::Validation(format!("phases[{i}].duration must be positive")));
                    }
                    if p.state == SignalState::NotApplicable {
                        return Err(Error::Validation(format!(
                            "phases[{i}].state must be red, yellow or green"
                        )));
                    }
                }
                Ok(())
            }
        }
    }
}

pub fn load_scenario(path: &Path) -> Result<ScenarioSpec> {
    let bytes = read_file(path)?;
    let text = String::from_utf8(bytes).map_err(|_| Error::Parse(format!("{}: not UTF-8", path.display())))?;
    ScenarioSpec::from_json(&text).map_err(|e| match e {
        Error::Parse(m) => Error::Parse(format!("{}: {m}", path.display())),
        Error::Validation(m) => Error::Validation(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn save_scenario(spec: &ScenarioSpec, path: &Path) -> Result<()> {
    write_atomic(path, spec.to_json().as_bytes())
}

/// Scenario files (`*.json`) in `dir`, sorted by file name.
pub fn scenario_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let rd = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in rd {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        if p.extension().is_some_and(|e| e == "json") {
            files.push(p);
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(Error::NoScenarios(dir.display().to_string()));
    }
    Ok(files)
}

pub fn load_scenarios(dir: &Path) -> Result<Vec<ScenarioSpec>> {
    scenario_files(dir)?.iter().map(|p| load_scenario(p)).collect()
}
