//! Scripted demonstrator: pure pursuit along a route plus an IDM-style
//! longitudinal law that treats lead vehicles and binding stop lines as
//! obstacles.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::geometry::{normalize_angle, Trajectory};
use crate::scenario::{ExpertVariant, SignalState, TrafficKind};

use super::vehicle::ControlCommand;
use super::world::{RoutePath, SimConfig, World};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExpertParams {
    pub max_accel: f64,
    pub comfort_decel: f64,
    /// Standstill gap, m.
    pub min_gap: f64,
    pub time_headway: f64,
    /// Extra lateral clearance under which an agent ahead counts as a lead, m.
    pub lateral_margin: f64,
    pub lookahead_min: f64,
    pub lookahead_max: f64,
    pub lookahead_gain: f64,
}

impl Default for ExpertParams {
    fn default() -> Self {
        Self {
            max_accel: 2.0,
            comfort_decel: 3.0,
            min_gap: 2.5,
            time_headway: 1.2,
            lateral_margin: 0.3,
            lookahead_min: 4.0,
            lookahead_max: 12.0,
            lookahead_gain: 0.6,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Expert {
    pub route: Arc<RoutePath>,
    pub desired_speed: f64,
    pub params: ExpertParams,
    stop_line_s: Vec<Option<f64>>,
}

impl Expert {
    pub fn new(world: &World, variant: &ExpertVariant, params: ExpertParams) -> Self {
        let route = match &variant.route {
            Some(r) => Arc::new(RoutePath::new(r.clone())),
            None => world.route.clone(),
        };
        let stop_line_s = world
            .scenario
            .traffic_elements
            .iter()
            .map(|e| route.crossing(e.stop_line[0], e.stop_line[1]))
            .collect();
        Self {
            route,
            desired_speed: variant.desired_speed.unwrap_or(world.scenario.desired_speed),
            params,
            stop_line_s,
        }
    }

    fn idm(&self, v: f64, gap: f64, lead_speed: f64) -> f64 {
        let p = &self.params;
        let dv = v - lead_speed;
        let s_star =
            p.min_gap + (v * p.time_headway + v * dv / (2.0 * (p.max_accel * p.comfort_decel).sqrt())).max(0.0);
        -p.max_accel * (s_star / gap.max(0.1)).powi(2)
    }

    /// Longitudinal acceleration demand at the world's current state.
    pub fn acceleration(&self, world: &World) -> f64 {
        let p = &self.params;
        let v = world.ego.speed;
        let (s, _) = self.route.project(world.ego.pose.position);
        let half = world.scenario.ego_footprint.length / 2.0;
        let accel = p.max_accel * (1.0 - (v / self.desired_speed).powi(4));
        let mut obstacle = 0.0f64;

        for a in &world.scenario.agents {
            let st = a.state_at(world.time);
            let (sa, lat) = self.route.project(st.pose.position);
            let overlap = (a.footprint.width + world.scenario.ego_footprint.width) / 2.0 + p.lateral_margin;
            if lat.abs() > overlap || sa <= s || sa - s > 80.0 {
                continue;
            }
            let gap = sa - s - a.footprint.length / 2.0 - half;
            let heading_diff = normalize_angle(st.pose.heading - self.route.heading_at(sa));
            let lead_speed = (st.speed * heading_diff.cos()).max(0.0);
            obstacle = obstacle.min(self.idm(v, gap, lead_speed));
        }

        for (i, e) in world.scenario.traffic_elements.iter().enumerate() {
            let Some(line_s) = self.stop_line_s[i] else {
                continue;
            };
            let gap = line_s - (s + half);
            if gap < 0.0 || gap > 80.0 {
                continue;
            }
            let must_stop = match (e.kind, world.signal_state(i)) {
                (TrafficKind::StopSign, _) => !world.stop_cleared[i],
                (TrafficKind::TrafficLight, SignalState::Red) => true,
                (TrafficKind::TrafficLight, SignalState::Yellow) => gap > v * v / (2.0 * p.comfort_decel),
                _ => false,
            };
            if must_stop {
                // Stop lines are served closer than vehicles.
                obstacle = obstacle.min(self.idm(v, gap + p.min_gap - 0.5, 0.0));
            }
        }
        accel + obstacle
    }

    pub fn steer(&self, world: &World, cfg: &SimConfig) -> f64 {
        let p = &self.params;
        let ego = &world.ego;
        let (s, _) = self.route.project(ego.pose.position);
        let ld = (p.lookahead_gain * ego.speed + 3.0).clamp(p.lookahead_min, p.lookahead_max);
        let target = self.route.point_at(s + ld);
        let alpha = normalize_angle((target - ego.pose.position).angle() - ego.pose.heading);
        let delta = (2.0 * ego.wheelbase * alpha.sin() / ld).atan();
        delta / cfg.vehicle.max_steer
    }

    pub fn control(&self, world: &World, cfg: &SimConfig) -> ControlCommand {
        let a = self
            .acceleration(world)
            .clamp(-cfg.vehicle.max_brake, cfg.vehicle.max_accel);
        if world.ego.speed < 0.05 && a <= 0.0 {
            return ControlCommand::new(self.steer(world, cfg), 0.0, 1.0);
        }
        ControlCommand::from_accel(self.steer(world, cfg), a, world.ego.speed, &cfg.vehicle)
    }

    /// The expert's own future over the planning horizon, obtained by rolling
    /// it forward on a copy of the world, in the current ego frame.
    pub fn plan(&self, world: &World, cfg: &SimConfig) -> Trajectory {
        let origin = world.ego.pose;
        let mut w = world.clone();
        let per_wp = (cfg.dt_wp / cfg.dt).round() as usize;
        let mut points = Vec::with_capacity(cfg.horizon);
        for _ in 0..cfg.horizon {
            for _ in 0..per_wp {
                let c = self.control(&w, cfg);
                w.step(c, cfg);
            }
            points.push(origin.to_local(w.ego.pose.position));
        }
        Trajectory { points }
    }
}
