use serde::{Deserialize, Serialize};

use crate::geometry::{normalize_angle, Pose2, Vec2};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ControlCommand {
    pub steer: f64,
    pub throttle: f64,
    pub brake: f64,
}

impl ControlCommand {
    /// Clamps every channel to its range; when both pedals are pressed only
    /// the stronger one is kept.
    pub fn new(steer: f64, throttle: f64, brake: f64) -> Self {
        let mut c = Self {
            steer: steer.clamp(-1.0, 1.0),
            throttle: throttle.clamp(0.0, 1.0),
            brake: brake.clamp(0.0, 1.0),
        };
        if c.throttle > 0.0 && c.brake > 0.0 {
            if c.brake >= c.throttle {
                c.throttle = 0.0;
            } else {
                c.brake = 0.0;
            }
        }
        c
    }

    /// Pedal command producing longitudinal acceleration `accel` at speed `v`.
    pub fn from_accel(steer: f64, accel: f64, v: f64, p: &VehicleParams) -> Self {
        let net = accel + p.drag * v * v;
        if net >= 0.0 {
            Self::new(steer, net / p.max_accel, 0.0)
        } else {
            Self::new(steer, 0.0, -net / p.max_brake)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VehicleParams {
    pub wheelbase: f64,
    pub max_accel: f64,
    pub max_brake: f64,
    /// Radians.
    pub max_steer: f64,
    pub drag: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            wheelbase: 2.8,
            max_accel: 3.0,
            max_brake: 6.0,
            max_steer: 35f64.to_radians(),
            drag: 0.003,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EgoState {
    pub pose: Pose2,
    pub speed: f64,
    pub wheelbase: f64,
}

impl EgoState {
    pub fn is_finite(&self) -> bool {
        self.pose.position.is_finite() && self.pose.heading.is_finite() && self.speed.is_finite()
    }
}

/// Kinematic bicycle, explicit Euler: position and heading advance with the
/// speed at the start of the step. Expects `dt` in `(0, 0.1]`.
pub fn bicycle_step(s: &EgoState, c: &ControlCommand, p: &VehicleParams, dt: f64) -> EgoState {
    let accel = p.max_accel * c.throttle - p.max_brake * c.brake - p.drag * s.speed * s.speed;
    let delta = p.max_steer * c.steer;
    let v = s.speed;
    let heading = s.pose.heading;
    EgoState {
        pose: Pose2 {
            position: s.pose.position + Vec2::from_angle(heading) * (v * dt),
            heading: normalize_angle(heading + v / s.wheelbase * delta.tan() * dt),
        },
        speed: (v + accel * dt).max(0.0),
        wheelbase: s.wheelbase,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PidGains {
    pub lat_kp: f64,
    pub lat_ki: f64,
    pub lat_kd: f64,
    pub lon_kp: f64,
    pub lon_ki: f64,
    pub lon_kd: f64,
    /// Lookahead distance per m/s of speed.
    pub lookahead_gain: f64,
    pub lookahead_min: f64,
    pub lookahead_max: f64,
    /// Bound on each integrator's contribution to the output.
    pub integral_limit: f64,
}

impl Default for PidGains {
    fn default() -> Self {
        Self {
            lat_kp: 1.5,
            lat_ki: 0.05,
            lat_kd: 0.05,
            lon_kp: 0.5,
            lon_ki: 0.1,
            lon_kd: 0.0,
            lookahead_gain: 0.5,
            lookahead_min: 2.0,
            lookahead_max: 6.0,
            integral_limit: 0.3,
        }
    }
}

/// A plan fixed in the world frame: `points[0]` is where the ego stood when
/// the plan was made, `points[k]` the waypoint at `k * dt_wp` seconds.
#[derive(Clone, Debug, PartialEq)]
pub struct PlanTrack {
    pub points: Vec<Vec2>,
    pub dt_wp: f64,
}

impl PlanTrack {
    /// Anchors an ego-frame plan at `pose`.
    pub fn from_ego_plan(pose: &Pose2, plan: &[Vec2], dt_wp: f64) -> Self {
        let mut points = Vec::with_capacity(plan.len() + 1);
        points.push(pose.position);
        points.extend(plan.iter().map(|&p| pose.to_world(p)));
        Self { points, dt_wp }
    }

    /// Position at time `t` after the plan start, holding the last waypoint.
    pub fn position_at(&self, t: f64) -> Vec2 {
        let u = (t / self.dt_wp).max(0.0);
        let k = u.floor() as usize;
        if k + 1 >= self.points.len() {
            return *self.points.last().expect("nonempty plan");
        }
        self.points[k].lerp(self.points[k + 1], u - k as f64)
    }

    /// Mean speed over `[t, t + 1 s]`, measured along the plan.
    pub fn target_speed(&self, t: f64) -> f64 {
        const WINDOW: f64 = 1.0;
        let mut dist = 0.0;
        let mut prev = self.position_at(t);
        let end = t + WINDOW;
        let mut k = (t / self.dt_wp).floor() as usize + 1;
        while (k as f64) * self.dt_wp < end && k < self.points.len() {
            let p = self.points[k];
            dist += prev.dist(p);
            prev = p;
            k += 1;
        }
        dist += prev.dist(self.position_at(end));
        dist / WINDOW
    }

    /// Point `ahead` meters past the projection of `p` onto the plan, or
    /// `None` when less than half a meter of plan remains.
    pub fn lookahead_point(&self, p: Vec2, ahead: f64) -> Option<Vec2> {
        let segs: Vec<(Vec2, Vec2)> = self
            .points
            .windows(2)
            .map(|w| (w[0], w[1]))
            .filter(|(a, b)| a.dist(*b) > 1e-6)
            .collect();
        if segs.is_empty() {
            return None;
        }
        let mut best = (0usize, 0.0f64, f64::INFINITY);
        for (i, (a, b)) in segs.iter().enumerate() {
            let d = *b - *a;
            let u = ((p - *a).dot(d) / d.dot(d)).clamp(0.0, 1.0);
            let dist = p.dist(*a + d * u);
            if dist < best.2 {
                best = (i, u, dist);
            }
        }
        let (mut i, u, _) = best;
        let mut remaining_total = segs[i].0.dist(segs[i].1) * (1.0 - u);
        for (a, b) in &segs[i + 1..] {
            remaining_total += a.dist(*b);
        }
        if remaining_total < 0.5 {
            return None;
        }
        let (a, b) = segs[i];
        let mut pos = a.lerp(b, u);
        let mut left = ahead;
        loop {
            let (_, b) = segs[i];
            let seg_left = pos.dist(b);
            if left <= seg_left {
                let dir = (b - pos) * (1.0 / seg_left);
                return Some(pos + dir * left);
            }
            left -= seg_left;
            pos = b;
            if i + 1 == segs.len() {
                let (a, b) = segs[i];
                let dir = (b - a) * (1.0 / a.dist(b));
                return Some(b + dir * left);
            }
            i += 1;
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PidController {
    pub gains: PidGains,
    lat_integral: f64,
    lat_prev: Option<f64>,
    lon_integral: f64,
    lon_prev: Option<f64>,
}

impl PidController {
    pub fn new(gains: PidGains) -> Self {
        Self {
            gains,
            ..Self::default()
        }
    }

    /// Control toward `plan`, `elapsed` seconds after it was made.
    pub fn control(&mut self, s: &EgoState, plan: &PlanTrack, elapsed: f64, dt: f64) -> ControlCommand {
        let g = self.gains;
        let ld = (g.lookahead_gain * s.speed).clamp(g.lookahead_min, g.lookahead_max);
        let heading_err = plan
            .lookahead_point(s.pose.position, ld)
            .map_or(0.0, |t| normalize_angle((t - s.pose.position).angle() - s.pose.heading));
        let steer = self.lateral(heading_err, dt);

        let target = plan.target_speed(elapsed);
        let err = target - s.speed;
        if target < 0.1 && s.speed < 0.1 {
            self.lon_integral = 0.0;
            self.lon_prev = None;
            return ControlCommand::new(steer, 0.0, 1.0);
        }
        let u = self.longitudinal(err, dt);
        if u >= 0.0 {
            ControlCommand::new(steer, u, 0.0)
        } else {
            ControlCommand::new(steer, 0.0, -u)
        }
    }

    fn lateral(&mut self, e: f64, dt: f64) -> f64 {
        let g = self.gains;
        if g.lat_ki > 0.0 {
            let lim = g.integral_limit / g.lat_ki;
            self.lat_integral = (self.lat_integral + e * dt).clamp(-lim, lim);
        }
        let de = self.lat_prev.map_or(0.0, |p| (e - p) / dt);
        self.lat_prev = Some(e);
        g.lat_kp * e + g.lat_ki * self.lat_integral + g.lat_kd * de
    }

    fn longitudinal(&mut self, e: f64, dt: f64) -> f64 {
        let g = self.gains;
        if g.lon_ki > 0.0 {
            let lim = g.integral_limit / g.lon_ki;
            self.lon_integral = (self.lon_integral + e * dt).clamp(-lim, lim);
        }
        let de = self.lon_prev.map_or(0.0, |p| (e - p) / dt);
        self.lon_prev = Some(e);
        g.lon_kp * e + g.lon_ki * self.lon_integral + g.lon_kd * de
    }
}

/// One-shot control for an ego-frame plan made at the current tick.
pub fn pid_control(pid: &mut PidController, s: &EgoState, plan: &[Vec2], dt_wp: f64, dt: f64) -> ControlCommand {
    let track = PlanTrack::from_ego_plan(&s.pose, plan, dt_wp);
    pid.control(s, &track, 0.0, dt)
}
