//! Planar primitives and the collision predicates shared by the conflict loss,
//! the infraction detector and the rule wrapper.

use std::f64::consts::PI;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Coordinates are bounded to keep every downstream computation finite.
pub const MAX_COORD: f64 = 1000.0;
/// Steps shorter than this inherit the previous heading.
pub const MIN_HEADING_STEP: f64 = 0.01;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn from_angle(a: f64) -> Self {
        let (s, c) = a.sin_cos();
        Self::new(c, s)
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn cross(self, o: Vec2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dist(self, o: Vec2) -> f64 {
        (self - o).norm()
    }

    pub fn angle(self) -> f64 {
        self.y.atan2(self.x)
    }

    pub fn perp(self) -> Vec2 {
        Vec2::new(-self.y, self.x)
    }

    pub fn rotate(self, a: f64) -> Vec2 {
        let (s, c) = a.sin_cos();
        Vec2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    pub fn lerp(self, o: Vec2, t: f64) -> Vec2 {
        self + (o - self) * t
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl From<[f64; 2]> for Vec2 {
    fn from(a: [f64; 2]) -> Self {
        Vec2::new(a[0], a[1])
    }
}

impl From<Vec2> for [f64; 2] {
    fn from(v: Vec2) -> Self {
        [v.x, v.y]
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, k: f64) -> Vec2 {
        Vec2::new(self.x * k, self.y * k)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// Wraps an angle into (-pi, pi].
pub fn normalize_angle(a: f64) -> f64 {
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    r
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "PoseRepr", into = "PoseRepr")]
pub struct Pose2 {
    pub position: Vec2,
    pub heading: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PoseRepr {
    x: f64,
    y: f64,
    #[serde(default)]
    heading: f64,
}

impl From<PoseRepr> for Pose2 {
    fn from(r: PoseRepr) -> Self {
        Pose2 {
            position: Vec2::new(r.x, r.y),
            heading: normalize_angle(r.heading),
        }
    }
}

impl From<Pose2> for PoseRepr {
    fn from(p: Pose2) -> Self {
        PoseRepr {
            x: p.position.x,
            y: p.position.y,
            heading: p.heading,
        }
    }
}

impl Pose2 {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Self {
            position: Vec2::new(x, y),
            heading: normalize_angle(heading),
        }
    }

    /// Expresses a world point in this pose's frame.
    pub fn to_local(&self, p: Vec2) -> Vec2 {
        (p - self.position).rotate(-self.heading)
    }

    pub fn to_world(&self, p: Vec2) -> Vec2 {
        self.position + p.rotate(self.heading)
    }

    pub fn pose_to_local(&self, p: &Pose2) -> Pose2 {
        Pose2 {
            position: self.to_local(p.position),
            heading: normalize_angle(p.heading - self.heading),
        }
    }

    pub fn pose_to_world(&self, p: &Pose2) -> Pose2 {
        Pose2 {
            position: self.to_world(p.position),
            heading: normalize_angle(p.heading + self.heading),
        }
    }

    /// Linear position blend with shortest-arc heading blend.
    pub fn interpolate(&self, o: &Pose2, t: f64) -> Pose2 {
        let dh = normalize_angle(o.heading - self.heading);
        Pose2 {
            position: self.position.lerp(o.position, t),
            heading: normalize_angle(self.heading + dh * t),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Footprint {
    pub length: f64,
    pub width: f64,
}

impl Default for Footprint {
    fn default() -> Self {
        Self::SEDAN
    }
}

impl Footprint {
    pub const SEDAN: Footprint = Footprint {
        length: 4.6,
        width: 1.9,
    };

    pub fn new(length: f64, width: f64) -> Result<Self> {
        let f = Self { length, width };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.length > 0.0 && self.width > 0.0 && self.length.is_finite() && self.width.is_finite()) {
            return Err(Error::Validation(format!(
                "footprint must be positive, got {}x{}",
                self.length, self.width
            )));
        }
        Ok(())
    }

    /// Grows the rectangle by `margin` on every side.
    pub fn inflate(&self, margin: f64) -> Footprint {
        Footprint {
            length: self.length + 2.0 * margin,
            width: self.width + 2.0 * margin,
        }
    }

    pub fn half_diagonal(&self) -> f64 {
        0.5 * self.length.hypot(self.width)
    }

    /// Corners counter-clockwise starting front-left.
    pub fn corners(&self, pose: &Pose2) -> [Vec2; 4] {
        let (hl, hw) = (self.length / 2.0, self.width / 2.0);
        [
            Vec2::new(hl, hw),
            Vec2::new(-hl, hw),
            Vec2::new(-hl, -hw),
            Vec2::new(hl, -hw),
        ]
        .map(|c| pose.to_world(c))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolylineKind {
    LaneCenterline,
    LaneDivider,
    RoadBoundary,
    PedestrianCrossing,
}

impl PolylineKind {
    pub const ALL: [PolylineKind; 4] = [
        PolylineKind::LaneCenterline,
        PolylineKind::LaneDivider,
        PolylineKind::RoadBoundary,
        PolylineKind::PedestrianCrossing,
    ];

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Polyline {
    pub points: Vec<Vec2>,
    pub kind: PolylineKind,
}

impl Polyline {
    pub fn new(points: Vec<Vec2>, kind: PolylineKind) -> Result<Self> {
        let p = Self { points, kind };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.len() < 2 {
            return Err(Error::Validation(format!(
                "{:?} polyline needs at least 2 points, got {}",
                self.kind,
                self.points.len()
            )));
        }
        for (i, p) in self.points.iter().enumerate() {
            if !p.is_finite() {
                return Err(Error::Validation(format!("non-finite polyline point #{i}")));
            }
        }
        for (i, w) in self.points.windows(2).enumerate() {
            if w[0] == w[1] {
                return Err(Error::Validation(format!("repeated polyline point #{}", i + 1)));
            }
        }
        Ok(())
    }

    pub fn segments(&self) -> impl Iterator<Item = (Vec2, Vec2)> + '_ {
        self.points.windows(2).map(|w| (w[0], w[1]))
    }

    pub fn length(&self) -> f64 {
        self.segments().map(|(a, b)| a.dist(b)).sum()
    }

    /// Cumulative arclength at each vertex.
    pub fn arclengths(&self) -> Vec<f64> {
        let mut acc = Vec::with_capacity(self.points.len());
        let mut s = 0.0;
        acc.push(0.0);
        for (a, b) in self.segments() {
            s += a.dist(b);
            acc.push(s);
        }
        acc
    }

    /// Point at arclength `s`, clamped to the ends.
    pub fn point_at(&self, s: f64) -> Vec2 {
        let cum = self.arclengths();
        point_at_with(&self.points, &cum, s)
    }

    /// `n` points spaced uniformly in arclength from start to end.
    pub fn resample(&self, n: usize) -> Vec<Vec2> {
        let cum = self.arclengths();
        let total = *cum.last().unwrap_or(&0.0);
        if n == 1 {
            return vec![self.points[0]];
        }
        (0..n)
            .map(|i| point_at_with(&self.points, &cum, total * i as f64 / (n - 1) as f64))
            .collect()
    }

    pub fn transformed(&self, f: impl Fn(Vec2) -> Vec2) -> Polyline {
        Polyline {
            points: self.points.iter().map(|&p| f(p)).collect(),
            kind: self.kind,
        }
    }
}

fn point_at_with(points: &[Vec2], cum: &[f64], s: f64) -> Vec2 {
    let total = *cum.last().unwrap_or(&0.0);
    if s <= 0.0 {
        return points[0];
    }
    if s >= total {
        return *points.last().unwrap();
    }
    let i = match cum.binary_search_by(|c| c.total_cmp(&s)) {
        Ok(i) => return points[i],
        Err(i) => i - 1,
    };
    let t = (s - cum[i]) / (cum[i + 1] - cum[i]);
    points[i].lerp(points[i + 1], t)
}

/// Fixed-horizon waypoint sequence in the ego frame at the current tick
/// (x forward, y left), one waypoint per `dt_wp` seconds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub points: Vec<Vec2>,
}

impl Trajectory {
    pub fn new(points: Vec<Vec2>) -> Result<Self> {
        let t = Self { points };
        t.validate()?;
        Ok(t)
    }

    pub fn zeros(horizon: usize) -> Self {
        Self {
            points: vec![Vec2::ZERO; horizon],
        }
    }

    pub fn horizon(&self) -> usize {
        self.points.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.is_empty() {
            return Err(Error::Validation("empty trajectory".into()));
        }
        for (i, p) in self.points.iter().enumerate() {
            if !p.is_finite() || p.x.abs() > MAX_COORD || p.y.abs() > MAX_COORD {
                return Err(Error::Validation(format!("waypoint #{i} out of range: {p:?}")));
            }
        }
        Ok(())
    }

    /// Flattened `(x_1, y_1, ..., x_T, y_T)`.
    pub fn coords(&self) -> Vec<f64> {
        self.points.iter().flat_map(|p| [p.x, p.y]).collect()
    }

    /// Heading at each waypoint: direction of the incoming displacement from
    /// the previous waypoint (the origin for the first one). Steps shorter than
    /// [`MIN_HEADING_STEP`] inherit the previous heading; the start heading is 0.
    pub fn headings(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.points.len());
        let mut prev_point = Vec2::ZERO;
        let mut prev_heading = 0.0;
        for &p in &self.points {
            let d = p - prev_point;
            if d.norm() >= MIN_HEADING_STEP {
                prev_heading = d.angle();
            }
            out.push(prev_heading);
            prev_point = p;
        }
        out
    }

    pub fn poses(&self) -> Vec<Pose2> {
        self.points
            .iter()
            .zip(self.headings())
            .map(|(p, h)| Pose2 {
                position: *p,
                heading: h,
            })
            .collect()
    }

    pub fn mean(trajs: &[Trajectory]) -> Result<Trajectory> {
        let first = trajs
            .first()
            .ok_or_else(|| Error::Validation("mean of no trajectories".into()))?;
        let t = first.horizon();
        let mut pts = vec![Vec2::ZERO; t];
        for tr in trajs {
            if tr.horizon() != t {
                return Err(Error::HorizonMismatch {
                    expected: t,
                    found: tr.horizon(),
                });
            }
            for (acc, p) in pts.iter_mut().zip(&tr.points) {
                *acc = *acc + *p;
            }
        }
        let k = 1.0 / trajs.len() as f64;
        Ok(Trajectory {
            points: pts.into_iter().map(|p| p * k).collect(),
        })
    }
}

/// Average per-waypoint Euclidean distance.
pub fn traj_distance(a: &Trajectory, b: &Trajectory) -> Result<f64> {
    if a.horizon() != b.horizon() {
        return Err(Error::HorizonMismatch {
            expected: a.horizon(),
            found: b.horizon(),
        });
    }
    Ok(ade_unchecked(&a.points, &b.points))
}

pub(crate) fn ade_unchecked(a: &[Vec2], b: &[Vec2]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p.dist(*q)).sum::<f64>() / a.len() as f64
}

fn project(corners: &[Vec2; 4], axis: Vec2) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for c in corners {
        let v = c.dot(axis);
        lo = lo.min(v);
        hi = hi.max(v);
    }
    (lo, hi)
}

/// Separating-axis test between two oriented rectangles. Touching counts as
/// overlap.
pub fn footprints_overlap(p1: &Pose2, f1: &Footprint, p2: &Pose2, f2: &Footprint) -> bool {
    if p1.position.dist(p2.position) > f1.half_diagonal() + f2.half_diagonal() {
        return false;
    }
    let c1 = f1.corners(p1);
    let c2 = f2.corners(p2);
    let axes = [
        Vec2::from_angle(p1.heading),
        Vec2::from_angle(p1.heading).perp(),
        Vec2::from_angle(p2.heading),
        Vec2::from_angle(p2.heading).perp(),
    ];
    for axis in axes {
        let (a0, a1) = project(&c1, axis);
        let (b0, b1) = project(&c2, axis);
        if a1 < b0 || b1 < a0 {
            return false;
        }
    }
    true
}

/// Whether segment `a`-`b` touches the posed rectangle.
pub fn segment_overlaps_footprint(a: Vec2, b: Vec2, pose: &Pose2, fp: &Footprint) -> bool {
    let la = pose.to_local(a);
    let lb = pose.to_local(b);
    let (hl, hw) = (fp.length / 2.0, fp.width / 2.0);
    if la.x.max(lb.x) < -hl || la.x.min(lb.x) > hl || la.y.max(lb.y) < -hw || la.y.min(lb.y) > hw {
        return false;
    }
    let d = lb - la;
    if d.norm() == 0.0 {
        return true;
    }
    let n = d.perp();
    let off = la.dot(n);
    let r = hl * n.x.abs() + hw * n.y.abs();
    off.abs() <= r
}

fn segment_point_distance(a: Vec2, b: Vec2, p: Vec2) -> f64 {
    let d = b - a;
    let l2 = d.dot(d);
    let t = if l2 == 0.0 {
        0.0
    } else {
        ((p - a).dot(d) / l2).clamp(0.0, 1.0)
    };
    p.dist(a + d * t)
}

/// Configurable clearance for the conflict predicates; `inflation` grows every
/// footprint on all sides.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConflictParams {
    pub inflation: f64,
}

/// Ego poses checked for conflicts: every waypoint plus the midpoint between
/// consecutive waypoints. Returns `(pose, waypoint_time_index)` where the
/// index is fractional for midpoints.
pub fn sample_poses(ego: &Trajectory) -> Vec<(Pose2, f64)> {
    let poses = ego.poses();
    let mut out = Vec::with_capacity(poses.len() * 2);
    for (i, p) in poses.iter().enumerate() {
        if i > 0 {
            let mid = Pose2 {
                position: poses[i - 1].position.lerp(p.position, 0.5),
                heading: p.heading,
            };
            out.push((mid, i as f64 - 0.5));
        }
        out.push((*p, i as f64));
    }
    out
}

/// Whether the ego plan overlaps an agent's future at any shared waypoint time
/// or the midpoint between consecutive waypoints.
pub fn conflict_with_agent(ego: &Trajectory, ego_fp: &Footprint, agent_future: &[Pose2], agent_fp: &Footprint) -> bool {
    conflict_with_agent_params(ego, ego_fp, agent_future, agent_fp, ConflictParams::default())
}

pub fn conflict_with_agent_params(
    ego: &Trajectory,
    ego_fp: &Footprint,
    agent_future: &[Pose2],
    agent_fp: &Footprint,
    params: ConflictParams,
) -> bool {
    let ef = ego_fp.inflate(params.inflation);
    let af = agent_fp.inflate(params.inflation);
    agent_conflict_within(&sample_poses(ego), &ef, agent_future, &af, f64::INFINITY)
}

/// Conflict check over precomputed ego sample poses, restricted to sample
/// indices `<= max_index` (waypoint index, 0-based).
pub(crate) fn agent_conflict_within(
    samples: &[(Pose2, f64)],
    ego_fp: &Footprint,
    agent_future: &[Pose2],
    agent_fp: &Footprint,
    max_index: f64,
) -> bool {
    let reach = ego_fp.half_diagonal() + agent_fp.half_diagonal();
    for (pose, idx) in samples {
        if *idx > max_index {
            break;
        }
        let agent_pose = if idx.fract() == 0.0 {
            match agent_future.get(*idx as usize) {
                Some(p) => *p,
                None => continue,
            }
        } else {
            let lo = idx.floor() as usize;
            match (agent_future.get(lo), agent_future.get(lo + 1)) {
                (Some(a), Some(b)) => a.interpolate(b, 0.5),
                _ => continue,
            }
        };
        if pose.position.dist(agent_pose.position) > reach {
            continue;
        }
        if footprints_overlap(pose, ego_fp, &agent_pose, agent_fp) {
            return true;
        }
    }
    false
}

/// Whether any posed ego footprint along the plan touches a road-boundary
/// segment. Polylines of other kinds are ignored.
pub fn conflict_with_boundary(ego: &Trajectory, ego_fp: &Footprint, boundaries: &[Polyline]) -> bool {
    conflict_with_boundary_params(ego, ego_fp, boundaries, ConflictParams::default())
}

pub fn conflict_with_boundary_params(
    ego: &Trajectory,
    ego_fp: &Footprint,
    boundaries: &[Polyline],
    params: ConflictParams,
) -> bool {
    let fp = ego_fp.inflate(params.inflation);
    boundary_conflict_samples(&sample_poses(ego), &fp, boundaries)
}

pub(crate) fn boundary_conflict_samples(samples: &[(Pose2, f64)], fp: &Footprint, boundaries: &[Polyline]) -> bool {
    let reach = fp.half_diagonal();
    for b in boundaries.iter().filter(|b| b.kind == PolylineKind::RoadBoundary) {
        for (a, c) in b.segments() {
            for (pose, _) in samples {
                if segment_point_distance(a, c, pose.position) > reach {
                    continue;
                }
                if segment_overlaps_footprint(a, c, pose, fp) {
                    return true;
                }
            }
        }
    }
    false
}

/// Whether a single posed footprint touches any road boundary.
pub fn footprint_hits_boundary(pose: &Pose2, fp: &Footprint, boundaries: &[Polyline]) -> Option<usize> {
    let reach = fp.half_diagonal();
    boundaries
        .iter()
        .enumerate()
        .filter(|(_, b)| b.kind == PolylineKind::RoadBoundary)
        .find(|(_, b)| {
            b.segments().any(|(a, c)| {
                segment_point_distance(a, c, pose.position) <= reach && segment_overlaps_footprint(a, c, pose, fp)
            })
        })
        .map(|(i, _)| i)
}

/// Proper or touching intersection of two segments.
pub fn segments_intersect(a: Vec2, b: Vec2, c: Vec2, d: Vec2) -> bool {
    let d1 = (b - a).cross(c - a);
    let d2 = (b - a).cross(d - a);
    let d3 = (d - c).cross(a - c);
    let d4 = (d - c).cross(b - c);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    let on = |p: Vec2, q: Vec2, r: Vec2, v: f64| {
        v == 0.0 && r.x >= p.x.min(q.x) && r.x <= p.x.max(q.x) && r.y >= p.y.min(q.y) && r.y <= p.y.max(q.y)
    };
    on(a, b, c, d1) || on(a, b, d, d2) || on(c, d, a, d3) || on(c, d, b, d4)
}
