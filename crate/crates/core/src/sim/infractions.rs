use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    footprints_overlap, segment_overlaps_footprint, segments_intersect, Footprint, Polyline, PolylineKind, Pose2, Vec2,
};
use crate::scenario::{SignalState, TrafficKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InfractionKind {
    CollisionVehicle,
    CollisionStatic,
    RedLight,
    StopSign,
    Offroad,
}

impl InfractionKind {
    pub fn name(self) -> &'static str {
        match self {
            InfractionKind::CollisionVehicle => "collision_vehicle",
            InfractionKind::CollisionStatic => "collision_static",
            InfractionKind::RedLight => "red_light",
            InfractionKind::StopSign => "stop_sign",
            InfractionKind::Offroad => "offroad",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InfractionEvent {
    pub kind: InfractionKind,
    pub tick: usize,
    /// Agent, traffic-element or map-polyline index, depending on `kind`.
    pub object: usize,
}

#[derive(Clone, Debug)]
pub struct ObservedAgent {
    pub id: usize,
    pub pose: Pose2,
    pub footprint: Footprint,
    pub is_static: bool,
}

#[derive(Clone, Debug)]
pub struct ObservedElement {
    pub id: usize,
    pub kind: TrafficKind,
    pub state: SignalState,
    pub affects_ego: bool,
    pub stop_line: [Vec2; 2],
}

/// World state around one tick, in world coordinates. Element state and
/// `affects_ego` are taken before the move.
#[derive(Clone, Debug)]
pub struct TickObservation<'a> {
    pub ego_before: Pose2,
    pub ego_after: Pose2,
    pub speed_after: f64,
    pub ego_footprint: Footprint,
    pub agents: Vec<ObservedAgent>,
    pub elements: Vec<ObservedElement>,
    pub map: &'a [Polyline],
}

fn front(p: &Pose2, fp: &Footprint) -> Vec2 {
    p.position + Vec2::from_angle(p.heading) * (fp.length / 2.0)
}

/// Raw `(kind, object)` infractions at one tick, without debouncing.
pub fn detect_infractions(obs: &TickObservation) -> Vec<(InfractionKind, usize)> {
    let mut out = Vec::new();
    let fp = &obs.ego_footprint;
    for a in &obs.agents {
        if footprints_overlap(&obs.ego_after, fp, &a.pose, &a.footprint) {
            let kind = if a.is_static {
                InfractionKind::CollisionStatic
            } else {
                InfractionKind::CollisionVehicle
            };
            out.push((kind, a.id));
        }
    }
    let (f0, f1) = (front(&obs.ego_before, fp), front(&obs.ego_after, fp));
    for e in obs.elements.iter().filter(|e| e.affects_ego) {
        if !segments_intersect(f0, f1, e.stop_line[0], e.stop_line[1]) {
            continue;
        }
        match (e.kind, e.state) {
            (TrafficKind::TrafficLight, SignalState::Red) => out.push((InfractionKind::RedLight, e.id)),
            (TrafficKind::StopSign, _) if obs.speed_after > 0.1 => out.push((InfractionKind::StopSign, e.id)),
            _ => {}
        }
    }
    for (i, b) in obs.map.iter().enumerate() {
        if b.kind == PolylineKind::RoadBoundary
            && b.segments()
                .any(|(p, q)| segment_overlaps_footprint(p, q, &obs.ego_after, fp))
        {
            out.push((InfractionKind::Offroad, i));
        }
    }
    out
}

/// Reports each `(kind, object)` pair at most once per episode.
#[derive(Clone, Debug, Default)]
pub struct InfractionDetector {
    seen: BTreeSet<(InfractionKind, usize)>,
}

impl InfractionDetector {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn observe(&mut self, tick: usize, obs: &TickObservation) -> Vec<InfractionEvent> {
        detect_infractions(obs)
            .into_iter()
            .filter(|k| self.seen.insert(*k))
            .map(|(kind, object)| InfractionEvent { kind, tick, object })
            .collect()
    }
}

/// Penalty coefficient per infraction kind name. Offroad is accounted in
/// route completion instead and needs no entry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PenaltyConfig(pub BTreeMap<String, f64>);

impl Default for PenaltyConfig {
    fn default() -> Self {
        Self(BTreeMap::from([
            ("collision_vehicle".to_string(), 0.60),
            ("collision_static".to_string(), 0.65),
            ("red_light".to_string(), 0.70),
            ("stop_sign".to_string(), 0.80),
        ]))
    }
}

impl PenaltyConfig {
    pub fn validate(&self) -> Result<()> {
        for (k, &v) in &self.0 {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("penalty `{k}` must be in [0, 1], got {v}")));
            }
        }
        Ok(())
    }

    pub fn coefficient(&self, kind: InfractionKind) -> Result<f64> {
        self.0
            .get(kind.name())
            .copied()
            .ok_or_else(|| Error::Config(format!("no penalty coefficient for `{}`", kind.name())))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub route_completion: f64,
    pub infraction_score: f64,
    pub driving_score: f64,
}

/// Route completion is `100 * fraction`, the infraction score the product of
/// per-event coefficients, and the driving score their product.
pub fn score_episode(events: &[InfractionEvent], fraction: f64, penalties: &PenaltyConfig) -> Result<EpisodeMetrics> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::Validation(format!("route fraction {fraction} outside [0, 1]")));
    }
    penalties.validate()?;
    let mut is = 1.0;
    for e in events {
        if e.kind != InfractionKind::Offroad {
            is *= penalties.coefficient(e.kind)?;
        }
    }
    let rc = 100.0 * fraction;
    Ok(EpisodeMetrics {
        route_completion: rc,
        infraction_score: is,
        driving_score: rc * is,
    })
}
