#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use probplan::scenario::{load_scenario, ScenarioSpec};
use probplan::scene::{Command, EgoObservation, Navigation, SnapshotAgent};
use probplan::sim::{ControlCommand, SimConfig, World};
use probplan::{Footprint, Polyline, PolylineKind, Pose2, SceneSnapshot, Trajectory, Vec2};

pub fn scenarios_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

pub fn scenario(name: &str) -> Arc<ScenarioSpec> {
    Arc::new(load_scenario(&scenarios_dir().join(format!("{name}.json"))).unwrap())
}

pub fn initial_snapshot(name: &str) -> SceneSnapshot {
    let cfg = SimConfig::default();
    World::new(scenario(name), &cfg, 0).snapshot(&cfg)
}

/// Straight corridor along x with road boundaries at `y = +-half_width`.
pub fn corridor_snapshot(half_width: f64, agents: Vec<SnapshotAgent>) -> SceneSnapshot {
    let map = [-half_width, half_width]
        .iter()
        .map(|&y| {
            Polyline::new(
                vec![Vec2::new(-20.0, y), Vec2::new(60.0, y)],
                PolylineKind::RoadBoundary,
            )
            .unwrap()
        })
        .chain(std::iter::once(
            Polyline::new(
                vec![Vec2::new(-20.0, 0.0), Vec2::new(60.0, 0.0)],
                PolylineKind::LaneCenterline,
            )
            .unwrap(),
        ))
        .collect();
    SceneSnapshot {
        map,
        agents,
        traffic_elements: vec![],
        ego: EgoObservation {
            speed: 5.0,
            yaw_rate: 0.0,
            last_control: ControlCommand::default(),
        },
        ego_footprint: Footprint::SEDAN,
        navigation: Navigation {
            command: Command::Follow,
            target: Vec2::new(30.0, 0.0),
        },
        horizon: 6,
        dt_wp: 0.5,
    }
}

pub fn stationary_agent(id: usize, x: f64, y: f64) -> SnapshotAgent {
    let pose = Pose2::new(x, y, 0.0);
    SnapshotAgent {
        id,
        pose,
        footprint: Footprint::SEDAN,
        speed: 0.0,
        future: vec![pose; 6],
        is_static: true,
    }
}

pub fn moving_agent(id: usize, x: f64, y: f64, vx: f64) -> SnapshotAgent {
    SnapshotAgent {
        id,
        pose: Pose2::new(x, y, 0.0),
        footprint: Footprint::SEDAN,
        speed: vx.abs(),
        future: (1..=6).map(|k| Pose2::new(x + vx * 0.5 * k as f64, y, 0.0)).collect(),
        is_static: false,
    }
}

/// Constant speed along x with a lateral drift reaching `dy` at the horizon.
pub fn straight(speed: f64, dy: f64) -> Trajectory {
    Trajectory::new(
        (1..=6)
            .map(|k| Vec2::new(speed * 0.5 * k as f64, dy * k as f64 / 6.0))
            .collect(),
    )
    .unwrap()
}

/// Stop action plus straight and drifting actions at several speeds.
pub fn grid_vocab() -> probplan::PlanningVocabulary {
    let mut actions = vec![Trajectory::zeros(6)];
    for k in 1..=7 {
        for dy in [-3.0, -1.5, 0.0, 1.5, 3.0] {
            actions.push(straight(2.0 * k as f64, dy));
        }
    }
    probplan::PlanningVocabulary::new(actions, 0.5, 8).unwrap()
}

pub fn small_model_config() -> probplan::ModelConfig {
    probplan::ModelConfig {
        dim: 16,
        heads: 2,
        depth: 2,
        ff: 32,
        horizon: 6,
        bands: 8,
    }
}

pub fn ade(a: &Trajectory, b: &Trajectory) -> f64 {
    let mut s = 0.0;
    for (p, q) in a.points.iter().zip(&b.points) {
        s += ((p.x - q.x).powi(2) + (p.y - q.y).powi(2)).sqrt();
    }
    s / a.points.len() as f64
}

pub fn min_pairwise(set: &[&Trajectory]) -> f64 {
    let mut m = f64::INFINITY;
    for i in 0..set.len() {
        for j in i + 1..set.len() {
            m = m.min(ade(set[i], set[j]));
        }
    }
    m
}

/// Every selection reachable by greedy max-min picks when each tie may be
/// broken either way, seeded from every most-stationary demo.
pub fn greedy_outcomes(demos: &[Trajectory], n: usize) -> Vec<Vec<usize>> {
    let zero = Trajectory::zeros(demos[0].horizon());
    let d0: Vec<f64> = demos.iter().map(|d| ade(d, &zero)).collect();
    let best = d0.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut out = Vec::new();
    for (i, &d) in d0.iter().enumerate() {
        if d == best {
            extend(demos, vec![i], n, &mut out);
        }
    }
    out
}

fn extend(demos: &[Trajectory], picked: Vec<usize>, n: usize, out: &mut Vec<Vec<usize>>) {
    if picked.len() == n {
        out.push(picked);
        return;
    }
    let score: Vec<f64> = demos
        .iter()
        .map(|d| picked.iter().map(|&p| ade(d, &demos[p])).fold(f64::INFINITY, f64::min))
        .collect();
    let best = score.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    for (i, &s) in score.iter().enumerate() {
        if s == best {
            let mut next = picked.clone();
            next.push(i);
            extend(demos, next, n, out);
        }
    }
}
