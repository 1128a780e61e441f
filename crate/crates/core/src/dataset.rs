//! Expert demonstrations recorded at the replan rate.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Trajectory;
use crate::persist::{read_file, write_atomic};
use crate::scenario::ScenarioSpec;
use crate::scene::SceneSnapshot;
use crate::sim::{simulate_episode_with, ControlCommand, ExpertParams, ExpertPolicy, PenaltyConfig, SimConfig};

pub const DATASET_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemoFrame {
    pub id: String,
    pub scenario: String,
    pub variant: String,
    pub seed: u64,
    pub tick: usize,
    pub split: Split,
    pub snapshot: SceneSnapshot,
    /// The expert's own future over the horizon, ego frame.
    pub expert: Trajectory,
    pub control: ControlCommand,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemoDataset {
    pub version: u32,
    pub horizon: usize,
    pub dt_wp: f64,
    pub tick_rate_hz: f64,
    /// Frames discarded because the expert committed an infraction soon after.
    pub dropped: usize,
    pub frames: Vec<DemoFrame>,
}

impl DemoDataset {
    pub fn validate(&self) -> Result<()> {
        if self.version != DATASET_VERSION {
            return Err(Error::Validation(format!(
                "dataset version {} (expected {DATASET_VERSION})",
                self.version
            )));
        }
        for f in &self.frames {
            if f.expert.horizon() != self.horizon || f.snapshot.horizon != self.horizon {
                return Err(Error::HorizonMismatch {
                    expected: self.horizon,
                    found: f.expert.horizon(),
                });
            }
            if f.snapshot.dt_wp != self.dt_wp {
                return Err(Error::Validation(format!(
                    "frame {} has dt_wp {}",
                    f.id, f.snapshot.dt_wp
                )));
            }
        }
        Ok(())
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &DemoFrame> {
        self.frames.iter().filter(move |f| f.split == split)
    }

    pub fn trajectories(&self) -> Vec<Trajectory> {
        self.frames.iter().map(|f| f.expert.clone()).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("dataset serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let d: Self = serde_path_to_error::deserialize(de).map_err(|e| Error::Parse(format!("dataset: {e}")))?;
        d.validate()?;
        Ok(d)
    }
}

pub fn save_dataset(d: &DemoDataset, path: &Path) -> Result<()> {
    write_atomic(path, d.to_json().as_bytes())
}

pub fn load_dataset(path: &Path) -> Result<DemoDataset> {
    let bytes = read_file(path)?;
    let text = std::str::from_utf8(&bytes).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    DemoDataset::from_json(text)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollectConfig {
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub val_seeds: Vec<u64>,
    #[serde(default)]
    pub expert: ExpertParams,
}

/// Frames from one expert episode, minus those whose horizon window contains
/// an expert infraction. Returns the kept frames and the drop count.
pub fn collect_episode(
    scenario: &Arc<ScenarioSpec>,
    variant_index: usize,
    seed: u64,
    split: Split,
    expert: ExpertParams,
    cfg: &SimConfig,
) -> Result<(Vec<DemoFrame>, usize)> {
    let variant = scenario.variants()[variant_index].clone();
    let mut policy = ExpertPolicy::new(variant.clone(), expert);
    let mut frames = Vec::new();
    let result = simulate_episode_with(
        scenario.clone(),
        &mut policy,
        cfg,
        &PenaltyConfig::default(),
        seed,
        &mut |view| {
            let tick = view.world.tick;
            frames.push(DemoFrame {
                id: format!("{}/{}/s{seed}/t{tick}", scenario.name, variant.name),
                scenario: scenario.name.clone(),
                variant: variant.name.clone(),
                seed,
                tick,
                split,
                snapshot: view.snapshot.clone(),
                expert: view.choice.trajectory.clone(),
                control: view.control,
            });
        },
    )?;
    let window = (cfg.horizon as f64 * cfg.dt_wp / cfg.dt).round() as usize;
    let before = frames.len();
    // Event ticks count steps taken, so an event at tick k happened while
    // moving from tick k - 1 to k.
    frames.retain(|f| {
        !result
            .events
            .iter()
            .any(|e| e.tick > f.tick && e.tick <= f.tick + window)
    });
    let dropped = before - frames.len();
    Ok((frames, dropped))
}

/// Runs the expert over every scenario, variant and seed, in that order.
pub fn collect(scenarios: &[ScenarioSpec], cc: &CollectConfig, cfg: &SimConfig) -> Result<DemoDataset> {
    if scenarios.is_empty() {
        return Err(Error::NoScenarios("the scenario list".into()));
    }
    if cc.seeds.is_empty() {
        return Err(Error::Config("collect.seeds is empty".into()));
    }
    if let Some(s) = cc.val_seeds.iter().find(|s| cc.seeds.contains(s)) {
        return Err(Error::Config(format!("seed {s} is both a train and a validation seed")));
    }
    cfg.validate()?;
    let mut frames = Vec::new();
    let mut dropped = 0;
    for spec in scenarios {
        let spec = Arc::new(spec.clone());
        for v in 0..spec.variants().len() {
            let seeds = cc
                .seeds
                .iter()
                .map(|&s| (s, Split::Train))
                .chain(cc.val_seeds.iter().map(|&s| (s, Split::Val)));
            for (seed, split) in seeds {
                let (f, d) = collect_episode(&spec, v, seed, split, cc.expert, cfg)?;
                frames.extend(f);
                dropped += d;
            }
        }
    }
    Ok(DemoDataset {
        version: DATASET_VERSION,
        horizon: cfg.horizon,
        dt_wp: cfg.dt_wp,
        tick_rate_hz: 1.0 / cfg.replan_period(),
        dropped,
        frames,
    })
}
