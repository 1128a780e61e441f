//! Action distributions, the distribution and conflict losses, training, and
//! inference-time action selection.

use autodiff::{Adam, Graph, Scalar, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    ade_unchecked, agent_conflict_within, boundary_conflict_samples, sample_poses, segments_intersect, ConflictParams,
    Pose2, Trajectory, Vec2,
};
use crate::model::{PlannerModel, PreparedVocab};
use crate::scenario::{SignalState, TrafficKind};
use crate::scene::{scene_features, SceneFeatures, SceneSnapshot};
use crate::vocabulary::{encode_action_f32, PlanningVocabulary};

/// Normalized probabilities over the vocabulary, optionally followed by the
/// appended ground-truth action.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionDistribution {
    pub probs: Vec<f64>,
    pub index_of_gt: Option<usize>,
}

impl ActionDistribution {
    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Index of the largest probability, lowest index on ties.
    pub fn argmax(&self) -> usize {
        argmax(&self.probs)
    }

    /// Indices of the `k` most probable entries, ties by lowest index.
    pub fn top_k(&self, k: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.probs.len()).collect();
        idx.sort_by(|&a, &b| self.probs[b].total_cmp(&self.probs[a]).then(a.cmp(&b)));
        idx.truncate(k);
        idx
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Softmax over logits computed in `f64`.
pub fn action_distribution<T: Scalar>(logits: &[T]) -> ActionDistribution {
    let max = logits.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v.as_f64() - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    ActionDistribution {
        probs: exps.into_iter().map(|e| e / z).collect(),
        index_of_gt: None,
    }
}

/// Soft target over the `N` vocabulary actions plus the appended ground truth:
/// `p(a_i) ~ exp(-ADE(a_i, gt)^2 / tau^2)`.
pub fn build_target_distribution(vocab: &PlanningVocabulary, gt: &Trajectory, tau: f64) -> Result<ActionDistribution> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::Config(format!("tau must be positive, got {tau}")));
    }
    vocab.check_horizon(gt.horizon())?;
    let mut logw: Vec<f64> = vocab
        .actions()
        .iter()
        .map(|a| {
            let d = ade_unchecked(&a.points, &gt.points);
            -(d * d) / (tau * tau)
        })
        .collect();
    logw.push(0.0);
    let z: f64 = logw.iter().map(|l| l.exp()).sum();
    Ok(ActionDistribution {
        probs: logw.iter().map(|l| l.exp() / z).collect(),
        index_of_gt: Some(vocab.len()),
    })
}

/// `KL(target || pred)`, with `0 ln 0 = 0`.
pub fn distribution_loss(pred: &ActionDistribution, target: &ActionDistribution) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::Validation(format!(
            "distribution lengths differ: {} vs {}",
            pred.len(),
            target.len()
        )));
    }
    Ok(pred
        .probs
        .iter()
        .zip(&target.probs)
        .filter(|(_, &q)| q > 0.0)
        .map(|(&p, &q)| q * (q.ln() - p.ln()))
        .sum())
}

/// `lambda * sum of predicted mass on masked actions`. `mask` covers the
/// vocabulary entries; an appended ground-truth entry must stay unmasked.
pub fn conflict_loss(pred: &ActionDistribution, mask: &[bool], lambda: f64) -> Result<f64> {
    if let Some(g) = pred.index_of_gt {
        if mask.get(g).copied().unwrap_or(false) {
            return Err(Error::Internal("ground-truth entry is masked".into()));
        }
    }
    let n_vocab = pred.index_of_gt.unwrap_or(pred.len());
    if mask.len() != n_vocab && mask.len() != pred.len() {
        return Err(Error::Validation(format!(
            "mask length {} does not match {} actions",
            mask.len(),
            n_vocab
        )));
    }
    Ok(lambda
        * pred
            .probs
            .iter()
            .zip(mask)
            .filter(|(_, &m)| m)
            .map(|(p, _)| p)
            .sum::<f64>())
}

/// Precomputed per-action sample poses for repeated conflict queries.
#[derive(Clone, Debug)]
pub struct ConflictChecker {
    samples: Vec<Vec<(Pose2, f64)>>,
    pub params: ConflictParams,
}

impl ConflictChecker {
    pub fn new(vocab: &PlanningVocabulary, params: ConflictParams) -> Self {
        Self {
            samples: vocab.actions().iter().map(sample_poses).collect(),
            params,
        }
    }

    pub fn mask(&self, s: &SceneSnapshot) -> Vec<bool> {
        let boundaries = s.boundaries();
        let ego_fp = s.ego_footprint.inflate(self.params.inflation);
        let agents: Vec<_> = s
            .agents
            .iter()
            .map(|a| (a.footprint.inflate(self.params.inflation), &a.future))
            .collect();
        self.samples
            .iter()
            .map(|smp| {
                agents
                    .iter()
                    .any(|(fp, fut)| agent_conflict_within(smp, &ego_fp, fut, fp, f64::INFINITY))
                    || boundary_conflict_samples(smp, &ego_fp, &boundaries)
            })
            .collect()
    }
}

/// Whether each vocabulary action conflicts with an agent future or a road
/// boundary in the snapshot.
pub fn conflict_mask(vocab: &PlanningVocabulary, s: &SceneSnapshot) -> Vec<bool> {
    ConflictChecker::new(vocab, ConflictParams::default()).mask(s)
}

pub fn trajectory_conflicts(t: &Trajectory, s: &SceneSnapshot, params: ConflictParams) -> bool {
    let smp = sample_poses(t);
    let ego_fp = s.ego_footprint.inflate(params.inflation);
    s.agents.iter().any(|a| {
        agent_conflict_within(
            &smp,
            &ego_fp,
            &a.future,
            &a.footprint.inflate(params.inflation),
            f64::INFINITY,
        )
    }) || boundary_conflict_samples(&smp, &ego_fp, &s.boundaries())
}

/// Front-bumper path of a plan, starting from the current front bumper.
fn front_path(t: &Trajectory, length: f64) -> Vec<Vec2> {
    let half = length / 2.0;
    let mut out = Vec::with_capacity(t.horizon() + 1);
    out.push(Vec2::new(half, 0.0));
    for p in t.poses() {
        out.push(p.position + Vec2::from_angle(p.heading) * half);
    }
    out
}

/// Whether the plan runs an affecting red light, or crosses an affecting stop
/// sign's line while moving.
pub fn violates_traffic_rules(t: &Trajectory, s: &SceneSnapshot) -> bool {
    let path = front_path(t, s.ego_footprint.length);
    s.traffic_elements.iter().filter(|e| e.affects_ego).any(|e| {
        let [a, b] = e.stop_line;
        path.windows(2).any(|w| {
            if !segments_intersect(w[0], w[1], a, b) {
                return false;
            }
            match (e.kind, e.state) {
                (TrafficKind::TrafficLight, SignalState::Red) => true,
                (TrafficKind::StopSign, _) => w[0].dist(w[1]) / s.dt_wp > 0.1,
                _ => false,
            }
        })
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub index: usize,
    pub argmax_index: usize,
    pub topk: Vec<usize>,
}

pub fn select_action_argmax<'v>(dist: &ActionDistribution, vocab: &'v PlanningVocabulary) -> &'v Trajectory {
    vocab.action(dist.argmax())
}

/// Top-K proposals filtered by the conflict mask and traffic rules; the best
/// survivor wins. With no survivor the stop action is used, unless it is
/// itself masked, in which case the most probable unmasked, rule-abiding
/// action of the full vocabulary is taken.
pub fn select_topk_with_rules(
    dist: &ActionDistribution,
    vocab: &PlanningVocabulary,
    s: &SceneSnapshot,
    k: usize,
    checker: &ConflictChecker,
) -> Selection {
    let k = k.max(1);
    let mask = checker.mask(s);
    let ok = |i: usize| !mask[i] && !violates_traffic_rules(vocab.action(i), s);
    let topk = dist.top_k(k);
    let argmax_index = dist.argmax();
    let index = match topk.iter().copied().find(|&i| ok(i)) {
        Some(i) => i,
        None => {
            let stop = vocab.stop_index();
            if !mask[stop] {
                stop
            } else {
                dist.top_k(dist.len()).into_iter().find(|&i| ok(i)).unwrap_or(stop)
            }
        }
    };
    Selection {
        index,
        argmax_index,
        topk,
    }
}

/// Deterministic regression baseline: the mean of the demonstrated
/// trajectories.
pub fn regression_baseline(demos: &[Trajectory]) -> Result<Trajectory> {
    Trajectory::mean(demos)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub tau: f64,
    pub lambda_conflict: f64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub steps: u64,
    /// Batch sampling seed; run configs supply it from their top-level seed.
    #[serde(skip)]
    pub seed: u64,
    pub use_dist_loss: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            tau: 0.5,
            lambda_conflict: 5.0,
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 32,
            steps: 20_000,
            seed: 0,
            use_dist_loss: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!("tau must be > 0, got {}", self.tau)));
        }
        if !(self.lambda_conflict >= 0.0 && self.lambda_conflict.is_finite()) {
            return Err(Error::Config(format!(
                "lambda_conflict must be >= 0, got {}",
                self.lambda_conflict
            )));
        }
        if !(self.lr > 0.0 && self.eps > 0.0 && (0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return Err(Error::Config("invalid optimizer settings".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        Ok(())
    }

    pub fn adam(&self) -> Adam {
        Adam {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }
}

/// One training example with everything that does not depend on parameters
/// precomputed.
#[derive(Clone, Debug)]
pub struct TrainFrame {
    pub id: String,
    pub features: SceneFeatures,
    pub gt_encoding: Vec<f32>,
    /// Soft target over `N + 1` entries.
    pub target: Vec<f64>,
    pub mask: Vec<bool>,
}

impl TrainFrame {
    pub fn new(
        id: String,
        snapshot: &SceneSnapshot,
        gt: &Trajectory,
        vocab: &PlanningVocabulary,
        checker: &ConflictChecker,
        tau: f64,
    ) -> Result<Self> {
        snapshot.validate()?;
        let target = build_target_distribution(vocab, gt, tau)?.probs;
        Ok(Self {
            id,
            features: scene_features(snapshot),
            gt_encoding: encode_action_f32(gt, vocab.bands()),
            target,
            mask: checker.mask(snapshot),
        })
    }

    pub fn masked_fraction(&self) -> f64 {
        self.mask.iter().filter(|&&m| m).count() as f64 / self.mask.len() as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub step: u64,
    pub loss_total: f64,
    pub loss_dist: f64,
    pub loss_conflict: f64,
    pub grad_norm: f64,
}

struct FrameLoss {
    total: Var,
    dist: Var,
    conflict: Var,
}

fn frame_loss<T: Scalar>(
    g: &mut Graph<T>,
    model: &PlannerModel<T>,
    vocab_tokens: Var,
    frame: &TrainFrame,
    cfg: &TrainConfig,
) -> Result<FrameLoss> {
    let n1 = frame.target.len();
    let gt_row = model.normalize_rows(&frame.gt_encoding, 1)?;
    let gt_token = model.project(g, gt_row)?;
    let planning = g.concat_rows(&[vocab_tokens, gt_token])?;
    let env = model.embed(g, &frame.features)?;
    let logits = model.logits(g, planning, &env)?;

    let logp = g.log_softmax_rows(logits)?;
    let neg_entropy: f64 = frame.target.iter().filter(|&&q| q > 0.0).map(|&q| q * q.ln()).sum();
    let target = Tensor::new(&[1, n1], frame.target.iter().map(|&q| T::of(q)).collect())?;
    let cross = g.dot_const(logp, target)?;
    let cross = g.scale(cross, -T::one())?;
    let dist = g.add_const(cross, T::of(neg_entropy))?;

    let probs = g.softmax_rows(logits)?;
    let weights: Vec<T> = frame
        .mask
        .iter()
        .map(|&m| if m { T::of(cfg.lambda_conflict) } else { T::zero() })
        .chain(std::iter::once(T::zero()))
        .collect();
    let conflict = g.dot_const(probs, Tensor::new(&[1, n1], weights)?)?;

    let total = if cfg.use_dist_loss {
        g.add(dist, conflict)?
    } else {
        conflict
    };
    Ok(FrameLoss { total, dist, conflict })
}

/// Builds the batch-mean loss graph. Returns the root and per-term means.
pub fn batch_loss<T: Scalar>(
    g: &mut Graph<T>,
    model: &PlannerModel<T>,
    vocab: &PreparedVocab<T>,
    batch: &[&TrainFrame],
    cfg: &TrainConfig,
) -> Result<(Var, f64, f64)> {
    if batch.is_empty() {
        return Err(Error::Validation("empty training batch".into()));
    }
    let vocab_tokens = model.project(g, vocab.encodings.clone())?;
    let mut acc: Option<Var> = None;
    let (mut dist_sum, mut conf_sum) = (0.0, 0.0);
    for frame in batch {
        if frame.target.len() != vocab.len() + 1 || frame.mask.len() != vocab.len() {
            return Err(Error::Internal(format!(
                "frame {} was prepared for another vocabulary",
                frame.id
            )));
        }
        let fl = frame_loss(g, model, vocab_tokens, frame, cfg).map_err(|e| match e {
            Error::Net(autodiff::NetError::NonFinite { .. }) => Error::NonFiniteLoss {
                frame: frame.id.clone(),
            },
            other => other,
        })?;
        let (d, c) = (g.value(fl.dist).item().as_f64(), g.value(fl.conflict).item().as_f64());
        if !(d.is_finite() && c.is_finite()) {
            return Err(Error::NonFiniteLoss {
                frame: frame.id.clone(),
            });
        }
        dist_sum += d;
        conf_sum += c;
        acc = Some(match acc {
            None => fl.total,
            Some(a) => g.add(a, fl.total)?,
        });
    }
    let b = batch.len() as f64;
    let root = g.scale(acc.expect("nonempty batch"), T::of(1.0 / b))?;
    Ok((root, dist_sum / b, conf_sum / b))
}

/// Mean loss over `batch`, one Adam update.
pub fn train_step<T: Scalar>(
    model: &mut PlannerModel<T>,
    vocab: &PreparedVocab<T>,
    batch: &[&TrainFrame],
    cfg: &TrainConfig,
) -> Result<LossReport> {
    let mut g = Graph::new();
    let (root, dist, conflict) = batch_loss(&mut g, model, vocab, batch, cfg)?;
    let total = g.value(root).item().as_f64();
    let grads = g.backward(root).map_err(|e| match e {
        autodiff::NetError::NonFinite { .. } => Error::NonFiniteLoss {
            frame: batch.iter().map(|f| f.id.as_str()).collect::<Vec<_>>().join(","),
        },
        other => Error::Net(other),
    })?;
    let grad_norm = grads.global_norm();
    cfg.adam().step(&mut model.store, &grads.into_vec())?;
    Ok(LossReport {
        step: model.store.step,
        loss_total: total,
        loss_dist: dist,
        loss_conflict: conflict,
        grad_norm,
    })
}

/// Batch indices for optimizer step `step` (1-based), drawn with replacement
/// from a stream keyed by `(seed, step)` so resumed runs see the same batches.
pub fn batch_indices(seed: u64, step: u64, n_frames: usize, batch_size: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step);
    if batch_size >= n_frames {
        return (0..n_frames).collect();
    }
    (0..batch_size).map(|_| rng.gen_range(0..n_frames)).collect()
}

/// Runs optimizer steps until the store's step counter reaches `cfg.steps`,
/// calling `report` after each step. `stop` may end training early.
pub fn train<T: Scalar>(
    model: &mut PlannerModel<T>,
    vocab: &PreparedVocab<T>,
    frames: &[TrainFrame],
    cfg: &TrainConfig,
    mut report: impl FnMut(&LossReport, &PlannerModel<T>) -> Result<bool>,
) -> Result<()> {
    cfg.validate()?;
    if frames.is_empty() {
        return Err(Error::Validation("no training frames".into()));
    }
    while model.store.step < cfg.steps {
        let idx = batch_indices(cfg.seed, model.store.step + 1, frames.len(), cfg.batch_size);
        let batch: Vec<&TrainFrame> = idx.iter().map(|&i| &frames[i]).collect();
        let r = train_step(model, vocab, &batch, cfg)?;
        if !report(&r, model)? {
            break;
        }
    }
    Ok(())
}

/// Predicted distribution over the vocabulary for one snapshot.
pub fn predict<T: Scalar>(
    model: &PlannerModel<T>,
    vocab: &PreparedVocab<T>,
    snapshot: &SceneSnapshot,
) -> Result<ActionDistribution> {
    Ok(action_distribution(&model.score_actions(vocab, snapshot)?))
}
