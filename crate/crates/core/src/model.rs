//! The scoring network: planning tokens attend over scene tokens, navigation
//! and ego-state embeddings are added, and a perceptron head emits one logit
//! per candidate action.

use autodiff::{DecoderStack, Graph, Linear, ParamId, ParamStore, Perceptron, Scalar, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{scene_features, Ablation, EnvTokenSet, EnvVars, SceneEmbedder, SceneFeatures, SceneSnapshot};
use crate::vocabulary::{encoding_width, PlanningVocabulary};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub dim: usize,
    pub heads: usize,
    pub depth: usize,
    pub ff: usize,
    pub horizon: usize,
    pub bands: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dim: 128,
            heads: 4,
            depth: 3,
            ff: 256,
            horizon: 6,
            bands: 8,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.heads == 0 || self.ff == 0 || self.horizon == 0 || self.bands == 0 {
            return Err(Error::Config(format!("model sizes must be positive: {self:?}")));
        }
        if self.dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "model width {} is not divisible by {} heads",
                self.dim, self.heads
            )));
        }
        Ok(())
    }

    pub fn encoding_width(&self) -> usize {
        encoding_width(self.horizon, self.bands)
    }
}

/// Normalized vocabulary encodings ready to be fed to the input projection.
#[derive(Clone, Debug)]
pub struct PreparedVocab<T> {
    pub encodings: Tensor<T>,
}

impl<T: Scalar> PreparedVocab<T> {
    pub fn len(&self) -> usize {
        self.encodings.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug)]
pub struct PlannerModel<T> {
    pub config: ModelConfig,
    pub store: ParamStore<T>,
    pub ablation: Ablation,
    embedder: SceneEmbedder,
    input: Linear,
    decoder: DecoderStack,
    head: Perceptron,
    norm_mean: ParamId,
    norm_scale: ParamId,
}

pub const NORM_MEAN: &str = "input.norm.mean";
pub const NORM_SCALE: &str = "input.norm.scale";

impl<T: Scalar> PlannerModel<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let w = config.encoding_width();
        let norm_mean = store.insert(NORM_MEAN, Tensor::zeros(&[w]), false)?;
        let norm_scale = store.insert(NORM_SCALE, Tensor::full(&[w], T::one()), false)?;
        let embedder = SceneEmbedder::new(&mut store, config.dim, config.horizon, &mut rng)?;
        let input = Linear::new(&mut store, "input.proj", w, config.dim, true, &mut rng)?;
        let decoder = DecoderStack::new(
            &mut store,
            "decoder",
            config.depth,
            config.dim,
            config.heads,
            config.ff,
            &mut rng,
        )?;
        let head = Perceptron::new(&mut store, "head", (config.dim, config.dim, 1), false, &mut rng)?;
        Ok(Self {
            config,
            store,
            ablation: Ablation::default(),
            embedder,
            input,
            decoder,
            head,
            norm_mean,
            norm_scale,
        })
    }

    pub fn with_ablation(mut self, ablation: Ablation) -> Self {
        self.ablation = ablation;
        self
    }

    pub fn embedder(&self) -> &SceneEmbedder {
        &self.embedder
    }

    pub fn head(&self) -> &Perceptron {
        &self.head
    }

    /// Sets the fixed per-feature standardization of action encodings from
    /// the statistics of `vocab`. Features with (numerically) constant value
    /// get scale 0.
    pub fn fit_input_normalizer(&mut self, vocab: &PlanningVocabulary) -> Result<()> {
        self.check_vocab(vocab)?;
        let w = vocab.encoding_width();
        let n = vocab.len() as f64;
        let mut mean = vec![0.0f64; w];
        for i in 0..vocab.len() {
            for (m, &v) in mean.iter_mut().zip(vocab.encoding(i)) {
                *m += v as f64;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0f64; w];
        for i in 0..vocab.len() {
            for ((s, &v), m) in var.iter_mut().zip(vocab.encoding(i)).zip(&mean) {
                *s += (v as f64 - m).powi(2);
            }
        }
        let scale: Vec<T> = var
            .iter()
            .zip(&mean)
            .map(|(s, m)| {
                let std = (s / n).sqrt();
                if std > 0.0 && std > 1e-5 * m.abs() {
                    T::of(1.0 / std)
                } else {
                    T::zero()
                }
            })
            .collect();
        *self.store.value_mut(self.norm_mean) = Tensor::new(&[w], mean.into_iter().map(T::of).collect())?;
        *self.store.value_mut(self.norm_scale) = Tensor::new(&[w], scale)?;
        Ok(())
    }

    pub fn check_vocab(&self, vocab: &PlanningVocabulary) -> Result<()> {
        vocab.check_horizon(self.config.horizon)?;
        if vocab.bands() != self.config.bands {
            return Err(Error::Config(format!(
                "vocabulary uses L={} bands, model expects L={}",
                vocab.bands(),
                self.config.bands
            )));
        }
        Ok(())
    }

    /// Standardizes raw `f32` encoding rows.
    pub fn normalize_rows(&self, rows: &[f32], n: usize) -> Result<Tensor<T>> {
        let w = self.config.encoding_width();
        if rows.len() != n * w {
            return Err(Error::Internal(format!(
                "expected {n}x{w} encodings, got {} values",
                rows.len()
            )));
        }
        let mean = self.store.value(self.norm_mean).data();
        let scale = self.store.value(self.norm_scale).data();
        let data = rows
            .chunks_exact(w)
            .flat_map(|r| {
                r.iter()
                    .zip(mean)
                    .zip(scale)
                    .map(|((&v, &m), &s)| (T::of(v as f64) - m) * s)
            })
            .collect();
        Ok(Tensor::new(&[n, w], data)?)
    }

    pub fn prepare(&self, vocab: &PlanningVocabulary) -> Result<PreparedVocab<T>> {
        self.check_vocab(vocab)?;
        Ok(PreparedVocab {
            encodings: self.normalize_rows(vocab.encodings(), vocab.len())?,
        })
    }

    /// Projects normalized encodings `[n, 4TL]` to planning tokens `[n, d]`.
    pub fn project(&self, g: &mut Graph<T>, normalized: Tensor<T>) -> Result<Var> {
        let x = g.constant(normalized)?;
        Ok(self.input.forward(g, &self.store, x)?)
    }

    pub fn embed(&self, g: &mut Graph<T>, features: &SceneFeatures) -> Result<EnvVars> {
        self.embedder.forward(g, &self.store, features, &self.ablation)
    }

    /// Logits `[1, n]` for planning tokens `[n, d]`.
    pub fn logits(&self, g: &mut Graph<T>, planning: Var, env: &EnvVars) -> Result<Var> {
        let n = g.shape(planning)[0];
        let mut h = self.decoder.forward(g, &self.store, planning, env.env)?;
        if let Some(navi) = env.navi {
            h = g.add_row(h, navi)?;
        }
        if let Some(state) = env.state {
            h = g.add_row(h, state)?;
        }
        let out = self.head.forward(g, &self.store, h)?;
        Ok(g.reshape(out, &[1, n])?)
    }

    /// One logit per vocabulary action for a snapshot.
    pub fn score_actions(&self, vocab: &PreparedVocab<T>, snapshot: &SceneSnapshot) -> Result<Vec<T>> {
        let mut g = Graph::new();
        let planning = self.project(&mut g, vocab.encodings.clone())?;
        let env = self.embed(&mut g, &scene_features(snapshot))?;
        let logits = self.logits(&mut g, planning, &env)?;
        Ok(g.value(logits).data().to_vec())
    }

    /// Scores actions against an already embedded token set.
    pub fn score_with_tokens(&self, vocab: &PreparedVocab<T>, tokens: &EnvTokenSet<T>) -> Result<Vec<T>> {
        let d = self.config.dim;
        if tokens.env_tokens.cols() != d || tokens.navi_embedding.numel() != d || tokens.state_embedding.numel() != d {
            return Err(Error::Net(autodiff::NetError::Shape {
                op: "score_with_tokens",
                lhs: vec![d],
                rhs: tokens.env_tokens.shape().to_vec(),
            }));
        }
        let mut g = Graph::new();
        let planning = self.project(&mut g, vocab.encodings.clone())?;
        let env = EnvVars {
            env: g.constant(tokens.env_tokens.clone())?,
            navi: (!self.ablation.no_navi)
                .then(|| g.constant(tokens.navi_embedding.clone()))
                .transpose()?,
            state: (!self.ablation.no_state)
                .then(|| g.constant(tokens.state_embedding.clone()))
                .transpose()?,
        };
        let logits = self.logits(&mut g, planning, &env)?;
        Ok(g.value(logits).data().to_vec())
    }

    /// Same architecture and parameter values at another precision.
    pub fn cast<U: Scalar>(&self) -> PlannerModel<U> {
        PlannerModel {
            config: self.config,
            store: self.store.cast(),
            ablation: self.ablation,
            embedder: self.embedder.clone(),
            input: self.input.clone(),
            decoder: self.decoder.clone(),
            head: self.head.clone(),
            norm_mean: self.norm_mean,
            norm_scale: self.norm_scale,
        }
    }
}
