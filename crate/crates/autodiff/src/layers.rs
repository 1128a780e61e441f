//! Parameterized building blocks. Each layer only holds [`ParamId`]s; values
//! live in a [`ParamStore`] so one layer description can drive stores of
//! different precision.

use rand::Rng;

use crate::error::{NetError, Result};
use crate::graph::{Graph, Var};
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// `y = x W + b`, weights initialized uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)).
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        with_bias: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let weight = store.insert_uniform(&format!("{name}.weight"), &[in_dim, out_dim], bound, rng)?;
        let bias = if with_bias {
            Some(store.insert_uniform(&format!("{name}.bias"), &[out_dim], bound, rng)?)
        } else {
            None
        };
        Ok(Self {
            weight,
            bias,
            in_dim,
            out_dim,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight)?;
        let y = g.matmul(x, w)?;
        match self.bias {
            Some(b) => {
                let b = g.param(store, b)?;
                g.add_row(y, b)
            }
            None => Ok(y),
        }
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, dim: usize) -> Result<Self> {
        let gain = store.insert(&format!("{name}.gain"), Tensor::full(&[dim], T::one()), true)?;
        let bias = store.insert(&format!("{name}.bias"), Tensor::zeros(&[dim]), true)?;
        Ok(Self { gain, bias })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let gain = g.param(store, self.gain)?;
        let bias = g.param(store, self.bias)?;
        g.layer_norm(x, gain, bias)
    }
}

/// Two-layer perceptron `fc2(gelu(fc1(x)))`.
#[derive(Clone, Debug)]
pub struct Perceptron {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Perceptron {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        dims: (usize, usize, usize),
        out_bias: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let (i, h, o) = dims;
        Ok(Self {
            fc1: Linear::new(store, &format!("{name}.fc1"), i, h, true, rng)?,
            fc2: Linear::new(store, &format!("{name}.fc2"), h, o, out_bias, rng)?,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let h = self.fc1.forward(g, store, x)?;
        let h = g.gelu(h)?;
        self.fc2.forward(g, store, h)
    }
}

/// Multi-head scaled dot-product attention from query tokens onto a separate
/// key/value token set.
///
/// The key projection carries no bias: a shared key offset shifts every score
/// of a query by the same amount and cancels in the softmax.
#[derive(Clone, Debug)]
pub struct CrossAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
    pub dim: usize,
}

impl CrossAttention {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        dim: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(NetError::Invalid(format!(
                "model width {dim} not divisible by {heads} heads"
            )));
        }
        Ok(Self {
            q: Linear::new(store, &format!("{name}.q"), dim, dim, true, rng)?,
            k: Linear::new(store, &format!("{name}.k"), dim, dim, false, rng)?,
            v: Linear::new(store, &format!("{name}.v"), dim, dim, true, rng)?,
            o: Linear::new(store, &format!("{name}.o"), dim, dim, true, rng)?,
            heads,
            dim,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, queries: Var, kv: Var) -> Result<Var> {
        for t in [queries, kv] {
            if g.value(t).cols() != self.dim {
                return Err(NetError::Shape {
                    op: "cross_attention",
                    lhs: g.shape(t).to_vec(),
                    rhs: vec![self.dim],
                });
            }
        }
        let q = self.q.forward(g, store, queries)?;
        let k = self.k.forward(g, store, kv)?;
        let v = self.v.forward(g, store, kv)?;
        let dh = self.dim / self.heads;
        let scale = T::of(1.0 / (dh as f64).sqrt());
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = g.slice_cols(q, h * dh, dh)?;
            let kh = g.slice_cols(k, h * dh, dh)?;
            let vh = g.slice_cols(v, h * dh, dh)?;
            let s = g.matmul_nt(qh, kh)?;
            let s = g.scale(s, scale)?;
            let p = g.softmax_rows(s)?;
            outs.push(g.matmul(p, vh)?);
        }
        let cat = if outs.len() == 1 {
            outs[0]
        } else {
            g.concat_cols(&outs)?
        };
        self.o.forward(g, store, cat)
    }
}

/// Post-norm decoder block: cross-attention, residual, norm, feed-forward,
/// residual, norm.
#[derive(Clone, Debug)]
pub struct DecoderLayer {
    pub attn: CrossAttention,
    pub norm1: LayerNorm,
    pub ff: Perceptron,
    pub norm2: LayerNorm,
}

impl DecoderLayer {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        dim: usize,
        heads: usize,
        ff_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            attn: CrossAttention::new(store, &format!("{name}.attn"), dim, heads, rng)?,
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), dim)?,
            ff: Perceptron::new(store, &format!("{name}.ff"), (dim, ff_dim, dim), true, rng)?,
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), dim)?,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var, kv: Var) -> Result<Var> {
        let a = self.attn.forward(g, store, x, kv)?;
        let x = g.add(x, a)?;
        let x = self.norm1.forward(g, store, x)?;
        let f = self.ff.forward(g, store, x)?;
        let x = g.add(x, f)?;
        self.norm2.forward(g, store, x)
    }
}

#[derive(Clone, Debug)]
pub struct DecoderStack {
    pub layers: Vec<DecoderLayer>,
}

impl DecoderStack {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        depth: usize,
        dim: usize,
        heads: usize,
        ff_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let layers = (0..depth)
            .map(|i| DecoderLayer::new(store, &format!("{name}.{i}"), dim, heads, ff_dim, rng))
            .collect::<Result<_>>()?;
        Ok(Self { layers })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var, kv: Var) -> Result<Var> {
        self.layers
            .iter()
            .try_fold(x, |x, layer| layer.forward(g, store, x, kv))
    }
}
