//! Minimal deterministic reverse-mode autodiff over dense tensors.
//!
//! Everything is generic over [`Scalar`] (`f32` for training, `f64` for
//! gradient checks). A [`Graph`] records one forward pass; parameters live in
//! a [`ParamStore`] that also carries Adam moments.
//!
//! ```
//! use autodiff::{Graph, ParamStore, Tensor};
//!
//! let mut store = ParamStore::<f64>::new();
//! let w = store.insert("w", Tensor::scalar(3.0), true).unwrap();
//! let mut g = Graph::new();
//! let wv = g.param(&store, w).unwrap();
//! let y = g.mul(wv, wv).unwrap();
//! let grads = g.backward(y).unwrap();
//! assert_eq!(grads.get(w).unwrap().item(), 6.0);
//! ```

pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod kernels;
pub mod layers;
pub mod optim;
pub mod params;
pub mod records;
pub mod scalar;
pub mod tensor;

pub use error::{NetError, Result};
pub use gradcheck::{grad_check, GradCheckReport};
pub use graph::{Gradients, Graph, Var};
pub use layers::{CrossAttention, DecoderLayer, DecoderStack, LayerNorm, Linear, Perceptron};
pub use optim::Adam;
pub use params::{ParamEntry, ParamId, ParamStore};
pub use scalar::Scalar;
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Graph32 = Graph<f32>;
pub type Graph64 = Graph<f64>;
pub type ParamStore32 = ParamStore<f32>;
pub type ParamStore64 = ParamStore<f64>;
