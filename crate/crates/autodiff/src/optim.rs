use crate::error::{NetError, Result};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Adam {
    /// One bias-corrected update. `grads` is indexed like the store; missing
    /// entries are treated as zero gradients.
    pub fn step<T: Scalar>(&self, store: &mut ParamStore<T>, grads: &[Option<Tensor<T>>]) -> Result<()> {
        for (i, g) in grads.iter().enumerate() {
            if let Some(g) = g {
                if i >= store.len() {
                    return Err(NetError::Invalid(format!("gradient for unknown parameter #{i}")));
                }
                let e = &store.entries()[i];
                if e.value.shape() != g.shape() {
                    return Err(NetError::Shape {
                        op: "adam_step",
                        lhs: e.value.shape().to_vec(),
                        rhs: g.shape().to_vec(),
                    });
                }
            }
        }
        store.step += 1;
        let t = store.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let (ob1, ob2) = (T::of(1.0 - self.beta1), T::of(1.0 - self.beta2));
        let step_size = T::of(self.lr / bc1);
        let inv_bc2 = T::of(1.0 / bc2);
        let eps = T::of(self.eps);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let e = store.entry_mut(id);
            if !e.trainable {
                continue;
            }
            let g = grads.get(id.index()).and_then(|g| g.as_ref());
            let n = e.value.numel();
            for j in 0..n {
                let gj = g.map_or(T::zero(), |g| g.data()[j]);
                let m = b1 * e.m.data()[j] + ob1 * gj;
                let v = b2 * e.v.data()[j] + ob2 * gj * gj;
                e.m.data_mut()[j] = m;
                e.v.data_mut()[j] = v;
                let upd = step_size * m / ((v * inv_bc2).sqrt() + eps);
                e.value.data_mut()[j] -= upd;
            }
        }
        Ok(())
    }
}
