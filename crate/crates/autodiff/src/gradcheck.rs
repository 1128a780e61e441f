//! Central finite differences against reverse-mode gradients.

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;

/// Per-parameter comparison.
#[derive(Clone, Debug)]
pub struct GradCheckEntry {
    pub name: String,
    pub rel_error: f64,
    pub ad_norm: f64,
    pub fd_norm: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.entries.iter().map(|e| e.rel_error).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&GradCheckEntry> {
        self.entries.iter().max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }
}

/// Compares reverse-mode gradients of the scalar built by `f` against central
/// differences with step `eps`, for every trainable parameter tensor.
///
/// The error of one parameter tensor is `|g_ad - g_fd| / max(|g_ad|, |g_fd|, 1e-8)`
/// with Euclidean norms over the tensor's elements; the report's maximum is
/// taken over tensors.
pub fn grad_check<T, F>(store: &mut ParamStore<T>, eps: f64, f: F) -> Result<GradCheckReport>
where
    T: Scalar,
    F: Fn(&mut Graph<T>, &ParamStore<T>) -> Result<Var>,
{
    let mut g = Graph::new();
    let root = f(&mut g, store)?;
    let grads = g.backward(root)?;

    let eval = |store: &ParamStore<T>| -> Result<f64> {
        let mut g = Graph::new();
        let v = f(&mut g, store)?;
        Ok(g.value(v).item().as_f64())
    };

    let ids: Vec<ParamId> = store.ids().collect();
    let mut entries = Vec::new();
    for id in ids {
        if !store.entry(id).trainable {
            continue;
        }
        let n = store.value(id).numel();
        let mut diff2 = 0.0;
        let mut ad2 = 0.0;
        let mut fd2 = 0.0;
        for j in 0..n {
            let orig = store.value(id).data()[j];
            store.value_mut(id).data_mut()[j] = T::of(orig.as_f64() + eps);
            let plus = eval(store)?;
            store.value_mut(id).data_mut()[j] = T::of(orig.as_f64() - eps);
            let minus = eval(store)?;
            store.value_mut(id).data_mut()[j] = orig;
            let fd = (plus - minus) / (2.0 * eps);
            let ad = grads.get(id).map_or(0.0, |t| t.data()[j].as_f64());
            diff2 += (ad - fd) * (ad - fd);
            ad2 += ad * ad;
            fd2 += fd * fd;
        }
        let (diff, ad_norm, fd_norm) = (diff2.sqrt(), ad2.sqrt(), fd2.sqrt());
        entries.push(GradCheckEntry {
            name: store.name(id).to_string(),
            rel_error: diff / ad_norm.max(fd_norm).max(1e-8),
            ad_norm,
            fd_norm,
        });
    }
    Ok(GradCheckReport { entries })
}
