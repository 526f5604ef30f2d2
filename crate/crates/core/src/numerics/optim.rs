use crate::error::{Error, Result};
use crate::numerics::param::{ParamId, ParamStore};

/// AdamW with decoupled weight decay.
///
/// Per parameter: `m ← β1·m + (1−β1)·g`, `v ← β2·v + (1−β2)·g²`, then with
/// bias-corrected `m̂`, `v̂`:
/// `θ ← θ − lr·m̂/(√v̂ + ε) − lr·λ·θ`, both terms evaluated at the old `θ`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        AdamW {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 5e-3,
        }
    }
}

impl AdamW {
    /// Update every parameter in `ids`. All of them must carry a gradient;
    /// nothing is modified otherwise.
    pub fn step(&self, store: &mut ParamStore, ids: &[ParamId]) -> Result<()> {
        for &id in ids {
            let p = store.get(id);
            if p.grad.is_none() {
                return Err(Error::contract(format!("parameter {} has no gradient", p.name)));
            }
        }
        for &id in ids {
            let p = store.get_mut(id);
            p.t += 1;
            let t = p.t as i32;
            let c1 = 1.0 - self.beta1.powi(t);
            let c2 = 1.0 - self.beta2.powi(t);
            let grad = p.grad.as_ref().expect("checked above").data();
            let (m, v) = (p.m.data_mut(), p.v.data_mut());
            for (i, theta) in p.value.data_mut().iter_mut().enumerate() {
                let g = grad[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                let old = *theta;
                *theta = old - self.lr * (mhat / (vhat.sqrt() + self.eps)) - self.lr * self.weight_decay * old;
            }
        }
        Ok(())
    }

    pub fn step_all(&self, store: &mut ParamStore) -> Result<()> {
        let ids: Vec<_> = store.ids().collect();
        self.step(store, &ids)
    }
}
