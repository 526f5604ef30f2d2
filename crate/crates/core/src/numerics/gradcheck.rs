//! Central finite-difference verification of tape gradients.

use crate::error::{Error, Result};
use crate::numerics::param::{ParamId, ParamStore};
use crate::numerics::tape::{Tape, Var};

/// Outcome of a gradient check.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// `max |analytic − numeric| / max(1, |analytic|, |numeric|)`.
    pub max_relative_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub entries_checked: usize,
}

#[derive(Clone, Debug)]
pub struct GradCheck {
    pub eps: f64,
    /// Check at most this many evenly strided entries per parameter.
    pub max_entries_per_param: Option<usize>,
    /// Restrict to these parameters (all when `None`).
    pub params: Option<Vec<ParamId>>,
}

impl Default for GradCheck {
    fn default() -> Self {
        GradCheck {
            eps: 1e-5,
            max_entries_per_param: None,
            params: None,
        }
    }
}

fn eval<F>(store: &ParamStore, f: &mut F) -> Result<f64>
where
    F: FnMut(&ParamStore, &mut Tape) -> Result<Var>,
{
    let mut tape = Tape::new();
    let out = f(store, &mut tape)?;
    let v = tape.value(out);
    if v.len() != 1 {
        return Err(Error::contract("gradient check needs a scalar function"));
    }
    let v = v.data()[0];
    if !v.is_finite() {
        return Err(Error::NonFinite(format!("checked function returned {v}")));
    }
    Ok(v)
}

impl GradCheck {
    pub fn with_eps(eps: f64) -> Self {
        GradCheck {
            eps,
            ..Self::default()
        }
    }

    pub fn run<F>(&self, store: &mut ParamStore, mut f: F) -> Result<GradCheckReport>
    where
        F: FnMut(&ParamStore, &mut Tape) -> Result<Var>,
    {
        let mut tape = Tape::new();
        let out = f(store, &mut tape)?;
        let v = tape.value(out);
        if v.len() != 1 {
            return Err(Error::contract("gradient check needs a scalar function"));
        }
        v.check_finite("checked function")?;
        let grads = tape.backward(out)?;
        let analytic: std::collections::HashMap<ParamId, Vec<f64>> =
            grads.params().map(|(id, g)| (id, g.to_vec())).collect();
        drop(tape);

        let ids: Vec<ParamId> = match &self.params {
            Some(ids) => ids.clone(),
            None => store.ids().collect(),
        };
        let mut report = GradCheckReport {
            max_relative_error: 0.0,
            worst_param: String::new(),
            worst_index: 0,
            entries_checked: 0,
        };
        for id in ids {
            let n = store.get(id).numel();
            let stride = match self.max_entries_per_param {
                Some(k) if k > 0 && n > k => n.div_ceil(k),
                _ => 1,
            };
            for i in (0..n).step_by(stride) {
                let orig = store.get(id).value.data()[i];
                store.get_mut(id).value.data_mut()[i] = orig + self.eps;
                let plus = eval(store, &mut f);
                store.get_mut(id).value.data_mut()[i] = orig - self.eps;
                let minus = eval(store, &mut f);
                store.get_mut(id).value.data_mut()[i] = orig;
                let numeric = (plus? - minus?) / (2.0 * self.eps);
                let a = analytic.get(&id).map_or(0.0, |g| g[i]);
                let err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
                report.entries_checked += 1;
                if err > report.max_relative_error || report.worst_param.is_empty() {
                    report.max_relative_error = err;
                    report.worst_param = store.get(id).name.clone();
                    report.worst_index = i;
                }
            }
        }
        Ok(report)
    }
}

/// Convenience wrapper: maximum relative error over every parameter entry.
pub fn grad_check<F>(store: &mut ParamStore, eps: f64, f: F) -> Result<f64>
where
    F: FnMut(&ParamStore, &mut Tape) -> Result<Var>,
{
    Ok(GradCheck::with_eps(eps).run(store, f)?.max_relative_error)
}
