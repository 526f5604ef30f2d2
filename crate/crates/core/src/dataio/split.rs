use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Rng;

/// Disjoint train/valid/test id lists.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub train: Vec<String>,
    pub valid: Vec<String>,
    pub test: Vec<String>,
}

/// Shuffles `ids` with `seed` and cuts it by `ratios`.
///
/// Valid and test sizes are floored; the remainder goes to train.
pub fn split_dataset(ids: &[String], ratios: (f64, f64, f64), seed: u64) -> Result<SplitManifest> {
    let (rt, rv, rs) = ratios;
    if [rt, rv, rs].iter().any(|r| !(*r >= 0.0)) {
        return Err(Error::config(format!("split ratios must be >= 0, got {ratios:?}")));
    }
    if (rt + rv + rs - 1.0).abs() > 1e-9 {
        return Err(Error::config(format!("split ratios must sum to 1, got {ratios:?}")));
    }
    let mut ids = ids.to_vec();
    Rng::new(seed).shuffle(&mut ids);
    let n = ids.len() as f64;
    let n_valid = (n * rv).floor() as usize;
    let n_test = (n * rs).floor() as usize;
    let test = ids.split_off(ids.len() - n_test);
    let valid = ids.split_off(ids.len() - n_valid);
    Ok(SplitManifest {
        seed,
        train: ids,
        valid,
        test,
    })
}
