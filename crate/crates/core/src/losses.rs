//! Segmentation objectives.
//!
//! Every loss is recorded on the tape as a fused scalar: the value and its
//! gradient with respect to the input node are computed together here.
//! Targets are flat `B·H·W` label buffers in the same pixel order as the
//! input tensor.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Tape, Var};

const LOG_CLAMP: f64 = 1e-12;

/// Focal-loss class weights and focusing exponent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FocalConfig {
    /// Weights for damage levels 1..4.
    pub alpha: [f64; 4],
    /// Background weight. Kept for configuration symmetry; the focal term
    /// is only evaluated on building pixels.
    pub alpha_bg: f64,
    pub gamma: f64,
}

impl Default for FocalConfig {
    fn default() -> Self {
        FocalConfig {
            alpha: [0.6, 1.6, 1.1, 1.1],
            alpha_bg: 0.6,
            gamma: 1.5,
        }
    }
}

impl FocalConfig {
    /// `γ = 0`, unit weights: the focal term reduces to cross-entropy.
    pub fn plain() -> Self {
        FocalConfig {
            alpha: [1.0; 4],
            alpha_bg: 1.0,
            gamma: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha.iter().chain([&self.alpha_bg]).any(|a| !(*a > 0.0) || !a.is_finite()) {
            return Err(Error::config(format!("focal alpha must be positive, got {:?}", self.alpha)));
        }
        if !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return Err(Error::config(format!("focal gamma must be >= 0, got {}", self.gamma)));
        }
        Ok(())
    }
}

/// Relative weights of the loss terms inside a head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub w_ce: f64,
    pub w_focal: f64,
    pub w_lovasz: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            w_ce: 1.0,
            w_focal: 1.0,
            w_lovasz: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let w = [self.w_ce, self.w_focal, self.w_lovasz];
        if w.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::config(format!("loss weights must be >= 0, got {w:?}")));
        }
        if w.iter().all(|v| *v == 0.0) {
            return Err(Error::config("loss weights are all zero"));
        }
        Ok(())
    }
}

/// Scalar loss node plus the individual term values.
#[derive(Clone, Copy, Debug)]
pub struct HeadLoss {
    pub total: Var,
    pub ce: f64,
    pub focal: f64,
    pub lovasz: f64,
}

fn check_layout(tape: &Tape, x: Var, target: &[u8]) -> Result<(usize, usize, usize)> {
    let (b, c, h, w) = tape.value(x).dims4()?;
    if target.len() != b * h * w {
        return Err(Error::contract(format!(
            "target has {} pixels, input has {}",
            target.len(),
            b * h * w
        )));
    }
    Ok((b, c, h * w))
}

fn check_label(v: u8, classes: usize, ignore: Option<u8>) -> Result<bool> {
    if Some(v) == ignore {
        return Ok(false);
    }
    if v as usize >= classes {
        return Err(Error::contract(format!("label {v} outside 0..{classes}")));
    }
    Ok(true)
}

/// Mean pixelwise cross-entropy of logits against `target`.
pub fn cross_entropy(tape: &mut Tape, logits: Var, target: &[u8], ignore: Option<u8>) -> Result<Var> {
    let (b, c, hw) = check_layout(tape, logits, target)?;
    let x = tape.value(logits).data();
    let mut grad = vec![0.0; x.len()];
    let mut total = 0.0;
    let mut count = 0usize;
    let mut p = vec![0.0; c];
    for bi in 0..b {
        for pix in 0..hw {
            let t = target[bi * hw + pix];
            if !check_label(t, c, ignore)? {
                continue;
            }
            let at = |ch: usize| (bi * c + ch) * hw + pix;
            let m = (0..c).map(|ch| x[at(ch)]).fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = (0..c).map(|ch| (x[at(ch)] - m).exp()).sum();
            let lse = m + z.ln();
            total += lse - x[at(t as usize)];
            for (ch, pc) in p.iter_mut().enumerate() {
                *pc = (x[at(ch)] - lse).exp();
            }
            for (ch, pc) in p.iter().enumerate() {
                grad[at(ch)] = *pc - if ch == t as usize { 1.0 } else { 0.0 };
            }
            count += 1;
        }
    }
    if count == 0 {
        log::warn!("cross-entropy: every pixel ignored, loss defined as 0");
        return tape.fused_scalar(logits, 0.0, grad);
    }
    let n = count as f64;
    grad.iter_mut().for_each(|g| *g /= n);
    tape.fused_scalar(logits, total / n, grad)
}

/// Focal loss over the four damage channels.
///
/// `probs` is `B×4×H×W`, channel `k` holding damage level `k+1`. Only pixels
/// whose target is in `1..=4` contribute, and the mean runs over those.
pub fn focal_loss(tape: &mut Tape, probs: Var, target: &[u8], cfg: &FocalConfig) -> Result<Var> {
    let (b, c, hw) = check_layout(tape, probs, target)?;
    if c != 4 {
        return Err(Error::contract(format!("focal loss expects 4 channels, got {c}")));
    }
    let g = cfg.gamma;
    let p = tape.value(probs).data();
    let mut grad = vec![0.0; p.len()];
    let mut total = 0.0;
    let mut count = 0usize;
    for bi in 0..b {
        for pix in 0..hw {
            let t = target[bi * hw + pix];
            if t == 0 {
                continue;
            }
            if t > 4 {
                return Err(Error::contract(format!("damage label {t} outside 0..5")));
            }
            let k = (t - 1) as usize;
            let idx = (bi * c + k) * hw + pix;
            let a = cfg.alpha[k];
            let raw = p[idx];
            let pt = raw.max(LOG_CLAMP);
            let q = 1.0 - pt;
            let ln = pt.ln();
            let modulator = if g == 0.0 { 1.0 } else { q.max(0.0).powf(g) };
            total += -a * modulator * ln;
            if raw > LOG_CLAMP {
                let term1 = if g == 0.0 || q <= 0.0 { 0.0 } else { g * q.powf(g - 1.0) * ln };
                grad[idx] = -a * (modulator / pt - term1);
            }
            count += 1;
        }
    }
    if count == 0 {
        return tape.fused_scalar(probs, 0.0, grad);
    }
    let n = count as f64;
    grad.iter_mut().for_each(|v| *v /= n);
    tape.fused_scalar(probs, total / n, grad)
}

/// Discrete gradient of the Jaccard loss extension for a foreground
/// indicator already sorted by descending error.
fn jaccard_steps(fg_sorted: &[bool]) -> Vec<f64> {
    let gts = fg_sorted.iter().filter(|&&f| f).count() as f64;
    let mut out = Vec::with_capacity(fg_sorted.len());
    let (mut cum_fg, mut cum_bg) = (0.0, 0.0);
    let mut prev = 0.0;
    for &f in fg_sorted {
        if f {
            cum_fg += 1.0;
        } else {
            cum_bg += 1.0;
        }
        let inter = gts - cum_fg;
        let union = gts + cum_bg;
        let jac = 1.0 - inter / union;
        out.push(jac - prev);
        prev = jac;
    }
    out
}

/// Lovász-Softmax over the classes present in `target`.
pub fn lovasz_softmax(tape: &mut Tape, probs: Var, target: &[u8], ignore: Option<u8>) -> Result<Var> {
    let (_, c, hw) = check_layout(tape, probs, target)?;
    let p = tape.value(probs).data();
    let mut valid = Vec::with_capacity(target.len());
    for (i, &t) in target.iter().enumerate() {
        if check_label(t, c, ignore)? {
            valid.push(i);
        }
    }
    let mut grad = vec![0.0; p.len()];
    if valid.is_empty() {
        log::warn!("lovasz: every pixel ignored, loss defined as 0");
        return tape.fused_scalar(probs, 0.0, grad);
    }
    let index = |flat: usize, ch: usize| {
        let (bi, pix) = (flat / hw, flat % hw);
        (bi * c + ch) * hw + pix
    };
    let mut total = 0.0;
    let mut present = Vec::new();
    for ch in 0..c {
        if valid.iter().any(|&i| target[i] as usize == ch) {
            present.push(ch);
        }
    }
    for &ch in &present {
        let fg: Vec<bool> = valid.iter().map(|&i| target[i] as usize == ch).collect();
        let err: Vec<f64> = valid
            .iter()
            .zip(&fg)
            .map(|(&i, &f)| {
                let pc = p[index(i, ch)];
                if f {
                    1.0 - pc
                } else {
                    pc
                }
            })
            .collect();
        let mut order: Vec<usize> = (0..valid.len()).collect();
        order.sort_by(|&a, &b| err[b].total_cmp(&err[a]));
        let fg_sorted: Vec<bool> = order.iter().map(|&k| fg[k]).collect();
        let steps = jaccard_steps(&fg_sorted);
        for (rank, &k) in order.iter().enumerate() {
            total += err[k] * steps[rank];
            let sign = if fg[k] { -1.0 } else { 1.0 };
            grad[index(valid[k], ch)] += sign * steps[rank];
        }
    }
    let n = present.len() as f64;
    grad.iter_mut().for_each(|v| *v /= n);
    tape.fused_scalar(probs, total / n, grad)
}

/// CE + focal + Lovász on the five-channel damage logits.
pub fn damage_head_loss(
    tape: &mut Tape,
    logits: Var,
    dmg: &[u8],
    cfg: &FocalConfig,
    w: &LossWeights,
) -> Result<HeadLoss> {
    let (_, c, _) = check_layout(tape, logits, dmg)?;
    if c != 5 {
        return Err(Error::contract(format!("damage head expects 5 channels, got {c}")));
    }
    let mut terms = Vec::new();
    let (mut ce_v, mut focal_v, mut lovasz_v) = (0.0, 0.0, 0.0);
    if w.w_ce != 0.0 {
        let ce = cross_entropy(tape, logits, dmg, None)?;
        ce_v = tape.scalar(ce);
        terms.push((ce, w.w_ce));
    }
    if w.w_focal != 0.0 {
        let levels = tape.slice_channels(logits, 1, 4)?;
        let probs = tape.softmax_channels(levels)?;
        let focal = focal_loss(tape, probs, dmg, cfg)?;
        focal_v = tape.scalar(focal);
        terms.push((focal, w.w_focal));
    }
    if w.w_lovasz != 0.0 {
        let probs = tape.softmax_channels(logits)?;
        let lov = lovasz_softmax(tape, probs, dmg, None)?;
        lovasz_v = tape.scalar(lov);
        terms.push((lov, w.w_lovasz));
    }
    let total = tape.linear(&terms)?;
    Ok(HeadLoss {
        total,
        ce: ce_v,
        focal: focal_v,
        lovasz: lovasz_v,
    })
}

/// CE + Lovász on the two-channel building logits.
pub fn building_head_loss(tape: &mut Tape, logits: Var, loc: &[u8], w: &LossWeights) -> Result<HeadLoss> {
    let (_, c, _) = check_layout(tape, logits, loc)?;
    if c != 2 {
        return Err(Error::contract(format!("building head expects 2 channels, got {c}")));
    }
    let mut terms = Vec::new();
    let (mut ce_v, mut lovasz_v) = (0.0, 0.0);
    if w.w_ce != 0.0 {
        let ce = cross_entropy(tape, logits, loc, None)?;
        ce_v = tape.scalar(ce);
        terms.push((ce, w.w_ce));
    }
    if w.w_lovasz != 0.0 {
        let probs = tape.softmax_channels(logits)?;
        let lov = lovasz_softmax(tape, probs, loc, None)?;
        lovasz_v = tape.scalar(lov);
        terms.push((lov, w.w_lovasz));
    }
    let total = tape.linear(&terms)?;
    Ok(HeadLoss {
        total,
        ce: ce_v,
        focal: 0.0,
        lovasz: lovasz_v,
    })
}
