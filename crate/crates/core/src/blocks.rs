//! Attention gates for decoder skips and the pre/post feature alignment
//! module.

use crate::error::{Error, Result};
use crate::numerics::{default_groups, Conv2d, GroupNorm, Init, ParamId, ParamStore, Tape, Tensor, Var};

/// Additive attention gate with a 50% retention floor.
#[derive(Clone, Debug)]
pub struct AttentionGate {
    pub w_x: Conv2d,
    pub w_g: Conv2d,
    pub psi: Conv2d,
    pub gn_x: GroupNorm,
    pub gn_g: GroupNorm,
    pub f_int: usize,
}

impl AttentionGate {
    /// Gate for a skip with `c_x` channels driven by a `c_g`-channel signal.
    pub fn new(store: &mut ParamStore, name: &str, c_x: usize, c_g: usize, seed: u64) -> Result<Self> {
        let f_int = (c_x / 2).max(1);
        let groups = default_groups(f_int);
        Ok(AttentionGate {
            w_x: Conv2d::new(store, &format!("{name}.w_x"), c_x, f_int, 1, 1, false, Init::KaimingNormal, seed)?,
            w_g: Conv2d::new(store, &format!("{name}.w_g"), c_g, f_int, 1, 1, true, Init::KaimingNormal, seed)?,
            psi: Conv2d::new(store, &format!("{name}.psi"), f_int, 1, 1, 1, true, Init::KaimingNormal, seed)?,
            gn_x: GroupNorm::new(store, &format!("{name}.gn_x"), f_int, groups)?,
            gn_g: GroupNorm::new(store, &format!("{name}.gn_g"), f_int, groups)?,
            f_int,
        })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        [
            self.w_x.param_ids(),
            self.w_g.param_ids(),
            self.psi.param_ids(),
            self.gn_x.param_ids(),
            self.gn_g.param_ids(),
        ]
        .concat()
    }
}

/// Gates skip feature `x` by the coarser signal `g`.
///
/// Returns `(x̂, α)` with `x̂ = (0.5 + 0.5·α)·x` and `α` shaped `B×1×H×W`.
pub fn attention_gate(
    tape: &mut Tape,
    store: &ParamStore,
    gate: &AttentionGate,
    x: Var,
    g: Var,
) -> Result<(Var, Var)> {
    let (_, cx, hx, wx) = tape.value(x).dims4()?;
    let (_, cg, hg, wg) = tape.value(g).dims4()?;
    if cx != gate.w_x.in_ch || cg != gate.w_g.in_ch {
        return Err(Error::config(format!(
            "attention gate built for {}/{} channels, got {cx}/{cg}",
            gate.w_x.in_ch, gate.w_g.in_ch
        )));
    }
    if hg > hx || wg > wx {
        return Err(Error::contract(format!(
            "gating signal {hg}×{wg} larger than skip {hx}×{wx}"
        )));
    }
    let g_up = tape.upsample(g, hx, wx)?;
    let a = gate.w_x.forward(tape, store, x)?;
    let a = gate.gn_x.forward(tape, store, a)?;
    let b = gate.w_g.forward(tape, store, g_up)?;
    let b = gate.gn_g.forward(tape, store, b)?;
    let s = tape.add(a, b)?;
    let s = tape.relu(s);
    let logit = gate.psi.forward(tape, store, s)?;
    let alpha = tape.sigmoid(logit);
    let scale = tape.affine(alpha, 0.5, 0.5);
    let x_hat = tape.mul_channels(x, scale)?;
    Ok((x_hat, alpha))
}

/// Three-layer flow predictor for one encoder stage.
#[derive(Clone, Debug)]
pub struct AlignmentModule {
    pub conv1: Conv2d,
    pub conv2: Conv2d,
    /// Zero-initialised so the initial flow is identically zero.
    pub conv3: Conv2d,
    pub channels: usize,
}

impl AlignmentModule {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, seed: u64) -> Result<Self> {
        let c = channels;
        Ok(AlignmentModule {
            conv1: Conv2d::new(store, &format!("{name}.conv1"), 2 * c, c, 3, 1, true, Init::KaimingNormal, seed)?,
            conv2: Conv2d::new(store, &format!("{name}.conv2"), c, c, 3, 1, true, Init::KaimingNormal, seed)?,
            conv3: Conv2d::new(store, &format!("{name}.conv3"), c, 2, 3, 1, true, Init::Zeros, seed)?,
            channels,
        })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        [self.conv1.param_ids(), self.conv2.param_ids(), self.conv3.param_ids()].concat()
    }
}

/// Predicts a flow from the concatenated pair and warps `f_pre` with it.
/// Returns `(flow, warped_pre)`.
pub fn alignment_forward(
    tape: &mut Tape,
    store: &ParamStore,
    module: &AlignmentModule,
    f_pre: Var,
    f_post: Var,
) -> Result<(Var, Var)> {
    if tape.value(f_pre).shape() != tape.value(f_post).shape() {
        return Err(Error::contract(format!(
            "alignment inputs differ: {:?} vs {:?}",
            tape.value(f_pre).shape(),
            tape.value(f_post).shape()
        )));
    }
    let pair = tape.concat_channels(&[f_pre, f_post])?;
    let h = module.conv1.forward(tape, store, pair)?;
    let h = tape.relu(h);
    let h = module.conv2.forward(tape, store, h)?;
    let h = tape.relu(h);
    let flow = module.conv3.forward(tape, store, h)?;
    let warped = warp_features(tape, f_pre, flow)?;
    Ok((flow, warped))
}

/// Samples `f` at `(x + Δx, y + Δy)` with border clamping. `flow` is
/// `B×2×H×W`, channel 0 horizontal.
pub fn warp_features(tape: &mut Tape, f: Var, flow: Var) -> Result<Var> {
    let (b, _, h, w) = tape.value(f).dims4()?;
    if tape.value(flow).shape() != [b, 2, h, w] {
        return Err(Error::contract(format!(
            "flow shape {:?} does not match feature {b}×·×{h}×{w}",
            tape.value(flow).shape()
        )));
    }
    let plane = |coord: fn(usize, usize) -> usize| {
        let one: Vec<f64> = (0..h * w).map(|p| coord(p / w, p % w) as f64).collect();
        Tensor::new(vec![b, 1, h, w], one.repeat(b))
    };
    let gx = tape.constant(plane(|_, x| x)?);
    let gy = tape.constant(plane(|y, _| y)?);
    let dx = tape.slice_channels(flow, 0, 1)?;
    let dy = tape.slice_channels(flow, 1, 1)?;
    let xs = tape.add(gx, dx)?;
    let ys = tape.add(gy, dy)?;
    tape.bilinear_sample(f, xs, ys)
}
