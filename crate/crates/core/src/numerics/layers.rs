//! Parameterized layers built on the tape.

use crate::error::{Error, Result};
use crate::numerics::param::{ParamId, ParamStore};
use crate::numerics::rng::Rng;
use crate::numerics::tape::{Tape, Var};
use crate::numerics::tensor::Tensor;

pub const GROUP_NORM_EPS: f64 = 1e-5;

/// Weight initialisation scheme.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    /// Normal with std `sqrt(2 / fan_in)`.
    KaimingNormal,
    Zeros,
}

/// Square-kernel convolution: 1×1 without padding or 3×3 with same padding.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl Conv2d {
    /// Registers `<name>.w` (and `<name>.b`) in the store. Weights are drawn
    /// from a stream keyed by `(seed, name)`, so adding or removing other
    /// layers never changes this layer's initial values.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        bias: bool,
        init: Init,
        seed: u64,
    ) -> Result<Self> {
        if !matches!(kernel, 1 | 3) {
            return Err(Error::config(format!("unsupported kernel size {kernel}")));
        }
        if in_ch == 0 || out_ch == 0 || !matches!(stride, 1 | 2) {
            return Err(Error::config(format!(
                "bad conv {name}: {in_ch}->{out_ch} stride {stride}"
            )));
        }
        let shape = vec![out_ch, in_ch, kernel, kernel];
        let w = match init {
            Init::KaimingNormal => {
                let fan_in = (in_ch * kernel * kernel) as f64;
                let mut rng = Rng::derived(seed, name);
                Tensor::randn(shape, (2.0 / fan_in).sqrt(), &mut rng)
            }
            Init::Zeros => Tensor::zeros(shape),
        };
        let weight = store.add(format!("{name}.w"), w);
        let bias = bias.then(|| store.add(format!("{name}.b"), Tensor::zeros(vec![out_ch])));
        Ok(Conv2d {
            weight,
            bias,
            in_ch,
            out_ch,
            kernel,
            stride,
        })
    }

    pub fn padding(&self) -> usize {
        self.kernel / 2
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = self.bias.map(|b| tape.param(store, b));
        tape.conv2d(x, w, b, self.stride, self.padding())
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        std::iter::once(self.weight).chain(self.bias).collect()
    }
}

/// Group count used throughout: `min(8, channels)`, or 1 when that does not
/// divide the channel count.
pub fn default_groups(channels: usize) -> usize {
    let g = channels.clamp(1, 8);
    if channels % g == 0 {
        g
    } else {
        1
    }
}

#[derive(Clone, Debug)]
pub struct GroupNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub groups: usize,
    pub eps: f64,
}

impl GroupNorm {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, groups: usize) -> Result<Self> {
        if groups == 0 || channels % groups != 0 {
            return Err(Error::config(format!(
                "{name}: {channels} channels not divisible into {groups} groups"
            )));
        }
        let gamma = store.add(format!("{name}.gamma"), Tensor::full(vec![channels], 1.0));
        let beta = store.add(format!("{name}.beta"), Tensor::zeros(vec![channels]));
        Ok(GroupNorm {
            gamma,
            beta,
            groups,
            eps: GROUP_NORM_EPS,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let g = tape.param(store, self.gamma);
        let b = tape.param(store, self.beta);
        tape.group_norm(x, self.groups, g, b, self.eps)
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        vec![self.gamma, self.beta]
    }
}

/// Pointwise activations.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    /// Softmax across the channel axis.
    Softmax,
}

impl Activation {
    pub fn apply(self, tape: &mut Tape, x: Var) -> Result<Var> {
        match self {
            Activation::Relu => Ok(tape.relu(x)),
            Activation::Sigmoid => Ok(tape.sigmoid(x)),
            Activation::Softmax => tape.softmax_channels(x),
        }
    }
}
