//! Finite-difference gradient suite over every differentiable component.

use serde::Serialize;

use crate::blocks::{alignment_forward, attention_gate, AlignmentModule, AttentionGate};
use crate::error::Result;
use crate::losses::{cross_entropy, focal_loss, lovasz_softmax, FocalConfig};
use crate::model::{Enhancements, Model, ModelConfig};
use crate::numerics::{GradCheck, ParamId, ParamStore, Rng, Tape, Tensor, Var};

/// Tolerance for operations that are linear in the checked inputs.
pub const LINEAR_TOLERANCE: f64 = 1e-6;
/// Tolerance for everything else.
pub const TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradComponent {
    pub name: String,
    pub max_relative_error: f64,
    pub tolerance: f64,
    pub entries_checked: usize,
}

impl GradComponent {
    pub fn passed(&self) -> bool {
        self.max_relative_error < self.tolerance
    }
}

fn check<F>(
    name: &str,
    tolerance: f64,
    eps: f64,
    store: &mut ParamStore,
    params: Option<Vec<ParamId>>,
    f: F,
) -> Result<GradComponent>
where
    F: FnMut(&ParamStore, &mut Tape) -> Result<Var>,
{
    let report = GradCheck {
        eps,
        max_entries_per_param: Some(64),
        params,
    }
    .run(store, f)?;
    Ok(GradComponent {
        name: name.to_string(),
        max_relative_error: report.max_relative_error,
        tolerance,
        entries_checked: report.entries_checked,
    })
}

/// `sum(y ⊙ w)` with a fixed random `w`.
fn project(t: &mut Tape, y: Var, w: &Tensor) -> Result<Var> {
    let wv = t.constant(w.clone());
    let p = t.mul(y, wv)?;
    Ok(t.sum(p))
}

fn targets(rng: &mut Rng, n: usize, classes: usize) -> Vec<u8> {
    (0..n).map(|_| rng.below(classes) as u8).collect()
}

/// Runs all checks. The full-model check uses widths `[4, 8, 12, 16]` on a
/// 16×16 pair with every enhancement on and the flow heads moved off zero.
pub fn gradient_suite(seed: u64) -> Result<Vec<GradComponent>> {
    let mut rng = Rng::derived(seed, "gradient-suite");
    let mut out = Vec::new();

    let mut s = ParamStore::new();
    let x = s.add("x", Tensor::randn(vec![2, 3, 5, 5], 1.0, &mut rng));
    let w = s.add("w", Tensor::randn(vec![4, 3, 3, 3], 0.5, &mut rng));
    let b = s.add("b", Tensor::randn(vec![4], 0.5, &mut rng));
    let proj = Tensor::randn(vec![2, 4, 3, 3], 1.0, &mut rng);
    out.push(check("conv2d", LINEAR_TOLERANCE, 1e-5, &mut s, None, |s, t| {
        let (x, w, b) = (t.param(s, x), t.param(s, w), t.param(s, b));
        let y = t.conv2d(x, w, Some(b), 2, 1)?;
        project(t, y, &proj)
    })?);

    let mut s = ParamStore::new();
    let x = s.add("x", Tensor::randn(vec![2, 4, 3, 3], 1.0, &mut rng));
    let g = s.add("gamma", Tensor::randn(vec![4], 1.0, &mut rng));
    let b = s.add("beta", Tensor::randn(vec![4], 1.0, &mut rng));
    let proj = Tensor::randn(vec![2, 4, 3, 3], 1.0, &mut rng);
    out.push(check("group_norm", TOLERANCE, 1e-5, &mut s, None, |s, t| {
        let (x, g, b) = (t.param(s, x), t.param(s, g), t.param(s, b));
        let y = t.group_norm(x, 2, g, b, 1e-5)?;
        project(t, y, &proj)
    })?);

    let mut s = ParamStore::new();
    let x = s.add("x", Tensor::randn(vec![1, 2, 3, 3], 1.0, &mut rng));
    let proj = Tensor::randn(vec![1, 2, 6, 7], 1.0, &mut rng);
    out.push(check("upsample", LINEAR_TOLERANCE, 1e-5, &mut s, None, |s, t| {
        let x = t.param(s, x);
        let y = t.upsample(x, 6, 7)?;
        project(t, y, &proj)
    })?);

    // Interior non-integer coordinates keep every tap differentiable.
    let mut s = ParamStore::new();
    let f = s.add("feat", Tensor::randn(vec![1, 2, 5, 5], 1.0, &mut rng));
    let xs = s.add("xs", Tensor::uniform(vec![1, 1, 4, 4], 0.2, 3.8, &mut rng));
    let ys = s.add("ys", Tensor::uniform(vec![1, 1, 4, 4], 0.2, 3.8, &mut rng));
    let proj = Tensor::randn(vec![1, 2, 4, 4], 1.0, &mut rng);
    let sample = |s: &ParamStore, t: &mut Tape| {
        let (f, x, y) = (t.param(s, f), t.param(s, xs), t.param(s, ys));
        let o = t.bilinear_sample(f, x, y)?;
        project(t, o, &proj)
    };
    out.push(check("bilinear_sample.features", LINEAR_TOLERANCE, 1e-5, &mut s, Some(vec![f]), sample)?);
    out.push(check("bilinear_sample.coords", TOLERANCE, 1e-6, &mut s, Some(vec![xs, ys]), sample)?);

    let mut s = ParamStore::new();
    let gate = AttentionGate::new(&mut s, "gate", 4, 6, seed)?;
    let x = s.add("x", Tensor::randn(vec![1, 4, 4, 4], 1.0, &mut rng));
    let g = s.add("g", Tensor::randn(vec![1, 6, 2, 2], 1.0, &mut rng));
    let proj = Tensor::randn(vec![1, 4, 4, 4], 1.0, &mut rng);
    out.push(check("attention_gate", TOLERANCE, 1e-6, &mut s, None, |s, t| {
        let (x, g) = (t.param(s, x), t.param(s, g));
        let (xh, alpha) = attention_gate(t, s, &gate, x, g)?;
        let a = project(t, xh, &proj)?;
        let b = t.sum_squares(alpha);
        t.linear(&[(a, 1.0), (b, 0.5)])
    })?);

    let mut s = ParamStore::new();
    let m = AlignmentModule::new(&mut s, "align", 3, seed)?;
    for id in m.conv3.param_ids() {
        let shape = s.value(id).shape().to_vec();
        s.get_mut(id).value = Tensor::randn(shape, 0.1, &mut rng);
    }
    let pre = Tensor::randn(vec![1, 3, 6, 6], 1.0, &mut rng);
    let post = Tensor::randn(vec![1, 3, 6, 6], 1.0, &mut rng);
    out.push(check("alignment_forward", TOLERANCE, 1e-6, &mut s, None, |s, t| {
        let (a, b) = (t.constant(pre.clone()), t.constant(post.clone()));
        let (_, warped) = alignment_forward(t, s, &m, a, b)?;
        let d = t.sub(warped, b)?;
        Ok(t.sum_squares(d))
    })?);

    let mut s = ParamStore::new();
    let logits = s.add("logits", Tensor::randn(vec![2, 5, 3, 3], 1.0, &mut rng));
    let target = targets(&mut rng, 18, 5);
    out.push(check("cross_entropy", TOLERANCE, 1e-6, &mut s, None, |s, t| {
        let l = t.param(s, logits);
        cross_entropy(t, l, &target, None)
    })?);

    let mut s = ParamStore::new();
    let logits = s.add("logits", Tensor::randn(vec![2, 4, 3, 3], 1.0, &mut rng));
    let target = targets(&mut rng, 18, 5);
    let cfg = FocalConfig::default();
    out.push(check("focal_loss", TOLERANCE, 1e-6, &mut s, None, |s, t| {
        let l = t.param(s, logits);
        let p = t.softmax_channels(l)?;
        focal_loss(t, p, &target, &cfg)
    })?);

    let mut s = ParamStore::new();
    let logits = s.add("logits", Tensor::randn(vec![1, 3, 4, 4], 1.0, &mut rng));
    let target = targets(&mut rng, 16, 3);
    out.push(check("lovasz_softmax", TOLERANCE, 1e-6, &mut s, None, |s, t| {
        let l = t.param(s, logits);
        let p = t.softmax_channels(l)?;
        lovasz_softmax(t, p, &target, None)
    })?);

    out.push(full_model_check(seed)?);
    Ok(out)
}

fn full_model_check(seed: u64) -> Result<GradComponent> {
    let cfg = ModelConfig {
        stage_channels: [4, 8, 12, 16],
        ..ModelConfig::default()
    }
    .with_enhancements(Enhancements::new(true, true, true, true));
    let mut model = Model::build(&cfg, seed)?;
    let mut rng = Rng::derived(seed, "full-model");
    for p in model.store_mut().iter_mut() {
        if p.name.starts_with("align.") && p.name.contains("conv3") {
            let shape = p.value.shape().to_vec();
            p.value = Tensor::randn(shape, 0.05, &mut rng);
        }
    }
    let pre = Tensor::uniform(vec![1, 3, 16, 16], 0.0, 1.0, &mut rng);
    let post = Tensor::uniform(vec![1, 3, 16, 16], 0.0, 1.0, &mut rng);
    let dmg: Vec<u8> = (0..256).map(|_| if rng.bernoulli(0.4) { 0 } else { 1 + rng.below(4) as u8 }).collect();
    let loc: Vec<u8> = dmg.iter().map(|&d| u8::from(d > 0)).collect();
    let ids = model.active_params();
    let mut store = std::mem::take(model.store_mut());
    let report = GradCheck {
        eps: 1e-6,
        max_entries_per_param: Some(4),
        params: Some(ids),
    }
    .run(&mut store, |s, t| {
        let out = model.forward_with(s, t, &pre, &post)?;
        Ok(model.loss(t, &out, &loc, &dmg)?.total)
    });
    *model.store_mut() = store;
    let report = report?;
    Ok(GradComponent {
        name: "full_model".into(),
        max_relative_error: report.max_relative_error,
        tolerance: TOLERANCE,
        entries_checked: report.entries_checked,
    })
}
