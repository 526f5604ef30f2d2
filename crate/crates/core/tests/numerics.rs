use bda_core::numerics::kernels::{bilinear_sample, group_norm_forward, upsample_bilinear};
use bda_core::numerics::{
    grad_check, AdamW, GradCheck, ParamStore, Rng, Tape, Tensor,
};
use bda_core::Error;
use proptest::prelude::*;

// ---- oracles -------------------------------------------------------------

fn direct_conv(x: &Tensor, w: &Tensor, b: &[f64], stride: usize, pad: usize) -> Tensor {
    let (n, ci, h, wd) = x.dims4().unwrap();
    let (co, _, k, _) = w.dims4().unwrap();
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (wd + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0; n * co * oh * ow];
    for bi in 0..n {
        for o in 0..co {
            for y in 0..oh {
                for xx in 0..ow {
                    let mut s = b[o];
                    for c in 0..ci {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (y * stride + ky) as isize - pad as isize;
                                let ix = (xx * stride + kx) as isize - pad as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                    s += w.at4(o, c, ky, kx) * x.at4(bi, c, iy as usize, ix as usize);
                                }
                            }
                        }
                    }
                    out[((bi * co + o) * oh + y) * ow + xx] = s;
                }
            }
        }
    }
    Tensor::new(vec![n, co, oh, ow], out).unwrap()
}

fn instance_norm(x: &Tensor, eps: f64) -> Tensor {
    let (n, c, h, w) = x.dims4().unwrap();
    let mut out = x.clone();
    for bi in 0..n {
        for ch in 0..c {
            let vals: Vec<f64> = (0..h * w).map(|p| x.at4(bi, ch, p / w, p % w)).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            for p in 0..h * w {
                let i = ((bi * c + ch) * h + p / w) * w + p % w;
                out.data_mut()[i] = (vals[p] - mean) / (var + eps).sqrt();
            }
        }
    }
    out
}

/// Per-pixel bilinear resize written from the half-pixel definition.
fn resize_oracle(x: &Tensor, oh: usize, ow: usize) -> Tensor {
    let (n, c, h, w) = x.dims4().unwrap();
    let mut out = Tensor::zeros(vec![n, c, oh, ow]);
    for bi in 0..n {
        for ch in 0..c {
            for y in 0..oh {
                for xx in 0..ow {
                    let sy = ((y as f64 + 0.5) * h as f64 / oh as f64 - 0.5).max(0.0);
                    let sx = ((xx as f64 + 0.5) * w as f64 / ow as f64 - 0.5).max(0.0);
                    let (y0, x0) = (sy.floor() as usize, sx.floor() as usize);
                    let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
                    let (ty, tx) = (sy - y0 as f64, sx - x0 as f64);
                    let v = x.at4(bi, ch, y0, x0) * (1.0 - ty) * (1.0 - tx)
                        + x.at4(bi, ch, y0, x1) * (1.0 - ty) * tx
                        + x.at4(bi, ch, y1, x0) * ty * (1.0 - tx)
                        + x.at4(bi, ch, y1, x1) * ty * tx;
                    out.data_mut()[((bi * c + ch) * oh + y) * ow + xx] = v;
                }
            }
        }
    }
    out
}

fn grid(h: usize, w: usize, dx: f64, dy: f64) -> (Tensor, Tensor) {
    let xs = (0..h * w).map(|p| (p % w) as f64 + dx).collect();
    let ys = (0..h * w).map(|p| (p / w) as f64 + dy).collect();
    (
        Tensor::new(vec![1, 1, h, w], xs).unwrap(),
        Tensor::new(vec![1, 1, h, w], ys).unwrap(),
    )
}

// ---- conv2d --------------------------------------------------------------

#[test]
fn conv_1x1_identity_returns_input() {
    let mut rng = Rng::new(1);
    let x = Tensor::randn(vec![2, 3, 4, 5], 1.0, &mut rng);
    let mut w = Tensor::zeros(vec![3, 3, 1, 1]);
    for c in 0..3 {
        w.data_mut()[c * 3 + c] = 1.0;
    }
    let (y, _, _) = bda_core::numerics::kernels::conv2d_forward(&x, &w, None, 1, 0).unwrap();
    assert_eq!(y, x);
}

#[test]
fn conv_3x3_matches_direct_oracle() {
    let mut rng = Rng::new(2);
    let x = Tensor::randn(vec![1, 2, 5, 5], 1.0, &mut rng);
    let w = Tensor::randn(vec![3, 2, 3, 3], 1.0, &mut rng);
    let b = Tensor::randn(vec![3], 1.0, &mut rng);
    let (y, _, _) = bda_core::numerics::kernels::conv2d_forward(&x, &w, Some(&b), 1, 1).unwrap();
    let o = direct_conv(&x, &w, b.data(), 1, 1);
    assert!(y.max_abs_diff(&o) < 1e-12);
}

#[test]
fn conv_matches_oracle_for_several_widths_and_stride_two() {
    let mut rng = Rng::new(3);
    for c in [1, 2, 4] {
        let x = Tensor::randn(vec![1, c, 7, 7], 1.0, &mut rng);
        let w = Tensor::randn(vec![3, c, 3, 3], 1.0, &mut rng);
        let b = Tensor::randn(vec![3], 1.0, &mut rng);
        for stride in [1, 2] {
            let (y, _, _) =
                bda_core::numerics::kernels::conv2d_forward(&x, &w, Some(&b), stride, 1).unwrap();
            let o = direct_conv(&x, &w, b.data(), stride, 1);
            assert!(y.max_abs_diff(&o) < 1e-12, "c={c} stride={stride}");
        }
    }
}

#[test]
fn conv_channel_mismatch_is_contract_error() {
    let x = Tensor::zeros(vec![1, 2, 4, 4]);
    let w = Tensor::zeros(vec![1, 3, 3, 3]);
    let r = bda_core::numerics::kernels::conv2d_forward(&x, &w, None, 1, 1);
    assert!(matches!(r, Err(Error::Contract(_))));
}

fn conv_store(seed: u64, ci: usize, co: usize, k: usize) -> ParamStore {
    let mut rng = Rng::new(seed);
    let mut s = ParamStore::new();
    s.add("x", Tensor::randn(vec![1, ci, 5, 5], 1.0, &mut rng));
    s.add("w", Tensor::randn(vec![co, ci, k, k], 1.0, &mut rng));
    s.add("b", Tensor::randn(vec![co], 1.0, &mut rng));
    s
}

#[test]
fn conv_gradients_match_finite_differences() {
    for (k, stride) in [(3, 1), (3, 2), (1, 1)] {
        let mut store = conv_store(4, 2, 3, k);
        let err = grad_check(&mut store, 1e-5, |s, t| {
            let x = t.param(s, s.find("x").unwrap());
            let w = t.param(s, s.find("w").unwrap());
            let b = t.param(s, s.find("b").unwrap());
            let y = t.conv2d(x, w, Some(b), stride, k / 2)?;
            Ok(t.sum(y))
        })
        .unwrap();
        assert!(err < 1e-6, "k={k} stride={stride}: {err}");
    }
}

// ---- group norm ----------------------------------------------------------

#[test]
fn group_norm_constant_input_is_zero() {
    let x = Tensor::full(vec![2, 4, 3, 3], 0.1);
    let (y, _) =
        group_norm_forward(&x, 2, &Tensor::full(vec![4], 1.0), &Tensor::zeros(vec![4]), 1e-5)
            .unwrap();
    assert!(y.data().iter().all(|v| v.abs() < 1e-12));
}

#[test]
fn group_norm_with_one_channel_per_group_is_instance_norm() {
    let mut rng = Rng::new(5);
    let x = Tensor::randn(vec![2, 4, 3, 5], 2.0, &mut rng);
    let (y, _) =
        group_norm_forward(&x, 4, &Tensor::full(vec![4], 1.0), &Tensor::zeros(vec![4]), 1e-5)
            .unwrap();
    assert!(y.max_abs_diff(&instance_norm(&x, 1e-5)) < 1e-12);
}

#[test]
fn group_norm_normalizes_each_group() {
    let mut rng = Rng::new(6);
    let x = Tensor::randn(vec![2, 6, 4, 4], 3.0, &mut rng).map(|v| v + 1.5);
    let (y, _) =
        group_norm_forward(&x, 3, &Tensor::full(vec![6], 1.0), &Tensor::zeros(vec![6]), 1e-5)
            .unwrap();
    let moments = |seg: &[f64]| {
        let n = seg.len() as f64;
        let mean = seg.iter().sum::<f64>() / n;
        (mean, seg.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n)
    };
    for (seg, src) in y.data().chunks(2 * 16).zip(x.data().chunks(2 * 16)) {
        let (mean, var) = moments(seg);
        let (_, s2) = moments(src);
        assert!(mean.abs() < 1e-10);
        assert!((var - s2 / (s2 + 1e-5)).abs() < 1e-10);
    }
}

#[test]
fn group_norm_applies_affine_per_channel() {
    let mut rng = Rng::new(7);
    let x = Tensor::randn(vec![1, 2, 3, 3], 1.0, &mut rng);
    let gamma = Tensor::new(vec![2], vec![2.0, -1.0]).unwrap();
    let beta = Tensor::new(vec![2], vec![0.5, 3.0]).unwrap();
    let (y, _) = group_norm_forward(&x, 2, &gamma, &beta, 1e-5).unwrap();
    let base = instance_norm(&x, 1e-5);
    for (i, (&a, &b)) in y.data().iter().zip(base.data()).enumerate() {
        let c = i / 9;
        assert!((a - (gamma.data()[c] * b + beta.data()[c])).abs() < 1e-12);
    }
}

#[test]
fn group_norm_gradients_match_finite_differences() {
    let mut rng = Rng::new(8);
    let mut store = ParamStore::new();
    let xid = store.add("x", Tensor::randn(vec![2, 4, 3, 3], 1.0, &mut rng));
    let gid = store.add("gamma", Tensor::randn(vec![4], 1.0, &mut rng));
    let bid = store.add("beta", Tensor::randn(vec![4], 1.0, &mut rng));
    let weights = Tensor::randn(vec![2, 4, 3, 3], 1.0, &mut rng);
    let err = grad_check(&mut store, 1e-5, |s, t| {
        let x = t.param(s, xid);
        let g = t.param(s, gid);
        let b = t.param(s, bid);
        let y = t.group_norm(x, 2, g, b, 1e-5)?;
        let wv = t.constant(weights.clone());
        let p = t.mul(y, wv)?;
        Ok(t.sum(p))
    })
    .unwrap();
    assert!(err < 1e-6, "{err}");
}

// ---- activations ---------------------------------------------------------

#[test]
fn activation_fixed_points() {
    let mut t = Tape::new();
    let x = t.constant(Tensor::new(vec![2], vec![-3.0, 2.0]).unwrap());
    let r = t.relu(x);
    assert_eq!(t.value(r).data(), &[0.0, 2.0]);
    let z = t.constant(Tensor::zeros(vec![1]));
    let s = t.sigmoid(z);
    assert_eq!(t.value(s).data(), &[0.5]);
    let l = t.constant(Tensor::zeros(vec![1, 4, 1, 1]));
    let p = t.softmax_channels(l).unwrap();
    assert_eq!(t.value(p).data(), &[0.25; 4]);
}

proptest! {
    #[test]
    fn softmax_sums_to_one_and_sigmoid_is_open_interval(
        vals in proptest::collection::vec(-30.0f64..30.0, 5 * 6)
    ) {
        let x = Tensor::new(vec![2, 5, 3, 1], vals).unwrap();
        let p = bda_core::numerics::kernels::softmax_channels(&x).unwrap();
        for bi in 0..2 {
            for pix in 0..3 {
                let s: f64 = (0..5).map(|c| p.at4(bi, c, pix, 0)).sum();
                prop_assert!((s - 1.0).abs() < 1e-12);
            }
        }
        for &v in x.data() {
            let s = bda_core::numerics::sigmoid(v);
            prop_assert!(s > 0.0 && s < 1.0);
        }
    }
}

#[test]
fn activation_gradients_match_finite_differences() {
    let mut rng = Rng::new(9);
    let mut store = ParamStore::new();
    let xid = store.add("x", Tensor::randn(vec![1, 3, 2, 2], 1.0, &mut rng));
    let weights = Tensor::randn(vec![1, 3, 2, 2], 1.0, &mut rng);
    for act in ["relu", "sigmoid", "softmax"] {
        let err = grad_check(&mut store, 1e-6, |s, t| {
            let x = t.param(s, xid);
            let y = match act {
                "relu" => t.relu(x),
                "sigmoid" => t.sigmoid(x),
                _ => t.softmax_channels(x)?,
            };
            let wv = t.constant(weights.clone());
            let p = t.mul(y, wv)?;
            Ok(t.sum(p))
        })
        .unwrap();
        assert!(err < 1e-6, "{act}: {err}");
    }
}

// ---- upsample ------------------------------------------------------------

#[test]
fn upsample_same_size_is_identity() {
    let mut rng = Rng::new(10);
    let x = Tensor::randn(vec![1, 2, 3, 4], 1.0, &mut rng);
    assert_eq!(upsample_bilinear(&x, 3, 4).unwrap(), x);
}

#[test]
fn upsample_single_pixel_extends_constant() {
    let x = Tensor::full(vec![1, 1, 1, 1], 0.37);
    let y = upsample_bilinear(&x, 4, 4).unwrap();
    assert!(y.data().iter().all(|&v| v == 0.37));
}

#[test]
fn upsample_matches_per_pixel_oracle() {
    let mut rng = Rng::new(11);
    let x = Tensor::randn(vec![1, 2, 2, 2], 1.0, &mut rng);
    let y = upsample_bilinear(&x, 4, 4).unwrap();
    assert!(y.max_abs_diff(&resize_oracle(&x, 4, 4)) < 1e-12);
    let x = Tensor::randn(vec![2, 1, 3, 5], 1.0, &mut rng);
    let y = upsample_bilinear(&x, 7, 9).unwrap();
    assert!(y.max_abs_diff(&resize_oracle(&x, 7, 9)) < 1e-12);
}

#[test]
fn upsample_gradients_match_finite_differences() {
    let mut rng = Rng::new(12);
    let mut store = ParamStore::new();
    let xid = store.add("x", Tensor::randn(vec![1, 2, 3, 3], 1.0, &mut rng));
    let weights = Tensor::randn(vec![1, 2, 6, 7], 1.0, &mut rng);
    let err = grad_check(&mut store, 1e-5, |s, t| {
        let x = t.param(s, xid);
        let y = t.upsample(x, 6, 7)?;
        let wv = t.constant(weights.clone());
        let p = t.mul(y, wv)?;
        Ok(t.sum(p))
    })
    .unwrap();
    assert!(err < 1e-6, "{err}");
}

// ---- bilinear sample -----------------------------------------------------

fn ramp(h: usize, w: usize) -> Tensor {
    Tensor::new(
        vec![1, 2, h, w],
        (0..2 * h * w)
            .map(|i| {
                let (c, p) = (i / (h * w), i % (h * w));
                (p % w) as f64 * 1.5 + (p / w) as f64 * 10.0 + c as f64 * 100.0
            })
            .collect(),
    )
    .unwrap()
}

#[test]
fn sample_identity_grid_is_exact() {
    let mut rng = Rng::new(13);
    let f = Tensor::randn(vec![1, 3, 4, 5], 1.0, &mut rng);
    let (xs, ys) = grid(4, 5, 0.0, 0.0);
    assert_eq!(bilinear_sample(&f, &xs, &ys).unwrap(), f);
}

#[test]
fn sample_shift_right_clamps_last_column() {
    let f = ramp(3, 4);
    let (xs, ys) = grid(3, 4, 1.0, 0.0);
    let out = bilinear_sample(&f, &xs, &ys).unwrap();
    for c in 0..2 {
        for y in 0..3 {
            for x in 0..4 {
                let src = (x + 1).min(3);
                assert_eq!(out.at4(0, c, y, x), f.at4(0, c, y, src));
            }
        }
    }
}

#[test]
fn sample_far_outside_reads_the_border() {
    let f = ramp(3, 3);
    let (xs, ys) = grid(3, 3, -10.0, 25.0);
    let out = bilinear_sample(&f, &xs, &ys).unwrap();
    for c in 0..2 {
        for p in 0..9 {
            assert_eq!(out.at4(0, c, p / 3, p % 3), f.at4(0, c, 2, 0));
        }
    }
}

#[test]
fn sample_gradients_match_finite_differences() {
    let mut rng = Rng::new(14);
    let mut store = ParamStore::new();
    let fid = store.add("feat", Tensor::randn(vec![1, 2, 5, 5], 1.0, &mut rng));
    let (gx, gy) = grid(5, 5, 0.0, 0.0);
    // Interior, non-integer coordinates keep every tap differentiable.
    let jitter = Tensor::uniform(vec![1, 1, 5, 5], 0.1, 0.9, &mut rng);
    let xs = Tensor::new(
        vec![1, 1, 5, 5],
        gx.data().iter().zip(jitter.data()).map(|(a, j)| (a * 0.7 + j).min(3.95)).collect(),
    )
    .unwrap();
    let jitter = Tensor::uniform(vec![1, 1, 5, 5], 0.1, 0.9, &mut rng);
    let ys = Tensor::new(
        vec![1, 1, 5, 5],
        gy.data().iter().zip(jitter.data()).map(|(a, j)| (a * 0.7 + j).min(3.95)).collect(),
    )
    .unwrap();
    let xid = store.add("xs", xs);
    let yid = store.add("ys", ys);
    let weights = Tensor::randn(vec![1, 2, 5, 5], 1.0, &mut rng);
    let f = |s: &ParamStore, t: &mut Tape| {
        let f = t.param(s, fid);
        let x = t.param(s, xid);
        let y = t.param(s, yid);
        let o = t.bilinear_sample(f, x, y)?;
        let wv = t.constant(weights.clone());
        let p = t.mul(o, wv)?;
        Ok(t.sum(p))
    };
    let feat = GradCheck {
        eps: 1e-5,
        max_entries_per_param: None,
        params: Some(vec![fid]),
    }
    .run(&mut store, f)
    .unwrap();
    assert!(feat.max_relative_error < 1e-6, "{feat:?}");
    let coords = GradCheck {
        eps: 1e-6,
        max_entries_per_param: None,
        params: Some(vec![xid, yid]),
    }
    .run(&mut store, f)
    .unwrap();
    assert!(coords.max_relative_error < 1e-5, "{coords:?}");
}

// ---- AdamW ---------------------------------------------------------------

fn scalar_param(v: f64, g: Option<f64>) -> ParamStore {
    let mut s = ParamStore::new();
    let id = s.add("theta", Tensor::scalar(v));
    if let Some(g) = g {
        s.accumulate_grad(id, &[g]).unwrap();
    }
    s
}

#[test]
fn adamw_zero_gradient_only_decays() {
    let mut s = scalar_param(1.0, Some(0.0));
    AdamW::default().step_all(&mut s).unwrap();
    let v = s.value(s.find("theta").unwrap()).data()[0];
    assert!((v - 0.9999995).abs() < 1e-16, "{v}");
}

#[test]
fn adamw_single_step_matches_hand_execution() {
    let mut s = scalar_param(1.0, Some(1.0));
    let opt = AdamW::default();
    opt.step_all(&mut s).unwrap();
    let (b1, b2, lr, eps, wd) = (0.9f64, 0.999f64, 1e-4, 1e-8, 5e-3);
    let m = (1.0 - b1) * 1.0;
    let v = (1.0 - b2) * 1.0;
    let mhat = m / (1.0 - b1);
    let vhat = v / (1.0 - b2);
    let expected = 1.0 - lr * (mhat / (vhat.sqrt() + eps)) - lr * wd * 1.0;
    let got = s.value(s.find("theta").unwrap()).data()[0];
    assert!((got - expected).abs() < 1e-15, "{got} vs {expected}");
}

#[test]
fn adamw_descends_on_a_quadratic() {
    let opt = AdamW {
        weight_decay: 0.0,
        lr: 0.1,
        ..AdamW::default()
    };
    let mut s = scalar_param(1.0, None);
    let id = s.find("theta").unwrap();
    let f0 = s.value(id).data()[0].powi(2);
    for _ in 0..2 {
        let theta = s.value(id).data()[0];
        s.zero_grad();
        s.accumulate_grad(id, &[2.0 * theta]).unwrap();
        opt.step_all(&mut s).unwrap();
    }
    assert!(s.value(id).data()[0].powi(2) < f0);
    assert_eq!(s.get(id).t, 2);
}

#[test]
fn adamw_missing_gradient_is_contract_error() {
    let mut s = scalar_param(1.0, None);
    assert!(matches!(AdamW::default().step_all(&mut s), Err(Error::Contract(_))));
    assert_eq!(s.value(s.find("theta").unwrap()).data()[0], 1.0);
}

// ---- grad_check itself ---------------------------------------------------

#[test]
fn grad_check_exact_on_sum_of_squares() {
    let mut rng = Rng::new(15);
    let mut store = ParamStore::new();
    store.add("a", Tensor::randn(vec![3, 4], 1.0, &mut rng));
    store.add("b", Tensor::randn(vec![5], 1.0, &mut rng));
    let err = grad_check(&mut store, 1e-5, |s, t| {
        let terms: Vec<_> = s
            .ids()
            .map(|id| {
                let v = t.param(s, id);
                (t.sum_squares(v), 1.0)
            })
            .collect();
        t.linear(&terms)
    })
    .unwrap();
    assert!(err < 1e-9, "{err}");
}

#[test]
fn grad_check_detects_a_wrong_gradient() {
    // relu(x) with x at exactly 0 has a one-sided analytic gradient of 0
    // while the central difference sees 0.5.
    let mut store = ParamStore::new();
    store.add("x", Tensor::zeros(vec![1]));
    let err = grad_check(&mut store, 1e-5, |s, t| {
        let x = t.param(s, s.find("x").unwrap());
        let r = t.relu(x);
        Ok(t.sum(r))
    })
    .unwrap();
    assert!((err - 0.5).abs() < 1e-9);
}

#[test]
fn grad_check_rejects_non_finite_values() {
    let mut store = ParamStore::new();
    store.add("x", Tensor::scalar(f64::NAN));
    let r = grad_check(&mut store, 1e-5, |s, t| {
        let x = t.param(s, s.find("x").unwrap());
        Ok(t.sum(x))
    });
    assert!(matches!(r, Err(Error::NonFinite(_))));
}

#[test]
fn grad_check_on_two_layer_conv_focal_net() {
    use bda_core::losses::{focal_loss, FocalConfig};
    let mut rng = Rng::new(16);
    let mut store = ParamStore::new();
    let w1 = store.add("w1", Tensor::randn(vec![3, 2, 3, 3], 0.5, &mut rng));
    let w2 = store.add("w2", Tensor::randn(vec![4, 3, 1, 1], 0.5, &mut rng));
    let x = Tensor::randn(vec![1, 2, 4, 4], 1.0, &mut rng);
    let target: Vec<u8> = (0..16).map(|i| (i % 5) as u8).collect();
    let cfg = FocalConfig::default();
    let err = grad_check(&mut store, 1e-6, |s, t| {
        let xi = t.constant(x.clone());
        let a = t.param(s, w1);
        let h = t.conv2d(xi, a, None, 1, 1)?;
        let h = t.sigmoid(h);
        let b = t.param(s, w2);
        let logits = t.conv2d(h, b, None, 1, 0)?;
        let p = t.softmax_channels(logits)?;
        focal_loss(t, p, &target, &cfg)
    })
    .unwrap();
    assert!(err < 1e-4, "{err}");
}

#[test]
fn operations_are_bit_deterministic() {
    let run = || {
        let mut rng = Rng::new(99);
        let x = Tensor::randn(vec![1, 3, 6, 6], 1.0, &mut rng);
        let w = Tensor::randn(vec![4, 3, 3, 3], 1.0, &mut rng);
        let (y, _, _) = bda_core::numerics::kernels::conv2d_forward(&x, &w, None, 1, 1).unwrap();
        upsample_bilinear(&y, 11, 13).unwrap()
    };
    let (a, b) = (run(), run());
    assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn relu_propagates_nan() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::new(vec![3], vec![f64::NAN, -1.0, 2.0]).unwrap());
    let y = tape.relu(x);
    let v = tape.value(y).data();
    assert!(v[0].is_nan());
    assert_eq!(&v[1..], [0.0, 2.0]);
}
