//! Python module `bda`.

use std::path::PathBuf;

use bda_core::config::{Config, KEYS};
use bda_core::dataio::{
    parse_labels, rasterize_mask, rasterize_mask_pip, DatasetManifest, Mask, MaskKind, MaskPair, Split,
};
use bda_core::diagnostics::gradient_suite;
use bda_core::losses::{focal_loss as core_focal, FocalConfig};
use bda_core::metrics::{compute_scores, ConfusionMatrix, ScoreReport};
use bda_core::model::{Enhancements, Model};
use bda_core::numerics::{Tape, Tensor};
use bda_core::trainer::synth::overfit_fixture;
use bda_core::trainer::{evaluate, train, TrainConfig};
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

fn err(e: bda_core::Error) -> PyErr {
    match &e {
        bda_core::Error::Config(_) | bda_core::Error::Contract(_) => PyValueError::new_err(e.to_string()),
        bda_core::Error::Io(_) | bda_core::Error::File { .. } => PyIOError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn report_dict<'py>(py: Python<'py>, r: &ScoreReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("f1_loc", r.f1_loc)?;
    d.set_item("f1_clf", r.f1_clf)?;
    d.set_item("f1_oa", r.f1_oa)?;
    d.set_item("f1_levels", r.f1_levels.to_vec())?;
    d.set_item("samples", r.samples)?;
    d.set_item("variant", &r.variant)?;
    d.set_item("dataset", &r.dataset)?;
    Ok(d)
}

#[pyfunction]
fn version() -> &'static str {
    env!("CARGO_PKG_VERSION")
}

/// `(key, description)` for every configuration key.
#[pyfunction]
fn config_keys() -> Vec<(&'static str, &'static str)> {
    KEYS.to_vec()
}

/// Effective configuration of a config text as a dict of strings.
#[pyfunction]
#[pyo3(signature = (text = ""))]
fn parse_config<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyDict>> {
    let cfg = Config::parse(text).map_err(err)?;
    let d = PyDict::new(py);
    for (k, _) in KEYS {
        d.set_item(k, cfg.get(k))?;
    }
    Ok(d)
}

/// Canonical name of a variant, e.g. `"AGB+FOCAL"` -> `"FOCAL + AGB"`.
#[pyfunction]
fn variant_name(name: &str) -> PyResult<String> {
    Ok(Enhancements::parse(name).map_err(err)?.name())
}

/// Mean focal loss over pixels. `probs` holds one 4-vector of damage-level
/// probabilities per pixel; targets are levels 1..4, 0 skips the pixel.
#[pyfunction]
#[pyo3(signature = (probs, targets, alpha = [0.6, 1.6, 1.1, 1.1], gamma = 1.5))]
fn focal_loss(probs: Vec<[f64; 4]>, targets: Vec<u8>, alpha: [f64; 4], gamma: f64) -> PyResult<f64> {
    let n = probs.len();
    if targets.len() != n {
        return Err(PyValueError::new_err(format!("{n} pixels but {} targets", targets.len())));
    }
    let mut data = vec![0.0; 4 * n];
    for (i, p) in probs.iter().enumerate() {
        for c in 0..4 {
            data[c * n + i] = p[c];
        }
    }
    let cfg = FocalConfig {
        alpha,
        alpha_bg: FocalConfig::default().alpha_bg,
        gamma,
    };
    cfg.validate().map_err(err)?;
    let mut tape = Tape::new();
    let v = tape.constant(Tensor::new(vec![1, 4, 1, n], data).map_err(err)?);
    let out = core_focal(&mut tape, v, &targets, &cfg).map_err(err)?;
    Ok(tape.scalar(out))
}

/// Rasterizes a label document into a row-major mask, as a list of ints.
#[pyfunction]
#[pyo3(signature = (labels_json, height, width, kind = "dmg", method = "scanline"))]
fn rasterize<'py>(
    py: Python<'py>,
    labels_json: &str,
    height: usize,
    width: usize,
    kind: &str,
    method: &str,
) -> PyResult<Bound<'py, PyList>> {
    let polys = parse_labels(labels_json.as_bytes()).map_err(err)?;
    let kind = match kind {
        "loc" => MaskKind::Loc,
        "dmg" => MaskKind::Dmg,
        k => return Err(PyValueError::new_err(format!("kind must be 'loc' or 'dmg', got {k:?}"))),
    };
    let m = match method {
        "scanline" => rasterize_mask(&polys, height, width, kind),
        "point" => rasterize_mask_pip(&polys, height, width, kind),
        m => return Err(PyValueError::new_err(format!("method must be 'scanline' or 'point', got {m:?}"))),
    };
    PyList::new(py, m.data)
}

/// Scores predicted masks against ground-truth damage masks. Each argument
/// is a list of row-major `height × width` masks.
#[pyfunction]
fn scores<'py>(
    py: Python<'py>,
    pred_loc: Vec<Vec<u8>>,
    pred_dmg: Vec<Vec<u8>>,
    gt_dmg: Vec<Vec<u8>>,
    height: usize,
    width: usize,
) -> PyResult<Bound<'py, PyDict>> {
    if pred_loc.len() != gt_dmg.len() || pred_dmg.len() != gt_dmg.len() {
        return Err(PyValueError::new_err("mask lists differ in length"));
    }
    let mut cm = ConfusionMatrix::new();
    for ((l, d), g) in pred_loc.into_iter().zip(pred_dmg).zip(gt_dmg) {
        let mask = |v: Vec<u8>| Mask::new(height, width, v).map_err(err);
        let g = mask(g)?;
        let gt = MaskPair::new(g.footprint(), g).map_err(err)?;
        cm.accumulate(&mask(l)?, &mask(d)?, &gt).map_err(err)?;
    }
    report_dict(py, &compute_scores(&cm))
}

/// Finite-difference check of every component: `(name, max_rel_err, tol)`.
#[pyfunction]
#[pyo3(signature = (seed = 0))]
fn gradcheck(seed: u64) -> PyResult<Vec<(String, f64, f64)>> {
    Ok(gradient_suite(seed)
        .map_err(err)?
        .into_iter()
        .map(|c| (c.name, c.max_relative_error, c.tolerance))
        .collect())
}

/// Trains a variant on the four-pair overfit fixture and scores it on the
/// same pairs.
#[pyfunction]
#[pyo3(signature = (variant = "FOCAL + ALIGN + AGB", iterations = 100, seed = 0, stage_channels = [16, 32, 64, 128]))]
fn overfit<'py>(
    py: Python<'py>,
    variant: &str,
    iterations: usize,
    seed: u64,
    stage_channels: [usize; 4],
) -> PyResult<Bound<'py, PyDict>> {
    let e = Enhancements::parse(variant).map_err(err)?;
    let mut cfg = TrainConfig {
        iterations,
        eval_every: 0,
        seed,
        ..TrainConfig::toy()
    };
    cfg.model.stage_channels = stage_channels;
    cfg.model = cfg.model.with_enhancements(e);
    let data = overfit_fixture(seed).map_err(err)?;
    let report = py
        .detach(|| -> bda_core::Result<ScoreReport> {
            let out = train(&cfg, &data, &[])?;
            evaluate(&out.best, &data)
        })
        .map_err(err)?;
    report_dict(py, &report.labeled(&e.name(), "overfit"))
}

/// Scores a checkpoint on a manifest split.
#[pyfunction]
#[pyo3(signature = (checkpoint, manifest, split = "test"))]
fn evaluate_checkpoint<'py>(
    py: Python<'py>,
    checkpoint: PathBuf,
    manifest: PathBuf,
    split: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let split = Split::parse(split).ok_or_else(|| PyValueError::new_err(format!("unknown split {split:?}")))?;
    let report = py
        .detach(|| -> bda_core::Result<ScoreReport> {
            let model = Model::load(&checkpoint)?.model;
            let m = DatasetManifest::load(&manifest)?;
            Ok(evaluate(&model, &m.load_split(split)?)?.labeled(&model.variant_name(), &m.name))
        })
        .map_err(err)?;
    report_dict(py, &report)
}

#[pymodule]
fn bda(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(version, m)?)?;
    m.add_function(wrap_pyfunction!(config_keys, m)?)?;
    m.add_function(wrap_pyfunction!(parse_config, m)?)?;
    m.add_function(wrap_pyfunction!(variant_name, m)?)?;
    m.add_function(wrap_pyfunction!(focal_loss, m)?)?;
    m.add_function(wrap_pyfunction!(rasterize, m)?)?;
    m.add_function(wrap_pyfunction!(scores, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    m.add_function(wrap_pyfunction!(overfit, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_checkpoint, m)?)?;
    Ok(())
}
