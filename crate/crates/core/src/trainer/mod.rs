//! Training loop, evaluation and the synthetic experiments.

mod experiments;
pub mod synth;

pub use experiments::{
    imbalance_experiment, sweep, sweep_csv, sweep_datasets, ImbalanceConfig, ImbalanceRow, ImbalanceSummary, SweepConfig,
    SweepDataset, SweepRow,
};

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::dataio::{augment_sample, DatasetManifest, Mask, MaskPair, Sample, Split, Transform};
use crate::error::{Error, Result};
use crate::losses::HeadLoss;
use crate::metrics::{compute_scores, ConfusionMatrix, ScoreReport};
use crate::model::{Model, ModelConfig, SIZE_DIVISOR};
use crate::numerics::{AdamW, Rng, Tape, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Square training crop; must be a multiple of 16.
    pub crop: usize,
    /// Validate every this many steps; 0 disables validation.
    pub eval_every: usize,
    /// Random flips, quarter turns and crops. Off means plain crops at the
    /// top-left corner.
    pub augment: bool,
    pub seed: u64,
    pub train_manifest: Option<PathBuf>,
    pub valid_manifest: Option<PathBuf>,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::full_scale()
    }
}

impl TrainConfig {
    /// Full-size schedule: 256 crops, batch 8, 50000 steps.
    pub fn full_scale() -> Self {
        TrainConfig {
            iterations: 50_000,
            batch_size: 8,
            lr: 1e-4,
            weight_decay: 5e-3,
            crop: 256,
            eval_every: 1000,
            augment: true,
            seed: 0,
            train_manifest: None,
            valid_manifest: None,
            model: ModelConfig::default(),
        }
    }

    /// Small CPU schedule for the 32×32 synthetic fixtures.
    pub fn toy() -> Self {
        TrainConfig {
            iterations: 500,
            batch_size: 4,
            lr: 2e-3,
            crop: 32,
            eval_every: 50,
            ..Self::full_scale()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::config("train.iterations must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size must be at least 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!("train.lr must be positive, got {}", self.lr)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::config(format!("train.weight_decay must be nonnegative, got {}", self.weight_decay)));
        }
        if self.crop == 0 || self.crop % SIZE_DIVISOR != 0 {
            return Err(Error::config(format!("train.crop must be a positive multiple of {SIZE_DIVISOR}, got {}", self.crop)));
        }
        self.model.validate()
    }

    pub fn optimizer(&self) -> AdamW {
        AdamW {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..AdamW::default()
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub total: f64,
    pub ce: f64,
    pub focal: f64,
    pub lovasz: f64,
}

impl LossTerms {
    fn from_head(tape: &Tape, h: &HeadLoss) -> Self {
        LossTerms {
            total: tape.scalar(h.total),
            ce: h.ce,
            focal: h.focal,
            lovasz: h.lovasz,
        }
    }
}

/// One optimisation step.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainRecord {
    /// 1-based step number.
    pub iteration: usize,
    pub loss: f64,
    pub building: LossTerms,
    pub damage: LossTerms,
    pub valid: Option<ScoreReport>,
}

impl TrainRecord {
    pub fn to_json(&self) -> String {
        let valid = match &self.valid {
            Some(r) => serde_json::from_str(&r.to_json()).expect("report JSON is valid"),
            None => serde_json::Value::Null,
        };
        let v = serde_json::json!({
            "iteration": self.iteration,
            "loss": self.loss,
            "building": self.building,
            "damage": self.damage,
            "valid": valid,
        });
        v.to_string()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<TrainRecord>,
}

impl TrainLog {
    /// Line-delimited JSON, one record per step.
    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for r in &self.records {
            s.push_str(&r.to_json());
            s.push('\n');
        }
        s
    }

    pub fn losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.loss).collect()
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Highest validation `f1_oa`, or the final model without validation.
    pub best: Model,
    pub best_iteration: usize,
    pub best_report: Option<ScoreReport>,
    pub last: Model,
    pub log: TrainLog,
}

fn stack_batch(items: &[(Tensor, Tensor, MaskPair)]) -> Result<(Tensor, Tensor, Vec<u8>, Vec<u8>)> {
    let pre: Vec<Tensor> = items.iter().map(|i| i.0.clone()).collect();
    let post: Vec<Tensor> = items.iter().map(|i| i.1.clone()).collect();
    let loc = items.iter().flat_map(|i| i.2.loc.data.iter().copied()).collect();
    let dmg = items.iter().flat_map(|i| i.2.dmg.data.iter().copied()).collect();
    Ok((Tensor::stack(&pre)?, Tensor::stack(&post)?, loc, dmg))
}

/// Endless epoch-shuffled index stream.
struct BatchSampler {
    rng: Rng,
    order: Vec<usize>,
    pos: usize,
}

impl BatchSampler {
    fn new(n: usize, seed: u64) -> Self {
        let mut s = BatchSampler {
            rng: Rng::derived(seed, "batches"),
            order: (0..n).collect(),
            pos: n,
        };
        s.refill();
        s
    }

    fn refill(&mut self) {
        self.rng.shuffle(&mut self.order);
        self.pos = 0;
    }

    fn next(&mut self, k: usize) -> Vec<usize> {
        (0..k)
            .map(|_| {
                if self.pos == self.order.len() {
                    self.refill();
                }
                self.pos += 1;
                self.order[self.pos - 1]
            })
            .collect()
    }
}

fn check_samples(samples: &[Sample], what: &str) -> Result<()> {
    for s in samples {
        s.masks.validate().map_err(|e| Error::Document(format!("{what} sample {}: {e}", s.id)))?;
        let (h, w) = (s.masks.h(), s.masks.w());
        if s.pre.shape() != [3, h, w] || s.post.shape() != [3, h, w] {
            return Err(Error::Document(format!(
                "{what} sample {}: images {:?}/{:?} do not match {h}×{w} masks",
                s.id,
                s.pre.shape(),
                s.post.shape()
            )));
        }
    }
    Ok(())
}

/// Runs the configured number of AdamW steps on `train`, validating on
/// `valid` every `eval_every` steps and keeping the best model by `f1_oa`.
/// Ties keep the earlier model.
pub fn train(cfg: &TrainConfig, train_set: &[Sample], valid_set: &[Sample]) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Document("training set is empty".into()));
    }
    check_samples(train_set, "training")?;
    check_samples(valid_set, "validation")?;
    let mut model = Model::build(&cfg.model, cfg.seed)?;
    let opt = cfg.optimizer();
    let active = model.active_params();
    let mut sampler = BatchSampler::new(train_set.len(), cfg.seed);
    let mut aug_rng = Rng::derived(cfg.seed, "augment");
    let validate_on = cfg.eval_every > 0 && !valid_set.is_empty();
    let mut log = TrainLog::default();
    let mut best: Option<(Model, usize, ScoreReport)> = None;
    for it in 1..=cfg.iterations {
        let idx = sampler.next(cfg.batch_size);
        let items = idx
            .iter()
            .map(|&i| {
                let s = &train_set[i];
                if cfg.augment {
                    augment_sample(&s.pre, &s.post, &s.masks, &mut aug_rng, cfg.crop)
                } else {
                    let t = Transform {
                        hflip: false,
                        vflip: false,
                        rot: 0,
                        crop: cfg.crop,
                        crop_y: 0,
                        crop_x: 0,
                    };
                    if cfg.crop > s.masks.h().min(s.masks.w()) {
                        return Err(Error::config(format!("crop {} does not fit sample {}", cfg.crop, s.id)));
                    }
                    Ok((
                        t.apply_image(&s.pre)?,
                        t.apply_image(&s.post)?,
                        MaskPair {
                            loc: t.apply_mask(&s.masks.loc)?,
                            dmg: t.apply_mask(&s.masks.dmg)?,
                        },
                    ))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let (pre, post, loc, dmg) = stack_batch(&items)?;
        let ids = || idx.iter().map(|&i| train_set[i].id.as_str()).collect::<Vec<_>>();
        let mut tape = Tape::new();
        let out = model.forward(&mut tape, &pre, &post)?;
        let loss = model.loss(&mut tape, &out, &loc, &dmg)?;
        let value = tape.scalar(loss.total);
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("loss {value} at step {it} on batch {:?}", ids())));
        }
        let grads = tape.backward(loss.total).map_err(|e| match e {
            Error::NonFinite(m) => Error::NonFinite(format!("{m} at step {it} on batch {:?}", ids())),
            e => e,
        })?;
        let store = model.store_mut();
        store.zero_grad();
        grads.accumulate_into(store)?;
        opt.step(store, &active)?;
        let mut record = TrainRecord {
            iteration: it,
            loss: value,
            building: LossTerms::from_head(&tape, &loss.building),
            damage: LossTerms::from_head(&tape, &loss.damage),
            valid: None,
        };
        if validate_on && it % cfg.eval_every == 0 {
            let report = evaluate(&model, valid_set)?.labeled(&model.variant_name(), "valid");
            log::info!("step {it}: loss {value:.5}, valid f1_oa {:.4}", report.f1_oa);
            if best.as_ref().is_none_or(|b| report.f1_oa > b.2.f1_oa) {
                best = Some((model.clone(), it, report.clone()));
            }
            record.valid = Some(report);
        } else {
            log::debug!("step {it}: loss {value:.5}");
        }
        log.records.push(record);
    }
    model.store_mut().zero_grad();
    Ok(match best {
        Some((mut b, it, report)) => {
            b.store_mut().zero_grad();
            TrainOutcome {
                best: b,
                best_iteration: it,
                best_report: Some(report),
                last: model,
                log,
            }
        }
        None => TrainOutcome {
            best: model.clone(),
            best_iteration: cfg.iterations,
            best_report: None,
            last: model,
            log,
        },
    })
}

/// Loads the manifests named in the config and trains.
pub fn train_from_manifests(cfg: &TrainConfig) -> Result<TrainOutcome> {
    let path = cfg
        .train_manifest
        .as_ref()
        .ok_or_else(|| Error::config("train.train_manifest is required"))?;
    let train_m = DatasetManifest::load(path)?;
    let train_set = train_m.load_split(Split::Train)?;
    let valid_set = match &cfg.valid_manifest {
        Some(p) => DatasetManifest::load(p)?.load_split(Split::Valid)?,
        None => train_m.load_split(Split::Valid)?,
    };
    train(cfg, &train_set, &valid_set)
}

/// Index map for reflective padding of a length-`n` axis to `n + pad`.
fn reflect_index(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let r = i % period;
    if r < n {
        r
    } else {
        period - r
    }
}

/// Pads a `C×H×W` image on the bottom and right by reflection.
pub fn pad_reflect(img: &Tensor, h2: usize, w2: usize) -> Result<Tensor> {
    let (c, h, w) = match img.shape() {
        [c, h, w] => (*c, *h, *w),
        s => return Err(Error::contract(format!("expected a C×H×W image, got {s:?}"))),
    };
    if h2 < h || w2 < w {
        return Err(Error::contract("padding cannot shrink an image"));
    }
    let d = img.data();
    let mut out = Vec::with_capacity(c * h2 * w2);
    for ch in 0..c {
        for y in 0..h2 {
            let sy = reflect_index(y, h);
            for x in 0..w2 {
                out.push(d[(ch * h + sy) * w + reflect_index(x, w)]);
            }
        }
    }
    Tensor::new(vec![c, h2, w2], out)
}

fn crop_mask(m: &Mask, h: usize, w: usize) -> Mask {
    let data = (0..h).flat_map(|y| m.data[y * m.w..y * m.w + w].iter().copied()).collect();
    Mask { h, w, data }
}

fn padded_pair(pre: &Tensor, post: &Tensor) -> Result<(Tensor, Tensor, usize, usize)> {
    let (h, w) = match pre.shape() {
        [_, h, w] => (*h, *w),
        s => return Err(Error::contract(format!("expected a C×H×W image, got {s:?}"))),
    };
    let up = |n: usize| n.div_ceil(SIZE_DIVISOR).max(1) * SIZE_DIVISOR;
    let (h2, w2) = (up(h), up(w));
    let (a, b) = if (h2, w2) == (h, w) {
        (pre.clone(), post.clone())
    } else {
        (pad_reflect(pre, h2, w2)?, pad_reflect(post, h2, w2)?)
    };
    Ok((Tensor::stack(&[a])?, Tensor::stack(&[b])?, h, w))
}

/// Predicted building and damage masks of one `C×H×W` pair. Sizes that
/// are not multiples of 16 are padded by reflection and cropped back.
pub fn predict_sample(model: &Model, pre: &Tensor, post: &Tensor) -> Result<(Mask, Mask)> {
    let (a, b, h, w) = padded_pair(pre, post)?;
    let (loc, dmg) = model.predict(&a, &b)?;
    Ok((crop_mask(&loc[0], h, w), crop_mask(&dmg[0], h, w)))
}

/// Gate attention maps (`1×h×w`, values in `[0, 1]`) and alignment flows
/// (`2×h×w`, channel 0 horizontal) of one pair, each cropped to the part
/// covering the unpadded image.
#[derive(Clone, Debug)]
pub struct DiagnosticMaps {
    pub attention: Vec<(String, Tensor)>,
    /// Named `align.s1` (finest) to `align.s4`.
    pub flows: Vec<(String, Tensor)>,
}

pub fn diagnostic_maps(model: &Model, pre: &Tensor, post: &Tensor) -> Result<DiagnosticMaps> {
    let (a, b, h, w) = padded_pair(pre, post)?;
    let (hp, wp) = (a.shape()[2], a.shape()[3]);
    let mut tape = Tape::new();
    let out = model.forward(&mut tape, &a, &b)?;
    let crop = |t: &Tensor| -> Result<Tensor> {
        let (_, c, hk, wk) = t.dims4()?;
        let (hc, wc) = ((h * hk).div_ceil(hp), (w * wk).div_ceil(wp));
        let mut data = Vec::with_capacity(c * hc * wc);
        for ch in 0..c {
            for y in 0..hc {
                let row = (ch * hk + y) * wk;
                data.extend_from_slice(&t.data()[row..row + wc]);
            }
        }
        Tensor::new(vec![c, hc, wc], data)
    };
    let attention = out
        .attention
        .iter()
        .map(|(name, v)| Ok((name.clone(), crop(tape.value(*v))?)))
        .collect::<Result<_>>()?;
    let flows = out
        .flows
        .iter()
        .enumerate()
        .map(|(k, v)| Ok((format!("align.s{}", k + 1), crop(tape.value(*v))?)))
        .collect::<Result<_>>()?;
    Ok(DiagnosticMaps { attention, flows })
}

/// Confusion counts of `model` over `samples`.
pub fn confusion(model: &Model, samples: &[Sample]) -> Result<ConfusionMatrix> {
    check_samples(samples, "evaluation")?;
    let mut cm = ConfusionMatrix::new();
    for s in samples {
        let (loc, dmg) = predict_sample(model, &s.pre, &s.post)?;
        cm.accumulate(&loc, &dmg, &s.masks)?;
    }
    Ok(cm)
}

/// Scores `model` on `samples`. The report's variant is the model's; the
/// dataset field is left empty.
pub fn evaluate(model: &Model, samples: &[Sample]) -> Result<ScoreReport> {
    Ok(compute_scores(&confusion(model, samples)?).labeled(&model.variant_name(), ""))
}
