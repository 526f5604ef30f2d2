//! Pixel-wise localization and damage scoring.
//!
//! Damage counts are taken at ground-truth building pixels only. A
//! background prediction there is a miss for the true level and is not
//! charged to any other level.

use serde::Deserialize;

use crate::dataio::{Mask, MaskKind, MaskPair};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Localization counts plus a level × prediction damage table.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub loc_tp: u64,
    pub loc_fp: u64,
    pub loc_fn: u64,
    pub loc_tn: u64,
    /// `dmg[gt − 1][pred]` with `pred` in `0..5`; column 0 is background.
    pub dmg: [[u64; 5]; 4],
    pub samples: usize,
}

impl ConfusionMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn accumulate(&mut self, pred_loc: &Mask, pred_dmg: &Mask, gt: &MaskPair) -> Result<()> {
        for m in [pred_loc, pred_dmg] {
            if (m.h, m.w) != (gt.h(), gt.w()) {
                return Err(Error::contract(format!(
                    "prediction {}×{} vs ground truth {}×{}",
                    m.h,
                    m.w,
                    gt.h(),
                    gt.w()
                )));
            }
        }
        pred_loc.check_values(MaskKind::Loc).map_err(|e| Error::contract(e.to_string()))?;
        pred_dmg.check_values(MaskKind::Dmg).map_err(|e| Error::contract(e.to_string()))?;
        gt.validate().map_err(|e| Error::contract(e.to_string()))?;
        for i in 0..pred_loc.data.len() {
            match (gt.loc.data[i] == 1, pred_loc.data[i] == 1) {
                (true, true) => self.loc_tp += 1,
                (false, true) => self.loc_fp += 1,
                (true, false) => self.loc_fn += 1,
                (false, false) => self.loc_tn += 1,
            }
            let g = gt.dmg.data[i];
            if g > 0 {
                self.dmg[(g - 1) as usize][pred_dmg.data[i] as usize] += 1;
            }
        }
        self.samples += 1;
        Ok(())
    }

    /// Adds another matrix's counts.
    pub fn merge(&mut self, other: &ConfusionMatrix) {
        self.loc_tp += other.loc_tp;
        self.loc_fp += other.loc_fp;
        self.loc_fn += other.loc_fn;
        self.loc_tn += other.loc_tn;
        for (a, b) in self.dmg.iter_mut().zip(&other.dmg) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        self.samples += other.samples;
    }

    /// `(tp, fp, fn)` for damage level `k` in `1..=4`.
    pub fn level_counts(&self, k: usize) -> (u64, u64, u64) {
        let row = &self.dmg[k - 1];
        let tp = row[k];
        let fn_ = row.iter().sum::<u64>() - tp;
        let fp = (1..=4).filter(|&j| j != k).map(|j| self.dmg[j - 1][k]).sum();
        (tp, fp, fn_)
    }
}

/// `2TP / (2TP + FP + FN)`, zero when the denominator is zero.
pub fn f1(tp: u64, fp: u64, fn_: u64) -> f64 {
    let d = 2 * tp + fp + fn_;
    if d == 0 {
        0.0
    } else {
        (2 * tp) as f64 / d as f64
    }
}

/// Harmonic mean; zero if any entry is zero.
pub fn harmonic_mean(xs: &[f64]) -> f64 {
    if xs.is_empty() || xs.iter().any(|&x| x <= 0.0) {
        return 0.0;
    }
    xs.len() as f64 / xs.iter().map(|x| 1.0 / x).sum::<f64>()
}

/// Scores as fractions in `[0, 1]`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScoreReport {
    pub f1_loc: f64,
    pub f1_levels: [f64; 4],
    pub f1_clf: f64,
    pub f1_oa: f64,
    pub samples: usize,
    pub variant: String,
    pub dataset: String,
}

pub fn compute_scores(cm: &ConfusionMatrix) -> ScoreReport {
    let f1_loc = f1(cm.loc_tp, cm.loc_fp, cm.loc_fn);
    let mut f1_levels = [0.0; 4];
    for (k, slot) in f1_levels.iter_mut().enumerate() {
        let (tp, fp, fn_) = cm.level_counts(k + 1);
        *slot = f1(tp, fp, fn_);
    }
    let f1_clf = harmonic_mean(&f1_levels);
    ScoreReport {
        f1_loc,
        f1_levels,
        f1_clf,
        f1_oa: 0.3 * f1_loc + 0.7 * f1_clf,
        samples: cm.samples,
        variant: String::new(),
        dataset: String::new(),
    }
}

pub const REPORT_FIELDS: [&str; 10] = [
    "f1_loc", "f1_clf", "f1_oa", "f1_l1", "f1_l2", "f1_l3", "f1_l4", "samples", "variant", "dataset",
];

#[derive(Deserialize)]
struct ReportJson {
    f1_loc: f64,
    f1_clf: f64,
    f1_oa: f64,
    f1_l1: f64,
    f1_l2: f64,
    f1_l3: f64,
    f1_l4: f64,
    samples: usize,
    variant: String,
    dataset: String,
}

fn pct(x: f64) -> String {
    format!("{:.4}", 100.0 * x)
}

impl ScoreReport {
    pub fn labeled(mut self, variant: &str, dataset: &str) -> Self {
        self.variant = variant.to_string();
        self.dataset = dataset.to_string();
        self
    }

    fn score_fields(&self) -> [f64; 7] {
        let l = self.f1_levels;
        [self.f1_loc, self.f1_clf, self.f1_oa, l[0], l[1], l[2], l[3]]
    }

    /// One JSON object, percent values with four decimals, fixed key order.
    pub fn to_json(&self) -> String {
        let mut parts: Vec<String> = REPORT_FIELDS[..7]
            .iter()
            .zip(self.score_fields())
            .map(|(k, v)| format!("\"{k}\": {}", pct(v)))
            .collect();
        parts.push(format!("\"samples\": {}", self.samples));
        parts.push(format!("\"variant\": {}", serde_json::Value::from(self.variant.as_str())));
        parts.push(format!("\"dataset\": {}", serde_json::Value::from(self.dataset.as_str())));
        format!("{{{}}}\n", parts.join(", "))
    }

    /// Inverse of [`ScoreReport::to_json`], up to the serialized precision.
    pub fn from_json(text: &str) -> Result<Self> {
        let r: ReportJson = serde_json::from_str(text)?;
        Ok(ScoreReport {
            f1_loc: r.f1_loc / 100.0,
            f1_levels: [r.f1_l1 / 100.0, r.f1_l2 / 100.0, r.f1_l3 / 100.0, r.f1_l4 / 100.0],
            f1_clf: r.f1_clf / 100.0,
            f1_oa: r.f1_oa / 100.0,
            samples: r.samples,
            variant: r.variant,
            dataset: r.dataset,
        })
    }

    pub fn csv_header() -> String {
        REPORT_FIELDS.join(",")
    }

    pub fn to_csv_row(&self) -> String {
        let mut cells: Vec<String> = self.score_fields().iter().map(|&v| pct(v)).collect();
        cells.push(self.samples.to_string());
        for s in [&self.variant, &self.dataset] {
            if s.contains([',', '"', '\n']) {
                cells.push(format!("\"{}\"", s.replace('"', "\"\"")));
            } else {
                cells.push(s.clone());
            }
        }
        cells.join(",")
    }

    /// Two-decimal percent display in table column order.
    pub fn display_row(&self) -> String {
        let cells: Vec<String> = self.score_fields().iter().map(|v| format!("{:.2}", 100.0 * v)).collect();
        format!("{:<22} {}", self.variant, cells.join("  "))
    }
}

/// Channel argmax of `B×C×H×W` logits, one mask per batch item. Ties go
/// to the lower class.
pub fn argmax_masks(logits: &Tensor) -> Result<Vec<Mask>> {
    let (b, c, h, w) = logits.dims4()?;
    if c > 256 {
        return Err(Error::contract("too many classes for a byte mask"));
    }
    let d = logits.data();
    let hw = h * w;
    Ok((0..b)
        .map(|bi| {
            let data = (0..hw)
                .map(|p| {
                    let mut best = 0;
                    for ch in 1..c {
                        if d[(bi * c + ch) * hw + p] > d[(bi * c + best) * hw + p] {
                            best = ch;
                        }
                    }
                    best as u8
                })
                .collect();
            Mask { h, w, data }
        })
        .collect())
}
