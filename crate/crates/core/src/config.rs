//! Flat `key = value` run configuration.
//!
//! Keys are namespaced (`model.`, `losses.`, `train.`, `data.`). Lines
//! starting with `#` and blank lines are ignored. Unknown keys are
//! rejected.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::Enhancements;
use crate::trainer::TrainConfig;

/// Effective settings of a run. Defaults are the toy preset.
#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub train: TrainConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            train: TrainConfig::toy(),
        }
    }
}

/// Every accepted key with a one-line description.
pub const KEYS: [(&str, &str); 21] = [
    ("model.stage_channels", "four strictly increasing encoder widths"),
    ("model.enable_focal", "focal term in the damage loss"),
    ("model.enable_ag_building", "attention gates in the building decoder"),
    ("model.enable_ag_damage", "attention gates in the damage decoder"),
    ("model.enable_align", "feature alignment between pre and post"),
    ("losses.focal_alpha", "focal weights for damage levels 1..4"),
    ("losses.focal_alpha_bg", "focal background weight (unused on building pixels)"),
    ("losses.focal_gamma", "focal exponent"),
    ("losses.w_ce", "cross-entropy weight"),
    ("losses.w_focal", "focal weight"),
    ("losses.w_lovasz", "Lovasz-softmax weight"),
    ("train.iterations", "optimisation steps"),
    ("train.batch_size", "pairs per step"),
    ("train.lr", "AdamW learning rate"),
    ("train.weight_decay", "AdamW decoupled weight decay"),
    ("train.crop", "square training crop, multiple of 16"),
    ("train.eval_every", "validation cadence in steps, 0 disables"),
    ("train.augment", "random flips, quarter turns and crops"),
    ("train.seed", "seed for initialisation, batching and augmentation"),
    ("data.train_manifest", "dataset manifest for training"),
    ("data.valid_manifest", "manifest whose valid split is used; defaults to the training one"),
];

fn scalar<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::config(format!("{key}: cannot parse {v:?}")))
}

fn boolean(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::config(format!("{key}: expected true or false, got {v:?}"))),
    }
}

fn list<T: FromStr + Copy, const N: usize>(key: &str, v: &str) -> Result<[T; N]> {
    let items: Vec<T> = v.split(',').map(|s| scalar(key, s.trim())).collect::<Result<_>>()?;
    items
        .try_into()
        .map_err(|_| Error::config(format!("{key}: expected {N} comma-separated values, got {v:?}")))
}

fn path(v: &str) -> Option<PathBuf> {
    (!v.is_empty()).then(|| PathBuf::from(v))
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl Config {
    /// Sets one key from its text value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let t = &mut self.train;
        let m = &mut t.model;
        match key {
            "model.stage_channels" => m.stage_channels = list(key, v)?,
            "model.enable_focal" => m.enable_focal = boolean(key, v)?,
            "model.enable_ag_building" => m.enable_ag_building = boolean(key, v)?,
            "model.enable_ag_damage" => m.enable_ag_damage = boolean(key, v)?,
            "model.enable_align" => m.enable_align = boolean(key, v)?,
            "losses.focal_alpha" => m.focal.alpha = list(key, v)?,
            "losses.focal_alpha_bg" => m.focal.alpha_bg = scalar(key, v)?,
            "losses.focal_gamma" => m.focal.gamma = scalar(key, v)?,
            "losses.w_ce" => m.loss_weights.w_ce = scalar(key, v)?,
            "losses.w_focal" => m.loss_weights.w_focal = scalar(key, v)?,
            "losses.w_lovasz" => m.loss_weights.w_lovasz = scalar(key, v)?,
            "train.iterations" => t.iterations = scalar(key, v)?,
            "train.batch_size" => t.batch_size = scalar(key, v)?,
            "train.lr" => t.lr = scalar(key, v)?,
            "train.weight_decay" => t.weight_decay = scalar(key, v)?,
            "train.crop" => t.crop = scalar(key, v)?,
            "train.eval_every" => t.eval_every = scalar(key, v)?,
            "train.augment" => t.augment = boolean(key, v)?,
            "train.seed" => t.seed = scalar(key, v)?,
            "data.train_manifest" => t.train_manifest = path(v),
            "data.valid_manifest" => t.valid_manifest = path(v),
            _ => return Err(Error::config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::config(format!("expected key=value, got {assignment:?}")))?;
        self.set(k.trim(), v)
    }

    pub fn set_variant(&mut self, e: Enhancements) {
        self.train.model = self.train.model.clone().with_enhancements(e);
    }

    /// Applies the lines of `text` on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}: expected key = value", n + 1)))?;
            let k = k.trim();
            if !seen.insert(k.to_string()) {
                return Err(Error::config(format!("line {}: duplicate key {k:?}", n + 1)));
            }
            self.set(k, v).map_err(|e| Error::config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Config::default();
        c.apply_text(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::from(e).in_file(path))?;
        Config::parse(&text).map_err(|e| e.in_file(path))
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()
    }

    /// Text value of a key.
    pub fn get(&self, key: &str) -> Option<String> {
        let t = &self.train;
        let m = &t.model;
        let p = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        Some(match key {
            "model.stage_channels" => join(&m.stage_channels),
            "model.enable_focal" => m.enable_focal.to_string(),
            "model.enable_ag_building" => m.enable_ag_building.to_string(),
            "model.enable_ag_damage" => m.enable_ag_damage.to_string(),
            "model.enable_align" => m.enable_align.to_string(),
            "losses.focal_alpha" => join(&m.focal.alpha),
            "losses.focal_alpha_bg" => m.focal.alpha_bg.to_string(),
            "losses.focal_gamma" => m.focal.gamma.to_string(),
            "losses.w_ce" => m.loss_weights.w_ce.to_string(),
            "losses.w_focal" => m.loss_weights.w_focal.to_string(),
            "losses.w_lovasz" => m.loss_weights.w_lovasz.to_string(),
            "train.iterations" => t.iterations.to_string(),
            "train.batch_size" => t.batch_size.to_string(),
            "train.lr" => t.lr.to_string(),
            "train.weight_decay" => t.weight_decay.to_string(),
            "train.crop" => t.crop.to_string(),
            "train.eval_every" => t.eval_every.to_string(),
            "train.augment" => t.augment.to_string(),
            "train.seed" => t.seed.to_string(),
            "data.train_manifest" => p(&t.train_manifest),
            "data.valid_manifest" => p(&t.valid_manifest),
            _ => return None,
        })
    }

    /// Every key with its effective value, one per line. Parsing the text
    /// gives back the same configuration.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, _) in KEYS.iter() {
            let _ = writeln!(s, "{k} = {}", self.get(k).expect("listed key"));
        }
        s
    }

    /// The effective configuration as a JSON object of strings.
    pub fn to_json(&self) -> serde_json::Value {
        let map = KEYS.iter()
            .map(|(k, _)| (k.to_string(), serde_json::Value::from(self.get(k).expect("listed key"))))
            .collect();
        serde_json::Value::Object(map)
    }

    /// Inverse of [`Config::to_json`].
    pub fn from_json(v: &serde_json::Value) -> Result<Self> {
        let obj = v.as_object().ok_or_else(|| Error::config("config echo must be a JSON object"))?;
        let mut c = Config::default();
        for (k, v) in obj {
            let text = v.as_str().ok_or_else(|| Error::config(format!("{k}: value must be a string")))?;
            c.set(k, text)?;
        }
        c.validate()?;
        Ok(c)
    }

    /// Key list with descriptions and defaults.
    pub fn describe() -> String {
        let d = Config::default();
        let mut s = String::new();
        for (k, doc) in KEYS.iter() {
            let _ = writeln!(s, "{k:<26} {doc} (default: {:?})", d.get(k).expect("listed key"));
        }
        s
    }
}
