use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use bda_core::config::Config;
use bda_core::dataio::{DatasetManifest, Split};
use bda_core::model::{Enhancements, Model};
use bda_core::trainer::synth::{self, Domain};
use bda_core::trainer::{evaluate, sweep_csv, sweep_datasets, train_from_manifests, SweepDataset};
use clap::{Args, ValueEnum};
use serde_json::Value;

use crate::{usage, ConfigArgs, SplitArg};

fn require_file(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(usage(format!("{what} {} does not exist", path.display())))
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Config file, then `--set` overrides, then variant and manifest flags.
fn effective_config(
    c: &ConfigArgs,
    variant: Option<&str>,
    train_manifest: Option<&PathBuf>,
    valid_manifest: Option<&PathBuf>,
) -> Result<Config> {
    let mut cfg = match &c.config {
        Some(p) => {
            require_file(p, "config file")?;
            Config::load(p)?
        }
        None => Config::default(),
    };
    for o in &c.overrides {
        cfg.apply_override(o)?;
    }
    if let Some(v) = variant {
        cfg.set_variant(Enhancements::parse(v)?);
    }
    if let Some(p) = train_manifest {
        cfg.train.train_manifest = Some(p.clone());
    }
    if let Some(p) = valid_manifest {
        cfg.train.valid_manifest = Some(p.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn split(s: SplitArg) -> Split {
    match s {
        SplitArg::Train => Split::Train,
        SplitArg::Valid => Split::Valid,
        SplitArg::Test => Split::Test,
    }
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Variant name such as "FOCAL + ALIGN + AGB"; replaces the enable flags.
    #[arg(long)]
    pub variant: Option<String>,
    /// Overrides `data.train_manifest`.
    #[arg(long)]
    pub train_manifest: Option<PathBuf>,
    /// Overrides `data.valid_manifest`.
    #[arg(long)]
    pub valid_manifest: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn train(args: &TrainArgs) -> Result<()> {
    let cfg = effective_config(
        &args.config,
        args.variant.as_deref(),
        args.train_manifest.as_ref(),
        args.valid_manifest.as_ref(),
    )?;
    let t = &cfg.train;
    let manifest = t.train_manifest.as_ref().ok_or_else(|| usage("no training manifest (data.train_manifest)"))?;
    require_file(manifest, "manifest")?;
    if let Some(v) = &t.valid_manifest {
        require_file(v, "manifest")?;
    }
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let echo = cfg.to_json();
    log::info!("training {} for {} iterations", cfg.train.model.enhancements().name(), t.iterations);
    let out = train_from_manifests(t)?;
    out.best.save(args.out.join("best.ckpt"), &echo)?;
    out.last.save(args.out.join("last.ckpt"), &echo)?;
    write(&args.out.join("train_log.jsonl"), &out.log.to_jsonl())?;
    write(&args.out.join("config.txt"), &cfg.to_text())?;
    let report = match &out.best_report {
        Some(r) => serde_json::from_str::<Value>(&r.to_json())?,
        None => Value::Null,
    };
    let summary = serde_json::json!({
        "variant": out.best.variant_name(),
        "best_iteration": out.best_iteration,
        "best_valid_report": report,
        "config": echo,
    });
    write(&args.out.join("summary.json"), &(serde_json::to_string_pretty(&summary)? + "\n"))?;
    println!(
        "{}: best iteration {} of {}, checkpoints in {}",
        out.best.variant_name(),
        out.best_iteration,
        t.iterations,
        args.out.display()
    );
    Ok(())
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Checkpoint to score (not used with --sweep).
    #[arg(long, required_unless_present = "sweep", conflicts_with = "sweep")]
    pub checkpoint: Option<PathBuf>,
    /// Dataset manifest. Repeat with --sweep to train and test on several.
    #[arg(long, required = true)]
    pub manifest: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    /// Dataset label in the report; defaults to the manifest's name.
    #[arg(long)]
    pub dataset: Option<String>,
    /// Train every variant on every manifest and score each on every
    /// manifest's test split, writing one CSV row per pair.
    #[arg(long)]
    pub sweep: bool,
    /// Restrict the sweep to these variants. Repeatable.
    #[arg(long, requires = "sweep")]
    pub variant: Vec<String>,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Output file; the report goes to stdout without it (required with --sweep).
    #[arg(long, required_if_eq("sweep", "true"))]
    pub out: Option<PathBuf>,
}

/// Report JSON with extra top-level keys appended after the score fields.
fn report_with(report_json: &str, extra: &[(&str, Value)]) -> String {
    let body = report_json.trim_end().trim_end_matches('}');
    let mut s = body.to_string();
    for (k, v) in extra {
        s.push_str(&format!(", \"{k}\": {v}"));
    }
    s.push_str("}\n");
    s
}

pub fn eval(args: &EvalArgs) -> Result<()> {
    for m in &args.manifest {
        require_file(m, "manifest")?;
    }
    if args.sweep {
        return eval_sweep(args);
    }
    if args.config.config.is_some() || !args.config.overrides.is_empty() {
        return Err(usage("--config and --set apply to --sweep only; a checkpoint carries its own config"));
    }
    let [manifest] = args.manifest.as_slice() else {
        return Err(usage("eval takes exactly one --manifest without --sweep"));
    };
    let ckpt_path = args.checkpoint.as_ref().expect("clap requires --checkpoint without --sweep");
    require_file(ckpt_path, "checkpoint")?;
    let ckpt = Model::load(ckpt_path)?;
    let m = DatasetManifest::load(manifest)?;
    let samples = m.load_split(split(args.split))?;
    let dataset = args.dataset.clone().unwrap_or_else(|| m.name.clone());
    let report = evaluate(&ckpt.model, &samples)?.labeled(&ckpt.model.variant_name(), &dataset);
    let split_name = format!("{:?}", args.split).to_lowercase();
    let text = report_with(&report.to_json(), &[("split", Value::from(split_name)), ("config", ckpt.echo)]);
    match &args.out {
        Some(p) => write(p, &text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn eval_sweep(args: &EvalArgs) -> Result<()> {
    let cfg = effective_config(&args.config, None, None, None)?;
    let variants = if args.variant.is_empty() {
        Enhancements::SWEEP.to_vec()
    } else {
        args.variant.iter().map(|v| Enhancements::parse(v)).collect::<bda_core::Result<_>>()?
    };
    let mut datasets = Vec::new();
    for path in &args.manifest {
        let m = DatasetManifest::load(path)?;
        datasets.push(SweepDataset {
            name: m.name.clone(),
            train: m.load_split(Split::Train)?,
            valid: m.load_split(Split::Valid)?,
            test: m.load_split(Split::Test)?,
        });
    }
    let names: Vec<&str> = datasets.iter().map(|d| d.name.as_str()).collect();
    if (1..names.len()).any(|i| names[..i].contains(&names[i])) {
        return Err(usage(format!("manifests must have distinct names, got {names:?}")));
    }
    let rows = sweep_datasets(&variants, &cfg.train, &datasets)?;
    let out = args.out.as_ref().expect("clap requires --out with --sweep");
    write(out, &sweep_csv(&rows))?;
    let echo = serde_json::json!({
        "manifests": args.manifest.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
        "variants": variants.iter().map(|v| v.name()).collect::<Vec<_>>(),
        "config": cfg.to_json(),
    });
    let side = out.with_extension("config.json");
    write(&side, &(serde_json::to_string_pretty(&echo)? + "\n"))?;
    for r in &rows {
        println!("{:<10} -> {:<10} {}", r.train_dataset, r.report.dataset, r.report.display_row());
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SynthKind {
    /// Uniform damage mix on the first palette.
    DomainA,
    /// Uniform damage mix on the second palette.
    DomainB,
    /// Four buildings per image with levels cycling through 1..4.
    Overfit,
    /// Level 1 and level 3 buildings at a 20:1 pixel ratio.
    Imbalance,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, value_enum)]
    pub kind: SynthKind,
    /// Number of image pairs.
    #[arg(long, default_value_t = 20)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Train, valid and test fractions.
    #[arg(long, default_value = "0.7,0.15,0.15")]
    pub split: String,
    /// Dataset root; receives images/, masks/ and manifest.json.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn synth(args: &SynthArgs) -> Result<()> {
    let r: Vec<f64> = args
        .split
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| usage(format!("--split expects three numbers, got {:?}", args.split)))?;
    let [a, b, c] = r[..] else {
        return Err(usage(format!("--split expects three numbers, got {:?}", args.split)));
    };
    let (name, samples) = match args.kind {
        SynthKind::DomainA => (Domain::A.name(), synth::domain_fixture(Domain::A, args.count, args.seed)?),
        SynthKind::DomainB => (Domain::B.name(), synth::domain_fixture(Domain::B, args.count, args.seed)?),
        SynthKind::Overfit => ("overfit", synth::fixture("overfit", args.count, &synth::overfit_config(), args.seed)?),
        SynthKind::Imbalance => ("imbalance", synth::imbalance_fixture("imbalance", args.count, args.seed)?),
    };
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let m = synth::write_dataset(&args.out, name, &samples, (a, b, c), args.seed)?;
    println!(
        "{name}: {} train, {} valid, {} test pairs in {}",
        m.split.train.len(),
        m.split.valid.len(),
        m.split.test.len(),
        args.out.display()
    );
    Ok(())
}
