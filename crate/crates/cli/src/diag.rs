use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use bda_core::dataio::{load_sample, write_gray, DatasetManifest};
use bda_core::diagnostics::gradient_suite;
use bda_core::model::Model;
use bda_core::numerics::Tensor;
use bda_core::trainer::diagnostic_maps;
use clap::Args;
use serde_json::json;

use crate::{usage, Failed};

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write the per-component results as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

pub fn gradcheck(args: &GradcheckArgs) -> Result<()> {
    let parts = gradient_suite(args.seed)?;
    println!("{:<26} {:>14} {:>10} {:>8}  result", "component", "max rel err", "tolerance", "entries");
    for c in &parts {
        println!(
            "{:<26} {:>14.3e} {:>10.0e} {:>8}  {}",
            c.name,
            c.max_relative_error,
            c.tolerance,
            c.entries_checked,
            if c.passed() { "PASS" } else { "FAIL" }
        );
    }
    if let Some(p) = &args.json {
        fs::write(p, serde_json::to_string_pretty(&parts)? + "\n").with_context(|| format!("writing {}", p.display()))?;
    }
    let failed = parts.iter().filter(|c| !c.passed()).count();
    if failed > 0 {
        return Err(Failed(format!("{failed} components failed")).into());
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct DumpArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Manifest whose root holds the sample.
    #[arg(long, conflicts_with = "root", required_unless_present = "root")]
    pub manifest: Option<PathBuf>,
    /// Dataset root holding the sample.
    #[arg(long)]
    pub root: Option<PathBuf>,
    /// Sample id, e.g. `synth-a_0003`.
    #[arg(long)]
    pub sample: String,
    #[arg(long)]
    pub out: PathBuf,
}

/// `round(255·α)`.
pub fn alpha_bytes(t: &Tensor) -> Vec<u8> {
    t.data().iter().map(|a| (255.0 * a.clamp(0.0, 1.0)).round() as u8).collect()
}

/// `round(127.5 + 127.5·Δ/scale)` with `scale = max |Δ|` over both
/// channels, or 1 for an all-zero flow.
pub fn flow_bytes(t: &Tensor) -> (Vec<u8>, Vec<u8>, f64) {
    let m = t.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let scale = if m > 0.0 { m } else { 1.0 };
    let enc = |v: &f64| (127.5 + 127.5 * v / scale).round().clamp(0.0, 255.0) as u8;
    let half = t.len() / 2;
    let (dx, dy) = t.data().split_at(half);
    (dx.iter().map(enc).collect(), dy.iter().map(enc).collect(), scale)
}

fn write_png(dir: &Path, name: &str, h: usize, w: usize, data: &[u8]) -> Result<String> {
    write_gray(&dir.join(name), h, w, data)?;
    Ok(name.to_string())
}

pub fn dump_attention(args: &DumpArgs) -> Result<()> {
    if !args.checkpoint.is_file() {
        return Err(usage(format!("checkpoint {} does not exist", args.checkpoint.display())));
    }
    let root = match (&args.manifest, &args.root) {
        (Some(m), _) => {
            if !m.is_file() {
                return Err(usage(format!("manifest {} does not exist", m.display())));
            }
            DatasetManifest::load(m)?.root
        }
        (None, Some(r)) => r.clone(),
        (None, None) => unreachable!("clap requires --manifest or --root"),
    };
    let ckpt = Model::load(&args.checkpoint)?;
    let sample = load_sample(&root, &args.sample)?;
    let maps = diagnostic_maps(&ckpt.model, &sample.pre, &sample.post)?;
    if maps.attention.is_empty() && maps.flows.is_empty() {
        log::warn!("{} has no attention gates or alignment; nothing to dump", ckpt.model.variant_name());
    }
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let mut attention = Vec::new();
    for (name, t) in &maps.attention {
        let (h, w) = (t.shape()[1], t.shape()[2]);
        let file = write_png(&args.out, &format!("{name}.png"), h, w, &alpha_bytes(t))?;
        let (lo, hi) = t.data().iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, u), &v| (l.min(v), u.max(v)));
        attention.push(json!({"name": name, "file": file, "height": h, "width": w, "min": lo, "max": hi}));
    }
    let mut flows = Vec::new();
    for (name, t) in &maps.flows {
        let (h, w) = (t.shape()[1], t.shape()[2]);
        let (dx, dy, scale) = flow_bytes(t);
        let fx = write_png(&args.out, &format!("{name}.dx.png"), h, w, &dx)?;
        let fy = write_png(&args.out, &format!("{name}.dy.png"), h, w, &dy)?;
        flows.push(json!({"name": name, "dx_file": fx, "dy_file": fy, "height": h, "width": w, "scale": scale}));
    }
    let index = json!({
        "sample": args.sample,
        "variant": ckpt.model.variant_name(),
        "attention": attention,
        "flows": flows,
        "config": ckpt.echo,
    });
    let path = args.out.join("maps.json");
    fs::write(&path, serde_json::to_string_pretty(&index)? + "\n").with_context(|| format!("writing {}", path.display()))?;
    println!(
        "{}: {} attention maps, {} flows in {}",
        args.sample,
        maps.attention.len(),
        maps.flows.len(),
        args.out.display()
    );
    Ok(())
}

