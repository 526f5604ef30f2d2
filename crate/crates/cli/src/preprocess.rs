use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use bda_core::dataio::{
    dataset_stats, parse_labels, rasterize_mask, rasterize_mask_pip, read_mask, write_mask, Mask, MaskKind,
};
use clap::{Args, ValueEnum};

use crate::{usage, Failed};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    /// Building masks (0/1) for every label file.
    Loc,
    /// Damage masks (0..4) for every label file.
    Dmg,
    /// Building masks for pre-event files, damage masks for post-event files.
    Both,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Rasterizer {
    /// Scanline fill.
    Scanline,
    /// Per-pixel point-in-polygon test.
    Point,
}

#[derive(Args, Debug)]
pub struct PreprocessArgs {
    /// Directory of `<sample>_{pre,post}_disaster.json` label files.
    #[arg(long)]
    pub labels: PathBuf,
    /// Output directory for `<sample>_{pre,post}_mask.png`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "both")]
    pub mode: Mode,
    #[arg(long, value_enum, default_value = "scanline")]
    pub rasterizer: Rasterizer,
    /// Mask height when the label file has no `metadata.height`.
    #[arg(long, default_value_t = 1024)]
    pub height: usize,
    /// Mask width when the label file has no `metadata.width`.
    #[arg(long, default_value_t = 1024)]
    pub width: usize,
    /// Compare every written mask with the same-named mask in this directory
    /// and print the aggregate pixel agreement.
    #[arg(long)]
    pub check: Option<PathBuf>,
}

fn event_of(path: &Path) -> Option<(String, &'static str)> {
    let stem = path.file_stem()?.to_str()?;
    for event in ["pre", "post"] {
        if let Some(sample) = stem.strip_suffix(&format!("_{event}_disaster")) {
            return Some((sample.to_string(), event));
        }
    }
    None
}

fn json_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    Ok(files)
}

fn size_of(doc: &[u8], args: &PreprocessArgs) -> (usize, usize) {
    let meta = serde_json::from_slice::<serde_json::Value>(doc).ok().and_then(|v| v.get("metadata").cloned());
    let dim = |key: &str, default: usize| {
        meta.as_ref()
            .and_then(|m| m.get(key))
            .and_then(|v| v.as_u64())
            .map_or(default, |v| v as usize)
    };
    (dim("height", args.height), dim("width", args.width))
}

struct Written {
    name: String,
    mask: Mask,
    kind: MaskKind,
}

fn convert(path: &Path, args: &PreprocessArgs) -> Result<Written> {
    let (sample, event) = event_of(path)
        .ok_or_else(|| anyhow::anyhow!("file name must end in _pre_disaster.json or _post_disaster.json"))?;
    let doc = fs::read(path)?;
    let polys = parse_labels(&doc)?;
    let kind = match (args.mode, event) {
        (Mode::Loc, _) | (Mode::Both, "pre") => MaskKind::Loc,
        _ => MaskKind::Dmg,
    };
    let (h, w) = size_of(&doc, args);
    let mask = match args.rasterizer {
        Rasterizer::Scanline => rasterize_mask(&polys, h, w, kind),
        Rasterizer::Point => rasterize_mask_pip(&polys, h, w, kind),
    };
    let name = format!("{sample}_{event}_mask.png");
    write_mask(&args.out.join(&name), &mask)?;
    Ok(Written { name, mask, kind })
}

pub fn preprocess(args: &PreprocessArgs) -> Result<()> {
    if !args.labels.is_dir() {
        return Err(usage(format!("label directory {} does not exist", args.labels.display())));
    }
    if let Some(c) = &args.check {
        if !c.is_dir() {
            return Err(usage(format!("reference directory {} does not exist", c.display())));
        }
    }
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let (mut loc, mut dmg, mut failed) = (0, 0, 0);
    let (mut agree, mut total, mut compared) = (0u64, 0u64, 0usize);
    for path in json_files(&args.labels)? {
        let written = match convert(&path, args) {
            Ok(w) => w,
            Err(e) => {
                eprintln!("error: {}: {e:#}", path.display());
                failed += 1;
                continue;
            }
        };
        match written.kind {
            MaskKind::Loc => loc += 1,
            MaskKind::Dmg => dmg += 1,
        }
        if let Some(dir) = &args.check {
            let reference = dir.join(&written.name);
            match read_mask(&reference, None) {
                Ok(r) if (r.h, r.w) == (written.mask.h, written.mask.w) => {
                    agree += r.data.iter().zip(&written.mask.data).filter(|(a, b)| a == b).count() as u64;
                    total += r.data.len() as u64;
                    compared += 1;
                }
                Ok(r) => {
                    eprintln!(
                        "error: {}: size {}×{} differs from {}×{}",
                        reference.display(),
                        r.h,
                        r.w,
                        written.mask.h,
                        written.mask.w
                    );
                    failed += 1;
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    failed += 1;
                }
            }
        }
    }
    println!("wrote {} masks ({loc} loc, {dmg} dmg), {failed} failed", loc + dmg);
    if args.check.is_some() {
        let fraction = if total == 0 { 1.0 } else { agree as f64 / total as f64 };
        println!("agreement {fraction:.6} over {compared} masks ({total} pixels)");
    }
    if failed > 0 {
        return Err(Failed(format!("{failed} files failed")).into());
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct StatsArgs {
    /// Directory holding `<sample>_post_mask.png` damage masks.
    #[arg(long)]
    pub masks: PathBuf,
    /// Also write the statistics as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

pub fn stats(args: &StatsArgs) -> Result<()> {
    if !args.masks.is_dir() {
        return Err(usage(format!("mask directory {} does not exist", args.masks.display())));
    }
    let mut files: Vec<PathBuf> = fs::read_dir(&args.masks)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.ends_with("_post_mask.png")))
        .collect();
    files.sort();
    if files.is_empty() {
        log::warn!("no *_post_mask.png files in {}", args.masks.display());
    }
    let masks = files
        .iter()
        .map(|p| read_mask(p, Some(MaskKind::Dmg)))
        .collect::<bda_core::Result<Vec<_>>>()?;
    let s = dataset_stats(&masks);
    print!("{}", s.to_table());
    if let Some(path) = &args.json {
        let mut text = serde_json::to_string_pretty(&s)?;
        text.push('\n');
        fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}
