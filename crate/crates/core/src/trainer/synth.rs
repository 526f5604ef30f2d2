//! Synthetic image pairs with rectangular buildings.
//!
//! Buildings sit on even coordinates with even sides. The post image shows
//! each building's damage level as a colour change: none for level 1, a
//! red tint for 2, a blue tint for 3 and dark rubble for 4.

use std::path::Path;

use crate::dataio::{save_sample, split_dataset, DatasetManifest, Mask, MaskPair, Sample};
use crate::error::{Error, Result};
use crate::numerics::{Rng, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Palette {
    pub background: [f64; 3],
    pub roof: [f64; 3],
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Domain {
    A,
    B,
}

impl Domain {
    pub fn palette(self) -> Palette {
        match self {
            Domain::A => Palette {
                background: [0.35, 0.5, 0.3],
                roof: [0.75, 0.72, 0.68],
            },
            Domain::B => Palette {
                background: [0.62, 0.55, 0.42],
                roof: [0.45, 0.42, 0.5],
            },
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Domain::A => "synth-a",
            Domain::B => "synth-b",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "a" | "A" | "synth-a" => Some(Domain::A),
            "b" | "B" | "synth-b" => Some(Domain::B),
            _ => None,
        }
    }
}

/// How damage levels are given to buildings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LevelRule {
    /// Building `j` of sample `i` gets level `(i + j) mod 4 + 1`.
    Cycle,
    /// Independent draws with these level weights.
    Weights([f64; 4]),
    /// Two levels whose building-pixel totals approach `ratio : 1` over the
    /// whole fixture.
    Ratio { major: u8, minor: u8, ratio: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthConfig {
    pub size: usize,
    /// Inclusive range of buildings per image.
    pub buildings: (usize, usize),
    /// Inclusive range of even side lengths.
    pub side: (usize, usize),
    pub palette: Palette,
    pub noise: f64,
    pub levels: LevelRule,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            size: 32,
            buildings: (3, 5),
            side: (4, 10),
            palette: Domain::A.palette(),
            noise: 0.03,
            levels: LevelRule::Weights([1.0; 4]),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Rect {
    y: usize,
    x: usize,
    h: usize,
    w: usize,
}

impl Rect {
    fn area(&self) -> usize {
        self.h * self.w
    }

    fn overlaps(&self, o: &Rect, margin: usize) -> bool {
        self.y < o.y + o.h + margin && o.y < self.y + self.h + margin && self.x < o.x + o.w + margin && o.x < self.x + self.w + margin
    }
}

fn even_in(rng: &mut Rng, lo: usize, hi: usize) -> usize {
    lo + 2 * rng.below((hi - lo) / 2 + 1)
}

fn place(cfg: &SynthConfig, rng: &mut Rng) -> Vec<Rect> {
    let target = cfg.buildings.0 + rng.below(cfg.buildings.1 - cfg.buildings.0 + 1);
    let mut rects: Vec<Rect> = Vec::with_capacity(target);
    for _ in 0..50 * target.max(1) {
        if rects.len() == target {
            break;
        }
        let h = even_in(rng, cfg.side.0, cfg.side.1);
        let w = even_in(rng, cfg.side.0, cfg.side.1);
        let r = Rect {
            y: 2 * rng.below((cfg.size - h) / 2 + 1),
            x: 2 * rng.below((cfg.size - w) / 2 + 1),
            h,
            w,
        };
        if rects.iter().all(|o| !r.overlaps(o, 2)) {
            rects.push(r);
        }
    }
    rects
}

fn damaged(roof: [f64; 3], level: u8) -> [f64; 3] {
    let blend = |t: [f64; 3], a: f64| [0, 1, 2].map(|i| (1.0 - a) * roof[i] + a * t[i]);
    match level {
        2 => blend([0.85, 0.2, 0.15], 0.6),
        3 => blend([0.15, 0.3, 0.9], 0.6),
        4 => roof.map(|v| 0.25 * v),
        _ => roof,
    }
}

fn render(cfg: &SynthConfig, rects: &[(Rect, u8)], rng: &mut Rng, post: bool) -> Tensor {
    let n = cfg.size;
    let mut data = vec![0.0; 3 * n * n];
    for (c, plane) in data.chunks_mut(n * n).enumerate() {
        plane.fill(cfg.palette.background[c]);
    }
    for (r, level) in rects {
        let colour = if post { damaged(cfg.palette.roof, *level) } else { cfg.palette.roof };
        for (c, plane) in data.chunks_mut(n * n).enumerate() {
            for y in r.y..r.y + r.h {
                plane[y * n + r.x..y * n + r.x + r.w].fill(colour[c]);
            }
        }
    }
    for v in &mut data {
        *v = (*v + cfg.noise * rng.normal()).clamp(0.0, 1.0);
    }
    Tensor::new(vec![3, n, n], data).expect("shape matches data")
}

fn validate(cfg: &SynthConfig) -> Result<()> {
    let (lo, hi) = cfg.side;
    if lo < 2 || lo % 2 != 0 || hi % 2 != 0 || hi < lo || hi > cfg.size || cfg.size % 2 != 0 {
        return Err(Error::config(format!("bad synthetic geometry: size {} sides {lo}..{hi}", cfg.size)));
    }
    if cfg.buildings.1 < cfg.buildings.0 {
        return Err(Error::config("building count range is empty"));
    }
    if !(cfg.noise >= 0.0) {
        return Err(Error::config("noise must be nonnegative"));
    }
    Ok(())
}

fn draw_level(rng: &mut Rng, w: &[f64; 4]) -> u8 {
    let total: f64 = w.iter().sum();
    let mut u = rng.next_f64() * total;
    for (k, &wk) in w.iter().enumerate() {
        if u < wk {
            return k as u8 + 1;
        }
        u -= wk;
    }
    4
}

/// `n` samples named `<prefix>_<i>`. Sample `i` depends only on `seed`
/// and its name, apart from [`LevelRule::Ratio`] which balances across
/// the fixture.
pub fn fixture(prefix: &str, n: usize, cfg: &SynthConfig, seed: u64) -> Result<Vec<Sample>> {
    validate(cfg)?;
    let (mut major_px, mut minor_px) = (0usize, 0usize);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let id = format!("{prefix}_{i:04}");
        let mut rng = Rng::derived(seed, &id);
        let rects = place(cfg, &mut rng);
        let mut labelled = Vec::with_capacity(rects.len());
        for (j, r) in rects.into_iter().enumerate() {
            let level = match cfg.levels {
                LevelRule::Cycle => ((i + j) % 4) as u8 + 1,
                LevelRule::Weights(w) => draw_level(&mut rng, &w),
                LevelRule::Ratio { major, minor, ratio } => {
                    if (minor_px + r.area()) as f64 * ratio <= major_px as f64 {
                        minor_px += r.area();
                        minor
                    } else {
                        major_px += r.area();
                        major
                    }
                }
            };
            labelled.push((r, level));
        }
        let mut dmg = Mask::zeros(cfg.size, cfg.size);
        for (r, level) in &labelled {
            for y in r.y..r.y + r.h {
                for x in r.x..r.x + r.w {
                    dmg.set(y, x, *level);
                }
            }
        }
        let pre = render(cfg, &labelled, &mut rng, false);
        let post = render(cfg, &labelled, &mut rng, true);
        out.push(Sample {
            id,
            pre,
            post,
            masks: MaskPair::new(dmg.footprint(), dmg)?,
        });
    }
    Ok(out)
}

/// Four buildings per image with levels cycling through 1..4.
pub fn overfit_config() -> SynthConfig {
    SynthConfig {
        buildings: (4, 4),
        side: (6, 10),
        levels: LevelRule::Cycle,
        ..SynthConfig::default()
    }
}

/// Four 32×32 pairs covering all damage levels.
pub fn overfit_fixture(seed: u64) -> Result<Vec<Sample>> {
    fixture("overfit", 4, &overfit_config(), seed)
}

/// Level 1 and level 3 buildings at a 20:1 pixel ratio.
pub fn imbalance_config() -> SynthConfig {
    SynthConfig {
        buildings: (3, 5),
        side: (4, 8),
        levels: LevelRule::Ratio {
            major: 1,
            minor: 3,
            ratio: 20.0,
        },
        ..SynthConfig::default()
    }
}

pub fn imbalance_fixture(prefix: &str, n: usize, seed: u64) -> Result<Vec<Sample>> {
    fixture(prefix, n, &imbalance_config(), seed)
}

/// Uniform level mix drawn with the domain's palette.
pub fn domain_fixture(domain: Domain, n: usize, seed: u64) -> Result<Vec<Sample>> {
    let cfg = SynthConfig {
        palette: domain.palette(),
        ..SynthConfig::default()
    };
    fixture(domain.name(), n, &cfg, seed)
}

/// Writes samples under `root` in the dataset layout together with a
/// `manifest.json` holding a seeded split.
pub fn write_dataset(
    root: &Path,
    name: &str,
    samples: &[Sample],
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<DatasetManifest> {
    for s in samples {
        save_sample(root, s)?;
    }
    let ids: Vec<String> = samples.iter().map(|s| s.id.clone()).collect();
    let manifest = DatasetManifest {
        name: name.to_string(),
        root: ".".into(),
        split: split_dataset(&ids, ratios, seed)?,
    };
    manifest.save(&root.join("manifest.json"))?;
    Ok(manifest)
}
