//! PNG files and the on-disk dataset layout.
//!
//! ```text
//! <root>/images/<id>_pre_disaster.png    8-bit RGB
//! <root>/images/<id>_post_disaster.png   8-bit RGB
//! <root>/masks/<id>_pre_mask.png         8-bit gray, {0, 1}
//! <root>/masks/<id>_post_mask.png        8-bit gray, {0..4}
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::mask::{Mask, MaskKind, MaskPair};
use super::split::SplitManifest;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

fn decode(path: &Path) -> Result<(png::ColorType, usize, usize, Vec<u8>)> {
    let mut dec = png::Decoder::new(BufReader::new(File::open(path)?));
    dec.set_transformations(png::Transformations::normalize_to_color8());
    let mut reader = dec.read_info()?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::Document("png too large".into()))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf)?;
    buf.truncate(info.buffer_size());
    Ok((info.color_type, info.height as usize, info.width as usize, buf))
}

fn read_image_inner(path: &Path) -> Result<Tensor> {
    let (color, h, w, buf) = decode(path)?;
    let stride = match color {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Indexed => return Err(Error::Document("unexpanded palette image".into())),
    };
    let mut out = vec![0.0; 3 * h * w];
    for p in 0..h * w {
        for c in 0..3 {
            let src = if stride >= 3 { c } else { 0 };
            out[c * h * w + p] = buf[p * stride + src] as f64 / 255.0;
        }
    }
    Tensor::new(vec![3, h, w], out)
}

/// Reads an 8-bit image as a `3×H×W` tensor in `[0, 1]`.
pub fn read_image(path: &Path) -> Result<Tensor> {
    read_image_inner(path).map_err(|e| e.in_file(path))
}

fn encode(path: &Path, w: usize, h: usize, color: png::ColorType, data: &[u8]) -> Result<()> {
    let mut enc = png::Encoder::new(BufWriter::new(File::create(path)?), w as u32, h as u32);
    enc.set_color(color);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header()?;
    writer.write_image_data(data)?;
    writer.finish()?;
    Ok(())
}

/// Writes a `3×H×W` tensor in `[0, 1]` as 8-bit RGB.
pub fn write_image(path: &Path, img: &Tensor) -> Result<()> {
    let (h, w) = match img.shape() {
        &[3, h, w] => (h, w),
        s => return Err(Error::contract(format!("image must be 3×H×W, got {s:?}"))),
    };
    let mut buf = vec![0u8; 3 * h * w];
    for p in 0..h * w {
        for c in 0..3 {
            buf[p * 3 + c] = (img.data()[c * h * w + p].clamp(0.0, 1.0) * 255.0).round() as u8;
        }
    }
    encode(path, w, h, png::ColorType::Rgb, &buf).map_err(|e| e.in_file(path))
}

/// Writes an 8-bit single-channel image with raw byte values.
pub fn write_gray(path: &Path, h: usize, w: usize, data: &[u8]) -> Result<()> {
    if data.len() != h * w {
        return Err(Error::contract("gray image size mismatch"));
    }
    encode(path, w, h, png::ColorType::Grayscale, data).map_err(|e| e.in_file(path))
}

pub fn write_mask(path: &Path, m: &Mask) -> Result<()> {
    write_gray(path, m.h, m.w, &m.data)
}

fn read_mask_inner(path: &Path, kind: Option<MaskKind>) -> Result<Mask> {
    let (color, h, w, buf) = decode(path)?;
    if color != png::ColorType::Grayscale {
        return Err(Error::Document(format!("mask must be 8-bit grayscale, got {color:?}")));
    }
    let m = Mask::new(h, w, buf)?;
    if let Some(k) = kind {
        m.check_values(k)?;
    }
    Ok(m)
}

/// Reads a raw-valued grayscale mask, checking values when `kind` is given.
pub fn read_mask(path: &Path, kind: Option<MaskKind>) -> Result<Mask> {
    read_mask_inner(path, kind).map_err(|e| e.in_file(path))
}

/// Paths of one sample inside a dataset root.
pub struct SamplePaths {
    pub pre_image: PathBuf,
    pub post_image: PathBuf,
    pub loc_mask: PathBuf,
    pub dmg_mask: PathBuf,
}

pub fn sample_paths(root: &Path, id: &str) -> SamplePaths {
    SamplePaths {
        pre_image: root.join("images").join(format!("{id}_pre_disaster.png")),
        post_image: root.join("images").join(format!("{id}_post_disaster.png")),
        loc_mask: root.join("masks").join(format!("{id}_pre_mask.png")),
        dmg_mask: root.join("masks").join(format!("{id}_post_mask.png")),
    }
}

/// One co-registered image pair with its masks.
#[derive(Clone, Debug)]
pub struct Sample {
    pub id: String,
    /// `3×H×W` in `[0, 1]`.
    pub pre: Tensor,
    pub post: Tensor,
    pub masks: MaskPair,
}

pub fn load_sample(root: &Path, id: &str) -> Result<Sample> {
    let p = sample_paths(root, id);
    let pre = read_image(&p.pre_image)?;
    let post = read_image(&p.post_image)?;
    let loc = read_mask(&p.loc_mask, Some(MaskKind::Loc))?;
    let dmg = read_mask(&p.dmg_mask, Some(MaskKind::Dmg))?;
    if pre.shape() != post.shape() || pre.shape()[1..] != [loc.h, loc.w] {
        return Err(Error::Document(format!(
            "sample {id}: image {:?}/{:?} and mask {}×{} sizes differ",
            pre.shape(),
            post.shape(),
            loc.h,
            loc.w
        )));
    }
    let masks = MaskPair::new(loc, dmg).map_err(|e| e.in_file(&p.dmg_mask))?;
    Ok(Sample {
        id: id.to_string(),
        pre,
        post,
        masks,
    })
}

pub fn save_sample(root: &Path, s: &Sample) -> Result<()> {
    std::fs::create_dir_all(root.join("images"))?;
    std::fs::create_dir_all(root.join("masks"))?;
    let p = sample_paths(root, &s.id);
    write_image(&p.pre_image, &s.pre)?;
    write_image(&p.post_image, &s.post)?;
    write_mask(&p.loc_mask, &s.masks.loc)?;
    write_mask(&p.dmg_mask, &s.masks.dmg)
}

/// A named dataset: root directory plus its split.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    /// Resolved against the manifest's directory when relative.
    pub root: PathBuf,
    #[serde(flatten)]
    pub split: SplitManifest,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "train" => Split::Train,
            "valid" => Split::Valid,
            "test" => Split::Test,
            _ => return None,
        })
    }
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let inner = || -> Result<Self> {
            let mut m: DatasetManifest = serde_json::from_slice(&std::fs::read(path)?)?;
            if m.root.is_relative() {
                m.root = path.parent().unwrap_or(Path::new(".")).join(&m.root);
            }
            Ok(m)
        };
        inner().map_err(|e| e.in_file(path))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::from(e).in_file(path))
    }

    pub fn ids(&self, split: Split) -> &[String] {
        match split {
            Split::Train => &self.split.train,
            Split::Valid => &self.split.valid,
            Split::Test => &self.split.test,
        }
    }

    pub fn load_split(&self, split: Split) -> Result<Vec<Sample>> {
        self.ids(split).iter().map(|id| load_sample(&self.root, id)).collect()
    }
}
