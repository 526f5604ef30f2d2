//! Paired geometric augmentation.
//!
//! A transform is horizontal flip, then vertical flip, then `rot` clockwise
//! quarter turns, then a square crop. The same transform is applied to both
//! images and both masks.

use super::mask::{Mask, MaskPair};
use crate::error::{Error, Result};
use crate::numerics::{Rng, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Transform {
    pub hflip: bool,
    pub vflip: bool,
    /// Clockwise quarter turns, 0..4.
    pub rot: u8,
    pub crop: usize,
    /// Top-left corner of the crop in the rotated frame.
    pub crop_y: usize,
    pub crop_x: usize,
}

impl Transform {
    pub fn identity(h: usize, w: usize) -> Self {
        assert_eq!(h, w, "identity crop needs a square input");
        Transform {
            hflip: false,
            vflip: false,
            rot: 0,
            crop: h,
            crop_y: 0,
            crop_x: 0,
        }
    }

    /// Draws flips with p = 0.5, a uniform rotation and a uniform crop.
    pub fn draw(rng: &mut Rng, h: usize, w: usize, crop: usize) -> Result<Self> {
        if crop == 0 || crop > h.min(w) {
            return Err(Error::config(format!("crop {crop} does not fit a {h}×{w} image")));
        }
        let hflip = rng.bernoulli(0.5);
        let vflip = rng.bernoulli(0.5);
        let rot = rng.below(4) as u8;
        let (rh, rw) = if rot % 2 == 1 { (w, h) } else { (h, w) };
        Ok(Transform {
            hflip,
            vflip,
            rot,
            crop,
            crop_y: rng.below(rh - crop + 1),
            crop_x: rng.below(rw - crop + 1),
        })
    }

    /// Source pixel of output pixel `(y, x)` for an `h × w` input.
    pub fn source(&self, h: usize, w: usize, y: usize, x: usize) -> (usize, usize) {
        let (mut y, mut x) = (y + self.crop_y, x + self.crop_x);
        // Undo quarter turns from the last one back.
        for j in (1..=self.rot).rev() {
            let hp = if j % 2 == 1 { h } else { w };
            (y, x) = (hp - 1 - x, y);
        }
        if self.vflip {
            y = h - 1 - y;
        }
        if self.hflip {
            x = w - 1 - x;
        }
        (y, x)
    }

    fn check(&self, h: usize, w: usize) -> Result<()> {
        let (rh, rw) = if self.rot % 2 == 1 { (w, h) } else { (h, w) };
        if self.rot > 3 || self.crop == 0 || self.crop_y + self.crop > rh || self.crop_x + self.crop > rw {
            return Err(Error::config(format!("transform {self:?} does not fit {h}×{w}")));
        }
        Ok(())
    }

    fn index_map(&self, h: usize, w: usize) -> Vec<usize> {
        let c = self.crop;
        (0..c * c)
            .map(|i| {
                let (sy, sx) = self.source(h, w, i / c, i % c);
                sy * w + sx
            })
            .collect()
    }

    pub fn apply_mask(&self, m: &Mask) -> Result<Mask> {
        self.check(m.h, m.w)?;
        let data = self.index_map(m.h, m.w).into_iter().map(|i| m.data[i]).collect();
        Mask::new(self.crop, self.crop, data)
    }

    /// Applies to a `C×H×W` image.
    pub fn apply_image(&self, img: &Tensor) -> Result<Tensor> {
        let (c, h, w) = match img.shape() {
            &[c, h, w] => (c, h, w),
            s => return Err(Error::contract(format!("image must be C×H×W, got {s:?}"))),
        };
        self.check(h, w)?;
        let map = self.index_map(h, w);
        let mut out = Vec::with_capacity(c * map.len());
        for ch in 0..c {
            let plane = &img.data()[ch * h * w..(ch + 1) * h * w];
            out.extend(map.iter().map(|&i| plane[i]));
        }
        Tensor::new(vec![c, self.crop, self.crop], out)
    }
}

/// Draws one transform and applies it to a sample.
pub fn augment_sample(
    pre: &Tensor,
    post: &Tensor,
    masks: &MaskPair,
    rng: &mut Rng,
    crop: usize,
) -> Result<(Tensor, Tensor, MaskPair)> {
    let t = Transform::draw(rng, masks.h(), masks.w(), crop)?;
    Ok((
        t.apply_image(pre)?,
        t.apply_image(post)?,
        MaskPair {
            loc: t.apply_mask(&masks.loc)?,
            dmg: t.apply_mask(&masks.dmg)?,
        },
    ))
}
