use crate::error::{Error, Result};

/// Which of the two masks a label file produces.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MaskKind {
    /// Building footprint, values {0, 1}.
    Loc,
    /// Damage level, values {0..4}.
    Dmg,
}

impl MaskKind {
    pub fn max_value(self) -> u8 {
        match self {
            MaskKind::Loc => 1,
            MaskKind::Dmg => 4,
        }
    }
}

/// Row-major `h × w` label raster.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    pub h: usize,
    pub w: usize,
    pub data: Vec<u8>,
}

impl Mask {
    pub fn zeros(h: usize, w: usize) -> Self {
        Mask {
            h,
            w,
            data: vec![0; h * w],
        }
    }

    pub fn new(h: usize, w: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != h * w {
            return Err(Error::contract(format!(
                "mask data has {} values for {h}×{w}",
                data.len()
            )));
        }
        Ok(Mask { h, w, data })
    }

    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.data[y * self.w + x]
    }

    pub fn set(&mut self, y: usize, x: usize, v: u8) {
        self.data[y * self.w + x] = v;
    }

    pub fn check_values(&self, kind: MaskKind) -> Result<()> {
        match self.data.iter().find(|&&v| v > kind.max_value()) {
            Some(v) => Err(Error::Document(format!(
                "{kind:?} mask contains value {v} (max {})",
                kind.max_value()
            ))),
            None => Ok(()),
        }
    }

    /// Binary footprint of a damage mask.
    pub fn footprint(&self) -> Mask {
        Mask {
            h: self.h,
            w: self.w,
            data: self.data.iter().map(|&v| u8::from(v > 0)).collect(),
        }
    }
}

/// Localization and damage masks of one sample.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskPair {
    pub loc: Mask,
    pub dmg: Mask,
}

impl MaskPair {
    pub fn new(loc: Mask, dmg: Mask) -> Result<Self> {
        let pair = MaskPair { loc, dmg };
        pair.validate()?;
        Ok(pair)
    }

    /// Value ranges hold and damage implies building.
    pub fn validate(&self) -> Result<()> {
        if (self.loc.h, self.loc.w) != (self.dmg.h, self.dmg.w) {
            return Err(Error::contract(format!(
                "loc {}×{} and dmg {}×{} differ",
                self.loc.h, self.loc.w, self.dmg.h, self.dmg.w
            )));
        }
        self.loc.check_values(MaskKind::Loc)?;
        self.dmg.check_values(MaskKind::Dmg)?;
        if let Some(i) = (0..self.dmg.data.len()).find(|&i| self.dmg.data[i] > 0 && self.loc.data[i] == 0) {
            return Err(Error::Document(format!(
                "damage without building at pixel ({}, {})",
                i % self.dmg.w,
                i / self.dmg.w
            )));
        }
        Ok(())
    }

    pub fn h(&self) -> usize {
        self.loc.h
    }

    pub fn w(&self) -> usize {
        self.loc.w
    }
}

/// Fraction of pixels on which two masks agree.
pub fn pixel_agreement(a: &Mask, b: &Mask) -> Result<f64> {
    if (a.h, a.w) != (b.h, b.w) {
        return Err(Error::contract(format!(
            "cannot compare {}×{} with {}×{}",
            a.h, a.w, b.h, b.w
        )));
    }
    if a.data.is_empty() {
        return Ok(1.0);
    }
    let same = a.data.iter().zip(&b.data).filter(|(x, y)| x == y).count();
    Ok(same as f64 / a.data.len() as f64)
}
