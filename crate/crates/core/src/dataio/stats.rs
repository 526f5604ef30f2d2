use serde::{Deserialize, Serialize};

use super::mask::Mask;

/// Per-level image counts and building-pixel ratios.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub total_images: usize,
    /// Images containing at least one pixel of each level L1..L4.
    pub image_counts: [usize; 4],
    pub pixel_counts: [u64; 4],
    /// Level pixels over all building pixels; zero when there are none.
    pub pixel_ratios: [f64; 4],
}

pub fn dataset_stats(masks: &[Mask]) -> DatasetStats {
    let mut s = DatasetStats {
        total_images: masks.len(),
        ..DatasetStats::default()
    };
    for m in masks {
        let mut seen = [false; 4];
        for &v in &m.data {
            if (1..=4).contains(&v) {
                let k = (v - 1) as usize;
                s.pixel_counts[k] += 1;
                seen[k] = true;
            }
        }
        for (c, hit) in s.image_counts.iter_mut().zip(seen) {
            *c += usize::from(hit);
        }
    }
    let total: u64 = s.pixel_counts.iter().sum();
    if total > 0 {
        for k in 0..4 {
            s.pixel_ratios[k] = s.pixel_counts[k] as f64 / total as f64;
        }
    }
    s
}

impl DatasetStats {
    /// Plain-text table: image counts and pixel ratios per level.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("{:<18}{:>10}{:>10}{:>10}{:>10}{:>10}\n", "", "L1", "L2", "L3", "L4", "Total"));
        out.push_str(&format!("{:<18}", "Number of Images"));
        for c in self.image_counts {
            out.push_str(&format!("{c:>10}"));
        }
        out.push_str(&format!("{:>10}\n", self.total_images));
        out.push_str(&format!("{:<18}", "Pixel Ratio (%)"));
        for r in self.pixel_ratios {
            out.push_str(&format!("{:>10.2}", 100.0 * r));
        }
        out.push_str(&format!("{:>10}\n", ""));
        out
    }
}
