//! Polygon rasterization at pixel centres with the even-odd rule.
//!
//! `rasterize_mask` runs a scanline fill; `rasterize_mask_pip` tests every
//! pixel centre with a crossing-number query. Both write polygons in file
//! order, so later polygons win on overlap.

use super::labels::{BuildingPolygon, Point};
use super::mask::{Mask, MaskKind};

fn fill_value(p: &BuildingPolygon, kind: MaskKind, warned: &mut bool) -> u8 {
    match kind {
        MaskKind::Loc => 1,
        MaskKind::Dmg => {
            if p.subtype == super::Subtype::Unclassified && !*warned {
                log::warn!("un-classified building rasterized as no-damage");
                *warned = true;
            }
            p.subtype.level()
        }
    }
}

fn edges(p: &BuildingPolygon) -> impl Iterator<Item = (Point, Point)> + '_ {
    p.rings()
        .flat_map(|r| r.iter().enumerate().map(move |(i, &a)| (a, r[(i + 1) % r.len()])))
}

/// Scanline rasterizer.
pub fn rasterize_mask(polys: &[BuildingPolygon], h: usize, w: usize, kind: MaskKind) -> Mask {
    let mut mask = Mask::zeros(h, w);
    let mut warned = false;
    let mut xs = Vec::new();
    for p in polys {
        let v = fill_value(p, kind, &mut warned);
        for y in 0..h {
            let yc = y as f64 + 0.5;
            xs.clear();
            for ((x0, y0), (x1, y1)) in edges(p) {
                // Half-open span so shared vertices count once.
                if (y0 <= yc && yc < y1) || (y1 <= yc && yc < y0) {
                    xs.push(x0 + (yc - y0) * (x1 - x0) / (y1 - y0));
                }
            }
            xs.sort_by(f64::total_cmp);
            for span in xs.chunks_exact(2) {
                // Pixel centres x + 0.5 in [span0, span1).
                let start = (span[0] - 0.5).ceil().max(0.0);
                let end = (span[1] - 0.5).ceil().min(w as f64);
                if end <= start {
                    continue;
                }
                for x in start as usize..end as usize {
                    mask.set(y, x, v);
                }
            }
        }
    }
    mask
}

/// Even-odd crossing test of a point against every ring of a polygon.
pub fn contains(p: &BuildingPolygon, (px, py): Point) -> bool {
    let mut inside = false;
    for ((x0, y0), (x1, y1)) in edges(p) {
        if (y0 > py) != (y1 > py) {
            let t = (py - y0) / (y1 - y0);
            if px < x0 + t * (x1 - x0) {
                inside = !inside;
            }
        }
    }
    inside
}

/// Point-in-polygon rasterizer over each polygon's bounding box.
pub fn rasterize_mask_pip(polys: &[BuildingPolygon], h: usize, w: usize, kind: MaskKind) -> Mask {
    let mut mask = Mask::zeros(h, w);
    let mut warned = false;
    for p in polys {
        let v = fill_value(p, kind, &mut warned);
        let (mut x_lo, mut x_hi, mut y_lo, mut y_hi) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for &(x, y) in p.rings().flatten() {
            x_lo = x_lo.min(x);
            x_hi = x_hi.max(x);
            y_lo = y_lo.min(y);
            y_hi = y_hi.max(y);
        }
        let range = |lo: f64, hi: f64, n: usize| {
            let a = (lo - 0.5).floor().max(0.0) as usize;
            let b = ((hi + 0.5).ceil().max(0.0) as usize).min(n);
            a..b
        };
        for y in range(y_lo, y_hi, h) {
            for x in range(x_lo, x_hi, w) {
                if contains(p, (x as f64 + 0.5, y as f64 + 0.5)) {
                    mask.set(y, x, v);
                }
            }
        }
    }
    mask
}
