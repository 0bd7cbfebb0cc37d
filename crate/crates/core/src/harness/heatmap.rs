//! Blue-to-red rendering of scalar grids.

use std::path::Path;

use crate::error::Result;
use crate::io::write_ppm;

/// RGB bytes for a row-major grid. Finite values are min-max normalised to
/// `v` in `[0, 1]` and drawn as `(round(255 v), 0, round(255 (1 - v)))`; a
/// grid with a single finite value uses that value clamped to `[0, 1]`.
/// Non-finite cells are black. Each cell becomes a `scale x scale` block.
pub fn heatmap_rgb(values: &[f64], width: usize, height: usize, scale: usize) -> Vec<u8> {
    assert_eq!(values.len(), width * height, "grid size");
    let finite = values.iter().copied().filter(|v| v.is_finite());
    let lo = finite.clone().fold(f64::INFINITY, f64::min);
    let hi = finite.fold(f64::NEG_INFINITY, f64::max);
    let norm = |v: f64| {
        if hi > lo {
            (v - lo) / (hi - lo)
        } else {
            v.clamp(0.0, 1.0)
        }
    };
    let scale = scale.max(1);
    let (ow, oh) = (width * scale, height * scale);
    let mut out = Vec::with_capacity(3 * ow * oh);
    for y in 0..oh {
        for x in 0..ow {
            let v = values[(y / scale) * width + x / scale];
            if v.is_finite() {
                let t = norm(v);
                out.extend_from_slice(&[(255.0 * t).round() as u8, 0, (255.0 * (1.0 - t)).round() as u8]);
            } else {
                out.extend_from_slice(&[0, 0, 0]);
            }
        }
    }
    out
}

pub fn render_heatmap(values: &[f64], width: usize, height: usize, scale: usize, path: &Path) -> Result<()> {
    let s = scale.max(1);
    write_ppm(path, width * s, height * s, &heatmap_rgb(values, width, height, scale))
}
