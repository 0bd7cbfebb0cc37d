//! Slow direct evaluations used to check the fast paths. Nothing here calls
//! into the code it checks.

use crate::geometry::Reference;
use crate::mask::{BinaryMask, MaskSet};
use crate::smagg::{AggregateConfig, CompareAt};
use crate::tspp::{AreaMode, SamplerConfig};

/// Squared distance from every pixel to the nearest reference pixel by
/// exhaustive search. `None` when no pixel is a reference pixel.
pub fn oracle_edt(m: &BinaryMask, reference: Reference) -> Option<Vec<u64>> {
    let (w, h) = m.dims();
    let want = reference == Reference::SetPixels;
    let refs: Vec<(i64, i64)> = (0..h)
        .flat_map(|y| (0..w).map(move |x| (x, y)))
        .filter(|&(x, y)| m.get(x, y) == want)
        .map(|(x, y)| (x as i64, y as i64))
        .collect();
    if refs.is_empty() {
        return None;
    }
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let best = refs
                .iter()
                .map(|&(rx, ry)| ((rx - x).pow(2) + (ry - y).pow(2)) as u64)
                .min()
                .unwrap();
            out.push(best);
        }
    }
    Some(out)
}

/// Squared distance from a set pixel to the nearest background pixel, where
/// everything off the canvas is background.
fn interior_sq(m: &BinaryMask, x: i64, y: i64) -> u64 {
    let (w, h) = (m.width() as i64, m.height() as i64);
    if x < 0 || y < 0 || x >= w || y >= h || !m.get(x as usize, y as usize) {
        return 0;
    }
    let edge = (x + 1).min(w - x).min(y + 1).min(h - y);
    let mut best = (edge * edge) as u64;
    for by in 0..h {
        for bx in 0..w {
            if !m.get(bx as usize, by as usize) {
                best = best.min(((bx - x).pow(2) + (by - y).pow(2)) as u64);
            }
        }
    }
    best
}

/// Set pixels whose interior distance is no smaller than any 8-neighbour's.
pub fn oracle_skeleton(m: &BinaryMask) -> BinaryMask {
    let (w, h) = m.dims();
    let d: Vec<u64> = (0..h as i64)
        .flat_map(|y| (0..w as i64).map(move |x| (x, y)))
        .map(|(x, y)| interior_sq(m, x, y))
        .collect();
    let at = |x: i64, y: i64| -> u64 {
        if x < 0 || y < 0 || x >= w as i64 || y >= h as i64 {
            0
        } else {
            d[y as usize * w + x as usize]
        }
    };
    BinaryMask::from_fn(w, h, |x, y| {
        if !m.get(x, y) {
            return false;
        }
        let (x, y) = (x as i64, y as i64);
        let c = at(x, y);
        let mut ok = true;
        for dy in -1..=1 {
            for dx in -1..=1 {
                if at(x + dx, y + dy) > c {
                    ok = false;
                }
            }
        }
        ok
    })
}

/// Squared distance from each mask pixel to the nearest skeleton pixel,
/// `None` off the mask.
pub fn oracle_skeleton_sq_dist(m: &BinaryMask) -> Vec<Option<u64>> {
    let (w, h) = m.dims();
    let skel = oracle_skeleton(m);
    let pts: Vec<(i64, i64)> = (0..h)
        .flat_map(|y| (0..w).map(move |x| (x, y)))
        .filter(|&(x, y)| skel.get(x, y))
        .map(|(x, y)| (x as i64, y as i64))
        .collect();
    let mut out = vec![None; w * h];
    for y in 0..h {
        for x in 0..w {
            if m.get(x, y) {
                out[y * w + x] = pts
                    .iter()
                    .map(|&(sx, sy)| ((sx - x as i64).pow(2) + (sy - y as i64).pow(2)) as u64)
                    .min();
            }
        }
    }
    out
}

/// Raw target probabilities, row-major over the prompt grid, evaluated cell by
/// cell from the Gaussian skeleton weighting.
pub fn oracle_probability_target(gt: &MaskSet, cfg: &SamplerConfig) -> Vec<f64> {
    let (gh, gw) = (cfg.grid_h, cfg.grid_w);
    let (w, h) = gt.dims();
    let mut raw = vec![0.0; gh * gw];
    // pixel at the center of cell i out of n across `len` pixels
    let center = |i: usize, n: usize, len: usize| ((2 * i + 1) * len) / (2 * n);
    for m in gt {
        let mut cells = Vec::new();
        for i in 0..gh {
            for j in 0..gw {
                let (px, py) = (center(j, gw, w), center(i, gh, h));
                if m.get(px, py) {
                    cells.push((i, j, px, py));
                }
            }
        }
        if cells.is_empty() {
            continue;
        }
        let area = match cfg.area_mode {
            AreaMode::GridCells => cells.len(),
            AreaMode::Pixels => (0..h).map(|y| (0..w).filter(|&x| m.get(x, y)).count()).sum(),
        };
        let mut p_k = area / cfg.g_p;
        if area % cfg.g_p != 0 {
            p_k += 1;
        }
        let p_k = p_k.min(cfg.m_p) as f64;

        let dist = oracle_skeleton_sq_dist(m);
        let max_d = dist.iter().flatten().map(|&d| (d as f64).sqrt()).fold(0.0, f64::max);
        let sigma = max_d / 3.0;
        let weights: Vec<f64> = cells
            .iter()
            .map(|&(_, _, px, py)| {
                let d2 = dist[py * w + px].unwrap() as f64;
                if sigma == 0.0 {
                    if d2 == 0.0 {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    (-d2 / (2.0 * sigma * sigma)).exp()
                }
            })
            .collect();
        let z: f64 = weights.iter().sum();
        for (&(i, j, _, _), wt) in cells.iter().zip(&weights) {
            raw[i * gw + j] = wt * p_k / z;
        }
    }
    raw
}

/// Output of [`oracle_aggregate`].
#[derive(Clone, Debug, PartialEq)]
pub struct OracleAggregation {
    pub masks: Vec<BinaryMask>,
    pub class_of: Vec<Option<usize>>,
}

fn majority_shrink(m: &BinaryMask, tw: usize, th: usize) -> BinaryMask {
    let f = m.width() / tw;
    BinaryMask::from_fn(tw, th, |x, y| {
        let mut n = 0;
        for yy in y * f..(y + 1) * f {
            for xx in x * f..(x + 1) * f {
                if m.get(xx, yy) {
                    n += 1;
                }
            }
        }
        2 * n >= f * f
    })
}

fn grow(m: &BinaryMask, w: usize, h: usize) -> BinaryMask {
    let f = w / m.width();
    BinaryMask::from_fn(w, h, |x, y| m.get(x / f, y / f))
}

/// Overlap scores by pixel counting, then per-class unions of the proposals
/// whose best score exceeds alpha (ties to the lowest class) and pass-through
/// of the rest. Assumes an integer scale factor between the two sets.
pub fn oracle_aggregate(sam: &MaskSet, text: &MaskSet, cfg: &AggregateConfig) -> OracleAggregation {
    let (w, h) = sam.dims();
    let (tw, th) = text.dims();
    let pairs: Vec<(BinaryMask, Vec<BinaryMask>)> = sam
        .iter()
        .map(|s| {
            if (w, h) == (tw, th) || text.is_empty() {
                (s.clone(), text.masks().to_vec())
            } else {
                match cfg.compare_at {
                    CompareAt::Text => (majority_shrink(s, tw, th), text.masks().to_vec()),
                    CompareAt::Full => (s.clone(), text.iter().map(|t| grow(t, w, h)).collect()),
                }
            }
        })
        .collect();

    let mut choice = Vec::new();
    for (s, ts) in &pairs {
        let (sw, sh) = s.dims();
        let mut area = 0usize;
        let mut inter = vec![0usize; ts.len()];
        for y in 0..sh {
            for x in 0..sw {
                if s.get(x, y) {
                    area += 1;
                    for (k, t) in ts.iter().enumerate() {
                        if t.get(x, y) {
                            inter[k] += 1;
                        }
                    }
                }
            }
        }
        let mut best: Option<(usize, f64)> = None;
        for (k, &c) in inter.iter().enumerate() {
            let o = c as f64 / (area as f64 + cfg.eps);
            if o > cfg.alpha {
                match best {
                    Some((_, b)) if o <= b => {}
                    _ => best = Some((k, o)),
                }
            }
        }
        choice.push(best.map(|(k, _)| k));
    }

    let mut masks = Vec::new();
    let mut class_of = Vec::new();
    for k in 0..text.len() {
        let members: Vec<usize> = (0..sam.len()).filter(|&i| choice[i] == Some(k)).collect();
        if members.is_empty() {
            continue;
        }
        masks.push(BinaryMask::from_fn(w, h, |x, y| {
            members.iter().any(|&i| sam.masks()[i].get(x, y))
        }));
        class_of.push(Some(k));
    }
    for (i, c) in choice.iter().enumerate() {
        if c.is_none() {
            masks.push(sam.masks()[i].clone());
            class_of.push(None);
        }
    }
    OracleAggregation { masks, class_of }
}

/// Single-channel `k x k` cross-correlation with zero padding, by summing
/// every input pixel's contribution to every output pixel.
pub fn oracle_conv(plane: &[f64], h: usize, w: usize, kernel: &[f64], k: usize) -> Vec<f64> {
    let r = (k / 2) as i64;
    let mut out = vec![0.0; h * w];
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            for yy in 0..h as i64 {
                for xx in 0..w as i64 {
                    let (a, b) = (yy - y + r, xx - x + r);
                    if (0..k as i64).contains(&a) && (0..k as i64).contains(&b) {
                        out[(y * w as i64 + x) as usize] +=
                            kernel[(a * k as i64 + b) as usize] * plane[(yy * w as i64 + xx) as usize];
                    }
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_cell_mask_has_unit_target() {
        let m = BinaryMask::rect(16, 16, 4, 4, 5, 5);
        let gt = MaskSet::new(16, 16, vec![m]).unwrap();
        let cfg = SamplerConfig {
            grid_h: 16,
            grid_w: 16,
            ..SamplerConfig::default()
        };
        let raw = oracle_probability_target(&gt, &cfg);
        assert_eq!(raw[4 * 16 + 4], 1.0);
        assert_eq!(raw.iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn empty_text_passes_through() {
        let sam = MaskSet::new(4, 4, vec![BinaryMask::rect(4, 4, 0, 0, 2, 2)]).unwrap();
        let o = oracle_aggregate(&sam, &MaskSet::empty(4, 4), &AggregateConfig::default());
        assert_eq!(o.masks, sam.masks());
        assert_eq!(o.class_of, vec![None]);
    }

    #[test]
    fn edt_of_single_point() {
        let mut m = BinaryMask::new(5, 4);
        m.set(1, 2, true);
        let d = oracle_edt(&m, Reference::SetPixels).unwrap();
        assert_eq!(d[0], 1 + 4);
        assert_eq!(d[3 * 5 + 4], 9 + 1);
        assert!(oracle_edt(&BinaryMask::new(3, 3), Reference::SetPixels).is_none());
    }

    #[test]
    fn conv_identity_kernel() {
        let plane: Vec<f64> = (0..12).map(|v| v as f64).collect();
        let mut k = vec![0.0; 9];
        k[4] = 1.0;
        assert_eq!(oracle_conv(&plane, 3, 4, &k, 3), plane);
    }
}
