//! A stand-in for a promptable segmenter that over-segments on purpose.

use rand::seq::index::sample;
use rand::Rng as _;

use crate::mask::{BinaryMask, LabelMap, MaskSet};
use crate::rng::{self, purpose};
use crate::tspp::PointPrompts;

#[derive(Clone, Debug, PartialEq)]
pub struct SamConfig {
    /// Inclusive range of pieces per region.
    pub splits: (usize, usize),
    pub seed: u64,
}

impl Default for SamConfig {
    fn default() -> Self {
        SamConfig {
            splits: (1, 1),
            seed: 0,
        }
    }
}

/// Every nonzero region of `regions`, ascending by id, cut into Voronoi
/// pieces around seed pixels drawn uniformly (without repetition) inside the
/// region. Pixels go to the nearest seed, ties to the lowest seed index. The
/// piece count of each region is drawn from `cfg.splits` and capped by the
/// region's area.
pub fn split_regions(regions: &LabelMap, cfg: &SamConfig) -> Vec<(u32, Vec<BinaryMask>)> {
    let (w, h) = regions.dims();
    let mut r = rng::stream(cfg.seed, purpose::SAM_SPLIT);
    let mut pixels: std::collections::BTreeMap<u32, Vec<(usize, usize)>> = Default::default();
    for y in 0..h {
        for x in 0..w {
            let l = regions.get(x, y);
            if l != 0 {
                pixels.entry(l).or_default().push((x, y));
            }
        }
    }
    let mut out = Vec::with_capacity(pixels.len());
    for (id, px) in pixels {
        let lo = cfg.splits.0.max(1);
        let n = r.random_range(lo..=cfg.splits.1.max(lo)).min(px.len());
        let seeds: Vec<(i64, i64)> = sample(&mut r, px.len(), n)
            .into_iter()
            .map(|i| (px[i].0 as i64, px[i].1 as i64))
            .collect();
        let mut pieces = vec![BinaryMask::new(w, h); n];
        for &(x, y) in &px {
            let mut best = 0;
            let mut best_d = i64::MAX;
            for (s, &(sx, sy)) in seeds.iter().enumerate() {
                let d = (sx - x as i64).pow(2) + (sy - y as i64).pow(2);
                if d < best_d {
                    best = s;
                    best_d = d;
                }
            }
            pieces[best].set(x, y, true);
        }
        out.push((id, pieces));
    }
    out
}

/// For each point, the piece of the region under it; points on background
/// produce nothing and a piece hit twice is returned once, at its first hit.
pub fn simulate_sam(regions: &LabelMap, points: &PointPrompts, cfg: &SamConfig) -> MaskSet {
    let (w, h) = regions.dims();
    let split = split_regions(regions, cfg);
    let mut taken: Vec<Vec<bool>> = split.iter().map(|(_, p)| vec![false; p.len()]).collect();
    let mut masks = Vec::new();
    for p in &points.points {
        let (x, y) = p.pixel(w, h);
        let id = regions.get(x, y);
        if id == 0 {
            continue;
        }
        let r = split.binary_search_by_key(&id, |(i, _)| *i).expect("region listed");
        let piece = split[r].1.iter().position(|m| m.get(x, y)).expect("pieces cover the region");
        if !taken[r][piece] {
            taken[r][piece] = true;
            masks.push(split[r].1[piece].clone());
        }
    }
    MaskSet::new_disjoint(w, h, masks).expect("pieces are disjoint")
}
