use super::{AreaMode, ProbabilityGrid, SamplerConfig};
use crate::error::{Error, Result};
use crate::geometry::SkeletonGeometry;
use crate::mask::{cell_center_pixel, BinaryMask, MaskSet};
use crate::scalar::Scalar;

/// `min(ceil(area / g_p), m_p)`; 0 for an empty mask.
pub fn expected_points(area: usize, cfg: &SamplerConfig) -> usize {
    if area == 0 {
        return 0;
    }
    area.div_ceil(cfg.g_p).min(cfg.m_p)
}

/// Grid-resolution mask of the cells whose center pixel lies in `m`.
pub fn cell_rasterization(m: &BinaryMask, grid_h: usize, grid_w: usize) -> BinaryMask {
    BinaryMask::from_fn(grid_w, grid_h, |j, i| {
        m.get(
            cell_center_pixel(j, grid_w, m.width()),
            cell_center_pixel(i, grid_h, m.height()),
        )
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct TargetReport<T> {
    pub grid: ProbabilityGrid<T>,
    /// Expected points assigned to each mask (0 for skipped masks).
    pub expected: Vec<usize>,
    /// Masks whose cell rasterization is empty.
    pub skipped: Vec<usize>,
}

/// Target sampling probabilities for a disjoint set of ground-truth masks.
///
/// Each mask spreads `P_k` expected points over its grid cells with a
/// Gaussian weight in the distance from the cell center to the mask skeleton,
/// bandwidth `sigma_k = max skeleton distance / 3`, so the raw mass of every
/// mask sums to exactly `P_k`.
pub fn probability_target<T: Scalar>(gt: &MaskSet, cfg: &SamplerConfig) -> Result<TargetReport<T>> {
    cfg.validate()?;
    if !gt.is_disjoint() {
        return Err(Error::NotDisjoint);
    }
    let (gh, gw) = (cfg.grid_h, cfg.grid_w);
    let mut raw = vec![T::zero(); gh * gw];
    let mut expected = vec![0; gt.len()];
    let mut skipped = Vec::new();

    for (k, mask) in gt.iter().enumerate() {
        let cells = cell_rasterization(mask, gh, gw);
        if cells.is_empty() {
            skipped.push(k);
            continue;
        }
        let area = match cfg.area_mode {
            AreaMode::GridCells => cells.area(),
            AreaMode::Pixels => mask.area(),
        };
        let p_k = expected_points(area, cfg);
        expected[k] = p_k;

        let geo = SkeletonGeometry::of(mask)?;
        // d^2 / (2 sigma^2) with sigma^2 = max_sq / 9
        let scale = if geo.max_sq == 0 {
            T::zero()
        } else {
            T::lit(9.0) / (T::lit(2.0) * T::of_usize(geo.max_sq as usize))
        };
        let mut weights = Vec::with_capacity(cells.area());
        for (j, i) in cells.iter_set() {
            let px = cell_center_pixel(j, gw, mask.width());
            let py = cell_center_pixel(i, gh, mask.height());
            let d2 = geo.sq_dist[py * mask.width() + px];
            let weight = if geo.max_sq == 0 {
                // sigma = 0: indicator on the skeleton
                if d2 == 0 {
                    T::one()
                } else {
                    T::zero()
                }
            } else {
                (-(T::of_usize(d2 as usize) * scale)).exp()
            };
            weights.push((i * gw + j, weight));
        }
        let total: T = weights.iter().map(|&(_, w)| w).sum();
        let mass = T::of_usize(p_k);
        for (idx, w) in weights {
            raw[idx] = w * mass / total;
        }
    }

    Ok(TargetReport {
        grid: ProbabilityGrid::from_raw(gh, gw, raw)?,
        expected,
        skipped,
    })
}
