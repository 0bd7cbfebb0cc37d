//! Exact Euclidean distance transforms and medial-axis skeletons.
//!
//! The transform is the two-pass separable lower-envelope method carried out
//! entirely in integer arithmetic, so squared distances are exact.

use crate::error::{Error, Result};
use crate::mask::BinaryMask;
use crate::scalar::Scalar;

/// Which pixels distances are measured to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reference {
    SetPixels,
    UnsetPixels,
}

/// Per-pixel distances. Pixels outside `support` (when present) are undefined
/// and hold NaN.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceField<T> {
    pub width: usize,
    pub height: usize,
    pub values: Vec<T>,
    pub squared: bool,
    pub support: Option<BinaryMask>,
}

impl<T: Scalar> DistanceField<T> {
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> T {
        self.values[y * self.width + x]
    }

    pub fn is_defined(&self, x: usize, y: usize) -> bool {
        self.support.as_ref().is_none_or(|s| s.get(x, y))
    }

    /// Largest defined value, `None` if nothing is defined.
    pub fn max_defined(&self) -> Option<T> {
        self.values
            .iter()
            .enumerate()
            .filter(|(i, _)| self.support.as_ref().is_none_or(|s| s.get_index(*i)))
            .map(|(_, &v)| v)
            .reduce(T::max)
    }
}

/// Exact squared distance from each pixel to the nearest reference pixel.
pub fn squared_distances(m: &BinaryMask, reference: Reference) -> Result<Vec<u64>> {
    let (w, h) = m.dims();
    let want = reference == Reference::SetPixels;
    lower_envelope_edt(w, h, |i| m.get_index(i) == want).ok_or(Error::NoReferencePixel)
}

/// Euclidean distance transform (non-squared values).
pub fn euclidean_distance_transform<T: Scalar>(
    m: &BinaryMask,
    reference: Reference,
) -> Result<DistanceField<T>> {
    let sq = squared_distances(m, reference)?;
    Ok(DistanceField {
        width: m.width(),
        height: m.height(),
        values: sq.iter().map(|&d| T::of_usize(d as usize).sqrt()).collect(),
        squared: false,
        support: None,
    })
}

/// Squared Euclidean distance transform; every value is an integer.
pub fn squared_distance_transform<T: Scalar>(
    m: &BinaryMask,
    reference: Reference,
) -> Result<DistanceField<T>> {
    let sq = squared_distances(m, reference)?;
    Ok(DistanceField {
        width: m.width(),
        height: m.height(),
        values: sq.iter().map(|&d| T::of_usize(d as usize)).collect(),
        squared: true,
        support: None,
    })
}

/// Meijster et al. two-phase transform. `is_ref(i)` marks reference pixels by
/// linear index. Returns `None` when there is no reference pixel.
fn lower_envelope_edt(w: usize, h: usize, is_ref: impl Fn(usize) -> bool) -> Option<Vec<u64>> {
    if w == 0 || h == 0 {
        return None;
    }
    let inf = (w + h) as i64;
    let mut g = vec![inf; w * h];
    let mut any = false;
    for x in 0..w {
        if is_ref(x) {
            g[x] = 0;
            any = true;
        }
        for y in 1..h {
            let i = y * w + x;
            if is_ref(i) {
                g[i] = 0;
                any = true;
            } else {
                g[i] = (g[i - w] + 1).min(inf);
            }
        }
        for y in (0..h - 1).rev() {
            let i = y * w + x;
            if g[i + w] + 1 < g[i] {
                g[i] = g[i + w] + 1;
            }
        }
    }
    if !any {
        return None;
    }

    let mut out = vec![0u64; w * h];
    let mut s = vec![0i64; w];
    let mut t = vec![0i64; w];
    let wi = w as i64;
    for y in 0..h {
        let row = &g[y * w..(y + 1) * w];
        let f = |x: i64, i: i64| (x - i) * (x - i) + row[i as usize] * row[i as usize];
        let sep = |i: i64, u: i64| {
            let gu = row[u as usize];
            let gi = row[i as usize];
            (u * u - i * i + gu * gu - gi * gi).div_euclid(2 * (u - i))
        };
        let mut q: i64 = 0;
        s[0] = 0;
        t[0] = 0;
        for u in 1..wi {
            while q >= 0 && f(t[q as usize], s[q as usize]) > f(t[q as usize], u) {
                q -= 1;
            }
            if q < 0 {
                q = 0;
                s[0] = u;
            } else {
                let ws = 1 + sep(s[q as usize], u);
                if ws < wi {
                    q += 1;
                    s[q as usize] = u;
                    t[q as usize] = ws;
                }
            }
        }
        for u in (0..wi).rev() {
            out[y * w + u as usize] = f(u, s[q as usize]) as u64;
            if u == t[q as usize] {
                q -= 1;
            }
        }
    }
    Some(out)
}

/// Skeleton and exact squared skeleton distances of one mask, computed on the
/// mask's bounding box padded by one pixel.
#[derive(Clone, Debug)]
pub struct SkeletonGeometry {
    pub skeleton: BinaryMask,
    /// Squared distance to the nearest skeleton pixel, indexed like the mask;
    /// `u64::MAX` outside the mask.
    pub sq_dist: Vec<u64>,
    /// Maximum of `sq_dist` over the mask.
    pub max_sq: u64,
}

impl SkeletonGeometry {
    pub fn of(m: &BinaryMask) -> Result<Self> {
        let (x0, y0, x1, y1) = m.bbox().ok_or(Error::EmptyMask)?;
        // pad so that out-of-canvas pixels behave as background
        let (ox, oy) = (x0 as isize - 1, y0 as isize - 1);
        let (cw, ch) = (x1 - x0 + 3, y1 - y0 + 3);
        let crop = m.crop(ox, oy, cw, ch);

        let interior = lower_envelope_edt(cw, ch, |i| !crop.get_index(i))
            .expect("padding guarantees background");
        let mut ridge = BinaryMask::new(cw, ch);
        for (x, y) in crop.iter_set() {
            let d = interior[y * cw + x];
            let is_ridge = (-1isize..=1).all(|dy| {
                (-1isize..=1).all(|dx| {
                    let (nx, ny) = (x as isize + dx, y as isize + dy);
                    // padding keeps every neighbour inside the crop
                    interior[ny as usize * cw + nx as usize] <= d
                })
            });
            if is_ridge {
                ridge.set(x, y, true);
            }
        }

        let to_skel = lower_envelope_edt(cw, ch, |i| ridge.get_index(i))
            .expect("a non-empty mask has a non-empty ridge");

        let (w, h) = m.dims();
        let mut skeleton = BinaryMask::new(w, h);
        let mut sq_dist = vec![u64::MAX; w * h];
        let mut max_sq = 0;
        for (x, y) in crop.iter_set() {
            let (gx, gy) = ((x as isize + ox) as usize, (y as isize + oy) as usize);
            let d = to_skel[y * cw + x];
            sq_dist[gy * w + gx] = d;
            max_sq = max_sq.max(d);
            if ridge.get(x, y) {
                skeleton.set(gx, gy, true);
            }
        }
        Ok(SkeletonGeometry {
            skeleton,
            sq_dist,
            max_sq,
        })
    }

    /// `max skeleton distance / 3`.
    pub fn bandwidth<T: Scalar>(&self) -> T {
        T::of_usize(self.max_sq as usize).sqrt() / T::lit(3.0)
    }
}

/// Ridge pixels of the interior distance transform: mask pixels whose distance
/// to the background is at least that of all 8 neighbours. Pixels outside the
/// canvas count as background.
pub fn medial_skeleton(m: &BinaryMask) -> Result<BinaryMask> {
    Ok(SkeletonGeometry::of(m)?.skeleton)
}

/// Distance from each mask pixel to the nearest skeleton pixel. Pixels outside
/// the mask are undefined.
pub fn skeleton_distance_field<T: Scalar>(m: &BinaryMask) -> Result<DistanceField<T>> {
    let geo = SkeletonGeometry::of(m)?;
    Ok(DistanceField {
        width: m.width(),
        height: m.height(),
        values: geo
            .sq_dist
            .iter()
            .map(|&d| {
                if d == u64::MAX {
                    T::nan()
                } else {
                    T::of_usize(d as usize).sqrt()
                }
            })
            .collect(),
        squared: false,
        support: Some(m.clone()),
    })
}

/// Gaussian bandwidth of a mask: max skeleton distance over the mask, divided by 3.
pub fn bandwidth<T: Scalar>(m: &BinaryMask) -> Result<T> {
    Ok(SkeletonGeometry::of(m)?.bandwidth())
}
