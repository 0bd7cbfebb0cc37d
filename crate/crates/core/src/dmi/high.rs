use rand::Rng as _;

use super::{check_masks, FeatureMap};
use crate::error::{Error, Result};
use crate::mask::MaskSet;
use crate::rng::Rng;
use crate::scalar::Scalar;

/// Boundary distances are capped at this many cells.
pub const BOUNDARY_CAP: usize = 3;

pub const HIGH_FREQ_BLOCKS: [&str; 6] = ["proj_w", "proj_b", "mlp_w", "mlp_b", "dw", "gamma"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HighFreqConfig {
    /// Channels of the projected mask summary.
    pub embed_dim: usize,
    /// Number of class-presence channels in the summary.
    pub class_cap: usize,
    /// Odd depthwise kernel size.
    pub kernel: usize,
}

impl Default for HighFreqConfig {
    fn default() -> Self {
        HighFreqConfig {
            embed_dim: 8,
            class_cap: 8,
            kernel: 3,
        }
    }
}

impl HighFreqConfig {
    pub fn summary_dim(&self) -> usize {
        2 + self.class_cap
    }
}

/// Learnable parameters of the high-frequency path for `channels` feature
/// channels.
#[derive(Clone, Debug, PartialEq)]
pub struct HighFreqParams<T> {
    pub channels: usize,
    pub cfg: HighFreqConfig,
    /// `E x S`
    pub proj_w: Vec<T>,
    pub proj_b: Vec<T>,
    /// `D x (D + E)`
    pub mlp_w: Vec<T>,
    pub mlp_b: Vec<T>,
    /// `D x k x k`
    pub dw: Vec<T>,
    pub gamma: Vec<T>,
}

impl<T: Scalar> HighFreqParams<T> {
    /// All weights zero, `gamma` one.
    pub fn zeros(channels: usize, cfg: HighFreqConfig) -> Self {
        let (d, e, s, k) = (channels, cfg.embed_dim, cfg.summary_dim(), cfg.kernel);
        HighFreqParams {
            channels,
            cfg,
            proj_w: vec![T::zero(); e * s],
            proj_b: vec![T::zero(); e],
            mlp_w: vec![T::zero(); d * (d + e)],
            mlp_b: vec![T::zero(); d],
            dw: vec![T::zero(); d * k * k],
            gamma: vec![T::one(); d],
        }
    }

    /// Uniform fan-in initialisation with `gamma` one.
    pub fn init(channels: usize, cfg: HighFreqConfig, rng: &mut Rng) -> Self {
        let mut p = Self::zeros(channels, cfg);
        let mut fill = |v: &mut Vec<T>, fan_in: usize| {
            let bound = (1.0 / fan_in as f64).sqrt();
            for x in v.iter_mut() {
                *x = T::lit(rng.random_range(-bound..bound));
            }
        };
        let (s, k) = (cfg.summary_dim(), cfg.kernel);
        fill(&mut p.proj_w, s);
        fill(&mut p.proj_b, s);
        fill(&mut p.mlp_w, channels + cfg.embed_dim);
        fill(&mut p.mlp_b, channels + cfg.embed_dim);
        fill(&mut p.dw, k * k);
        p
    }

    pub fn blocks(&self) -> [(&'static str, &[T]); 6] {
        [
            (HIGH_FREQ_BLOCKS[0], &self.proj_w),
            (HIGH_FREQ_BLOCKS[1], &self.proj_b),
            (HIGH_FREQ_BLOCKS[2], &self.mlp_w),
            (HIGH_FREQ_BLOCKS[3], &self.mlp_b),
            (HIGH_FREQ_BLOCKS[4], &self.dw),
            (HIGH_FREQ_BLOCKS[5], &self.gamma),
        ]
    }

    pub fn blocks_mut(&mut self) -> [&mut Vec<T>; 6] {
        [
            &mut self.proj_w,
            &mut self.proj_b,
            &mut self.mlp_w,
            &mut self.mlp_b,
            &mut self.dw,
            &mut self.gamma,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let c = &self.cfg;
        if c.kernel.is_multiple_of(2) {
            return Err(Error::Config(format!("kernel size {} is not odd", c.kernel)));
        }
        let fresh = Self::zeros(self.channels, *c);
        for ((name, want), (_, got)) in fresh.blocks().iter().zip(self.blocks().iter()) {
            if want.len() != got.len() {
                return Err(Error::Shape(format!(
                    "{name} has {} values, expected {}",
                    got.len(),
                    want.len()
                )));
            }
            if got.iter().any(|v| !v.is_finite()) {
                return Err(Error::Shape(format!("{name} has non-finite values")));
            }
        }
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        self.blocks().iter().map(|(_, b)| b.len()).sum()
    }
}

/// Fixed-size per-cell description of the mask stack.
///
/// Channel 0 counts the masks covering the cell, channel 1 is the distance to
/// the nearest mask boundary pixel capped at [`BOUNDARY_CAP`] and divided by
/// it, and channel `2 + c` is 1 where a mask tagged with class `c` covers the
/// cell (classes at or beyond `class_cap` are dropped). A boundary pixel is a
/// mask pixel with a 4-neighbour outside the mask or the canvas.
pub fn mask_summary<T: Scalar>(
    masks: &MaskSet,
    class_of: Option<&[Option<usize>]>,
    class_cap: usize,
) -> Result<FeatureMap<T>> {
    let (w, h) = masks.dims();
    if let Some(tags) = class_of {
        if tags.len() != masks.len() {
            return Err(Error::Shape(format!(
                "{} class tags for {} masks",
                tags.len(),
                masks.len()
            )));
        }
    }
    let n = w * h;
    let mut s = FeatureMap::zeros(2 + class_cap, h, w);
    let mut boundary = vec![false; n];
    for (i, m) in masks.iter().enumerate() {
        let class = class_of.and_then(|t| t[i]).filter(|&c| c < class_cap);
        for (x, y) in m.iter_set() {
            let cell = y * w + x;
            *s.at_mut(0, cell) += T::one();
            if let Some(c) = class {
                *s.at_mut(2 + c, cell) = T::one();
            }
            let (xi, yi) = (x as isize, y as isize);
            if [(1, 0), (-1, 0), (0, 1), (0, -1)]
                .iter()
                .any(|&(dx, dy)| !m.get_signed(xi + dx, yi + dy))
            {
                boundary[cell] = true;
            }
        }
    }
    let cap = BOUNDARY_CAP as isize;
    let cap_sq = cap * cap;
    for y in 0..h as isize {
        for x in 0..w as isize {
            let mut best = cap_sq;
            for dy in -cap..=cap {
                for dx in -cap..=cap {
                    let (u, v) = (x + dx, y + dy);
                    if u < 0 || v < 0 || u >= w as isize || v >= h as isize {
                        continue;
                    }
                    if boundary[v as usize * w + u as usize] {
                        best = best.min(dx * dx + dy * dy);
                    }
                }
            }
            let d = T::of_usize(best as usize).sqrt() / T::of_usize(BOUNDARY_CAP);
            *s.at_mut(1, y as usize * w + x as usize) = d;
        }
    }
    Ok(s)
}

struct Forward<T> {
    summary: FeatureMap<T>,
    proj: FeatureMap<T>,
    mlp: FeatureMap<T>,
    conv: FeatureMap<T>,
}

fn forward<T: Scalar>(
    f: &FeatureMap<T>,
    masks: &MaskSet,
    class_of: Option<&[Option<usize>]>,
    p: &HighFreqParams<T>,
) -> Result<Forward<T>> {
    p.validate()?;
    check_masks(f, masks)?;
    if f.channels != p.channels {
        return Err(Error::Shape(format!(
            "features have {} channels, parameters {}",
            f.channels, p.channels
        )));
    }
    let (d, e, sd, k) = (f.channels, p.cfg.embed_dim, p.cfg.summary_dim(), p.cfg.kernel);
    let (h, w) = (f.h, f.w);
    let n = h * w;
    let summary = mask_summary::<T>(masks, class_of, p.cfg.class_cap)?;

    let mut proj = FeatureMap::zeros(e, h, w);
    for j in 0..e {
        for cell in 0..n {
            let mut z = p.proj_b[j];
            for i in 0..sd {
                z += p.proj_w[j * sd + i] * summary.at(i, cell);
            }
            *proj.at_mut(j, cell) = z.tanh();
        }
    }

    let width = d + e;
    let mut mlp = FeatureMap::zeros(d, h, w);
    for o in 0..d {
        let row = &p.mlp_w[o * width..(o + 1) * width];
        for cell in 0..n {
            let mut z = p.mlp_b[o];
            for i in 0..d {
                z += row[i] * f.at(i, cell);
            }
            for j in 0..e {
                z += row[d + j] * proj.at(j, cell);
            }
            *mlp.at_mut(o, cell) = z;
        }
    }

    let r = (k / 2) as isize;
    let mut conv = FeatureMap::zeros(d, h, w);
    for c in 0..d {
        let kern = &p.dw[c * k * k..(c + 1) * k * k];
        for y in 0..h as isize {
            for x in 0..w as isize {
                let mut acc = T::zero();
                for a in 0..k as isize {
                    let yy = y + a - r;
                    if yy < 0 || yy >= h as isize {
                        continue;
                    }
                    for b in 0..k as isize {
                        let xx = x + b - r;
                        if xx < 0 || xx >= w as isize {
                            continue;
                        }
                        acc += kern[(a * k as isize + b) as usize] * mlp.get(c, yy as usize, xx as usize);
                    }
                }
                *conv.at_mut(c, y as usize * w + x as usize) = acc;
            }
        }
    }
    Ok(Forward {
        summary,
        proj,
        mlp,
        conv,
    })
}

/// `f_h + gamma * DWConv(MLP([f_h; proj(summary)]))`.
///
/// `class_of` tags masks with classes for the summary's class channels.
pub fn high_freq_inject<T: Scalar>(
    f_h: &FeatureMap<T>,
    masks: &MaskSet,
    class_of: Option<&[Option<usize>]>,
    p: &HighFreqParams<T>,
) -> Result<FeatureMap<T>> {
    let fw = forward(f_h, masks, class_of, p)?;
    let n = f_h.cells();
    let mut out = f_h.clone();
    for c in 0..f_h.channels {
        for cell in 0..n {
            *out.at_mut(c, cell) += p.gamma[c] * fw.conv.at(c, cell);
        }
    }
    Ok(out)
}

/// Gradients of the high-frequency path.
#[derive(Clone, Debug, PartialEq)]
pub struct HighFreqGrads<T> {
    pub params: HighFreqParams<T>,
    pub features: FeatureMap<T>,
}

/// Backward pass of [`high_freq_inject`] for an output gradient `d_out`.
pub fn high_freq_backward<T: Scalar>(
    f_h: &FeatureMap<T>,
    masks: &MaskSet,
    class_of: Option<&[Option<usize>]>,
    p: &HighFreqParams<T>,
    d_out: &FeatureMap<T>,
) -> Result<HighFreqGrads<T>> {
    if !d_out.same_shape(f_h) {
        return Err(Error::Shape("output gradient shape differs from input".into()));
    }
    let fw = forward(f_h, masks, class_of, p)?;
    let (d, e, sd, k) = (f_h.channels, p.cfg.embed_dim, p.cfg.summary_dim(), p.cfg.kernel);
    let (h, w) = (f_h.h, f_h.w);
    let n = h * w;
    let mut g = HighFreqParams::zeros(d, p.cfg);
    g.gamma.iter_mut().for_each(|v| *v = T::zero());
    let mut df = d_out.clone();

    // gate
    let mut dconv = FeatureMap::zeros(d, h, w);
    for c in 0..d {
        for cell in 0..n {
            let go = d_out.at(c, cell);
            g.gamma[c] += go * fw.conv.at(c, cell);
            *dconv.at_mut(c, cell) = p.gamma[c] * go;
        }
    }

    // depthwise convolution
    let r = (k / 2) as isize;
    let mut dmlp = FeatureMap::zeros(d, h, w);
    for c in 0..d {
        for y in 0..h as isize {
            for x in 0..w as isize {
                let go = dconv.get(c, y as usize, x as usize);
                for a in 0..k as isize {
                    let yy = y + a - r;
                    if yy < 0 || yy >= h as isize {
                        continue;
                    }
                    for b in 0..k as isize {
                        let xx = x + b - r;
                        if xx < 0 || xx >= w as isize {
                            continue;
                        }
                        let ki = c * k * k + (a * k as isize + b) as usize;
                        let src = yy as usize * w + xx as usize;
                        g.dw[ki] += go * fw.mlp.at(c, src);
                        *dmlp.at_mut(c, src) += p.dw[ki] * go;
                    }
                }
            }
        }
    }

    // mlp
    let width = d + e;
    let mut dproj = FeatureMap::<T>::zeros(e, h, w);
    for o in 0..d {
        for cell in 0..n {
            let go = dmlp.at(o, cell);
            g.mlp_b[o] += go;
            for i in 0..d {
                g.mlp_w[o * width + i] += go * f_h.at(i, cell);
                *df.at_mut(i, cell) += p.mlp_w[o * width + i] * go;
            }
            for j in 0..e {
                g.mlp_w[o * width + d + j] += go * fw.proj.at(j, cell);
                *dproj.at_mut(j, cell) += p.mlp_w[o * width + d + j] * go;
            }
        }
    }

    // projector
    for j in 0..e {
        for cell in 0..n {
            let t = fw.proj.at(j, cell);
            let dz = dproj.at(j, cell) * (T::one() - t * t);
            g.proj_b[j] += dz;
            for i in 0..sd {
                g.proj_w[j * sd + i] += dz * fw.summary.at(i, cell);
            }
        }
    }

    Ok(HighFreqGrads {
        params: g,
        features: df,
    })
}
