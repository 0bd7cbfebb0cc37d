//! The prompter head.
//!
//! Per class and cell, a 3x3 patch of the cost map is embedded by a one-layer
//! MLP into `C` channels. A single-head scaled dot-product attention block
//! then mixes the `K` class tokens of each cell (with a residual connection).
//! Two linear heads read the enriched tokens: the probability head from the
//! class-averaged token through a logistic, the mask head per class token.

use rand::Rng as _;

use super::{CostMap, ProbabilityGrid};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::{dot, sigmoid, softmax_in_place, Scalar};

/// Spatial patch size fed to the embedding MLP.
pub const PATCH: usize = 9;

#[derive(Clone, Debug, PartialEq)]
pub struct TsppHeadParams<T> {
    pub channels: usize,
    /// `C x 9`
    pub embed_w: Vec<T>,
    pub embed_b: Vec<T>,
    /// `C x C` each
    pub query: Vec<T>,
    pub key: Vec<T>,
    pub value: Vec<T>,
    pub prob_w: Vec<T>,
    /// length 1
    pub prob_b: Vec<T>,
    pub mask_w: Vec<T>,
    /// length 1
    pub mask_b: Vec<T>,
}

pub const BLOCK_NAMES: [&str; 9] = [
    "embed_w", "embed_b", "query", "key", "value", "prob_w", "prob_b", "mask_w", "mask_b",
];

impl<T: Scalar> TsppHeadParams<T> {
    pub fn zeros(channels: usize) -> Self {
        let c = channels;
        TsppHeadParams {
            channels,
            embed_w: vec![T::zero(); c * PATCH],
            embed_b: vec![T::zero(); c],
            query: vec![T::zero(); c * c],
            key: vec![T::zero(); c * c],
            value: vec![T::zero(); c * c],
            prob_w: vec![T::zero(); c],
            prob_b: vec![T::zero()],
            mask_w: vec![T::zero(); c],
            mask_b: vec![T::zero()],
        }
    }

    /// Uniform fan-in scaled initialisation; output biases start at zero.
    pub fn init(channels: usize, rng: &mut Rng) -> Self {
        let mut p = Self::zeros(channels);
        let c = channels as f64;
        let mut fill = |v: &mut Vec<T>, fan_in: f64| {
            let bound = (1.0 / fan_in).sqrt();
            for x in v.iter_mut() {
                *x = T::lit(rng.random_range(-bound..bound));
            }
        };
        fill(&mut p.embed_w, PATCH as f64);
        fill(&mut p.embed_b, PATCH as f64);
        fill(&mut p.query, c);
        fill(&mut p.key, c);
        fill(&mut p.value, c);
        fill(&mut p.prob_w, c);
        fill(&mut p.mask_w, c);
        p
    }

    pub fn blocks(&self) -> [(&'static str, &[T]); 9] {
        [
            (BLOCK_NAMES[0], &self.embed_w),
            (BLOCK_NAMES[1], &self.embed_b),
            (BLOCK_NAMES[2], &self.query),
            (BLOCK_NAMES[3], &self.key),
            (BLOCK_NAMES[4], &self.value),
            (BLOCK_NAMES[5], &self.prob_w),
            (BLOCK_NAMES[6], &self.prob_b),
            (BLOCK_NAMES[7], &self.mask_w),
            (BLOCK_NAMES[8], &self.mask_b),
        ]
    }

    pub fn blocks_mut(&mut self) -> [&mut Vec<T>; 9] {
        [
            &mut self.embed_w,
            &mut self.embed_b,
            &mut self.query,
            &mut self.key,
            &mut self.value,
            &mut self.prob_w,
            &mut self.prob_b,
            &mut self.mask_w,
            &mut self.mask_b,
        ]
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: T, other: &Self) {
        for (dst, (_, src)) in self.blocks_mut().into_iter().zip(other.blocks()) {
            for (d, &s) in dst.iter_mut().zip(src) {
                *d += alpha * s;
            }
        }
    }

    pub fn scale(&mut self, alpha: T) {
        for b in self.blocks_mut() {
            for v in b.iter_mut() {
                *v *= alpha;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|(_, b)| b.iter().all(|v| v.is_finite()))
    }

    pub fn num_params(&self) -> usize {
        self.blocks().iter().map(|(_, b)| b.len()).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.channels;
        let want = [c * PATCH, c, c * c, c * c, c * c, c, 1, c, 1];
        for ((name, b), n) in self.blocks().iter().zip(want) {
            if b.len() != n {
                return Err(Error::Shape(format!("{name}: {} values, want {n}", b.len())));
            }
        }
        if !self.is_finite() {
            return Err(Error::Shape("non-finite head parameters".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadOutput<T> {
    pub pred: ProbabilityGrid<T>,
    /// `K x h x w` unnormalised class scores.
    pub mask_logits: Vec<T>,
    pub classes: usize,
}

/// Activations of one cell, kept for the backward pass.
struct CellState<T> {
    patches: Vec<[T; PATCH]>,
    embed: Vec<T>,
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    attn: Vec<T>,
    z: Vec<T>,
    zbar: Vec<T>,
    pred: T,
    logits: Vec<T>,
}

fn patch<T: Scalar>(s: &CostMap<T>, k: usize, y: usize, x: usize) -> [T; PATCH] {
    let mut p = [T::zero(); PATCH];
    for dy in 0..3 {
        for dx in 0..3 {
            let (yy, xx) = (y as isize + dy as isize - 1, x as isize + dx as isize - 1);
            if yy >= 0 && xx >= 0 && (yy as usize) < s.h && (xx as usize) < s.w {
                p[dy * 3 + dx] = s.get(k, yy as usize, xx as usize);
            }
        }
    }
    p
}

/// `y += alpha * x` over the common prefix.
#[inline]
fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Column-major copies of the weight matrices so products become sums of
/// scaled rows.
struct Transposed<T> {
    embed_w: Vec<T>,
    query: Vec<T>,
    key: Vec<T>,
    value: Vec<T>,
}

fn transpose<T: Scalar>(m: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut t = vec![T::zero(); m.len()];
    for r in 0..rows {
        for c in 0..cols {
            t[c * rows + r] = m[r * cols + c];
        }
    }
    t
}

impl<T: Scalar> Transposed<T> {
    fn new(p: &TsppHeadParams<T>) -> Self {
        let c = p.channels;
        Transposed {
            embed_w: transpose(&p.embed_w, c, PATCH),
            query: transpose(&p.query, c, c),
            key: transpose(&p.key, c, c),
            value: transpose(&p.value, c, c),
        }
    }
}

/// `out = M v` with `mt` the transpose of `M`.
#[inline]
fn matvec_t<T: Scalar>(mt: &[T], v: &[T], out: &mut [T]) {
    let n = out.len();
    out.iter_mut().for_each(|o| *o = T::zero());
    for (&vi, col) in v.iter().zip(mt.chunks_exact(n)) {
        axpy(vi, col, out);
    }
}

fn cell_forward<T: Scalar>(
    s: &CostMap<T>,
    p: &TsppHeadParams<T>,
    t: &Transposed<T>,
    y: usize,
    x: usize,
) -> CellState<T> {
    let (kn, c) = (s.classes, p.channels);
    let inv_sqrt_c = T::one() / T::of_usize(c).sqrt();
    let mut st = CellState {
        patches: Vec::with_capacity(kn),
        embed: vec![T::zero(); kn * c],
        q: vec![T::zero(); kn * c],
        k: vec![T::zero(); kn * c],
        v: vec![T::zero(); kn * c],
        attn: vec![T::zero(); kn * kn],
        z: vec![T::zero(); kn * c],
        zbar: vec![T::zero(); c],
        pred: T::zero(),
        logits: vec![T::zero(); kn],
    };
    for k in 0..kn {
        let pt = patch(s, k, y, x);
        let e = &mut st.embed[k * c..(k + 1) * c];
        matvec_t(&t.embed_w, &pt, e);
        for (ei, &b) in e.iter_mut().zip(&p.embed_b) {
            *ei = (*ei + b).tanh();
        }
        st.patches.push(pt);
        let e = &st.embed[k * c..(k + 1) * c];
        matvec_t(&t.query, e, &mut st.q[k * c..(k + 1) * c]);
        matvec_t(&t.key, e, &mut st.k[k * c..(k + 1) * c]);
        matvec_t(&t.value, e, &mut st.v[k * c..(k + 1) * c]);
    }
    for a in 0..kn {
        let row = &mut st.attn[a * kn..(a + 1) * kn];
        let qa = &st.q[a * c..(a + 1) * c];
        for (b, r) in row.iter_mut().enumerate() {
            let kb = &st.k[b * c..(b + 1) * c];
            *r = dot(qa, kb) * inv_sqrt_c;
        }
        softmax_in_place(row);
        let za = &mut st.z[a * c..(a + 1) * c];
        za.copy_from_slice(&st.embed[a * c..(a + 1) * c]);
        for (b, &ab) in st.attn[a * kn..(a + 1) * kn].iter().enumerate() {
            axpy(ab, &st.v[b * c..(b + 1) * c], za);
        }
    }
    let inv_k = T::one() / T::of_usize(kn.max(1));
    for a in 0..kn {
        axpy(inv_k, &st.z[a * c..(a + 1) * c], &mut st.zbar);
    }
    st.pred = sigmoid(dot(&st.zbar, &p.prob_w) + p.prob_b[0]);
    for a in 0..kn {
        st.logits[a] = dot(&st.z[a * c..(a + 1) * c], &p.mask_w) + p.mask_b[0];
    }
    st
}

fn check_shapes<T: Scalar>(s: &CostMap<T>, p: &TsppHeadParams<T>) -> Result<()> {
    p.validate()?;
    if s.values.len() != s.classes * s.h * s.w {
        return Err(Error::Shape("cost map size".into()));
    }
    Ok(())
}

/// Per-cell activations of one forward pass, row-major over cells.
pub(crate) struct HeadCache<T> {
    cells: Vec<CellState<T>>,
}

pub(crate) fn forward_cached<T: Scalar>(
    s: &CostMap<T>,
    p: &TsppHeadParams<T>,
) -> Result<(HeadOutput<T>, HeadCache<T>)> {
    check_shapes(s, p)?;
    let (kn, h, w) = (s.classes, s.h, s.w);
    let mut pred = vec![T::zero(); h * w];
    let mut logits = vec![T::zero(); kn * h * w];
    let mut cells = Vec::with_capacity(h * w);
    let t = Transposed::new(p);
    for y in 0..h {
        for x in 0..w {
            let st = cell_forward(s, p, &t, y, x);
            pred[y * w + x] = st.pred;
            for k in 0..kn {
                logits[(k * h + y) * w + x] = st.logits[k];
            }
            cells.push(st);
        }
    }
    let out = HeadOutput {
        pred: ProbabilityGrid::from_raw(h, w, pred)?,
        mask_logits: logits,
        classes: kn,
    };
    Ok((out, HeadCache { cells }))
}

/// Predicted sampling probabilities (logistic in `[0, 1]`) and per-class mask
/// logits on the cost-map grid.
pub fn head_forward<T: Scalar>(s: &CostMap<T>, p: &TsppHeadParams<T>) -> Result<HeadOutput<T>> {
    Ok(forward_cached(s, p)?.0)
}

/// Back-propagates gradients of a scalar objective with respect to the head
/// outputs into parameter gradients and cost-map gradients.
///
/// `d_pred` is `h x w`, `d_logits` is `K x h x w`.
pub fn head_backward<T: Scalar>(
    s: &CostMap<T>,
    p: &TsppHeadParams<T>,
    d_pred: &[T],
    d_logits: &[T],
) -> Result<(TsppHeadParams<T>, Vec<T>)> {
    let (_, cache) = forward_cached(s, p)?;
    backward_cached(s, p, &cache, d_pred, d_logits)
}

pub(crate) fn backward_cached<T: Scalar>(
    s: &CostMap<T>,
    p: &TsppHeadParams<T>,
    cache: &HeadCache<T>,
    d_pred: &[T],
    d_logits: &[T],
) -> Result<(TsppHeadParams<T>, Vec<T>)> {
    let (kn, h, w, c) = (s.classes, s.h, s.w, p.channels);
    if d_pred.len() != h * w || d_logits.len() != kn * h * w {
        return Err(Error::Shape("output gradient size".into()));
    }
    let inv_sqrt_c = T::one() / T::of_usize(c).sqrt();
    let inv_k = T::one() / T::of_usize(kn.max(1));
    let mut g = TsppHeadParams::zeros(c);
    let mut d_cost = vec![T::zero(); s.values.len()];

    let mut dz = vec![T::zero(); kn * c];
    let mut de = vec![T::zero(); kn * c];
    let mut dq = vec![T::zero(); kn * c];
    let mut dk = vec![T::zero(); kn * c];
    let mut dv = vec![T::zero(); kn * c];
    let mut da = vec![T::zero(); kn];
    let mut dl = vec![T::zero(); kn];

    for y in 0..h {
        for x in 0..w {
            let st = &cache.cells[y * w + x];
            let dlp = d_pred[y * w + x] * st.pred * (T::one() - st.pred);
            g.prob_b[0] += dlp;
            axpy(dlp, &st.zbar, &mut g.prob_w);
            for (a, d) in dl.iter_mut().enumerate() {
                *d = d_logits[(a * h + y) * w + x];
            }
            for (a, &dla) in dl.iter().enumerate() {
                g.mask_b[0] += dla;
                let za = &st.z[a * c..(a + 1) * c];
                axpy(dla, za, &mut g.mask_w);
                let dza = &mut dz[a * c..(a + 1) * c];
                for ((d, &pw), &mw) in dza.iter_mut().zip(&p.prob_w).zip(&p.mask_w) {
                    *d = dlp * pw * inv_k + dla * mw;
                }
            }

            // z = e + A v
            de.copy_from_slice(&dz);
            dv.iter_mut().for_each(|v| *v = T::zero());
            dk.iter_mut().for_each(|v| *v = T::zero());
            for a in 0..kn {
                let dza = &dz[a * c..(a + 1) * c];
                let arow = &st.attn[a * kn..(a + 1) * kn];
                for (b, (&aab, dab)) in arow.iter().zip(da.iter_mut()).enumerate() {
                    *dab = dot(dza, &st.v[b * c..(b + 1) * c]);
                    axpy(aab, dza, &mut dv[b * c..(b + 1) * c]);
                }
                // softmax backward on row a
                let m = dot(arow, &da);
                for (dab, &aab) in da.iter_mut().zip(arow) {
                    *dab = aab * (*dab - m) * inv_sqrt_c;
                }
                let dq_a = &mut dq[a * c..(a + 1) * c];
                dq_a.iter_mut().for_each(|v| *v = T::zero());
                let qa = &st.q[a * c..(a + 1) * c];
                for (b, &ds) in da.iter().enumerate() {
                    axpy(ds, &st.k[b * c..(b + 1) * c], dq_a);
                    // key gradients accumulate over query rows
                    axpy(ds, qa, &mut dk[b * c..(b + 1) * c]);
                }
            }

            // projections q = Wq e etc.
            for a in 0..kn {
                let e = &st.embed[a * c..(a + 1) * c];
                let de_a = &mut de[a * c..(a + 1) * c];
                for (wmat, gmat, dvec) in [
                    (&p.query, &mut g.query, &dq),
                    (&p.key, &mut g.key, &dk),
                    (&p.value, &mut g.value, &dv),
                ] {
                    let d = &dvec[a * c..(a + 1) * c];
                    for ((&dr, grow), wrow) in d
                        .iter()
                        .zip(gmat.chunks_exact_mut(c))
                        .zip(wmat.chunks_exact(c))
                    {
                        axpy(dr, e, grow);
                        axpy(dr, wrow, de_a);
                    }
                }
            }

            // e = tanh(W p + b)
            for a in 0..kn {
                let pt = &st.patches[a];
                let mut dpatch = [T::zero(); PATCH];
                let e = &st.embed[a * c..(a + 1) * c];
                let de_a = &de[a * c..(a + 1) * c];
                for (ch, ((&ev, &dev), (gw, ww))) in e
                    .iter()
                    .zip(de_a)
                    .zip(g.embed_w.chunks_exact_mut(PATCH).zip(p.embed_w.chunks_exact(PATCH)))
                    .enumerate()
                {
                    let dpre = dev * (T::one() - ev * ev);
                    g.embed_b[ch] += dpre;
                    axpy(dpre, pt, gw);
                    axpy(dpre, ww, &mut dpatch);
                }
                for dy in 0..3 {
                    for dx in 0..3 {
                        let (yy, xx) = (y as isize + dy as isize - 1, x as isize + dx as isize - 1);
                        if yy >= 0 && xx >= 0 && (yy as usize) < h && (xx as usize) < w {
                            d_cost[(a * h + yy as usize) * w + xx as usize] += dpatch[dy * 3 + dx];
                        }
                    }
                }
            }
        }
    }
    Ok((g, d_cost))
}
