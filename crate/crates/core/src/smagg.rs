//! Shallow mask aggregation.
//!
//! Proposal masks are scored against coarse per-class text masks by the
//! fraction of their area inside each text mask. Every proposal whose best
//! score exceeds `alpha` joins the union for that class; the rest pass through
//! unchanged.

use crate::error::{Error, Result};
use crate::mask::{downsample_mask, intersect_count, upsample_mask, BinaryMask, MaskSet};
use crate::scalar::Scalar;

/// Resolution at which proposals and text masks are compared.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum CompareAt {
    /// Downsample proposals (majority rule) to the text-mask grid.
    #[default]
    Text,
    /// Upsample text masks to the proposal resolution.
    Full,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AggregateConfig {
    pub alpha: f64,
    pub eps: f64,
    pub compare_at: CompareAt,
}

impl Default for AggregateConfig {
    fn default() -> Self {
        AggregateConfig {
            alpha: 0.5,
            eps: 1e-6,
            compare_at: CompareAt::Text,
        }
    }
}

/// `n_sam x n_text` overlap ratios, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct MatchMatrix<T> {
    pub n_sam: usize,
    pub n_text: usize,
    pub scores: Vec<T>,
}

impl<T: Scalar> MatchMatrix<T> {
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.scores[i * self.n_text + j]
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.scores[i * self.n_text..(i + 1) * self.n_text]
    }
}

/// `|sam_i ∩ text_j| / (|sam_i| + eps)` for every pair. Both sets must share
/// dimensions.
pub fn matching_scores<T: Scalar>(sam: &MaskSet, text: &MaskSet, eps: T) -> Result<MatchMatrix<T>> {
    if sam.dims() != text.dims() {
        return Err(Error::dims(sam.dims(), text.dims()));
    }
    if eps <= T::zero() {
        return Err(Error::Config("eps must be positive".into()));
    }
    let mut scores = Vec::with_capacity(sam.len() * text.len());
    for s in sam {
        let denom = T::of_usize(s.area()) + eps;
        for t in text {
            scores.push(T::of_usize(intersect_count(s, t)?) / denom);
        }
    }
    Ok(MatchMatrix {
        n_sam: sam.len(),
        n_text: text.len(),
        scores,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct AggregationResult<T> {
    /// Class unions in ascending class order, then unmatched proposals in
    /// their original order.
    pub masks: MaskSet,
    /// Class of each output mask, `None` for pass-through masks.
    pub class_of: Vec<Option<usize>>,
    /// Source proposal indices of each output mask, ascending.
    pub provenance: Vec<Vec<usize>>,
    pub scores: MatchMatrix<T>,
}

impl<T> AggregationResult<T> {
    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }
}

fn integer_factor(big: (usize, usize), small: (usize, usize)) -> Result<usize> {
    let err = || Error::dims(big, small);
    if small.0 == 0 || small.1 == 0 || !big.0.is_multiple_of(small.0) || !big.1.is_multiple_of(small.1) {
        return Err(err());
    }
    let f = big.0 / small.0;
    if big.1 / small.1 != f {
        return Err(err());
    }
    Ok(f)
}

/// Brings both sets to the comparison resolution.
fn align(sam: &MaskSet, text: &MaskSet, at: CompareAt) -> Result<(MaskSet, MaskSet)> {
    if sam.dims() == text.dims() {
        return Ok((sam.clone(), text.clone()));
    }
    if text.is_empty() {
        return Ok((sam.clone(), MaskSet::empty(sam.width(), sam.height())));
    }
    let factor = integer_factor(sam.dims(), text.dims())?;
    match at {
        CompareAt::Text => {
            let small = sam.map(|m| downsample_mask(m, factor))?;
            let small = if small.is_empty() {
                MaskSet::empty(text.width(), text.height())
            } else {
                small
            };
            Ok((small, text.clone()))
        }
        CompareAt::Full => Ok((sam.clone(), text.map(|m| upsample_mask(m, factor))?)),
    }
}

/// Index of the best score above `alpha`, ties to the lowest class.
fn assign<T: Scalar>(row: &[T], alpha: T) -> Option<usize> {
    let mut best: Option<(usize, T)> = None;
    for (k, &s) in row.iter().enumerate() {
        if s > alpha && best.is_none_or(|(_, b)| s > b) {
            best = Some((k, s));
        }
    }
    best.map(|(k, _)| k)
}

/// Merges proposals per class. Unions are formed from the original
/// full-resolution proposals.
pub fn aggregate<T: Scalar>(
    sam: &MaskSet,
    text: &MaskSet,
    cfg: &AggregateConfig,
) -> Result<AggregationResult<T>> {
    if !(0.0..1.0).contains(&cfg.alpha) {
        return Err(Error::Config(format!("alpha {} outside [0, 1)", cfg.alpha)));
    }
    let (s, t) = align(sam, text, cfg.compare_at)?;
    let scores = matching_scores(&s, &t, T::lit(cfg.eps))?;
    let alpha = T::lit(cfg.alpha);

    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); text.len()];
    let mut passthrough = Vec::new();
    for i in 0..sam.len() {
        match assign(scores.row(i), alpha) {
            Some(k) => groups[k].push(i),
            None => passthrough.push(i),
        }
    }

    let (w, h) = sam.dims();
    let mut masks = Vec::new();
    let mut class_of = Vec::new();
    let mut provenance = Vec::new();
    for (k, rows) in groups.into_iter().enumerate() {
        if rows.is_empty() {
            continue;
        }
        let mut u = BinaryMask::new(w, h);
        for &i in &rows {
            u.or_assign(&sam.masks()[i]);
        }
        masks.push(u);
        class_of.push(Some(k));
        provenance.push(rows);
    }
    for i in passthrough {
        masks.push(sam.masks()[i].clone());
        class_of.push(None);
        provenance.push(vec![i]);
    }
    Ok(AggregationResult {
        masks: MaskSet::new(w, h, masks)?,
        class_of,
        provenance,
        scores,
    })
}

/// Identity aggregation: every proposal passes through untagged.
pub fn passthrough<T: Scalar>(sam: &MaskSet) -> AggregationResult<T> {
    AggregationResult {
        masks: sam.clone(),
        class_of: vec![None; sam.len()],
        provenance: (0..sam.len()).map(|i| vec![i]).collect(),
        scores: MatchMatrix {
            n_sam: sam.len(),
            n_text: 0,
            scores: Vec::new(),
        },
    }
}
