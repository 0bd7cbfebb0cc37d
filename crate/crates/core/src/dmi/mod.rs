//! Decoupled mask injection.
//!
//! The low-frequency path pools features under each mask, adds the pooled
//! vectors back inside their masks and attends from every cell to the pooled
//! vectors. The high-frequency path embeds a per-cell mask summary next to the
//! features and adds a gated depthwise convolution of an MLP over the result.

mod high;
mod low;

pub use high::{
    high_freq_backward, high_freq_inject, mask_summary, HighFreqConfig, HighFreqGrads,
    HighFreqParams, BOUNDARY_CAP, HIGH_FREQ_BLOCKS,
};
pub use low::{
    cross_attention, cross_attention_backward, intra_mask_context, low_freq_backward,
    low_freq_inject, mask_pool, LowFreqOutput,
};

use crate::error::{Error, Result};
use crate::mask::MaskSet;
use crate::scalar::Scalar;

/// Dense features, `channels x h x w`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap<T> {
    pub channels: usize,
    pub h: usize,
    pub w: usize,
    pub values: Vec<T>,
}

impl<T: Scalar> FeatureMap<T> {
    /// Rejects wrong lengths and non-finite values.
    pub fn new(channels: usize, h: usize, w: usize, values: Vec<T>) -> Result<Self> {
        if values.len() != channels * h * w {
            return Err(Error::Shape(format!(
                "{} values for a {channels}x{h}x{w} feature map",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Shape("feature map has non-finite values".into()));
        }
        Ok(FeatureMap {
            channels,
            h,
            w,
            values,
        })
    }

    pub fn zeros(channels: usize, h: usize, w: usize) -> Self {
        FeatureMap {
            channels,
            h,
            w,
            values: vec![T::zero(); channels * h * w],
        }
    }

    pub fn from_fn(channels: usize, h: usize, w: usize, mut f: impl FnMut(usize, usize, usize) -> T) -> Self {
        let mut values = Vec::with_capacity(channels * h * w);
        for c in 0..channels {
            for y in 0..h {
                for x in 0..w {
                    values.push(f(c, y, x));
                }
            }
        }
        FeatureMap {
            channels,
            h,
            w,
            values,
        }
    }

    #[inline]
    pub fn cells(&self) -> usize {
        self.h * self.w
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> T {
        self.values[(c * self.h + y) * self.w + x]
    }

    #[inline]
    pub fn at(&self, c: usize, cell: usize) -> T {
        self.values[c * self.h * self.w + cell]
    }

    #[inline]
    pub fn at_mut(&mut self, c: usize, cell: usize) -> &mut T {
        let n = self.h * self.w;
        &mut self.values[c * n + cell]
    }

    pub fn plane(&self, c: usize) -> &[T] {
        let n = self.h * self.w;
        &self.values[c * n..(c + 1) * n]
    }

    /// Feature vector of one cell.
    pub fn column(&self, cell: usize) -> Vec<T> {
        (0..self.channels).map(|c| self.at(c, cell)).collect()
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        (self.channels, self.h, self.w) == (other.channels, other.h, other.w)
    }

    /// Nearest-neighbour upsampling by an integer factor.
    pub fn upsample(&self, factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(Error::InvalidFactor(factor));
        }
        let (h, w) = (self.h * factor, self.w * factor);
        Ok(Self::from_fn(self.channels, h, w, |c, y, x| {
            self.get(c, y / factor, x / factor)
        }))
    }

    /// Elementwise sum of two same-shaped maps.
    pub fn add(&self, other: &Self) -> Result<Self> {
        if !self.same_shape(other) {
            return Err(Error::Shape(format!(
                "{}x{}x{} + {}x{}x{}",
                self.channels, self.h, self.w, other.channels, other.h, other.w
            )));
        }
        let values = self.values.iter().zip(&other.values).map(|(&a, &b)| a + b).collect();
        Ok(FeatureMap { values, ..*self })
    }

    pub fn cast<U: Scalar>(&self) -> FeatureMap<U> {
        FeatureMap {
            channels: self.channels,
            h: self.h,
            w: self.w,
            values: self.values.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Pooled per-mask vectors, `n_masks x dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskEmbeddings<T> {
    pub n_masks: usize,
    pub dim: usize,
    pub vectors: Vec<T>,
    /// Masks with no cell at the feature resolution; their rows are zero and
    /// they are left out of attention.
    pub empty: Vec<bool>,
}

impl<T: Scalar> MaskEmbeddings<T> {
    pub fn row(&self, k: usize) -> &[T] {
        &self.vectors[k * self.dim..(k + 1) * self.dim]
    }

    /// Indices of masks that take part in attention.
    pub fn active(&self) -> Vec<usize> {
        (0..self.n_masks).filter(|&k| !self.empty[k]).collect()
    }

    pub fn any_empty(&self) -> bool {
        self.empty.iter().any(|&e| e)
    }
}

pub(crate) fn check_masks<T>(f: &FeatureMap<T>, masks: &MaskSet) -> Result<()> {
    if masks.dims() != (f.w, f.h) {
        return Err(Error::dims(masks.dims(), (f.w, f.h)));
    }
    Ok(())
}
