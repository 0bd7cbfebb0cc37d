//! Text-guided sparse point prompting: probability targets, Bernoulli point
//! sampling, the lightweight prompter head and its training loss.

mod head;
mod loss;
mod sampler;
mod target;
mod text;
mod train;

pub use head::{head_backward, head_forward, HeadOutput, TsppHeadParams, BLOCK_NAMES, PATCH};
pub use loss::{loss_and_grad, tspp_loss, LossTerms};
pub use sampler::{sample_points, Point, PointPrompts};
pub use target::{cell_rasterization, expected_points, probability_target, TargetReport};
pub use text::{text_masks_from_logits, TextMaskConfig};
pub use train::{train_head, LossRecord, TrainConfig, TrainItem, TrainOutcome};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// How mask area is counted for the expected point count.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum AreaMode {
    /// Cells of the prompt grid whose centers fall inside the mask.
    #[default]
    GridCells,
    /// Full-resolution pixels.
    Pixels,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SamplerConfig {
    /// Mask area per expected point.
    pub g_p: usize,
    /// Cap on expected points per mask.
    pub m_p: usize,
    pub grid_h: usize,
    pub grid_w: usize,
    pub seed: u64,
    pub area_mode: AreaMode,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            g_p: 5,
            m_p: 10,
            grid_h: 32,
            grid_w: 32,
            seed: 0,
            area_mode: AreaMode::GridCells,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.g_p == 0 || self.m_p == 0 {
            return Err(Error::Config("g_p and m_p must be at least 1".into()));
        }
        if self.grid_h == 0 || self.grid_w == 0 {
            return Err(Error::Config("grid must be non-empty".into()));
        }
        Ok(())
    }

    pub fn cells(&self) -> usize {
        self.grid_h * self.grid_w
    }
}

/// Per-cell sampling probabilities. `raw` holds the unclamped target values,
/// `probs = min(raw, 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbabilityGrid<T> {
    pub grid_h: usize,
    pub grid_w: usize,
    pub probs: Vec<T>,
    pub raw: Vec<T>,
}

impl<T: Scalar> ProbabilityGrid<T> {
    pub fn zeros(grid_h: usize, grid_w: usize) -> Self {
        ProbabilityGrid {
            grid_h,
            grid_w,
            probs: vec![T::zero(); grid_h * grid_w],
            raw: vec![T::zero(); grid_h * grid_w],
        }
    }

    /// Grid from unclamped values.
    pub fn from_raw(grid_h: usize, grid_w: usize, raw: Vec<T>) -> Result<Self> {
        if raw.len() != grid_h * grid_w {
            return Err(Error::Shape(format!(
                "{} values for a {grid_h}x{grid_w} grid",
                raw.len()
            )));
        }
        let probs = raw.iter().map(|&r| r.max(T::zero()).min(T::one())).collect();
        Ok(ProbabilityGrid {
            grid_h,
            grid_w,
            probs,
            raw,
        })
    }

    /// Expected number of sampled points.
    pub fn expected_count(&self) -> T {
        self.probs.iter().copied().sum()
    }

    pub fn raw_mass(&self) -> T {
        self.raw.iter().copied().sum()
    }

    #[inline]
    pub fn prob(&self, row: usize, col: usize) -> T {
        self.probs[row * self.grid_w + col]
    }
}

/// Per-class score maps, `classes x h x w`, values nominally in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct CostMap<T> {
    pub classes: usize,
    pub h: usize,
    pub w: usize,
    pub values: Vec<T>,
}

impl<T: Scalar> CostMap<T> {
    pub fn new(classes: usize, h: usize, w: usize, values: Vec<T>) -> Result<Self> {
        if values.len() != classes * h * w {
            return Err(Error::Shape(format!(
                "{} values for a {classes}x{h}x{w} cost map",
                values.len()
            )));
        }
        Ok(CostMap {
            classes,
            h,
            w,
            values,
        })
    }

    pub fn zeros(classes: usize, h: usize, w: usize) -> Self {
        CostMap {
            classes,
            h,
            w,
            values: vec![T::zero(); classes * h * w],
        }
    }

    #[inline]
    pub fn get(&self, k: usize, y: usize, x: usize) -> T {
        self.values[(k * self.h + y) * self.w + x]
    }

    pub fn plane(&self, k: usize) -> &[T] {
        &self.values[k * self.h * self.w..(k + 1) * self.h * self.w]
    }

    pub fn cast<U: Scalar>(&self) -> CostMap<U> {
        CostMap {
            classes: self.classes,
            h: self.h,
            w: self.w,
            values: self.values.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }
}
