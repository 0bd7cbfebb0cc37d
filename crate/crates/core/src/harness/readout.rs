//! A per-cell linear classifier over injected features, standing in for the
//! segmentation decoder.

use rayon::prelude::*;

use crate::dmi::FeatureMap;
use crate::error::{Error, Result};
use crate::mask::LabelMap;
use crate::scalar::softmax_in_place;

/// Softmax over `classes + 1` outputs (index 0 is background) of an affine
/// map of the cell's feature vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Readout {
    pub classes: usize,
    pub channels: usize,
    /// `(classes + 1) x (channels + 1)`, bias last.
    pub weights: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReadoutConfig {
    pub steps: usize,
    pub learning_rate: f64,
}

impl Default for ReadoutConfig {
    fn default() -> Self {
        ReadoutConfig {
            steps: 300,
            learning_rate: 1.0,
        }
    }
}

impl Readout {
    pub fn zeros(classes: usize, channels: usize) -> Self {
        Readout {
            classes,
            channels,
            weights: vec![0.0; (classes + 1) * (channels + 1)],
        }
    }

    fn scores(&self, f: &FeatureMap<f64>, cell: usize, out: &mut [f64]) {
        let width = self.channels + 1;
        for (o, s) in out.iter_mut().enumerate() {
            let row = &self.weights[o * width..(o + 1) * width];
            let mut z = row[self.channels];
            for c in 0..self.channels {
                z += row[c] * f.at(c, cell);
            }
            *s = z;
        }
    }

    /// Highest-scoring label per cell, ties to the lower label.
    pub fn apply(&self, f: &FeatureMap<f64>) -> Result<LabelMap> {
        if f.channels != self.channels {
            return Err(Error::Shape(format!(
                "readout for {} channels applied to {}",
                self.channels, f.channels
            )));
        }
        let mut s = vec![0.0; self.classes + 1];
        let mut labels = Vec::with_capacity(f.cells());
        for cell in 0..f.cells() {
            self.scores(f, cell, &mut s);
            let mut best = 0;
            for (o, &v) in s.iter().enumerate() {
                if v > s[best] {
                    best = o;
                }
            }
            labels.push(best as u32);
        }
        LabelMap::new(f.w, f.h, labels)
    }

    /// Mean cross-entropy over all cells of all samples and its gradient.
    fn loss_and_grad(&self, data: &[(FeatureMap<f64>, LabelMap)]) -> (f64, Vec<f64>) {
        let width = self.channels + 1;
        let parts: Vec<(f64, Vec<f64>, usize)> = data
            .par_iter()
            .map(|(f, lm)| {
                let mut g = vec![0.0; self.weights.len()];
                let mut loss = 0.0;
                let mut s = vec![0.0; self.classes + 1];
                for cell in 0..f.cells() {
                    self.scores(f, cell, &mut s);
                    softmax_in_place(&mut s);
                    let y = lm.labels()[cell] as usize;
                    loss -= s[y].max(f64::MIN_POSITIVE).ln();
                    for (o, &p) in s.iter().enumerate() {
                        let d = p - if o == y { 1.0 } else { 0.0 };
                        let row = &mut g[o * width..(o + 1) * width];
                        for c in 0..self.channels {
                            row[c] += d * f.at(c, cell);
                        }
                        row[self.channels] += d;
                    }
                }
                (loss, g, f.cells())
            })
            .collect();
        let n: usize = parts.iter().map(|p| p.2).sum();
        let inv = 1.0 / n.max(1) as f64;
        let mut grad = vec![0.0; self.weights.len()];
        let mut loss = 0.0;
        for (l, g, _) in &parts {
            loss += l;
            for (a, b) in grad.iter_mut().zip(g) {
                *a += b;
            }
        }
        grad.iter_mut().for_each(|v| *v *= inv);
        (loss * inv, grad)
    }
}

/// Fits a readout from zero weights by full-batch gradient descent. Labels
/// above `classes` are rejected.
pub fn fit_readout(
    data: &[(FeatureMap<f64>, LabelMap)],
    classes: usize,
    cfg: &ReadoutConfig,
) -> Result<Readout> {
    let Some((first, _)) = data.first() else {
        return Err(Error::Config("no readout training data".into()));
    };
    for (f, lm) in data {
        if f.channels != first.channels || lm.dims() != (f.w, f.h) {
            return Err(Error::Shape("readout samples disagree in shape".into()));
        }
        if lm.labels().iter().any(|&l| l as usize > classes) {
            return Err(Error::Config(format!("label above {classes}")));
        }
    }
    // fit on standardised channels, then fold the scaling into the weights
    let d = first.channels;
    let mut mean = vec![0.0; d];
    let mut sq = vec![0.0; d];
    let mut n = 0usize;
    for (f, _) in data {
        for c in 0..d {
            for &v in f.plane(c) {
                mean[c] += v;
                sq[c] += v * v;
            }
        }
        n += f.cells();
    }
    let n = n.max(1) as f64;
    let scale: Vec<f64> = (0..d)
        .map(|c| {
            let m = mean[c] / n;
            let var = (sq[c] / n - m * m).max(0.0);
            if var > 1e-12 {
                1.0 / var.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    mean.iter_mut().for_each(|m| *m /= n);
    let scaled: Vec<(FeatureMap<f64>, LabelMap)> = data
        .iter()
        .map(|(f, lm)| {
            let g = FeatureMap::from_fn(d, f.h, f.w, |c, y, x| (f.get(c, y, x) - mean[c]) * scale[c]);
            (g, lm.clone())
        })
        .collect();

    let mut r = Readout::zeros(classes, d);
    for step in 0..cfg.steps {
        let (loss, g) = r.loss_and_grad(&scaled);
        if !loss.is_finite() {
            return Err(Error::Diverged(step));
        }
        for (w, dw) in r.weights.iter_mut().zip(&g) {
            *w -= cfg.learning_rate * dw;
        }
    }
    let width = d + 1;
    for o in 0..=classes {
        let row = &mut r.weights[o * width..(o + 1) * width];
        let mut bias = row[d];
        for c in 0..d {
            row[c] *= scale[c];
            bias -= row[c] * mean[c];
        }
        row[d] = bias;
    }
    Ok(r)
}
