//! Central finite-difference checks of the hand-written backward passes.
//!
//! Each operation is wrapped in a random instance with a scalar objective
//! (a random weighting of its output, or the prompter loss itself); the
//! analytic gradient of that objective is compared entry by entry with
//! `(L(x + h) - L(x - h)) / 2h`.

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;

use crate::dmi::{
    cross_attention, cross_attention_backward, high_freq_backward, high_freq_inject,
    low_freq_backward, low_freq_inject, FeatureMap, HighFreqConfig, HighFreqParams,
    MaskEmbeddings,
};
use crate::error::{Error, Result};
use crate::mask::{BinaryMask, LabelMap, MaskSet};
use crate::rng::{self, Rng};
use crate::tspp::{head_forward, loss_and_grad, tspp_loss, CostMap, ProbabilityGrid, TsppHeadParams};

/// Finite-difference step.
pub const STEP: f64 = 1e-5;
/// Denominator floor of the relative error, so that gradients near zero are
/// compared in absolute terms.
pub const REL_FLOOR: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum GradOp {
    Linear,
    CrossAttention,
    LowFreq,
    HighFreq,
    TsppHead,
}

impl GradOp {
    pub const ALL: [GradOp; 5] = [
        GradOp::Linear,
        GradOp::CrossAttention,
        GradOp::LowFreq,
        GradOp::HighFreq,
        GradOp::TsppHead,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GradOp::Linear => "linear",
            GradOp::CrossAttention => "cross-attention",
            GradOp::LowFreq => "low-freq",
            GradOp::HighFreq => "high-freq",
            GradOp::TsppHead => "tspp-head",
        }
    }
}

impl fmt::Display for GradOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GradOp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        GradOp::ALL
            .into_iter()
            .find(|op| op.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown gradcheck op `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockReport {
    pub name: String,
    pub len: usize,
    pub max_abs_error: f64,
    pub max_rel_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradReport {
    pub op: GradOp,
    pub seed: u64,
    pub tol: f64,
    pub blocks: Vec<BlockReport>,
    pub max_rel_error: f64,
    pub passed: bool,
}

type Blocks = Vec<Vec<f64>>;
type LossFn = Box<dyn Fn(&[Vec<f64>]) -> Result<f64>>;
type GradFn = Box<dyn Fn(&[Vec<f64>]) -> Result<Blocks>>;

struct Instance {
    names: Vec<&'static str>,
    values: Blocks,
    loss: LossFn,
    grad: GradFn,
}

fn uniform(r: &mut Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| r.random_range(lo..hi)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn random_masks(r: &mut Rng, n: usize, w: usize, h: usize) -> MaskSet {
    let ms = (0..n)
        .map(|_| loop {
            let d = r.random_range(0.2..0.6);
            let m = BinaryMask::from_fn(w, h, |_, _| r.random_bool(d));
            if !m.is_empty() {
                break m;
            }
        })
        .collect();
    MaskSet::new(w, h, ms).expect("dimensions match")
}

fn linear(r: &mut Rng) -> Instance {
    let (n_in, n_out) = (5, 4);
    let weight = uniform(r, n_out, -1.0, 1.0);
    let values = vec![
        uniform(r, n_out * n_in, -1.0, 1.0),
        uniform(r, n_out, -1.0, 1.0),
        uniform(r, n_in, -1.0, 1.0),
    ];
    let w2 = weight.clone();
    Instance {
        names: vec!["weight", "bias", "input"],
        values,
        loss: Box::new(move |b| {
            Ok((0..n_out)
                .map(|o| weight[o] * (dot(&b[0][o * n_in..(o + 1) * n_in], &b[2]) + b[1][o]))
                .sum())
        }),
        grad: Box::new(move |b| {
            let mut dw = vec![0.0; n_out * n_in];
            let mut dx = vec![0.0; n_in];
            for o in 0..n_out {
                for i in 0..n_in {
                    dw[o * n_in + i] = w2[o] * b[2][i];
                    dx[i] += w2[o] * b[0][o * n_in + i];
                }
            }
            Ok(vec![dw, w2.clone(), dx])
        }),
    }
}

fn attention(r: &mut Rng) -> Instance {
    let (d, h, w, n) = (4, 4, 4, 3);
    let weight = FeatureMap::new(d, h, w, uniform(r, d * h * w, -1.0, 1.0)).unwrap();
    let values = vec![uniform(r, d * h * w, -1.5, 1.5), uniform(r, n * d, -1.5, 1.5)];
    let build = move |b: &[Vec<f64>]| -> Result<(FeatureMap<f64>, MaskEmbeddings<f64>)> {
        Ok((
            FeatureMap::new(d, h, w, b[0].clone())?,
            MaskEmbeddings {
                n_masks: n,
                dim: d,
                vectors: b[1].clone(),
                empty: vec![false; n],
            },
        ))
    };
    let w2 = weight.clone();
    Instance {
        names: vec!["query", "embeddings"],
        values,
        loss: Box::new(move |b| {
            let (q, e) = build(b)?;
            Ok(dot(&cross_attention(&q, &e)?.0.values, &weight.values))
        }),
        grad: Box::new(move |b| {
            let (q, e) = build(b)?;
            let (dq, de) = cross_attention_backward(&q, &e, &w2)?;
            Ok(vec![dq.values, de])
        }),
    }
}

fn low(r: &mut Rng) -> Instance {
    let (d, h, w) = (4, 6, 6);
    let masks = random_masks(r, 3, w, h);
    let weight = FeatureMap::new(d, h, w, uniform(r, d * h * w, -1.0, 1.0)).unwrap();
    let values = vec![uniform(r, d * h * w, -1.0, 1.0)];
    let (m2, w2) = (masks.clone(), weight.clone());
    Instance {
        names: vec!["features"],
        values,
        loss: Box::new(move |b| {
            let f = FeatureMap::new(d, h, w, b[0].clone())?;
            Ok(dot(&low_freq_inject(&f, &masks)?.output.values, &weight.values))
        }),
        grad: Box::new(move |b| {
            let f = FeatureMap::new(d, h, w, b[0].clone())?;
            Ok(vec![low_freq_backward(&f, &m2, &w2)?.values])
        }),
    }
}

fn high(r: &mut Rng, seed: u64) -> Instance {
    let (d, h, w) = (4, 8, 8);
    let cfg = HighFreqConfig {
        embed_dim: 3,
        class_cap: 2,
        kernel: 3,
    };
    let masks = random_masks(r, 2, w, h);
    let tags = vec![Some(r.random_range(0..2)), None];
    let mut p = HighFreqParams::<f64>::init(d, cfg, &mut rng::stream(seed, 1));
    // move the gate away from its initial value so its gradient is exercised
    p.gamma = uniform(r, d, 0.5, 1.5);
    let weight = FeatureMap::new(d, h, w, uniform(r, d * h * w, -1.0, 1.0)).unwrap();
    let mut values = vec![uniform(r, d * h * w, -1.0, 1.0)];
    values.extend(p.blocks().iter().map(|(_, v)| v.to_vec()));
    let build = move |b: &[Vec<f64>]| -> Result<(FeatureMap<f64>, HighFreqParams<f64>)> {
        let mut q = HighFreqParams::zeros(d, cfg);
        for (dst, src) in q.blocks_mut().into_iter().zip(&b[1..]) {
            dst.clone_from(src);
        }
        Ok((FeatureMap::new(d, h, w, b[0].clone())?, q))
    };
    let (m2, t2, w2) = (masks.clone(), tags.clone(), weight.clone());
    let mut names = vec!["features"];
    names.extend(crate::dmi::HIGH_FREQ_BLOCKS);
    Instance {
        names,
        values,
        loss: Box::new(move |b| {
            let (f, q) = build(b)?;
            Ok(dot(&high_freq_inject(&f, &masks, Some(&tags), &q)?.values, &weight.values))
        }),
        grad: Box::new(move |b| {
            let (f, q) = build(b)?;
            let g = high_freq_backward(&f, &m2, Some(&t2), &q, &w2)?;
            let mut out = vec![g.features.values];
            out.extend(g.params.blocks().iter().map(|(_, v)| v.to_vec()));
            Ok(out)
        }),
    }
}

fn head(r: &mut Rng, seed: u64) -> Instance {
    let (k, h, w, c) = (3, 6, 6, 4);
    let lambda = 0.5;
    let p = TsppHeadParams::<f64>::init(c, &mut rng::stream(seed, 1));
    let target = ProbabilityGrid::from_raw(h, w, uniform(r, h * w, 0.0, 1.0)).unwrap();
    let labels = LabelMap::new(w, h, (0..h * w).map(|_| r.random_range(0..=k as u32)).collect()).unwrap();
    let mut values: Blocks = p.blocks().iter().map(|(_, v)| v.to_vec()).collect();
    values.push(uniform(r, k * h * w, -1.0, 1.0));
    let build = move |b: &[Vec<f64>]| -> Result<(CostMap<f64>, TsppHeadParams<f64>)> {
        let mut q = TsppHeadParams::zeros(c);
        for (dst, src) in q.blocks_mut().into_iter().zip(b) {
            dst.clone_from(src);
        }
        Ok((CostMap::new(k, h, w, b[9].clone())?, q))
    };
    let (t2, l2) = (target.clone(), labels.clone());
    let mut names: Vec<&'static str> = crate::tspp::BLOCK_NAMES.to_vec();
    names.push("cost");
    Instance {
        names,
        values,
        loss: Box::new(move |b| {
            let (s, q) = build(b)?;
            Ok(tspp_loss(&head_forward(&s, &q)?, &target, &labels, lambda)?.loss)
        }),
        grad: Box::new(move |b| {
            let (s, q) = build(b)?;
            let (_, g, d_cost) = loss_and_grad(&s, &q, &t2, &l2, lambda)?;
            let mut out: Blocks = g.blocks().iter().map(|(_, v)| v.to_vec()).collect();
            out.push(d_cost);
            Ok(out)
        }),
    }
}

fn instance(op: GradOp, seed: u64) -> Instance {
    let mut r = rng::rng(seed);
    match op {
        GradOp::Linear => linear(&mut r),
        GradOp::CrossAttention => attention(&mut r),
        GradOp::LowFreq => low(&mut r),
        GradOp::HighFreq => high(&mut r, seed),
        GradOp::TsppHead => head(&mut r, seed),
    }
}

/// `|a - n| / max(|a|, |n|, REL_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Checks every gradient entry of a random instance of `op` drawn from `seed`.
pub fn gradcheck(op: GradOp, seed: u64, tol: f64) -> Result<GradReport> {
    let inst = instance(op, seed);
    let analytic = (inst.grad)(&inst.values)?;
    for (name, g) in inst.names.iter().zip(&analytic) {
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient(name.to_string()));
        }
    }
    let mut blocks = Vec::with_capacity(inst.names.len());
    let mut probe = inst.values.clone();
    for (bi, name) in inst.names.iter().enumerate() {
        let (mut max_abs, mut max_rel) = (0.0f64, 0.0f64);
        for i in 0..probe[bi].len() {
            let x = probe[bi][i];
            probe[bi][i] = x + STEP;
            let up = (inst.loss)(&probe)?;
            probe[bi][i] = x - STEP;
            let down = (inst.loss)(&probe)?;
            probe[bi][i] = x;
            let numeric = (up - down) / (2.0 * STEP);
            if !numeric.is_finite() {
                return Err(Error::NonFiniteGradient(name.to_string()));
            }
            let a = analytic[bi][i];
            max_abs = max_abs.max((a - numeric).abs());
            max_rel = max_rel.max(relative_error(a, numeric));
        }
        blocks.push(BlockReport {
            name: name.to_string(),
            len: probe[bi].len(),
            max_abs_error: max_abs,
            max_rel_error: max_rel,
        });
    }
    let max_rel_error = blocks.iter().map(|b| b.max_rel_error).fold(0.0, f64::max);
    Ok(GradReport {
        op,
        seed,
        tol,
        blocks,
        max_rel_error,
        passed: max_rel_error < tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn op_names_round_trip() {
        for op in GradOp::ALL {
            assert_eq!(op.name().parse::<GradOp>().unwrap(), op);
        }
        assert!("conv".parse::<GradOp>().is_err());
    }

    #[test]
    fn linear_is_machine_precision() {
        let r = gradcheck(GradOp::Linear, 0, 1e-4).unwrap();
        assert!(r.max_rel_error < 1e-9, "{r:?}");
    }

    #[test]
    fn every_op_passes_a_few_seeds() {
        for op in GradOp::ALL {
            for seed in 0..3 {
                let r = gradcheck(op, seed, 1e-4).unwrap();
                assert!(r.passed, "{op} seed {seed}: {:?}", r.blocks);
                assert!(r.blocks.iter().all(|b| b.len > 0));
            }
        }
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(1.0, 1.0), 0.0);
        assert_eq!(relative_error(2.0, 1.0), 0.5);
        assert_eq!(relative_error(1e-9, 0.0), 1e-9 / REL_FLOOR);
    }
}
