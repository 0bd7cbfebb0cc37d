//! Point-budget comparison of prompting strategies on a scene suite.

use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::seq::index::sample;
use rand::RngCore;

use super::scene::Scene;
use crate::error::{Error, Result};
use crate::mask::{masks_from_labelmap, MaskSet};
use crate::rng::{self, purpose};
use crate::tspp::{probability_target, sample_points, Point, PointPrompts, SamplerConfig};

/// Reference point counts reported for the original system.
pub const REFERENCE_GRID_POINTS: usize = 1024;
pub const REFERENCE_SPARSE_POINTS_ADE150: usize = 41;
pub const REFERENCE_SPARSE_POINTS_PC59: usize = 37;
pub const REFERENCE_REDUCTION: f64 = 0.960;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Strategy {
    /// Every cell center of the prompt grid.
    Grid,
    /// `k` distinct cells chosen uniformly, `k` the rounded mean point count
    /// of the target strategy on the same suite.
    RandomK,
    /// Bernoulli sampling from the ground-truth probability target.
    TsppTarget,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Grid, Strategy::RandomK, Strategy::TsppTarget];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Grid => "grid32",
            Strategy::RandomK => "random-k",
            Strategy::TsppTarget => "tspp-target",
        }
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown strategy `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StrategyReport {
    pub strategy: Strategy,
    pub mean_points: f64,
    /// Fraction of ground-truth objects hit by at least one point, pooled
    /// over the suite.
    pub recall: f64,
    /// Mean of the expected point count, for the target strategy.
    pub mean_expected: Option<f64>,
    pub time_per_image: Duration,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    pub scenes: usize,
    pub rows: Vec<StrategyReport>,
}

impl BenchReport {
    pub fn row(&self, s: Strategy) -> Option<&StrategyReport> {
        self.rows.iter().find(|r| r.strategy == s)
    }

    /// Deterministic CSV (timings left out), with the reference constants
    /// appended as comment lines.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("strategy,mean_points,recall,mean_expected\n");
        for r in &self.rows {
            let e = r.mean_expected.map(|v| v.to_string()).unwrap_or_default();
            s.push_str(&format!("{},{},{},{}\n", r.strategy.name(), r.mean_points, r.recall, e));
        }
        s.push_str(&format!(
            "# reference: grid {REFERENCE_GRID_POINTS} points, sparse prompting {REFERENCE_SPARSE_POINTS_ADE150} (ADE-150) / {REFERENCE_SPARSE_POINTS_PC59} (PC-59), reduction {:.1}%\n",
            REFERENCE_REDUCTION * 100.0
        ));
        s
    }
}

fn grid_points(cfg: &SamplerConfig, width: usize, height: usize) -> PointPrompts {
    let (sx, sy) = (width as f64 / cfg.grid_w as f64, height as f64 / cfg.grid_h as f64);
    let points = (0..cfg.grid_h)
        .flat_map(|row| {
            (0..cfg.grid_w).map(move |col| Point {
                x: (col as f64 + 0.5) * sx,
                y: (row as f64 + 0.5) * sy,
                row,
                col,
                prob: 1.0,
            })
        })
        .collect();
    PointPrompts { points }
}

fn random_points(cfg: &SamplerConfig, k: usize, seed: u64, index: usize, width: usize, height: usize) -> PointPrompts {
    let all = grid_points(cfg, width, height).points;
    let mut r = rng::scene_stream(seed, index, purpose::BENCH_RANDOM);
    let mut picked: Vec<usize> = sample(&mut r, all.len(), k.min(all.len())).into_vec();
    picked.sort_unstable();
    PointPrompts {
        points: picked.into_iter().map(|i| all[i]).collect(),
    }
}

/// Objects hit and objects total.
fn hits(objects: &MaskSet, points: &PointPrompts) -> (usize, usize) {
    let (w, h) = objects.dims();
    let hit = objects
        .iter()
        .filter(|m| {
            points.points.iter().any(|p| {
                let (x, y) = p.pixel(w, h);
                m.get(x, y)
            })
        })
        .count();
    (hit, objects.len())
}

/// Runs every requested strategy on every scene. `seed` drives the sampling
/// and random choices; scene `i` uses streams derived from `(seed, i)`.
pub fn bench_sampling(
    suite: &[Scene],
    strategies: &[Strategy],
    cfg: &SamplerConfig,
    seed: u64,
) -> Result<BenchReport> {
    if suite.is_empty() {
        return Err(Error::Config("empty suite".into()));
    }
    cfg.validate()?;
    let objects: Vec<MaskSet> = suite.iter().map(|s| masks_from_labelmap(&s.instances)).collect();

    // the target strategy fixes k for random-k, so it always runs first
    let start = Instant::now();
    let mut target_points = 0usize;
    let mut target_expected = 0usize;
    let mut target_hits = (0, 0);
    for (i, (s, obj)) in suite.iter().zip(&objects).enumerate() {
        let (w, h) = s.labels.dims();
        let t = probability_target::<f64>(obj, cfg)?;
        target_expected += t.expected.iter().sum::<usize>();
        let pts = sample_points(&t.grid, rng::scene_stream(seed, i, purpose::SAMPLING).next_u64(), w, h);
        target_points += pts.len();
        let (a, b) = hits(obj, &pts);
        target_hits = (target_hits.0 + a, target_hits.1 + b);
    }
    let target_time = start.elapsed();
    let n = suite.len() as f64;
    let recall = |(a, b): (usize, usize)| if b == 0 { 1.0 } else { a as f64 / b as f64 };
    let k = (target_points as f64 / n).round() as usize;

    let mut rows = Vec::new();
    for &st in strategies {
        let row = match st {
            Strategy::TsppTarget => StrategyReport {
                strategy: st,
                mean_points: target_points as f64 / n,
                recall: recall(target_hits),
                mean_expected: Some(target_expected as f64 / n),
                time_per_image: target_time / suite.len() as u32,
            },
            Strategy::Grid | Strategy::RandomK => {
                let start = Instant::now();
                let mut total = 0usize;
                let mut hh = (0, 0);
                for (i, (s, obj)) in suite.iter().zip(&objects).enumerate() {
                    let (w, h) = s.labels.dims();
                    let pts = match st {
                        Strategy::Grid => grid_points(cfg, w, h),
                        _ => random_points(cfg, k, seed, i, w, h),
                    };
                    total += pts.len();
                    let (a, b) = hits(obj, &pts);
                    hh = (hh.0 + a, hh.1 + b);
                }
                StrategyReport {
                    strategy: st,
                    mean_points: total as f64 / n,
                    recall: recall(hh),
                    mean_expected: None,
                    time_per_image: start.elapsed() / suite.len() as u32,
                }
            }
        };
        rows.push(row);
    }
    Ok(BenchReport {
        scenes: suite.len(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::scene::{gen_suite, SceneConfig};

    #[test]
    fn grid_has_every_cell() {
        let suite = gen_suite(&SceneConfig::default(), 1, 3).unwrap();
        let r = bench_sampling(&suite, &Strategy::ALL, &SamplerConfig::default(), 1).unwrap();
        let g = r.row(Strategy::Grid).unwrap();
        assert_eq!(g.mean_points, 1024.0);
        assert_eq!(g.recall, 1.0);
        let t = r.row(Strategy::TsppTarget).unwrap();
        assert!(t.mean_expected.unwrap() <= 120.0);
        let k = r.row(Strategy::RandomK).unwrap();
        assert_eq!(k.mean_points, t.mean_points.round());
        assert!(r.to_csv().starts_with("strategy,mean_points,recall,mean_expected\ngrid32,1024,1,\n"));
    }
}
