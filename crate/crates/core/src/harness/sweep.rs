//! Aggregation threshold sweep.

use super::pipeline::{run_suite, scene_iou, PipelineConfig, PipelineParams};
use super::scene::Scene;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct AlphaRow {
    pub alpha: f64,
    pub mean_iou: f64,
    pub mean_merged: f64,
    /// Masks after aggregation, per scene.
    pub merged: Vec<usize>,
}

/// Runs the pipeline with SMAgg at every alpha on every scene (scene seeds
/// as pipeline seeds).
pub fn alpha_sweep(
    suite: &[Scene],
    params: &PipelineParams,
    base: &PipelineConfig,
    alphas: &[f64],
) -> Result<Vec<AlphaRow>> {
    if let Some(a) = alphas.iter().find(|a| !(0.0..1.0).contains(*a)) {
        return Err(Error::Config(format!("alpha {a} outside [0, 1)")));
    }
    let n = suite.len().max(1) as f64;
    alphas
        .iter()
        .map(|&alpha| {
            let mut cfg = base.clone();
            cfg.smagg = true;
            cfg.aggregate.alpha = alpha;
            let mut iou = 0.0;
            let mut merged = Vec::with_capacity(suite.len());
            for (s, out) in suite.iter().zip(run_suite(suite, params, &cfg)?) {
                iou += scene_iou(s, &out)?;
                merged.push(out.diagnostics.n_merged);
            }
            Ok(AlphaRow {
                alpha,
                mean_iou: iou / n,
                mean_merged: merged.iter().sum::<usize>() as f64 / n,
                merged,
            })
        })
        .collect()
}

/// Whether the per-scene mask count never drops as alpha grows, for rows in
/// ascending alpha order.
pub fn merged_monotone(rows: &[AlphaRow]) -> bool {
    let mut sorted: Vec<&AlphaRow> = rows.iter().collect();
    sorted.sort_by(|a, b| a.alpha.total_cmp(&b.alpha));
    sorted.windows(2).all(|w| w[0].merged.iter().zip(&w[1].merged).all(|(a, b)| a <= b))
}

pub fn sweep_csv(rows: &[AlphaRow]) -> String {
    let mut s = String::from("alpha,mean_iou,mean_merged\n");
    for r in rows {
        s.push_str(&format!("{},{},{}\n", r.alpha, r.mean_iou, r.mean_merged));
    }
    s
}
