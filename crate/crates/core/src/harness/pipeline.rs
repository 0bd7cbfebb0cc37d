//! Cost map to semantic map: prompting, simulated segmentation, aggregation
//! and mask injection on synthetic features.

use std::time::{Duration, Instant};

use rayon::prelude::*;

use rand::RngCore;

use super::readout::{fit_readout, Readout, ReadoutConfig};
use super::sam::{simulate_sam, SamConfig};
use super::scene::Scene;
use crate::dmi::{high_freq_inject, low_freq_inject, FeatureMap, HighFreqConfig, HighFreqParams};
use crate::error::{Error, Result};
use crate::mask::{cell_center_pixel, downsample_mask, LabelMap, MaskSet};
use crate::rng::{self, purpose};
use crate::smagg::{aggregate, passthrough, AggregateConfig};
use crate::tspp::{
    head_forward, sample_points, text_masks_from_logits, CostMap, PointPrompts, TextMaskConfig,
    TsppHeadParams,
};

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub aggregate: AggregateConfig,
    /// Merge proposals with SMAgg; otherwise every proposal passes through.
    pub smagg: bool,
    /// Run both injection paths; otherwise the coarse features are read out
    /// directly.
    pub inject: bool,
    pub text: TextMaskConfig,
    /// Over-segmentation pieces per object.
    pub splits: (usize, usize),
    /// Upsampling factor from the cost grid to the output grid.
    pub high_res: usize,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            aggregate: AggregateConfig::default(),
            smagg: true,
            inject: true,
            text: TextMaskConfig {
                background_threshold: None,
            },
            splits: (2, 3),
            high_res: 2,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineParams {
    pub head: TsppHeadParams<f64>,
    pub high: HighFreqParams<f64>,
    /// Fitted decoder; `None` reads the features out with [`read_out`].
    pub readout: Option<Readout>,
}

/// Fixed high-frequency parameters for `classes` classes that turn the mask
/// summary into class evidence: a mask tagged with class `k` adds about
/// `strength` to feature channel `k`, and any mask lowers the background
/// channel by about `strength`.
pub fn guidance_params(classes: usize, strength: f64) -> HighFreqParams<f64> {
    let d = feature_channels(classes);
    let cfg = HighFreqConfig {
        embed_dim: classes + 1,
        class_cap: classes,
        kernel: 3,
    };
    let (e, s) = (cfg.embed_dim, cfg.summary_dim());
    let gain: f64 = 2.0;
    let amp = strength / gain.tanh();
    let mut p = HighFreqParams::zeros(d, cfg);
    for k in 0..classes {
        p.proj_w[k * s + 2 + k] = gain;
        p.mlp_w[k * (d + e) + d + k] = amp;
    }
    p.proj_w[classes * s] = gain;
    p.mlp_w[classes * (d + e) + d + classes] = -amp;
    for c in 0..d {
        p.dw[c * 9 + 4] = 1.0;
    }
    p
}

/// Class channels, a background channel and two coordinate channels.
pub fn feature_channels(classes: usize) -> usize {
    classes + 3
}

/// Synthetic features on the cost grid: the `K` cost channels, the
/// background score `1 - max(0, max_k cost)`, and `x`, `y` in `(0, 1)`.
pub fn synthetic_features(cost: &CostMap<f64>) -> FeatureMap<f64> {
    let (kn, h, w) = (cost.classes, cost.h, cost.w);
    FeatureMap::from_fn(feature_channels(kn), h, w, |c, y, x| {
        if c < kn {
            cost.get(c, y, x)
        } else if c == kn {
            let best = (0..kn).map(|k| cost.get(k, y, x)).fold(0.0, f64::max);
            1.0 - best
        } else if c == kn + 1 {
            (x as f64 + 0.5) / w as f64
        } else {
            (y as f64 + 0.5) / h as f64
        }
    })
}

/// Per-cell argmax over the class channels and the background channel;
/// ties go to the lower channel, background wins ties with no class.
pub fn read_out(f: &FeatureMap<f64>, classes: usize) -> LabelMap {
    let mut lm = LabelMap::zeros(f.w, f.h);
    for y in 0..f.h {
        for x in 0..f.w {
            let mut best = 0u32;
            let mut best_v = f.get(classes, y, x);
            for k in 0..classes {
                let v = f.get(k, y, x);
                if v > best_v {
                    best = k as u32 + 1;
                    best_v = v;
                }
            }
            lm.set(x, y, best);
        }
    }
    lm
}

/// Ground truth sampled at the centers of a `w x h` grid.
pub fn labels_on_grid(gt: &LabelMap, w: usize, h: usize) -> LabelMap {
    let mut out = LabelMap::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let v = gt.get(
                cell_center_pixel(x, w, gt.width()),
                cell_center_pixel(y, h, gt.height()),
            );
            out.set(x, y, v);
        }
    }
    out
}

/// Mean over classes `1..=classes` present in either map of
/// `|pred & gt| / |pred | gt|`; 1 when no class is present.
pub fn mean_iou(pred: &LabelMap, gt: &LabelMap, classes: usize) -> Result<f64> {
    if pred.dims() != gt.dims() {
        return Err(Error::dims(pred.dims(), gt.dims()));
    }
    let mut inter = vec![0usize; classes + 1];
    let mut union = vec![0usize; classes + 1];
    for (&p, &g) in pred.labels().iter().zip(gt.labels()) {
        let (p, g) = (p as usize, g as usize);
        if p == g {
            inter[p] += 1;
            union[p] += 1;
        } else {
            union[p] += 1;
            union[g] += 1;
        }
    }
    let ious: Vec<f64> = (1..=classes)
        .filter(|&c| union[c] > 0)
        .map(|c| inter[c] as f64 / union[c] as f64)
        .collect();
    if ious.is_empty() {
        return Ok(1.0);
    }
    Ok(ious.iter().sum::<f64>() / ious.len() as f64)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Diagnostics {
    /// Sampled prompts.
    pub n_points: usize,
    /// Proposals from the simulated segmenter.
    pub n_sam: usize,
    /// Masks after aggregation.
    pub n_merged: usize,
    /// Low-frequency attention had no mask to attend to.
    pub no_keys: bool,
    pub timings: Vec<(&'static str, Duration)>,
}

#[derive(Clone, Debug)]
pub struct PipelineOutput {
    /// Class ids on the output grid.
    pub semantic: LabelMap,
    /// Features the semantic map is read from.
    pub features: FeatureMap<f64>,
    pub points: PointPrompts,
    pub sam: MaskSet,
    pub merged: MaskSet,
    pub class_of: Vec<Option<usize>>,
    pub diagnostics: Diagnostics,
}

fn masks_at(m: &MaskSet, w: usize, h: usize) -> Result<MaskSet> {
    let f = m.width() / w;
    if f * w != m.width() || f * h != m.height() {
        return Err(Error::Shape(format!(
            "{}x{} masks do not reduce to {w}x{h}",
            m.width(),
            m.height()
        )));
    }
    if m.is_empty() {
        return Ok(MaskSet::empty(w, h));
    }
    m.map(|x| downsample_mask(x, f))
}

pub fn run_pipeline(scene: &Scene, params: &PipelineParams, cfg: &PipelineConfig) -> Result<PipelineOutput> {
    let mut timings = Vec::new();
    let mut clock = Instant::now();
    let mut lap = |name: &'static str, timings: &mut Vec<(&'static str, Duration)>| {
        let now = Instant::now();
        timings.push((name, now - clock));
        clock = now;
    };
    let cost = &scene.cost;
    let (kn, h, w) = (cost.classes, cost.h, cost.w);
    let (width, height) = scene.labels.dims();
    if cfg.high_res == 0 {
        return Err(Error::InvalidFactor(0));
    }

    let head = head_forward(cost, &params.head)?;
    lap("head", &mut timings);

    let sample_seed = rng::stream(cfg.seed, purpose::SAMPLING).next_u64();
    let points = sample_points(&head.pred, sample_seed, width, height);
    let sam_cfg = SamConfig {
        splits: cfg.splits,
        seed: cfg.seed,
    };
    let sam = simulate_sam(&scene.instances, &points, &sam_cfg);
    lap("prompt", &mut timings);

    let agg = if cfg.smagg {
        let text = text_masks_from_logits(&head.mask_logits, kn, h, w, &cfg.text);
        aggregate::<f64>(&sam, &text, &cfg.aggregate)?
    } else {
        passthrough::<f64>(&sam)
    };
    lap("aggregate", &mut timings);

    let features = synthetic_features(cost);
    let (hh, hw) = (h * cfg.high_res, w * cfg.high_res);
    let mut no_keys = false;
    let out = if cfg.inject {
        let low = low_freq_inject(&features, &masks_at(&agg.masks, w, h)?)?;
        no_keys = low.no_keys;
        let f_h = low.output.upsample(cfg.high_res)?;
        high_freq_inject(&f_h, &masks_at(&agg.masks, hw, hh)?, Some(&agg.class_of), &params.high)?
    } else {
        features.upsample(cfg.high_res)?
    };
    let semantic = match &params.readout {
        Some(r) => r.apply(&out)?,
        None => read_out(&out, kn),
    };
    lap("inject", &mut timings);

    Ok(PipelineOutput {
        semantic,
        features: out,
        diagnostics: Diagnostics {
            n_points: points.len(),
            n_sam: sam.len(),
            n_merged: agg.masks.len(),
            no_keys,
            timings,
        },
        points,
        sam,
        merged: agg.masks,
        class_of: agg.class_of,
    })
}

/// Runs every scene of a suite in parallel, each with its own scene seed.
/// Results are in suite order and do not depend on the thread count.
pub fn run_suite(suite: &[Scene], params: &PipelineParams, cfg: &PipelineConfig) -> Result<Vec<PipelineOutput>> {
    suite
        .par_iter()
        .map(|s| run_pipeline(s, params, &PipelineConfig { seed: s.config.seed, ..cfg.clone() }))
        .collect()
}

/// Mean IoU of a pipeline run against the scene's ground truth on the
/// output grid.
pub fn scene_iou(scene: &Scene, out: &PipelineOutput) -> Result<f64> {
    let (w, h) = out.semantic.dims();
    mean_iou(&out.semantic, &labels_on_grid(&scene.labels, w, h), scene.config.classes)
}

/// Fits the decoder on the features this configuration produces for
/// `scenes`, each run with its own scene seed.
pub fn fit_pipeline_readout(
    scenes: &[Scene],
    head: &TsppHeadParams<f64>,
    high: &HighFreqParams<f64>,
    cfg: &PipelineConfig,
    rcfg: &ReadoutConfig,
) -> Result<Readout> {
    let params = PipelineParams {
        head: head.clone(),
        high: high.clone(),
        readout: None,
    };
    let data = run_suite(scenes, &params, cfg)?
        .into_iter()
        .zip(scenes)
        .map(|(out, s)| {
            let gt = labels_on_grid(&s.labels, out.features.w, out.features.h);
            (out.features, gt)
        })
        .collect::<Vec<_>>();
    let classes = scenes.first().map_or(0, |s| s.config.classes);
    fit_readout(&data, classes, rcfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::scene::{gen_scene, gen_suite, SceneConfig};

    fn params(classes: usize) -> PipelineParams {
        PipelineParams {
            head: TsppHeadParams::init(16, &mut rng::rng(1)),
            high: guidance_params(classes, 2.0),
            readout: None,
        }
    }

    #[test]
    fn empty_scene_is_background() {
        let s = gen_scene(&SceneConfig {
            n_objects: 0,
            ..SceneConfig::default()
        })
        .unwrap();
        let out = run_pipeline(&s, &params(4), &PipelineConfig::default()).unwrap();
        assert!(out.semantic.labels().iter().all(|&l| l == 0));
        assert_eq!(out.diagnostics.n_sam, 0);
        assert!(out.diagnostics.no_keys);
        assert_eq!(out.semantic.dims(), (64, 64));
    }

    #[test]
    fn merging_keeps_the_union() {
        let suite = gen_suite(&SceneConfig::default(), 3, 4).unwrap();
        for s in &suite {
            let cfg = PipelineConfig {
                seed: s.config.seed,
                ..PipelineConfig::default()
            };
            let out = run_pipeline(s, &params(4), &cfg).unwrap();
            let d = &out.diagnostics;
            assert!(d.n_merged <= d.n_sam);
            assert_eq!(out.merged.union(), out.sam.union());
            assert_eq!(d.timings.len(), 4);
        }
    }

    #[test]
    fn tagged_mask_raises_its_class() {
        let p = guidance_params(3, 2.0);
        let f = FeatureMap::<f64>::zeros(feature_channels(3), 4, 4);
        let m = MaskSet::new(4, 4, vec![crate::BinaryMask::rect(4, 4, 0, 0, 2, 2)]).unwrap();
        let out = high_freq_inject(&f, &m, Some(&[Some(1)]), &p).unwrap();
        assert!((out.get(1, 0, 0) - 2.0).abs() < 1e-12);
        assert!((out.get(3, 0, 0) + 2.0).abs() < 1e-12);
        assert_eq!(out.get(0, 0, 0), 0.0);
        assert_eq!(out.get(1, 3, 3), 0.0);
        assert_eq!(read_out(&out, 3).get(0, 0), 2);
        assert_eq!(read_out(&out, 3).get(3, 3), 0);
    }

    #[test]
    fn iou_cases() {
        let a = LabelMap::new(2, 2, vec![1, 1, 0, 2]).unwrap();
        let b = LabelMap::new(2, 2, vec![1, 0, 0, 0]).unwrap();
        // class 1: 1/2, class 2: 0/1
        assert_eq!(mean_iou(&a, &b, 2).unwrap(), 0.25);
        assert_eq!(mean_iou(&b, &b, 2).unwrap(), 1.0);
        let z = LabelMap::zeros(2, 2);
        assert_eq!(mean_iou(&z, &z, 2).unwrap(), 1.0);
    }
}
