//! Command-line front end. Every subcommand is a pure function of its inputs
//! and seed; files written are byte-identical across runs and thread counts.
//! Timings only ever go to stdout.

mod settings;

use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use maskinject::dmi::{high_freq_inject, low_freq_inject};
use maskinject::gradcheck::{gradcheck, GradOp};
use maskinject::harness::{
    alpha_sweep, bench_sampling, fit_pipeline_readout, gen_scene, gen_suite, guidance_params,
    merged_monotone, render_heatmap, run_suite, scene_iou, sweep_csv, PipelineConfig,
    PipelineParams, ReadoutConfig, Scene, Strategy,
};
use maskinject::io::{
    head_params_from_pack, head_params_pack, high_freq_params_from_pack, merge_csv, points_csv,
    read_label_pgm, write_label_pgm, write_text, Fgrid,
};
use maskinject::mask::{downsample_mask, masks_from_labelmap};
use maskinject::rng::{self, purpose};
use maskinject::smagg::{aggregate, AggregateConfig, CompareAt};
use maskinject::tspp::{
    probability_target, sample_points, train_head, TrainConfig, TrainItem, TsppHeadParams,
};
use maskinject::{LabelMap, MaskSet};

use settings::{SamplerArgs, SceneArgs, Settings};

#[derive(Parser)]
#[command(name = "maskinject", version, about = "Sparse prompting, mask aggregation and mask injection on synthetic scenes")]
struct Cli {
    /// key=value file; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write one synthetic scene: labels.pgm, instances.pgm and cost.fgrid.
    GenScene {
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        scene: SceneArgs,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Sampling probabilities from a ground-truth instance map.
    TsppTarget {
        /// Label map; every non-zero id is one object.
        #[arg(long)]
        labels: PathBuf,
        #[command(flatten)]
        sampler: SamplerArgs,
        #[arg(long)]
        out: PathBuf,
        /// Also write the unclamped probabilities.
        #[arg(long)]
        raw_out: Option<PathBuf>,
    },
    /// Bernoulli point prompts from a probability grid.
    SamplePoints {
        #[arg(long)]
        probs: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Image size the grid is laid over.
        #[arg(long)]
        width: Option<usize>,
        #[arg(long)]
        height: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Merge proposal masks with per-class text masks.
    Smagg {
        /// Proposal label map, one mask per non-zero id.
        #[arg(long)]
        sam: PathBuf,
        /// Class label map; label `c` is text class `c`, 0 is unlabelled.
        #[arg(long)]
        text: PathBuf,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long, value_enum, default_value_t = Compare::Text)]
        compare_at: Compare,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Run one injection path on a feature map.
    DmiForward {
        /// C x H x W tensor.
        #[arg(long)]
        features: PathBuf,
        /// Label map; masks larger than the feature grid are reduced by
        /// majority vote.
        #[arg(long)]
        masks: PathBuf,
        #[arg(long, value_enum)]
        mode: Mode,
        /// High-frequency parameter pack (required for `high`).
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare analytic and finite-difference gradients.
    Gradcheck {
        /// One of linear, cross-attention, low-freq, high-freq, tspp-head;
        /// all of them when omitted.
        #[arg(long)]
        op: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
    },
    /// Train the prompter head on a synthetic suite.
    TrainHead {
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        scenes: Option<usize>,
        #[command(flatten)]
        scene: SceneArgs,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        out: PathBuf,
        /// step,loss,ce,mse per step.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// End-to-end run over a suite of scenes.
    Pipeline {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        no_smagg: bool,
        #[arg(long)]
        no_inject: bool,
        #[arg(long)]
        alpha: Option<f64>,
        /// Per-scene semantic maps and prompts plus summary.csv.
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Compare prompting strategies on a suite.
    Bench {
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        scenes: Option<usize>,
        #[command(flatten)]
        scene: SceneArgs,
        #[command(flatten)]
        sampler: SamplerArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pipeline IoU and merged mask counts over aggregation thresholds.
    AlphaSweep {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_delimiter = ',', default_value = "0.3,0.5,0.7")]
        alphas: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Heatmap of a 2-D tensor, or one channel of a 3-D tensor.
    Render {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 0)]
        channel: usize,
        #[arg(long, default_value_t = 8)]
        scale: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(clap::Args)]
struct RunArgs {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    scenes: Option<usize>,
    #[command(flatten)]
    scene: SceneArgs,
    /// Prompter head pack; a seeded random head otherwise.
    #[arg(long)]
    head: Option<PathBuf>,
    /// Fit the linear readout on this many training scenes (suite seed + 1);
    /// 0 reads the argmax of the features.
    #[arg(long, default_value_t = 0)]
    readout_scenes: usize,
    #[arg(long)]
    strength: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Low,
    High,
}

#[derive(Clone, Copy, ValueEnum)]
enum Compare {
    Text,
    Full,
}

const HEAD_CHANNELS: usize = 16;

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    let st = Settings::load(cli.config.as_deref())?;
    match cli.cmd {
        Cmd::GenScene { seed, scene, out_dir } => {
            let cfg = st.scene(&scene, st.seed(seed)?)?;
            let t = Instant::now();
            let s = gen_scene(&cfg)?;
            fs::create_dir_all(&out_dir)?;
            write_label_pgm(&out_dir.join("labels.pgm"), &s.labels)?;
            write_label_pgm(&out_dir.join("instances.pgm"), &s.instances)?;
            Fgrid::from_cost_map(&s.cost).write(&out_dir.join("cost.fgrid"))?;
            println!("objects {} in {}", s.n_objects(), ms(t.elapsed()));
        }
        Cmd::TsppTarget { labels, sampler, out, raw_out } => {
            let cfg = st.sampler(&sampler)?;
            let gt = masks_from_labelmap(&read_label_pgm(&labels)?);
            let t = probability_target::<f64>(&gt, &cfg)?;
            Fgrid::from_probabilities(&t.grid).write(&out)?;
            if let Some(p) = raw_out {
                Fgrid::from_raw_probabilities(&t.grid).write(&p)?;
            }
            println!(
                "masks {} expected points {} skipped {}",
                gt.len(),
                t.expected.iter().sum::<usize>(),
                t.skipped.len()
            );
        }
        Cmd::SamplePoints { probs, seed, width, height, out } => {
            let grid = Fgrid::read(&probs)?.to_probabilities::<f64>()?;
            let w = st.pick(width, "width", 512)?;
            let h = st.pick(height, "height", 512)?;
            let pts = sample_points(&grid, st.seed(seed)?, w, h);
            write_text(&out, &points_csv(&pts))?;
            println!("points {}", pts.len());
        }
        Cmd::Smagg { sam, text, alpha, compare_at, out, report } => {
            let sam = masks_from_labelmap(&read_label_pgm(&sam)?);
            let text = text_classes(&read_label_pgm(&text)?)?;
            let cfg = AggregateConfig {
                alpha: st.pick(alpha, "alpha", 0.5)?,
                compare_at: match compare_at {
                    Compare::Text => CompareAt::Text,
                    Compare::Full => CompareAt::Full,
                },
                ..AggregateConfig::default()
            };
            let r = aggregate::<f64>(&sam, &text, &cfg)?;
            write_label_pgm(&out, &r.masks.to_labelmap()?)?;
            if let Some(p) = report {
                write_text(&p, &merge_csv(&r))?;
            }
            println!("proposals {} merged {}", sam.len(), r.len());
        }
        Cmd::DmiForward { features, masks, mode, params, out } => {
            let f = Fgrid::read(&features)?.to_feature_map::<f64>()?;
            let masks = masks_for(&read_label_pgm(&masks)?, f.w, f.h)?;
            let y = match mode {
                Mode::Low => {
                    let o = low_freq_inject(&f, &masks)?;
                    if o.no_keys {
                        println!("no non-empty mask; output equals input");
                    }
                    o.output
                }
                Mode::High => {
                    let Some(p) = params else {
                        bail!("--mode high needs --params");
                    };
                    let p = high_freq_params_from_pack::<f64>(&Fgrid::read(&p)?)?;
                    high_freq_inject(&f, &masks, None, &p)?
                }
            };
            Fgrid::from_feature_map(&y).write(&out)?;
        }
        Cmd::Gradcheck { op, seed, tol } => {
            let seed = st.seed(seed)?;
            let ops = match op {
                Some(s) => vec![s.parse::<GradOp>()?],
                None => GradOp::ALL.to_vec(),
            };
            let mut ok = true;
            for op in ops {
                let r = gradcheck(op, seed, tol)?;
                for b in &r.blocks {
                    println!("{op} {} n={} abs={:.3e} rel={:.3e}", b.name, b.len, b.max_abs_error, b.max_rel_error);
                }
                println!("{op} seed {seed} max rel {:.3e} {}", r.max_rel_error, if r.passed { "ok" } else { "FAILED" });
                ok &= r.passed;
            }
            if !ok {
                bail!("gradient check failed at tol {tol}");
            }
        }
        Cmd::TrainHead { seed, scenes, scene, steps, lr, lambda, out, trace } => {
            let seed = st.seed(seed)?;
            let n = st.pick(scenes, "scenes", 20)?;
            let suite = gen_suite(&st.scene(&scene, seed)?, seed, n)?;
            let sampler = st.sampler(&SamplerArgs::default())?;
            let items = suite
                .iter()
                .map(|s| TrainItem::from_instances(s.cost.clone(), &s.instances, &s.labels, &sampler))
                .collect::<maskinject::Result<Vec<_>>>()?;
            let d = TrainConfig::default();
            let cfg = TrainConfig {
                steps: st.pick(steps, "steps", d.steps)?,
                learning_rate: st.pick(lr, "lr", d.learning_rate)?,
                lambda_mse: st.pick(lambda, "lambda", d.lambda_mse)?,
            };
            let channels = st.pick(None, "head_channels", HEAD_CHANNELS)?;
            let t = Instant::now();
            let res = train_head(&items, init_head(seed, channels), &cfg)?;
            head_params_pack(&res.params).write(&out)?;
            if let Some(p) = trace {
                let mut s = String::from("step,loss,ce,mse\n");
                for (i, r) in res.trace.iter().enumerate() {
                    writeln!(s, "{i},{},{},{}", r.loss, r.ce, r.mse)?;
                }
                write_text(&p, &s)?;
            }
            println!(
                "loss {:.6} -> {:.6} in {}",
                res.initial().loss,
                res.last().loss,
                ms(t.elapsed())
            );
        }
        Cmd::Pipeline { run, no_smagg, no_inject, alpha, out_dir } => {
            let mut cfg = PipelineConfig {
                smagg: !no_smagg,
                inject: !no_inject,
                ..PipelineConfig::default()
            };
            cfg.aggregate.alpha = st.pick(alpha, "alpha", cfg.aggregate.alpha)?;
            cfg.high_res = st.pick(None, "high_res", cfg.high_res)?;
            let (suite, params) = prepare(&st, &run, &cfg)?;
            let t = Instant::now();
            let outs = run_suite(&suite, &params, &cfg)?;
            let wall = t.elapsed();
            fs::create_dir_all(&out_dir)?;
            let mut summary = String::from("scene,seed,objects,points,sam,merged,no_keys,iou\n");
            let mut stages: Vec<(&str, Duration)> = Vec::new();
            let mut iou = 0.0;
            for (i, (s, o)) in suite.iter().zip(&outs).enumerate() {
                write_label_pgm(&out_dir.join(format!("scene_{i:03}_semantic.pgm")), &o.semantic)?;
                write_text(&out_dir.join(format!("scene_{i:03}_points.csv")), &points_csv(&o.points))?;
                let v = scene_iou(s, o)?;
                iou += v;
                let d = &o.diagnostics;
                writeln!(
                    summary,
                    "{i},{},{},{},{},{},{},{v}",
                    s.config.seed,
                    s.n_objects(),
                    d.n_points,
                    d.n_sam,
                    d.n_merged,
                    d.no_keys
                )?;
                for &(name, dt) in &d.timings {
                    match stages.iter_mut().find(|(n, _)| *n == name) {
                        Some(e) => e.1 += dt,
                        None => stages.push((name, dt)),
                    }
                }
            }
            write_text(&out_dir.join("summary.csv"), &summary)?;
            println!("scenes {} mean iou {:.4}", suite.len(), iou / suite.len().max(1) as f64);
            for (name, dt) in stages {
                println!("stage {name} {}", ms(dt));
            }
            println!("total {}", ms(wall));
        }
        Cmd::Bench { seed, scenes, scene, sampler, out } => {
            let seed = st.seed(seed)?;
            let n = st.pick(scenes, "scenes", 20)?;
            let suite = gen_suite(&st.scene(&scene, seed)?, seed, n)?;
            let report = bench_sampling(&suite, &Strategy::ALL, &st.sampler(&sampler)?, seed)?;
            let csv = report.to_csv();
            write_text(&out, &csv)?;
            print!("{csv}");
            for r in &report.rows {
                println!("time {} {} per image", r.strategy.name(), ms(r.time_per_image));
            }
        }
        Cmd::AlphaSweep { run, alphas, out } => {
            let cfg = PipelineConfig::default();
            let (suite, params) = prepare(&st, &run, &cfg)?;
            let t = Instant::now();
            let rows = alpha_sweep(&suite, &params, &cfg, &alphas)?;
            let csv = sweep_csv(&rows);
            write_text(&out, &csv)?;
            print!("{csv}");
            println!("monotone {}", merged_monotone(&rows));
            println!("total {}", ms(t.elapsed()));
        }
        Cmd::Render { input, channel, scale, out } => {
            let g = Fgrid::read(&input)?;
            let (h, w, plane) = match g.dims[..] {
                [h, w] => (h, w, &g.data[..]),
                [c, h, w] if channel < c => (h, w, &g.data[channel * h * w..(channel + 1) * h * w]),
                _ => bail!("cannot render dims {:?} channel {channel}", g.dims),
            };
            let values: Vec<f64> = plane.iter().map(|&v| v as f64).collect();
            render_heatmap(&values, w, h, scale, &out)?;
        }
    }
    Ok(())
}

fn ms(d: Duration) -> String {
    format!("{:.3} ms", d.as_secs_f64() * 1e3)
}

fn init_head(seed: u64, channels: usize) -> TsppHeadParams<f64> {
    TsppHeadParams::init(channels, &mut rng::stream(seed, purpose::PARAMS))
}

/// Suite and parameters shared by `pipeline` and `alpha-sweep`.
fn prepare(st: &Settings, run: &RunArgs, cfg: &PipelineConfig) -> Result<(Vec<Scene>, PipelineParams)> {
    let seed = st.seed(run.seed)?;
    let n = st.pick(run.scenes, "scenes", 20)?;
    let base = st.scene(&run.scene, seed)?;
    let suite = gen_suite(&base, seed, n)?;
    let head = match &run.head {
        Some(p) => head_params_from_pack(&Fgrid::read(p).with_context(|| format!("reading {}", p.display()))?)?,
        None => init_head(seed, st.pick(None, "head_channels", HEAD_CHANNELS)?),
    };
    let high = guidance_params(base.classes, st.pick(run.strength, "strength", 2.0)?);
    let readout = if run.readout_scenes > 0 {
        let train = gen_suite(&base, seed.wrapping_add(1), run.readout_scenes)?;
        Some(fit_pipeline_readout(&train, &head, &high, cfg, &ReadoutConfig::default())?)
    } else {
        None
    };
    Ok((suite, PipelineParams { head, high, readout }))
}

/// One mask per label value so that class indices equal label values; label 0
/// gets an empty mask and never attracts proposals.
fn text_classes(lm: &LabelMap) -> Result<MaskSet> {
    let (w, h) = lm.dims();
    let masks = (0..=lm.max_label())
        .map(|l| if l == 0 { maskinject::BinaryMask::new(w, h) } else { lm.mask_of(l) })
        .collect();
    Ok(MaskSet::new(w, h, masks)?)
}

fn masks_for(lm: &LabelMap, w: usize, h: usize) -> Result<MaskSet> {
    let masks = masks_from_labelmap(lm);
    if masks.dims() == (w, h) {
        return Ok(masks);
    }
    let f = lm.width() / w.max(1);
    if f == 0 || f * w != lm.width() || f * h != lm.height() {
        bail!("{}x{} masks do not fit a {w}x{h} feature grid", lm.width(), lm.height());
    }
    if masks.is_empty() {
        return Ok(MaskSet::empty(w, h));
    }
    Ok(masks.map(|m| downsample_mask(m, f))?)
}
