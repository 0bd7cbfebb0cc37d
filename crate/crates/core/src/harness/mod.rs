//! Synthetic scenes, a simulated promptable segmenter, the end-to-end
//! pipeline, benchmarks and brute-force oracles.

pub mod bench;
pub mod heatmap;
pub mod oracles;
pub mod pipeline;
pub mod readout;
pub mod sam;
pub mod scene;
pub mod sweep;

pub use bench::{bench_sampling, BenchReport, Strategy, StrategyReport};
pub use heatmap::{heatmap_rgb, render_heatmap};
pub use pipeline::{
    fit_pipeline_readout, guidance_params, mean_iou, run_pipeline, run_suite, scene_iou, Diagnostics,
    PipelineConfig, PipelineOutput, PipelineParams,
};
pub use readout::{fit_readout, Readout, ReadoutConfig};
pub use sam::{simulate_sam, split_regions, SamConfig};
pub use scene::{gen_scene, gen_suite, suite_scene_config, Scene, SceneConfig, ShapeFamily};
pub use sweep::{alpha_sweep, merged_monotone, sweep_csv, AlphaRow};
