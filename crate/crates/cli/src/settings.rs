use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use maskinject::harness::SceneConfig;
use maskinject::io::{default_seed, read_config};
use maskinject::tspp::{AreaMode, SamplerConfig};

/// Keys accepted in a `--config` file. Command-line flags take precedence.
pub const KEYS: &[&str] = &[
    "seed",
    "scenes",
    "width",
    "height",
    "objects",
    "classes",
    "shapes",
    "noise",
    "splits_min",
    "splits_max",
    "cost_stride",
    "min_size",
    "max_size",
    "margin",
    "retries",
    "grid",
    "g_p",
    "m_p",
    "area_mode",
    "alpha",
    "strength",
    "high_res",
    "head_channels",
    "steps",
    "lr",
    "lambda",
];

#[derive(Default)]
pub struct Settings {
    map: BTreeMap<String, String>,
}

impl Settings {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Settings::default());
        };
        let map = read_config(path).with_context(|| format!("reading {}", path.display()))?;
        if let Some(k) = map.keys().find(|k| !KEYS.contains(&k.as_str())) {
            bail!("{}: unknown key `{k}`", path.display());
        }
        Ok(Settings { map })
    }

    /// Flag value, else config value, else `default`.
    pub fn pick<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        if let Some(v) = flag {
            return Ok(v);
        }
        match self.map.get(key) {
            Some(s) => s.parse().map_err(|e| anyhow::anyhow!("config key `{key}`: {e}")),
            None => Ok(default),
        }
    }

    /// Flag, config, `MASKINJECT_SEED`, then 0.
    pub fn seed(&self, flag: Option<u64>) -> Result<u64> {
        let fallback = default_seed(0)?;
        self.pick(flag, "seed", fallback)
    }

    pub fn scene(&self, a: &SceneArgs, seed: u64) -> Result<SceneConfig> {
        let d = SceneConfig::default();
        let cfg = SceneConfig {
            width: self.pick(a.width, "width", d.width)?,
            height: self.pick(a.height, "height", d.height)?,
            n_objects: self.pick(a.objects, "objects", d.n_objects)?,
            classes: self.pick(a.classes, "classes", d.classes)?,
            shapes: self.pick(a.shapes.clone().map(|s| s.parse()).transpose()?, "shapes", d.shapes)?,
            noise: self.pick(a.noise, "noise", d.noise)?,
            splits: (
                self.pick(None, "splits_min", d.splits.0)?,
                self.pick(None, "splits_max", d.splits.1)?,
            ),
            seed,
            cost_stride: self.pick(None, "cost_stride", d.cost_stride)?,
            min_size: self.pick(None, "min_size", d.min_size)?,
            max_size: self.pick(None, "max_size", d.max_size)?,
            margin: self.pick(None, "margin", d.margin)?,
            retries: self.pick(None, "retries", d.retries)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn sampler(&self, a: &SamplerArgs) -> Result<SamplerConfig> {
        let d = SamplerConfig::default();
        let grid = self.pick(a.grid, "grid", d.grid_w)?;
        let area: String = self.pick(a.area_mode.clone(), "area_mode", "cells".into())?;
        let cfg = SamplerConfig {
            g_p: self.pick(a.gp, "g_p", d.g_p)?,
            m_p: self.pick(a.mp, "m_p", d.m_p)?,
            grid_h: grid,
            grid_w: grid,
            area_mode: parse_area(&area)?,
            ..d
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn parse_area(s: &str) -> Result<AreaMode> {
    match s {
        "cells" => Ok(AreaMode::GridCells),
        "pixels" => Ok(AreaMode::Pixels),
        _ => bail!("area mode must be `cells` or `pixels`, got `{s}`"),
    }
}

#[derive(clap::Args, Clone, Debug, Default)]
pub struct SceneArgs {
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
    /// Objects per scene (single scenes only; suites draw 1..=12).
    #[arg(long)]
    pub objects: Option<usize>,
    #[arg(long)]
    pub classes: Option<usize>,
    /// rectangles, ellipses or blobs
    #[arg(long)]
    pub shapes: Option<String>,
    #[arg(long)]
    pub noise: Option<f64>,
}

#[derive(clap::Args, Clone, Debug, Default)]
pub struct SamplerArgs {
    /// Prompt grid side.
    #[arg(long)]
    pub grid: Option<usize>,
    #[arg(long)]
    pub gp: Option<usize>,
    #[arg(long)]
    pub mp: Option<usize>,
    /// cells or pixels
    #[arg(long)]
    pub area_mode: Option<String>,
}
