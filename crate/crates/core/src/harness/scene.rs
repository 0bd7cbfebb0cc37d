//! Synthetic scenes: non-overlapping labelled objects on a blank canvas and a
//! coarse per-class cost map derived from them.

use std::f64::consts::TAU;
use std::str::FromStr;

use rand::Rng as _;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mask::LabelMap;
use crate::rng::{self, purpose, Rng};
use crate::tspp::CostMap;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ShapeFamily {
    #[default]
    Rectangles,
    Ellipses,
    /// Star-shaped outlines with a sinusoidal radius.
    Blobs,
}

impl FromStr for ShapeFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rectangles" => Ok(ShapeFamily::Rectangles),
            "ellipses" => Ok(ShapeFamily::Ellipses),
            "blobs" => Ok(ShapeFamily::Blobs),
            _ => Err(Error::Config(format!("unknown shape family `{s}`"))),
        }
    }
}

impl std::fmt::Display for ShapeFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ShapeFamily::Rectangles => "rectangles",
            ShapeFamily::Ellipses => "ellipses",
            ShapeFamily::Blobs => "blobs",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneConfig {
    pub width: usize,
    pub height: usize,
    pub n_objects: usize,
    /// Number of classes `K`; object classes are drawn from `1..=K`.
    pub classes: usize,
    pub shapes: ShapeFamily,
    /// Amplitude of the uniform cost-map noise.
    pub noise: f64,
    /// Inclusive range of over-segmentation pieces per object.
    pub splits: (usize, usize),
    pub seed: u64,
    /// Image pixels per cost-map cell along each axis.
    pub cost_stride: usize,
    /// Inclusive range of object bounding-box sides.
    pub min_size: usize,
    pub max_size: usize,
    /// Minimum gap between object bounding boxes.
    pub margin: usize,
    /// Placement attempts per object before giving up.
    pub retries: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            width: 512,
            height: 512,
            n_objects: 6,
            classes: 4,
            shapes: ShapeFamily::Rectangles,
            noise: 0.1,
            splits: (2, 3),
            seed: 0,
            cost_stride: 16,
            min_size: 32,
            max_size: 112,
            margin: 2,
            retries: 500,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.width == 0 || self.height == 0 {
            return bad("canvas must be non-empty");
        }
        if self.classes == 0 || self.classes > 255 {
            return bad("classes must be in 1..=255");
        }
        if self.cost_stride == 0 || !self.width.is_multiple_of(self.cost_stride) || !self.height.is_multiple_of(self.cost_stride) {
            return bad("cost_stride must divide the canvas");
        }
        if self.min_size == 0 || self.min_size > self.max_size {
            return bad("need 1 <= min_size <= max_size");
        }
        if self.max_size > self.width.min(self.height) {
            return bad("max_size exceeds the canvas");
        }
        if self.splits.0 == 0 || self.splits.0 > self.splits.1 {
            return bad("need 1 <= splits.0 <= splits.1");
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad("noise must be finite and non-negative");
        }
        if self.n_objects > 255 {
            return bad("at most 255 objects");
        }
        Ok(())
    }

    pub fn cost_dims(&self) -> (usize, usize) {
        (self.height / self.cost_stride, self.width / self.cost_stride)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub config: SceneConfig,
    /// Class id per pixel, 0 for background.
    pub labels: LabelMap,
    /// Object id per pixel (`1..=n_objects`), 0 for background.
    pub instances: LabelMap,
    /// Class of object `i + 1`.
    pub object_class: Vec<u32>,
    pub cost: CostMap<f64>,
}

impl Scene {
    pub fn n_objects(&self) -> usize {
        self.object_class.len()
    }
}

#[derive(Clone, Copy, Debug)]
struct Placed {
    x0: usize,
    y0: usize,
    w: usize,
    h: usize,
}

impl Placed {
    fn clear_of(&self, o: &Placed, margin: usize) -> bool {
        self.x0 + self.w + margin <= o.x0
            || o.x0 + o.w + margin <= self.x0
            || self.y0 + self.h + margin <= o.y0
            || o.y0 + o.h + margin <= self.y0
    }
}

/// Pixel-center membership test for one object inside its box.
fn shape_fn(family: ShapeFamily, b: Placed, r: &mut Rng) -> Box<dyn Fn(usize, usize) -> bool> {
    let (cx, cy) = (b.x0 as f64 + b.w as f64 / 2.0, b.y0 as f64 + b.h as f64 / 2.0);
    let (rx, ry) = (b.w as f64 / 2.0, b.h as f64 / 2.0);
    match family {
        ShapeFamily::Rectangles => Box::new(|_, _| true),
        ShapeFamily::Ellipses => Box::new(move |x, y| {
            let (dx, dy) = ((x as f64 + 0.5 - cx) / rx, (y as f64 + 0.5 - cy) / ry);
            dx * dx + dy * dy <= 1.0
        }),
        ShapeFamily::Blobs => {
            let lobes = r.random_range(2..=5) as f64;
            let depth = r.random_range(0.2..0.4);
            let phase = r.random_range(0.0..TAU);
            Box::new(move |x, y| {
                let (dx, dy) = ((x as f64 + 0.5 - cx) / rx, (y as f64 + 0.5 - cy) / ry);
                let scale = 1.0 - depth * (1.0 + (lobes * dy.atan2(dx) + phase).sin()) / 2.0;
                dx * dx + dy * dy <= scale * scale
            })
        }
    }
}

fn build_cost(cfg: &SceneConfig, labels: &LabelMap) -> CostMap<f64> {
    let s = cfg.cost_stride;
    let (ch, cw) = cfg.cost_dims();
    let kn = cfg.classes;
    // fraction of each cell covered by each class
    let mut frac = vec![0.0; kn * ch * cw];
    let inv = 1.0 / (s * s) as f64;
    for y in 0..cfg.height {
        for x in 0..cfg.width {
            let l = labels.get(x, y) as usize;
            if l > 0 {
                frac[((l - 1) * ch + y / s) * cw + x / s] += inv;
            }
        }
    }
    let mut values = vec![0.0; kn * ch * cw];
    for k in 0..kn {
        for y in 0..ch {
            for x in 0..cw {
                let mut acc = 0.0;
                for yy in y.saturating_sub(1)..(y + 2).min(ch) {
                    for xx in x.saturating_sub(1)..(x + 2).min(cw) {
                        acc += frac[(k * ch + yy) * cw + xx];
                    }
                }
                values[(k * ch + y) * cw + x] = acc / 9.0;
            }
        }
    }
    if cfg.noise > 0.0 {
        let mut r = rng::stream(cfg.seed, purpose::NOISE);
        for v in values.iter_mut() {
            *v += r.random_range(-cfg.noise..=cfg.noise);
        }
    }
    for v in values.iter_mut() {
        *v = v.clamp(-1.0, 1.0);
    }
    CostMap::new(kn, ch, cw, values).expect("sizes agree")
}

/// Places `n_objects` objects with random sizes, positions and classes, then
/// derives the cost map: per-class cell coverage, a 3x3 box blur (zero
/// padded), uniform noise in `[-noise, noise]`, clamped to `[-1, 1]`.
pub fn gen_scene(cfg: &SceneConfig) -> Result<Scene> {
    cfg.validate()?;
    let mut r = rng::stream(cfg.seed, purpose::SCENE);
    let mut instances = LabelMap::zeros(cfg.width, cfg.height);
    let mut labels = LabelMap::zeros(cfg.width, cfg.height);
    let mut placed: Vec<Placed> = Vec::with_capacity(cfg.n_objects);
    let mut object_class = Vec::with_capacity(cfg.n_objects);
    for obj in 0..cfg.n_objects {
        let mut slot = None;
        for _ in 0..cfg.retries {
            let w = r.random_range(cfg.min_size..=cfg.max_size);
            let h = r.random_range(cfg.min_size..=cfg.max_size);
            let b = Placed {
                x0: r.random_range(0..=cfg.width - w),
                y0: r.random_range(0..=cfg.height - h),
                w,
                h,
            };
            if placed.iter().all(|o| b.clear_of(o, cfg.margin)) {
                slot = Some(b);
                break;
            }
        }
        let b = slot.ok_or(Error::Infeasible {
            object: obj,
            retries: cfg.retries,
        })?;
        let class = r.random_range(1..=cfg.classes) as u32;
        let inside = shape_fn(cfg.shapes, b, &mut r);
        for y in b.y0..b.y0 + b.h {
            for x in b.x0..b.x0 + b.w {
                if inside(x, y) {
                    instances.set(x, y, obj as u32 + 1);
                    labels.set(x, y, class);
                }
            }
        }
        placed.push(b);
        object_class.push(class);
    }
    let cost = build_cost(cfg, &labels);
    Ok(Scene {
        config: cfg.clone(),
        labels,
        instances,
        object_class,
        cost,
    })
}

/// Largest object count drawn for suite scenes.
pub const SUITE_MAX_OBJECTS: usize = 12;

/// Configuration of scene `index` in a suite: its own seed and an object
/// count in `1..=SUITE_MAX_OBJECTS`, both drawn from the scene's stream.
pub fn suite_scene_config(base: &SceneConfig, suite_seed: u64, index: usize) -> SceneConfig {
    let mut r = rng::scene_stream(suite_seed, index, purpose::SCENE);
    let seed = rand::RngCore::next_u64(&mut r);
    let n_objects = r.random_range(1..=SUITE_MAX_OBJECTS);
    SceneConfig {
        seed,
        n_objects,
        ..base.clone()
    }
}

/// `n` scenes generated in parallel; the result does not depend on the
/// number of threads.
pub fn gen_suite(base: &SceneConfig, suite_seed: u64, n: usize) -> Result<Vec<Scene>> {
    (0..n)
        .into_par_iter()
        .map(|i| gen_scene(&suite_scene_config(base, suite_seed, i)))
        .collect()
}
