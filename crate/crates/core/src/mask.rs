//! Binary masks, mask sets and label maps.
//!
//! Masks are packed row-major bit grids. Every operation here is pure and
//! works on immutable inputs.

use std::collections::{BTreeMap, VecDeque};

use crate::error::{Error, Result};

const WORD: usize = 64;

/// Row-major bit grid; a set bit means the pixel is inside the mask.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    words: Vec<u64>,
}

impl std::fmt::Debug for BinaryMask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "BinaryMask {}x{} (area {})", self.width, self.height, self.area())?;
        if self.width * self.height <= 64 * 64 {
            for y in 0..self.height {
                let row: String = (0..self.width)
                    .map(|x| if self.get(x, y) { '#' } else { '.' })
                    .collect();
                writeln!(f, "  {row}")?;
            }
        }
        Ok(())
    }
}

impl BinaryMask {
    pub fn new(width: usize, height: usize) -> Self {
        let n = width * height;
        BinaryMask {
            width,
            height,
            words: vec![0; n.div_ceil(WORD)],
        }
    }

    pub fn full(width: usize, height: usize) -> Self {
        let mut m = Self::new(width, height);
        for w in m.words.iter_mut() {
            *w = !0;
        }
        m.clear_tail();
        m
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut m = Self::new(width, height);
        for y in 0..height {
            for x in 0..width {
                if f(x, y) {
                    m.set(x, y, true);
                }
            }
        }
        m
    }

    /// Builds a mask from a row-major slice of booleans.
    pub fn from_bools(width: usize, height: usize, bits: &[bool]) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::Shape(format!(
                "{} bits for a {width}x{height} mask",
                bits.len()
            )));
        }
        Ok(Self::from_fn(width, height, |x, y| bits[y * width + x]))
    }

    /// Axis-aligned filled rectangle `[x0, x1) x [y0, y1)`, clipped to the canvas.
    pub fn rect(width: usize, height: usize, x0: usize, y0: usize, x1: usize, y1: usize) -> Self {
        Self::from_fn(width, height, |x, y| x >= x0 && x < x1 && y >= y0 && y < y1)
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    /// Number of pixels, i.e. the length of the bit grid.
    #[inline]
    pub fn len(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        debug_assert!(x < self.width && y < self.height);
        self.get_index(y * self.width + x)
    }

    #[inline]
    pub fn get_index(&self, i: usize) -> bool {
        self.words[i / WORD] >> (i % WORD) & 1 == 1
    }

    /// Bounds-checked read; out-of-canvas pixels read as unset.
    #[inline]
    pub fn get_signed(&self, x: isize, y: isize) -> bool {
        x >= 0
            && y >= 0
            && (x as usize) < self.width
            && (y as usize) < self.height
            && self.get(x as usize, y as usize)
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        debug_assert!(x < self.width && y < self.height);
        self.set_index(y * self.width + x, v)
    }

    #[inline]
    pub fn set_index(&mut self, i: usize, v: bool) {
        let bit = 1u64 << (i % WORD);
        if v {
            self.words[i / WORD] |= bit;
        } else {
            self.words[i / WORD] &= !bit;
        }
    }

    /// Popcount of the bit grid.
    pub fn area(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    /// Set pixels in raster order as `(x, y)`.
    pub fn iter_set(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.width;
        self.words.iter().enumerate().flat_map(move |(wi, &word)| {
            let mut bits = word;
            std::iter::from_fn(move || {
                if bits == 0 {
                    return None;
                }
                let tz = bits.trailing_zeros() as usize;
                bits &= bits - 1;
                let i = wi * WORD + tz;
                Some((i % w, i / w))
            })
        })
    }

    /// Inclusive bounding box `(x0, y0, x1, y1)` of the set pixels.
    pub fn bbox(&self) -> Option<(usize, usize, usize, usize)> {
        let mut it = self.iter_set();
        let (x, y) = it.next()?;
        let init = (x, y, x, y);
        Some(it.fold(init, |(a, b, c, d), (x, y)| {
            (a.min(x), b.min(y), c.max(x), d.max(y))
        }))
    }

    pub fn complement(&self) -> Self {
        let mut m = BinaryMask {
            width: self.width,
            height: self.height,
            words: self.words.iter().map(|w| !w).collect(),
        };
        m.clear_tail();
        m
    }

    pub fn and(&self, other: &Self) -> Result<Self> {
        self.check_dims(other)?;
        Ok(self.zip_words(other, |a, b| a & b))
    }

    pub fn or(&self, other: &Self) -> Result<Self> {
        self.check_dims(other)?;
        Ok(self.zip_words(other, |a, b| a | b))
    }

    pub fn and_not(&self, other: &Self) -> Result<Self> {
        self.check_dims(other)?;
        Ok(self.zip_words(other, |a, b| a & !b))
    }

    pub(crate) fn or_assign(&mut self, other: &Self) {
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a |= b;
        }
    }

    /// True when every set pixel of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &Self) -> bool {
        self.dims() == other.dims()
            && self.words.iter().zip(&other.words).all(|(a, b)| a & !b == 0)
    }

    /// Copy of the rectangle `[x0, x0+w) x [y0, y0+h)`; pixels outside the
    /// canvas read as unset.
    pub fn crop(&self, x0: isize, y0: isize, w: usize, h: usize) -> Self {
        Self::from_fn(w, h, |x, y| self.get_signed(x0 + x as isize, y0 + y as isize))
    }

    pub fn to_bools(&self) -> Vec<bool> {
        (0..self.len()).map(|i| self.get_index(i)).collect()
    }

    fn zip_words(&self, other: &Self, f: impl Fn(u64, u64) -> u64) -> Self {
        BinaryMask {
            width: self.width,
            height: self.height,
            words: self.words.iter().zip(&other.words).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    fn check_dims(&self, other: &Self) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::dims(self.dims(), other.dims()));
        }
        Ok(())
    }

    fn clear_tail(&mut self) {
        let n = self.len();
        if !n.is_multiple_of(WORD) {
            if let Some(last) = self.words.last_mut() {
                *last &= (1u64 << (n % WORD)) - 1;
            }
        }
    }
}

/// Ordered collection of same-sized masks.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskSet {
    width: usize,
    height: usize,
    masks: Vec<BinaryMask>,
    disjoint: bool,
}

impl MaskSet {
    pub fn empty(width: usize, height: usize) -> Self {
        MaskSet {
            width,
            height,
            masks: Vec::new(),
            disjoint: true,
        }
    }

    /// Builds a set, checking dimensions. The disjoint flag is computed.
    pub fn new(width: usize, height: usize, masks: Vec<BinaryMask>) -> Result<Self> {
        for m in &masks {
            if m.dims() != (width, height) {
                return Err(Error::dims((width, height), m.dims()));
            }
        }
        let disjoint = pairwise_disjoint(&masks);
        Ok(MaskSet {
            width,
            height,
            masks,
            disjoint,
        })
    }

    /// Builds a set that must be disjoint.
    pub fn new_disjoint(width: usize, height: usize, masks: Vec<BinaryMask>) -> Result<Self> {
        let s = Self::new(width, height, masks)?;
        if !s.disjoint {
            return Err(Error::NotDisjoint);
        }
        Ok(s)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn masks(&self) -> &[BinaryMask] {
        &self.masks
    }

    pub fn into_masks(self) -> Vec<BinaryMask> {
        self.masks
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    pub fn is_disjoint(&self) -> bool {
        self.disjoint
    }

    pub fn get(&self, i: usize) -> Option<&BinaryMask> {
        self.masks.get(i)
    }

    pub fn iter(&self) -> std::slice::Iter<'_, BinaryMask> {
        self.masks.iter()
    }

    /// Per-pixel count of covering masks.
    pub fn coverage(&self) -> Vec<u32> {
        let mut cov = vec![0u32; self.width * self.height];
        for m in &self.masks {
            for (x, y) in m.iter_set() {
                cov[y * self.width + x] += 1;
            }
        }
        cov
    }

    pub fn union(&self) -> BinaryMask {
        union_all(&self.masks, self.width, self.height).expect("members share dimensions")
    }

    /// Applies a per-mask transformation that may change the canvas size.
    pub fn map(&self, f: impl Fn(&BinaryMask) -> Result<BinaryMask>) -> Result<MaskSet> {
        let masks = self.masks.iter().map(f).collect::<Result<Vec<_>>>()?;
        let (w, h) = masks.first().map(|m| m.dims()).unwrap_or((self.width, self.height));
        MaskSet::new(w, h, masks)
    }

    /// Label map with mask `i` written as label `i + 1`; fails if not disjoint.
    pub fn to_labelmap(&self) -> Result<LabelMap> {
        if !self.disjoint {
            return Err(Error::NotDisjoint);
        }
        let mut labels = vec![0u32; self.width * self.height];
        for (i, m) in self.masks.iter().enumerate() {
            for (x, y) in m.iter_set() {
                labels[y * self.width + x] = i as u32 + 1;
            }
        }
        LabelMap::new(self.width, self.height, labels)
    }
}

impl<'a> IntoIterator for &'a MaskSet {
    type Item = &'a BinaryMask;
    type IntoIter = std::slice::Iter<'a, BinaryMask>;

    fn into_iter(self) -> Self::IntoIter {
        self.masks.iter()
    }
}

fn pairwise_disjoint(masks: &[BinaryMask]) -> bool {
    let Some(first) = masks.first() else {
        return true;
    };
    let mut seen = BinaryMask::new(first.width, first.height);
    for m in masks {
        if seen.words.iter().zip(&m.words).any(|(a, b)| a & b != 0) {
            return false;
        }
        seen.or_assign(m);
    }
    true
}

/// Row-major non-negative labels; 0 is background.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    width: usize,
    height: usize,
    labels: Vec<u32>,
}

impl LabelMap {
    pub fn new(width: usize, height: usize, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != width * height {
            return Err(Error::Shape(format!(
                "{} labels for a {width}x{height} map",
                labels.len()
            )));
        }
        Ok(LabelMap {
            width,
            height,
            labels,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        LabelMap {
            width,
            height,
            labels: vec![0; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u32 {
        self.labels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, label: u32) {
        self.labels[y * self.width + x] = label;
    }

    pub fn max_label(&self) -> u32 {
        self.labels.iter().copied().max().unwrap_or(0)
    }

    /// Mask of pixels carrying `label`.
    pub fn mask_of(&self, label: u32) -> BinaryMask {
        BinaryMask::from_fn(self.width, self.height, |x, y| self.get(x, y) == label)
    }

    /// One mask per class id `1..=classes` (empty masks included), so mask `k`
    /// always corresponds to class `k + 1`.
    pub fn masks_per_class(&self, classes: usize) -> MaskSet {
        let mut masks = vec![BinaryMask::new(self.width, self.height); classes];
        for (i, &l) in self.labels.iter().enumerate() {
            if l >= 1 && (l as usize) <= classes {
                masks[l as usize - 1].set_index(i, true);
            }
        }
        MaskSet {
            width: self.width,
            height: self.height,
            masks,
            disjoint: true,
        }
    }

    /// Label sampled at the pixel containing each cell center of a
    /// `grid_w x grid_h` grid.
    pub fn sample_at_cell_centers(&self, grid_w: usize, grid_h: usize) -> LabelMap {
        let mut out = LabelMap::zeros(grid_w, grid_h);
        for i in 0..grid_h {
            let y = cell_center_pixel(i, grid_h, self.height);
            for j in 0..grid_w {
                let x = cell_center_pixel(j, grid_w, self.width);
                out.set(j, i, self.get(x, y));
            }
        }
        out
    }
}

/// Pixel index containing the center of cell `i` when `cells` cells span
/// `pixels` pixels.
#[inline]
pub fn cell_center_pixel(i: usize, cells: usize, pixels: usize) -> usize {
    // floor((i + 0.5) * pixels / cells) in exact integer arithmetic
    (((2 * i + 1) * pixels) / (2 * cells)).min(pixels.saturating_sub(1))
}

/// One mask per distinct nonzero label, ascending by label id.
pub fn masks_from_labelmap(lm: &LabelMap) -> MaskSet {
    let mut by_label: BTreeMap<u32, BinaryMask> = BTreeMap::new();
    for (i, &l) in lm.labels.iter().enumerate() {
        if l != 0 {
            by_label
                .entry(l)
                .or_insert_with(|| BinaryMask::new(lm.width, lm.height))
                .set_index(i, true);
        }
    }
    MaskSet {
        width: lm.width,
        height: lm.height,
        masks: by_label.into_values().collect(),
        disjoint: true,
    }
}

/// Distinct nonzero labels in ascending order (matches `masks_from_labelmap`).
pub fn label_ids(lm: &LabelMap) -> Vec<u32> {
    let mut ids: Vec<u32> = lm.labels.iter().copied().filter(|&l| l != 0).collect();
    ids.sort_unstable();
    ids.dedup();
    ids
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Connectivity {
    Four,
    #[default]
    Eight,
}

impl Connectivity {
    fn offsets(self) -> &'static [(isize, isize)] {
        match self {
            Connectivity::Four => &[(1, 0), (-1, 0), (0, 1), (0, -1)],
            Connectivity::Eight => &[
                (1, 0),
                (-1, 0),
                (0, 1),
                (0, -1),
                (1, 1),
                (1, -1),
                (-1, 1),
                (-1, -1),
            ],
        }
    }
}

/// Connected components ordered by their first pixel in raster order.
pub fn connected_components(m: &BinaryMask, connectivity: Connectivity) -> MaskSet {
    let (w, h) = m.dims();
    let mut visited = BinaryMask::new(w, h);
    let mut out = Vec::new();
    let mut queue = VecDeque::new();
    for (sx, sy) in m.iter_set() {
        if visited.get(sx, sy) {
            continue;
        }
        let mut comp = BinaryMask::new(w, h);
        visited.set(sx, sy, true);
        queue.push_back((sx, sy));
        while let Some((x, y)) = queue.pop_front() {
            comp.set(x, y, true);
            for &(dx, dy) in connectivity.offsets() {
                let (nx, ny) = (x as isize + dx, y as isize + dy);
                if m.get_signed(nx, ny) && !visited.get(nx as usize, ny as usize) {
                    visited.set(nx as usize, ny as usize, true);
                    queue.push_back((nx as usize, ny as usize));
                }
            }
        }
        out.push(comp);
    }
    MaskSet {
        width: w,
        height: h,
        masks: out,
        disjoint: true,
    }
}

/// Number of pixels set in both masks.
pub fn intersect_count(a: &BinaryMask, b: &BinaryMask) -> Result<usize> {
    a.check_dims(b)?;
    Ok(a.words
        .iter()
        .zip(&b.words)
        .map(|(x, y)| (x & y).count_ones() as usize)
        .sum())
}

/// Pixel-wise OR of all masks; an empty list gives an all-zero
/// `width x height` mask.
pub fn union_all(ms: &[BinaryMask], width: usize, height: usize) -> Result<BinaryMask> {
    let mut out = BinaryMask::new(width, height);
    for m in ms {
        if m.dims() != (width, height) {
            return Err(Error::dims((width, height), m.dims()));
        }
        out.or_assign(m);
    }
    Ok(out)
}

/// Majority-vote decimation: a cell is set iff at least half of its
/// `factor x factor` block is set.
pub fn downsample_mask(m: &BinaryMask, factor: usize) -> Result<BinaryMask> {
    if factor == 0 {
        return Err(Error::InvalidFactor(factor));
    }
    let (w, h) = m.dims();
    if w % factor != 0 || h % factor != 0 {
        return Err(Error::NonDivisible {
            factor,
            width: w,
            height: h,
        });
    }
    if factor == 1 {
        return Ok(m.clone());
    }
    let (ow, oh) = (w / factor, h / factor);
    let mut counts = vec![0usize; ow * oh];
    for (x, y) in m.iter_set() {
        counts[(y / factor) * ow + x / factor] += 1;
    }
    let block = factor * factor;
    Ok(BinaryMask::from_fn(ow, oh, |x, y| 2 * counts[y * ow + x] >= block))
}

/// Nearest-neighbour replication of each cell into a `factor x factor` block.
pub fn upsample_mask(m: &BinaryMask, factor: usize) -> Result<BinaryMask> {
    if factor == 0 {
        return Err(Error::InvalidFactor(factor));
    }
    if factor == 1 {
        return Ok(m.clone());
    }
    let (w, h) = m.dims();
    let mut out = BinaryMask::new(w * factor, h * factor);
    for (x, y) in m.iter_set() {
        for dy in 0..factor {
            for dx in 0..factor {
                out.set(x * factor + dx, y * factor + dy, true);
            }
        }
    }
    Ok(out)
}
