use super::{check_masks, FeatureMap, MaskEmbeddings};
use crate::error::{Error, Result};
use crate::mask::MaskSet;
use crate::scalar::{softmax_in_place, Scalar};

/// Mean feature vector under each mask.
pub fn mask_pool<T: Scalar>(f: &FeatureMap<T>, masks: &MaskSet) -> Result<MaskEmbeddings<T>> {
    check_masks(f, masks)?;
    let d = f.channels;
    let mut vectors = vec![T::zero(); masks.len() * d];
    let mut empty = vec![false; masks.len()];
    for (k, m) in masks.iter().enumerate() {
        let area = m.area();
        if area == 0 {
            empty[k] = true;
            continue;
        }
        let row = &mut vectors[k * d..(k + 1) * d];
        for (x, y) in m.iter_set() {
            let cell = y * f.w + x;
            for (c, r) in row.iter_mut().enumerate() {
                *r += f.at(c, cell);
            }
        }
        let inv = T::of_usize(area);
        for r in row.iter_mut() {
            *r /= inv;
        }
    }
    Ok(MaskEmbeddings {
        n_masks: masks.len(),
        dim: d,
        vectors,
        empty,
    })
}

/// Adds to every cell the embeddings of all masks containing it.
pub fn intra_mask_context<T: Scalar>(
    f: &FeatureMap<T>,
    masks: &MaskSet,
    emb: &MaskEmbeddings<T>,
) -> Result<FeatureMap<T>> {
    check_masks(f, masks)?;
    if emb.n_masks != masks.len() || emb.dim != f.channels {
        return Err(Error::Shape(format!(
            "{} embeddings of dim {} for {} masks and {} channels",
            emb.n_masks,
            emb.dim,
            masks.len(),
            f.channels
        )));
    }
    let mut out = f.clone();
    for (k, m) in masks.iter().enumerate() {
        let row = emb.row(k);
        for (x, y) in m.iter_set() {
            let cell = y * f.w + x;
            for (c, &r) in row.iter().enumerate() {
                *out.at_mut(c, cell) += r;
            }
        }
    }
    Ok(out)
}

fn check_dim<T>(q: &FeatureMap<T>, emb: &MaskEmbeddings<T>) -> Result<()> {
    if q.channels != emb.dim {
        return Err(Error::Shape(format!(
            "query has {} channels, embeddings {}",
            q.channels, emb.dim
        )));
    }
    Ok(())
}

/// Attention weights of one query over the active keys.
fn weights<T: Scalar>(q: &[T], emb: &MaskEmbeddings<T>, keys: &[usize], scale: T, out: &mut Vec<T>) {
    out.clear();
    for &k in keys {
        let s: T = q.iter().zip(emb.row(k)).map(|(&a, &b)| a * b).sum();
        out.push(s * scale);
    }
    softmax_in_place(out);
}

/// Single-head scaled dot-product attention from every cell to the mask
/// embeddings, which serve as both keys and values.
///
/// Returns the attended map and whether there were no keys at all, in which
/// case the map is zero.
pub fn cross_attention<T: Scalar>(
    query: &FeatureMap<T>,
    emb: &MaskEmbeddings<T>,
) -> Result<(FeatureMap<T>, bool)> {
    check_dim(query, emb)?;
    let keys = emb.active();
    let mut out = FeatureMap::zeros(query.channels, query.h, query.w);
    if keys.is_empty() {
        return Ok((out, true));
    }
    let scale = T::one() / T::of_usize(emb.dim).sqrt();
    let mut a = Vec::with_capacity(keys.len());
    for cell in 0..query.cells() {
        let q = query.column(cell);
        weights(&q, emb, &keys, scale, &mut a);
        for (&k, &ak) in keys.iter().zip(&a) {
            for (c, &v) in emb.row(k).iter().enumerate() {
                *out.at_mut(c, cell) += ak * v;
            }
        }
    }
    Ok((out, false))
}

/// Gradients of `cross_attention` with respect to the query map and the
/// embedding rows. Rows of empty masks receive zero gradient.
pub fn cross_attention_backward<T: Scalar>(
    query: &FeatureMap<T>,
    emb: &MaskEmbeddings<T>,
    d_out: &FeatureMap<T>,
) -> Result<(FeatureMap<T>, Vec<T>)> {
    check_dim(query, emb)?;
    if !d_out.same_shape(query) {
        return Err(Error::Shape("output gradient shape differs from query".into()));
    }
    let d = emb.dim;
    let keys = emb.active();
    let mut dq = FeatureMap::zeros(query.channels, query.h, query.w);
    let mut de = vec![T::zero(); emb.vectors.len()];
    if keys.is_empty() {
        return Ok((dq, de));
    }
    let scale = T::one() / T::of_usize(d).sqrt();
    let mut a = Vec::with_capacity(keys.len());
    let mut da = vec![T::zero(); keys.len()];
    for cell in 0..query.cells() {
        let q = query.column(cell);
        let g = d_out.column(cell);
        weights(&q, emb, &keys, scale, &mut a);
        for (j, &k) in keys.iter().enumerate() {
            let row = emb.row(k);
            da[j] = g.iter().zip(row).map(|(&x, &y)| x * y).sum();
            // value path
            for c in 0..d {
                de[k * d + c] += a[j] * g[c];
            }
        }
        let mean: T = a.iter().zip(&da).map(|(&x, &y)| x * y).sum();
        for (j, &k) in keys.iter().enumerate() {
            let ds = a[j] * (da[j] - mean) * scale;
            for c in 0..d {
                *dq.at_mut(c, cell) += ds * emb.vectors[k * d + c];
                de[k * d + c] += ds * q[c];
            }
        }
    }
    Ok((dq, de))
}

/// Intermediate and final maps of the low-frequency path.
#[derive(Clone, Debug, PartialEq)]
pub struct LowFreqOutput<T> {
    /// `intra + inter`
    pub output: FeatureMap<T>,
    pub intra: FeatureMap<T>,
    pub inter: FeatureMap<T>,
    pub embeddings: MaskEmbeddings<T>,
    /// No non-empty mask was available as an attention key.
    pub no_keys: bool,
}

/// Mask contextual representation: intra-mask context plus cross-attention
/// from the intra-mask context to the pooled embeddings.
pub fn low_freq_inject<T: Scalar>(f: &FeatureMap<T>, masks: &MaskSet) -> Result<LowFreqOutput<T>> {
    let embeddings = mask_pool(f, masks)?;
    let intra = intra_mask_context(f, masks, &embeddings)?;
    let (inter, no_keys) = cross_attention(&intra, &embeddings)?;
    let output = intra.add(&inter)?;
    Ok(LowFreqOutput {
        output,
        intra,
        inter,
        embeddings,
        no_keys,
    })
}

/// Gradient of `low_freq_inject(f, masks).output` with respect to `f`.
pub fn low_freq_backward<T: Scalar>(
    f: &FeatureMap<T>,
    masks: &MaskSet,
    d_out: &FeatureMap<T>,
) -> Result<FeatureMap<T>> {
    if !d_out.same_shape(f) {
        return Err(Error::Shape("output gradient shape differs from input".into()));
    }
    let fwd = low_freq_inject(f, masks)?;
    let d = f.channels;
    let (dq, mut de) = cross_attention_backward(&fwd.intra, &fwd.embeddings, d_out)?;
    let d_intra = d_out.add(&dq)?;

    // intra = f + sum_k [x in M_k] M_k
    let mut df = d_intra.clone();
    for (k, m) in masks.iter().enumerate() {
        for (x, y) in m.iter_set() {
            let cell = y * f.w + x;
            for c in 0..d {
                de[k * d + c] += d_intra.at(c, cell);
            }
        }
    }
    // M_k = mean of f under M_k
    for (k, m) in masks.iter().enumerate() {
        let area = m.area();
        if area == 0 {
            continue;
        }
        let inv = T::one() / T::of_usize(area);
        for (x, y) in m.iter_set() {
            let cell = y * f.w + x;
            for c in 0..d {
                *df.at_mut(c, cell) += de[k * d + c] * inv;
            }
        }
    }
    Ok(df)
}
