use super::head::{backward_cached, forward_cached, HeadOutput, TsppHeadParams};
use super::{CostMap, ProbabilityGrid};
use crate::error::{Error, Result};
use crate::mask::LabelMap;
use crate::scalar::{softmax_in_place, Scalar};

/// Loss value, its two terms, and its gradient with respect to the head outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct LossTerms<T> {
    pub loss: T,
    pub ce: T,
    pub mse: T,
    /// Cells that entered the cross-entropy mean.
    pub ce_cells: usize,
    /// Set when every target cell is background, so the CE term is 0.
    pub no_foreground: bool,
    pub d_pred: Vec<T>,
    pub d_logits: Vec<T>,
}

/// `L = L_ce + lambda_mse * L_mse`.
///
/// `L_mse` is the mean squared error between predicted and target
/// probabilities over all cells. `L_ce` is the mean cross-entropy of the
/// softmaxed mask logits against `labels` (class id `k` selects logit `k - 1`),
/// over foreground cells only.
pub fn tspp_loss<T: Scalar>(
    out: &HeadOutput<T>,
    target: &ProbabilityGrid<T>,
    labels: &LabelMap,
    lambda_mse: T,
) -> Result<LossTerms<T>> {
    let (h, w, kn) = (out.pred.grid_h, out.pred.grid_w, out.classes);
    if (target.grid_h, target.grid_w) != (h, w) || labels.dims() != (w, h) {
        return Err(Error::Shape(format!(
            "prediction {h}x{w}, target {}x{}, labels {}x{}",
            target.grid_h,
            target.grid_w,
            labels.height(),
            labels.width()
        )));
    }
    if lambda_mse < T::zero() {
        return Err(Error::Config("lambda_mse must be non-negative".into()));
    }
    if let Some(&bad) = labels.labels().iter().find(|&&l| l as usize > kn) {
        return Err(Error::Shape(format!("label {bad} exceeds {kn} classes")));
    }

    let n = T::of_usize(h * w);
    let mut mse = T::zero();
    let mut d_pred = vec![T::zero(); h * w];
    for i in 0..h * w {
        let diff = out.pred.probs[i] - target.probs[i];
        mse += diff * diff;
        d_pred[i] = lambda_mse * T::lit(2.0) * diff / n;
    }
    mse /= n;

    let fg = labels.labels().iter().filter(|&&l| l != 0).count();
    let mut ce = T::zero();
    let mut d_logits = vec![T::zero(); kn * h * w];
    if fg > 0 {
        let inv = T::one() / T::of_usize(fg);
        let mut probs = vec![T::zero(); kn];
        for y in 0..h {
            for x in 0..w {
                let label = labels.get(x, y) as usize;
                if label == 0 {
                    continue;
                }
                for (k, p) in probs.iter_mut().enumerate() {
                    *p = out.mask_logits[(k * h + y) * w + x];
                }
                let top = (0..kn).fold(0, |b, k| if probs[k] > probs[b] { k } else { b });
                let max = probs[top];
                let rest: T = (0..kn).filter(|&k| k != top).map(|k| (probs[k] - max).exp()).sum();
                ce += (max - probs[label - 1]) + rest.ln_1p();
                softmax_in_place(&mut probs);
                for (k, &p) in probs.iter().enumerate() {
                    let onehot = if k == label - 1 { T::one() } else { T::zero() };
                    d_logits[(k * h + y) * w + x] = (p - onehot) * inv;
                }
            }
        }
        ce *= inv;
    }

    Ok(LossTerms {
        loss: ce + lambda_mse * mse,
        ce,
        mse,
        ce_cells: fg,
        no_foreground: fg == 0,
        d_pred,
        d_logits,
    })
}

/// Loss of the head on one cost map plus gradients with respect to the head
/// parameters and the cost map.
pub fn loss_and_grad<T: Scalar>(
    s: &CostMap<T>,
    p: &TsppHeadParams<T>,
    target: &ProbabilityGrid<T>,
    labels: &LabelMap,
    lambda_mse: T,
) -> Result<(LossTerms<T>, TsppHeadParams<T>, Vec<T>)> {
    let (out, cache) = forward_cached(s, p)?;
    let terms = tspp_loss(&out, target, labels, lambda_mse)?;
    let (grads, d_cost) = backward_cached(s, p, &cache, &terms.d_pred, &terms.d_logits)?;
    Ok((terms, grads, d_cost))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn output(pred: Vec<f64>, logits: Vec<f64>, classes: usize, h: usize, w: usize) -> HeadOutput<f64> {
        HeadOutput {
            pred: ProbabilityGrid::from_raw(h, w, pred).unwrap(),
            mask_logits: logits,
            classes,
        }
    }

    #[test]
    fn perfect_prediction_tends_to_zero() {
        let labels = LabelMap::new(2, 1, vec![1, 2]).unwrap();
        let target = ProbabilityGrid::from_raw(1, 2, vec![0.3, 0.7]).unwrap();
        let mut last = f64::INFINITY;
        for scale in [1.0, 5.0, 20.0, 60.0] {
            let out = output(vec![0.3, 0.7], vec![scale, -scale, -scale, scale], 2, 1, 2);
            let t = tspp_loss(&out, &target, &labels, 0.5).unwrap();
            assert_eq!(t.mse, 0.0);
            assert!(t.loss < last);
            last = t.loss;
        }
        assert!(last < 1e-40);
    }

    #[test]
    fn known_values() {
        // uniform logits over 2 classes: ce = ln 2
        let labels = LabelMap::new(2, 1, vec![0, 1]).unwrap();
        let target = ProbabilityGrid::from_raw(1, 2, vec![0.0, 1.0]).unwrap();
        let out = output(vec![0.5, 0.5], vec![0.0; 4], 2, 1, 2);
        let t = tspp_loss(&out, &target, &labels, 0.5).unwrap();
        assert!((t.ce - 2f64.ln()).abs() < 1e-15);
        assert_eq!(t.mse, 0.25);
        assert!((t.loss - (2f64.ln() + 0.125)).abs() < 1e-15);
        assert_eq!(t.ce_cells, 1);
        // background cell carries no logit gradient
        assert_eq!(t.d_logits[0], 0.0);
        assert_eq!(t.d_logits[2], 0.0);
    }

    #[test]
    fn all_background_flags_and_zero_ce() {
        let labels = LabelMap::zeros(3, 2);
        let target = ProbabilityGrid::<f64>::zeros(2, 3);
        let out = output(vec![0.1; 6], vec![1.0; 12], 2, 2, 3);
        let t = tspp_loss(&out, &target, &labels, 1.0).unwrap();
        assert!(t.no_foreground);
        assert_eq!(t.ce, 0.0);
        assert!(t.d_logits.iter().all(|&d| d == 0.0));
    }

    #[test]
    fn shape_and_label_errors() {
        let out = output(vec![0.1; 6], vec![1.0; 12], 2, 2, 3);
        let target = ProbabilityGrid::<f64>::zeros(2, 3);
        assert!(tspp_loss(&out, &target, &LabelMap::zeros(2, 3), 1.0).is_err());
        let labels = LabelMap::new(3, 2, vec![3, 0, 0, 0, 0, 0]).unwrap();
        assert!(tspp_loss(&out, &target, &labels, 1.0).is_err());
        assert!(tspp_loss(&out, &target, &LabelMap::zeros(3, 2), -1.0).is_err());
    }
}
