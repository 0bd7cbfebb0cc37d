use crate::mask::{BinaryMask, MaskSet};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TextMaskConfig {
    /// A cell is background unless its best class logit exceeds this value.
    /// `None` assigns every cell to its argmax class.
    pub background_threshold: Option<f64>,
}

impl Default for TextMaskConfig {
    fn default() -> Self {
        TextMaskConfig {
            background_threshold: Some(0.0),
        }
    }
}

/// Per-cell argmax over the `K x h x w` logits (ties go to the lowest class),
/// one mask per class.
pub fn text_masks_from_logits<T: Scalar>(
    mask_logits: &[T],
    classes: usize,
    h: usize,
    w: usize,
    cfg: &TextMaskConfig,
) -> MaskSet {
    assert_eq!(mask_logits.len(), classes * h * w, "logit tensor size");
    let mut masks = vec![BinaryMask::new(w, h); classes];
    for y in 0..h {
        for x in 0..w {
            let mut best = 0;
            let mut best_v = T::neg_infinity();
            for k in 0..classes {
                let v = mask_logits[(k * h + y) * w + x];
                if v > best_v {
                    best = k;
                    best_v = v;
                }
            }
            let fg = match cfg.background_threshold {
                Some(t) => best_v > T::lit(t),
                None => classes > 0,
            };
            if fg {
                masks[best].set(x, y, true);
            }
        }
    }
    MaskSet::new_disjoint(w, h, masks).expect("argmax masks are disjoint")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn all_background() {
        let ms = text_masks_from_logits(&[-1.0f64; 3 * 4], 3, 2, 2, &TextMaskConfig::default());
        assert_eq!(ms.len(), 3);
        assert!(ms.iter().all(|m| m.is_empty()));
    }

    #[test]
    fn separable_two_class() {
        // class 0 wins on the left column, class 1 on the right
        let logits = [5.0f64, -5.0, 5.0, -5.0, -5.0, 5.0, -5.0, 5.0];
        let ms = text_masks_from_logits(&logits, 2, 2, 2, &TextMaskConfig::default());
        assert_eq!(ms.masks()[0], BinaryMask::rect(2, 2, 0, 0, 1, 2));
        assert_eq!(ms.masks()[1], BinaryMask::rect(2, 2, 1, 0, 2, 2));
        assert!(ms.is_disjoint());
    }

    /// Naive per-cell argmax with an explicit candidate list.
    fn naive(logits: &[f64], k: usize, h: usize, w: usize, t: Option<f64>) -> Vec<i64> {
        (0..h * w)
            .map(|cell| {
                let vals: Vec<f64> = (0..k).map(|c| logits[c * h * w + cell]).collect();
                let max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let first = vals.iter().position(|&v| v == max).unwrap() as i64;
                match t {
                    Some(t) if max <= t => -1,
                    _ => first,
                }
            })
            .collect()
    }

    fn assignment(ms: &MaskSet, h: usize, w: usize) -> Vec<i64> {
        (0..h * w)
            .map(|cell| {
                ms.iter()
                    .position(|m| m.get_index(cell))
                    .map_or(-1, |p| p as i64)
            })
            .collect()
    }

    proptest! {
        #[test]
        fn matches_naive_argmax(logits in proptest::collection::vec(-3.0f64..3.0, 4 * 5 * 6)) {
            for t in [Some(0.0), None] {
                let cfg = TextMaskConfig { background_threshold: t };
                let ms = text_masks_from_logits(&logits, 4, 5, 6, &cfg);
                prop_assert_eq!(assignment(&ms, 5, 6), naive(&logits, 4, 5, 6, t));
            }
        }

        #[test]
        fn argmax_is_shift_invariant(
            logits in proptest::collection::vec(-3.0f64..3.0, 3 * 4 * 4),
            shifts in proptest::collection::vec(-10.0f64..10.0, 16),
        ) {
            let mut shifted = logits.clone();
            for k in 0..3 {
                for cell in 0..16 {
                    shifted[k * 16 + cell] += shifts[cell];
                }
            }
            let cfg = TextMaskConfig { background_threshold: None };
            let a = text_masks_from_logits(&logits, 3, 4, 4, &cfg);
            let b = text_masks_from_logits(&shifted, 3, 4, 4, &cfg);
            prop_assert_eq!(a, b);
            // with a background threshold, cells that stay foreground keep their class
            let cfg = TextMaskConfig::default();
            let a = assignment(&text_masks_from_logits(&logits, 3, 4, 4, &cfg), 4, 4);
            let b = assignment(&text_masks_from_logits(&shifted, 3, 4, 4, &cfg), 4, 4);
            for (x, y) in a.iter().zip(&b) {
                if *x >= 0 && *y >= 0 {
                    prop_assert_eq!(x, y);
                }
            }
        }
    }
}
