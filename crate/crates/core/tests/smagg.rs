use maskinject::harness::oracles::oracle_aggregate;
use maskinject::smagg::{aggregate, AggregateConfig, CompareAt};
use maskinject::{BinaryMask, MaskSet};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};

fn random_set(r: &mut impl Rng, n: usize, w: usize, h: usize) -> MaskSet {
    let masks = (0..n)
        .map(|_| {
            let (x0, y0) = (r.random_range(0..w), r.random_range(0..h));
            let (x1, y1) = (r.random_range(x0 + 1..=w), r.random_range(y0 + 1..=h));
            BinaryMask::rect(w, h, x0, y0, x1, y1)
        })
        .collect();
    MaskSet::new(w, h, masks).unwrap()
}

proptest! {
    #[test]
    fn agrees_with_oracle_at_mixed_resolution(
        seed in any::<u64>(),
        n_sam in 0usize..7,
        n_text in 0usize..4,
        alpha in 0.0f64..0.95,
        full in any::<bool>(),
    ) {
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let sam = random_set(&mut r, n_sam, 16, 16);
        let text = random_set(&mut r, n_text, 8, 8);
        let cfg = AggregateConfig {
            alpha,
            compare_at: if full { CompareAt::Full } else { CompareAt::Text },
            ..AggregateConfig::default()
        };
        let got = aggregate::<f64>(&sam, &text, &cfg).unwrap();
        let want = oracle_aggregate(&sam, &text, &cfg);
        prop_assert_eq!(got.masks.masks(), &want.masks[..]);
        prop_assert_eq!(&got.class_of, &want.class_of);
        prop_assert_eq!(got.masks.union(), sam.union());
        prop_assert!(got.len() <= sam.len());
    }
}

#[test]
fn alpha_outside_range_is_rejected() {
    let s = MaskSet::empty(4, 4);
    for alpha in [-0.1, 1.0, f64::NAN] {
        let cfg = AggregateConfig {
            alpha,
            ..AggregateConfig::default()
        };
        assert!(aggregate::<f64>(&s, &s, &cfg).is_err());
    }
}
