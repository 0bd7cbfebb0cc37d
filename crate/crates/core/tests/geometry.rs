use maskinject::geometry::{medial_skeleton, squared_distances, Reference};
use maskinject::harness::oracles::{oracle_edt, oracle_skeleton};
use maskinject::BinaryMask;
use proptest::prelude::*;

fn mask_strategy() -> impl Strategy<Value = BinaryMask> {
    (1usize..24, 1usize..24, 0.05f64..0.95, any::<u64>()).prop_map(|(w, h, p, seed)| {
        use rand::{Rng, SeedableRng};
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        BinaryMask::from_fn(w, h, |_, _| r.random_bool(p))
    })
}

proptest! {
    #[test]
    fn edt_matches_exhaustive_search(m in mask_strategy()) {
        for reference in [Reference::SetPixels, Reference::UnsetPixels] {
            let fast = squared_distances(&m, reference).ok();
            prop_assert_eq!(fast, oracle_edt(&m, reference));
        }
    }

    #[test]
    fn skeleton_matches_ridge_definition(m in mask_strategy()) {
        match medial_skeleton(&m) {
            Ok(s) => prop_assert_eq!(s, oracle_skeleton(&m)),
            Err(_) => prop_assert!(m.is_empty()),
        }
    }
}

#[test]
fn full_and_empty_masks() {
    let full = BinaryMask::full(5, 3);
    assert!(squared_distances(&full, Reference::UnsetPixels).is_err());
    assert!(squared_distances(&full, Reference::SetPixels).unwrap().iter().all(|&d| d == 0));
}
