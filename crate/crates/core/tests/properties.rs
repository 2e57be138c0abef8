mod common;

use proptest::prelude::*;
use seglab::image::Mask;
use seglab::metrics::{dice, EmptyClass};

#[test]
fn position_planes_are_exact() {
    for (w, h, lambda) in [(256, 256, 1.0), (11, 5, 10.0), (64, 64, 256.0)] {
        let (ulps, ends) = common::pe_case(w, h, lambda);
        assert!(ulps <= 1.0, "({w},{h},{lambda}): {ulps} eps");
        assert!(ends, "({w},{h},{lambda}) endpoints");
    }
}

#[test]
fn degradation_moments_match_closed_form() {
    let ((gm, gv), (sm, sv)) = common::degradation_moments(0.08, 50.0);
    assert!((gv / 6.4e-3 - 1.0).abs() <= 0.05, "gaussian var {gv}");
    assert!((gm - 0.5).abs() < 1e-3, "gaussian mean {gm}");
    assert!((sv / 1.0e-2 - 1.0).abs() <= 0.05, "shot var {sv}");
    assert!((sm / 0.5 - 1.0).abs() <= 0.005, "shot mean {sm}");
}

#[test]
fn dice_matches_pixel_count_oracle() {
    assert_eq!(common::dice_oracle_mismatches(), 0);
}

fn masks() -> impl Strategy<Value = (Vec<u8>, Vec<u8>)> {
    (
        proptest::collection::vec(0u8..4, 36),
        proptest::collection::vec(0u8..4, 36),
    )
}

proptest! {
    #[test]
    fn dice_is_symmetric_and_bounded((p, g) in masks()) {
        let (p, g) = (Mask::new(6, 6, p).unwrap(), Mask::new(6, 6, g).unwrap());
        let a = dice(&p, &g, 4, EmptyClass::One).unwrap();
        let b = dice(&g, &p, 4, EmptyClass::One).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert!((0.0..=1.0).contains(&a.mean));
    }

    #[test]
    fn dice_of_a_mask_with_itself_is_one((p, _) in masks()) {
        let p = Mask::new(6, 6, p).unwrap();
        prop_assert_eq!(dice(&p, &p, 4, EmptyClass::One).unwrap().mean, 1.0);
    }

    #[test]
    fn dice_agrees_with_oracle((p, g) in masks()) {
        let oracle = common::dice_oracle(&p, &g, 4);
        let d = dice(&Mask::new(6, 6, p).unwrap(), &Mask::new(6, 6, g).unwrap(), 4, EmptyClass::Skip).unwrap();
        prop_assert_eq!(d.per_class, oracle);
    }
}
