mod common;

use proptest::prelude::*;
use seglab::nn::{ConvSpec, PaddingMode};
use seglab::rng::SplitMix64;
use seglab::{Shape, Tensor};

#[test]
fn unpadded_conv_is_shift_equivariant() {
    for seed in 0..50 {
        let n = common::shift_case(seed).unwrap();
        assert!(n > 0);
    }
}

#[test]
fn paddings_agree_in_the_interior() {
    for seed in 0..50 {
        common::interior_case(seed).unwrap();
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn shift_equivariance_holds_for_any_seed(seed in any::<u64>()) {
        prop_assert!(common::shift_case(seed).is_ok());
    }

    #[test]
    fn interior_agreement_holds_for_any_seed(seed in any::<u64>()) {
        prop_assert!(common::interior_case(seed).is_ok());
    }

    #[test]
    fn conv_is_linear_in_the_input(seed in any::<u64>(), a in -2.0f64..2.0) {
        let mut rng = SplitMix64::new(seed);
        let mut draw = |s: Shape| {
            Tensor::from_vec(s, (0..s.numel()).map(|_| rng.uniform_range(-1.0, 1.0)).collect()).unwrap()
        };
        let x = draw(Shape::new(1, 2, 7, 6));
        let z = draw(Shape::new(1, 2, 7, 6));
        let w = draw(Shape::new(3, 2, 3, 3));
        let spec = ConvSpec::same(1, PaddingMode::Reflect);
        let mix = x.zip_map(&z, |p, q| a * p + q).unwrap();
        let lhs = common::conv(&mix, &w, spec);
        let (cx, cz) = (common::conv(&x, &w, spec), common::conv(&z, &w, spec));
        for ((l, p), q) in lhs.data().iter().zip(cx.data()).zip(cz.data()) {
            prop_assert!((l - (a * p + q)).abs() < 1e-12);
        }
    }
}
