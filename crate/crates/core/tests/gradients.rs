mod common;

use seglab::gradcheck::{self, random_tensor, STEP};
use seglab::rng::SplitMix64;
use seglab::Shape;

#[test]
fn every_op_matches_central_differences_over_twenty_seeds() {
    let (name, seed, rel) = common::gradient_suite(0..20);
    assert!(rel <= 1e-4, "{name} seed {seed}: rel err {rel:e}");
}

#[test]
fn suite_covers_required_ops() {
    let names: Vec<String> = gradcheck::suite(0)
        .unwrap()
        .into_iter()
        .map(|(n, _)| n)
        .collect();
    for required in [
        "conv2d_zero",
        "conv2d_reflect",
        "conv2d_none",
        "batchnorm_train",
        "maxpool2",
        "upsample_bilinear2",
        "concat_channels",
        "relu",
        "softmax_cross_entropy",
        "small_cnn_zero",
    ] {
        assert!(names.iter().any(|n| n == required), "missing {required}");
    }
}

#[test]
fn composed_ops_chain_correctly() {
    let mut rng = SplitMix64::new(5);
    let a = random_tensor(Shape::new(1, 2, 4, 4), &mut rng, 0.05);
    let b = random_tensor(Shape::new(1, 2, 4, 4), &mut rng, 0.05);
    let r = gradcheck::check(&[a, b], STEP, |t, v| {
        let s = t.add(v[0], v[1])?;
        let p = t.mul(s, v[0])?;
        let q = t.scale(p, -0.5)?;
        let r = t.add_scalar(q, 0.25)?;
        let u = seglab::nn::upsample_bilinear2(t, r)?;
        let m = seglab::nn::maxpool2(t, u)?;
        gradcheck::project(t, m, 9)
    })
    .unwrap();
    assert!(r.rel_err <= 1e-4, "{r:?}");
}
