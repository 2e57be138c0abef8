//! Central finite-difference checks of tape gradients.

use crate::error::Result;
use crate::models::{NetConfig, Network};
use crate::nn::{
    batchnorm, concat_channels, conv2d, maxpool2, pad2d, softmax_cross_entropy, upsample_bilinear2,
    BnMode, ConvSpec, PaddingMode, RunningStats,
};
use crate::rng::SplitMix64;
use crate::tape::{Tape, Var};
use crate::tensor::{Shape, Tensor};

/// Default finite-difference step.
pub const STEP: f64 = 1e-6;

/// Outcome of one check. `rel_err` is the largest absolute deviation
/// between analytic and numeric gradients divided by the largest numeric
/// gradient magnitude.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheck {
    pub max_abs_err: f64,
    pub scale: f64,
    pub rel_err: f64,
    pub evaluations: usize,
}

/// Compares the tape gradient of the scalar built by `f` with respect to
/// each of `inputs` against `(f(x + h) - f(x - h)) / 2h` per element.
/// `f` receives a fresh tape and one leaf per input on every call.
pub fn check<F>(inputs: &[Tensor], h: f64, f: F) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.leaf(x.clone())).collect();
        let y = f(&mut tape, &vars)?;
        Ok(tape.value(y).item())
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.leaf(x.clone())).collect();
    let y = f(&mut tape, &vars)?;
    let mut grads = tape.backward(y)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, x)| grads.take(v).unwrap_or_else(|| Tensor::zeros(x.shape())))
        .collect();

    let mut work: Vec<Tensor> = inputs.to_vec();
    let (mut max_abs_err, mut scale, mut evaluations) = (0.0f64, 0.0f64, 0);
    for i in 0..inputs.len() {
        for j in 0..inputs[i].len() {
            let orig = inputs[i].data()[j];
            work[i].data_mut()[j] = orig + h;
            let plus = eval(&work)?;
            work[i].data_mut()[j] = orig - h;
            let minus = eval(&work)?;
            work[i].data_mut()[j] = orig;
            evaluations += 2;
            let numeric = (plus - minus) / (2.0 * h);
            max_abs_err = max_abs_err.max((numeric - analytic[i].data()[j]).abs());
            scale = scale.max(numeric.abs());
        }
    }
    Ok(GradCheck {
        max_abs_err,
        scale,
        rel_err: max_abs_err / scale.max(f64::MIN_POSITIVE),
        evaluations,
    })
}

/// `sum(y * r)` for a fixed random `r` of `y`'s shape: reduces a tensor
/// output to a scalar whose gradient exercises every output element.
pub fn project(tape: &mut Tape, y: Var, seed: u64) -> Result<Var> {
    let shape = tape.value(y).shape();
    let mut rng = SplitMix64::new(seed);
    let r: Vec<f64> = (0..shape.numel())
        .map(|_| rng.uniform_range(-1.0, 1.0))
        .collect();
    let r = tape.constant(Tensor::from_vec(shape, r)?);
    let p = tape.mul(y, r)?;
    tape.sum(p)
}

/// Random tensor with entries uniform in `[-1, 1]` and magnitude at least
/// `margin`, keeping inputs off kinks such as ReLU's origin.
pub fn random_tensor(shape: crate::tensor::Shape, rng: &mut SplitMix64, margin: f64) -> Tensor {
    let data = (0..shape.numel())
        .map(|_| {
            let m = rng.uniform_range(margin, 1.0);
            if rng.uniform() < 0.5 {
                -m
            } else {
                m
            }
        })
        .collect();
    Tensor::from_parts(shape, data)
}

/// Like [`check`] for a whole network: the scalar is the train-mode
/// cross-entropy of `net` on `(x, target)`, differentiated with respect to
/// every parameter and the input.
pub fn check_network(net: &Network, x: &Tensor, target: &[u8], h: f64) -> Result<GradCheck> {
    let loss = |net: &Network, x: &Tensor| -> Result<f64> {
        let mut net = net.clone();
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let (logits, _) = net.forward(&mut tape, xv, BnMode::Train, false)?;
        let l = softmax_cross_entropy(&mut tape, logits, target)?;
        Ok(tape.value(l).item())
    };

    let mut work = net.clone();
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let (logits, leaves) = work.forward(&mut tape, xv, BnMode::Train, true)?;
    let l = softmax_cross_entropy(&mut tape, logits, target)?;
    let mut grads = tape.backward(l)?;
    let dx = grads.take(xv).unwrap_or_else(|| Tensor::zeros(x.shape()));
    let dparams: Vec<Tensor> = leaves
        .iter()
        .map(|&v| grads.take(v).expect("parameter leaf"))
        .collect();

    let (mut max_abs_err, mut scale, mut evaluations) = (0.0f64, 0.0f64, 0);
    let mut record = |numeric: f64, analytic: f64| {
        max_abs_err = max_abs_err.max((numeric - analytic).abs());
        scale = scale.max(numeric.abs());
    };
    let mut xw = x.clone();
    for j in 0..x.len() {
        let orig = x.data()[j];
        xw.data_mut()[j] = orig + h;
        let plus = loss(net, &xw)?;
        xw.data_mut()[j] = orig - h;
        let minus = loss(net, &xw)?;
        xw.data_mut()[j] = orig;
        evaluations += 2;
        record((plus - minus) / (2.0 * h), dx.data()[j]);
    }
    let mut probe = net.clone();
    for (p, analytic) in dparams.iter().enumerate() {
        for j in 0..analytic.len() {
            let orig = probe.parameters_mut()[p].1.data()[j];
            probe.parameters_mut()[p].1.data_mut()[j] = orig + h;
            let plus = loss(&probe, x)?;
            probe.parameters_mut()[p].1.data_mut()[j] = orig - h;
            let minus = loss(&probe, x)?;
            probe.parameters_mut()[p].1.data_mut()[j] = orig;
            evaluations += 2;
            record((plus - minus) / (2.0 * h), analytic.data()[j]);
        }
    }
    Ok(GradCheck {
        max_abs_err,
        scale,
        rel_err: max_abs_err / scale.max(f64::MIN_POSITIVE),
        evaluations,
    })
}

/// Random class map of `n * h * w` pixels over `classes` labels.
pub fn random_labels(len: usize, classes: usize, rng: &mut SplitMix64) -> Vec<u8> {
    (0..len).map(|_| rng.below(classes) as u8).collect()
}

/// Checks every differentiable operation once on random inputs drawn from
/// `seed`, returning one named result per case.
pub fn suite(seed: u64) -> Result<Vec<(String, GradCheck)>> {
    let mut rng = SplitMix64::derive(seed, &[0x4752_4144]);
    let mut out = Vec::new();
    let mut case = |name: &str, r: GradCheck| out.push((name.to_string(), r));

    let x = random_tensor(Shape::new(2, 3, 6, 5), &mut rng, 0.0);
    let w3 = random_tensor(Shape::new(4, 3, 3, 3), &mut rng, 0.0);
    let w1 = random_tensor(Shape::new(4, 3, 1, 1), &mut rng, 0.0);
    let b = random_tensor(Shape::new(1, 4, 1, 1), &mut rng, 0.0);
    let convs = [
        ("conv2d_zero", &w3, ConvSpec::same(1, PaddingMode::Zero)),
        (
            "conv2d_reflect",
            &w3,
            ConvSpec::same(1, PaddingMode::Reflect),
        ),
        ("conv2d_none", &w3, ConvSpec::same(0, PaddingMode::None)),
        (
            "conv2d_reflect_pad2",
            &w3,
            ConvSpec::same(2, PaddingMode::Reflect),
        ),
        (
            "conv2d_stride2",
            &w3,
            ConvSpec::new(2, 1, PaddingMode::Reflect),
        ),
        ("conv2d_1x1", &w1, ConvSpec::same(0, PaddingMode::Zero)),
    ];
    for (i, (name, w, spec)) in convs.into_iter().enumerate() {
        let r = check(&[x.clone(), w.clone(), b.clone()], STEP, |t, v| {
            let y = conv2d(t, v[0], v[1], v[2], spec)?;
            project(t, y, seed ^ i as u64)
        })?;
        case(name, r);
    }
    for (name, mode) in [
        ("pad2d_zero", PaddingMode::Zero),
        ("pad2d_reflect", PaddingMode::Reflect),
    ] {
        let r = check(std::slice::from_ref(&x), STEP, |t, v| {
            let y = pad2d(t, v[0], 2, mode)?;
            project(t, y, seed)
        })?;
        case(name, r);
    }

    let gamma = random_tensor(Shape::new(1, 3, 1, 1), &mut rng, 0.2);
    let beta = random_tensor(Shape::new(1, 3, 1, 1), &mut rng, 0.0);
    let r = check(&[x.clone(), gamma, beta], STEP, |t, v| {
        let (mut mean, mut var) = (vec![0.0; 3], vec![1.0; 3]);
        let stats = RunningStats {
            mean: &mut mean,
            var: &mut var,
            momentum: crate::nn::DEFAULT_MOMENTUM,
            eps: crate::nn::DEFAULT_EPS,
        };
        let y = batchnorm(t, v[0], v[1], v[2], stats, BnMode::Train)?;
        project(t, y, seed)
    })?;
    case("batchnorm_train", r);

    let even = random_tensor(Shape::new(2, 2, 6, 4), &mut rng, 0.0);
    let r = check(std::slice::from_ref(&even), STEP, |t, v| {
        let y = maxpool2(t, v[0])?;
        project(t, y, seed)
    })?;
    case("maxpool2", r);

    let r = check(std::slice::from_ref(&even), STEP, |t, v| {
        let y = upsample_bilinear2(t, v[0])?;
        project(t, y, seed)
    })?;
    case("upsample_bilinear2", r);

    let other = random_tensor(Shape::new(2, 3, 6, 4), &mut rng, 0.0);
    let r = check(&[even.clone(), other], STEP, |t, v| {
        let y = concat_channels(t, v[0], v[1])?;
        project(t, y, seed)
    })?;
    case("concat_channels", r);

    let r = check(std::slice::from_ref(&even), STEP, |t, v| {
        let y = t.relu(v[0])?;
        project(t, y, seed)
    })?;
    case("relu", r);

    let logits = random_tensor(Shape::new(2, 4, 3, 3), &mut rng, 0.0);
    let labels = random_labels(2 * 9, 4, &mut rng);
    let r = check(std::slice::from_ref(&logits), STEP, |t, v| {
        softmax_cross_entropy(t, v[0], &labels)
    })?;
    case("softmax_cross_entropy", r);

    for (name, mode) in [
        ("small_cnn_zero", PaddingMode::Zero),
        ("small_cnn_reflect", PaddingMode::Reflect),
    ] {
        let net = Network::new(NetConfig::small_cnn(3, 1.0 / 16.0, mode), seed)?;
        let input = random_tensor(Shape::new(2, 3, 5, 5), &mut rng, 0.0);
        let labels = random_labels(2 * 25, net.config.classes, &mut rng);
        case(name, check_network(&net, &input, &labels, STEP)?);
    }
    Ok(out)
}
