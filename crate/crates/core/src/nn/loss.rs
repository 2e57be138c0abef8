use crate::error::{Error, Result};
use crate::tape::{Backward, Tape, Var};
use crate::tensor::Tensor;

struct CrossEntropyRule {
    /// Softmax probabilities, laid out like the logits.
    probs: Vec<f64>,
    target: Vec<u8>,
}

impl Backward for CrossEntropyRule {
    fn backward(
        &self,
        g: &Tensor,
        inputs: &[&Tensor],
        _: &Tensor,
        _: &[bool],
    ) -> Vec<Option<Tensor>> {
        let s = inputs[0].shape();
        let (k, plane) = (s.c(), s.plane());
        let scale = g.item() / (s.n() * plane) as f64;
        let mut d: Vec<f64> = self.probs.iter().map(|p| p * scale).collect();
        for n in 0..s.n() {
            for px in 0..plane {
                let t = self.target[n * plane + px] as usize;
                d[(n * k + t) * plane + px] -= scale;
            }
        }
        vec![Some(Tensor::from_parts(s, d))]
    }
}

/// Mean over all `N*H*W` pixels of `-log softmax(logits)[target]`.
///
/// `target` holds one class index per pixel in `(N, H, W)` order.
pub fn softmax_cross_entropy(tape: &mut Tape, logits: Var, target: &[u8]) -> Result<Var> {
    let lt = tape.value(logits);
    let s = lt.shape();
    let (k, plane) = (s.c(), s.plane());
    if target.len() != s.n() * plane {
        return Err(Error::shape(
            "softmax_cross_entropy",
            format!("{} targets for logits {s}", target.len()),
        ));
    }
    if let Some(bad) = target.iter().find(|&&t| t as usize >= k) {
        return Err(Error::invalid(
            "softmax_cross_entropy",
            format!("target class {bad} out of range for {k} classes"),
        ));
    }
    let d = lt.data();
    let mut probs = vec![0.0; d.len()];
    let mut total = 0.0;
    for n in 0..s.n() {
        for px in 0..plane {
            let at = |c: usize| (n * k + c) * plane + px;
            let max = (0..k).map(|c| d[at(c)]).fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for c in 0..k {
                let e = (d[at(c)] - max).exp();
                probs[at(c)] = e;
                z += e;
            }
            for c in 0..k {
                probs[at(c)] /= z;
            }
            let t = target[n * plane + px] as usize;
            total += z.ln() - (d[at(t)] - max);
        }
    }
    let loss = Tensor::scalar(total / (s.n() * plane) as f64);
    tape.record(
        loss,
        &[logits],
        CrossEntropyRule {
            probs,
            target: target.to_vec(),
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    fn loss_of(logits: Vec<f64>, shape: Shape, target: &[u8]) -> Result<f64> {
        let mut t = Tape::new();
        let l = t.constant(Tensor::from_vec(shape, logits).unwrap());
        let v = softmax_cross_entropy(&mut t, l, target)?;
        Ok(t.value(v).item())
    }

    #[test]
    fn uniform_logits_give_ln_k() {
        let v = loss_of(
            vec![0.3; 4 * 6],
            Shape::new(1, 4, 2, 3),
            &[0, 1, 2, 3, 0, 1],
        )
        .unwrap();
        assert!((v - 4f64.ln()).abs() < 1e-12);
        assert!((v - 1.386294).abs() < 1e-6);
    }

    #[test]
    fn loss_decreases_with_margin() {
        let mut prev = f64::INFINITY;
        for margin in [0.0, 1.0, 2.0, 5.0, 10.0, 20.0, 40.0] {
            let v = loss_of(vec![margin, 0.0, 0.0, 0.0], Shape::new(1, 4, 1, 1), &[0]).unwrap();
            assert!(v < prev || margin == 0.0);
            assert!(v >= 0.0);
            prev = v;
        }
        assert!(prev < 1e-15);
    }

    #[test]
    fn large_logits_stay_finite() {
        let v = loss_of(vec![1000.0, -1000.0], Shape::new(1, 2, 1, 1), &[1]).unwrap();
        assert!((v - 2000.0).abs() < 1e-9);
    }

    #[test]
    fn out_of_range_target_rejected() {
        assert!(matches!(
            loss_of(vec![0.0; 4], Shape::new(1, 4, 1, 1), &[4]),
            Err(Error::InvalidArgument { .. })
        ));
    }
}
