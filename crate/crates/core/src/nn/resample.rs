//! 2x2 max pooling, 2x bilinear upsampling and channel concatenation.

use crate::error::{Error, Result};
use crate::tape::{Backward, Tape, Var};
use crate::tensor::{Shape, Tensor};

struct MaxPoolRule {
    /// Flat input index of the winner for every output element.
    argmax: Vec<usize>,
}

impl Backward for MaxPoolRule {
    fn backward(
        &self,
        g: &Tensor,
        inputs: &[&Tensor],
        _: &Tensor,
        _: &[bool],
    ) -> Vec<Option<Tensor>> {
        let mut dx = vec![0.0; inputs[0].len()];
        for (&i, gv) in self.argmax.iter().zip(g.data()) {
            dx[i] += gv;
        }
        vec![Some(Tensor::from_parts(inputs[0].shape(), dx))]
    }
}

/// 2x2 max pooling with stride 2. Ties go to the first element of the
/// window in row-major order.
pub fn maxpool2(tape: &mut Tape, x: Var) -> Result<Var> {
    let xt = tape.value(x);
    let s = xt.shape();
    if !s.h().is_multiple_of(2) || !s.w().is_multiple_of(2) {
        return Err(Error::shape(
            "maxpool2",
            format!("extent must be even, got {s}"),
        ));
    }
    let (h, w) = (s.h(), s.w());
    let (ho, wo) = (h / 2, w / 2);
    let os = Shape::new(s.n(), s.c(), ho, wo);
    let mut out = Vec::with_capacity(os.numel());
    let mut argmax = Vec::with_capacity(os.numel());
    let d = xt.data();
    for plane in 0..s.n() * s.c() {
        let base = plane * h * w;
        for i in 0..ho {
            for j in 0..wo {
                let top = base + 2 * i * w + 2 * j;
                let mut best = top;
                for cand in [top + 1, top + w, top + w + 1] {
                    if d[cand] > d[best] {
                        best = cand;
                    }
                }
                out.push(d[best]);
                argmax.push(best);
            }
        }
    }
    tape.record(Tensor::from_parts(os, out), &[x], MaxPoolRule { argmax })
}

/// Interpolation taps for one output coordinate along an axis of `len`:
/// half-pixel centres, source coordinate `(o + 0.5) / 2 - 0.5` clamped to
/// `[0, len - 1]`.
fn taps(len: usize) -> Vec<(usize, usize, f64)> {
    (0..2 * len)
        .map(|o| {
            let src = ((o as f64 + 0.5) / 2.0 - 0.5).clamp(0.0, (len - 1) as f64);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(len - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

struct UpsampleRule;

impl Backward for UpsampleRule {
    fn backward(
        &self,
        g: &Tensor,
        inputs: &[&Tensor],
        _: &Tensor,
        _: &[bool],
    ) -> Vec<Option<Tensor>> {
        let s = inputs[0].shape();
        let (h, w) = (s.h(), s.w());
        let (ty, tx) = (taps(h), taps(w));
        let mut dx = vec![0.0; s.numel()];
        let gd = g.data();
        for plane in 0..s.n() * s.c() {
            let gi = &gd[plane * 4 * h * w..(plane + 1) * 4 * h * w];
            let di = &mut dx[plane * h * w..(plane + 1) * h * w];
            for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                    let gv = gi[oy * 2 * w + ox];
                    di[y0 * w + x0] += gv * (1.0 - fy) * (1.0 - fx);
                    di[y0 * w + x1] += gv * (1.0 - fy) * fx;
                    di[y1 * w + x0] += gv * fy * (1.0 - fx);
                    di[y1 * w + x1] += gv * fy * fx;
                }
            }
        }
        vec![Some(Tensor::from_parts(s, dx))]
    }
}

pub fn upsample_tensor(x: &Tensor) -> Tensor {
    let s = x.shape();
    let (h, w) = (s.h(), s.w());
    let (ty, tx) = (taps(h), taps(w));
    let os = Shape::new(s.n(), s.c(), 2 * h, 2 * w);
    if os.numel() == 0 {
        return Tensor::zeros(os);
    }
    let mut out = Vec::with_capacity(os.numel());
    for plane in x.data().chunks(h * w) {
        for &(y0, y1, fy) in &ty {
            for &(x0, x1, fx) in &tx {
                let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
                let bot = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
                out.push(top * (1.0 - fy) + bot * fy);
            }
        }
    }
    Tensor::from_parts(os, out)
}

/// Bilinear 2x upsampling, `(N,C,H,W) -> (N,C,2H,2W)`.
pub fn upsample_bilinear2(tape: &mut Tape, x: Var) -> Result<Var> {
    let out = upsample_tensor(tape.value(x));
    tape.record(out, &[x], UpsampleRule)
}

struct ConcatRule {
    split: usize,
}

impl Backward for ConcatRule {
    fn backward(
        &self,
        g: &Tensor,
        inputs: &[&Tensor],
        _: &Tensor,
        needs: &[bool],
    ) -> Vec<Option<Tensor>> {
        let (sa, sb) = (inputs[0].shape(), inputs[1].shape());
        let plane = sa.plane();
        let total = g.shape().c() * plane;
        let cut = self.split * plane;
        if total == 0 {
            return vec![
                needs[0].then(|| Tensor::zeros(sa)),
                needs[1].then(|| Tensor::zeros(sb)),
            ];
        }
        let mut da = needs[0].then(|| Vec::with_capacity(sa.numel()));
        let mut db = needs[1].then(|| Vec::with_capacity(sb.numel()));
        for chunk in g.data().chunks(total) {
            if let Some(da) = da.as_mut() {
                da.extend_from_slice(&chunk[..cut]);
            }
            if let Some(db) = db.as_mut() {
                db.extend_from_slice(&chunk[cut..]);
            }
        }
        vec![
            da.map(|d| Tensor::from_parts(sa, d)),
            db.map(|d| Tensor::from_parts(sb, d)),
        ]
    }
}

/// Stacks `a` then `b` along the channel axis.
pub fn concat_channels(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    let (ta, tb) = (tape.value(a), tape.value(b));
    let (sa, sb) = (ta.shape(), tb.shape());
    if sa.n() != sb.n() || sa.h() != sb.h() || sa.w() != sb.w() {
        return Err(Error::shape("concat_channels", format!("{sa} vs {sb}")));
    }
    let os = Shape::new(sa.n(), sa.c() + sb.c(), sa.h(), sa.w());
    let (pa, pb) = (sa.c() * sa.plane(), sb.c() * sb.plane());
    let mut out = Vec::with_capacity(os.numel());
    for n in 0..sa.n() {
        out.extend_from_slice(&ta.data()[n * pa..(n + 1) * pa]);
        out.extend_from_slice(&tb.data()[n * pb..(n + 1) * pb]);
    }
    tape.record(
        Tensor::from_parts(os, out),
        &[a, b],
        ConcatRule { split: sa.c() },
    )
}
