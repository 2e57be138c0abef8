//! Border padding and 2-D convolution (cross-correlation, no kernel flip).
//!
//! Each sample is lowered to a column matrix (im2col) with the border rule
//! applied while gathering, so forward and both backward products are
//! single GEMMs and no padded copy of the input is materialized.

use std::ops::Range;

use crate::error::{Error, Result};
use crate::tape::{Backward, Tape, Var};
use crate::tensor::{Shape, Tensor};

/// Border handling of a padded convolution.
#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize,
)]
#[serde(rename_all = "lowercase")]
pub enum PaddingMode {
    #[default]
    Zero,
    /// Mirror about the edge pixel without repeating it: `[a,b,c]` padded by
    /// one becomes `[b,a,b,c,b]`.
    Reflect,
    /// No padding at all; only `pad = 0` is legal.
    None,
}

impl PaddingMode {
    pub fn name(self) -> &'static str {
        match self {
            PaddingMode::Zero => "zero",
            PaddingMode::Reflect => "reflect",
            PaddingMode::None => "none",
        }
    }
}

impl std::str::FromStr for PaddingMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero" => Ok(PaddingMode::Zero),
            "reflect" => Ok(PaddingMode::Reflect),
            "none" => Ok(PaddingMode::None),
            other => Err(Error::invalid("padding", format!("unknown mode `{other}`"))),
        }
    }
}

impl std::fmt::Display for PaddingMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Stride and padding of one convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
    pub pad: usize,
    pub mode: PaddingMode,
}

impl ConvSpec {
    pub fn new(stride: usize, pad: usize, mode: PaddingMode) -> Self {
        ConvSpec { stride, pad, mode }
    }

    /// Stride 1 with `pad` in the given mode.
    pub fn same(pad: usize, mode: PaddingMode) -> Self {
        ConvSpec::new(1, pad, mode)
    }
}

/// Weights of one convolution layer: `weight` is `(C_out, C_in, k, k)`,
/// `bias` is `(1, C_out, 1, 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams {
    pub weight: Tensor,
    pub bias: Tensor,
    pub spec: ConvSpec,
}

impl ConvParams {
    pub fn kernel(&self) -> usize {
        self.weight.shape().h()
    }
    pub fn in_channels(&self) -> usize {
        self.weight.shape().c()
    }
    pub fn out_channels(&self) -> usize {
        self.weight.shape().n()
    }
}

/// Source coordinate of padded coordinate `q` along an axis of `len`, or
/// `None` when the padded cell is a zero fill.
#[inline]
fn source(q: usize, pad: usize, len: usize, mode: PaddingMode) -> Option<usize> {
    let s = q as isize - pad as isize;
    let n = len as isize;
    if (0..n).contains(&s) {
        return Some(s as usize);
    }
    match mode {
        PaddingMode::Zero | PaddingMode::None => None,
        PaddingMode::Reflect => {
            let r = if s < 0 { -s } else { 2 * (n - 1) - s };
            Some(r as usize)
        }
    }
}

fn check_pad(shape: Shape, pad: usize, mode: PaddingMode) -> Result<()> {
    match mode {
        PaddingMode::None if pad != 0 => Err(Error::invalid(
            "pad2d",
            format!("mode none requires pad 0, got {pad}"),
        )),
        PaddingMode::Reflect if pad >= shape.h() || pad >= shape.w() => Err(Error::invalid(
            "pad2d",
            format!("reflect pad {pad} needs extent > pad, input {shape}"),
        )),
        _ => Ok(()),
    }
}

/// Pads the two spatial axes of `x` by `pad` on every side.
pub fn pad_tensor(x: &Tensor, pad: usize, mode: PaddingMode) -> Result<Tensor> {
    let s = x.shape();
    check_pad(s, pad, mode)?;
    if pad == 0 {
        return Ok(x.clone());
    }
    let (h, w) = (s.h(), s.w());
    let (hp, wp) = (h + 2 * pad, w + 2 * pad);
    let cols: Vec<Option<usize>> = (0..wp).map(|q| source(q, pad, w, mode)).collect();
    let mut out = vec![0.0; s.n() * s.c() * hp * wp];
    let src = x.data();
    for plane in 0..s.n() * s.c() {
        let si = &src[plane * h * w..(plane + 1) * h * w];
        let so = &mut out[plane * hp * wp..(plane + 1) * hp * wp];
        for r in 0..hp {
            let Some(sr) = source(r, pad, h, mode) else {
                continue;
            };
            let orow = &mut so[r * wp..(r + 1) * wp];
            let irow = &si[sr * w..(sr + 1) * w];
            for (o, c) in orow.iter_mut().zip(&cols) {
                if let Some(c) = c {
                    *o = irow[*c];
                }
            }
        }
    }
    Ok(Tensor::from_parts(Shape::new(s.n(), s.c(), hp, wp), out))
}

struct PadRule {
    pad: usize,
    mode: PaddingMode,
}

impl Backward for PadRule {
    fn backward(
        &self,
        g: &Tensor,
        inputs: &[&Tensor],
        _: &Tensor,
        _: &[bool],
    ) -> Vec<Option<Tensor>> {
        let s = inputs[0].shape();
        let (h, w) = (s.h(), s.w());
        let (hp, wp) = (g.shape().h(), g.shape().w());
        let cols: Vec<Option<usize>> = (0..wp).map(|q| source(q, self.pad, w, self.mode)).collect();
        let mut dx = vec![0.0; s.numel()];
        let gd = g.data();
        for plane in 0..s.n() * s.c() {
            let gi = &gd[plane * hp * wp..(plane + 1) * hp * wp];
            let di = &mut dx[plane * h * w..(plane + 1) * h * w];
            for r in 0..hp {
                let Some(sr) = source(r, self.pad, h, self.mode) else {
                    continue;
                };
                for (q, c) in cols.iter().enumerate() {
                    if let Some(c) = c {
                        di[sr * w + c] += gi[r * wp + q];
                    }
                }
            }
        }
        vec![Some(Tensor::from_parts(s, dx))]
    }
}

/// Differentiable padding. `pad = 0` returns `x` unchanged.
pub fn pad2d(tape: &mut Tape, x: Var, pad: usize, mode: PaddingMode) -> Result<Var> {
    if pad == 0 {
        check_pad(tape.value(x).shape(), pad, mode)?;
        return Ok(x);
    }
    let out = pad_tensor(tape.value(x), pad, mode)?;
    tape.record(out, &[x], PadRule { pad, mode })
}

struct Geometry {
    c_in: usize,
    k: usize,
    stride: usize,
    pad: usize,
    h: usize,
    w: usize,
    ho: usize,
    wo: usize,
    /// Source row / column of every padded coordinate, `-1` for zero fill.
    rsrc: Vec<isize>,
    csrc: Vec<isize>,
}

impl Geometry {
    fn new(c_in: usize, h: usize, w: usize, k: usize, spec: ConvSpec) -> Self {
        let (hp, wp) = (h + 2 * spec.pad, w + 2 * spec.pad);
        let table = |len: usize, n: usize| -> Vec<isize> {
            (0..len)
                .map(|q| source(q, spec.pad, n, spec.mode).map_or(-1, |s| s as isize))
                .collect()
        };
        Geometry {
            c_in,
            k,
            stride: spec.stride,
            pad: spec.pad,
            h,
            w,
            ho: (hp - k) / spec.stride + 1,
            wo: (wp - k) / spec.stride + 1,
            rsrc: table(hp, h),
            csrc: table(wp, w),
        }
    }
    fn rows(&self) -> usize {
        self.c_in * self.k * self.k
    }
    fn cols(&self) -> usize {
        self.ho * self.wo
    }
    /// Unpadded 1x1 stride-1 kernels read the input plane directly.
    fn trivial(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }
    /// Output columns `lo..hi` whose tap `kj` lands inside the unpadded row
    /// (stride 1 only); the rest go through the border table.
    fn interior(&self, kj: usize) -> (usize, usize) {
        let lo = self.pad.saturating_sub(kj).min(self.wo);
        let hi = (self.pad + self.w).saturating_sub(kj).min(self.wo).max(lo);
        (lo, hi)
    }
}

/// Output rows per column block, sized so one block of the column matrix
/// stays cache resident between lowering and multiplication.
fn block_rows(rows: usize, wo: usize, ho: usize) -> usize {
    const TARGET: usize = 1 << 15;
    (TARGET / (rows * wo).max(1)).clamp(1, ho.max(1))
}

/// Lowers output rows `span` of one sample to a `rows x (span.len() * wo)`
/// column matrix.
fn im2col(x: &[f64], g: &Geometry, span: Range<usize>, cols: &mut [f64]) {
    let n = span.len() * g.wo;
    let plane_len = g.h * g.w;
    for c in 0..g.c_in {
        let plane = &x[c * plane_len..(c + 1) * plane_len];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let dst = &mut cols[row * n..(row + 1) * n];
                let (lo, hi) = g.interior(kj);
                for (i, oh) in span.clone().enumerate() {
                    let d = &mut dst[i * g.wo..(i + 1) * g.wo];
                    let r = g.rsrc[oh * g.stride + ki];
                    if r < 0 {
                        d.fill(0.0);
                        continue;
                    }
                    let src = &plane[r as usize * g.w..(r as usize + 1) * g.w];
                    let fetch = |ow: usize| {
                        let c = g.csrc[ow * g.stride + kj];
                        if c < 0 {
                            0.0
                        } else {
                            src[c as usize]
                        }
                    };
                    if g.stride == 1 {
                        for ow in (0..lo).chain(hi..g.wo) {
                            d[ow] = fetch(ow);
                        }
                        let off = kj + lo - g.pad;
                        d[lo..hi].copy_from_slice(&src[off..off + hi - lo]);
                    } else {
                        for (ow, v) in d.iter_mut().enumerate() {
                            *v = fetch(ow);
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of a full-extent [`im2col`]: scatters column gradients back onto
/// the unpadded input, so reflected taps accumulate onto their mirrored
/// source.
fn col2im(cols: &[f64], g: &Geometry, dx: &mut [f64]) {
    let n = g.cols();
    let plane_len = g.h * g.w;
    for c in 0..g.c_in {
        let plane = &mut dx[c * plane_len..(c + 1) * plane_len];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let src = &cols[row * n..(row + 1) * n];
                for oh in 0..g.ho {
                    let r = g.rsrc[oh * g.stride + ki];
                    if r < 0 {
                        continue;
                    }
                    let s = &src[oh * g.wo..(oh + 1) * g.wo];
                    let dst = &mut plane[r as usize * g.w..(r as usize + 1) * g.w];
                    for (ow, v) in s.iter().enumerate() {
                        let c = g.csrc[ow * g.stride + kj];
                        if c >= 0 {
                            dst[c as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

/// Row and column strides of a matrix operand.
type Strides = (usize, usize);

fn row_major(cols: usize) -> Strides {
    (cols, 1)
}

/// Strides reading a row-major `cols`-wide matrix as its transpose.
fn transposed(cols: usize) -> Strides {
    (1, cols)
}

/// `c = a * b + beta * c` with `a` `m x k`, `b` `k x n` and `c` `m x n`
/// addressed through explicit strides; `c` has row stride `ldc`.
#[allow(clippy::too_many_arguments)]
fn gemm(
    (m, k, n): (usize, usize, usize),
    a: &[f64],
    sa: Strides,
    b: &[f64],
    sb: Strides,
    beta: f64,
    c: &mut [f64],
    ldc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    let last = |rows: usize, cols: usize, (rs, cs): Strides| (rows - 1) * rs + (cols - 1) * cs;
    assert!(k == 0 || (last(m, k, sa) < a.len() && last(k, n, sb) < b.len()));
    assert!(last(m, n, (ldc, 1)) < c.len());
    // SAFETY: the asserts above bound every element addressed through the
    // given strides, and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            sa.0 as isize,
            sa.1 as isize,
            b.as_ptr(),
            sb.0 as isize,
            sb.1 as isize,
            beta,
            c.as_mut_ptr(),
            ldc as isize,
            1,
        );
    }
}

fn conv_forward(x: &Tensor, w: &Tensor, b: &Tensor, g: &Geometry) -> Tensor {
    let s = x.shape();
    let c_out = w.shape().n();
    let (rows, ncols) = (g.rows(), g.cols());
    let mut out = Vec::with_capacity(s.n() * c_out * ncols);
    for _ in 0..s.n() {
        for &bv in b.data() {
            out.extend(std::iter::repeat_n(bv, ncols));
        }
    }
    let bh = block_rows(rows, g.wo, g.ho);
    let mut cols = if g.trivial() {
        Vec::new()
    } else {
        vec![0.0; rows * bh * g.wo]
    };
    let in_per = s.c() * s.plane();
    for n in 0..s.n() {
        let xs = &x.data()[n * in_per..(n + 1) * in_per];
        let o = &mut out[n * c_out * ncols..(n + 1) * c_out * ncols];
        if g.trivial() {
            gemm(
                (c_out, rows, ncols),
                w.data(),
                row_major(rows),
                xs,
                row_major(ncols),
                1.0,
                o,
                ncols,
            );
            continue;
        }
        for oh in (0..g.ho).step_by(bh) {
            let span = oh..(oh + bh).min(g.ho);
            let nb = span.len() * g.wo;
            im2col(xs, g, span, &mut cols);
            gemm(
                (c_out, rows, nb),
                w.data(),
                row_major(rows),
                &cols,
                row_major(nb),
                1.0,
                &mut o[oh * g.wo..],
                ncols,
            );
        }
    }
    Tensor::from_parts(Shape::new(s.n(), c_out, g.ho, g.wo), out)
}

/// Input gradient of a stride-1 convolution as a full correlation of the
/// output gradient with the flipped kernel, folded back through the border
/// rule.
struct Adjoint {
    geo: Geometry,
    wt: Vec<f64>,
    cols: Vec<f64>,
    padded: Vec<f64>,
    block: usize,
}

impl Adjoint {
    fn new(g: &Geometry, w: &Tensor) -> Self {
        let c_out = w.shape().n();
        let k = g.k;
        let geo = Geometry::new(
            c_out,
            g.ho,
            g.wo,
            k,
            ConvSpec::same(k - 1, PaddingMode::Zero),
        );
        let wd = w.data();
        let mut wt = Vec::with_capacity(w.len());
        for ci in 0..g.c_in {
            for o in 0..c_out {
                for a in (0..k).rev() {
                    for b in (0..k).rev() {
                        wt.push(wd[((o * g.c_in + ci) * k + a) * k + b]);
                    }
                }
            }
        }
        let block = block_rows(geo.rows(), geo.wo, geo.ho);
        Adjoint {
            cols: vec![0.0; geo.rows() * block * geo.wo],
            padded: vec![0.0; g.c_in * geo.cols()],
            geo,
            wt,
            block,
        }
    }

    fn apply(&mut self, grad: &[f64], g: &Geometry, dx: &mut [f64]) {
        let (rows, n) = (self.geo.rows(), self.geo.cols());
        let (hp, wp) = (self.geo.ho, self.geo.wo);
        for u in (0..hp).step_by(self.block) {
            let span = u..(u + self.block).min(hp);
            let nb = span.len() * wp;
            im2col(grad, &self.geo, span, &mut self.cols);
            gemm(
                (g.c_in, rows, nb),
                &self.wt,
                row_major(rows),
                &self.cols,
                row_major(nb),
                0.0,
                &mut self.padded[u * wp..],
                n,
            );
        }
        let plane_len = g.h * g.w;
        for c in 0..g.c_in {
            let plane = &mut dx[c * plane_len..(c + 1) * plane_len];
            let src = &self.padded[c * n..(c + 1) * n];
            for u in 0..hp {
                let r = g.rsrc[u];
                if r < 0 {
                    continue;
                }
                let s = &src[u * wp..(u + 1) * wp];
                let dst = &mut plane[r as usize * g.w..(r as usize + 1) * g.w];
                for (d, v) in dst.iter_mut().zip(&s[g.pad..g.pad + g.w]) {
                    *d += v;
                }
                for v in (0..g.pad).chain(g.pad + g.w..wp) {
                    let c = g.csrc[v];
                    if c >= 0 {
                        dst[c as usize] += s[v];
                    }
                }
            }
        }
    }
}

struct ConvRule {
    geo: Geometry,
}

impl Backward for ConvRule {
    fn backward(
        &self,
        grad: &Tensor,
        inputs: &[&Tensor],
        _: &Tensor,
        needs: &[bool],
    ) -> Vec<Option<Tensor>> {
        let (x, w) = (inputs[0], inputs[1]);
        let g = &self.geo;
        let s = x.shape();
        let c_out = w.shape().n();
        let (rows, ncols) = (g.rows(), g.cols());
        let in_per = s.c() * s.plane();
        let gd = grad.data();

        let mut dx = needs[0].then(|| vec![0.0; s.numel()]);
        let mut dw = needs[1].then(|| vec![0.0; w.len()]);
        let db = needs[2].then(|| {
            let mut db = vec![0.0; c_out];
            for n in 0..s.n() {
                for (oc, d) in db.iter_mut().enumerate() {
                    let off = (n * c_out + oc) * ncols;
                    *d += gd[off..off + ncols].iter().sum::<f64>();
                }
            }
            db
        });

        let bh = block_rows(rows, g.wo, g.ho);
        let mut cols = if g.trivial() || dw.is_none() {
            Vec::new()
        } else {
            vec![0.0; rows * bh * g.wo]
        };
        let strided = dx.is_some() && g.stride != 1;
        let mut dcols = if strided {
            vec![0.0; rows * ncols]
        } else {
            Vec::new()
        };
        let mut adj = (dx.is_some() && g.stride == 1 && !g.trivial()).then(|| Adjoint::new(g, w));
        for n in 0..s.n() {
            let gn = &gd[n * c_out * ncols..(n + 1) * c_out * ncols];
            let xs = &x.data()[n * in_per..(n + 1) * in_per];
            if let Some(dw) = dw.as_mut() {
                // dW += dOut * cols^T, one column block at a time
                if g.trivial() {
                    gemm(
                        (c_out, ncols, rows),
                        gn,
                        row_major(ncols),
                        xs,
                        transposed(ncols),
                        1.0,
                        dw,
                        rows,
                    );
                } else {
                    for oh in (0..g.ho).step_by(bh) {
                        let span = oh..(oh + bh).min(g.ho);
                        let nb = span.len() * g.wo;
                        im2col(xs, g, span, &mut cols);
                        gemm(
                            (c_out, nb, rows),
                            &gn[oh * g.wo..],
                            row_major(ncols),
                            &cols,
                            transposed(nb),
                            1.0,
                            dw,
                            rows,
                        );
                    }
                }
            }
            if let Some(dx) = dx.as_mut() {
                let dxs = &mut dx[n * in_per..(n + 1) * in_per];
                if g.trivial() {
                    gemm(
                        (rows, c_out, ncols),
                        w.data(),
                        transposed(rows),
                        gn,
                        row_major(ncols),
                        1.0,
                        dxs,
                        ncols,
                    );
                } else if let Some(adj) = adj.as_mut() {
                    adj.apply(gn, g, dxs);
                } else {
                    // dcols = W^T * dOut
                    gemm(
                        (rows, c_out, ncols),
                        w.data(),
                        transposed(rows),
                        gn,
                        row_major(ncols),
                        0.0,
                        &mut dcols,
                        ncols,
                    );
                    col2im(&dcols, g, dxs);
                }
            }
        }
        vec![
            dx.map(|d| Tensor::from_parts(s, d)),
            dw.map(|d| Tensor::from_parts(w.shape(), d)),
            db.map(|d| Tensor::from_parts(inputs[2].shape(), d)),
        ]
    }
}

/// Convolution of `x` with weight `w` `(C_out, C_in, k, k)` and bias `b`
/// `(1, C_out, 1, 1)`. Output extent is `floor((H + 2p - k) / stride) + 1`.
pub fn conv2d(tape: &mut Tape, x: Var, w: Var, b: Var, spec: ConvSpec) -> Result<Var> {
    let xs = tape.value(x).shape();
    let ws = tape.value(w).shape();
    let bs = tape.value(b).shape();
    if ws.c() != xs.c() {
        return Err(Error::shape(
            "conv2d",
            format!("kernel expects {} input channels, input {xs}", ws.c()),
        ));
    }
    if ws.h() != ws.w() || ws.h() == 0 {
        return Err(Error::shape(
            "conv2d",
            format!("kernel must be square, got {ws}"),
        ));
    }
    if bs != Shape::new(1, ws.n(), 1, 1) {
        return Err(Error::shape(
            "conv2d",
            format!("bias {bs} for {} outputs", ws.n()),
        ));
    }
    if spec.stride == 0 {
        return Err(Error::invalid("conv2d", "stride must be positive"));
    }
    let k = ws.h();
    let (hp, wp) = (xs.h() + 2 * spec.pad, xs.w() + 2 * spec.pad);
    if hp < k || wp < k {
        return Err(Error::shape(
            "conv2d",
            format!("padded extent {hp}x{wp} smaller than kernel {k}"),
        ));
    }
    check_pad(xs, spec.pad, spec.mode)?;
    let geo = Geometry::new(xs.c(), xs.h(), xs.w(), k, spec);
    let out = conv_forward(tape.value(x), tape.value(w), tape.value(b), &geo);
    tape.record(out, &[x, w, b], ConvRule { geo })
}

/// Forward-only convolution on plain tensors.
pub fn conv2d_eval(x: &Tensor, params: &ConvParams) -> Result<Tensor> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let w = tape.constant(params.weight.clone());
    let b = tape.constant(params.bias.clone());
    let y = conv2d(&mut tape, xv, w, b, params.spec)?;
    Ok(tape.value(y).clone())
}
