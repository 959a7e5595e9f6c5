//! 2-D convolution (cross-correlation) via im2col and the packed GEMM.
//!
//! Each output element is `bias + Σ x·w` with the sum taken over
//! (in-channel, kernel-row, kernel-col) in that order, starting from zero.

use super::direct::{pad_planes, Correlation};
use super::gemm::{gemm, MatRef};
use super::{Scalar, Shape4, Tensor4};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding that keeps `ceil(in / stride)` outputs; an odd remainder
    /// goes to the bottom/right.
    Same,
    /// No padding.
    Valid,
}

/// Output extent and leading pad along one axis, or `None` for an empty output.
pub fn conv_output_dim(
    input: usize,
    kernel: usize,
    stride: usize,
    dilation: usize,
    padding: Padding,
) -> Option<(usize, usize)> {
    let eff = dilation * (kernel - 1) + 1;
    match padding {
        Padding::Same => {
            let out = input.div_ceil(stride);
            let total = ((out.max(1) - 1) * stride + eff).saturating_sub(input);
            (out > 0).then_some((out, total / 2))
        }
        Padding::Valid => (input >= eff).then(|| ((input - eff) / stride + 1, 0)),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams<S> {
    /// (out_channels, in_channels, kh, kw)
    pub kernel: Tensor4<S>,
    /// (out_channels, 1, 1, 1)
    pub bias: Tensor4<S>,
    pub stride: (usize, usize),
    pub dilation: (usize, usize),
    pub padding: Padding,
}

impl<S: Scalar> ConvParams<S> {
    pub fn new(
        kernel: Tensor4<S>,
        bias: Tensor4<S>,
        stride: (usize, usize),
        dilation: (usize, usize),
        padding: Padding,
    ) -> Result<Self> {
        let ks = kernel.shape();
        bias.require_shape("conv2d", Shape4::new(ks.n, 1, 1, 1))?;
        if stride.0 == 0 || stride.1 == 0 || dilation.0 == 0 || dilation.1 == 0 {
            return Err(Error::Config(format!(
                "conv2d: stride {stride:?} and dilation {dilation:?} must be positive"
            )));
        }
        if ks.h == 0 || ks.w == 0 {
            return Err(Error::shape("conv2d", "kernel", format!("empty kernel {ks}")));
        }
        if padding == Padding::Same {
            let eff_h = dilation.0 * (ks.h - 1) + 1;
            let eff_w = dilation.1 * (ks.w - 1) + 1;
            if eff_h.is_multiple_of(2) || eff_w.is_multiple_of(2) {
                return Err(Error::Config(format!(
                    "conv2d: same padding needs an odd effective kernel, got {eff_h}x{eff_w}"
                )));
            }
        }
        Ok(ConvParams {
            kernel,
            bias,
            stride,
            dilation,
            padding,
        })
    }

    /// Zero-initialised parameters with gradient buffers.
    pub fn zeros(
        out_channels: usize,
        in_channels: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        dilation: (usize, usize),
        padding: Padding,
    ) -> Result<Self> {
        Self::new(
            Tensor4::zeros(Shape4::new(out_channels, in_channels, kernel.0, kernel.1)).with_grad(),
            Tensor4::zeros(Shape4::new(out_channels, 1, 1, 1)).with_grad(),
            stride,
            dilation,
            padding,
        )
    }

    pub fn out_channels(&self) -> usize {
        self.kernel.shape().n
    }

    pub fn in_channels(&self) -> usize {
        self.kernel.shape().c
    }

    pub fn output_shape(&self, input: Shape4) -> Result<Shape4> {
        Ok(Geometry::new(input, self)?.output_shape())
    }
}

#[derive(Debug, Clone, Copy)]
struct Geometry {
    n: usize,
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    sh: usize,
    sw: usize,
    dh: usize,
    dw: usize,
    oh: usize,
    ow: usize,
    pt: usize,
    pl: usize,
}

impl Geometry {
    fn new<S: Scalar>(input: Shape4, p: &ConvParams<S>) -> Result<Self> {
        let ks = p.kernel.shape();
        if input.c != ks.c {
            return Err(Error::shape(
                "conv2d",
                "channel",
                format!("input {input} has {} channels, kernel {ks} expects {}", input.c, ks.c),
            ));
        }
        let (oh, pt) = conv_output_dim(input.h, ks.h, p.stride.0, p.dilation.0, p.padding).ok_or_else(|| {
            Error::shape(
                "conv2d",
                "height",
                format!("empty output for input {input}, kernel {ks}"),
            )
        })?;
        let (ow, pl) = conv_output_dim(input.w, ks.w, p.stride.1, p.dilation.1, p.padding).ok_or_else(|| {
            Error::shape(
                "conv2d",
                "width",
                format!("empty output for input {input}, kernel {ks}"),
            )
        })?;
        Ok(Geometry {
            n: input.n,
            cin: ks.c,
            cout: ks.n,
            h: input.h,
            w: input.w,
            kh: ks.h,
            kw: ks.w,
            sh: p.stride.0,
            sw: p.stride.1,
            dh: p.dilation.0,
            dw: p.dilation.1,
            oh,
            ow,
            pt,
            pl,
        })
    }

    fn output_shape(&self) -> Shape4 {
        Shape4::new(self.n, self.cout, self.oh, self.ow)
    }

    fn taps(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.oh * self.ow
    }

    /// 1×1, stride 1, no padding: the input planes already are the column matrix.
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.sh == 1 && self.sw == 1 && self.oh == self.h && self.ow == self.w
    }

    #[inline]
    fn source(&self, o: usize, k: usize, s: usize, d: usize, pad: usize, len: usize) -> Option<usize> {
        (o * s + k * d).checked_sub(pad).filter(|&i| i < len)
    }

    /// Output columns `[lo, hi)` whose tap `j` lands inside the row.
    fn valid_cols(&self, j: usize) -> (usize, usize) {
        let off = j * self.dw;
        let lo = self.pl.saturating_sub(off).div_ceil(self.sw).min(self.ow);
        let hi = if self.w + self.pl > off {
            (self.w + self.pl - off).div_ceil(self.sw).min(self.ow)
        } else {
            0
        };
        (lo, hi.max(lo))
    }

    /// Writes the column matrix of one image into `col`, rows `ld` apart.
    fn im2col<S: Scalar>(&self, x: &[S], col: &mut [S], ld: usize) {
        let p = self.positions();
        let mut row = 0;
        for ci in 0..self.cin {
            let plane = &x[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let (lo, hi) = self.valid_cols(j);
                    let dst = &mut col[row * ld..row * ld + p];
                    for oy in 0..self.oh {
                        let out_row = &mut dst[oy * self.ow..(oy + 1) * self.ow];
                        let Some(iy) = self.source(oy, i, self.sh, self.dh, self.pt, self.h) else {
                            out_row.fill(S::zero());
                            continue;
                        };
                        let src = &plane[iy * self.w..(iy + 1) * self.w];
                        out_row[..lo].fill(S::zero());
                        out_row[hi..].fill(S::zero());
                        if lo == hi {
                            continue;
                        }
                        let x0 = lo * self.sw + j * self.dw - self.pl;
                        if self.sw == 1 {
                            out_row[lo..hi].copy_from_slice(&src[x0..x0 + hi - lo]);
                        } else {
                            for (d, s) in out_row[lo..hi].iter_mut().zip(src[x0..].iter().step_by(self.sw)) {
                                *d = *s;
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }

    fn col2im_add<S: Scalar>(&self, col: &[S], ld: usize, gx: &mut [S]) {
        let p = self.positions();
        let mut row = 0;
        for ci in 0..self.cin {
            let plane = &mut gx[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let (lo, hi) = self.valid_cols(j);
                    let src = &col[row * ld..row * ld + p];
                    for oy in 0..self.oh {
                        let Some(iy) = self.source(oy, i, self.sh, self.dh, self.pt, self.h) else {
                            continue;
                        };
                        if lo == hi {
                            continue;
                        }
                        let x0 = lo * self.sw + j * self.dw - self.pl;
                        let dst = plane[iy * self.w + x0..(iy + 1) * self.w].iter_mut().step_by(self.sw);
                        for (d, s) in dst.zip(&src[oy * self.ow + lo..oy * self.ow + hi]) {
                            *d += *s;
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

impl Geometry {
    fn direct_eligible(&self) -> bool {
        self.sh == 1 && self.sw == 1 && !self.is_pointwise()
    }

    /// Large stride-1 planes go through the direct path, which avoids the
    /// column matrix's k-fold copy of the input; small planes with many
    /// channels are faster as one matrix multiply.
    fn prefer_direct(&self) -> bool {
        self.direct_eligible() && self.positions() >= DIRECT_MIN_POSITIONS
    }

    /// Column matrix of the whole batch, `taps × (n · positions)`, image by
    /// image along the columns.
    fn batch_columns<S: Scalar>(&self, x: &[S]) -> Vec<S> {
        let (pos, in_len) = (self.positions(), self.cin * self.h * self.w);
        if self.is_pointwise() {
            return to_channel_major(x, self.n, self.cin, pos);
        }
        let np = self.n * pos;
        let mut col = vec![S::zero(); self.taps() * np];
        for (n, img) in x.chunks_exact(in_len).enumerate() {
            self.im2col(img, &mut col[n * pos..], np);
        }
        col
    }

    fn correlation(&self) -> Correlation {
        Correlation {
            cin: self.cin,
            cout: self.cout,
            kh: self.kh,
            kw: self.kw,
            dh: self.dh,
            dw: self.dw,
            oh: self.oh,
            ow: self.ow,
        }
    }

    fn padded_input<S: Scalar>(&self, x: &[S], c: &Correlation) -> Vec<S> {
        pad_planes(
            x,
            self.n * self.cin,
            (self.h, self.w),
            (c.hp(), c.wp()),
            (self.pt, self.pl),
        )
    }

    /// The input gradient is a correlation of the padded output gradient
    /// with the flipped, channel-transposed kernel.
    fn grad_input_direct<S: Scalar>(&self, go: &[S], w: &[S]) -> Vec<S> {
        let (eh, ew) = ((self.kh - 1) * self.dh, (self.kw - 1) * self.dw);
        let c = Correlation {
            cin: self.cout,
            cout: self.cin,
            kh: self.kh,
            kw: self.kw,
            dh: self.dh,
            dw: self.dw,
            oh: self.h,
            ow: self.w,
        };
        let gp = pad_planes(
            go,
            self.n * self.cout,
            (self.oh, self.ow),
            (c.hp(), c.wp()),
            (eh - self.pt, ew - self.pl),
        );
        let kk = self.kh * self.kw;
        let mut flipped = vec![S::zero(); w.len()];
        for co in 0..self.cout {
            for ci in 0..self.cin {
                let src = &w[(co * self.cin + ci) * kk..(co * self.cin + ci + 1) * kk];
                let dst = &mut flipped[(ci * self.cout + co) * kk..(ci * self.cout + co + 1) * kk];
                for (d, s) in dst.iter_mut().zip(src.iter().rev()) {
                    *d = *s;
                }
            }
        }
        let mut gx = vec![S::zero(); self.n * self.cin * self.h * self.w];
        c.forward(&gp, &flipped, &vec![S::zero(); self.cin], &mut gx);
        gx
    }
}

const DIRECT_MIN_POSITIONS: usize = 1024;

/// (n, c, positions) to (c, n · positions).
fn to_channel_major<S: Scalar>(x: &[S], n: usize, c: usize, pos: usize) -> Vec<S> {
    let mut out = vec![S::zero(); x.len()];
    for (i, plane) in x.chunks_exact(pos).enumerate() {
        let (img, ch) = (i / c, i % c);
        let start = ch * n * pos + img * pos;
        out[start..start + pos].copy_from_slice(plane);
    }
    out
}

/// Inverse of [`to_channel_major`].
fn from_channel_major<S: Scalar>(x: &[S], n: usize, c: usize, pos: usize) -> Vec<S> {
    let mut out = vec![S::zero(); x.len()];
    for (i, plane) in out.chunks_exact_mut(pos).enumerate() {
        let (img, ch) = (i / c, i % c);
        let start = ch * n * pos + img * pos;
        plane.copy_from_slice(&x[start..start + pos]);
    }
    out
}

pub fn conv2d_forward<S: Scalar>(input: &Tensor4<S>, p: &ConvParams<S>) -> Result<Tensor4<S>> {
    let g = Geometry::new(input.shape(), p)?;
    forward_with(input, p, g, g.prefer_direct())
}

fn forward_with<S: Scalar>(input: &Tensor4<S>, p: &ConvParams<S>, g: Geometry, direct: bool) -> Result<Tensor4<S>> {
    if direct {
        let c = g.correlation();
        let mut out = vec![S::zero(); g.n * g.cout * g.positions()];
        c.forward(
            &g.padded_input(input.data(), &c),
            p.kernel.data(),
            p.bias.data(),
            &mut out,
        );
        return Tensor4::from_vec(g.output_shape(), out);
    }
    // the whole batch is one product: (cout × taps)·(taps × n·positions)
    let (k, np) = (g.taps(), g.n * g.positions());
    let cols = g.batch_columns(input.data());
    let mut out = vec![S::zero(); g.cout * np];
    for (row, &b) in out.chunks_exact_mut(np).zip(p.bias.data()) {
        row.fill(b);
    }
    gemm(
        MatRef::row_major(p.kernel.data(), g.cout, k),
        MatRef::row_major(&cols, k, np),
        &mut out,
        true,
    );
    let out = from_channel_major(&out, g.n, g.cout, g.positions());
    Tensor4::from_vec(g.output_shape(), out)
}

#[derive(Debug, Clone)]
pub struct ConvGrads<S> {
    pub input: Tensor4<S>,
    pub kernel: Tensor4<S>,
    pub bias: Tensor4<S>,
}

pub fn conv2d_backward<S: Scalar>(
    input: &Tensor4<S>,
    p: &ConvParams<S>,
    grad_out: &Tensor4<S>,
) -> Result<ConvGrads<S>> {
    let g = Geometry::new(input.shape(), p)?;
    grad_out.require_shape("conv2d_backward", g.output_shape())?;
    backward_with(input, p, grad_out, g, g.prefer_direct())
}

fn backward_with<S: Scalar>(
    input: &Tensor4<S>,
    p: &ConvParams<S>,
    grad_out: &Tensor4<S>,
    g: Geometry,
    direct: bool,
) -> Result<ConvGrads<S>> {
    let (k, pos) = (g.taps(), g.positions());
    let in_len = g.cin * g.h * g.w;
    let out_len = g.cout * pos;
    let weights = MatRef::row_major(p.kernel.data(), g.cout, k);

    let mut gk = vec![S::zero(); g.cout * k];
    let mut gb = vec![S::zero(); g.cout];
    let mut gx = vec![S::zero(); g.n * in_len];
    if direct {
        let go = grad_out.data();
        for n in 0..g.n {
            for (b, plane) in gb.iter_mut().zip(go[n * out_len..(n + 1) * out_len].chunks_exact(pos)) {
                *b += plane.iter().copied().sum::<S>();
            }
        }
        let c = g.correlation();
        c.kernel_grad(&g.padded_input(input.data(), &c), go, &mut gk);
        let gx = g.grad_input_direct(go, p.kernel.data());
        return Ok(ConvGrads {
            input: Tensor4::from_vec(input.shape(), gx)?,
            kernel: Tensor4::from_vec(p.kernel.shape(), gk)?,
            bias: Tensor4::from_vec(p.bias.shape(), gb)?,
        });
    }
    let np = g.n * pos;
    let cols = g.batch_columns(input.data());
    let go = to_channel_major(grad_out.data(), g.n, g.cout, pos);
    for (b, row) in gb.iter_mut().zip(go.chunks_exact(np)) {
        *b = row.iter().copied().sum::<S>();
    }
    let go_mat = MatRef::row_major(&go, g.cout, np);
    gemm(go_mat, MatRef::row_major(&cols, k, np).t(), &mut gk, false);
    let mut gcol = vec![S::zero(); k * np];
    gemm(weights.t(), go_mat, &mut gcol, false);
    if g.is_pointwise() {
        gx = from_channel_major(&gcol, g.n, g.cin, pos);
    } else {
        for (n, gx_n) in gx.chunks_exact_mut(in_len).enumerate() {
            g.col2im_add(&gcol[n * pos..], np, gx_n);
        }
    }

    Ok(ConvGrads {
        input: Tensor4::from_vec(input.shape(), gx)?,
        kernel: Tensor4::from_vec(p.kernel.shape(), gk)?,
        bias: Tensor4::from_vec(p.bias.shape(), gb)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(kernel: Tensor4<f64>, stride: usize, dilation: usize, padding: Padding) -> ConvParams<f64> {
        let co = kernel.shape().n;
        ConvParams::new(
            kernel,
            Tensor4::zeros(Shape4::new(co, 1, 1, 1)),
            (stride, stride),
            (dilation, dilation),
            padding,
        )
        .unwrap()
    }

    #[test]
    fn ones_3x3_same() {
        let x = Tensor4::filled(Shape4::new(1, 1, 3, 3), 1.0);
        let p = params(Tensor4::filled(Shape4::new(1, 1, 3, 3), 1.0), 1, 1, Padding::Same);
        let y = conv2d_forward(&x, &p).unwrap();
        assert_eq!(y.data(), &[4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]);
    }

    #[test]
    fn unit_pointwise_kernel_is_identity() {
        let x = Tensor4::from_fn(Shape4::new(2, 1, 4, 5), |n, _, y, x| {
            (n * 31 + y * 7 + x) as f64 * 0.37 - 3.0
        });
        let p = params(Tensor4::filled(Shape4::new(1, 1, 1, 1), 1.0), 1, 1, Padding::Same);
        let y = conv2d_forward(&x, &p).unwrap();
        assert_eq!(y.data(), x.data());
        let g = conv2d_backward(&x, &p, &x).unwrap();
        assert_eq!(g.input.data(), x.data());
    }

    #[test]
    fn strided_average_of_constant() {
        let v = 2.75;
        let x = Tensor4::filled(Shape4::new(1, 1, 4, 4), v);
        let p = params(Tensor4::filled(Shape4::new(1, 1, 2, 2), 0.25), 2, 1, Padding::Valid);
        let y = conv2d_forward(&x, &p).unwrap();
        assert_eq!(y.shape(), Shape4::new(1, 1, 2, 2));
        assert!(y.data().iter().all(|&o| o == v));
    }

    #[test]
    fn bias_gradient_counts_positions() {
        let x = Tensor4::filled(Shape4::new(1, 2, 5, 7), 0.5);
        let p = params(Tensor4::filled(Shape4::new(3, 2, 3, 3), 0.1), 1, 1, Padding::Same);
        let ones = Tensor4::filled(Shape4::new(1, 3, 5, 7), 1.0);
        let g = conv2d_backward(&x, &p, &ones).unwrap();
        assert!(g.bias.data().iter().all(|&b| b == 35.0));
    }

    #[test]
    fn direct_and_matrix_paths_agree() {
        let cases = [
            ((3, 3), 1, Padding::Same),
            ((3, 3), 2, Padding::Same),
            ((1, 13), 1, Padding::Same),
            ((2, 2), 1, Padding::Valid),
            ((13, 1), 1, Padding::Valid),
        ];
        for (c, &(k, d, pad)) in cases.iter().enumerate() {
            let x = Tensor4::from_fn(Shape4::new(2, 3, 19, 37), |n, ci, y, x| {
                ((n * 7 + ci * 5 + y * 3 + x + c) % 11) as f64 * 0.3 - 1.4
            });
            let mut p = params(
                Tensor4::from_fn(Shape4::new(5, 3, k.0, k.1), |co, ci, i, j| {
                    ((co * 3 + ci + i * 2 + j) % 7) as f64 * 0.25 - 0.7
                }),
                1,
                d,
                pad,
            );
            p.bias = Tensor4::from_fn(Shape4::new(5, 1, 1, 1), |co, _, _, _| co as f64 * 0.5 - 1.0);
            let g = Geometry::new(x.shape(), &p).unwrap();
            assert!(g.direct_eligible());
            let direct = forward_with(&x, &p, g, true).unwrap();
            let matrix = forward_with(&x, &p, g, false).unwrap();
            assert!(
                direct
                    .data()
                    .iter()
                    .zip(matrix.data())
                    .all(|(a, b)| a.to_bits() == b.to_bits()),
                "case {c}"
            );

            let go = Tensor4::from_fn(direct.shape(), |n, co, y, x| {
                ((n + co * 3 + y * 5 + x * 7) % 13) as f64 * 0.1 - 0.6
            });
            let a = backward_with(&x, &p, &go, g, true).unwrap();
            let b = backward_with(&x, &p, &go, g, false).unwrap();
            for (u, v) in [(&a.input, &b.input), (&a.kernel, &b.kernel), (&a.bias, &b.bias)] {
                for (s, t) in u.data().iter().zip(v.data()) {
                    assert!((s - t).abs() <= 1e-12 * (1.0 + t.abs()), "case {c}: {s} vs {t}");
                }
            }
        }
    }

    #[test]
    fn output_dim_rules() {
        // Same, stride 1 keeps the extent for odd effective kernels
        for k in [1, 3, 5, 13] {
            for d in [1, 2, 4] {
                assert_eq!(conv_output_dim(11, k, 1, d, Padding::Same).unwrap().0, 11);
            }
        }
        // floor((in - d(k-1) - 1)/s) + 1
        assert_eq!(conv_output_dim(10, 3, 2, 2, Padding::Valid), Some((3, 0)));
        assert_eq!(conv_output_dim(352, 2, 2, 1, Padding::Valid), Some((176, 0)));
        assert_eq!(conv_output_dim(2, 3, 1, 1, Padding::Valid), None);
    }

    #[test]
    fn rejects_bad_configurations() {
        let x = Tensor4::<f64>::zeros(Shape4::new(1, 2, 4, 4));
        let p = params(Tensor4::zeros(Shape4::new(1, 3, 3, 3)), 1, 1, Padding::Same);
        let err = conv2d_forward(&x, &p).unwrap_err();
        assert!(err.to_string().contains("channel"), "{err}");

        let small = Tensor4::<f64>::zeros(Shape4::new(1, 3, 2, 8));
        let p = params(Tensor4::zeros(Shape4::new(1, 3, 3, 3)), 1, 1, Padding::Valid);
        let err = conv2d_forward(&small, &p).unwrap_err();
        assert!(err.to_string().contains("height"), "{err}");

        let even = ConvParams::<f64>::zeros(1, 1, (2, 2), (1, 1), (1, 1), Padding::Same);
        assert!(even.is_err());

        let p = params(Tensor4::zeros(Shape4::new(1, 2, 3, 3)), 1, 1, Padding::Same);
        let bad_grad = Tensor4::zeros(Shape4::new(1, 1, 4, 3));
        assert!(conv2d_backward(&x, &p, &bad_grad).is_err());
    }
}
