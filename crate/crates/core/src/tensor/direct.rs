//! Direct stride-1 convolution on zero-padded planes.
//!
//! Each output element accumulates its taps in (in-channel, kernel-row,
//! kernel-col) order starting from zero, the same order as the column-matrix
//! path. Padded taps contribute `w·0`, which leaves a nonzero sum unchanged
//! and turns a zero sum into `+0`, so the result is bit-identical to skipping
//! them.

use super::{par, Scalar};

/// Output columns per register block.
const L: usize = 16;
/// Output channels per register block.
const CB: usize = 4;

/// A stride-1 correlation of padded input planes with a kernel bank.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Correlation {
    pub cin: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub dh: usize,
    pub dw: usize,
    pub oh: usize,
    pub ow: usize,
}

impl Correlation {
    /// Padded input rows.
    pub fn hp(&self) -> usize {
        self.oh + (self.kh - 1) * self.dh
    }

    /// Padded input columns: whole register blocks plus the kernel reach.
    pub fn wp(&self) -> usize {
        self.ow.div_ceil(L) * L + (self.kw - 1) * self.dw
    }

    fn taps(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    /// `out[n][co] = bias[co] + Σ w[co][ci][i][j] · xp[n][ci][y + i·dh][x + j·dw]`
    /// for `n` images; `w` is (cout, cin, kh, kw).
    pub fn forward<S: Scalar>(&self, xp: &[S], w: &[S], bias: &[S], out: &mut [S]) {
        let in_len = self.cin * self.hp() * self.wp();
        let plane = self.oh * self.ow;
        let blocks = self.cout.div_ceil(CB);
        let per_image = self.cout * plane;
        let n = out.len() / per_image;
        // one task per (image, channel block); channel blocks are contiguous
        let tasks: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..blocks).map(move |b| (i, b))).collect();
        let out_ptr = SharedOut(out.as_mut_ptr());
        let out_ptr = &out_ptr;
        par::for_each_index(tasks.len(), |t| {
            let (img, b) = tasks[t];
            let co0 = b * CB;
            let width = CB.min(self.cout - co0);
            let start = img * per_image + co0 * plane;
            // SAFETY: channel blocks of distinct tasks cover disjoint ranges
            let dst = unsafe { std::slice::from_raw_parts_mut(out_ptr.0.add(start), width * plane) };
            correlate_block(
                self,
                &xp[img * in_len..(img + 1) * in_len],
                w,
                &bias[co0..co0 + width],
                co0,
                dst,
            );
        });
    }

    /// `gk[co][ci][i][j] = Σ_n Σ_{y,x} g[n][co][y][x] · xp[n][ci][y + i·dh][x + j·dw]`.
    pub fn kernel_grad<S: Scalar>(&self, xp: &[S], g: &[S], gk: &mut [S]) {
        let k = self.taps();
        par::for_each_chunk(gk, k, |co, row| kernel_grad_row(self, xp, g, co, row));
    }
}

struct SharedOut<S>(*mut S);
// SAFETY: used only to hand disjoint output ranges to workers.
unsafe impl<S: Send> Sync for SharedOut<S> {}

/// Copies `n` images of `c` planes `h×w` into zeroed planes `hp×wp`, placed
/// at offset (`top`, `left`).
pub(crate) fn pad_planes<S: Scalar>(
    x: &[S],
    planes: usize,
    (h, w): (usize, usize),
    (hp, wp): (usize, usize),
    (top, left): (usize, usize),
) -> Vec<S> {
    let mut out = vec![S::zero(); planes * hp * wp];
    for (src, dst) in x.chunks_exact(h * w).zip(out.chunks_exact_mut(hp * wp)) {
        for (y, row) in src.chunks_exact(w).enumerate() {
            let py = y + top;
            if py < hp {
                let end = (left + w).min(wp);
                dst[py * wp + left..py * wp + end].copy_from_slice(&row[..end - left]);
            }
        }
    }
    out
}

multiversion! {
    fn correlate_block<S: Scalar>(c: &Correlation, xp: &[S], w: &[S], bias: &[S], co0: usize, dst: &mut [S]) {
        let (oh, ow, hp, wp) = (c.oh, c.ow, c.hp(), c.wp());
        let plane = oh * ow;
        let width = bias.len();
        let k = c.taps();
        // wpack[t] holds tap t of the block's channels; missing channels are 0
        let mut wpack = vec![[S::zero(); CB]; k];
        for (t, wv) in wpack.iter_mut().enumerate() {
            for (q, v) in wv.iter_mut().take(width).enumerate() {
                *v = w[(co0 + q) * k + t];
            }
        }
        let rows: Vec<(usize, usize)> = (0..c.cin)
            .flat_map(|ci| (0..c.kh).map(move |i| (ci, i)))
            .collect();
        for y in 0..oh {
            let mut x0 = 0;
            while x0 < ow {
                let lanes = L.min(ow - x0);
                let mut acc = [[S::zero(); L]; CB];
                let mut t = 0;
                for &(ci, i) in &rows {
                    let row = &xp[ci * hp * wp + (y + i * c.dh) * wp..];
                    for j in 0..c.kw {
                        let wv = wpack[t];
                        t += 1;
                        let base = x0 + j * c.dw;
                        // lanes past the output edge read padding and are dropped
                        let src: &[S; L] = row[base..base + L].try_into().unwrap();
                        for cb in 0..CB {
                            for q in 0..L {
                                acc[cb][q] = wv[cb].mul_add(src[q], acc[cb][q]);
                            }
                        }
                    }
                }
                for (q, (a, &b)) in acc.iter().zip(bias).enumerate() {
                    let out = &mut dst[q * plane + y * ow + x0..q * plane + y * ow + x0 + lanes];
                    for (o, &v) in out.iter_mut().zip(a.iter()) {
                        *o = b + v;
                    }
                }
                x0 += lanes;
            }
        }
    }
}

multiversion! {
    fn kernel_grad_row<S: Scalar>(c: &Correlation, xp: &[S], g: &[S], co: usize, out: &mut [S]) {
        let (oh, ow, hp, wp) = (c.oh, c.ow, c.hp(), c.wp());
        let plane = oh * ow;
        let in_len = c.cin * hp * wp;
        let n = g.len() / (c.cout * plane);
        let full = ow / L * L;
        let mut t = 0;
        for ci in 0..c.cin {
            for i in 0..c.kh {
                for j in 0..c.kw {
                    let mut acc = [S::zero(); L];
                    let mut tail = S::zero();
                    for img in 0..n {
                        let gp = &g[(img * c.cout + co) * plane..(img * c.cout + co + 1) * plane];
                        let src = &xp[img * in_len + ci * hp * wp..img * in_len + (ci + 1) * hp * wp];
                        for y in 0..oh {
                            let gr = &gp[y * ow..(y + 1) * ow];
                            let xr = &src[(y + i * c.dh) * wp + j * c.dw..][..ow];
                            for (ga, xa) in gr[..full].chunks_exact(L).zip(xr[..full].chunks_exact(L)) {
                                for q in 0..L {
                                    acc[q] = ga[q].mul_add(xa[q], acc[q]);
                                }
                            }
                            for (a, b) in gr[full..].iter().zip(&xr[full..]) {
                                tail = a.mul_add(*b, tail);
                            }
                        }
                    }
                    out[t] = acc.iter().fold(tail, |s, &v| s + v);
                    t += 1;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn padding_places_planes() {
        let x: Vec<f64> = (1..=4).map(f64::from).collect();
        let p = pad_planes(&x, 1, (2, 2), (4, 3), (1, 1));
        assert_eq!(p, vec![0., 0., 0., 0., 1., 2., 0., 3., 4., 0., 0., 0.]);
    }
}
