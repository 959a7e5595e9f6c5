//! Packed, register-blocked matrix multiply.
//!
//! Every output element is accumulated from zero over the inner dimension in
//! ascending order and only then stored (or added to the destination), so the
//! result is independent of blocking, orientation and worker count.

use super::{par, Scalar};

pub(crate) const MR: usize = 16;
pub(crate) const NR: usize = 12;

/// Strided read-only matrix view: element (r, c) lives at `r * rs + c * cs`.
#[derive(Clone, Copy)]
pub(crate) struct MatRef<'a, S> {
    pub data: &'a [S],
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
    pub cs: usize,
}

impl<'a, S: Copy> MatRef<'a, S> {
    pub fn row_major(data: &'a [S], rows: usize, cols: usize) -> Self {
        MatRef {
            data,
            rows,
            cols,
            rs: cols,
            cs: 1,
        }
    }

    pub fn t(self) -> Self {
        MatRef {
            data: self.data,
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
        }
    }

    #[cfg(test)]
    fn get(&self, r: usize, c: usize) -> S {
        self.data[r * self.rs + c * self.cs]
    }
}

/// `c = a·b` (or `c += a·b` when `accumulate`), `c` row-major `a.rows × b.cols`.
pub(crate) fn gemm<S: Scalar>(a: MatRef<'_, S>, b: MatRef<'_, S>, c: &mut [S], accumulate: bool) {
    let (m, k, n) = (a.rows, a.cols, b.cols);
    assert_eq!(k, b.rows, "gemm inner dimension");
    assert_eq!(c.len(), m * n, "gemm output size");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c.iter_mut().for_each(|v| *v = S::zero());
        }
        return;
    }
    // Pick the orientation whose padded register tiles waste the least work;
    // the transposed product writes through swapped output strides. The
    // per-element accumulation order is the same either way.
    let tiles = |rows: usize, cols: usize| rows.div_ceil(MR) * MR * cols.div_ceil(NR) * NR;
    if tiles(n, m) < tiles(m, n) {
        gemm_packed(b.t(), a.t(), OutView::new(c, 1, n), accumulate);
    } else {
        gemm_packed(a, b, OutView::new(c, n, 1), accumulate);
    }
}

/// Strided destination shared by the workers; every worker writes a
/// disjoint set of rows.
struct OutView<S> {
    ptr: *mut S,
    len: usize,
    rs: usize,
    cs: usize,
}

// SAFETY: workers write disjoint elements (one MR-row block each), and the
// borrow of the underlying slice outlives the parallel region.
unsafe impl<S: Send> Send for OutView<S> {}
unsafe impl<S: Send> Sync for OutView<S> {}

impl<S> OutView<S> {
    fn new(c: &mut [S], rs: usize, cs: usize) -> Self {
        OutView {
            ptr: c.as_mut_ptr(),
            len: c.len(),
            rs,
            cs,
        }
    }
}

/// Row-major `m×k` times `k×n`.
pub fn matmul<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, n: usize) -> Vec<S> {
    let mut c = vec![S::zero(); m * n];
    gemm(MatRef::row_major(a, m, k), MatRef::row_major(b, k, n), &mut c, false);
    c
}

/// Copies rows `r0..r0 + rows` of `a` into `ap` as `ap[kk·MR + r]`.
fn pack_a<S: Scalar>(a: &MatRef<'_, S>, r0: usize, rows: usize, ap: &mut [S]) {
    if a.rs == 1 {
        for (kk, dst) in ap.chunks_exact_mut(MR).enumerate() {
            let start = r0 + kk * a.cs;
            dst[..rows].copy_from_slice(&a.data[start..start + rows]);
        }
    } else {
        for r in 0..rows {
            let row = &a.data[(r0 + r) * a.rs..];
            for (kk, dst) in ap.chunks_exact_mut(MR).enumerate() {
                dst[r] = row[kk * a.cs];
            }
        }
    }
}

/// Copies columns `j0..j0 + width` of `b` into `bp` as `bp[kk·NR + j]`.
fn pack_b<S: Scalar>(b: &MatRef<'_, S>, j0: usize, width: usize, bp: &mut [S]) {
    if b.cs == 1 {
        for (kk, dst) in bp.chunks_exact_mut(NR).enumerate() {
            let start = kk * b.rs + j0;
            dst[..width].copy_from_slice(&b.data[start..start + width]);
        }
    } else {
        for j in 0..width {
            let col = &b.data[(j0 + j) * b.cs..];
            for (kk, dst) in bp.chunks_exact_mut(NR).enumerate() {
                dst[j] = col[kk * b.rs];
            }
        }
    }
}

fn gemm_packed<S: Scalar>(a: MatRef<'_, S>, b: MatRef<'_, S>, c: OutView<S>, accumulate: bool) {
    let (m, k, n) = (a.rows, a.cols, b.cols);
    assert!((m - 1) * c.rs + (n - 1) * c.cs < c.len, "gemm output view");
    let n_panels = n.div_ceil(NR);
    let mut bp = vec![S::zero(); n_panels * k * NR];
    for (p, panel) in bp.chunks_exact_mut(k * NR).enumerate() {
        let j0 = p * NR;
        pack_b(&b, j0, NR.min(n - j0), panel);
    }

    let c = &c;
    par::for_each_index(m.div_ceil(MR), |ri| {
        let r0 = ri * MR;
        let rows = MR.min(m - r0);
        let mut ap = vec![S::zero(); k * MR];
        pack_a(&a, r0, rows, &mut ap);
        // acc[j * MR + r] holds C[r][j]
        let mut acc = [S::zero(); MR * NR];
        for (p, panel) in bp.chunks_exact(k * NR).enumerate() {
            S::gemm_microkernel(&ap, panel, &mut acc);
            let j0 = p * NR;
            for j in 0..NR.min(n - j0) {
                let col = &acc[j * MR..j * MR + rows];
                let base = r0 * c.rs + (j0 + j) * c.cs;
                for (r, &v) in col.iter().enumerate() {
                    // SAFETY: in bounds by the assert above; rows r0..r0+rows
                    // belong to this worker alone.
                    unsafe {
                        let d = c.ptr.add(base + r * c.rs);
                        *d = if accumulate { *d + v } else { v };
                    }
                }
            }
        }
    });
}

multiversion! {
    /// Portable microkernel: `acc[j·MR + r] = Σ_k a[k·MR + r]·b[k·NR + j]`,
    /// fused multiply-add in ascending k.
    pub(crate) fn microkernel_portable<S: Scalar>(a: &[S], b: &[S], acc: &mut [S]) {
        let acc: &mut [S; MR * NR] = acc.try_into().expect("accumulator tile");
        acc.fill(S::zero());
        for (av, bv) in a.chunks_exact(MR).zip(b.chunks_exact(NR)) {
            let av: &[S; MR] = av.try_into().unwrap();
            for (j, &bj) in bv.iter().enumerate() {
                let col: &mut [S; MR] = (&mut acc[j * MR..(j + 1) * MR]).try_into().unwrap();
                for r in 0..MR {
                    col[r] = av[r].mul_add(bj, col[r]);
                }
            }
        }
    }
}

#[cfg(target_arch = "x86_64")]
pub(crate) mod x86 {
    use super::{MR, NR};
    use std::arch::x86_64::*;

    /// # Safety
    /// Requires AVX-512F; `a`, `b` hold the same number of k steps and
    /// `acc` holds `MR·NR` values.
    #[target_feature(enable = "avx512f")]
    pub unsafe fn microkernel_avx512(a: &[f32], b: &[f32], acc: &mut [f32]) {
        assert!(acc.len() == MR * NR && a.len() / MR == b.len() / NR);
        let steps = a.len() / MR;
        let mut c = [_mm512_setzero_ps(); NR];
        let (pa, pb) = (a.as_ptr(), b.as_ptr());
        for kk in 0..steps {
            let av = _mm512_loadu_ps(pa.add(kk * MR));
            let bk = pb.add(kk * NR);
            for (j, cj) in c.iter_mut().enumerate() {
                *cj = _mm512_fmadd_ps(av, _mm512_set1_ps(*bk.add(j)), *cj);
            }
        }
        for (j, cj) in c.iter().enumerate() {
            _mm512_storeu_ps(acc.as_mut_ptr().add(j * MR), *cj);
        }
    }

    /// # Safety
    /// Requires AVX2 and FMA; same layout contract as the AVX-512 kernel.
    #[target_feature(enable = "avx2,fma")]
    pub unsafe fn microkernel_avx2(a: &[f32], b: &[f32], acc: &mut [f32]) {
        assert!(acc.len() == MR * NR && a.len() / MR == b.len() / NR);
        let steps = a.len() / MR;
        let (pa, pb) = (a.as_ptr(), b.as_ptr());
        // two passes over half-width row blocks keep 12 accumulators live
        for half in 0..2 {
            let mut c = [_mm256_setzero_ps(); NR];
            for kk in 0..steps {
                let av = _mm256_loadu_ps(pa.add(kk * MR + half * 8));
                let bk = pb.add(kk * NR);
                for (j, cj) in c.iter_mut().enumerate() {
                    *cj = _mm256_fmadd_ps(av, _mm256_set1_ps(*bk.add(j)), *cj);
                }
            }
            for (j, cj) in c.iter().enumerate() {
                _mm256_storeu_ps(acc.as_mut_ptr().add(j * MR + half * 8), *cj);
            }
        }
    }
}
