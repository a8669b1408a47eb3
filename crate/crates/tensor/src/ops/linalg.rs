use crate::graph::Var;
use crate::tensor::Tensor;

/// `c = alpha * op(a) * op(b) + beta * c` on row-major buffers.
///
/// `a` is stored `m x k` (or `k x m` when `ta`), `b` is `k x n` (or `n x k`
/// when `tb`), `c` is `m x n` with row stride `ldc`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    ta: bool,
    b: &[f32],
    tb: bool,
    c: &mut [f32],
    ldc: usize,
    beta: f32,
) {
    gemm_strided(m, k, n, a, if ta { (1, m) } else { (k, 1) }, b, if tb { (1, k) } else { (n, 1) }, c, ldc, beta);
}

/// Fully strided variant; strides are `(row, col)` of the logical operand.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm_strided(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    a_strides: (usize, usize),
    b: &[f32],
    b_strides: (usize, usize),
    c: &mut [f32],
    ldc: usize,
    beta: f32,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for i in 0..m {
            for v in &mut c[i * ldc..i * ldc + n] {
                *v *= beta;
            }
        }
        return;
    }
    let a_last = (m - 1) * a_strides.0 + (k - 1) * a_strides.1;
    let b_last = (k - 1) * b_strides.0 + (n - 1) * b_strides.1;
    assert!(a_last < a.len() && b_last < b.len(), "gemm operand out of bounds");
    assert!((m - 1) * ldc + n <= c.len(), "gemm output out of bounds");
    // SAFETY: bounds of every operand were checked above.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0 as isize,
            a_strides.1 as isize,
            b.as_ptr(),
            b_strides.0 as isize,
            b_strides.1 as isize,
            beta,
            c.as_mut_ptr(),
            ldc as isize,
            1,
        );
    }
}

impl Var {
    /// Matrix product of rank-2 operands with optional transposes.
    pub fn matmul_t(&self, other: &Var, ta: bool, tb: bool) -> Var {
        let a = self.shape();
        let b = other.shape();
        assert!(a.len() == 2 && b.len() == 2, "matmul needs rank-2 operands, got {a:?} and {b:?}");
        let ar = self.reshape(vec![1, a[0], a[1]]);
        let br = other.reshape(vec![1, b[0], b[1]]);
        let c = ar.bmm(&br, ta, tb);
        let cs = c.shape();
        c.reshape(vec![cs[1], cs[2]])
    }

    pub fn matmul(&self, other: &Var) -> Var {
        self.matmul_t(other, false, false)
    }

    /// Batched matrix product over a shared leading axis.
    pub fn bmm(&self, other: &Var, ta: bool, tb: bool) -> Var {
        let sa = self.shape();
        let sb = other.shape();
        assert!(sa.len() == 3 && sb.len() == 3 && sa[0] == sb[0], "bmm shapes {sa:?} x {sb:?}");
        let batch = sa[0];
        let (m, k) = if ta { (sa[2], sa[1]) } else { (sa[1], sa[2]) };
        let (k2, n) = if tb { (sb[2], sb[1]) } else { (sb[1], sb[2]) };
        assert_eq!(k, k2, "bmm inner dims {sa:?} (ta={ta}) x {sb:?} (tb={tb})");
        let mut out = Tensor::zeros(vec![batch, m, n]);
        {
            let av = self.value();
            let bv = other.value();
            let od = out.data_mut();
            for bi in 0..batch {
                gemm(
                    m,
                    k,
                    n,
                    &av.data()[bi * m * k..(bi + 1) * m * k],
                    ta,
                    &bv.data()[bi * k * n..(bi + 1) * k * n],
                    tb,
                    &mut od[bi * m * n..(bi + 1) * m * n],
                    n,
                    0.0,
                );
            }
        }
        Var::from_op(
            out,
            vec![self.clone(), other.clone()],
            Box::new(move |g, inputs, _, needs| {
                let (a, b) = (inputs[0], inputs[1]);
                let gd = g.data();
                let ga = needs[0].then(|| {
                    let mut out = Tensor::zeros(a.shape().to_vec());
                    let od = out.data_mut();
                    for bi in 0..batch {
                        let gs = &gd[bi * m * n..(bi + 1) * m * n];
                        let bs = &b.data()[bi * k * n..(bi + 1) * k * n];
                        let os = &mut od[bi * m * k..(bi + 1) * m * k];
                        if !ta {
                            // dA[m,k] = dC[m,n] * op(B)^T
                            gemm(m, n, k, gs, false, bs, !tb, os, k, 0.0);
                        } else {
                            // dA stored [k,m] = op(B) * dC^T
                            gemm(k, n, m, bs, tb, gs, true, os, m, 0.0);
                        }
                    }
                    out
                });
                let gb = needs[1].then(|| {
                    let mut out = Tensor::zeros(b.shape().to_vec());
                    let od = out.data_mut();
                    for bi in 0..batch {
                        let gs = &gd[bi * m * n..(bi + 1) * m * n];
                        let as_ = &a.data()[bi * m * k..(bi + 1) * m * k];
                        let os = &mut od[bi * k * n..(bi + 1) * k * n];
                        if !tb {
                            // dB[k,n] = op(A)^T * dC
                            gemm(k, m, n, as_, !ta, gs, false, os, n, 0.0);
                        } else {
                            // dB stored [n,k] = dC^T * op(A)
                            gemm(n, m, k, gs, true, as_, ta, os, k, 0.0);
                        }
                    }
                    out
                });
                vec![ga, gb]
            }),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_small() {
        let a = Var::constant(Tensor::new(vec![2, 3], vec![1., 2., 3., 4., 5., 6.]));
        let b = Var::constant(Tensor::new(vec![3, 2], vec![7., 8., 9., 10., 11., 12.]));
        assert_eq!(a.matmul(&b).value().data(), &[58., 64., 139., 154.]);
        // a^T a via transposed flags
        let ata = a.matmul_t(&a, true, false);
        assert_eq!(ata.shape(), vec![3, 3]);
        assert_eq!(ata.value().data()[0], 17.0);
        let aat = a.matmul_t(&a, false, true);
        assert_eq!(aat.value().data(), &[14., 32., 32., 77.]);
    }
}
