//! Floating point abstraction shared by every numeric routine in the crate.

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};
use std::fmt::{Debug, Display, LowerExp};

/// Real scalar the linear algebra, model and optimizers are generic over.
///
/// Implemented for `f32` and `f64`. Dense products are routed through
/// [`Scalar::gemm`], which the two hardware floats back with a blocked kernel.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Default
    + Debug
    + Display
    + LowerExp
    + Send
    + Sync
    + 'static
{
    /// Converts a literal or a sampled `f64` into this scalar.
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 is representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }

    /// `c = alpha * op(a) * op(b) + beta * c` on strided storage.
    ///
    /// `a` is `m x k` with row stride `rsa` and column stride `csa`, `b` is
    /// `k x n`, `c` is `m x n`. Transposition is expressed by swapping strides.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: usize,
        csa: usize,
        b: &[Self],
        rsb: usize,
        csb: usize,
        beta: Self,
        c: &mut [Self],
        rsc: usize,
        csc: usize,
    ) {
        gemm_naive(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

/// Triple-loop reference product with the same contract as [`Scalar::gemm`].
#[allow(clippy::too_many_arguments)]
pub fn gemm_naive<T: Float>(
    m: usize,
    k: usize,
    n: usize,
    alpha: T,
    a: &[T],
    rsa: usize,
    csa: usize,
    b: &[T],
    rsb: usize,
    csb: usize,
    beta: T,
    c: &mut [T],
    rsc: usize,
    csc: usize,
) {
    for i in 0..m {
        for j in 0..n {
            let mut acc = T::zero();
            for l in 0..k {
                acc = acc + a[i * rsa + l * csa] * b[l * rsb + j * csb];
            }
            let slot = &mut c[i * rsc + j * csc];
            *slot = if beta == T::zero() {
                alpha * acc
            } else {
                alpha * acc + beta * *slot
            };
        }
    }
}

fn check_extent(len: usize, rows: usize, cols: usize, rs: usize, cs: usize) {
    if rows > 0 && cols > 0 {
        assert!(
            (rows - 1) * rs + (cols - 1) * cs < len,
            "gemm operand out of bounds"
        );
    }
}

macro_rules! blocked_gemm {
    ($t:ty, $kernel:path) => {
        impl Scalar for $t {
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                rsa: usize,
                csa: usize,
                b: &[Self],
                rsb: usize,
                csb: usize,
                beta: Self,
                c: &mut [Self],
                rsc: usize,
                csc: usize,
            ) {
                check_extent(a.len(), m, k, rsa, csa);
                check_extent(b.len(), k, n, rsb, csb);
                check_extent(c.len(), m, n, rsc, csc);
                // SAFETY: every operand extent was bounds-checked above.
                unsafe {
                    $kernel(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        rsa as isize,
                        csa as isize,
                        b.as_ptr(),
                        rsb as isize,
                        csb as isize,
                        beta,
                        c.as_mut_ptr(),
                        rsc as isize,
                        csc as isize,
                    );
                }
            }
        }
    };
}

blocked_gemm!(f64, matrixmultiply::dgemm);
blocked_gemm!(f32, matrixmultiply::sgemm);

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blocked_kernel_matches_reference_product() {
        let (m, k, n) = (7, 5, 9);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.11).cos()).collect();
        let mut fast = vec![1.0; m * n];
        let mut slow = vec![1.0; m * n];
        f64::gemm(m, k, n, 2.0, &a, k, 1, &b, n, 1, 0.5, &mut fast, n, 1);
        gemm_naive(m, k, n, 2.0, &a, k, 1, &b, n, 1, 0.5, &mut slow, n, 1);
        for (x, y) in fast.iter().zip(&slow) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn transposed_strides_read_the_transpose() {
        // a is stored 2x3; read it as its 3x2 transpose
        let a = [1.0f32, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [1.0f32, 1.0];
        let mut c = [0.0f32; 3];
        f32::gemm(3, 2, 1, 1.0, &a, 1, 3, &b, 1, 1, 0.0, &mut c, 1, 1);
        assert_eq!(c, [5.0, 7.0, 9.0]);
    }
}
