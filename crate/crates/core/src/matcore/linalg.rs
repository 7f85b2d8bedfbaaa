//! Factorizations: LU solve, Householder QR, power iteration and a one-sided
//! Jacobi SVD for small matrices.

use crate::error::{Error, Result};
use crate::matcore::matrix::{dot, l2_norm, Matrix};
use crate::matcore::rng::Rng;
use crate::scalar::Scalar;

/// Relative pivot threshold below which a matrix is treated as singular.
const PIVOT_TOL: f64 = 1e-14;

/// LU factorization with partial pivoting, `P A = L U`, packed in one matrix.
#[derive(Clone, Debug)]
pub struct Lu<T> {
    lu: Matrix<T>,
    perm: Vec<usize>,
    swaps: usize,
}

impl<T: Scalar> Lu<T> {
    pub fn factor(a: &Matrix<T>) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::dim(format!(
                "LU needs a square matrix, got {}x{}",
                a.rows(),
                a.cols()
            )));
        }
        let n = a.rows();
        let scale = a.max_abs();
        let tol = T::of(PIVOT_TOL) * scale;
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut swaps = 0;
        for k in 0..n {
            let (pivot_row, pivot_abs) = (k..n)
                .map(|i| (i, lu[(i, k)].abs()))
                .fold((k, -T::one()), |best, cur| if cur.1 > best.1 { cur } else { best });
            if pivot_abs <= tol || scale == T::zero() {
                return Err(Error::Singular {
                    column: k,
                    pivot: pivot_abs.as_f64(),
                });
            }
            if pivot_row != k {
                for j in 0..n {
                    let tmp = lu[(k, j)];
                    lu[(k, j)] = lu[(pivot_row, j)];
                    lu[(pivot_row, j)] = tmp;
                }
                perm.swap(k, pivot_row);
                swaps += 1;
            }
            let pivot = lu[(k, k)];
            for i in k + 1..n {
                let factor = lu[(i, k)] / pivot;
                lu[(i, k)] = factor;
                if factor != T::zero() {
                    for j in k + 1..n {
                        let u = lu[(k, j)];
                        lu[(i, j)] -= factor * u;
                    }
                }
            }
        }
        Ok(Lu { lu, perm, swaps })
    }

    /// Solves `A X = B` for every column of `B`.
    pub fn solve(&self, b: &Matrix<T>) -> Result<Matrix<T>> {
        let n = self.lu.rows();
        if b.rows() != n {
            return Err(Error::dim(format!(
                "right-hand side has {} rows, system has {n}",
                b.rows()
            )));
        }
        let k = b.cols();
        let mut x = Matrix::from_fn(n, k, |i, j| b[(self.perm[i], j)]);
        // forward substitution with unit-diagonal L, row-oriented for locality
        for i in 0..n {
            for l in 0..i {
                let f = self.lu[(i, l)];
                if f != T::zero() {
                    for j in 0..k {
                        let v = x[(l, j)];
                        x[(i, j)] -= f * v;
                    }
                }
            }
        }
        for i in (0..n).rev() {
            for l in i + 1..n {
                let f = self.lu[(i, l)];
                if f != T::zero() {
                    for j in 0..k {
                        let v = x[(l, j)];
                        x[(i, j)] -= f * v;
                    }
                }
            }
            let d = self.lu[(i, i)];
            for j in 0..k {
                x[(i, j)] /= d;
            }
        }
        Ok(x)
    }

    pub fn determinant(&self) -> T {
        let d = self
            .lu
            .diag()
            .into_iter()
            .fold(T::one(), |acc, x| acc * x);
        if self.swaps % 2 == 1 {
            -d
        } else {
            d
        }
    }
}

/// Solves `A X = B` by LU with partial pivoting.
pub fn solve<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    Lu::factor(a)?.solve(b)
}

pub fn determinant<T: Scalar>(a: &Matrix<T>) -> Result<T> {
    match Lu::factor(a) {
        Ok(lu) => Ok(lu.determinant()),
        Err(Error::Singular { .. }) => Ok(T::zero()),
        Err(e) => Err(e),
    }
}

/// Thin Householder QR of a tall matrix (`rows >= cols`).
///
/// Returns `(Q, R)` with `Q` of shape `rows x cols` and `R` upper triangular
/// `cols x cols`.
pub fn qr<T: Scalar>(a: &Matrix<T>) -> Result<(Matrix<T>, Matrix<T>)> {
    let (m, n) = a.shape();
    if m < n {
        return Err(Error::dim(format!("QR needs rows >= cols, got {m}x{n}")));
    }
    let mut r = a.clone();
    let mut reflectors: Vec<Vec<T>> = Vec::with_capacity(n);
    for k in 0..n {
        let mut v: Vec<T> = (k..m).map(|i| r[(i, k)]).collect();
        let alpha = l2_norm(&v);
        let sign = if v[0] >= T::zero() { T::one() } else { -T::one() };
        v[0] += sign * alpha;
        let vnorm = l2_norm(&v);
        if vnorm > T::zero() {
            for x in &mut v {
                *x /= vnorm;
            }
            for j in k..n {
                let proj = (k..m).fold(T::zero(), |acc, i| acc + v[i - k] * r[(i, j)]);
                let two_proj = proj + proj;
                for i in k..m {
                    r[(i, j)] -= two_proj * v[i - k];
                }
            }
        }
        reflectors.push(v);
    }
    let mut q = Matrix::from_fn(m, n, |i, j| if i == j { T::one() } else { T::zero() });
    for k in (0..n).rev() {
        let v = &reflectors[k];
        for j in 0..n {
            let proj = (k..m).fold(T::zero(), |acc, i| acc + v[i - k] * q[(i, j)]);
            let two_proj = proj + proj;
            for i in k..m {
                q[(i, j)] -= two_proj * v[i - k];
            }
        }
    }
    let r = Matrix::from_fn(n, n, |i, j| if j >= i { r[(i, j)] } else { T::zero() });
    Ok((q, r))
}

/// Power-iteration estimate of the largest singular value of `m`.
///
/// Iterates on `MᵀM` from a fixed pseudo-random start, so repeated calls agree
/// exactly. The estimate never decreases with `iters` and never exceeds the
/// Frobenius norm.
pub fn spectral_norm_estimate<T: Scalar>(m: &Matrix<T>, iters: usize) -> T {
    let n = m.cols();
    if n == 0 || m.rows() == 0 {
        return T::zero();
    }
    let mut rng = Rng::new(0x5bd1_e995);
    let mut v: Vec<T> = (0..n).map(|_| T::of(rng.normal())).collect();
    let norm = l2_norm(&v);
    v.iter_mut().for_each(|x| *x /= norm);
    for _ in 0..iters.max(1) {
        let mv = m.mul_vec(&v).expect("conforming");
        let w = m.mul_vec_t(&mv).expect("conforming");
        let wn = l2_norm(&w);
        if wn == T::zero() {
            return T::zero();
        }
        v = w.into_iter().map(|x| x / wn).collect();
    }
    l2_norm(&m.mul_vec(&v).expect("conforming"))
}

/// Full singular value decomposition `A = U diag(s) Vᵀ` by one-sided
/// (Hestenes) Jacobi rotations.
#[derive(Clone, Debug)]
pub struct Svd<T> {
    pub u: Matrix<T>,
    pub s: Vec<T>,
    pub v: Matrix<T>,
}

const JACOBI_MAX_SWEEPS: usize = 80;

/// One-sided Jacobi SVD. Singular values come back in descending order.
///
/// Cubic per sweep; meant for matrices up to a few hundred rows.
pub fn jacobi_svd<T: Scalar>(a: &Matrix<T>) -> Svd<T> {
    if a.rows() < a.cols() {
        let t = jacobi_svd(&a.transpose());
        return Svd {
            u: t.v,
            s: t.s,
            v: t.u,
        };
    }
    let (m, n) = a.shape();
    // columns of A and V stored as rows for contiguous rotations
    let mut cols: Vec<Vec<T>> = (0..n).map(|j| a.col_to_vec(j)).collect();
    let mut vcols: Vec<Vec<T>> = (0..n)
        .map(|j| (0..n).map(|i| if i == j { T::one() } else { T::zero() }).collect())
        .collect();
    let eps = T::epsilon();
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = dot(&cols[p], &cols[p]);
                let beta = dot(&cols[q], &cols[q]);
                let gamma = dot(&cols[p], &cols[q]);
                if gamma == T::zero() || gamma.abs() <= eps * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (gamma + gamma);
                let t = zeta.signum() / (zeta.abs() + (T::one() + zeta * zeta).sqrt());
                let c = T::one() / (T::one() + t * t).sqrt();
                let s = c * t;
                rotate(&mut cols, p, q, c, s);
                rotate(&mut vcols, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }
    let mut order: Vec<(T, usize)> = cols.iter().map(|c| l2_norm(c)).zip(0..n).collect();
    order.sort_by(|x, y| y.0.partial_cmp(&x.0).expect("finite singular values"));
    let mut u = Matrix::zeros(m, n);
    let mut v = Matrix::zeros(n, n);
    let mut s = Vec::with_capacity(n);
    for (k, &(sigma, j)) in order.iter().enumerate() {
        s.push(sigma);
        if sigma > T::zero() {
            let col: Vec<T> = cols[j].iter().map(|&x| x / sigma).collect();
            u.set_col(k, &col);
        }
        v.set_col(k, &vcols[j]);
    }
    Svd { u, s, v }
}

fn rotate<T: Scalar>(cols: &mut [Vec<T>], p: usize, q: usize, c: T, s: T) {
    let (left, right) = cols.split_at_mut(q);
    for (x, y) in left[p].iter_mut().zip(right[0].iter_mut()) {
        let (xp, xq) = (*x, *y);
        *x = c * xp - s * xq;
        *y = s * xp + c * xq;
    }
}

/// Singular values only, descending.
pub fn singular_values_jacobi<T: Scalar>(a: &Matrix<T>) -> Vec<T> {
    jacobi_svd(a).s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random(rows: usize, cols: usize, seed: u64) -> Matrix<f64> {
        let mut r = Rng::new(seed);
        Matrix::from_fn(rows, cols, |_, _| r.normal())
    }

    #[test]
    fn solve_identity_and_scaled_identity() {
        let b = random(3, 2, 1);
        assert_eq!(solve(&Matrix::identity(3), &b).unwrap(), b);
        let x = solve(&Matrix::identity(3).scale(2.0), &b).unwrap();
        assert!(x.sub(&b.scale(0.5)).unwrap().max_abs() < 1e-16);
    }

    #[test]
    fn solve_residual_on_well_conditioned_system() {
        let mut a = random(8, 8, 2);
        for i in 0..8 {
            a[(i, i)] += 8.0;
        }
        let b = random(8, 1, 3);
        let x = solve(&a, &b).unwrap();
        let resid = a.matmul(&x).unwrap().sub(&b).unwrap().frobenius_norm();
        assert!(resid < 1e-10 * b.frobenius_norm());
    }

    #[test]
    fn singular_matrix_is_rejected() {
        let a = Matrix::from_vec(2, 2, vec![1.0, 2.0, 2.0, 4.0]).unwrap();
        assert!(matches!(
            solve(&a, &Matrix::identity(2)),
            Err(Error::Singular { .. })
        ));
        assert!(solve(&Matrix::<f64>::zeros(3, 3), &Matrix::identity(3)).is_err());
    }

    #[test]
    fn determinant_tracks_row_swaps() {
        let a = Matrix::from_vec(2, 2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        assert_eq!(determinant(&a).unwrap(), -1.0);
        let b = Matrix::<f64>::from_diag(&[2.0, 3.0, 0.5]);
        assert!((determinant(&b).unwrap() - 3.0).abs() < 1e-15);
    }

    #[test]
    fn qr_reconstructs_and_is_orthonormal() {
        let a = random(7, 4, 4);
        let (q, r) = qr(&a).unwrap();
        assert!(q.orthogonality_residual() < 1e-13);
        assert!(q.matmul(&r).unwrap().sub(&a).unwrap().max_abs() < 1e-13);
        for i in 0..4 {
            for j in 0..i {
                assert_eq!(r[(i, j)], 0.0);
            }
        }
    }

    #[test]
    fn power_iteration_on_simple_cases() {
        assert!((spectral_norm_estimate(&Matrix::<f64>::identity(4), 50) - 1.0).abs() < 1e-10);
        let d = Matrix::<f64>::from_diag(&[3.0, 1.0, 0.5]);
        assert!((spectral_norm_estimate(&d, 100) - 3.0).abs() < 1e-8);
        assert_eq!(spectral_norm_estimate(&Matrix::<f64>::zeros(3, 3), 10), 0.0);
    }

    #[test]
    fn power_iteration_is_monotone_in_iterations() {
        let a = random(10, 10, 8);
        let mut prev = 0.0;
        for iters in 1..40 {
            let est = spectral_norm_estimate(&a, iters);
            assert!(est >= prev * (1.0 - 1e-15), "iters {iters}: {est} < {prev}");
            assert!(est <= a.frobenius_norm());
            prev = est;
        }
    }

    #[test]
    fn jacobi_svd_reconstructs() {
        for &(r, c) in &[(5, 5), (6, 3), (3, 6)] {
            let a = random(r, c, 10 + r as u64);
            let svd = jacobi_svd(&a);
            let us = svd.u.scale_cols(&svd.s).unwrap();
            let back = us.matmul_nt(&svd.v).unwrap();
            assert!(back.sub(&a).unwrap().max_abs() < 1e-12, "{r}x{c}");
            assert!(svd.s.windows(2).all(|w| w[0] >= w[1]));
        }
    }
}
