use crate::matcore::linalg::qr;
use crate::matcore::matrix::Matrix;
use crate::matcore::rng::Rng;
use crate::scalar::Scalar;

/// Haar-distributed (semi-)orthogonal matrix.
///
/// QR of a Gaussian draw with the signs of `R`'s diagonal folded into `Q`.
/// Tall results have orthonormal columns, wide results orthonormal rows.
pub fn orthogonal_init<T: Scalar>(rows: usize, cols: usize, rng: &mut Rng) -> Matrix<T> {
    assert!(rows >= 1 && cols >= 1, "orthogonal_init needs a non-empty shape");
    if rows < cols {
        return orthogonal_init::<T>(cols, rows, rng).transpose();
    }
    let g = Matrix::from_fn(rows, cols, |_, _| T::of(rng.normal()));
    let (q, r) = qr(&g).expect("tall Gaussian draw");
    let signs: Vec<T> = r
        .diag()
        .into_iter()
        .map(|d| if d < T::zero() { -T::one() } else { T::one() })
        .collect();
    q.scale_cols(&signs).expect("one sign per column")
}

/// I.i.d. normal entries with variance `2 / (rows + cols)`.
pub fn glorot_normal_init<T: Scalar>(rows: usize, cols: usize, rng: &mut Rng) -> Matrix<T> {
    assert!(rows >= 1 && cols >= 1, "glorot_normal_init needs a non-empty shape");
    let std = (2.0 / (rows + cols) as f64).sqrt();
    Matrix::from_fn(rows, cols, |_, _| T::of(std * rng.normal()))
}

pub fn identity_init<T: Scalar>(n: usize) -> Matrix<T> {
    assert!(n >= 1, "identity_init needs n >= 1");
    Matrix::identity(n)
}
