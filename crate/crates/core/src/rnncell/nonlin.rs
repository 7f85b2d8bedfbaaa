use crate::error::{Error, Result};
use crate::matcore::Matrix;
use crate::scalar::Scalar;

/// Transition nonlinearity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Nonlinearity<T> {
    Identity,
    Tanh,
    Relu,
    /// `max(x, 0) + alpha * min(x, 0)`; a trainable slope is one shared scalar.
    Prelu { alpha: T, trainable: bool },
    /// Orthogonal permutation linear unit: each adjacent pair is sorted
    /// into (max, min).
    Oplu,
}

impl<T: Scalar> Nonlinearity<T> {
    pub fn name(&self) -> &'static str {
        match self {
            Nonlinearity::Identity => "identity",
            Nonlinearity::Tanh => "tanh",
            Nonlinearity::Relu => "relu",
            Nonlinearity::Prelu { .. } => "prelu",
            Nonlinearity::Oplu => "oplu",
        }
    }

    pub fn trainable_alpha(&self) -> Option<T> {
        match *self {
            Nonlinearity::Prelu {
                alpha,
                trainable: true,
            } => Some(alpha),
            _ => None,
        }
    }

    /// Largest singular value any Jacobian of this nonlinearity can have.
    pub fn max_jacobian_gain(&self) -> T {
        match *self {
            Nonlinearity::Prelu { alpha, .. } => T::one().max(alpha.abs()),
            _ => T::one(),
        }
    }

    pub fn validate(&self, n_hidden: usize) -> Result<()> {
        match *self {
            Nonlinearity::Oplu if !n_hidden.is_multiple_of(2) => Err(Error::InvalidArgument(format!(
                "OPLU pairs units, but there are {n_hidden} of them"
            ))),
            Nonlinearity::Prelu {
                alpha,
                trainable: false,
            } if alpha < T::zero() || alpha > T::one() => Err(Error::InvalidArgument(format!(
                "clamped PReLU slope {alpha} outside [0, 1]"
            ))),
            _ => Ok(()),
        }
    }
}

/// What the backward pass needs to apply the activation Jacobian.
#[derive(Clone, Debug, PartialEq)]
pub enum JacobianRecord<T> {
    /// Elementwise derivative, same shape as the pre-activation.
    Diagonal(Matrix<T>),
    /// OPLU: `swapped[(i, b)]` says pair `i` of column `b` was reordered.
    Permutation {
        rows: usize,
        cols: usize,
        swapped: Vec<bool>,
    },
}

impl<T: Scalar> JacobianRecord<T> {
    /// Multiplies an upstream gradient by the Jacobian (its own transpose for
    /// the diagonal and pairwise-swap cases).
    pub fn apply(&self, upstream: &Matrix<T>) -> Matrix<T> {
        match self {
            JacobianRecord::Diagonal(d) => d.hadamard(upstream).expect("tape shape"),
            JacobianRecord::Permutation { cols, swapped, .. } => {
                let mut out = upstream.clone();
                for (k, _) in swapped.iter().enumerate().filter(|(_, &s)| s) {
                    let (pair, col) = (k / cols, k % cols);
                    let (r0, r1) = (2 * pair, 2 * pair + 1);
                    out[(r0, col)] = upstream[(r1, col)];
                    out[(r1, col)] = upstream[(r0, col)];
                }
                out
            }
        }
    }

    /// Largest singular value of the Jacobian for column `col`.
    pub fn column_gain(&self, col: usize) -> T {
        match self {
            JacobianRecord::Diagonal(d) => (0..d.rows()).fold(T::zero(), |m, i| m.max(d[(i, col)].abs())),
            JacobianRecord::Permutation { .. } => T::one(),
        }
    }

    /// Dense Jacobian of column `col` (`n x n`).
    pub fn column_matrix(&self, col: usize) -> Matrix<T> {
        match self {
            JacobianRecord::Diagonal(d) => Matrix::from_diag(&d.col_to_vec(col)),
            JacobianRecord::Permutation { rows, cols, swapped } => {
                let mut m = Matrix::identity(*rows);
                for pair in 0..rows / 2 {
                    if swapped[pair * cols + col] {
                        let (r0, r1) = (2 * pair, 2 * pair + 1);
                        m[(r0, r0)] = T::zero();
                        m[(r1, r1)] = T::zero();
                        m[(r0, r1)] = T::one();
                        m[(r1, r0)] = T::one();
                    }
                }
                m
            }
        }
    }
}

/// Applies the nonlinearity column by column.
pub fn activate<T: Scalar>(kind: Nonlinearity<T>, a: &Matrix<T>) -> Result<(Matrix<T>, JacobianRecord<T>)> {
    let zero = T::zero();
    let one = T::one();
    Ok(match kind {
        Nonlinearity::Identity => (a.clone(), JacobianRecord::Diagonal(a.map(|_| one))),
        Nonlinearity::Tanh => {
            let h = a.map(|x| x.tanh());
            let d = h.map(|y| one - y * y);
            (h, JacobianRecord::Diagonal(d))
        }
        Nonlinearity::Relu => (
            a.map(|x| if x > zero { x } else { zero }),
            JacobianRecord::Diagonal(a.map(|x| if x > zero { one } else { zero })),
        ),
        Nonlinearity::Prelu { alpha, .. } => (
            a.map(|x| if x > zero { x } else { alpha * x }),
            JacobianRecord::Diagonal(a.map(|x| if x > zero { one } else { alpha })),
        ),
        Nonlinearity::Oplu => {
            let (rows, cols) = a.shape();
            if rows % 2 != 0 {
                return Err(Error::InvalidArgument(format!(
                    "OPLU needs an even number of units, got {rows}"
                )));
            }
            let mut h = a.clone();
            let mut swapped = vec![false; rows / 2 * cols];
            for pair in 0..rows / 2 {
                for col in 0..cols {
                    let (x, y) = (a[(2 * pair, col)], a[(2 * pair + 1, col)]);
                    if y > x {
                        h[(2 * pair, col)] = y;
                        h[(2 * pair + 1, col)] = x;
                        swapped[pair * cols + col] = true;
                    }
                }
            }
            (h, JacobianRecord::Permutation { rows, cols, swapped })
        }
    })
}

/// Vector form of [`activate`].
pub fn apply_nonlinearity<T: Scalar>(
    kind: Nonlinearity<T>,
    a: &[T],
) -> Result<(Vec<T>, JacobianRecord<T>)> {
    let (h, jac) = activate(kind, &Matrix::column(a))?;
    Ok((h.into_vec(), jac))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matcore::{l2_norm, Rng};

    #[test]
    fn prelu_with_unit_slope_is_identity() {
        let x = [-2.0, -0.1, 0.0, 0.5, 3.0];
        let kind = Nonlinearity::Prelu { alpha: 1.0, trainable: false };
        let (h, _) = apply_nonlinearity(kind, &x).unwrap();
        assert_eq!(h, x.to_vec());
    }

    #[test]
    fn oplu_sorts_pairs_descending() {
        assert_eq!(apply_nonlinearity(Nonlinearity::Oplu, &[3.0, -1.0]).unwrap().0, vec![3.0, -1.0]);
        assert_eq!(apply_nonlinearity(Nonlinearity::Oplu, &[-1.0, 3.0]).unwrap().0, vec![3.0, -1.0]);
        assert!(apply_nonlinearity(Nonlinearity::Oplu, &[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn tanh_jacobian_at_zero_is_one() {
        let (_, jac) = apply_nonlinearity(Nonlinearity::Tanh, &[0.0; 4]).unwrap();
        assert_eq!(jac, JacobianRecord::Diagonal(Matrix::column(&[1.0; 4])));
    }

    #[test]
    fn oplu_preserves_norm_bitwise() {
        let mut rng = Rng::new(1);
        for _ in 0..1000 {
            let x: Vec<f64> = (0..16).map(|_| rng.normal()).collect();
            let (y, _) = apply_nonlinearity(Nonlinearity::Oplu, &x).unwrap();
            assert_eq!(l2_norm(&x).to_bits(), l2_norm(&y).to_bits());
        }
    }

    #[test]
    fn permutation_jacobian_matches_dense_form() {
        let a = Matrix::from_vec(4, 2, vec![1.0, 5.0, 2.0, -1.0, -3.0, 0.0, 4.0, 0.5]).unwrap();
        let (_, jac) = activate(Nonlinearity::Oplu, &a).unwrap();
        let up = Matrix::from_fn(4, 2, |i, j| (i * 2 + j) as f64);
        let applied = jac.apply(&up);
        for col in 0..2 {
            let dense = jac.column_matrix(col);
            let expect = dense.transpose().mul_vec(&up.col_to_vec(col)).unwrap();
            assert_eq!(applied.col_to_vec(col), expect);
        }
    }

    #[test]
    fn validation_rules() {
        assert!(Nonlinearity::<f64>::Oplu.validate(5).is_err());
        assert!(Nonlinearity::Prelu { alpha: 1.5, trainable: false }.validate(4).is_err());
        assert!(Nonlinearity::Prelu { alpha: 1.5, trainable: true }.validate(4).is_ok());
    }
}
