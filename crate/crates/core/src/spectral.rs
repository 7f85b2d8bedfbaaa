//! Transition matrices factorized as `W = U diag(s) Vᵀ`.
//!
//! `U` and `V` stay orthogonal (they are only ever moved by Cayley steps) and
//! the singular values `s` are produced from free parameters `p`. In
//! sigmoid-margin mode `s_i = 2m (sigmoid(p_i) - 1/2) + 1`, which keeps every
//! singular value inside `(1 - m, 1 + m)`. The soft alternatives, an
//! orthogonality penalty on `W` and a mean-one Gaussian prior on `s`, live here
//! too.

use crate::error::{Error, Result};
use crate::matcore::{jacobi_svd, orthogonal_init, Matrix, Rng};
use crate::scalar::Scalar;

/// How the singular values are produced from the spectrum parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SpectrumMode<T> {
    /// `s = 2m (sigmoid(p) - 1/2) + 1` with margin `m` in `(0, 1]`.
    SigmoidMargin(T),
    /// `s = p`, unconstrained.
    Direct,
    /// `s = 1`; `p` is never touched. Margin zero.
    FrozenOrthogonal,
}

impl<T: Scalar> SpectrumMode<T> {
    /// Mode implied by an optional margin: none is direct, zero is frozen.
    pub fn from_margin(margin: Option<T>) -> Result<Self> {
        match margin {
            None => Ok(SpectrumMode::Direct),
            Some(m) if m == T::zero() => Ok(SpectrumMode::FrozenOrthogonal),
            Some(m) if m > T::zero() && m <= T::one() => Ok(SpectrumMode::SigmoidMargin(m)),
            Some(m) => Err(Error::InvalidArgument(format!(
                "margin {m} outside [0, 1]"
            ))),
        }
    }

    pub fn margin(&self) -> Option<T> {
        match *self {
            SpectrumMode::SigmoidMargin(m) => Some(m),
            SpectrumMode::FrozenOrthogonal => Some(T::zero()),
            SpectrumMode::Direct => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FactorizedTransition<T> {
    pub u: Matrix<T>,
    pub v: Matrix<T>,
    pub p: Vec<T>,
    pub mode: SpectrumMode<T>,
}

impl<T: Scalar> FactorizedTransition<T> {
    /// Orthogonal bases with every singular value at one.
    pub fn orthogonal(n: usize, mode: SpectrumMode<T>, rng: &mut Rng) -> Self {
        let u = orthogonal_init(n, n, rng);
        let v = orthogonal_init(n, n, rng);
        Self::with_unit_spectrum(u, v, mode)
    }

    /// `U = V = I`, unit spectrum.
    pub fn identity(n: usize, mode: SpectrumMode<T>) -> Self {
        Self::with_unit_spectrum(Matrix::identity(n), Matrix::identity(n), mode)
    }

    fn with_unit_spectrum(u: Matrix<T>, v: Matrix<T>, mode: SpectrumMode<T>) -> Self {
        let n = u.rows();
        let fill = match mode {
            SpectrumMode::Direct => T::one(),
            _ => T::zero(),
        };
        FactorizedTransition {
            u,
            v,
            p: vec![fill; n],
            mode,
        }
    }

    /// Factorizes an arbitrary square matrix by SVD.
    ///
    /// In sigmoid-margin mode singular values outside the margin are pulled
    /// just inside it; in frozen mode the spectrum is discarded.
    pub fn from_matrix(w: &Matrix<T>, mode: SpectrumMode<T>) -> Result<Self> {
        if !w.is_square() {
            return Err(Error::dim("transition must be square"));
        }
        let svd = jacobi_svd(w);
        let p = match mode {
            SpectrumMode::Direct => svd.s.clone(),
            SpectrumMode::FrozenOrthogonal => vec![T::zero(); svd.s.len()],
            SpectrumMode::SigmoidMargin(m) => {
                let half = T::of(0.5);
                let edge = T::of(1e-6);
                svd.s
                    .iter()
                    .map(|&s| {
                        let q = ((s - T::one()) / (m + m) + half).max(edge).min(T::one() - edge);
                        (q / (T::one() - q)).ln()
                    })
                    .collect()
            }
        };
        Ok(FactorizedTransition {
            u: svd.u,
            v: svd.v,
            p,
            mode,
        })
    }

    pub fn n(&self) -> usize {
        self.u.rows()
    }

    /// Realized singular values.
    pub fn singular_values(&self) -> Vec<T> {
        match self.mode {
            SpectrumMode::SigmoidMargin(m) => singular_values(&self.p, m),
            SpectrumMode::Direct => self.p.clone(),
            SpectrumMode::FrozenOrthogonal => vec![T::one(); self.p.len()],
        }
    }

    pub fn compose(&self) -> Matrix<T> {
        compose(&self.u, &self.singular_values(), &self.v).expect("factors conform")
    }

    /// Maps a raw singular-value gradient to the gradient applied to `p`.
    ///
    /// Returns `None` in frozen mode, where `p` is never updated.
    pub fn parameter_gradient(&self, g_s: &[T]) -> Option<Vec<T>> {
        match self.mode {
            SpectrumMode::SigmoidMargin(m) => {
                Some(spectrum_gradient(g_s, &self.p, m).expect("positive margin"))
            }
            SpectrumMode::Direct => Some(g_s.to_vec()),
            SpectrumMode::FrozenOrthogonal => None,
        }
    }
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `s_i = 2m (sigmoid(p_i) - 1/2) + 1`.
pub fn singular_values<T: Scalar>(p: &[T], m: T) -> Vec<T> {
    let two_m = m + m;
    let half = T::of(0.5);
    p.iter()
        .map(|&pi| two_m * (sigmoid(pi) - half) + T::one())
        .collect()
}

/// `W = U diag(s) Vᵀ`.
pub fn compose<T: Scalar>(u: &Matrix<T>, s: &[T], v: &Matrix<T>) -> Result<Matrix<T>> {
    if u.cols() != s.len() || v.cols() != s.len() {
        return Err(Error::dim(format!(
            "factors {}x{}, {} values, {}x{}",
            u.rows(),
            u.cols(),
            s.len(),
            v.rows(),
            v.cols()
        )));
    }
    u.scale_cols(s)?.matmul_nt(v)
}

/// Gradients of the factors of `W = U diag(s) Vᵀ`, given `G_W = ∂L/∂W`.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorGradients<T> {
    pub u: Matrix<T>,
    pub s: Vec<T>,
    pub v: Matrix<T>,
}

/// Chain rule through the factorization:
/// `G_U = G_W V diag(s)`, `G_s = diag(Uᵀ G_W V)`, `G_V = G_Wᵀ U diag(s)`.
pub fn factor_gradients<T: Scalar>(
    g_w: &Matrix<T>,
    u: &Matrix<T>,
    s: &[T],
    v: &Matrix<T>,
) -> Result<FactorGradients<T>> {
    let n = s.len();
    if g_w.shape() != (u.rows(), v.rows()) || u.cols() != n || v.cols() != n {
        return Err(Error::dim("factor gradient shapes do not conform"));
    }
    let gw_v = g_w.matmul(v)?;
    let gwt_u = g_w.matmul_tn(u)?;
    let g_s = (0..n)
        .map(|i| (0..u.rows()).fold(T::zero(), |acc, r| acc + u[(r, i)] * gw_v[(r, i)]))
        .collect();
    Ok(FactorGradients {
        u: gw_v.scale_cols(s)?,
        s: g_s,
        v: gwt_u.scale_cols(s)?,
    })
}

/// Gradient for the spectrum parameters with the `2m` factor divided out:
/// `G_p_i = sigmoid'(p_i) G_s_i`, independent of the margin.
pub fn spectrum_gradient<T: Scalar>(g_s: &[T], p: &[T], m: T) -> Result<Vec<T>> {
    if m <= T::zero() {
        return Err(Error::InvalidArgument(
            "spectrum gradient is undefined for a zero margin".into(),
        ));
    }
    if g_s.len() != p.len() {
        return Err(Error::dim("spectrum gradient and parameters differ in length"));
    }
    Ok(p.iter()
        .zip(g_s)
        .map(|(&pi, &g)| {
            let sg = sigmoid(pi);
            sg * (T::one() - sg) * g
        })
        .collect())
}

/// `λ ‖WᵀW − I‖_F²` and its gradient `4λ W (WᵀW − I)`.
pub fn soft_orthogonality_penalty<T: Scalar>(w: &Matrix<T>, lambda: T) -> Result<(T, Matrix<T>)> {
    if !w.is_square() {
        return Err(Error::dim("orthogonality penalty needs a square matrix"));
    }
    let mut resid = w.matmul_tn(w)?;
    for i in 0..w.cols() {
        resid[(i, i)] -= T::one();
    }
    let value = lambda * resid.frobenius_sq();
    let grad = w.matmul(&resid)?.scale(T::of(4.0) * lambda);
    Ok((value, grad))
}

/// `γ Σ (s_i − 1)²` and its gradient `2γ (s_i − 1)`.
pub fn gaussian_prior<T: Scalar>(s: &[T], gamma: T) -> (T, Vec<T>) {
    let value = gamma * s.iter().fold(T::zero(), |acc, &x| acc + (x - T::one()).powi(2));
    let grad = s.iter().map(|&x| (gamma + gamma) * (x - T::one())).collect();
    (value, grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_parameters_give_unit_spectrum() {
        assert_eq!(singular_values(&[0.0, 0.0, 0.0], 0.3), vec![1.0; 3]);
        assert_eq!(singular_values(&[-3.0, 7.5], 0.0), vec![1.0; 2]);
    }

    #[test]
    fn saturated_parameter_sits_at_the_margin() {
        let s = singular_values(&[40.0], 0.1)[0];
        assert!(s <= 1.1 && 1.1 - s < 1e-15);
    }

    #[test]
    fn margin_mode_parsing() {
        assert_eq!(SpectrumMode::from_margin(Some(0.0)).unwrap(), SpectrumMode::FrozenOrthogonal);
        assert_eq!(SpectrumMode::<f64>::from_margin(None).unwrap(), SpectrumMode::Direct);
        assert!(SpectrumMode::from_margin(Some(1.5)).is_err());
        assert!(SpectrumMode::from_margin(Some(-0.1)).is_err());
    }

    #[test]
    fn compose_identity_and_unit_spectrum() {
        let i = Matrix::<f64>::identity(3);
        assert_eq!(compose(&i, &[1.0; 3], &i).unwrap(), i);
        let mut rng = Rng::new(4);
        let u: Matrix<f64> = orthogonal_init(5, 5, &mut rng);
        let v: Matrix<f64> = orthogonal_init(5, 5, &mut rng);
        let w = compose(&u, &[1.0; 5], &v).unwrap();
        assert!(w.sub(&u.matmul_nt(&v).unwrap()).unwrap().max_abs() < 1e-15);
        assert!(w.orthogonality_residual() < 1e-10);
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_factor_gradients() {
        let i = Matrix::<f64>::identity(3);
        let g = factor_gradients(&Matrix::zeros(3, 3), &i, &[1.0, 2.0, 3.0], &i).unwrap();
        assert_eq!(g.u.max_abs(), 0.0);
        assert_eq!(g.v.max_abs(), 0.0);
        assert_eq!(g.s, vec![0.0; 3]);
    }

    #[test]
    fn frobenius_loss_on_diagonal_recovers_spectrum() {
        // L = ½‖W‖², so G_W = W = diag(s) when U = V = I
        let s = [0.7, 1.3, 2.0];
        let i = Matrix::<f64>::identity(3);
        let w = compose(&i, &s, &i).unwrap();
        let g = factor_gradients(&w, &i, &s, &i).unwrap();
        assert_eq!(g.s, s.to_vec());
    }

    #[test]
    fn spectrum_gradient_cases() {
        assert_eq!(spectrum_gradient(&[0.0, 0.0], &[1.0, -2.0], 0.5).unwrap(), vec![0.0, 0.0]);
        assert_eq!(spectrum_gradient(&[2.0], &[0.0], 0.5).unwrap(), vec![0.5]);
        let p = [0.3, -1.7, 4.0];
        let g = [1.0, -0.5, 2.5];
        let a = spectrum_gradient(&g, &p, 0.3).unwrap();
        let b = spectrum_gradient(&g, &p, 0.9).unwrap();
        assert_eq!(
            a.iter().map(|x: &f64| x.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        );
        assert!(spectrum_gradient(&g, &p, 0.0).is_err());
    }

    #[test]
    fn penalty_closed_forms() {
        let i = Matrix::<f64>::identity(2);
        let (v, g) = soft_orthogonality_penalty(&i, 3.0).unwrap();
        assert_eq!(v, 0.0);
        assert_eq!(g.max_abs(), 0.0);
        let (v, g) = soft_orthogonality_penalty(&i.scale(2.0), 1.0).unwrap();
        assert_eq!(v, 18.0);
        assert_eq!(g, i.scale(24.0));
    }

    #[test]
    fn prior_closed_forms() {
        assert_eq!(gaussian_prior(&[1.0, 1.0], 5.0), (0.0, vec![0.0, 0.0]));
        assert_eq!(gaussian_prior(&[1.5], 2.0), (0.5, vec![2.0]));
    }

    #[test]
    fn factorizing_a_matrix_round_trips() {
        let mut rng = Rng::new(12);
        let w = crate::matcore::glorot_normal_init::<f64>(6, 6, &mut rng);
        let f = FactorizedTransition::from_matrix(&w, SpectrumMode::Direct).unwrap();
        assert!(f.compose().sub(&w).unwrap().max_abs() < 1e-12);
        assert!(f.u.orthogonality_residual() < 1e-12);
        assert!(f.v.orthogonality_residual() < 1e-12);
    }

    #[test]
    fn frozen_mode_has_no_parameter_gradient() {
        let f = FactorizedTransition::<f64>::identity(3, SpectrumMode::FrozenOrthogonal);
        assert!(f.parameter_gradient(&[1.0, 2.0, 3.0]).is_none());
        assert_eq!(f.singular_values(), vec![1.0; 3]);
    }
}
