//! Update rules: Cayley-transform geodesic steps for orthogonal factors,
//! RMSprop or plain SGD for everything else, global-norm clipping and weight
//! decay on the composite transition.

use crate::error::{Error, Result};
use crate::matcore::{solve, Matrix};
use crate::rnncell::{Gradients, RnnModel, Transition, TransitionGrad};
use crate::scalar::Scalar;

/// One Cayley step along the orthogonal group:
/// `A = G Mᵀ − M Gᵀ`, `M' = (I + η/2 A)⁻¹ (I − η/2 A) M`.
pub fn geodesic_step<T: Scalar>(m: &Matrix<T>, g: &Matrix<T>, eta: T) -> Result<Matrix<T>> {
    if m.shape() != g.shape() {
        return Err(Error::dim(format!(
            "gradient {:?} for a {:?} parameter",
            g.shape(),
            m.shape()
        )));
    }
    let a = skew_generator(m, g)?;
    let half = eta * T::of(0.5);
    let n = a.rows();
    let mut lhs = a.scale(half);
    let mut rhs = a.scale(-half);
    for i in 0..n {
        lhs[(i, i)] += T::one();
        rhs[(i, i)] += T::one();
    }
    solve(&lhs, &rhs.matmul(m)?)
}

/// `G Mᵀ − M Gᵀ`, exactly skew-symmetric.
pub fn skew_generator<T: Scalar>(m: &Matrix<T>, g: &Matrix<T>) -> Result<Matrix<T>> {
    let gm = g.matmul_nt(m)?;
    // build from one product so that Aᵀ = −A holds bit for bit
    Ok(Matrix::from_fn(gm.rows(), gm.cols(), |i, j| gm[(i, j)] - gm[(j, i)]))
}

/// `acc ← ρ acc + (1 − ρ) g²`, `param ← param − lr g / (√acc + ε)`.
pub fn rmsprop_step<T: Scalar>(param: &mut [T], grad: &[T], acc: &mut [T], lr: T, rho: T, eps: T) {
    assert_eq!(param.len(), grad.len(), "parameter/gradient length");
    assert_eq!(param.len(), acc.len(), "parameter/accumulator length");
    let keep = T::one() - rho;
    for ((x, &g), a) in param.iter_mut().zip(grad).zip(acc.iter_mut()) {
        *a = rho * *a + keep * g * g;
        *x -= lr * g / (a.sqrt() + eps);
    }
}

pub fn sgd_step<T: Scalar>(param: &mut [T], grad: &[T], lr: T) {
    assert_eq!(param.len(), grad.len(), "parameter/gradient length");
    for (x, &g) in param.iter_mut().zip(grad) {
        *x -= lr * g;
    }
}

/// Rescales all gradients jointly so their global L2 norm is at most
/// `threshold`. Returns the norm before clipping.
pub fn clip_gradients<T: Scalar>(grads: &mut Gradients<T>, threshold: T) -> T {
    assert!(threshold > T::zero(), "clip threshold must be positive");
    let norm = grads.global_norm();
    if norm > threshold {
        let scale = threshold / norm;
        for tensor in grads.tensors_mut() {
            tensor.iter_mut().for_each(|x| *x *= scale);
        }
    }
    norm
}

/// Gradient of `½ decay ‖P‖²` over the weight matrices. For a factorized
/// transition the penalty is on the composite `W` and is pushed through the
/// factorization. Biases and the PReLU slope are left alone.
pub fn apply_weight_decay<T: Scalar>(model: &RnnModel<T>, decay: T) -> Result<Gradients<T>> {
    if decay < T::zero() {
        return Err(Error::InvalidArgument("weight decay must be non-negative".into()));
    }
    let mut g = Gradients::zeros(model);
    if decay == T::zero() {
        return Ok(g);
    }
    g.w_in = model.w_in.scale(decay);
    g.w_out = model.w_out.scale(decay);
    g.transition = TransitionGrad::from_composite(
        &model.transition,
        &model.transition.matrix().scale(decay),
    )?;
    Ok(g)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UpdateRule {
    RmsProp,
    Sgd,
}

/// Hyperparameters of the per-group optimizers.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimConfig<T> {
    pub rule: UpdateRule,
    pub euclidean_lr: T,
    pub geodesic_lr: T,
    pub spectrum_lr: T,
    pub rho: T,
    pub eps: T,
    pub clip_threshold: Option<T>,
    pub weight_decay: T,
}

impl<T: Scalar> Default for OptimConfig<T> {
    fn default() -> Self {
        OptimConfig {
            rule: UpdateRule::RmsProp,
            euclidean_lr: T::of(1e-4),
            geodesic_lr: T::of(1e-6),
            spectrum_lr: T::of(1e-4),
            rho: T::of(0.9),
            eps: T::of(1e-8),
            clip_threshold: Some(T::of(100.0)),
            weight_decay: T::of(1e-4),
        }
    }
}

impl<T: Scalar> OptimConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > T::zero() && self.rho < T::one()) {
            return Err(Error::InvalidArgument(format!("RMSprop decay {} outside (0, 1)", self.rho)));
        }
        if self.eps <= T::zero() {
            return Err(Error::InvalidArgument("RMSprop epsilon must be positive".into()));
        }
        let rates = [self.euclidean_lr, self.geodesic_lr, self.spectrum_lr];
        if rates.iter().any(|&r| r < T::zero() || !r.is_finite()) {
            return Err(Error::InvalidArgument("learning rates must be finite and non-negative".into()));
        }
        if self.clip_threshold.is_some_and(|c| c <= T::zero()) {
            return Err(Error::InvalidArgument("clip threshold must be positive".into()));
        }
        if self.weight_decay < T::zero() {
            return Err(Error::InvalidArgument("weight decay must be non-negative".into()));
        }
        Ok(())
    }
}

/// Optimizer hyperparameters plus one RMSprop accumulator per Euclidean
/// parameter tensor. Accumulators that a model does not use stay empty.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimState<T> {
    pub config: OptimConfig<T>,
    pub acc_w_in: Vec<T>,
    pub acc_w: Vec<T>,
    pub acc_p: Vec<T>,
    pub acc_b: Vec<T>,
    pub acc_w_out: Vec<T>,
    pub acc_b_out: Vec<T>,
    pub acc_alpha: Vec<T>,
}

impl<T: Scalar> OptimState<T> {
    pub fn new(config: OptimConfig<T>, model: &RnnModel<T>) -> Result<Self> {
        config.validate()?;
        let zeros = |n: usize| vec![T::zero(); n];
        let (acc_w, acc_p) = match &model.transition {
            Transition::Plain { w, hard_orthogonal: false } => (zeros(w.as_slice().len()), vec![]),
            Transition::Plain { .. } => (vec![], vec![]),
            Transition::Factorized(f) => match f.mode {
                crate::spectral::SpectrumMode::FrozenOrthogonal => (vec![], vec![]),
                _ => (vec![], zeros(f.p.len())),
            },
        };
        Ok(OptimState {
            acc_w_in: zeros(model.w_in.as_slice().len()),
            acc_w,
            acc_p,
            acc_b: zeros(model.n_hidden),
            acc_w_out: zeros(model.w_out.as_slice().len()),
            acc_b_out: zeros(model.n_out),
            acc_alpha: zeros(usize::from(model.nonlinearity.trainable_alpha().is_some())),
            config,
        })
    }

    /// Accumulators by name, in a fixed order.
    pub fn accumulators(&self) -> Vec<(&'static str, &Vec<T>)> {
        vec![
            ("acc.w_in", &self.acc_w_in),
            ("acc.w", &self.acc_w),
            ("acc.p", &self.acc_p),
            ("acc.b", &self.acc_b),
            ("acc.w_out", &self.acc_w_out),
            ("acc.b_out", &self.acc_b_out),
            ("acc.alpha", &self.acc_alpha),
        ]
    }

    pub fn accumulator_mut(&mut self, name: &str) -> Option<&mut Vec<T>> {
        Some(match name {
            "acc.w_in" => &mut self.acc_w_in,
            "acc.w" => &mut self.acc_w,
            "acc.p" => &mut self.acc_p,
            "acc.b" => &mut self.acc_b,
            "acc.w_out" => &mut self.acc_w_out,
            "acc.b_out" => &mut self.acc_b_out,
            "acc.alpha" => &mut self.acc_alpha,
            _ => return None,
        })
    }

    fn euclidean(&self, param: &mut [T], grad: &[T], acc: &mut [T], lr: T) {
        match self.config.rule {
            UpdateRule::RmsProp => rmsprop_step(param, grad, acc, lr, self.config.rho, self.config.eps),
            UpdateRule::Sgd => sgd_step(param, grad, lr),
        }
    }

    /// Applies one update to every parameter group: Cayley steps for the
    /// orthogonal bases (and a hard-orthogonal plain matrix), the spectrum
    /// learning rate for `p`, the Euclidean learning rate elsewhere.
    pub fn step(&mut self, model: &mut RnnModel<T>, grads: &Gradients<T>) -> Result<()> {
        let lr = self.config.euclidean_lr;
        let mut acc = std::mem::take(&mut self.acc_w_in);
        self.euclidean(model.w_in.as_mut_slice(), grads.w_in.as_slice(), &mut acc, lr);
        self.acc_w_in = acc;

        match (&mut model.transition, &grads.transition) {
            (Transition::Plain { w, hard_orthogonal }, TransitionGrad::Plain(g)) => {
                if *hard_orthogonal {
                    *w = geodesic_step(w, g, self.config.geodesic_lr)?;
                } else {
                    let mut acc = std::mem::take(&mut self.acc_w);
                    self.euclidean(w.as_mut_slice(), g.as_slice(), &mut acc, lr);
                    self.acc_w = acc;
                }
            }
            (Transition::Factorized(f), TransitionGrad::Factorized { u, v, p, .. }) => {
                let eta = self.config.geodesic_lr;
                f.u = geodesic_step(&f.u, u, eta)?;
                f.v = geodesic_step(&f.v, v, eta)?;
                if let Some(gp) = p {
                    let mut acc = std::mem::take(&mut self.acc_p);
                    self.euclidean(&mut f.p, gp, &mut acc, self.config.spectrum_lr);
                    self.acc_p = acc;
                }
            }
            _ => return Err(Error::dim("gradient does not match the transition kind")),
        }

        let mut acc = std::mem::take(&mut self.acc_b);
        self.euclidean(&mut model.b, &grads.b, &mut acc, lr);
        self.acc_b = acc;
        let mut acc = std::mem::take(&mut self.acc_w_out);
        self.euclidean(model.w_out.as_mut_slice(), grads.w_out.as_slice(), &mut acc, lr);
        self.acc_w_out = acc;
        let mut acc = std::mem::take(&mut self.acc_b_out);
        self.euclidean(&mut model.b_out, &grads.b_out, &mut acc, lr);
        self.acc_b_out = acc;

        if let (Some(g), crate::rnncell::Nonlinearity::Prelu { alpha, trainable: true }) =
            (grads.alpha, &mut model.nonlinearity)
        {
            let mut acc = std::mem::take(&mut self.acc_alpha);
            let mut a = [*alpha];
            self.euclidean(&mut a, &[g], &mut acc, lr);
            *alpha = a[0];
            self.acc_alpha = acc;
        }
        Ok(())
    }
}
