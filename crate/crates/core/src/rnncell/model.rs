use crate::error::{Error, Result};
use crate::matcore::{glorot_normal_init, identity_init, orthogonal_init, Matrix, Rng};
use crate::rnncell::nonlin::Nonlinearity;
use crate::scalar::Scalar;
use crate::spectral::{FactorizedTransition, SpectrumMode};

/// Hidden-to-hidden transition.
#[derive(Clone, Debug, PartialEq)]
pub enum Transition<T> {
    /// Free matrix. `hard_orthogonal` routes it through Cayley steps instead
    /// of Euclidean ones.
    Plain {
        w: Matrix<T>,
        hard_orthogonal: bool,
    },
    Factorized(FactorizedTransition<T>),
}

impl<T: Scalar> Transition<T> {
    /// The composite matrix `W`.
    pub fn matrix(&self) -> Matrix<T> {
        match self {
            Transition::Plain { w, .. } => w.clone(),
            Transition::Factorized(f) => f.compose(),
        }
    }

    pub fn n(&self) -> usize {
        match self {
            Transition::Plain { w, .. } => w.rows(),
            Transition::Factorized(f) => f.n(),
        }
    }
}

/// How the recurrent matrix starts out.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitKind {
    Orthogonal,
    Glorot,
    Identity,
}

/// Which parameterization the recurrent matrix uses.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TransitionKind<T> {
    Plain,
    /// Plain matrix kept on the orthogonal group by Cayley steps.
    HardOrthogonal,
    Factorized(SpectrumMode<T>),
}

/// Elman network `h_t = f(g (W h_{t-1} + W_in x_t + b))`, `y_t = W_out h_t + b_out`.
#[derive(Clone, Debug, PartialEq)]
pub struct RnnModel<T> {
    pub n_in: usize,
    pub n_hidden: usize,
    pub n_out: usize,
    pub w_in: Matrix<T>,
    pub transition: Transition<T>,
    pub b: Vec<T>,
    pub w_out: Matrix<T>,
    pub b_out: Vec<T>,
    pub nonlinearity: Nonlinearity<T>,
    pub preact_gain: T,
    /// Initial hidden state; fixed, not trained.
    pub h0: Vec<T>,
}

impl<T: Scalar> RnnModel<T> {
    /// Builds a model with Glorot-normal input/output weights, zero biases and
    /// a recurrent matrix drawn according to `init`.
    pub fn new(
        n_in: usize,
        n_hidden: usize,
        n_out: usize,
        nonlinearity: Nonlinearity<T>,
        kind: TransitionKind<T>,
        init: InitKind,
        rng: &mut Rng,
    ) -> Result<Self> {
        if n_in == 0 || n_hidden == 0 || n_out == 0 {
            return Err(Error::InvalidArgument("layer sizes must be positive".into()));
        }
        nonlinearity.validate(n_hidden)?;
        let w_in = glorot_normal_init(n_hidden, n_in, rng);
        let transition = match kind {
            TransitionKind::Plain | TransitionKind::HardOrthogonal => {
                let hard_orthogonal = kind == TransitionKind::HardOrthogonal;
                if hard_orthogonal && init == InitKind::Glorot {
                    return Err(Error::InvalidArgument(
                        "a hard-orthogonal transition cannot start from a Glorot draw".into(),
                    ));
                }
                let w = match init {
                    InitKind::Orthogonal => orthogonal_init(n_hidden, n_hidden, rng),
                    InitKind::Glorot => glorot_normal_init(n_hidden, n_hidden, rng),
                    InitKind::Identity => identity_init(n_hidden),
                };
                Transition::Plain { w, hard_orthogonal }
            }
            TransitionKind::Factorized(mode) => Transition::Factorized(match init {
                InitKind::Orthogonal => FactorizedTransition::orthogonal(n_hidden, mode, rng),
                InitKind::Identity => FactorizedTransition::identity(n_hidden, mode),
                InitKind::Glorot => FactorizedTransition::from_matrix(
                    &glorot_normal_init(n_hidden, n_hidden, rng),
                    mode,
                )?,
            }),
        };
        let w_out = glorot_normal_init(n_out, n_hidden, rng);
        Ok(RnnModel {
            n_in,
            n_hidden,
            n_out,
            w_in,
            transition,
            b: vec![T::zero(); n_hidden],
            w_out,
            b_out: vec![T::zero(); n_out],
            nonlinearity,
            preact_gain: T::one(),
            h0: vec![T::zero(); n_hidden],
        })
    }

    /// Trainable parameters, in the order of [`Gradients::tensors`](crate::rnncell::Gradients::tensors).
    pub fn parameters_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = vec![self.w_in.as_mut_slice()];
        match &mut self.transition {
            Transition::Plain { w, .. } => out.push(w.as_mut_slice()),
            Transition::Factorized(f) => {
                out.push(f.u.as_mut_slice());
                out.push(f.v.as_mut_slice());
                if f.mode != SpectrumMode::FrozenOrthogonal {
                    out.push(f.p.as_mut_slice());
                }
            }
        }
        out.push(&mut self.b);
        out.push(self.w_out.as_mut_slice());
        out.push(&mut self.b_out);
        if let Nonlinearity::Prelu {
            alpha,
            trainable: true,
        } = &mut self.nonlinearity
        {
            out.push(std::slice::from_mut(alpha));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        self.nonlinearity.validate(self.n_hidden)?;
        let shapes = [
            ("w_in", self.w_in.shape(), (self.n_hidden, self.n_in)),
            ("w_out", self.w_out.shape(), (self.n_out, self.n_hidden)),
        ];
        for (name, got, want) in shapes {
            if got != want {
                return Err(Error::dim(format!("{name} is {got:?}, expected {want:?}")));
            }
        }
        if self.transition.n() != self.n_hidden
            || self.b.len() != self.n_hidden
            || self.h0.len() != self.n_hidden
            || self.b_out.len() != self.n_out
        {
            return Err(Error::dim("transition, bias or initial state size is off"));
        }
        Ok(())
    }
}

/// Per-step supervision.
#[derive(Clone, Debug, PartialEq)]
pub enum Targets<T> {
    /// `classes[t][b]`, scored with softmax cross-entropy.
    Classes(Vec<Vec<usize>>),
    /// `values[t]` is `n_out x batch`, scored with squared error.
    Values(Vec<Matrix<T>>),
}

/// A minibatch laid out time-major: `inputs[t]` is `n_in x batch`, one column
/// per sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch<T> {
    pub inputs: Vec<Matrix<T>>,
    pub targets: Targets<T>,
    /// `mask[t][b]` weights the loss of sequence `b` at step `t`.
    pub mask: Vec<Vec<T>>,
}

impl<T: Scalar> Batch<T> {
    pub fn new(inputs: Vec<Matrix<T>>, targets: Targets<T>, mask: Vec<Vec<T>>) -> Result<Self> {
        let batch = Batch {
            inputs,
            targets,
            mask,
        };
        batch.validate()?;
        Ok(batch)
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn batch_size(&self) -> usize {
        self.inputs.first().map_or(0, |x| x.cols())
    }

    pub fn n_in(&self) -> usize {
        self.inputs.first().map_or(0, |x| x.rows())
    }

    pub fn mask_total(&self) -> T {
        self.mask
            .iter()
            .flatten()
            .fold(T::zero(), |acc, &w| acc + w)
    }

    pub fn validate(&self) -> Result<()> {
        let steps = self.inputs.len();
        if steps == 0 {
            return Err(Error::dim("batch has no time steps"));
        }
        let (n_in, bs) = self.inputs[0].shape();
        if self.inputs.iter().any(|x| x.shape() != (n_in, bs)) {
            return Err(Error::dim("input shape changes across time"));
        }
        if self.mask.len() != steps || self.mask.iter().any(|m| m.len() != bs) {
            return Err(Error::dim("mask does not match the inputs"));
        }
        if self.mask.iter().flatten().any(|&w| w < T::zero() || !w.is_finite()) {
            return Err(Error::InvalidArgument("loss mask must be non-negative".into()));
        }
        if self.mask_total() <= T::zero() {
            return Err(Error::InvalidArgument("loss mask has no positive entry".into()));
        }
        match &self.targets {
            Targets::Classes(c) => {
                if c.len() != steps || c.iter().any(|r| r.len() != bs) {
                    return Err(Error::dim("class targets do not match the inputs"));
                }
            }
            Targets::Values(v) => {
                if v.len() != steps || v.iter().any(|m| m.cols() != bs || m.rows() != v[0].rows()) {
                    return Err(Error::dim("value targets do not match the inputs"));
                }
            }
        }
        Ok(())
    }

    /// Same batch with the loss moved entirely onto the final step.
    pub fn with_last_step_mask(&self) -> Self {
        let mut out = self.clone();
        let last = out.mask.len() - 1;
        for (t, row) in out.mask.iter_mut().enumerate() {
            let w = if t == last { T::one() } else { T::zero() };
            row.iter_mut().for_each(|x| *x = w);
        }
        out
    }
}
