//! Forward unrolling and reverse-mode gradients through time.

use crate::error::{Error, Result};
use crate::matcore::Matrix;
use crate::rnncell::model::{Batch, RnnModel, Targets, Transition};
use crate::rnncell::nonlin::{activate, JacobianRecord};
use crate::scalar::Scalar;
use crate::spectral::{factor_gradients, FactorizedTransition};

/// Everything the backward pass needs from a forward pass.
#[derive(Clone, Debug)]
pub struct ForwardTape<T> {
    /// Realized transition matrix used for this pass.
    pub w: Matrix<T>,
    /// `preacts[t]` is `a_t`, after the gain.
    pub preacts: Vec<Matrix<T>>,
    /// `hidden[0]` is the broadcast initial state, `hidden[t + 1]` is `h_t`.
    pub hidden: Vec<Matrix<T>>,
    pub jacobians: Vec<JacobianRecord<T>>,
    pub outputs: Vec<Matrix<T>>,
}

impl<T: Scalar> ForwardTape<T> {
    pub fn len(&self) -> usize {
        self.preacts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.preacts.is_empty()
    }

    pub fn batch_size(&self) -> usize {
        self.hidden[0].cols()
    }
}

/// Runs the network over a batch, returning per-step outputs and the tape.
pub fn forward<T: Scalar>(
    model: &RnnModel<T>,
    batch: &Batch<T>,
) -> Result<(Vec<Matrix<T>>, ForwardTape<T>)> {
    model.validate()?;
    if batch.n_in() != model.n_in {
        return Err(Error::dim(format!(
            "batch carries {} input features, model expects {}",
            batch.n_in(),
            model.n_in
        )));
    }
    let w = model.transition.matrix();
    let bs = batch.batch_size();
    let steps = batch.len();
    let mut h = Matrix::from_fn(model.n_hidden, bs, |i, _| model.h0[i]);
    let mut tape = ForwardTape {
        w,
        preacts: Vec::with_capacity(steps),
        hidden: Vec::with_capacity(steps + 1),
        jacobians: Vec::with_capacity(steps),
        outputs: Vec::with_capacity(steps),
    };
    tape.hidden.push(h.clone());
    for x in &batch.inputs {
        let mut a = tape.w.matmul(&h)?;
        a.add_matmul(T::one(), &model.w_in, x)?;
        a.add_to_rows(&model.b)?;
        if model.preact_gain != T::one() {
            a.scale_in_place(model.preact_gain);
        }
        let (h_next, jac) = activate(model.nonlinearity, &a)?;
        let mut y = model.w_out.matmul(&h_next)?;
        y.add_to_rows(&model.b_out)?;
        h = h_next;
        tape.preacts.push(a);
        tape.hidden.push(h.clone());
        tape.jacobians.push(jac);
        tape.outputs.push(y);
    }
    Ok((tape.outputs.clone(), tape))
}

fn log_softmax_column<T: Scalar>(y: &Matrix<T>, col: usize) -> (Vec<T>, T) {
    let k = y.rows();
    let max = (0..k).fold(T::neg_infinity(), |m, i| m.max(y[(i, col)]));
    let sum = (0..k).fold(T::zero(), |acc, i| acc + (y[(i, col)] - max).exp());
    let lse = max + sum.ln();
    ((0..k).map(|i| y[(i, col)] - lse).collect(), lse)
}

/// Loss and `∂L/∂y_t` for every step (`None` where the mask is zero).
fn loss_and_output_grads<T: Scalar>(
    outputs: &[Matrix<T>],
    batch: &Batch<T>,
) -> Result<(T, Vec<Option<Matrix<T>>>)> {
    if outputs.len() != batch.len() {
        return Err(Error::dim("outputs and batch differ in length"));
    }
    let total = batch.mask_total();
    let mut loss = T::zero();
    let mut grads = Vec::with_capacity(outputs.len());
    for (t, y) in outputs.iter().enumerate() {
        let mask = &batch.mask[t];
        if mask.iter().all(|&w| w == T::zero()) {
            grads.push(None);
            continue;
        }
        if y.cols() != mask.len() {
            return Err(Error::dim("output batch size does not match the mask"));
        }
        let mut g = Matrix::zeros(y.rows(), y.cols());
        match &batch.targets {
            Targets::Classes(classes) => {
                for (col, &w) in mask.iter().enumerate() {
                    if w == T::zero() {
                        continue;
                    }
                    let c = classes[t][col];
                    if c >= y.rows() {
                        return Err(Error::dim(format!(
                            "class {c} out of range for {} outputs",
                            y.rows()
                        )));
                    }
                    let (logp, _) = log_softmax_column(y, col);
                    loss += -w * logp[c];
                    let scale = w / total;
                    for (i, lp) in logp.iter().enumerate() {
                        let target = if i == c { T::one() } else { T::zero() };
                        g[(i, col)] = (lp.exp() - target) * scale;
                    }
                }
            }
            Targets::Values(values) => {
                let target = &values[t];
                if target.shape() != y.shape() {
                    return Err(Error::dim("value targets do not match outputs"));
                }
                for (col, &w) in mask.iter().enumerate() {
                    if w == T::zero() {
                        continue;
                    }
                    let scale = (w + w) / total;
                    for i in 0..y.rows() {
                        let diff = y[(i, col)] - target[(i, col)];
                        loss += w * diff * diff;
                        g[(i, col)] = diff * scale;
                    }
                }
            }
        }
        grads.push(Some(g));
    }
    Ok((loss / total, grads))
}

/// Masked mean of per-step losses: softmax cross-entropy for class targets,
/// squared error for value targets.
pub fn loss<T: Scalar>(outputs: &[Matrix<T>], batch: &Batch<T>) -> Result<T> {
    loss_and_output_grads(outputs, batch).map(|(l, _)| l)
}

/// Gradient of the recurrent matrix in whatever parameterization it uses.
#[derive(Clone, Debug, PartialEq)]
pub enum TransitionGrad<T> {
    Plain(Matrix<T>),
    Factorized {
        u: Matrix<T>,
        v: Matrix<T>,
        /// Raw `∂L/∂s`.
        s: Vec<T>,
        /// Gradient applied to the spectrum parameters; `None` when frozen.
        p: Option<Vec<T>>,
    },
}

impl<T: Scalar> TransitionGrad<T> {
    pub fn zeros(transition: &Transition<T>) -> Self {
        match transition {
            Transition::Plain { w, .. } => TransitionGrad::Plain(Matrix::zeros(w.rows(), w.cols())),
            Transition::Factorized(f) => Self::from_spectrum(f, &vec![T::zero(); f.n()]),
        }
    }

    /// Pushes a gradient with respect to the composite `W` onto the
    /// transition's own parameters.
    pub fn from_composite(transition: &Transition<T>, g_w: &Matrix<T>) -> Result<Self> {
        match transition {
            Transition::Plain { .. } => Ok(TransitionGrad::Plain(g_w.clone())),
            Transition::Factorized(f) => {
                let s = f.singular_values();
                let fg = factor_gradients(g_w, &f.u, &s, &f.v)?;
                let p = f.parameter_gradient(&fg.s);
                Ok(TransitionGrad::Factorized {
                    u: fg.u,
                    v: fg.v,
                    s: fg.s,
                    p,
                })
            }
        }
    }

    /// Gradient that only touches the singular values.
    pub fn from_spectrum(f: &FactorizedTransition<T>, g_s: &[T]) -> Self {
        let n = f.n();
        TransitionGrad::Factorized {
            u: Matrix::zeros(n, n),
            v: Matrix::zeros(n, n),
            s: g_s.to_vec(),
            p: f.parameter_gradient(g_s),
        }
    }

    fn add(&mut self, other: &Self) -> Result<()> {
        match (self, other) {
            (TransitionGrad::Plain(a), TransitionGrad::Plain(b)) => a.axpy(T::one(), b),
            (
                TransitionGrad::Factorized { u, v, s, p },
                TransitionGrad::Factorized {
                    u: u2,
                    v: v2,
                    s: s2,
                    p: p2,
                },
            ) => {
                u.axpy(T::one(), u2)?;
                v.axpy(T::one(), v2)?;
                add_vec(s, s2);
                match (p, p2) {
                    (Some(a), Some(b)) => add_vec(a, b),
                    (None, None) => {}
                    _ => return Err(Error::dim("spectrum gradients disagree on frozen mode")),
                }
                Ok(())
            }
            _ => Err(Error::dim("mixing plain and factorized transition gradients")),
        }
    }
}

fn add_vec<T: Scalar>(a: &mut [T], b: &[T]) {
    for (x, &y) in a.iter_mut().zip(b) {
        *x += y;
    }
}

/// Gradients for every trainable parameter of an [`RnnModel`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    pub w_in: Matrix<T>,
    pub transition: TransitionGrad<T>,
    pub b: Vec<T>,
    pub w_out: Matrix<T>,
    pub b_out: Vec<T>,
    /// Shared PReLU slope, when trainable.
    pub alpha: Option<T>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros(model: &RnnModel<T>) -> Self {
        Gradients {
            w_in: Matrix::zeros(model.n_hidden, model.n_in),
            transition: TransitionGrad::zeros(&model.transition),
            b: vec![T::zero(); model.n_hidden],
            w_out: Matrix::zeros(model.n_out, model.n_hidden),
            b_out: vec![T::zero(); model.n_out],
            alpha: model.nonlinearity.trainable_alpha().map(|_| T::zero()),
        }
    }

    pub fn add(&mut self, other: &Self) -> Result<()> {
        self.w_in.axpy(T::one(), &other.w_in)?;
        self.transition.add(&other.transition)?;
        add_vec(&mut self.b, &other.b);
        self.w_out.axpy(T::one(), &other.w_out)?;
        add_vec(&mut self.b_out, &other.b_out);
        if let (Some(a), Some(b)) = (self.alpha.as_mut(), other.alpha) {
            *a += b;
        }
        Ok(())
    }

    /// Every gradient that drives a parameter update, in a fixed order.
    pub fn tensors(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = vec![self.w_in.as_slice()];
        match &self.transition {
            TransitionGrad::Plain(w) => out.push(w.as_slice()),
            TransitionGrad::Factorized { u, v, p, .. } => {
                out.push(u.as_slice());
                out.push(v.as_slice());
                if let Some(p) = p {
                    out.push(p);
                }
            }
        }
        out.push(&self.b);
        out.push(self.w_out.as_slice());
        out.push(&self.b_out);
        if let Some(a) = &self.alpha {
            out.push(std::slice::from_ref(a));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = vec![self.w_in.as_mut_slice()];
        match &mut self.transition {
            TransitionGrad::Plain(w) => out.push(w.as_mut_slice()),
            TransitionGrad::Factorized { u, v, p, .. } => {
                out.push(u.as_mut_slice());
                out.push(v.as_mut_slice());
                if let Some(p) = p {
                    out.push(p.as_mut_slice());
                }
            }
        }
        out.push(&mut self.b);
        out.push(self.w_out.as_mut_slice());
        out.push(&mut self.b_out);
        if let Some(a) = &mut self.alpha {
            out.push(std::slice::from_mut(a));
        }
        out
    }

    pub fn global_norm(&self) -> T {
        self.tensors()
            .into_iter()
            .flatten()
            .fold(T::zero(), |acc, &x| acc + x * x)
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().into_iter().flatten().all(|x| x.is_finite())
    }
}

struct BackwardOutput<T> {
    loss: T,
    grads: Gradients<T>,
    hidden_norms: Vec<T>,
}

fn check_tape<T: Scalar>(model: &RnnModel<T>, tape: &ForwardTape<T>, batch: &Batch<T>) -> Result<()> {
    let ok = tape.len() == batch.len()
        && tape.hidden.len() == batch.len() + 1
        && tape.batch_size() == batch.batch_size()
        && tape.w.shape() == (model.n_hidden, model.n_hidden)
        && tape.hidden[0].rows() == model.n_hidden
        && tape.outputs.first().is_some_and(|y| y.rows() == model.n_out);
    if ok {
        Ok(())
    } else {
        Err(Error::dim("tape was not produced by this model and batch"))
    }
}

fn run_backward<T: Scalar>(
    model: &RnnModel<T>,
    tape: &ForwardTape<T>,
    batch: &Batch<T>,
) -> Result<BackwardOutput<T>> {
    check_tape(model, tape, batch)?;
    let (loss, dy) = loss_and_output_grads(&tape.outputs, batch)?;
    let gain = model.preact_gain;
    let bs = batch.batch_size();
    let n = model.n_hidden;
    let mut g_w = Matrix::zeros(n, n);
    let mut g_in = Matrix::zeros(n, model.n_in);
    let mut g_b = vec![T::zero(); n];
    let mut g_out = Matrix::zeros(model.n_out, n);
    let mut g_bout = vec![T::zero(); model.n_out];
    let mut g_alpha = model.nonlinearity.trainable_alpha().map(|_| T::zero());
    let mut hidden_norms = vec![T::zero(); batch.len()];
    // ∂L/∂h_t arriving through the recurrence
    let mut carry = Matrix::zeros(n, bs);
    for t in (0..batch.len()).rev() {
        let h_t = &tape.hidden[t + 1];
        let mut dh = carry;
        if let Some(dy_t) = &dy[t] {
            dh.axpy(T::one(), &model.w_out.matmul_tn(dy_t)?)?;
            g_out.add_matmul_nt(T::one(), dy_t, h_t)?;
            add_vec(&mut g_bout, &dy_t.row_sums());
        }
        hidden_norms[t] = dh.frobenius_norm();
        if let Some(ga) = g_alpha.as_mut() {
            // ∂h/∂alpha = min(a, 0)
            for (d, &x) in dh.as_slice().iter().zip(tape.preacts[t].as_slice()) {
                if x <= T::zero() {
                    *ga += *d * x;
                }
            }
        }
        let da = tape.jacobians[t].apply(&dh);
        let dz = if gain == T::one() { da } else { da.scale(gain) };
        g_w.add_matmul_nt(T::one(), &dz, &tape.hidden[t])?;
        g_in.add_matmul_nt(T::one(), &dz, &batch.inputs[t])?;
        add_vec(&mut g_b, &dz.row_sums());
        carry = tape.w.matmul_tn(&dz)?;
    }
    let transition = TransitionGrad::from_composite(&model.transition, &g_w)?;
    Ok(BackwardOutput {
        loss,
        grads: Gradients {
            w_in: g_in,
            transition,
            b: g_b,
            w_out: g_out,
            b_out: g_bout,
            alpha: g_alpha,
        },
        hidden_norms,
    })
}

/// Exact gradients of [`loss`] by reverse accumulation over the tape.
pub fn backward<T: Scalar>(
    model: &RnnModel<T>,
    tape: &ForwardTape<T>,
    batch: &Batch<T>,
) -> Result<Gradients<T>> {
    run_backward(model, tape, batch).map(|o| o.grads)
}

/// Loss and gradients in one call.
pub fn loss_and_gradients<T: Scalar>(
    model: &RnnModel<T>,
    batch: &Batch<T>,
) -> Result<(T, Gradients<T>)> {
    let (_, tape) = forward(model, batch)?;
    run_backward(model, &tape, batch).map(|o| (o.loss, o.grads))
}

/// `‖∂L/∂h_t‖₂` for `t = 1..=T` (index `t - 1`), norms taken over the whole
/// batch. Meant for batches whose mask sits on the final step only.
pub fn hidden_grad_norms<T: Scalar>(
    model: &RnnModel<T>,
    tape: &ForwardTape<T>,
    batch: &Batch<T>,
) -> Result<Vec<T>> {
    run_backward(model, tape, batch).map(|o| o.hidden_norms)
}
