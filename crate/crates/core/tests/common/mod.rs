#![allow(dead_code)]

use orthornn::matcore::{Matrix, Rng};
use orthornn::rnncell::{
    forward, loss, loss_and_gradients, Batch, InitKind, Nonlinearity, RnnModel, Targets,
    Transition, TransitionKind,
};
use orthornn::spectral::SpectrumMode;

pub fn gaussian(rows: usize, cols: usize, scale: f64, rng: &mut Rng) -> Matrix<f64> {
    Matrix::from_fn(rows, cols, |_, _| scale * rng.normal())
}

pub fn nonlinearity(name: &str) -> Nonlinearity<f64> {
    match name {
        "identity" => Nonlinearity::Identity,
        "tanh" => Nonlinearity::Tanh,
        "relu" => Nonlinearity::Relu,
        "prelu" => Nonlinearity::Prelu {
            alpha: 0.7,
            trainable: true,
        },
        "oplu" => Nonlinearity::Oplu,
        other => panic!("unknown nonlinearity {other}"),
    }
}

pub const NONLINEARITIES: [&str; 5] = ["identity", "tanh", "relu", "prelu", "oplu"];

/// A model with every parameter moved off its initial value so no gradient
/// vanishes by symmetry.
pub fn random_model(
    n_in: usize,
    n: usize,
    n_out: usize,
    nonlin: Nonlinearity<f64>,
    kind: TransitionKind<f64>,
    rng: &mut Rng,
) -> RnnModel<f64> {
    let mut model = RnnModel::new(n_in, n, n_out, nonlin, kind, InitKind::Orthogonal, rng).unwrap();
    for x in model.b.iter_mut().chain(model.b_out.iter_mut()) {
        *x = 0.1 * rng.normal();
    }
    match &mut model.transition {
        Transition::Factorized(f) => {
            for (i, p) in f.p.iter_mut().enumerate() {
                *p = match f.mode {
                    SpectrumMode::Direct => 1.0 + 0.05 * rng.normal(),
                    _ => 0.5 * rng.normal() + if i % 2 == 0 { 0.3 } else { -0.3 },
                };
            }
        }
        Transition::Plain { w, hard_orthogonal } => {
            if !*hard_orthogonal {
                for x in w.as_mut_slice() {
                    *x += 0.02 * rng.normal();
                }
            }
        }
    }
    model
}

pub fn random_batch(
    n_in: usize,
    n_out: usize,
    steps: usize,
    bs: usize,
    classes: bool,
    rng: &mut Rng,
) -> Batch<f64> {
    let inputs = (0..steps).map(|_| gaussian(n_in, bs, 1.0, rng)).collect();
    let targets = if classes {
        Targets::Classes((0..steps).map(|_| (0..bs).map(|_| rng.below(n_out)).collect()).collect())
    } else {
        Targets::Values((0..steps).map(|_| gaussian(n_out, bs, 1.0, rng)).collect())
    };
    let mask = (0..steps)
        .map(|_| (0..bs).map(|_| if rng.uniform() < 0.8 { 1.0 } else { 0.0 }).collect())
        .collect::<Vec<Vec<f64>>>();
    let mut batch = Batch {
        inputs,
        targets,
        mask,
    };
    batch.mask[steps - 1][0] = 1.0;
    batch.validate().unwrap();
    batch
}

pub fn model_loss(model: &RnnModel<f64>, batch: &Batch<f64>) -> f64 {
    let (outputs, _) = forward(model, batch).unwrap();
    loss(&outputs, batch).unwrap()
}

/// Factor between the true derivative and the gradient handed to the
/// optimizer for each parameter tensor. Sigmoid-margin spectra get their
/// gradient divided by `2m`.
pub fn gradient_scales(model: &RnnModel<f64>) -> Vec<f64> {
    let mut scales = vec![1.0];
    match &model.transition {
        Transition::Plain { .. } => scales.push(1.0),
        Transition::Factorized(f) => {
            scales.extend([1.0, 1.0]);
            match f.mode {
                SpectrumMode::SigmoidMargin(m) => scales.push(2.0 * m),
                SpectrumMode::Direct => scales.push(1.0),
                SpectrumMode::FrozenOrthogonal => {}
            }
        }
    }
    scales.extend([1.0, 1.0, 1.0]);
    if model.nonlinearity.trainable_alpha().is_some() {
        scales.push(1.0);
    }
    scales
}

/// Sign pattern of every pre-activation, plus pair orderings: a change
/// means a perturbation crossed a kink of a piecewise-linear unit.
fn kink_signature(model: &RnnModel<f64>, batch: &Batch<f64>) -> Vec<bool> {
    let (_, tape) = forward(model, batch).unwrap();
    let mut sig = Vec::new();
    for a in &tape.preacts {
        sig.extend(a.as_slice().iter().map(|&x| x > 0.0));
        for pair in 0..a.rows() / 2 {
            for col in 0..a.cols() {
                sig.push(a[(2 * pair, col)] >= a[(2 * pair + 1, col)]);
            }
        }
    }
    sig
}

#[derive(Debug, Clone, Copy)]
pub struct Probe {
    pub tensor: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl Probe {
    pub fn abs_err(&self) -> f64 {
        (self.analytic - self.numeric).abs()
    }

    pub fn rel_err(&self) -> f64 {
        self.abs_err() / self.analytic.abs().max(self.numeric.abs()).max(f64::MIN_POSITIVE)
    }
}

/// Central differences on `count` randomly chosen scalar parameters.
/// Probes whose perturbation would cross a kink are redrawn.
pub fn probe_gradients(
    model: &RnnModel<f64>,
    batch: &Batch<f64>,
    count: usize,
    h: f64,
    rng: &mut Rng,
) -> Vec<Probe> {
    let (_, grads) = loss_and_gradients(model, batch).unwrap();
    let scales = gradient_scales(model);
    let sizes: Vec<usize> = grads.tensors().iter().map(|t| t.len()).collect();
    assert_eq!(sizes.len(), scales.len());
    let total: usize = sizes.iter().sum();
    let piecewise = matches!(
        model.nonlinearity,
        Nonlinearity::Relu | Nonlinearity::Prelu { .. } | Nonlinearity::Oplu
    );
    let base_sig = piecewise.then(|| kink_signature(model, batch));
    let mut probes = Vec::with_capacity(count);
    let mut attempts = 0;
    while probes.len() < count {
        attempts += 1;
        assert!(attempts < 20 * count, "too many probes sit on kinks");
        let mut flat = rng.below(total);
        let mut tensor = 0;
        while flat >= sizes[tensor] {
            flat -= sizes[tensor];
            tensor += 1;
        }
        let shifted = |delta: f64| {
            let mut m = model.clone();
            m.parameters_mut()[tensor][flat] += delta;
            m
        };
        let (plus, minus) = (shifted(h), shifted(-h));
        if let Some(sig) = &base_sig {
            if &kink_signature(&plus, batch) != sig || &kink_signature(&minus, batch) != sig {
                continue;
            }
        }
        let numeric = (model_loss(&plus, batch) - model_loss(&minus, batch)) / (2.0 * h);
        probes.push(Probe {
            tensor,
            index: flat,
            analytic: grads.tensors()[tensor][flat] * scales[tensor],
            numeric,
        });
    }
    probes
}
