use crate::matcore::{Matrix, Rng};
use crate::rnncell::{Batch, Targets};
use crate::scalar::Scalar;

/// Adding task: `T` uniform values with two marked positions, one in each
/// half of the sequence; the target is their sum, scored at the last step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AddingSpec {
    pub len: usize,
}

impl AddingSpec {
    pub fn new(len: usize) -> Self {
        AddingSpec { len }
    }
}

/// One sequence: values, the two marker positions and the target.
pub fn adding_sequence(spec: &AddingSpec, rng: &mut Rng) -> (Vec<f64>, [usize; 2], f64) {
    let half = spec.len / 2;
    let values: Vec<f64> = (0..spec.len).map(|_| rng.uniform()).collect();
    let first = rng.below(half);
    let second = half + rng.below(spec.len - half);
    let target = values[first] + values[second];
    (values, [first, second], target)
}

/// Inputs are `2 x batch` per step: value, indicator.
pub fn gen_adding_batch<T: Scalar>(spec: &AddingSpec, batch: usize, rng: &mut Rng) -> Batch<T> {
    assert!(spec.len >= 2, "adding task needs at least two steps");
    let mut inputs = vec![Matrix::zeros(2, batch); spec.len];
    let mut targets = vec![Matrix::zeros(1, batch); spec.len];
    for b in 0..batch {
        let (values, marks, target) = adding_sequence(spec, rng);
        for (t, &v) in values.iter().enumerate() {
            inputs[t][(0, b)] = T::of(v);
        }
        for m in marks {
            inputs[m][(1, b)] = T::one();
        }
        targets[spec.len - 1][(0, b)] = T::of(target);
    }
    let mask = (0..spec.len)
        .map(|t| vec![if t + 1 == spec.len { T::one() } else { T::zero() }; batch])
        .collect();
    Batch::new(inputs, Targets::Values(targets), mask).expect("well-formed adding batch")
}
