use crate::matcore::{Matrix, Rng};
use crate::rnncell::{Batch, Targets};
use crate::scalar::Scalar;

/// Copy-memory task layout.
///
/// A sequence has `T + 20` steps: `n_copy` random symbols, `T - 1` blanks, a
/// delimiter at (0-indexed) step `T`, then `n_copy` more blanks during which
/// the symbols must be reproduced. Category 0 is the blank, `1..=n_symbols`
/// are the symbols and `n_symbols + 1` is the delimiter.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CopySpec {
    pub delay: usize,
    pub n_copy: usize,
    pub n_symbols: usize,
    /// Score only the final `n_copy` steps instead of every step.
    pub copy_positions_only: bool,
}

impl CopySpec {
    pub const BLANK: usize = 0;

    pub fn new(delay: usize) -> Self {
        CopySpec {
            delay,
            n_copy: 10,
            n_symbols: 8,
            copy_positions_only: false,
        }
    }

    pub fn categories(&self) -> usize {
        self.n_symbols + 2
    }

    pub fn delimiter(&self) -> usize {
        self.n_symbols + 1
    }

    pub fn seq_len(&self) -> usize {
        self.delay + 2 * self.n_copy
    }
}

/// Symbol indices for one sequence: `(inputs, targets)`.
pub fn copy_sequence(spec: &CopySpec, rng: &mut Rng) -> (Vec<usize>, Vec<usize>) {
    let len = spec.seq_len();
    let mut inputs = vec![CopySpec::BLANK; len];
    let mut targets = vec![CopySpec::BLANK; len];
    for k in 0..spec.n_copy {
        let symbol = 1 + rng.below(spec.n_symbols);
        inputs[k] = symbol;
        targets[len - spec.n_copy + k] = symbol;
    }
    inputs[spec.delay] = spec.delimiter();
    (inputs, targets)
}

/// One-hot encoded copy batch.
pub fn gen_copy_batch<T: Scalar>(spec: &CopySpec, batch: usize, rng: &mut Rng) -> Batch<T> {
    assert!(spec.delay >= spec.n_copy.max(1), "delay must cover the copied prefix");
    let len = spec.seq_len();
    let cats = spec.categories();
    let mut inputs = vec![Matrix::zeros(cats, batch); len];
    let mut classes = vec![vec![0; batch]; len];
    for b in 0..batch {
        let (xs, ys) = copy_sequence(spec, rng);
        for t in 0..len {
            inputs[t][(xs[t], b)] = T::one();
            classes[t][b] = ys[t];
        }
    }
    let mask = (0..len)
        .map(|t| {
            let scored = !spec.copy_positions_only || t >= len - spec.n_copy;
            vec![if scored { T::one() } else { T::zero() }; batch]
        })
        .collect();
    Batch::new(inputs, Targets::Classes(classes), mask).expect("well-formed copy batch")
}
