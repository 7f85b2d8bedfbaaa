use std::path::Path;

use crate::error::{Error, Result};
use crate::matcore::Matrix;
use crate::rnncell::{Batch, Targets};
use crate::scalar::Scalar;

/// Known characters; every other character maps to [`UNKNOWN`].
pub const ALPHABET: &str = "abcdefghijklmnopqrstuvwxyz0123456789 .,;:'\"?!-()";
/// Index of the unknown-character placeholder.
pub const UNKNOWN: usize = 48;
/// Vocabulary size, placeholder included.
pub const VOCAB_SIZE: usize = 49;
/// How the placeholder is rendered.
pub const UNKNOWN_CHAR: char = '~';

pub fn index_of(c: char) -> usize {
    ALPHABET.chars().position(|a| a == c).unwrap_or(UNKNOWN)
}

pub fn char_of(index: usize) -> char {
    ALPHABET.chars().nth(index).unwrap_or(UNKNOWN_CHAR)
}

/// Lowercases a line and maps it to vocabulary indices.
pub fn encode(line: &str) -> Vec<usize> {
    line.chars()
        .flat_map(char::to_lowercase)
        .map(index_of)
        .collect()
}

/// Sentences as index sequences, one per input line.
#[derive(Clone, Debug, PartialEq)]
pub struct CharCorpus {
    pub max_len: usize,
    pub sequences: Vec<Vec<usize>>,
}

/// FNV-1a, used to assign lines to the validation split stably.
fn fnv1a(seq: &[usize]) -> u64 {
    seq.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &x| {
        (h ^ x as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

impl CharCorpus {
    /// Builds a corpus from text, keeping lines of 2 to `max_len` characters.
    pub fn from_text(text: &str, max_len: usize) -> Result<Self> {
        let sequences: Vec<Vec<usize>> = text
            .lines()
            .map(encode)
            .filter(|s| s.len() >= 2 && s.len() <= max_len)
            .collect();
        if sequences.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "no line of 2 to {max_len} characters in the corpus"
            )));
        }
        Ok(CharCorpus { max_len, sequences })
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    /// Roughly 5% of lines, chosen by content hash, go to validation.
    pub fn split_validation(&self) -> (CharCorpus, CharCorpus) {
        let (val, train): (Vec<_>, Vec<_>) = self
            .sequences
            .iter()
            .cloned()
            .partition(|s| fnv1a(s).is_multiple_of(20));
        let wrap = |sequences| CharCorpus {
            max_len: self.max_len,
            sequences,
        };
        (wrap(train), wrap(val))
    }

    /// `(inputs, targets)` for one sentence: step `t` predicts character `t + 1`.
    pub fn pair(&self, index: usize) -> (&[usize], &[usize]) {
        let s = &self.sequences[index];
        (&s[..s.len() - 1], &s[1..])
    }

    /// Minibatch of the listed sentences, one-hot encoded and padded to the
    /// longest; padded steps carry zero loss weight.
    pub fn batch<T: Scalar>(&self, indices: &[usize]) -> Batch<T> {
        let bs = indices.len();
        let steps = indices
            .iter()
            .map(|&i| self.sequences[i].len() - 1)
            .max()
            .expect("non-empty minibatch");
        let mut inputs = vec![Matrix::zeros(VOCAB_SIZE, bs); steps];
        let mut classes = vec![vec![0usize; bs]; steps];
        let mut mask = vec![vec![T::zero(); bs]; steps];
        for (col, &i) in indices.iter().enumerate() {
            let (x, y) = self.pair(i);
            for t in 0..x.len() {
                inputs[t][(x[t], col)] = T::one();
                classes[t][col] = y[t];
                mask[t][col] = T::one();
            }
        }
        Batch::new(inputs, Targets::Classes(classes), mask).expect("well-formed sentence batch")
    }

    /// Sentence indices grouped into length-sorted minibatches, so padding
    /// stays small. Ties keep corpus order.
    pub fn bucketed_batches(&self, batch_size: usize) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by_key(|&i| self.sequences[i].len());
        order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
    }
}

/// Reads a sentence-per-line text file.
pub fn load_char_corpus(path: impl AsRef<Path>, max_len: usize) -> Result<CharCorpus> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let text = String::from_utf8_lossy(&bytes);
    CharCorpus::from_text(&text, max_len)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vocabulary_has_49_entries_and_round_trips() {
        assert_eq!(ALPHABET.chars().count() + 1, VOCAB_SIZE);
        for i in 0..VOCAB_SIZE {
            assert_eq!(index_of(char_of(i)), i);
        }
        assert_eq!(index_of('é'), UNKNOWN);
        assert_eq!(encode("A b"), vec![0, 36, 1]);
    }

    #[test]
    fn two_character_line_gives_one_pair() {
        let c = CharCorpus::from_text("ab\n", 75).unwrap();
        assert_eq!(c.pair(0), (&[0][..], &[1][..]));
    }

    #[test]
    fn long_and_trivial_lines_are_dropped() {
        let c = CharCorpus::from_text("abc\nabcdef\nx\n", 4).unwrap();
        assert_eq!(c.sequences, vec![vec![0, 1, 2]]);
        assert!(CharCorpus::from_text("toolong\n", 3).is_err());
    }

    #[test]
    fn padded_steps_are_masked() {
        let c = CharCorpus::from_text("abcd\nab\n", 10).unwrap();
        let b: Batch<f64> = c.batch(&[0, 1]);
        assert_eq!(b.len(), 3);
        assert_eq!(b.mask[0], vec![1.0, 1.0]);
        assert_eq!(b.mask[1], vec![1.0, 0.0]);
        assert_eq!(b.mask_total(), 4.0);
    }

    #[test]
    fn buckets_are_sorted_by_length() {
        let c = CharCorpus::from_text("abcde\nab\nabc\nabcd\n", 10).unwrap();
        let buckets = c.bucketed_batches(2);
        assert_eq!(buckets, vec![vec![1, 2], vec![3, 0]]);
    }
}
