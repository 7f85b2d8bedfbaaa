//! Benchmark data: copy and adding generators, sequential MNIST from IDX
//! files, and a sentence-per-line character corpus.

mod adding;
mod chars;
mod copy;
mod mnist;

pub use adding::{adding_sequence, gen_adding_batch, AddingSpec};
pub use chars::{
    char_of, encode, index_of, load_char_corpus, CharCorpus, ALPHABET, UNKNOWN, UNKNOWN_CHAR,
    VOCAB_SIZE,
};
pub use copy::{copy_sequence, gen_copy_batch, CopySpec};
pub use mnist::{
    load_mnist_idx, parse_idx_images, parse_idx_labels, sequentialize_mnist, write_mnist_idx,
    MnistDataset, SequentialMnist,
};
