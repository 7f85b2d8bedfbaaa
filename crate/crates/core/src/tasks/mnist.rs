use std::path::Path;

use crate::error::{Error, Result};
use crate::matcore::{Matrix, Rng};
use crate::rnncell::{Batch, Targets};
use crate::scalar::Scalar;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

/// Images flattened row-major and scaled to `[0, 1]`, with their labels.
#[derive(Clone, Debug, PartialEq)]
pub struct MnistDataset {
    pub rows: usize,
    pub cols: usize,
    pub images: Vec<Vec<f64>>,
    pub labels: Vec<u8>,
}

impl MnistDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn pixels(&self) -> usize {
        self.rows * self.cols
    }

    /// Keeps only the listed examples, in the given order.
    pub fn select(&self, indices: &[usize]) -> MnistDataset {
        MnistDataset {
            rows: self.rows,
            cols: self.cols,
            images: indices.iter().map(|&i| self.images[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Splits off the last `n` examples, e.g. as a validation set.
    pub fn split_tail(&self, n: usize) -> (MnistDataset, MnistDataset) {
        let cut = self.len().saturating_sub(n);
        let head: Vec<usize> = (0..cut).collect();
        let tail: Vec<usize> = (cut..self.len()).collect();
        (self.select(&head), self.select(&tail))
    }
}

fn format_err(detail: impl Into<String>) -> Error {
    Error::Format {
        format: "IDX",
        detail: detail.into(),
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    what: &'a str,
}

impl<'a> Cursor<'a> {
    fn u32(&mut self) -> Result<u32> {
        let end = self.pos + 4;
        let chunk = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| format_err(format!("{} header is truncated", self.what)))?;
        self.pos = end;
        Ok(u32::from_be_bytes(chunk.try_into().expect("four bytes")))
    }

    fn rest(&self, expected: usize) -> Result<&'a [u8]> {
        let body = &self.bytes[self.pos..];
        if body.len() < expected {
            return Err(format_err(format!(
                "{} body is truncated: {} of {expected} bytes",
                self.what,
                body.len()
            )));
        }
        Ok(&body[..expected])
    }
}

/// Parses an IDX image file held in memory: `(count, rows, cols, pixels)`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, usize, &[u8])> {
    let mut cur = Cursor {
        bytes,
        pos: 0,
        what: "image file",
    };
    let magic = cur.u32()?;
    if magic != IMAGES_MAGIC {
        return Err(format_err(format!(
            "image magic {magic:#010x}, expected {IMAGES_MAGIC:#010x}"
        )));
    }
    let count = cur.u32()? as usize;
    let rows = cur.u32()? as usize;
    let cols = cur.u32()? as usize;
    let body = cur.rest(count * rows * cols)?;
    Ok((count, rows, cols, body))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<&[u8]> {
    let mut cur = Cursor {
        bytes,
        pos: 0,
        what: "label file",
    };
    let magic = cur.u32()?;
    if magic != LABELS_MAGIC {
        return Err(format_err(format!(
            "label magic {magic:#010x}, expected {LABELS_MAGIC:#010x}"
        )));
    }
    let count = cur.u32()? as usize;
    cur.rest(count)
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Loads an IDX image/label file pair.
pub fn load_mnist_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<MnistDataset> {
    let image_bytes = read(images_path.as_ref())?;
    let label_bytes = read(labels_path.as_ref())?;
    let (count, rows, cols, pixels) = parse_idx_images(&image_bytes)?;
    let labels = parse_idx_labels(&label_bytes)?;
    if labels.len() != count {
        return Err(format_err(format!(
            "{count} images but {} labels",
            labels.len()
        )));
    }
    let size = rows * cols;
    let images = if size == 0 {
        vec![Vec::new(); count]
    } else {
        pixels
            .chunks_exact(size)
            .map(|img| img.iter().map(|&p| f64::from(p) / 255.0).collect())
            .collect()
    };
    Ok(MnistDataset {
        rows,
        cols,
        images,
        labels: labels.to_vec(),
    })
}

/// Writes an IDX image/label pair; pixels are `round(255 x)`.
pub fn write_mnist_idx(
    data: &MnistDataset,
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<()> {
    let mut img = Vec::with_capacity(16 + data.len() * data.pixels());
    img.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    for dim in [data.len(), data.rows, data.cols] {
        img.extend_from_slice(&(dim as u32).to_be_bytes());
    }
    for image in &data.images {
        img.extend(image.iter().map(|&x| (x * 255.0).round().clamp(0.0, 255.0) as u8));
    }
    let mut lab = Vec::with_capacity(8 + data.len());
    lab.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    lab.extend_from_slice(&(data.len() as u32).to_be_bytes());
    lab.extend_from_slice(&data.labels);
    std::fs::write(images_path.as_ref(), img).map_err(|e| Error::io(images_path.as_ref(), e))?;
    std::fs::write(labels_path.as_ref(), lab).map_err(|e| Error::io(labels_path.as_ref(), e))
}

/// Pixel-by-pixel view of an image set, optionally under one fixed pixel
/// permutation shared by every image.
#[derive(Clone, Debug)]
pub struct SequentialMnist {
    pub data: MnistDataset,
    pub permutation: Option<Vec<usize>>,
}

/// Wraps a dataset as length-`rows * cols` scalar sequences. A permutation
/// seed draws one pixel order that every image then follows.
pub fn sequentialize_mnist(data: MnistDataset, permutation_seed: Option<u64>) -> SequentialMnist {
    let permutation = permutation_seed.map(|seed| Rng::new(seed).permutation(data.pixels()));
    SequentialMnist { data, permutation }
}

impl SequentialMnist {
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Pixel sequence of one image.
    pub fn sequence(&self, index: usize) -> Vec<f64> {
        let image = &self.data.images[index];
        match &self.permutation {
            Some(p) => p.iter().map(|&k| image[k]).collect(),
            None => image.clone(),
        }
    }

    /// Batch of the listed images; the label is scored at the last step only.
    pub fn batch<T: Scalar>(&self, indices: &[usize]) -> Batch<T> {
        let steps = self.data.pixels();
        let bs = indices.len();
        let mut inputs = vec![Matrix::zeros(1, bs); steps];
        let mut classes = vec![vec![0usize; bs]; steps];
        for (col, &i) in indices.iter().enumerate() {
            for (t, v) in self.sequence(i).into_iter().enumerate() {
                inputs[t][(0, col)] = T::of(v);
            }
            classes[steps - 1][col] = usize::from(self.data.labels[i]);
        }
        let mask = (0..steps)
            .map(|t| vec![if t + 1 == steps { T::one() } else { T::zero() }; bs])
            .collect();
        Batch::new(inputs, Targets::Classes(classes), mask).expect("well-formed image batch")
    }

    /// Consecutive minibatches over `order` (the last one may be short).
    pub fn batches<'a, T: Scalar>(
        &'a self,
        order: &'a [usize],
        batch_size: usize,
    ) -> impl Iterator<Item = Batch<T>> + 'a {
        order.chunks(batch_size.max(1)).map(move |chunk| self.batch(chunk))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> MnistDataset {
        MnistDataset {
            rows: 2,
            cols: 3,
            images: vec![
                vec![0.0; 6],
                vec![1.0, 0.5, 0.0, 1.0, 0.25, 0.75],
                vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6],
            ],
            labels: vec![0, 7, 3],
        }
    }

    #[test]
    fn round_trip_through_files() {
        let dir = tempfile::tempdir().unwrap();
        let (i, l) = (dir.path().join("i"), dir.path().join("l"));
        write_mnist_idx(&tiny(), &i, &l).unwrap();
        let back = load_mnist_idx(&i, &l).unwrap();
        assert_eq!(back.labels, vec![0, 7, 3]);
        assert_eq!(back.images[0], vec![0.0; 6]);
        assert_eq!(back.images[1][0], 1.0);
        assert_eq!((back.rows, back.cols), (2, 3));
    }

    #[test]
    fn malformed_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (i, l) = (dir.path().join("i"), dir.path().join("l"));
        write_mnist_idx(&tiny(), &i, &l).unwrap();
        let good_images = std::fs::read(&i).unwrap();
        let good_labels = std::fs::read(&l).unwrap();

        // labels swapped for images
        assert!(matches!(load_mnist_idx(&l, &l), Err(Error::Format { .. })));
        // truncated body
        std::fs::write(&i, &good_images[..good_images.len() - 1]).unwrap();
        assert!(load_mnist_idx(&i, &l).is_err());
        // count mismatch
        std::fs::write(&i, &good_images).unwrap();
        let mut short = good_labels.clone();
        short[7] = 2;
        short.pop();
        std::fs::write(&l, &short).unwrap();
        assert!(load_mnist_idx(&i, &l).is_err());
        // truncated header
        std::fs::write(&i, &good_images[..6]).unwrap();
        assert!(load_mnist_idx(&i, &l).is_err());
    }

    #[test]
    fn sequences_follow_flattening_or_permutation() {
        let seq = sequentialize_mnist(tiny(), None);
        assert_eq!(seq.sequence(2), tiny().images[2]);
        let a = sequentialize_mnist(tiny(), Some(9));
        let b = sequentialize_mnist(tiny(), Some(9));
        assert_eq!(a.permutation, b.permutation);
        let mut p = a.permutation.clone().unwrap();
        p.sort_unstable();
        assert_eq!(p, (0..6).collect::<Vec<_>>());
        let img = &tiny().images[2];
        let perm = a.permutation.as_ref().unwrap();
        for (t, v) in a.sequence(2).iter().enumerate() {
            assert_eq!(*v, img[perm[t]]);
        }
    }

    #[test]
    fn batch_scores_only_the_last_pixel() {
        let seq = sequentialize_mnist(tiny(), None);
        let b: Batch<f64> = seq.batch(&[1, 2]);
        assert_eq!(b.len(), 6);
        assert_eq!(b.mask_total(), 2.0);
        match &b.targets {
            Targets::Classes(c) => assert_eq!(c[5], vec![7, 3]),
            _ => unreachable!(),
        }
        assert_eq!(b.inputs[1][(0, 0)], 0.5);
    }
}
