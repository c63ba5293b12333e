//! Dataset loading: MNIST IDX files, CIFAR-10 binary batches and synthetic
//! Gaussian blobs.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::DataError;
use crate::protogen::{rng_stream, DATA_STREAM_BASE};
use crate::tensor::Tensor;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
pub const CIFAR_RECORD: usize = 1 + 3 * 32 * 32;

/// A labelled set of samples with a common per-sample shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    sample_shape: Vec<usize>,
    images: Vec<f32>,
    labels: Vec<usize>,
}

impl Split {
    pub fn new(sample_shape: Vec<usize>, images: Vec<f32>, labels: Vec<usize>) -> Result<Self, DataError> {
        let per: usize = sample_shape.iter().product();
        if per == 0 || images.len() != per * labels.len() {
            return Err(DataError::Invalid(format!(
                "{} values for {} samples of shape {sample_shape:?}",
                images.len(),
                labels.len()
            )));
        }
        Ok(Self {
            sample_shape,
            images,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample_shape(&self) -> &[usize] {
        &self.sample_shape
    }

    pub fn sample(&self, i: usize) -> &[f32] {
        let per = self.sample_len();
        &self.images[i * per..(i + 1) * per]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn sample_len(&self) -> usize {
        self.sample_shape.iter().product()
    }

    /// Gathers the listed samples into a `[len, ...sample_shape]` tensor.
    pub fn batch(&self, indices: &[usize]) -> Option<(Tensor<f32>, Vec<usize>)> {
        if indices.is_empty() {
            return None;
        }
        let mut data = Vec::with_capacity(indices.len() * self.sample_len());
        for &i in indices {
            data.extend_from_slice(self.sample(i));
        }
        let mut shape = vec![indices.len()];
        shape.extend_from_slice(&self.sample_shape);
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Some((Tensor::new(shape, data).expect("sized from split"), labels))
    }

    /// All samples as one tensor, or `None` for an empty split.
    pub fn tensor(&self) -> Option<Tensor<f32>> {
        if self.is_empty() {
            return None;
        }
        let mut shape = vec![self.len()];
        shape.extend_from_slice(&self.sample_shape);
        Some(Tensor::new(shape, self.images.clone()).expect("sized from split"))
    }

    /// The first `n` samples.
    pub fn take(&self, n: usize) -> Split {
        let n = n.min(self.len());
        Split {
            sample_shape: self.sample_shape.clone(),
            images: self.images[..n * self.sample_len()].to_vec(),
            labels: self.labels[..n].to_vec(),
        }
    }

    /// Same samples viewed with another per-sample shape of equal size.
    pub fn reshaped(self, sample_shape: Vec<usize>) -> Result<Split, DataError> {
        if sample_shape.iter().product::<usize>() != self.sample_len() {
            return Err(DataError::Invalid(format!(
                "cannot view {:?} samples as {sample_shape:?}",
                self.sample_shape
            )));
        }
        Ok(Split { sample_shape, ..self })
    }

    fn channels(&self) -> (usize, usize) {
        if self.sample_shape.len() == 3 {
            (self.sample_shape[0], self.sample_shape[1] * self.sample_shape[2])
        } else {
            (1, self.sample_len())
        }
    }

    fn channel_stats(&self) -> (Vec<f32>, Vec<f32>) {
        let (c, plane) = self.channels();
        let mut mean = vec![0.0f32; c];
        let mut std = vec![1.0f32; c];
        if self.is_empty() {
            return (mean, std);
        }
        for ch in 0..c {
            let values = || {
                self.images
                    .chunks(c * plane)
                    .flat_map(move |s| s[ch * plane..(ch + 1) * plane].iter().map(|&v| v as f64))
            };
            let count = (self.len() * plane) as f64;
            let m = values().sum::<f64>() / count;
            let var = values().map(|v| (v - m) * (v - m)).sum::<f64>() / count;
            mean[ch] = m as f32;
            std[ch] = if var > 0.0 { var.sqrt() as f32 } else { 1.0 };
        }
        (mean, std)
    }

    fn normalize(&mut self, mean: &[f32], std: &[f32]) {
        let (c, plane) = self.channels();
        for sample in self.images.chunks_mut(c * plane) {
            for ch in 0..c {
                for v in &mut sample[ch * plane..(ch + 1) * plane] {
                    *v = (*v - mean[ch]) / std[ch];
                }
            }
        }
    }
}

/// Train and test splits normalized with the training set's per-channel
/// statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub train: Split,
    pub test: Split,
    pub classes: usize,
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl Dataset {
    /// Normalizes both splits to zero mean / unit deviation per channel,
    /// using statistics of `train`.
    pub fn new(name: &str, mut train: Split, mut test: Split, classes: usize) -> Result<Self, DataError> {
        if train.sample_shape != test.sample_shape && !test.is_empty() && !train.is_empty() {
            return Err(DataError::Invalid(format!(
                "train samples {:?} vs test samples {:?}",
                train.sample_shape, test.sample_shape
            )));
        }
        for split in [&train, &test] {
            if let Some(&bad) = split.labels.iter().find(|&&l| l >= classes) {
                return Err(DataError::Invalid(format!("label {bad} outside 0..{classes}")));
            }
        }
        let (mean, std) = train.channel_stats();
        train.normalize(&mean, &std);
        test.normalize(&mean, &std);
        Ok(Self {
            name: name.to_string(),
            train,
            test,
            classes,
            mean,
            std,
        })
    }

    /// Keeps only the first `n` training samples (statistics are not
    /// recomputed).
    pub fn limit_train(mut self, n: usize) -> Self {
        self.train = self.train.take(n);
        self
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>, DataError> {
    fs::read(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32, DataError> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| DataError::Truncated {
            path: path.to_path_buf(),
            expected: offset + 4,
            found: bytes.len(),
        })
}

fn check_magic(bytes: &[u8], expected: u32, path: &Path) -> Result<(), DataError> {
    let found = be_u32(bytes, 0, path)?;
    if found != expected {
        return Err(DataError::BadMagic {
            path: path.to_path_buf(),
            found,
            expected,
        });
    }
    Ok(())
}

/// Parses an IDX image file into `(pixels, [n, rows, cols])`.
pub fn read_idx_images(path: &Path) -> Result<(Vec<u8>, [usize; 3]), DataError> {
    let bytes = read_file(path)?;
    check_magic(&bytes, IDX_IMAGES_MAGIC, path)?;
    let n = be_u32(&bytes, 4, path)? as usize;
    let rows = be_u32(&bytes, 8, path)? as usize;
    let cols = be_u32(&bytes, 12, path)? as usize;
    let expected = 16 + n * rows * cols;
    if bytes.len() < expected {
        return Err(DataError::Truncated {
            path: path.to_path_buf(),
            expected,
            found: bytes.len(),
        });
    }
    Ok((bytes[16..expected].to_vec(), [n, rows, cols]))
}

pub fn read_idx_labels(path: &Path) -> Result<Vec<u8>, DataError> {
    let bytes = read_file(path)?;
    check_magic(&bytes, IDX_LABELS_MAGIC, path)?;
    let n = be_u32(&bytes, 4, path)? as usize;
    let expected = 8 + n;
    if bytes.len() < expected {
        return Err(DataError::Truncated {
            path: path.to_path_buf(),
            expected,
            found: bytes.len(),
        });
    }
    Ok(bytes[8..expected].to_vec())
}

/// Loads an IDX image/label pair; pixels scaled to `[0, 1]`, shape
/// `[1, rows, cols]`.
pub fn load_idx(images: &Path, labels: &Path) -> Result<Split, DataError> {
    let (pixels, [n, rows, cols]) = read_idx_images(images)?;
    let labels = read_idx_labels(labels)?;
    if labels.len() != n {
        return Err(DataError::CountMismatch {
            images: n,
            labels: labels.len(),
        });
    }
    if rows == 0 || cols == 0 {
        return Err(DataError::Invalid(format!("{}: zero-sized images", images.display())));
    }
    let images = pixels.iter().map(|&p| p as f32 / 255.0).collect();
    Split::new(
        vec![1, rows, cols],
        images,
        labels.into_iter().map(usize::from).collect(),
    )
}

/// MNIST from `dir` holding the four uncompressed IDX files.
pub fn load_mnist(dir: &Path) -> Result<Dataset, DataError> {
    let train = load_idx(
        &dir.join("train-images-idx3-ubyte"),
        &dir.join("train-labels-idx1-ubyte"),
    )?;
    let test = load_idx(&dir.join("t10k-images-idx3-ubyte"), &dir.join("t10k-labels-idx1-ubyte"))?;
    Dataset::new("mnist", train, test, 10)
}

/// Parses one CIFAR binary batch: records of one label byte followed by 3072
/// channel-planar pixels. Shape `[3, 32, 32]`, pixels scaled to `[0, 1]`.
pub fn load_cifar_bin(path: &Path, classes: usize) -> Result<Split, DataError> {
    let bytes = read_file(path)?;
    if bytes.len() % CIFAR_RECORD != 0 {
        return Err(DataError::RecordSize {
            path: path.to_path_buf(),
            size: bytes.len(),
            record: CIFAR_RECORD,
        });
    }
    let n = bytes.len() / CIFAR_RECORD;
    let mut images = Vec::with_capacity(n * (CIFAR_RECORD - 1));
    let mut labels = Vec::with_capacity(n);
    for (index, record) in bytes.chunks(CIFAR_RECORD).enumerate() {
        let label = record[0];
        if label as usize >= classes {
            return Err(DataError::LabelOutOfRange {
                path: path.to_path_buf(),
                index,
                label,
                classes,
            });
        }
        labels.push(label as usize);
        images.extend(record[1..].iter().map(|&p| p as f32 / 255.0));
    }
    Split::new(vec![3, 32, 32], images, labels)
}

fn concat(splits: Vec<Split>) -> Result<Split, DataError> {
    let shape = splits.first().map_or(vec![3, 32, 32], |s| s.sample_shape.clone());
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for s in splits {
        images.extend(s.images);
        labels.extend(s.labels);
    }
    Split::new(shape, images, labels)
}

/// CIFAR-10 from `dir` (or `dir/cifar-10-batches-bin`).
pub fn load_cifar10(dir: &Path) -> Result<Dataset, DataError> {
    let nested = dir.join("cifar-10-batches-bin");
    let root: PathBuf = if nested.is_dir() { nested } else { dir.to_path_buf() };
    let train = (1..=5)
        .map(|i| load_cifar_bin(&root.join(format!("data_batch_{i}.bin")), 10))
        .collect::<Result<Vec<_>, _>>()?;
    let test = load_cifar_bin(&root.join("test_batch.bin"), 10)?;
    Dataset::new("cifar10", concat(train)?, test, 10)
}

/// Distance between blob means, in units of the per-feature noise deviation.
pub const BLOB_SEPARATION: f64 = 10.0;

/// Isotropic unit-variance Gaussian blobs, `n` training and `n` test samples.
/// Class `c` is centred at `(BLOB_SEPARATION / √2)·e_c`, so every pair of
/// means is `BLOB_SEPARATION` apart. Labels cycle through the classes.
pub fn synth_blobs(classes: usize, n: usize, dim: usize, seed: u64) -> Result<Dataset, DataError> {
    if classes == 0 || dim < classes {
        return Err(DataError::Invalid(format!(
            "blobs need 1 <= classes <= dim, got {classes} classes in {dim} dimensions"
        )));
    }
    let offset = BLOB_SEPARATION / 2f64.sqrt();
    let make = |stream: u64| {
        let mut rng = rng_stream(seed, DATA_STREAM_BASE + stream);
        let mut images = Vec::with_capacity(n * dim);
        let labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
        for &label in &labels {
            for j in 0..dim {
                let centre = if j == label { offset } else { 0.0 };
                images.push((centre + rng.normal()) as f32);
            }
        }
        Split::new(vec![dim], images, labels)
    };
    // Streams far above the epoch-order streams used by training.
    Dataset::new("blobs", make(1 << 24)?, make((1 << 24) + 1)?, classes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn idx_images(n: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
        let mut b = IDX_IMAGES_MAGIC.to_be_bytes().to_vec();
        for v in [n, rows, cols] {
            b.extend(v.to_be_bytes());
        }
        b.extend_from_slice(pixels);
        b
    }

    fn idx_labels(labels: &[u8]) -> Vec<u8> {
        let mut b = IDX_LABELS_MAGIC.to_be_bytes().to_vec();
        b.extend((labels.len() as u32).to_be_bytes());
        b.extend_from_slice(labels);
        b
    }

    #[test]
    fn idx_fixture_round_trip() {
        let dir = tempdir().unwrap();
        let (img, lab) = (dir.path().join("img"), dir.path().join("lab"));
        fs::write(&img, idx_images(2, 2, 2, &[0, 255, 51, 102, 1, 2, 3, 4])).unwrap();
        fs::write(&lab, idx_labels(&[7, 3])).unwrap();
        let split = load_idx(&img, &lab).unwrap();
        assert_eq!(split.len(), 2);
        assert_eq!(split.sample_shape(), &[1, 2, 2]);
        assert_eq!(split.sample(0), &[0.0, 1.0, 0.2, 0.4]);
        assert_eq!(split.sample(1), &[1.0 / 255.0, 2.0 / 255.0, 3.0 / 255.0, 4.0 / 255.0]);
        assert_eq!(split.labels(), &[7, 3]);
    }

    #[test]
    fn idx_errors() {
        let dir = tempdir().unwrap();
        let (img, lab) = (dir.path().join("img"), dir.path().join("lab"));
        fs::write(&img, idx_labels(&[1, 2])).unwrap();
        fs::write(&lab, idx_labels(&[1])).unwrap();
        assert!(matches!(load_idx(&img, &lab), Err(DataError::BadMagic { .. })));

        fs::write(&img, idx_images(2, 2, 2, &[0; 8])).unwrap();
        assert!(matches!(
            load_idx(&img, &lab),
            Err(DataError::CountMismatch { images: 2, labels: 1 })
        ));

        fs::write(&img, idx_images(2, 2, 2, &[0; 7])).unwrap();
        assert!(matches!(load_idx(&img, &lab), Err(DataError::Truncated { .. })));

        let missing = dir.path().join("nope");
        let err = load_idx(&missing, &lab).unwrap_err();
        assert!(err.to_string().contains("nope"), "{err}");
    }

    #[test]
    fn cifar_fixture() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("batch.bin");
        let mut bytes = Vec::new();
        for label in [3u8, 9] {
            bytes.push(label);
            bytes.extend((0..3072).map(|i| ((i + label as usize) % 256) as u8));
        }
        fs::write(&path, &bytes).unwrap();
        let split = load_cifar_bin(&path, 10).unwrap();
        assert_eq!(split.labels(), &[3, 9]);
        assert_eq!(split.sample_shape(), &[3, 32, 32]);
        assert_eq!(split.sample(1)[1024], ((1024 + 9) % 256) as f32 / 255.0);

        fs::write(&path, []).unwrap();
        assert_eq!(load_cifar_bin(&path, 10).unwrap().len(), 0);

        fs::write(&path, &bytes[..3000]).unwrap();
        assert!(matches!(load_cifar_bin(&path, 10), Err(DataError::RecordSize { .. })));

        bytes[0] = 10;
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            load_cifar_bin(&path, 10),
            Err(DataError::LabelOutOfRange { label: 10, .. })
        ));
    }

    #[test]
    fn normalization_uses_train_statistics() {
        let train = Split::new(vec![2], vec![0.0, 2.0, 2.0, 4.0], vec![0, 1]).unwrap();
        let test = Split::new(vec![2], vec![2.0, 2.0], vec![1]).unwrap();
        let ds = Dataset::new("t", train, test, 2).unwrap();
        assert_eq!(ds.mean, vec![2.0]);
        assert_eq!(ds.train.sample(0), &[-std::f32::consts::SQRT_2, 0.0]);
        assert_eq!(ds.test.sample(0), &[0.0, 0.0]);
    }

    #[test]
    fn blobs_are_deterministic_and_separable() {
        let a = synth_blobs(2, 500, 4, 7).unwrap();
        assert_eq!(a, synth_blobs(2, 500, 4, 7).unwrap());
        assert_ne!(a.train, synth_blobs(2, 500, 4, 8).unwrap().train);
        // Nearest-mean (Bayes) rule on the raw geometry: compare coordinates 0 and 1.
        let correct = (0..a.test.len())
            .filter(|&i| {
                let s = a.test.sample(i);
                let pred = usize::from(s[1] > s[0]);
                pred == a.test.labels()[i]
            })
            .count();
        assert!(correct as f64 / a.test.len() as f64 >= 0.999);
        let empty = synth_blobs(3, 0, 3, 1).unwrap();
        assert!(empty.train.is_empty() && empty.test.is_empty());
        assert!(synth_blobs(5, 10, 3, 1).is_err());
    }
}
