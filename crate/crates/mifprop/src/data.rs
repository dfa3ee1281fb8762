use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::Path;
use thiserror::Error;

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;
const SIDE: usize = 28;
pub const PIXELS: usize = SIDE * SIDE;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("bad magic number 0x{found:08x}, expected 0x{expected:08x}")]
    BadMagic { expected: u32, found: u32 },
    #[error("file truncated: need {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("{extra} unexpected trailing bytes after the payload")]
    TrailingBytes { extra: usize },
    #[error("image dimensions {rows}x{cols}, expected 28x28")]
    WrongDimensions { rows: u32, cols: u32 },
    #[error("label {value} at index {index} is out of range 0..=9")]
    LabelOutOfRange { index: usize, value: u8 },
    #[error("{images} images but {labels} labels")]
    LengthMismatch { images: usize, labels: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// An in-memory image-classification dataset: row-major 28x28 images
/// flattened to 784 intensities in [0, 1], one label 0..=9 per image.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    images: Array2<f64>,
    labels: Vec<u8>,
    split: Split,
}

impl Dataset {
    pub fn new(images: Array2<f64>, labels: Vec<u8>, split: Split) -> Result<Self, DataError> {
        if images.nrows() != labels.len() {
            return Err(DataError::LengthMismatch { images: images.nrows(), labels: labels.len() });
        }
        if let Some((index, &value)) = labels.iter().enumerate().find(|&(_, &l)| l > 9) {
            return Err(DataError::LabelOutOfRange { index, value });
        }
        Ok(Self { images, labels, split })
    }

    /// Loads an images/labels file pair in IDX format.
    pub fn from_idx_files(
        images_path: &Path,
        labels_path: &Path,
        split: Split,
    ) -> Result<Self, DataError> {
        let images = parse_idx_images(&std::fs::read(images_path)?)?;
        let labels = parse_idx_labels(&std::fs::read(labels_path)?)?;
        Self::new(images, labels, split)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn images(&self) -> &Array2<f64> {
        &self.images
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn split(&self) -> Split {
        self.split
    }

    /// Copies the given rows into a dense batch.
    pub fn gather(&self, indices: &[usize]) -> (Array2<f64>, Vec<usize>) {
        let mut batch = Array2::zeros((indices.len(), self.images.ncols()));
        let mut targets = Vec::with_capacity(indices.len());
        for (row, &idx) in indices.iter().enumerate() {
            batch.row_mut(row).assign(&self.images.row(idx));
            targets.push(self.labels[idx] as usize);
        }
        (batch, targets)
    }

    /// Seeded epoch batching; see [`make_batches`].
    pub fn batches(&self, batch_size: usize, seed: u64) -> Vec<Vec<usize>> {
        make_batches(self.len(), batch_size, seed)
    }
}

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32, DataError> {
    let end = offset + 4;
    if bytes.len() < end {
        return Err(DataError::Truncated { expected: end, found: bytes.len() });
    }
    Ok(u32::from_be_bytes(bytes[offset..end].try_into().unwrap()))
}

/// Parses an IDX image file (big-endian magic 0x00000803, then counts and
/// 28x28 payload) into an N x 784 matrix of intensities divided by 255.
pub fn parse_idx_images(bytes: &[u8]) -> Result<Array2<f64>, DataError> {
    let magic = read_u32(bytes, 0)?;
    if magic != IMAGE_MAGIC {
        return Err(DataError::BadMagic { expected: IMAGE_MAGIC, found: magic });
    }
    let n = read_u32(bytes, 4)? as usize;
    let rows = read_u32(bytes, 8)?;
    let cols = read_u32(bytes, 12)?;
    if rows != SIDE as u32 || cols != SIDE as u32 {
        return Err(DataError::WrongDimensions { rows, cols });
    }
    let expected = 16 + n * PIXELS;
    if bytes.len() < expected {
        return Err(DataError::Truncated { expected, found: bytes.len() });
    }
    if bytes.len() > expected {
        return Err(DataError::TrailingBytes { extra: bytes.len() - expected });
    }
    let mut images = Array2::zeros((n, PIXELS));
    for (idx, &byte) in bytes[16..].iter().enumerate() {
        images[[idx / PIXELS, idx % PIXELS]] = byte as f64 / 255.0;
    }
    Ok(images)
}

/// Parses an IDX label file (magic 0x00000801); every label is validated to
/// lie in 0..=9.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>, DataError> {
    let magic = read_u32(bytes, 0)?;
    if magic != LABEL_MAGIC {
        return Err(DataError::BadMagic { expected: LABEL_MAGIC, found: magic });
    }
    let n = read_u32(bytes, 4)? as usize;
    let expected = 8 + n;
    if bytes.len() < expected {
        return Err(DataError::Truncated { expected, found: bytes.len() });
    }
    if bytes.len() > expected {
        return Err(DataError::TrailingBytes { extra: bytes.len() - expected });
    }
    let labels = bytes[8..].to_vec();
    if let Some((index, &value)) = labels.iter().enumerate().find(|&(_, &l)| l > 9) {
        return Err(DataError::LabelOutOfRange { index, value });
    }
    Ok(labels)
}

/// Inverse of [`parse_idx_images`]: re-quantizes intensities to bytes
/// (round(p * 255)) and emits a standard IDX image file.
pub fn serialize_idx_images(images: &Array2<f64>) -> Vec<u8> {
    assert_eq!(images.ncols(), PIXELS, "images must be flattened 28x28");
    let n = images.nrows();
    let mut bytes = Vec::with_capacity(16 + n * PIXELS);
    bytes.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
    bytes.extend_from_slice(&(n as u32).to_be_bytes());
    bytes.extend_from_slice(&(SIDE as u32).to_be_bytes());
    bytes.extend_from_slice(&(SIDE as u32).to_be_bytes());
    for &p in images.iter() {
        bytes.push((p * 255.0).round().clamp(0.0, 255.0) as u8);
    }
    bytes
}

/// Inverse of [`parse_idx_labels`].
pub fn serialize_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut bytes = Vec::with_capacity(8 + labels.len());
    bytes.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    bytes.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    bytes.extend_from_slice(labels);
    bytes
}

/// A seeded permutation of 0..n cut into batches; the final short batch is
/// kept. The shuffle is Fisher-Yates over a ChaCha8 stream, so the epoch
/// order is identical on every platform for a given seed.
pub fn make_batches(n: usize, batch_size: usize, seed: u64) -> Vec<Vec<usize>> {
    assert!(batch_size >= 1, "batch_size must be at least 1");
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    order.chunks(batch_size).map(|chunk| chunk.to_vec()).collect()
}
