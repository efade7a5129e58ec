//! Dataset ingestion: IDX parsing, the verified download cache, and the
//! sum normalization used for Fashion-MNIST.

mod fetch;
mod idx;

use std::fs;
use std::path::Path;

pub use fetch::{
    fetch_dataset, sha256_hex, CacheRecord, DatasetHandle, DatasetManifest, DatasetName,
    ManifestFile, Source,
};
pub use idx::{gunzip, load_idx, IdxData, MAGIC_IMAGES, MAGIC_LABELS};

use crate::encoding::{RngStream, StreamId, DOMAIN_SHUFFLE};
use crate::error::{Result, SnnError};

/// One image with intensities on `[0, 255]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub pixels: Vec<f64>,
    pub label: u8,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn files(self, manifest: &DatasetManifest) -> (&ManifestFile, &ManifestFile) {
        match self {
            Split::Train => (&manifest.train_images, &manifest.train_labels),
            Split::Test => (&manifest.test_images, &manifest.test_labels),
        }
    }
}

/// Pairs an image file with a label file.
pub fn samples_from_idx(images: &IdxData, labels: &IdxData) -> Result<Vec<Sample>> {
    let (count, rows, cols, pixels) = match images {
        IdxData::Images {
            count,
            rows,
            cols,
            pixels,
        } => (*count, *rows, *cols, pixels),
        IdxData::Labels(_) => return Err(SnnError::Data("expected an image file".into())),
    };
    let labels = match labels {
        IdxData::Labels(l) => l,
        IdxData::Images { .. } => return Err(SnnError::Data("expected a label file".into())),
    };
    if labels.len() != count {
        return Err(SnnError::Data(format!(
            "{count} images but {} labels",
            labels.len()
        )));
    }
    if let Some(bad) = labels.iter().find(|&&l| l > 9) {
        return Err(SnnError::Data(format!("label {bad} outside 0..=9")));
    }
    let size = rows * cols;
    Ok(pixels
        .chunks(size)
        .zip(labels)
        .map(|(px, &label)| Sample {
            pixels: px.iter().map(|&p| f64::from(p)).collect(),
            label,
        })
        .collect())
}

/// Reads one split from a directory of IDX files without digest checks.
pub fn load_split_from_dir(dir: &Path, manifest: &DatasetManifest, split: Split) -> Result<Vec<Sample>> {
    let (img, lab) = split.files(manifest);
    let read = |name: &str| {
        let path = dir.join(name);
        fs::read(&path).map_err(|e| SnnError::io(path, e))
    };
    samples_from_idx(&load_idx(&read(&img.filename)?)?, &load_idx(&read(&lab.filename)?)?)
}

impl DatasetHandle {
    pub fn load(&self, split: Split) -> Result<Vec<Sample>> {
        load_split_from_dir(&self.dir, &self.manifest, split)
    }

    /// Normalization target stored in the cache record, computing and
    /// storing it from `train` on first use.
    pub fn target_sum(&self, train: &[Sample]) -> Result<f64> {
        let mut record = CacheRecord::load(&self.dir)?;
        if let Some(t) = record.target_sum {
            return Ok(t);
        }
        let t = mean_pixel_sum(train);
        record.target_sum = Some(t);
        record.save(&self.dir)?;
        Ok(t)
    }
}

pub fn mean_pixel_sum(samples: &[Sample]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    samples
        .iter()
        .map(|s| s.pixels.iter().sum::<f64>())
        .sum::<f64>()
        / samples.len() as f64
}

/// Scales the image to sum to `target_sum`, then clamps to 255.
/// All-zero images are returned unchanged.
pub fn normalize_sum(sample: &Sample, target_sum: f64) -> Sample {
    let sum: f64 = sample.pixels.iter().sum();
    if sum <= 0.0 {
        log::warn!("all-zero image (label {}) left unnormalized", sample.label);
        return sample.clone();
    }
    let f = target_sum / sum;
    Sample {
        pixels: sample.pixels.iter().map(|&p| (p * f).min(255.0)).collect(),
        label: sample.label,
    }
}

/// Presentation order for one epoch: a Fisher-Yates permutation keyed by
/// `(seed, epoch)`.
pub fn epoch_order(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let rng = RngStream::new(seed);
    let key = rng.step_key(StreamId::new(DOMAIN_SHUFFLE, epoch), 0);
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = ((key.bits(i as u64) as u128 * (i as u128 + 1)) >> 64) as usize;
        order.swap(i, j);
    }
    order
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(px: &[f64]) -> Sample {
        Sample {
            pixels: px.to_vec(),
            label: 4,
        }
    }

    #[test]
    fn normalize_halves_double_sum() {
        let s = sample(&[10.0, 20.0, 30.0]);
        let n = normalize_sum(&s, 30.0);
        assert_eq!(n.pixels, vec![5.0, 10.0, 15.0]);
        assert_eq!(n.label, 4);
        assert_eq!(normalize_sum(&s, 60.0), s);
    }

    #[test]
    fn normalize_clamps_and_skips_zero() {
        let n = normalize_sum(&sample(&[100.0, 1.0]), 404.0);
        assert_eq!(n.pixels, vec![255.0, 4.0]);
        let z = sample(&[0.0, 0.0]);
        assert_eq!(normalize_sum(&z, 100.0), z);
    }

    #[test]
    fn epoch_order_is_a_seeded_permutation() {
        let a = epoch_order(1000, 1, 0);
        let mut sorted = a.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..1000).collect::<Vec<_>>());
        assert_eq!(a, epoch_order(1000, 1, 0));
        assert_ne!(a, epoch_order(1000, 1, 1));
        assert_ne!(a, epoch_order(1000, 2, 0));
    }

    #[test]
    fn pairs_images_with_labels() {
        let images = IdxData::Images {
            count: 2,
            rows: 2,
            cols: 2,
            pixels: vec![0, 1, 2, 3, 255, 254, 253, 252],
        };
        let s = samples_from_idx(&images, &IdxData::Labels(vec![7, 1])).unwrap();
        assert_eq!(s[1].pixels, vec![255.0, 254.0, 253.0, 252.0]);
        assert_eq!(s[0].label, 7);
        assert!(samples_from_idx(&images, &IdxData::Labels(vec![7])).is_err());
        assert!(samples_from_idx(&images, &IdxData::Labels(vec![7, 12])).is_err());
    }
}
