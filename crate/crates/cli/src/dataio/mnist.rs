//! MNIST loading on top of the IDX parser: pixel scaling to `[0, 1]` at
//! load time, one-hot targets over the 10 digits, seeded subsampling, and
//! data-directory discovery.

use std::path::{Path, PathBuf};

use ndarray::Array2;
use rsj_core::models::Dataset;
use rsj_core::rng::{derive, streams, SplitMix64};

use super::idx::{load_idx_images, load_idx_labels};
use crate::error::{CliError, Result};

pub const DATA_DIR_ENV: &str = "RSJ_DATA_DIR";

const TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
const TRAIN_LABELS: &str = "train-labels-idx1-ubyte";
const TEST_IMAGES: &str = "t10k-images-idx3-ubyte";
const TEST_LABELS: &str = "t10k-labels-idx1-ubyte";

/// Resolves the MNIST directory from the flag or `RSJ_DATA_DIR`.
pub fn resolve_data_dir(flag: Option<&Path>) -> Result<PathBuf> {
    if let Some(dir) = flag {
        return Ok(dir.to_path_buf());
    }
    if let Ok(dir) = std::env::var(DATA_DIR_ENV) {
        return Ok(PathBuf::from(dir));
    }
    Err(CliError::Config(format!(
        "no data directory: pass --data-dir or set {DATA_DIR_ENV}"
    )))
}

/// Finds `name` or `name.gz` (also tolerating `.` instead of `-` before the
/// idx suffix, as some mirrors ship) under `dir`.
fn find_file(dir: &Path, name: &str) -> Option<PathBuf> {
    let dotted = name.replace("-idx", ".idx");
    for candidate in [
        name.to_string(),
        format!("{name}.gz"),
        dotted.clone(),
        format!("{dotted}.gz"),
    ] {
        let p = dir.join(&candidate);
        if p.exists() {
            return Some(p);
        }
    }
    None
}

pub fn mnist_available(dir: &Path) -> bool {
    [TRAIN_IMAGES, TRAIN_LABELS, TEST_IMAGES, TEST_LABELS]
        .iter()
        .all(|n| find_file(dir, n).is_some())
}

fn load_split(dir: &Path, images_name: &str, labels_name: &str) -> Result<Dataset> {
    let images_path = find_file(dir, images_name)
        .ok_or_else(|| CliError::MissingData { dir: dir.to_path_buf() })?;
    let labels_path = find_file(dir, labels_name)
        .ok_or_else(|| CliError::MissingData { dir: dir.to_path_buf() })?;
    let images = load_idx_images(&images_path)?;
    let labels = load_idx_labels(&labels_path)?;
    if labels.len() != images.count {
        return Err(CliError::Format {
            path: labels_path,
            message: format!("{} labels for {} images", labels.len(), images.count),
        });
    }
    let d = images.rows * images.cols;
    // pixels scaled to [0, 1]
    let mut features = Array2::<f64>::zeros((images.count, d));
    for i in 0..images.count {
        for j in 0..d {
            features[[i, j]] = images.pixels[i * d + j] as f64 / 255.0;
        }
    }
    let labels: Vec<i64> = labels.into_iter().map(|l| l as i64).collect();
    Ok(Dataset::classification(features, labels, 10)?)
}

pub fn load_mnist_train(dir: &Path) -> Result<Dataset> {
    load_split(dir, TRAIN_IMAGES, TRAIN_LABELS)
}

pub fn load_mnist_test(dir: &Path) -> Result<Dataset> {
    load_split(dir, TEST_IMAGES, TEST_LABELS)
}

/// Writes a small synthetic IDX dataset shaped like MNIST (10 classes,
/// square images) into `dir`, for demos and tests. The ten class means
/// cluster around one shared base pattern so sequential tasks interfere
/// the way handwritten digits do.
pub fn write_synthetic_fixture(
    dir: &Path,
    side: usize,
    n_train: usize,
    n_test: usize,
    seed: u64,
) -> Result<()> {
    use super::idx::{write_idx_images, write_idx_labels, IdxImages};
    let d = side * side;
    let mut rng = SplitMix64::new(seed);
    let base: Vec<f64> = (0..d).map(|_| 80.0 + 100.0 * rng.next_f64()).collect();
    let means: Vec<Vec<f64>> = (0..10)
        .map(|_| base.iter().map(|b| b + 25.0 * rng.next_normal()).collect())
        .collect();
    let make = |n: usize, img: &str, lab: &str, stream: u64| -> Result<()> {
        let mut rng = SplitMix64::new(derive(seed, stream));
        let mut pixels = vec![0u8; n * d];
        let mut labels = vec![0u8; n];
        for i in 0..n {
            let c = rng.below(10) as usize;
            labels[i] = c as u8;
            for j in 0..d {
                let v = means[c][j] + 20.0 * rng.next_normal();
                pixels[i * d + j] = v.clamp(0.0, 255.0) as u8;
            }
        }
        write_idx_images(
            &dir.join(img),
            &IdxImages { count: n, rows: side, cols: side, pixels },
        )?;
        write_idx_labels(&dir.join(lab), &labels)
    };
    make(n_train, TRAIN_IMAGES, TRAIN_LABELS, 100)?;
    make(n_test, TEST_IMAGES, TEST_LABELS, 200)
}

/// Seeded subsample without replacement; `take = 0` returns the dataset
/// unchanged.
pub fn subsample(data: &Dataset, take: usize, seed: u64) -> Result<Dataset> {
    if take == 0 || take >= data.n() {
        return Ok(data.clone());
    }
    let mut rng = SplitMix64::new(derive(seed, streams::SUBSAMPLE));
    let idx = rng.sample_indices(data.n(), take);
    Ok(data.select(&idx)?)
}
