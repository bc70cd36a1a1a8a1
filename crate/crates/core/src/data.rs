//! Datasets: IDX (MNIST-style) ingestion, the synthetic 1-d regression
//! problem, and seeded train/eval/reserve splits.

use std::io::Read;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::autodiff::Tensor;
use crate::network::argmax;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{file} file has magic {found:#010x}, expected {expected:#010x}")]
    BadMagic { file: &'static str, found: u32, expected: u32 },
    #[error("{file} file truncated: expected {expected} bytes, found {found}")]
    Truncated { file: &'static str, expected: usize, found: usize },
    #[error("image file holds {images} samples but label file holds {labels}")]
    CountMismatch { images: usize, labels: usize },
    #[error("label {0} is outside 0..10")]
    InvalidLabel(u8),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("split needs {requested} samples but only {available} are available")]
    Oversubscribed { requested: usize, available: usize },
    #[error("invalid dataset: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, DataError>;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;
pub const NUM_CLASSES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Classification { classes: usize },
    Regression,
}

/// Inputs and targets as row-major matrices (one sample per row).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    inputs: Tensor,
    targets: Tensor,
    task: Task,
}

impl Dataset {
    pub fn new(name: impl Into<String>, inputs: Tensor, targets: Tensor, task: Task) -> Result<Self> {
        if inputs.rank() != 2 || targets.rank() != 2 || inputs.rows() != targets.rows() {
            return Err(DataError::Invalid(format!(
                "inputs {:?} and targets {:?} do not pair up",
                inputs.shape(),
                targets.shape()
            )));
        }
        if let Task::Classification { classes } = task {
            if targets.cols() != classes {
                return Err(DataError::Invalid(format!("targets must have {classes} columns")));
            }
            for r in 0..targets.rows() {
                let row = targets.row(r);
                let ones = row.iter().filter(|&&v| v == 1.0).count();
                let zeros = row.iter().filter(|&&v| v == 0.0).count();
                if ones != 1 || zeros != classes - 1 {
                    return Err(DataError::Invalid(format!("target row {r} is not one-hot")));
                }
            }
        }
        Ok(Self {
            name: name.into(),
            inputs,
            targets,
            task,
        })
    }

    pub fn inputs(&self) -> &Tensor {
        &self.inputs
    }

    pub fn targets(&self) -> &Tensor {
        &self.targets
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.targets.cols()
    }

    /// Class index per sample (argmax of the one-hot target).
    pub fn labels(&self) -> Vec<usize> {
        (0..self.len()).map(|r| argmax(self.targets.row(r))).collect()
    }

    /// Inputs and targets of the listed samples.
    pub fn batch(&self, indices: &[usize]) -> (Tensor, Tensor) {
        (self.inputs.select_rows(indices), self.targets.select_rows(indices))
    }

    /// Panics on an empty index list.
    pub fn subset(&self, indices: &[usize], name: impl Into<String>) -> Dataset {
        assert!(!indices.is_empty(), "subset must be nonempty");
        let (inputs, targets) = self.batch(indices);
        Dataset {
            name: name.into(),
            inputs,
            targets,
            task: self.task,
        }
    }

    /// First `n` samples (or all of them).
    pub fn head(&self, n: usize) -> Dataset {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx, self.name.clone())
    }
}

fn gunzip_if_needed(bytes: &[u8]) -> Result<std::borrow::Cow<'_, [u8]>> {
    if bytes.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        flate2::read::GzDecoder::new(bytes).read_to_end(&mut out)?;
        Ok(out.into())
    } else {
        Ok(bytes.into())
    }
}

fn be_u32(bytes: &[u8], offset: usize, file: &'static str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or(DataError::Truncated {
            file,
            expected: offset + 4,
            found: bytes.len(),
        })
}

/// Parses an IDX image file and its label file (either may be gzipped).
/// Pixels are scaled by 1/255, labels become one-hot rows.
pub fn parse_idx(images: &[u8], labels: &[u8]) -> Result<Dataset> {
    let images = gunzip_if_needed(images)?;
    let labels = gunzip_if_needed(labels)?;

    let magic = be_u32(&images, 0, "image")?;
    if magic != IMAGE_MAGIC {
        return Err(DataError::BadMagic {
            file: "image",
            found: magic,
            expected: IMAGE_MAGIC,
        });
    }
    let magic = be_u32(&labels, 0, "label")?;
    if magic != LABEL_MAGIC {
        return Err(DataError::BadMagic {
            file: "label",
            found: magic,
            expected: LABEL_MAGIC,
        });
    }
    let count = be_u32(&images, 4, "image")? as usize;
    let rows = be_u32(&images, 8, "image")? as usize;
    let cols = be_u32(&images, 12, "image")? as usize;
    let label_count = be_u32(&labels, 4, "label")? as usize;
    if count != label_count {
        return Err(DataError::CountMismatch {
            images: count,
            labels: label_count,
        });
    }
    let pixels = rows * cols;
    let expected = 16 + count * pixels;
    if images.len() != expected {
        return Err(DataError::Truncated {
            file: "image",
            expected,
            found: images.len(),
        });
    }
    if labels.len() != 8 + count {
        return Err(DataError::Truncated {
            file: "label",
            expected: 8 + count,
            found: labels.len(),
        });
    }
    if count == 0 || pixels == 0 {
        return Err(DataError::Invalid("IDX file holds no samples".into()));
    }
    let inputs: Vec<f64> = images[16..].iter().map(|&b| b as f64 / 255.0).collect();
    let mut targets = vec![0.0; count * NUM_CLASSES];
    for (i, &l) in labels[8..].iter().enumerate() {
        if l as usize >= NUM_CLASSES {
            return Err(DataError::InvalidLabel(l));
        }
        targets[i * NUM_CLASSES + l as usize] = 1.0;
    }
    let inputs = Tensor::matrix(count, pixels, inputs).expect("sizes checked");
    let targets = Tensor::matrix(count, NUM_CLASSES, targets).expect("sizes checked");
    Dataset::new("idx", inputs, targets, Task::Classification { classes: NUM_CLASSES })
}

/// Encodes raw images and labels as uncompressed IDX files.
pub fn write_idx(pixels: &[u8], rows: usize, cols: usize, labels: &[u8]) -> (Vec<u8>, Vec<u8>) {
    assert_eq!(pixels.len(), labels.len() * rows * cols, "pixel count");
    let mut img = Vec::with_capacity(16 + pixels.len());
    img.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
    for d in [labels.len(), rows, cols] {
        img.extend_from_slice(&(d as u32).to_be_bytes());
    }
    img.extend_from_slice(pixels);
    let mut lab = Vec::with_capacity(8 + labels.len());
    lab.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    lab.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    lab.extend_from_slice(labels);
    (img, lab)
}

/// Loads `<stem>` or `<stem>.gz` for the image and label files in `dir`.
pub fn load_idx_dir(dir: &Path, images: &str, labels: &str) -> Result<Dataset> {
    let read = |stem: &str| -> Result<Vec<u8>> {
        let plain = dir.join(stem);
        if plain.exists() {
            return Ok(std::fs::read(plain)?);
        }
        Ok(std::fs::read(dir.join(format!("{stem}.gz")))?)
    };
    let mut ds = parse_idx(&read(images)?, &read(labels)?)?;
    ds.name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    Ok(ds)
}

/// Ground truth of the regression problem: `½·max(|x| − 3, 0)`.
pub fn regression_target(x: f64) -> f64 {
    0.5 * (x.abs() - 3.0).max(0.0)
}

/// Sampling support of the regression inputs.
pub const REGRESSION_INTERVALS: [(f64, f64); 3] = [(-4.0, -3.0), (-0.3, 0.3), (3.0, 4.0)];

/// Domain on which regression pairs and prediction curves live.
pub const REGRESSION_DOMAIN: (f64, f64) = (-4.0, 4.0);

/// `n` noisy samples of [`regression_target`] with inputs uniform on
/// [`REGRESSION_INTERVALS`] (each interval weighted by its length).
pub fn regression_dataset(n: usize, noise: f64, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(DataError::Invalid("regression set needs n >= 1".into()));
    }
    if !(noise >= 0.0) {
        return Err(DataError::Invalid(format!("noise level {noise} must be >= 0")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total: f64 = REGRESSION_INTERVALS.iter().map(|(a, b)| b - a).sum();
    let normal = Normal::new(0.0, noise).expect("noise checked");
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let mut u = rng.random_range(0.0..total);
        let mut x = REGRESSION_INTERVALS[2].1;
        for &(a, b) in &REGRESSION_INTERVALS {
            if u < b - a {
                x = a + u;
                break;
            }
            u -= b - a;
        }
        xs.push(x);
        ys.push(regression_target(x) + normal.sample(&mut rng));
    }
    Dataset::new(
        "regression",
        Tensor::matrix(n, 1, xs).expect("n >= 1"),
        Tensor::matrix(n, 1, ys).expect("n >= 1"),
        Task::Regression,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSpec {
    pub train: usize,
    pub eval: usize,
    pub reserve: usize,
    pub seed: u64,
}

/// Seeded disjoint partition into (train, eval, lipschitz reserve).
pub fn split(dataset: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset, Dataset)> {
    let requested = spec.train + spec.eval + spec.reserve;
    if requested > dataset.len() {
        return Err(DataError::Oversubscribed {
            requested,
            available: dataset.len(),
        });
    }
    if spec.train == 0 || spec.eval == 0 || spec.reserve == 0 {
        return Err(DataError::Invalid("every split part must be nonempty".into()));
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let (train, rest) = order.split_at(spec.train);
    let (eval, rest) = rest.split_at(spec.eval);
    let reserve = &rest[..spec.reserve];
    Ok((
        dataset.subset(train, format!("{}-train", dataset.name)),
        dataset.subset(eval, format!("{}-eval", dataset.name)),
        dataset.subset(reserve, format!("{}-reserve", dataset.name)),
    ))
}
