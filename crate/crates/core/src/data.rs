//! Synthetic datasets, file loaders, and the stratified member/non-member/shadow split.

use std::path::Path;

use crate::error::{invalid, Error, Result};
use crate::nn::{Dataset, Sample};
use crate::rng::{streams, Rng};

/// Isotropic Gaussian mixture with one component per class.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub dim: usize,
    pub per_class: usize,
    /// Distance of each class mean from the origin.
    pub separation: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.dim == 0 {
            return invalid("synthetic data needs at least one class and one dimension");
        }
        if !(self.separation >= 0.0) || !(self.noise_std > 0.0) {
            return invalid(format!(
                "separation must be >= 0 and noise std > 0, got {} and {}",
                self.separation, self.noise_std
            ));
        }
        Ok(())
    }
}

/// Class means: random unit directions scaled to `separation`.
pub fn class_means(spec: &SyntheticSpec) -> Vec<Vec<f64>> {
    let mut rng = Rng::stream(spec.seed, streams::SYNTH);
    (0..spec.num_classes)
        .map(|_| {
            let dir: Vec<f64> = (0..spec.dim).map(|_| rng.normal()).collect();
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
            dir.iter().map(|v| spec.separation * v / norm).collect()
        })
        .collect()
}

/// Draws `per_class` samples for each class, class by class. The class means depend only
/// on `spec.seed`; `draw_seed` selects the sample draws, so train and test sets can share
/// means but not points.
pub fn gen_gaussian_mixture_with(spec: &SyntheticSpec, draw_seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let means = class_means(spec);
    let mut rng = Rng::stream(draw_seed, streams::SYNTH + 1);
    let mut samples = Vec::with_capacity(spec.num_classes * spec.per_class);
    for (label, mean) in means.iter().enumerate() {
        for _ in 0..spec.per_class {
            let features = mean
                .iter()
                .map(|m| m + spec.noise_std * rng.normal())
                .collect();
            samples.push(Sample::new(samples.len(), features, label));
        }
    }
    Dataset::new(samples, spec.num_classes, spec.dim)
}

pub fn gen_gaussian_mixture(spec: &SyntheticSpec) -> Result<Dataset> {
    gen_gaussian_mixture_with(spec, spec.seed)
}

/// Members (`target_train`), non-members (`target_test`), and the two shadow halves.
#[derive(Debug, Clone, PartialEq)]
pub struct FourWaySplit {
    pub target_train: Dataset,
    pub target_test: Dataset,
    pub shadow_train: Dataset,
    pub shadow_test: Dataset,
}

/// Per class, shuffles and halves; the target half gets the extra sample of an odd class.
fn halve_per_class(data: &Dataset, rng: &mut Rng) -> (Dataset, Dataset) {
    let mut target = Vec::new();
    let mut shadow = Vec::new();
    for class in 0..data.num_classes() {
        let mut idx: Vec<usize> = data
            .iter()
            .enumerate()
            .filter(|(_, s)| s.label == class)
            .map(|(i, _)| i)
            .collect();
        rng.shuffle(&mut idx);
        let cut = idx.len().div_ceil(2);
        target.extend_from_slice(&idx[..cut]);
        shadow.extend_from_slice(&idx[cut..]);
    }
    (data.subset(&target), data.subset(&shadow))
}

pub fn stratified_four_way(
    default_train: &Dataset,
    default_test: &Dataset,
    seed: u64,
) -> Result<FourWaySplit> {
    if default_train.num_classes() != default_test.num_classes()
        || default_train.dim() != default_test.dim()
    {
        return invalid("train and test sets disagree on classes or dimensionality");
    }
    for (name, set) in [("train", default_train), ("test", default_test)] {
        if let Some(c) = set.class_counts().iter().position(|&n| n == 0) {
            return invalid(format!("class {c} is missing from the {name} set"));
        }
    }
    let mut rng = Rng::stream(seed, streams::SPLIT);
    let (target_train, shadow_train) = halve_per_class(default_train, &mut rng);
    let (target_test, shadow_test) = halve_per_class(default_test, &mut rng);
    Ok(FourWaySplit {
        target_train,
        target_test,
        shadow_train,
        shadow_test,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CifarVariant {
    Ten,
    Hundred,
}

pub const CIFAR_PIXELS: usize = 3072;

impl CifarVariant {
    pub fn record_len(self) -> usize {
        match self {
            CifarVariant::Ten => 1 + CIFAR_PIXELS,
            CifarVariant::Hundred => 2 + CIFAR_PIXELS,
        }
    }

    pub fn num_classes(self) -> usize {
        match self {
            CifarVariant::Ten => 10,
            CifarVariant::Hundred => 100,
        }
    }
}

/// Decodes CIFAR binary records. Pixels keep their channel-major order and are scaled to
/// `[0, 1]`; CIFAR-100 uses the fine label.
pub fn decode_cifar(bytes: &[u8], variant: CifarVariant, path: &Path) -> Result<Dataset> {
    let rec = variant.record_len();
    let format_err = |message: String| Error::Format {
        path: path.to_path_buf(),
        message,
    };
    if !bytes.len().is_multiple_of(rec) {
        let offset = bytes.len() - bytes.len() % rec;
        return Err(format_err(format!(
            "partial record at byte offset {offset}: file length {} is not a multiple of {rec}",
            bytes.len()
        )));
    }
    let label_at = rec - CIFAR_PIXELS - 1;
    let mut samples = Vec::with_capacity(bytes.len() / rec);
    for (i, record) in bytes.chunks_exact(rec).enumerate() {
        let label = record[label_at] as usize;
        if label >= variant.num_classes() {
            return Err(format_err(format!(
                "label {label} out of range at byte offset {}",
                i * rec + label_at
            )));
        }
        let features = record[rec - CIFAR_PIXELS..]
            .iter()
            .map(|&b| b as f64 / 255.0)
            .collect();
        samples.push(Sample::new(i, features, label));
    }
    Dataset::new(samples, variant.num_classes(), CIFAR_PIXELS)
}

pub fn load_cifar_binary(path: &Path, variant: CifarVariant) -> Result<Dataset> {
    let bytes = std::fs::read(path).map_err(|e| with_path(e, path))?;
    decode_cifar(&bytes, variant, path)
}

/// Reads rows of `d` numeric features followed by an integer label. `K` is one more than
/// the largest label. An empty file gives an empty dataset.
pub fn load_csv(path: &Path) -> Result<Dataset> {
    let format_err = |row: usize, message: String| Error::Format {
        path: path.to_path_buf(),
        message: format!("row {row}: {message}"),
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_io(e, path))?;
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut dim = None;
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| format_err(row, e.to_string()))?;
        if record.len() < 2 {
            return Err(format_err(
                row,
                format!("expected features and a label, got {} fields", record.len()),
            ));
        }
        let d = record.len() - 1;
        match dim {
            None => dim = Some(d),
            Some(expected) if expected != d => {
                return Err(format_err(
                    row,
                    format!("{d} features, earlier rows have {expected}"),
                ));
            }
            _ => {}
        }
        let features = record
            .iter()
            .take(d)
            .enumerate()
            .map(|(col, field)| {
                field.parse::<f64>().map_err(|_| {
                    format_err(
                        row,
                        format!("column {}: '{field}' is not a number", col + 1),
                    )
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        let label_field = &record[d];
        let label = label_field.parse::<usize>().map_err(|_| {
            format_err(
                row,
                format!("label '{label_field}' is not a non-negative integer"),
            )
        })?;
        rows.push(features);
        labels.push(label);
    }
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let dim = dim.unwrap_or(0);
    let samples = rows
        .into_iter()
        .zip(labels)
        .enumerate()
        .map(|(id, (f, l))| Sample::new(id, f, l))
        .collect();
    Dataset::new(samples, k, dim)
}

/// Keeps the error kind and prefixes the message with the file name.
pub(crate) fn with_path(e: std::io::Error, path: &Path) -> Error {
    Error::Io(std::io::Error::new(
        e.kind(),
        format!("{}: {e}", path.display()),
    ))
}

fn csv_io(e: csv::Error, path: &Path) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => with_path(io, path),
        other => Error::Format {
            path: path.to_path_buf(),
            message: format!("{other:?}"),
        },
    }
}

/// Writes `features..., label` rows; floats use the shortest representation that parses
/// back to the same value.
pub fn write_csv(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut writer = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| csv_io(e, path))?;
    for s in dataset {
        let mut fields: Vec<String> = s.features.iter().map(|v| v.to_string()).collect();
        fields.push(s.label.to_string());
        writer.write_record(&fields).map_err(|e| csv_io(e, path))?;
    }
    writer.flush()?;
    Ok(())
}
