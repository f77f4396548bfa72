//! SGD, SAM, DP-SGD and DP-SAM training with step-decay learning rates.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use crate::error::{bad_config, invalid, Error, Result};
use crate::nn::{init_model, Dataset, Gradient, MlpModel, Sample};
use crate::rng::{streams, Rng};

/// Training algorithm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Optimizer {
    Sgd,
    Sam,
    DpSgd,
    DpSam,
}

impl Optimizer {
    pub fn is_private(self) -> bool {
        matches!(self, Optimizer::DpSgd | Optimizer::DpSam)
    }

    pub fn uses_sam(self) -> bool {
        matches!(self, Optimizer::Sam | Optimizer::DpSam)
    }
}

impl fmt::Display for Optimizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Optimizer::Sgd => "sgd",
            Optimizer::Sam => "sam",
            Optimizer::DpSgd => "dp-sgd",
            Optimizer::DpSam => "dp-sam",
        })
    }
}

impl FromStr for Optimizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "sgd" => Ok(Optimizer::Sgd),
            "sam" => Ok(Optimizer::Sam),
            "dp-sgd" | "dpsgd" => Ok(Optimizer::DpSgd),
            "dp-sam" | "dpsam" => Ok(Optimizer::DpSam),
            other => bad_config(format!("unknown optimizer '{other}'")),
        }
    }
}

/// How non-private SAM picks its perturbation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SamMode {
    /// One perturbation from the batch gradient, shared by all samples.
    #[default]
    Shared,
    /// Each sample is evaluated at its own perturbation, as DP-SAM does.
    PerSample,
}

/// Where the Gaussian noise enters the private gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NoisePlacement {
    /// `mean(clipped) + N(0, sigma^2 C^2)`.
    #[default]
    AfterAverage,
    /// `(sum(clipped) + N(0, sigma^2 C^2)) / b`.
    InsideAverage,
}

/// Piecewise-constant learning rate: `base_rate * multiplier` over consecutive epoch runs.
#[derive(Debug, Clone, PartialEq)]
pub struct LrSchedule {
    base_rate: f64,
    segments: Vec<(usize, f64)>,
}

impl LrSchedule {
    pub fn new(base_rate: f64, segments: Vec<(usize, f64)>) -> Result<Self> {
        if !(base_rate > 0.0 && base_rate.is_finite()) {
            return bad_config(format!("learning rate must be positive, got {base_rate}"));
        }
        if segments.is_empty() {
            return bad_config("learning-rate schedule has no segments");
        }
        for &(epochs, mult) in &segments {
            if epochs == 0 || !(mult > 0.0 && mult.is_finite()) {
                return bad_config(format!(
                    "schedule segment ({epochs}, {mult}) needs a positive epoch count and multiplier"
                ));
            }
        }
        Ok(Self {
            base_rate,
            segments,
        })
    }

    /// 15 epochs: 5 at `lr`, 4 at `0.2 lr`, 3 at `0.2^2 lr`, 3 at `0.2^3 lr`.
    pub fn step_decay(base_rate: f64) -> Result<Self> {
        Self::new(
            base_rate,
            vec![(5, 1.0), (4, 0.2), (3, 0.2 * 0.2), (3, 0.2 * 0.2 * 0.2)],
        )
    }

    pub fn constant(base_rate: f64, epochs: usize) -> Result<Self> {
        Self::new(base_rate, vec![(epochs, 1.0)])
    }

    pub fn base_rate(&self) -> f64 {
        self.base_rate
    }

    pub fn segments(&self) -> &[(usize, f64)] {
        &self.segments
    }

    pub fn total_epochs(&self) -> usize {
        self.segments.iter().map(|s| s.0).sum()
    }

    /// Learning rate for the 1-based `epoch`.
    pub fn lr_at_epoch(&self, epoch: usize) -> Result<f64> {
        if epoch == 0 {
            return invalid("epochs are numbered from 1");
        }
        let mut end = 0;
        for &(count, mult) in &self.segments {
            end += count;
            if epoch <= end {
                return Ok(self.base_rate * mult);
            }
        }
        invalid(format!(
            "epoch {epoch} is past the schedule's {} epochs",
            self.total_epochs()
        ))
    }
}

/// Every hyperparameter of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub optimizer: Optimizer,
    pub schedule: LrSchedule,
    /// Per-sample clipping threshold `C`. Required by the private optimizers; when set for
    /// SGD or SAM it clips per-sample gradients without adding noise.
    pub clip_threshold: Option<f64>,
    /// Noise multiplier `sigma`; the noise standard deviation is `sigma * C`.
    pub noise_multiplier: f64,
    /// Neighbourhood radius `rho` for SAM and DP-SAM.
    pub sam_radius: Option<f64>,
    pub sam_mode: SamMode,
    pub noise_placement: NoisePlacement,
    /// l2 regularisation coefficient `eta`, applied as `eta * w` in the update.
    pub l2_coeff: f64,
    pub dropout_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl TrainConfig {
    /// Plain SGD with the given schedule and no regularisation.
    pub fn sgd(schedule: LrSchedule, batch_size: usize, seed: u64) -> Self {
        let epochs = schedule.total_epochs();
        Self {
            optimizer: Optimizer::Sgd,
            schedule,
            clip_threshold: None,
            noise_multiplier: 0.0,
            sam_radius: None,
            sam_mode: SamMode::Shared,
            noise_placement: NoisePlacement::AfterAverage,
            l2_coeff: 0.0,
            dropout_rate: 0.0,
            batch_size,
            epochs,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return bad_config("epochs must be positive");
        }
        if self.schedule.total_epochs() != self.epochs {
            return bad_config(format!(
                "schedule covers {} epochs but training runs {}",
                self.schedule.total_epochs(),
                self.epochs
            ));
        }
        if self.batch_size == 0 {
            return bad_config("batch size must be at least 1");
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad_config(format!(
                "dropout rate must be in [0, 1), got {}",
                self.dropout_rate
            ));
        }
        if !(self.l2_coeff >= 0.0 && self.l2_coeff.is_finite()) {
            return bad_config(format!(
                "l2 coefficient must be >= 0, got {}",
                self.l2_coeff
            ));
        }
        if !(self.noise_multiplier >= 0.0 && self.noise_multiplier.is_finite()) {
            return bad_config(format!(
                "noise multiplier must be >= 0, got {}",
                self.noise_multiplier
            ));
        }
        match self.clip_threshold {
            Some(c) if !(c > 0.0) => {
                return bad_config(format!("clipping threshold must be positive, got {c}"))
            }
            None if self.optimizer.is_private() => {
                return bad_config(format!("{} requires a clipping threshold", self.optimizer))
            }
            _ => {}
        }
        if !self.optimizer.is_private() && self.noise_multiplier > 0.0 {
            return bad_config(format!(
                "{} does not add noise; set sigma to 0",
                self.optimizer
            ));
        }
        match self.sam_radius {
            Some(r) if !(r > 0.0 && r.is_finite()) => {
                return bad_config(format!("SAM radius must be positive, got {r}"))
            }
            None if self.optimizer.uses_sam() => {
                return bad_config(format!("{} requires a SAM radius", self.optimizer))
            }
            _ => {}
        }
        Ok(())
    }
}

/// Rescales `g` to norm `c` when its global norm exceeds `c`.
pub fn clip(g: &Gradient, c: f64) -> Gradient {
    let mut out = g.clone();
    clip_in_place(&mut out, c);
    out
}

fn clip_in_place(g: &mut Gradient, c: f64) {
    let norm = g.norm();
    if norm > c {
        g.scale(c / norm);
    }
}

/// First-order SAM ascent direction `rho * g / ||g||`; zero when `g` is zero.
pub fn sam_perturbation(g: &Gradient, rho: f64) -> Gradient {
    let mut e = g.clone();
    let norm = g.norm();
    if norm > 0.0 {
        e.scale(rho / norm);
    } else {
        e.scale(0.0);
    }
    e
}

/// Random streams consumed by [`step`].
#[derive(Debug, Clone)]
pub struct StepRngs {
    pub dropout: Rng,
    pub noise: Rng,
}

impl StepRngs {
    pub fn from_seed(seed: u64) -> Self {
        Self {
            dropout: Rng::stream(seed, streams::DROPOUT),
            noise: Rng::stream(seed, streams::NOISE),
        }
    }
}

/// Mean of per-sample gradients, each clipped to `c` when given. With `sam_rho`, every
/// sample's gradient is taken at its own perturbation `rho * g_i / ||g_i||`. Scratch
/// buffers are reused across samples.
fn per_sample_mean(
    model: &MlpModel,
    batch: &[Sample],
    c: Option<f64>,
    sam_rho: Option<f64>,
    dropout: &mut Rng,
) -> Result<Gradient> {
    if batch.is_empty() {
        return invalid("batch is empty");
    }
    for s in batch {
        model.check_sample(s)?;
    }
    let mut sum = Gradient::zeros(model.dims());
    let mut g = Gradient::zeros(model.dims());
    let mut shifted = sam_rho.map(|_| model.clone());
    for s in batch {
        g.values_mut().fill(0.0);
        model.accumulate_gradient(s, dropout, 1.0, g.values_mut());
        if let (Some(rho), Some(shifted)) = (sam_rho, shifted.as_mut()) {
            let norm = g.norm();
            let factor = if norm > 0.0 { rho / norm } else { 1.0 };
            for ((w, &p), &gv) in shifted
                .params_mut()
                .iter_mut()
                .zip(model.params())
                .zip(g.values())
            {
                *w = p + gv * factor;
            }
            g.values_mut().fill(0.0);
            shifted.accumulate_gradient(s, dropout, 1.0, g.values_mut());
        }
        if let Some(c) = c {
            clip_in_place(&mut g, c);
        }
        sum.add_assign(&g);
    }
    sum.scale(1.0 / batch.len() as f64);
    Ok(sum)
}

/// Adds `N(0, std^2)` to every coordinate, layer-major and row-major.
fn add_noise(g: &mut Gradient, std: f64, rng: &mut Rng) {
    if std == 0.0 {
        return;
    }
    for v in g.values_mut() {
        *v += std * rng.normal();
    }
}

fn private_gradient(
    model: &MlpModel,
    batch: &[Sample],
    config: &TrainConfig,
    sam_rho: Option<f64>,
    rngs: &mut StepRngs,
) -> Result<Gradient> {
    let b = batch.len() as f64;
    let c = config
        .clip_threshold
        .ok_or_else(|| Error::InvalidConfig("private step without clipping threshold".into()))?;
    let mut g = per_sample_mean(model, batch, Some(c), sam_rho, &mut rngs.dropout)?;
    let std = match config.noise_placement {
        NoisePlacement::AfterAverage => config.noise_multiplier * c,
        NoisePlacement::InsideAverage => config.noise_multiplier * c / b,
    };
    add_noise(&mut g, std, &mut rngs.noise);
    Ok(g)
}

/// The descent direction for one batch, before l2 regularisation.
fn descent_direction(
    model: &MlpModel,
    batch: &[Sample],
    config: &TrainConfig,
    rngs: &mut StepRngs,
) -> Result<Gradient> {
    let dropout = &mut rngs.dropout;
    match config.optimizer {
        Optimizer::Sgd => match config.clip_threshold {
            None => model.batch_gradient(batch, dropout),
            c => per_sample_mean(model, batch, c, None, dropout),
        },
        Optimizer::Sam => {
            let rho = config.sam_radius.unwrap_or_default();
            match config.sam_mode {
                SamMode::Shared => {
                    let g1 = model.batch_gradient(batch, dropout)?;
                    let shifted = model.perturbed(&sam_perturbation(&g1, rho));
                    match config.clip_threshold {
                        None => shifted.batch_gradient(batch, dropout),
                        c => per_sample_mean(&shifted, batch, c, None, dropout),
                    }
                }
                SamMode::PerSample => {
                    per_sample_mean(model, batch, config.clip_threshold, Some(rho), dropout)
                }
            }
        }
        Optimizer::DpSgd => private_gradient(model, batch, config, None, rngs),
        Optimizer::DpSam => private_gradient(model, batch, config, config.sam_radius, rngs),
    }
}

/// One update `w <- w - lr_t * (direction + eta * w)` on `batch`.
pub fn step(
    model: &mut MlpModel,
    batch: &[Sample],
    config: &TrainConfig,
    epoch: usize,
    rngs: &mut StepRngs,
) -> Result<()> {
    config.validate()?;
    if batch.is_empty() {
        return invalid("batch is empty");
    }
    let lr = config.schedule.lr_at_epoch(epoch)?;
    let direction = descent_direction(model, batch, config, rngs)?;
    let eta = config.l2_coeff;
    for (w, d) in model.params_mut().iter_mut().zip(direction.values()) {
        *w -= lr * (d + eta * *w);
    }
    Ok(())
}

/// Model snapshot after a completed epoch (1-based).
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub epoch: usize,
    pub model: MlpModel,
}

/// Trains a fresh `arch` model on `dataset`, returning one checkpoint per epoch.
pub fn train(dataset: &Dataset, arch: &[usize], config: &TrainConfig) -> Result<Vec<Checkpoint>> {
    config.validate()?;
    let model = init_model(arch, config.dropout_rate, config.seed)?;
    train_from(model, dataset, config)
}

/// Trains starting from `model`.
pub fn train_from(
    mut model: MlpModel,
    dataset: &Dataset,
    config: &TrainConfig,
) -> Result<Vec<Checkpoint>> {
    config.validate()?;
    if dataset.is_empty() {
        return invalid("training set is empty");
    }
    if config.batch_size > dataset.len() {
        return bad_config(format!(
            "batch size {} exceeds the {} training samples",
            config.batch_size,
            dataset.len()
        ));
    }
    if dataset.dim() != model.input_dim() || dataset.num_classes() > model.num_classes() {
        return invalid(format!(
            "dataset (d={}, K={}) does not fit model dims {:?}",
            dataset.dim(),
            dataset.num_classes(),
            model.dims()
        ));
    }
    let mut shuffle = Rng::stream(config.seed, streams::SHUFFLE);
    let mut rngs = StepRngs::from_seed(config.seed);
    let samples = dataset.samples();
    let mut checkpoints = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        let order = shuffle.permutation(samples.len());
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<Sample> = chunk.iter().map(|&i| samples[i].clone()).collect();
            step(&mut model, &batch, config, epoch, &mut rngs)?;
        }
        checkpoints.push(Checkpoint {
            epoch,
            model: model.clone(),
        });
    }
    Ok(checkpoints)
}

/// Number of batches per epoch for `n` samples.
pub fn batches_per_epoch(n: usize, batch_size: usize) -> usize {
    n.div_ceil(batch_size)
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"MIAB";
pub const CHECKPOINT_VERSION: u32 = 1;

impl Checkpoint {
    /// Serialises the model: magic, version, dim count, dims, then parameters as
    /// little-endian `f64` in layer-major, row-major order.
    pub fn to_bytes(&self) -> Vec<u8> {
        encode_model(&self.model)
    }

    pub fn write_to(&self, path: &Path) -> Result<()> {
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(&self.to_bytes()))
            .map_err(|e| crate::data::with_path(e, path))
    }
}

pub fn encode_model(model: &MlpModel) -> Vec<u8> {
    let dims = model.dims();
    let mut out = Vec::with_capacity(12 + 4 * dims.len() + 8 * model.params().len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for p in model.params() {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

/// Parses a checkpoint produced by [`encode_model`]. The loaded model has no dropout.
pub fn decode_model(bytes: &[u8]) -> std::result::Result<MlpModel, String> {
    let mut cursor = bytes;
    let mut take = |n: usize, what: &str| -> std::result::Result<&[u8], String> {
        if cursor.len() < n {
            return Err(format!(
                "truncated at byte {} while reading {what}",
                bytes.len() - cursor.len()
            ));
        }
        let (head, tail) = cursor.split_at(n);
        cursor = tail;
        Ok(head)
    };
    let u32_at = |b: &[u8]| u32::from_le_bytes(b.try_into().expect("4 bytes"));

    if take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err("missing MIAB magic".into());
    }
    let version = u32_at(take(4, "version")?);
    if version != CHECKPOINT_VERSION {
        return Err(format!("unsupported checkpoint version {version}"));
    }
    let count = u32_at(take(4, "layer count")?) as usize;
    let mut dims = Vec::with_capacity(count);
    for _ in 0..count {
        dims.push(u32_at(take(4, "layer dims")?) as usize);
    }
    let n = crate::nn::param_count(&dims);
    let mut params = Vec::with_capacity(n);
    for _ in 0..n {
        params.push(f64::from_le_bytes(
            take(8, "parameters")?.try_into().expect("8 bytes"),
        ));
    }
    if !cursor.is_empty() {
        return Err(format!("{} trailing bytes", cursor.len()));
    }
    MlpModel::from_params(dims, params, 0.0).map_err(|e| e.to_string())
}

pub fn read_model(path: &Path) -> Result<MlpModel> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| crate::data::with_path(e, path))?;
    decode_model(&bytes).map_err(|message| Error::Format {
        path: path.to_path_buf(),
        message,
    })
}
