//! TOML experiment configuration.
//!
//! ```toml
//! output_dir = "runs/baseline"
//! repetitions = 10
//! attacks = ["threshold", "nn"]
//!
//! [dataset]
//! source = "synthetic"          # synthetic | csv | cifar10 | cifar100
//! classes = 2
//! dim = 16
//! train_per_class = 1000        # default training set, halved into members and shadow
//! test_per_class = 1000         # default test set, halved into non-members and shadow
//! separation = 1.0
//! noise_std = 1.0
//! seed = 7
//! split_seed = 0
//!
//! [model]
//! hidden = [256, 256]
//! dropout = 0.0
//!
//! [train]
//! optimizer = "dp-sgd"          # sgd | sam | dp-sgd | dp-sam
//! learning_rate = 0.01
//! schedule = "step-decay"       # step-decay | constant; or segments = [[5, 1.0], [10, 0.2]]
//! epochs = 15
//! batch_size = 32
//! clip = 1.0
//! sigma = 0.5
//! rho = 0.05
//! l2 = 0.0005
//! seed = 0
//! ```
//!
//! For `csv` sources set `train` and `test` to file paths; for CIFAR sources set them to
//! lists of binary batch files. Unknown keys are rejected. Relative paths are resolved
//! against the config file's directory.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::attacks::{AttackKind, AttackTrainConfig};
use crate::data::{
    gen_gaussian_mixture_with, load_cifar_binary, load_csv, stratified_four_way, CifarVariant,
    FourWaySplit, SyntheticSpec,
};
use crate::error::{bad_config, Error, Result};
use crate::eval::ExperimentSpec;
use crate::nn::Dataset;
use crate::optim::{LrSchedule, NoisePlacement, Optimizer, SamMode, TrainConfig};
use crate::privacy::DEFAULT_DELTA;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfigFile {
    pub output_dir: PathBuf,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    #[serde(default = "default_attacks")]
    pub attacks: Vec<String>,
    /// Attack used for `frontier.csv` and `outliers.csv`; defaults to the first listed.
    pub report_attack: Option<String>,
    #[serde(default = "default_true")]
    pub write_checkpoints: bool,
    #[serde(default = "default_true")]
    pub write_decisions: bool,
    pub dataset: DatasetSection,
    pub model: ModelSection,
    pub train: TrainSection,
    #[serde(default)]
    pub attack: AttackSection,
    #[serde(default)]
    pub privacy: PrivacySection,
}

fn default_repetitions() -> usize {
    10
}

fn default_attacks() -> Vec<String> {
    vec!["threshold".into()]
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub source: String,
    pub classes: Option<usize>,
    pub dim: Option<usize>,
    pub train_per_class: Option<usize>,
    pub test_per_class: Option<usize>,
    pub separation: Option<f64>,
    pub noise_std: Option<f64>,
    pub seed: Option<u64>,
    #[serde(default)]
    pub split_seed: u64,
    pub train: Option<PathList>,
    pub test: Option<PathList>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum PathList {
    One(PathBuf),
    Many(Vec<PathBuf>),
}

impl PathList {
    fn paths(&self) -> Vec<PathBuf> {
        match self {
            PathList::One(p) => vec![p.clone()],
            PathList::Many(ps) => ps.clone(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default)]
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub dropout: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub optimizer: String,
    pub learning_rate: f64,
    pub schedule: Option<String>,
    pub segments: Option<Vec<(usize, f64)>>,
    pub epochs: usize,
    pub batch_size: usize,
    pub clip: Option<f64>,
    #[serde(default)]
    pub sigma: f64,
    pub rho: Option<f64>,
    pub sam_mode: Option<String>,
    pub noise_placement: Option<String>,
    #[serde(default)]
    pub l2: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSection {
    /// Top-k confidences fed to the NN attack; defaults to `min(3, K)`.
    pub k: Option<usize>,
    #[serde(default = "default_attack_hidden")]
    pub hidden: usize,
    #[serde(default = "default_attack_epochs")]
    pub epochs: usize,
    #[serde(default = "default_attack_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_attack_batch")]
    pub batch_size: usize,
}

fn default_attack_hidden() -> usize {
    AttackTrainConfig::default().hidden
}
fn default_attack_epochs() -> usize {
    AttackTrainConfig::default().epochs
}
fn default_attack_lr() -> f64 {
    AttackTrainConfig::default().learning_rate
}
fn default_attack_batch() -> usize {
    AttackTrainConfig::default().batch_size
}

impl Default for AttackSection {
    fn default() -> Self {
        Self {
            k: None,
            hidden: default_attack_hidden(),
            epochs: default_attack_epochs(),
            learning_rate: default_attack_lr(),
            batch_size: default_attack_batch(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrivacySection {
    #[serde(default = "default_delta")]
    pub delta: f64,
}

fn default_delta() -> f64 {
    DEFAULT_DELTA
}

impl Default for PrivacySection {
    fn default() -> Self {
        Self {
            delta: DEFAULT_DELTA,
        }
    }
}

/// Parses a config; the error message carries the TOML line and column.
pub fn parse_config(text: &str) -> std::result::Result<ExperimentConfigFile, String> {
    toml::from_str(text).map_err(|e| {
        let location = e
            .span()
            .map(|span| {
                let line = text[..span.start.min(text.len())].matches('\n').count() + 1;
                format!("line {line}: ")
            })
            .unwrap_or_default();
        format!("{location}{}", e.message())
    })
}

fn require<T: Copy>(value: Option<T>, key: &str) -> Result<T> {
    value.ok_or_else(|| Error::InvalidConfig(format!("missing key {key}")))
}

impl ExperimentConfigFile {
    pub fn train_config(&self) -> Result<TrainConfig> {
        let t = &self.train;
        let optimizer: Optimizer = t.optimizer.parse()?;
        let schedule = match (&t.segments, t.schedule.as_deref()) {
            (Some(_), Some(_)) => {
                return bad_config("set either train.schedule or train.segments, not both")
            }
            (Some(segments), None) => LrSchedule::new(t.learning_rate, segments.clone())?,
            (None, None) | (None, Some("step-decay")) => LrSchedule::step_decay(t.learning_rate)?,
            (None, Some("constant")) => LrSchedule::constant(t.learning_rate, t.epochs)?,
            (None, Some(other)) => return bad_config(format!("unknown schedule '{other}'")),
        };
        let sam_mode = match t.sam_mode.as_deref() {
            None | Some("shared") => SamMode::Shared,
            Some("per-sample") => SamMode::PerSample,
            Some(other) => return bad_config(format!("unknown sam_mode '{other}'")),
        };
        let noise_placement = match t.noise_placement.as_deref() {
            None | Some("after-average") => NoisePlacement::AfterAverage,
            Some("inside-average") => NoisePlacement::InsideAverage,
            Some(other) => return bad_config(format!("unknown noise_placement '{other}'")),
        };
        let config = TrainConfig {
            optimizer,
            schedule,
            clip_threshold: t.clip,
            noise_multiplier: t.sigma,
            sam_radius: t.rho,
            sam_mode,
            noise_placement,
            l2_coeff: t.l2,
            dropout_rate: self.model.dropout,
            batch_size: t.batch_size,
            epochs: t.epochs,
            seed: t.seed,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn attacks(&self) -> Result<Vec<AttackKind>> {
        let mut kinds = Vec::new();
        for a in &self.attacks {
            let k: AttackKind = a.parse()?;
            if !kinds.contains(&k) {
                kinds.push(k);
            }
        }
        if kinds.is_empty() {
            return bad_config("attacks must list at least one attack");
        }
        Ok(kinds)
    }

    pub fn report_attack(&self) -> Result<AttackKind> {
        let attacks = self.attacks()?;
        match &self.report_attack {
            None => Ok(attacks[0]),
            Some(name) => {
                let k: AttackKind = name.parse()?;
                if !attacks.contains(&k) {
                    return bad_config(format!(
                        "report_attack '{name}' is not among the selected attacks"
                    ));
                }
                Ok(k)
            }
        }
    }

    fn resolve(base: &Path, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base.join(p)
        }
    }

    /// Loads or generates the default train/test sets and splits them four ways.
    pub fn load_split(&self, base: &Path) -> Result<FourWaySplit> {
        let d = &self.dataset;
        let (train, test) = match d.source.as_str() {
            "synthetic" => {
                let spec = SyntheticSpec {
                    num_classes: require(d.classes, "dataset.classes")?,
                    dim: require(d.dim, "dataset.dim")?,
                    per_class: require(d.train_per_class, "dataset.train_per_class")?,
                    separation: require(d.separation, "dataset.separation")?,
                    noise_std: d.noise_std.unwrap_or(1.0),
                    seed: d.seed.unwrap_or(0),
                };
                let train = gen_gaussian_mixture_with(&spec, spec.seed)?;
                let test_spec = SyntheticSpec {
                    per_class: require(d.test_per_class, "dataset.test_per_class")?,
                    ..spec.clone()
                };
                let test = gen_gaussian_mixture_with(&test_spec, spec.seed.wrapping_add(1))?;
                (train, test)
            }
            "csv" => {
                let train = d
                    .train
                    .as_ref()
                    .ok_or_else(|| Error::InvalidConfig("missing key dataset.train".into()))?;
                let test = d
                    .test
                    .as_ref()
                    .ok_or_else(|| Error::InvalidConfig("missing key dataset.test".into()))?;
                let load = |list: &PathList| -> Result<Dataset> {
                    let paths = list.paths();
                    if paths.len() != 1 {
                        return bad_config("csv sources take exactly one file per set");
                    }
                    load_csv(&Self::resolve(base, &paths[0]))
                };
                let (train, test) = (load(train)?, load(test)?);
                let k = train.num_classes().max(test.num_classes());
                (with_classes(train, k)?, with_classes(test, k)?)
            }
            "cifar10" | "cifar100" => {
                let variant = if d.source == "cifar10" {
                    CifarVariant::Ten
                } else {
                    CifarVariant::Hundred
                };
                let load = |key: &str, list: Option<&PathList>| -> Result<Dataset> {
                    let list = list.ok_or_else(|| {
                        Error::InvalidConfig(format!("missing key dataset.{key}"))
                    })?;
                    let parts = list
                        .paths()
                        .iter()
                        .map(|p| load_cifar_binary(&Self::resolve(base, p), variant))
                        .collect::<Result<Vec<_>>>()?;
                    concat(parts)
                };
                (
                    load("train", d.train.as_ref())?,
                    load("test", d.test.as_ref())?,
                )
            }
            other => return bad_config(format!("unknown dataset source '{other}'")),
        };
        stratified_four_way(&train, &test, d.split_seed)
    }

    pub fn experiment_spec(&self, split: &FourWaySplit) -> Result<ExperimentSpec> {
        if self.repetitions == 0 {
            return bad_config("repetitions must be at least 1");
        }
        let mut arch = vec![split.target_train.dim()];
        arch.extend(&self.model.hidden);
        arch.push(split.target_train.num_classes());
        let a = &self.attack;
        let classes = split.target_train.num_classes();
        let attack_k = a.k.unwrap_or(3.min(classes));
        if attack_k == 0 || attack_k > classes {
            return bad_config(format!("attack.k = {attack_k} must be in 1..={classes}"));
        }
        Ok(ExperimentSpec {
            arch,
            config: self.train_config()?,
            attacks: self.attacks()?,
            repetitions: self.repetitions,
            attack_k,
            attack_train: AttackTrainConfig {
                hidden: a.hidden,
                epochs: a.epochs,
                learning_rate: a.learning_rate,
                batch_size: a.batch_size,
                seed: 0,
            },
            delta: self.privacy.delta,
        })
    }
}

/// Re-labels the label space of `ds` as `k` classes (`k` must cover every label).
pub fn with_classes(ds: Dataset, k: usize) -> Result<Dataset> {
    let dim = ds.dim();
    Dataset::new(ds.into_samples(), k, dim)
}

/// Concatenates datasets, renumbering sample ids.
pub fn concat(parts: Vec<Dataset>) -> Result<Dataset> {
    let Some(first) = parts.first() else {
        return bad_config("no data files listed");
    };
    let (k, dim) = (first.num_classes(), first.dim());
    let mut samples = Vec::new();
    for part in parts {
        for mut s in part.into_samples() {
            s.id = samples.len();
            samples.push(s);
        }
    }
    Dataset::new(samples, k, dim)
}
