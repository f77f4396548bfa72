//! Repeated seeded experiments, per-epoch measurements, and cross-run summaries.

use rayon::prelude::*;

use crate::attacks::{
    evaluate_attack, fit_threshold, train_shadow_attack, AttackEvaluation, AttackKind,
    AttackTrainConfig, ShadowAttackModel, ThresholdMode,
};
use crate::data::FourWaySplit;
use crate::error::{invalid, Result};
use crate::nn::test_accuracy;
use crate::optim::{train, Checkpoint, TrainConfig};
use crate::privacy::{epsilon_from_rdp, AccountantConfig, DEFAULT_DELTA};

/// Normal-approximation 97.5% quantile.
pub const Z_95: f64 = 1.96;

/// Offset mixed into a run's seed to train its shadow model.
const SHADOW_SEED_SALT: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub arch: Vec<usize>,
    /// `config.seed` is the base seed; run `r` uses `seed + r`.
    pub config: TrainConfig,
    pub attacks: Vec<AttackKind>,
    pub repetitions: usize,
    /// Top-k confidences fed to the NN attack.
    pub attack_k: usize,
    pub attack_train: AttackTrainConfig,
    pub delta: f64,
}

impl ExperimentSpec {
    pub fn new(
        arch: Vec<usize>,
        config: TrainConfig,
        attacks: Vec<AttackKind>,
        repetitions: usize,
    ) -> Self {
        Self {
            arch,
            config,
            attacks,
            repetitions,
            attack_k: 3,
            attack_train: AttackTrainConfig::default(),
            delta: DEFAULT_DELTA,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackRecord {
    pub attack: AttackKind,
    pub evaluation: AttackEvaluation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub test_accuracy: f64,
    pub attacks: Vec<AttackRecord>,
    /// Cumulative ε at this epoch; infinite for non-private training or `sigma = 0`.
    pub epsilon: f64,
}

impl EpochRecord {
    pub fn attack(&self, kind: AttackKind) -> Option<&AttackEvaluation> {
        self.attacks
            .iter()
            .find(|a| a.attack == kind)
            .map(|a| &a.evaluation)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub run: usize,
    pub seed: u64,
    pub records: Vec<EpochRecord>,
    pub checkpoints: Vec<Checkpoint>,
}

/// ε after each epoch for a training run over `n` members.
pub fn epsilon_per_epoch(config: &TrainConfig, n: usize, delta: f64) -> Result<Vec<f64>> {
    (1..=config.epochs)
        .map(|epoch| {
            if !config.optimizer.is_private() {
                return Ok(f64::INFINITY);
            }
            let acc = AccountantConfig::for_training(
                n,
                config.batch_size,
                epoch,
                config.noise_multiplier,
                delta,
            );
            epsilon_from_rdp(&acc)
        })
        .collect()
}

fn run_once(
    split: &FourWaySplit,
    spec: &ExperimentSpec,
    run: usize,
    epsilons: &[f64],
) -> Result<RunResult> {
    let seed = spec.config.seed.wrapping_add(run as u64);
    let config = TrainConfig {
        seed,
        ..spec.config.clone()
    };
    let checkpoints = train(&split.target_train, &spec.arch, &config)?;

    let nn_attack: Option<ShadowAttackModel> = if spec.attacks.contains(&AttackKind::Nn) {
        let shadow_config = TrainConfig {
            seed: seed ^ SHADOW_SEED_SALT,
            ..config.clone()
        };
        let attack_cfg = AttackTrainConfig {
            seed,
            ..spec.attack_train.clone()
        };
        Some(train_shadow_attack(
            &split.shadow_train,
            &split.shadow_test,
            &spec.arch,
            &shadow_config,
            spec.attack_k,
            &attack_cfg,
        )?)
    } else {
        None
    };

    let members = &split.target_train;
    let nonmembers = &split.target_test;
    let mut records = Vec::with_capacity(checkpoints.len());
    for (cp, &epsilon) in checkpoints.iter().zip(epsilons) {
        let model = &cp.model;
        let mut attacks = Vec::with_capacity(spec.attacks.len());
        for &kind in &spec.attacks {
            let evaluation = match kind {
                AttackKind::Threshold | AttackKind::ThresholdPerClass => {
                    let mode = if kind == AttackKind::Threshold {
                        ThresholdMode::Global
                    } else {
                        ThresholdMode::PerClass
                    };
                    let tm = fit_threshold(model, members, mode)?;
                    evaluate_attack(|s| tm.decide(model, s), members, nonmembers)?
                }
                AttackKind::Nn => {
                    let am = nn_attack.as_ref().expect("trained above");
                    evaluate_attack(|s| am.decide(model, s), members, nonmembers)?
                }
            };
            attacks.push(AttackRecord {
                attack: kind,
                evaluation,
            });
        }
        records.push(EpochRecord {
            epoch: cp.epoch,
            test_accuracy: test_accuracy(model, nonmembers)?,
            attacks,
            epsilon,
        });
    }
    Ok(RunResult {
        run,
        seed,
        records,
        checkpoints,
    })
}

/// Trains `spec.repetitions` target models and measures every checkpoint. Runs execute in
/// parallel; results are in run order and do not depend on the thread count.
pub fn run_experiment(split: &FourWaySplit, spec: &ExperimentSpec) -> Result<Vec<RunResult>> {
    spec.config.validate()?;
    if spec.repetitions == 0 {
        return invalid("at least one repetition is required");
    }
    if split.target_train.is_empty() || split.target_test.is_empty() {
        return invalid("member and non-member sets must be non-empty");
    }
    let epsilons = epsilon_per_epoch(&spec.config, split.target_train.len(), spec.delta)?;
    (0..spec.repetitions)
        .into_par_iter()
        .map(|run| run_once(split, spec, run, &epsilons))
        .collect()
}

/// Mean and 95% half-width `1.96 s / sqrt(R)`; the half-width is 0 for a single value.
pub fn mean_ci(values: &[f64]) -> (f64, f64) {
    let r = values.len() as f64;
    let mean = values.iter().sum::<f64>() / r;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (r - 1.0);
    (mean, Z_95 * var.sqrt() / r.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrontierPoint {
    pub epoch: usize,
    pub mean_accuracy: f64,
    pub mean_p_err: f64,
    pub ci_accuracy: f64,
    pub ci_p_err: f64,
    pub run_count: usize,
}

/// Aggregates per-run `(accuracy, p_err)` series, indexed `[run][epoch - 1]`.
pub fn aggregate_series(series: &[Vec<(f64, f64)>]) -> Result<Vec<FrontierPoint>> {
    let Some(first) = series.first() else {
        return invalid("no runs to aggregate");
    };
    let epochs = first.len();
    if let Some(bad) = series.iter().position(|s| s.len() != epochs) {
        return invalid(format!(
            "run {bad} has {} epochs, run 0 has {epochs}",
            series[bad].len()
        ));
    }
    Ok((0..epochs)
        .map(|e| {
            let acc: Vec<f64> = series.iter().map(|s| s[e].0).collect();
            let perr: Vec<f64> = series.iter().map(|s| s[e].1).collect();
            let (mean_accuracy, ci_accuracy) = mean_ci(&acc);
            let (mean_p_err, ci_p_err) = mean_ci(&perr);
            FrontierPoint {
                epoch: e + 1,
                mean_accuracy,
                mean_p_err,
                ci_accuracy,
                ci_p_err,
                run_count: series.len(),
            }
        })
        .collect())
}

/// Per-epoch frontier for one attack.
pub fn aggregate(runs: &[RunResult], attack: AttackKind) -> Result<Vec<FrontierPoint>> {
    let series = runs
        .iter()
        .map(|run| {
            run.records
                .iter()
                .map(|r| {
                    r.attack(attack)
                        .map(|ev| (r.test_accuracy, ev.p_err))
                        .ok_or_else(|| {
                            crate::Error::InvalidInput(format!(
                                "run {} lacks attack {attack}",
                                run.run
                            ))
                        })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    aggregate_series(&series)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutlierReport {
    pub epoch: usize,
    pub member_outlier_fraction: f64,
    pub nonmember_outlier_fraction: f64,
    pub average_fraction: f64,
    /// Positions in the member set decided "member" in every run.
    pub member_outliers: Vec<usize>,
    /// Positions in the non-member set decided "non-member" in every run.
    pub nonmember_outliers: Vec<usize>,
}

/// Positions where every run's decision equals `truth`.
pub fn consistently_correct(decisions: &[&[bool]], truth: bool) -> Result<Vec<usize>> {
    let Some(first) = decisions.first() else {
        return invalid("no runs supplied");
    };
    let n = first.len();
    if decisions.iter().any(|d| d.len() != n) {
        return invalid("runs recorded different numbers of decisions");
    }
    Ok((0..n)
        .filter(|&i| decisions.iter().all(|d| d[i] == truth))
        .collect())
}

/// Builds an outlier report from per-run decision vectors.
pub fn outliers_from_decisions(
    epoch: usize,
    member_decisions: &[&[bool]],
    nonmember_decisions: &[&[bool]],
) -> Result<OutlierReport> {
    let member_outliers = consistently_correct(member_decisions, true)?;
    let nonmember_outliers = consistently_correct(nonmember_decisions, false)?;
    let frac = |ids: &[usize], n: usize| {
        if n == 0 {
            0.0
        } else {
            ids.len() as f64 / n as f64
        }
    };
    let member_outlier_fraction = frac(&member_outliers, member_decisions[0].len());
    let nonmember_outlier_fraction = frac(&nonmember_outliers, nonmember_decisions[0].len());
    Ok(OutlierReport {
        epoch,
        member_outlier_fraction,
        nonmember_outlier_fraction,
        average_fraction: (member_outlier_fraction + nonmember_outlier_fraction) / 2.0,
        member_outliers,
        nonmember_outliers,
    })
}

/// Samples whose membership `attack` decided correctly in every run at `epoch`.
pub fn find_outliers(
    runs: &[RunResult],
    attack: AttackKind,
    epoch: usize,
) -> Result<OutlierReport> {
    if runs.is_empty() {
        return invalid("no runs supplied");
    }
    let mut members = Vec::with_capacity(runs.len());
    let mut nonmembers = Vec::with_capacity(runs.len());
    for run in runs {
        let ev = run
            .records
            .iter()
            .find(|r| r.epoch == epoch)
            .and_then(|r| r.attack(attack))
            .ok_or_else(|| {
                crate::Error::InvalidInput(format!(
                    "run {} has no {attack} decisions at epoch {epoch}",
                    run.run
                ))
            })?;
        members.push(ev.member_decisions.as_slice());
        nonmembers.push(ev.nonmember_decisions.as_slice());
    }
    outliers_from_decisions(epoch, &members, &nonmembers)
}

/// True iff every reference point is matched by some candidate point with no less p_err and
/// no less accuracy, up to `tolerance` on both axes.
pub fn dominates(candidate: &[FrontierPoint], reference: &[FrontierPoint], tolerance: f64) -> bool {
    reference.iter().all(|r| {
        candidate.iter().any(|c| {
            c.mean_p_err >= r.mean_p_err - tolerance
                && c.mean_accuracy >= r.mean_accuracy - tolerance
        })
    })
}

/// [`dominates`] with each reference point's own CI half-widths as the tolerance.
pub fn dominates_within_ci(candidate: &[FrontierPoint], reference: &[FrontierPoint]) -> bool {
    reference.iter().all(|r| {
        candidate.iter().any(|c| {
            c.mean_p_err >= r.mean_p_err - r.ci_p_err
                && c.mean_accuracy >= r.mean_accuracy - r.ci_accuracy
        })
    })
}
