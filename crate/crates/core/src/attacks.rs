//! Black-box membership-inference attacks and their evaluation.
//!
//! * Threshold attack: a sample is a member when its loss is strictly below `tau`, the mean
//!   training loss (one global `tau`, or one per class).
//! * NN attack: a single shadow model is trained like the target; a small binary classifier
//!   learns membership from the shadow model's sorted top-k confidences and is then applied
//!   to the target model's outputs.

use std::fmt;
use std::str::FromStr;

use crate::error::{bad_config, invalid, Error, Result};
use crate::nn::{Dataset, MlpModel, Sample};
use crate::optim::{train, LrSchedule, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AttackKind {
    Threshold,
    ThresholdPerClass,
    Nn,
}

impl AttackKind {
    pub const ALL: [AttackKind; 3] = [
        AttackKind::Threshold,
        AttackKind::ThresholdPerClass,
        AttackKind::Nn,
    ];
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttackKind::Threshold => "threshold",
            AttackKind::ThresholdPerClass => "threshold-per-class",
            AttackKind::Nn => "nn",
        })
    }
}

impl FromStr for AttackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "threshold" => Ok(AttackKind::Threshold),
            "threshold-per-class" | "per-class" => Ok(AttackKind::ThresholdPerClass),
            "nn" | "shadow" => Ok(AttackKind::Nn),
            other => bad_config(format!("unknown attack '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThresholdMode {
    Global,
    PerClass,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdModel {
    pub mode: ThresholdMode,
    pub global_tau: f64,
    /// Indexed by class; empty in global mode.
    pub per_class_tau: Vec<f64>,
}

/// Mean training loss, overall and (in per-class mode) per class.
pub fn fit_threshold(
    model: &MlpModel,
    train_set: &Dataset,
    mode: ThresholdMode,
) -> Result<ThresholdModel> {
    if train_set.is_empty() {
        return invalid("cannot fit a threshold on an empty training set");
    }
    let k = train_set.num_classes();
    let mut sums = vec![0.0; k];
    let mut counts = vec![0usize; k];
    let mut total = 0.0;
    for s in train_set {
        let l = model.loss(s)?;
        total += l;
        sums[s.label] += l;
        counts[s.label] += 1;
    }
    let global_tau = total / train_set.len() as f64;
    let per_class_tau = match mode {
        ThresholdMode::Global => Vec::new(),
        ThresholdMode::PerClass => {
            if let Some(c) = counts.iter().position(|&c| c == 0) {
                return invalid(format!("class {c} has no training samples"));
            }
            sums.iter()
                .zip(&counts)
                .map(|(s, &c)| s / c as f64)
                .collect()
        }
    };
    Ok(ThresholdModel {
        mode,
        global_tau,
        per_class_tau,
    })
}

impl ThresholdModel {
    pub fn global(tau: f64) -> Self {
        Self {
            mode: ThresholdMode::Global,
            global_tau: tau,
            per_class_tau: Vec::new(),
        }
    }

    pub fn tau_for(&self, label: usize) -> f64 {
        match self.mode {
            ThresholdMode::Global => self.global_tau,
            ThresholdMode::PerClass => self
                .per_class_tau
                .get(label)
                .copied()
                .unwrap_or(self.global_tau),
        }
    }

    /// Member iff `loss < tau`; a tie is a non-member.
    pub fn decide_loss(&self, loss: f64, label: usize) -> bool {
        loss < self.tau_for(label)
    }

    pub fn decide(&self, model: &MlpModel, sample: &Sample) -> Result<bool> {
        Ok(self.decide_loss(model.loss(sample)?, sample.label))
    }
}

/// The `k` largest confidences, in descending order.
pub fn top_k_features(confidences: &[f64], k: usize) -> Vec<f64> {
    let mut sorted = confidences.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    sorted.truncate(k);
    sorted
}

/// Hyperparameters for the binary attack classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackTrainConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for AttackTrainConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            epochs: 30,
            learning_rate: 0.05,
            batch_size: 32,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShadowAttackModel {
    pub k: usize,
    /// `k -> hidden -> 2`; class 1 means member.
    pub classifier: MlpModel,
}

impl ShadowAttackModel {
    pub fn member_confidence(&self, confidences: &[f64]) -> Result<f64> {
        let features = top_k_features(confidences, self.k);
        Ok(self.classifier.predict(&features)?[1])
    }

    /// Member iff the classifier's member confidence exceeds 0.5.
    pub fn decide(&self, target: &MlpModel, sample: &Sample) -> Result<bool> {
        let conf = target.predict(&sample.features)?;
        Ok(self.member_confidence(&conf)? > 0.5)
    }
}

/// Builds the attack training set: top-k confidences labelled 1 for members, 0 otherwise.
pub fn attack_dataset(
    model: &MlpModel,
    members: &Dataset,
    nonmembers: &Dataset,
    k: usize,
) -> Result<Dataset> {
    let mut rows = Vec::with_capacity(members.len() + nonmembers.len());
    let mut labels = Vec::with_capacity(rows.capacity());
    for (set, label) in [(members, 1), (nonmembers, 0)] {
        for s in set {
            rows.push(top_k_features(&model.predict(&s.features)?, k));
            labels.push(label);
        }
    }
    Dataset::from_rows(rows, labels, 2)
}

/// Fits the `k -> hidden -> 2` membership classifier with plain SGD.
pub fn fit_attack_classifier(
    data: &Dataset,
    k: usize,
    cfg: &AttackTrainConfig,
) -> Result<ShadowAttackModel> {
    if data.dim() != k {
        return invalid(format!(
            "attack features have {} dims, expected {k}",
            data.dim()
        ));
    }
    let schedule = LrSchedule::constant(cfg.learning_rate, cfg.epochs)?;
    let batch = cfg.batch_size.min(data.len()).max(1);
    let config = TrainConfig::sgd(schedule, batch, cfg.seed);
    let checkpoints = train(data, &[k, cfg.hidden, 2], &config)?;
    let classifier = checkpoints
        .into_iter()
        .last()
        .map(|c| c.model)
        .ok_or_else(|| Error::InvalidConfig("attack classifier trained for zero epochs".into()))?;
    Ok(ShadowAttackModel { k, classifier })
}

/// Trains one shadow model exactly like the target, then the attack classifier on its outputs.
pub fn train_shadow_attack(
    shadow_train: &Dataset,
    shadow_test: &Dataset,
    target_arch: &[usize],
    target_config: &TrainConfig,
    k: usize,
    attack_cfg: &AttackTrainConfig,
) -> Result<ShadowAttackModel> {
    let classes = *target_arch.last().unwrap_or(&0);
    if k == 0 || k > classes {
        return invalid(format!("top-k size {k} must be in 1..={classes}"));
    }
    if shadow_train.is_empty() || shadow_test.is_empty() {
        return invalid("shadow datasets must be non-empty");
    }
    let shadow = train(shadow_train, target_arch, target_config)?
        .pop()
        .expect("validated config trains at least one epoch")
        .model;
    let data = attack_dataset(&shadow, shadow_train, shadow_test, k)?;
    fit_attack_classifier(&data, k, attack_cfg)
}

/// FPR, FNR and their mean, with every decision kept in dataset order.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackEvaluation {
    pub fpr: f64,
    pub fnr: f64,
    pub p_err: f64,
    pub member_decisions: Vec<bool>,
    pub nonmember_decisions: Vec<bool>,
}

/// Runs `decide` over both populations. FPR is measured on non-members, FNR on members.
pub fn evaluate_attack<F>(
    mut decide: F,
    members: &Dataset,
    nonmembers: &Dataset,
) -> Result<AttackEvaluation>
where
    F: FnMut(&Sample) -> Result<bool>,
{
    if members.is_empty() || nonmembers.is_empty() {
        return invalid("attack evaluation needs non-empty member and non-member sets");
    }
    let member_decisions = members
        .iter()
        .map(&mut decide)
        .collect::<Result<Vec<_>>>()?;
    let nonmember_decisions = nonmembers
        .iter()
        .map(&mut decide)
        .collect::<Result<Vec<_>>>()?;
    Ok(evaluation_from_decisions(
        member_decisions,
        nonmember_decisions,
    ))
}

pub fn evaluation_from_decisions(
    member_decisions: Vec<bool>,
    nonmember_decisions: Vec<bool>,
) -> AttackEvaluation {
    let missed = member_decisions.iter().filter(|d| !**d).count();
    let false_alarms = nonmember_decisions.iter().filter(|d| **d).count();
    let fnr = missed as f64 / member_decisions.len() as f64;
    let fpr = false_alarms as f64 / nonmember_decisions.len() as f64;
    AttackEvaluation {
        fpr,
        fnr,
        p_err: (fpr + fnr) / 2.0,
        member_decisions,
        nonmember_decisions,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::param_count;

    /// Single-layer model whose class-0 logit is the first input feature, so with K = 2
    /// and the other logit zero, the loss is a known function of the features.
    fn logit_model() -> MlpModel {
        let mut p = vec![0.0; param_count(&[1, 2])];
        p[0] = 1.0;
        MlpModel::from_params(vec![1, 2], p, 0.0).unwrap()
    }

    /// Feature giving loss `l` for a class-0 sample under `logit_model`:
    /// loss = ln(1 + e^{-z})  =>  z = -ln(e^l - 1).
    fn feature_for_loss(l: f64) -> f64 {
        -(l.exp_m1()).ln()
    }

    fn set_with_losses(losses: &[f64], labels: &[usize]) -> Dataset {
        Dataset::from_rows(
            losses.iter().map(|&l| vec![feature_for_loss(l)]).collect(),
            labels.to_vec(),
            2,
        )
        .unwrap()
    }

    #[test]
    fn global_tau_is_mean_loss() {
        let m = logit_model();
        let ds = set_with_losses(&[0.2, 0.4], &[0, 0]);
        let tm = fit_threshold(&m, &ds, ThresholdMode::Global).unwrap();
        assert!((tm.global_tau - 0.3).abs() < 1e-12);
    }

    #[test]
    fn per_class_tau() {
        let m = logit_model();
        // class-1 samples: loss = ln(1 + e^{z}) with the same model, so pick z accordingly
        let z1 = (1.0f64.exp_m1()).ln();
        let ds = Dataset::from_rows(
            vec![
                vec![feature_for_loss(0.1)],
                vec![feature_for_loss(0.3)],
                vec![z1],
            ],
            vec![0, 0, 1],
            2,
        )
        .unwrap();
        let tm = fit_threshold(&m, &ds, ThresholdMode::PerClass).unwrap();
        assert!((tm.per_class_tau[0] - 0.2).abs() < 1e-12);
        assert!((tm.per_class_tau[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn per_class_needs_every_class() {
        let m = logit_model();
        let ds = set_with_losses(&[0.1, 0.2], &[0, 0]);
        assert!(fit_threshold(&m, &ds, ThresholdMode::PerClass).is_err());
        let empty = Dataset::new(vec![], 2, 1).unwrap();
        assert!(fit_threshold(&m, &empty, ThresholdMode::Global).is_err());
    }

    #[test]
    fn threshold_extremes_and_ties() {
        let m = logit_model();
        let ds = set_with_losses(&[0.1, 0.29, 0.3, 0.5], &[0, 0, 0, 0]);
        let decide_all = |tau: f64| -> Vec<bool> {
            let tm = ThresholdModel::global(tau);
            ds.iter().map(|s| tm.decide(&m, s).unwrap()).collect()
        };
        assert_eq!(decide_all(1e300), vec![true; 4]);
        assert_eq!(decide_all(0.0), vec![false; 4]);
        // decide_loss avoids the round trip through features
        let tm = ThresholdModel::global(0.3);
        let got: Vec<bool> = [0.1, 0.29, 0.3, 0.5]
            .iter()
            .map(|&l| tm.decide_loss(l, 0))
            .collect();
        assert_eq!(got, vec![true, true, false, false]);
    }

    #[test]
    fn top_k_sorts_descending() {
        assert_eq!(top_k_features(&[0.1, 0.7, 0.2], 2), vec![0.7, 0.2]);
    }

    #[test]
    fn zero_attack_classifier_never_claims_membership() {
        let am = ShadowAttackModel {
            k: 2,
            classifier: MlpModel::from_params(
                vec![2, 4, 2],
                vec![0.0; param_count(&[2, 4, 2])],
                0.0,
            )
            .unwrap(),
        };
        let target = logit_model();
        let members = set_with_losses(&[0.1, 0.2, 0.3], &[0, 0, 0]);
        let nonmembers = set_with_losses(&[1.0, 2.0, 3.0], &[0, 0, 0]);
        let ev = evaluate_attack(|s| am.decide(&target, s), &members, &nonmembers).unwrap();
        assert_eq!((ev.fpr, ev.fnr, ev.p_err), (0.0, 1.0, 0.5));
    }

    #[test]
    fn evaluation_extremes() {
        let members = set_with_losses(&[0.1, 0.2], &[0, 0]);
        let nonmembers = set_with_losses(&[0.3, 0.4, 0.5], &[0, 0, 0]);
        let ev = evaluate_attack(|_| Ok(true), &members, &nonmembers).unwrap();
        assert_eq!((ev.fpr, ev.fnr, ev.p_err), (1.0, 0.0, 0.5));
        // ids overlap between the two sets, so tell them apart by feature value
        let member_feats: Vec<f64> = members.iter().map(|s| s.features[0]).collect();
        let ev = evaluate_attack(
            |s| Ok(member_feats.contains(&s.features[0])),
            &members,
            &nonmembers,
        )
        .unwrap();
        assert_eq!((ev.fpr, ev.fnr, ev.p_err), (0.0, 0.0, 0.0));
        let empty = Dataset::new(vec![], 2, 1).unwrap();
        assert!(evaluate_attack(|_| Ok(true), &empty, &nonmembers).is_err());
    }

    #[test]
    fn k_larger_than_classes_rejected() {
        let ds = set_with_losses(&[0.1, 0.2], &[0, 1]);
        let cfg = TrainConfig::sgd(LrSchedule::constant(0.1, 1).unwrap(), 1, 0);
        let err = train_shadow_attack(&ds, &ds, &[1, 2], &cfg, 3, &AttackTrainConfig::default());
        assert!(err.is_err());
    }
}
