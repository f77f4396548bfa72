use miaeval::attacks::AttackKind;
use miaeval::data::{gen_gaussian_mixture_with, stratified_four_way, SyntheticSpec};
use miaeval::eval::{
    aggregate_series, dominates, mean_ci, outliers_from_decisions, run_experiment, FrontierPoint,
};
use miaeval::optim::LrSchedule;
use miaeval::{ExperimentSpec, FourWaySplit, Optimizer, Rng, TrainConfig};
use proptest::prelude::*;

fn small_split() -> FourWaySplit {
    let spec = SyntheticSpec {
        num_classes: 3,
        dim: 4,
        per_class: 24,
        separation: 2.0,
        noise_std: 1.0,
        seed: 5,
    };
    let train = gen_gaussian_mixture_with(&spec, 1).unwrap();
    let test = gen_gaussian_mixture_with(&spec, 2).unwrap();
    stratified_four_way(&train, &test, 0).unwrap()
}

fn small_spec(optimizer: Optimizer, sigma: f64, repetitions: usize) -> ExperimentSpec {
    let mut config = TrainConfig::sgd(LrSchedule::constant(0.05, 4).unwrap(), 8, 3);
    config.optimizer = optimizer;
    if optimizer.is_private() {
        config.clip_threshold = Some(1.0);
        config.noise_multiplier = sigma;
    }
    let mut spec = ExperimentSpec::new(
        vec![4, 12, 3],
        config,
        AttackKind::ALL.to_vec(),
        repetitions,
    );
    spec.attack_train.epochs = 3;
    spec
}

#[test]
fn records_cover_runs_and_epochs() {
    let runs = run_experiment(&small_split(), &small_spec(Optimizer::Sgd, 0.0, 3)).unwrap();
    assert_eq!(runs.len(), 3);
    for (r, run) in runs.iter().enumerate() {
        assert_eq!(run.run, r);
        assert_eq!(run.records.len(), 4);
        assert!(run
            .records
            .iter()
            .all(|rec| rec.attacks.len() == 3 && rec.epsilon.is_infinite()));
    }
}

#[test]
fn single_run_is_reproducible() {
    let split = small_split();
    let spec = small_spec(Optimizer::DpSgd, 1.0, 1);
    let a = run_experiment(&split, &spec).unwrap();
    let b = run_experiment(&split, &spec).unwrap();
    assert_eq!(a, b);
    assert!(a[0].records.iter().all(|r| r.epsilon.is_finite()));
    let eps: Vec<f64> = a[0].records.iter().map(|r| r.epsilon).collect();
    assert!(eps.windows(2).all(|w| w[1] >= w[0]));
}

#[test]
fn zero_noise_private_run_has_infinite_epsilon() {
    let runs = run_experiment(&small_split(), &small_spec(Optimizer::DpSgd, 0.0, 1)).unwrap();
    assert!(runs[0].records.iter().all(|r| r.epsilon == f64::INFINITY));
}

#[test]
fn experiment_is_independent_of_thread_count() {
    let split = small_split();
    let spec = small_spec(Optimizer::DpSgd, 0.8, 3);
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| run_experiment(&split, &spec).unwrap())
    };
    assert_eq!(run(1), run(3));
}

#[test]
fn fair_coin_outliers_are_rare() {
    let mut rng = Rng::new(42);
    let draw = |rng: &mut Rng| {
        (0..10_000)
            .map(|_| rng.uniform() < 0.5)
            .collect::<Vec<bool>>()
    };
    let members: Vec<Vec<bool>> = (0..10).map(|_| draw(&mut rng)).collect();
    let nonmembers: Vec<Vec<bool>> = (0..10).map(|_| draw(&mut rng)).collect();
    let m: Vec<&[bool]> = members.iter().map(Vec::as_slice).collect();
    let n: Vec<&[bool]> = nonmembers.iter().map(Vec::as_slice).collect();
    let report = outliers_from_decisions(15, &m, &n).unwrap();
    assert!(report.member_outlier_fraction < 0.01);
    assert!(report.nonmember_outlier_fraction < 0.01);
}

#[test]
fn one_run_outliers_are_correct_decisions() {
    let members = [true, false, true];
    let nonmembers = [false, false, true];
    let r = outliers_from_decisions(1, &[&members], &[&nonmembers]).unwrap();
    assert_eq!(r.member_outliers, vec![0, 2]);
    assert_eq!(r.nonmember_outliers, vec![0, 1]);
}

#[test]
fn single_run_has_zero_half_width() {
    let pts = aggregate_series(&[vec![(0.5, 0.4), (0.6, 0.3)]]).unwrap();
    assert!(pts
        .iter()
        .all(|p| p.ci_accuracy == 0.0 && p.ci_p_err == 0.0));
    let same = aggregate_series(&vec![vec![(0.5, 0.4)]; 4]).unwrap();
    assert!(same[0].ci_accuracy == 0.0 && same[0].ci_p_err == 0.0);
}

#[test]
fn half_width_oracle() {
    let (mean, h) = mean_ci(&[0.5, 0.7]);
    let s = ((0.5f64 - 0.6).powi(2) + (0.7f64 - 0.6).powi(2)).sqrt();
    assert!((mean - 0.6).abs() < 1e-15);
    assert!((h - 1.96 * s / 2f64.sqrt()).abs() < 1e-12);
}

fn frontier(points: &[(f64, f64)]) -> Vec<FrontierPoint> {
    points
        .iter()
        .enumerate()
        .map(|(i, &(a, p))| FrontierPoint {
            epoch: i + 1,
            mean_accuracy: a,
            mean_p_err: p,
            ci_accuracy: 0.0,
            ci_p_err: 0.0,
            run_count: 1,
        })
        .collect()
}

#[test]
fn dominance_examples() {
    let reference = frontier(&[(0.6, 0.4), (0.7, 0.35)]);
    assert!(dominates(&reference, &reference, 0.0));
    let shifted = frontier(&[(0.61, 0.41), (0.71, 0.36)]);
    assert!(dominates(&shifted, &reference, 0.0));
    let partial = frontier(&[(0.61, 0.41), (0.65, 0.3)]);
    assert!(!dominates(&partial, &reference, 0.0));
}

proptest! {
    #[test]
    fn aggregate_means_lie_within_run_range(
        series in prop::collection::vec(prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 5), 1..8)
    ) {
        let pts = aggregate_series(&series).unwrap();
        for (e, p) in pts.iter().enumerate() {
            let acc: Vec<f64> = series.iter().map(|s| s[e].0).collect();
            let perr: Vec<f64> = series.iter().map(|s| s[e].1).collect();
            let within = |v: f64, xs: &[f64]| {
                v >= xs.iter().cloned().fold(f64::INFINITY, f64::min) - 1e-12
                    && v <= xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 1e-12
            };
            prop_assert!(within(p.mean_accuracy, &acc));
            prop_assert!(within(p.mean_p_err, &perr));
        }
    }

    #[test]
    fn dominance_reflexive_and_monotone(
        cand in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 1..6),
        reference in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 1..6),
        t1 in 0.0f64..0.3,
        dt in 0.0f64..0.3,
    ) {
        let (c, r) = (frontier(&cand), frontier(&reference));
        prop_assert!(dominates(&c, &c, 0.0));
        if dominates(&c, &r, t1) {
            prop_assert!(dominates(&c, &r, t1 + dt));
        }
    }

    #[test]
    fn outliers_never_exceed_any_single_run(
        members in prop::collection::vec(prop::collection::vec(any::<bool>(), 12), 1..6),
        nonmembers in prop::collection::vec(prop::collection::vec(any::<bool>(), 9), 1..6),
    ) {
        let runs = members.len().min(nonmembers.len());
        let m: Vec<&[bool]> = members[..runs].iter().map(Vec::as_slice).collect();
        let n: Vec<&[bool]> = nonmembers[..runs].iter().map(Vec::as_slice).collect();
        let report = outliers_from_decisions(1, &m, &n).unwrap();
        for r in 0..runs {
            let correct_m = m[r].iter().filter(|&&d| d).count() as f64 / 12.0;
            let correct_n = n[r].iter().filter(|&&d| !d).count() as f64 / 9.0;
            prop_assert!(report.member_outlier_fraction <= correct_m);
            prop_assert!(report.nonmember_outlier_fraction <= correct_n);
        }
    }
}
