mod common;

use common::{max_abs_diff, naive_loss, random_dataset, random_dims, random_model};
use miaeval::nn::{init_model, softmax};
use miaeval::{Gradient, MlpModel, Rng, Sample};
use proptest::prelude::*;

const FD_STEP: f64 = 1e-6;

/// `|a - n| / max(|a|, |n|, 1e-4)`. The floor keeps coordinates whose true gradient is
/// near zero from turning finite-difference round-off (about 1e-10 here) into a huge ratio.
fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-4)
}

fn mean_loss(model: &MlpModel, batch: &[Sample]) -> f64 {
    batch.iter().map(|s| model.loss(s).unwrap()).sum::<f64>() / batch.len() as f64
}

fn finite_difference(model: &MlpModel, batch: &[Sample]) -> Vec<f64> {
    let mut shifted = model.clone();
    (0..model.params().len())
        .map(|j| {
            let w = model.params()[j];
            shifted.params_mut()[j] = w + FD_STEP;
            let up = mean_loss(&shifted, batch);
            shifted.params_mut()[j] = w - FD_STEP;
            let down = mean_loss(&shifted, batch);
            shifted.params_mut()[j] = w;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

fn max_rel_err(model: &MlpModel, batch: &[Sample]) -> f64 {
    let analytic = model.batch_gradient(batch, &mut Rng::new(0)).unwrap();
    let numeric = finite_difference(model, batch);
    analytic
        .values()
        .iter()
        .zip(&numeric)
        .map(|(&a, &n)| rel_err(a, n))
        .fold(0.0, f64::max)
}

#[test]
fn fifty_random_mlps_match_finite_differences() {
    let mut rng = Rng::new(2024);
    for trial in 0..50 {
        let dims = random_dims(&mut rng, 1000);
        let model = random_model(&dims, 100 + trial);
        let data = random_dataset(4, dims[0], *dims.last().unwrap(), 200 + trial);
        let err = max_rel_err(&model, data.samples());
        assert!(
            err < 1e-5,
            "trial {trial}, dims {dims:?}: max relative error {err:e}"
        );
    }
}

#[test]
fn two_layer_d3_k2_four_samples() {
    let model = random_model(&[3, 5, 2], 9);
    let data = random_dataset(4, 3, 2, 10);
    let err = max_rel_err(&model, data.samples());
    assert!(err < 1e-5, "{err:e}");
}

#[test]
fn loss_matches_direct_formula() {
    for seed in 0..20 {
        let model = random_model(&[4, 6, 3], seed);
        let data = random_dataset(10, 4, 3, seed + 50);
        for s in &data {
            let expected = naive_loss(&model, &s.features, s.label);
            assert!((model.loss(s).unwrap() - expected).abs() < 1e-12);
        }
    }
}

#[test]
fn accuracy_matches_per_sample_recount() {
    for seed in 0..10 {
        let model = random_model(&[5, 8, 4], seed);
        let data = random_dataset(57, 5, 4, seed + 1);
        let correct = data
            .iter()
            .filter(|s| {
                let p = model.predict(&s.features).unwrap();
                let best = (0..p.len()).fold(0, |b, i| if p[i] > p[b] { i } else { b });
                best == s.label
            })
            .count();
        let acc = miaeval::nn::test_accuracy(&model, &data).unwrap();
        assert_eq!(acc, correct as f64 / 57.0);
    }
}

#[test]
fn init_same_seed_identical() {
    assert_eq!(
        init_model(&[7, 9, 3], 0.0, 5).unwrap(),
        init_model(&[7, 9, 3], 0.0, 5).unwrap()
    );
    assert_ne!(
        init_model(&[7, 9, 3], 0.0, 5).unwrap(),
        init_model(&[7, 9, 3], 0.0, 6).unwrap()
    );
}

proptest! {
    #[test]
    fn softmax_is_a_distribution(logits in prop::collection::vec(-700.0f64..700.0, 1..20)) {
        let p = softmax(&logits);
        let total: f64 = p.iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn softmax_strictly_positive_for_moderate_logits(logits in prop::collection::vec(-50.0f64..50.0, 1..20)) {
        prop_assert!(softmax(&logits).iter().all(|&v| v > 0.0));
    }

    #[test]
    fn per_sample_mean_equals_batch_gradient(seed in 0u64..10_000, n in 1usize..12) {
        let model = random_model(&[3, 7, 4], seed);
        let data = random_dataset(n, 3, 4, seed.wrapping_add(1));
        let per = model.per_sample_gradients(data.samples(), &mut Rng::new(0)).unwrap();
        let mean = Gradient::mean(&per).unwrap();
        let batch = model.batch_gradient(data.samples(), &mut Rng::new(0)).unwrap();
        prop_assert!(max_abs_diff(mean.values(), batch.values()) <= 1e-12);
    }

    #[test]
    fn eval_forward_is_pure(seed in 0u64..10_000) {
        let model = random_model(&[4, 6, 3], seed);
        let mut rng = Rng::new(seed);
        let x: Vec<f64> = (0..4).map(|_| rng.normal()).collect();
        let a = model.predict(&x).unwrap();
        let _ = model.forward(&x, Some(&mut rng)).unwrap();
        prop_assert_eq!(a, model.predict(&x).unwrap());
    }
}
