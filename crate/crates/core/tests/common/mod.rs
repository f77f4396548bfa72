#![allow(dead_code)]

use miaeval::nn::{init_model, param_count};
use miaeval::{Dataset, MlpModel, Rng, Sample};

/// Random feature rows with labels drawn uniformly from `k` classes.
pub fn random_dataset(n: usize, dim: usize, k: usize, seed: u64) -> Dataset {
    let mut rng = Rng::new(seed);
    let samples = (0..n)
        .map(|i| {
            let features = (0..dim).map(|_| rng.normal()).collect();
            Sample::new(i, features, rng.below(k))
        })
        .collect();
    Dataset::new(samples, k, dim).unwrap()
}

pub fn random_model(dims: &[usize], seed: u64) -> MlpModel {
    let mut m = init_model(dims, 0.0, seed).unwrap();
    // non-zero biases so every code path carries a bias gradient
    let mut rng = Rng::new(seed ^ 0xB1A5);
    for span in m.spans() {
        for b in &mut m.params_mut()[span.biases..span.end] {
            *b = 0.1 * rng.normal();
        }
    }
    m
}

/// `[1, 2]` model whose class-0 logit equals the single input feature.
pub fn logit_model() -> MlpModel {
    let mut p = vec![0.0; param_count(&[1, 2])];
    p[0] = 1.0;
    MlpModel::from_params(vec![1, 2], p, 0.0).unwrap()
}

/// Feature that gives a class-0 sample loss `l` under [`logit_model`].
pub fn feature_for_loss(l: f64) -> f64 {
    -(l.exp_m1()).ln()
}

pub fn set_with_losses(losses: &[f64]) -> Dataset {
    Dataset::from_rows(
        losses.iter().map(|&l| vec![feature_for_loss(l)]).collect(),
        vec![0; losses.len()],
        2,
    )
    .unwrap()
}

/// Independent softmax cross-entropy written directly from the definition.
pub fn naive_loss(model: &MlpModel, x: &[f64], label: usize) -> f64 {
    let dims = model.dims();
    let mut a = x.to_vec();
    for l in 0..dims.len() - 1 {
        let (w, b) = model.layer(l);
        let (fan_in, fan_out) = (dims[l], dims[l + 1]);
        let mut z = vec![0.0; fan_out];
        for o in 0..fan_out {
            z[o] = b[o] + (0..fan_in).map(|i| w[o * fan_in + i] * a[i]).sum::<f64>();
        }
        if l + 2 < dims.len() {
            z.iter_mut().for_each(|v| *v = v.max(0.0));
        }
        a = z;
    }
    let denom: f64 = a.iter().map(|v| v.exp()).sum();
    -(a[label].exp() / denom).ln()
}

/// Largest absolute coordinate difference.
pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Random layer widths with at most `max_params` parameters.
pub fn random_dims(rng: &mut Rng, max_params: usize) -> Vec<usize> {
    loop {
        let depth = 1 + rng.below(3);
        let mut dims = vec![1 + rng.below(8)];
        for _ in 0..depth - 1 {
            dims.push(1 + rng.below(16));
        }
        dims.push(2 + rng.below(5));
        if param_count(&dims) <= max_params {
            return dims;
        }
    }
}
