//! Rényi-DP accounting for the subsampled Gaussian mechanism and the (ε, δ) bounds on a
//! membership adversary's error.
//!
//! All accountant arithmetic stays in log space. For integer orders the Rényi moment is the
//! exact binomial expansion; for fractional orders it is the two-sided series bound used by
//! the standard DP-SGD accountants.

use statrs::function::erf::erfc;
use statrs::function::gamma::ln_gamma;

use crate::error::{invalid, Result};

/// Default δ used throughout the experiments.
pub const DEFAULT_DELTA: f64 = 1e-5;

/// An (ε, δ) guarantee. `epsilon` is `f64::INFINITY` when no noise is added.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrivacyParams {
    pub epsilon: f64,
    pub delta: f64,
}

impl PrivacyParams {
    pub fn is_infinite(&self) -> bool {
        self.epsilon.is_infinite()
    }
}

/// How a composed RDP curve is turned into (ε, δ).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Conversion {
    /// `ε = rdp + ln(1/δ) / (α - 1)`.
    Classic,
    /// `ε = rdp + ln((α - 1)/α) - (ln δ + ln α) / (α - 1)`, the tighter conversion used by
    /// Opacus and TF-Privacy.
    #[default]
    Improved,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AccountantConfig {
    pub sampling_rate: f64,
    pub noise_multiplier: f64,
    pub steps: u64,
    pub delta: f64,
    pub orders: Vec<f64>,
    pub conversion: Conversion,
}

impl AccountantConfig {
    /// DP-SGD over `epochs` passes of `n` samples in batches of `batch_size`:
    /// `q = batch_size / n`, `steps = epochs * ceil(n / batch_size)`.
    pub fn for_training(
        n: usize,
        batch_size: usize,
        epochs: usize,
        noise_multiplier: f64,
        delta: f64,
    ) -> Self {
        let q = (batch_size as f64 / n as f64).min(1.0);
        let steps = (epochs * n.div_ceil(batch_size.max(1))) as u64;
        Self {
            sampling_rate: q,
            noise_multiplier,
            steps,
            delta,
            orders: default_orders(),
            conversion: Conversion::default(),
        }
    }

    fn validate(&self) -> Result<()> {
        let q = self.sampling_rate;
        if !(q > 0.0 && q <= 1.0) {
            return invalid(format!("sampling rate must be in (0, 1], got {q}"));
        }
        if !(self.noise_multiplier >= 0.0) {
            return invalid(format!(
                "noise multiplier must be >= 0, got {}",
                self.noise_multiplier
            ));
        }
        if self.steps == 0 {
            return invalid("steps must be positive");
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return invalid(format!("delta must be in (0, 1), got {}", self.delta));
        }
        if self.orders.is_empty() || self.orders.iter().any(|&a| !(a > 1.0)) {
            return invalid("order grid must be non-empty with every order > 1");
        }
        Ok(())
    }
}

/// Rényi orders searched by default: integers 2..=64, a handful of fractional orders, 128
/// and 256, plus orders approaching 1 (`1 + 10^(-k/10)` for k = 3..=50), which is where the
/// optimum lies for very small noise multipliers.
pub fn default_orders() -> Vec<f64> {
    let mut orders: Vec<f64> = (3..=50)
        .map(|k| 1.0 + 10f64.powf(-(k as f64) / 10.0))
        .collect();
    orders.extend([1.25, 1.5, 1.75, 2.25, 2.5, 3.5, 4.5]);
    orders.extend((2..=64).map(f64::from));
    orders.extend([128.0, 256.0]);
    orders.sort_by(f64::total_cmp);
    orders.dedup();
    orders
}

fn log_add(a: f64, b: f64) -> f64 {
    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
    if lo == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

/// `ln(exp(a) - exp(b))` for `a >= b`.
fn log_sub(a: f64, b: f64) -> f64 {
    if b == f64::NEG_INFINITY {
        return a;
    }
    if a <= b {
        return f64::NEG_INFINITY;
    }
    a + (-(b - a).exp()).ln_1p()
}

/// `ln(erfc(x))`, using the asymptotic series once `erfc` underflows.
fn log_erfc(x: f64) -> f64 {
    let r = erfc(x);
    if r > 0.0 {
        return r.ln();
    }
    let x2 = x * x;
    -x2 - x.ln() - 0.5 * std::f64::consts::PI.ln() - 0.5 / x2 + 0.625 / (x2 * x2)
        - 37.0 / 24.0 / (x2 * x2 * x2)
        + 353.0 / 64.0 / (x2 * x2 * x2 * x2)
}

fn ln_binomial(n: u64, k: u64) -> f64 {
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

/// `ln A_α` for integer α.
fn log_moment_int(q: f64, sigma: f64, alpha: u64) -> f64 {
    let ln_q = q.ln();
    let ln_1mq = (-q).ln_1p();
    let two_var = 2.0 * sigma * sigma;
    (0..=alpha).fold(f64::NEG_INFINITY, |acc, i| {
        let i_f = i as f64;
        let term = ln_binomial(alpha, i)
            + i_f * ln_q
            + (alpha - i) as f64 * ln_1mq
            + (i_f * i_f - i_f) / two_var;
        log_add(acc, term)
    })
}

const MAX_SERIES_TERMS: usize = 100_000;

/// `ln A_α` for fractional α via the two-sided series.
fn log_moment_frac(q: f64, sigma: f64, alpha: f64) -> f64 {
    let (mut pos0, mut neg0) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    let (mut pos1, mut neg1) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    let ln_q = q.ln();
    let ln_1mq = (-q).ln_1p();
    let z0 = sigma * sigma * (1.0 / q - 1.0).ln() + 0.5;
    let two_var = 2.0 * sigma * sigma;
    let root2_sigma = std::f64::consts::SQRT_2 * sigma;

    // generalised binomial coefficient C(alpha, i), tracked as sign and log-magnitude
    let mut ln_coef = 0.0;
    let mut positive = true;
    for i in 0..MAX_SERIES_TERMS {
        let i_f = i as f64;
        let j = alpha - i_f;
        let ln_t0 = ln_coef + i_f * ln_q + j * ln_1mq;
        let ln_t1 = ln_coef + j * ln_q + i_f * ln_1mq;
        let ln_e0 = 0.5f64.ln() + log_erfc((i_f - z0) / root2_sigma);
        let ln_e1 = 0.5f64.ln() + log_erfc((z0 - j) / root2_sigma);
        let ln_s0 = ln_t0 + (i_f * i_f - i_f) / two_var + ln_e0;
        let ln_s1 = ln_t1 + (j * j - j) / two_var + ln_e1;
        if positive {
            pos0 = log_add(pos0, ln_s0);
            pos1 = log_add(pos1, ln_s1);
        } else {
            neg0 = log_add(neg0, ln_s0);
            neg1 = log_add(neg1, ln_s1);
        }
        if ln_s0.max(ln_s1) < -30.0 && i_f > alpha {
            break;
        }
        let ratio = (alpha - i_f) / (i_f + 1.0);
        if ratio == 0.0 {
            break;
        }
        ln_coef += ratio.abs().ln();
        if ratio < 0.0 {
            positive = !positive;
        }
    }
    log_add(log_sub(pos0, neg0), log_sub(pos1, neg1))
}

/// Per-step Rényi divergence bound of order `alpha` for the Gaussian mechanism with noise
/// multiplier `sigma`, applied to a `q`-subsample.
pub fn rdp_subsampled_gaussian(q: f64, sigma: f64, alpha: f64) -> Result<f64> {
    if !(alpha > 1.0) || !alpha.is_finite() {
        return invalid(format!("Rényi order must be finite and > 1, got {alpha}"));
    }
    if !(q > 0.0 && q <= 1.0) {
        return invalid(format!("sampling rate must be in (0, 1], got {q}"));
    }
    if !(sigma > 0.0) || !sigma.is_finite() {
        return invalid(format!("noise multiplier must be positive, got {sigma}"));
    }
    if q == 1.0 {
        return Ok(alpha / (2.0 * sigma * sigma));
    }
    let ln_a = if alpha.fract() == 0.0 {
        log_moment_int(q, sigma, alpha as u64)
    } else {
        log_moment_frac(q, sigma, alpha)
    };
    Ok((ln_a / (alpha - 1.0)).max(0.0))
}

/// Result of minimising the conversion over the order grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsilonReport {
    pub epsilon: f64,
    /// The order attaining the minimum; `None` when ε is infinite.
    pub order: Option<f64>,
}

/// Converts `steps`-fold composed RDP at order `alpha` into ε.
pub fn rdp_to_epsilon(total_rdp: f64, alpha: f64, delta: f64, conversion: Conversion) -> f64 {
    let eps = match conversion {
        Conversion::Classic => total_rdp + (1.0 / delta).ln() / (alpha - 1.0),
        Conversion::Improved => {
            total_rdp + ((alpha - 1.0) / alpha).ln() - (delta.ln() + alpha.ln()) / (alpha - 1.0)
        }
    };
    eps.max(0.0)
}

pub fn epsilon_report(config: &AccountantConfig) -> Result<EpsilonReport> {
    config.validate()?;
    if config.noise_multiplier == 0.0 {
        return Ok(EpsilonReport {
            epsilon: f64::INFINITY,
            order: None,
        });
    }
    let mut best = EpsilonReport {
        epsilon: f64::INFINITY,
        order: None,
    };
    for &alpha in &config.orders {
        let rdp = rdp_subsampled_gaussian(config.sampling_rate, config.noise_multiplier, alpha)?;
        let eps = rdp_to_epsilon(
            config.steps as f64 * rdp,
            alpha,
            config.delta,
            config.conversion,
        );
        if eps < best.epsilon {
            best = EpsilonReport {
                epsilon: eps,
                order: Some(alpha),
            };
        }
    }
    Ok(best)
}

/// ε after composing `steps` subsampled Gaussian steps; infinite when `sigma = 0`.
pub fn epsilon_from_rdp(config: &AccountantConfig) -> Result<f64> {
    Ok(epsilon_report(config)?.epsilon)
}

pub fn privacy_spent(config: &AccountantConfig) -> Result<PrivacyParams> {
    Ok(PrivacyParams {
        epsilon: epsilon_from_rdp(config)?,
        delta: config.delta,
    })
}

/// Lower bound `(1 - δ) / (1 + e^ε)` on an (ε, δ)-DP model's membership error.
pub fn error_bound(epsilon: f64, delta: f64) -> f64 {
    if epsilon.is_infinite() {
        return 0.0;
    }
    (1.0 - delta) / (1.0 + epsilon.exp())
}

/// Whether `(fpr, fnr)` satisfies both rate constraints implied by (ε, δ)-DP.
pub fn check_fpr_fnr_bounds(fpr: f64, fnr: f64, epsilon: f64, delta: f64) -> bool {
    let e = epsilon.exp();
    fpr + e * fnr >= 1.0 - delta && fnr + e * fpr >= 1.0 - delta
}

/// Membership advantage `1 - 2 P_err`.
pub fn advantage(p_err: f64) -> f64 {
    1.0 - 2.0 * p_err
}
