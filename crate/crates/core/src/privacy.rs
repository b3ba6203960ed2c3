//! zCDP privacy accountant for the noisy training protocol.
//!
//! The accountant tracks one Gaussian-mechanism release per device per
//! iteration. Each release of a clipped mini-batch gradient with sensitivity
//! `2G/X_m` and noise scale `sigma_m` costs `2G^2/(X_m^2 sigma_m^2)` zCDP;
//! costs add over iterations and convert to an `(epsilon, delta)` guarantee
//! at the end. All logarithms are natural.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// zCDP budget. Composes additively.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct ZcdpBudget(pub f64);

/// An `(epsilon, delta)` differential-privacy guarantee.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DpGuarantee {
    pub epsilon: f64,
    pub delta: f64,
}

/// Per-device Gaussian noise magnitudes together with the query sensitivity
/// they were calibrated against.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Noise standard deviation per device, one entry per device.
    pub sigma: Vec<f64>,
    /// L2 sensitivity of the clipped mini-batch gradient per device, `2G/X_m`.
    pub sensitivity: Vec<f64>,
}

impl NoiseSpec {
    /// Noise calibrated so every device spends exactly `epsilon` over `k`
    /// iterations (see [`calibrate_sigma`]).
    pub fn calibrated(k: f64, clip: f64, batch_sizes: &[usize], epsilon: f64, delta: f64) -> Self {
        let sigma = batch_sizes
            .iter()
            .map(|&x| calibrate_sigma(k, clip, x as f64, epsilon, delta))
            .collect();
        Self { sigma, sensitivity: sensitivities(clip, batch_sizes) }
    }

    /// The same noise magnitude on every device.
    pub fn uniform(sigma: f64, clip: f64, batch_sizes: &[usize]) -> Self {
        assert!(sigma >= 0.0, "noise std-dev must be non-negative");
        Self { sigma: vec![sigma; batch_sizes.len()], sensitivity: sensitivities(clip, batch_sizes) }
    }

    /// No noise at all (the non-private ablation).
    pub fn noiseless(clip: f64, batch_sizes: &[usize]) -> Self {
        Self::uniform(0.0, clip, batch_sizes)
    }
}

fn sensitivities(clip: f64, batch_sizes: &[usize]) -> Vec<f64> {
    assert!(clip > 0.0, "clip norm must be positive");
    batch_sizes
        .iter()
        .map(|&x| {
            assert!(x >= 1, "batch size must be at least 1");
            2.0 * clip / x as f64
        })
        .collect()
}

/// zCDP cost of one Gaussian-mechanism release: `sensitivity^2 / (2 sigma^2)`.
pub fn gaussian_step_rho(sensitivity: f64, sigma: f64) -> ZcdpBudget {
    assert!(sensitivity > 0.0, "sensitivity must be positive");
    assert!(sigma > 0.0, "noise std-dev must be positive");
    ZcdpBudget(sensitivity * sensitivity / (2.0 * sigma * sigma))
}

/// Sum of zCDP costs. Kahan-compensated so long compositions stay exact to
/// within a few ulps.
pub fn compose(rhos: &[ZcdpBudget]) -> ZcdpBudget {
    let mut sum = 0.0;
    let mut carry = 0.0;
    for rho in rhos {
        let y = rho.0 - carry;
        let t = sum + y;
        carry = (t - sum) - y;
        sum = t;
    }
    ZcdpBudget(sum)
}

/// Convert a zCDP budget to an `(epsilon, delta)` guarantee:
/// `epsilon = rho + 2 sqrt(rho ln(1/delta))`.
pub fn zcdp_to_dp(rho: ZcdpBudget, delta: f64) -> DpGuarantee {
    assert!(rho.0 >= 0.0, "zCDP budget must be non-negative");
    assert!(delta > 0.0 && delta < 1.0, "delta must lie in (0, 1)");
    let epsilon = rho.0 + 2.0 * (rho.0 * (1.0 / delta).ln()).sqrt();
    DpGuarantee { epsilon, delta }
}

/// End-to-end privacy loss of one device after `k` iterations, in closed
/// form: `2kG^2/(X^2 s^2) + (2G/(X s)) sqrt(2k ln(1/delta))`.
///
/// Equals the composed step-wise pipeline
/// `zcdp_to_dp(compose(k copies of gaussian_step_rho(2G/X, s)))` exactly.
pub fn total_epsilon(k: f64, clip: f64, batch_size: f64, sigma: f64, delta: f64) -> f64 {
    assert!(k >= 0.0 && k.is_finite(), "iteration count must be finite and non-negative");
    assert!(clip > 0.0 && batch_size > 0.0 && sigma > 0.0, "clip, batch size and sigma must be positive");
    assert!(delta > 0.0 && delta < 1.0, "delta must lie in (0, 1)");
    let ratio = 2.0 * clip / (batch_size * sigma);
    let rho = k * ratio * ratio / 2.0;
    rho + ratio * (2.0 * k * (1.0 / delta).ln()).sqrt()
}

/// Noise magnitude that makes [`total_epsilon`] spend exactly `epsilon`
/// after `k` iterations.
///
/// Solving `rho + 2 sqrt(rho ln(1/delta)) = epsilon` for the per-device
/// zCDP budget gives `rho = epsilon^2 / Z` with
/// `Z = epsilon + 2 ln(1/delta) + 2 sqrt((ln(1/delta))^2 + epsilon ln(1/delta))`,
/// and then `sigma^2 = 2 k G^2 / (X^2 rho)`.
pub fn calibrate_sigma(k: f64, clip: f64, batch_size: f64, epsilon: f64, delta: f64) -> f64 {
    assert!(k > 0.0 && k.is_finite(), "iteration count must be positive and finite");
    assert!(clip > 0.0 && batch_size > 0.0, "clip and batch size must be positive");
    assert!(epsilon > 0.0, "privacy budget must be positive");
    assert!(delta > 0.0 && delta < 1.0, "delta must lie in (0, 1)");
    let log_inv_delta = (1.0 / delta).ln();
    let z = epsilon + 2.0 * log_inv_delta + 2.0 * (log_inv_delta * log_inv_delta + epsilon * log_inv_delta).sqrt();
    let rho = epsilon * epsilon / z;
    clip * (2.0 * k).sqrt() / (batch_size * rho.sqrt())
}

/// `d` iid draws from `N(0, sigma^2)` via Box-Muller. `sigma = 0` returns
/// the zero vector without consuming the stream.
pub fn sample_noise(rng: &mut ChaCha8Rng, d: usize, sigma: f64) -> Vec<f64> {
    assert!(sigma >= 0.0, "noise std-dev must be non-negative");
    if sigma == 0.0 {
        return vec![0.0; d];
    }
    let mut out = Vec::with_capacity(d);
    while out.len() < d {
        let (z0, z1) = standard_normal_pair(rng);
        out.push(z0 * sigma);
        if out.len() < d {
            out.push(z1 * sigma);
        }
    }
    out
}

/// One Box-Muller pair of standard normals.
fn standard_normal_pair(rng: &mut ChaCha8Rng) -> (f64, f64) {
    use rand::Rng;
    // u1 in (0, 1] so the log is finite; u2 in [0, 1).
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    let r = (-2.0 * u1.ln()).sqrt();
    let phi = 2.0 * std::f64::consts::PI * u2;
    (r * phi.cos(), r * phi.sin())
}
