//! Deterministic single-process simulator of the noisy periodic-averaging
//! protocol: every device takes `tau` local noisy SGD steps, then the
//! server averages all local models, for `K` total iterations. Setting
//! `tau = 1` gives the one-step-per-round baseline.
//!
//! All randomness comes from counter-based streams keyed by
//! `(seed, device_id, iteration)`, so results are independent of device
//! scheduling and bit-identical across re-runs.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datasets::{DeviceDataset, Federation};
use crate::models::{global_loss, mean_test_accuracy, LossKernel};
use crate::privacy::{sample_noise, total_epsilon, NoiseSpec};
use crate::rng::{minibatch_indices, stream, LABEL_BATCH, LABEL_NOISE};

/// Abort when any parameter coordinate grows beyond this magnitude.
const DIVERGENCE_LIMIT: f64 = 1e8;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("run diverged at iteration {iteration}: a parameter became non-finite or exceeded 1e8 (learning rate too large?)")]
    Diverged { iteration: u32, partial: Box<TrainTrace> },
}

/// Everything a training run needs besides the data and the kernel.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunConfig {
    /// Aggregation period tau: local steps between global averages.
    pub tau: u32,
    /// Total iterations K; must be a multiple of `tau`.
    pub iterations: u32,
    /// Learning rate.
    pub eta: f64,
    /// Per-device Gaussian noise.
    pub noise: NoiseSpec,
    /// Per-sample gradient clip norm G.
    pub clip: f64,
    /// Privacy failure probability used for epsilon bookkeeping.
    pub delta: f64,
    /// Communication cost per aggregation, c1.
    pub comm_cost: f64,
    /// Computation cost per local step, c2.
    pub comp_cost: f64,
    /// Root seed for all RNG streams.
    pub seed: u64,
    /// Iterations between metric snapshots.
    pub eval_every: u32,
    /// Keep the averaged model in every snapshot (memory-heavy; used by
    /// trajectory-level tests).
    #[serde(default)]
    pub record_models: bool,
}

impl RunConfig {
    fn validate(&self, fed: &Federation) -> Result<(), EngineError> {
        if self.tau < 1 {
            return Err(EngineError::Config("aggregation period must be at least 1".into()));
        }
        if self.iterations < 1 {
            return Err(EngineError::Config("iteration count must be at least 1".into()));
        }
        if self.iterations % self.tau != 0 {
            return Err(EngineError::Config(format!(
                "iteration count {} is not a multiple of the aggregation period {}",
                self.iterations, self.tau
            )));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(EngineError::Config(format!("learning rate must be positive, got {}", self.eta)));
        }
        if self.eval_every < 1 {
            return Err(EngineError::Config("eval_every must be at least 1".into()));
        }
        if self.clip <= 0.0 {
            return Err(EngineError::Config("clip norm must be positive".into()));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(EngineError::Config(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        if self.noise.sigma.len() != fed.device_count() {
            return Err(EngineError::Config(format!(
                "{} noise magnitudes for {} devices",
                self.noise.sigma.len(),
                fed.device_count()
            )));
        }
        Ok(())
    }
}

/// One metrics row.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Snapshot {
    pub iteration: u32,
    /// Empirical risk of the averaged model over all train splits.
    pub global_loss: f64,
    /// Mean accuracy of the averaged model over device test splits.
    pub mean_test_accuracy: f64,
    /// Per-device resource cost so far: c1 * floor(k/tau) + c2 * k.
    pub cumulative_cost: f64,
    /// Privacy spent so far, per device. Infinite when sigma = 0.
    pub epsilon_spent: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<Vec<f64>>,
}

/// The model that minimized the recorded global loss.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BestModel {
    pub iteration: u32,
    pub loss: f64,
    pub test_accuracy: f64,
    pub theta: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainTrace {
    pub snapshots: Vec<Snapshot>,
    pub best: BestModel,
    pub final_model: Vec<f64>,
}

impl TrainTrace {
    /// Tidy CSV with one row per snapshot. The epsilon column reports the
    /// maximum across devices.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,global_loss,mean_test_accuracy,cumulative_cost,epsilon_spent\n");
        for s in &self.snapshots {
            let eps = s.epsilon_spent.iter().copied().fold(0.0f64, f64::max);
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                s.iteration, s.global_loss, s.mean_test_accuracy, s.cumulative_cost, eps
            ));
        }
        out
    }
}

/// Mini-batch stream for `(seed, device, iteration)`.
pub fn batch_stream(seed: u64, device_id: usize, iteration: u32) -> ChaCha8Rng {
    stream(seed, &[device_id as u64, iteration as u64, LABEL_BATCH])
}

/// Noise stream for `(seed, device, iteration)`.
pub fn noise_stream(seed: u64, device_id: usize, iteration: u32) -> ChaCha8Rng {
    stream(seed, &[device_id as u64, iteration as u64, LABEL_NOISE])
}

/// One local step: `theta - eta * (clipped mini-batch gradient + noise)`.
pub fn local_update(
    kernel: &LossKernel,
    theta: &[f64],
    device: &DeviceDataset,
    eta: f64,
    clip: f64,
    sigma: f64,
    batch_rng: &mut ChaCha8Rng,
    noise_rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let idx = minibatch_indices(batch_rng, device.train.len(), device.batch_size);
    let gradient = kernel.clipped_minibatch_gradient(theta, idx.iter().map(|&i| &device.train[i]), clip);
    let noise = sample_noise(noise_rng, theta.len(), sigma);
    theta
        .iter()
        .zip(gradient.iter().zip(&noise))
        .map(|(&t, (&g, &b))| t - eta * (g + b))
        .collect()
}

/// Coordinate-wise unweighted mean of the local models.
pub fn global_aggregate(models: &[Vec<f64>]) -> Vec<f64> {
    assert!(!models.is_empty(), "cannot aggregate zero models");
    let d = models[0].len();
    assert!(models.iter().all(|m| m.len() == d), "model dimension mismatch");
    let inv = 1.0 / models.len() as f64;
    (0..d).map(|i| models.iter().map(|m| m[i]).sum::<f64>() * inv).collect()
}

/// Run the protocol for `config.iterations` iterations with aggregation
/// every `config.tau` steps. Devices all start from the zero vector and
/// every device participates in every round.
pub fn run_dp_pasgd(fed: &Federation, kernel: &LossKernel, config: &RunConfig) -> Result<TrainTrace, EngineError> {
    config.validate(fed)?;
    let d = fed.dim;
    let device_count = fed.device_count();

    let mut thetas: Vec<Vec<f64>> = vec![vec![0.0; d]; device_count];
    let mut snapshots = Vec::new();
    let mut best: Option<BestModel> = None;

    let average = global_aggregate(&thetas);
    snapshots.push(self::snapshot(fed, kernel, config, 0, &average));

    for k in 1..=config.iterations {
        for (i, device) in fed.devices.iter().enumerate() {
            let mut batch_rng = batch_stream(config.seed, device.device_id, k);
            let mut noise_rng = noise_stream(config.seed, device.device_id, k);
            let next = local_update(
                kernel,
                &thetas[i],
                device,
                config.eta,
                config.clip,
                config.noise.sigma[i],
                &mut batch_rng,
                &mut noise_rng,
            );
            if next.iter().any(|v| !v.is_finite() || v.abs() > DIVERGENCE_LIMIT) {
                let partial = TrainTrace {
                    snapshots,
                    best: best.unwrap_or(BestModel {
                        iteration: 0,
                        loss: f64::INFINITY,
                        test_accuracy: 0.0,
                        theta: vec![0.0; d],
                    }),
                    final_model: thetas[i].clone(),
                };
                return Err(EngineError::Diverged { iteration: k, partial: Box::new(partial) });
            }
            thetas[i] = next;
        }

        if k % config.tau == 0 {
            let average = global_aggregate(&thetas);
            for theta in &mut thetas {
                theta.clone_from(&average);
            }
        }

        if k % config.eval_every == 0 || k == config.iterations {
            let average = global_aggregate(&thetas);
            let snap = self::snapshot(fed, kernel, config, k, &average);
            let better = best.as_ref().map_or(true, |b| snap.global_loss < b.loss);
            if better {
                best = Some(BestModel {
                    iteration: k,
                    loss: snap.global_loss,
                    test_accuracy: snap.mean_test_accuracy,
                    theta: average.clone(),
                });
            }
            snapshots.push(snap);
        }
    }

    let final_model = global_aggregate(&thetas);
    Ok(TrainTrace {
        snapshots,
        best: best.expect("at least one post-initial snapshot exists"),
        final_model,
    })
}

/// The one-local-step-per-round baseline: identical to [`run_dp_pasgd`]
/// with the aggregation period forced to 1.
pub fn run_dp_sgd_baseline(fed: &Federation, kernel: &LossKernel, config: &RunConfig) -> Result<TrainTrace, EngineError> {
    let mut cfg = config.clone();
    cfg.tau = 1;
    run_dp_pasgd(fed, kernel, &cfg)
}

fn snapshot(fed: &Federation, kernel: &LossKernel, config: &RunConfig, k: u32, average: &[f64]) -> Snapshot {
    let epsilon_spent = fed
        .devices
        .iter()
        .zip(&config.noise.sigma)
        .map(|(dev, &sigma)| {
            if k == 0 {
                0.0
            } else if sigma == 0.0 {
                f64::INFINITY
            } else {
                total_epsilon(k as f64, config.clip, dev.batch_size as f64, sigma, config.delta)
            }
        })
        .collect();
    Snapshot {
        iteration: k,
        global_loss: global_loss(kernel, fed, average),
        mean_test_accuracy: mean_test_accuracy(kernel, fed, average),
        cumulative_cost: config.comm_cost * (k / config.tau) as f64 + config.comp_cost * k as f64,
        epsilon_spent,
        model: config.record_models.then(|| average.to_vec()),
    }
}
