//! Loss and gradient kernels for the two binary tasks, per-sample gradient
//! clipping, and estimation of the constants the planner consumes.
//!
//! Both kernels work on `{-1, +1}` labels and a dense parameter vector.
//! The bias term is expected to be a feature appended by the dataset
//! pipeline, so every sample already lives in the unit ball.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datasets::{Federation, Sample};
use crate::rng::{minibatch_indices, stream, LABEL_PROBE};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("configuration error: {0}")]
    Config(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelKind {
    /// Binary cross-entropy on a sigmoid score (two-class softmax).
    Logistic,
    /// Linear SVM hinge loss.
    SvmHinge,
}

/// A per-sample loss plus an L2 regularizer `(l2_reg/2)||theta||^2`.
///
/// The regularizer must be positive whenever the planner is used; it is
/// what makes the objective satisfy the curvature condition the planner's
/// bound assumes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossKernel {
    pub kind: KernelKind,
    pub l2_reg: f64,
}

impl LossKernel {
    pub fn logistic(l2_reg: f64) -> Self {
        assert!(l2_reg >= 0.0, "regularizer must be non-negative");
        Self { kind: KernelKind::Logistic, l2_reg }
    }

    pub fn svm_hinge(l2_reg: f64) -> Self {
        assert!(l2_reg >= 0.0, "regularizer must be non-negative");
        Self { kind: KernelKind::SvmHinge, l2_reg }
    }

    /// Unregularized loss of one sample.
    fn sample_loss(&self, theta: &[f64], sample: &Sample) -> f64 {
        let z = dot(theta, &sample.features);
        let y = sample.label as f64;
        match self.kind {
            // ln(1 + exp(-y z)), computed without overflow.
            KernelKind::Logistic => {
                let t = -y * z;
                t.max(0.0) + (-t.abs()).exp().ln_1p()
            }
            KernelKind::SvmHinge => (1.0 - y * z).max(0.0),
        }
    }

    /// Mean per-sample loss over `samples` plus the regularizer.
    pub fn loss(&self, theta: &[f64], samples: &[Sample]) -> f64 {
        assert!(!samples.is_empty(), "loss of an empty sample set is undefined");
        let mean = samples.iter().map(|s| self.data_term_checked(theta, s)).sum::<f64>() / samples.len() as f64;
        mean + 0.5 * self.l2_reg * dot(theta, theta)
    }

    fn data_term_checked(&self, theta: &[f64], sample: &Sample) -> f64 {
        assert_eq!(sample.features.len(), theta.len(), "feature/parameter dimension mismatch");
        self.sample_loss(theta, sample)
    }

    /// Exact gradient of the regularized per-sample loss. The hinge
    /// subgradient at the margin boundary takes the active branch.
    pub fn per_sample_gradient(&self, theta: &[f64], sample: &Sample) -> Vec<f64> {
        assert_eq!(sample.features.len(), theta.len(), "feature/parameter dimension mismatch");
        let z = dot(theta, &sample.features);
        let y = sample.label as f64;
        let data_scale = match self.kind {
            // d/dz ln(1+exp(-yz)) = -y * sigmoid(-y z)
            KernelKind::Logistic => -y * sigmoid(-y * z),
            KernelKind::SvmHinge => {
                if y * z <= 1.0 {
                    -y
                } else {
                    0.0
                }
            }
        };
        theta
            .iter()
            .zip(&sample.features)
            .map(|(&th, &x)| data_scale * x + self.l2_reg * th)
            .collect()
    }

    /// Mean of the (unclipped) per-sample gradients.
    pub fn batch_gradient(&self, theta: &[f64], samples: &[Sample]) -> Vec<f64> {
        assert!(!samples.is_empty(), "gradient of an empty sample set is undefined");
        let mut acc = vec![0.0; theta.len()];
        for s in samples {
            for (a, g) in acc.iter_mut().zip(self.per_sample_gradient(theta, s)) {
                *a += g;
            }
        }
        let inv = 1.0 / samples.len() as f64;
        for a in &mut acc {
            *a *= inv;
        }
        acc
    }

    /// Mean of per-sample gradients, each rescaled to L2 norm at most
    /// `clip` before averaging. The result has norm at most `clip`, and
    /// swapping one sample of a batch of size X moves it by at most
    /// `2 clip / X`.
    pub fn clipped_minibatch_gradient<'a>(
        &self,
        theta: &[f64],
        batch: impl IntoIterator<Item = &'a Sample>,
        clip: f64,
    ) -> Vec<f64> {
        assert!(clip > 0.0, "clip norm must be positive");
        let mut acc = vec![0.0; theta.len()];
        let mut count = 0usize;
        for s in batch {
            let mut g = self.per_sample_gradient(theta, s);
            let norm = l2_norm(&g);
            if norm > clip {
                let scale = clip / norm;
                for v in &mut g {
                    *v *= scale;
                }
            }
            for (a, v) in acc.iter_mut().zip(&g) {
                *a += v;
            }
            count += 1;
        }
        assert!(count > 0, "mini-batch must be non-empty");
        let inv = 1.0 / count as f64;
        for a in &mut acc {
            *a *= inv;
        }
        acc
    }

    /// Fraction of correct sign predictions; a score of exactly zero
    /// predicts the positive class.
    pub fn accuracy(&self, theta: &[f64], samples: &[Sample]) -> f64 {
        assert!(!samples.is_empty(), "accuracy of an empty sample set is undefined");
        let correct = samples
            .iter()
            .filter(|s| {
                let predicted: i8 = if dot(theta, &s.features) >= 0.0 { 1 } else { -1 };
                predicted == s.label
            })
            .count();
        correct as f64 / samples.len() as f64
    }
}

/// The empirical-risk objective over all devices' train splits: mean over
/// devices of the per-device regularized mean loss.
pub fn global_loss(kernel: &LossKernel, fed: &Federation, theta: &[f64]) -> f64 {
    let sum: f64 = fed.devices.iter().map(|d| kernel.loss(theta, &d.train)).sum();
    sum / fed.device_count() as f64
}

/// Gradient of [`global_loss`].
pub fn global_gradient(kernel: &LossKernel, fed: &Federation, theta: &[f64]) -> Vec<f64> {
    let mut acc = vec![0.0; theta.len()];
    for d in &fed.devices {
        for (a, g) in acc.iter_mut().zip(kernel.batch_gradient(theta, &d.train)) {
            *a += g;
        }
    }
    let inv = 1.0 / fed.device_count() as f64;
    for a in &mut acc {
        *a *= inv;
    }
    acc
}

/// Which held-out split to score.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitKind {
    Val,
    Test,
}

/// Mean accuracy across devices with a non-empty split of the given kind.
pub fn mean_split_accuracy(kernel: &LossKernel, fed: &Federation, theta: &[f64], split: SplitKind) -> f64 {
    let mut sum = 0.0;
    let mut counted = 0usize;
    for d in &fed.devices {
        let samples = match split {
            SplitKind::Val => &d.val,
            SplitKind::Test => &d.test,
        };
        if !samples.is_empty() {
            sum += kernel.accuracy(theta, samples);
            counted += 1;
        }
    }
    if counted == 0 {
        return 0.0;
    }
    sum / counted as f64
}

/// Mean test accuracy across devices with a non-empty test split.
pub fn mean_test_accuracy(kernel: &LossKernel, fed: &Federation, theta: &[f64]) -> f64 {
    mean_split_accuracy(kernel, fed, theta, SplitKind::Test)
}

/// Constants consumed by the convergence bound and the accountant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemConstants {
    /// Per-sample gradient clip norm G (makes the loss G-Lipschitz).
    pub clip: f64,
    /// Gradient smoothness constant L.
    pub smoothness: f64,
    /// Curvature constant lambda (the regularizer coefficient).
    pub strong_convexity: f64,
    /// Bound on the mini-batch gradient variance, xi^2.
    pub gradient_variance: f64,
    /// Initial optimality-gap estimate alpha.
    pub initial_gap: f64,
    /// Parameter dimension d.
    pub dim: usize,
    /// Device count M.
    pub device_count: usize,
    /// Mini-batch size X_m per device.
    pub batch_sizes: Vec<usize>,
}

impl ProblemConstants {
    pub fn validate(&self) -> Result<(), ModelError> {
        let positive = [
            ("clip", self.clip),
            ("smoothness", self.smoothness),
            ("strong_convexity", self.strong_convexity),
            ("initial_gap", self.initial_gap),
        ];
        for (name, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                return Err(ModelError::Config(format!("{name} must be positive and finite, got {value}")));
            }
        }
        if !(self.gradient_variance >= 0.0 && self.gradient_variance.is_finite()) {
            return Err(ModelError::Config("gradient_variance must be non-negative".into()));
        }
        if self.strong_convexity > self.smoothness {
            return Err(ModelError::Config(format!(
                "strong_convexity {} exceeds smoothness {}",
                self.strong_convexity, self.smoothness
            )));
        }
        if self.dim == 0 || self.device_count == 0 {
            return Err(ModelError::Config("dimension and device count must be at least 1".into()));
        }
        if self.batch_sizes.len() != self.device_count {
            return Err(ModelError::Config(format!(
                "{} batch sizes for {} devices",
                self.batch_sizes.len(),
                self.device_count
            )));
        }
        if self.batch_sizes.iter().any(|&x| x == 0) {
            return Err(ModelError::Config("batch sizes must be at least 1".into()));
        }
        Ok(())
    }
}

/// Settings for [`estimate_constants`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProbeConfig {
    /// Clip norm G to adopt.
    pub clip: f64,
    /// Mini-batch draws per device for the variance probe.
    pub variance_draws: usize,
    /// Seed for the probe's RNG streams.
    pub seed: u64,
    /// When positive, estimate the minimum loss with this many centralized
    /// gradient-descent iterations and report the true initial gap. When
    /// zero, the initial loss itself is used as the gap.
    pub loss_floor_iters: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { clip: 1.0, variance_draws: 256, seed: 0, loss_floor_iters: 0 }
    }
}

/// Estimate the planner constants from the federation at the shared
/// initial point (the zero vector).
///
/// - `clip` is adopted as configured;
/// - `smoothness` is the analytic curvature bound on the observed data:
///   `max||x||^2 / 4 + l2_reg` for the logistic kernel and the surrogate
///   `max||x||^2 + l2_reg` for the (nonsmooth) hinge;
/// - `strong_convexity` equals the regularizer coefficient;
/// - `gradient_variance` is the max over devices of the empirical variance
///   of the clipped mini-batch gradient at the initial point;
/// - `initial_gap` is the initial global loss, minus an estimated loss
///   floor when `loss_floor_iters > 0`.
pub fn estimate_constants(
    kernel: &LossKernel,
    fed: &Federation,
    probe: &ProbeConfig,
) -> Result<ProblemConstants, ModelError> {
    if kernel.l2_reg <= 0.0 {
        return Err(ModelError::Config(
            "the planner needs l2_reg > 0; curvature constants are undefined without it".into(),
        ));
    }
    if probe.clip <= 0.0 {
        return Err(ModelError::Config("clip norm must be positive".into()));
    }

    let max_sq_norm = fed
        .devices
        .iter()
        .flat_map(|d| d.train.iter().chain(&d.val).chain(&d.test))
        .map(|s| dot(&s.features, &s.features))
        .fold(0.0f64, f64::max);
    let smoothness = match kernel.kind {
        KernelKind::Logistic => max_sq_norm / 4.0 + kernel.l2_reg,
        KernelKind::SvmHinge => max_sq_norm + kernel.l2_reg,
    };

    let theta0 = vec![0.0; fed.dim];

    let mut gradient_variance = 0.0f64;
    for dev in &fed.devices {
        let reference = kernel.clipped_minibatch_gradient(&theta0, &dev.train, probe.clip);
        let mut acc = 0.0;
        for draw in 0..probe.variance_draws {
            let mut rng = stream(probe.seed, &[LABEL_PROBE, dev.device_id as u64, draw as u64]);
            let idx = minibatch_indices(&mut rng, dev.train.len(), dev.batch_size);
            let g = kernel.clipped_minibatch_gradient(&theta0, idx.iter().map(|&i| &dev.train[i]), probe.clip);
            acc += g.iter().zip(&reference).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        }
        gradient_variance = gradient_variance.max(acc / probe.variance_draws as f64);
    }

    let initial_loss = global_loss(kernel, fed, &theta0);
    let initial_gap = if probe.loss_floor_iters > 0 {
        let floor = estimate_loss_floor(kernel, fed, smoothness, probe.loss_floor_iters);
        (initial_loss - floor).max(f64::EPSILON)
    } else {
        initial_loss
    };

    let constants = ProblemConstants {
        clip: probe.clip,
        smoothness,
        strong_convexity: kernel.l2_reg,
        gradient_variance,
        initial_gap,
        dim: fed.dim,
        device_count: fed.device_count(),
        batch_sizes: fed.batch_sizes(),
    };
    constants.validate()?;
    Ok(constants)
}

/// Long centralized full-gradient descent; returns the best loss seen.
fn estimate_loss_floor(kernel: &LossKernel, fed: &Federation, smoothness: f64, iters: usize) -> f64 {
    let step = 1.0 / smoothness;
    let mut theta = vec![0.0; fed.dim];
    let mut best = global_loss(kernel, fed, &theta);
    for _ in 0..iters {
        let g = global_gradient(kernel, fed, &theta);
        for (t, gi) in theta.iter_mut().zip(&g) {
            *t -= step * gi;
        }
        best = best.min(global_loss(kernel, fed, &theta));
    }
    best
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn l2_norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{DeviceDataset, Federation};
    use rand::Rng;

    fn sample(features: &[f64], label: i8) -> Sample {
        Sample::new(features.to_vec(), label)
    }

    #[test]
    fn logistic_loss_at_origin_is_ln2() {
        let kernel = LossKernel::logistic(0.0);
        let batch = vec![sample(&[0.4, 0.2], 1), sample(&[0.1, -0.3], -1)];
        let loss = kernel.loss(&[0.0, 0.0], &batch);
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn hinge_loss_at_origin_is_one() {
        let kernel = LossKernel::svm_hinge(0.0);
        let batch = vec![sample(&[0.4, 0.2], 1), sample(&[0.1, -0.3], -1)];
        assert!((kernel.loss(&[0.0, 0.0], &batch) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn hinge_outside_margin_is_reg_only() {
        let kernel = LossKernel::svm_hinge(0.1);
        let theta = [2.0, 0.0];
        let batch = vec![sample(&[1.0, 0.0], 1)]; // y * <theta, x> = 2
        let loss = kernel.loss(&theta, &batch);
        assert!((loss - 0.5 * 0.1 * 4.0).abs() < 1e-15);
    }

    #[test]
    fn logistic_gradient_at_origin() {
        let kernel = LossKernel::logistic(0.0);
        let s = sample(&[0.5, -1.0], 1);
        // (p - y01) x with p = 0.5 at the origin
        let g = kernel.per_sample_gradient(&[0.0, 0.0], &s);
        assert!((g[0] - (0.5 - 1.0) * 0.5).abs() < 1e-15);
        assert!((g[1] - (0.5 - 1.0) * -1.0).abs() < 1e-15);
    }

    #[test]
    fn hinge_gradient_inactive_is_regularizer() {
        let kernel = LossKernel::svm_hinge(0.5);
        let theta = [2.0, 4.0];
        let s = sample(&[1.0, 0.0], 1); // margin 2 > 1
        let g = kernel.per_sample_gradient(&theta, &s);
        assert_eq!(g, vec![1.0, 2.0]);
    }

    #[test]
    fn hinge_boundary_uses_active_branch() {
        let kernel = LossKernel::svm_hinge(0.0);
        let theta = [1.0, 0.0];
        let s = sample(&[1.0, 0.5], 1); // margin exactly 1
        let g = kernel.per_sample_gradient(&theta, &s);
        assert_eq!(g, vec![-1.0, -0.5]);
    }

    fn finite_difference(kernel: &LossKernel, theta: &[f64], s: &Sample) -> Vec<f64> {
        let h = 1e-5;
        (0..theta.len())
            .map(|i| {
                let mut plus = theta.to_vec();
                let mut minus = theta.to_vec();
                plus[i] += h;
                minus[i] -= h;
                let batch = std::slice::from_ref(s);
                (kernel.loss(&plus, batch) - kernel.loss(&minus, batch)) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = stream(5, &[LABEL_PROBE]);
        for kernel in [LossKernel::logistic(0.05), LossKernel::svm_hinge(0.05)] {
            for _ in 0..50 {
                let theta: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
                let features: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let label = if rng.gen::<bool>() { 1 } else { -1 };
                let s = Sample::new(features, label);
                // Stay away from the hinge kink.
                if kernel.kind == KernelKind::SvmHinge {
                    let margin = s.label as f64 * dot(&theta, &s.features);
                    if (margin - 1.0).abs() < 1e-2 {
                        continue;
                    }
                }
                let analytic = kernel.per_sample_gradient(&theta, &s);
                let fd = finite_difference(&kernel, &theta, &s);
                let err = analytic.iter().zip(&fd).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                let scale = l2_norm(&fd).max(1.0);
                assert!(err / scale < 1e-5, "kernel {:?}: fd mismatch {err}", kernel.kind);
            }
        }
    }

    #[test]
    fn clipping_inactive_equals_unclipped_mean() {
        let kernel = LossKernel::logistic(0.01);
        let theta = [0.1, -0.2];
        let batch = vec![sample(&[0.3, 0.1], 1), sample(&[-0.2, 0.4], -1)];
        let clipped = kernel.clipped_minibatch_gradient(&theta, &batch, 100.0);
        let plain = kernel.batch_gradient(&theta, &batch);
        for (a, b) in clipped.iter().zip(&plain) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn clipping_rescales_to_exactly_clip() {
        let kernel = LossKernel::logistic(0.0);
        // At the origin the gradient is -0.5 x for y=+1; pick ||x|| = 4 so
        // the per-sample norm is 2.0 = 2 * clip.
        let s = sample(&[4.0, 0.0], 1);
        let g = kernel.clipped_minibatch_gradient(&[0.0, 0.0], std::slice::from_ref(&s), 1.0);
        assert!((l2_norm(&g) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn clipped_norm_never_exceeds_clip() {
        let kernel = LossKernel::svm_hinge(0.2);
        let mut rng = stream(6, &[LABEL_PROBE]);
        for _ in 0..100 {
            let theta: Vec<f64> = (0..3).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let batch: Vec<Sample> = (0..8)
                .map(|_| {
                    let f: Vec<f64> = (0..3).map(|_| rng.gen_range(-3.0..3.0)).collect();
                    Sample::new(f, if rng.gen::<bool>() { 1 } else { -1 })
                })
                .collect();
            let g = kernel.clipped_minibatch_gradient(&theta, &batch, 0.7);
            assert!(l2_norm(&g) <= 0.7 + 1e-12);
        }
    }

    #[test]
    fn accuracy_tie_break_predicts_positive() {
        let kernel = LossKernel::svm_hinge(0.0);
        let batch = vec![sample(&[1.0], 1), sample(&[2.0], -1), sample(&[3.0], 1)];
        let acc = kernel.accuracy(&[0.0], &batch);
        assert!((acc - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn accuracy_perfect_separator_and_inversion() {
        let kernel = LossKernel::logistic(0.0);
        let batch = vec![sample(&[1.0], 1), sample(&[-1.0], -1), sample(&[0.5], 1)];
        assert_eq!(kernel.accuracy(&[1.0], &batch), 1.0);
        let inverted: Vec<Sample> = batch.iter().map(|s| Sample::new(s.features.clone(), -s.label)).collect();
        assert_eq!(kernel.accuracy(&[1.0], &inverted), 0.0);
    }

    fn toy_federation(batch_size: usize) -> Federation {
        // Two devices, max feature norm exactly 1.
        let dev0 = DeviceDataset {
            device_id: 0,
            train: vec![sample(&[1.0, 0.0], 1), sample(&[0.2, 0.3], -1), sample(&[-0.5, 0.1], 1)],
            val: vec![],
            test: vec![],
            batch_size: batch_size.min(3),
        };
        let dev1 = DeviceDataset {
            device_id: 1,
            train: vec![sample(&[0.0, 0.9], -1), sample(&[0.4, -0.4], 1), sample(&[-0.3, -0.3], -1)],
            val: vec![],
            test: vec![],
            batch_size: batch_size.min(3),
        };
        Federation::new(vec![dev0, dev1]).unwrap()
    }

    #[test]
    fn smoothness_estimate_for_logistic() {
        let fed = toy_federation(2);
        let kernel = LossKernel::logistic(0.01);
        let c = estimate_constants(&kernel, &fed, &ProbeConfig::default()).unwrap();
        assert!((c.smoothness - 0.26).abs() < 1e-12);
        assert_eq!(c.strong_convexity, 0.01);
        assert_eq!(c.dim, 2);
        assert_eq!(c.device_count, 2);
    }

    #[test]
    fn full_batch_variance_is_zero() {
        let fed = toy_federation(usize::MAX);
        let kernel = LossKernel::logistic(0.01);
        let probe = ProbeConfig { variance_draws: 16, ..ProbeConfig::default() };
        let c = estimate_constants(&kernel, &fed, &probe).unwrap();
        assert_eq!(c.gradient_variance, 0.0);
    }

    #[test]
    fn minibatch_variance_is_positive() {
        let fed = toy_federation(1);
        let kernel = LossKernel::logistic(0.01);
        let c = estimate_constants(&kernel, &fed, &ProbeConfig::default()).unwrap();
        assert!(c.gradient_variance > 0.0);
    }

    #[test]
    fn zero_regularizer_is_config_error() {
        let fed = toy_federation(2);
        let kernel = LossKernel::logistic(0.0);
        assert!(estimate_constants(&kernel, &fed, &ProbeConfig::default()).is_err());
    }

    #[test]
    fn initial_gap_defaults_to_initial_loss() {
        let fed = toy_federation(2);
        let kernel = LossKernel::logistic(0.01);
        let c = estimate_constants(&kernel, &fed, &ProbeConfig::default()).unwrap();
        assert!((c.initial_gap - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn initial_gap_with_loss_floor_matches_descent_oracle() {
        let fed = toy_federation(2);
        let kernel = LossKernel::logistic(0.01);
        let probe = ProbeConfig { loss_floor_iters: 10_000, ..ProbeConfig::default() };
        let c = estimate_constants(&kernel, &fed, &probe).unwrap();

        // Independent oracle: plain gradient descent from zero.
        let mut theta = vec![0.0; fed.dim];
        let step = 1.0 / c.smoothness;
        for _ in 0..10_000 {
            let g = global_gradient(&kernel, &fed, &theta);
            for (t, gi) in theta.iter_mut().zip(&g) {
                *t -= step * gi;
            }
        }
        let floor = global_loss(&kernel, &fed, &theta);
        let expected = std::f64::consts::LN_2 - floor;
        assert!((c.initial_gap - expected).abs() < 1e-9, "gap {} vs oracle {expected}", c.initial_gap);
    }

    #[test]
    fn pl_inequality_holds_with_regularizer() {
        let fed = toy_federation(3);
        let kernel = LossKernel::logistic(0.05);

        // Loss floor from a long descent run (oracle).
        let mut theta = vec![0.0; fed.dim];
        for _ in 0..20_000 {
            let g = global_gradient(&kernel, &fed, &theta);
            for (t, gi) in theta.iter_mut().zip(&g) {
                *t -= 2.0 * gi;
            }
        }
        let floor = global_loss(&kernel, &fed, &theta);

        let mut rng = stream(12, &[LABEL_PROBE]);
        for _ in 0..200 {
            let point: Vec<f64> = (0..fed.dim).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let g = global_gradient(&kernel, &fed, &point);
            let lhs = 0.5 * dot(&g, &g);
            let rhs = kernel.l2_reg * (global_loss(&kernel, &fed, &point) - floor);
            assert!(lhs + 1e-6 >= rhs, "PL violated: {lhs} < {rhs}");
        }
    }

    #[test]
    #[should_panic(expected = "non-empty")]
    fn empty_minibatch_is_contract_violation() {
        let kernel = LossKernel::logistic(0.0);
        let empty: Vec<Sample> = Vec::new();
        kernel.clipped_minibatch_gradient(&[0.0], &empty, 1.0);
    }
}
