//! Resource cost model, convergence-bound evaluation, and the optimizer
//! that chooses the aggregation period, iteration count, and per-device
//! noise magnitudes under resource and privacy budgets.
//!
//! The solver works on the relaxed single-variable problem: for a given
//! real iteration count K, the budget-tight aggregation period is
//! `tau*(K) = c1 K / (C_th - c2 K)` and the budget-tight noise follows
//! from the privacy accountant, so the bound becomes a 1-D function of K.
//! That function is minimized by projected gradient descent with
//! finite-difference derivatives and an 8-point multi-start, then rounded
//! to integers and repaired to a feasible `(tau, K)` pair.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datasets::Federation;
use crate::engine::{run_dp_pasgd, RunConfig};
use crate::models::{mean_split_accuracy, LossKernel, ModelError, ProblemConstants, SplitKind};
use crate::privacy::{calibrate_sigma, total_epsilon, NoiseSpec};

/// Safety factor applied to the maximum stable learning rate.
const ETA_SAFETY: f64 = 0.9;
/// Stop the 1-D search when no step of at least this size improves.
const SEARCH_TOLERANCE: f64 = 0.5;
/// Multi-start count for the 1-D search.
const MULTI_STARTS: usize = 8;

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("training failed during empirical grid search: {0}")]
    Engine(String),
}

/// Resource and privacy envelope shared by all devices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Budgets {
    /// Total resource budget C_th.
    pub resource: f64,
    /// Total privacy budget epsilon_th.
    pub epsilon: f64,
    /// Privacy failure probability delta.
    pub delta: f64,
    /// Communication cost per aggregation, c1.
    pub comm_cost: f64,
    /// Computation cost per local step, c2.
    pub comp_cost: f64,
}

impl Budgets {
    pub fn validate(&self) -> Result<(), PlanError> {
        if !(self.resource > 0.0 && self.resource.is_finite()) {
            return Err(PlanError::Config(format!("resource budget must be positive, got {}", self.resource)));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(PlanError::Config(format!("privacy budget must be positive, got {}", self.epsilon)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(PlanError::Config(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        if !(self.comm_cost >= 0.0 && self.comm_cost.is_finite()) {
            return Err(PlanError::Config(format!("communication cost must be non-negative, got {}", self.comm_cost)));
        }
        if !(self.comp_cost > 0.0 && self.comp_cost.is_finite()) {
            return Err(PlanError::Config(format!("computation cost must be positive, got {}", self.comp_cost)));
        }
        if self.resource < self.comm_cost + self.comp_cost {
            return Err(PlanError::Infeasible(format!(
                "resource budget {} cannot afford a single aggregated iteration (c1 + c2 = {})",
                self.resource,
                self.comm_cost + self.comp_cost
            )));
        }
        Ok(())
    }
}

/// Feasibility certificates attached to an emitted plan.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Feasibility {
    pub cost_within_budget: bool,
    pub privacy_tight: bool,
    pub learning_rate_ok: bool,
}

impl Feasibility {
    pub fn all(&self) -> bool {
        self.cost_within_budget && self.privacy_tight && self.learning_rate_ok
    }
}

/// Solver output: a full run configuration plus its predicted bound value.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Plan {
    pub tau: u32,
    pub iterations: u32,
    pub eta: f64,
    pub sigma: Vec<f64>,
    /// Predicted optimality-gap bound at this configuration.
    pub predicted_bound: f64,
    /// Per-device resource cost of the plan.
    pub cost: f64,
    pub feasibility: Feasibility,
}

impl Plan {
    /// Noise spec for handing the plan to the engine.
    pub fn noise_spec(&self, constants: &ProblemConstants) -> NoiseSpec {
        NoiseSpec {
            sigma: self.sigma.clone(),
            sensitivity: constants.batch_sizes.iter().map(|&x| 2.0 * constants.clip / x as f64).collect(),
        }
    }

    /// Assemble the engine configuration this plan prescribes.
    pub fn run_config(&self, constants: &ProblemConstants, budgets: &Budgets, seed: u64, eval_every: u32) -> RunConfig {
        RunConfig {
            tau: self.tau,
            iterations: self.iterations,
            eta: self.eta,
            noise: self.noise_spec(constants),
            clip: constants.clip,
            delta: budgets.delta,
            comm_cost: budgets.comm_cost,
            comp_cost: budgets.comp_cost,
            seed,
            eval_every,
            record_models: false,
        }
    }
}

/// Per-device resource cost of `k` iterations at aggregation period `tau`:
/// `c1 k / tau + c2 k`.
pub fn resource_cost(k: f64, tau: f64, comm_cost: f64, comp_cost: f64) -> f64 {
    assert!(tau >= 1.0, "aggregation period must be at least 1");
    assert!(k >= 0.0, "iteration count must be non-negative");
    comm_cost * k / tau + comp_cost * k
}

/// Largest learning rate satisfying `eta L + eta^2 L^2 tau (tau - 1) <= 1`:
/// the positive root of the quadratic for `tau >= 2`, `1/L` for `tau = 1`.
pub fn max_learning_rate(smoothness: f64, tau: f64) -> f64 {
    assert!(smoothness > 0.0, "smoothness constant must be positive");
    assert!(tau >= 1.0, "aggregation period must be at least 1");
    let t = tau * (tau - 1.0);
    if t == 0.0 {
        1.0 / smoothness
    } else {
        ((1.0 + 4.0 * t).sqrt() - 1.0) / (2.0 * smoothness * t)
    }
}

/// The learning rate the planner deploys for period `tau`: the stability
/// limit scaled by a safety factor. Because the curvature constant never
/// exceeds the smoothness constant, the result keeps `eta * lambda < 1`.
pub fn planned_eta(smoothness: f64, tau: f64) -> f64 {
    ETA_SAFETY * max_learning_rate(smoothness, tau)
}

/// The noise-amplification term of the convergence bound:
/// `B = (eta L + eta^2 L^2 (tau - 1) M) / (2 lambda M) * (xi^2 + (d/M) sum sigma_m^2)`.
pub fn bound_noise_term(constants: &ProblemConstants, eta: f64, tau: f64, sigma: &[f64]) -> f64 {
    let m = constants.device_count as f64;
    let l = constants.smoothness;
    let lambda = constants.strong_convexity;
    let noise_power = constants.dim as f64 / m * sigma.iter().map(|s| s * s).sum::<f64>();
    (eta * l + eta * eta * l * l * (tau - 1.0) * m) / (2.0 * lambda * m)
        * (constants.gradient_variance + noise_power)
}

/// The convergence-error bound after `k` iterations:
/// `F = (1 - eta lambda)^k (alpha - B) / k + B`.
pub fn bound_gap(constants: &ProblemConstants, eta: f64, tau: f64, k: f64, sigma: &[f64]) -> f64 {
    let lambda = constants.strong_convexity;
    assert!(eta * lambda > 0.0 && eta * lambda < 1.0, "eta * lambda must lie in (0, 1), got {}", eta * lambda);
    assert!(k >= 1.0, "iteration count must be at least 1");
    let b = bound_noise_term(constants, eta, tau, sigma);
    let decay = (1.0 - eta * lambda).powf(k);
    decay * (constants.initial_gap - b) / k + b
}

/// Budget-tight aggregation period for a (real) iteration count:
/// `tau* = c1 K / (C_th - c2 K)`. Substituted back into the cost model it
/// returns exactly `C_th`.
pub fn optimal_tau(k: f64, budgets: &Budgets) -> Result<f64, PlanError> {
    let slack = budgets.resource - budgets.comp_cost * k;
    if slack <= 0.0 {
        return Err(PlanError::Infeasible(format!(
            "iteration count {k} exhausts the resource budget on computation alone (C_th = {}, c2 = {})",
            budgets.resource, budgets.comp_cost
        )));
    }
    Ok(budgets.comm_cost * k / slack)
}

/// Budget-tight per-device noise for a (real) iteration count.
pub fn optimal_sigma(k: f64, constants: &ProblemConstants, budgets: &Budgets) -> Vec<f64> {
    constants
        .batch_sizes
        .iter()
        .map(|&x| calibrate_sigma(k, constants.clip, x as f64, budgets.epsilon, budgets.delta))
        .collect()
}

/// Interval of real iteration counts where the budget-tight period is at
/// least 1 and the cost constraint can hold: `[C_th/(c1+c2), C_th/c2)`.
pub fn feasible_k_interval(budgets: &Budgets) -> (f64, f64) {
    (
        budgets.resource / (budgets.comm_cost + budgets.comp_cost),
        budgets.resource / budgets.comp_cost,
    )
}

/// The relaxed objective as a function of the iteration count alone, with
/// the period and noise at their budget-tight values:
///
/// `alpha q + (1 - q) (eta L/(2 lambda M) + eta^2 L^2 (tau*-1)/(2 lambda))
///  (xi^2 + 2 K d G^2 Z / (M eps^2) sum 1/X_m^2)` with `q = (1-eta lambda)^K / K`.
///
/// Returns `None` outside the feasible interval so a projected search can
/// treat such points as infinitely bad rather than erroring.
pub fn objective_in_k(k: f64, constants: &ProblemConstants, budgets: &Budgets) -> Option<f64> {
    let (lo, hi) = feasible_k_interval(budgets);
    if !(k >= lo * (1.0 - 1e-12) && k < hi) || !k.is_finite() {
        return None;
    }
    Some(relaxed_objective(k, constants, budgets))
}

/// Eq.-of-one-variable evaluation shared by [`objective_in_k`] and the
/// solver. The budget-tight period is clamped at 1, which extends the
/// curve below `C_th/(c1+c2)` with the aggregate-every-step branch where
/// the cost constraint is slack.
fn relaxed_objective(k: f64, constants: &ProblemConstants, budgets: &Budgets) -> f64 {
    let tau = (budgets.comm_cost * k / (budgets.resource - budgets.comp_cost * k)).max(1.0);
    let l = constants.smoothness;
    let lambda = constants.strong_convexity;
    let m = constants.device_count as f64;
    let eta = planned_eta(l, tau);

    let log_inv_delta = (1.0 / budgets.delta).ln();
    let z = budgets.epsilon
        + 2.0 * log_inv_delta
        + 2.0 * (log_inv_delta * log_inv_delta + budgets.epsilon * log_inv_delta).sqrt();
    let inv_batch_sq: f64 = constants.batch_sizes.iter().map(|&x| 1.0 / (x as f64 * x as f64)).sum();
    let noise_power =
        2.0 * k * constants.dim as f64 * constants.clip * constants.clip * z / (m * budgets.epsilon * budgets.epsilon)
            * inv_batch_sq;

    let q = (1.0 - eta * lambda).powf(k) / k;
    let amplification = eta * l / (2.0 * lambda * m) + eta * eta * l * l * (tau - 1.0) / (2.0 * lambda);
    constants.initial_gap * q + (1.0 - q) * amplification * (constants.gradient_variance + noise_power)
}

/// Projected gradient descent with central finite differences, started
/// from equispaced and log-spaced interior points. Returns the best point
/// found. The log-spaced starts cover sharp minima near the left edge that
/// an equispaced grid would step over.
fn minimize_1d(f: &dyn Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
    if !(hi > lo) {
        return lo;
    }
    let span = hi - lo;
    let hi_interior = hi - span * 1e-9;
    let fd_step = (span * 1e-6).max(1e-9);
    let eval = |k: f64| {
        let v = f(k);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };

    let mut starts = vec![lo, hi_interior];
    let log_ratio = (hi_interior / lo.max(1e-9)).max(1.0);
    for i in 1..=MULTI_STARTS {
        let frac = i as f64 / (MULTI_STARTS + 1) as f64;
        starts.push(lo + span * frac);
        starts.push(lo.max(1e-9) * log_ratio.powf(frac));
    }

    let mut best_k = lo;
    let mut best_v = eval(lo);
    for &start in &starts {
        let mut k = start.clamp(lo, hi_interior);
        let mut fk = eval(k);
        for _ in 0..200 {
            let kp = (k + fd_step).min(hi_interior);
            let km = (k - fd_step).max(lo);
            let grad = (eval(kp) - eval(km)) / (kp - km);
            if !grad.is_finite() || grad == 0.0 {
                break;
            }
            let direction = -grad.signum();
            let mut displacement = span / 8.0;
            let mut moved = false;
            while displacement >= SEARCH_TOLERANCE {
                let cand = (k + direction * displacement).clamp(lo, hi_interior);
                let fc = eval(cand);
                if fc < fk {
                    k = cand;
                    fk = fc;
                    moved = true;
                    break;
                }
                displacement *= 0.5;
            }
            if !moved {
                break;
            }
        }
        if fk < best_v {
            best_v = fk;
            best_k = k;
        }
    }
    best_k
}

/// Build the full plan for an integer `(tau, rounds)` choice, with noise
/// recalibrated at the final integer iteration count.
fn plan_at(tau: u32, iterations: u32, constants: &ProblemConstants, budgets: &Budgets) -> Plan {
    let k = iterations as f64;
    let sigma = optimal_sigma(k, constants, budgets);
    let eta = planned_eta(constants.smoothness, tau as f64);
    let predicted_bound = bound_gap(constants, eta, tau as f64, k, &sigma);
    let cost = resource_cost(k, tau as f64, budgets.comm_cost, budgets.comp_cost);

    let privacy_tight = constants.batch_sizes.iter().zip(&sigma).all(|(&x, &s)| {
        let eps = total_epsilon(k, constants.clip, x as f64, s, budgets.delta);
        (eps - budgets.epsilon).abs() <= 1e-9 * budgets.epsilon
    });
    let residual = eta * constants.smoothness
        + eta * eta * constants.smoothness * constants.smoothness * tau as f64 * (tau as f64 - 1.0);
    Plan {
        tau,
        iterations,
        eta,
        sigma,
        predicted_bound,
        cost,
        feasibility: Feasibility {
            cost_within_budget: cost <= budgets.resource * (1.0 + 1e-12),
            privacy_tight,
            learning_rate_ok: residual <= 1.0 + 1e-12,
        },
    }
}

/// Most iterations affordable at period `tau`, as whole rounds.
fn max_rounds(tau: u32, budgets: &Budgets) -> u64 {
    (budgets.resource / (budgets.comm_cost + budgets.comp_cost * tau as f64)).floor() as u64
}

/// Choose `(tau, K, eta, sigma)` minimizing the convergence bound under
/// the budgets: 1-D minimization of the relaxed objective, nearest-integer
/// rounding, then feasibility repair (shrink K to a feasible multiple of
/// tau). Neighboring integer periods and the budget-exhausting iteration
/// count are also evaluated and the best kept.
///
/// The search domain is `[1, (C_th - c1)/c2]`: below `C_th/(c1+c2)` the
/// period clamps to 1 and the cost constraint goes slack, and the upper
/// cap keeps the budget-tight period no larger than K itself (at least one
/// full aggregation round must fit).
pub fn solve(constants: &ProblemConstants, budgets: &Budgets) -> Result<Plan, PlanError> {
    constants.validate()?;
    budgets.validate()?;
    if constants.batch_sizes.len() != constants.device_count {
        return Err(PlanError::Config("batch size list does not match device count".into()));
    }

    // Free communication degenerates the period parameterization: aggregate
    // every step and minimize over K alone.
    if budgets.comm_cost == 0.0 {
        let hi = budgets.resource / budgets.comp_cost;
        let objective = |k: f64| {
            let sigma = optimal_sigma(k, constants, budgets);
            bound_gap(constants, planned_eta(constants.smoothness, 1.0), 1.0, k, &sigma)
        };
        let k_star = minimize_1d(&objective, 1.0, hi);
        let k_final = (k_star.round() as u64).clamp(1, hi.floor() as u64) as u32;
        return Ok(plan_at(1, k_final, constants, budgets));
    }

    let k_cap = (budgets.resource - budgets.comm_cost) / budgets.comp_cost;
    let objective = |k: f64| relaxed_objective(k, constants, budgets);
    let k_star = minimize_1d(&objective, 1.0, k_cap);

    let k_round = k_star.round().clamp(1.0, k_cap.floor().max(1.0));
    let tau_star = optimal_tau(k_round, budgets)?.max(1.0);
    let tau_round = tau_star.round().max(1.0) as u32;

    let mut best: Option<Plan> = None;
    for tau in [tau_round.saturating_sub(1).max(1), tau_round, tau_round + 1] {
        let affordable = max_rounds(tau, budgets);
        if affordable == 0 {
            continue;
        }
        let near = ((k_round / tau as f64).floor() as u64).clamp(1, affordable);
        for rounds in [near.saturating_sub(1).max(1), near, (near + 1).min(affordable), affordable] {
            let iterations = (rounds * tau as u64) as u32;
            let plan = plan_at(tau, iterations, constants, budgets);
            if best.as_ref().map_or(true, |b| plan.predicted_bound < b.predicted_bound) {
                best = Some(plan);
            }
        }
    }

    // tau = 1 always affords at least one round once the budgets validate.
    Ok(best.unwrap_or_else(|| {
        let rounds = max_rounds(1, budgets).max(1);
        plan_at(1, rounds as u32, constants, budgets)
    }))
}

/// Exhaustive integer search over periods in `tau_range` and feasible
/// iteration counts (multiples of the period within the resource budget),
/// ranked by the predicted bound. The brute-force oracle for [`solve`].
pub fn grid_search_bound(
    constants: &ProblemConstants,
    budgets: &Budgets,
    tau_range: std::ops::RangeInclusive<u32>,
    k_grid: Option<&[u32]>,
) -> Result<Plan, PlanError> {
    constants.validate()?;
    budgets.validate()?;
    let mut best: Option<Plan> = None;
    for tau in tau_range {
        if tau < 1 {
            continue;
        }
        let affordable = max_rounds(tau, budgets);
        if affordable == 0 {
            continue;
        }
        let candidates: Vec<u32> = match k_grid {
            Some(grid) => grid
                .iter()
                .copied()
                .filter(|&k| k >= 1 && k % tau == 0 && (k as u64 / tau as u64) <= affordable)
                .collect(),
            None => (1..=affordable).map(|r| (r * tau as u64) as u32).collect(),
        };
        for k in candidates {
            let plan = plan_at(tau, k, constants, budgets);
            if best.as_ref().map_or(true, |b| plan.predicted_bound < b.predicted_bound) {
                best = Some(plan);
            }
        }
    }
    best.ok_or_else(|| PlanError::Infeasible("no feasible (tau, K) pair in the searched grid".into()))
}

/// One measured point of the empirical grid search.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EmpiricalGridPoint {
    pub tau: u32,
    pub iterations: u32,
    pub mean_val_accuracy: f64,
    pub std_val_accuracy: f64,
}

/// Empirical grid search: for each period, run training to the resource
/// budget with privacy-tight noise, repeated over `seeds`, and score the
/// best model's validation accuracy. Returns the winning plan and the full
/// table of measured points.
pub fn grid_search_empirical(
    fed: &Federation,
    kernel: &LossKernel,
    constants: &ProblemConstants,
    budgets: &Budgets,
    tau_range: std::ops::RangeInclusive<u32>,
    seeds: &[u64],
    eval_every: u32,
) -> Result<(Plan, Vec<EmpiricalGridPoint>), PlanError> {
    constants.validate()?;
    budgets.validate()?;
    if seeds.is_empty() {
        return Err(PlanError::Config("empirical grid search needs at least one seed".into()));
    }
    let mut points = Vec::new();
    let mut best: Option<(f64, Plan)> = None;
    for tau in tau_range {
        let affordable = max_rounds(tau.max(1), budgets);
        if affordable == 0 {
            continue;
        }
        let iterations = (affordable * tau.max(1) as u64) as u32;
        let plan = plan_at(tau.max(1), iterations, constants, budgets);
        let mut accuracies = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let cfg = plan.run_config(constants, budgets, seed, eval_every);
            let trace = run_dp_pasgd(fed, kernel, &cfg).map_err(|e| PlanError::Engine(e.to_string()))?;
            accuracies.push(mean_split_accuracy(kernel, fed, &trace.best.theta, SplitKind::Val));
        }
        let mean = accuracies.iter().sum::<f64>() / accuracies.len() as f64;
        let var = accuracies.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / accuracies.len() as f64;
        points.push(EmpiricalGridPoint {
            tau: tau.max(1),
            iterations,
            mean_val_accuracy: mean,
            std_val_accuracy: var.sqrt(),
        });
        if best.as_ref().map_or(true, |(acc, _)| mean > *acc) {
            best = Some((mean, plan));
        }
    }
    let (_, plan) = best.ok_or_else(|| PlanError::Infeasible("no feasible period in the searched grid".into()))?;
    Ok((plan, points))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand::Rng;

    fn test_constants() -> ProblemConstants {
        ProblemConstants {
            clip: 1.0,
            smoothness: 0.26,
            strong_convexity: 0.01,
            gradient_variance: 0.05,
            initial_gap: 0.69,
            dim: 50,
            device_count: 16,
            batch_sizes: vec![64; 16],
        }
    }

    fn paper_budgets() -> Budgets {
        Budgets { resource: 1000.0, epsilon: 10.0, delta: 1e-4, comm_cost: 100.0, comp_cost: 1.0 }
    }

    #[test]
    fn resource_cost_hand_values() {
        assert_eq!(resource_cost(0.0, 5.0, 100.0, 1.0), 0.0);
        assert_eq!(resource_cost(100.0, 10.0, 100.0, 1.0), 1100.0);
        // Strictly decreasing in tau at fixed K.
        let mut prev = f64::INFINITY;
        for tau in [1.0, 2.0, 5.0, 10.0, 50.0] {
            let c = resource_cost(100.0, tau, 100.0, 1.0);
            assert!(c < prev);
            prev = c;
        }
    }

    #[test]
    fn max_learning_rate_closed_forms() {
        assert!((max_learning_rate(2.0, 1.0) - 0.5).abs() < 1e-15);
        // tau = 2, L = 1: root of 2 eta^2 + eta - 1 = 0 is 0.5.
        assert!((max_learning_rate(1.0, 2.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn max_learning_rate_residual_at_limit() {
        for (l, tau) in [(0.26, 1.0), (0.26, 7.0), (3.0, 25.0), (0.01, 2.0)] {
            let eta = max_learning_rate(l, tau);
            let residual = eta * l + eta * eta * l * l * tau * (tau - 1.0);
            assert!(residual <= 1.0 + 1e-12, "residual {residual} at L={l}, tau={tau}");
            assert!(residual >= 1.0 - 1e-9, "root should sit on the constraint");
        }
    }

    #[test]
    fn planned_eta_keeps_curvature_product_below_one() {
        let c = test_constants();
        for tau in [1.0, 2.0, 10.0, 40.0] {
            let eta = planned_eta(c.smoothness, tau);
            assert!(eta * c.strong_convexity < 1.0);
            assert!(eta > 0.0);
        }
    }

    #[test]
    fn noise_term_reduces_to_sgd_form() {
        let c = test_constants();
        let eta = 0.1;
        let b = bound_noise_term(&c, eta, 1.0, &vec![0.0; 16]);
        let want = eta * c.smoothness * c.gradient_variance / (2.0 * c.strong_convexity * 16.0);
        assert!((b - want).abs() < 1e-15);
    }

    #[test]
    fn noise_term_quadratic_in_sigma() {
        let mut c = test_constants();
        c.gradient_variance = 0.0;
        let b1 = bound_noise_term(&c, 0.1, 5.0, &vec![0.3; 16]);
        let b2 = bound_noise_term(&c, 0.1, 5.0, &vec![0.6; 16]);
        assert!((b2 / b1 - 4.0).abs() < 1e-12);
    }

    #[test]
    fn noise_term_matches_independent_evaluation() {
        // Second straight-line transcription of the formula.
        let c = test_constants();
        let mut rng = stream(3, &[99]);
        for _ in 0..100 {
            let eta: f64 = rng.gen_range(0.001..0.5);
            let tau: f64 = rng.gen_range(1.0..40.0);
            let sigma: Vec<f64> = (0..c.device_count).map(|_| rng.gen_range(0.0..2.0)).collect();
            let m = c.device_count as f64;
            let sum_sq: f64 = sigma.iter().map(|s| s * s).sum();
            let expected = (eta * c.smoothness + eta * eta * c.smoothness * c.smoothness * (tau - 1.0) * m)
                / (2.0 * c.strong_convexity * m)
                * (c.gradient_variance + c.dim as f64 * sum_sq / m);
            let got = bound_noise_term(&c, eta, tau, &sigma);
            assert!((got - expected).abs() <= 1e-12 * expected.abs().max(1.0));
        }
    }

    #[test]
    fn gap_bound_approaches_noise_term() {
        let c = test_constants();
        let sigma = vec![0.2; 16];
        let eta = planned_eta(c.smoothness, 5.0);
        let b = bound_noise_term(&c, eta, 5.0, &sigma);
        let f = bound_gap(&c, eta, 5.0, 1e7, &sigma);
        assert!((f - b).abs() < 1e-9 * b);
    }

    #[test]
    fn gap_bound_increases_in_tau_and_sigma() {
        let c = test_constants();
        let mut rng = stream(4, &[98]);
        for _ in 0..100 {
            let tau: f64 = rng.gen_range(1.0..30.0);
            let k: f64 = rng.gen_range(5.0..500.0);
            let eta = planned_eta(c.smoothness, tau + 1.0);
            let sigma: Vec<f64> = (0..16).map(|_| rng.gen_range(0.01..1.0)).collect();
            let h = 1e-4;
            let up = bound_gap(&c, eta, tau + h, k, &sigma);
            let down = bound_gap(&c, eta, tau - h.min(tau - 1.0), k, &sigma);
            assert!(up > down, "bound must increase in tau");

            let mut sigma_up = sigma.clone();
            sigma_up[3] = (sigma_up[3] * sigma_up[3] + 1e-6).sqrt();
            assert!(bound_gap(&c, eta, tau, k, &sigma_up) > bound_gap(&c, eta, tau, k, &sigma));
        }
    }

    #[test]
    fn optimal_tau_hand_values() {
        let b = Budgets { resource: 1010.0, epsilon: 10.0, delta: 1e-4, comm_cost: 100.0, comp_cost: 1.0 };
        assert!((optimal_tau(10.0, &b).unwrap() - 1.0).abs() < 1e-12);
        let b = paper_budgets();
        assert!((optimal_tau(500.0, &b).unwrap() - 100.0).abs() < 1e-12);
        // Substituting tau* back into the cost model returns C_th exactly.
        for k in [10.0, 123.4, 600.0, 999.0] {
            let tau = optimal_tau(k, &b).unwrap().max(1.0);
            if tau > 1.0 {
                let cost = resource_cost(k, tau, b.comm_cost, b.comp_cost);
                assert!((cost - b.resource).abs() <= 1e-12 * b.resource);
            }
        }
    }

    #[test]
    fn optimal_tau_rejects_exhausted_budget() {
        let b = paper_budgets();
        assert!(optimal_tau(1000.0, &b).is_err());
    }

    #[test]
    fn objective_matches_composed_bound() {
        let c = test_constants();
        let b = paper_budgets();
        let (lo, hi) = feasible_k_interval(&b);
        for i in 0..50 {
            let k = lo + (hi - lo) * (i as f64 + 0.5) / 51.0;
            let direct = objective_in_k(k, &c, &b).unwrap();
            let tau = optimal_tau(k, &b).unwrap().max(1.0);
            let sigma = optimal_sigma(k, &c, &b);
            let eta = planned_eta(c.smoothness, tau);
            let composed = bound_gap(&c, eta, tau, k, &sigma);
            assert!(
                (direct - composed).abs() <= 1e-10 * composed.abs().max(1e-300),
                "k={k}: {direct} vs {composed}"
            );
        }
    }

    #[test]
    fn objective_outside_interval_is_none() {
        let c = test_constants();
        let b = paper_budgets();
        let (lo, hi) = feasible_k_interval(&b);
        assert!(objective_in_k(lo - 1.0, &c, &b).is_none());
        assert!(objective_in_k(hi + 1.0, &c, &b).is_none());
        assert!(objective_in_k(lo, &c, &b).is_some());
    }

    #[test]
    fn objective_finite_positive_over_interval() {
        let c = test_constants();
        let b = paper_budgets();
        let (lo, hi) = feasible_k_interval(&b);
        for i in 0..200 {
            let k = lo + (hi - lo) * (i as f64 + 0.5) / 201.0;
            let v = objective_in_k(k, &c, &b).unwrap();
            assert!(v.is_finite() && v > 0.0, "objective {v} at k={k}");
        }
    }

    #[test]
    fn solve_emits_feasible_plan() {
        let c = test_constants();
        let b = paper_budgets();
        let plan = solve(&c, &b).unwrap();
        assert!(plan.feasibility.all(), "{:?}", plan.feasibility);
        assert_eq!(plan.iterations % plan.tau, 0);
        assert!(plan.cost <= b.resource * (1.0 + 1e-12));
        for (&x, &s) in c.batch_sizes.iter().zip(&plan.sigma) {
            let eps = total_epsilon(plan.iterations as f64, c.clip, x as f64, s, b.delta);
            assert!((eps - b.epsilon).abs() <= 1e-9 * b.epsilon);
        }
    }

    #[test]
    fn solve_close_to_grid_oracle_on_paper_defaults() {
        let c = test_constants();
        let b = paper_budgets();
        let plan = solve(&c, &b).unwrap();
        let oracle = grid_search_bound(&c, &b, 1..=50, None).unwrap();
        assert!(
            plan.predicted_bound <= 1.05 * oracle.predicted_bound,
            "solve {} vs grid {}",
            plan.predicted_bound,
            oracle.predicted_bound
        );
    }

    #[test]
    fn grid_singleton_returns_that_point() {
        let c = test_constants();
        let b = paper_budgets();
        let plan = grid_search_bound(&c, &b, 10..=10, Some(&[80])).unwrap();
        assert_eq!(plan.tau, 10);
        assert_eq!(plan.iterations, 80);
    }

    #[test]
    fn infeasible_budget_names_constraint() {
        let c = test_constants();
        let b = Budgets { resource: 50.0, epsilon: 10.0, delta: 1e-4, comm_cost: 100.0, comp_cost: 1.0 };
        match solve(&c, &b) {
            Err(PlanError::Infeasible(msg)) => assert!(msg.contains("resource budget"), "{msg}"),
            other => panic!("expected infeasibility, got {other:?}"),
        }
    }

    #[test]
    fn free_communication_plans_period_one() {
        let c = test_constants();
        let b = Budgets { resource: 500.0, epsilon: 4.0, delta: 1e-4, comm_cost: 0.0, comp_cost: 1.0 };
        let plan = solve(&c, &b).unwrap();
        assert_eq!(plan.tau, 1);
        assert!(plan.feasibility.all());
    }

    #[test]
    fn budget_slack_is_small_or_justified() {
        let c = test_constants();
        for (cth, eps) in [(500.0, 1.0), (500.0, 10.0), (1000.0, 1.0), (1000.0, 4.0), (1000.0, 10.0)] {
            let b = Budgets { resource: cth, epsilon: eps, delta: 1e-4, comm_cost: 100.0, comp_cost: 1.0 };
            let plan = solve(&c, &b).unwrap();
            let slack = b.resource - plan.cost;
            let margin = b.comm_cost / plan.tau as f64 + b.comp_cost + b.comm_cost;
            if slack >= margin {
                // Leaving budget unused must be justified by the bound: one
                // more round at the same period must not predict better.
                let longer = plan_at(plan.tau, plan.iterations + plan.tau, &c, &b);
                assert!(longer.cost <= b.resource, "slack {slack} at C={cth} eps={eps} but no extra round fits");
                assert!(
                    longer.predicted_bound >= plan.predicted_bound,
                    "unused budget with a better longer run at C={cth} eps={eps}: {} vs {}",
                    longer.predicted_bound,
                    plan.predicted_bound
                );
            }
        }
    }
}
