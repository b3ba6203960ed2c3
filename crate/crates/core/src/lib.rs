//! Simulator and configuration planner for differentially private
//! federated learning with periodic model averaging.
//!
//! Devices take `tau` local noisy SGD steps between global averages; the
//! accountant tracks the zCDP cost of every noisy gradient release; and
//! the planner picks `(tau, K, eta, sigma)` by minimizing a convergence
//! bound subject to per-device resource and privacy budgets.
//!
//! Modules:
//! - [`datasets`]: CSV ingestion, unit-ball normalization, device
//!   partitioning, and train/val/test splits.
//! - [`models`]: logistic and hinge kernels, per-sample clipping, and
//!   constant estimation.
//! - [`privacy`]: the zCDP accountant and noise calibration.
//! - [`engine`]: the deterministic training simulator.
//! - [`planner`]: cost model, convergence bound, and the budget solver.
//! - [`synth`]: deterministic synthetic fixture corpora.
//! - [`rng`]: counter-based deterministic random streams.

pub mod datasets;
pub mod engine;
pub mod models;
pub mod planner;
pub mod privacy;
pub mod rng;
pub mod synth;

pub use datasets::{CsvSchema, DeviceDataset, Federation, FederationSpec, PartitionMode, Sample};
pub use engine::{run_dp_pasgd, run_dp_sgd_baseline, RunConfig, TrainTrace};
pub use models::{estimate_constants, LossKernel, ProbeConfig, ProblemConstants};
pub use planner::{solve, Budgets, Plan};
pub use privacy::NoiseSpec;
