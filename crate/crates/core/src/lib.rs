//! Causal-effect estimation for modified vector-valued treatment policies.
//!
//! The crate estimates the mean potential outcome μ^q under a deterministic
//! modification q(x, a) of a vector-valued continuous treatment, using
//! energy-balancing weights (Euclidean energy distance or Gaussian-kernel
//! MMD), an augmented estimator with outcome regression, nonparametric
//! bootstrap intervals, balance and positivity diagnostics, marginal
//! sensitivity analysis, and a plasmode simulation harness for benchmarking
//! the estimators against each other.
//!
//! Modules follow the pipeline:
//!
//! * [`data`] — ingestion, validation, standardization, resampling.
//! * [`policy`] — treatment modification policies and ventilation helpers.
//! * [`energy`] — the balance statistics and their Gram caches.
//! * [`balance`] — weight solvers (penalized energy QP, comparators).
//! * [`outcome`] — outcome-regression models for augmentation.
//! * [`estimate`] — point estimates and bootstrap intervals.
//! * [`diagnose`] — permutation balance test, ESS, τ sweeps.
//! * [`sensitivity`] — marginal sensitivity bounds and Λ* search.
//! * [`plasmode`] — simulation data generator and estimator benchmark.

pub mod balance;
pub mod data;
pub mod diagnose;
pub mod energy;
pub mod error;
pub mod estimate;
mod linalg;
pub mod outcome;
pub mod plasmode;
pub mod policy;
pub mod rng;
pub mod sensitivity;

pub use balance::{
    classification_weights, project_scaled_simplex, solve_energy_weights, uniform_weights,
    SolverConfig, StepRule, Weights,
};
pub use data::{jitter_treatments, load_csv, resample_with_replacement, Dataset, Schema, Standardizer};
pub use diagnose::{
    effective_sample_size, error_decomposition, permutation_balance_test, tau_sweep,
    BalanceDiagnostic, ErrorDecomposition, SweepConfig, TauSweep, TauSweepRow,
};
pub use energy::{
    build_gram, build_gram_from_points, energy_gradient, weighted_energy_distance, BalanceGram,
    EnergyStat, KernelKind,
};
pub use error::{Error, Result};
pub use estimate::{
    augmented_estimate, augmented_estimate_from_predictions, bootstrap_ci,
    crossfit_predictions, make_augmented_population, weighted_estimate, AugmentedPopulation,
    EstimatorKind, Pipeline, PolicyEffectEstimate, Recipe, ReplicateFit, WeightMethod,
};
pub use outcome::{fit as fit_outcome_model, OutcomeConfig, OutcomeModel, OutcomeModelKind};
pub use plasmode::{
    generate_dataset, plasmode_mu, plasmode_policy, plasmode_truth, run_benchmark,
    synthetic_source, BenchmarkConfig, CellResult, EstimatorSpec, PlasmodeConfig, PlasmodeTruth,
    SimulationReport,
};
pub use policy::{
    builtin_policy, mechanical_power, shift_dataset, Block, Policy, PolicyLayout, ShiftedSample,
    VentSettings,
};
pub use sensitivity::{
    effect_bounds, extremal_bounds, largest_significant_lambda, sensitivity_curve, LambdaStar,
    LambdaStarFlag, SensitivityCurve,
};
