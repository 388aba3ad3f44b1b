//! Balance and positivity diagnostics: the permutation test for a feasible
//! policy scale, effective sample size, τ-sweep orchestration, and the
//! error decomposition available when the true mean function is known.

use ndarray::ArrayView1;
use rayon::prelude::*;
use serde::Serialize;

use crate::balance::Weights;
use crate::data::Dataset;
use crate::energy::{
    build_gram, relabeled_statistic, weighted_energy_distance, BalanceGram, KernelKind,
};
use crate::error::{Error, Result};
use crate::estimate::{
    quantile_sorted, run_replicates, Pipeline, PolicyEffectEstimate, Recipe, WeightMethod,
};
use crate::policy::{Policy, ShiftedSample};
use crate::rng::stream_rng;
use crate::sensitivity::{largest_significant_lambda_cached, LambdaStar};

/// Result of the permutation test for residual imbalance.
///
/// The null hypothesis is that the weighted observed population equals the
/// policy-shifted target population; `pass` means the weighted statistic is
/// within the sampling variability seen under row-wise relabeling.
#[derive(Debug, Clone, Serialize)]
pub struct BalanceDiagnostic {
    /// Post-weighting balance statistic.
    pub observed_stat: f64,
    /// Empirical (1−α) quantile of the null statistics.
    pub threshold: f64,
    pub alpha: f64,
    pub n_perm: usize,
    pub pass: bool,
}

/// Permutation test: each null replicate independently swaps, per row, which
/// of the two versions (observed or shifted) lands in each pseudo-population
/// and recomputes the unweighted statistic between the relabeled samples.
pub fn permutation_balance_test(
    d: &Dataset,
    w: &Weights,
    g: &BalanceGram,
    n_perm: usize,
    alpha: f64,
    seed: u64,
) -> Result<BalanceDiagnostic> {
    if n_perm < 100 {
        return Err(Error::InvalidConfig(format!(
            "n_perm must be at least 100, got {n_perm}"
        )));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "alpha must be in (0,1), got {alpha}"
        )));
    }
    if g.n() != d.n() || w.n() != d.n() {
        return Err(Error::DimensionMismatch(format!(
            "gram has {} rows, weights {}, dataset {}",
            g.n(),
            w.n(),
            d.n()
        )));
    }
    let observed_stat = weighted_energy_distance(g, &w.w.view())?.value;
    let n = d.n();
    let null_stats: Result<Vec<f64>> = (0..n_perm)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream_rng(seed, 0x9e21, r as u64);
            let swaps: Vec<bool> = (0..n)
                .map(|_| rand::RngCore::next_u64(&mut rng) & 1 == 1)
                .collect();
            relabeled_statistic(g, &swaps)
        })
        .collect();
    let mut null_stats = null_stats?;
    null_stats.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let threshold = quantile_sorted(&null_stats, 1.0 - alpha);
    Ok(BalanceDiagnostic {
        observed_stat,
        threshold,
        alpha,
        n_perm,
        pass: observed_stat <= threshold,
    })
}

/// (Σw)²/Σw².
pub fn effective_sample_size(w: &Weights) -> f64 {
    w.ess()
}

/// The three additive parts of the weighted estimator's error against a
/// known truth (simulation use only).
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ErrorDecomposition {
    /// (1/n)Σ wᵢμ(Xᵢ,Aᵢ) − (1/n)Σ μ(Xᵢ,q(Xᵢ,Aᵢ)).
    pub confounding_error: f64,
    /// (1/n)Σ μ(Xᵢ,q(Xᵢ,Aᵢ)) − μ^q.
    pub sampling_error: f64,
    /// (1/n)Σ wᵢεᵢ.
    pub noise_term: f64,
}

impl ErrorDecomposition {
    pub fn total(&self) -> f64 {
        self.confounding_error + self.sampling_error + self.noise_term
    }
}

pub fn error_decomposition<F>(
    d: &Dataset,
    s: &ShiftedSample,
    w: &Weights,
    true_mu: F,
    mu_q_true: f64,
) -> Result<ErrorDecomposition>
where
    F: Fn(ArrayView1<f64>, ArrayView1<f64>) -> f64,
{
    if s.n() != d.n() || w.n() != d.n() {
        return Err(Error::DimensionMismatch(
            "dataset, shifted sample and weights must agree on n".into(),
        ));
    }
    let n = d.n();
    let nf = n as f64;
    let mut w_mu_obs = 0.0;
    let mut mu_shift_mean = 0.0;
    let mut noise = 0.0;
    for i in 0..n {
        let mu_obs = true_mu(d.x().row(i), d.a().row(i));
        let mu_shift = true_mu(d.x().row(i), s.a_shifted().row(i));
        w_mu_obs += w.w[i] * mu_obs;
        mu_shift_mean += mu_shift;
        noise += w.w[i] * (d.y()[i] - mu_obs);
    }
    w_mu_obs /= nf;
    mu_shift_mean /= nf;
    noise /= nf;
    Ok(ErrorDecomposition {
        confounding_error: w_mu_obs - mu_shift_mean,
        sampling_error: mu_shift_mean - mu_q_true,
        noise_term: noise,
    })
}

/// Per-τ record of a sweep; exactly one of `outcome` or `error` is set.
#[derive(Debug, Clone, Serialize)]
pub struct TauSweepRow {
    pub tau: f64,
    pub estimate: Option<PolicyEffectEstimate>,
    pub diagnostic: Option<BalanceDiagnostic>,
    pub lambda_star: Option<LambdaStar>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TauSweep {
    pub rows: Vec<TauSweepRow>,
}

/// Budgets for the per-τ computations of a sweep.
#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub n_boot: usize,
    pub n_perm: usize,
    pub alpha: f64,
    pub lambda_max: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            n_boot: 1000,
            n_perm: 500,
            alpha: 0.10,
            lambda_max: 5.0,
        }
    }
}

/// Estimate, balance-test, and Λ*-search across a τ grid.
///
/// Per-τ failures are recorded in the row and the sweep continues. The
/// bootstrap replicates computed for the interval are reused for the Λ*
/// search, so one bootstrap pays for both.
pub fn tau_sweep<F>(
    d: &Dataset,
    family: F,
    taus: &[f64],
    recipe: &Recipe,
    cfg: &SweepConfig,
    seed: u64,
) -> Result<TauSweep>
where
    F: Fn(f64) -> Result<Policy>,
{
    if taus.is_empty() {
        return Err(Error::InvalidConfig("empty tau grid".into()));
    }
    if taus.windows(2).any(|p| p[1] <= p[0]) {
        return Err(Error::InvalidConfig(
            "tau grid must be strictly increasing".into(),
        ));
    }
    if taus.iter().any(|&t| !(t > 0.0)) {
        return Err(Error::InvalidConfig("all taus must be > 0".into()));
    }
    let rows = taus
        .iter()
        .enumerate()
        .map(|(i, &tau)| {
            let tau_seed = crate::rng::derive_seed(seed, 0x7a_13, i as u64);
            match sweep_one(d, &family, tau, recipe, cfg, tau_seed) {
                Ok((est, diag, star)) => TauSweepRow {
                    tau,
                    estimate: Some(est),
                    diagnostic: Some(diag),
                    lambda_star: Some(star),
                    error: None,
                },
                Err(e) => TauSweepRow {
                    tau,
                    estimate: None,
                    diagnostic: None,
                    lambda_star: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    Ok(TauSweep { rows })
}

fn sweep_one<F>(
    d: &Dataset,
    family: &F,
    tau: f64,
    recipe: &Recipe,
    cfg: &SweepConfig,
    seed: u64,
) -> Result<(PolicyEffectEstimate, BalanceDiagnostic, LambdaStar)>
where
    F: Fn(f64) -> Result<Policy>,
{
    let policy = family(tau)?;
    let pipeline = Pipeline::new(d, &policy, recipe, seed)?;
    let full = pipeline.fit_full()?;
    let reps = run_replicates(&pipeline, cfg.n_boot, seed)?;
    let est = crate::estimate::summarize_bootstrap(&pipeline, &full, reps.clone(), cfg.n_boot, recipe.level)?;

    // diagnostics always need a Gram; reuse the pipeline's when the weights
    // are energy-based, otherwise build a Euclidean one
    let owned_gram;
    let gram = match pipeline.gram() {
        Some(g) => g,
        None => {
            let kind = match recipe.weight_method {
                WeightMethod::Energy(k) => k,
                _ => KernelKind::EuclideanEnergy,
            };
            owned_gram = build_gram(d, pipeline.shifted(), kind, None)?.0;
            &owned_gram
        }
    };
    let diag = permutation_balance_test(
        d,
        pipeline.full_weights(),
        gram,
        cfg.n_perm,
        cfg.alpha,
        crate::rng::derive_seed(seed, 0x9e22, 0),
    )?;
    let star = largest_significant_lambda_cached(&full, &reps, cfg.lambda_max, recipe.level)?;
    Ok((est, diag, star))
}

impl TauSweep {
    /// Plot-ready CSV: one row per τ with estimate, interval, permutation
    /// statistics and Λ*. Failed τ rows keep their grid position with empty
    /// value fields.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("# schema_version: 1\n");
        out.push_str("tau,estimate,ci_lo,ci_hi,observed_stat,threshold,pass,lambda_star\n");
        for row in &self.rows {
            let tau = format!("{}", row.tau);
            match (&row.estimate, &row.diagnostic, &row.lambda_star) {
                (Some(est), Some(diag), Some(star)) => {
                    out.push_str(&format!(
                        "{},{},{},{},{},{},{},{}\n",
                        tau,
                        est.mu_q_hat,
                        est.ci_low,
                        est.ci_high,
                        diag.observed_stat,
                        diag.threshold,
                        diag.pass,
                        star.value
                    ));
                }
                _ => {
                    out.push_str(&format!("{tau},,,,,,,\n"));
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::balance::uniform_weights;
    use ndarray::Array1;
    use crate::energy::build_gram_from_points;
    use crate::estimate::EstimatorKind;
    use crate::policy::{builtin_policy, shift_dataset, PolicyLayout};
    use crate::rng::stream_rng;
    use ndarray::{Array2, Axis};
    use rand::Rng;

    fn random_dataset(n: usize, seed: u64) -> Dataset {
        let mut rng = stream_rng(seed, 0, 0);
        let x = Array2::from_shape_fn((n, 2), |_| 2.0 * rng.random::<f64>() - 1.0);
        let a = Array2::from_shape_fn((n, 1), |_| 1.0 + rng.random::<f64>());
        let y = Array1::from_shape_fn(n, |i| a[[i, 0]] + 0.2 * rng.random::<f64>());
        Dataset::from_parts(x, a, y).unwrap()
    }

    #[test]
    fn identity_policy_passes_with_zero_statistic() {
        let d = random_dataset(30, 1);
        let s = shift_dataset(&Policy::identity(1), &d).unwrap();
        let (g, _) = build_gram(&d, &s, KernelKind::EuclideanEnergy, None).unwrap();
        let w = uniform_weights(30);
        let diag = permutation_balance_test(&d, &w, &g, 100, 0.10, 3).unwrap();
        assert!(diag.observed_stat.abs() <= 1e-12);
        assert!(diag.pass);
    }

    #[test]
    fn extreme_shift_fails_the_test() {
        let d = random_dataset(60, 2);
        let policy = Policy::scale("x10", vec![10.0]).unwrap();
        let s = shift_dataset(&policy, &d).unwrap();
        let (g, _) = build_gram(&d, &s, KernelKind::EuclideanEnergy, None).unwrap();
        let recipe = Recipe {
            weight_method: WeightMethod::Energy(KernelKind::EuclideanEnergy),
            estimator: EstimatorKind::Weighted,
            ..Default::default()
        };
        let pipeline = Pipeline::new(&d, &policy, &recipe, 4).unwrap();
        let diag =
            permutation_balance_test(&d, pipeline.full_weights(), &g, 200, 0.10, 5).unwrap();
        assert!(!diag.pass, "shift of 10x should exceed the threshold");
    }

    #[test]
    fn threshold_deterministic_and_monotone_in_alpha() {
        let d = random_dataset(25, 6);
        let policy = Policy::scale("s", vec![0.9]).unwrap();
        let s = shift_dataset(&policy, &d).unwrap();
        let (g, _) = build_gram(&d, &s, KernelKind::GaussianMmd, None).unwrap();
        let w = uniform_weights(25);
        let d1 = permutation_balance_test(&d, &w, &g, 150, 0.10, 7).unwrap();
        let d2 = permutation_balance_test(&d, &w, &g, 150, 0.10, 7).unwrap();
        assert_eq!(d1.threshold.to_bits(), d2.threshold.to_bits());
        let d5 = permutation_balance_test(&d, &w, &g, 150, 0.05, 7).unwrap();
        assert!(d5.threshold >= d1.threshold);
    }

    #[test]
    fn ess_matches_hand_values() {
        let u = uniform_weights(8);
        assert!((effective_sample_size(&u) - 8.0).abs() < 1e-12);
        let mut w = uniform_weights(2);
        w.w = ndarray::array![2.0, 0.0];
        assert!((effective_sample_size(&w) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn error_decomposition_sums_to_total_error() {
        let d = random_dataset(50, 8);
        let policy = Policy::scale("s", vec![0.85]).unwrap();
        let s = shift_dataset(&policy, &d).unwrap();
        let mut rng = stream_rng(9, 0, 0);
        let mut w = uniform_weights(50);
        w.w = Array1::from_shape_fn(50, |_| 0.5 + rng.random::<f64>());
        let total: f64 = w.w.sum();
        w.w.mapv_inplace(|v| v * 50.0 / total);
        let mu = |_x: ArrayView1<f64>, a: ArrayView1<f64>| a[0] * 2.0;
        let mu_q_true = 1.7;
        let dec = error_decomposition(&d, &s, &w, mu, mu_q_true).unwrap();
        let est = w.w.dot(d.y()) / 50.0;
        assert!(
            ((est - mu_q_true) - dec.total()).abs() < 1e-10,
            "decomposition must sum to the estimator error"
        );
    }

    #[test]
    fn identity_policy_has_zero_confounding_error() {
        let d = random_dataset(40, 10);
        let s = shift_dataset(&Policy::identity(1), &d).unwrap();
        let w = uniform_weights(40);
        let mu = |x: ArrayView1<f64>, a: ArrayView1<f64>| x[0] + 3.0 * a[0];
        let dec = error_decomposition(&d, &s, &w, mu, 0.0).unwrap();
        assert_eq!(dec.confounding_error, 0.0);
    }

    #[test]
    fn sweep_has_zero_effect_at_tau_one() {
        let mut rng = stream_rng(11, 0, 0);
        let n = 40;
        let x = Array2::from_shape_fn((n, 1), |_| rng.random::<f64>());
        let a = Array2::from_shape_fn((n, 5), |_| 10.0 + 5.0 * rng.random::<f64>());
        let y = Array1::from_shape_fn(n, |i| a[[i, 1]] * 0.3 + 0.1 * rng.random::<f64>());
        let d = Dataset::from_parts(x, a, y).unwrap();
        let layout = PolicyLayout {
            rr: Some(0),
            vt: Some(1),
            p_peak: Some(2),
            p_plateau: Some(3),
            peep: Some(4),
            dp: None,
        };
        let recipe = Recipe {
            weight_method: WeightMethod::Energy(KernelKind::EuclideanEnergy),
            estimator: EstimatorKind::Weighted,
            ..Default::default()
        };
        let cfg = SweepConfig {
            n_boot: 50,
            n_perm: 100,
            ..Default::default()
        };
        let sweep = tau_sweep(
            &d,
            |tau| builtin_policy("q1", tau, &layout, 5),
            &[0.9, 1.0, 1.1],
            &recipe,
            &cfg,
            13,
        )
        .unwrap();
        assert_eq!(sweep.rows.len(), 3);
        for row in &sweep.rows {
            assert!(row.error.is_none(), "{:?}", row.error);
        }
        let mid = sweep.rows[1].estimate.as_ref().unwrap();
        assert!(mid.effect.abs() < 1e-6, "effect at tau=1: {}", mid.effect);
        let csv = sweep.to_csv();
        assert!(csv.starts_with("# schema_version: 1\n"));
        assert_eq!(csv.lines().count(), 2 + 3);
    }

    #[test]
    fn sweep_records_per_tau_failures_and_continues() {
        let d = random_dataset(30, 14);
        let recipe = Recipe {
            weight_method: WeightMethod::Energy(KernelKind::EuclideanEnergy),
            estimator: EstimatorKind::Weighted,
            ..Default::default()
        };
        let cfg = SweepConfig {
            n_boot: 50,
            n_perm: 100,
            ..Default::default()
        };
        // the family rejects the middle τ
        let sweep = tau_sweep(
            &d,
            |tau| {
                if (tau - 1.0).abs() < 1e-12 {
                    Err(Error::InvalidConfig("unsupported tau".into()))
                } else {
                    Policy::scale("s", vec![tau])
                }
            },
            &[0.9, 1.0, 1.1],
            &recipe,
            &cfg,
            15,
        )
        .unwrap();
        assert!(sweep.rows[0].error.is_none());
        assert!(sweep.rows[1].error.is_some());
        assert!(sweep.rows[2].error.is_none());
        let csv = sweep.to_csv();
        let failed_line = csv.lines().nth(3).unwrap();
        assert!(failed_line.starts_with("1,"));
        assert!(failed_line.ends_with(",,,,,,"));
    }

    #[test]
    fn sweep_serialization_deterministic() {
        let d = random_dataset(25, 16);
        let recipe = Recipe {
            weight_method: WeightMethod::Energy(KernelKind::GaussianMmd),
            estimator: EstimatorKind::Weighted,
            ..Default::default()
        };
        let cfg = SweepConfig {
            n_boot: 50,
            n_perm: 100,
            ..Default::default()
        };
        let family = |tau: f64| Policy::scale("s", vec![tau]);
        let s1 = tau_sweep(&d, family, &[0.95, 1.05], &recipe, &cfg, 17).unwrap();
        let s2 = tau_sweep(&d, family, &[0.95, 1.05], &recipe, &cfg, 17).unwrap();
        assert_eq!(s1.to_csv(), s2.to_csv());
    }

    #[test]
    fn relabeled_nulls_respect_gram_symmetry() {
        // spot check that the permutation machinery sees the same statistic
        // when pseudo-populations are rebuilt explicitly
        let d = random_dataset(12, 18);
        let policy = Policy::scale("s", vec![0.8]).unwrap();
        let s = shift_dataset(&policy, &d).unwrap();
        let obs = d.joint();
        let sh = s.joint(&d);
        let g = build_gram_from_points(
            &obs.view(),
            &sh.view(),
            KernelKind::EuclideanEnergy,
            None,
        )
        .unwrap();
        let mut rng = stream_rng(19, 0, 0);
        let swaps: Vec<bool> = (0..12).map(|_| rng.random::<f64>() < 0.5).collect();
        let got = relabeled_statistic(&g, &swaps).unwrap();
        let mut c = obs.clone();
        let mut e = sh.clone();
        for (i, &flag) in swaps.iter().enumerate() {
            if flag {
                let tmp = c.index_axis(Axis(0), i).to_owned();
                c.row_mut(i).assign(&sh.row(i));
                e.row_mut(i).assign(&tmp);
            }
        }
        let gq = build_gram_from_points(&c.view(), &e.view(), KernelKind::EuclideanEnergy, None)
            .unwrap();
        let want = weighted_energy_distance(&gq, &Array1::ones(12).view())
            .unwrap()
            .value;
        assert!((got - want).abs() < 1e-12);
    }
}
