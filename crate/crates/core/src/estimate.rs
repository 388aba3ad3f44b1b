//! Point estimation of μ^q and the policy effect, with nonparametric
//! bootstrap intervals.
//!
//! The weighted estimator is (1/n)Σ wᵢYᵢ; the augmented estimator adds an
//! outcome-regression plug-in and uses the weights only on residuals:
//!
//! ```text
//!   μ̂_AG = (1/n)Σ wᵢ(Yᵢ − μ̂(Xᵢ,Aᵢ)) + (1/n)Σ μ̂(Xᵢ, q(Xᵢ,Aᵢ))
//! ```
//!
//! Bootstrap intervals re-run the whole pipeline per replicate: rows are
//! resampled in pairs, weights re-solved (Gram entries are gathered from the
//! full-sample cache) and the outcome model refit. Replicates are indexed
//! streams, so results are independent of thread count.

use ndarray::{Array1, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::balance::{
    classification_weights, solve_energy_weights, uniform_weights, SolverConfig, Weights,
};
use crate::data::{resample_indices, Dataset};
use crate::energy::{build_gram, BalanceGram, KernelKind};
use crate::error::{Error, Result};
use crate::outcome::{fit, fold_assignment, OutcomeConfig, OutcomeModel, OutcomeModelKind};
use crate::policy::{shift_dataset, Policy, ShiftedSample};
use crate::rng::{derive_seed, stream_rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorKind {
    Weighted,
    Augmented,
}

/// How the balancing weights are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightMethod {
    /// All-ones weights (the unadjusted comparator).
    Uniform,
    /// Logistic-regression classification odds on the augmented population.
    ClassificationLogistic,
    /// Energy balancing with the given statistic.
    Energy(KernelKind),
}

impl WeightMethod {
    pub fn id(&self) -> &'static str {
        match self {
            WeightMethod::Uniform => "uniform",
            WeightMethod::ClassificationLogistic => "classification-logistic",
            WeightMethod::Energy(KernelKind::EuclideanEnergy) => "energy-penalized",
            WeightMethod::Energy(KernelKind::GaussianMmd) => "energy-kernel",
        }
    }

    pub fn parse(s: &str) -> Result<WeightMethod> {
        Ok(match s {
            "uniform" => WeightMethod::Uniform,
            "classification-logistic" => WeightMethod::ClassificationLogistic,
            "energy-penalized" => WeightMethod::Energy(KernelKind::EuclideanEnergy),
            "energy-kernel" => WeightMethod::Energy(KernelKind::GaussianMmd),
            other => {
                return Err(Error::InvalidConfig(format!(
                    "unknown weight method '{other}'"
                )))
            }
        })
    }
}

/// Everything that defines the estimation pipeline except the policy.
#[derive(Debug, Clone)]
pub struct Recipe {
    pub weight_method: WeightMethod,
    pub estimator: EstimatorKind,
    pub outcome_kind: OutcomeModelKind,
    pub outcome: OutcomeConfig,
    /// Out-of-fold outcome predictions in the augmented estimator.
    pub cross_fit: bool,
    pub solver: SolverConfig,
    pub level: f64,
}

impl Default for Recipe {
    fn default() -> Self {
        Recipe {
            weight_method: WeightMethod::Energy(KernelKind::GaussianMmd),
            estimator: EstimatorKind::Augmented,
            outcome_kind: OutcomeModelKind::Stack,
            outcome: OutcomeConfig::default(),
            cross_fit: true,
            solver: SolverConfig::default(),
            level: 0.95,
        }
    }
}

/// Point estimate and bootstrap interval for one policy.
#[derive(Debug, Clone, Serialize)]
pub struct PolicyEffectEstimate {
    pub mu_q_hat: f64,
    pub observed_mean: f64,
    /// mu_q_hat − observed_mean.
    pub effect: f64,
    /// Percentile interval for μ^q.
    pub ci_low: f64,
    pub ci_high: f64,
    /// Percentile interval for the effect.
    pub effect_ci_low: f64,
    pub effect_ci_high: f64,
    pub level: f64,
    pub estimator_kind: EstimatorKind,
    pub n_boot: usize,
    /// Replicates dropped after one retry.
    pub n_missing: usize,
    /// Percentile interval failed to cover the point estimate.
    pub wide_bootstrap: bool,
    pub ess: f64,
    pub converged: bool,
    pub replicate_estimates: Vec<f64>,
}

/// (1/n) Σ wᵢ Yᵢ.
pub fn weighted_estimate(d: &Dataset, w: &Weights) -> Result<f64> {
    if w.n() != d.n() {
        return Err(Error::DimensionMismatch(format!(
            "{} weights for {} rows",
            w.n(),
            d.n()
        )));
    }
    Ok(w.w.dot(d.y()) / d.n() as f64)
}

/// Augmented estimate from precomputed predictions at observed and shifted
/// points (the cross-fitting entry point).
pub fn augmented_estimate_from_predictions(
    y: &Array1<f64>,
    w: &Array1<f64>,
    mu_obs: &Array1<f64>,
    mu_shift: &Array1<f64>,
) -> Result<f64> {
    let n = y.len();
    if w.len() != n || mu_obs.len() != n || mu_shift.len() != n {
        return Err(Error::DimensionMismatch(
            "prediction vectors must match the sample size".into(),
        ));
    }
    let nf = n as f64;
    let mut resid_term = 0.0;
    let mut plug_in = 0.0;
    for i in 0..n {
        resid_term += w[i] * (y[i] - mu_obs[i]);
        plug_in += mu_shift[i];
    }
    Ok((resid_term + plug_in) / nf)
}

/// Augmented estimate using a single fitted outcome model.
pub fn augmented_estimate(
    d: &Dataset,
    s: &ShiftedSample,
    w: &Weights,
    m: &OutcomeModel,
) -> Result<f64> {
    let mu_obs = m.predict(&d.joint().view())?;
    let mu_shift = m.predict(&s.joint(d).view())?;
    augmented_estimate_from_predictions(d.y(), &w.w, &mu_obs, &mu_shift)
}

/// The 2n-row augmented population {observed, Z=0} ∪ {shifted, Z=1}.
#[derive(Debug, Clone)]
pub struct AugmentedPopulation {
    /// Joint (x, a) features, observed rows first.
    pub features: Array2<f64>,
    pub y: Array1<f64>,
    pub z: Vec<u8>,
}

pub fn make_augmented_population(d: &Dataset, s: &ShiftedSample) -> Result<AugmentedPopulation> {
    if s.n() != d.n() {
        return Err(Error::DimensionMismatch(format!(
            "dataset has {} rows, shifted sample has {}",
            d.n(),
            s.n()
        )));
    }
    let n = d.n();
    let m = d.p() + d.k();
    let mut features = Array2::zeros((2 * n, m));
    features.slice_mut(ndarray::s![..n, ..]).assign(&d.joint());
    features
        .slice_mut(ndarray::s![n.., ..])
        .assign(&s.joint(d));
    let mut y = Array1::zeros(2 * n);
    y.slice_mut(ndarray::s![..n]).assign(d.y());
    y.slice_mut(ndarray::s![n..]).assign(d.y());
    let z = (0..2 * n).map(|i| u8::from(i >= n)).collect();
    Ok(AugmentedPopulation { features, y, z })
}

/// Out-of-fold predictions at observed and shifted points.
pub fn crossfit_predictions(
    d: &Dataset,
    s: &ShiftedSample,
    kind: OutcomeModelKind,
    cfg: &OutcomeConfig,
) -> Result<(Array1<f64>, Array1<f64>)> {
    let n = d.n();
    let folds = cfg.n_folds.max(2);
    if n < 2 * folds {
        return Err(Error::TooFewRows(format!(
            "cross-fitting with {folds} folds needs at least {} rows, got {n}",
            2 * folds
        )));
    }
    let obs = d.joint();
    let shift = s.joint(d);
    let assign = fold_assignment(n, folds, derive_seed(cfg.seed, 0xCF, 0));
    let n_folds = *assign.iter().max().unwrap() + 1;
    let mut mu_obs = Array1::zeros(n);
    let mut mu_shift = Array1::zeros(n);
    for fold in 0..n_folds {
        let train: Vec<usize> = (0..n).filter(|&i| assign[i] != fold).collect();
        let test: Vec<usize> = (0..n).filter(|&i| assign[i] == fold).collect();
        if test.is_empty() {
            continue;
        }
        let xt = obs.select(ndarray::Axis(0), &train);
        let yt = d.y().select(ndarray::Axis(0), &train);
        let sub_cfg = OutcomeConfig {
            seed: derive_seed(cfg.seed, 0xCF1, fold as u64),
            ..cfg.clone()
        };
        let model = fit(kind, &xt.view(), &yt.view(), &sub_cfg)?;
        let xo = obs.select(ndarray::Axis(0), &test);
        let xs = shift.select(ndarray::Axis(0), &test);
        let po = model.predict(&xo.view())?;
        let ps = model.predict(&xs.view())?;
        for (pos, &row) in test.iter().enumerate() {
            mu_obs[row] = po[pos];
            mu_shift[row] = ps[pos];
        }
    }
    Ok((mu_obs, mu_shift))
}

/// One fitted replicate (or the full sample) of the pipeline.
#[derive(Debug, Clone)]
pub struct ReplicateFit {
    /// μ̂^q for this sample.
    pub estimate: f64,
    /// Mean outcome of this sample.
    pub observed_mean: f64,
    pub weights: Array1<f64>,
    pub converged: bool,
    /// Yᵢ − μ̂(Xᵢ,Aᵢ); equal to Yᵢ for the pure weighted estimator.
    pub residuals: Array1<f64>,
    /// (1/n)Σ μ̂ at shifted points; 0 for the pure weighted estimator.
    pub plug_in: f64,
    pub y: Array1<f64>,
}

/// Shared state for repeated fits on resamples of one dataset.
///
/// The Gram, standardizer and kernel bandwidth are fitted once on the full
/// sample; replicate Grams are entry gathers, and replicate solves warm-start
/// from the full-sample weights.
pub struct Pipeline<'a> {
    d: &'a Dataset,
    shifted: ShiftedSample,
    recipe: &'a Recipe,
    gram: Option<BalanceGram>,
    full_weights: Weights,
    seed: u64,
}

impl<'a> Pipeline<'a> {
    pub fn new(d: &'a Dataset, policy: &Policy, recipe: &'a Recipe, seed: u64) -> Result<Self> {
        if d.n() < 2 {
            return Err(Error::EmptyDataset(format!(
                "estimation needs n >= 2, got {}",
                d.n()
            )));
        }
        let shifted = shift_dataset(policy, d)?;
        let gram = match recipe.weight_method {
            WeightMethod::Energy(kind) => Some(build_gram(d, &shifted, kind, None)?.0),
            _ => None,
        };
        let full_weights = solve_weights_for(
            d,
            &shifted,
            gram.as_ref(),
            recipe,
            None,
        )?;
        Ok(Pipeline {
            d,
            shifted,
            recipe,
            gram,
            full_weights,
            seed,
        })
    }

    pub fn dataset(&self) -> &Dataset {
        self.d
    }
    pub fn shifted(&self) -> &ShiftedSample {
        &self.shifted
    }
    pub fn gram(&self) -> Option<&BalanceGram> {
        self.gram.as_ref()
    }
    pub fn full_weights(&self) -> &Weights {
        &self.full_weights
    }
    pub fn recipe(&self) -> &Recipe {
        self.recipe
    }

    /// Fit on the full sample.
    pub fn fit_full(&self) -> Result<ReplicateFit> {
        self.fit_on(
            self.d,
            &self.shifted,
            self.full_weights.clone(),
            derive_seed(self.seed, 0xF0F0, 0),
        )
    }

    /// Fit on a row resample, reusing cached structure.
    pub fn fit_replicate(&self, idx: &[usize], fit_seed: u64) -> Result<ReplicateFit> {
        let d_r = self.d.select_rows(idx);
        let s_r = self.shifted.select_rows(idx);
        let gram_r = self.gram.as_ref().map(|g| g.subsample(idx));
        let warm = Array1::from_iter(idx.iter().map(|&i| self.full_weights.w[i]));
        let weights = solve_weights_for(&d_r, &s_r, gram_r.as_ref(), self.recipe, Some(warm))?;
        self.fit_on(&d_r, &s_r, weights, fit_seed)
    }

    fn fit_on(
        &self,
        d: &Dataset,
        s: &ShiftedSample,
        weights: Weights,
        fit_seed: u64,
    ) -> Result<ReplicateFit> {
        let n = d.n();
        let nf = n as f64;
        let observed_mean = d.y().sum() / nf;
        let (residuals, plug_in, converged_model) = match self.recipe.estimator {
            EstimatorKind::Weighted => (d.y().clone(), 0.0, true),
            EstimatorKind::Augmented => {
                let cfg = OutcomeConfig {
                    seed: fit_seed,
                    ..self.recipe.outcome.clone()
                };
                let (mu_obs, mu_shift) = if self.recipe.cross_fit {
                    crossfit_predictions(d, s, self.recipe.outcome_kind, &cfg)?
                } else {
                    let model = fit(
                        self.recipe.outcome_kind,
                        &d.joint().view(),
                        &d.y().view(),
                        &cfg,
                    )?;
                    let mu_obs = model.predict(&d.joint().view())?;
                    let mu_shift = model.predict(&s.joint(d).view())?;
                    (mu_obs, mu_shift)
                };
                let resid = d.y() - &mu_obs;
                (resid, mu_shift.sum() / nf, true)
            }
        };
        let estimate = weights.w.dot(&residuals) / nf + plug_in;
        Ok(ReplicateFit {
            estimate,
            observed_mean,
            converged: weights.converged && converged_model,
            weights: weights.w,
            residuals,
            plug_in,
            y: d.y().clone(),
        })
    }
}

fn solve_weights_for(
    d: &Dataset,
    s: &ShiftedSample,
    gram: Option<&BalanceGram>,
    recipe: &Recipe,
    warm: Option<Array1<f64>>,
) -> Result<Weights> {
    match recipe.weight_method {
        WeightMethod::Uniform => Ok(uniform_weights(d.n())),
        WeightMethod::ClassificationLogistic => classification_weights(d, s),
        WeightMethod::Energy(_) => {
            let g = gram.ok_or_else(|| {
                Error::InvalidConfig("energy weights need a Gram matrix".into())
            })?;
            let cfg = SolverConfig {
                warm_start: warm.clone(),
                // the convexity probe ran on the parent problem; skip on resamples
                check_convexity: warm.is_none() && recipe.solver.check_convexity,
                ..recipe.solver.clone()
            };
            solve_energy_weights(g, &cfg)
        }
    }
}

/// Linear-interpolation (type 7) quantile of a sorted slice.
pub(crate) fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    debug_assert!(n > 0);
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Full-pipeline pairs bootstrap with percentile intervals.
///
/// A replicate whose solve fails to converge is retried once with a fresh
/// resample and then counted as missing; more than 5% missing aborts.
pub fn bootstrap_ci(
    d: &Dataset,
    policy: &Policy,
    recipe: &Recipe,
    n_boot: usize,
    level: f64,
    seed: u64,
) -> Result<PolicyEffectEstimate> {
    if n_boot < 50 {
        return Err(Error::InvalidConfig(format!(
            "n_boot must be at least 50, got {n_boot}"
        )));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "confidence level must be in (0,1), got {level}"
        )));
    }
    let pipeline = Pipeline::new(d, policy, recipe, seed)?;
    let full = pipeline.fit_full()?;
    let reps = run_replicates(&pipeline, n_boot, seed)?;
    summarize_bootstrap(&pipeline, &full, reps, n_boot, level)
}

pub(crate) fn run_replicates(
    pipeline: &Pipeline,
    n_boot: usize,
    seed: u64,
) -> Result<Vec<Option<ReplicateFit>>> {
    let n = pipeline.dataset().n();
    let reps: Vec<Option<ReplicateFit>> = (0..n_boot)
        .into_par_iter()
        .map(|r| {
            for attempt in 0..2u64 {
                let mut rng = stream_rng(seed, 0xB007 + attempt, r as u64);
                let idx = resample_indices(n, n, &mut rng);
                let fit_seed = derive_seed(seed, 0xB00F + attempt, r as u64);
                match pipeline.fit_replicate(&idx, fit_seed) {
                    Ok(fit) if fit.converged => return Some(fit),
                    Ok(_) | Err(_) => continue,
                }
            }
            None
        })
        .collect();
    Ok(reps)
}

pub(crate) fn summarize_bootstrap(
    pipeline: &Pipeline,
    full: &ReplicateFit,
    reps: Vec<Option<ReplicateFit>>,
    n_boot: usize,
    level: f64,
) -> Result<PolicyEffectEstimate> {
    let n_missing = reps.iter().filter(|r| r.is_none()).count();
    if n_missing as f64 > 0.05 * n_boot as f64 {
        return Err(Error::BootstrapUnstable(format!(
            "{n_missing} of {n_boot} replicates failed"
        )));
    }
    let estimates: Vec<f64> = reps
        .iter()
        .flatten()
        .map(|f| f.estimate)
        .collect();
    let effects: Vec<f64> = reps
        .iter()
        .flatten()
        .map(|f| f.estimate - f.observed_mean)
        .collect();
    let alpha = 1.0 - level;
    let mut sorted = estimates.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let ci_low = quantile_sorted(&sorted, alpha / 2.0);
    let ci_high = quantile_sorted(&sorted, 1.0 - alpha / 2.0);
    let mut eff_sorted = effects;
    eff_sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let effect_ci_low = quantile_sorted(&eff_sorted, alpha / 2.0);
    let effect_ci_high = quantile_sorted(&eff_sorted, 1.0 - alpha / 2.0);

    let mu_q_hat = full.estimate;
    let observed_mean = full.observed_mean;
    let wide = !(ci_low <= mu_q_hat && mu_q_hat <= ci_high);
    let full_weights = pipeline.full_weights();
    Ok(PolicyEffectEstimate {
        mu_q_hat,
        observed_mean,
        effect: mu_q_hat - observed_mean,
        ci_low,
        ci_high,
        effect_ci_low,
        effect_ci_high,
        level,
        estimator_kind: pipeline.recipe().estimator,
        n_boot,
        n_missing,
        wide_bootstrap: wide,
        ess: full_weights.ess(),
        converged: full.converged,
        replicate_estimates: estimates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::Policy;
    use crate::rng::stream_rng;
    use ndarray::array;
    use rand::Rng;

    fn random_dataset(n: usize, p: usize, k: usize, seed: u64) -> Dataset {
        let mut rng = stream_rng(seed, 0, 0);
        let x = Array2::from_shape_fn((n, p), |_| 2.0 * rng.random::<f64>() - 1.0);
        let a = Array2::from_shape_fn((n, k), |_| 2.0 * rng.random::<f64>() - 1.0);
        let y = Array1::from_shape_fn(n, |i| x[[i, 0]] + a[[i, 0]] + 0.1 * rng.random::<f64>());
        Dataset::from_parts(x, a, y).unwrap()
    }

    #[test]
    fn weighted_estimate_uniform_is_sample_mean() {
        let d = random_dataset(25, 2, 1, 1);
        let w = uniform_weights(25);
        let got = weighted_estimate(&d, &w).unwrap();
        let want = d.y().sum() / 25.0;
        assert!((got - want).abs() < 1e-14);
    }

    #[test]
    fn weighted_estimate_hand_value() {
        let d = Dataset::from_parts(
            Array2::zeros((2, 0)),
            array![[0.0], [0.0]],
            array![1.0, 5.0],
        )
        .unwrap();
        let mut w = uniform_weights(2);
        w.w = array![2.0, 0.0];
        assert_eq!(weighted_estimate(&d, &w).unwrap(), 1.0);
    }

    #[test]
    fn augmented_with_zero_model_equals_weighted() {
        let d = random_dataset(30, 2, 1, 2);
        let w = uniform_weights(30);
        let zero = Array1::zeros(30);
        let aug =
            augmented_estimate_from_predictions(d.y(), &w.w, &zero, &zero).unwrap();
        let wtd = weighted_estimate(&d, &w).unwrap();
        assert!((aug - wtd).abs() < 1e-14);
    }

    #[test]
    fn constant_model_shift_cancels() {
        let d = random_dataset(30, 2, 1, 3);
        let mut rng = stream_rng(4, 0, 0);
        let mut w = Array1::from_shape_fn(30, |_| rng.random::<f64>() + 0.2);
        let total: f64 = w.sum();
        w.mapv_inplace(|v| v * 30.0 / total);
        let mu_obs = Array1::from_shape_fn(30, |i| (i as f64).cos());
        let mu_shift = Array1::from_shape_fn(30, |i| (i as f64).sin());
        let base =
            augmented_estimate_from_predictions(d.y(), &w, &mu_obs, &mu_shift).unwrap();
        for c in [-3.0, 0.5, 100.0] {
            let shifted = augmented_estimate_from_predictions(
                d.y(),
                &w,
                &mu_obs.mapv(|v| v + c),
                &mu_shift.mapv(|v| v + c),
            )
            .unwrap();
            assert!((shifted - base).abs() < 1e-10, "c={c}");
        }
    }

    #[test]
    fn identity_policy_uniform_weights_recovers_sample_mean() {
        let d = random_dataset(40, 2, 2, 5);
        let s = shift_dataset(&Policy::identity(2), &d).unwrap();
        let w = uniform_weights(40);
        let cfg = OutcomeConfig {
            n_trees: 20,
            ..Default::default()
        };
        let model = fit(
            OutcomeModelKind::RidgePoly,
            &d.joint().view(),
            d.y(),
            &cfg,
        )
        .unwrap();
        let aug = augmented_estimate(&d, &s, &w, &model).unwrap();
        let mean = d.y().sum() / 40.0;
        assert!((aug - mean).abs() < 1e-10, "{aug} vs {mean}");
    }

    #[test]
    fn augmented_population_shape_and_identity_halves() {
        let d = random_dataset(1, 1, 1, 6);
        let s = shift_dataset(&Policy::identity(1), &d).unwrap();
        let pop = make_augmented_population(&d, &s).unwrap();
        assert_eq!(pop.features.nrows(), 2);
        assert_eq!(pop.z, vec![0, 1]);
        assert_eq!(pop.y[0], pop.y[1]);

        let d10 = random_dataset(10, 2, 1, 7);
        let s10 = shift_dataset(&Policy::identity(1), &d10).unwrap();
        let pop10 = make_augmented_population(&d10, &s10).unwrap();
        for i in 0..10 {
            for j in 0..3 {
                assert_eq!(pop10.features[[i, j]], pop10.features[[10 + i, j]]);
            }
        }
    }

    #[test]
    fn classification_weighted_estimate_matches_true_ratio_weighting() {
        use rand_distr::{Distribution, StandardNormal};
        use std::sync::Arc;
        // 1-D Gaussian location shift: density ratio known in closed form
        let n = 100_000;
        let delta = 0.4;
        let mut rng = stream_rng(8, 0, 0);
        let a = Array2::from_shape_fn((n, 1), |_| {
            <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
        });
        let y = Array1::from_shape_fn(n, |i| {
            a[[i, 0]] + 0.5 * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
        });
        let d = Dataset::from_parts(Array2::zeros((n, 0)), a, y).unwrap();
        type PF = Arc<
            dyn Fn(ndarray::ArrayView1<f64>, ndarray::ArrayView1<f64>) -> Array1<f64>
                + Send
                + Sync,
        >;
        let apply: PF = Arc::new(move |_x, t| t.mapv(|v| v + delta));
        let invert: PF = Arc::new(move |_x, t| t.mapv(|v| v - delta));
        let member: Arc<
            dyn Fn(ndarray::ArrayView1<f64>, ndarray::ArrayView1<f64>) -> bool + Send + Sync,
        > = Arc::new(|_x, _a| true);
        let policy = Policy::new(
            "loc-shift",
            vec![crate::policy::Block::new(member, apply, invert)],
        );
        let s = shift_dataset(&policy, &d).unwrap();

        let fitted = classification_weights(&d, &s).unwrap();
        let est_fitted = weighted_estimate(&d, &fitted).unwrap();

        let mut truth = Array1::from_shape_fn(n, |i| {
            let t = d.a()[[i, 0]];
            (t * delta - delta * delta / 2.0).exp()
        });
        let total: f64 = truth.sum();
        truth.mapv_inplace(|v| v * n as f64 / total);
        let est_truth = truth.dot(d.y()) / n as f64;

        assert!(
            (est_fitted - est_truth).abs() < 0.01,
            "fitted {est_fitted} vs true-ratio {est_truth}"
        );
    }

    #[test]
    fn bootstrap_constant_outcome_degenerates() {
        let n = 30;
        let mut rng = stream_rng(9, 0, 0);
        let x = Array2::from_shape_fn((n, 1), |_| rng.random::<f64>());
        let a = Array2::from_shape_fn((n, 1), |_| rng.random::<f64>());
        let y = Array1::from_elem(n, 3.25);
        let d = Dataset::from_parts(x, a, y).unwrap();
        let policy = Policy::scale("s", vec![0.9]).unwrap();
        let recipe = Recipe {
            weight_method: WeightMethod::Energy(KernelKind::GaussianMmd),
            estimator: EstimatorKind::Weighted,
            ..Default::default()
        };
        let est = bootstrap_ci(&d, &policy, &recipe, 60, 0.95, 12).unwrap();
        assert!((est.mu_q_hat - 3.25).abs() < 1e-9);
        assert!((est.ci_low - 3.25).abs() < 1e-9);
        assert!((est.ci_high - 3.25).abs() < 1e-9);
    }

    #[test]
    fn bootstrap_deterministic_given_seed() {
        let d = random_dataset(40, 1, 1, 10);
        let policy = Policy::scale("s", vec![0.95]).unwrap();
        let recipe = Recipe {
            weight_method: WeightMethod::Energy(KernelKind::EuclideanEnergy),
            estimator: EstimatorKind::Weighted,
            ..Default::default()
        };
        let a = bootstrap_ci(&d, &policy, &recipe, 50, 0.95, 77).unwrap();
        let b = bootstrap_ci(&d, &policy, &recipe, 50, 0.95, 77).unwrap();
        assert_eq!(a.ci_low.to_bits(), b.ci_low.to_bits());
        assert_eq!(a.ci_high.to_bits(), b.ci_high.to_bits());
        assert_eq!(a.mu_q_hat.to_bits(), b.mu_q_hat.to_bits());
    }

    #[test]
    fn quantile_interpolation() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&v, 0.0), 1.0);
        assert_eq!(quantile_sorted(&v, 1.0), 4.0);
        assert_eq!(quantile_sorted(&v, 0.5), 2.5);
    }
}
