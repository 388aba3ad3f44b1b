//! Plasmode simulation: resample real covariate/treatment structure, draw
//! outcomes from a known polynomial mean, and benchmark the estimators for
//! bias and interval coverage against a Monte Carlo truth.

use std::time::Instant;

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::balance::{classification_weights, solve_energy_weights, SolverConfig, Weights};
use crate::data::{jitter_treatments, resample_indices, resample_with_replacement, Dataset};
use crate::energy::{build_gram, BalanceGram, KernelKind};
use crate::error::{Error, Result};
use crate::estimate::{
    augmented_estimate_from_predictions, crossfit_predictions, quantile_sorted, EstimatorKind,
    WeightMethod,
};
use crate::outcome::{OutcomeConfig, OutcomeModelKind};
use crate::policy::{shift_dataset, Policy, ShiftedSample};
use crate::rng::{derive_seed, stream_rng};

/// The simulation's polynomial mean μ(x, a); x supplies p ≥ 12 covariates
/// and a exactly 5 treatments.
///
/// The even-indexed covariate sum starts at column 12 and the odd-indexed
/// one at column 11 (1-based), which is why p < 12 is rejected rather than
/// truncated.
pub fn plasmode_mu(x: &ArrayView1<f64>, a: &ArrayView1<f64>) -> Result<f64> {
    let p = x.len();
    if p < 12 {
        return Err(Error::DimensionMismatch(format!(
            "the simulation mean needs p >= 12 covariates, got {p}"
        )));
    }
    if a.len() != 5 {
        return Err(Error::DimensionMismatch(format!(
            "the simulation mean needs exactly 5 treatments, got {}",
            a.len()
        )));
    }
    // 1-based indexing to mirror the displayed polynomial
    let xv = |j: usize| x[j - 1];
    let av = |j: usize| a[j - 1];

    let mut even_sum = 0.0;
    let mut j = 12;
    while j <= p {
        even_sum += 1.5 * xv(j) + xv(j) * (xv(j - 10) + 2.0 * xv(j - 9));
        j += 2;
    }
    let factor1 = -1.0 - 0.5 * xv(3) + 0.5 * xv(4) * xv(4) + 0.5 * xv(5) * xv(5) + even_sum;
    let pf = (p + 20) as f64;
    let term1 = factor1 * (0.0005 / (pf * pf)) * (av(1) + av(2));

    let mut odd_sum = 0.0;
    let mut j = 11;
    while j <= p {
        odd_sum += -0.5 * xv(j)
            + 0.3 * xv(j) * xv(j)
            + 0.3 * xv(j) * (xv(j - 8) * xv(j - 8) + 2.0 * xv(j - 7));
        j += 2;
    }
    let factor2 = 1.0 - 0.5 * xv(1) * xv(1) - 0.5 * xv(2) * xv(2)
        + xv(1) * xv(2)
        + 0.5 * (xv(7) + xv(8) + xv(10))
        - odd_sum;
    let bracket = {
        let t = (av(3) - av(4) + 0.5 * av(5) - 20.0) / 2.0;
        t * t - 6.0
    };
    let term2 = factor2 * factor2 * bracket * 20.0;
    Ok(term1 + term2)
}

/// The simulation's shift family q(x, a) = (1−τ)a over the 5 treatments.
pub fn plasmode_policy(tau: f64) -> Result<Policy> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "plasmode tau must lie in (0,1), got {tau}"
        )));
    }
    Policy::scale(format!("plasmode(tau={tau})"), vec![1.0 - tau; 5])
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlasmodeConfig {
    pub n: usize,
    pub p: usize,
    pub tau: f64,
    /// Treatment jitter as a fraction of each column's sd.
    pub noise_fraction: f64,
    /// Monte Carlo draws behind mu_q_true.
    pub oracle_draws: usize,
}

impl Default for PlasmodeConfig {
    fn default() -> Self {
        PlasmodeConfig {
            n: 400,
            p: 12,
            tau: 0.05,
            noise_fraction: 0.05,
            oracle_draws: 200_000,
        }
    }
}

/// The Monte Carlo truth for one (source, p, τ) configuration.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct PlasmodeTruth {
    pub mu_q_true: f64,
    pub mc_se: f64,
    pub draws_used: usize,
}

fn check_source(source: &Dataset, p: usize) -> Result<()> {
    if source.p() < p {
        return Err(Error::SourceTooNarrow(format!(
            "source has {} covariates, needs {p}",
            source.p()
        )));
    }
    if source.k() < 5 {
        return Err(Error::SourceTooNarrow(format!(
            "source has {} treatments, needs 5",
            source.k()
        )));
    }
    if p < 12 {
        return Err(Error::InvalidConfig(format!(
            "the simulation mean needs p >= 12, got {p}"
        )));
    }
    Ok(())
}

/// Restrict a source to its first p covariates and first 5 treatments.
fn narrow_source(source: &Dataset, p: usize) -> Result<Dataset> {
    check_source(source, p)?;
    let x = source.x().slice(ndarray::s![.., ..p]).to_owned();
    let a = source.a().slice(ndarray::s![.., ..5]).to_owned();
    Dataset::from_parts(x, a, Array1::zeros(source.n()))
}

/// Resample + jitter + outcome draw: one simulated dataset.
fn plasmode_rows(narrowed: &Dataset, n: usize, noise_fraction: f64, seed: u64) -> Result<Dataset> {
    let mut rng = stream_rng(seed, 0x5e_01, 0);
    let resampled = resample_with_replacement(narrowed, n, &mut rng)?;
    let mut jit_rng = stream_rng(seed, 0x5e_02, 0);
    let jittered = jitter_treatments(&resampled, noise_fraction, &mut jit_rng)?;
    let mut y_rng = stream_rng(seed, 0x5e_03, 0);
    let mut y = Array1::zeros(n);
    for i in 0..n {
        let mu = plasmode_mu(&jittered.x().row(i), &jittered.a().row(i))?;
        let noise: f64 = StandardNormal.sample(&mut y_rng);
        y[i] = mu + noise;
    }
    Dataset::from_parts(jittered.x().to_owned(), jittered.a().to_owned(), y)
}

/// Monte Carlo μ^q over the resample-plus-jitter population: the average of
/// μ(X, (1−τ)A) over `oracle_draws` fresh draws, with its standard error.
/// The draw count doubles (up to three times) until the SE is below 1% of
/// |μ^q|.
pub fn plasmode_truth(
    source: &Dataset,
    p: usize,
    tau: f64,
    noise_fraction: f64,
    oracle_draws: usize,
    seed: u64,
) -> Result<PlasmodeTruth> {
    let narrowed = narrow_source(source, p)?;
    if !(tau > 0.0 && tau < 1.0) && tau != 0.0 {
        return Err(Error::InvalidConfig(format!(
            "plasmode tau must lie in [0,1), got {tau}"
        )));
    }
    let shrink = 1.0 - tau;
    let mut draws = oracle_draws.max(1000);
    for attempt in 0..4 {
        let mut rng = stream_rng(seed, 0x0a_c1, attempt);
        let resampled = resample_with_replacement(&narrowed, draws, &mut rng)?;
        let mut jit_rng = stream_rng(seed, 0x0a_c2, attempt);
        let jittered = jitter_treatments(&resampled, noise_fraction, &mut jit_rng)?;
        let values: Result<Vec<f64>> = (0..draws)
            .into_par_iter()
            .map(|i| {
                let shifted = jittered.a().row(i).mapv(|v| v * shrink);
                plasmode_mu(&jittered.x().row(i), &shifted.view())
            })
            .collect();
        let values = values?;
        let nf = draws as f64;
        let mean = values.iter().sum::<f64>() / nf;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (nf - 1.0);
        let se = (var / nf).sqrt();
        if se < 0.01 * mean.abs() || attempt == 3 {
            return Ok(PlasmodeTruth {
                mu_q_true: mean,
                mc_se: se,
                draws_used: draws,
            });
        }
        draws *= 2;
    }
    unreachable!("loop returns on the final attempt");
}

/// One simulated dataset plus the truth of its generating configuration.
pub fn generate_dataset(
    cfg: &PlasmodeConfig,
    source: &Dataset,
    seed: u64,
) -> Result<(Dataset, PlasmodeTruth)> {
    let narrowed = narrow_source(source, cfg.p)?;
    let d = plasmode_rows(&narrowed, cfg.n, cfg.noise_fraction, seed)?;
    let truth = plasmode_truth(
        source,
        cfg.p,
        cfg.tau,
        cfg.noise_fraction,
        cfg.oracle_draws,
        derive_seed(seed, 0x0a_c0, 0),
    )?;
    Ok((d, truth))
}

/// Synthetic covariate/treatment source: a 4-factor model for X and
/// treatments confounded through the first six covariates.
pub fn synthetic_source(n_rows: usize, p: usize, seed: u64) -> Result<Dataset> {
    if p < 12 {
        return Err(Error::InvalidConfig(format!(
            "synthetic source needs p >= 12, got {p}"
        )));
    }
    if n_rows < 2 {
        return Err(Error::EmptyDataset("synthetic source needs n >= 2".into()));
    }
    const N_FACTORS: usize = 4;
    let mut load_rng = stream_rng(seed, 0x10ad, 0);
    let loadings =
        Array2::from_shape_fn((p, N_FACTORS), |_| 1.8 * load_rng.random::<f64>() - 0.9);
    let mix = Array2::from_shape_fn((5, 6), |_| 1.4 * load_rng.random::<f64>() - 0.7);

    let mut rng = stream_rng(seed, 0x10ae, 0);
    let mut x = Array2::zeros((n_rows, p));
    let mut a = Array2::zeros((n_rows, 5));
    for i in 0..n_rows {
        let mut f = [0.0; N_FACTORS];
        for fj in f.iter_mut() {
            *fj = StandardNormal.sample(&mut rng);
        }
        for j in 0..p {
            let mut v = 0.0;
            for (l, fj) in f.iter().enumerate() {
                v += loadings[[j, l]] * fj;
            }
            let e: f64 = StandardNormal.sample(&mut rng);
            x[[i, j]] = v + 0.6 * e;
        }
        for t in 0..5 {
            let mut v = 0.0;
            for c in 0..6 {
                v += mix[[t, c]] * x[[i, c]];
            }
            let e: f64 = StandardNormal.sample(&mut rng);
            a[[i, t]] = v + 0.5 * e;
        }
    }
    Dataset::from_parts(x, a, Array1::zeros(n_rows))
}

/// One estimator under benchmark: a weighting method, the estimator form,
/// and whether to bootstrap an interval for coverage.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimatorSpec {
    pub weights: String,
    pub estimator: EstimatorKind,
    #[serde(default = "default_true")]
    pub ci: bool,
}

fn default_true() -> bool {
    true
}

impl EstimatorSpec {
    pub fn id(&self) -> String {
        let kind = match self.estimator {
            EstimatorKind::Weighted => "weighted",
            EstimatorKind::Augmented => "augmented",
        };
        format!("{}:{}", self.weights, kind)
    }

    fn method(&self) -> Result<WeightMethod> {
        WeightMethod::parse(&self.weights)
    }
}

#[derive(Debug, Clone)]
pub struct BenchmarkConfig {
    pub n: Vec<usize>,
    pub p: Vec<usize>,
    pub taus: Vec<f64>,
    pub estimators: Vec<EstimatorSpec>,
    pub n_replicates: usize,
    pub n_boot: usize,
    pub level: f64,
    pub lambda: f64,
    pub solver_tol: f64,
    pub outcome_kind: OutcomeModelKind,
    pub outcome: OutcomeConfig,
    pub cross_fit: bool,
    pub noise_fraction: f64,
    pub oracle_draws: usize,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            n: vec![400],
            p: vec![12],
            taus: vec![0.05],
            estimators: vec![EstimatorSpec {
                weights: "energy-penalized".into(),
                estimator: EstimatorKind::Weighted,
                ci: true,
            }],
            n_replicates: 200,
            n_boot: 200,
            level: 0.95,
            lambda: 1.0,
            solver_tol: 1e-6,
            outcome_kind: OutcomeModelKind::RidgePoly,
            outcome: OutcomeConfig::default(),
            cross_fit: true,
            noise_fraction: 0.05,
            oracle_draws: 200_000,
        }
    }
}

/// Aggregates for one (n, p, τ, estimator) cell.
#[derive(Debug, Clone, Serialize)]
pub struct CellResult {
    pub n: usize,
    pub p: usize,
    pub tau: f64,
    pub estimator: String,
    pub mu_q_true: f64,
    pub truth_mc_se: f64,
    /// Mean of μ̂ − μ^q over completed replicates.
    pub bias: f64,
    pub abs_bias: f64,
    /// log10|bias|; absent when the bias is exactly zero.
    pub log10_abs_bias: Option<f64>,
    /// Fraction of intervals covering μ^q; absent when ci was off.
    pub coverage: Option<f64>,
    pub n_replicates: usize,
    pub n_failed: usize,
    /// False when more than 10% of replicates failed.
    pub complete: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulationReport {
    pub cells: Vec<CellResult>,
    /// Wall-clock seconds; reported on stdout, never serialized into files.
    #[serde(skip)]
    pub runtime_seconds: f64,
}

impl SimulationReport {
    pub fn cell(&self, n: usize, p: usize, tau: f64, estimator: &str) -> Option<&CellResult> {
        self.cells.iter().find(|c| {
            c.n == n && c.p == p && (c.tau - tau).abs() < 1e-12 && c.estimator == estimator
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("# schema_version: 1\n");
        out.push_str(
            "n,p,tau,estimator,mu_q_true,truth_mc_se,bias,abs_bias,log10_abs_bias,coverage,n_replicates,n_failed,complete\n",
        );
        for c in &self.cells {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                c.n,
                c.p,
                c.tau,
                c.estimator,
                c.mu_q_true,
                c.truth_mc_se,
                c.bias,
                c.abs_bias,
                c.log10_abs_bias.map_or(String::new(), |v| v.to_string()),
                c.coverage.map_or(String::new(), |v| v.to_string()),
                c.n_replicates,
                c.n_failed,
                c.complete
            ));
        }
        out
    }
}

/// Per-replicate output: estimate and optional interval per estimator.
struct ReplicateOutput {
    estimates: Vec<f64>,
    intervals: Vec<Option<(f64, f64)>>,
    ok: bool,
}

struct CellRunner<'a> {
    narrowed: &'a Dataset,
    cfg: &'a BenchmarkConfig,
    specs: &'a [EstimatorSpec],
    methods: Vec<WeightMethod>,
    policy: Policy,
    n: usize,
}

impl<'a> CellRunner<'a> {
    /// Energy Grams and solved weights for every method, warm-startable.
    fn solve_all(
        &self,
        d: &Dataset,
        s: &ShiftedSample,
        grams: &mut Vec<(KernelKind, BalanceGram)>,
        warm: Option<&[(WeightMethod, Array1<f64>)]>,
        subsample: Option<&[usize]>,
    ) -> Result<Vec<(WeightMethod, Weights)>> {
        let mut out = Vec::with_capacity(self.methods.len());
        for &method in &self.methods {
            let w = match method {
                WeightMethod::Uniform => crate::balance::uniform_weights(d.n()),
                WeightMethod::ClassificationLogistic => classification_weights(d, s)?,
                WeightMethod::Energy(kind) => {
                    let gram_owned;
                    let gram = match subsample {
                        Some(idx) => {
                            let base = grams
                                .iter()
                                .find(|(k, _)| *k == kind)
                                .map(|(_, g)| g)
                                .expect("parent gram built before subsampling");
                            gram_owned = base.subsample(idx);
                            &gram_owned
                        }
                        None => {
                            if !grams.iter().any(|(k, _)| *k == kind) {
                                grams.push((kind, build_gram(d, s, kind, None)?.0));
                            }
                            &grams.iter().find(|(k, _)| *k == kind).unwrap().1
                        }
                    };
                    let warm_start = warm.and_then(|ws| {
                        ws.iter()
                            .find(|(m, _)| *m == method)
                            .map(|(_, w)| match subsample {
                                Some(idx) => Array1::from_iter(idx.iter().map(|&i| w[i])),
                                None => w.clone(),
                            })
                    });
                    let solver = SolverConfig {
                        lambda: self.cfg.lambda,
                        tol: self.cfg.solver_tol,
                        warm_start,
                        check_convexity: subsample.is_none(),
                        ..Default::default()
                    };
                    solve_energy_weights(gram, &solver)?
                }
            };
            if !w.converged {
                return Err(Error::InvalidWeights(format!(
                    "{} weights failed to converge",
                    method.id()
                )));
            }
            out.push((method, w));
        }
        Ok(out)
    }

    fn estimates_for_specs(
        &self,
        d: &Dataset,
        s: &ShiftedSample,
        weights: &[(WeightMethod, Weights)],
        fit_seed: u64,
        only_ci_specs: bool,
    ) -> Result<Vec<Option<f64>>> {
        let wants_augmented = self
            .specs
            .iter()
            .any(|sp| (!only_ci_specs || sp.ci) && sp.estimator == EstimatorKind::Augmented);
        let preds = if wants_augmented {
            let cfg = OutcomeConfig {
                seed: fit_seed,
                ..self.cfg.outcome.clone()
            };
            Some(if self.cfg.cross_fit {
                crossfit_predictions(d, s, self.cfg.outcome_kind, &cfg)?
            } else {
                let model = crate::outcome::fit(
                    self.cfg.outcome_kind,
                    &d.joint().view(),
                    &d.y().view(),
                    &cfg,
                )?;
                (
                    model.predict(&d.joint().view())?,
                    model.predict(&s.joint(d).view())?,
                )
            })
        } else {
            None
        };
        let nf = d.n() as f64;
        self.specs
            .iter()
            .map(|sp| {
                if only_ci_specs && !sp.ci {
                    return Ok(None);
                }
                let method = sp.method()?;
                let w = &weights
                    .iter()
                    .find(|(m, _)| *m == method)
                    .expect("weights solved for every method")
                    .1;
                let est = match sp.estimator {
                    EstimatorKind::Weighted => w.w.dot(d.y()) / nf,
                    EstimatorKind::Augmented => {
                        let (mu_obs, mu_shift) =
                            preds.as_ref().expect("predictions built when needed");
                        augmented_estimate_from_predictions(d.y(), &w.w, mu_obs, mu_shift)?
                    }
                };
                Ok(Some(est))
            })
            .collect()
    }

    fn run_replicate(&self, rep_seed: u64) -> Result<ReplicateOutput> {
        let d = plasmode_rows(self.narrowed, self.n, self.cfg.noise_fraction, rep_seed)?;
        let s = shift_dataset(&self.policy, &d)?;
        let mut grams: Vec<(KernelKind, BalanceGram)> = Vec::new();
        let full_weights = self.solve_all(&d, &s, &mut grams, None, None)?;
        let estimates = self
            .estimates_for_specs(&d, &s, &full_weights, derive_seed(rep_seed, 0xE0, 0), false)?
            .into_iter()
            .map(|e| e.expect("full fit computes every spec"))
            .collect::<Vec<f64>>();

        let any_ci = self.specs.iter().any(|sp| sp.ci);
        let mut intervals: Vec<Option<(f64, f64)>> = vec![None; self.specs.len()];
        if any_ci && self.cfg.n_boot > 0 {
            let warm: Vec<(WeightMethod, Array1<f64>)> = full_weights
                .iter()
                .map(|(m, w)| (*m, w.w.clone()))
                .collect();
            let mut per_spec: Vec<Vec<f64>> = vec![Vec::new(); self.specs.len()];
            let mut failures = 0usize;
            for b in 0..self.cfg.n_boot {
                let mut done = false;
                for attempt in 0..2u64 {
                    let mut rng = stream_rng(rep_seed, 0xB0 + attempt, b as u64);
                    let idx = resample_indices(d.n(), d.n(), &mut rng);
                    let d_b = d.select_rows(&idx);
                    let s_b = s.select_rows(&idx);
                    let solved = self.solve_all(&d_b, &s_b, &mut grams, Some(&warm), Some(&idx));
                    let Ok(solved) = solved else { continue };
                    let ests = self.estimates_for_specs(
                        &d_b,
                        &s_b,
                        &solved,
                        derive_seed(rep_seed, 0xE1 + attempt, b as u64),
                        true,
                    );
                    let Ok(ests) = ests else { continue };
                    for (si, e) in ests.into_iter().enumerate() {
                        if let Some(v) = e {
                            per_spec[si].push(v);
                        }
                    }
                    done = true;
                    break;
                }
                if !done {
                    failures += 1;
                }
            }
            if failures as f64 > 0.05 * self.cfg.n_boot as f64 {
                return Err(Error::BootstrapUnstable(format!(
                    "{failures} of {} bootstrap draws failed",
                    self.cfg.n_boot
                )));
            }
            let alpha = 1.0 - self.cfg.level;
            for (si, sp) in self.specs.iter().enumerate() {
                if sp.ci {
                    let mut v = per_spec[si].clone();
                    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
                    intervals[si] = Some((
                        quantile_sorted(&v, alpha / 2.0),
                        quantile_sorted(&v, 1.0 - alpha / 2.0),
                    ));
                }
            }
        }
        Ok(ReplicateOutput {
            estimates,
            intervals,
            ok: true,
        })
    }
}

/// Run the estimator benchmark over the (n, p, τ) grid.
pub fn run_benchmark(
    cfg: &BenchmarkConfig,
    source: &Dataset,
    seed: u64,
) -> Result<SimulationReport> {
    let start = Instant::now();
    if cfg.estimators.is_empty() {
        return Err(Error::InvalidConfig("no estimators requested".into()));
    }
    if cfg.n_replicates == 0 {
        return Err(Error::InvalidConfig("n_replicates must be >= 1".into()));
    }
    for sp in &cfg.estimators {
        sp.method()?;
    }
    for &p in &cfg.p {
        check_source(source, p)?;
    }
    for &tau in &cfg.taus {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "benchmark tau must lie in (0,1), got {tau}"
            )));
        }
    }

    let mut cells: Vec<CellResult> = Vec::new();
    let mut cell_id: u64 = 0;
    for &p in &cfg.p {
        let narrowed = narrow_source(source, p)?;
        for &tau in &cfg.taus {
            let policy = plasmode_policy(tau)?;
            for &n in &cfg.n {
                let truth = plasmode_truth(
                    source,
                    p,
                    tau,
                    cfg.noise_fraction,
                    cfg.oracle_draws,
                    derive_seed(seed, 0xCE11, cell_id),
                )?;
                let methods: Vec<WeightMethod> = {
                    let mut ms: Vec<WeightMethod> = Vec::new();
                    for sp in &cfg.estimators {
                        let m = sp.method()?;
                        if !ms.contains(&m) {
                            ms.push(m);
                        }
                    }
                    ms
                };
                let runner = CellRunner {
                    narrowed: &narrowed,
                    cfg,
                    specs: &cfg.estimators,
                    methods,
                    policy: policy.clone(),
                    n,
                };
                let outputs: Vec<Option<ReplicateOutput>> = (0..cfg.n_replicates)
                    .into_par_iter()
                    .map(|r| {
                        let rep_seed = derive_seed(seed, 0xeb_0000 + cell_id, r as u64);
                        runner.run_replicate(rep_seed).ok()
                    })
                    .collect();
                let n_failed = outputs.iter().filter(|o| o.is_none()).count();
                let complete = (n_failed as f64) <= 0.10 * cfg.n_replicates as f64;
                for (si, sp) in cfg.estimators.iter().enumerate() {
                    let ests: Vec<f64> = outputs
                        .iter()
                        .flatten()
                        .map(|o| o.estimates[si])
                        .collect();
                    let m = ests.len().max(1) as f64;
                    let bias = ests.iter().map(|e| e - truth.mu_q_true).sum::<f64>() / m;
                    let coverage = if sp.ci {
                        let covered = outputs
                            .iter()
                            .flatten()
                            .filter_map(|o| o.intervals[si])
                            .filter(|(lo, hi)| *lo <= truth.mu_q_true && truth.mu_q_true <= *hi)
                            .count();
                        Some(covered as f64 / ests.len().max(1) as f64)
                    } else {
                        None
                    };
                    cells.push(CellResult {
                        n,
                        p,
                        tau,
                        estimator: sp.id(),
                        mu_q_true: truth.mu_q_true,
                        truth_mc_se: truth.mc_se,
                        bias,
                        abs_bias: bias.abs(),
                        log10_abs_bias: (bias != 0.0).then(|| bias.abs().log10()),
                        coverage,
                        n_replicates: ests.len(),
                        n_failed,
                        complete,
                    });
                }
                cell_id += 1;
            }
        }
    }
    Ok(SimulationReport {
        cells,
        runtime_seconds: start.elapsed().as_secs_f64(),
    })
}
