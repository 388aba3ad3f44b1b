//! Balancing-weight solvers: the penalized energy-balance program and the
//! comparator constructions (uniform, logistic classification odds).
//!
//! The main solver minimizes
//!
//! ```text
//!   statistic(w) + (λ/n²)·Σ wᵢ²   over   { w ≥ 0, Σ wᵢ = n }
//! ```
//!
//! with accelerated projected gradient descent (momentum with restart on
//! non-descent), exact Euclidean projection onto the scaled simplex, and a
//! backtracking line search seeded at 1/L from a power-iteration estimate of
//! the Hessian norm. For the Euclidean-energy statistic the quadratic form
//! is conditionally negative definite, so the penalized objective is convex
//! on the constraint slice; a short Lanczos probe of the projected Hessian
//! flags any numerical violation instead of trusting that blindly.

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Standardizer};
use crate::energy::{energy_value_raw, par_matvec, BalanceGram, KernelKind};
use crate::error::{Error, Result};
use crate::linalg::cholesky_solve;
use crate::policy::ShiftedSample;
use crate::rng::stream_rng;

/// A feasible weight vector with solver diagnostics.
#[derive(Debug, Clone)]
pub struct Weights {
    pub w: Array1<f64>,
    /// Penalty used by the solve (0 for closed-form constructions).
    pub lambda: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Final objective value, when a solve produced these weights.
    pub objective: Option<f64>,
    /// Euclidean-energy convexity probe failed (solver still ran).
    pub nonconvex: bool,
    /// Logistic fit saw saturated probabilities; odds were clipped.
    pub separation_detected: bool,
    /// Objective per iteration, recorded when requested.
    pub objective_trace: Vec<f64>,
}

impl Weights {
    pub fn n(&self) -> usize {
        self.w.len()
    }

    /// Effective sample size (Σw)²/Σw².
    pub fn ess(&self) -> f64 {
        let s: f64 = self.w.sum();
        let ss: f64 = self.w.iter().map(|v| v * v).sum();
        if ss == 0.0 {
            0.0
        } else {
            s * s / ss
        }
    }

    pub fn validate(&self) -> Result<()> {
        crate::energy::validate_weights(&self.w.view(), self.w.len())
    }
}

/// Uniform (all-ones) weights: the naive unadjusted comparator.
pub fn uniform_weights(n: usize) -> Weights {
    Weights {
        w: Array1::ones(n),
        lambda: 0.0,
        converged: true,
        iterations: 0,
        objective: None,
        nonconvex: false,
        separation_detected: false,
        objective_trace: Vec::new(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepRule {
    /// Backtracking line search from 1/L (default).
    Backtracking,
    /// Diminishing steps (1/L)/√k, no search.
    Diminishing,
}

#[derive(Debug, Clone)]
pub struct SolverConfig {
    /// Ridge penalty λ on the weights.
    pub lambda: f64,
    /// Sup-norm tolerance on the projected-gradient stationarity residual.
    pub tol: f64,
    pub max_iter: usize,
    pub step_rule: StepRule,
    /// Probe the projected Hessian for convexity (Euclidean kind only).
    pub check_convexity: bool,
    /// Keep the per-iteration objective values.
    pub record_trace: bool,
    /// Optional feasible starting point (projected if not feasible).
    pub warm_start: Option<Array1<f64>>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            lambda: 1.0,
            tol: 1e-8,
            max_iter: 20_000,
            step_rule: StepRule::Backtracking,
            check_convexity: true,
            record_trace: false,
            warm_start: None,
        }
    }
}

/// Euclidean projection onto { w ≥ 0, Σ wᵢ = len(w) }.
///
/// Exact sort-and-threshold algorithm; ties are broken by index so the
/// output is deterministic.
pub fn project_scaled_simplex(v: &ArrayView1<f64>) -> Array1<f64> {
    project_to_sum(v, v.len() as f64)
}

pub(crate) fn project_to_sum(v: &ArrayView1<f64>, target: f64) -> Array1<f64> {
    let n = v.len();
    debug_assert!(target > 0.0);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        v[b].partial_cmp(&v[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, &idx) in order.iter().enumerate() {
        cumsum += v[idx];
        let cand = (cumsum - target) / (j + 1) as f64;
        if v[idx] - cand > 0.0 {
            theta = cand;
        } else {
            break;
        }
    }
    v.mapv(|x| (x - theta).max(0.0))
}

/// The penalized balance objective over one Gram.
struct PenalizedObjective<'a> {
    gram: &'a BalanceGram,
    lambda: f64,
}

impl<'a> PenalizedObjective<'a> {
    fn n2(&self) -> f64 {
        let n = self.gram.n() as f64;
        n * n
    }

    fn value(&self, w: &ArrayView1<f64>) -> f64 {
        let pen: f64 = w.iter().map(|v| v * v).sum::<f64>() * self.lambda / self.n2();
        energy_value_raw(self.gram, w) + pen
    }

    /// One matvec for both value and gradient.
    fn value_grad(&self, w: &ArrayView1<f64>) -> (f64, Array1<f64>) {
        let n2 = self.n2();
        let gw = par_matvec(self.gram.g_oo(), w);
        let c = self.gram.os_row_sums();
        let wc = w.dot(c);
        let wgw = w.dot(&gw);
        let wpen: f64 = w.iter().map(|v| v * v).sum();
        match self.gram.kind() {
            KernelKind::EuclideanEnergy => {
                let f = (2.0 * wc - wgw - self.gram.ss_total() + self.lambda * wpen) / n2;
                let mut g = Array1::zeros(w.len());
                for i in 0..w.len() {
                    g[i] = 2.0 * (c[i] - gw[i] + self.lambda * w[i]) / n2;
                }
                (f, g)
            }
            KernelKind::GaussianMmd => {
                let f = (wgw - 2.0 * wc + self.gram.ss_total() + self.lambda * wpen) / n2;
                let mut g = Array1::zeros(w.len());
                for i in 0..w.len() {
                    g[i] = 2.0 * (gw[i] - c[i] + self.lambda * w[i]) / n2;
                }
                (f, g)
            }
        }
    }

    fn hessian_vec(&self, v: &ArrayView1<f64>) -> Array1<f64> {
        let n2 = self.n2();
        let gv = par_matvec(self.gram.g_oo(), v);
        match self.gram.kind() {
            KernelKind::EuclideanEnergy => {
                Array1::from_shape_fn(v.len(), |i| 2.0 * (self.lambda * v[i] - gv[i]) / n2)
            }
            KernelKind::GaussianMmd => {
                Array1::from_shape_fn(v.len(), |i| 2.0 * (gv[i] + self.lambda * v[i]) / n2)
            }
        }
    }

    /// Spectral-norm estimate of the Hessian by power iteration.
    fn lipschitz_estimate(&self) -> f64 {
        let n = self.gram.n();
        let mut rng = stream_rng(0x9a7c_11, n as u64, 0);
        let mut v = Array1::from_shape_fn(n, |_| rng.random::<f64>() - 0.5);
        let norm = v.dot(&v).sqrt();
        if norm == 0.0 {
            return 1.0;
        }
        v.mapv_inplace(|x| x / norm);
        let mut lam = 1.0;
        for _ in 0..50 {
            let hv = self.hessian_vec(&v.view());
            let hn = hv.dot(&hv).sqrt();
            if hn <= f64::MIN_POSITIVE {
                break;
            }
            lam = hn;
            v = hv.mapv(|x| x / hn);
        }
        lam.max(1e-300)
    }
}

/// Smallest Ritz value of op restricted to the given dimension, from a
/// 20-step Lanczos recurrence with full reorthogonalization.
fn lanczos_smallest_eig<F: Fn(&ArrayView1<f64>) -> Array1<f64>>(
    op: F,
    n: usize,
    steps: usize,
) -> f64 {
    if n == 1 {
        let e = Array1::ones(1);
        return op(&e.view())[0];
    }
    let mut rng = stream_rng(0x1a9c_05, n as u64, 1);
    let mut q = Array1::from_shape_fn(n, |_| rng.random::<f64>() - 0.5);
    // start in the tangent space of the sum constraint
    let mean = q.sum() / n as f64;
    q.mapv_inplace(|x| x - mean);
    let qn = q.dot(&q).sqrt();
    if qn == 0.0 {
        return 0.0;
    }
    q.mapv_inplace(|x| x / qn);

    let mut basis: Vec<Array1<f64>> = vec![q.clone()];
    let mut alphas: Vec<f64> = Vec::new();
    let mut betas: Vec<f64> = Vec::new();
    let mut q_prev: Option<Array1<f64>> = None;
    let steps = steps.min(n.saturating_sub(1)).max(1);
    for _ in 0..steps {
        let mut r = op(&q.view());
        let alpha = q.dot(&r);
        alphas.push(alpha);
        r = &r - &q.mapv(|x| x * alpha);
        if let Some(prev) = &q_prev {
            let b = *betas.last().unwrap();
            r = &r - &prev.mapv(|x| x * b);
        }
        // full reorthogonalization keeps the recurrence honest
        for b in &basis {
            let proj = b.dot(&r);
            r = &r - &b.mapv(|x| x * proj);
        }
        let beta = r.dot(&r).sqrt();
        if beta < 1e-14 {
            break;
        }
        betas.push(beta);
        q_prev = Some(q.clone());
        q = r.mapv(|x| x / beta);
        basis.push(q.clone());
    }
    if betas.len() == alphas.len() {
        betas.pop();
    }
    tridiag_smallest_eig(&alphas, &betas)
}

/// Smallest eigenvalue of a symmetric tridiagonal matrix by Sturm bisection.
fn tridiag_smallest_eig(alpha: &[f64], beta: &[f64]) -> f64 {
    let m = alpha.len();
    if m == 0 {
        return 0.0;
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..m {
        let bl = if i > 0 { beta[i - 1].abs() } else { 0.0 };
        let br = if i < m - 1 { beta[i].abs() } else { 0.0 };
        lo = lo.min(alpha[i] - bl - br);
        hi = hi.max(alpha[i] + bl + br);
    }
    let count_below = |x: f64| -> usize {
        let mut count = 0;
        let mut d = 1.0;
        for i in 0..m {
            let b2 = if i > 0 { beta[i - 1] * beta[i - 1] } else { 0.0 };
            d = alpha[i] - x - b2 / d;
            if d == 0.0 {
                d = -1e-300;
            }
            if d < 0.0 {
                count += 1;
            }
        }
        count
    };
    let mut a = lo - 1e-12;
    let mut b = hi + 1e-12;
    for _ in 0..80 {
        let mid = 0.5 * (a + b);
        if count_below(mid) >= 1 {
            b = mid;
        } else {
            a = mid;
        }
    }
    0.5 * (a + b)
}

/// Solve the penalized energy-balancing program over the scaled simplex.
///
/// Always returns a feasible weight vector; when the iteration budget runs
/// out the best iterate is returned with `converged = false`.
pub fn solve_energy_weights(g: &BalanceGram, cfg: &SolverConfig) -> Result<Weights> {
    if !(cfg.lambda >= 0.0 && cfg.lambda.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "lambda must be finite and >= 0, got {}",
            cfg.lambda
        )));
    }
    if !(cfg.tol > 0.0) {
        return Err(Error::InvalidConfig("tol must be > 0".into()));
    }
    if cfg.max_iter == 0 {
        return Err(Error::InvalidConfig("max_iter must be >= 1".into()));
    }
    let n = g.n();
    let obj = PenalizedObjective {
        gram: g,
        lambda: cfg.lambda,
    };

    let mut nonconvex = false;
    if cfg.check_convexity && g.kind() == KernelKind::EuclideanEnergy && n > 1 {
        // projected Hessian P H P on the sum-constraint tangent space
        let proj_op = |v: &ArrayView1<f64>| -> Array1<f64> {
            let mean_in = v.sum() / n as f64;
            let centered = v.mapv(|x| x - mean_in);
            let hv = obj.hessian_vec(&centered.view());
            let mean_out = hv.sum() / n as f64;
            hv.mapv(|x| x - mean_out)
        };
        let min_eig = lanczos_smallest_eig(proj_op, n, 20);
        let scale = obj.lipschitz_estimate();
        if min_eig < -1e-10 * scale.max(1e-30) {
            nonconvex = true;
        }
    }

    let start = match &cfg.warm_start {
        Some(w0) => {
            if w0.len() != n {
                return Err(Error::DimensionMismatch(format!(
                    "warm start has {} entries for {} rows",
                    w0.len(),
                    n
                )));
            }
            project_scaled_simplex(&w0.view())
        }
        None => Array1::ones(n),
    };

    if n == 1 {
        return Ok(Weights {
            w: Array1::ones(1),
            lambda: cfg.lambda,
            converged: true,
            iterations: 0,
            objective: Some(obj.value(&Array1::ones(1).view())),
            nonconvex,
            separation_detected: false,
            objective_trace: Vec::new(),
        });
    }

    let lip = obj.lipschitz_estimate();
    let s0 = 1.0 / lip;
    let mut s = s0;
    let s_min = s0 * 2f64.powi(-48);

    let mut w = start;
    let mut f_w = obj.value(&w.view());
    let mut y = w.clone();
    let mut t = 1.0f64;
    let mut trace: Vec<f64> = Vec::new();
    if cfg.record_trace {
        trace.push(f_w);
    }

    let mut converged = false;
    let mut iterations = 0;
    for iter in 1..=cfg.max_iter {
        iterations = iter;
        let (fy, gy) = obj.value_grad(&y.view());
        let mut z;
        let mut fz;
        match cfg.step_rule {
            StepRule::Backtracking => loop {
                let cand = &y - &gy.mapv(|v| v * s);
                z = project_scaled_simplex(&cand.view());
                fz = obj.value(&z.view());
                let dz = &z - &y;
                let quad = fy + gy.dot(&dz) + dz.dot(&dz) / (2.0 * s);
                if fz <= quad + 1e-12 || s <= s_min {
                    break;
                }
                s *= 0.5;
            },
            StepRule::Diminishing => {
                let sk = s0 / (iter as f64).sqrt();
                let cand = &y - &gy.mapv(|v| v * sk);
                z = project_scaled_simplex(&cand.view());
                fz = obj.value(&z.view());
            }
        }

        if fz > f_w + 1e-12 {
            // momentum overshoot: fall back to a plain projected-gradient
            // step from the best point and restart the momentum sequence
            let (fw, gw) = obj.value_grad(&w.view());
            loop {
                let cand = &w - &gw.mapv(|v| v * s);
                z = project_scaled_simplex(&cand.view());
                fz = obj.value(&z.view());
                let dz = &z - &w;
                let quad = fw + gw.dot(&dz) + dz.dot(&dz) / (2.0 * s);
                if fz <= quad + 1e-12 || s <= s_min {
                    break;
                }
                s *= 0.5;
            }
            t = 1.0;
        }
        if fz > f_w {
            // numerically stuck at the floor of the step size
            z = w.clone();
            fz = f_w;
        }

        let (_, gz) = obj.value_grad(&z.view());
        let inner = &z - &gz;
        let residual = {
            let pz = project_scaled_simplex(&inner.view());
            z.iter()
                .zip(pz.iter())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max)
        };

        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let beta = (t - 1.0) / t_next;
        let diff = &z - &w;
        y = &z + &diff.mapv(|v| v * beta);
        w = z;
        f_w = fz;
        t = t_next;
        if cfg.record_trace {
            trace.push(f_w);
        }
        if residual <= cfg.tol {
            converged = true;
            break;
        }
    }

    Ok(Weights {
        w,
        lambda: cfg.lambda,
        converged,
        iterations,
        objective: Some(f_w),
        nonconvex,
        separation_detected: false,
        objective_trace: trace,
    })
}

/// Classification-odds weights from a ridge-regularized logistic fit of
/// shifted-vs-observed membership on joint (x, a) features.
///
/// Weights are the odds π̂/(1−π̂) at the observed rows, rescaled to sum to n.
/// Probabilities are clipped to [1e-6, 1−1e-6]; clipping sets the
/// separation flag.
pub fn classification_weights(d: &Dataset, s: &ShiftedSample) -> Result<Weights> {
    let n = d.n();
    if n < 2 {
        return Err(Error::TooFewRows(format!(
            "classification weights need n >= 2, got {n}"
        )));
    }
    if s.n() != n {
        return Err(Error::DimensionMismatch(format!(
            "dataset has {n} rows, shifted sample has {}",
            s.n()
        )));
    }
    let obs = d.joint();
    let shift = s.joint(d);
    let m = obs.ncols();
    // pooled standardization of the 2n classifier rows
    let mut pooled = Array2::zeros((2 * n, m));
    pooled.slice_mut(ndarray::s![..n, ..]).assign(&obs);
    pooled.slice_mut(ndarray::s![n.., ..]).assign(&shift);
    let std = Standardizer::fit(&pooled.view());
    let z = std.transform(&pooled.view())?;

    // design with intercept
    let ncoef = m + 1;
    let mut design = Array2::ones((2 * n, ncoef));
    design.slice_mut(ndarray::s![.., 1..]).assign(&z);
    let labels: Vec<f64> = (0..2 * n).map(|i| if i < n { 0.0 } else { 1.0 }).collect();

    const RIDGE: f64 = 1e-6;
    const CLIP: f64 = 1e-6;
    let mut beta = Array1::zeros(ncoef);
    let mut converged = false;
    for _ in 0..100 {
        let eta = design.dot(&beta);
        let mut xtwx = Array2::zeros((ncoef, ncoef));
        let mut xtwz = Array1::zeros(ncoef);
        for i in 0..2 * n {
            let e = eta[i].clamp(-30.0, 30.0);
            let p = 1.0 / (1.0 + (-e).exp());
            let wi = (p * (1.0 - p)).max(1e-10);
            let zi = e + (labels[i] - p) / wi;
            let row = design.row(i);
            for r in 0..ncoef {
                let xr = row[r] * wi;
                xtwz[r] += xr * zi;
                for c in r..ncoef {
                    xtwx[[r, c]] += xr * row[c];
                }
            }
        }
        for r in 0..ncoef {
            for c in 0..r {
                xtwx[[r, c]] = xtwx[[c, r]];
            }
        }
        // ridge on the non-intercept coefficients
        for r in 1..ncoef {
            xtwx[[r, r]] += RIDGE;
        }
        let beta_new = cholesky_solve(&xtwx, &xtwz)?;
        let delta = beta_new
            .iter()
            .zip(beta.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        beta = beta_new;
        if delta < 1e-10 {
            converged = true;
            break;
        }
    }

    let eta_obs = design.slice(ndarray::s![..n, ..]).dot(&beta);
    let mut separation = false;
    let mut w = Array1::zeros(n);
    for i in 0..n {
        let p = 1.0 / (1.0 + (-eta_obs[i]).exp());
        let clipped = p.clamp(CLIP, 1.0 - CLIP);
        if p != clipped {
            separation = true;
        }
        w[i] = clipped / (1.0 - clipped);
    }
    let total: f64 = w.sum();
    if total <= 0.0 || !total.is_finite() {
        return Err(Error::InvalidWeights(
            "classification odds degenerate".into(),
        ));
    }
    w.mapv_inplace(|v| v * n as f64 / total);

    Ok(Weights {
        w,
        lambda: 0.0,
        converged,
        iterations: 0,
        objective: None,
        nonconvex: false,
        separation_detected: separation,
        objective_trace: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::{build_gram, build_gram_from_points, weighted_energy_distance};
    use crate::policy::{shift_dataset, Block, Policy};
    use ndarray::array;
    use std::sync::Arc;

    fn random_points(n: usize, d: usize, seed: u64) -> Array2<f64> {
        let mut rng = stream_rng(seed, 0, 0);
        Array2::from_shape_fn((n, d), |_| 2.0 * rng.random::<f64>() - 1.0)
    }

    #[test]
    fn projection_spec_example() {
        let v = array![3.0, -1.0];
        let p = project_scaled_simplex(&v.view());
        assert_eq!(p[0], 2.0);
        assert_eq!(p[1], 0.0);
    }

    #[test]
    fn projection_of_feasible_point_is_identity() {
        let v = array![0.5, 1.5, 1.0];
        let p = project_scaled_simplex(&v.view());
        for (a, b) in v.iter().zip(p.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn projection_feasibility_random() {
        let mut rng = stream_rng(3, 1, 0);
        for trial in 0..200 {
            let n = 1 + (trial % 17);
            let v = Array1::from_shape_fn(n, |_| 20.0 * rng.random::<f64>() - 10.0);
            let p = project_scaled_simplex(&v.view());
            assert!(p.iter().all(|&x| x >= 0.0));
            let sum: f64 = p.sum();
            assert!((sum - n as f64).abs() < 1e-9 * n as f64, "sum={sum} n={n}");
        }
    }

    #[test]
    fn solver_n1_returns_the_only_feasible_point() {
        let obs = array![[0.0]];
        let shift = array![[1.0]];
        let g = build_gram_from_points(
            &obs.view(),
            &shift.view(),
            KernelKind::EuclideanEnergy,
            None,
        )
        .unwrap();
        let w = solve_energy_weights(&g, &SolverConfig::default()).unwrap();
        assert_eq!(w.w[0], 1.0);
        assert!(w.converged);
    }

    #[test]
    fn identity_policy_solves_to_uniform() {
        let d = Dataset::from_parts(
            random_points(30, 3, 11),
            random_points(30, 2, 12),
            Array1::zeros(30),
        )
        .unwrap();
        let s = shift_dataset(&Policy::identity(2), &d).unwrap();
        for kind in [KernelKind::EuclideanEnergy, KernelKind::GaussianMmd] {
            let (g, _) = build_gram(&d, &s, kind, None).unwrap();
            let w = solve_energy_weights(&g, &SolverConfig::default()).unwrap();
            assert!(w.converged, "{kind}");
            for &v in w.w.iter() {
                assert!((v - 1.0).abs() < 1e-6, "{kind}: {v}");
            }
        }
    }

    #[test]
    fn solved_weights_never_worse_than_uniform() {
        for (seed, kind) in [
            (21u64, KernelKind::EuclideanEnergy),
            (22, KernelKind::GaussianMmd),
        ] {
            let n = 100;
            let obs = random_points(n, 3, seed);
            let shift = obs.mapv(|v| 0.8 * v + 0.15);
            let g = build_gram_from_points(&obs.view(), &shift.view(), kind, None).unwrap();
            let sol = solve_energy_weights(&g, &SolverConfig::default()).unwrap();
            sol.validate().unwrap();
            let uni = Array1::ones(n);
            let d_uni = weighted_energy_distance(&g, &uni.view()).unwrap().value;
            let d_sol = weighted_energy_distance(&g, &sol.w.view()).unwrap().value;
            // the uniform point has a nonzero tangential gradient here, so
            // improvement must be strict
            assert!(
                d_sol <= d_uni - 1e-10,
                "{kind}: solved {d_sol} vs uniform {d_uni}"
            );
        }
    }

    #[test]
    fn huge_lambda_drives_weights_to_uniform() {
        let n = 40;
        let obs = random_points(n, 2, 31);
        let shift = obs.mapv(|v| 0.7 * v + 0.3);
        let g = build_gram_from_points(
            &obs.view(),
            &shift.view(),
            KernelKind::EuclideanEnergy,
            None,
        )
        .unwrap();
        let cfg = SolverConfig {
            lambda: 1e12,
            ..Default::default()
        };
        let w = solve_energy_weights(&g, &cfg).unwrap();
        for &v in w.w.iter() {
            assert!((v - 1.0).abs() < 1e-4, "{v}");
        }
    }

    #[test]
    fn objective_trace_is_monotone() {
        for kind in [KernelKind::EuclideanEnergy, KernelKind::GaussianMmd] {
            let n = 60;
            let obs = random_points(n, 3, 41);
            let shift = obs.mapv(|v| 0.85 * v - 0.2);
            let g = build_gram_from_points(&obs.view(), &shift.view(), kind, None).unwrap();
            let cfg = SolverConfig {
                record_trace: true,
                ..Default::default()
            };
            let w = solve_energy_weights(&g, &cfg).unwrap();
            assert!(w.converged);
            for pair in w.objective_trace.windows(2) {
                assert!(pair[1] <= pair[0] + 1e-12, "{kind}: {} -> {}", pair[0], pair[1]);
            }
        }
    }

    #[test]
    fn unconverged_solve_still_feasible() {
        let n = 50;
        let obs = random_points(n, 3, 51);
        let shift = obs.mapv(|v| 0.6 * v + 0.4);
        let g = build_gram_from_points(
            &obs.view(),
            &shift.view(),
            KernelKind::EuclideanEnergy,
            None,
        )
        .unwrap();
        let cfg = SolverConfig {
            max_iter: 2,
            tol: 1e-14,
            ..Default::default()
        };
        let w = solve_energy_weights(&g, &cfg).unwrap();
        assert!(!w.converged);
        w.validate().unwrap();
    }

    #[test]
    fn diminishing_step_rule_still_descends_toward_optimum() {
        let n = 25;
        let obs = random_points(n, 2, 61);
        let shift = obs.mapv(|v| 0.8 * v + 0.1);
        let g = build_gram_from_points(
            &obs.view(),
            &shift.view(),
            KernelKind::GaussianMmd,
            None,
        )
        .unwrap();
        let fast = solve_energy_weights(&g, &SolverConfig::default()).unwrap();
        let slow_cfg = SolverConfig {
            step_rule: StepRule::Diminishing,
            max_iter: 5000,
            tol: 1e-6,
            ..Default::default()
        };
        let slow = solve_energy_weights(&g, &slow_cfg).unwrap();
        slow.validate().unwrap();
        assert!(slow.objective.unwrap() <= fast.objective.unwrap() + 1e-4);
    }

    #[test]
    fn warm_start_accepted_and_projected() {
        let n = 30;
        let obs = random_points(n, 2, 71);
        let shift = obs.mapv(|v| 0.9 * v + 0.05);
        let g = build_gram_from_points(
            &obs.view(),
            &shift.view(),
            KernelKind::EuclideanEnergy,
            None,
        )
        .unwrap();
        let cold = solve_energy_weights(&g, &SolverConfig::default()).unwrap();
        let cfg = SolverConfig {
            warm_start: Some(cold.w.clone()),
            ..Default::default()
        };
        let warm = solve_energy_weights(&g, &cfg).unwrap();
        assert!(warm.converged);
        assert!(warm.iterations <= cold.iterations);
        let drift: f64 = cold
            .w
            .iter()
            .zip(warm.w.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(drift < 1e-6, "drift={drift}");
    }

    #[test]
    fn ess_of_uniform_and_degenerate_weights() {
        let u = uniform_weights(5);
        assert!((u.ess() - 5.0).abs() < 1e-12);
        let mut w = uniform_weights(2);
        w.w = array![2.0, 0.0];
        assert!((w.ess() - 1.0).abs() < 1e-12);
        let mut onehot = uniform_weights(4);
        onehot.w = array![4.0, 0.0, 0.0, 0.0];
        assert!((onehot.ess() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn classification_weights_identity_policy_near_one() {
        let d = Dataset::from_parts(
            random_points(200, 2, 81),
            random_points(200, 1, 82),
            Array1::zeros(200),
        )
        .unwrap();
        let s = shift_dataset(&Policy::identity(1), &d).unwrap();
        let w = classification_weights(&d, &s).unwrap();
        assert!(!w.separation_detected);
        for &v in w.w.iter() {
            assert!((v - 1.0).abs() < 1e-3, "{v}");
        }
    }

    #[test]
    fn classification_weights_flag_separation() {
        let d = Dataset::from_parts(
            Array2::zeros((4, 0)),
            array![[0.0], [0.5], [1.0], [1.5]],
            Array1::zeros(4),
        )
        .unwrap();
        let p = Policy::scale("far", vec![1.0]).unwrap();
        // shift far away by hand: scale makes no separation, so use a block
        let apply: Arc<dyn Fn(ndarray::ArrayView1<f64>, ndarray::ArrayView1<f64>) -> Array1<f64> + Send + Sync> =
            Arc::new(|_x, a| a.mapv(|v| v + 100.0));
        let invert: Arc<dyn Fn(ndarray::ArrayView1<f64>, ndarray::ArrayView1<f64>) -> Array1<f64> + Send + Sync> =
            Arc::new(|_x, a| a.mapv(|v| v - 100.0));
        let member: Arc<dyn Fn(ndarray::ArrayView1<f64>, ndarray::ArrayView1<f64>) -> bool + Send + Sync> =
            Arc::new(|_x, _a| true);
        let far = Policy::new("far-shift", vec![Block::new(member, apply, invert)]);
        let _ = p;
        let s = shift_dataset(&far, &d).unwrap();
        let w = classification_weights(&d, &s).unwrap();
        assert!(w.separation_detected);
        for &v in w.w.iter() {
            assert!(v.is_finite());
        }
    }

    #[test]
    fn classification_odds_match_analytic_gaussian_ratio() {
        use rand_distr::{Distribution, StandardNormal};
        let n = 100_000;
        let delta = 0.5;
        let mut rng = stream_rng(91, 0, 0);
        let a = Array2::from_shape_fn((n, 1), |_| {
            <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
        });
        let d = Dataset::from_parts(Array2::zeros((n, 0)), a, Array1::zeros(n)).unwrap();
        let apply: Arc<dyn Fn(ndarray::ArrayView1<f64>, ndarray::ArrayView1<f64>) -> Array1<f64> + Send + Sync> =
            Arc::new(move |_x, t| t.mapv(|v| v + delta));
        let invert: Arc<dyn Fn(ndarray::ArrayView1<f64>, ndarray::ArrayView1<f64>) -> Array1<f64> + Send + Sync> =
            Arc::new(move |_x, t| t.mapv(|v| v - delta));
        let member: Arc<dyn Fn(ndarray::ArrayView1<f64>, ndarray::ArrayView1<f64>) -> bool + Send + Sync> =
            Arc::new(|_x, _a| true);
        let shift_policy = Policy::new("loc-shift", vec![Block::new(member, apply, invert)]);
        let s = shift_dataset(&shift_policy, &d).unwrap();
        let w = classification_weights(&d, &s).unwrap();

        // true density ratio at t: exp(t·δ − δ²/2), normalized to sum n
        let mut truth = Array1::from_shape_fn(n, |i| {
            let t = d.a()[[i, 0]];
            (t * delta - delta * delta / 2.0).exp()
        });
        let total: f64 = truth.sum();
        truth.mapv_inplace(|v| v * n as f64 / total);
        let mut checked = 0;
        for i in 0..n {
            let t = d.a()[[i, 0]];
            if t.abs() <= 2.0 {
                let rel = (w.w[i] - truth[i]).abs() / truth[i];
                assert!(rel < 0.05, "t={t}: fitted {} vs true {}", w.w[i], truth[i]);
                checked += 1;
            }
        }
        assert!(checked > n / 2);
    }

    #[test]
    fn lanczos_finds_smallest_eigenvalue_of_known_operator() {
        // diagonal operator restricted to the centered subspace of R^6
        let diag = array![5.0, 4.0, 3.0, 2.0, 1.0, -2.0];
        let op = |v: &ArrayView1<f64>| -> Array1<f64> {
            let mean_in = v.sum() / 6.0;
            let centered = v.mapv(|x| x - mean_in);
            let hv = Array1::from_shape_fn(6, |i| diag[i] * centered[i]);
            let mean_out = hv.sum() / 6.0;
            hv.mapv(|x| x - mean_out)
        };
        let min_eig = lanczos_smallest_eig(op, 6, 20);
        // the projected operator's smallest eigenvalue is near -2
        assert!(min_eig < -1.0, "min_eig={min_eig}");
    }
}
