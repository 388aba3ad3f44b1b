//! Marginal sensitivity analysis: worst-case bounds on the policy effect
//! when the true density-ratio weights may differ from the nominal ones by
//! a factor of at most Λ in either direction, and the search for the
//! largest Λ that keeps the effect significant.
//!
//! The bound on the normalized weighted mean over the box
//! w*ᵢ ∈ [wᵢ/Λ, wᵢΛ] is computed exactly: the optimum of a linear-fractional
//! objective over a box sits at a threshold vertex in the outcome order, so
//! scanning the n+1 split positions finds it.

use ndarray::ArrayView1;
use serde::Serialize;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::estimate::{
    quantile_sorted, run_replicates, Pipeline, Recipe, ReplicateFit,
};
use crate::outcome::OutcomeModel;
use crate::policy::{Policy, ShiftedSample};
use crate::balance::Weights;

/// Sharp bounds of Σw*y / Σw* over w*ᵢ ∈ [wᵢ/λ, wᵢλ].
pub fn extremal_bounds(
    y: &ArrayView1<f64>,
    w: &ArrayView1<f64>,
    lambda: f64,
) -> Result<(f64, f64)> {
    if lambda < 1.0 || !lambda.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "sensitivity lambda must be >= 1, got {lambda}"
        )));
    }
    let n = y.len();
    if w.len() != n || n == 0 {
        return Err(Error::DimensionMismatch(format!(
            "{} outcomes for {} weights",
            n,
            w.len()
        )));
    }
    if w.iter().any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(Error::InvalidWeights(
            "sensitivity weights must be nonnegative and finite".into(),
        ));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        y[a].partial_cmp(&y[b])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    // prefix sums over the sorted order
    let mut pre_w = vec![0.0; n + 1];
    let mut pre_wy = vec![0.0; n + 1];
    for (pos, &i) in order.iter().enumerate() {
        pre_w[pos + 1] = pre_w[pos] + w[i];
        pre_wy[pos + 1] = pre_wy[pos] + w[i] * y[i];
    }
    let tot_w = pre_w[n];
    let tot_wy = pre_wy[n];
    if tot_w <= 0.0 {
        return Err(Error::InvalidWeights("weights sum to zero".into()));
    }
    let inv = 1.0 / lambda;
    let mut upper = f64::NEG_INFINITY;
    let mut lower = f64::INFINITY;
    for m in 0..=n {
        // upper: ranks below m shrink, ranks at or above m grow
        let num_u = pre_wy[m] * inv + (tot_wy - pre_wy[m]) * lambda;
        let den_u = pre_w[m] * inv + (tot_w - pre_w[m]) * lambda;
        if den_u > 0.0 {
            upper = upper.max(num_u / den_u);
        }
        let num_l = pre_wy[m] * lambda + (tot_wy - pre_wy[m]) * inv;
        let den_l = pre_w[m] * lambda + (tot_w - pre_w[m]) * inv;
        if den_l > 0.0 {
            lower = lower.min(num_l / den_l);
        }
    }
    Ok((lower, upper))
}

/// Effect-scale bounds from the pieces of an augmented fit: extremal bounds
/// of the weighted residual term, shifted by the plug-in and the observed
/// mean.
pub fn effect_bounds_parts(
    residuals: &ArrayView1<f64>,
    w: &ArrayView1<f64>,
    plug_in: f64,
    observed_mean: f64,
    lambda: f64,
) -> Result<(f64, f64)> {
    let (lo, hi) = extremal_bounds(residuals, w, lambda)?;
    Ok((
        lo + plug_in - observed_mean,
        hi + plug_in - observed_mean,
    ))
}

/// Effect-scale bounds at Λ for a dataset, weights, and optional outcome
/// model (residualized when a model is given, raw outcomes otherwise).
pub fn effect_bounds(
    d: &Dataset,
    s: &ShiftedSample,
    w: &Weights,
    model: Option<&OutcomeModel>,
    lambda: f64,
) -> Result<(f64, f64)> {
    if w.n() != d.n() {
        return Err(Error::DimensionMismatch(format!(
            "{} weights for {} rows",
            w.n(),
            d.n()
        )));
    }
    let nf = d.n() as f64;
    let observed_mean = d.y().sum() / nf;
    let (residuals, plug_in) = match model {
        None => (d.y().clone(), 0.0),
        Some(m) => {
            let mu_obs = m.predict(&d.joint().view())?;
            let mu_shift = m.predict(&s.joint(d).view())?;
            (d.y() - &mu_obs, mu_shift.sum() / nf)
        }
    };
    effect_bounds_parts(&residuals.view(), &w.w.view(), plug_in, observed_mean, lambda)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum LambdaStarFlag {
    /// The search bracketed Λ* strictly inside (1, lambda_max).
    Interior,
    /// The effect is not significant even with no confounding allowance.
    NotSignificantAtOne,
    /// Still significant at the top of the search range.
    SignificantAtMax,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct LambdaStar {
    pub value: f64,
    pub flag: LambdaStarFlag,
}

/// Bound-side significance at one Λ from cached bootstrap replicates.
///
/// With a positive point effect the lower bound must stay significantly
/// above zero; with a negative one the upper bound must stay below.
fn significant_at(
    point_effect: f64,
    reps: &[Option<ReplicateFit>],
    lambda: f64,
    level: f64,
) -> Result<bool> {
    let alpha = 1.0 - level;
    let mut vals: Vec<f64> = Vec::with_capacity(reps.len());
    for rep in reps.iter().flatten() {
        let (lo, hi) = effect_bounds_parts(
            &rep.residuals.view(),
            &rep.weights.view(),
            rep.plug_in,
            rep.observed_mean,
            lambda,
        )?;
        vals.push(if point_effect >= 0.0 { lo } else { hi });
    }
    if vals.is_empty() {
        return Err(Error::BootstrapUnstable(
            "no bootstrap replicates available".into(),
        ));
    }
    vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(if point_effect >= 0.0 {
        quantile_sorted(&vals, alpha / 2.0) > 0.0
    } else {
        quantile_sorted(&vals, 1.0 - alpha / 2.0) < 0.0
    })
}

/// Λ* from cached replicates: bisection on [1, lambda_max] to 0.01.
pub fn largest_significant_lambda_cached(
    full: &ReplicateFit,
    reps: &[Option<ReplicateFit>],
    lambda_max: f64,
    level: f64,
) -> Result<LambdaStar> {
    if lambda_max < 1.0 {
        return Err(Error::InvalidConfig(format!(
            "lambda_max must be >= 1, got {lambda_max}"
        )));
    }
    let point_effect = full.estimate - full.observed_mean;
    if !significant_at(point_effect, reps, 1.0, level)? {
        return Ok(LambdaStar {
            value: 1.0,
            flag: LambdaStarFlag::NotSignificantAtOne,
        });
    }
    if significant_at(point_effect, reps, lambda_max, level)? {
        return Ok(LambdaStar {
            value: lambda_max,
            flag: LambdaStarFlag::SignificantAtMax,
        });
    }
    let mut lo = 1.0;
    let mut hi = lambda_max;
    while hi - lo > 0.01 {
        let mid = 0.5 * (lo + hi);
        if significant_at(point_effect, reps, mid, level)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(LambdaStar {
        value: lo,
        flag: LambdaStarFlag::Interior,
    })
}

/// Full-pipeline Λ* search: bootstrap once, then bisect over the cached
/// replicate pieces (the bounds are cheap given residuals and weights).
pub fn largest_significant_lambda(
    d: &Dataset,
    policy: &Policy,
    recipe: &Recipe,
    lambda_max: f64,
    n_boot: usize,
    seed: u64,
) -> Result<LambdaStar> {
    let pipeline = Pipeline::new(d, policy, recipe, seed)?;
    let full = pipeline.fit_full()?;
    let reps = run_replicates(&pipeline, n_boot, seed)?;
    largest_significant_lambda_cached(&full, &reps, lambda_max, recipe.level)
}

/// Point and interval bounds across a Λ grid, plus Λ*.
#[derive(Debug, Clone, Serialize)]
pub struct SensitivityCurve {
    pub lambdas: Vec<f64>,
    /// Point bounds [lower, upper] of the effect at each Λ.
    pub bounds: Vec<(f64, f64)>,
    /// Percentile-bootstrap envelope [lower CI of lower bound, upper CI of
    /// upper bound] at each Λ.
    pub ci_bounds: Vec<(f64, f64)>,
    pub lambda_star: f64,
    pub lambda_star_flag: LambdaStarFlag,
    pub point_effect: f64,
    pub level: f64,
}

pub fn sensitivity_curve(
    d: &Dataset,
    policy: &Policy,
    recipe: &Recipe,
    lambdas: &[f64],
    lambda_max: f64,
    n_boot: usize,
    seed: u64,
) -> Result<SensitivityCurve> {
    if lambdas.is_empty() || lambdas.windows(2).any(|p| p[1] <= p[0]) || lambdas[0] < 1.0 {
        return Err(Error::InvalidConfig(
            "lambda grid must be increasing and start at >= 1".into(),
        ));
    }
    let pipeline = Pipeline::new(d, policy, recipe, seed)?;
    let full = pipeline.fit_full()?;
    let reps = run_replicates(&pipeline, n_boot, seed)?;
    let alpha = 1.0 - recipe.level;

    let mut bounds = Vec::with_capacity(lambdas.len());
    let mut ci_bounds = Vec::with_capacity(lambdas.len());
    for &lam in lambdas {
        let b = effect_bounds_parts(
            &full.residuals.view(),
            &full.weights.view(),
            full.plug_in,
            full.observed_mean,
            lam,
        )?;
        bounds.push(b);
        let mut los = Vec::new();
        let mut his = Vec::new();
        for rep in reps.iter().flatten() {
            let (lo, hi) = effect_bounds_parts(
                &rep.residuals.view(),
                &rep.weights.view(),
                rep.plug_in,
                rep.observed_mean,
                lam,
            )?;
            los.push(lo);
            his.push(hi);
        }
        los.sort_by(|a, b| a.partial_cmp(b).unwrap());
        his.sort_by(|a, b| a.partial_cmp(b).unwrap());
        ci_bounds.push((
            quantile_sorted(&los, alpha / 2.0),
            quantile_sorted(&his, 1.0 - alpha / 2.0),
        ));
    }
    let star = largest_significant_lambda_cached(&full, &reps, lambda_max, recipe.level)?;
    Ok(SensitivityCurve {
        lambdas: lambdas.to_vec(),
        bounds,
        ci_bounds,
        lambda_star: star.value,
        lambda_star_flag: star.flag,
        point_effect: full.estimate - full.observed_mean,
        level: recipe.level,
    })
}
