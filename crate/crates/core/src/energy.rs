//! Weighted energy distance and Gaussian MMD between the weighted observed
//! sample and the policy-shifted sample.
//!
//! Both statistics are quadratic in the weight vector and share one cached
//! [`BalanceGram`] of the three pairwise blocks (observed–observed,
//! observed–shifted, shifted–shifted) over standardized joint (x, a)
//! coordinates. All reductions run in a fixed order (sequential within each
//! row, rows folded in index order) so values are bit-stable across runs and
//! thread counts.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Standardizer};
use crate::error::{Error, Result};
use crate::policy::ShiftedSample;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KernelKind {
    /// Pairwise Euclidean norms; the energy-distance quadratic form.
    #[serde(rename = "euclidean-energy")]
    EuclideanEnergy,
    /// Gaussian kernel values; the biased MMD² quadratic form.
    #[serde(rename = "gaussian-mmd")]
    GaussianMmd,
}

impl std::fmt::Display for KernelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            KernelKind::EuclideanEnergy => f.write_str("euclidean-energy"),
            KernelKind::GaussianMmd => f.write_str("gaussian-mmd"),
        }
    }
}

/// Scalar value of a balance statistic.
#[derive(Debug, Clone, Copy)]
pub struct EnergyStat {
    pub value: f64,
    pub kind: KernelKind,
}

/// The three pairwise blocks behind the balance quadratic form.
#[derive(Debug, Clone)]
pub struct BalanceGram {
    g_oo: Array2<f64>,
    g_os: Array2<f64>,
    g_ss: Array2<f64>,
    kind: KernelKind,
    bandwidth: Option<f64>,
    /// Row sums of g_os (the linear term of the quadratic form).
    os_row_sums: Array1<f64>,
    /// Total of g_ss (the constant term).
    ss_total: f64,
}

impl BalanceGram {
    fn assemble(
        g_oo: Array2<f64>,
        g_os: Array2<f64>,
        g_ss: Array2<f64>,
        kind: KernelKind,
        bandwidth: Option<f64>,
    ) -> BalanceGram {
        let os_row_sums = Array1::from_iter(g_os.axis_iter(Axis(0)).map(|r| r.sum()));
        let ss_total = g_ss.axis_iter(Axis(0)).map(|r| r.sum()).sum();
        BalanceGram {
            g_oo,
            g_os,
            g_ss,
            kind,
            bandwidth,
            os_row_sums,
            ss_total,
        }
    }

    pub fn n(&self) -> usize {
        self.g_oo.nrows()
    }
    pub fn kind(&self) -> KernelKind {
        self.kind
    }
    pub fn bandwidth(&self) -> Option<f64> {
        self.bandwidth
    }
    pub fn g_oo(&self) -> &Array2<f64> {
        &self.g_oo
    }
    pub fn g_os(&self) -> &Array2<f64> {
        &self.g_os
    }
    pub fn g_ss(&self) -> &Array2<f64> {
        &self.g_ss
    }
    pub(crate) fn os_row_sums(&self) -> &Array1<f64> {
        &self.os_row_sums
    }
    pub(crate) fn ss_total(&self) -> f64 {
        self.ss_total
    }

    /// Gram of a row-resample: every pairwise entry is a lookup into self.
    ///
    /// Valid because resampled rows are rows of the original sample, so no
    /// distances need recomputing; the standardizer and bandwidth of the
    /// original problem are retained.
    pub fn subsample(&self, idx: &[usize]) -> BalanceGram {
        let m = idx.len();
        let gather = |src: &Array2<f64>| {
            Array2::from_shape_fn((m, m), |(r, c)| src[[idx[r], idx[c]]])
        };
        BalanceGram::assemble(
            gather(&self.g_oo),
            gather(&self.g_os),
            gather(&self.g_ss),
            self.kind,
            self.bandwidth,
        )
    }
}

/// Deterministic parallel matrix–vector product (row dots in index order).
pub(crate) fn par_matvec(m: &Array2<f64>, v: &ArrayView1<f64>) -> Array1<f64> {
    let rows: Vec<f64> = (0..m.nrows())
        .into_par_iter()
        .map(|i| m.row(i).dot(v))
        .collect();
    Array1::from_vec(rows)
}

fn pairwise_block(a: &ArrayView2<f64>, b: &ArrayView2<f64>) -> Array2<f64> {
    let (n, m) = (a.nrows(), b.nrows());
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let ai = a.row(i);
            (0..m)
                .map(|k| {
                    let bk = b.row(k);
                    ai.iter()
                        .zip(bk.iter())
                        .map(|(x, y)| (x - y) * (x - y))
                        .sum::<f64>()
                        .sqrt()
                })
                .collect()
        })
        .collect();
    let mut out = Array2::zeros((n, m));
    for (i, row) in rows.into_iter().enumerate() {
        out.row_mut(i).assign(&Array1::from_vec(row));
    }
    out
}

/// Median of the pooled pairwise distances among observed ∪ shifted points.
///
/// Falls back to 1.0 if every distance is zero.
pub fn median_heuristic_bandwidth(obs: &ArrayView2<f64>, shift: &ArrayView2<f64>) -> f64 {
    let n = obs.nrows();
    let mut pooled = Array2::zeros((2 * n, obs.ncols()));
    pooled.slice_mut(ndarray::s![..n, ..]).assign(obs);
    pooled.slice_mut(ndarray::s![n.., ..]).assign(shift);
    let d = pairwise_block(&pooled.view(), &pooled.view());
    let m = 2 * n;
    let mut vals: Vec<f64> = Vec::with_capacity(m * (m - 1) / 2);
    for i in 0..m {
        for k in (i + 1)..m {
            vals.push(d[[i, k]]);
        }
    }
    if vals.is_empty() {
        return 1.0;
    }
    let mid = vals.len() / 2;
    let med = if vals.len() % 2 == 1 {
        *vals
            .select_nth_unstable_by(mid, |a, b| a.partial_cmp(b).unwrap())
            .1
    } else {
        let hi = *vals
            .select_nth_unstable_by(mid, |a, b| a.partial_cmp(b).unwrap())
            .1;
        let lo = *vals
            .select_nth_unstable_by(mid - 1, |a, b| a.partial_cmp(b).unwrap())
            .1;
        0.5 * (lo + hi)
    };
    if med > 0.0 {
        med
    } else {
        1.0
    }
}

/// Build the Gram from pre-standardized (or deliberately raw) point sets.
pub fn build_gram_from_points(
    obs: &ArrayView2<f64>,
    shift: &ArrayView2<f64>,
    kind: KernelKind,
    bandwidth: Option<f64>,
) -> Result<BalanceGram> {
    if obs.nrows() != shift.nrows() || obs.ncols() != shift.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "observed points are {}×{}, shifted points are {}×{}",
            obs.nrows(),
            obs.ncols(),
            shift.nrows(),
            shift.ncols()
        )));
    }
    if let Some(b) = bandwidth {
        if !(b.is_finite() && b > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "bandwidth must be > 0, got {b}"
            )));
        }
    }
    let d_oo = pairwise_block(obs, obs);
    let d_os = pairwise_block(obs, shift);
    let d_ss = pairwise_block(shift, shift);
    match kind {
        KernelKind::EuclideanEnergy => Ok(BalanceGram::assemble(d_oo, d_os, d_ss, kind, None)),
        KernelKind::GaussianMmd => {
            let bw = match bandwidth {
                Some(b) => b,
                None => median_heuristic_bandwidth(obs, shift),
            };
            let scale = -1.0 / (2.0 * bw * bw);
            let kernelize = |d: Array2<f64>| d.mapv(|v| (v * v * scale).exp());
            Ok(BalanceGram::assemble(
                kernelize(d_oo),
                kernelize(d_os),
                kernelize(d_ss),
                kind,
                Some(bw),
            ))
        }
    }
}

/// Build the Gram for a dataset and its policy shift.
///
/// Joint (x, a) coordinates are standardized by a [`Standardizer`] fitted on
/// the observed sample and applied to both samples; the fitted standardizer
/// is returned alongside so downstream consumers share the metric space.
pub fn build_gram(
    d: &Dataset,
    s: &ShiftedSample,
    kind: KernelKind,
    bandwidth: Option<f64>,
) -> Result<(BalanceGram, Standardizer)> {
    if d.n() != s.n() {
        return Err(Error::DimensionMismatch(format!(
            "dataset has {} rows, shifted sample has {}",
            d.n(),
            s.n()
        )));
    }
    let obs = d.joint();
    let std = Standardizer::fit(&obs.view());
    let obs_z = std.transform(&obs.view())?;
    let shift_z = std.transform(&s.joint(d).view())?;
    let gram = build_gram_from_points(&obs_z.view(), &shift_z.view(), kind, bandwidth)?;
    Ok((gram, std))
}

pub(crate) fn validate_weights(w: &ArrayView1<f64>, n: usize) -> Result<()> {
    if w.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} weights for {} rows",
            w.len(),
            n
        )));
    }
    let mut sum = 0.0;
    for &v in w {
        if !v.is_finite() || v < 0.0 {
            return Err(Error::InvalidWeights(format!(
                "weights must be finite and nonnegative, got {v}"
            )));
        }
        sum += v;
    }
    if (sum - n as f64).abs() > 1e-8 * n as f64 {
        return Err(Error::InvalidWeights(format!(
            "weights sum to {sum}, expected {n}"
        )));
    }
    Ok(())
}

/// The statistic's value without weight validation.
///
/// Used by the solver on feasible iterates and by finite-difference probes
/// that deliberately step off the constraint set.
pub fn energy_value_raw(g: &BalanceGram, w: &ArrayView1<f64>) -> f64 {
    let n = g.n() as f64;
    let gw = par_matvec(&g.g_oo, w);
    let wc = w.dot(g.os_row_sums());
    let wgw = w.dot(&gw);
    match g.kind {
        KernelKind::EuclideanEnergy => (2.0 * wc - wgw - g.ss_total) / (n * n),
        KernelKind::GaussianMmd => (wgw - 2.0 * wc + g.ss_total) / (n * n),
    }
}

/// Weighted energy distance (or MMD²) between the weighted observed sample
/// and the shifted sample.
pub fn weighted_energy_distance(g: &BalanceGram, w: &ArrayView1<f64>) -> Result<EnergyStat> {
    validate_weights(w, g.n())?;
    Ok(EnergyStat {
        value: energy_value_raw(g, w),
        kind: g.kind,
    })
}

/// Gradient of [`energy_value_raw`] with respect to the weights.
pub fn energy_gradient_raw(g: &BalanceGram, w: &ArrayView1<f64>) -> Array1<f64> {
    let n = g.n() as f64;
    let gw = par_matvec(&g.g_oo, w);
    let scale = 2.0 / (n * n);
    match g.kind {
        KernelKind::EuclideanEnergy => {
            let mut out = g.os_row_sums() - &gw;
            out.mapv_inplace(|v| v * scale);
            out
        }
        KernelKind::GaussianMmd => {
            let mut out = &gw - g.os_row_sums();
            out.mapv_inplace(|v| v * scale);
            out
        }
    }
}

/// Validated gradient of the balance statistic at w.
pub fn energy_gradient(g: &BalanceGram, w: &ArrayView1<f64>) -> Result<Array1<f64>> {
    validate_weights(w, g.n())?;
    Ok(energy_gradient_raw(g, w))
}

/// Unweighted statistic between two pseudo-samples obtained by swapping the
/// observed and shifted version of each flagged row.
///
/// Entry lookups: within-sample distances come from g_oo/g_ss, cross-sample
/// from g_os (transposed when the roles are reversed), so no distances are
/// recomputed. This is the null-replicate statistic of the permutation test.
pub fn relabeled_statistic(g: &BalanceGram, swap: &[bool]) -> Result<f64> {
    let n = g.n();
    if swap.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} swap flags for {} rows",
            swap.len(),
            n
        )));
    }
    // version pair of row i: c_i = swapped ? shifted : observed, e_i = the other
    let look = |ci: bool, ck: bool, i: usize, k: usize| -> f64 {
        match (ci, ck) {
            (false, false) => g.g_oo[[i, k]],
            (true, true) => g.g_ss[[i, k]],
            (false, true) => g.g_os[[i, k]],
            (true, false) => g.g_os[[k, i]],
        }
    };
    let partials: Vec<(f64, f64, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let ci = swap[i];
            let ei = !swap[i];
            let mut s_cc = 0.0;
            let mut s_ee = 0.0;
            let mut s_ce = 0.0;
            for k in 0..n {
                let ck = swap[k];
                let ek = !swap[k];
                s_cc += look(ci, ck, i, k);
                s_ee += look(ei, ek, i, k);
                s_ce += look(ci, ek, i, k);
            }
            (s_cc, s_ee, s_ce)
        })
        .collect();
    let (mut cc, mut ee, mut ce) = (0.0, 0.0, 0.0);
    for (a, b, c) in partials {
        cc += a;
        ee += b;
        ce += c;
    }
    let nn = (n * n) as f64;
    Ok(match g.kind {
        KernelKind::EuclideanEnergy => (2.0 * ce - cc - ee) / nn,
        KernelKind::GaussianMmd => (cc + ee - 2.0 * ce) / nn,
    })
}
