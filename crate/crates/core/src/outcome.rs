//! Outcome-regression models μ̂(x, a) for the augmented estimator.
//!
//! Three kinds: a ridge regression on degree-2 polynomial features with
//! pairwise interactions, a variance-splitting CART random forest, and a
//! nonnegative-least-squares stack of the two fitted on out-of-fold
//! predictions. Binary outcomes are fit as regressions on {0, 1}, so
//! predictions live on the probability scale.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Standardizer;
use crate::error::{Error, Result};
use crate::linalg::{cholesky_solve, lu_solve};
use crate::rng::{stream_rng, uniform_index};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutcomeModelKind {
    RidgePoly,
    Forest,
    Stack,
}

#[derive(Debug, Clone)]
pub struct OutcomeConfig {
    pub ridge_penalty: f64,
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Fraction is √m features per split; rows are bootstrapped per tree.
    pub n_folds: usize,
    pub seed: u64,
}

impl Default for OutcomeConfig {
    fn default() -> Self {
        OutcomeConfig {
            ridge_penalty: 1e-4,
            n_trees: 200,
            max_depth: 12,
            min_leaf: 5,
            n_folds: 5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OutcomeModel {
    n_features: usize,
    inner: ModelInner,
}

#[derive(Debug, Clone)]
enum ModelInner {
    Ridge(RidgeModel),
    Forest(ForestModel),
    Stack {
        members: Vec<OutcomeModel>,
        stack_weights: Vec<f64>,
    },
}

impl OutcomeModel {
    pub fn n_features(&self) -> usize {
        self.n_features
    }

    /// Stack coefficients (nonnegative, sum to one); empty for single models.
    pub fn stack_weights(&self) -> &[f64] {
        match &self.inner {
            ModelInner::Stack { stack_weights, .. } => stack_weights,
            _ => &[],
        }
    }

    pub fn predict(&self, features: &ArrayView2<f64>) -> Result<Array1<f64>> {
        if features.ncols() != self.n_features {
            return Err(Error::DimensionMismatch(format!(
                "model fitted on {} features, got {}",
                self.n_features,
                features.ncols()
            )));
        }
        Ok(match &self.inner {
            ModelInner::Ridge(m) => m.predict(features),
            ModelInner::Forest(m) => m.predict(features),
            ModelInner::Stack {
                members,
                stack_weights,
            } => {
                let mut out = Array1::zeros(features.nrows());
                for (member, &coef) in members.iter().zip(stack_weights.iter()) {
                    let p = member.predict(features)?;
                    out = out + p.mapv(|v| v * coef);
                }
                out
            }
        })
    }
}

/// Fit an outcome model of the requested kind.
pub fn fit(
    kind: OutcomeModelKind,
    features: &ArrayView2<f64>,
    y: &ArrayView1<f64>,
    cfg: &OutcomeConfig,
) -> Result<OutcomeModel> {
    if features.nrows() != y.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} feature rows for {} outcomes",
            features.nrows(),
            y.len()
        )));
    }
    if features.iter().any(|v| !v.is_finite()) || y.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidConfig("non-finite training values".into()));
    }
    let n = y.len();
    match kind {
        OutcomeModelKind::RidgePoly => {
            if n < 1 {
                return Err(Error::TooFewRows("ridge needs at least 1 row".into()));
            }
            Ok(OutcomeModel {
                n_features: features.ncols(),
                inner: ModelInner::Ridge(RidgeModel::fit(features, y, cfg.ridge_penalty)?),
            })
        }
        OutcomeModelKind::Forest => {
            if n < 10 {
                return Err(Error::TooFewRows(format!(
                    "forest needs at least 10 rows, got {n}"
                )));
            }
            Ok(OutcomeModel {
                n_features: features.ncols(),
                inner: ModelInner::Forest(ForestModel::fit(features, y, cfg)),
            })
        }
        OutcomeModelKind::Stack => {
            if n < 10 {
                return Err(Error::TooFewRows(format!(
                    "stacking needs at least 10 rows, got {n}"
                )));
            }
            fit_stack(features, y, cfg)
        }
    }
}

/// Deterministic shuffled fold assignment: fold of row i.
pub(crate) fn fold_assignment(n: usize, n_folds: usize, seed: u64) -> Vec<usize> {
    let folds = n_folds.max(2).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = stream_rng(seed, 0xF0_1D, 0);
    for i in (1..n).rev() {
        let j = uniform_index(&mut rng, i + 1);
        order.swap(i, j);
    }
    let mut assign = vec![0usize; n];
    for (pos, &row) in order.iter().enumerate() {
        assign[row] = pos % folds;
    }
    assign
}

const STACK_MEMBERS: [OutcomeModelKind; 2] =
    [OutcomeModelKind::RidgePoly, OutcomeModelKind::Forest];

fn fit_stack(
    features: &ArrayView2<f64>,
    y: &ArrayView1<f64>,
    cfg: &OutcomeConfig,
) -> Result<OutcomeModel> {
    let n = y.len();
    let assign = fold_assignment(n, cfg.n_folds, cfg.seed);
    let n_members = STACK_MEMBERS.len();
    let mut oof = Array2::zeros((n, n_members));
    let folds = *assign.iter().max().unwrap() + 1;
    for fold in 0..folds {
        let train_idx: Vec<usize> = (0..n).filter(|&i| assign[i] != fold).collect();
        let test_idx: Vec<usize> = (0..n).filter(|&i| assign[i] == fold).collect();
        if train_idx.is_empty() || test_idx.is_empty() {
            continue;
        }
        let xt = features.select(Axis(0), &train_idx);
        let yt = y.select(Axis(0), &train_idx);
        let xv = features.select(Axis(0), &test_idx);
        for (mi, &kind) in STACK_MEMBERS.iter().enumerate() {
            let sub_cfg = OutcomeConfig {
                seed: crate::rng::derive_seed(cfg.seed, fold as u64, mi as u64),
                ..cfg.clone()
            };
            if kind == OutcomeModelKind::Forest && xt.nrows() < 10 {
                return Err(Error::TooFewRows(
                    "stacking fold leaves fewer than 10 training rows".into(),
                ));
            }
            let m = fit(kind, &xt.view(), &yt.view(), &sub_cfg)?;
            let pred = m.predict(&xv.view())?;
            for (pos, &row) in test_idx.iter().enumerate() {
                oof[[row, mi]] = pred[pos];
            }
        }
    }
    let stack_weights = nnls_simplex(&oof.view(), y)?;
    let members: Vec<OutcomeModel> = STACK_MEMBERS
        .iter()
        .enumerate()
        .map(|(mi, &kind)| {
            let sub_cfg = OutcomeConfig {
                seed: crate::rng::derive_seed(cfg.seed, 0xFFFF, mi as u64),
                ..cfg.clone()
            };
            fit(kind, features, y, &sub_cfg)
        })
        .collect::<Result<_>>()?;
    Ok(OutcomeModel {
        n_features: features.ncols(),
        inner: ModelInner::Stack {
            members,
            stack_weights,
        },
    })
}

/// Exact least squares over the probability simplex by active-set
/// enumeration (the member count is tiny, so 2^K is nothing).
pub(crate) fn nnls_simplex(preds: &ArrayView2<f64>, y: &ArrayView1<f64>) -> Result<Vec<f64>> {
    let k = preds.ncols();
    if k == 0 {
        return Err(Error::InvalidConfig("no stack members".into()));
    }
    let gram = preds.t().dot(preds);
    let py = preds.t().dot(y);
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 1u32..(1 << k) {
        let active: Vec<usize> = (0..k).filter(|&i| mask & (1 << i) != 0).collect();
        let m = active.len();
        // KKT system for min ‖y − Pβ‖² with 1ᵀβ = 1 over the active set
        let mut kkt = Array2::zeros((m + 1, m + 1));
        let mut rhs = Array1::zeros(m + 1);
        for (r, &i) in active.iter().enumerate() {
            for (c, &j) in active.iter().enumerate() {
                kkt[[r, c]] = 2.0 * gram[[i, j]];
            }
            kkt[[r, m]] = 1.0;
            kkt[[m, r]] = 1.0;
            rhs[r] = 2.0 * py[i];
        }
        rhs[m] = 1.0;
        let sol = match lu_solve(&kkt, &rhs) {
            Ok(s) => s,
            Err(_) => continue,
        };
        if active.iter().enumerate().any(|(r, _)| sol[r] < -1e-12) {
            continue;
        }
        let mut beta = vec![0.0; k];
        for (r, &i) in active.iter().enumerate() {
            beta[i] = sol[r].max(0.0);
        }
        let total: f64 = beta.iter().sum();
        beta.iter_mut().for_each(|b| *b /= total);
        let mut sse = 0.0;
        for row in 0..y.len() {
            let mut p = 0.0;
            for i in 0..k {
                p += beta[i] * preds[[row, i]];
            }
            let r = y[row] - p;
            sse += r * r;
        }
        if best.as_ref().map_or(true, |(b, _)| sse < *b) {
            best = Some((sse, beta));
        }
    }
    best.map(|(_, beta)| beta)
        .ok_or_else(|| Error::SingularDesign("no feasible stack weights".into()))
}

// ---------------------------------------------------------------------------
// Ridge on degree-2 polynomial features

#[derive(Debug, Clone)]
struct RidgeModel {
    standardizer: Standardizer,
    coef: Array1<f64>,
}

/// Expanded width: intercept + linear + squares + pairwise interactions.
fn poly_width(m: usize) -> usize {
    1 + 2 * m + m * (m - 1) / 2
}

fn expand_poly(z: &ArrayView2<f64>) -> Array2<f64> {
    let (n, m) = (z.nrows(), z.ncols());
    let mut out = Array2::zeros((n, poly_width(m)));
    for i in 0..n {
        let row = z.row(i);
        let mut c = 0;
        out[[i, c]] = 1.0;
        c += 1;
        for j in 0..m {
            out[[i, c]] = row[j];
            c += 1;
        }
        for j in 0..m {
            out[[i, c]] = row[j] * row[j];
            c += 1;
        }
        for j in 0..m {
            for l in (j + 1)..m {
                out[[i, c]] = row[j] * row[l];
                c += 1;
            }
        }
    }
    out
}

impl RidgeModel {
    fn fit(features: &ArrayView2<f64>, y: &ArrayView1<f64>, penalty: f64) -> Result<RidgeModel> {
        if penalty < 0.0 {
            return Err(Error::InvalidConfig("ridge penalty must be >= 0".into()));
        }
        let standardizer = Standardizer::fit(features);
        let z = standardizer.transform(features)?;
        let phi = expand_poly(&z.view());
        let w = phi.ncols();
        let mut xtx = phi.t().dot(&phi);
        for j in 1..w {
            xtx[[j, j]] += penalty;
        }
        let xty = phi.t().dot(y);
        let coef = cholesky_solve(&xtx, &xty).map_err(|e| {
            if penalty == 0.0 {
                Error::SingularDesign("unpenalized polynomial design is singular".into())
            } else {
                e
            }
        })?;
        Ok(RidgeModel {
            standardizer,
            coef,
        })
    }

    fn predict(&self, features: &ArrayView2<f64>) -> Array1<f64> {
        let z = self
            .standardizer
            .transform(features)
            .expect("width checked by caller");
        expand_poly(&z.view()).dot(&self.coef)
    }
}

// ---------------------------------------------------------------------------
// CART regression forest

#[derive(Debug, Clone)]
struct Node {
    feature: usize,
    threshold: f64,
    /// Children indices; usize::MAX marks a leaf, with `value` the mean.
    left: usize,
    right: usize,
    value: f64,
}

#[derive(Debug, Clone)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn predict_row(&self, row: &ArrayView1<f64>) -> f64 {
        let mut at = 0usize;
        loop {
            let node = &self.nodes[at];
            if node.left == usize::MAX {
                return node.value;
            }
            at = if row[node.feature] <= node.threshold {
                node.left
            } else {
                node.right
            };
        }
    }
}

#[derive(Debug, Clone)]
struct ForestModel {
    trees: Vec<Tree>,
}

struct TreeBuilder<'a> {
    x: &'a ArrayView2<'a, f64>,
    y: &'a ArrayView1<'a, f64>,
    max_depth: usize,
    min_leaf: usize,
    mtry: usize,
}

impl<'a> TreeBuilder<'a> {
    fn grow(
        &self,
        nodes: &mut Vec<Node>,
        idx: &mut [usize],
        depth: usize,
        rng: &mut rand_chacha::ChaCha8Rng,
    ) -> usize {
        let n = idx.len();
        let sum: f64 = idx.iter().map(|&i| self.y[i]).sum();
        let mean = sum / n as f64;
        let make_leaf = |nodes: &mut Vec<Node>| {
            nodes.push(Node {
                feature: 0,
                threshold: 0.0,
                left: usize::MAX,
                right: usize::MAX,
                value: mean,
            });
            nodes.len() - 1
        };
        if depth >= self.max_depth || n < 2 * self.min_leaf {
            return make_leaf(nodes);
        }

        // feature subsample without replacement (partial Fisher–Yates)
        let m = self.x.ncols();
        let mut feats: Vec<usize> = (0..m).collect();
        for i in 0..self.mtry.min(m) {
            let j = i + uniform_index(rng, m - i);
            feats.swap(i, j);
        }
        feats.truncate(self.mtry.min(m));

        let parent_score = sum * sum / n as f64;
        let mut best: Option<(f64, usize, f64)> = None; // (gain, feature, threshold)
        let mut order: Vec<usize> = Vec::with_capacity(n);
        for &f in &feats {
            order.clear();
            order.extend_from_slice(idx);
            order.sort_by(|&a, &b| {
                self.x[[a, f]]
                    .partial_cmp(&self.x[[b, f]])
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then(a.cmp(&b))
            });
            let mut left_sum = 0.0;
            for (pos, &row) in order.iter().enumerate().take(n - 1) {
                left_sum += self.y[row];
                let n_left = pos + 1;
                let n_right = n - n_left;
                if n_left < self.min_leaf || n_right < self.min_leaf {
                    continue;
                }
                let xv = self.x[[row, f]];
                let xn = self.x[[order[pos + 1], f]];
                if xv == xn {
                    continue;
                }
                let right_sum = sum - left_sum;
                let gain = left_sum * left_sum / n_left as f64
                    + right_sum * right_sum / n_right as f64
                    - parent_score;
                if best.as_ref().map_or(gain > 1e-12, |(g, _, _)| gain > *g) {
                    best = Some((gain, f, 0.5 * (xv + xn)));
                }
            }
        }

        let Some((_, feature, threshold)) = best else {
            return make_leaf(nodes);
        };
        let split_at = itertools_partition(idx, |&i| self.x[[i, feature]] <= threshold);
        let me = nodes.len();
        nodes.push(Node {
            feature,
            threshold,
            left: 0,
            right: 0,
            value: mean,
        });
        let (l_idx, r_idx) = idx.split_at_mut(split_at);
        let left = self.grow(nodes, l_idx, depth + 1, rng);
        let right = self.grow(nodes, r_idx, depth + 1, rng);
        nodes[me].left = left;
        nodes[me].right = right;
        me
    }
}

/// Stable partition: rows satisfying the predicate first, relative order kept.
fn itertools_partition<F: Fn(&usize) -> bool>(idx: &mut [usize], pred: F) -> usize {
    let mut buf: Vec<usize> = Vec::with_capacity(idx.len());
    let mut rest: Vec<usize> = Vec::new();
    for &i in idx.iter() {
        if pred(&i) {
            buf.push(i);
        } else {
            rest.push(i);
        }
    }
    let split = buf.len();
    buf.extend_from_slice(&rest);
    idx.copy_from_slice(&buf);
    split
}

impl ForestModel {
    fn fit(features: &ArrayView2<f64>, y: &ArrayView1<f64>, cfg: &OutcomeConfig) -> ForestModel {
        let n = y.len();
        let m = features.ncols();
        let mtry = ((m as f64).sqrt().ceil() as usize).clamp(1, m.max(1));
        let trees: Vec<Tree> = (0..cfg.n_trees)
            .into_par_iter()
            .map(|t| {
                let mut rng = stream_rng(cfg.seed, 0x7265, t as u64);
                let mut idx: Vec<usize> = (0..n).map(|_| uniform_index(&mut rng, n)).collect();
                idx.sort_unstable();
                let builder = TreeBuilder {
                    x: features,
                    y,
                    max_depth: cfg.max_depth,
                    min_leaf: cfg.min_leaf,
                    mtry,
                };
                let mut nodes = Vec::new();
                builder.grow(&mut nodes, &mut idx, 0, &mut rng);
                Tree { nodes }
            })
            .collect();
        ForestModel { trees }
    }

    fn predict(&self, features: &ArrayView2<f64>) -> Array1<f64> {
        let n = features.nrows();
        let rows: Vec<f64> = (0..n)
            .into_par_iter()
            .map(|i| {
                let row = features.row(i);
                let mut acc = 0.0;
                for t in &self.trees {
                    acc += t.predict_row(&row);
                }
                acc / self.trees.len() as f64
            })
            .collect();
        Array1::from_vec(rows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use rand::Rng;

    fn random_features(n: usize, m: usize, seed: u64) -> Array2<f64> {
        let mut rng = stream_rng(seed, 0, 0);
        Array2::from_shape_fn((n, m), |_| 2.0 * rng.random::<f64>() - 1.0)
    }

    #[test]
    fn constant_target_predicted_by_all_kinds() {
        let x = random_features(40, 3, 1);
        let y = Array1::from_elem(40, 2.5);
        for kind in [
            OutcomeModelKind::RidgePoly,
            OutcomeModelKind::Forest,
            OutcomeModelKind::Stack,
        ] {
            let m = fit(kind, &x.view(), &y.view(), &OutcomeConfig::default()).unwrap();
            let p = m.predict(&x.view()).unwrap();
            for &v in p.iter() {
                assert!((v - 2.5).abs() < 1e-8, "{kind:?}: {v}");
            }
        }
    }

    #[test]
    fn ridge_recovers_exact_linear_signal() {
        let x = random_features(80, 4, 2);
        let y = Array1::from_shape_fn(80, |i| {
            3.0 + 2.0 * x[[i, 0]] - 1.5 * x[[i, 1]] + 0.5 * x[[i, 3]]
        });
        let cfg = OutcomeConfig {
            ridge_penalty: 1e-8,
            ..Default::default()
        };
        let m = fit(OutcomeModelKind::RidgePoly, &x.view(), &y.view(), &cfg).unwrap();
        let p = m.predict(&x.view()).unwrap();
        let y_mean = y.sum() / 80.0;
        let ss_tot: f64 = y.iter().map(|v| (v - y_mean) * (v - y_mean)).sum();
        let ss_res: f64 = y.iter().zip(p.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
        let r2 = 1.0 - ss_res / ss_tot;
        assert!(r2 > 0.999, "r2={r2}");
    }

    #[test]
    fn stack_weights_on_simplex() {
        let x = random_features(60, 3, 3);
        let mut rng = stream_rng(4, 0, 0);
        let y = Array1::from_shape_fn(60, |i| {
            x[[i, 0]] * x[[i, 1]] + 0.1 * rng.random::<f64>()
        });
        let m = fit(
            OutcomeModelKind::Stack,
            &x.view(),
            &y.view(),
            &OutcomeConfig::default(),
        )
        .unwrap();
        let w = m.stack_weights();
        assert_eq!(w.len(), 2);
        assert!(w.iter().all(|&v| v >= 0.0));
        let total: f64 = w.iter().sum();
        assert!((total - 1.0).abs() < 1e-10);
    }

    #[test]
    fn forest_deterministic_given_seed() {
        let x = random_features(50, 4, 5);
        let mut rng = stream_rng(6, 0, 0);
        let y = Array1::from_shape_fn(50, |i| x[[i, 2]].sin() + 0.05 * rng.random::<f64>());
        let cfg = OutcomeConfig {
            n_trees: 32,
            seed: 99,
            ..Default::default()
        };
        let m1 = fit(OutcomeModelKind::Forest, &x.view(), &y.view(), &cfg).unwrap();
        let m2 = fit(OutcomeModelKind::Forest, &x.view(), &y.view(), &cfg).unwrap();
        let grid = random_features(20, 4, 7);
        let p1 = m1.predict(&grid.view()).unwrap();
        let p2 = m2.predict(&grid.view()).unwrap();
        for (a, b) in p1.iter().zip(p2.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn forest_fits_a_step_function() {
        let n = 300;
        let x = random_features(n, 2, 8);
        let y = Array1::from_shape_fn(n, |i| if x[[i, 0]] > 0.0 { 4.0 } else { -4.0 });
        let m = fit(
            OutcomeModelKind::Forest,
            &x.view(),
            &y.view(),
            &OutcomeConfig::default(),
        )
        .unwrap();
        let p = m.predict(&x.view()).unwrap();
        let mse: f64 = y
            .iter()
            .zip(p.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / n as f64;
        assert!(mse < 1.0, "mse={mse}");
    }

    #[test]
    fn predict_rejects_wrong_width_and_handles_empty() {
        let x = random_features(30, 3, 9);
        let y = Array1::zeros(30);
        let m = fit(
            OutcomeModelKind::RidgePoly,
            &x.view(),
            &y.view(),
            &OutcomeConfig::default(),
        )
        .unwrap();
        let wrong = random_features(5, 2, 10);
        assert!(matches!(
            m.predict(&wrong.view()),
            Err(Error::DimensionMismatch(_))
        ));
        let empty = Array2::<f64>::zeros((0, 3));
        assert_eq!(m.predict(&empty.view()).unwrap().len(), 0);
    }

    #[test]
    fn too_few_rows_rejected_for_forest_and_stack() {
        let x = random_features(8, 2, 11);
        let y = Array1::zeros(8);
        for kind in [OutcomeModelKind::Forest, OutcomeModelKind::Stack] {
            assert!(matches!(
                fit(kind, &x.view(), &y.view(), &OutcomeConfig::default()),
                Err(Error::TooFewRows(_))
            ));
        }
    }

    #[test]
    fn stack_cv_loss_never_worse_than_best_member() {
        for trial in 0..20 {
            let n = 80;
            let x = random_features(n, 3, 100 + trial);
            let mut rng = stream_rng(200 + trial, 0, 0);
            let y = Array1::from_shape_fn(n, |i| {
                let lin = 1.2 * x[[i, 0]] - 0.7 * x[[i, 1]];
                let bump = if x[[i, 2]] > 0.3 { 2.0 } else { 0.0 };
                lin + bump + 0.2 * rng.random::<f64>()
            });
            let cfg = OutcomeConfig {
                n_trees: 40,
                seed: trial,
                ..Default::default()
            };
            // reproduce the out-of-fold predictions exactly as fit_stack does
            let assign = fold_assignment(n, cfg.n_folds, cfg.seed);
            let folds = *assign.iter().max().unwrap() + 1;
            let mut oof = Array2::zeros((n, STACK_MEMBERS.len()));
            for fold in 0..folds {
                let tr: Vec<usize> = (0..n).filter(|&i| assign[i] != fold).collect();
                let te: Vec<usize> = (0..n).filter(|&i| assign[i] == fold).collect();
                let xt = x.select(Axis(0), &tr);
                let yt = y.select(Axis(0), &tr);
                let xv = x.select(Axis(0), &te);
                for (mi, &kind) in STACK_MEMBERS.iter().enumerate() {
                    let sub = OutcomeConfig {
                        seed: crate::rng::derive_seed(cfg.seed, fold as u64, mi as u64),
                        ..cfg.clone()
                    };
                    let m = fit(kind, &xt.view(), &yt.view(), &sub).unwrap();
                    let p = m.predict(&xv.view()).unwrap();
                    for (pos, &row) in te.iter().enumerate() {
                        oof[[row, mi]] = p[pos];
                    }
                }
            }
            let beta = nnls_simplex(&oof.view(), &y.view()).unwrap();
            let loss = |pred: &dyn Fn(usize) -> f64| -> f64 {
                (0..n).map(|i| (y[i] - pred(i)).powi(2)).sum::<f64>() / n as f64
            };
            let stack_loss = loss(&|i| {
                beta.iter()
                    .enumerate()
                    .map(|(mi, b)| b * oof[[i, mi]])
                    .sum()
            });
            let best_member = (0..STACK_MEMBERS.len())
                .map(|mi| loss(&|i| oof[[i, mi]]))
                .fold(f64::INFINITY, f64::min);
            assert!(
                stack_loss <= best_member + 1e-6,
                "trial {trial}: stack {stack_loss} vs best {best_member}"
            );
        }
    }
}
