//! Treatment modification policies and ventilation-specific helpers.
//!
//! A [`Policy`] is a deterministic map (x, a) ↦ a′ assembled from blocks that
//! partition the treatment support; each block carries its own apply/invert
//! pair, and invertibility within a block is what makes the shifted
//! population well defined. The built-in policies cover per-coordinate
//! scaling families over named ventilator-setting roles.

use std::fmt;
use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};

type PointFn = Arc<dyn Fn(ArrayView1<f64>, ArrayView1<f64>) -> Array1<f64> + Send + Sync>;
type MemberFn = Arc<dyn Fn(ArrayView1<f64>, ArrayView1<f64>) -> bool + Send + Sync>;

/// One invertible piece of a policy, valid where `membership` holds.
#[derive(Clone)]
pub struct Block {
    pub membership: MemberFn,
    pub apply: PointFn,
    pub invert: PointFn,
}

impl Block {
    pub fn new(membership: MemberFn, apply: PointFn, invert: PointFn) -> Block {
        Block {
            membership,
            apply,
            invert,
        }
    }
}

impl fmt::Debug for Block {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Block{..}")
    }
}

/// A block-partitioned treatment modification policy.
#[derive(Clone, Debug)]
pub struct Policy {
    pub name: String,
    blocks: Vec<Block>,
}

impl Policy {
    pub fn new(name: impl Into<String>, blocks: Vec<Block>) -> Policy {
        Policy {
            name: name.into(),
            blocks,
        }
    }

    /// Single-block policy scaling treatment coordinate j by `scale[j]`.
    pub fn scale(name: impl Into<String>, scale: Vec<f64>) -> Result<Policy> {
        if scale.iter().any(|&s| s == 0.0 || !s.is_finite()) {
            return Err(Error::InvalidConfig(
                "scale factors must be finite and nonzero".into(),
            ));
        }
        let fwd = Array1::from_vec(scale.clone());
        let inv = fwd.mapv(|s| 1.0 / s);
        let apply: PointFn = Arc::new(move |_x, a| &a.to_owned() * &fwd);
        let invert: PointFn = Arc::new(move |_x, a| &a.to_owned() * &inv);
        let membership: MemberFn = Arc::new(|_x, _a| true);
        Ok(Policy::new(name, vec![Block::new(membership, apply, invert)]))
    }

    /// Identity policy over k treatment coordinates.
    pub fn identity(k: usize) -> Policy {
        Policy::scale("identity", vec![1.0; k]).expect("unit scales are valid")
    }

    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    /// Index of the unique block whose membership predicate holds at (x, a).
    pub fn matching_block(&self, x: ArrayView1<f64>, a: ArrayView1<f64>) -> Result<usize> {
        let mut found = None;
        for (j, b) in self.blocks.iter().enumerate() {
            if (b.membership)(x, a) {
                if found.is_some() {
                    return Err(Error::MultipleBlocksMatch(usize::MAX));
                }
                found = Some(j);
            }
        }
        found.ok_or(Error::NoBlockMatches(usize::MAX))
    }

    /// Apply the policy at one point.
    pub fn apply(&self, x: ArrayView1<f64>, a: ArrayView1<f64>) -> Result<Array1<f64>> {
        let j = self.matching_block(x, a)?;
        Ok((self.blocks[j].apply)(x, a))
    }

    /// Invert within the block that produced a′ from the given x.
    pub fn invert_in_block(
        &self,
        block: usize,
        x: ArrayView1<f64>,
        a_shifted: ArrayView1<f64>,
    ) -> Array1<f64> {
        (self.blocks[block].invert)(x, a_shifted)
    }
}

/// The policy-shifted treatments, row-aligned with the source dataset.
#[derive(Debug, Clone)]
pub struct ShiftedSample {
    a_shifted: Array2<f64>,
}

impl ShiftedSample {
    pub fn n(&self) -> usize {
        self.a_shifted.nrows()
    }
    pub fn k(&self) -> usize {
        self.a_shifted.ncols()
    }
    pub fn a_shifted(&self) -> &Array2<f64> {
        &self.a_shifted
    }

    /// Joint (x, q(x,a)) row matrix, n×(p+k).
    pub fn joint(&self, d: &Dataset) -> Array2<f64> {
        let mut m = Array2::zeros((d.n(), d.p() + d.k()));
        if d.p() > 0 {
            m.slice_mut(ndarray::s![.., ..d.p()]).assign(d.x());
        }
        m.slice_mut(ndarray::s![.., d.p()..]).assign(&self.a_shifted);
        m
    }

    pub fn select_rows(&self, idx: &[usize]) -> ShiftedSample {
        ShiftedSample {
            a_shifted: self.a_shifted.select(ndarray::Axis(0), idx),
        }
    }
}

/// Shift every row of the dataset through the policy.
pub fn shift_dataset(p: &Policy, d: &Dataset) -> Result<ShiftedSample> {
    let mut a_shifted = Array2::zeros((d.n(), d.k()));
    for i in 0..d.n() {
        let xi = d.x().row(i);
        let ai = d.a().row(i);
        let shifted = p.apply(xi, ai).map_err(|e| match e {
            Error::NoBlockMatches(_) => Error::NoBlockMatches(i),
            Error::MultipleBlocksMatch(_) => Error::MultipleBlocksMatch(i),
            other => other,
        })?;
        a_shifted.row_mut(i).assign(&shifted);
    }
    Ok(ShiftedSample { a_shifted })
}

/// One ventilation cycle's settings.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct VentSettings {
    /// Breaths per minute.
    pub rr: f64,
    /// Tidal volume, liters.
    pub vt: f64,
    /// Peak inspiratory pressure, cmH2O.
    pub p_peak: f64,
    /// Plateau pressure, cmH2O.
    pub p_plateau: f64,
    /// Positive end-expiratory pressure, cmH2O.
    pub peep: f64,
}

impl VentSettings {
    /// Driving pressure: plateau minus PEEP.
    pub fn driving_pressure(&self) -> f64 {
        self.p_plateau - self.peep
    }

    /// Respiratory-system compliance vt/dp, undefined when dp = 0.
    pub fn compliance(&self) -> Option<f64> {
        let dp = self.driving_pressure();
        (dp != 0.0).then(|| self.vt / dp)
    }
}

/// Mechanical power in J/min: 0.098 · vt · rr · (p_peak − ½(p_plateau − peep)).
pub fn mechanical_power(v: &VentSettings) -> f64 {
    0.098 * v.vt * v.rr * (v.p_peak - 0.5 * (v.p_plateau - v.peep))
}

/// Which treatment column plays which ventilator-setting role.
///
/// Only the roles a given built-in policy scales need to be present;
/// unnamed columns pass through unchanged.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyLayout {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rr: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vt: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_peak: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_plateau: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub peep: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dp: Option<usize>,
}

impl PolicyLayout {
    fn role(&self, name: &str) -> Option<usize> {
        match name {
            "rr" => self.rr,
            "vt" => self.vt,
            "p_peak" => self.p_peak,
            "p_plateau" => self.p_plateau,
            "peep" => self.peep,
            "dp" => self.dp,
            _ => None,
        }
    }

    fn require(&self, names: &[&str], k: usize) -> Result<Vec<usize>> {
        let mut idx = Vec::with_capacity(names.len());
        for &name in names {
            let i = self.role(name).ok_or_else(|| {
                Error::LayoutMismatch(format!("policy requires role '{name}'"))
            })?;
            if i >= k {
                return Err(Error::LayoutMismatch(format!(
                    "role '{name}' maps to column {i} but there are only {k} treatment columns"
                )));
            }
            if idx.contains(&i) {
                return Err(Error::LayoutMismatch(format!(
                    "role '{name}' duplicates treatment column {i}"
                )));
            }
            idx.push(i);
        }
        Ok(idx)
    }
}

/// Construct one of the built-in policy families.
///
/// * `q1`   — tidal volume scaled by τ.
/// * `q2`   — the three airway pressures scaled by τ.
/// * `q3`   — respiratory rate scaled by 1/τ, tidal volume and driving
///   pressure scaled by τ (preserves minute ventilation and compliance).
/// * `identity` — no modification.
/// * `scale` — every treatment column scaled by τ.
pub fn builtin_policy(name: &str, tau: f64, layout: &PolicyLayout, k: usize) -> Result<Policy> {
    if !(tau.is_finite() && tau > 0.0) {
        return Err(Error::InvalidConfig(format!("tau must be > 0, got {tau}")));
    }
    let mut scale = vec![1.0; k];
    match name {
        "identity" => {}
        "scale" => scale.iter_mut().for_each(|s| *s = tau),
        "q1" => {
            let idx = layout.require(&["vt"], k)?;
            scale[idx[0]] = tau;
        }
        "q2" => {
            let idx = layout.require(&["p_peak", "p_plateau", "peep"], k)?;
            for i in idx {
                scale[i] = tau;
            }
        }
        "q3" => {
            let idx = layout.require(&["rr", "vt", "dp"], k)?;
            scale[idx[0]] = 1.0 / tau;
            scale[idx[1]] = tau;
            scale[idx[2]] = tau;
        }
        other => return Err(Error::UnknownPolicyName(other.into())),
    }
    Policy::scale(format!("{name}(tau={tau})"), scale)
}
