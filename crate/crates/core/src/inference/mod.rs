//! Log-log demand fits with actual and substituted prices.
//!
//! The substituted model adds `log(P*/P)` next to `log P`; when every
//! household's price equals its FSU's selected price that column is all
//! zero, gets dropped, and the fit coincides with the actual-price model.

mod design;
mod ols;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::dataset::{share_of, ItemCode, SurveyDataset};
use crate::error::{Error, Result};
use crate::sampling::StarPricedObservation;

pub use design::{
    build_design, DesignMatrix, DropReason, DroppedColumn, ModelKind, ModelSpec, HH_SIZE,
    INTERCEPT, LOG_MPCE, LOG_PRICE, LOG_PRICE_RATIO,
};
pub use ols::{ols_fit, FitResult, FitSummary, MAX_CONDITION};

/// Per-row price measurement error `v = log P* - log P`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MeasurementErrorInfo {
    pub v_column: Vec<f64>,
    pub vtv: f64,
}

impl MeasurementErrorInfo {
    pub fn from_values(v_column: Vec<f64>) -> Self {
        let vtv = v_column.iter().map(|v| v * v).sum();
        Self { v_column, vtv }
    }

    pub fn from_star(star: &[StarPricedObservation<'_>]) -> Self {
        Self::from_values(star.iter().map(|s| s.log_price_ratio).collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BiasCorrectionOptions {
    /// Upper limit on cond(X'X - V'V).
    pub condition_cap: f64,
    /// Allowed relative disagreement between the two closed forms.
    pub form_tolerance: f64,
}

impl Default for BiasCorrectionOptions {
    fn default() -> Self {
        Self {
            condition_cap: 1e12,
            form_tolerance: 1e-10,
        }
    }
}

fn rel_diff(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / a.norm().max(b.norm()).max(f64::MIN_POSITIVE)
}

/// Measurement-error corrected coefficients
/// `[X'X - V'V]^{-1} X'X beta_hat`, where V'V is zero except `vtv` on the
/// `log_price` diagonal.
///
/// The result is cross-checked against `[I - (X'X)^{-1} V'V]^{-1} beta_hat`
/// and `[X'X - V'V]^{-1} X'Y`.
pub fn bias_correct(
    fit: &FitResult,
    me: &MeasurementErrorInfo,
    opts: &BiasCorrectionOptions,
) -> Result<Vec<(String, f64)>> {
    if me.v_column.len() != fit.n_rows() {
        return Err(Error::InvalidInput(format!(
            "v column has {} rows, fit has {}",
            me.v_column.len(),
            fit.n_rows()
        )));
    }
    if !(me.vtv >= 0.0) {
        return Err(Error::InvalidInput("vtv must be non-negative".into()));
    }
    let j = fit
        .names
        .iter()
        .position(|n| n == LOG_PRICE)
        .ok_or_else(|| Error::InvalidInput("fit has no log_price column".into()))?;
    let k = fit.names.len();
    if me.vtv == 0.0 {
        return Ok(fit.named_coefficients());
    }

    let mut vv = DMatrix::zeros(k, k);
    vv[(j, j)] = me.vtv;
    let gram = &fit.gram_matrix;
    let reduced = gram - &vv;

    let sv = reduced.clone().singular_values();
    let (smax, smin) = sv
        .iter()
        .fold((0.0_f64, f64::INFINITY), |(a, b), &s| (a.max(s), b.min(s)));
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(condition <= opts.condition_cap) {
        return Err(Error::BiasCorrectionUnstable(format!(
            "cond(X'X - V'V) = {condition:.3e} exceeds {:.1e}",
            opts.condition_cap
        )));
    }

    let unstable = || Error::BiasCorrectionUnstable("X'X - V'V is singular".into());
    let lu = reduced.lu();
    let corrected = lu.solve(&(gram * &fit.coefficients)).ok_or_else(unstable)?;
    let via_xty = lu.solve(&fit.xty).ok_or_else(unstable)?;

    let gram_inv_vv = gram
        .clone()
        .lu()
        .solve(&vv)
        .ok_or_else(|| Error::BiasCorrectionUnstable("X'X is singular".into()))?;
    let m = DMatrix::identity(k, k) - gram_inv_vv;
    let via_identity = m.lu().solve(&fit.coefficients).ok_or_else(unstable)?;

    for (label, other) in [("[I - (X'X)^-1 V'V]^-1 b", &via_identity), ("[X'X - V'V]^-1 X'Y", &via_xty)] {
        let d = rel_diff(&corrected, other);
        if d > opts.form_tolerance {
            return Err(Error::BiasCorrectionUnstable(format!(
                "closed forms disagree ({label}: relative difference {d:.3e})"
            )));
        }
    }
    Ok(fit.names.iter().cloned().zip(corrected.iter().copied()).collect())
}

/// Which price multiplies the predicted quantity.
#[derive(Clone, Copy, Debug)]
pub enum PriceChoice<'s, 'a> {
    Actual,
    Star(&'s [StarPricedObservation<'a>]),
}

/// Model-predicted budget share per row:
/// `(price * exp(fitted log Q) / hh_size) / mpce`.
pub fn predicted_shares(
    fit: &FitResult,
    ds: &SurveyDataset,
    item: ItemCode,
    price_choice: PriceChoice<'_, '_>,
) -> Result<Vec<f64>> {
    let mismatch = || Error::InvalidInput(format!("fit rows do not match item {item}"));
    let item_obs = ds.item_fsus(item)?.values().map(Vec::len).sum::<usize>();
    let n_obs = ds.observations().len();
    if item_obs != fit.rows.len()
        || fit
            .rows
            .iter()
            .any(|&j| j >= n_obs || ds.observations()[j].item_code != item)
    {
        return Err(mismatch());
    }
    let prices: Vec<f64> = match price_choice {
        PriceChoice::Actual => fit.rows.iter().map(|&j| ds.observations()[j].unit_price()).collect(),
        PriceChoice::Star(star) => {
            if star.len() == fit.rows.len() && star.iter().zip(&fit.rows).all(|(s, &j)| s.observation == j) {
                star.iter().map(|s| s.star_price).collect()
            } else {
                let by_obs: std::collections::HashMap<usize, f64> =
                    star.iter().map(|s| (s.observation, s.star_price)).collect();
                fit.rows
                    .iter()
                    .map(|j| by_obs.get(j).copied())
                    .collect::<Option<Vec<f64>>>()
                    .ok_or_else(mismatch)?
            }
        }
    };
    Ok(fit
        .rows
        .iter()
        .zip(prices)
        .zip(fit.fitted_log_q.iter())
        .map(|((&j, price), &lq)| share_of(price * lq.exp(), ds.household_of(j)))
        .collect())
}

/// `(lo_rank, hi_rank)` order statistics (1-based) of `values`.
pub fn empirical_ci(values: &[f64], lo_rank: usize, hi_rank: usize) -> Result<(f64, f64)> {
    if lo_rank < 1 || lo_rank > hi_rank {
        return Err(Error::InvalidInput(format!(
            "need 1 <= lo_rank <= hi_rank, got {lo_rank}, {hi_rank}"
        )));
    }
    if values.len() < hi_rank {
        return Err(Error::InvalidInput(format!(
            "{} values, rank {hi_rank} requested",
            values.len()
        )));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok((sorted[lo_rank - 1], sorted[hi_rank - 1]))
}

/// 2.5% and 97.5% ranks for `r` repetitions: (25, 975) at r = 1000.
pub fn ci_ranks(r: usize) -> (usize, usize) {
    let lo = ((0.025 * r as f64).round() as usize).max(1);
    let hi = ((0.975 * r as f64).round() as usize).clamp(lo, r.max(1));
    (lo, hi)
}
