use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::design::{DesignMatrix, DroppedColumn, ModelKind};
use crate::error::{Error, Result};

/// Largest acceptable 2-norm condition number of the design.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Clone, Debug)]
pub struct FitResult {
    pub names: Vec<String>,
    pub coefficients: DVector<f64>,
    pub residuals: DVector<f64>,
    pub fitted_log_q: DVector<f64>,
    /// X'X.
    pub gram_matrix: DMatrix<f64>,
    /// X'Y.
    pub xty: DVector<f64>,
    pub dropped_columns: Vec<DroppedColumn>,
    /// sigma_max / sigma_min of X.
    pub condition: f64,
    pub(crate) rows: Vec<usize>,
    pub(crate) kind: Option<ModelKind>,
}

impl FitResult {
    pub fn coefficient(&self, name: &str) -> Option<f64> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.coefficients[i])
    }

    pub fn named_coefficients(&self) -> Vec<(String, f64)> {
        self.names
            .iter()
            .cloned()
            .zip(self.coefficients.iter().copied())
            .collect()
    }

    pub fn n_rows(&self) -> usize {
        self.residuals.len()
    }

    /// Observation index of each row.
    pub fn rows(&self) -> &[usize] {
        &self.rows
    }

    pub fn is_dropped(&self, name: &str) -> bool {
        self.dropped_columns.iter().any(|d| d.name == name)
    }

    pub fn summary(&self, vtv: Option<f64>) -> FitSummary {
        FitSummary {
            kind: self.kind,
            n_rows: self.n_rows(),
            coefficients: self.named_coefficients(),
            dropped_columns: self.dropped_columns.clone(),
            condition: self.condition,
            vtv,
        }
    }
}

/// JSON export of a fit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub kind: Option<ModelKind>,
    pub n_rows: usize,
    pub coefficients: Vec<(String, f64)>,
    pub dropped_columns: Vec<DroppedColumn>,
    pub condition: f64,
    pub vtv: Option<f64>,
}

/// Least squares by Householder QR; X'X and X'Y are kept for the bias
/// correction.
pub fn ols_fit(design: &DesignMatrix) -> Result<FitResult> {
    let x = &design.x;
    let y = &design.response;
    let (n, k) = x.shape();
    if k == 0 || n < k {
        return Err(Error::Singular {
            condition: f64::INFINITY,
        });
    }

    let qr = x.clone().qr();
    let r = qr.r();
    let sv = r.singular_values();
    let (smax, smin) = sv
        .iter()
        .fold((0.0_f64, f64::INFINITY), |(a, b), &s| (a.max(s), b.min(s)));
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(condition <= MAX_CONDITION) {
        return Err(Error::Singular { condition });
    }

    let mut qty = y.clone();
    qr.q_tr_mul(&mut qty);
    let rhs = qty.rows(0, k).into_owned();
    let coefficients = r
        .solve_upper_triangular(&rhs)
        .ok_or(Error::Singular { condition })?;

    let fitted_log_q = x * &coefficients;
    let residuals = y - &fitted_log_q;
    let gram_matrix = x.tr_mul(x);
    let xty = x.tr_mul(y);
    Ok(FitResult {
        names: design.names.clone(),
        coefficients,
        residuals,
        fitted_log_q,
        gram_matrix,
        xty,
        dropped_columns: design.dropped.clone(),
        condition,
        rows: design.rows.clone(),
        kind: design.kind,
    })
}
