use std::collections::{BTreeSet, HashMap};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::{ItemCode, Sector, SurveyDataset};
use crate::error::{Error, Result};
use crate::sampling::StarPricedObservation;

pub const INTERCEPT: &str = "intercept";
pub const HH_SIZE: &str = "hh_size";
pub const LOG_PRICE: &str = "log_price";
pub const LOG_MPCE: &str = "log_mpce";
pub const LOG_PRICE_RATIO: &str = "log_price_ratio";

/// Relative standard deviation at or below which a column counts as constant.
const DEGENERATE_SD: f64 = 1e-9;
/// Residual-norm fraction at or below which a column lies in the span of
/// the columns before it.
const COLLINEAR_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// log Q on sector, state, S, log P, log E.
    #[default]
    ActualPrice,
    /// As above plus log(P*/P).
    StarPriceDecomposed,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    /// Defaults to the first level present among the rows.
    pub sector_reference: Option<Sector>,
    pub state_reference: Option<String>,
}

impl ModelSpec {
    pub fn new(kind: ModelKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DropReason {
    ZeroVariance,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DroppedColumn {
    pub name: String,
    pub reason: DropReason,
}

/// Regressors, response and the row -> observation map of one fit.
#[derive(Clone, Debug)]
pub struct DesignMatrix {
    pub(crate) names: Vec<String>,
    pub(crate) x: DMatrix<f64>,
    pub(crate) response: DVector<f64>,
    pub(crate) rows: Vec<usize>,
    pub(crate) dropped: Vec<DroppedColumn>,
    pub(crate) kind: Option<ModelKind>,
}

impl DesignMatrix {
    /// Design from explicit columns. Applies the same zero-variance pruning
    /// (except to a column named `intercept`) and collinearity check as
    /// [`build_design`].
    pub fn from_columns(
        names: Vec<String>,
        columns: Vec<Vec<f64>>,
        response: Vec<f64>,
    ) -> Result<Self> {
        if names.len() != columns.len() {
            return Err(Error::InvalidInput("one name per column required".into()));
        }
        let n = response.len();
        if columns.iter().any(|c| c.len() != n) {
            return Err(Error::InvalidInput("column lengths differ from response".into()));
        }
        assemble(names, columns, response, (0..n).collect(), None)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn response(&self) -> &DVector<f64> {
        &self.response
    }

    pub fn rows(&self) -> &[usize] {
        &self.rows
    }

    pub fn dropped(&self) -> &[DroppedColumn] {
        &self.dropped
    }

    pub fn n_rows(&self) -> usize {
        self.x.nrows()
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

fn is_degenerate(col: &[f64]) -> bool {
    let n = col.len() as f64;
    if col.is_empty() {
        return true;
    }
    let mean = col.iter().sum::<f64>() / n;
    let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    var.sqrt() <= DEGENERATE_SD * mean.abs().max(1.0)
}

/// Names of columns lying in the span of earlier columns, by modified
/// Gram-Schmidt in column order.
fn collinear_columns(names: &[String], columns: &[Vec<f64>]) -> Vec<String> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut flagged = Vec::new();
    for (name, col) in names.iter().zip(columns) {
        let norm0 = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut v = col.clone();
        for q in &basis {
            let dot: f64 = q.iter().zip(&v).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(q).for_each(|(vi, qi)| *vi -= dot * qi);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm0 == 0.0 || norm <= COLLINEAR_TOL * norm0 {
            flagged.push(name.clone());
        } else {
            v.iter_mut().for_each(|x| *x /= norm);
            basis.push(v);
        }
    }
    flagged
}

fn assemble(
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
    response: Vec<f64>,
    rows: Vec<usize>,
    kind: Option<ModelKind>,
) -> Result<DesignMatrix> {
    let n = response.len();
    let mut kept_names = Vec::with_capacity(names.len());
    let mut kept = Vec::with_capacity(columns.len());
    let mut dropped = Vec::new();
    for (name, col) in names.into_iter().zip(columns) {
        if name != INTERCEPT && is_degenerate(&col) {
            log::debug!("dropping zero-variance column {name}");
            dropped.push(DroppedColumn {
                name,
                reason: DropReason::ZeroVariance,
            });
        } else {
            kept_names.push(name);
            kept.push(col);
        }
    }
    if kept.len() > n {
        return Err(Error::RankDeficient { columns: kept_names });
    }
    let collinear = collinear_columns(&kept_names, &kept);
    if !collinear.is_empty() {
        return Err(Error::RankDeficient { columns: collinear });
    }
    let k = kept.len();
    let x = DMatrix::from_iterator(n, k, kept.into_iter().flatten());
    Ok(DesignMatrix {
        names: kept_names,
        x,
        response: DVector::from_vec(response),
        rows,
        dropped,
        kind,
    })
}

fn reference_level<T: Ord + Clone + std::fmt::Display>(
    levels: &BTreeSet<T>,
    requested: Option<&T>,
    factor: &str,
) -> Result<T> {
    match requested {
        Some(r) if levels.contains(r) => Ok(r.clone()),
        Some(r) => Err(Error::InvalidInput(format!(
            "{factor} reference level `{r}` does not occur in the item's rows"
        ))),
        None => levels
            .iter()
            .next()
            .cloned()
            .ok_or_else(|| Error::InvalidInput("design has no rows".into())),
    }
}

/// One row per consuming observation of `item`, in index order.
///
/// Columns: intercept, sector dummies, state dummies (reference-level
/// coding), hh_size, log_price, log_mpce, and for
/// [`ModelKind::StarPriceDecomposed`] log_price_ratio. Constant columns
/// are dropped and recorded.
pub fn build_design(
    ds: &SurveyDataset,
    item: ItemCode,
    spec: &ModelSpec,
    star: Option<&[StarPricedObservation<'_>]>,
) -> Result<DesignMatrix> {
    let rows = ds.item_observations(item)?;
    let n = rows.len();

    let ratios: Option<Vec<f64>> = match spec.kind {
        ModelKind::ActualPrice => None,
        ModelKind::StarPriceDecomposed => {
            let star = star.ok_or_else(|| {
                Error::InvalidInput("decomposed model needs star-priced observations".into())
            })?;
            let aligned = star.len() == n && star.iter().zip(&rows).all(|(s, &j)| s.observation == j);
            if aligned {
                Some(star.iter().map(|s| s.log_price_ratio).collect())
            } else {
                let by_obs: HashMap<usize, f64> =
                    star.iter().map(|s| (s.observation, s.log_price_ratio)).collect();
                let v = rows
                    .iter()
                    .map(|j| by_obs.get(j).copied())
                    .collect::<Option<Vec<f64>>>()
                    .ok_or_else(|| {
                        Error::InvalidInput("star observations do not cover all rows".into())
                    })?;
                Some(v)
            }
        }
    };

    let households: Vec<_> = rows.iter().map(|&j| ds.household_of(j)).collect();
    let sectors: BTreeSet<Sector> = households.iter().map(|h| h.sector).collect();
    let states: BTreeSet<String> = households.iter().map(|h| h.state.clone()).collect();
    let sector_ref = reference_level(&sectors, spec.sector_reference.as_ref(), "sector")?;
    let state_ref = reference_level(&states, spec.state_reference.as_ref(), "state")?;

    let mut names = vec![INTERCEPT.to_string()];
    let mut columns = vec![vec![1.0; n]];
    for &s in sectors.iter().filter(|&&s| s != sector_ref) {
        names.push(format!("sector[{s}]"));
        columns.push(households.iter().map(|h| f64::from(u8::from(h.sector == s))).collect());
    }
    for st in states.iter().filter(|&st| *st != state_ref) {
        names.push(format!("state[{st}]"));
        columns.push(households.iter().map(|h| f64::from(u8::from(&h.state == st))).collect());
    }
    names.push(HH_SIZE.into());
    columns.push(households.iter().map(|h| h.hh_size as f64).collect());
    names.push(LOG_PRICE.into());
    columns.push(rows.iter().map(|&j| ds.observations()[j].unit_price().ln()).collect());
    names.push(LOG_MPCE.into());
    columns.push(households.iter().map(|h| h.mpce.ln()).collect());
    if let Some(r) = ratios {
        names.push(LOG_PRICE_RATIO.into());
        columns.push(r);
    }
    let response = rows.iter().map(|&j| ds.observations()[j].quantity.ln()).collect();
    assemble(names, columns, response, rows, Some(spec.kind))
}
