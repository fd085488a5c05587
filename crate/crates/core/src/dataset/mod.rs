//! Household consumption records grouped into first-stage units (FSUs).
//!
//! A [`SurveyDataset`] is immutable once built. All constructors run the same
//! validation, so any dataset value in hand satisfies the record invariants:
//! positive quantities, values, MPCE and household sizes, unique
//! (fsu, household, item) triples, and a single sector/state per FSU.

mod csv_io;
mod screening;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use csv_io::{load_csv, read_csv, write_csv, LoadOutcome, RejectedRow, SchemaConfig};
pub use screening::{
    fsu_price_ratios, screen_items, ExclusionReason, ItemScreening, RatioHistogram,
    ScreeningReport, ScreeningRules, Verdict,
};

pub type ItemCode = u32;

/// Per item: fsu_id -> indices into [`SurveyDataset::observations`].
pub type FsuIndex = BTreeMap<ItemCode, BTreeMap<String, Vec<usize>>>;

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct HouseholdKey {
    pub fsu_id: String,
    pub household_id: String,
}

impl HouseholdKey {
    pub fn new(fsu_id: impl Into<String>, household_id: impl Into<String>) -> Self {
        Self {
            fsu_id: fsu_id.into(),
            household_id: household_id.into(),
        }
    }
}

impl fmt::Display for HouseholdKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.fsu_id, self.household_id)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sector {
    Rural,
    Urban,
}

impl Sector {
    pub fn as_str(self) -> &'static str {
        match self {
            Sector::Rural => "rural",
            Sector::Urban => "urban",
        }
    }
}

impl fmt::Display for Sector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Sector {
    type Err = Error;

    /// Accepts the names and the numeric survey codes (1 = rural, 2 = urban).
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "rural" | "r" | "1" => Ok(Sector::Rural),
            "urban" | "u" | "2" => Ok(Sector::Urban),
            other => Err(Error::InvalidInput(format!("unrecognized sector `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HouseholdRecord {
    pub key: HouseholdKey,
    pub sector: Sector,
    pub state: String,
    pub hh_size: u32,
    pub mpce: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItemObservation {
    pub key: HouseholdKey,
    pub item_code: ItemCode,
    pub quantity: f64,
    pub value: f64,
}

impl ItemObservation {
    pub fn unit_price(&self) -> f64 {
        unit_price(self)
    }
}

/// Unit value of a purchase: value divided by quantity.
pub fn unit_price(obs: &ItemObservation) -> f64 {
    obs.value / obs.quantity
}

#[derive(Clone, Debug)]
pub struct SurveyDataset {
    households: Vec<HouseholdRecord>,
    household_lookup: HashMap<HouseholdKey, usize>,
    fsus: BTreeMap<String, Vec<usize>>,
    observations: Vec<ItemObservation>,
    obs_household: Vec<usize>,
    obs_lookup: HashMap<(usize, ItemCode), usize>,
    fsu_index: FsuIndex,
}

fn positive(x: f64) -> bool {
    x.is_finite() && x > 0.0
}

impl SurveyDataset {
    /// Validates the records and builds the per-item FSU index.
    pub fn new(households: Vec<HouseholdRecord>, observations: Vec<ItemObservation>) -> Result<Self> {
        let mut household_lookup = HashMap::with_capacity(households.len());
        let mut fsus: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        let mut fsu_meta: HashMap<&str, (Sector, &str)> = HashMap::new();

        for (i, hh) in households.iter().enumerate() {
            if hh.hh_size < 1 {
                return Err(Error::InvalidInput(format!("household {} has hh_size 0", hh.key)));
            }
            if !positive(hh.mpce) {
                return Err(Error::InvalidInput(format!(
                    "household {} has non-positive mpce {}",
                    hh.key, hh.mpce
                )));
            }
            if household_lookup.insert(hh.key.clone(), i).is_some() {
                return Err(Error::Inconsistent(format!("household {} listed twice", hh.key)));
            }
            match fsu_meta.get(hh.key.fsu_id.as_str()) {
                Some(&(sector, state)) if sector != hh.sector || state != hh.state => {
                    return Err(Error::Inconsistent(format!(
                        "fsu `{}` mixes sector/state ({sector}/{state} vs {}/{})",
                        hh.key.fsu_id, hh.sector, hh.state
                    )));
                }
                Some(_) => {}
                None => {
                    fsu_meta.insert(hh.key.fsu_id.as_str(), (hh.sector, hh.state.as_str()));
                }
            }
            fsus.entry(hh.key.fsu_id.clone()).or_default().push(i);
        }
        drop(fsu_meta);

        let mut obs_household = Vec::with_capacity(observations.len());
        let mut obs_lookup = HashMap::with_capacity(observations.len());
        for (j, obs) in observations.iter().enumerate() {
            let &h = household_lookup.get(&obs.key).ok_or_else(|| Error::UnknownHousehold {
                fsu_id: obs.key.fsu_id.clone(),
                household_id: obs.key.household_id.clone(),
            })?;
            if !positive(obs.quantity) || !positive(obs.value) {
                return Err(Error::InvalidInput(format!(
                    "observation {} item {} has non-positive quantity or value",
                    obs.key, obs.item_code
                )));
            }
            if obs_lookup.insert((h, obs.item_code), j).is_some() {
                return Err(Error::DuplicateObservation {
                    fsu_id: obs.key.fsu_id.clone(),
                    household_id: obs.key.household_id.clone(),
                    item: obs.item_code,
                });
            }
            obs_household.push(h);
        }

        let fsu_index = build_index(&observations);
        Ok(Self {
            households,
            household_lookup,
            fsus,
            observations,
            obs_household,
            obs_lookup,
            fsu_index,
        })
    }

    pub fn households(&self) -> &[HouseholdRecord] {
        &self.households
    }

    pub fn observations(&self) -> &[ItemObservation] {
        &self.observations
    }

    pub fn household(&self, key: &HouseholdKey) -> Option<&HouseholdRecord> {
        self.household_lookup.get(key).map(|&i| &self.households[i])
    }

    /// Household record owning observation `obs`.
    pub fn household_of(&self, obs: usize) -> &HouseholdRecord {
        &self.households[self.obs_household[obs]]
    }

    pub fn observation_for(&self, key: &HouseholdKey, item: ItemCode) -> Option<&ItemObservation> {
        let &h = self.household_lookup.get(key)?;
        self.obs_lookup.get(&(h, item)).map(|&j| &self.observations[j])
    }

    /// All FSUs with their household indices.
    pub fn fsus(&self) -> &BTreeMap<String, Vec<usize>> {
        &self.fsus
    }

    pub fn n_fsu(&self) -> usize {
        self.fsus.len()
    }

    pub fn items(&self) -> impl Iterator<Item = ItemCode> + '_ {
        self.fsu_index.keys().copied()
    }

    pub fn has_item(&self, item: ItemCode) -> bool {
        self.fsu_index.contains_key(&item)
    }

    pub fn fsu_index(&self) -> &FsuIndex {
        &self.fsu_index
    }

    /// Consuming observations of `item`, keyed by FSU.
    pub fn item_fsus(&self, item: ItemCode) -> Result<&BTreeMap<String, Vec<usize>>> {
        self.fsu_index.get(&item).ok_or(Error::UnknownItem(item))
    }

    /// Observation indices for `item` in index order (FSU, then input order).
    pub fn item_observations(&self, item: ItemCode) -> Result<Vec<usize>> {
        Ok(self.item_fsus(item)?.values().flatten().copied().collect())
    }

    pub fn rebuild_fsu_index(&self) -> FsuIndex {
        build_index(&self.observations)
    }

    pub fn index_is_consistent(&self) -> bool {
        self.rebuild_fsu_index() == self.fsu_index
    }
}

fn build_index(observations: &[ItemObservation]) -> FsuIndex {
    let mut index = FsuIndex::new();
    for (j, obs) in observations.iter().enumerate() {
        index
            .entry(obs.item_code)
            .or_default()
            .entry(obs.key.fsu_id.clone())
            .or_default()
            .push(j);
    }
    index
}

/// Per-capita expenditure on `item` relative to MPCE.
///
/// `value_override` replaces the recorded value (model-predicted shares); the
/// household then need not consume the item.
pub fn household_share(
    ds: &SurveyDataset,
    key: &HouseholdKey,
    item: ItemCode,
    value_override: Option<f64>,
) -> Result<f64> {
    let hh = ds.household(key).ok_or_else(|| Error::UnknownHousehold {
        fsu_id: key.fsu_id.clone(),
        household_id: key.household_id.clone(),
    })?;
    let value = match value_override {
        Some(v) if v.is_finite() && v >= 0.0 => v,
        Some(v) => return Err(Error::InvalidInput(format!("override value {v} is negative"))),
        None => {
            ds.observation_for(key, item)
                .ok_or_else(|| Error::NotConsumed {
                    fsu_id: key.fsu_id.clone(),
                    household_id: key.household_id.clone(),
                    item,
                })?
                .value
        }
    };
    Ok(share_of(value, hh))
}

pub(crate) fn share_of(value: f64, hh: &HouseholdRecord) -> f64 {
    (value / hh.hh_size as f64) / hh.mpce
}


#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;

    #[test]
    fn unit_price_examples() {
        assert_eq!(unit_price(&obs("F", "H", 1, 2.0, 30.0)), 15.0);
        assert_eq!(unit_price(&obs("F", "H", 1, 7.5, 7.5)), 1.0);
        let o = obs("F", "H", 1, 3.0, 100.0);
        let p = unit_price(&o);
        assert!((p - 33.333_333_333_333_336).abs() < 1e-12);
        assert!(((p * o.quantity - o.value) / o.value).abs() < 1e-9);
    }

    #[test]
    fn share_examples() {
        let ds = SurveyDataset::new(
            vec![hh("F", "H", 4, 500.0)],
            vec![obs("F", "H", 7, 1.0, 100.0)],
        )
        .unwrap();
        let key = HouseholdKey::new("F", "H");
        assert!((household_share(&ds, &key, 7, None).unwrap() - 0.05).abs() < 1e-15);
        assert_eq!(household_share(&ds, &key, 7, Some(0.0)).unwrap(), 0.0);
        assert_eq!(household_share(&ds, &key, 7, Some(2000.0)).unwrap(), 1.0);
        assert!(matches!(
            household_share(&ds, &HouseholdKey::new("F", "X"), 7, None),
            Err(Error::UnknownHousehold { .. })
        ));
        assert!(matches!(
            household_share(&ds, &key, 8, None),
            Err(Error::NotConsumed { .. })
        ));
    }

    #[test]
    fn rejects_mixed_fsu_metadata() {
        let mut b = hh("F", "B", 1, 10.0);
        b.sector = Sector::Urban;
        let err = SurveyDataset::new(vec![hh("F", "A", 1, 10.0), b], vec![]).unwrap_err();
        assert!(matches!(err, Error::Inconsistent(_)));
    }

    #[test]
    fn rejects_duplicate_observation() {
        let err = SurveyDataset::new(
            vec![hh("F", "A", 1, 10.0)],
            vec![obs("F", "A", 1, 1.0, 1.0), obs("F", "A", 1, 2.0, 1.0)],
        )
        .unwrap_err();
        assert!(matches!(err, Error::DuplicateObservation { item: 1, .. }));
    }

    #[test]
    fn index_rebuild_matches() {
        let ds = priced(&[&[1.0, 2.0], &[3.0], &[4.0, 4.0, 5.0]]);
        assert!(ds.index_is_consistent());
        assert_eq!(ds.item_fsus(1).unwrap().len(), 3);
        assert_eq!(ds.item_observations(1).unwrap().len(), 6);
        assert!(matches!(ds.item_fsus(2), Err(Error::UnknownItem(2))));
    }

    #[test]
    fn sector_codes() {
        assert_eq!("1".parse::<Sector>().unwrap(), Sector::Rural);
        assert_eq!("Urban".parse::<Sector>().unwrap(), Sector::Urban);
        assert!("3".parse::<Sector>().is_err());
    }
}
