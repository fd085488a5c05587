//! One-household-per-FSU price collection and the repetition plan.

use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{HouseholdKey, ItemCode, ItemObservation, SurveyDataset};
use crate::error::{Error, Result};
use crate::seeding::derive_seed;

/// The household whose price stands in for its whole FSU.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ThinSampleAssignment {
    pub item: ItemCode,
    pub seed: u64,
    selection: BTreeMap<String, usize>,
    keys: BTreeMap<String, HouseholdKey>,
}

impl ThinSampleAssignment {
    /// fsu_id -> selected household.
    pub fn selection(&self) -> &BTreeMap<String, HouseholdKey> {
        &self.keys
    }

    /// fsu_id -> selected observation index.
    pub fn selected_observations(&self) -> &BTreeMap<String, usize> {
        &self.selection
    }

    pub fn write_audit_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["fsu_id", "selected_household_id"])?;
        for (fsu, key) in &self.keys {
            w.write_record([fsu.as_str(), key.household_id.as_str()])?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }
}

/// Picks one consuming household uniformly at random in every FSU that has
/// at least one. FSUs are visited in index order from a single stream.
pub fn draw_thin_sample(ds: &SurveyDataset, item: ItemCode, seed: u64) -> Result<ThinSampleAssignment> {
    let fsus = ds.item_fsus(item)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut selection = BTreeMap::new();
    let mut keys = BTreeMap::new();
    for (fsu, obs) in fsus {
        let j = obs[rng.random_range(0..obs.len())];
        selection.insert(fsu.clone(), j);
        keys.insert(fsu.clone(), ds.observations()[j].key.clone());
    }
    Ok(ThinSampleAssignment {
        item,
        seed,
        selection,
        keys,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct StarPricedObservation<'a> {
    pub base: &'a ItemObservation,
    /// Index into [`SurveyDataset::observations`].
    pub observation: usize,
    pub actual_price: f64,
    pub star_price: f64,
    /// ln(star_price) - ln(actual_price).
    pub log_price_ratio: f64,
}

/// Gives every consuming observation its FSU's selected price, in the
/// item's index order.
pub fn assign_star_prices<'a>(
    ds: &'a SurveyDataset,
    a: &ThinSampleAssignment,
) -> Result<Vec<StarPricedObservation<'a>>> {
    let fsus = ds
        .item_fsus(a.item)
        .map_err(|_| Error::AssignmentMismatch(format!("item {} not in dataset", a.item)))?;
    if fsus.len() != a.selection.len() {
        return Err(Error::AssignmentMismatch(format!(
            "{} FSUs consume item {}, assignment covers {}",
            fsus.len(),
            a.item,
            a.selection.len()
        )));
    }
    let mut out = Vec::with_capacity(fsus.values().map(Vec::len).sum());
    for (fsu, obs) in fsus {
        let &sel = a
            .selection
            .get(fsu)
            .ok_or_else(|| Error::AssignmentMismatch(format!("no selection for fsu `{fsu}`")))?;
        if !obs.contains(&sel) {
            return Err(Error::AssignmentMismatch(format!(
                "selected observation for fsu `{fsu}` is not a consumer there"
            )));
        }
        let star_price = ds.observations()[sel].unit_price();
        for &j in obs {
            let base = &ds.observations()[j];
            let actual_price = base.unit_price();
            let log_price_ratio = if j == sel { 0.0 } else { star_price.ln() - actual_price.ln() };
            out.push(StarPricedObservation {
                base,
                observation: j,
                actual_price,
                star_price,
                log_price_ratio,
            });
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepetitionPlan {
    pub master_seed: u64,
    pub repetitions: usize,
    /// Mixed into every derived seed; bump it if a collision is reported.
    #[serde(default)]
    pub salt: u64,
}

impl RepetitionPlan {
    pub fn new(master_seed: u64, repetitions: usize) -> Self {
        Self {
            master_seed,
            repetitions,
            salt: 0,
        }
    }
}

/// Seed of repetition `r` is `derive_seed(master, [salt, r])`.
pub fn repetition_seeds(plan: &RepetitionPlan) -> Result<Vec<u64>> {
    if plan.repetitions == 0 {
        return Err(Error::InvalidInput("repetitions must be at least 1".into()));
    }
    let mut seen = HashMap::with_capacity(plan.repetitions);
    (0..plan.repetitions)
        .map(|r| {
            let s = derive_seed(plan.master_seed, &[plan.salt, r as u64]);
            match seen.insert(s, r) {
                Some(first) => Err(Error::SeedCollision { first, second: r }),
                None => Ok(s),
            }
        })
        .collect()
}
