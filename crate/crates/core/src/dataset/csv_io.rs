use std::collections::{hash_map::Entry, HashMap};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{HouseholdKey, HouseholdRecord, ItemCode, ItemObservation, Sector, SurveyDataset};
use crate::error::{Error, Result};

/// Input column names. Every field defaults to the canonical column name.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchemaConfig {
    pub fsu_id: String,
    pub household_id: String,
    pub sector: String,
    pub state: String,
    pub hh_size: String,
    pub mpce: String,
    pub item_code: String,
    pub quantity: String,
    pub value: String,
}

impl Default for SchemaConfig {
    fn default() -> Self {
        Self {
            fsu_id: "fsu_id".into(),
            household_id: "household_id".into(),
            sector: "sector".into(),
            state: "state".into(),
            hh_size: "hh_size".into(),
            mpce: "mpce".into(),
            item_code: "item_code".into(),
            quantity: "quantity".into(),
            value: "value".into(),
        }
    }
}

impl SchemaConfig {
    fn names(&self) -> [&str; 9] {
        [
            &self.fsu_id,
            &self.household_id,
            &self.sector,
            &self.state,
            &self.hh_size,
            &self.mpce,
            &self.item_code,
            &self.quantity,
            &self.value,
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct RejectedRow {
    /// 1-based line number in the file, header being line 1.
    pub line: u64,
    pub reason: String,
}

#[derive(Debug)]
pub struct LoadOutcome {
    pub dataset: SurveyDataset,
    pub rejected: Vec<RejectedRow>,
}

pub fn load_csv(path: &Path, schema: &SchemaConfig) -> Result<LoadOutcome> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, schema)
}

enum Row {
    Household(HouseholdRecord),
    Observation(HouseholdRecord, ItemObservation),
}

/// Reads the flat one-row-per-observation layout.
///
/// A row with blank `item_code`, `quantity` and `value` declares a household
/// that consumed none of the recorded items; it still counts toward the
/// FSU's household total.
pub fn read_csv<R: Read>(reader: R, schema: &SchemaConfig) -> Result<LoadOutcome> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut cols = [0usize; 9];
    for (slot, name) in cols.iter_mut().zip(schema.names()) {
        *slot = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn {
                column: name.to_string(),
            })?;
    }

    let mut households: Vec<HouseholdRecord> = Vec::new();
    let mut hh_pos: HashMap<HouseholdKey, usize> = HashMap::new();
    let mut observations = Vec::new();
    let mut seen: HashMap<(HouseholdKey, ItemCode), u64> = HashMap::new();
    let mut rejected = Vec::new();

    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i as u64 + 2;
        let field = |k: usize| rec.get(cols[k]).unwrap_or("");
        let row = match parse_row(field) {
            Ok(row) => row,
            Err(reason) => {
                log::warn!("line {line}: row dropped: {reason}");
                rejected.push(RejectedRow { line, reason });
                continue;
            }
        };
        let hh = match &row {
            Row::Household(hh) | Row::Observation(hh, _) => hh,
        };
        match hh_pos.entry(hh.key.clone()) {
            Entry::Occupied(e) => {
                let known = &households[*e.get()];
                if known != hh {
                    return Err(Error::Inconsistent(format!(
                        "line {line}: household {} attributes differ from an earlier row",
                        hh.key
                    )));
                }
            }
            Entry::Vacant(e) => {
                e.insert(households.len());
                households.push(hh.clone());
            }
        }
        if let Row::Observation(_, obs) = row {
            if let Some(first) = seen.insert((obs.key.clone(), obs.item_code), line) {
                log::error!("line {line}: duplicates line {first}");
                return Err(Error::DuplicateObservation {
                    fsu_id: obs.key.fsu_id,
                    household_id: obs.key.household_id,
                    item: obs.item_code,
                });
            }
            observations.push(obs);
        }
    }

    let dataset = SurveyDataset::new(households, observations)?;
    Ok(LoadOutcome { dataset, rejected })
}

fn parse_positive(raw: &str, name: &str) -> std::result::Result<f64, String> {
    let x: f64 = raw.parse().map_err(|_| format!("unparseable {name} `{raw}`"))?;
    if !x.is_finite() || x <= 0.0 {
        return Err(format!("non-positive {name}"));
    }
    Ok(x)
}

fn parse_row<'a>(field: impl Fn(usize) -> &'a str) -> std::result::Result<Row, String> {
    let fsu_id = field(0);
    let household_id = field(1);
    if fsu_id.is_empty() {
        return Err("missing fsu_id".into());
    }
    if household_id.is_empty() {
        return Err("missing household_id".into());
    }
    let sector: Sector = field(2).parse().map_err(|e: Error| e.to_string())?;
    let state = field(3).to_string();
    let hh_size: i64 = field(4)
        .parse()
        .map_err(|_| format!("unparseable hh_size `{}`", field(4)))?;
    if hh_size < 1 {
        return Err("non-positive hh_size".into());
    }
    let hh_size = u32::try_from(hh_size).map_err(|_| "hh_size out of range".to_string())?;
    let mpce = parse_positive(field(5), "mpce")?;
    let key = HouseholdKey::new(fsu_id, household_id);
    let hh = HouseholdRecord {
        key: key.clone(),
        sector,
        state,
        hh_size,
        mpce,
    };

    let (item, quantity, value) = (field(6), field(7), field(8));
    if item.is_empty() {
        if !quantity.is_empty() || !value.is_empty() {
            return Err("quantity/value given without item_code".into());
        }
        return Ok(Row::Household(hh));
    }
    let item_code: ItemCode = item
        .parse()
        .map_err(|_| format!("unparseable item_code `{item}`"))?;
    let quantity = parse_positive(quantity, "quantity")?;
    let value = parse_positive(value, "value")?;
    Ok(Row::Observation(
        hh,
        ItemObservation {
            key,
            item_code,
            quantity,
            value,
        },
    ))
}

/// Writes `ds` in the layout [`read_csv`] accepts, including household-only
/// rows for households without observations.
pub fn write_csv<W: Write>(ds: &SurveyDataset, writer: W, schema: &SchemaConfig) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(schema.names())?;

    let mut by_household: Vec<Vec<usize>> = vec![Vec::new(); ds.households().len()];
    for j in 0..ds.observations().len() {
        by_household[ds.obs_household[j]].push(j);
    }
    for (h, hh) in ds.households().iter().enumerate() {
        let base = [
            hh.key.fsu_id.clone(),
            hh.key.household_id.clone(),
            hh.sector.to_string(),
            hh.state.clone(),
            hh.hh_size.to_string(),
            hh.mpce.to_string(),
        ];
        if by_household[h].is_empty() {
            w.write_record(base.iter().map(String::as_str).chain(["", "", ""]))?;
        }
        for &j in &by_household[h] {
            let o = &ds.observations()[j];
            let tail = [
                o.item_code.to_string(),
                o.quantity.to_string(),
                o.value.to_string(),
            ];
            w.write_record(base.iter().chain(tail.iter()))?;
        }
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "fsu_id,household_id,sector,state,hh_size,mpce,item_code,quantity,value\n";

    fn load(body: &str) -> Result<LoadOutcome> {
        read_csv(format!("{HEADER}{body}").as_bytes(), &SchemaConfig::default())
    }

    #[test]
    fn well_formed_rows() {
        let out = load(
            "F1,H1,rural,19,4,500,200,2,30\n\
             F1,H2,rural,19,3,450,200,1.5,21\n\
             F2,H1,2,07,2,900,200,1,16\n",
        )
        .unwrap();
        assert_eq!(out.dataset.observations().len(), 3);
        assert!(out.rejected.is_empty());
        assert_eq!(out.dataset.n_fsu(), 2);
    }

    #[test]
    fn zero_quantity_dropped() {
        let out = load(
            "F1,H1,rural,19,4,500,200,0,30\n\
             F1,H2,rural,19,3,450,200,1.5,21\n",
        )
        .unwrap();
        assert_eq!(out.dataset.observations().len(), 1);
        assert_eq!(out.rejected.len(), 1);
        assert_eq!(out.rejected[0].line, 2);
        assert_eq!(out.rejected[0].reason, "non-positive quantity");
    }

    #[test]
    fn other_row_rejections() {
        let out = load(
            "F1,H1,rural,19,0,500,200,1,30\n\
             F1,H2,rural,19,3,-1,200,1,21\n\
             F1,H3,rural,19,3,10,200,1,abc\n\
             F1,H4,rural,19,3,10,200,1,-2\n",
        )
        .unwrap();
        let reasons: Vec<_> = out.rejected.iter().map(|r| r.reason.as_str()).collect();
        assert_eq!(
            reasons,
            [
                "non-positive hh_size",
                "non-positive mpce",
                "unparseable value `abc`",
                "non-positive value"
            ]
        );
        assert!(out.dataset.observations().is_empty());
    }

    #[test]
    fn duplicate_rows_are_fatal() {
        let err = load(
            "F1,H1,rural,19,4,500,200,2,30\n\
             F1,H1,rural,19,4,500,200,2,30\n",
        )
        .unwrap_err();
        assert!(matches!(err, Error::DuplicateObservation { item: 200, .. }));
    }

    #[test]
    fn missing_column_named() {
        let err = read_csv(
            "fsu_id,household_id\nF,H\n".as_bytes(),
            &SchemaConfig::default(),
        )
        .unwrap_err();
        match err {
            Error::MissingColumn { column } => assert_eq!(column, "sector"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn remapped_columns() {
        let schema = SchemaConfig {
            fsu_id: "FSU".into(),
            value: "Val".into(),
            ..SchemaConfig::default()
        };
        let csv = "FSU,household_id,sector,state,hh_size,mpce,item_code,quantity,Val\nA,1,1,10,1,5,9,1,2\n";
        let out = read_csv(csv.as_bytes(), &schema).unwrap();
        assert_eq!(out.dataset.observations()[0].value, 2.0);
    }

    #[test]
    fn household_only_rows_round_trip() {
        let out = load(
            "F1,H1,rural,19,4,500,200,2,30\n\
             F1,H2,rural,19,3,450,,,\n",
        )
        .unwrap();
        assert_eq!(out.dataset.households().len(), 2);
        let mut buf = Vec::new();
        write_csv(&out.dataset, &mut buf, &SchemaConfig::default()).unwrap();
        let again = read_csv(buf.as_slice(), &SchemaConfig::default()).unwrap();
        assert_eq!(again.dataset.households(), out.dataset.households());
        assert_eq!(again.dataset.observations(), out.dataset.observations());
    }

    #[test]
    fn conflicting_household_attributes() {
        let err = load(
            "F1,H1,rural,19,4,500,200,2,30\n\
             F1,H1,rural,19,5,500,201,2,30\n",
        )
        .unwrap_err();
        assert!(matches!(err, Error::Inconsistent(_)));
    }
}
