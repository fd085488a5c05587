use serde::{Deserialize, Serialize};

use super::{ItemCode, SurveyDataset};
use crate::error::{Error, Result};

/// Within-FSU min/max price ratio for every FSU with at least two consuming
/// households. FSUs with a single consumer are omitted.
pub fn fsu_price_ratios(ds: &SurveyDataset, item: ItemCode) -> Result<Vec<(String, f64)>> {
    let fsus = ds.item_fsus(item)?;
    Ok(fsus
        .iter()
        .filter(|(_, obs)| obs.len() >= 2)
        .map(|(fsu, obs)| {
            let (lo, hi) = obs.iter().fold((f64::INFINITY, 0.0_f64), |(lo, hi), &j| {
                let p = ds.observations()[j].unit_price();
                (lo.min(p), hi.max(p))
            });
            (fsu.clone(), lo / hi)
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScreeningRules {
    /// Ratios strictly below this count toward the heterogeneity mass.
    pub ratio_threshold: f64,
    /// An item is heterogeneous when the mass below `ratio_threshold` exceeds this.
    pub mass_threshold: f64,
    /// Items whose quantity unit is not comparable across households.
    pub variable_unit_items: Vec<ItemCode>,
    pub manual_exclusions: Vec<ItemCode>,
    pub bins: usize,
}

impl Default for ScreeningRules {
    fn default() -> Self {
        Self {
            ratio_threshold: 0.5,
            mass_threshold: 0.2,
            // Tea in cups and cooked meals in counts.
            variable_unit_items: vec![270, 280],
            manual_exclusions: Vec::new(),
            bins: 20,
        }
    }
}

impl ScreeningRules {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.ratio_threshold > 0.0 && self.ratio_threshold < 1.0) {
            v.push("screening.ratio_threshold: must lie in (0, 1)".to_string());
        }
        if !(self.mass_threshold > 0.0 && self.mass_threshold < 1.0) {
            v.push("screening.mass_threshold: must lie in (0, 1)".to_string());
        }
        if self.bins == 0 {
            v.push("screening.bins: must be at least 1".to_string());
        }
        v
    }
}

/// Equal-width histogram over (0, 1] with right-closed bins.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioHistogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl RatioHistogram {
    pub fn from_ratios(ratios: impl IntoIterator<Item = f64>, bins: usize) -> Self {
        let edges = (0..=bins).map(|k| k as f64 / bins as f64).collect();
        let mut counts = vec![0; bins];
        for r in ratios {
            counts[Self::bin_of(r, bins)] += 1;
        }
        Self { edges, counts }
    }

    /// Bin `k` covers (k/bins, (k+1)/bins]. The slack keeps exact edges such
    /// as 0.8 in the lower bin despite 0.8 * 20 rounding above 16.
    fn bin_of(r: f64, bins: usize) -> usize {
        let scaled = r * bins as f64;
        let k = (scaled - 1e-9).ceil() as isize - 1;
        k.clamp(0, bins as isize - 1) as usize
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExclusionReason {
    HeterogeneousPrice,
    VariableUnit,
    Manual,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "verdict", content = "reason")]
pub enum Verdict {
    Include,
    Exclude(ExclusionReason),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItemScreening {
    pub item_code: ItemCode,
    pub n_ratios: usize,
    pub mass_below_threshold: f64,
    pub histogram: RatioHistogram,
    #[serde(flatten)]
    pub verdict: Verdict,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScreeningReport {
    pub rules: ScreeningRules,
    pub items: Vec<ItemScreening>,
}

impl ScreeningReport {
    pub fn included(&self) -> Vec<ItemCode> {
        self.items
            .iter()
            .filter(|s| s.verdict == Verdict::Include)
            .map(|s| s.item_code)
            .collect()
    }

    pub fn get(&self, item: ItemCode) -> Option<&ItemScreening> {
        self.items.iter().find(|s| s.item_code == item)
    }

    /// Flat (item, bin_lo, bin_hi, count) rows.
    pub fn write_histogram_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["item", "bin_lo", "bin_hi", "count"])?;
        for s in &self.items {
            let h = &s.histogram;
            for (k, c) in h.counts.iter().enumerate() {
                w.write_record([
                    s.item_code.to_string(),
                    h.edges[k].to_string(),
                    h.edges[k + 1].to_string(),
                    c.to_string(),
                ])?;
            }
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }
}

pub fn screen_items(ds: &SurveyDataset, rules: &ScreeningRules) -> ScreeningReport {
    let items = ds
        .items()
        .map(|item| {
            let ratios: Vec<f64> = fsu_price_ratios(ds, item)
                .expect("item taken from the dataset index")
                .into_iter()
                .map(|(_, r)| r)
                .collect();
            let below = ratios.iter().filter(|&&r| r < rules.ratio_threshold).count();
            let mass = if ratios.is_empty() {
                0.0
            } else {
                below as f64 / ratios.len() as f64
            };
            let verdict = if rules.variable_unit_items.contains(&item) {
                Verdict::Exclude(ExclusionReason::VariableUnit)
            } else if rules.manual_exclusions.contains(&item) {
                Verdict::Exclude(ExclusionReason::Manual)
            } else if mass > rules.mass_threshold {
                Verdict::Exclude(ExclusionReason::HeterogeneousPrice)
            } else {
                Verdict::Include
            };
            ItemScreening {
                item_code: item,
                n_ratios: ratios.len(),
                mass_below_threshold: mass,
                histogram: RatioHistogram::from_ratios(ratios, rules.bins),
                verdict,
            }
        })
        .collect();
    ScreeningReport {
        rules: rules.clone(),
        items,
    }
}

#[cfg(test)]
mod tests {
    use super::super::fixtures::priced;
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ratio_examples() {
        let ds = priced(&[&[10.0, 10.0, 10.0], &[8.0, 10.0], &[5.0]]);
        let ratios = fsu_price_ratios(&ds, 1).unwrap();
        assert_eq!(ratios, vec![("F0".to_string(), 1.0), ("F1".to_string(), 0.8)]);
        assert!(matches!(fsu_price_ratios(&ds, 9), Err(Error::UnknownItem(9))));
    }

    #[test]
    fn homogeneous_item_included() {
        let ds = priced(&[&[3.0, 3.0], &[4.0, 4.0], &[1.0, 1.0, 1.0]]);
        let r = screen_items(&ds, &ScreeningRules::default());
        let s = r.get(1).unwrap();
        assert_eq!(s.verdict, Verdict::Include);
        assert_eq!(s.mass_below_threshold, 0.0);
        assert_eq!(s.histogram.counts[19], 3);
    }

    #[test]
    fn heterogeneous_item_excluded() {
        // 3 of 10 FSUs have ratio 0.25 < 0.5.
        let mut fsus: Vec<&[f64]> = vec![&[1.0, 4.0]; 3];
        fsus.extend(std::iter::repeat(&[2.0, 2.0][..]).take(7));
        let ds = priced(&fsus);
        let s = screen_items(&ds, &ScreeningRules::default()).items[0].clone();
        assert!((s.mass_below_threshold - 0.3).abs() < 1e-15);
        assert_eq!(s.verdict, Verdict::Exclude(ExclusionReason::HeterogeneousPrice));
    }

    #[test]
    fn variable_unit_and_manual_lists() {
        let ds = priced(&[&[3.0, 3.0]]);
        let rules = ScreeningRules {
            variable_unit_items: vec![1],
            ..ScreeningRules::default()
        };
        assert_eq!(
            screen_items(&ds, &rules).items[0].verdict,
            Verdict::Exclude(ExclusionReason::VariableUnit)
        );
        let rules = ScreeningRules {
            variable_unit_items: vec![],
            manual_exclusions: vec![1],
            ..ScreeningRules::default()
        };
        assert_eq!(
            screen_items(&ds, &rules).items[0].verdict,
            Verdict::Exclude(ExclusionReason::Manual)
        );
    }

    #[test]
    fn histogram_edges() {
        let h = RatioHistogram::from_ratios([0.8, 0.05, 1.0, 0.051, 1e-9], 20);
        assert_eq!(h.counts[15], 1);
        assert_eq!(h.counts[0], 2);
        assert_eq!(h.counts[1], 1);
        assert_eq!(h.counts[19], 1);
        assert_eq!(h.edges.len(), 21);
        assert_eq!(h.total(), 5);
    }

    #[test]
    fn verdict_json_shape() {
        let v = serde_json::to_value(Verdict::Exclude(ExclusionReason::HeterogeneousPrice)).unwrap();
        assert_eq!(v, serde_json::json!({"verdict": "exclude", "reason": "heterogeneous-price"}));
    }

    proptest! {
        #[test]
        fn ratios_bounded_and_permutation_invariant(
            fsus in prop::collection::vec(prop::collection::vec(0.01f64..100.0, 1..6), 1..12),
            rot in 0usize..6,
        ) {
            let refs: Vec<&[f64]> = fsus.iter().map(Vec::as_slice).collect();
            let ds = priced(&refs);
            let ratios = fsu_price_ratios(&ds, 1).unwrap();
            for (_, r) in &ratios {
                prop_assert!(*r > 0.0 && *r <= 1.0);
            }
            let rotated: Vec<Vec<f64>> = fsus.iter().map(|f| {
                let mut f = f.clone();
                let k = rot % f.len();
                f.rotate_left(k);
                f
            }).collect();
            let refs: Vec<&[f64]> = rotated.iter().map(Vec::as_slice).collect();
            prop_assert_eq!(&ratios, &fsu_price_ratios(&priced(&refs), 1).unwrap());

            let report = screen_items(&ds, &ScreeningRules::default());
            prop_assert_eq!(report.items[0].histogram.total(), ratios.len());
            prop_assert_eq!(&report, &screen_items(&ds, &ScreeningRules::default()));
        }
    }
}
