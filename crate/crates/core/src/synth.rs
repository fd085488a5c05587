//! Synthetic surveys drawn from the log-log demand model with known
//! coefficients.
//!
//! Every FSU and every household draws from its own stream derived from the
//! master seed (see [`crate::seeding`]): FSU `i` uses tags `[1, i]`,
//! household `h` of FSU `i` uses `[2, i, h]`, and drawn ground-truth
//! components use `[0, k]`. Output does not depend on thread scheduling.

use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{HouseholdKey, HouseholdRecord, ItemCode, ItemObservation, Sector, SurveyDataset};
use crate::error::{Error, Result};
use crate::seeding::rng_for;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalParams {
    pub mean: f64,
    pub sd: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_fsu: usize,
    /// Inclusive household-count range per FSU.
    pub households_per_fsu: (u32, u32),
    pub n_states: usize,
    /// Probability that an FSU is rural.
    pub sector_split: f64,
    /// Range for the per-FSU consumption probability when it is drawn.
    pub consumption_prob_range: (f64, f64),
    pub base_log_price: NormalParams,
    /// Sd of the household log-price deviation from its FSU base price.
    pub within_fsu_price_jitter: f64,
    pub log_mpce: NormalParams,
    /// Household size is 1 + Poisson(lambda).
    pub hh_size_lambda: f64,
    pub noise_sd: f64,
    pub item_code: ItemCode,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_fsu: 12734,
            households_per_fsu: (6, 10),
            n_states: 10,
            sector_split: 0.6,
            consumption_prob_range: (0.3, 0.9),
            base_log_price: NormalParams { mean: 3.0, sd: 0.3 },
            within_fsu_price_jitter: 0.05,
            log_mpce: NormalParams { mean: 7.5, sd: 0.5 },
            hh_size_lambda: 3.0,
            noise_sd: 0.3,
            item_code: 200,
        }
    }
}

impl SynthConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        let (lo, hi) = self.households_per_fsu;
        if self.n_fsu < 1 {
            v.push("n_fsu: must be at least 1".into());
        }
        if lo < 1 || lo > hi {
            v.push("households_per_fsu: need 1 <= min <= max".into());
        }
        if self.n_states < 1 {
            v.push("n_states: must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.sector_split) {
            v.push("sector_split: must lie in [0, 1]".into());
        }
        let (plo, phi) = self.consumption_prob_range;
        if !(plo > 0.0 && plo <= phi && phi < 1.0) {
            v.push("consumption_prob_range: need 0 < lo <= hi < 1".into());
        }
        for (name, x) in [
            ("base_log_price.sd", self.base_log_price.sd),
            ("within_fsu_price_jitter", self.within_fsu_price_jitter),
            ("log_mpce.sd", self.log_mpce.sd),
            ("hh_size_lambda", self.hh_size_lambda),
            ("noise_sd", self.noise_sd),
        ] {
            if !(x.is_finite() && x >= 0.0) {
                v.push(format!("{name}: must be finite and >= 0"));
            }
        }
        v
    }

    fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v.join("; ")))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Indexed rural, urban.
    pub sector_effects: Vec<f64>,
    /// Indexed by state ordinal; state `j` is coded `format!("{:02}", j + 1)`.
    pub state_effects: Vec<f64>,
    pub gamma_size: f64,
    pub gamma_price: f64,
    pub gamma_expenditure: f64,
    pub consumption_probs: Vec<f64>,
}

/// Ground truth as written in a config file; absent parts are drawn.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TruthSpec {
    pub sector_effects: Option<Vec<f64>>,
    pub state_effects: Option<Vec<f64>>,
    pub gamma_size: Option<f64>,
    pub gamma_price: Option<f64>,
    pub gamma_expenditure: Option<f64>,
    /// Either one probability per FSU or a single value for all FSUs.
    pub consumption_probs: Option<Vec<f64>>,
}

impl TruthSpec {
    /// Fills missing parts: sector effects (0, -0.1), state effects
    /// N(0, 0.2^2), gammas (0.05, -0.8, 0.6), probabilities uniform over
    /// `cfg.consumption_prob_range`.
    pub fn resolve(&self, cfg: &SynthConfig, seed: u64) -> Result<GroundTruth> {
        cfg.validate()?;
        let mut rng = rng_for(seed, &[0, 0]);
        let state_effects = match &self.state_effects {
            Some(s) => s.clone(),
            None => (0..cfg.n_states)
                .map(|_| 0.2 * rng.sample::<f64, _>(StandardNormal))
                .collect(),
        };
        let consumption_probs = match self.consumption_probs.as_deref() {
            Some([p]) => vec![*p; cfg.n_fsu],
            Some(ps) => ps.to_vec(),
            None => {
                let (lo, hi) = cfg.consumption_prob_range;
                let mut rng = rng_for(seed, &[0, 1]);
                (0..cfg.n_fsu).map(|_| lo + (hi - lo) * rng.random::<f64>()).collect()
            }
        };
        let truth = GroundTruth {
            sector_effects: self.sector_effects.clone().unwrap_or_else(|| vec![0.0, -0.1]),
            state_effects,
            gamma_size: self.gamma_size.unwrap_or(0.05),
            gamma_price: self.gamma_price.unwrap_or(-0.8),
            gamma_expenditure: self.gamma_expenditure.unwrap_or(0.6),
            consumption_probs,
        };
        truth.check(cfg)?;
        Ok(truth)
    }
}

/// Config-file layout for a synthetic survey.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthFile {
    pub config: SynthConfig,
    pub truth: TruthSpec,
}

impl GroundTruth {
    fn check(&self, cfg: &SynthConfig) -> Result<()> {
        let mut v = Vec::new();
        if self.sector_effects.len() != 2 {
            v.push(format!("sector_effects: expected 2 levels, got {}", self.sector_effects.len()));
        }
        if self.state_effects.len() != cfg.n_states {
            v.push(format!(
                "state_effects: expected {} levels, got {}",
                cfg.n_states,
                self.state_effects.len()
            ));
        }
        if self.consumption_probs.len() != cfg.n_fsu {
            v.push(format!(
                "consumption_probs: expected {} entries, got {}",
                cfg.n_fsu,
                self.consumption_probs.len()
            ));
        }
        if self.consumption_probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            v.push("consumption_probs: entries must lie in [0, 1]".into());
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v.join("; ")))
        }
    }
}

pub fn true_prevalence_probs(truth: &GroundTruth) -> Vec<f64> {
    truth.consumption_probs.clone()
}

pub fn state_code(ordinal: usize) -> String {
    format!("{:02}", ordinal + 1)
}

/// Rounds to 26 significant bits so that a product of two rounded values is
/// exact in f64 and `(p * q) / q == p` holds bit for bit.
fn round_sig26(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    let e = x.abs().log2().floor() as i32;
    let scale = 2f64.powi(25 - e);
    (x * scale).round() / scale
}

struct FsuDraw {
    households: Vec<HouseholdRecord>,
    observations: Vec<ItemObservation>,
}

fn generate_fsu(cfg: &SynthConfig, truth: &GroundTruth, seed: u64, i: usize) -> FsuDraw {
    let mut rng = rng_for(seed, &[1, i as u64]);
    let (lo, hi) = cfg.households_per_fsu;
    let n_hh = rng.random_range(lo..=hi);
    let sector = if rng.random::<f64>() < cfg.sector_split {
        Sector::Rural
    } else {
        Sector::Urban
    };
    let state = rng.random_range(0..cfg.n_states);
    let base_log_price =
        cfg.base_log_price.mean + cfg.base_log_price.sd * rng.sample::<f64, _>(StandardNormal);
    let p_consume = truth.consumption_probs[i];
    let poisson = (cfg.hh_size_lambda > 0.0).then(|| Poisson::new(cfg.hh_size_lambda).unwrap());

    let fsu_id = format!("F{:05}", i + 1);
    let mut out = FsuDraw {
        households: Vec::with_capacity(n_hh as usize),
        observations: Vec::new(),
    };
    for h in 0..n_hh {
        let mut rng = rng_for(seed, &[2, i as u64, h as u64]);
        let consumes = rng.random::<f64>() < p_consume;
        let hh_size = 1 + poisson.map_or(0, |d| d.sample(&mut rng) as u32);
        let log_mpce = cfg.log_mpce.mean + cfg.log_mpce.sd * rng.sample::<f64, _>(StandardNormal);
        let jitter = cfg.within_fsu_price_jitter * rng.sample::<f64, _>(StandardNormal);
        let eps = cfg.noise_sd * rng.sample::<f64, _>(StandardNormal);

        let key = HouseholdKey::new(fsu_id.clone(), format!("{:02}", h + 1));
        let mpce = log_mpce.exp();
        if consumes {
            let price = round_sig26((base_log_price + jitter).exp());
            let sector_effect = truth.sector_effects[sector as usize];
            let log_q = sector_effect
                + truth.state_effects[state]
                + truth.gamma_size * hh_size as f64
                + truth.gamma_price * price.ln()
                + truth.gamma_expenditure * mpce.ln()
                + eps;
            let quantity = round_sig26(log_q.exp());
            out.observations.push(ItemObservation {
                key: key.clone(),
                item_code: cfg.item_code,
                quantity,
                value: price * quantity,
            });
        }
        out.households.push(HouseholdRecord {
            key,
            sector,
            state: state_code(state),
            hh_size,
            mpce,
        });
    }
    out
}

/// Draws a full survey. Deterministic in `(cfg, truth, seed)`.
pub fn generate(cfg: &SynthConfig, truth: &GroundTruth, seed: u64) -> Result<SurveyDataset> {
    cfg.validate()?;
    truth.check(cfg)?;
    let draws: Vec<FsuDraw> = (0..cfg.n_fsu)
        .into_par_iter()
        .map(|i| generate_fsu(cfg, truth, seed, i))
        .collect();
    let mut households = Vec::new();
    let mut observations = Vec::new();
    for d in draws {
        households.extend(d.households);
        observations.extend(d.observations);
    }
    SurveyDataset::new(households, observations)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{fsu_price_ratios, read_csv, write_csv, SchemaConfig};

    fn small(n_fsu: usize, jitter: f64, noise: f64) -> (SynthConfig, GroundTruth) {
        let cfg = SynthConfig {
            n_fsu,
            within_fsu_price_jitter: jitter,
            noise_sd: noise,
            ..SynthConfig::default()
        };
        let truth = TruthSpec::default().resolve(&cfg, 11).unwrap();
        (cfg, truth)
    }

    #[test]
    fn zero_jitter_gives_unit_ratios() {
        let (cfg, truth) = small(300, 0.0, 0.3);
        let ds = generate(&cfg, &truth, 5).unwrap();
        let ratios = fsu_price_ratios(&ds, cfg.item_code).unwrap();
        assert!(!ratios.is_empty());
        assert!(ratios.iter().all(|(_, r)| *r == 1.0));
    }

    #[test]
    fn deterministic_and_csv_round_trip() {
        let (cfg, truth) = small(200, 0.1, 0.3);
        let a = generate(&cfg, &truth, 9).unwrap();
        let b = generate(&cfg, &truth, 9).unwrap();
        let (mut ba, mut bb) = (Vec::new(), Vec::new());
        write_csv(&a, &mut ba, &SchemaConfig::default()).unwrap();
        write_csv(&b, &mut bb, &SchemaConfig::default()).unwrap();
        assert_eq!(ba, bb);

        let back = read_csv(ba.as_slice(), &SchemaConfig::default()).unwrap();
        assert!(back.rejected.is_empty());
        assert_eq!(back.dataset.households(), a.households());
        assert_eq!(back.dataset.observations(), a.observations());

        let c = generate(&cfg, &truth, 10).unwrap();
        assert_ne!(c.observations(), a.observations());
    }

    #[test]
    fn constant_probs_expand() {
        let cfg = SynthConfig {
            n_fsu: 4,
            ..SynthConfig::default()
        };
        let spec = TruthSpec {
            consumption_probs: Some(vec![0.5]),
            ..TruthSpec::default()
        };
        let truth = spec.resolve(&cfg, 0).unwrap();
        assert_eq!(true_prevalence_probs(&truth), vec![0.5; 4]);

        let one = SynthConfig {
            n_fsu: 1,
            ..SynthConfig::default()
        };
        assert_eq!(true_prevalence_probs(&TruthSpec::default().resolve(&one, 0).unwrap()).len(), 1);
    }

    #[test]
    fn bad_config_rejected() {
        let cfg = SynthConfig {
            consumption_prob_range: (0.5, 0.2),
            within_fsu_price_jitter: -1.0,
            ..SynthConfig::default()
        };
        let v = cfg.violations();
        assert_eq!(v.len(), 2);
        let truth = GroundTruth {
            sector_effects: vec![0.0],
            state_effects: vec![],
            gamma_size: 0.0,
            gamma_price: 0.0,
            gamma_expenditure: 0.0,
            consumption_probs: vec![],
        };
        assert!(generate(&SynthConfig::default(), &truth, 0).is_err());
    }

    #[test]
    fn sig26_rounding_is_exact_for_products() {
        for &(p, q) in &[(20.085_536_923_187_668, 3.3), (1.1, 0.7), (1234.5678, 0.001_234)] {
            let (p, q) = (round_sig26(p), round_sig26(q));
            assert_eq!((p * q) / q, p);
        }
    }

    #[test]
    fn consumption_frequency_matches_probs() {
        // Monte Carlo frequency oracle: 200 independent regenerations of
        // a 3-FSU survey with fixed probabilities.
        let cfg = SynthConfig {
            n_fsu: 3,
            households_per_fsu: (5, 5),
            ..SynthConfig::default()
        };
        let spec = TruthSpec {
            consumption_probs: Some(vec![0.2, 0.5, 0.85]),
            ..TruthSpec::default()
        };
        let truth = spec.resolve(&cfg, 1).unwrap();
        let mut hits = [0usize; 3];
        let reps = 200;
        for s in 0..reps {
            let ds = generate(&cfg, &truth, 1000 + s).unwrap();
            for o in ds.observations() {
                let i: usize = o.key.fsu_id[1..].parse::<usize>().unwrap() - 1;
                hits[i] += 1;
            }
        }
        for (i, &p) in truth.consumption_probs.iter().enumerate() {
            let n = (reps * 5) as f64;
            let freq = hits[i] as f64 / n;
            let se = (p * (1.0 - p) / n).sqrt();
            assert!((freq - p).abs() < 3.0 * se, "fsu {i}: {freq} vs {p}");
        }
    }

    #[test]
    fn mean_log_price_converges() {
        let cfg = SynthConfig {
            n_fsu: 10_000,
            consumption_prob_range: (0.999, 0.999),
            households_per_fsu: (1, 1),
            within_fsu_price_jitter: 0.0,
            ..SynthConfig::default()
        };
        let truth = TruthSpec::default().resolve(&cfg, 3).unwrap();
        let ds = generate(&cfg, &truth, 3).unwrap();
        let logs: Vec<f64> = ds.observations().iter().map(|o| o.unit_price().ln()).collect();
        let n = logs.len() as f64;
        let mean = logs.iter().sum::<f64>() / n;
        let se = cfg.base_log_price.sd / n.sqrt();
        assert!((mean - cfg.base_log_price.mean).abs() < 3.0 * se, "{mean}");
    }
}
