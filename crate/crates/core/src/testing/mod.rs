//! Repeated thin-sample Kolmogorov-Smirnov comparison of predicted shares.

mod criterion;
mod ks;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{ItemCode, SurveyDataset};
use crate::error::{Error, Result};
use crate::inference::{
    build_design, ci_ranks, empirical_ci, ols_fit, predicted_shares, FitSummary,
    MeasurementErrorInfo, ModelKind, ModelSpec, PriceChoice, LOG_PRICE, LOG_PRICE_RATIO,
};
use crate::sampling::{assign_star_prices, draw_thin_sample, repetition_seeds, RepetitionPlan};

pub use criterion::{
    binomial_tail, binomial_upper_tails, decide, rejection_rank, rejection_rank_exceeding,
    Decision,
};
pub use ks::{kolmogorov_sf, ks_two_sample, KsResult};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProcedureOptions {
    pub alpha: f64,
    pub meta_alpha: f64,
    /// Fixed rank in place of [`rejection_rank`].
    pub criterion_rank: Option<usize>,
}

impl Default for ProcedureOptions {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            meta_alpha: 0.05,
            criterion_rank: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepeatedTestResult {
    pub item: ItemCode,
    /// Rows in the regression (consuming households).
    pub sample_size: usize,
    pub repetitions: usize,
    pub alpha: f64,
    pub meta_alpha: f64,
    pub seeds: Vec<u64>,
    pub p_values: Vec<f64>,
    pub ks_statistics: Vec<f64>,
    pub ordered_p_values: Vec<f64>,
    pub criterion_rank: usize,
    /// `None` when the rank exceeds the number of repetitions.
    pub p_value_at_rank: Option<f64>,
    pub rejections: usize,
    pub decision: Decision,
    pub delta4_values: Vec<f64>,
    pub delta5_values: Vec<f64>,
    /// Repetitions where log(P*/P) had zero variance (P* = P throughout).
    pub degenerate: Vec<bool>,
    pub vtv_values: Vec<f64>,
    pub ci_ranks: (usize, usize),
    pub delta4_ci: (f64, f64),
    pub delta5_ci: (f64, f64),
    pub gamma2: f64,
    pub full_fit: FitSummary,
}

impl RepeatedTestResult {
    pub fn n_degenerate(&self) -> usize {
        self.degenerate.iter().filter(|&&d| d).count()
    }
}

struct Repetition {
    p_value: f64,
    statistic: f64,
    delta4: f64,
    delta5: f64,
    degenerate: bool,
    vtv: f64,
}

/// Fits the actual-price model once, then for each repetition draws a
/// thin sample, fits the substituted-price model and compares the two
/// predicted-share distributions.
pub fn repeated_ks_procedure(
    ds: &SurveyDataset,
    item: ItemCode,
    plan: &RepetitionPlan,
    opts: &ProcedureOptions,
) -> Result<RepeatedTestResult> {
    let criterion_rank = match opts.criterion_rank {
        Some(c) => {
            rejection_rank(plan.repetitions.max(1), opts.alpha, opts.meta_alpha)?;
            c
        }
        None => rejection_rank(plan.repetitions, opts.alpha, opts.meta_alpha)?,
    };
    let seeds = repetition_seeds(plan)?;

    let full = ols_fit(&build_design(ds, item, &ModelSpec::new(ModelKind::ActualPrice), None)?)?;
    let gamma2 = full
        .coefficient(LOG_PRICE)
        .ok_or_else(|| Error::RankDeficient { columns: vec![LOG_PRICE.into()] })?;
    let actual_shares = predicted_shares(&full, ds, item, PriceChoice::Actual)?;

    let star_spec = ModelSpec::new(ModelKind::StarPriceDecomposed);
    let reps: Vec<Repetition> = seeds
        .par_iter()
        .map(|&seed| -> Result<Repetition> {
            let assignment = draw_thin_sample(ds, item, seed)?;
            let star = assign_star_prices(ds, &assignment)?;
            let vtv = MeasurementErrorInfo::from_star(&star).vtv;
            let fit = ols_fit(&build_design(ds, item, &star_spec, Some(&star))?)?;
            let delta4 = fit
                .coefficient(LOG_PRICE)
                .ok_or_else(|| Error::RankDeficient { columns: vec![LOG_PRICE.into()] })?;
            match fit.coefficient(LOG_PRICE_RATIO) {
                None => Ok(Repetition {
                    p_value: 1.0,
                    statistic: 0.0,
                    delta4,
                    delta5: 0.0,
                    degenerate: true,
                    vtv,
                }),
                Some(delta5) => {
                    let star_shares = predicted_shares(&fit, ds, item, PriceChoice::Star(&star))?;
                    let ks = ks_two_sample(&actual_shares, &star_shares)?;
                    Ok(Repetition {
                        p_value: ks.p_value,
                        statistic: ks.statistic,
                        delta4,
                        delta5,
                        degenerate: false,
                        vtv,
                    })
                }
            }
        })
        .collect::<Result<_>>()?;

    let p_values: Vec<f64> = reps.iter().map(|r| r.p_value).collect();
    let mut ordered = p_values.clone();
    ordered.sort_by(f64::total_cmp);
    let decision = decide(&ordered, criterion_rank, opts.alpha);
    let delta4_values: Vec<f64> = reps.iter().map(|r| r.delta4).collect();
    let delta5_values: Vec<f64> = reps.iter().map(|r| r.delta5).collect();
    let (lo, hi) = ci_ranks(plan.repetitions);

    Ok(RepeatedTestResult {
        item,
        sample_size: full.n_rows(),
        repetitions: plan.repetitions,
        alpha: opts.alpha,
        meta_alpha: opts.meta_alpha,
        seeds,
        ks_statistics: reps.iter().map(|r| r.statistic).collect(),
        p_value_at_rank: criterion_rank.checked_sub(1).and_then(|i| ordered.get(i)).copied(),
        rejections: p_values.iter().filter(|&&p| p < opts.alpha).count(),
        p_values,
        ordered_p_values: ordered,
        criterion_rank,
        decision,
        delta4_ci: empirical_ci(&delta4_values, lo, hi)?,
        delta5_ci: empirical_ci(&delta5_values, lo, hi)?,
        delta4_values,
        delta5_values,
        degenerate: reps.iter().map(|r| r.degenerate).collect(),
        vtv_values: reps.iter().map(|r| r.vtv).collect(),
        ci_ranks: (lo, hi),
        gamma2,
        full_fit: full.summary(None),
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One row per item: sample size, rank-c p-value, δ5 and δ4 intervals, γ2
/// and the verdict.
pub fn write_table3_csv<W: std::io::Write>(results: &[RepeatedTestResult], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "item_code",
        "sample_size",
        "p_value_at_rank_c",
        "lcb_delta5",
        "ucb_delta5",
        "gamma2",
        "lcb_delta4",
        "ucb_delta4",
        "decision",
    ])?;
    for r in results {
        w.write_record([
            r.item.to_string(),
            r.sample_size.to_string(),
            fmt_opt(r.p_value_at_rank),
            r.delta5_ci.0.to_string(),
            r.delta5_ci.1.to_string(),
            r.gamma2.to_string(),
            r.delta4_ci.0.to_string(),
            r.delta4_ci.1.to_string(),
            match r.decision {
                Decision::Accept => "accept".into(),
                Decision::Reject => "reject".into(),
            },
        ])?;
    }
    w.flush().map_err(|e| Error::io("<table3>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, SynthConfig, TruthSpec};

    fn synth(jitter: f64, n_fsu: usize, seed: u64) -> SurveyDataset {
        let cfg = SynthConfig {
            n_fsu,
            within_fsu_price_jitter: jitter,
            ..SynthConfig::default()
        };
        let truth = TruthSpec::default().resolve(&cfg, seed).unwrap();
        generate(&cfg, &truth, seed).unwrap()
    }

    #[test]
    fn homogeneous_prices_are_degenerate_and_accepted() {
        let ds = synth(0.0, 80, 3);
        let r = repeated_ks_procedure(&ds, 200, &RepetitionPlan::new(9, 40), &ProcedureOptions::default())
            .unwrap();
        assert_eq!(r.n_degenerate(), 40);
        assert!(r.p_values.iter().all(|&p| p == 1.0));
        assert!(r.delta5_values.iter().all(|&d| d == 0.0));
        assert_eq!(r.decision, Decision::Accept);
        assert!((r.gamma2 - r.delta4_values[0]).abs() < 1e-9);
    }

    #[test]
    fn deterministic_and_consistent() {
        let ds = synth(0.3, 60, 5);
        let plan = RepetitionPlan::new(17, 30);
        let opts = ProcedureOptions::default();
        let a = repeated_ks_procedure(&ds, 200, &plan, &opts).unwrap();
        let b = repeated_ks_procedure(&ds, 200, &plan, &opts).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.p_values.len(), 30);
        assert!(a.ordered_p_values.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(a.criterion_rank, rejection_rank(30, 0.05, 0.05).unwrap());
        assert_eq!(a.decision == Decision::Reject, a.rejections >= a.criterion_rank);
        assert!(a.delta5_ci.0 <= a.delta5_ci.1);
        assert_eq!(a.n_degenerate(), 0);

        let mut out = Vec::new();
        write_table3_csv(&[a], &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("item_code,sample_size,p_value_at_rank_c,lcb_delta5"));
        assert_eq!(text.lines().count(), 2);
    }

    #[test]
    fn rank_override_and_unknown_item() {
        let ds = synth(0.0, 20, 1);
        let opts = ProcedureOptions {
            criterion_rank: Some(2),
            ..ProcedureOptions::default()
        };
        let r = repeated_ks_procedure(&ds, 200, &RepetitionPlan::new(1, 5), &opts).unwrap();
        assert_eq!(r.criterion_rank, 2);
        assert_eq!(r.p_value_at_rank, Some(1.0));
        assert!(repeated_ks_procedure(&ds, 999, &RepetitionPlan::new(1, 5), &opts).is_err());
    }

    #[test]
    fn null_size_with_uniform_p_values() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
        let (r, c, trials) = (200, rejection_rank(200, 0.05, 0.05).unwrap(), 4000);
        let mut rejects = 0;
        for _ in 0..trials {
            let mut p: Vec<f64> = (0..r).map(|_| rng.random::<f64>()).collect();
            p.sort_by(f64::total_cmp);
            if decide(&p, c, 0.05) == Decision::Reject {
                rejects += 1;
            }
        }
        let rate = rejects as f64 / trials as f64;
        assert!((rate - binomial_tail(r, 0.05, c)).abs() < 0.015, "{rate}");
    }
}
