//! Probability that a one-household-per-FSU sample covers an item in at
//! least a fraction `q` of FSUs.
//!
//! With `Y_i ~ Bernoulli(p_i)` independent, `X = sum Y_i` is Poisson-Binomial.
//! [`exact_pmf`] convolves the Bernoulli factors one at a time;
//! [`prevalence_approx`] uses the normal limit
//! `1 - Phi((N q - sum p_i) / sqrt(S_N))`, `S_N = sum p_i (1 - p_i)`.

use serde::{Deserialize, Serialize};

use crate::dataset::{ItemCode, SurveyDataset};
use crate::error::{Error, Result};

pub const DEFAULT_EXACT_CAP: usize = 20_000;

/// Probabilities below this are written as 0 in report tables.
pub const DISPLAY_ZERO_BELOW: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct PrevalenceInput {
    probs: Vec<f64>,
}

impl PrevalenceInput {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidInput("prevalence input needs N >= 1".into()));
        }
        if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::InvalidInput(format!("probability {p} outside [0, 1]")));
        }
        Ok(Self { probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.probs.iter().sum()
    }

    /// S_N.
    pub fn variance(&self) -> f64 {
        self.probs.iter().map(|p| p * (1.0 - p)).sum()
    }
}

/// Share of each FSU's households that consume `item`, over every FSU in
/// the dataset.
pub fn estimate_fsu_probs(ds: &SurveyDataset, item: ItemCode) -> Result<PrevalenceInput> {
    let consuming = ds.item_fsus(item)?;
    let probs = ds
        .fsus()
        .iter()
        .map(|(fsu, hh)| {
            let k = consuming.get(fsu).map_or(0, Vec::len);
            k as f64 / hh.len() as f64
        })
        .collect();
    PrevalenceInput::new(probs)
}

/// P(X = k) for k = 0..=N by sequential convolution, O(N^2).
pub fn exact_pmf(input: &PrevalenceInput, cap: usize) -> Result<Vec<f64>> {
    let n = input.len();
    if n > cap {
        return Err(Error::ExactCapExceeded { n, cap });
    }
    let mut pmf = vec![0.0; n + 1];
    pmf[0] = 1.0;
    for (i, &p) in input.probs.iter().enumerate() {
        let q = 1.0 - p;
        for k in (1..=i + 1).rev() {
            pmf[k] = pmf[k] * q + pmf[k - 1] * p;
        }
        pmf[0] *= q;
    }
    for v in &mut pmf {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    Ok(pmf)
}

fn check_q(q: f64) -> Result<()> {
    if q > 0.0 && q < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("q = {q} must lie in (0, 1)")))
    }
}

/// Smallest count k with k >= N q.
///
/// `N q` within 1e-9 (relative) of an integer is taken as that integer, so
/// e.g. 1000 * 0.3 = 300.00000000000006 gives 300 and not 301.
pub fn tail_threshold(n: usize, q: f64) -> usize {
    let t = n as f64 * q;
    let r = t.round();
    if (t - r).abs() <= 1e-9 * t.max(1.0) {
        r as usize
    } else {
        t.ceil() as usize
    }
}

/// P(X >= ceil(N q)) from the exact pmf.
pub fn prevalence_exact(input: &PrevalenceInput, q: f64, cap: usize) -> Result<f64> {
    check_q(q)?;
    let pmf = exact_pmf(input, cap)?;
    let k = tail_threshold(input.len(), q);
    Ok(pmf[k..].iter().sum::<f64>().min(1.0))
}

/// 1 - Phi(z), via erfc so the upper tail keeps full relative precision.
pub fn normal_sf(z: f64) -> f64 {
    0.5 * libm::erfc(z / std::f64::consts::SQRT_2)
}

pub fn prevalence_approx(input: &PrevalenceInput, q: f64) -> Result<f64> {
    check_q(q)?;
    let s = input.variance();
    if s <= 0.0 {
        return Err(Error::DegenerateVariance);
    }
    let z = (input.len() as f64 * q - input.mean()) / s.sqrt();
    Ok(normal_sf(z))
}

/// Upper bound S_N^{-1/2} on the Lyapunov ratio sum E|Y_i - p_i|^3 / S_N^{3/2}.
pub fn lyapunov_diagnostic(input: &PrevalenceInput) -> Result<f64> {
    let s = input.variance();
    if s <= 0.0 {
        return Err(Error::DegenerateVariance);
    }
    Ok(s.sqrt().recip())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrevalenceResult {
    pub q: f64,
    /// Absent when N exceeds the exact-computation cap.
    pub exact_prob: Option<f64>,
    pub approx_prob: f64,
    pub mean: f64,
    pub variance: f64,
    /// Infinite when S_N = 0, stored as `null` in JSON.
    #[serde(deserialize_with = "null_as_infinity")]
    pub lyapunov_bound: f64,
}

fn null_as_infinity<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
}

/// Exact and approximate prevalence at each `q`.
///
/// When S_N = 0 the count is deterministic and the approximation is replaced
/// by its limit: 1 if sum p_i >= N q, else 0.
pub fn prevalence_report(
    input: &PrevalenceInput,
    q_levels: &[f64],
    cap: usize,
) -> Result<Vec<PrevalenceResult>> {
    let pmf = match exact_pmf(input, cap) {
        Ok(pmf) => Some(pmf),
        Err(Error::ExactCapExceeded { n, cap }) => {
            log::info!("N = {n} above exact cap {cap}; exact prevalence skipped");
            None
        }
        Err(e) => return Err(e),
    };
    let (mean, variance) = (input.mean(), input.variance());
    let lyapunov_bound = lyapunov_diagnostic(input).unwrap_or(f64::INFINITY);
    q_levels
        .iter()
        .map(|&q| {
            check_q(q)?;
            let exact_prob = pmf.as_ref().map(|pmf| {
                let k = tail_threshold(input.len(), q);
                pmf[k..].iter().sum::<f64>().min(1.0)
            });
            let approx_prob = match prevalence_approx(input, q) {
                Ok(p) => p,
                Err(Error::DegenerateVariance) => {
                    if mean >= input.len() as f64 * q {
                        1.0
                    } else {
                        0.0
                    }
                }
                Err(e) => return Err(e),
            };
            Ok(PrevalenceResult {
                q,
                exact_prob,
                approx_prob,
                mean,
                variance,
                lyapunov_bound,
            })
        })
        .collect()
}

/// Table formatting: values below [`DISPLAY_ZERO_BELOW`] print as `0`.
pub fn display_prob(p: f64) -> String {
    if p < DISPLAY_ZERO_BELOW {
        "0".to_string()
    } else {
        p.to_string()
    }
}

/// Long-format prevalence CSV, one row per (item, q).
pub fn write_prevalence_csv<W: std::io::Write>(
    rows: &[(ItemCode, Vec<PrevalenceResult>)],
    writer: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "item_code",
        "q",
        "exact_prob",
        "approx_prob",
        "mean",
        "variance",
        "lyapunov_bound",
    ])?;
    for (item, results) in rows {
        for r in results {
            w.write_record([
                item.to_string(),
                r.q.to_string(),
                r.exact_prob.map(display_prob).unwrap_or_default(),
                display_prob(r.approx_prob),
                r.mean.to_string(),
                r.variance.to_string(),
                r.lyapunov_bound.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

/// Wide layout: one approximate-probability column per q.
pub fn write_table2_csv<W: std::io::Write>(
    rows: &[(ItemCode, Vec<PrevalenceResult>)],
    q_levels: &[f64],
    writer: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let header: Vec<String> = std::iter::once("item_code".to_string())
        .chain(q_levels.iter().map(|q| format!("q={q}")))
        .collect();
    w.write_record(&header)?;
    for (item, results) in rows {
        let mut rec = vec![item.to_string()];
        rec.extend(results.iter().map(|r| display_prob(r.approx_prob)));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use statrs::distribution::{Binomial, Discrete};

    fn input(p: &[f64]) -> PrevalenceInput {
        PrevalenceInput::new(p.to_vec()).unwrap()
    }

    /// Brute-force enumeration over all 2^N outcomes.
    fn enumerate_pmf(p: &[f64]) -> Vec<f64> {
        let n = p.len();
        let mut pmf = vec![0.0; n + 1];
        for mask in 0u32..(1 << n) {
            let mut prob = 1.0;
            for (i, &pi) in p.iter().enumerate() {
                prob *= if mask >> i & 1 == 1 { pi } else { 1.0 - pi };
            }
            pmf[mask.count_ones() as usize] += prob;
        }
        pmf
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn pmf_examples() {
        assert_eq!(exact_pmf(&input(&[0.5, 0.5]), 10).unwrap(), vec![0.25, 0.5, 0.25]);
        assert_eq!(exact_pmf(&input(&[1.0]), 10).unwrap(), vec![0.0, 1.0]);
        let pmf = exact_pmf(&input(&[0.2, 0.7]), 10).unwrap();
        let oracle = enumerate_pmf(&[0.2, 0.7]);
        assert!(close(&pmf, &oracle, 1e-15));
        assert!(close(&pmf, &[0.24, 0.62, 0.14], 1e-15));
    }

    #[test]
    fn pmf_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let n = rng.random_range(1..=12);
            let p: Vec<f64> = (0..n).map(|_| rng.random()).collect();
            assert!(close(&exact_pmf(&input(&p), 100).unwrap(), &enumerate_pmf(&p), 1e-14));
        }
    }

    #[test]
    fn constant_p_is_binomial() {
        for &(n, p) in &[(50u64, 0.3), (1000, 0.05), (3000, 0.62)] {
            let pmf = exact_pmf(&input(&vec![p; n as usize]), DEFAULT_EXACT_CAP).unwrap();
            let b = Binomial::new(p, n).unwrap();
            for (k, v) in pmf.iter().enumerate() {
                assert!((v - b.pmf(k as u64)).abs() <= 1e-10, "n={n} k={k}");
            }
        }
    }

    #[test]
    fn cap_enforced() {
        let err = exact_pmf(&input(&[0.5; 11]), 10).unwrap_err();
        assert!(matches!(err, Error::ExactCapExceeded { n: 11, cap: 10 }));
    }

    #[test]
    fn exact_tail_examples() {
        // Tail of the enumerated pmf (0.25, 0.5, 0.25) from k = 1.
        assert_eq!(prevalence_exact(&input(&[0.5, 0.5]), 0.5, 10).unwrap(), 0.75);
        assert_eq!(prevalence_exact(&input(&[1.0; 7]), 0.9, 10).unwrap(), 1.0);
        assert_eq!(prevalence_exact(&input(&[0.0; 7]), 0.1, 10).unwrap(), 0.0);
        assert!(prevalence_exact(&input(&[0.5]), 1.0, 10).is_err());
    }

    #[test]
    fn threshold_at_integral_nq() {
        assert_eq!(tail_threshold(1000, 0.3), 300);
        assert_eq!(tail_threshold(10, 0.55), 6);
        assert_eq!(tail_threshold(3, 0.5), 2);
        assert_eq!(tail_threshold(2, 0.5), 1);
    }

    #[test]
    fn approx_examples() {
        assert_eq!(prevalence_approx(&input(&[0.5; 37]), 0.5).unwrap(), 0.5);
        let p = prevalence_approx(&input(&[0.5; 1000]), 0.4).unwrap();
        // z = -100 / sqrt(250) ~ -6.32.
        assert!(p >= 1.0 - 1e-9);
        assert!(matches!(
            prevalence_approx(&input(&[1.0, 0.0]), 0.5),
            Err(Error::DegenerateVariance)
        ));
    }

    #[test]
    fn approx_tracks_exact_away_from_center() {
        let mut rng = ChaCha8Rng::seed_from_u64(2000);
        let p: Vec<f64> = (0..2000).map(|_| rng.random_range(0.2..0.8)).collect();
        let inp = input(&p);
        let e = prevalence_exact(&inp, 0.3, DEFAULT_EXACT_CAP).unwrap();
        let a = prevalence_approx(&inp, 0.3).unwrap();
        assert!((e - a).abs() <= 0.01);
    }

    #[test]
    fn normal_sf_reference_values() {
        // Reference values of the standard normal upper tail.
        assert!((normal_sf(0.0) - 0.5).abs() < 1e-16);
        assert!((normal_sf(1.0) - 0.158_655_253_931_457_05).abs() < 1e-12);
        assert!((normal_sf(-1.959_963_984_540_054) - 0.975).abs() < 1e-12);
        assert!((normal_sf(6.0) - 9.865_876_450_376_98e-10).abs() < 1e-18);
    }

    #[test]
    fn lyapunov_examples() {
        assert!((lyapunov_diagnostic(&input(&[0.5; 100])).unwrap() - 0.2).abs() < 1e-15);
        assert!((lyapunov_diagnostic(&input(&[0.5; 10000])).unwrap() - 0.02).abs() < 1e-15);
        assert!(matches!(
            lyapunov_diagnostic(&input(&[1.0, 1.0])),
            Err(Error::DegenerateVariance)
        ));
    }

    #[test]
    fn report_handles_cap_and_degenerate() {
        let r = prevalence_report(&input(&[1.0, 1.0, 0.0]), &[0.5, 0.7], 10).unwrap();
        assert_eq!(r[0].exact_prob, Some(1.0));
        assert_eq!(r[0].approx_prob, 1.0);
        assert_eq!(r[1].approx_prob, 0.0);
        assert!(r[0].lyapunov_bound.is_infinite());

        let r = prevalence_report(&input(&[0.5; 20]), &[0.5, 0.4, 0.3], 10).unwrap();
        assert_eq!(r.len(), 3);
        assert!(r.iter().all(|x| x.exact_prob.is_none()));

        let mut buf = Vec::new();
        write_prevalence_csv(&[(5, r.clone())], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.lines().nth(1).unwrap().starts_with("5,0.5,,0.5,10,5,"));
        let mut buf = Vec::new();
        write_table2_csv(&[(5, r)], &[0.5, 0.4, 0.3], &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap().lines().next().unwrap(),
            "item_code,q=0.5,q=0.4,q=0.3"
        );
    }

    #[test]
    fn displays_tiny_as_zero() {
        assert_eq!(display_prob(9.9e-7), "0");
        assert_eq!(display_prob(0.25), "0.25");
    }

    #[test]
    fn estimate_from_dataset() {
        use crate::dataset::fixtures::{hh, obs};
        let households = vec![
            hh("A", "1", 1, 1.0),
            hh("A", "2", 1, 1.0),
            hh("A", "3", 1, 1.0),
            hh("A", "4", 1, 1.0),
            hh("B", "1", 1, 1.0),
            hh("C", "1", 1, 1.0),
        ];
        let observations = vec![
            obs("A", "1", 3, 1.0, 1.0),
            obs("A", "2", 3, 1.0, 1.0),
            obs("A", "3", 3, 1.0, 1.0),
            obs("C", "1", 3, 1.0, 1.0),
        ];
        let ds = SurveyDataset::new(households, observations).unwrap();
        assert_eq!(estimate_fsu_probs(&ds, 3).unwrap().probs(), &[0.75, 0.0, 1.0]);
        assert!(estimate_fsu_probs(&ds, 4).is_err());
    }

    proptest! {
        #[test]
        fn pmf_normalized_and_tails_monotone(
            p in prop::collection::vec(0.0f64..=1.0, 1..300),
            q1 in 0.01f64..0.99,
            q2 in 0.01f64..0.99,
        ) {
            let inp = input(&p);
            let pmf = exact_pmf(&inp, DEFAULT_EXACT_CAP).unwrap();
            prop_assert!((pmf.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert!(pmf.iter().all(|&v| v >= 0.0));
            let (lo, hi) = if q1 <= q2 { (q1, q2) } else { (q2, q1) };
            let (e_lo, e_hi) = (
                prevalence_exact(&inp, lo, DEFAULT_EXACT_CAP).unwrap(),
                prevalence_exact(&inp, hi, DEFAULT_EXACT_CAP).unwrap(),
            );
            prop_assert!(e_hi <= e_lo + 1e-15);
            if inp.variance() > 0.0 {
                let (a_lo, a_hi) = (
                    prevalence_approx(&inp, lo).unwrap(),
                    prevalence_approx(&inp, hi).unwrap(),
                );
                prop_assert!(a_hi <= a_lo);
                prop_assert!((0.0..=1.0).contains(&a_lo));
            }
        }
    }
}
