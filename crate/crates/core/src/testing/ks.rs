use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n1: usize,
    pub n2: usize,
}

const SERIES_EPS: f64 = 1e-12;

/// Survival function of the Kolmogorov distribution, P(K > lambda).
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.18 {
        // Jacobi-theta form of the CDF converges fast for small lambda.
        let c = -std::f64::consts::PI.powi(2) / (8.0 * lambda * lambda);
        let mut sum = 0.0;
        for k in 1.. {
            let m = (2 * k - 1) as f64;
            let term = (c * m * m).exp();
            sum += term;
            if term < SERIES_EPS * sum.max(f64::MIN_POSITIVE) || k > 1000 {
                break;
            }
        }
        let cdf = (2.0 * std::f64::consts::PI).sqrt() / lambda * sum;
        (1.0 - cdf).clamp(0.0, 1.0)
    } else {
        let mut sum = 0.0;
        let mut sign = 1.0;
        for k in 1..=1000 {
            let kf = k as f64;
            let term = (-2.0 * kf * kf * lambda * lambda).exp();
            sum += sign * term;
            if term < SERIES_EPS {
                break;
            }
            sign = -sign;
        }
        (2.0 * sum).clamp(0.0, 1.0)
    }
}

/// Sup distance between the two empirical CDFs, as an exact integer ratio
/// `max |i n2 - j n1| / (n1 n2)` over pooled points. Both ECDFs are
/// right-continuous: all copies of a tied value are passed together.
fn ks_statistic(x: &mut [f64], y: &mut [f64]) -> f64 {
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (n1, n2) = (x.len(), y.len());
    let (mut i, mut j) = (0usize, 0usize);
    let mut best: u128 = 0;
    while i < n1 && j < n2 {
        let v = if x[i] <= y[j] { x[i] } else { y[j] };
        while i < n1 && x[i] <= v {
            i += 1;
        }
        while j < n2 && y[j] <= v {
            j += 1;
        }
        let gap = (i as u128 * n2 as u128).abs_diff(j as u128 * n1 as u128);
        best = best.max(gap);
    }
    best as f64 / (n1 as f64 * n2 as f64)
}

/// Two-sample Kolmogorov-Smirnov test with the asymptotic p-value at
/// `D * sqrt(n1 n2 / (n1 + n2))`.
pub fn ks_two_sample(x: &[f64], y: &[f64]) -> Result<KsResult> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::InvalidInput("KS test needs two non-empty samples".into()));
    }
    if x.iter().chain(y).any(|v| v.is_nan()) {
        return Err(Error::InvalidInput("KS test input contains NaN".into()));
    }
    let (mut xs, mut ys) = (x.to_vec(), y.to_vec());
    let d = ks_statistic(&mut xs, &mut ys);
    let (n1, n2) = (x.len(), y.len());
    let en = (n1 as f64 * n2 as f64 / (n1 + n2) as f64).sqrt();
    Ok(KsResult {
        statistic: d,
        p_value: kolmogorov_sf(d * en),
        n1,
        n2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identical_and_disjoint() {
        let x = [0.3, 1.2, -4.0, 1.2];
        let r = ks_two_sample(&x, &x).unwrap();
        assert_eq!((r.statistic, r.p_value), (0.0, 1.0));
        assert_eq!(ks_two_sample(&[1.0, 2.0], &[3.0, 4.0]).unwrap().statistic, 1.0);
        assert!(ks_two_sample(&[], &[1.0]).is_err());
        assert!(ks_two_sample(&[f64::NAN], &[1.0]).is_err());
    }

    #[test]
    fn ties_handled() {
        // ECDFs at 1: 2/3 vs 1/3; at 2: 1 vs 1.
        let r = ks_two_sample(&[1.0, 1.0, 2.0], &[1.0, 2.0, 2.0]).unwrap();
        assert!((r.statistic - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn kolmogorov_reference_values() {
        // Tabulated: P(K > 1.3581) = 0.05, P(K > 1.2238) = 0.10, P(K > 1.6276) = 0.01.
        assert!((kolmogorov_sf(1.358_098_8) - 0.05).abs() < 1e-6);
        assert!((kolmogorov_sf(1.223_847_9) - 0.10).abs() < 1e-6);
        assert!((kolmogorov_sf(1.627_624_1) - 0.01).abs() < 1e-6);
        // Both series agree near the switch point.
        let a = {
            let l: f64 = 1.18;
            2.0 * (1..50).map(|k| {
                let k = k as f64;
                (if k as i32 % 2 == 1 { 1.0 } else { -1.0 }) * (-2.0 * k * k * l * l).exp()
            }).sum::<f64>()
        };
        assert!((kolmogorov_sf(1.18 - 1e-12) - a).abs() < 1e-11);
        assert_eq!(kolmogorov_sf(0.0), 1.0);
        assert!(kolmogorov_sf(0.1) > 0.999_999_9);
    }

    /// Permutation p-value: share of relabelings with D >= observed D.
    fn permutation_p(x: &[f64], y: &[f64], perms: usize, rng: &mut ChaCha8Rng) -> f64 {
        let d_obs = ks_two_sample(x, y).unwrap().statistic;
        let mut pooled: Vec<f64> = x.iter().chain(y).copied().collect();
        let mut hits = 0;
        for _ in 0..perms {
            pooled.shuffle(rng);
            let (a, b) = pooled.split_at(x.len());
            if ks_two_sample(a, b).unwrap().statistic >= d_obs - 1e-12 {
                hits += 1;
            }
        }
        hits as f64 / perms as f64
    }

    #[test]
    fn asymptotic_close_to_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        for shift in [0.0, 0.3, 0.6] {
            let x: Vec<f64> = (0..30).map(|_| rng.random::<f64>()).collect();
            let y: Vec<f64> = (0..30).map(|_| rng.random::<f64>() + shift).collect();
            let p = ks_two_sample(&x, &y).unwrap().p_value;
            let perm = permutation_p(&x, &y, 20_000, &mut rng);
            assert!((p - perm).abs() <= 0.02, "shift {shift}: {p} vs {perm}");
        }
    }

    proptest! {
        #[test]
        fn symmetric_and_monotone_invariant(
            x in prop::collection::vec(-50.0f64..50.0, 1..40),
            y in prop::collection::vec(-50.0f64..50.0, 1..40),
        ) {
            let a = ks_two_sample(&x, &y).unwrap();
            let b = ks_two_sample(&y, &x).unwrap();
            prop_assert_eq!(a.statistic, b.statistic);
            prop_assert_eq!(a.p_value, b.p_value);
            prop_assert!((0.0..=1.0).contains(&a.statistic));
            prop_assert!((0.0..=1.0).contains(&a.p_value));
            let f = |v: &f64| v.powi(3) + 2.0 * v;
            let tx: Vec<f64> = x.iter().map(f).collect();
            let ty: Vec<f64> = y.iter().map(f).collect();
            prop_assert_eq!(ks_two_sample(&tx, &ty).unwrap().statistic, a.statistic);
        }
    }
}
