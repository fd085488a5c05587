//! Order-statistic rejection rule over R repeated tests.
//!
//! Under the null each repetition rejects at level `alpha` independently,
//! so the rejection count Z is Binomial(R, alpha). The rule rejects when
//! at least `c` of the R p-values fall below `alpha`, which is the same
//! event as `p_(c) < alpha` for the c-th smallest p-value. Choosing the
//! smallest `c` with `P(Z >= c) <= meta_alpha` bounds the overall size by
//! `meta_alpha`.
//!
//! Counting convention: a bound written as `P(Z > c)` and a rule applied
//! to `p_(c)`, i.e. to `{Z >= c}`, differ by one. At R = 1000, alpha = 0.05 the exact tails are
//! P(Z >= 62) = 0.0511 and P(Z >= 63) = 0.0384, so the size-controlling
//! rank under the `>=` reading is 63; 62 is the smallest `c` with
//! `P(Z > c) <= 0.05`. [`rejection_rank`] uses `>=`; see
//! [`rejection_rank_exceeding`] for the other convention.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_unit(name: &str, x: f64) -> Result<()> {
    if x > 0.0 && x < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("{name} = {x} must lie in (0, 1)")))
    }
}

/// `tails[c] = P(Binomial(n, p) >= c)` for c = 0..=n+1, from log-space
/// pmf terms summed upward from the top.
pub fn binomial_upper_tails(n: usize, p: f64) -> Vec<f64> {
    let (lp, lq) = (p.ln(), (-p).ln_1p());
    let ln_n1 = libm::lgamma(n as f64 + 1.0);
    let mut tails = vec![0.0; n + 2];
    let mut acc = 0.0;
    for k in (0..=n).rev() {
        let kf = k as f64;
        let ln_pmf = ln_n1 - libm::lgamma(kf + 1.0) - libm::lgamma((n - k) as f64 + 1.0)
            + kf * lp
            + (n - k) as f64 * lq;
        acc += ln_pmf.exp();
        tails[k] = acc.min(1.0);
    }
    tails
}

/// P(Binomial(n, p) >= c).
pub fn binomial_tail(n: usize, p: f64, c: usize) -> f64 {
    if c == 0 {
        return 1.0;
    }
    if c > n {
        return 0.0;
    }
    binomial_upper_tails(n, p)[c]
}

/// Smallest `c` with `P(Binomial(repetitions, alpha) >= c) <= meta_alpha`.
/// Returns `repetitions + 1` (never reject) when no such `c <= repetitions`
/// exists.
pub fn rejection_rank(repetitions: usize, alpha: f64, meta_alpha: f64) -> Result<usize> {
    if repetitions == 0 {
        return Err(Error::InvalidInput("repetitions must be at least 1".into()));
    }
    check_unit("alpha", alpha)?;
    check_unit("meta_alpha", meta_alpha)?;
    let tails = binomial_upper_tails(repetitions, alpha);
    Ok(tails
        .iter()
        .position(|&t| t <= meta_alpha)
        .unwrap_or(repetitions + 1))
}

/// Smallest `c` with `P(Binomial(repetitions, alpha) > c) <= meta_alpha`.
pub fn rejection_rank_exceeding(repetitions: usize, alpha: f64, meta_alpha: f64) -> Result<usize> {
    Ok(rejection_rank(repetitions, alpha, meta_alpha)?.saturating_sub(1))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Accept,
    Reject,
}

/// Reject iff the `rank`-th smallest p-value (1-based) is below `alpha`.
pub fn decide(ordered_p_values: &[f64], rank: usize, alpha: f64) -> Decision {
    match rank.checked_sub(1).and_then(|i| ordered_p_values.get(i)) {
        Some(&p) if p < alpha => Decision::Reject,
        _ if rank == 0 => Decision::Reject,
        _ => Decision::Accept,
    }
}
