//! Exact binomial tails, summed in log space from the far end of the tail so
//! that probabilities far below `f64::EPSILON` keep full relative accuracy.

use statrs::function::factorial::ln_binomial;

/// `ln P(X = k)` for `X ~ Bin(n, p)`.
pub fn ln_pmf(n: u64, k: u64, p: f64) -> f64 {
    if k > n {
        return f64::NEG_INFINITY;
    }
    if p <= 0.0 {
        return if k == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    if p >= 1.0 {
        return if k == n { 0.0 } else { f64::NEG_INFINITY };
    }
    ln_binomial(n, k) + k as f64 * p.ln() + (n - k) as f64 * (-p).ln_1p()
}

/// `P(X ≤ k)`.
pub fn cdf(n: u64, k: u64, p: f64) -> f64 {
    if k >= n || p <= 0.0 {
        return 1.0;
    }
    if p >= 1.0 {
        return 0.0;
    }
    if k as f64 <= n as f64 * p {
        lower_sum(n, k, p)
    } else {
        (1.0 - upper_sum(n, k + 1, p)).max(0.0)
    }
}

/// `P(X ≥ k)`.
pub fn sf(n: u64, k: u64, p: f64) -> f64 {
    if k == 0 || (p >= 1.0 && k <= n) {
        return 1.0;
    }
    if k > n || p <= 0.0 {
        return 0.0;
    }
    if k as f64 >= n as f64 * p {
        upper_sum(n, k, p)
    } else {
        (1.0 - lower_sum(n, k - 1, p)).max(0.0)
    }
}

/// Σ_{j ≤ k} P(X = j) with `k ≤ np`: terms shrink walking down from `k`.
fn lower_sum(n: u64, k: u64, p: f64) -> f64 {
    let odds = (1.0 - p) / p;
    let (mut term, mut sum) = (1.0f64, 1.0f64);
    let mut j = k;
    while j > 0 {
        term *= j as f64 / (n - j + 1) as f64 * odds;
        sum += term;
        if term <= sum * 1e-17 {
            break;
        }
        j -= 1;
    }
    (ln_pmf(n, k, p) + sum.ln()).exp()
}

/// Σ_{j ≥ k} P(X = j) with `k ≥ np`: terms shrink walking up from `k`.
fn upper_sum(n: u64, k: u64, p: f64) -> f64 {
    let odds = p / (1.0 - p);
    let (mut term, mut sum) = (1.0f64, 1.0f64);
    let mut j = k;
    while j < n {
        term *= (n - j) as f64 / (j + 1) as f64 * odds;
        sum += term;
        if term <= sum * 1e-17 {
            break;
        }
        j += 1;
    }
    (ln_pmf(n, k, p) + sum.ln()).exp()
}
