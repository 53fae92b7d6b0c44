//! Residual checks: Ljung-Box, Kolmogorov-Smirnov against the ergodic Gamma
//! mixture, and lag-1 cross-correlations between markets.

use std::collections::{BTreeMap, BTreeSet};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma_lr, gamma_ur};

use crate::data::MarketSeries;
use crate::error::{Error, Result};
use crate::regime::FilterOutput;

/// Lags reported by default.
pub const DEFAULT_LB_LAGS: [usize; 3] = [1, 5, 10];

/// Asymptotic Kolmogorov constants for the 0.10, 0.05 and 0.01 levels.
pub const KS_CONSTANTS: [(&str, f64); 3] = [("0.10", 1.22), ("0.05", 1.36), ("0.01", 1.63)];

/// Conditional mean used to standardize the observations.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualBasis {
    /// `E[mu_t | I_{t-1}]`.
    #[default]
    OneStep,
    /// Mean under the smoothed regime probabilities.
    Smoothed,
}

/// `rv_t / mu_t`.
pub fn residuals(series: &MarketSeries, filter: &FilterOutput, basis: ResidualBasis) -> Result<Vec<f64>> {
    let mu = match basis {
        ResidualBasis::OneStep => &filter.mu_onestep,
        ResidualBasis::Smoothed => &filter.mu_smoothed,
    };
    if mu.len() != series.len() {
        return Err(Error::Input(format!(
            "filter covers {} days, series has {}",
            mu.len(),
            series.len()
        )));
    }
    if let Some(t) = filter.failure {
        return Err(Error::Domain(format!("conditional mean is not positive at day {t}")));
    }
    Ok(series.rv.iter().zip(mu).map(|(y, m)| y / m).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LjungBox {
    pub lag: usize,
    pub statistic: f64,
    pub p_value: f64,
}

/// Chi-square upper tail with `df` degrees of freedom.
pub fn chi_square_sf(q: f64, df: f64) -> f64 {
    if q <= 0.0 {
        1.0
    } else if q.is_infinite() {
        0.0
    } else {
        gamma_ur(0.5 * df, 0.5 * q)
    }
}

/// `Q(L) = T (T + 2) sum_{l <= L} rho_l^2 / (T - l)` for each requested lag.
pub fn ljung_box(x: &[f64], lags: &[usize]) -> Result<Vec<LjungBox>> {
    let n = x.len();
    let max_lag = lags.iter().copied().max().unwrap_or(0);
    if lags.contains(&0) {
        return Err(Error::Input("Ljung-Box lags start at 1".into()));
    }
    if max_lag >= n {
        return Err(Error::Input(format!("lag {max_lag} needs more than {n} observations")));
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let denom: f64 = centered.iter().map(|v| v * v).sum();
    if !(denom > 0.0) {
        return Err(Error::Degenerate("series has zero variance".into()));
    }
    let nf = n as f64;
    let mut cumulative = Vec::with_capacity(max_lag + 1);
    cumulative.push(0.0);
    for l in 1..=max_lag {
        let r: f64 = centered[l..].iter().zip(&centered[..n - l]).map(|(a, b)| a * b).sum::<f64>() / denom;
        let prev = cumulative[l - 1];
        cumulative.push(prev + r * r / (nf - l as f64));
    }
    Ok(lags
        .iter()
        .map(|&lag| {
            let statistic = nf * (nf + 2.0) * cumulative[lag];
            LjungBox {
                lag,
                statistic,
                p_value: chi_square_sf(statistic, lag as f64),
            }
        })
        .collect())
}

/// CDF of the unit-mean Gamma with shape `theta`.
pub fn gamma_cdf_unit_mean(x: f64, theta: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else if x.is_infinite() {
        1.0
    } else {
        gamma_lr(theta, theta * x)
    }
}

/// Numerical inverse of [`gamma_cdf_unit_mean`] by bisection.
pub fn gamma_quantile_unit_mean(p: f64, theta: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) || !(theta > 0.0) {
        return Err(Error::Domain(format!("quantile needs p in (0,1) and theta > 0, got p={p}, theta={theta}")));
    }
    let mut hi = 1.0;
    while gamma_cdf_unit_mean(hi, theta) < p {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if gamma_cdf_unit_mean(mid, theta) < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// `sum_j pi_j * GammaCDF(x; theta_j, mean 1)`.
pub fn mixture_cdf(x: f64, theta: &[f64], pi: &[f64]) -> f64 {
    theta.iter().zip(pi).map(|(&th, &w)| w * gamma_cdf_unit_mean(x, th)).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    /// Critical value per significance level.
    pub critical: BTreeMap<String, f64>,
}

impl KsResult {
    pub fn passes(&self, level: &str) -> Option<bool> {
        self.critical.get(level).map(|c| self.statistic <= *c)
    }
}

/// Asymptotic critical values `c / sqrt(T)`.
pub fn ks_critical_values(n: usize) -> BTreeMap<String, f64> {
    let root = (n as f64).sqrt();
    KS_CONSTANTS.iter().map(|(level, c)| (level.to_string(), c / root)).collect()
}

/// Exact one-sample KS statistic against the ergodic Gamma mixture.
pub fn ks_mixture_gamma(residuals: &[f64], theta: &[f64], pi: &[f64]) -> Result<KsResult> {
    if residuals.is_empty() {
        return Err(Error::Input("no residuals".into()));
    }
    if theta.len() != pi.len() || theta.is_empty() {
        return Err(Error::Input(format!("{} shapes for {} weights", theta.len(), pi.len())));
    }
    if theta.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
        return Err(Error::Domain("Gamma shapes must be positive".into()));
    }
    let total: f64 = pi.iter().sum();
    if pi.iter().any(|w| !(*w >= 0.0)) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::Domain(format!("mixture weights must be nonnegative and sum to 1, sum = {total}")));
    }
    if let Some(r) = residuals.iter().find(|r| !(**r > 0.0 && r.is_finite())) {
        return Err(Error::Domain(format!("residual {r} is not positive")));
    }
    let mut sorted = residuals.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let statistic = sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = mixture_cdf(x, theta, pi);
            ((i + 1) as f64 / n - f).max(f - i as f64 / n)
        })
        .fold(0.0, f64::max);
    Ok(KsResult {
        statistic,
        critical: ks_critical_values(sorted.len()),
    })
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

/// `corr(a_t, b_{t-1})`.
pub fn lag1_cross_correlation(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Input(format!("series lengths differ: {} vs {}", a.len(), b.len())));
    }
    if a.len() < 3 {
        return Err(Error::TooShort { needed: 3, got: a.len() });
    }
    let r = pearson(&a[1..], &b[..b.len() - 1]);
    if r.is_finite() {
        Ok(r)
    } else {
        Err(Error::Degenerate("a series has zero variance".into()))
    }
}

/// Residuals of one market, keyed by date.
#[derive(Debug, Clone, PartialEq)]
pub struct DatedResiduals {
    pub dates: Vec<NaiveDate>,
    pub values: Vec<f64>,
}

/// Square matrix `m[a][b] = corr(eps^a_t, eps^b_{t-1})` over the market
/// names in sorted order. All markets must share the same dates.
pub fn cross_correlation_lag1(sets: &BTreeMap<String, DatedResiduals>) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let names: Vec<String> = sets.keys().cloned().collect();
    let Some(first) = sets.values().next() else {
        return Ok((names, Vec::new()));
    };
    let reference: BTreeSet<NaiveDate> = first.dates.iter().copied().collect();
    let mut offending = BTreeSet::new();
    for set in sets.values() {
        if set.dates.len() != set.values.len() {
            return Err(Error::Input("dates and residuals differ in length".into()));
        }
        let dates: BTreeSet<NaiveDate> = set.dates.iter().copied().collect();
        offending.extend(reference.symmetric_difference(&dates).copied());
    }
    if !offending.is_empty() {
        return Err(Error::Alignment(offending.iter().map(|d| d.to_string()).collect()));
    }
    if sets.values().any(|s| s.dates != first.dates) {
        return Err(Error::Alignment(vec!["dates are in a different order".into()]));
    }
    let mut matrix = vec![vec![0.0; names.len()]; names.len()];
    for (i, a) in names.iter().enumerate() {
        for (j, b) in names.iter().enumerate() {
            matrix[i][j] = lag1_cross_correlation(&sets[a].values, &sets[b].values)?;
        }
    }
    Ok((names, matrix))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub basis: ResidualBasis,
    pub residuals: Vec<f64>,
    pub mean: f64,
    pub sd: f64,
    pub ljung_box: Vec<LjungBox>,
    pub ks: KsResult,
}

impl ResidualReport {
    pub fn lb_pvalues(&self) -> BTreeMap<usize, f64> {
        self.ljung_box.iter().map(|l| (l.lag, l.p_value)).collect()
    }
}

/// Full residual report for residuals standardized by a fitted model with
/// Gamma shapes `theta` and ergodic weights `pi`.
pub fn residual_report(
    residuals: Vec<f64>,
    basis: ResidualBasis,
    lags: &[usize],
    theta: &[f64],
    pi: &[f64],
) -> Result<ResidualReport> {
    let n = residuals.len() as f64;
    if residuals.len() < 2 {
        return Err(Error::TooShort {
            needed: 2,
            got: residuals.len(),
        });
    }
    let mean = residuals.iter().sum::<f64>() / n;
    let sd = (residuals.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let ks = ks_mixture_gamma(&residuals, theta, pi)?;
    let ljung_box = ljung_box(&residuals, lags)?;
    Ok(ResidualReport {
        basis,
        residuals,
        mean,
        sd,
        ljung_box,
        ks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Gamma, StandardNormal};

    #[test]
    fn chi_square_cdf_at_mean() {
        // Simpson quadrature of the chi-square(10) density on [0, 10].
        let pdf = |x: f64| x.powi(4) * (-x / 2.0).exp() / (32.0 * 24.0);
        let m = 2000;
        let h = 10.0 / m as f64;
        let mut s = pdf(0.0) + pdf(10.0);
        for i in 1..m {
            s += pdf(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        let quad = s * h / 3.0;
        let cdf = 1.0 - chi_square_sf(10.0, 10.0);
        assert!(cdf > 0.5 && cdf < 0.56, "{cdf}");
        assert!((cdf - quad).abs() < 1e-10);
    }

    #[test]
    fn ljung_box_detects_ar1() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut x = vec![0.0f64; 2000];
        for t in 1..x.len() {
            let e: f64 = StandardNormal.sample(&mut rng);
            x[t] = 0.3 * x[t - 1] + e;
        }
        let lb = ljung_box(&x, &[1]).unwrap();
        assert!(lb[0].p_value < 0.01);
    }

    #[test]
    fn ljung_box_is_nested_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x: Vec<f64> = (0..300).map(|_| StandardNormal.sample(&mut rng)).collect();
        let lb = ljung_box(&x, &[1, 2, 5, 10, 20]).unwrap();
        for w in lb.windows(2) {
            assert!(w[1].statistic >= w[0].statistic);
        }
        assert!(lb.iter().all(|l| (0.0..=1.0).contains(&l.p_value)));
        assert!(matches!(ljung_box(&x, &[300]), Err(Error::Input(_))));
    }

    #[test]
    fn constant_residuals_are_degenerate() {
        assert!(matches!(ljung_box(&[1.0; 20], &[1]), Err(Error::Degenerate(_))));
    }

    #[test]
    fn critical_values_at_paper_sample_size() {
        let c = ks_critical_values(2685);
        assert!((c["0.10"] - 0.024).abs() < 5e-4);
        assert!((c["0.05"] - 0.026).abs() < 5e-4);
        assert!((c["0.01"] - 0.031).abs() < 5e-4);
    }

    #[test]
    fn mixture_cdf_limits() {
        let (th, pi) = ([8.852, 3.271], [0.956, 0.044]);
        assert_eq!(mixture_cdf(0.0, &th, &pi), 0.0);
        assert!((mixture_cdf(1e3, &th, &pi) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn quantile_round_trip() {
        for theta in [0.7, 3.271, 8.852] {
            for i in 1..=99 {
                let p = 0.001 + 0.998 * i as f64 / 100.0;
                let q = gamma_quantile_unit_mean(p, theta).unwrap();
                assert!((gamma_cdf_unit_mean(q, theta) - p).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn degenerate_mixture_is_plain_gamma() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = Gamma::new(4.0, 0.25).unwrap();
        let r: Vec<f64> = (0..500).map(|_| g.sample(&mut rng)).collect();
        let a = ks_mixture_gamma(&r, &[4.0, 9.0], &[1.0, 0.0]).unwrap();
        let b = ks_mixture_gamma(&r, &[4.0], &[1.0]).unwrap();
        assert_eq!(a.statistic, b.statistic);
        assert!((0.0..=1.0).contains(&a.statistic));
        assert!(matches!(ks_mixture_gamma(&[1.0, 0.0], &[4.0], &[1.0]), Err(Error::Domain(_))));
    }

    #[test]
    fn lag_shifted_copy_correlates() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a: Vec<f64> = (0..1000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let mut b = vec![0.0];
        b.extend_from_slice(&a[..999]);
        // b_{t} = a_{t-1}, so corr(b_t, a_{t-1}) = 1.
        assert!((lag1_cross_correlation(&b, &a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn misaligned_dates_are_listed() {
        let d = |s: &str| NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap();
        let mut sets = BTreeMap::new();
        sets.insert(
            "a".to_string(),
            DatedResiduals {
                dates: vec![d("2020-01-01"), d("2020-01-02"), d("2020-01-03")],
                values: vec![1.0, 2.0, 3.0],
            },
        );
        sets.insert(
            "b".to_string(),
            DatedResiduals {
                dates: vec![d("2020-01-01"), d("2020-01-02"), d("2020-01-06")],
                values: vec![1.0, 2.0, 3.0],
            },
        );
        match cross_correlation_lag1(&sets) {
            Err(Error::Alignment(v)) => assert_eq!(v, ["2020-01-03", "2020-01-06"]),
            other => panic!("{other:?}"),
        }
    }
}
