//! Hamilton filter with Kim's collapsing approximation, the Kim smoother and
//! an exact path-enumeration likelihood used as an oracle on short samples.
//!
//! Timing convention: the chain is started one step before the sample. At
//! `t = -1` regime probabilities equal the ergodic distribution and each
//! regime carries its steady-state policy component
//! `intercept_j / (1 - psi)`. Every sample day, including `t = 0`, is then a
//! regular filter step.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::data::MarketSeries;
use crate::error::{Error, Result};
use crate::model::{GammaShape, ModelData, MsAcmParams};

/// Upper bound on the number of regime paths [`exact_path_loglik`] will visit.
pub const MAX_EXACT_PATHS: u128 = 1 << 20;

/// Row-major `T x K` matrix of regime quantities.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegimeMatrix {
    k: usize,
    data: Vec<f64>,
}

impl RegimeMatrix {
    fn zeros(t: usize, k: usize) -> Self {
        Self {
            k,
            data: vec![0.0; t * k],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let k = rows.first().map_or(0, Vec::len);
        Self {
            k,
            data: rows.iter().flat_map(|r| r.iter().copied()).collect(),
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        if self.k == 0 {
            0
        } else {
            self.data.len() / self.k
        }
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.k..(t + 1) * self.k]
    }

    fn row_mut(&mut self, t: usize) -> &mut [f64] {
        &mut self.data[t * self.k..(t + 1) * self.k]
    }

    pub fn get(&self, t: usize, j: usize) -> f64 {
        self.data[t * self.k + j]
    }

    /// Column `j` as a series.
    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.len()).map(|t| self.get(t, j)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FilterOutput {
    pub loglik: f64,
    /// Per-day log of the filter's normalizing constant.
    pub loglik_terms: Vec<f64>,
    /// `Pr[s_t = j | I_{t-1}]`.
    pub predicted: RegimeMatrix,
    /// `Pr[s_t = j | I_t]`.
    pub filtered: RegimeMatrix,
    /// `Pr[s_t = j | I_T]`.
    pub smoothed: RegimeMatrix,
    /// Regime-conditional policy component after collapsing.
    pub xi_collapsed: RegimeMatrix,
    /// Base volatility component.
    pub base: Vec<f64>,
    /// `E[mu_t | I_{t-1}]`.
    pub mu_onestep: Vec<f64>,
    /// `sum_j smoothed[t,j] * (base_t + xi_collapsed[t,j])`.
    pub mu_smoothed: Vec<f64>,
    /// First day with a non-positive conditional mean, if any.
    pub failure: Option<usize>,
    /// Days where a collapse denominator was zero and the joint-weighted
    /// average was used instead.
    pub collapse_fallbacks: Vec<usize>,
}

impl FilterOutput {
    pub fn k(&self) -> usize {
        self.filtered.k()
    }

    pub fn len(&self) -> usize {
        self.mu_onestep.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu_onestep.is_empty()
    }

    /// Degenerate single-regime output wrapping a conditional-mean path.
    pub fn single_regime(mu: Vec<f64>, base: Vec<f64>, terms: Vec<f64>, failure: Option<usize>) -> Self {
        let n = mu.len();
        let ones = RegimeMatrix {
            k: 1,
            data: vec![1.0; n],
        };
        let xi = RegimeMatrix {
            k: 1,
            data: mu.iter().zip(&base).map(|(m, b)| m - b).collect(),
        };
        let loglik = if failure.is_some() {
            f64::NEG_INFINITY
        } else {
            terms.iter().sum()
        };
        Self {
            loglik,
            loglik_terms: terms,
            predicted: ones.clone(),
            filtered: ones.clone(),
            smoothed: ones,
            xi_collapsed: xi,
            base,
            mu_onestep: mu.clone(),
            mu_smoothed: mu,
            failure,
            collapse_fallbacks: Vec::new(),
        }
    }
}

/// Filters `series` under `params`, returning probabilities, collapsed
/// policy components and the (approximate) log-likelihood. A non-positive
/// conditional mean anywhere gives `loglik = -inf` with `failure` set.
pub fn hamilton_kim_filter(params: &MsAcmParams, series: &MarketSeries) -> Result<FilterOutput> {
    params.validate()?;
    series.validate()?;
    run_filter(params, &ModelData::new(series), true)
}

/// Log-likelihood only; skips the smoother.
pub(crate) fn kim_loglik(params: &MsAcmParams, data: &ModelData) -> f64 {
    match run_filter(params, data, false) {
        Ok(out) => out.loglik,
        Err(_) => f64::NEG_INFINITY,
    }
}

pub(crate) fn kim_terms(params: &MsAcmParams, data: &ModelData) -> Result<Vec<f64>> {
    run_filter(params, data, false).map(|o| o.loglik_terms)
}

pub(crate) fn run_filter(params: &MsAcmParams, data: &ModelData, smooth: bool) -> Result<FilterOutput> {
    let k = params.k();
    let n = data.len();
    let pi = ergodic_distribution(params.trans.rows())?;
    let intercepts = params.policy.intercepts();
    let psi = params.policy.psi;
    let delta = params.policy.delta;
    let shapes: Vec<GammaShape> = params.theta.iter().map(|&t| GammaShape::new(t)).collect();
    let ln_trans: Vec<f64> = (0..k)
        .flat_map(|i| (0..k).map(move |j| (i, j)))
        .map(|(i, j)| params.trans.get(i, j).ln())
        .collect();

    let mut predicted = RegimeMatrix::zeros(n, k);
    let mut filtered = RegimeMatrix::zeros(n, k);
    let mut xi_col = RegimeMatrix::zeros(n, k);
    let mut base = Vec::with_capacity(n);
    let mut mu_onestep = Vec::with_capacity(n);
    let mut terms = Vec::with_capacity(n);
    let mut fallbacks = Vec::new();
    let mut failure = None;
    let mut loglik = 0.0;

    let mut prev_prob = pi;
    let mut prev_xi = params.steady_state_xi();
    // Scratch for the K x K joint quantities of one step.
    let mut xi_pair = vec![0.0; k * k];
    let mut log_w = vec![0.0; k * k];
    let mut level = data.init;

    for t in 0..n {
        if t > 0 {
            let r = data.rv[t - 1];
            let asym = if data.d[t - 1] == 1 { params.base.gamma * r } else { 0.0 };
            level = params.base.omega + params.base.alpha * r + params.base.beta * level + asym;
        }
        base.push(level);
        let shock = delta * data.deviation[t];
        let mut mu_pred = 0.0;
        let mut max_w = f64::NEG_INFINITY;
        for i in 0..k {
            let ln_prev = prev_prob[i].ln();
            for j in 0..k {
                let idx = i * k + j;
                let xi = intercepts[j] + shock + psi * prev_xi[i];
                xi_pair[idx] = xi;
                let mu = level + xi;
                let weight = prev_prob[i] * params.trans.get(i, j);
                mu_pred += weight * mu;
                let lw = if weight > 0.0 {
                    if !(mu > 0.0 && mu.is_finite()) {
                        failure.get_or_insert(t);
                        f64::NEG_INFINITY
                    } else {
                        ln_prev + ln_trans[idx] + shapes[j].log_density(data.rv[t], data.ln_rv[t], mu)
                    }
                } else {
                    f64::NEG_INFINITY
                };
                log_w[idx] = lw;
                if lw > max_w {
                    max_w = lw;
                }
            }
        }
        mu_onestep.push(mu_pred);
        {
            let pr = predicted.row_mut(t);
            for j in 0..k {
                pr[j] = (0..k).map(|i| prev_prob[i] * params.trans.get(i, j)).sum();
            }
        }
        if failure.is_some() || !max_w.is_finite() {
            failure.get_or_insert(t);
            loglik = f64::NEG_INFINITY;
            terms.push(f64::NEG_INFINITY);
            // Keep probabilities well-defined so downstream shapes stay valid.
            let pr = predicted.row(t).to_vec();
            filtered.row_mut(t).copy_from_slice(&pr);
            for j in 0..k {
                let num: f64 = (0..k).map(|i| prev_prob[i] * params.trans.get(i, j) * xi_pair[i * k + j]).sum();
                xi_col.row_mut(t)[j] = if pr[j] > 0.0 { num / pr[j] } else { xi_pair[j] };
            }
            prev_prob = pr;
            prev_xi = xi_col.row(t).to_vec();
            continue;
        }
        let mut total = 0.0;
        for w in log_w.iter_mut() {
            *w = (*w - max_w).exp();
            total += *w;
        }
        let term = max_w + total.ln();
        terms.push(term);
        loglik += term;
        // log_w now holds joint posterior weights after normalization.
        for w in log_w.iter_mut() {
            *w /= total;
        }
        let filt = filtered.row_mut(t);
        for j in 0..k {
            filt[j] = (0..k).map(|i| log_w[i * k + j]).sum();
        }
        let filt = filtered.row(t).to_vec();
        let mut fallback = false;
        let col = xi_col.row_mut(t);
        for j in 0..k {
            if filt[j] > 0.0 {
                col[j] = (0..k).map(|i| log_w[i * k + j] * xi_pair[i * k + j]).sum::<f64>() / filt[j];
            } else {
                fallback = true;
                col[j] = log_w.iter().zip(&xi_pair).map(|(w, x)| w * x).sum();
            }
        }
        if fallback {
            fallbacks.push(t);
        }
        prev_xi.copy_from_slice(xi_col.row(t));
        prev_prob = filt;
    }

    let smoothed = if smooth && n > 0 {
        kim_smoother(&predicted, &filtered, params)
    } else {
        RegimeMatrix::zeros(0, k)
    };
    let mu_smoothed = if smooth && n > 0 {
        (0..n)
            .map(|t| (0..k).map(|j| smoothed.get(t, j) * (base[t] + xi_col.get(t, j))).sum())
            .collect()
    } else {
        Vec::new()
    };

    Ok(FilterOutput {
        loglik,
        loglik_terms: terms,
        predicted,
        filtered,
        smoothed,
        xi_collapsed: xi_col,
        base,
        mu_onestep,
        mu_smoothed,
        failure,
        collapse_fallbacks: fallbacks,
    })
}

/// Backward recursion
/// `smoothed[t,j] = filtered[t,j] * sum_k p_jk * smoothed[t+1,k] / predicted[t+1,k]`.
fn kim_smoother(predicted: &RegimeMatrix, filtered: &RegimeMatrix, params: &MsAcmParams) -> RegimeMatrix {
    let n = filtered.len();
    let k = filtered.k();
    let mut smoothed = RegimeMatrix::zeros(n, k);
    smoothed.row_mut(n - 1).copy_from_slice(filtered.row(n - 1));
    let mut ratio = vec![0.0; k];
    for t in (0..n - 1).rev() {
        for (m, r) in ratio.iter_mut().enumerate() {
            let p = predicted.get(t + 1, m);
            *r = if p > 0.0 { smoothed.get(t + 1, m) / p } else { 0.0 };
        }
        for j in 0..k {
            let s: f64 = (0..k).map(|m| params.trans.get(j, m) * ratio[m]).sum();
            smoothed.row_mut(t)[j] = filtered.get(t, j) * s;
        }
    }
    smoothed
}

/// Exact log-likelihood summed over every regime path, propagating the
/// policy component along each path without collapsing. Only feasible for
/// short samples (`K^T <= 2^20`).
pub fn exact_path_loglik(params: &MsAcmParams, series: &MarketSeries) -> Result<f64> {
    params.validate()?;
    let data = ModelData::new(series);
    let k = params.k() as u128;
    let n = data.len() as u32;
    let paths = k.checked_pow(n).unwrap_or(u128::MAX);
    if paths > MAX_EXACT_PATHS {
        return Err(Error::TooManyPaths {
            paths,
            limit: MAX_EXACT_PATHS,
        });
    }
    let pi = ergodic_distribution(params.trans.rows())?;
    let base = crate::model::base_path(&params.base, &data.rv, &data.d, data.init);
    let ctx = PathCtx {
        params,
        data: &data,
        base: &base,
        intercepts: params.policy.intercepts(),
        shapes: params.theta.iter().map(|&t| GammaShape::new(t)).collect(),
    };
    let mut acc = LogSumExp::default();
    let steady = params.steady_state_xi();
    for (i, &p) in pi.iter().enumerate() {
        if p > 0.0 {
            ctx.descend(0, i, steady[i], p.ln(), &mut acc);
        }
    }
    Ok(acc.value())
}

struct PathCtx<'a> {
    params: &'a MsAcmParams,
    data: &'a ModelData,
    base: &'a [f64],
    intercepts: Vec<f64>,
    shapes: Vec<GammaShape>,
}

impl PathCtx<'_> {
    fn descend(&self, t: usize, prev: usize, prev_xi: f64, log_w: f64, acc: &mut LogSumExp) {
        if t == self.data.len() {
            acc.add(log_w);
            return;
        }
        let policy = &self.params.policy;
        for j in 0..self.params.k() {
            let p = self.params.trans.get(prev, j);
            if p <= 0.0 {
                continue;
            }
            let xi = self.intercepts[j] + policy.delta * self.data.deviation[t] + policy.psi * prev_xi;
            let mu = self.base[t] + xi;
            let ll = if mu > 0.0 {
                self.shapes[j].log_density(self.data.rv[t], self.data.ln_rv[t], mu)
            } else {
                f64::NEG_INFINITY
            };
            self.descend(t + 1, j, xi, log_w + p.ln() + ll, acc);
        }
    }
}

#[derive(Default)]
struct LogSumExp {
    max: f64,
    sum: f64,
    any: bool,
}

impl LogSumExp {
    fn add(&mut self, v: f64) {
        if v == f64::NEG_INFINITY {
            return;
        }
        if !self.any {
            self.max = v;
            self.sum = 1.0;
            self.any = true;
        } else if v > self.max {
            self.sum = self.sum * (self.max - v).exp() + 1.0;
            self.max = v;
        } else {
            self.sum += (v - self.max).exp();
        }
    }

    fn value(&self) -> f64 {
        if self.any {
            self.max + self.sum.ln()
        } else {
            f64::NEG_INFINITY
        }
    }
}

/// Stationary distribution `pi` with `pi P = pi`, `sum(pi) = 1`: the
/// normalized null-space vector of `P^T - I`, solved jointly with the
/// normalization constraint.
pub fn ergodic_distribution(trans: &[Vec<f64>]) -> Result<Vec<f64>> {
    let k = trans.len();
    if k == 0 || trans.iter().any(|r| r.len() != k) {
        return Err(Error::Input("transition matrix must be square and non-empty".into()));
    }
    if k == 1 {
        return Ok(vec![1.0]);
    }
    if k == 2 {
        // Closed form keeps the two-regime case exact to rounding.
        let (a, b) = (1.0 - trans[0][0], 1.0 - trans[1][1]);
        let denom = a + b;
        if !(denom > 1e-14) {
            return Err(Error::RankDeficient);
        }
        return Ok(vec![b / denom, a / denom]);
    }
    let system = DMatrix::from_fn(k + 1, k, |r, c| {
        if r == k {
            1.0
        } else {
            trans[c][r] - if r == c { 1.0 } else { 0.0 }
        }
    });
    let mut rhs = DVector::zeros(k + 1);
    rhs[k] = 1.0;
    let svd = system.svd(true, true);
    let sv = &svd.singular_values;
    let max_sv = sv.max();
    if !(sv.min() > 1e-10 * max_sv) {
        return Err(Error::RankDeficient);
    }
    let sol = svd
        .solve(&rhs, 0.0)
        .map_err(|e| Error::Domain(format!("ergodic solve failed: {e}")))?;
    let mut pi: Vec<f64> = sol.iter().map(|v| v.max(0.0)).collect();
    let s: f64 = pi.iter().sum();
    pi.iter_mut().for_each(|v| *v /= s);
    Ok(pi)
}

/// Expected regime durations `1 / (1 - p_ii)` in days; absorbing regimes
/// report `f64::INFINITY`.
pub fn expected_durations(trans: &[Vec<f64>]) -> Vec<f64> {
    trans
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let stay = row[i];
            if stay >= 1.0 {
                f64::INFINITY
            } else {
                1.0 / (1.0 - stay)
            }
        })
        .collect()
}
