//! Parameter types and deterministic recursions shared by every model variant.
//!
//! The conditional mean of realized volatility is `mu_t = base_t + policy_t`,
//! where the base component follows
//! `base_t = omega + alpha*rv[t-1] + beta*base[t-1] + gamma*d[t-1]*rv[t-1]`
//! and the policy component is driven by the proxy deviation
//! `x_hat[t] - x_bar`. Errors are unit-mean Gamma with shape `theta`.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::data::MarketSeries;
use crate::error::{Error, Result};

/// Number of leading observations averaged for the base-component start value.
pub const INIT_WINDOW: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaseParams {
    pub omega: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl BaseParams {
    /// `alpha + beta + gamma / 2`.
    pub fn persistence(&self) -> f64 {
        self.alpha + self.beta + 0.5 * self.gamma
    }

    pub fn validate(&self) -> Result<()> {
        let Self {
            omega,
            alpha,
            beta,
            gamma,
        } = *self;
        if !(omega > 0.0 && omega.is_finite()) {
            return Err(Error::Params(format!("omega must be positive, got {omega}")));
        }
        for (name, v) in [("alpha", alpha), ("beta", beta), ("gamma", gamma)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Params(format!("{name} must be nonnegative, got {v}")));
            }
        }
        if self.persistence() >= 1.0 {
            return Err(Error::Params(format!(
                "alpha + beta + gamma/2 must be below 1, got {}",
                self.persistence()
            )));
        }
        Ok(())
    }
}

/// Policy component: `xi_t = phi0 + increments(s_t) + delta*dev_t + psi*xi_{t-1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub delta: f64,
    pub phi0: f64,
    /// Regime increments over the low-regime intercept, length `K - 1`.
    pub phi: Vec<f64>,
    pub psi: f64,
}

impl PolicyParams {
    /// Intercept of regime `j`: `phi0 + phi[0] + ... + phi[j-1]`.
    pub fn intercept(&self, regime: usize) -> f64 {
        self.phi0 + self.phi[..regime].iter().sum::<f64>()
    }

    pub fn intercepts(&self) -> Vec<f64> {
        (0..=self.phi.len()).map(|j| self.intercept(j)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if !self.delta.is_finite() {
            return Err(Error::Params("delta must be finite".into()));
        }
        if !(self.phi0 >= 0.0 && self.phi0.is_finite()) {
            return Err(Error::Params(format!("phi0 must be nonnegative, got {}", self.phi0)));
        }
        if let Some(v) = self.phi.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
            return Err(Error::Params(format!(
                "regime increments must be nonnegative, got {v}"
            )));
        }
        if !(self.psi.abs() < 1.0) {
            return Err(Error::Params(format!("|psi| must be below 1, got {}", self.psi)));
        }
        Ok(())
    }
}

/// Row-stochastic regime transition matrix, `rows[i][j] = Pr(s_t = j | s_{t-1} = i)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TransitionMatrix {
    rows: Vec<Vec<f64>>,
}

impl TransitionMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let m = Self { rows };
        m.validate()?;
        Ok(m)
    }

    /// Two-regime matrix from its staying probabilities.
    pub fn two_state(p00: f64, p11: f64) -> Result<Self> {
        Self::new(vec![vec![p00, 1.0 - p00], vec![1.0 - p11, p11]])
    }

    pub fn single() -> Self {
        Self {
            rows: vec![vec![1.0]],
        }
    }

    pub fn k(&self) -> usize {
        self.rows.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.rows[i][j]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.rows.len();
        if k == 0 {
            return Err(Error::Params("transition matrix is empty".into()));
        }
        for (i, row) in self.rows.iter().enumerate() {
            if row.len() != k {
                return Err(Error::Params(format!("transition row {i} has {} entries, expected {k}", row.len())));
            }
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::Params(format!("transition row {i} has entries outside [0,1]")));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-12 {
                return Err(Error::Params(format!("transition row {i} sums to {s}")));
            }
        }
        Ok(())
    }

    /// Applies a relabeling: new regime `a` is old regime `perm[a]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let k = self.k();
        let rows = (0..k)
            .map(|a| (0..k).map(|b| self.rows[perm[a]][perm[b]]).collect())
            .collect();
        Self { rows }
    }
}

/// Full MS-ACM parameter set for `K` regimes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MsAcmParams {
    pub base: BaseParams,
    pub policy: PolicyParams,
    pub trans: TransitionMatrix,
    /// Gamma shape per regime.
    pub theta: Vec<f64>,
}

impl MsAcmParams {
    pub fn k(&self) -> usize {
        self.theta.len()
    }

    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        self.policy.validate()?;
        self.trans.validate()?;
        let k = self.k();
        if k == 0 {
            return Err(Error::Params("at least one regime is required".into()));
        }
        if self.trans.k() != k || self.policy.phi.len() + 1 != k {
            return Err(Error::Params(format!(
                "inconsistent regime count: {} shapes, {}x{} transitions, {} increments",
                k,
                self.trans.k(),
                self.trans.k(),
                self.policy.phi.len()
            )));
        }
        if let Some(v) = self.theta.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
            return Err(Error::Params(format!("Gamma shapes must be positive, got {v}")));
        }
        Ok(())
    }

    /// Steady-state policy component of each regime with zero proxy deviation.
    pub fn steady_state_xi(&self) -> Vec<f64> {
        self.policy
            .intercepts()
            .into_iter()
            .map(|c| c / (1.0 - self.policy.psi))
            .collect()
    }
}

/// Log density of a Gamma variable with mean `mu` and shape `theta` at `y`.
pub fn gamma_log_density(y: f64, mu: f64, theta: f64) -> Result<f64> {
    if !(y > 0.0 && mu > 0.0 && theta > 0.0) {
        return Err(Error::Domain(format!(
            "Gamma density needs positive arguments (y={y}, mu={mu}, theta={theta})"
        )));
    }
    Ok(GammaShape::new(theta).log_density(y, y.ln(), mu))
}

/// Precomputed shape-only terms of the mean-parameterized Gamma density.
#[derive(Debug, Clone, Copy)]
pub(crate) struct GammaShape {
    theta: f64,
    constant: f64,
}

impl GammaShape {
    pub(crate) fn new(theta: f64) -> Self {
        Self {
            theta,
            constant: theta * theta.ln() - ln_gamma(theta),
        }
    }

    #[inline]
    pub(crate) fn log_density(&self, y: f64, ln_y: f64, mu: f64) -> f64 {
        let th = self.theta;
        self.constant - th * mu.ln() + (th - 1.0) * ln_y - th * y / mu
    }
}

/// Start value of the base component: mean of the first [`INIT_WINDOW`] observations.
pub fn initial_level(rv: &[f64]) -> f64 {
    let n = rv.len().min(INIT_WINDOW);
    rv[..n].iter().sum::<f64>() / n as f64
}

pub fn base_recursion(params: &BaseParams, rv: &[f64], d: &[u8], init: f64) -> Result<Vec<f64>> {
    if rv.len() != d.len() {
        return Err(Error::Input(format!(
            "rv and d lengths differ ({} vs {})",
            rv.len(),
            d.len()
        )));
    }
    if !(init > 0.0) {
        return Err(Error::Domain(format!("initial level must be positive, got {init}")));
    }
    Ok(base_path(params, rv, d, init))
}

pub(crate) fn base_path(params: &BaseParams, rv: &[f64], d: &[u8], init: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(rv.len());
    if rv.is_empty() {
        return out;
    }
    out.push(init);
    for t in 1..rv.len() {
        let prev = out[t - 1];
        let r = rv[t - 1];
        let asym = if d[t - 1] == 1 { params.gamma * r } else { 0.0 };
        out.push(params.omega + params.alpha * r + params.beta * prev + asym);
    }
    out
}

/// Observation-side inputs reused across likelihood evaluations.
#[derive(Debug, Clone)]
pub struct ModelData {
    pub rv: Vec<f64>,
    pub ln_rv: Vec<f64>,
    pub d: Vec<u8>,
    /// `x_hat[t] - x_bar`.
    pub deviation: Vec<f64>,
    pub lambda: Vec<u8>,
    /// Sample share of announcement days.
    pub lambda_mean: f64,
    pub init: f64,
}

impl ModelData {
    pub fn new(series: &MarketSeries) -> Self {
        let lambda_mean = if series.is_empty() {
            0.0
        } else {
            series.lambda.iter().map(|&v| f64::from(v)).sum::<f64>() / series.len() as f64
        };
        Self {
            rv: series.rv.clone(),
            ln_rv: series.rv.iter().map(|v| v.ln()).collect(),
            d: series.d.clone(),
            deviation: series.proxy_deviation(),
            lambda: series.lambda.clone(),
            lambda_mean,
            init: initial_level(&series.rv),
        }
    }

    pub fn len(&self) -> usize {
        self.rv.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rv.is_empty()
    }
}

/// Single-regime filter output.
#[derive(Debug, Clone, PartialEq)]
pub struct AcmOutput {
    pub mu: Vec<f64>,
    pub loglik: f64,
    /// Per-observation log-likelihood contributions.
    pub terms: Vec<f64>,
    /// First index where the conditional mean was not positive.
    pub failure: Option<usize>,
}

/// Single-regime composite model:
/// `xi_t = delta*dev_t + phi*(lambda_t - mean(lambda)) + psi*xi_{t-1}`, `xi_{-1} = 0`.
///
/// With `announce = None` the announcement term is dropped; `delta = psi = 0`
/// gives AMEM and `psi = 0` gives AMEMX. A non-positive conditional mean
/// yields a log-likelihood of `-inf` and records the index.
pub fn acm_filter(
    base: &BaseParams,
    policy: &PolicyParams,
    theta: f64,
    series: &MarketSeries,
    announce: Option<f64>,
) -> AcmOutput {
    acm_filter_data(base, policy, theta, &ModelData::new(series), announce)
}

pub(crate) fn acm_filter_data(
    base: &BaseParams,
    policy: &PolicyParams,
    theta: f64,
    data: &ModelData,
    announce: Option<f64>,
) -> AcmOutput {
    let n = data.len();
    let shape = GammaShape::new(theta);
    let mut mu = Vec::with_capacity(n);
    let mut terms = Vec::with_capacity(n);
    let mut loglik = 0.0;
    let mut failure = None;
    let mut level = data.init;
    let mut xi = 0.0;
    for t in 0..n {
        if t > 0 {
            let r = data.rv[t - 1];
            let asym = if data.d[t - 1] == 1 { base.gamma * r } else { 0.0 };
            level = base.omega + base.alpha * r + base.beta * level + asym;
        }
        let mut next = policy.delta * data.deviation[t] + policy.psi * xi;
        if let Some(phi) = announce {
            next += phi * (f64::from(data.lambda[t]) - data.lambda_mean);
        }
        xi = next;
        let m = level + xi;
        mu.push(m);
        if !(m > 0.0) || !m.is_finite() {
            failure.get_or_insert(t);
            terms.push(f64::NEG_INFINITY);
            loglik = f64::NEG_INFINITY;
            continue;
        }
        let ll = shape.log_density(data.rv[t], data.ln_rv[t], m);
        terms.push(ll);
        loglik += ll;
    }
    if !theta.is_finite() || theta <= 0.0 {
        loglik = f64::NEG_INFINITY;
    }
    AcmOutput {
        mu,
        loglik,
        terms,
        failure,
    }
}
