//! MS-ACM simulator with the full path-dependent policy component.

use chrono::{Datelike, Days, NaiveDate, Weekday};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};

use crate::data::MarketSeries;
use crate::error::{Error, Result};
use crate::model::MsAcmParams;
use crate::regime::ergodic_distribution;

/// Exogenous proxy-deviation process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ExoSpec {
    Zero,
    /// Stationary AR(1): `z_t = coef * z_{t-1} + scale * e_t`.
    Ar1 { coef: f64, scale: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateOptions {
    pub seed: u64,
    /// Probability of a negative-return day.
    pub negative_prob: f64,
    /// Regime at `t = -1`; drawn from the ergodic distribution when absent.
    pub initial_state: Option<usize>,
    /// Number of announcement days to flag, drawn uniformly from days `1..T`.
    pub announcements: usize,
    pub start_date: NaiveDate,
}

impl Default for SimulateOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            negative_prob: 0.5,
            initial_state: None,
            announcements: 0,
            start_date: NaiveDate::from_ymd_opt(2009, 6, 1).expect("valid date"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedPath {
    pub series: MarketSeries,
    pub states: Vec<usize>,
    pub xi_true: Vec<f64>,
    pub mu_true: Vec<f64>,
}

/// Consecutive weekdays starting at `start` (rolled forward off a weekend).
pub fn business_days(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(n);
    let mut d = start;
    while out.len() < n {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d = d + Days::new(1);
    }
    out
}

pub fn simulate(params: &MsAcmParams, t_len: usize, exo: ExoSpec, opts: &SimulateOptions) -> Result<SimulatedPath> {
    params.validate()?;
    if t_len < 2 {
        return Err(Error::TooShort { needed: 2, got: t_len });
    }
    if !(0.0..=1.0).contains(&opts.negative_prob) {
        return Err(Error::Params(format!(
            "negative_prob must lie in [0,1], got {}",
            opts.negative_prob
        )));
    }
    if opts.announcements >= t_len {
        return Err(Error::Params(format!(
            "cannot place {} announcements in {} days",
            opts.announcements, t_len
        )));
    }
    let k = params.k();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);

    let proxy: Vec<f64> = match exo {
        ExoSpec::Zero => vec![0.0; t_len],
        ExoSpec::Ar1 { coef, scale } => {
            if !(coef.abs() < 1.0 && scale >= 0.0) {
                return Err(Error::Params(format!(
                    "AR(1) proxy needs |coef| < 1 and scale >= 0, got coef={coef}, scale={scale}"
                )));
            }
            let normal = Normal::new(0.0, 1.0).expect("unit normal");
            let mut z = scale / (1.0 - coef * coef).sqrt() * normal.sample(&mut rng);
            (0..t_len)
                .map(|_| {
                    let v = z;
                    z = coef * z + scale * normal.sample(&mut rng);
                    v
                })
                .collect()
        }
    };
    let x_bar = proxy.iter().sum::<f64>() / t_len as f64;

    let pi = match opts.initial_state {
        Some(s) if s < k => {
            let mut v = vec![0.0; k];
            v[s] = 1.0;
            v
        }
        Some(s) => return Err(Error::Params(format!("initial state {s} out of range for {k} regimes"))),
        None => ergodic_distribution(params.trans.rows())?,
    };
    let mut state = draw_categorical(&mut rng, &pi);
    let steady = params.steady_state_xi();
    let mut xi_prev = steady[state];

    let intercepts = params.policy.intercepts();
    let stationary_xi: f64 = pi.iter().zip(&steady).map(|(p, x)| p * x).sum();
    let b = &params.base;
    let q = opts.negative_prob;
    let mut level = (b.omega + (b.alpha + b.gamma * q) * stationary_xi) / (1.0 - b.alpha - b.beta - b.gamma * q);
    if !(level > 0.0 && level.is_finite()) {
        level = b.omega / (1.0 - b.persistence());
    }

    let shocks: Vec<Gamma<f64>> = params
        .theta
        .iter()
        .map(|&th| Gamma::new(th, 1.0 / th).map_err(|e| Error::Params(format!("Gamma shape {th}: {e}"))))
        .collect::<Result<_>>()?;
    let negative = Bernoulli::new(q).map_err(|e| Error::Params(e.to_string()))?;

    let mut states = Vec::with_capacity(t_len);
    let mut xi_true = Vec::with_capacity(t_len);
    let mut mu_true = Vec::with_capacity(t_len);
    let mut rv = Vec::with_capacity(t_len);
    let mut d = Vec::with_capacity(t_len);
    for t in 0..t_len {
        if t > 0 {
            let r = rv[t - 1];
            let asym = if d[t - 1] == 1 { b.gamma * r } else { 0.0 };
            level = b.omega + b.alpha * r + b.beta * level + asym;
        }
        state = draw_categorical(&mut rng, params.trans.rows()[state].as_slice());
        let xi = intercepts[state] + params.policy.delta * (proxy[t] - x_bar) + params.policy.psi * xi_prev;
        let mu = level + xi;
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(Error::Domain(format!(
                "simulated conditional mean is not positive at t={t} ({mu}); shrink delta or the proxy scale"
            )));
        }
        let eps = shocks[state].sample(&mut rng);
        rv.push((mu * eps).max(f64::MIN_POSITIVE));
        d.push(u8::from(negative.sample(&mut rng)));
        states.push(state);
        xi_true.push(xi);
        mu_true.push(mu);
        xi_prev = xi;
    }

    let mut lambda = vec![0u8; t_len];
    if opts.announcements > 0 {
        for idx in sample(&mut rng, t_len - 1, opts.announcements).into_iter() {
            lambda[idx + 1] = 1;
        }
    }
    let has_proxy = !matches!(exo, ExoSpec::Zero);
    let series = MarketSeries {
        dates: business_days(opts.start_date, t_len),
        rv,
        ret: None,
        d,
        x: has_proxy.then(|| proxy.clone()),
        x_hat: has_proxy.then_some(proxy),
        x_bar,
        lambda,
    };
    Ok(SimulatedPath {
        series,
        states,
        xi_true,
        mu_true,
    })
}

fn draw_categorical<R: Rng>(rng: &mut R, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Rounding left `u` above the cumulative sum; take the last positive entry.
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}
