//! Quasi-maximum-likelihood estimation of the nested model family
//! (AMEM, AMEMX, ACM, MS-ACM).
//!
//! Each start is drawn uniformly from a data-scaled admissible box, mapped
//! to the unconstrained space, searched with Nelder-Mead (run twice, the
//! second pass restarting from the first optimum) and polished with BFGS on
//! finite-difference gradients. The best start by log-likelihood wins; ties
//! go to the lowest start index.

pub mod optimize;
pub mod sandwich;
pub mod transform;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::MarketSeries;
use crate::error::{Error, Result};
use crate::model::{acm_filter_data, base_path, BaseParams, ModelData, MsAcmParams, PolicyParams, TransitionMatrix};
use crate::regime::{ergodic_distribution, expected_durations, kim_loglik, kim_terms, run_filter, FilterOutput};

pub use sandwich::{sandwich_se, SandwichResult};
pub use transform::{from_unconstrained, natural_vector, parameter_names, to_unconstrained};

use optimize::{bfgs, nelder_mead, BfgsOptions, NelderMeadOptions};

/// Default number of random starts.
pub const DEFAULT_STARTS: usize = 11;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelVariant {
    /// Asymmetric MEM: `mu = base`.
    Amem,
    /// AMEM plus `delta * (x_hat - x_bar)`.
    Amemx,
    /// Composite model with AR(1) policy component.
    Acm,
    /// Markov-switching composite model.
    #[serde(rename = "msacm")]
    MsAcm,
}

impl ModelVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelVariant::Amem => "amem",
            ModelVariant::Amemx => "amemx",
            ModelVariant::Acm => "acm",
            ModelVariant::MsAcm => "msacm",
        }
    }
}

impl std::str::FromStr for ModelVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "amem" => Ok(Self::Amem),
            "amemx" => Ok(Self::Amemx),
            "acm" => Ok(Self::Acm),
            "msacm" | "ms-acm" => Ok(Self::MsAcm),
            other => Err(Error::Input(format!("unknown model `{other}`"))),
        }
    }
}

/// Which coordinates a fit estimates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub variant: ModelVariant,
    /// Number of regimes (switching model only).
    pub k: usize,
    /// Estimate the low-regime intercept `phi0` (switching model).
    pub phi0: bool,
    /// Estimate the AR coefficient `psi` (ACM and switching model).
    pub psi: bool,
    /// Include the announcement-dummy term (ACM only).
    pub announcement: bool,
    /// Hold the regime increments at zero.
    pub fix_phi_zero: bool,
    /// Share one Gamma shape across regimes.
    pub equal_shapes: bool,
}

impl ModelSpec {
    /// Defaults: ACM estimates `psi`; the switching model drops `phi0` and `psi`.
    pub fn new(variant: ModelVariant, k: usize) -> Self {
        Self {
            variant,
            k: if variant == ModelVariant::MsAcm { k } else { 1 },
            phi0: false,
            psi: variant == ModelVariant::Acm,
            announcement: false,
            fix_phi_zero: false,
            equal_shapes: false,
        }
    }

    pub fn with_announcement(mut self, on: bool) -> Self {
        self.announcement = on;
        self
    }

    pub fn with_phi0(mut self, on: bool) -> Self {
        self.phi0 = on;
        self
    }

    pub fn with_psi(mut self, on: bool) -> Self {
        self.psi = on;
        self
    }

    pub fn validate(&self) -> Result<()> {
        match self.variant {
            ModelVariant::MsAcm if self.k < 2 => {
                Err(Error::Input(format!("switching model needs at least 2 regimes, got {}", self.k)))
            }
            ModelVariant::Amem | ModelVariant::Amemx if self.psi => {
                Err(Error::Input(format!("{} has no AR policy component", self.variant.as_str())))
            }
            _ => Ok(()),
        }
    }

    pub fn is_switching(&self) -> bool {
        self.variant == ModelVariant::MsAcm
    }

    pub fn k(&self) -> usize {
        if self.is_switching() {
            self.k
        } else {
            1
        }
    }

    pub fn has_delta(&self) -> bool {
        self.variant != ModelVariant::Amem
    }

    pub fn estimates_phi0(&self) -> bool {
        self.is_switching() && self.phi0
    }

    pub fn has_announcement(&self) -> bool {
        self.variant == ModelVariant::Acm && self.announcement
    }

    pub fn estimates_increments(&self) -> bool {
        self.is_switching() && !self.fix_phi_zero
    }

    pub fn estimates_psi(&self) -> bool {
        matches!(self.variant, ModelVariant::Acm | ModelVariant::MsAcm) && self.psi
    }

    pub fn shape_count(&self) -> usize {
        if self.is_switching() && !self.equal_shapes {
            self.k
        } else {
            1
        }
    }

    pub fn n_params(&self) -> usize {
        parameter_names(self).len()
    }
}

/// Model parameters plus the ACM announcement coefficient when present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub params: MsAcmParams,
    pub announce: Option<f64>,
}

impl ModelParams {
    /// Wraps single-regime parameters.
    pub fn single(base: BaseParams, delta: f64, psi: f64, theta: f64, announce: Option<f64>) -> Self {
        Self {
            params: MsAcmParams {
                base,
                policy: PolicyParams {
                    delta,
                    phi0: 0.0,
                    phi: Vec::new(),
                    psi,
                },
                trans: TransitionMatrix::single(),
                theta: vec![theta],
            },
            announce,
        }
    }
}

/// Log-likelihood of `params` under `spec`; `-inf` when inadmissible.
pub fn loglik(spec: &ModelSpec, params: &ModelParams, data: &ModelData) -> f64 {
    if params.params.validate().is_err() {
        return f64::NEG_INFINITY;
    }
    if spec.is_switching() {
        kim_loglik(&params.params, data)
    } else {
        let p = &params.params;
        acm_filter_data(&p.base, &p.policy, p.theta[0], data, params.announce).loglik
    }
}

/// Per-observation log-likelihood contributions.
pub fn loglik_terms(spec: &ModelSpec, params: &ModelParams, data: &ModelData) -> Result<Vec<f64>> {
    params.params.validate()?;
    if spec.is_switching() {
        kim_terms(&params.params, data)
    } else {
        let p = &params.params;
        Ok(acm_filter_data(&p.base, &p.policy, p.theta[0], data, params.announce).terms)
    }
}

/// Filter output for any variant; single-regime models report degenerate
/// regime probabilities.
pub fn filter_output(spec: &ModelSpec, params: &ModelParams, series: &MarketSeries) -> Result<FilterOutput> {
    params.params.validate()?;
    series.validate()?;
    let data = ModelData::new(series);
    if spec.is_switching() {
        run_filter(&params.params, &data, true)
    } else {
        let p = &params.params;
        let out = acm_filter_data(&p.base, &p.policy, p.theta[0], &data, params.announce);
        let base = base_path(&p.base, &data.rv, &data.d, data.init);
        Ok(FilterOutput::single_regime(out.mu, base, out.terms, out.failure))
    }
}

/// `(aic, bic)` with `aic = -2 ll + 2 k` and `bic = -2 ll + k ln T`.
pub fn information_criteria(loglik: f64, k_params: usize, n_obs: f64) -> (f64, f64) {
    let k = k_params as f64;
    let aic = -2.0 * loglik + 2.0 * k;
    let bic = -2.0 * loglik + k * n_obs.ln();
    (aic, bic)
}

/// Uniform ranges, on the natural scale, for random starting values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartBox {
    pub omega: (f64, f64),
    pub alpha: (f64, f64),
    pub beta: (f64, f64),
    pub gamma: (f64, f64),
    /// Upper bound on `alpha + beta + gamma/2` for drawn starts.
    pub max_persistence: f64,
    pub delta: (f64, f64),
    pub phi0: (f64, f64),
    pub increment: (f64, f64),
    pub announce: (f64, f64),
    pub psi: (f64, f64),
    pub stay: (f64, f64),
    pub theta: (f64, f64),
}

impl StartBox {
    /// Box scaled by the mean of `rv` and the spread of the proxy deviation.
    pub fn for_data(data: &ModelData) -> Self {
        let m = data.rv.iter().sum::<f64>() / data.len().max(1) as f64;
        let n = data.deviation.len().max(1) as f64;
        let dev_mean = data.deviation.iter().sum::<f64>() / n;
        let sd = (data.deviation.iter().map(|v| (v - dev_mean).powi(2)).sum::<f64>() / n).sqrt();
        let delta_span = if sd > 0.0 { 0.1 * m / sd } else { 0.1 };
        Self {
            omega: (0.01 * m, 0.3 * m),
            alpha: (0.02, 0.4),
            beta: (0.3, 0.9),
            gamma: (0.01, 0.3),
            max_persistence: 0.99,
            delta: (-delta_span, delta_span),
            phi0: (0.01 * m, 0.2 * m),
            increment: (0.05 * m, 1.0 * m),
            announce: (-0.2 * m, 0.2 * m),
            psi: (-0.5, 0.5),
            stay: (0.5, 0.99),
            theta: (1.5, 20.0),
        }
    }

    pub fn draw<R: Rng>(&self, spec: &ModelSpec, rng: &mut R) -> ModelParams {
        let u = |rng: &mut R, (lo, hi): (f64, f64)| lo + (hi - lo) * rng.random::<f64>();
        let base = loop {
            let b = BaseParams {
                omega: u(rng, self.omega),
                alpha: u(rng, self.alpha),
                beta: u(rng, self.beta),
                gamma: u(rng, self.gamma),
            };
            if b.persistence() < self.max_persistence {
                break b;
            }
        };
        let k = spec.k();
        let delta = if spec.has_delta() { u(rng, self.delta) } else { 0.0 };
        let phi0 = if spec.estimates_phi0() { u(rng, self.phi0) } else { 0.0 };
        let announce = spec.has_announcement().then(|| u(rng, self.announce));
        let phi = if spec.estimates_increments() {
            (1..k).map(|_| u(rng, self.increment) / (k - 1) as f64).collect()
        } else {
            vec![0.0; k - 1]
        };
        let psi = if spec.estimates_psi() { u(rng, self.psi) } else { 0.0 };
        let trans = if spec.is_switching() {
            let rows = (0..k)
                .map(|i| {
                    let stay = u(rng, self.stay);
                    let weights: Vec<f64> = (0..k - 1).map(|_| 0.1 + rng.random::<f64>()).collect();
                    let total: f64 = weights.iter().sum();
                    let mut w = weights.into_iter();
                    let mut row: Vec<f64> = (0..k)
                        .map(|j| if j == i { stay } else { (1.0 - stay) * w.next().unwrap_or(0.0) / total })
                        .collect();
                    // Absorb rounding so the row sums to one.
                    let s: f64 = row.iter().sum();
                    row[i] += 1.0 - s;
                    row
                })
                .collect();
            TransitionMatrix::new(rows).expect("drawn rows are stochastic")
        } else {
            TransitionMatrix::single()
        };
        let theta = if spec.shape_count() == 1 {
            vec![u(rng, self.theta); k]
        } else {
            (0..k).map(|_| u(rng, self.theta)).collect()
        };
        ModelParams {
            params: MsAcmParams {
                base,
                policy: PolicyParams { delta, phi0, phi, psi },
                trans,
                theta,
            },
            announce,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSettings {
    pub starts: usize,
    pub seed: u64,
    /// Evaluation budget for each simplex pass.
    pub max_evals: usize,
    /// Simplex tolerance on the per-observation negative log-likelihood.
    pub ftol: f64,
    /// Simplex tolerance on the unconstrained coordinates.
    pub xtol: f64,
    pub polish: bool,
    pub standard_errors: bool,
    /// Run starts on the rayon pool.
    pub parallel: bool,
}

impl Default for FitSettings {
    fn default() -> Self {
        Self {
            starts: DEFAULT_STARTS,
            seed: 0,
            max_evals: 6000,
            ftol: 1e-10,
            xtol: 1e-6,
            polish: true,
            standard_errors: true,
            parallel: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartLog {
    pub index: usize,
    /// Starting point on the natural scale.
    pub start: Vec<f64>,
    /// Log-likelihood after the simplex passes.
    pub simplex_loglik: Option<f64>,
    /// Log-likelihood after polishing.
    pub loglik: Option<f64>,
    pub evaluations: usize,
    pub iterations: usize,
    pub converged: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: ModelSpec,
    pub params: ModelParams,
    pub names: Vec<String>,
    pub estimates: Vec<f64>,
    /// Robust standard errors on the natural scale.
    pub se: Option<Vec<f64>>,
    pub se_warning: Option<String>,
    pub hessian_asymmetry: Option<f64>,
    pub loglik: f64,
    pub aic: f64,
    pub bic: f64,
    pub k_params: usize,
    pub n_obs: usize,
    pub converged: bool,
    pub n_starts: usize,
    pub best_start: usize,
    pub iterations: usize,
    pub seed: u64,
    pub settings: FitSettings,
    pub start_box: StartBox,
    pub starts: Vec<StartLog>,
    pub ergodic: Vec<f64>,
    /// Expected regime durations in days; `None` for absorbing regimes.
    pub durations: Vec<Option<f64>>,
}

impl FitResult {
    pub fn estimate(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.estimates[i])
    }
}

struct StartOutcome {
    log: StartLog,
    z: Option<Vec<f64>>,
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

fn run_start(spec: &ModelSpec, data: &ModelData, settings: &FitSettings, index: usize, start: &ModelParams) -> StartOutcome {
    let natural = natural_vector(spec, start);
    let mut log = StartLog {
        index,
        start: natural,
        simplex_loglik: None,
        loglik: None,
        evaluations: 0,
        iterations: 0,
        converged: false,
        error: None,
    };
    let z0 = match to_unconstrained(spec, start) {
        Ok(z) => z,
        Err(e) => {
            log.error = Some(e.to_string());
            return StartOutcome { log, z: None };
        }
    };
    let scale = data.len().max(1) as f64;
    let objective = |z: &[f64]| match from_unconstrained(spec, z) {
        Ok(p) => -loglik(spec, &p, data) / scale,
        Err(_) => f64::INFINITY,
    };
    let nm_opts = NelderMeadOptions {
        ftol: settings.ftol,
        xtol: settings.xtol,
        max_evals: settings.max_evals,
        initial_step: 0.5,
    };
    let first = nelder_mead(objective, &z0, &nm_opts);
    let second = nelder_mead(
        objective,
        &first.x,
        &NelderMeadOptions {
            initial_step: 0.1,
            ..nm_opts
        },
    );
    let simplex = if second.value <= first.value { second.clone() } else { first.clone() };
    log.evaluations = first.evaluations + second.evaluations;
    log.iterations = first.iterations + second.iterations;
    log.simplex_loglik = finite(-simplex.value * scale);
    let mut best = simplex.clone();
    let mut converged = first.converged || second.converged;
    if settings.polish && simplex.value.is_finite() {
        let polished = bfgs(objective, &simplex.x, &BfgsOptions::default());
        log.evaluations += polished.evaluations;
        log.iterations += polished.iterations;
        if polished.value <= simplex.value {
            converged = converged || polished.converged;
            best = polished;
        }
    }
    log.loglik = finite(-best.value * scale);
    log.converged = converged && log.loglik.is_some();
    if log.loglik.is_none() {
        log.error = Some("no finite log-likelihood reached".into());
        return StartOutcome { log, z: None };
    }
    StartOutcome { log, z: Some(best.x) }
}

/// Fits `spec` to `series` by multi-start quasi-maximum likelihood.
pub fn fit_qml(spec: &ModelSpec, series: &MarketSeries, settings: &FitSettings) -> Result<FitResult> {
    spec.validate()?;
    series.validate()?;
    if settings.starts == 0 {
        return Err(Error::Input("at least one start is required".into()));
    }
    let data = ModelData::new(series);
    let start_box = StartBox::for_data(&data);
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let draws: Vec<ModelParams> = (0..settings.starts).map(|_| start_box.draw(spec, &mut rng)).collect();
    fit_from_starts(spec, series, settings, start_box, draws)
}

/// Same as [`fit_qml`] with caller-supplied starting values.
pub fn fit_from_starts(
    spec: &ModelSpec,
    series: &MarketSeries,
    settings: &FitSettings,
    start_box: StartBox,
    draws: Vec<ModelParams>,
) -> Result<FitResult> {
    let data = ModelData::new(series);
    let outcomes: Vec<StartOutcome> = if settings.parallel {
        draws
            .par_iter()
            .enumerate()
            .map(|(i, s)| run_start(spec, &data, settings, i, s))
            .collect()
    } else {
        draws
            .iter()
            .enumerate()
            .map(|(i, s)| run_start(spec, &data, settings, i, s))
            .collect()
    };

    let best = outcomes
        .iter()
        .filter(|o| o.z.is_some())
        .fold(None::<&StartOutcome>, |acc, o| match acc {
            Some(a) if a.log.loglik >= o.log.loglik => Some(a),
            _ => Some(o),
        });
    let logs: Vec<StartLog> = outcomes.iter().map(|o| o.log.clone()).collect();
    let Some(best) = best else {
        return Err(Error::Estimation {
            message: format!("none of the {} starts reached a finite log-likelihood", logs.len()),
            starts: logs,
        });
    };
    let z = best.z.clone().expect("filtered on presence");
    let params = from_unconstrained(spec, &z)?;
    let ll = loglik(spec, &params, &data);
    let k_params = spec.n_params();
    let (aic, bic) = information_criteria(ll, k_params, data.len() as f64);

    let (se, se_warning, hessian_asymmetry) = if settings.standard_errors {
        match sandwich_se(spec, &params, series) {
            Ok(s) => {
                let warning = s
                    .pseudo_inverse
                    .then(|| "Hessian not negative definite; pseudo-inverse used".to_string());
                (Some(s.se), warning, Some(s.hessian_asymmetry))
            }
            Err(e) => (None, Some(e.to_string()), None),
        }
    } else {
        (None, None, None)
    };
    let ergodic = ergodic_distribution(params.params.trans.rows()).unwrap_or_default();
    let durations = expected_durations(params.params.trans.rows())
        .into_iter()
        .map(finite)
        .collect();

    Ok(FitResult {
        model: *spec,
        names: parameter_names(spec),
        estimates: natural_vector(spec, &params),
        params,
        se,
        se_warning,
        hessian_asymmetry,
        loglik: ll,
        aic,
        bic,
        k_params,
        n_obs: data.len(),
        converged: best.log.converged,
        n_starts: logs.len(),
        best_start: best.log.index,
        iterations: best.log.iterations,
        seed: settings.seed,
        settings: settings.clone(),
        start_box,
        starts: logs,
        ergodic,
        durations,
    })
}
