//! Robust `H^-1 G H^-1` covariance on the unconstrained scale, mapped to the
//! natural scale through the transform Jacobian.

use nalgebra::DMatrix;

use super::optimize::{fd_gradient, fd_step};
use super::{from_unconstrained, loglik, loglik_terms, natural_vector, to_unconstrained, ModelParams, ModelSpec};
use crate::data::MarketSeries;
use crate::error::{Error, Result};
use crate::model::ModelData;

#[derive(Debug, Clone, PartialEq)]
pub struct SandwichResult {
    /// Standard errors on the natural scale, ordered as the parameter names.
    pub se: Vec<f64>,
    /// Natural-scale covariance.
    pub covariance: Vec<Vec<f64>>,
    /// Finite-difference Hessian of the total log-likelihood (unconstrained
    /// scale), before symmetrization.
    pub hessian: Vec<Vec<f64>>,
    /// `max |H - H^T| / max |H|`.
    pub hessian_asymmetry: f64,
    /// The Hessian was not negative definite and a pseudo-inverse was used.
    pub pseudo_inverse: bool,
}

pub fn sandwich_se(spec: &ModelSpec, params: &ModelParams, series: &MarketSeries) -> Result<SandwichResult> {
    let data = ModelData::new(series);
    let z = to_unconstrained(spec, params)?;
    let p = z.len();
    let total = |v: &[f64]| match from_unconstrained(spec, v) {
        Ok(mp) => loglik(spec, &mp, &data),
        Err(_) => f64::NAN,
    };
    if !total(&z).is_finite() {
        return Err(Error::Domain("log-likelihood is not finite at the estimate".into()));
    }

    // Hessian as the central-difference Jacobian of the central-difference gradient.
    let mut hess = DMatrix::<f64>::zeros(p, p);
    let mut probe = z.clone();
    for i in 0..p {
        let h = fd_step(z[i]);
        probe[i] = z[i] + h;
        let up = fd_gradient(&total, &probe);
        probe[i] = z[i] - h;
        let down = fd_gradient(&total, &probe);
        probe[i] = z[i];
        for j in 0..p {
            hess[(i, j)] = (up[j] - down[j]) / (2.0 * h);
        }
    }
    if hess.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("finite-difference Hessian is not finite".into()));
    }
    let scale = hess.amax();
    let asym = (&hess - hess.transpose()).amax() / if scale > 0.0 { scale } else { 1.0 };
    let sym = (&hess + hess.transpose()) * 0.5;

    // Per-observation scores.
    let terms = |v: &[f64]| -> Result<Vec<f64>> { loglik_terms(spec, &from_unconstrained(spec, v)?, &data) };
    let n = data.len();
    let mut scores = DMatrix::<f64>::zeros(n, p);
    for i in 0..p {
        let h = fd_step(z[i]);
        probe[i] = z[i] + h;
        let up = terms(&probe)?;
        probe[i] = z[i] - h;
        let down = terms(&probe)?;
        probe[i] = z[i];
        for t in 0..n {
            scores[(t, i)] = (up[t] - down[t]) / (2.0 * h);
        }
    }
    if scores.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("per-observation scores are not finite".into()));
    }
    let outer = scores.transpose() * &scores;

    let neg = -&sym;
    let (inv, pseudo) = match neg.clone().cholesky() {
        Some(ch) => (ch.inverse(), false),
        None => {
            let pinv = neg
                .pseudo_inverse(1e-12 * scale.max(1.0))
                .map_err(|e| Error::Domain(format!("pseudo-inverse failed: {e}")))?;
            (pinv, true)
        }
    };
    let cov_z = &inv * outer * &inv;

    // Jacobian of the natural parameters with respect to z.
    let natural = |v: &[f64]| -> Result<Vec<f64>> { Ok(natural_vector(spec, &from_unconstrained(spec, v)?)) };
    let mut jac = DMatrix::<f64>::zeros(p, p);
    for i in 0..p {
        let h = fd_step(z[i]);
        probe[i] = z[i] + h;
        let up = natural(&probe)?;
        probe[i] = z[i] - h;
        let down = natural(&probe)?;
        probe[i] = z[i];
        for r in 0..p {
            jac[(r, i)] = (up[r] - down[r]) / (2.0 * h);
        }
    }
    let cov = &jac * cov_z * jac.transpose();
    let se = (0..p).map(|i| cov[(i, i)].max(0.0).sqrt()).collect();
    let to_rows = |m: &DMatrix<f64>| (0..m.nrows()).map(|r| m.row(r).iter().copied().collect()).collect();
    Ok(SandwichResult {
        se,
        covariance: to_rows(&cov),
        hessian: to_rows(&hess),
        hessian_asymmetry: asym,
        pseudo_inverse: pseudo,
    })
}
