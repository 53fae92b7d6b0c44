//! Bijection between admissible parameters and an unconstrained vector.
//!
//! - `omega`, regime increments, `phi0`, Gamma shapes: log.
//! - `(alpha, beta, gamma/2, slack)`: softmax of `(z1, z2, z3, 0)`, so all
//!   three are positive and `alpha + beta + gamma/2 < 1`.
//! - `psi`: `tanh`.
//! - transition rows: multinomial logit against reference column
//!   `(i + 1) mod K`; for two regimes this is `logit(p_ii)`.
//! - `delta` and the announcement coefficient are unconstrained.

use super::{ModelParams, ModelSpec};
use crate::error::{Error, Result};
use crate::model::{BaseParams, MsAcmParams, PolicyParams, TransitionMatrix};

/// Free-parameter names in the order used by both the unconstrained and
/// the natural vectors.
pub fn parameter_names(spec: &ModelSpec) -> Vec<String> {
    let k = spec.k();
    let mut names: Vec<String> = ["omega", "alpha", "beta", "gamma"].iter().map(|s| s.to_string()).collect();
    if spec.has_delta() {
        names.push("delta".into());
    }
    if spec.estimates_phi0() {
        names.push("phi0".into());
    }
    if spec.has_announcement() {
        names.push("phi_announce".into());
    }
    if spec.estimates_increments() {
        for m in 1..k {
            names.push(format!("phi{m}"));
        }
    }
    if spec.estimates_psi() {
        names.push("psi".into());
    }
    if spec.is_switching() {
        for i in 0..k {
            let reference = (i + 1) % k;
            for j in (0..k).filter(|&j| j != reference) {
                names.push(format!("p{i}{j}"));
            }
        }
    }
    if spec.shape_count() == 1 {
        names.push("theta".into());
    } else {
        for j in 0..k {
            names.push(format!("theta{j}"));
        }
    }
    names
}

fn check_shape(spec: &ModelSpec, p: &ModelParams) -> Result<()> {
    let k = spec.k();
    if p.params.k() != k {
        return Err(Error::Transform(format!(
            "parameters have {} regimes, model expects {k}",
            p.params.k()
        )));
    }
    if spec.has_announcement() != p.announce.is_some() {
        return Err(Error::Transform("announcement coefficient presence does not match the model".into()));
    }
    Ok(())
}

fn positive_log(name: &str, v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v.ln())
    } else {
        Err(Error::Transform(format!("{name} = {v} is on or outside the boundary")))
    }
}

pub fn to_unconstrained(spec: &ModelSpec, p: &ModelParams) -> Result<Vec<f64>> {
    check_shape(spec, p)?;
    let params = &p.params;
    let b = &params.base;
    let mut z = vec![positive_log("omega", b.omega)?];
    let persistence = b.alpha + b.beta + 0.5 * b.gamma;
    if !(persistence < 1.0) {
        return Err(Error::Transform(format!("alpha + beta + gamma/2 = {persistence} is not below 1")));
    }
    let slack = 1.0 - persistence;
    z.push(positive_log("alpha", b.alpha)? - slack.ln());
    z.push(positive_log("beta", b.beta)? - slack.ln());
    z.push(positive_log("gamma", 0.5 * b.gamma)? - slack.ln());
    let pol = &params.policy;
    if spec.has_delta() {
        z.push(pol.delta);
    }
    if spec.estimates_phi0() {
        z.push(positive_log("phi0", pol.phi0)?);
    }
    if let Some(a) = p.announce.filter(|_| spec.has_announcement()) {
        z.push(a);
    }
    if spec.estimates_increments() {
        for (m, v) in pol.phi.iter().enumerate() {
            z.push(positive_log(&format!("phi{}", m + 1), *v)?);
        }
    }
    if spec.estimates_psi() {
        if !(pol.psi.abs() < 1.0) {
            return Err(Error::Transform(format!("|psi| = {} is not below 1", pol.psi.abs())));
        }
        z.push(pol.psi.atanh());
    }
    if spec.is_switching() {
        let k = spec.k();
        for i in 0..k {
            let reference = (i + 1) % k;
            let ln_ref = positive_log(&format!("p{i}{reference}"), params.trans.get(i, reference))?;
            for j in (0..k).filter(|&j| j != reference) {
                z.push(positive_log(&format!("p{i}{j}"), params.trans.get(i, j))? - ln_ref);
            }
        }
    }
    if spec.shape_count() == 1 {
        let th = params.theta[0];
        if params.theta.iter().any(|&v| v != th) {
            return Err(Error::Transform("model ties the Gamma shapes but they differ".into()));
        }
        z.push(positive_log("theta", th)?);
    } else {
        for (j, &th) in params.theta.iter().enumerate() {
            z.push(positive_log(&format!("theta{j}"), th)?);
        }
    }
    Ok(z)
}

/// Softmax of `logits` with an implicit extra logit of 0 appended.
fn softmax_with_reference(logits: &[f64]) -> (Vec<f64>, f64) {
    let m = logits.iter().copied().fold(0.0_f64, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - m).exp()).collect();
    let reference = (-m).exp();
    let total = exps.iter().sum::<f64>() + reference;
    (exps.into_iter().map(|e| e / total).collect(), reference / total)
}

pub fn from_unconstrained(spec: &ModelSpec, z: &[f64]) -> Result<ModelParams> {
    let expected = parameter_names(spec).len();
    if z.len() != expected {
        return Err(Error::Transform(format!(
            "unconstrained vector has {} entries, model needs {expected}",
            z.len()
        )));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::Transform("unconstrained vector is not finite".into()));
    }
    let k = spec.k();
    let mut it = z.iter().copied();
    let mut next = || it.next().expect("length checked");
    let omega = next().exp();
    let (shares, _) = softmax_with_reference(&[next(), next(), next()]);
    let base = BaseParams {
        omega,
        alpha: shares[0],
        beta: shares[1],
        gamma: 2.0 * shares[2],
    };
    let delta = if spec.has_delta() { next() } else { 0.0 };
    let phi0 = if spec.estimates_phi0() { next().exp() } else { 0.0 };
    let announce = spec.has_announcement().then(&mut next);
    let phi = if spec.estimates_increments() {
        (1..k).map(|_| next().exp()).collect()
    } else {
        vec![0.0; k - 1]
    };
    let psi = if spec.estimates_psi() { next().tanh() } else { 0.0 };
    let trans = if spec.is_switching() {
        let mut rows = Vec::with_capacity(k);
        for i in 0..k {
            let reference = (i + 1) % k;
            let logits: Vec<f64> = (0..k - 1).map(|_| next()).collect();
            let (probs, p_ref) = softmax_with_reference(&logits);
            let mut row = Vec::with_capacity(k);
            let mut it_p = probs.into_iter();
            for j in 0..k {
                row.push(if j == reference { p_ref } else { it_p.next().expect("k-1 logits") });
            }
            rows.push(row);
        }
        TransitionMatrix::new(rows).map_err(|e| Error::Transform(e.to_string()))?
    } else {
        TransitionMatrix::single()
    };
    let theta = if spec.shape_count() == 1 {
        vec![next().exp(); k]
    } else {
        (0..k).map(|_| next().exp()).collect()
    };
    Ok(ModelParams {
        params: MsAcmParams {
            base,
            policy: PolicyParams {
                delta,
                phi0,
                phi,
                psi,
            },
            trans,
            theta,
        },
        announce,
    })
}

/// Free parameters on their natural scale, ordered as [`parameter_names`].
pub fn natural_vector(spec: &ModelSpec, p: &ModelParams) -> Vec<f64> {
    let params = &p.params;
    let b = &params.base;
    let mut v = vec![b.omega, b.alpha, b.beta, b.gamma];
    if spec.has_delta() {
        v.push(params.policy.delta);
    }
    if spec.estimates_phi0() {
        v.push(params.policy.phi0);
    }
    if spec.has_announcement() {
        v.push(p.announce.unwrap_or(0.0));
    }
    if spec.estimates_increments() {
        v.extend(&params.policy.phi);
    }
    if spec.estimates_psi() {
        v.push(params.policy.psi);
    }
    if spec.is_switching() {
        let k = spec.k();
        for i in 0..k {
            let reference = (i + 1) % k;
            for j in (0..k).filter(|&j| j != reference) {
                v.push(params.trans.get(i, j));
            }
        }
    }
    if spec.shape_count() == 1 {
        v.push(params.theta[0]);
    } else {
        v.extend(&params.theta);
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimation::ModelVariant;

    fn reference() -> ModelParams {
        ModelParams {
            params: MsAcmParams {
                base: BaseParams {
                    omega: 0.853,
                    alpha: 0.142,
                    beta: 0.732,
                    gamma: 0.112,
                },
                policy: PolicyParams {
                    delta: -0.776,
                    phi0: 0.0,
                    phi: vec![6.273],
                    psi: 0.0,
                },
                trans: TransitionMatrix::two_state(0.964, 0.222).unwrap(),
                theta: vec![8.852, 3.271],
            },
            announce: None,
        }
    }

    #[test]
    fn reference_round_trip() {
        let spec = ModelSpec::new(ModelVariant::MsAcm, 2);
        let p = reference();
        let z = to_unconstrained(&spec, &p).unwrap();
        assert_eq!(z.len(), 10);
        let back = from_unconstrained(&spec, &z).unwrap();
        let (a, b) = (natural_vector(&spec, &p), natural_vector(&spec, &back));
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-10, "{x} vs {y}");
        }
        assert_eq!(
            parameter_names(&spec),
            ["omega", "alpha", "beta", "gamma", "delta", "phi1", "p00", "p11", "theta0", "theta1"]
        );
        // Two-regime rows are plain logits of the staying probability.
        assert!((z[6] - (0.964f64 / 0.036).ln()).abs() < 1e-12);
    }

    #[test]
    fn zero_vector_is_admissible() {
        for spec in [
            ModelSpec::new(ModelVariant::MsAcm, 2),
            ModelSpec::new(ModelVariant::MsAcm, 3),
            ModelSpec::new(ModelVariant::Acm, 1).with_announcement(true),
            ModelSpec::new(ModelVariant::Amem, 1),
        ] {
            let n = parameter_names(&spec).len();
            let p = from_unconstrained(&spec, &vec![0.0; n]).unwrap();
            p.params.validate().unwrap();
        }
    }

    #[test]
    fn stationarity_boundary() {
        let spec = ModelSpec::new(ModelVariant::MsAcm, 2);
        let mut p = reference();
        p.params.base.alpha = 0.9999999 - p.params.base.beta - 0.5 * p.params.base.gamma;
        let z = to_unconstrained(&spec, &p).unwrap();
        assert!(z.iter().all(|v| v.is_finite()));
        p.params.base.alpha = 1.0 - p.params.base.beta - 0.5 * p.params.base.gamma;
        assert!(matches!(to_unconstrained(&spec, &p), Err(Error::Transform(_))));
    }

    #[test]
    fn wrong_length_is_rejected() {
        let spec = ModelSpec::new(ModelVariant::MsAcm, 2);
        assert!(from_unconstrained(&spec, &[0.0; 3]).is_err());
        assert!(from_unconstrained(&spec, &[f64::NAN; 10]).is_err());
    }
}
