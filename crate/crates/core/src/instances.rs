//! Named instance families: the worst-case constructions and the random
//! families used by the experiments.

use rand::Rng;
use rand::RngCore;
use thiserror::Error;

use crate::distributions::{DistError, Distribution, Instance};
use crate::phi::PhiTables;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InstanceError {
    #[error("buyback factor {0} outside the family's range")]
    FactorRange(f64),
    #[error("degenerate orbit: {0}")]
    DegenerateOrbit(String),
    #[error("multistage coefficient became nonpositive at k = {0}")]
    NonpositiveCoefficient(usize),
    #[error("bounded instance failed validation after {0} attempts")]
    BoundedValidation(usize),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Dist(#[from] DistError),
}

/// `X_1 = 1`, `X_2 = (1+f) Ber(1/(1+f))`.
pub fn two_var_hard(f: f64) -> Result<Instance, InstanceError> {
    if !(f.is_finite() && f > 0.0) {
        return Err(InstanceError::FactorRange(f));
    }
    Ok(Instance::new(vec![
        Distribution::point(1.0),
        Distribution::bernoulli(1.0 + f, 1.0 / (1.0 + f)),
    ])?)
}

/// The maximizer `x* = (f + 2 + sqrt(f(2-f))) / 2` of the three-variable family.
pub fn three_var_x_star(f: f64) -> f64 {
    (f + 2.0 + (f * (2.0 - f)).sqrt()) / 2.0
}

pub fn three_var_hard(f: f64) -> Result<Instance, InstanceError> {
    if !(f > 0.0 && f < 1.0) {
        return Err(InstanceError::FactorRange(f));
    }
    let x = three_var_x_star(f);
    let q3 = (x - 1.0 - f) / ((1.0 + f) * (x - 1.0));
    Ok(Instance::new(vec![
        Distribution::point(1.0),
        Distribution::bernoulli(x, 1.0 / x),
        Distribution::bernoulli(x * (1.0 + f), q3),
    ])?)
}

/// Values `x_i` and probabilities `p_i` of the indifference construction.
pub fn indifference_params(tables: &PhiTables) -> Result<(Vec<f64>, Vec<f64>), InstanceError> {
    let k = &tables.orbit;
    if k.len() < 3 || k[0] != 0.0 || *k.last().unwrap() != 1.0 {
        return Err(InstanceError::DegenerateOrbit(format!("{k:?}")));
    }
    if k.windows(2).any(|w| w[1] <= w[0]) {
        return Err(InstanceError::DegenerateOrbit(format!("not increasing: {k:?}")));
    }
    let n = k.len() - 1;
    let mut x = vec![1.0];
    let mut p = vec![1.0];
    for i in 2..=n {
        p.push((k[i] - k[i - 1]) / k[i]);
        let prev = x[i - 2];
        x.push(prev * k[i] / (k[i] - k[1]));
    }
    Ok((x, p))
}

/// Scaled-Bernoulli instance on which the optimal policy is indifferent at
/// every step; its ratio is `theta_f`.
pub fn indifference_instance(tables: &PhiTables) -> Result<Instance, InstanceError> {
    let (x, p) = indifference_params(tables)?;
    let mut dists = vec![Distribution::point(x[0])];
    for i in 1..x.len() {
        dists.push(Distribution::bernoulli(x[i], p[i]));
    }
    Ok(Instance::new(dists)?)
}

/// Continuous version of an instance: every atom away from zero is spread
/// uniformly over `[v - width, v + width]`.
pub fn jittered(inst: &Instance, width: f64) -> Result<Instance, InstanceError> {
    let dists = inst
        .dists
        .iter()
        .map(|d| match d {
            Distribution::PointMass { value } => Ok(Distribution::Jittered {
                value: *value,
                prob: 1.0,
                width,
            }),
            Distribution::ScaledBernoulli { value, prob } => Ok(Distribution::Jittered {
                value: *value,
                prob: *prob,
                width,
            }),
            other => Err(InstanceError::InvalidParameter(format!(
                "cannot jitter {other:?}"
            ))),
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Instance::new(dists)?)
}

/// Coefficients `a_1 < ... < a_n` of the multistage construction.
pub fn multistage_coefficients(f: f64) -> Result<Vec<f64>, InstanceError> {
    if !(f > 0.0 && f < 0.25) {
        return Err(InstanceError::FactorRange(f));
    }
    let n = (1.0 / f).log2().ceil() as usize;
    let c = f / (1.0 + f);
    let mut a = vec![0.0; n + 1];
    a[n] = 1.0;
    for k in 0..=n - 2 {
        a[n - k - 1] = (1.0 - c * 2f64.powi(k as i32)) * a[n - k];
        if a[n - k - 1] <= 0.0 {
            return Err(InstanceError::NonpositiveCoefficient(k));
        }
    }
    Ok(a[1..].to_vec())
}

pub fn multistage_instance(f: f64) -> Result<Instance, InstanceError> {
    let a = multistage_coefficients(f)?;
    Ok(Instance::new(
        a.into_iter().map(|v| Distribution::bernoulli(v, 0.5)).collect(),
    )?)
}

/// Seven GPD members with `mu ~ U(0,16)`, `sigma ~ U(0,4)`, `xi ~ U(-1,0.5)`.
pub fn random_gpd_instance(rng: &mut dyn RngCore) -> Instance {
    let dists = (0..7)
        .map(|_| {
            let mu = rng.gen_range(0.0..16.0);
            let mut sigma = 0.0;
            while sigma <= 0.0 {
                sigma = rng.gen_range(0.0..4.0);
            }
            let xi = rng.gen_range(-1.0..0.5);
            Distribution::Gpd {
                location: mu,
                scale: sigma,
                shape: xi,
            }
        })
        .collect();
    Instance { dists }
}

/// Random discrete instance whose maximum lies in `[alpha, (1+f) alpha)`.
pub fn bounded_instance(rng: &mut dyn RngCore, alpha: f64, f: f64) -> Result<Instance, InstanceError> {
    if !(alpha > 0.0 && f > 0.0 && alpha.is_finite() && f.is_finite()) {
        return Err(InstanceError::InvalidParameter(format!(
            "alpha = {alpha}, f = {f}"
        )));
    }
    const ATTEMPTS: usize = 100;
    for _ in 0..ATTEMPTS {
        let members = rng.gen_range(3..=5);
        let anchor = rng.gen_range(0..members);
        let dists: Vec<Distribution> = (0..members)
            .map(|i| {
                if i == anchor {
                    Distribution::point(alpha)
                } else {
                    let v = alpha * (1.0 + f * rng.gen::<f64>());
                    let q = rng.gen_range(0.05..=1.0);
                    Distribution::bernoulli(v, q)
                }
            })
            .collect();
        let inst = Instance::new(dists)?;
        if bounded_range_holds(&inst, alpha, f)? {
            return Ok(inst);
        }
    }
    Err(InstanceError::BoundedValidation(ATTEMPTS))
}

/// Enumeration check that `alpha <= X_max < (1+f) alpha` surely.
pub fn bounded_range_holds(inst: &Instance, alpha: f64, f: f64) -> Result<bool, InstanceError> {
    let pmf = inst.max_pmf()?;
    Ok(pmf.iter().all(|(v, _)| *v >= alpha && *v < (1.0 + f) * alpha))
}
