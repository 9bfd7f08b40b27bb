//! Instance transformations: geometric discretization, splitting discrete
//! members into scaled Bernoulli blocks, and sorting by value.

use thiserror::Error;

use crate::distributions::{DistError, Distribution, Instance};

pub const DEFAULT_DELTA: f64 = 0.01;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReduceError {
    #[error("delta {0} outside (0, 0.5)")]
    Delta(f64),
    #[error("cap search failed: {0}")]
    CapSearch(String),
    #[error("member {0} has Pr[X <= v] = 0 at a support point")]
    Degenerate(usize),
    #[error("member {0} is not of the required kind")]
    WrongKind(usize),
    #[error(transparent)]
    Dist(#[from] DistError),
}

/// The shared value grid `delta (1+delta)^k M` for `k = 0..=K`, capped at
/// the first value at or above `M'`.
pub fn discretization_grid(inst: &Instance, delta: f64) -> Result<Vec<f64>, ReduceError> {
    if !(delta > 0.0 && delta < 0.5) {
        return Err(ReduceError::Delta(delta));
    }
    let m = inst.expected_max()?;
    if !(m > 0.0 && m.is_finite()) {
        return Err(ReduceError::CapSearch(format!("E[max] = {m}")));
    }
    let target = delta * m;
    // smallest M' with E[(X_max - M')_+] <= delta M
    let (mut lo, mut hi) = (0.0, m.max(1e-300));
    let mut guard = 0;
    while inst.expected_excess(hi)? > target {
        hi *= 2.0;
        guard += 1;
        if guard > 200 {
            return Err(ReduceError::CapSearch("tail does not vanish".into()));
        }
    }
    while hi - lo > target * 1e-3 {
        let mid = 0.5 * (lo + hi);
        if inst.expected_excess(mid)? > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let cap = hi.max(target);
    let kmax = ((cap / target).ln() / delta.ln_1p()).ceil().max(0.0) as i32;
    Ok((0..=kmax).map(|k| target * (1.0 + delta).powi(k)).collect())
}

/// Round every member's mass up onto the shared geometric grid; mass above
/// the top grid value goes to the top value. Exact zeros stay at zero.
pub fn discretize(inst: &Instance, delta: f64) -> Result<Instance, ReduceError> {
    let grid = discretization_grid(inst, delta)?;
    let top = grid.len() - 1;
    let mut out = Vec::with_capacity(inst.n());
    for d in &inst.dists {
        let mut mass = vec![0.0; grid.len()];
        let zero = d.cdf(0.0);
        let mut prev = zero;
        for (k, g) in grid.iter().enumerate() {
            let c = if k == top { 1.0 } else { d.cdf(*g) };
            mass[k] = (c - prev).max(0.0);
            prev = c.max(prev);
        }
        let mut support = Vec::new();
        let mut probs = Vec::new();
        if zero > 0.0 {
            support.push(0.0);
            probs.push(zero);
        }
        for (k, m) in mass.into_iter().enumerate() {
            if m > 0.0 {
                support.push(grid[k]);
                probs.push(m);
            }
        }
        let s: f64 = probs.iter().sum();
        probs.iter_mut().for_each(|p| *p /= s);
        out.push(Distribution::discrete(support, probs)?);
    }
    Ok(Instance::new(out)?)
}

/// Replace each discrete member by consecutive scaled Bernoullis, ascending
/// in value, with `q_j = Pr[X = v_j] / Pr[X <= v_j]`.
pub fn split_to_bernoulli(inst: &Instance) -> Result<Instance, ReduceError> {
    let mut out = Vec::new();
    for (i, d) in inst.dists.iter().enumerate() {
        let atoms = d.atoms().ok_or(ReduceError::WrongKind(i))?;
        let mut cum = 0.0;
        let before = out.len();
        for (v, p) in atoms {
            cum += p;
            if v == 0.0 {
                continue;
            }
            if cum <= 0.0 {
                return Err(ReduceError::Degenerate(i));
            }
            out.push(Distribution::bernoulli(v, (p / cum).min(1.0)));
        }
        if out.len() == before {
            // an all-zero member still occupies a slot
            out.push(Distribution::bernoulli(0.0, 0.0));
        }
    }
    Ok(Instance::new(out)?)
}

/// Stable sort of scaled-Bernoulli members by value.
pub fn monotonize(inst: &Instance) -> Result<Instance, ReduceError> {
    let mut dists = inst.dists.clone();
    for (i, d) in dists.iter().enumerate() {
        if !matches!(d, Distribution::ScaledBernoulli { .. }) {
            return Err(ReduceError::WrongKind(i));
        }
    }
    let key = |d: &Distribution| match d {
        Distribution::ScaledBernoulli { value, .. } => *value,
        _ => unreachable!(),
    };
    dists.sort_by(|a, b| key(a).total_cmp(&key(b)));
    Ok(Instance::new(dists)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_example() {
        let inst = Instance::new(vec![Distribution::discrete(
            vec![0.0, 1.0, 2.0],
            vec![0.5, 0.25, 0.25],
        )
        .unwrap()])
        .unwrap();
        let out = split_to_bernoulli(&inst).unwrap();
        assert_eq!(out.n(), 2);
        match (&out.dists[0], &out.dists[1]) {
            (
                Distribution::ScaledBernoulli { value: v1, prob: q1 },
                Distribution::ScaledBernoulli { value: v2, prob: q2 },
            ) => {
                assert_eq!((*v1, *v2), (1.0, 2.0));
                assert!((q1 - 1.0 / 3.0).abs() < 1e-15);
                assert!((q2 - 0.25).abs() < 1e-15);
            }
            _ => panic!(),
        }
    }

    #[test]
    fn point_splits_to_sure_bernoulli() {
        let inst = Instance::new(vec![Distribution::point(3.0)]).unwrap();
        let out = split_to_bernoulli(&inst).unwrap();
        assert_eq!(out.dists, vec![Distribution::bernoulli(3.0, 1.0)]);
    }

    #[test]
    fn monotonize_orders() {
        let inst = Instance::new(vec![
            Distribution::bernoulli(3.0, 0.5),
            Distribution::bernoulli(1.0, 0.5),
            Distribution::bernoulli(2.0, 0.5),
        ])
        .unwrap();
        let out = monotonize(&inst).unwrap();
        let vals: Vec<f64> = out
            .dists
            .iter()
            .map(|d| match d {
                Distribution::ScaledBernoulli { value, .. } => *value,
                _ => 0.0,
            })
            .collect();
        assert_eq!(vals, vec![1.0, 2.0, 3.0]);
        assert_eq!(monotonize(&out).unwrap(), out);
    }
}
