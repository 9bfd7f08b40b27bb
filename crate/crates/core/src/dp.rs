//! Backward induction on the optimality equation for discrete instances.
//!
//! `Phi_{t-1}(x) = E[max(Phi_t(x), Phi_t(X_t) - f x)]` with `Phi_n(x) = x`.
//! The state is the value currently held (`0` when nothing is held), so the
//! state space is the union of all supports together with `0`.

use serde::Serialize;
use thiserror::Error;

use crate::distributions::{DistError, Instance};

/// Realization cap for exhaustive enumeration.
pub const BRUTE_FORCE_CAP: usize = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DpError {
    #[error("instance has a continuous member; discretize it first")]
    NotDiscrete,
    #[error("value {0} is not a state of the table")]
    UnknownState(f64),
    #[error("{0} realizations exceed the enumeration cap")]
    TooLarge(usize),
    #[error("policy accepted a zero value at step {0}")]
    AcceptedZero(usize),
    #[error("buyback factor must be nonnegative and finite, got {0}")]
    BadFactor(f64),
    #[error(transparent)]
    Dist(#[from] DistError),
}

/// Bellman values `Phi_t(x)` for `t = 0..=n` over the held-value states.
#[derive(Debug, Clone, Serialize)]
pub struct ValueTable {
    pub f: f64,
    pub states: Vec<f64>,
    /// `values[t][k] = Phi_t(states[k])`.
    pub values: Vec<Vec<f64>>,
}

fn state_index(states: &[f64], v: f64) -> Option<usize> {
    states.binary_search_by(|s| s.total_cmp(&v)).ok()
}

/// Per-step atoms as `(state index, mass)` plus the sorted state space.
fn discrete_steps(inst: &Instance) -> Result<(Vec<f64>, Vec<Vec<(usize, f64)>>), DpError> {
    if !inst.is_discrete() {
        return Err(DpError::NotDiscrete);
    }
    let mut states = inst.union_support()?;
    states.push(0.0);
    states.sort_by(f64::total_cmp);
    states.dedup();
    let steps = inst
        .dists
        .iter()
        .map(|d| {
            d.atoms()
                .unwrap()
                .into_iter()
                .map(|(v, p)| (state_index(&states, v).unwrap(), p))
                .collect()
        })
        .collect();
    Ok((states, steps))
}

pub fn solve_bellman(inst: &Instance, f: f64) -> Result<ValueTable, DpError> {
    if !(f.is_finite() && f >= 0.0) {
        return Err(DpError::BadFactor(f));
    }
    let (states, steps) = discrete_steps(inst)?;
    let n = inst.n();
    let m = states.len();
    let mut values = vec![vec![0.0; m]; n + 1];
    values[n].clone_from(&states);
    for t in (1..=n).rev() {
        let (head, tail) = values.split_at_mut(t);
        let next = &tail[0];
        let cur = &mut head[t - 1];
        for k in 0..m {
            let keep = next[k];
            let cost = f * states[k];
            cur[k] = steps[t - 1]
                .iter()
                .map(|&(j, p)| p * keep.max(next[j] - cost))
                .sum();
        }
    }
    Ok(ValueTable { f, states, values })
}

pub fn optimal_value(inst: &Instance, f: f64) -> Result<f64, DpError> {
    Ok(solve_bellman(inst, f)?.phi00())
}

impl ValueTable {
    /// `Phi_0(0)`, the optimal expected net reward.
    pub fn phi00(&self) -> f64 {
        self.values[0][0]
    }

    pub fn n(&self) -> usize {
        self.values.len() - 1
    }

    pub fn value(&self, t: usize, x: f64) -> Result<f64, DpError> {
        let k = state_index(&self.states, x).ok_or(DpError::UnknownState(x))?;
        Ok(self.values[t][k])
    }

    /// Decision after observing step `t` (1-based): accept iff
    /// `Phi_t(obs) - f held > Phi_t(held)`; ties skip.
    pub fn act(&self, t: usize, held: f64, observed: f64) -> Result<bool, DpError> {
        let h = state_index(&self.states, held).ok_or(DpError::UnknownState(held))?;
        let o = state_index(&self.states, observed).ok_or(DpError::UnknownState(observed))?;
        Ok(self.values[t][o] - self.f * held > self.values[t][h])
    }

    /// Same as [`ValueTable::act`] with the opposite tie-break.
    pub fn act_accept_ties(&self, t: usize, held: f64, observed: f64) -> Result<bool, DpError> {
        let h = state_index(&self.states, held).ok_or(DpError::UnknownState(held))?;
        let o = state_index(&self.states, observed).ok_or(DpError::UnknownState(observed))?;
        Ok(observed > 0.0 && self.values[t][o] - self.f * held >= self.values[t][h])
    }
}

/// Exact expected net reward of a deterministic Markov rule
/// `rule(step, held, observed) -> accept`, with `held = 0` meaning empty.
///
/// Propagates the law of the held value forward, so the cost is
/// `O(n * states * support)` rather than exponential in `n`.
pub fn markov_value(
    inst: &Instance,
    f: f64,
    rule: &mut dyn FnMut(usize, f64, f64) -> bool,
) -> Result<f64, DpError> {
    let (states, steps) = discrete_steps(inst)?;
    let mut dist = vec![0.0; states.len()];
    dist[state_index(&states, 0.0).unwrap()] = 1.0;
    let mut cost = 0.0;
    for (i, step) in steps.iter().enumerate() {
        let mut next = vec![0.0; states.len()];
        for (h, &ph) in dist.iter().enumerate() {
            if ph == 0.0 {
                continue;
            }
            for &(o, p) in step {
                let w = ph * p;
                if rule(i + 1, states[h], states[o]) {
                    if states[o] == 0.0 {
                        return Err(DpError::AcceptedZero(i + 1));
                    }
                    cost += w * f * states[h];
                    next[o] += w;
                } else {
                    next[h] += w;
                }
            }
        }
        dist = next;
    }
    let held: f64 = dist.iter().zip(&states).map(|(p, v)| p * v).sum();
    Ok(held - cost)
}

/// Exact expected net reward by enumerating every realization.
pub fn brute_force_value(
    inst: &Instance,
    f: f64,
    rule: &mut dyn FnMut(usize, f64, f64) -> bool,
) -> Result<f64, DpError> {
    if !inst.is_discrete() {
        return Err(DpError::NotDiscrete);
    }
    let atoms: Vec<Vec<(f64, f64)>> = inst.dists.iter().map(|d| d.atoms().unwrap()).collect();
    let total = atoms
        .iter()
        .try_fold(1usize, |acc, a| acc.checked_mul(a.len()))
        .unwrap_or(usize::MAX);
    if total > BRUTE_FORCE_CAP {
        return Err(DpError::TooLarge(total));
    }
    let n = atoms.len();
    let mut idx = vec![0usize; n];
    let mut sum = 0.0;
    loop {
        let mut w = 1.0;
        let mut held = 0.0;
        let mut cost = 0.0;
        for (i, &k) in idx.iter().enumerate() {
            let (v, p) = atoms[i][k];
            w *= p;
            if rule(i + 1, held, v) {
                if v == 0.0 {
                    return Err(DpError::AcceptedZero(i + 1));
                }
                cost += f * held;
                held = v;
            }
        }
        sum += w * (held - cost);
        // odometer increment
        let mut i = n;
        loop {
            if i == 0 {
                return Ok(sum);
            }
            i -= 1;
            idx[i] += 1;
            if idx[i] < atoms[i].len() {
                break;
            }
            idx[i] = 0;
        }
    }
}
