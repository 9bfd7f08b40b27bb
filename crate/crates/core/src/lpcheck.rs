//! Candidate solution of the discrete dual LP built from `(phi, tau)`, and
//! its constraint check.
//!
//! With a dummy variable `X_0 = 0` prepended (`q_0 = 1`) the cumulative
//! masses `r_t = prod_{s>t} (1 - q_s)` split `(0, 1]` into the cells
//! `(r_{t-1}, r_t]`, with `r_{-1} = 0`. Entries are integrals of
//!
//! * `h(t) = phi(t)` for `t <= k1`, `k1^2 phi(k1) / t^2` above;
//! * `g(s, t) = phi(s) tau(s) / t^2` for `t > tau(s)`, zero otherwise
//!
//! over the matching cells. The dummy is worth nothing, so flow out of its
//! cell is a first pick and is folded into `x_{0,t}`.

use serde::Serialize;
use thiserror::Error;

use crate::phi::PhiTables;

pub const MAX_N: usize = 50;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpError {
    #[error("activation probability q_{0} = {1} outside (0, 1]")]
    Probability(usize, f64),
    #[error("r_{0} = 0: degenerate activation probabilities")]
    Degenerate(usize),
    #[error("n = {0} outside 1..={MAX_N}")]
    Size(usize),
}

#[derive(Debug, Clone, Serialize)]
pub struct DualSolution {
    pub n: usize,
    pub f: f64,
    pub theta: f64,
    pub q: Vec<f64>,
    /// `r[t]` for `t = 0..=n`, so `r[n] = 1`.
    pub r: Vec<f64>,
    /// `x0[t-1] = x_{0,t}`.
    pub x0: Vec<f64>,
    /// `x[s-1][t-1] = x_{s,t}` for `s < t`, zero elsewhere.
    pub x: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Violation {
    pub first_pick: f64,
    pub swap: f64,
    pub coverage: f64,
    pub negativity: f64,
}

impl Violation {
    pub fn max(&self) -> f64 {
        self.first_pick
            .max(self.swap)
            .max(self.coverage)
            .max(self.negativity)
    }
}

/// `int_a^b h`.
pub fn int_h(tables: &PhiTables, a: f64, b: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let k1 = tables.k1;
    let low = tables.int_phi(b.min(k1)) - tables.int_phi(a.min(k1));
    let hk = k1 * k1 * tables.phi_unchecked(k1);
    low + hk * (1.0 / a.max(k1) - 1.0 / b.max(k1))
}

pub fn h(tables: &PhiTables, t: f64) -> f64 {
    let k1 = tables.k1;
    if t <= k1 {
        tables.phi_unchecked(t)
    } else {
        k1 * k1 * tables.phi_unchecked(k1) / (t * t)
    }
}

pub fn g(tables: &PhiTables, s: f64, t: f64) -> f64 {
    let tau = tables.tau(s);
    if t <= tau {
        0.0
    } else {
        tables.phi_unchecked(s) * tau / (t * t)
    }
}

/// `int_{s in (a, b]} int_{t in (c, d]} g(s, t)`.
///
/// The inner integral is `phi(s) tau(s) (1/max(c, tau(s)) - 1/d)_+`, a
/// function of `tau(s)` alone, so the outer one runs in `t`-space.
pub fn int_g(tables: &PhiTables, a: f64, b: f64, c: f64, d: f64) -> f64 {
    if b <= a || d <= c {
        return 0.0;
    }
    let sol = &tables.sol;
    let (f, theta, cf) = (sol.f, sol.theta, sol.c_f);
    let y_at = |r: f64| if r <= cf { 0.0 } else { sol.y_unchecked(r.min(1.0)) };
    // tau(s) <= c on s <= y(c); tau(s) >= d beyond y(d)
    let split = y_at(c);
    let end = y_at(d).min(b);
    let weight = |tau: f64| theta * tau / ((1.0 + f) * tau - f);
    let mut total = 0.0;
    let (a1, b1) = (a, split.min(end));
    if b1 > a1 {
        let k = 1.0 / c - 1.0 / d;
        total += tables.int_tau_kernel(a1, b1, &|tau| weight(tau) * k);
    }
    let (a2, b2) = (a.max(split), end);
    if b2 > a2 {
        total += tables.int_tau_kernel(a2, b2, &|tau| weight(tau) * (1.0 / tau - 1.0 / d).max(0.0));
    }
    total
}

pub fn build_dual_solution(tables: &PhiTables, q: &[f64]) -> Result<DualSolution, LpError> {
    let n = q.len();
    if n == 0 || n > MAX_N {
        return Err(LpError::Size(n));
    }
    for (i, p) in q.iter().enumerate() {
        if !(*p > 0.0 && *p <= 1.0) {
            return Err(LpError::Probability(i + 1, *p));
        }
    }
    let mut r = vec![1.0; n + 1];
    for t in (0..n).rev() {
        r[t] = r[t + 1] * (1.0 - q[t]);
    }
    for (t, v) in r.iter().enumerate().skip(1) {
        if *v <= 0.0 {
            return Err(LpError::Degenerate(t));
        }
    }
    let x0 = (1..=n)
        .map(|t| int_h(tables, r[t - 1], r[t]) + int_g(tables, 0.0, r[0], r[t - 1], r[t]))
        .collect();
    let mut x = vec![vec![0.0; n]; n];
    for s in 1..=n {
        for t in s + 1..=n {
            x[s - 1][t - 1] = int_g(tables, r[s - 1], r[s], r[t - 1], r[t]);
        }
    }
    Ok(DualSolution {
        n,
        f: tables.f(),
        theta: tables.theta(),
        q: q.to_vec(),
        r,
        x0,
        x,
    })
}

/// Largest violation of each constraint family at coverage `theta`.
pub fn check_constraints(sol: &DualSolution, theta: f64) -> Violation {
    let n = sol.n;
    let (q, x0, x) = (&sol.q, &sol.x0, &sol.x);
    let inflow = |t: usize| -> f64 { x0[t - 1] + (1..t).map(|i| x[i - 1][t - 1]).sum::<f64>() };
    let outflow = |s: usize, upto: usize| -> f64 { (s + 1..upto).map(|j| x[s - 1][j - 1]).sum() };

    let mut first_pick = f64::NEG_INFINITY;
    let mut taken = 0.0;
    for t in 1..=n {
        first_pick = first_pick.max(x0[t - 1] - q[t - 1] * (1.0 - taken));
        taken += x0[t - 1];
    }
    let mut swap = f64::NEG_INFINITY;
    for s in 1..=n {
        for t in s + 1..=n {
            swap = swap.max(x[s - 1][t - 1] - q[t - 1] * (inflow(s) - outflow(s, t)));
        }
    }
    let mut coverage = f64::NEG_INFINITY;
    for t in 1..=n {
        let qhat = sol.r[t] - sol.r[t - 1];
        coverage = coverage.max(theta * qhat - (inflow(t) - (1.0 + sol.f) * outflow(t, n + 1)));
    }
    let negativity = x0
        .iter()
        .chain(x.iter().flatten())
        .map(|v| -v)
        .fold(f64::NEG_INFINITY, f64::max);
    Violation {
        first_pick,
        swap,
        coverage,
        negativity,
    }
}

/// Largest violation over all constraints; positive means infeasible.
pub fn check_feasibility(sol: &DualSolution, theta: f64) -> f64 {
    check_constraints(sol, theta).max()
}
