//! Selection density `phi`, the initial-threshold law `G`, and the orbit of
//! `0` under `tau`.
//!
//! Integrals of `phi` are taken in `t`-space through the substitution
//! `s = y(t)`, which turns `phi(s) ds` into
//! `theta / (1 + f) * y'(t) / (t - c_f) dt`. The interpolant of
//! [`YSolution`] is linear in `(t - c_f)^2`, so this integrand is constant
//! on every cell and bounded at `c_f`, where `phi` itself diverges.

use rand::Rng;
use rand::RngCore;
use thiserror::Error;

use crate::ode::{SolveError, YSolution};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PhiError {
    #[error("argument {0} outside the domain")]
    Domain(f64),
    #[error("orbit did not reach y(1) within {0} steps")]
    OrbitOverflow(usize),
    #[error("solution is not successful")]
    Unsuccessful,
    #[error(transparent)]
    Solve(#[from] SolveError),
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`, 8 points.
const GL8: [(f64, f64); 8] = [
    (-0.960_289_856_497_536_2, 0.101_228_536_290_376_26),
    (-0.796_666_477_413_626_7, 0.222_381_034_453_374_47),
    (-0.525_532_409_916_329, 0.313_706_645_877_887_3),
    (-0.183_434_642_495_649_8, 0.362_683_783_378_362),
    (0.183_434_642_495_649_8, 0.362_683_783_378_362),
    (0.525_532_409_916_329, 0.313_706_645_877_887_3),
    (0.796_666_477_413_626_7, 0.222_381_034_453_374_47),
    (0.960_289_856_497_536_2, 0.101_228_536_290_376_26),
];

fn gl8(g: &dyn Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
    let (mid, half) = (0.5 * (lo + hi), 0.5 * (hi - lo));
    half * GL8.iter().map(|(x, w)| w * g(mid + half * x)).sum::<f64>()
}

pub const PHI_GRID_POINTS: usize = 8192;

/// Derived tables for a solved `y_f`.
#[derive(Debug, Clone)]
pub struct PhiTables {
    pub sol: YSolution,
    pub k1: f64,
    /// `int_0^{Y_j} phi` at every knot value `Y_j`.
    prefix: Vec<f64>,
    /// Raw `G(k1) - 1` before normalization.
    pub g_discrepancy: f64,
    g_norm: f64,
    pub orbit: Vec<f64>,
}

impl PhiTables {
    pub fn new(sol: YSolution) -> Result<Self, PhiError> {
        if !sol.success {
            return Err(PhiError::Unsuccessful);
        }
        let ts = sol.knots_t();
        let w = sol.theta / (1.0 + sol.f);
        let mut prefix = Vec::with_capacity(ts.len());
        prefix.push(0.0);
        for j in 0..ts.len() - 1 {
            // y'/(t - c) = 2 dy/dw is constant on the cell
            let cell = 2.0 * sol.cell_slope_w(j) * (ts[j + 1] - ts[j]);
            prefix.push(prefix[j] + w * cell);
        }
        let k1 = sol.c_f;
        let mut tables = PhiTables {
            sol,
            k1,
            prefix,
            g_discrepancy: 0.0,
            g_norm: 1.0,
            orbit: Vec::new(),
        };
        let g_raw = tables.g_raw(k1);
        tables.g_discrepancy = g_raw - 1.0;
        tables.g_norm = g_raw;
        tables.orbit = tables.compute_orbit()?;
        Ok(tables)
    }

    pub fn theta(&self) -> f64 {
        self.sol.theta
    }

    pub fn f(&self) -> f64 {
        self.sol.f
    }

    pub fn y1(&self) -> f64 {
        self.sol.y1
    }

    pub fn tau(&self, s: f64) -> f64 {
        self.sol.tau_unchecked(s)
    }

    pub fn phi(&self, t: f64) -> Result<f64, PhiError> {
        if !(t > 0.0 && t <= 1.0 + 1e-12) {
            return Err(PhiError::Domain(t));
        }
        Ok(self.phi_unchecked(t))
    }

    pub(crate) fn phi_unchecked(&self, t: f64) -> f64 {
        let f = self.sol.f;
        self.sol.theta / ((1.0 + f) * self.tau(t) - f)
    }

    /// `int_0^u phi(s) ds`.
    pub fn int_phi(&self, u: f64) -> f64 {
        if u <= 0.0 {
            return 0.0;
        }
        let sol = &self.sol;
        let ys = sol.knots_y();
        let ts = sol.knots_t();
        let n = ys.len();
        if u >= sol.y1 {
            return self.prefix[n - 1] + sol.theta * (u - sol.y1);
        }
        let j = ys.partition_point(|v| *v <= u).saturating_sub(1).min(n - 2);
        let t = self.tau(u);
        let w = sol.theta / (1.0 + sol.f);
        self.prefix[j] + w * 2.0 * sol.cell_slope_w(j) * (t - ts[j])
    }

    fn g_raw(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        t * self.phi_unchecked(t) + self.int_phi(t)
    }

    /// Normalized CDF of the initial quantile threshold on `(0, k1]`.
    pub fn g_cdf(&self, t: f64) -> f64 {
        if t >= self.k1 {
            return 1.0;
        }
        (self.g_raw(t) / self.g_norm).clamp(0.0, 1.0)
    }

    /// `G` before normalization.
    pub fn g_unnormalized(&self, t: f64) -> f64 {
        self.g_raw(t)
    }

    /// Inverse-transform draw from `G`.
    pub fn sample_initial_threshold(&self, rng: &mut dyn RngCore) -> f64 {
        let u: f64 = 1.0 - rng.gen::<f64>();
        self.g_inverse(u)
    }

    pub fn g_inverse(&self, u: f64) -> f64 {
        let (mut lo, mut hi) = (0.0, self.k1);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.g_cdf(mid) >= u {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi
    }

    /// `int_{u_lo}^{u_hi} K(tau(u)) du`, with `K` smooth on every cell.
    ///
    /// In `t`-space this is `int K(t) y'(t) dt`; the flat region above
    /// `y(1)` contributes `K(1)` per unit length.
    pub fn int_tau_kernel(&self, u_lo: f64, u_hi: f64, k: &dyn Fn(f64) -> f64) -> f64 {
        if u_hi <= u_lo {
            return 0.0;
        }
        let sol = &self.sol;
        let mut total = 0.0;
        if u_hi > sol.y1 {
            total += k(1.0) * (u_hi - u_lo.max(sol.y1));
        }
        let (a, b) = (u_lo.max(0.0), u_hi.min(sol.y1));
        if b <= a {
            return total;
        }
        let (ta, tb) = (self.tau(a), self.tau(b));
        total + self.int_t_space(ta, tb, &|t| k(t) * sol.interp_slope(t))
    }

    /// Per-cell Gauss-Legendre on `[ta, tb]` over the knot partition.
    pub(crate) fn int_t_space(&self, ta: f64, tb: f64, g: &dyn Fn(f64) -> f64) -> f64 {
        let ts = self.sol.knots_t();
        let n = ts.len();
        let mut j = ts.partition_point(|v| *v <= ta).saturating_sub(1).min(n - 2);
        let mut total = 0.0;
        let mut lo = ta;
        while lo < tb && j < n - 1 {
            let hi = ts[j + 1].min(tb);
            if hi > lo {
                total += gl8(g, lo, hi);
            }
            lo = hi;
            j += 1;
        }
        total
    }

    fn compute_orbit(&self) -> Result<Vec<f64>, PhiError> {
        let cap = (2.0 + 1.0 / self.sol.f).ceil() as usize + 2;
        let mut orbit = vec![0.0];
        let mut k = 0.0;
        while k < self.sol.y1 - 1e-9 {
            if orbit.len() > cap {
                return Err(PhiError::OrbitOverflow(cap));
            }
            k = self.tau(k);
            orbit.push(k);
        }
        orbit.push(1.0);
        Ok(orbit)
    }

    /// `(t, phi(t))` on a log-spaced grid over `(0, 1]`.
    pub fn phi_grid(&self) -> Vec<(f64, f64)> {
        let lo: f64 = 1e-12;
        (0..PHI_GRID_POINTS)
            .map(|i| {
                let t = lo * (1.0 / lo).powf(i as f64 / (PHI_GRID_POINTS - 1) as f64);
                (t, self.phi_unchecked(t.min(1.0)))
            })
            .collect()
    }

    /// `(t, G(t))` on the same grid restricted to `(0, k1]`.
    pub fn g_grid(&self) -> Vec<(f64, f64)> {
        self.phi_grid()
            .into_iter()
            .filter(|(t, _)| *t <= self.k1)
            .map(|(t, _)| (t, self.g_cdf(t)))
            .collect()
    }
}
