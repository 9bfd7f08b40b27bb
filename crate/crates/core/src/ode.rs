//! Backward construction of the Y-function and the bisection for `theta_f`.
//!
//! For a trial `theta` the solution is known in closed form on the initial
//! segment `[2 - 1/theta, 1]`. Each further segment is obtained from the
//! previous one by integrating the derivative of `y(y(t))` backward with
//! the composite trapezoid rule, so the knots of segment `k + 1` are the
//! images `y(t_j)` of the knots of segment `k`. The construction stops once
//! a segment reaches below `c_f = f / (1 + f)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_GRID: usize = 4096;
pub const DEFAULT_TOL_THETA: f64 = 1e-7;
pub const TOL_Y_CF: f64 = 1e-6;
pub const TOL_SLOPE: f64 = 1e-9;
const MAX_BISECTION: usize = 200;
const POLISH_STEPS: usize = 40;
const TOL_POLISH: f64 = 1e-13;
/// Above this buyback factor the closed form is used without bisection.
const CLOSED_FORM_ONLY: f64 = 50.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("argument {0} outside the domain")]
    Domain(f64),
    #[error("bisection found no admissible theta after {iterations} iterations (last outcome: {last})")]
    NoSignChange { iterations: usize, last: String },
    #[error("corrupt solution: {0}")]
    Corrupt(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FailureReason {
    DerivativeCondition,
    NonMonotone,
    BreakpointOverflow,
    YPositiveAtCf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SolveOutcome {
    Success { y_at_cf: f64 },
    Failure { reason: FailureReason },
}

impl SolveOutcome {
    pub fn is_success(&self) -> bool {
        matches!(self, SolveOutcome::Success { .. })
    }
}

/// Knots `(t, y, y')` with `t` strictly increasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Segment {
    pub t: Vec<f64>,
    pub y: Vec<f64>,
    pub yp: Vec<f64>,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn lo(&self) -> f64 {
        self.t[0]
    }

    pub fn hi(&self) -> f64 {
        *self.t.last().unwrap()
    }

    /// Cubic Hermite value from the stored knot values and derivatives.
    fn hermite(&self, x: f64) -> f64 {
        let j = self
            .t
            .partition_point(|v| *v <= x)
            .saturating_sub(1)
            .min(self.len() - 2);
        let h = self.t[j + 1] - self.t[j];
        if h <= 0.0 {
            return self.y[j];
        }
        let u = (x - self.t[j]) / h;
        let (u2, u3) = (u * u, u * u * u);
        (2.0 * u3 - 3.0 * u2 + 1.0) * self.y[j]
            + (u3 - 2.0 * u2 + u) * h * self.yp[j]
            + (-2.0 * u3 + 3.0 * u2) * self.y[j + 1]
            + (u3 - u2) * h * self.yp[j + 1]
    }

    /// Linear interpolation of `y` (and `y'`) inside the segment.
    fn interp(&self, x: f64) -> (f64, f64) {
        let j = self
            .t
            .partition_point(|v| *v <= x)
            .saturating_sub(1)
            .min(self.len() - 2);
        let (t0, t1) = (self.t[j], self.t[j + 1]);
        let w = if t1 > t0 { (x - t0) / (t1 - t0) } else { 0.0 };
        (
            self.y[j] + w * (self.y[j + 1] - self.y[j]),
            self.yp[j] + w * (self.yp[j + 1] - self.yp[j]),
        )
    }
}

fn sq(x: f64) -> f64 {
    x * x
}

pub fn c_f(f: f64) -> f64 {
    f / (1.0 + f)
}

pub fn theta_upper(f: f64) -> f64 {
    (1.0 + f) / (1.0 + 2.0 * f)
}

fn check_f(f: f64) -> Result<(), SolveError> {
    if !(f.is_finite() && f > 0.0) {
        return Err(SolveError::InvalidParameter(format!(
            "buyback factor must be positive and finite, got {f}"
        )));
    }
    Ok(())
}

/// The closed-form top piece on `[2 - 1/theta, 1]`, sampled on a uniform grid.
pub fn initial_segment(f: f64, theta: f64, grid_n: usize) -> Result<Segment, SolveError> {
    check_f(f)?;
    if grid_n < 64 {
        return Err(SolveError::InvalidParameter(format!(
            "grid_n must be at least 64, got {grid_n}"
        )));
    }
    let r1 = 2.0 - 1.0 / theta;
    if !(theta.is_finite() && r1 < 1.0) {
        return Err(SolveError::InvalidParameter(format!(
            "2 - 1/theta must be below 1 (theta = {theta})"
        )));
    }
    let c = c_f(f);
    let base = 1.0 - 1.0 / theta + c;
    let mut seg = Segment {
        t: Vec::with_capacity(grid_n),
        y: Vec::with_capacity(grid_n),
        yp: Vec::with_capacity(grid_n),
    };
    let h = (1.0 - r1) / (grid_n - 1) as f64;
    for j in 0..grid_n {
        let t = if j + 1 == grid_n { 1.0 } else { r1 + h * j as f64 };
        seg.t.push(t);
        seg.y.push(base + (t - c) * (t - c) / (1.0 - c));
        seg.yp.push(2.0 * (t - c) / (1.0 - c));
    }
    // pin y(1) to its defining value
    *seg.y.last_mut().unwrap() = r1;
    Ok(seg)
}

fn slope_violation(c: f64, seg: &Segment) -> bool {
    seg.t
        .iter()
        .zip(&seg.y)
        .zip(&seg.yp)
        .any(|((&t, &y), &yp)| t > c && y > 0.0 && yp < y / (t - c) - TOL_SLOPE)
}

/// One backward step: the segment on `[y(lo), lo]` from `prev` on `[lo, hi]`.
pub fn extend_segment(f: f64, prev: &Segment) -> Result<Segment, FailureReason> {
    let c = c_f(f);
    let n = prev.len();
    if n < 2 || prev.hi() <= prev.lo() {
        return Ok(Segment::default());
    }
    debug_assert!(prev.lo() > c, "extension requires a segment above c_f");
    if slope_violation(c, prev) {
        return Err(FailureReason::DerivativeCondition);
    }
    let integrand: Vec<f64> = (0..n)
        .map(|j| {
            let (x, y, yp) = (prev.t[j], prev.y[j], prev.yp[j]);
            let d = x - c;
            (y - c) / d * (2.0 * yp - y / d)
        })
        .collect();
    let top = prev.y[0];
    let mut vals = vec![0.0; n];
    let mut acc = 0.0;
    vals[n - 1] = top;
    for j in (0..n - 1).rev() {
        acc += 0.5 * (prev.t[j + 1] - prev.t[j]) * (integrand[j] + integrand[j + 1]);
        vals[j] = top - acc;
    }
    let derivs: Vec<f64> = (0..n)
        .map(|j| {
            let (x, y, yp) = (prev.t[j], prev.y[j], prev.yp[j]);
            let d = x - c;
            (y - c) / d * (2.0 - y / (yp * d))
        })
        .collect();
    let seg = Segment {
        t: prev.y.clone(),
        y: vals,
        yp: derivs,
    };
    // y has its minimum at c_f, so only knots above c_f must increase
    let start = seg.t.partition_point(|s| *s <= c);
    if seg.y[start..].windows(2).any(|w| w[1] <= w[0]) || seg.yp.iter().any(|v| !v.is_finite()) {
        return Err(FailureReason::NonMonotone);
    }
    Ok(seg)
}

/// Everything produced by a single trial `theta`.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub theta: f64,
    pub segments: Vec<Segment>,
    pub breakpoints: Vec<f64>,
    /// `y(c_f)`, `None` when construction failed before reaching `c_f`.
    pub y_at_cf: Option<f64>,
    pub outcome: SolveOutcome,
}

pub fn breakpoint_cap(f: f64) -> usize {
    (1.0 + 1.0 / f).ceil() as usize + 2
}

pub fn integrate_theta(f: f64, theta: f64, grid_n: usize) -> Result<Trajectory, SolveError> {
    let c = c_f(f);
    let init = initial_segment(f, theta, grid_n)?;
    let mut breakpoints = vec![1.0, init.lo()];
    let mut segments = vec![init];
    let fail = |segments, breakpoints, reason| {
        Ok(Trajectory {
            theta,
            segments,
            breakpoints,
            y_at_cf: None,
            outcome: SolveOutcome::Failure { reason },
        })
    };
    if slope_violation(c, &segments[0]) {
        return fail(segments, breakpoints, FailureReason::DerivativeCondition);
    }
    let cap = breakpoint_cap(f);
    while segments.last().unwrap().lo() > c {
        if segments.len() >= cap {
            return fail(segments, breakpoints, FailureReason::BreakpointOverflow);
        }
        match extend_segment(f, segments.last().unwrap()) {
            Ok(seg) if seg.len() >= 2 => {
                if slope_violation(c, &seg) {
                    return fail(segments, breakpoints, FailureReason::DerivativeCondition);
                }
                breakpoints.push(seg.lo());
                segments.push(seg);
            }
            Ok(_) => return fail(segments, breakpoints, FailureReason::NonMonotone),
            Err(reason) => return fail(segments, breakpoints, reason),
        }
    }
    let y_c = if segments.len() == 1 {
        1.0 - 1.0 / theta + c
    } else {
        segments.last().unwrap().hermite(c)
    };
    let outcome = if y_c > 0.0 {
        SolveOutcome::Failure {
            reason: FailureReason::YPositiveAtCf,
        }
    } else {
        SolveOutcome::Success { y_at_cf: y_c }
    };
    Ok(Trajectory {
        theta,
        segments,
        breakpoints,
        y_at_cf: Some(y_c),
        outcome,
    })
}

pub fn solve_for_theta(f: f64, theta: f64, grid_n: usize) -> Result<SolveOutcome, SolveError> {
    Ok(integrate_theta(f, theta, grid_n)?.outcome)
}

/// `theta_f` in closed form where one is known.
pub fn closed_form_theta(f: f64) -> Option<f64> {
    if f >= 1.0 {
        Some(theta_upper(f))
    } else if f >= 1.0 / 3.0 {
        let s = (f * (2.0 - f)).sqrt();
        Some((1.0 + f) * (s + 1.0) / ((1.0 + f) * s + 3.0 * f + 1.0))
    } else {
        None
    }
}

/// Closed-form `y_f(t)` on `[c_f, 1]` for `f >= 1/3`.
pub fn closed_form_y(f: f64, t: f64) -> Option<f64> {
    let c = c_f(f);
    if f >= 1.0 {
        return Some((1.0 + f) * (t - c) * (t - c));
    }
    if f < 1.0 / 3.0 {
        return None;
    }
    let s = (f * (2.0 - f)).sqrt();
    let a = f * (1.0 - s).powi(2) / ((1.0 + f) * (1.0 - f).powi(2));
    let y1 = 2.0 - 1.0 / closed_form_theta(f)?;
    if t >= y1 {
        Some((t - c) * (t - c) / (1.0 - c) - a)
    } else {
        let g = (t + a).sqrt() - (c + a).sqrt();
        Some(((1.0 + f) / (t + a)).sqrt() * ((t - c) * (t - c) - c * g * g))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct YSolutionData {
    f: f64,
    theta: f64,
    c_f: f64,
    y1: f64,
    breakpoints: Vec<f64>,
    segments: Vec<Segment>,
    success: bool,
    y_at_cf: f64,
}

/// A complete solution on `[c_f, 1]` with `y(c_f) = 0`.
///
/// `segments[k]` covers `[r_{k+1}, r_k]`; the last one is truncated at
/// `c_f`. The flattened knot arrays drive evaluation: on each cell `y` is
/// linear in `w = (t - c_f)^2`, which keeps it monotone with an exact
/// inverse and reproduces `y'(c_f) = 0`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "YSolutionData", into = "YSolutionData")]
pub struct YSolution {
    pub f: f64,
    pub c_f: f64,
    pub theta: f64,
    pub y1: f64,
    pub breakpoints: Vec<f64>,
    pub segments: Vec<Segment>,
    pub success: bool,
    /// `y(c_f)` of the accepted trajectory before the end correction.
    pub y_at_cf: f64,
    knots_t: Vec<f64>,
    knots_y: Vec<f64>,
}

impl From<YSolution> for YSolutionData {
    fn from(s: YSolution) -> Self {
        YSolutionData {
            f: s.f,
            theta: s.theta,
            c_f: s.c_f,
            y1: s.y1,
            breakpoints: s.breakpoints,
            segments: s.segments,
            success: s.success,
            y_at_cf: s.y_at_cf,
        }
    }
}

impl TryFrom<YSolutionData> for YSolution {
    type Error = SolveError;

    fn try_from(d: YSolutionData) -> Result<Self, SolveError> {
        YSolution::from_parts(d.f, d.theta, d.breakpoints, d.segments, d.success, d.y_at_cf)
    }
}

impl YSolution {
    fn from_parts(
        f: f64,
        theta: f64,
        breakpoints: Vec<f64>,
        segments: Vec<Segment>,
        success: bool,
        y_at_cf: f64,
    ) -> Result<Self, SolveError> {
        check_f(f)?;
        if segments.is_empty() || segments.iter().any(|s| s.len() < 2) {
            return Err(SolveError::Corrupt("empty segment".into()));
        }
        for s in &segments {
            if s.y.len() != s.len() || s.yp.len() != s.len() {
                return Err(SolveError::Corrupt("ragged segment".into()));
            }
        }
        let c = c_f(f);
        let mut knots_t: Vec<f64> = Vec::new();
        let mut knots_y: Vec<f64> = Vec::new();
        for seg in segments.iter().rev() {
            for j in 0..seg.len() {
                if knots_t.last().is_some_and(|&l| seg.t[j] <= l) {
                    continue;
                }
                knots_t.push(seg.t[j]);
                knots_y.push(seg.y[j]);
            }
        }
        if knots_t[0] != c || knots_y[0] != 0.0 || *knots_t.last().unwrap() != 1.0 {
            return Err(SolveError::Corrupt("knots must run from (c_f, 0) to t = 1".into()));
        }
        if knots_y.windows(2).any(|w| w[1] <= w[0]) {
            return Err(SolveError::Corrupt("knot values not strictly increasing".into()));
        }
        Ok(YSolution {
            f,
            c_f: c,
            theta,
            y1: *knots_y.last().unwrap(),
            breakpoints,
            segments,
            success,
            y_at_cf,
            knots_t,
            knots_y,
        })
    }

    /// Assemble a solution from an accepted trajectory.
    ///
    /// The final segment receives an additive linear correction vanishing
    /// at its top breakpoint so that `y(c_f) = 0` holds exactly, and is
    /// truncated at `c_f`.
    pub fn from_trajectory(f: f64, traj: &Trajectory) -> Result<Self, SolveError> {
        let y_c = traj
            .y_at_cf
            .ok_or_else(|| SolveError::Corrupt("trajectory did not reach c_f".into()))?;
        let c = c_f(f);
        let mut segments = traj.segments.clone();
        let last = segments.last_mut().unwrap();
        let r_top = last.hi();
        let slope = y_c / (r_top - c);
        for j in 0..last.len() {
            last.y[j] -= slope * (r_top - last.t[j]);
            last.yp[j] += slope;
        }
        let (_, yp_c) = last.interp(c);
        let mut t = vec![c];
        let mut y = vec![0.0];
        let mut yp = vec![yp_c.max(0.0)];
        for j in 0..last.len() {
            if last.t[j] > c && last.y[j] > *y.last().unwrap() {
                t.push(last.t[j]);
                y.push(last.y[j]);
                yp.push(last.yp[j]);
            }
        }
        if t.len() >= 2 {
            *last = Segment { t, y, yp };
        } else if segments.len() > 1 {
            // the final piece collapsed onto c_f: pin the segment above to it
            segments.pop();
            let seg = segments.last_mut().unwrap();
            seg.t[0] = c;
            seg.y[0] = 0.0;
        } else {
            return Err(SolveError::Corrupt("solution collapsed at c_f".into()));
        }
        YSolution::from_parts(
            f,
            traj.theta,
            traj.breakpoints.clone(),
            segments,
            true,
            y_c,
        )
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("solution serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, SolveError> {
        serde_json::from_str(s).map_err(|e| SolveError::Corrupt(e.to_string()))
    }

    /// Flattened ascending knot abscissae, starting at `c_f`.
    pub fn knots_t(&self) -> &[f64] {
        &self.knots_t
    }

    /// Knot values, starting at `0` and ending at `y(1)`.
    pub fn knots_y(&self) -> &[f64] {
        &self.knots_y
    }

    fn cell_of_t(&self, t: f64) -> usize {
        self.knots_t
            .partition_point(|v| *v <= t)
            .saturating_sub(1)
            .min(self.knots_t.len() - 2)
    }

    pub fn eval_y(&self, t: f64) -> Result<f64, SolveError> {
        if !(t >= self.c_f - 1e-12 && t <= 1.0 + 1e-12) {
            return Err(SolveError::Domain(t));
        }
        let t = t.clamp(self.c_f, 1.0);
        Ok(self.y_unchecked(t))
    }

    pub(crate) fn y_unchecked(&self, t: f64) -> f64 {
        let j = self.cell_of_t(t);
        let c = self.c_f;
        let (w0, w1) = (sq(self.knots_t[j] - c), sq(self.knots_t[j + 1] - c));
        let (y0, y1) = (self.knots_y[j], self.knots_y[j + 1]);
        y0 + (y1 - y0) * (sq(t - c) - w0) / (w1 - w0)
    }

    /// Derivative of the interpolant used by [`YSolution::eval_y`].
    pub fn interp_slope(&self, t: f64) -> f64 {
        let j = self.cell_of_t(t);
        2.0 * (t - self.c_f) * self.cell_slope_w(j)
    }

    /// `dy/dw` on cell `j`, where `w = (t - c_f)^2`.
    pub(crate) fn cell_slope_w(&self, j: usize) -> f64 {
        let c = self.c_f;
        let (w0, w1) = (sq(self.knots_t[j] - c), sq(self.knots_t[j + 1] - c));
        (self.knots_y[j + 1] - self.knots_y[j]) / (w1 - w0)
    }

    /// `y'(t)` interpolated from the stored knot derivatives of the
    /// segment holding `t` (the lower segment at a shared breakpoint).
    pub fn eval_yprime(&self, t: f64) -> Result<f64, SolveError> {
        if !(t >= self.c_f && t <= 1.0) {
            return Err(SolveError::Domain(t));
        }
        let seg = self
            .segments
            .iter()
            .rev()
            .find(|s| t >= s.lo() && t <= s.hi())
            .ok_or(SolveError::Domain(t))?;
        Ok(seg.interp(t).1)
    }

    /// `tau = y^{-1}` on `[0, y(1)]`, extended by `1` above `y(1)`.
    pub fn eval_tau(&self, s: f64) -> Result<f64, SolveError> {
        if !(s >= -1e-12 && s <= 1.0 + 1e-12) {
            return Err(SolveError::Domain(s));
        }
        Ok(self.tau_unchecked(s))
    }

    pub(crate) fn tau_unchecked(&self, s: f64) -> f64 {
        if s <= 0.0 {
            return self.c_f;
        }
        if s >= self.y1 {
            return 1.0;
        }
        let j = self
            .knots_y
            .partition_point(|v| *v <= s)
            .saturating_sub(1)
            .min(self.knots_y.len() - 2);
        let c = self.c_f;
        let (w0, w1) = (sq(self.knots_t[j] - c), sq(self.knots_t[j + 1] - c));
        let (y0, y1) = (self.knots_y[j], self.knots_y[j + 1]);
        let w = w0 + (s - y0) * (w1 - w0) / (y1 - y0);
        (c + w.max(0.0).sqrt()).clamp(self.knots_t[j], self.knots_t[j + 1])
    }
}

/// Bisection over `theta` in `[1/2, (1+f)/(1+2f)]`.
pub fn solve_theta(f: f64, tol_theta: f64, grid_n: usize) -> Result<YSolution, SolveError> {
    check_f(f)?;
    if !(tol_theta > 0.0) {
        return Err(SolveError::InvalidParameter("tol_theta must be positive".into()));
    }
    let mut lo = 0.5;
    let mut hi = theta_upper(f);
    let top = integrate_theta(f, hi, grid_n)?;
    if f > CLOSED_FORM_ONLY || top.y_at_cf.is_some_and(|y| y.abs() <= TOL_Y_CF) {
        return YSolution::from_trajectory(f, &top);
    }
    let mut best: Option<Trajectory> = None;
    let mut prev: Option<(f64, f64)> = None;
    let mut last = format!("{:?}", top.outcome);
    let mut converged = false;
    for _ in 0..MAX_BISECTION {
        let mid = 0.5 * (lo + hi);
        let traj = integrate_theta(f, mid, grid_n)?;
        last = format!("{:?}", traj.outcome);
        match (traj.outcome, traj.y_at_cf) {
            (SolveOutcome::Success { .. }, Some(y)) => {
                lo = mid;
                if let Some(b) = &best {
                    prev = Some((b.theta, b.y_at_cf.unwrap()));
                }
                best = Some(traj);
                if y.abs() <= TOL_Y_CF {
                    converged = true;
                }
            }
            (_, Some(y)) if y.abs() <= TOL_Y_CF => {
                best = Some(traj);
                break;
            }
            _ => hi = mid,
        }
        if converged || hi - lo < tol_theta {
            break;
        }
    }
    let Some(mut best) = best else {
        return Err(SolveError::NoSignChange {
            iterations: MAX_BISECTION,
            last,
        });
    };
    // Secant polish on the success side so the end correction is negligible.
    if let (Some((mut ta, mut ya)), true) = (prev, best.outcome.is_success()) {
        for _ in 0..POLISH_STEPS {
            let (tb, yb) = (best.theta, best.y_at_cf.unwrap());
            if yb.abs() <= TOL_POLISH || yb == ya {
                break;
            }
            let mut cand = tb - yb * (tb - ta) / (yb - ya);
            if !(cand > lo && cand < hi) {
                cand = 0.5 * (lo + hi);
            }
            let traj = integrate_theta(f, cand, grid_n)?;
            match (traj.outcome, traj.y_at_cf) {
                (SolveOutcome::Success { .. }, Some(_)) => {
                    lo = cand;
                    (ta, ya) = (tb, yb);
                    best = traj;
                }
                _ => hi = cand,
            }
            if hi - lo <= f64::EPSILON * hi {
                break;
            }
        }
    }
    YSolution::from_trajectory(f, &best)
}
