//! Value distributions, instances, and the law of the running maximum.
//!
//! Every distribution exposes a right-continuous CDF, the generalized
//! inverse `inf{x : F(x) >= p}`, and inverse-transform sampling. An
//! [`Instance`] is an ordered list of independent members; the CDF of its
//! maximum is the product of member CDFs.

use rand::Rng;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Shapes with `|xi|` below this are treated as the exponential limit.
const SHAPE_EPS: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DistError {
    #[error("probability {0} outside (0, 1]")]
    ProbabilityDomain(f64),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("expectation diverges (GPD shape {0} >= 1)")]
    Divergent(f64),
    #[error("empty instance")]
    EmptyInstance,
    #[error("instance has a continuous member; discrete input required")]
    NotDiscrete,
    #[error("json: {0}")]
    Json(String),
}

/// A single value distribution.
///
/// `Jittered` is `0` with probability `1 - q` and uniform on `[v - w, v + w]`
/// otherwise. It is the continuous stand-in for a scaled Bernoulli.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum Distribution {
    #[serde(rename = "bernoulli")]
    ScaledBernoulli {
        #[serde(rename = "v")]
        value: f64,
        #[serde(rename = "q")]
        prob: f64,
    },
    #[serde(rename = "discrete")]
    DiscreteFinite { support: Vec<f64>, probs: Vec<f64> },
    #[serde(rename = "gpd")]
    Gpd {
        #[serde(rename = "mu")]
        location: f64,
        #[serde(rename = "sigma")]
        scale: f64,
        #[serde(rename = "xi")]
        shape: f64,
    },
    #[serde(rename = "point")]
    PointMass {
        #[serde(rename = "v")]
        value: f64,
    },
    #[serde(rename = "jittered")]
    Jittered {
        #[serde(rename = "v")]
        value: f64,
        #[serde(rename = "q")]
        prob: f64,
        #[serde(rename = "w")]
        width: f64,
    },
}

impl Distribution {
    pub fn bernoulli(value: f64, prob: f64) -> Self {
        Distribution::ScaledBernoulli { value, prob }
    }

    pub fn point(value: f64) -> Self {
        Distribution::PointMass { value }
    }

    pub fn gpd(location: f64, scale: f64, shape: f64) -> Result<Self, DistError> {
        let d = Distribution::Gpd {
            location,
            scale,
            shape,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn discrete(support: Vec<f64>, probs: Vec<f64>) -> Result<Self, DistError> {
        let d = Distribution::DiscreteFinite { support, probs };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<(), DistError> {
        let bad = |m: &str| Err(DistError::InvalidParameter(m.to_string()));
        match self {
            Distribution::ScaledBernoulli { value, prob } => {
                if !(value.is_finite() && *value >= 0.0) {
                    return bad("bernoulli value must be finite and >= 0");
                }
                if !(0.0..=1.0).contains(prob) {
                    return bad("bernoulli prob must lie in [0, 1]");
                }
            }
            Distribution::DiscreteFinite { support, probs } => {
                if support.is_empty() || support.len() != probs.len() {
                    return bad("discrete support/probs length mismatch");
                }
                if support.iter().any(|v| !v.is_finite() || *v < 0.0) {
                    return bad("discrete support must be finite and >= 0");
                }
                if support.windows(2).any(|w| w[0] >= w[1]) {
                    return bad("discrete support must be strictly ascending");
                }
                if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
                    return bad("discrete probs must lie in [0, 1]");
                }
                let s: f64 = probs.iter().sum();
                if (s - 1.0).abs() > 1e-12 {
                    return bad("discrete probs must sum to 1");
                }
            }
            Distribution::Gpd {
                location,
                scale,
                shape,
            } => {
                if !(location.is_finite() && shape.is_finite()) {
                    return bad("gpd location/shape must be finite");
                }
                if !(scale.is_finite() && *scale > 0.0) {
                    return bad("gpd scale must be positive");
                }
            }
            Distribution::PointMass { value } => {
                if !(value.is_finite() && *value >= 0.0) {
                    return bad("point value must be finite and >= 0");
                }
            }
            Distribution::Jittered { value, prob, width } => {
                if !(width.is_finite() && *width > 0.0) {
                    return bad("jitter width must be positive");
                }
                if !(value.is_finite() && *value - *width >= 0.0) {
                    return bad("jittered support must stay >= 0");
                }
                if !(0.0..=1.0).contains(prob) {
                    return bad("jittered prob must lie in [0, 1]");
                }
            }
        }
        Ok(())
    }

    /// True for members with finite support (DP-compatible).
    pub fn is_discrete(&self) -> bool {
        matches!(
            self,
            Distribution::ScaledBernoulli { .. }
                | Distribution::DiscreteFinite { .. }
                | Distribution::PointMass { .. }
        )
    }

    /// Atoms `(value, mass)` of a discrete member, ascending, zero-mass
    /// entries dropped. `None` for continuous members.
    pub fn atoms(&self) -> Option<Vec<(f64, f64)>> {
        let raw: Vec<(f64, f64)> = match self {
            Distribution::ScaledBernoulli { value, prob } => {
                if *value == 0.0 {
                    vec![(0.0, 1.0)]
                } else {
                    vec![(0.0, 1.0 - prob), (*value, *prob)]
                }
            }
            Distribution::DiscreteFinite { support, probs } => {
                support.iter().copied().zip(probs.iter().copied()).collect()
            }
            Distribution::PointMass { value } => vec![(*value, 1.0)],
            _ => return None,
        };
        Some(raw.into_iter().filter(|(_, p)| *p > 0.0).collect())
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match self {
            Distribution::ScaledBernoulli { value, prob } => {
                if x >= *value {
                    1.0
                } else if x >= 0.0 {
                    1.0 - prob
                } else {
                    0.0
                }
            }
            Distribution::DiscreteFinite { support, probs } => {
                let k = support.partition_point(|v| *v <= x);
                if k == support.len() {
                    1.0
                } else {
                    probs[..k].iter().sum::<f64>().min(1.0)
                }
            }
            Distribution::Gpd {
                location,
                scale,
                shape,
            } => gpd_cdf(*location, *scale, *shape, x),
            Distribution::PointMass { value } => {
                if x >= *value {
                    1.0
                } else {
                    0.0
                }
            }
            Distribution::Jittered { value, prob, width } => {
                if x < 0.0 {
                    0.0
                } else if x < value - width {
                    1.0 - prob
                } else if x >= value + width {
                    1.0
                } else {
                    1.0 - prob + prob * (x - (value - width)) / (2.0 * width)
                }
            }
        }
    }

    /// Generalized inverse `inf{x : F(x) >= p}` for `p` in `(0, 1]`.
    pub fn quantile(&self, p: f64) -> Result<f64, DistError> {
        if !(p > 0.0 && p <= 1.0) {
            return Err(DistError::ProbabilityDomain(p));
        }
        Ok(self.quantile_unchecked(p))
    }

    fn quantile_unchecked(&self, p: f64) -> f64 {
        match self {
            Distribution::ScaledBernoulli { value, prob } => {
                if p <= 1.0 - prob {
                    0.0
                } else {
                    *value
                }
            }
            Distribution::DiscreteFinite { support, probs } => {
                let mut acc = 0.0;
                for (v, q) in support.iter().zip(probs) {
                    acc += q;
                    if acc >= p {
                        return *v;
                    }
                }
                // rounding shortfall in the cumulative sum
                *support
                    .iter()
                    .zip(probs)
                    .rev()
                    .find(|(_, q)| **q > 0.0)
                    .map(|(v, _)| v)
                    .unwrap_or(support.last().unwrap())
            }
            Distribution::Gpd {
                location,
                scale,
                shape,
            } => gpd_quantile(*location, *scale, *shape, p),
            Distribution::PointMass { value } => *value,
            Distribution::Jittered { value, prob, width } => {
                let base = 1.0 - prob;
                if p <= base {
                    0.0
                } else {
                    let z = ((p - base) / prob).clamp(0.0, 1.0);
                    value - width + 2.0 * width * z
                }
            }
        }
    }

    /// Inverse-transform sample.
    pub fn sample(&self, rng: &mut dyn RngCore) -> f64 {
        // 1 - U lies in (0, 1]
        let u: f64 = 1.0 - rng.gen::<f64>();
        self.quantile_unchecked(u)
    }

    pub fn mean(&self) -> Result<f64, DistError> {
        Ok(match self {
            Distribution::ScaledBernoulli { value, prob } => value * prob,
            Distribution::DiscreteFinite { support, probs } => {
                support.iter().zip(probs).map(|(v, p)| v * p).sum()
            }
            Distribution::Gpd {
                location,
                scale,
                shape,
            } => {
                if *shape >= 1.0 {
                    return Err(DistError::Divergent(*shape));
                }
                location + scale / (1.0 - shape)
            }
            Distribution::PointMass { value } => *value,
            Distribution::Jittered { value, prob, .. } => value * prob,
        })
    }

    /// Lowest point of the support.
    pub fn lower_bound(&self) -> f64 {
        match self {
            Distribution::Gpd { location, .. } => *location,
            Distribution::Jittered { value, width, prob } => {
                if *prob >= 1.0 {
                    value - width
                } else {
                    0.0
                }
            }
            _ => self.atoms().unwrap()[0].0,
        }
    }

    /// Highest point of the support, `inf` when unbounded.
    pub fn upper_bound(&self) -> f64 {
        match self {
            Distribution::Gpd {
                location,
                scale,
                shape,
            } => {
                if *shape < -SHAPE_EPS {
                    location - scale / shape
                } else {
                    f64::INFINITY
                }
            }
            Distribution::Jittered { value, width, prob } => {
                if *prob > 0.0 {
                    value + width
                } else {
                    0.0
                }
            }
            _ => self.atoms().map_or(0.0, |a| a.last().unwrap().0),
        }
    }

    /// Points where the CDF has a jump or a kink.
    fn breakpoints(&self, out: &mut Vec<f64>) {
        match self {
            Distribution::Gpd { .. } => {
                out.push(self.lower_bound());
                let ub = self.upper_bound();
                if ub.is_finite() {
                    out.push(ub);
                }
            }
            Distribution::Jittered { value, width, .. } => {
                out.extend([0.0, value - width, value + width]);
            }
            _ => out.extend(self.atoms().unwrap().iter().map(|a| a.0)),
        }
    }

    /// `E[(X - v)_+]` in closed form where one exists (used for tails).
    fn stop_loss_tail(&self, v: f64) -> Option<f64> {
        match self {
            Distribution::Gpd {
                location,
                scale,
                shape,
            } if *shape < 1.0 && v >= *location => {
                let surv = 1.0 - gpd_cdf(*location, *scale, *shape, v);
                Some((scale + shape * (v - location)) / (1.0 - shape) * surv)
            }
            _ => None,
        }
    }
}

fn gpd_cdf(mu: f64, sigma: f64, xi: f64, x: f64) -> f64 {
    if x <= mu {
        return 0.0;
    }
    let z = (x - mu) / sigma;
    if xi.abs() < SHAPE_EPS {
        return -(-z).exp_m1();
    }
    let a = xi * z;
    if a <= -1.0 {
        return 1.0;
    }
    // 1 - (1 + xi z)^(-1/xi)
    -(-a.ln_1p() / xi).exp_m1()
}

fn gpd_quantile(mu: f64, sigma: f64, xi: f64, p: f64) -> f64 {
    if p >= 1.0 {
        return if xi < -SHAPE_EPS {
            mu - sigma / xi
        } else {
            f64::INFINITY
        };
    }
    let l = (-p).ln_1p(); // ln(1 - p)
    if xi.abs() < SHAPE_EPS {
        mu - sigma * l
    } else {
        mu + sigma * (-xi * l).exp_m1() / xi
    }
}

/// Ordered list of independent members, in arrival order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub dists: Vec<Distribution>,
}

impl Instance {
    pub fn new(dists: Vec<Distribution>) -> Result<Self, DistError> {
        if dists.is_empty() {
            return Err(DistError::EmptyInstance);
        }
        for d in &dists {
            d.validate()?;
        }
        Ok(Instance { dists })
    }

    pub fn n(&self) -> usize {
        self.dists.len()
    }

    pub fn from_json(s: &str) -> Result<Self, DistError> {
        let inst: Instance = serde_json::from_str(s).map_err(|e| DistError::Json(e.to_string()))?;
        Instance::new(inst.dists)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("instance serializes")
    }

    pub fn is_discrete(&self) -> bool {
        self.dists.iter().all(|d| d.is_discrete())
    }

    pub fn sample(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        self.dists.iter().map(|d| d.sample(rng)).collect()
    }

    /// CDF of `X_max`; the empty product is 1.
    pub fn max_cdf(&self, x: f64) -> f64 {
        self.dists.iter().map(|d| d.cdf(x)).product()
    }

    /// CDF of the maximum of the members from index `from` on.
    pub fn suffix_max_cdf(&self, from: usize, x: f64) -> f64 {
        self.dists[from..].iter().map(|d| d.cdf(x)).product()
    }

    /// Sorted union of member support points, discrete instances only.
    pub fn union_support(&self) -> Result<Vec<f64>, DistError> {
        let mut pts = Vec::new();
        for d in &self.dists {
            pts.extend(d.atoms().ok_or(DistError::NotDiscrete)?.iter().map(|a| a.0));
        }
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        Ok(pts)
    }

    /// Exact law of `X_max` for discrete instances: ascending `(value, mass)`.
    pub fn max_pmf(&self) -> Result<Vec<(f64, f64)>, DistError> {
        let pts = self.union_support()?;
        let mut out = Vec::with_capacity(pts.len());
        let mut prev = 0.0;
        for v in pts {
            let c = self.max_cdf(v);
            let m = c - prev;
            if m > 0.0 {
                out.push((v, m));
            }
            prev = c;
        }
        Ok(out)
    }

    fn sorted_breakpoints(&self) -> Vec<f64> {
        let mut b = Vec::new();
        for d in &self.dists {
            d.breakpoints(&mut b);
        }
        b.retain(|x| x.is_finite());
        b.sort_by(f64::total_cmp);
        b.dedup();
        b
    }

    pub fn lower_bound(&self) -> f64 {
        self.dists
            .iter()
            .map(|d| d.lower_bound())
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn upper_bound(&self) -> f64 {
        self.dists
            .iter()
            .map(|d| d.upper_bound())
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Generalized inverse of the max CDF, `p` in `(0, 1]`.
    pub fn max_quantile(&self, p: f64) -> Result<f64, DistError> {
        if !(p > 0.0 && p <= 1.0) {
            return Err(DistError::ProbabilityDomain(p));
        }
        if self.is_discrete() {
            let pmf = self.max_pmf()?;
            let mut acc = 0.0;
            for (v, m) in &pmf {
                acc += m;
                if acc >= p {
                    return Ok(*v);
                }
            }
            return Ok(pmf.last().unwrap().0);
        }
        let n = self.n() as f64;
        let mut lo = f64::NEG_INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let pn = p.powf(1.0 / n);
        for d in &self.dists {
            lo = lo.max(d.quantile_unchecked(p));
            hi = hi.max(d.quantile_unchecked(pn));
        }
        if !hi.is_finite() {
            return Ok(f64::INFINITY);
        }
        if self.max_cdf(lo) >= p {
            return Ok(lo);
        }
        // invariant: F(lo) < p <= F(hi)
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.max_cdf(mid) >= p {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok(hi)
    }

    /// `E[(X_max - v)_+]`.
    pub fn expected_excess(&self, v: f64) -> Result<f64, DistError> {
        for d in &self.dists {
            d.mean()?;
        }
        if self.is_discrete() {
            return Ok(self
                .max_pmf()?
                .iter()
                .map(|(x, m)| (x - v).max(0.0) * m)
                .sum());
        }
        let ub = self.upper_bound();
        if v >= ub {
            return Ok(0.0);
        }
        let top = if ub.is_finite() {
            ub
        } else {
            self.max_quantile(1.0 - 1e-12)?
        };
        let mut cuts = self.sorted_breakpoints();
        // geometric quantile cuts keep each piece well scaled
        for k in 1..=12 {
            let q = self.max_quantile(1.0 - 10f64.powi(-k))?;
            if q.is_finite() {
                cuts.push(q);
            }
        }
        cuts.push(v.max(self.lower_bound().min(v)));
        cuts.push(top);
        cuts.retain(|x| *x >= v && *x <= top);
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        let lb = self.lower_bound();
        let mut total = 0.0;
        if v < lb {
            // F = 0 below the common lower bound
            total += lb.min(top) - v;
        }
        let scale = top.abs().max(1.0);
        for w in cuts.windows(2) {
            let (a, b) = (w[0].max(lb), w[1]);
            if b <= a {
                continue;
            }
            let out = quadrature::integrate(|x| 1.0 - self.max_cdf(x), a, b, 1e-14 * scale);
            total += out.integral;
        }
        if !ub.is_finite() {
            // union bound on the survival tail beyond the truncation point
            let mut tail = 0.0;
            for d in &self.dists {
                if let Some(t) = d.stop_loss_tail(top) {
                    tail += t;
                }
            }
            total += tail;
        }
        Ok(total)
    }

    /// `E[(T - X_max)_+]`.
    pub fn expected_shortfall(&self, t: f64) -> Result<f64, DistError> {
        if self.is_discrete() {
            return Ok(self
                .max_pmf()?
                .iter()
                .map(|(x, m)| (t - x).max(0.0) * m)
                .sum());
        }
        let lb = self.lower_bound().min(t);
        let mut cuts = self.sorted_breakpoints();
        cuts.extend([lb, t]);
        cuts.retain(|x| *x >= lb && *x <= t);
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        let scale = t.abs().max(1.0);
        Ok(cuts
            .windows(2)
            .map(|w| quadrature::integrate(|x| self.max_cdf(x), w[0], w[1], 1e-14 * scale).integral)
            .sum())
    }

    /// `E[X_max]`; exact for discrete instances, quadrature otherwise.
    pub fn expected_max(&self) -> Result<f64, DistError> {
        if self.is_discrete() {
            return Ok(self.max_pmf()?.iter().map(|(x, m)| x * m).sum());
        }
        let lb = self.lower_bound();
        if lb >= 0.0 {
            return self.expected_excess(0.0);
        }
        // E[X] = E[(X)_+] - E[(0 - X)_+]
        Ok(self.expected_excess(0.0)? - self.expected_shortfall(0.0)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bernoulli_cdf_and_quantile() {
        let d = Distribution::bernoulli(2.0, 0.3);
        assert!((d.cdf(1.0) - 0.7).abs() < 1e-15);
        assert_eq!(d.quantile(0.7).unwrap(), 0.0);
        assert_eq!(d.quantile(0.71).unwrap(), 2.0);
        assert!(d.quantile(0.0).is_err());
        assert!(d.quantile(1.1).is_err());
    }

    #[test]
    fn point_mass() {
        let d = Distribution::point(5.0);
        assert_eq!(d.cdf(4.9), 0.0);
        assert_eq!(d.cdf(5.0), 1.0);
    }

    #[test]
    fn gpd_rejects_nonpositive_scale() {
        assert!(Distribution::gpd(0.0, 0.0, 0.1).is_err());
        assert!(Distribution::gpd(0.0, 1.0, 0.1).is_ok());
    }

    #[test]
    fn json_roundtrip() {
        let inst = Instance::new(vec![
            Distribution::bernoulli(2.0, 0.5),
            Distribution::gpd(1.0, 2.0, -0.25).unwrap(),
            Distribution::point(1.0),
        ])
        .unwrap();
        let s = inst.to_json();
        assert!(s.contains("\"kind\": \"bernoulli\""));
        assert!(s.contains("\"mu\""));
        assert_eq!(Instance::from_json(&s).unwrap(), inst);
    }
}
