//! Scale-invariant Poisson point processes and their online embedding of
//! the observed peaks.

use rand::Rng;
use rand::RngCore;
use thiserror::Error;

use crate::distributions::{DistError, Distribution};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PppError {
    #[error("intensity is infinite on ({lo}, {hi}]: member {member} has F(lo) = 0")]
    InfiniteMeasure { member: usize, lo: f64, hi: f64 },
    #[error("interval ({0}, {1}] is malformed")]
    Interval(f64, f64),
    #[error(transparent)]
    Dist(#[from] DistError),
}

/// Strictly increasing points inside `(lo, hi]`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointSet {
    pub points: Vec<f64>,
}

impl PointSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn count_in(&self, a: f64, b: f64) -> usize {
        self.points.iter().filter(|p| **p > a && **p <= b).count()
    }

    fn merge(&mut self, mut other: Vec<f64>) {
        self.points.append(&mut other);
        self.points.sort_by(f64::total_cmp);
    }
}

/// Points of a PPP with intensity `1/t` on `(a, b]`, generated downward
/// from `b` by `t <- t U`.
pub fn sample_scale_invariant(rng: &mut dyn RngCore, a: f64, b: f64) -> PointSet {
    let mut out = Vec::new();
    if !(b > a) {
        return PointSet { points: out };
    }
    let mut t = b;
    loop {
        let u: f64 = rng.gen();
        t *= u;
        if t <= a {
            break;
        }
        out.push(t);
    }
    out.reverse();
    PointSet { points: out }
}

/// PPP on `(lo, hi]` with intensity measure `-sum_r log F_r` over the given
/// members, built from one scale-invariant PPP per member in its own
/// quantile space. Atoms come out as repeated points at the atom.
pub fn sample_interval_ppp(
    rng: &mut dyn RngCore,
    dists: &[Distribution],
    lo: f64,
    hi: f64,
) -> Result<PointSet, PppError> {
    if !(lo >= 0.0 && hi > lo) {
        return Err(PppError::Interval(lo, hi));
    }
    let mut set = PointSet::default();
    for (r, d) in dists.iter().enumerate() {
        let (flo, fhi) = (d.cdf(lo), d.cdf(hi));
        if flo <= 0.0 {
            return Err(PppError::InfiniteMeasure { member: r, lo, hi });
        }
        let qs = sample_scale_invariant(rng, flo, fhi);
        let mut pts = Vec::with_capacity(qs.len());
        for u in qs.points {
            // stay inside (lo, hi] despite quantile rounding
            pts.push(d.quantile(u)?.clamp(lo.next_up(), hi));
        }
        set.merge(pts);
    }
    Ok(set)
}

/// Running state of the online generation: the peak seen so far and a
/// floor below which nothing is generated.
#[derive(Debug, Clone, PartialEq)]
pub struct OnlinePpp {
    pub peak: f64,
    pub floor: f64,
}

impl OnlinePpp {
    /// `floor` must leave every member with positive mass below it.
    pub fn new(floor: f64) -> Self {
        OnlinePpp { peak: 0.0, floor }
    }

    /// Observe `x_obs` as member `i` (0-based) of `dists`. A new peak
    /// yields the suffix-intensity points on `(peak, x_obs]` above the floor
    /// together with `x_obs` itself, which sorts last among ties.
    pub fn step(
        &mut self,
        rng: &mut dyn RngCore,
        dists: &[Distribution],
        i: usize,
        x_obs: f64,
    ) -> Result<PointSet, PppError> {
        if x_obs <= self.peak {
            return Ok(PointSet::default());
        }
        let lo = self.peak.max(self.floor);
        let mut set = if x_obs > lo {
            sample_interval_ppp(rng, &dists[i..], lo, x_obs)?
        } else {
            PointSet::default()
        };
        if x_obs > self.floor {
            set.points.push(x_obs);
        }
        self.peak = x_obs;
        Ok(set)
    }
}

/// Full run of the online generation over one realization.
pub fn online_ppp_run(
    rng: &mut dyn RngCore,
    dists: &[Distribution],
    realization: &[f64],
    floor: f64,
) -> Result<PointSet, PppError> {
    let mut state = OnlinePpp::new(floor);
    let mut all = Vec::new();
    for (i, x) in realization.iter().enumerate() {
        all.extend(state.step(rng, dists, i, *x)?.points);
    }
    all.sort_by(f64::total_cmp);
    Ok(PointSet { points: all })
}
