//! Online policies and the run engine that charges buybacks.
//!
//! A policy sees one observation at a time together with the value it
//! currently holds and answers accept or skip. Accepting while holding
//! `x` costs `f x`.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use rand::Rng;
use rand::RngCore;
use serde::Serialize;
use thiserror::Error;

use crate::distributions::{DistError, Distribution, Instance};
use crate::dp::{DpError, ValueTable};
use crate::phi::PhiTables;
use crate::ppp::{sample_interval_ppp, PppError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("policy accepted a zero value at step {0}")]
    AcceptedZero(usize),
    #[error("realization has length {got}, instance has {want} members")]
    Length { got: usize, want: usize },
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("unknown policy {0:?}")]
    Unknown(String),
    #[error("threshold search failed: {0}")]
    Threshold(String),
    #[error("internal state: {0}")]
    Internal(String),
    #[error(transparent)]
    Dp(#[from] DpError),
    #[error(transparent)]
    Ppp(#[from] PppError),
    #[error(transparent)]
    Dist(#[from] DistError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Decision {
    pub accept: bool,
}

impl Decision {
    pub const ACCEPT: Decision = Decision { accept: true };
    pub const SKIP: Decision = Decision { accept: false };

    fn from(accept: bool) -> Self {
        Decision { accept }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RunOutcome {
    pub final_value: f64,
    pub buyback_cost: f64,
    pub net: f64,
}

pub trait Policy: Send {
    fn name(&self) -> &str;

    /// Called once before every run.
    fn reset(&mut self, _rng: &mut dyn RngCore) -> Result<(), PolicyError> {
        Ok(())
    }

    /// `step` is 0-based; `held` is 0 when nothing is held.
    fn decide(
        &mut self,
        step: usize,
        observed: f64,
        held: f64,
        rng: &mut dyn RngCore,
    ) -> Result<Decision, PolicyError>;

    /// True when `decide` is a deterministic function of
    /// `(step, observed, held)` after `reset`.
    fn is_markov(&self) -> bool {
        false
    }
}

pub fn run_policy(
    policy: &mut dyn Policy,
    inst: &Instance,
    realization: &[f64],
    f: f64,
    rng: &mut dyn RngCore,
) -> Result<RunOutcome, PolicyError> {
    if realization.len() != inst.n() {
        return Err(PolicyError::Length {
            got: realization.len(),
            want: inst.n(),
        });
    }
    policy.reset(rng)?;
    let mut held = 0.0;
    let mut cost = 0.0;
    for (i, &x) in realization.iter().enumerate() {
        if policy.decide(i, x, held, rng)?.accept {
            if x <= 0.0 {
                return Err(PolicyError::AcceptedZero(i + 1));
            }
            cost += f * held;
            held = x;
        }
    }
    Ok(RunOutcome {
        final_value: held,
        buyback_cost: cost,
        net: held - cost,
    })
}

/// Exact expected net reward of a Markov policy on a discrete instance.
pub fn exact_value(policy: &mut dyn Policy, inst: &Instance, f: f64) -> Result<f64, PolicyError> {
    if !policy.is_markov() {
        return Err(PolicyError::Parameter(format!(
            "{} is not a deterministic Markov rule",
            policy.name()
        )));
    }
    let mut dummy = rand::rngs::mock::StepRng::new(0, 0);
    policy.reset(&mut dummy)?;
    let mut err = None;
    let mut rule = |t: usize, h: f64, o: f64| match policy.decide(t - 1, o, h, &mut dummy) {
        Ok(d) => d.accept,
        Err(e) => {
            err.get_or_insert(e);
            false
        }
    };
    let v = crate::dp::markov_value(inst, f, &mut rule)?;
    match err {
        Some(e) => Err(e),
        None => Ok(v),
    }
}

pub struct DpPolicy {
    table: Arc<ValueTable>,
}

pub fn dp_policy(table: Arc<ValueTable>) -> DpPolicy {
    DpPolicy { table }
}

impl Policy for DpPolicy {
    fn name(&self) -> &str {
        "dp"
    }

    fn decide(&mut self, step: usize, observed: f64, held: f64, _: &mut dyn RngCore) -> Result<Decision, PolicyError> {
        Ok(Decision::from(self.table.act(step + 1, held, observed)?))
    }

    fn is_markov(&self) -> bool {
        true
    }
}

/// The randomized-threshold policy driven by the point process embedding.
pub struct OrderAgnostic {
    tables: Arc<PhiTables>,
    inst: Arc<Instance>,
    boost: bool,
    peak: f64,
    flagged_value: f64,
    threshold: f64,
    flagged: Vec<f64>,
}

pub fn order_agnostic_policy(tables: Arc<PhiTables>, inst: Arc<Instance>, boost: bool) -> OrderAgnostic {
    OrderAgnostic {
        tables,
        inst,
        boost,
        peak: 0.0,
        flagged_value: 0.0,
        threshold: f64::INFINITY,
        flagged: Vec::new(),
    }
}

impl OrderAgnostic {
    /// Quantiles of `X_max` flagged during the last run.
    pub fn flagged(&self) -> &[f64] {
        &self.flagged
    }

    /// The last flagged value, 0 if none.
    pub fn pretend_held(&self) -> f64 {
        self.flagged_value
    }

    fn next_threshold(&self, z: f64) -> Result<f64, PolicyError> {
        let tau = self.tables.tau(self.inst.max_cdf(z));
        if tau >= 1.0 {
            return Ok(f64::INFINITY);
        }
        let t = self.inst.max_quantile(tau)?;
        Ok(if t <= z { z.next_up() } else { t })
    }
}

impl Policy for OrderAgnostic {
    fn name(&self) -> &str {
        if self.boost {
            "oa"
        } else {
            "oa-pure"
        }
    }

    fn reset(&mut self, rng: &mut dyn RngCore) -> Result<(), PolicyError> {
        self.peak = 0.0;
        self.flagged_value = 0.0;
        self.flagged.clear();
        let t0 = self.tables.sample_initial_threshold(rng);
        self.threshold = self.inst.max_quantile(t0)?;
        Ok(())
    }

    fn decide(
        &mut self,
        step: usize,
        observed: f64,
        _held: f64,
        rng: &mut dyn RngCore,
    ) -> Result<Decision, PolicyError> {
        if observed <= self.peak {
            return Ok(Decision::SKIP);
        }
        let z = self.flagged_value;
        if observed >= self.threshold {
            // points below the threshold can never be flagged
            let lo = self.threshold;
            let mut cand = if observed > lo {
                sample_interval_ppp(rng, &self.inst.dists[step..], lo, observed)?.points
            } else {
                Vec::new()
            };
            cand.push(observed);
            let mut k = 0;
            while observed >= self.threshold {
                while cand[k] < self.threshold {
                    k += 1;
                }
                let zhat = cand[k];
                self.flagged_value = zhat;
                self.flagged.push(self.inst.max_cdf(zhat));
                self.threshold = self.next_threshold(zhat)?;
            }
        }
        self.peak = observed;
        let mut p = if observed > z {
            (self.flagged_value - z) / (observed - z)
        } else {
            0.0
        };
        if self.boost && p > 0.0 && self.inst.max_cdf(observed) > self.tables.y1() {
            p = 1.0;
        }
        let accept = if p >= 1.0 {
            true
        } else if p <= 0.0 {
            false
        } else {
            rng.gen::<f64>() < p
        };
        Ok(Decision::from(accept))
    }
}

/// Single threshold `T` followed by greedy swaps above `(1+f)` times the
/// held value.
pub struct ThresholdGreedy {
    pub threshold: f64,
    f: f64,
}

/// Probability level of the threshold-greedy threshold.
pub fn threshold_greedy_level(f: f64) -> f64 {
    f / (1.0 + 2.0 * f)
}

pub fn threshold_greedy_policy(f: f64, inst: &Instance) -> Result<ThresholdGreedy, PolicyError> {
    if !(f > 0.0 && f.is_finite()) {
        return Err(PolicyError::Parameter(format!("f = {f}")));
    }
    Ok(ThresholdGreedy {
        threshold: inst.max_quantile(threshold_greedy_level(f))?,
        f,
    })
}

/// Guaranteed ratio `1 / (f/(1+f) + (2 + 1/f)^{f/(1+f)})` of threshold-greedy.
pub fn threshold_greedy_bound(f: f64) -> f64 {
    let c = f / (1.0 + f);
    1.0 / (c + (2.0 + 1.0 / f).powf(c))
}

impl Policy for ThresholdGreedy {
    fn name(&self) -> &str {
        "tg"
    }

    fn decide(&mut self, _: usize, x: f64, held: f64, _: &mut dyn RngCore) -> Result<Decision, PolicyError> {
        let accept = if held > 0.0 {
            x > (1.0 + self.f) * held
        } else {
            x > 0.0 && x >= self.threshold
        };
        Ok(Decision::from(accept))
    }

    fn is_markov(&self) -> bool {
        true
    }
}

/// Accept the first value at or above a fixed threshold; never swap.
pub struct SingleThreshold {
    pub threshold: f64,
    label: &'static str,
}

impl Policy for SingleThreshold {
    fn name(&self) -> &str {
        self.label
    }

    fn decide(&mut self, _: usize, x: f64, held: f64, _: &mut dyn RngCore) -> Result<Decision, PolicyError> {
        Ok(Decision::from(held == 0.0 && x > 0.0 && x >= self.threshold))
    }

    fn is_markov(&self) -> bool {
        true
    }
}

pub fn median_policy(inst: &Instance) -> Result<SingleThreshold, PolicyError> {
    Ok(SingleThreshold {
        threshold: inst.max_quantile(0.5)?,
        label: "median",
    })
}

/// `alpha = E[(T - X_max)_+] / T` and `beta = E[(X_max - T)_+] / E[X_max]`
/// at the median `T`.
pub fn median_alpha_beta(inst: &Instance) -> Result<(f64, f64, f64), PolicyError> {
    let t = inst.max_quantile(0.5)?;
    if !(t > 0.0) {
        return Err(PolicyError::Threshold("median of the maximum is 0".into()));
    }
    let alpha = inst.expected_shortfall(t)? / t;
    let beta = inst.expected_excess(t)? / inst.expected_max()?;
    Ok((t, alpha, beta))
}

/// Median threshold, lowered to `(1 - 3 alpha) T` when the maximum is
/// concentrated around the median.
pub fn adjusted_median_policy(inst: &Instance) -> Result<SingleThreshold, PolicyError> {
    let (t, alpha, beta) = median_alpha_beta(inst)?;
    let threshold = if alpha < (1.0 - 2.0 * beta) / (8.0 - 9.0 * beta) {
        (1.0 - 3.0 * alpha) * t
    } else {
        t
    };
    Ok(SingleThreshold {
        threshold,
        label: "median-adjusted",
    })
}

/// Greedy with multiplicative margin `gamma`.
pub struct Bhk {
    pub gamma: f64,
}

pub fn bhk_policy(f: f64, gamma: f64) -> Result<Bhk, PolicyError> {
    if !(gamma > 1.0 + f) {
        return Err(PolicyError::Parameter(format!(
            "gamma = {gamma} must exceed 1 + f = {}",
            1.0 + f
        )));
    }
    Ok(Bhk { gamma })
}

pub const BHK_CHAIN_LEN: usize = 20;

/// Worst ratio over geometric chains `1, gamma, ..., gamma^m` followed by
/// a value just below `gamma^{m+1}`.
pub fn bhk_chain_ratio(f: f64, gamma: f64) -> f64 {
    let mut worst = f64::INFINITY;
    let mut paid = 0.0;
    let mut g = 1.0;
    for _ in 0..=BHK_CHAIN_LEN {
        worst = worst.min((1.0 - f * paid) / gamma);
        g /= gamma;
        paid += g;
    }
    worst
}

/// Golden-section maximization of [`bhk_chain_ratio`] over
/// `gamma` in `(1+f, 4(1+f)]`.
pub fn bhk_default_gamma(f: f64) -> f64 {
    golden_max(|g| bhk_chain_ratio(f, g), (1.0 + f).next_up(), 4.0 * (1.0 + f))
}

impl Policy for Bhk {
    fn name(&self) -> &str {
        "bhk"
    }

    fn decide(&mut self, _: usize, x: f64, held: f64, _: &mut dyn RngCore) -> Result<Decision, PolicyError> {
        Ok(Decision::from(if held > 0.0 {
            x > self.gamma * held
        } else {
            x > 0.0
        }))
    }

    fn is_markov(&self) -> bool {
        true
    }
}

pub const BK_OFFSETS: usize = 64;
const BK_CHAIN_RATIOS: usize = 96;

/// Worst expected ratio of grid-rounded greedy over geometric chains
/// `1, r, ..., r^m` with `m <= BHK_CHAIN_LEN` and `r` in `(1, rho^2]`,
/// averaging exactly over a midpoint grid of log-offsets.
pub fn bk_chain_ratio(f: f64, rho: f64) -> f64 {
    let lr = rho.ln();
    let mut worst = f64::INFINITY;
    for j in 1..=BK_CHAIN_RATIOS {
        let step = 2.0 * lr * j as f64 / BK_CHAIN_RATIOS as f64;
        let mut net = vec![0.0; BHK_CHAIN_LEN + 1];
        for i in 0..BK_OFFSETS {
            let u = (i as f64 + 0.5) / BK_OFFSETS as f64;
            let level = |k: usize| (k as f64 * step / lr - u).floor();
            let (mut held, mut cost) = (1.0, 0.0);
            net[0] += 1.0;
            for (k, acc) in net.iter_mut().enumerate().skip(1) {
                if level(k) > level(k - 1) {
                    cost += f * held;
                    held = (k as f64 * step).exp();
                }
                *acc += held - cost;
            }
        }
        for (k, v) in net.iter().enumerate() {
            worst = worst.min(v / BK_OFFSETS as f64 / (k as f64 * step).exp());
        }
    }
    worst
}

/// Golden-section maximizer of [`bk_chain_ratio`] over `ln rho` in
/// `(0, ln(1000 (1+f))]`; cached per `f`.
pub fn bk_default_rho(f: f64) -> f64 {
    static CACHE: OnceLock<Mutex<HashMap<u64, f64>>> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    if let Some(r) = cache.lock().unwrap().get(&f.to_bits()) {
        return *r;
    }
    let hi = (1000.0 * (1.0 + f)).ln();
    let rho = golden_max(|l| bk_chain_ratio(f, l.exp()), 1e-3, hi).exp();
    cache.lock().unwrap().insert(f.to_bits(), rho);
    rho
}

fn golden_max(obj: impl Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (obj(c), obj(d));
    for _ in 0..200 {
        if (b - a) < 1e-12 * b {
            break;
        }
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = obj(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = obj(d);
        }
    }
    0.5 * (a + b)
}

/// Greedy on values rounded down to the grid `c rho^k` with a log-uniform
/// offset `c` drawn per run.
pub struct Bk {
    pub rho: f64,
    offset: f64,
}

pub fn bk_policy(f: f64, rho: f64) -> Result<Bk, PolicyError> {
    if !(f > 0.0 && rho > 1.0 && rho.is_finite()) {
        return Err(PolicyError::Parameter(format!("f = {f}, rho = {rho}")));
    }
    Ok(Bk { rho, offset: 1.0 })
}

impl Bk {
    pub fn round(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        let k = ((x / self.offset).ln() / self.rho.ln()).floor();
        self.offset * self.rho.powf(k)
    }
}

impl Policy for Bk {
    fn name(&self) -> &str {
        "bk"
    }

    fn reset(&mut self, rng: &mut dyn RngCore) -> Result<(), PolicyError> {
        self.offset = self.rho.powf(rng.gen::<f64>());
        Ok(())
    }

    fn decide(&mut self, _: usize, x: f64, held: f64, _: &mut dyn RngCore) -> Result<Decision, PolicyError> {
        Ok(Decision::from(x > 0.0 && self.round(x) > self.round(held)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundedVariant {
    Mean,
    Quantile,
    FixedPoint,
}

impl BoundedVariant {
    pub const ALL: [BoundedVariant; 3] = [Self::Mean, Self::Quantile, Self::FixedPoint];

    pub fn label(self) -> &'static str {
        match self {
            Self::Mean => "bounded-mean",
            Self::Quantile => "bounded-quantile",
            Self::FixedPoint => "bounded-fixedpoint",
        }
    }
}

/// Root of `E[(X_max - T)_+] = f/(1+f) T` by bisection.
pub fn bounded_fixed_point(inst: &Instance, f: f64) -> Result<f64, PolicyError> {
    let c = f / (1.0 + f);
    let g = |t: f64| -> Result<f64, PolicyError> { Ok(inst.expected_excess(t)? - c * t) };
    let m = inst.expected_max()?;
    if !(m > 0.0 && m.is_finite()) {
        return Err(PolicyError::Threshold(format!("E[max] = {m}")));
    }
    let (mut lo, mut hi) = (0.0, m / c);
    if g(hi)? > 0.0 {
        return Err(PolicyError::Threshold("no sign change".into()));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid)? > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Single-threshold policy for an instance whose maximum lies in
/// `[alpha, (1+f) alpha)`.
pub fn bounded_threshold_policy(
    inst: &Instance,
    f: f64,
    alpha: f64,
    variant: BoundedVariant,
) -> Result<SingleThreshold, PolicyError> {
    let threshold = match variant {
        BoundedVariant::Mean => (inst.expected_max()? * (1.0 + f) / (1.0 + 2.0 * f)).max(alpha),
        BoundedVariant::Quantile => {
            let x = f * f / ((1.0 + f) * (1.0 + 2.0 * f));
            inst.max_quantile(x)?.max(alpha)
        }
        BoundedVariant::FixedPoint => bounded_fixed_point(inst, f)?.max(alpha),
    };
    Ok(SingleThreshold {
        threshold,
        label: variant.label(),
    })
}

/// Optimal expected net reward with two variables given `X_1 = x1`.
pub fn two_var_optimal_value(x1: f64, d2: &Distribution, f: f64) -> Result<f64, PolicyError> {
    if !(x1 >= 0.0) {
        return Err(PolicyError::Parameter(format!("x1 = {x1}")));
    }
    let inst = Instance::new(vec![d2.clone()])?;
    let mean = d2.mean()?;
    let excess = inst.expected_excess((1.0 + f) * x1)?;
    Ok(mean.max(x1 + excess))
}
