//! Monte Carlo evaluation of policies on instance families.
//!
//! Every random draw comes from a ChaCha8 stream keyed by
//! `(seed, instance id, rep, stream name)` through SHA-256, so results do
//! not depend on thread scheduling. Within a rep all policies see the same
//! realization.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::distributions::{DistError, Instance};
use crate::dp::{solve_bellman, DpError};
use crate::instances::{self, InstanceError};
use crate::ode::{solve_theta, SolveError, DEFAULT_GRID, DEFAULT_TOL_THETA};
use crate::phi::{PhiError, PhiTables};
use crate::policies::{self, BoundedVariant, Policy, PolicyError};

pub const THREADS_ENV: &str = "BUYBACK_LAB_THREADS";
pub const CSV_HEADER: [&str; 10] = [
    "f",
    "instance_id",
    "policy",
    "mean_net",
    "mean_opt",
    "ratio",
    "stderr",
    "q1",
    "median",
    "q3",
];
pub const DEFAULT_POLICIES: [&str; 5] = ["oa", "bhk", "bk", "median", "tg"];
pub const DEFAULT_F_GRID: [f64; 10] = [0.1, 0.2, 0.3, 0.5, 1.0, 2.0, 3.0, 5.0, 7.0, 10.0];

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("unknown policy {0:?}")]
    UnknownPolicy(String),
    #[error("unknown family {0:?}")]
    UnknownFamily(String),
    #[error("config: {0}")]
    Config(String),
    #[error("policy {policy} on instance {instance}: {source}")]
    Policy {
        policy: String,
        instance: usize,
        source: PolicyError,
    },
    #[error(transparent)]
    Instance(#[from] InstanceError),
    #[error(transparent)]
    Dist(#[from] DistError),
    #[error(transparent)]
    Dp(#[from] DpError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Phi(#[from] PhiError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("thread pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Family {
    Gpd,
    Bounded,
    Two,
    Three,
    Indiff,
    Multistage,
}

impl FromStr for Family {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "gpd" => Family::Gpd,
            "bounded" => Family::Bounded,
            "two" => Family::Two,
            "three" => Family::Three,
            "indiff" => Family::Indiff,
            "multistage" => Family::Multistage,
            other => return Err(HarnessError::UnknownFamily(other.into())),
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SimConfig {
    pub seed: u64,
    pub f_values: Vec<f64>,
    pub n_instances: usize,
    pub n_reps: usize,
    pub policies: Vec<String>,
    pub family: Family,
    pub output: Option<PathBuf>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            seed: 0,
            f_values: DEFAULT_F_GRID.to_vec(),
            n_instances: 100,
            n_reps: 500,
            policies: DEFAULT_POLICIES.iter().map(|s| s.to_string()).collect(),
            family: Family::Gpd,
            output: None,
        }
    }
}

impl SimConfig {
    /// `key = value` lines; `#` starts a comment. Lists are comma separated.
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let mut cfg = SimConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| HarnessError::Config(format!("line {}: expected key = value", lineno + 1)))?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), HarnessError> {
        let bad = |what: &str| HarnessError::Config(format!("{key}: invalid {what} {value:?}"));
        match key {
            "seed" => self.seed = value.parse().map_err(|_| bad("integer"))?,
            "f_values" => {
                self.f_values = value
                    .split(',')
                    .map(|s| s.trim().parse::<f64>())
                    .collect::<Result<_, _>>()
                    .map_err(|_| bad("list"))?
            }
            "n_instances" => self.n_instances = value.parse().map_err(|_| bad("count"))?,
            "n_reps" => self.n_reps = value.parse().map_err(|_| bad("count"))?,
            "policies" => self.policies = value.split(',').map(|s| s.trim().to_string()).collect(),
            "family" => self.family = value.parse()?,
            "output" => self.output = Some(PathBuf::from(value)),
            other => return Err(HarnessError::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.n_reps == 0 {
            return Err(HarnessError::Config("n_reps must be at least 1".into()));
        }
        if self.f_values.iter().any(|f| !(*f > 0.0 && f.is_finite())) {
            return Err(HarnessError::Config("f values must be positive".into()));
        }
        for p in &self.policies {
            if !is_known_policy(p) {
                return Err(HarnessError::UnknownPolicy(p.clone()));
            }
        }
        Ok(())
    }
}

pub fn is_known_policy(name: &str) -> bool {
    matches!(
        name,
        "dp" | "oa"
            | "oa-pure"
            | "tg"
            | "median"
            | "median-adjusted"
            | "bhk"
            | "bk"
            | "bounded-mean"
            | "bounded-quantile"
            | "bounded-fixedpoint"
    )
}

/// Deterministic stream for `(seed, instance, rep, stream)`.
pub fn stream_rng(seed: u64, instance_id: u64, rep: u64, stream: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(instance_id.to_le_bytes());
    h.update(rep.to_le_bytes());
    h.update(stream.as_bytes());
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

/// Solved tables for one `f`, shared by every policy that needs them.
pub fn tables_for(f: f64) -> Result<Arc<PhiTables>, HarnessError> {
    Ok(Arc::new(PhiTables::new(solve_theta(f, DEFAULT_TOL_THETA, DEFAULT_GRID)?)?))
}

/// Instance `id` of a family at buyback factor `f`.
pub fn family_instance(
    family: Family,
    f: f64,
    seed: u64,
    id: usize,
    tables: Option<&PhiTables>,
) -> Result<Instance, HarnessError> {
    let mut rng = stream_rng(seed, id as u64, u64::MAX, "instance");
    Ok(match family {
        Family::Gpd => instances::random_gpd_instance(&mut rng),
        Family::Bounded => instances::bounded_instance(&mut rng, 1.0, f)?,
        Family::Two => instances::two_var_hard(f)?,
        Family::Three => instances::three_var_hard(f)?,
        Family::Multistage => instances::multistage_instance(f)?,
        Family::Indiff => {
            let owned;
            let t = match tables {
                Some(t) => t,
                None => {
                    owned = tables_for(f)?;
                    &owned
                }
            };
            instances::indifference_instance(t)?
        }
    })
}

pub fn make_policy(
    name: &str,
    f: f64,
    inst: &Arc<Instance>,
    tables: Option<&Arc<PhiTables>>,
) -> Result<Box<dyn Policy>, HarnessError> {
    let wrap = |e: PolicyError| HarnessError::Policy {
        policy: name.into(),
        instance: 0,
        source: e,
    };
    let tables = || -> Result<Arc<PhiTables>, HarnessError> {
        match tables {
            Some(t) => Ok(t.clone()),
            None => tables_for(f),
        }
    };
    Ok(match name {
        "dp" => Box::new(policies::dp_policy(Arc::new(solve_bellman(inst, f)?))),
        "oa" => Box::new(policies::order_agnostic_policy(tables()?, inst.clone(), true)),
        "oa-pure" => Box::new(policies::order_agnostic_policy(tables()?, inst.clone(), false)),
        "tg" => Box::new(policies::threshold_greedy_policy(f, inst).map_err(wrap)?),
        "median" => Box::new(policies::median_policy(inst).map_err(wrap)?),
        "median-adjusted" => Box::new(policies::adjusted_median_policy(inst).map_err(wrap)?),
        "bhk" => Box::new(policies::bhk_policy(f, policies::bhk_default_gamma(f)).map_err(wrap)?),
        "bk" => Box::new(policies::bk_policy(f, policies::bk_default_rho(f)).map_err(wrap)?),
        "bounded-mean" | "bounded-quantile" | "bounded-fixedpoint" => {
            let variant = BoundedVariant::ALL
                .into_iter()
                .find(|v| v.label() == name)
                .unwrap();
            let alpha = inst.lower_bound().max(0.0);
            Box::new(policies::bounded_threshold_policy(inst, f, alpha, variant).map_err(wrap)?)
        }
        other => return Err(HarnessError::UnknownPolicy(other.into())),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct Evaluation {
    pub policy: String,
    pub mean_net: f64,
    pub mean_opt: f64,
    pub ratio: f64,
    /// Delta-method standard error of the ratio; `None` with one rep.
    pub stderr: Option<f64>,
}

/// Ratio of means with a delta-method standard error.
pub fn ratio_stats(net: &[f64], opt: &[f64]) -> (f64, f64, f64, Option<f64>) {
    let n = net.len() as f64;
    let mn = net.iter().sum::<f64>() / n;
    let mo = opt.iter().sum::<f64>() / n;
    let ratio = mn / mo;
    let stderr = if net.len() < 2 {
        None
    } else {
        let var = net
            .iter()
            .zip(opt)
            .map(|(a, b)| {
                let d = a - ratio * b;
                d * d
            })
            .sum::<f64>()
            / (n - 1.0);
        Some((var / n).sqrt() / mo)
    };
    (mn, mo, ratio, stderr)
}

/// Run every policy on `reps` shared realizations of `inst`.
pub fn evaluate_many(
    names: &[String],
    inst: &Arc<Instance>,
    f: f64,
    reps: usize,
    seed: u64,
    instance_id: usize,
    tables: Option<&Arc<PhiTables>>,
) -> Result<Vec<Evaluation>, HarnessError> {
    let mut pols = names
        .iter()
        .map(|n| make_policy(n, f, inst, tables))
        .collect::<Result<Vec<_>, _>>()?;
    let mut nets = vec![Vec::with_capacity(reps); names.len()];
    let mut opts = Vec::with_capacity(reps);
    for rep in 0..reps {
        let mut real_rng = stream_rng(seed, instance_id as u64, rep as u64, "realization");
        let realization = inst.sample(&mut real_rng);
        opts.push(realization.iter().copied().fold(0.0, f64::max));
        for (k, p) in pols.iter_mut().enumerate() {
            let mut rng = stream_rng(seed, instance_id as u64, rep as u64, &names[k]);
            let out = policies::run_policy(p.as_mut(), inst, &realization, f, &mut rng).map_err(|e| {
                HarnessError::Policy {
                    policy: names[k].clone(),
                    instance: instance_id,
                    source: e,
                }
            })?;
            nets[k].push(out.net);
        }
    }
    Ok(names
        .iter()
        .zip(nets)
        .map(|(name, net)| {
            let (mean_net, mean_opt, ratio, stderr) = ratio_stats(&net, &opts);
            Evaluation {
                policy: name.clone(),
                mean_net,
                mean_opt,
                ratio,
                stderr,
            }
        })
        .collect())
}

pub fn evaluate(
    policy: &str,
    inst: &Arc<Instance>,
    f: f64,
    reps: usize,
    seed: u64,
) -> Result<(f64, Option<f64>), HarnessError> {
    if !is_known_policy(policy) {
        return Err(HarnessError::UnknownPolicy(policy.into()));
    }
    let e = evaluate_many(&[policy.to_string()], inst, f, reps, seed, 0, None)?;
    Ok((e[0].ratio, e[0].stderr))
}

#[derive(Debug, Clone, Serialize)]
pub struct ReportRow {
    pub f: f64,
    pub instance_id: usize,
    pub policy: String,
    pub mean_net: f64,
    pub mean_opt: f64,
    pub ratio: f64,
    pub stderr: Option<f64>,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct SimReport {
    pub rows: Vec<ReportRow>,
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = p * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

impl SimReport {
    /// Mean ratio per `(f, policy)` over instances.
    pub fn mean_ratios(&self) -> BTreeMap<(String, String), f64> {
        let mut acc: BTreeMap<(String, String), (f64, usize)> = BTreeMap::new();
        for r in &self.rows {
            let e = acc.entry((format!("{}", r.f), r.policy.clone())).or_default();
            e.0 += r.ratio;
            e.1 += 1;
        }
        acc.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), HarnessError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(CSV_HEADER)?;
        for r in &self.rows {
            out.write_record([
                r.f.to_string(),
                r.instance_id.to_string(),
                r.policy.clone(),
                r.mean_net.to_string(),
                r.mean_opt.to_string(),
                r.ratio.to_string(),
                r.stderr.map(|s| s.to_string()).unwrap_or_else(|| "NA".into()),
                r.q1.to_string(),
                r.median.to_string(),
                r.q3.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

fn thread_pool() -> Result<rayon::ThreadPool, HarnessError> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = std::env::var(THREADS_ENV).ok().and_then(|v| v.parse::<usize>().ok()) {
        b = b.num_threads(n.max(1));
    }
    b.build().map_err(|e| HarnessError::Pool(e.to_string()))
}

/// Every `(f, instance)` cell, every policy; rows ordered by `f`, instance
/// id, then the configured policy order.
pub fn experiment(cfg: &SimConfig) -> Result<SimReport, HarnessError> {
    cfg.validate()?;
    let needs_tables = cfg.family == Family::Indiff || cfg.policies.iter().any(|p| p.starts_with("oa"));
    let pool = thread_pool()?;
    let tables: Vec<Option<Arc<PhiTables>>> = pool.install(|| {
        cfg.f_values
            .par_iter()
            .map(|f| if needs_tables { tables_for(*f).map(Some) } else { Ok(None) })
            .collect::<Result<_, _>>()
    })?;
    let cells: Vec<(usize, usize)> = (0..cfg.f_values.len())
        .flat_map(|i| (0..cfg.n_instances).map(move |j| (i, j)))
        .collect();
    let results: Vec<Vec<Evaluation>> = pool.install(|| {
        cells
            .par_iter()
            .map(|&(i, id)| {
                let f = cfg.f_values[i];
                let t = tables[i].as_ref();
                let inst = Arc::new(family_instance(cfg.family, f, cfg.seed, id, t.map(|a| a.as_ref()))?);
                evaluate_many(&cfg.policies, &inst, f, cfg.n_reps, cfg.seed, id, t)
            })
            .collect::<Result<_, _>>()
    })?;
    let mut rows = Vec::new();
    for (&(i, id), evals) in cells.iter().zip(results) {
        for e in evals {
            rows.push(ReportRow {
                f: cfg.f_values[i],
                instance_id: id,
                policy: e.policy,
                mean_net: e.mean_net,
                mean_opt: e.mean_opt,
                ratio: e.ratio,
                stderr: e.stderr,
                q1: 0.0,
                median: 0.0,
                q3: 0.0,
            });
        }
    }
    let mut groups: BTreeMap<(usize, String), Vec<f64>> = BTreeMap::new();
    for r in &rows {
        let fi = cfg.f_values.iter().position(|f| *f == r.f).unwrap();
        groups.entry((fi, r.policy.clone())).or_default().push(r.ratio);
    }
    for v in groups.values_mut() {
        v.sort_by(f64::total_cmp);
    }
    for r in &mut rows {
        let fi = cfg.f_values.iter().position(|f| *f == r.f).unwrap();
        let v = &groups[&(fi, r.policy.clone())];
        r.q1 = quantile_sorted(v, 0.25);
        r.median = quantile_sorted(v, 0.5);
        r.q3 = quantile_sorted(v, 0.75);
    }
    Ok(SimReport { rows })
}
