//! `buyback-lab` command-line entry point.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use buyback_lab::acceptance;
use buyback_lab::distributions::Instance;
use buyback_lab::dp::solve_bellman;
use buyback_lab::harness::{experiment, family_instance, Family, SimConfig};
use buyback_lab::lpcheck::{build_dual_solution, check_constraints};
use buyback_lab::ode::{solve_theta, YSolution, DEFAULT_GRID, DEFAULT_TOL_THETA};
use buyback_lab::phi::PhiTables;
use buyback_lab::reductions::{discretize, monotonize, split_to_bernoulli, DEFAULT_DELTA};

#[derive(Parser)]
#[command(name = "buyback-lab", version, about = "Prophet inequality with buyback")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct Common {
    /// Master seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the main artifact here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Machine output only; suppresses the stderr summary.
    #[arg(long)]
    json: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve for theta_f and y_f.
    #[command(allow_negative_numbers = true)]
    Solve {
        #[arg(long)]
        f: f64,
        #[arg(long, default_value_t = DEFAULT_TOL_THETA)]
        tol: f64,
        #[arg(long, default_value_t = DEFAULT_GRID)]
        grid: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Tabulate phi, G and tau on a uniform grid as CSV.
    #[command(allow_negative_numbers = true)]
    PhiDump {
        #[arg(long)]
        f: f64,
        #[arg(long, default_value_t = 256)]
        points: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Generate an instance as JSON.
    #[command(allow_negative_numbers = true)]
    Gen {
        #[arg(long)]
        family: Family,
        #[arg(long)]
        f: f64,
        #[arg(long, default_value_t = 0)]
        id: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Optimal DP value of a discrete instance.
    #[command(allow_negative_numbers = true)]
    Dp {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long)]
        f: f64,
        #[command(flatten)]
        common: Common,
    },
    /// Discretize, split into scaled Bernoullis, and optionally sort.
    #[command(allow_negative_numbers = true)]
    Reduce {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long, default_value_t = DEFAULT_DELTA)]
        delta: f64,
        /// Skip discretization; the input must already be discrete.
        #[arg(long)]
        no_discretize: bool,
        #[arg(long)]
        monotonize: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Build the dual candidate and report constraint violations.
    #[command(allow_negative_numbers = true)]
    Lpcheck {
        /// Solved y_f as written by `solve --out`; solved afresh from --f otherwise.
        #[arg(long)]
        sol: Option<PathBuf>,
        #[arg(long)]
        f: Option<f64>,
        /// Comma-separated activation probabilities.
        #[arg(long, conflicts_with = "q_file")]
        q: Option<String>,
        /// JSON array of activation probabilities.
        #[arg(long)]
        q_file: Option<PathBuf>,
        /// Coverage level; defaults to the solved theta.
        #[arg(long)]
        theta: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Monte Carlo comparison of policies; CSV rows per (f, instance, policy).
    #[command(allow_negative_numbers = true)]
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        family: Option<Family>,
        /// Comma-separated buyback factors.
        #[arg(long)]
        f: Option<String>,
        #[arg(long)]
        instances: Option<usize>,
        #[arg(long)]
        reps: Option<usize>,
        /// Comma-separated policy names.
        #[arg(long)]
        policies: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Run the acceptance checks.
    #[command(allow_negative_numbers = true)]
    Verify {
        /// Only the fast checks.
        #[arg(long)]
        quick: bool,
        #[command(flatten)]
        common: Common,
    },
}

fn emit(common: &Common, body: &str) -> Result<()> {
    match &common.out {
        Some(p) => fs::write(p, body).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(body.as_bytes())?;
            if !body.ends_with('\n') {
                out.write_all(b"\n")?;
            }
            Ok(())
        }
    }
}

fn note(common: &Common, msg: &str) {
    if !common.json {
        eprintln!("{msg}");
    }
}

fn read_instance(p: &Path) -> Result<Instance> {
    let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
    Ok(Instance::from_json(&text)?)
}

fn parse_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|v| v.trim().parse::<f64>().with_context(|| format!("bad number {v:?}")))
        .collect()
}

fn run(cli: Cli) -> Result<bool> {
    match cli.cmd {
        Cmd::Solve {
            f,
            tol,
            grid,
            common,
        } => {
            let sol = solve_theta(f, tol, grid)?;
            let summary = json!({
                "f": f,
                "theta": sol.theta,
                "y1": sol.y1,
                "c_f": sol.c_f,
                "breakpoints": sol.breakpoints,
                "success": sol.success,
            });
            match &common.out {
                Some(p) => {
                    fs::write(p, sol.to_json())?;
                    println!("{summary}");
                }
                None => println!("{summary}"),
            }
            note(&common, &format!("f = {f}: theta = {:.9}, y(1) = {:.6}", sol.theta, sol.y1));
            Ok(sol.success)
        }
        Cmd::PhiDump { f, points, common } => {
            if points < 2 {
                bail!("--points must be at least 2");
            }
            let t = PhiTables::new(solve_theta(f, DEFAULT_TOL_THETA, DEFAULT_GRID)?)?;
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["t", "phi", "G", "tau"])?;
            for k in 1..=points {
                let s = k as f64 / points as f64;
                w.write_record([s, t.phi(s)?, t.g_cdf(s), t.tau(s)].map(|v| v.to_string()))?;
            }
            emit(&common, &String::from_utf8(w.into_inner()?)?)?;
            note(&common, &format!("k1 = {:.6}, G(k1) - 1 = {:.2e}", t.k1, t.g_discrepancy));
            Ok(true)
        }
        Cmd::Gen {
            family,
            f,
            id,
            common,
        } => {
            let inst = family_instance(family, f, common.seed, id, None)?;
            emit(&common, &inst.to_json())?;
            note(&common, &format!("{} members", inst.n()));
            Ok(true)
        }
        Cmd::Dp { instance, f, common } => {
            let inst = read_instance(&instance)?;
            let table = solve_bellman(&inst, f)?;
            let m = inst.expected_max()?;
            if let Some(p) = &common.out {
                fs::write(p, serde_json::to_string(&table)?)?;
            }
            println!("{}", json!({ "phi00": table.phi00(), "expected_max": m, "ratio": table.phi00() / m }));
            note(&common, &format!("Phi_0(0) = {:.9}, ratio {:.6}", table.phi00(), table.phi00() / m));
            Ok(true)
        }
        Cmd::Reduce {
            instance,
            delta,
            no_discretize,
            monotonize: sort,
            common,
        } => {
            let inst = read_instance(&instance)?;
            let disc = if no_discretize { inst } else { discretize(&inst, delta)? };
            let mut out = split_to_bernoulli(&disc)?;
            if sort {
                out = monotonize(&out)?;
            }
            emit(&common, &out.to_json())?;
            note(&common, &format!("{} scaled Bernoulli members", out.n()));
            Ok(true)
        }
        Cmd::Lpcheck {
            sol,
            f,
            q,
            q_file,
            theta,
            common,
        } => {
            let ysol = match (sol, f) {
                (Some(p), _) => YSolution::from_json(&fs::read_to_string(&p)?)?,
                (None, Some(f)) => solve_theta(f, DEFAULT_TOL_THETA, DEFAULT_GRID)?,
                (None, None) => bail!("one of --sol or --f is required"),
            };
            let q = match (q, q_file) {
                (Some(s), _) => parse_list(&s)?,
                (None, Some(p)) => serde_json::from_str(&fs::read_to_string(&p)?)?,
                (None, None) => bail!("one of --q or --q-file is required"),
            };
            let t = PhiTables::new(ysol)?;
            let theta = theta.unwrap_or(t.theta());
            let dual = build_dual_solution(&t, &q)?;
            let v = check_constraints(&dual, theta);
            let feasible = v.max() <= 1e-5;
            if let Some(p) = &common.out {
                fs::write(p, serde_json::to_string(&json!({ "solution": dual, "violation": v }))?)?;
            }
            println!(
                "{}",
                json!({ "theta": theta, "max_violation": v.max(), "violation": v, "feasible": feasible })
            );
            note(&common, &format!("max violation {:.3e} at theta {theta:.6}", v.max()));
            Ok(feasible)
        }
        Cmd::Simulate {
            config,
            family,
            f,
            instances,
            reps,
            policies,
            common,
        } => {
            let mut cfg = match &config {
                Some(p) => SimConfig::parse(&fs::read_to_string(p)?)?,
                None => SimConfig::default(),
            };
            if config.is_none() || common.seed != 0 {
                cfg.seed = common.seed;
            }
            if let Some(fam) = family {
                cfg.family = fam;
            }
            if let Some(s) = f {
                cfg.f_values = parse_list(&s)?;
            }
            if let Some(n) = instances {
                cfg.n_instances = n;
            }
            if let Some(n) = reps {
                cfg.n_reps = n;
            }
            if let Some(p) = policies {
                cfg.policies = p.split(',').map(|s| s.trim().to_string()).collect();
            }
            if common.out.is_some() {
                cfg.output = common.out.clone();
            }
            let report = experiment(&cfg)?;
            let mut buf = Vec::new();
            report.write_csv(&mut buf)?;
            let csv = String::from_utf8(buf)?;
            match &cfg.output {
                Some(p) => fs::write(p, &csv)?,
                None if !common.json => print!("{csv}"),
                None => {}
            }
            let mut means: Vec<_> = report.mean_ratios().into_iter().collect();
            means.sort_by(|a, b| {
                let key = |k: &(String, String)| k.0.parse::<f64>().unwrap_or(f64::NAN);
                key(&a.0).total_cmp(&key(&b.0)).then_with(|| a.0 .1.cmp(&b.0 .1))
            });
            if common.json {
                let rows: Vec<_> = means
                    .iter()
                    .map(|((f, p), r)| json!({ "f": f, "policy": p, "mean_ratio": r }))
                    .collect();
                println!("{}", serde_json::Value::Array(rows));
            } else {
                for ((f, p), r) in &means {
                    eprintln!("f = {f:<6} {p:<20} {r:.4}");
                }
            }
            Ok(true)
        }
        Cmd::Verify { quick, common } => {
            let results = acceptance::run(common.seed, quick);
            for r in &results {
                note(&common, &r.line());
            }
            let ok = results.iter().all(|r| r.pass);
            let body = serde_json::to_string(&json!({ "pass": ok, "checks": results }))?;
            emit(&common, &body)?;
            Ok(ok)
        }
    }
}

fn main() -> ExitCode {
    // clap exits with status 2 on usage errors
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
