use std::sync::Arc;
use std::time::Instant;

use approx::assert_abs_diff_eq;
use rand::Rng;

use buyback_lab::harness::*;
use buyback_lab::instances::two_var_hard;
use buyback_lab::ode::{solve_theta, DEFAULT_GRID, DEFAULT_TOL_THETA};

fn small(policies: &[&str], seed: u64) -> SimConfig {
    SimConfig {
        seed,
        f_values: vec![0.5, 2.0],
        n_instances: 3,
        n_reps: 50,
        policies: policies.iter().map(|s| s.to_string()).collect(),
        ..SimConfig::default()
    }
}

fn csv_bytes(report: &SimReport) -> Vec<u8> {
    let mut buf = Vec::new();
    report.write_csv(&mut buf).unwrap();
    buf
}

#[test]
fn dp_on_the_intro_instance() {
    let inst = Arc::new(two_var_hard(1.0).unwrap());
    let (ratio, se) = evaluate("dp", &inst, 1.0, 100_000, 7).unwrap();
    assert_abs_diff_eq!(ratio, 2.0 / 3.0, epsilon = 0.01);
    assert!(se.unwrap() < 0.005);
}

#[test]
fn median_on_the_intro_instance() {
    let inst = Arc::new(two_var_hard(1.0).unwrap());
    let (ratio, _) = evaluate("median", &inst, 1.0, 100_000, 8).unwrap();
    assert!(ratio >= 0.49, "{ratio}");
}

#[test]
fn one_rep_has_no_stderr() {
    let inst = Arc::new(two_var_hard(1.0).unwrap());
    assert_eq!(evaluate("dp", &inst, 1.0, 1, 9).unwrap().1, None);
    let (_, _, _, se) = ratio_stats(&[1.0], &[2.0]);
    assert_eq!(se, None);
}

#[test]
fn unknown_names_are_errors() {
    let inst = Arc::new(two_var_hard(1.0).unwrap());
    assert!(matches!(evaluate("nope", &inst, 1.0, 10, 0), Err(HarnessError::UnknownPolicy(_))));
    assert!(matches!(experiment(&small(&["oa", "nope"], 0)), Err(HarnessError::UnknownPolicy(_))));
    let mut cfg = small(&["median"], 0);
    cfg.n_reps = 0;
    assert!(experiment(&cfg).is_err());
    assert!("bogus".parse::<Family>().is_err());
}

#[test]
fn ratio_stats_by_hand() {
    let net = [1.0, 2.0, 3.0];
    let opt = [2.0, 2.0, 5.0];
    let (mn, mo, r, se) = ratio_stats(&net, &opt);
    assert_abs_diff_eq!(mn, 2.0, epsilon = 1e-15);
    assert_abs_diff_eq!(mo, 3.0, epsilon = 1e-15);
    assert_abs_diff_eq!(r, 2.0 / 3.0, epsilon = 1e-15);
    // residuals net - r opt = -1/3, 2/3, -1/3; variance 1/3 with n - 1 = 2
    let want = ((1.0 / 3.0) / 3.0f64).sqrt() / 3.0;
    assert_abs_diff_eq!(se.unwrap(), want, epsilon = 1e-15);
}

#[test]
fn quantiles_interpolate() {
    let v = [1.0, 2.0, 3.0, 4.0, 5.0];
    assert_eq!(quantile_sorted(&v, 0.25), 2.0);
    assert_eq!(quantile_sorted(&v, 0.5), 3.0);
    assert_eq!(quantile_sorted(&[1.0, 2.0], 0.5), 1.5);
    assert!(quantile_sorted(&[], 0.5).is_nan());
}

#[test]
fn csv_shape_and_order() {
    let cfg = small(&["oa", "median", "tg"], 3);
    let report = experiment(&cfg).unwrap();
    assert_eq!(report.rows.len(), 2 * 3 * 3);
    let text = String::from_utf8(csv_bytes(&report)).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "f,instance_id,policy,mean_net,mean_opt,ratio,stderr,q1,median,q3");
    assert_eq!(lines.count(), 18);
    let keys: Vec<(f64, usize, &str)> = report.rows.iter().map(|r| (r.f, r.instance_id, r.policy.as_str())).collect();
    assert_eq!(keys[0], (0.5, 0, "oa"));
    assert_eq!(keys[1], (0.5, 0, "median"));
    assert_eq!(keys[3], (0.5, 1, "oa"));
    assert_eq!(keys[17], (2.0, 2, "tg"));
    for r in &report.rows {
        assert_abs_diff_eq!(r.ratio, r.mean_net / r.mean_opt, epsilon = 1e-12);
        assert!(r.q1 <= r.median && r.median <= r.q3);
        // quartiles come from this row's (f, policy) group
        let group: Vec<f64> = report
            .rows
            .iter()
            .filter(|s| s.f == r.f && s.policy == r.policy)
            .map(|s| s.ratio)
            .collect();
        let lo = group.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = group.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert!(r.q1 >= lo && r.q3 <= hi);
    }
}

#[test]
fn repeat_runs_are_byte_identical() {
    let cfg = small(&["oa", "bk", "bhk"], 11);
    let a = csv_bytes(&experiment(&cfg).unwrap());
    let b = csv_bytes(&experiment(&cfg).unwrap());
    assert_eq!(a, b);
    let c = csv_bytes(&experiment(&small(&["oa", "bk", "bhk"], 12)).unwrap());
    assert_ne!(a, c);
}

#[test]
fn policies_share_realizations() {
    let cfg = small(&["oa", "median", "tg", "bhk"], 5);
    let report = experiment(&cfg).unwrap();
    for r in &report.rows {
        let first = report
            .rows
            .iter()
            .find(|s| s.f == r.f && s.instance_id == r.instance_id)
            .unwrap();
        assert_eq!(r.mean_opt.to_bits(), first.mean_opt.to_bits());
    }
    // and adding a policy leaves the others untouched
    let fewer = experiment(&small(&["oa", "tg"], 5)).unwrap();
    for r in &fewer.rows {
        let same = report
            .rows
            .iter()
            .find(|s| s.f == r.f && s.instance_id == r.instance_id && s.policy == r.policy)
            .unwrap();
        assert_eq!(r.mean_net.to_bits(), same.mean_net.to_bits());
    }
}

#[test]
fn streams_depend_on_every_key() {
    let draw = |s, i, r, n: &str| stream_rng(s, i, r, n).gen::<u64>();
    let base = draw(1, 2, 3, "a");
    assert_eq!(base, draw(1, 2, 3, "a"));
    for other in [draw(0, 2, 3, "a"), draw(1, 0, 3, "a"), draw(1, 2, 0, "a"), draw(1, 2, 3, "b")] {
        assert_ne!(base, other);
    }
}

#[test]
fn family_instances_are_deterministic() {
    for fam in ["gpd", "bounded", "two", "three", "indiff", "multistage"] {
        let family: Family = fam.parse().unwrap();
        let f = if family == Family::Multistage { 1.0 / 512.0 } else { 0.5 };
        let a = family_instance(family, f, 4, 2, None).unwrap();
        let b = family_instance(family, f, 4, 2, None).unwrap();
        assert_eq!(a, b, "{fam}");
    }
    let a = family_instance(Family::Gpd, 1.0, 4, 2, None).unwrap();
    let b = family_instance(Family::Gpd, 1.0, 4, 3, None).unwrap();
    assert_ne!(a, b);
}

#[test]
fn config_parse() {
    let cfg = SimConfig::parse(
        "# reduced run\nseed = 42\nf_values = 0.5, 1, 2\nn_instances = 7\nn_reps = 300\npolicies = oa,tg\nfamily = bounded\noutput = out.csv\n",
    )
    .unwrap();
    assert_eq!(cfg.seed, 42);
    assert_eq!(cfg.f_values, vec![0.5, 1.0, 2.0]);
    assert_eq!(cfg.n_instances, 7);
    assert_eq!(cfg.n_reps, 300);
    assert_eq!(cfg.policies, vec!["oa", "tg"]);
    assert_eq!(cfg.family, Family::Bounded);
    assert_eq!(cfg.output.as_deref(), Some(std::path::Path::new("out.csv")));
    let d = SimConfig::parse("").unwrap();
    assert_eq!(d.f_values, DEFAULT_F_GRID.to_vec());
    assert_eq!((d.n_instances, d.n_reps), (100, 500));
    assert!(SimConfig::parse("seed 4").is_err());
    assert!(SimConfig::parse("colour = red").is_err());
    assert!(SimConfig::parse("n_reps = many").is_err());
}

#[test]
fn reduced_default_experiment() {
    let cfg = SimConfig {
        seed: 2024,
        n_instances: 20,
        n_reps: 500,
        ..SimConfig::default()
    };
    let start = Instant::now();
    let report = experiment(&cfg).unwrap();
    assert!(start.elapsed().as_secs() < 300);
    assert_eq!(report.rows.len(), DEFAULT_F_GRID.len() * 20 * DEFAULT_POLICIES.len());
    let means = report.mean_ratios();
    for f in DEFAULT_F_GRID {
        let theta = solve_theta(f, DEFAULT_TOL_THETA, DEFAULT_GRID).unwrap().theta;
        let oa = means[&(format!("{f}"), "oa".to_string())];
        assert!(oa >= theta - 0.02, "f {f}: oa {oa} vs theta {theta}");
    }
}
