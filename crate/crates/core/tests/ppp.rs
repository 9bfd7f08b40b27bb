use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use buyback_lab::distributions::Distribution;
use buyback_lab::ppp::{online_ppp_run, sample_interval_ppp, sample_scale_invariant, OnlinePpp};

fn moments(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v)
}

fn gpds() -> Vec<Distribution> {
    vec![
        Distribution::gpd(0.0, 1.0, -0.5).unwrap(),
        Distribution::gpd(0.0, 2.0, 0.2).unwrap(),
        Distribution::gpd(0.0, 0.5, 0.0).unwrap(),
    ]
}

/// Two-sample Kolmogorov-Smirnov statistic.
fn ks2(mut a: Vec<f64>, mut b: Vec<f64>) -> f64 {
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len(), b.len());
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < n && j < m {
        let x = a[i].min(b[j]);
        while i < n && a[i] <= x {
            i += 1;
        }
        while j < m && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    d
}

#[test]
fn empty_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    assert!(sample_scale_invariant(&mut rng, 0.4, 0.4).is_empty());
    assert!(sample_interval_ppp(&mut rng, &[], 0.5, 2.0).unwrap().is_empty());
}

#[test]
fn point_mass_suffix_is_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let d = [Distribution::point(1.0)];
    assert!(sample_interval_ppp(&mut rng, &d, 0.5, 2.0).is_err());
}

#[test]
fn scale_invariant_counts_are_poisson() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let runs = 100_000;
    let a = (-1f64).exp();
    let counts: Vec<f64> = (0..runs)
        .map(|_| {
            let s = sample_scale_invariant(&mut rng, a, 1.0);
            assert!(s.points.windows(2).all(|w| w[0] < w[1]));
            assert!(s.points.iter().all(|p| *p > a && *p <= 1.0));
            s.len() as f64
        })
        .collect();
    let (m, v) = moments(&counts);
    assert!((m - 1.0).abs() < 0.03, "mean {m}");
    assert!((v - 1.0).abs() < 0.05, "var {v}");
}

#[test]
fn disjoint_counts_uncorrelated() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let runs = 100_000;
    let (mut x, mut y) = (Vec::with_capacity(runs), Vec::with_capacity(runs));
    for _ in 0..runs {
        let s = sample_scale_invariant(&mut rng, 0.1, 1.0);
        x.push(s.count_in(0.1, 0.3) as f64);
        y.push(s.count_in(0.3, 1.0) as f64);
    }
    let (mx, vx) = moments(&x);
    let (my, vy) = moments(&y);
    let cov = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / (runs as f64 - 1.0);
    let rho = cov / (vx * vy).sqrt();
    assert!(rho.abs() < 0.02, "rho {rho}");
}

#[test]
fn interval_counts_match_intensity() {
    let d = gpds();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let runs = 100_000;
    let (lo, hi) = (0.2, 3.0);
    let buckets = [(0.2, 0.5), (0.5, 1.0), (1.0, 3.0)];
    let mut counts = vec![Vec::with_capacity(runs); buckets.len()];
    for _ in 0..runs {
        let s = sample_interval_ppp(&mut rng, &d, lo, hi).unwrap();
        assert!(s.points.iter().all(|p| *p > lo && *p <= hi));
        for (k, (a, b)) in buckets.iter().enumerate() {
            counts[k].push(s.count_in(*a, *b) as f64);
        }
    }
    for (k, (a, b)) in buckets.iter().enumerate() {
        let mu: f64 = d.iter().map(|r| (r.cdf(*b) / r.cdf(*a)).ln()).sum();
        let (m, v) = moments(&counts[k]);
        let se = (mu / runs as f64).sqrt();
        assert!((m - mu).abs() < 3.0 * se, "bucket {k}: {m} vs {mu}");
        assert!((v - mu).abs() < 0.05 * mu.max(0.2), "bucket {k}: var {v} vs {mu}");
    }
}

#[test]
fn mapped_max_point_has_the_member_law() {
    // the top point of a unit-rate scale-invariant PPP on (a, 1] in quantile
    // space is distributed as F itself above F^{-1}(a)
    let d = Distribution::gpd(0.0, 1.0, -0.5).unwrap();
    let lo = d.quantile(0.1).unwrap();
    let hi = d.upper_bound();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let runs = 10_000;
    let mut via_ppp = Vec::with_capacity(runs);
    let mut direct = Vec::with_capacity(runs);
    for _ in 0..runs {
        let s = sample_interval_ppp(&mut rng, std::slice::from_ref(&d), lo, hi).unwrap();
        via_ppp.push(s.points.last().copied().unwrap_or(lo));
        direct.push(d.sample(&mut rng).max(lo));
    }
    let stat = ks2(via_ppp, direct);
    // critical value at level 1e-3
    let crit = (-(1e-3f64 / 2.0).ln() / 2.0).sqrt() * (2.0 / runs as f64).sqrt();
    assert!(stat < crit, "KS {stat} >= {crit}");
}

#[test]
fn online_step_rules() {
    let d = gpds();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut st = OnlinePpp::new(0.05);
    let first = st.step(&mut rng, &d, 0, 0.8).unwrap();
    assert_eq!(*first.points.last().unwrap(), 0.8);
    assert_eq!(st.peak, 0.8);
    assert!(st.step(&mut rng, &d, 1, 0.5).unwrap().is_empty());
    assert!(st.step(&mut rng, &d, 1, 0.8).unwrap().is_empty());
    let up = st.step(&mut rng, &d, 2, 1.4).unwrap();
    assert_eq!(*up.points.last().unwrap(), 1.4);
    assert!(up.points.iter().all(|p| *p > 0.8 && *p <= 1.4));
}

#[test]
fn online_union_is_poisson() {
    let d = gpds();
    let floor = 0.3;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let runs = 100_000;
    let buckets = [(0.3, 0.8), (0.8, 1.5), (1.5, 4.0)];
    let mut counts = vec![Vec::with_capacity(runs); buckets.len()];
    for _ in 0..runs {
        let x: Vec<f64> = d.iter().map(|r| r.sample(&mut rng)).collect();
        let s = online_ppp_run(&mut rng, &d, &x, floor).unwrap();
        for (k, (a, b)) in buckets.iter().enumerate() {
            counts[k].push(s.count_in(*a, *b) as f64);
        }
    }
    for (k, (a, b)) in buckets.iter().enumerate() {
        let mu: f64 = d.iter().map(|r| (r.cdf(*b) / r.cdf(*a)).ln()).sum();
        let (m, v) = moments(&counts[k]);
        let se = (mu / runs as f64).sqrt();
        assert!((m - mu).abs() < 3.0 * se, "bucket {k}: {m} vs {mu}");
        assert!((v - mu).abs() < 0.05 * mu.max(0.2), "bucket {k}: var {v} vs {mu}");
    }
}

#[test]
fn seeded_runs_are_identical() {
    let d = gpds();
    let run = |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = d.iter().map(|r| r.sample(&mut rng)).collect();
        online_ppp_run(&mut rng, &d, &x, 0.1).unwrap().points
    };
    for seed in 0..20 {
        let (a, b) = (run(seed), run(seed));
        assert_eq!(a.len(), b.len());
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}
