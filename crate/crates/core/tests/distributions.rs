use approx::assert_abs_diff_eq;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use buyback_lab::distributions::{Distribution, Instance};

fn intro(f: f64) -> Instance {
    Instance::new(vec![
        Distribution::point(1.0),
        Distribution::bernoulli(1.0 + f, 1.0 / (1.0 + f)),
    ])
    .unwrap()
}

#[test]
fn cdf_examples() {
    assert_abs_diff_eq!(Distribution::bernoulli(2.0, 0.3).cdf(1.0), 0.7, epsilon = 1e-15);
    assert_eq!(Distribution::point(5.0).cdf(4.9), 0.0);
    let e = Distribution::gpd(0.0, 1.0, 0.0).unwrap();
    // density integrated numerically
    let num = quadrature::integrate(|x: f64| (-x).exp(), 0.0, 1.0, 1e-12).integral;
    assert_abs_diff_eq!(e.cdf(1.0), num, epsilon = 1e-10);
    assert_abs_diff_eq!(e.cdf(1.0), 0.6321205588, epsilon = 1e-9);
}

#[test]
fn quantile_examples() {
    let b = Distribution::bernoulli(2.0, 0.3);
    assert_eq!(b.quantile(0.7).unwrap(), 0.0);
    assert_eq!(b.quantile(0.71).unwrap(), 2.0);
    let e = Distribution::gpd(0.0, 1.0, 0.0).unwrap();
    assert_abs_diff_eq!(e.quantile(1.0 - (-1f64).exp()).unwrap(), 1.0, epsilon = 1e-10);
}

#[test]
fn degenerate_samples() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        assert_eq!(Distribution::point(5.0).sample(&mut rng), 5.0);
        assert_eq!(Distribution::bernoulli(1.0, 1.0).sample(&mut rng), 1.0);
    }
}

#[test]
fn gpd_sample_mean() {
    let d = Distribution::gpd(0.0, 1.0, -0.5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 100_000;
    let xs: Vec<f64> = (0..n).map(|_| d.sample(&mut rng)).collect();
    let m = xs.iter().sum::<f64>() / n as f64;
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
    let se = (var / n as f64).sqrt();
    assert!((m - 2.0 / 3.0).abs() < 3.0 * se, "mean {m}, se {se}");
    assert_abs_diff_eq!(d.mean().unwrap(), 2.0 / 3.0, epsilon = 1e-12);
}

#[test]
fn max_cdf_examples() {
    let pm = Instance::new(vec![Distribution::point(1.0), Distribution::point(2.0)]).unwrap();
    assert_eq!(pm.max_cdf(1.5), 0.0);
    assert_abs_diff_eq!(intro(1.0).max_cdf(1.0), 0.5, epsilon = 1e-15);
    let one = Instance::new(vec![Distribution::bernoulli(2.0, 0.3)]).unwrap();
    assert_eq!(one.max_cdf(3.0), 1.0);
}

#[test]
fn expected_max_examples() {
    for f in [0.5, 1.0, 2.0] {
        assert_abs_diff_eq!(
            intro(f).expected_max().unwrap(),
            (2.0 * f + 1.0) / (f + 1.0),
            epsilon = 1e-12
        );
    }
    let single = Instance::new(vec![Distribution::point(5.0)]).unwrap();
    assert_eq!(single.expected_max().unwrap(), 5.0);
}

#[test]
fn gpd_instance_expected_max_monte_carlo() {
    let inst = Instance::new(vec![
        Distribution::gpd(1.0, 2.0, -0.3).unwrap(),
        Distribution::gpd(0.5, 1.0, 0.2).unwrap(),
        Distribution::gpd(3.0, 0.5, 0.0).unwrap(),
    ])
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 1_000_000;
    let (mut s, mut s2) = (0.0, 0.0);
    for _ in 0..n {
        let m = inst.sample(&mut rng).into_iter().fold(0.0, f64::max);
        s += m;
        s2 += m * m;
    }
    let mean = s / n as f64;
    let se = ((s2 / n as f64 - mean * mean) / n as f64).sqrt();
    let em = inst.expected_max().unwrap();
    assert!((em - mean).abs() < 3.0 * se, "{em} vs {mean} +- {se}");
}

#[test]
fn monotone_bernoulli_expected_max_closed_form() {
    let vq = [(1.0, 0.4), (1.5, 0.3), (2.5, 0.2), (4.0, 0.1)];
    let inst = Instance::new(vq.iter().map(|&(v, q)| Distribution::bernoulli(v, q)).collect()).unwrap();
    let closed: f64 = (0..vq.len())
        .map(|i| vq[i].0 * vq[i].1 * vq[i + 1..].iter().map(|(_, q)| 1.0 - q).product::<f64>())
        .sum();
    assert_abs_diff_eq!(inst.expected_max().unwrap(), closed, epsilon = 1e-9);
}

#[test]
fn dkw_band() {
    // sup |F_n - F| <= sqrt(ln(2/alpha) / (2n)) with probability 1 - alpha
    let n = 100_000;
    let eps = ((2.0f64 / 1e-3).ln() / (2.0 * n as f64)).sqrt();
    let dists = [
        Distribution::gpd(0.0, 1.0, -0.5).unwrap(),
        Distribution::gpd(2.0, 3.0, 0.3).unwrap(),
        Distribution::gpd(0.0, 1.0, 0.0).unwrap(),
        Distribution::discrete(vec![0.0, 1.0, 3.0], vec![0.2, 0.5, 0.3]).unwrap(),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for d in &dists {
        let mut xs: Vec<f64> = (0..n).map(|_| d.sample(&mut rng)).collect();
        xs.sort_by(f64::total_cmp);
        let mut worst: f64 = 0.0;
        let mut i = 0;
        while i < n {
            let mut j = i;
            while j + 1 < n && xs[j + 1] == xs[i] {
                j += 1;
            }
            let f = d.cdf(xs[i]);
            worst = worst.max((f - (j + 1) as f64 / n as f64).abs());
            worst = worst.max((d.cdf(xs[i].next_down()) - i as f64 / n as f64).abs());
            i = j + 1;
        }
        assert!(worst < eps, "{d:?}: {worst} >= {eps}");
    }
}

#[test]
fn json_shape() {
    let inst = Instance::new(vec![
        Distribution::bernoulli(2.0, 0.5),
        Distribution::gpd(0.0, 1.0, 0.1).unwrap(),
    ])
    .unwrap();
    let v: serde_json::Value = serde_json::from_str(&inst.to_json()).unwrap();
    assert_eq!(v["dists"][0]["kind"], "bernoulli");
    assert_eq!(v["dists"][0]["v"], 2.0);
    assert_eq!(v["dists"][0]["q"], 0.5);
    assert_eq!(v["dists"][1]["kind"], "gpd");
    assert_eq!(v["dists"][1]["xi"], 0.1);
    assert_eq!(Instance::from_json(&inst.to_json()).unwrap(), inst);
}

#[test]
fn rejects_bad_parameters() {
    assert!(Distribution::gpd(0.0, 0.0, 0.1).is_err());
    assert!(Distribution::discrete(vec![1.0, 0.5], vec![0.5, 0.5]).is_err());
    assert!(Distribution::discrete(vec![0.0, 1.0], vec![0.5, 0.4]).is_err());
    assert!(Instance::new(vec![]).is_err());
}

fn any_dist() -> impl Strategy<Value = Distribution> {
    prop_oneof![
        (0.1f64..5.0, 0.01f64..1.0).prop_map(|(v, q)| Distribution::bernoulli(v, q)),
        (0.0f64..5.0).prop_map(Distribution::point),
        (0.0f64..5.0, 0.1f64..3.0, -0.8f64..0.5).prop_map(|(m, s, x)| Distribution::gpd(m, s, x).unwrap()),
        proptest::collection::vec((0.0f64..10.0, 0.05f64..1.0), 1..5).prop_map(|mut a| {
            a.sort_by(|x, y| x.0.total_cmp(&y.0));
            a.dedup_by(|x, y| x.0 == y.0);
            let tot: f64 = a.iter().map(|p| p.1).sum();
            let mut probs: Vec<f64> = a.iter().map(|p| p.1 / tot).collect();
            let head: f64 = probs[..probs.len() - 1].iter().sum();
            *probs.last_mut().unwrap() = 1.0 - head;
            Distribution::discrete(a.into_iter().map(|p| p.0).collect(), probs).unwrap()
        }),
    ]
}

proptest! {
    #[test]
    fn cdf_monotone_and_quantile_inverse(d in any_dist()) {
        let lo = d.lower_bound().max(0.0) - 1.0;
        let hi = if d.upper_bound().is_finite() { d.upper_bound() + 1.0 } else { d.quantile(0.999).unwrap() + 1.0 };
        let mut prev = 0.0;
        for k in 0..1000 {
            let x = lo + (hi - lo) * k as f64 / 999.0;
            let c = d.cdf(x);
            prop_assert!((0.0..=1.0).contains(&c));
            prop_assert!(c >= prev - 1e-15);
            prev = c;
            // 1 - c loses all precision deep in the tail
            if c > 0.0 && c < 1.0 - 1e-6 {
                prop_assert!(d.quantile(c).unwrap() <= x + 1e-9 * x.abs().max(1.0));
            }
        }
    }
}
