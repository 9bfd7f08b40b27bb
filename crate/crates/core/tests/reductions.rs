mod common;

use approx::assert_abs_diff_eq;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use buyback_lab::distributions::{Distribution, Instance};
use buyback_lab::dp::optimal_value;
use buyback_lab::reductions::{discretization_grid, discretize, monotonize, split_to_bernoulli};

use common::{enum_expected_max, enum_max_law, random_discrete};

fn values(inst: &Instance) -> Vec<f64> {
    inst.dists
        .iter()
        .map(|d| match d {
            Distribution::ScaledBernoulli { value, .. } => *value,
            other => panic!("{other:?}"),
        })
        .collect()
}

#[test]
fn split_example() {
    let x = Distribution::discrete(vec![0.0, 1.0, 2.0], vec![0.5, 0.25, 0.25]).unwrap();
    let inst = Instance::new(vec![x]).unwrap();
    let out = split_to_bernoulli(&inst).unwrap();
    assert_eq!(out.n(), 2);
    match (&out.dists[0], &out.dists[1]) {
        (
            Distribution::ScaledBernoulli { value: v1, prob: q1 },
            Distribution::ScaledBernoulli { value: v2, prob: q2 },
        ) => {
            assert_eq!((*v1, *v2), (1.0, 2.0));
            assert_abs_diff_eq!(*q1, 1.0 / 3.0, epsilon = 1e-15);
            assert_abs_diff_eq!(*q2, 0.25, epsilon = 1e-15);
        }
        other => panic!("{other:?}"),
    }
    let a = enum_max_law(&inst);
    let b = enum_max_law(&out);
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.0, y.0);
        assert_abs_diff_eq!(x.1, y.1, epsilon = 1e-12);
    }
}

#[test]
fn split_trivial_members() {
    let b = Instance::new(vec![Distribution::bernoulli(2.0, 0.3)]).unwrap();
    assert_eq!(split_to_bernoulli(&b).unwrap(), b);
    let p = Instance::new(vec![Distribution::point(4.0)]).unwrap();
    assert_eq!(split_to_bernoulli(&p).unwrap().dists, vec![Distribution::bernoulli(4.0, 1.0)]);
    let g = Instance::new(vec![Distribution::gpd(0.0, 1.0, 0.0).unwrap()]).unwrap();
    assert!(split_to_bernoulli(&g).is_err());
}

#[test]
fn monotonize_examples() {
    let inst = Instance::new(vec![
        Distribution::bernoulli(3.0, 0.2),
        Distribution::bernoulli(1.0, 0.5),
        Distribution::bernoulli(2.0, 0.4),
    ])
    .unwrap();
    let out = monotonize(&inst).unwrap();
    assert_eq!(values(&out), vec![1.0, 2.0, 3.0]);
    assert_eq!(monotonize(&out).unwrap(), out);
}

#[test]
fn discretize_gpd_member() {
    let inst = Instance::new(vec![Distribution::gpd(0.0, 1.0, -0.5).unwrap()]).unwrap();
    let out = discretize(&inst, 0.01).unwrap();
    // direct atom sum against the closed-form GPD mean
    let atoms = out.dists[0].atoms().unwrap();
    let m: f64 = atoms.iter().map(|(v, p)| v * p).sum();
    let r = m / (2.0 / 3.0);
    assert!((0.99..=1.02).contains(&r), "ratio {r}");
}

#[test]
fn discretize_point_mass_rounds_up() {
    let inst = Instance::new(vec![Distribution::point(1.0), Distribution::point(3.0)]).unwrap();
    let grid = discretization_grid(&inst, 0.05).unwrap();
    let out = discretize(&inst, 0.05).unwrap();
    for (d, v) in out.dists.iter().zip([1.0, 3.0]) {
        let atoms = d.atoms().unwrap();
        assert_eq!(atoms.len(), 1);
        let want = grid.iter().copied().find(|g| *g >= v).unwrap_or(*grid.last().unwrap());
        assert_eq!(atoms[0].0, want);
    }
}

#[test]
fn discretize_lands_on_grid_and_rounds_up() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..20 {
        let n = rng.gen_range(1..=4);
        let inst = random_discrete(&mut rng, n, 3);
        if enum_expected_max(&inst) == 0.0 {
            continue;
        }
        let delta = 0.05;
        let grid = discretization_grid(&inst, delta).unwrap();
        let out = discretize(&inst, delta).unwrap();
        let top = *grid.last().unwrap();
        for (a, b) in inst.dists.iter().zip(&out.dists) {
            for (v, _) in b.atoms().unwrap() {
                assert!(v == 0.0 || grid.contains(&v));
            }
            // rounding up: first-order dominance below the cap
            for g in &grid {
                if *g < top {
                    assert!(b.cdf(*g) <= a.cdf(*g) + 1e-12);
                }
            }
        }
        let (m, m2) = (enum_expected_max(&inst), enum_expected_max(&out));
        assert!(m2 <= (1.0 + 2.0 * delta) * m + 1e-12 && m2 >= (1.0 - delta) * m - 1e-12, "{m} -> {m2}");
    }
}

#[test]
fn rejects_bad_delta() {
    let inst = Instance::new(vec![Distribution::point(1.0)]).unwrap();
    assert!(discretize(&inst, 0.0).is_err());
    assert!(discretize(&inst, 0.7).is_err());
}

#[test]
fn monotonize_never_helps() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    for _ in 0..100 {
        let n = rng.gen_range(2..=6);
        let inst = Instance::new(
            (0..n)
                .map(|_| Distribution::bernoulli(rng.gen_range(1..=12) as f64 * 0.5, rng.gen_range(0.05..1.0)))
                .collect(),
        )
        .unwrap();
        let f = rng.gen_range(0.05..3.0);
        let a = optimal_value(&inst, f).unwrap();
        let b = optimal_value(&monotonize(&inst).unwrap(), f).unwrap();
        assert!(b <= a + 1e-9, "{b} > {a}");
    }
}

#[test]
fn full_chain_within_slack() {
    // original ratio >= reduced ratio - 3 delta
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let delta = 0.01;
    for _ in 0..20 {
        let n = rng.gen_range(1..=3);
        let inst = random_discrete(&mut rng, n, 3);
        let m = enum_expected_max(&inst);
        if m == 0.0 {
            continue;
        }
        let f = rng.gen_range(0.1..2.0);
        let reduced = monotonize(&split_to_bernoulli(&discretize(&inst, delta).unwrap()).unwrap()).unwrap();
        let v = values(&reduced);
        assert!(v.windows(2).all(|w| w[0] <= w[1]));
        let r0 = optimal_value(&inst, f).unwrap() / m;
        let r1 = optimal_value(&reduced, f).unwrap() / reduced.expected_max().unwrap();
        assert!(r0 >= r1 - 3.0 * delta, "{r0} vs {r1}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn splitting_preserves_the_max(seed in any::<u64>(), n in 1usize..4, f in 0.05f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = random_discrete(&mut rng, n, 4);
        let out = split_to_bernoulli(&inst).unwrap();
        prop_assert!((enum_expected_max(&inst) - enum_expected_max(&out)).abs() < 1e-12);
        prop_assert!((inst.expected_max().unwrap() - out.expected_max().unwrap()).abs() < 1e-12);
        // a split instance is never easier
        prop_assert!(optimal_value(&out, f).unwrap() <= optimal_value(&inst, f).unwrap() + 1e-9);
    }
}
