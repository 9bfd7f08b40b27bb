#![allow(dead_code)]

use rand::Rng;

use buyback_lab::distributions::{Distribution, Instance};

/// Random discrete instance with `n` members and up to `k` support points
/// drawn from a small lattice in `[0, 5]`, so ties across members occur.
pub fn random_discrete(rng: &mut impl Rng, n: usize, k: usize) -> Instance {
    let dists = (0..n)
        .map(|_| {
            let m = rng.gen_range(1..=k);
            let mut support: Vec<f64> = (0..m).map(|_| rng.gen_range(0..=20) as f64 * 0.25).collect();
            support.sort_by(f64::total_cmp);
            support.dedup();
            let w: Vec<f64> = support.iter().map(|_| rng.gen_range(0.1..1.0)).collect();
            let tot: f64 = w.iter().sum();
            let mut probs: Vec<f64> = w.iter().map(|x| x / tot).collect();
            let head: f64 = probs[..probs.len() - 1].iter().sum();
            *probs.last_mut().unwrap() = 1.0 - head;
            if support.len() == 1 {
                Distribution::point(support[0])
            } else {
                Distribution::discrete(support, probs).unwrap()
            }
        })
        .collect();
    Instance::new(dists).unwrap()
}

/// Every realization of a discrete instance with its probability.
pub fn realizations(inst: &Instance) -> Vec<(Vec<f64>, f64)> {
    let atoms: Vec<Vec<(f64, f64)>> = inst.dists.iter().map(|d| d.atoms().unwrap()).collect();
    let mut out = vec![(Vec::new(), 1.0)];
    for a in &atoms {
        out = out
            .into_iter()
            .flat_map(|(xs, p)| {
                a.iter().map(move |(v, q)| {
                    let mut ys = xs.clone();
                    ys.push(*v);
                    (ys, p * q)
                })
            })
            .collect();
    }
    out
}

/// `E[max]` by summing over all realizations.
pub fn enum_expected_max(inst: &Instance) -> f64 {
    realizations(inst)
        .iter()
        .map(|(xs, p)| p * xs.iter().copied().fold(0.0, f64::max))
        .sum()
}

/// Law of the maximum as sorted `(value, mass)` pairs, by enumeration.
pub fn enum_max_law(inst: &Instance) -> Vec<(f64, f64)> {
    let mut law: Vec<(f64, f64)> = Vec::new();
    for (xs, p) in realizations(inst) {
        let m = xs.iter().copied().fold(0.0, f64::max);
        match law.iter_mut().find(|(v, _)| *v == m) {
            Some(e) => e.1 += p,
            None => law.push((m, p)),
        }
    }
    law.sort_by(|a, b| a.0.total_cmp(&b.0));
    law
}

/// Two-variable intro instance: `1` then `(1+f) Ber(1/(1+f))`.
pub fn intro(f: f64) -> Instance {
    Instance::new(vec![
        Distribution::point(1.0),
        Distribution::bernoulli(1.0 + f, 1.0 / (1.0 + f)),
    ])
    .unwrap()
}
