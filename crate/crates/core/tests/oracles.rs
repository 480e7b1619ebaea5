//! Distributional oracles: sampled marks against their Poisson laws, and
//! death times against closed forms.

use mtcp_core::paths::death_time;
use mtcp_core::stats::{chi_square_gof, mean_ci};
use mtcp_core::{sample_harris, sample_symmetric, LatticeWindow};
use statrs::distribution::{Discrete, Poisson};

/// Chi-square fit of counts to Poisson(mean), cells 0..=cap with the tail
/// folded into the last one.
fn poisson_fit(counts: &[usize], mean: f64) -> f64 {
    let cap = (mean + 6.0 * mean.sqrt()).ceil() as usize + 2;
    let mut observed = vec![0.0; cap + 1];
    for &c in counts {
        observed[c.min(cap)] += 1.0;
    }
    let law = Poisson::new(mean).unwrap();
    let n = counts.len() as f64;
    let mut expected: Vec<f64> = (0..=cap).map(|k| n * law.pmf(k as u64)).collect();
    let head: f64 = expected[..cap].iter().sum();
    expected[cap] = n - head;
    chi_square_gof(&observed, &expected).p_value
}

#[test]
fn mark_counts_are_poisson_with_the_right_means() {
    let (l1, l2, t) = (2.5, 1.5, 2.0);
    let w = LatticeWindow::line(3, 1, t).unwrap();
    let (mut deaths, mut arrows, mut selective) = (Vec::new(), Vec::new(), Vec::new());
    for seed in 0..2000 {
        let h = sample_harris(&w, l1, l2, seed).unwrap();
        deaths.extend((0..w.n_sites()).map(|x| h.deaths_at(x).len()));
        arrows.extend((0..w.n_edges()).map(|e| h.arrows_on(e).len()));
        selective.extend((0..w.n_edges()).map(|e| h.selective_on(e).len()));
    }
    for (name, counts, mean) in [("deaths", &deaths, t), ("arrows", &arrows, l2 * t), ("selective", &selective, (l1 - l2) * t)] {
        let p = poisson_fit(counts, mean);
        assert!(p > 1e-3, "{name}: p = {p}");
    }
}

#[test]
fn mark_times_are_uniform() {
    let t = 4.0;
    let w = LatticeWindow::line(5, 1, t).unwrap();
    let bins = 16;
    let mut observed = vec![0.0; bins];
    for seed in 0..300 {
        for e in sample_harris(&w, 2.0, 1.0, seed).unwrap().events() {
            observed[((e.time / t * bins as f64) as usize).min(bins - 1)] += 1.0;
        }
    }
    let n: f64 = observed.iter().sum();
    let p = chi_square_gof(&observed, &vec![n / bins as f64; bins]).p_value;
    assert!(p > 1e-3, "p = {p}");
}

#[test]
fn arrow_directions_are_balanced() {
    let w = LatticeWindow::line(1, 1, 50.0).unwrap();
    let (mut right, mut left) = (0.0, 0.0);
    for seed in 0..200 {
        let h = sample_harris(&w, 2.0, 1.0, seed).unwrap();
        for e in h.events().iter().filter(|e| e.from != e.to) {
            if w.point(e.to as usize)[0] > w.point(e.from as usize)[0] {
                right += 1.0;
            } else {
                left += 1.0;
            }
        }
    }
    let half = (right + left) / 2.0;
    let p = chi_square_gof(&[right, left], &[half, half]).p_value;
    assert!(p > 1e-3, "p = {p}");
}

#[test]
fn isolated_site_dies_after_an_exponential_time() {
    // without arrows the origin lives an Exp(1) time; E[min(X, T)] = 1 − e^{−T}
    let t = 3.0;
    let w = LatticeWindow::line(2, 1, t).unwrap();
    let o = w.index(&[0]).unwrap();
    let ends: Vec<f64> = (0..20_000)
        .map(|seed| death_time(&sample_symmetric(&w, 0.0, seed).unwrap(), &[o]).unwrap().finite().unwrap_or(t))
        .collect();
    let ci = mean_ci(&ends, 0.999);
    let exact = 1.0 - (-t).exp();
    assert!(ci.lo <= exact && exact <= ci.hi, "{ci:?} vs {exact}");
    let censored = ends.iter().filter(|&&x| x == t).count() as f64 / ends.len() as f64;
    assert!((censored - (-t).exp()).abs() < 0.01, "censored fraction {censored}");
}

#[test]
fn two_site_death_time_matches_the_generator() {
    // two sites, rate-λ arrows both ways, start from both occupied: the
    // occupied count is a chain 2 → 1 at rate 2, 1 → 2 at rate λ, 1 → 0 at
    // rate 1, so E[T] solves m2 = 1/2 + m1, m1 = 1/(1+λ) + λ/(1+λ)·m2.
    let lambda = 1.5;
    let m1 = 1.0 + lambda / 2.0;
    let m2 = 0.5 + m1;
    let w = LatticeWindow::new(1, 1, 1, 60.0).unwrap();
    let sites: Vec<usize> = (0..w.n_sites()).filter(|&i| w.point(i)[0] >= 0).collect();
    assert_eq!(sites.len(), 2);
    let ends: Vec<f64> = (0..20_000)
        .map(|seed| {
            let h = sample_symmetric(&w, lambda, seed).unwrap();
            let h = two_site_restriction(&h, &sites);
            death_time(&h, &sites).unwrap().finite().expect("dies well before the horizon")
        })
        .collect();
    let ci = mean_ci(&ends, 0.999);
    assert!(ci.lo <= m2 && m2 <= ci.hi, "{ci:?} vs {m2}");
}

/// Drops every mark that touches the third site, leaving an isolated pair.
fn two_site_restriction(h: &mtcp_core::AugmentedHarrisSystem, keep: &[usize]) -> mtcp_core::AugmentedHarrisSystem {
    let w = h.window();
    let mut b = mtcp_core::HarrisBuilder::new(w.clone(), h.lambda1(), h.lambda2());
    for e in h.events() {
        let (from, to) = (e.from as usize, e.to as usize);
        if !keep.contains(&from) || !keep.contains(&to) {
            continue;
        }
        b = b.push(e.kind, &w.point(from), &w.point(to), e.time);
    }
    // the third site never carries anything, so it cannot matter
    b.build().unwrap()
}
