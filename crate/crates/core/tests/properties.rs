//! Randomized structural properties of systems, paths and couplings.

use mtcp_core::estimators::survival_curves;
use mtcp_core::graphical::stream_harris;
use mtcp_core::paths::{
    classify, concatenate, death_time, find_fbip, find_rfbip, find_rfbip_via_reversal, reach_set, reachable, Anchor,
    DeathTime, Mode,
};
use mtcp_core::{sample_harris, AugmentedHarrisSystem, LatticeWindow};
use proptest::prelude::*;

fn system(m: i64, horizon: f64, l1: f64, l2: f64, seed: u64) -> AugmentedHarrisSystem {
    sample_harris(&LatticeWindow::line(m, 1, horizon).unwrap(), l1, l2, seed).unwrap()
}

fn same_events(a: &AugmentedHarrisSystem, b: &AugmentedHarrisSystem) -> bool {
    let (v, w) = (a.window(), b.window());
    v.center() == w.center()
        && v.radius() == w.radius()
        && (v.horizon() - w.horizon()).abs() < 1e-9
        && a.events().len() == b.events().len()
        && a.events().iter().zip(b.events()).all(|(e, f)| {
            e.kind == f.kind && e.from == f.from && e.to == f.to && (e.time - f.time).abs() < 1e-9
        })
}

fn rates() -> impl Strategy<Value = (f64, f64)> {
    (0.2f64..3.0, 0.05f64..0.95).prop_map(|(l1, frac)| (l1, l1 * frac))
}

fn ends(d: DeathTime) -> f64 {
    d.finite().unwrap_or(f64::INFINITY)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn stream_yields_the_sampled_events(seed in any::<u64>(), (l1, l2) in rates()) {
        let w = LatticeWindow::line(4, 1, 3.0).unwrap();
        let h = sample_harris(&w, l1, l2, seed).unwrap();
        let streamed: Vec<_> = stream_harris(&w, l1, l2, seed).unwrap().collect();
        prop_assert_eq!(streamed.as_slice(), h.events());
    }

    #[test]
    fn shift_is_a_semigroup(seed in any::<u64>(), a in -3i64..=3, b in -3i64..=3, s in 0.0f64..2.0, t in 0.0f64..2.0) {
        let h = system(5, 5.0, 2.0, 1.0, seed);
        let twice = h.shift(&[a], s).unwrap().shift(&[b], t).unwrap();
        let once = h.shift(&[a + b], s + t).unwrap();
        prop_assert!(same_events(&twice, &once));
        prop_assert_eq!(twice.window().is_clipped(), a + b != 0);
    }

    #[test]
    fn reversal_is_an_involution(seed in any::<u64>(), u in 0.5f64..4.0) {
        let h = system(4, 4.0, 2.0, 1.0, seed);
        let back = h.reverse(u).unwrap().reverse(u).unwrap();
        prop_assert!(same_events(&back, &h.restrict(0.0, u, true).unwrap()));
        prop_assert_eq!(h.reverse(u).unwrap().counts(), h.restrict(0.0, u, true).unwrap().counts());
    }

    #[test]
    fn reachability_is_transitive(seed in any::<u64>(), x in 0usize..9, y in 0usize..9, z in 0usize..9, s in 0.0f64..1.0, ds in 0.0f64..1.5, dt in 0.0f64..1.5) {
        let h = system(4, 4.0, 2.5, 1.5, seed);
        let (t, u) = (s + ds, s + ds + dt);
        for mode in [Mode::Basic, Mode::Selective] {
            let g1 = reachable(&h, &Anchor::Point(x, s), &Anchor::Point(y, t), mode).unwrap();
            let g2 = reachable(&h, &Anchor::Point(y, t), &Anchor::Point(z, u), mode).unwrap();
            if let (Some(g1), Some(g2)) = (g1, g2) {
                prop_assert!(reachable(&h, &Anchor::Point(x, s), &Anchor::Point(z, u), mode).unwrap().is_some());
                let g = concatenate(&g1, &g2).unwrap();
                let c = classify(&h, &g).unwrap();
                let ok = if mode == Mode::Basic { c.is_bip } else { c.is_sip };
                prop_assert!(ok);
            }
        }
    }

    #[test]
    fn witnesses_reverse_to_witnesses(seed in any::<u64>(), x in 0usize..9, y in 0usize..9) {
        let h = system(4, 3.0, 2.5, 1.5, seed);
        let r = h.reverse(3.0).unwrap();
        for mode in [Mode::Basic, Mode::Selective] {
            if let Some(g) = reachable(&h, &Anchor::Point(x, 0.0), &Anchor::Point(y, 3.0), mode).unwrap() {
                let c = classify(&r, &g.reversed(3.0)).unwrap();
                let ok = if mode == Mode::Basic { c.is_bip } else { c.is_sip };
                prop_assert!(ok);
            }
        }
    }

    #[test]
    fn basic_reach_is_inside_selective_reach(seed in any::<u64>(), x in 0usize..9, t in 0.0f64..4.0) {
        let h = system(4, 4.0, 2.5, 1.5, seed);
        let basic = reach_set(&h, &Anchor::Point(x, 0.0), t, Mode::Basic).unwrap();
        let sel = reach_set(&h, &Anchor::Point(x, 0.0), t, Mode::Selective).unwrap();
        prop_assert!(basic.iter().zip(&sel).all(|(b, s)| !b || *s));
    }

    #[test]
    fn death_time_grows_with_the_set(seed in any::<u64>(), a in prop::collection::btree_set(0usize..9, 1..4), b in prop::collection::btree_set(0usize..9, 0..4)) {
        let h = system(4, 6.0, 1.5, 1.0, seed);
        let a: Vec<usize> = a.into_iter().collect();
        let mut ab = a.clone();
        ab.extend(b);
        ab.sort_unstable();
        ab.dedup();
        prop_assert!(ends(death_time(&h, &a).unwrap()) <= ends(death_time(&h, &ab).unwrap()));
    }

    #[test]
    fn reverse_free_paths_agree_both_ways(seed in any::<u64>(), x in 0usize..7, t1 in 0.0f64..2.0) {
        let h = system(3, 4.0, 2.5, 1.5, seed);
        let direct = find_rfbip(&h, x, t1, 4.0).unwrap().map(|g| g.0);
        let reflected = find_rfbip_via_reversal(&h, x, t1, 4.0).unwrap();
        // reflecting twice costs a rounding step on every jump time
        prop_assert_eq!(direct.is_some(), reflected.is_some());
        if let (Some(a), Some(b)) = (direct, reflected) {
            prop_assert_eq!(a.origin, b.origin);
            prop_assert_eq!(a.jumps.len(), b.jumps.len());
            for (j, k) in a.jumps.iter().zip(&b.jumps) {
                prop_assert!(j.from == k.from && j.to == k.to && (j.time - k.time).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn free_paths_are_free_and_end_where_asked(seed in any::<u64>(), x in 0usize..7, s in 0.0f64..2.0) {
        let h = system(3, 4.0, 2.5, 1.5, seed);
        if let Some((g, _)) = find_fbip(&h, s, x, 4.0).unwrap() {
            let c = classify(&h, &g).unwrap();
            prop_assert!(c.is_bip && c.is_fbip);
            prop_assert_eq!(g.final_site(), x);
            prop_assert_eq!(g.start, s);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn coupled_survival_curves_are_monotone(seed in any::<u64>()) {
        let grid = [0.5, 1.0, 1.5, 2.0, 2.5, 3.0];
        let curves = survival_curves(1, 1, 15, 10.0, &grid, 60, seed, 0.95).unwrap();
        for c in &curves {
            prop_assert!(c.freq.windows(2).all(|p| p[0].successes <= p[1].successes));
        }
        // survival to the later level implies survival to the earlier one
        for (early, late) in curves[0].freq.iter().zip(&curves[1].freq) {
            prop_assert!(late.successes <= early.successes);
        }
    }
}
