//! Exact multitype and one-type contact process dynamics driven by an
//! augmented Harris system.
//!
//! Paths are right-continuous: the state at time `t` already includes the
//! effect of an event at exactly `t`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graphical::{AugmentedHarrisSystem, Event, EventKind, LatticeWindow, Point};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProcessError {
    #[error("end time {0} exceeds horizon {1}")]
    Horizon(f64, f64),
    #[error("configuration does not match the system's window")]
    WindowMismatch,
    #[error("state {0} is not in {{0,1,2}}")]
    BadState(u8),
    #[error("one-type configuration contains a 2")]
    NotTwoValued,
    #[error("site {0:?} is not in the window")]
    UnknownSite(Point),
    #[error("query time {0} after trajectory end {1}")]
    AfterEnd(f64, f64),
}

/// A state ξ ∈ {0,1,2} on every window site.
#[derive(Clone, Debug, PartialEq)]
pub struct Configuration {
    window: LatticeWindow,
    state: Vec<u8>,
}

impl Configuration {
    pub fn new(window: &LatticeWindow, state: Vec<u8>) -> Result<Self, ProcessError> {
        if state.len() != window.n_sites() {
            return Err(ProcessError::WindowMismatch);
        }
        if let Some(&s) = state.iter().find(|&&s| s > 2) {
            return Err(ProcessError::BadState(s));
        }
        Ok(Configuration { window: window.clone(), state })
    }

    pub fn filled(window: &LatticeWindow, value: u8) -> Self {
        Configuration { window: window.clone(), state: vec![value; window.n_sites()] }
    }

    /// `inner` at site `x`, `outer` everywhere else (e.g. a single 1 among 2's).
    pub fn single(window: &LatticeWindow, x: &[i64], inner: u8, outer: u8) -> Result<Self, ProcessError> {
        let i = window.index(x).ok_or_else(|| ProcessError::UnknownSite(x.to_vec()))?;
        let mut c = Self::filled(window, outer);
        c.state[i] = inner;
        Ok(c)
    }

    /// `inner` on B_0(m), `outer` elsewhere.
    pub fn block(window: &LatticeWindow, m: i64, inner: u8, outer: u8) -> Self {
        let state = (0..window.n_sites())
            .map(|i| if crate::graphical::l1_norm(&window.point(i)) <= m { inner } else { outer })
            .collect();
        Configuration { window: window.clone(), state }
    }

    pub fn window(&self) -> &LatticeWindow {
        &self.window
    }
    pub fn states(&self) -> &[u8] {
        &self.state
    }
    pub fn get(&self, i: usize) -> u8 {
        self.state[i]
    }
    pub fn set(&mut self, i: usize, v: u8) {
        self.state[i] = v;
    }
    pub fn at(&self, x: &[i64]) -> u8 {
        // sites outside the window are implicitly 0
        self.window.index(x).map_or(0, |i| self.state[i])
    }
    pub fn count(&self, v: u8) -> usize {
        self.state.iter().filter(|&&s| s == v).count()
    }
    /// ξ ∈ 𝒜1: no 2's.
    pub fn in_a1(&self) -> bool {
        !self.state.contains(&2)
    }
    /// ξ ∈ 𝒜2: no 1's.
    pub fn in_a2(&self) -> bool {
        !self.state.contains(&1)
    }
}

/// One logged state change.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub time: f64,
    pub site: u32,
    pub old: u8,
    pub new: u8,
    pub cause: EventKind,
    /// Source site of the arrow for births; equals `site` for deaths.
    pub source: u32,
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub initial: Configuration,
    pub log: Vec<Transition>,
    pub end: f64,
    /// Set when any birth lands within R of the window boundary.
    pub boundary_contact: bool,
}

/// Which arrows a one-type process uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum OneTypeRate {
    /// Deaths and arrows: a rate-λ2 contact process.
    Lambda2Only,
    /// Deaths, arrows and selective arrows: a rate-λ1 contact process.
    Lambda1WithSelective,
}

/// Running counts handed to sweep observers.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Census {
    pub ones: usize,
    pub twos: usize,
}

/// Sweeps events with time ≤ `t_end`, mutating `state` and calling `observe`
/// after every actual transition. Returns the boundary-contact flag.
///
/// With `ones_use_selective = false` selective arrows are ignored entirely.
pub fn sweep<F>(
    h: &AugmentedHarrisSystem,
    state: &mut [u8],
    t_end: f64,
    ones_use_selective: bool,
    observe: F,
) -> bool
where
    F: FnMut(&Transition, Census, &[u8]) -> bool,
{
    sweep_events(h.window(), h.events().iter().copied(), state, t_end, ones_use_selective, observe)
}

/// [`sweep`] over any time-ordered event source on `w`, e.g. an
/// [`crate::graphical::EventStream`].
pub fn sweep_events<I, F>(
    w: &LatticeWindow,
    events: I,
    state: &mut [u8],
    t_end: f64,
    ones_use_selective: bool,
    mut observe: F,
) -> bool
where
    I: IntoIterator<Item = Event>,
    F: FnMut(&Transition, Census, &[u8]) -> bool,
{
    let mut census = Census {
        ones: state.iter().filter(|&&s| s == 1).count(),
        twos: state.iter().filter(|&&s| s == 2).count(),
    };
    let mut boundary = false;
    for ev in events {
        if ev.time > t_end {
            break;
        }
        let (x, y) = (ev.from as usize, ev.to as usize);
        let tr = match ev.kind {
            EventKind::Death => {
                let old = state[x];
                if old == 0 {
                    continue;
                }
                state[x] = 0;
                if old == 1 {
                    census.ones -= 1;
                } else {
                    census.twos -= 1;
                }
                Transition { time: ev.time, site: ev.from, old, new: 0, cause: ev.kind, source: ev.from }
            }
            EventKind::Arrow | EventKind::Selective => {
                let src = state[x];
                if src == 0 || state[y] != 0 {
                    continue;
                }
                if ev.kind == EventKind::Selective && (src != 1 || !ones_use_selective) {
                    continue;
                }
                state[y] = src;
                if src == 1 {
                    census.ones += 1;
                } else {
                    census.twos += 1;
                }
                boundary |= w.near_boundary(y);
                Transition { time: ev.time, site: ev.to, old: 0, new: src, cause: ev.kind, source: ev.from }
            }
        };
        if !observe(&tr, census, state) {
            break;
        }
    }
    boundary
}

/// Runs rules (4)–(6): deaths empty a site, arrows copy the source's type onto
/// an empty target, selective arrows do so only for type-1 sources.
pub fn evolve(xi0: &Configuration, h: &AugmentedHarrisSystem, t_end: f64) -> Result<Trajectory, ProcessError> {
    run(xi0, h, t_end, true)
}

/// One-type contact process from a {0,1}-valued start.
pub fn evolve_one_type(
    zeta0: &Configuration,
    h: &AugmentedHarrisSystem,
    rate: OneTypeRate,
    t_end: f64,
) -> Result<Trajectory, ProcessError> {
    if !zeta0.in_a1() {
        return Err(ProcessError::NotTwoValued);
    }
    run(zeta0, h, t_end, rate == OneTypeRate::Lambda1WithSelective)
}

fn run(xi0: &Configuration, h: &AugmentedHarrisSystem, t_end: f64, sel: bool) -> Result<Trajectory, ProcessError> {
    if t_end > h.horizon() || t_end.is_nan() {
        return Err(ProcessError::Horizon(t_end, h.horizon()));
    }
    if xi0.window() != h.window() && xi0.window().n_sites() != h.n_sites() {
        return Err(ProcessError::WindowMismatch);
    }
    let mut state = xi0.state.clone();
    let mut log = Vec::new();
    let boundary = sweep(h, &mut state, t_end, sel, |tr, _, _| {
        log.push(*tr);
        true
    });
    Ok(Trajectory { initial: xi0.clone(), log, end: t_end, boundary_contact: boundary })
}

impl Trajectory {
    /// ξ_t(x), or ξ_{t−}(x) with `left_limit`.
    pub fn state_at(&self, x: &[i64], t: f64, left_limit: bool) -> Result<u8, ProcessError> {
        let w = self.initial.window();
        let i = w.index(x).ok_or_else(|| ProcessError::UnknownSite(x.to_vec()))? as u32;
        if t > self.end {
            return Err(ProcessError::AfterEnd(t, self.end));
        }
        let upto = if left_limit {
            self.log.partition_point(|tr| tr.time < t)
        } else {
            self.log.partition_point(|tr| tr.time <= t)
        };
        Ok(self.log[..upto].iter().rev().find(|tr| tr.site == i).map_or(self.initial.get(i as usize), |tr| tr.new))
    }

    /// Full configuration ξ_t by replay.
    pub fn config_at(&self, t: f64) -> Configuration {
        let mut c = self.initial.clone();
        for tr in self.log.iter().take_while(|tr| tr.time <= t) {
            c.state[tr.site as usize] = tr.new;
        }
        c
    }

    pub fn final_config(&self) -> Configuration {
        self.config_at(self.end)
    }

    /// Times at which the log changes the configuration.
    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        self.log.iter().map(|tr| tr.time)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphical::{sample_harris, HarrisBuilder};

    fn line(m: i64, th: f64) -> LatticeWindow {
        LatticeWindow::line(m, 1, th).unwrap()
    }

    #[test]
    fn all_zero_is_absorbing() {
        let w = line(5, 10.0);
        let h = sample_harris(&w, 3.0, 2.0, 1).unwrap();
        let tr = evolve(&Configuration::filled(&w, 0), &h, 10.0).unwrap();
        assert!(tr.log.is_empty());
    }

    #[test]
    fn single_death() {
        let w = line(1, 1.0);
        let h = HarrisBuilder::new(w.clone(), 2.0, 1.0).death(&[0], 0.5).build().unwrap();
        let xi0 = Configuration::single(&w, &[0], 1, 0).unwrap();
        let tr = evolve(&xi0, &h, 1.0).unwrap();
        assert_eq!(tr.state_at(&[0], 0.4, false).unwrap(), 1);
        assert_eq!(tr.state_at(&[0], 0.5, false).unwrap(), 0);
        assert_eq!(tr.state_at(&[0], 0.5, true).unwrap(), 1);
        assert_eq!(tr.state_at(&[0], 0.9, false).unwrap(), 0);
        assert_eq!(tr.state_at(&[0], 0.0, false).unwrap(), 1);
    }

    #[test]
    fn selective_arrow_unusable_by_twos() {
        let w = line(1, 1.0);
        let h = HarrisBuilder::new(w.clone(), 2.0, 1.0).selective(&[0], &[1], 0.3).build().unwrap();
        let tr = evolve(&Configuration::single(&w, &[0], 2, 0).unwrap(), &h, 1.0).unwrap();
        assert_eq!(tr.state_at(&[1], 1.0, false).unwrap(), 0);
        let tr = evolve(&Configuration::single(&w, &[0], 1, 0).unwrap(), &h, 1.0).unwrap();
        assert_eq!(tr.state_at(&[1], 1.0, false).unwrap(), 1);
        assert_eq!(tr.log[0].cause, EventKind::Selective);
    }

    #[test]
    fn births_only_onto_empty_sites() {
        let w = line(1, 1.0);
        let h = HarrisBuilder::new(w.clone(), 2.0, 1.0).arrow(&[0], &[1], 0.3).build().unwrap();
        let xi0 = Configuration::new(&w, vec![0, 1, 2]).unwrap();
        let tr = evolve(&xi0, &h, 1.0).unwrap();
        assert!(tr.log.is_empty());
    }

    #[test]
    fn rejects_past_horizon() {
        let w = line(1, 1.0);
        let h = HarrisBuilder::new(w.clone(), 2.0, 1.0).build().unwrap();
        assert!(evolve(&Configuration::filled(&w, 1), &h, 2.0).is_err());
        let bad = Configuration::filled(&w, 2);
        assert_eq!(
            evolve_one_type(&bad, &h, OneTypeRate::Lambda2Only, 1.0).unwrap_err(),
            ProcessError::NotTwoValued
        );
    }

    #[test]
    fn all_ones_equals_one_type_with_selective() {
        let w = line(8, 8.0);
        for seed in 0..20 {
            let h = sample_harris(&w, 3.0, 1.5, seed).unwrap();
            let xi0 = Configuration::block(&w, 2, 1, 0);
            let a = evolve(&xi0, &h, 8.0).unwrap();
            let b = evolve_one_type(&xi0, &h, OneTypeRate::Lambda1WithSelective, 8.0).unwrap();
            assert_eq!(a.log, b.log);
        }
    }

    #[test]
    fn all_twos_evolve_as_lambda2_process() {
        let w = line(8, 8.0);
        for seed in 0..20 {
            let h = sample_harris(&w, 3.0, 1.5, seed).unwrap();
            let a = evolve(&Configuration::block(&w, 3, 2, 0), &h, 8.0).unwrap();
            let b = evolve_one_type(&Configuration::block(&w, 3, 1, 0), &h, OneTypeRate::Lambda2Only, 8.0).unwrap();
            assert_eq!(a.log.len(), b.log.len());
            for (x, y) in a.log.iter().zip(&b.log) {
                assert_eq!((x.time, x.site, x.cause), (y.time, y.site, y.cause));
                assert_eq!(x.new == 2, y.new == 1);
            }
        }
    }

    #[test]
    fn state_queries_agree_with_full_resweep() {
        use rand::{Rng, SeedableRng};
        let w = line(10, 6.0);
        let h = sample_harris(&w, 3.0, 2.0, 3).unwrap();
        let xi0 = Configuration::new(&w, (0..w.n_sites()).map(|i| (i % 3) as u8).collect()).unwrap();
        let tr = evolve(&xi0, &h, 6.0).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let t: f64 = rng.gen_range(0.0..6.0);
            let x = rng.gen_range(-10..=10);
            let oracle = evolve(&xi0, &h, t).unwrap().final_config();
            assert_eq!(tr.state_at(&[x], t, false).unwrap(), oracle.at(&[x]));
        }
    }

    #[test]
    fn absorption_in_a1_and_a2() {
        let w = line(10, 10.0);
        for seed in 0..10 {
            let h = sample_harris(&w, 3.0, 2.0, seed).unwrap();
            let xi0 = Configuration::new(&w, (0..w.n_sites()).map(|i| [1, 2, 0][i % 3]).collect()).unwrap();
            let tr = evolve(&xi0, &h, 10.0).unwrap();
            let mut c = tr.initial.clone();
            let (mut in1, mut in2) = (c.in_a1(), c.in_a2());
            for t in tr.log.iter() {
                c.set(t.site as usize, t.new);
                if in1 {
                    assert!(c.in_a1());
                }
                if in2 {
                    assert!(c.in_a2());
                }
                in1 |= c.in_a1();
                in2 |= c.in_a2();
            }
        }
    }
}
