//! Infection paths: reachability, classification, enumeration, and the
//! free / reverse-free path constructions.
//!
//! Endpoint conventions. A path on `[t1, t2]` jumps only at times strictly
//! inside `(t1, t2)`, and may not sit on a death mark anywhere in the closed
//! interval, so a death exactly at `t1` or `t2` at the relevant site
//! invalidates it. "(x, s−)" targets use the events strictly before `s`, and
//! "(x, s+)" sources use the events strictly after `s`. Everything runs on
//! index ranges of the global time-sorted event list.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graphical::{AugmentedHarrisSystem, EventKind, LatticeWindow, Point};

/// Basic paths use arrows only; selective paths may also use selective arrows.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Basic,
    Selective,
}

impl Mode {
    #[inline]
    fn allows(self, kind: EventKind) -> bool {
        match kind {
            EventKind::Arrow => true,
            EventKind::Selective => self == Mode::Selective,
            EventKind::Death => false,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PathError {
    #[error("source time {0} is after target time {1}")]
    TimeOrder(f64, f64),
    #[error("time {0} outside [0, {1}]")]
    Horizon(f64, f64),
    #[error("malformed path: {0}")]
    Malformed(String),
    #[error("paths do not meet: first ends at ({0}, {1}), second starts at ({2}, {3})")]
    Mismatch(usize, f64, usize, f64),
    #[error("enumeration window holds {0} events, above the cap of {1}")]
    CapExceeded(usize, usize),
    #[error("enumeration produced more than {0} paths")]
    TooManyPaths(usize),
    #[error("empty source set")]
    EmptySet,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Jump {
    pub time: f64,
    pub from: usize,
    pub to: usize,
}

/// A piecewise-constant, right-continuous site-valued path on `[start, end]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InfectionPath {
    pub start: f64,
    pub end: f64,
    pub origin: usize,
    pub jumps: Vec<Jump>,
}

impl InfectionPath {
    pub fn constant(site: usize, start: f64, end: f64) -> Self {
        InfectionPath { start, end, origin: site, jumps: Vec::new() }
    }

    pub fn final_site(&self) -> usize {
        self.jumps.last().map_or(self.origin, |j| j.to)
    }

    /// γ(t).
    pub fn site_at(&self, t: f64) -> usize {
        let k = self.jumps.partition_point(|j| j.time <= t);
        if k == 0 {
            self.origin
        } else {
            self.jumps[k - 1].to
        }
    }

    /// γ(t−).
    pub fn site_before(&self, t: f64) -> usize {
        let k = self.jumps.partition_point(|j| j.time < t);
        if k == 0 {
            self.origin
        } else {
            self.jumps[k - 1].to
        }
    }

    /// Checks ordering, chaining and jump lengths against `window`.
    pub fn check_shape(&self, window: &LatticeWindow) -> Result<(), PathError> {
        let n = window.n_sites();
        if !(self.start <= self.end) {
            return Err(PathError::Malformed(format!("start {} after end {}", self.start, self.end)));
        }
        if self.origin >= n {
            return Err(PathError::Malformed("origin outside window".into()));
        }
        let mut site = self.origin;
        let mut last = self.start;
        for j in &self.jumps {
            if !(j.time > last && j.time < self.end) {
                return Err(PathError::Malformed(format!("jump time {} out of order", j.time)));
            }
            if j.from != site {
                return Err(PathError::Malformed(format!("jump at {} does not chain", j.time)));
            }
            if j.to >= n || j.to == j.from || window.site_dist(j.from, j.to) > window.range() {
                return Err(PathError::Malformed(format!("jump at {} has invalid length", j.time)));
            }
            site = j.to;
            last = j.time;
        }
        Ok(())
    }

    /// γ*(t) = γ(u − t): the image of the path in `reverse(H, u)`.
    pub fn reversed(&self, u: f64) -> InfectionPath {
        InfectionPath {
            start: u - self.end,
            end: u - self.start,
            origin: self.final_site(),
            jumps: self.jumps.iter().rev().map(|j| Jump { time: u - j.time, from: j.to, to: j.from }).collect(),
        }
    }

    /// Relabels sites through `map` (e.g. a ψ permutation) and shifts time.
    pub fn mapped(&self, map: &[usize], dt: f64) -> InfectionPath {
        InfectionPath {
            start: self.start + dt,
            end: self.end + dt,
            origin: map[self.origin],
            jumps: self.jumps.iter().map(|j| Jump { time: j.time + dt, from: map[j.from], to: map[j.to] }).collect(),
        }
    }

    pub fn to_document(&self, window: &LatticeWindow) -> PathDocument {
        PathDocument {
            start: self.start,
            end: self.end,
            origin: window.point(self.origin),
            jumps: self
                .jumps
                .iter()
                .map(|j| JumpDocument { time: j.time, from: window.point(j.from), to: window.point(j.to) })
                .collect(),
        }
    }

    pub fn from_document(doc: &PathDocument, window: &LatticeWindow) -> Result<Self, PathError> {
        let idx = |p: &Point| window.index(p).ok_or_else(|| PathError::Malformed(format!("site {p:?} outside window")));
        let path = InfectionPath {
            start: doc.start,
            end: doc.end,
            origin: idx(&doc.origin)?,
            jumps: doc
                .jumps
                .iter()
                .map(|j| Ok(Jump { time: j.time, from: idx(&j.from)?, to: idx(&j.to)? }))
                .collect::<Result<_, PathError>>()?,
        };
        path.check_shape(window)?;
        Ok(path)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JumpDocument {
    pub time: f64,
    pub from: Point,
    pub to: Point,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathDocument {
    pub start: f64,
    pub end: f64,
    pub origin: Point,
    pub jumps: Vec<JumpDocument>,
}

/// A source or target: a single space-time point, a set of sites at one time,
/// or the full level Z^d × {t}.
#[derive(Clone, Debug, PartialEq)]
pub enum Anchor {
    Point(usize, f64),
    Set(Vec<usize>, f64),
    Level(f64),
}

impl Anchor {
    pub fn time(&self) -> f64 {
        match self {
            Anchor::Point(_, t) | Anchor::Set(_, t) | Anchor::Level(t) => *t,
        }
    }

    fn sites(&self, n: usize) -> Vec<usize> {
        match self {
            Anchor::Point(x, _) => vec![*x],
            Anchor::Set(v, _) => v.clone(),
            Anchor::Level(_) => (0..n).collect(),
        }
    }

    fn contains(&self, x: usize) -> bool {
        match self {
            Anchor::Point(y, _) => *y == x,
            Anchor::Set(v, _) => v.contains(&x),
            Anchor::Level(_) => true,
        }
    }
}

const NONE: u32 = u32::MAX;

#[derive(Clone, Copy, Debug)]
struct Record {
    site: u32,
    time: f64,
    parent: u32,
}

/// Forward reachable-set sweep with first-arrival back-pointers.
pub(crate) struct Forward<'a> {
    h: &'a AugmentedHarrisSystem,
    mode: Mode,
    /// current record per site, NONE when not reachable
    cur: Vec<u32>,
    records: Vec<Record>,
    start: f64,
    next: usize,
    live: usize,
}

impl<'a> Forward<'a> {
    /// Sources at time `s`; `closed` excludes sources with a death exactly at `s`
    /// (the point (x, s) itself), otherwise the sources are (x, s+).
    pub(crate) fn new(h: &'a AugmentedHarrisSystem, sources: &[usize], s: f64, closed: bool, mode: Mode) -> Self {
        let n = h.n_sites();
        let mut f = Forward {
            h,
            mode,
            cur: vec![NONE; n],
            records: Vec::with_capacity(sources.len() + 16),
            start: s,
            next: h.event_index_after(s, true),
            live: 0,
        };
        for &x in sources {
            if f.cur[x] != NONE || (closed && h.has_death_at(x, s)) {
                continue;
            }
            f.cur[x] = f.records.len() as u32;
            f.records.push(Record { site: x as u32, time: s, parent: NONE });
            f.live += 1;
        }
        f
    }

    /// Applies all events with time `< t`.
    pub(crate) fn advance_before(&mut self, t: f64) {
        let evs = self.h.events();
        while self.next < evs.len() && evs[self.next].time < t {
            self.apply(self.next);
            self.next += 1;
        }
    }

    /// Runs until the reachable set is empty or events run out; returns the
    /// extinction time if it happened.
    pub(crate) fn run_to_extinction(&mut self, limit: f64) -> Option<f64> {
        if self.live == 0 {
            return Some(self.start);
        }
        let evs = self.h.events();
        while self.next < evs.len() && evs[self.next].time <= limit {
            let i = self.next;
            self.apply(i);
            self.next += 1;
            if self.live == 0 {
                return Some(evs[i].time);
            }
        }
        None
    }

    #[inline]
    fn apply(&mut self, i: usize) {
        let e = self.h.events()[i];
        match e.kind {
            EventKind::Death => {
                let x = e.from as usize;
                if self.cur[x] != NONE {
                    self.cur[x] = NONE;
                    self.live -= 1;
                }
            }
            k => {
                if !self.mode.allows(k) {
                    return;
                }
                let (x, y) = (e.from as usize, e.to as usize);
                if self.cur[x] != NONE && self.cur[y] == NONE {
                    self.cur[y] = self.records.len() as u32;
                    self.records.push(Record { site: y as u32, time: e.time, parent: self.cur[x] });
                    self.live += 1;
                }
            }
        }
    }

    pub(crate) fn occupied(&self, x: usize) -> bool {
        self.cur[x] != NONE
    }

    pub(crate) fn occupied_sites(&self) -> Vec<bool> {
        self.cur.iter().map(|&r| r != NONE).collect()
    }


    /// The first-arrival witness currently held at `x`, as a path ending at `end`.
    pub(crate) fn witness(&self, x: usize, end: f64) -> Option<InfectionPath> {
        let mut r = self.cur[x];
        if r == NONE {
            return None;
        }
        let mut jumps = Vec::new();
        loop {
            let rec = self.records[r as usize];
            if rec.parent == NONE {
                jumps.reverse();
                return Some(InfectionPath { start: self.start, end, origin: rec.site as usize, jumps });
            }
            let par = self.records[rec.parent as usize];
            jumps.push(Jump { time: rec.time, from: par.site as usize, to: rec.site as usize });
            r = rec.parent;
        }
    }
}

fn check_times(h: &AugmentedHarrisSystem, s: f64, t: f64) -> Result<(), PathError> {
    if s.is_nan() || t.is_nan() || s > t {
        return Err(PathError::TimeOrder(s, t));
    }
    if s < 0.0 || t > h.horizon() {
        return Err(PathError::Horizon(if s < 0.0 { s } else { t }, h.horizon()));
    }
    Ok(())
}

/// Sites reachable at time `t` (closed) from `source`.
pub fn reach_set(h: &AugmentedHarrisSystem, source: &Anchor, t: f64, mode: Mode) -> Result<Vec<bool>, PathError> {
    let s = source.time();
    check_times(h, s, t)?;
    let mut f = Forward::new(h, &source.sites(h.n_sites()), s, true, mode);
    f.advance_before(t);
    let mut occ = f.occupied_sites();
    if t > s {
        for (x, o) in occ.iter_mut().enumerate() {
            if *o && h.has_death_at(x, t) {
                *o = false;
            }
        }
    }
    Ok(occ)
}

/// Sites x such that some FSIP (free relative to the level `s`) runs from
/// a site of `sources` at time `s` to (x, t). A jump onto (w, r) is allowed
/// iff Z^d × {s} does not basic-reach (w, r−), so one sweep that carries the
/// level-reach set alongside decides every target at once.
pub fn fsip_reach_set(h: &AugmentedHarrisSystem, sources: &[usize], s: f64, t: f64) -> Result<Vec<bool>, PathError> {
    check_times(h, s, t)?;
    let n = h.n_sites();
    let mut level = vec![true; n];
    let mut free = vec![false; n];
    for &x in sources {
        if x >= n {
            return Err(PathError::Malformed(format!("source site {x} outside the window")));
        }
        free[x] = true;
    }
    for ev in &h.events()[h.event_index_after(s, false)..] {
        if ev.time > t {
            break;
        }
        let (z, w) = (ev.from as usize, ev.to as usize);
        match ev.kind {
            EventKind::Death => {
                level[z] = false;
                free[z] = false;
            }
            _ if ev.time == s || ev.time == t => {}
            kind => {
                if free[z] && !level[w] {
                    free[w] = true;
                }
                if kind == EventKind::Arrow && level[z] {
                    level[w] = true;
                }
            }
        }
    }
    Ok(free)
}

/// Decides `source ⇝ target` in the given mode and returns a witness path.
/// (x, s) ⇝ (x, s) holds by convention when there is no death mark at (x, s).
pub fn reachable(
    h: &AugmentedHarrisSystem,
    source: &Anchor,
    target: &Anchor,
    mode: Mode,
) -> Result<Option<InfectionPath>, PathError> {
    let (s, t) = (source.time(), target.time());
    check_times(h, s, t)?;
    let sources = source.sites(h.n_sites());
    if sources.is_empty() {
        return Err(PathError::EmptySet);
    }
    let mut f = Forward::new(h, &sources, s, true, mode);
    f.advance_before(t);
    let hit = target
        .sites(h.n_sites())
        .into_iter()
        .find(|&y| f.occupied(y) && (t == s || !h.has_death_at(y, t)));
    Ok(hit.and_then(|y| f.witness(y, t)))
}

/// Outcome of a death-time computation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum DeathTime {
    Finite(f64),
    /// Reachability persists to the horizon.
    Censored,
}

impl DeathTime {
    pub fn finite(self) -> Option<f64> {
        match self {
            DeathTime::Finite(t) => Some(t),
            DeathTime::Censored => None,
        }
    }
    pub fn is_censored(self) -> bool {
        self == DeathTime::Censored
    }
}

/// T^Λ = sup{t : Λ × {s} ⇝ Z^d × {t}} (basic paths), with `s = 0` for the
/// classical definition.
pub fn death_time_from(h: &AugmentedHarrisSystem, sites: &[usize], s: f64) -> Result<DeathTime, PathError> {
    if sites.is_empty() {
        return Err(PathError::EmptySet);
    }
    check_times(h, s, h.horizon())?;
    let mut f = Forward::new(h, sites, s, true, Mode::Basic);
    Ok(match f.run_to_extinction(h.horizon()) {
        Some(t) => DeathTime::Finite(t),
        None => DeathTime::Censored,
    })
}

pub fn death_time(h: &AugmentedHarrisSystem, sites: &[usize]) -> Result<DeathTime, PathError> {
    death_time_from(h, sites, 0.0)
}

/// Reference epochs for the free and reverse-free checks.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Epochs {
    /// Level from which no BIP may reach a pre-jump landing point.
    pub free_from: f64,
    /// Level that no BIP from a post-jump departure point may reach.
    pub reverse_free_to: f64,
}

impl Epochs {
    pub fn of(path: &InfectionPath) -> Self {
        Epochs { free_from: path.start, reverse_free_to: path.end }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PathClass {
    pub is_bip: bool,
    pub is_sip: bool,
    pub is_fbip: bool,
    pub is_fsip: bool,
    pub is_rfbip: bool,
    pub is_rfsip: bool,
}

impl PathClass {
    pub fn as_array(&self) -> [bool; 6] {
        [self.is_bip, self.is_sip, self.is_fbip, self.is_fsip, self.is_rfbip, self.is_rfsip]
    }
}

/// Death avoidance and arrow justification. Returns `(is_sip, is_bip)`.
fn validity(h: &AugmentedHarrisSystem, path: &InfectionPath) -> (bool, bool) {
    let mut a = path.start;
    let mut site = path.origin;
    let mut basic = true;
    for j in &path.jumps {
        if !h.deaths_in(site, a, j.time).is_empty() {
            return (false, false);
        }
        let arrow = h.arrows_in(j.from, j.to, j.time, j.time).len() == 1;
        let sel = h.selective_in(j.from, j.to, j.time, j.time).len() == 1;
        if !arrow && !sel {
            return (false, false);
        }
        basic &= arrow;
        site = j.to;
        a = j.time;
    }
    if !h.deaths_in(site, a, path.end).is_empty() {
        return (false, false);
    }
    (true, basic)
}

/// True iff no jump of `path` lands at a point basic-reachable from the full
/// level at `epoch` (the point (γ(s), s−) for jump time s).
pub fn is_free(h: &AugmentedHarrisSystem, path: &InfectionPath, epoch: f64) -> bool {
    let all: Vec<usize> = (0..h.n_sites()).collect();
    let mut f = Forward::new(h, &all, epoch, true, Mode::Basic);
    for j in &path.jumps {
        if j.time <= epoch {
            continue;
        }
        f.advance_before(j.time);
        if f.occupied(j.to) {
            return false;
        }
    }
    true
}

/// Backward sweep: `alive[z]` ⇔ (z, r+) ⇝ Z^d × {top} after `retreat_after(r)`.
pub(crate) struct Backward<'a> {
    h: &'a AugmentedHarrisSystem,
    alive: Vec<bool>,
    /// events with index < next are still to be processed (descending)
    next: usize,
}

impl<'a> Backward<'a> {
    pub(crate) fn from_level(h: &'a AugmentedHarrisSystem, top: f64) -> Self {
        let alive = (0..h.n_sites()).map(|x| !h.has_death_at(x, top)).collect();
        Backward { h, alive, next: h.event_index_after(top, false) }
    }

    pub(crate) fn from_sites(h: &'a AugmentedHarrisSystem, sites: &[usize], top: f64) -> Self {
        let mut alive = vec![false; h.n_sites()];
        for &x in sites {
            alive[x] = !h.has_death_at(x, top);
        }
        Backward { h, alive, next: h.event_index_after(top, false) }
    }

    /// Processes all events with time `> r` (still unprocessed), descending.
    pub(crate) fn retreat_after(&mut self, r: f64, mode: Mode) {
        let evs = self.h.events();
        while self.next > 0 && evs[self.next - 1].time > r {
            self.next -= 1;
            let e = evs[self.next];
            match e.kind {
                EventKind::Death => self.alive[e.from as usize] = false,
                k if mode.allows(k) => {
                    if self.alive[e.to as usize] {
                        self.alive[e.from as usize] = true;
                    }
                }
                _ => {}
            }
        }
    }

    /// Processes events with time `≥ r`, then applies the closed-start death
    /// check at `r`: `alive[z]` ⇔ (z, r) ⇝ target.
    pub(crate) fn retreat_to(&mut self, r: f64, mode: Mode) {
        self.retreat_after(r, mode);
        let evs = self.h.events();
        if self.next > 0 && evs[self.next - 1].time == r {
            self.next -= 1;
            let e = evs[self.next];
            // a jump exactly at the start time is not allowed, so only a
            // death mark matters here
            if e.kind == EventKind::Death {
                self.alive[e.from as usize] = false;
            }
        }
    }

    pub(crate) fn alive(&self, x: usize) -> bool {
        self.alive[x]
    }

    pub(crate) fn alive_sites(&self) -> &[bool] {
        &self.alive
    }
}

/// Sites `z` with (z, s) ⇝ `target`.
pub fn backward_reach_set(h: &AugmentedHarrisSystem, target: &Anchor, s: f64, mode: Mode) -> Result<Vec<bool>, PathError> {
    let t = target.time();
    check_times(h, s, t)?;
    let mut b = match target {
        Anchor::Level(_) => Backward::from_level(h, t),
        other => Backward::from_sites(h, &other.sites(h.n_sites()), t),
    };
    if s < t {
        b.retreat_to(s, mode);
    }
    Ok(b.alive_sites().to_vec())
}

/// True iff from no pre-jump point (γ(s−), s+) a basic path reaches the level `top`.
pub fn is_reverse_free(h: &AugmentedHarrisSystem, path: &InfectionPath, top: f64) -> bool {
    let mut b = Backward::from_level(h, top);
    for j in path.jumps.iter().rev() {
        if j.time >= top {
            continue;
        }
        b.retreat_after(j.time, Mode::Basic);
        if b.alive(j.from) {
            return false;
        }
    }
    true
}

/// Computes all six class flags of `path` with explicit epochs.
pub fn classify_with(h: &AugmentedHarrisSystem, path: &InfectionPath, epochs: Epochs) -> Result<PathClass, PathError> {
    path.check_shape(h.window())?;
    check_times(h, path.start, path.end)?;
    let (is_sip, is_bip) = validity(h, path);
    if !is_sip {
        return Ok(PathClass::default());
    }
    let free = is_free(h, path, epochs.free_from);
    let rfree = is_reverse_free(h, path, epochs.reverse_free_to);
    Ok(PathClass {
        is_bip,
        is_sip,
        is_fbip: is_bip && free,
        is_fsip: free,
        is_rfbip: is_bip && rfree,
        is_rfsip: rfree,
    })
}

/// Classification with the path's own start / end as epochs.
pub fn classify(h: &AugmentedHarrisSystem, path: &InfectionPath) -> Result<PathClass, PathError> {
    classify_with(h, path, Epochs::of(path))
}

/// Joins γ1 on [a, b] with γ2 on [b, c].
pub fn concatenate(g1: &InfectionPath, g2: &InfectionPath) -> Result<InfectionPath, PathError> {
    if g1.end != g2.start || g1.final_site() != g2.origin {
        return Err(PathError::Mismatch(g1.final_site(), g1.end, g2.origin, g2.start));
    }
    let mut jumps = g1.jumps.clone();
    jumps.extend_from_slice(&g2.jumps);
    Ok(InfectionPath { start: g1.start, end: g2.end, origin: g1.origin, jumps })
}

pub const DEFAULT_EVENT_CAP: usize = 60;
pub const DEFAULT_PATH_CAP: usize = 1_000_000;

/// All distinct paths of `mode` from `source` to `target`, by depth-first
/// search over event choices. Refuses windows with more than `cap` events in
/// the time range (the number of paths can be exponential in it).
pub fn enumerate_paths(
    h: &AugmentedHarrisSystem,
    source: &Anchor,
    target: &Anchor,
    mode: Mode,
    cap: usize,
) -> Result<Vec<InfectionPath>, PathError> {
    let (s, t) = (source.time(), target.time());
    check_times(h, s, t)?;
    let lo = h.event_index_after(s, false);
    let hi = h.event_index_after(t, true);
    if hi - lo > cap {
        return Err(PathError::CapExceeded(hi - lo, cap));
    }
    // per-site outgoing marks (deaths and usable arrows) in (s, t]
    let n = h.n_sites();
    let mut out: Vec<Vec<(f64, EventKind, usize)>> = vec![Vec::new(); n];
    for e in &h.events()[lo..hi] {
        if e.time <= s {
            continue;
        }
        if e.kind == EventKind::Death || (mode.allows(e.kind) && e.time < t) {
            out[e.from as usize].push((e.time, e.kind, e.to as usize));
        }
    }
    let mut dfs = Dfs { out: &out, target, s, t, stack: Vec::new(), found: Vec::new() };
    for x in source.sites(n) {
        if h.has_death_at(x, s) {
            continue;
        }
        dfs.visit(x, x, s)?;
    }
    Ok(dfs.found)
}

struct Dfs<'a> {
    out: &'a [Vec<(f64, EventKind, usize)>],
    target: &'a Anchor,
    s: f64,
    t: f64,
    stack: Vec<Jump>,
    found: Vec<InfectionPath>,
}

impl Dfs<'_> {
    fn visit(&mut self, origin: usize, z: usize, after: f64) -> Result<(), PathError> {
        let list = &self.out[z];
        let from = list.partition_point(|e| e.0 <= after);
        for &(time, kind, to) in &list[from..] {
            if kind == EventKind::Death {
                // the path is killed here (a death exactly at t included)
                return Ok(());
            }
            self.stack.push(Jump { time, from: z, to });
            self.visit(origin, to, time)?;
            self.stack.pop();
            if self.found.len() > DEFAULT_PATH_CAP {
                return Err(PathError::TooManyPaths(DEFAULT_PATH_CAP));
            }
        }
        if self.target.contains(z) {
            self.found.push(InfectionPath { start: self.s, end: self.t, origin, jumps: self.stack.clone() });
        }
        Ok(())
    }
}

/// All paths of `mode` from the point (x, s) to the level t, found by a
/// depth-first search over the per-site event lists, so only the marks near
/// the explored paths are touched. Stops after `max_paths` paths; the flag
/// reports whether the search was cut short.
pub fn enumerate_from_point(
    h: &AugmentedHarrisSystem,
    x: usize,
    s: f64,
    t: f64,
    mode: Mode,
    max_paths: usize,
) -> Result<(Vec<InfectionPath>, bool), PathError> {
    check_times(h, s, t)?;
    let mut found = Vec::new();
    if h.has_death_at(x, s) {
        return Ok((found, false));
    }
    let mut stack = Vec::new();
    let truncated = local_visit(h, mode, x, x, s, s, t, max_paths, &mut stack, &mut found);
    Ok((found, truncated))
}

/// Marks out of `z` in `(after, t]`: deaths anywhere in the range, arrows
/// strictly before `t`; sorted by time.
fn local_marks(h: &AugmentedHarrisSystem, mode: Mode, z: usize, after: f64, t: f64) -> Vec<(f64, Option<usize>)> {
    let w = h.window();
    let mut v: Vec<(f64, Option<usize>)> =
        h.deaths_in(z, after, t).iter().filter(|&&d| d > after).map(|&d| (d, None)).collect();
    for e in w.out_edges(z) {
        let to = w.edge(e).1;
        let mut push = |times: &[f64]| {
            for &a in times {
                if a > after && a < t {
                    v.push((a, Some(to)));
                }
            }
        };
        push(h.arrows_on(e));
        if mode == Mode::Selective {
            push(h.selective_on(e));
        }
    }
    v.sort_by(|p, q| p.0.total_cmp(&q.0));
    v
}

#[allow(clippy::too_many_arguments)]
fn local_visit(
    h: &AugmentedHarrisSystem,
    mode: Mode,
    origin: usize,
    z: usize,
    after: f64,
    s: f64,
    t: f64,
    max_paths: usize,
    stack: &mut Vec<Jump>,
    found: &mut Vec<InfectionPath>,
) -> bool {
    for (time, to) in local_marks(h, mode, z, after, t) {
        let Some(to) = to else {
            return false;
        };
        stack.push(Jump { time, from: z, to });
        let cut = local_visit(h, mode, origin, to, time, s, t, max_paths, stack, found);
        stack.pop();
        if cut {
            return true;
        }
    }
    found.push(InfectionPath { start: s, end: t, origin, jumps: stack.clone() });
    found.len() >= max_paths
}

/// Iteration record of a repair loop.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RepairTrace {
    /// Violating jump time handled at each iteration, in order.
    pub violations: Vec<f64>,
}

/// The unique free basic path from Z^d × {s} to (x, t), by the repair loop:
/// start from the first-arrival witness, take the largest violating jump
/// time r and replace the path before r by a basic path from the level s to
/// (γ(r), r−); repeat until no jump violates freeness.
pub fn find_fbip(
    h: &AugmentedHarrisSystem,
    s: f64,
    x: usize,
    t: f64,
) -> Result<Option<(InfectionPath, RepairTrace)>, PathError> {
    let Some(mut gamma) = reachable(h, &Anchor::Level(s), &Anchor::Point(x, t), Mode::Basic)? else {
        return Ok(None);
    };
    let all: Vec<usize> = (0..h.n_sites()).collect();
    let mut trace = RepairTrace::default();
    loop {
        let mut f = Forward::new(h, &all, s, true, Mode::Basic);
        let mut splice: Option<(usize, InfectionPath)> = None;
        for (k, j) in gamma.jumps.iter().enumerate() {
            f.advance_before(j.time);
            if f.occupied(j.to) {
                splice = Some((k, f.witness(j.to, j.time).expect("occupied site has a witness")));
            }
        }
        let Some((k, hat)) = splice else {
            return Ok(Some((gamma, trace)));
        };
        let r = gamma.jumps[k].time;
        debug_assert!(trace.violations.last().map_or(true, |&p| r < p), "violation times must decrease");
        trace.violations.push(r);
        let mut jumps = hat.jumps;
        jumps.extend_from_slice(&gamma.jumps[k + 1..]);
        gamma = InfectionPath { start: s, end: t, origin: hat.origin, jumps };
    }
}

/// The unique reverse-free basic path from (x, t1) to the level t2, by the
/// reversed repair loop: take the smallest violating jump time s, keep the
/// path on [t1, s) (staying at γ(s−) at s), and continue with a basic path
/// from (γ(s−), s+) to the level t2.
pub fn find_rfbip(
    h: &AugmentedHarrisSystem,
    x: usize,
    t1: f64,
    t2: f64,
) -> Result<Option<(InfectionPath, RepairTrace)>, PathError> {
    let Some(mut gamma) = reachable(h, &Anchor::Point(x, t1), &Anchor::Level(t2), Mode::Basic)? else {
        return Ok(None);
    };
    let mut trace = RepairTrace::default();
    loop {
        let mut b = Backward::from_level(h, t2);
        let mut violation = None;
        for (k, j) in gamma.jumps.iter().enumerate().rev() {
            b.retreat_after(j.time, Mode::Basic);
            if b.alive(j.from) {
                violation = Some(k);
            }
        }
        let Some(k) = violation else {
            return Ok(Some((gamma, trace)));
        };
        let j = gamma.jumps[k];
        debug_assert!(trace.violations.last().map_or(true, |&p| j.time > p), "violation times must increase");
        trace.violations.push(j.time);
        let mut f = Forward::new(h, &[j.from], j.time, false, Mode::Basic);
        f.advance_before(t2);
        let y = (0..h.n_sites())
            .find(|&y| f.occupied(y) && !h.has_death_at(y, t2))
            .expect("violation implies a continuation to the top level");
        let hat = f.witness(y, t2).expect("witness");
        let mut jumps = gamma.jumps[..k].to_vec();
        jumps.extend_from_slice(&hat.jumps);
        gamma = InfectionPath { start: t1, end: t2, origin: x, jumps };
    }
}

/// The same path computed as the time reflection of the unique free path in
/// `reverse(H, t2)` from level 0 to (x, t2 − t1).
pub fn find_rfbip_via_reversal(
    h: &AugmentedHarrisSystem,
    x: usize,
    t1: f64,
    t2: f64,
) -> Result<Option<InfectionPath>, PathError> {
    check_times(h, t1, t2)?;
    let r = h.reverse(t2).map_err(|e| PathError::Malformed(e.to_string()))?;
    Ok(find_fbip(&r, 0.0, x, t2 - t1)?.map(|(g, _)| {
        let mut back = g.reversed(t2);
        // reversing 0..t2−t1 maps back onto t1..t2 exactly in real arithmetic;
        // pin the endpoints to the requested values
        back.start = t1;
        back.end = t2;
        back
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphical::{sample_harris, HarrisBuilder, LatticeWindow};

    fn w5(th: f64) -> LatticeWindow {
        LatticeWindow::line(2, 1, th).unwrap()
    }

    fn idx(h: &AugmentedHarrisSystem, x: i64) -> usize {
        h.window().index(&[x]).unwrap()
    }

    #[test]
    fn self_reachability_by_convention() {
        let h = HarrisBuilder::new(w5(1.0), 2.0, 1.0).build().unwrap();
        let x = idx(&h, 0);
        let p = reachable(&h, &Anchor::Point(x, 0.5), &Anchor::Point(x, 0.5), Mode::Basic).unwrap();
        assert_eq!(p, Some(InfectionPath::constant(x, 0.5, 0.5)));
    }

    #[test]
    fn immediate_death_blocks() {
        let h = HarrisBuilder::new(w5(1.0), 2.0, 1.0).death(&[0], 0.1).build().unwrap();
        let x = idx(&h, 0);
        assert!(reachable(&h, &Anchor::Point(x, 0.0), &Anchor::Point(x, 0.2), Mode::Selective).unwrap().is_none());
        // a death exactly at the end point also blocks
        assert!(reachable(&h, &Anchor::Point(x, 0.0), &Anchor::Point(x, 0.1), Mode::Basic).unwrap().is_none());
        assert!(reachable(&h, &Anchor::Point(x, 0.1), &Anchor::Point(x, 0.5), Mode::Basic).unwrap().is_none());
        assert!(reachable(&h, &Anchor::Point(x, 0.0), &Anchor::Point(x, 0.09), Mode::Basic).unwrap().is_some());
        assert!(reachable(&h, &Anchor::Point(x, 0.5), &Anchor::Point(x, 0.2), Mode::Basic).is_err());
    }

    #[test]
    fn selective_only_connection() {
        let h = HarrisBuilder::new(w5(1.0), 2.0, 1.0)
            .selective(&[0], &[1], 0.2)
            .arrow(&[1], &[2], 0.4)
            .build()
            .unwrap();
        let (a, c) = (idx(&h, 0), idx(&h, 2));
        let src = Anchor::Point(a, 0.0);
        let dst = Anchor::Point(c, 1.0);
        assert!(reachable(&h, &src, &dst, Mode::Basic).unwrap().is_none());
        let p = reachable(&h, &src, &dst, Mode::Selective).unwrap().unwrap();
        assert_eq!(p.jumps.len(), 2);
        let cls = classify(&h, &p).unwrap();
        assert!(cls.is_sip && !cls.is_bip && !cls.is_fbip && !cls.is_rfbip);
    }

    #[test]
    fn constant_path_in_empty_column_has_all_flags() {
        let h = HarrisBuilder::new(w5(1.0), 2.0, 1.0).arrow(&[1], &[2], 0.5).build().unwrap();
        let cls = classify(&h, &InfectionPath::constant(idx(&h, 0), 0.0, 1.0)).unwrap();
        assert_eq!(cls.as_array(), [true; 6]);
    }

    #[test]
    fn jump_onto_reachable_point_is_not_free() {
        // (0,0) -> 1 at 0.3; but site 1 is itself reachable from level 0.
        let h = HarrisBuilder::new(w5(1.0), 2.0, 1.0).arrow(&[0], &[1], 0.3).build().unwrap();
        let p = InfectionPath { start: 0.0, end: 1.0, origin: idx(&h, 0), jumps: vec![Jump { time: 0.3, from: idx(&h, 0), to: idx(&h, 1) }] };
        let cls = classify(&h, &p).unwrap();
        assert!(cls.is_bip && !cls.is_fbip && !cls.is_fsip);
        // and it is not reverse free either: (0, 0.3+) survives to the top
        assert!(!cls.is_rfbip);
        let (g, _) = find_fbip(&h, 0.0, idx(&h, 1), 1.0).unwrap().unwrap();
        assert_eq!(g, InfectionPath::constant(idx(&h, 1), 0.0, 1.0));
    }

    #[test]
    fn diamond_has_two_basic_paths() {
        let h = HarrisBuilder::new(w5(1.0), 2.0, 1.0)
            .arrow(&[0], &[1], 0.1)
            .arrow(&[0], &[-1], 0.2)
            .death(&[0], 0.3)
            .arrow(&[1], &[2], 0.4)
            .arrow(&[-1], &[-2], 0.5)
            .death(&[1], 0.6)
            .death(&[-1], 0.65)
            .arrow(&[2], &[1], 0.7)
            .arrow(&[-2], &[-1], 0.8)
            .death(&[2], 0.85)
            .death(&[-2], 0.86)
            .arrow(&[1], &[0], 0.9)
            .arrow(&[-1], &[0], 0.95)
            .build()
            .unwrap();
        let o = idx(&h, 0);
        let ps = enumerate_paths(&h, &Anchor::Point(o, 0.0), &Anchor::Point(o, 1.0), Mode::Basic, 60).unwrap();
        assert_eq!(ps.len(), 2);
        for p in &ps {
            assert!(classify(&h, p).unwrap().is_bip);
        }
    }

    #[test]
    fn no_events_single_constant_path() {
        let h = HarrisBuilder::new(w5(1.0), 2.0, 1.0).build().unwrap();
        let o = idx(&h, 0);
        let ps = enumerate_paths(&h, &Anchor::Point(o, 0.0), &Anchor::Point(o, 1.0), Mode::Selective, 60).unwrap();
        assert_eq!(ps, vec![InfectionPath::constant(o, 0.0, 1.0)]);
    }

    #[test]
    fn cap_is_enforced() {
        let h = sample_harris(&LatticeWindow::line(5, 1, 20.0).unwrap(), 3.0, 2.0, 1).unwrap();
        let e = enumerate_paths(&h, &Anchor::Level(0.0), &Anchor::Level(20.0), Mode::Basic, DEFAULT_EVENT_CAP);
        assert!(matches!(e, Err(PathError::CapExceeded(_, 60))));
    }

    #[test]
    fn death_time_examples() {
        let h = HarrisBuilder::new(w5(1.0), 2.0, 1.0).death(&[0], 0.4).build().unwrap();
        assert_eq!(death_time(&h, &[idx(&h, 0)]).unwrap(), DeathTime::Finite(0.4));
        assert_eq!(death_time(&h, &[idx(&h, 1)]).unwrap(), DeathTime::Censored);
        assert!(death_time(&h, &[]).is_err());
    }

    #[test]
    fn repair_loops_agree_with_enumeration_on_small_systems() {
        let w = LatticeWindow::line(2, 1, 3.0).unwrap();
        for seed in 0..200 {
            let h = sample_harris(&w, 2.5, 1.5, seed).unwrap();
            for x in 0..5 {
                let all = enumerate_paths(&h, &Anchor::Level(0.0), &Anchor::Point(x, 3.0), Mode::Basic, 200).unwrap();
                let free: Vec<_> = all.iter().filter(|p| classify(&h, p).unwrap().is_fbip).collect();
                assert!(free.len() <= 1);
                let got = find_fbip(&h, 0.0, x, 3.0).unwrap().map(|(g, _)| g);
                assert_eq!(got.as_ref(), free.first().copied(), "seed {seed} site {x}");
                assert_eq!(all.is_empty(), got.is_none());

                let all = enumerate_paths(&h, &Anchor::Point(x, 0.5), &Anchor::Level(3.0), Mode::Basic, 200).unwrap();
                let rfree: Vec<_> = all.iter().filter(|p| classify(&h, p).unwrap().is_rfbip).collect();
                assert!(rfree.len() <= 1);
                let a = find_rfbip(&h, x, 0.5, 3.0).unwrap().map(|(g, _)| g);
                let b = find_rfbip_via_reversal(&h, x, 0.5, 3.0).unwrap();
                assert_eq!(a.as_ref(), rfree.first().copied(), "seed {seed} site {x}");
                assert_eq!(a.is_some(), b.is_some());
                if let (Some(a), Some(b)) = (a, b) {
                    assert_eq!(a.origin, b.origin);
                    assert_eq!(a.jumps.len(), b.jumps.len());
                    for (p, q) in a.jumps.iter().zip(&b.jumps) {
                        assert_eq!((p.from, p.to), (q.from, q.to));
                        assert!((p.time - q.time).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn document_round_trip() {
        let h = sample_harris(&LatticeWindow::line(4, 1, 5.0).unwrap(), 3.0, 2.0, 4).unwrap();
        if let Some((g, _)) = find_rfbip(&h, 4, 0.0, 5.0).unwrap() {
            let doc = g.to_document(h.window());
            assert_eq!(InfectionPath::from_document(&doc, h.window()).unwrap(), g);
        }
    }

    #[test]
    fn concatenate_checks_endpoints() {
        let a = InfectionPath::constant(1, 0.0, 1.0);
        let b = InfectionPath::constant(1, 1.0, 2.0);
        assert_eq!(concatenate(&a, &b).unwrap(), InfectionPath::constant(1, 0.0, 2.0));
        assert!(concatenate(&a, &InfectionPath::constant(2, 1.0, 2.0)).is_err());
    }
}
