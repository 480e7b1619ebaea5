//! Augmented Harris systems on finite space-time windows.
//!
//! A system is stored twice: as one globally time-sorted event list (what the
//! sweeps in [`crate::paths`] and [`crate::process`] consume) and as per-site /
//! per-edge sorted lists in CSR layout (what the literal condition checks
//! consume). Site indices are *relative to the window*: index `i` is the lattice
//! point `center + offset[i]`. Shifting therefore never renumbers sites, it only
//! moves the center; reflections permute indices.

use std::collections::HashMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A lattice point of Z^d.
pub type Point = Vec<i64>;

pub fn l1_norm(p: &[i64]) -> i64 {
    p.iter().map(|c| c.abs()).sum()
}

pub fn l1_dist(a: &[i64], b: &[i64]) -> i64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

pub fn add(a: &[i64], b: &[i64]) -> Point {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn sub(a: &[i64], b: &[i64]) -> Point {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// `k * e_i` in dimension `d` (`i` is 1-based).
pub fn unit(d: usize, i: usize, k: i64) -> Point {
    let mut p = vec![0; d];
    p[i - 1] = k;
    p
}

/// The linear map ψ^{(i,κ)}: e1 ↦ κe_i, e_i ↦ κe1, other axes fixed.
/// For `i = 1` this is the identity when κ = 1 and the sign flip of the first
/// coordinate when κ = −1.
pub fn psi(p: &[i64], i: usize, kappa: i64) -> Point {
    let mut q = p.to_vec();
    if i == 1 {
        q[0] = kappa * p[0];
    } else {
        q[i - 1] = kappa * p[0];
        q[0] = kappa * p[i - 1];
    }
    q
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HarrisError {
    #[error("invalid window: {0}")]
    Window(String),
    #[error("rates must satisfy λ1 > λ2 > 0 (got λ1 = {lambda1}, λ2 = {lambda2})")]
    Rates { lambda1: f64, lambda2: f64 },
    #[error("interval [{0}, {1}] is empty, inverted or outside the horizon")]
    Interval(f64, f64),
    #[error("time {0} outside [0, {1}]")]
    Time(f64, f64),
    #[error("site {0:?} is not in the window")]
    UnknownSite(Point),
    #[error("no edge from {0:?} to {1:?}")]
    UnknownEdge(Point, Point),
    #[error("axis {0} out of range 1..={1}")]
    Axis(usize, usize),
    #[error("duplicate event time {0}")]
    DuplicateTime(f64),
    #[error("malformed system document: {0}")]
    Document(String),
}

#[derive(Debug)]
struct SiteTable {
    offsets: Vec<Point>,
    lookup: HashMap<Point, usize>,
    edges: Vec<(usize, usize)>,
    /// `edge_start[i]..edge_start[i+1]` are the ids of edges out of site `i`,
    /// sorted by target.
    edge_start: Vec<usize>,
    /// ℓ1 norm of each offset.
    norms: Vec<i64>,
}

impl SiteTable {
    fn build(dim: usize, radius: i64, range: i64) -> SiteTable {
        let side = (2 * radius + 1) as usize;
        let mut offsets = Vec::new();
        for k in 0..side.pow(dim as u32) {
            let mut rest = k;
            let mut p = vec![0i64; dim];
            for axis in (0..dim).rev() {
                p[axis] = (rest % side) as i64 - radius;
                rest /= side;
            }
            if l1_norm(&p) <= radius {
                offsets.push(p);
            }
        }
        let lookup: HashMap<Point, usize> =
            offsets.iter().enumerate().map(|(i, p)| (p.clone(), i)).collect();
        let side_r = (2 * range + 1) as usize;
        let mut deltas = Vec::new();
        for k in 0..side_r.pow(dim as u32) {
            let mut rest = k;
            let mut p = vec![0i64; dim];
            for axis in (0..dim).rev() {
                p[axis] = (rest % side_r) as i64 - range;
                rest /= side_r;
            }
            let n = l1_norm(&p);
            if n > 0 && n <= range {
                deltas.push(p);
            }
        }
        let mut edges = Vec::new();
        let mut edge_start = vec![0];
        for (i, p) in offsets.iter().enumerate() {
            let mut targets: Vec<usize> =
                deltas.iter().filter_map(|dlt| lookup.get(&add(p, dlt)).copied()).collect();
            targets.sort_unstable();
            edges.extend(targets.into_iter().map(|j| (i, j)));
            edge_start.push(edges.len());
        }
        let norms = offsets.iter().map(|p| l1_norm(p)).collect();
        SiteTable { offsets, lookup, edges, edge_start, norms }
    }
}

/// The ball B_c(M) in the ℓ1 norm (c = 0 for freshly sampled systems), with
/// interaction range R and horizon T_h.
#[derive(Clone, Debug)]
pub struct LatticeWindow {
    dim: usize,
    radius: i64,
    range: i64,
    horizon: f64,
    center: Point,
    table: Arc<SiteTable>,
}

impl PartialEq for LatticeWindow {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim
            && self.radius == other.radius
            && self.range == other.range
            && self.horizon == other.horizon
            && self.center == other.center
    }
}

impl LatticeWindow {
    pub fn new(dim: usize, radius: i64, range: i64, horizon: f64) -> Result<Self, HarrisError> {
        if dim == 0 {
            return Err(HarrisError::Window("dimension must be at least 1".into()));
        }
        if range < 1 || radius < range {
            return Err(HarrisError::Window(format!("need M ≥ R ≥ 1 (M = {radius}, R = {range})")));
        }
        if !(horizon >= 0.0) || !horizon.is_finite() {
            return Err(HarrisError::Window(format!("horizon must be finite and ≥ 0, got {horizon}")));
        }
        let table = Arc::new(SiteTable::build(dim, radius, range));
        Ok(LatticeWindow { dim, radius, range, horizon, center: vec![0; dim], table })
    }

    /// A one-dimensional window `{x : |x| ≤ radius}`, the workhorse of the tests.
    pub fn line(radius: i64, range: i64, horizon: f64) -> Result<Self, HarrisError> {
        Self::new(1, radius, range, horizon)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn radius(&self) -> i64 {
        self.radius
    }
    pub fn range(&self) -> i64 {
        self.range
    }
    pub fn horizon(&self) -> f64 {
        self.horizon
    }
    pub fn center(&self) -> &Point {
        &self.center
    }
    pub fn n_sites(&self) -> usize {
        self.table.offsets.len()
    }
    pub fn n_edges(&self) -> usize {
        self.table.edges.len()
    }

    /// Lattice coordinates of site `i`.
    pub fn point(&self, i: usize) -> Point {
        add(&self.center, &self.table.offsets[i])
    }

    /// Site index of lattice point `p`, if inside the window.
    pub fn index(&self, p: &[i64]) -> Option<usize> {
        if p.len() != self.dim {
            return None;
        }
        self.table.lookup.get(&sub(p, &self.center)).copied()
    }

    pub fn index_or_err(&self, p: &[i64]) -> Result<usize, HarrisError> {
        self.index(p).ok_or_else(|| HarrisError::UnknownSite(p.to_vec()))
    }

    /// `(from, to)` of edge `e`.
    pub fn edge(&self, e: usize) -> (usize, usize) {
        self.table.edges[e]
    }

    pub fn edge_id(&self, from: usize, to: usize) -> Option<usize> {
        let range = self.table.edge_start[from]..self.table.edge_start[from + 1];
        let slice = &self.table.edges[range.clone()];
        slice.binary_search_by_key(&to, |&(_, t)| t).ok().map(|k| range.start + k)
    }

    /// Edge ids out of site `i`.
    pub fn out_edges(&self, i: usize) -> std::ops::Range<usize> {
        self.table.edge_start[i]..self.table.edge_start[i + 1]
    }

    /// ‖x − c‖₁ of site `i`, measured from the window center.
    pub fn offset_norm(&self, i: usize) -> i64 {
        self.table.norms[i]
    }

    /// ℓ1 distance between two sites of the window.
    pub fn site_dist(&self, a: usize, b: usize) -> i64 {
        l1_dist(&self.table.offsets[a], &self.table.offsets[b])
    }

    /// True when the site is within `R` of the window boundary
    /// (‖x − c‖₁ ≥ M − R), where truncation can bias results.
    pub fn near_boundary(&self, i: usize) -> bool {
        self.table.norms[i] >= self.radius - self.range
    }

    /// True when the window is not centered at the origin, i.e. it was
    /// produced by a spatial shift and part of B_0(M) is missing.
    pub fn is_clipped(&self) -> bool {
        self.center.iter().any(|&c| c != 0)
    }

    fn with(&self, horizon: f64, center: Point) -> LatticeWindow {
        LatticeWindow { horizon, center, ..self.clone() }
    }

    /// Index permutation induced by ψ^{(i,κ)} on offsets (the ball is symmetric).
    fn psi_perm(&self, axis: usize, kappa: i64) -> Vec<usize> {
        self.table
            .offsets
            .iter()
            .map(|o| self.table.lookup[&psi(o, axis, kappa)])
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
pub enum EventKind {
    Death,
    Arrow,
    Selective,
}

/// One Poisson mark. For deaths `from == to`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Event {
    pub time: f64,
    pub kind: EventKind,
    pub from: u32,
    pub to: u32,
}

/// Which Poisson process to query with [`AugmentedHarrisSystem::events_in`].
#[derive(Clone, Debug, PartialEq)]
pub enum EventKey {
    Death(Point),
    Arrow(Point, Point),
    Selective(Point, Point),
}

#[derive(Clone, Debug, PartialEq)]
struct Csr {
    start: Vec<u32>,
    times: Vec<f64>,
}

impl Csr {
    fn from_buckets(n: usize, items: impl Iterator<Item = (usize, f64)> + Clone) -> Csr {
        let mut start = vec![0u32; n + 1];
        for (k, _) in items.clone() {
            start[k + 1] += 1;
        }
        for k in 0..n {
            start[k + 1] += start[k];
        }
        let mut fill = start.clone();
        let mut times = vec![0.0; start[n] as usize];
        for (k, t) in items {
            times[fill[k] as usize] = t;
            fill[k] += 1;
        }
        Csr { start, times }
    }

    fn get(&self, k: usize) -> &[f64] {
        &self.times[self.start[k] as usize..self.start[k + 1] as usize]
    }
}

/// H = ({D^x}, {D^{x,y}}) together with the selective arrows {𝒟^{x,y}}.
#[derive(Clone, Debug)]
pub struct AugmentedHarrisSystem {
    window: LatticeWindow,
    lambda1: f64,
    lambda2: f64,
    seed: u64,
    events: Vec<Event>,
    deaths: Csr,
    arrows: Csr,
    selective: Csr,
}

impl PartialEq for AugmentedHarrisSystem {
    fn eq(&self, other: &Self) -> bool {
        self.window == other.window
            && self.lambda1 == other.lambda1
            && self.lambda2 == other.lambda2
            && self.events == other.events
    }
}

fn check_rates(lambda1: f64, lambda2: f64) -> Result<(), HarrisError> {
    if !(lambda2 > 0.0 && lambda1 > lambda2 && lambda1.is_finite()) {
        return Err(HarrisError::Rates { lambda1, lambda2 });
    }
    Ok(())
}

/// Samples the augmented Harris system on `window`.
///
/// All processes are independent Poisson processes (deaths rate 1 per site,
/// arrows rate λ2 and selective arrows rate λ1−λ2 per ordered edge). They are
/// generated as one superposed process of total rate
/// `|sites| + λ1·|edges|`, each mark being assigned to a process with
/// probability proportional to its rate. This yields the events already in
/// time order.
pub fn sample_harris(
    window: &LatticeWindow,
    lambda1: f64,
    lambda2: f64,
    seed: u64,
) -> Result<AugmentedHarrisSystem, HarrisError> {
    check_rates(lambda1, lambda2)?;
    Ok(sample_raw(window, lambda1, lambda2, seed))
}

/// Samples a system without selective arrows (λ1 = λ2 = λ). This is the
/// graphical construction of the one-type contact process and of the
/// symmetric multitype process, which the global assumption λ1 > λ2 excludes
/// from [`sample_harris`].
pub fn sample_symmetric(
    window: &LatticeWindow,
    lambda: f64,
    seed: u64,
) -> Result<AugmentedHarrisSystem, HarrisError> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(HarrisError::Rates { lambda1: lambda, lambda2: lambda });
    }
    Ok(sample_raw(window, lambda, lambda, seed))
}

fn sample_raw(window: &LatticeWindow, lambda1: f64, lambda2: f64, seed: u64) -> AugmentedHarrisSystem {
    let stream = EventStream::new(window, lambda1, lambda2, seed);
    let mut events = Vec::with_capacity((stream.total * window.horizon() * 1.05) as usize + 16);
    events.extend(stream);
    AugmentedHarrisSystem::from_sorted(window.clone(), lambda1, lambda2, seed, events)
}

/// The marks of [`sample_harris`] / [`sample_symmetric`] generated lazily in
/// time order: for equal arguments it yields exactly the event list of the
/// sampled system, so a consumer may stop early without sampling the rest.
#[derive(Clone, Debug)]
pub struct EventStream<'w> {
    window: &'w LatticeWindow,
    rng: ChaCha8Rng,
    n: f64,
    rate_arrow: f64,
    lambda1: f64,
    lambda2: f64,
    total: f64,
    t: f64,
    done: bool,
}

impl<'w> EventStream<'w> {
    /// Callers validate the rates (λ1 ≥ λ2 ≥ 0).
    pub(crate) fn new(window: &'w LatticeWindow, lambda1: f64, lambda2: f64, seed: u64) -> Self {
        let n = window.n_sites() as f64;
        let m = window.n_edges() as f64;
        let rate_arrow = m * lambda2;
        let total = n + rate_arrow + m * (lambda1 - lambda2);
        EventStream {
            window,
            rng: ChaCha8Rng::seed_from_u64(seed),
            n,
            rate_arrow,
            lambda1,
            lambda2,
            total,
            t: 0.0,
            done: total <= 0.0,
        }
    }
}

impl Iterator for EventStream<'_> {
    type Item = Event;

    fn next(&mut self) -> Option<Event> {
        if self.done {
            return None;
        }
        // Exp(total) gap; a gap that does not advance the clock (or lands on
        // 0) would create a duplicate time, so it is redrawn.
        let next = loop {
            let gap: f64 = self.rng.sample(Exp1);
            let next = self.t + gap / self.total;
            if next > self.t {
                break next;
            }
        };
        if next >= self.window.horizon() {
            self.done = true;
            return None;
        }
        self.t = next;
        let w = self.window;
        let u = self.rng.gen::<f64>() * self.total;
        Some(if u < self.n {
            let x = (u as usize).min(w.n_sites() - 1) as u32;
            Event { time: next, kind: EventKind::Death, from: x, to: x }
        } else if u < self.n + self.rate_arrow {
            let e = (((u - self.n) / self.lambda2) as usize).min(w.n_edges() - 1);
            let (a, b) = w.edge(e);
            Event { time: next, kind: EventKind::Arrow, from: a as u32, to: b as u32 }
        } else {
            let e = (((u - self.n - self.rate_arrow) / (self.lambda1 - self.lambda2)) as usize).min(w.n_edges() - 1);
            let (a, b) = w.edge(e);
            Event { time: next, kind: EventKind::Selective, from: a as u32, to: b as u32 }
        })
    }
}

/// Lazy counterpart of [`sample_harris`].
pub fn stream_harris(window: &LatticeWindow, lambda1: f64, lambda2: f64, seed: u64) -> Result<EventStream<'_>, HarrisError> {
    check_rates(lambda1, lambda2)?;
    Ok(EventStream::new(window, lambda1, lambda2, seed))
}

/// Lazy counterpart of [`sample_symmetric`].
pub fn stream_symmetric(window: &LatticeWindow, lambda: f64, seed: u64) -> Result<EventStream<'_>, HarrisError> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(HarrisError::Rates { lambda1: lambda, lambda2: lambda });
    }
    Ok(EventStream::new(window, lambda, lambda, seed))
}

/// Builds systems from explicit event lists (for hand-built instances).
#[derive(Clone, Debug)]
pub struct HarrisBuilder {
    window: LatticeWindow,
    lambda1: f64,
    lambda2: f64,
    seed: u64,
    events: Vec<(f64, EventKind, Point, Point)>,
}

impl HarrisBuilder {
    pub fn new(window: LatticeWindow, lambda1: f64, lambda2: f64) -> Self {
        HarrisBuilder { window, lambda1, lambda2, seed: 0, events: Vec::new() }
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn death(mut self, x: &[i64], t: f64) -> Self {
        self.events.push((t, EventKind::Death, x.to_vec(), x.to_vec()));
        self
    }

    pub fn arrow(mut self, x: &[i64], y: &[i64], t: f64) -> Self {
        self.events.push((t, EventKind::Arrow, x.to_vec(), y.to_vec()));
        self
    }

    pub fn selective(mut self, x: &[i64], y: &[i64], t: f64) -> Self {
        self.events.push((t, EventKind::Selective, x.to_vec(), y.to_vec()));
        self
    }

    pub fn push(self, kind: EventKind, x: &[i64], y: &[i64], t: f64) -> Self {
        match kind {
            EventKind::Death => self.death(x, t),
            EventKind::Arrow => self.arrow(x, y, t),
            EventKind::Selective => self.selective(x, y, t),
        }
    }

    /// Validates sites, edges, times and distinctness of all times.
    pub fn build(self) -> Result<AugmentedHarrisSystem, HarrisError> {
        let w = &self.window;
        let mut events = Vec::with_capacity(self.events.len());
        for (t, kind, x, y) in &self.events {
            if !(*t >= 0.0 && *t <= w.horizon()) {
                return Err(HarrisError::Time(*t, w.horizon()));
            }
            let a = w.index_or_err(x)?;
            let b = w.index_or_err(y)?;
            if *kind != EventKind::Death && w.edge_id(a, b).is_none() {
                return Err(HarrisError::UnknownEdge(x.clone(), y.clone()));
            }
            events.push(Event { time: *t, kind: *kind, from: a as u32, to: b as u32 });
        }
        events.sort_by(|p, q| p.time.total_cmp(&q.time));
        if let Some(pair) = events.windows(2).find(|p| p[0].time == p[1].time) {
            return Err(HarrisError::DuplicateTime(pair[0].time));
        }
        Ok(AugmentedHarrisSystem::from_sorted(self.window, self.lambda1, self.lambda2, self.seed, events))
    }
}

impl AugmentedHarrisSystem {
    fn from_sorted(window: LatticeWindow, lambda1: f64, lambda2: f64, seed: u64, events: Vec<Event>) -> Self {
        let n = window.n_sites();
        let m = window.n_edges();
        let deaths = Csr::from_buckets(
            n,
            events.iter().filter(|e| e.kind == EventKind::Death).map(|e| (e.from as usize, e.time)),
        );
        let edge_of = |e: &Event| window.edge_id(e.from as usize, e.to as usize).expect("event on a window edge");
        let arrows = Csr::from_buckets(
            m,
            events.iter().filter(|e| e.kind == EventKind::Arrow).map(|e| (edge_of(e), e.time)),
        );
        let selective = Csr::from_buckets(
            m,
            events.iter().filter(|e| e.kind == EventKind::Selective).map(|e| (edge_of(e), e.time)),
        );
        AugmentedHarrisSystem { window, lambda1, lambda2, seed, events, deaths, arrows, selective }
    }

    pub fn window(&self) -> &LatticeWindow {
        &self.window
    }
    pub fn horizon(&self) -> f64 {
        self.window.horizon
    }
    pub fn lambda1(&self) -> f64 {
        self.lambda1
    }
    pub fn lambda2(&self) -> f64 {
        self.lambda2
    }
    pub fn seed(&self) -> u64 {
        self.seed
    }
    pub fn n_sites(&self) -> usize {
        self.window.n_sites()
    }

    /// All marks, sorted by time (times are pairwise distinct).
    pub fn events(&self) -> &[Event] {
        &self.events
    }

    /// Index of the first event with time `> t` (`strict`) or `≥ t`.
    pub fn event_index_after(&self, t: f64, strict: bool) -> usize {
        if strict {
            self.events.partition_point(|e| e.time <= t)
        } else {
            self.events.partition_point(|e| e.time < t)
        }
    }

    pub fn deaths_at(&self, site: usize) -> &[f64] {
        self.deaths.get(site)
    }
    pub fn arrows_on(&self, edge: usize) -> &[f64] {
        self.arrows.get(edge)
    }
    pub fn selective_on(&self, edge: usize) -> &[f64] {
        self.selective.get(edge)
    }

    /// True when `site` carries a death mark exactly at `t`.
    pub fn has_death_at(&self, site: usize, t: f64) -> bool {
        self.deaths.get(site).binary_search_by(|s| s.total_cmp(&t)).is_ok()
    }

    /// Death marks of `site` in the closed interval `[a, b]`.
    pub fn deaths_in(&self, site: usize, a: f64, b: f64) -> &[f64] {
        slice_closed(self.deaths.get(site), a, b)
    }

    pub fn arrows_in(&self, from: usize, to: usize, a: f64, b: f64) -> &[f64] {
        match self.window.edge_id(from, to) {
            Some(e) => slice_closed(self.arrows.get(e), a, b),
            None => &[],
        }
    }

    pub fn selective_in(&self, from: usize, to: usize, a: f64, b: f64) -> &[f64] {
        match self.window.edge_id(from, to) {
            Some(e) => slice_closed(self.selective.get(e), a, b),
            None => &[],
        }
    }

    /// Sorted times of one Poisson process inside the closed interval `[a, b]`.
    pub fn events_in(&self, key: &EventKey, a: f64, b: f64) -> Result<Vec<f64>, HarrisError> {
        if !(a >= 0.0 && b <= self.horizon()) {
            return Err(HarrisError::Interval(a, b));
        }
        if a > b {
            return Ok(Vec::new());
        }
        let w = &self.window;
        let edge = |x: &Point, y: &Point| -> Result<usize, HarrisError> {
            let i = w.index_or_err(x)?;
            let j = w.index_or_err(y)?;
            w.edge_id(i, j).ok_or_else(|| HarrisError::UnknownEdge(x.clone(), y.clone()))
        };
        Ok(match key {
            EventKey::Death(x) => slice_closed(self.deaths.get(w.index_or_err(x)?), a, b).to_vec(),
            EventKey::Arrow(x, y) => slice_closed(self.arrows.get(edge(x, y)?), a, b).to_vec(),
            EventKey::Selective(x, y) => slice_closed(self.selective.get(edge(x, y)?), a, b).to_vec(),
        })
    }

    /// Per-species event counts (deaths, arrows, selective arrows).
    pub fn counts(&self) -> [usize; 3] {
        [self.deaths.times.len(), self.arrows.times.len(), self.selective.times.len()]
    }

    /// The restriction of the system to `[a, b]`; with `rebase` times are
    /// re-expressed relative to `a` and the horizon becomes `b − a`.
    pub fn restrict(&self, a: f64, b: f64, rebase: bool) -> Result<Self, HarrisError> {
        if !(a >= 0.0 && a <= b && b <= self.horizon()) {
            return Err(HarrisError::Interval(a, b));
        }
        let off = if rebase { a } else { 0.0 };
        let events = self
            .events
            .iter()
            .filter(|e| e.time >= a && e.time <= b)
            .map(|e| Event { time: e.time - off, ..*e })
            .collect();
        let horizon = if rebase { b - a } else { self.horizon() };
        let window = self.window.with(horizon, self.window.center.clone());
        Ok(Self::from_sorted(window, self.lambda1, self.lambda2, self.seed, events))
    }

    /// The space-time shift θ(x0, t0): an event at (x, t) of the result
    /// corresponds to the event at (x0 + x, t0 + t) of `self`. The window is
    /// the original one seen from x0, so no site is lost or invented; it is
    /// flagged as clipped when not centered at the origin.
    pub fn shift(&self, x0: &[i64], t0: f64) -> Result<Self, HarrisError> {
        if !(t0 >= 0.0 && t0 <= self.horizon()) {
            return Err(HarrisError::Time(t0, self.horizon()));
        }
        if x0.len() != self.window.dim {
            return Err(HarrisError::UnknownSite(x0.to_vec()));
        }
        let start = self.event_index_after(t0, false);
        let events = self.events[start..].iter().map(|e| Event { time: e.time - t0, ..*e }).collect();
        let window = self.window.with(self.horizon() - t0, sub(&self.window.center, x0));
        Ok(Self::from_sorted(window, self.lambda1, self.lambda2, self.seed, events))
    }

    /// Time reversal on [0, u]: marks at u − t, arrows with reversed direction.
    pub fn reverse(&self, u: f64) -> Result<Self, HarrisError> {
        if !(u >= 0.0 && u <= self.horizon()) {
            return Err(HarrisError::Time(u, self.horizon()));
        }
        let end = self.event_index_after(u, true);
        let events = self.events[..end]
            .iter()
            .rev()
            .map(|e| Event { time: u - e.time, kind: e.kind, from: e.to, to: e.from })
            .collect();
        let window = self.window.with(u, self.window.center.clone());
        Ok(Self::from_sorted(window, self.lambda1, self.lambda2, self.seed, events))
    }

    /// Relocates every mark by ψ^{(i,κ)}; times unchanged.
    pub fn reflect_psi(&self, axis: usize, kappa: i64) -> Result<Self, HarrisError> {
        let d = self.window.dim;
        if axis == 0 || axis > d {
            return Err(HarrisError::Axis(axis, d));
        }
        if kappa != 1 && kappa != -1 {
            return Err(HarrisError::Axis(axis, d));
        }
        let perm = self.window.psi_perm(axis, kappa);
        let events = self
            .events
            .iter()
            .map(|e| Event { from: perm[e.from as usize] as u32, to: perm[e.to as usize] as u32, ..*e })
            .collect();
        let window = self.window.with(self.horizon(), psi(&self.window.center, axis, kappa));
        Ok(Self::from_sorted(window, self.lambda1, self.lambda2, self.seed, events))
    }

    /// Index permutation that [`Self::reflect_psi`] applies to sites.
    pub fn psi_site_map(&self, axis: usize, kappa: i64) -> Vec<usize> {
        self.window.psi_perm(axis, kappa)
    }

    /// Self-describing JSON document; exact round trip through
    /// [`Self::from_document`].
    pub fn to_document(&self) -> SystemDocument {
        let w = &self.window;
        let deaths = (0..w.n_sites())
            .filter(|&i| !self.deaths.get(i).is_empty())
            .map(|i| SiteTimes { site: w.point(i), times: self.deaths.get(i).to_vec() })
            .collect();
        let edge_lists = |csr: &Csr| -> Vec<EdgeTimes> {
            (0..w.n_edges())
                .filter(|&e| !csr.get(e).is_empty())
                .map(|e| {
                    let (a, b) = w.edge(e);
                    EdgeTimes { from: w.point(a), to: w.point(b), times: csr.get(e).to_vec() }
                })
                .collect()
        };
        SystemDocument {
            window: WindowDocument {
                dim: w.dim,
                radius: w.radius,
                range: w.range,
                horizon: w.horizon,
                center: w.center.clone(),
            },
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            seed: self.seed,
            deaths,
            arrows: edge_lists(&self.arrows),
            selective_arrows: edge_lists(&self.selective),
        }
    }

    pub fn from_document(doc: &SystemDocument) -> Result<Self, HarrisError> {
        let wd = &doc.window;
        if wd.center.len() != wd.dim {
            return Err(HarrisError::Document("center has wrong dimension".into()));
        }
        let mut window = LatticeWindow::new(wd.dim, wd.radius, wd.range, wd.horizon)?;
        window.center = wd.center.clone();
        let mut b = HarrisBuilder::new(window, doc.lambda1, doc.lambda2).seed(doc.seed);
        for st in &doc.deaths {
            for &t in &st.times {
                b = b.death(&st.site, t);
            }
        }
        for et in &doc.arrows {
            for &t in &et.times {
                b = b.arrow(&et.from, &et.to, t);
            }
        }
        for et in &doc.selective_arrows {
            for &t in &et.times {
                b = b.selective(&et.from, &et.to, t);
            }
        }
        b.build()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("system serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, HarrisError> {
        let doc: SystemDocument = serde_json::from_str(s).map_err(|e| HarrisError::Document(e.to_string()))?;
        Self::from_document(&doc)
    }
}

fn slice_closed(times: &[f64], a: f64, b: f64) -> &[f64] {
    let lo = times.partition_point(|&t| t < a);
    let hi = times.partition_point(|&t| t <= b);
    if lo >= hi {
        &[]
    } else {
        &times[lo..hi]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowDocument {
    pub dim: usize,
    pub radius: i64,
    pub range: i64,
    pub horizon: f64,
    pub center: Point,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SiteTimes {
    pub site: Point,
    pub times: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeTimes {
    pub from: Point,
    pub to: Point,
    pub times: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemDocument {
    pub window: WindowDocument,
    pub lambda1: f64,
    pub lambda2: f64,
    pub seed: u64,
    pub deaths: Vec<SiteTimes>,
    pub arrows: Vec<EdgeTimes>,
    pub selective_arrows: Vec<EdgeTimes>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(m: i64, th: f64) -> LatticeWindow {
        LatticeWindow::line(m, 1, th).unwrap()
    }

    #[test]
    fn window_geometry() {
        let w = LatticeWindow::new(2, 2, 1, 1.0).unwrap();
        assert_eq!(w.n_sites(), 13);
        // 16 undirected nearest-neighbour bonds inside the diamond of radius 2
        assert_eq!(w.n_edges(), 2 * 16);
        let w = line(3, 1.0);
        assert_eq!(w.n_sites(), 7);
        assert_eq!(w.n_edges(), 12);
        assert_eq!(w.point(0), vec![-3]);
        assert!(LatticeWindow::line(1, 2, 1.0).is_err());
        let w = LatticeWindow::line(4, 2, 1.0).unwrap();
        for e in 0..w.n_edges() {
            let (a, b) = w.edge(e);
            assert!(w.site_dist(a, b) <= 2 && a != b);
            assert_eq!(w.edge_id(a, b), Some(e));
        }
    }

    #[test]
    fn rejects_bad_rates() {
        let w = line(2, 1.0);
        assert!(sample_harris(&w, 1.0, 1.0, 0).is_err());
        assert!(sample_harris(&w, 1.0, 2.0, 0).is_err());
        assert!(sample_harris(&w, 2.0, 1.0, 0).is_ok());
    }

    #[test]
    fn sampling_is_deterministic_and_distinct() {
        let w = line(5, 10.0);
        let a = sample_harris(&w, 2.5, 1.5, 7).unwrap();
        let b = sample_harris(&w, 2.5, 1.5, 7).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        assert!(a.events().windows(2).all(|p| p[0].time < p[1].time));
        assert!(a.events().iter().all(|e| e.time > 0.0 && e.time < 10.0));
        let c = sample_harris(&w, 2.5, 1.5, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn single_site_death_count_mean() {
        let w = LatticeWindow::line(1, 1, 1e4).unwrap();
        // 3 sites, no usable comparison for edges; check deaths per site.
        let h = sample_harris(&w, 1.0 + 1e-9, 1.0, 3).unwrap();
        for i in 0..3 {
            let k = h.deaths_at(i).len() as f64;
            assert!((k - 1e4).abs() < 5.0 * 100.0, "{k}");
        }
    }

    #[test]
    fn tiny_selective_rate_gives_no_selective_arrows() {
        let w = line(1, 1.0);
        let mut total = 0;
        for s in 0..50 {
            total += sample_harris(&w, 1.0 + 1e-9, 1.0, s).unwrap().counts()[2];
        }
        assert_eq!(total, 0);
    }

    #[test]
    fn restrict_examples() {
        let w = line(3, 5.0);
        let h = sample_harris(&w, 3.0, 2.0, 1).unwrap();
        assert_eq!(h.restrict(0.0, 5.0, false).unwrap(), h);
        let z = h.restrict(0.0, 0.0, false).unwrap();
        assert!(z.events().is_empty());
        let nested = h.restrict(1.0, 4.0, false).unwrap().restrict(2.0, 3.0, false).unwrap();
        assert_eq!(nested, h.restrict(2.0, 3.0, false).unwrap());
        assert!(h.restrict(3.0, 2.0, false).is_err());
        let rb = h.restrict(1.0, 4.0, true).unwrap();
        assert_eq!(rb.horizon(), 3.0);
    }

    #[test]
    fn shift_hand_built() {
        let w = line(3, 2.0);
        let h = HarrisBuilder::new(w, 2.0, 1.0).death(&[2], 1.5).arrow(&[0], &[1], 0.2).build().unwrap();
        let s = h.shift(&[1], 1.0).unwrap();
        let got = s.events_in(&EventKey::Death(vec![1]), 0.0, 1.0).unwrap();
        assert_eq!(got, vec![0.5]);
        assert_eq!(s.events().len(), 1);
        assert!(s.window().is_clipped());
        assert_eq!(h.shift(&[0], 0.0).unwrap(), h);
        assert!(h.shift(&[0], 3.0).is_err());
    }

    #[test]
    fn shift_semigroup() {
        let w = line(6, 6.0);
        let h = sample_harris(&w, 3.0, 2.0, 11).unwrap();
        let a = h.shift(&[1], 1.0).unwrap().shift(&[-3], 2.5).unwrap();
        let b = h.shift(&[-2], 3.5).unwrap();
        assert_eq!(a.to_json(), b.to_json());
    }

    #[test]
    fn reverse_hand_built_and_involution() {
        let w = line(1, 1.0);
        let h = HarrisBuilder::new(w, 2.0, 1.0).arrow(&[0], &[1], 0.3).build().unwrap();
        let r = h.reverse(1.0).unwrap();
        assert_eq!(r.events().len(), 1);
        let e = r.events()[0];
        assert_eq!(r.window().point(e.from as usize), vec![1]);
        assert_eq!(r.window().point(e.to as usize), vec![0]);
        assert!((e.time - 0.7).abs() < 1e-15);

        let w = line(4, 5.0);
        let h = sample_harris(&w, 3.0, 2.0, 5).unwrap();
        let rr = h.reverse(3.0).unwrap().reverse(3.0).unwrap();
        let base = h.restrict(0.0, 3.0, false).unwrap();
        assert_eq!(rr.counts(), base.counts());
        for (x, y) in rr.events().iter().zip(base.events()) {
            assert_eq!((x.kind, x.from, x.to), (y.kind, y.from, y.to));
            assert!((x.time - y.time).abs() < 1e-12);
        }
        assert_eq!(h.reverse(5.0).unwrap().counts(), h.counts());
        assert!(h.reverse(6.0).is_err());
    }

    #[test]
    fn reflect_examples() {
        let w = LatticeWindow::new(2, 3, 1, 1.0).unwrap();
        let h = HarrisBuilder::new(w, 2.0, 1.0).death(&[2, 0], 0.5).arrow(&[1, 0], &[1, 1], 0.25).build().unwrap();
        let r = h.reflect_psi(2, -1).unwrap();
        assert_eq!(r.events_in(&EventKey::Death(vec![0, -2]), 0.0, 1.0).unwrap(), vec![0.5]);
        assert_eq!(r.events_in(&EventKey::Arrow(vec![0, -1], vec![-1, -1]), 0.0, 1.0).unwrap(), vec![0.25]);
        assert_eq!(h.reflect_psi(1, 1).unwrap(), h);
        assert_eq!(r.reflect_psi(2, -1).unwrap(), h);
        assert!(h.reflect_psi(3, 1).is_err());
    }

    #[test]
    fn events_in_examples() {
        let w = line(2, 3.0);
        let h = HarrisBuilder::new(w, 2.0, 1.0)
            .death(&[0], 0.5)
            .death(&[0], 1.5)
            .death(&[0], 2.5)
            .build()
            .unwrap();
        let k = EventKey::Death(vec![0]);
        assert_eq!(h.events_in(&k, 1.0, 2.0).unwrap(), vec![1.5]);
        assert_eq!(h.events_in(&k, 0.0, 3.0).unwrap().len(), 3);
        assert!(h.events_in(&k, 2.0, 1.0).unwrap().is_empty());
        assert!(h.events_in(&EventKey::Death(vec![9]), 0.0, 1.0).is_err());
        assert!(h.events_in(&EventKey::Arrow(vec![0], vec![2]), 0.0, 1.0).is_err());
    }

    #[test]
    fn builder_rejects_duplicates() {
        let w = line(2, 3.0);
        let r = HarrisBuilder::new(w, 2.0, 1.0).death(&[0], 0.5).arrow(&[1], &[0], 0.5).build();
        assert_eq!(r.unwrap_err(), HarrisError::DuplicateTime(0.5));
    }

    #[test]
    fn json_round_trip_exact() {
        let w = LatticeWindow::new(2, 3, 2, 4.0).unwrap();
        let h = sample_harris(&w, 3.0, 2.0, 99).unwrap();
        let back = AugmentedHarrisSystem::from_json(&h.to_json()).unwrap();
        assert_eq!(back, h);
        assert_eq!(back.to_json(), h.to_json());
        let s = h.shift(&[1, -1], 1.0).unwrap();
        assert_eq!(AugmentedHarrisSystem::from_json(&s.to_json()).unwrap(), s);
    }
}
