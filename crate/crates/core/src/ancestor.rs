//! Ancestor processes, bifurcation times, the two renewal ingredients, the
//! steering point (X, T) with its witness path, and the steered sequence.
//!
//! The ancestor η^{(x,s)}_t is the end point of the unique reverse-free basic
//! path from (x, s) to the level t. It is computed in one sweep by keeping the
//! live lineages in preference order: a path that stays put beats a path that
//! jumps, and a later jump beats an earlier one. An arrow z → w inserts the new
//! lineage of w just below z; a death removes a lineage. The reverse-free path
//! to the level t is the top lineage after all marks up to t, so η changes
//! only at death times and is right-continuous.
//!
//! Every "⇝ ∞" is replaced by survival to the horizon of the sampled system.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graphical::{add, psi, unit, AugmentedHarrisSystem, EventKind, HarrisError, Point};
use crate::paths::{
    classify, concatenate, death_time_from, enumerate_from_point, DeathTime, InfectionPath, Jump, Mode, PathClass,
    PathError,
};

#[derive(Debug, Error)]
pub enum AncestorError {
    #[error(transparent)]
    Path(#[from] PathError),
    #[error(transparent)]
    Harris(#[from] HarrisError),
    #[error("L must be an integer > 1, got {0}")]
    L(i64),
    #[error("depth must be at least 1")]
    Depth,
    #[error("start point {0:?} is outside the window")]
    Start(Point),
    #[error("internal inconsistency: {0}")]
    Internal(String),
}

const NONE: u32 = u32::MAX;

#[derive(Clone, Copy, Debug)]
struct Rec {
    site: u32,
    time: f64,
    parent: u32,
}

/// Live lineages from one space-time point, in preference order.
pub(crate) struct Lineages<'a> {
    h: &'a AugmentedHarrisSystem,
    start: f64,
    origin: usize,
    order: Vec<u32>,
    cur: Vec<u32>,
    recs: Vec<Rec>,
    next: usize,
    changes: Vec<(f64, Option<usize>)>,
}

impl<'a> Lineages<'a> {
    pub(crate) fn new(h: &'a AugmentedHarrisSystem, x: usize, s: f64) -> Self {
        let mut l = Lineages {
            h,
            start: s,
            origin: x,
            order: Vec::new(),
            cur: vec![NONE; h.n_sites()],
            recs: Vec::new(),
            next: h.event_index_after(s, true),
            changes: Vec::new(),
        };
        if h.has_death_at(x, s) {
            l.changes.push((s, None));
        } else {
            l.recs.push(Rec { site: x as u32, time: s, parent: NONE });
            l.cur[x] = 0;
            l.order.push(x as u32);
            l.changes.push((s, Some(x)));
        }
        l
    }

    fn top(&self) -> Option<usize> {
        self.order.first().map(|&z| z as usize)
    }

    fn pos(&self, z: u32) -> usize {
        self.order.iter().position(|&v| v == z).expect("live lineage is listed")
    }

    /// Applies every mark with time ≤ t.
    pub(crate) fn advance_through(&mut self, t: f64) {
        let events = self.h.events();
        while self.next < events.len() && events[self.next].time <= t {
            let e = events[self.next];
            self.next += 1;
            if self.order.is_empty() {
                self.next = events.len();
                break;
            }
            match e.kind {
                EventKind::Death => {
                    if self.cur[e.from as usize] != NONE {
                        let p = self.pos(e.from);
                        self.order.remove(p);
                        self.cur[e.from as usize] = NONE;
                        if p == 0 {
                            self.changes.push((e.time, self.top()));
                        }
                    }
                }
                EventKind::Arrow => {
                    let (z, w) = (e.from, e.to);
                    let rz = self.cur[z as usize];
                    if rz == NONE {
                        continue;
                    }
                    let pz = self.pos(z);
                    if self.cur[w as usize] != NONE {
                        let pw = self.pos(w);
                        if pw < pz {
                            continue;
                        }
                        self.order.remove(pw);
                    }
                    self.order.insert(pz + 1, w);
                    self.recs.push(Rec { site: w, time: e.time, parent: rz });
                    self.cur[w as usize] = (self.recs.len() - 1) as u32;
                }
                EventKind::Selective => {}
            }
        }
    }

    /// Path of the top lineage on [start, end].
    pub(crate) fn top_path(&self, end: f64) -> Option<InfectionPath> {
        let top = self.top()?;
        let mut jumps = Vec::new();
        let mut r = self.cur[top];
        while self.recs[r as usize].parent != NONE {
            let rec = self.recs[r as usize];
            let par = self.recs[rec.parent as usize];
            jumps.push(Jump { time: rec.time, from: par.site as usize, to: rec.site as usize });
            r = rec.parent;
        }
        jumps.reverse();
        Some(InfectionPath { start: self.start, end, origin: self.origin, jumps })
    }
}

fn check_span(h: &AugmentedHarrisSystem, s: f64, t: f64) -> Result<(), PathError> {
    if s.is_nan() || t.is_nan() || s > t {
        return Err(PathError::TimeOrder(s, t));
    }
    if s < 0.0 || t > h.horizon() {
        return Err(PathError::Horizon(if s < 0.0 { s } else { t }, h.horizon()));
    }
    Ok(())
}

/// The whole trajectory of an ancestor process as right-continuous pieces.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AncestorTrack {
    pub origin: usize,
    pub start: f64,
    pub end: f64,
    /// (time, value from that time on); `None` encodes △.
    pub breakpoints: Vec<(f64, Option<usize>)>,
}

impl AncestorTrack {
    /// η_t for t in [start, end]; `None` is △.
    pub fn value_at(&self, t: f64) -> Option<usize> {
        let k = self.breakpoints.partition_point(|&(b, _)| b <= t);
        if k == 0 {
            return None;
        }
        self.breakpoints[k - 1].1
    }

    pub fn sample(&self, grid: &[f64]) -> Vec<Option<usize>> {
        grid.iter().map(|&t| self.value_at(t)).collect()
    }

    /// First time the value is △, if within the track.
    pub fn extinction_time(&self) -> Option<f64> {
        self.breakpoints.iter().find(|b| b.1.is_none()).map(|b| b.0)
    }
}

pub fn ancestor_track(h: &AugmentedHarrisSystem, x: usize, s: f64, until: f64) -> Result<AncestorTrack, PathError> {
    check_span(h, s, until)?;
    let mut l = Lineages::new(h, x, s);
    l.advance_through(until);
    Ok(AncestorTrack { origin: x, start: s, end: until, breakpoints: l.changes })
}

/// η^{(x,s)}_t; `None` is △.
pub fn ancestor_at(h: &AugmentedHarrisSystem, x: usize, s: f64, t: f64) -> Result<Option<usize>, PathError> {
    check_span(h, s, t)?;
    let mut l = Lineages::new(h, x, s);
    l.advance_through(t);
    Ok(l.top())
}

/// The unique reverse-free basic path from (x, s) to the level t, read off
/// the lineage sweep.
pub fn ancestor_path(h: &AugmentedHarrisSystem, x: usize, s: f64, t: f64) -> Result<Option<InfectionPath>, PathError> {
    check_span(h, s, t)?;
    let mut l = Lineages::new(h, x, s);
    l.advance_through(t);
    Ok(l.top_path(t))
}

fn check_l(l: i64) -> Result<(), AncestorError> {
    if l > 1 {
        Ok(())
    } else {
        Err(AncestorError::L(l))
    }
}

/// Sites a bifurcation around `y` refers to: y, y ± e1, y ± L e1.
#[derive(Clone, Copy, Debug)]
struct Pivot {
    y: usize,
    minus: Option<usize>,
    plus: Option<usize>,
    minus_l: Option<usize>,
    plus_l: Option<usize>,
}

impl Pivot {
    fn new(h: &AugmentedHarrisSystem, y: usize, l: i64) -> Self {
        let w = h.window();
        let p = w.point(y);
        let d = w.dim();
        let at = |k: i64| w.index(&add(&p, &unit(d, 1, k)));
        Pivot { y, minus: at(-1), plus: at(1), minus_l: at(-l), plus_l: at(l) }
    }
}

fn arrows_from(h: &AugmentedHarrisSystem, z: usize, a: f64, b: f64) -> Vec<(f64, usize)> {
    let w = h.window();
    let mut v = Vec::new();
    for e in w.out_edges(z) {
        let to = w.edge(e).1;
        for &t in h.arrows_on(e) {
            if t >= a && t <= b {
                v.push((t, to));
            }
        }
    }
    v.sort_by(|p, q| p.0.total_cmp(&q.0));
    v
}

/// The cheap conditions 1–5, literally, with closed time windows.
fn structural(h: &AugmentedHarrisSystem, p: &Pivot, t: f64) -> [bool; 5] {
    let (Some(m), Some(pl)) = (p.minus, p.plus) else {
        return [false; 5];
    };
    let c1 = [m, p.y, pl].iter().all(|&z| h.deaths_in(z, t - 3.0, t - 1.0).is_empty());
    let c2 = !h.deaths_in(p.y, t - 1.0, t).is_empty();
    let early = arrows_from(h, p.y, t - 3.0, t - 2.0);
    let c3 = early.len() == 2 && early.iter().any(|a| a.1 == pl) && early.iter().any(|a| a.1 == m);
    let c4 = arrows_from(h, p.y, t - 2.0, t).is_empty();
    let c5 = arrows_from(h, m, t - 3.0, t - 1.0).is_empty() && arrows_from(h, pl, t - 3.0, t - 1.0).is_empty();
    [c1, c2, c3, c4, c5]
}

/// Exactly one basic path from (from, t − 1) to the level t, ending at `end`.
fn single_path(h: &AugmentedHarrisSystem, from: Option<usize>, end: Option<usize>, t: f64) -> Result<bool, PathError> {
    let (Some(from), Some(end)) = (from, end) else {
        return Ok(false);
    };
    let (paths, cut) = enumerate_from_point(h, from, t - 1.0, t, Mode::Basic, 2)?;
    Ok(!cut && paths.len() == 1 && paths[0].final_site() == end)
}

fn all_conditions(h: &AugmentedHarrisSystem, p: &Pivot, t: f64) -> Result<[bool; 7], PathError> {
    let s = structural(h, p, t);
    let c6 = single_path(h, p.minus, p.minus_l, t)?;
    let c7 = single_path(h, p.plus, p.plus_l, t)?;
    Ok([s[0], s[1], s[2], s[3], s[4], c6, c7])
}

/// The seven bifurcation conditions at `t` for the ancestor of the origin
/// given by `track`; `None` when t < 3, t is past the track, or η_t = △.
pub fn bifurcation_conditions(
    h: &AugmentedHarrisSystem,
    track: &AncestorTrack,
    l: i64,
    t: f64,
) -> Result<Option<[bool; 7]>, AncestorError> {
    check_l(l)?;
    if t < 3.0 || t > track.end || track.value_at(t).is_none() {
        return Ok(None);
    }
    let Some(y) = track.value_at(t - 3.0) else {
        return Ok(None);
    };
    Ok(Some(all_conditions(h, &Pivot::new(h, y, l), t)?))
}

/// A maximal run of bifurcation times with a common pivot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bifurcation {
    /// Infimum of the run (the bifurcation time reported).
    pub time: f64,
    /// Supremum of the run.
    pub valid_until: f64,
    pub pivot: Point,
    pub pivot_site: usize,
    /// Times of the exit arrows to y − e1 and y + e1.
    pub t_minus: f64,
    pub t_plus: f64,
}

fn origin_site(h: &AugmentedHarrisSystem) -> Result<usize, AncestorError> {
    let zero = vec![0; h.window().dim()];
    h.window().index(&zero).ok_or(AncestorError::Start(zero))
}

fn sorted_unique(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

/// Valid atoms (left, right, probe) inside [lo, hi]: breakpoints are probed
/// as points, the open pieces between them at their midpoints.
fn scan_atoms(
    lo: f64,
    hi: f64,
    cuts: Vec<f64>,
    mut ok: impl FnMut(f64) -> Result<bool, PathError>,
) -> Result<Vec<(f64, f64, f64)>, PathError> {
    let mut pts = vec![lo, hi];
    pts.extend(cuts.into_iter().filter(|&c| c > lo && c < hi));
    let pts = sorted_unique(pts);
    let mut atoms = Vec::new();
    for (k, &p) in pts.iter().enumerate() {
        if ok(p)? {
            atoms.push((p, p, p));
        }
        if let Some(&q) = pts.get(k + 1) {
            let mid = 0.5 * (p + q);
            if mid > p && mid < q && ok(mid)? {
                atoms.push((p, q, mid));
            }
        }
    }
    Ok(atoms)
}

/// All bifurcation runs of the ancestor of the origin, in time order.
pub fn find_bifurcations(h: &AugmentedHarrisSystem, l: i64) -> Result<Vec<Bifurcation>, AncestorError> {
    check_l(l)?;
    let o = origin_site(h)?;
    let track = ancestor_track(h, o, 0.0, h.horizon())?;
    bifurcations_of(h, &track, l)
}

fn bifurcations_of(h: &AugmentedHarrisSystem, track: &AncestorTrack, l: i64) -> Result<Vec<Bifurcation>, AncestorError> {
    let horizon = track.end;
    // η_t ≠ △ is needed at t itself
    let alive_end = track.extinction_time().unwrap_or(f64::INFINITY);
    let mut out = Vec::new();
    let bps = &track.breakpoints;
    for (k, &(b, y)) in bps.iter().enumerate() {
        let Some(y) = y else { break };
        let seg_lo = (b + 3.0).max(3.0);
        let seg_end = bps.get(k + 1).map_or(f64::INFINITY, |n| n.0 + 3.0);
        // t − 3 stays in this piece for t < seg_end; t must keep η_t alive
        let seg_hi = seg_end.min(horizon).min(alive_end);
        if seg_lo > seg_hi {
            continue;
        }
        let pv = Pivot::new(h, y, l);
        let (Some(m), Some(pl)) = (pv.minus, pv.plus) else { continue };
        let mut marks = Vec::new();
        for z in [m, y, pl] {
            marks.extend_from_slice(h.deaths_in(z, seg_lo - 3.0, seg_hi));
            marks.extend(arrows_from(h, z, seg_lo - 3.0, seg_hi).into_iter().map(|a| a.0));
        }
        let cuts: Vec<f64> = marks.iter().flat_map(|&e| (0..4).map(move |j| e + j as f64)).collect();
        let open_end = seg_hi == seg_end || seg_hi == alive_end;
        let coarse = scan_atoms(seg_lo, seg_hi, cuts, |t| {
            Ok(!(open_end && t == seg_hi) && structural(h, &pv, t).iter().all(|&c| c))
        })?;
        let mut fine = Vec::new();
        for (a, c, _) in coarse {
            let first = h.event_index_after(a - 1.0, false);
            let last = h.event_index_after(c, true);
            let cuts: Vec<f64> = h.events()[first..last].iter().flat_map(|e| [e.time, e.time + 1.0]).collect();
            fine.extend(scan_atoms(a, c, cuts, |t| {
                Ok(!(open_end && t == seg_hi) && all_conditions(h, &pv, t)?.iter().all(|&c| c))
            })?);
        }
        fine.sort_by(|p, q| p.0.total_cmp(&q.0).then(p.1.total_cmp(&q.1)));
        fine.dedup_by(|q, p| q.0 == p.0 && q.1 == p.1);
        let mut runs: Vec<(f64, f64, f64)> = Vec::new();
        for at in fine {
            match runs.last_mut() {
                Some(r) if r.1 == at.0 => r.1 = at.1,
                _ => runs.push(at),
            }
        }
        for (a, c, probe) in runs {
            let early = arrows_from(h, y, probe - 3.0, probe - 2.0);
            let when = |to| early.iter().find(|x| x.1 == to).map(|x| x.0).expect("condition 3 holds at the probe");
            out.push(Bifurcation {
                time: a,
                valid_until: c,
                pivot: h.window().point(y),
                pivot_site: y,
                t_minus: when(m),
                t_plus: when(pl),
            });
        }
    }
    Ok(out)
}

/// Smallest bifurcation time ≥ q, with its run.
fn first_at_or_after(bifs: &[Bifurcation], q: f64) -> Option<(f64, &Bifurcation)> {
    bifs.iter().find(|b| b.valid_until >= q).map(|b| (b.time.max(q), b))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CensorReason {
    /// (0,0) does not survive to the horizon.
    OriginDies,
    /// No (further) bifurcation time within the horizon.
    NoBifurcation,
    /// The ancestor is △ at some V_k.
    AncestorExtinct,
    /// A site the construction needs lies outside the window.
    Boundary,
    /// Ingredient 2 ended in (△, ∞).
    PairExtinct,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rung {
    pub u: f64,
    pub pivot: Point,
    /// Death time of {Y − Le1, Y + Le1} × {U}.
    pub v: DeathTime,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ingredient1 {
    pub l: i64,
    pub rungs: Vec<Rung>,
    /// (U*, Y*) and the bifurcation run it falls in.
    pub found: Option<(f64, Point, Bifurcation)>,
    pub censored: Option<CensorReason>,
}

/// The (U_k, V_k) ladder up to the first rung whose exits survive to the
/// horizon.
pub fn build_ingredient1(h: &AugmentedHarrisSystem, l: i64) -> Result<Ingredient1, AncestorError> {
    check_l(l)?;
    let o = origin_site(h)?;
    let track = ancestor_track(h, o, 0.0, h.horizon())?;
    let bifs = bifurcations_of(h, &track, l)?;
    let mut res = Ingredient1 { l, rungs: Vec::new(), found: None, censored: None };
    let mut q = 3.0;
    loop {
        let Some((u, b)) = first_at_or_after(&bifs, q) else {
            res.censored = Some(CensorReason::NoBifurcation);
            return Ok(res);
        };
        let pv = Pivot::new(h, b.pivot_site, l);
        let (Some(ml), Some(pl)) = (pv.minus_l, pv.plus_l) else {
            res.censored = Some(CensorReason::Boundary);
            return Ok(res);
        };
        let v = death_time_from(h, &[ml, pl], u)?;
        res.rungs.push(Rung { u, pivot: b.pivot.clone(), v });
        match v {
            DeathTime::Censored => {
                let mut b = b.clone();
                b.time = u;
                res.found = Some((u, b.pivot.clone(), b));
                return Ok(res);
            }
            DeathTime::Finite(v) => {
                if track.value_at(v).is_none() {
                    res.censored = Some(CensorReason::AncestorExtinct);
                    return Ok(res);
                }
                q = v + 3.0;
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Orientation {
    /// Start from +Le1, fall back on the ancestry of −Le1.
    Plus,
    /// The roles of ±Le1 swapped.
    Minus,
}

impl Orientation {
    fn sign(self) -> i64 {
        match self {
            Orientation::Plus => 1,
            Orientation::Minus => -1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ingredient2 {
    pub orientation: Orientation,
    /// (W_k, Z_k) for k ≥ 1; `None` is △.
    pub ladder: Vec<(f64, Option<Point>)>,
    /// (Z*, W*); `None` is (△, ∞).
    pub found: Option<(Point, f64)>,
    pub censored: Option<CensorReason>,
}

/// (Z*, W*): survival of one ancestry out of the pair ±Le1 at time 0.
pub fn build_ingredient2(h: &AugmentedHarrisSystem, l: i64, orientation: Orientation) -> Result<Ingredient2, AncestorError> {
    check_l(l)?;
    let w = h.window();
    let first = unit(w.dim(), 1, orientation.sign() * l);
    let second = unit(w.dim(), 1, -orientation.sign() * l);
    let mut res = Ingredient2 { orientation, ladder: Vec::new(), found: None, censored: None };
    let (Some(a), Some(b)) = (w.index(&first), w.index(&second)) else {
        res.censored = Some(CensorReason::Boundary);
        return Ok(res);
    };
    let mut wk = match death_time_from(h, &[a], 0.0)? {
        DeathTime::Censored => {
            res.found = Some((first, 0.0));
            return Ok(res);
        }
        DeathTime::Finite(t) => t,
    };
    let track = ancestor_track(h, b, 0.0, h.horizon())?;
    loop {
        let Some(z) = track.value_at(wk) else {
            res.ladder.push((wk, None));
            res.censored = Some(CensorReason::PairExtinct);
            return Ok(res);
        };
        let zp = w.point(z);
        res.ladder.push((wk, Some(zp.clone())));
        match death_time_from(h, &[z], wk)? {
            DeathTime::Censored => {
                res.found = Some((zp, wk));
                return Ok(res);
            }
            DeathTime::Finite(t) => wk = t,
        }
    }
}

/// The steering point (X, T) with its witness.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenewalPoint {
    pub x: Point,
    pub t: f64,
    /// 1–6, as in the case analysis of the witness construction.
    pub case: u8,
    pub witness: InfectionPath,
    pub class: PathClass,
    pub u_star: f64,
    pub y_star: Point,
    pub orientation: Orientation,
    /// (Z*, W*) or (Z′*, W′*) of the shifted system.
    pub z_star: Point,
    pub w_star: f64,
    pub e_flag: bool,
    pub t_minus: f64,
    pub t_plus: f64,
    pub t_plus_prime: Option<f64>,
    pub ingredient1: Ingredient1,
    pub ingredient2: Ingredient2,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum RenewalOutcome {
    Found(Box<RenewalPoint>),
    Censored { reason: CensorReason, ingredient1: Option<Ingredient1> },
}

impl RenewalOutcome {
    pub fn point(&self) -> Option<&RenewalPoint> {
        match self {
            RenewalOutcome::Found(p) => Some(p),
            RenewalOutcome::Censored { .. } => None,
        }
    }
}

fn rfbip_to(h: &AugmentedHarrisSystem, x: usize, s: f64, t: f64, end: usize) -> Result<InfectionPath, AncestorError> {
    let g = ancestor_path(h, x, s, t)?
        .ok_or_else(|| AncestorError::Internal(format!("no reverse-free path from site {x} at {s} to level {t}")))?;
    if g.final_site() != end {
        return Err(AncestorError::Internal(format!("reverse-free path ends at {} instead of {end}", g.final_site())));
    }
    Ok(g)
}

/// (X, T) and the witness path from (0, 0) to it.
pub fn build_renewal_point(h: &AugmentedHarrisSystem, l: i64) -> Result<RenewalOutcome, AncestorError> {
    check_l(l)?;
    let o = origin_site(h)?;
    if !death_time_from(h, &[o], 0.0)?.is_censored() {
        return Ok(RenewalOutcome::Censored { reason: CensorReason::OriginDies, ingredient1: None });
    }
    let ing1 = build_ingredient1(h, l)?;
    let Some((u, y, bif)) = ing1.found.clone() else {
        let reason = ing1.censored.unwrap_or(CensorReason::NoBifurcation);
        return Ok(RenewalOutcome::Censored { reason, ingredient1: Some(ing1) });
    };
    let w = h.window();
    let d = w.dim();
    let ys = bif.pivot_site;
    let site = |k: i64| w.index(&add(&y, &unit(d, 1, k)));
    let (Some(ym), Some(yp), Some(yml), Some(ypl)) = (site(-1), site(1), site(-l), site(l)) else {
        return Ok(RenewalOutcome::Censored { reason: CensorReason::Boundary, ingredient1: Some(ing1) });
    };
    let t_plus_prime = h.selective_in(ys, yp, u - 2.0, u - 1.0).first().copied();
    let e_flag = t_plus_prime.is_some();
    let (tm, tp) = (bif.t_minus, bif.t_plus);
    let orientation = if e_flag || tp > tm { Orientation::Plus } else { Orientation::Minus };
    let shifted = h.shift(&y, u)?;
    let ing2 = build_ingredient2(&shifted, l, orientation)?;
    let Some((z, wstar)) = ing2.found.clone() else {
        let reason = ing2.censored.unwrap_or(CensorReason::PairExtinct);
        return Ok(RenewalOutcome::Censored { reason, ingredient1: Some(ing1) });
    };
    let x = add(&y, &z);
    let t = u + wstar;
    let xs = w.index(&x).ok_or_else(|| AncestorError::Start(x.clone()))?;

    // the exit used by the witness: (exit time, first site, site at U, kind)
    let plus_exit = |time: f64| (time, yp, ypl);
    let minus_exit = (tm, ym, yml);
    let (case, exit) = match (e_flag, orientation, wstar == 0.0) {
        (false, Orientation::Minus, true) => (1, minus_exit),
        (false, Orientation::Minus, false) => (2, plus_exit(tp)),
        (false, Orientation::Plus, true) => (3, plus_exit(tp)),
        (false, Orientation::Plus, false) => (4, minus_exit),
        (true, _, true) => (5, plus_exit(t_plus_prime.unwrap_or(tp))),
        (true, _, false) => (6, minus_exit),
    };
    let (te, first, at_u) = exit;
    let head = rfbip_to(h, o, 0.0, u - 3.0, ys)?;
    let tail = rfbip_to(h, first, te, u, at_u)?;
    let mut jumps = vec![Jump { time: te, from: ys, to: first }];
    jumps.extend_from_slice(&tail.jumps);
    let bridge = InfectionPath { start: u - 3.0, end: u, origin: ys, jumps };
    let mut witness = concatenate(&head, &bridge)?;
    if t > u {
        witness = concatenate(&witness, &rfbip_to(h, at_u, u, t, xs)?)?;
    }
    let class = classify(h, &witness)?;
    if !class.is_rfsip {
        return Err(AncestorError::Internal(format!("case-{case} witness is not reverse-free")));
    }
    Ok(RenewalOutcome::Found(Box::new(RenewalPoint {
        x,
        t,
        case,
        witness,
        class,
        u_star: u,
        y_star: y,
        orientation,
        z_star: z,
        w_star: wstar,
        e_flag,
        t_minus: tm,
        t_plus: tp,
        t_plus_prime,
        ingredient1: ing1,
        ingredient2: ing2,
    })))
}

/// (X^{i,κ}, T^{i,κ}): the steering point of the ψ^{(i,κ)}-relocated system,
/// mapped back by ψ^{(i,κ)} (an involution), witness included.
pub fn build_renewal_point_psi(
    h: &AugmentedHarrisSystem,
    l: i64,
    axis: usize,
    kappa: i64,
) -> Result<RenewalOutcome, AncestorError> {
    let r = h.reflect_psi(axis, kappa)?;
    let perm = h.psi_site_map(axis, kappa);
    Ok(match build_renewal_point(&r, l)? {
        RenewalOutcome::Found(mut p) => {
            p.x = psi(&p.x, axis, kappa);
            p.witness = p.witness.mapped(&perm, 0.0);
            p.class = classify(h, &p.witness)?;
            RenewalOutcome::Found(p)
        }
        c => c,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SteerStep {
    pub s: Point,
    pub tau: f64,
    /// κ⃗ used to leave this point (None for the last point).
    pub kappa: Option<Vec<i64>>,
    /// Case tags of the d renewal points composing the step out of here.
    pub cases: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SteeredSequence {
    pub l: i64,
    pub steps: Vec<SteerStep>,
    /// Reverse-free selective path from (start, 0) through all (S_n, τ_n).
    pub witness: InfectionPath,
    pub truncated: Option<CensorReason>,
}

/// κ_i = +1 iff p·e_i ≤ 0.
pub fn steering_vector(p: &[i64]) -> Vec<i64> {
    p.iter().map(|&c| if c <= 0 { 1 } else { -1 }).collect()
}

/// (S_n, τ_n) for n ≤ depth from (start, 0).
pub fn steered_sequence(
    h: &AugmentedHarrisSystem,
    start: &[i64],
    depth: usize,
    l: i64,
) -> Result<SteeredSequence, AncestorError> {
    check_l(l)?;
    if depth == 0 {
        return Err(AncestorError::Depth);
    }
    let w = h.window();
    let d = w.dim();
    let x0 = w.index(start).ok_or_else(|| AncestorError::Start(start.to_vec()))?;
    let mut seq = SteeredSequence {
        l,
        steps: vec![SteerStep { s: start.to_vec(), tau: 0.0, kappa: None, cases: Vec::new() }],
        witness: InfectionPath::constant(x0, 0.0, 0.0),
        truncated: None,
    };
    let mut cur = (start.to_vec(), 0.0);
    'outer: for _ in 0..depth {
        let kappa = steering_vector(&cur.0);
        let mut cases = Vec::new();
        let mut p = cur.clone();
        for i in 1..=d {
            let local = h.shift(&p.0, p.1)?;
            let r = match build_renewal_point_psi(&local, l, i, kappa[i - 1])? {
                RenewalOutcome::Found(r) => r,
                RenewalOutcome::Censored { reason, .. } => {
                    seq.truncated = Some(reason);
                    break 'outer;
                }
            };
            // shifting keeps site indices, only times move
            let seg = r.witness.mapped(&(0..w.n_sites()).collect::<Vec<_>>(), p.1);
            seq.witness = concatenate(&seq.witness, &seg)?;
            cases.push(r.case);
            p = (add(&p.0, &r.x), p.1 + r.t);
        }
        let last = seq.steps.last_mut().expect("nonempty");
        last.kappa = Some(kappa);
        last.cases = cases;
        seq.steps.push(SteerStep { s: p.0.clone(), tau: p.1, kappa: None, cases: Vec::new() });
        cur = p;
    }
    Ok(seq)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphical::{sample_harris, HarrisBuilder, LatticeWindow};
    use crate::paths::{find_rfbip, find_rfbip_via_reversal};

    fn idx(h: &AugmentedHarrisSystem, x: i64) -> usize {
        h.window().index(&[x]).unwrap()
    }

    /// All seven conditions hold on [3, 3.2) with pivot 0, L = 2.
    pub(crate) fn bifurcation_at_three(plus_later: bool) -> HarrisBuilder {
        let (tm, tp) = if plus_later { (0.3, 0.6) } else { (0.6, 0.3) };
        let w = LatticeWindow::line(6, 1, 10.0).unwrap();
        HarrisBuilder::new(w, 2.0, 1.0)
            .arrow(&[0], &[-1], tm)
            .arrow(&[0], &[1], tp)
            .arrow(&[-1], &[-2], 2.2)
            .arrow(&[1], &[2], 2.3)
            .death(&[-1], 2.4)
            .death(&[1], 2.45)
            .death(&[0], 2.5)
    }

    #[test]
    fn lineage_sweep_matches_repair_loops() {
        let w = LatticeWindow::line(3, 1, 3.0).unwrap();
        for seed in 0..150 {
            let h = sample_harris(&w, 2.5, 1.2, seed).unwrap();
            for x in [0, 3] {
                for (s, t) in [(0.0, 3.0), (0.5, 2.0), (1.0, 1.0)] {
                    let a = ancestor_path(&h, x, s, t).unwrap();
                    let b = find_rfbip(&h, x, s, t).unwrap().map(|p| p.0);
                    assert_eq!(a, b, "seed {seed} site {x} [{s},{t}]");
                    let c = find_rfbip_via_reversal(&h, x, s, t).unwrap();
                    assert_eq!(a.as_ref().map(|p| (p.final_site(), p.jumps.len())), c.map(|p| (p.final_site(), p.jumps.len())));
                }
            }
        }
    }

    #[test]
    fn track_agrees_pointwise_and_composes() {
        let w = LatticeWindow::line(4, 2, 4.0).unwrap();
        for seed in 0..40 {
            let h = sample_harris(&w, 3.0, 1.5, seed).unwrap();
            let o = idx(&h, 0);
            let tr = ancestor_track(&h, o, 0.0, 4.0).unwrap();
            for k in 0..=16 {
                let t = k as f64 * 0.25;
                assert_eq!(tr.value_at(t), ancestor_at(&h, o, 0.0, t).unwrap());
                if let Some(y) = tr.value_at(t) {
                    for u in [t, t + 0.3, 4.0].into_iter().filter(|&u| u <= 4.0) {
                        if let Some(z) = ancestor_at(&h, y, t, u).unwrap() {
                            assert_eq!(tr.value_at(u), Some(z));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn ancestor_jumps_without_an_arrow() {
        // the top lineage dies; the next one was created earlier
        let w = LatticeWindow::line(3, 1, 2.0).unwrap();
        let h = HarrisBuilder::new(w, 2.0, 1.0).arrow(&[0], &[1], 0.5).death(&[0], 1.0).build().unwrap();
        let tr = ancestor_track(&h, idx(&h, 0), 0.0, 2.0).unwrap();
        assert_eq!(tr.value_at(0.9), Some(idx(&h, 0)));
        assert_eq!(tr.value_at(1.0), Some(idx(&h, 1)));
        assert_eq!(tr.breakpoints.len(), 2);
        assert!(h.events().iter().all(|e| e.time != 1.0 || e.kind == EventKind::Death));
        let free = HarrisBuilder::new(LatticeWindow::line(3, 1, 2.0).unwrap(), 2.0, 1.0).build().unwrap();
        assert_eq!(ancestor_at(&free, idx(&free, 1), 0.0, 2.0).unwrap(), Some(idx(&free, 1)));
    }

    #[test]
    fn hand_built_bifurcation() {
        let h = bifurcation_at_three(true).build().unwrap();
        let b = find_bifurcations(&h, 2).unwrap();
        assert_eq!(b.len(), 1);
        assert_eq!(b[0].time, 3.0);
        assert_eq!(b[0].pivot, vec![0]);
        assert_eq!((b[0].t_minus, b[0].t_plus), (0.3, 0.6));
        assert!((b[0].valid_until - 3.2).abs() < 1e-12);
    }

    #[test]
    fn each_condition_is_necessary() {
        let ablations: [(usize, fn(HarrisBuilder) -> HarrisBuilder); 7] = [
            (0, |b| b.death(&[1], 1.0)),
            (1, |_| {
                let w = LatticeWindow::line(6, 1, 10.0).unwrap();
                HarrisBuilder::new(w, 2.0, 1.0)
                    .arrow(&[0], &[-1], 0.3)
                    .arrow(&[0], &[1], 0.6)
                    .arrow(&[-1], &[-2], 2.2)
                    .arrow(&[1], &[2], 2.3)
                    .death(&[-1], 2.4)
                    .death(&[1], 2.45)
            }),
            (2, |b| b.arrow(&[0], &[-1], 0.9)),
            (3, |b| b.arrow(&[0], &[1], 1.5)),
            (4, |b| b.arrow(&[-1], &[-2], 1.0)),
            (5, |_| {
                let w = LatticeWindow::line(6, 1, 10.0).unwrap();
                HarrisBuilder::new(w, 2.0, 1.0)
                    .arrow(&[0], &[-1], 0.3)
                    .arrow(&[0], &[1], 0.6)
                    .arrow(&[-1], &[-2], 2.2)
                    .arrow(&[1], &[2], 2.3)
                    .death(&[1], 2.45)
                    .death(&[0], 2.5)
            }),
            (6, |_| {
                let w = LatticeWindow::line(6, 1, 10.0).unwrap();
                HarrisBuilder::new(w, 2.0, 1.0)
                    .arrow(&[0], &[-1], 0.3)
                    .arrow(&[0], &[1], 0.6)
                    .arrow(&[-1], &[-2], 2.2)
                    .arrow(&[1], &[2], 2.3)
                    .death(&[-1], 2.4)
                    .death(&[0], 2.5)
            }),
        ];
        for (k, f) in ablations {
            let h = f(bifurcation_at_three(true)).build().unwrap();
            let tr = ancestor_track(&h, idx(&h, 0), 0.0, 10.0).unwrap();
            let c = bifurcation_conditions(&h, &tr, 2, 3.0).unwrap().unwrap();
            let expect: Vec<bool> = (0..7).map(|j| j != k).collect();
            assert_eq!(c.to_vec(), expect, "ablation {k}");
            assert!(find_bifurcations(&h, 2).unwrap().is_empty(), "ablation {k}");
        }
    }

    #[test]
    fn ingredient1_second_rung() {
        // an escaping lineage keeps the ancestor alive after both exits of
        // the first bifurcation (pivot 0) die; the second one (pivot 4) holds
        let w = LatticeWindow::line(8, 1, 20.0).unwrap();
        let h = HarrisBuilder::new(w, 2.0, 1.0)
            .arrow(&[0], &[1], 0.1)
            .arrow(&[1], &[2], 0.15)
            .arrow(&[2], &[3], 0.2)
            .arrow(&[3], &[4], 0.25)
            .death(&[1], 0.27)
            .death(&[2], 0.28)
            .death(&[3], 0.29)
            .arrow(&[0], &[-1], 1.3)
            .arrow(&[0], &[1], 1.6)
            .arrow(&[-1], &[-2], 3.2)
            .arrow(&[1], &[2], 3.3)
            .death(&[-1], 3.4)
            .death(&[1], 3.45)
            .death(&[0], 3.5)
            .death(&[-2], 4.8)
            .death(&[2], 5.0)
            .arrow(&[4], &[3], 7.3)
            .arrow(&[4], &[5], 7.6)
            .arrow(&[3], &[2], 9.2)
            .arrow(&[5], &[6], 9.3)
            .death(&[3], 9.4)
            .death(&[5], 9.45)
            .death(&[4], 9.5)
            .build()
            .unwrap();
        let i1 = build_ingredient1(&h, 2).unwrap();
        assert_eq!(i1.rungs.len(), 2);
        assert!((i1.rungs[0].u - 3.6).abs() < 1e-12);
        assert_eq!(i1.rungs[0].pivot, vec![0]);
        assert_eq!(i1.rungs[0].v, DeathTime::Finite(5.0));
        assert!((i1.rungs[1].u - 9.6).abs() < 1e-12);
        assert_eq!(i1.rungs[1].v, DeathTime::Censored);
        let (u, y, _) = i1.found.clone().unwrap();
        assert_eq!((u, y), (i1.rungs[1].u, vec![4]));
        assert_eq!(i1.censored, None);
        let p = build_renewal_point(&h, 2).unwrap().point().cloned().expect("found");
        assert_eq!((p.case, p.x), (3, vec![6]));
    }

    #[test]
    fn renewal_cases_one_and_three() {
        for (plus_later, case, x) in [(true, 3, 2), (false, 1, -2)] {
            let h = bifurcation_at_three(plus_later).build().unwrap();
            let r = build_renewal_point(&h, 2).unwrap();
            let p = r.point().expect("found");
            assert_eq!((p.case, p.x.clone(), p.t), (case, vec![x], 3.0));
            assert!(p.class.is_rfbip && p.class.is_rfsip);
            let exit = 0.6;
            let jumps: Vec<(f64, i64, i64)> = p
                .witness
                .jumps
                .iter()
                .map(|j| (j.time, h.window().point(j.from)[0], h.window().point(j.to)[0]))
                .collect();
            let (s, far, hop) = if plus_later { (1, 2, 2.3) } else { (-1, -2, 2.2) };
            assert_eq!(jumps, vec![(exit, 0, s), (hop, s, far)]);
        }
    }

    #[test]
    fn renewal_case_two() {
        // the − exit wins the race but (−2, 3) dies at 4 exactly
        let h = bifurcation_at_three(false).death(&[-2], 4.0).build().unwrap();
        let p = build_renewal_point(&h, 2).unwrap().point().cloned().expect("found");
        assert_eq!((p.case, p.x.clone(), p.t), (2, vec![2], 4.0));
        assert_eq!(p.orientation, Orientation::Minus);
        assert!(p.class.is_rfbip);
    }

    #[test]
    fn renewal_case_five_uses_selective_arrow() {
        let h = bifurcation_at_three(false).selective(&[0], &[1], 1.5).build().unwrap();
        let p = build_renewal_point(&h, 2).unwrap().point().cloned().expect("found");
        assert_eq!((p.case, p.x.clone(), p.t), (5, vec![2], 3.0));
        assert_eq!(p.t_plus_prime, Some(1.5));
        assert!(p.class.is_rfsip && !p.class.is_bip);
    }

    #[test]
    fn ingredient2_reflection_identity() {
        let w = LatticeWindow::line(12, 1, 6.0).unwrap();
        for seed in 0..30 {
            let h = sample_harris(&w, 2.6, 1.7, seed).unwrap();
            let minus = build_ingredient2(&h, 2, Orientation::Minus).unwrap();
            let r = h.reflect_psi(1, -1).unwrap();
            let plus = build_ingredient2(&r, 2, Orientation::Plus).unwrap();
            let back = plus.found.map(|(z, t)| (psi(&z, 1, -1), t));
            assert_eq!(minus.found, back, "seed {seed}");
        }
    }

    #[test]
    fn ingredient2_third_rung() {
        let w = LatticeWindow::line(8, 1, 10.0).unwrap();
        let h = HarrisBuilder::new(w, 2.0, 1.0)
            .arrow(&[-2], &[-1], 0.5)
            .arrow(&[-1], &[0], 0.7)
            .death(&[2], 1.0)
            .arrow(&[-2], &[-3], 1.5)
            .death(&[-2], 2.0)
            .death(&[-3], 2.5)
            .death(&[-1], 3.0)
            .build()
            .unwrap();
        let i2 = build_ingredient2(&h, 2, Orientation::Plus).unwrap();
        let ladder: Vec<(f64, Option<Point>)> =
            vec![(1.0, Some(vec![-2])), (2.5, Some(vec![-1])), (3.0, Some(vec![0]))];
        assert_eq!(i2.ladder, ladder);
        assert_eq!(i2.found, Some((vec![0], 3.0)));
    }

    #[test]
    fn ingredient2_immediate_survival() {
        let h = HarrisBuilder::new(LatticeWindow::line(4, 1, 5.0).unwrap(), 2.0, 1.0).build().unwrap();
        let i2 = build_ingredient2(&h, 2, Orientation::Plus).unwrap();
        assert_eq!(i2.found, Some((vec![2], 0.0)));
    }

    #[test]
    fn steered_sequence_depth_one_is_the_renewal_point() {
        let h = bifurcation_at_three(true).build().unwrap();
        let s = steered_sequence(&h, &[0], 1, 2).unwrap();
        let p = build_renewal_point(&h, 2).unwrap().point().cloned().unwrap();
        assert_eq!(s.steps.len(), 2);
        assert_eq!((s.steps[1].s.clone(), s.steps[1].tau), (p.x, p.t));
        assert!(classify(&h, &s.witness).unwrap().is_rfsip);
    }
}
