//! Prioritized any-angle safe-interval planning for disk robots, with
//! working-area confinement, and an independent time-stepped verifier.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Point, Rect};
use crate::grid::{squared_edt, Grid, Mask};
use crate::scene::{Environment, Robot, WorkingArea};

/// Time interval `[start, end]` in seconds.
pub type Interval = (f64, f64);

const TIME_EPS: f64 = 1e-7;

/// Samples along `a`→`b` spaced at most `max_step` apart, endpoints
/// included.
pub fn sweep_samples(a: Point, b: Point, max_step: f64) -> Vec<Point> {
    let n = (a.dist(b) / max_step).ceil().max(1.0) as usize;
    (0..=n).map(|k| a.lerp(b, k as f64 / n as f64)).collect()
}

/// Index range of cells whose centers lie within `[c - r, c + r]` along one
/// axis.
fn cell_span(c: f64, r: f64, res: f64, n: usize) -> Option<(usize, usize)> {
    let lo = ((c - r) / res - 0.5).ceil().max(0.0);
    let hi = ((c + r) / res - 0.5).floor().min(n as f64 - 1.0);
    (lo <= hi).then(|| (lo as usize, hi as usize))
}

/// True if some blocked cell center lies within the closed disk.
fn disk_hits(blocked: &Mask, res: f64, p: Point, r: f64) -> bool {
    let r2 = r * r;
    let Some((j0, j1)) = cell_span(p.y, r, res, blocked.height) else { return false };
    for j in j0..=j1 {
        let dy = (j as f64 + 0.5) * res - p.y;
        let half = (r2 - dy * dy).max(0.0).sqrt();
        let Some((i0, i1)) = cell_span(p.x, half, res, blocked.width) else { continue };
        for i in i0..=i1 {
            let dx = (i as f64 + 0.5) * res - p.x;
            if dx * dx + dy * dy <= r2 && *blocked.get(i, j) {
                return true;
            }
        }
    }
    false
}

/// True if a blocked cell center lies in the ring `r - w < d <= r`.
fn ring_hits(blocked: &Mask, res: f64, p: Point, r: f64, w: f64) -> bool {
    let (r2, ri) = (r * r, (r - w).max(0.0));
    let ri2 = ri * ri;
    let Some((j0, j1)) = cell_span(p.y, r, res, blocked.height) else { return false };
    for j in j0..=j1 {
        let dy = (j as f64 + 0.5) * res - p.y;
        let half = (r2 - dy * dy).max(0.0).sqrt();
        // Only the two arcs outside the inner circle, padded for rounding.
        let inner = if dy.abs() < ri { (ri2 - dy * dy).sqrt() - 1e-9 } else { 0.0 };
        let arm = 0.5 * (half - inner) + 1e-9;
        for c in [p.x - 0.5 * (half + inner), p.x + 0.5 * (half + inner)] {
            let Some((i0, i1)) = cell_span(c, arm, res, blocked.width) else { continue };
            for i in i0..=i1 {
                let dx = (i as f64 + 0.5) * res - p.x;
                let d2 = dx * dx + dy * dy;
                if d2 <= r2 && d2 > ri2 && *blocked.get(i, j) {
                    return true;
                }
            }
        }
    }
    false
}

/// First sample of a disk swept along `a`→`b` (samples every `res / 4`)
/// that overlaps a blocked cell. The first sample uses the full footprint;
/// later samples only test the perimeter ring one step wide, which is
/// enough because a cell cannot cross more than one step of the ring
/// between samples.
pub fn perimeter_sweep_conflict(blocked: &Mask, res: f64, a: Point, b: Point, radius: f64) -> Option<usize> {
    let pts = sweep_samples(a, b, res / 4.0);
    if disk_hits(blocked, res, pts[0], radius) {
        return Some(0);
    }
    let step = if pts.len() > 1 { pts[0].dist(pts[1]) } else { 0.0 };
    (1..pts.len()).find(|&k| ring_hits(blocked, res, pts[k], radius, step))
}

/// Static obstacles with their distance field, for fast capsule tests.
#[derive(Debug, Clone)]
pub struct StaticMap {
    pub res: f64,
    pub blocked: Mask,
    /// Distance from each cell center to the nearest blocked center (μm).
    pub dist: Grid<f64>,
    pub window: Rect,
}

impl StaticMap {
    pub fn new(env: &Environment, window: &WorkingArea) -> Self {
        Self::from_mask(env.obstacle_mask(), env.resolution_um, window.rect())
    }

    pub fn from_mask(blocked: Mask, res: f64, window: Rect) -> Self {
        let dist = squared_edt(&blocked).map(|d| d.sqrt() * res);
        StaticMap { res, blocked, dist, window }
    }

    fn cell_of(&self, p: Point) -> (usize, usize) {
        let i = ((p.x / self.res).floor().max(0.0) as usize).min(self.blocked.width - 1);
        let j = ((p.y / self.res).floor().max(0.0) as usize).min(self.blocked.height - 1);
        (i, j)
    }

    /// Lower bound on the distance from `p` to the nearest blocked center.
    fn clearance_lb(&self, p: Point) -> f64 {
        let (i, j) = self.cell_of(p);
        let c = Point::new((i as f64 + 0.5) * self.res, (j as f64 + 0.5) * self.res);
        *self.dist.get(i, j) - c.dist(p)
    }

    /// Full-footprint validity of a disk: clear of obstacles and inside the
    /// window.
    pub fn disk_ok(&self, p: Point, radius: f64) -> bool {
        if !self.window.contains_disk(p, radius) {
            return false;
        }
        self.clearance_lb(p) > radius || !disk_hits(&self.blocked, self.res, p, radius)
    }

    /// Whether the disk fits at the center of cell `(i, j)`.
    pub fn cell_admits(&self, i: usize, j: usize, radius: f64) -> bool {
        let c = Point::new((i as f64 + 0.5) * self.res, (j as f64 + 0.5) * self.res);
        self.window.contains_disk(c, radius) && *self.dist.get(i, j) > radius
    }

    /// Cells admitting the disk that are 8-connected to the cell holding
    /// `p` through such cells (the cell of `p` itself is always included).
    pub fn reachable_from(&self, p: Point, radius: f64) -> Mask {
        let (w, h) = (self.blocked.width, self.blocked.height);
        let mut seen = Grid::new(w, h, false);
        let start = self.cell_of(p);
        seen.set(start.0, start.1, true);
        let mut stack = vec![start];
        while let Some((i, j)) = stack.pop() {
            for (di, dj) in [(-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1)] {
                let (ni, nj) = (i as i64 + di, j as i64 + dj);
                if ni < 0 || nj < 0 || ni >= w as i64 || nj >= h as i64 {
                    continue;
                }
                let (ni, nj) = (ni as usize, nj as usize);
                if !*seen.get(ni, nj) && self.cell_admits(ni, nj, radius) {
                    seen.set(ni, nj, true);
                    stack.push((ni, nj));
                }
            }
        }
        seen
    }

    /// Capsule test: every sample (spacing ≤ res/4) of the disk swept from
    /// `a` to `b` is clear of blocked cells and inside the window.
    pub fn line_of_sight(&self, a: Point, b: Point, radius: f64) -> bool {
        // The window is convex, so containment of both end disks suffices.
        if !self.window.contains_disk(a, radius) || !self.window.contains_disk(b, radius) {
            return false;
        }
        let n = (a.dist(b) / (self.res / 4.0)).ceil().max(1.0) as usize;
        let step = a.dist(b) / n as f64;
        let at = |k: usize| a.lerp(b, k as f64 / n as f64);
        // Invariant: every sample before k is clear.
        let mut k = 0;
        while k <= n {
            let p = at(k);
            let lb = self.clearance_lb(p);
            if lb > radius {
                // Samples within (lb - radius) of p are certified clear.
                let skip = if step > 0.0 { ((lb - radius) / step).ceil() as usize } else { n + 1 };
                k += skip.max(1);
                continue;
            }
            let hit = if k == 0 { disk_hits(&self.blocked, self.res, p, radius) } else { ring_hits(&self.blocked, self.res, p, radius, step) };
            if hit {
                return false;
            }
            k += 1;
        }
        true
    }
}

/// Capsule test on an environment; builds the distance field each call.
pub fn line_of_sight(env: &Environment, a: Point, b: Point, radius: f64, window: &WorkingArea) -> bool {
    StaticMap::new(env, window).line_of_sight(a, b, radius)
}

/// Constant-velocity motion of a disk center, or a wait when `a == b`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Motion {
    a: Point,
    b: Point,
    t0: f64,
    t1: f64,
}

/// Per-cell unsafe times for one agent, derived from the motions of the
/// other agents; safe intervals are the complement within `[0, horizon]`.
#[derive(Debug, Clone)]
pub struct SafeIntervalTable {
    pub horizon: f64,
    width: usize,
    height: usize,
    res: f64,
    slot: Vec<u32>,
    unsafe_lists: Vec<Vec<Interval>>,
    /// Integral image of cells with any reservation, (w + 1) × (h + 1).
    reserved_sum: Vec<u32>,
}

impl SafeIntervalTable {
    pub fn new(width: usize, height: usize, res: f64, horizon: f64) -> Self {
        SafeIntervalTable { horizon, width, height, res, slot: vec![u32::MAX; width * height], unsafe_lists: Vec::new(), reserved_sum: Vec::new() }
    }

    fn add(&mut self, k: usize, iv: Interval) {
        let iv = (iv.0.max(0.0), iv.1.min(self.horizon));
        if iv.1 < iv.0 {
            return;
        }
        if self.slot[k] == u32::MAX {
            self.slot[k] = self.unsafe_lists.len() as u32;
            self.unsafe_lists.push(Vec::new());
        }
        self.unsafe_lists[self.slot[k] as usize].push(iv);
    }

    /// Marks cells whose center comes within `reach` of a moving center.
    /// `t1 = horizon` with `a == b` models an agent parked for good.
    fn reserve(&mut self, m: &Motion, reach: f64) {
        let res = self.res;
        let (lo, hi) = (Point::new(m.a.x.min(m.b.x), m.a.y.min(m.b.y)), Point::new(m.a.x.max(m.b.x), m.a.y.max(m.b.y)));
        let Some((j0, j1)) = cell_span(0.5 * (lo.y + hi.y), 0.5 * (hi.y - lo.y) + reach, res, self.height) else { return };
        let Some((i0, i1)) = cell_span(0.5 * (lo.x + hi.x), 0.5 * (hi.x - lo.x) + reach, res, self.width) else { return };
        let dur = m.t1 - m.t0;
        let v = if dur > 0.0 { (m.b - m.a) * (1.0 / dur) } else { Point::new(0.0, 0.0) };
        let aa = v.norm_sq();
        let r2 = reach * reach;
        for j in j0..=j1 {
            let cy = (j as f64 + 0.5) * res;
            for i in i0..=i1 {
                let q = Point::new((i as f64 + 0.5) * res, cy);
                let d = q - m.a;
                let c = d.norm_sq() - r2;
                // |d - v τ|² < reach² for τ in [0, dur]
                let span = if aa == 0.0 || m.a == m.b {
                    (c < 0.0).then_some((0.0, dur))
                } else {
                    let bb = d.dot(v);
                    let disc = bb * bb - aa * c;
                    if disc <= 0.0 {
                        None
                    } else {
                        let s = disc.sqrt();
                        let (lo, hi) = ((bb - s) / aa, (bb + s) / aa);
                        let (lo, hi) = (lo.max(0.0), hi.min(dur));
                        (lo < hi).then_some((lo, hi))
                    }
                };
                if let Some((lo, hi)) = span {
                    self.add(j * self.width + i, (m.t0 + lo, m.t0 + hi));
                }
            }
        }
    }

    fn finish(&mut self) {
        for l in &mut self.unsafe_lists {
            l.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut merged: Vec<Interval> = Vec::with_capacity(l.len());
            for &iv in l.iter() {
                match merged.last_mut() {
                    Some(last) if iv.0 <= last.1 => last.1 = last.1.max(iv.1),
                    _ => merged.push(iv),
                }
            }
            *l = merged;
        }
        let (w, h) = (self.width, self.height);
        let mut sum = vec![0u32; (w + 1) * (h + 1)];
        for j in 0..h {
            let mut row = 0;
            for i in 0..w {
                row += u32::from(self.slot[j * w + i] != u32::MAX);
                sum[(j + 1) * (w + 1) + i + 1] = sum[j * (w + 1) + i + 1] + row;
            }
        }
        self.reserved_sum = sum;
    }

    /// True if any cell in the inclusive index box has a reservation.
    fn any_reserved(&self, i0: usize, j0: usize, i1: usize, j1: usize) -> bool {
        if self.unsafe_lists.is_empty() {
            return false;
        }
        let w = self.width + 1;
        let s = &self.reserved_sum;
        s[(j1 + 1) * w + i1 + 1] + s[j0 * w + i0] > s[j0 * w + i1 + 1] + s[(j1 + 1) * w + i0]
    }

    /// Unsafe intervals of a cell (sorted, disjoint).
    pub fn unsafe_intervals(&self, i: usize, j: usize) -> &[Interval] {
        match self.slot[j * self.width + i] {
            u32::MAX => &[],
            s => &self.unsafe_lists[s as usize],
        }
    }

    fn unsafe_at(&self, k: usize) -> &[Interval] {
        match self.slot[k] {
            u32::MAX => &[],
            s => &self.unsafe_lists[s as usize],
        }
    }

    /// Safe intervals of a cell that is statically free.
    pub fn safe_intervals(&self, i: usize, j: usize) -> Vec<Interval> {
        complement(self.unsafe_intervals(i, j), self.horizon)
    }
}

fn complement(bad: &[Interval], horizon: f64) -> Vec<Interval> {
    let mut out = Vec::new();
    let mut t = 0.0;
    for &(a, b) in bad {
        if a > t {
            out.push((t, a));
        }
        t = t.max(b);
    }
    if t < horizon {
        out.push((t, horizon));
    }
    out
}

/// Time-stamped waypoints; straight constant-speed moves between them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimedPath {
    pub agent: usize,
    pub waypoints: Vec<(Point, f64)>,
}

impl TimedPath {
    pub fn stationary(agent: usize, p: Point) -> Self {
        TimedPath { agent, waypoints: vec![(p, 0.0)] }
    }

    pub fn length(&self) -> f64 {
        self.waypoints.windows(2).map(|w| w[0].0.dist(w[1].0)).sum()
    }

    pub fn end_time(&self) -> f64 {
        self.waypoints.last().map_or(0.0, |w| w.1)
    }

    /// Position at time `t`; the path holds its end points outside its
    /// time span.
    pub fn position_at(&self, t: f64) -> Point {
        let w = &self.waypoints;
        if t <= w[0].1 {
            return w[0].0;
        }
        for s in w.windows(2) {
            if t <= s[1].1 {
                let f = (t - s[0].1) / (s[1].1 - s[0].1);
                return s[0].0.lerp(s[1].0, f);
            }
        }
        w[w.len() - 1].0
    }

    /// Checks increasing times and the speed bound.
    pub fn check(&self, max_speed: f64) -> Result<()> {
        if self.waypoints.is_empty() {
            return Err(Error::Empty("path waypoints"));
        }
        for s in self.waypoints.windows(2) {
            let dt = s[1].1 - s[0].1;
            if !(dt > 0.0) {
                return Err(Error::Format(format!("agent {}: times not increasing", self.agent)));
            }
            if s[0].0.dist(s[1].0) > max_speed * dt * (1.0 + 1e-9) + 1e-9 {
                return Err(Error::Format(format!("agent {}: speed bound exceeded", self.agent)));
            }
        }
        Ok(())
    }

    fn motions(&self, horizon: f64) -> Vec<Motion> {
        let mut out: Vec<Motion> = self.waypoints.windows(2).map(|s| Motion { a: s[0].0, b: s[1].0, t0: s[0].1, t1: s[1].1 }).collect();
        let (p0, t0) = self.waypoints[0];
        if t0 > 0.0 {
            out.insert(0, Motion { a: p0, b: p0, t0: 0.0, t1: t0 });
        }
        let (pe, te) = self.waypoints[self.waypoints.len() - 1];
        out.push(Motion { a: pe, b: pe, t0: te, t1: horizon.max(te) });
        out
    }
}

/// A robot with the start and goal of one planning leg.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub robot: Robot,
    pub start: Point,
    pub goal: Point,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Outcome {
    Success(TimedPath),
    InvalidStartGoal,
    PlanFailure,
}

impl Outcome {
    pub fn is_success(&self) -> bool {
        matches!(self, Outcome::Success(_))
    }
}

/// Outcomes in the order the agents were given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanReport {
    pub outcomes: Vec<(usize, Outcome)>,
    pub makespan: f64,
    pub total_length: f64,
}

impl PlanReport {
    pub fn successful_paths(&self) -> Vec<TimedPath> {
        self.outcomes
            .iter()
            .filter_map(|(_, o)| match o {
                Outcome::Success(p) => Some(p.clone()),
                _ => None,
            })
            .collect()
    }

    /// Realized motion of every agent: its path, or waiting at its start.
    pub fn trajectories(&self, agents: &[Agent]) -> Vec<TimedPath> {
        self.outcomes
            .iter()
            .zip(agents)
            .map(|((_, o), a)| match o {
                Outcome::Success(p) => p.clone(),
                _ => TimedPath::stationary(a.robot.id, a.start),
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanParams {
    /// Search budget per agent.
    pub max_expansions: usize,
    /// Overrides the default horizon of twice the device diagonal at the
    /// slowest robot's speed.
    pub horizon_s: Option<f64>,
    /// Treat the starts of lower-priority agents as obstacles for the whole
    /// horizon. Off by default: lower agents are expected to get out of
    /// the way, which permits swaps.
    pub reserve_lower_starts: bool,
}

impl Default for PlanParams {
    fn default() -> Self {
        PlanParams { max_expansions: 2_000_000, horizon_s: None, reserve_lower_starts: false }
    }
}

/// Static clearance radius used by the planner.
pub fn effective_radius(robot: &Robot, res: f64) -> f64 {
    robot.radius_um + 0.5 * res
}

#[derive(Debug, Clone, Copy)]
struct Node {
    cell: u32,
    pos: Point,
    arrival: f64,
    iv_end: f64,
    parent: u32,
    closed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct OpenEntry {
    f: f64,
    g: f64,
    cell: u32,
    node: u32,
}

impl Eq for OpenEntry {}

impl Ord for OpenEntry {
    // BinaryHeap is a max-heap: invert so the smallest f pops first, then
    // the larger g, then the lower cell index.
    fn cmp(&self, o: &Self) -> Ordering {
        o.f.total_cmp(&self.f).then(self.g.total_cmp(&o.g)).then(o.cell.cmp(&self.cell)).then(o.node.cmp(&self.node))
    }
}

impl PartialOrd for OpenEntry {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

/// Cells visited by the segment with their entry and exit fractions.
fn traverse(a: Point, b: Point, res: f64, w: usize, h: usize) -> Vec<(usize, f64, f64)> {
    let cell = |p: Point| -> (i64, i64) { ((p.x / res).floor() as i64, (p.y / res).floor() as i64) };
    let (mut i, mut j) = cell(a);
    let (ie, je) = cell(b);
    let d = b - a;
    let (si, sj) = (if d.x > 0.0 { 1 } else { -1 }, if d.y > 0.0 { 1 } else { -1 });
    let next_boundary = |c: i64, s: i64| -> f64 { (if s > 0 { c + 1 } else { c }) as f64 * res };
    let mut tx = if d.x != 0.0 { (next_boundary(i, si) - a.x) / d.x } else { f64::INFINITY };
    let mut ty = if d.y != 0.0 { (next_boundary(j, sj) - a.y) / d.y } else { f64::INFINITY };
    let dtx = if d.x != 0.0 { res / d.x.abs() } else { f64::INFINITY };
    let dty = if d.y != 0.0 { res / d.y.abs() } else { f64::INFINITY };
    let idx = |i: i64, j: i64| -> usize { (j.clamp(0, h as i64 - 1) as usize) * w + i.clamp(0, w as i64 - 1) as usize };
    let mut out = Vec::new();
    let mut t = 0.0;
    loop {
        if (i, j) == (ie, je) {
            out.push((idx(i, j), t, 1.0));
            return out;
        }
        let tn = tx.min(ty).min(1.0);
        out.push((idx(i, j), t, tn));
        if tn >= 1.0 {
            return out;
        }
        t = tn;
        if tx < ty {
            i += si;
            tx += dtx;
        } else if ty < tx {
            j += sj;
            ty += dty;
        } else {
            // Exact corner: the diagonal neighbour is entered directly; the
            // segment touches the side cells only at the corner point, which
            // also belongs to the closed diagonal cell.
            i += si;
            j += sj;
            tx += dtx;
            ty += dty;
        }
    }
}

/// Cell box covering the window; search state lives in its local frame.
#[derive(Debug, Clone, Copy)]
struct Frame {
    i0: usize,
    j0: usize,
    w: usize,
    h: usize,
    origin: Point,
}

impl Frame {
    fn new(map: &StaticMap) -> Self {
        let (nx, ny, res) = (map.blocked.width, map.blocked.height, map.res);
        let lo = |v: f64, n: usize| ((v / res).floor().max(0.0) as usize).min(n - 1);
        let hi = |v: f64, n: usize| ((v / res).ceil().max(1.0) as usize).min(n);
        let (i0, j0) = (lo(map.window.x0, nx), lo(map.window.y0, ny));
        let (i1, j1) = (hi(map.window.x1, nx).max(i0 + 1), hi(map.window.y1, ny).max(j0 + 1));
        Frame { i0, j0, w: i1 - i0, h: j1 - j0, origin: Point::new(i0 as f64 * res, j0 as f64 * res) }
    }
}

struct Search<'a> {
    map: &'a StaticMap,
    table: &'a SafeIntervalTable,
    valid: Vec<bool>,
    radius: f64,
    speed: f64,
    w: usize,
    h: usize,
    origin: Point,
}

impl Search<'_> {
    fn center(&self, k: usize) -> Point {
        Point::new(((k % self.w) as f64 + 0.5) * self.map.res, ((k / self.w) as f64 + 0.5) * self.map.res)
    }

    /// Earliest departure in `[lo, hi]` such that every traversed cell is
    /// free of reservations while the center is inside it.
    fn earliest_departure(&self, cells: &[(usize, f64, f64)], dur: f64, lo: f64, hi: f64) -> Option<f64> {
        let mut t = lo;
        'outer: loop {
            if t > hi {
                return None;
            }
            for &(k, fa, fb) in cells {
                let (e, x) = (t + fa * dur, t + fb * dur);
                for &(u0, u1) in self.table.unsafe_at(k) {
                    if u0 > x + TIME_EPS {
                        break;
                    }
                    if u1 >= e - TIME_EPS {
                        t = u1 - fa * dur + 2.0 * TIME_EPS;
                        continue 'outer;
                    }
                }
            }
            return Some(t);
        }
    }

    /// Arrival time at `to` inside `iv` when leaving from a state at `from`
    /// reached at `t_from` whose safe interval ends at `from_end`.
    fn arrive(&self, from: Point, t_from: f64, from_end: f64, to: Point, iv: Interval) -> Option<f64> {
        let dur = from.dist(to) / self.speed;
        let lo = t_from.max(iv.0 - dur);
        let hi = from_end.min(iv.1 - dur);
        if lo > hi {
            return None;
        }
        if !self.map.line_of_sight(from + self.origin, to + self.origin, self.radius) {
            return None;
        }
        let res = self.map.res;
        let idx = |v: f64, n: usize| ((v / res).floor().max(0.0) as usize).min(n - 1);
        let (i0, i1) = (idx(from.x.min(to.x), self.w), idx(from.x.max(to.x), self.w));
        let (j0, j1) = (idx(from.y.min(to.y), self.h), idx(from.y.max(to.y), self.h));
        if !self.table.any_reserved(i0, j0, i1, j1) {
            return Some(lo + dur);
        }
        let cells = traverse(from, to, res, self.w, self.h);
        self.earliest_departure(&cells, dur, lo, hi).map(|t| t + dur)
    }
}

/// Flood fill over 8-neighbours of valid cells; the search can only move
/// between such neighbours, so this is a necessary condition.
fn statically_connected(valid: &[bool], w: usize, h: usize, from: usize, to: usize) -> bool {
    let mut seen = vec![false; w * h];
    let mut stack = vec![from];
    seen[from] = true;
    while let Some(k) = stack.pop() {
        if k == to {
            return true;
        }
        let (i, j) = ((k % w) as i64, (k / w) as i64);
        for (di, dj) in [(-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1)] {
            let (ni, nj) = (i + di, j + dj);
            if ni < 0 || nj < 0 || ni >= w as i64 || nj >= h as i64 {
                continue;
            }
            let n = nj as usize * w + ni as usize;
            if valid[n] && !seen[n] {
                seen[n] = true;
                stack.push(n);
            }
        }
    }
    false
}

/// Plans in the local frame: `table` and `agent` positions are relative to
/// `frame.origin`.
fn plan_one(map: &StaticMap, frame: &Frame, table: &SafeIntervalTable, agent: &Agent, params: &PlanParams) -> Option<TimedPath> {
    let (w, h, origin) = (frame.w, frame.h, frame.origin);
    let res = map.res;
    let radius = effective_radius(&agent.robot, res);
    let speed = agent.robot.speed_um_s;
    // Cells whose center admits the disk inside the window.
    let mut valid: Vec<bool> = (0..w * h)
        .map(|k| {
            let (i, j) = (k % w, k / w);
            let c = Point::new((i as f64 + 0.5) * res, (j as f64 + 0.5) * res) + origin;
            map.window.contains_disk(c, radius) && *map.dist.get(frame.i0 + i, frame.j0 + j) > radius
        })
        .collect();
    let cell_idx = |p: Point| -> usize {
        let i = ((p.x / res).floor().max(0.0) as usize).min(w - 1);
        let j = ((p.y / res).floor().max(0.0) as usize).min(h - 1);
        j * w + i
    };
    let start_cell = cell_idx(agent.start);
    let goal_cell = cell_idx(agent.goal);
    // The goal node sits at the exact goal, which the caller validated.
    valid[goal_cell] = true;
    if !statically_connected(&valid, w, h, start_cell, goal_cell) {
        return None;
    }
    let s = Search { map, table, valid, radius, speed, w, h, origin };
    let start_ivs = complement(table.unsafe_at(start_cell), table.horizon);
    let first = start_ivs.first().filter(|iv| iv.0 <= 0.0)?;
    let heur = |p: Point| p.dist(agent.goal) / speed;

    let mut nodes: Vec<Node> = vec![Node { cell: start_cell as u32, pos: agent.start, arrival: 0.0, iv_end: first.1, parent: u32::MAX, closed: false }];
    let mut first_slot = vec![u32::MAX; w * h];
    let mut other_slot: HashMap<(u32, u32), u32> = HashMap::new();
    first_slot[start_cell] = 0;
    let mut open = BinaryHeap::new();
    open.push(OpenEntry { f: heur(agent.start), g: 0.0, cell: start_cell as u32, node: 0 });
    let mut expansions = 0;
    let horizon = table.horizon;

    while let Some(e) = open.pop() {
        let n = nodes[e.node as usize];
        if n.closed || e.g > n.arrival {
            continue;
        }
        nodes[e.node as usize].closed = true;
        if n.cell as usize == goal_cell && n.pos == agent.goal && n.iv_end >= horizon - TIME_EPS {
            let mut path = reconstruct(&nodes, e.node, agent, speed);
            for wp in &mut path.waypoints {
                wp.0 = wp.0 + origin;
            }
            return Some(path);
        }
        expansions += 1;
        if expansions > params.max_expansions {
            return None;
        }
        let (ci, cj) = ((n.cell as usize % w) as i64, (n.cell as usize / w) as i64);
        for (di, dj) in [(-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1)] {
            let (ni, nj) = (ci + di, cj + dj);
            if ni < 0 || nj < 0 || ni >= w as i64 || nj >= h as i64 {
                continue;
            }
            let k = nj as usize * w + ni as usize;
            if !s.valid[k] {
                continue;
            }
            let pos = if k == goal_cell { agent.goal } else { s.center(k) };
            let ivs = complement(table.unsafe_at(k), horizon);
            for (ii, &iv) in ivs.iter().enumerate() {
                if iv.0 > n.iv_end + pos.dist(n.pos) / speed + TIME_EPS {
                    break;
                }
                let slot = if ii == 0 { first_slot[k] } else { other_slot.get(&(k as u32, ii as u32)).copied().unwrap_or(u32::MAX) };
                let current = if slot == u32::MAX { f64::INFINITY } else { nodes[slot as usize].arrival };
                if slot != u32::MAX && nodes[slot as usize].closed {
                    continue;
                }
                // Optimistic arrival: travel time without waiting.
                let improves = |from: &Node| iv.0.max(from.arrival + from.pos.dist(pos) / speed) < current - TIME_EPS;
                // Any-angle: try straight from the parent first.
                let mut best: Option<(f64, u32)> = None;
                if n.parent != u32::MAX {
                    let p = nodes[n.parent as usize];
                    if improves(&p) {
                        best = s.arrive(p.pos, p.arrival, p.iv_end, pos, iv).map(|t| (t, n.parent));
                    }
                }
                if best.is_none() && improves(&n) {
                    best = s.arrive(n.pos, n.arrival, n.iv_end, pos, iv).map(|t| (t, e.node));
                }
                let Some((t, parent)) = best else { continue };
                let idx = if slot == u32::MAX {
                    nodes.push(Node { cell: k as u32, pos, arrival: f64::INFINITY, iv_end: iv.1, parent, closed: false });
                    let idx = (nodes.len() - 1) as u32;
                    if ii == 0 {
                        first_slot[k] = idx;
                    } else {
                        other_slot.insert((k as u32, ii as u32), idx);
                    }
                    idx
                } else {
                    slot
                };
                let node = &mut nodes[idx as usize];
                if t >= node.arrival {
                    continue;
                }
                node.arrival = t;
                node.parent = parent;
                open.push(OpenEntry { f: t + heur(pos), g: t, cell: k as u32, node: idx });
            }
        }
    }
    None
}

fn reconstruct(nodes: &[Node], last: u32, agent: &Agent, speed: f64) -> TimedPath {
    let mut chain = vec![last];
    let mut k = last;
    while nodes[k as usize].parent != u32::MAX {
        k = nodes[k as usize].parent;
        chain.push(k);
    }
    chain.reverse();
    let mut wp = vec![(agent.start, 0.0)];
    for pair in chain.windows(2) {
        let (a, b) = (nodes[pair[0] as usize], nodes[pair[1] as usize]);
        let depart = b.arrival - a.pos.dist(b.pos) / speed;
        let last_t = wp[wp.len() - 1].1;
        if depart > last_t + TIME_EPS {
            wp.push((a.pos, depart));
        }
        wp.push((b.pos, b.arrival));
    }
    TimedPath { agent: agent.robot.id, waypoints: wp }
}

/// Default horizon: twice the device diagonal at the slowest speed.
pub fn default_horizon(env: &Environment, agents: &[Agent]) -> f64 {
    let vmin = agents.iter().map(|a| a.robot.speed_um_s).fold(f64::INFINITY, f64::min);
    2.0 * env.width_um.hypot(env.height_um) / vmin
}

/// Plans agents one at a time in priority order (lower value first). Each
/// agent avoids the committed motion of those before it and stays at its
/// goal once there. An agent that fails stays parked at its start, so later
/// agents avoid it. A goal that overlaps where an earlier agent ends up is
/// reported as an invalid goal.
pub fn plan_paths(env: &Environment, agents: &[Agent], window: &WorkingArea, params: &PlanParams) -> PlanReport {
    let map = StaticMap::new(env, window);
    plan_paths_on(&map, env, agents, params)
}

/// [`plan_paths`] with a prebuilt static map.
pub fn plan_paths_on(map: &StaticMap, env: &Environment, agents: &[Agent], params: &PlanParams) -> PlanReport {
    plan_paths_around(map, env, &[], agents, params)
}

/// [`plan_paths_on`] where `fixed` robots follow given trajectories (for
/// instance parked robots) that every agent must avoid.
pub fn plan_paths_around(map: &StaticMap, env: &Environment, fixed: &[(Robot, TimedPath)], agents: &[Agent], params: &PlanParams) -> PlanReport {
    let res = map.res;
    let horizon = params.horizon_s.unwrap_or_else(|| default_horizon(env, agents));
    let mut order: Vec<usize> = (0..agents.len()).collect();
    order.sort_by_key(|&i| (agents[i].robot.priority, i));
    let mut committed: Vec<Option<TimedPath>> = vec![None; agents.len()];
    let mut outcomes: Vec<Option<Outcome>> = vec![None; agents.len()];
    // Any point of a cell is within res/√2 of its center.
    let cell_margin = res * std::f64::consts::FRAC_1_SQRT_2 + 1e-6;
    let frame = Frame::new(map);
    let o = frame.origin;
    for (rank, &i) in order.iter().enumerate() {
        let a = &agents[i];
        let r_eff = effective_radius(&a.robot, res);
        // Where robots already planned (or fixed) end up for good.
        let parked = fixed.iter().map(|(r, p)| (r.radius_um, p)).chain(order[..rank].iter().map(|&j| (agents[j].robot.radius_um, committed[j].as_ref().expect("planned"))));
        let goal_taken = parked.clone().any(|(rj, p)| p.waypoints[p.waypoints.len() - 1].0.dist(a.goal) < a.robot.radius_um + rj + cell_margin);
        let outcome = if !map.disk_ok(a.start, r_eff) || !map.disk_ok(a.goal, r_eff) || goal_taken {
            Outcome::InvalidStartGoal
        } else {
            let mut table = SafeIntervalTable::new(frame.w, frame.h, res, horizon);
            for (r, p) in fixed {
                for m in p.motions(horizon) {
                    table.reserve(&Motion { a: m.a - o, b: m.b - o, ..m }, a.robot.radius_um + r.radius_um + cell_margin);
                }
            }
            for (r2, &j) in order.iter().enumerate() {
                if j == i {
                    continue;
                }
                let reach = a.robot.radius_um + agents[j].robot.radius_um + cell_margin;
                let motions = if r2 < rank {
                    committed[j].as_ref().expect("higher priority planned").motions(horizon)
                } else if params.reserve_lower_starts {
                    vec![Motion { a: agents[j].start, b: agents[j].start, t0: 0.0, t1: horizon }]
                } else {
                    continue;
                };
                for m in &motions {
                    table.reserve(&Motion { a: m.a - o, b: m.b - o, ..*m }, reach);
                }
            }
            table.finish();
            let local = Agent { robot: a.robot.clone(), start: a.start - o, goal: a.goal - o };
            let r = plan_one(map, &frame, &table, &local, params).map(|mut p| {
                // Exact endpoints survive the frame shift.
                p.waypoints[0].0 = a.start;
                let last = p.waypoints.len() - 1;
                p.waypoints[last].0 = a.goal;
                p
            });
            match r {
                Some(p) => Outcome::Success(p),
                None => Outcome::PlanFailure,
            }
        };
        committed[i] = Some(match &outcome {
            Outcome::Success(p) => p.clone(),
            _ => TimedPath::stationary(a.robot.id, a.start),
        });
        outcomes[i] = Some(outcome);
    }
    let outcomes: Vec<(usize, Outcome)> = agents.iter().zip(outcomes).map(|(a, o)| (a.robot.id, o.expect("planned"))).collect();
    let (mut makespan, mut total_length) = (0.0f64, 0.0);
    for (_, o) in &outcomes {
        if let Outcome::Success(p) = o {
            makespan = makespan.max(p.end_time());
            total_length += p.length();
        }
    }
    PlanReport { outcomes, makespan, total_length }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Violation {
    AgentAgent { a: usize, b: usize, t: f64, distance: f64 },
    Static { agent: usize, t: f64 },
    Window { agent: usize, t: f64 },
    Path { agent: usize, reason: String },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConflictReport {
    pub violations: Vec<Violation>,
}

impl ConflictReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Brute-force time-stepped check at `Δt = res / (4 · max speed)`: pairwise
/// separation, full-disk static overlap and window containment. Reports
/// the first violation per pair (or per agent).
pub fn verify_plan(env: &Environment, paths: &[TimedPath], robots: &[Robot], window: &WorkingArea) -> ConflictReport {
    let mut violations = Vec::new();
    let robot = |id: usize| robots.iter().find(|r| r.id == id);
    let mut agents = Vec::new();
    for p in paths {
        match robot(p.agent) {
            Some(r) => {
                if let Err(e) = p.check(r.speed_um_s) {
                    violations.push(Violation::Path { agent: p.agent, reason: e.to_string() });
                }
                agents.push((p, r));
            }
            None => violations.push(Violation::Path { agent: p.agent, reason: "unknown robot".into() }),
        }
    }
    if agents.is_empty() {
        return ConflictReport { violations };
    }
    let blocked = env.obstacle_mask();
    let res = env.resolution_um;
    let vmax = agents.iter().map(|(_, r)| r.speed_um_s).fold(0.0, f64::max);
    let dt = res / (4.0 * vmax);
    let t_end = agents.iter().map(|(p, _)| p.end_time()).fold(0.0, f64::max);
    let steps = (t_end / dt).ceil() as usize;
    let n = agents.len();
    let mut pair_hit = vec![false; n * n];
    let mut static_hit = vec![false; n];
    let mut window_hit = vec![false; n];
    let rect = window.rect();
    let mut pos = vec![Point::new(0.0, 0.0); n];
    for s in 0..=steps {
        let t = (s as f64 * dt).min(t_end);
        for (k, (p, _)) in agents.iter().enumerate() {
            pos[k] = p.position_at(t);
        }
        for a in 0..n {
            let ra = agents[a].1.radius_um;
            if !window_hit[a] && !rect.contains_disk(pos[a], ra) {
                window_hit[a] = true;
                violations.push(Violation::Window { agent: agents[a].0.agent, t });
            }
            if !static_hit[a] && disk_hits(&blocked, res, pos[a], ra) {
                static_hit[a] = true;
                violations.push(Violation::Static { agent: agents[a].0.agent, t });
            }
            for b in a + 1..n {
                let d = pos[a].dist(pos[b]);
                if !pair_hit[a * n + b] && d < ra + agents[b].1.radius_um {
                    pair_hit[a * n + b] = true;
                    violations.push(Violation::AgentAgent { a: agents[a].0.agent, b: agents[b].0.agent, t, distance: d });
                }
            }
        }
    }
    ConflictReport { violations }
}

/// `agent,t,x_um,y_um`, one row per waypoint.
pub fn write_paths_csv<W: Write>(paths: &[TimedPath], mut w: W) -> Result<()> {
    writeln!(w, "agent,t,x_um,y_um")?;
    for p in paths {
        for (pt, t) in &p.waypoints {
            writeln!(w, "{},{},{},{}", p.agent, t, pt.x, pt.y)?;
        }
    }
    Ok(())
}

pub fn read_paths_csv<R: BufRead>(r: R) -> Result<Vec<TimedPath>> {
    let mut out: Vec<TimedPath> = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        if n == 0 {
            if line.trim() != "agent,t,x_um,y_um" {
                return Err(Error::Format("path CSV header".into()));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 {
            return Err(Error::Format(format!("path CSV line {}", n + 1)));
        }
        let bad = |_| Error::Format(format!("path CSV line {}", n + 1));
        let agent: usize = f[0].trim().parse().map_err(|_| Error::Format(format!("path CSV line {}", n + 1)))?;
        let t: f64 = f[1].trim().parse().map_err(bad)?;
        let x: f64 = f[2].trim().parse().map_err(bad)?;
        let y: f64 = f[3].trim().parse().map_err(bad)?;
        match out.last_mut() {
            Some(p) if p.agent == agent => p.waypoints.push((Point::new(x, y), t)),
            _ => out.push(TimedPath { agent, waypoints: vec![(Point::new(x, y), t)] }),
        }
    }
    Ok(out)
}

const PALETTE: [&str; 8] = ["#d62728", "#1f77b4", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

/// Paths drawn over a block-downsampled obstacle raster.
pub fn write_paths_svg<W: Write>(env: &Environment, paths: &[TimedPath], robots: &[Robot], window: Option<&WorkingArea>, mut w: W) -> Result<()> {
    let (nx, ny) = (env.nx(), env.ny());
    let block = nx.max(ny).div_ceil(400).max(1);
    let scale = 800.0 / env.width_um.max(env.height_um);
    let (wpx, hpx) = (env.width_um * scale, env.height_um * scale);
    writeln!(w, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{wpx:.0}" height="{hpx:.0}" viewBox="0 0 {wpx:.2} {hpx:.2}">"#)?;
    writeln!(w, r##"<rect width="100%" height="100%" fill="#ffffff"/>"##)?;
    let blocked = env.obstacle_mask();
    let cell = env.resolution_um * block as f64 * scale;
    writeln!(w, r##"<g fill="#555555">"##)?;
    for by in 0..ny.div_ceil(block) {
        let mut run: Option<usize> = None;
        for bx in 0..=nx.div_ceil(block) {
            let any = bx < nx.div_ceil(block)
                && (by * block..((by + 1) * block).min(ny)).any(|y| (bx * block..((bx + 1) * block).min(nx)).any(|x| *blocked.get(x, y)));
            match (any, run) {
                (true, None) => run = Some(bx),
                (false, Some(s)) => {
                    writeln!(w, r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}"/>"#, s as f64 * cell, by as f64 * cell, (bx - s) as f64 * cell, cell)?;
                    run = None;
                }
                _ => {}
            }
        }
    }
    writeln!(w, "</g>")?;
    if let Some(wa) = window {
        let r = wa.rect();
        writeln!(
            w,
            r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="#888888" stroke-dasharray="6 4"/>"##,
            r.x0 * scale,
            r.y0 * scale,
            r.width() * scale,
            r.height() * scale
        )?;
    }
    for (k, p) in paths.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let pts: Vec<String> = p.waypoints.iter().map(|(q, _)| format!("{:.2},{:.2}", q.x * scale, q.y * scale)).collect();
        writeln!(w, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, pts.join(" "))?;
        let r = robots.iter().find(|r| r.id == p.agent).map_or(Robot::DEFAULT_RADIUS_UM, |r| r.radius_um) * scale;
        let (s, e) = (p.waypoints[0].0, p.waypoints[p.waypoints.len() - 1].0);
        writeln!(w, r#"<circle cx="{:.2}" cy="{:.2}" r="{r:.2}" fill="none" stroke="{color}"/>"#, s.x * scale, s.y * scale)?;
        writeln!(w, r#"<circle cx="{:.2}" cy="{:.2}" r="{r:.2}" fill="{color}" fill-opacity="0.3" stroke="{color}"/>"#, e.x * scale, e.y * scale)?;
    }
    writeln!(w, "</svg>")?;
    Ok(())
}
