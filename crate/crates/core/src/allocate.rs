//! Task allocation: working-area clustering of targets, routing of the
//! combined fleet over clusters, and per-robot goal assignment.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Point, Rect};
use crate::scene::{Environment, FreeSpaceMask, Robot, WorkingArea};

const KMEANS_MAX_ITER: usize = 100;

/// Targets that can be served within one working-area window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetCluster {
    pub targets: Vec<Point>,
    pub bbox: Rect,
}

impl TargetCluster {
    pub fn new(targets: Vec<Point>) -> Result<Self> {
        let bbox = Rect::bounding(&targets).ok_or(Error::Empty("cluster targets"))?;
        Ok(TargetCluster { targets, bbox })
    }

    pub fn n(&self) -> usize {
        self.targets.len()
    }

    pub fn centroid(&self) -> Point {
        centroid(&self.targets)
    }
}

fn centroid(pts: &[Point]) -> Point {
    let s = pts.iter().fold(Point::new(0.0, 0.0), |a, &p| a + p);
    s * (1.0 / pts.len() as f64)
}

/// Robots acting together as one vehicle of capacity `Σ Q_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fleet {
    pub robots: Vec<Robot>,
}

impl Fleet {
    pub fn new(robots: Vec<Robot>) -> Result<Self> {
        if robots.is_empty() {
            return Err(Error::Empty("fleet"));
        }
        for (i, r) in robots.iter().enumerate() {
            if !(r.radius_um > 0.0) || !(r.speed_um_s > 0.0) {
                return Err(Error::InvalidParameter(format!("robot {} needs positive radius and speed", r.id)));
            }
            if robots[..i].iter().any(|o| o.priority == r.priority) {
                return Err(Error::InvalidParameter(format!("duplicate robot priority {}", r.priority)));
            }
            if robots[..i].iter().any(|o| o.id == r.id) {
                return Err(Error::InvalidParameter(format!("duplicate robot id {}", r.id)));
            }
        }
        Ok(Fleet { robots })
    }

    /// Combined capacity `Q_s`.
    pub fn capacity(&self) -> usize {
        self.robots.iter().map(|r| r.capacity).sum()
    }

    pub fn m(&self) -> usize {
        self.robots.len()
    }

    pub fn max_radius(&self) -> f64 {
        self.robots.iter().map(|r| r.radius_um).fold(0.0, f64::max)
    }
}

fn fits(pts: &[Point], wa: (f64, f64), padding: f64) -> bool {
    match Rect::bounding(pts) {
        Some(b) => b.width() + padding <= wa.0 && b.height() + padding <= wa.1,
        None => true,
    }
}

/// Lloyd's k-means with k-means++ seeding. Returns a label per point;
/// labels are compacted so every label in `0..k'` is used.
pub fn kmeans(points: &[Point], k: usize, seed: u64) -> Vec<usize> {
    let n = points.len();
    if n == 0 || k == 0 {
        return vec![0; n];
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = vec![points[rng.random_range(0..n)]];
    let mut d2: Vec<f64> = points.iter().map(|p| p.dist_sq(centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        if total <= 0.0 {
            break;
        }
        let mut u = rng.random::<f64>() * total;
        let mut pick = n - 1;
        for (i, &w) in d2.iter().enumerate() {
            if u < w {
                pick = i;
                break;
            }
            u -= w;
        }
        let c = points[pick];
        centers.push(c);
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(p.dist_sq(c));
        }
    }
    let nearest = |p: &Point, centers: &[Point]| -> usize {
        let mut best = (f64::INFINITY, 0);
        for (j, c) in centers.iter().enumerate() {
            let d = p.dist_sq(*c);
            if d < best.0 {
                best = (d, j);
            }
        }
        best.1
    };
    let mut labels: Vec<usize> = points.iter().map(|p| nearest(p, &centers)).collect();
    for _ in 0..KMEANS_MAX_ITER {
        let k = centers.len();
        let mut sums = vec![(Point::new(0.0, 0.0), 0usize); k];
        for (p, &l) in points.iter().zip(&labels) {
            sums[l].0 = sums[l].0 + *p;
            sums[l].1 += 1;
        }
        for j in 0..k {
            if sums[j].1 > 0 {
                centers[j] = sums[j].0 * (1.0 / sums[j].1 as f64);
            } else {
                // Re-seed an empty cluster at the point worst served.
                let far = (0..n)
                    .max_by(|&a, &b| {
                        points[a].dist_sq(centers[labels[a]]).total_cmp(&points[b].dist_sq(centers[labels[b]])).then(b.cmp(&a))
                    })
                    .expect("non-empty");
                centers[j] = points[far];
                labels[far] = j;
            }
        }
        let next: Vec<usize> = points.iter().map(|p| nearest(p, &centers)).collect();
        if next == labels {
            break;
        }
        labels = next;
    }
    let mut remap = vec![usize::MAX; centers.len()];
    let mut used = 0;
    for l in labels.iter_mut() {
        if remap[*l] == usize::MAX {
            remap[*l] = used;
            used += 1;
        }
        *l = remap[*l];
    }
    labels
}

fn groups(points: &[Point], labels: &[usize]) -> Vec<Vec<Point>> {
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let mut out = vec![Vec::new(); k];
    for (p, &l) in points.iter().zip(labels) {
        out[l].push(*p);
    }
    out
}

fn bisect(points: Vec<Point>, q_s: usize, seed: u64, out: &mut Vec<Vec<Point>>) {
    if points.len() <= q_s {
        out.push(points);
        return;
    }
    let mut parts = groups(&points, &kmeans(&points, 2, seed));
    if parts.len() < 2 {
        // Coincident points: split by index.
        let mut a = parts.pop().expect("one group");
        let b = a.split_off(a.len() / 2);
        parts = vec![a, b];
    }
    for p in parts {
        bisect(p, q_s, seed, out);
    }
}

/// Groups targets so that each group fits a `wa` window once its bounding
/// box is padded by `padding` (one robot diameter), then splits groups
/// recursively until each holds at most `q_s` targets.
pub fn cluster_targets(targets: &[Point], wa: (f64, f64), q_s: usize, padding: f64, seed: u64) -> Result<Vec<TargetCluster>> {
    if q_s == 0 {
        return Err(Error::InvalidParameter("combined capacity must be at least 1".into()));
    }
    if !(padding >= 0.0) || padding > wa.0 || padding > wa.1 {
        return Err(Error::InvalidParameter("cluster padding exceeds working area".into()));
    }
    if targets.is_empty() {
        return Ok(Vec::new());
    }
    let mut k = 1;
    let coarse = loop {
        let g = groups(targets, &kmeans(targets, k, seed));
        // Once k reaches the number of distinct points every group is a
        // single location, so the loop terminates.
        if g.iter().all(|c| fits(c, wa, padding)) || k >= targets.len() {
            break g;
        }
        k += 1;
    };
    let mut out = Vec::new();
    for c in coarse {
        bisect(c, q_s, seed, &mut out);
    }
    out.into_iter().map(TargetCluster::new).collect()
}

/// A stop on the combined vehicle's route.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stop {
    Depot(usize),
    Cluster(usize),
}

/// Depot-to-depot tour over all clusters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Route {
    pub stops: Vec<Stop>,
    pub total_length: f64,
}

impl Route {
    /// Cluster indices in visiting order.
    pub fn cluster_order(&self) -> Vec<usize> {
        self.stops.iter().filter_map(|s| if let Stop::Cluster(c) = s { Some(*c) } else { None }).collect()
    }

    /// Cluster indices grouped by the depot visits that separate them.
    pub fn trips(&self) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        let mut cur = Vec::new();
        for s in &self.stops {
            match s {
                Stop::Cluster(c) => cur.push(*c),
                Stop::Depot(_) => {
                    if !cur.is_empty() {
                        out.push(std::mem::take(&mut cur));
                    }
                }
            }
        }
        if !cur.is_empty() {
            out.push(cur);
        }
        out
    }
}

/// Routing instance: stop locations, demands and depots.
struct Instance<'a> {
    pos: Vec<Point>,
    demand: Vec<usize>,
    depots: &'a [Point],
    q: usize,
}

impl Instance<'_> {
    /// Nearest depot to `p` and its distance.
    fn depot_to(&self, p: Point) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for (i, d) in self.depots.iter().enumerate() {
            let x = d.dist(p);
            if x < best.1 {
                best = (i, x);
            }
        }
        best
    }

    /// Best depot on the way from `a` to `b`.
    fn depot_between(&self, a: Point, b: Point) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for (i, d) in self.depots.iter().enumerate() {
            let x = a.dist(*d) + d.dist(b);
            if x < best.1 {
                best = (i, x);
            }
        }
        best
    }

    /// Optimal depot insertion for a fixed visiting order. Returns the
    /// length and, per gap `i` (before stop `order[i]`), the depot visited or
    /// `None` to continue directly.
    fn split(&self, order: &[usize]) -> (f64, Vec<Option<usize>>) {
        let n = order.len();
        if n == 0 {
            return (0.0, Vec::new());
        }
        let p = |i: usize| self.pos[order[i]];
        // best[j]: cost of serving order[..j] with a depot visit right
        // after stop j-1 (excluding that depot leg).
        let mut best = vec![f64::INFINITY; n + 1];
        let mut from = vec![0usize; n + 1];
        best[0] = 0.0;
        for i in 0..n {
            if !best[i].is_finite() {
                continue;
            }
            let entry = if i == 0 { self.depot_to(p(0)).1 } else { self.depot_between(p(i - 1), p(i)).1 };
            let mut load = 0;
            let mut len = entry;
            for j in i..n {
                load += self.demand[order[j]];
                if load > self.q && j > i {
                    break;
                }
                if j > i {
                    len += p(j - 1).dist(p(j));
                }
                let c = best[i] + len;
                if c < best[j + 1] {
                    best[j + 1] = c;
                    from[j + 1] = i;
                }
            }
        }
        let total = best[n] + self.depot_to(p(n - 1)).1;
        let mut gaps = vec![None; n];
        let mut j = n;
        while j > 0 {
            let i = from[j];
            gaps[i] = Some(if i == 0 { self.depot_to(p(0)).0 } else { self.depot_between(p(i - 1), p(i)).0 });
            j = i;
        }
        (total, gaps)
    }

    fn cost(&self, order: &[usize]) -> f64 {
        self.split(order).0
    }

    fn route(&self, order: &[usize]) -> Route {
        let (total, gaps) = self.split(order);
        let mut stops = Vec::new();
        for (i, &c) in order.iter().enumerate() {
            if let Some(d) = gaps[i] {
                stops.push(Stop::Depot(d));
            }
            stops.push(Stop::Cluster(c));
        }
        if let Some(&last) = order.last() {
            stops.push(Stop::Depot(self.depot_to(self.pos[last]).0));
        }
        Route { stops, total_length: total }
    }

    /// Clarke–Wright savings against the nearest depot, trips concatenated
    /// by the angle of their first stop around the first depot.
    fn savings_order(&self) -> Vec<usize> {
        let n = self.pos.len();
        let d0: Vec<f64> = self.pos.iter().map(|&p| self.depot_to(p).1).collect();
        let mut sav = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                sav.push((d0[i] + d0[j] - self.pos[i].dist(self.pos[j]), i, j));
            }
        }
        sav.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut trip_of: Vec<usize> = (0..n).collect();
        let mut trips: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
        let mut load: Vec<usize> = self.demand.clone();
        for (s, i, j) in sav {
            if s <= 0.0 {
                break;
            }
            let (ti, tj) = (trip_of[i], trip_of[j]);
            if ti == tj || load[ti] + load[tj] > self.q {
                continue;
            }
            let (a, b) = (&trips[ti], &trips[tj]);
            let i_end = *a.last().expect("trip") == i;
            let i_start = a[0] == i;
            let j_end = *b.last().expect("trip") == j;
            let j_start = b[0] == j;
            let merged: Vec<usize> = if i_end && j_start {
                a.iter().chain(b).copied().collect()
            } else if j_end && i_start {
                b.iter().chain(a).copied().collect()
            } else if i_end && j_end {
                a.iter().chain(b.iter().rev()).copied().collect()
            } else if i_start && j_start {
                a.iter().rev().chain(b).copied().collect()
            } else {
                continue;
            };
            for &c in &merged {
                trip_of[c] = ti;
            }
            load[ti] += load[tj];
            load[tj] = 0;
            trips[ti] = merged;
            trips[tj].clear();
        }
        let o = self.depots[0];
        let mut live: Vec<&Vec<usize>> = trips.iter().filter(|t| !t.is_empty()).collect();
        let angle = |t: &Vec<usize>| {
            let c = centroid(&t.iter().map(|&i| self.pos[i]).collect::<Vec<_>>()) - o;
            c.y.atan2(c.x)
        };
        live.sort_by(|a, b| angle(a).total_cmp(&angle(b)).then(a[0].cmp(&b[0])));
        live.into_iter().flatten().copied().collect()
    }

    /// Greedy baseline: always drive to the nearest unvisited cluster,
    /// returning to the nearest depot when the next one would overflow.
    fn nearest_neighbor(&self) -> (Vec<usize>, f64) {
        let n = self.pos.len();
        let mut left: Vec<usize> = (0..n).collect();
        let mut here = self.depots[0];
        let mut at_depot = true;
        let mut load = 0;
        let mut len = 0.0;
        let mut order = Vec::new();
        while !left.is_empty() {
            let k = (0..left.len())
                .min_by(|&a, &b| here.dist(self.pos[left[a]]).total_cmp(&here.dist(self.pos[left[b]])))
                .expect("non-empty");
            let c = left[k];
            if !at_depot && load + self.demand[c] > self.q {
                let (d, x) = self.depot_to(here);
                len += x;
                here = self.depots[d];
                at_depot = true;
                load = 0;
                continue;
            }
            left.remove(k);
            len += here.dist(self.pos[c]);
            here = self.pos[c];
            at_depot = false;
            load += self.demand[c];
            order.push(c);
        }
        len += self.depot_to(here).1;
        (order, len)
    }

    /// First-improvement 2-opt and relocate until neither improves.
    fn local_search(&self, mut order: Vec<usize>) -> (Vec<usize>, f64) {
        let n = order.len();
        let mut cost = self.cost(&order);
        loop {
            let mut improved = false;
            for i in 0..n {
                for j in i + 1..n {
                    order[i..=j].reverse();
                    let c = self.cost(&order);
                    if c < cost - 1e-9 {
                        cost = c;
                        improved = true;
                    } else {
                        order[i..=j].reverse();
                    }
                }
            }
            for i in 0..n {
                for j in 0..n {
                    if i == j {
                        continue;
                    }
                    let mut cand = order.clone();
                    let x = cand.remove(i);
                    cand.insert(j, x);
                    let c = self.cost(&cand);
                    if c < cost - 1e-9 {
                        cost = c;
                        order = cand;
                        improved = true;
                    }
                }
            }
            if !improved {
                return (order, cost);
            }
        }
    }
}

/// Routes the combined vehicle over all clusters (visited at their
/// centroids), returning to a depot whenever the next cluster would exceed
/// `q_s` collected targets.
pub fn solve_cvrp(clusters: &[TargetCluster], depots: &[Point], q_s: usize) -> Result<Route> {
    if depots.is_empty() {
        return Err(Error::NoDepot);
    }
    if let Some(c) = clusters.iter().find(|c| c.n() > q_s) {
        return Err(Error::InvalidParameter(format!("cluster of {} targets exceeds capacity {q_s}", c.n())));
    }
    if clusters.is_empty() {
        return Ok(Route { stops: vec![Stop::Depot(0)], total_length: 0.0 });
    }
    let inst = Instance { pos: clusters.iter().map(|c| c.centroid()).collect(), demand: clusters.iter().map(|c| c.n()).collect(), depots, q: q_s };
    let (order, cost) = inst.local_search(inst.savings_order());
    let (nn_order, nn_len) = inst.nearest_neighbor();
    let order = if nn_len < cost - 1e-9 { inst.local_search(nn_order).0 } else { order };
    Ok(inst.route(&order))
}

/// Length of `order` with optimal depot insertions; exposed for checks.
pub fn route_length_for_order(clusters: &[TargetCluster], depots: &[Point], q_s: usize, order: &[usize]) -> f64 {
    let inst = Instance { pos: clusters.iter().map(|c| c.centroid()).collect(), demand: clusters.iter().map(|c| c.n()).collect(), depots, q: q_s };
    inst.cost(order)
}

/// Goal for one robot on one journey.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub robot: usize,
    pub goal: Point,
    /// Index into the cluster targets, `None` for an idle parking goal.
    pub target: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub assignments: Vec<Assignment>,
    /// Targets left for a later trip.
    pub leftover: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AssignParams {
    /// Minimum distance between idle goals; defaults to two robot diameters.
    pub idle_separation_um: Option<f64>,
    pub max_attempts: usize,
}

impl Default for AssignParams {
    fn default() -> Self {
        AssignParams { idle_separation_um: None, max_attempts: 10_000 }
    }
}

/// Greedy global matching: repeatedly pairs the closest free robot and
/// unassigned target (ties by robot priority, then target index). Returns
/// the target index per robot (in fleet order) and the unmatched targets.
pub fn match_targets(cluster: &TargetCluster, fleet: &Fleet) -> (Vec<Option<usize>>, Vec<usize>) {
    let robots = &fleet.robots;
    let mut pairs = Vec::new();
    for (ri, r) in robots.iter().enumerate() {
        for (ti, t) in cluster.targets.iter().enumerate() {
            pairs.push((r.center.dist(*t), r.priority, ri, ti));
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.3.cmp(&b.3)));
    let mut matched: Vec<Option<usize>> = vec![None; robots.len()];
    let mut taken = vec![false; cluster.n()];
    for (_, _, ri, ti) in pairs {
        if matched[ri].is_none() && !taken[ti] {
            matched[ri] = Some(ti);
            taken[ti] = true;
        }
    }
    let leftover = (0..cluster.n()).filter(|&t| !taken[t]).collect();
    (matched, leftover)
}

/// Pairs robots with the globally closest remaining target, one target
/// per robot per journey; robots left without a target get parking goals
/// by Poisson-disk dart throwing over free cells of the window.
pub fn assign_robots<R: Rng + ?Sized>(
    cluster: &TargetCluster,
    fleet: &Fleet,
    env: &Environment,
    free: &FreeSpaceMask,
    window: &WorkingArea,
    params: &AssignParams,
    rng: &mut R,
) -> Result<Allocation> {
    let robots = &fleet.robots;
    let (matched, leftover) = match_targets(cluster, fleet);
    let mut robot_goal: Vec<Option<(Point, Option<usize>)>> = matched.iter().map(|m| m.map(|ti| (cluster.targets[ti], Some(ti)))).collect();

    let idle: Vec<usize> = (0..robots.len()).filter(|&i| robot_goal[i].is_none()).collect();
    if !idle.is_empty() {
        let rmax = fleet.max_radius();
        let sep = params.idle_separation_um.unwrap_or(4.0 * rmax);
        let rect = window.rect();
        let (i0, j0) = env.cell_of(Point::new(rect.x0, rect.y0));
        let (i1, j1) = env.cell_of(Point::new(rect.x1, rect.y1));
        let mut cells = Vec::new();
        for j in j0..=j1 {
            for i in i0..=i1 {
                let p = env.cell_center(i, j);
                if *free.mask.get(i, j) && rect.contains_disk(p, rmax) {
                    cells.push(p);
                }
            }
        }
        let targets: Vec<Point> = robot_goal.iter().flatten().map(|g| g.0).collect();
        let mut placed: Vec<Point> = Vec::new();
        let mut attempts = 0;
        while placed.len() < idle.len() {
            if cells.is_empty() || attempts >= params.max_attempts {
                return Err(Error::NoIdleParking);
            }
            attempts += 1;
            let p = cells[rng.random_range(0..cells.len())];
            if placed.iter().all(|q| q.dist(p) >= sep) && targets.iter().all(|q| q.dist(p) >= 2.0 * rmax) {
                placed.push(p);
            }
        }
        for (&ri, p) in idle.iter().zip(placed) {
            robot_goal[ri] = Some((p, None));
        }
    }
    let assignments = robots
        .iter()
        .zip(robot_goal)
        .map(|(r, g)| {
            let (goal, target) = g.expect("every robot has a goal");
            Assignment { robot: r.id, goal, target }
        })
        .collect();
    Ok(Allocation { assignments, leftover })
}

/// `stop,kind,index,x_um,y_um,n_targets` per route stop.
pub fn write_route_csv<W: Write>(route: &Route, clusters: &[TargetCluster], depots: &[Point], mut w: W) -> Result<()> {
    writeln!(w, "stop,kind,index,x_um,y_um,n_targets")?;
    for (k, s) in route.stops.iter().enumerate() {
        match *s {
            Stop::Depot(d) => writeln!(w, "{k},depot,{d},{},{},0", depots[d].x, depots[d].y)?,
            Stop::Cluster(c) => {
                let p = clusters[c].centroid();
                writeln!(w, "{k},cluster,{c},{},{},{}", p.x, p.y, clusters[c].n())?
            }
        }
    }
    Ok(())
}

/// `stop,robot,goal_x_um,goal_y_um,target` per assignment; idle goals have
/// an empty target field.
pub fn write_assignments_csv<W: Write>(rows: &[(usize, Assignment)], mut w: W) -> Result<()> {
    writeln!(w, "stop,robot,goal_x_um,goal_y_um,target")?;
    for (stop, a) in rows {
        let t = a.target.map(|t| t.to_string()).unwrap_or_default();
        writeln!(w, "{stop},{},{},{},{t}", a.robot, a.goal.x, a.goal.y)?;
    }
    Ok(())
}
