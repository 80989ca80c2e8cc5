//! Small planar geometry kit shared by every module.

use serde::{Deserialize, Serialize};
use std::ops::{Add, Mul, Sub};

/// A point or vector in the plane. Units depend on context (μm or px).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn dot(self, o: Point) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn dist(self, o: Point) -> f64 {
        (self - o).norm()
    }

    pub fn dist_sq(self, o: Point) -> f64 {
        (self - o).norm_sq()
    }

    pub fn lerp(self, o: Point, t: f64) -> Point {
        self + (o - self) * t
    }
}

impl Add for Point {
    type Output = Point;
    fn add(self, o: Point) -> Point {
        Point::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Point {
    type Output = Point;
    fn sub(self, o: Point) -> Point {
        Point::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Point {
    type Output = Point;
    fn mul(self, s: f64) -> Point {
        Point::new(self.x * s, self.y * s)
    }
}

/// Axis-aligned rectangle `[x0, x1] × [y0, y1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Rect { x0, y0, x1, y1 }
    }

    pub fn from_origin(origin: Point, width: f64, height: f64) -> Self {
        Rect::new(origin.x, origin.y, origin.x + width, origin.y + height)
    }

    /// Bounding box of a non-empty point set.
    pub fn bounding(points: &[Point]) -> Option<Rect> {
        let first = points.first()?;
        let mut r = Rect::new(first.x, first.y, first.x, first.y);
        for p in &points[1..] {
            r.x0 = r.x0.min(p.x);
            r.y0 = r.y0.min(p.y);
            r.x1 = r.x1.max(p.x);
            r.y1 = r.y1.max(p.y);
        }
        Some(r)
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn center(&self) -> Point {
        Point::new(0.5 * (self.x0 + self.x1), 0.5 * (self.y0 + self.y1))
    }

    pub fn contains(&self, p: Point) -> bool {
        p.x >= self.x0 && p.x <= self.x1 && p.y >= self.y0 && p.y <= self.y1
    }

    /// True when the closed disk of radius `r` around `p` lies inside.
    pub fn contains_disk(&self, p: Point, r: f64) -> bool {
        p.x - r >= self.x0 && p.x + r <= self.x1 && p.y - r >= self.y0 && p.y + r <= self.y1
    }

    pub fn inflate(&self, d: f64) -> Rect {
        Rect::new(self.x0 - d, self.y0 - d, self.x1 + d, self.y1 + d)
    }

    pub fn intersect(&self, o: &Rect) -> Rect {
        Rect::new(
            self.x0.max(o.x0),
            self.y0.max(o.y0),
            self.x1.min(o.x1),
            self.y1.min(o.y1),
        )
    }
}

/// Parameter in `[0, 1]` of the point on segment `ab` closest to `p`.
pub fn closest_param(a: Point, b: Point, p: Point) -> f64 {
    let ab = b - a;
    let len_sq = ab.norm_sq();
    if len_sq == 0.0 {
        return 0.0;
    }
    ((p - a).dot(ab) / len_sq).clamp(0.0, 1.0)
}

/// Squared distance from `p` to the closed segment `ab`.
pub fn point_segment_dist_sq(a: Point, b: Point, p: Point) -> f64 {
    let t = closest_param(a, b, p);
    a.lerp(b, t).dist_sq(p)
}

/// Andrew's monotone chain. Returns the hull counter-clockwise without the
/// closing point; collinear points are dropped.
pub fn convex_hull(points: &[Point]) -> Vec<Point> {
    let mut pts: Vec<Point> = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: Point, a: Point, b: Point| (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
    let mut hull: Vec<Point> = Vec::with_capacity(2 * pts.len());
    for &p in &pts {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    let lower = hull.len() + 1;
    for &p in pts.iter().rev().skip(1) {
        while hull.len() >= lower && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();
    hull
}

/// Shoelace area of a simple polygon (absolute value).
pub fn polygon_area(poly: &[Point]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut s = 0.0;
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        s += a.x * b.y - b.x * a.y;
    }
    0.5 * s.abs()
}

/// A circle, used for minimum enclosing circles and detections.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Circle {
    pub center: Point,
    pub radius: f64,
}

impl Circle {
    fn contains(&self, p: Point) -> bool {
        p.dist(self.center) <= self.radius * (1.0 + 1e-12) + 1e-9
    }

    fn from_two(a: Point, b: Point) -> Circle {
        let c = a.lerp(b, 0.5);
        Circle { center: c, radius: c.dist(a) }
    }

    fn from_three(a: Point, b: Point, c: Point) -> Option<Circle> {
        let d = 2.0 * (a.x * (b.y - c.y) + b.x * (c.y - a.y) + c.x * (a.y - b.y));
        if d.abs() < 1e-12 {
            return None;
        }
        let (a2, b2, c2) = (a.norm_sq(), b.norm_sq(), c.norm_sq());
        let ux = (a2 * (b.y - c.y) + b2 * (c.y - a.y) + c2 * (a.y - b.y)) / d;
        let uy = (a2 * (c.x - b.x) + b2 * (a.x - c.x) + c2 * (b.x - a.x)) / d;
        let center = Point::new(ux, uy);
        Some(Circle { center, radius: center.dist(a) })
    }
}

/// Minimum enclosing circle by Welzl's randomized incremental algorithm.
///
/// The shuffle uses a fixed seed so the result is deterministic.
pub fn min_enclosing_circle(points: &[Point]) -> Option<Circle> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    if points.is_empty() {
        return None;
    }
    let mut pts = points.to_vec();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x5eed_c1c1e);
    pts.shuffle(&mut rng);

    let mut c = Circle { center: pts[0], radius: 0.0 };
    for i in 1..pts.len() {
        if c.contains(pts[i]) {
            continue;
        }
        c = Circle { center: pts[i], radius: 0.0 };
        for j in 0..i {
            if c.contains(pts[j]) {
                continue;
            }
            c = Circle::from_two(pts[i], pts[j]);
            for k in 0..j {
                if c.contains(pts[k]) {
                    continue;
                }
                c = Circle::from_three(pts[i], pts[j], pts[k])
                    .unwrap_or_else(|| farthest_pair_circle(pts[i], pts[j], pts[k]));
            }
        }
    }
    Some(c)
}

fn farthest_pair_circle(a: Point, b: Point, c: Point) -> Circle {
    let cands = [Circle::from_two(a, b), Circle::from_two(a, c), Circle::from_two(b, c)];
    cands
        .into_iter()
        .max_by(|x, y| x.radius.total_cmp(&y.radius))
        .unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hull_of_square_with_interior() {
        let pts = vec![
            Point::new(0.0, 0.0),
            Point::new(1.0, 0.0),
            Point::new(1.0, 1.0),
            Point::new(0.0, 1.0),
            Point::new(0.5, 0.5),
            Point::new(0.5, 0.0),
        ];
        let h = convex_hull(&pts);
        assert_eq!(h.len(), 4);
        assert!((polygon_area(&h) - 1.0).abs() < 1e-12);
    }

    fn brute_mec(points: &[Point]) -> f64 {
        // Smallest circle through some pair or triple that contains everything.
        let mut best = f64::INFINITY;
        let n = points.len();
        let all_in = |c: &Circle| points.iter().all(|p| c.contains(*p));
        if n == 1 {
            return 0.0;
        }
        for i in 0..n {
            for j in i + 1..n {
                let c = Circle::from_two(points[i], points[j]);
                if all_in(&c) {
                    best = best.min(c.radius);
                }
                for k in j + 1..n {
                    if let Some(c) = Circle::from_three(points[i], points[j], points[k]) {
                        if all_in(&c) {
                            best = best.min(c.radius);
                        }
                    }
                }
            }
        }
        best
    }

    #[test]
    fn welzl_matches_brute_force() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let n = rng.random_range(1..12);
            let pts: Vec<Point> = (0..n)
                .map(|_| Point::new(rng.random_range(0..32) as f64, rng.random_range(0..32) as f64))
                .collect();
            let c = min_enclosing_circle(&pts).unwrap();
            assert!(pts.iter().all(|p| c.contains(*p)));
            assert!((c.radius - brute_mec(&pts)).abs() < 1e-6);
        }
    }

    #[test]
    fn segment_distance() {
        let a = Point::new(0.0, 0.0);
        let b = Point::new(10.0, 0.0);
        assert_eq!(point_segment_dist_sq(a, b, Point::new(5.0, 3.0)), 9.0);
        assert_eq!(point_segment_dist_sq(a, b, Point::new(-3.0, 4.0)), 25.0);
        assert_eq!(point_segment_dist_sq(a, a, Point::new(3.0, 4.0)), 25.0);
    }
}
