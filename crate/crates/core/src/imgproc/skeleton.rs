//! Zhang–Suen thinning and skeleton branch analysis.

use crate::grid::{squared_edt, Grid, Mask};

// Neighbor ring P2..P9, clockwise from north.
const RING: [(i64, i64); 8] = [(0, -1), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1)];

#[inline]
fn px(m: &Mask, x: i64, y: i64) -> bool {
    matches!(m.get_i(x, y), Some(true))
}

fn ring_values(m: &Mask, x: i64, y: i64) -> [bool; 8] {
    let mut v = [false; 8];
    for (k, (dx, dy)) in RING.iter().enumerate() {
        v[k] = px(m, x + dx, y + dy);
    }
    v
}

/// Number of 0→1 transitions around the 8-neighborhood.
fn crossing_number(v: &[bool; 8]) -> usize {
    (0..8).filter(|&k| !v[k] && v[(k + 1) % 8]).count()
}

/// Zhang–Suen iterative thinning. Pixels outside the image are background.
pub fn thin(mask: &Mask) -> Mask {
    let mut m = mask.clone();
    let (w, h) = (m.width as i64, m.height as i64);
    let mut to_clear = Vec::new();
    loop {
        let mut changed = false;
        for step in 0..2 {
            to_clear.clear();
            for y in 0..h {
                for x in 0..w {
                    if !px(&m, x, y) {
                        continue;
                    }
                    let v = ring_values(&m, x, y);
                    let b = v.iter().filter(|&&b| b).count();
                    if !(2..=6).contains(&b) || crossing_number(&v) != 1 {
                        continue;
                    }
                    let (p2, p4, p6, p8) = (v[0], v[2], v[4], v[6]);
                    let ok = if step == 0 {
                        !(p2 && p4 && p6) && !(p4 && p6 && p8)
                    } else {
                        !(p2 && p4 && p8) && !(p2 && p6 && p8)
                    };
                    if ok {
                        to_clear.push((x as usize, y as usize));
                    }
                }
            }
            for &(x, y) in &to_clear {
                m.set(x, y, false);
            }
            changed |= !to_clear.is_empty();
        }
        if !changed {
            return m;
        }
    }
}

/// A skeleton branch as an ordered pixel path.
#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub pixels: Vec<(usize, usize)>,
    pub length: f64,
}

fn is_endpoint(skel: &Mask, x: i64, y: i64) -> bool {
    let v = ring_values(skel, x, y);
    v.iter().any(|&b| b) && crossing_number(&v) == 1
}

fn is_junction(skel: &Mask, x: i64, y: i64) -> bool {
    crossing_number(&ring_values(skel, x, y)) >= 3
}

fn adjacent(a: (i64, i64), b: (i64, i64)) -> bool {
    (a.0 - b.0).abs() <= 1 && (a.1 - b.1).abs() <= 1 && a != b
}

/// Branches of a thinned skeleton: maximal paths from an endpoint to the
/// nearest junction or to another endpoint. Endpoint-to-endpoint paths are
/// reported once.
pub fn branches(skel: &Mask) -> Vec<Branch> {
    let endpoints: Vec<(i64, i64)> = skel
        .coords()
        .into_iter()
        .map(|(x, y)| (x as i64, y as i64))
        .filter(|&(x, y)| is_endpoint(skel, x, y))
        .collect();
    let mut out = Vec::new();
    for &start in &endpoints {
        let mut path = vec![start];
        let mut visited = std::collections::HashSet::new();
        visited.insert(start);
        let mut prev: Option<(i64, i64)> = None;
        let mut cur = start;
        let mut reached_endpoint = None;
        loop {
            let nbrs: Vec<(i64, i64)> = RING
                .iter()
                .map(|(dx, dy)| (cur.0 + dx, cur.1 + dy))
                .filter(|&(x, y)| px(skel, x, y) && !visited.contains(&(x, y)))
                .collect();
            let preferred: Vec<(i64, i64)> = match prev {
                Some(p) => nbrs.iter().copied().filter(|&n| !adjacent(n, p)).collect(),
                None => nbrs.clone(),
            };
            let pool = if preferred.is_empty() { &nbrs } else { &preferred };
            let next = pool
                .iter()
                .copied()
                .min_by_key(|&(x, y)| ((x - cur.0).abs() + (y - cur.1).abs(), y, x));
            let Some(next) = next else { break };
            // Pixels beside the step are part of the same stroke.
            for n in &nbrs {
                visited.insert(*n);
            }
            prev = Some(cur);
            cur = next;
            path.push(cur);
            if is_junction(skel, cur.0, cur.1) {
                break;
            }
            if is_endpoint(skel, cur.0, cur.1) {
                reached_endpoint = Some(cur);
                break;
            }
        }
        if path.len() < 2 {
            continue;
        }
        if let Some(end) = reached_endpoint {
            if end < start {
                continue;
            }
        }
        let length = path
            .windows(2)
            .map(|s| (((s[0].0 - s[1].0).pow(2) + (s[0].1 - s[1].1).pow(2)) as f64).sqrt())
            .sum();
        out.push(Branch { pixels: path.into_iter().map(|(x, y)| (x as usize, y as usize)).collect(), length });
    }
    out
}

/// Distance from each foreground pixel center to the region boundary
/// (nearest background pixel center minus half a pixel). Outside the image
/// is background.
pub fn boundary_distance(mask: &Mask) -> Grid<f64> {
    let (w, h) = (mask.width, mask.height);
    let mut padded = Grid::new(w + 2, h + 2, true);
    for y in 0..h {
        for x in 0..w {
            padded.set(x + 1, y + 1, !*mask.get(x, y));
        }
    }
    let d2 = squared_edt(&padded);
    let mut out = Grid::new(w, h, 0.0);
    for y in 0..h {
        for x in 0..w {
            if *mask.get(x, y) {
                out.set(x, y, d2.get(x + 1, y + 1).sqrt() - 0.5);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rect_mask(w: usize, h: usize, x0: usize, y0: usize, x1: usize, y1: usize) -> Mask {
        let mut m = Grid::new(w, h, false);
        for y in y0..y1 {
            for x in x0..x1 {
                m.set(x, y, true);
            }
        }
        m
    }

    fn has_2x2_block(m: &Mask) -> bool {
        (0..m.height.saturating_sub(1)).any(|y| {
            (0..m.width.saturating_sub(1))
                .any(|x| *m.get(x, y) && *m.get(x + 1, y) && *m.get(x, y + 1) && *m.get(x + 1, y + 1))
        })
    }

    #[test]
    fn thinning_is_thin_subset_and_connected() {
        let shapes = [rect_mask(32, 20, 3, 4, 28, 12), rect_mask(20, 20, 2, 2, 18, 18)];
        for m in shapes {
            let s = thin(&m);
            assert!(s.count() > 0);
            assert_eq!(s.and_not(&m).count(), 0);
            assert!(!has_2x2_block(&s));
            let (_, comps) = crate::imgproc::connected_components(&s, true);
            assert_eq!(comps.len(), 1);
        }
    }

    #[test]
    fn line_has_one_branch_of_full_length() {
        let m = rect_mask(40, 5, 5, 2, 35, 3);
        let s = thin(&m);
        assert_eq!(s, m);
        let b = branches(&s);
        assert_eq!(b.len(), 1);
        assert!((b[0].length - 29.0).abs() < 1e-9);
    }

    #[test]
    fn cross_has_four_branches() {
        let mut m = Grid::new(21, 21, false);
        for i in 2..19 {
            m.set(i, 10, true);
            m.set(10, i, true);
        }
        let b = branches(&thin(&m));
        assert_eq!(b.len(), 4);
        for br in &b {
            assert!((br.length - 8.0).abs() <= 1.5, "{}", br.length);
        }
    }

    #[test]
    fn loop_has_no_branches() {
        let mut m = Grid::new(12, 12, false);
        for i in 2..10 {
            m.set(i, 2, true);
            m.set(i, 9, true);
            m.set(2, i, true);
            m.set(9, i, true);
        }
        let s = thin(&m);
        assert_eq!(branches(&s).len(), 0);
        assert_eq!(crate::imgproc::hole_count(&s), 1);
    }

    #[test]
    fn boundary_distance_of_line_is_half_pixel() {
        let m = rect_mask(10, 3, 1, 1, 9, 2);
        let d = boundary_distance(&m);
        assert!(m.coords().iter().all(|&(x, y)| (*d.get(x, y) - 0.5).abs() < 1e-12));
    }
}
