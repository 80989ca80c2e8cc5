//! Vision stack: microrobot and microsphere detection, debris labelling,
//! camera-to-projector calibration and detection scoring.
//!
//! Image coordinates put pixel `(x, y)`'s center at `(x + 0.5, y + 0.5)`.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{min_enclosing_circle, Point};
use crate::grid::{GrayImage, Grid, Mask};
use crate::imgproc::{
    boundary_distance, branches, canny, clahe, close, connected_components, dilate, fill_holes, gaussian_blur, hole_count,
    hysteresis_threshold, open, otsu_threshold, scharr_magnitude, thin, Component,
};
use crate::shapemodel::{moment_axes, solidity};

/// Detector parameters. Pixel-valued defaults suit robots of about 25 px
/// outer radius and spheres of about 10 px diameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectionParams {
    pub t_ar: f64,
    pub t_sl: f64,
    pub t_sh: f64,
    pub min_branches: usize,
    pub robot_min_area: usize,
    pub robot_max_area: usize,
    pub sphere_min_area: usize,
    pub sphere_max_area: usize,
    /// Longest skeleton (pixels) a sphere candidate may have.
    pub sphere_max_skeleton: usize,
    pub debris_min_area: usize,
    pub debris_max_area: usize,
    /// Hysteresis on the equalized, smoothed intensity (robot mode 1).
    pub intensity_low: f32,
    pub intensity_high: f32,
    /// Canny thresholds on the equalized image (robot mode 2).
    pub edge_low: f32,
    pub edge_high: f32,
    /// Hysteresis pair on the equalized gradient keeping sphere structures.
    pub sphere_low: f32,
    pub sphere_high: f32,
    /// Hysteresis pair on the equalized gradient keeping all structures.
    pub debris_low: f32,
    pub debris_high: f32,
    pub robot_sigma: f64,
    pub sphere_sigma: f64,
    pub open_radius: usize,
    pub close_radius: usize,
    pub dilate_radius: usize,
    pub edge_close_radius: usize,
    pub sphere_morph_radius: usize,
    pub clahe_clip: f64,
    pub clahe_tile: usize,
}

impl Default for DetectionParams {
    fn default() -> Self {
        DetectionParams {
            t_ar: 1.30,
            t_sl: 0.45,
            t_sh: 0.75,
            min_branches: 5,
            robot_min_area: 250,
            robot_max_area: 40_000,
            sphere_min_area: 12,
            sphere_max_area: 400,
            sphere_max_skeleton: 8,
            debris_min_area: 6,
            debris_max_area: 20_000,
            intensity_low: 0.58,
            intensity_high: 0.66,
            edge_low: 0.08,
            edge_high: 0.2,
            sphere_low: 0.09,
            sphere_high: 0.17,
            debris_low: 0.075,
            debris_high: 0.12,
            robot_sigma: 1.0,
            sphere_sigma: 0.7,
            open_radius: 1,
            close_radius: 3,
            dilate_radius: 1,
            edge_close_radius: 2,
            sphere_morph_radius: 1,
            clahe_clip: 2.0,
            clahe_tile: 64,
        }
    }
}

impl DetectionParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.into()));
        if !(self.t_sl < self.t_sh) {
            return bad("t_sl must be below t_sh");
        }
        for (lo, hi) in [
            (self.intensity_low, self.intensity_high),
            (self.edge_low, self.edge_high),
            (self.sphere_low, self.sphere_high),
            (self.debris_low, self.debris_high),
        ] {
            if !(lo < hi) {
                return bad("low thresholds must be below high thresholds");
            }
        }
        let radii = [self.open_radius, self.close_radius, self.dilate_radius, self.edge_close_radius, self.sphere_morph_radius];
        if radii.contains(&0) {
            return bad("morphology radii must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DetectionMode {
    Intensity,
    Edge,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotDetection {
    pub center: Point,
    pub radius: f64,
    /// Chamber axis in `[0, π)`.
    pub orientation: f64,
    pub mode: DetectionMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SphereDetection {
    pub center: Point,
    pub radius: f64,
}

fn pixel_points(px: &[(usize, usize)], off: (i64, i64)) -> Vec<Point> {
    px.iter().map(|&(x, y)| Point::new((x as i64 + off.0) as f64 + 0.5, (y as i64 + off.1) as f64 + 0.5)).collect()
}

fn mask_of(c: &Component, w: usize, h: usize) -> Mask {
    let mut m = Grid::new(w, h, false);
    for &(x, y) in &c.pixels {
        m.set(x, y, true);
    }
    m
}

/// Local window around a component: the window mask, the matching image
/// patch and the window's origin in image coordinates.
fn window(c: &Component, img: &GrayImage, pad: usize) -> (Mask, GrayImage, (usize, usize)) {
    let x0 = c.x0.saturating_sub(pad);
    let y0 = c.y0.saturating_sub(pad);
    let x1 = (c.x1 + pad + 1).min(img.width);
    let y1 = (c.y1 + pad + 1).min(img.height);
    let mut m = Grid::new(x1 - x0, y1 - y0, false);
    for &(x, y) in &c.pixels {
        m.set(x - x0, y - y0, true);
    }
    (m, img.crop(x0, y0, x1 - x0, y1 - y0), (x0, y0))
}

fn mean_over(img: &GrayImage, m: &Mask) -> Option<f64> {
    let (mut s, mut n) = (0.0, 0usize);
    for (v, &b) in img.data.iter().zip(&m.data) {
        if b {
            s += *v as f64;
            n += 1;
        }
    }
    (n > 0).then(|| s / n as f64)
}

/// The four robot constraints on a candidate silhouette (`mask` and
/// `patch` share a frame): aspect ratio, solidity band, skeleton branch
/// count and a center darker than the body.
pub fn robot_constraints(mask: &Mask, patch: &GrayImage, params: &DetectionParams) -> bool {
    let px = mask.coords();
    if px.is_empty() {
        return false;
    }
    let (major, minor, _) = moment_axes(&px);
    if !(major / minor < params.t_ar) {
        return false;
    }
    let s = solidity(&px);
    if !(params.t_sl < s && s < params.t_sh) {
        return false;
    }
    if branches(&thin(mask)).len() < params.min_branches {
        return false;
    }
    let Some(mec) = min_enclosing_circle(&pixel_points(&px, (0, 0))) else { return false };
    let inner = mec.radius * 0.25;
    // The center disk covers image pixels whether or not the silhouette
    // closes over the chamber.
    let mut center = Grid::new(mask.width, mask.height, false);
    for (x, y) in center.coords_where(|_| true) {
        if Point::new(x as f64 + 0.5, y as f64 + 0.5).dist(mec.center) <= inner {
            center.set(x, y, true);
        }
    }
    let body = mask.and_not(&center);
    match (mean_over(patch, &center), mean_over(patch, &body)) {
        (Some(c), Some(b)) => c < b,
        _ => false,
    }
}

/// Chamber axis: mean direction of the dark slot pixels just outside the
/// chamber, measured from the silhouette center.
fn robot_orientation(patch: &GrayImage, center: Point, radius: f64) -> f64 {
    let (w, h) = (patch.width, patch.height);
    let within = |x: usize, y: usize, r: f64| Point::new(x as f64 + 0.5, y as f64 + 0.5).dist(center) <= r;
    let vals: Vec<f32> = patch.coords_where(|_| true).into_iter().filter(|&(x, y)| within(x, y, radius)).map(|(x, y)| *patch.get(x, y)).collect();
    let t = otsu_threshold(&vals);
    let mut inverse = Grid::new(w, h, false);
    for (x, y) in patch.coords_where(|&v| v <= t) {
        if within(x, y, 0.6 * radius) {
            inverse.set(x, y, true);
        }
    }
    let (_, comps) = connected_components(&inverse, true);
    let Some(biggest) = comps.iter().max_by_key(|c| c.area()) else { return 0.0 };
    let region = mask_of(biggest, w, h);
    // The chamber is concentric with the body and its radius is the depth of
    // the dark region; dark pixels in a band just beyond it belong to the
    // slot. Farther out the slot opens into the gaps between teeth.
    let depth = boundary_distance(&region);
    let rc = biggest.pixels.iter().map(|&(x, y)| *depth.get(x, y)).fold(0.0, f64::max);
    let (cx, cy) = (center.x - 0.5, center.y - 0.5);
    let (mut sx, mut sy) = (0.0, 0.0);
    for &(x, y) in &biggest.pixels {
        let (dx, dy) = (x as f64 - cx, y as f64 - cy);
        let d = dx.hypot(dy);
        if d > rc + 2.0 && d <= 1.5 * rc {
            sx += dx;
            sy += dy;
        }
    }
    if sx != 0.0 || sy != 0.0 {
        return sy.atan2(sx).rem_euclid(std::f64::consts::PI);
    }
    let pts = &biggest.pixels;
    let n = pts.len() as f64;
    let (mx, my) = pts.iter().fold((0.0, 0.0), |(a, b), p| (a + p.0 as f64, b + p.1 as f64));
    let (mx, my) = (mx / n, my / n);
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for p in pts {
        let (dx, dy) = (p.0 as f64 - mx, p.1 as f64 - my);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    (0.5 * (2.0 * sxy).atan2(sxx - syy)).rem_euclid(std::f64::consts::PI)
}

/// Largest bright component near the candidate: the gear body without its
/// outline or edge noise, which gives a stable enclosing circle.
fn bright_body(mask: &Mask, patch: &GrayImage) -> Vec<(usize, usize)> {
    let near = dilate(mask, 3);
    let vals: Vec<f32> = patch.data.iter().zip(&near.data).filter(|(_, &b)| b).map(|(v, _)| *v).collect();
    let t = otsu_threshold(&vals);
    let bright = Grid::from_vec(patch.width, patch.height, patch.data.iter().zip(&near.data).map(|(v, &b)| b && *v > t).collect());
    let (_, comps) = connected_components(&bright, true);
    comps.into_iter().max_by_key(|c| c.area()).map(|c| c.pixels).unwrap_or_default()
}

fn robot_candidates(cand: &Mask, img: &GrayImage, params: &DetectionParams, mode: DetectionMode, out: &mut Vec<RobotDetection>) {
    let (_, comps) = connected_components(cand, true);
    for c in comps {
        if !(params.robot_min_area..=params.robot_max_area).contains(&c.area()) {
            continue;
        }
        let (m, patch, (x0, y0)) = window(&c, img, 2);
        if !robot_constraints(&m, &patch, params) {
            continue;
        }
        let body = bright_body(&m, &patch);
        let px = if body.is_empty() { pixel_points(&c.pixels, (-(x0 as i64), -(y0 as i64))) } else { pixel_points(&body, (0, 0)) };
        let mec = min_enclosing_circle(&px).expect("non-empty");
        let orientation = robot_orientation(&patch, mec.center, mec.radius);
        let center = Point::new(mec.center.x + x0 as f64, mec.center.y + y0 as f64);
        out.push(RobotDetection { center, radius: mec.radius, orientation, mode });
    }
}

/// Fills each component separately so nearby structures do not merge.
fn fill_each(mask: &Mask) -> Mask {
    let (_, comps) = connected_components(mask, true);
    let mut out = Grid::new(mask.width, mask.height, false);
    for c in comps {
        let (m, (ox, oy)) = c.to_mask(1);
        let f = fill_holes(&m);
        for (x, y) in f.coords() {
            let (gx, gy) = (x as i64 + ox, y as i64 + oy);
            if gx >= 0 && gy >= 0 && (gx as usize) < mask.width && (gy as usize) < mask.height {
                out.set(gx as usize, gy as usize, true);
            }
        }
    }
    out
}

fn drop_border_touching(mask: &Mask) -> Mask {
    let (_, comps) = connected_components(mask, true);
    let mut out = Grid::new(mask.width, mask.height, false);
    for c in comps.iter().filter(|c| !c.touches_border(mask.width, mask.height)) {
        for &(x, y) in &c.pixels {
            out.set(x, y, true);
        }
    }
    out
}

/// Robot candidates from the bright chamber structure (mode 1).
pub fn intensity_mode_candidates(img: &GrayImage, params: &DetectionParams) -> Mask {
    let eq = gaussian_blur(&clahe(img, params.clahe_tile, params.clahe_clip), params.robot_sigma);
    let bin = hysteresis_threshold(&eq, params.intensity_low, params.intensity_high);
    let bin = close(&open(&bin, params.open_radius), params.close_radius);
    let bin = crate::imgproc::filter_by_area(&bin, params.robot_min_area / 4, params.robot_max_area);
    dilate(&fill_each(&bin), params.dilate_radius)
}

/// Robot candidates from the outer silhouette edges (mode 2).
pub fn edge_mode_candidates(img: &GrayImage, params: &DetectionParams) -> Mask {
    let eq = clahe(img, params.clahe_tile, params.clahe_clip);
    let edges = canny(&eq, params.edge_low, params.edge_high);
    let closed = close(&edges, params.edge_close_radius);
    drop_border_touching(&fill_each(&closed))
}

/// Detects cogwheel microrobots with both modes, merging detections whose
/// centers are closer than the larger radius.
pub fn detect_microrobots(img: &GrayImage, params: &DetectionParams) -> Vec<RobotDetection> {
    let mut all = Vec::new();
    robot_candidates(&intensity_mode_candidates(img, params), img, params, DetectionMode::Intensity, &mut all);
    robot_candidates(&edge_mode_candidates(img, params), img, params, DetectionMode::Edge, &mut all);
    let mut out: Vec<RobotDetection> = Vec::new();
    for d in all {
        if !out.iter().any(|o| o.center.dist(d.center) < o.radius.max(d.radius)) {
            out.push(d);
        }
    }
    out
}

/// Equalized gradient magnitude shared by sphere and debris labelling.
fn gradient_map(img: &GrayImage, params: &DetectionParams) -> GrayImage {
    let g = scharr_magnitude(&gaussian_blur(img, params.sphere_sigma));
    clahe(&g.map(|v| v.clamp(0.0, 1.0)), params.clahe_tile, params.clahe_clip)
}

/// Otsu threshold for the dark class; re-split the lower class while it
/// covers most of the patch, so a mid-gray background is not lumped with
/// the dark ring.
fn dark_threshold(vals: &[f32]) -> f32 {
    let mut t = otsu_threshold(vals);
    for _ in 0..2 {
        let lower: Vec<f32> = vals.iter().copied().filter(|&v| v <= t).collect();
        if lower.len() * 2 <= vals.len() || lower.len() < 4 {
            break;
        }
        t = otsu_threshold(&lower);
    }
    t
}

/// Ring decomposition of a sphere candidate. Returns the filled sphere mask
/// in window coordinates when the ring constraints hold.
fn verify_ring(cand: &Mask, patch: &GrayImage) -> Option<Mask> {
    let smooth = gaussian_blur(patch, 0.5);
    let t = dark_threshold(&smooth.data);
    let dark = smooth.map(|&v| v <= t);
    // Dark structure overlapping the candidate.
    let (_, comps) = connected_components(&dark, true);
    let ring_comp = comps
        .iter()
        .filter(|c| c.pixels.iter().any(|&(x, y)| *cand.get(x, y)))
        .max_by_key(|c| c.area())?;
    let dark_m = mask_of(ring_comp, patch.width, patch.height);
    let filled = fill_holes(&dark_m);
    let outer = filled.not();
    let inside_vals: Vec<f32> =
        smooth.data.iter().zip(&filled.data).filter(|(_, &b)| b).map(|(v, _)| *v).collect();
    let t2 = otsu_threshold(&inside_vals);
    let center = Grid::from_vec(patch.width, patch.height, filled.data.iter().zip(&smooth.data).map(|(&f, &v)| f && v > t2).collect());
    let ring = filled.and_not(&center);
    if center.count() == 0 || outer.count() == 0 {
        return None;
    }
    let (_, ring_comps) = connected_components(&ring, true);
    if ring_comps.len() != 1 || hole_count(&ring) != 1 {
        return None;
    }
    let skel = thin(&ring);
    if connected_components(&skel, true).1.len() != 1 || !branches(&skel).is_empty() {
        return None;
    }
    let (mr, mo, mc) = (mean_over(patch, &ring)?, mean_over(patch, &outer)?, mean_over(patch, &center)?);
    (mr < mo && mr < mc).then_some(filled)
}

/// Detects ring-shaped microspheres (or cells with the same appearance).
pub fn detect_microspheres(img: &GrayImage, params: &DetectionParams) -> Vec<SphereDetection> {
    let grad = gradient_map(img, params);
    let high = hysteresis_threshold(&grad, params.sphere_low, params.sphere_high);
    let r = params.sphere_morph_radius;
    let bin = open(&fill_each(&close(&high, r)), r);
    let bin = crate::imgproc::filter_by_area(&bin, params.sphere_min_area, params.sphere_max_area);
    let (_, comps) = connected_components(&bin, true);
    let mut out = Vec::new();
    for c in comps {
        let (m, _) = c.to_mask(1);
        if thin(&m).count() > params.sphere_max_skeleton {
            continue;
        }
        let (wm, patch, (x0, y0)) = window(&c, img, 3);
        if let Some(filled) = verify_ring(&wm, &patch) {
            let pts = pixel_points(&filled.coords(), (x0 as i64, y0 as i64));
            if let Some(mec) = min_enclosing_circle(&pts) {
                out.push(SphereDetection { center: mec.center, radius: mec.radius.max(0.5) });
            }
        }
    }
    out
}

/// Debris mask: closed and filled low-threshold structures within the area
/// bounds, minus the disks of detected spheres.
pub fn label_debris(img: &GrayImage, spheres: &[SphereDetection], params: &DetectionParams) -> Mask {
    let grad = gradient_map(img, params);
    let low = hysteresis_threshold(&grad, params.debris_low, params.debris_high);
    let bin = fill_each(&close(&low, params.sphere_morph_radius));
    let mut bin = crate::imgproc::filter_by_area(&bin, params.debris_min_area, params.debris_max_area);
    // The gradient halo of a sphere extends a couple of pixels past its edge.
    for s in spheres {
        let r = s.radius + 2.0;
        let (x0, x1) = ((s.center.x - r).floor().max(0.0) as usize, ((s.center.x + r).ceil() as usize).min(bin.width));
        let (y0, y1) = ((s.center.y - r).floor().max(0.0) as usize, ((s.center.y + r).ceil() as usize).min(bin.height));
        for y in y0..y1 {
            for x in x0..x1 {
                if Point::new(x as f64 + 0.5, y as f64 + 0.5).dist(s.center) <= r {
                    bin.set(x, y, false);
                }
            }
        }
    }
    // Drop leftover halo fragments that lie entirely near one sphere.
    let (_, comps) = connected_components(&bin, true);
    for c in comps {
        let near = spheres.iter().any(|s| {
            c.pixels.iter().all(|&(x, y)| Point::new(x as f64 + 0.5, y as f64 + 0.5).dist(s.center) <= s.radius + 4.0)
        });
        if near || c.area() < params.debris_min_area {
            for &(x, y) in &c.pixels {
                bin.set(x, y, false);
            }
        }
    }
    bin
}

/// Precision, recall and F1 of a matching.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub true_positives: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Greedy nearest-first one-to-one matching within `match_radius`.
pub fn score_detections(predicted: &[Point], truth: &[Point], match_radius: f64) -> Score {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (i, p) in predicted.iter().enumerate() {
        for (j, t) in truth.iter().enumerate() {
            let d = p.dist(*t);
            if d <= match_radius {
                pairs.push((d, i, j));
            }
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used_p = vec![false; predicted.len()];
    let mut used_t = vec![false; truth.len()];
    let mut tp = 0;
    for (_, i, j) in pairs {
        if !used_p[i] && !used_t[j] {
            used_p[i] = true;
            used_t[j] = true;
            tp += 1;
        }
    }
    let ratio = |a: usize, b: usize, empty: f64| if b == 0 { empty } else { a as f64 / b as f64 };
    let both_empty = predicted.is_empty() && truth.is_empty();
    let precision = ratio(tp, predicted.len(), if both_empty { 1.0 } else { 0.0 });
    let recall = ratio(tp, truth.len(), if both_empty { 1.0 } else { 0.0 });
    let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
    Score { true_positives: tp, precision, recall, f1 }
}

/// Camera-to-projector map over a rectangular grid of control points.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationMap {
    pub rows: usize,
    pub cols: usize,
    /// Camera position of each control point, row-major.
    pub camera: Vec<Point>,
    /// Projector position of each control point, row-major.
    pub projector: Vec<Point>,
}

fn group_levels(values: &mut [f64]) -> Vec<f64> {
    values.sort_by(f64::total_cmp);
    let span = values.last().unwrap() - values.first().unwrap();
    let tol = 1e-6 * span.max(1.0);
    let mut levels: Vec<f64> = Vec::new();
    for &v in values.iter() {
        if levels.last().is_none_or(|&l| v - l > tol) {
            levels.push(v);
        }
    }
    levels
}

fn nearest_level(levels: &[f64], v: f64) -> usize {
    (0..levels.len()).min_by(|&a, &b| (levels[a] - v).abs().total_cmp(&(levels[b] - v).abs())).unwrap()
}

/// Assembles the control grid from (camera, projector) dot pairs. Dots are
/// associated with rows and columns by their projector coordinates.
pub fn build_calibration(obs: &[(Point, Point)]) -> Result<CalibrationMap> {
    if obs.is_empty() {
        return Err(Error::Empty("dot observations"));
    }
    let ys = group_levels(&mut obs.iter().map(|o| o.1.y).collect::<Vec<_>>());
    let xs = group_levels(&mut obs.iter().map(|o| o.1.x).collect::<Vec<_>>());
    let (rows, cols) = (ys.len(), xs.len());
    if rows < 3 || cols < 3 {
        return Err(Error::InvalidParameter(format!("calibration grid {rows}x{cols} is smaller than 3x3")));
    }
    let mut cam: Vec<Option<Point>> = vec![None; rows * cols];
    for &(c, p) in obs {
        let k = nearest_level(&ys, p.y) * cols + nearest_level(&xs, p.x);
        cam[k] = Some(c);
    }
    let mut camera = Vec::with_capacity(rows * cols);
    let mut projector = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            camera.push(cam[r * cols + c].ok_or(Error::MissingDot { row: r, col: c })?);
            projector.push(Point::new(xs[c], ys[r]));
        }
    }
    let map = CalibrationMap { rows, cols, camera, projector };
    map.check_monotone()?;
    Ok(map)
}

impl CalibrationMap {
    fn cam(&self, r: usize, c: usize) -> Point {
        self.camera[r * self.cols + c]
    }

    fn proj(&self, r: usize, c: usize) -> Point {
        self.projector[r * self.cols + c]
    }

    fn check_monotone(&self) -> Result<()> {
        for r in 0..self.rows {
            for c in 0..self.cols {
                if c + 1 < self.cols && self.cam(r, c + 1).x <= self.cam(r, c).x {
                    return Err(Error::InvalidParameter("camera columns are not monotone".into()));
                }
                if r + 1 < self.rows && self.cam(r + 1, c).y <= self.cam(r, c).y {
                    return Err(Error::InvalidParameter("camera rows are not monotone".into()));
                }
            }
        }
        Ok(())
    }

    /// Local coordinates of `p` in the quad of cell `(r, c)` by Newton
    /// iteration on the bilinear map.
    fn local(&self, r: usize, c: usize, p: Point) -> (f64, f64) {
        let (a, b, cc, d) = (self.cam(r, c), self.cam(r, c + 1), self.cam(r + 1, c), self.cam(r + 1, c + 1));
        let (mut u, mut v) = (0.5, 0.5);
        for _ in 0..30 {
            let q = a * ((1.0 - u) * (1.0 - v)) + b * (u * (1.0 - v)) + cc * ((1.0 - u) * v) + d * (u * v);
            let du = (b - a) * (1.0 - v) + (d - cc) * v;
            let dv = (cc - a) * (1.0 - u) + (d - b) * u;
            let e = p - q;
            let det = du.x * dv.y - du.y * dv.x;
            if det.abs() < 1e-300 {
                break;
            }
            let su = (e.x * dv.y - e.y * dv.x) / det;
            let sv = (du.x * e.y - du.y * e.x) / det;
            u += su;
            v += sv;
            if su.abs() + sv.abs() < 1e-15 {
                break;
            }
        }
        (u, v)
    }

    /// Projector coordinates of a camera point. Points outside the grid use
    /// the nearest border cell's bilinear map.
    pub fn map(&self, p: Point) -> Point {
        let mut best = (f64::INFINITY, 0, 0, 0.0, 0.0);
        for r in 0..self.rows - 1 {
            for c in 0..self.cols - 1 {
                let (u, v) = self.local(r, c, p);
                let out = (-u).max(u - 1.0).max(0.0) + (-v).max(v - 1.0).max(0.0);
                if out < best.0 {
                    best = (out, r, c, u, v);
                }
                if out == 0.0 {
                    break;
                }
            }
            if best.0 == 0.0 {
                break;
            }
        }
        let (_, r, c, u, v) = best;
        let (p0, p1, p2) = (self.proj(r, c), self.proj(r, c + 1), self.proj(r + 1, c));
        Point::new(p0.x + u * (p1.x - p0.x), p0.y + v * (p2.y - p0.y))
    }

    /// Text table: `OETCAL 1 <rows> <cols>` then one
    /// `row col cam_x cam_y proj_x proj_y` line per control point.
    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "OETCAL 1 {} {}", self.rows, self.cols)?;
        for r in 0..self.rows {
            for c in 0..self.cols {
                let (a, b) = (self.cam(r, c), self.proj(r, c));
                writeln!(w, "{r} {c} {} {} {} {}", a.x, a.y, b.x, b.y)?;
            }
        }
        Ok(())
    }

    pub fn read<R: BufRead>(r: R) -> Result<CalibrationMap> {
        let mut lines = r.lines();
        let header = lines.next().ok_or(Error::Format("empty calibration file".into()))??;
        let h: Vec<&str> = header.split_whitespace().collect();
        if h.len() != 4 || h[0] != "OETCAL" || h[1] != "1" {
            return Err(Error::Format("bad calibration header".into()));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| Error::Format(format!("bad number {s}")));
        let mut obs = Vec::new();
        for line in lines {
            let line = line?;
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.is_empty() {
                continue;
            }
            if f.len() != 6 {
                return Err(Error::Format("calibration rows need 6 fields".into()));
            }
            obs.push((Point::new(num(f[2])?, num(f[3])?), Point::new(num(f[4])?, num(f[5])?)));
        }
        build_calibration(&obs)
    }
}

/// Dot pattern images for projector calibration: dots on even rows, odd
/// rows, even columns and odd columns of a `spacing` grid, as 8-bit images.
pub fn calibration_patterns(width: usize, height: usize, spacing: usize, radius: f64) -> Vec<Grid<u8>> {
    let rows = height / spacing;
    let cols = width / spacing;
    let mut out = Vec::new();
    for (by_row, parity) in [(true, 0), (true, 1), (false, 0), (false, 1)] {
        let mut img = Grid::new(width, height, 0u8);
        for r in 0..rows {
            for c in 0..cols {
                if (if by_row { r } else { c }) % 2 != parity {
                    continue;
                }
                let cx = (c as f64 + 0.5) * spacing as f64;
                let cy = (r as f64 + 0.5) * spacing as f64;
                let rr = radius.ceil() as i64;
                for dy in -rr..=rr {
                    for dx in -rr..=rr {
                        let (x, y) = (cx.floor() as i64 + dx, cy.floor() as i64 + dy);
                        if x >= 0 && y >= 0 && (x as usize) < width && (y as usize) < height
                            && Point::new(x as f64 + 0.5, y as f64 + 0.5).dist(Point::new(cx, cy)) <= radius
                        {
                            img.set(x as usize, y as usize, 255);
                        }
                    }
                }
            }
        }
        out.push(img);
    }
    out
}

/// Writes detections as CSV with columns
/// `kind,x_px,y_px,radius_px,orientation_rad`.
pub fn write_detections_csv<W: Write>(robots: &[RobotDetection], spheres: &[SphereDetection], mut w: W) -> Result<()> {
    writeln!(w, "kind,x_px,y_px,radius_px,orientation_rad")?;
    for r in robots {
        writeln!(w, "robot,{:.4},{:.4},{:.4},{:.6}", r.center.x, r.center.y, r.radius, r.orientation)?;
    }
    for s in spheres {
        writeln!(w, "sphere,{:.4},{:.4},{:.4},", s.center.x, s.center.y, s.radius)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envgen::{draw_sprite, RenderParams, SpritePose};
    use rand::{Rng, SeedableRng};

    fn blank(w: usize, h: usize) -> GrayImage {
        Grid::new(w, h, 0.5)
    }

    fn noisy(img: &mut GrayImage, sigma: f32, seed: u64) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        for v in img.data.iter_mut() {
            let n: f64 = rng.sample(rand_distr::StandardNormal);
            *v = (*v + sigma * n as f32).clamp(0.0, 1.0);
        }
    }

    fn sphere_image(cx: f64, cy: f64, r: f64) -> GrayImage {
        let mut img = blank(48, 48);
        for y in 0..48 {
            for x in 0..48 {
                let d = Point::new(x as f64 + 0.5, y as f64 + 0.5).dist(Point::new(cx, cy));
                if d <= r {
                    img.set(x, y, if d > r - 2.0 { 0.25 } else { 0.8 });
                }
            }
        }
        img
    }

    #[test]
    fn blank_images_yield_nothing() {
        let img = blank(96, 96);
        let p = DetectionParams::default();
        assert!(detect_microrobots(&img, &p).is_empty());
        assert!(detect_microspheres(&img, &p).is_empty());
        assert_eq!(label_debris(&img, &[], &p).count(), 0);
    }

    #[test]
    fn rendered_sphere_is_found() {
        let mut img = sphere_image(20.3, 25.7, 5.5);
        noisy(&mut img, 0.02, 1);
        let d = detect_microspheres(&img, &DetectionParams::default());
        assert_eq!(d.len(), 1, "{d:?}");
        assert!(d[0].center.dist(Point::new(20.3, 25.7)) <= 1.5);
    }

    #[test]
    fn dark_disk_is_not_a_sphere() {
        let mut img = blank(48, 48);
        for y in 0..48 {
            for x in 0..48 {
                if Point::new(x as f64 + 0.5, y as f64 + 0.5).dist(Point::new(24.0, 24.0)) <= 5.5 {
                    img.set(x, y, 0.25);
                }
            }
        }
        noisy(&mut img, 0.02, 2);
        assert!(detect_microspheres(&img, &DetectionParams::default()).is_empty());
    }

    #[test]
    fn debris_mask_excludes_spheres() {
        let mut img = sphere_image(14.0, 14.0, 5.5);
        for y in 28..34 {
            for x in 20..44 {
                img.set(x, y, 0.3);
            }
        }
        for y in 34..42 {
            for x in 36..42 {
                img.set(x, y, 0.3);
            }
        }
        noisy(&mut img, 0.02, 3);
        let p = DetectionParams::default();
        let spheres = detect_microspheres(&img, &p);
        assert_eq!(spheres.len(), 1);
        let debris = label_debris(&img, &spheres, &p);
        assert!(debris.count() > 100);
        for (x, y) in debris.coords() {
            assert!(Point::new(x as f64 + 0.5, y as f64 + 0.5).dist(spheres[0].center) > spheres[0].radius);
            assert!(y >= 24, "debris pixel at sphere location ({x},{y})");
        }
    }

    fn robot_image(pose: SpritePose, seed: u64) -> GrayImage {
        let mut img = blank(96, 96);
        draw_sprite(&mut img, &pose, &RenderParams::default());
        noisy(&mut img, 0.02, seed);
        img
    }

    fn angle_err_mod(a: f64, b: f64, m: f64) -> f64 {
        let d = (a - b).rem_euclid(m);
        d.min(m - d)
    }

    #[test]
    fn rendered_robot_pose_is_recovered() {
        let p = DetectionParams::default();
        for (k, &(x, y, th)) in [(48.0, 47.0, 0.3), (45.5, 50.2, 1.2), (50.0, 44.0, 2.5)].iter().enumerate() {
            let pose = SpritePose { center: Point::new(x, y), orientation: th, radius: 25.0 };
            let d = detect_microrobots(&robot_image(pose, k as u64), &p);
            assert_eq!(d.len(), 1, "{d:?}");
            assert!(d[0].center.dist(pose.center) <= 2.0, "{:?}", d[0]);
            let err = angle_err_mod(d[0].orientation, th, std::f64::consts::PI / 3.0);
            assert!(err.to_degrees() <= 5.0, "{} vs {th}", d[0].orientation);
        }
    }

    #[test]
    fn elongated_blob_fails_aspect_ratio() {
        let mut img = blank(96, 96);
        let mut mask = Grid::new(96, 96, false);
        for y in 0..96 {
            for x in 0..96 {
                let (dx, dy) = ((x as f64 - 48.0) / 30.0, (y as f64 - 48.0) / 15.0);
                if dx * dx + dy * dy <= 1.0 {
                    mask.set(x, y, true);
                    img.set(x, y, 0.85);
                }
            }
        }
        assert!(!robot_constraints(&mask, &img, &DetectionParams::default()));
        noisy(&mut img, 0.02, 4);
        assert!(detect_microrobots(&img, &DetectionParams::default()).is_empty());
    }

    #[test]
    fn constraint_predicate_rejects_each_violation() {
        let p = DetectionParams::default();
        let pose = SpritePose { center: Point::new(48.0, 48.0), orientation: 0.0, radius: 25.0 };
        let mut img = blank(96, 96);
        draw_sprite(&mut img, &pose, &RenderParams::default());
        let silhouette = img.map(|&v| v != 0.5);
        let filled = fill_holes(&close(&silhouette, 3));
        assert!(robot_constraints(&filled, &img, &p));
        // Bright center breaks the empty-center check.
        let mut bright = img.clone();
        for (x, y) in filled.coords() {
            bright.set(x, y, 0.85);
        }
        assert!(!robot_constraints(&filled, &bright, &p));
        // Solid disk: solidity too high, too few branches.
        let disk = Grid::from_vec(96, 96, (0..96 * 96).map(|i| Point::new((i % 96) as f64, (i / 96) as f64).dist(Point::new(48.0, 48.0)) <= 20.0).collect());
        assert!(!robot_constraints(&disk, &img, &p));
        let strict = DetectionParams { min_branches: 50, ..p.clone() };
        assert!(!robot_constraints(&filled, &img, &strict));
    }

    #[test]
    fn detections_shift_with_image() {
        let p = DetectionParams::default();
        let mut img = sphere_image(20.0, 22.0, 5.5);
        noisy(&mut img, 0.02, 5);
        let a = detect_microspheres(&img, &p);
        let (dx, dy) = (5usize, 3usize);
        let mut shifted = blank(48, 48);
        for y in dy..48 {
            for x in dx..48 {
                shifted.set(x, y, *img.get(x - dx, y - dy));
            }
        }
        let b = detect_microspheres(&shifted, &p);
        assert_eq!(a.len(), b.len());
        for (s, t) in a.iter().zip(&b) {
            assert!((t.center.x - s.center.x - dx as f64).abs() < 1e-9);
            assert!((t.center.y - s.center.y - dy as f64).abs() < 1e-9);
        }
    }

    #[test]
    fn scoring_examples() {
        let t = vec![Point::new(0.0, 0.0), Point::new(10.0, 0.0), Point::new(20.0, 0.0), Point::new(30.0, 0.0)];
        assert_eq!(score_detections(&t, &t, 1.0).f1, 1.0);
        assert_eq!(score_detections(&[], &t, 1.0).f1, 0.0);
        let s = score_detections(&t[..2], &t, 1.0);
        assert!((s.f1 - 2.0 / 3.0).abs() < 1e-12);
    }

    fn grid_obs(n: usize, f: impl Fn(Point) -> Point) -> Vec<(Point, Point)> {
        let mut v = Vec::new();
        for r in 0..n {
            for c in 0..n {
                let p = Point::new(c as f64 * 100.0 + 20.0, r as f64 * 80.0 + 10.0);
                v.push((f(p), p));
            }
        }
        v
    }

    #[test]
    fn identity_calibration() {
        let map = build_calibration(&grid_obs(5, |p| p)).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            let p = Point::new(rng.random_range(20.0..420.0), rng.random_range(10.0..330.0));
            assert!(map.map(p).dist(p) <= 1e-9);
        }
    }

    #[test]
    fn bilinear_calibration_is_exact() {
        // Camera = bilinear image of projector coordinates.
        let f = |p: Point| Point::new(3.0 + 1.1 * p.x + 0.05 * p.y + 1e-4 * p.x * p.y, -7.0 + 0.02 * p.x + 0.9 * p.y + 2e-4 * p.x * p.y);
        let obs = grid_obs(5, f);
        let map = build_calibration(&obs).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let q = Point::new(rng.random_range(20.0..420.0), rng.random_range(10.0..330.0));
            assert!(map.map(f(q)).dist(q) <= 1e-9);
        }
    }

    #[test]
    fn calibration_errors() {
        let obs = grid_obs(2, |p| p);
        assert!(build_calibration(&obs).is_err());
        let mut obs = grid_obs(4, |p| p);
        obs.remove(6);
        assert!(matches!(build_calibration(&obs), Err(Error::MissingDot { row: 1, col: 2 })));
    }

    #[test]
    fn calibration_table_round_trip() {
        let map = build_calibration(&grid_obs(4, |p| p * 1.5)).unwrap();
        let mut buf = Vec::new();
        map.write(&mut buf).unwrap();
        assert_eq!(CalibrationMap::read(&buf[..]).unwrap(), map);
    }

    #[test]
    fn patterns_alternate() {
        let pats = calibration_patterns(64, 64, 16, 2.0);
        assert_eq!(pats.len(), 4);
        let lit = |g: &Grid<u8>| g.data.iter().filter(|&&v| v > 0).count();
        assert_eq!(lit(&pats[0]), lit(&pats[1]));
        assert!(pats[0].data.iter().zip(&pats[1].data).all(|(a, b)| !(*a > 0 && *b > 0)));
    }
}
