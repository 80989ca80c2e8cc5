//! Synthetic environments: region synthesis from sampled shapes, density
//! controlled placement and grayscale rendering.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Point, Rect};
use crate::grid::{squared_edt, GrayImage, Grid, Mask};
use crate::imgproc::boundary_distance;
use crate::scene::{Environment, LabelClass};
use crate::shapemodel::{GenerativeModel, ShapeVector};

/// How region counts are derived.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DensityMode {
    Uniform,
    Variable { tile_um: f64 },
}

/// Default tile edge for variable-density generation (a quarter field of view).
pub const DEFAULT_TILE_UM: f64 = 825.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationParams {
    pub concentration: f64,
    pub mode: DensityMode,
    pub density_scale: f64,
    pub width_um: f64,
    pub height_um: f64,
    pub resolution_um: f64,
    pub seed: u64,
    /// Rectangle kept empty and labelled as the robot start zone.
    pub start_zone: Option<Rect>,
    /// Replaces the computed number of cell regions.
    pub cell_count_override: Option<usize>,
    pub max_attempts: usize,
}

impl Default for GenerationParams {
    fn default() -> Self {
        GenerationParams {
            concentration: 1.0,
            mode: DensityMode::Uniform,
            density_scale: 1.0,
            width_um: 10_000.0,
            height_um: 10_000.0,
            resolution_um: 5.0,
            seed: 0,
            start_zone: None,
            cell_count_override: None,
            max_attempts: 1000,
        }
    }
}

impl GenerationParams {
    /// Central square start zone of the given edge.
    pub fn centered_zone(&self, edge_um: f64) -> Rect {
        let (cx, cy) = (self.width_um / 2.0, self.height_um / 2.0);
        Rect::new(cx - edge_um / 2.0, cy - edge_um / 2.0, cx + edge_um / 2.0, cy + edge_um / 2.0)
    }

    fn validate(&self, model: &GenerativeModel) -> Result<()> {
        let [lo, hi] = model.count_curve.valid_range;
        if !(lo..=hi).contains(&self.concentration) {
            return Err(Error::InvalidParameter(format!("concentration {} outside [{lo}, {hi}]", self.concentration)));
        }
        if !(self.density_scale >= 0.0) {
            return Err(Error::InvalidParameter("density_scale must be non-negative".into()));
        }
        if let DensityMode::Variable { tile_um } = self.mode {
            let divides = |e: f64| tile_um > 0.0 && ((e / tile_um) - (e / tile_um).round()).abs() < 1e-9;
            if !divides(self.width_um) || !divides(self.height_um) {
                return Err(Error::InvalidParameter("tile size must divide the output extent".into()));
            }
        }
        if self.max_attempts == 0 {
            return Err(Error::InvalidParameter("max_attempts must be positive".into()));
        }
        Ok(())
    }
}

/// A generated region positioned on the label grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionInstance {
    pub class: LabelClass,
    pub mask: Mask,
    /// Grid cell of the stamp's (0, 0) pixel.
    pub anchor: (usize, usize),
}

impl RegionInstance {
    /// Center of mass in grid cell coordinates (pixel centers at +0.5).
    pub fn centroid_px(&self) -> Point {
        let px = self.mask.coords();
        let n = px.len() as f64;
        let (sx, sy) = px.iter().fold((0.0, 0.0), |(a, b), &(x, y)| (a + x as f64, b + y as f64));
        Point::new(self.anchor.0 as f64 + sx / n + 0.5, self.anchor.1 as f64 + sy / n + 0.5)
    }
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor().max(0.0) as usize
}

fn catmull_rom(p: &[Point], samples_per_seg: usize) -> Vec<Point> {
    // Ends are duplicated so the curve passes through every control point.
    let mut ext = Vec::with_capacity(p.len() + 2);
    ext.push(p[0]);
    ext.extend_from_slice(p);
    ext.push(p[p.len() - 1]);
    let mut out = Vec::new();
    for s in 0..p.len() - 1 {
        let (p0, p1, p2, p3) = (ext[s], ext[s + 1], ext[s + 2], ext[s + 3]);
        for k in 0..samples_per_seg {
            let t = k as f64 / samples_per_seg as f64;
            let (t2, t3) = (t * t, t * t * t);
            let f = |a: f64, b: f64, c: f64, d: f64| {
                0.5 * (2.0 * b + (-a + c) * t + (2.0 * a - 5.0 * b + 4.0 * c - d) * t2 + (-a + 3.0 * b - 3.0 * c + d) * t3)
            };
            out.push(Point::new(f(p0.x, p1.x, p2.x, p3.x), f(p0.y, p1.y, p2.y, p3.y)));
        }
    }
    out.push(p[p.len() - 1]);
    out
}

fn arc_length(path: &[Point]) -> f64 {
    path.windows(2).map(|w| w[0].dist(w[1])).sum()
}

/// Resamples a polyline at (at most) `step` spacing.
fn densify(path: &[Point], step: f64) -> Vec<Point> {
    let mut out = vec![path[0]];
    for w in path.windows(2) {
        let n = (w[0].dist(w[1]) / step).ceil().max(1.0) as usize;
        for k in 1..=n {
            out.push(w[0].lerp(w[1], k as f64 / n as f64));
        }
    }
    out
}

fn random_unit_disk<R: Rng + ?Sized>(rng: &mut R) -> Point {
    loop {
        let p = Point::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        if p.norm_sq() <= 1.0 {
            return p;
        }
    }
}

/// Spline of arc length `length` starting near `start` in direction `theta`.
/// Control-point jitter shrinks as `solidity` approaches 1.
fn random_spline<R: Rng + ?Sized>(start: Point, theta: f64, length: f64, solidity: f64, rng: &mut R) -> Vec<Point> {
    if length <= 0.0 {
        return vec![start];
    }
    let dir = Point::new(theta.cos(), theta.sin());
    let jitter = (1.0 - solidity).clamp(0.0, 1.0) * length / 2.0;
    let ctrl: Vec<Point> = (0..4)
        .map(|k| {
            let mut p = dir * (length * k as f64 / 3.0);
            if k > 0 {
                p = p + random_unit_disk(rng) * jitter;
            }
            start + p
        })
        .collect();
    let mut curve = catmull_rom(&ctrl, 16);
    let len = arc_length(&curve);
    if len > 1e-9 {
        let s = length / len;
        for p in curve.iter_mut() {
            *p = start + (*p - start) * s;
        }
    }
    curve
}

/// Marks the pixels of an ellipse centered at `c` (pixel units, pixel
/// centers at +0.5) and always the pixel containing `c`.
fn stamp_ellipse(m: &mut Mask, c: Point, a: f64, b: f64, angle: f64) {
    let (ca, sa) = (angle.cos(), angle.sin());
    let r = a.max(b).ceil() as i64 + 1;
    let (cx, cy) = (c.x.floor() as i64, c.y.floor() as i64);
    if cx >= 0 && cy >= 0 && (cx as usize) < m.width && (cy as usize) < m.height {
        m.set(cx as usize, cy as usize, true);
    }
    if a <= 0.0 || b <= 0.0 {
        return;
    }
    for y in cy - r..=cy + r {
        for x in cx - r..=cx + r {
            if x < 0 || y < 0 || x as usize >= m.width || y as usize >= m.height {
                continue;
            }
            let (dx, dy) = (x as f64 + 0.5 - c.x, y as f64 + 0.5 - c.y);
            let (u, v) = (dx * ca + dy * sa, -dx * sa + dy * ca);
            if (u / a).powi(2) + (v / b).powi(2) <= 1.0 {
                m.set(x as usize, y as usize, true);
            }
        }
    }
}

/// Crops a mask to the bounding box of its foreground.
fn crop_to_content(m: &Mask) -> Mask {
    let px = m.coords();
    let x0 = px.iter().map(|p| p.0).min().unwrap_or(0);
    let x1 = px.iter().map(|p| p.0).max().unwrap_or(0);
    let y0 = px.iter().map(|p| p.1).min().unwrap_or(0);
    let y1 = px.iter().map(|p| p.1).max().unwrap_or(0);
    m.crop(x0, y0, x1 - x0 + 1, y1 - y0 + 1)
}

/// Synthesizes a region mask from a shape given in pixel units.
///
/// A backbone spline of arc length `fiber_length` is drawn, with
/// `round((n_branches - 1) / 2)` secondary splines attached at random
/// backbone points so that the skeleton branch count is preserved. Ellipses
/// sized by `thickness` are stamped along all splines and the region is then
/// dilated, ring by ring, until its area equals `area`; the last ring is
/// only partially added, nearest-to-spline pixels first. Stamps larger than
/// the target are thinned, and paths longer than the target area are
/// shortened, down to a single pixel.
pub fn generate_region<R: Rng + ?Sized>(shape: &ShapeVector, rng: &mut R) -> Mask {
    let target = shape.area.round().max(1.0) as usize;
    let len = shape.fiber_length.max(0.0);
    let theta = rng.random_range(0.0..std::f64::consts::TAU);
    let backbone = random_spline(Point::new(0.0, 0.0), theta, len, shape.solidity, rng);
    let mut splines = vec![backbone.clone()];
    let secondary = ((shape.n_branches as f64 - 1.0) / 2.0).round().max(0.0) as usize;
    for _ in 0..secondary {
        let at = backbone[rng.random_range(backbone.len() / 5..=backbone.len() * 4 / 5).min(backbone.len() - 1)];
        let l = len * rng.random_range(0.25..0.5);
        let t = rng.random_range(0.0..std::f64::consts::TAU);
        splines.push(random_spline(at, t, l, shape.solidity, rng));
    }
    let pts: Vec<Point> = splines.iter().flat_map(|s| densify(s, 0.5)).collect();
    let half = shape.thickness.max(0.0) / 2.0;
    let ellipses: Vec<(f64, f64)> = pts.iter().map(|_| (rng.random_range(0.6..1.0), rng.random_range(0.0..std::f64::consts::PI))).collect();

    let bb = Rect::bounding(&pts).expect("non-empty spline");
    let margin = (half + (target as f64).sqrt() + 3.0).ceil();
    let w = (bb.width() + 2.0 * margin).ceil() as usize + 1;
    let h = (bb.height() + 2.0 * margin).ceil() as usize + 1;
    let off = Point::new(margin - bb.x0, margin - bb.y0);

    // Splines start at the origin, so scaling point coordinates shortens
    // every spline proportionally.
    let stamp = |len_scale: f64, thick_scale: f64| {
        let mut m = Grid::new(w, h, false);
        for (p, (ratio, ang)) in pts.iter().zip(&ellipses) {
            let a = half * thick_scale;
            stamp_ellipse(&mut m, *p * len_scale + off, a, a * ratio, *ang);
        }
        m
    };
    let bisect = |f: &dyn Fn(f64) -> Mask| {
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..12 {
            let mid = 0.5 * (lo + hi);
            if f(mid).count() > target {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        lo
    };
    let mut len_scale = 1.0;
    let mut mask = stamp(1.0, 1.0);
    if mask.count() > target {
        if stamp(1.0, 0.0).count() > target {
            // Even a one-pixel path is too large: shorten the splines.
            len_scale = bisect(&|s| stamp(s, 0.0));
            mask = stamp(len_scale, 0.0);
        } else {
            mask = stamp(1.0, bisect(&|t| stamp(1.0, t)));
        }
    }
    let path = stamp(len_scale, 0.0);
    let dist = squared_edt(&path);
    let mut area = mask.count();
    while area < target {
        let mut ring: Vec<(usize, usize)> = Vec::new();
        for y in 0..h {
            for x in 0..w {
                if *mask.get(x, y) {
                    continue;
                }
                let touches = [(0i64, -1i64), (1, 0), (0, 1), (-1, 0)]
                    .iter()
                    .any(|&(dx, dy)| matches!(mask.get_i(x as i64 + dx, y as i64 + dy), Some(true)));
                if touches {
                    ring.push((x, y));
                }
            }
        }
        if ring.is_empty() {
            break;
        }
        if area + ring.len() > target {
            let mut keyed: Vec<(f64, u32, (usize, usize))> =
                ring.into_iter().map(|p| (*dist.get(p.0, p.1), rng.random::<u32>(), p)).collect();
            keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            ring = keyed.into_iter().take(target - area).map(|k| k.2).collect();
        }
        for &(x, y) in &ring {
            mask.set(x, y, true);
        }
        area += ring.len();
    }
    crop_to_content(&mask)
}

/// Per-class region counts, cell class first.
pub fn region_counts(model: &GenerativeModel, params: &GenerationParams) -> Result<Vec<(Rect, Vec<usize>)>> {
    params.validate(model)?;
    let dm = model.nearest_dist_model(params.concentration);
    let bounds = Rect::new(0.0, 0.0, params.width_um, params.height_um);
    let area_factor = |r: &Rect| r.width() * r.height() / model.train_image_area_um2;
    match params.mode {
        DensityMode::Uniform => {
            let means: Vec<f64> = dm.counts.mean.iter().map(|m| m.max(0.0)).collect();
            let sum: f64 = means.iter().sum();
            let density = if sum > 0.0 { model.count_curve.eval(params.concentration) / sum } else { 0.0 };
            let f = density * params.density_scale * area_factor(&bounds);
            Ok(vec![(bounds, means.iter().map(|m| round_half_up(m * f)).collect())])
        }
        DensityMode::Variable { tile_um } => {
            let mut rng = ChaCha8Rng::seed_from_u64(params.seed ^ 0x7469_6c65);
            let sampler = dm.counts.sampler();
            let nx = (params.width_um / tile_um).round() as usize;
            let ny = (params.height_um / tile_um).round() as usize;
            let classes = dm.counts.dim();
            // Fractional counts carry over between tiles so that small
            // per-tile expectations are not rounded away.
            let mut carry = vec![0.0; classes];
            let mut out = Vec::with_capacity(nx * ny);
            for ty in 0..ny {
                for tx in 0..nx {
                    let r = Rect::new(
                        tx as f64 * tile_um,
                        ty as f64 * tile_um,
                        (tx + 1) as f64 * tile_um,
                        (ty + 1) as f64 * tile_um,
                    );
                    let draw = sampler.sample(&mut rng);
                    let f = params.density_scale * area_factor(&r);
                    let counts = (0..classes)
                        .map(|k| {
                            let want = draw[k].max(0.0) * f + carry[k];
                            let n = round_half_up(want);
                            carry[k] = want - n as f64;
                            n
                        })
                        .collect();
                    out.push((r, counts));
                }
            }
            Ok(out)
        }
    }
}

/// Environment plus the placed regions.
#[derive(Debug, Clone)]
pub struct GeneratedScene {
    pub env: Environment,
    pub regions: Vec<RegionInstance>,
}

fn class_of(k: usize) -> LabelClass {
    if k == 0 {
        LabelClass::Cell
    } else {
        LabelClass::Debris(k as u8)
    }
}

/// Generates the label grid and keeps the placed regions.
pub fn generate_scene(model: &GenerativeModel, params: &GenerationParams) -> Result<GeneratedScene> {
    let tiles = region_counts(model, params)?;
    let mut env = Environment::empty(params.width_um, params.height_um, params.resolution_um)?;
    env.rng_seed = params.seed;
    env.debris_classes = model.debris_classes();
    if let Some(z) = &params.start_zone {
        env.fill_rect(z, LabelClass::RobotStartZone);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut jobs: Vec<(LabelClass, Rect)> = Vec::new();
    for (rect, counts) in &tiles {
        for (k, &n) in counts.iter().enumerate() {
            let n = match (k, params.cell_count_override) {
                (0, Some(o)) if tiles.len() == 1 => o,
                _ => n,
            };
            jobs.extend(std::iter::repeat_n((class_of(k), *rect), n));
        }
    }
    if let (Some(o), true) = (params.cell_count_override, tiles.len() > 1) {
        jobs.retain(|j| j.0 != LabelClass::Cell);
        let all = Rect::new(0.0, 0.0, params.width_um, params.height_um);
        jobs.extend(std::iter::repeat_n((LabelClass::Cell, all), o));
    }
    jobs.shuffle(&mut rng);
    let samplers: Vec<_> = (0..=model.debris_classes())
        .map(|k| model.shape_sampler(class_of(k)))
        .collect::<Result<_>>()?;
    let res = params.resolution_um;
    let (nx, ny) = (env.nx(), env.ny());
    let mut regions = Vec::with_capacity(jobs.len());
    let mut unplaced = 0usize;
    for (class, rect) in jobs {
        let k = match class {
            LabelClass::Cell => 0,
            LabelClass::Debris(k) => k as usize,
            _ => unreachable!(),
        };
        let shape = ShapeVector::from_array_clamped(samplers[k].sample(&mut rng).as_slice()).scaled(1.0 / res);
        let mask = generate_region(&shape, &mut rng);
        let px = mask.coords();
        let (w, h) = (mask.width, mask.height);
        if w > nx || h > ny {
            unplaced += 1;
            continue;
        }
        // Anchor range: the region's top-left cell lies inside the tile and
        // the whole stamp inside the grid.
        let ax0 = ((rect.x0 / res).floor() as usize).min(nx - w);
        let ay0 = ((rect.y0 / res).floor() as usize).min(ny - h);
        let ax1 = ((rect.x1 / res).ceil() as usize).min(nx - w + 1).max(ax0 + 1);
        let ay1 = ((rect.y1 / res).ceil() as usize).min(ny - h + 1).max(ay0 + 1);
        let mut placed = false;
        for _ in 0..params.max_attempts {
            let ax = rng.random_range(ax0..ax1);
            let ay = rng.random_range(ay0..ay1);
            if px.iter().all(|&(x, y)| *env.labels.get(ax + x, ay + y) == LabelClass::Free) {
                for &(x, y) in &px {
                    env.labels.set(ax + x, ay + y, class);
                }
                regions.push(RegionInstance { class, mask: mask.clone(), anchor: (ax, ay) });
                placed = true;
                break;
            }
        }
        if !placed {
            unplaced += 1;
        }
    }
    if unplaced > 0 {
        return Err(Error::TooDense { placed: regions.len(), unplaced });
    }
    Ok(GeneratedScene { env, regions })
}

pub fn generate_environment(model: &GenerativeModel, params: &GenerationParams) -> Result<Environment> {
    generate_scene(model, params).map(|s| s.env)
}

/// Cogwheel robot sprite pose in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpritePose {
    pub center: Point,
    pub orientation: f64,
    /// Outer (tooth tip) radius in pixels.
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderParams {
    pub background: f32,
    pub ring: f32,
    pub core: f32,
    pub debris: f32,
    /// Amplitude of per-pixel debris texture.
    pub debris_texture: f32,
    pub noise_sigma: f32,
    /// Dark ring width of cells, in pixels.
    pub ring_width_px: f64,
    pub robot_body: f32,
    pub robot_edge: f32,
    pub sprites: Vec<SpritePose>,
}

impl Default for RenderParams {
    fn default() -> Self {
        RenderParams {
            background: 0.5,
            ring: 0.25,
            core: 0.8,
            debris: 0.3,
            debris_texture: 0.08,
            noise_sigma: 0.02,
            ring_width_px: 1.5,
            robot_body: 0.85,
            robot_edge: 0.2,
            sprites: Vec::new(),
        }
    }
}

/// Fraction of the outer radius covered by the gear body.
pub const SPRITE_BODY: f64 = 0.62;
/// Chamber radius as a fraction of the outer radius.
pub const SPRITE_CHAMBER: f64 = 0.36;

/// Stamps a cogwheel: a bright gear (body disk plus six teeth) with a dark
/// outline and a semi-enclosed chamber that opens along `orientation`.
pub fn draw_sprite(img: &mut GrayImage, pose: &SpritePose, params: &RenderParams) {
    let r = pose.radius;
    let inside = |dx: f64, dy: f64| -> Option<bool> {
        let d = (dx * dx + dy * dy).sqrt();
        let ang = dy.atan2(dx) - pose.orientation;
        let tooth_phase = (ang + std::f64::consts::PI / 6.0).rem_euclid(std::f64::consts::PI / 3.0) - std::f64::consts::PI / 6.0;
        let body = d <= SPRITE_BODY * r || (d <= r && (tooth_phase * d).abs() <= 0.16 * r);
        if !body {
            return None;
        }
        // Chamber and its slot along the orientation axis.
        let (u, v) = (dx * pose.orientation.cos() + dy * pose.orientation.sin(), -dx * pose.orientation.sin() + dy * pose.orientation.cos());
        let chamber = d <= SPRITE_CHAMBER * r || (u > 0.0 && u <= SPRITE_BODY * r && v.abs() <= 0.1 * r);
        Some(chamber)
    };
    let x0 = (pose.center.x - r - 2.0).floor().max(0.0) as usize;
    let y0 = (pose.center.y - r - 2.0).floor().max(0.0) as usize;
    let x1 = ((pose.center.x + r + 2.0).ceil() as usize).min(img.width);
    let y1 = ((pose.center.y + r + 2.0).ceil() as usize).min(img.height);
    let mut body = Grid::new(x1.saturating_sub(x0), y1.saturating_sub(y0), false);
    let mut chamber = body.clone();
    for y in y0..y1 {
        for x in x0..x1 {
            let (dx, dy) = (x as f64 + 0.5 - pose.center.x, y as f64 + 0.5 - pose.center.y);
            match inside(dx, dy) {
                Some(false) => body.set(x - x0, y - y0, true),
                Some(true) => chamber.set(x - x0, y - y0, true),
                None => {}
            }
        }
    }
    let dist = boundary_distance(&body);
    for y in y0..y1 {
        for x in x0..x1 {
            let (lx, ly) = (x - x0, y - y0);
            if *body.get(lx, ly) {
                let v = if *dist.get(lx, ly) < 1.0 { params.robot_edge } else { params.robot_body };
                img.set(x, y, v);
            } else if *chamber.get(lx, ly) {
                img.set(x, y, params.background);
            }
        }
    }
}

/// Renders the environment as a grayscale image on the label grid.
pub fn render_image<R: Rng + ?Sized>(env: &Environment, params: &RenderParams, rng: &mut R) -> GrayImage {
    let (w, h) = (env.nx(), env.ny());
    let mut img = Grid::new(w, h, params.background);
    let cells = env.labels.map(|l| *l == LabelClass::Cell);
    let dist = boundary_distance(&cells);
    for y in 0..h {
        for x in 0..w {
            match env.labels.get(x, y) {
                LabelClass::Cell => {
                    let v = if *dist.get(x, y) < params.ring_width_px { params.ring } else { params.core };
                    img.set(x, y, v);
                }
                LabelClass::Debris(_) => {
                    let t = rng.random_range(-1.0f32..1.0) * params.debris_texture;
                    img.set(x, y, params.debris + t);
                }
                _ => {}
            }
        }
    }
    for s in &params.sprites {
        draw_sprite(&mut img, s, params);
    }
    if params.noise_sigma > 0.0 {
        for v in img.data.iter_mut() {
            let n: f64 = rng.sample(StandardNormal);
            *v = (*v + params.noise_sigma * n as f32).clamp(0.0, 1.0);
        }
    }
    img
}
