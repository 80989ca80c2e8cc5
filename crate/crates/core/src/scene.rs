//! Physical-world data model: device geometry, label grids, robots,
//! working-area windows and free-space computation.

use std::io::{BufRead, BufReader, Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Point, Rect};
use crate::grid::{squared_edt, Grid, Mask};

/// Default number of debris shape classes.
pub const DEFAULT_DEBRIS_CLASSES: usize = 6;

/// Per-cell semantic label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LabelClass {
    Free,
    Cell,
    /// Debris shape class, 1-based.
    Debris(u8),
    RobotStartZone,
}

impl LabelClass {
    /// Byte code used by the environment file: 0 free, 1 cell, 1+k debris k,
    /// 255 start zone.
    pub fn code(self) -> u8 {
        match self {
            LabelClass::Free => 0,
            LabelClass::Cell => 1,
            LabelClass::Debris(k) => 1 + k,
            LabelClass::RobotStartZone => 255,
        }
    }

    pub fn from_code(c: u8) -> LabelClass {
        match c {
            0 => LabelClass::Free,
            1 => LabelClass::Cell,
            255 => LabelClass::RobotStartZone,
            k => LabelClass::Debris(k - 1),
        }
    }

    /// Whether a robot may overlap this cell.
    pub fn is_passable(self) -> bool {
        matches!(self, LabelClass::Free | LabelClass::RobotStartZone)
    }
}

/// Rasterized device environment.
#[derive(Debug, Clone, PartialEq)]
pub struct Environment {
    pub width_um: f64,
    pub height_um: f64,
    pub resolution_um: f64,
    pub labels: Grid<LabelClass>,
    pub rng_seed: u64,
    pub debris_classes: usize,
}

impl Environment {
    /// All-free environment with `ceil(extent / resolution)` cells per axis.
    pub fn empty(width_um: f64, height_um: f64, resolution_um: f64) -> Result<Self> {
        if !(resolution_um > 0.0) || !(width_um > 0.0) || !(height_um > 0.0) {
            return Err(Error::InvalidParameter("extent and resolution must be positive".into()));
        }
        let nx = (width_um / resolution_um).ceil() as usize;
        let ny = (height_um / resolution_um).ceil() as usize;
        Ok(Environment {
            width_um,
            height_um,
            resolution_um,
            labels: Grid::new(nx, ny, LabelClass::Free),
            rng_seed: 0,
            debris_classes: DEFAULT_DEBRIS_CLASSES,
        })
    }

    pub fn nx(&self) -> usize {
        self.labels.width
    }

    pub fn ny(&self) -> usize {
        self.labels.height
    }

    pub fn bounds(&self) -> Rect {
        Rect::new(0.0, 0.0, self.width_um, self.height_um)
    }

    /// Physical center of cell `(i, j)`.
    #[inline]
    pub fn cell_center(&self, i: usize, j: usize) -> Point {
        Point::new((i as f64 + 0.5) * self.resolution_um, (j as f64 + 0.5) * self.resolution_um)
    }

    /// Cell containing a physical point, clamped to the grid.
    pub fn cell_of(&self, p: Point) -> (usize, usize) {
        let i = ((p.x / self.resolution_um).floor().max(0.0) as usize).min(self.nx() - 1);
        let j = ((p.y / self.resolution_um).floor().max(0.0) as usize).min(self.ny() - 1);
        (i, j)
    }

    /// Mask of cells that block robots.
    pub fn obstacle_mask(&self) -> Mask {
        self.labels.map(|l| !l.is_passable())
    }

    /// Sets the cells of an axis-aligned physical rectangle to `label`.
    pub fn fill_rect(&mut self, r: &Rect, label: LabelClass) {
        for j in 0..self.ny() {
            for i in 0..self.nx() {
                if r.contains(self.cell_center(i, j)) {
                    self.labels.set(i, j, label);
                }
            }
        }
    }

    /// True when the closed disk overlaps no blocking cell center.
    pub fn disk_is_clear(&self, c: Point, r: f64) -> bool {
        let res = self.resolution_um;
        let i0 = ((c.x - r) / res - 0.5).floor().max(0.0) as usize;
        let j0 = ((c.y - r) / res - 0.5).floor().max(0.0) as usize;
        let i1 = (((c.x + r) / res - 0.5).ceil().max(0.0) as usize).min(self.nx().saturating_sub(1));
        let j1 = (((c.y + r) / res - 0.5).ceil().max(0.0) as usize).min(self.ny().saturating_sub(1));
        let r2 = r * r;
        for j in j0..=j1 {
            for i in i0..=i1 {
                if !self.labels.get(i, j).is_passable() && self.cell_center(i, j).dist_sq(c) <= r2 {
                    return false;
                }
            }
        }
        true
    }
}

/// Disk-shaped microrobot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Robot {
    pub id: usize,
    pub center: Point,
    pub orientation: f64,
    pub radius_um: f64,
    pub capacity: usize,
    pub priority: i64,
    pub speed_um_s: f64,
}

impl Robot {
    pub const DEFAULT_RADIUS_UM: f64 = 100.0;
    pub const DEFAULT_CAPACITY: usize = 8;
    pub const DEFAULT_SPEED_UM_S: f64 = 65.0;

    pub fn new(id: usize, center: Point) -> Self {
        Robot {
            id,
            center,
            orientation: 0.0,
            radius_um: Self::DEFAULT_RADIUS_UM,
            capacity: Self::DEFAULT_CAPACITY,
            priority: id as i64,
            speed_um_s: Self::DEFAULT_SPEED_UM_S,
        }
    }
}

/// Rectangular window inside which light, and hence control, is available.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkingArea {
    pub origin: Point,
    pub width_um: f64,
    pub height_um: f64,
}

impl WorkingArea {
    pub const DEFAULT_EXTENT_UM: f64 = 3300.0;

    pub fn rect(&self) -> Rect {
        Rect::from_origin(self.origin, self.width_um, self.height_um)
    }

    pub fn whole(env: &Environment) -> Self {
        WorkingArea { origin: Point::new(0.0, 0.0), width_um: env.width_um, height_um: env.height_um }
    }
}

/// Cells where a robot center can sit without collision.
#[derive(Debug, Clone, PartialEq)]
pub struct FreeSpaceMask {
    pub mask: Mask,
    pub fraction: f64,
}

/// Cells whose closed disk of radius `radius_um` overlaps no blocking cell
/// center and stays inside `bounds`. Works on a full-grid EDT.
pub(crate) fn clearance_mask(env: &Environment, obstacles: &Mask, radius_um: f64, bounds: &Rect) -> Mask {
    let d2 = squared_edt(obstacles);
    let res2 = env.resolution_um * env.resolution_um;
    let r2 = radius_um * radius_um;
    let mut mask = Grid::new(env.nx(), env.ny(), false);
    for j in 0..env.ny() {
        for i in 0..env.nx() {
            let k = j * env.nx() + i;
            mask.data[k] = d2.data[k] * res2 > r2 && bounds.contains_disk(env.cell_center(i, j), radius_um);
        }
    }
    mask
}

pub fn compute_free_space(env: &Environment, robot_radius_um: f64) -> Result<FreeSpaceMask> {
    if !(robot_radius_um > 0.0) {
        return Err(Error::InvalidParameter("robot radius must be positive".into()));
    }
    if robot_radius_um > env.width_um.min(env.height_um) / 2.0 {
        return Err(Error::RadiusExceedsDevice);
    }
    let mask = clearance_mask(env, &env.obstacle_mask(), robot_radius_um, &env.bounds());
    let fraction = mask.count() as f64 / mask.len() as f64;
    Ok(FreeSpaceMask { mask, fraction })
}

/// Places a window of the given extent centered on the bounding box of
/// `points`, shifted as needed to stay inside `device`.
pub fn fit_working_area(points: &[Point], wa_width: f64, wa_height: f64, device: &Rect) -> Result<WorkingArea> {
    let bb = Rect::bounding(points).ok_or(Error::Empty("points"))?;
    if wa_width > device.width() + 1e-9 || wa_height > device.height() + 1e-9 {
        return Err(Error::WorkingAreaExceedsDevice);
    }
    if bb.width() > wa_width || bb.height() > wa_height {
        return Err(Error::PointsExceedWorkingArea);
    }
    let c = bb.center();
    let x0 = (c.x - wa_width / 2.0).clamp(device.x0, device.x1 - wa_width);
    let y0 = (c.y - wa_height / 2.0).clamp(device.y0, device.y1 - wa_height);
    // Clamping can only move the window toward the points, which are inside
    // the device, so containment is preserved.
    Ok(WorkingArea { origin: Point::new(x0, y0), width_um: wa_width, height_um: wa_height })
}

const ENV_MAGIC: &str = "OETENV";
const ENV_VERSION: u32 = 1;

/// Writes the environment file: one ASCII header line
/// `OETENV 1 <width_um> <height_um> <resolution_um> <seed> <debris_classes> <nx> <ny>`
/// followed by `nx * ny` label bytes in row-major order.
pub fn write_environment<W: Write>(env: &Environment, mut w: W) -> Result<()> {
    writeln!(
        w,
        "{ENV_MAGIC} {ENV_VERSION} {} {} {} {} {} {} {}",
        env.width_um,
        env.height_um,
        env.resolution_um,
        env.rng_seed,
        env.debris_classes,
        env.nx(),
        env.ny()
    )?;
    let bytes: Vec<u8> = env.labels.data.iter().map(|l| l.code()).collect();
    w.write_all(&bytes)?;
    Ok(())
}

pub fn read_environment<R: Read>(r: R) -> Result<Environment> {
    let mut br = BufReader::new(r);
    let mut header = String::new();
    br.read_line(&mut header)?;
    let f: Vec<&str> = header.split_whitespace().collect();
    if f.len() != 9 || f[0] != ENV_MAGIC {
        return Err(Error::Format("bad environment header".into()));
    }
    let bad = |what: &str| Error::Format(format!("bad header field {what}"));
    let version: u32 = f[1].parse().map_err(|_| bad("version"))?;
    if version != ENV_VERSION {
        return Err(Error::Format(format!("unsupported environment version {version}")));
    }
    let width_um: f64 = f[2].parse().map_err(|_| bad("width"))?;
    let height_um: f64 = f[3].parse().map_err(|_| bad("height"))?;
    let resolution_um: f64 = f[4].parse().map_err(|_| bad("resolution"))?;
    let rng_seed: u64 = f[5].parse().map_err(|_| bad("seed"))?;
    let debris_classes: usize = f[6].parse().map_err(|_| bad("classes"))?;
    let nx: usize = f[7].parse().map_err(|_| bad("nx"))?;
    let ny: usize = f[8].parse().map_err(|_| bad("ny"))?;
    if !(resolution_um > 0.0)
        || nx != (width_um / resolution_um).ceil() as usize
        || ny != (height_um / resolution_um).ceil() as usize
    {
        return Err(Error::Format("grid size inconsistent with extent".into()));
    }
    let mut bytes = vec![0u8; nx * ny];
    br.read_exact(&mut bytes)?;
    let labels = Grid::from_vec(nx, ny, bytes.into_iter().map(LabelClass::from_code).collect());
    Ok(Environment { width_um, height_um, resolution_um, labels, rng_seed, debris_classes })
}

/// Gray level used for each class in the inspection graymap.
fn label_gray(l: LabelClass, classes: usize) -> u8 {
    match l {
        LabelClass::Free => 255,
        LabelClass::RobotStartZone => 220,
        LabelClass::Cell => 0,
        LabelClass::Debris(k) => (40 + (k as usize * 120) / classes.max(1)).min(200) as u8,
    }
}

/// Binary (P5) graymap rendering of the label grid for inspection.
pub fn write_environment_pgm<W: Write>(env: &Environment, w: W) -> Result<()> {
    let img = env.labels.map(|l| label_gray(*l, env.debris_classes));
    crate::io::write_pgm_u8(&img, w)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_free(env: &Environment, r: f64) -> Mask {
        let obstacles: Vec<Point> = env
            .labels
            .coords_where(|l| !l.is_passable())
            .into_iter()
            .map(|(i, j)| env.cell_center(i, j))
            .collect();
        let mut m = Grid::new(env.nx(), env.ny(), false);
        for j in 0..env.ny() {
            for i in 0..env.nx() {
                let c = env.cell_center(i, j);
                let inside = env.bounds().contains_disk(c, r);
                let clear = obstacles.iter().all(|o| o.dist(c) > r);
                m.set(i, j, inside && clear);
            }
        }
        m
    }

    #[test]
    fn empty_device_only_loses_margin() {
        let env = Environment::empty(1000.0, 1000.0, 5.0).unwrap();
        let fs = compute_free_space(&env, 100.0).unwrap();
        assert!((fs.fraction - 0.64).abs() < 1e-12);
    }

    #[test]
    fn all_debris_has_no_free_space() {
        let mut env = Environment::empty(500.0, 500.0, 5.0).unwrap();
        env.labels.data.iter_mut().for_each(|l| *l = LabelClass::Debris(1));
        assert_eq!(compute_free_space(&env, 50.0).unwrap().fraction, 0.0);
    }

    #[test]
    fn radius_larger_than_device_is_rejected() {
        let env = Environment::empty(100.0, 300.0, 5.0).unwrap();
        assert!(matches!(compute_free_space(&env, 60.0), Err(Error::RadiusExceedsDevice)));
    }

    #[test]
    fn free_space_matches_brute_force_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..25 {
            let nx = rng.random_range(8..=64);
            let ny = rng.random_range(8..=64);
            let res = 2.0;
            let mut env = Environment::empty(nx as f64 * res, ny as f64 * res, res).unwrap();
            let p: f64 = rng.random_range(0.0..0.08);
            for l in env.labels.data.iter_mut() {
                *l = match rng.random_range(0.0..1.0) {
                    x if x < p => LabelClass::Debris(2),
                    x if x < 1.3 * p => LabelClass::Cell,
                    x if x < 1.5 * p => LabelClass::RobotStartZone,
                    _ => LabelClass::Free,
                };
            }
            let r = rng.random_range(0.5..(nx.min(ny) as f64 * res / 2.0));
            let fs = compute_free_space(&env, r).unwrap();
            assert_eq!(fs.mask, brute_free(&env, r));
        }
    }

    #[test]
    fn fit_window_contains_points_and_rejects_spread() {
        let device = Rect::new(0.0, 0.0, 10_000.0, 10_000.0);
        let pts = vec![Point::new(100.0, 200.0), Point::new(900.0, 1100.0)];
        let wa = fit_working_area(&pts, 3300.0, 3300.0, &device).unwrap();
        assert!(pts.iter().all(|p| wa.rect().contains(*p)));
        assert!(wa.origin.x >= 0.0 && wa.origin.y >= 0.0);
        let far = vec![Point::new(1000.0, 1000.0), Point::new(6000.0, 1000.0)];
        assert!(matches!(fit_working_area(&far, 3300.0, 3300.0, &device), Err(Error::PointsExceedWorkingArea)));
    }

    #[test]
    fn environment_file_round_trip() {
        let mut env = Environment::empty(100.0, 60.0, 7.0).unwrap();
        env.rng_seed = 42;
        env.labels.set(3, 2, LabelClass::Debris(6));
        env.labels.set(0, 0, LabelClass::Cell);
        env.labels.set(1, 0, LabelClass::RobotStartZone);
        let mut buf = Vec::new();
        write_environment(&env, &mut buf).unwrap();
        assert_eq!(read_environment(&buf[..]).unwrap(), env);
        assert!(read_environment(&b"NOPE 1 1 1 1 0 6 1 1\n\0"[..]).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(40))]
            #[test]
            fn free_space_monotone(cells in proptest::collection::vec(any::<bool>(), 24 * 24),
                                   extra in 0usize..(24 * 24), r1 in 1.0f64..10.0, dr in 0.0f64..10.0) {
                let mut env = Environment::empty(48.0, 48.0, 2.0).unwrap();
                for (l, &b) in env.labels.data.iter_mut().zip(&cells) {
                    if b && extra % 3 == 0 { *l = LabelClass::Debris(1); }
                }
                let base = compute_free_space(&env, r1).unwrap();
                let bigger = compute_free_space(&env, (r1 + dr).min(24.0)).unwrap();
                prop_assert!(bigger.mask.and_not(&base.mask).count() == 0);
                env.labels.data[extra] = LabelClass::Debris(3);
                let more = compute_free_space(&env, r1).unwrap();
                prop_assert!(more.fraction <= base.fraction);
            }

            #[test]
            fn fitted_window_contains_points(pts in proptest::collection::vec((0.0f64..3000.0, 0.0f64..3000.0), 1..30),
                                             ox in 0.0f64..7000.0, oy in 0.0f64..7000.0) {
                let device = Rect::new(0.0, 0.0, 10_000.0, 10_000.0);
                let pts: Vec<Point> = pts.into_iter().map(|(x, y)| Point::new(x + ox, y + oy)).collect();
                let wa = fit_working_area(&pts, 3300.0, 3300.0, &device).unwrap();
                let r = wa.rect();
                prop_assert!(pts.iter().all(|p| r.contains(*p)));
                prop_assert!(r.x0 >= 0.0 && r.y0 >= 0.0 && r.x1 <= 10_000.0 && r.y1 <= 10_000.0);
            }
        }
    }
}
