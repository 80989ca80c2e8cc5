//! Row-major 2-D grids and the exact Euclidean distance transform.

/// Dense row-major grid. Index `(x, y)` maps to `data[y * width + x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    pub width: usize,
    pub height: usize,
    pub data: Vec<T>,
}

pub type Mask = Grid<bool>;
pub type GrayImage = Grid<f32>;

impl<T: Clone> Grid<T> {
    pub fn new(width: usize, height: usize, fill: T) -> Self {
        Grid { width, height, data: vec![fill; width * height] }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), width * height, "grid data length mismatch");
        Grid { width, height, data }
    }

    #[inline]
    pub fn idx(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> &T {
        &self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: T) {
        let i = y * self.width + x;
        self.data[i] = v;
    }

    /// Bounds-checked access with signed coordinates.
    #[inline]
    pub fn get_i(&self, x: i64, y: i64) -> Option<&T> {
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            None
        } else {
            Some(&self.data[y as usize * self.width + x as usize])
        }
    }

    pub fn map<U, F: Fn(&T) -> U>(&self, f: F) -> Grid<U> {
        Grid { width: self.width, height: self.height, data: self.data.iter().map(f).collect() }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn coords_where<F: Fn(&T) -> bool>(&self, f: F) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for y in 0..self.height {
            for x in 0..self.width {
                if f(&self.data[y * self.width + x]) {
                    out.push((x, y));
                }
            }
        }
        out
    }

    /// Copy of the sub-rectangle starting at `(x0, y0)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Grid<T> {
        let mut data = Vec::with_capacity(w * h);
        for y in y0..y0 + h {
            data.extend_from_slice(&self.data[y * self.width + x0..y * self.width + x0 + w]);
        }
        Grid { width: w, height: h, data }
    }
}

impl Grid<bool> {
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn not(&self) -> Mask {
        self.map(|b| !b)
    }

    pub fn and(&self, o: &Mask) -> Mask {
        Grid::from_vec(
            self.width,
            self.height,
            self.data.iter().zip(&o.data).map(|(a, b)| *a && *b).collect(),
        )
    }

    pub fn or(&self, o: &Mask) -> Mask {
        Grid::from_vec(
            self.width,
            self.height,
            self.data.iter().zip(&o.data).map(|(a, b)| *a || *b).collect(),
        )
    }

    pub fn and_not(&self, o: &Mask) -> Mask {
        Grid::from_vec(
            self.width,
            self.height,
            self.data.iter().zip(&o.data).map(|(a, b)| *a && !*b).collect(),
        )
    }

    /// Pixel coordinates of all set cells.
    pub fn coords(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for y in 0..self.height {
            for x in 0..self.width {
                if self.data[y * self.width + x] {
                    out.push((x, y));
                }
            }
        }
        out
    }
}

const EDT_INF: f64 = 1e20;

/// 1-D lower envelope of parabolas (Felzenszwalb & Huttenlocher), seeded
/// only from finite entries.
fn edt_1d(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k: isize = -1;
    for q in 0..n {
        if f[q] >= EDT_INF {
            continue;
        }
        let mut s = f64::NEG_INFINITY;
        while k >= 0 {
            let p = v[k as usize];
            s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
            if s <= z[k as usize] {
                k -= 1;
            } else {
                break;
            }
        }
        k += 1;
        v[k as usize] = q;
        z[k as usize] = if k == 0 { f64::NEG_INFINITY } else { s };
        z[k as usize + 1] = f64::INFINITY;
    }
    if k < 0 {
        out.iter_mut().for_each(|o| *o = EDT_INF);
        return;
    }
    let mut k = 0usize;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        *o = (q as f64 - p as f64).powi(2) + f[p];
    }
}

/// Squared Euclidean distance (in cells) from every cell center to the
/// nearest `true` cell center. Cells of an all-false grid get `f64::INFINITY`.
pub fn squared_edt(sites: &Mask) -> Grid<f64> {
    let (w, h) = (sites.width, sites.height);
    let mut g: Vec<f64> = sites.data.iter().map(|&b| if b { 0.0 } else { EDT_INF }).collect();
    let n = w.max(h);
    let mut f = vec![0.0; n];
    let mut out = vec![0.0; n];
    let mut v = vec![0usize; n];
    let mut z = vec![0.0; n + 1];
    for x in 0..w {
        for y in 0..h {
            f[y] = g[y * w + x];
        }
        edt_1d(&f[..h], &mut out[..h], &mut v, &mut z);
        for y in 0..h {
            g[y * w + x] = out[y];
        }
    }
    for y in 0..h {
        f[..w].copy_from_slice(&g[y * w..y * w + w]);
        edt_1d(&f[..w], &mut out[..w], &mut v, &mut z);
        g[y * w..y * w + w].copy_from_slice(&out[..w]);
    }
    for d in g.iter_mut() {
        if *d >= EDT_INF * 0.5 {
            *d = f64::INFINITY;
        }
    }
    Grid::from_vec(w, h, g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn brute_edt(m: &Mask) -> Grid<f64> {
        let sites = m.coords();
        let mut g = Grid::new(m.width, m.height, f64::INFINITY);
        for y in 0..m.height {
            for x in 0..m.width {
                let mut best = f64::INFINITY;
                for &(sx, sy) in &sites {
                    let d = (sx as f64 - x as f64).powi(2) + (sy as f64 - y as f64).powi(2);
                    best = best.min(d);
                }
                g.set(x, y, best);
            }
        }
        g
    }

    #[test]
    fn edt_matches_brute_force() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for trial in 0..60 {
            let w = rng.random_range(1..33);
            let h = rng.random_range(1..33);
            let p = if trial % 3 == 0 { 0.01 } else { 0.15 };
            let m = Grid::from_vec(w, h, (0..w * h).map(|_| rng.random_bool(p)).collect());
            assert_eq!(squared_edt(&m), brute_edt(&m), "trial {trial}");
        }
    }

    #[test]
    fn edt_empty_is_infinite() {
        let m = Grid::new(4, 3, false);
        assert!(squared_edt(&m).data.iter().all(|d| d.is_infinite()));
    }
}
