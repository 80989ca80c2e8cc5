//! Linear filters, gradients, thresholds and contrast equalization.

use crate::grid::{GrayImage, Grid, Mask};

#[inline]
fn reflect(i: i64, n: usize) -> usize {
    // Mirror without repeating the edge sample (…2 1 | 0 1 2…).
    let n = n as i64;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let mut k = i.rem_euclid(period);
    if k >= n {
        k = period - k;
    }
    k as usize
}

fn gaussian_kernel(sigma: f64) -> Vec<f32> {
    let radius = (3.0 * sigma).ceil().max(1.0) as i64;
    let mut k: Vec<f64> = (-radius..=radius).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k.into_iter().map(|v| v as f32).collect()
}

/// Separable Gaussian blur with reflected borders. `sigma <= 0` copies.
pub fn gaussian_blur(img: &GrayImage, sigma: f64) -> GrayImage {
    if sigma <= 0.0 {
        return img.clone();
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as i64;
    let (w, h) = (img.width, img.height);
    let mut tmp = Grid::new(w, h, 0.0f32);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (t, kv) in k.iter().enumerate() {
                acc += kv * img.data[y * w + reflect(x as i64 + t as i64 - r, w)];
            }
            tmp.data[y * w + x] = acc;
        }
    }
    let mut out = Grid::new(w, h, 0.0f32);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (t, kv) in k.iter().enumerate() {
                acc += kv * tmp.data[reflect(y as i64 + t as i64 - r, h) * w + x];
            }
            out.data[y * w + x] = acc;
        }
    }
    out
}

/// 3×3 correlation with reflected borders.
pub fn correlate3(img: &GrayImage, k: &[[f32; 3]; 3]) -> GrayImage {
    let (w, h) = (img.width, img.height);
    let mut out = Grid::new(w, h, 0.0f32);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (dy, row) in k.iter().enumerate() {
                let yy = reflect(y as i64 + dy as i64 - 1, h);
                for (dx, kv) in row.iter().enumerate() {
                    acc += kv * img.data[yy * w + reflect(x as i64 + dx as i64 - 1, w)];
                }
            }
            out.data[y * w + x] = acc;
        }
    }
    out
}

pub const SOBEL_X: [[f32; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
pub const SOBEL_Y: [[f32; 3]; 3] = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];
pub const SCHARR_X: [[f32; 3]; 3] = [[-3.0, 0.0, 3.0], [-10.0, 0.0, 10.0], [-3.0, 0.0, 3.0]];
pub const SCHARR_Y: [[f32; 3]; 3] = [[-3.0, -10.0, -3.0], [0.0, 0.0, 0.0], [3.0, 10.0, 3.0]];

pub fn sobel(img: &GrayImage) -> (GrayImage, GrayImage) {
    (correlate3(img, &SOBEL_X), correlate3(img, &SOBEL_Y))
}

/// Scharr gradient magnitude, normalized by the kernel weight (32).
pub fn scharr_magnitude(img: &GrayImage) -> GrayImage {
    let gx = correlate3(img, &SCHARR_X);
    let gy = correlate3(img, &SCHARR_Y);
    Grid::from_vec(
        img.width,
        img.height,
        gx.data.iter().zip(&gy.data).map(|(a, b)| (a * a + b * b).sqrt() / 32.0).collect(),
    )
}

/// Otsu's threshold over 256 bins of `[0, 1]` values. Returns the threshold
/// `t` such that the foreground class is `v > t`.
pub fn otsu_threshold(values: &[f32]) -> f32 {
    if values.is_empty() {
        return 0.5;
    }
    let mut hist = [0usize; 256];
    for &v in values {
        hist[bin(v)] += 1;
    }
    let total = values.len() as f64;
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();
    let (mut w0, mut sum0) = (0.0, 0.0);
    let (mut best, mut best_t) = (-1.0, 0usize);
    for (t, &c) in hist.iter().enumerate() {
        w0 += c as f64;
        sum0 += t as f64 * c as f64;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let m0 = sum0 / w0;
        let m1 = (sum_all - sum0) / w1;
        let between = w0 * w1 * (m0 - m1) * (m0 - m1);
        if between > best {
            best = between;
            best_t = t;
        }
    }
    (best_t as f32 + 0.5) / 255.0
}

#[inline]
fn bin(v: f32) -> usize {
    (v.clamp(0.0, 1.0) * 255.0).round() as usize
}

/// Contrast-limited adaptive histogram equalization on `[0, 1]` images.
///
/// `tile` is the tile edge in pixels; `clip_limit` is relative to the mean
/// bin height (OpenCV convention). Tile mappings are bilinearly blended.
pub fn clahe(img: &GrayImage, tile: usize, clip_limit: f64) -> GrayImage {
    let (w, h) = (img.width, img.height);
    if w == 0 || h == 0 {
        return img.clone();
    }
    let tile = tile.max(1);
    let tx = w.div_ceil(tile);
    let ty = h.div_ceil(tile);
    let mut maps = vec![[0f32; 256]; tx * ty];
    for by in 0..ty {
        for bx in 0..tx {
            let (x0, y0) = (bx * tile, by * tile);
            let (x1, y1) = ((x0 + tile).min(w), (y0 + tile).min(h));
            let mut hist = [0f64; 256];
            for y in y0..y1 {
                for x in x0..x1 {
                    hist[bin(img.data[y * w + x])] += 1.0;
                }
            }
            let n = ((x1 - x0) * (y1 - y0)) as f64;
            if clip_limit > 0.0 {
                let limit = (clip_limit * n / 256.0).max(1.0);
                let mut excess = 0.0;
                for v in hist.iter_mut() {
                    if *v > limit {
                        excess += *v - limit;
                        *v = limit;
                    }
                }
                let add = excess / 256.0;
                hist.iter_mut().for_each(|v| *v += add);
            }
            let mut cdf = 0.0;
            let map = &mut maps[by * tx + bx];
            for (i, v) in hist.iter().enumerate() {
                cdf += v;
                map[i] = (cdf / n) as f32;
            }
        }
    }
    let mut out = Grid::new(w, h, 0.0f32);
    for y in 0..h {
        let fy = (y as f64 + 0.5) / tile as f64 - 0.5;
        let y0 = fy.floor().clamp(0.0, (ty - 1) as f64) as usize;
        let y1 = (y0 + 1).min(ty - 1);
        let ay = (fy - y0 as f64).clamp(0.0, 1.0) as f32;
        for x in 0..w {
            let fx = (x as f64 + 0.5) / tile as f64 - 0.5;
            let x0 = fx.floor().clamp(0.0, (tx - 1) as f64) as usize;
            let x1 = (x0 + 1).min(tx - 1);
            let ax = (fx - x0 as f64).clamp(0.0, 1.0) as f32;
            let b = bin(img.data[y * w + x]);
            let top = maps[y0 * tx + x0][b] * (1.0 - ax) + maps[y0 * tx + x1][b] * ax;
            let bot = maps[y1 * tx + x0][b] * (1.0 - ax) + maps[y1 * tx + x1][b] * ax;
            out.data[y * w + x] = top * (1.0 - ay) + bot * ay;
        }
    }
    out
}

/// Pixels above `low` that are 8-connected to some pixel above `high`.
pub fn hysteresis_threshold(img: &GrayImage, low: f32, high: f32) -> Mask {
    let (w, h) = (img.width, img.height);
    let mut out = Grid::new(w, h, false);
    let mut stack: Vec<usize> = Vec::new();
    for (i, &v) in img.data.iter().enumerate() {
        if v > high && !out.data[i] {
            out.data[i] = true;
            stack.push(i);
            while let Some(k) = stack.pop() {
                let (x, y) = ((k % w) as i64, (k / w) as i64);
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        let (nx, ny) = (x + dx, y + dy);
                        if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                            continue;
                        }
                        let n = ny as usize * w + nx as usize;
                        if !out.data[n] && img.data[n] > low {
                            out.data[n] = true;
                            stack.push(n);
                        }
                    }
                }
            }
        }
    }
    out
}

/// Classic Canny: Sobel gradients, non-maximum suppression along the
/// quantized gradient direction, double threshold with hysteresis.
/// Thresholds apply to the Sobel magnitude divided by 4.
pub fn canny(img: &GrayImage, low: f32, high: f32) -> Mask {
    let (w, h) = (img.width, img.height);
    let (gx, gy) = sobel(img);
    let mag: Vec<f32> = gx.data.iter().zip(&gy.data).map(|(a, b)| (a * a + b * b).sqrt() / 4.0).collect();
    let mut nms = Grid::new(w, h, 0.0f32);
    let at = |x: i64, y: i64| -> f32 {
        if x < 0 || y < 0 || x >= w as i64 || y >= h as i64 {
            0.0
        } else {
            mag[y as usize * w + x as usize]
        }
    };
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let m = mag[i];
            if m == 0.0 {
                continue;
            }
            let angle = gy.data[i].atan2(gx.data[i]).to_degrees();
            let a = if angle < 0.0 { angle + 180.0 } else { angle };
            let (dx, dy) = if !(22.5..157.5).contains(&a) {
                (1, 0)
            } else if a < 67.5 {
                (1, 1)
            } else if a < 112.5 {
                (0, 1)
            } else {
                (-1, 1)
            };
            let (xi, yi) = (x as i64, y as i64);
            let n1 = at(xi + dx, yi + dy);
            let n2 = at(xi - dx, yi - dy);
            // Ties resolved toward the forward neighbor keep ridges one pixel wide.
            if m > n1 && m >= n2 {
                nms.data[i] = m;
            }
        }
    }
    hysteresis_threshold(&nms, low, high)
}
