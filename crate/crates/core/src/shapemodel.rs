//! Region shape descriptors and the statistical models built on them:
//! a multivariate normal for target cells, an equal-weight Gaussian mixture
//! for debris, per-concentration count models and a cubic label-count curve.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{convex_hull, Point};
use crate::grid::Mask;
use crate::imgproc::{boundary_distance, branches, connected_components, thin};
use crate::scene::LabelClass;

/// Number of shape descriptors.
pub const SHAPE_DIM: usize = 7;

/// Concentrations (cells/μL) of the reference image sets.
pub const TRAINING_CONCENTRATIONS: [f64; 7] = [1.0, 10.0, 20.0, 50.0, 100.0, 200.0, 400.0];

/// Seven per-region shape descriptors. Lengths share one unit (pixels or
/// μm), areas are in that unit squared.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeVector {
    pub area: f64,
    pub major_axis: f64,
    pub minor_axis: f64,
    pub solidity: f64,
    pub thickness: f64,
    pub fiber_length: f64,
    pub n_branches: u32,
}

impl ShapeVector {
    pub fn to_array(&self) -> [f64; SHAPE_DIM] {
        [
            self.area,
            self.major_axis,
            self.minor_axis,
            self.solidity,
            self.thickness,
            self.fiber_length,
            self.n_branches as f64,
        ]
    }

    /// Builds a descriptor from raw values, clamping into the valid ranges.
    pub fn from_array_clamped(v: &[f64]) -> ShapeVector {
        let (a, b) = (v[1].max(0.5), v[2].max(0.5));
        ShapeVector {
            area: v[0].max(1.0),
            major_axis: a.max(b),
            minor_axis: a.min(b),
            solidity: v[3].clamp(0.05, 1.0),
            thickness: v[4].max(0.5),
            fiber_length: v[5].max(0.0),
            n_branches: v[6].round().max(0.0) as u32,
        }
    }

    /// Converts pixel-unit descriptors to physical units.
    pub fn scaled(&self, unit: f64) -> ShapeVector {
        ShapeVector {
            area: self.area * unit * unit,
            major_axis: self.major_axis * unit,
            minor_axis: self.minor_axis * unit,
            thickness: self.thickness * unit,
            fiber_length: self.fiber_length * unit,
            ..*self
        }
    }
}

/// Ellipse axes with the same normalized second central moments as the
/// pixel set, treating each pixel as a unit square.
pub fn moment_axes(pixels: &[(usize, usize)]) -> (f64, f64, f64) {
    let n = pixels.len() as f64;
    let (mx, my) = pixels.iter().fold((0.0, 0.0), |(sx, sy), &(x, y)| (sx + x as f64, sy + y as f64));
    let (mx, my) = (mx / n, my / n);
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for &(x, y) in pixels {
        let (dx, dy) = (x as f64 - mx, y as f64 - my);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    let (sxx, syy, sxy) = (sxx / n + 1.0 / 12.0, syy / n + 1.0 / 12.0, sxy / n);
    let tr = sxx + syy;
    let disc = ((sxx - syy).powi(2) + 4.0 * sxy * sxy).sqrt();
    let l1 = 0.5 * (tr + disc);
    let l2 = (0.5 * (tr - disc)).max(0.0);
    let angle = 0.5 * (2.0 * sxy).atan2(sxx - syy);
    (4.0 * l1.sqrt(), 4.0 * l2.sqrt(), angle)
}

/// Region area over the number of pixel centers inside the convex hull of
/// the region's pixel centers.
pub fn solidity(pixels: &[(usize, usize)]) -> f64 {
    let pts: Vec<Point> = pixels.iter().map(|&(x, y)| Point::new(x as f64, y as f64)).collect();
    let hull = convex_hull(&pts);
    if hull.len() < 3 {
        return 1.0;
    }
    let (x0, x1) = pixels.iter().fold((usize::MAX, 0), |(a, b), p| (a.min(p.0), b.max(p.0)));
    let (y0, y1) = pixels.iter().fold((usize::MAX, 0), |(a, b), p| (a.min(p.1), b.max(p.1)));
    let inside = |p: Point| {
        (0..hull.len()).all(|i| {
            let a = hull[i];
            let b = hull[(i + 1) % hull.len()];
            (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x) >= -1e-9
        })
    };
    let mut count = 0usize;
    for y in y0..=y1 {
        for x in x0..=x1 {
            if inside(Point::new(x as f64, y as f64)) {
                count += 1;
            }
        }
    }
    pixels.len() as f64 / count.max(pixels.len()) as f64
}

/// Computes the seven descriptors of a single 8-connected region, in pixel
/// units. Thickness is twice the mean boundary distance over skeleton
/// pixels; fiber length is the longest skeleton branch.
pub fn extract_shape_descriptors(region: &Mask) -> Result<ShapeVector> {
    let (_, comps) = connected_components(region, true);
    match comps.len() {
        0 => return Err(Error::Empty("region mask")),
        1 => {}
        _ => return Err(Error::NotSingleComponent),
    }
    let pixels = &comps[0].pixels;
    let (major, minor, _) = moment_axes(pixels);
    let skel = thin(region);
    let dist = boundary_distance(region);
    let skel_px = skel.coords();
    let thickness = if skel_px.is_empty() {
        2.0 * dist.data.iter().cloned().fold(0.0, f64::max)
    } else {
        2.0 * skel_px.iter().map(|&(x, y)| *dist.get(x, y)).sum::<f64>() / skel_px.len() as f64
    };
    let br = branches(&skel);
    let fiber_length = br
        .iter()
        .map(|b| b.length)
        .fold(None, |m: Option<f64>, l| Some(m.map_or(l, |m| m.max(l))))
        .unwrap_or(skel_px.len().saturating_sub(1) as f64);
    Ok(ShapeVector {
        area: pixels.len() as f64,
        major_axis: major,
        minor_axis: minor,
        solidity: solidity(pixels),
        thickness,
        fiber_length,
        n_branches: br.len() as u32,
    })
}

/// Multivariate normal distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MvnRepr", into = "MvnRepr")]
pub struct Mvn {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

#[derive(Serialize, Deserialize)]
struct MvnRepr {
    mean: Vec<f64>,
    /// Row-major covariance.
    cov: Vec<f64>,
}

impl TryFrom<MvnRepr> for Mvn {
    type Error = String;
    fn try_from(r: MvnRepr) -> std::result::Result<Self, String> {
        let d = r.mean.len();
        if r.cov.len() != d * d {
            return Err(format!("covariance has {} entries, expected {}", r.cov.len(), d * d));
        }
        Ok(Mvn { mean: DVector::from_vec(r.mean), cov: DMatrix::from_row_slice(d, d, &r.cov) })
    }
}

impl From<Mvn> for MvnRepr {
    fn from(m: Mvn) -> Self {
        let d = m.dim();
        let mut cov = Vec::with_capacity(d * d);
        for i in 0..d {
            for j in 0..d {
                cov.push(m.cov[(i, j)]);
            }
        }
        MvnRepr { mean: m.mean.iter().copied().collect(), cov }
    }
}

/// Symmetrizes and clips negative eigenvalues to zero.
fn project_psd(cov: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (cov + cov.transpose()) * 0.5;
    let eig = sym.clone().symmetric_eigen();
    if eig.eigenvalues.iter().all(|&l| l >= 0.0) {
        return sym;
    }
    let lam = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0)));
    let v = &eig.eigenvectors;
    let out = v * lam * v.transpose();
    (&out + out.transpose()) * 0.5
}

impl Mvn {
    pub fn new(mean: Vec<f64>, cov_row_major: Vec<f64>) -> Result<Self> {
        let d = mean.len();
        if cov_row_major.len() != d * d {
            return Err(Error::DimensionMismatch { expected: d * d, got: cov_row_major.len() });
        }
        let cov = DMatrix::from_row_slice(d, d, &cov_row_major);
        Ok(Mvn { mean: DVector::from_vec(mean), cov: project_psd(&cov) })
    }

    /// Diagonal covariance from standard deviations.
    pub fn diagonal(mean: Vec<f64>, sd: &[f64]) -> Self {
        let d = mean.len();
        let mut cov = DMatrix::zeros(d, d);
        for i in 0..d {
            cov[(i, i)] = sd[i] * sd[i];
        }
        Mvn { mean: DVector::from_vec(mean), cov }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Factor `L` with `L Lᵀ = Σ`, valid for singular covariances.
    pub fn sampler(&self) -> MvnSampler {
        let eig = ((&self.cov + self.cov.transpose()) * 0.5).symmetric_eigen();
        let sqrt = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()));
        MvnSampler { mean: self.mean.clone(), factor: eig.eigenvectors * sqrt }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        self.sampler().sample(rng)
    }

    /// Log density; fails if the covariance is not positive definite.
    pub fn log_pdf(&self, x: &DVector<f64>) -> Result<f64> {
        let chol = self.cov.clone().cholesky().ok_or(Error::DegenerateComponent)?;
        Ok(log_pdf_chol(&self.mean, &chol, x))
    }
}

fn log_pdf_chol(mean: &DVector<f64>, chol: &nalgebra::Cholesky<f64, nalgebra::Dyn>, x: &DVector<f64>) -> f64 {
    let d = mean.len() as f64;
    let diff = x - mean;
    let z = chol.l().solve_lower_triangular(&diff).expect("triangular solve");
    let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    -0.5 * (d * (2.0 * std::f64::consts::PI).ln() + log_det + z.norm_squared())
}

/// Precomputed sampling factor for repeated draws.
#[derive(Debug, Clone)]
pub struct MvnSampler {
    mean: DVector<f64>,
    factor: DMatrix<f64>,
}

impl MvnSampler {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let z = DVector::from_fn(self.mean.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
        &self.mean + &self.factor * z
    }
}

fn check_samples(samples: &[Vec<f64>], needed: usize) -> Result<usize> {
    if samples.len() < needed {
        return Err(Error::TooFewSamples { needed, got: samples.len() });
    }
    let d = samples[0].len();
    if d == 0 {
        return Err(Error::Empty("sample vector"));
    }
    if let Some(bad) = samples.iter().find(|s| s.len() != d) {
        return Err(Error::DimensionMismatch { expected: d, got: bad.len() });
    }
    Ok(d)
}

/// Maximum-likelihood normal fit (covariance normalized by N).
pub fn fit_mvn(samples: &[Vec<f64>]) -> Result<Mvn> {
    let d = check_samples(samples, 2)?;
    let n = samples.len() as f64;
    let mut mean = DVector::zeros(d);
    for s in samples {
        mean += DVector::from_column_slice(s);
    }
    mean /= n;
    let mut cov = DMatrix::zeros(d, d);
    for s in samples {
        let diff = DVector::from_column_slice(s) - &mean;
        cov += &diff * diff.transpose();
    }
    cov /= n;
    Ok(Mvn { mean, cov: project_psd(&cov) })
}

/// Gaussian mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gmm {
    pub weights: Vec<f64>,
    pub components: Vec<Mvn>,
}

impl Gmm {
    pub fn k(&self) -> usize {
        self.components.len()
    }

    /// Per-sample log-likelihood and responsibilities.
    pub fn responsibilities(&self, samples: &[Vec<f64>]) -> Result<(f64, Vec<Vec<f64>>)> {
        let chols: Vec<_> = self
            .components
            .iter()
            .map(|c| c.cov.clone().cholesky().ok_or(Error::DegenerateComponent))
            .collect::<Result<_>>()?;
        let mut total = 0.0;
        let mut resp = Vec::with_capacity(samples.len());
        for s in samples {
            let x = DVector::from_column_slice(s);
            let logs: Vec<f64> = self
                .components
                .iter()
                .zip(&chols)
                .zip(&self.weights)
                .map(|((c, ch), w)| w.ln() + log_pdf_chol(&c.mean, ch, &x))
                .collect();
            let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + logs.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
            total += lse;
            resp.push(logs.iter().map(|l| (l - lse).exp()).collect());
        }
        Ok((total, resp))
    }
}

/// EM settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmOptions {
    /// Relative log-likelihood change that ends iteration.
    pub tol: f64,
    pub max_iter: usize,
    /// Regularizer scale: λ = reg_scale · trace(Σ) / d.
    pub reg_scale: f64,
    pub seed: u64,
    /// Keep mixture weights equal (1/K) instead of re-estimating them.
    pub fixed_weights: bool,
}

impl Default for EmOptions {
    fn default() -> Self {
        EmOptions { tol: 1e-6, max_iter: 500, reg_scale: 1e-6, seed: 0, fixed_weights: true }
    }
}

/// Result of an EM run.
#[derive(Debug, Clone)]
pub struct EmFit {
    pub gmm: Gmm,
    /// Log-likelihood after each E-step.
    pub log_likelihood: Vec<f64>,
    pub converged: bool,
}

fn kmeans_pp_seeds<R: Rng>(samples: &[Vec<f64>], k: usize, rng: &mut R) -> Vec<usize> {
    let d2 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
    let mut seeds = vec![rng.random_range(0..samples.len())];
    let mut best: Vec<f64> = samples.iter().map(|s| d2(s, &samples[seeds[0]])).collect();
    while seeds.len() < k {
        let total: f64 = best.iter().sum();
        let next = if total <= 0.0 {
            rng.random_range(0..samples.len())
        } else {
            let mut u = rng.random_range(0.0..total);
            let mut pick = samples.len() - 1;
            for (i, b) in best.iter().enumerate() {
                if u < *b {
                    pick = i;
                    break;
                }
                u -= b;
            }
            pick
        };
        seeds.push(next);
        for (b, s) in best.iter_mut().zip(samples) {
            *b = b.min(d2(s, &samples[next]));
        }
    }
    seeds
}

fn m_step(samples: &[Vec<f64>], resp: &[Vec<f64>], k: usize, opts: &EmOptions) -> Result<Gmm> {
    let d = samples[0].len();
    let n = samples.len() as f64;
    let mut comps = Vec::with_capacity(k);
    let mut weights = Vec::with_capacity(k);
    for j in 0..k {
        let nk: f64 = resp.iter().map(|r| r[j]).sum();
        if nk < 1e-8 * n {
            return Err(Error::DegenerateComponent);
        }
        let mut mean = DVector::zeros(d);
        for (s, r) in samples.iter().zip(resp) {
            mean += DVector::from_column_slice(s) * r[j];
        }
        mean /= nk;
        let mut cov = DMatrix::zeros(d, d);
        for (s, r) in samples.iter().zip(resp) {
            let diff = DVector::from_column_slice(s) - &mean;
            cov += (&diff * diff.transpose()) * r[j];
        }
        cov /= nk;
        let lambda = opts.reg_scale * cov.trace() / d as f64;
        for i in 0..d {
            cov[(i, i)] += lambda;
        }
        let cov = (&cov + cov.transpose()) * 0.5;
        if cov.clone().cholesky().is_none() {
            return Err(Error::DegenerateComponent);
        }
        comps.push(Mvn { mean, cov });
        weights.push(if opts.fixed_weights { 1.0 / k as f64 } else { nk / n });
    }
    Ok(Gmm { weights, components: comps })
}

/// Fits a K-component mixture by EM, seeded with k-means++.
///
/// With `K = 1` the maximum-likelihood normal is returned directly.
pub fn fit_gmm(samples: &[Vec<f64>], k: usize, opts: &EmOptions) -> Result<EmFit> {
    if k == 0 {
        return Err(Error::InvalidParameter("K must be at least 1".into()));
    }
    let d = check_samples(samples, 2)?;
    let needed = k * (d + 1);
    if samples.len() < needed {
        return Err(Error::TooFewSamples { needed, got: samples.len() });
    }
    if k == 1 {
        let gmm = Gmm { weights: vec![1.0], components: vec![fit_mvn(samples)?] };
        let ll = gmm.responsibilities(samples).map(|(l, _)| vec![l]).unwrap_or_default();
        return Ok(EmFit { gmm, log_likelihood: ll, converged: true });
    }
    // EM runs on standardized coordinates so the regularizer acts evenly on
    // descriptors of very different scales; results are mapped back.
    let n = samples.len() as f64;
    let center: Vec<f64> = (0..d).map(|j| samples.iter().map(|s| s[j]).sum::<f64>() / n).collect();
    let scale: Vec<f64> = (0..d)
        .map(|j| {
            let v = samples.iter().map(|s| (s[j] - center[j]).powi(2)).sum::<f64>() / n;
            if v > 0.0 { v.sqrt() } else { 1.0 }
        })
        .collect();
    let z: Vec<Vec<f64>> = samples.iter().map(|s| (0..d).map(|j| (s[j] - center[j]) / scale[j]).collect()).collect();
    let mut fit = fit_gmm_standardized(&z, k, opts)?;
    let log_jac: f64 = n * scale.iter().map(|s| s.ln()).sum::<f64>();
    for ll in fit.log_likelihood.iter_mut() {
        *ll -= log_jac;
    }
    let s = DMatrix::from_diagonal(&DVector::from_column_slice(&scale));
    for c in fit.gmm.components.iter_mut() {
        c.mean = DVector::from_fn(d, |j, _| center[j] + scale[j] * c.mean[j]);
        c.cov = &s * &c.cov * &s;
    }
    Ok(fit)
}

fn fit_gmm_standardized(samples: &[Vec<f64>], k: usize, opts: &EmOptions) -> Result<EmFit> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(opts.seed);
    let seeds = kmeans_pp_seeds(samples, k, &mut rng);
    let d2 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
    // Hard assignment to the nearest seed gives the initial responsibilities.
    let mut resp: Vec<Vec<f64>> = samples
        .iter()
        .map(|s| {
            let j = (0..k)
                .min_by(|&a, &b| d2(s, &samples[seeds[a]]).total_cmp(&d2(s, &samples[seeds[b]])))
                .unwrap();
            let mut r = vec![0.0; k];
            r[j] = 1.0;
            r
        })
        .collect();
    let mut gmm = m_step(samples, &resp, k, opts)?;
    let mut trace = Vec::new();
    let mut converged = false;
    for _ in 0..opts.max_iter {
        let (ll, r) = gmm.responsibilities(samples)?;
        resp = r;
        if let Some(&prev) = trace.last() {
            let prev: f64 = prev;
            trace.push(ll);
            if (ll - prev).abs() <= opts.tol * prev.abs().max(1.0) {
                converged = true;
                break;
            }
        } else {
            trace.push(ll);
        }
        gmm = m_step(samples, &resp, k, opts)?;
    }
    Ok(EmFit { gmm, log_likelihood: trace, converged })
}

/// Cubic label-count curve over concentration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CountCurve {
    /// Coefficients from the cubic term down to the constant.
    pub coefficients: [f64; 4],
    pub valid_range: [f64; 2],
}

impl CountCurve {
    pub fn eval(&self, concentration: f64) -> f64 {
        let x = concentration.clamp(self.valid_range[0], self.valid_range[1]);
        let [a, b, c, d] = self.coefficients;
        (((a * x + b) * x + c) * x + d).max(0.0)
    }
}

/// Least-squares polynomial of the given degree; returns coefficients from
/// the highest power down and the residual sum of squares.
pub fn polyfit(points: &[(f64, f64)], degree: usize) -> Result<(Vec<f64>, f64)> {
    let scale = points.iter().map(|p| p.0.abs()).fold(0.0, f64::max).max(1e-12);
    let n = points.len();
    let a = DMatrix::from_fn(n, degree + 1, |i, j| (points[i].0 / scale).powi((degree - j) as i32));
    let y = DVector::from_iterator(n, points.iter().map(|p| p.1));
    let svd = a.clone().svd(true, true);
    let b = svd.solve(&y, 1e-13).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let resid = (&a * &b - &y).norm_squared();
    let coeffs = (0..=degree).map(|j| b[j] / scale.powi((degree - j) as i32)).collect();
    Ok((coeffs, resid))
}

pub fn fit_count_curve(points: &[(f64, f64)]) -> Result<CountCurve> {
    let mut xs: Vec<f64> = points.iter().map(|p| p.0).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    if xs.len() < 4 {
        return Err(Error::TooFewSamples { needed: 4, got: xs.len() });
    }
    let (c, _) = polyfit(points, 3)?;
    Ok(CountCurve { coefficients: [c[0], c[1], c[2], c[3]], valid_range: [1.0, 400.0] })
}

/// Count model for one reference concentration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistModel {
    pub concentration: f64,
    /// Counts per reference image: cell class first, then debris classes.
    pub counts: Mvn,
}

pub const MODEL_SCHEMA_VERSION: u32 = 1;

/// Complete generative model for synthetic environments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerativeModel {
    pub schema_version: u32,
    /// Physical area of one reference image (μm²).
    pub train_image_area_um2: f64,
    pub count_curve: CountCurve,
    /// Cell shape model in μm units.
    pub cell_model: Mvn,
    /// Debris shape mixture in μm units.
    pub debris_model: Gmm,
    pub dist_models: Vec<DistModel>,
}

static DEFAULT_MODEL_TOML: &str = include_str!("../data/default_model.toml");

impl GenerativeModel {
    /// The shipped, calibrated default model.
    pub fn default_model() -> GenerativeModel {
        Self::from_toml(DEFAULT_MODEL_TOML).expect("shipped model parses")
    }

    pub fn from_toml(s: &str) -> Result<GenerativeModel> {
        let m: GenerativeModel = toml::from_str(s).map_err(|e| Error::Format(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("model serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != MODEL_SCHEMA_VERSION {
            return Err(Error::Format(format!("unsupported model schema {}", self.schema_version)));
        }
        let bad = |m: &str| Err(Error::Format(m.to_string()));
        if self.cell_model.dim() != SHAPE_DIM {
            return bad("cell model must be 7-dimensional");
        }
        if self.debris_model.k() == 0 || self.debris_model.weights.len() != self.debris_model.k() {
            return bad("debris mixture needs matching weights and components");
        }
        if (self.debris_model.weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad("debris weights must sum to 1");
        }
        if self.debris_model.components.iter().any(|c| c.dim() != SHAPE_DIM) {
            return bad("debris components must be 7-dimensional");
        }
        let classes = 1 + self.debris_model.k();
        if self.dist_models.is_empty() || self.dist_models.iter().any(|d| d.counts.dim() != classes) {
            return bad("count models must cover every class");
        }
        if !(self.train_image_area_um2 > 0.0) {
            return bad("training image area must be positive");
        }
        Ok(())
    }

    pub fn debris_classes(&self) -> usize {
        self.debris_model.k()
    }

    /// Count model with the nearest reference concentration.
    pub fn nearest_dist_model(&self, concentration: f64) -> &DistModel {
        self.dist_models
            .iter()
            .min_by(|a, b| {
                (a.concentration - concentration).abs().total_cmp(&(b.concentration - concentration).abs())
            })
            .expect("validated model has count models")
    }

    /// Shape sampler for a label class.
    pub fn shape_sampler(&self, class: LabelClass) -> Result<MvnSampler> {
        match class {
            LabelClass::Cell => Ok(self.cell_model.sampler()),
            LabelClass::Debris(k) if k >= 1 && (k as usize) <= self.debris_model.k() => {
                Ok(self.debris_model.components[k as usize - 1].sampler())
            }
            other => Err(Error::InvalidClass(format!("{other:?}"))),
        }
    }
}

/// Draws a shape for `class`, clamped to valid descriptor ranges.
pub fn sample_shape<R: Rng + ?Sized>(model: &GenerativeModel, class: LabelClass, rng: &mut R) -> Result<ShapeVector> {
    let s = model.shape_sampler(class)?;
    Ok(ShapeVector::from_array_clamped(s.sample(rng).as_slice()))
}
