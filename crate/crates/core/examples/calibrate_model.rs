//! Builds the shipped generative model and calibrates its debris density so
//! that environments at 1 cell/μL leave about 1.1% free space for a 100 μm
//! robot on a 1 cm device.
//!
//! Usage: cargo run --release -p oetharvest --example calibrate_model [out.toml]

use oetharvest::envgen::{generate_environment, GenerationParams};
use oetharvest::scene::compute_free_space;
use oetharvest::shapemodel::{
    fit_count_curve, DistModel, GenerativeModel, Gmm, Mvn, MODEL_SCHEMA_VERSION, TRAINING_CONCENTRATIONS,
};
use rand::SeedableRng;

const TARGET_FREE: f64 = 0.011;
const SEEDS: u64 = 6;
/// Reference image edge: one 3.3 mm field of view.
const IMAGE_EDGE_UM: f64 = 3300.0;

/// Mean and standard deviation of each descriptor, in μm units:
/// area, major, minor, solidity, thickness, fiber length, branches.
type Spec = ([f64; 7], [f64; 7]);

const CELL: Spec = ([78.0, 11.0, 9.0, 0.95, 8.5, 3.0, 1.0], [15.0, 1.2, 1.0, 0.02, 1.0, 1.5, 0.3]);

const DEBRIS: [Spec; 6] = [
    // small granules
    ([30.0, 7.0, 5.5, 0.93, 5.0, 3.0, 1.0], [8.0, 1.0, 0.8, 0.03, 0.8, 1.0, 0.3]),
    // round clumps
    ([180.0, 17.0, 13.0, 0.88, 12.0, 8.0, 1.5], [50.0, 3.0, 2.5, 0.04, 2.0, 3.0, 0.6]),
    // fibers
    ([150.0, 40.0, 6.0, 0.45, 4.0, 38.0, 1.5], [50.0, 10.0, 1.5, 0.1, 1.0, 10.0, 0.5]),
    // branched fragments
    ([350.0, 35.0, 20.0, 0.5, 7.0, 30.0, 4.5], [100.0, 8.0, 5.0, 0.1, 1.5, 8.0, 1.2]),
    // large aggregates
    ([900.0, 40.0, 30.0, 0.8, 22.0, 20.0, 2.0], [250.0, 8.0, 6.0, 0.06, 4.0, 6.0, 0.8]),
    // elongated blobs
    ([400.0, 38.0, 15.0, 0.7, 12.0, 30.0, 2.5], [120.0, 8.0, 3.0, 0.08, 2.5, 8.0, 0.8]),
];

/// Share of each debris class among debris labels.
const DEBRIS_SHARE: [f64; 6] = [0.40, 0.22, 0.12, 0.08, 0.06, 0.12];

/// Size descriptors (area, axes, thickness) are positively correlated.
fn shape_mvn(spec: &Spec) -> Mvn {
    let (mean, sd) = spec;
    let mut corr = [[0.0; 7]; 7];
    for (i, row) in corr.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for &(a, b, r) in &[(0, 1, 0.7), (0, 2, 0.7), (1, 2, 0.5), (0, 4, 0.5), (1, 5, 0.4)] {
        corr[a][b] = r;
        corr[b][a] = r;
    }
    let cov = (0..49).map(|k| corr[k / 7][k % 7] * sd[k / 7] * sd[k % 7]).collect();
    Mvn::new(mean.to_vec(), cov).expect("7x7 covariance")
}

fn dist_mvn(conc: f64, debris_scale: f64) -> Mvn {
    let cells = 1.1 * conc;
    let debris = debris_scale * (1300.0 + 1.5 * conc);
    let mean: Vec<f64> = std::iter::once(cells).chain(DEBRIS_SHARE.iter().map(|s| s * debris)).collect();
    let sd: Vec<f64> = mean.iter().map(|m| 0.15 * m + m.sqrt()).collect();
    Mvn::diagonal(mean, &sd)
}

fn build(debris_scale: f64) -> GenerativeModel {
    let dist_models: Vec<DistModel> = TRAINING_CONCENTRATIONS
        .iter()
        .map(|&c| DistModel { concentration: c, counts: dist_mvn(c, debris_scale) })
        .collect();
    // Label counts of 20 simulated reference images per concentration.
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    let mut points = Vec::new();
    for d in &dist_models {
        let s = d.counts.sampler();
        for _ in 0..20 {
            let n: f64 = s.sample(&mut rng).iter().map(|v| v.max(0.0).round()).sum();
            points.push((d.concentration, n));
        }
    }
    let components: Vec<Mvn> = DEBRIS.iter().map(shape_mvn).collect();
    GenerativeModel {
        schema_version: MODEL_SCHEMA_VERSION,
        train_image_area_um2: IMAGE_EDGE_UM * IMAGE_EDGE_UM,
        count_curve: fit_count_curve(&points).expect("count curve"),
        cell_model: shape_mvn(&CELL),
        debris_model: Gmm { weights: vec![1.0 / 6.0; 6], components },
        dist_models,
    }
}

fn mean_free(model: &GenerativeModel) -> f64 {
    let mut total = 0.0;
    for seed in 0..SEEDS {
        let p = GenerationParams { concentration: 1.0, seed: 1000 + seed, ..Default::default() };
        let env = generate_environment(model, &p).expect("generation");
        total += compute_free_space(&env, 100.0).expect("free space").fraction;
    }
    total / SEEDS as f64
}

fn main() {
    let out = std::env::args().nth(1).unwrap_or_else(|| "crates/core/data/default_model.toml".into());
    // Free space falls monotonically with debris density, so bisect on it.
    let (mut lo, mut hi) = (0.3, 3.0);
    for it in 0..14 {
        let mid = 0.5 * (lo + hi);
        let f = mean_free(&build(mid));
        eprintln!("iter {it}: debris scale {mid:.5} -> free space {:.4}%", 100.0 * f);
        if f > TARGET_FREE {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let scale = 0.5 * (lo + hi);
    let model = build(scale);
    let header = format!(
        "# Default generative model. Shape models are in micrometre units; count\n\
         # models are per {IMAGE_EDGE_UM} x {IMAGE_EDGE_UM} um reference image.\n\
         # Produced by examples/calibrate_model.rs (debris scale {scale:.5}).\n"
    );
    std::fs::write(&out, header + &model.to_toml()).expect("write model");
    eprintln!("wrote {out}");
}
