//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test --release -p oetharvest --test acceptance`. Pass
//! criterion numbers as arguments to run a subset. Failures are reported but
//! only make the process exit non-zero when OETHARVEST_ACCEPTANCE_STRICT=1.

use std::time::{Duration, Instant};

use oetharvest::allocate::{cluster_targets, solve_cvrp, write_route_csv, TargetCluster};
use oetharvest::detect::{build_calibration, detect_microrobots, detect_microspheres, score_detections, write_detections_csv, DetectionParams};
use oetharvest::envgen::{generate_environment, generate_scene, render_image, GenerationParams, RenderParams, SpritePose};
use oetharvest::geom::Point;
use oetharvest::grid::{Grid, Mask};
use oetharvest::pathplan::{perimeter_sweep_conflict, plan_paths, sweep_samples, verify_plan, write_paths_csv, Agent, Outcome, PlanParams, StaticMap};
use oetharvest::scene::{compute_free_space, write_environment, Environment, LabelClass, Robot, WorkingArea};
use oetharvest::shapemodel::{fit_gmm, EmOptions, GenerativeModel};
use oetharvest::sim::{home_slots, paired_sign_test, sweep, write_journeys_csv, write_results_csv, write_sweep_csv, ScenarioResult, SweepSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

type Verdict = (bool, String);

const ALPHA: f64 = 0.05;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn free_space_anchor() -> Verdict {
    let model = GenerativeModel::default_model();
    let n = 50;
    let mut sum = 0.0;
    for seed in 0..n {
        let env = generate_environment(&model, &GenerationParams { seed, ..Default::default() }).expect("generation");
        sum += compute_free_space(&env, 100.0).expect("free space").fraction;
    }
    let mean = sum / n as f64;
    ((mean - 0.011).abs() <= 0.005, format!("mean free space {:.3}% over {n} seeds", 100.0 * mean))
}

/// Random starts and goals on free cells, pairwise separated.
fn random_agents(env: &Environment, m: usize, rng: &mut ChaCha8Rng) -> Option<Vec<Agent>> {
    let free = compute_free_space(env, 100.0).ok()?;
    let cells = free.mask.coords();
    if cells.is_empty() {
        return None;
    }
    let pick = |rng: &mut ChaCha8Rng, taken: &[Point]| {
        (0..200).find_map(|_| {
            let (i, j) = cells[rng.random_range(0..cells.len())];
            let p = env.cell_center(i, j);
            taken.iter().all(|q| q.dist(p) > 2.0 * 100.0 + 3.0 * env.resolution_um).then_some(p)
        })
    };
    let (mut starts, mut goals) = (Vec::new(), Vec::new());
    for _ in 0..m {
        starts.push(pick(rng, &starts)?);
    }
    for _ in 0..m {
        goals.push(pick(rng, &goals)?);
    }
    Some((0..m).map(|k| Agent { robot: Robot::new(k, starts[k]), start: starts[k], goal: goals[k] }).collect())
}

fn planner_soundness() -> Verdict {
    let model = GenerativeModel::default_model();
    let mut r = rng(2);
    let (mut scenarios, mut successes, mut bad) = (0, 0, 0);
    let (mut lo, mut hi) = (1.0f64, 0.0f64);
    let mut seed = 0;
    while scenarios < 100 {
        seed += 1;
        let scale = [0.0, 0.05, 0.1, 0.2, 0.3, 0.45, 0.6, 0.8, 1.0][seed as usize % 9];
        let params = GenerationParams { width_um: 3000.0, height_um: 3000.0, resolution_um: 10.0, density_scale: scale, seed, ..Default::default() };
        let Ok(env) = generate_environment(&model, &params) else { continue };
        let m = r.random_range(1..=5);
        let Some(agents) = random_agents(&env, m, &mut r) else { continue };
        let fraction = compute_free_space(&env, 100.0).expect("free space").fraction;
        lo = lo.min(fraction);
        hi = hi.max(fraction);
        let window = WorkingArea::whole(&env);
        let report = plan_paths(&env, &agents, &window, &PlanParams::default());
        let paths = report.successful_paths();
        successes += paths.len();
        let robots: Vec<Robot> = agents.iter().map(|a| a.robot.clone()).collect();
        if !verify_plan(&env, &paths, &robots, &window).is_clean() {
            bad += 1;
        }
        scenarios += 1;
    }
    (bad == 0, format!("{scenarios} scenarios, {successes} successful paths, {bad} with violations, free space {:.1}%..{:.1}%", 100.0 * lo, 100.0 * hi))
}

fn run_sweep() -> (SweepSpec, Vec<ScenarioResult>, Duration) {
    let t = Instant::now();
    let spec = SweepSpec::default();
    let configs = spec.configs(0);
    let result = sweep(&configs, &GenerativeModel::default_model(), 0).expect("sweep");
    assert!(result.unrunnable.is_empty(), "unrunnable scenarios: {:?}", result.unrunnable);
    (spec, result.results, t.elapsed())
}

fn success_trends(spec: &SweepSpec, results: &[ScenarioResult]) -> Verdict {
    let (nd, nm, ns) = (spec.density_scales.len(), spec.robots.len(), spec.seeds as usize);
    let rate = |d: usize, m: usize, s: usize| results[(d * nm + m) * ns + s].success_rate();
    let mut robots = Vec::new();
    let mut space = Vec::new();
    for s in 0..ns {
        for d in 0..nd {
            for m in 0..nm - 1 {
                if let (Some(a), Some(b)) = (rate(d, m, s), rate(d, m + 1, s)) {
                    robots.push((a, b));
                }
            }
        }
        // Density levels ascend, so free space descends with d.
        for m in 0..nm {
            for d in 0..nd - 1 {
                if let (Some(a), Some(b)) = (rate(d, m, s), rate(d + 1, m, s)) {
                    space.push((a, b));
                }
            }
        }
    }
    let tr = paired_sign_test(robots);
    let ts = paired_sign_test(space);
    let fs: Vec<String> = (0..nd).map(|d| format!("{:.1}%", 100.0 * (0..ns).map(|s| results[d * nm * ns + s].free_space_fraction).sum::<f64>() / ns as f64)).collect();
    (
        tr.p_value < ALPHA && ts.p_value < ALPHA,
        format!(
            "more robots lowers success: {}+/{}-/{}= p={:.2e}; more free space raises success: {}+/{}-/{}= p={:.2e}; free space levels {}",
            tr.pos, tr.neg, tr.ties, tr.p_value, ts.pos, ts.neg, ts.ties, ts.p_value, fs.join(", ")
        ),
    )
}

fn failure_shares(results: &[ScenarioResult]) -> Verdict {
    let share = |pred: &dyn Fn(usize) -> bool| {
        let (isg, pf) = results.iter().filter(|r| pred(r.robots)).fold((0, 0), |(a, b), r| (a + r.invalid_start_goal, b + r.plan_failure));
        (isg as f64 / (isg + pf).max(1) as f64, isg + pf)
    };
    let (one, n1) = share(&|m| m == 1);
    let (many, n2) = share(&|m| m >= 2);
    let ok = (0.15..=0.57).contains(&one) && (0.50..=1.0).contains(&many);
    (ok, format!("invalid start/goal share m=1: {one:.3} of {n1} failures (band 0.15..0.57); m>=2: {many:.3} of {n2} failures (band 0.50..1.00)"))
}

fn brute_force_cvrp(cs: &[TargetCluster], depots: &[Point], q: usize) -> f64 {
    let pos: Vec<Point> = cs.iter().map(|c| c.centroid()).collect();
    let dem: Vec<usize> = cs.iter().map(|c| c.n()).collect();
    let n = cs.len();
    let near = |p: Point| depots.iter().map(|d| d.dist(p)).fold(f64::INFINITY, f64::min);
    let via = |a: Point, b: Point| depots.iter().map(|d| a.dist(*d) + d.dist(b)).fold(f64::INFINITY, f64::min);
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = f64::INFINITY;
    loop {
        // Every subset of consecutive pairs may be split by a depot visit.
        for mask in 0u32..(1 << (n - 1)) {
            let mut load = dem[perm[0]];
            let mut len = near(pos[perm[0]]);
            let mut ok = true;
            for g in 1..n {
                let (a, b) = (pos[perm[g - 1]], pos[perm[g]]);
                if mask >> (g - 1) & 1 == 1 {
                    len += via(a, b);
                    load = dem[perm[g]];
                } else {
                    len += a.dist(b);
                    load += dem[perm[g]];
                    if load > q {
                        ok = false;
                        break;
                    }
                }
            }
            if ok {
                best = best.min(len + near(pos[perm[n - 1]]));
            }
        }
        let Some(i) = (0..n - 1).rev().find(|&i| perm[i] < perm[i + 1]) else { break };
        let j = (i + 1..n).rev().find(|&j| perm[j] > perm[i]).expect("successor");
        perm.swap(i, j);
        perm[i + 1..].reverse();
    }
    best
}

fn cvrp_instance(seed: u64) -> (Vec<TargetCluster>, Vec<Point>, usize) {
    let mut r = rng(seed);
    let n = r.random_range(1..=7);
    let q = r.random_range(2..=12);
    let cs = (0..n)
        .map(|_| {
            let k = r.random_range(1..=q.min(8));
            let c = Point::new(r.random_range(0.0..8000.0), r.random_range(0.0..8000.0));
            TargetCluster::new((0..k).map(|_| c + Point::new(r.random_range(-80.0..80.0), r.random_range(-80.0..80.0))).collect()).expect("cluster")
        })
        .collect();
    let depots = (0..r.random_range(1..=2)).map(|_| Point::new(r.random_range(0.0..8000.0), r.random_range(0.0..8000.0))).collect();
    (cs, depots, q)
}

fn cvrp_quality() -> Verdict {
    let mut worst: f64 = 0.0;
    for seed in 0..200 {
        let (cs, depots, q) = cvrp_instance(seed);
        let route = solve_cvrp(&cs, &depots, q).expect("route");
        worst = worst.max(route.total_length / brute_force_cvrp(&cs, &depots, q));
    }
    (worst <= 1.10 + 1e-9, format!("worst ratio to optimum {worst:.4} over 200 instances"))
}

fn clustering_constraints() -> Verdict {
    let (wa, pad) = (3300.0, 200.0);
    let (mut clusters, mut bad) = (0, 0);
    for seed in 0..1000u64 {
        let mut r = rng(seed);
        let n = r.random_range(1..=60);
        let q = r.random_range(1..=10);
        let spread = r.random_range(500.0..9000.0);
        let targets: Vec<Point> = (0..n).map(|_| Point::new(r.random_range(0.0..spread), r.random_range(0.0..spread))).collect();
        let cs = cluster_targets(&targets, (wa, wa), q, pad, seed).expect("clusters");
        clusters += cs.len();
        let total: usize = cs.iter().map(|c| c.n()).sum();
        bad += cs.iter().filter(|c| c.n() > q || c.bbox.width() + pad > wa || c.bbox.height() + pad > wa).count();
        if total != n {
            bad += 1;
        }
    }
    (bad == 0, format!("{clusters} clusters over 1000 instances, {bad} violations"))
}

fn any_angle_optimality() -> Verdict {
    let env = Environment::empty(3000.0, 3000.0, 10.0).expect("env");
    let window = WorkingArea::whole(&env);
    let mut r = rng(7);
    let mut worst: f64 = f64::NEG_INFINITY;
    let mut failed = 0;
    for k in 0..100 {
        let mut p = || Point::new(r.random_range(120.0..2880.0), r.random_range(120.0..2880.0));
        let (a, b) = (p(), p());
        let agent = Agent { robot: Robot::new(k, a), start: a, goal: b };
        match &plan_paths(&env, &[agent], &window, &PlanParams::default()).outcomes[0].1 {
            Outcome::Success(path) => worst = worst.max(path.length() - a.dist(b)),
            _ => failed += 1,
        }
    }
    (failed == 0 && worst <= env.resolution_um, format!("worst excess {worst:.2} um (cell 10 um), {failed} failures over 100 pairs"))
}

fn dense_sweep(blocked: &Mask, res: f64, a: Point, b: Point, r: f64) -> Option<usize> {
    let centers: Vec<Point> = blocked.coords().into_iter().map(|(i, j)| Point::new((i as f64 + 0.5) * res, (j as f64 + 0.5) * res)).collect();
    sweep_samples(a, b, res / 4.0).iter().position(|&p| centers.iter().any(|c| c.dist(p) <= r))
}

fn perimeter_equivalence() -> Verdict {
    let mut r = rng(8);
    let (mut disagree, mut hits) = (0, 0);
    for _ in 0..10_000 {
        let (w, h, res) = (32, 32, 5.0);
        let density = r.random_range(0.002..0.03);
        let blocked: Mask = Grid::from_vec(w, h, (0..w * h).map(|_| r.random_bool(density)).collect());
        let radius = r.random_range(2.0..30.0);
        let mut p = || Point::new(r.random_range(0.0..160.0), r.random_range(0.0..160.0));
        let (a, b) = (p(), p());
        let fast = perimeter_sweep_conflict(&blocked, res, a, b, radius);
        if fast != dense_sweep(&blocked, res, a, b, radius) {
            disagree += 1;
        }
        hits += fast.is_some() as usize;
    }
    (disagree == 0, format!("{disagree} disagreements over 10000 segments ({hits} conflicting)"))
}

fn em_correctness() -> Verdict {
    let (mut nonmono, mut missed) = (0, 0);
    let mut worst: f64 = 0.0;
    for seed in 0..50u64 {
        let mut r = rng(100 + seed);
        let d = r.random_range(2..=4);
        let mu: Vec<Vec<f64>> = (0..2).map(|_| (0..d).map(|_| r.random_range(20.0..100.0)).collect()).collect();
        let sd: Vec<f64> = (0..d).map(|_| r.random_range(1.0..4.0)).collect();
        let samples: Vec<Vec<f64>> = (0..1000)
            .map(|k| (0..d).map(|i| mu[k % 2][i] + sd[i] * Normal::new(0.0, 1.0).expect("normal").sample(&mut r)).collect())
            .collect();
        let fit = fit_gmm(&samples, 2, &EmOptions { seed, ..Default::default() }).expect("em");
        let ll = &fit.log_likelihood;
        if ll.windows(2).any(|w| w[1] < w[0] - 1e-9 * w[0].abs().max(1.0)) {
            nonmono += 1;
        }
        let est: Vec<Vec<f64>> = fit.gmm.components.iter().map(|c| c.mean.iter().copied().collect()).collect();
        let rel = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| ((x - y) / y).abs()).fold(0.0, f64::max);
        let err = (rel(&est[0], &mu[0]).max(rel(&est[1], &mu[1]))).min(rel(&est[0], &mu[1]).max(rel(&est[1], &mu[0])));
        worst = worst.max(err);
        if err > 0.05 {
            missed += 1;
        }
    }
    (nonmono == 0 && missed == 0, format!("{nonmono} non-monotone runs, {missed} missed recoveries, worst mean error {:.2}% over 50 runs", 100.0 * worst))
}

fn detection_round_trip() -> Verdict {
    let model = GenerativeModel::default_model();
    let params = DetectionParams::default();
    let (mut tp, mut npred, mut ntruth) = (0usize, 0usize, 0usize);
    for seed in 0..156u64 {
        let gp = GenerationParams { concentration: 400.0, width_um: 500.0, height_um: 500.0, resolution_um: 1.0, seed, ..Default::default() };
        let scene = generate_scene(&model, &gp).expect("scene");
        let truth: Vec<Point> = scene.regions.iter().filter(|r| r.class == LabelClass::Cell).map(|r| r.centroid_px()).collect();
        let img = render_image(&scene.env, &RenderParams::default(), &mut rng(seed));
        let pred: Vec<Point> = detect_microspheres(&img, &params).iter().map(|s| s.center).collect();
        tp += score_detections(&pred, &truth, 5.0).true_positives;
        npred += pred.len();
        ntruth += truth.len();
    }
    let (p, rc) = (tp as f64 / npred.max(1) as f64, tp as f64 / ntruth.max(1) as f64);
    let f1 = if p + rc > 0.0 { 2.0 * p * rc / (p + rc) } else { 0.0 };

    let mut r = rng(10);
    let (mut worst_c, mut worst_a, mut missed) = (0.0f64, 0.0f64, 0);
    let sector = std::f64::consts::PI / 3.0;
    for _ in 0..50 {
        let pose = SpritePose { center: Point::new(r.random_range(140.0..160.0), r.random_range(140.0..160.0)), orientation: r.random_range(0.0..std::f64::consts::TAU), radius: r.random_range(90.0..110.0) };
        let env = Environment::empty(300.0, 300.0, 1.0).expect("env");
        let img = render_image(&env, &RenderParams { sprites: vec![pose], ..Default::default() }, &mut r);
        match detect_microrobots(&img, &params).first() {
            Some(d) => {
                worst_c = worst_c.max(d.center.dist(pose.center));
                let e = (d.orientation - pose.orientation).rem_euclid(sector);
                worst_a = worst_a.max(e.min(sector - e).to_degrees());
            }
            None => missed += 1,
        }
    }
    (
        f1 >= 0.55 && missed == 0 && worst_c <= 2.0 && worst_a <= 5.0,
        format!("cell F1 {f1:.3} (P {p:.3}, R {rc:.3}, {ntruth} cells, 156 images); robots: {missed} missed, center error <= {worst_c:.2} px, orientation error <= {worst_a:.2} deg"),
    )
}

fn calibration_accuracy() -> Verdict {
    let mut r = rng(11);
    let noise = Normal::new(0.0, 0.2).expect("normal");
    let f = |p: Point| Point::new(12.0 + 1.15 * p.x + 0.08 * p.y, -6.0 - 0.05 * p.x + 1.1 * p.y);
    let mut obs = Vec::new();
    for row in 0..9 {
        for col in 0..9 {
            let q = Point::new(40.0 + 60.0 * col as f64, 30.0 + 50.0 * row as f64);
            let cam = f(q) + Point::new(noise.sample(&mut r), noise.sample(&mut r));
            obs.push((cam, q));
        }
    }
    let map = build_calibration(&obs).expect("calibration");
    let worst = (0..100)
        .map(|_| {
            let q = Point::new(r.random_range(40.0..520.0), r.random_range(30.0..430.0));
            map.map(f(q)).dist(q)
        })
        .fold(0.0, f64::max);
    (worst <= 0.5, format!("max mapping error {worst:.3} px over 100 probes"))
}

fn planning_scale() -> Verdict {
    let model = GenerativeModel::default_model();
    let gp = GenerationParams { density_scale: 0.2, seed: 12, ..Default::default() };
    let zone = gp.centered_zone(1000.0);
    let env = generate_environment(&model, &GenerationParams { start_zone: Some(zone), ..gp }).expect("env");
    let window = WorkingArea::whole(&env);
    let homes = home_slots(&zone, 5, 100.0).expect("homes");
    let map = StaticMap::new(&env, &window);
    let reach = map.reachable_from(homes[0], 105.0);
    let cells = reach.coords();
    let center = zone.center();
    let mut r = rng(12);
    let mut goals: Vec<Point> = Vec::new();
    while goals.len() < 5 {
        let (i, j) = cells[r.random_range(0..cells.len())];
        let g = env.cell_center(i, j);
        if g.dist(center) >= 3000.0 && goals.iter().all(|o| o.dist(g) >= 400.0) {
            goals.push(g);
        }
    }
    let agents: Vec<Agent> = (0..5).map(|k| Agent { robot: Robot::new(k, homes[k]), start: homes[k], goal: goals[k] }).collect();
    let t = Instant::now();
    let report = plan_paths(&env, &agents, &window, &PlanParams::default());
    let took = t.elapsed();
    let ok = report.outcomes.iter().filter(|o| o.1.is_success()).count();
    let robots: Vec<Robot> = agents.iter().map(|a| a.robot.clone()).collect();
    let clean = verify_plan(&env, &report.successful_paths(), &robots, &window).is_clean();
    let fraction = compute_free_space(&env, 100.0).expect("free space").fraction;
    (
        took.as_secs_f64() <= 60.0 && clean,
        format!("{}x{} cells, free space {:.1}%, 5 robots planned in {:.1} s ({ok} succeeded, verified clean: {clean})", env.nx(), env.ny(), 100.0 * fraction, took.as_secs_f64()),
    )
}

fn artifacts(jobs: usize) -> Vec<Vec<u8>> {
    let model = GenerativeModel::default_model();
    let mut out = Vec::new();
    let gp = GenerationParams { width_um: 2000.0, height_um: 2000.0, resolution_um: 10.0, density_scale: 0.2, seed: 13, ..Default::default() };
    let env = generate_environment(&model, &gp).expect("env");
    let mut buf = Vec::new();
    write_environment(&env, &mut buf).expect("env");
    out.push(buf);

    let mut r = rng(13);
    let agents = random_agents(&env, 3, &mut r).expect("agents");
    let report = plan_paths(&env, &agents, &WorkingArea::whole(&env), &PlanParams::default());
    let mut buf = Vec::new();
    write_paths_csv(&report.successful_paths(), &mut buf).expect("paths");
    out.push(buf);

    let targets: Vec<Point> = (0..20).map(|_| Point::new(r.random_range(0.0..6000.0), r.random_range(0.0..6000.0))).collect();
    let cs = cluster_targets(&targets, (3300.0, 3300.0), 8, 200.0, 13).expect("clusters");
    let depots = [Point::new(3000.0, 3000.0)];
    let route = solve_cvrp(&cs, &depots, 8).expect("route");
    let mut buf = Vec::new();
    write_route_csv(&route, &cs, &depots, &mut buf).expect("route");
    out.push(buf);

    let scene = generate_scene(&model, &GenerationParams { concentration: 400.0, width_um: 300.0, height_um: 300.0, resolution_um: 1.0, seed: 13, ..Default::default() }).expect("scene");
    let img = render_image(&scene.env, &RenderParams::default(), &mut rng(13));
    let params = DetectionParams::default();
    let mut buf = Vec::new();
    write_detections_csv(&detect_microrobots(&img, &params), &detect_microspheres(&img, &params), &mut buf).expect("detections");
    out.push(buf);

    let spec = SweepSpec { seeds: 3, robots: vec![1, 3], density_scales: vec![0.1, 0.5], ..SweepSpec::default() };
    let result = sweep(&spec.configs(13), &model, jobs).expect("sweep");
    let journeys: Vec<_> = result.results.iter().flat_map(|r| r.journeys.iter().cloned()).collect();
    let mut bufs = [Vec::new(), Vec::new(), Vec::new()];
    write_sweep_csv(&result.rows, &mut bufs[0]).expect("sweep csv");
    write_results_csv(&result.results, &mut bufs[1]).expect("results csv");
    write_journeys_csv(&journeys, &mut bufs[2]).expect("journeys csv");
    out.extend(bufs);
    out
}

fn determinism() -> Verdict {
    let a = artifacts(1);
    let b = artifacts(1);
    let c = artifacts(2);
    let same = a == b && a == c;
    let bytes: usize = a.iter().map(Vec::len).sum();
    (same, format!("{} CSV artifacts ({bytes} bytes) byte-identical across re-runs and thread counts: {same}", a.len()))
}

fn main() {
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wanted = |k: usize| only.is_empty() || only.contains(&k);
    let mut failed = Vec::new();
    let mut report = |k: usize, name: &str, (ok, detail): Verdict, took: Duration| {
        println!("[{}] {k:>2} {name}: {detail} ({:.1} s)", if ok { "PASS" } else { "FAIL" }, took.as_secs_f64());
        if !ok {
            failed.push(k);
        }
    };
    let timed = |f: fn() -> Verdict| {
        let t = Instant::now();
        let v = f();
        (v, t.elapsed())
    };
    let simple: [(usize, &str, fn() -> Verdict); 5] = [
        (1, "free-space anchor", free_space_anchor),
        (2, "planner soundness", planner_soundness),
        (5, "CVRP quality", cvrp_quality),
        (6, "clustering constraints", clustering_constraints),
        (7, "single-agent any-angle optimality", any_angle_optimality),
    ];
    for (k, name, f) in &simple[..2] {
        if wanted(*k) {
            let (v, t) = timed(*f);
            report(*k, name, v, t);
        }
    }
    if wanted(3) || wanted(4) {
        let (spec, results, took) = run_sweep();
        if wanted(3) {
            report(3, "success trends", success_trends(&spec, &results), took);
        }
        if wanted(4) {
            report(4, "failure-share anchors", failure_shares(&results), took);
        }
    }
    let rest: [(usize, &str, fn() -> Verdict); 6] = [
        (8, "perimeter-check equivalence", perimeter_equivalence),
        (9, "EM correctness", em_correctness),
        (10, "detection round-trip", detection_round_trip),
        (11, "calibration accuracy", calibration_accuracy),
        (12, "planning scale", planning_scale),
        (13, "determinism", determinism),
    ];
    for (k, name, f) in simple[2..].iter().chain(rest.iter()) {
        if wanted(*k) {
            let (v, t) = timed(*f);
            report(*k, name, v, t);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all selected criteria passed");
    } else {
        println!("acceptance: failed criteria {failed:?}");
        if std::env::var("OETHARVEST_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
            std::process::exit(1);
        }
    }
}
