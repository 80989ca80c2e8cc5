//! Harvesting experiments: scenario assembly, journeys over the route,
//! success metrics and parameter sweeps.

use std::collections::HashMap;
use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::allocate::{assign_robots, cluster_targets, match_targets, solve_cvrp, AssignParams, Fleet, Route, TargetCluster};
use crate::envgen::{generate_scene, DensityMode, GeneratedScene, GenerationParams, RegionInstance};
use crate::error::{Error, Result};
use crate::geom::{Point, Rect};
use crate::grid::Mask;
use crate::pathplan::{effective_radius, plan_paths_around, verify_plan, Agent, Outcome, PlanParams, PlanReport, StaticMap, TimedPath};
use crate::scene::{compute_free_space, fit_working_area, Environment, LabelClass, Robot, WorkingArea};
use crate::shapemodel::GenerativeModel;

/// Independent seed for a named sub-stream of a root seed.
pub fn sub_seed(root: u64, stream: &str) -> u64 {
    // FNV-1a over the name, then a splitmix64 finalizer.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in stream.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut z = root ^ h;
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub width_um: f64,
    pub height_um: f64,
    pub resolution_um: f64,
    /// Edge of the empty square depot zone at the device center.
    pub depot_edge_um: f64,
    pub robots: usize,
    pub robot_radius_um: f64,
    pub robot_capacity: usize,
    pub robot_speed_um_s: f64,
    pub concentration: f64,
    pub density_scale: f64,
    pub mode: DensityMode,
    pub cell_count_override: Option<usize>,
    /// Edge of the square working area.
    pub working_area_um: f64,
    pub seed: u64,
    pub plan: PlanParams,
    pub assign: AssignParams,
    /// Run the brute-force verifier on every leg.
    pub verify: bool,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            width_um: 10_000.0,
            height_um: 10_000.0,
            resolution_um: 5.0,
            depot_edge_um: 1000.0,
            robots: 1,
            robot_radius_um: Robot::DEFAULT_RADIUS_UM,
            robot_capacity: Robot::DEFAULT_CAPACITY,
            robot_speed_um_s: Robot::DEFAULT_SPEED_UM_S,
            concentration: 1.0,
            density_scale: 1.0,
            mode: DensityMode::Uniform,
            cell_count_override: None,
            working_area_um: WorkingArea::DEFAULT_EXTENT_UM,
            seed: 0,
            plan: PlanParams::default(),
            assign: AssignParams::default(),
            verify: true,
        }
    }
}

impl ScenarioConfig {
    pub fn device(&self) -> Rect {
        Rect::new(0.0, 0.0, self.width_um, self.height_um)
    }

    pub fn depot_zone(&self) -> Rect {
        let (cx, cy, h) = (self.width_um / 2.0, self.height_um / 2.0, self.depot_edge_um / 2.0);
        Rect::new(cx - h, cy - h, cx + h, cy + h)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.into()));
        if !(self.width_um > 0.0 && self.height_um > 0.0 && self.resolution_um > 0.0) {
            return bad("device extent and resolution must be positive");
        }
        if !(1..=64).contains(&self.robots) {
            return bad("robots must be in 1..=64");
        }
        if !(self.robot_radius_um > 0.0 && self.robot_speed_um_s > 0.0) || self.robot_capacity == 0 {
            return bad("robot radius, speed and capacity must be positive");
        }
        if !(self.depot_edge_um > 0.0) || self.depot_edge_um > self.width_um.min(self.height_um) {
            return bad("depot zone must lie inside the device");
        }
        if !(self.working_area_um >= self.depot_edge_um) {
            return bad("working area must contain the depot zone");
        }
        if self.working_area_um > self.width_um.min(self.height_um) {
            return Err(Error::WorkingAreaExceedsDevice);
        }
        Ok(())
    }

    pub fn generation_params(&self) -> GenerationParams {
        GenerationParams {
            concentration: self.concentration,
            mode: self.mode,
            density_scale: self.density_scale,
            width_um: self.width_um,
            height_um: self.height_um,
            resolution_um: self.resolution_um,
            seed: sub_seed(self.seed, "envgen"),
            start_zone: Some(self.depot_zone()),
            cell_count_override: self.cell_count_override,
            ..GenerationParams::default()
        }
    }

    /// Robots in their home slots, ids and priorities `0..m`.
    pub fn fleet(&self) -> Result<Fleet> {
        let homes = home_slots(&self.depot_zone(), self.robots, self.robot_radius_um)?;
        let robots = homes
            .into_iter()
            .enumerate()
            .map(|(i, c)| Robot { radius_um: self.robot_radius_um, capacity: self.robot_capacity, speed_um_s: self.robot_speed_um_s, ..Robot::new(i, c) })
            .collect();
        Fleet::new(robots)
    }
}

/// Grid of `m` home positions spaced three radii apart, centered in the
/// zone.
pub fn home_slots(zone: &Rect, m: usize, radius: f64) -> Result<Vec<Point>> {
    let cols = (m as f64).sqrt().ceil() as usize;
    let rows = m.div_ceil(cols);
    let s = 3.0 * radius;
    let (w, h) = ((cols - 1) as f64 * s, (rows - 1) as f64 * s);
    if w + 2.0 * radius > zone.width() || h + 2.0 * radius > zone.height() {
        return Err(Error::InvalidParameter(format!("{m} robots do not fit in the depot zone")));
    }
    let c = zone.center();
    Ok((0..m).map(|k| Point::new(c.x - w / 2.0 + (k % cols) as f64 * s, c.y - h / 2.0 + (k / cols) as f64 * s)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FailureCause {
    InvalidStartGoal,
    PlanFailure,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Leg {
    Out,
    Back,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum JourneyOutcome {
    Success,
    Failed { leg: Leg, cause: FailureCause },
}

/// One robot's out-and-back trip to one target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JourneyRecord {
    /// Position of the cluster in the route.
    pub stop: usize,
    pub cluster: usize,
    pub round: usize,
    pub robot: usize,
    /// Index of the target among the generated cells.
    pub target: usize,
    pub outcome: JourneyOutcome,
    pub length_um: f64,
    pub duration_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub seed: u64,
    pub robots: usize,
    pub free_space_fraction: f64,
    pub targets: usize,
    pub journeys_attempted: usize,
    pub journeys_succeeded: usize,
    pub invalid_start_goal: usize,
    pub plan_failure: usize,
    pub collected: usize,
    pub assigned_failed: usize,
    pub never_assigned: usize,
    /// False if the verifier found a conflict on any leg (never expected).
    pub verified_clean: bool,
    pub journeys: Vec<JourneyRecord>,
}

impl ScenarioResult {
    pub fn success_rate(&self) -> Option<f64> {
        (self.journeys_attempted > 0).then(|| self.journeys_succeeded as f64 / self.journeys_attempted as f64)
    }
}

/// Paths of one planning leg, for artifacts.
#[derive(Debug, Clone, PartialEq)]
pub struct LegTrace {
    pub stop: usize,
    pub round: usize,
    pub leg: Leg,
    pub window: WorkingArea,
    pub robots: Vec<Robot>,
    pub paths: Vec<TimedPath>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioTrace {
    pub env: Environment,
    pub depot: Point,
    pub clusters: Vec<TargetCluster>,
    pub route: Route,
    pub legs: Vec<LegTrace>,
}

pub fn run_scenario(config: &ScenarioConfig, model: &GenerativeModel) -> Result<ScenarioResult> {
    config.validate()?;
    let scene = generate_scene(model, &config.generation_params())?;
    run(config, scene, false).map(|r| r.0)
}

/// [`run_scenario`] that also returns the environment, route and paths.
pub fn run_scenario_traced(config: &ScenarioConfig, model: &GenerativeModel) -> Result<(ScenarioResult, ScenarioTrace)> {
    config.validate()?;
    let scene = generate_scene(model, &config.generation_params())?;
    run(config, scene, true).map(|(r, t)| (r, t.expect("traced")))
}

/// Runs the journeys on a prepared scene; its cell regions are the
/// targets. The scene must match the configured device and resolution.
pub fn run_on_scene(config: &ScenarioConfig, scene: GeneratedScene) -> Result<ScenarioResult> {
    config.validate()?;
    let env = &scene.env;
    if (env.width_um - config.width_um).abs() > 1e-9 || (env.height_um - config.height_um).abs() > 1e-9 || (env.resolution_um - config.resolution_um).abs() > 1e-12 {
        return Err(Error::InvalidParameter("scene does not match the configured device".into()));
    }
    run(config, scene, false).map(|r| r.0)
}

fn set_region(env: &mut Environment, region: &RegionInstance, from: LabelClass, to: LabelClass) {
    let (ax, ay) = region.anchor;
    for (x, y) in region.mask.coords() {
        let (i, j) = (ax + x, ay + y);
        if i < env.nx() && j < env.ny() && *env.labels.get(i, j) == from {
            env.labels.set(i, j, to);
        }
    }
}

fn region_center(env: &Environment, region: &RegionInstance) -> Point {
    region.centroid_px() * env.resolution_um
}

fn run(config: &ScenarioConfig, scene: GeneratedScene, traced: bool) -> Result<(ScenarioResult, Option<ScenarioTrace>)> {
    let mut env = scene.env;
    let initial_env = traced.then(|| env.clone());
    let r = config.robot_radius_um;
    let free_space_fraction = compute_free_space(&env, r)?.fraction;
    let device = config.device();
    let zone = config.depot_zone();
    let depot = zone.center();
    let wa = config.working_area_um;
    let fleet = config.fleet()?;
    let homes: Vec<Point> = fleet.robots.iter().map(|b| b.center).collect();
    let q_s = fleet.capacity();

    let regions: Vec<&RegionInstance> = scene.regions.iter().filter(|g| g.class == LabelClass::Cell).collect();
    let centers: Vec<Point> = regions.iter().map(|g| region_center(&env, g)).collect();
    let zone_corners = [Point::new(zone.x0, zone.y0), Point::new(zone.x1, zone.y1)];
    let corners = |p: Point| [Point::new(p.x - r, p.y - r), Point::new(p.x + r, p.y + r)];
    // A target is harvestable when one working area can hold both the depot
    // zone and a robot sitting on the target.
    let reachable: Vec<usize> = (0..centers.len())
        .filter(|&t| {
            let mut pts = zone_corners.to_vec();
            pts.extend(corners(centers[t]));
            let bb = Rect::bounding(&pts).expect("non-empty");
            bb.width() <= wa && bb.height() <= wa && device.contains_disk(centers[t], r)
        })
        .collect();
    let pts: Vec<Point> = reachable.iter().map(|&t| centers[t]).collect();
    let clusters = cluster_targets(&pts, (wa, wa), q_s, 2.0 * r, sub_seed(config.seed, "allocation"))?;
    let route = solve_cvrp(&clusters, &[depot], q_s)?;
    let mut by_point: HashMap<(u64, u64), Vec<usize>> = HashMap::new();
    for &t in reachable.iter().rev() {
        by_point.entry((centers[t].x.to_bits(), centers[t].y.to_bits())).or_default().push(t);
    }
    let cluster_ids: Vec<Vec<usize>> = clusters
        .iter()
        .map(|c| c.targets.iter().map(|p| by_point.get_mut(&(p.x.to_bits(), p.y.to_bits())).and_then(|v| v.pop()).expect("clustered target")).collect())
        .collect();

    let mut park_rng = ChaCha8Rng::seed_from_u64(sub_seed(config.seed, "parking"));
    let mut journeys = Vec::new();
    let mut legs = Vec::new();
    let mut verified_clean = true;
    let (mut collected, mut assigned_failed) = (0, 0);

    for (stop, &ci) in route.cluster_order().iter().enumerate() {
        let mut window_pts = zone_corners.to_vec();
        for &t in &cluster_ids[ci] {
            window_pts.extend(corners(centers[t]));
        }
        let window = fit_working_area(&window_pts, wa, wa, &device)?;
        let free = compute_free_space(&env, fleet.max_radius())?;
        let mut remaining = cluster_ids[ci].clone();
        let mut round = 0;
        while !remaining.is_empty() {
            let sub = TargetCluster::new(remaining.iter().map(|&t| centers[t]).collect())?;
            // Every round starts from the home slots.
            let mut goals: Vec<(Option<Point>, Option<usize>)>;
            let leftover: Vec<usize>;
            match assign_robots(&sub, &fleet, &env, &free, &window, &config.assign, &mut park_rng) {
                Ok(a) => {
                    goals = a.assignments.iter().map(|x| (Some(x.goal), x.target.map(|k| remaining[k]))).collect();
                    leftover = a.leftover.iter().map(|&k| remaining[k]).collect();
                }
                Err(Error::NoIdleParking) => {
                    // Idle robots stay home.
                    let (matched, left) = match_targets(&sub, &fleet);
                    goals = matched.iter().map(|m| (m.map(|k| centers[remaining[k]]), m.map(|k| remaining[k]))).collect();
                    leftover = left.iter().map(|&k| remaining[k]).collect();
                }
                Err(e) => return Err(e),
            }

            // Out leg: the round's targets are destinations, not obstacles.
            let mut env_out = env.clone();
            for &(_, t) in &goals {
                if let Some(t) = t {
                    set_region(&mut env_out, regions[t], LabelClass::Cell, LabelClass::Free);
                }
            }
            let map_out = StaticMap::new(&env_out, &window);
            let r_eff = effective_radius(&fleet.robots[0], env.resolution_um);
            let reach = map_out.reachable_from(homes[0], r_eff);
            for (i, g) in goals.iter_mut().enumerate() {
                if let (Some(p), Some(_)) = *g {
                    g.0 = Some(approach_pose(&map_out, &reach, homes[i], p, r, r_eff));
                }
            }
            let movers: Vec<usize> = (0..fleet.m()).filter(|&i| goals[i].0.is_some()).collect();
            let agents: Vec<Agent> = movers.iter().map(|&i| Agent { robot: fleet.robots[i].clone(), start: homes[i], goal: goals[i].0.expect("mover") }).collect();
            let parked: Vec<usize> = (0..fleet.m()).filter(|&i| goals[i].0.is_none()).collect();
            let fixed: Vec<(Robot, TimedPath)> = parked.iter().map(|&i| (fleet.robots[i].clone(), TimedPath::stationary(fleet.robots[i].id, homes[i]))).collect();
            let out = run_leg(config, &env_out, &map_out, &window, &fixed, &agents, &fleet.robots, &mut verified_clean);
            let out_ok: Vec<bool> = (0..fleet.m()).map(|i| movers.iter().position(|&k| k == i).is_some_and(|k| out.outcomes[k].1.is_success())).collect();
            if traced {
                legs.push(LegTrace { stop, round, leg: Leg::Out, window, robots: fleet.robots.clone(), paths: out.trajectories(&agents) });
            }

            // Collected targets leave the device with the robot.
            for (i, &(_, t)) in goals.iter().enumerate() {
                if let (Some(t), true) = (t, out_ok[i]) {
                    set_region(&mut env, regions[t], LabelClass::Cell, LabelClass::Free);
                }
            }
            let back_movers: Vec<usize> = (0..fleet.m()).filter(|&i| out_ok[i]).collect();
            let back_agents: Vec<Agent> = back_movers.iter().map(|&i| Agent { robot: fleet.robots[i].clone(), start: goals[i].0.expect("mover"), goal: homes[i] }).collect();
            let fixed: Vec<(Robot, TimedPath)> = (0..fleet.m()).filter(|&i| !out_ok[i]).map(|i| (fleet.robots[i].clone(), TimedPath::stationary(fleet.robots[i].id, homes[i]))).collect();
            let map_back = StaticMap::new(&env, &window);
            let back = run_leg(config, &env, &map_back, &window, &fixed, &back_agents, &fleet.robots, &mut verified_clean);
            if traced {
                legs.push(LegTrace { stop, round, leg: Leg::Back, window, robots: fleet.robots.clone(), paths: back.trajectories(&back_agents) });
            }

            for i in 0..fleet.m() {
                let Some(target) = goals[i].1 else { continue };
                let k_out = movers.iter().position(|&k| k == i).expect("target robots move");
                let (outcome, length_um, duration_s) = match &out.outcomes[k_out].1 {
                    Outcome::Success(p) => {
                        let k_back = back_movers.iter().position(|&k| k == i).expect("returning");
                        match &back.outcomes[k_back].1 {
                            Outcome::Success(q) => (JourneyOutcome::Success, p.length() + q.length(), p.end_time() + q.end_time()),
                            o => (JourneyOutcome::Failed { leg: Leg::Back, cause: cause(o) }, p.length(), p.end_time()),
                        }
                    }
                    o => (JourneyOutcome::Failed { leg: Leg::Out, cause: cause(o) }, 0.0, 0.0),
                };
                if outcome == JourneyOutcome::Success {
                    collected += 1;
                } else {
                    assigned_failed += 1;
                }
                journeys.push(JourneyRecord { stop, cluster: ci, round, robot: fleet.robots[i].id, target, outcome, length_um, duration_s });
            }
            remaining = leftover;
            round += 1;
        }
    }

    let count = |c: FailureCause| journeys.iter().filter(|j| matches!(j.outcome, JourneyOutcome::Failed { cause, .. } if cause == c)).count();
    let result = ScenarioResult {
        seed: config.seed,
        robots: config.robots,
        free_space_fraction,
        targets: centers.len(),
        journeys_attempted: journeys.len(),
        journeys_succeeded: journeys.iter().filter(|j| j.outcome == JourneyOutcome::Success).count(),
        invalid_start_goal: count(FailureCause::InvalidStartGoal),
        plan_failure: count(FailureCause::PlanFailure),
        collected,
        assigned_failed,
        never_assigned: centers.len() - collected - assigned_failed,
        verified_clean,
        journeys,
    };
    let trace = initial_env.map(|env| ScenarioTrace { env, depot, clusters, route, legs });
    Ok((result, trace))
}

/// Where a robot collects a target: its disk boundary must come within one
/// cell of the target center. Among statically clear cell centers in that
/// range, the nearest to `start` among those connected to it wins, then the
/// nearest clear one; with none clear the target center itself is returned
/// (and will be rejected by the planner).
fn approach_pose(map: &StaticMap, reach: &Mask, start: Point, target: Point, radius: f64, r_eff: f64) -> Point {
    let res = map.res;
    let lim = radius + res;
    let (nx, ny) = (map.blocked.width, map.blocked.height);
    let lo = |v: f64, n: usize| ((v / res).floor().max(0.0) as usize).min(n - 1);
    let (i0, i1) = (lo(target.x - lim, nx), lo(target.x + lim, nx));
    let (j0, j1) = (lo(target.y - lim, ny), lo(target.y + lim, ny));
    let mut best: Option<(bool, f64, Point)> = None;
    for j in j0..=j1 {
        for i in i0..=i1 {
            let c = Point::new((i as f64 + 0.5) * res, (j as f64 + 0.5) * res);
            if c.dist(target) > lim || !map.disk_ok(c, r_eff) {
                continue;
            }
            let cand = (!*reach.get(i, j), c.dist(start), c);
            if best.is_none_or(|b| (cand.0, cand.1) < (b.0, b.1)) {
                best = Some(cand);
            }
        }
    }
    best.map_or(target, |b| b.2)
}

fn cause(o: &Outcome) -> FailureCause {
    match o {
        Outcome::InvalidStartGoal => FailureCause::InvalidStartGoal,
        _ => FailureCause::PlanFailure,
    }
}

#[allow(clippy::too_many_arguments)]
fn run_leg(
    config: &ScenarioConfig,
    env: &Environment,
    map: &StaticMap,
    window: &WorkingArea,
    fixed: &[(Robot, TimedPath)],
    agents: &[Agent],
    robots: &[Robot],
    clean: &mut bool,
) -> PlanReport {
    if agents.is_empty() {
        return PlanReport { outcomes: Vec::new(), makespan: 0.0, total_length: 0.0 };
    }
    let report = plan_paths_around(map, env, fixed, agents, &config.plan);
    if config.verify {
        let mut paths = report.successful_paths();
        paths.extend(fixed.iter().map(|f| f.1.clone()));
        *clean &= verify_plan(env, &paths, robots, window).is_clean();
    }
    report
}

/// A scenario that could not run, kept out of the rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Unrunnable {
    pub seed: u64,
    pub robots: usize,
    pub error: String,
}

/// One row per (fleet size, free-space bin).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub robots: usize,
    /// Free-space bin `[lo, lo + width)` in percent.
    pub bin_lo_pct: f64,
    pub bin_width_pct: f64,
    pub scenarios: usize,
    pub journeys_attempted: usize,
    pub journeys_succeeded: usize,
    /// Mean of per-scenario success rates over scenarios with journeys.
    pub mean_success_rate: Option<f64>,
    pub invalid_start_goal: usize,
    pub plan_failure: usize,
}

impl SweepRow {
    /// Share of failures caused by invalid start or goal positions.
    pub fn invalid_share(&self) -> Option<f64> {
        let f = self.invalid_start_goal + self.plan_failure;
        (f > 0).then(|| self.invalid_start_goal as f64 / f as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub results: Vec<ScenarioResult>,
    pub unrunnable: Vec<Unrunnable>,
    pub rows: Vec<SweepRow>,
}

pub const FREE_SPACE_BIN_PCT: f64 = 2.0;

/// A grid of scenarios: every robot count crossed with every density level
/// and seed. Scenario `s` uses the same seed at every grid point, so results
/// pair up across robot counts and densities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    pub base: ScenarioConfig,
    pub robots: Vec<usize>,
    pub density_scales: Vec<f64>,
    pub seeds: u64,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            base: ScenarioConfig { width_um: 4000.0, height_um: 4000.0, resolution_um: 10.0, cell_count_override: Some(10), ..ScenarioConfig::default() },
            robots: vec![1, 2, 3, 4, 5],
            density_scales: vec![0.1, 0.3, 0.5, 0.7, 0.9],
            seeds: 50,
        }
    }
}

impl SweepSpec {
    /// Scenario seed of index `s` under a root seed.
    pub fn scenario_seed(root: u64, s: u64) -> u64 {
        sub_seed(root, &format!("scenario-{s}"))
    }

    /// Configurations ordered by density, then robot count, then seed.
    pub fn configs(&self, root: u64) -> Vec<ScenarioConfig> {
        let mut out = Vec::new();
        for &d in &self.density_scales {
            for &m in &self.robots {
                for s in 0..self.seeds {
                    out.push(ScenarioConfig { robots: m, density_scale: d, seed: Self::scenario_seed(root, s), ..self.base.clone() });
                }
            }
        }
        out
    }
}

/// Runs every configuration on `jobs` threads (0 = all cores). Results keep
/// the input order whatever the thread count.
pub fn sweep(configs: &[ScenarioConfig], model: &GenerativeModel, jobs: usize) -> Result<SweepResult> {
    if configs.is_empty() {
        return Err(Error::Empty("sweep configurations"));
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build().map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let outcomes: Vec<Result<ScenarioResult>> = pool.install(|| configs.par_iter().map(|c| run_scenario(c, model)).collect());
    let mut results = Vec::new();
    let mut unrunnable = Vec::new();
    for (c, o) in configs.iter().zip(outcomes) {
        match o {
            Ok(r) => results.push(r),
            Err(e) => unrunnable.push(Unrunnable { seed: c.seed, robots: c.robots, error: e.to_string() }),
        }
    }
    let rows = aggregate(&results);
    Ok(SweepResult { results, unrunnable, rows })
}

pub fn free_space_bin(fraction: f64) -> f64 {
    (fraction * 100.0 / FREE_SPACE_BIN_PCT).floor() * FREE_SPACE_BIN_PCT
}

pub fn aggregate(results: &[ScenarioResult]) -> Vec<SweepRow> {
    let mut keys: Vec<(usize, i64)> = results.iter().map(|r| (r.robots, (free_space_bin(r.free_space_fraction) / FREE_SPACE_BIN_PCT) as i64)).collect();
    keys.sort_unstable();
    keys.dedup();
    keys.into_iter()
        .map(|(m, b)| {
            let group: Vec<&ScenarioResult> = results.iter().filter(|r| r.robots == m && (free_space_bin(r.free_space_fraction) / FREE_SPACE_BIN_PCT) as i64 == b).collect();
            let rates: Vec<f64> = group.iter().filter_map(|r| r.success_rate()).collect();
            SweepRow {
                robots: m,
                bin_lo_pct: b as f64 * FREE_SPACE_BIN_PCT,
                bin_width_pct: FREE_SPACE_BIN_PCT,
                scenarios: group.len(),
                journeys_attempted: group.iter().map(|r| r.journeys_attempted).sum(),
                journeys_succeeded: group.iter().map(|r| r.journeys_succeeded).sum(),
                mean_success_rate: (!rates.is_empty()).then(|| rates.iter().sum::<f64>() / rates.len() as f64),
                invalid_start_goal: group.iter().map(|r| r.invalid_start_goal).sum(),
                plan_failure: group.iter().map(|r| r.plan_failure).sum(),
            }
        })
        .collect()
}

/// One-sided sign test: probability of at least `pos` successes out of
/// `pos + neg` fair coin flips.
pub fn sign_test_p(pos: usize, neg: usize) -> f64 {
    let n = pos + neg;
    if n == 0 {
        return 1.0;
    }
    let ln_fact = |k: usize| (1..=k).map(|i| (i as f64).ln()).sum::<f64>();
    let ln_n = ln_fact(n);
    let ln_half = n as f64 * 0.5f64.ln();
    (pos..=n).map(|k| (ln_n - ln_fact(k) - ln_fact(n - k) + ln_half).exp()).sum::<f64>().min(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignTest {
    /// Pairs where the first value is larger.
    pub pos: usize,
    pub neg: usize,
    pub ties: usize,
    pub p_value: f64,
}

/// Sign test that the first member of each pair tends to exceed the
/// second.
pub fn paired_sign_test(pairs: impl IntoIterator<Item = (f64, f64)>) -> SignTest {
    let (mut pos, mut neg, mut ties) = (0, 0, 0);
    for (a, b) in pairs {
        if (a - b).abs() <= 1e-12 {
            ties += 1;
        } else if a > b {
            pos += 1;
        } else {
            neg += 1;
        }
    }
    SignTest { pos, neg, ties, p_value: sign_test_p(pos, neg) }
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], mut w: W) -> Result<()> {
    writeln!(w, "robots,free_space_bin_pct,scenarios,journeys_attempted,journeys_succeeded,mean_success_rate,invalid_start_goal,plan_failure,invalid_share")?;
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.6}"));
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            r.robots,
            r.bin_lo_pct,
            r.scenarios,
            r.journeys_attempted,
            r.journeys_succeeded,
            opt(r.mean_success_rate),
            r.invalid_start_goal,
            r.plan_failure,
            opt(r.invalid_share())
        )?;
    }
    Ok(())
}

pub fn write_results_csv<W: Write>(results: &[ScenarioResult], mut w: W) -> Result<()> {
    writeln!(w, "seed,robots,free_space_fraction,targets,journeys_attempted,journeys_succeeded,invalid_start_goal,plan_failure,collected,assigned_failed,never_assigned,verified_clean")?;
    for r in results {
        writeln!(
            w,
            "{},{},{:.6},{},{},{},{},{},{},{},{},{}",
            r.seed,
            r.robots,
            r.free_space_fraction,
            r.targets,
            r.journeys_attempted,
            r.journeys_succeeded,
            r.invalid_start_goal,
            r.plan_failure,
            r.collected,
            r.assigned_failed,
            r.never_assigned,
            r.verified_clean
        )?;
    }
    Ok(())
}

pub fn write_journeys_csv<W: Write>(journeys: &[JourneyRecord], mut w: W) -> Result<()> {
    writeln!(w, "stop,cluster,round,robot,target,outcome,leg,length_um,duration_s")?;
    for j in journeys {
        let (outcome, leg) = match j.outcome {
            JourneyOutcome::Success => ("success", ""),
            JourneyOutcome::Failed { leg, cause } => (
                match cause {
                    FailureCause::InvalidStartGoal => "invalid_start_goal",
                    FailureCause::PlanFailure => "plan_failure",
                },
                match leg {
                    Leg::Out => "out",
                    Leg::Back => "back",
                },
            ),
        };
        writeln!(w, "{},{},{},{},{},{outcome},{leg},{:.3},{:.3}", j.stop, j.cluster, j.round, j.robot, j.target, j.length_um, j.duration_s)?;
    }
    Ok(())
}

const CURVE_COLORS: [&str; 5] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd"];

/// Success rate against free space, one line per fleet size. With
/// `stamp`, a generation comment is added.
pub fn write_sweep_svg<W: Write>(rows: &[SweepRow], stamp: Option<&str>, mut w: W) -> Result<()> {
    let (wpx, hpx, pad) = (640.0, 420.0, 50.0);
    let xmax = rows.iter().map(|r| r.bin_lo_pct + r.bin_width_pct).fold(10.0, f64::max).min(100.0);
    let sx = |x: f64| pad + x / xmax * (wpx - 2.0 * pad);
    let sy = |y: f64| hpx - pad - y * (hpx - 2.0 * pad);
    writeln!(w, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{wpx}" height="{hpx}" viewBox="0 0 {wpx} {hpx}">"#)?;
    if let Some(s) = stamp {
        writeln!(w, "<!-- generated {s} -->")?;
    }
    writeln!(w, r##"<rect width="100%" height="100%" fill="#ffffff"/>"##)?;
    writeln!(w, r##"<g stroke="#000000" fill="none"><line x1="{pad}" y1="{:.1}" x2="{:.1}" y2="{:.1}"/><line x1="{pad}" y1="{:.1}" x2="{pad}" y2="{:.1}"/></g>"##, sy(0.0), wpx - pad, sy(0.0), sy(0.0), sy(1.0))?;
    writeln!(w, r#"<g font-family="sans-serif" font-size="12">"#)?;
    writeln!(w, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">free space (%)</text>"#, wpx / 2.0, hpx - 12.0)?;
    writeln!(w, r#"<text x="14" y="{:.1}" transform="rotate(-90 14 {:.1})" text-anchor="middle">journey success rate</text>"#, hpx / 2.0, hpx / 2.0)?;
    for k in 0..=4 {
        let y = k as f64 / 4.0;
        writeln!(w, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{y:.2}</text>"#, pad - 4.0, sy(y) + 4.0)?;
        let x = xmax * k as f64 / 4.0;
        writeln!(w, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{x:.0}</text>"#, sx(x), sy(0.0) + 16.0)?;
    }
    writeln!(w, "</g>")?;
    let mut fleets: Vec<usize> = rows.iter().map(|r| r.robots).collect();
    fleets.dedup();
    fleets.sort_unstable();
    fleets.dedup();
    for (k, m) in fleets.iter().enumerate() {
        let color = CURVE_COLORS[k % CURVE_COLORS.len()];
        let pts: Vec<String> = rows
            .iter()
            .filter(|r| r.robots == *m)
            .filter_map(|r| r.mean_success_rate.map(|y| format!("{:.1},{:.1}", sx(r.bin_lo_pct + r.bin_width_pct / 2.0), sy(y))))
            .collect();
        writeln!(w, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, pts.join(" "))?;
        writeln!(w, r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="12" fill="{color}">m = {m}</text>"#, wpx - pad - 40.0, pad + 16.0 * k as f64)?;
    }
    writeln!(w, "</svg>")?;
    Ok(())
}
