use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::Args;
use oetharvest::detect::{build_calibration, calibration_patterns, detect_microrobots, detect_microspheres, label_debris, score_detections, write_detections_csv};
use oetharvest::envgen::{generate_scene, render_image, GenerationParams};
use oetharvest::geom::Point;
use oetharvest::imgproc::connected_components;
use oetharvest::io::{load_gray, save_gray, write_pgm_u8};
use oetharvest::pathplan::{plan_paths, read_paths_csv, verify_plan, write_paths_csv, write_paths_svg, Agent, ConflictReport, Outcome, PlanReport, TimedPath, Violation};
use oetharvest::scene::{compute_free_space, read_environment, write_environment, write_environment_pgm, Environment, LabelClass, Robot, WorkingArea};
use oetharvest::allocate::write_route_csv;
use oetharvest::sim::{run_scenario_traced, sub_seed, sweep as run_sweep, write_journeys_csv, write_results_csv, write_sweep_csv, write_sweep_svg, Leg};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::config::RunConfig;
use crate::Failure;

pub struct Context {
    pub cfg: RunConfig,
    pub out_dir: PathBuf,
    pub deterministic: bool,
}

impl Context {
    fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    fn create(&self, name: &str) -> Result<BufWriter<File>, Failure> {
        Ok(BufWriter::new(File::create(self.path(name))?))
    }

    fn stamp(&self) -> Option<String> {
        if self.deterministic {
            return None;
        }
        let secs = std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        Some(format!("unix time {secs}"))
    }

    /// Generation parameters with the seed drawn from the root seed.
    fn generation(&self) -> GenerationParams {
        GenerationParams { seed: sub_seed(self.cfg.seed, "envgen"), ..self.cfg.generation.clone() }
    }
}

fn open(path: &Path) -> Result<BufReader<File>, Failure> {
    File::open(path).map(BufReader::new).map_err(|e| Failure::Domain(format!("{}: {e}", path.display())))
}

fn load_env(path: &Path) -> Result<Environment, Failure> {
    Ok(read_environment(open(path)?)?)
}

fn parse_window(s: &str) -> Result<[f64; 4], Failure> {
    let v: Vec<f64> = s.split(',').map(|p| p.trim().parse::<f64>()).collect::<Result<_, _>>().map_err(|_| Failure::Usage(format!("bad window {s:?}")))?;
    v.try_into().map_err(|_| Failure::Usage("window needs x0,y0,width,height".into()))
}

fn window(ctx: &Context, env: &Environment, arg: &Option<String>) -> Result<WorkingArea, Failure> {
    let mut section = ctx.cfg.plan.clone();
    if let Some(s) = arg {
        section.window = Some(parse_window(s)?);
    }
    Ok(section.window_for(env))
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    /// Cell concentration (cells/μL).
    #[arg(long)]
    pub concentration: Option<f64>,
    /// Multiplier on all region counts.
    #[arg(long)]
    pub density_scale: Option<f64>,
    /// Robot radius for the free-space report (μm).
    #[arg(long)]
    pub robot_radius: Option<f64>,
}

pub fn generate(ctx: &Context, a: &GenerateArgs) -> Result<(), Failure> {
    let mut params = ctx.generation();
    params.concentration = a.concentration.unwrap_or(params.concentration);
    params.density_scale = a.density_scale.unwrap_or(params.density_scale);
    let radius = a.robot_radius.unwrap_or(ctx.cfg.robot.radius_um);
    let scene = generate_scene(&ctx.cfg.model()?, &params)?;
    let env = &scene.env;
    write_environment(env, ctx.create("environment.env")?)?;
    write_environment_pgm(env, ctx.create("environment.pgm")?)?;
    let mut w = ctx.create("regions.csv")?;
    writeln!(w, "index,class,x_um,y_um,area_cells")?;
    for (k, r) in scene.regions.iter().enumerate() {
        let c = r.centroid_px() * env.resolution_um;
        writeln!(w, "{k},{},{:.3},{:.3},{}", r.class.code(), c.x, c.y, r.mask.count())?;
    }
    w.flush()?;
    let free = compute_free_space(env, radius)?;
    let mut w = ctx.create("free_space.csv")?;
    writeln!(w, "seed,concentration,density_scale,width_um,height_um,resolution_um,robot_radius_um,regions,free_space_fraction")?;
    writeln!(w, "{},{},{},{},{},{},{},{},{:.6}", params.seed, params.concentration, params.density_scale, env.width_um, env.height_um, env.resolution_um, radius, scene.regions.len(), free.fraction)?;
    w.flush()?;
    println!("generated {} regions on {}x{} cells; free space {:.2}%", scene.regions.len(), env.nx(), env.ny(), 100.0 * free.fraction);
    Ok(())
}

#[derive(Args, Debug)]
pub struct RenderArgs {
    /// Environment file; a new environment is generated when absent.
    #[arg(long)]
    pub env: Option<PathBuf>,
    /// Also write a PNG copy.
    #[arg(long)]
    pub png: bool,
}

pub fn render(ctx: &Context, a: &RenderArgs) -> Result<(), Failure> {
    let env = match &a.env {
        Some(p) => load_env(p)?,
        None => generate_scene(&ctx.cfg.model()?, &ctx.generation())?.env,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(ctx.cfg.seed, "render"));
    let img = render_image(&env, &ctx.cfg.render, &mut rng);
    save_gray(&img, &ctx.path("image.pgm"))?;
    if a.png {
        save_gray(&img, &ctx.path("image.png"))?;
    }
    // Ground truth in pixels: cell components of the label grid and sprites.
    let cells = env.labels.map(|l| *l == LabelClass::Cell);
    let (_, comps) = connected_components(&cells, true);
    let mut w = ctx.create("truth.csv")?;
    writeln!(w, "kind,x_px,y_px,radius_px,orientation_rad")?;
    for c in &comps {
        let n = c.area() as f64;
        let (sx, sy) = c.pixels.iter().fold((0.0, 0.0), |(x, y), p| (x + p.0 as f64 + 0.5, y + p.1 as f64 + 0.5));
        writeln!(w, "cell,{:.4},{:.4},{:.4},0", sx / n, sy / n, (n / std::f64::consts::PI).sqrt())?;
    }
    for s in &ctx.cfg.render.sprites {
        writeln!(w, "robot,{:.4},{:.4},{:.4},{:.6}", s.center.x, s.center.y, s.radius, s.orientation)?;
    }
    w.flush()?;
    println!("rendered {}x{} image with {} cells and {} robots", img.width, img.height, comps.len(), ctx.cfg.render.sprites.len());
    Ok(())
}

#[derive(Args, Debug)]
pub struct DetectArgs {
    /// Grayscale image (.pgm or .png).
    #[arg(long)]
    pub image: PathBuf,
    /// Ground truth CSV (as written by `render`) to score cell detections.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Match radius for scoring (px).
    #[arg(long, default_value_t = 5.0)]
    pub match_radius: f64,
}

#[derive(Deserialize)]
struct TruthRow {
    kind: String,
    x_px: f64,
    y_px: f64,
}

pub fn detect(ctx: &Context, a: &DetectArgs) -> Result<(), Failure> {
    let params = &ctx.cfg.detection;
    params.validate()?;
    let img = load_gray(&a.image)?;
    let robots = detect_microrobots(&img, params);
    let spheres = detect_microspheres(&img, params);
    let debris = label_debris(&img, &spheres, params);
    write_detections_csv(&robots, &spheres, ctx.create("detections.csv")?)?;
    write_pgm_u8(&debris.map(|&b| if b { 255u8 } else { 0 }), ctx.create("debris.pgm")?)?;
    println!("{} robots, {} spheres, {} debris pixels", robots.len(), spheres.len(), debris.count());
    if let Some(t) = &a.truth {
        let mut truth = Vec::new();
        for row in csv::Reader::from_reader(open(t)?).deserialize::<TruthRow>() {
            let row = row.map_err(|e| Failure::Domain(format!("truth file: {e}")))?;
            if row.kind == "cell" {
                truth.push(Point::new(row.x_px, row.y_px));
            }
        }
        let pred: Vec<Point> = spheres.iter().map(|s| s.center).collect();
        let s = score_detections(&pred, &truth, a.match_radius);
        let mut w = ctx.create("score.csv")?;
        writeln!(w, "kind,predicted,truth,true_positives,precision,recall,f1")?;
        writeln!(w, "cell,{},{},{},{:.6},{:.6},{:.6}", pred.len(), truth.len(), s.true_positives, s.precision, s.recall, s.f1)?;
        w.flush()?;
        println!("cell F1 {:.3}", s.f1);
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct CalibrateArgs {
    /// CSV of dot observations with columns cam_x,cam_y,proj_x,proj_y.
    #[arg(long)]
    pub observations: Option<PathBuf>,
    /// Write the four alternating dot pattern images as PGM.
    #[arg(long)]
    pub emit_calibration_pattern: bool,
}

#[derive(Deserialize)]
struct ObservationRow {
    cam_x: f64,
    cam_y: f64,
    proj_x: f64,
    proj_y: f64,
}

pub fn calibrate(ctx: &Context, a: &CalibrateArgs) -> Result<(), Failure> {
    if a.observations.is_none() && !a.emit_calibration_pattern {
        return Err(Failure::Usage("calibrate needs --observations or --emit-calibration-pattern".into()));
    }
    if a.emit_calibration_pattern {
        let c = &ctx.cfg.calibration;
        if c.spacing_px == 0 || c.width_px < c.spacing_px || c.height_px < c.spacing_px {
            return Err(Failure::Usage("calibration pattern spacing must be positive and fit the image".into()));
        }
        let names = ["pattern_rows_even.pgm", "pattern_rows_odd.pgm", "pattern_cols_even.pgm", "pattern_cols_odd.pgm"];
        for (img, name) in calibration_patterns(c.width_px, c.height_px, c.spacing_px, c.dot_radius_px).iter().zip(names) {
            write_pgm_u8(img, ctx.create(name)?)?;
        }
        println!("wrote 4 calibration patterns");
    }
    if let Some(p) = &a.observations {
        let mut obs = Vec::new();
        for row in csv::Reader::from_reader(open(p)?).deserialize::<ObservationRow>() {
            let r = row.map_err(|e| Failure::Domain(format!("observations file: {e}")))?;
            obs.push((Point::new(r.cam_x, r.cam_y), Point::new(r.proj_x, r.proj_y)));
        }
        let map = build_calibration(&obs)?;
        let mut w = ctx.create("calibration.txt")?;
        map.write(&mut w)?;
        w.flush()?;
        let mut w = ctx.create("residuals.csv")?;
        writeln!(w, "cam_x,cam_y,proj_x,proj_y,mapped_x,mapped_y,error_px")?;
        for (c, q) in &obs {
            let m = map.map(*c);
            writeln!(w, "{},{},{},{},{:.6},{:.6},{:.6}", c.x, c.y, q.x, q.y, m.x, m.y, m.dist(*q))?;
        }
        w.flush()?;
        println!("calibration grid {}x{}", map.rows, map.cols);
    }
    Ok(())
}

#[derive(Deserialize)]
struct AgentRow {
    agent: usize,
    start_x_um: f64,
    start_y_um: f64,
    goal_x_um: f64,
    goal_y_um: f64,
    #[serde(default)]
    radius_um: Option<f64>,
    #[serde(default)]
    speed_um_s: Option<f64>,
    #[serde(default)]
    priority: Option<i64>,
}

/// Agents file: `agent,start_x_um,start_y_um,goal_x_um,goal_y_um` plus
/// optional `radius_um,speed_um_s,priority` columns.
fn read_agents(ctx: &Context, path: &Path) -> Result<Vec<Agent>, Failure> {
    let mut agents = Vec::new();
    for row in csv::Reader::from_reader(open(path)?).deserialize::<AgentRow>() {
        let r = row.map_err(|e| Failure::Domain(format!("agents file: {e}")))?;
        let start = Point::new(r.start_x_um, r.start_y_um);
        let mut robot = ctx.cfg.robot.robot(r.agent, start);
        robot.radius_um = r.radius_um.unwrap_or(robot.radius_um);
        robot.speed_um_s = r.speed_um_s.unwrap_or(robot.speed_um_s);
        robot.priority = r.priority.unwrap_or(robot.priority);
        agents.push(Agent { robot, start, goal: Point::new(r.goal_x_um, r.goal_y_um) });
    }
    if agents.is_empty() {
        return Err(Failure::Domain("agents file lists no agents".into()));
    }
    Ok(agents)
}

fn write_conflicts<W: Write>(report: &ConflictReport, mut w: W) -> Result<(), Failure> {
    writeln!(w, "kind,agent,other,t_s,distance_um,detail")?;
    for v in &report.violations {
        match v {
            Violation::AgentAgent { a, b, t, distance } => writeln!(w, "agent_agent,{a},{b},{t:.6},{distance:.6},")?,
            Violation::Static { agent, t } => writeln!(w, "static,{agent},,{t:.6},,")?,
            Violation::Window { agent, t } => writeln!(w, "window,{agent},,{t:.6},,")?,
            Violation::Path { agent, reason } => writeln!(w, "path,{agent},,,,{}", reason.replace(',', ";"))?,
        }
    }
    w.flush()?;
    Ok(())
}

fn write_outcomes<W: Write>(report: &PlanReport, mut w: W) -> Result<(), Failure> {
    writeln!(w, "agent,outcome,length_um,end_time_s")?;
    for (agent, o) in &report.outcomes {
        match o {
            Outcome::Success(p) => writeln!(w, "{agent},success,{:.6},{:.6}", p.length(), p.end_time())?,
            Outcome::InvalidStartGoal => writeln!(w, "{agent},invalid_start_goal,,")?,
            Outcome::PlanFailure => writeln!(w, "{agent},plan_failure,,")?,
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Args, Debug)]
pub struct PlanArgs {
    /// Environment file.
    #[arg(long)]
    pub env: PathBuf,
    /// Agents CSV.
    #[arg(long)]
    pub agents: PathBuf,
    /// Working area as x0,y0,width,height in μm.
    #[arg(long)]
    pub window: Option<String>,
}

pub fn plan(ctx: &Context, a: &PlanArgs) -> Result<(), Failure> {
    let env = load_env(&a.env)?;
    let agents = read_agents(ctx, &a.agents)?;
    let wa = window(ctx, &env, &a.window)?;
    let report = plan_paths(&env, &agents, &wa, &ctx.cfg.plan.params);
    let paths = report.successful_paths();
    write_paths_csv(&paths, ctx.create("paths.csv")?)?;
    write_outcomes(&report, ctx.create("outcomes.csv")?)?;
    let robots: Vec<Robot> = agents.iter().map(|a| a.robot.clone()).collect();
    let check = verify_plan(&env, &paths, &robots, &wa);
    write_conflicts(&check, ctx.create("conflicts.csv")?)?;
    write_paths_svg(&env, &paths, &robots, Some(&wa), ctx.create("paths.svg")?)?;
    println!("{} of {} agents planned; makespan {:.1} s; {} violations", paths.len(), agents.len(), report.makespan, check.violations.len());
    Ok(())
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Number of robots.
    #[arg(long)]
    pub robots: Option<usize>,
    /// Multiplier on all region counts.
    #[arg(long)]
    pub density_scale: Option<f64>,
    /// Number of target cells.
    #[arg(long)]
    pub targets: Option<usize>,
}

pub fn simulate(ctx: &Context, a: &SimulateArgs) -> Result<(), Failure> {
    let mut sc = ctx.cfg.scenario.clone();
    sc.seed = ctx.cfg.seed;
    sc.robots = a.robots.unwrap_or(sc.robots);
    sc.density_scale = a.density_scale.unwrap_or(sc.density_scale);
    if a.targets.is_some() {
        sc.cell_count_override = a.targets;
    }
    let (result, trace) = run_scenario_traced(&sc, &ctx.cfg.model()?)?;
    write_results_csv(std::slice::from_ref(&result), ctx.create("result.csv")?)?;
    write_journeys_csv(&result.journeys, ctx.create("journeys.csv")?)?;
    write_environment(&trace.env, ctx.create("environment.env")?)?;
    write_route_csv(&trace.route, &trace.clusters, &[trace.depot], ctx.create("route.csv")?)?;
    let mut w = ctx.create("legs.csv")?;
    writeln!(w, "stop,round,leg,agent,t,x_um,y_um")?;
    let mut all: Vec<TimedPath> = Vec::new();
    let mut robots: Vec<Robot> = Vec::new();
    for leg in &trace.legs {
        let name = if leg.leg == Leg::Out { "out" } else { "back" };
        for p in &leg.paths {
            for (q, t) in &p.waypoints {
                writeln!(w, "{},{},{name},{},{t:.6},{:.6},{:.6}", leg.stop, leg.round, p.agent, q.x, q.y)?;
            }
        }
        all.extend(leg.paths.iter().cloned());
        robots.extend(leg.robots.iter().cloned());
    }
    w.flush()?;
    robots.sort_by_key(|r| r.id);
    robots.dedup_by_key(|r| r.id);
    write_paths_svg(&trace.env, &all, &robots, None, ctx.create("scenario.svg")?)?;
    println!(
        "{} targets, {} journeys, {} succeeded ({} invalid start/goal, {} plan failures); free space {:.2}%",
        result.targets, result.journeys_attempted, result.journeys_succeeded, result.invalid_start_goal, result.plan_failure, 100.0 * result.free_space_fraction
    );
    Ok(())
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    /// Robot counts as a range `1..5` or a list `1,3,5`.
    #[arg(long)]
    pub robots: Option<String>,
    /// Seeds per grid point.
    #[arg(long)]
    pub seeds: Option<u64>,
    /// Density scales as a list `0.1,0.5,0.9`.
    #[arg(long)]
    pub density_scales: Option<String>,
    /// Worker threads (0 uses every core).
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

pub fn parse_robots(s: &str) -> Result<Vec<usize>, Failure> {
    let bad = || Failure::Usage(format!("bad robot list {s:?}"));
    let v: Vec<usize> = if let Some((a, b)) = s.split_once("..") {
        let (a, b): (usize, usize) = (a.trim().parse().map_err(|_| bad())?, b.trim().trim_start_matches('=').parse().map_err(|_| bad())?);
        (a..=b).collect()
    } else {
        s.split(',').map(|p| p.trim().parse()).collect::<Result<_, _>>().map_err(|_| bad())?
    };
    if v.is_empty() || v.contains(&0) {
        return Err(bad());
    }
    Ok(v)
}

pub fn sweep(ctx: &Context, a: &SweepArgs) -> Result<(), Failure> {
    let mut spec = ctx.cfg.sweep.clone();
    if let Some(r) = &a.robots {
        spec.robots = parse_robots(r)?;
    }
    if let Some(s) = a.seeds {
        spec.seeds = s;
    }
    if let Some(d) = &a.density_scales {
        spec.density_scales = d.split(',').map(|p| p.trim().parse()).collect::<Result<_, _>>().map_err(|_| Failure::Usage(format!("bad density list {d:?}")))?;
    }
    let configs = spec.configs(ctx.cfg.seed);
    let result = run_sweep(&configs, &ctx.cfg.model()?, a.jobs)?;
    write_sweep_csv(&result.rows, ctx.create("sweep.csv")?)?;
    write_results_csv(&result.results, ctx.create("results.csv")?)?;
    let journeys: Vec<_> = result.results.iter().flat_map(|r| r.journeys.iter().cloned()).collect();
    write_journeys_csv(&journeys, ctx.create("journeys.csv")?)?;
    let mut w = ctx.create("unrunnable.csv")?;
    writeln!(w, "seed,robots,error")?;
    for u in &result.unrunnable {
        writeln!(w, "{},{},{}", u.seed, u.robots, u.error.replace(',', ";"))?;
    }
    w.flush()?;
    write_sweep_svg(&result.rows, ctx.stamp().as_deref(), ctx.create("sweep.svg")?)?;
    println!("{} scenarios run, {} unrunnable, {} aggregate rows", result.results.len(), result.unrunnable.len(), result.rows.len());
    Ok(())
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    /// Environment file.
    #[arg(long)]
    pub env: PathBuf,
    /// Paths CSV as written by `plan`.
    #[arg(long)]
    pub paths: PathBuf,
    /// Agents CSV describing the robots.
    #[arg(long)]
    pub agents: PathBuf,
    /// Working area as x0,y0,width,height in μm.
    #[arg(long)]
    pub window: Option<String>,
}

pub fn verify(ctx: &Context, a: &VerifyArgs) -> Result<(), Failure> {
    let env = load_env(&a.env)?;
    let robots: Vec<Robot> = read_agents(ctx, &a.agents)?.into_iter().map(|a| a.robot).collect();
    let paths = read_paths_csv(open(&a.paths)?)?;
    let wa = window(ctx, &env, &a.window)?;
    let report = verify_plan(&env, &paths, &robots, &wa);
    write_conflicts(&report, ctx.create("conflicts.csv")?)?;
    if report.is_clean() {
        println!("{} paths verified clean", paths.len());
        Ok(())
    } else {
        Err(Failure::Domain(format!("{} violations found", report.violations.len())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn robot_lists_parse() {
        assert_eq!(parse_robots("1..5").unwrap(), vec![1, 2, 3, 4, 5]);
        assert_eq!(parse_robots("2,4").unwrap(), vec![2, 4]);
        assert!(parse_robots("0..2").is_err());
        assert!(parse_robots("a").is_err());
    }

    #[test]
    fn windows_parse() {
        assert_eq!(parse_window("0, 10,300,400").unwrap(), [0.0, 10.0, 300.0, 400.0]);
        assert!(parse_window("1,2,3").is_err());
    }
}
