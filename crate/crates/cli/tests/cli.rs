use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use oetharvest::detect::CalibrationMap;
use oetharvest::io::read_pgm;
use oetharvest::pathplan::read_paths_csv;
use oetharvest::scene::read_environment;

const SMALL: &str = r#"version = 1
[generation]
width_um = 2000.0
height_um = 2000.0
resolution_um = 10.0
density_scale = 0.2

[scenario]
width_um = 4000.0
height_um = 4000.0
resolution_um = 10.0
density_scale = 0.1
cell_count_override = 6
robots = 2

[sweep]
robots = [1, 2]
density_scales = [0.1, 0.5]
seeds = 2

[sweep.base]
width_um = 4000.0
height_um = 4000.0
resolution_um = 10.0
cell_count_override = 5
"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_oetharvest"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let o = run(args);
    assert!(o.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&o.stderr));
    o
}

fn error_json(o: &Output) -> serde_json::Value {
    let err = String::from_utf8_lossy(&o.stderr);
    let line = err.lines().rev().find(|l| l.starts_with('{')).expect("machine-readable error line");
    serde_json::from_str(line).expect("valid json")
}

struct Work {
    dir: tempfile::TempDir,
}

impl Work {
    fn new() -> Work {
        let w = Work { dir: tempfile::tempdir().expect("tempdir") };
        fs::write(w.path("small.toml"), SMALL).unwrap();
        w
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn s(&self, name: &str) -> String {
        self.path(name).to_string_lossy().into_owned()
    }
}

fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

fn free_space(dir: &Path) -> f64 {
    let text = fs::read_to_string(dir.join("free_space.csv")).unwrap();
    text.lines().nth(1).unwrap().rsplit(',').next().unwrap().parse().unwrap()
}

#[test]
fn generate_writes_readable_environment_and_is_deterministic() {
    let w = Work::new();
    for out in ["a", "b"] {
        ok(&["generate", "--config", &w.s("small.toml"), "--seed", "3", "--out-dir", &w.s(out)]);
    }
    let env = read_environment(fs::File::open(w.path("a/environment.env")).unwrap()).unwrap();
    assert_eq!((env.nx(), env.ny()), (200, 200));
    assert!(read_pgm(fs::File::open(w.path("a/environment.pgm")).unwrap()).is_ok());
    assert_eq!(csv_files(&w.path("a")), csv_files(&w.path("b")));
    ok(&["generate", "--config", &w.s("small.toml"), "--seed", "4", "--out-dir", &w.s("c")]);
    assert_ne!(fs::read(w.path("a/regions.csv")).unwrap(), fs::read(w.path("c/regions.csv")).unwrap());
}

#[test]
fn generate_at_one_cell_per_microlitre_leaves_about_one_percent() {
    let w = Work::new();
    ok(&["generate", "--concentration", "1", "--seed", "7", "--out-dir", &w.s("g")]);
    let f = free_space(&w.path("g"));
    assert!((0.006..=0.016).contains(&f), "free space {f}");
}

#[test]
fn usage_errors_exit_two_with_json() {
    let o = run(&["generate", "--no-such-flag"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_json(&o)["error"], "usage");
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(run(&[]).status.code(), Some(2));

    let w = Work::new();
    fs::write(w.path("bad.toml"), "version = 1\nunknown_key = 3\n").unwrap();
    let o = run(&["generate", "--config", &w.s("bad.toml"), "--out-dir", &w.s("o")]);
    assert_eq!(o.status.code(), Some(2));
    assert!(error_json(&o)["message"].as_str().unwrap().contains("unknown"));
    fs::write(w.path("v2.toml"), "version = 2\n").unwrap();
    let o = run(&["generate", "--config", &w.s("v2.toml"), "--out-dir", &w.s("o")]);
    assert_eq!(o.status.code(), Some(2));
    assert!(error_json(&o)["message"].as_str().unwrap().contains("version"));
    assert_eq!(run(&["calibrate", "--out-dir", &w.s("o")]).status.code(), Some(2));
}

#[test]
fn domain_errors_exit_one_with_json() {
    let w = Work::new();
    let o = run(&["plan", "--env", &w.s("missing.env"), "--agents", &w.s("missing.csv"), "--out-dir", &w.s("o")]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(error_json(&o)["error"], "domain");
    assert_eq!(error_json(&o)["exit_code"], 1);
}

#[test]
fn print_config_round_trips() {
    let o = ok(&["sweep", "--print-config"]);
    let w = Work::new();
    fs::write(w.path("dump.toml"), &o.stdout).unwrap();
    let again = ok(&["sweep", "--print-config", "--config", &w.s("dump.toml")]);
    assert_eq!(o.stdout, again.stdout);
    let shipped = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.toml");
    assert_eq!(fs::read(shipped).unwrap(), o.stdout);
}

#[test]
fn render_then_detect_finds_cells() {
    let w = Work::new();
    fs::write(
        w.path("img.toml"),
        "version = 1\n[generation]\nconcentration = 400.0\nwidth_um = 400.0\nheight_um = 400.0\nresolution_um = 1.0\n\n[[render.sprites]]\ncenter = { x = 200.0, y = 200.0 }\norientation = 0.4\nradius = 100.0\n",
    )
    .unwrap();
    for out in ["r1", "r2"] {
        ok(&["render", "--config", &w.s("img.toml"), "--seed", "5", "--png", "--out-dir", &w.s(out)]);
        let image = w.s(&format!("{out}/image.pgm"));
        let truth = w.s(&format!("{out}/truth.csv"));
        ok(&["detect", "--config", &w.s("img.toml"), "--image", &image, "--truth", &truth, "--out-dir", &w.s(out)]);
    }
    assert!(w.path("r1/image.png").exists());
    assert_eq!(csv_files(&w.path("r1")), csv_files(&w.path("r2")));
    let det = fs::read_to_string(w.path("r1/detections.csv")).unwrap();
    assert!(det.starts_with("kind,x_px,y_px,radius_px,orientation_rad"));
    assert_eq!(det.lines().filter(|l| l.starts_with("robot,")).count(), 1);
    let score = fs::read_to_string(w.path("r1/score.csv")).unwrap();
    let f1: f64 = score.lines().nth(1).unwrap().rsplit(',').next().unwrap().parse().unwrap();
    assert!(f1 > 0.5, "{score}");
}

#[test]
fn calibrate_builds_map_and_patterns() {
    let w = Work::new();
    let mut obs = String::from("cam_x,cam_y,proj_x,proj_y\n");
    for r in 0..5 {
        for c in 0..6 {
            let (px, py) = (40.0 + 80.0 * c as f64, 40.0 + 80.0 * r as f64);
            obs += &format!("{},{},{px},{py}\n", 10.0 + 1.2 * px + 0.1 * py, 5.0 - 0.05 * px + 1.1 * py);
        }
    }
    fs::write(w.path("obs.csv"), obs).unwrap();
    ok(&["calibrate", "--observations", &w.s("obs.csv"), "--emit-calibration-pattern", "--out-dir", &w.s("c")]);
    let map = CalibrationMap::read(std::io::BufReader::new(fs::File::open(w.path("c/calibration.txt")).unwrap())).unwrap();
    assert_eq!((map.rows, map.cols), (5, 6));
    for name in ["pattern_rows_even", "pattern_rows_odd", "pattern_cols_even", "pattern_cols_odd"] {
        let img = read_pgm(fs::File::open(w.path(&format!("c/{name}.pgm"))).unwrap()).unwrap();
        assert_eq!((img.width, img.height), (1280, 800));
    }
    let res = fs::read_to_string(w.path("c/residuals.csv")).unwrap();
    assert!(res.lines().skip(1).all(|l| l.rsplit(',').next().unwrap().parse::<f64>().unwrap() < 1e-6));
}

#[test]
fn plan_and_verify_round_trip() {
    let w = Work::new();
    fs::write(w.path("empty.toml"), "version = 1\n[generation]\nwidth_um = 2000.0\nheight_um = 2000.0\nresolution_um = 10.0\ndensity_scale = 0.0\n").unwrap();
    ok(&["generate", "--config", &w.s("empty.toml"), "--out-dir", &w.s("g")]);
    fs::write(
        w.path("agents.csv"),
        "agent,start_x_um,start_y_um,goal_x_um,goal_y_um\n0,300,1000,1700,1000\n1,1700,1000,300,1000\n2,1000,300,1000,1700\n",
    )
    .unwrap();
    let env = w.s("g/environment.env");
    for out in ["p1", "p2"] {
        ok(&["plan", "--env", &env, "--agents", &w.s("agents.csv"), "--out-dir", &w.s(out)]);
    }
    assert_eq!(csv_files(&w.path("p1")), csv_files(&w.path("p2")));
    let paths = read_paths_csv(std::io::BufReader::new(fs::File::open(w.path("p1/paths.csv")).unwrap())).unwrap();
    assert_eq!(paths.len(), 3);
    let outcomes = fs::read_to_string(w.path("p1/outcomes.csv")).unwrap();
    assert_eq!(outcomes.lines().filter(|l| l.contains(",success,")).count(), 3);
    ok(&["verify", "--env", &env, "--paths", &w.s("p1/paths.csv"), "--agents", &w.s("agents.csv"), "--out-dir", &w.s("v")]);

    // Two robots crossing head-on without waiting collide.
    fs::write(w.path("crash.csv"), "agent,t,x_um,y_um\n0,0,300,1000\n0,20,1600,1000\n1,0,1600,1000\n1,20,300,1000\n").unwrap();
    let o = run(&["verify", "--env", &env, "--paths", &w.s("crash.csv"), "--agents", &w.s("agents.csv"), "--out-dir", &w.s("v2")]);
    assert_eq!(o.status.code(), Some(1));
    let conflicts = fs::read_to_string(w.path("v2/conflicts.csv")).unwrap();
    assert!(conflicts.contains("agent_agent,0,1"));
}

#[test]
fn simulate_is_deterministic() {
    let w = Work::new();
    for out in ["s1", "s2"] {
        ok(&["simulate", "--config", &w.s("small.toml"), "--seed", "2", "--out-dir", &w.s(out)]);
    }
    assert_eq!(csv_files(&w.path("s1")), csv_files(&w.path("s2")));
    let result = fs::read_to_string(w.path("s1/result.csv")).unwrap();
    assert!(result.lines().nth(1).unwrap().ends_with(",true"));
    assert!(read_environment(fs::File::open(w.path("s1/environment.env")).unwrap()).is_ok());
}

#[test]
fn sweep_outputs_do_not_depend_on_jobs() {
    let w = Work::new();
    ok(&["sweep", "--config", &w.s("small.toml"), "--seed", "1", "--jobs", "1", "--deterministic", "--out-dir", &w.s("j1")]);
    ok(&["sweep", "--config", &w.s("small.toml"), "--seed", "1", "--jobs", "2", "--deterministic", "--out-dir", &w.s("j2")]);
    ok(&["sweep", "--config", &w.s("small.toml"), "--seed", "1", "--robots", "1..2", "--out-dir", &w.s("j3")]);
    assert_eq!(csv_files(&w.path("j1")), csv_files(&w.path("j2")));
    assert_eq!(csv_files(&w.path("j1")), csv_files(&w.path("j3")));
    assert_eq!(fs::read(w.path("j1/sweep.svg")).unwrap(), fs::read(w.path("j2/sweep.svg")).unwrap());
    assert!(!fs::read_to_string(w.path("j1/sweep.svg")).unwrap().contains("<!--"));
    assert!(fs::read_to_string(w.path("j3/sweep.svg")).unwrap().contains("<!-- generated"));
    let results = fs::read_to_string(w.path("j1/results.csv")).unwrap();
    assert_eq!(results.lines().count(), 1 + 2 * 2 * 2);
}
