use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ring_clusters::equilibria::{residual, RelativeEquilibrium};
use ring_clusters::model::Parameters;
use serde_json::Value;
use tempfile::TempDir;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ringclust"))
        .args(args)
        .env_remove("RINGCLUST_OUT_DIR")
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed with {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn code(dir: &Path, args: &[&str]) -> i32 {
    run(dir, args).status.code().expect("exited normally")
}

/// Header and data rows; the leading hash comment is checked and dropped.
fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let first = lines.next().unwrap();
    assert!(first.starts_with("# config_hash="), "missing hash line: {first}");
    assert_eq!(first.len(), "# config_hash=".len() + 64);
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    (header, rows)
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn equilibrium(v: &Value) -> RelativeEquilibrium {
    serde_json::from_value(v.clone()).unwrap()
}

fn solve_record(dir: &Path, out: &str, extra: &[&str]) -> PathBuf {
    let mut args = vec!["solve", "--out-dir", out];
    args.extend_from_slice(extra);
    ok(dir, &args);
    dir.join(out).join("record.json")
}

#[test]
fn oracle_grid_rows_satisfy_full_residual() {
    let tmp = TempDir::new().unwrap();
    ok(tmp.path(), &["oracle", "--preset", "relaxation", "--m", "0", "--tau", "0.3:2.0:200"]);
    let (header, rows) = read_csv(&tmp.path().join("oracle.csv"));
    assert_eq!(header, ["tau", "m", "r0", "Omega"]);
    assert_eq!(rows.len(), 200);
    let p = Parameters::relaxation();
    for row in &rows {
        let v: Vec<f64> = row.iter().map(|x| x.parse().unwrap()).collect();
        let eq = RelativeEquilibrium { r: [v[2]; 4], psi: [0.0; 3], omega_collective: v[3], tau: v[0] };
        let res = residual(&p, &eq).unwrap().iter().fold(0.0_f64, |m, x| m.max(x.abs()));
        assert!(res < 1e-9, "tau = {}: residual {res:e}", v[0]);
    }
}

#[test]
fn decoupled_oracle_columns_are_constant() {
    let tmp = TempDir::new().unwrap();
    ok(tmp.path(), &["oracle", "--K", "0", "--gamma", "0.3", "--m", "3", "--tau", "0.3:2.0:25"]);
    let (_, rows) = read_csv(&tmp.path().join("oracle.csv"));
    for row in rows {
        let r0: f64 = row[2].parse().unwrap();
        let om: f64 = row[3].parse().unwrap();
        assert!((r0 - 1.7).abs() < 1e-10);
        assert!((om - (2.43 - 0.3 * 2.89)).abs() < 1e-10);
    }
}

#[test]
fn cluster_index_out_of_range_is_a_usage_error() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(code(tmp.path(), &["oracle", "--m", "5"]), 2);
    assert_eq!(code(tmp.path(), &["solve", "--seed", "primary:4@0.5"]), 2);
    assert_eq!(code(tmp.path(), &["oracle", "--m", "0", "--tau", "0.3:2.0"]), 2);
}

#[test]
fn shift_turns_in_phase_record_into_splay_record() {
    let tmp = TempDir::new().unwrap();
    let rec = solve_record(tmp.path(), "in_phase", &["--seed", "primary:0@0.5"]);
    let before = read_json(&rec);
    assert_eq!(before["isotropy"], "H40");
    let seed = format!("file:{}", rec.display());
    ok(tmp.path(), &["shift", "--seed", &seed, "--j", "1", "--out-dir", "splay"]);
    let after = read_json(&tmp.path().join("splay/record.json"));
    assert_eq!(after["isotropy"], "H41");
    let (e0, e1) = (equilibrium(&before["equilibrium"]), equilibrium(&after["equilibrium"]));
    assert!((e1.tau - (0.5 + PI / (2.0 * e0.omega_collective))).abs() < 1e-12);
    assert!(after["residual"].as_f64().unwrap() < 1e-9);

    // shifting back would need a negative delay
    assert_eq!(code(tmp.path(), &["shift", "--seed", &seed, "--j", "-1", "--out-dir", "back"]), 2);
    let splay = format!("file:{}", tmp.path().join("splay/record.json").display());
    ok(tmp.path(), &["shift", "--seed", &splay, "--j", "-1", "--out-dir", "back"]);
    let back = read_json(&tmp.path().join("back/record.json"));
    assert_eq!(back["isotropy"], "H40");
    assert!((equilibrium(&back["equilibrium"]).tau - 0.5).abs() < 1e-9);
}

#[test]
fn classify_two_cluster_record() {
    let tmp = TempDir::new().unwrap();
    let rec = solve_record(tmp.path(), "two", &["--seed", "primary:2@0.7"]);
    let out = ok(tmp.path(), &["classify", "--seed", &format!("file:{}", rec.display())]);
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "H42");
    assert_eq!(read_json(&tmp.path().join("classify.json"))["order"], 4);
}

#[test]
fn decoupled_stability_has_radial_roots_at_minus_two_lambda() {
    let tmp = TempDir::new().unwrap();
    let rec = solve_record(tmp.path(), "k0", &["--K", "0", "--seed", "primary:1@0.9"]);
    let out = ok(tmp.path(), &["stability", "--seed", &format!("file:{}", rec.display()), "--full"]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    let mut lines = stdout.lines();
    assert_eq!(lines.next(), Some("re,im"));
    let roots: Vec<(f64, f64)> = lines
        .map(|l| {
            let (re, im) = l.split_once(',').unwrap();
            (re.parse().unwrap(), im.parse().unwrap())
        })
        .collect();
    // three neutral relative phases, four radial roots
    assert_eq!(roots.len(), 7);
    assert_eq!(roots.iter().filter(|(re, im)| re.abs() < 1e-8 && *im == 0.0).count(), 3);
    assert_eq!(roots.iter().filter(|(re, im)| (re + 2.0 * 2.89).abs() < 1e-8 && *im == 0.0).count(), 4);
    let json = read_json(&tmp.path().join("stability.json"));
    assert_eq!(json["n_unstable"], 0);
    assert!(json["full_roots"].is_array());
}

#[test]
fn bundle_seed_round_trips_bit_identically() {
    let tmp = TempDir::new().unwrap();
    ok(
        tmp.path(),
        &["continue", "--seed", "primary:0@0.45", "--range", "0.42:0.6", "--direction", "forward", "--out-dir", "br"],
    );
    let (header, rows) = read_csv(&tmp.path().join("br/branch.csv"));
    assert_eq!(header.join(","), "tau,Omega,r1,r2,r3,r4,psi1,psi2,psi3,n_unstable,re_rightmost,isotropy");
    assert!(rows.len() > 3);
    let (bheader, _) = read_csv(&tmp.path().join("br/bifurcations.csv"));
    assert_eq!(bheader.join(","), "kind,tau,Omega");

    let bundle = read_json(&tmp.path().join("br/branch.json"));
    let seed = format!("file:{}#3", tmp.path().join("br/branch.json").display());
    ok(tmp.path(), &["solve", "--seed", &seed, "--out-dir", "rt"]);
    let rec = read_json(&tmp.path().join("rt/record.json"));
    assert_eq!(rec["equilibrium"], bundle["branch"]["points"][3]["eq"]);
    let (a, b) = (equilibrium(&rec["equilibrium"]), equilibrium(&bundle["branch"]["points"][3]["eq"]));
    assert_eq!(a, b);
    // CSV values print in shortest round-trip form
    assert_eq!(rows[3][0].parse::<f64>().unwrap(), b.tau);
}

#[test]
fn config_file_entries_yield_to_flags() {
    let tmp = TempDir::new().unwrap();
    fs::write(
        tmp.path().join("run.cfg"),
        "# smooth sweep\npreset = smooth\nm = 1\ntau = 0.5:0.6:3\nout_dir = from_cfg\n",
    )
    .unwrap();
    ok(tmp.path(), &["oracle", "--config", "run.cfg", "--m", "2"]);
    let (_, rows) = read_csv(&tmp.path().join("from_cfg/oracle.csv"));
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r[1] == "2"));
    // smooth preset radius stays near sqrt(1.1025) = 1.05
    let r0: f64 = rows[0][2].parse().unwrap();
    assert!((r0 - 1.05).abs() < 0.2, "r0 = {r0}");

    fs::write(tmp.path().join("bad.cfg"), "preset smooth\n").unwrap();
    assert_eq!(code(tmp.path(), &["oracle", "--config", "bad.cfg", "--m", "0"]), 3);
    assert_eq!(code(tmp.path(), &["oracle", "--config", "missing.cfg", "--m", "0"]), 3);
}

#[test]
fn reruns_reproduce_identical_files() {
    let tmp = TempDir::new().unwrap();
    ok(tmp.path(), &["oracle", "--m", "1", "--tau", "0.3:1.0:20", "--out-dir", "a"]);
    ok(tmp.path(), &["oracle", "--m", "1", "--tau", "0.3:1.0:20", "--out-dir", "b"]);
    ok(tmp.path(), &["oracle", "--m", "2", "--tau", "0.3:1.0:20", "--out-dir", "c"]);
    let read = |d: &str| fs::read(tmp.path().join(d).join("oracle.csv")).unwrap();
    assert_eq!(read("a"), read("b"));
    let first_line = |d: &str| String::from_utf8(read(d)).unwrap().lines().next().unwrap().to_string();
    assert_ne!(first_line("a"), first_line("c"));
}

#[test]
fn out_dir_from_environment() {
    let tmp = TempDir::new().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_ringclust"))
        .args(["oracle", "--m", "0", "--tau", "0.5:0.5:1"])
        .env("RINGCLUST_OUT_DIR", tmp.path().join("env_out"))
        .current_dir(tmp.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(tmp.path().join("env_out/oracle.csv").exists());
}

#[test]
fn simulate_stable_in_phase_state() {
    let tmp = TempDir::new().unwrap();
    ok(
        tmp.path(),
        &["simulate", "--seed", "primary:0@1.2", "--t-end", "60", "--perturb", "1e-3", "--stride", "10"],
    );
    let (header, rows) = read_csv(&tmp.path().join("trajectory.csv"));
    assert_eq!(header.join(","), "t,r1,phi1,r2,phi2,r3,phi3,r4,phi4");
    assert!(rows.len() > 100);
    let obs = read_json(&tmp.path().join("observation.json"));
    assert_eq!(obs["observation"]["classification"], "H40");
    assert!(obs["config_hash"].as_str().unwrap().len() == 64);
}

#[test]
fn failure_classes_have_distinct_exit_codes() {
    let tmp = TempDir::new().unwrap();
    // missing seed file
    assert_eq!(code(tmp.path(), &["solve", "--seed", "file:nowhere.json"]), 8);
    // unknown interaction
    assert_eq!(code(tmp.path(), &["oracle", "--m", "0", "--interaction", "nowhere"]), 3);
    // unknown preset
    assert_eq!(code(tmp.path(), &["oracle", "--m", "0", "--preset", "stiff"]), 2);
    // seed outside the continuation range
    assert_eq!(code(tmp.path(), &["continue", "--seed", "primary:0@0.5", "--range", "1.0:2.0"]), 2);
    // bifurcation file without a pitchfork
    let bif = serde_json::json!({ "points": [], "bifurcations": [], "seed": "", "params": Parameters::relaxation(), "termination": "LeftRange" });
    fs::write(tmp.path().join("none.json"), bif.to_string()).unwrap();
    assert_eq!(code(tmp.path(), &["continue", "--from-pitchfork", "none.json"]), 2);
    // simulation that never oscillates enough to classify
    assert_eq!(code(tmp.path(), &["simulate", "--seed", "primary:0@0.5", "--t-end", "1"]), 7);
    // nonfinite radius cannot be solved
    let eq = serde_json::json!({ "r": [0.0, 1.0, 1.0, 1.0], "psi": [0.0, 0.0, 0.0], "Omega": 2.4, "tau": 0.5 });
    fs::write(tmp.path().join("bad_eq.json"), eq.to_string()).unwrap();
    assert_eq!(code(tmp.path(), &["solve", "--seed", "file:bad_eq.json"]), 4);
}
