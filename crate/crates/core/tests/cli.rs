use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use mutsel::app::{self, EXIT_BOUNDARY_ESCAPE, EXIT_CONFIG, EXIT_OK};
use mutsel::certificates::c_constant;
use mutsel::config::RunConfig;
use mutsel::output::{read_snapshot, TRAJECTORY_HEADER, WAVE_HEADER};

const BASELINE: &str = "\
u = 0.1
c = 0.1
m = 0
sigma = 0.05
x_min = -8
x_max = 9
n_points = 2048
phi0 = gaussian(0, 0.04)
";

fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let path = dir.join("run.cfg");
    let text = format!("{body}output_dir = {}\n", dir.join("out").display());
    fs::write(&path, text).unwrap();
    path
}

fn mutsel(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mutsel"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

#[test]
fn certify_baseline_constants() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{BASELINE}t_final = 5\n"));
    let out = mutsel(&["certify", cfg.to_str().unwrap()]);
    assert_eq!(
        code(&out),
        EXIT_OK,
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    let json: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(dir.path().join("out/certificates.json")).unwrap(),
    )
    .unwrap();
    let k = &json["constants"];
    let r = k["r_phi0"].as_f64().unwrap();
    // half the mass of normal(0, 0.04) lies within 0.2 · 0.674490 of the mean
    assert!((r - 0.2 * 0.674_489_750_196_08).abs() < 2e-4, "R = {r}");
    let c_t = c_constant(5.0, r, 0.1);
    assert!((k["c_final"].as_f64().unwrap() / c_t - 1.0).abs() < 1e-12);
    let budget = k["dbar_budget"].as_f64().unwrap();
    assert!((budget - c_t.ln() / 0.9).abs() < 1e-12 * budget);
    assert!(!dir.path().join("out/trajectory.csv").exists());
}

#[test]
fn zero_horizon_gives_single_row() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{BASELINE}t_final = 0\n"));
    let out = mutsel(&["simulate", cfg.to_str().unwrap()]);
    assert_eq!(
        code(&out),
        EXIT_OK,
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = fs::read_to_string(dir.path().join("out/trajectory.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0], TRAJECTORY_HEADER);
    assert!(lines[1].starts_with("0,"));
}

#[test]
fn trajectory_csv_layout_and_snapshots() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &format!("{BASELINE}t_final = 0.25\nsnapshot_stride = 100\n"),
    );
    assert_eq!(code(&mutsel(&["simulate", cfg.to_str().unwrap()])), EXIT_OK);
    let csv = fs::read(dir.path().join("out/trajectory.csv")).unwrap();
    assert!(!csv.contains(&b'\r'));
    let text = String::from_utf8(csv).unwrap();
    let rows: Vec<Vec<f64>> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 251);
    assert!(rows.iter().all(|r| r.len() == 11));
    assert!(rows.windows(2).all(|w| w[1][0] > w[0][0]));
    assert_eq!(rows.last().unwrap()[0], 0.25);
    // d̄ ≥ mass since d ≥ 1
    assert!(rows.iter().all(|r| r[1] >= r[2]));

    let snaps = dir.path().join("out/snapshots");
    let mut bins: Vec<_> = fs::read_dir(&snaps)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "bin"))
        .collect();
    bins.sort();
    assert_eq!(bins.len(), 3);
    let last = read_snapshot(bins.last().unwrap()).unwrap();
    assert_eq!((last.step, last.t), (200, 0.2));
    let row = &rows[200];
    assert_eq!(last.field.integrate(), row[2]);
}

#[test]
fn certificate_json_schema() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{BASELINE}t_final = 0.2\n"));
    assert_eq!(code(&mutsel(&["simulate", cfg.to_str().unwrap()])), EXIT_OK);
    let json: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(dir.path().join("out/certificates.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(json["schema_version"], 1);
    assert_eq!(json["t_end"], 0.2);
    let records = json["records"].as_array().unwrap();
    assert!(!records.is_empty());
    for rec in records {
        let obj = rec.as_object().unwrap();
        let mut keys: Vec<&str> = obj.keys().map(String::as_str).collect();
        keys.sort();
        assert_eq!(keys, ["bound", "margin", "name", "observed", "pass"]);
        assert_eq!(rec["pass"], true, "{rec}");
    }
    for name in [
        "dbar_budget",
        "gronwall_m4",
        "supnorm_p0",
        "supnorm_p2",
        "supnorm_p4",
    ] {
        assert!(records.iter().any(|r| r["name"] == name), "missing {name}");
    }
}

#[test]
fn identical_configs_give_identical_bytes() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let body = format!("{BASELINE}t_final = 0.5\n");
    for d in [&a, &b] {
        let cfg = write_config(d.path(), &body);
        assert_eq!(code(&mutsel(&["simulate", cfg.to_str().unwrap()])), EXIT_OK);
    }
    for file in [
        "trajectory.csv",
        "certificates.json",
        "snapshots/snap_00000000.bin",
    ] {
        let x = fs::read(a.path().join("out").join(file)).unwrap();
        let y = fs::read(b.path().join("out").join(file)).unwrap();
        assert_eq!(x, y, "{file} differs");
    }
}

#[test]
fn sweep_writes_one_directory_per_point() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "u = 0.1\nc = 0.1\nsigma = 0.05\nt_final = 0.1\nx_max = 10\n",
    );
    let out = mutsel(&["sweep", cfg.to_str().unwrap(), "--vary", "c=0:1:5"]);
    assert_eq!(
        code(&out),
        EXIT_OK,
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let mut dirs: Vec<String> = fs::read_dir(dir.path().join("out"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    dirs.sort();
    assert_eq!(dirs, ["c_000", "c_001", "c_002", "c_003", "c_004"]);
    for d in &dirs {
        assert!(dir
            .path()
            .join("out")
            .join(d)
            .join("trajectory.csv")
            .exists());
    }
}

#[test]
fn sweep_reports_first_failure() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "u = 0.1\nc = 0.1\nsigma = 0.05\nt_final = 0.1\n",
    );
    let out = mutsel(&["sweep", cfg.to_str().unwrap(), "--vary", "u=0.5:1.5:3"]);
    assert_eq!(code(&out), EXIT_CONFIG);
    assert!(dir.path().join("out/u_000/trajectory.csv").exists());
}

#[test]
fn invalid_mutation_probability_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "u = 1.5\nc = 0.1\nsigma = 0.05\nt_final = 1\n");
    let out = mutsel(&["simulate", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), EXIT_CONFIG);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("U must lie in (0,1)"), "{err}");
    assert!(err.contains("line 1"), "{err}");
}

#[test]
fn duplicate_key_cites_both_lines() {
    let err = RunConfig::parse("u = 0.1\nc = 0.1\nu = 0.2\n").unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains('1') && msg.contains('3'), "{msg}");
}

#[test]
fn boundary_escape_has_its_own_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "u = 0.1\nc = 0.1\nsigma = 0.05\nt_final = 1\nx_min = -2\nx_max = 2\n\
         n_points = 256\nphi0 = gaussian(0, 0.3)\n",
    );
    let out = mutsel(&["simulate", cfg.to_str().unwrap()]);
    assert_eq!(
        code(&out),
        EXIT_BOUNDARY_ESCAPE,
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn missing_config_file_is_an_io_error() {
    let out = mutsel(&["simulate", "/nonexistent/run.cfg"]);
    assert_eq!(code(&out), app::EXIT_IO);
}

#[test]
fn wave_subcommand_writes_lag_series() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &format!("{BASELINE}t_final = 2\nsnapshot_stride = 500\n"),
    );
    let out = mutsel(&["wave", cfg.to_str().unwrap()]);
    assert_eq!(
        code(&out),
        EXIT_OK,
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = fs::read_to_string(dir.path().join("out/wave.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], WAVE_HEADER);
    assert_eq!(lines.len(), 6);
    assert!(lines[1].ends_with(','), "first point has no distance");
    let lag: f64 = lines[5].split(',').nth(1).unwrap().parse().unwrap();
    // the mean trails the optimum while it moves away
    assert!(lag > 0.0 && lag < 0.2, "lag {lag}");
}
