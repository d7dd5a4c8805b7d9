use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_suspensia"));
    c.env_remove("SUSPENSIA_OUT");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn configs() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn manifest(dir: &Path) -> toml::Table {
    toml::from_str(&fs::read_to_string(dir.join("manifest.toml")).unwrap()).unwrap()
}

#[test]
fn solve_cell_on_the_l4_disk_writes_correctors_and_effective_tensors() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let cfg = configs().join("solve_cell_l4.toml");
    let o = run(&["solve-cell", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--resolution", "32"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let cm: toml::Table = toml::from_str(&fs::read_to_string(out.join("correctors/manifest.toml")).unwrap()).unwrap();
    assert_eq!(cm["directions"].as_array().unwrap().len(), 2);
    assert_eq!(cm["geometry_hash"].as_str().unwrap().len(), 64);
    let eff: toml::Table = toml::from_str(&fs::read_to_string(out.join("effective.toml")).unwrap()).unwrap();
    let b = eff["B_bar"].as_array().unwrap();
    assert_eq!(b.len(), 2);
    assert!(b[0].as_array().unwrap()[0].as_float().unwrap() > 1.0);
    let m = manifest(&out);
    assert_eq!(m["exit_code"].as_integer(), Some(0));
    assert_eq!(m["incomplete"].as_bool(), Some(false));
    // the stored correctors load back against their geometry hash
    let stored = suspensia::io::load_corrector_set(&out.join("correctors")).unwrap();
    assert_eq!(stored.psi.len(), 2);
    assert_eq!(stored.geometry.len(), 1);
}

#[test]
fn unknown_subcommand_exits_2_with_usage() {
    let o = run(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
}

#[test]
fn unknown_keys_and_bad_values_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_str().unwrap();
    assert_eq!(run(&["effective", "--out", out, "solver.tolerance=1e-6"]).status.code(), Some(2));
    assert_eq!(run(&["effective", "--out", out, "solver.rel_tolerance=0.5"]).status.code(), Some(2));
    assert_eq!(run(&["stats", "--out", out, "stats.samples=16"]).status.code(), Some(2));
    let m = manifest(tmp.path());
    assert_eq!(m["status"].as_str(), Some("validation-failure"));
    assert_eq!(m["incomplete"].as_bool(), Some(true));
    // a config written for another experiment is refused
    let cfg = configs().join("stats.toml");
    assert_eq!(run(&["effective", "--config", cfg.to_str().unwrap(), "--out", out]).status.code(), Some(2));
}

#[test]
fn missing_output_directory_is_a_validation_error() {
    assert_eq!(run(&["gen-geometry"]).status.code(), Some(2));
}

#[test]
fn solver_failure_exits_3_and_flags_incomplete() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["solve-cell", "--out", tmp.path().to_str().unwrap(), "--resolution", "32", "solver.max_iterations=2"]);
    assert_eq!(o.status.code(), Some(3));
    let m = manifest(tmp.path());
    assert_eq!(m["status"].as_str(), Some("solver-failure"));
    assert_eq!(m["incomplete"].as_bool(), Some(true));
}

#[test]
fn environment_supplies_the_output_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let o = bin().args(["gen-geometry", "--resolution", "16"]).env("SUSPENSIA_OUT", tmp.path()).output().unwrap();
    assert!(o.status.success());
    assert!(tmp.path().join("geometry.toml").exists());
    let d = suspensia::io::FieldDump::load(&tmp.path().join("indicator.bin")).unwrap();
    assert_eq!((d.width, d.height, d.components), (16, 16, 1));
}

fn artifacts(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let m = manifest(dir);
    m["artifacts"]
        .as_array()
        .unwrap()
        .iter()
        .map(|a| {
            let a = a.as_str().unwrap().to_owned();
            let bytes = fs::read(dir.join(&a)).unwrap();
            (a, bytes)
        })
        .collect()
}

#[test]
fn identical_configs_reproduce_byte_identical_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for (dir, threads) in [(&a, "1"), (&b, "2")] {
        let o = run(&[
            "solve-cell",
            "--out",
            dir.to_str().unwrap(),
            "--seed",
            "5",
            "--threads",
            threads,
            "--resolution",
            "32",
            "geometry.kind=matern",
            "geometry.box_size=8.0",
            "geometry.radius=1.0",
            "geometry.delta=0.25",
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let (x, y) = (artifacts(&a), artifacts(&b));
    assert_eq!(x.len(), y.len());
    for ((n1, b1), (n2, b2)) in x.iter().zip(&y) {
        assert_eq!(n1, n2);
        assert!(b1 == b2, "{n1} differs");
    }
    assert_eq!(manifest(&a)["config_hash"], manifest(&b)["config_hash"]);
    // the config copy carries the hash recorded in the manifest
    let text = fs::read(a.join("config.toml")).unwrap();
    assert_eq!(manifest(&a)["config_hash"].as_str().unwrap(), suspensia::io::hex_digest(&text));
}

#[test]
fn small_rate_study_writes_csv_and_plot_data() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["rate-study", "--out", tmp.path().to_str().unwrap(), "rate_study.epsilons=[0.5, 0.25, 0.125]"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(tmp.path().join("rates.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "epsilon,h,err_H1,err_pressure");
    assert_eq!(lines.len(), 4);
    let dat = fs::read_to_string(tmp.path().join("velocity_rate.dat")).unwrap();
    assert!(dat.lines().all(|l| l.split_whitespace().count() == 2));
}

#[test]
fn homogenize_writes_both_solutions() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["homogenize", "--out", tmp.path().to_str().unwrap(), "homogenize.epsilon=0.25"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["u_eps.bin", "u_bar.bin", "p_eps.bin", "p_bar.bin", "homogenize.toml"] {
        assert!(tmp.path().join(f).exists(), "{f}");
    }
}

#[test]
fn regularity_reports_per_trial_probes() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&[
        "regularity",
        "--out",
        tmp.path().to_str().unwrap(),
        "--resolution",
        "64",
        "geometry.box_size=8.0",
        "geometry.radius=0.2",
        "regularity.trials=2",
        "regularity.l_min=0.5",
        "regularity.c0=1.0",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(tmp.path().join("probe_001.csv").exists());
    let r: toml::Table = toml::from_str(&fs::read_to_string(tmp.path().join("regularity.toml")).unwrap()).unwrap();
    assert_eq!(r["trials"].as_array().unwrap().len(), 2);
    assert!(r["shared_excess_constant"].as_float().unwrap() > 0.0);
    // a stricter threshold never shrinks r_*
    let r_stars: Vec<f64> =
        r["c0_sensitivity"].as_array().unwrap().iter().map(|p| p["r_star"].as_float().unwrap()).collect();
    assert_eq!(r_stars.len(), 3);
    assert!(r_stars.windows(2).all(|w| w[0] <= w[1]), "{r_stars:?}");
}
