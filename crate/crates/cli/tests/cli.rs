use std::path::Path;
use std::process::{Command, Output};

use twoscale::pipeline::read_mass_csv;

fn twoscale(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_twoscale"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn text(o: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr))
}

const COARSE: [&str; 3] = ["cell.h=0.1", "sweep.n_nodes=11", "macro.cells=[10, 10]"];

fn with_coarse<'a>(base: &[&'a str]) -> Vec<&'a str> {
    let mut v = base.to_vec();
    v.extend_from_slice(&COARSE);
    v
}

#[test]
fn negative_viscosity_is_rejected_with_the_field_name() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = twoscale(&["stokes", "--out", out, "stokes.viscosity=-0.01"]);
    assert_eq!(o.status.code(), Some(2), "{}", text(&o));
    assert!(text(&o).contains("stokes.viscosity"), "{}", text(&o));
}

#[test]
fn unknown_scenario_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("s.toml");
    std::fs::write(&scenario, "[macro]\ntime_step = 0.1\n").unwrap();
    let o = twoscale(&["mesh", "-s", scenario.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(text(&o).contains("time_step"), "{}", text(&o));
}

#[test]
fn mesh_writes_both_meshes_and_metadata() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = twoscale(&with_coarse(&["mesh", "--out", out, "geometry.kind=full"]));
    assert!(o.status.success(), "{}", text(&o));
    for f in ["cell_mesh.txt", "macro_mesh.txt", "run_metadata.toml"] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }
    let meta: toml::Table = std::fs::read_to_string(dir.path().join("run_metadata.toml")).unwrap().parse().unwrap();
    assert_eq!(meta["run"]["subcommand"].as_str(), Some("mesh"));
    assert_eq!(meta["scenario"]["cell"]["h"].as_float(), Some(0.1));
    // Every default is written out.
    assert_eq!(meta["scenario"]["macro"]["dt"].as_float(), Some(0.05));
}

#[test]
fn stokes_writes_the_vertex_field() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = twoscale(&with_coarse(&["stokes", "--out", out]));
    assert!(o.status.success(), "{}", text(&o));
    let field = std::fs::read_to_string(dir.path().join("stokes_field.txt")).unwrap();
    assert!(field.lines().count() > 10);
}

#[test]
fn simulate_reuses_the_sweep_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = twoscale(&with_coarse(&["sweep", "--out", out]));
    assert!(o.status.success(), "{}", text(&o));
    assert!(text(&o).contains("computed"));
    let o = twoscale(&with_coarse(&["simulate", "--out", out, "macro.dt=0.5", "macro.snapshot_every=2"]));
    assert!(o.status.success(), "{}", text(&o));
    let meta: toml::Table = std::fs::read_to_string(dir.path().join("run_metadata.toml")).unwrap().parse().unwrap();
    assert_eq!(meta["results"]["table_reused"].as_bool(), Some(true));
    let mass = read_mass_csv(&dir.path().join("mass.csv")).unwrap();
    assert_eq!(mass.len(), 5);
    assert!(dir.path().join("iterations.csv").exists());
    let snaps = std::fs::read_dir(dir.path().join("snapshots")).unwrap().count();
    assert_eq!(snaps, 3);
}

#[test]
fn direct_mode_runs_per_node() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = twoscale(&with_coarse(&[
        "simulate",
        "--out",
        out,
        "macro.cells=[4, 4]",
        "macro.dt=0.5",
        "macro.t_final=1.0",
        "macro.source=\"2 * ball(0.5, 0.5, 0.25)\"",
        "iteration.dispersion=direct_per_node",
    ]));
    assert!(o.status.success(), "{}", text(&o));
    let meta: toml::Table = std::fs::read_to_string(dir.path().join("run_metadata.toml")).unwrap().parse().unwrap();
    assert_eq!(meta["results"]["sampling"].as_str(), Some("vertex"));
    assert!(meta["results"]["cell_solves"].as_integer().unwrap() > 0);
}

fn simulate_mass(dir: &Path, geometry: &[&str]) -> Vec<(f64, f64)> {
    let out = dir.to_str().unwrap();
    let mut args = vec!["simulate", "--out", out, "cell.h=0.05", "macro.cells=[20, 20]", "macro.dt=0.1"];
    args.extend_from_slice(geometry);
    let o = twoscale(&args);
    assert!(o.status.success(), "{}", text(&o));
    read_mass_csv(&dir.join("mass.csv")).unwrap()
}

#[test]
fn disk_disperses_more_mass_upward_than_bars() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let disk = simulate_mass(a.path(), &[]);
    let bars = simulate_mass(b.path(), &["geometry.kind=two_rects", "geometry.rects=[{x0=0.1,x1=0.9,y0=0.1,y1=0.2},{x0=0.1,x1=0.9,y0=0.8,y1=0.9}]"]);
    assert_eq!(disk.len(), 21);
    for ((t, m1), (_, m2)) in disk.iter().zip(&bars).skip(1) {
        assert!(m1 >= m2, "t = {t}: {m1} < {m2}");
    }
}

#[test]
fn verify_subset_prints_a_table_and_json() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = twoscale(&["verify", "--out", out, "--only", "1,7"]);
    assert!(o.status.success(), "{}", text(&o));
    let t = text(&o);
    assert!(t.contains("criterion  1: PASS") && t.contains("criterion  7: PASS"), "{t}");
    let json = std::fs::read_to_string(dir.path().join("verify.json")).unwrap();
    assert!(json.contains("\"passed\": true"));
}
