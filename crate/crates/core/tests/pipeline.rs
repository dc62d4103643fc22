use twoscale::dispersion::DispersionTable;
use twoscale::pipeline::{run_simulate, run_sweep, METADATA_FILE};
use twoscale::scenario::Scenario;

fn small(out: &std::path::Path, extra: &[&str]) -> Scenario {
    let mut o: Vec<String> = ["cell.h=0.1", "sweep.n_nodes=5", "macro.cells=[6, 6]", "macro.dt=0.5"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    o.extend(extra.iter().map(|s| s.to_string()));
    o.push(format!("output=\"{}\"", out.display()));
    Scenario::from_toml_str("", &o).unwrap()
}

#[test]
fn sweep_tables_are_cached_by_key() {
    let dir = tempfile::tempdir().unwrap();
    let s = small(dir.path(), &[]);
    let (first, a) = run_sweep(&s).unwrap();
    assert!(!a.reused);
    let (second, b) = run_sweep(&s).unwrap();
    assert!(b.reused);
    assert_eq!(first.tensors(), second.tensors());
    let back = DispersionTable::read(&a.table).unwrap();
    assert_eq!(back.tensors(), first.tensors());

    // A different flow is a different key.
    let other = small(dir.path(), &["stokes.viscosity=0.02"]);
    let (_, c) = run_sweep(&other).unwrap();
    assert!(!c.reused);
    let (_, d) = run_sweep(&s).unwrap();
    assert!(!d.reused, "stale table was reused after the flow changed");
}

#[test]
fn simulation_writes_its_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let s = small(dir.path(), &["nonlinearity.first.kind=reciprocal_abs", "nonlinearity.first.eps=1e-4"]);
    let (traj, summary) = run_simulate(&s).unwrap();
    assert_eq!(traj.times.len(), 5);
    assert!(summary.report.clamp_warnings > 0);
    assert!(dir.path().join(METADATA_FILE).exists());
    let meta: toml::Table = std::fs::read_to_string(dir.path().join(METADATA_FILE))
        .unwrap()
        .parse()
        .unwrap();
    let replay = Scenario::from_toml_str(&toml::to_string(&meta["scenario"]).unwrap(), &[]).unwrap();
    assert_eq!(replay, s);
}
