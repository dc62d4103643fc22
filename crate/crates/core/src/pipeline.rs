//! End-to-end runs driven by a [`Scenario`]: meshing, Stokes, sweeps and simulations,
//! each writing its artifacts plus a `run_metadata.toml` into the output directory.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Serialize;

use crate::cell::CellContext;
use crate::dispersion::{load_or_build, DirectProvider, DispersionTable, TableProvider};
use crate::error::{Error, Result};
use crate::macroscale::{
    mass_csv, mass_indicator, write_snapshots, MacroSolver, MacroTrajectory, TensorProvider, TensorSampling,
};
use crate::mesh::{build_cell_mesh, format_mesh, read_mesh, write_mesh, Geometry, TriMesh};
use crate::scenario::Scenario;
use crate::scheme::{iterate, DispersionMode, IterationReport};
use crate::stokes::{solve_stokes, StokesDiagnostics, StokesSolution};

pub const METADATA_FILE: &str = "run_metadata.toml";

/// Cell mesh and its Stokes drift.
#[derive(Debug, Clone)]
pub struct Flow {
    pub mesh: TriMesh,
    pub stokes: Arc<StokesSolution>,
}

impl Flow {
    pub fn context(&self, scenario: &Scenario) -> Result<CellContext> {
        CellContext::with_form(
            self.mesh.clone(),
            scenario.cell.diffusion.diffusion(),
            self.stokes.clone(),
            scenario.cell.drift_form,
        )
    }
}

pub fn cell_mesh(scenario: &Scenario) -> Result<TriMesh> {
    match &scenario.geometry {
        Geometry::Custom { mesh_file } => read_mesh(mesh_file, true),
        g => build_cell_mesh(g, scenario.cell.h),
    }
}

pub fn solve_flow(scenario: &Scenario) -> Result<Flow> {
    let mesh = cell_mesh(scenario)?;
    let forcing = scenario.stokes.forcing_fn();
    let stokes = solve_stokes(&mesh, scenario.stokes.viscosity, &forcing)?;
    Ok(Flow {
        mesh,
        stokes: Arc::new(stokes),
    })
}

fn prepare_output(scenario: &Scenario) -> Result<PathBuf> {
    std::fs::create_dir_all(&scenario.output)?;
    Ok(scenario.output.clone())
}

/// Writes `run_metadata.toml`: the subcommand, the crate version, the scenario with all
/// defaults materialised and subcommand-specific results.
pub fn write_metadata(scenario: &Scenario, subcommand: &str, results: impl Serialize) -> Result<PathBuf> {
    let mut doc = toml::Table::new();
    let mut run = toml::Table::new();
    run.insert("subcommand".into(), subcommand.into());
    run.insert("version".into(), env!("CARGO_PKG_VERSION").into());
    run.insert("threads".into(), (rayon::current_num_threads() as i64).into());
    doc.insert("run".into(), run.into());
    let scn = toml::Value::try_from(scenario).map_err(|e| Error::config("<scenario>", e.to_string()))?;
    doc.insert("scenario".into(), scn);
    let res = toml::Value::try_from(results).map_err(|e| Error::config("<results>", e.to_string()))?;
    doc.insert("results".into(), res);
    let path = scenario.output.join(METADATA_FILE);
    std::fs::write(&path, toml::to_string_pretty(&doc).expect("metadata serialises"))?;
    Ok(path)
}

#[derive(Debug, Clone, Serialize)]
pub struct MeshSummary {
    pub cell_mesh: PathBuf,
    pub cell_vertices: usize,
    pub cell_triangles: usize,
    pub cell_min_angle: f64,
    pub macro_mesh: PathBuf,
    pub macro_vertices: usize,
}

/// Writes the cell mesh and the macroscopic mesh.
pub fn run_mesh(scenario: &Scenario) -> Result<MeshSummary> {
    let out = prepare_output(scenario)?;
    let cell = cell_mesh(scenario)?;
    let macro_mesh = scenario.macroscale.problem()?.mesh;
    let summary = MeshSummary {
        cell_mesh: out.join("cell_mesh.txt"),
        cell_vertices: cell.num_vertices(),
        cell_triangles: cell.num_triangles(),
        cell_min_angle: cell.min_angle_degrees(),
        macro_mesh: out.join("macro_mesh.txt"),
        macro_vertices: macro_mesh.num_vertices(),
    };
    write_mesh(&cell, &summary.cell_mesh)?;
    std::fs::write(&summary.macro_mesh, format_mesh(&macro_mesh))?;
    write_metadata(scenario, "mesh", &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, Serialize)]
pub struct StokesSummary {
    pub field: PathBuf,
    pub diagnostics: StokesDiagnostics,
}

/// Solves the cell Stokes problem and writes the vertex velocity and pressure.
pub fn run_stokes(scenario: &Scenario) -> Result<(Flow, StokesSummary)> {
    let out = prepare_output(scenario)?;
    let flow = solve_flow(scenario)?;
    write_mesh(&flow.mesh, &out.join("cell_mesh.txt"))?;
    let field = out.join("stokes_field.txt");
    flow.stokes.write_vertex_field(&field)?;
    let forcing = scenario.stokes.forcing_fn();
    let diagnostics = flow.stokes.diagnostics(&flow.mesh, &forcing)?;
    let summary = StokesSummary { field, diagnostics };
    write_metadata(scenario, "stokes", &summary)?;
    Ok((flow, summary))
}

pub fn tables_dir(scenario: &Scenario) -> PathBuf {
    scenario.output.join("tables")
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepSummary {
    pub table: PathBuf,
    pub csv: PathBuf,
    pub reused: bool,
    pub min_eigenvalue: f64,
}

/// Builds (or reuses) the dispersion table of the scenario and writes it with a CSV copy.
pub fn run_sweep(scenario: &Scenario) -> Result<(Arc<DispersionTable>, SweepSummary)> {
    prepare_output(scenario)?;
    let (table, path, reused) = cached_table(scenario)?;
    let csv = path.with_extension("csv");
    std::fs::write(&csv, table.to_csv())?;
    let summary = SweepSummary {
        table: path,
        csv,
        reused,
        min_eigenvalue: table
            .tensors()
            .iter()
            .map(crate::cell::min_sym_eigenvalue)
            .fold(f64::INFINITY, f64::min),
    };
    write_metadata(scenario, "sweep", &summary)?;
    Ok((table, summary))
}

fn cached_table(scenario: &Scenario) -> Result<(Arc<DispersionTable>, PathBuf, bool)> {
    let dir = tables_dir(scenario);
    std::fs::create_dir_all(&dir)?;
    let (table, path, reused) = load_or_build(&dir, scenario.table_meta(), &scenario.sweep, || {
        solve_flow(scenario)?.context(scenario)
    })?;
    if reused {
        log::info!("reusing table {}", path.display());
    }
    Ok((Arc::new(table), path, reused))
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulationSummary {
    pub table: Option<PathBuf>,
    pub table_reused: bool,
    pub sampling: TensorSampling,
    pub cell_solves: usize,
    pub report: IterationReport,
    pub snapshots: usize,
    pub terminal_max: f64,
    pub linf_bound: f64,
    pub mass_csv: PathBuf,
    pub iterations_csv: PathBuf,
}

/// Runs the coupled iteration and writes snapshots, `M(t)` and the iteration report.
pub fn run_simulate(scenario: &Scenario) -> Result<(MacroTrajectory, SimulationSummary)> {
    let out = prepare_output(scenario)?;
    let mut problem = scenario.macroscale.problem()?;
    let nonlinearities = scenario.nonlinearity.pair();
    let convention = scenario.nonlinearity.convention;
    let mut direct = None;
    let (provider, table, reused): (Box<dyn TensorProvider>, _, _) = match scenario.iteration.dispersion {
        DispersionMode::Table => {
            let (table, path, reused) = cached_table(scenario)?;
            let provider = TableProvider {
                tables: [table.clone(), table],
                nonlinearities,
                convention,
            };
            (Box::new(provider), Some(path), reused)
        }
        DispersionMode::DirectPerNode => {
            // One cell solve per macro node and time level.
            problem.sampling = TensorSampling::Vertex;
            let ctx = Arc::new(solve_flow(scenario)?.context(scenario)?);
            let provider = Arc::new(DirectProvider::new(ctx, nonlinearities, convention));
            direct = Some(provider.clone());
            (Box::new(SharedDirect(provider)), None, false)
        }
    };
    let sampling = problem.sampling;
    let solver = MacroSolver::new(problem)?;
    let (traj, report) = iterate(&solver, provider.as_ref(), &scenario.iteration)?;
    let cell_solves = direct.map_or(0, |d| d.solve_count());
    let snapshots = write_snapshots(
        &out.join("snapshots"),
        solver.mesh(),
        &traj,
        scenario.macroscale.snapshot_every,
    )?;
    let mass = mass_indicator(solver.mesh(), &traj, scenario.macroscale.mass_window)?;
    let mass_path = out.join("mass.csv");
    std::fs::write(&mass_path, mass_csv(&traj.times, &mass))?;
    let iter_path = out.join("iterations.csv");
    std::fs::write(&iter_path, report.to_csv())?;
    let summary = SimulationSummary {
        table,
        table_reused: reused,
        sampling,
        cell_solves,
        snapshots,
        terminal_max: traj.terminal().iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v)),
        linf_bound: traj.linf_bound,
        mass_csv: mass_path,
        iterations_csv: iter_path,
        report,
    };
    write_metadata(scenario, "simulate", &summary)?;
    Ok((traj, summary))
}

struct SharedDirect(Arc<DirectProvider>);

impl TensorProvider for SharedDirect {
    fn tensors(&self, u: &[f64]) -> Result<Vec<nalgebra::Matrix2<f64>>> {
        self.0.tensors(u)
    }

    fn is_constant(&self) -> bool {
        self.0.is_constant()
    }
}

/// Reads `mass.csv` back as `(t, M)` pairs.
pub fn read_mass_csv(path: &Path) -> Result<Vec<(f64, f64)>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .skip(1)
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let mut it = l.split(',').map(|v| v.trim().parse::<f64>());
            match (it.next(), it.next()) {
                (Some(Ok(t)), Some(Ok(m))) => Ok((t, m)),
                _ => Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: format!("expected `time,mass`, got `{l}`"),
                }),
            }
        })
        .collect()
}
