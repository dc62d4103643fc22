use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use twoscale::pipeline;
use twoscale::scenario::Scenario;
use twoscale::verify::{self, Lab, VerifySettings};

/// Two-scale dispersion pipeline: cell meshes, Stokes drift, dispersion tables and the
/// coupled macroscopic simulation.
#[derive(Debug, Parser)]
#[command(name = "twoscale", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Worker threads (defaults to the number of cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Debug, clap::Args)]
struct RunArgs {
    /// Scenario file (TOML). Omitted: the reference scenario.
    #[arg(short, long)]
    scenario: Option<PathBuf>,

    /// Output directory, overriding `output` in the scenario.
    #[arg(short, long)]
    out: Option<PathBuf>,

    /// Overrides such as `macro.dt=0.1` or `geometry.kind=two_rects`.
    #[arg(value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the cell and macroscopic meshes.
    Mesh(RunArgs),
    /// Solve the cell Stokes problem and write the drift field.
    Stokes(RunArgs),
    /// Tabulate the effective tensor over the drift-strength sweep.
    Sweep(RunArgs),
    /// Run the coupled fixed-point iteration.
    Simulate(RunArgs),
    /// Run the acceptance checks and print a pass/fail table.
    Verify {
        #[command(flatten)]
        run: RunArgs,
        /// Criteria to run, e.g. `--only 1,4,7`.
        #[arg(long, value_delimiter = ',')]
        only: Vec<u8>,
    },
}

fn load(args: &RunArgs) -> Result<Scenario> {
    let text = match &args.scenario {
        Some(path) => std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?,
        None => String::new(),
    };
    let mut scenario = Scenario::from_toml_str(&text, &args.overrides)?;
    if let Some(out) = &args.out {
        scenario.output = out.clone();
    }
    Ok(scenario)
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Mesh(args) => {
            let s = pipeline::run_mesh(&load(&args)?)?;
            println!(
                "cell mesh: {} vertices, {} triangles, min angle {:.1} deg -> {}",
                s.cell_vertices,
                s.cell_triangles,
                s.cell_min_angle,
                s.cell_mesh.display()
            );
            println!("macro mesh: {} vertices -> {}", s.macro_vertices, s.macro_mesh.display());
        }
        Command::Stokes(args) => {
            let (_, s) = pipeline::run_stokes(&load(&args)?)?;
            let d = &s.diagnostics;
            println!(
                "max speed {:.4}, ‖div B‖ {:.2e}, dissipation {:.6e}, work {:.6e} -> {}",
                d.max_speed,
                d.divergence_l2,
                d.dissipation,
                d.work,
                s.field.display()
            );
        }
        Command::Sweep(args) => {
            let (table, s) = pipeline::run_sweep(&load(&args)?)?;
            println!(
                "{} nodes, min eigenvalue {:.4e}, {} -> {}",
                table.p_nodes().len(),
                s.min_eigenvalue,
                if s.reused { "reused" } else { "computed" },
                s.table.display()
            );
        }
        Command::Simulate(args) => {
            let scenario = load(&args)?;
            let (_, s) = pipeline::run_simulate(&scenario)?;
            let r = &s.report;
            println!(
                "{} after {} iterations (last e = {:.3e}), clamp warnings {}, max u {:.4} -> {}",
                if r.converged { "converged" } else { "NOT converged" },
                r.iterations,
                r.errors.last().copied().unwrap_or(f64::NAN),
                r.clamp_warnings,
                s.terminal_max,
                scenario.output.display()
            );
            return Ok(r.converged);
        }
        Command::Verify { run, only } => {
            let scenario = load(&run)?;
            std::fs::create_dir_all(&scenario.output)?;
            let lab = Lab::new(VerifySettings::default());
            let ids = if only.is_empty() { verify::CRITERIA.to_vec() } else { only };
            let mut reports = Vec::new();
            for id in ids {
                let r = verify::run_criterion(&lab, id);
                print!("{}", r.table());
                reports.push(r);
            }
            let json = scenario.output.join("verify.json");
            std::fs::write(&json, verify::results_json(&reports))?;
            pipeline::write_metadata(&scenario, "verify", &lab.settings)?;
            println!();
            for r in &reports {
                println!("{}", r.summary_line());
            }
            println!("results -> {}", json.display());
            return Ok(reports.iter().all(|r| r.passed()));
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: could not configure {n} threads: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
