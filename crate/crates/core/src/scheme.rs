//! Fixed-point iteration between the cell problems and the macroscopic evolution.

use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::macroscale::{MacroSolver, MacroTrajectory, TensorProvider, TensorSource};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IterationMode {
    /// Iterate `k + 1` takes its tensors from the whole trajectory of iterate `k`.
    #[default]
    TrajectoryFixedPoint,
    /// The tensor of step `n + 1` comes from `u^n` of the sweep being computed, so every
    /// sweep after the first repeats the previous one.
    TimeLaggedSweep,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DispersionMode {
    #[default]
    Table,
    DirectPerNode,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IterationConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub mode: IterationMode,
    pub dispersion: DispersionMode,
}

impl Default for IterationConfig {
    fn default() -> Self {
        IterationConfig {
            tol: 1e-7,
            max_iter: 20,
            mode: IterationMode::default(),
            dispersion: DispersionMode::default(),
        }
    }
}

impl IterationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::config("iteration.tol", "must be positive"));
        }
        if self.max_iter < 1 {
            return Err(Error::config("iteration.max_iter", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct IterationReport {
    /// `e_k = ‖u^{k+1} − u^k‖` in `L²(0,T; L²(Ω))`.
    pub errors: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub clamp_warnings: usize,
    /// Wall time of each iteration in seconds.
    pub wall_times: Vec<f64>,
    /// Iterates that broke the `L∞` bound allowance.
    pub linf_violations: usize,
}

impl IterationReport {
    /// `iteration,error,wall_seconds` lines.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,error,wall_seconds\n");
        for (k, (e, w)) in self.errors.iter().zip(&self.wall_times).enumerate() {
            let _ = writeln!(out, "{},{e},{w}", k + 1);
        }
        out
    }

    /// The error a caller can propagate when the iteration stopped early.
    pub fn not_converged(&self) -> Option<Error> {
        (!self.converged).then(|| Error::NotConverged {
            iterations: self.iterations,
            last_error: self.errors.last().copied().unwrap_or(f64::INFINITY),
        })
    }
}

/// Initial iterate: the initial datum held constant in time.
pub fn initial_iterate(solver: &MacroSolver) -> MacroTrajectory {
    MacroTrajectory::constant(solver.initial_field(), solver.times())
}

/// Runs the iteration from the constant-in-time initial iterate.
///
/// Hitting `max_iter` is not an error: the last iterate is returned with
/// `converged = false`.
pub fn iterate(
    solver: &MacroSolver,
    provider: &dyn TensorProvider,
    cfg: &IterationConfig,
) -> Result<(MacroTrajectory, IterationReport)> {
    cfg.validate()?;
    let clamps_before = provider.clamp_count();
    let mut current = initial_iterate(solver);
    let mut errors = Vec::new();
    let mut wall_times = Vec::new();
    let mut linf_violations = 0;
    let mut converged = false;
    for k in 0..cfg.max_iter {
        let start = Instant::now();
        let source = match cfg.mode {
            IterationMode::TrajectoryFixedPoint => TensorSource::Trajectory(&current.fields),
            IterationMode::TimeLaggedSweep => TensorSource::Lagged,
        };
        let next = solver.solve_trajectory(provider, source)?;
        let e = solver.trajectory_distance(&next, &current)?;
        wall_times.push(start.elapsed().as_secs_f64());
        errors.push(e);
        if !next.linf_violations.is_empty() {
            linf_violations += 1;
        }
        log::info!("iteration {}: e = {e:.3e}", k + 1);
        current = next;
        if e < cfg.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!(
            "fixed-point iteration stopped after {} iterations with e = {:.3e}",
            errors.len(),
            errors.last().unwrap()
        );
    }
    let report = IterationReport {
        iterations: errors.len(),
        errors,
        converged,
        clamp_warnings: provider.clamp_count() - clamps_before,
        wall_times,
        linf_violations,
    };
    Ok((current, report))
}

/// Distance between `traj` and the trajectory obtained by re-evaluating its tensors and
/// solving once more.
pub fn fixed_point_residual(
    solver: &MacroSolver,
    provider: &dyn TensorProvider,
    traj: &MacroTrajectory,
    mode: IterationMode,
) -> Result<f64> {
    let source = match mode {
        IterationMode::TrajectoryFixedPoint => TensorSource::Trajectory(&traj.fields),
        IterationMode::TimeLaggedSweep => TensorSource::Lagged,
    };
    let again = solver.solve_trajectory(provider, source)?;
    solver.trajectory_distance(&again, traj)
}

/// Pairwise terminal-field `L²` differences between the four mode combinations.
#[derive(Debug, Clone, Serialize)]
pub struct ModeComparison {
    pub table_vs_direct: f64,
    pub trajectory_vs_lagged: f64,
    pub table_lagged_vs_direct_lagged: f64,
    pub max_pairwise: f64,
    pub reports: Vec<(String, IterationReport)>,
}

/// Runs both dispersion modes and both iteration modes on the same problem.
pub fn cross_validate_modes(
    solver: &MacroSolver,
    table: &dyn TensorProvider,
    direct: &dyn TensorProvider,
    cfg: &IterationConfig,
) -> Result<ModeComparison> {
    let mut runs = Vec::new();
    for (dname, provider, dmode) in [
        ("table", table, DispersionMode::Table),
        ("direct", direct, DispersionMode::DirectPerNode),
    ] {
        for (mname, mode) in [
            ("trajectory", IterationMode::TrajectoryFixedPoint),
            ("lagged", IterationMode::TimeLaggedSweep),
        ] {
            let c = IterationConfig {
                mode,
                dispersion: dmode,
                ..*cfg
            };
            let (traj, report) = iterate(solver, provider, &c)?;
            runs.push((format!("{dname}/{mname}"), traj, report));
        }
    }
    let dist = |a: usize, b: usize| solver.field_distance(runs[a].1.terminal(), runs[b].1.terminal());
    let mut max_pairwise: f64 = 0.0;
    for a in 0..runs.len() {
        for b in a + 1..runs.len() {
            max_pairwise = max_pairwise.max(dist(a, b));
        }
    }
    Ok(ModeComparison {
        table_vs_direct: dist(0, 2),
        trajectory_vs_lagged: dist(0, 1),
        table_lagged_vs_direct_lagged: dist(1, 3),
        max_pairwise,
        reports: runs.into_iter().map(|(n, _, r)| (n, r)).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dispersion::{DispersionTable, Nonlinearity, TableMeta, TableProvider};
    use crate::macroscale::{MacroProblem, TensorSampling};
    use crate::mesh::{build_macro_mesh, Rect};
    use nalgebra::Matrix2;
    use std::sync::Arc;

    fn solver() -> MacroSolver {
        MacroSolver::new(MacroProblem {
            mesh: build_macro_mesh(Rect::new(0.0, 1.0, 0.0, 2.0), 8, 8).unwrap(),
            t_final: 0.4,
            dt: 0.1,
            initial: Arc::new(|x| (std::f64::consts::PI * x[0]).sin() * (std::f64::consts::PI * x[1] / 2.0).sin()),
            source: Arc::new(|_, _| 1.0),
            sampling: TensorSampling::QuadraturePoint,
            lumped_mass: false,
        })
        .unwrap()
    }

    fn table() -> Arc<DispersionTable> {
        let meta = TableMeta {
            geometry: "test".into(),
            case: "test".into(),
            h: 1.0,
            flow: String::new(),
        };
        let nodes = vec![-2.0, 0.0, 2.0];
        let t = vec![Matrix2::new(2.0, 0.1, -0.1, 1.5), Matrix2::identity(), Matrix2::new(2.0, -0.1, 0.1, 1.5)];
        Arc::new(DispersionTable::new(meta, nodes, t).unwrap())
    }

    #[test]
    fn constant_nonlinearity_converges_immediately() {
        let s = solver();
        let p = TableProvider::single(table(), Nonlinearity::constant(0.7));
        let cfg = IterationConfig::default();
        let (_, rep) = iterate(&s, &p, &cfg).unwrap();
        assert!(rep.converged && rep.iterations <= 2, "{:?}", rep.errors);
    }

    #[test]
    fn lagged_sweeps_repeat() {
        let s = solver();
        let p = TableProvider::single(table(), Nonlinearity::exclusion());
        let cfg = IterationConfig {
            mode: IterationMode::TimeLaggedSweep,
            ..IterationConfig::default()
        };
        let (_, rep) = iterate(&s, &p, &cfg).unwrap();
        assert_eq!(rep.iterations, 2);
        assert_eq!(rep.errors[1], 0.0);
    }

    #[test]
    fn forced_stop_is_flagged() {
        let s = solver();
        let p = TableProvider::single(table(), Nonlinearity::exclusion());
        let cfg = IterationConfig {
            max_iter: 1,
            ..IterationConfig::default()
        };
        let (_, rep) = iterate(&s, &p, &cfg).unwrap();
        assert!(!rep.converged && rep.errors[0] >= cfg.tol);
        assert!(matches!(rep.not_converged(), Some(Error::NotConverged { .. })));
    }

    #[test]
    fn trajectory_iteration_converges_and_is_a_fixed_point() {
        let s = solver();
        let p = TableProvider::single(table(), Nonlinearity::exclusion());
        let cfg = IterationConfig::default();
        let (traj, rep) = iterate(&s, &p, &cfg).unwrap();
        assert!(rep.converged, "{:?}", rep.errors);
        let r = fixed_point_residual(&s, &p, &traj, cfg.mode).unwrap();
        assert!(r <= 10.0 * cfg.tol);
    }
}
