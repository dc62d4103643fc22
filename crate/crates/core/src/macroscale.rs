//! Implicit-Euler P1 solver for `∂t u − div(D*(u) ∇u) = f` on a rectangle with
//! homogeneous Dirichlet data.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use nalgebra::Matrix2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cell::min_sym_eigenvalue;
use crate::error::{Error, Result};
use crate::fem::{
    assemble_bilinear, eliminate_dirichlet, BilinearForm, CsrMatrix, DofMap, Factorization,
    P1Element, QuadratureRule, Space,
};
use crate::mesh::{EdgeTag, Point, Rect, TriMesh, COORD_TOL};

/// Allowance on the a-priori `L∞` bound before a warning is recorded.
pub const LINF_ALLOWANCE: f64 = 0.05;

/// Maps concentration samples to dispersion tensors, one tensor per sample.
pub trait TensorProvider: Sync {
    fn tensors(&self, u: &[f64]) -> Result<Vec<Matrix2<f64>>>;

    /// Number of out-of-range drift strengths met so far.
    fn clamp_count(&self) -> usize {
        0
    }

    /// True when the tensor does not depend on `u`.
    fn is_constant(&self) -> bool {
        false
    }
}

/// The same tensor everywhere.
#[derive(Debug, Clone, Copy)]
pub struct ConstantTensor(pub Matrix2<f64>);

impl TensorProvider for ConstantTensor {
    fn tensors(&self, u: &[f64]) -> Result<Vec<Matrix2<f64>>> {
        Ok(vec![self.0; u.len()])
    }

    fn is_constant(&self) -> bool {
        true
    }
}

/// Where the concentration that feeds the tensor is sampled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TensorSampling {
    /// At every quadrature point.
    #[default]
    QuadraturePoint,
    /// Once per element, at the element mean.
    ElementAverage,
    /// At the vertices; the element tensor is the mean of its vertex tensors.
    Vertex,
}

pub type SpaceTimeField = Arc<dyn Fn(Point, f64) -> f64 + Send + Sync>;

/// Data of the macroscopic evolution problem.
#[derive(Clone)]
pub struct MacroProblem {
    pub mesh: TriMesh,
    pub t_final: f64,
    pub dt: f64,
    pub initial: Arc<dyn Fn(Point) -> f64 + Send + Sync>,
    pub source: SpaceTimeField,
    pub sampling: TensorSampling,
    pub lumped_mass: bool,
}

impl std::fmt::Debug for MacroProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MacroProblem")
            .field("vertices", &self.mesh.num_vertices())
            .field("t_final", &self.t_final)
            .field("dt", &self.dt)
            .field("sampling", &self.sampling)
            .field("lumped_mass", &self.lumped_mass)
            .finish()
    }
}

impl MacroProblem {
    pub fn steps(&self) -> usize {
        (self.t_final / self.dt).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.t_final > 0.0) {
            return Err(Error::Precondition(format!(
                "time step {} and final time {} must be positive",
                self.dt, self.t_final
            )));
        }
        let n = self.t_final / self.dt;
        if n.round() < 1.0 || (n - n.round()).abs() > 1e-9 * n.max(1.0) {
            return Err(Error::Precondition(format!(
                "final time {} is not an integer multiple of the step {}",
                self.t_final, self.dt
            )));
        }
        Ok(())
    }
}

/// Which concentration sets the tensor of step `n + 1`.
#[derive(Debug, Clone, Copy)]
pub enum TensorSource<'a> {
    /// Value at time `t^{n+1}` of a previous trajectory.
    Trajectory(&'a [Vec<f64>]),
    /// Value `u^n` of the trajectory being computed.
    Lagged,
}

/// Time-indexed vertex fields with per-step diagnostics.
#[derive(Debug, Clone, Serialize)]
pub struct MacroTrajectory {
    pub times: Vec<f64>,
    pub fields: Vec<Vec<f64>>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    /// `‖g‖∞ + T ‖f‖∞` sampled at the vertices.
    pub linf_bound: f64,
    /// Time nodes whose maximum exceeds the bound by more than [`LINF_ALLOWANCE`].
    pub linf_violations: Vec<usize>,
}

impl MacroTrajectory {
    /// Constant-in-time trajectory.
    pub fn constant(field: Vec<f64>, times: Vec<f64>) -> Self {
        let (mn, mx) = min_max(&field);
        let n = times.len();
        MacroTrajectory {
            times,
            fields: vec![field; n],
            min: vec![mn; n],
            max: vec![mx; n],
            linf_bound: f64::INFINITY,
            linf_violations: Vec::new(),
        }
    }

    pub fn terminal(&self) -> &[f64] {
        self.fields.last().expect("trajectory has at least one field")
    }

    /// Largest `|u|` over all time nodes.
    pub fn linf(&self) -> f64 {
        self.min
            .iter()
            .chain(&self.max)
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

fn min_max(v: &[f64]) -> (f64, f64) {
    v.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)))
}

/// Prepared solver: mesh data, mass matrix and load sampling shared by all steps.
pub struct MacroSolver {
    problem: MacroProblem,
    dofmap: DofMap,
    elements: Vec<P1Element>,
    rule: QuadratureRule,
    /// Raw consistent (or lumped) mass matrix.
    mass: CsrMatrix,
    /// Mass matrix on free dofs.
    mass_free: CsrMatrix,
    source_static: bool,
    static_load: Option<Vec<f64>>,
}

impl std::fmt::Debug for MacroSolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MacroSolver").field("problem", &self.problem).finish()
    }
}

impl MacroSolver {
    pub fn new(problem: MacroProblem) -> Result<Self> {
        problem.validate()?;
        let mesh = &problem.mesh;
        let dirichlet = [EdgeTag::Left, EdgeTag::Right, EdgeTag::Bottom, EdgeTag::Top];
        let dofmap = DofMap::new(mesh, Space::ScalarP1, false, &dirichlet)?;
        let rule = QuadratureRule::default();
        let elements: Vec<P1Element> = (0..mesh.num_triangles()).map(|t| P1Element::of(mesh, t)).collect();
        let mut mass = assemble_bilinear(mesh, &dofmap, &BilinearForm::Mass, &rule)?;
        if problem.lumped_mass {
            let n = mass.matrix.n_rows();
            let sums: Vec<f64> = (0..n).map(|r| mass.matrix.row(r).map(|(_, v)| v).sum()).collect();
            mass.matrix = CsrMatrix::from_triplets(n, n, sums.into_iter().enumerate().map(|(i, v)| (i, i, v)));
        }
        let mass_free = eliminate_dirichlet(&mass, &dofmap)?.matrix;
        let mut solver = MacroSolver {
            source_static: false,
            static_load: None,
            mass: mass.matrix,
            mass_free,
            problem,
            dofmap,
            elements,
            rule,
        };
        // a source that ignores time is assembled once
        let s = &solver.problem.source;
        let probe = [[0.3, 0.7], [0.5, 0.5], [0.11, 1.3]];
        let ts = [0.0, 0.37 * solver.problem.t_final, solver.problem.t_final];
        solver.source_static = probe.iter().all(|&x| ts.iter().all(|&t| s(x, t) == s(x, 0.0)));
        if solver.source_static {
            solver.static_load = Some(solver.load(0.0));
        }
        Ok(solver)
    }

    pub fn problem(&self) -> &MacroProblem {
        &self.problem
    }

    pub fn mesh(&self) -> &TriMesh {
        &self.problem.mesh
    }

    pub fn dofmap(&self) -> &DofMap {
        &self.dofmap
    }

    pub fn times(&self) -> Vec<f64> {
        let n = self.problem.steps();
        (0..=n).map(|k| k as f64 * self.problem.dt).collect()
    }

    /// Vertex interpolant of the initial datum with zero boundary values.
    pub fn initial_field(&self) -> Vec<f64> {
        let g = &self.problem.initial;
        let free: Vec<f64> = self.dofmap.restrict(
            &self.mesh().vertices().iter().map(|&x| g(x)).collect::<Vec<_>>(),
        );
        self.dofmap.expand(&free)
    }

    /// Free load vector `∫ f(·, t) φ_i`.
    fn load(&self, t: f64) -> Vec<f64> {
        if let Some(l) = &self.static_load {
            return l.clone();
        }
        let f = &self.problem.source;
        let mut raw = vec![0.0; self.dofmap.n_raw()];
        let tris = self.mesh().triangles();
        for (e, el) in self.elements.iter().enumerate() {
            for (l, w) in self.rule.iter() {
                let fx = f(el.map(l), t) * w * el.area;
                for k in 0..3 {
                    raw[tris[e][k]] += fx * l[k];
                }
            }
        }
        let mut out = vec![0.0; self.dofmap.free_dof_count()];
        for (d, v) in raw.iter().enumerate() {
            if let Some(i) = self.dofmap.free_of_raw(d) {
                out[i] += v;
            }
        }
        out
    }

    /// Concentration samples for the tensor provider, in the order of `sampling`.
    fn samples(&self, u: &[f64]) -> Vec<f64> {
        let tris = self.mesh().triangles();
        match self.problem.sampling {
            TensorSampling::QuadraturePoint => tris
                .iter()
                .flat_map(|t| self.rule.points.iter().map(move |l| l[0] * u[t[0]] + l[1] * u[t[1]] + l[2] * u[t[2]]))
                .collect(),
            TensorSampling::ElementAverage => tris.iter().map(|t| (u[t[0]] + u[t[1]] + u[t[2]]) / 3.0).collect(),
            TensorSampling::Vertex => u.to_vec(),
        }
    }

    /// Tensor at each (element, quadrature point).
    fn tensor_field(&self, provider: &dyn TensorProvider, u: &[f64]) -> Result<Vec<Matrix2<f64>>> {
        let q = self.rule.len();
        let samples = self.samples(u);
        let tensors = provider.tensors(&samples)?;
        if tensors.len() != samples.len() {
            return Err(Error::DimensionMismatch {
                expected: samples.len(),
                actual: tensors.len(),
            });
        }
        for d in &tensors {
            let lam = min_sym_eigenvalue(d);
            if !(lam > 0.0) {
                return Err(Error::NonPositiveTensor(lam));
            }
        }
        let tris = self.mesh().triangles();
        Ok(match self.problem.sampling {
            TensorSampling::QuadraturePoint => tensors,
            TensorSampling::ElementAverage => tensors.iter().flat_map(|d| std::iter::repeat_n(*d, q)).collect(),
            TensorSampling::Vertex => tris
                .iter()
                .flat_map(|t| {
                    let d = (tensors[t[0]] + tensors[t[1]] + tensors[t[2]]) / 3.0;
                    std::iter::repeat_n(d, q)
                })
                .collect(),
        })
    }

    /// Free stiffness matrix `∫ D* ∇φ_j · ∇φ_i` for a tensor per quadrature point.
    fn stiffness(&self, tensors: &[Matrix2<f64>]) -> Result<CsrMatrix> {
        let q = self.rule.len();
        let tris = self.mesh().triangles();
        let trips: Vec<(usize, usize, f64)> = self
            .elements
            .par_iter()
            .enumerate()
            .flat_map_iter(|(e, el)| {
                let mut d = Matrix2::zeros();
                for (k, (_, w)) in self.rule.iter().enumerate() {
                    d += tensors[e * q + k] * w;
                }
                let mut out = Vec::with_capacity(9);
                for i in 0..3 {
                    for j in 0..3 {
                        let gi = nalgebra::Vector2::from(el.grads[i]);
                        let gj = nalgebra::Vector2::from(el.grads[j]);
                        out.push((tris[e][i], tris[e][j], el.area * (d * gj).dot(&gi)));
                    }
                }
                out
            })
            .collect();
        let n = self.dofmap.n_raw();
        let raw = crate::fem::SparseSystem::new(CsrMatrix::from_triplets(n, n, trips), vec![0.0; n])?;
        Ok(eliminate_dirichlet(&raw, &self.dofmap)?.matrix)
    }

    /// One implicit Euler step from `u_prev` (vertex values) to time index `n + 1`,
    /// with the tensor taken from the concentration `u_tensor`.
    pub fn step(
        &self,
        provider: &dyn TensorProvider,
        u_prev: &[f64],
        u_tensor: &[f64],
        n: usize,
    ) -> Result<Vec<f64>> {
        let tensors = self.tensor_field(provider, u_tensor)?;
        self.step_with(&tensors, u_prev, n)
    }

    fn step_with(&self, tensors: &[Matrix2<f64>], u_prev: &[f64], n: usize) -> Result<Vec<f64>> {
        let dt = self.problem.dt;
        let a = self.stiffness(tensors)?;
        let lhs = CsrMatrix::linear_combination(&[(&self.mass_free, 1.0 / dt), (&a, 1.0)])?;
        let prev = self.dofmap.restrict(u_prev);
        let mut rhs = self.mass_free.mul_vec(&prev);
        rhs.iter_mut().for_each(|v| *v /= dt);
        let load = self.load((n + 1) as f64 * dt);
        rhs.iter_mut().zip(&load).for_each(|(r, l)| *r += l);
        let x = Factorization::new(lhs)?.solve(&rhs)?;
        Ok(self.dofmap.expand(&x))
    }

    /// Full evolution from the initial datum.
    pub fn solve_trajectory(&self, provider: &dyn TensorProvider, source: TensorSource<'_>) -> Result<MacroTrajectory> {
        let times = self.times();
        let mut fields = Vec::with_capacity(times.len());
        fields.push(self.initial_field());
        if provider.is_constant() {
            // the stiffness matrix is the same every step
            let tensors = self.tensor_field(provider, &fields[0])?;
            let a = self.stiffness(&tensors)?;
            let dt = self.problem.dt;
            let lhs = CsrMatrix::linear_combination(&[(&self.mass_free, 1.0 / dt), (&a, 1.0)])?;
            let lu = Factorization::new(lhs)?;
            for n in 0..times.len() - 1 {
                let prev = self.dofmap.restrict(&fields[n]);
                let mut rhs = self.mass_free.mul_vec(&prev);
                rhs.iter_mut().for_each(|v| *v /= dt);
                let load = self.load(times[n + 1]);
                rhs.iter_mut().zip(&load).for_each(|(r, l)| *r += l);
                fields.push(self.dofmap.expand(&lu.solve(&rhs)?));
            }
        } else {
            for n in 0..times.len() - 1 {
                let u_tensor = match source {
                    TensorSource::Trajectory(prev) => {
                        if prev.len() != times.len() {
                            return Err(Error::DimensionMismatch {
                                expected: times.len(),
                                actual: prev.len(),
                            });
                        }
                        &prev[n + 1]
                    }
                    TensorSource::Lagged => &fields[n],
                };
                let next = self.step(provider, &fields[n], u_tensor, n)?;
                fields.push(next);
            }
        }
        Ok(self.finish(times, fields))
    }

    fn finish(&self, times: Vec<f64>, fields: Vec<Vec<f64>>) -> MacroTrajectory {
        let (min, max): (Vec<f64>, Vec<f64>) = fields.iter().map(|f| min_max(f)).unzip();
        let verts = self.mesh().vertices();
        let g_inf = verts.iter().fold(0.0f64, |m, &x| m.max((self.problem.initial)(x).abs()));
        let f_inf = times.iter().fold(0.0f64, |m, &t| {
            verts.iter().fold(m, |m, &x| m.max((self.problem.source)(x, t).abs()))
        });
        let linf_bound = g_inf + self.problem.t_final * f_inf;
        let linf_violations: Vec<usize> = (0..fields.len())
            .filter(|&n| min[n].abs().max(max[n].abs()) > linf_bound * (1.0 + LINF_ALLOWANCE))
            .collect();
        if !linf_violations.is_empty() {
            log::warn!(
                "{} time nodes exceed the L-infinity bound {linf_bound:.4}",
                linf_violations.len()
            );
        }
        MacroTrajectory {
            times,
            fields,
            min,
            max,
            linf_bound,
            linf_violations,
        }
    }

    /// Spatial `L²` norm of a vertex field (exact for P1 with the consistent mass).
    pub fn l2_norm(&self, v: &[f64]) -> f64 {
        self.mass.bilinear(v, v).max(0.0).sqrt()
    }

    /// `‖a − b‖_{L²(0,T; L²(Ω))}` with the trapezoidal rule in time.
    pub fn trajectory_distance(&self, a: &MacroTrajectory, b: &MacroTrajectory) -> Result<f64> {
        if a.fields.len() != b.fields.len() {
            return Err(Error::DimensionMismatch {
                expected: a.fields.len(),
                actual: b.fields.len(),
            });
        }
        let sq: Vec<f64> = a
            .fields
            .iter()
            .zip(&b.fields)
            .map(|(x, y)| {
                let d: Vec<f64> = x.iter().zip(y).map(|(x, y)| x - y).collect();
                self.l2_norm(&d).powi(2)
            })
            .collect();
        let mut total = 0.0;
        for n in 0..sq.len().saturating_sub(1) {
            total += 0.5 * (a.times[n + 1] - a.times[n]) * (sq[n] + sq[n + 1]);
        }
        Ok(total.sqrt())
    }

    /// `L²(Ω)` distance between two vertex fields.
    pub fn field_distance(&self, a: &[f64], b: &[f64]) -> f64 {
        let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        self.l2_norm(&d)
    }
}

/// Time series of `∫_S u(t, ·)` over an axis-aligned subdomain `S` made of whole elements.
pub fn mass_indicator(mesh: &TriMesh, traj: &MacroTrajectory, subdomain: Rect) -> Result<Vec<f64>> {
    let inside = |p: Point| {
        p[0] >= subdomain.x0 - COORD_TOL
            && p[0] <= subdomain.x1 + COORD_TOL
            && p[1] >= subdomain.y0 - COORD_TOL
            && p[1] <= subdomain.y1 + COORD_TOL
    };
    let strictly = |p: Point| {
        p[0] > subdomain.x0 + COORD_TOL
            && p[0] < subdomain.x1 - COORD_TOL
            && p[1] > subdomain.y0 + COORD_TOL
            && p[1] < subdomain.y1 - COORD_TOL
    };
    let mut members = Vec::new();
    for t in 0..mesh.num_triangles() {
        let pts = mesh.triangle_points(t);
        let c = [
            (pts[0][0] + pts[1][0] + pts[2][0]) / 3.0,
            (pts[0][1] + pts[1][1] + pts[2][1]) / 3.0,
        ];
        if strictly(c) {
            if !pts.iter().all(|&p| inside(p)) {
                return Err(Error::SubdomainMisaligned(format!("triangle {t} crosses {subdomain:?}")));
            }
            members.push(t);
        } else if pts.iter().any(|&p| strictly(p)) {
            return Err(Error::SubdomainMisaligned(format!("triangle {t} crosses {subdomain:?}")));
        }
    }
    let tris = mesh.triangles();
    Ok(traj
        .fields
        .iter()
        .map(|u| {
            members
                .iter()
                .map(|&t| mesh.triangle_area(t) * tris[t].iter().map(|&v| u[v]).sum::<f64>() / 3.0)
                .sum()
        })
        .collect())
}

/// `time,mass` lines.
pub fn mass_csv(times: &[f64], mass: &[f64]) -> String {
    let mut out = String::from("time,mass\n");
    for (t, m) in times.iter().zip(mass) {
        let _ = writeln!(out, "{t},{m}");
    }
    out
}

/// Vertex snapshot `index x y u`.
pub fn snapshot_text(mesh: &TriMesh, u: &[f64], t: f64) -> String {
    let mut out = format!("# time {t}\n# vertex x y u\n");
    for (i, (p, v)) in mesh.vertices().iter().zip(u).enumerate() {
        let _ = writeln!(out, "{i} {} {} {v}", p[0], p[1]);
    }
    out
}

pub fn write_snapshots(dir: &Path, mesh: &TriMesh, traj: &MacroTrajectory, every: usize) -> Result<usize> {
    std::fs::create_dir_all(dir)?;
    let every = every.max(1);
    let mut written = 0;
    for (n, (t, u)) in traj.times.iter().zip(&traj.fields).enumerate() {
        if n % every == 0 || n + 1 == traj.times.len() {
            std::fs::write(dir.join(format!("u_{n:04}.txt")), snapshot_text(mesh, u, *t))?;
            written += 1;
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_macro_mesh;

    fn problem(n: usize, dt: f64, t_final: f64, g: fn(Point) -> f64) -> MacroProblem {
        MacroProblem {
            mesh: build_macro_mesh(Rect::new(0.0, 1.0, 0.0, 2.0), n, n).unwrap(),
            t_final,
            dt,
            initial: Arc::new(g),
            source: Arc::new(|_, _| 0.0),
            sampling: TensorSampling::QuadraturePoint,
            lumped_mass: false,
        }
    }

    #[test]
    fn zero_data_stay_zero() {
        let s = MacroSolver::new(problem(6, 0.1, 0.5, |_| 0.0)).unwrap();
        let traj = s
            .solve_trajectory(&ConstantTensor(Matrix2::identity()), TensorSource::Lagged)
            .unwrap();
        assert!(traj.fields.iter().flatten().all(|v| *v == 0.0));
    }

    #[test]
    fn implicit_euler_dissipates() {
        let s = MacroSolver::new(problem(8, 10.0, 10.0, |x| x[0] * (1.0 - x[0]) * x[1] * (2.0 - x[1]))).unwrap();
        let traj = s
            .solve_trajectory(&ConstantTensor(Matrix2::new(1.0, 0.3, -0.3, 1.0)), TensorSource::Lagged)
            .unwrap();
        assert!(s.l2_norm(&traj.fields[1]) <= s.l2_norm(&traj.fields[0]));
    }

    #[test]
    fn unit_field_has_unit_mass_on_upper_half() {
        let mesh = build_macro_mesh(Rect::new(0.0, 1.0, 0.0, 2.0), 5, 5).unwrap();
        let traj = MacroTrajectory::constant(vec![1.0; 25], vec![0.0, 1.0]);
        let m = mass_indicator(&mesh, &traj, Rect::new(0.0, 1.0, 1.0, 2.0)).unwrap();
        assert!(m.iter().all(|v| (v - 1.0).abs() < 1e-14));
        assert!(matches!(
            mass_indicator(&mesh, &traj, Rect::new(0.0, 1.0, 1.1, 2.0)),
            Err(Error::SubdomainMisaligned(_))
        ));
    }

    #[test]
    fn step_count_must_be_integral() {
        assert!(MacroSolver::new(problem(4, 0.3, 1.0, |_| 0.0)).is_err());
    }
}
