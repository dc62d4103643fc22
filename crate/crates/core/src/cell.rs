//! Drift-perturbed periodic cell problems and the effective tensor `D̄(p)`.
//!
//! For a scalar drift strength `p`, each corrector `w_i` is the zero-mean periodic P1
//! function with
//!
//! ```text
//! ∫ (D ∇w_i − p B w_i) · ∇ψ = −∫ D e_i · ∇ψ   for all periodic P1 ψ,
//! ```
//!
//! and `D̄(p)_ij = |Y|⁻¹ ∫ D (e_j + ∇w_j) · e_i`.

use std::f64::consts::PI;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use nalgebra::{Matrix2, SymmetricEigen};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fem::{
    apply_periodic, assemble_bilinear, attach_zero_mean, basis_integrals, fold_vector,
    BilinearForm, CsrMatrix, DofMap, DriftForm, P1Element, QuadratureRule, Space, SparseSystem,
    VelocityField,
};
use crate::mesh::{fluid_area, Point, TriMesh};

/// Relative slack on the corrector energy bound.
pub const ENERGY_SLACK: f64 = 1e-2;

/// Element Péclet number above which a warning is logged.
pub const PECLET_WARN: f64 = 2.0;

pub type TensorField = Arc<dyn Fn(Point) -> Matrix2<f64> + Send + Sync>;

/// Micro diffusion matrix `D(y)` with its coercivity constant.
#[derive(Clone)]
pub struct MicroDiffusion {
    label: String,
    theta: f64,
    eval: TensorField,
}

impl std::fmt::Debug for MicroDiffusion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MicroDiffusion")
            .field("label", &self.label)
            .field("theta", &self.theta)
            .finish()
    }
}

impl MicroDiffusion {
    pub fn new(label: impl Into<String>, theta: f64, eval: TensorField) -> Self {
        MicroDiffusion {
            label: label.into(),
            theta,
            eval,
        }
    }

    /// `diag(2 + sin πy1 sin πy2, 2 + sin πy1)`, θ = 1.
    pub fn fast() -> Self {
        MicroDiffusion::new(
            "fast",
            1.0,
            Arc::new(|y: Point| {
                let s1 = (PI * y[0]).sin();
                Matrix2::new(2.0 + s1 * (PI * y[1]).sin(), 0.0, 0.0, 2.0 + s1)
            }),
        )
    }

    /// `diag(0.05 + sin πy1 sin πy2 / 50, 0.05 + sin πy1 / 50)`, θ = 0.03.
    pub fn slow() -> Self {
        MicroDiffusion::new(
            "slow",
            0.03,
            Arc::new(|y: Point| {
                let s1 = (PI * y[0]).sin();
                Matrix2::new(
                    0.05 + s1 * (PI * y[1]).sin() / 50.0,
                    0.0,
                    0.0,
                    0.05 + s1 / 50.0,
                )
            }),
        )
    }

    pub fn constant(c: f64) -> Self {
        MicroDiffusion::new(format!("constant({c})"), c, Arc::new(move |_| Matrix2::identity() * c))
    }

    pub fn diagonal(d1: f64, d2: f64) -> Self {
        MicroDiffusion::new(
            format!("diagonal({d1},{d2})"),
            d1.min(d2),
            Arc::new(move |_| Matrix2::new(d1, 0.0, 0.0, d2)),
        )
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn at(&self, y: Point) -> Matrix2<f64> {
        (self.eval)(y)
    }
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn min_sym_eigenvalue(m: &Matrix2<f64>) -> f64 {
    let s = (m + m.transpose()) * 0.5;
    SymmetricEigen::new(s).eigenvalues.min()
}

struct QuadPoint {
    weight: f64,
    diffusion: Matrix2<f64>,
    velocity: [f64; 2],
}

struct ElementData {
    element: P1Element,
    nodes: [usize; 3],
    points: Vec<QuadPoint>,
}

/// Everything about a cell problem that does not depend on `p`.
pub struct CellContext {
    mesh: TriMesh,
    diffusion: MicroDiffusion,
    velocity: Arc<dyn VelocityField + Send>,
    drift_form: DriftForm,
    dofmap: DofMap,
    stiffness: CsrMatrix,
    drift_unit: CsrMatrix,
    loads: [Vec<f64>; 2],
    integrals: Vec<f64>,
    elements: Vec<ElementData>,
    area: f64,
    load_norms: [f64; 2],
    max_speed: f64,
    peclet_warned: AtomicBool,
}

impl std::fmt::Debug for CellContext {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CellContext")
            .field("vertices", &self.mesh.num_vertices())
            .field("diffusion", &self.diffusion)
            .field("drift_form", &self.drift_form)
            .finish()
    }
}

/// Correctors and effective tensor for one drift strength.
#[derive(Debug, Clone)]
pub struct CellSolution {
    pub p: f64,
    /// Vertex values of `w_1` and `w_2`.
    pub correctors: [Vec<f64>; 2],
    pub dbar: Matrix2<f64>,
}

/// Symmetric and skew parts of `D̄(p)` assembled from their own integrals.
#[derive(Debug, Clone, Copy)]
pub struct TensorSplit {
    pub symmetric: Matrix2<f64>,
    pub skew: Matrix2<f64>,
}

impl CellContext {
    pub fn new(
        mesh: TriMesh,
        diffusion: MicroDiffusion,
        velocity: Arc<dyn VelocityField + Send>,
    ) -> Result<Self> {
        CellContext::with_form(mesh, diffusion, velocity, DriftForm::default())
    }

    pub fn with_form(
        mesh: TriMesh,
        diffusion: MicroDiffusion,
        velocity: Arc<dyn VelocityField + Send>,
        drift_form: DriftForm,
    ) -> Result<Self> {
        let theta = diffusion.theta();
        if !(theta > 0.0) {
            return Err(Error::Precondition(format!("coercivity constant must be positive, got {theta}")));
        }
        if let Some(n) = velocity.triangle_count() {
            if n != mesh.num_triangles() {
                return Err(Error::DimensionMismatch {
                    expected: mesh.num_triangles(),
                    actual: n,
                });
            }
        }
        let rule = QuadratureRule::default();
        let dofmap = DofMap::new(&mesh, Space::ScalarP1, true, &[])?;

        let mut elements = Vec::with_capacity(mesh.num_triangles());
        let mut max_speed = 0.0f64;
        for t in 0..mesh.num_triangles() {
            let element = P1Element::of(&mesh, t);
            let mut points = Vec::with_capacity(rule.len());
            for (l, w) in rule.iter() {
                let x = element.map(l);
                let d = diffusion.at(x);
                let lam = min_sym_eigenvalue(&d);
                if lam < theta * (1.0 - 1e-12) {
                    return Err(Error::CoercivityViolated {
                        theta,
                        min_eigenvalue: lam,
                        at: x,
                    });
                }
                let b = velocity.velocity(t, l, x);
                max_speed = max_speed.max(b[0].hypot(b[1]));
                points.push(QuadPoint {
                    weight: w * element.area,
                    diffusion: d,
                    velocity: b,
                });
            }
            let tri = mesh.triangles()[t];
            elements.push(ElementData {
                element,
                nodes: tri,
                points,
            });
        }

        let eval = |y: Point| diffusion.at(y);
        let stiffness = assemble_bilinear(&mesh, &dofmap, &BilinearForm::Stiffness(&eval), &rule)?;
        let drift = assemble_bilinear(
            &mesh,
            &dofmap,
            &BilinearForm::Drift {
                velocity: velocity.as_ref(),
                p: 1.0,
                form: drift_form,
            },
            &rule,
        )?;
        let stiffness = apply_periodic(&stiffness, &dofmap)?.matrix;
        let drift_unit = apply_periodic(&drift, &dofmap)?.matrix;

        let mut loads = [vec![0.0; dofmap.n_raw()], vec![0.0; dofmap.n_raw()]];
        let mut load_norms = [0.0; 2];
        for e in &elements {
            for q in &e.points {
                for i in 0..2 {
                    let de = q.diffusion.column(i);
                    load_norms[i] += q.weight * de.norm_squared();
                    for k in 0..3 {
                        let g = e.element.grads[k];
                        loads[i][e.nodes[k]] -= q.weight * (de[0] * g[0] + de[1] * g[1]);
                    }
                }
            }
        }
        let loads = loads.map(|l| fold_vector(&dofmap, &l));
        let integrals = fold_vector(&dofmap, &basis_integrals(&mesh, &dofmap));
        let area = fluid_area(&mesh);
        Ok(CellContext {
            mesh,
            diffusion,
            velocity,
            drift_form,
            dofmap,
            stiffness,
            drift_unit,
            loads,
            integrals,
            elements,
            area,
            load_norms: load_norms.map(f64::sqrt),
            max_speed,
            peclet_warned: AtomicBool::new(false),
        })
    }

    pub fn mesh(&self) -> &TriMesh {
        &self.mesh
    }

    pub fn diffusion(&self) -> &MicroDiffusion {
        &self.diffusion
    }

    pub fn velocity(&self) -> &dyn VelocityField {
        self.velocity.as_ref()
    }

    pub fn drift_form(&self) -> DriftForm {
        self.drift_form
    }

    /// `|Y|`
    pub fn fluid_area(&self) -> f64 {
        self.area
    }

    /// Largest drift speed over quadrature points.
    pub fn max_speed(&self) -> f64 {
        self.max_speed
    }

    /// Element Péclet number `|p| ‖B‖∞ h / (2θ)`.
    pub fn peclet(&self, p: f64) -> f64 {
        p.abs() * self.max_speed * self.mesh.h() / (2.0 * self.diffusion.theta())
    }

    /// `‖D e_i‖_{L²}` for `i = 1, 2`.
    pub fn load_norms(&self) -> [f64; 2] {
        self.load_norms
    }

    /// Upper bound `‖D e_i‖ / θ` on `‖∇w_i‖`.
    pub fn energy_bounds(&self) -> [f64; 2] {
        self.load_norms.map(|n| n / self.diffusion.theta())
    }

    /// The bordered system `(K + pN) w = load_i` with the zero-mean row.
    pub fn system(&self, p: f64, i: usize) -> Result<SparseSystem> {
        let matrix = CsrMatrix::linear_combination(&[(&self.stiffness, 1.0), (&self.drift_unit, p)])?;
        let sys = SparseSystem::new(matrix, self.loads[i].clone())?;
        attach_zero_mean(&sys, self.integrals.clone())
    }

    /// Solves both correctors with a single factorization and checks the energy bound.
    pub fn solve(&self, p: f64) -> Result<CellSolution> {
        if !p.is_finite() {
            return Err(Error::Precondition(format!("drift strength must be finite, got {p}")));
        }
        let pe = self.peclet(p);
        if pe > PECLET_WARN && !self.peclet_warned.swap(true, Ordering::Relaxed) {
            log::warn!(
                "cell problem is convection dominated: element Péclet {pe:.2} at p = {p} (h = {:.4})",
                self.mesh.h()
            );
        }
        let sys = self.system(p, 0)?;
        let lu = sys.factorize()?;
        let mut correctors: [Vec<f64>; 2] = Default::default();
        for i in 0..2 {
            let mut rhs = self.loads[i].clone();
            rhs.push(0.0);
            let x = lu.solve(&rhs)?;
            correctors[i] = self.dofmap.expand(&x[..sys.n_unknowns()]);
        }
        let bounds = self.energy_bounds();
        for i in 0..2 {
            let g = self.gradient_norm(&correctors[i]);
            if g > bounds[i] * (1.0 + ENERGY_SLACK) {
                return Err(Error::EnergyBoundViolated {
                    index: i + 1,
                    gradient: g,
                    bound: bounds[i],
                });
            }
        }
        let dbar = self.dbar_entries(&correctors);
        Ok(CellSolution { p, correctors, dbar })
    }

    /// Solves at every `p` in parallel.
    pub fn solve_many(&self, ps: &[f64]) -> Result<Vec<CellSolution>> {
        ps.par_iter().map(|&p| self.solve(p)).collect()
    }

    fn gradient(&self, e: &ElementData, w: &[f64]) -> [f64; 2] {
        let mut g = [0.0; 2];
        for k in 0..3 {
            g[0] += w[e.nodes[k]] * e.element.grads[k][0];
            g[1] += w[e.nodes[k]] * e.element.grads[k][1];
        }
        g
    }

    /// `‖∇w‖_{L²}` of a vertex field.
    pub fn gradient_norm(&self, w: &[f64]) -> f64 {
        self.elements
            .iter()
            .map(|e| {
                let g = self.gradient(e, w);
                e.element.area * (g[0] * g[0] + g[1] * g[1])
            })
            .sum::<f64>()
            .sqrt()
    }

    /// `∫ w` of a vertex field.
    pub fn mean_integral(&self, w: &[f64]) -> f64 {
        self.elements
            .iter()
            .map(|e| e.element.area * e.nodes.iter().map(|&n| w[n]).sum::<f64>() / 3.0)
            .sum()
    }

    /// `D̄_ij = |Y|⁻¹ ∫ D (e_j + ∇w_j) · e_i`.
    pub fn dbar_entries(&self, correctors: &[Vec<f64>; 2]) -> Matrix2<f64> {
        let mut out = Matrix2::zeros();
        for e in &self.elements {
            let g = [self.gradient(e, &correctors[0]), self.gradient(e, &correctors[1])];
            for q in &e.points {
                for j in 0..2 {
                    let mut v = nalgebra::Vector2::new(g[j][0], g[j][1]);
                    v[j] += 1.0;
                    let flux = q.diffusion * v;
                    for i in 0..2 {
                        out[(i, j)] += q.weight * flux[i];
                    }
                }
            }
        }
        out / self.area
    }

    /// `A_ij = |Y|⁻¹ ∫ D (e_j + ∇w_j) · (e_i + ∇w_i)` and
    /// `J_ij = −p/(2|Y|) ∫ (w_j B · ∇w_i − w_i B · ∇w_j)`.
    pub fn sym_skew_split(&self, sol: &CellSolution) -> TensorSplit {
        let w = &sol.correctors;
        let mut a = Matrix2::zeros();
        let mut j = Matrix2::zeros();
        for e in &self.elements {
            let g = [self.gradient(e, &w[0]), self.gradient(e, &w[1])];
            let rule = QuadratureRule::default();
            for (q, (l, _)) in e.points.iter().zip(rule.iter()) {
                let vals = [0, 1].map(|c| (0..3).map(|k| l[k] * w[c][e.nodes[k]]).sum::<f64>());
                let grad_full = [0, 1].map(|c| {
                    let mut v = nalgebra::Vector2::new(g[c][0], g[c][1]);
                    v[c] += 1.0;
                    v
                });
                let b = q.velocity;
                let b_dot = [0, 1].map(|c| b[0] * g[c][0] + b[1] * g[c][1]);
                for r in 0..2 {
                    for c in 0..2 {
                        a[(r, c)] += q.weight * (q.diffusion * grad_full[c]).dot(&grad_full[r]);
                        j[(r, c)] += q.weight * (vals[c] * b_dot[r] - vals[r] * b_dot[c]);
                    }
                }
            }
        }
        TensorSplit {
            symmetric: a / self.area,
            skew: j * (-0.5 * sol.p / self.area),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{AnalyticVelocity, ZeroVelocity};
    use crate::mesh::{build_cell_mesh, Geometry};

    #[test]
    fn constant_diffusion_on_full_cell_is_trivial() {
        let mesh = build_cell_mesh(&Geometry::Full, 0.1).unwrap();
        let b = AnalyticVelocity(|y: Point| [(2.0 * PI * y[1]).sin(), (2.0 * PI * y[0]).sin()]);
        let ctx = CellContext::new(mesh, MicroDiffusion::constant(1.7), Arc::new(b)).unwrap();
        for p in [-10.0, 0.0, 7.3] {
            let s = ctx.solve(p).unwrap();
            assert!(ctx.gradient_norm(&s.correctors[0]) < 1e-10);
            assert!((s.dbar - Matrix2::identity() * 1.7).abs().max() < 1e-10);
        }
    }

    #[test]
    fn split_recombines() {
        let mesh = build_cell_mesh(&Geometry::centered_disk(), 0.1).unwrap();
        let b = AnalyticVelocity(|y: Point| [(2.0 * PI * y[1]).sin(), 0.3]);
        let ctx = CellContext::new(mesh, MicroDiffusion::fast(), Arc::new(b)).unwrap();
        let s = ctx.solve(4.0).unwrap();
        let split = ctx.sym_skew_split(&s);
        assert!((split.symmetric + split.skew - s.dbar).norm() < 1e-8);
        assert!(split.skew[(0, 0)].abs() < 1e-10 && split.skew[(1, 1)].abs() < 1e-10);
        assert!((split.skew[(0, 1)] + split.skew[(1, 0)]).abs() < 1e-10);
        for w in &s.correctors {
            assert!(ctx.mean_integral(w).abs() < 1e-10);
        }
    }

    #[test]
    fn coercivity_checked() {
        let mesh = build_cell_mesh(&Geometry::Full, 0.5).unwrap();
        let bad = MicroDiffusion::new("bad", 1.0, Arc::new(|_| Matrix2::identity() * 0.5));
        assert!(matches!(
            CellContext::new(mesh, bad, Arc::new(ZeroVelocity)),
            Err(Error::CoercivityViolated { .. })
        ));
    }
}
