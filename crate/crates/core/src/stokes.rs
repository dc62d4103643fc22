//! Periodic Stokes flow through the perforated cell, discretised with Taylor–Hood P2/P1
//! elements. The velocity is the micro drift that enters the cell problems.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Matrix2;

use crate::error::{Error, Result};
use crate::fem::{
    self, assemble_bilinear, attach_mean_constraints, basis_integrals, fold_vector, p2_gradients,
    p2_values, BilinearForm, CsrMatrix, DofMap, P1Element, QuadratureRule, Space, SparseSystem,
    VelocityField,
};
use crate::mesh::{EdgeTag, Point, TriMesh};

/// Viscosity used throughout the reference experiments.
pub const DEFAULT_VISCOSITY: f64 = 0.01;

/// Body force `(10 sin 2πy1 sin 2πy2, 10 sin 2πy1 cos 2πy2)` driving the reference flow.
pub fn cellular_forcing(y: Point) -> [f64; 2] {
    use std::f64::consts::TAU;
    let s = 10.0 * (TAU * y[0]).sin();
    [s * (TAU * y[1]).sin(), s * (TAU * y[1]).cos()]
}

pub type Forcing<'a> = &'a (dyn Fn(Point) -> [f64; 2] + Sync);

/// Discrete velocity/pressure pair on a cell mesh.
#[derive(Debug, Clone)]
pub struct StokesSolution {
    velocity_dofs: DofMap,
    pressure_dofs: DofMap,
    /// Raw P2 coefficients, x-components then y-components.
    velocity: Vec<f64>,
    /// Raw P1 coefficients.
    pressure: Vec<f64>,
    viscosity: f64,
    n_triangles: usize,
}

/// Quantities used to check a discrete Stokes solution.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct StokesDiagnostics {
    /// `μ ∫ |∇B|²`
    pub dissipation: f64,
    /// `∫ F · B`
    pub work: f64,
    /// Largest `|∫ q div B|` over pressure basis functions `q`.
    pub weak_divergence: f64,
    /// `‖div B‖_{L²}`
    pub divergence_l2: f64,
    /// `‖∇B‖_{L²}`
    pub gradient_l2: f64,
    /// `|∫ p|`
    pub pressure_mean: f64,
    /// Largest velocity magnitude on obstacle nodes.
    pub noslip_max: f64,
    /// Largest nodal velocity magnitude.
    pub max_speed: f64,
}

/// Raw saddle matrix over `[velocity raw dofs, pressure raw dofs]` with the load vector.
struct RawSaddle {
    matrix: CsrMatrix,
    rhs: Vec<f64>,
    divergence: CsrMatrix,
}

fn assemble_saddle(
    mesh: &TriMesh,
    vdm: &DofMap,
    pdm: &DofMap,
    viscosity: f64,
    forcing: Forcing<'_>,
) -> Result<RawSaddle> {
    let rule = QuadratureRule::default();
    let nu = vdm.n_raw();
    let np = pdm.n_raw();
    let mu_id = move |_: Point| Matrix2::identity() * viscosity;
    let laplace = assemble_bilinear(mesh, vdm, &BilinearForm::Stiffness(&mu_id), &rule)?;

    // b(v, q) = -∫ q div v, stored as rows of pressure dofs
    let mut div_trips = Vec::new();
    let mut rhs = vec![0.0; nu + np];
    for t in 0..mesh.num_triangles() {
        let el = P1Element::of(mesh, t);
        let vnodes = vdm.element_nodes(t);
        let pnodes = pdm.element_nodes(t);
        let mut local = [[[0.0; 2]; 6]; 3];
        for (l, w) in rule.iter() {
            let wa = w * el.area;
            let grads = p2_gradients(l, &el.grads);
            let vals = p2_values(l);
            let f = forcing(el.map(l));
            for a in 0..3 {
                for j in 0..6 {
                    for c in 0..2 {
                        local[a][j][c] -= wa * l[a] * grads[j][c];
                    }
                }
            }
            for j in 0..6 {
                for c in 0..2 {
                    rhs[vdm.raw(vnodes[j], c)] += wa * f[c] * vals[j];
                }
            }
        }
        for a in 0..3 {
            for j in 0..6 {
                for c in 0..2 {
                    div_trips.push((pnodes[a], vdm.raw(vnodes[j], c), local[a][j][c]));
                }
            }
        }
    }
    let divergence = CsrMatrix::from_triplets(np, nu, div_trips);
    let mut trips: Vec<(usize, usize, f64)> = laplace.matrix.triplets().collect();
    for (r, c, v) in divergence.triplets() {
        trips.push((nu + r, c, v));
        trips.push((c, nu + r, v));
    }
    Ok(RawSaddle {
        matrix: CsrMatrix::from_triplets(nu + np, nu + np, trips),
        rhs,
        divergence,
    })
}

/// Solves `-μΔB + ∇p = F`, `div B = 0` on the fluid part of the cell with periodic
/// velocity and pressure, `B = 0` on obstacle edges and zero-mean pressure. Without
/// obstacle edges each velocity component is given zero mean as well.
pub fn solve_stokes(mesh: &TriMesh, viscosity: f64, forcing: Forcing<'_>) -> Result<StokesSolution> {
    if !(viscosity > 0.0 && viscosity.is_finite()) {
        return Err(Error::Precondition(format!("viscosity must be positive, got {viscosity}")));
    }
    let has_obstacle = mesh.boundary_edges().any(|(_, t)| t == EdgeTag::Obstacle);
    if !has_obstacle {
        log::warn!("cell has no obstacle: velocity fixed by zero-mean components");
    }
    let vdm = DofMap::new(mesh, Space::VectorP2, true, &[EdgeTag::Obstacle])?;
    let pdm = DofMap::new(mesh, Space::ScalarP1Pressure, true, &[])?;
    let saddle = assemble_saddle(mesh, &vdm, &pdm, viscosity, forcing)?;

    let nu = vdm.n_raw();
    let nfv = vdm.free_dof_count();
    let nfp = pdm.free_dof_count();
    let map: Vec<Option<usize>> = (0..nu)
        .map(|d| vdm.free_of_raw(d))
        .chain((0..pdm.n_raw()).map(|d| pdm.free_of_raw(d).map(|f| nfv + f)))
        .collect();
    let n = nfv + nfp;
    let mut rhs = vec![0.0; n];
    for (d, v) in saddle.rhs.iter().enumerate() {
        if let Some(f) = map[d] {
            rhs[f] += v;
        }
    }
    let system = SparseSystem::new(saddle.matrix.fold(&map, n), rhs)?;

    let mut rows = Vec::new();
    let mut pressure_row = vec![0.0; n];
    for (f, v) in fold_vector(&pdm, &basis_integrals(mesh, &pdm)).into_iter().enumerate() {
        pressure_row[nfv + f] = v;
    }
    rows.push(pressure_row);
    if !has_obstacle {
        let integrals = p2_basis_integrals(mesh, &vdm);
        for c in 0..2 {
            let mut row = vec![0.0; n];
            for node in 0..vdm.n_nodes() {
                if let Some(f) = vdm.free_of_raw(vdm.raw(node, c)) {
                    row[f] += integrals[node];
                }
            }
            rows.push(row);
        }
    }
    let system = attach_mean_constraints(&system, rows)?;
    let x = fem::solve(&system)?;
    let (free, _) = system.split(&x);
    let velocity = vdm.expand(&free[..nfv]);
    let pressure = pdm.expand(&free[nfv..]);
    Ok(StokesSolution {
        velocity_dofs: vdm,
        pressure_dofs: pdm,
        velocity,
        pressure,
        viscosity,
        n_triangles: mesh.num_triangles(),
    })
}

/// `∫ φ_j` for every P2 node (vertex functions integrate to zero).
fn p2_basis_integrals(mesh: &TriMesh, vdm: &DofMap) -> Vec<f64> {
    let mut out = vec![0.0; vdm.n_nodes()];
    for t in 0..mesh.num_triangles() {
        let area = mesh.triangle_area(t);
        for &node in &vdm.element_nodes(t)[3..] {
            out[node] += area / 3.0;
        }
    }
    out
}

impl StokesSolution {
    pub fn viscosity(&self) -> f64 {
        self.viscosity
    }

    pub fn velocity_dofs(&self) -> &DofMap {
        &self.velocity_dofs
    }

    pub fn pressure_dofs(&self) -> &DofMap {
        &self.pressure_dofs
    }

    pub fn velocity_coefficients(&self) -> &[f64] {
        &self.velocity
    }

    pub fn pressure_coefficients(&self) -> &[f64] {
        &self.pressure
    }

    /// Velocity at node `node` of the P2 space.
    pub fn node_velocity(&self, node: usize) -> [f64; 2] {
        let d = &self.velocity_dofs;
        [self.velocity[d.raw(node, 0)], self.velocity[d.raw(node, 1)]]
    }

    /// Largest nodal speed.
    pub fn max_speed(&self) -> f64 {
        (0..self.velocity_dofs.n_nodes())
            .map(|n| {
                let [a, b] = self.node_velocity(n);
                a.hypot(b)
            })
            .fold(0.0, f64::max)
    }

    pub fn diagnostics(&self, mesh: &TriMesh, forcing: Forcing<'_>) -> Result<StokesDiagnostics> {
        if mesh.num_triangles() != self.n_triangles {
            return Err(Error::DimensionMismatch {
                expected: self.n_triangles,
                actual: mesh.num_triangles(),
            });
        }
        let vdm = &self.velocity_dofs;
        let pdm = &self.pressure_dofs;
        let saddle = assemble_saddle(mesh, vdm, pdm, self.viscosity, forcing)?;
        let nu = vdm.n_raw();

        let mut dissipation = 0.0;
        let mut work = 0.0;
        for (r, c, v) in saddle.matrix.triplets() {
            if r < nu && c < nu {
                dissipation += self.velocity[r] * v * self.velocity[c];
            }
        }
        for (d, f) in saddle.rhs[..nu].iter().enumerate() {
            work += f * self.velocity[d];
        }
        let weak = fold_vector(pdm, &saddle.divergence.mul_vec(&self.velocity));
        let weak_divergence = weak.iter().fold(0.0f64, |m, v| m.max(v.abs()));

        let rule = QuadratureRule::default();
        let mut div2 = 0.0;
        let mut grad2 = 0.0;
        for t in 0..mesh.num_triangles() {
            let el = P1Element::of(mesh, t);
            let nodes = vdm.element_nodes(t);
            for (l, w) in rule.iter() {
                let g = p2_gradients(l, &el.grads);
                let mut jac = [[0.0; 2]; 2];
                for (k, &node) in nodes.iter().enumerate() {
                    let b = self.node_velocity(node);
                    for c in 0..2 {
                        for d in 0..2 {
                            jac[c][d] += b[c] * g[k][d];
                        }
                    }
                }
                let div = jac[0][0] + jac[1][1];
                div2 += w * el.area * div * div;
                grad2 += w * el.area * jac.iter().flatten().map(|v| v * v).sum::<f64>();
            }
        }
        let pressure_mean = basis_integrals(mesh, pdm)
            .iter()
            .zip(&self.pressure)
            .map(|(a, b)| a * b)
            .sum::<f64>()
            .abs();
        let edges = mesh.edges();
        let mut noslip_max = 0.0f64;
        for ((a, b), tag) in mesh.boundary_edges() {
            if tag == EdgeTag::Obstacle {
                let mid = mesh.num_vertices() + edges.find(a, b).expect("edge");
                for n in [a, b, mid] {
                    let [x, y] = self.node_velocity(n);
                    noslip_max = noslip_max.max(x.hypot(y));
                }
            }
        }
        Ok(StokesDiagnostics {
            dissipation,
            work,
            weak_divergence,
            divergence_l2: div2.sqrt(),
            gradient_l2: grad2.sqrt(),
            pressure_mean,
            noslip_max,
            max_speed: self.max_speed(),
        })
    }

    /// Vertex table `index vx vy p`, one line per mesh vertex.
    pub fn vertex_field_text(&self) -> String {
        let nv = self.pressure_dofs.n_nodes();
        let mut out = String::from("# vertex velocity_x velocity_y pressure\n");
        for i in 0..nv {
            let [vx, vy] = self.node_velocity(i);
            let _ = writeln!(out, "{i} {vx} {vy} {}", self.pressure[i]);
        }
        out
    }

    pub fn write_vertex_field(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.vertex_field_text())?;
        Ok(())
    }
}

impl VelocityField for StokesSolution {
    fn velocity(&self, triangle: usize, bary: [f64; 3], _x: Point) -> [f64; 2] {
        let nodes = self.velocity_dofs.element_nodes(triangle);
        let vals = p2_values(bary);
        let mut b = [0.0; 2];
        for (k, &node) in nodes.iter().enumerate() {
            let v = self.node_velocity(node);
            b[0] += vals[k] * v[0];
            b[1] += vals[k] * v[1];
        }
        b
    }

    fn triangle_count(&self) -> Option<usize> {
        Some(self.n_triangles)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_cell_mesh, Geometry};

    #[test]
    fn zero_forcing_gives_rest() {
        let mesh = build_cell_mesh(&Geometry::centered_disk(), 0.2).unwrap();
        let sol = solve_stokes(&mesh, 1.0, &|_| [0.0, 0.0]).unwrap();
        assert!(sol.velocity_coefficients().iter().all(|v| *v == 0.0));
        assert!(sol.pressure_coefficients().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn reference_flow_on_disk_cell() {
        let mesh = build_cell_mesh(&Geometry::centered_disk(), 0.1).unwrap();
        let sol = solve_stokes(&mesh, DEFAULT_VISCOSITY, &cellular_forcing).unwrap();
        let d = sol.diagnostics(&mesh, &cellular_forcing).unwrap();
        assert_eq!(d.noslip_max, 0.0);
        assert!(d.max_speed > 0.0 && d.max_speed.is_finite());
        assert!((d.dissipation - d.work).abs() <= 1e-8 * d.work.abs());
        assert!(d.weak_divergence <= 1e-10, "{}", d.weak_divergence);
        assert!(d.pressure_mean <= 1e-10);
    }

    #[test]
    fn obstacle_free_cell_constant_force() {
        let mesh = build_cell_mesh(&Geometry::Full, 0.25).unwrap();
        let sol = solve_stokes(&mesh, 1.0, &|_| [1.0, 0.0]).unwrap();
        // a constant force is balanced by the mean multiplier: the flow stays at rest
        assert!(sol.max_speed() < 1e-12);
    }

    #[test]
    fn rejects_bad_viscosity() {
        let mesh = build_cell_mesh(&Geometry::Full, 0.5).unwrap();
        assert!(solve_stokes(&mesh, -1.0, &cellular_forcing).is_err());
    }
}
