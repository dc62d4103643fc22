use nalgebra::Matrix2;
use rayon::prelude::*;

use super::dofmap::{DofMap, Space};
use super::quadrature::QuadratureRule;
use super::sparse::CsrMatrix;
use super::system::SparseSystem;
use crate::error::{Error, Result};
use crate::mesh::{Point, TriMesh};

/// Affine triangle with constant barycentric gradients.
#[derive(Debug, Clone, Copy)]
pub struct P1Element {
    pub points: [Point; 3],
    pub area: f64,
    /// Gradient of barycentric coordinate `k`.
    pub grads: [[f64; 2]; 3],
}

impl P1Element {
    pub fn new(points: [Point; 3]) -> Self {
        let [p0, p1, p2] = points;
        let twice = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1]);
        let grads = [
            [(p1[1] - p2[1]) / twice, (p2[0] - p1[0]) / twice],
            [(p2[1] - p0[1]) / twice, (p0[0] - p2[0]) / twice],
            [(p0[1] - p1[1]) / twice, (p1[0] - p0[0]) / twice],
        ];
        P1Element {
            points,
            area: 0.5 * twice,
            grads,
        }
    }

    pub fn of(mesh: &TriMesh, t: usize) -> Self {
        P1Element::new(mesh.triangle_points(t))
    }

    pub fn map(&self, l: [f64; 3]) -> Point {
        let [a, b, c] = self.points;
        [
            l[0] * a[0] + l[1] * b[0] + l[2] * c[0],
            l[0] * a[1] + l[1] * b[1] + l[2] * c[1],
        ]
    }
}

/// Quadratic Lagrange basis: vertices `0..3`, then edge midpoints `(0,1), (1,2), (2,0)`.
pub fn p2_values(l: [f64; 3]) -> [f64; 6] {
    [
        l[0] * (2.0 * l[0] - 1.0),
        l[1] * (2.0 * l[1] - 1.0),
        l[2] * (2.0 * l[2] - 1.0),
        4.0 * l[0] * l[1],
        4.0 * l[1] * l[2],
        4.0 * l[2] * l[0],
    ]
}

pub fn p2_gradients(l: [f64; 3], g: &[[f64; 2]; 3]) -> [[f64; 2]; 6] {
    let vert = |k: usize| [(4.0 * l[k] - 1.0) * g[k][0], (4.0 * l[k] - 1.0) * g[k][1]];
    let edge = |i: usize, j: usize| {
        [
            4.0 * (l[i] * g[j][0] + l[j] * g[i][0]),
            4.0 * (l[i] * g[j][1] + l[j] * g[i][1]),
        ]
    };
    [vert(0), vert(1), vert(2), edge(0, 1), edge(1, 2), edge(2, 0)]
}

/// Scalar basis values and gradients of one element at a barycentric point.
pub(crate) fn scalar_basis(space: Space, l: [f64; 3], el: &P1Element) -> (Vec<f64>, Vec<[f64; 2]>) {
    if space.is_quadratic() {
        (p2_values(l).to_vec(), p2_gradients(l, &el.grads).to_vec())
    } else {
        (l.to_vec(), el.grads.to_vec())
    }
}

/// Micro drift velocity, evaluable inside any triangle of the mesh it lives on.
pub trait VelocityField: Sync {
    fn velocity(&self, triangle: usize, bary: [f64; 3], x: Point) -> [f64; 2];

    /// Number of triangles of the underlying mesh, when tied to one.
    fn triangle_count(&self) -> Option<usize> {
        None
    }
}

/// Closed-form velocity field.
pub struct AnalyticVelocity<F>(pub F);

impl<F> VelocityField for AnalyticVelocity<F>
where
    F: Fn(Point) -> [f64; 2] + Sync,
{
    fn velocity(&self, _triangle: usize, _bary: [f64; 3], x: Point) -> [f64; 2] {
        (self.0)(x)
    }
}

pub struct ZeroVelocity;

impl VelocityField for ZeroVelocity {
    fn velocity(&self, _: usize, _: [f64; 3], _: Point) -> [f64; 2] {
        [0.0, 0.0]
    }
}

/// Discretisation of the drift term `-p int w B . grad(psi)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftForm {
    /// The term exactly as written.
    Conservative,
    /// `-(p/2) int (w B . grad psi - psi B . grad w)`: identical for divergence-free `B`
    /// with `B . n = 0`, and exactly skew-symmetric for any discrete `B`.
    #[default]
    Skew,
}

pub type TensorFn<'a> = &'a (dyn Fn(Point) -> Matrix2<f64> + Sync);

pub enum BilinearForm<'a> {
    /// `int D grad(w) . grad(psi)`
    Stiffness(TensorFn<'a>),
    /// `int w psi`
    Mass,
    Drift {
        velocity: &'a dyn VelocityField,
        p: f64,
        form: DriftForm,
    },
}

/// Local matrix entry `(test i, trial j)` of `form` at one quadrature point.
fn local_entry(
    form: &BilinearForm<'_>,
    vals: &[f64],
    grads: &[[f64; 2]],
    coef: &Coefficient,
    i: usize,
    j: usize,
) -> f64 {
    let dot = |a: [f64; 2], b: [f64; 2]| a[0] * b[0] + a[1] * b[1];
    match (form, coef) {
        (BilinearForm::Stiffness(_), Coefficient::Tensor(d)) => {
            let g = grads[j];
            let dg = [d[(0, 0)] * g[0] + d[(0, 1)] * g[1], d[(1, 0)] * g[0] + d[(1, 1)] * g[1]];
            dot(dg, grads[i])
        }
        (BilinearForm::Mass, _) => vals[i] * vals[j],
        (BilinearForm::Drift { p, form, .. }, Coefficient::Vector(b)) => match form {
            DriftForm::Conservative => -p * vals[j] * dot(*b, grads[i]),
            DriftForm::Skew => -0.5 * p * (vals[j] * dot(*b, grads[i]) - vals[i] * dot(*b, grads[j])),
        },
        _ => unreachable!("coefficient kind matches form"),
    }
}

enum Coefficient {
    None,
    Tensor(Matrix2<f64>),
    Vector([f64; 2]),
}

/// Assembles `form` over the raw dofs of a scalar space (P2 vector spaces get the same
/// form on each component). The right-hand side is zero.
pub fn assemble_bilinear(
    mesh: &TriMesh,
    dofmap: &DofMap,
    form: &BilinearForm<'_>,
    rule: &QuadratureRule,
) -> Result<SparseSystem> {
    if let BilinearForm::Drift { velocity, .. } = form {
        if let Some(n) = velocity.triangle_count() {
            if n != mesh.num_triangles() {
                return Err(Error::DimensionMismatch {
                    expected: mesh.num_triangles(),
                    actual: n,
                });
            }
        }
        if dofmap.space() == Space::VectorP2 {
            return Err(Error::Precondition("drift form is scalar only".into()));
        }
    }
    let space = dofmap.space();
    let comps = space.components();
    let trips: Vec<(usize, usize, f64)> = (0..mesh.num_triangles())
        .into_par_iter()
        .flat_map_iter(|t| {
            let el = P1Element::of(mesh, t);
            let nodes = dofmap.element_nodes(t);
            let n = nodes.len();
            let mut local = vec![0.0; n * n];
            for (l, w) in rule.iter() {
                let x = el.map(l);
                let coef = match form {
                    BilinearForm::Stiffness(d) => Coefficient::Tensor(d(x)),
                    BilinearForm::Mass => Coefficient::None,
                    BilinearForm::Drift { velocity, .. } => {
                        Coefficient::Vector(velocity.velocity(t, l, x))
                    }
                };
                let (vals, grads) = scalar_basis(space, l, &el);
                let wa = w * el.area;
                for i in 0..n {
                    for j in 0..n {
                        local[i * n + j] += wa * local_entry(form, &vals, &grads, &coef, i, j);
                    }
                }
            }
            let mut out = Vec::with_capacity(comps * n * n);
            for c in 0..comps {
                for i in 0..n {
                    for j in 0..n {
                        out.push((dofmap.raw(nodes[i], c), dofmap.raw(nodes[j], c), local[i * n + j]));
                    }
                }
            }
            out
        })
        .collect();
    let n = dofmap.n_raw();
    SparseSystem::new(CsrMatrix::from_triplets(n, n, trips), vec![0.0; n])
}

/// Raw load vector `int f phi_j` of a scalar space.
pub fn assemble_load(
    mesh: &TriMesh,
    dofmap: &DofMap,
    f: &(dyn Fn(Point) -> f64 + Sync),
    rule: &QuadratureRule,
) -> Vec<f64> {
    let mut out = vec![0.0; dofmap.n_raw()];
    for t in 0..mesh.num_triangles() {
        let el = P1Element::of(mesh, t);
        let nodes = dofmap.element_nodes(t);
        for (l, w) in rule.iter() {
            let fx = f(el.map(l)) * w * el.area;
            let (vals, _) = scalar_basis(dofmap.space(), l, &el);
            for (i, &node) in nodes.iter().enumerate() {
                out[dofmap.raw(node, 0)] += fx * vals[i];
            }
        }
    }
    out
}

/// `int phi_j` for every raw scalar dof.
pub fn basis_integrals(mesh: &TriMesh, dofmap: &DofMap) -> Vec<f64> {
    assemble_load(mesh, dofmap, &|_| 1.0, &QuadratureRule::of_degree(2))
}

/// Folds a raw vector into free dofs by summation (the transpose of [`DofMap::expand`]).
pub fn fold_vector(dofmap: &DofMap, raw: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; dofmap.free_dof_count()];
    for (d, v) in raw.iter().enumerate() {
        if let Some(f) = dofmap.free_of_raw(d) {
            out[f] += v;
        }
    }
    out
}

/// Value of a scalar raw field at a barycentric point of triangle `t`.
pub fn eval_scalar(dofmap: &DofMap, raw: &[f64], t: usize, l: [f64; 3]) -> f64 {
    let nodes = dofmap.element_nodes(t);
    if dofmap.space().is_quadratic() {
        let v = p2_values(l);
        nodes.iter().zip(v).map(|(&n, v)| raw[n] * v).sum()
    } else {
        nodes.iter().zip(l).map(|(&n, v)| raw[n] * v).sum()
    }
}

/// Gradient of a raw P1 field on triangle `t`.
pub fn p1_gradient(dofmap: &DofMap, raw: &[f64], el: &P1Element, t: usize) -> [f64; 2] {
    let nodes = dofmap.element_nodes(t);
    let mut g = [0.0; 2];
    for k in 0..3 {
        g[0] += raw[nodes[k]] * el.grads[k][0];
        g[1] += raw[nodes[k]] * el.grads[k][1];
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_cell_mesh, build_macro_mesh, fluid_area, Geometry, Rect};

    #[test]
    fn reference_p1_stiffness() {
        // unit right triangle: classical element matrix
        let mesh = build_macro_mesh(Rect::UNIT, 2, 2).unwrap();
        let dm = DofMap::new(&mesh, Space::ScalarP1, false, &[]).unwrap();
        let ident = |_: Point| Matrix2::identity();
        let sys = assemble_bilinear(&mesh, &dm, &BilinearForm::Stiffness(&ident), &QuadratureRule::default()).unwrap();
        // vertices (0,0),(1,0),(0,1),(1,1); the diagonal joins 0 and 3
        let k = &sys.matrix;
        let expected = [
            [1.0, -0.5, -0.5, 0.0],
            [-0.5, 1.0, 0.0, -0.5],
            [-0.5, 0.0, 1.0, -0.5],
            [0.0, -0.5, -0.5, 1.0],
        ];
        for i in 0..4 {
            for j in 0..4 {
                assert!((k.get(i, j) - expected[i][j]).abs() < 1e-14, "({i},{j}) = {}", k.get(i, j));
            }
        }
    }

    #[test]
    fn mass_sums_to_area() {
        let mesh = build_cell_mesh(&Geometry::centered_disk(), 0.1).unwrap();
        for space in [Space::ScalarP1, Space::VectorP2] {
            let dm = DofMap::new(&mesh, space, false, &[]).unwrap();
            let m = assemble_bilinear(&mesh, &dm, &BilinearForm::Mass, &QuadratureRule::default()).unwrap();
            let total: f64 = m.matrix.triplets().map(|(_, _, v)| v).sum();
            let comps = space.components() as f64;
            assert!((total - comps * fluid_area(&mesh)).abs() < 1e-12);
        }
    }

    #[test]
    fn drift_vanishes_without_velocity() {
        let mesh = build_cell_mesh(&Geometry::Full, 0.25).unwrap();
        let dm = DofMap::new(&mesh, Space::ScalarP1, true, &[]).unwrap();
        let b = AnalyticVelocity(|x: Point| [x[1].sin(), 1.0]);
        for form in [DriftForm::Skew, DriftForm::Conservative] {
            let zero_p = BilinearForm::Drift { velocity: &b, p: 0.0, form };
            let zero_b = BilinearForm::Drift { velocity: &ZeroVelocity, p: 3.0, form };
            for f in [zero_p, zero_b] {
                let s = assemble_bilinear(&mesh, &dm, &f, &QuadratureRule::default()).unwrap();
                assert_eq!(s.matrix.max_abs(), 0.0);
            }
        }
    }

    #[test]
    fn skew_drift_is_antisymmetric() {
        let mesh = build_cell_mesh(&Geometry::centered_disk(), 0.2).unwrap();
        let dm = DofMap::new(&mesh, Space::ScalarP1, true, &[]).unwrap();
        let b = AnalyticVelocity(|x: Point| [x[0] * x[1], x[0] - x[1]]);
        let f = BilinearForm::Drift { velocity: &b, p: 2.5, form: DriftForm::Skew };
        let s = assemble_bilinear(&mesh, &dm, &f, &QuadratureRule::default()).unwrap();
        let t = s.matrix.transpose();
        for (r, c, v) in s.matrix.triplets() {
            assert!((v + t.get(r, c)).abs() < 1e-15);
        }
    }

    #[test]
    fn p2_partition_of_unity() {
        let l = [0.2, 0.3, 0.5];
        let s: f64 = p2_values(l).iter().sum();
        assert!((s - 1.0).abs() < 1e-15);
        let el = P1Element::new([[0.0, 0.0], [1.0, 0.2], [0.3, 0.9]]);
        let g = p2_gradients(l, &el.grads);
        let gs = g.iter().fold([0.0, 0.0], |a, v| [a[0] + v[0], a[1] + v[1]]);
        assert!(gs[0].abs() < 1e-14 && gs[1].abs() < 1e-14);
    }
}
