//! Lagrange finite elements on [`TriMesh`](crate::mesh::TriMesh): quadrature, dof
//! numbering with periodic identification, assembly and direct solves.

mod assembly;
mod dofmap;
mod quadrature;
mod sparse;
mod system;

pub use assembly::{
    assemble_bilinear, assemble_load, basis_integrals, eval_scalar, fold_vector, p1_gradient,
    p2_gradients, p2_values, AnalyticVelocity, BilinearForm, DriftForm, P1Element, TensorFn,
    VelocityField, ZeroVelocity,
};
pub use dofmap::{DofMap, Space};
pub use quadrature::QuadratureRule;
pub use sparse::CsrMatrix;
pub use system::{
    apply_periodic, attach_mean_constraints, attach_zero_mean, eliminate_dirichlet, solve,
    Factorization, SparseSystem, Stage, SOLVE_TOLERANCE,
};
