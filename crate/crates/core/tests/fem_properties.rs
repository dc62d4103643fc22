use std::f64::consts::PI;

use nalgebra::Matrix2;
use proptest::prelude::*;

use twoscale::fem::{
    apply_periodic, assemble_bilinear, assemble_load, attach_zero_mean, basis_integrals, fold_vector,
    AnalyticVelocity, BilinearForm, CsrMatrix, DofMap, DriftForm, QuadratureRule, Space, SparseSystem,
};
use twoscale::mesh::{build_cell_mesh, Geometry, TriMesh};
use twoscale::verify::{analytic_drift, l2_error};

fn disk_mesh() -> TriMesh {
    build_cell_mesh(&Geometry::centered_disk(), 0.1).unwrap()
}

fn folded(mesh: &TriMesh, form: &BilinearForm<'_>) -> (DofMap, CsrMatrix) {
    let dm = DofMap::new(mesh, Space::ScalarP1, true, &[]).unwrap();
    let raw = assemble_bilinear(mesh, &dm, form, &QuadratureRule::default()).unwrap();
    let m = apply_periodic(&raw, &dm).unwrap().matrix;
    (dm, m)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn stiffness_is_positive_semidefinite(
        d1 in 0.1f64..5.0,
        d2 in 0.1f64..5.0,
        seed in prop::collection::vec(-1.0f64..1.0, 64),
    ) {
        let mesh = disk_mesh();
        let tensor = move |_| Matrix2::new(d1, 0.0, 0.0, d2);
        let (_, k) = folded(&mesh, &BilinearForm::Stiffness(&tensor));
        let x: Vec<f64> = (0..k.n_rows()).map(|i| seed[i % seed.len()] * (1.0 + (i as f64).sin())).collect();
        let energy = k.bilinear(&x, &x);
        let norm2: f64 = x.iter().map(|v| v * v).sum();
        prop_assert!(energy >= -1e-12 * norm2, "x^T K x = {energy}");
        // Constants lie in the kernel of the periodic stiffness.
        let ones = vec![1.0; k.n_rows()];
        prop_assert!(k.mul_vec(&ones).iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn skew_drift_matrix_is_antisymmetric(p in -10.0f64..10.0, scale in 0.1f64..3.0) {
        let mesh = disk_mesh();
        let vel = AnalyticVelocity(analytic_drift(scale));
        let (_, n) = folded(&mesh, &BilinearForm::Drift { velocity: &vel, p, form: DriftForm::Skew });
        let sum = CsrMatrix::linear_combination(&[(&n, 1.0), (&n.transpose(), 1.0)]).unwrap();
        prop_assert!(sum.max_abs() <= 1e-12 * n.max_abs().max(1.0));
    }

    #[test]
    fn mass_matrix_integrates_constants(c in -5.0f64..5.0) {
        let mesh = disk_mesh();
        let (_, m) = folded(&mesh, &BilinearForm::Mass);
        let u = vec![c; m.n_rows()];
        let area = twoscale::mesh::fluid_area(&mesh);
        prop_assert!((m.bilinear(&u, &u) - c * c * area).abs() < 1e-10);
    }
}

/// `L²` error of the periodic P1 solution of `−Δw = 8π² w*` with
/// `w* = sin(2πx) cos(2πy)`.
fn periodic_poisson_error(h: f64) -> f64 {
    let exact = |x: [f64; 2]| (2.0 * PI * x[0]).sin() * (2.0 * PI * x[1]).cos();
    let mesh = build_cell_mesh(&Geometry::Full, h).unwrap();
    let unit = |_| Matrix2::identity();
    let dm = DofMap::new(&mesh, Space::ScalarP1, true, &[]).unwrap();
    let rule = QuadratureRule::default();
    let k = assemble_bilinear(&mesh, &dm, &BilinearForm::Stiffness(&unit), &rule).unwrap();
    let load = assemble_load(&mesh, &dm, &|x| 8.0 * PI * PI * exact(x), &rule);
    let sys = apply_periodic(&SparseSystem::new(k.matrix, load).unwrap(), &dm).unwrap();
    let sys = attach_zero_mean(&sys, fold_vector(&dm, &basis_integrals(&mesh, &dm))).unwrap();
    let x = twoscale::fem::solve(&sys).unwrap();
    let w = dm.expand(&x[..sys.n_unknowns()]);
    l2_error(&mesh, &w, exact)
}

#[test]
fn periodic_poisson_converges_at_second_order() {
    let errors: Vec<f64> = [1.0 / 8.0, 1.0 / 16.0, 1.0 / 32.0].iter().map(|&h| periodic_poisson_error(h)).collect();
    for pair in errors.windows(2) {
        let order = (pair[0] / pair[1]).log2();
        assert!((order - 2.0).abs() < 0.3, "errors {errors:?}, order {order}");
    }
}
