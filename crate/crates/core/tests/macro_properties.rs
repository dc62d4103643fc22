use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::Matrix2;
use proptest::prelude::*;

use twoscale::macroscale::{
    mass_indicator, ConstantTensor, MacroProblem, MacroSolver, MacroTrajectory, TensorSampling, TensorSource,
};
use twoscale::mesh::{build_macro_mesh, EdgeTag, Point, Rect};

const DOMAIN: Rect = Rect {
    x0: 0.0,
    x1: 1.0,
    y0: 0.0,
    y1: 2.0,
};

fn solver(
    n: usize,
    dt: f64,
    t_final: f64,
    initial: Arc<dyn Fn(Point) -> f64 + Send + Sync>,
    source: f64,
) -> MacroSolver {
    MacroSolver::new(MacroProblem {
        mesh: build_macro_mesh(DOMAIN, n, 2 * n - 1).unwrap(),
        t_final,
        dt,
        initial,
        source: Arc::new(move |x, _| if (x[0] - 0.5).hypot(x[1] - 0.5) <= 0.25 { source } else { 0.0 }),
        sampling: TensorSampling::QuadraturePoint,
        lumped_mass: false,
    })
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn implicit_euler_is_dissipative(
        d1 in 0.1f64..5.0,
        d2 in 0.1f64..5.0,
        skew in -3.0f64..3.0,
        dt in 0.01f64..100.0,
        a in -2.0f64..2.0,
        b in -2.0f64..2.0,
    ) {
        let g: Arc<dyn Fn(Point) -> f64 + Send + Sync> = Arc::new(move |x: Point| {
            (PI * x[0]).sin() * (a * (0.5 * PI * x[1]).sin() + b * (1.5 * PI * x[1]).sin())
        });
        let s = solver(9, dt, dt, g, 0.0);
        let tensor = ConstantTensor(Matrix2::new(d1, skew, -skew, d2));
        let traj = s.solve_trajectory(&tensor, TensorSource::Lagged).unwrap();
        prop_assert!(s.l2_norm(&traj.fields[1]) <= s.l2_norm(&traj.fields[0]) * (1.0 + 1e-12));
    }

    #[test]
    fn dirichlet_values_stay_zero(source in 0.0f64..100.0, dt in 0.05f64..0.5) {
        let s = solver(7, dt, 4.0 * dt, Arc::new(|_| 1.0), source);
        let traj = s.solve_trajectory(&ConstantTensor(Matrix2::identity()), TensorSource::Lagged).unwrap();
        let boundary = s.mesh().vertices_with_tags(&[EdgeTag::Left, EdgeTag::Right, EdgeTag::Bottom, EdgeTag::Top]);
        prop_assert!(!boundary.is_empty());
        for (n, u) in traj.fields.iter().enumerate().skip(1) {
            for &v in &boundary {
                prop_assert!(u[v] == 0.0, "step {n}, vertex {v}: {}", u[v]);
            }
        }
    }
}

#[test]
fn mass_of_unit_field_is_the_window_area() {
    let s = solver(11, 0.1, 0.1, Arc::new(|_| 0.0), 0.0);
    let traj = MacroTrajectory::constant(vec![1.0; s.mesh().num_vertices()], vec![0.0]);
    let m = mass_indicator(s.mesh(), &traj, Rect::new(0.0, 1.0, 1.0, 2.0)).unwrap();
    assert!((m[0] - 1.0).abs() < 1e-12);
    let zero = MacroTrajectory::constant(vec![0.0; s.mesh().num_vertices()], vec![0.0]);
    assert_eq!(mass_indicator(s.mesh(), &zero, Rect::new(0.0, 1.0, 1.0, 2.0)).unwrap()[0], 0.0);
}

#[test]
fn misaligned_window_is_rejected() {
    let s = solver(10, 0.1, 0.1, Arc::new(|_| 0.0), 0.0);
    let traj = MacroTrajectory::constant(vec![1.0; s.mesh().num_vertices()], vec![0.0]);
    assert!(mass_indicator(s.mesh(), &traj, Rect::new(0.0, 1.0, 1.05, 2.0)).is_err());
}

#[test]
fn discrete_steady_state_is_stationary() {
    let tensor = ConstantTensor(Matrix2::new(2.0, 0.3, -0.3, 1.0));
    let elliptic = solver(9, 1e12, 1e12, Arc::new(|_| 0.0), 50.0);
    let steady = elliptic.solve_trajectory(&tensor, TensorSource::Lagged).unwrap().terminal().to_vec();
    let lookup: HashMap<(u64, u64), f64> = elliptic
        .mesh()
        .vertices()
        .iter()
        .zip(&steady)
        .map(|(p, v)| ((p[0].to_bits(), p[1].to_bits()), *v))
        .collect();
    let initial = Arc::new(move |p: Point| lookup[&(p[0].to_bits(), p[1].to_bits())]);
    let s = solver(9, 0.1, 1.0, initial, 50.0);
    let traj = s.solve_trajectory(&tensor, TensorSource::Lagged).unwrap();
    let drift = s.field_distance(traj.terminal(), &traj.fields[0]);
    assert!(drift <= 1e-9 * s.l2_norm(&steady), "moved by {drift}");
}
