use std::sync::{Arc, OnceLock};

use proptest::prelude::*;

use twoscale::cell::{min_sym_eigenvalue, CellContext, MicroDiffusion};
use twoscale::mesh::{build_cell_mesh, Geometry};
use twoscale::stokes::{cellular_forcing, solve_stokes, DEFAULT_VISCOSITY};

fn context() -> &'static CellContext {
    static CTX: OnceLock<CellContext> = OnceLock::new();
    CTX.get_or_init(|| {
        let mesh = build_cell_mesh(&Geometry::horizontal_bars(), 0.05).unwrap();
        let flow = solve_stokes(&mesh, DEFAULT_VISCOSITY, &cellular_forcing).unwrap();
        CellContext::new(mesh, MicroDiffusion::fast(), Arc::new(flow)).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn effective_tensor_is_coercive_and_bounded(p in -10.0f64..10.0) {
        let ctx = context();
        let sol = ctx.solve(p).unwrap();
        prop_assert!(min_sym_eigenvalue(&sol.dbar) > 0.0);
        let bounds = ctx.energy_bounds();
        for i in 0..2 {
            prop_assert!(ctx.gradient_norm(&sol.correctors[i]) <= bounds[i] * 1.01);
            prop_assert!(ctx.mean_integral(&sol.correctors[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn reversing_the_drift_transposes_the_tensor(p in -10.0f64..10.0) {
        let ctx = context();
        let a = ctx.solve(p).unwrap().dbar;
        let b = ctx.solve(-p).unwrap().dbar;
        prop_assert!((a.transpose() - b).abs().max() < 1e-9 * a.abs().max(), "{a} vs {b}");
    }

    #[test]
    fn split_recombines(p in -10.0f64..10.0) {
        let ctx = context();
        let sol = ctx.solve(p).unwrap();
        let s = ctx.sym_skew_split(&sol);
        prop_assert!((s.symmetric - s.symmetric.transpose()).abs().max() < 1e-12);
        prop_assert!((s.symmetric + s.skew - sol.dbar).norm() < 1e-8);
    }
}
