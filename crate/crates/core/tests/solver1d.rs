mod common;

use common::{checks, homogeneous_config};
use proptest::prelude::*;
use therminv_core::model::{ParameterPoint, PhysicalSetup, PiecewiseLinear};
use therminv_core::solver1d::{sample_at, solve_lumped, Mesh1D, SolverControls};

use checks::grid;

#[test]
fn series_oracle_robin_slab() {
    let (worst, elapsed) = checks::series_oracle();
    println!("series oracle: max relative error {worst:.3e}, {elapsed:.3} s");
    assert!(worst < 5e-3);
    assert!(elapsed < 1.0);
}

#[test]
fn surface_tracks_ambient_for_large_biot() {
    let cfg = homogeneous_config(1.0, 1e4, 1.0, PiecewiseLinear::constant(1.5));
    let mesh = Mesh1D::uniform(101, 0.5).unwrap();
    let p = ParameterPoint {
        bi_t: 1e4,
        bi_l: 0.0,
    };
    let f = solve_lumped(&cfg, p, &mesh, &SolverControls::default(), &grid(50)).unwrap();
    let dir = solve_lumped(
        &cfg,
        ParameterPoint {
            bi_t: f64::INFINITY,
            bi_l: 0.0,
        },
        &mesh,
        &SolverControls::default(),
        &grid(50),
    )
    .unwrap();
    for k in 5..f.times.len() {
        assert!((f.values[0][k] - 1.5).abs() < 0.01 * 1.5);
        assert!((f.values[25][k] - dir.values[25][k]).abs() < 0.01);
    }
}

#[test]
fn spatial_order_is_two() {
    let order = checks::convergence_order();
    println!("observed order {order:.3}");
    assert!((order - 2.0).abs() <= 0.3, "order {order}");
}

#[test]
fn maximum_principle_without_source() {
    let setup = PhysicalSetup::chamber();
    let cfg = homogeneous_config(0.7, 50.0, 1.0, setup.dimensionless(8.0, 0.5).unwrap().u_inf);
    let mesh = Mesh1D::uniform(101, 0.5).unwrap();
    let f = solve_lumped(
        &cfg,
        cfg.parameters(),
        &mesh,
        &SolverControls::default(),
        &grid(100),
    )
    .unwrap();
    for row in &f.values {
        for v in row {
            assert!(*v >= 1.0 - 1e-2 && *v <= 1.5 + 1e-2);
        }
    }
}

#[test]
fn deterministic_output() {
    let cfg = PhysicalSetup::chamber().dimensionless(8.0, 0.5).unwrap();
    let mesh = Mesh1D::uniform(101, 0.5).unwrap();
    let a = solve_lumped(
        &cfg,
        cfg.parameters(),
        &mesh,
        &SolverControls::default(),
        &grid(60),
    )
    .unwrap();
    let b = solve_lumped(
        &cfg,
        cfg.parameters(),
        &mesh,
        &SolverControls::default(),
        &grid(60),
    )
    .unwrap();
    assert_eq!(a, b);
}

#[test]
fn sensor_at_quarter_is_node_aligned() {
    let cfg = PhysicalSetup::chamber().dimensionless(8.0, 0.5).unwrap();
    let mesh = Mesh1D::uniform(101, 0.5).unwrap();
    let f = solve_lumped(
        &cfg,
        cfg.parameters(),
        &mesh,
        &SolverControls::default(),
        &grid(20),
    )
    .unwrap();
    for (k, tau) in f.times.iter().enumerate() {
        assert_eq!(sample_at(&f, 0.04 / 0.16, *tau).unwrap(), f.values[25][k]);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn lateral_coupling_warms_fiber_during_ramp(
        r_lo in 0.05f64..0.8, bump in 0.05f64..0.5, tau in 0.05f64..0.25
    ) {
        let setup = PhysicalSetup::chamber();
        let mesh = Mesh1D::uniform(101, 0.5).unwrap();
        let lo = setup.dimensionless(8.0, r_lo).unwrap();
        let hi = setup.dimensionless(8.0, r_lo + bump).unwrap();
        let c = SolverControls { abs_tol: 1e-6, rel_tol: 1e-6, max_step: 0.02 };
        let a = solve_lumped(&lo, lo.parameters(), &mesh, &c, &[tau]).unwrap();
        let b = solve_lumped(&hi, hi.parameters(), &mesh, &c, &[tau]).unwrap();
        prop_assert!(b.values[25][1] >= a.values[25][1] - 1e-6);
    }
}
