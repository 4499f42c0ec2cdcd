use therminv_core::error::Error;
use therminv_core::model::{BoundarySchedule, MaterialLayer, PhysicalSetup};
use therminv_core::solver1d::{sample_at, solve_lumped, Mesh1D, SolverControls};
use therminv_core::solver2d::{
    aluminum_deviation, interface_flux, solve_complete, solve_complete_at_sensors,
    solve_complete_implicit, CompleteProblem, DfOptions, Diagnostics, DuFortFrankel, Mesh2D,
    MeshSpec, Window,
};

/// Wood fiber with its properties frozen at 25 °C.
fn constant_wood() -> MaterialLayer {
    let w = MaterialLayer::wood_fiber();
    MaterialLayer::new(
        w.k0 + 1.25 * w.k1,
        0.0,
        w.c0 + 1.25 * w.c1,
        0.0,
        w.thickness,
    )
    .unwrap()
}

fn constant_setup() -> PhysicalSetup {
    let mut s = PhysicalSetup::chamber();
    s.wood = constant_wood();
    s
}

fn peak(series: &[f64]) -> f64 {
    series.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

#[test]
fn equilibrium_is_preserved() {
    let mut setup = PhysicalSetup::chamber();
    setup.schedule = BoundarySchedule::constant(20.0);
    let problem = CompleteProblem::from_setup(&setup, 8.0, 0.5);
    let mesh = Mesh2D::build(&setup.geometry, &MeshSpec::default()).unwrap();
    let opts = DfOptions {
        horizon: 7200.0,
        save_every: 60,
        ..DfOptions::chamber(&setup)
    };
    let f = solve_complete(&problem, &mesh, &opts).unwrap();
    let drift = f
        .values
        .iter()
        .flatten()
        .fold(0.0f64, |m, v| m.max((v - 20.0).abs()));
    assert!(drift < 1e-10, "drift {drift:e}");
    assert!(peak(&aluminum_deviation(&f, &problem.schedule)) < 1e-10);
    assert!(peak(&interface_flux(&f).unwrap()) < 1e-10);
}

#[test]
fn degenerate_case_matches_lumped_solver() {
    let mut setup = constant_setup();
    setup.geometry.aluminum_thickness = 0.0;
    let h_t = 8.0;
    let problem = CompleteProblem::from_setup(&setup, h_t, 0.0);
    let mesh = Mesh2D::build(&setup.geometry, &MeshSpec::default()).unwrap();
    let opts = DfOptions::chamber(&setup);
    let times: Vec<f64> = (0..=120).map(|k| k as f64 * 600.0).collect();
    let mid = 0.5 * setup.geometry.l0y;
    let xs = [0.0, 0.02, 0.04, 0.08];
    let mut sensors: Vec<(f64, f64)> = xs.iter().map(|&x| (x, mid)).collect();
    sensors.push((0.04, 0.001));
    let two = solve_complete_at_sensors(&problem, &mesh, &opts, &sensors, &times).unwrap();

    let cfg = setup.dimensionless(h_t, 0.0).unwrap();
    let m1 = Mesh1D::uniform(161, 0.5).unwrap();
    let taus: Vec<f64> = times.iter().map(|t| t / setup.scales.time).collect();
    let one = solve_lumped(
        &cfg,
        cfg.parameters(),
        &m1,
        &SolverControls::default(),
        &taus,
    )
    .unwrap();
    let mut worst: f64 = 0.0;
    for (s, x) in xs.iter().enumerate() {
        for (k, tau) in taus.iter().enumerate() {
            let t1 =
                setup.scales.temperature * sample_at(&one, x / setup.scales.length, *tau).unwrap();
            worst = worst.max((two[s][k] - t1).abs());
        }
    }
    // y-invariance: the off-centre probe follows the centre line up to the
    // scheme's Δt² T_tt artifact, which differs in the adiabatic edge cells
    let spread = two[2]
        .iter()
        .zip(&two[4])
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    println!("degenerate 2D vs 1D: max {worst:.4} °C, y spread {spread:.2e}");
    assert!(worst < 0.1);
    assert!(spread < 1e-3);
}

#[test]
fn mirror_symmetry() {
    let setup = PhysicalSetup::chamber();
    let problem = CompleteProblem::from_setup(&setup, 16.0, 0.4);
    let mesh = Mesh2D::build(&setup.geometry, &MeshSpec::default()).unwrap();
    let opts = DfOptions {
        horizon: 4.0 * 3600.0,
        save_every: 120,
        ..DfOptions::chamber(&setup)
    };
    let f = solve_complete(&problem, &mesh, &opts).unwrap();
    let (nx, ny) = (mesh.nx(), mesh.ny());
    let mut worst: f64 = 0.0;
    for v in &f.values {
        for i in 0..nx {
            for j in 0..ny / 2 {
                let (a, b) = (v[i * ny + j], v[i * ny + ny - 1 - j]);
                worst = worst.max((a - b).abs() / a.abs());
            }
        }
    }
    assert!(worst < 1e-9, "asymmetry {worst:e}");
}

#[test]
fn insulated_energy_is_conserved() {
    let mut setup = constant_setup();
    setup.schedule = BoundarySchedule::constant(25.0);
    let problem = CompleteProblem::from_setup(&setup, 0.0, 0.0);
    let mesh = Mesh2D::build(&setup.geometry, &MeshSpec::default()).unwrap();
    let opts = DfOptions::chamber(&setup);
    let ny = mesh.ny();
    let mut init = Vec::with_capacity(mesh.len());
    for x in &mesh.x_nodes {
        for y in &mesh.y_nodes {
            init.push(20.0 + 10.0 * x / 0.16 + 3.0 * y / 0.08);
        }
    }
    let energy = |temps: &[f64]| -> f64 {
        let mut e = 0.0;
        for i in 0..mesh.nx() {
            for j in 0..ny {
                let layer = problem.layer(mesh.material(i, j));
                let c = temps[i * ny + j];
                e += layer.capacity(c, problem.t_ref) * c * mesh.dx(i) * mesh.dy(j);
            }
        }
        e
    };
    let e0 = energy(&init);
    let mut df = DuFortFrankel::with_initial(&problem, &mesh, &opts, &init).unwrap();
    let mut worst: f64 = 0.0;
    for _ in 0..opts.n_steps().unwrap() {
        df.step().unwrap();
        worst = worst.max((energy(df.temperatures()) / e0 - 1.0).abs());
    }
    let t = df.temperatures();
    let spread =
        t.iter().fold(f64::MIN, |m, v| m.max(*v)) - t.iter().fold(f64::MAX, |m, v| m.min(*v));
    println!("insulated drift {worst:.3e}, final spread {spread:.3} °C");
    assert!(worst < 1e-3);
    assert!(spread < 13.0);
}

#[test]
fn explicit_scheme_tracks_implicit_reference() {
    let setup = constant_setup();
    let problem = CompleteProblem::from_setup(&setup, 8.0, 0.5);
    let spec = MeshSpec {
        interior: 4e-3,
        ..MeshSpec::default()
    };
    let mesh = Mesh2D::build(&setup.geometry, &spec).unwrap();
    let opts = DfOptions {
        save_every: 60,
        ..DfOptions::chamber(&setup)
    };
    let df = solve_complete(&problem, &mesh, &opts).unwrap();
    let be = solve_complete_implicit(&problem, &mesh, &opts).unwrap();
    let worst = df
        .values
        .iter()
        .flatten()
        .zip(be.values.iter().flatten())
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    println!("DuFort-Frankel vs implicit: {worst:.4} °C");
    assert!(worst < 0.2);
}

#[test]
fn step_refinement_changes_sensor_column_little() {
    let setup = PhysicalSetup::chamber();
    let problem = CompleteProblem::from_setup(&setup, 16.0, 0.4);
    let mesh = Mesh2D::build(&setup.geometry, &MeshSpec::default()).unwrap();
    let mid = 0.5 * setup.geometry.l0y;
    let sensors: Vec<(f64, f64)> = [0.0, 0.01, 0.02, 0.04].iter().map(|&x| (x, mid)).collect();
    let times: Vec<f64> = (0..=240).map(|k| k as f64 * 300.0).collect();
    let run = |dt: f64| {
        let opts = DfOptions {
            dt,
            ..DfOptions::chamber(&setup)
        };
        solve_complete_at_sensors(&problem, &mesh, &opts, &sensors, &times).unwrap()
    };
    let coarse = run(10.0);
    let fine = run(2.5);
    let worst = coarse
        .iter()
        .flatten()
        .zip(fine.iter().flatten())
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    println!("dt 10 s vs 2.5 s: {worst:.4} °C");
    assert!(worst < 0.05);
}

#[test]
fn faster_ramp_raises_interface_flux() {
    let setup = PhysicalSetup::chamber();
    let mesh = Mesh2D::build(&setup.geometry, &MeshSpec::default()).unwrap();
    let opts = DfOptions {
        save_every: 30,
        ..DfOptions::chamber(&setup)
    };
    let base = CompleteProblem::from_setup(&setup, 16.0, 0.4);
    let mut fast = base.clone();
    fast.schedule = BoundarySchedule::new(vec![
        (0.0, 20.0),
        (2.5 * 3600.0, 30.0),
        (15.0 * 3600.0, 30.0),
        (20.0 * 3600.0, 20.0),
    ])
    .unwrap();
    let p0 = peak(&interface_flux(&solve_complete(&base, &mesh, &opts).unwrap()).unwrap());
    let p1 = peak(&interface_flux(&solve_complete(&fast, &mesh, &opts).unwrap()).unwrap());
    println!("interface flux peak: baseline {p0:.3}, doubled ramp {p1:.3} W/m²");
    assert!(p1 > p0);
}

#[test]
fn strong_lateral_exchange_pins_the_tape() {
    let setup = PhysicalSetup::chamber();
    let mesh = Mesh2D::build(&setup.geometry, &MeshSpec::default()).unwrap();
    let opts = DfOptions {
        save_every: 30,
        ..DfOptions::chamber(&setup)
    };
    let peaks: Vec<f64> = [0.4, 5.0, 500.0]
        .iter()
        .map(|&h_l| {
            let p = CompleteProblem::from_setup(&setup, 16.0, h_l);
            let f = solve_complete(&p, &mesh, &opts).unwrap();
            peak(&aluminum_deviation(&f, &p.schedule))
        })
        .collect();
    println!("aluminum deviation peaks {peaks:?}");
    assert!(peaks[0] > peaks[1] && peaks[1] > peaks[2]);
    assert!(peaks[2] < 0.05 * peaks[0]);
}

#[test]
fn strict_guard_rejects_large_steps() {
    let setup = PhysicalSetup::chamber();
    let problem = CompleteProblem::from_setup(&setup, 8.0, 0.5);
    let mesh = Mesh2D::build(&setup.geometry, &MeshSpec::default()).unwrap();
    let opts = DfOptions {
        dt: 1200.0,
        save_every: 1,
        strict: true,
        ..DfOptions::chamber(&setup)
    };
    assert!(matches!(
        solve_complete(&problem, &mesh, &opts),
        Err(Error::Config(_))
    ));
}

#[test]
fn csv_exports_have_documented_headers() {
    let setup = PhysicalSetup::chamber();
    let problem = CompleteProblem::from_setup(&setup, 8.0, 0.5);
    let spec = MeshSpec {
        interior: 8e-3,
        ..MeshSpec::default()
    };
    let mesh = Mesh2D::build(&setup.geometry, &spec).unwrap();
    let opts = DfOptions {
        horizon: 600.0,
        save_every: 30,
        ..DfOptions::chamber(&setup)
    };
    let f = solve_complete(&problem, &mesh, &opts).unwrap();
    let mut buf = Vec::new();
    f.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("t_s,x_m,y_m,T_C\n"));
    assert_eq!(text.lines().count(), 1 + f.times.len() * mesh.len());

    let d = Diagnostics::from_field(&f, &Window::sensor_column(&setup.geometry, 0.04)).unwrap();
    let mut buf = Vec::new();
    d.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("t_s,flux_ratio,interface_flux_Wm2,alu_deviation_C\n"));
}
