use memdarcy::boundary_noise::{sample_wiener, KLNoise, NoiseOperators};
use memdarcy::darcy_macro::*;
use memdarcy::kernels::{KernelMeta, KernelTable};
use memdarcy::linalg::{Mat2, Vec2};
use memdarcy::Error;

fn meta() -> KernelMeta {
    KernelMeta {
        mesh_hash: "synthetic".into(),
        nu: 1.0,
        alpha: 1.0,
    }
}

fn identity_table(dt: f64, steps: usize) -> KernelTable {
    KernelTable::from_samples(
        dt,
        vec![Mat2::IDENTITY; steps + 1],
        vec![Mat2::ZERO; steps + 1],
        None,
        meta(),
    )
}

/// A relaxing kernel shaped like the disk-cell kernels.
fn relaxing_table(dt: f64, steps: usize) -> KernelTable {
    let k1 = (0..=steps)
        .map(|n| {
            let t = n as f64 * dt;
            Mat2::scaled_identity(0.6 * (-4.0 * t).exp() + 0.05 * (-t).exp())
        })
        .collect();
    let k2 = (0..=steps)
        .map(|n| Mat2::scaled_identity(0.1 * (-4.0 * n as f64 * dt).exp()))
        .collect();
    KernelTable::from_samples(dt, k1, k2, None, meta())
}

fn setup(n: usize, table: &KernelTable, dt: f64, inputs: MacroInputs) -> MacroSetup {
    let grid = assemble_macro(n, table.k1[0]).unwrap();
    MacroSetup::new(grid, SampledKernels::from_table(table, dt).unwrap(), inputs)
}

#[test]
fn laplacian_kills_constants() {
    let grid = assemble_macro(32, Mat2::IDENTITY).unwrap();
    let lp = grid.apply_operator(&vec![3.5; 32 * 32]);
    assert!(lp.iter().all(|v| v.abs() < 1e-10));
}

#[test]
fn linear_pressure_is_exact() {
    let grid = assemble_macro(32, Mat2::IDENTITY).unwrap();
    let b = FaceVectors::sample(32, &|_| Vec2::new(1.0, 0.0)).normal();
    let p = grid.solve_pressure(&b).unwrap();
    for (c, v) in p.iter().enumerate() {
        let x = grid.cell_centre(c);
        assert!((v - (x.x - 0.5)).abs() < 1e-10, "{v} at {x:?}");
    }
}

#[test]
fn rejects_singular_k0() {
    assert!(matches!(
        assemble_macro(8, Mat2::new(1.0, 0.0, 0.0, 0.0)),
        Err(Error::SingularOperator(_))
    ));
    assert!(matches!(
        assemble_macro(8, Mat2::new(1.0, 0.5, 0.0, 1.0)),
        Err(Error::SingularOperator(_))
    ));
}

#[test]
fn div_grad_duality() {
    let grid = assemble_macro(16, Mat2::IDENTITY).unwrap();
    let f = FaceVectors::sample(16, &|x| Vec2::new((3.0 * x.y).sin() + x.x, x.x * x.y)).normal();
    let p: Vec<f64> = (0..256).map(|c| ((c * 37 % 101) as f64).cos()).collect();
    assert!(grid.duality_defect(&f, &p).abs() < 1e-12);
}

#[test]
fn zero_inputs_give_zero() {
    let table = identity_table(0.1, 10);
    let s = setup(8, &table, 0.1, MacroInputs::deterministic(Forcing::none()));
    let state = run_macro(&s, 10).unwrap();
    for n in 0..=10 {
        assert!(state.evaluate_velocity(n).unwrap().u.iter().all(|v| *v == 0.0));
        assert!(state.pressure(n).unwrap().iter().all(|v| *v == 0.0));
    }
}

#[test]
fn uniform_forcing_in_closed_box() {
    let dt = 0.05;
    let table = identity_table(dt, 20);
    let f = Forcing::steady(SpatialForcing::Uniform(Vec2::new(1.0, 0.0)));
    let s = setup(16, &table, dt, MacroInputs::deterministic(f));
    let state = run_macro(&s, 20).unwrap();
    for n in 0..=20 {
        let t = n as f64 * dt;
        let u = state.evaluate_velocity(n).unwrap();
        assert!(u.u.iter().chain(&u.v).all(|v| v.abs() < 1e-10));
        for (c, p) in state.pressure(n).unwrap().iter().enumerate() {
            let x = s.grid.cell_centre(c);
            assert!((p - t * (x.x - 0.5)).abs() < 1e-10);
        }
    }
}

#[test]
fn solenoidal_forcing_passes_through() {
    let dt = 0.1;
    let table = identity_table(dt, 10);
    let f = Forcing::steady(SpatialForcing::Stream { amplitude: 1.0 });
    let s = setup(64, &table, dt, MacroInputs::deterministic(f));
    let state = run_macro(&s, 10).unwrap();
    let exact = FaceVectors::sample(64, &|x| stream_velocity(1.0, x)).normal();
    for n in [5, 10] {
        let t = n as f64 * dt;
        let u = state.evaluate_velocity(n).unwrap();
        let mut diff = u.clone();
        diff.axpy(-t, &exact);
        assert!(diff.l2_norm() <= 0.02 * t * exact.l2_norm());
        assert!(state.pressure(n).unwrap().iter().all(|p| p.abs() < 1e-10));
    }
}

#[test]
fn terms_sum_to_velocity_and_constraints_hold() {
    let dt = 0.05;
    let table = relaxing_table(dt, 20);
    let spec = KLNoise::power_law(4, 2.0, 11).unwrap();
    let mut ops = NoiseOperators::with_gains(4, 1.0, 1.0, 0.0);
    ops.g22 = vec![0.0; 4];
    let noise = MacroNoise {
        ops,
        w1: sample_wiener(&spec, dt, 20, 0).unwrap(),
        w2: sample_wiener(&spec, dt, 20, 1).unwrap(),
        w3: W3Response::default(),
    };
    let inputs = MacroInputs {
        forcing: Forcing::steady(SpatialForcing::Field(std::sync::Arc::new(|x: Vec2| {
            Vec2::new(x.y * x.y, (2.0 * x.x).sin())
        }))),
        noise: Some(noise),
        w0: None,
    };
    let s = setup(16, &table, dt, inputs);
    let state = run_macro(&s, 20).unwrap();
    for n in 0..=20 {
        let u = state.evaluate_velocity(n).unwrap();
        let sum = state.terms(n).unwrap().sum();
        assert!(sum.max_abs_diff(u) <= 1e-13 * (1.0 + u.l2_norm()));
        assert!(s.grid.max_div(u) <= 1e-8 * u.l2_norm().max(1e-300));
        assert_eq!(u.boundary_flux_max(), 0.0);
        let mean: f64 = state.pressure(n).unwrap().iter().sum();
        assert!(mean.abs() < 1e-10);
    }
    assert!(matches!(state.evaluate_velocity(21), Err(Error::NotComputed(21))));
}

#[test]
fn gauge_invariance() {
    let grid = assemble_macro(12, Mat2::new(0.7, 0.1, 0.1, 0.5)).unwrap();
    let b = FaceVectors::sample(12, &|x| Vec2::new(x.x * x.y, 1.0 - x.x)).normal();
    let p = grid.solve_pressure(&b).unwrap();
    let shifted: Vec<f64> = p.iter().map(|v| v + 4.25).collect();
    assert!(grid.velocity(&b, &p).max_abs_diff(&grid.velocity(&b, &shifted)) < 1e-13);
}

#[test]
fn forcing_to_velocity_is_linear() {
    let dt = 0.05;
    let table = relaxing_table(dt, 10);
    let f1 = |x: Vec2| Vec2::new(x.y.sin(), x.x * x.x);
    let f2 = |x: Vec2| Vec2::new((x.x * x.y).cos(), -x.y);
    let run = |f: std::sync::Arc<dyn Fn(Vec2) -> Vec2 + Send + Sync>| {
        let s = setup(10, &table, dt, MacroInputs::deterministic(Forcing::steady(SpatialForcing::Field(f))));
        run_macro(&s, 10).unwrap().velocity.pop().unwrap()
    };
    let a = run(std::sync::Arc::new(f1));
    let b = run(std::sync::Arc::new(f2));
    let ab = run(std::sync::Arc::new(move |x| f1(x) * 2.0 + f2(x) * -3.0));
    let mut lin = a.clone();
    lin.u.iter_mut().chain(lin.v.iter_mut()).for_each(|v| *v *= 2.0);
    lin.axpy(-3.0, &b);
    assert!(lin.max_abs_diff(&ab) <= 1e-12 * (1.0 + ab.l2_norm()));
}

#[test]
fn horizon_is_enforced() {
    let table = identity_table(0.1, 5);
    let s = setup(4, &table, 0.1, MacroInputs::deterministic(Forcing::none()));
    assert!(matches!(run_macro(&s, 6), Err(Error::KernelHorizonExceeded { .. })));
}

#[test]
fn macro_dt_must_be_a_multiple() {
    let table = identity_table(0.1, 5);
    assert!(matches!(
        SampledKernels::from_table(&table, 0.15),
        Err(Error::GridMismatch(_))
    ));
    assert_eq!(SampledKernels::from_table(&table, 0.2).unwrap().k1.len(), 3);
}

#[test]
fn initial_data_aggregate() {
    use memdarcy::cell_geometry::{build_cell_mesh, HoleSpec};
    use memdarcy::cell_stokes::CellProblem;
    use memdarcy::kernels::fit_decay_rate;
    use std::sync::Arc;

    let plain = CellProblem::assemble_constant(&build_cell_mesh(HoleSpec::none(), 0.25).unwrap(), 1.0, 1.0).unwrap();
    assert!(w0_aggregate(&plain, &InitialData::Zero, 0.1, 5).unwrap().is_none());
    let general = InitialData::General(Arc::new(|x, y| x + y));
    assert!(matches!(
        w0_aggregate(&plain, &general, 0.1, 5),
        Err(Error::NonSeparableInitialData(_))
    ));
    let mut profile = plain.zero_field();
    profile.velocity = plain.space.restrict(&plain.space.full_constant(Vec2::new(1.0, 0.0)));
    let one = InitialData::Separable {
        amplitude: Arc::new(|_| 1.0),
        profile,
    };
    let agg = w0_aggregate(&plain, &one, 0.1, 5).unwrap().unwrap();
    assert_eq!(agg.values.len(), 6);
    assert!(agg.values.iter().all(|v| (*v - Vec2::new(1.0, 0.0)).norm() < 1e-12));

    let disk = CellProblem::assemble_constant(&build_cell_mesh(HoleSpec::default(), 0.1).unwrap(), 1.0, 1.0).unwrap();
    let dt = 0.01;
    let table = KernelTable::compute(&disk, 1.0, 2.0, dt).unwrap();
    let mut profile = disk.zero_field();
    profile.velocity = disk.project_load(&disk.bulk_load(Vec2::new(1.0, 0.0))).unwrap().velocity;
    let w0 = InitialData::Separable {
        amplitude: Arc::new(|_| 1.0),
        profile,
    };
    let agg = w0_aggregate(&disk, &w0, dt, 200).unwrap().unwrap();
    let rate = fit_decay_rate(&agg.values.iter().map(|v| v.x).collect::<Vec<_>>(), dt);
    assert!((rate - table.decay_rate).abs() <= 0.2 * table.decay_rate, "{rate} vs {}", table.decay_rate);
}
