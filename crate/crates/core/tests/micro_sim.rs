use std::f64::consts::PI;

use memdarcy::cell_geometry::HoleSpec;
use memdarcy::darcy_macro::{stream_velocity, FaceField, FaceVectors, Forcing, SpatialForcing};
use memdarcy::linalg::Vec2;
use memdarcy::micro_sim::*;
use memdarcy::Error;

fn config(eps: f64, forcing: Forcing) -> MicroConfig {
    MicroConfig {
        eps,
        beta: 2.0,
        nu: 1.0,
        alpha: 1.0,
        hole: HoleSpec::default(),
        cell_h: 0.2,
        dt: 0.02,
        horizon: 0.2,
        forcing,
        noise: None,
        allow_fine: false,
    }
}

fn stream() -> Forcing {
    Forcing::steady(SpatialForcing::Stream { amplitude: 1.0 })
}

#[test]
fn perforated_area_is_scale_free() {
    let exact = 1.0 - PI / 16.0;
    for (eps, holes) in [(0.5, 4), (0.25, 16)] {
        let m = build_perforated_mesh(&HoleSpec::default(), eps, 0.05).unwrap();
        assert_eq!(m.n_holes(), holes);
        assert!((m.area - exact).abs() <= 0.01 * exact, "{}", m.area);
    }
}

#[test]
fn invalid_configurations() {
    let big = HoleSpec::disk(Vec2::new(0.5, 0.5), 0.49);
    assert!(matches!(build_perforated_mesh(&big, 0.5, 0.1), Err(Error::HoleTouchesBoundary(_))));
    assert!(matches!(cells_per_side(0.3), Err(Error::InvalidArgument(_))));
    let mut c = config(0.5, Forcing::none());
    c.beta = 1.0;
    assert!(matches!(solve_micro(&c), Err(Error::InvalidArgument(_))));
    let fine = config(0.125, Forcing::none());
    assert!(matches!(solve_micro(&fine), Err(Error::InvalidArgument(_))));
}

#[test]
fn convection_is_skew_symmetric() {
    let p = MicroProblem::assemble(&config(0.5, Forcing::none())).unwrap();
    let n = p.n_velocity();
    let field = |s: f64| -> Vec<f64> { (0..n).map(|k| ((k as f64 + 1.0) * s).sin()).collect() };
    let (u, v, w) = (field(0.3), field(1.7), field(2.9));
    assert!(p.trilinear(&u, &v, &v).abs() <= 1e-12);
    let sum = p.trilinear(&u, &v, &w) + p.trilinear(&u, &w, &v);
    assert!(sum.abs() <= 1e-12 * (1.0 + p.trilinear(&u, &v, &w).abs()));
}

#[test]
fn zero_data_stays_at_rest() {
    let run = solve_micro(&config(0.5, Forcing::none())).unwrap();
    assert_eq!(run.averages.len(), 11);
    assert!(run.final_velocity.iter().all(|v| *v == 0.0));
    assert_eq!(run.energy.energy_sup, 0.0);
}

#[test]
fn energy_is_bounded_uniformly_in_eps() {
    let t = 0.2;
    let m = 400;
    let h = 1.0 / m as f64;
    let f_norm2: f64 = (0..m * m)
        .map(|c| {
            let x = Vec2::new((c % m) as f64 * h + 0.5 * h, (c / m) as f64 * h + 0.5 * h);
            stream_velocity(1.0, x).dot(stream_velocity(1.0, x)) * h * h
        })
        .sum();
    let bound = 2.0 * t * t * f_norm2;
    for eps in [0.5, 0.25] {
        let run = solve_micro(&config(eps, stream())).unwrap();
        let e = run.energy;
        assert!(e.energy_sup > 0.0);
        assert!(e.energy_sup + 2.0 * e.viscous <= bound, "{eps}: {e:?} vs {bound}");
        assert!(run.max_divergence_defect <= 1e-10);
    }
}

#[test]
fn self_comparison_is_exact() {
    let f = FaceVectors::sample(8, &|x| stream_velocity(1.0, x)).normal();
    let history: Vec<Vec<Vec2>> = (0..3).map(|_| block_average(&f, 4).unwrap()).collect();
    assert_eq!(relative_l2_error(&history, &history).unwrap(), 0.0);
    assert!(matches!(block_average(&f, 3), Err(Error::ConfigMismatch(_))));
    let zero = FaceField::zeros(8);
    assert!(block_average(&zero, 2).unwrap().iter().all(|v| *v == Vec2::ZERO));
}

#[test]
fn comparison_requires_matching_grids() {
    let run = solve_micro(&config(0.5, stream())).unwrap();
    let macro_history = vec![FaceField::zeros(8); 11];
    assert!(matches!(
        compare_to_homogenized(&run, &macro_history, 0.03),
        Err(Error::ConfigMismatch(_))
    ));
    let row = compare_to_homogenized(&run, &macro_history, 0.02).unwrap();
    assert!(row.rel_error > 0.0);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("errors.csv");
    write_error_table(&path, &[row]).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let back: Vec<f64> = text.lines().nth(1).unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!(back[2], row.rel_error);
}
