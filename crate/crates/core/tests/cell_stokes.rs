use std::f64::consts::PI;

use memdarcy::cell_geometry::{build_cell_mesh, HoleSpec};
use memdarcy::cell_stokes::*;
use memdarcy::linalg::{dot, norm2, Vec2};
use memdarcy::Error;

fn disk(h: f64) -> CellProblem {
    let mesh = build_cell_mesh(HoleSpec::default(), h).unwrap();
    CellProblem::assemble_constant(&mesh, 1.0, 1.0).unwrap()
}

fn plain(h: f64) -> CellProblem {
    let mesh = build_cell_mesh(HoleSpec::none(), h).unwrap();
    CellProblem::assemble_constant(&mesh, 1.0, 1.0).unwrap()
}

fn pseudo_random(n: usize, seed: f64) -> Vec<f64> {
    (0..n).map(|k| ((k as f64 + 1.0) * seed).sin()).collect()
}

#[test]
fn assembled_blocks_are_symmetric() {
    let p = disk(0.1);
    for m in [&p.op.mass, &p.op.stiffness, &p.op.robin, &p.op.energy] {
        assert!(m.symmetry_defect() <= 1e-14, "{}", m.symmetry_defect());
    }
    let q = plain(0.25);
    assert_eq!(q.op.robin.max_abs(), 0.0);
    assert!(!q.has_hole());
}

#[test]
fn energy_form_is_coercive_with_a_hole() {
    let p = disk(0.1);
    assert!(p.slowest_decay_rate().unwrap() > 0.0);
    assert!(p.inf_sup_constant().unwrap() > 0.0);
    assert!(matches!(plain(0.25).slowest_decay_rate(), Err(Error::NoSteadyState)));
}

#[test]
fn constant_fields_survive_projection_without_hole() {
    let p = plain(0.25);
    let raw = p.space.full_constant(Vec2::new(1.0, 0.0));
    let u = p.leray_project(&raw, Trace::OfBulk).unwrap();
    for v in p.nodal_velocity(&u.velocity) {
        assert!((v - Vec2::new(1.0, 0.0)).norm() < 1e-12);
    }
}

#[test]
fn discrete_gradients_project_to_zero() {
    let p = plain(0.05);
    let q = pseudo_random(p.n_pressure(), 0.91);
    let rhs = p.op.div.matvec_transpose(&q);
    let u = p.project_load(&rhs).unwrap();
    let scale = norm2(&rhs);
    assert!(norm2(&p.op.mass.matvec(&u.velocity)) <= 1e-8 * scale);
}

fn interpolated_gradient_ratio(h: f64) -> f64 {
    let p = plain(h);
    let grad = |x: Vec2| {
        Vec2::new(
            2.0 * PI * (2.0 * PI * x.x).cos() * (2.0 * PI * x.y).sin(),
            2.0 * PI * (2.0 * PI * x.x).sin() * (2.0 * PI * x.y).cos(),
        )
    };
    let raw: Vec<f64> = p
        .space
        .layout
        .node_coords
        .iter()
        .flat_map(|&x| {
            let g = grad(x);
            [g.x, g.y]
        })
        .collect();
    let u = p.leray_project(&raw, Trace::OfBulk).unwrap();
    p.h_norm(&u.velocity) / p.h_norm(&p.space.restrict(&raw))
}

#[test]
fn interpolated_gradients_project_away_at_first_order() {
    let coarse = interpolated_gradient_ratio(0.1);
    let fine = interpolated_gradient_ratio(0.05);
    assert!(fine < 0.15);
    assert!((coarse / fine).log2() >= 0.9, "{coarse} {fine}");
}

#[test]
fn projection_is_idempotent() {
    let p = disk(0.1);
    let raw: Vec<f64> = pseudo_random(p.space.n_full(), 0.37);
    let once = p.leray_project(&raw, Trace::OfBulk).unwrap();
    let twice = p.leray_project_field(&once).unwrap();
    let diff: Vec<f64> = once.velocity.iter().zip(&twice.velocity).map(|(a, b)| a - b).collect();
    assert!(norm2(&diff) <= 1e-12 * norm2(&once.velocity));
    assert!(p.divergence_defect(&once.velocity) <= 1e-10);
}

#[test]
fn free_decay_is_strict() {
    let p = disk(0.1);
    let raw = pseudo_random(p.space.n_full(), 1.3);
    let mut u = p.leray_project(&raw, Trace::OfBulk).unwrap();
    let zero = vec![0.0; p.n_velocity()];
    let mut e = p.h_norm(&u.velocity);
    for _ in 0..20 {
        u = p.step(&u, 0.01, &zero).unwrap();
        let e1 = p.h_norm(&u.velocity);
        assert!(e1 < e);
        e = e1;
    }
}

#[test]
fn steady_state_is_a_fixed_point() {
    let p = disk(0.1);
    for i in 0..2 {
        let w = p.solve_steady_slip(i).unwrap();
        assert!(p.divergence_defect(&w.velocity) <= 1e-10);
        let next = p.step(&w, 0.05, &p.bulk_load(Vec2::unit(i))).unwrap();
        let diff: Vec<f64> = next.velocity.iter().zip(&w.velocity).map(|(a, b)| a - b).collect();
        assert!(norm2(&diff) <= 1e-10 * norm2(&w.velocity));
    }
    let k = p.steady_kernel().unwrap();
    assert!(k.get(0, 1).abs() <= 1e-10 * k.get(0, 0));
    assert!(matches!(plain(0.25).solve_steady_slip(0), Err(Error::NoSteadyState)));
}

#[test]
fn constant_forcing_without_hole_accelerates_uniformly() {
    let p = plain(0.25);
    let traj = p.solve_w1(0, 0.5, 0.1).unwrap();
    assert!(traj.states[0].velocity.iter().all(|v| *v == 0.0));
    for (n, s) in traj.states.iter().enumerate() {
        for v in p.nodal_velocity(&s.velocity) {
            assert!((v - Vec2::new(n as f64 * 0.1, 0.0)).norm() < 1e-12);
        }
    }
    let w2 = p.solve_w2(1, 0.5, 0.1).unwrap();
    assert!(w2.states.iter().all(|s| s.velocity.iter().all(|v| *v == 0.0)));
}

#[test]
fn w1_relaxes_to_the_steady_solution() {
    let p = disk(0.1);
    let mu = p.slowest_decay_rate().unwrap();
    let dt = 0.01;
    let horizon = ((5.0 / mu) / dt).ceil() * dt;
    let traj = p.solve_w1(0, horizon, dt).unwrap();
    let steady = p.solve_steady_slip(0).unwrap();
    let diff: Vec<f64> = traj.last().velocity.iter().zip(&steady.velocity).map(|(a, b)| a - b).collect();
    assert!(p.h_norm(&diff) <= 0.02 * p.h_norm(&steady.velocity));
    let rates: Vec<f64> = traj.rates.iter().map(|r| p.h_norm(r)).collect();
    assert!(rates.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)));
}

#[test]
fn w2_energy_budget_closes() {
    let p = disk(0.1);
    let dt = 0.01;
    let traj = p.solve_w2(0, 0.5, dt).unwrap();
    let load = p.direction_tangential_load(0);
    let (mut input, mut dissipated) = (0.0, 0.0);
    for w in traj.states.windows(2) {
        let (u0, u1) = (&w[0].velocity, &w[1].velocity);
        let du: Vec<f64> = u1.iter().zip(u0).map(|(a, b)| a - b).collect();
        input += dt * dot(&load, u1);
        dissipated += dt * p.energy_form(u1, u1) + 0.5 * p.h_inner(&du, &du);
    }
    let kinetic = 0.5 * p.h_inner(&traj.last().velocity, &traj.last().velocity);
    assert!(kinetic > 0.0);
    assert!((input - dissipated - kinetic).abs() <= 1e-8 * input.abs());
}

#[test]
fn dirichlet_matrix_is_isotropic_spd() {
    let mesh = build_cell_mesh(HoleSpec::default(), 0.1).unwrap();
    let d = CellProblem::assemble_dirichlet(&mesh).unwrap();
    let m = d.dirichlet_matrix().unwrap();
    assert!((m.get(0, 1) - m.get(1, 0)).abs() <= 1e-10 * m.max_abs());
    assert!(m.sym_eigenvalues().iter().all(|e| *e > 0.0));
    assert!(m.get(0, 1).abs() <= 1e-6 * m.get(0, 0));
}

#[test]
fn scalar_neumann_problem() {
    let mesh = build_cell_mesh(HoleSpec::default(), 0.05).unwrap();
    let zero = solve_scalar_neumann(&mesh, &|_, _| 0.0).unwrap();
    assert!(zero.max_abs() <= 1e-12);
    let one = solve_scalar_neumann(&mesh, &|_, _| 1.0).unwrap();
    assert!((one.interior_source() + one.data_integral).abs() <= 1e-12);
    let circ = 2.0 * PI * 0.25;
    assert!((one.boundary_flux().abs() - circ).abs() <= 0.01 * circ, "{}", one.boundary_flux());
}

#[test]
fn bad_horizon_is_rejected() {
    let p = plain(0.25);
    assert!(matches!(p.solve_w1(0, 0.25, 0.1), Err(Error::InvalidArgument(_))));
    assert!(matches!(p.solve_w1(2, 0.2, 0.1), Err(Error::InvalidArgument(_))));
}
