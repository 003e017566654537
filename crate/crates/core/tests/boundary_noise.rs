use memdarcy::boundary_noise::*;
use memdarcy::cell_geometry::{build_cell_mesh, HoleSpec};
use memdarcy::cell_stokes::CellProblem;
use memdarcy::Error;
use rayon::prelude::*;

fn coarse_disk() -> CellProblem {
    let mesh = build_cell_mesh(HoleSpec::default(), 0.2).unwrap();
    CellProblem::assemble_constant(&mesh, 1.0, 1.0).unwrap()
}

#[test]
fn modes_are_orthonormal() {
    for j in 0..12 {
        for k in 0..12 {
            let delta = if j == k { 1.0 } else { 0.0 };
            assert!((bulk_mode_gram(j, k, 64) - delta).abs() < 1e-10, "bulk {j} {k}");
            assert!((boundary_mode_gram(j, k, 256, 1.5) - delta).abs() < 1e-10, "boundary {j} {k}");
        }
    }
}

#[test]
fn spectrum_validation() {
    let spec = KLNoise::power_law(6, 2.0, 0).unwrap();
    assert!(spec.lambda.windows(2).all(|w| w[1] <= w[0]));
    assert!(matches!(KLNoise::new(vec![1.0, 0.0], 0), Err(Error::InvalidSpec(_))));
    assert!(matches!(KLNoise::new(vec![0.5, 1.0], 0), Err(Error::InvalidSpec(_))));
    let ops = NoiseOperators::with_gains(6, 2.0, 0.0, 1.0);
    let hs = ops.hilbert_schmidt(&spec);
    assert!((hs[0] - 4.0 * spec.trace()).abs() < 1e-12);
    assert_eq!(hs[1], 0.0);
    assert!((hs[2] - spec.lambda[0]).abs() < 1e-15);
}

#[test]
fn paths_are_reproducible() {
    let spec = KLNoise::power_law(3, 1.0, 42).unwrap();
    let a = sample_wiener(&spec, 0.01, 100, 7).unwrap();
    let b = sample_wiener(&spec, 0.01, 100, 7).unwrap();
    let c = sample_wiener(&spec, 0.01, 100, 8).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.increments, c.increments);
    assert!((a.value(100, 1) - a.mode(1).iter().sum::<f64>()).abs() < 1e-15);
}

#[test]
fn increment_variance() {
    let n = 10_000;
    let one = sample_wiener(&KLNoise::new(vec![1.0], 3).unwrap(), 0.01, n, 0).unwrap();
    let (_, var, _) = sample_stats(&one.mode(0));
    assert!((0.0094..=0.0106).contains(&var), "{var}");

    let spec = KLNoise::power_law(4, 2.0, 9).unwrap();
    let path = sample_wiener(&spec, 0.01, n, 1).unwrap();
    for (j, l) in spec.lambda.iter().enumerate() {
        let scaled: Vec<f64> = path.mode(j).iter().map(|w| w / 0.01_f64.sqrt()).collect();
        let (_, var, _) = sample_stats(&scaled);
        assert!((var - l).abs() <= 4.0 * l * (2.0 / n as f64).sqrt(), "mode {j}");
    }
}

#[test]
fn ou_closed_form() {
    assert_eq!(ou_variance_oracle(1.0, 1.0, 0.0), 0.0);
    let mu = 2.5;
    assert!((ou_variance_oracle(mu, 1.3, 20.0 / mu) - 1.69 / (2.0 * mu)).abs() < 1e-8);
    assert!((ou_variance_oracle(1.0, 1.0, 1.0) - 0.432332).abs() < 1e-6);
    let samples = simulate_scalar_ou(1.0, 1.0, 0.01, &[100], 10_000, 5);
    let x: Vec<f64> = samples.iter().map(|s| s[0]).collect();
    let (_, var, _) = sample_stats(&x);
    assert!((var - 0.432332).abs() <= 3.0 * variance_stderr(&x));
}

#[test]
fn w3_vanishes_without_boundary_gain() {
    let p = coarse_disk();
    let spec = KLNoise::power_law(4, 2.0, 0).unwrap();
    let path = sample_wiener(&spec, 0.02, 10, 0).unwrap();
    let ops = NoiseOperators::with_gains(4, 1.0, 1.0, 0.0);
    let traj = solve_w3(&p, &ops, &path).unwrap();
    assert_eq!(traj.len(), 11);
    assert!(traj.states.iter().all(|s| s.velocity.iter().all(|v| *v == 0.0)));
}

#[test]
fn w3_ensemble_matches_the_isometry() {
    let p = coarse_disk();
    let spec = KLNoise::power_law(4, 2.0, 17).unwrap();
    let mut ops = NoiseOperators::zero(4);
    ops.g22 = vec![1.0, 0.5, 0.5, 0.25];
    let (dt, steps, paths) = (0.02, 10, 500);
    let runs: Vec<(Vec<f64>, [f64; 2])> = (0..paths as u64)
        .into_par_iter()
        .map(|r| {
            let path = sample_wiener(&spec, dt, steps, r).unwrap();
            let traj = solve_w3(&p, &ops, &path).unwrap();
            let energy = traj.states.iter().map(|s| p.h_inner(&s.velocity, &s.velocity)).collect();
            let m = p.integral(&traj.last().velocity);
            (energy, [m.x, m.y])
        })
        .collect();
    for c in 0..2 {
        let x: Vec<f64> = runs.iter().map(|r| r.1[c]).collect();
        let (mean, _, se) = sample_stats(&x);
        assert!(mean.abs() <= 3.0 * se, "component {c}: {mean} vs {se}");
    }
    let oracle = w3_second_moment_oracle(&p, &ops, &spec, dt, steps).unwrap();
    assert!(oracle.windows(2).all(|w| w[1] >= w[0]));
    for n in [steps / 2, steps] {
        let x: Vec<f64> = runs.iter().map(|r| r.0[n]).collect();
        let (mean, _, se) = sample_stats(&x);
        assert!((mean - oracle[n]).abs() <= 3.0 * se, "step {n}: {mean} vs {}", oracle[n]);
    }
}

#[test]
fn ensemble_summary_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("e.csv");
    let samples = vec![vec![0.1, 0.2, 0.3], vec![1.0 / 3.0, 2.0, 7.5]];
    write_ensemble_summary(&path, &[0.0, 0.5], &samples).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let row: Vec<f64> = text.lines().nth(2).unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    let (m, v, se) = sample_stats(&samples[1]);
    assert_eq!(row, vec![0.5, m, v, se]);
}
