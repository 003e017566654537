use memdarcy::boundary_noise::sample_stats;
use memdarcy::cell_geometry::HoleShape;
use memdarcy::cli_io::*;
use memdarcy::kernels::KernelTable;
use memdarcy::linalg::Mat2;
use memdarcy::Error;

fn small(extra: &str) -> RunConfig {
    RunConfig::parse(&format!(
        "[cell]\nh = 0.2\nhorizon = 0.4\ndt = 0.02\n[macro]\nn = 8\ndt = 0.02\nhorizon = 0.2\n{extra}"
    ))
    .unwrap()
}

#[test]
fn defaults_fill_missing_sections() {
    let cfg = RunConfig::parse("[cell]\n").unwrap();
    assert_eq!(cfg.cell, CellSection::default());
    assert_eq!(cfg.macro_.n, 32);
    assert_eq!(cfg.micro.eps, vec![0.5, 0.25]);
    assert!(cfg.noise.is_zero());
    assert_eq!(RunConfig::parse(&cfg.to_toml()).unwrap(), cfg);
}

#[test]
fn malformed_configs_are_rejected() {
    for text in [
        "[macro]\nn = 8\n",
        "[cell]\nbogus = 1\n",
        "[cell]\nh = -0.1\n",
        "[cell]\n[micro]\nbeta = 1.0\n",
        "[cell]\n[macro]\nforcing = { kind = \"swirl\" }\n",
        "not toml",
    ] {
        let err = RunConfig::parse(text).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{text}: {err:?}");
        assert_eq!(exit_code(&err), EXIT_INPUT);
    }
    let missing = RunConfig::parse("[macro]\nn = 8\n").unwrap_err().to_string();
    assert!(missing.contains("cell"), "{missing}");
}

#[test]
fn exit_codes_are_stable() {
    assert_eq!(exit_code(&Error::ProvenanceMismatch("x".into())), 1);
    assert_eq!(exit_code(&Error::SolveFailure("x".into())), 3);
    assert_eq!(exit_code(&Error::SingularOperator("x".into())), 3);
    assert_eq!((EXIT_OK, EXIT_INPUT, EXIT_PROPERTY, EXIT_SOLVER), (0, 1, 2, 3));
}

#[test]
fn no_hole_kernel_file() {
    let mut cfg = small("");
    cfg.cell.hole = HoleShape::None;
    cfg.cell.h = 0.25;
    let dir = tempfile::tempdir().unwrap();
    let outcome = cmd_cell_kernels(&cfg, dir.path()).unwrap();
    assert!(outcome.passed, "{:?}", outcome.checks);
    let table = KernelTable::read_csv(&outcome.path).unwrap();
    assert!(table.k1.iter().all(|k| (*k - Mat2::IDENTITY).max_abs() <= 1e-10));
    assert!(table.k2.iter().all(|k| k.max_abs() <= 1e-10));
    assert!(dir.path().join("kernel_report.json").exists());
}

#[test]
fn mesh_summary_is_written() {
    let dir = tempfile::tempdir().unwrap();
    let summary = cmd_mesh(&small(""), dir.path()).unwrap();
    assert!(summary.min_angle_deg > 5.0);
    assert!(dir.path().join("cell_mesh.txt").exists());
    assert!(dir.path().join("mesh_summary.json").exists());
}

#[test]
fn darcy_run_refuses_foreign_kernels() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small("");
    let outcome = cmd_cell_kernels(&cfg, dir.path()).unwrap();
    let mut other = cfg.clone();
    other.cell.nu = 2.0;
    let err = cmd_darcy_run(&other, &outcome.path, dir.path(), None, false).unwrap_err();
    assert!(matches!(err, Error::ProvenanceMismatch(_)));
    let mut finer = cfg.clone();
    finer.cell.h = 0.1;
    let err = cmd_darcy_run(&finer, &outcome.path, dir.path(), None, false).unwrap_err();
    assert!(matches!(err, Error::ProvenanceMismatch(_)));
    let mut longer = cfg;
    longer.macro_.horizon = 1.0;
    let err = cmd_darcy_run(&longer, &outcome.path, dir.path(), None, false).unwrap_err();
    assert!(matches!(err, Error::KernelHorizonExceeded { .. }));
}

#[test]
fn divergence_free_forcing_run_matches_exact_solution() {
    let mut cfg = small("[macro.forcing]\nkind = \"stream\"\namplitude = 1.0\n");
    cfg.cell.hole = HoleShape::None;
    cfg.cell.h = 0.25;
    cfg.macro_.n = 64;
    let dir = tempfile::tempdir().unwrap();
    let kernels = cmd_cell_kernels(&cfg, dir.path()).unwrap();
    let run = cmd_darcy_run(&cfg, &kernels.path, dir.path(), None, true).unwrap();
    let t = cfg.macro_.horizon;
    let exact = memdarcy::darcy_macro::FaceVectors::sample(64, &|x| {
        memdarcy::darcy_macro::stream_velocity(1.0, x)
    })
    .normal()
    .l2_norm()
        * t;
    assert!((run.final_velocity_l2_mean - exact).abs() <= 0.02 * exact);
    assert!(run.max_relative_divergence <= 1e-8);
    assert_eq!(run.max_boundary_flux, 0.0);
    let csv = std::fs::read_to_string(dir.path().join("run.csv")).unwrap();
    let last: Vec<f64> = csv.lines().last().unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!(last[1], run.final_velocity_l2_mean);
    let svg = std::fs::read_to_string(dir.path().join("snapshot_00010.svg")).unwrap();
    assert!(svg.starts_with("<svg"));
}

#[test]
fn noise_only_ensemble_moves_the_fluid() {
    let cfg = small("[noise]\ng21 = 1.0\ng22 = 1.0\n");
    let dir = tempfile::tempdir().unwrap();
    let kernels = cmd_cell_kernels(&cfg, dir.path()).unwrap();
    let run = cmd_darcy_run(&cfg, &kernels.path, dir.path(), Some(200), false).unwrap();
    assert_eq!(run.paths, 200);
    assert!(run.final_velocity_l2_mean - 2.576 * run.final_velocity_l2_stderr > 0.0);
    let text = std::fs::read_to_string(dir.path().join("paths_final.csv")).unwrap();
    let finals: Vec<f64> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    let (mean, _, se) = sample_stats(&finals);
    assert_eq!(mean, run.final_velocity_l2_mean);
    assert_eq!(se, run.final_velocity_l2_stderr);
    let again = cmd_darcy_run(&cfg, &kernels.path, dir.path(), Some(200), false).unwrap();
    assert_eq!(again.final_velocity_l2_mean, run.final_velocity_l2_mean);
}

#[test]
fn micro_compare_rejects_noise() {
    let cfg = small("[noise]\ng1 = 1.0\n");
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(cmd_micro_compare(&cfg, dir.path()), Err(Error::ConfigMismatch(_))));
}

#[test]
fn validation_suite() {
    let a = cmd_validate(1, None).unwrap();
    assert!(a.passed, "{:?}", a.checks);
    let b = cmd_validate(2, None).unwrap();
    for (x, y) in a.checks.iter().zip(&b.checks) {
        assert_eq!(x.name, y.name);
        if !x.name.starts_with("ou_variance") {
            assert_eq!(x.defect, y.defect, "{}", x.name);
        }
    }
    let broken = cmd_validate(1, Some(Fixture::KernelAsymmetry)).unwrap();
    assert!(!broken.passed);
    let failed: Vec<&str> = broken.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
    assert_eq!(failed, vec!["kernel_symmetry"]);
}
