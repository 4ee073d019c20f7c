use proptest::prelude::*;
use topoflock_core::analysis::rho_discrepancy;
use topoflock_core::io::{read_cdf_csv, write_cdf_csv};
use topoflock_core::lagrangian::{eulerian_reconstruct, run_flow, FlowSystem, LagrangianState};
use topoflock_core::m_solver::{couple_and_run, domain_for, MassRunOptions, SpatialGrid};
use topoflock_core::v_solver::VelocitySource;
use topoflock_core::{BoundedOperator, Kernel, KernelFamily, MassProfile, VelocityGrid};

#[test]
fn test_mass_and_particle_pipelines_agree() {
    let kernel = Kernel::pure(KernelFamily::Constant { value: 1.0 }).unwrap();
    let profile = MassProfile::from_blocks(&[0.0, 0.5, 1.0], &[0.3, 0.7]).unwrap();
    let u0 = |x: f64| 0.2 * (3.0 * x).sin();
    let p = 400;
    let sys = FlowSystem::new(&kernel, p, false).unwrap();
    let state = LagrangianState::new(&profile, u0, &sys).unwrap();
    let flow = run_flow(&state, &sys, 0.01, 0.5, &[0.5]).unwrap();
    let field = eulerian_reconstruct(flow.outputs.last().unwrap()).unwrap();

    let op = BoundedOperator::new(&kernel, p).unwrap();
    let v0 = VelocityGrid::new(topoflock_core::mass_coords::sample_velocity_on_mass_grid(u0, &profile, p)).unwrap();
    let traj = op.run(&v0, 0.01, 0.5).unwrap();
    let (lo, hi) = domain_for(profile.support(), traj.speed_bound(), 0.5);
    let grid = SpatialGrid::from_profile(&profile, lo, hi, 800).unwrap();
    let run = couple_and_run(&traj, &grid, 0.5, &[0.5], &MassRunOptions::default()).unwrap();
    let (l1, _) = rho_discrepancy(&field, run.outputs.last().unwrap());
    assert!(l1 < 0.05, "{l1}");
}

#[test]
fn test_cdf_file_round_trip() {
    let dir = std::env::temp_dir().join(format!("topoflock-core-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("mixed.csv");
    let p = MassProfile::new(vec![0.0, 1.0, 2.0], vec![0.0, 0.25, 0.6], vec![(0.5, 0.4)]).unwrap();
    write_cdf_csv(&path, &p).unwrap();
    let q = read_cdf_csv(&path).unwrap();
    std::fs::remove_dir_all(&dir).unwrap();
    for k in 0..=100 {
        let x = -0.5 + 3.0 * k as f64 / 100.0;
        assert_eq!(p.cdf(x), q.cdf(x), "{x}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn bounded_flow_keeps_mean_and_range(values in prop::collection::vec(-1.0f64..1.0, 8..40), exponent in 0.0f64..2.0) {
        let kernel = Kernel::pure(KernelFamily::AlgebraicDecay { exponent }).unwrap();
        let v0 = VelocityGrid::new(values.clone()).unwrap();
        let op = BoundedOperator::new(&kernel, values.len()).unwrap();
        let traj = op.run(&v0, 0.05, 2.0).unwrap();
        let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
        let mean = v0.mean();
        let mut last_energy = f64::INFINITY;
        for snap in &traj.snapshots {
            let m = snap.iter().sum::<f64>() / snap.len() as f64;
            prop_assert!((m - mean).abs() < 1e-12);
            prop_assert!(snap.iter().all(|&x| x >= lo - 1e-10 && x <= hi + 1e-10));
            let e = topoflock_core::v_solver::deviation_energy(snap);
            prop_assert!(e <= last_energy + 1e-14);
            last_energy = e;
        }
    }
}
