use qbarrier_core::grover::{
    initial_interval, simulate, synth_angle_certificate, unsafe_interval, GroverInstance,
};
use qbarrier_core::smt::{SolverConfig, Verdict};
use qbarrier_core::synth::Status;

fn solver() -> Option<SolverConfig> {
    if std::process::Command::new("z3")
        .arg("-version")
        .output()
        .is_err()
    {
        eprintln!("z3 not found; skipping");
        return None;
    }
    Some(SolverConfig {
        timeout: std::time::Duration::from_secs(60),
        ..SolverConfig::default()
    })
}

#[test]
fn small_rows_are_solved_and_safe_in_simulation() {
    let Some(cfg) = solver() else { return };
    for (n, t, m, err, eta, samples) in [
        (5, 5, 1.0, 0.5, 0.3, 3000),
        (5, 2, 8.0, 0.5, 0.3, 3000),
        (10, 3, 128.0, 5.0, 0.3, 10000),
    ] {
        let g = GroverInstance::new(n, m, err, eta, Some(t)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let out = synth_angle_certificate(&g, samples, 0, &cfg, dir.path()).unwrap();
        assert_eq!(out.status, Status::Solved, "{g:?}: {:?}", out.verification);
        let c = out.certificate.unwrap();
        assert!(c.c > 0.0 && c.delta >= 0.0 && c.side_condition_holds());
        // certificate separation implies the reachable arc stays below λ / c
        assert!(c.lambda / c.c <= unsafe_interval().0 + 1e-9);
        let sim = simulate(&g, 1000, t);
        assert!(sim.enumerated);
        assert_eq!(sim.first_unsafe, None, "{g:?}");
    }
}

#[test]
fn row4_certificate_has_expected_shape() {
    let Some(cfg) = solver() else { return };
    let g = GroverInstance::new(5, 8.0, 0.5, 0.3, Some(2)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let out = synth_angle_certificate(&g, 3000, 0, &cfg, dir.path()).unwrap();
    let c = out.certificate.unwrap();
    assert!((c.c - 21.2207).abs() < 1e-3);
    let (_, hi) = initial_interval(&g);
    assert!(c.gamma >= c.c * hi);
}

#[test]
fn wide_noise_row_is_refuted_by_wrap_around() {
    let Some(cfg) = solver() else { return };
    let g = GroverInstance::new(30, 1000.0, 50.0, 0.003, None).unwrap();
    assert_eq!(g.horizon(), 814);
    let dir = tempfile::tempdir().unwrap();
    let out = synth_angle_certificate(&g, 20000, 0, &cfg, dir.path()).unwrap();
    let v = out.verification.expect("LP finds a candidate");
    let Verdict::Refuted(cex) = v.verdict else {
        panic!("{:?}", v.verdict)
    };
    assert_eq!(cex.condition, "nowrap");
    assert_eq!(out.status, Status::Unsolved);
    // the simulation agrees: backwards rotation reaches the unsafe arc
    let sim = simulate(&g, 1000, 814);
    assert!(!sim.enumerated);
    let (_, t, net) = sim.first_unsafe.expect("unsafe visit");
    assert!(t <= 814 && net < 0.0);
}
