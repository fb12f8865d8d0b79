use heatkern::heatcoeffs::HeatCoefficients;
use heatkern::kdvflow::{self, FlowConfig, Functional, Integrator};
use heatkern::periodic::PeriodicFunction;
use proptest::prelude::*;

fn cosine(amp: f64) -> PeriodicFunction {
    PeriodicFunction::scalar_cosine_series(1.0, 0.0, &[(1, amp / 2.0)]).unwrap()
}

fn config(steps: usize, integrator: Integrator) -> FlowConfig {
    FlowConfig {
        grid: 128,
        s_end: 0.5,
        steps,
        records: 4,
        integrator: Some(integrator),
    }
}

#[test]
fn kdv_conserves_higher_invariants() {
    let mut hc = HeatCoefficients::new();
    let traj = kdvflow::integrate_flow(2, &cosine(1.0), &config(1024, Integrator::Etdrk4), &mut hc).unwrap();
    let fs: Vec<Functional> = (1..=4).map(Functional::Rescaled).collect();
    let rep = kdvflow::conservation_report(&traj, &fs, &mut hc).unwrap();
    assert!(rep.max_drift() < 1e-8, "{:?}", rep.series);
    // the mean is the zero mode of a derivative
    let m0 = traj.states[0].q.mode(0)[(0, 0)];
    for st in &traj.states {
        assert!((st.q.mode(0)[(0, 0)] - m0).norm() < 1e-14);
    }
}

#[test]
fn transport_moves_at_speed_two() {
    let mut hc = HeatCoefficients::new();
    let q0 = PeriodicFunction::scalar_cosine_series(1.0, 0.0, &[(1, 0.5), (2, 0.2)]).unwrap();
    let traj = kdvflow::integrate_flow(1, &q0, &config(16, Integrator::Etdrk4), &mut hc).unwrap();
    // Q(s, x) = Q₀(x − 2s), so at s = 1/2 the state is Q₀(· − 1)
    let shift = kdvflow::detect_shift(&q0, &traj.last().q);
    let want = (-1.0f64).rem_euclid(std::f64::consts::TAU);
    assert!((shift - want).abs() < 1e-10, "{shift}");
}

#[test]
fn trajectory_export() {
    let mut hc = HeatCoefficients::new();
    let traj = kdvflow::integrate_flow(2, &cosine(1.0), &config(64, Integrator::Etdrk4), &mut hc).unwrap();
    let mut buf = Vec::new();
    traj.write_jsonl(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().count(), traj.states.len());
    let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert_eq!(first["s"], 0.0);
    let modes = first["modes"].as_array().unwrap();
    assert_eq!(modes[1][0], 1);
    assert!((modes[1][1].as_f64().unwrap() - 0.5).abs() < 1e-15);
}

#[test]
fn cross_drift_table() {
    let base = HeatCoefficients::new();
    let rows = kdvflow::cross_conservation(&[1, 2], &[1, 2, 3], &cosine(1.0), 64, 0.25, |k| if k == 1 { 8 } else { 512 }, &base)
        .unwrap();
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().all(|r| r.drift >= 0.0 && r.drift < 1e-6), "{rows:?}");
    let mut buf = Vec::new();
    kdvflow::write_cross_csv(&mut buf, &rows).unwrap();
    assert!(String::from_utf8(buf).unwrap().starts_with("k,m,drift\n"));
}

#[test]
fn aliased_initial_data_is_refused() {
    let mut hc = HeatCoefficients::new();
    let q0 = PeriodicFunction::scalar_cosine_series(1.0, 0.0, &[(30, 0.1)]).unwrap();
    let mut cfg = config(8, Integrator::Etdrk4);
    cfg.grid = 64;
    assert!(kdvflow::integrate_flow(2, &q0, &cfg, &mut hc).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    // mean, ∫Q² and the KdV energy are conserved for any small band-limited start
    #[test]
    fn kdv_invariants_for_random_data(c in prop::collection::vec(-0.3f64..0.3, 3), mean in -0.5f64..0.5) {
        let mut hc = HeatCoefficients::new();
        let h: Vec<(u32, f64)> = c.iter().enumerate().map(|(j, &x)| (j as u32 + 1, x)).collect();
        let q0 = PeriodicFunction::scalar_cosine_series(1.0, mean, &h).unwrap();
        let cfg = FlowConfig { grid: 64, s_end: 0.1, steps: 400, records: 2, integrator: None };
        let traj = kdvflow::integrate_flow(2, &q0, &cfg, &mut hc).unwrap();
        let rep = kdvflow::conservation_report(&traj, &[Functional::Heat(2), Functional::Heat(3)], &mut hc).unwrap();
        // relative drift is ill-conditioned when an invariant is near zero
        for series in &rep.series {
            let v0 = series.values[0];
            let change = series.values.iter().map(|v| (v - v0).abs()).fold(0.0, f64::max);
            prop_assert!(change < 1e-9 * (1.0 + v0.abs()), "{:?}", series);
        }
    }
}
