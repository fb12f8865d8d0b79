use std::f64::consts::PI;

use heatkern::heatcoeffs::HeatCoefficients;
use heatkern::oracle::{self, MellinPlan, Oracle, SpectralProblem};

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

fn oracle_for(problem: SpectralProblem) -> Oracle {
    Oracle::build(problem, 1e-2, 6, &mut HeatCoefficients::new()).unwrap()
}

#[test]
fn determinant_of_constant_potential() {
    let o = oracle_for(SpectralProblem::constant(1.0, 1, 1.0).unwrap());
    let got = o.log_det(0.0).unwrap();
    let want = 2.0 * (2.0 * PI.sinh()).ln();
    eprintln!("log det = {got:.16e}, want {want:.16e}");
    assert!((got - want).abs() < 1e-6);
    assert!((oracle::constant_log_det(1.0, 1.0) - want).abs() < 1e-14);
}

#[test]
fn determinant_shift_consistency() {
    let a = oracle_for(SpectralProblem::constant(1.0, 1, 1.0).unwrap());
    let b = oracle_for(SpectralProblem::constant(1.0, 1, 0.25).unwrap());
    let x = a.log_det(-0.5).unwrap();
    let y = b.log_det(-0.5 - 0.75).unwrap();
    assert!((x - y).abs() < 1e-9, "{x} vs {y}");
}

#[test]
fn free_zeta_at_one() {
    let o = oracle_for(SpectralProblem::free(1.0, 1).unwrap());
    let z = o.zeta(1.0, -1.0).unwrap();
    let want = PI / PI.tanh();
    assert!(rel(z, want) < 1e-10, "{z} vs {want}");
    assert_eq!(o.zeta_mellin(0.0, -1.0).unwrap(), 0.0);
}

#[test]
fn zeta_routes_agree() {
    for problem in [
        SpectralProblem::free(1.0, 1).unwrap(),
        SpectralProblem::scalar_cosines(1.0, 0.0, &[(1, 0.5)]).unwrap(),
        SpectralProblem::constant(2.0, 2, 0.4).unwrap(),
    ] {
        let o = oracle_for(problem);
        for s in [1.0, 1.5, 2.0] {
            let d = o.zeta(s, -1.0).unwrap();
            let m = o.zeta_mellin(s, -1.0).unwrap();
            eprintln!("s = {s}: direct {d:.16e}, mellin {m:.16e}");
            assert!(rel(d, m) < 1e-8, "s = {s}: {d} vs {m}");
        }
    }
}

#[test]
fn split_point_independence() {
    let o = oracle_for(SpectralProblem::scalar_cosines(1.0, 0.3, &[(1, 0.4), (2, 0.1)]).unwrap());
    let base = o.b_function(0.5, -2.0).unwrap();
    for factor in [0.5, 2.0] {
        let plan = MellinPlan {
            split: o.plan.split * factor,
            ..o.plan.clone()
        };
        match oracle::b_function(&o.eigen, &o.invariants, 0.5, -2.0, &plan) {
            Ok(v) => {
                eprintln!("t* x{factor}: {v:.16e} vs {base:.16e}");
                assert!((v - base).abs() <= 1e-8 * base.abs().max(1.0));
            }
            Err(e) => eprintln!("t* x{factor} refused: {e}"),
        }
    }
}

#[test]
fn integer_orders_are_taylor_coefficients() {
    let o = oracle_for(SpectralProblem::scalar_cosines(1.0, 0.0, &[(1, 0.5)]).unwrap());
    // λ = 0 lies above the ground state here; B_k(0) = A_k holds at the
    // level of the polynomial
    for k in 0..=3 {
        assert_eq!(o.invariants.taylor_b(k, 0.0).unwrap(), o.invariants.values[k]);
    }
    assert!(o.b_function(1.0, 0.0).is_err());
    // B_1(λ) = A_1 − λ A_0
    let b1 = o.b_function(1.0, -2.0).unwrap();
    assert!((b1 - (o.invariants.values[1] + 2.0 * o.invariants.values[0])).abs() < 1e-12);
}

#[test]
fn free_large_shift_weyl_law() {
    let o = oracle_for(SpectralProblem::free(1.0, 1).unwrap());
    for q in [0.5, -0.5, 1.5] {
        let lambda = -400.0;
        let b = o.b_function(q, lambda).unwrap();
        let w = 2.0 * PI * (-lambda).powf(q);
        eprintln!("q = {q}: {b:.10e} vs {w:.10e}");
        assert!(rel(b, w) < 1e-8);
    }
}

#[test]
fn omega_small_t_against_invariants() {
    let o = oracle_for(SpectralProblem::scalar_cosines(1.0, 0.0, &[(1, 0.5)]).unwrap());
    let t = 0.05;
    let r = (o.omega(t).unwrap() - o.invariants.omega_series(t, 4)).abs();
    // next term is t⁵/5! A_5
    assert!(r < t.powi(5), "{r}");
}

#[test]
fn oversized_cutoff_is_refused() {
    let p = SpectralProblem::free(1.0, 1).unwrap();
    match Oracle::build(p, 1e-9, 6, &mut HeatCoefficients::new()) {
        Err(heatkern::Error::Resolution { needed, .. }) => assert!(needed > oracle::MAX_CUTOFF),
        other => panic!("expected a resolution refusal, got {:?}", other.map(|o| o.eigen.n_max)),
    }
}
