use auglag::audit::{outer_bound_bounded_rho, outer_bound_reliable, BoundInputs, ProblemConstants};
use auglag::box_solver::{minimize_box, BoxOptions, ClosureProblem};
use auglag::harness::{run_problem, RunDocument, RunOptions};
use auglag::profile::performance_profile;
use auglag::qp_oracle::BoxQp;
use auglag::registry::find;
use nalgebra::DVector;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn inputs(rho_bar: f64, delta: f64, tau: f64) -> BoundInputs {
    BoundInputs {
        delta,
        delta_low: delta * 1e-2,
        epsilon: 1e-4,
        eps_opt: 1e-8,
        n_eps: 3,
        rho1: 1.0,
        rho_bar,
        rho_big_threshold: 1e20,
        gamma: 10.0,
        tau,
        mu_max: 1e4,
        c_inner: 1.0,
        q: 1.0,
        v: 1.0,
    }
}

fn constants(c_big: f64) -> ProblemConstants {
    ProblemConstants {
        c_big,
        c_lips: 1.0,
        c_f: 1.0,
        sample_count: 1,
        is_estimate: false,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn box_iterates_stay_inside(seed in 0u64..10_000, n in 1usize..6) {
        let qp = BoxQp::random(n, &mut ChaCha8Rng::seed_from_u64(seed));
        let (q1, c1, q2, c2, q3) = (qp.q.clone(), qp.c.clone(), qp.q.clone(), qp.c.clone(), qp.q.clone());
        let problem = ClosureProblem::new(
            qp.lower.clone(),
            qp.upper.clone(),
            move |x| 0.5 * x.dot(&(&q1 * x)) + c1.dot(x),
            move |x| &q2 * x + &c2,
            move |_| q3.clone(),
        );
        let r = minimize_box(&problem, &DVector::from_element(n, 3.0), &BoxOptions::default()).unwrap();
        prop_assert!(r.projected_start);
        for x in &r.trace.points {
            for i in 0..n {
                prop_assert!(qp.lower[i] <= x[i] && x[i] <= qp.upper[i]);
            }
        }
        prop_assert!(r.trace.phi.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn bounds_monotone(r1 in 1.0f64..1e6, r2 in 1.0f64..1e6, c1 in 1e-3f64..1e3, c2 in 1e-3f64..1e3, d1 in 1e-8f64..1.0, d2 in 1e-8f64..1.0) {
        let (rlo, rhi) = (r1.min(r2), r1.max(r2));
        let (clo, chi) = (c1.min(c2), c1.max(c2));
        let (dlo, dhi) = (d1.min(d2), d1.max(d2));
        prop_assert!(outer_bound_bounded_rho(&inputs(rlo, 1e-3, 0.5), &constants(10.0)) <= outer_bound_bounded_rho(&inputs(rhi, 1e-3, 0.5), &constants(10.0)));
        prop_assert!(outer_bound_bounded_rho(&inputs(1e3, 1e-3, 0.5), &constants(clo)) <= outer_bound_bounded_rho(&inputs(1e3, 1e-3, 0.5), &constants(chi)));
        prop_assert!(outer_bound_bounded_rho(&inputs(1e3, dhi, 0.5), &constants(10.0)) <= outer_bound_bounded_rho(&inputs(1e3, dlo, 0.5), &constants(10.0)));
        let rel_lo = outer_bound_reliable(&inputs(1.0, dhi, 0.5), &constants(10.0));
        let rel_hi = outer_bound_reliable(&inputs(1.0, dlo, 0.5), &constants(10.0));
        prop_assert!(rel_lo.rho_max <= rel_hi.rho_max);
    }

    #[test]
    fn profile_curves_nondecreasing(times in proptest::collection::vec(proptest::collection::vec(0.1f64..100.0, 6), 1..4)) {
        let taus: Vec<f64> = (0..30).map(|k| 1.0 + 0.5 * k as f64).collect();
        for curve in performance_profile(&times, &taus) {
            prop_assert!(curve.windows(2).all(|w| w[0] <= w[1]));
            prop_assert!(curve.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }
}

#[test]
fn reports_round_trip_bit_exactly() {
    for name in ["P1", "P2", "P3", "hs071", "qp_4"] {
        let entry = find(name, 3).unwrap();
        let doc = run_problem(&entry, &RunOptions { audit: true, ..RunOptions::default() }).unwrap();
        let back = RunDocument::from_json(&doc.to_json()).unwrap();
        assert_eq!(back, doc, "{name}");
        assert_eq!(back.report.x.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), doc.report.x.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }
}
