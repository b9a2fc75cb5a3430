use super::*;
use crate::hmm::Dataset;
use crate::prior::{init_state, InitOptions, PriorConfig};

fn toy_data() -> Dataset {
    let obs: Vec<f64> = (0..60)
        .map(|t| {
            let base = if (t / 10) % 2 == 0 { -1.0 } else { 1.2 };
            base + 0.3 * ((t as f64) * 1.7).sin()
        })
        .collect();
    Dataset::new(obs, vec![false; 60], -3.0, 3.0).unwrap()
}

fn toy_chain(data: &Dataset, seed: u64) -> Chain<'_> {
    let prior = PriorConfig::default();
    let params = init_state(data, 2, &prior, seed, &InitOptions::default()).unwrap();
    Chain::new(data, params, prior, TuningParams::for_bounds(-3.0, 3.0), seed).unwrap()
}

#[test]
fn birth_probability_follows_indicator_rule() {
    assert_eq!(birth_probability(2, 8), 1.0);
    assert_eq!(birth_probability(3, 8), 0.5);
    assert_eq!(birth_probability(7, 8), 0.5);
    assert_eq!(birth_probability(8, 8), 0.0);
}

#[test]
fn zeta_ratio_matches_closed_form() {
    let data = Dataset::fully_missing(5, 0.0, 1.0).unwrap();
    let knots = KnotConfig::new(0.0, 1.0, vec![0.3, 0.6]).unwrap();
    let a = vec![0.2, -0.5, 1.0, 0.1, -0.3, 0.4];
    let params = HmmParams {
        knots,
        coeffs: splines::SplineCoeffs::from_rows(std::slice::from_ref(&a)).unwrap(),
        delta: vec![1.0],
        gamma: vec![1.0],
        zeta: 1.0,
        zero_weights: None,
    };
    let chain = Chain::new(&data, params, PriorConfig::default(), TuningParams::default(), 0).unwrap();
    // Gamma(1,1) hyperprior: -(2-1); coefficients: (2-1) * sum(a) since
    // lnGamma(2) = lnGamma(1) = 0; proposal asymmetry: ln 2.
    let expected = -1.0 + a.iter().sum::<f64>() + 2f64.ln();
    assert!((chain.zeta_log_ratio(2.0) - expected).abs() < 1e-12);
}

#[test]
fn knot_move_to_same_location_has_unit_ratio() {
    let data = toy_data();
    let mut chain = toy_chain(&data, 3);
    let r = chain.params().knots.interior()[0];
    let p = chain.propose_knot_move(0, r).unwrap();
    assert_eq!(p.log_ratio, 0.0);
}

#[test]
fn zero_scale_updates_leave_state_unchanged() {
    let data = toy_data();
    let mut chain = toy_chain(&data, 5);
    let t = chain.tuning_mut();
    t.tau1 = 0.0;
    t.tau2 = 0.0;
    t.tau3 = 0.0;
    t.tau4 = 0.0;
    t.tau5 = 0.0;
    let before = chain.params().clone();
    assert!(chain.step_move_knot());
    assert!(chain.step_update_coeffs());
    assert!(chain.step_update_zeta());
    assert!(chain.step_update_delta());
    assert!(chain.step_update_gamma());
    assert_eq!(chain.params(), &before);
}

#[test]
fn counters_add_one_proposal_per_call_and_conserve() {
    let data = toy_data();
    let mut chain = toy_chain(&data, 7);
    for i in 1..=25u64 {
        chain.step_move_knot();
        let c = &chain.state().counters;
        assert_eq!(c.proposed(MoveKind::KnotMove), i);
    }
    for _ in 0..50 {
        chain.sweep();
    }
    let c = &chain.state().counters;
    for kind in MoveKind::ALL {
        assert_eq!(c.proposed(kind), c.accepted(kind) + c.rejected(kind));
    }
}

#[test]
fn birth_then_death_ratios_cancel() {
    let data = toy_data();
    let prior = PriorConfig::default();
    let mut params = init_state(&data, 2, &prior, 11, &InitOptions::default()).unwrap();
    // Distinct neighbouring coefficients keep the Jacobian non-singular.
    for (j, v) in params.coeffs.values_mut().iter_mut().enumerate() {
        *v = 0.4 * (1.3 * j as f64).sin();
    }
    let mut chain = Chain::new(&data, params, prior, TuningParams::default(), 11).unwrap();
    let (a, b) = (chain.params().knots.a(), chain.params().knots.b());
    for (j, r_c) in [a + 0.37 * (b - a), a + 0.81 * (b - a), a + 0.05 * (b - a)]
        .into_iter()
        .enumerate()
    {
        let u = vec![0.3 + 0.1 * j as f64, 0.65];
        let birth = chain.propose_birth(r_c, &u).unwrap();
        let birth_ratio = birth.log_ratio;
        let index = birth
            .params
            .knots
            .interior()
            .iter()
            .position(|&x| x == r_c)
            .unwrap();
        let saved = chain.state().clone();
        chain.commit(birth);
        let death = chain.propose_death(index).unwrap();
        assert!(
            (birth_ratio + death.log_ratio).abs() < 1e-9,
            "birth {birth_ratio} death {}",
            death.log_ratio
        );
        for (x, y) in death.params.coeffs.values().iter().zip(saved.params.coeffs.values()) {
            assert!((x - y).abs() < 1e-9);
        }
        chain.commit(death);
    }
}

#[test]
fn death_is_impossible_at_two_knots_and_birth_at_k_max() {
    let data = Dataset::fully_missing(3, 0.0, 1.0).unwrap();
    let mk = |k: usize| HmmParams {
        knots: KnotConfig::uniform(0.0, 1.0, k).unwrap(),
        coeffs: splines::SplineCoeffs::new(1, k + 4, vec![0.0; k + 4]).unwrap(),
        delta: vec![1.0],
        gamma: vec![1.0],
        zeta: 1.0,
        zero_weights: None,
    };
    let prior = PriorConfig {
        k_max: 4,
        ..PriorConfig::default()
    };
    let mut chain = Chain::new(&data, mk(2), prior.clone(), TuningParams::default(), 1).unwrap();
    assert!(chain.propose_death(0).is_none());
    let mut chain = Chain::new(&data, mk(4), prior, TuningParams::default(), 1).unwrap();
    assert!(chain.propose_birth(0.5, &[0.5]).is_none());
}

#[test]
fn zero_iterations_returns_initial_state() {
    let data = toy_data();
    let cfg = ChainConfig {
        schedule: Schedule {
            burn_in: 0,
            iters: 0,
            thin: 1,
            check_every: None,
        },
        ..ChainConfig::default()
    };
    let trace = run_chain(&data, 2, &cfg, 9).unwrap();
    assert_eq!(trace.len(), 1);
    let init = init_state(&data, 2, &cfg.prior, derive_seed(9, 1), &cfg.init).unwrap();
    assert_eq!(trace.draws[0].params, init);
}

#[test]
fn identical_seeds_give_identical_traces() {
    let data = toy_data();
    let cfg = ChainConfig {
        schedule: Schedule {
            burn_in: 100,
            iters: 200,
            thin: 5,
            check_every: Some(50),
        },
        ..ChainConfig::default()
    };
    let t1 = run_chain(&data, 2, &cfg, 42).unwrap();
    let t2 = run_chain(&data, 2, &cfg, 42).unwrap();
    let t3 = run_chain(&data, 2, &cfg, 43).unwrap();
    assert_eq!(t1, t2);
    assert_ne!(t1.loglik_series(), t3.loglik_series());
    assert_eq!(t1.len(), 40);
}

#[test]
fn audit_keeps_caches_exact() {
    let data = toy_data();
    let mut chain = toy_chain(&data, 13);
    chain.enable_audit();
    for _ in 0..300 {
        chain.sweep();
    }
    assert!(chain.audit_drift().unwrap() < 1e-8);
}

#[test]
fn trace_round_trips_through_jsonl_and_csv() {
    let data = toy_data();
    let cfg = ChainConfig {
        schedule: Schedule {
            burn_in: 20,
            iters: 30,
            thin: 10,
            check_every: None,
        },
        ..ChainConfig::default()
    };
    let trace = run_chain(&data, 2, &cfg, 1).unwrap();
    let mut buf = Vec::new();
    trace.write_jsonl(&mut buf).unwrap();
    let back = Trace::read_jsonl(buf.as_slice()).unwrap();
    assert_eq!(back.draws, trace.draws);

    let mut buf = Vec::new();
    trace.write_csv(&mut buf).unwrap();
    let back = Trace::read_csv(buf.as_slice()).unwrap();
    assert_eq!(back.len(), trace.len());
    for (x, y) in back.draws.iter().zip(&trace.draws) {
        assert_eq!(x.params.knots, y.params.knots);
        let ll = crate::hmm::log_likelihood(&x.params, &data).unwrap();
        assert!((ll - y.loglik).abs() < 1e-9);
    }
}

#[test]
fn csv_errors_report_line_numbers() {
    let text = "# header\n1,2,3\n";
    match Trace::read_csv(text.as_bytes()) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
        other => panic!("unexpected {other:?}"),
    }
}
