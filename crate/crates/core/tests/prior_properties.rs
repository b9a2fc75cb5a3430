use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};

use splinehmm::hmm::HmmParams;
use splinehmm::prior::{log_prior, PriorConfig};
use splinehmm::splines::{KnotConfig, SplineCoeffs};

/// One draw of every parameter from the prior, sampled directly.
fn prior_draw(rng: &mut ChaCha8Rng, cfg: &PriorConfig, n_states: usize) -> HmmParams {
    let (a, b) = (-2.0, 5.0);
    let k = rng.random_range(2..=cfg.k_max);
    let mut interior: Vec<f64> = (0..k).map(|_| rng.random_range(a..b)).collect();
    interior.sort_by(f64::total_cmp);
    let knots = KnotConfig::new(a, b, interior).unwrap();
    let zeta = Gamma::new(cfg.zeta_shape, 1.0 / cfg.zeta_rate).unwrap().sample(rng);
    let coeff_dist = Gamma::new(zeta, 1.0).unwrap();
    let m = knots.n_basis();
    let values = (0..n_states * m)
        .map(|_| coeff_dist.sample(rng).max(f64::MIN_POSITIVE).ln())
        .collect();
    let g1 = Gamma::new(cfg.eps1, 1.0).unwrap();
    let g2 = Gamma::new(cfg.eps2, 1.0).unwrap();
    HmmParams {
        coeffs: SplineCoeffs::new(n_states, m, values).unwrap(),
        knots,
        delta: (0..n_states).map(|_| g2.sample(rng)).collect(),
        gamma: (0..n_states * n_states).map(|_| g1.sample(rng)).collect(),
        zeta,
        zero_weights: Some((0..n_states).map(|_| rng.random()).collect()),
    }
}

#[test]
fn prior_draws_have_finite_log_prior_and_uniform_k() {
    let cfg = PriorConfig {
        k_max: 12,
        ..PriorConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 4000;
    let mut ks = Vec::with_capacity(n);
    for _ in 0..n {
        let p = prior_draw(&mut rng, &cfg, 3);
        assert!(log_prior(&p, &cfg).is_finite());
        ks.push(p.knots.k() as f64);
    }
    let mean = ks.iter().sum::<f64>() / n as f64;
    let var = ks.iter().map(|k| (k - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let expected = (2 + cfg.k_max) as f64 / 2.0;
    assert!((mean - expected).abs() < 3.0 * (var / n as f64).sqrt(), "mean K {mean}");
}

#[test]
fn leaving_the_support_gives_minus_infinity() {
    let cfg = PriorConfig {
        k_max: 6,
        ..PriorConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let base = prior_draw(&mut rng, &cfg, 2);
    assert!(log_prior(&base, &cfg).is_finite());

    let mut p = base.clone();
    p.zeta = -0.5;
    assert_eq!(log_prior(&p, &cfg), f64::NEG_INFINITY);

    let mut p = base.clone();
    p.gamma[1] = -1.0;
    assert_eq!(log_prior(&p, &cfg), f64::NEG_INFINITY);

    let mut p = base.clone();
    p.delta[0] = -1e-3;
    assert_eq!(log_prior(&p, &cfg), f64::NEG_INFINITY);

    let mut p = base.clone();
    p.zero_weights = Some(vec![0.5, 1.5]);
    assert_eq!(log_prior(&p, &cfg), f64::NEG_INFINITY);

    // More interior knots than k_max allows.
    let mut p = base;
    p.knots = KnotConfig::uniform(-2.0, 5.0, 7).unwrap();
    p.coeffs = SplineCoeffs::new(2, 11, vec![0.0; 22]).unwrap();
    assert_eq!(log_prior(&p, &cfg), f64::NEG_INFINITY);
}
