//! With no observations the likelihood is flat, so a correct sampler must
//! reproduce every prior marginal. This exercises all acceptance ratios,
//! including the trans-dimensional ones, at once.

mod common;

use common::{chi_square_p, empty_chain, kolmogorov_survival, ks_uniform_p};
use statrs::distribution::{ContinuousCDF, Gamma};

const SWEEPS: usize = 1_000_000;
const THIN: usize = 250;
const K_MAX: usize = 8;

#[test]
fn kolmogorov_tail_matches_tabulated_values() {
    assert!((kolmogorov_survival(1.3581) - 0.05).abs() < 1e-3);
    assert!((kolmogorov_survival(1.6276) - 0.01).abs() < 1e-3);
}

#[test]
fn flat_likelihood_recovers_every_prior_marginal() {
    let trace = empty_chain(K_MAX, true, false, SWEEPS, THIN, 2024);
    let n = trace.len() as f64;
    assert_eq!(trace.len(), SWEEPS / THIN);

    // K uniform on {2, ..., K_max}. Births and deaths are rarely accepted
    // under the prior, so K decorrelates over ~2500 sweeps; the chi-square
    // test uses every tenth retained draw to stay near independence.
    let ks = trace.k_series();
    assert!(ks.iter().all(|k| (2..=K_MAX).contains(k)));
    let mut counts = vec![0usize; K_MAX - 1];
    for k in ks.iter().step_by(10) {
        counts[k - 2] += 1;
    }
    let p_k = chi_square_p(&counts, &[1.0 / (K_MAX - 1) as f64; K_MAX - 1]);
    println!("K counts {counts:?}, chi-square p = {p_k:.4}");
    assert!(p_k > 0.01);

    // Given K, interior knots are uniform order statistics on [0, 1]: the
    // smallest has CDF 1 - (1 - x)^K and the largest x^K.
    let first: Vec<f64> = trace
        .draws
        .iter()
        .map(|d| {
            let r = d.params.knots.interior();
            1.0 - (1.0 - r[0]).powi(r.len() as i32)
        })
        .collect();
    let last: Vec<f64> = trace
        .draws
        .iter()
        .map(|d| {
            let r = d.params.knots.interior();
            r[r.len() - 1].powi(r.len() as i32)
        })
        .collect();
    let (p_first, p_last) = (ks_uniform_p(&first), ks_uniform_p(&last));
    println!("knot PIT p = {p_first:.4} / {p_last:.4}");
    assert!(p_first > 0.01 && p_last > 0.01);

    // zeta ~ Gamma(1, 1).
    let zeta: Vec<f64> = trace.zeta_series().iter().map(|z| 1.0 - (-z).exp()).collect();
    let p_zeta = ks_uniform_p(&zeta);
    println!("zeta p = {p_zeta:.4}");
    assert!(p_zeta > 0.01);

    // exp(a~) ~ Gamma(zeta, 1) given zeta; one coefficient per draw.
    let coeff: Vec<f64> = trace
        .draws
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let c = &d.params.coeffs;
            let v = c.values()[i % c.values().len()];
            Gamma::new(d.params.zeta, 1.0).unwrap().cdf(v.exp())
        })
        .collect();
    let p_coeff = ks_uniform_p(&coeff);
    println!("coefficient p = {p_coeff:.4}");
    assert!(p_coeff > 0.01);

    // With two states and unit Dirichlet parameters each normalized
    // transition row entry and the initial distribution are Uniform(0, 1).
    let g0: Vec<f64> = trace.draws.iter().map(|d| d.params.gamma_rows()[0][0]).collect();
    let g1: Vec<f64> = trace.draws.iter().map(|d| d.params.gamma_rows()[1][1]).collect();
    let d0: Vec<f64> = trace.draws.iter().map(|d| d.params.delta_probs()[0]).collect();
    let (p_g0, p_g1, p_d) = (ks_uniform_p(&g0), ks_uniform_p(&g1), ks_uniform_p(&d0));
    println!("gamma p = {p_g0:.4} / {p_g1:.4}, delta p = {p_d:.4}");
    assert!(p_g0 > 0.01 && p_g1 > 0.01 && p_d > 0.01);

    // Zero weights have a uniform prior.
    let w: Vec<f64> = trace
        .draws
        .iter()
        .map(|d| d.params.zero_weights.as_ref().unwrap()[0])
        .collect();
    let p_w = ks_uniform_p(&w);
    println!("zero weight p = {p_w:.4} over {n} draws");
    assert!(p_w > 0.01);
}

#[test]
fn tied_switch_probability_is_uniform_under_the_prior() {
    let trace = empty_chain(6, false, true, 2_000_000, 100, 5);
    for d in &trace.draws {
        let g = d.params.gamma_rows();
        assert!((g[0][1] - g[1][0]).abs() < 1e-12);
    }
    let rho: Vec<f64> = trace.draws.iter().map(|d| d.params.gamma_rows()[0][1]).collect();
    let p = ks_uniform_p(&rho);
    println!("tied rho p = {p:.4}");
    assert!(p > 0.01);
}
