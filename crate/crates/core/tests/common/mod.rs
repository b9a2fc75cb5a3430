#![allow(dead_code)]

use statrs::distribution::{ChiSquared, ContinuousCDF};

/// One-sample Kolmogorov-Smirnov p-value of `u` against Uniform(0, 1),
/// using the asymptotic Kolmogorov distribution with the usual
/// small-sample correction.
pub fn ks_uniform_p(u: &[f64]) -> f64 {
    let mut v = u.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let d = v
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let lo = x - i as f64 / n;
            let hi = (i as f64 + 1.0) / n - x;
            lo.max(hi)
        })
        .fold(0.0, f64::max);
    let lambda = (n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d;
    kolmogorov_survival(lambda)
}

/// `P(K > lambda)` for the Kolmogorov distribution.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut s = 0.0;
    for j in 1..200 {
        let j = j as f64;
        let term = 2.0 * (-1f64).powf(j - 1.0) * (-2.0 * j * j * lambda * lambda).exp();
        s += term;
        if term.abs() < 1e-16 {
            break;
        }
    }
    s.clamp(0.0, 1.0)
}

/// Pearson chi-square p-value of observed counts against expected
/// probabilities.
pub fn chi_square_p(counts: &[usize], probs: &[f64]) -> f64 {
    let n: usize = counts.iter().sum();
    let stat: f64 = counts
        .iter()
        .zip(probs)
        .map(|(&c, &p)| {
            let e = p * n as f64;
            (c as f64 - e).powi(2) / e
        })
        .sum();
    let dist = ChiSquared::new((counts.len() - 1) as f64).unwrap();
    1.0 - dist.cdf(stat)
}

use splinehmm::hmm::{Dataset, HmmParams};
use splinehmm::prior::{InitOptions, PriorConfig};
use splinehmm::sampler::{run_chain, ChainConfig, Schedule, Trace, TuningParams};

/// A chain on a single all-missing time point, so the likelihood is flat
/// and the draws follow the prior.
pub fn empty_chain(k_max: usize, zero_inflated: bool, tied: bool, sweeps: usize, thin: usize, seed: u64) -> Trace {
    let data = Dataset::fully_missing(1, 0.0, 1.0).unwrap();
    let cfg = ChainConfig {
        prior: PriorConfig {
            k_max,
            tied_transitions: tied,
            ..PriorConfig::default()
        },
        tuning: TuningParams::for_bounds(0.0, 1.0),
        schedule: Schedule {
            burn_in: 20_000,
            iters: sweeps,
            thin,
            check_every: Some(1000),
        },
        init: InitOptions {
            zero_inflated,
            ..InitOptions::default()
        },
    };
    run_chain(&data, 2, &cfg, seed).unwrap()
}

/// Emission of state `i` at time `t`: one when missing, the zero weight at
/// an exact zero under zero inflation, otherwise the (scaled) spline density.
pub fn emission(params: &HmmParams, data: &Dataset, t: usize, i: usize) -> f64 {
    let Some(y) = data.get(t) else {
        return 1.0;
    };
    match &params.zero_weights {
        Some(w) if y == 0.0 => w[i],
        Some(w) => (1.0 - w[i]) * params.spline_density(i, y).unwrap(),
        None => params.spline_density(i, y).unwrap(),
    }
}

/// Brute force over all `N^n` state paths: log-likelihood, most probable
/// path and smoothed marginals.
pub fn enumerate_paths(params: &HmmParams, data: &Dataset) -> (f64, Vec<usize>, Vec<Vec<f64>>) {
    let (n, ns) = (data.len(), params.n_states());
    let delta = params.delta_probs();
    let gamma = params.gamma_rows();
    let e: Vec<Vec<f64>> = (0..n).map(|t| (0..ns).map(|i| emission(params, data, t, i)).collect()).collect();
    let mut total = 0.0;
    let mut best = (f64::NEG_INFINITY, Vec::new());
    let mut marg = vec![vec![0.0; ns]; n];
    let mut path = vec![0usize; n];
    for code in 0..ns.pow(n as u32) {
        let mut c = code;
        for x in path.iter_mut() {
            *x = c % ns;
            c /= ns;
        }
        let mut p = delta[path[0]] * e[0][path[0]];
        for t in 1..n {
            p *= gamma[path[t - 1]][path[t]] * e[t][path[t]];
        }
        total += p;
        if p > best.0 {
            best = (p, path.clone());
        }
        for t in 0..n {
            marg[t][path[t]] += p;
        }
    }
    for row in &mut marg {
        row.iter_mut().for_each(|v| *v /= total);
    }
    (total.ln(), best.1, marg)
}

/// Composite Simpson rule, exact for piecewise cubics when `breaks`
/// contains every breakpoint.
pub fn simpson(breaks: &[f64], f: impl Fn(f64) -> f64) -> f64 {
    let mut total = 0.0;
    for w in breaks.windows(2) {
        let n = 8;
        let h = (w[1] - w[0]) / n as f64;
        let mut s = f(w[0]) + f(w[1]);
        for j in 1..n {
            s += if j % 2 == 1 { 4.0 } else { 2.0 } * f(w[0] + h * j as f64);
        }
        total += s * h / 3.0;
    }
    total
}
