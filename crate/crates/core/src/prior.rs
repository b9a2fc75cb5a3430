//! Priors on the unconstrained parameters and chain initialization.
//!
//! * `K` uniform on `{2, ..., k_max}`; interior knots are the order
//!   statistics of `K` uniforms on `[a, b]`, density `K! / (b - a)^K`.
//! * every `exp(a~_ij) ~ Gamma(zeta, 1)`, i.e. `a~_ij` is log-gamma, which
//!   puts a symmetric Dirichlet(zeta) on each simplex row.
//! * `gamma~_ij ~ Gamma(eps1, 1)` and `delta~_i ~ Gamma(eps2, 1)`.
//! * `zeta ~ Gamma(zeta_shape, zeta_rate)`.
//! * zero weights, when present, are uniform on `[0, 1]`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::hmm::{Dataset, HmmParams};
use crate::splines::{KnotConfig, SplineCoeffs};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PriorConfig {
    pub k_max: usize,
    pub eps1: f64,
    pub eps2: f64,
    pub zeta_shape: f64,
    pub zeta_rate: f64,
    /// Two-state chains with one switching probability: the transition
    /// weights are `[g0, g1, g1, g0]` and only the first row carries a prior.
    pub tied_transitions: bool,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            k_max: 50,
            eps1: 1.0,
            eps2: 1.0,
            zeta_shape: 1.0,
            zeta_rate: 1.0,
            tied_transitions: false,
        }
    }
}

impl PriorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_max < 2 {
            return Err(Error::Config("k_max must be at least 2".into()));
        }
        for (name, v) in [
            ("eps1", self.eps1),
            ("eps2", self.eps2),
            ("zeta_shape", self.zeta_shape),
            ("zeta_rate", self.zeta_rate),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// `log Gamma(x; shape, rate)` density; `-inf` outside `x > 0`.
pub fn log_gamma_density(x: f64, shape: f64, rate: f64) -> f64 {
    if !x.is_finite() || x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * x.ln() - rate * x
}

/// Log density of `a~` when `exp(a~) ~ Gamma(zeta, 1)`.
pub fn log_loggamma_density(a: f64, zeta: f64) -> f64 {
    zeta * a - a.exp() - ln_gamma(zeta)
}

/// `log f(K) + log f(R_K | K)`.
pub fn log_knot_prior(k: usize, a: f64, b: f64, k_max: usize) -> f64 {
    if k < 2 || k > k_max {
        return f64::NEG_INFINITY;
    }
    -((k_max - 1) as f64).ln() + ln_gamma(k as f64 + 1.0) - k as f64 * (b - a).ln()
}

/// `log f(A~ | K, zeta)` summed over all entries.
pub fn log_coeff_prior(coeffs: &[f64], zeta: f64) -> f64 {
    let lg = ln_gamma(zeta);
    coeffs.iter().map(|&a| zeta * a - a.exp()).sum::<f64>() - lg * coeffs.len() as f64
}

fn log_weights_prior(w: &[f64], shape: f64) -> f64 {
    w.iter().map(|&x| log_gamma_density(x, shape, 1.0)).sum()
}

pub(crate) fn log_delta_prior(params: &HmmParams, cfg: &PriorConfig) -> f64 {
    log_weights_prior(&params.delta, cfg.eps2)
}

pub(crate) fn log_gamma_prior(params: &HmmParams, cfg: &PriorConfig) -> f64 {
    if cfg.tied_transitions {
        log_weights_prior(&params.gamma[..2], cfg.eps1)
    } else {
        log_weights_prior(&params.gamma, cfg.eps1)
    }
}

/// Mirrors the first transition row into the second: `[g0, g1, g1, g0]`.
pub(crate) fn tie_transitions(gamma: &mut [f64]) {
    gamma[2] = gamma[1];
    gamma[3] = gamma[0];
}

pub(crate) fn log_zero_weight_prior(params: &HmmParams) -> f64 {
    match &params.zero_weights {
        Some(w) if w.iter().any(|x| !(0.0..=1.0).contains(x)) => f64::NEG_INFINITY,
        _ => 0.0,
    }
}

/// Joint log prior of all unconstrained parameters. Returns `-inf` for
/// states outside the support instead of an error.
pub fn log_prior(params: &HmmParams, cfg: &PriorConfig) -> f64 {
    let knots = &params.knots;
    let lp = log_knot_prior(knots.k(), knots.a(), knots.b(), cfg.k_max)
        + log_gamma_density(params.zeta, cfg.zeta_shape, cfg.zeta_rate)
        + log_coeff_prior(params.coeffs.values(), params.zeta)
        + log_delta_prior(params, cfg)
        + log_gamma_prior(params, cfg)
        + log_zero_weight_prior(params);
    if lp.is_nan() {
        f64::NEG_INFINITY
    } else {
        lp
    }
}

/// Options for [`init_state`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InitOptions {
    /// Per-state location hints. State `i` starts from the pooled data
    /// histogram shifted so its mean sits at `anchors[i]`.
    pub anchors: Option<Vec<f64>>,
    /// Add a zero atom with a weight per state.
    pub zero_inflated: bool,
    /// Half-width of the moving average used to group time points by local
    /// level when no anchors are given.
    pub smoothing_half_width: usize,
    /// Starting number of interior knots; drawn at random when unset.
    pub initial_knots: Option<usize>,
    /// Baum-Welch iterations refining the starting weights, transitions and
    /// zero weights with the knots held fixed.
    pub em_iters: usize,
}

impl Default for InitOptions {
    fn default() -> Self {
        Self {
            anchors: None,
            zero_inflated: false,
            smoothing_half_width: 2,
            initial_knots: None,
            em_iters: 0,
        }
    }
}

const INIT_K_CAP: usize = 10;
const DIAGONAL_BOOST: f64 = 5.0;

/// A valid starting point for a chain with `n_states` states.
pub fn init_state(
    data: &Dataset,
    n_states: usize,
    cfg: &PriorConfig,
    seed: u64,
    opts: &InitOptions,
) -> Result<HmmParams> {
    if n_states == 0 {
        return Err(Error::InvalidParams("at least one state is required".into()));
    }
    cfg.validate()?;
    if cfg.tied_transitions && n_states != 2 {
        return Err(Error::Config("tied transitions need exactly two states".into()));
    }
    if let Some(anchors) = &opts.anchors {
        if anchors.len() != n_states {
            return Err(Error::InvalidParams(format!(
                "{} anchors given for {n_states} states",
                anchors.len()
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (a, b) = data.bounds();
    let k = match opts.initial_knots {
        Some(k) => k.clamp(2, cfg.k_max),
        None => rng.random_range(2..=INIT_K_CAP.min(cfg.k_max)),
    };

    let continuous: Vec<f64> = data
        .observed()
        .filter(|&y| !(opts.zero_inflated && y == 0.0))
        .collect();
    let knots = quantile_knots(&continuous, a, b, k)?;

    let groups = group_observations(data, n_states, opts);
    let mut rows = Vec::with_capacity(n_states);
    let mut zero_weights = Vec::with_capacity(n_states);
    for group in &groups {
        let (zeros, positive): (Vec<f64>, Vec<f64>) = group
            .iter()
            .partition(|&&y| opts.zero_inflated && y == 0.0);
        let row = fit_mixture_weights(&knots, &positive);
        let mean = row.iter().map(|p| p.ln()).sum::<f64>() / row.len() as f64;
        rows.push(row.iter().map(|p| p.ln() - mean).collect::<Vec<f64>>());
        let frac = if group.is_empty() {
            0.5
        } else {
            zeros.len() as f64 / group.len() as f64
        };
        zero_weights.push(frac.clamp(0.02, 0.98));
    }

    let mut gamma = vec![1.0; n_states * n_states];
    for i in 0..n_states {
        gamma[i * n_states + i] = DIAGONAL_BOOST;
    }
    let mut params = HmmParams {
        knots,
        coeffs: SplineCoeffs::from_rows(&rows)?,
        delta: vec![1.0; n_states],
        gamma,
        zeta: 1.0,
        zero_weights: opts.zero_inflated.then_some(zero_weights),
    };
    if opts.em_iters > 0 {
        baum_welch(&mut params, data, opts.em_iters)?;
    }
    if cfg.tied_transitions {
        let g = &mut params.gamma;
        let (stay, switch) = (0.5 * (g[0] + g[3]), 0.5 * (g[1] + g[2]));
        g[0] = stay;
        g[1] = switch;
        tie_transitions(g);
    }
    params.validate()?;
    Ok(params)
}

/// Interior knots at equally spaced quantiles of `values`, falling back to
/// equal spacing when ties make the quantiles collide.
fn quantile_knots(values: &[f64], a: f64, b: f64, k: usize) -> Result<KnotConfig> {
    if values.len() > k {
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let knots: Vec<f64> = (1..=k)
            .map(|j| {
                let pos = j as f64 / (k + 1) as f64 * (n - 1) as f64;
                let lo = pos.floor() as usize;
                let frac = pos - lo as f64;
                let hi = (lo + 1).min(n - 1);
                sorted[lo] * (1.0 - frac) + sorted[hi] * frac
            })
            .collect();
        let min_gap = 1e-3 * (b - a);
        let ok = knots.first().is_some_and(|&r| r - a > min_gap)
            && knots.last().is_some_and(|&r| b - r > min_gap)
            && knots.windows(2).all(|w| w[1] - w[0] > min_gap);
        if ok {
            return KnotConfig::new(a, b, knots);
        }
    }
    KnotConfig::uniform(a, b, k)
}

/// Splits the observed values into one group per state.
fn group_observations(data: &Dataset, n_states: usize, opts: &InitOptions) -> Vec<Vec<f64>> {
    let observed: Vec<(usize, f64)> = (0..data.len())
        .filter_map(|t| data.get(t).map(|y| (t, y)))
        .collect();
    if observed.is_empty() {
        return vec![Vec::new(); n_states];
    }
    let (a, b) = data.bounds();
    if let Some(anchors) = &opts.anchors {
        let mean = observed.iter().map(|p| p.1).sum::<f64>() / observed.len() as f64;
        return anchors
            .iter()
            .map(|&m| {
                observed
                    .iter()
                    .map(|&(_, y)| {
                        if opts.zero_inflated && y == 0.0 {
                            0.0
                        } else {
                            (y + m - mean).clamp(a, b)
                        }
                    })
                    .collect()
            })
            .collect();
    }
    let h = opts.smoothing_half_width;
    let values: Vec<f64> = observed.iter().map(|p| p.1).collect();
    let mut level: Vec<(f64, usize)> = (0..values.len())
        .map(|i| {
            let lo = i.saturating_sub(h);
            let hi = (i + h + 1).min(values.len());
            let w = &values[lo..hi];
            (w.iter().sum::<f64>() / w.len() as f64, i)
        })
        .collect();
    level.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
    let n = level.len();
    (0..n_states)
        .map(|g| {
            let lo = g * n / n_states;
            let hi = (g + 1) * n / n_states;
            level[lo..hi].iter().map(|&(_, i)| values[i]).collect()
        })
        .collect()
}

/// Mixture weights over the normalized bases fitted to `values` by a few EM
/// iterations, with a small pseudo-count so no weight is zero.
fn fit_mixture_weights(knots: &KnotConfig, values: &[f64]) -> Vec<f64> {
    let nb = knots.n_basis();
    let mut w = vec![1.0 / nb as f64; nb];
    if values.is_empty() {
        return w;
    }
    let basis: Vec<(usize, [f64; 4])> = values.iter().map(|&y| knots.local_normalized(y)).collect();
    let pseudo = 0.5;
    for _ in 0..50 {
        let mut acc = vec![pseudo; nb];
        for (first, vals) in &basis {
            let dens: f64 = (0..4).map(|j| w[first + j] * vals[j]).sum();
            if dens > 0.0 {
                for j in 0..4 {
                    acc[first + j] += w[first + j] * vals[j] / dens;
                }
            }
        }
        let total: f64 = acc.iter().sum();
        w = acc.into_iter().map(|v| v / total).collect();
    }
    w
}

/// Fixed-knot EM for the basis weights, initial distribution, transition
/// matrix and zero weights. Small pseudo-counts keep every entry positive.
fn baum_welch(params: &mut HmmParams, data: &Dataset, iters: usize) -> Result<()> {
    const PSEUDO: f64 = 1e-2;
    let (n, ns) = (data.len(), params.n_states());
    let nb = params.knots.n_basis();
    let zi = params.zero_weights.is_some();
    let zero: Vec<bool> = (0..n).map(|t| zi && data.get(t) == Some(0.0)).collect();
    let local: Vec<Option<(usize, [f64; 4])>> = (0..n)
        .map(|t| match data.get(t) {
            Some(y) if !zero[t] => Some(params.knots.local_normalized(y)),
            _ => None,
        })
        .collect();
    let mut a = params.coeffs.simplex();
    let mut gamma = params.gamma_rows();
    let mut delta = params.delta_probs();
    let mut w = params.zero_weights.clone().unwrap_or_else(|| vec![0.0; ns]);

    let mut emis = vec![0.0; n * ns];
    let mut alpha = vec![0.0; n * ns];
    let mut beta = vec![0.0; n * ns];
    let mut scale = vec![0.0; n];
    for _ in 0..iters {
        for t in 0..n {
            for i in 0..ns {
                emis[t * ns + i] = match local[t] {
                    _ if zero[t] => w[i],
                    Some((f, v)) => (1.0 - w[i]) * (0..4).map(|j| a[i][f + j] * v[j]).sum::<f64>(),
                    None => 1.0,
                };
            }
        }
        for t in 0..n {
            let mut c = 0.0;
            for j in 0..ns {
                let prior = if t == 0 {
                    delta[j]
                } else {
                    (0..ns).map(|i| alpha[(t - 1) * ns + i] * gamma[i][j]).sum()
                };
                alpha[t * ns + j] = prior * emis[t * ns + j];
                c += alpha[t * ns + j];
            }
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::Underflow(t));
            }
            alpha[t * ns..(t + 1) * ns].iter_mut().for_each(|x| *x /= c);
            scale[t] = c;
        }
        beta[(n - 1) * ns..].fill(1.0);
        for t in (0..n - 1).rev() {
            for i in 0..ns {
                beta[t * ns + i] = (0..ns)
                    .map(|j| gamma[i][j] * emis[(t + 1) * ns + j] * beta[(t + 1) * ns + j])
                    .sum::<f64>()
                    / scale[t + 1];
            }
        }

        let mut acc_a = vec![vec![PSEUDO; nb]; ns];
        let mut acc_g = vec![vec![PSEUDO; ns]; ns];
        let (mut zeros, mut seen) = (vec![PSEUDO; ns], vec![2.0 * PSEUDO; ns]);
        for t in 0..n {
            for i in 0..ns {
                let post = alpha[t * ns + i] * beta[t * ns + i];
                if t > 0 {
                    for j in 0..ns {
                        acc_g[j][i] += alpha[(t - 1) * ns + j] * gamma[j][i] * emis[t * ns + i] * beta[t * ns + i]
                            / scale[t];
                    }
                }
                if data.get(t).is_some() {
                    seen[i] += post;
                    if zero[t] {
                        zeros[i] += post;
                    }
                }
                if let Some((f, v)) = local[t] {
                    let dens: f64 = (0..4).map(|j| a[i][f + j] * v[j]).sum();
                    if dens > 0.0 {
                        for j in 0..4 {
                            acc_a[i][f + j] += post * a[i][f + j] * v[j] / dens;
                        }
                    }
                }
            }
        }
        let normalize = |row: &mut Vec<f64>| {
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|x| *x /= s);
        };
        delta = (0..ns).map(|i| alpha[i] * beta[i] + PSEUDO).collect();
        normalize(&mut delta);
        for (row, acc) in a.iter_mut().zip(acc_a) {
            *row = acc;
            normalize(row);
        }
        for (row, acc) in gamma.iter_mut().zip(acc_g) {
            *row = acc;
            normalize(row);
        }
        if zi {
            w = zeros.iter().zip(&seen).map(|(z, s)| (z / s).clamp(0.01, 0.99)).collect();
        }
    }
    let rows: Vec<Vec<f64>> = a
        .iter()
        .map(|r| {
            let logs: Vec<f64> = r.iter().map(|p| p.ln()).collect();
            let mean = logs.iter().sum::<f64>() / logs.len() as f64;
            logs.iter().map(|l| l - mean).collect()
        })
        .collect();
    params.coeffs = SplineCoeffs::from_rows(&rows)?;
    params.gamma = gamma.concat();
    params.delta = delta;
    if zi {
        params.zero_weights = Some(w);
    }
    Ok(())
}
