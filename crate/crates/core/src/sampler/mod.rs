//! Reversible-jump MCMC over knot configurations and HMM parameters.
//!
//! One sweep runs, in order: a knot relocation, a joint random walk on the
//! unconstrained spline coefficients, a log-scale walk on `zeta`, log-scale
//! walks on the initial-distribution and transition weights, a logit walk
//! on the zero weights when present, and finally a birth or death of a
//! knot chosen with probabilities `b_K` and `1 - b_K`.
//!
//! Birth of a knot `r_c` draws an existing knot uniformly as anchor and
//! samples `r_c` from a normal centred there with spread
//! `(r_{b+1} - r_{b-1})^alpha`, truncated to `[a, b]`. A death cannot tell
//! which anchor produced the knot it removes, so both directions use the
//! mixture of all anchor densities in the acceptance ratio.

mod trace;
pub mod truncnorm;

pub use trace::{fmt_num, Draw, MoveStats, Trace};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use statrs::function::gamma::digamma;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hmm::{BasisCache, Dataset, HmmParams, Workspace};
use crate::prior::{self, InitOptions, PriorConfig};
use crate::splines::{self, KnotConfig};

/// How the spline coefficients are blocked in the random-walk update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoeffBlocking {
    /// One proposal for the whole coefficient matrix.
    Joint,
    /// One proposal per state row.
    PerState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningParams {
    /// Knot relocation sd.
    pub tau1: f64,
    /// Coefficient random-walk sd.
    pub tau2: f64,
    /// Log-scale sd for `zeta`.
    pub tau3: f64,
    /// Log-scale sd for the initial-distribution weights.
    pub tau4: f64,
    /// Log-scale sd for the transition weights.
    pub tau5: f64,
    /// Logit-scale sd for the zero weights.
    pub tau_w: f64,
    /// Log-scale sd of the joint `zeta`/coefficient rescaling move; zero
    /// disables the move.
    pub tau_rescale: f64,
    /// Exponent of the birth proposal spread.
    pub alpha: f64,
    /// Adapt the scales during burn-in.
    pub adapt: bool,
    pub target_accept: f64,
    pub target_accept_scalar: f64,
    pub coeff_blocking: CoeffBlocking,
}

impl Default for TuningParams {
    fn default() -> Self {
        Self {
            tau1: 0.07,
            tau2: 0.1,
            tau3: 0.5,
            tau4: 1.6,
            tau5: 0.14,
            tau_w: 0.5,
            tau_rescale: 0.5,
            alpha: 1.8,
            adapt: true,
            target_accept: 0.25,
            target_accept_scalar: 0.44,
            coeff_blocking: CoeffBlocking::Joint,
        }
    }
}

impl TuningParams {
    /// Defaults with the knot step scaled to the support width.
    pub fn for_bounds(a: f64, b: f64) -> Self {
        Self {
            tau1: 0.02 * (b - a),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("tau1", self.tau1),
            ("tau2", self.tau2),
            ("tau3", self.tau3),
            ("tau4", self.tau4),
            ("tau5", self.tau5),
            ("tau_w", self.tau_w),
            ("tau_rescale", self.tau_rescale),
            ("alpha", self.alpha),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be non-negative, got {v}")));
            }
        }
        for t in [self.target_accept, self.target_accept_scalar] {
            if !(t > 0.0 && t < 1.0) {
                return Err(Error::Config(format!("acceptance target {t} is not in (0, 1)")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    pub burn_in: usize,
    pub iters: usize,
    pub thin: usize,
    /// Recompute the cached log-likelihood and log-prior every this many
    /// sweeps and fail if they drifted by more than `1e-8`.
    pub check_every: Option<usize>,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            burn_in: 50_000,
            iters: 50_000,
            thin: 10,
            check_every: Some(1000),
        }
    }
}

/// Everything a chain needs besides the data and the state count.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ChainConfig {
    pub prior: PriorConfig,
    pub tuning: TuningParams,
    pub schedule: Schedule,
    pub init: InitOptions,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MoveKind {
    KnotMove,
    Coeffs,
    Zeta,
    Delta,
    Gamma,
    ZeroWeights,
    ZetaRescale,
    Birth,
    Death,
}

impl MoveKind {
    pub const ALL: [MoveKind; 9] = [
        MoveKind::KnotMove,
        MoveKind::Coeffs,
        MoveKind::Zeta,
        MoveKind::Delta,
        MoveKind::Gamma,
        MoveKind::ZeroWeights,
        MoveKind::ZetaRescale,
        MoveKind::Birth,
        MoveKind::Death,
    ];

    fn index(self) -> usize {
        self as usize
    }
}

/// Proposed/accepted tallies per move type.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MoveCounters {
    proposed: [u64; 9],
    accepted: [u64; 9],
}

impl MoveCounters {
    fn record(&mut self, kind: MoveKind, accepted: bool) {
        self.proposed[kind.index()] += 1;
        if accepted {
            self.accepted[kind.index()] += 1;
        }
    }

    pub fn proposed(&self, kind: MoveKind) -> u64 {
        self.proposed[kind.index()]
    }

    pub fn accepted(&self, kind: MoveKind) -> u64 {
        self.accepted[kind.index()]
    }

    pub fn rejected(&self, kind: MoveKind) -> u64 {
        self.proposed(kind) - self.accepted(kind)
    }

    pub fn rate(&self, kind: MoveKind) -> f64 {
        let p = self.proposed(kind);
        if p == 0 {
            f64::NAN
        } else {
            self.accepted(kind) as f64 / p as f64
        }
    }
}

/// The current parameters with cached log-likelihood and log-prior.
#[derive(Debug, Clone)]
pub struct McmcState {
    pub params: HmmParams,
    pub loglik: f64,
    pub logprior: f64,
    pub counters: MoveCounters,
}

/// A fully evaluated candidate state.
#[derive(Debug, Clone)]
pub struct Proposal {
    pub params: HmmParams,
    pub loglik: f64,
    pub logprior: f64,
    /// Log acceptance ratio (before taking `min(0, .)`).
    pub log_ratio: f64,
    /// New basis cache when the knots changed.
    cache: Option<BasisCache>,
}

/// Birth probability `b_K`; death happens with `1 - b_K`.
pub fn birth_probability(k: usize, k_max: usize) -> f64 {
    if k == 2 {
        1.0
    } else if k >= 3 && k < k_max {
        0.5
    } else {
        0.0
    }
}

/// Spread of the birth proposal anchored at interior knot `b`.
fn birth_spread(knots: &KnotConfig, b: usize, alpha: f64) -> f64 {
    let r = knots.interior();
    let left = if b == 0 { knots.a() } else { r[b - 1] };
    let right = if b + 1 == r.len() { knots.b() } else { r[b + 1] };
    (right - left).powf(alpha)
}

/// Log of the birth proposal density of `r_c`, mixed over all anchors.
pub fn log_birth_density(knots: &KnotConfig, r_c: f64, alpha: f64) -> f64 {
    let k = knots.k();
    let terms: Vec<f64> = (0..k)
        .map(|b| {
            let sd = birth_spread(knots, b, alpha);
            truncnorm::log_pdf(r_c, knots.interior()[b], sd, knots.a(), knots.b())
        })
        .collect();
    log_sum_exp(&terms) - (k as f64).ln()
}

pub fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Rough spread of `log X`, `X ~ Gamma(zeta, 1)`; the trigamma function
/// behaves like `1/zeta^2` near zero and `1/zeta` for large `zeta`.
fn rescale_spread(zeta: f64) -> f64 {
    (1.0 / (zeta * zeta) + 1.0 / zeta).sqrt()
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// A single Markov chain bound to one dataset.
pub struct Chain<'a> {
    data: &'a Dataset,
    prior: PriorConfig,
    tuning: TuningParams,
    state: McmcState,
    cache: BasisCache,
    ws: Workspace,
    rng: ChaCha8Rng,
    audit: Option<f64>,
}

impl<'a> Chain<'a> {
    pub fn new(
        data: &'a Dataset,
        params: HmmParams,
        prior: PriorConfig,
        tuning: TuningParams,
        seed: u64,
    ) -> Result<Self> {
        params.validate()?;
        prior.validate()?;
        tuning.validate()?;
        if prior.tied_transitions {
            let g = &params.gamma;
            if params.n_states() != 2 || g[2] != g[1] || g[3] != g[0] {
                return Err(Error::Config(
                    "tied transitions need two states with mirrored transition weights".into(),
                ));
            }
        }
        let (a, b) = data.bounds();
        if params.knots.a() > a || params.knots.b() < b {
            return Err(Error::InvalidData(
                "data bounds exceed the spline support".into(),
            ));
        }
        let cache = BasisCache::build(&params.knots, data);
        let mut ws = Workspace::default();
        let loglik = ws.log_likelihood(&params, data, &cache)?;
        let logprior = prior::log_prior(&params, &prior);
        if !logprior.is_finite() {
            return Err(Error::InvalidParams(
                "initial state lies outside the prior support".into(),
            ));
        }
        Ok(Self {
            data,
            prior,
            tuning,
            state: McmcState {
                params,
                loglik,
                logprior,
                counters: MoveCounters::default(),
            },
            cache,
            ws,
            rng: ChaCha8Rng::seed_from_u64(seed),
            audit: None,
        })
    }

    pub fn state(&self) -> &McmcState {
        &self.state
    }

    pub fn params(&self) -> &HmmParams {
        &self.state.params
    }

    pub fn tuning(&self) -> &TuningParams {
        &self.tuning
    }

    pub fn tuning_mut(&mut self) -> &mut TuningParams {
        &mut self.tuning
    }

    pub fn prior(&self) -> &PriorConfig {
        &self.prior
    }

    pub fn reset_counters(&mut self) {
        self.state.counters = MoveCounters::default();
    }

    /// After every move, recompute the caches from scratch and keep the
    /// largest discrepancy seen; read it back with [`Chain::audit_drift`].
    pub fn enable_audit(&mut self) {
        self.audit = Some(0.0);
    }

    pub fn audit_drift(&self) -> Option<f64> {
        self.audit
    }

    fn loglik_of(&mut self, params: &HmmParams, cache: &BasisCache) -> f64 {
        eval_loglik(&mut self.ws, self.data, params, cache)
    }

    /// Log-likelihood of `params` with the current knots (cached basis).
    fn loglik_same_knots(&mut self, params: &HmmParams) -> f64 {
        eval_loglik(&mut self.ws, self.data, params, &self.cache)
    }

    fn accept(&mut self, log_ratio: f64) -> bool {
        if log_ratio.is_nan() {
            return false;
        }
        let u: f64 = self.rng.random();
        u.ln() < log_ratio
    }

    fn finish(&mut self, kind: MoveKind, accepted: bool) -> bool {
        self.state.counters.record(kind, accepted);
        if self.audit.is_some() {
            let drift = self.cache_drift();
            let worst = self.audit.as_mut().expect("audit enabled");
            *worst = worst.max(drift);
        }
        accepted
    }

    /// Largest absolute difference between the cached log-likelihood and
    /// log-prior and a fresh recomputation.
    pub fn cache_drift(&mut self) -> f64 {
        let fresh_cache = BasisCache::build(&self.state.params.knots, self.data);
        let mut ws = Workspace::default();
        let ll = ws
            .log_likelihood(&self.state.params, self.data, &fresh_cache)
            .unwrap_or(f64::NEG_INFINITY);
        let lp = prior::log_prior(&self.state.params, &self.prior);
        let d_ll = (ll - self.state.loglik).abs();
        let d_lp = (lp - self.state.logprior).abs();
        if d_ll.is_nan() || d_lp.is_nan() {
            f64::INFINITY
        } else {
            d_ll.max(d_lp)
        }
    }

    /// Step (a): relocate one knot within the window between its neighbours.
    pub fn step_move_knot(&mut self) -> bool {
        let knots = &self.state.params.knots;
        let k = knots.k();
        let idx = self.rng.random_range(0..k);
        let r = knots.interior()[idx];
        let lo = if idx == 0 { knots.a() } else { knots.interior()[idx - 1] };
        let hi = if idx + 1 == k { knots.b() } else { knots.interior()[idx + 1] };
        let sd = self.tuning.tau1;
        if sd <= 0.0 {
            return self.finish(MoveKind::KnotMove, true);
        }
        let r_c = truncnorm::sample(&mut self.rng, r, sd, lo, hi);
        let accepted = match self.propose_knot_move(idx, r_c) {
            Some(p) => {
                let ok = self.accept(p.log_ratio);
                if ok {
                    self.commit(p);
                }
                ok
            }
            None => false,
        };
        self.finish(MoveKind::KnotMove, accepted)
    }

    /// Evaluates moving interior knot `idx` to `r_c`.
    pub fn propose_knot_move(&mut self, idx: usize, r_c: f64) -> Option<Proposal> {
        let knots = &self.state.params.knots;
        let k = knots.k();
        let r = knots.interior()[idx];
        let lo = if idx == 0 { knots.a() } else { knots.interior()[idx - 1] };
        let hi = if idx + 1 == k { knots.b() } else { knots.interior()[idx + 1] };
        if r_c == r {
            return Some(Proposal {
                params: self.state.params.clone(),
                loglik: self.state.loglik,
                logprior: self.state.logprior,
                log_ratio: 0.0,
                cache: None,
            });
        }
        let moved = knots.with_moved(idx, r_c).ok()?;
        let sd = self.tuning.tau1;
        let mut params = self.state.params.clone();
        params.knots = moved;
        let cache = BasisCache::build(&params.knots, self.data);
        let loglik = self.loglik_of(&params, &cache);
        let hastings = truncnorm::log_mass(r, sd, lo, hi) - truncnorm::log_mass(r_c, sd, lo, hi);
        Some(Proposal {
            log_ratio: loglik - self.state.loglik + hastings,
            logprior: self.state.logprior,
            loglik,
            params,
            cache: Some(cache),
        })
    }

    /// Step (b): Gaussian random walk on the unconstrained coefficients.
    pub fn step_update_coeffs(&mut self) -> bool {
        let tau = self.tuning.tau2;
        let n_states = self.state.params.n_states();
        let blocks: Vec<Vec<usize>> = match self.tuning.coeff_blocking {
            CoeffBlocking::Joint => vec![(0..n_states).collect()],
            CoeffBlocking::PerState => (0..n_states).map(|i| vec![i]).collect(),
        };
        let mut any = false;
        for rows in blocks {
            let mut params = self.state.params.clone();
            for &i in &rows {
                for v in params.coeffs.row_mut(i) {
                    let z: f64 = self.rng.sample(StandardNormal);
                    *v += tau * z;
                }
            }
            let zeta = params.zeta;
            let d_prior = prior::log_coeff_prior(params.coeffs.values(), zeta)
                - prior::log_coeff_prior(self.state.params.coeffs.values(), zeta);
            let loglik = self.loglik_same_knots(&params);
            let log_ratio = loglik - self.state.loglik + d_prior;
            let ok = self.accept(log_ratio);
            if ok {
                self.state.logprior += d_prior;
                self.state.loglik = loglik;
                self.state.params = params;
            }
            any |= ok;
            self.finish(MoveKind::Coeffs, ok);
        }
        any
    }

    /// Step (c): log-normal random walk on `zeta`.
    pub fn step_update_zeta(&mut self) -> bool {
        let z: f64 = self.rng.sample(StandardNormal);
        let zeta = self.state.params.zeta;
        let proposed = zeta * (self.tuning.tau3 * z).exp();
        let log_ratio = self.zeta_log_ratio(proposed);
        let ok = self.accept(log_ratio);
        if ok {
            self.state.params.zeta = proposed;
            self.state.logprior += log_ratio - (proposed / zeta).ln();
        }
        self.finish(MoveKind::Zeta, ok)
    }

    /// Log acceptance ratio for moving `zeta` to `proposed`, including the
    /// `zeta'/zeta` factor of the log-scale walk.
    pub fn zeta_log_ratio(&self, proposed: f64) -> f64 {
        let p = &self.state.params;
        let cfg = &self.prior;
        let coeffs = p.coeffs.values();
        prior::log_gamma_density(proposed, cfg.zeta_shape, cfg.zeta_rate)
            - prior::log_gamma_density(p.zeta, cfg.zeta_shape, cfg.zeta_rate)
            + prior::log_coeff_prior(coeffs, proposed)
            - prior::log_coeff_prior(coeffs, p.zeta)
            + (proposed / p.zeta).ln()
    }

    /// Joint move of `zeta` and all coefficients: `zeta' = zeta e^nu` and
    /// each coefficient is recentred and rescaled to the new log-gamma
    /// location and spread. Deterministic given `nu`, with Jacobian
    /// `s^M`, so the ratio is exact. Without it the sampler crawls through
    /// the funnel between small `zeta` and widely spread coefficients.
    pub fn step_rescale_zeta(&mut self) -> bool {
        let z: f64 = self.rng.sample(StandardNormal);
        let proposed = self.state.params.zeta * (self.tuning.tau_rescale * z).exp();
        let ok = match self.propose_rescale_zeta(proposed) {
            Some(p) => {
                let ok = self.accept(p.log_ratio);
                if ok {
                    self.state.params = p.params;
                    self.state.loglik = p.loglik;
                    self.state.logprior = p.logprior;
                }
                ok
            }
            None => false,
        };
        self.finish(MoveKind::ZetaRescale, ok)
    }

    pub fn propose_rescale_zeta(&mut self, proposed: f64) -> Option<Proposal> {
        let zeta = self.state.params.zeta;
        if !(proposed > 0.0 && proposed.is_finite()) {
            return None;
        }
        let s = rescale_spread(proposed) / rescale_spread(zeta);
        let (m0, m1) = (digamma(zeta), digamma(proposed));
        let mut params = self.state.params.clone();
        params.zeta = proposed;
        for v in params.coeffs.values_mut() {
            *v = m1 + s * (*v - m0);
        }
        if params.coeffs.values().iter().any(|v| !v.is_finite()) {
            return None;
        }
        let n_coeffs = params.coeffs.values().len() as f64;
        let logprior = prior::log_prior(&params, &self.prior);
        let loglik = self.loglik_same_knots(&params);
        let log_ratio = loglik - self.state.loglik + logprior - self.state.logprior
            + n_coeffs * s.ln()
            + (proposed / zeta).ln();
        Some(Proposal {
            params,
            loglik,
            logprior,
            log_ratio,
            cache: None,
        })
    }

    /// Step (d): log-normal random walk on every initial weight jointly.
    pub fn step_update_delta(&mut self) -> bool {
        let tau = self.tuning.tau4;
        let mut params = self.state.params.clone();
        let mut log_jac = 0.0;
        for d in params.delta.iter_mut() {
            let z: f64 = self.rng.sample(StandardNormal);
            *d *= (tau * z).exp();
            log_jac += tau * z;
        }
        let d_prior = prior::log_delta_prior(&params, &self.prior)
            - prior::log_delta_prior(&self.state.params, &self.prior);
        let loglik = self.loglik_same_knots(&params);
        let ok = self.accept(loglik - self.state.loglik + d_prior + log_jac);
        if ok {
            self.state.params = params;
            self.state.loglik = loglik;
            self.state.logprior += d_prior;
        }
        self.finish(MoveKind::Delta, ok)
    }

    /// Step (e): log-normal random walk on the transition weights, one
    /// proposal per row.
    pub fn step_update_gamma(&mut self) -> bool {
        let tau = self.tuning.tau5;
        let n = self.state.params.n_states();
        let tied = self.prior.tied_transitions;
        let mut any = false;
        for i in 0..if tied { 1 } else { n } {
            let mut params = self.state.params.clone();
            let mut log_jac = 0.0;
            for g in &mut params.gamma[i * n..(i + 1) * n] {
                let z: f64 = self.rng.sample(StandardNormal);
                *g *= (tau * z).exp();
                log_jac += tau * z;
            }
            if tied {
                prior::tie_transitions(&mut params.gamma);
            }
            let d_prior = prior::log_gamma_prior(&params, &self.prior)
                - prior::log_gamma_prior(&self.state.params, &self.prior);
            let loglik = self.loglik_same_knots(&params);
            let ok = self.accept(loglik - self.state.loglik + d_prior + log_jac);
            if ok {
                self.state.params = params;
                self.state.loglik = loglik;
                self.state.logprior += d_prior;
            }
            any |= ok;
            self.finish(MoveKind::Gamma, ok);
        }
        any
    }

    /// Logit-scale random walk on the zero weights (uniform prior).
    pub fn step_update_zero_weights(&mut self) -> bool {
        let Some(w) = self.state.params.zero_weights.clone() else {
            return false;
        };
        let tau = self.tuning.tau_w;
        let mut proposed = Vec::with_capacity(w.len());
        let mut log_jac = 0.0;
        for &x in &w {
            let z: f64 = self.rng.sample(StandardNormal);
            let y = logistic(logit(x) + tau * z);
            log_jac += (y * (1.0 - y)).ln() - (x * (1.0 - x)).ln();
            proposed.push(y);
        }
        let valid = proposed.iter().all(|&y| y > 0.0 && y < 1.0);
        let ok = valid && {
            let mut params = self.state.params.clone();
            params.zero_weights = Some(proposed);
            let loglik = self.loglik_same_knots(&params);
            let ok = self.accept(loglik - self.state.loglik + log_jac);
            if ok {
                self.state.params = params;
                self.state.loglik = loglik;
            }
            ok
        };
        self.finish(MoveKind::ZeroWeights, ok)
    }

    /// The trans-dimensional step: birth with probability `b_K`, else death.
    pub fn step_birth_death(&mut self) -> bool {
        let k = self.state.params.knots.k();
        let u: f64 = self.rng.random();
        if u < birth_probability(k, self.prior.k_max) {
            self.step_birth()
        } else {
            self.step_death()
        }
    }

    pub fn step_birth(&mut self) -> bool {
        let knots = &self.state.params.knots;
        let anchor = self.rng.random_range(0..knots.k());
        let sd = birth_spread(knots, anchor, self.tuning.alpha);
        let (a, b) = (knots.a(), knots.b());
        let r_c = truncnorm::sample(&mut self.rng, knots.interior()[anchor], sd, a, b);
        let n = self.state.params.n_states();
        let u: Vec<f64> = (0..n).map(|_| self.rng.random::<f64>()).collect();
        let accepted = match self.propose_birth(r_c, &u) {
            Some(p) => {
                let ok = self.accept(p.log_ratio);
                if ok {
                    self.commit(p);
                }
                ok
            }
            None => false,
        };
        self.finish(MoveKind::Birth, accepted)
    }

    pub fn step_death(&mut self) -> bool {
        let k = self.state.params.knots.k();
        let d = self.rng.random_range(0..k);
        let accepted = match self.propose_death(d) {
            Some(p) => {
                let ok = self.accept(p.log_ratio);
                if ok {
                    self.commit(p);
                }
                ok
            }
            None => false,
        };
        self.finish(MoveKind::Death, accepted)
    }

    /// Evaluates the birth of knot `r_c` with blend variables `u`. `None`
    /// means the move is rejected outright (invalid knot, singular map).
    pub fn propose_birth(&mut self, r_c: f64, u: &[f64]) -> Option<Proposal> {
        let current = &self.state.params;
        let k = current.knots.k();
        let b_k = birth_probability(k, self.prior.k_max);
        if b_k == 0.0 {
            return None;
        }
        let ins = splines::insert_knot_transform(&current.knots, &current.coeffs, r_c, u).ok()?;
        if !ins.log_jacobian.is_finite() {
            return None;
        }
        let q = log_birth_density(&current.knots, r_c, self.tuning.alpha);
        let mut params = current.clone();
        params.knots = ins.knots;
        params.coeffs = ins.coeffs;
        let logprior = prior::log_prior(&params, &self.prior);
        let cache = BasisCache::build(&params.knots, self.data);
        let loglik = self.loglik_of(&params, &cache);
        let d_next = 1.0 - birth_probability(k + 1, self.prior.k_max);
        let log_ratio = (loglik - self.state.loglik) + (logprior - self.state.logprior)
            + d_next.ln()
            - ((k + 1) as f64).ln()
            - b_k.ln()
            - q
            + ins.log_jacobian;
        Some(Proposal {
            params,
            loglik,
            logprior,
            log_ratio,
            cache: Some(cache),
        })
    }

    /// Evaluates the death of interior knot `d`. The ratio is the exact
    /// reciprocal of the birth that would recreate the current state.
    pub fn propose_death(&mut self, d: usize) -> Option<Proposal> {
        let current = &self.state.params;
        let k = current.knots.k();
        let d_k = 1.0 - birth_probability(k, self.prior.k_max);
        if d_k == 0.0 {
            return None;
        }
        let del = splines::delete_knot_transform(&current.knots, &current.coeffs, d).ok()?;
        if del.u.iter().any(|&u| !(u > 0.0 && u < 1.0)) || !del.log_jacobian.is_finite() {
            return None;
        }
        let b_prev = birth_probability(k - 1, self.prior.k_max);
        let q = log_birth_density(&del.knots, del.removed, self.tuning.alpha);
        let mut params = current.clone();
        params.knots = del.knots;
        params.coeffs = del.coeffs;
        let logprior = prior::log_prior(&params, &self.prior);
        let cache = BasisCache::build(&params.knots, self.data);
        let loglik = self.loglik_of(&params, &cache);
        let birth_log_ratio = (self.state.loglik - loglik) + (self.state.logprior - logprior)
            + d_k.ln()
            - (k as f64).ln()
            - b_prev.ln()
            - q
            - del.log_jacobian;
        Some(Proposal {
            params,
            loglik,
            logprior,
            log_ratio: -birth_log_ratio,
            cache: Some(cache),
        })
    }

    /// Makes `p` the current state.
    pub fn commit(&mut self, p: Proposal) {
        self.state.params = p.params;
        self.state.loglik = p.loglik;
        self.state.logprior = p.logprior;
        if let Some(cache) = p.cache {
            self.cache = cache;
        }
    }

    /// One full sweep of all moves.
    pub fn sweep(&mut self) {
        self.step_move_knot();
        self.step_update_coeffs();
        self.step_update_zeta();
        if self.tuning.tau_rescale > 0.0 {
            self.step_rescale_zeta();
        }
        self.step_update_delta();
        self.step_update_gamma();
        if self.state.params.zero_weights.is_some() {
            self.step_update_zero_weights();
        }
        self.step_birth_death();
    }

    /// Robbins-Monro update of the proposal scales from the acceptance
    /// counts accumulated since `before` was taken.
    fn adapt(&mut self, sweep: usize, before: &MoveCounters) {
        let gain = (sweep as f64 + 1.0).powf(-0.6);
        let after = &self.state.counters;
        let rate = |kind: MoveKind| {
            let p = after.proposed(kind) - before.proposed(kind);
            (p > 0).then(|| (after.accepted(kind) - before.accepted(kind)) as f64 / p as f64)
        };
        let block = self.tuning.target_accept;
        let scalar = self.tuning.target_accept_scalar;
        let width = self.state.params.knots.b() - self.state.params.knots.a();
        let t = &mut self.tuning;
        let scale = |tau: &mut f64, kind: MoveKind, target: f64, cap: f64| {
            if let Some(r) = rate(kind) {
                if *tau > 0.0 {
                    *tau = (*tau * (gain * (r - target)).exp()).clamp(1e-8, cap);
                }
            }
        };
        scale(&mut t.tau1, MoveKind::KnotMove, block, width);
        scale(&mut t.tau2, MoveKind::Coeffs, block, 10.0);
        scale(&mut t.tau3, MoveKind::Zeta, scalar, 10.0);
        scale(&mut t.tau4, MoveKind::Delta, block, 10.0);
        scale(&mut t.tau5, MoveKind::Gamma, block, 10.0);
        scale(&mut t.tau_w, MoveKind::ZeroWeights, block, 10.0);
        scale(&mut t.tau_rescale, MoveKind::ZetaRescale, scalar, 10.0);
    }

    fn snapshot(&self, sweep: usize) -> Draw {
        Draw {
            sweep,
            params: self.state.params.clone(),
            loglik: self.state.loglik,
            logprior: self.state.logprior,
        }
    }

    /// Runs `schedule` from the current state and returns the trace of
    /// thinned post-burn-in draws.
    pub fn run(&mut self, schedule: &Schedule) -> Result<Trace> {
        if schedule.thin == 0 {
            return Err(Error::Config("thin must be at least 1".into()));
        }
        let n_states = self.state.params.n_states();
        let mut draws = Vec::with_capacity(schedule.iters / schedule.thin + 1);
        if schedule.iters == 0 {
            draws.push(self.snapshot(0));
        }
        let total = schedule.burn_in + schedule.iters;
        for sweep in 1..=total {
            let before = self.state.counters.clone();
            self.sweep();
            if self.tuning.adapt && sweep <= schedule.burn_in {
                self.adapt(sweep, &before);
            }
            if sweep == schedule.burn_in {
                self.reset_counters();
            }
            if let Some(every) = schedule.check_every {
                if every > 0 && sweep % every == 0 {
                    let drift = self.cache_drift();
                    if drift.is_nan() || drift >= 1e-8 {
                        return Err(Error::Sampler {
                            sweep,
                            message: format!("cached log densities drifted by {drift:e}"),
                        });
                    }
                }
            }
            if sweep > schedule.burn_in && (sweep - schedule.burn_in).is_multiple_of(schedule.thin) {
                draws.push(self.snapshot(sweep));
            }
        }
        let acceptance = MoveKind::ALL
            .iter()
            .map(|&kind| MoveStats {
                kind,
                proposed: self.state.counters.proposed(kind),
                accepted: self.state.counters.accepted(kind),
            })
            .collect();
        Ok(Trace {
            n_states,
            draws,
            acceptance,
            tuning: self.tuning.clone(),
        })
    }
}

fn eval_loglik(ws: &mut Workspace, data: &Dataset, params: &HmmParams, cache: &BasisCache) -> f64 {
    ws.log_likelihood(params, data, cache)
        .unwrap_or(f64::NEG_INFINITY)
}

/// SplitMix64 finalizer, used to derive independent stream seeds.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut z = master ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Initializes a state with [`prior::init_state`] and runs one chain.
pub fn run_chain(data: &Dataset, n_states: usize, cfg: &ChainConfig, seed: u64) -> Result<Trace> {
    let init = prior::init_state(data, n_states, &cfg.prior, derive_seed(seed, 1), &cfg.init)?;
    run_chain_from(data, init, cfg, seed)
}

/// Runs one chain from a given starting state.
pub fn run_chain_from(data: &Dataset, init: HmmParams, cfg: &ChainConfig, seed: u64) -> Result<Trace> {
    let mut chain = Chain::new(
        data,
        init,
        cfg.prior.clone(),
        cfg.tuning.clone(),
        derive_seed(seed, 2),
    )?;
    chain.run(&cfg.schedule)
}

#[cfg(test)]
mod tests;
