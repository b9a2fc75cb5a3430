//! Synthetic data with known truth.
//!
//! Model 1 and Model 3 use normal-mixture emissions. The three-state
//! "skewed/bimodal/skewed" preset and the zero-inflated generators use
//! spline emissions, sampled exactly by picking a basis function from the
//! coefficient simplex and inverting its CDF.

use std::io::Write;

use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hmm::HmmParams;
use crate::postproc::stationary_distribution;
use crate::splines::{KnotConfig, SplineCoeffs};

/// One normal component: weight, mean, standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub weight: f64,
    pub mean: f64,
    pub sd: f64,
}

/// A state's true emission density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Emission {
    NormalMixture { components: Vec<Component> },
    Spline { knots: KnotConfig, simplex: Vec<f64> },
}

impl Emission {
    /// Density of the continuous part at `y`.
    pub fn density(&self, y: f64) -> f64 {
        match self {
            Emission::NormalMixture { components } => components
                .iter()
                .map(|c| {
                    let z = (y - c.mean) / c.sd;
                    c.weight * (-0.5 * z * z).exp() / (c.sd * (2.0 * std::f64::consts::PI).sqrt())
                })
                .sum(),
            Emission::Spline { knots, simplex } => knots
                .eval_basis(y)
                .map(|b| b.dot(simplex))
                .unwrap_or(0.0),
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            Emission::NormalMixture { components } => {
                components.iter().map(|c| c.weight * c.mean).sum()
            }
            Emission::Spline { knots, simplex } => simplex
                .iter()
                .enumerate()
                .map(|(k, a)| a * knots.basis_moments(k).0)
                .sum(),
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Emission::NormalMixture { components } => {
                let idx = WeightedIndex::new(components.iter().map(|c| c.weight))
                    .expect("mixture weights are positive")
                    .sample(rng);
                let c = components[idx];
                Normal::new(c.mean, c.sd).expect("sd > 0").sample(rng)
            }
            Emission::Spline { knots, simplex } => {
                let k = WeightedIndex::new(simplex)
                    .expect("simplex row has positive mass")
                    .sample(rng);
                sample_basis(knots, k, rng.random())
            }
        }
    }
}

/// Inverts the CDF of normalized basis `k` at probability `p` by bisection
/// to `1e-10`.
pub fn sample_basis(knots: &KnotConfig, k: usize, p: f64) -> f64 {
    let t = knots.augmented();
    let (mut lo, mut hi) = (t[k], t[k + 4]);
    while hi - lo > 1e-10 {
        let mid = 0.5 * (lo + hi);
        if knots.basis_cdf(k, mid).unwrap_or(1.0) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Generating parameters of a simulated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthParams {
    pub delta: Vec<f64>,
    pub gamma: Vec<Vec<f64>>,
    pub emissions: Vec<Emission>,
    pub zero_weights: Option<Vec<f64>>,
}

impl TruthParams {
    pub fn n_states(&self) -> usize {
        self.delta.len()
    }

    /// True continuous density of state `i` at `y` (the oracle for KLD).
    pub fn density(&self, i: usize, y: f64) -> f64 {
        self.emissions[i].density(y)
    }

    fn validate(&self) -> Result<()> {
        let n = self.delta.len();
        let ok_prob = |v: &[f64]| {
            v.iter().all(|&x| (0.0..=1.0).contains(&x)) && (v.iter().sum::<f64>() - 1.0).abs() < 1e-9
        };
        if n == 0
            || self.emissions.len() != n
            || self.gamma.len() != n
            || self.gamma.iter().any(|r| r.len() != n || !ok_prob(r))
            || !ok_prob(&self.delta)
        {
            return Err(Error::InvalidParams("inconsistent generating parameters".into()));
        }
        if let Some(w) = &self.zero_weights {
            if w.len() != n || w.iter().any(|x| !(0.0..=1.0).contains(x)) {
                return Err(Error::InvalidParams("zero weights must lie in [0, 1]".into()));
            }
        }
        Ok(())
    }

    /// Builds spline truth from HMM parameters.
    pub fn from_params(params: &HmmParams) -> Self {
        Self {
            delta: params.delta_probs(),
            gamma: params.gamma_rows(),
            emissions: params
                .coeffs
                .simplex()
                .into_iter()
                .map(|simplex| Emission::Spline {
                    knots: params.knots.clone(),
                    simplex,
                })
                .collect(),
            zero_weights: params.zero_weights.clone(),
        }
    }
}

/// A simulated series with its hidden path and generating parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub params: TruthParams,
    pub states: Vec<usize>,
    pub obs: Vec<f64>,
}

impl GroundTruth {
    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }

    /// JSON sidecar with the generating parameters and the true path.
    pub fn write_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, self).map_err(|e| Error::Io(e.to_string()))
    }

    pub fn read_json<R: std::io::Read>(r: R) -> Result<Self> {
        serde_json::from_reader(r).map_err(|e| Error::Io(e.to_string()))
    }
}

/// Simulates `n` steps of an HMM with the given generating parameters.
pub fn simulate(truth: &TruthParams, n: usize, seed: u64) -> Result<GroundTruth> {
    truth.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = WeightedIndex::new(&truth.delta).map_err(|e| Error::InvalidParams(e.to_string()))?;
    let rows = truth
        .gamma
        .iter()
        .map(WeightedIndex::new)
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::InvalidParams(e.to_string()))?;
    let mut states = Vec::with_capacity(n);
    let mut obs = Vec::with_capacity(n);
    let mut x = 0;
    for t in 0..n {
        x = if t == 0 {
            init.sample(&mut rng)
        } else {
            rows[x].sample(&mut rng)
        };
        states.push(x);
        let zero = match &truth.zero_weights {
            Some(w) => rng.random::<f64>() < w[x],
            None => false,
        };
        obs.push(if zero {
            0.0
        } else {
            truth.emissions[x].sample(&mut rng)
        });
    }
    Ok(GroundTruth {
        params: truth.clone(),
        states,
        obs,
    })
}

fn symmetric_two_state(switch: f64) -> Vec<Vec<f64>> {
    vec![vec![1.0 - switch, switch], vec![switch, 1.0 - switch]]
}

fn mixture(parts: &[(f64, f64, f64)]) -> Emission {
    Emission::NormalMixture {
        components: parts
            .iter()
            .map(|&(weight, mean, sd)| Component { weight, mean, sd })
            .collect(),
    }
}

/// Generating parameters of Model 1: a unimodal and a bimodal state,
/// switching with probability 0.1.
pub fn model1_truth() -> TruthParams {
    TruthParams {
        delta: vec![0.5, 0.5],
        gamma: symmetric_two_state(0.1),
        emissions: vec![
            mixture(&[(1.0, -15.0, 11.0)]),
            mixture(&[(0.35, -5.0, 9.0), (0.65, 30.0, 10.0)]),
        ],
        zero_weights: None,
    }
}

pub fn simulate_model1(n: usize, seed: u64) -> Result<GroundTruth> {
    simulate(&model1_truth(), n, seed)
}

/// Generating parameters of Model 3: two trimodal states with slightly
/// shifted modes, switching with probability `rho`.
pub fn model3_truth(rho: f64) -> Result<TruthParams> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::InvalidParams(format!("rho = {rho} is not a probability")));
    }
    let third = 1.0 / 3.0;
    Ok(TruthParams {
        delta: vec![0.5, 0.5],
        gamma: symmetric_two_state(rho),
        emissions: vec![
            mixture(&[(third, -4.0, 1.0), (third, 0.0, 1.0), (third, 8.0, 1.0)]),
            mixture(&[(third, -3.0, 1.0), (third, 1.0, 1.0), (third, 9.0, 1.0)]),
        ],
        zero_weights: None,
    })
}

pub fn simulate_model3(n: usize, rho: f64, seed: u64) -> Result<GroundTruth> {
    simulate(&model3_truth(rho)?, n, seed)
}

/// Transition matrix of the three-state spline preset.
pub fn model2_gamma() -> Vec<Vec<f64>> {
    vec![
        vec![0.85, 0.10, 0.05],
        vec![0.075, 0.85, 0.075],
        vec![0.05, 0.10, 0.85],
    ]
}

fn normalized(row: &[f64]) -> Vec<f64> {
    let s: f64 = row.iter().sum();
    row.iter().map(|x| x / s).collect()
}

/// Three-state spline HMM on `[0, 10]` with a positively skewed, a
/// bimodal and a negatively skewed emission.
pub fn model2_params() -> HmmParams {
    let knots = KnotConfig::uniform(0.0, 10.0, 8).expect("valid preset");
    let eps = 1e-3;
    let rows = [
        vec![0.05, 0.30, 0.30, 0.15, 0.08, 0.05, 0.03, 0.02, 0.01, eps, eps, eps],
        vec![eps, 0.02, 0.10, 0.30, 0.10, 0.02, 0.02, 0.10, 0.30, 0.10, 0.02, eps],
        vec![eps, eps, eps, 0.01, 0.02, 0.03, 0.05, 0.08, 0.15, 0.30, 0.30, 0.05],
    ];
    let gamma = model2_gamma();
    HmmParams {
        knots,
        coeffs: SplineCoeffs::from_simplex_rows(&rows.iter().map(|r| normalized(r)).collect::<Vec<_>>())
            .expect("valid preset"),
        delta: stationary_distribution(&gamma).expect("ergodic preset"),
        gamma: gamma.concat(),
        zeta: 1.0,
        zero_weights: None,
    }
}

/// Simulates a spline-emission HMM (with zero inflation if the
/// parameters carry zero weights).
pub fn simulate_spline_hmm(params: &HmmParams, n: usize, seed: u64) -> Result<GroundTruth> {
    params.validate()?;
    simulate(&TruthParams::from_params(params), n, seed)
}

/// As [`simulate_spline_hmm`] but requires zero weights: with probability
/// `w_i` state `i` emits exactly zero.
pub fn simulate_zero_inflated(params: &HmmParams, n: usize, seed: u64) -> Result<GroundTruth> {
    if params.zero_weights.is_none() {
        return Err(Error::InvalidParams("zero weights are required".into()));
    }
    simulate_spline_hmm(params, n, seed)
}

/// Two-state zero-inflated preset for activity counts on `[0, 100]`:
/// a quiet state with mostly zeros and small counts, and a restless state
/// with fewer zeros and larger counts.
pub fn zero_inflated_params(w: [f64; 2], persistence: [f64; 2]) -> HmmParams {
    let knots = KnotConfig::new(0.0, 100.0, vec![5.0, 10.0, 20.0, 35.0, 55.0, 75.0]).expect("valid preset");
    let eps = 1e-3;
    let rows = [
        vec![0.35, 0.35, 0.18, 0.07, 0.03, eps, eps, eps, eps, eps],
        vec![0.02, 0.04, 0.08, 0.20, 0.30, 0.22, 0.10, 0.03, eps, eps],
    ];
    let gamma = vec![
        persistence[0],
        1.0 - persistence[0],
        1.0 - persistence[1],
        persistence[1],
    ];
    let rows_g = vec![gamma[..2].to_vec(), gamma[2..].to_vec()];
    HmmParams {
        knots,
        coeffs: SplineCoeffs::from_simplex_rows(&rows.iter().map(|r| normalized(r)).collect::<Vec<_>>())
            .expect("valid preset"),
        delta: stationary_distribution(&rows_g).expect("ergodic preset"),
        gamma,
        zeta: 1.0,
        zero_weights: Some(w.to_vec()),
    }
}

/// Layout of a multi-day activity series: each day is awake first, then
/// asleep until the day ends. Sleep lengths are drawn uniformly from
/// `sleep_len` and rounded to multiples of `align`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivityDesign {
    pub days: usize,
    pub day_len: usize,
    pub sleep_len: (usize, usize),
    pub align: usize,
    /// Awake-period emission; draws are clamped at zero.
    pub awake: Emission,
}

impl Default for ActivityDesign {
    fn default() -> Self {
        Self {
            days: 8,
            day_len: 1440,
            sleep_len: (420, 540),
            align: 5,
            awake: mixture(&[(1.0, 220.0, 50.0)]),
        }
    }
}

/// A simulated activity series. `states` holds the sleep sub-state while
/// asleep and `n_sub` (one past the last sub-state) while awake.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivityTruth {
    pub sub: TruthParams,
    pub obs: Vec<f64>,
    pub states: Vec<usize>,
    /// Inclusive `(start, end)` of every night.
    pub nights: Vec<(usize, usize)>,
}

impl ActivityTruth {
    pub fn awake_state(&self) -> usize {
        self.sub.n_states()
    }

    pub fn write_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, self).map_err(|e| Error::Io(e.to_string()))
    }
}

/// Simulates nights from the zero-inflated sub-model `sub` (restarted from
/// its initial distribution each night) separated by awake periods.
pub fn simulate_activity(sub: &HmmParams, design: &ActivityDesign, seed: u64) -> Result<ActivityTruth> {
    sub.validate()?;
    let (lo, hi) = design.sleep_len;
    if design.align == 0 || lo == 0 || lo > hi || hi > design.day_len {
        return Err(Error::InvalidParams("sleep lengths must satisfy 0 < min <= max <= day length".into()));
    }
    let truth = TruthParams::from_params(sub);
    let awake_state = truth.n_states();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut obs = Vec::with_capacity(design.days * design.day_len);
    let mut states = Vec::with_capacity(obs.capacity());
    let mut nights = Vec::with_capacity(design.days);
    for _ in 0..design.days {
        let len = (rng.random_range(lo..=hi) / design.align * design.align).clamp(design.align, design.day_len);
        for _ in 0..design.day_len - len {
            states.push(awake_state);
            obs.push(design.awake.sample(&mut rng).max(0.0));
        }
        let night = simulate(&truth, len, rng.random())?;
        nights.push((obs.len(), obs.len() + len - 1));
        states.extend(night.states);
        obs.extend(night.obs);
    }
    Ok(ActivityTruth {
        sub: truth,
        obs,
        states,
        nights,
    })
}

/// Empirical transition counts of a state path.
pub fn transition_counts(states: &[usize], n_states: usize) -> Vec<Vec<usize>> {
    let mut c = vec![vec![0; n_states]; n_states];
    for w in states.windows(2) {
        c[w[0]][w[1]] += 1;
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_series() {
        assert!(simulate_model1(0, 1).unwrap().is_empty());
    }

    #[test]
    fn model1_switching_and_mixture_mean() {
        let g = simulate_model1(1_000_000, 3).unwrap();
        let c = transition_counts(&g.states, 2);
        let p12 = c[0][1] as f64 / (c[0][0] + c[0][1]) as f64;
        assert!((p12 - 0.1).abs() < 0.003, "{p12}");
        let (sum, count) = g
            .states
            .iter()
            .zip(&g.obs)
            .filter(|(s, _)| **s == 1)
            .fold((0.0, 0usize), |(s, c), (_, y)| (s + y, c + 1));
        // 0.35 * (-5) + 0.65 * 30
        assert!((sum / count as f64 - 17.75).abs() < 0.2);
    }

    #[test]
    fn model3_zero_rho_never_switches() {
        let g = simulate_model3(500, 0.0, 1).unwrap();
        assert!(g.states.iter().all(|&s| s == g.states[0]));
    }

    #[test]
    fn model3_state_marginal_has_three_modes() {
        let g = simulate_model3(1_000_000, 0.05, 8).unwrap();
        let (lo, width, bins) = (-8.0, 0.25, 80);
        let mut hist = vec![0usize; bins];
        for (s, y) in g.states.iter().zip(&g.obs) {
            if *s == 0 {
                let b = ((y - lo) / width).floor();
                if b >= 0.0 && (b as usize) < bins {
                    hist[b as usize] += 1;
                }
            }
        }
        let h: Vec<f64> = hist.iter().map(|&c| c as f64).collect();
        assert_eq!(crate::postproc::count_modes(&h, 0.2), 3);
        let peak = |a: f64, b: f64| {
            let (i0, i1) = (((a - lo) / width) as usize, ((b - lo) / width) as usize);
            let i = (i0..i1).max_by_key(|&i| hist[i]).unwrap();
            lo + width * (i as f64 + 0.5)
        };
        assert!((peak(-6.0, -2.0) + 4.0).abs() < 0.5);
        assert!((peak(-2.0, 2.0)).abs() < 0.5);
        assert!((peak(6.0, 10.0) - 8.0).abs() < 0.5);
    }

    #[test]
    fn spline_preset_occupancy_matches_stationary_vector() {
        let p = model2_params();
        let g = simulate_spline_hmm(&p, 1_000_000, 5).unwrap();
        let pi = stationary_distribution(&model2_gamma()).unwrap();
        for (i, &target) in pi.iter().enumerate() {
            let frac = g.states.iter().filter(|&&s| s == i).count() as f64 / g.len() as f64;
            assert!((frac - target).abs() < 0.01, "state {i}: {frac} vs {target}");
        }
        assert!(g.obs.iter().all(|y| (0.0..=10.0).contains(y)));
    }

    #[test]
    fn transition_frequencies_converge_to_gamma() {
        let p = model2_params();
        let g = simulate_spline_hmm(&p, 200_000, 9).unwrap();
        let c = transition_counts(&g.states, 3);
        for (i, row) in model2_gamma().iter().enumerate() {
            let total: usize = c[i].iter().sum();
            for (j, &pij) in row.iter().enumerate() {
                let f = c[i][j] as f64 / total as f64;
                let tol = 3.0 * (pij * (1.0 - pij) / total as f64).sqrt();
                assert!((f - pij).abs() < tol.max(1e-3), "({i},{j}) {f} vs {pij}");
            }
        }
    }

    #[test]
    fn truth_densities_integrate_to_one() {
        let emissions = model1_truth()
            .emissions
            .into_iter()
            .chain(model3_truth(0.05).unwrap().emissions)
            .chain(TruthParams::from_params(&model2_params()).emissions);
        for e in emissions {
            let (a, b, n) = (-120.0, 120.0, 240_000);
            let h = (b - a) / n as f64;
            let total: f64 = (0..n).map(|j| e.density(a + h * (j as f64 + 0.5)) * h).sum();
            assert!((total - 1.0).abs() < 1e-6, "{total}");
        }
    }

    #[test]
    fn zero_fraction_per_state_matches_weights() {
        let p = zero_inflated_params([0.9, 0.25], [0.96, 0.89]);
        let g = simulate_zero_inflated(&p, 100_000, 2).unwrap();
        for (i, w) in [0.9, 0.25].iter().enumerate() {
            let (zeros, total) = g
                .states
                .iter()
                .zip(&g.obs)
                .filter(|(s, _)| **s == i)
                .fold((0usize, 0usize), |(z, t), (_, y)| (z + (*y == 0.0) as usize, t + 1));
            assert!((zeros as f64 / total as f64 - w).abs() < 0.01);
        }
    }

    #[test]
    fn extreme_zero_weights() {
        let mut p = zero_inflated_params([1.0, 0.0], [0.9, 0.9]);
        let g = simulate_zero_inflated(&p, 2000, 1).unwrap();
        for (s, y) in g.states.iter().zip(&g.obs) {
            assert_eq!(*y == 0.0, *s == 0);
        }
        p.zero_weights = Some(vec![0.0, 0.0]);
        let zi = simulate_zero_inflated(&p, 500, 4).unwrap();
        assert!(zi.obs.iter().all(|&y| y > 0.0));
        p.zero_weights = None;
        assert!(simulate_zero_inflated(&p, 10, 4).is_err());
    }

    #[test]
    fn single_basis_draws_follow_its_cdf() {
        let knots = KnotConfig::new(0.0, 1.0, vec![0.2, 0.5, 0.6]).unwrap();
        let mut simplex = vec![0.0; 7];
        simplex[3] = 1.0;
        let e = Emission::Spline {
            knots: knots.clone(),
            simplex,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut u: Vec<f64> = (0..100_000)
            .map(|_| knots.basis_cdf(3, e.sample(&mut rng)).unwrap())
            .collect();
        u.sort_by(f64::total_cmp);
        let n = u.len() as f64;
        let d = u
            .iter()
            .enumerate()
            .map(|(i, &x)| (x - i as f64 / n).max((i as f64 + 1.0) / n - x))
            .fold(0.0, f64::max);
        // 1% critical value of the KS statistic.
        assert!(d < 1.63 / n.sqrt(), "{d}");
    }

    #[test]
    fn deterministic_under_seed() {
        assert_eq!(simulate_model1(300, 4).unwrap(), simulate_model1(300, 4).unwrap());
        assert_ne!(simulate_model1(300, 4).unwrap(), simulate_model1(300, 5).unwrap());
    }

    #[test]
    fn activity_nights_are_aligned_and_labelled() {
        let sub = zero_inflated_params([0.9, 0.25], [0.96, 0.89]);
        let design = ActivityDesign {
            days: 3,
            ..ActivityDesign::default()
        };
        let a = simulate_activity(&sub, &design, 4).unwrap();
        assert_eq!(a.obs.len(), 3 * 1440);
        assert_eq!(a.nights.len(), 3);
        for (d, &(s, e)) in a.nights.iter().enumerate() {
            assert_eq!(e, (d + 1) * 1440 - 1);
            assert_eq!((e + 1 - s) % 5, 0);
            assert!(a.states[s..=e].iter().all(|&x| x < 2));
            assert!(a.states[d * 1440..s].iter().all(|&x| x == a.awake_state()));
        }
        assert!(a.obs.iter().all(|&y| y >= 0.0));
        assert_eq!(a, simulate_activity(&sub, &design, 4).unwrap());
    }
}
