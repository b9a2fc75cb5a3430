//! HMM likelihood, decoding and smoothing for spline emission densities.
//!
//! The forward recursion is scaled by the sum of the forward vector at every
//! step, so the log-likelihood stays finite for very long series. A missing
//! observation contributes an emission of one in every state, which is the
//! same as replacing its diagonal emission matrix by the identity.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::splines::{KnotConfig, SplineCoeffs};

/// An observation sequence with a missingness mask and the emission support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    obs: Vec<f64>,
    missing: Vec<bool>,
    a: f64,
    b: f64,
}

impl Dataset {
    pub fn new(obs: Vec<f64>, missing: Vec<bool>, a: f64, b: f64) -> Result<Self> {
        if obs.is_empty() {
            return Err(Error::InvalidData("dataset must contain at least one time point".into()));
        }
        if obs.len() != missing.len() {
            return Err(Error::InvalidData(format!(
                "{} observations but {} missingness flags",
                obs.len(),
                missing.len()
            )));
        }
        if !(a.is_finite() && b.is_finite() && a < b) {
            return Err(Error::InvalidData(format!("invalid bounds [{a}, {b}]")));
        }
        for (t, (&y, &m)) in obs.iter().zip(&missing).enumerate() {
            if !m && !(y >= a && y <= b) {
                return Err(Error::InvalidData(format!(
                    "observation {t} ({y}) lies outside the bounds [{a}, {b}]"
                )));
            }
        }
        Ok(Self { obs, missing, a, b })
    }

    /// Builds a dataset where `None` marks a missing value.
    pub fn from_options(values: &[Option<f64>], a: f64, b: f64) -> Result<Self> {
        let obs = values.iter().map(|v| v.unwrap_or(f64::NAN)).collect();
        let missing = values.iter().map(Option::is_none).collect();
        Self::new(obs, missing, a, b)
    }

    pub fn fully_missing(n: usize, a: f64, b: f64) -> Result<Self> {
        Self::new(vec![f64::NAN; n], vec![true; n], a, b)
    }

    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }

    pub fn obs(&self) -> &[f64] {
        &self.obs
    }

    pub fn missing(&self) -> &[bool] {
        &self.missing
    }

    pub fn bounds(&self) -> (f64, f64) {
        (self.a, self.b)
    }

    pub fn observed(&self) -> impl Iterator<Item = f64> + '_ {
        self.obs
            .iter()
            .zip(&self.missing)
            .filter(|(_, &m)| !m)
            .map(|(&y, _)| y)
    }

    pub fn n_observed(&self) -> usize {
        self.missing.iter().filter(|&&m| !m).count()
    }

    pub fn get(&self, t: usize) -> Option<f64> {
        (!self.missing[t]).then_some(self.obs[t])
    }

    /// Copy with the extra time points in `mask` marked missing.
    pub fn masked(&self, mask: &[bool]) -> Result<Self> {
        if mask.len() != self.len() {
            return Err(Error::InvalidData("mask length does not match data".into()));
        }
        let missing = self.missing.iter().zip(mask).map(|(&m, &x)| m || x).collect();
        Self::new(self.obs.clone(), missing, self.a, self.b)
    }
}

/// Bounds covering the present values, widened by `pad` times the range on
/// each side. A fixed lower bound, when given, is kept as is.
pub fn padded_bounds(values: &[Option<f64>], pad: f64, lower: Option<f64>) -> Result<(f64, f64)> {
    let present: Vec<f64> = values.iter().flatten().copied().collect();
    if present.is_empty() {
        return Err(Error::InvalidData("no observed values".into()));
    }
    let lo = present.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = present.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { hi - lo } else { 1.0 };
    match lower {
        Some(a) => {
            let top = hi.max(a);
            let span = if top > a { top - a } else { 1.0 };
            Ok((a, top + pad * span))
        }
        None => Ok((lo - pad * width, hi + pad * width)),
    }
}

/// Full parameter state of a spline-emission HMM in its unconstrained form.
///
/// `coeffs` holds the coefficients mapped to the simplex by a row softmax;
/// `delta` and `gamma` (row-major, `N x N`) hold positive weights normalized
/// by their sums. `zero_weights`, when present, adds a point mass at zero to
/// every state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HmmParams {
    pub knots: KnotConfig,
    pub coeffs: SplineCoeffs,
    pub delta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub zeta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zero_weights: Option<Vec<f64>>,
}

impl HmmParams {
    pub fn n_states(&self) -> usize {
        self.delta.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_states();
        if n == 0 {
            return Err(Error::InvalidParams("at least one state is required".into()));
        }
        if self.coeffs.n_states() != n || self.coeffs.n_basis() != self.knots.n_basis() {
            return Err(Error::InvalidParams(format!(
                "coefficient matrix is {}x{}, expected {}x{}",
                self.coeffs.n_states(),
                self.coeffs.n_basis(),
                n,
                self.knots.n_basis()
            )));
        }
        if self.gamma.len() != n * n {
            return Err(Error::InvalidParams("transition matrix must be N x N".into()));
        }
        let positive = |v: &f64| v.is_finite() && *v > 0.0;
        if !self.delta.iter().all(positive) || !self.gamma.iter().all(positive) {
            return Err(Error::InvalidParams(
                "initial and transition weights must be positive".into(),
            ));
        }
        if !positive(&self.zeta) {
            return Err(Error::InvalidParams("zeta must be positive".into()));
        }
        if let Some(w) = &self.zero_weights {
            if w.len() != n || w.iter().any(|x| !(0.0..=1.0).contains(x)) {
                return Err(Error::InvalidParams("zero weights must be N values in [0, 1]".into()));
            }
            if w.iter().filter(|&&x| x == 1.0).count() > 1 {
                return Err(Error::InvalidParams(
                    "at most one zero weight may equal one".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn delta_probs(&self) -> Vec<f64> {
        let s: f64 = self.delta.iter().sum();
        self.delta.iter().map(|d| d / s).collect()
    }

    /// Row-normalized transition matrix, row-major.
    pub fn gamma_probs(&self) -> Vec<f64> {
        let n = self.n_states();
        let mut out = self.gamma.clone();
        for row in out.chunks_mut(n) {
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= s);
        }
        out
    }

    pub fn gamma_rows(&self) -> Vec<Vec<f64>> {
        self.gamma_probs()
            .chunks(self.n_states())
            .map(<[f64]>::to_vec)
            .collect()
    }

    /// Continuous emission density of state `i` at `y` (no zero atom).
    pub fn spline_density(&self, i: usize, y: f64) -> Result<f64> {
        let bv = self.knots.eval_basis(y)?;
        Ok(bv.dot(&self.coeffs.simplex_row(i)))
    }

    /// Relabels the states: new state `j` is old state `perm[j]`.
    pub fn permuted(&self, perm: &[usize]) -> HmmParams {
        let n = self.n_states();
        let rows: Vec<Vec<f64>> = perm.iter().map(|&p| self.coeffs.row(p).to_vec()).collect();
        let mut gamma = vec![0.0; n * n];
        for (i, &pi) in perm.iter().enumerate() {
            for (j, &pj) in perm.iter().enumerate() {
                gamma[i * n + j] = self.gamma[pi * n + pj];
            }
        }
        HmmParams {
            knots: self.knots.clone(),
            coeffs: SplineCoeffs::from_rows(&rows).expect("rows share the basis width"),
            delta: perm.iter().map(|&p| self.delta[p]).collect(),
            gamma,
            zeta: self.zeta,
            zero_weights: self
                .zero_weights
                .as_ref()
                .map(|w| perm.iter().map(|&p| w[p]).collect()),
        }
    }
}

/// Basis values of every observed time point for one knot configuration.
#[derive(Debug, Clone)]
pub(crate) struct BasisCache {
    first: Vec<usize>,
    vals: Vec<[f64; 4]>,
}

impl BasisCache {
    pub(crate) fn build(knots: &KnotConfig, data: &Dataset) -> Self {
        let n = data.len();
        let mut first = vec![0; n];
        let mut vals = vec![[0.0; 4]; n];
        let scale: Vec<f64> = (0..knots.n_basis())
            .map(|k| 1.0 / knots.basis_integral(k))
            .collect();
        for t in 0..n {
            if !data.missing[t] {
                let (f, mut v) = knots.local_unnormalized(data.obs[t]);
                for (x, s) in v.iter_mut().zip(&scale[f..f + 4]) {
                    *x *= s;
                }
                first[t] = f;
                vals[t] = v;
            }
        }
        Self { first, vals }
    }
}

/// Scratch buffers for likelihood evaluation. One per caller.
#[derive(Debug, Default, Clone)]
pub(crate) struct Workspace {
    emis: Vec<f64>,
    simplex: Vec<f64>,
    delta: Vec<f64>,
    gamma: Vec<f64>,
    alpha: Vec<f64>,
    next: Vec<f64>,
}

impl Workspace {
    fn prepare(&mut self, params: &HmmParams) {
        let n_states = params.n_states();
        let nb = params.coeffs.n_basis();
        self.simplex.clear();
        self.simplex.extend_from_slice(params.coeffs.values());
        for row in self.simplex.chunks_mut(nb) {
            crate::splines::softmax_in_place(row);
        }
        let ds: f64 = params.delta.iter().sum();
        self.delta.clear();
        self.delta.extend(params.delta.iter().map(|d| d / ds));
        self.gamma.clear();
        self.gamma.extend_from_slice(&params.gamma);
        for row in self.gamma.chunks_mut(n_states) {
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= s);
        }
    }

    /// Fills the `n x N` emission matrix.
    fn fill_emissions(&mut self, params: &HmmParams, data: &Dataset, cache: &BasisCache) -> Result<()> {
        let n_states = params.n_states();
        let nb = params.coeffs.n_basis();
        let n = data.len();
        self.emis.clear();
        self.emis.resize(n * n_states, 1.0);
        let simplex = &self.simplex;
        for (t, out) in self.emis.chunks_exact_mut(n_states).enumerate() {
            if data.missing[t] {
                continue;
            }
            let f = cache.first[t];
            let v = &cache.vals[t];
            for (i, e) in out.iter_mut().enumerate() {
                let c = &simplex[i * nb + f..i * nb + f + 4];
                *e = v[0] * c[0] + v[1] * c[1] + v[2] * c[2] + v[3] * c[3];
            }
        }
        if let Some(w) = params.zero_weights.as_deref() {
            for (t, out) in self.emis.chunks_exact_mut(n_states).enumerate() {
                if data.missing[t] {
                    continue;
                }
                if data.obs[t] == 0.0 {
                    out.copy_from_slice(w);
                } else {
                    out.iter_mut().zip(w).for_each(|(e, wi)| *e *= 1.0 - wi);
                }
            }
        }
        if let Some(pos) = self.emis.iter().position(|e| !e.is_finite()) {
            return Err(Error::NonFiniteEmission(pos / n_states));
        }
        Ok(())
    }

    pub(crate) fn log_likelihood(
        &mut self,
        params: &HmmParams,
        data: &Dataset,
        cache: &BasisCache,
    ) -> Result<f64> {
        self.prepare(params);
        self.fill_emissions(params, data, cache)?;
        self.forward_ll(params.n_states(), data)
    }

    fn forward_ll(&mut self, n_states: usize, data: &Dataset) -> Result<f64> {
        match n_states {
            1 => self.forward_fixed::<1>(data),
            2 => self.forward_fixed::<2>(data),
            3 => self.forward_fixed::<3>(data),
            4 => self.forward_fixed::<4>(data),
            5 => self.forward_fixed::<5>(data),
            6 => self.forward_fixed::<6>(data),
            _ => self.forward_dyn(n_states, data),
        }
    }

    /// Forward recursion with the state count known at compile time. The
    /// forward vector is only rescaled when its mass drifts towards the
    /// floating-point limits; `log_acc` collects the removed scale.
    fn forward_fixed<const N: usize>(&self, data: &Dataset) -> Result<f64> {
        let mut gamma = [[0.0; N]; N];
        for (i, row) in gamma.iter_mut().enumerate() {
            row.copy_from_slice(&self.gamma[i * N..(i + 1) * N]);
        }
        let mut alpha = [0.0; N];
        for (i, x) in alpha.iter_mut().enumerate() {
            *x = self.delta[i] * self.emis[i];
        }
        let mut s: f64 = alpha.iter().sum();
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::Underflow(0));
        }
        let mut log_acc = 0.0;
        for (t, e) in self.emis.chunks_exact(N).enumerate().skip(1) {
            let mut next = [0.0; N];
            for i in 0..N {
                for j in 0..N {
                    next[j] += alpha[i] * gamma[i][j];
                }
            }
            if !data.missing[t] {
                for j in 0..N {
                    next[j] *= e[j];
                }
            }
            alpha = next;
            s = alpha.iter().sum();
            if !(1e-200..=1e200).contains(&s) {
                if !(s > 0.0 && s.is_finite()) {
                    return Err(Error::Underflow(t));
                }
                log_acc += s.ln();
                let inv = 1.0 / s;
                alpha.iter_mut().for_each(|a| *a *= inv);
                s = 1.0;
            }
        }
        Ok(log_acc + s.ln())
    }

    fn forward_dyn(&mut self, n_states: usize, data: &Dataset) -> Result<f64> {
        let n = data.len();
        self.alpha.clear();
        self.alpha.resize(n_states, 0.0);
        self.next.clear();
        self.next.resize(n_states, 0.0);
        let mut log_acc = 0.0;
        let mut s = 0.0;
        for i in 0..n_states {
            self.alpha[i] = self.delta[i] * self.emis[i];
            s += self.alpha[i];
        }
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::Underflow(0));
        }
        for t in 1..n {
            self.next.iter_mut().for_each(|v| *v = 0.0);
            for i in 0..n_states {
                let ai = self.alpha[i];
                let row = &self.gamma[i * n_states..(i + 1) * n_states];
                for (v, g) in self.next.iter_mut().zip(row) {
                    *v += ai * g;
                }
            }
            if !data.missing[t] {
                let e = &self.emis[t * n_states..(t + 1) * n_states];
                for (v, ei) in self.next.iter_mut().zip(e) {
                    *v *= ei;
                }
            }
            std::mem::swap(&mut self.alpha, &mut self.next);
            s = self.alpha.iter().sum();
            if !(1e-200..=1e200).contains(&s) {
                if !(s > 0.0 && s.is_finite()) {
                    return Err(Error::Underflow(t));
                }
                log_acc += s.ln();
                let inv = 1.0 / s;
                self.alpha.iter_mut().for_each(|a| *a *= inv);
                s = 1.0;
            }
        }
        Ok(log_acc + s.ln())
    }
}

fn checked(params: &HmmParams, data: &Dataset) -> Result<(Workspace, BasisCache)> {
    params.validate()?;
    let (a, b) = data.bounds();
    if params.knots.a() > a || params.knots.b() < b {
        return Err(Error::InvalidData(format!(
            "data bounds [{a}, {b}] exceed the spline support [{}, {}]",
            params.knots.a(),
            params.knots.b()
        )));
    }
    let cache = BasisCache::build(&params.knots, data);
    let mut ws = Workspace::default();
    ws.prepare(params);
    ws.fill_emissions(params, data, &cache)?;
    Ok((ws, cache))
}

/// Log of `delta P(y_1) Gamma P(y_2) ... Gamma P(y_n) 1`.
pub fn log_likelihood(params: &HmmParams, data: &Dataset) -> Result<f64> {
    let (mut ws, _) = checked(params, data)?;
    ws.forward_ll(params.n_states(), data)
}

/// Most probable state path (zero-based labels). Ties go to the lower index.
pub fn viterbi(params: &HmmParams, data: &Dataset) -> Result<Vec<usize>> {
    let (ws, _) = checked(params, data)?;
    let ns = params.n_states();
    let n = data.len();
    let log_gamma: Vec<f64> = ws.gamma.iter().map(|g| g.ln()).collect();
    let log_e = |t: usize, i: usize| ws.emis[t * ns + i].ln();
    let mut score: Vec<f64> = (0..ns).map(|i| ws.delta[i].ln() + log_e(0, i)).collect();
    let mut back = vec![0usize; n * ns];
    let mut next = vec![0.0; ns];
    for t in 1..n {
        for j in 0..ns {
            let mut best = f64::NEG_INFINITY;
            let mut arg = 0;
            for i in 0..ns {
                let v = score[i] + log_gamma[i * ns + j];
                if v > best {
                    best = v;
                    arg = i;
                }
            }
            back[t * ns + j] = arg;
            next[j] = best + log_e(t, j);
        }
        if next.iter().all(|v| *v == f64::NEG_INFINITY) {
            return Err(Error::Underflow(t));
        }
        std::mem::swap(&mut score, &mut next);
    }
    let mut state = 0;
    for i in 1..ns {
        if score[i] > score[state] {
            state = i;
        }
    }
    if score[state] == f64::NEG_INFINITY {
        return Err(Error::Underflow(n - 1));
    }
    let mut path = vec![0; n];
    path[n - 1] = state;
    for t in (1..n).rev() {
        state = back[t * ns + state];
        path[t - 1] = state;
    }
    Ok(path)
}

/// Posterior state probabilities `P(x_t = i | y)`, one row per time point.
pub fn smoothed_probs(params: &HmmParams, data: &Dataset) -> Result<Vec<Vec<f64>>> {
    let (ws, _) = checked(params, data)?;
    let ns = params.n_states();
    let n = data.len();
    let g = &ws.gamma;
    let e = |t: usize| &ws.emis[t * ns..(t + 1) * ns];
    let mut alpha = vec![vec![0.0; ns]; n];
    let mut scale = vec![1.0; n];
    for t in 0..n {
        let et = e(t);
        let mut s = 0.0;
        for j in 0..ns {
            let prior = if t == 0 {
                ws.delta[j]
            } else {
                (0..ns).map(|i| alpha[t - 1][i] * g[i * ns + j]).sum()
            };
            alpha[t][j] = prior * et[j];
            s += alpha[t][j];
        }
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::Underflow(t));
        }
        scale[t] = s;
        alpha[t].iter_mut().for_each(|v| *v /= s);
    }
    let mut beta = vec![1.0; ns];
    let mut post = vec![vec![0.0; ns]; n];
    for t in (0..n).rev() {
        if t + 1 < n {
            let et = e(t + 1);
            let nb: Vec<f64> = (0..ns)
                .map(|i| {
                    (0..ns)
                        .map(|j| g[i * ns + j] * et[j] * beta[j])
                        .sum::<f64>()
                        / scale[t + 1]
                })
                .collect();
            beta = nb;
        }
        let row = &mut post[t];
        let mut s = 0.0;
        for i in 0..ns {
            row[i] = alpha[t][i] * beta[i];
            s += row[i];
        }
        row.iter_mut().for_each(|v| *v /= s);
    }
    Ok(post)
}

/// Prefix sums of each row: `P(x_t <= i | y)`.
pub fn cumulative_probs(probs: &[Vec<f64>]) -> Vec<Vec<f64>> {
    probs
        .iter()
        .map(|row| {
            row.iter()
                .scan(0.0, |acc, p| {
                    *acc += p;
                    Some(*acc)
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_state() -> (HmmParams, Dataset) {
        let knots = KnotConfig::new(-4.0, 4.0, vec![-1.0, 0.5, 2.0]).unwrap();
        let coeffs = SplineCoeffs::from_rows(&[
            vec![2.0, 1.5, 1.0, 0.0, -1.0, -2.0, -3.0],
            vec![-3.0, -2.0, -1.0, 0.0, 1.0, 1.5, 2.0],
        ])
        .unwrap();
        let params = HmmParams {
            knots,
            coeffs,
            delta: vec![1.0, 2.0],
            gamma: vec![9.0, 1.0, 2.0, 8.0],
            zeta: 1.0,
            zero_weights: None,
        };
        let data = Dataset::new(
            vec![-2.0, -1.5, 0.3, 2.5, 3.1],
            vec![false; 5],
            -4.0,
            4.0,
        )
        .unwrap();
        (params, data)
    }

    #[test]
    fn single_state_is_sum_of_log_densities() {
        let (mut p, data) = two_state();
        p.coeffs = SplineCoeffs::from_rows(&[p.coeffs.row(0).to_vec()]).unwrap();
        p.delta = vec![3.0];
        p.gamma = vec![0.7];
        let expected: f64 = data.observed().map(|y| p.spline_density(0, y).unwrap().ln()).sum();
        let ll = log_likelihood(&p, &data).unwrap();
        assert!((ll - expected).abs() < 1e-12);
        assert_eq!(viterbi(&p, &data).unwrap(), vec![0; 5]);
        for row in smoothed_probs(&p, &data).unwrap() {
            assert!((row[0] - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn all_missing_has_zero_loglik() {
        let (p, _) = two_state();
        let data = Dataset::fully_missing(7, -4.0, 4.0).unwrap();
        assert!(log_likelihood(&p, &data).unwrap().abs() < 1e-15);
    }

    #[test]
    fn smoothed_rows_sum_to_one() {
        let (p, data) = two_state();
        let post = smoothed_probs(&p, &data).unwrap();
        for row in &post {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        }
        let cum = cumulative_probs(&post);
        assert!(cum.iter().all(|r| (r[1] - 1.0).abs() < 1e-10));
    }

    #[test]
    fn rejects_data_outside_support() {
        let (p, _) = two_state();
        let data = Dataset::new(vec![0.0, 5.0], vec![false, false], -6.0, 6.0).unwrap();
        assert!(log_likelihood(&p, &data).is_err());
        assert!(Dataset::new(vec![0.0, 5.0], vec![false; 2], -4.0, 4.0).is_err());
        assert!(Dataset::new(vec![], vec![], 0.0, 1.0).is_err());
    }

    #[test]
    fn zero_weight_convention() {
        let (mut p, _) = two_state();
        p.knots = KnotConfig::new(0.0, 8.0, vec![1.0, 3.0, 5.0]).unwrap();
        p.zero_weights = Some(vec![0.8, 0.1]);
        let data = Dataset::new(vec![0.0], vec![false], 0.0, 8.0).unwrap();
        let d = p.delta_probs();
        let expected = (d[0] * 0.8 + d[1] * 0.1).ln();
        assert!((log_likelihood(&p, &data).unwrap() - expected).abs() < 1e-14);
        let data = Dataset::new(vec![2.0], vec![false], 0.0, 8.0).unwrap();
        let expected = (d[0] * 0.2 * p.spline_density(0, 2.0).unwrap()
            + d[1] * 0.9 * p.spline_density(1, 2.0).unwrap())
        .ln();
        assert!((log_likelihood(&p, &data).unwrap() - expected).abs() < 1e-14);
    }

    #[test]
    fn two_zero_weights_of_one_are_invalid() {
        let (mut p, _) = two_state();
        p.zero_weights = Some(vec![1.0, 1.0]);
        assert!(p.validate().is_err());
    }

    #[test]
    fn padded_bounds_cover_data() {
        let v = [Some(-1.0), None, Some(3.0)];
        assert_eq!(padded_bounds(&v, 0.05, None).unwrap(), (-1.2, 3.2));
        let (a, b) = padded_bounds(&[Some(0.0), Some(10.0)], 0.05, Some(0.0)).unwrap();
        assert_eq!(a, 0.0);
        assert!((b - 10.5).abs() < 1e-12);
    }
}
