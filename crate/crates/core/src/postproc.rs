//! Relabelling, posterior summaries conditioned on the modal knot count,
//! density curves with credible bands, and evaluation metrics.

use std::io::Write;

use itertools::Itertools;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::statistics::{Data, OrderStatistics};

use crate::error::{Error, Result};
use crate::hmm::HmmParams;
use crate::sampler::{Draw, Trace};
use crate::splines::{KnotConfig, SplineCoeffs};

/// First and second moments of the emission of state `i`. With zero
/// inflation the point mass at zero scales both by `1 - w_i`.
pub fn emission_moments(params: &HmmParams, i: usize) -> (f64, f64) {
    let simplex = params.coeffs.simplex_row(i);
    let (mut m1, mut m2) = (0.0, 0.0);
    for (k, a) in simplex.iter().enumerate() {
        let (b1, b2) = params.knots.basis_moments(k);
        m1 += a * b1;
        m2 += a * b2;
    }
    let keep = params.zero_weights.as_ref().map_or(1.0, |w| 1.0 - w[i]);
    (keep * m1, keep * m2)
}

/// Permutation sorting states by emission mean, ties broken by the second
/// moment. `perm[j]` is the old index of new state `j`.
pub fn mean_order(params: &HmmParams) -> Vec<usize> {
    let moments: Vec<(f64, f64)> = (0..params.n_states())
        .map(|i| emission_moments(params, i))
        .collect();
    let mut perm: Vec<usize> = (0..params.n_states()).collect();
    perm.sort_by(|&x, &y| {
        moments[x]
            .0
            .total_cmp(&moments[y].0)
            .then(moments[x].1.total_cmp(&moments[y].1))
    });
    perm
}

/// Relabels every draw so that state 0 has the lowest emission mean.
pub fn relabel(trace: &Trace) -> Trace {
    relabel_with(trace, mean_order)
}

/// Relabels every draw with the permutation that brings its state means
/// (and zero weights) closest, in squared distance, to `reference`.
pub fn relabel_to_reference(trace: &Trace, reference: &HmmParams) -> Trace {
    let target = state_features(reference);
    relabel_with(trace, |p| {
        let f = state_features(p);
        (0..p.n_states())
            .permutations(p.n_states())
            .min_by(|x, y| {
                let cost = |perm: &Vec<usize>| -> f64 {
                    perm.iter()
                        .enumerate()
                        .map(|(j, &old)| {
                            f[old].iter().zip(&target[j]).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
                        })
                        .sum()
                };
                cost(x).total_cmp(&cost(y))
            })
            .expect("at least one state")
    })
}

fn state_features(p: &HmmParams) -> Vec<Vec<f64>> {
    (0..p.n_states())
        .map(|i| {
            let (m1, m2) = emission_moments(p, i);
            let sd = (m2 - m1 * m1).max(0.0).sqrt();
            let mut f = vec![m1, sd];
            if let Some(w) = &p.zero_weights {
                f.push(w[i] * (p.knots.b() - p.knots.a()));
            }
            f
        })
        .collect()
}

fn relabel_with(trace: &Trace, order: impl Fn(&HmmParams) -> Vec<usize>) -> Trace {
    let draws = trace
        .draws
        .iter()
        .map(|d| Draw {
            params: d.params.permuted(&order(&d.params)),
            ..d.clone()
        })
        .collect();
    Trace {
        draws,
        ..trace.clone()
    }
}

/// Stationary distribution `pi` with `pi Gamma = pi`, `sum pi = 1`.
pub fn stationary_distribution(gamma_rows: &[Vec<f64>]) -> Result<Vec<f64>> {
    let n = gamma_rows.len();
    if n == 0 || gamma_rows.iter().any(|r| r.len() != n) {
        return Err(Error::InvalidParams("transition matrix must be square".into()));
    }
    // Solve (Gamma^T - I) pi = 0 with the last equation replaced by sum = 1.
    let mut m = DMatrix::from_fn(n, n, |i, j| gamma_rows[j][i] - if i == j { 1.0 } else { 0.0 });
    let mut rhs = DVector::zeros(n);
    for j in 0..n {
        m[(n - 1, j)] = 1.0;
    }
    rhs[n - 1] = 1.0;
    let pi = m
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::InvalidParams("transition matrix has no unique stationary distribution".into()))?;
    Ok(pi.iter().map(|&x| x.max(0.0)).collect())
}

/// Posterior mean and standard deviation of a scalar.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
}

fn mean_sd(values: impl IntoIterator<Item = f64>) -> MeanSd {
    let v: Vec<f64> = values.into_iter().collect();
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    MeanSd { mean, sd: var.sqrt() }
}

fn elementwise(draws: &[&Draw], f: impl Fn(&HmmParams) -> Vec<f64>) -> Vec<MeanSd> {
    let rows: Vec<Vec<f64>> = draws.iter().map(|d| f(&d.params)).collect();
    (0..rows[0].len())
        .map(|j| mean_sd(rows.iter().map(|r| r[j])))
        .collect()
}

/// Posterior summary over the draws with the modal knot count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n_states: usize,
    pub modal_k: usize,
    /// Fraction of all draws with `K = modal_k`.
    pub modal_k_prob: f64,
    pub n_draws: usize,
    pub bounds: (f64, f64),
    pub knots: Vec<MeanSd>,
    /// Simplex coefficients, one row per state.
    pub coeffs: Vec<Vec<MeanSd>>,
    pub delta: Vec<MeanSd>,
    pub gamma: Vec<Vec<MeanSd>>,
    pub zeta: MeanSd,
    pub zero_weights: Option<Vec<MeanSd>>,
    /// Stationary distribution of the posterior-mean transition matrix.
    pub stationary: Vec<f64>,
    pub grid: Vec<f64>,
    /// Pointwise posterior mean of each state's continuous emission density.
    pub density_mean: Vec<Vec<f64>>,
    /// Central 90% band (5% and 95% quantiles).
    pub band_lo: Vec<Vec<f64>>,
    pub band_hi: Vec<Vec<f64>>,
}

/// Summarizes `trace` (which should already be relabelled) on `grid`.
pub fn summarize(trace: &Trace, grid: &[f64]) -> Result<Summary> {
    let modal_k = trace.modal_k().ok_or(Error::EmptyTrace)?;
    let draws: Vec<&Draw> = trace
        .draws
        .iter()
        .filter(|d| d.params.knots.k() == modal_k)
        .collect();
    let first = &draws[0].params;
    let n_states = first.n_states();
    let bounds = (first.knots.a(), first.knots.b());

    let knots = elementwise(&draws, |p| p.knots.interior().to_vec());
    let coeffs_flat = elementwise(&draws, |p| p.coeffs.simplex().concat());
    let coeffs = coeffs_flat.chunks(modal_k + 4).map(<[MeanSd]>::to_vec).collect();
    let delta = elementwise(&draws, HmmParams::delta_probs);
    let gamma_flat = elementwise(&draws, HmmParams::gamma_probs);
    let gamma: Vec<Vec<MeanSd>> = gamma_flat.chunks(n_states).map(<[MeanSd]>::to_vec).collect();
    let zeta = mean_sd(draws.iter().map(|d| d.params.zeta));
    let zero_weights = first
        .zero_weights
        .is_some()
        .then(|| elementwise(&draws, |p| p.zero_weights.clone().unwrap_or_default()));
    let gamma_mean: Vec<Vec<f64>> = gamma
        .iter()
        .map(|r| r.iter().map(|x| x.mean).collect())
        .collect();
    let stationary = stationary_distribution(&gamma_mean)?;

    let mut density_mean = vec![vec![0.0; grid.len()]; n_states];
    let mut band_lo = density_mean.clone();
    let mut band_hi = density_mean.clone();
    for i in 0..n_states {
        let curves: Vec<Vec<f64>> = draws
            .iter()
            .map(|d| density_curve(&d.params, i, grid))
            .collect();
        for (g, _) in grid.iter().enumerate() {
            let column: Vec<f64> = curves.iter().map(|c| c[g]).collect();
            density_mean[i][g] = column.iter().sum::<f64>() / column.len() as f64;
            let mut data = Data::new(column);
            band_lo[i][g] = data.quantile(0.05);
            band_hi[i][g] = data.quantile(0.95);
        }
    }

    Ok(Summary {
        n_states,
        modal_k,
        modal_k_prob: draws.len() as f64 / trace.len() as f64,
        n_draws: draws.len(),
        bounds,
        knots,
        coeffs,
        delta,
        gamma,
        zeta,
        zero_weights,
        stationary,
        grid: grid.to_vec(),
        density_mean,
        band_lo,
        band_hi,
    })
}

/// Continuous emission density of state `i` on `grid` (zero outside the
/// support).
pub fn density_curve(params: &HmmParams, i: usize, grid: &[f64]) -> Vec<f64> {
    grid.iter()
        .map(|&y| params.spline_density(i, y).unwrap_or(0.0))
        .collect()
}

/// `n` equally spaced points spanning `[a, b]`.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![a],
        _ => (0..n).map(|j| a + (b - a) * j as f64 / (n - 1) as f64).collect(),
    }
}

impl Summary {
    /// Parameters assembled from posterior means, for decoding.
    pub fn point_estimate(&self) -> Result<HmmParams> {
        let knots = KnotConfig::new(
            self.bounds.0,
            self.bounds.1,
            self.knots.iter().map(|x| x.mean).collect(),
        )?;
        let rows: Vec<Vec<f64>> = self
            .coeffs
            .iter()
            .map(|r| r.iter().map(|x| x.mean).collect())
            .collect();
        let params = HmmParams {
            knots,
            coeffs: SplineCoeffs::from_simplex_rows(&rows)?,
            delta: self.delta.iter().map(|x| x.mean).collect(),
            gamma: self.gamma.iter().flatten().map(|x| x.mean).collect(),
            zeta: self.zeta.mean,
            zero_weights: self
                .zero_weights
                .as_ref()
                .map(|w| w.iter().map(|x| x.mean).collect()),
        };
        params.validate()?;
        Ok(params)
    }

    /// Posterior-mean density of state `i` weighted by its stationary
    /// probability.
    pub fn weighted_density(&self, i: usize) -> Vec<f64> {
        self.density_mean[i]
            .iter()
            .map(|d| d * self.stationary[i])
            .collect()
    }

    pub fn write_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, self).map_err(|e| Error::Io(e.to_string()))
    }

    pub fn read_json<R: std::io::Read>(r: R) -> Result<Self> {
        serde_json::from_reader(r).map_err(|e| Error::Io(e.to_string()))
    }

    /// Plot-ready density curves: `y`, then per state mean/lo/hi and the
    /// stationary-weighted mean.
    pub fn write_density_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let mut header = vec!["y".to_string()];
        for i in 1..=self.n_states {
            header.extend([
                format!("mean_{i}"),
                format!("lo_{i}"),
                format!("hi_{i}"),
                format!("weighted_{i}"),
            ]);
        }
        writeln!(w, "{}", header.join(","))?;
        for (g, y) in self.grid.iter().enumerate() {
            let mut row = vec![crate::sampler::fmt_num(*y)];
            for i in 0..self.n_states {
                row.extend(
                    [
                        self.density_mean[i][g],
                        self.band_lo[i][g],
                        self.band_hi[i][g],
                        self.density_mean[i][g] * self.stationary[i],
                    ]
                    .map(crate::sampler::fmt_num),
                );
            }
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

fn trapezoid(grid: &[f64], f: &[f64]) -> f64 {
    grid.windows(2)
        .zip(f.windows(2))
        .map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1]))
        .sum()
}

/// `KL(p || q)` for densities tabulated on `grid`, each renormalized by the
/// trapezoid rule first; `q` is floored at `1e-12`.
pub fn kld(grid: &[f64], p: &[f64], q: &[f64]) -> Result<f64> {
    if grid.len() < 2 || p.len() != grid.len() || q.len() != grid.len() {
        return Err(Error::InvalidData(
            "kld needs at least two grid points and matching lengths".into(),
        ));
    }
    let zp = trapezoid(grid, p);
    let zq = trapezoid(grid, q);
    if !(zp > 0.0 && zq > 0.0) {
        return Err(Error::InvalidData("density integrates to zero on the grid".into()));
    }
    let integrand: Vec<f64> = p
        .iter()
        .zip(q)
        .map(|(&pi, &qi)| {
            let pi = pi / zp;
            let qi = (qi / zq).max(1e-12);
            if pi > 0.0 {
                pi * (pi / qi).ln()
            } else {
                0.0
            }
        })
        .collect();
    Ok(trapezoid(grid, &integrand))
}

/// Fraction of matching labels under the best relabelling of `decoded`.
pub fn decoding_accuracy(decoded: &[usize], truth: &[usize]) -> Result<f64> {
    if decoded.len() != truth.len() {
        return Err(Error::InvalidData("paths differ in length".into()));
    }
    if decoded.is_empty() {
        return Ok(1.0);
    }
    let n = decoded.iter().chain(truth).max().copied().unwrap_or(0) + 1;
    if n > 8 {
        return Err(Error::InvalidData(format!(
            "{n} labels is too many for exhaustive matching"
        )));
    }
    let mut confusion = vec![vec![0usize; n]; n];
    for (&d, &t) in decoded.iter().zip(truth) {
        confusion[d][t] += 1;
    }
    let best = (0..n)
        .permutations(n)
        .map(|perm| (0..n).map(|d| confusion[d][perm[d]]).sum::<usize>())
        .max()
        .unwrap_or(0);
    Ok(best as f64 / decoded.len() as f64)
}

/// Number of local maxima of a curve whose prominence is at least
/// `rel_prominence` times the global maximum. The prominence of a peak is
/// its height above the higher of the lowest points separating it from
/// higher terrain on either side; the highest peak always counts. Maxima at
/// the ends of the curve are not counted.
pub fn count_modes(values: &[f64], rel_prominence: f64) -> usize {
    let top = values.iter().copied().fold(0.0, f64::max);
    let n = values.len();
    let mut count = 0;
    let mut i = 1;
    while i + 1 < n {
        if values[i] <= values[i - 1] {
            i += 1;
            continue;
        }
        let mut j = i;
        while j + 1 < n && values[j + 1] == values[i] {
            j += 1;
        }
        if j + 1 < n && values[j + 1] < values[i] {
            let h = values[i];
            let col = |range: &mut dyn Iterator<Item = usize>| {
                let mut low = h;
                for k in range {
                    if values[k] > h {
                        return Some(low);
                    }
                    low = low.min(values[k]);
                }
                None
            };
            let left = col(&mut (0..i).rev());
            let right = col(&mut (j + 1..n));
            let prominence = match (left, right) {
                (None, None) => h,
                (l, r) => h - l.into_iter().chain(r).fold(f64::NEG_INFINITY, f64::max),
            };
            if prominence >= rel_prominence * top {
                count += 1;
            }
        }
        i = j + 1;
    }
    count
}
