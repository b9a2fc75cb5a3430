//! Normalized cubic B-spline bases on a clamped knot sequence.
//!
//! Every basis function is rescaled to integrate to one over `[a, b]`, so a
//! simplex-weighted combination of them is a probability density. The module
//! also carries the coefficient maps used when a knot is born or dies: the
//! de Boor insertion rule with one blend weight replaced by a free variable
//! `u`, and its exact inverse.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Polynomial degree of every basis function.
pub const DEGREE: usize = 3;
const ORDER: usize = DEGREE + 1;

// Three-point Gauss-Legendre rule: exact for polynomials up to degree 5,
// which covers a cubic basis times y or y^2 on a single knot span.
const GL_NODES: [f64; 3] = [-0.774_596_669_241_483_4, 0.0, 0.774_596_669_241_483_4];
const GL_WEIGHTS: [f64; 3] = [5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0];

/// Boundary knots `a < b`, the strictly increasing interior knots, and the
/// clamped sequence with `a` and `b` each repeated four times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "KnotRecord", into = "KnotRecord")]
pub struct KnotConfig {
    a: f64,
    b: f64,
    interior: Vec<f64>,
    augmented: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct KnotRecord {
    a: f64,
    b: f64,
    interior: Vec<f64>,
}

impl TryFrom<KnotRecord> for KnotConfig {
    type Error = Error;
    fn try_from(r: KnotRecord) -> Result<Self> {
        KnotConfig::new(r.a, r.b, r.interior)
    }
}

impl From<KnotConfig> for KnotRecord {
    fn from(k: KnotConfig) -> Self {
        KnotRecord {
            a: k.a,
            b: k.b,
            interior: k.interior,
        }
    }
}

impl KnotConfig {
    pub fn new(a: f64, b: f64, interior: Vec<f64>) -> Result<Self> {
        if !(a.is_finite() && b.is_finite() && a < b) {
            return Err(Error::InvalidKnots(format!(
                "boundary knots must be finite with a < b (a={a}, b={b})"
            )));
        }
        if interior.len() < 2 {
            return Err(Error::TooFewKnots(interior.len()));
        }
        let mut prev = a;
        for (i, &r) in interior.iter().enumerate() {
            if !r.is_finite() || r <= prev {
                return Err(Error::InvalidKnots(format!(
                    "interior knot {i} ({r}) is not strictly above its predecessor ({prev})"
                )));
            }
            prev = r;
        }
        if prev >= b {
            return Err(Error::InvalidKnots(format!(
                "last interior knot {prev} is not below b={b}"
            )));
        }
        let mut augmented = Vec::with_capacity(interior.len() + 2 * ORDER);
        augmented.extend(std::iter::repeat_n(a, ORDER));
        augmented.extend_from_slice(&interior);
        augmented.extend(std::iter::repeat_n(b, ORDER));
        Ok(Self {
            a,
            b,
            interior,
            augmented,
        })
    }

    /// Equally spaced interior knots.
    pub fn uniform(a: f64, b: f64, k: usize) -> Result<Self> {
        let h = (b - a) / (k + 1) as f64;
        Self::new(a, b, (1..=k).map(|i| a + h * i as f64).collect())
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    /// Number of interior knots.
    pub fn k(&self) -> usize {
        self.interior.len()
    }

    pub fn n_basis(&self) -> usize {
        self.interior.len() + ORDER
    }

    pub fn interior(&self) -> &[f64] {
        &self.interior
    }

    pub fn augmented(&self) -> &[f64] {
        &self.augmented
    }

    pub fn contains(&self, y: f64) -> bool {
        y >= self.a && y <= self.b
    }

    fn check_range(&self, y: f64) -> Result<()> {
        if self.contains(y) {
            Ok(())
        } else {
            Err(Error::OutOfRange {
                y,
                a: self.a,
                b: self.b,
            })
        }
    }

    /// Index `m` into the augmented sequence with `t[m] <= y < t[m+1]`;
    /// `y = b` maps to the last non-empty span.
    pub fn span(&self, y: f64) -> usize {
        DEGREE + self.interior.partition_point(|&r| r <= y)
    }

    /// `(t[k+4] - t[k]) / 4`, the integral of the unnormalized basis `k`.
    pub fn basis_integral(&self, k: usize) -> f64 {
        (self.augmented[k + ORDER] - self.augmented[k]) / ORDER as f64
    }

    /// Unnormalized basis values on the span containing `y`: returns the
    /// index of the first of the four possibly nonzero functions and their
    /// values. Triangular Cox-de Boor scheme; no range check.
    pub fn local_unnormalized(&self, y: f64) -> (usize, [f64; ORDER]) {
        let t = &self.augmented;
        let m = self.span(y);
        let mut n = [0.0; ORDER];
        let mut left = [0.0; ORDER];
        let mut right = [0.0; ORDER];
        n[0] = 1.0;
        for j in 1..=DEGREE {
            left[j] = y - t[m + 1 - j];
            right[j] = t[m + j] - y;
            let mut saved = 0.0;
            for r in 0..j {
                let denom = right[r + 1] + left[j - r];
                let temp = if denom == 0.0 { 0.0 } else { n[r] / denom };
                n[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            n[j] = saved;
        }
        (m - DEGREE, n)
    }

    /// Normalized basis values on the span containing `y`; no range check.
    pub fn local_normalized(&self, y: f64) -> (usize, [f64; ORDER]) {
        let (first, mut n) = self.local_unnormalized(y);
        for (i, v) in n.iter_mut().enumerate() {
            *v /= self.basis_integral(first + i);
        }
        (first, n)
    }

    pub fn eval_basis(&self, y: f64) -> Result<BasisValues> {
        self.check_range(y)?;
        let (first, local) = self.local_normalized(y);
        Ok(BasisValues {
            first,
            local,
            n_basis: self.n_basis(),
        })
    }

    pub fn eval_basis_unnormalized(&self, y: f64) -> Result<BasisValues> {
        self.check_range(y)?;
        let (first, local) = self.local_unnormalized(y);
        Ok(BasisValues {
            first,
            local,
            n_basis: self.n_basis(),
        })
    }

    fn normalized_value(&self, k: usize, y: f64) -> f64 {
        let (first, vals) = self.local_normalized(y);
        if k >= first && k < first + ORDER {
            vals[k - first]
        } else {
            0.0
        }
    }

    /// Integral of normalized basis `k` from `a` to `y`.
    pub fn basis_cdf(&self, k: usize, y: f64) -> Result<f64> {
        self.check_range(y)?;
        if k >= self.n_basis() {
            return Err(Error::InvalidParams(format!(
                "basis index {k} out of range for {} bases",
                self.n_basis()
            )));
        }
        let t = &self.augmented;
        if y <= t[k] {
            return Ok(0.0);
        }
        if y >= t[k + ORDER] {
            return Ok(1.0);
        }
        let mut total = 0.0;
        for s in k..k + ORDER {
            let (lo, hi) = (t[s], t[s + 1]);
            if hi <= lo || lo >= y {
                continue;
            }
            let hi = hi.min(y);
            total += self.gauss_span(lo, hi, |x| self.normalized_value(k, x));
        }
        Ok(total.clamp(0.0, 1.0))
    }

    /// First and second raw moments of normalized basis `k`.
    pub fn basis_moments(&self, k: usize) -> (f64, f64) {
        let t = &self.augmented;
        let mut m1 = 0.0;
        let mut m2 = 0.0;
        for s in k..k + ORDER {
            let (lo, hi) = (t[s], t[s + 1]);
            if hi <= lo {
                continue;
            }
            m1 += self.gauss_span(lo, hi, |x| x * self.normalized_value(k, x));
            m2 += self.gauss_span(lo, hi, |x| x * x * self.normalized_value(k, x));
        }
        (m1, m2)
    }

    fn gauss_span(&self, lo: f64, hi: f64, f: impl Fn(f64) -> f64) -> f64 {
        let half = 0.5 * (hi - lo);
        let mid = 0.5 * (hi + lo);
        GL_NODES
            .iter()
            .zip(GL_WEIGHTS)
            .map(|(&x, w)| w * f(mid + half * x))
            .sum::<f64>()
            * half
    }

    /// Position `r` would take among the interior knots.
    fn insertion_index(&self, r: f64) -> Result<usize> {
        if !(r > self.a && r < self.b) {
            return Err(Error::OutOfRange {
                y: r,
                a: self.a,
                b: self.b,
            });
        }
        let idx = self.interior.partition_point(|&x| x < r);
        if self.interior.get(idx) == Some(&r) {
            return Err(Error::DegenerateInsertion(r));
        }
        Ok(idx)
    }

    pub fn with_inserted(&self, r: f64) -> Result<(KnotConfig, usize)> {
        let idx = self.insertion_index(r)?;
        let mut interior = self.interior.clone();
        interior.insert(idx, r);
        Ok((KnotConfig::new(self.a, self.b, interior)?, idx))
    }

    pub fn with_removed(&self, idx: usize) -> Result<KnotConfig> {
        if self.k() <= 2 {
            return Err(Error::MinimumKnots);
        }
        if idx >= self.k() {
            return Err(Error::InvalidParams(format!(
                "knot index {idx} out of range for K={}",
                self.k()
            )));
        }
        let mut interior = self.interior.clone();
        interior.remove(idx);
        KnotConfig::new(self.a, self.b, interior)
    }

    /// Returns a copy with interior knot `idx` moved to `r`; the ordering
    /// must be preserved.
    pub fn with_moved(&self, idx: usize, r: f64) -> Result<KnotConfig> {
        let mut interior = self.interior.clone();
        interior[idx] = r;
        KnotConfig::new(self.a, self.b, interior)
    }
}

/// The basis functions evaluated at one point, stored sparsely: at most four
/// consecutive entries starting at `first` can be nonzero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BasisValues {
    pub first: usize,
    pub local: [f64; ORDER],
    pub n_basis: usize,
}

impl BasisValues {
    pub fn get(&self, k: usize) -> f64 {
        if k >= self.first && k < self.first + ORDER {
            self.local[k - self.first]
        } else {
            0.0
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        (0..self.n_basis).map(|k| self.get(k)).collect()
    }

    /// `sum_k coeffs[k] * B_k`.
    pub fn dot(&self, coeffs: &[f64]) -> f64 {
        self.local
            .iter()
            .zip(&coeffs[self.first..self.first + ORDER])
            .map(|(v, c)| v * c)
            .sum()
    }
}

/// Unconstrained spline coefficients, one row of length `K+4` per state.
/// Row `i` maps to the simplex through a softmax.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineCoeffs {
    n_states: usize,
    n_basis: usize,
    values: Vec<f64>,
}

impl SplineCoeffs {
    pub fn new(n_states: usize, n_basis: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n_states * n_basis {
            return Err(Error::InvalidParams(format!(
                "coefficient matrix has {} entries, expected {n_states}x{n_basis}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParams("non-finite spline coefficient".into()));
        }
        Ok(Self {
            n_states,
            n_basis,
            values,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_basis = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_basis) {
            return Err(Error::InvalidParams("ragged coefficient rows".into()));
        }
        Self::new(rows.len(), n_basis, rows.concat())
    }

    /// Coefficients whose softmax images are the given simplex rows. Zero
    /// weights are floored so the log stays finite.
    pub fn from_simplex_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let logs: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| r.iter().map(|&p| p.max(1e-300).ln()).collect())
            .collect();
        Self::from_rows(&logs)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_basis(&self) -> usize {
        self.n_basis
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n_basis..(i + 1) * self.n_basis]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.values[i * self.n_basis..(i + 1) * self.n_basis]
    }

    pub fn simplex_row(&self, i: usize) -> Vec<f64> {
        softmax(self.row(i))
    }

    pub fn simplex(&self) -> Vec<Vec<f64>> {
        (0..self.n_states).map(|i| self.simplex_row(i)).collect()
    }
}

pub fn softmax(row: &[f64]) -> Vec<f64> {
    let mut out = row.to_vec();
    softmax_in_place(&mut out);
    out
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// `f(y) = sum_k a_k B_k(y)` for a simplex row `a`.
pub fn emission_density(cfg: &KnotConfig, coeff_row: &[f64], y: f64) -> Result<f64> {
    if coeff_row.len() != cfg.n_basis() {
        return Err(Error::InvalidParams(format!(
            "coefficient row has length {}, expected {}",
            coeff_row.len(),
            cfg.n_basis()
        )));
    }
    let sum: f64 = coeff_row.iter().sum();
    if coeff_row.iter().any(|&c| c < 0.0) || (sum - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidParams(
            "coefficient row is not on the simplex".into(),
        ));
    }
    Ok(cfg.eval_basis(y)?.dot(coeff_row))
}

/// Result of a knot birth applied to the coefficients.
#[derive(Debug, Clone)]
pub struct Insertion {
    pub knots: KnotConfig,
    pub coeffs: SplineCoeffs,
    /// Index of the new knot among the interior knots.
    pub index: usize,
    /// `log |det d(coeffs', ) / d(coeffs, u)|`, summed over states;
    /// `-inf` when the map is singular.
    pub log_jacobian: f64,
}

/// Result of a knot death applied to the coefficients.
#[derive(Debug, Clone)]
pub struct Deletion {
    pub knots: KnotConfig,
    pub coeffs: SplineCoeffs,
    /// The removed knot location.
    pub removed: f64,
    /// Per-state `u` that the matching birth would have needed. May fall
    /// outside `(0, 1)` or be non-finite; callers decide what that means.
    pub u: Vec<f64>,
    /// Log Jacobian of the inverse map, the negative of the birth's.
    pub log_jacobian: f64,
}

/// de Boor blend weight for coefficient `i` when inserting `r` into the
/// augmented sequence `t`.
fn blend_weight(t: &[f64], i: usize, r: f64) -> f64 {
    (r - t[i]) / (t[i + DEGREE] - t[i])
}

/// Applies the birth map to one row. `m` is the span of `r` in the old
/// augmented sequence `t`. With `u = blend_weight(t, m, r)` this is exactly
/// de Boor's knot insertion.
pub fn insert_into_row(t: &[f64], m: usize, r: f64, row: &[f64], u: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(row.len() + 1);
    out.extend_from_slice(&row[..=m - 3]);
    for i in m - 2..m {
        let c = blend_weight(t, i, r);
        out.push(c * row[i] + (1.0 - c) * row[i - 1]);
    }
    out.push(u * row[m] + (1.0 - u) * row[m - 1]);
    out.extend_from_slice(&row[m..]);
    out
}

/// The exact de Boor value of `u` for inserting `r` into `cfg`.
pub fn de_boor_u(cfg: &KnotConfig, r: f64) -> Result<f64> {
    cfg.insertion_index(r)?;
    let m = cfg.span(r);
    Ok(blend_weight(cfg.augmented(), m, r))
}

pub fn insert_knot_transform(
    cfg: &KnotConfig,
    coeffs: &SplineCoeffs,
    r_c: f64,
    u: &[f64],
) -> Result<Insertion> {
    if coeffs.n_basis() != cfg.n_basis() {
        return Err(Error::InvalidParams(
            "coefficient width does not match the knot configuration".into(),
        ));
    }
    if u.len() != coeffs.n_states() {
        return Err(Error::InvalidParams(format!(
            "expected {} values of u, got {}",
            coeffs.n_states(),
            u.len()
        )));
    }
    if u.iter().any(|&v| !(v > 0.0 && v < 1.0)) {
        return Err(Error::InvalidParams("u must lie strictly in (0, 1)".into()));
    }
    let (knots, index) = cfg.with_inserted(r_c)?;
    let t = cfg.augmented();
    let m = index + DEGREE;
    let log_c = blend_weight(t, m - 2, r_c).ln() + blend_weight(t, m - 1, r_c).ln();
    let mut values = Vec::with_capacity(coeffs.n_states() * (cfg.n_basis() + 1));
    let mut log_jacobian = 0.0;
    for (i, &ui) in u.iter().enumerate() {
        let row = coeffs.row(i);
        values.extend(insert_into_row(t, m, r_c, row, ui));
        log_jacobian += log_c + (row[m] - row[m - 1]).abs().ln();
    }
    let coeffs = SplineCoeffs {
        n_states: coeffs.n_states(),
        n_basis: cfg.n_basis() + 1,
        values,
    };
    Ok(Insertion {
        knots,
        coeffs,
        index,
        log_jacobian,
    })
}

/// Removes interior knot `d` (zero-based) and inverts the birth map.
pub fn delete_knot_transform(
    cfg: &KnotConfig,
    coeffs: &SplineCoeffs,
    d: usize,
) -> Result<Deletion> {
    if coeffs.n_basis() != cfg.n_basis() {
        return Err(Error::InvalidParams(
            "coefficient width does not match the knot configuration".into(),
        ));
    }
    let knots = cfg.with_removed(d)?;
    let r = cfg.interior()[d];
    let t = knots.augmented();
    let m = d + DEGREE;
    let c1 = blend_weight(t, m - 2, r);
    let c2 = blend_weight(t, m - 1, r);
    let log_c = c1.ln() + c2.ln();
    let n_basis = knots.n_basis();
    let mut values = Vec::with_capacity(coeffs.n_states() * n_basis);
    let mut u = Vec::with_capacity(coeffs.n_states());
    let mut log_jacobian = 0.0;
    for i in 0..coeffs.n_states() {
        let new = coeffs.row(i);
        let mut old = Vec::with_capacity(n_basis);
        old.extend_from_slice(&new[..=m - 3]);
        let prev = old[m - 3];
        let o1 = (new[m - 2] - (1.0 - c1) * prev) / c1;
        let o2 = (new[m - 1] - (1.0 - c2) * o1) / c2;
        old.push(o1);
        old.push(o2);
        old.extend_from_slice(&new[m + 1..]);
        let gap = old[m] - old[m - 1];
        u.push((new[m] - old[m - 1]) / gap);
        log_jacobian -= log_c + gap.abs().ln();
        values.extend(old);
    }
    let coeffs = SplineCoeffs {
        n_states: coeffs.n_states(),
        n_basis,
        values,
    };
    Ok(Deletion {
        knots,
        coeffs,
        removed: r,
        u,
        log_jacobian,
    })
}
