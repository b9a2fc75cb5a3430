//! Normal distribution truncated to an interval.

use rand::Rng;
use statrs::function::erf::{erfc, erfc_inv};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

fn std_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// `log(Phi((hi - mean)/sd) - Phi((lo - mean)/sd))`.
pub fn log_mass(mean: f64, sd: f64, lo: f64, hi: f64) -> f64 {
    let zl = (lo - mean) / sd;
    let zh = (hi - mean) / sd;
    // Work in the upper tail when the whole window lies above the mean.
    let mass = if zl > 0.0 {
        std_cdf(-zl) - std_cdf(-zh)
    } else {
        std_cdf(zh) - std_cdf(zl)
    };
    mass.ln()
}

pub fn log_pdf(x: f64, mean: f64, sd: f64, lo: f64, hi: f64) -> f64 {
    if x < lo || x > hi {
        return f64::NEG_INFINITY;
    }
    let z = (x - mean) / sd;
    -0.5 * z * z - sd.ln() - LN_SQRT_2PI - log_mass(mean, sd, lo, hi)
}

/// Inverse-CDF draw. Assumes `lo <= mean <= hi`, which holds for every
/// caller (proposals are centred on an existing knot inside the window).
pub fn sample<R: Rng + ?Sized>(rng: &mut R, mean: f64, sd: f64, lo: f64, hi: f64) -> f64 {
    let pl = std_cdf((lo - mean) / sd);
    let ph = std_cdf((hi - mean) / sd);
    let p = pl + (ph - pl) * rng.random::<f64>();
    let z = -std::f64::consts::SQRT_2 * erfc_inv(2.0 * p);
    (mean + sd * z).clamp(lo, hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn density_integrates_to_one() {
        let (m, s, lo, hi) = (0.3, 0.7, -0.5, 2.0);
        let n = 20_000;
        let h = (hi - lo) / n as f64;
        let total: f64 = (0..n)
            .map(|i| log_pdf(lo + h * (i as f64 + 0.5), m, s, lo, hi).exp() * h)
            .sum();
        assert!((total - 1.0).abs() < 1e-7);
    }

    #[test]
    fn samples_stay_in_window_with_right_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (m, s, lo, hi) = (0.0, 1.0, -0.5, 3.0);
        let n = 200_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let x = sample(&mut rng, m, s, lo, hi);
            assert!((lo..=hi).contains(&x));
            sum += x;
        }
        // Mean of N(0,1) truncated to [lo, hi]: (phi(lo) - phi(hi)) / Z.
        let phi = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let z = log_mass(m, s, lo, hi).exp();
        let expected = (phi(lo) - phi(hi)) / z;
        assert!((sum / n as f64 - expected).abs() < 0.01);
    }
}
