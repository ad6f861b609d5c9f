//! Scalar numerical utilities shared across the crate.

use crate::{Error, Result};

/// Absolute clamp applied to probit linear predictors so branch probabilities
/// never degenerate to exactly 0 or 1 in likelihood ratios.
pub const PROBIT_CLAMP: f64 = 8.0;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Standard normal CDF via `erfc`; absolute error below 1e-12 over the
/// clamped range.
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Branch probability for a probit linear predictor, clamped to
/// `[-PROBIT_CLAMP, PROBIT_CLAMP]`.
pub fn probit_prob(linear: f64) -> f64 {
    std_normal_cdf(linear.clamp(-PROBIT_CLAMP, PROBIT_CLAMP))
}

/// Log density of N(mean, var) at `x`.
pub fn log_normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * (LN_2PI + var.ln() + d * d / var)
}

/// Log density of the two-component local-scale prior 0.5 N(1,1) + 0.5 N(-1,1).
pub fn log_local_scale_pdf(x: f64) -> f64 {
    log_sum_exp2(
        (0.5f64).ln() + log_normal_pdf(x, 1.0, 1.0),
        (0.5f64).ln() + log_normal_pdf(x, -1.0, 1.0),
    )
}

/// Log density of Gamma(shape, rate) at `x > 0`.
pub fn log_gamma_pdf(x: f64, shape: f64, rate: f64) -> f64 {
    shape * rate.ln() - libm::lgamma(shape) + (shape - 1.0) * x.ln() - rate * x
}

/// log(exp(a) + exp(b)) without overflow.
pub fn log_sum_exp2(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Numerically stable sigmoid: 1 / (1 + exp(-x)).
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Draw from a standard normal truncated to `(lo, inf)`.
///
/// Uses plain rejection near the bulk and an exponential proposal in the tail
/// (Robert-style), so no normal quantile function is needed.
pub fn sample_truncnormal_above<R: rand::Rng>(rng: &mut R, lo: f64) -> f64 {
    use rand_distr::{Distribution, StandardNormal};
    if lo <= 0.45 {
        loop {
            let z: f64 = StandardNormal.sample(rng);
            if z > lo {
                return z;
            }
        }
    } else {
        let alpha = 0.5 * (lo + (lo * lo + 4.0).sqrt());
        loop {
            let u: f64 = rng.gen::<f64>();
            let z = lo - u.ln().max(f64::MIN) / alpha;
            let diff = z - alpha;
            let accept = (-0.5 * diff * diff).exp();
            if rng.gen::<f64>() <= accept {
                return z;
            }
        }
    }
}

/// Draw from N(mean, 1) truncated to the positive half-line when `positive`,
/// and to the non-positive half-line otherwise.
pub fn sample_truncnormal_half<R: rand::Rng>(rng: &mut R, mean: f64, positive: bool) -> f64 {
    if positive {
        mean + sample_truncnormal_above(rng, -mean)
    } else {
        mean - sample_truncnormal_above(rng, mean)
    }
}

/// Check every entry of a slice is finite.
pub fn ensure_finite(values: &[f64], what: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numerical(format!("non-finite value in {what}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn normal_cdf_reference_points() {
        assert!((std_normal_cdf(0.0) - 0.5).abs() < 1e-15);
        // quantile of 0.975
        assert!((std_normal_cdf(1.959963984540054) - 0.975).abs() < 1e-12);
        assert!((std_normal_cdf(-1.959963984540054) - 0.025).abs() < 1e-12);
        assert!(std_normal_cdf(-8.0) > 0.0);
        assert!(std_normal_cdf(8.0) < 1.0);
    }

    #[test]
    fn sigmoid_matches_naive() {
        for &x in &[-30.0, -2.0, 0.0, 0.5, 10.0] {
            let naive = 1.0 / (1.0 + (-x as f64).exp());
            assert!((sigmoid(x) - naive).abs() < 1e-15);
        }
    }

    #[test]
    fn truncated_normal_respects_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &lo in &[-1.5, 0.0, 0.7, 3.0, 6.0] {
            for _ in 0..200 {
                let z = sample_truncnormal_above(&mut rng, lo);
                assert!(z > lo);
            }
        }
    }

    #[test]
    fn truncated_half_moments() {
        // E[Z | Z > 0] for Z ~ N(0,1) is sqrt(2/pi).
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 200_000;
        let mean: f64 = (0..n)
            .map(|_| sample_truncnormal_half(&mut rng, 0.0, true))
            .sum::<f64>()
            / n as f64;
        let expect = (2.0 / std::f64::consts::PI).sqrt();
        assert!((mean - expect).abs() < 0.01, "mean {mean} vs {expect}");
    }
}
