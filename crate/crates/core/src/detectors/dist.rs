//! Upper-tail probabilities for the Gaussian, Poisson and negative binomial
//! null distributions.

use crate::error::{Error, Result};

const FRAC_1_SQRT_PI: f64 = 0.564_189_583_547_756_3;
const SERIES_CUTOFF: f64 = 3.0;
const CF_TERMS: usize = 120;
// once past the mode, pmf terms below this no longer move a sum bounded by 1
const NEGLIGIBLE_TERM: f64 = 1e-20;

/// Complementary error function.
///
/// Below the cutoff the all-positive series
/// `erf(x) = 2/sqrt(pi) * exp(-x^2) * sum_n (2x^2)^n x / (2n+1)!!` is summed
/// (no cancellation, so `1 - erf` is accurate to ~1e-16 absolute); above it,
/// the Laplace continued fraction is evaluated backwards.
pub fn erfc(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x < 0.0 {
        return 2.0 - erfc(-x);
    }
    if x < SERIES_CUTOFF {
        let x2 = x * x;
        let mut term = x;
        let mut sum = x;
        let mut n = 0.0;
        loop {
            n += 1.0;
            term *= 2.0 * x2 / (2.0 * n + 1.0);
            sum += term;
            if term <= sum * 1e-17 {
                break;
            }
        }
        1.0 - 2.0 * FRAC_1_SQRT_PI * (-x2).exp() * sum
    } else if x > 27.3 {
        0.0
    } else {
        // erfc(x) = exp(-x^2)/sqrt(pi) / (x + (1/2)/(x + 1/(x + (3/2)/(x + ...))))
        let mut f = x;
        for n in (1..=CF_TERMS).rev() {
            f = x + (n as f64 * 0.5) / f;
        }
        FRAC_1_SQRT_PI * (-x * x).exp() / f
    }
}

/// Standard normal upper tail `1 - Phi(z)`; accepts infinite arguments.
pub fn normal_sf(z: f64) -> f64 {
    if z == f64::INFINITY {
        0.0
    } else if z == f64::NEG_INFINITY {
        1.0
    } else {
        0.5 * erfc(z / std::f64::consts::SQRT_2)
    }
}

/// `P(X >= x)` for `X ~ N(mu, sigma2)`.
///
/// A zero variance is the degenerate limit: 1 when `x <= mu`, else 0.
pub fn gaussian_upper_tail(x: f64, mu: f64, sigma2: f64) -> Result<f64> {
    if !(sigma2 >= 0.0) || !sigma2.is_finite() {
        return Err(Error::domain(format!("variance must be finite and >= 0, got {sigma2}")));
    }
    if sigma2 == 0.0 {
        return Ok(if x <= mu { 1.0 } else { 0.0 });
    }
    Ok(normal_sf((x - mu) / sigma2.sqrt()))
}

const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEF: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// Natural log of the gamma function for `x > 0` (Lanczos, g = 7, n = 9).
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS_COEF[0];
    for (i, &c) in LANCZOS_COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + LANCZOS_G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::domain(format!("Poisson mean must be finite and > 0, got {lambda}")));
    }
    Ok(())
}

fn check_negbin(size: f64, prob: f64) -> Result<()> {
    if !(size > 0.0) || !size.is_finite() {
        return Err(Error::domain(format!("negative binomial size must be finite and > 0, got {size}")));
    }
    if !(prob > 0.0 && prob < 1.0) {
        return Err(Error::domain(format!("negative binomial prob must lie in (0,1), got {prob}")));
    }
    Ok(())
}

pub fn poisson_pmf(k: u64, lambda: f64) -> Result<f64> {
    check_lambda(lambda)?;
    let k = k as f64;
    Ok((-lambda + k * lambda.ln() - ln_gamma(k + 1.0)).exp())
}

/// `P(X >= c)` for `X ~ Poisson(lambda)` (inclusive tail), as one minus the
/// log-space pmf sum over `0..c`.
pub fn poisson_upper_tail(c: u64, lambda: f64) -> Result<f64> {
    check_lambda(lambda)?;
    if c == 0 {
        return Ok(1.0);
    }
    let ln_lambda = lambda.ln();
    let mut log_pmf = -lambda;
    let mut below = 0.0;
    for k in 0..c {
        if k > 0 {
            log_pmf += ln_lambda - (k as f64).ln();
        }
        let term = log_pmf.exp();
        below += term;
        if (k as f64) > lambda && term < NEGLIGIBLE_TERM {
            break;
        }
    }
    Ok((1.0 - below).clamp(0.0, 1.0))
}

/// Negative binomial pmf `Gamma(k+size)/(Gamma(size) k!) prob^size (1-prob)^k`.
pub fn negbin_pmf(k: u64, size: f64, prob: f64) -> Result<f64> {
    check_negbin(size, prob)?;
    let kf = k as f64;
    let ln = ln_gamma(kf + size) - ln_gamma(size) - ln_gamma(kf + 1.0) + size * prob.ln() + kf * (-prob).ln_1p();
    Ok(ln.exp())
}

/// `P(X >= c)` (inclusive) for the negative binomial above, by log-space
/// recurrence over `pmf(0..c)`.
pub fn negbin_upper_tail(c: u64, size: f64, prob: f64) -> Result<f64> {
    check_negbin(size, prob)?;
    if c == 0 {
        return Ok(1.0);
    }
    let mean = size * (1.0 - prob) / prob;
    let ln_q = (-prob).ln_1p();
    let mut log_pmf = size * prob.ln();
    let mut below = 0.0;
    for k in 0..c {
        if k > 0 {
            let kf = k as f64;
            log_pmf += ((kf - 1.0 + size) / kf).ln() + ln_q;
        }
        let term = log_pmf.exp();
        below += term;
        if (k as f64) > mean && term < NEGLIGIBLE_TERM {
            break;
        }
    }
    Ok((1.0 - below).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_examples() {
        assert_eq!(gaussian_upper_tail(3.0, 3.0, 1.0).unwrap(), 0.5);
        // mpmath, 40 digits
        let p = gaussian_upper_tail(5.0, 2.0, 16.0 / 7.0).unwrap();
        assert!((p - 0.023_610_452_001_788_584).abs() < 1e-14, "{p}");
        assert_eq!(gaussian_upper_tail(7.0, 3.0, 0.0).unwrap(), 0.0);
        assert_eq!(gaussian_upper_tail(3.0, 3.0, 0.0).unwrap(), 1.0);
        assert!(gaussian_upper_tail(1.0, 0.0, -1.0).is_err());
    }

    #[test]
    fn erfc_reference_points() {
        // values from mpmath
        let cases = [
            (0.0, 1.0),
            (0.5, 0.479_500_122_186_953_5),
            (1.0, 0.157_299_207_050_285_13),
            (2.999, 2.223_016_859_983_405_7e-5),
            (3.0, 2.209_049_699_858_544_1e-5),
            (5.0, 1.537_459_794_428_034_8e-12),
            (-1.0, 1.842_700_792_949_715),
        ];
        for (x, want) in cases {
            let got = erfc(x);
            assert!((got - want).abs() < 1e-15, "erfc({x}) = {got}, want {want}");
        }
    }

    #[test]
    fn poisson_examples() {
        assert_eq!(poisson_upper_tail(0, 3.0).unwrap(), 1.0);
        let p = poisson_upper_tail(5, 3.0).unwrap();
        assert!((p - 0.184_736_755_476_227_93).abs() < 1e-12, "{p}");
        let p = poisson_upper_tail(1, 3.0).unwrap();
        assert!((p - 0.950_212_931_632_136_1).abs() < 1e-12, "{p}");
        assert!(poisson_upper_tail(1, 0.0).is_err());
        assert!(poisson_upper_tail(1, -2.0).is_err());
    }

    #[test]
    fn negbin_examples() {
        assert_eq!(negbin_upper_tail(0, 14.5, 7.0 / 8.0).unwrap(), 1.0);
        let p = negbin_upper_tail(1, 14.5, 7.0 / 8.0).unwrap();
        assert!((p - 0.855_749_685_457_000_1).abs() < 1e-12, "{p}");
        let p = negbin_upper_tail(5, 14.5, 7.0 / 8.0).unwrap();
        assert!((p - 0.071_651_904_937_134_55).abs() < 1e-12, "{p}");
        assert!(negbin_upper_tail(1, 0.0, 0.5).is_err());
        assert!(negbin_upper_tail(1, 1.0, 1.0).is_err());
        assert!(negbin_upper_tail(1, 1.0, 0.0).is_err());
    }

    #[test]
    fn ln_gamma_integers() {
        let mut fact = 1.0f64;
        for n in 1..30u32 {
            // ln((n-1)!)
            let got = ln_gamma(n as f64);
            assert!((got - fact.ln()).abs() < 1e-12 * fact.ln().max(1.0), "n={n}");
            fact *= n as f64;
        }
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-14);
    }

    #[test]
    fn tail_is_zero_far_out() {
        // true values are ~1e-900; only summation rounding remains
        let p = poisson_upper_tail(500, 3.0).unwrap();
        assert!(p < 1e-15, "{p}");
        let p = negbin_upper_tail(500, 3.5, 0.8).unwrap();
        assert!(p < 1e-15, "{p}");
    }
}
