//! Special functions: error function, log-gamma and modified Bessel functions
//! of the first kind in log-space.

use std::f64::consts::PI;

/// The error function.
pub fn erf(x: f64) -> f64 {
    libm::erf(x)
}

/// The complementary error function.
pub fn erfc(x: f64) -> f64 {
    libm::erfc(x)
}

/// Natural log of the gamma function for positive arguments.
pub fn ln_gamma(x: f64) -> f64 {
    libm::lgamma(x)
}

/// `log I_nu(x)` for `nu >= 0` and `x > 0`.
///
/// Uses the power series (all terms positive, rescaled to avoid overflow)
/// up to a crossover, then the large-argument Hankel expansion.
pub fn ln_bessel_i(nu: f64, x: f64) -> f64 {
    assert!(nu >= 0.0, "order must be nonnegative");
    if x <= 0.0 {
        return if nu == 0.0 { 0.0 } else { f64::NEG_INFINITY };
    }
    if x > asymptotic_threshold(nu) {
        ln_bessel_i_asymptotic(nu, x)
    } else {
        ln_bessel_i_series(nu, x)
    }
}

/// The ratio `I_nu(x) / I_{nu-1}(x)` for `nu >= 1`, `x > 0`.
pub fn bessel_i_ratio(nu: f64, x: f64) -> f64 {
    assert!(nu >= 1.0, "ratio needs nu >= 1");
    if x <= 0.0 {
        return 0.0;
    }
    if x < 1e-8 {
        // leading-order small-argument behaviour
        return x / (2.0 * nu);
    }
    (ln_bessel_i(nu, x) - ln_bessel_i(nu - 1.0, x)).exp()
}

fn asymptotic_threshold(nu: f64) -> f64 {
    (2.0 * nu * nu).max(50.0)
}

fn ln_bessel_i_series(nu: f64, x: f64) -> f64 {
    let half = 0.5 * x;
    let q = half * half;
    let ln_first = nu * half.ln() - ln_gamma(nu + 1.0);
    let mut sum = 1.0_f64;
    let mut term = 1.0_f64;
    let mut ln_scale = 0.0_f64;
    let mut k = 0.0_f64;
    loop {
        term *= q / ((k + 1.0) * (k + nu + 1.0));
        sum += term;
        k += 1.0;
        if sum > 1e280 {
            sum *= 1e-280;
            term *= 1e-280;
            ln_scale += 280.0 * std::f64::consts::LN_10;
        }
        // terms decrease once k exceeds the peak; stop when negligible
        if k > half && term < sum * 1e-17 {
            break;
        }
        if k > 1e6 {
            break;
        }
    }
    ln_first + sum.ln() + ln_scale
}

fn ln_bessel_i_asymptotic(nu: f64, x: f64) -> f64 {
    let mu = 4.0 * nu * nu;
    let mut sum = 1.0_f64;
    let mut term = 1.0_f64;
    let mut prev = f64::INFINITY;
    for k in 1..60 {
        let odd = (2 * k - 1) as f64;
        term *= -(mu - odd * odd) / (k as f64 * 8.0 * x);
        if term.abs() >= prev || term == 0.0 {
            break;
        }
        sum += term;
        prev = term.abs();
        if term.abs() < 1e-17 * sum.abs() {
            break;
        }
    }
    x - 0.5 * (2.0 * PI * x).ln() + sum.ln()
}
