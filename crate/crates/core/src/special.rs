//! Scalar special functions shared by the tape ops, likelihoods and priors.

/// Standard normal CDF via the complementary error function.
/// Max absolute error is that of `erfc` itself, well below 1e-12.
pub fn normcdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Log density of the standard normal.
pub fn norm_logpdf(x: f64) -> f64 {
    -0.5 * x * x - 0.5 * (2.0 * std::f64::consts::PI).ln()
}

/// log Phi(x), accurate over the whole real line. For moderate arguments
/// erfc retains full relative precision; far in the left tail an
/// asymptotic expansion avoids the erfc underflow near x = -37.5.
pub fn log_normcdf(x: f64) -> f64 {
    if x > -20.0 {
        normcdf(x).ln()
    } else {
        // Phi(x) ~ phi(x)/(-x) * (1 - 1/x^2 + 3/x^4 - 15/x^6 + 105/x^8)
        let z = x * x;
        let series = 1.0 - 1.0 / z + 3.0 / (z * z) - 15.0 / (z * z * z)
            + 105.0 / (z * z * z * z);
        norm_logpdf(x) - (-x).ln() + series.ln()
    }
}

/// d/dx log Phi(x) = phi(x) / Phi(x), computed in log space so the left
/// tail does not overflow the ratio.
pub fn log_normcdf_deriv(x: f64) -> f64 {
    (norm_logpdf(x) - log_normcdf(x)).exp()
}

/// Standard normal pdf.
pub fn norm_pdf(x: f64) -> f64 {
    norm_logpdf(x).exp()
}

/// log Gamma via the Lanczos approximation (g = 7, 9 coefficients);
/// absolute error below 1e-10 on the positive axis.
pub fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = COEF[0];
    for (i, c) in COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// log(1 + e^x) without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Logistic sigmoid, the derivative of softplus.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Inverse of softplus: log(e^y - 1), stable for both tails.
pub fn softplus_inverse(y: f64) -> f64 {
    if y > 30.0 {
        y + (-(-y).exp()).ln_1p()
    } else {
        y.exp_m1().ln()
    }
}
