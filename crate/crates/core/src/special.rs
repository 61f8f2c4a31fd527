//! Special functions used by the likelihoods and estimators.

pub use statrs::function::gamma::{digamma, ln_gamma};

/// Trigamma function `psi'(x)` for `x > 0`.
///
/// Shifts the argument above 12 with `psi'(x) = psi'(x + 1) + 1/x^2`, then
/// applies the asymptotic Bernoulli series.
pub fn trigamma(mut x: f64) -> f64 {
    if !(x > 0.0) {
        return f64::NAN;
    }
    let mut acc = 0.0;
    while x < 12.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    let series = inv
        + 0.5 * inv2
        + inv
            * inv2
            * (1.0 / 6.0
                + inv2
                    * (-1.0 / 30.0
                        + inv2 * (1.0 / 42.0 + inv2 * (-1.0 / 30.0 + inv2 * 5.0 / 66.0))));
    acc + series
}

/// `log(n!)` generalised to real `n >= 0`.
#[inline]
pub fn ln_factorial(n: f64) -> f64 {
    if n == 0.0 || n == 1.0 {
        0.0
    } else {
        ln_gamma(n + 1.0)
    }
}
