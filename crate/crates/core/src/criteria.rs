//! Contrast-invariant matching criteria.
//!
//! All criteria are oriented so that a larger `value` means a better match.
//! Likelihood-ratio criteria report `value = -neg_log_glr`.

use std::fmt;
use std::str::FromStr;

use crate::dictionary::Dictionary;
use crate::error::{check_pair, Error, Result};
use crate::estimators::{
    fit_affine_gaussian, fit_logaffine_gamma, fit_logaffine_poisson, NewtonConfig,
    RadiometricTransform, TransformFamily,
};
use crate::noise::{stabilize, NoiseModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Criterion {
    Correlation,
    Glr,
    StabilizedCorrelation,
    StabilizedGlr,
}

impl Criterion {
    pub const ALL: [Criterion; 4] = [
        Criterion::Correlation,
        Criterion::Glr,
        Criterion::StabilizedCorrelation,
        Criterion::StabilizedGlr,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Criterion::Correlation => "corr",
            Criterion::Glr => "glr",
            Criterion::StabilizedCorrelation => "stab-corr",
            Criterion::StabilizedGlr => "stab-glr",
        }
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Criterion::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown criterion '{s}'")))
    }
}

/// Output of one criterion evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchScore {
    pub value: f64,
    pub neg_log_glr: Option<f64>,
    /// For stabilized GLR this transform lives in the stabilized domain.
    pub fitted: Option<RadiometricTransform>,
    /// Set when the correlation was undefined (constant input).
    pub degenerate: bool,
}

impl MatchScore {
    fn from_glr(neg_log_glr: f64, fitted: RadiometricTransform) -> Self {
        let g = neg_log_glr.max(0.0);
        MatchScore {
            value: -g,
            neg_log_glr: Some(g),
            fitted: Some(fitted),
            degenerate: false,
        }
    }
}

struct Centered {
    sxx: f64,
    saa: f64,
    sxa: f64,
}

fn centered_sums(x: &[f64], a: &[f64]) -> Centered {
    let n = x.len() as f64;
    let xm = x.iter().sum::<f64>() / n;
    let am = a.iter().sum::<f64>() / n;
    let mut c = Centered {
        sxx: 0.0,
        saa: 0.0,
        sxa: 0.0,
    };
    for (xv, av) in x.iter().zip(a) {
        let (dx, da) = (xv - xm, av - am);
        c.sxx += dx * dx;
        c.saa += da * da;
        c.sxa += dx * da;
    }
    c
}

/// Absolute normalized correlation. Constant inputs score 0 and are
/// flagged as degenerate.
pub fn correlation(x: &[f64], a: &[f64]) -> Result<MatchScore> {
    check_pair(x, a)?;
    let c = centered_sums(x, a);
    let denom = (c.sxx * c.saa).sqrt();
    let (value, degenerate) = if denom > 0.0 {
        ((c.sxa.abs() / denom).min(1.0), false)
    } else {
        (0.0, true)
    };
    Ok(MatchScore {
        value,
        neg_log_glr: None,
        fitted: None,
        degenerate,
    })
}

/// Gaussian GLR under the affine family:
/// `-log G = (1 - C^2) * ||x - mean(x)||^2 / (2 sigma^2)`.
pub fn glr_gaussian(x: &[f64], a: &[f64], sigma: f64) -> Result<MatchScore> {
    check_pair(x, a)?;
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::domain(format!(
            "gaussian GLR needs sigma > 0, got {sigma}"
        )));
    }
    let fitted = fit_affine_gaussian(x, a)?;
    let c = centered_sums(x, a);
    let c2 = if c.sxx > 0.0 {
        (c.sxa * c.sxa / (c.sxx * c.saa)).min(1.0)
    } else {
        1.0
    };
    let neg = (1.0 - c2) * c.sxx / (2.0 * sigma * sigma);
    Ok(MatchScore::from_glr(neg, fitted))
}

fn check_stationarity(lhs: f64, rhs: f64, fitted: &RadiometricTransform, what: &str) -> Result<()> {
    if (lhs - rhs).abs() > 1e-6 * rhs.abs().max(f64::MIN_POSITIVE) {
        log_stationarity_failure(what, lhs, rhs);
        return Err(Error::Convergence {
            alpha: fitted.alpha,
            beta: fitted.beta,
            iterations: 0,
        });
    }
    Ok(())
}

#[cold]
fn log_stationarity_failure(what: &str, lhs: f64, rhs: f64) {
    if cfg!(debug_assertions) {
        eprintln!("{what}: beta stationarity violated ({lhs} vs {rhs})");
    }
}

/// Gamma GLR under the log-affine family:
/// `-log G = L * sum_k log(beta * a_k^alpha / x_k)` at the fitted optimum.
pub fn glr_gamma(x: &[f64], a: &[f64], looks: f64, cfg: &NewtonConfig) -> Result<MatchScore> {
    let fit = fit_logaffine_gamma(x, a, looks, cfg)?;
    let t = fit.transform;
    let (mut log_sum, mut ratio_sum) = (0.0, 0.0);
    for (&xv, &av) in x.iter().zip(a) {
        let theta = t.apply_scalar(av);
        log_sum += (theta / xv).ln();
        ratio_sum += xv / theta;
    }
    check_stationarity(ratio_sum, x.len() as f64, &t, "gamma GLR")?;
    Ok(MatchScore::from_glr(looks * log_sum, t))
}

/// Poisson GLR under the log-affine family:
/// `-log G = sum_k x_k log(x_k / (beta * a_k^alpha))`, with `0 log 0 = 0`.
pub fn glr_poisson(x: &[f64], a: &[f64], cfg: &NewtonConfig) -> Result<MatchScore> {
    check_pair(x, a)?;
    NoiseModel::Poisson.check_observation(x)?;
    let fit = fit_logaffine_poisson(x, a, cfg)?;
    let t = fit.transform;
    let (mut neg, mut fit_sum, mut total) = (0.0, 0.0, 0.0);
    for (&xv, &av) in x.iter().zip(a) {
        let theta = t.apply_scalar(av);
        if xv > 0.0 {
            neg += xv * (xv / theta).ln();
        }
        fit_sum += theta;
        total += xv;
    }
    check_stationarity(fit_sum, total, &t, "poisson GLR")?;
    Ok(MatchScore::from_glr(neg, t))
}

/// The GLR adapted to `model`: affine family for Gaussian noise, log-affine
/// otherwise.
pub fn glr(model: &NoiseModel, x: &[f64], a: &[f64], cfg: &NewtonConfig) -> Result<MatchScore> {
    match *model {
        NoiseModel::Gaussian { sigma } => glr_gaussian(x, a, sigma),
        NoiseModel::Gamma { looks } => glr_gamma(x, a, looks, cfg),
        NoiseModel::Poisson => glr_poisson(x, a, cfg),
    }
}

/// Correlation between the stabilized observation and stabilized atom.
pub fn stabilized_correlation(model: &NoiseModel, x: &[f64], a: &[f64]) -> Result<MatchScore> {
    check_pair(x, a)?;
    let sx = stabilize(model, x)?;
    let sa = stabilize(model, a)?;
    correlation(&sx.values, &sa.values)
}

/// Gaussian GLR (affine family) between the stabilized observation and
/// stabilized atom, using the stabilizer's noise level.
pub fn stabilized_glr(model: &NoiseModel, x: &[f64], a: &[f64]) -> Result<MatchScore> {
    check_pair(x, a)?;
    let sx = stabilize(model, x)?;
    let sa = stabilize(model, a)?;
    glr_gaussian(&sx.values, &sa.values, sx.sigma)
}

/// Evaluates `criterion` on one (observation, atom) pair.
pub fn score(
    criterion: Criterion,
    model: &NoiseModel,
    x: &[f64],
    a: &[f64],
    cfg: &NewtonConfig,
) -> Result<MatchScore> {
    match criterion {
        Criterion::Correlation => correlation(x, a),
        Criterion::Glr => glr(model, x, a, cfg),
        Criterion::StabilizedCorrelation => stabilized_correlation(model, x, a),
        Criterion::StabilizedGlr => stabilized_glr(model, x, a),
    }
}

/// Transform family that the GLR under `model` is invariant to.
pub fn glr_family(model: &NoiseModel) -> TransformFamily {
    match model {
        NoiseModel::Gaussian { .. } => TransformFamily::Affine,
        _ => TransformFamily::LogAffine,
    }
}

/// Index and score of the best-matching atom; ties go to the lowest index.
pub fn best_match(
    criterion: Criterion,
    model: &NoiseModel,
    x: &[f64],
    dict: &Dictionary,
    cfg: &NewtonConfig,
) -> Result<(usize, MatchScore)> {
    let mut best: Option<(usize, MatchScore)> = None;
    for (i, atom) in dict.atoms().iter().enumerate() {
        let s = score(criterion, model, x, atom, cfg)?;
        if best.as_ref().is_none_or(|(_, b)| s.value > b.value) {
            best = Some((i, s));
        }
    }
    best.ok_or_else(|| Error::invalid("empty dictionary"))
}
