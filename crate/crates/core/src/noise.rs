//! Noise families: likelihoods, sampling, divergences and variance
//! stabilization.
//!
//! Three observation models are supported, each parameterised by the
//! noise-free value `theta` of a pixel:
//!
//! * Gaussian: `x ~ N(theta, sigma^2)`
//! * Gamma with `L` looks: mean `theta`, variance `theta^2 / L`
//! * Poisson: `x ~ P(theta)`

use rand::Rng;
use rand_distr::{Distribution, Gamma, Poisson, StandardNormal};

use crate::dictionary::Dictionary;
use crate::error::{check_pair, Error, Result};
use crate::patch::Patch;
use crate::rng::{substream, Stream};
use crate::special::{ln_factorial, ln_gamma, trigamma};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NoiseKind {
    Gaussian,
    Gamma,
    Poisson,
}

impl NoiseKind {
    pub fn name(self) -> &'static str {
        match self {
            NoiseKind::Gaussian => "gaussian",
            NoiseKind::Gamma => "gamma",
            NoiseKind::Poisson => "poisson",
        }
    }
}

/// A fully parameterised noise model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseModel {
    /// Additive white Gaussian noise with standard deviation `sigma`.
    /// `sigma = 0` is accepted for sampling only.
    Gaussian {
        sigma: f64,
    },
    /// Multiplicative gamma noise with `looks` > 0.
    Gamma {
        looks: f64,
    },
    Poisson,
}

impl NoiseModel {
    pub fn gaussian(sigma: f64) -> Result<Self> {
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(Error::invalid(format!(
                "gaussian sigma must be >= 0, got {sigma}"
            )));
        }
        Ok(NoiseModel::Gaussian { sigma })
    }

    pub fn gamma(looks: f64) -> Result<Self> {
        if !(looks > 0.0) || !looks.is_finite() {
            return Err(Error::invalid(format!(
                "gamma looks must be > 0, got {looks}"
            )));
        }
        Ok(NoiseModel::Gamma { looks })
    }

    pub fn poisson() -> Self {
        NoiseModel::Poisson
    }

    pub fn kind(&self) -> NoiseKind {
        match self {
            NoiseModel::Gaussian { .. } => NoiseKind::Gaussian,
            NoiseModel::Gamma { .. } => NoiseKind::Gamma,
            NoiseModel::Poisson => NoiseKind::Poisson,
        }
    }

    /// Per-pixel noise variance at noise-free value `theta`.
    pub fn variance_at(&self, theta: f64) -> f64 {
        match *self {
            NoiseModel::Gaussian { sigma } => sigma * sigma,
            NoiseModel::Gamma { looks } => theta * theta / looks,
            NoiseModel::Poisson => theta,
        }
    }

    fn positive_sigma(&self) -> Result<f64> {
        match *self {
            NoiseModel::Gaussian { sigma } if sigma > 0.0 => Ok(sigma),
            NoiseModel::Gaussian { .. } => Err(Error::domain("gaussian density needs sigma > 0")),
            _ => unreachable!("positive_sigma on non-gaussian model"),
        }
    }

    /// Checks that every value is an admissible noise-free parameter.
    pub fn check_theta(&self, theta: &[f64]) -> Result<()> {
        finite(theta)?;
        match self {
            NoiseModel::Gaussian { .. } => Ok(()),
            NoiseModel::Gamma { .. } | NoiseModel::Poisson => {
                if let Some(v) = theta.iter().find(|v| **v <= 0.0) {
                    Err(Error::domain(format!("noise-free value {v} must be > 0")))
                } else {
                    Ok(())
                }
            }
        }
    }

    /// Checks that every value is an admissible observation.
    pub fn check_observation(&self, x: &[f64]) -> Result<()> {
        finite(x)?;
        match self {
            NoiseModel::Gaussian { .. } => Ok(()),
            NoiseModel::Gamma { .. } => match x.iter().find(|v| **v <= 0.0) {
                Some(v) => Err(Error::domain(format!("gamma observation {v} must be > 0"))),
                None => Ok(()),
            },
            NoiseModel::Poisson => match x.iter().find(|v| **v < 0.0 || v.fract() != 0.0) {
                Some(v) => Err(Error::domain(format!(
                    "poisson observation {v} must be a nonnegative integer"
                ))),
                None => Ok(()),
            },
        }
    }
}

fn finite(v: &[f64]) -> Result<()> {
    match v.iter().find(|v| !v.is_finite()) {
        Some(v) => Err(Error::domain(format!("non-finite value {v}"))),
        None => Ok(()),
    }
}

/// `sum_k log p(x_k | theta_k)`.
pub fn log_likelihood(model: &NoiseModel, x: &[f64], theta: &[f64]) -> Result<f64> {
    check_pair(x, theta)?;
    model.check_observation(x)?;
    model.check_theta(theta)?;
    let ll = match *model {
        NoiseModel::Gaussian { .. } => {
            let sigma = model.positive_sigma()?;
            let norm = -HALF_LN_2PI - sigma.ln();
            let inv = 0.5 / (sigma * sigma);
            x.iter()
                .zip(theta)
                .map(|(x, t)| norm - (x - t) * (x - t) * inv)
                .sum()
        }
        NoiseModel::Gamma { looks: l } => {
            let norm = l * l.ln() - ln_gamma(l);
            x.iter()
                .zip(theta)
                .map(|(x, t)| norm + (l - 1.0) * x.ln() - l * t.ln() - l * x / t)
                .sum()
        }
        NoiseModel::Poisson => x
            .iter()
            .zip(theta)
            .map(|(&x, &t)| {
                let xlt = if x == 0.0 { 0.0 } else { x * t.ln() };
                xlt - t - ln_factorial(x)
            })
            .sum(),
    };
    Ok(ll)
}

/// Draws one noisy realization of `theta` from `rng`.
pub fn sample_with<R: Rng + ?Sized>(
    model: &NoiseModel,
    theta: &[f64],
    rng: &mut R,
) -> Result<Vec<f64>> {
    model.check_theta(theta)?;
    let out = match *model {
        NoiseModel::Gaussian { sigma } => theta
            .iter()
            .map(|t| {
                let n: f64 = StandardNormal.sample(rng);
                t + sigma * n
            })
            .collect(),
        NoiseModel::Gamma { looks } => {
            let mut out = Vec::with_capacity(theta.len());
            for &t in theta {
                let g = Gamma::new(looks, t / looks).map_err(|e| Error::domain(e.to_string()))?;
                // strictly positive in exact arithmetic; guard against subnormal underflow
                out.push(g.sample(rng).max(f64::MIN_POSITIVE));
            }
            out
        }
        NoiseModel::Poisson => {
            let mut out = Vec::with_capacity(theta.len());
            for &t in theta {
                let p = Poisson::new(t).map_err(|e| Error::domain(e.to_string()))?;
                out.push(p.sample(rng));
            }
            out
        }
    };
    Ok(out)
}

/// Deterministic noisy realization of `theta` for a given seed.
pub fn sample(model: &NoiseModel, theta: &Patch, seed: u64) -> Result<Patch> {
    let mut rng = substream(seed, Stream::Noise, 0);
    theta.with_values(sample_with(model, theta, &mut rng)?)
}

/// Per-pixel mean of the scalar divergences `KL(p(.|theta1_k) || p(.|theta2_k))`.
pub fn kl_divergence(model: &NoiseModel, theta1: &[f64], theta2: &[f64]) -> Result<f64> {
    check_pair(theta1, theta2)?;
    finite(theta1)?;
    model.check_theta(theta2)?;
    let n = theta1.len() as f64;
    let total: f64 = match *model {
        NoiseModel::Gaussian { .. } => {
            let sigma = model.positive_sigma()?;
            let inv = 0.5 / (sigma * sigma);
            theta1
                .iter()
                .zip(theta2)
                .map(|(p, q)| (p - q) * (p - q) * inv)
                .sum()
        }
        NoiseModel::Gamma { looks } => {
            model.check_theta(theta1)?;
            theta1
                .iter()
                .zip(theta2)
                .map(|(p, q)| {
                    let r = p / q;
                    looks * (r - 1.0 - r.ln())
                })
                .sum()
        }
        NoiseModel::Poisson => {
            if let Some(v) = theta1.iter().find(|v| **v < 0.0) {
                return Err(Error::domain(format!("poisson rate {v} must be >= 0")));
            }
            theta1
                .iter()
                .zip(theta2)
                .map(|(&p, &q)| {
                    let plog = if p == 0.0 { 0.0 } else { p * (p / q).ln() };
                    plog + q - p
                })
                .sum()
        }
    };
    Ok((total / n).max(0.0))
}

/// Output of a variance-stabilizing transform.
#[derive(Debug, Clone, PartialEq)]
pub struct Stabilized {
    pub values: Vec<f64>,
    /// Standard deviation of the (approximately) Gaussian stabilized noise.
    pub sigma: f64,
}

#[inline]
fn anscombe(x: f64) -> f64 {
    2.0 * (x + 0.375).sqrt()
}

/// Applies the family's stabilizer: identity, log, or Anscombe.
///
/// The associated sigma is `sigma` for Gaussian noise, `sqrt(trigamma(L))`
/// for gamma noise and 1 for Poisson noise.
pub fn stabilize(model: &NoiseModel, x: &[f64]) -> Result<Stabilized> {
    finite(x)?;
    match *model {
        NoiseModel::Gaussian { sigma } => Ok(Stabilized {
            values: x.to_vec(),
            sigma,
        }),
        NoiseModel::Gamma { looks } => {
            if let Some(v) = x.iter().find(|v| **v <= 0.0) {
                return Err(Error::domain(format!(
                    "log stabilizer needs positive values, got {v}"
                )));
            }
            Ok(Stabilized {
                values: x.iter().map(|v| v.ln()).collect(),
                sigma: trigamma(looks).sqrt(),
            })
        }
        NoiseModel::Poisson => {
            if let Some(v) = x.iter().find(|v| **v < -0.375) {
                return Err(Error::domain(format!(
                    "anscombe transform undefined at {v}"
                )));
            }
            Ok(Stabilized {
                values: x.iter().map(|&v| anscombe(v)).collect(),
                sigma: 1.0,
            })
        }
    }
}

/// Algebraic inverse of [`stabilize`] (no bias correction).
pub fn unstabilize(model: &NoiseModel, y: &[f64]) -> Vec<f64> {
    match model {
        NoiseModel::Gaussian { .. } => y.to_vec(),
        NoiseModel::Gamma { .. } => y.iter().map(|v| v.exp()).collect(),
        NoiseModel::Poisson => y
            .iter()
            .map(|v| {
                let h = v.max(0.0) / 2.0;
                h * h - 0.375
            })
            .collect(),
    }
}

/// Noise parameters chosen to hit a target SNR over a dictionary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SnrCalibration {
    pub model: NoiseModel,
    /// Global factor applied to noise-free values before sampling. Only
    /// Poisson noise uses a factor other than 1.
    pub intensity_scale: f64,
}

fn pixel_moments(dict: &Dictionary) -> (f64, f64, f64) {
    let n = dict.pixel_count() as f64;
    let mean = dict.atoms().iter().flat_map(|a| a.iter()).sum::<f64>() / n;
    let var = dict
        .atoms()
        .iter()
        .flat_map(|a| a.iter())
        .map(|v| (v - mean) * (v - mean))
        .sum::<f64>()
        / n;
    let mean_sq = dict
        .atoms()
        .iter()
        .flat_map(|a| a.iter())
        .map(|v| v * v)
        .sum::<f64>()
        / n;
    (mean, var, mean_sq)
}

/// SNR in dB of `model` over the dictionary after scaling by `scale`:
/// variance of all pixel values over mean per-pixel noise variance.
pub fn dictionary_snr_db(model: &NoiseModel, dict: &Dictionary, scale: f64) -> f64 {
    let (_, var, _) = pixel_moments(dict);
    let n = dict.pixel_count() as f64;
    let noise = dict
        .atoms()
        .iter()
        .flat_map(|a| a.iter())
        .map(|v| model.variance_at(scale * v))
        .sum::<f64>()
        / n;
    10.0 * (scale * scale * var / noise).log10()
}

/// Picks sigma (Gaussian), looks (gamma) or an intensity scale (Poisson) so
/// that [`dictionary_snr_db`] equals `target_db`.
pub fn calibrate_snr(kind: NoiseKind, dict: &Dictionary, target_db: f64) -> Result<SnrCalibration> {
    if dict.is_empty() {
        return Err(Error::invalid("cannot calibrate on an empty dictionary"));
    }
    if !target_db.is_finite() {
        return Err(Error::invalid("target SNR must be finite"));
    }
    let (mean, var, mean_sq) = pixel_moments(dict);
    if !(var > 0.0) {
        return Err(Error::invalid("dictionary has zero pixel variance"));
    }
    let ratio = 10f64.powf(target_db / 10.0);
    if kind != NoiseKind::Gaussian {
        for atom in dict.atoms() {
            NoiseModel::Poisson.check_theta(atom)?;
        }
    }
    let cal = match kind {
        NoiseKind::Gaussian => SnrCalibration {
            model: NoiseModel::gaussian((var / ratio).sqrt())?,
            intensity_scale: 1.0,
        },
        NoiseKind::Gamma => SnrCalibration {
            model: NoiseModel::gamma(ratio * mean_sq / var)?,
            intensity_scale: 1.0,
        },
        NoiseKind::Poisson => SnrCalibration {
            model: NoiseModel::Poisson,
            intensity_scale: ratio * mean / var,
        },
    };
    Ok(cal)
}
