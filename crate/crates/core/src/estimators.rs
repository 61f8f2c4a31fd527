//! Maximum-likelihood fitting of radiometric transforms.
//!
//! Gaussian noise pairs with the affine family `alpha * a + beta`, which has
//! a least-squares closed form. Gamma and Poisson noise pair with the
//! log-affine family `beta * a^alpha`, fitted by alternating an exact `beta`
//! update with a Newton step on `alpha`.
//!
//! The alternation runs on the atom rescaled by its geometric mean (weighted
//! by the observation for Poisson). That rescaling is itself a log-affine
//! change of contrast, so the fitted `theta = beta * a^alpha` is unchanged,
//! but it removes the `alpha`/`beta` coupling at the optimum and keeps the
//! Newton step close to the profiled one.

use crate::error::{check_pair, Error, Result};
use crate::special::{digamma, trigamma};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TransformFamily {
    /// `T(a) = alpha * a + beta`
    Affine,
    /// `T(a) = beta * a^alpha`, `beta > 0`
    LogAffine,
}

impl TransformFamily {
    pub fn name(self) -> &'static str {
        match self {
            TransformFamily::Affine => "affine",
            TransformFamily::LogAffine => "log-affine",
        }
    }
}

/// A change of contrast applied element-wise to an atom.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadiometricTransform {
    pub family: TransformFamily,
    pub alpha: f64,
    /// For log-affine maps this may underflow or overflow when `alpha` is
    /// large; [`RadiometricTransform::ln_beta`] stays exact.
    pub beta: f64,
    ln_beta: f64,
}

impl RadiometricTransform {
    pub fn new(family: TransformFamily, alpha: f64, beta: f64) -> Result<Self> {
        if !alpha.is_finite() || !beta.is_finite() {
            return Err(Error::invalid("transform parameters must be finite"));
        }
        if family == TransformFamily::LogAffine && !(beta > 0.0) {
            return Err(Error::invalid(format!(
                "log-affine beta must be > 0, got {beta}"
            )));
        }
        let ln_beta = if family == TransformFamily::LogAffine {
            beta.ln()
        } else {
            0.0
        };
        Ok(Self {
            family,
            alpha,
            beta,
            ln_beta,
        })
    }

    /// Log-affine map `a -> exp(ln_beta) * a^alpha`.
    pub fn from_log_beta(alpha: f64, ln_beta: f64) -> Result<Self> {
        if !alpha.is_finite() || !ln_beta.is_finite() {
            return Err(Error::invalid("transform parameters must be finite"));
        }
        Ok(Self {
            family: TransformFamily::LogAffine,
            alpha,
            beta: ln_beta.exp(),
            ln_beta,
        })
    }

    pub fn identity(family: TransformFamily) -> Self {
        match family {
            TransformFamily::Affine => Self {
                family,
                alpha: 1.0,
                beta: 0.0,
                ln_beta: 0.0,
            },
            TransformFamily::LogAffine => Self {
                family,
                alpha: 1.0,
                beta: 1.0,
                ln_beta: 0.0,
            },
        }
    }

    /// `ln(beta)` of a log-affine map; 0 for affine maps.
    pub fn ln_beta(&self) -> f64 {
        self.ln_beta
    }

    #[inline]
    pub fn apply_scalar(&self, a: f64) -> f64 {
        match self.family {
            TransformFamily::Affine => self.alpha * a + self.beta,
            TransformFamily::LogAffine => {
                if self.beta.is_normal() {
                    let v = self.beta * a.powf(self.alpha);
                    if v.is_normal() || a == 0.0 {
                        return v;
                    }
                }
                if a > 0.0 {
                    (self.ln_beta + self.alpha * a.ln()).exp()
                } else {
                    self.beta * a.powf(self.alpha)
                }
            }
        }
    }

    pub fn apply(&self, a: &[f64]) -> Vec<f64> {
        a.iter().map(|&v| self.apply_scalar(v)).collect()
    }

    /// `self` applied after `inner`, when both are in the same family.
    pub fn compose(&self, inner: &RadiometricTransform) -> Result<RadiometricTransform> {
        if self.family != inner.family {
            return Err(Error::invalid(
                "cannot compose transforms of different families",
            ));
        }
        match self.family {
            TransformFamily::Affine => RadiometricTransform::new(
                self.family,
                self.alpha * inner.alpha,
                self.alpha * inner.beta + self.beta,
            ),
            TransformFamily::LogAffine => RadiometricTransform::from_log_beta(
                self.alpha * inner.alpha,
                self.ln_beta + self.alpha * inner.ln_beta,
            ),
        }
    }
}

/// Stopping and damping knobs for the log-affine fits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonConfig {
    pub max_iters: usize,
    pub tol_alpha: f64,
    /// Step shrink factor used when a Newton step increases the objective.
    pub damping: f64,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self {
            max_iters: 100,
            tol_alpha: 1e-8,
            damping: 0.5,
        }
    }
}

impl NewtonConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters < 1 {
            return Err(Error::invalid("max_iters must be >= 1"));
        }
        if !(self.tol_alpha > 0.0) {
            return Err(Error::invalid("tol_alpha must be > 0"));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::invalid("damping must lie in (0, 1]"));
        }
        Ok(())
    }
}

const MAX_HALVINGS: usize = 30;

/// Result of an iterative log-affine fit.
#[derive(Debug, Clone, PartialEq)]
pub struct LogAffineFit {
    pub transform: RadiometricTransform,
    /// Number of Newton updates of `alpha`.
    pub iterations: usize,
    /// `|delta alpha| < tol_alpha` was reached before `max_iters`.
    pub converged: bool,
    /// Objective (negative log-likelihood up to a constant) after every
    /// half-step, starting from the initialization.
    pub objective_trace: Vec<f64>,
}

/// Least-squares fit of `x ~ alpha * a + beta`.
pub fn fit_affine_gaussian(x: &[f64], a: &[f64]) -> Result<RadiometricTransform> {
    check_pair(x, a)?;
    let n = x.len() as f64;
    let xm = x.iter().sum::<f64>() / n;
    let am = a.iter().sum::<f64>() / n;
    let (mut saa, mut sxa) = (0.0, 0.0);
    for (xv, av) in x.iter().zip(a) {
        let da = av - am;
        saa += da * da;
        sxa += (xv - xm) * da;
    }
    if !(saa > 0.0) || saa <= 1e-24 * a.iter().map(|v| v * v).sum::<f64>() {
        return Err(Error::DegenerateAtom("atom is constant"));
    }
    let alpha = sxa / saa;
    RadiometricTransform::new(TransformFamily::Affine, alpha, xm - alpha * am)
}

/// Centered log atom plus the offset removed from it.
fn centered_log_atom(a: &[f64], weights: Option<&[f64]>) -> Result<(Vec<f64>, f64)> {
    let mut la = Vec::with_capacity(a.len());
    for &v in a {
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::domain(format!(
                "log-affine atom values must be > 0, got {v}"
            )));
        }
        la.push(v.ln());
    }
    let (lo, hi) = la
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    if hi - lo <= 1e-12 * (1.0 + lo.abs().max(hi.abs())) {
        return Err(Error::DegenerateAtom("atom is constant in the log domain"));
    }
    let center = match weights {
        Some(w) => {
            let sw: f64 = w.iter().sum();
            la.iter().zip(w).map(|(l, w)| l * w).sum::<f64>() / sw
        }
        None => la.iter().sum::<f64>() / la.len() as f64,
    };
    for v in &mut la {
        *v -= center;
    }
    Ok((la, center))
}

fn mean_and_ss(v: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let (n, s) = v.clone().fold((0usize, 0.0), |(n, s), x| (n + 1, s + x));
    let m = s / n as f64;
    (m, v.map(|x| (x - m) * (x - m)).sum())
}

/// The two per-family pieces of the alternating scheme, written in the
/// centered log-atom coordinates `l_k`.
trait LogAffineObjective {
    fn value(&self, alpha: f64, beta: f64) -> f64;
    fn beta_update(&self, alpha: f64) -> f64;
    /// Numerator and denominator of the Newton step on `alpha`.
    fn newton_terms(&self, alpha: f64, beta: f64) -> (f64, f64);
}

struct GammaObjective<'a> {
    x: &'a [f64],
    l: &'a [f64],
    looks: f64,
}

impl LogAffineObjective for GammaObjective<'_> {
    fn value(&self, alpha: f64, beta: f64) -> f64 {
        let lb = beta.ln();
        self.looks
            * self
                .x
                .iter()
                .zip(self.l)
                .map(|(&x, &l)| lb + alpha * l + x * (-alpha * l).exp() / beta)
                .sum::<f64>()
    }

    fn beta_update(&self, alpha: f64) -> f64 {
        self.x
            .iter()
            .zip(self.l)
            .map(|(&x, &l)| x * (-alpha * l).exp())
            .sum::<f64>()
            / self.x.len() as f64
    }

    fn newton_terms(&self, alpha: f64, beta: f64) -> (f64, f64) {
        let (mut num, mut den) = (0.0, 0.0);
        for (&x, &l) in self.x.iter().zip(self.l) {
            let r = x * (-alpha * l).exp() / beta;
            num += (1.0 - r) * l;
            den += r * l * l;
        }
        (num, den)
    }
}

struct PoissonObjective<'a> {
    x: &'a [f64],
    l: &'a [f64],
    total: f64,
}

impl LogAffineObjective for PoissonObjective<'_> {
    fn value(&self, alpha: f64, beta: f64) -> f64 {
        let lb = beta.ln();
        self.x
            .iter()
            .zip(self.l)
            .map(|(&x, &l)| {
                let fit = beta * (alpha * l).exp();
                if x == 0.0 {
                    fit
                } else {
                    fit - x * (lb + alpha * l)
                }
            })
            .sum()
    }

    fn beta_update(&self, alpha: f64) -> f64 {
        self.total / self.l.iter().map(|&l| (alpha * l).exp()).sum::<f64>()
    }

    fn newton_terms(&self, alpha: f64, beta: f64) -> (f64, f64) {
        let (mut num, mut den) = (0.0, 0.0);
        for (&x, &l) in self.x.iter().zip(self.l) {
            let fit = beta * (alpha * l).exp();
            num += (fit - x) * l;
            den += fit * l * l;
        }
        (num, den)
    }
}

fn run_alternation(
    obj: &dyn LogAffineObjective,
    alpha0: f64,
    beta0: f64,
    cfg: &NewtonConfig,
) -> Result<(f64, f64, usize, bool, Vec<f64>)> {
    let mut alpha = alpha0;
    let mut beta = beta0;
    let mut trace = Vec::with_capacity(2 * cfg.max_iters.min(32) + 1);
    let start = obj.value(alpha, beta);
    if start.is_finite() {
        trace.push(start);
    }
    let fail = |alpha: f64, beta: f64, iterations: usize| Error::Convergence {
        alpha,
        beta,
        iterations,
    };

    let mut iterations = 0;
    let mut converged = false;
    while iterations < cfg.max_iters {
        beta = obj.beta_update(alpha);
        let f0 = obj.value(alpha, beta);
        if !(beta > 0.0) || !beta.is_finite() || !f0.is_finite() {
            return Err(fail(alpha, beta, iterations));
        }
        trace.push(f0);

        let (num, den) = obj.newton_terms(alpha, beta);
        if !(den > 0.0) || !num.is_finite() {
            return Err(fail(alpha, beta, iterations));
        }
        let step = num / den;
        iterations += 1;

        let slack = 4.0 * f64::EPSILON * f0.abs().max(1.0);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let cand = alpha - t * step;
            let fc = obj.value(cand, beta);
            if cand.is_finite() && fc.is_finite() && fc <= f0 + slack {
                accepted = Some((cand, fc));
                break;
            }
            t *= cfg.damping;
        }
        match accepted {
            Some((cand, fc)) => {
                let delta = cand - alpha;
                alpha = cand;
                trace.push(fc);
                if delta.abs() < cfg.tol_alpha {
                    converged = true;
                    break;
                }
            }
            // no descent left at floating-point resolution
            None if step.abs() < 1e3 * cfg.tol_alpha.max(f64::EPSILON * alpha.abs()) => {
                converged = true;
                break;
            }
            None => return Err(fail(alpha, beta, iterations)),
        }
    }
    beta = obj.beta_update(alpha);
    let fin = obj.value(alpha, beta);
    if !(beta > 0.0) || !beta.is_finite() || !fin.is_finite() {
        return Err(fail(alpha, beta, iterations));
    }
    trace.push(fin);
    Ok((alpha, beta, iterations, converged, trace))
}

fn finish(
    alpha: f64,
    beta_centered: f64,
    center: f64,
    iterations: usize,
    converged: bool,
    trace: Vec<f64>,
) -> Result<LogAffineFit> {
    // beta' * (a / g)^alpha = (beta' * g^-alpha) * a^alpha
    let ln_beta = beta_centered.ln() - alpha * center;
    if !ln_beta.is_finite() {
        return Err(Error::Convergence {
            alpha,
            beta: ln_beta.exp(),
            iterations,
        });
    }
    Ok(LogAffineFit {
        transform: RadiometricTransform::from_log_beta(alpha, ln_beta)?,
        iterations,
        converged,
        objective_trace: trace,
    })
}

/// Log-moment initialization for gamma noise, in original coordinates.
pub fn gamma_initialization(x: &[f64], a: &[f64], looks: f64) -> (f64, f64) {
    let n = x.len() as f64;
    let (mx, ssx) = mean_and_ss(x.iter().map(|v| v.ln()));
    let (ma, ssa) = mean_and_ss(a.iter().map(|v| v.ln()));
    // per-pixel variances; the log of a gamma variable has variance trigamma(L)
    let alpha0 = ((ssx / n - trigamma(looks)).max(0.0) / (ssa / n)).sqrt();
    let beta0 = (mx - digamma(looks) + looks.ln() - alpha0 * ma).exp();
    (alpha0, beta0)
}

/// Log-log least-squares initialization for Poisson noise, zero counts
/// replaced by 1/2.
pub fn poisson_initialization(x: &[f64], a: &[f64]) -> (f64, f64) {
    let lx: Vec<f64> = x.iter().map(|&v| v.max(0.5).ln()).collect();
    let la: Vec<f64> = a.iter().map(|v| v.ln()).collect();
    let n = x.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let ma = la.iter().sum::<f64>() / n;
    let (mut sxa, mut saa) = (0.0, 0.0);
    for (p, q) in lx.iter().zip(&la) {
        sxa += (p - mx) * (q - ma);
        saa += (q - ma) * (q - ma);
    }
    let alpha0 = sxa / saa;
    (alpha0, (mx - alpha0 * ma).exp())
}

/// Maximum-likelihood log-affine fit of `x` onto `a` under gamma noise.
pub fn fit_logaffine_gamma(
    x: &[f64],
    a: &[f64],
    looks: f64,
    cfg: &NewtonConfig,
) -> Result<LogAffineFit> {
    check_pair(x, a)?;
    cfg.validate()?;
    if !(looks > 0.0) {
        return Err(Error::invalid("looks must be > 0"));
    }
    if let Some(v) = x.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
        return Err(Error::domain(format!(
            "gamma observations must be > 0, got {v}"
        )));
    }
    let (l, center) = centered_log_atom(a, None)?;
    let (alpha0, beta0) = gamma_initialization(x, a, looks);
    let obj = GammaObjective { x, l: &l, looks };
    let (alpha, beta, it, conv, trace) =
        run_alternation(&obj, alpha0, beta0 * (alpha0 * center).exp(), cfg)?;
    finish(alpha, beta, center, it, conv, trace)
}

/// Maximum-likelihood log-affine fit of `x` onto `a` under Poisson noise.
///
/// Real-valued nonnegative `x` is accepted; the objective then is the
/// Poisson likelihood's continuous extension.
pub fn fit_logaffine_poisson(x: &[f64], a: &[f64], cfg: &NewtonConfig) -> Result<LogAffineFit> {
    check_pair(x, a)?;
    cfg.validate()?;
    if let Some(v) = x.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
        return Err(Error::domain(format!(
            "poisson observations must be >= 0, got {v}"
        )));
    }
    let total: f64 = x.iter().sum();
    if !(total > 0.0) {
        return Err(Error::domain("poisson observation has no counts"));
    }
    let (l, center) = centered_log_atom(a, Some(x))?;
    let (alpha0, beta0) = poisson_initialization(x, a);
    let obj = PoissonObjective { x, l: &l, total };
    let (alpha, beta, it, conv, trace) =
        run_alternation(&obj, alpha0, beta0 * (alpha0 * center).exp(), cfg)?;
    finish(alpha, beta, center, it, conv, trace)
}
