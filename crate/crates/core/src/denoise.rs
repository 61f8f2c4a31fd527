//! Dictionary-based denoising: every patch is replaced by the GLR-weighted
//! mean of the contrast-fitted atoms, and overlapping estimates are averaged.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::criteria::{glr, stabilized_glr};
use crate::dictionary::{window_positions, Dictionary};
use crate::error::{check_pair, Error, Result};
use crate::estimators::NewtonConfig;
use crate::noise::{stabilize, unstabilize, NoiseModel};
use crate::patch::{Image, Patch};

/// Which likelihood ratio drives the weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DenoiseCriterion {
    /// GLR adapted to the noise model.
    Glr,
    /// Gaussian GLR after variance stabilization; fitted atoms are mapped
    /// back with the algebraic inverse of the stabilizer.
    StabilizedGlr,
}

impl DenoiseCriterion {
    pub fn name(self) -> &'static str {
        match self {
            DenoiseCriterion::Glr => "glr",
            DenoiseCriterion::StabilizedGlr => "stab-glr",
        }
    }
}

impl FromStr for DenoiseCriterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "glr" => Ok(DenoiseCriterion::Glr),
            "stab-glr" => Ok(DenoiseCriterion::StabilizedGlr),
            _ => Err(Error::invalid(format!(
                "denoising supports glr or stab-glr, not '{s}'"
            ))),
        }
    }
}

impl fmt::Display for DenoiseCriterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DenoiseOptions {
    pub criterion: DenoiseCriterion,
    /// Weights are `G^(1/temperature)`; 1 gives the plain posterior mean.
    pub temperature: f64,
    pub newton: NewtonConfig,
}

impl Default for DenoiseOptions {
    fn default() -> Self {
        Self {
            criterion: DenoiseCriterion::Glr,
            temperature: 1.0,
            newton: NewtonConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoisedPatch {
    pub values: Vec<f64>,
    /// Normalized weight per atom (0 for skipped atoms).
    pub weights: Vec<f64>,
    /// Normalizer after shifting by the best score, in `[1, atoms]`.
    pub normalizer: f64,
    /// Degenerate atoms left out of the average.
    pub skipped: usize,
}

/// Fitted atom and its `-log G` for one observation.
fn fitted_atom(
    x: &[f64],
    atom: &[f64],
    model: &NoiseModel,
    opts: &DenoiseOptions,
) -> Result<Option<(f64, Vec<f64>)>> {
    let result = match opts.criterion {
        DenoiseCriterion::Glr => glr(model, x, atom, &opts.newton).map(|s| {
            let t = s.fitted.expect("GLR scores carry their fit");
            (s.neg_log_glr.unwrap_or(0.0), t.apply(atom))
        }),
        DenoiseCriterion::StabilizedGlr => stabilized_glr(model, x, atom).and_then(|s| {
            let t = s.fitted.expect("GLR scores carry their fit");
            let sa = stabilize(model, atom)?;
            Ok((
                s.neg_log_glr.unwrap_or(0.0),
                unstabilize(model, &t.apply(&sa.values)),
            ))
        }),
    };
    match result {
        Ok(v) => Ok(Some(v)),
        Err(Error::DegenerateAtom(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Weighted mean of the fitted atoms with weights `exp(-neg_log_glr / T)`,
/// computed after subtracting the smallest `neg_log_glr`.
pub fn denoise_patch(
    x: &[f64],
    dict: &Dictionary,
    model: &NoiseModel,
    opts: &DenoiseOptions,
) -> Result<DenoisedPatch> {
    if !(opts.temperature > 0.0) || !opts.temperature.is_finite() {
        return Err(Error::invalid("temperature must be > 0"));
    }
    if dict.is_empty() {
        return Err(Error::invalid("empty dictionary"));
    }
    check_pair(x, &dict.atoms()[0])?;

    let mut fits = Vec::with_capacity(dict.len());
    for atom in dict.atoms() {
        fits.push(fitted_atom(x, atom, model, opts)?);
    }
    let skipped = fits.iter().filter(|f| f.is_none()).count();
    let (best, g_min) = fits
        .iter()
        .enumerate()
        .filter_map(|(i, f)| f.as_ref().map(|(g, _)| (i, *g)))
        .fold(None, |acc: Option<(usize, f64)>, (i, g)| match acc {
            Some((_, bg)) if bg <= g => acc,
            _ => Some((i, g)),
        })
        .ok_or(Error::DegenerateAtom(
            "every atom in the dictionary is degenerate",
        ))?;

    let raw: Vec<f64> = fits
        .iter()
        .map(|f| {
            f.as_ref()
                .map_or(0.0, |(g, _)| (-(g - g_min) / opts.temperature).exp())
        })
        .collect();
    let z: f64 = raw.iter().sum();
    assert!(z >= 1.0, "best atom must keep unit weight after the shift");
    let weights: Vec<f64> = raw.iter().map(|w| w / z).collect();

    // anchor on the best atom so that equal or single contributions are exact
    let anchor = &fits[best].as_ref().expect("best atom was fitted").1;
    let mut values = anchor.clone();
    for (f, &w) in fits.iter().zip(&weights) {
        if let Some((_, fitted)) = f {
            if w > 0.0 {
                for ((v, a), b) in values.iter_mut().zip(fitted).zip(anchor) {
                    *v += w * (a - b);
                }
            }
        }
    }
    Ok(DenoisedPatch {
        values,
        weights,
        normalizer: z,
        skipped,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
}

impl Summary {
    fn of(values: &[f64]) -> Self {
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mean = values.iter().sum::<f64>() / values.len().max(1) as f64;
        Summary { min, max, mean }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoisedImage {
    pub image: Image,
    pub normalizer: Summary,
    pub patches: usize,
    pub skipped_atoms: usize,
}

/// Denoises every patch on a `stride` grid (last row and column always
/// included) and averages the overlapping estimates per pixel.
pub fn denoise_image(
    noisy: &Image,
    dict: &Dictionary,
    model: &NoiseModel,
    stride: usize,
    opts: &DenoiseOptions,
) -> Result<DenoisedImage> {
    let (pw, ph) = (dict.patch_width(), dict.patch_height());
    if stride == 0 {
        return Err(Error::invalid("stride must be >= 1"));
    }
    if pw > noisy.width() || ph > noisy.height() {
        return Err(Error::invalid("image is smaller than one patch"));
    }
    let xs = window_positions(noisy.width(), pw, stride, true);
    let ys = window_positions(noisy.height(), ph, stride, true);
    let corners: Vec<(usize, usize)> = ys
        .iter()
        .flat_map(|&y| xs.iter().map(move |&x| (x, y)))
        .collect();

    let estimates = corners
        .par_iter()
        .map(|&(x, y)| {
            let p = noisy.window(x, y, pw, ph)?;
            denoise_patch(&p, dict, model, opts)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut sum = vec![0.0; noisy.pixels().len()];
    let mut count = vec![0u32; sum.len()];
    for (&(x0, y0), est) in corners.iter().zip(&estimates) {
        for dy in 0..ph {
            let row = (y0 + dy) * noisy.width() + x0;
            for dx in 0..pw {
                sum[row + dx] += est.values[dy * pw + dx];
                count[row + dx] += 1;
            }
        }
    }
    let pixels = sum.iter().zip(&count).map(|(s, &c)| s / c as f64).collect();
    let z: Vec<f64> = estimates.iter().map(|e| e.normalizer).collect();
    Ok(DenoisedImage {
        image: Image::new(noisy.width(), noisy.height(), pixels)?,
        normalizer: Summary::of(&z),
        patches: estimates.len(),
        skipped_atoms: estimates.iter().map(|e| e.skipped).sum(),
    })
}

/// `10 log10(peak^2 / MSE)` with `peak = max(clean)`; identical images give
/// `+inf`.
pub fn psnr(clean: &Image, test: &Image) -> Result<f64> {
    if clean.width() != test.width() || clean.height() != test.height() {
        return Err(Error::invalid("PSNR needs images of equal size"));
    }
    let peak = clean.max_value();
    if !(peak > 0.0) {
        return Err(Error::invalid("PSNR needs a positive peak value"));
    }
    let mse = clean
        .pixels()
        .iter()
        .zip(test.pixels())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / clean.pixels().len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

/// PSNR before and after denoising plus normalizer statistics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DenoiseReport {
    pub psnr_noisy: f64,
    pub psnr_denoised: f64,
    pub weights_stats: Summary,
}

impl fmt::Display for DenoiseReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "psnr_noisy={} psnr_denoised={} z_min={} z_max={} z_mean={}",
            fmt_db(self.psnr_noisy),
            fmt_db(self.psnr_denoised),
            self.weights_stats.min,
            self.weights_stats.max,
            self.weights_stats.mean
        )
    }
}

/// `+inf` for perfect reconstructions, six decimals otherwise.
pub fn fmt_db(v: f64) -> String {
    if v == f64::INFINITY {
        "+inf".to_string()
    } else {
        format!("{v:.6}")
    }
}

pub fn report(clean: &Image, noisy: &Image, denoised: &DenoisedImage) -> Result<DenoiseReport> {
    Ok(DenoiseReport {
        psnr_noisy: psnr(clean, noisy)?,
        psnr_denoised: psnr(clean, &denoised.image)?,
        weights_stats: denoised.normalizer,
    })
}

/// Convenience: the patch at `(x, y)` denoised on its own.
pub fn denoise_window(
    noisy: &Image,
    x: usize,
    y: usize,
    dict: &Dictionary,
    model: &NoiseModel,
    opts: &DenoiseOptions,
) -> Result<Patch> {
    let p = noisy.window(x, y, dict.patch_width(), dict.patch_height())?;
    let d = denoise_patch(&p, dict, model, opts)?;
    p.with_values(d.values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::criteria::glr_gaussian;
    use crate::estimators::{RadiometricTransform, TransformFamily};
    use crate::noise::sample_with;
    use crate::rng::seeded;
    use rand::Rng;

    fn rand_patch(rng: &mut impl Rng, n: usize, lo: f64, hi: f64) -> Patch {
        Patch::from_vec((0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
    }

    #[test]
    fn self_dictionary_returns_input() {
        let mut rng = seeded(1);
        let x = rand_patch(&mut rng, 16, 0.0, 10.0);
        let d = Dictionary::new(vec![x.clone()], 16, 1).unwrap();
        let m = NoiseModel::gaussian(1.0).unwrap();
        assert_eq!(
            denoise_patch(&x, &d, &m, &DenoiseOptions::default())
                .unwrap()
                .values,
            x.values()
        );
    }

    #[test]
    fn single_atom_returns_fitted_atom() {
        let mut rng = seeded(2);
        let x = rand_patch(&mut rng, 16, 1.0, 10.0);
        let a = rand_patch(&mut rng, 16, 1.0, 10.0);
        let d = Dictionary::new(vec![a.clone()], 16, 1).unwrap();
        for m in [
            NoiseModel::gaussian(2.0).unwrap(),
            NoiseModel::gamma(4.0).unwrap(),
        ] {
            let out = denoise_patch(&x, &d, &m, &DenoiseOptions::default()).unwrap();
            let t = glr(&m, &x, &a, &NewtonConfig::default())
                .unwrap()
                .fitted
                .unwrap();
            assert_eq!(out.values, t.apply(&a));
            assert_eq!(out.weights, vec![1.0]);
        }
    }

    #[test]
    fn two_atom_weighted_mean() {
        let mut rng = seeded(3);
        let sigma = 3.0;
        let m = NoiseModel::gaussian(sigma).unwrap();
        let a1 = rand_patch(&mut rng, 9, 0.0, 10.0);
        let a2 = rand_patch(&mut rng, 9, 0.0, 10.0);
        let x: Vec<f64> = a1
            .iter()
            .zip(a2.iter())
            .map(|(p, q)| 0.6 * p + 0.4 * q + rng.random_range(-1.0..1.0))
            .collect();
        let d = Dictionary::new(vec![a1.clone(), a2.clone()], 9, 1).unwrap();
        let out = denoise_patch(&x, &d, &m, &DenoiseOptions::default()).unwrap();
        let s1 = glr_gaussian(&x, &a1, sigma).unwrap();
        let s2 = glr_gaussian(&x, &a2, sigma).unwrap();
        let (g1, g2) = (s1.neg_log_glr.unwrap(), s2.neg_log_glr.unwrap());
        let (f1, f2) = (s1.fitted.unwrap().apply(&a1), s2.fitted.unwrap().apply(&a2));
        for k in 0..9 {
            let direct = ((-g1).exp() * f1[k] + (-g2).exp() * f2[k]) / ((-g1).exp() + (-g2).exp());
            assert!(
                (out.values[k] - direct).abs() < 1e-12,
                "{} vs {direct}",
                out.values[k]
            );
        }
    }

    #[test]
    fn output_is_convex_combination() {
        let mut rng = seeded(4);
        let gm = NoiseModel::gamma(10.0).unwrap();
        let atoms: Vec<Patch> = (0..12)
            .map(|_| rand_patch(&mut rng, 16, 1.0, 50.0))
            .collect();
        let d = Dictionary::new(atoms.clone(), 16, 1).unwrap();
        for criterion in [DenoiseCriterion::Glr, DenoiseCriterion::StabilizedGlr] {
            let opts = DenoiseOptions {
                criterion,
                temperature: 4.0,
                ..Default::default()
            };
            let x = sample_with(&gm, &atoms[3], &mut rng).unwrap();
            let out = denoise_patch(&x, &d, &gm, &opts).unwrap();
            assert!((out.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let fitted: Vec<Vec<f64>> = atoms
                .iter()
                .map(|a| fitted_atom(&x, a, &gm, &opts).unwrap().unwrap().1)
                .collect();
            for k in 0..16 {
                let lo = fitted.iter().map(|f| f[k]).fold(f64::INFINITY, f64::min);
                let hi = fitted
                    .iter()
                    .map(|f| f[k])
                    .fold(f64::NEG_INFINITY, f64::max);
                assert!(out.values[k] >= lo - 1e-9 && out.values[k] <= hi + 1e-9);
            }
        }
    }

    #[test]
    fn contrast_change_of_atoms_leaves_output_unchanged() {
        let mut rng = seeded(5);
        let gm = NoiseModel::gamma(10.0).unwrap();
        let atoms: Vec<Patch> = (0..8)
            .map(|_| rand_patch(&mut rng, 16, 1.0, 50.0))
            .collect();
        let t = RadiometricTransform::new(TransformFamily::LogAffine, 1.7, 0.3).unwrap();
        let moved: Vec<Patch> = atoms
            .iter()
            .map(|a| a.with_values(t.apply(a)).unwrap())
            .collect();
        let d1 = Dictionary::new(atoms.clone(), 16, 1).unwrap();
        let d2 = Dictionary::new(moved, 16, 1).unwrap();
        let x = sample_with(&gm, &atoms[2], &mut rng).unwrap();
        let o1 = denoise_patch(&x, &d1, &gm, &DenoiseOptions::default()).unwrap();
        let o2 = denoise_patch(&x, &d2, &gm, &DenoiseOptions::default()).unwrap();
        for (p, q) in o1.values.iter().zip(&o2.values) {
            assert!((p - q).abs() < 1e-6 * (1.0 + p.abs()));
        }
    }

    #[test]
    fn degenerate_atoms_are_skipped() {
        let mut rng = seeded(6);
        let x = rand_patch(&mut rng, 16, 0.0, 10.0);
        let flat = Patch::from_vec(vec![4.0; 16]).unwrap();
        let m = NoiseModel::gaussian(1.0).unwrap();
        let d = Dictionary::new(vec![flat.clone(), x.clone()], 16, 1).unwrap();
        let out = denoise_patch(&x, &d, &m, &DenoiseOptions::default()).unwrap();
        assert_eq!(out.skipped, 1);
        assert_eq!(out.values, x.values());
        let only_flat = Dictionary::new(vec![flat], 16, 1).unwrap();
        assert!(denoise_patch(&x, &only_flat, &m, &DenoiseOptions::default()).is_err());
    }

    #[test]
    fn tiled_self_dictionary_reproduces_image() {
        let img = crate::synthetic::texture(32, 32, 3);
        let tiles = crate::dictionary::extract_patches(&img, 8, 8, 8).unwrap();
        let d = Dictionary::new(tiles, 8, 8).unwrap();
        let m = NoiseModel::gaussian(1e-3).unwrap();
        let out = denoise_image(&img, &d, &m, 8, &DenoiseOptions::default()).unwrap();
        assert_eq!(out.image, img);
        assert_eq!(psnr(&img, &out.image).unwrap(), f64::INFINITY);
    }

    #[test]
    fn constant_image_stays_constant() {
        let img = Image::filled(16, 16, 100.0).unwrap();
        let mut atoms = vec![Patch::new(vec![7.0; 16], 4, 4).unwrap()];
        let mut rng = seeded(7);
        for _ in 0..5 {
            atoms.push(
                Patch::new(
                    (0..16).map(|_| rng.random_range(0.0..255.0)).collect(),
                    4,
                    4,
                )
                .unwrap(),
            );
        }
        let d = Dictionary::new(atoms, 4, 4).unwrap();
        let m = NoiseModel::gaussian(5.0).unwrap();
        let out = denoise_image(&img, &d, &m, 3, &DenoiseOptions::default()).unwrap();
        assert_eq!(out.image, img);
    }

    #[test]
    fn aggregation_is_bit_stable_across_thread_counts() {
        let clean = crate::synthetic::texture(24, 24, 8);
        let gm = NoiseModel::gamma(10.0).unwrap();
        let noisy = Image::new(
            24,
            24,
            sample_with(&gm, clean.pixels(), &mut seeded(1)).unwrap(),
        )
        .unwrap();
        let d = Dictionary::new(
            crate::dictionary::extract_patches(&clean, 6, 6, 6).unwrap(),
            6,
            6,
        )
        .unwrap();
        let run = |threads: usize| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| {
                    denoise_image(&noisy, &d, &gm, 2, &DenoiseOptions::default())
                        .unwrap()
                        .image
                })
        };
        let a = run(1);
        let b = run(4);
        assert!(a
            .pixels()
            .iter()
            .zip(b.pixels())
            .all(|(p, q)| p.to_bits() == q.to_bits()));
    }

    #[test]
    fn psnr_examples() {
        let c = Image::filled(4, 4, 255.0).unwrap();
        assert_eq!(psnr(&c, &c).unwrap(), f64::INFINITY);
        let t = Image::filled(4, 4, 254.0).unwrap();
        assert!((psnr(&c, &t).unwrap() - 48.130_803_608_679_1).abs() < 1e-9);

        // second implementation: accumulate in a different order
        let mut rng = seeded(9);
        let a = Image::new(
            8,
            8,
            (0..64).map(|_| rng.random_range(0.0..255.0)).collect(),
        )
        .unwrap();
        let b = Image::new(
            8,
            8,
            (0..64).map(|_| rng.random_range(0.0..255.0)).collect(),
        )
        .unwrap();
        let peak = a.pixels().iter().rev().fold(0.0f64, |m, v| m.max(*v));
        let mut sse = 0.0;
        for i in (0..64).rev() {
            sse += (a.pixels()[i] - b.pixels()[i]).powi(2);
        }
        let oracle = 20.0 * peak.log10() - 10.0 * (sse / 64.0).log10();
        assert!((psnr(&a, &b).unwrap() - oracle).abs() < 1e-9);
        assert!(psnr(&a, &Image::filled(4, 4, 0.0).unwrap()).is_err());
    }
}
