//! Patch dictionaries: extraction, k-means codebooks, random contrast
//! changes and the `PGLRD1` file format.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::ops::RangeInclusive;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimators::{RadiometricTransform, TransformFamily};
use crate::patch::{Image, Patch};
use crate::rng::{substream, Stream};

pub const MAGIC: &str = "PGLRD1";

/// An ordered collection of equally-sized atoms.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    atoms: Vec<Patch>,
    patch_width: usize,
    patch_height: usize,
    normalized: bool,
}

impl Dictionary {
    pub fn new(atoms: Vec<Patch>, patch_width: usize, patch_height: usize) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::invalid("a dictionary needs at least one atom"));
        }
        for (i, a) in atoms.iter().enumerate() {
            if a.width() != patch_width || a.height() != patch_height {
                return Err(Error::invalid(format!(
                    "atom {i} is {}x{}, expected {patch_width}x{patch_height}",
                    a.width(),
                    a.height()
                )));
            }
        }
        Ok(Self {
            atoms,
            patch_width,
            patch_height,
            normalized: false,
        })
    }

    /// Builds a dictionary from a flat row-major buffer of `count` atoms.
    pub fn from_flat(values: &[f64], patch_width: usize, patch_height: usize) -> Result<Self> {
        let n = patch_width * patch_height;
        if n == 0 || !values.len().is_multiple_of(n) {
            return Err(Error::invalid(
                "flat atom buffer is not a multiple of the patch size",
            ));
        }
        let atoms = values
            .chunks_exact(n)
            .map(|c| Patch::new(c.to_vec(), patch_width, patch_height))
            .collect::<Result<Vec<_>>>()?;
        Self::new(atoms, patch_width, patch_height)
    }

    pub fn atoms(&self) -> &[Patch] {
        &self.atoms
    }

    pub fn atom(&self, index: usize) -> Option<&Patch> {
        self.atoms.get(index)
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn patch_width(&self) -> usize {
        self.patch_width
    }

    pub fn patch_height(&self) -> usize {
        self.patch_height
    }

    pub fn patch_len(&self) -> usize {
        self.patch_width * self.patch_height
    }

    /// Total number of pixel values over all atoms.
    pub fn pixel_count(&self) -> usize {
        self.atoms.len() * self.patch_len()
    }

    pub fn normalized(&self) -> bool {
        self.normalized
    }

    pub fn set_normalized(&mut self, normalized: bool) {
        self.normalized = normalized;
    }

    pub fn max_value(&self) -> f64 {
        self.atoms
            .iter()
            .flat_map(|a| a.iter())
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Raises every value to at least `1e-3 * max`, so the atoms are valid
    /// noise-free parameters for gamma and Poisson noise.
    pub fn floored(mut self) -> Result<Self> {
        let max = self.max_value();
        if !(max > 0.0) {
            return Err(Error::invalid(
                "cannot floor a dictionary without positive values",
            ));
        }
        let eps = 1e-3 * max;
        for atom in &mut self.atoms {
            let v: Vec<f64> = atom.iter().map(|&x| x.max(eps)).collect();
            *atom = atom.with_values(v)?;
        }
        Ok(self)
    }

    /// Multiplies every value by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        let atoms = self
            .atoms
            .iter()
            .map(|a| a.with_values(a.iter().map(|v| v * factor).collect()))
            .collect::<Result<Vec<_>>>()?;
        let mut d = Self::new(atoms, self.patch_width, self.patch_height)?;
        d.normalized = self.normalized;
        Ok(d)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "{MAGIC} {} {} {} {}",
            self.patch_width,
            self.patch_height,
            self.atoms.len(),
            u8::from(self.normalized)
        )?;
        let mut buf = Vec::with_capacity(self.pixel_count() * 8);
        for v in self.atoms.iter().flat_map(|a| a.iter()) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let mut r = BufReader::new(r);
        let mut header = String::new();
        r.read_line(&mut header)?;
        let mut fields = header.split_ascii_whitespace();
        if fields.next() != Some(MAGIC) {
            return Err(Error::format("missing PGLRD1 magic"));
        }
        let mut next = |name: &str| -> Result<usize> {
            fields
                .next()
                .ok_or_else(|| Error::format(format!("dictionary header lacks {name}")))?
                .parse()
                .map_err(|_| Error::format(format!("bad {name} in dictionary header")))
        };
        let (w, h, count) = (
            next("patch width")?,
            next("patch height")?,
            next("atom count")?,
        );
        let normalized = next("normalized flag")? != 0;
        let total = w
            .checked_mul(h)
            .and_then(|n| n.checked_mul(count))
            .ok_or_else(|| Error::format("dictionary header overflows"))?;
        let mut bytes = Vec::with_capacity(total * 8);
        r.read_to_end(&mut bytes)?;
        if bytes.len() != total * 8 {
            return Err(Error::format(format!(
                "dictionary body has {} bytes, expected {}",
                bytes.len(),
                total * 8
            )));
        }
        let values: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let mut d = Self::from_flat(&values, w, h)?;
        d.normalized = normalized;
        Ok(d)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(File::open(path)?)
    }
}

/// Top-left corners of a sliding window along one axis.
pub fn window_positions(
    extent: usize,
    window: usize,
    stride: usize,
    cover_end: bool,
) -> Vec<usize> {
    if window > extent || stride == 0 {
        return Vec::new();
    }
    let last = extent - window;
    let mut pos: Vec<usize> = (0..=last).step_by(stride).collect();
    if cover_end && pos.last() != Some(&last) {
        pos.push(last);
    }
    pos
}

/// Row-major sliding-window patches.
pub fn extract_patches(image: &Image, w: usize, h: usize, stride: usize) -> Result<Vec<Patch>> {
    if stride == 0 {
        return Err(Error::invalid("stride must be >= 1"));
    }
    if w == 0 || h == 0 || w > image.width() || h > image.height() {
        return Err(Error::invalid(format!(
            "{w}x{h} patches do not fit in a {}x{} image",
            image.width(),
            image.height()
        )));
    }
    let xs = window_positions(image.width(), w, stride, false);
    let ys = window_positions(image.height(), h, stride, false);
    let mut out = Vec::with_capacity(xs.len() * ys.len());
    for &y in &ys {
        for &x in &xs {
            out.push(image.window(x, y, w, h)?);
        }
    }
    Ok(out)
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum()
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(p, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// Outcome of a k-means run.
#[derive(Debug, Clone)]
pub struct KMeansResult {
    pub dictionary: Dictionary,
    /// Sum of squared distances after each assignment step.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
}

fn kmeans_pp<R: Rng>(data: &[&[f64]], k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut centroids = vec![data[rng.random_range(0..data.len())].to_vec()];
    let mut d2: Vec<f64> = data.par_iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut idx = d2.iter().rposition(|&d| d > 0.0).unwrap_or(0);
            for (i, &d) in d2.iter().enumerate() {
                acc += d;
                if acc > target && d > 0.0 {
                    idx = i;
                    break;
                }
            }
            idx
        } else {
            rng.random_range(0..data.len())
        };
        let c = data[pick].to_vec();
        d2.par_iter_mut()
            .zip(data.par_iter())
            .for_each(|(d, p)| *d = d.min(sq_dist(p, &c)));
        centroids.push(c);
    }
    centroids
}

/// Lloyd's algorithm with k-means++ seeding. Stops after `max_iters`
/// iterations or when the objective changes by less than 1e-6 relative.
pub fn kmeans(patches: &[Patch], k: usize, seed: u64, max_iters: usize) -> Result<KMeansResult> {
    if k == 0 {
        return Err(Error::invalid("k must be >= 1"));
    }
    if k > patches.len() {
        return Err(Error::invalid(format!(
            "k = {k} exceeds the {} available patches",
            patches.len()
        )));
    }
    let (w, h) = (patches[0].width(), patches[0].height());
    if patches.iter().any(|p| p.width() != w || p.height() != h) {
        return Err(Error::invalid("patches must share one shape"));
    }
    let data: Vec<&[f64]> = patches.iter().map(|p| p.values()).collect();
    let dim = w * h;
    let mut rng = substream(seed, Stream::KMeans, 0);
    let mut centroids = kmeans_pp(&data, k, &mut rng);

    let mut trace = Vec::new();
    let mut iterations = 0;
    for _ in 0..max_iters.max(1) {
        iterations += 1;
        let assign: Vec<(usize, f64)> = data.par_iter().map(|p| nearest(p, &centroids)).collect();
        let objective: f64 = assign.iter().map(|(_, d)| d).sum();
        if let Some(&prev) = trace.last() {
            debug_assert!(
                objective <= prev * (1.0 + 1e-12) + 1e-9,
                "k-means objective increased"
            );
        }
        trace.push(objective);

        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &(j, _)) in data.iter().zip(&assign) {
            counts[j] += 1;
            for (s, v) in sums[j].iter_mut().zip(p.iter()) {
                *s += v;
            }
        }
        let mut taken: Vec<bool> = vec![false; data.len()];
        for j in 0..k {
            if counts[j] > 0 {
                let inv = 1.0 / counts[j] as f64;
                centroids[j] = sums[j].iter().map(|s| s * inv).collect();
            } else {
                // farthest patch from its centroid, lowest index on ties
                let far = assign
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| !taken[*i])
                    .fold(None::<(usize, f64)>, |best, (i, &(_, d))| match best {
                        Some((_, bd)) if bd >= d => best,
                        _ => Some((i, d)),
                    })
                    .map(|(i, _)| i)
                    .unwrap_or(0);
                taken[far] = true;
                centroids[j] = data[far].to_vec();
            }
        }

        if trace.len() >= 2 {
            let prev = trace[trace.len() - 2];
            if (prev - objective).abs() <= 1e-6 * prev.abs() {
                break;
            }
        }
    }

    let atoms = centroids
        .into_iter()
        .map(|c| Patch::new(c, w, h))
        .collect::<Result<Vec<_>>>()?;
    Ok(KMeansResult {
        dictionary: Dictionary::new(atoms, w, h)?,
        objective_trace: trace,
        iterations,
    })
}

/// Cluster centroids of `patches` as a dictionary.
pub fn kmeans_dictionary(
    patches: &[Patch],
    k: usize,
    seed: u64,
    max_iters: usize,
) -> Result<Dictionary> {
    kmeans(patches, k, seed, max_iters).map(|r| r.dictionary)
}

fn check_range(r: &RangeInclusive<f64>, what: &str) -> Result<()> {
    if !r.start().is_finite() || !r.end().is_finite() || r.start() > r.end() {
        return Err(Error::invalid(format!("invalid {what} range {r:?}")));
    }
    Ok(())
}

fn draw<R: Rng + ?Sized>(r: &RangeInclusive<f64>, rng: &mut R) -> f64 {
    if r.start() == r.end() {
        *r.start()
    } else {
        rng.random_range(r.clone())
    }
}

/// Uniform draw of a contrast change from the given parameter ranges.
pub fn random_transform_with<R: Rng + ?Sized>(
    family: TransformFamily,
    alpha_range: &RangeInclusive<f64>,
    beta_range: &RangeInclusive<f64>,
    rng: &mut R,
) -> Result<RadiometricTransform> {
    check_range(alpha_range, "alpha")?;
    check_range(beta_range, "beta")?;
    match family {
        TransformFamily::Affine => {
            if *alpha_range.start() <= 0.0 && *alpha_range.end() >= 0.0 {
                return Err(Error::invalid("affine alpha range must exclude 0"));
            }
        }
        TransformFamily::LogAffine => {
            if *alpha_range.start() <= 0.0 || *beta_range.start() <= 0.0 {
                return Err(Error::invalid(
                    "log-affine ranges must be strictly positive",
                ));
            }
        }
    }
    let alpha = draw(alpha_range, rng);
    let beta = draw(beta_range, rng);
    RadiometricTransform::new(family, alpha, beta)
}

/// Seeded variant of [`random_transform_with`].
pub fn random_transform(
    family: TransformFamily,
    seed: u64,
    alpha_range: &RangeInclusive<f64>,
    beta_range: &RangeInclusive<f64>,
) -> Result<RadiometricTransform> {
    random_transform_with(
        family,
        alpha_range,
        beta_range,
        &mut substream(seed, Stream::Transforms, 0),
    )
}
