//! Detection experiment: KL-relaxed labeling of (patch, template) pairs,
//! threshold sweeps and ROC/AUC.

use std::fmt;
use std::io::Write;
use std::ops::RangeInclusive;

use rayon::prelude::*;

use crate::criteria::{score, Criterion};
use crate::dictionary::{random_transform_with, Dictionary};
use crate::error::{Error, Result};
use crate::estimators::{
    fit_affine_gaussian, fit_logaffine_gamma, fit_logaffine_poisson, NewtonConfig,
    RadiometricTransform, TransformFamily,
};
use crate::noise::{kl_divergence, sample_with, NoiseModel};
use crate::rng::{substream, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    /// The template explains the noise-free patch up to a contrast change.
    H0,
    H1,
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::H0 => "H0",
            Label::H1 => "H1",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledPair {
    pub trial: usize,
    pub patch_index: usize,
    pub atom_index: usize,
    pub score: f64,
    pub label: Label,
    pub kl: f64,
}

/// The contrast family each noise model is paired with.
pub fn check_family(model: &NoiseModel, family: TransformFamily) -> Result<()> {
    let ok = matches!(
        (model, family),
        (NoiseModel::Gaussian { .. }, TransformFamily::Affine)
            | (NoiseModel::Gamma { .. }, TransformFamily::LogAffine)
            | (NoiseModel::Poisson, TransformFamily::LogAffine)
    );
    if ok {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "{} noise is not paired with the {} family",
            model.kind().name(),
            family.name()
        )))
    }
}

/// Minimum over contrast changes of the per-pixel KL divergence between
/// `theta` and `T(a)`. The minimizer is the likelihood fit of the noise-free
/// `theta` onto `a`.
pub fn min_kl(
    model: &NoiseModel,
    theta: &[f64],
    a: &[f64],
    family: TransformFamily,
    cfg: &NewtonConfig,
) -> Result<(f64, RadiometricTransform)> {
    check_family(model, family)?;
    let t = match *model {
        NoiseModel::Gaussian { .. } => fit_affine_gaussian(theta, a)?,
        NoiseModel::Gamma { looks } => fit_logaffine_gamma(theta, a, looks, cfg)?.transform,
        NoiseModel::Poisson => fit_logaffine_poisson(theta, a, cfg)?.transform,
    };
    let kl = kl_divergence(model, theta, &t.apply(a))?;
    Ok((kl, t))
}

/// Labels a pair H0 when the minimized KL divergence is at most `nu`.
pub fn label_pair(
    model: &NoiseModel,
    theta: &[f64],
    a: &[f64],
    family: TransformFamily,
    nu: f64,
) -> Result<(Label, f64)> {
    label_pair_with(model, theta, a, family, nu, &NewtonConfig::default())
}

pub fn label_pair_with(
    model: &NoiseModel,
    theta: &[f64],
    a: &[f64],
    family: TransformFamily,
    nu: f64,
    cfg: &NewtonConfig,
) -> Result<(Label, f64)> {
    let (kl, _) = min_kl(model, theta, a, family, cfg)?;
    Ok((if kl <= nu { Label::H0 } else { Label::H1 }, kl))
}

/// Parameters of the detection experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub family: TransformFamily,
    pub trials: usize,
    pub nu: f64,
    pub seed: u64,
    pub alpha_range: RangeInclusive<f64>,
    pub beta_range: RangeInclusive<f64>,
    pub newton: NewtonConfig,
}

impl ExperimentConfig {
    /// Defaults for the given family: 20 trials, `nu = 0.02`, `alpha` in
    /// `[0.5, 2]`, `beta` in `[-64, 64]` (affine) or `[0.5, 2]` (log-affine).
    pub fn new(family: TransformFamily) -> Self {
        Self {
            family,
            trials: 20,
            nu: 0.02,
            seed: 0,
            alpha_range: 0.5..=2.0,
            beta_range: match family {
                TransformFamily::Affine => -64.0..=64.0,
                TransformFamily::LogAffine => 0.5..=2.0,
            },
            newton: NewtonConfig::default(),
        }
    }
}

/// Runs the experiment for several criteria at once. Noise, transforms and
/// labels are shared, so every returned list has identical labels.
///
/// Per trial every atom is randomly transformed into a template and every
/// untransformed atom yields one noisy patch; all (patch, template) pairs
/// are scored. Output order is trial-major, patch-major, template-minor.
pub fn run_detection_experiment_multi(
    dict: &Dictionary,
    model: &NoiseModel,
    criteria: &[Criterion],
    cfg: &ExperimentConfig,
) -> Result<Vec<Vec<LabeledPair>>> {
    check_family(model, cfg.family)?;
    if dict.is_empty() {
        return Err(Error::invalid("empty dictionary"));
    }
    let n = dict.len();
    let mut out: Vec<Vec<LabeledPair>> = criteria
        .iter()
        .map(|_| Vec::with_capacity(cfg.trials * n * n))
        .collect();
    for trial in 0..cfg.trials {
        let base = (trial * n) as u64;
        let templates = dict
            .atoms()
            .iter()
            .enumerate()
            .map(|(j, atom)| {
                let mut rng = substream(cfg.seed, Stream::Transforms, base + j as u64);
                let t =
                    random_transform_with(cfg.family, &cfg.alpha_range, &cfg.beta_range, &mut rng)?;
                Ok(t.apply(atom))
            })
            .collect::<Result<Vec<_>>>()?;

        let rows: Vec<Vec<(Label, f64, Vec<f64>)>> = dict
            .atoms()
            .par_iter()
            .enumerate()
            .map(|(i, theta)| {
                let mut rng = substream(cfg.seed, Stream::Noise, base + i as u64);
                let x = sample_with(model, theta, &mut rng)?;
                templates
                    .iter()
                    .map(|tpl| {
                        let (label, kl) =
                            label_pair_with(model, theta, tpl, cfg.family, cfg.nu, &cfg.newton)?;
                        let scores = criteria
                            .iter()
                            .map(|&c| score(c, model, &x, tpl, &cfg.newton).map(|s| s.value))
                            .collect::<Result<Vec<_>>>()?;
                        Ok((label, kl, scores))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;

        for (i, row) in rows.into_iter().enumerate() {
            for (j, (label, kl, scores)) in row.into_iter().enumerate() {
                for (list, s) in out.iter_mut().zip(scores) {
                    list.push(LabeledPair {
                        trial,
                        patch_index: i,
                        atom_index: j,
                        score: s,
                        label,
                        kl,
                    });
                }
            }
        }
    }
    Ok(out)
}

/// Single-criterion form of [`run_detection_experiment_multi`].
pub fn run_detection_experiment(
    dict: &Dictionary,
    model: &NoiseModel,
    criterion: Criterion,
    cfg: &ExperimentConfig,
) -> Result<Vec<LabeledPair>> {
    Ok(
        run_detection_experiment_multi(dict, model, &[criterion], cfg)?
            .pop()
            .expect("one criterion"),
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub tau: f64,
    pub p_fa: f64,
    pub p_d: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

/// Empirical ROC with mismatch declared when `score < tau`, swept over
/// every observed score and closed at `(1, 1)`.
pub fn roc(pairs: &[LabeledPair]) -> Result<RocCurve> {
    let scored: Vec<(f64, Label)> = pairs.iter().map(|p| (p.score, p.label)).collect();
    roc_from_scores(&scored)
}

pub fn roc_from_scores(scored: &[(f64, Label)]) -> Result<RocCurve> {
    if scored.iter().any(|(s, _)| s.is_nan()) {
        return Err(Error::invalid("NaN score"));
    }
    let n0 = scored.iter().filter(|(_, l)| *l == Label::H0).count();
    let n1 = scored.len() - n0;
    if n0 == 0 || n1 == 0 {
        return Err(Error::SingleClass);
    }
    let mut sorted = scored.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut points = Vec::new();
    let (mut below0, mut below1) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let tau = sorted[i].0;
        points.push(RocPoint {
            tau,
            p_fa: below0 as f64 / n0 as f64,
            p_d: below1 as f64 / n1 as f64,
        });
        while i < sorted.len() && sorted[i].0 == tau {
            match sorted[i].1 {
                Label::H0 => below0 += 1,
                Label::H1 => below1 += 1,
            }
            i += 1;
        }
    }
    points.push(RocPoint {
        tau: f64::INFINITY,
        p_fa: 1.0,
        p_d: 1.0,
    });
    let auc = trapezoid(&points);
    Ok(RocCurve { points, auc })
}

fn trapezoid(points: &[RocPoint]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].p_fa - w[0].p_fa) * (w[1].p_d + w[0].p_d) / 2.0)
        .sum()
}

impl RocCurve {
    /// `tau,p_fa,p_d` rows followed by `# auc=<value>`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "tau,p_fa,p_d")?;
        for p in &self.points {
            writeln!(w, "{},{},{}", p.tau, p.p_fa, p.p_d)?;
        }
        writeln!(w, "# auc={}", self.auc)?;
        Ok(())
    }
}

/// `trial,patch,atom,score,kl,label` rows.
pub fn write_pairs_csv<W: Write>(pairs: &[LabeledPair], mut w: W) -> Result<()> {
    writeln!(w, "trial,patch,atom,score,kl,label")?;
    for p in pairs {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            p.trial, p.patch_index, p.atom_index, p.score, p.kl, p.label
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::patch::Patch;
    use crate::rng::seeded;
    use proptest::prelude::*;
    use rand::Rng;

    fn pairs_from(scores: &[(f64, Label)]) -> Vec<LabeledPair> {
        scores
            .iter()
            .enumerate()
            .map(|(i, &(score, label))| LabeledPair {
                trial: 0,
                patch_index: i,
                atom_index: 0,
                score,
                label,
                kl: 0.0,
            })
            .collect()
    }

    #[test]
    fn roc_examples() {
        let sep = pairs_from(&[
            (0.9, Label::H0),
            (0.8, Label::H0),
            (0.1, Label::H1),
            (0.2, Label::H1),
        ]);
        assert_eq!(roc(&sep).unwrap().auc, 1.0);

        let same = pairs_from(&[(0.5, Label::H0), (0.5, Label::H1), (0.5, Label::H1)]);
        let c = roc(&same).unwrap();
        assert_eq!(c.auc, 0.5);
        assert_eq!(c.points.first().map(|p| (p.p_fa, p.p_d)), Some((0.0, 0.0)));

        let hand = pairs_from(&[
            (0.9, Label::H0),
            (0.8, Label::H0),
            (0.85, Label::H1),
            (0.1, Label::H1),
        ]);
        let c = roc(&hand).unwrap();
        assert!((c.auc - 0.75).abs() < 1e-15);
        let pts: Vec<(f64, f64)> = c.points.iter().map(|p| (p.p_fa, p.p_d)).collect();
        assert_eq!(
            pts,
            vec![(0.0, 0.0), (0.0, 0.5), (0.5, 0.5), (0.5, 1.0), (1.0, 1.0)]
        );

        assert!(matches!(
            roc(&pairs_from(&[(0.1, Label::H0)])),
            Err(Error::SingleClass)
        ));
    }

    #[test]
    fn roc_csv_shape() {
        let hand = pairs_from(&[(0.9, Label::H0), (0.1, Label::H1)]);
        let mut buf = Vec::new();
        roc(&hand).unwrap().write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("tau,p_fa,p_d\n"));
        assert!(s.trim_end().ends_with("# auc=1"));
    }

    #[test]
    fn label_examples() {
        let g = NoiseModel::gaussian(1.0).unwrap();
        let a = [1.0, 3.0, 2.0, 5.0, 4.0, 0.0];
        let theta: Vec<f64> = a.iter().map(|v| 2.0 * v - 1.0).collect();
        let (l, kl) = label_pair(&g, &theta, &a, TransformFamily::Affine, 0.02).unwrap();
        assert_eq!(l, Label::H0);
        assert!(kl < 1e-20);

        let other = [0.0, 1.0, 0.0, 1.0, 0.0, 1.0];
        let (l, kl) = label_pair(&g, &theta, &other, TransformFamily::Affine, 0.0).unwrap();
        assert_eq!(l, Label::H1);
        assert!(kl > 0.0);

        let gm = NoiseModel::gamma(5.0).unwrap();
        let pa: Vec<f64> = a.iter().map(|v| v + 1.0).collect();
        let th: Vec<f64> = pa.iter().map(|v| 0.5 * v.powf(1.7)).collect();
        assert_eq!(
            label_pair(&gm, &th, &pa, TransformFamily::LogAffine, 0.02)
                .unwrap()
                .0,
            Label::H0
        );
        assert_eq!(
            label_pair(
                &NoiseModel::Poisson,
                &th,
                &pa,
                TransformFamily::LogAffine,
                0.02
            )
            .unwrap()
            .0,
            Label::H0
        );
        assert!(label_pair(&gm, &th, &pa, TransformFamily::Affine, 0.02).is_err());
    }

    #[test]
    fn gaussian_label_kl_closed_form() {
        let mut rng = seeded(2);
        let n = 64;
        let sigma = 1.0;
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let u: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        // project u onto span{a, 1}^perp analytically
        let am = a.iter().sum::<f64>() / n as f64;
        let ac: Vec<f64> = a.iter().map(|v| v - am).collect();
        let um = u.iter().sum::<f64>() / n as f64;
        let uc: Vec<f64> = u.iter().map(|v| v - um).collect();
        let k = uc.iter().zip(&ac).map(|(p, q)| p * q).sum::<f64>()
            / ac.iter().map(|v| v * v).sum::<f64>();
        let uperp: Vec<f64> = uc.iter().zip(&ac).map(|(p, q)| p - k * q).collect();
        let eps = 0.05;
        let theta: Vec<f64> = a.iter().zip(&u).map(|(a, u)| a + eps * u).collect();
        let expected =
            eps * eps * uperp.iter().map(|v| v * v).sum::<f64>() / (2.0 * sigma * sigma * n as f64);
        let g = NoiseModel::gaussian(sigma).unwrap();
        let (_, kl) = label_pair(&g, &theta, &a, TransformFamily::Affine, 0.02).unwrap();
        assert!((kl - expected).abs() < 1e-9);
    }

    fn toy_dictionary() -> Dictionary {
        let atoms = vec![
            Patch::new(
                vec![10.0, 20.0, 30.0, 40.0, 50.0, 60.0, 70.0, 80.0, 90.0],
                3,
                3,
            )
            .unwrap(),
            Patch::new(
                vec![90.0, 10.0, 90.0, 10.0, 90.0, 10.0, 90.0, 10.0, 90.0],
                3,
                3,
            )
            .unwrap(),
            Patch::new(
                vec![10.0, 10.0, 90.0, 10.0, 90.0, 90.0, 90.0, 90.0, 10.0],
                3,
                3,
            )
            .unwrap(),
        ];
        Dictionary::new(atoms, 3, 3).unwrap()
    }

    #[test]
    fn experiment_counts_order_and_determinism() {
        let d = toy_dictionary();
        let g = NoiseModel::gaussian(5.0).unwrap();
        let mut cfg = ExperimentConfig::new(TransformFamily::Affine);
        cfg.trials = 4;
        cfg.seed = 3;
        let a = run_detection_experiment(&d, &g, Criterion::Glr, &cfg).unwrap();
        assert_eq!(a.len(), 3 * 3 * 4);
        assert_eq!((a[5].trial, a[5].patch_index, a[5].atom_index), (0, 1, 2));
        assert_eq!((a[9].trial, a[9].patch_index, a[9].atom_index), (1, 0, 0));
        let b = run_detection_experiment(&d, &g, Criterion::Glr, &cfg).unwrap();
        assert_eq!(a, b);
        let multi = run_detection_experiment_multi(&d, &g, &Criterion::ALL, &cfg).unwrap();
        for list in &multi {
            let labels: Vec<Label> = list.iter().map(|p| p.label).collect();
            assert_eq!(labels, a.iter().map(|p| p.label).collect::<Vec<_>>());
        }
        assert_eq!(multi[1], a);
    }

    #[test]
    fn single_atom_identity_is_all_h0() {
        let d = Dictionary::new(vec![toy_dictionary().atoms()[0].clone()], 3, 3).unwrap();
        let g = NoiseModel::gaussian(1.0).unwrap();
        let mut cfg = ExperimentConfig::new(TransformFamily::Affine);
        cfg.trials = 3;
        cfg.alpha_range = 1.0..=1.0;
        cfg.beta_range = 0.0..=0.0;
        cfg.nu = 1e9;
        let p = run_detection_experiment(&d, &g, Criterion::Correlation, &cfg).unwrap();
        assert!(p.iter().all(|p| p.label == Label::H0));
    }

    proptest! {
        #[test]
        fn roc_invariant_under_increasing_map(raw in proptest::collection::vec((-5.0f64..5.0, any::<bool>()), 2..60)) {
            let mut scored: Vec<(f64, Label)> = raw.iter().map(|&(s, b)| (s, if b { Label::H0 } else { Label::H1 })).collect();
            scored[0].1 = Label::H0;
            scored[1].1 = Label::H1;
            let base = roc_from_scores(&scored).unwrap();
            let mapped: Vec<(f64, Label)> = scored.iter().map(|&(s, l)| (s.exp(), l)).collect();
            let other = roc_from_scores(&mapped).unwrap();
            prop_assert!((0.0..=1.0).contains(&base.auc));
            prop_assert_eq!(base.auc, other.auc);
            let strip = |c: &RocCurve| c.points.iter().map(|p| (p.p_fa, p.p_d)).collect::<Vec<_>>();
            prop_assert_eq!(strip(&base), strip(&other));
            for w in base.points.windows(2) {
                prop_assert!(w[1].p_fa >= w[0].p_fa && w[1].p_d >= w[0].p_d);
            }
        }
    }
}
