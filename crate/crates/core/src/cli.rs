//! The `patchglr` command line: `dict-build`, `match`, `roc` and `denoise`.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::criteria::{best_match, Criterion};
use crate::denoise::{denoise_image, fmt_db, report, DenoiseCriterion, DenoiseOptions};
use crate::dictionary::{extract_patches, kmeans_dictionary, window_positions, Dictionary};
use crate::error::{Error, Result};
use crate::estimators::{NewtonConfig, TransformFamily};
use crate::eval::{roc, run_detection_experiment, write_pairs_csv, ExperimentConfig};
use crate::io::{decode_pgm, read_image, write_atomic, write_image, ImageFormat};
use crate::noise::{calibrate_snr, NoiseKind, NoiseModel};
use crate::patch::Image;

/// Synthetic 256x256 texture shipped with the crate.
pub const BUNDLED_TEXTURE: &[u8] = include_bytes!("../data/texture.pgm");

/// Seed of the generator that produced [`BUNDLED_TEXTURE`].
pub const BUNDLED_TEXTURE_SEED: u64 = 2012;

pub fn bundled_texture() -> Result<Image> {
    decode_pgm(BUNDLED_TEXTURE)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Command {
    DictBuild,
    Match,
    Roc,
    Denoise,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum NoiseArg {
    Gaussian,
    Gamma,
    Poisson,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CriterionArg {
    Corr,
    Glr,
    StabCorr,
    StabGlr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FamilyArg {
    Affine,
    LogAffine,
}

#[derive(Parser)]
#[command(
    name = "patchglr",
    version,
    about = "Contrast-invariant patch matching and denoising"
)]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Cluster the patches of an image into a dictionary (k-means).
    DictBuild(Opts),
    /// Find the best atom for every window of an image.
    Match(Opts),
    /// Run the detection experiment and write its ROC curve.
    Roc(Opts),
    /// Denoise an image with the dictionary posterior-mean estimator.
    Denoise(Opts),
}

#[derive(Args, Debug)]
#[command(allow_negative_numbers = true)]
struct Opts {
    /// Noise family.
    #[arg(long, value_enum, default_value = "gaussian")]
    noise: NoiseArg,
    /// Gaussian standard deviation.
    #[arg(long)]
    sigma: Option<f64>,
    /// Number of looks of the gamma noise.
    #[arg(long)]
    looks: Option<f64>,
    /// Matching criterion.
    #[arg(long, value_enum, default_value = "glr")]
    criterion: CriterionArg,
    /// Transform family; defaults to affine for Gaussian noise and
    /// log-affine otherwise.
    #[arg(long, value_enum)]
    family: Option<FamilyArg>,
    /// Seed of every random stream.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Detection-experiment repetitions.
    #[arg(long, default_value_t = 20)]
    trials: usize,
    /// KL threshold separating matches from mismatches.
    #[arg(long, default_value_t = 0.02)]
    nu: f64,
    /// Recalibrate the noise parameter to this dictionary SNR (dB).
    #[arg(long)]
    snr_db: Option<f64>,
    /// Dictionary size for dict-build.
    #[arg(long, default_value_t = 196)]
    k: usize,
    /// Patch side for dict-build.
    #[arg(long, default_value_t = 8)]
    patch: usize,
    /// Maximum k-means iterations.
    #[arg(long, default_value_t = 100)]
    max_iters: usize,
    /// Window stride; defaults to 2 for dict-build, 1 for denoise and the
    /// patch width for match.
    #[arg(long)]
    stride: Option<usize>,
    /// Weight temperature for denoise.
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
    /// Dictionary file.
    #[arg(long)]
    dict: Option<PathBuf>,
    /// Input image (PGM or MATRIX text); dict-build defaults to the
    /// bundled texture.
    #[arg(long, alias = "image")]
    input: Option<PathBuf>,
    /// Clean reference image for PSNR reporting.
    #[arg(long)]
    clean: Option<PathBuf>,
    /// Output file.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-pair CSV written by roc.
    #[arg(long)]
    pairs_out: Option<PathBuf>,
    /// Worker threads; falls back to PATCHGLR_THREADS, then all cores.
    #[arg(long)]
    threads: Option<usize>,
}

/// Noise parameters as given on the command line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub sigma: Option<f64>,
    pub looks: Option<f64>,
}

impl NoiseSpec {
    /// The model, or an error naming the missing parameter.
    pub fn model(&self) -> Result<NoiseModel> {
        match self.kind {
            NoiseKind::Gaussian => NoiseModel::gaussian(
                self.sigma
                    .ok_or_else(|| Error::invalid("--noise gaussian requires --sigma"))?,
            ),
            NoiseKind::Gamma => NoiseModel::gamma(
                self.looks
                    .ok_or_else(|| Error::invalid("--noise gamma requires --looks"))?,
            ),
            NoiseKind::Poisson => Ok(NoiseModel::poisson()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Paths {
    pub dict: Option<PathBuf>,
    pub input: Option<PathBuf>,
    pub clean: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub pairs_out: Option<PathBuf>,
}

/// Fully validated invocation. Defaults: gaussian noise, `glr`, seed 0,
/// 20 trials, `nu = 0.02`, `k = 196`, 8x8 patches, 100 k-means
/// iterations, temperature 1.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    pub noise: NoiseSpec,
    pub criterion: Criterion,
    pub family: TransformFamily,
    pub seed: u64,
    pub paths: Paths,
    pub nu: f64,
    pub snr_db: Option<f64>,
    pub trials: usize,
    pub stride: usize,
    pub temperature: f64,
    pub k: usize,
    pub patch: usize,
    pub max_iters: usize,
    pub threads: Option<usize>,
}

/// Parsing stopped: either help/version output (code 0) or a usage error.
#[derive(Debug, Clone, PartialEq)]
pub struct ParseError {
    pub code: i32,
    pub message: String,
}

fn usage(message: impl Into<String>) -> ParseError {
    ParseError {
        code: 1,
        message: message.into(),
    }
}

/// Maps `argv` (program name first) to a [`RunConfig`].
pub fn parse_args<I, T>(argv: I) -> std::result::Result<RunConfig, ParseError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(argv).map_err(|e| match e.kind() {
        clap::error::ErrorKind::DisplayHelp
        | clap::error::ErrorKind::DisplayVersion
        | clap::error::ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => ParseError {
            code: if e.kind() == clap::error::ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand {
                1
            } else {
                0
            },
            message: e.to_string(),
        },
        _ => {
            let text = e.to_string();
            let first = text
                .lines()
                .find(|l| !l.trim().is_empty())
                .unwrap_or("invalid arguments");
            usage(first.trim_start_matches("error: ").to_string())
        }
    })?;
    let (command, o) = match cli.command {
        Sub::DictBuild(o) => (Command::DictBuild, o),
        Sub::Match(o) => (Command::Match, o),
        Sub::Roc(o) => (Command::Roc, o),
        Sub::Denoise(o) => (Command::Denoise, o),
    };
    build_config(command, o)
}

fn positive(name: &str, v: f64) -> std::result::Result<f64, ParseError> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(usage(format!(
            "--{name} must be a positive number, got {v}"
        )))
    }
}

fn build_config(command: Command, o: Opts) -> std::result::Result<RunConfig, ParseError> {
    let kind = match o.noise {
        NoiseArg::Gaussian => NoiseKind::Gaussian,
        NoiseArg::Gamma => NoiseKind::Gamma,
        NoiseArg::Poisson => NoiseKind::Poisson,
    };
    let noise = NoiseSpec {
        kind,
        sigma: o.sigma.map(|s| positive("sigma", s)).transpose()?,
        looks: o.looks.map(|l| positive("looks", l)).transpose()?,
    };
    let uses_noise = matches!(command, Command::Match | Command::Roc | Command::Denoise);
    if uses_noise {
        match kind {
            NoiseKind::Gamma if noise.looks.is_none() => {
                return Err(usage("--noise gamma requires --looks"))
            }
            NoiseKind::Gaussian
                if noise.sigma.is_none() && !(command == Command::Roc && o.snr_db.is_some()) =>
            {
                return Err(usage("--noise gaussian requires --sigma"))
            }
            _ => {}
        }
    }
    let native = if kind == NoiseKind::Gaussian {
        TransformFamily::Affine
    } else {
        TransformFamily::LogAffine
    };
    let family = match o.family {
        None => native,
        Some(FamilyArg::Affine) => TransformFamily::Affine,
        Some(FamilyArg::LogAffine) => TransformFamily::LogAffine,
    };
    if family != native {
        return Err(usage(format!(
            "--family {} does not match --noise {}",
            family.name(),
            kind.name()
        )));
    }
    let criterion = match o.criterion {
        CriterionArg::Corr => Criterion::Correlation,
        CriterionArg::Glr => Criterion::Glr,
        CriterionArg::StabCorr => Criterion::StabilizedCorrelation,
        CriterionArg::StabGlr => Criterion::StabilizedGlr,
    };
    if command == Command::Denoise
        && !matches!(criterion, Criterion::Glr | Criterion::StabilizedGlr)
    {
        return Err(usage("denoise supports --criterion glr or stab-glr"));
    }
    if !(o.nu > 0.0 && o.nu.is_finite()) {
        return Err(usage(format!(
            "--nu must be a positive number, got {}",
            o.nu
        )));
    }
    if let Some(s) = o.snr_db {
        if !s.is_finite() {
            return Err(usage("--snr-db must be finite"));
        }
    }
    positive("temperature", o.temperature)?;
    for (name, v) in [
        ("trials", o.trials),
        ("k", o.k),
        ("patch", o.patch),
        ("max-iters", o.max_iters),
    ] {
        if v == 0 {
            return Err(usage(format!("--{name} must be >= 1")));
        }
    }
    if o.patch * o.patch < 2 {
        return Err(usage("--patch must be >= 2"));
    }
    if o.stride == Some(0) {
        return Err(usage("--stride must be >= 1"));
    }
    if o.threads == Some(0) {
        return Err(usage("--threads must be >= 1"));
    }
    let require = |p: &Option<PathBuf>, flag: &str| -> std::result::Result<(), ParseError> {
        if p.is_none() {
            Err(usage(format!("missing required path --{flag}")))
        } else {
            Ok(())
        }
    };
    match command {
        Command::DictBuild => require(&o.out, "out")?,
        Command::Match => {
            require(&o.dict, "dict")?;
            require(&o.input, "input")?;
        }
        Command::Roc => {
            require(&o.dict, "dict")?;
            require(&o.out, "out")?;
        }
        Command::Denoise => {
            require(&o.dict, "dict")?;
            require(&o.input, "input")?;
            require(&o.out, "out")?;
        }
    }
    let stride = o.stride.unwrap_or(match command {
        Command::DictBuild => 2,
        Command::Denoise => 1,
        Command::Match | Command::Roc => 0,
    });
    Ok(RunConfig {
        command,
        noise,
        criterion,
        family,
        seed: o.seed,
        paths: Paths {
            dict: o.dict,
            input: o.input,
            clean: o.clean,
            out: o.out,
            pairs_out: o.pairs_out,
        },
        nu: o.nu,
        snr_db: o.snr_db,
        trials: o.trials,
        stride,
        temperature: o.temperature,
        k: o.k,
        patch: o.patch,
        max_iters: o.max_iters,
        threads: o.threads,
    })
}

/// Exit status for a failed run: 1 usage, 2 I/O or format, 3 numeric.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidInput(_) => 1,
        Error::Io(_) | Error::Format(_) => 2,
        Error::DimensionMismatch { .. }
        | Error::Domain(_)
        | Error::DegenerateAtom(_)
        | Error::Convergence { .. }
        | Error::SingleClass => 3,
    }
}

fn thread_count(cfg: &RunConfig) -> std::result::Result<Option<usize>, Error> {
    if let Some(t) = cfg.threads {
        return Ok(Some(t));
    }
    match std::env::var("PATCHGLR_THREADS") {
        Ok(v) if !v.trim().is_empty() => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Error::invalid(format!(
                "PATCHGLR_THREADS must be a positive integer, got '{v}'"
            ))),
        },
        _ => Ok(None),
    }
}

/// Executes the command and returns its one-line summary.
pub fn execute(cfg: &RunConfig) -> Result<String> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_count(cfg)? {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    pool.install(|| match cfg.command {
        Command::DictBuild => dict_build(cfg),
        Command::Match => match_cmd(cfg),
        Command::Roc => roc_cmd(cfg),
        Command::Denoise => denoise_cmd(cfg),
    })
}

/// Runs the command, prints the summary or a diagnostic, and returns the
/// process exit status.
pub fn run(cfg: &RunConfig) -> i32 {
    match execute(cfg) {
        Ok(summary) => {
            println!("{summary}");
            0
        }
        Err(e) => {
            eprintln!("patchglr: {e}");
            exit_code(&e)
        }
    }
}

/// Full entry point used by the binary.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match parse_args(argv) {
        Ok(cfg) => run(&cfg),
        Err(e) if e.code == 0 => {
            print!("{}", e.message);
            0
        }
        Err(e) => {
            eprintln!(
                "patchglr: {}",
                e.message.lines().next().unwrap_or("").trim_end()
            );
            e.code
        }
    }
}

fn path(p: &Option<PathBuf>) -> &Path {
    p.as_deref().expect("validated by parse_args")
}

fn dict_build(cfg: &RunConfig) -> Result<String> {
    let image = match &cfg.paths.input {
        Some(p) => read_image(p)?,
        None => bundled_texture()?,
    };
    let patches = extract_patches(&image, cfg.patch, cfg.patch, cfg.stride)?;
    let dict = kmeans_dictionary(&patches, cfg.k, cfg.seed, cfg.max_iters)?;
    write_atomic(path(&cfg.paths.out), |w| dict.write_to(w))?;
    Ok(format!(
        "atoms={} size={}x{}",
        dict.len(),
        dict.patch_width(),
        dict.patch_height()
    ))
}

fn match_cmd(cfg: &RunConfig) -> Result<String> {
    let dict = Dictionary::load(path(&cfg.paths.dict))?;
    let image = read_image(path(&cfg.paths.input))?;
    let model = cfg.noise.model()?;
    let (pw, ph) = (dict.patch_width(), dict.patch_height());
    if image.width() < pw || image.height() < ph {
        return Err(Error::invalid("input is smaller than one atom"));
    }
    let stride = if cfg.stride == 0 { pw } else { cfg.stride };
    let newton = NewtonConfig::default();
    let mut rows = Vec::new();
    for y in window_positions(
        image.height(),
        ph,
        if cfg.stride == 0 { ph } else { stride },
        true,
    ) {
        for x in window_positions(image.width(), pw, stride, true) {
            let p = image.window(x, y, pw, ph)?;
            let (idx, s) = best_match(cfg.criterion, &model, &p, &dict, &newton)?;
            rows.push((x, y, idx, s.value));
        }
    }
    if let Some(out) = &cfg.paths.out {
        write_atomic(out, |w| {
            writeln!(w, "x,y,atom,score")?;
            for (x, y, i, s) in &rows {
                writeln!(w, "{x},{y},{i},{s}")?;
            }
            Ok(())
        })?;
    }
    let (_, _, idx, s) = rows[0];
    Ok(format!("windows={} best={idx} score={s:.6}", rows.len()))
}

fn roc_cmd(cfg: &RunConfig) -> Result<String> {
    let mut dict = Dictionary::load(path(&cfg.paths.dict))?;
    let model = match cfg.snr_db {
        Some(db) => {
            let cal = calibrate_snr(cfg.noise.kind, &dict, db)?;
            if cal.intensity_scale != 1.0 {
                dict = dict.scaled(cal.intensity_scale)?;
            }
            cal.model
        }
        None => cfg.noise.model()?,
    };
    let exp = ExperimentConfig {
        trials: cfg.trials,
        nu: cfg.nu,
        seed: cfg.seed,
        ..ExperimentConfig::new(cfg.family)
    };
    let pairs = run_detection_experiment(&dict, &model, cfg.criterion, &exp)?;
    let curve = roc(&pairs)?;
    write_atomic(path(&cfg.paths.out), |w| curve.write_csv(w))?;
    if let Some(p) = &cfg.paths.pairs_out {
        write_atomic(p, |w| write_pairs_csv(&pairs, w))?;
    }
    Ok(format!("auc={:.6}", curve.auc))
}

fn denoise_cmd(cfg: &RunConfig) -> Result<String> {
    let dict = Dictionary::load(path(&cfg.paths.dict))?;
    let noisy = read_image(path(&cfg.paths.input))?;
    let clean = cfg.paths.clean.as_ref().map(read_image).transpose()?;
    let model = cfg.noise.model()?;
    let opts = DenoiseOptions {
        criterion: match cfg.criterion {
            Criterion::StabilizedGlr => DenoiseCriterion::StabilizedGlr,
            _ => DenoiseCriterion::Glr,
        },
        temperature: cfg.temperature,
        newton: NewtonConfig::default(),
    };
    let out = denoise_image(&noisy, &dict, &model, cfg.stride, &opts)?;
    let out_path = path(&cfg.paths.out);
    write_image(out_path, &out.image, ImageFormat::from_path(out_path))?;
    match clean {
        Some(clean) => {
            let r = report(&clean, &noisy, &out)?;
            Ok(format!(
                "psnr={} {r} skipped={}",
                fmt_db(r.psnr_denoised),
                out.skipped_atoms
            ))
        }
        None => Ok(format!(
            "patches={} skipped={}",
            out.patches, out.skipped_atoms
        )),
    }
}
