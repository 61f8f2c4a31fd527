//! C ABI over `patchglr`.
//!
//! Every function returns a [`PglrStatus`]; on failure a message is kept
//! per thread and can be read with [`pglr_last_error_message`]. Results are
//! written through out-pointers. Dictionaries are opaque handles released
//! with [`pglr_dictionary_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use patchglr::criteria::{best_match, glr, score, Criterion};
use patchglr::denoise::{denoise_patch, DenoiseCriterion, DenoiseOptions};
use patchglr::{Dictionary, Error, NewtonConfig, NoiseModel, Patch};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PglrStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    DimensionMismatch = 3,
    Domain = 4,
    DegenerateAtom = 5,
    Convergence = 6,
    Format = 7,
    Io = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PglrNoiseKind {
    Gaussian = 0,
    Gamma = 1,
    Poisson = 2,
}

/// `param` is sigma for Gaussian noise, the number of looks for gamma
/// noise and ignored for Poisson noise.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct PglrNoiseModel {
    pub kind: PglrNoiseKind,
    pub param: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PglrCriterion {
    Correlation = 0,
    Glr = 1,
    StabilizedCorrelation = 2,
    StabilizedGlr = 3,
}

/// Opaque dictionary handle.
pub struct PglrDictionary {
    inner: Dictionary,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior NUL");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> PglrStatus {
    match err {
        Error::InvalidInput(_) | Error::SingleClass => PglrStatus::InvalidInput,
        Error::DimensionMismatch { .. } => PglrStatus::DimensionMismatch,
        Error::Domain(_) => PglrStatus::Domain,
        Error::DegenerateAtom(_) => PglrStatus::DegenerateAtom,
        Error::Convergence { .. } => PglrStatus::Convergence,
        Error::Format(_) => PglrStatus::Format,
        Error::Io(_) => PglrStatus::Io,
    }
}

enum Failure {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> PglrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PglrStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            PglrStatus::NullPointer
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".to_string());
            PglrStatus::Panic
        }
    }
}

fn model_of(m: PglrNoiseModel) -> Result<NoiseModel, Error> {
    match m.kind {
        PglrNoiseKind::Gaussian => NoiseModel::gaussian(m.param),
        PglrNoiseKind::Gamma => NoiseModel::gamma(m.param),
        PglrNoiseKind::Poisson => Ok(NoiseModel::poisson()),
    }
}

fn criterion_of(c: PglrCriterion) -> Criterion {
    match c {
        PglrCriterion::Correlation => Criterion::Correlation,
        PglrCriterion::Glr => Criterion::Glr,
        PglrCriterion::StabilizedCorrelation => Criterion::StabilizedCorrelation,
        PglrCriterion::StabilizedGlr => Criterion::StabilizedGlr,
    }
}

unsafe fn slice<'a>(p: *const f64, n: usize, what: &'static str) -> Result<&'a [f64], Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn dict<'a>(d: *const PglrDictionary) -> Result<&'a Dictionary, Failure> {
    d.as_ref()
        .map(|d| &d.inner)
        .ok_or(Failure::Null("dictionary"))
}

unsafe fn path<'a>(p: *const c_char) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::Null("path"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::Lib(Error::InvalidInput("path is not UTF-8".into())))
}

unsafe fn write<T>(out: *mut T, v: T, what: &'static str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::Null(what));
    }
    out.write(v);
    Ok(())
}

/// Message of the last failed call on this thread, or NULL. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn pglr_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pglr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds a dictionary from `count` atoms of `width * height` values each,
/// stored contiguously in row-major order.
///
/// # Safety
/// `values` must point to `count * width * height` doubles and `out` must
/// be writable.
#[no_mangle]
pub unsafe extern "C" fn pglr_dictionary_from_atoms(
    values: *const f64,
    count: usize,
    width: usize,
    height: usize,
    out: *mut *mut PglrDictionary,
) -> PglrStatus {
    guard(|| {
        let len = count
            .checked_mul(width)
            .and_then(|v| v.checked_mul(height))
            .ok_or_else(|| Error::InvalidInput("dictionary size overflows".into()))?;
        let v = slice(values, len, "values")?;
        let d = Dictionary::from_flat(v, width, height)?;
        write(
            out,
            Box::into_raw(Box::new(PglrDictionary { inner: d })),
            "out",
        )
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pglr_dictionary_load(
    path_: *const c_char,
    out: *mut *mut PglrDictionary,
) -> PglrStatus {
    guard(|| {
        let d = Dictionary::load(path(path_)?)?;
        write(
            out,
            Box::into_raw(Box::new(PglrDictionary { inner: d })),
            "out",
        )
    })
}

/// # Safety
/// `d` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn pglr_dictionary_save(
    d: *const PglrDictionary,
    path_: *const c_char,
) -> PglrStatus {
    guard(|| Ok(dict(d)?.save(path(path_)?)?))
}

/// Releases a handle; NULL is ignored.
///
/// # Safety
/// `d` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn pglr_dictionary_free(d: *mut PglrDictionary) {
    if !d.is_null() {
        drop(Box::from_raw(d));
    }
}

/// Number of atoms, or 0 for NULL.
///
/// # Safety
/// `d` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pglr_dictionary_count(d: *const PglrDictionary) -> usize {
    d.as_ref().map_or(0, |d| d.inner.len())
}

/// # Safety
/// `d` must be a live handle; `width` and `height` writable.
#[no_mangle]
pub unsafe extern "C" fn pglr_dictionary_patch_size(
    d: *const PglrDictionary,
    width: *mut usize,
    height: *mut usize,
) -> PglrStatus {
    guard(|| {
        let d = dict(d)?;
        write(width, d.patch_width(), "width")?;
        write(height, d.patch_height(), "height")
    })
}

/// Copies atom `index` into `out`, which holds `len` doubles.
///
/// # Safety
/// `d` must be a live handle and `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn pglr_dictionary_atom(
    d: *const PglrDictionary,
    index: usize,
    out: *mut f64,
    len: usize,
) -> PglrStatus {
    guard(|| {
        let d = dict(d)?;
        let atom = d
            .atom(index)
            .ok_or_else(|| Error::InvalidInput(format!("atom index {index} out of range")))?;
        if len != atom.len() {
            return Err(Error::DimensionMismatch {
                expected: atom.len(),
                found: len,
            }
            .into());
        }
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        std::slice::from_raw_parts_mut(out, len).copy_from_slice(atom);
        Ok(())
    })
}

/// Scores `x` against `a` (both of length `n`). Higher is a better match.
/// `neg_log_glr` may be NULL; it receives NaN for correlation criteria.
///
/// # Safety
/// `x` and `a` must hold `n` doubles; `value` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pglr_score(
    criterion: PglrCriterion,
    model: PglrNoiseModel,
    x: *const f64,
    a: *const f64,
    n: usize,
    value: *mut f64,
    neg_log_glr: *mut f64,
) -> PglrStatus {
    guard(|| {
        let s = score(
            criterion_of(criterion),
            &model_of(model)?,
            slice(x, n, "x")?,
            slice(a, n, "a")?,
            &NewtonConfig::default(),
        )?;
        write(value, s.value, "value")?;
        if !neg_log_glr.is_null() {
            neg_log_glr.write(s.neg_log_glr.unwrap_or(f64::NAN));
        }
        Ok(())
    })
}

/// Index and score of the best atom for `x`; ties go to the lowest index.
///
/// # Safety
/// `x` must hold `n` doubles, `d` must be a live handle, outputs writable.
#[no_mangle]
pub unsafe extern "C" fn pglr_best_match(
    criterion: PglrCriterion,
    model: PglrNoiseModel,
    x: *const f64,
    n: usize,
    d: *const PglrDictionary,
    index: *mut usize,
    value: *mut f64,
) -> PglrStatus {
    guard(|| {
        let (i, s) = best_match(
            criterion_of(criterion),
            &model_of(model)?,
            slice(x, n, "x")?,
            dict(d)?,
            &NewtonConfig::default(),
        )?;
        write(index, i, "index")?;
        write(value, s.value, "value")
    })
}

/// Maximum-likelihood contrast change mapping `a` onto `x`: affine for
/// Gaussian noise (`alpha * a + beta`), log-affine otherwise
/// (`beta * a^alpha`).
///
/// # Safety
/// `x` and `a` must hold `n` doubles; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn pglr_fit(
    model: PglrNoiseModel,
    x: *const f64,
    a: *const f64,
    n: usize,
    alpha: *mut f64,
    beta: *mut f64,
) -> PglrStatus {
    guard(|| {
        let s = glr(
            &model_of(model)?,
            slice(x, n, "x")?,
            slice(a, n, "a")?,
            &NewtonConfig::default(),
        )?;
        let t = s.fitted.expect("GLR scores carry their fit");
        write(alpha, t.alpha, "alpha")?;
        write(beta, t.beta, "beta")
    })
}

/// Posterior-mean estimate of the patch `x` (length `n`) written to `out`.
/// `criterion` must be `Glr` or `StabilizedGlr`.
///
/// # Safety
/// `x` and `out` must hold `n` doubles and `d` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn pglr_denoise_patch(
    model: PglrNoiseModel,
    criterion: PglrCriterion,
    temperature: f64,
    x: *const f64,
    n: usize,
    d: *const PglrDictionary,
    out: *mut f64,
) -> PglrStatus {
    guard(|| {
        let criterion = match criterion {
            PglrCriterion::Glr => DenoiseCriterion::Glr,
            PglrCriterion::StabilizedGlr => DenoiseCriterion::StabilizedGlr,
            _ => {
                return Err(
                    Error::InvalidInput("denoising needs Glr or StabilizedGlr".into()).into(),
                )
            }
        };
        let d = dict(d)?;
        let x = Patch::new(
            slice(x, n, "x")?.to_vec(),
            d.patch_width(),
            d.patch_height(),
        )?;
        let opts = DenoiseOptions {
            criterion,
            temperature,
            newton: NewtonConfig::default(),
        };
        let r = denoise_patch(&x, d, &model_of(model)?, &opts)?;
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        std::slice::from_raw_parts_mut(out, n).copy_from_slice(&r.values);
        Ok(())
    })
}
