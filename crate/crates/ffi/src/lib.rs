//! C ABI over `sis-core`.
//!
//! Models and calibrations are opaque heap handles owned by the caller and
//! released with the matching `*_free` function. Every entry point returns a
//! [`SisStatus`]; on failure a message is available from [`sis_last_error`] on the
//! same thread until the next failing call. Panics never cross the boundary.
//!
//! The header is generated into `include/sis.h` by the build script.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use sis_core::cli::FitEntry;
use sis_core::estimators::IsOptions;
use sis_core::models::Transformation;
use sis_core::pipeline::{
    calibrate, BuiltModel, Calibration, CalibrationSettings, Estimator, Method, ModelConfig,
    PortfolioConfig, Target,
};
use sis_core::rng::{std_normal_cdf, std_normal_quantile, SourceKind};
use sis_core::SisError;

/// Result codes. Zero is success.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SisStatus {
    Ok = 0,
    InvalidArgument = 1,
    NoSignal = 2,
    CalibrationFailed = 3,
    SupportViolation = 4,
    IllConditioned = 5,
    Io = 6,
    Parse = 7,
    NullPointer = 8,
    Panic = 9,
}

/// Estimation methods.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SisMethod {
    Mc = 0,
    SisStar = 1,
    SsisStar = 2,
    SisMu = 3,
    SsisMu = 4,
    SisMuSigma = 5,
    SsisMuSigma = 6,
    GlIs = 7,
    Cmc = 8,
    CmcSis = 9,
    CmcSsis = 10,
}

/// Uniform point generator used for estimation.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SisRng {
    Pseudo = 0,
    Sobol = 1,
}

/// One estimate. `wall_time` is in seconds.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SisResult {
    pub estimate: f64,
    pub variance_estimate: f64,
    pub ci_halfwidth: f64,
    pub n: usize,
    pub debias_added: f64,
    pub wall_time: f64,
}

/// Opaque model handle.
pub struct SisModel {
    config: ModelConfig,
    built: BuiltModel,
    hash: String,
}

/// Opaque calibration handle for one threshold and target.
pub struct SisCalibration {
    inner: Calibration,
}

impl From<SisMethod> for Method {
    fn from(m: SisMethod) -> Self {
        match m {
            SisMethod::Mc => Method::Mc,
            SisMethod::SisStar => Method::SisStar,
            SisMethod::SsisStar => Method::SsisStar,
            SisMethod::SisMu => Method::SisMu,
            SisMethod::SsisMu => Method::SsisMu,
            SisMethod::SisMuSigma => Method::SisMuSigma,
            SisMethod::SsisMuSigma => Method::SsisMuSigma,
            SisMethod::GlIs => Method::GlIs,
            SisMethod::Cmc => Method::Cmc,
            SisMethod::CmcSis => Method::CmcSis,
            SisMethod::CmcSsis => Method::CmcSsis,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    // Interior NULs would truncate the message; replace them.
    let msg = CString::new(msg.replace('\0', " ")).expect("NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn status_of(err: &SisError) -> SisStatus {
    match err {
        SisError::InvalidArgument(_) => SisStatus::InvalidArgument,
        SisError::NoSignal(_) => SisStatus::NoSignal,
        SisError::CalibrationFailed(_) => SisStatus::CalibrationFailed,
        SisError::SupportViolation { .. } => SisStatus::SupportViolation,
        SisError::IllConditioned(_) => SisStatus::IllConditioned,
        SisError::Io(_) => SisStatus::Io,
        SisError::Parse(_) => SisStatus::Parse,
    }
}

enum Failure {
    Sis(SisError),
    Null(&'static str),
}

impl From<SisError> for Failure {
    fn from(e: SisError) -> Self {
        Failure::Sis(e)
    }
}

/// Runs `f`, recording any error or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SisStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SisStatus::Ok,
        Ok(Err(Failure::Sis(e))) => {
            let status = status_of(&e);
            set_last_error(e.to_string());
            status
        }
        Ok(Err(Failure::Null(name))) => {
            set_last_error(format!("null pointer passed for '{name}'"));
            SisStatus::NullPointer
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".to_string());
            set_last_error(format!("internal panic: {msg}"));
            SisStatus::Panic
        }
    }
}

unsafe fn non_null<'a, T>(p: *const T, name: &'static str) -> Result<&'a T, Failure> {
    // SAFETY: caller guarantees `p` is either null or valid for the call.
    unsafe { p.as_ref() }.ok_or(Failure::Null(name))
}

unsafe fn out_ptr<'a, T>(p: *mut T, name: &'static str) -> Result<&'a mut T, Failure> {
    // SAFETY: caller guarantees `p` is either null or valid and writable.
    unsafe { p.as_mut() }.ok_or(Failure::Null(name))
}

unsafe fn read_str<'a>(p: *const c_char, name: &'static str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::Null(name));
    }
    // SAFETY: caller guarantees a NUL-terminated string.
    unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| Failure::Sis(SisError::InvalidArgument(format!("'{name}' is not UTF-8"))))
}

fn new_model(config: ModelConfig, out: &mut *mut SisModel) -> Result<(), Failure> {
    let built = config.build()?;
    let hash = config.hash()?;
    *out = Box::into_raw(Box::new(SisModel {
        config,
        built,
        hash,
    }));
    Ok(())
}

fn portfolio(h: usize, d: usize, loadings_seed: u64) -> PortfolioConfig {
    PortfolioConfig::standard(h, d, loadings_seed)
}

/// Message for the most recent failure on this thread, or NULL if none.
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn sis_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Releases a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must be NULL or a string returned by this library that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn sis_string_free(s: *mut c_char) {
    if !s.is_null() {
        // SAFETY: allocated by CString::into_raw in this crate.
        drop(unsafe { CString::from_raw(s) });
    }
}

/// Linear model `Ψ(X) = 1{αX₁ + √(1−α²)X₂ > l}`.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sis_model_linear_new(alpha: f64, out: *mut *mut SisModel) -> SisStatus {
    guard(|| {
        let out = unsafe { out_ptr(out, "out") }?;
        new_model(ModelConfig::linear(alpha), out)
    })
}

/// Gaussian copula credit model with the standard random portfolio.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sis_model_gaussian_credit_new(
    h: usize,
    d: usize,
    loadings_seed: u64,
    out: *mut *mut SisModel,
) -> SisStatus {
    guard(|| {
        let out = unsafe { out_ptr(out, "out") }?;
        let config = ModelConfig::GaussianCredit {
            portfolio: portfolio(h, d, loadings_seed),
        };
        new_model(config, out)
    })
}

/// t-copula credit model with the standard random portfolio. Index methods sample
/// the shock under the second transformation; set `shock_in_index` to sample it
/// as an extra index coordinate instead.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sis_model_tcopula_new(
    h: usize,
    d: usize,
    loadings_seed: u64,
    nu: f64,
    shock_in_index: bool,
    out: *mut *mut SisModel,
) -> SisStatus {
    guard(|| {
        let out = unsafe { out_ptr(out, "out") }?;
        let config = ModelConfig::TCopula {
            portfolio: portfolio(h, d, loadings_seed),
            nu,
            transformation: if shock_in_index {
                Transformation::T1
            } else {
                Transformation::T2
            },
        };
        new_model(config, out)
    })
}

/// Model from a TOML table in the same format as the `[model]` block of an
/// experiment file.
///
/// # Safety
/// `toml` must be a NUL-terminated string and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sis_model_from_toml(
    toml: *const c_char,
    out: *mut *mut SisModel,
) -> SisStatus {
    guard(|| {
        let text = unsafe { read_str(toml, "toml") }?;
        let out = unsafe { out_ptr(out, "out") }?;
        new_model(ModelConfig::from_toml(text)?, out)
    })
}

/// Releases a model. NULL is ignored.
///
/// # Safety
/// `model` must be NULL or a live handle from a `sis_model_*` constructor.
#[no_mangle]
pub unsafe extern "C" fn sis_model_free(model: *mut SisModel) {
    if !model.is_null() {
        // SAFETY: allocated by Box::into_raw in new_model.
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Pilot stage for `method` at threshold `l`. Methods without an index proposal
/// (`mc`, `cmc`) are rejected; `gl-is` computes the factor mean shift.
///
/// # Safety
/// `model` must be a live handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sis_calibrate(
    model: *const SisModel,
    method: SisMethod,
    l: f64,
    n_pilot: usize,
    seed: u64,
    out: *mut *mut SisCalibration,
) -> SisStatus {
    guard(|| {
        let model = unsafe { non_null(model, "model") }?;
        let out = unsafe { out_ptr(out, "out") }?;
        let method = Method::from(method);
        model.built.check_method(method)?;
        let target = method.target().ok_or_else(|| {
            SisError::InvalidArgument(format!("{method} needs no calibration"))
        })?;
        let mut settings = CalibrationSettings::new(n_pilot);
        settings.mean_shift = method == Method::GlIs;
        let inner = calibrate(&model.built, target, l, &settings, seed)?;
        *out = Box::into_raw(Box::new(SisCalibration { inner }));
        Ok(())
    })
}

/// Releases a calibration. NULL is ignored.
///
/// # Safety
/// `cal` must be NULL or a live calibration handle.
#[no_mangle]
pub unsafe extern "C" fn sis_calibration_free(cal: *mut SisCalibration) {
    if !cal.is_null() {
        // SAFETY: allocated by Box::into_raw in this crate.
        drop(unsafe { Box::from_raw(cal) });
    }
}

/// Optimal shift `k*` and, when fitted, scale `σ*` (NaN otherwise).
///
/// # Safety
/// `cal` must be a live handle; `k_star` and `sigma_star` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sis_calibration_location_scale(
    cal: *const SisCalibration,
    k_star: *mut f64,
    sigma_star: *mut f64,
) -> SisStatus {
    guard(|| {
        let cal = unsafe { non_null(cal, "cal") }?;
        *unsafe { out_ptr(k_star, "k_star") }? = cal.inner.k_star;
        *unsafe { out_ptr(sigma_star, "sigma_star") }? = cal.inner.sigma_star.unwrap_or(f64::NAN);
        Ok(())
    })
}

/// Serializes a calibration as one `[[fit]]` entry tied to `model`. Free the
/// returned string with [`sis_string_free`].
///
/// # Safety
/// `model` and `cal` must be live handles and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sis_calibration_to_toml(
    model: *const SisModel,
    cal: *const SisCalibration,
    out: *mut *mut c_char,
) -> SisStatus {
    guard(|| {
        let model = unsafe { non_null(model, "model") }?;
        let cal = unsafe { non_null(cal, "cal") }?;
        let out = unsafe { out_ptr(out, "out") }?;
        let fit = sis_core::cli::PilotFit {
            entries: vec![FitEntry::from_calibration(&cal.inner, &model.hash)],
        };
        let text = fit.to_toml()?;
        *out = CString::new(text)
            .map_err(|e| SisError::Parse(e.to_string()))?
            .into_raw();
        Ok(())
    })
}

/// Restores the calibration for threshold `l` and `method`'s target from a fit
/// document. Fails if the document was produced for a different model.
///
/// # Safety
/// `model` must be a live handle, `toml` NUL-terminated and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sis_calibration_from_toml(
    model: *const SisModel,
    toml: *const c_char,
    method: SisMethod,
    l: f64,
    out: *mut *mut SisCalibration,
) -> SisStatus {
    guard(|| {
        let model = unsafe { non_null(model, "model") }?;
        let text = unsafe { read_str(toml, "toml") }?;
        let out = unsafe { out_ptr(out, "out") }?;
        let method = Method::from(method);
        let target = method.target().unwrap_or(Target::Psi);
        let fit = sis_core::cli::PilotFit::from_toml(text)?;
        fit.check_model(&model.hash)?;
        let entry = fit.find(l, target).ok_or_else(|| {
            SisError::InvalidArgument(format!("no fit entry for l = {l} and {method}"))
        })?;
        let inner = entry.to_calibration()?;
        *out = Box::into_raw(Box::new(SisCalibration { inner }));
        Ok(())
    })
}

/// One estimate of `P(L > l)` (or `E Ψ`) with `n` points. `cal` may be NULL for
/// `mc` and `cmc`; every other method needs a calibration for the same `l`.
///
/// # Safety
/// `model` must be a live handle, `cal` NULL or a live handle, `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sis_estimate(
    model: *const SisModel,
    cal: *const SisCalibration,
    method: SisMethod,
    l: f64,
    n: usize,
    rng: SisRng,
    seed: u64,
    self_normalized: bool,
    out: *mut SisResult,
) -> SisStatus {
    guard(|| {
        let model = unsafe { non_null(model, "model") }?;
        // SAFETY: NULL is allowed here.
        let cal = unsafe { cal.as_ref() }.map(|c| &c.inner);
        let out = unsafe { out_ptr(out, "out") }?;
        let kind = match rng {
            SisRng::Pseudo => SourceKind::Pseudo,
            SisRng::Sobol => SourceKind::Sobol,
        };
        let est = Estimator::new(
            &model.built,
            method.into(),
            l,
            cal,
            IsOptions { self_normalized },
        )?;
        let r = est.run(n, kind, seed)?;
        *out = SisResult {
            estimate: r.estimate,
            variance_estimate: r.variance_estimate,
            ci_halfwidth: r.ci_halfwidth,
            n: r.n,
            debias_added: r.debias_added,
            wall_time: r.wall_time,
        };
        Ok(())
    })
}

/// Canonical TOML of the model block. Free with [`sis_string_free`].
///
/// # Safety
/// `model` must be a live handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sis_model_to_toml(
    model: *const SisModel,
    out: *mut *mut c_char,
) -> SisStatus {
    guard(|| {
        let model = unsafe { non_null(model, "model") }?;
        let out = unsafe { out_ptr(out, "out") }?;
        let text = model.config.to_toml()?;
        *out = CString::new(text)
            .map_err(|e| SisError::Parse(e.to_string()))?
            .into_raw();
        Ok(())
    })
}

/// Φ⁻¹(u) for u in (0, 1).
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sis_std_normal_quantile(u: f64, out: *mut f64) -> SisStatus {
    guard(|| {
        let out = unsafe { out_ptr(out, "out") }?;
        *out = std_normal_quantile(u)?;
        Ok(())
    })
}

/// Φ(x).
#[no_mangle]
pub extern "C" fn sis_std_normal_cdf(x: f64) -> f64 {
    std_normal_cdf(x)
}
