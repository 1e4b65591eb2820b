//! C ABI for `rcp-core`.
//!
//! Objects cross the boundary as opaque handles created by `*_new` and
//! released by the matching `*_free`. Every fallible call returns an
//! [`RcpStatus`]; on failure a message is kept per thread and can be read
//! with [`rcp_last_error`]. Panics are caught and reported as
//! [`RcpStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use rcp_core::baselines::{scale_cusum_test, ScaleEstimator};
use rcp_core::critvals::{simulate_bessel_sup_quantile, McConfig};
use rcp_core::cusum::CriticalSource;
use rcp_core::{lookup_quantile, Error, Functional, Kernel, PsiSpec, PsiVariant, TestConfig, TestOutcome, TimeSeries};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RcpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    /// Empty, non-finite or too short input.
    InvalidInput = 3,
    /// Zero scale or a degenerate long-run covariance.
    Degenerate = 4,
    NotTabulated = 5,
    /// Singular or non-symmetric matrix.
    Numerical = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RcpFunctional {
    Sup = 0,
    Integral = 1,
    WeightedSup = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RcpKernel {
    FlatTop = 0,
    Bartlett = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RcpScaleEstimator {
    Md = 0,
    Gmd = 1,
}

/// Test settings. Start from [`rcp_test_options_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct RcpTestOptions {
    pub alpha: f64,
    pub functional: RcpFunctional,
    /// Used only with `WeightedSup`.
    pub weight_exponent: f64,
    /// NaN selects the default bandwidth rule.
    pub bandwidth: f64,
    pub kernel: RcpKernel,
    pub correction: bool,
    /// Always simulate the critical value instead of using the table.
    pub monte_carlo: bool,
    pub p_value: bool,
    pub mc_grid: usize,
    pub mc_reps: usize,
    pub mc_seed: u64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct RcpScaleResult {
    pub statistic: f64,
    pub uncorrected_statistic: f64,
    pub v_hat: f64,
    pub bandwidth: f64,
    pub critical_value: f64,
    pub reject: bool,
    pub change_point_index: usize,
}

/// Row-major observations.
pub struct RcpSeries(TimeSeries);

/// Transformation choice, resolved against the series dimension at test time.
pub struct RcpPsi(PsiSpec);

pub struct RcpOutcome(TestOutcome);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> RcpStatus {
    match e.root() {
        Error::EmptySample | Error::NonFinite(_) | Error::TooShort { .. } | Error::Input(_) | Error::Io(_) => {
            RcpStatus::InvalidInput
        }
        Error::ZeroScale(_) | Error::DegenerateLrv(_) => RcpStatus::Degenerate,
        Error::NotTabulated { .. } => RcpStatus::NotTabulated,
        Error::Singular | Error::Asymmetric { .. } => RcpStatus::Numerical,
        _ => RcpStatus::InvalidArgument,
    }
}

fn fail(status: RcpStatus, msg: impl Into<String>) -> RcpStatus {
    set_error(msg.into());
    status
}

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), RcpStatus>) -> RcpStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RcpStatus::Ok,
        Ok(Err(s)) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            fail(RcpStatus::Panic, msg)
        }
    }
}

fn core(e: Error) -> RcpStatus {
    let s = status_of(&e);
    fail(s, e.to_string())
}

unsafe fn get<'a, T>(p: *const T, what: &str) -> Result<&'a T, RcpStatus> {
    p.as_ref().ok_or_else(|| fail(RcpStatus::NullPointer, format!("{what} is null")))
}

unsafe fn get_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, RcpStatus> {
    p.as_mut().ok_or_else(|| fail(RcpStatus::NullPointer, format!("{what} is null")))
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], RcpStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(RcpStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn rcp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread, or NULL. The pointer
/// stays valid until the next call into the library on the same thread.
#[no_mangle]
pub extern "C" fn rcp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Copies `n_obs * dim` row-major values into a new series.
///
/// # Safety
/// `data` must point to `n_obs * dim` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rcp_series_new(
    data: *const f64,
    n_obs: usize,
    dim: usize,
    out: *mut *mut RcpSeries,
) -> RcpStatus {
    guard(|| {
        let out = get_mut(out, "out")?;
        *out = ptr::null_mut();
        let len = n_obs
            .checked_mul(dim)
            .ok_or_else(|| fail(RcpStatus::InvalidArgument, "n_obs * dim overflows"))?;
        let values = slice(data, len, "data")?;
        let x = TimeSeries::from_row_major(values, n_obs, dim).map_err(core)?;
        *out = Box::into_raw(Box::new(RcpSeries(x)));
        Ok(())
    })
}

/// # Safety
/// `series` must come from [`rcp_series_new`] or be NULL.
#[no_mangle]
pub unsafe extern "C" fn rcp_series_free(series: *mut RcpSeries) {
    if !series.is_null() {
        drop(Box::from_raw(series));
    }
}

/// # Safety
/// `series` must be a live handle or NULL (returns 0).
#[no_mangle]
pub unsafe extern "C" fn rcp_series_n_obs(series: *const RcpSeries) -> usize {
    series.as_ref().map_or(0, |s| s.0.n_obs())
}

/// # Safety
/// `series` must be a live handle or NULL (returns 0).
#[no_mangle]
pub unsafe extern "C" fn rcp_series_dim(series: *const RcpSeries) -> usize {
    series.as_ref().map_or(0, |s| s.0.dim())
}

/// New transformation from a variant name such as `"hubervar"` or
/// `"hubercovjoint"`. Threshold variants default to `k^2 = q_chi2_1(0.95)`.
///
/// # Safety
/// `variant` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rcp_psi_new(variant: *const c_char, out: *mut *mut RcpPsi) -> RcpStatus {
    guard(|| {
        let out = get_mut(out, "out")?;
        *out = ptr::null_mut();
        let name = CStr::from_ptr(get(variant, "variant")?)
            .to_str()
            .map_err(|_| fail(RcpStatus::InvalidArgument, "variant is not UTF-8"))?;
        let v: PsiVariant = name.parse().map_err(core)?;
        let mut spec = PsiSpec::new(v);
        if v.needs_threshold() {
            spec = spec.with_chi2_level(0.95);
        }
        *out = Box::into_raw(Box::new(RcpPsi(spec)));
        Ok(())
    })
}

/// # Safety
/// `psi` must come from [`rcp_psi_new`] or be NULL.
#[no_mangle]
pub unsafe extern "C" fn rcp_psi_free(psi: *mut RcpPsi) {
    if !psi.is_null() {
        drop(Box::from_raw(psi));
    }
}

/// Sets the threshold directly; `INFINITY` gives the unclamped statistic.
///
/// # Safety
/// `psi` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn rcp_psi_set_k(psi: *mut RcpPsi, k: f64) -> RcpStatus {
    guard(|| {
        let p = get_mut(psi, "psi")?;
        if k.is_nan() || k <= 0.0 {
            return Err(fail(RcpStatus::InvalidArgument, format!("k must be positive, got {k}")));
        }
        p.0.k = Some(k);
        p.0.chi2_level = None;
        Ok(())
    })
}

/// Sets the threshold to `sqrt(q_chi2_1(level))`.
///
/// # Safety
/// `psi` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn rcp_psi_set_chi2_level(psi: *mut RcpPsi, level: f64) -> RcpStatus {
    guard(|| {
        let p = get_mut(psi, "psi")?;
        if !(level > 0.0 && level < 1.0) {
            return Err(fail(RcpStatus::InvalidArgument, format!("level must lie in (0, 1), got {level}")));
        }
        p.0.chi2_level = Some(level);
        p.0.k = None;
        Ok(())
    })
}

/// Direction for the projection variant.
///
/// # Safety
/// `a` must point to `len` readable doubles.
#[no_mangle]
pub unsafe extern "C" fn rcp_psi_set_direction(psi: *mut RcpPsi, a: *const f64, len: usize) -> RcpStatus {
    guard(|| {
        let p = get_mut(psi, "psi")?;
        p.0.direction = Some(slice(a, len, "direction")?.to_vec());
        Ok(())
    })
}

#[no_mangle]
pub extern "C" fn rcp_test_options_default() -> RcpTestOptions {
    let cfg = TestConfig::default();
    RcpTestOptions {
        alpha: cfg.alpha,
        functional: RcpFunctional::Sup,
        weight_exponent: 0.5,
        bandwidth: f64::NAN,
        kernel: RcpKernel::FlatTop,
        correction: cfg.correction,
        monte_carlo: false,
        p_value: false,
        mc_grid: cfg.mc.n_grid,
        mc_reps: cfg.mc.n_rep,
        mc_seed: cfg.mc.seed,
    }
}

fn test_config(o: &RcpTestOptions) -> TestConfig {
    TestConfig {
        alpha: o.alpha,
        functional: match o.functional {
            RcpFunctional::Sup => Functional::Sup,
            RcpFunctional::Integral => Functional::Integral,
            RcpFunctional::WeightedSup => Functional::WeightedSup { exponent: o.weight_exponent },
        },
        bandwidth: (!o.bandwidth.is_nan()).then_some(o.bandwidth),
        kernel: match o.kernel {
            RcpKernel::FlatTop => Kernel::FlatTop,
            RcpKernel::Bartlett => Kernel::Bartlett,
        },
        critical: if o.monte_carlo { CriticalSource::MonteCarlo } else { CriticalSource::Table },
        correction: o.correction,
        p_value: o.p_value,
        mc: McConfig { n_grid: o.mc_grid, n_rep: o.mc_reps, seed: o.mc_seed, ..McConfig::default() },
        ..TestConfig::default()
    }
}

/// Runs the robust CUSUM test. `options` may be NULL for the defaults.
///
/// # Safety
/// `series` and `psi` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rcp_run_test(
    series: *const RcpSeries,
    psi: *const RcpPsi,
    options: *const RcpTestOptions,
    out: *mut *mut RcpOutcome,
) -> RcpStatus {
    guard(|| {
        let out = get_mut(out, "out")?;
        *out = ptr::null_mut();
        let x = get(series, "series")?;
        let p = get(psi, "psi")?;
        let opts = options.as_ref().copied().unwrap_or_else(|| rcp_test_options_default());
        let cfg = test_config(&opts);
        cfg.validate().map_err(core)?;
        let o = rcp_core::run_test(&x.0, &p.0, &cfg).map_err(core)?;
        *out = Box::into_raw(Box::new(RcpOutcome(o)));
        Ok(())
    })
}

/// # Safety
/// `outcome` must come from [`rcp_run_test`] or be NULL.
#[no_mangle]
pub unsafe extern "C" fn rcp_outcome_free(outcome: *mut RcpOutcome) {
    if !outcome.is_null() {
        drop(Box::from_raw(outcome));
    }
}

/// Uncorrected statistic; NaN for a NULL handle.
///
/// # Safety
/// `outcome` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn rcp_outcome_statistic(outcome: *const RcpOutcome) -> f64 {
    outcome.as_ref().map_or(f64::NAN, |o| o.0.statistic)
}

/// Statistic compared with the critical value, corrected when applicable.
///
/// # Safety
/// `outcome` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn rcp_outcome_statistic_used(outcome: *const RcpOutcome) -> f64 {
    outcome.as_ref().map_or(f64::NAN, |o| o.0.statistic_used())
}

/// # Safety
/// `outcome` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn rcp_outcome_critical_value(outcome: *const RcpOutcome) -> f64 {
    outcome.as_ref().map_or(f64::NAN, |o| o.0.critical_value)
}

/// Monte Carlo p-value, or NaN when none was requested.
///
/// # Safety
/// `outcome` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn rcp_outcome_p_value(outcome: *const RcpOutcome) -> f64 {
    outcome.as_ref().and_then(|o| o.0.p_value.map(|p| p.p)).unwrap_or(f64::NAN)
}

/// 1 if the null is rejected, 0 if not, -1 for a NULL handle.
///
/// # Safety
/// `outcome` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn rcp_outcome_reject(outcome: *const RcpOutcome) -> c_int {
    outcome.as_ref().map_or(-1, |o| c_int::from(o.0.reject))
}

/// 1-based estimated change-point index; 0 for a NULL handle.
///
/// # Safety
/// `outcome` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn rcp_outcome_change_point(outcome: *const RcpOutcome) -> usize {
    outcome.as_ref().map_or(0, |o| o.0.change_point_index)
}

/// Writes the outcome as JSON into `buf` (NUL-terminated). `needed`
/// receives the required size including the terminator; with a short or
/// NULL buffer the call returns `BufferTooSmall` and writes nothing.
///
/// # Safety
/// `buf` must hold `len` writable bytes or be NULL; `needed` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn rcp_outcome_to_json(
    outcome: *const RcpOutcome,
    buf: *mut c_char,
    len: usize,
    needed: *mut usize,
) -> RcpStatus {
    guard(|| {
        let o = get(outcome, "outcome")?;
        let json = serde_json::to_string(&o.0).map_err(|e| fail(RcpStatus::InvalidArgument, e.to_string()))?;
        let n = json.len() + 1;
        if let Some(w) = needed.as_mut() {
            *w = n;
        }
        if buf.is_null() || len < n {
            return Err(fail(RcpStatus::BufferTooSmall, format!("buffer of {len} bytes, {n} needed")));
        }
        ptr::copy_nonoverlapping(json.as_ptr(), buf.cast::<u8>(), json.len());
        *buf.add(json.len()) = 0;
        Ok(())
    })
}

/// Tabulated quantile of `sup` of a squared Bessel bridge of dimension `s`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rcp_quantile(s: usize, level: f64, out: *mut f64) -> RcpStatus {
    guard(|| {
        let out = get_mut(out, "out")?;
        *out = lookup_quantile(s, level).map_err(core)?;
        Ok(())
    })
}

/// Simulated quantile; deterministic for a given seed.
/// Zero `n_grid` or `n_rep` selects the default.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rcp_mc_quantile(
    s: usize,
    level: f64,
    seed: u64,
    n_rep: usize,
    n_grid: usize,
    out: *mut f64,
) -> RcpStatus {
    guard(|| {
        let out = get_mut(out, "out")?;
        let d = McConfig::default();
        let cfg = McConfig {
            seed,
            n_rep: if n_rep == 0 { d.n_rep } else { n_rep },
            n_grid: if n_grid == 0 { d.n_grid } else { n_grid },
            ..d
        };
        *out = simulate_bessel_sup_quantile(s, level, &cfg).map_err(core)?;
        Ok(())
    })
}

/// CUSUM test for a scale change based on the mean or Gini mean difference.
///
/// # Safety
/// `x` must point to `n` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rcp_scale_test(
    x: *const f64,
    n: usize,
    estimator: RcpScaleEstimator,
    alpha: f64,
    out: *mut RcpScaleResult,
) -> RcpStatus {
    guard(|| {
        let out = get_mut(out, "out")?;
        let est = match estimator {
            RcpScaleEstimator::Md => ScaleEstimator::Md,
            RcpScaleEstimator::Gmd => ScaleEstimator::Gmd,
        };
        let r = scale_cusum_test(slice(x, n, "x")?, est, alpha).map_err(core)?;
        *out = RcpScaleResult {
            statistic: r.statistic,
            uncorrected_statistic: r.uncorrected_statistic,
            v_hat: r.v_hat,
            bandwidth: r.bandwidth,
            critical_value: r.critical_value,
            reject: r.reject,
            change_point_index: r.change_point_index,
        };
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn status_mapping_strips_stage() {
        let e = Error::Stage { stage: rcp_core::Stage::LongRunCov, source: Box::new(Error::DegenerateLrv(0.0)) };
        assert_eq!(status_of(&e), RcpStatus::Degenerate);
        assert_eq!(status_of(&Error::Singular), RcpStatus::Numerical);
        assert_eq!(status_of(&Error::TooShort { len: 3, min: 20 }), RcpStatus::InvalidInput);
    }

    #[test]
    fn panics_become_status() {
        let s = guard(|| panic!("boom"));
        assert_eq!(s, RcpStatus::Panic);
        let msg = unsafe { CStr::from_ptr(rcp_last_error()) }.to_str().unwrap();
        assert_eq!(msg, "boom");
    }

    #[test]
    fn success_clears_the_last_error() {
        fail(RcpStatus::InvalidArgument, "old");
        assert_eq!(guard(|| Ok(())), RcpStatus::Ok);
        assert!(rcp_last_error().is_null());
    }

    #[test]
    fn default_options_match_core() {
        let o = rcp_test_options_default();
        let c = test_config(&o);
        assert_eq!(c, TestConfig::default());
    }
}
