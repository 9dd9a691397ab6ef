//! C interface to `recest`.
//!
//! Every fallible function returns a [`RecestStatus`]. After a non-zero
//! status, [`recest_last_error`] copies a description of the failure into a
//! caller buffer. Estimators are opaque handles created by one of the
//! `recest_estimator_*` constructors and released with
//! [`recest_estimator_free`].

use std::cell::RefCell;
use std::ffi::c_char;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;

use recest::functions::StepNormalizer;
use recest::models::{ConditionalModel, NormalLocation, ScoreFunction};
use recest::normalizers::fisher_normalizer;
use recest::robust::{self, PsiFunction, RobustLocation};
use recest::simulator::{ao_series, AoConfig};
use recest::{Error, Matrix, OnlineEstimator};

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecestStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Numerical = 3,
    BufferTooSmall = 4,
    Panic = 5,
}

/// Opaque streaming estimator.
pub struct RecestEstimator {
    inner: OnlineEstimator,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn status_of(e: &Error) -> RecestStatus {
    set_error(e.to_string());
    if e.is_numerical() {
        RecestStatus::Numerical
    } else {
        RecestStatus::InvalidArgument
    }
}

fn guard(f: impl FnOnce() -> RecestStatus) -> RecestStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => {
            set_error("internal panic");
            RecestStatus::Panic
        }
    }
}

fn null(name: &str) -> RecestStatus {
    set_error(format!("{name} is null"));
    RecestStatus::NullPointer
}

/// Copies the last error message of this thread, NUL-terminated and
/// truncated to `len` bytes, into `buf`. Returns the full message length
/// excluding the terminator.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn recest_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            // SAFETY: caller guarantees `len` writable bytes.
            unsafe {
                std::ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
                *buf.add(n) = 0;
            }
        }
        msg.len()
    })
}

fn store(out: *mut *mut RecestEstimator, inner: OnlineEstimator) -> RecestStatus {
    // SAFETY: checked non-null by the callers.
    unsafe { *out = Box::into_raw(Box::new(RecestEstimator { inner })) };
    RecestStatus::Ok
}

/// Normal-location likelihood recursion with known `sigma`; its estimate is
/// the running mean.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for a handle.
#[no_mangle]
pub unsafe extern "C" fn recest_estimator_normal_mle(
    sigma: f64,
    theta0: f64,
    out: *mut *mut RecestEstimator,
) -> RecestStatus {
    guard(|| {
        if out.is_null() {
            return null("out");
        }
        let built = NormalLocation::new(sigma).and_then(|m| {
            let model: Arc<dyn ConditionalModel> = Arc::new(m);
            OnlineEstimator::new(
                Arc::new(ScoreFunction::new(model.clone())),
                Arc::new(fisher_normalizer(model)),
                &[theta0],
                0,
            )
        });
        match built {
            Ok(inner) => store(out, inner),
            Err(e) => status_of(&e),
        }
    })
}

/// Huber location recursion `theta_t = theta_{t-1} + s phi_c((X_t - theta_{t-1}) / s) / (t C_g)`
/// with `C_g = 2 Phi(c) - 1`.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for a handle.
#[no_mangle]
pub unsafe extern "C" fn recest_estimator_huber_location(
    c: f64,
    scale: f64,
    theta0: f64,
    out: *mut *mut RecestEstimator,
) -> RecestStatus {
    guard(|| {
        if out.is_null() {
            return null("out");
        }
        let built = PsiFunction::huber(c).and_then(|phi| {
            let c_g = phi.c_g_normal()?;
            OnlineEstimator::new(
                Arc::new(RobustLocation::new(phi, scale)?),
                Arc::new(StepNormalizer::new(Matrix::zeros(1), Matrix::scalar(c_g))),
                &[theta0],
                0,
            )
        });
        match built {
            Ok(inner) => store(out, inner),
            Err(e) => status_of(&e),
        }
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `est` must be null or a handle from a constructor, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn recest_estimator_free(est: *mut RecestEstimator) {
    if !est.is_null() {
        // SAFETY: handle was produced by Box::into_raw.
        drop(unsafe { Box::from_raw(est) });
    }
}

/// Feeds one observation and writes the first estimate component to
/// `theta_out` when it is non-null. On failure the estimator is unchanged.
///
/// # Safety
/// `est` must be a live handle; `theta_out` null or writable.
#[no_mangle]
pub unsafe extern "C" fn recest_estimator_push(
    est: *mut RecestEstimator,
    x: f64,
    theta_out: *mut f64,
) -> RecestStatus {
    guard(|| {
        // SAFETY: caller guarantees a live handle.
        let Some(est) = (unsafe { est.as_mut() }) else {
            return null("estimator");
        };
        match est.inner.push(x) {
            Ok(theta) => {
                if !theta_out.is_null() {
                    // SAFETY: caller guarantees writable storage.
                    unsafe { *theta_out = theta[0] };
                }
                RecestStatus::Ok
            }
            Err(e) => status_of(&e),
        }
    })
}

/// Copies the current estimate into `out[0..len]`; `len` must be at least
/// the dimension.
///
/// # Safety
/// `est` must be a live handle and `out` point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn recest_estimator_theta(
    est: *const RecestEstimator,
    out: *mut f64,
    len: usize,
) -> RecestStatus {
    guard(|| {
        // SAFETY: caller guarantees a live handle.
        let Some(est) = (unsafe { est.as_ref() }) else {
            return null("estimator");
        };
        if out.is_null() {
            return null("out");
        }
        let theta = est.inner.theta();
        if len < theta.len() {
            set_error(format!("buffer holds {len} values, need {}", theta.len()));
            return RecestStatus::BufferTooSmall;
        }
        // SAFETY: `out` has at least `theta.len()` slots.
        unsafe { std::ptr::copy_nonoverlapping(theta.as_ptr(), out, theta.len()) };
        RecestStatus::Ok
    })
}

/// Number of recursion steps taken; zero for a null handle.
///
/// # Safety
/// `est` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn recest_estimator_steps(est: *const RecestEstimator) -> usize {
    // SAFETY: caller guarantees a live handle or null.
    unsafe { est.as_ref() }.map_or(0, |e| e.inner.steps())
}

/// Dimension of the parameter; zero for a null handle.
///
/// # Safety
/// `est` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn recest_estimator_dim(est: *const RecestEstimator) -> usize {
    // SAFETY: caller guarantees a live handle or null.
    unsafe { est.as_ref() }.map_or(0, |e| e.inner.dim())
}

/// Huber's `phi_c(x)`.
#[no_mangle]
pub extern "C" fn recest_huber(x: f64, c: f64) -> f64 {
    robust::huber(x, c)
}

/// Hampel's redescending `phi(x)` with corners `alpha < beta`.
#[no_mangle]
pub extern "C" fn recest_hampel(x: f64, alpha: f64, beta: f64) -> f64 {
    robust::hampel(x, alpha, beta)
}

fn write_scalar(out: *mut f64, value: recest::Result<f64>) -> RecestStatus {
    if out.is_null() {
        return null("out");
    }
    match value {
        Ok(v) => {
            // SAFETY: checked non-null; caller guarantees writable storage.
            unsafe { *out = v };
            RecestStatus::Ok
        }
        Err(e) => status_of(&e),
    }
}

/// `C_g` of Huber's function under standard normal residuals.
///
/// # Safety
/// `out` must point to a writable double.
#[no_mangle]
pub unsafe extern "C" fn recest_c_g_huber_normal(c: f64, out: *mut f64) -> RecestStatus {
    guard(|| write_scalar(out, robust::c_g_huber_normal(c)))
}

/// `C_g` of Hampel's function under standard normal residuals.
///
/// # Safety
/// `out` must point to a writable double.
#[no_mangle]
pub unsafe extern "C" fn recest_c_g_hampel_normal(alpha: f64, beta: f64, out: *mut f64) -> RecestStatus {
    guard(|| write_scalar(out, robust::c_g_hampel_normal(alpha, beta)))
}

/// Scale `median |x_i| / 0.6745` of `data[0..len]`.
///
/// # Safety
/// `data` must point to `len` readable doubles; `out` to a writable double.
#[no_mangle]
pub unsafe extern "C" fn recest_mad_scale(data: *const f64, len: usize, out: *mut f64) -> RecestStatus {
    guard(|| {
        if data.is_null() {
            return null("data");
        }
        // SAFETY: caller guarantees `len` readable values.
        let slice = unsafe { std::slice::from_raw_parts(data, len) };
        write_scalar(out, robust::mad_scale(slice))
    })
}

/// AR(1) series with additive-outlier contamination, `n` values after
/// `burn_in`, written to `out[0..n]`.
///
/// # Safety
/// `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn recest_simulate_ao(
    theta: f64,
    eps: f64,
    sigma2: f64,
    n: usize,
    burn_in: usize,
    seed: u64,
    out: *mut f64,
    len: usize,
) -> RecestStatus {
    guard(|| {
        if out.is_null() {
            return null("out");
        }
        if len < n {
            set_error(format!("buffer holds {len} values, need {n}"));
            return RecestStatus::BufferTooSmall;
        }
        let config = AoConfig {
            theta,
            eps,
            sigma2,
            n,
            burn_in,
            seed,
        };
        match ao_series(&config) {
            Ok(series) => {
                // SAFETY: `out` has at least `n` slots.
                unsafe { std::ptr::copy_nonoverlapping(series.as_ptr(), out, n) };
                RecestStatus::Ok
            }
            Err(e) => status_of(&e),
        }
    })
}
