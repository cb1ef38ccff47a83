//! C ABI over `cud-core`.
//!
//! Conventions:
//! - Every fallible function returns a [`CudStatus`]; `CUD_OK` is zero.
//! - On failure, [`cud_last_error`] returns a message for the calling thread,
//!   valid until that thread's next call into the library.
//! - Arrays are passed as `(pointer, length)`; output buffers are caller-owned
//!   and must hold the documented number of elements.
//! - Models are opaque [`CudClassifier`] handles released with
//!   [`cud_classifier_free`].
//! - Panics never cross the boundary; they surface as `CUD_INTERNAL`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use cud_core::calibrate::{self, WClipParams};
use cud_core::losses::{self, DusParams};
use cud_core::metrics;
use cud_core::model::{Checkpoint, MlpClassifier};
use cud_core::simplex::{self, Distribution, Logits};
use cud_core::CudError;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CudStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// A hyperparameter, index or length is out of range.
    InvalidArgument = 2,
    /// An input lies outside the operation's domain (e.g. not a distribution).
    Domain = 3,
    /// An iterative routine failed to converge.
    Numerical = 4,
    /// Array lengths disagree.
    Dimension = 5,
    /// A file could not be read.
    Io = 6,
    /// A file was read but its contents are invalid.
    Format = 7,
    /// A bug in the library (a caught panic).
    Internal = 8,
}

/// Teacher objective weights and gate shape; see [`cud_dus_params_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct CudDusParams {
    pub lambda_ce: f64,
    pub lambda_f: f64,
    pub lambda_h: f64,
    pub alpha_y: f64,
    pub gamma: f64,
    pub gate_threshold_tau: f64,
    pub gate_rho: f64,
    pub gate_beta: f64,
    /// Nonzero: differentiate through the smooth part of the gate.
    pub grad_through_gate: u8,
}

impl From<DusParams> for CudDusParams {
    fn from(p: DusParams) -> Self {
        CudDusParams {
            lambda_ce: p.lambda_ce,
            lambda_f: p.lambda_f,
            lambda_h: p.lambda_h,
            alpha_y: p.alpha_y,
            gamma: p.gamma,
            gate_threshold_tau: p.gate_threshold_tau,
            gate_rho: p.gate_rho,
            gate_beta: p.gate_beta,
            grad_through_gate: p.grad_through_gate as u8,
        }
    }
}

impl From<CudDusParams> for DusParams {
    fn from(p: CudDusParams) -> Self {
        DusParams {
            lambda_ce: p.lambda_ce,
            lambda_f: p.lambda_f,
            lambda_h: p.lambda_h,
            alpha_y: p.alpha_y,
            gamma: p.gamma,
            gate_threshold_tau: p.gate_threshold_tau,
            gate_rho: p.gate_rho,
            gate_beta: p.gate_beta,
            grad_through_gate: p.grad_through_gate != 0,
        }
    }
}

/// Opaque trained classifier.
pub struct CudClassifier {
    model: MlpClassifier,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

struct Failure(CudStatus, String);

impl From<CudError> for Failure {
    fn from(e: CudError) -> Self {
        let status = match &e {
            CudError::Parameter(_) | CudError::Config(_) => CudStatus::InvalidArgument,
            CudError::Domain(_) => CudStatus::Domain,
            CudError::Numerical(_) | CudError::Divergence(_) => CudStatus::Numerical,
            CudError::Dimension { .. } => CudStatus::Dimension,
            CudError::Io { .. } => CudStatus::Io,
            CudError::Json(_) | CudError::Csv(_) | CudError::Ingest { .. } => CudStatus::Format,
        };
        Failure(status, e.to_string())
    }
}

fn null(name: &str) -> Failure {
    Failure(CudStatus::NullPointer, format!("{name} is null"))
}

/// Runs `f`, recording any failure (or panic) as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> CudStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            CudStatus::Ok
        }
        Ok(Err(Failure(status, message))) => {
            set_last_error(&message);
            status
        }
        Err(_) => {
            set_last_error("internal error: panic in cud-ffi");
            CudStatus::Internal
        }
    }
}

/// # Safety
/// `ptr` must be null or valid for reading `len` elements.
unsafe fn input<'a, T>(ptr: *const T, len: usize, name: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(null(name));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

/// # Safety
/// `ptr` must be null or valid for writing `len` elements.
unsafe fn output<'a, T>(ptr: *mut T, len: usize, name: &str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if ptr.is_null() {
        return Err(null(name));
    }
    Ok(std::slice::from_raw_parts_mut(ptr, len))
}

/// # Safety
/// `ptr` must be null or valid for writing one value.
unsafe fn write_opt<T>(ptr: *mut T, value: T) {
    if !ptr.is_null() {
        ptr.write(value);
    }
}

/// Message of the calling thread's last failure ("" after a success). The
/// pointer stays valid until the thread calls into the library again.
#[no_mangle]
pub extern "C" fn cud_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cud_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

#[no_mangle]
pub extern "C" fn cud_dus_params_default() -> CudDusParams {
    DusParams::default().into()
}

/// `out[k] = softmax(logits / temperature)[k]` for `n` classes.
///
/// # Safety
/// `logits` and `out` must each point to `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn cud_softmax(logits: *const f64, n: usize, temperature: f64, out: *mut f64) -> CudStatus {
    guard(|| {
        let z = Logits::new(input(logits, n, "logits")?.to_vec())?;
        let p = simplex::softmax(&z, temperature)?;
        output(out, n, "out")?.copy_from_slice(p.probs());
        Ok(())
    })
}

/// Wrong-mass clipping of the distribution `dist` (`n` entries) toward
/// `label`. Writes the clipped distribution to `out` and, if `delta_out` is
/// non-null, the mass moved.
///
/// # Safety
/// `dist` and `out` must each point to `n` doubles; `delta_out` may be null.
#[no_mangle]
pub unsafe extern "C" fn cud_w_clip(
    dist: *const f64,
    n: usize,
    label: usize,
    eta: f64,
    margin_scale_m: f64,
    out: *mut f64,
    delta_out: *mut f64,
) -> CudStatus {
    guard(|| {
        let p = Distribution::new(input(dist, n, "dist")?.to_vec())?;
        let params = WClipParams { eta, margin_scale_m };
        let t = calibrate::w_clip(&p, label, &params)?;
        output(out, n, "out")?.copy_from_slice(t.dist.probs());
        write_opt(delta_out, t.delta_applied);
        Ok(())
    })
}

/// KL projection of `dist` onto `{q : q[wrong_class] <= max_wrong_mass}`.
/// Writes the projection to `out` and, if `nu_out` is non-null, the dual
/// variable (zero when the cap is already met).
///
/// # Safety
/// `dist` and `out` must each point to `n` doubles; `nu_out` may be null.
#[no_mangle]
pub unsafe extern "C" fn cud_exact_tilt(
    dist: *const f64,
    n: usize,
    wrong_class: usize,
    max_wrong_mass: f64,
    out: *mut f64,
    nu_out: *mut f64,
) -> CudStatus {
    guard(|| {
        let p = Distribution::new(input(dist, n, "dist")?.to_vec())?;
        let (t, s) = calibrate::exact_tilt_projection(&p, wrong_class, max_wrong_mass)?;
        output(out, n, "out")?.copy_from_slice(t.dist.probs());
        write_opt(nu_out, s.nu);
        Ok(())
    })
}

/// Teacher objective at `logits` (`n` classes) for `label`. `params` may be
/// null for the defaults; `grad_out` may be null, otherwise it receives the
/// `n`-element logit gradient.
///
/// # Safety
/// `logits` must point to `n` doubles, `loss_out` to one double, and
/// `grad_out` (if non-null) to `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn cud_teacher_loss(
    logits: *const f64,
    n: usize,
    label: usize,
    params: *const CudDusParams,
    loss_out: *mut f64,
    grad_out: *mut f64,
) -> CudStatus {
    guard(|| {
        if loss_out.is_null() {
            return Err(null("loss_out"));
        }
        let params: DusParams = if params.is_null() { DusParams::default() } else { (*params).into() };
        params.validate()?;
        let z = Logits::new(input(logits, n, "logits")?.to_vec())?;
        let loss = losses::teacher_loss(&z, label, &params)?;
        if !grad_out.is_null() {
            let g = losses::teacher_loss_grad(&z, label, &params)?;
            output(grad_out, n, "grad_out")?.copy_from_slice(&g);
        }
        loss_out.write(loss);
        Ok(())
    })
}

/// AUROC of `scores` for separating `positive[i] != 0` from the rest.
///
/// # Safety
/// `scores` and `positive` must each point to `n` elements; `out` to one double.
#[no_mangle]
pub unsafe extern "C" fn cud_auroc(scores: *const f64, positive: *const u8, n: usize, out: *mut f64) -> CudStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let s = input(scores, n, "scores")?;
        let flags: Vec<bool> = input(positive, n, "positive")?.iter().map(|&b| b != 0).collect();
        out.write(metrics::roc_auroc(s, &flags)?.auroc);
        Ok(())
    })
}

/// Loads a checkpoint written by the `cud` tool. On success `*out` owns a
/// handle to release with [`cud_classifier_free`]; on failure it is set to null.
///
/// # Safety
/// `path` must be a NUL-terminated UTF-8 string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cud_classifier_load(path: *const c_char, out: *mut *mut CudClassifier) -> CudStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        out.write(std::ptr::null_mut());
        if path.is_null() {
            return Err(null("path"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| Failure(CudStatus::InvalidArgument, "path is not valid UTF-8".into()))?;
        let model = Checkpoint::load(Path::new(path))?.into_model()?;
        out.write(Box::into_raw(Box::new(CudClassifier { model })));
        Ok(())
    })
}

/// Number of input features, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cud_classifier_input_dim(model: *const CudClassifier) -> usize {
    model.as_ref().map_or(0, |m| m.model.input_dim())
}

/// Number of classes, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cud_classifier_num_classes(model: *const CudClassifier) -> usize {
    model.as_ref().map_or(0, |m| m.model.num_classes())
}

/// Class probabilities for one example.
///
/// # Safety
/// `model` must be a live handle, `features` must point to `n_features`
/// doubles and `probs_out` to `n_classes` doubles.
#[no_mangle]
pub unsafe extern "C" fn cud_classifier_predict(
    model: *const CudClassifier,
    features: *const f64,
    n_features: usize,
    probs_out: *mut f64,
    n_classes: usize,
) -> CudStatus {
    guard(|| {
        let m = &model.as_ref().ok_or_else(|| null("model"))?.model;
        if n_classes != m.num_classes() {
            return Err(CudError::Dimension {
                expected: m.num_classes(),
                actual: n_classes,
            }
            .into());
        }
        let z = m.forward(input(features, n_features, "features")?)?;
        let p = simplex::softmax(&z, 1.0)?;
        output(probs_out, n_classes, "probs_out")?.copy_from_slice(p.probs());
        Ok(())
    })
}

/// Releases a handle from [`cud_classifier_load`]. Null is a no-op.
///
/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cud_classifier_free(model: *mut CudClassifier) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}
