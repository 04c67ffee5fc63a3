//! C ABI over the fentrisk risk solvers, PAC-Bayes bounds and saved models.
//!
//! Fallible functions return an [`FrStatus`]. After a failure the message is
//! available from [`fr_last_error`] on the same thread. Handles are opaque
//! and each has a `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::{ptr, slice};

use fentrisk::bounds::{kl_inverse, kl_plus, BoundContext, BoundKind, BoundReport};
use fentrisk::data::{load_csv, partition_by_class, DataError, Reference};
use fentrisk::model::{forward, Checkpoint, ModelError, DEFAULT_L_MAX};
use fentrisk::risk::{
    constrained_weights, Divergence, ReferenceDistribution, RiskKind, RiskSolution, RiskSpec, SubgroupLosses,
    DEFAULT_TOL,
};
use fentrisk::trainer::{certify, CertifySettings, TrainError};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    BufferTooSmall = 4,
    /// A Rust panic was caught at the boundary.
    Panic = 5,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrDivergence {
    /// CVaR: only the density-ratio cap.
    None = 0,
    /// KL budget on top of the cap.
    Kl = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrBoundKind {
    SubgroupsSqrt = 0,
    SubgroupsKl = 1,
    OneExampleDis = 2,
    OneExampleClassical = 3,
    MhammediEstimate = 4,
}

impl From<FrBoundKind> for BoundKind {
    fn from(k: FrBoundKind) -> Self {
        match k {
            FrBoundKind::SubgroupsSqrt => BoundKind::SubgroupsSqrt,
            FrBoundKind::SubgroupsKl => BoundKind::SubgroupsKl,
            FrBoundKind::OneExampleDis => BoundKind::OneExampleDis,
            FrBoundKind::OneExampleClassical => BoundKind::OneExampleClassical,
            FrBoundKind::MhammediEstimate => BoundKind::MhammediEstimate,
        }
    }
}

/// Maximizing weights and value of a risk measure.
pub struct FrRiskSolution {
    inner: RiskSolution,
}

/// A saved model loaded from a checkpoint file.
pub struct FrModel {
    inner: Checkpoint,
}

/// Inputs of [`fr_bound_evaluate`].
///
/// Subgroup kinds read `n`, `m_a` and `pi`; `m` is ignored and `lambda` is
/// fixed at 1. Per-example kinds read `m` and `lambda` and ignore the
/// subgroup arrays. `kl_term` is the disintegrated log-density ratio for
/// the disintegrated kinds and the closed-form KL for the classical ones.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct FrBoundInput {
    pub kind: FrBoundKind,
    pub empirical_risk: f64,
    pub kl_term: f64,
    pub delta: f64,
    pub alpha: f64,
    pub lambda: f64,
    pub n_priors: usize,
    pub m: usize,
    pub n: usize,
    pub m_a: *const usize,
    pub pi: *const f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FrBoundOutput {
    pub empirical_risk: f64,
    pub complexity: f64,
    /// Raw formula value, may exceed 1.
    pub bound: f64,
    /// `min(bound, 1)`.
    pub certificate: f64,
    pub vacuous: bool,
    /// Set when the value replaces an expectation over the posterior by
    /// one sample.
    pub estimate: bool,
}

impl From<&BoundReport> for FrBoundOutput {
    fn from(r: &BoundReport) -> Self {
        Self {
            empirical_risk: r.empirical_risk,
            complexity: r.complexity,
            bound: r.bound,
            certificate: r.certificate(),
            vacuous: r.vacuous,
            estimate: r.estimate,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(FrStatus, String);

fn invalid(e: impl ToString) -> Failure {
    Failure(FrStatus::InvalidArgument, e.to_string())
}

fn null(what: &str) -> Failure {
    Failure(FrStatus::NullPointer, format!("{what} is null"))
}

fn from_model(e: ModelError) -> Failure {
    match e {
        ModelError::Io(_) => Failure(FrStatus::Io, e.to_string()),
        _ => invalid(e),
    }
}

fn from_data(e: DataError) -> Failure {
    match e {
        DataError::Io(_) | DataError::Csv(_) | DataError::FileNotFound(_) => Failure(FrStatus::Io, e.to_string()),
        _ => invalid(e),
    }
}

fn record(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

/// Runs `f`, converting failures and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> FrStatus {
    let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<&str>()
            .map(|s| s.to_string())
            .or_else(|| p.downcast_ref::<String>().cloned())
            .unwrap_or_else(|| "unknown panic".into());
        Err(Failure(FrStatus::Panic, format!("panic: {msg}")))
    });
    match result {
        Ok(()) => FrStatus::Ok,
        Err(Failure(status, msg)) => {
            record(msg);
            status
        }
    }
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{what} is not UTF-8")))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the most recent failure on this thread, or null if none.
/// The pointer stays valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn fr_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Solves the risk measure over `n` subgroups.
///
/// `pi` may be null for the uniform reference. With `FrDivergence::Kl` a
/// NaN `beta` selects the default budget `-ln(alpha)`.
///
/// # Safety
/// `losses` must point to `n` doubles, `pi` to `n` doubles or be null, and
/// `out` must be writable. On success `*out` owns a handle to release with
/// [`fr_risk_solution_free`].
#[no_mangle]
pub unsafe extern "C" fn fr_risk_solve(
    losses: *const f64,
    pi: *const f64,
    n: usize,
    alpha: f64,
    divergence: FrDivergence,
    beta: f64,
    out: *mut *mut FrRiskSolution,
) -> FrStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let l = SubgroupLosses::new(slice_arg(losses, n, "losses")?.to_vec()).map_err(invalid)?;
        let reference = if pi.is_null() {
            ReferenceDistribution::uniform(n)
        } else {
            ReferenceDistribution::new(slice_arg(pi, n, "pi")?.to_vec())
        }
        .map_err(invalid)?;
        let spec = match divergence {
            FrDivergence::None => RiskSpec::cvar(alpha),
            FrDivergence::Kl if beta.is_nan() => RiskSpec::evar(alpha),
            FrDivergence::Kl => RiskSpec {
                divergence: Divergence::Kl,
                beta,
                ..RiskSpec::evar(alpha)
            },
        };
        let sol = constrained_weights(&l, &reference, &spec, DEFAULT_TOL).map_err(invalid)?;
        *out = Box::into_raw(Box::new(FrRiskSolution { inner: sol }));
        Ok(())
    })
}

/// Risk value, or NaN for a null handle.
///
/// # Safety
/// `sol` must be null or a live handle from [`fr_risk_solve`].
#[no_mangle]
pub unsafe extern "C" fn fr_risk_solution_value(sol: *const FrRiskSolution) -> f64 {
    sol.as_ref().map_or(f64::NAN, |s| s.inner.value)
}

/// Upper bound on the solver's optimality gap, or NaN for a null handle.
///
/// # Safety
/// `sol` must be null or a live handle from [`fr_risk_solve`].
#[no_mangle]
pub unsafe extern "C" fn fr_risk_solution_dual_gap(sol: *const FrRiskSolution) -> f64 {
    sol.as_ref().map_or(f64::NAN, |s| s.inner.dual_gap)
}

/// Number of subgroups, or 0 for a null handle.
///
/// # Safety
/// `sol` must be null or a live handle from [`fr_risk_solve`].
#[no_mangle]
pub unsafe extern "C" fn fr_risk_solution_len(sol: *const FrRiskSolution) -> usize {
    sol.as_ref().map_or(0, |s| s.inner.weights.len())
}

/// Copies the maximizing weights into `out`, which holds `len` doubles.
///
/// # Safety
/// `sol` must be a live handle and `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn fr_risk_solution_weights(sol: *const FrRiskSolution, out: *mut f64, len: usize) -> FrStatus {
    guard(|| {
        let sol = sol.as_ref().ok_or_else(|| null("solution"))?;
        let w = &sol.inner.weights;
        if len < w.len() {
            return Err(Failure(
                FrStatus::BufferTooSmall,
                format!("need {} doubles, got {len}", w.len()),
            ));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        slice::from_raw_parts_mut(out, w.len()).copy_from_slice(w);
        Ok(())
    })
}

/// # Safety
/// `sol` must be null or a handle from [`fr_risk_solve`] not freed before.
#[no_mangle]
pub unsafe extern "C" fn fr_risk_solution_free(sol: *mut FrRiskSolution) {
    if !sol.is_null() {
        drop(Box::from_raw(sol));
    }
}

/// `kl(a‖b)` if `a ≤ b`, else 0. Infinite at `kl(0‖1)`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fr_kl_plus(a: f64, b: f64, out: *mut f64) -> FrStatus {
    guard(|| {
        *out_arg(out, "out")? = kl_plus(a, b).map_err(invalid)?;
        Ok(())
    })
}

/// Largest `b` in `[a, 1]` with `kl⁺(a‖b) ≤ eps`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fr_kl_inverse(a: f64, eps: f64, out: *mut f64) -> FrStatus {
    guard(|| {
        *out_arg(out, "out")? = kl_inverse(a, eps).map_err(invalid)?;
        Ok(())
    })
}

/// Evaluates one bound.
///
/// # Safety
/// `input` must be readable; for subgroup kinds `m_a` and `pi` must point
/// to `n` values each. `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fr_bound_evaluate(input: *const FrBoundInput, out: *mut FrBoundOutput) -> FrStatus {
    guard(|| {
        let input = input.as_ref().ok_or_else(|| null("input"))?;
        let out = out_arg(out, "out")?;
        let kind = BoundKind::from(input.kind);
        let ctx = if kind.per_example() {
            BoundContext::per_example(
                input.m,
                input.alpha,
                input.delta,
                input.lambda,
                input.n_priors,
                input.kl_term,
            )
        } else {
            BoundContext::subgroups(
                slice_arg(input.m_a, input.n, "m_a")?.to_vec(),
                slice_arg(input.pi, input.n, "pi")?.to_vec(),
                input.alpha,
                input.delta,
                input.n_priors,
                input.kl_term,
            )
        };
        let report = kind.evaluate(input.empirical_risk, &ctx).map_err(invalid)?;
        *out = FrBoundOutput::from(&report);
        Ok(())
    })
}

/// Loads a checkpoint written by `fentrisk run --checkpoints`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable. On success
/// `*out` owns a handle to release with [`fr_model_free`].
#[no_mangle]
pub unsafe extern "C" fn fr_model_load(path: *const c_char, out: *mut *mut FrModel) -> FrStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let path = str_arg(path, "path")?;
        let ckpt = Checkpoint::load(Path::new(path)).map_err(from_model)?;
        *out = Box::into_raw(Box::new(FrModel { inner: ckpt }));
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle from [`fr_model_load`] not freed before.
#[no_mangle]
pub unsafe extern "C" fn fr_model_free(model: *mut FrModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Input width, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fr_model_input_dim(model: *const FrModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.arch.input_dim())
}

/// Number of classes, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fr_model_n_classes(model: *const FrModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.arch.n_classes())
}

/// Class probabilities of one standardized input.
///
/// # Safety
/// `model` must be a live handle, `x` must point to `dim` doubles and
/// `out` to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn fr_model_predict_proba(
    model: *const FrModel,
    x: *const f64,
    dim: usize,
    out: *mut f64,
    len: usize,
) -> FrStatus {
    guard(|| {
        let model = &model.as_ref().ok_or_else(|| null("model"))?.inner;
        let x = slice_arg(x, dim, "x")?;
        let probs = forward(&model.arch, &model.params, x).map_err(invalid)?;
        if len < probs.len() {
            return Err(Failure(
                FrStatus::BufferTooSmall,
                format!("need {} doubles, got {len}", probs.len()),
            ));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        slice::from_raw_parts_mut(out, probs.len()).copy_from_slice(&probs);
        Ok(())
    })
}

/// Most probable class of one standardized input.
///
/// # Safety
/// `model` must be a live handle, `x` must point to `dim` doubles and
/// `class_out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fr_model_predict(
    model: *const FrModel,
    x: *const f64,
    dim: usize,
    class_out: *mut usize,
) -> FrStatus {
    guard(|| {
        let model = &model.as_ref().ok_or_else(|| null("model"))?.inner;
        let x = slice_arg(x, dim, "x")?;
        let class_out = out_arg(class_out, "class_out")?;
        *class_out = fentrisk::model::predict(&model.arch, &model.params, x).map_err(invalid)?;
        Ok(())
    })
}

/// Certifies the model on a CSV dataset with CVaR over class subgroups and
/// class-ratio reference, as `fentrisk bound` does with its defaults.
///
/// # Safety
/// `model` must be a live handle, `csv_path` and `label_column`
/// NUL-terminated strings, and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fr_model_certify(
    model: *const FrModel,
    csv_path: *const c_char,
    label_column: *const c_char,
    kind: FrBoundKind,
    alpha: f64,
    delta: f64,
    lambda: f64,
    out: *mut FrBoundOutput,
) -> FrStatus {
    guard(|| {
        let model = &model.as_ref().ok_or_else(|| null("model"))?.inner;
        let path = str_arg(csv_path, "csv_path")?;
        let label = str_arg(label_column, "label_column")?;
        let out = out_arg(out, "out")?;
        let data = load_csv(Path::new(path), label)
            .and_then(|d| d.with_class_order(&model.class_names))
            .map_err(from_data)?;
        let partition = partition_by_class(&data, Reference::ClassRatio).map_err(from_data)?;
        let (posterior, prior) = model.distributions(1e-6).map_err(from_model)?;
        let settings = CertifySettings {
            risk: RiskKind::Cvar,
            delta,
            lambda,
            l_max: DEFAULT_L_MAX,
            n_priors: model.n_priors,
        };
        let report = certify(
            &model.arch,
            &model.params,
            &posterior,
            &prior,
            kind.into(),
            alpha,
            &data,
            &partition,
            &settings,
        )
        .map_err(|e| match e {
            TrainError::Io(_) => Failure(FrStatus::Io, e.to_string()),
            _ => invalid(e),
        })?;
        *out = FrBoundOutput::from(&report);
        Ok(())
    })
}
