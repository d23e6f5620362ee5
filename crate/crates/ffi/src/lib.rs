//! C interface to `layerscale`.
//!
//! Every fallible function returns an [`LsStatus`]. On failure a message is
//! stored per thread and can be read with [`ls_last_error`]. Objects are
//! handed out as opaque pointers and must be released with the matching
//! `*_free` function. Panics never cross the boundary; they surface as
//! [`LsStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, c_void, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use layerscale::curve::{BezierCurve, ControlPoint, SamplingMode, ScaleSchedule};
use layerscale::evolution::{utilization, GaConfig, SearchResult, SearchRunner, UtilizationWeights};
use layerscale::fitness::{AccuracyTriple, ConstantEvaluator, EvalError, Evaluator, PlantedOracle};
use layerscale::rope::{default_peak_layer, entropy, extrapolation_schedule};
use layerscale::search_space::SearchGrid;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Evaluator = 3,
    BufferTooSmall = 4,
    Panic = 5,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LsSamplingMode {
    UniformT = 0,
    XResolved = 1,
}

/// Position-wise accuracies in percent.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LsAccuracy {
    pub first: f64,
    pub middle: f64,
    pub last: f64,
    pub sample_count: u64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LsWeights {
    pub first: f64,
    pub middle: f64,
    pub last: f64,
}

/// Scores `n_layers` scales into `out`; returns 0 on success.
pub type LsEvalCallback = Option<
    unsafe extern "C" fn(
        user_data: *mut c_void,
        scales: *const f64,
        n_layers: usize,
        first_scaled_layer: usize,
        out: *mut LsAccuracy,
    ) -> i32,
>;

pub struct LsCurve(BezierCurve);

pub struct LsEvaluator(Box<dyn Evaluator>);

pub struct LsSearchResult(SearchResult);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

type Fallible = Result<(), (LsStatus, String)>;

fn invalid(e: impl std::fmt::Display) -> (LsStatus, String) {
    (LsStatus::InvalidArgument, e.to_string())
}

fn guard(f: impl FnOnce() -> Fallible) -> LsStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => LsStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(&msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(&format!("panic: {msg}"));
            LsStatus::Panic
        }
    }
}

fn non_null<T>(p: *const T, name: &str) -> Result<(), (LsStatus, String)> {
    if p.is_null() {
        Err((LsStatus::NullPointer, format!("`{name}` is null")))
    } else {
        Ok(())
    }
}

unsafe fn slice<'a>(p: *const f64, len: usize, name: &str) -> Result<&'a [f64], (LsStatus, String)> {
    if len == 0 {
        return Ok(&[]);
    }
    non_null(p, name)?;
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn write_scales(values: &[f64], out: *mut f64, len: usize) -> Fallible {
    if values.len() > len {
        return Err((
            LsStatus::BufferTooSmall,
            format!("need room for {} values, got {len}", values.len()),
        ));
    }
    non_null(out, "out_scales")?;
    ptr::copy_nonoverlapping(values.as_ptr(), out, values.len());
    Ok(())
}

impl From<AccuracyTriple> for LsAccuracy {
    fn from(t: AccuracyTriple) -> Self {
        let t = t.to_percent();
        Self {
            first: t.first,
            middle: t.middle,
            last: t.last,
            sample_count: t.sample_count,
        }
    }
}

fn triple(a: &LsAccuracy) -> Result<AccuracyTriple, EvalError> {
    Ok(AccuracyTriple::percent(a.first, a.middle, a.last)?.with_sample_count(a.sample_count))
}

/// Library version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ls_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL. Valid until the
/// next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn ls_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Number of distinct curves with `n_control` points on the default grid.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ls_space_size(n_layers: usize, n_control: usize, out: *mut u64) -> LsStatus {
    guard(|| {
        non_null(out, "out")?;
        let grid = SearchGrid::new(n_layers).map_err(invalid)?;
        let size = grid.space_size(n_control).map_err(invalid)?;
        *out = u64::try_from(size).map_err(|_| invalid(format!("{size} does not fit in 64 bits")))?;
        Ok(())
    })
}

/// `log10` of the number of per-layer schedules on the default grid.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ls_brute_force_log10(n_layers: usize, out: *mut f64) -> LsStatus {
    guard(|| {
        non_null(out, "out")?;
        let grid = SearchGrid::new(n_layers).map_err(invalid)?;
        *out = n_layers as f64 * (grid.y_count() as f64).log10();
        Ok(())
    })
}

/// Weighted utilization of `acc`; weights must satisfy `0 < first < middle < last`.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn ls_utilization(
    acc: *const LsAccuracy,
    weights: *const LsWeights,
    out: *mut f64,
) -> LsStatus {
    guard(|| {
        non_null(acc, "acc")?;
        non_null(weights, "weights")?;
        non_null(out, "out")?;
        let w = &*weights;
        let w = UtilizationWeights::new(w.first, w.middle, w.last).map_err(invalid)?;
        *out = utilization(&triple(&*acc).map_err(invalid)?, &w).map_err(invalid)?;
        Ok(())
    })
}

/// Shannon entropy in nats of the normalized weights.
///
/// # Safety
/// `weights` must point to `len` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ls_entropy(weights: *const f64, len: usize, out: *mut f64) -> LsStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = entropy(slice(weights, len, "weights")?).map_err(invalid)?;
        Ok(())
    })
}

/// Triangle schedule rising from `target / pretrained` to that plus
/// `interval` at `peak_layer` (negative for the default) and back.
///
/// # Safety
/// `out_scales` must have room for `len >= n_layers` doubles.
#[no_mangle]
pub unsafe extern "C" fn ls_extrapolation_schedule(
    n_layers: usize,
    pretrained: f64,
    target: f64,
    interval: f64,
    peak_layer: i64,
    out_scales: *mut f64,
    len: usize,
) -> LsStatus {
    guard(|| {
        let peak = usize::try_from(peak_layer).unwrap_or_else(|_| default_peak_layer(n_layers));
        let s = extrapolation_schedule(n_layers, pretrained, target, interval, peak).map_err(invalid)?;
        write_scales(s.scales(), out_scales, len)
    })
}

/// Builds a curve from `len` control points with strictly increasing x.
///
/// # Safety
/// `xs` and `ys` must point to `len` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ls_curve_new(
    xs: *const f64,
    ys: *const f64,
    len: usize,
    out: *mut *mut LsCurve,
) -> LsStatus {
    guard(|| {
        non_null(out, "out")?;
        let xs = slice(xs, len, "xs")?;
        let ys = slice(ys, len, "ys")?;
        let points = xs.iter().zip(ys).map(|(&x, &y)| ControlPoint::new(x, y)).collect();
        let curve = BezierCurve::new(points).map_err(invalid)?;
        *out = Box::into_raw(Box::new(LsCurve(curve)));
        Ok(())
    })
}

/// Samples one scale per layer, clamping values below 1.
///
/// # Safety
/// `curve` must come from [`ls_curve_new`]; `out_scales` must have room for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ls_curve_sample(
    curve: *const LsCurve,
    n_layers: usize,
    mode: LsSamplingMode,
    out_scales: *mut f64,
    len: usize,
) -> LsStatus {
    guard(|| {
        non_null(curve, "curve")?;
        let mode = match mode {
            LsSamplingMode::UniformT => SamplingMode::UniformT,
            LsSamplingMode::XResolved => SamplingMode::XResolved,
        };
        let sampled = (*curve).0.sample_layer_scales(n_layers, mode).map_err(invalid)?;
        write_scales(sampled.schedule.scales(), out_scales, len)
    })
}

/// # Safety
/// `curve` must come from [`ls_curve_new`] or be NULL.
#[no_mangle]
pub unsafe extern "C" fn ls_curve_free(curve: *mut LsCurve) {
    if !curve.is_null() {
        drop(Box::from_raw(curve));
    }
}

fn box_evaluator(e: impl Evaluator + 'static, out: *mut *mut LsEvaluator) {
    unsafe { *out = Box::into_raw(Box::new(LsEvaluator(Box::new(e)))) };
}

/// Synthetic oracle peaked at the given per-layer schedule.
///
/// # Safety
/// `hidden` must point to `len` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ls_evaluator_planted_new(
    hidden: *const f64,
    len: usize,
    sharpness: f64,
    out: *mut *mut LsEvaluator,
) -> LsStatus {
    guard(|| {
        non_null(out, "out")?;
        if !(sharpness.is_finite() && sharpness > 0.0) {
            return Err(invalid(format!("sharpness must be > 0, got {sharpness}")));
        }
        let hidden = ScaleSchedule::new(slice(hidden, len, "hidden")?.to_vec(), 0).map_err(invalid)?;
        box_evaluator(PlantedOracle::new(hidden, sharpness), out);
        Ok(())
    })
}

/// Evaluator returning `acc` for every schedule.
///
/// # Safety
/// `acc` and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ls_evaluator_constant_new(
    acc: *const LsAccuracy,
    out: *mut *mut LsEvaluator,
) -> LsStatus {
    guard(|| {
        non_null(acc, "acc")?;
        non_null(out, "out")?;
        box_evaluator(ConstantEvaluator::new(triple(&*acc).map_err(invalid)?), out);
        Ok(())
    })
}

struct CallbackEvaluator {
    callback: unsafe extern "C" fn(*mut c_void, *const f64, usize, usize, *mut LsAccuracy) -> i32,
    user_data: *mut c_void,
}

// The caller promises the callback and its data may be used from any thread.
unsafe impl Send for CallbackEvaluator {}
unsafe impl Sync for CallbackEvaluator {}

impl Evaluator for CallbackEvaluator {
    fn evaluate(&self, schedule: &ScaleSchedule) -> Result<AccuracyTriple, EvalError> {
        let mut acc = LsAccuracy::default();
        let code = unsafe {
            (self.callback)(
                self.user_data,
                schedule.scales().as_ptr(),
                schedule.len(),
                schedule.first_scaled_layer(),
                &mut acc,
            )
        };
        if code != 0 {
            return Err(EvalError::Backend(format!("callback returned {code}")));
        }
        triple(&acc)
    }

    fn describe(&self) -> String {
        "callback".into()
    }
}

/// Evaluator backed by a host function. With `jobs > 1` in
/// [`ls_search_run`] the callback is invoked from several threads at once.
///
/// # Safety
/// `callback` must stay valid for the evaluator's lifetime; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ls_evaluator_callback_new(
    callback: LsEvalCallback,
    user_data: *mut c_void,
    out: *mut *mut LsEvaluator,
) -> LsStatus {
    guard(|| {
        non_null(out, "out")?;
        let callback = callback.ok_or((LsStatus::NullPointer, "`callback` is null".to_string()))?;
        box_evaluator(CallbackEvaluator { callback, user_data }, out);
        Ok(())
    })
}

/// Scores one schedule.
///
/// # Safety
/// `evaluator` must come from an `ls_evaluator_*_new` call; `scales` must
/// point to `len` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ls_evaluator_evaluate(
    evaluator: *const LsEvaluator,
    scales: *const f64,
    len: usize,
    first_scaled_layer: usize,
    out: *mut LsAccuracy,
) -> LsStatus {
    guard(|| {
        non_null(evaluator, "evaluator")?;
        non_null(out, "out")?;
        let schedule = ScaleSchedule::new(slice(scales, len, "scales")?.to_vec(), first_scaled_layer)
            .map_err(invalid)?;
        match (*evaluator).0.evaluate(&schedule) {
            Ok(t) => {
                *out = t.into();
                Ok(())
            }
            Err(EvalError::InvalidSchedule(m)) => Err(invalid(m)),
            Err(e) => Err((LsStatus::Evaluator, e.to_string())),
        }
    })
}

/// # Safety
/// `evaluator` must come from an `ls_evaluator_*_new` call or be NULL.
#[no_mangle]
pub unsafe extern "C" fn ls_evaluator_free(evaluator: *mut LsEvaluator) {
    if !evaluator.is_null() {
        drop(Box::from_raw(evaluator));
    }
}

/// Runs the genetic search.
///
/// `config_json` holds search settings as a JSON object (NULL or `"{}"`
/// for defaults); `jobs` of 0 means one thread. If the evaluator fails
/// mid-run the partial result is still stored in `out` and
/// [`LsStatus::Evaluator`] is returned.
///
/// # Safety
/// `config_json` must be NULL or NUL-terminated UTF-8; `evaluator` must be
/// valid; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ls_search_run(
    config_json: *const c_char,
    evaluator: *const LsEvaluator,
    jobs: usize,
    out: *mut *mut LsSearchResult,
) -> LsStatus {
    guard(|| {
        non_null(evaluator, "evaluator")?;
        non_null(out, "out")?;
        *out = ptr::null_mut();
        let config: GaConfig = if config_json.is_null() {
            GaConfig::default()
        } else {
            let text = CStr::from_ptr(config_json).to_str().map_err(invalid)?;
            serde_json::from_str(text).map_err(invalid)?
        };
        let result = SearchRunner::new()
            .jobs(jobs.max(1))
            .run(&config, &(*evaluator).0)
            .map_err(invalid)?;
        let failure = result.failure.clone();
        *out = Box::into_raw(Box::new(LsSearchResult(result)));
        match failure {
            Some(msg) => Err((LsStatus::Evaluator, msg)),
            None => Ok(()),
        }
    })
}

/// # Safety
/// `result` must come from [`ls_search_run`].
#[no_mangle]
pub unsafe extern "C" fn ls_result_complete(result: *const LsSearchResult) -> bool {
    !result.is_null() && (*result).0.complete
}

/// # Safety
/// `result` must come from [`ls_search_run`]; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ls_result_best_utilization(
    result: *const LsSearchResult,
    out: *mut f64,
) -> LsStatus {
    guard(|| {
        non_null(result, "result")?;
        non_null(out, "out")?;
        *out = (*result)
            .0
            .best_utilization()
            .ok_or_else(|| invalid("no individual was evaluated"))?;
        Ok(())
    })
}

/// Copies the best schedule into `out_scales` and its length into `out_len`.
/// When the buffer is too short only `out_len` is written.
///
/// # Safety
/// `result` must come from [`ls_search_run`]; `out_scales` must have room for
/// `len` doubles; `out_len` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ls_result_best_schedule(
    result: *const LsSearchResult,
    out_scales: *mut f64,
    len: usize,
    out_len: *mut usize,
) -> LsStatus {
    guard(|| {
        non_null(result, "result")?;
        non_null(out_len, "out_len")?;
        let best = (*result)
            .0
            .best_schedule
            .as_ref()
            .ok_or_else(|| invalid("no individual was evaluated"))?;
        *out_len = best.len();
        write_scales(best.scales(), out_scales, len)
    })
}

/// Result as canonical JSON; release with [`ls_string_free`]. NULL on failure.
///
/// # Safety
/// `result` must come from [`ls_search_run`].
#[no_mangle]
pub unsafe extern "C" fn ls_result_to_json(result: *const LsSearchResult) -> *mut c_char {
    let mut text = ptr::null_mut();
    guard(|| {
        non_null(result, "result")?;
        text = CString::new((*result).0.canonical_json())
            .map_err(invalid)?
            .into_raw();
        Ok(())
    });
    text
}

/// # Safety
/// `result` must come from [`ls_search_run`] or be NULL.
#[no_mangle]
pub unsafe extern "C" fn ls_result_free(result: *mut LsSearchResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}

/// # Safety
/// `s` must come from this library or be NULL.
#[no_mangle]
pub unsafe extern "C" fn ls_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
