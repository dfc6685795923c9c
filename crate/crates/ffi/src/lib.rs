//! C ABI for fitting and applying treatment rules.
//!
//! Every function returns a [`GpcStatus`]; on failure the message is kept in
//! a thread-local buffer readable through [`gpc_last_error_message`]. Objects
//! are opaque handles owned by the caller and released with the matching
//! `_free` function. Matrices are dense, row-major `f64` arrays.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::slice;

use gpc_itr::persist::{load_model, save_model};
use gpc_itr::sim::Pipeline;
use gpc_itr::{
    BaggingConfig, Direction, Error, ForestConfig, ItrModel, Metric, OutcomeKind, PriorityLevel, ScoreSpec,
    TrialDataset,
};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GpcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Validation = 3,
    Runtime = 4,
    Panic = 5,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GpcOutcomeKind {
    Binary = 0,
    Continuous = 1,
    Ordinal = 2,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GpcDirection {
    HigherIsBetter = 0,
    LowerIsBetter = 1,
}

/// Outcome hierarchy used to compare two subjects.
pub struct GpcScoreSpec(ScoreSpec);

/// Two-arm trial with numeric covariates and outcomes.
pub struct GpcDataset(TrialDataset);

/// Fitted treatment rule.
pub struct GpcModel(ItrModel);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let clean = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = clean);
}

struct Failure(GpcStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = if e.is_validation() { GpcStatus::Validation } else { GpcStatus::Runtime };
        Failure(status, e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> GpcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            GpcStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            GpcStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(GpcStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(GpcStatus::InvalidArgument, msg.into())
}

unsafe fn borrow<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn array<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn array_mut<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts_mut(p, len))
}

unsafe fn store<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output handle"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

fn rows(flat: &[f64], n: usize, width: usize) -> Vec<Vec<f64>> {
    (0..n).map(|i| flat[i * width..(i + 1) * width].to_vec()).collect()
}

fn matrix_len(n: usize, width: usize, what: &str) -> Result<usize, Failure> {
    n.checked_mul(width).ok_or_else(|| invalid(format!("{what} dimensions overflow")))
}

unsafe fn path_arg(path: *const c_char) -> Result<String, Failure> {
    if path.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(path)
        .to_str()
        .map(str::to_owned)
        .map_err(|_| invalid("path is not valid UTF-8"))
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn gpc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn gpc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds an outcome hierarchy from `n_levels` parallel arrays, highest
/// priority first. Thresholds must be zero for binary and ordinal levels.
///
/// # Safety
/// Each array must hold `n_levels` elements; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gpc_score_spec_new(
    kinds: *const GpcOutcomeKind,
    directions: *const GpcDirection,
    thresholds: *const f64,
    n_levels: usize,
    out: *mut *mut GpcScoreSpec,
) -> GpcStatus {
    guard(|| {
        let kinds = array(kinds, n_levels, "kinds")?;
        let directions = array(directions, n_levels, "directions")?;
        let thresholds = array(thresholds, n_levels, "thresholds")?;
        let levels = (0..n_levels)
            .map(|i| {
                let kind = match kinds[i] {
                    GpcOutcomeKind::Binary => OutcomeKind::Binary,
                    GpcOutcomeKind::Continuous => OutcomeKind::Continuous,
                    GpcOutcomeKind::Ordinal => OutcomeKind::Ordinal,
                };
                let direction = match directions[i] {
                    GpcDirection::HigherIsBetter => Direction::HigherIsBetter,
                    GpcDirection::LowerIsBetter => Direction::LowerIsBetter,
                };
                PriorityLevel::new(kind, direction, thresholds[i])
            })
            .collect::<gpc_itr::Result<Vec<_>>>()?;
        store(out, GpcScoreSpec(ScoreSpec::new(levels)?))
    })
}

/// # Safety
/// `spec` must come from [`gpc_score_spec_new`] or be null.
#[no_mangle]
pub unsafe extern "C" fn gpc_score_spec_free(spec: *mut GpcScoreSpec) {
    if !spec.is_null() {
        drop(Box::from_raw(spec));
    }
}

/// Pairwise score of outcome vector `v` (experimental) against `y` (control):
/// +1, 0 or -1.
///
/// # Safety
/// `y` and `v` must hold `n_levels` elements; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gpc_score(
    spec: *const GpcScoreSpec,
    y: *const f64,
    v: *const f64,
    n_levels: usize,
    out: *mut i8,
) -> GpcStatus {
    guard(|| {
        let spec = &borrow(spec, "spec")?.0;
        let y = array(y, n_levels, "y")?;
        let v = array(v, n_levels, "v")?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = gpc_itr::score(spec, y, v)?.value();
        Ok(())
    })
}

/// Builds a trial from row-major matrices: `control_x` is `m x d`,
/// `control_y` is `m x k`, `experimental_u` is `n x d` and `experimental_v`
/// is `n x k`.
///
/// # Safety
/// Each matrix must hold the stated number of elements; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gpc_dataset_new(
    control_x: *const f64,
    control_y: *const f64,
    m: usize,
    experimental_u: *const f64,
    experimental_v: *const f64,
    n: usize,
    d: usize,
    k: usize,
    out: *mut *mut GpcDataset,
) -> GpcStatus {
    guard(|| {
        if d == 0 || k == 0 {
            return Err(invalid("covariate and outcome dimensions must be positive"));
        }
        let cx = array(control_x, matrix_len(m, d, "control_x")?, "control_x")?;
        let cy = array(control_y, matrix_len(m, k, "control_y")?, "control_y")?;
        let eu = array(experimental_u, matrix_len(n, d, "experimental_u")?, "experimental_u")?;
        let ev = array(experimental_v, matrix_len(n, k, "experimental_v")?, "experimental_v")?;
        let data = TrialDataset::from_arrays(rows(cx, m, d), rows(cy, m, k), rows(eu, n, d), rows(ev, n, k))?;
        store(out, GpcDataset(data))
    })
}

/// # Safety
/// `data` must come from [`gpc_dataset_new`] or be null.
#[no_mangle]
pub unsafe extern "C" fn gpc_dataset_free(data: *mut GpcDataset) {
    if !data.is_null() {
        drop(Box::from_raw(data));
    }
}

/// Net benefit: mean pairwise score over all control/experimental pairs.
///
/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gpc_net_benefit(
    data: *const GpcDataset,
    spec: *const GpcScoreSpec,
    out: *mut f64,
) -> GpcStatus {
    guard(|| {
        let value = gpc_itr::net_benefit(&borrow(data, "data")?.0, &borrow(spec, "spec")?.0)?;
        *out.as_mut().ok_or_else(|| null("out"))? = value;
        Ok(())
    })
}

unsafe fn fit_pipeline(
    pipeline: Pipeline,
    data: *const GpcDataset,
    spec: *const GpcScoreSpec,
    seed: u64,
    out: *mut *mut GpcModel,
) -> GpcStatus {
    guard(|| {
        let model = pipeline.fit(&borrow(data, "data")?.0, &borrow(spec, "spec")?.0, seed)?;
        store(out, GpcModel(model))
    })
}

fn forest(n_trees: usize, mtry: usize, min_leaf: usize) -> ForestConfig {
    let base = ForestConfig::default();
    ForestConfig {
        n_trees: if n_trees == 0 { base.n_trees } else { n_trees },
        mtry: (mtry > 0).then_some(mtry),
        min_leaf: if min_leaf == 0 { base.min_leaf } else { min_leaf },
        ..base
    }
}

/// Nearest-neighbour rule with `c` control and `e` experimental neighbours;
/// zero selects the default count for that arm.
///
/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gpc_fit_knn(
    data: *const GpcDataset,
    spec: *const GpcScoreSpec,
    c: usize,
    e: usize,
    out: *mut *mut GpcModel,
) -> GpcStatus {
    let pipeline = Pipeline::Knn {
        c: (c > 0).then_some(c),
        e: (e > 0).then_some(e),
        exponent: gpc_itr::knn::DEFAULT_NEIGHBOR_EXPONENT,
        metric: Metric::Euclidean,
    };
    fit_pipeline(pipeline, data, spec, 0, out)
}

/// Random forest on every control/experimental pair. Zero for `n_trees`,
/// `mtry` or `min_leaf` selects the default.
///
/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gpc_fit_forest(
    data: *const GpcDataset,
    spec: *const GpcScoreSpec,
    n_trees: usize,
    mtry: usize,
    min_leaf: usize,
    seed: u64,
    out: *mut *mut GpcModel,
) -> GpcStatus {
    let pipeline = Pipeline::FullPairs { forest: forest(n_trees, mtry, min_leaf) };
    fit_pipeline(pipeline, data, spec, seed, out)
}

/// Bagged forests on matched-pair subsamples. `q <= 0` selects the default
/// subsampling probability; zero `bags` selects the default bag count.
///
/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gpc_fit_bagged(
    data: *const GpcDataset,
    spec: *const GpcScoreSpec,
    bags: usize,
    q: f64,
    n_trees: usize,
    mtry: usize,
    min_leaf: usize,
    seed: u64,
    out: *mut *mut GpcModel,
) -> GpcStatus {
    let base = BaggingConfig::default();
    let bagging = BaggingConfig {
        bags: if bags == 0 { base.bags } else { bags },
        q: (q > 0.0).then_some(q),
        ..base
    };
    let pipeline = Pipeline::Bagged { bagging, forest: forest(n_trees, mtry, min_leaf) };
    fit_pipeline(pipeline, data, spec, seed, out)
}

/// Number of covariates the model expects.
///
/// # Safety
/// `model` must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gpc_model_dim(model: *const GpcModel, out: *mut usize) -> GpcStatus {
    guard(|| {
        let dim = borrow(model, "model")?.0.dim();
        *out.as_mut().ok_or_else(|| null("out"))? = dim;
        Ok(())
    })
}

unsafe fn predict_rows<T>(
    model: *const GpcModel,
    x: *const f64,
    n_rows: usize,
    d: usize,
    out: *mut T,
    f: impl Fn(&ItrModel, &[f64]) -> gpc_itr::Result<T>,
) -> GpcStatus {
    guard(|| {
        let model = &borrow(model, "model")?.0;
        if d != model.dim() {
            return Err(invalid(format!("model expects {} covariates, got {d}", model.dim())));
        }
        let x = array(x, matrix_len(n_rows, d, "x")?, "x")?;
        let out = array_mut(out, n_rows, "out")?;
        for (i, slot) in out.iter_mut().enumerate() {
            *slot = f(model, &x[i * d..(i + 1) * d])?;
        }
        Ok(())
    })
}

/// Individualized pairwise benefit for each row of the `n_rows x d` matrix.
///
/// # Safety
/// `x` must hold `n_rows * d` elements and `out` `n_rows`.
#[no_mangle]
pub unsafe extern "C" fn gpc_model_ipb(
    model: *const GpcModel,
    x: *const f64,
    n_rows: usize,
    d: usize,
    out: *mut f64,
) -> GpcStatus {
    predict_rows(model, x, n_rows, d, out, |m, row| m.ipb_encoded(row))
}

/// Recommended arm (1 experimental, 0 control) for each row.
///
/// # Safety
/// `x` must hold `n_rows * d` elements and `out` `n_rows`.
#[no_mangle]
pub unsafe extern "C" fn gpc_model_rule(
    model: *const GpcModel,
    x: *const f64,
    n_rows: usize,
    d: usize,
    out: *mut u8,
) -> GpcStatus {
    predict_rows(model, x, n_rows, d, out, |m, row| m.rule_encoded(row))
}

/// # Safety
/// `model` must be live; `path` a NUL-terminated UTF-8 string.
#[no_mangle]
pub unsafe extern "C" fn gpc_model_save(model: *const GpcModel, path: *const c_char) -> GpcStatus {
    guard(|| {
        let model = &borrow(model, "model")?.0;
        save_model(model, path_arg(path)?)?;
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated UTF-8 string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gpc_model_load(path: *const c_char, out: *mut *mut GpcModel) -> GpcStatus {
    guard(|| {
        let model = load_model(path_arg(path)?)?;
        store(out, GpcModel(model))
    })
}

/// # Safety
/// `model` must come from a fit or load function, or be null.
#[no_mangle]
pub unsafe extern "C" fn gpc_model_free(model: *mut GpcModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}
