//! C interface to marnet models.
//!
//! Models are opaque handles created by `marnet_model_build`,
//! `marnet_model_build_preset` or `marnet_model_load` and released with
//! `marnet_model_free`. Every fallible call returns `MARNET_OK` or an error
//! code; `marnet_last_error` copies the message of the most recent failure on
//! the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use marnet::data::PointCloud;
use marnet::harness::{checkpoint_from_bytes, save_checkpoint, TrainState};
use marnet::model::{Model, ModelConfig, Task};
use marnet::tensor::AdamState;
use marnet::Error;

pub const MARNET_OK: i32 = 0;
pub const MARNET_ERR_CONFIG: i32 = 2;
pub const MARNET_ERR_SHAPE: i32 = 3;
pub const MARNET_ERR_NON_FINITE: i32 = 4;
pub const MARNET_ERR_INVALID_ARGUMENT: i32 = 5;
pub const MARNET_ERR_PARSE: i32 = 6;
pub const MARNET_ERR_DATASET: i32 = 7;
pub const MARNET_ERR_DIVERGED: i32 = 8;
pub const MARNET_ERR_IO: i32 = 9;
pub const MARNET_ERR_JSON: i32 = 10;
pub const MARNET_ERR_CHECKPOINT_MAGIC: i32 = 20;
pub const MARNET_ERR_CHECKPOINT_VERSION: i32 = 21;
pub const MARNET_ERR_CHECKPOINT_TRUNCATED: i32 = 22;
pub const MARNET_ERR_CHECKPOINT_DUPLICATE: i32 = 23;
pub const MARNET_ERR_CHECKPOINT_ENTRY: i32 = 24;
pub const MARNET_ERR_CHECKPOINT_MISSING: i32 = 25;
pub const MARNET_ERR_NULL_POINTER: i32 = 30;
pub const MARNET_ERR_UTF8: i32 = 31;
pub const MARNET_ERR_BUFFER_TOO_SMALL: i32 = 32;
pub const MARNET_ERR_PANIC: i32 = 33;

/// What a model predicts.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MarnetTask {
    Classification = 0,
    PartSegmentation = 1,
}

/// A model and its optimizer state.
pub struct MarnetModel {
    model: Model,
    state: TrainState,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn fail(code: i32, message: impl Into<String>) -> i32 {
    set_error(message.into());
    code
}

fn guard(f: impl FnOnce() -> Result<(), i32>) -> i32 {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MARNET_OK,
        Ok(Err(code)) => code,
        Err(_) => fail(MARNET_ERR_PANIC, "internal panic"),
    }
}

fn check(err: Error) -> i32 {
    let code = err.exit_code();
    fail(code, err.to_string())
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, i32> {
    if p.is_null() {
        return Err(fail(MARNET_ERR_NULL_POINTER, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(MARNET_ERR_UTF8, format!("{what} is not valid UTF-8")))
}

unsafe fn model_arg<'a>(p: *const MarnetModel) -> Result<&'a MarnetModel, i32> {
    p.as_ref().ok_or_else(|| fail(MARNET_ERR_NULL_POINTER, "model is null"))
}

fn fresh(model: Model) -> Box<MarnetModel> {
    let m = model.params.params().iter().map(|p| vec![0.0; p.value.len()]).collect::<Vec<_>>();
    let state = TrainState {
        epoch: 0,
        adam: AdamState { step: 0, v: m.clone(), m },
    };
    Box::new(MarnetModel { model, state })
}

unsafe fn emit(out: *mut *mut MarnetModel, handle: Box<MarnetModel>) {
    *out = Box::into_raw(handle);
}

/// Builds a model from a JSON configuration with randomly initialized weights.
///
/// # Safety
/// `config_json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn marnet_model_build(config_json: *const c_char, seed: u64, out: *mut *mut MarnetModel) -> i32 {
    guard(|| {
        if out.is_null() {
            return Err(fail(MARNET_ERR_NULL_POINTER, "out is null"));
        }
        let text = str_arg(config_json, "config_json")?;
        let config = ModelConfig::from_json(text).map_err(check)?;
        let model = Model::build(&config, seed).map_err(check)?;
        emit(out, fresh(model));
        Ok(())
    })
}

/// Builds one of the named configurations: `classifier`, `lite`,
/// `segmenter` or `lite_segmenter`.
///
/// # Safety
/// `name` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn marnet_model_build_preset(
    name: *const c_char,
    n_outputs: usize,
    n_groups: usize,
    seed: u64,
    out: *mut *mut MarnetModel,
) -> i32 {
    guard(|| {
        if out.is_null() {
            return Err(fail(MARNET_ERR_NULL_POINTER, "out is null"));
        }
        let config = match str_arg(name, "name")? {
            "classifier" => ModelConfig::classifier(n_outputs, n_groups),
            "lite" => ModelConfig::lite(n_outputs, n_groups),
            "segmenter" => ModelConfig::segmenter(n_outputs, n_groups),
            "lite_segmenter" => ModelConfig::lite_segmenter(n_outputs, n_groups),
            other => return Err(fail(MARNET_ERR_INVALID_ARGUMENT, format!("unknown preset {other:?}"))),
        };
        let model = Model::build(&config, seed).map_err(check)?;
        emit(out, fresh(model));
        Ok(())
    })
}

/// Loads a model from a checkpoint file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn marnet_model_load(path: *const c_char, out: *mut *mut MarnetModel) -> i32 {
    guard(|| {
        if out.is_null() {
            return Err(fail(MARNET_ERR_NULL_POINTER, "out is null"));
        }
        let path = str_arg(path, "path")?;
        let bytes = std::fs::read(path).map_err(|e| check(Error::io(path, e)))?;
        let (model, state) = checkpoint_from_bytes(&bytes).map_err(check)?;
        emit(out, Box::new(MarnetModel { model, state }));
        Ok(())
    })
}

/// Writes a model to a checkpoint file.
///
/// # Safety
/// `model` must come from this library and `path` be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn marnet_model_save(model: *const MarnetModel, path: *const c_char) -> i32 {
    guard(|| {
        let m = model_arg(model)?;
        let path = str_arg(path, "path")?;
        save_checkpoint(path, &m.model, &m.state).map_err(check)
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn marnet_model_free(model: *mut MarnetModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Classes for a classifier, parts for a segmenter; 0 for null.
///
/// # Safety
/// `model` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn marnet_model_num_outputs(model: *const MarnetModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.config().n_outputs)
}

/// Trainable scalars; 0 for null.
///
/// # Safety
/// `model` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn marnet_model_num_parameters(model: *const MarnetModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.params.num_scalars())
}

/// # Safety
/// `model` must come from this library and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn marnet_model_task(model: *const MarnetModel, out: *mut MarnetTask) -> i32 {
    guard(|| {
        let m = model_arg(model)?;
        if out.is_null() {
            return Err(fail(MARNET_ERR_NULL_POINTER, "out is null"));
        }
        *out = match m.model.config().task {
            Task::Classification => MarnetTask::Classification,
            Task::PartSegmentation => MarnetTask::PartSegmentation,
        };
        Ok(())
    })
}

unsafe fn clouds_arg(
    positions: *const f64,
    normals: *const f64,
    n_clouds: usize,
    n_points: usize,
) -> Result<Vec<PointCloud>, i32> {
    if positions.is_null() || normals.is_null() {
        return Err(fail(MARNET_ERR_NULL_POINTER, "positions or normals is null"));
    }
    if n_clouds == 0 || n_points == 0 {
        return Err(fail(MARNET_ERR_INVALID_ARGUMENT, "empty batch"));
    }
    let len = n_clouds
        .checked_mul(n_points)
        .and_then(|n| n.checked_mul(3))
        .ok_or_else(|| fail(MARNET_ERR_INVALID_ARGUMENT, "batch size overflows"))?;
    let pos = std::slice::from_raw_parts(positions, len);
    let nrm = std::slice::from_raw_parts(normals, len);
    let triples = |s: &[f64]| s.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect::<Vec<_>>();
    pos.chunks_exact(n_points * 3)
        .zip(nrm.chunks_exact(n_points * 3))
        .map(|(p, n)| PointCloud::new(triples(p), triples(n)).map_err(check))
        .collect()
}

unsafe fn write_out(values: &[f32], out: *mut f32, out_len: usize) -> Result<(), i32> {
    if out.is_null() {
        return Err(fail(MARNET_ERR_NULL_POINTER, "out is null"));
    }
    if out_len < values.len() {
        return Err(fail(
            MARNET_ERR_BUFFER_TOO_SMALL,
            format!("output needs {} floats, got {out_len}", values.len()),
        ));
    }
    ptr::copy_nonoverlapping(values.as_ptr(), out, values.len());
    Ok(())
}

/// Eval-mode class logits for `n_clouds` clouds of `n_points` points each.
///
/// `positions` and `normals` hold `n_clouds * n_points` xyz triples, cloud by
/// cloud. `out` receives `n_clouds * n_outputs` logits.
///
/// # Safety
/// All pointers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn marnet_classify(
    model: *const MarnetModel,
    positions: *const f64,
    normals: *const f64,
    n_clouds: usize,
    n_points: usize,
    out: *mut f32,
    out_len: usize,
) -> i32 {
    guard(|| {
        let m = model_arg(model)?;
        let clouds = clouds_arg(positions, normals, n_clouds, n_points)?;
        let refs: Vec<&PointCloud> = clouds.iter().collect();
        let logits = m.model.classify(&refs).map_err(check)?;
        write_out(&logits.concat(), out, out_len)
    })
}

/// Eval-mode per-point part logits. `out` receives
/// `n_clouds * n_points * n_outputs` values, point by point.
///
/// # Safety
/// All pointers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn marnet_segment(
    model: *const MarnetModel,
    positions: *const f64,
    normals: *const f64,
    n_clouds: usize,
    n_points: usize,
    out: *mut f32,
    out_len: usize,
) -> i32 {
    guard(|| {
        let m = model_arg(model)?;
        let clouds = clouds_arg(positions, normals, n_clouds, n_points)?;
        let refs: Vec<&PointCloud> = clouds.iter().collect();
        let logits = m.model.segment(&refs).map_err(check)?;
        let flat: Vec<f32> = logits.into_iter().flatten().flatten().collect();
        write_out(&flat, out, out_len)
    })
}

/// Copies the last error message of this thread into `buf` (truncated and
/// NUL-terminated) and returns the full message length plus one.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn marnet_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        bytes.len() + 1
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn marnet_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
