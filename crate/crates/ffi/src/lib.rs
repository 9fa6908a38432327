//! C ABI over `boat-core`.
//!
//! Objects are opaque heap handles created by `*_new`/`*_load`-style calls
//! and released with the matching `*_free`. Every fallible call returns a
//! [`BoatStatus`]; on failure [`boat_last_error`] describes the problem.
//! Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use boat_core::format::{self, DynTensor};
use boat_core::grouping::{balanced_hierarchical_cluster, ClusterAssignment, GroupingConfig};
use boat_core::model::{boat_forward, count_params, estimate_flops, ModelConfig, ModelParams};
use boat_core::numeric::Tensor;
use boat_core::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoatStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    Config = 4,
    Format = 5,
    Io = 6,
    Numeric = 7,
    Panic = 8,
}

/// A tensor of f32 or f64 scalars.
pub struct BoatTensor {
    inner: DynTensor,
}

/// Result of balanced hierarchical clustering.
pub struct BoatAssignment {
    inner: ClusterAssignment<f64>,
}

/// A model configuration with f32 weights.
pub struct BoatModel {
    config: ModelConfig,
    params: ModelParams<f32>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> BoatStatus {
    match e {
        Error::Shape { .. }
        | Error::Divisibility { .. }
        | Error::OddTokenCount(_)
        | Error::IndexOutOfRange { .. }
        | Error::GroupSize { .. } => BoatStatus::Shape,
        Error::NonFinite(_) => BoatStatus::Numeric,
        Error::Config(_) | Error::Json(_) | Error::OverlapTooLarge { .. } => BoatStatus::Config,
        Error::Format(_) | Error::DType { .. } => BoatStatus::Format,
        Error::Io(_) => BoatStatus::Io,
        _ => BoatStatus::InvalidArgument,
    }
}

struct Fail(BoatStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(BoatStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> BoatStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => BoatStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            BoatStatus::Panic
        }
    }
}

unsafe fn as_ref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn as_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Fail(BoatStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn write_out<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output handle"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn copy_out<T: Copy>(src: &[T], dst: *mut T, cap: usize) -> Result<(), Fail> {
    if dst.is_null() {
        return Err(null("output buffer"));
    }
    if cap < src.len() {
        return Err(Fail(BoatStatus::InvalidArgument, format!("buffer holds {cap} elements, need {}", src.len())));
    }
    ptr::copy_nonoverlapping(src.as_ptr(), dst, src.len());
    Ok(())
}

unsafe fn shape_from(shape: *const usize, ndim: usize) -> Result<Vec<usize>, Fail> {
    if shape.is_null() {
        return Err(null("shape"));
    }
    Ok(std::slice::from_raw_parts(shape, ndim).to_vec())
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn boat_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Copies `prod(shape)` f32 values into a new tensor.
///
/// # Safety
/// `shape` must point to `ndim` values and `data` to `prod(shape)` values.
#[no_mangle]
pub unsafe extern "C" fn boat_tensor_new_f32(
    shape: *const usize,
    ndim: usize,
    data: *const f32,
    out: *mut *mut BoatTensor,
) -> BoatStatus {
    guard(|| {
        let shape = shape_from(shape, ndim)?;
        if data.is_null() {
            return Err(null("data"));
        }
        let n = shape.iter().product();
        let t = Tensor::new(shape, std::slice::from_raw_parts(data, n).to_vec())?;
        write_out(out, BoatTensor { inner: DynTensor::F32(t) })
    })
}

/// Copies `prod(shape)` f64 values into a new tensor.
///
/// # Safety
/// `shape` must point to `ndim` values and `data` to `prod(shape)` values.
#[no_mangle]
pub unsafe extern "C" fn boat_tensor_new_f64(
    shape: *const usize,
    ndim: usize,
    data: *const f64,
    out: *mut *mut BoatTensor,
) -> BoatStatus {
    guard(|| {
        let shape = shape_from(shape, ndim)?;
        if data.is_null() {
            return Err(null("data"));
        }
        let n = shape.iter().product();
        let t = Tensor::new(shape, std::slice::from_raw_parts(data, n).to_vec())?;
        write_out(out, BoatTensor { inner: DynTensor::F64(t) })
    })
}

/// # Safety
/// `t` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn boat_tensor_free(t: *mut BoatTensor) {
    if !t.is_null() {
        drop(Box::from_raw(t));
    }
}

/// Writes the rank to `ndim` and, if `shape` is non-null, up to `cap` extents.
///
/// # Safety
/// `t` must be a live handle; `shape` must have room for `cap` values.
#[no_mangle]
pub unsafe extern "C" fn boat_tensor_shape(
    t: *const BoatTensor,
    ndim: *mut usize,
    shape: *mut usize,
    cap: usize,
) -> BoatStatus {
    guard(|| {
        let t = as_ref(t, "tensor")?;
        let dims = t.inner.shape();
        if ndim.is_null() {
            return Err(null("ndim"));
        }
        *ndim = dims.len();
        if !shape.is_null() {
            copy_out(dims, shape, cap)?;
        }
        Ok(())
    })
}

/// 0 for f32, 1 for f64 (the BOATT dtype codes).
///
/// # Safety
/// `t` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn boat_tensor_dtype(t: *const BoatTensor, dtype: *mut u8) -> BoatStatus {
    guard(|| {
        let t = as_ref(t, "tensor")?;
        if dtype.is_null() {
            return Err(null("dtype"));
        }
        *dtype = match t.inner {
            DynTensor::F32(_) => 0,
            DynTensor::F64(_) => 1,
        };
        Ok(())
    })
}

/// Copies all values, converted to f32, into `out` (room for `cap`).
///
/// # Safety
/// `t` must be a live handle; `out` must have room for `cap` values.
#[no_mangle]
pub unsafe extern "C" fn boat_tensor_read_f32(t: *const BoatTensor, out: *mut f32, cap: usize) -> BoatStatus {
    guard(|| copy_out(as_ref(t, "tensor")?.inner.to_f32().data(), out, cap))
}

/// Copies all values, converted to f64, into `out` (room for `cap`).
///
/// # Safety
/// `t` must be a live handle; `out` must have room for `cap` values.
#[no_mangle]
pub unsafe extern "C" fn boat_tensor_read_f64(t: *const BoatTensor, out: *mut f64, cap: usize) -> BoatStatus {
    guard(|| copy_out(as_ref(t, "tensor")?.inner.to_f64().data(), out, cap))
}

/// Reads a BOATT file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn boat_tensor_load(path: *const c_char, out: *mut *mut BoatTensor) -> BoatStatus {
    guard(|| {
        let t = format::load(as_str(path, "path")?)?;
        write_out(out, BoatTensor { inner: t })
    })
}

/// Writes a BOATT file.
///
/// # Safety
/// `t` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn boat_tensor_save(t: *const BoatTensor, path: *const c_char) -> BoatStatus {
    guard(|| Ok(format::save(as_str(path, "path")?, &as_ref(t, "tensor")?.inner)?))
}

/// Balanced hierarchical clustering of a `[N, C]` tensor (computed in f64)
/// with ratio ranking.
///
/// # Safety
/// `tokens` must be a live handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn boat_cluster(
    tokens: *const BoatTensor,
    levels: u32,
    iters: usize,
    overlap: usize,
    out: *mut *mut BoatAssignment,
) -> BoatStatus {
    guard(|| {
        let t = as_ref(tokens, "tokens")?.inner.to_f64();
        let a = balanced_hierarchical_cluster(&t, &GroupingConfig::new(levels, iters, overlap))?;
        write_out(out, BoatAssignment { inner: a })
    })
}

/// # Safety
/// `a` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn boat_assignment_free(a: *mut BoatAssignment) {
    if !a.is_null() {
        drop(Box::from_raw(a));
    }
}

/// # Safety
/// `a` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn boat_assignment_num_clusters(a: *const BoatAssignment, out: *mut usize) -> BoatStatus {
    guard(|| {
        let a = as_ref(a, "assignment")?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = a.inner.clusters.len();
        Ok(())
    })
}

/// Writes the size of final cluster `index` to `size` and, if `members` is
/// non-null, its token indices in sorted-list order (room for `cap`).
///
/// # Safety
/// `a` must be a live handle; `members` must have room for `cap` values.
#[no_mangle]
pub unsafe extern "C" fn boat_assignment_cluster(
    a: *const BoatAssignment,
    index: usize,
    size: *mut usize,
    members: *mut usize,
    cap: usize,
) -> BoatStatus {
    guard(|| {
        let a = as_ref(a, "assignment")?;
        let cl = a.inner.clusters.get(index).ok_or_else(|| {
            Fail(BoatStatus::InvalidArgument, format!("cluster {index} of {}", a.inner.clusters.len()))
        })?;
        if size.is_null() {
            return Err(null("size"));
        }
        *size = cl.len();
        if !members.is_null() {
            copy_out(cl, members, cap)?;
        }
        Ok(())
    })
}

/// Creates a model from a JSON config with seeded random initialization.
///
/// # Safety
/// `config_json` must be a NUL-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn boat_model_new(config_json: *const c_char, seed: u64, out: *mut *mut BoatModel) -> BoatStatus {
    guard(|| {
        let config = ModelConfig::from_json(as_str(config_json, "config")?)?;
        let params = ModelParams::init(&config, seed)?;
        write_out(out, BoatModel { config, params })
    })
}

/// Creates a model from a JSON config and a flat 1-D weight tensor.
///
/// # Safety
/// `config_json` must be a NUL-terminated string; `weights` a live handle.
#[no_mangle]
pub unsafe extern "C" fn boat_model_from_weights(
    config_json: *const c_char,
    weights: *const BoatTensor,
    out: *mut *mut BoatModel,
) -> BoatStatus {
    guard(|| {
        let config = ModelConfig::from_json(as_str(config_json, "config")?)?;
        let w = as_ref(weights, "weights")?.inner.to_f32();
        if w.ndim() != 1 {
            return Err(Fail(BoatStatus::Shape, format!("weights must be 1-D, got {:?}", w.shape())));
        }
        let params = ModelParams::from_flat(&config, w.data())?;
        write_out(out, BoatModel { config, params })
    })
}

/// # Safety
/// `m` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn boat_model_free(m: *mut BoatModel) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Runs a `[3, H, W]` image through the model; `logits` receives a new
/// `[num_classes]` f32 tensor.
///
/// # Safety
/// `m` and `image` must be live handles; `logits` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn boat_model_forward(
    m: *const BoatModel,
    image: *const BoatTensor,
    logits: *mut *mut BoatTensor,
) -> BoatStatus {
    guard(|| {
        let m = as_ref(m, "model")?;
        let img = as_ref(image, "image")?.inner.to_f32();
        let out = boat_forward(&img, &m.config, &m.params)?;
        write_out(logits, BoatTensor { inner: DynTensor::F32(out.logits) })
    })
}

/// Number of scalar parameters implied by a JSON config.
///
/// # Safety
/// `config_json` must be a NUL-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn boat_count_params(config_json: *const c_char, out: *mut u64) -> BoatStatus {
    guard(|| {
        let config = ModelConfig::from_json(as_str(config_json, "config")?)?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = count_params(&config)? as u64;
        Ok(())
    })
}

/// Multiply-accumulates and FLOPs (`2 × MACs`) of one forward pass.
///
/// # Safety
/// `config_json` must be a NUL-terminated string; outputs valid pointers.
#[no_mangle]
pub unsafe extern "C" fn boat_estimate_flops(
    config_json: *const c_char,
    macs: *mut u64,
    flops: *mut u64,
) -> BoatStatus {
    guard(|| {
        let config = ModelConfig::from_json(as_str(config_json, "config")?)?;
        if macs.is_null() || flops.is_null() {
            return Err(null("out"));
        }
        let r = estimate_flops(&config)?;
        *macs = r.macs;
        *flops = r.flops;
        Ok(())
    })
}
