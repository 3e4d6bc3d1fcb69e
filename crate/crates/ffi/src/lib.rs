//! C interface to the dgssm model, the evaluation metrics and the scan
//! kernels.
//!
//! Every fallible function returns a [`DgssmStatus`]; on failure the message
//! is available from [`dgssm_last_error`] on the same thread. Models are
//! opaque handles owned by the caller and released with
//! [`dgssm_model_free`]. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use dgssm::metrics::{MapPair, Scores};
use dgssm::network::{Model, NetInput, NetworkConfig};
use dgssm::scan::{scan_parallel, scan_sequential, ScanDirection, ScanParams};
use dgssm::{Error, Tensor};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DgssmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Numeric = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DgssmDirection {
    LeftToRight = 0,
    RightToLeft = 1,
    TopToBottom = 2,
    BottomToTop = 3,
}

impl From<DgssmDirection> for ScanDirection {
    fn from(d: DgssmDirection) -> Self {
        match d {
            DgssmDirection::LeftToRight => ScanDirection::LeftToRight,
            DgssmDirection::RightToLeft => ScanDirection::RightToLeft,
            DgssmDirection::TopToBottom => ScanDirection::TopToBottom,
            DgssmDirection::BottomToTop => ScanDirection::BottomToTop,
        }
    }
}

/// The four measures of one prediction map.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DgssmScores {
    pub s_measure: f64,
    pub f_measure_mean: f64,
    pub e_measure_mean: f64,
    pub mae: f64,
}

impl From<Scores> for DgssmScores {
    fn from(s: Scores) -> Self {
        Self { s_measure: s.s_measure, f_measure_mean: s.f_measure_mean, e_measure_mean: s.e_measure_mean, mae: s.mae }
    }
}

/// Opaque model handle (single precision).
pub struct DgssmModel {
    inner: Model<f32>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Fail(DgssmStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::Io(_) => DgssmStatus::Io,
            Error::Format { .. } => DgssmStatus::Format,
            Error::NonFinite(_) | Error::Diverged(_) => DgssmStatus::Numeric,
            _ => DgssmStatus::InvalidArgument,
        };
        Fail(status, e.to_string())
    }
}

impl From<std::io::Error> for Fail {
    fn from(e: std::io::Error) -> Self {
        Fail(DgssmStatus::Io, e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(DgssmStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(DgssmStatus::InvalidArgument, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> DgssmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DgssmStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            DgssmStatus::Panic
        }
    }
}

unsafe fn input<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn output<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts_mut(p, len))
}

unsafe fn path<'a>(p: *const c_char) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(p).to_str().map_err(|_| invalid("path is not valid UTF-8"))
}

unsafe fn model<'a>(m: *const DgssmModel) -> Result<&'a Model<f32>, Fail> {
    m.as_ref().map(|m| &m.inner).ok_or_else(|| null("model"))
}

fn checked_len(dims: &[usize]) -> Result<usize, Fail> {
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .filter(|&n| n > 0)
        .ok_or_else(|| invalid(format!("bad dimensions {dims:?}")))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dgssm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn dgssm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Creates a freshly initialised model with the default architecture.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn dgssm_model_new(seed: u64, out: *mut *mut DgssmModel) -> DgssmStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let inner = Model::new(NetworkConfig::default(), seed)?;
        *out = Box::into_raw(Box::new(DgssmModel { inner }));
        Ok(())
    })
}

/// Loads a checkpoint written by `dgssm train` or [`dgssm_model_save`].
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` as for [`dgssm_model_new`].
#[no_mangle]
pub unsafe extern "C" fn dgssm_model_load(path_: *const c_char, out: *mut *mut DgssmModel) -> DgssmStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let file = File::open(path(path_)?)?;
        let inner = Model::load(&mut BufReader::new(file))?;
        *out = Box::into_raw(Box::new(DgssmModel { inner }));
        Ok(())
    })
}

/// # Safety
/// `model` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn dgssm_model_save(model_: *const DgssmModel, path_: *const c_char) -> DgssmStatus {
    guard(|| {
        let m = model(model_)?;
        let mut w = BufWriter::new(File::create(path(path_)?)?);
        m.save(&mut w)?;
        w.flush()?;
        Ok(())
    })
}

/// Number of trainable network parameters (the denoiser excluded).
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dgssm_model_param_count(model_: *const DgssmModel, out: *mut usize) -> DgssmStatus {
    guard(|| {
        let m = model(model_)?;
        *out.as_mut().ok_or_else(|| null("out"))? = m.params.count();
        Ok(())
    })
}

/// Predicts the final saliency map of one image.
///
/// `rgb` holds `3·H·W` planar values in `[0,1]`, `aux` holds `H·W` values or
/// is NULL (treated as zeros), `out_map` receives `H·W` probabilities.
/// `seed` drives the forward-noise draw of the structural prior.
///
/// # Safety
/// The buffers must have the stated lengths; `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn dgssm_model_predict(
    model_: *const DgssmModel,
    rgb: *const f32,
    aux: *const f32,
    height: usize,
    width: usize,
    seed: u64,
    out_map: *mut f32,
) -> DgssmStatus {
    guard(|| {
        let m = model(model_)?;
        let plane = checked_len(&[height, width])?;
        let rgb = Tensor::new(&[3, height, width], input(rgb, 3 * plane, "rgb")?.to_vec())?;
        let aux = if aux.is_null() {
            None
        } else {
            Some(Tensor::new(&[m.config.aux_channels, height, width], input(aux, m.config.aux_channels * plane, "aux")?.to_vec())?)
        };
        let out = output(out_map, plane, "out_map")?;
        m.config.check_input(height, width)?;
        let prior = if m.config.flags.needs_prior() { Some(m.prior(&rgb, aux.as_ref(), seed)?) } else { None };
        let pred = m.predict(&NetInput { rgb, aux, prior })?;
        out.copy_from_slice(pred.final_map().data());
        Ok(())
    })
}

/// Releases a handle; NULL is ignored.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dgssm_model_free(model: *mut DgssmModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// S-measure, mean F-measure, mean E-measure and MAE of an `H×W` map
/// against a binary ground truth.
///
/// # Safety
/// `pred` and `gt` must hold `H·W` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dgssm_metrics(
    pred: *const f64,
    gt: *const f64,
    height: usize,
    width: usize,
    out: *mut DgssmScores,
) -> DgssmStatus {
    guard(|| {
        let n = checked_len(&[height, width])?;
        let pair = MapPair::new(input(pred, n, "pred")?, input(gt, n, "gt")?, height, width)?;
        *out.as_mut().ok_or_else(|| null("out"))? = Scores::of(&pair).into();
        Ok(())
    })
}

/// One directional diagonal state-space scan of a `(Din,H,W)` grid.
///
/// `a` has `Dh` entries, `b` is `Dh×Din` and `c` is `Dout×Dh`, all row
/// major; `out` receives `Dout·H·W` values. `parallel` selects the prefix-scan
/// kernel instead of the sequential loop.
///
/// # Safety
/// All buffers must have the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn dgssm_scan(
    x: *const f64,
    din: usize,
    height: usize,
    width: usize,
    a: *const f64,
    b: *const f64,
    c: *const f64,
    dh: usize,
    dout: usize,
    direction: DgssmDirection,
    parallel: bool,
    out: *mut f64,
) -> DgssmStatus {
    guard(|| {
        let nx = checked_len(&[din, height, width])?;
        let ny = checked_len(&[dout, height, width])?;
        let x = Tensor::new(&[din, height, width], input(x, nx, "x")?.to_vec())?;
        let params = ScanParams::new(
            Tensor::new(&[checked_len(&[dh])?], input(a, dh, "a")?.to_vec())?,
            Tensor::new(&[dh, din], input(b, checked_len(&[dh, din])?, "b")?.to_vec())?,
            Tensor::new(&[dout, dh], input(c, checked_len(&[dout, dh])?, "c")?.to_vec())?,
        )?;
        let dst = output(out, ny, "out")?;
        let y = if parallel {
            scan_parallel(&x, &params, direction.into())?
        } else {
            scan_sequential(&x, &params, direction.into())?
        };
        dst.copy_from_slice(y.data());
        Ok(())
    })
}
