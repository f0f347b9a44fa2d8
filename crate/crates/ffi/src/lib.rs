//! C ABI over nvbench: load checkpoints and slice files, run inference, measure
//! temporal contrast, run the gradient oracle suite.
//!
//! Every function returns an `NvbStatus`; on failure `nvb_last_error()` describes the
//! error for the calling thread. Handles are opaque and freed with their `*_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::panic::{catch_unwind, AssertUnwindSafe};

use nvbench::analysis;
use nvbench::event_io::{load_slices, SliceSequence};
use nvbench::gradcheck;
use nvbench::network::checkpoint::{load_checkpoint, save_checkpoint};
use nvbench::network::{Network, NetworkConfig};
use nvbench::training::{aggregate, predict};
use nvbench::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NvbStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Data = 4,
    Config = 5,
    Shape = 6,
    BufferTooSmall = 7,
    CheckFailed = 8,
    Panic = 9,
}

/// A network in 64-bit precision.
pub struct NvbNetwork(Network<f64>);

/// A binary slice sequence `[T, 2, H, W]`.
pub struct NvbSequence(SliceSequence);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let s = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = s);
}

fn status_of(e: &Error) -> NvbStatus {
    match e.root() {
        Error::Io(_) => NvbStatus::Io,
        Error::Config(_) => NvbStatus::Config,
        Error::Shape(_) => NvbStatus::Shape,
        _ => NvbStatus::Data,
    }
}

struct Fail(NvbStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> NvbStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            NvbStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            NvbStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(NvbStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Fail(NvbStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn obj<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

/// Library version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn nvb_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the calling thread's last failure; empty after a success. Valid until the
/// next call on the same thread.
#[no_mangle]
pub extern "C" fn nvb_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Load an NVCK checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string; the out pointer must be writable.
#[no_mangle]
pub unsafe extern "C" fn nvb_network_load(path: *const c_char, out_net: *mut *mut NvbNetwork) -> NvbStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let slot = out(out_net, "out")?;
        let f = File::open(path).map_err(|e| Error::from(e).at(path))?;
        let net = load_checkpoint(BufReader::new(f)).map_err(|e| e.at(path))?;
        *slot = Box::into_raw(Box::new(NvbNetwork(net)));
        Ok(())
    })
}

/// Build a freshly initialised network from a TOML network config (the `NetworkConfig`
/// fields: kind, structure, loss, input_height, input_width, steps, dt_us, [cell]).
///
/// # Safety
/// `config_toml` must be a NUL-terminated string; `out_net` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nvb_network_build(config_toml: *const c_char, seed: u64, out_net: *mut *mut NvbNetwork) -> NvbStatus {
    guard(|| {
        let text = str_arg(config_toml, "config")?;
        let slot = out(out_net, "out")?;
        let cfg = NetworkConfig::from_toml(text)?;
        *slot = Box::into_raw(Box::new(NvbNetwork(Network::build(cfg, seed)?)));
        Ok(())
    })
}

/// Save a network as an NVCK checkpoint.
///
/// # Safety
/// `net` must come from this library; `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn nvb_network_save(net: *const NvbNetwork, path: *const c_char) -> NvbStatus {
    guard(|| {
        let net = obj(net, "net")?;
        let path = str_arg(path, "path")?;
        let f = File::create(path).map_err(|e| Error::from(e).at(path))?;
        save_checkpoint(&net.0, BufWriter::new(f))?;
        Ok(())
    })
}

/// # Safety
/// `net` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn nvb_network_free(net: *mut NvbNetwork) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// Trainable parameter count, number of classes, and the input geometry `[T, H, W]`.
///
/// # Safety
/// `net` must come from this library; the out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn nvb_network_info(
    net: *const NvbNetwork,
    num_params: *mut u64,
    num_classes: *mut u32,
    steps: *mut u32,
    height: *mut u32,
    width: *mut u32,
) -> NvbStatus {
    guard(|| {
        let n = &obj(net, "net")?.0;
        let c = n.config();
        *out(num_params, "num_params")? = n.num_params() as u64;
        *out(num_classes, "num_classes")? = n.classes() as u32;
        *out(steps, "steps")? = c.steps as u32;
        *out(height, "height")? = c.input_height as u32;
        *out(width, "width")? = c.input_width as u32;
        Ok(())
    })
}

/// Load an NVSL slice file.
///
/// # Safety
/// `path` must be a NUL-terminated string; the out pointer must be writable.
#[no_mangle]
pub unsafe extern "C" fn nvb_sequence_load(path: *const c_char, out_seq: *mut *mut NvbSequence) -> NvbStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let slot = out(out_seq, "out")?;
        let f = File::open(path).map_err(|e| Error::from(e).at(path))?;
        *slot = Box::into_raw(Box::new(NvbSequence(load_slices(BufReader::new(f)).map_err(|e| e.at(path))?)));
        Ok(())
    })
}

/// Copy a `[steps, 2, height, width]` binary tensor (bytes 0/1) into a new sequence.
///
/// # Safety
/// `data` must point to `len` readable bytes; `out_seq` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nvb_sequence_from_data(
    steps: u32,
    height: u32,
    width: u32,
    dt_us: u32,
    data: *const u8,
    len: usize,
    out_seq: *mut *mut NvbSequence,
) -> NvbStatus {
    guard(|| {
        if data.is_null() {
            return Err(null("data"));
        }
        let slot = out(out_seq, "out")?;
        let bytes = std::slice::from_raw_parts(data, len).to_vec();
        let seq = SliceSequence::from_data(steps as usize, height as usize, width as usize, dt_us, bytes)?;
        *slot = Box::into_raw(Box::new(NvbSequence(seq)));
        Ok(())
    })
}

/// # Safety
/// `seq` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn nvb_sequence_free(seq: *mut NvbSequence) {
    if !seq.is_null() {
        drop(Box::from_raw(seq));
    }
}

/// Shape `[T, H, W]` and label (`-1` when unlabelled).
///
/// # Safety
/// `seq` must come from this library; the out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn nvb_sequence_info(
    seq: *const NvbSequence,
    steps: *mut u32,
    height: *mut u32,
    width: *mut u32,
    label: *mut i64,
) -> NvbStatus {
    guard(|| {
        let s = &obj(seq, "seq")?.0;
        *out(steps, "steps")? = s.steps() as u32;
        *out(height, "height")? = s.height() as u32;
        *out(width, "width")? = s.width() as u32;
        *out(label, "label")? = s.label.map_or(-1, i64::from);
        Ok(())
    })
}

/// Class scores (the aggregate the network's loss classifies by) and predicted class.
/// `scores` must hold `capacity >= num_classes` values; pass null to skip them.
///
/// # Safety
/// Handles must come from this library; `scores` must have `capacity` writable slots.
#[no_mangle]
pub unsafe extern "C" fn nvb_network_classify(
    net: *const NvbNetwork,
    seq: *const NvbSequence,
    scores: *mut f64,
    capacity: usize,
    predicted: *mut u32,
) -> NvbStatus {
    guard(|| {
        let n = &obj(net, "net")?.0;
        let s = &obj(seq, "seq")?.0;
        let pass = n.forward(s, false)?;
        let kind = n.config().loss;
        if !scores.is_null() {
            let agg = aggregate(kind, &pass.outputs);
            if capacity < agg.len() {
                return Err(Fail(NvbStatus::BufferTooSmall, format!("need {} score slots, got {capacity}", agg.len())));
            }
            std::slice::from_raw_parts_mut(scores, agg.len()).copy_from_slice(&agg);
        }
        *out(predicted, "predicted")? = predict(kind, &pass.outputs) as u32;
        Ok(())
    })
}

/// Temporal contrast matrix with window `k`, row-major `size x size` where
/// `size = T - k`. `size` is always written; values only when `capacity >= size^2`.
///
/// # Safety
/// `seq` must come from this library; `values` must have `capacity` writable slots.
#[no_mangle]
pub unsafe extern "C" fn nvb_contrast_matrix(
    seq: *const NvbSequence,
    k: u32,
    values: *mut f64,
    capacity: usize,
    size: *mut usize,
) -> NvbStatus {
    guard(|| {
        let s = &obj(seq, "seq")?.0;
        let m = analysis::contrast_matrix(s, k as usize)?;
        *out(size, "size")? = m.size;
        if values.is_null() || capacity < m.values.len() {
            return Err(Fail(NvbStatus::BufferTooSmall, format!("need {} slots, got {capacity}", m.values.len())));
        }
        std::slice::from_raw_parts_mut(values, m.values.len()).copy_from_slice(&m.values);
        Ok(())
    })
}

/// Run the gradient oracle suite over seeds `first .. first + count`. Returns
/// `CheckFailed` when an oracle disagrees or the reset-term mutant goes unnoticed.
#[no_mangle]
pub extern "C" fn nvb_gradcheck(first: u64, count: u64) -> NvbStatus {
    guard(|| {
        if count == 0 {
            return Err(Fail(NvbStatus::InvalidArgument, "count must be positive".into()));
        }
        let r = gradcheck::run_suite(first..first + count)?;
        if r.passed() {
            Ok(())
        } else {
            Err(Fail(NvbStatus::CheckFailed, r.to_string()))
        }
    })
}
