//! C ABI over the `tecnn` estimator, recorder and trainer.
//!
//! Every function returns a [`TecnnStatus`]; on anything other than
//! `TECNN_OK` the message is available from [`tecnn_last_error`] on the same
//! thread until the next failing call. Handles are opaque and must be
//! released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use tecnn::harness::{
    build_network, load_dataset, metrics_csv, save_checkpoint, Dataset, ExperimentConfig,
    MetricsRow,
};
use tecnn::nn::Network;
use tecnn::te::{
    compute_te_matrix, te_pair, te_pair_oracle, BinaryWindow, Direction, PairSet, Recorder,
    ThresholdMode,
};
use tecnn::train::{evaluate, train_epoch, TrainState};
use tecnn::{Error, Tensor};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TecnnStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Shape = 4,
    NonFinite = 5,
    EstimatorUnavailable = 6,
    Load = 7,
    Checkpoint = 8,
    Io = 9,
    Panic = 10,
}

pub const TECNN_DIRECTION_FORWARD: u32 = 0;
pub const TECNN_DIRECTION_BACKWARD: u32 = 1;

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

fn status_of(err: &Error) -> TecnnStatus {
    match err {
        Error::Config(_) => TecnnStatus::Config,
        Error::Shape(_) => TecnnStatus::Shape,
        Error::NonFinite { .. } => TecnnStatus::NonFinite,
        Error::EstimatorUnavailable { .. } => TecnnStatus::EstimatorUnavailable,
        Error::Load { .. } => TecnnStatus::Load,
        Error::Checkpoint(_) => TecnnStatus::Checkpoint,
        Error::Io { .. } => TecnnStatus::Io,
    }
}

struct Fail(TecnnStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(TecnnStatus::InvalidArgument, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> TecnnStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => TecnnStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            TecnnStatus::Panic
        }
    }
}

fn non_null<T>(p: *const T, what: &str) -> Result<(), Fail> {
    if p.is_null() {
        Err(Fail(TecnnStatus::NullPointer, format!("{what} is null")))
    } else {
        Ok(())
    }
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    non_null(p, what)?;
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    non_null(p, what)?;
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{what} is not valid UTF-8")))
}

fn direction(d: u32) -> Result<Direction, Fail> {
    match d {
        TECNN_DIRECTION_FORWARD => Ok(Direction::Forward),
        TECNN_DIRECTION_BACKWARD => Ok(Direction::Backward),
        _ => Err(invalid(format!("unknown direction {d}"))),
    }
}

/// Message of the last failure on this thread; empty if none. Valid until
/// the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn tecnn_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn tecnn_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

unsafe fn pair_windows(
    src: *const u8,
    dst: *const u8,
    len: usize,
) -> Result<(BinaryWindow, BinaryWindow), Fail> {
    let s = slice(src, len, "src")?;
    let d = slice(dst, len, "dst")?;
    let w = |b: &[u8]| BinaryWindow::from_bits(len.max(1), b.iter().map(|&v| v != 0));
    Ok((w(s), w(d)))
}

/// Transfer entropy `src -> dst` in bits over two equal-length 0/1 byte
/// series (any non-zero byte counts as 1).
///
/// # Safety
/// `src` and `dst` must point to `len` readable bytes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tecnn_te_pair(
    src: *const u8,
    dst: *const u8,
    len: usize,
    out: *mut f64,
) -> TecnnStatus {
    guard(|| {
        non_null(out, "out")?;
        let (s, d) = pair_windows(src, dst, len)?;
        *out = te_pair(&s, &d)?;
        Ok(())
    })
}

/// Same quantity as [`tecnn_te_pair`] through conditional entropies.
///
/// # Safety
/// As for [`tecnn_te_pair`].
#[no_mangle]
pub unsafe extern "C" fn tecnn_te_pair_oracle(
    src: *const u8,
    dst: *const u8,
    len: usize,
    out: *mut f64,
) -> TecnnStatus {
    guard(|| {
        non_null(out, "out")?;
        let (s, d) = pair_windows(src, dst, len)?;
        *out = te_pair_oracle(&s, &d)?;
        Ok(())
    })
}

/// Sliding event windows for one source/destination layer pair.
pub struct TecnnRecorder {
    inner: Recorder,
}

/// Creates a recorder with absolute thresholds `g_src` and `g_dst`.
///
/// # Safety
/// `out` must be writable; on success it receives a handle owned by the
/// caller.
#[no_mangle]
pub unsafe extern "C" fn tecnn_recorder_new(
    n_src: usize,
    n_dst: usize,
    window: usize,
    g_src: f64,
    g_dst: f64,
    out: *mut *mut TecnnRecorder,
) -> TecnnStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = ptr::null_mut();
        let inner = Recorder::new(n_src, n_dst, window, g_src, g_dst, ThresholdMode::Absolute)?;
        *out = Box::into_raw(Box::new(TecnnRecorder { inner }));
        Ok(())
    })
}

/// Appends `batch` samples. `src` is `batch x n_src` and `dst` is
/// `batch x n_dst`, both row-major.
///
/// # Safety
/// `rec` must come from [`tecnn_recorder_new`]; the arrays must hold the
/// stated number of doubles.
#[no_mangle]
pub unsafe extern "C" fn tecnn_recorder_record_batch(
    rec: *mut TecnnRecorder,
    src: *const f64,
    dst: *const f64,
    batch: usize,
) -> TecnnStatus {
    guard(|| {
        non_null(rec, "recorder")?;
        let rec = &mut (*rec).inner;
        let (ns, nd) = (rec.n_src(), rec.n_dst());
        let s = Tensor::from_vec(&[batch, ns], slice(src, batch * ns, "src")?.to_vec())?;
        let d = Tensor::from_vec(&[batch, nd], slice(dst, batch * nd, "dst")?.to_vec())?;
        rec.record_batch(&s, &d)?;
        Ok(())
    })
}

/// Writes the full `n_src x n_dst` TE matrix (row-major, entry `[i][j]` is
/// source `i` to destination `j`) into `out`, which must hold `len` doubles.
/// All zeros while the windows are still filling.
///
/// # Safety
/// `rec` must be a live recorder handle; `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn tecnn_recorder_te_matrix(
    rec: *const TecnnRecorder,
    direction_code: u32,
    out: *mut f64,
    len: usize,
) -> TecnnStatus {
    guard(|| {
        non_null(rec, "recorder")?;
        non_null(out, "out")?;
        let rec = &(*rec).inner;
        let n = rec.n_src() * rec.n_dst();
        if len != n {
            return Err(invalid(format!(
                "output holds {len} values, matrix has {n}"
            )));
        }
        let dir = direction(direction_code)?;
        let all = (0..rec.n_src()).flat_map(|i| (0..rec.n_dst()).map(move |j| (i, j)));
        let pairs = PairSet::from_pairs(all.collect())?;
        let m = compute_te_matrix(rec, &pairs, dir)?;
        std::slice::from_raw_parts_mut(out, n).copy_from_slice(m.values());
        Ok(())
    })
}

/// # Safety
/// `rec` must be null or a handle from [`tecnn_recorder_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tecnn_recorder_free(rec: *mut TecnnRecorder) {
    if !rec.is_null() {
        drop(Box::from_raw(rec));
    }
}

/// A network, its data and its training state, driven one epoch at a time.
pub struct TecnnTrainer {
    cfg: ExperimentConfig,
    data: Dataset,
    net: Network<f32>,
    state: TrainState,
    rows: Vec<MetricsRow>,
}

/// Builds a trainer from configuration text (`key = value` lines, same keys
/// as the command-line config file).
///
/// # Safety
/// `config` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tecnn_trainer_new(
    config: *const c_char,
    out: *mut *mut TecnnTrainer,
) -> TecnnStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = ptr::null_mut();
        let cfg = ExperimentConfig::parse(text(config, "config")?)?;
        let data = load_dataset(&cfg)?;
        let net = build_network(&cfg)?;
        let state = TrainState::new(&net, &cfg.train_config(), &cfg.seeds, cfg.run_id.clone())?;
        *out = Box::into_raw(Box::new(TecnnTrainer {
            cfg,
            data,
            net,
            state,
            rows: Vec::new(),
        }));
        Ok(())
    })
}

/// Runs one training epoch; mean train loss and top-1 go to the optional
/// output pointers.
///
/// # Safety
/// `t` must be a live trainer handle; outputs may be null.
#[no_mangle]
pub unsafe extern "C" fn tecnn_trainer_train_epoch(
    t: *mut TecnnTrainer,
    loss: *mut f64,
    top1: *mut f64,
) -> TecnnStatus {
    guard(|| {
        non_null(t, "trainer")?;
        let t = &mut *t;
        let m = train_epoch(
            &mut t.net,
            &t.data.train,
            &t.cfg.train_config(),
            &mut t.state,
        )?;
        t.rows.extend(m.rows);
        if !loss.is_null() {
            *loss = m.train_loss;
        }
        if !top1.is_null() {
            *top1 = m.train_top1;
        }
        Ok(())
    })
}

/// Evaluates on the test split.
///
/// # Safety
/// `t` must be a live trainer handle; outputs may be null.
#[no_mangle]
pub unsafe extern "C" fn tecnn_trainer_evaluate(
    t: *const TecnnTrainer,
    loss: *mut f64,
    top1: *mut f64,
) -> TecnnStatus {
    guard(|| {
        non_null(t, "trainer")?;
        let t = &*t;
        let e = evaluate(&t.net, &t.data.test, t.cfg.batch_size)?;
        if !loss.is_null() {
            *loss = e.loss;
        }
        if !top1.is_null() {
            *top1 = e.top1;
        }
        Ok(())
    })
}

/// Number of completed epochs.
///
/// # Safety
/// `t` must be a live trainer handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tecnn_trainer_epoch(t: *const TecnnTrainer, out: *mut u64) -> TecnnStatus {
    guard(|| {
        non_null(t, "trainer")?;
        non_null(out, "out")?;
        *out = (*t).state.epoch as u64;
        Ok(())
    })
}

/// # Safety
/// `t` must be a live trainer handle; `path` a NUL-terminated UTF-8 path.
#[no_mangle]
pub unsafe extern "C" fn tecnn_trainer_save_checkpoint(
    t: *const TecnnTrainer,
    path: *const c_char,
) -> TecnnStatus {
    guard(|| {
        non_null(t, "trainer")?;
        let t = &*t;
        save_checkpoint(&t.net, &t.state, Path::new(text(path, "path")?))?;
        Ok(())
    })
}

/// Copies the per-batch metrics CSV recorded so far into `buf` (NUL
/// terminated). `needed` receives the size including the terminator; pass a
/// null `buf` to query it.
///
/// # Safety
/// `t` must be a live trainer handle; `buf` must be null or hold `cap`
/// bytes; `needed` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tecnn_trainer_metrics_csv(
    t: *const TecnnTrainer,
    buf: *mut c_char,
    cap: usize,
    needed: *mut usize,
) -> TecnnStatus {
    guard(|| {
        non_null(t, "trainer")?;
        non_null(needed, "needed")?;
        let csv = metrics_csv(&(*t).rows)?;
        *needed = csv.len() + 1;
        if buf.is_null() {
            return Ok(());
        }
        if cap < csv.len() + 1 {
            return Err(invalid(format!(
                "buffer holds {cap} bytes, {} needed",
                csv.len() + 1
            )));
        }
        ptr::copy_nonoverlapping(csv.as_ptr().cast::<c_char>(), buf, csv.len());
        *buf.add(csv.len()) = 0;
        Ok(())
    })
}

/// # Safety
/// `t` must be null or a handle from [`tecnn_trainer_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tecnn_trainer_free(t: *mut TecnnTrainer) {
    if !t.is_null() {
        drop(Box::from_raw(t));
    }
}
