//! C ABI over the beam-selection workbench.
//!
//! Every function returns an [`LbStatus`]. On failure a message describing
//! the error is kept per thread and can be read with [`lb_last_error`].
//! Models are opaque [`LbModel`] handles released with [`lb_model_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use lidarbeam::model::{load_checkpoint, save_checkpoint, AttentionVariant, BeamClassifier, Checkpoint, ModelConfig};
use lidarbeam::objective::topk_select;
use lidarbeam::preproc::{preprocess_cloud, GridSpec};
use lidarbeam::sim::{generate_dataset, meta_path, write_dataset, DatasetMeta, GenConfig};
use lidarbeam::Error;

/// Result codes. Values 2 to 4 match the command-line exit codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LbStatus {
    Ok = 0,
    /// Invalid argument, configuration, or shape.
    Invalid = 2,
    Io = 3,
    NonFinite = 4,
    NullPointer = 5,
    /// Output buffer too small.
    BufferTooSmall = 6,
    Panic = 7,
}

/// Opaque model handle.
pub struct LbModel {
    inner: BeamClassifier,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(status: LbStatus, msg: impl Into<String>) -> LbStatus {
    set_error(msg.into());
    status
}

fn from_error(e: Error) -> LbStatus {
    let status = match e.exit_code() {
        3 => LbStatus::Io,
        4 => LbStatus::NonFinite,
        _ => LbStatus::Invalid,
    };
    fail(status, e.to_string())
}

fn guard(f: impl FnOnce() -> LbStatus) -> LbStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(LbStatus::Panic, "internal panic"),
    }
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, LbStatus> {
    if p.is_null() {
        return Err(fail(LbStatus::NullPointer, "path is null"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(PathBuf::from)
        .map_err(|_| fail(LbStatus::Invalid, "path is not valid UTF-8"))
}

macro_rules! non_null {
    ($($p:ident),+) => {
        $(if $p.is_null() {
            return fail(LbStatus::NullPointer, concat!("`", stringify!($p), "` is null"));
        })+
    };
}

/// Message for the last failed call on this thread, or null after a
/// success. The pointer stays valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn lb_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Freshly initialised model. `attention`: 0 none, 1 embedded Gaussian,
/// 2 Gaussian, 3 dot product.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn lb_model_new(seed: u64, attention: u32, out: *mut *mut LbModel) -> LbStatus {
    guard(|| {
        non_null!(out);
        let mut cfg = ModelConfig { seed, ..ModelConfig::default() };
        cfg.attention = match attention {
            0 => None,
            1..=3 => Some(lidarbeam::model::AttentionConfig::with_variant(AttentionVariant::ALL[attention as usize - 1])),
            _ => return fail(LbStatus::Invalid, format!("unknown attention code {attention}")),
        };
        match BeamClassifier::new(cfg) {
            Ok(m) => {
                *out = Box::into_raw(Box::new(LbModel { inner: m }));
                LbStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Loads a checkpoint file.
///
/// # Safety
/// `path` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lb_model_load(path: *const c_char, out: *mut *mut LbModel) -> LbStatus {
    guard(|| {
        non_null!(out);
        let p = match path_arg(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match load_checkpoint(&p).and_then(|c| c.to_model()) {
            Ok(m) => {
                *out = Box::into_raw(Box::new(LbModel { inner: m }));
                LbStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Writes the model as a checkpoint file.
///
/// # Safety
/// `model` must come from this library; `path` must be nul-terminated.
#[no_mangle]
pub unsafe extern "C" fn lb_model_save(model: *const LbModel, path: *const c_char) -> LbStatus {
    guard(|| {
        non_null!(model);
        let p = match path_arg(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match save_checkpoint(&p, &Checkpoint::from_model(&(*model).inner)) {
            Ok(()) => LbStatus::Ok,
            Err(e) => from_error(e),
        }
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `model` must come from this library and must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn lb_model_free(model: *mut LbModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Parameter count, grid rows and columns, and number of outputs.
///
/// # Safety
/// `model` must come from this library; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn lb_model_info(
    model: *const LbModel,
    params: *mut usize,
    rows: *mut usize,
    cols: *mut usize,
    outputs: *mut usize,
) -> LbStatus {
    guard(|| {
        non_null!(model, params, rows, cols, outputs);
        let m = &(*model).inner;
        *params = m.num_params();
        *rows = m.config.grid[0];
        *cols = m.config.grid[1];
        *outputs = m.config.outputs;
        LbStatus::Ok
    })
}

/// Beam-pair probabilities for one occupancy grid (row-major, `rows·cols`
/// values) and vehicle position in metres. Non-finite inputs are rejected.
///
/// # Safety
/// `grid` must hold `grid_len` values, `veh` three, and `out` `out_len`.
#[no_mangle]
pub unsafe extern "C" fn lb_model_predict(
    model: *const LbModel,
    grid: *const f64,
    grid_len: usize,
    veh: *const f64,
    out: *mut f64,
    out_len: usize,
) -> LbStatus {
    guard(|| {
        non_null!(model, grid, veh, out);
        let m = &(*model).inner;
        if out_len < m.config.outputs {
            return fail(LbStatus::BufferTooSmall, format!("need {} outputs, buffer holds {out_len}", m.config.outputs));
        }
        let g = std::slice::from_raw_parts(grid, grid_len).to_vec();
        let v = std::slice::from_raw_parts(veh, 3);
        if let Some(i) = g.iter().chain(v).position(|x| !x.is_finite()) {
            return fail(LbStatus::NonFinite, format!("input value {i} is not finite"));
        }
        match m.predict(&m.input_for(g, [v[0], v[1], v[2]])) {
            Ok(p) => {
                std::slice::from_raw_parts_mut(out, p.len()).copy_from_slice(&p);
                LbStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Indices of the `k` largest scores, descending, ties to the lower index.
///
/// # Safety
/// `scores` must hold `n` values and `out` at least `k`.
#[no_mangle]
pub unsafe extern "C" fn lb_topk(scores: *const f64, n: usize, k: usize, out: *mut u32) -> LbStatus {
    guard(|| {
        non_null!(scores, out);
        let s = std::slice::from_raw_parts(scores, n);
        match topk_select(s, k) {
            Ok(idx) => {
                let o = std::slice::from_raw_parts_mut(out, k);
                for (d, i) in o.iter_mut().zip(idx) {
                    *d = i as u32;
                }
                LbStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Bins `n_points` xyz points into the default 200×20 occupancy grid with
/// the base station and vehicle markers. Writes `rows·cols` cells.
///
/// # Safety
/// `points` must hold `3·n_points` values, `bs` and `veh` three each, and
/// `out` `out_len`.
#[no_mangle]
pub unsafe extern "C" fn lb_preprocess(
    points: *const f64,
    n_points: usize,
    bs: *const f64,
    veh: *const f64,
    out: *mut i8,
    out_len: usize,
) -> LbStatus {
    guard(|| {
        non_null!(bs, veh, out);
        if n_points > 0 && points.is_null() {
            return fail(LbStatus::NullPointer, "`points` is null");
        }
        let spec = GridSpec::default();
        if out_len < spec.rows * spec.cols {
            return fail(LbStatus::BufferTooSmall, format!("need {} cells, buffer holds {out_len}", spec.rows * spec.cols));
        }
        let flat = if n_points == 0 { &[][..] } else { std::slice::from_raw_parts(points, 3 * n_points) };
        let cloud: Vec<[f64; 3]> = flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        let b = std::slice::from_raw_parts(bs, 3);
        let v = std::slice::from_raw_parts(veh, 3);
        match preprocess_cloud(&cloud, [b[0], b[1], b[2]], [v[0], v[1], v[2]], &spec) {
            Ok(g) => {
                std::slice::from_raw_parts_mut(out, g.data.len()).copy_from_slice(&g.data);
                LbStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Generates `count` scenes starting at `first_id` with the default
/// generator and scene seed `seed`, writing JSON Lines to `path` and the
/// summary next to it. `nlos_fraction` may be null.
///
/// # Safety
/// `path` must be nul-terminated; `nlos_fraction` null or writable.
#[no_mangle]
pub unsafe extern "C" fn lb_generate(
    path: *const c_char,
    seed: u64,
    first_id: u64,
    count: usize,
    nlos_fraction: *mut f64,
) -> LbStatus {
    guard(|| {
        let p = match path_arg(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        if count == 0 {
            return fail(LbStatus::Invalid, "count must be at least 1");
        }
        let mut cfg = GenConfig::default();
        cfg.scene.seed = seed;
        let run = || -> lidarbeam::Result<f64> {
            let recs = generate_dataset(&cfg, first_id, count)?;
            let meta = DatasetMeta::summarize(&recs, first_id, &cfg);
            write_dataset(&p, &recs)?;
            lidarbeam::io::write_json(&meta_path(&p), &meta)?;
            Ok(meta.nlos_fraction)
        };
        match run() {
            Ok(q) => {
                if !nlos_fraction.is_null() {
                    *nlos_fraction = q;
                }
                LbStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}
