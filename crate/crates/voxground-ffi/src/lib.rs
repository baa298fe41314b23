//! C ABI over the grounding pipeline: opaque model handles, status codes,
//! and file-oriented entry points (scene files in, boxes out), so other
//! languages can bind without touching Rust types.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use voxground::autodiff::{checkpoint, AdamConfig, AdamMoments, ParamStore};
use voxground::error::Error;
use voxground::harness::{evaluate, generate_dataset, read_dataset, read_scene, write_dataset, SceneSpec};
use voxground::pipeline::{infer, init_params, train_step, ModelConfig};
use voxground::text::Vocabulary;

/// Call outcome. Anything but OK leaves a message for
/// [`vg_last_error`].
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq)]
pub enum VgStatus {
    Ok = 0,
    InvalidArgument = 1,
    NumericFailure = 2,
    IoFailure = 3,
    ParseFailure = 4,
    Internal = 5,
}

/// Axis-aligned box in meters.
#[repr(C)]
#[derive(Clone, Copy)]
pub struct VgBox {
    pub center: [f64; 3],
    pub size: [f64; 3],
}

/// Evaluation summary over a dataset directory.
#[repr(C)]
#[derive(Clone, Copy)]
pub struct VgEvalReport {
    pub acc_at_25: f64,
    pub acc_at_50: f64,
    pub mean_forward_ms: f64,
    pub scenes: u64,
}

/// Opaque model handle: configuration, vocabulary and parameters.
pub struct VgModel {
    config: ModelConfig,
    vocab: Vocabulary,
    store: ParamStore,
    moments: AdamMoments,
    steps_taken: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let sanitized: String = msg.chars().map(|c| if c == '\0' { ' ' } else { c }).collect();
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_of(err: &Error) -> VgStatus {
    match err {
        Error::NumericError(_) | Error::DeterminismError(_) => VgStatus::NumericFailure,
        Error::Io(_) => VgStatus::IoFailure,
        Error::Parse(_) => VgStatus::ParseFailure,
        _ => VgStatus::InvalidArgument,
    }
}

fn fail(err: &Error) -> VgStatus {
    set_error(&err.to_string());
    status_of(err)
}

/// # Safety
/// `ptr` must be NULL or a NUL-terminated string valid for the call.
unsafe fn opt_path(ptr: *const c_char) -> Result<Option<PathBuf>, VgStatus> {
    if ptr.is_null() {
        return Ok(None);
    }
    match CStr::from_ptr(ptr).to_str() {
        Ok(s) => Ok(Some(PathBuf::from(s))),
        Err(_) => {
            set_error("path is not valid UTF-8");
            Err(VgStatus::InvalidArgument)
        }
    }
}

unsafe fn required_path(ptr: *const c_char, what: &str) -> Result<PathBuf, VgStatus> {
    match opt_path(ptr)? {
        Some(p) => Ok(p),
        None => {
            set_error(&format!("{what} must not be NULL"));
            Err(VgStatus::InvalidArgument)
        }
    }
}

fn guard<F: FnOnce() -> VgStatus>(f: F) -> VgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => {
            set_error("internal panic");
            VgStatus::Internal
        }
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn vg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Copies the last error message into `buf` (NUL-terminated, truncated to
/// `cap`). Returns the full message length in bytes.
///
/// # Safety
/// `buf` must point to at least `cap` writable bytes, or be NULL.
#[no_mangle]
pub unsafe extern "C" fn vg_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|slot| {
        let msg = slot.borrow();
        let bytes = msg.as_bytes_with_nul();
        if !buf.is_null() && cap > 0 {
            let n = bytes.len().min(cap);
            std::ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
            // always terminate
            *buf.add(n - 1) = 0;
        }
        bytes.len() - 1
    })
}

/// Creates a model. `config_path` may be NULL for the default
/// configuration; `seed` overrides the configured parameter seed.
/// Returns NULL on failure (see [`vg_last_error`]).
///
/// # Safety
/// `config_path` must be NULL or a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn vg_model_new(config_path: *const c_char, seed: u64) -> *mut VgModel {
    let config_path = match opt_path(config_path) {
        Ok(p) => p,
        Err(_) => return std::ptr::null_mut(),
    };
    let built = catch_unwind(|| -> Result<VgModel, Error> {
        let mut config = match config_path {
            Some(p) => ModelConfig::load(&p)?,
            None => ModelConfig::default(),
        };
        config.seed = seed;
        let vocab = Vocabulary::builtin();
        let store = init_params(&config, &vocab)?;
        Ok(VgModel { config, vocab, store, moments: AdamMoments::default(), steps_taken: 0 })
    });
    match built {
        Ok(Ok(model)) => Box::into_raw(Box::new(model)),
        Ok(Err(e)) => {
            set_error(&e.to_string());
            std::ptr::null_mut()
        }
        Err(_) => {
            set_error("internal panic");
            std::ptr::null_mut()
        }
    }
}

/// Releases a model handle. NULL is a no-op.
///
/// # Safety
/// `model` must be NULL or a pointer from [`vg_model_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn vg_model_free(model: *mut VgModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

unsafe fn model_ref<'a>(model: *mut VgModel) -> Result<&'a mut VgModel, VgStatus> {
    model.as_mut().ok_or_else(|| {
        set_error("model handle is NULL");
        VgStatus::InvalidArgument
    })
}

/// Loads checkpointed parameters into the model.
///
/// # Safety
/// `model` must come from [`vg_model_new`]; `path` must be a valid
/// NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn vg_model_load_checkpoint(
    model: *mut VgModel,
    path: *const c_char,
) -> VgStatus {
    guard(|| {
        let m = match model_ref(model) {
            Ok(m) => m,
            Err(s) => return s,
        };
        let path = match required_path(path, "checkpoint path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        match checkpoint::load(&path) {
            Ok(store) => {
                m.store = store;
                m.moments = AdamMoments::default();
                VgStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Saves the model parameters.
///
/// # Safety
/// As for [`vg_model_load_checkpoint`].
#[no_mangle]
pub unsafe extern "C" fn vg_model_save_checkpoint(
    model: *mut VgModel,
    path: *const c_char,
) -> VgStatus {
    guard(|| {
        let m = match model_ref(model) {
            Ok(m) => m,
            Err(s) => return s,
        };
        let path = match required_path(path, "checkpoint path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        match checkpoint::save(&m.store, &path) {
            Ok(()) => VgStatus::Ok,
            Err(e) => fail(&e),
        }
    })
}

fn train_impl(m: &mut VgModel, dir: &Path, steps: u64, lr: f64) -> Result<(), Error> {
    let data = read_dataset(dir)?;
    let adam = AdamConfig { lr, ..AdamConfig::default() };
    for _ in 0..steps {
        m.steps_taken += 1;
        let sample = &data[(m.steps_taken as usize - 1) % data.len()];
        train_step(
            std::slice::from_ref(sample),
            &mut m.store,
            &mut m.moments,
            &adam,
            &m.config,
            &m.vocab,
            m.steps_taken,
        )?;
    }
    Ok(())
}

/// Trains for `steps` optimizer steps over the scene files in `dataset_dir`.
///
/// # Safety
/// As for [`vg_model_load_checkpoint`].
#[no_mangle]
pub unsafe extern "C" fn vg_model_train(
    model: *mut VgModel,
    dataset_dir: *const c_char,
    steps: u64,
    lr: f64,
) -> VgStatus {
    guard(|| {
        let m = match model_ref(model) {
            Ok(m) => m,
            Err(s) => return s,
        };
        let dir = match required_path(dataset_dir, "dataset directory") {
            Ok(p) => p,
            Err(s) => return s,
        };
        match train_impl(m, &dir, steps, lr) {
            Ok(()) => VgStatus::Ok,
            Err(e) => fail(&e),
        }
    })
}

/// Grounds the description of one scene file; writes the predicted box.
///
/// # Safety
/// `out_box` must point to writable memory for one `VgBox`; other
/// arguments as for [`vg_model_load_checkpoint`].
#[no_mangle]
pub unsafe extern "C" fn vg_model_infer_scene(
    model: *mut VgModel,
    scene_path: *const c_char,
    out_box: *mut VgBox,
) -> VgStatus {
    guard(|| {
        let m = match model_ref(model) {
            Ok(m) => m,
            Err(s) => return s,
        };
        if out_box.is_null() {
            set_error("out_box is NULL");
            return VgStatus::InvalidArgument;
        }
        let path = match required_path(scene_path, "scene path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        let run = || -> Result<VgBox, Error> {
            let sample = read_scene(&path)?;
            let (bbox, _) = infer(&sample.points, &sample.description, &m.store, &m.config, &m.vocab)?;
            Ok(VgBox { center: bbox.center, size: bbox.size })
        };
        match run() {
            Ok(b) => {
                *out_box = b;
                VgStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Evaluates grounding accuracy over a dataset directory.
///
/// # Safety
/// `out` must point to writable memory for one `VgEvalReport`; other
/// arguments as for [`vg_model_load_checkpoint`].
#[no_mangle]
pub unsafe extern "C" fn vg_model_evaluate(
    model: *mut VgModel,
    dataset_dir: *const c_char,
    out: *mut VgEvalReport,
) -> VgStatus {
    guard(|| {
        let m = match model_ref(model) {
            Ok(m) => m,
            Err(s) => return s,
        };
        if out.is_null() {
            set_error("out is NULL");
            return VgStatus::InvalidArgument;
        }
        let dir = match required_path(dataset_dir, "dataset directory") {
            Ok(p) => p,
            Err(s) => return s,
        };
        let run = || -> Result<VgEvalReport, Error> {
            let data = read_dataset(&dir)?;
            let report = evaluate(&data, &m.store, &m.config, &m.vocab)?;
            Ok(VgEvalReport {
                acc_at_25: report.acc_at_25,
                acc_at_50: report.acc_at_50,
                mean_forward_ms: report.mean_forward_ms,
                scenes: report.ious.len() as u64,
            })
        };
        match run() {
            Ok(r) => {
                *out = r;
                VgStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Writes `count` seeded synthetic scene files into `out_dir`.
///
/// # Safety
/// `out_dir` must be a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn vg_generate_scenes(
    out_dir: *const c_char,
    seed: u64,
    count: u64,
) -> VgStatus {
    guard(|| {
        let dir = match required_path(out_dir, "output directory") {
            Ok(p) => p,
            Err(s) => return s,
        };
        let run = || -> Result<(), Error> {
            let samples = generate_dataset(seed, count as usize, &SceneSpec::default())?;
            write_dataset(&samples, &dir)
        };
        match run() {
            Ok(()) => VgStatus::Ok,
            Err(e) => fail(&e),
        }
    })
}
