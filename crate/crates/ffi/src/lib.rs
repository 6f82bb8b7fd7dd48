//! C ABI over the matforge pipeline.
//!
//! Every entry point returns an [`MfStatus`]; on failure the message is
//! available from [`mf_last_error`] until the next call on the same thread.
//! Reports and atlases are opaque handles released with their `_free`
//! function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use matforge::atlas::MaterialAtlas;
use matforge::pipeline::{load_atlas, run_pipeline, run_stage, PipelineReport, RunOptions, StageError};

/// Result of an API call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MfStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidString = 2,
    /// The scene config could not be loaded.
    ConfigError = 3,
    /// A pipeline stage failed after loading.
    StageError = 4,
    OutOfRange = 5,
    /// A value is not available, such as PSNR for a view without ground truth.
    Unavailable = 6,
    Io = 7,
    Panic = 8,
}

/// Outcome of a pipeline run.
pub struct MfReport(PipelineReport);

/// Baked material atlas.
pub struct MfAtlas(MaterialAtlas);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn fail(status: MfStatus, msg: impl Into<String>) -> MfStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> MfStatus) -> MfStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(p) => {
            let msg = p.downcast_ref::<&str>().map(|s| s.to_string()).or_else(|| p.downcast_ref::<String>().cloned());
            fail(MfStatus::Panic, format!("panic: {}", msg.unwrap_or_else(|| "unknown".into())))
        }
    }
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, MfStatus> {
    if p.is_null() {
        return Err(fail(MfStatus::NullArgument, format!("{what} is null")));
    }
    match CStr::from_ptr(p).to_str() {
        Ok(s) => Ok(PathBuf::from(s)),
        Err(_) => Err(fail(MfStatus::InvalidString, format!("{what} is not valid UTF-8"))),
    }
}

fn stage_status(e: StageError) -> MfStatus {
    let status = if e.is_config_error() { MfStatus::ConfigError } else { MfStatus::StageError };
    fail(status, e.to_string())
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next API call on the same thread.
#[no_mangle]
pub extern "C" fn mf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Runs the full pipeline, or one named stage when `stage` is non-null.
/// `seed` overrides the config seed when `use_seed` is true.
///
/// # Safety
/// String arguments must be null or NUL-terminated; `out_report` must be
/// null or writable.
#[no_mangle]
pub unsafe extern "C" fn mf_run(
    config: *const c_char,
    out_dir: *const c_char,
    stage: *const c_char,
    seed: u64,
    use_seed: bool,
    out_report: *mut *mut MfReport,
) -> MfStatus {
    guard(|| {
        let config = match path_arg(config, "config") {
            Ok(p) => p,
            Err(s) => return s,
        };
        let out = match path_arg(out_dir, "out_dir") {
            Ok(p) => p,
            Err(s) => return s,
        };
        let opts = RunOptions { out, seed: use_seed.then_some(seed), dump_stats: false };
        let result = if stage.is_null() {
            run_pipeline(&config, &opts)
        } else {
            match CStr::from_ptr(stage).to_str() {
                Ok(name) => run_stage(name, &config, &opts),
                Err(_) => return fail(MfStatus::InvalidString, "stage is not valid UTF-8"),
            }
        };
        match result {
            Ok(r) => {
                if !out_report.is_null() {
                    *out_report = Box::into_raw(Box::new(MfReport(r)));
                }
                MfStatus::Ok
            }
            Err(e) => stage_status(e),
        }
    })
}

/// # Safety
/// `report` must be null or a handle from [`mf_run`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mf_report_free(report: *mut MfReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

/// # Safety
/// `report` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mf_report_view_count(report: *const MfReport, out: *mut usize) -> MfStatus {
    guard(|| {
        if report.is_null() || out.is_null() {
            return fail(MfStatus::NullArgument, "null argument");
        }
        *out = (*report).0.views.len();
        MfStatus::Ok
    })
}

/// Re-rendering PSNR of view `index` in dB.
///
/// # Safety
/// `report` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mf_report_view_psnr(report: *const MfReport, index: usize, out: *mut f64) -> MfStatus {
    guard(|| {
        if report.is_null() || out.is_null() {
            return fail(MfStatus::NullArgument, "null argument");
        }
        let views = &(*report).0.views;
        match views.get(index) {
            None => fail(MfStatus::OutOfRange, format!("view {index} out of range ({} views)", views.len())),
            Some(v) => match v.psnr {
                Some(p) => {
                    *out = p;
                    MfStatus::Ok
                }
                None => fail(MfStatus::Unavailable, format!("no PSNR for view {index}")),
            },
        }
    })
}

/// Fraction of chart texels covered by at least one view.
///
/// # Safety
/// `report` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mf_report_coverage(report: *const MfReport, out: *mut f64) -> MfStatus {
    guard(|| {
        if report.is_null() || out.is_null() {
            return fail(MfStatus::NullArgument, "null argument");
        }
        match &(*report).0.atlas {
            Some(a) => {
                *out = a.coverage;
                MfStatus::Ok
            }
            None => fail(MfStatus::Unavailable, "run produced no atlas"),
        }
    })
}

/// Loads an atlas directory written by the bake stage.
///
/// # Safety
/// `dir` must be null or NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mf_atlas_load(dir: *const c_char, out: *mut *mut MfAtlas) -> MfStatus {
    guard(|| {
        let dir = match path_arg(dir, "dir") {
            Ok(p) => p,
            Err(s) => return s,
        };
        if out.is_null() {
            return fail(MfStatus::NullArgument, "out is null");
        }
        match load_atlas(&dir) {
            Ok(a) => {
                *out = Box::into_raw(Box::new(MfAtlas(a)));
                MfStatus::Ok
            }
            Err(e) => fail(MfStatus::Io, e.to_string()),
        }
    })
}

/// # Safety
/// `atlas` must be null or a handle from [`mf_atlas_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mf_atlas_free(atlas: *mut MfAtlas) {
    if !atlas.is_null() {
        drop(Box::from_raw(atlas));
    }
}

/// Atlas side length in texels.
///
/// # Safety
/// `atlas` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mf_atlas_resolution(atlas: *const MfAtlas, out: *mut usize) -> MfStatus {
    guard(|| {
        if atlas.is_null() || out.is_null() {
            return fail(MfStatus::NullArgument, "null argument");
        }
        *out = (*atlas).0.resolution;
        MfStatus::Ok
    })
}

/// Material at texel (x, y) as diffuse rgb, specular rgb, roughness.
/// `covered` receives whether any view contributed to the texel and may be
/// null.
///
/// # Safety
/// `atlas` must be a live handle; `channels` must hold 7 floats.
#[no_mangle]
pub unsafe extern "C" fn mf_atlas_texel(atlas: *const MfAtlas, x: usize, y: usize, channels: *mut f32, covered: *mut bool) -> MfStatus {
    guard(|| {
        if atlas.is_null() || channels.is_null() {
            return fail(MfStatus::NullArgument, "null argument");
        }
        let a = &(*atlas).0;
        if x >= a.resolution || y >= a.resolution {
            return fail(MfStatus::OutOfRange, format!("texel ({x}, {y}) outside {0}x{0} atlas", a.resolution));
        }
        let i = y * a.resolution + x;
        let out = std::slice::from_raw_parts_mut(channels, 7);
        for (o, c) in out.iter_mut().zip(a.maps.get(i).to_channels()) {
            *o = c as f32;
        }
        if !covered.is_null() {
            *covered = a.coverage[i];
        }
        MfStatus::Ok
    })
}
