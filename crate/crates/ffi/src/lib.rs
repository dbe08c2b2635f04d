//! C ABI for the density-map alignment library.
//!
//! Conventions:
//! * Every fallible call returns a [`CryoStatus`]; `CRYO_OK` is 0.
//! * On failure, `cryo_last_error()` returns a thread-local, NUL-terminated
//!   message describing the most recent error on the calling thread; the
//!   pointer stays valid until the next failing call on that thread.
//! * `CryoMap` and `CryoAlignment` are opaque handles. Every handle returned
//!   through an out-pointer is owned by the caller and must be released with
//!   the matching `*_free` function exactly once. `*_free(NULL)` is a no-op.
//! * All lengths are in Å; matrices are row-major 4×4 homogeneous with the
//!   translation in the last column.
//! * Fields of [`CryoConfig`] set to zero or negative select the library
//!   default derived from the sampling interval.
//!
//! The corresponding C header is generated into `include/cryoalign.h` at
//! build time.

use cryoalign::config::{ConfigPatch, RunConfig, DEFAULT_INTERVAL_GLOBAL};
use cryoalign::{align_global, read_mrc, similarity, synthesize_map, write_mrc, DensityMap};
use cryoalign::{Error, RigidTransform};
use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

/// Result status of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CryoStatus {
    /// Success.
    CryoOk = 0,
    /// File could not be read, written, or parsed.
    CryoErrIo = 1,
    /// An argument was null, out of range, or otherwise invalid.
    CryoErrInvalidArgument = 2,
    /// The pipeline ran but found no solution (empty cloud, no keypoints,
    /// or coarse alignment failure).
    CryoErrNoSolution = 3,
    /// An internal invariant failed; the library state is still sound.
    CryoErrInternal = 4,
}

/// Opaque density-map handle.
pub struct CryoMap {
    inner: DensityMap,
}

/// Opaque alignment-result handle.
pub struct CryoAlignment {
    inner: cryoalign::GlobalAlignment,
}

/// Pipeline knobs. Zero/negative fields fall back to the defaults derived
/// from `sampling_interval` (itself defaulting to 5 Å when unset).
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct CryoConfig {
    /// Lattice spacing of the uniform sampling (Å).
    pub sampling_interval: f64,
    /// Kernel bandwidth σ (Å); default 2 × interval.
    pub bandwidth: f64,
    /// Keypoint clustering radius (Å); default = interval.
    pub dbscan_eps: f64,
    /// Minimum cluster size; default 2.
    pub dbscan_min_pts: u32,
    /// Descriptor support radius (Å); default 3 × interval.
    pub descriptor_radius: f64,
    /// Coarse inlier bound ε (Å); default = interval.
    pub noise_bound: f64,
    /// Lp exponent in (0, 1); default 0.4.
    pub p_exponent: f64,
    /// Fine-stage correspondence cutoff (Å); default 3 × interval.
    pub max_corr_dist: f64,
    /// Fine-stage outer iteration cap; default 50.
    pub fine_max_iters: u32,
    /// Vector-agreement dot threshold in (0, 1); default 0.5.
    pub dot_threshold: f64,
    /// Score pairing radius (Å); default interval/2 + 1e-6.
    pub pair_radius: f64,
    /// Occupancy histogram cell (Å); default = interval.
    pub grid_cell: f64,
    /// Seed for randomized choices; 0 is a valid seed.
    pub seed: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(message: &str) {
    let sanitized = CString::new(message.replace('\0', " "))
        .unwrap_or_else(|_| CString::new("invalid error message").unwrap());
    LAST_ERROR.with(|slot| *slot.borrow_mut() = sanitized);
}

fn status_of(err: &Error) -> CryoStatus {
    if err.is_no_solution() {
        CryoStatus::CryoErrNoSolution
    } else {
        match err {
            Error::Io { .. } | Error::Json(_) => CryoStatus::CryoErrIo,
            Error::InvalidMrc { .. }
            | Error::UnsupportedMode { .. }
            | Error::DimsExceedCap { .. } => CryoStatus::CryoErrIo,
            _ => CryoStatus::CryoErrInvalidArgument,
        }
    }
}

fn fail(err: &Error) -> CryoStatus {
    set_last_error(&err.to_string());
    status_of(err)
}

fn fail_invalid(message: &str) -> CryoStatus {
    set_last_error(message);
    CryoStatus::CryoErrInvalidArgument
}

/// Runs `body` with panics converted to `CryoErrInternal`.
fn guarded(body: impl FnOnce() -> CryoStatus) -> CryoStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(_) => {
            set_last_error("internal panic");
            CryoStatus::CryoErrInternal
        }
    }
}

unsafe fn path_from_c<'a>(ptr: *const c_char) -> Result<&'a Path, CryoStatus> {
    if ptr.is_null() {
        return Err(fail_invalid("path is null"));
    }
    match CStr::from_ptr(ptr).to_str() {
        Ok(s) => Ok(Path::new(s)),
        Err(_) => Err(fail_invalid("path is not valid UTF-8")),
    }
}

fn resolved_config(cfg: *const CryoConfig) -> Result<RunConfig, Error> {
    let patch = if cfg.is_null() {
        ConfigPatch::default()
    } else {
        let c = unsafe { *cfg };
        let pos = |v: f64| if v > 0.0 { Some(v) } else { None };
        ConfigPatch {
            sampling_interval: pos(c.sampling_interval),
            bandwidth: pos(c.bandwidth),
            dbscan_eps: pos(c.dbscan_eps),
            dbscan_min_pts: (c.dbscan_min_pts > 0).then_some(c.dbscan_min_pts as usize),
            descriptor_radius: pos(c.descriptor_radius),
            noise_bound: pos(c.noise_bound),
            p_exponent: pos(c.p_exponent),
            max_corr_dist: pos(c.max_corr_dist),
            fine_max_iters: (c.fine_max_iters > 0).then_some(c.fine_max_iters as usize),
            dot_threshold: pos(c.dot_threshold),
            pair_radius: pos(c.pair_radius),
            grid_cell: pos(c.grid_cell),
            seed: Some(c.seed),
            ..Default::default()
        }
    };
    RunConfig::resolve(DEFAULT_INTERVAL_GLOBAL, &patch)
}

/// Message of the most recent error on this thread ("" when none). The
/// pointer remains valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn cryo_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cryo_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Fills `out` with the default configuration (5 Å sampling interval).
#[no_mangle]
pub extern "C" fn cryo_config_default(out: *mut CryoConfig) -> CryoStatus {
    guarded(|| {
        if out.is_null() {
            return fail_invalid("out config is null");
        }
        let d = RunConfig::default_global();
        let cfg = CryoConfig {
            sampling_interval: d.sampling_interval,
            bandwidth: d.bandwidth,
            dbscan_eps: d.dbscan_eps,
            dbscan_min_pts: d.dbscan_min_pts as u32,
            descriptor_radius: d.descriptor_radius,
            noise_bound: d.noise_bound,
            p_exponent: d.p_exponent,
            max_corr_dist: d.max_corr_dist,
            fine_max_iters: d.fine_max_iters as u32,
            dot_threshold: d.dot_threshold,
            pair_radius: d.pair_radius,
            grid_cell: d.grid_cell,
            seed: d.seed,
        };
        unsafe { out.write(cfg) };
        CryoStatus::CryoOk
    })
}

/// Reads an MRC density map from `path` into a new handle.
#[no_mangle]
pub unsafe extern "C" fn cryo_map_read(path: *const c_char, out: *mut *mut CryoMap) -> CryoStatus {
    guarded(|| {
        if out.is_null() {
            return fail_invalid("out handle is null");
        }
        let path = match path_from_c(path) {
            Ok(p) => p,
            Err(status) => return status,
        };
        match read_mrc(path) {
            Ok(map) => {
                unsafe { out.write(Box::into_raw(Box::new(CryoMap { inner: map }))) };
                CryoStatus::CryoOk
            }
            Err(e) => fail(&e),
        }
    })
}

/// Writes a map handle to `path` in MRC format (mode 2, little endian).
#[no_mangle]
pub unsafe extern "C" fn cryo_map_write(map: *const CryoMap, path: *const c_char) -> CryoStatus {
    guarded(|| {
        let Some(map) = (unsafe { map.as_ref() }) else {
            return fail_invalid("map handle is null");
        };
        let path = match path_from_c(path) {
            Ok(p) => p,
            Err(status) => return status,
        };
        match write_mrc(&map.inner, path) {
            Ok(()) => CryoStatus::CryoOk,
            Err(e) => fail(&e),
        }
    })
}

/// Synthesizes a Gaussian-blob map: `centers_xyz` is `n` packed (x, y, z)
/// triples; `weights` may be null for uniform weights.
#[no_mangle]
pub unsafe extern "C" fn cryo_map_synthesize(
    centers_xyz: *const f64,
    weights: *const f64,
    n: usize,
    resolution: f64,
    voxel_size: f64,
    padding: f64,
    out: *mut *mut CryoMap,
) -> CryoStatus {
    guarded(|| {
        if out.is_null() {
            return fail_invalid("out handle is null");
        }
        if centers_xyz.is_null() || n == 0 {
            return fail_invalid("centers are null or empty");
        }
        let flat = unsafe { std::slice::from_raw_parts(centers_xyz, n * 3) };
        let centers: Vec<nalgebra::Vector3<f64>> = flat
            .chunks_exact(3)
            .map(|c| nalgebra::Vector3::new(c[0], c[1], c[2]))
            .collect();
        let weights = if weights.is_null() {
            vec![1.0; n]
        } else {
            unsafe { std::slice::from_raw_parts(weights, n) }.to_vec()
        };
        match synthesize_map(&centers, &weights, resolution, voxel_size, padding) {
            Ok(map) => {
                unsafe { out.write(Box::into_raw(Box::new(CryoMap { inner: map }))) };
                CryoStatus::CryoOk
            }
            Err(e) => fail(&e),
        }
    })
}

/// Releases a map handle. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn cryo_map_free(map: *mut CryoMap) {
    if !map.is_null() {
        drop(unsafe { Box::from_raw(map) });
    }
}

/// Voxel counts of the map along x, y, z.
#[no_mangle]
pub unsafe extern "C" fn cryo_map_dims(map: *const CryoMap, out_dims: *mut u32) -> CryoStatus {
    guarded(|| {
        let Some(map) = (unsafe { map.as_ref() }) else {
            return fail_invalid("map handle is null");
        };
        if out_dims.is_null() {
            return fail_invalid("out_dims is null");
        }
        let dims = map.inner.dims;
        unsafe {
            out_dims.write(dims.0 as u32);
            out_dims.add(1).write(dims.1 as u32);
            out_dims.add(2).write(dims.2 as u32);
        }
        CryoStatus::CryoOk
    })
}

/// Contour level of the map (the sampling threshold).
#[no_mangle]
pub unsafe extern "C" fn cryo_map_contour(map: *const CryoMap, out_level: *mut f32) -> CryoStatus {
    guarded(|| {
        let Some(map) = (unsafe { map.as_ref() }) else {
            return fail_invalid("map handle is null");
        };
        if out_level.is_null() {
            return fail_invalid("out_level is null");
        }
        unsafe { out_level.write(map.inner.contour_level) };
        CryoStatus::CryoOk
    })
}

/// Overrides the map's contour level.
#[no_mangle]
pub unsafe extern "C" fn cryo_map_set_contour(map: *mut CryoMap, level: f32) -> CryoStatus {
    guarded(|| {
        let Some(map) = (unsafe { map.as_mut() }) else {
            return fail_invalid("map handle is null");
        };
        map.inner.contour_level = level;
        CryoStatus::CryoOk
    })
}

/// Runs the two-stage global alignment of `src` onto `tgt`. `config` may be
/// null for defaults.
#[no_mangle]
pub unsafe extern "C" fn cryo_align_global(
    src: *const CryoMap,
    tgt: *const CryoMap,
    config: *const CryoConfig,
    out: *mut *mut CryoAlignment,
) -> CryoStatus {
    guarded(|| {
        if out.is_null() {
            return fail_invalid("out handle is null");
        }
        let (Some(src), Some(tgt)) = (unsafe { src.as_ref() }, unsafe { tgt.as_ref() }) else {
            return fail_invalid("map handle is null");
        };
        let cfg = match resolved_config(config) {
            Ok(c) => c,
            Err(e) => return fail(&e),
        };
        match align_global(&src.inner, &tgt.inner, &cfg) {
            Ok(alignment) => {
                unsafe { out.write(Box::into_raw(Box::new(CryoAlignment { inner: alignment }))) };
                CryoStatus::CryoOk
            }
            Err(e) => fail(&e),
        }
    })
}

/// Releases an alignment handle. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn cryo_alignment_free(alignment: *mut CryoAlignment) {
    if !alignment.is_null() {
        drop(unsafe { Box::from_raw(alignment) });
    }
}

/// Copies the alignment's rigid transform into `out_matrix` as a row-major
/// 4×4 homogeneous matrix (16 doubles).
#[no_mangle]
pub unsafe extern "C" fn cryo_alignment_matrix(
    alignment: *const CryoAlignment,
    out_matrix: *mut f64,
) -> CryoStatus {
    guarded(|| {
        let Some(alignment) = (unsafe { alignment.as_ref() }) else {
            return fail_invalid("alignment handle is null");
        };
        if out_matrix.is_null() {
            return fail_invalid("out_matrix is null");
        }
        let m = alignment.inner.transform.to_mat4_row_major();
        unsafe { std::ptr::copy_nonoverlapping(m.as_ptr(), out_matrix, 16) };
        CryoStatus::CryoOk
    })
}

/// Similarity score of the alignment in [0, 1].
#[no_mangle]
pub unsafe extern "C" fn cryo_alignment_score(
    alignment: *const CryoAlignment,
    out_score: *mut f64,
) -> CryoStatus {
    guarded(|| {
        let Some(alignment) = (unsafe { alignment.as_ref() }) else {
            return fail_invalid("alignment handle is null");
        };
        if out_score.is_null() {
            return fail_invalid("out_score is null");
        }
        unsafe { out_score.write(alignment.inner.score.score) };
        CryoStatus::CryoOk
    })
}

/// Scores a caller-provided transform (row-major 4×4) of `src` against
/// `tgt` without running the pipeline. `config` may be null for defaults.
#[no_mangle]
pub unsafe extern "C" fn cryo_score_transform(
    src: *const CryoMap,
    tgt: *const CryoMap,
    matrix: *const f64,
    config: *const CryoConfig,
    out_score: *mut f64,
) -> CryoStatus {
    guarded(|| {
        let (Some(src), Some(tgt)) = (unsafe { src.as_ref() }, unsafe { tgt.as_ref() }) else {
            return fail_invalid("map handle is null");
        };
        if matrix.is_null() || out_score.is_null() {
            return fail_invalid("matrix or out_score is null");
        }
        let mut m = [0.0; 16];
        unsafe { std::ptr::copy_nonoverlapping(matrix, m.as_mut_ptr(), 16) };
        let transform =
            match RigidTransform::from_mat4_row_major(&m, cryoalign::transform::SO3_INPUT_TOL) {
                Ok(t) => t,
                Err(e) => return fail(&e),
            };
        let cfg = match resolved_config(config) {
            Ok(c) => c,
            Err(e) => return fail(&e),
        };
        let run = || -> Result<f64, Error> {
            let src_cloud = cryoalign::sample_grid(&src.inner, cfg.sampling_interval)?;
            let tgt_cloud = cryoalign::sample_grid(&tgt.inner, cfg.sampling_interval)?;
            let score = similarity(
                &src_cloud.transformed(&transform),
                &tgt_cloud,
                cfg.dot_threshold,
                cfg.pair_radius,
                cfg.grid_cell,
            )?;
            Ok(score.score)
        };
        match run() {
            Ok(score) => {
                unsafe { out_score.write(score) };
                CryoStatus::CryoOk
            }
            Err(e) => fail(&e),
        }
    })
}
