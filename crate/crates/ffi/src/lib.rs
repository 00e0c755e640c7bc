//! C ABI for the `irsad` toolkit.
//!
//! Every function returns an [`IrsadStatus`]; on failure the message is
//! available from [`irsad_last_error_message`] on the same thread. Handles
//! are opaque and must be released with their `_free` function. Complex
//! matrices cross the boundary as row-major arrays of interleaved
//! `(re, im)` doubles.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use num_complex::Complex64;

use irsad::data::Deployment;
use irsad::harness::metrics::{pm_pf, DetectionResult};
use irsad::harness::{Detector, DetectorSpec};
use irsad::io::{load_gate, load_unfolded};
use irsad::linalg::CMat;
use irsad::rng;
use irsad::scenario::ScenarioConfig;
use irsad::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IrsadStatus {
    Ok = 0,
    NullArgument = 1,
    Config = 2,
    Numerical = 3,
    MissingCheckpoint = 4,
    Format = 5,
    Io = 6,
    Dimension = 7,
    UndefinedMetric = 8,
    Panic = 9,
}

/// A placed scenario with its signatures and IRS phases.
pub struct IrsadDeployment(Deployment);

/// A ready-to-run detector.
pub struct IrsadDetector(Detector);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("NUL bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> IrsadStatus {
    match e {
        Error::Config(_) | Error::Domain(_) => IrsadStatus::Config,
        Error::Dimension(_) | Error::Data(_) => IrsadStatus::Dimension,
        Error::Numerical(_) | Error::Diverged { .. } => IrsadStatus::Numerical,
        Error::UndefinedMetric(_) => IrsadStatus::UndefinedMetric,
        Error::MissingCheckpoint(_) => IrsadStatus::MissingCheckpoint,
        Error::Format { .. } => IrsadStatus::Format,
        Error::Io(_) => IrsadStatus::Io,
    }
}

enum Failure {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> IrsadStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            IrsadStatus::Ok
        }
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("{what} is null"));
            IrsadStatus::NullArgument
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            IrsadStatus::Panic
        }
    }
}

unsafe fn non_null<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn c_str<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Failure::Lib(Error::Config(format!("{what} is not UTF-8"))))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &'static str) -> Result<&'a mut [T], Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

fn check_len(got: usize, want: usize, what: &str) -> Result<(), Failure> {
    if got != want {
        return Err(Error::Dimension(format!("{what} has length {got}, expected {want}")).into());
    }
    Ok(())
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call into the library on this thread.
#[no_mangle]
pub extern "C" fn irsad_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn irsad_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds a deployment from scenario TOML, or the desk-scale scenario when
/// `toml` is null. `seed` replaces the scenario seed.
///
/// # Safety
/// `toml` must be null or a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn irsad_deployment_new(toml: *const c_char, seed: u64, out: *mut *mut IrsadDeployment) -> IrsadStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let config = if toml.is_null() { ScenarioConfig::desk_scale() } else { ScenarioConfig::from_toml_str(c_str(toml, "toml")?)? };
        let dep = Deployment::new(&config.with_seed(seed))?;
        *out = Box::into_raw(Box::new(IrsadDeployment(dep)));
        Ok(())
    })
}

/// # Safety
/// `dep` must be null or come from [`irsad_deployment_new`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn irsad_deployment_free(dep: *mut IrsadDeployment) {
    if !dep.is_null() {
        drop(Box::from_raw(dep));
    }
}

/// Signature length `L`, antennas `M` and devices `K`.
///
/// # Safety
/// `dep` must be a live handle; the outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn irsad_deployment_dims(
    dep: *const IrsadDeployment,
    l: *mut usize,
    m: *mut usize,
    k: *mut usize,
) -> IrsadStatus {
    guard(|| {
        let cfg = non_null(dep, "dep")?.0.config();
        if l.is_null() || m.is_null() || k.is_null() {
            return Err(Failure::Null("dims output"));
        }
        (*l, *m, *k) = (cfg.signature_len, cfg.antennas, cfg.devices);
        Ok(())
    })
}

/// Draws Monte Carlo frame `index` under `seed`: `y` receives `2*L*M`
/// doubles, `a` and `b` receive `K` true activities and indicators. Frames
/// depend only on `(seed, index)`.
///
/// # Safety
/// `dep` must be a live handle; each buffer must hold the stated length.
#[no_mangle]
pub unsafe extern "C" fn irsad_draw_frame(
    dep: *const IrsadDeployment,
    seed: u64,
    index: u64,
    y: *mut f64,
    y_len: usize,
    a: *mut f64,
    b: *mut u8,
    k_len: usize,
) -> IrsadStatus {
    guard(|| {
        let dep = &non_null(dep, "dep")?.0;
        let cfg = dep.config();
        check_len(y_len, 2 * cfg.signature_len * cfg.antennas, "y")?;
        check_len(k_len, cfg.devices, "activity buffers")?;
        let (y, a, b) = (slice_mut(y, y_len, "y")?, slice_mut(a, k_len, "a")?, slice_mut(b, k_len, "b")?);
        let frame = dep.draw_frame(&mut rng::trial(seed, index))?;
        for i in 0..frame.y.nrows() {
            for j in 0..frame.y.ncols() {
                let at = 2 * (i * frame.y.ncols() + j);
                y[at] = frame.y[(i, j)].re;
                y[at + 1] = frame.y[(i, j)].im;
            }
        }
        a.copy_from_slice(&frame.a);
        for (dst, &src) in b.iter_mut().zip(&frame.b) {
            *dst = src as u8;
        }
        Ok(())
    })
}

/// Creates a detector from its id (`cd`, `pgd:<expert>`, `unfold:<expert|moe>`).
/// Learned detectors need `checkpoint`, and `unfold:moe` also `gate`; either
/// may be null otherwise.
///
/// # Safety
/// String arguments must be null or NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn irsad_detector_new(
    id: *const c_char,
    checkpoint: *const c_char,
    gate: *const c_char,
    out: *mut *mut IrsadDetector,
) -> IrsadStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let spec: DetectorSpec = c_str(id, "id")?.parse()?;
        let net = if checkpoint.is_null() { None } else { Some(load_unfolded(Path::new(c_str(checkpoint, "checkpoint")?))?.0) };
        let gate = if gate.is_null() { None } else { Some(load_gate(Path::new(c_str(gate, "gate")?))?.0) };
        let det = Detector::build(spec, net.as_ref(), gate.as_ref())?;
        *out = Box::into_raw(Box::new(IrsadDetector(det)));
        Ok(())
    })
}

/// # Safety
/// `det` must be null or come from [`irsad_detector_new`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn irsad_detector_free(det: *mut IrsadDetector) {
    if !det.is_null() {
        drop(Box::from_raw(det));
    }
}

/// Estimates the `K` activities from one received frame `y` (`2*L*M` doubles,
/// working units as produced by [`irsad_draw_frame`]).
///
/// # Safety
/// Handles must be live; `y` and `a_hat` must hold the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn irsad_detect(
    det: *const IrsadDetector,
    dep: *const IrsadDeployment,
    y: *const f64,
    y_len: usize,
    a_hat: *mut f64,
    k_len: usize,
) -> IrsadStatus {
    guard(|| {
        let det = &non_null(det, "det")?.0;
        let dep = &non_null(dep, "dep")?.0;
        let cfg = dep.config();
        let (l, m) = (cfg.signature_len, cfg.antennas);
        check_len(y_len, 2 * l * m, "y")?;
        check_len(k_len, cfg.devices, "a_hat")?;
        let y = slice(y, y_len, "y")?;
        let out = slice_mut(a_hat, k_len, "a_hat")?;
        let y = CMat::from_fn(l, m, |i, j| Complex64::new(y[2 * (i * m + j)], y[2 * (i * m + j) + 1]));
        out.copy_from_slice(&det.detect(&y, dep)?.a_hat);
        Ok(())
    })
}

/// Pooled miss and false-alarm probabilities of `frames` estimates, each of
/// `k` devices, laid out frame after frame.
///
/// # Safety
/// `a_hat` and `b` must hold `frames * k` values; `pm` and `pf` must be writable.
#[no_mangle]
pub unsafe extern "C" fn irsad_pm_pf(
    a_hat: *const f64,
    b: *const u8,
    frames: usize,
    k: usize,
    threshold: f64,
    pm: *mut f64,
    pf: *mut f64,
) -> IrsadStatus {
    guard(|| {
        let n = frames.checked_mul(k).ok_or_else(|| Error::Dimension("frames * k overflows".into()))?;
        let (a_hat, b) = (slice(a_hat, n, "a_hat")?, slice(b, n, "b")?);
        if pm.is_null() || pf.is_null() {
            return Err(Failure::Null("pm/pf output"));
        }
        if k == 0 {
            return Err(Error::Dimension("k must be positive".into()).into());
        }
        let results: Vec<DetectionResult> = a_hat
            .chunks(k)
            .zip(b.chunks(k))
            .map(|(a, b)| DetectionResult {
                a_hat: a.to_vec(),
                b_true: b.iter().map(|&x| x != 0).collect(),
                detector: String::new(),
                seconds: 0.0,
            })
            .collect();
        (*pm, *pf) = pm_pf(&results, threshold)?;
        Ok(())
    })
}
