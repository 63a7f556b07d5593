//! C ABI for `hypoldp`.
//!
//! Every function returns an [`HldpStatus`]; results go through out
//! pointers. On failure the message is kept per thread and read with
//! [`hldp_last_error`]. Systems are opaque handles created by
//! [`hldp_system_from_json`] or [`hldp_system_fixture`] and released with
//! [`hldp_system_free`]. Panics are caught at the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use hypoldp::montecarlo::counterexample_exact;
use hypoldp::ratefn::{minimize_energy, EndpointConstraint, OptimizerOptions, RateError};
use hypoldp::skeleton::{covariance, endpoint, solve_skeleton, CMPath, SkeletonError, DEFAULT_SUBSTEPS};
use hypoldp::vectorfields::{hormander_degree, FieldError, HormanderOptions, VectorFieldSystem};
use hypoldp::{fixtures, Error};

/// Status codes; `HLDP_STATUS_OK` is zero.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HldpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    ParseError = 3,
    DimensionMismatch = 4,
    DegreeCapExceeded = 5,
    NotConverged = 6,
    InvalidArgument = 7,
    Panic = 8,
}

/// Opaque vector-field system.
pub struct HldpSystem {
    inner: VectorFieldSystem,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(HldpStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Field(f) | Error::Rate(RateError::Field(f)) => field_status(f),
            Error::Skeleton(SkeletonError::DimensionMismatch { .. })
            | Error::Rate(RateError::Skeleton(SkeletonError::DimensionMismatch { .. })) => {
                HldpStatus::DimensionMismatch
            }
            Error::Json(_) => HldpStatus::ParseError,
            _ => HldpStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn field_status(e: &FieldError) -> HldpStatus {
    match e {
        FieldError::DimensionMismatch { .. } => HldpStatus::DimensionMismatch,
        FieldError::InvalidSystem { .. } => HldpStatus::ParseError,
        FieldError::DegreeCapExceeded { .. } => HldpStatus::DegreeCapExceeded,
        _ => HldpStatus::InvalidArgument,
    }
}

macro_rules! lift_err {
    ($e:expr) => {
        $e.map_err(|e| Failure::from(Error::from(e)))
    };
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> HldpStatus {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => HldpStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(&format!("panic: {msg}"));
            HldpStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(HldpStatus::NullPointer, format!("{what} is null"))
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|e| Failure(HldpStatus::InvalidUtf8, format!("{what}: {e}")))
}

unsafe fn system<'a>(p: *const HldpSystem) -> Result<&'a VectorFieldSystem, Failure> {
    p.as_ref().map(|s| &s.inner).ok_or_else(|| null("system"))
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn write<T>(out: *mut T, v: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(v);
    Ok(())
}

fn check_len(expected: usize, got: usize, what: &str) -> Result<(), Failure> {
    if expected == got {
        Ok(())
    } else {
        Err(Failure(HldpStatus::DimensionMismatch, format!("{what} has length {got}, expected {expected}")))
    }
}

/// `segments × d` row-major slopes on a uniform grid of `[0, horizon]`.
unsafe fn control(sys: &VectorFieldSystem, slopes: *const f64, segments: usize, horizon: f64) -> Result<CMPath, Failure> {
    let d = sys.d();
    let flat = slice(slopes, segments * d, "slopes")?;
    let rows = flat.chunks_exact(d.max(1)).map(<[f64]>::to_vec).collect();
    lift_err!(CMPath::uniform(horizon, rows))
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next call into the library on the same thread.
#[no_mangle]
pub extern "C" fn hldp_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn hldp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parses a system from JSON (`n`, `d`, `fields`, `drift`).
///
/// # Safety
/// `json` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hldp_system_from_json(json: *const c_char, out: *mut *mut HldpSystem) -> HldpStatus {
    guard(|| {
        let text = c_str(json, "json")?;
        let inner = lift_err!(VectorFieldSystem::from_json_str(text))?;
        write(out, Box::into_raw(Box::new(HldpSystem { inner })), "out")
    })
}

/// Built-in fixture by name: `elliptic`, `heisenberg`, `grushin`, `engel`
/// or `counterexample`.
///
/// # Safety
/// `name` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hldp_system_fixture(name: *const c_char, out: *mut *mut HldpSystem) -> HldpStatus {
    guard(|| {
        let name = c_str(name, "name")?;
        let inner = fixtures::by_name(name)
            .ok_or_else(|| Failure(HldpStatus::InvalidArgument, format!("unknown fixture {name:?}")))?;
        write(out, Box::into_raw(Box::new(HldpSystem { inner })), "out")
    })
}

/// Releases a system. Null is ignored.
///
/// # Safety
/// `sys` must come from this library and must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn hldp_system_free(sys: *mut HldpSystem) {
    if !sys.is_null() {
        drop(Box::from_raw(sys));
    }
}

/// State dimension `n` and number of driving fields `d`.
///
/// # Safety
/// `sys` must be a live handle; `n` and `d` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn hldp_system_dims(sys: *const HldpSystem, n: *mut usize, d: *mut usize) -> HldpStatus {
    guard(|| {
        let s = system(sys)?;
        write(n, s.n(), "n")?;
        write(d, s.d(), "d")
    })
}

/// Strong Hörmander degree at `x` (length `n`), with default options.
///
/// # Safety
/// `x` must point to `n` doubles and `degree` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hldp_hormander_degree(
    sys: *const HldpSystem,
    x: *const f64,
    n: usize,
    degree: *mut u32,
) -> HldpStatus {
    guard(|| {
        let s = system(sys)?;
        let x = slice(x, n, "x")?;
        let cert = lift_err!(hormander_degree(s, x, HormanderOptions::default()))?;
        write(degree, cert.degree as u32, "degree")
    })
}

/// Minimal energy `½‖h‖²` of controls steering `start` to `target` (both of
/// length `n`). Returns `NotConverged` when no start reaches the target; the
/// best energy found is still written.
///
/// # Safety
/// `start` and `target` must point to `n` doubles, `energy` be valid.
#[no_mangle]
pub unsafe extern "C" fn hldp_minimize_energy(
    sys: *const HldpSystem,
    start: *const f64,
    target: *const f64,
    n: usize,
    segments: usize,
    restarts: usize,
    seed: u64,
    energy: *mut f64,
) -> HldpStatus {
    guard(|| {
        let s = system(sys)?;
        check_len(s.n(), n, "start")?;
        let c = lift_err!(EndpointConstraint::point(slice(start, n, "start")?.to_vec(), slice(target, n, "target")?.to_vec()))?;
        let opts = OptimizerOptions { segments, random_restarts: restarts, seed, ..Default::default() };
        let r = lift_err!(minimize_energy(s, &c, &opts))?;
        write(energy, r.energy, "energy")?;
        if r.converged {
            Ok(())
        } else {
            Err(Failure(HldpStatus::NotConverged, format!("no start converged (best residual {:e})", r.residual)))
        }
    })
}

/// Closed-form counterexample heat kernel at `(0, x2)` for noise `eps`.
///
/// # Safety
/// `density` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hldp_counterexample_density(eps: f64, x2: f64, density: *mut f64) -> HldpStatus {
    guard(|| {
        let v = counterexample_exact(eps, x2).map_err(|e| Failure(HldpStatus::InvalidArgument, e.to_string()))?;
        write(density, v.p, "density")
    })
}

/// Skeleton endpoint from `x0` (length `n`) under piecewise-constant
/// slopes (`segments × d`, row-major) on `[0, horizon]`; writes `n` values.
///
/// # Safety
/// Pointers must reference buffers of the stated sizes.
#[no_mangle]
pub unsafe extern "C" fn hldp_skeleton_endpoint(
    sys: *const HldpSystem,
    x0: *const f64,
    n: usize,
    slopes: *const f64,
    segments: usize,
    horizon: f64,
    out: *mut f64,
) -> HldpStatus {
    guard(|| {
        let s = system(sys)?;
        check_len(s.n(), n, "x0")?;
        let h = control(s, slopes, segments, horizon)?;
        let x = lift_err!(endpoint(s, slice(x0, n, "x0")?, &h, DEFAULT_SUBSTEPS))?;
        if out.is_null() {
            return Err(null("out"));
        }
        std::slice::from_raw_parts_mut(out, n).copy_from_slice(&x);
        Ok(())
    })
}

/// Smallest eigenvalue of the deterministic Malliavin covariance of the
/// endpoint for the same control layout as [`hldp_skeleton_endpoint`].
///
/// # Safety
/// Pointers must reference buffers of the stated sizes.
#[no_mangle]
pub unsafe extern "C" fn hldp_covariance_min_eig(
    sys: *const HldpSystem,
    x0: *const f64,
    n: usize,
    slopes: *const f64,
    segments: usize,
    horizon: f64,
    min_eig: *mut f64,
) -> HldpStatus {
    guard(|| {
        let s = system(sys)?;
        check_len(s.n(), n, "x0")?;
        let h = control(s, slopes, segments, horizon)?;
        let traj = lift_err!(solve_skeleton(s, slice(x0, n, "x0")?, &h, DEFAULT_SUBSTEPS))?;
        let rep = lift_err!(covariance(s, &traj, None))?;
        write(min_eig, rep.min_eig, "min_eig")
    })
}
