//! C ABI over `polynas`.
//!
//! Every fallible function returns a [`PolynasStatus`]. On failure the
//! message is kept in a thread-local slot readable through
//! [`polynas_last_error`]. Strings returned through out-parameters are owned
//! by the caller and must be released with [`polynas_string_free`]; handles
//! are released with their matching `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use polynas::config::{NetworkConfig, SpecFile};
use polynas::nnet::{fisher_potential, Batch, Network};
use polynas::{check_semantic_legality, conv_nest, count_macs, Caps, ConvSpec, LoopNest, TransformSequence, Verdict};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PolynasStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Config = 3,
    Transform = 4,
    Legality = 5,
    Network = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PolynasVerdict {
    Legal = 0,
    Illegal = 1,
    NotApplicable = 2,
}

/// Opaque loop nest.
pub struct PolynasNest(LoopNest);

/// Opaque network together with the batch its Fisher Potential is scored on.
pub struct PolynasNetwork {
    net: Network,
    batch: Batch,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(CString::new(msg).expect("nul bytes removed")));
}

struct Failure(PolynasStatus, String);

fn fail<E: std::fmt::Display>(status: PolynasStatus) -> impl FnOnce(E) -> Failure {
    move |e| Failure(status, e.to_string())
}

/// Runs `f`, records any failure or panic, and returns its status.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> PolynasStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PolynasStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            PolynasStatus::Panic
        }
    }
}

unsafe fn text<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if ptr.is_null() {
        return Err(Failure(PolynasStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| Failure(PolynasStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn handle<'a, T>(ptr: *const T, what: &str) -> Result<&'a T, Failure> {
    ptr.as_ref()
        .ok_or_else(|| Failure(PolynasStatus::NullPointer, format!("{what} is null")))
}

unsafe fn put<T>(out: *mut T, value: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure(PolynasStatus::NullPointer, format!("{what} is null")));
    }
    out.write(value);
    Ok(())
}

fn nest_from_spec(spec: &ConvSpec) -> Result<*mut PolynasNest, Failure> {
    let nest = conv_nest(spec).map_err(fail(PolynasStatus::Config))?;
    Ok(Box::into_raw(Box::new(PolynasNest(nest))))
}

/// Message of the last failed call on this thread, or the reason behind a
/// non-legal verdict. Null after any other successful call. The pointer
/// stays valid until the next call into this library on the same thread; do
/// not free it.
#[no_mangle]
pub extern "C" fn polynas_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |s| s.as_ptr()))
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and must not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn polynas_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Builds the convolution nest for the given sizes with unit groups and
/// bottleneck factor when those are passed as 0.
///
/// # Safety
/// `out` must be valid for a pointer write.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn polynas_nest_from_conv(
    ci: usize,
    co: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    pad: usize,
    stride: usize,
    groups: usize,
    bottleneck: usize,
    out: *mut *mut PolynasNest,
) -> PolynasStatus {
    guard(|| {
        let spec = ConvSpec::new(ci, co, h, w, kh, kw)
            .with_pad(pad)
            .with_stride(stride.max(1))
            .with_groups(groups.max(1))
            .with_bottleneck(bottleneck.max(1));
        spec.validate().map_err(fail(PolynasStatus::Config))?;
        let nest = nest_from_spec(&spec)?;
        put(out, nest, "out")
    })
}

/// Builds the convolution nest described by a spec TOML document.
///
/// # Safety
/// `toml` must be a nul-terminated string and `out` valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn polynas_nest_from_toml(toml: *const c_char, out: *mut *mut PolynasNest) -> PolynasStatus {
    guard(|| {
        let file = SpecFile::from_toml(text(toml, "toml")?).map_err(fail(PolynasStatus::Config))?;
        let nest = nest_from_spec(&file.conv)?;
        put(out, nest, "out")
    })
}

/// Applies a transformation sequence written in the DSL and returns the
/// rewritten nest as a new handle. The input handle is unchanged.
///
/// # Safety
/// `nest` must be a live handle, `sequence` a nul-terminated string and
/// `out` valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn polynas_nest_apply(
    nest: *const PolynasNest,
    sequence: *const c_char,
    out: *mut *mut PolynasNest,
) -> PolynasStatus {
    guard(|| {
        let nest = handle(nest, "nest")?;
        let seq = TransformSequence::parse(text(sequence, "sequence")?).map_err(fail(PolynasStatus::Transform))?;
        let next = seq.apply(&nest.0).map_err(fail(PolynasStatus::Transform))?;
        put(out, Box::into_raw(Box::new(PolynasNest(next))), "out")
    })
}

/// Writes the textual dump of `nest`; free it with `polynas_string_free`.
///
/// # Safety
/// `nest` must be a live handle and `out` valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn polynas_nest_dump(nest: *const PolynasNest, out: *mut *mut c_char) -> PolynasStatus {
    guard(|| {
        let nest = handle(nest, "nest")?;
        let s = CString::new(nest.0.to_string()).map_err(fail(PolynasStatus::Panic))?;
        put(out, s.into_raw(), "out")
    })
}

/// Counts the multiply-accumulates `nest` executes.
///
/// # Safety
/// `nest` must be a live handle and `out` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn polynas_nest_macs(nest: *const PolynasNest, out: *mut u64) -> PolynasStatus {
    guard(|| {
        let nest = handle(nest, "nest")?;
        let macs = count_macs(&nest.0).map_err(fail(PolynasStatus::Transform))?;
        put(out, macs, "out")
    })
}

/// Checks that `transformed` preserves every dependence of `original`.
/// `max_instances` bounds the enumeration; 0 keeps the default cap. A
/// rejected rewrite is reported through `verdict`, not the status, with its
/// reason available from `polynas_last_error`.
///
/// # Safety
/// Both handles must be live and `verdict` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn polynas_nest_check_legality(
    original: *const PolynasNest,
    transformed: *const PolynasNest,
    max_instances: u64,
    verdict: *mut PolynasVerdict,
) -> PolynasStatus {
    guard(|| {
        let a = handle(original, "original")?;
        let b = handle(transformed, "transformed")?;
        let mut caps = Caps::default();
        if max_instances > 0 {
            caps.instances = max_instances;
        }
        let v = check_semantic_legality(&a.0, &b.0, caps).map_err(fail(PolynasStatus::Legality))?;
        let code = match v {
            Verdict::Legal => PolynasVerdict::Legal,
            Verdict::Illegal(reason) => {
                set_error(reason);
                PolynasVerdict::Illegal
            }
            Verdict::NotApplicable(reason) => {
                set_error(reason);
                PolynasVerdict::NotApplicable
            }
        };
        put(verdict, code, "verdict")
    })
}

/// Releases a nest handle. Null is ignored.
///
/// # Safety
/// `nest` must come from this library and must not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn polynas_nest_free(nest: *mut PolynasNest) {
    if !nest.is_null() {
        drop(Box::from_raw(nest));
    }
}

/// Builds a network and its scoring batch from a network TOML document.
/// Batch files, if any, resolve relative to the working directory.
///
/// # Safety
/// `toml` must be a nul-terminated string and `out` valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn polynas_network_from_toml(
    toml: *const c_char,
    out: *mut *mut PolynasNetwork,
) -> PolynasStatus {
    guard(|| {
        let cfg = NetworkConfig::from_toml(text(toml, "toml")?).map_err(fail(PolynasStatus::Config))?;
        let net = cfg.build_network().map_err(fail(PolynasStatus::Network))?;
        let batch = cfg.build_batch(None).map_err(fail(PolynasStatus::Config))?;
        put(out, Box::into_raw(Box::new(PolynasNetwork { net, batch })), "out")
    })
}

/// Writes the Fisher Potential of the network at initialisation.
///
/// # Safety
/// `network` must be a live handle and `out` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn polynas_network_fisher(network: *const PolynasNetwork, out: *mut f64) -> PolynasStatus {
    guard(|| {
        let n = handle(network, "network")?;
        let report = fisher_potential(&n.net, &n.batch).map_err(fail(PolynasStatus::Network))?;
        put(out, report.total, "out")
    })
}

/// Releases a network handle. Null is ignored.
///
/// # Safety
/// `network` must come from this library and must not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn polynas_network_free(network: *mut PolynasNetwork) {
    if !network.is_null() {
        drop(Box::from_raw(network));
    }
}
