use std::ffi::{CStr, CString};
use std::ptr;

use polynas_ffi::*;

const SPEC: &str = "schema_version = 1\n[conv]\nci = 4\nco = 8\nh = 4\nw = 4\nkh = 3\nkw = 3\npad = 1\n";

fn last_error() -> Option<String> {
    let p = polynas_last_error();
    (!p.is_null()).then(|| unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned())
}

unsafe fn nest(toml: &str) -> *mut PolynasNest {
    let text = CString::new(toml).unwrap();
    let mut out = ptr::null_mut();
    assert_eq!(polynas_nest_from_toml(text.as_ptr(), &mut out), PolynasStatus::Ok);
    out
}

unsafe fn apply(n: *const PolynasNest, dsl: &str) -> (PolynasStatus, *mut PolynasNest) {
    let seq = CString::new(dsl).unwrap();
    let mut out = ptr::null_mut();
    (polynas_nest_apply(n, seq.as_ptr(), &mut out), out)
}

unsafe fn macs(n: *const PolynasNest) -> u64 {
    let mut m = 0;
    assert_eq!(polynas_nest_macs(n, &mut m), PolynasStatus::Ok);
    m
}

#[test]
fn group_halves_macs_and_dump_round_trips() {
    unsafe {
        let base = nest(SPEC);
        assert_eq!(macs(base), 4 * 8 * 4 * 4 * 9);
        let (status, grouped) = apply(base, "group(co,ci,2)");
        assert_eq!(status, PolynasStatus::Ok);
        assert_eq!(macs(grouped) * 2, macs(base));
        let mut text = ptr::null_mut();
        assert_eq!(polynas_nest_dump(grouped, &mut text), PolynasStatus::Ok);
        let dump = CStr::from_ptr(text).to_str().unwrap().to_string();
        polynas_string_free(text);
        let golden = include_str!("../../core/tests/golden/group2_4x8_pad1.txt");
        assert_eq!(dump, golden);
        polynas_nest_free(grouped);
        polynas_nest_free(base);
    }
}

#[test]
fn conv_parameters_match_the_toml_path() {
    unsafe {
        let a = nest(SPEC);
        let mut b = ptr::null_mut();
        assert_eq!(polynas_nest_from_conv(4, 8, 4, 4, 3, 3, 1, 1, 0, 0, &mut b), PolynasStatus::Ok);
        assert_eq!(macs(a), macs(b));
        let mut bad = ptr::null_mut();
        assert_eq!(polynas_nest_from_conv(3, 8, 4, 4, 3, 3, 1, 1, 2, 1, &mut bad), PolynasStatus::Config);
        assert!(bad.is_null());
        assert!(last_error().is_some());
        polynas_nest_free(a);
        polynas_nest_free(b);
    }
}

#[test]
fn legality_verdicts_and_reasons() {
    unsafe {
        let base = nest(SPEC);
        let (_, tiled) = apply(base, "tile(ci,2) | interchange(h,w)");
        let mut v = PolynasVerdict::Illegal;
        assert_eq!(polynas_nest_check_legality(base, tiled, 0, &mut v), PolynasStatus::Ok);
        assert_eq!(v, PolynasVerdict::Legal);
        assert!(last_error().is_none());

        let (_, neural) = apply(base, "bottleneck(co,2)");
        assert_eq!(polynas_nest_check_legality(base, neural, 0, &mut v), PolynasStatus::Ok);
        assert_eq!(v, PolynasVerdict::NotApplicable);
        assert!(last_error().unwrap().contains("instance counts differ"));

        assert_eq!(polynas_nest_check_legality(base, tiled, 10, &mut v), PolynasStatus::Legality);
        assert!(last_error().is_some());
        for n in [base, tiled, neural] {
            polynas_nest_free(n);
        }
    }
}

#[test]
fn errors_set_status_and_message() {
    unsafe {
        let base = nest(SPEC);
        let (status, out) = apply(base, "bottleneck(co,3)");
        assert_eq!(status, PolynasStatus::Transform);
        assert!(out.is_null());
        assert!(last_error().unwrap().contains("not divisible by 3"));
        let (status, _) = apply(base, "twist(co)");
        assert_eq!(status, PolynasStatus::Transform);

        let mut out = ptr::null_mut();
        assert_eq!(polynas_nest_apply(ptr::null(), c"tile(ci,2)".as_ptr(), &mut out), PolynasStatus::NullPointer);
        assert_eq!(polynas_nest_apply(base, ptr::null(), &mut out), PolynasStatus::NullPointer);
        let invalid = [0xffu8, 0xfe, 0];
        assert_eq!(polynas_nest_from_toml(invalid.as_ptr().cast(), &mut out), PolynasStatus::InvalidUtf8);
        assert_eq!(polynas_nest_from_toml(c"schema_version = 9".as_ptr(), &mut out), PolynasStatus::Config);
        assert_eq!(polynas_nest_macs(base, ptr::null_mut()), PolynasStatus::NullPointer);

        // Errors are per thread.
        std::thread::spawn(|| assert!(last_error().is_none())).join().unwrap();
        assert!(last_error().is_some());
        polynas_nest_free(base);
        polynas_nest_free(ptr::null_mut());
        polynas_string_free(ptr::null_mut());
    }
}

#[test]
fn network_fisher_matches_the_library() {
    let toml = "schema_version = 1\nnum_classes = 3\nseed = 4\nbatch_size = 8\n\
                [[layers]]\nconv = { ci = 2, co = 4, h = 4, w = 4, kh = 3, kw = 3, pad = 1 }\n";
    let cfg = polynas::config::NetworkConfig::from_toml(toml).unwrap();
    let want = polynas::nnet::fisher_potential(&cfg.build_network().unwrap(), &cfg.build_batch(None).unwrap())
        .unwrap()
        .total;
    unsafe {
        let text = CString::new(toml).unwrap();
        let mut net = ptr::null_mut();
        assert_eq!(polynas_network_from_toml(text.as_ptr(), &mut net), PolynasStatus::Ok);
        let mut got = -1.0;
        assert_eq!(polynas_network_fisher(net, &mut got), PolynasStatus::Ok);
        assert_eq!(got, want);
        assert!(got > 0.0);
        polynas_network_free(net);
        assert_eq!(polynas_network_fisher(ptr::null(), &mut got), PolynasStatus::NullPointer);
    }
}

#[test]
fn header_declares_the_api() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/polynas.h")).unwrap();
    for name in [
        "polynas_last_error",
        "polynas_string_free",
        "polynas_nest_from_conv",
        "polynas_nest_from_toml",
        "polynas_nest_apply",
        "polynas_nest_dump",
        "polynas_nest_macs",
        "polynas_nest_check_legality",
        "polynas_nest_free",
        "polynas_network_from_toml",
        "polynas_network_fisher",
        "polynas_network_free",
        "typedef struct PolynasNest PolynasNest",
        "POLYNAS_STATUS_TRANSFORM = 4",
    ] {
        assert!(header.contains(name), "{name} missing from the header");
    }
}
