use std::ffi::CStr;
use std::ptr;

use coded_arq_ffi::*;

fn ge(eps: f64) -> CarqGe {
    CarqGe { r: 0.3, eps_g: 0.0, eps_b: 1.0, eps }
}

fn channel(eps: f64) -> *mut CarqChannel {
    let g = ge(eps);
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { carq_channel_new(&g, &g, &mut h) }, CarqStatus::Ok);
    assert!(!h.is_null());
    h
}

fn params(scheme: CarqScheme, timeout: u32) -> CarqParams {
    CarqParams {
        scheme,
        k: 5,
        timeout,
        frame_size: 5,
        dof: 4,
        gamma_over_rho: 3.0,
    }
}

#[test]
fn analyze_roundtrip() {
    let h = channel(0.3);
    assert!((unsafe { carq_channel_eps(h) } - 0.3).abs() < 1e-12);
    for scheme in [CarqScheme::Uncoded, CarqScheme::Harq, CarqScheme::Coded] {
        let mut m = CarqMetrics::default();
        assert_eq!(unsafe { carq_analyze(h, &params(scheme, 10), &mut m) }, CarqStatus::Ok);
        assert!((m.throughput * m.tau_mean - 1.0).abs() < 1e-12);
        assert!((m.mgf_tau - 1.0).abs() < 1e-9 && (m.mgf_delay - 1.0).abs() < 1e-9);
    }
    unsafe { carq_channel_free(h) };
}

#[test]
fn error_codes() {
    let bad = ge(1.5);
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { carq_channel_new(&bad, &bad, &mut h) }, CarqStatus::Domain);
    assert!(h.is_null());
    let msg = unsafe { CStr::from_ptr(carq_last_error()) }.to_str().unwrap();
    assert!(msg.contains("domain"), "{msg}");

    let h = channel(0.3);
    let mut m = CarqMetrics::default();
    assert_eq!(unsafe { carq_analyze(h, &params(CarqScheme::Uncoded, 3), &mut m) }, CarqStatus::Domain);
    assert_eq!(unsafe { carq_analyze(h, ptr::null(), &mut m) }, CarqStatus::NullPointer);
    assert!(unsafe { carq_channel_eps(ptr::null()) }.is_nan());
    unsafe {
        carq_channel_free(h);
        carq_channel_free(ptr::null_mut());
    }
}

#[test]
fn simulate_error_free() {
    let g = ge(0.0);
    let mut s = CarqSimStats::default();
    let st = unsafe { carq_simulate(&params(CarqScheme::Uncoded, 10), &g, &g, 9, 2_000, &mut s) };
    assert_eq!(st, CarqStatus::Ok);
    assert_eq!(s.tau_mean, 1.0);
    assert_eq!(s.delay_mean, 5.0);
    assert_eq!(s.delivered, 2_000);
}

#[test]
fn header_declares_api() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/coded_arq.h")).unwrap();
    for name in [
        "carq_channel_new",
        "carq_channel_free",
        "carq_channel_eps",
        "carq_analyze",
        "carq_simulate",
        "carq_last_error",
        "typedef struct CarqChannel CarqChannel",
        "CARQ_STATUS_NULL_POINTER = 1",
    ] {
        assert!(header.contains(name), "missing {name}");
    }
}
