use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use sis_ffi::*;

fn last_error() -> String {
    let p = sis_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn linear(alpha: f64) -> *mut SisModel {
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { sis_model_linear_new(alpha, &mut m) }, SisStatus::Ok);
    assert!(!m.is_null());
    m
}

#[test]
fn linear_model_round_trip() {
    let model = linear(0.9);
    let mut cal = ptr::null_mut();
    let status = unsafe { sis_calibrate(model, SisMethod::SsisMuSigma, 3.0, 1000, 7, &mut cal) };
    assert_eq!(status, SisStatus::Ok, "{}", last_error());

    let (mut k, mut s) = (0.0, 0.0);
    assert_eq!(
        unsafe { sis_calibration_location_scale(cal, &mut k, &mut s) },
        SisStatus::Ok
    );
    assert!(k > 2.0 && k < 5.0, "k* = {k}");
    assert!(s > 0.0 && s < 1.5, "sigma* = {s}");

    let mut res = SisResult::default();
    let status = unsafe {
        sis_estimate(
            model,
            cal,
            SisMethod::SsisMuSigma,
            3.0,
            4000,
            SisRng::Pseudo,
            11,
            false,
            &mut res,
        )
    };
    assert_eq!(status, SisStatus::Ok, "{}", last_error());
    // P(N(0,1) > 3)
    let truth = 1.349_898_031_630_094_5e-3;
    assert_eq!(res.n, 4000);
    assert!((res.estimate - truth).abs() < 4.0 * res.variance_estimate.sqrt() + 1e-12);

    // Fit serialization restores the same proposal.
    let mut text = ptr::null_mut();
    assert_eq!(unsafe { sis_calibration_to_toml(model, cal, &mut text) }, SisStatus::Ok);
    let mut cal2 = ptr::null_mut();
    let status = unsafe { sis_calibration_from_toml(model, text, SisMethod::SsisMuSigma, 3.0, &mut cal2) };
    assert_eq!(status, SisStatus::Ok, "{}", last_error());
    let mut res2 = SisResult::default();
    unsafe {
        sis_estimate(model, cal2, SisMethod::SsisMuSigma, 3.0, 4000, SisRng::Pseudo, 11, false, &mut res2);
    }
    assert_eq!(res.estimate.to_bits(), res2.estimate.to_bits());

    unsafe {
        sis_string_free(text);
        sis_calibration_free(cal);
        sis_calibration_free(cal2);
        sis_model_free(model);
    }
}

#[test]
fn plain_monte_carlo_needs_no_calibration() {
    let model = linear(0.5);
    let mut res = SisResult::default();
    let status = unsafe {
        sis_estimate(model, ptr::null(), SisMethod::Mc, 0.0, 2000, SisRng::Sobol, 1, false, &mut res)
    };
    assert_eq!(status, SisStatus::Ok, "{}", last_error());
    assert!((res.estimate - 0.5).abs() < 0.05);
    unsafe { sis_model_free(model) };
}

#[test]
fn errors_map_to_status_codes() {
    let mut m = ptr::null_mut();
    assert_eq!(
        unsafe { sis_model_linear_new(1.5, &mut m) },
        SisStatus::InvalidArgument
    );
    assert!(m.is_null());
    assert!(last_error().contains("alpha"), "{}", last_error());

    assert_eq!(
        unsafe { sis_model_linear_new(0.5, ptr::null_mut()) },
        SisStatus::NullPointer
    );

    let model = linear(0.5);
    let mut res = SisResult::default();
    let status = unsafe {
        sis_estimate(model, ptr::null(), SisMethod::SisStar, 1.0, 100, SisRng::Pseudo, 1, false, &mut res)
    };
    assert_eq!(status, SisStatus::InvalidArgument);

    let mut cal = ptr::null_mut();
    assert_eq!(
        unsafe { sis_calibrate(model, SisMethod::Mc, 1.0, 100, 1, &mut cal) },
        SisStatus::InvalidArgument
    );
    assert_eq!(
        unsafe { sis_calibrate(model, SisMethod::SisMu, 1.0, 0, 1, &mut cal) },
        SisStatus::InvalidArgument
    );
    assert_eq!(
        unsafe { sis_calibrate(model, SisMethod::GlIs, 1.0, 100, 1, &mut cal) },
        SisStatus::InvalidArgument
    );

    let bad = CString::new("kind = \"nope\"").unwrap();
    let mut m2 = ptr::null_mut();
    assert_eq!(unsafe { sis_model_from_toml(bad.as_ptr(), &mut m2) }, SisStatus::Parse);

    let mut q = 0.0;
    assert_eq!(
        unsafe { sis_std_normal_quantile(1.0, &mut q) },
        SisStatus::InvalidArgument
    );
    unsafe { sis_model_free(model) };
}

#[test]
fn model_toml_round_trip() {
    let mut m = ptr::null_mut();
    assert_eq!(
        unsafe { sis_model_tcopula_new(20, 3, 5, 8.0, false, &mut m) },
        SisStatus::Ok,
        "{}",
        last_error()
    );
    let mut text = ptr::null_mut();
    assert_eq!(unsafe { sis_model_to_toml(m, &mut text) }, SisStatus::Ok);
    let s = unsafe { CStr::from_ptr(text) }.to_str().unwrap().to_owned();
    assert!(s.contains("t-copula"), "{s}");

    let mut m2 = ptr::null_mut();
    assert_eq!(unsafe { sis_model_from_toml(text, &mut m2) }, SisStatus::Ok);

    // A fit made for one model is rejected by another.
    let mut cal = ptr::null_mut();
    let status = unsafe { sis_calibrate(m, SisMethod::CmcSsis, 10.0, 400, 3, &mut cal) };
    assert_eq!(status, SisStatus::Ok, "{}", last_error());
    let mut fit = ptr::null_mut();
    assert_eq!(unsafe { sis_calibration_to_toml(m, cal, &mut fit) }, SisStatus::Ok);
    let other = linear(0.5);
    let mut cal2 = ptr::null_mut();
    assert_ne!(
        unsafe { sis_calibration_from_toml(other, fit, SisMethod::CmcSsis, 10.0, &mut cal2) },
        SisStatus::Ok
    );
    assert!(cal2.is_null());

    unsafe {
        sis_string_free(text);
        sis_string_free(fit);
        sis_calibration_free(cal);
        sis_model_free(m);
        sis_model_free(m2);
        sis_model_free(other);
    }
}

#[test]
fn normal_helpers() {
    let mut q = 0.0;
    assert_eq!(unsafe { sis_std_normal_quantile(0.975, &mut q) }, SisStatus::Ok);
    assert!((q - 1.959_963_984_540_054).abs() < 1e-12);
    assert!((sis_std_normal_cdf(q) - 0.975).abs() < 1e-14);
}

#[test]
fn free_functions_accept_null() {
    unsafe {
        sis_model_free(ptr::null_mut());
        sis_calibration_free(ptr::null_mut());
        sis_string_free(ptr::null_mut());
    }
}

#[test]
fn header_compiles_as_c_and_cxx() {
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let header = include.join("sis.h");
    assert!(header.exists(), "build script did not write {}", header.display());
    let text = std::fs::read_to_string(&header).unwrap();
    for name in ["sis_calibrate", "sis_estimate", "SisStatus", "SIS_STATUS_PANIC"] {
        assert!(text.contains(name), "header lacks {name}");
    }

    for (compiler, lang) in [("cc", "c"), ("c++", "c++")] {
        let probe = Command::new(compiler).arg("--version").output();
        if probe.map(|o| !o.status.success()).unwrap_or(true) {
            eprintln!("{compiler} not available; skipping");
            continue;
        }
        let out = Command::new(compiler)
            .args(["-fsyntax-only", "-Wall", "-Werror", "-x", lang])
            .arg(&header)
            .output()
            .unwrap();
        assert!(
            out.status.success(),
            "{compiler} rejected the header:\n{}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
}
