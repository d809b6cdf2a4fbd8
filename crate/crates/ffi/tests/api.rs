use std::ffi::{CStr, CString};
use std::ptr;

use semilinear_bsm_ffi::*;

fn last_error() -> String {
    let p = sbsm_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn reference_solution_round_trip() {
    let name = CString::new("quadratic_c3_zero").unwrap();
    let mut s = ptr::null_mut();
    unsafe {
        assert_eq!(sbsm_solution_reference(name.as_ptr(), &mut s), SBSM_OK);
        let (mut h, mut r, mut u, mut gap) = (0.0, 0.0, 0.0, 1.0);
        assert_eq!(sbsm_solution_barrier(s, 0.3, &mut h), SBSM_OK);
        assert_eq!(sbsm_solution_rebate(s, 0.3, &mut r), SBSM_OK);
        assert_eq!(sbsm_solution_eval_u(s, h, 0.3, &mut u), SBSM_OK);
        assert!((u - r).abs() < 1e-12);
        assert_eq!(sbsm_solution_boundary_gap(s, 0.3, &mut gap), SBSM_OK);
        assert!(gap < 1e-12);
        let mut res = 1.0;
        assert_eq!(
            sbsm_solution_pde_residual(s, 1.5 * h, 0.3, 1e-4, &mut res),
            SBSM_OK
        );
        assert!(res < 1e-6);
        let mut err = 1.0;
        assert_eq!(
            sbsm_solution_compare(s, 50, 50, 2.0, 1.0, &mut err),
            SBSM_OK
        );
        assert!(err < 1e-3);
        sbsm_solution_free(s);
    }
}

#[test]
fn error_codes() {
    let bad = CString::new("cubic").unwrap();
    let mut s = ptr::null_mut();
    unsafe {
        assert_eq!(
            sbsm_solution_reference(bad.as_ptr(), &mut s),
            SBSM_ERR_INVALID_ARGUMENT
        );
        assert!(last_error().contains("cubic"));
        assert_eq!(sbsm_solution_reference(ptr::null(), &mut s), SBSM_ERR_NULL);
        assert_eq!(
            sbsm_solution_quadratic(0.4, 0.05, 1.0, 1.0, 0.0, 0.0, -1.0, true, &mut s),
            SBSM_ERR_INVALID_ARGUMENT
        );
        let mut v = 0.0;
        assert_eq!(
            sbsm_solution_eval_u(ptr::null(), 1.0, 0.0, &mut v),
            SBSM_ERR_NULL
        );
        let name = CString::new("quadratic_c3_zero").unwrap();
        assert_eq!(sbsm_solution_reference(name.as_ptr(), &mut s), SBSM_OK);
        assert_eq!(
            sbsm_solution_compare(s, 4, 4, 2.0, 1.0, &mut v),
            SBSM_ERR_INVALID_ARGUMENT
        );
        assert_eq!(sbsm_solution_eval_u(s, -1.0, 0.0, &mut v), SBSM_ERR_DOMAIN);
        sbsm_solution_free(s);
        sbsm_solution_free(ptr::null_mut());
    }
}

#[test]
fn log_constructors() {
    let mut s = ptr::null_mut();
    unsafe {
        assert_eq!(
            sbsm_solution_log(0.4, 0.05, 0.5, 1.5, 0.7, 0.3, 0.0, 0.2, 0.3, 1.1, 0.1, true, &mut s),
            SBSM_OK
        );
        let mut gap = 1.0;
        assert_eq!(sbsm_solution_boundary_gap(s, 0.5, &mut gap), SBSM_OK);
        assert!(gap < 1e-12);
        sbsm_solution_free(s);
    }
}

#[test]
fn expressions() {
    let text = CString::new("(* x (exp u))").unwrap();
    let u = CString::new("u").unwrap();
    let x = CString::new("x").unwrap();
    let mut e = ptr::null_mut();
    let mut d = ptr::null_mut();
    unsafe {
        assert_eq!(sbsm_expr_parse(text.as_ptr(), &mut e), SBSM_OK);
        assert_eq!(sbsm_expr_differentiate(e, u.as_ptr(), &mut d), SBSM_OK);
        let names = [x.as_ptr(), u.as_ptr()];
        let values = [2.0, 0.5];
        let mut v = 0.0;
        assert_eq!(
            sbsm_expr_evaluate(d, names.as_ptr(), values.as_ptr(), 2, &mut v),
            SBSM_OK
        );
        assert!((v - 2.0 * 0.5f64.exp()).abs() < 1e-14);
        assert_eq!(
            sbsm_expr_evaluate(d, ptr::null(), ptr::null(), 0, &mut v),
            SBSM_ERR_DOMAIN
        );

        let mut needed = 0usize;
        assert_eq!(
            sbsm_expr_to_string(e, ptr::null_mut(), 0, &mut needed),
            SBSM_ERR_BUFFER_TOO_SMALL
        );
        let mut buf = vec![0 as std::ffi::c_char; needed];
        assert_eq!(
            sbsm_expr_to_string(e, buf.as_mut_ptr(), needed, ptr::null_mut()),
            SBSM_OK
        );
        let printed = CStr::from_ptr(buf.as_ptr()).to_str().unwrap().to_owned();
        let again = CString::new(printed).unwrap();
        let mut e2 = ptr::null_mut();
        assert_eq!(sbsm_expr_parse(again.as_ptr(), &mut e2), SBSM_OK);

        let garbage = CString::new("(+ x").unwrap();
        let mut g = ptr::null_mut();
        assert_eq!(
            sbsm_expr_parse(garbage.as_ptr(), &mut g),
            SBSM_ERR_INVALID_ARGUMENT
        );
        for h in [e, d, e2] {
            sbsm_expr_free(h);
        }
    }
}

#[test]
fn verification_entry_points() {
    let mut failed = 99u32;
    unsafe {
        assert_eq!(
            sbsm_verify_symmetries(
                ptr::null(),
                f64::NAN,
                f64::NAN,
                f64::NAN,
                f64::NAN,
                42,
                &mut failed
            ),
            SBSM_OK
        );
        assert_eq!(failed, 0);
        let quad = CString::new("quadratic").unwrap();
        assert_eq!(
            sbsm_verify_symmetries(
                quad.as_ptr(),
                2.0,
                f64::NAN,
                f64::NAN,
                f64::NAN,
                1,
                &mut failed
            ),
            SBSM_OK
        );
        assert_eq!(failed, 0);
        let bad = CString::new("cubic").unwrap();
        assert_eq!(
            sbsm_verify_symmetries(
                bad.as_ptr(),
                f64::NAN,
                f64::NAN,
                f64::NAN,
                f64::NAN,
                1,
                &mut failed
            ),
            SBSM_ERR_INVALID_ARGUMENT
        );
        assert_eq!(sbsm_verify_solutions(42, &mut failed), SBSM_OK);
        assert_eq!(failed, 0);
    }
}

#[test]
fn version_string() {
    let v = unsafe { CStr::from_ptr(sbsm_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_is_valid_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/semilinear_bsm.h");
    let text = std::fs::read_to_string(header).unwrap();
    for f in [
        "sbsm_solution_reference",
        "sbsm_expr_parse",
        "sbsm_verify_symmetries",
        "SBSM_ERR_SOLVER",
    ] {
        assert!(text.contains(f), "{f} missing from header");
    }
    let Ok(status) = std::process::Command::new("cc")
        .args(["-fsyntax-only", "-x", "c", header])
        .status()
    else {
        eprintln!("cc not found; skipping compile check");
        return;
    };
    assert!(status.success());
}
