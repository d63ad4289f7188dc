//! Smoke tests exercising the C ABI from Rust: every exported function, the
//! ownership contract, and the status codes.

use std::ffi::{c_char, c_int, CStr, CString};
use std::ptr;

use algforge_ffi::*;

const SO3: &str = r#"
[liealgebra]
name = "so3"
dim = 3
c = [[3, 1, 2, "1"], [1, 2, 3, "1"], [2, 3, 1, "1"]]
order = 2
"#;

const TANGENT_LINE: &str = r#"
[chart]
base = ["x"]
fiber = [{ name = "vx", weight = 1 }]

[algebroid]
name = "TR"

[algebroid.anchor_left]
Q.1.1 = "1"

[algebroid.anchor_right]
Q.1.1 = "1"
"#;

const CUBIC: &str = r#"
[liealgebra]
name = "line"
dim = 1
fiber = ["a"]

[lagrangian]
l = "1/2*a.d1^2"
form = "ep-position"

[curves]
initial = [0.0, 0.0, 0.0, 6.0]
"#;

fn take_string(p: *mut c_char) -> String {
    assert!(!p.is_null());
    let s = unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_owned();
    unsafe { alg_string_free(p) };
    s
}

fn parse(text: &str) -> *mut AlgModel {
    let c = CString::new(text).unwrap();
    let mut model: *mut AlgModel = ptr::null_mut();
    let mut err: *mut c_char = ptr::null_mut();
    let code = unsafe { alg_model_parse(c.as_ptr(), &mut model, &mut err) };
    assert_eq!(code, ALG_OK, "parse failed: {}", take_string(err));
    assert!(!model.is_null());
    model
}

#[test]
fn the_version_string_is_static_and_nonempty() {
    let v = unsafe { CStr::from_ptr(alg_version()) }.to_str().unwrap();
    assert!(!v.is_empty());
    assert!(v.chars().next().unwrap().is_ascii_digit());
}

#[test]
fn parse_and_free_round_trip() {
    let m = parse(SO3);
    unsafe { alg_model_free(m) };
    unsafe { alg_model_free(ptr::null_mut()) };
    unsafe { alg_string_free(ptr::null_mut()) };
}

#[test]
fn parse_failures_report_status_two_with_a_message() {
    let c = CString::new("not = [toml").unwrap();
    let mut model: *mut AlgModel = ptr::null_mut();
    let mut err: *mut c_char = ptr::null_mut();
    let code = unsafe { alg_model_parse(c.as_ptr(), &mut model, &mut err) };
    assert_eq!(code, ALG_PARSE_ERROR);
    assert!(model.is_null());
    assert!(take_string(err).contains("toml"));
}

#[test]
fn null_arguments_report_status_one() {
    let mut model: *mut AlgModel = ptr::null_mut();
    let code = unsafe { alg_model_parse(ptr::null(), &mut model, ptr::null_mut()) };
    assert_eq!(code, ALG_BAD_ARGUMENT);

    let m = parse(SO3);
    let mut pass: c_int = -1;
    let code = unsafe { alg_check(m, ptr::null(), &mut pass, ptr::null_mut(), ptr::null_mut()) };
    assert_eq!(code, ALG_BAD_ARGUMENT);
    let which = CString::new("definitely-not-a-check").unwrap();
    let mut err: *mut c_char = ptr::null_mut();
    let code = unsafe { alg_check(m, which.as_ptr(), &mut pass, ptr::null_mut(), &mut err) };
    assert_eq!(code, ALG_BAD_ARGUMENT);
    assert!(take_string(err).contains("unknown check"));
    unsafe { alg_model_free(m) };
}

#[test]
fn checks_pass_on_the_cyclic_algebra_and_fail_with_witnesses() {
    let m = parse(SO3);
    for which in ["skew", "al", "lie", "strong", "leibniz", "jacobi"] {
        let which_c = CString::new(which).unwrap();
        let mut pass: c_int = -1;
        let mut witness: *mut c_char = ptr::null_mut();
        let mut err: *mut c_char = ptr::null_mut();
        let code = unsafe { alg_check(m, which_c.as_ptr(), &mut pass, &mut witness, &mut err) };
        assert_eq!(code, ALG_OK, "{which}: {}", take_string(err));
        assert_eq!(pass, 1, "{which} passes");
        assert!(witness.is_null(), "{which} has no witness");
    }
    unsafe { alg_model_free(m) };

    // A one-entry bracket without its mirror image is not antisymmetric.
    let bad = r#"
[chart]
base = ["x"]
fiber = [{ name = "u", weight = 1 }, { name = "v", weight = 1 }]

[algebroid.bracket]
Q.1.1.2 = "1"
"#;
    let m = parse(bad);
    let which = CString::new("skew").unwrap();
    let mut pass: c_int = -1;
    let mut witness: *mut c_char = ptr::null_mut();
    let code = unsafe { alg_check(m, which.as_ptr(), &mut pass, &mut witness, ptr::null_mut()) };
    assert_eq!(code, ALG_OK);
    assert_eq!(pass, 0);
    assert!(take_string(witness).contains("antisymmetric"));
    unsafe { alg_model_free(m) };
}

#[test]
fn prolongation_text_parses_back_and_passes_lie() {
    let m = parse(TANGENT_LINE);
    let mut out: *mut c_char = ptr::null_mut();
    let mut err: *mut c_char = ptr::null_mut();
    let code = unsafe { alg_prolong2_toml(m, &mut out, &mut err) };
    assert_eq!(code, ALG_OK, "{}", take_string(err));
    unsafe { alg_model_free(m) };

    let text = take_string(out);
    assert!(text.contains("[ha2]"));
    let m2 = parse(&text);
    let which = CString::new("lie").unwrap();
    let mut pass: c_int = -1;
    let code = unsafe {
        alg_check(
            m2,
            which.as_ptr(),
            &mut pass,
            ptr::null_mut(),
            ptr::null_mut(),
        )
    };
    assert_eq!(code, ALG_OK);
    assert_eq!(pass, 1);
    unsafe { alg_model_free(m2) };
}

#[test]
fn prolonging_a_model_without_an_algebroid_reports_the_missing_section() {
    let m = parse(SO3);
    let mut out: *mut c_char = ptr::null_mut();
    let mut err: *mut c_char = ptr::null_mut();
    let code = unsafe { alg_prolong2_toml(m, &mut out, &mut err) };
    assert_eq!(code, ALG_PARSE_ERROR);
    assert!(take_string(err).contains("algebroid"));
    unsafe { alg_model_free(m) };
}

#[test]
fn el_text_renders_the_equations() {
    let m = parse(CUBIC);
    let mut out: *mut c_char = ptr::null_mut();
    let mut err: *mut c_char = ptr::null_mut();
    let code = unsafe { alg_el_text(m, ptr::null(), &mut out, &mut err) };
    assert_eq!(code, ALG_OK, "{}", take_string(err));
    assert_eq!(take_string(out), "a.d4 = 0\n");

    let form = CString::new("nonsense").unwrap();
    let code = unsafe { alg_el_text(m, form.as_ptr(), &mut out, ptr::null_mut()) };
    assert_eq!(code, ALG_BAD_ARGUMENT);
    unsafe { alg_model_free(m) };
}

#[test]
fn integration_reproduces_the_cubic() {
    let m = parse(CUBIC);
    let mut csv: *mut c_char = ptr::null_mut();
    let mut max_residual = f64::NAN;
    let mut err: *mut c_char = ptr::null_mut();
    let code = unsafe {
        alg_integrate_csv(
            m,
            ptr::null(),
            1e-3,
            1.0,
            &mut csv,
            &mut max_residual,
            &mut err,
        )
    };
    assert_eq!(code, ALG_OK, "{}", take_string(err));
    unsafe { alg_model_free(m) };

    let csv = take_string(csv);
    assert!(csv.starts_with("t,a,a.d1,a.d2,a.d3,residual1"));
    let last = csv.lines().last().unwrap();
    let a: f64 = last.split(',').nth(1).unwrap().parse().unwrap();
    assert!((a - 1.0).abs() <= 1e-8, "a(1) = {a}");
    assert!(max_residual.is_finite() && max_residual <= 1e-6);
}

#[test]
fn integration_without_initial_data_is_a_parse_level_failure() {
    let text = CUBIC.replace("initial = [0.0, 0.0, 0.0, 6.0]", "");
    let m = parse(&text);
    let mut csv: *mut c_char = ptr::null_mut();
    let mut err: *mut c_char = ptr::null_mut();
    let code = unsafe {
        alg_integrate_csv(
            m,
            ptr::null(),
            1e-3,
            1.0,
            &mut csv,
            ptr::null_mut(),
            &mut err,
        )
    };
    assert_eq!(code, ALG_PARSE_ERROR);
    assert!(take_string(err).contains("initial"));
    unsafe { alg_model_free(m) };
}

#[test]
fn kappa_eval_matches_the_hand_computed_point() {
    let m = parse(SO3);
    let ybar = CString::new("1,0,0;0,1,0").unwrap();
    let x = CString::new("0,0,1;1,0,0;0,0,0").unwrap();
    let mut out: *mut c_char = ptr::null_mut();
    let mut err: *mut c_char = ptr::null_mut();
    let code = unsafe { alg_kappa_g_eval(m, 0, ybar.as_ptr(), x.as_ptr(), &mut out, &mut err) };
    assert_eq!(code, ALG_OK, "{}", take_string(err));
    assert_eq!(take_string(out), "ydot1 = (1, -1, 0)\nydot2 = (1, 0, 0)\n");

    // Wrong tuple shape: a precondition failure, not a crash.
    let short = CString::new("1,0").unwrap();
    let code =
        unsafe { alg_kappa_g_eval(m, 0, short.as_ptr(), x.as_ptr(), &mut out, ptr::null_mut()) };
    assert_eq!(code, ALG_PRECONDITION);
    let code =
        unsafe { alg_kappa_g_eval(m, -1, ybar.as_ptr(), x.as_ptr(), &mut out, ptr::null_mut()) };
    assert_eq!(code, ALG_BAD_ARGUMENT);
    unsafe { alg_model_free(m) };
}
