//! C ABI for the algforge workbench.
//!
//! Every function is `extern "C"`, panic-free at the boundary, and returns a
//! status code:
//!
//! * `0` — success
//! * `1` — null pointer, invalid UTF-8, or an unrecognized enum string
//! * `2` — the model text failed to parse or violated the schema
//! * `3` — a structural precondition failed (e.g. not almost-Lie)
//! * `4` — a numeric failure (singular system, non-finite state)
//! * `5` — internal error
//!
//! Models are opaque handles created by [`alg_model_parse`] and released by
//! [`alg_model_free`].  Strings returned through out-parameters are owned by
//! the caller and must be released with [`alg_string_free`]; the pointer
//! returned by [`alg_version`] is static and must not be freed.  A check that
//! runs to completion but finds a counterexample is not an error: the status
//! is `0`, `pass_out` is `0`, and the witness string explains the failure.
//!
//! The corresponding C declarations live in `include/algforge.h`.

use std::ffi::{c_char, c_double, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use algforge_core::mechanics::MechanicsError;
use algforge_core::model::{
    build_el, ha2_model_toml, integrate_model, kappa_eval_lines, parse_model, run_check,
    run_kappa_eval, run_prolong, ElForm, ModelError, ModelFile, DEFAULT_SEED,
};

pub const ALG_OK: c_int = 0;
pub const ALG_BAD_ARGUMENT: c_int = 1;
pub const ALG_PARSE_ERROR: c_int = 2;
pub const ALG_PRECONDITION: c_int = 3;
pub const ALG_NUMERIC: c_int = 4;
pub const ALG_INTERNAL: c_int = 5;

/// Opaque model handle.
pub struct AlgModel {
    file: ModelFile,
}

fn status_of(e: &ModelError) -> c_int {
    match e {
        ModelError::Io(_)
        | ModelError::Parse(_)
        | ModelError::Schema(_)
        | ModelError::MissingSection(_)
        | ModelError::Expr(_) => ALG_PARSE_ERROR,
        ModelError::Mechanics(MechanicsError::SingularLeadingMatrix(_))
        | ModelError::Mechanics(MechanicsError::NonFiniteState(_)) => ALG_NUMERIC,
        _ => ALG_PRECONDITION,
    }
}

/// Write `msg` through `err_out` when it is non-null.
fn set_err(err_out: *mut *mut c_char, msg: &str) {
    if err_out.is_null() {
        return;
    }
    let safe = msg.replace('\0', " ");
    let c = CString::new(safe).unwrap_or_else(|_| CString::new("error").unwrap());
    unsafe { *err_out = c.into_raw() };
}

fn set_str(out: *mut *mut c_char, s: &str) -> c_int {
    if out.is_null() {
        return ALG_BAD_ARGUMENT;
    }
    let safe = s.replace('\0', " ");
    match CString::new(safe) {
        Ok(c) => {
            unsafe { *out = c.into_raw() };
            ALG_OK
        }
        Err(_) => ALG_INTERNAL,
    }
}

/// Read a required UTF-8 argument; `None` means the caller gets status 1.
unsafe fn required<'a>(p: *const c_char) -> Option<&'a str> {
    if p.is_null() {
        return None;
    }
    CStr::from_ptr(p).to_str().ok()
}

fn guarded(err_out: *mut *mut c_char, body: impl FnOnce() -> c_int) -> c_int {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(code) => code,
        Err(_) => {
            set_err(err_out, "internal panic");
            ALG_INTERNAL
        }
    }
}

fn model_of<'a>(m: *const AlgModel) -> Option<&'a ModelFile> {
    if m.is_null() {
        None
    } else {
        Some(unsafe { &(*m).file })
    }
}

/// Version string of the library.  Static storage: do not free.
#[no_mangle]
pub extern "C" fn alg_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr() as *const c_char
}

/// Parse a model from TOML text into a fresh handle.
#[no_mangle]
pub unsafe extern "C" fn alg_model_parse(
    text: *const c_char,
    out: *mut *mut AlgModel,
    err_out: *mut *mut c_char,
) -> c_int {
    guarded(err_out, || {
        let Some(text) = (unsafe { required(text) }) else {
            set_err(err_out, "text must be non-null UTF-8");
            return ALG_BAD_ARGUMENT;
        };
        if out.is_null() {
            set_err(err_out, "out must be non-null");
            return ALG_BAD_ARGUMENT;
        }
        match parse_model(text) {
            Ok(file) => {
                let handle = Box::new(AlgModel { file });
                unsafe { *out = Box::into_raw(handle) };
                ALG_OK
            }
            Err(e) => {
                set_err(err_out, &e.to_string());
                status_of(&e)
            }
        }
    })
}

/// Release a model handle.  Null is a no-op.
#[no_mangle]
pub unsafe extern "C" fn alg_model_free(m: *mut AlgModel) {
    if !m.is_null() {
        drop(unsafe { Box::from_raw(m) });
    }
}

/// Run one structure check (`"skew"`, `"al"`, `"lie"`, `"strong"`,
/// `"leibniz"`, or `"jacobi"`).  On status 0, `pass_out` is 1 or 0; when the
/// check fails, `witness_out` (if non-null) receives the counterexample.
/// Randomized probes use a fixed seed, so results are reproducible.
#[no_mangle]
pub unsafe extern "C" fn alg_check(
    m: *const AlgModel,
    which: *const c_char,
    pass_out: *mut c_int,
    witness_out: *mut *mut c_char,
    err_out: *mut *mut c_char,
) -> c_int {
    guarded(err_out, || {
        let (Some(mf), Some(which)) = (model_of(m), unsafe { required(which) }) else {
            set_err(err_out, "model and which must be non-null");
            return ALG_BAD_ARGUMENT;
        };
        if pass_out.is_null() {
            set_err(err_out, "pass_out must be non-null");
            return ALG_BAD_ARGUMENT;
        }
        let allowed = ["skew", "al", "lie", "strong", "leibniz", "jacobi"];
        if !allowed.contains(&which) {
            set_err(err_out, &format!("unknown check {which:?}"));
            return ALG_BAD_ARGUMENT;
        }
        match run_check(mf, which, DEFAULT_SEED) {
            Ok(report) => {
                unsafe { *pass_out = if report.pass { 1 } else { 0 } };
                if let Some(w) = &report.witness {
                    let code = set_str(witness_out, w);
                    if witness_out.is_null() {
                        // A missing witness sink is fine; the verdict stands.
                    } else if code != ALG_OK {
                        return code;
                    }
                } else if !witness_out.is_null() {
                    unsafe { *witness_out = std::ptr::null_mut() };
                }
                ALG_OK
            }
            Err(e) => {
                set_err(err_out, &e.to_string());
                status_of(&e)
            }
        }
    })
}

/// Prolong the model's order-1 structure and return the result as model TOML.
#[no_mangle]
pub unsafe extern "C" fn alg_prolong2_toml(
    m: *const AlgModel,
    out: *mut *mut c_char,
    err_out: *mut *mut c_char,
) -> c_int {
    guarded(err_out, || {
        let Some(mf) = model_of(m) else {
            set_err(err_out, "model must be non-null");
            return ALG_BAD_ARGUMENT;
        };
        match run_prolong(mf) {
            Ok(ha) => set_str(out, &ha2_model_toml(&ha)),
            Err(e) => {
                set_err(err_out, &e.to_string());
                status_of(&e)
            }
        }
    })
}

fn parse_form(form: *const c_char, err_out: *mut *mut c_char) -> Result<Option<ElForm>, c_int> {
    if form.is_null() {
        return Ok(None);
    }
    let Some(text) = (unsafe { required(form) }) else {
        set_err(err_out, "form must be UTF-8");
        return Err(ALG_BAD_ARGUMENT);
    };
    match ElForm::parse(text) {
        Ok(f) => Ok(Some(f)),
        Err(_) => {
            set_err(err_out, &format!("unknown form {text:?}"));
            Err(ALG_BAD_ARGUMENT)
        }
    }
}

/// Render the model's equations of motion as text, one `<residual> = 0` line
/// per equation followed by `constraint: <poly> = 0` lines.  `form` may be
/// null to use the form recorded in the model.
#[no_mangle]
pub unsafe extern "C" fn alg_el_text(
    m: *const AlgModel,
    form: *const c_char,
    out: *mut *mut c_char,
    err_out: *mut *mut c_char,
) -> c_int {
    guarded(err_out, || {
        let Some(mf) = model_of(m) else {
            set_err(err_out, "model must be non-null");
            return ALG_BAD_ARGUMENT;
        };
        let form = match parse_form(form, err_out) {
            Ok(f) => f,
            Err(code) => return code,
        };
        match build_el(mf, form) {
            Ok((sys, _)) => {
                let mut text = String::new();
                for r in &sys.residuals {
                    text.push_str(&format!("{} = 0\n", r.to_display()));
                }
                for c in &sys.admissibility {
                    text.push_str(&format!("constraint: {} = 0\n", c.to_display()));
                }
                set_str(out, &text)
            }
            Err(e) => {
                set_err(err_out, &e.to_string());
                status_of(&e)
            }
        }
    })
}

/// Integrate the model's equations from its recorded initial data and return
/// the trajectory table as CSV text.  `max_residual_out` (if non-null)
/// receives the largest finite-difference audit residual.
#[no_mangle]
pub unsafe extern "C" fn alg_integrate_csv(
    m: *const AlgModel,
    form: *const c_char,
    h: c_double,
    t_end: c_double,
    csv_out: *mut *mut c_char,
    max_residual_out: *mut c_double,
    err_out: *mut *mut c_char,
) -> c_int {
    guarded(err_out, || {
        let Some(mf) = model_of(m) else {
            set_err(err_out, "model must be non-null");
            return ALG_BAD_ARGUMENT;
        };
        let form = match parse_form(form, err_out) {
            Ok(f) => f,
            Err(code) => return code,
        };
        match integrate_model(mf, form, h, t_end) {
            Ok((csv, report)) => {
                if !max_residual_out.is_null() {
                    let max = report
                        .details
                        .iter()
                        .find(|(k, _)| k == "max_residual")
                        .and_then(|(_, v)| v.parse::<f64>().ok())
                        .unwrap_or(f64::NAN);
                    unsafe { *max_residual_out = max };
                }
                set_str(csv_out, &csv)
            }
            Err(e) => {
                set_err(err_out, &e.to_string());
                status_of(&e)
            }
        }
    })
}

/// Evaluate the model Lie algebra's structure comorphism at a point.  `ybar`
/// and `x` are semicolon-separated tuples of comma-separated rationals, e.g.
/// `"1,0,0;0,1,0"`.  `k` is the order; pass 0 to use the model's order.  The
/// output is one `ydot<l> = (...)` line per level.
#[no_mangle]
pub unsafe extern "C" fn alg_kappa_g_eval(
    m: *const AlgModel,
    k: c_int,
    ybar: *const c_char,
    x: *const c_char,
    out: *mut *mut c_char,
    err_out: *mut *mut c_char,
) -> c_int {
    guarded(err_out, || {
        let (Some(mf), Some(ybar), Some(x)) = (model_of(m), unsafe { required(ybar) }, unsafe {
            required(x)
        }) else {
            set_err(err_out, "model, ybar, and x must be non-null");
            return ALG_BAD_ARGUMENT;
        };
        if k < 0 {
            set_err(err_out, "k must be non-negative");
            return ALG_BAD_ARGUMENT;
        }
        let k = if k == 0 { None } else { Some(k as usize) };
        match run_kappa_eval(mf, k, ybar, x) {
            Ok(levels) => set_str(out, &kappa_eval_lines(&levels)),
            Err(e) => {
                set_err(err_out, &e.to_string());
                status_of(&e)
            }
        }
    })
}

/// Release a string returned by this library.  Null is a no-op.
#[no_mangle]
pub unsafe extern "C" fn alg_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(unsafe { CString::from_raw(s) });
    }
}
