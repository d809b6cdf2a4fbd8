//! C interface. Objects cross the boundary as opaque handles owned by the
//! caller and released with the matching `_free` function. Every fallible
//! call returns an `i32` status; on failure `sbsm_last_error` describes it.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use semilinear_bsm::cli::{solution_rows, symmetry_rows, CliError, Scenario};
use semilinear_bsm::expr::{differentiate, evaluate, Binding, Expr};
use semilinear_bsm::solutions::{
    reference_solution, ClosedFormSolution, LogBarrierSolution, QuadraticBarrierSolution,
    SolutionError, VariantKind,
};
use semilinear_bsm::solver::{
    solve_closed_form_barrier, FarField, Grid1D, SolverConfig, SolverError,
};

pub const SBSM_OK: i32 = 0;
pub const SBSM_ERR_NULL: i32 = 1;
pub const SBSM_ERR_INVALID_ARGUMENT: i32 = 2;
pub const SBSM_ERR_DOMAIN: i32 = 3;
pub const SBSM_ERR_SOLVER: i32 = 4;
pub const SBSM_ERR_BUFFER_TOO_SMALL: i32 = 5;
pub const SBSM_ERR_PANIC: i32 = 6;

/// Closed-form barrier solution.
pub struct SbsmSolution(ClosedFormSolution);

/// Symbolic expression.
pub struct SbsmExpr(Expr);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(i32, String);

impl From<SolutionError> for Failure {
    fn from(e: SolutionError) -> Self {
        let code = match e {
            SolutionError::InvalidParams(_) => SBSM_ERR_INVALID_ARGUMENT,
            _ => SBSM_ERR_DOMAIN,
        };
        Failure(code, e.to_string())
    }
}

impl From<SolverError> for Failure {
    fn from(e: SolverError) -> Self {
        let code = match e {
            SolverError::InvalidGrid(_) | SolverError::InvalidConfig(_) => {
                SBSM_ERR_INVALID_ARGUMENT
            }
            SolverError::Domain(_) => SBSM_ERR_DOMAIN,
            _ => SBSM_ERR_SOLVER,
        };
        Failure(code, e.to_string())
    }
}

impl From<CliError> for Failure {
    fn from(e: CliError) -> Self {
        let code = match e {
            CliError::Usage(_) => SBSM_ERR_INVALID_ARGUMENT,
            CliError::Solver(_) => SBSM_ERR_SOLVER,
            _ => SBSM_ERR_DOMAIN,
        };
        Failure(code, e.to_string())
    }
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> i32 {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SBSM_OK,
        Ok(Err(Failure(code, msg))) => {
            set_error(msg);
            code
        }
        Err(_) => {
            set_error("panic inside the library".into());
            SBSM_ERR_PANIC
        }
    }
}

fn null() -> Failure {
    Failure(SBSM_ERR_NULL, "null pointer argument".into())
}

unsafe fn str_arg<'a>(p: *const c_char) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null());
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(SBSM_ERR_INVALID_ARGUMENT, "string is not UTF-8".into()))
}

unsafe fn out_arg<'a, T>(p: *mut T) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(null)
}

unsafe fn handle<'a, T>(p: *const T) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(null)
}

fn variant(name: &str) -> Result<VariantKind, Failure> {
    VariantKind::from_name(name).ok_or_else(|| {
        Failure(
            SBSM_ERR_INVALID_ARGUMENT,
            format!("unknown variant '{name}'"),
        )
    })
}

fn finite(v: f64) -> Result<f64, Failure> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Failure(SBSM_ERR_DOMAIN, "result is not finite".into()))
    }
}

/// Copy `s` with a terminating NUL into `buf`; `needed` receives the full size.
unsafe fn write_string(
    s: &str,
    buf: *mut c_char,
    len: usize,
    needed: *mut usize,
) -> Result<(), Failure> {
    let bytes = s.as_bytes();
    if let Some(n) = needed.as_mut() {
        *n = bytes.len() + 1;
    }
    if buf.is_null() || len < bytes.len() + 1 {
        return Err(Failure(
            SBSM_ERR_BUFFER_TOO_SMALL,
            format!("need {} bytes", bytes.len() + 1),
        ));
    }
    ptr::copy_nonoverlapping(bytes.as_ptr(), buf.cast::<u8>(), bytes.len());
    *buf.add(bytes.len()) = 0;
    Ok(())
}

/// Message of the last failed call on this thread, or null. Valid until the next failing call.
#[no_mangle]
pub extern "C" fn sbsm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

#[no_mangle]
pub extern "C" fn sbsm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Reference parameter set of a variant (`quadratic_c3_nonzero`, `quadratic_c3_zero`,
/// `log_lambda_nonzero`, `log_lambda_zero`).
///
/// # Safety
/// `name` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sbsm_solution_reference(
    name: *const c_char,
    out: *mut *mut SbsmSolution,
) -> i32 {
    guard(|| {
        let kind = variant(str_arg(name)?)?;
        let out = out_arg(out)?;
        *out = Box::into_raw(Box::new(SbsmSolution(reference_solution(kind))));
        Ok(())
    })
}

/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sbsm_solution_quadratic(
    sigma: f64,
    r: f64,
    alpha: f64,
    beta: f64,
    lambda: f64,
    kappa: f64,
    a: f64,
    c3_zero: bool,
    out: *mut *mut SbsmSolution,
) -> i32 {
    guard(|| {
        let out = out_arg(out)?;
        let s = if c3_zero {
            QuadraticBarrierSolution::c3_zero(sigma, r, alpha, beta, a)?
        } else {
            QuadraticBarrierSolution::c3_nonzero(sigma, r, alpha, beta, lambda, kappa, a)?
        };
        *out = Box::into_raw(Box::new(SbsmSolution(s.into())));
        Ok(())
    })
}

/// `lambda_zero` selects the second log family, which takes `c` and ignores `lambda`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sbsm_solution_log(
    sigma: f64,
    r: f64,
    alpha: f64,
    beta: f64,
    gamma: f64,
    delta: f64,
    lambda: f64,
    mu: f64,
    kappa: f64,
    a: f64,
    c: f64,
    lambda_zero: bool,
    out: *mut *mut SbsmSolution,
) -> i32 {
    guard(|| {
        let out = out_arg(out)?;
        let s = if lambda_zero {
            LogBarrierSolution::lambda_zero(sigma, r, alpha, beta, gamma, delta, mu, kappa, a, c)?
        } else {
            LogBarrierSolution::lambda_nonzero(
                sigma, r, alpha, beta, gamma, delta, lambda, mu, kappa, a,
            )?
        };
        *out = Box::into_raw(Box::new(SbsmSolution(s.into())));
        Ok(())
    })
}

/// # Safety
/// `s` must come from a constructor above and not be freed already. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn sbsm_solution_free(s: *mut SbsmSolution) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// # Safety
/// `s` must be a live handle, `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sbsm_solution_eval_u(
    s: *const SbsmSolution,
    x: f64,
    t: f64,
    out: *mut f64,
) -> i32 {
    guard(|| {
        *out_arg(out)? = finite(handle(s)?.0.eval_u(x, t)?)?;
        Ok(())
    })
}

/// Barrier `H(t)`.
///
/// # Safety
/// `s` must be a live handle, `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sbsm_solution_barrier(
    s: *const SbsmSolution,
    t: f64,
    out: *mut f64,
) -> i32 {
    guard(|| {
        *out_arg(out)? = finite(handle(s)?.0.eval_h(t)?)?;
        Ok(())
    })
}

/// Rebate `R(t)`.
///
/// # Safety
/// `s` must be a live handle, `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sbsm_solution_rebate(
    s: *const SbsmSolution,
    t: f64,
    out: *mut f64,
) -> i32 {
    guard(|| {
        *out_arg(out)? = finite(handle(s)?.0.eval_r(t)?)?;
        Ok(())
    })
}

/// `|u(H(t), t) - R(t)|`.
///
/// # Safety
/// `s` must be a live handle, `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sbsm_solution_boundary_gap(
    s: *const SbsmSolution,
    t: f64,
    out: *mut f64,
) -> i32 {
    guard(|| {
        *out_arg(out)? = handle(s)?.0.boundary_consistency(t)?;
        Ok(())
    })
}

/// Central-difference residual of the equation, relative to its largest term.
///
/// # Safety
/// `s` must be a live handle, `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sbsm_solution_pde_residual(
    s: *const SbsmSolution,
    x: f64,
    t: f64,
    h: f64,
    out: *mut f64,
) -> i32 {
    guard(|| {
        if !(h > 0.0) {
            return Err(Failure(
                SBSM_ERR_INVALID_ARGUMENT,
                "step must be positive".into(),
            ));
        }
        *out_arg(out)? = handle(s)?.0.pde_residual(x, t, h)?.relative();
        Ok(())
    })
}

/// Solve the barrier problem seeded with the closed form on `z` in `[0, z_max]`,
/// `t` in `[0, terminal_time]`, and report the maximum error.
///
/// # Safety
/// `s` must be a live handle, `l_inf` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sbsm_solution_compare(
    s: *const SbsmSolution,
    n_space: u32,
    n_time: u32,
    z_max: f64,
    terminal_time: f64,
    l_inf: *mut f64,
) -> i32 {
    guard(|| {
        let s = handle(s)?;
        let out = out_arg(l_inf)?;
        let grid = Grid1D {
            n_space: n_space as usize,
            n_time: n_time as usize,
            y_min: 0.0,
            y_max: z_max,
            terminal_time,
            t0: 0.0,
        };
        let cfg = SolverConfig {
            far_field: FarField::Dirichlet,
            ..SolverConfig::default()
        };
        *out = solve_closed_form_barrier(&s.0, &grid, &cfg, 0)?.1.l_inf;
        Ok(())
    })
}

/// Parse the prefix form printed by `sbsm_expr_to_string`, e.g. `(+ x (* 2 u))`.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sbsm_expr_parse(text: *const c_char, out: *mut *mut SbsmExpr) -> i32 {
    guard(|| {
        let e: Expr = str_arg(text)?
            .parse()
            .map_err(|e: semilinear_bsm::expr::ExprError| {
                Failure(SBSM_ERR_INVALID_ARGUMENT, e.to_string())
            })?;
        *out_arg(out)? = Box::into_raw(Box::new(SbsmExpr(e)));
        Ok(())
    })
}

/// # Safety
/// `e` must come from this library and not be freed already. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn sbsm_expr_free(e: *mut SbsmExpr) {
    if !e.is_null() {
        drop(Box::from_raw(e));
    }
}

/// # Safety
/// `e` must be a live handle, `symbol` a NUL-terminated string, `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sbsm_expr_differentiate(
    e: *const SbsmExpr,
    symbol: *const c_char,
    out: *mut *mut SbsmExpr,
) -> i32 {
    guard(|| {
        let d = differentiate(&handle(e)?.0, str_arg(symbol)?)
            .map_err(|e| Failure(SBSM_ERR_INVALID_ARGUMENT, e.to_string()))?;
        *out_arg(out)? = Box::into_raw(Box::new(SbsmExpr(d)));
        Ok(())
    })
}

/// Evaluate with `names[i] = values[i]` for `i < n`.
///
/// # Safety
/// `names` and `values` must hold `n` entries; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn sbsm_expr_evaluate(
    e: *const SbsmExpr,
    names: *const *const c_char,
    values: *const f64,
    n: usize,
    out: *mut f64,
) -> i32 {
    guard(|| {
        let e = handle(e)?;
        let mut b = Binding::new();
        if n > 0 {
            if names.is_null() || values.is_null() {
                return Err(null());
            }
            let names = std::slice::from_raw_parts(names, n);
            let values = std::slice::from_raw_parts(values, n);
            for (name, v) in names.iter().zip(values) {
                b.set_number(str_arg(*name)?, *v);
            }
        }
        let v = evaluate(&e.0, &b, None).map_err(|e| Failure(SBSM_ERR_DOMAIN, e.to_string()))?;
        *out_arg(out)? = v;
        Ok(())
    })
}

/// Print into `buf`; with a short or null buffer returns `SBSM_ERR_BUFFER_TOO_SMALL`
/// and stores the required size (including the NUL) in `needed`.
///
/// # Safety
/// `buf` must hold `len` bytes; `needed` may be null.
#[no_mangle]
pub unsafe extern "C" fn sbsm_expr_to_string(
    e: *const SbsmExpr,
    buf: *mut c_char,
    len: usize,
    needed: *mut usize,
) -> i32 {
    guard(|| write_string(&handle(e)?.0.to_string(), buf, len, needed))
}

/// Run the symmetry checks for one case, or all five when `case_name` is null.
/// Parameters passed as NaN take the defaults. `failed` receives the number of
/// counted checks that failed.
///
/// # Safety
/// `case_name` is null or a NUL-terminated string; `failed` must be valid.
#[no_mangle]
pub unsafe extern "C" fn sbsm_verify_symmetries(
    case_name: *const c_char,
    alpha: f64,
    beta: f64,
    gamma: f64,
    delta: f64,
    seed: u64,
    failed: *mut u32,
) -> i32 {
    guard(|| {
        let opt = |v: f64| (!v.is_nan()).then_some(v);
        let all = case_name.is_null();
        let sc = Scenario {
            case: if all {
                None
            } else {
                Some(str_arg(case_name)?.to_string())
            },
            alpha: opt(alpha),
            beta: opt(beta),
            gamma: opt(gamma),
            delta: opt(delta),
            seed: Some(seed),
            ..Scenario::default()
        };
        let rows = symmetry_rows(&sc, all)?;
        *out_arg(failed)? = rows.iter().filter(|r| r.counted && !r.pass).count() as u32;
        Ok(())
    })
}

/// Boundary, residual and reduction sweeps over the four closed-form variants.
///
/// # Safety
/// `failed` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sbsm_verify_solutions(seed: u64, failed: *mut u32) -> i32 {
    guard(|| {
        let sc = Scenario {
            seed: Some(seed),
            ..Scenario::default()
        };
        let rows = solution_rows(&sc, true)?;
        *out_arg(failed)? = rows.iter().filter(|r| !r.pass).count() as u32;
        Ok(())
    })
}
