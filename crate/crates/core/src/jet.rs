//! Second prolongation over the 2-jet and the linearized symmetry condition.
//!
//! Jet coordinates are plain symbols (`u_x`, `u_xt`, ...). The symmetry
//! residual is built symbolically once per (generator, equation) pair and
//! then evaluated at random jet points after eliminating `u_t` and `u_xt`
//! through the equation and its x-derivative. Index convention: the first
//! independent variable is `x`, the second is `t`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::classification::SourceCase;
use crate::expr::{differentiate, evaluate, substitute, Binding, Expr, ExprError, SourceFunction};

pub mod sym {
    pub const X: &str = "x";
    pub const T: &str = "t";
    pub const U: &str = "u";
    pub const UX: &str = "u_x";
    pub const UT: &str = "u_t";
    pub const UXX: &str = "u_xx";
    pub const UXT: &str = "u_xt";
    pub const UTT: &str = "u_tt";
    pub const UXXX: &str = "u_xxx";
    pub const UXXT: &str = "u_xxt";
    pub const UXTT: &str = "u_xtt";
    pub const UTTT: &str = "u_ttt";

    pub const THIRD_ORDER: [&str; 4] = [UXXX, UXXT, UXTT, UTTT];
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum JetError {
    #[error("expression contains third-order jet symbol {0}")]
    UnsupportedJetOrder(String),
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error("invalid equation parameters: {0}")]
    InvalidPde(String),
    #[error("on-shell elimination left {0} in the residual")]
    Elimination(String),
    #[error("could not sample a regular jet point after {0} attempts")]
    Sampling(usize),
}

/// Infinitesimal generator `xi1 d/dx + xi2 d/dt + eta d/du`.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    pub label: String,
    pub xi1: Expr,
    pub xi2: Expr,
    pub eta: Expr,
}

impl VectorField {
    pub fn new(label: impl Into<String>, xi1: Expr, xi2: Expr, eta: Expr) -> Self {
        Self {
            label: label.into(),
            xi1,
            xi2,
            eta,
        }
    }

    pub fn scaled(&self, c: f64) -> VectorField {
        VectorField::new(
            format!("{c}*{}", self.label),
            Expr::float(c) * self.xi1.clone(),
            Expr::float(c) * self.xi2.clone(),
            Expr::float(c) * self.eta.clone(),
        )
    }

    /// Linear combination `sum c_i X_i`.
    pub fn combination(label: impl Into<String>, parts: &[(f64, &VectorField)]) -> VectorField {
        let pick = |f: fn(&VectorField) -> &Expr| {
            Expr::sum(
                parts
                    .iter()
                    .map(|(c, v)| Expr::float(*c) * f(v).clone())
                    .collect(),
            )
        };
        VectorField::new(label, pick(|v| &v.xi1), pick(|v| &v.xi2), pick(|v| &v.eta))
    }

    /// Coefficients may only involve `x`, `t`, `u`.
    pub fn is_point_field(&self) -> bool {
        [&self.xi1, &self.xi2, &self.eta].iter().all(|e| {
            e.free_symbols()
                .iter()
                .all(|s| s == sym::X || s == sym::T || s == sym::U)
        })
    }

    pub fn eval_components(&self, x: f64, t: f64, u: f64) -> Result<[f64; 3], ExprError> {
        let b = Binding::new()
            .with_number(sym::X, x)
            .with_number(sym::T, t)
            .with_number(sym::U, u);
        Ok([
            evaluate(&self.xi1, &b, None)?,
            evaluate(&self.xi2, &b, None)?,
            evaluate(&self.eta, &b, None)?,
        ])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PdeForm {
    /// `u_t + s^2 x^2 u_xx / 2 + r x u_x + f(u) = 0`
    Bsm,
    /// `u_t + u_xx + exp(-x/2) f(exp(x/2) u) - u/4 = 0`
    Heat,
}

/// Member of the equation class selected by form, parameters and source.
#[derive(Debug, Clone, PartialEq)]
pub struct EvolutionPde {
    pub sigma: f64,
    pub r: f64,
    pub source: SourceCase,
    pub form: PdeForm,
}

/// Stand-in for an arbitrary source when a numeric value is needed:
/// `f(z) = z^3 + sin z`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ArbitraryWitness;

impl SourceFunction for ArbitraryWitness {
    fn value(&self, z: f64) -> f64 {
        z * z * z + z.sin()
    }
    fn derivative(&self, z: f64) -> f64 {
        3.0 * z * z + z.cos()
    }
}

static ARBITRARY_WITNESS: ArbitraryWitness = ArbitraryWitness;

impl EvolutionPde {
    pub fn bsm(sigma: f64, r: f64, source: SourceCase) -> Result<Self, JetError> {
        if !(sigma > 0.0 && sigma.is_finite()) || !r.is_finite() {
            return Err(JetError::InvalidPde(format!(
                "sigma must be positive and finite (sigma={sigma}, r={r})"
            )));
        }
        Ok(Self {
            sigma,
            r,
            source,
            form: PdeForm::Bsm,
        })
    }

    pub fn heat(source: SourceCase) -> Self {
        Self {
            sigma: 2f64.sqrt(),
            r: 0.0,
            source,
            form: PdeForm::Heat,
        }
    }

    /// Zeroth-order part: `f(u)` or `exp(-x/2) f(exp(x/2) u) - u/4`.
    pub fn source_expr(&self) -> Expr {
        self.source.form_source(self.form)
    }

    /// `u_t` expressed through x-derivatives on solutions.
    pub fn ut_on_shell(&self) -> Expr {
        let x = Expr::sym(sym::X);
        let spatial = match self.form {
            PdeForm::Bsm => Expr::sum(vec![
                Expr::float(0.5 * self.sigma * self.sigma)
                    * x.clone().powi(2)
                    * Expr::sym(sym::UXX),
                Expr::float(self.r) * x * Expr::sym(sym::UX),
            ]),
            PdeForm::Heat => Expr::sym(sym::UXX),
        };
        -(spatial + self.source_expr())
    }

    /// Left-hand side of the equation as a jet expression.
    pub fn lhs(&self) -> Expr {
        Expr::sym(sym::UT) - self.ut_on_shell()
    }

    pub fn source_fn(&self) -> Option<&dyn SourceFunction> {
        match self.source {
            SourceCase::Arbitrary => Some(&ARBITRARY_WITNESS),
            _ => None,
        }
    }

    /// Points where the equation or its source degenerates.
    pub fn is_singular_at(&self, x: f64, u: f64) -> bool {
        if self.form == PdeForm::Bsm && x.abs() < 1e-6 {
            return true;
        }
        self.source.is_singular_at(self.form, x, u)
    }

    /// Value of the left-hand side at given derivative values.
    pub fn residual_from_derivatives(&self, x: f64, u: f64, u_t: f64, u_x: f64, u_xx: f64) -> f64 {
        let src = self.source.form_source_value(self.form, x, u);
        match self.form {
            PdeForm::Bsm => {
                u_t + 0.5 * self.sigma * self.sigma * x * x * u_xx + self.r * x * u_x + src
            }
            PdeForm::Heat => u_t + u_xx + src,
        }
    }
}

/// Free jet coordinates after on-shell elimination.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JetPoint {
    pub x: f64,
    pub t: f64,
    pub u: f64,
    pub u_x: f64,
    pub u_xx: f64,
    pub u_xxx: f64,
}

impl JetPoint {
    pub fn binding(&self) -> Binding {
        Binding::new()
            .with_number(sym::X, self.x)
            .with_number(sym::T, self.t)
            .with_number(sym::U, self.u)
            .with_number(sym::UX, self.u_x)
            .with_number(sym::UXX, self.u_xx)
            .with_number(sym::UXXX, self.u_xxx)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    X,
    T,
}

/// Total derivative `D_x` or `D_t` of an expression of order at most two.
pub fn total_derivative(e: &Expr, wrt: Direction) -> Result<Expr, JetError> {
    for s in sym::THIRD_ORDER {
        if e.depends_on(s) {
            return Err(JetError::UnsupportedJetOrder(s.to_string()));
        }
    }
    let chain: [(&str, &str); 7] = match wrt {
        Direction::X => [
            (sym::X, ""),
            (sym::U, sym::UX),
            (sym::UX, sym::UXX),
            (sym::UT, sym::UXT),
            (sym::UXX, sym::UXXX),
            (sym::UXT, sym::UXXT),
            (sym::UTT, sym::UXTT),
        ],
        Direction::T => [
            (sym::T, ""),
            (sym::U, sym::UT),
            (sym::UX, sym::UXT),
            (sym::UT, sym::UTT),
            (sym::UXX, sym::UXXT),
            (sym::UXT, sym::UXTT),
            (sym::UTT, sym::UTTT),
        ],
    };
    let mut terms = Vec::new();
    for (var, factor) in chain {
        if !e.depends_on(var) {
            continue;
        }
        let d = differentiate(e, var)?;
        terms.push(if factor.is_empty() {
            d
        } else {
            Expr::sym(factor) * d
        });
    }
    Ok(Expr::sum(terms))
}

/// Prolonged coefficients of a generator up to second order.
#[derive(Debug, Clone, PartialEq)]
pub struct Prolongation {
    pub eta1_x: Expr,
    pub eta1_t: Expr,
    pub eta2_xx: Expr,
    pub eta2_xt: Expr,
    pub eta2_tt: Expr,
}

pub fn prolong2(field: &VectorField) -> Result<Prolongation, JetError> {
    use Direction::{T, X};
    let ux = Expr::sym(sym::UX);
    let ut = Expr::sym(sym::UT);
    let dx_xi1 = total_derivative(&field.xi1, X)?;
    let dx_xi2 = total_derivative(&field.xi2, X)?;
    let dt_xi1 = total_derivative(&field.xi1, T)?;
    let dt_xi2 = total_derivative(&field.xi2, T)?;

    let first = |d_eta: Expr, d_xi1: &Expr, d_xi2: &Expr| {
        d_eta - d_xi1.clone() * ux.clone() - d_xi2.clone() * ut.clone()
    };
    let eta1_x = first(total_derivative(&field.eta, X)?, &dx_xi1, &dx_xi2);
    let eta1_t = first(total_derivative(&field.eta, T)?, &dt_xi1, &dt_xi2);

    // eta_{i1 i2} = D_{i2} eta_{i1} - (D_{i2} xi^j) u_{i1 j}
    let second =
        |eta1: &Expr, dir: Direction, u_i1x: &str, u_i1t: &str| -> Result<Expr, JetError> {
            let (d_xi1, d_xi2) = match dir {
                X => (&dx_xi1, &dx_xi2),
                T => (&dt_xi1, &dt_xi2),
            };
            Ok(total_derivative(eta1, dir)?
                - d_xi1.clone() * Expr::sym(u_i1x)
                - d_xi2.clone() * Expr::sym(u_i1t))
        };
    let eta2_xx = second(&eta1_x, X, sym::UXX, sym::UXT)?;
    let eta2_xt = second(&eta1_x, T, sym::UXX, sym::UXT)?;
    let eta2_tt = second(&eta1_t, T, sym::UXT, sym::UTT)?;
    Ok(Prolongation {
        eta1_x,
        eta1_t,
        eta2_xx,
        eta2_xt,
        eta2_tt,
    })
}

/// Replace `u_t` and `u_xt` by their values on solutions of `pde`.
pub fn on_shell(e: &Expr, pde: &EvolutionPde) -> Result<Expr, JetError> {
    let ut = pde.ut_on_shell();
    let uxt = total_derivative(&ut, Direction::X)?;
    let b = Binding::new()
        .with_expr(sym::UT, ut)
        .with_expr(sym::UXT, uxt);
    Ok(substitute(e, &b))
}

/// `X^(2)[Delta]` restricted to solutions, prepared for repeated evaluation.
#[derive(Debug, Clone)]
pub struct SymmetryCondition {
    pub field: VectorField,
    pub pde: EvolutionPde,
    expr: Expr,
    terms: Vec<Expr>,
}

impl SymmetryCondition {
    pub fn new(field: &VectorField, pde: &EvolutionPde) -> Result<Self, JetError> {
        let delta = pde.lhs();
        let pr = prolong2(field)?;
        // Delta is free of u_xt and u_tt, so eta2_xt and eta2_tt never enter.
        for s in [sym::UXT, sym::UTT] {
            if delta.depends_on(s) {
                return Err(JetError::Elimination(s.to_string()));
            }
        }
        let pieces = [
            (&field.xi1, sym::X),
            (&field.xi2, sym::T),
            (&field.eta, sym::U),
            (&pr.eta1_x, sym::UX),
            (&pr.eta1_t, sym::UT),
            (&pr.eta2_xx, sym::UXX),
        ];
        let mut raw = Vec::new();
        for (coef, var) in pieces {
            let d = differentiate(&delta, var)?;
            if !d.is_zero() && !coef.is_zero() {
                raw.push(coef.clone() * d);
            }
        }
        let expr = on_shell(&Expr::sum(raw), pde)?;
        for s in [sym::UT, sym::UXT, sym::UTT, sym::UXXT] {
            if expr.depends_on(s) {
                return Err(JetError::Elimination(s.to_string()));
            }
        }
        let terms = expr.expanded_terms(4096);
        Ok(Self {
            field: field.clone(),
            pde: pde.clone(),
            expr,
            terms,
        })
    }

    pub fn expr(&self) -> &Expr {
        &self.expr
    }

    /// Raw residual and the magnitude of its largest term at `p`.
    pub fn evaluate(&self, p: &JetPoint) -> Result<(f64, f64), JetError> {
        let b = p.binding();
        let src = self.pde.source_fn();
        let value = evaluate(&self.expr, &b, src)?;
        let mut scale = 0.0f64;
        for term in &self.terms {
            scale = scale.max(evaluate(term, &b, src)?.abs());
        }
        Ok((value, scale))
    }

    pub fn scaled_residual(&self, p: &JetPoint) -> Result<f64, JetError> {
        let (v, s) = self.evaluate(p)?;
        Ok(v.abs() / (1.0 + s))
    }
}

pub fn symmetry_residual(
    field: &VectorField,
    pde: &EvolutionPde,
    p: &JetPoint,
) -> Result<f64, JetError> {
    Ok(SymmetryCondition::new(field, pde)?.evaluate(p)?.0)
}

/// Sampling box over the six free jet coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JetBox {
    pub x: (f64, f64),
    pub t: (f64, f64),
    pub u: (f64, f64),
    pub derivatives: (f64, f64),
}

impl JetBox {
    pub fn heat_default() -> Self {
        Self {
            x: (-2.0, 2.0),
            t: (0.0, 1.0),
            u: (0.1, 3.0),
            derivatives: (-2.0, 2.0),
        }
    }

    pub fn bsm_default() -> Self {
        Self {
            x: (0.5, 3.0),
            ..Self::heat_default()
        }
    }

    pub fn for_form(form: PdeForm) -> Self {
        match form {
            PdeForm::Heat => Self::heat_default(),
            PdeForm::Bsm => Self::bsm_default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymmetryCheckConfig {
    pub n_points: usize,
    pub jet_box: JetBox,
    pub tol: f64,
    pub seed: u64,
}

impl SymmetryCheckConfig {
    pub fn for_form(form: PdeForm) -> Self {
        Self {
            n_points: 100,
            jet_box: JetBox::for_form(form),
            tol: 1e-9,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymmetryVerdict {
    pub pass: bool,
    /// Largest scale-normalised residual over the sample.
    pub max_residual: f64,
    pub worst_point: JetPoint,
}

/// Deterministic jet sample: point `i` draws from stream `i` of the seed.
pub fn sample_jet_points(
    pde: &EvolutionPde,
    cfg: &SymmetryCheckConfig,
) -> Result<Vec<JetPoint>, JetError> {
    let bx = cfg.jet_box;
    let mut out = Vec::with_capacity(cfg.n_points);
    for i in 0..cfg.n_points {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(i as u64);
        let mut tries = 0;
        loop {
            let mut draw = |(lo, hi): (f64, f64)| lo + (hi - lo) * rng.random::<f64>();
            let p = JetPoint {
                x: draw(bx.x),
                t: draw(bx.t),
                u: draw(bx.u),
                u_x: draw(bx.derivatives),
                u_xx: draw(bx.derivatives),
                u_xxx: draw(bx.derivatives),
            };
            if !pde.is_singular_at(p.x, p.u) {
                out.push(p);
                break;
            }
            tries += 1;
            if tries > 1000 {
                return Err(JetError::Sampling(tries));
            }
        }
    }
    Ok(out)
}

pub fn is_symmetry(
    field: &VectorField,
    pde: &EvolutionPde,
    cfg: &SymmetryCheckConfig,
) -> Result<SymmetryVerdict, JetError> {
    let cond = SymmetryCondition::new(field, pde)?;
    let points = sample_jet_points(pde, cfg)?;
    let mut worst = (0.0f64, points[0]);
    for p in &points {
        let r = cond.scaled_residual(p)?;
        if r > worst.0 || r.is_nan() {
            worst = (r, *p);
        }
    }
    Ok(SymmetryVerdict {
        pass: worst.0 <= cfg.tol,
        max_residual: worst.0,
        worst_point: worst.1,
    })
}

/// `eta(x,t,phi) - xi1 phi_x - xi2 phi_t` for the surface `u = phi(x,t)`.
pub fn surface_invariance_residual(
    field: &VectorField,
    phi: &Expr,
    x: f64,
    t: f64,
) -> Result<f64, JetError> {
    let b = Binding::new().with_number(sym::X, x).with_number(sym::T, t);
    let phi_v = evaluate(phi, &b, None)?;
    let phi_x = evaluate(&differentiate(phi, sym::X)?, &b, None)?;
    let phi_t = evaluate(&differentiate(phi, sym::T)?, &b, None)?;
    let [xi1, xi2, eta] = field.eval_components(x, t, phi_v)?;
    Ok(eta - xi1 * phi_x - xi2 * phi_t)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TerminalCheck {
    pub xi2_at_t_zero: bool,
    pub surface_ok: bool,
    pub max_xi2: f64,
    pub max_surface: f64,
}

impl TerminalCheck {
    pub fn passes(&self) -> bool {
        self.xi2_at_t_zero && self.surface_ok
    }
}

/// Invariance of `t = T` and `u = g(x)` there, checked on `x` in `[-2, 2]`.
pub fn terminal_invariance(
    field: &VectorField,
    terminal_time: f64,
    g: &Expr,
    tol: f64,
) -> Result<TerminalCheck, JetError> {
    let gx = differentiate(g, sym::X)?;
    let mut max_xi2 = 0.0f64;
    let mut max_surface = 0.0f64;
    for i in 0..=40 {
        let x = -2.0 + 0.1 * i as f64;
        let b = Binding::new()
            .with_number(sym::X, x)
            .with_number(sym::T, terminal_time);
        let gv = evaluate(g, &b, None)?;
        let gp = evaluate(&gx, &b, None)?;
        let [xi1, xi2, eta] = field.eval_components(x, terminal_time, gv)?;
        max_xi2 = max_xi2.max(xi2.abs());
        let scale = 1.0 + eta.abs().max((gp * xi1).abs());
        max_surface = max_surface.max((eta - gp * xi1).abs() / scale);
    }
    Ok(TerminalCheck {
        xi2_at_t_zero: max_xi2 <= tol,
        surface_ok: max_surface <= tol,
        max_xi2,
        max_surface,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BarrierCheck {
    pub curve_residual: f64,
    pub value_residual: f64,
}

/// Invariance of the curve `x = H(t)` and of `u = R(t)` on it, at time `t`.
pub fn barrier_invariance(
    field: &VectorField,
    curve: &dyn Fn(f64) -> f64,
    value: &dyn Fn(f64) -> f64,
    t: f64,
) -> Result<BarrierCheck, JetError> {
    let h = 1e-6 * (1.0 + t.abs());
    let dh = (curve(t + h) - curve(t - h)) / (2.0 * h);
    let dr = (value(t + h) - value(t - h)) / (2.0 * h);
    let [xi1, xi2, eta] = field.eval_components(curve(t), t, value(t))?;
    Ok(BarrierCheck {
        curve_residual: xi1 - xi2 * dh,
        value_residual: eta - xi2 * dr,
    })
}
