//! Source cases of the classification, their symmetry algebras in heat
//! coordinates and the subalgebras compatible with the terminal datum.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::equivalence::SourceTransport;
use crate::expr::Expr;
use crate::jet::{sym, PdeForm, VectorField};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClassificationError {
    #[error("invalid case parameter: {0}")]
    InvalidParameter(String),
    #[error("unknown case name {0:?}")]
    UnknownCase(String),
    #[error("no registry entry for {0}")]
    UnsupportedCase(String),
    #[error("solution blows up at t = {0}")]
    BlowUp(f64),
    #[error("degenerate parameters: {0}")]
    Degenerate(String),
}

/// The source `f` selected by the classification.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "case", rename_all = "lowercase")]
pub enum SourceCase {
    Arbitrary,
    /// `f(z) = -(gamma/beta)(alpha + beta z)(delta + log|alpha + beta z|)`
    Log {
        alpha: f64,
        beta: f64,
        gamma: f64,
        delta: f64,
    },
    /// `f(z) = alpha (z - beta)^2`
    Quadratic {
        alpha: f64,
        beta: f64,
    },
    /// `f(z) = beta z + alpha`
    Affine {
        alpha: f64,
        beta: f64,
    },
    /// `f(z) = alpha`
    Constant {
        alpha: f64,
    },
}

fn nonzero(v: f64, name: &str) -> Result<(), ClassificationError> {
    if v == 0.0 || !v.is_finite() {
        return Err(ClassificationError::InvalidParameter(format!(
            "{name} must be finite and nonzero, got {v}"
        )));
    }
    Ok(())
}

fn finite(v: f64, name: &str) -> Result<(), ClassificationError> {
    if !v.is_finite() {
        return Err(ClassificationError::InvalidParameter(format!(
            "{name} must be finite, got {v}"
        )));
    }
    Ok(())
}

impl SourceCase {
    pub fn log(alpha: f64, beta: f64, gamma: f64, delta: f64) -> Result<Self, ClassificationError> {
        finite(alpha, "alpha")?;
        finite(delta, "delta")?;
        nonzero(beta, "beta")?;
        nonzero(gamma, "gamma")?;
        Ok(SourceCase::Log {
            alpha,
            beta,
            gamma,
            delta,
        })
    }

    pub fn quadratic(alpha: f64, beta: f64) -> Result<Self, ClassificationError> {
        nonzero(alpha, "alpha")?;
        finite(beta, "beta")?;
        Ok(SourceCase::Quadratic { alpha, beta })
    }

    pub fn affine(alpha: f64, beta: f64) -> Result<Self, ClassificationError> {
        finite(alpha, "alpha")?;
        nonzero(beta, "beta")?;
        Ok(SourceCase::Affine { alpha, beta })
    }

    pub fn constant(alpha: f64) -> Result<Self, ClassificationError> {
        finite(alpha, "alpha")?;
        Ok(SourceCase::Constant { alpha })
    }

    /// Build from a case name and optional parameters; missing ones default to 0.
    pub fn from_name(
        name: &str,
        alpha: Option<f64>,
        beta: Option<f64>,
        gamma: Option<f64>,
        delta: Option<f64>,
    ) -> Result<Self, ClassificationError> {
        let need = |v: Option<f64>, n: &str| {
            v.ok_or_else(|| ClassificationError::InvalidParameter(format!("{name} case needs {n}")))
        };
        match name {
            "arbitrary" => Ok(SourceCase::Arbitrary),
            "log" => SourceCase::log(
                need(alpha, "alpha")?,
                need(beta, "beta")?,
                need(gamma, "gamma")?,
                delta.unwrap_or(0.0),
            ),
            "quadratic" => SourceCase::quadratic(need(alpha, "alpha")?, beta.unwrap_or(0.0)),
            "affine" => SourceCase::affine(alpha.unwrap_or(0.0), need(beta, "beta")?),
            "constant" => SourceCase::constant(need(alpha, "alpha")?),
            other => Err(ClassificationError::UnknownCase(other.to_string())),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SourceCase::Arbitrary => "arbitrary",
            SourceCase::Log { .. } => "log",
            SourceCase::Quadratic { .. } => "quadratic",
            SourceCase::Affine { .. } => "affine",
            SourceCase::Constant { .. } => "constant",
        }
    }

    pub fn is_linear(&self) -> bool {
        matches!(
            self,
            SourceCase::Affine { .. } | SourceCase::Constant { .. }
        )
    }

    /// `f(z)` as an expression; `ApplyF(z)` for the arbitrary case.
    pub fn f_expr(&self, z: Expr) -> Expr {
        match *self {
            SourceCase::Arbitrary => Expr::apply_f(z),
            SourceCase::Log {
                alpha,
                beta,
                gamma,
                delta,
            } => {
                let w = Expr::float(alpha) + Expr::float(beta) * z;
                Expr::float(-gamma / beta) * w.clone() * (Expr::float(delta) + Expr::log(w))
            }
            SourceCase::Quadratic { alpha, beta } => {
                Expr::float(alpha) * (z - Expr::float(beta)).powi(2)
            }
            SourceCase::Affine { alpha, beta } => Expr::float(beta) * z + Expr::float(alpha),
            SourceCase::Constant { alpha } => Expr::float(alpha),
        }
    }

    /// Numeric `f(z)`; the arbitrary case uses the witness `z^3 + sin z`.
    pub fn f(&self, z: f64) -> f64 {
        match *self {
            SourceCase::Arbitrary => z * z * z + z.sin(),
            SourceCase::Log {
                alpha,
                beta,
                gamma,
                delta,
            } => {
                let w = alpha + beta * z;
                -(gamma / beta) * w * (delta + w.abs().ln())
            }
            SourceCase::Quadratic { alpha, beta } => alpha * (z - beta) * (z - beta),
            SourceCase::Affine { alpha, beta } => beta * z + alpha,
            SourceCase::Constant { alpha } => alpha,
        }
    }

    pub fn df(&self, z: f64) -> f64 {
        match *self {
            SourceCase::Arbitrary => 3.0 * z * z + z.cos(),
            SourceCase::Log {
                alpha,
                beta,
                gamma,
                delta,
            } => -gamma * (delta + (alpha + beta * z).abs().ln() + 1.0),
            SourceCase::Quadratic { alpha, beta } => 2.0 * alpha * (z - beta),
            SourceCase::Affine { beta, .. } => beta,
            SourceCase::Constant { .. } => 0.0,
        }
    }

    /// Zeroth-order term of the equation in the given form.
    pub fn form_source(&self, form: PdeForm) -> Expr {
        let u = Expr::sym(sym::U);
        match form {
            PdeForm::Bsm => self.f_expr(u),
            PdeForm::Heat => {
                let half_x = Expr::sym(sym::X) / Expr::int(2);
                Expr::exp(-half_x.clone()) * self.f_expr(Expr::exp(half_x) * u.clone())
                    - u / Expr::int(4)
            }
        }
    }

    pub fn form_source_value(&self, form: PdeForm, x: f64, u: f64) -> f64 {
        match form {
            PdeForm::Bsm => self.f(u),
            PdeForm::Heat => (-x / 2.0).exp() * self.f((x / 2.0).exp() * u) - u / 4.0,
        }
    }

    pub fn is_singular_at(&self, form: PdeForm, x: f64, u: f64) -> bool {
        match *self {
            SourceCase::Log { alpha, beta, .. } => {
                let z = match form {
                    PdeForm::Bsm => u,
                    PdeForm::Heat => (x / 2.0).exp() * u,
                };
                (alpha + beta * z).abs() < 1e-6 * (1.0 + alpha.abs())
            }
            _ => false,
        }
    }

    /// Case of `z -> scale * f((z - shift) / arg_scale)`, which stays in the same family.
    pub fn transported(&self, tr: &SourceTransport) -> SourceCase {
        let (k, s, a) = (tr.scale, tr.shift, tr.arg_scale);
        match *self {
            SourceCase::Arbitrary => SourceCase::Arbitrary,
            SourceCase::Log {
                alpha,
                beta,
                gamma,
                delta,
            } => SourceCase::Log {
                alpha: alpha - beta * s / a,
                beta: beta / a,
                gamma: k * gamma / a,
                delta,
            },
            SourceCase::Quadratic { alpha, beta } => SourceCase::Quadratic {
                alpha: k * alpha / (a * a),
                beta: s + a * beta,
            },
            SourceCase::Affine { alpha, beta } => SourceCase::Affine {
                alpha: k * (alpha - beta * s / a),
                beta: k * beta / a,
            },
            SourceCase::Constant { alpha } => SourceCase::Constant { alpha: k * alpha },
        }
    }
}

impl fmt::Display for SourceCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            SourceCase::Arbitrary => write!(f, "arbitrary"),
            SourceCase::Log {
                alpha,
                beta,
                gamma,
                delta,
            } => write!(
                f,
                "log(alpha={alpha}, beta={beta}, gamma={gamma}, delta={delta})"
            ),
            SourceCase::Quadratic { alpha, beta } => {
                write!(f, "quadratic(alpha={alpha}, beta={beta})")
            }
            SourceCase::Affine { alpha, beta } => write!(f, "affine(alpha={alpha}, beta={beta})"),
            SourceCase::Constant { alpha } => write!(f, "constant(alpha={alpha})"),
        }
    }
}

pub fn source_expression(case: &SourceCase, form: PdeForm) -> Expr {
    case.form_source(form)
}

fn x() -> Expr {
    Expr::sym(sym::X)
}
fn t() -> Expr {
    Expr::sym(sym::T)
}
fn u() -> Expr {
    Expr::sym(sym::U)
}
fn c(v: f64) -> Expr {
    Expr::float(v)
}
fn n(v: i64) -> Expr {
    Expr::int(v)
}
/// `exp(-x/2)`
fn em() -> Expr {
    Expr::exp(-x() / n(2))
}
/// `exp(x/2)`
fn ep() -> Expr {
    Expr::exp(x() / n(2))
}

pub fn time_translation() -> VectorField {
    VectorField::new("X1", Expr::zero(), Expr::one(), Expr::zero())
}

/// `2 d/dx - u d/du`, the only generator shared by every terminal subalgebra.
pub fn scaling_generator() -> VectorField {
    VectorField::new("X2", n(2), Expr::zero(), -u())
}

/// Printed generator that fails the jet check, next to its corrected form.
#[derive(Debug, Clone, PartialEq)]
pub struct Erratum {
    pub typeset: VectorField,
    pub corrected: VectorField,
    pub note: &'static str,
}

/// `X = F(x,t) d/du` with `F = exp((1/4 - k) t) exp(a x - a^2 t)`, a member of
/// the infinite family of the linear cases for every `a`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WitnessFamily {
    /// Coefficient `k` in `F_t + F_xx + (k - 1/4) F = 0`.
    pub k: f64,
}

impl WitnessFamily {
    pub const SAMPLE_A: [f64; 2] = [0.7, -1.3];

    pub fn field(&self, a: f64) -> VectorField {
        let eta = Expr::exp(c(0.25 - self.k - a * a) * t() + c(a) * x());
        VectorField::new(format!("Xinf(a={a})"), Expr::zero(), Expr::zero(), eta)
    }

    pub fn samples(&self) -> Vec<VectorField> {
        Self::SAMPLE_A.iter().map(|&a| self.field(a)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseAlgebra {
    pub case: SourceCase,
    pub generators: Vec<VectorField>,
    pub witness_finfty: Option<WitnessFamily>,
    pub errata: Vec<Erratum>,
}

impl CaseAlgebra {
    /// Generators followed by the sampled infinite-family witnesses.
    pub fn all_fields(&self) -> Vec<VectorField> {
        let mut v = self.generators.clone();
        if let Some(w) = &self.witness_finfty {
            v.extend(w.samples());
        }
        v
    }
}

pub fn generators_for(case: &SourceCase) -> CaseAlgebra {
    let mut generators = vec![time_translation(), scaling_generator()];
    let mut witness_finfty = None;
    let mut errata = Vec::new();
    match *case {
        SourceCase::Arbitrary => {}
        SourceCase::Log {
            alpha, beta, gamma, ..
        } => {
            let growth = Expr::exp(-x() / n(2) + c(gamma) * t());
            let w = c(alpha) + c(beta) * ep() * u();
            generators.push(VectorField::new(
                "X3",
                Expr::zero(),
                Expr::zero(),
                w / c(beta) * growth.clone(),
            ));
            let s = c(gamma) * (t() + x());
            let eta = (c(beta) * s.clone() * ep() * u() + c(alpha) * (Expr::one() + s))
                / c(beta * gamma)
                * growth;
            generators.push(VectorField::new(
                "X4",
                c(2.0 / gamma) * Expr::exp(c(gamma) * t()),
                Expr::zero(),
                eta,
            ));
        }
        SourceCase::Quadratic { beta, .. } => {
            generators.push(VectorField::new(
                "X3",
                n(2) * (x() - t()),
                n(4) * t(),
                (t() - x() - n(4)) * u() + c(4.0 * beta) * em(),
            ));
        }
        SourceCase::Affine { alpha, beta } => {
            let ab = alpha / beta;
            generators.push(VectorField::new(
                "X3",
                Expr::zero(),
                Expr::zero(),
                u() + c(ab) * em(),
            ));
            generators.push(VectorField::new(
                "X4",
                n(2) * t(),
                Expr::zero(),
                u() * x() + c(ab) * (t() + x()) * em(),
            ));
            generators.push(VectorField::new(
                "X5",
                n(2) * x(),
                n(4) * t(),
                (c(alpha) * x() - c(4.0 * beta - 1.0) * (c(alpha) + c(beta) * ep() * u()) * t())
                    / c(beta)
                    * em(),
            ));
            let poly = n(2) * (x() - n(1)) * t() + x().powi(2) + c(1.0 - 4.0 * beta) * t().powi(2);
            let xi1 = n(4) * x() * t();
            let xi2 = n(4) * t().powi(2);
            let head = c(alpha) * poly * em();
            let corrected = VectorField::new(
                "X6",
                xi1.clone(),
                xi2.clone(),
                (head.clone()
                    + c(beta) * (x().powi(2) + (t() - c(4.0 * beta) * t() - n(2)) * t()) * u())
                    / c(beta),
            );
            let typeset = VectorField::new(
                "X6 (typeset)",
                xi1,
                xi2,
                (head + c(beta) * (x().powi(2) + (t() - c(4.0 * beta) * t() - n(2))) * t() * u())
                    / c(beta),
            );
            generators.push(corrected.clone());
            errata.push(Erratum {
                typeset,
                corrected,
                note: "bracket in the u-coefficient of X6 closes one factor of t too late",
            });
            witness_finfty = Some(WitnessFamily { k: beta });
            errata.push(Erratum {
                typeset: WitnessFamily { k: alpha }.field(WitnessFamily::SAMPLE_A[0]),
                corrected: WitnessFamily { k: beta }.field(WitnessFamily::SAMPLE_A[0]),
                note: "linear coefficient of the infinite family is beta - 1/4",
            });
        }
        SourceCase::Constant { alpha } => {
            let corrected = VectorField::new(
                "X3",
                Expr::zero(),
                Expr::zero(),
                u() - c(alpha) * x() * em(),
            );
            let typeset = VectorField::new(
                "X3 (typeset)",
                Expr::zero(),
                Expr::zero(),
                u() + c(alpha) * x() * em(),
            );
            generators.push(corrected.clone());
            errata.push(Erratum {
                typeset,
                corrected,
                note: "sign of the alpha term in X3",
            });
            generators.push(VectorField::new(
                "X4",
                n(4) * t(),
                Expr::zero(),
                (n(2) * ep() * x() * u() + c(alpha) * (t().powi(2) - x() * (x() + n(2)))) * em(),
            ));
            generators.push(VectorField::new(
                "X5",
                n(4) * x(),
                n(8) * t(),
                (n(2) * ep() * t() * u() + c(alpha) * (t().powi(2) - (x() - n(6)) * x())) * em(),
            ));
            let cubic = t().powi(3)
                - n(12) * t().powi(2)
                - n(3) * t() * x().powi(2)
                - n(2) * x() * (x() * (x() + n(3)) + n(6));
            generators.push(VectorField::new(
                "X6",
                n(12) * x() * t(),
                n(12) * t().powi(2),
                n(3) * ((t() - n(2)) * t() + x().powi(2)) * u() + c(alpha) * cubic * em(),
            ));
            witness_finfty = Some(WitnessFamily { k: 0.0 });
            errata.push(Erratum {
                typeset: WitnessFamily { k: alpha }.field(WitnessFamily::SAMPLE_A[0]),
                corrected: WitnessFamily { k: 0.0 }.field(WitnessFamily::SAMPLE_A[0]),
                note: "linear coefficient of the infinite family is -1/4",
            });
        }
    }
    CaseAlgebra {
        case: *case,
        generators,
        witness_finfty,
        errata,
    }
}

/// Heat-coordinate terminal datum `exp(-x/2)`.
pub fn terminal_datum() -> Expr {
    em()
}

/// Generators leaving `t = T` and `u = exp(-x/2)` invariant.
pub fn terminal_subalgebra(
    case: &SourceCase,
    terminal_time: f64,
) -> Result<Vec<VectorField>, ClassificationError> {
    let z1 = || {
        let mut g = scaling_generator();
        g.label = "Z1".into();
        g
    };
    match *case {
        SourceCase::Quadratic { beta, .. } => {
            if beta != 1.0 {
                return Ok(vec![scaling_generator()]);
            }
            let z2 = VectorField::new(
                "Z2",
                n(2) * (x() - t()),
                n(4) * (t() - c(terminal_time)),
                (t() - x() - n(4)) * u() + n(4) * em(),
            );
            Ok(vec![z1(), z2])
        }
        SourceCase::Log {
            alpha, beta, gamma, ..
        } => {
            if alpha + beta != 0.0 {
                return Ok(vec![scaling_generator()]);
            }
            let growth = Expr::exp(-x() / n(2) + c(gamma) * t());
            let z2 = VectorField::new(
                "Z2",
                Expr::zero(),
                Expr::zero(),
                (Expr::one() - ep() * u()) * growth.clone(),
            );
            let s = c(gamma) * (t() + x());
            let z3 = VectorField::new(
                "Z3",
                c(2.0 / gamma) * Expr::exp(c(gamma) * t()),
                Expr::zero(),
                (s.clone() * ep() * u() - (Expr::one() + s)) / c(gamma) * growth,
            );
            Ok(vec![z1(), z2, z3])
        }
        other => Err(ClassificationError::UnsupportedCase(
            other.name().to_string(),
        )),
    }
}

/// `x`-independent solution `C(t)` with `C(T) = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TrivialTerminalSolution {
    Fixed,
    Quadratic {
        alpha: f64,
        beta: f64,
        terminal_time: f64,
    },
    Log {
        alpha: f64,
        beta: f64,
        gamma: f64,
        delta: f64,
        sign: f64,
        terminal_time: f64,
    },
}

impl TrivialTerminalSolution {
    pub fn eval(&self, time: f64) -> f64 {
        match *self {
            TrivialTerminalSolution::Quadratic { terminal_time, .. }
            | TrivialTerminalSolution::Log { terminal_time, .. }
                if time == terminal_time =>
            {
                1.0
            }
            TrivialTerminalSolution::Fixed => 1.0,
            TrivialTerminalSolution::Quadratic {
                alpha,
                beta,
                terminal_time,
            } => beta + 1.0 / (alpha * (time - terminal_time) + 1.0 / (1.0 - beta)),
            TrivialTerminalSolution::Log {
                alpha,
                beta,
                gamma,
                delta,
                sign,
                terminal_time,
            } => {
                let l = delta + (alpha + beta).abs().ln();
                let w = sign * (-delta + l * (gamma * (time - terminal_time)).exp()).exp();
                (w - alpha) / beta
            }
        }
    }
}

pub fn trivial_terminal_solution(
    case: &SourceCase,
    terminal_time: f64,
) -> Result<TrivialTerminalSolution, ClassificationError> {
    match *case {
        SourceCase::Quadratic { beta: 1.0, .. } => Ok(TrivialTerminalSolution::Fixed),
        SourceCase::Quadratic { alpha, beta } => {
            let d = |s: f64| alpha * (s - terminal_time) + 1.0 / (1.0 - beta);
            let (d0, d1) = (d(0.0), d(terminal_time));
            let lo = terminal_time.min(0.0);
            let hi = terminal_time.max(0.0);
            if d0 == 0.0 || d0.signum() != d1.signum() {
                let pole = terminal_time - 1.0 / (alpha * (1.0 - beta));
                return Err(ClassificationError::BlowUp(pole.clamp(lo, hi)));
            }
            Ok(TrivialTerminalSolution::Quadratic {
                alpha,
                beta,
                terminal_time,
            })
        }
        SourceCase::Log {
            alpha,
            beta,
            gamma,
            delta,
        } => {
            if alpha + beta == 0.0 {
                return Err(ClassificationError::Degenerate(
                    "alpha + beta = 0 puts the terminal value on log 0".into(),
                ));
            }
            Ok(TrivialTerminalSolution::Log {
                alpha,
                beta,
                gamma,
                delta,
                sign: (alpha + beta).signum(),
                terminal_time,
            })
        }
        other => Err(ClassificationError::UnsupportedCase(
            other.name().to_string(),
        )),
    }
}
