//! Closed-form barrier solutions for the quadratic and logarithmic sources,
//! their reduced ODEs, special profiles and heat-coordinate ansatze.

use std::f64::consts::SQRT_2;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classification::SourceCase;
use crate::equivalence::{bsm_to_heat, CoordinateMap, EquivalenceError};
use crate::expr::{differentiate, evaluate, Binding, Expr, ExprError};
use crate::jet::{EvolutionPde, JetError};

pub const ZETA: &str = "zeta";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolutionError {
    #[error("invalid solution parameters: {0}")]
    InvalidParams(String),
    #[error("singular point at x = {x}, t = {t}")]
    SingularPoint { x: f64, t: f64 },
    #[error("domain error: {0}")]
    Domain(String),
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Equivalence(#[from] EquivalenceError),
    #[error(transparent)]
    Jet(#[from] JetError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuadraticVariant {
    C3NonZero,
    C3Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogVariant {
    LambdaNonZero,
    LambdaZero,
}

/// Solution of the quadratic case; `a` is the integration constant of `H`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadraticBarrierSolution {
    pub variant: QuadraticVariant,
    pub sigma: f64,
    pub r: f64,
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
    pub kappa: f64,
    pub a: f64,
}

/// Solution of the logarithmic case; `delta1`, `delta2` are derived.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogBarrierSolution {
    pub variant: LogVariant,
    pub sigma: f64,
    pub r: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
    pub lambda: f64,
    pub mu: f64,
    pub kappa: f64,
    pub a: f64,
    pub c: f64,
    pub delta1: f64,
    pub delta2: f64,
}

fn check(cond: bool, msg: &str) -> Result<(), SolutionError> {
    if cond {
        Ok(())
    } else {
        Err(SolutionError::InvalidParams(msg.to_string()))
    }
}

fn all_finite(v: &[f64]) -> Result<(), SolutionError> {
    check(v.iter().all(|x| x.is_finite()), "parameters must be finite")
}

impl QuadraticBarrierSolution {
    #[allow(clippy::too_many_arguments)]
    pub fn c3_nonzero(
        sigma: f64,
        r: f64,
        alpha: f64,
        beta: f64,
        lambda: f64,
        kappa: f64,
        a: f64,
    ) -> Result<Self, SolutionError> {
        all_finite(&[sigma, r, alpha, beta, lambda, kappa, a])?;
        check(sigma > 0.0, "sigma must be positive")?;
        check(alpha != 0.0, "alpha must be nonzero")?;
        check(a != 0.0, "A must be nonzero")?;
        check(sigma * sigma != 2.0 * r, "sigma^2 = 2r makes R singular")?;
        Ok(Self {
            variant: QuadraticVariant::C3NonZero,
            sigma,
            r,
            alpha,
            beta,
            lambda,
            kappa,
            a,
        })
    }

    pub fn c3_zero(
        sigma: f64,
        r: f64,
        alpha: f64,
        beta: f64,
        a: f64,
    ) -> Result<Self, SolutionError> {
        all_finite(&[sigma, r, alpha, beta, a])?;
        check(sigma > 0.0, "sigma must be positive")?;
        check(alpha != 0.0, "alpha must be nonzero")?;
        check(a > 0.0, "A must be positive (H(0) = A)")?;
        Ok(Self {
            variant: QuadraticVariant::C3Zero,
            sigma,
            r,
            alpha,
            beta,
            lambda: 0.0,
            kappa: 0.0,
            a,
        })
    }

    fn drift(&self) -> f64 {
        self.sigma * self.sigma - 2.0 * self.r
    }

    /// `B` in `R = (B + beta t) / (kappa + t)`.
    pub fn b_constant(&self) -> Option<f64> {
        match self.variant {
            QuadraticVariant::C3NonZero => Some(
                self.beta * self.kappa
                    - 12.0 * self.sigma * self.sigma
                        / (self.a * self.a * self.alpha * self.drift() * self.drift()),
            ),
            QuadraticVariant::C3Zero => None,
        }
    }

    /// Denominator of the closed form and its scale.
    fn denominator(&self, x: f64, t: f64) -> (f64, f64) {
        let lx = x.abs().ln();
        let parts = match self.variant {
            QuadraticVariant::C3NonZero => [
                2.0 * self.lambda * self.sigma,
                SQRT_2 * self.drift() * t,
                2.0 * SQRT_2 * lx,
            ],
            QuadraticVariant::C3Zero => [0.0, t * self.drift(), 2.0 * lx],
        };
        let scale = 1.0 + parts.iter().map(|p| p.abs()).sum::<f64>();
        (parts.iter().sum(), scale)
    }

    pub fn eval_u(&self, x: f64, t: f64) -> Result<f64, SolutionError> {
        if !(x > 0.0) {
            return Err(SolutionError::Domain(format!("x = {x} must be positive")));
        }
        let (d, scale) = self.denominator(x, t);
        if d.abs() < 1e-8 * scale {
            return Err(SolutionError::SingularPoint { x, t });
        }
        let num = match self.variant {
            QuadraticVariant::C3NonZero => 24.0,
            QuadraticVariant::C3Zero => 12.0,
        };
        Ok(self.beta - num * self.sigma * self.sigma / (self.alpha * d * d))
    }

    pub fn log_h(&self, t: f64) -> Result<f64, SolutionError> {
        let half = self.r - 0.5 * self.sigma * self.sigma;
        match self.variant {
            QuadraticVariant::C3NonZero => {
                let k = self.kappa + t;
                if k < 0.0 {
                    return Err(SolutionError::Domain(format!("kappa + t = {k} < 0")));
                }
                Ok(-self.sigma * self.lambda / SQRT_2 + half * (t + self.a * k.sqrt()))
            }
            QuadraticVariant::C3Zero => Ok(self.a.ln() + half * t),
        }
    }

    pub fn h_rate(&self, t: f64) -> Result<f64, SolutionError> {
        let half = self.r - 0.5 * self.sigma * self.sigma;
        match self.variant {
            QuadraticVariant::C3NonZero => {
                let k = self.kappa + t;
                if k <= 0.0 {
                    return Err(SolutionError::Domain(format!("kappa + t = {k} <= 0")));
                }
                Ok(half * (1.0 + self.a / (2.0 * k.sqrt())))
            }
            QuadraticVariant::C3Zero => Ok(half),
        }
    }

    pub fn eval_r(&self, t: f64) -> Result<f64, SolutionError> {
        let s2 = self.sigma * self.sigma;
        match self.variant {
            QuadraticVariant::C3NonZero => {
                let den =
                    self.a * self.a * self.alpha * (t + self.kappa) * self.drift() * self.drift();
                if den.abs() < 1e-14 {
                    return Err(SolutionError::SingularPoint { x: f64::NAN, t });
                }
                Ok(self.beta - 12.0 * s2 / den)
            }
            QuadraticVariant::C3Zero => {
                let l = self.a.abs().ln();
                if l.abs() < 1e-12 {
                    return Err(SolutionError::SingularPoint { x: self.a, t });
                }
                Ok(self.beta - 3.0 * s2 / (self.alpha * l * l))
            }
        }
    }
}

impl LogBarrierSolution {
    #[allow(clippy::too_many_arguments)]
    pub fn lambda_nonzero(
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
    ) -> Result<Self, SolutionError> {
        all_finite(&[sigma, r, alpha, beta, gamma, delta, lambda, mu, kappa, a])?;
        check(sigma > 0.0, "sigma must be positive")?;
        check(
            beta != 0.0 && gamma != 0.0,
            "beta and gamma must be nonzero",
        )?;
        check(a > 0.0, "A must be positive")?;
        Ok(Self {
            variant: LogVariant::LambdaNonZero,
            sigma,
            r,
            alpha,
            beta,
            gamma,
            delta,
            lambda,
            mu,
            kappa,
            a,
            c: 0.0,
            delta1: (-delta).exp(),
            delta2: 0.0,
        })
    }

    #[allow(clippy::too_many_arguments)]
    pub fn lambda_zero(
        sigma: f64,
        r: f64,
        alpha: f64,
        beta: f64,
        gamma: f64,
        delta: f64,
        mu: f64,
        kappa: f64,
        a: f64,
        c: f64,
    ) -> Result<Self, SolutionError> {
        all_finite(&[sigma, r, alpha, beta, gamma, delta, mu, kappa, a, c])?;
        check(sigma > 0.0, "sigma must be positive")?;
        check(beta > 0.0, "beta must be positive (log beta enters)")?;
        check(gamma != 0.0, "gamma must be nonzero")?;
        check(a > 0.0, "A must be positive")?;
        let q = 1.0 + 2.0 * c;
        let delta2 =
            ((gamma * (2.0 - 4.0 * delta) + q * q - 4.0 * gamma * beta.ln()) / (4.0 * gamma)).exp();
        Ok(Self {
            variant: LogVariant::LambdaZero,
            sigma,
            r,
            alpha,
            beta,
            gamma,
            delta,
            lambda: 0.0,
            mu,
            kappa,
            a,
            c,
            delta1: (-delta).exp(),
            delta2,
        })
    }

    pub fn eval_u(&self, x: f64, t: f64) -> Result<f64, SolutionError> {
        if !(x > 0.0) {
            return Err(SolutionError::Domain(format!("x = {x} must be positive")));
        }
        let (s, r, g, mu, k) = (self.sigma, self.r, self.gamma, self.mu, self.kappa);
        let eg = (g * t).exp();
        let lx = x.ln();
        let v = match self.variant {
            LogVariant::LambdaNonZero => {
                let l = self.lambda;
                let inner = s
                    * (k * s + g * mu * (2.0 * SQRT_2 - 2.0 * l - g * mu * eg + 2.0 * g * s * t))
                    - 4.0 * r * g * g * mu * t;
                let expo = eg * inner / (8.0 * g * s);
                let power = g * mu * eg / (2.0 * s);
                self.delta1 / self.beta * (expo + power * lx).exp()
            }
            LogVariant::LambdaZero => {
                let s2 = s * s;
                let q = 1.0 + 2.0 * self.c;
                let num = s2 * (k * s - 4.0 * SQRT_2 * g * mu * self.c) * eg
                    + g * (s2 - 2.0 * r)
                        * (s * (g * s * t + 2.0 * SQRT_2 * q) - 2.0 * r * g * t)
                        * t
                    + 4.0 * g * g * lx * lx;
                let expo = num / (8.0 * g * s2);
                let power = g * (0.5 - r / s2) * t + q / (SQRT_2 * s);
                self.delta2 * (expo + power * lx).exp()
            }
        };
        Ok(v - self.alpha / self.beta)
    }

    pub fn log_h(&self, t: f64) -> f64 {
        let s = self.sigma;
        let base = (2.0 * self.r - s * s) * t / 2.0;
        base + s * (self.lambda * t + self.mu * (self.gamma * t).exp()) / 2.0 + self.a.ln()
    }

    pub fn h_rate(&self, t: f64) -> f64 {
        let s = self.sigma;
        (2.0 * self.r - s * s) / 2.0
            + s * (self.lambda + self.mu * self.gamma * (self.gamma * t).exp()) / 2.0
    }

    pub fn eval_r(&self, t: f64) -> f64 {
        let (s, g, mu, k) = (self.sigma, self.gamma, self.mu, self.kappa);
        let eg = (g * t).exp();
        let la = self.a.ln();
        let v = match self.variant {
            LogVariant::LambdaNonZero => {
                let l = self.lambda;
                let inner = s
                    * (g * mu * (2.0 * SQRT_2 - 2.0 * l + 2.0 * g * l * t + g * mu * eg) + k * s)
                    + 4.0 * g * g * mu * la;
                self.delta1 / self.beta * (eg * inner / (8.0 * g * s)).exp()
            }
            LogVariant::LambdaZero => {
                let q = 1.0 + 2.0 * self.c;
                let expo = (eg * eg * g * mu * mu
                    + eg * (2.0 * SQRT_2 * g * mu + k * s) / g
                    + 4.0 * g * la * la / (s * s))
                    / 8.0;
                let power = (g * mu * eg + SQRT_2 * q) / (2.0 * s);
                self.delta2 * (expo + power * la).exp()
            }
        };
        v - self.alpha / self.beta
    }
}

/// One of the four closed-form barrier solutions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ClosedFormSolution {
    Quadratic(QuadraticBarrierSolution),
    Log(LogBarrierSolution),
}

impl From<QuadraticBarrierSolution> for ClosedFormSolution {
    fn from(s: QuadraticBarrierSolution) -> Self {
        ClosedFormSolution::Quadratic(s)
    }
}

impl From<LogBarrierSolution> for ClosedFormSolution {
    fn from(s: LogBarrierSolution) -> Self {
        ClosedFormSolution::Log(s)
    }
}

/// Residual of an equation at a point with the size of its largest term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PdeResidual {
    pub residual: f64,
    pub scale: f64,
}

impl PdeResidual {
    pub fn relative(&self) -> f64 {
        self.residual.abs() / (1.0 + self.scale)
    }
}

impl ClosedFormSolution {
    pub fn variant_name(&self) -> &'static str {
        match self {
            ClosedFormSolution::Quadratic(q) => match q.variant {
                QuadraticVariant::C3NonZero => "quadratic_c3_nonzero",
                QuadraticVariant::C3Zero => "quadratic_c3_zero",
            },
            ClosedFormSolution::Log(l) => match l.variant {
                LogVariant::LambdaNonZero => "log_lambda_nonzero",
                LogVariant::LambdaZero => "log_lambda_zero",
            },
        }
    }

    pub fn sigma(&self) -> f64 {
        match self {
            ClosedFormSolution::Quadratic(q) => q.sigma,
            ClosedFormSolution::Log(l) => l.sigma,
        }
    }

    pub fn r(&self) -> f64 {
        match self {
            ClosedFormSolution::Quadratic(q) => q.r,
            ClosedFormSolution::Log(l) => l.r,
        }
    }

    pub fn source_case(&self) -> SourceCase {
        match *self {
            ClosedFormSolution::Quadratic(q) => SourceCase::Quadratic {
                alpha: q.alpha,
                beta: q.beta,
            },
            ClosedFormSolution::Log(l) => SourceCase::Log {
                alpha: l.alpha,
                beta: l.beta,
                gamma: l.gamma,
                delta: l.delta,
            },
        }
    }

    pub fn pde(&self) -> EvolutionPde {
        EvolutionPde {
            sigma: self.sigma(),
            r: self.r(),
            source: self.source_case(),
            form: crate::jet::PdeForm::Bsm,
        }
    }

    pub fn eval_u(&self, x: f64, t: f64) -> Result<f64, SolutionError> {
        match self {
            ClosedFormSolution::Quadratic(q) => q.eval_u(x, t),
            ClosedFormSolution::Log(l) => l.eval_u(x, t),
        }
    }

    pub fn log_h(&self, t: f64) -> Result<f64, SolutionError> {
        match self {
            ClosedFormSolution::Quadratic(q) => q.log_h(t),
            ClosedFormSolution::Log(l) => Ok(l.log_h(t)),
        }
    }

    pub fn eval_h(&self, t: f64) -> Result<f64, SolutionError> {
        Ok(self.log_h(t)?.exp())
    }

    /// `H'(t) / H(t)` in closed form.
    pub fn h_rate(&self, t: f64) -> Result<f64, SolutionError> {
        match self {
            ClosedFormSolution::Quadratic(q) => q.h_rate(t),
            ClosedFormSolution::Log(l) => Ok(l.h_rate(t)),
        }
    }

    pub fn eval_r(&self, t: f64) -> Result<f64, SolutionError> {
        match self {
            ClosedFormSolution::Quadratic(q) => q.eval_r(t),
            ClosedFormSolution::Log(l) => Ok(l.eval_r(t)),
        }
    }

    /// `|u(H(t), t) - R(t)|`
    pub fn boundary_consistency(&self, t: f64) -> Result<f64, SolutionError> {
        let h = self.eval_h(t)?;
        Ok((self.eval_u(h, t)? - self.eval_r(t)?).abs())
    }

    /// Equation residual with central differences of step `h (1 + |x|)` and `h (1 + |t|)`.
    pub fn pde_residual(&self, x: f64, t: f64, h: f64) -> Result<PdeResidual, SolutionError> {
        if !(h > 0.0) {
            return Err(SolutionError::Domain(format!(
                "step h = {h} must be positive"
            )));
        }
        let hx = h * (1.0 + x.abs());
        let ht = h * (1.0 + t.abs());
        let u0 = self.eval_u(x, t)?;
        let up = self.eval_u(x + hx, t)?;
        let um = self.eval_u(x - hx, t)?;
        let u_t = (self.eval_u(x, t + ht)? - self.eval_u(x, t - ht)?) / (2.0 * ht);
        let u_x = (up - um) / (2.0 * hx);
        let u_xx = (up - 2.0 * u0 + um) / (hx * hx);
        let (s, r) = (self.sigma(), self.r());
        let terms = [
            u_t,
            0.5 * s * s * x * x * u_xx,
            r * x * u_x,
            self.source_case().f(u0),
        ];
        Ok(PdeResidual {
            residual: terms.iter().sum(),
            scale: terms.iter().fold(0.0f64, |m, v| m.max(v.abs())),
        })
    }

    /// Heat-coordinate ansatz and profile whose image is this solution.
    pub fn heat_representation(&self) -> (InvariantAnsatz, SpecialSolution) {
        match *self {
            ClosedFormSolution::Quadratic(q) => match q.variant {
                QuadraticVariant::C3NonZero => (
                    InvariantAnsatz::U1a {
                        beta: q.beta,
                        kappa: q.kappa,
                        lambda: q.lambda,
                    },
                    SpecialSolution::QuadC3NonZero {
                        alpha: q.alpha,
                        beta: q.beta,
                        kappa: q.kappa,
                        lambda: q.lambda,
                        form: OdeForm::Derived,
                    },
                ),
                QuadraticVariant::C3Zero => (
                    InvariantAnsatz::U1b { lambda: 0.0 },
                    SpecialSolution::QuadC3Zero {
                        alpha: q.alpha,
                        beta: q.beta,
                        choice: QuadC3ZeroSpecial::Corrected,
                    },
                ),
            },
            ClosedFormSolution::Log(l) => {
                let ansatz = InvariantAnsatz::U2a {
                    alpha: l.alpha,
                    beta: l.beta,
                    gamma: l.gamma,
                    lambda: l.lambda,
                    mu: l.mu,
                    kappa: l.kappa,
                    sigma: l.sigma,
                };
                let special = match l.variant {
                    LogVariant::LambdaNonZero => SpecialSolution::LogExponential {
                        beta: l.beta,
                        delta1: l.delta1,
                    },
                    LogVariant::LambdaZero => SpecialSolution::LogGaussian {
                        gamma: l.gamma,
                        c: l.c,
                        delta2: l.delta2,
                    },
                };
                (ansatz, special)
            }
        }
    }

    /// `u` rebuilt from the heat ansatz through the coordinate chain.
    pub fn eval_u_by_composition(&self, x: f64, t: f64) -> Result<f64, SolutionError> {
        let chain = bsm_to_heat(self.sigma(), self.r())?;
        self.eval_u_through(&chain, x, t)
    }

    pub fn eval_u_through(
        &self,
        chain: &CoordinateMap,
        x: f64,
        t: f64,
    ) -> Result<f64, SolutionError> {
        let (ansatz, special) = self.heat_representation();
        let profile = special.expr();
        let f = |z: f64| -> f64 {
            evaluate(&profile, &Binding::new().with_number(ZETA, z), None).unwrap_or(f64::NAN)
        };
        let [xh, th, _] = chain.apply(x, t, 0.0)?;
        let uh = ansatz.eval(&f, xh, th)?;
        let [_, _, u] = chain.apply_inverse(xh, th, uh)?;
        Ok(u)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OdeForm {
    /// Coefficients as printed.
    Typeset,
    /// Coefficients obtained by substituting the ansatz.
    Derived,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuadC3ZeroSpecial {
    /// `beta - 6 alpha / (alpha zeta^2)`
    Typeset,
    /// `beta - 6 / (alpha zeta^2)`
    Corrected,
}

/// Ordinary differential equation for the profile `F(zeta)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ReducedOde {
    QuadC3NonZero {
        alpha: f64,
        beta: f64,
        kappa: f64,
        lambda: f64,
        form: OdeForm,
    },
    QuadC3Zero {
        alpha: f64,
        beta: f64,
        lambda: f64,
        form: OdeForm,
    },
    Log {
        beta: f64,
        gamma: f64,
        delta: f64,
        lambda: f64,
    },
}

impl ReducedOde {
    /// Additive terms of the residual at `(F, F', F'', zeta)`.
    pub fn terms(&self, f: f64, fp: f64, fpp: f64, zeta: f64) -> Result<Vec<f64>, SolutionError> {
        Ok(match *self {
            ReducedOde::QuadC3NonZero {
                alpha,
                beta,
                kappa,
                lambda,
                form,
            } => {
                let el = (lambda / 2.0).exp();
                let bk = beta * kappa;
                let second = match form {
                    OdeForm::Typeset => 1.0 / alpha,
                    OdeForm::Derived => 4.0 / alpha,
                };
                vec![
                    16.0 * el * bk * (bk + 1.0 / alpha),
                    -8.0 * (1.0 / (2.0 * alpha) + bk) * f,
                    f * f / el,
                    -2.0 / alpha * zeta * fp,
                    second * fpp,
                ]
            }
            ReducedOde::QuadC3Zero {
                alpha,
                beta,
                lambda,
                form,
            } => {
                let m = 1.0 - SQRT_2 * lambda;
                let sq = alpha * (beta - f) * (beta - f);
                match form {
                    OdeForm::Typeset => vec![-m * m * sq, m * SQRT_2 * lambda * fp, -fpp],
                    OdeForm::Derived => vec![m * m * sq, m * m * fp, -m * fp, fpp],
                }
            }
            ReducedOde::Log {
                beta,
                gamma,
                delta,
                lambda,
            } => {
                let bf = beta * f;
                if !(bf > 0.0) {
                    return Err(SolutionError::Domain(format!(
                        "log(beta F) undefined for beta F = {bf}"
                    )));
                }
                vec![
                    f * (2.0 * gamma * (2.0 * delta + zeta) - 1.0 + SQRT_2 * lambda),
                    4.0 * gamma * f * bf.ln(),
                    2.0 * (SQRT_2 * lambda - 2.0) * fp,
                    -4.0 * fpp,
                ]
            }
        })
    }

    pub fn residual_at(&self, f: f64, fp: f64, fpp: f64, zeta: f64) -> Result<f64, SolutionError> {
        Ok(self.terms(f, fp, fpp, zeta)?.iter().sum())
    }

    /// `|residual| / (1 + largest term)`
    pub fn scaled_residual(
        &self,
        f: f64,
        fp: f64,
        fpp: f64,
        zeta: f64,
    ) -> Result<f64, SolutionError> {
        let terms = self.terms(f, fp, fpp, zeta)?;
        let scale = terms.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        Ok(terms.iter().sum::<f64>().abs() / (1.0 + scale))
    }
}

/// Explicit profiles solving the reduced ODEs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SpecialSolution {
    /// `4 e^(lambda/2) (beta kappa - k / (alpha zeta^2))`, `k = 3/2` typeset, `6` derived.
    QuadC3NonZero {
        alpha: f64,
        beta: f64,
        kappa: f64,
        lambda: f64,
        form: OdeForm,
    },
    QuadC3Zero {
        alpha: f64,
        beta: f64,
        choice: QuadC3ZeroSpecial,
    },
    /// `delta1 e^(-zeta/2) / beta`
    LogExponential { beta: f64, delta1: f64 },
    /// `delta2 exp(gamma zeta^2 / 4 + c zeta)`
    LogGaussian { gamma: f64, c: f64, delta2: f64 },
}

impl SpecialSolution {
    pub fn expr(&self) -> Expr {
        let z = Expr::sym(ZETA);
        let f = Expr::float;
        match *self {
            SpecialSolution::QuadC3NonZero {
                alpha,
                beta,
                kappa,
                lambda,
                form,
            } => {
                let k = match form {
                    OdeForm::Typeset => 1.5,
                    OdeForm::Derived => 6.0,
                };
                f(4.0 * (lambda / 2.0).exp()) * (f(beta * kappa) - f(k / alpha) * z.powi(2).recip())
            }
            SpecialSolution::QuadC3Zero {
                alpha,
                beta,
                choice,
            } => {
                let num = match choice {
                    QuadC3ZeroSpecial::Typeset => 6.0 * alpha,
                    QuadC3ZeroSpecial::Corrected => 6.0,
                };
                f(beta) - f(num) / (f(alpha) * z.powi(2))
            }
            SpecialSolution::LogExponential { beta, delta1 } => {
                f(delta1 / beta) * Expr::exp(-z / Expr::int(2))
            }
            SpecialSolution::LogGaussian { gamma, c, delta2 } => {
                f(delta2) * Expr::exp(f(gamma / 4.0) * z.clone().powi(2) + f(c) * z)
            }
        }
    }

    /// `(F, F', F'')` at `zeta` from the symbolic derivatives.
    pub fn jet(&self, zeta: f64) -> Result<(f64, f64, f64), SolutionError> {
        let e = self.expr();
        let d1 = differentiate(&e, ZETA)?;
        let d2 = differentiate(&d1, ZETA)?;
        let b = Binding::new().with_number(ZETA, zeta);
        Ok((
            evaluate(&e, &b, None)?,
            evaluate(&d1, &b, None)?,
            evaluate(&d2, &b, None)?,
        ))
    }
}

/// Scaled residual of `ode` at the special profile.
pub fn reduction_residual(
    ode: &ReducedOde,
    special: &SpecialSolution,
    zeta: f64,
) -> Result<f64, SolutionError> {
    let (f, fp, fpp) = special.jet(zeta)?;
    ode.scaled_residual(f, fp, fpp, zeta)
}

/// Heat-coordinate invariant solutions with a free profile `F`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InvariantAnsatz {
    /// `e^(-(x+lambda)/2) (4 e^(lambda/2) beta t + F(zeta)) / (4 (kappa + t))`,
    /// `zeta = (x + t + lambda) / sqrt(kappa + t)`
    U1a { beta: f64, kappa: f64, lambda: f64 },
    /// `e^(-x/2) F((x + t m) / m)`, `m = 1 - sqrt2 lambda`
    U1b { lambda: f64 },
    /// `-(alpha/beta) e^(-x/2) + e^(phi(x,t)) F(t + x - lambda t / sqrt2 - mu e^(gamma t) / sqrt2)`
    U2a {
        alpha: f64,
        beta: f64,
        gamma: f64,
        lambda: f64,
        mu: f64,
        kappa: f64,
        sigma: f64,
    },
}

impl InvariantAnsatz {
    pub fn zeta(&self, x: f64, t: f64) -> Result<f64, SolutionError> {
        match *self {
            InvariantAnsatz::U1a { kappa, lambda, .. } => {
                if !(kappa + t > 0.0) {
                    return Err(SolutionError::Domain(format!(
                        "kappa + t = {} <= 0",
                        kappa + t
                    )));
                }
                Ok((x + t + lambda) / (kappa + t).sqrt())
            }
            InvariantAnsatz::U1b { lambda } => {
                let m = 1.0 - SQRT_2 * lambda;
                if m == 0.0 {
                    return Err(SolutionError::Domain("1 - sqrt2 lambda = 0".into()));
                }
                Ok((x + t * m) / m)
            }
            InvariantAnsatz::U2a {
                gamma, lambda, mu, ..
            } => Ok(t + x - lambda * t / SQRT_2 - mu * (gamma * t).exp() / SQRT_2),
        }
    }

    pub fn eval(&self, profile: &dyn Fn(f64) -> f64, x: f64, t: f64) -> Result<f64, SolutionError> {
        let z = self.zeta(x, t)?;
        Ok(match *self {
            InvariantAnsatz::U1a {
                beta,
                kappa,
                lambda,
            } => {
                (-(x + lambda) / 2.0).exp() * (4.0 * (lambda / 2.0).exp() * beta * t + profile(z))
                    / (4.0 * (kappa + t))
            }
            InvariantAnsatz::U1b { .. } => (-x / 2.0).exp() * profile(z),
            InvariantAnsatz::U2a {
                alpha,
                beta,
                gamma,
                lambda,
                mu,
                kappa,
                sigma,
            } => {
                let eg = (gamma * t).exp();
                let phi =
                    ((2.0 * gamma * (SQRT_2 * gamma * (t + x) - lambda) * mu + kappa * sigma) * eg
                        / gamma
                        - 2.0 * (SQRT_2 * lambda - 2.0) * t
                        - gamma * mu * mu * eg * eg)
                        / 8.0;
                -(alpha / beta) * (-x / 2.0).exp() + phi.exp() * profile(z)
            }
        })
    }
}

/// Which of the four solution families to sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VariantKind {
    QuadraticC3NonZero,
    QuadraticC3Zero,
    LogLambdaNonZero,
    LogLambdaZero,
}

impl VariantKind {
    pub const ALL: [VariantKind; 4] = [
        VariantKind::QuadraticC3NonZero,
        VariantKind::QuadraticC3Zero,
        VariantKind::LogLambdaNonZero,
        VariantKind::LogLambdaZero,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            VariantKind::QuadraticC3NonZero => "quadratic_c3_nonzero",
            VariantKind::QuadraticC3Zero => "quadratic_c3_zero",
            VariantKind::LogLambdaNonZero => "log_lambda_nonzero",
            VariantKind::LogLambdaZero => "log_lambda_zero",
        }
    }

    pub fn from_name(s: &str) -> Option<VariantKind> {
        VariantKind::ALL.into_iter().find(|v| v.name() == s)
    }
}

fn signed<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    let v = rng.random_range(lo..hi);
    if rng.random::<bool>() {
        v
    } else {
        -v
    }
}

/// Random parameters for which every formula is regular on `x > H(t)`, `t` in `[0, 1]`.
/// For the quadratic family with `c3 != 0` this needs `(sigma^2 - 2r) A < 0`.
pub fn random_admissible<R: Rng>(kind: VariantKind, rng: &mut R) -> ClosedFormSolution {
    let sigma: f64 = rng.random_range(0.2..0.8);
    loop {
        let r: f64 = rng.random_range(0.0..0.1);
        let drift = sigma * sigma - 2.0 * r;
        if drift.abs() < 0.02 && kind == VariantKind::QuadraticC3NonZero {
            continue;
        }
        let built: Result<ClosedFormSolution, SolutionError> = match kind {
            VariantKind::QuadraticC3NonZero => QuadraticBarrierSolution::c3_nonzero(
                sigma,
                r,
                signed(rng, 0.5, 2.0),
                rng.random_range(-1.0..2.0),
                rng.random_range(-0.5..0.5),
                rng.random_range(0.2..1.0),
                -drift.signum() * rng.random_range(0.5..1.5),
            )
            .map(Into::into),
            VariantKind::QuadraticC3Zero => QuadraticBarrierSolution::c3_zero(
                sigma,
                r,
                signed(rng, 0.5, 2.0),
                rng.random_range(-1.0..2.0),
                rng.random_range(1.2..3.0),
            )
            .map(Into::into),
            VariantKind::LogLambdaNonZero => LogBarrierSolution::lambda_nonzero(
                sigma,
                r,
                rng.random_range(-1.0..1.0),
                signed(rng, 0.5, 2.0),
                signed(rng, 0.3, 1.0),
                rng.random_range(-1.0..1.0),
                signed(rng, 0.1, 1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(0.5..2.0),
            )
            .map(Into::into),
            VariantKind::LogLambdaZero => LogBarrierSolution::lambda_zero(
                sigma,
                r,
                rng.random_range(-1.0..1.0),
                rng.random_range(0.5..2.0),
                signed(rng, 0.3, 1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(0.5..2.0),
                rng.random_range(-1.0..1.0),
            )
            .map(Into::into),
        };
        if let Ok(s) = built {
            return s;
        }
    }
}

/// Reference parameter sets used by the verification commands.
pub fn reference_solution(kind: VariantKind) -> ClosedFormSolution {
    let built: Result<ClosedFormSolution, SolutionError> = match kind {
        VariantKind::QuadraticC3NonZero => {
            QuadraticBarrierSolution::c3_nonzero(1.0, 0.0, 2.0, 1.0, 0.3, 0.5, -1.2).map(Into::into)
        }
        VariantKind::QuadraticC3Zero => {
            QuadraticBarrierSolution::c3_zero(0.4, 0.05, 1.0, 1.0, std::f64::consts::E)
                .map(Into::into)
        }
        VariantKind::LogLambdaNonZero => {
            LogBarrierSolution::lambda_nonzero(0.4, 0.05, 0.5, 1.5, 0.7, 0.3, 0.4, 0.2, 0.3, 1.1)
                .map(Into::into)
        }
        VariantKind::LogLambdaZero => {
            LogBarrierSolution::lambda_zero(0.4, 0.05, 0.5, 1.5, 0.7, 0.3, 0.2, 0.3, 1.1, 0.1)
                .map(Into::into)
        }
    };
    built.unwrap_or_else(|e| unreachable!("reference parameters rejected: {e}"))
}

/// Reduced ODE and special profile checked for a given variant.
pub fn reduction_for(
    kind: VariantKind,
    s: &ClosedFormSolution,
    form: OdeForm,
) -> (ReducedOde, SpecialSolution) {
    match (kind, s) {
        (VariantKind::QuadraticC3NonZero, ClosedFormSolution::Quadratic(q)) => (
            ReducedOde::QuadC3NonZero {
                alpha: q.alpha,
                beta: q.beta,
                kappa: q.kappa,
                lambda: q.lambda,
                form,
            },
            SpecialSolution::QuadC3NonZero {
                alpha: q.alpha,
                beta: q.beta,
                kappa: q.kappa,
                lambda: q.lambda,
                form,
            },
        ),
        (_, ClosedFormSolution::Quadratic(q)) => (
            ReducedOde::QuadC3Zero {
                alpha: q.alpha,
                beta: q.beta,
                lambda: 0.0,
                form,
            },
            SpecialSolution::QuadC3Zero {
                alpha: q.alpha,
                beta: q.beta,
                choice: QuadC3ZeroSpecial::Corrected,
            },
        ),
        (_, ClosedFormSolution::Log(l)) => (
            ReducedOde::Log {
                beta: l.beta,
                gamma: l.gamma,
                delta: l.delta,
                lambda: l.lambda,
            },
            s.heat_representation().1,
        ),
    }
}
