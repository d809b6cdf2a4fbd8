//! Point maps between members of the equation class and to the heat form.
//!
//! A [`CoordinateMap`] stores forward and inverse triples as expressions in
//! `x`, `t`, `u` (the inverse reads its input coordinates under the same
//! names) together with the induced change of `sigma`, `r` and `f`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classification::SourceCase;
use crate::expr::{differentiate, evaluate, substitute, Binding, Expr, ExprError};
use crate::jet::{sym, EvolutionPde, PdeForm};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EquivalenceError {
    #[error("invalid transformation parameters: {0}")]
    InvalidParams(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("map expects {expected} input, got {got}")]
    FormMismatch { expected: String, got: String },
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error("could not serialise map record: {0}")]
    Record(String),
}

/// `f~(z) = scale * f((z - shift) / arg_scale)`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceTransport {
    pub scale: f64,
    pub shift: f64,
    pub arg_scale: f64,
}

impl SourceTransport {
    pub const IDENTITY: SourceTransport = SourceTransport {
        scale: 1.0,
        shift: 0.0,
        arg_scale: 1.0,
    };

    /// Transport of `self` followed by `next`.
    pub fn then(&self, next: &SourceTransport) -> SourceTransport {
        SourceTransport {
            scale: self.scale * next.scale,
            shift: next.shift + next.arg_scale * self.shift,
            arg_scale: self.arg_scale * next.arg_scale,
        }
    }

    pub fn apply(&self, f: impl Fn(f64) -> f64, z: f64) -> f64 {
        self.scale * f((z - self.shift) / self.arg_scale)
    }
}

/// Arbitrary elements on one side of a map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "lowercase")]
pub enum FormParams {
    Bsm { sigma: f64, r: f64 },
    Heat,
}

impl FormParams {
    fn describe(&self) -> String {
        match self {
            FormParams::Bsm { sigma, r } => format!("bsm(sigma={sigma}, r={r})"),
            FormParams::Heat => "heat".into(),
        }
    }

    pub fn approx_eq(&self, other: &FormParams) -> bool {
        match (self, other) {
            (FormParams::Heat, FormParams::Heat) => true,
            (FormParams::Bsm { sigma, r }, FormParams::Bsm { sigma: s2, r: r2 }) => {
                (sigma - s2).abs() <= 1e-12 * sigma.abs().max(1.0)
                    && (r - r2).abs() <= 1e-12 * r.abs().max(1.0)
            }
            _ => false,
        }
    }

    fn matches(&self, pde: &EvolutionPde) -> bool {
        match (self, pde.form) {
            (FormParams::Heat, PdeForm::Heat) => true,
            (FormParams::Bsm { sigma, r }, PdeForm::Bsm) => {
                (sigma - pde.sigma).abs() <= 1e-12 * sigma.abs().max(1.0)
                    && (r - pde.r).abs() <= 1e-12 * r.abs().max(1.0)
            }
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamTransport {
    pub from: FormParams,
    pub to: FormParams,
    pub source: SourceTransport,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BsmEquivalenceParams {
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
    pub delta4: f64,
    pub delta5: f64,
    pub delta6: f64,
    pub delta7: f64,
}

impl BsmEquivalenceParams {
    pub const IDENTITY: BsmEquivalenceParams = BsmEquivalenceParams {
        delta1: 0.0,
        delta2: 0.0,
        delta3: 1.0,
        delta4: 1.0,
        delta5: 0.0,
        delta6: 1.0,
        delta7: 1.0,
    };

    pub fn validate(&self) -> Result<(), EquivalenceError> {
        let all = [
            self.delta1,
            self.delta2,
            self.delta3,
            self.delta4,
            self.delta5,
            self.delta6,
            self.delta7,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(EquivalenceError::InvalidParams("non-finite delta".into()));
        }
        for (v, name) in [
            (self.delta3, "delta3"),
            (self.delta4, "delta4"),
            (self.delta6, "delta6"),
            (self.delta7, "delta7"),
        ] {
            if v == 0.0 {
                return Err(EquivalenceError::InvalidParams(format!(
                    "{name} must be nonzero"
                )));
            }
        }
        Ok(())
    }

    /// Time rate `k` in `x~ = delta4 exp(k t) |x|^p` for input `(sigma, r)`.
    pub fn time_rate(&self, sigma: f64, r: f64) -> f64 {
        let (d5, d6, d7) = (self.delta5, self.delta6, self.delta7);
        let s2 = sigma * sigma;
        0.5 * d6 * ((s2 - 2.0 * r) * d7 - s2 * d7 * d7 * d6 + 2.0 * d6 * (r + d5))
    }

    pub fn power(&self) -> f64 {
        self.delta6 * self.delta7
    }

    pub fn target_params(&self, sigma: f64, r: f64) -> (f64, f64) {
        (self.delta7 * sigma, r + self.delta5)
    }

    /// Parameters of `second` applied after `self`, as a single transformation.
    pub fn then(&self, second: &BsmEquivalenceParams, sigma: f64, r: f64) -> BsmEquivalenceParams {
        let (s1, r1) = self.target_params(sigma, r);
        let k2 = second.time_rate(s1, r1);
        BsmEquivalenceParams {
            delta1: second.delta1 + second.delta6 * second.delta6 * self.delta1,
            delta2: second.delta2 + second.delta3 * self.delta2,
            delta3: second.delta3 * self.delta3,
            delta4: second.delta4
                * self.delta4.abs().powf(second.power())
                * (k2 * self.delta1).exp(),
            delta5: self.delta5 + second.delta5,
            delta6: second.delta6 * self.delta6,
            delta7: second.delta7 * self.delta7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeatEquivalenceParams {
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
    pub delta4: f64,
    pub delta5: f64,
    pub alpha_sign: f64,
    pub beta_sign: f64,
}

impl HeatEquivalenceParams {
    pub const IDENTITY: HeatEquivalenceParams = HeatEquivalenceParams {
        delta1: 0.0,
        delta2: 0.0,
        delta3: 1.0,
        delta4: 0.0,
        delta5: 1.0,
        alpha_sign: 1.0,
        beta_sign: 1.0,
    };

    pub fn discrete(alpha_sign: f64, beta_sign: f64) -> Self {
        Self {
            alpha_sign,
            beta_sign,
            ..Self::IDENTITY
        }
    }

    /// Composite of two continuous transformations (`second` after `self`).
    pub fn then(
        &self,
        second: &HeatEquivalenceParams,
    ) -> Result<HeatEquivalenceParams, EquivalenceError> {
        let signs = [
            self.alpha_sign,
            self.beta_sign,
            second.alpha_sign,
            second.beta_sign,
        ];
        if signs.iter().any(|&s| s != 1.0) {
            return Err(EquivalenceError::InvalidParams(
                "composition law covers the continuous part only".into(),
            ));
        }
        let e5 = second.delta5;
        Ok(HeatEquivalenceParams {
            delta1: e5 * e5 * self.delta1 + second.delta1,
            delta2: second.delta3 * self.delta2 + second.delta2,
            delta3: second.delta3 * self.delta3,
            delta4: e5 * self.delta4 + 0.5 * (1.0 - e5) * e5 * self.delta1 + second.delta4,
            delta5: e5 * self.delta5,
            ..Self::IDENTITY
        })
    }

    pub fn validate(&self) -> Result<(), EquivalenceError> {
        let all = [
            self.delta1,
            self.delta2,
            self.delta3,
            self.delta4,
            self.delta5,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(EquivalenceError::InvalidParams("non-finite delta".into()));
        }
        if self.delta3 == 0.0 || self.delta5 == 0.0 {
            return Err(EquivalenceError::InvalidParams(
                "delta3 and delta5 must be nonzero".into(),
            ));
        }
        for (v, name) in [(self.alpha_sign, "alpha"), (self.beta_sign, "beta")] {
            if v != 1.0 && v != -1.0 {
                return Err(EquivalenceError::InvalidParams(format!(
                    "{name} must be +1 or -1"
                )));
            }
        }
        Ok(())
    }
}

/// How a map was built; serialises to a small TOML document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MapRecord {
    Identity,
    BsmEquivalence {
        sigma: f64,
        r: f64,
        params: BsmEquivalenceParams,
    },
    Normalize {
        sigma: f64,
        r: f64,
    },
    Heat,
    HeatEquivalence {
        params: HeatEquivalenceParams,
    },
    Composite {
        steps: Vec<MapRecord>,
    },
}

#[derive(Serialize, Deserialize)]
struct RecordDoc {
    map: MapRecord,
}

impl MapRecord {
    pub fn to_text(&self) -> Result<String, EquivalenceError> {
        toml::to_string(&RecordDoc { map: self.clone() })
            .map_err(|e| EquivalenceError::Record(e.to_string()))
    }

    pub fn from_text(s: &str) -> Result<MapRecord, EquivalenceError> {
        toml::from_str::<RecordDoc>(s)
            .map(|d| d.map)
            .map_err(|e| EquivalenceError::Record(e.to_string()))
    }

    /// Rebuild the map this record describes.
    pub fn build(&self) -> Result<CoordinateMap, EquivalenceError> {
        match self {
            MapRecord::Identity => Ok(CoordinateMap::identity(FormParams::Heat)),
            MapRecord::BsmEquivalence { sigma, r, params } => {
                bsm_equivalence_map(params, *sigma, *r)
            }
            MapRecord::Normalize { sigma, r } => normalize_map(*sigma, *r),
            MapRecord::Heat => Ok(heat_map()),
            MapRecord::HeatEquivalence { params } => heat_equivalence_map(params),
            MapRecord::Composite { steps } => {
                let mut it = steps.iter();
                let first = it
                    .next()
                    .ok_or_else(|| EquivalenceError::Record("empty composite".into()))?;
                let mut m = first.build()?;
                for s in it {
                    m = m.then(&s.build()?)?;
                }
                Ok(m)
            }
        }
    }
}

/// Invertible point map `(x, t, u) -> (x~, t~, u~)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoordinateMap {
    pub forward: [Expr; 3],
    pub inverse: [Expr; 3],
    pub params: ParamTransport,
    pub record: MapRecord,
    /// Sign of `x` reconstructed by the inverse where the forward map uses `|x|`.
    pub branch: f64,
}

fn xs() -> Expr {
    Expr::sym(sym::X)
}
fn ts() -> Expr {
    Expr::sym(sym::T)
}
fn us() -> Expr {
    Expr::sym(sym::U)
}
fn c(v: f64) -> Expr {
    Expr::float(v)
}

fn point_binding(x: f64, t: f64, u: f64) -> Binding {
    Binding::new()
        .with_number(sym::X, x)
        .with_number(sym::T, t)
        .with_number(sym::U, u)
}

fn triple_binding(e: &[Expr; 3]) -> Binding {
    Binding::new()
        .with_expr(sym::X, e[0].clone())
        .with_expr(sym::T, e[1].clone())
        .with_expr(sym::U, e[2].clone())
}

impl CoordinateMap {
    pub fn identity(form: FormParams) -> Self {
        Self {
            forward: [xs(), ts(), us()],
            inverse: [xs(), ts(), us()],
            params: ParamTransport {
                from: form,
                to: form,
                source: SourceTransport::IDENTITY,
            },
            record: MapRecord::Identity,
            branch: 1.0,
        }
    }

    pub fn apply(&self, x: f64, t: f64, u: f64) -> Result<[f64; 3], EquivalenceError> {
        let b = point_binding(x, t, u);
        Ok([
            evaluate(&self.forward[0], &b, None)?,
            evaluate(&self.forward[1], &b, None)?,
            evaluate(&self.forward[2], &b, None)?,
        ])
    }

    pub fn apply_inverse(&self, x: f64, t: f64, u: f64) -> Result<[f64; 3], EquivalenceError> {
        let b = point_binding(x, t, u);
        Ok([
            evaluate(&self.inverse[0], &b, None)?,
            evaluate(&self.inverse[1], &b, None)?,
            evaluate(&self.inverse[2], &b, None)?,
        ])
    }

    /// `self` followed by `next`.
    pub fn then(&self, next: &CoordinateMap) -> Result<CoordinateMap, EquivalenceError> {
        if !self.params.to.approx_eq(&next.params.from) {
            return Err(EquivalenceError::FormMismatch {
                expected: next.params.from.describe(),
                got: self.params.to.describe(),
            });
        }
        let fb = triple_binding(&self.forward);
        let ib = triple_binding(&next.inverse);
        let forward = next.forward.clone().map(|e| substitute(&e, &fb));
        let inverse = self.inverse.clone().map(|e| substitute(&e, &ib));
        let mut steps = Vec::new();
        for r in [&self.record, &next.record] {
            match r {
                MapRecord::Composite { steps: s } => steps.extend(s.iter().cloned()),
                MapRecord::Identity => {}
                other => steps.push(other.clone()),
            }
        }
        let record = match steps.len() {
            0 => MapRecord::Identity,
            1 => steps.pop().unwrap_or(MapRecord::Identity),
            _ => MapRecord::Composite { steps },
        };
        Ok(CoordinateMap {
            forward,
            inverse,
            params: ParamTransport {
                from: self.params.from,
                to: next.params.to,
                source: self.params.source.then(&next.params.source),
            },
            record,
            branch: self.branch * next.branch,
        })
    }

    /// Equation obtained by pushing `pde` through the map.
    pub fn transport_pde(&self, pde: &EvolutionPde) -> Result<EvolutionPde, EquivalenceError> {
        if !self.params.from.matches(pde) {
            return Err(EquivalenceError::FormMismatch {
                expected: self.params.from.describe(),
                got: format!("{:?}(sigma={}, r={})", pde.form, pde.sigma, pde.r),
            });
        }
        let source = pde.source.transported(&self.params.source);
        Ok(match self.params.to {
            FormParams::Heat => EvolutionPde::heat(source),
            FormParams::Bsm { sigma, r } => EvolutionPde::bsm(sigma, r, source)
                .map_err(|e| EquivalenceError::InvalidParams(e.to_string()))?,
        })
    }

    /// `d(x~, t~)/d(x, t)` at a point.
    pub fn jacobian_det(&self, x: f64, t: f64, u: f64) -> Result<f64, EquivalenceError> {
        let b = point_binding(x, t, u);
        let d = |i: usize, s: &str| -> Result<f64, EquivalenceError> {
            Ok(evaluate(&differentiate(&self.forward[i], s)?, &b, None)?)
        };
        Ok(d(0, sym::X)? * d(1, sym::T)? - d(0, sym::T)? * d(1, sym::X)?)
    }

    /// Image of a solution `u(x, t)` evaluated at target coordinates.
    pub fn push_forward(
        &self,
        solution: &dyn Fn(f64, f64) -> f64,
        x_new: f64,
        t_new: f64,
    ) -> Result<f64, EquivalenceError> {
        // The x and t components of the inverse do not involve u.
        let [x, t, _] = self.apply_inverse(x_new, t_new, 0.0)?;
        let [_, _, u_new] = self.apply(x, t, solution(x, t))?;
        Ok(u_new)
    }
}

pub fn bsm_equivalence_map(
    p: &BsmEquivalenceParams,
    sigma: f64,
    r: f64,
) -> Result<CoordinateMap, EquivalenceError> {
    p.validate()?;
    if !(sigma > 0.0) || !r.is_finite() {
        return Err(EquivalenceError::InvalidParams(format!(
            "sigma={sigma}, r={r}"
        )));
    }
    let k = p.time_rate(sigma, r);
    let pw = p.power();
    let d6sq = p.delta6 * p.delta6;
    let forward = [
        c(p.delta4) * Expr::exp(c(k) * ts() + c(pw) * Expr::log(xs())),
        c(p.delta1) + c(d6sq) * ts(),
        c(p.delta2) + c(p.delta3) * us(),
    ];
    let t_back = (ts() - c(p.delta1)) / c(d6sq);
    let inverse = [
        Expr::exp((Expr::log(xs()) - c(p.delta4.abs().ln()) - c(k) * t_back.clone()) / c(pw)),
        t_back,
        (us() - c(p.delta2)) / c(p.delta3),
    ];
    let (s_out, r_out) = p.target_params(sigma, r);
    Ok(CoordinateMap {
        forward,
        inverse,
        params: ParamTransport {
            from: FormParams::Bsm { sigma, r },
            to: FormParams::Bsm {
                sigma: s_out,
                r: r_out,
            },
            source: SourceTransport {
                scale: p.delta3 / d6sq,
                shift: p.delta2,
                arg_scale: p.delta3,
            },
        },
        record: MapRecord::BsmEquivalence {
            sigma,
            r,
            params: *p,
        },
        branch: 1.0,
    })
}

/// Rate `c` in `x~ = exp(c t) |x|^(sqrt2/sigma)`.
pub fn normalize_rate(sigma: f64, r: f64) -> f64 {
    (sigma * sigma - 2.0 * r) / (std::f64::consts::SQRT_2 * sigma) - 1.0
}

/// Map to `sigma = sqrt 2`, `r = 0`.
pub fn normalize_map(sigma: f64, r: f64) -> Result<CoordinateMap, EquivalenceError> {
    if !(sigma > 0.0) || !sigma.is_finite() || !r.is_finite() {
        return Err(EquivalenceError::InvalidParams(format!(
            "sigma={sigma}, r={r}"
        )));
    }
    let rate = normalize_rate(sigma, r);
    let pw = std::f64::consts::SQRT_2 / sigma;
    let forward = [
        Expr::exp(c(rate) * ts() + c(pw) * Expr::log(xs())),
        ts(),
        us(),
    ];
    let inverse = [
        Expr::exp((Expr::log(xs()) - c(rate) * ts()) / c(pw)),
        ts(),
        us(),
    ];
    Ok(CoordinateMap {
        forward,
        inverse,
        params: ParamTransport {
            from: FormParams::Bsm { sigma, r },
            to: FormParams::Bsm {
                sigma: std::f64::consts::SQRT_2,
                r: 0.0,
            },
            source: SourceTransport::IDENTITY,
        },
        record: MapRecord::Normalize { sigma, r },
        branch: 1.0,
    })
}

/// `x^ = log|x~|`, `u^ = |x~|^(-1/2) u~`, from the normalised equation to the heat form.
pub fn heat_map() -> CoordinateMap {
    let forward = [
        Expr::log(xs()),
        ts(),
        Expr::exp(-Expr::log(xs()) / Expr::int(2)) * us(),
    ];
    let inverse = [Expr::exp(xs()), ts(), Expr::exp(xs() / Expr::int(2)) * us()];
    CoordinateMap {
        forward,
        inverse,
        params: ParamTransport {
            from: FormParams::Bsm {
                sigma: std::f64::consts::SQRT_2,
                r: 0.0,
            },
            to: FormParams::Heat,
            source: SourceTransport::IDENTITY,
        },
        record: MapRecord::Heat,
        branch: 1.0,
    }
}

/// Full chain from the equation with `(sigma, r)` to the heat form.
pub fn bsm_to_heat(sigma: f64, r: f64) -> Result<CoordinateMap, EquivalenceError> {
    normalize_map(sigma, r)?.then(&heat_map())
}

/// Continuous part followed by the discrete reflection selected by the signs.
pub fn heat_equivalence_map(p: &HeatEquivalenceParams) -> Result<CoordinateMap, EquivalenceError> {
    p.validate()?;
    let (d1, d2, d3, d4, d5) = (p.delta1, p.delta2, p.delta3, p.delta4, p.delta5);
    let half = |e: Expr| e / Expr::int(2);

    let x1 = c(d5) * xs() + c((1.0 - d5) * d5) * ts() + c(2.0 * d4);
    let continuous_fwd = [
        x1.clone(),
        c(d5 * d5) * ts() + c(d1),
        Expr::exp(-half(x1)) * (c(d3) * Expr::exp(half(xs())) * us() + c(d2)),
    ];
    let t0 = (ts() - c(d1)) / c(d5 * d5);
    let x0 = (xs() - c(2.0 * d4) - c((1.0 - d5) * d5) * t0.clone()) / c(d5);
    let continuous_inv = [
        x0.clone(),
        t0,
        Expr::exp(-half(x0)) * (Expr::exp(half(xs())) * us() - c(d2)) / c(d3),
    ];
    let continuous = CoordinateMap {
        forward: continuous_fwd,
        inverse: continuous_inv,
        params: ParamTransport {
            from: FormParams::Heat,
            to: FormParams::Heat,
            source: SourceTransport {
                scale: d3 / (d5 * d5),
                shift: d2,
                arg_scale: d3,
            },
        },
        record: MapRecord::Identity,
        branch: 1.0,
    };

    let (a, b) = (p.alpha_sign, p.beta_sign);
    let reflect = [
        c(b) * xs() + c(b - 1.0) * ts(),
        ts(),
        c(a) * Expr::exp(c(-0.5 * (b - 1.0)) * (xs() + ts())) * us(),
    ];
    let discrete = CoordinateMap {
        forward: reflect.clone(),
        inverse: reflect,
        params: ParamTransport {
            from: FormParams::Heat,
            to: FormParams::Heat,
            source: SourceTransport {
                scale: a,
                shift: 0.0,
                arg_scale: a,
            },
        },
        record: MapRecord::Identity,
        branch: 1.0,
    };
    let mut m = continuous.then(&discrete)?;
    m.record = MapRecord::HeatEquivalence { params: *p };
    Ok(m)
}

/// Heat-coordinate terminal datum for `u(x, T) = 1`.
pub fn transport_terminal(_terminal_time: f64) -> Expr {
    Expr::exp(-xs() / Expr::int(2))
}

/// Image of the barrier `x = H(t)`, `u = R(t)` under the chain to the heat form.
pub struct BarrierImage<'a> {
    chain: CoordinateMap,
    curve_fn: &'a dyn Fn(f64) -> f64,
    value_fn: &'a dyn Fn(f64) -> f64,
}

impl BarrierImage<'_> {
    fn image(&self, t: f64) -> Result<[f64; 3], EquivalenceError> {
        let h = (self.curve_fn)(t);
        if !(h > 0.0) {
            return Err(EquivalenceError::Domain(format!(
                "barrier H({t}) = {h} is not positive"
            )));
        }
        self.chain.apply(h, t, (self.value_fn)(t))
    }

    pub fn curve(&self, t: f64) -> Result<f64, EquivalenceError> {
        Ok(self.image(t)?[0])
    }

    pub fn value(&self, t: f64) -> Result<f64, EquivalenceError> {
        Ok(self.image(t)?[2])
    }

    pub fn chain(&self) -> &CoordinateMap {
        &self.chain
    }
}

pub fn transport_barrier<'a>(
    curve: &'a dyn Fn(f64) -> f64,
    value: &'a dyn Fn(f64) -> f64,
    sigma: f64,
    r: f64,
) -> Result<BarrierImage<'a>, EquivalenceError> {
    Ok(BarrierImage {
        chain: bsm_to_heat(sigma, r)?,
        curve_fn: curve,
        value_fn: value,
    })
}

/// Central-difference residual of a function against an equation.
pub fn fd_residual(
    pde: &EvolutionPde,
    u: &dyn Fn(f64, f64) -> Result<f64, EquivalenceError>,
    x: f64,
    t: f64,
    h: f64,
) -> Result<f64, EquivalenceError> {
    let hx = h * (1.0 + x.abs());
    let ht = h * (1.0 + t.abs());
    let u0 = u(x, t)?;
    let (up, um) = (u(x + hx, t)?, u(x - hx, t)?);
    let u_t = (u(x, t + ht)? - u(x, t - ht)?) / (2.0 * ht);
    let u_x = (up - um) / (2.0 * hx);
    let u_xx = (up - 2.0 * u0 + um) / (hx * hx);
    Ok(pde.residual_from_derivatives(x, u0, u_t, u_x, u_xx))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapCheck {
    pub max_residual_in: f64,
    pub max_residual_out: f64,
    pub pass: bool,
}

/// Push `witness` (a solution of `pde_in`) through `m` and measure the residual in `pde_out`.
pub fn verify_map_preserves_class(
    m: &CoordinateMap,
    pde_in: &EvolutionPde,
    pde_out: &EvolutionPde,
    witness: &dyn Fn(f64, f64) -> f64,
    points: &[(f64, f64)],
) -> Result<MapCheck, EquivalenceError> {
    let h = 1e-4;
    let mut max_in = 0.0f64;
    let mut max_out = 0.0f64;
    let pushed = |xn: f64, tn: f64| m.push_forward(witness, xn, tn);
    for &(x, t) in points {
        let w = |a: f64, b: f64| Ok(witness(a, b));
        max_in = max_in.max(fd_residual(pde_in, &w, x, t, h)?.abs());
        let [xn, tn, _] = m.apply(x, t, witness(x, t))?;
        max_out = max_out.max(fd_residual(pde_out, &pushed, xn, tn, h)?.abs());
    }
    Ok(MapCheck {
        max_residual_in: max_in,
        max_residual_out: max_out,
        pass: max_out <= 1e-5,
    })
}

/// Heat-form equation produced from `(sigma, r, case)` by the full chain.
pub fn heat_image(sigma: f64, r: f64, case: SourceCase) -> Result<EvolutionPde, EquivalenceError> {
    let pde = EvolutionPde::bsm(sigma, r, case)
        .map_err(|e| EquivalenceError::InvalidParams(e.to_string()))?;
    bsm_to_heat(sigma, r)?.transport_pde(&pde)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: [f64; 3], b: [f64; 3], tol: f64) -> bool {
        a.iter()
            .zip(b)
            .all(|(p, q)| (p - q).abs() <= tol * (1.0 + q.abs()))
    }

    #[test]
    fn identity_parameters_give_identity() {
        let m = bsm_equivalence_map(&BsmEquivalenceParams::IDENTITY, 0.3, 0.05).unwrap();
        assert!(close(
            m.apply(1.7, 0.4, 2.2).unwrap(),
            [1.7, 0.4, 2.2],
            1e-14
        ));
        let h = heat_equivalence_map(&HeatEquivalenceParams::IDENTITY).unwrap();
        assert!(close(
            h.apply(-0.6, 0.4, 2.2).unwrap(),
            [-0.6, 0.4, 2.2],
            1e-14
        ));
    }

    #[test]
    fn rate_shift_removes_interest() {
        let p = BsmEquivalenceParams {
            delta5: -0.07,
            ..BsmEquivalenceParams::IDENTITY
        };
        let m = bsm_equivalence_map(&p, 0.3, 0.07).unwrap();
        assert_eq!(m.params.to, FormParams::Bsm { sigma: 0.3, r: 0.0 });
    }

    #[test]
    fn normalisation_is_a_member_of_the_group() {
        let (sigma, r) = (0.45, 0.03);
        let p = BsmEquivalenceParams {
            delta5: -r,
            delta7: std::f64::consts::SQRT_2 / sigma,
            ..BsmEquivalenceParams::IDENTITY
        };
        let g = bsm_equivalence_map(&p, sigma, r).unwrap();
        let n = normalize_map(sigma, r).unwrap();
        assert_eq!(g.params.to, n.params.to);
        for (x, t) in [(0.5, 0.1), (2.0, 0.9), (1.3, -0.4)] {
            assert!(close(
                g.apply(x, t, 1.1).unwrap(),
                n.apply(x, t, 1.1).unwrap(),
                1e-13
            ));
        }
    }

    #[test]
    fn normalisation_examples() {
        let n = normalize_map(std::f64::consts::SQRT_2, 0.0).unwrap();
        assert!(close(
            n.apply(2.5, 0.7, 1.0).unwrap(),
            [2.5, 0.7, 1.0],
            1e-14
        ));
        let n = normalize_map(1.0, 0.5).unwrap();
        let [xt, _, _] = n.apply(1.5, 0.3, 1.0).unwrap();
        assert!((xt - (-0.3f64).exp() * 1.5f64.powf(std::f64::consts::SQRT_2)).abs() < 1e-13);
        assert!(close(
            n.apply_inverse(xt, 0.3, 1.0).unwrap(),
            [1.5, 0.3, 1.0],
            1e-13
        ));
        assert!(matches!(
            n.apply(0.0, 0.3, 1.0),
            Err(EquivalenceError::Expr(_))
        ));
    }

    #[test]
    fn heat_map_examples() {
        let h = heat_map();
        assert!(close(
            h.apply(1.0, 0.2, 3.0).unwrap(),
            [0.0, 0.2, 3.0],
            1e-15
        ));
        let e2 = 2f64.exp();
        assert!(close(
            h.apply(e2, 0.2, 3.0).unwrap(),
            [2.0, 0.2, 3.0 / 1f64.exp()],
            1e-14
        ));
        let p = h.apply(1f64.exp(), 0.5, 2.0).unwrap();
        assert!(close(
            h.apply_inverse(p[0], p[1], p[2]).unwrap(),
            [1f64.exp(), 0.5, 2.0],
            1e-13
        ));
    }

    #[test]
    fn discrete_heat_maps() {
        let m = heat_equivalence_map(&HeatEquivalenceParams::discrete(1.0, -1.0)).unwrap();
        let (x, t, u) = (0.3f64, 0.2f64, 1.4f64);
        let expect = [-x - 2.0 * t, t, (x + t).exp() * u];
        assert!(close(m.apply(x, t, u).unwrap(), expect, 1e-14));
        let m = heat_equivalence_map(&HeatEquivalenceParams::discrete(-1.0, 1.0)).unwrap();
        assert!(close(m.apply(x, t, u).unwrap(), [x, t, -u], 1e-14));
        assert_eq!(m.params.source.scale, -1.0);
    }

    #[test]
    fn composition_of_sources() {
        let a = SourceTransport {
            scale: 2.0,
            shift: 0.3,
            arg_scale: 1.5,
        };
        let b = SourceTransport {
            scale: -0.5,
            shift: 1.1,
            arg_scale: 0.7,
        };
        let f = |z: f64| z * z + z.sin();
        let z = 0.83;
        let two_step = b.apply(|w| a.apply(f, w), z);
        assert!((a.then(&b).apply(f, z) - two_step).abs() < 1e-14);
    }

    #[test]
    fn bsm_group_closure() {
        let (sigma, r) = (0.4, 0.06);
        let p = BsmEquivalenceParams {
            delta1: 0.2,
            delta2: -0.3,
            delta3: 1.4,
            delta4: 0.8,
            delta5: 0.01,
            delta6: 1.1,
            delta7: 0.9,
        };
        let q = BsmEquivalenceParams {
            delta1: -0.1,
            delta2: 0.5,
            delta3: -0.7,
            delta4: 1.3,
            delta5: -0.03,
            delta6: 0.8,
            delta7: 1.2,
        };
        let m1 = bsm_equivalence_map(&p, sigma, r).unwrap();
        let (s1, r1) = p.target_params(sigma, r);
        let m2 = bsm_equivalence_map(&q, s1, r1).unwrap();
        let two = m1.then(&m2).unwrap();
        let one = bsm_equivalence_map(&p.then(&q, sigma, r), sigma, r).unwrap();
        for (x, t) in [(0.7, 0.1), (1.9, 0.6), (3.0, -0.2)] {
            assert!(close(
                two.apply(x, t, 0.9).unwrap(),
                one.apply(x, t, 0.9).unwrap(),
                1e-12
            ));
        }
        assert!(two.params.to.approx_eq(&one.params.to));
    }

    #[test]
    fn heat_group_closure() {
        let p = HeatEquivalenceParams {
            delta1: 0.2,
            delta2: -0.4,
            delta3: 1.3,
            delta4: 0.25,
            delta5: 0.8,
            ..HeatEquivalenceParams::IDENTITY
        };
        let q = HeatEquivalenceParams {
            delta1: -0.5,
            delta2: 0.1,
            delta3: -0.6,
            delta4: -0.2,
            delta5: 1.5,
            ..HeatEquivalenceParams::IDENTITY
        };
        let two = heat_equivalence_map(&p)
            .unwrap()
            .then(&heat_equivalence_map(&q).unwrap())
            .unwrap();
        let one = heat_equivalence_map(&p.then(&q).unwrap()).unwrap();
        for (x, t) in [(0.7, 0.1), (-1.9, 0.6), (3.0, -0.2)] {
            assert!(close(
                two.apply(x, t, 0.9).unwrap(),
                one.apply(x, t, 0.9).unwrap(),
                1e-12
            ));
        }
        assert!(p.then(&HeatEquivalenceParams::discrete(1.0, -1.0)).is_err());
    }

    #[test]
    fn record_round_trip() {
        let m = bsm_to_heat(0.3, 0.02).unwrap();
        let text = m.record.to_text().unwrap();
        let back = MapRecord::from_text(&text).unwrap().build().unwrap();
        assert!(close(
            back.apply(1.2, 0.3, 0.8).unwrap(),
            m.apply(1.2, 0.3, 0.8).unwrap(),
            1e-15
        ));
    }

    #[test]
    fn terminal_datum_by_composition() {
        let chain = bsm_to_heat(0.35, 0.04).unwrap();
        let datum = transport_terminal(1.0);
        for i in 0..20 {
            let xh = -2.0 + 0.2 * i as f64;
            let v = chain.push_forward(&|_, _| 1.0, xh, 1.0).unwrap();
            let b = Binding::new().with_number(sym::X, xh);
            assert!((v - evaluate(&datum, &b, None).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn barrier_image_examples() {
        let one = |_t: f64| 1.0;
        let rebate = |t: f64| 0.5 + t;
        let img = transport_barrier(&one, &rebate, std::f64::consts::SQRT_2, 0.0).unwrap();
        assert!(img.curve(0.3).unwrap().abs() < 1e-15);
        assert!((img.value(0.3).unwrap() - 0.8).abs() < 1e-15);
        let grow = |t: f64| t.exp();
        let img = transport_barrier(&grow, &rebate, std::f64::consts::SQRT_2, 0.0).unwrap();
        assert!((img.curve(0.3).unwrap() - 0.3).abs() < 1e-14);
        let neg = |_t: f64| -1.0;
        let img = transport_barrier(&neg, &rebate, 0.3, 0.0).unwrap();
        assert!(matches!(img.curve(0.1), Err(EquivalenceError::Domain(_))));
    }

    #[test]
    fn barrier_image_matches_formula() {
        let (sigma, r) = (0.3, 0.05);
        let hcurve = |t: f64| 0.9 * (0.2 * t).exp();
        let rebate = |t: f64| 1.0 - 0.1 * t;
        let img = transport_barrier(&hcurve, &rebate, sigma, r).unwrap();
        for t in [0.0, 0.4, 0.9] {
            let xh =
                normalize_rate(sigma, r) * t + std::f64::consts::SQRT_2 / sigma * hcurve(t).ln();
            assert!((img.curve(t).unwrap() - xh).abs() < 1e-12);
            assert!((img.value(t).unwrap() - (-xh / 2.0).exp() * rebate(t)).abs() < 1e-12);
        }
    }

    #[test]
    fn heat_image_is_the_heat_form() {
        let pde = heat_image(
            0.3,
            0.05,
            SourceCase::Quadratic {
                alpha: 1.0,
                beta: 0.5,
            },
        )
        .unwrap();
        assert_eq!(pde.form, PdeForm::Heat);
        assert_eq!(
            pde.source,
            SourceCase::Quadratic {
                alpha: 1.0,
                beta: 0.5
            }
        );
    }

    #[test]
    fn mismatched_composition_rejected() {
        let h = heat_map();
        assert!(matches!(
            h.then(&h),
            Err(EquivalenceError::FormMismatch { .. })
        ));
    }
}
