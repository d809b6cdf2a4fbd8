//! Backward theta-scheme for the equation in log-price coordinates, with a
//! boundary-fixing coordinate for moving barriers and Newton iteration on
//! the source term. Each Newton step solves one tridiagonal system.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::jet::{EvolutionPde, PdeForm};
use crate::solutions::ClosedFormSolution;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error("Newton iteration did not converge at step {step} (t = {t})")]
    NewtonDivergence { step: usize, t: f64 },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("singular tridiagonal system")]
    SingularSystem,
}

/// Uniform grid in the working coordinate and in time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid1D {
    /// Number of space intervals.
    pub n_space: usize,
    /// Number of time steps.
    pub n_time: usize,
    pub y_min: f64,
    pub y_max: f64,
    pub terminal_time: f64,
    pub t0: f64,
}

impl Grid1D {
    pub fn validate(&self) -> Result<(), SolverError> {
        if self.n_space < 8 || self.n_time < 4 {
            return Err(SolverError::InvalidGrid(format!(
                "need n_space >= 8 and n_time >= 4, got {}x{}",
                self.n_space, self.n_time
            )));
        }
        if !(self.y_min < self.y_max) || !(self.t0 < self.terminal_time) {
            return Err(SolverError::InvalidGrid(
                "need y_min < y_max and t0 < T".into(),
            ));
        }
        let all = [self.y_min, self.y_max, self.terminal_time, self.t0];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(SolverError::InvalidGrid("non-finite bounds".into()));
        }
        Ok(())
    }

    pub fn dy(&self) -> f64 {
        (self.y_max - self.y_min) / self.n_space as f64
    }

    pub fn dt(&self) -> f64 {
        (self.terminal_time - self.t0) / self.n_time as f64
    }

    pub fn y(&self, j: usize) -> f64 {
        self.y_min + self.dy() * j as f64
    }

    pub fn t(&self, i: usize) -> f64 {
        if i == self.n_time {
            self.terminal_time
        } else {
            self.t0 + self.dt() * i as f64
        }
    }

    /// Same domain with both resolutions multiplied by `k`.
    pub fn refined(&self, k: usize) -> Grid1D {
        Grid1D {
            n_space: self.n_space * k,
            n_time: self.n_time * k,
            ..*self
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FarField {
    /// Dirichlet values taken from supplied data (normally a closed form).
    Dirichlet,
    /// `u_yy = 0` at the boundary.
    ZeroSecondDerivative,
}

impl FarField {
    pub fn name(&self) -> &'static str {
        match self {
            FarField::Dirichlet => "dirichlet-from-closed-form",
            FarField::ZeroSecondDerivative => "zero-second-derivative",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub theta: f64,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    pub far_field: FarField,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            theta: 0.5,
            newton_tol: 1e-12,
            newton_max_iter: 30,
            far_field: FarField::ZeroSecondDerivative,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(SolverError::InvalidConfig(format!(
                "theta = {} not in [0, 1]",
                self.theta
            )));
        }
        if !(self.newton_tol > 0.0) || self.newton_max_iter == 0 {
            return Err(SolverError::InvalidConfig(
                "newton_tol must be positive and newton_max_iter nonzero".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkingCoordinate {
    /// `y = log x`
    LogPrice,
    /// `z = log x - log H(t)`
    BarrierFixed,
}

/// Values on the grid; row `i` is time `grid.t(i)`, so the last row is the terminal data.
#[derive(Debug, Clone, PartialEq)]
pub struct NumericSolution {
    pub grid: Grid1D,
    pub values: Vec<Vec<f64>>,
    pub x_nodes: Vec<Vec<f64>>,
    pub coordinate: WorkingCoordinate,
    pub far_field: FarField,
}

impl NumericSolution {
    pub fn times(&self) -> Vec<f64> {
        (0..=self.grid.n_time).map(|i| self.grid.t(i)).collect()
    }

    /// Row closest to time `t`.
    pub fn row_at(&self, t: f64) -> usize {
        let i = ((t - self.grid.t0) / self.grid.dt()).round();
        i.clamp(0.0, self.grid.n_time as f64) as usize
    }
}

/// Thomas algorithm for `a_i x_{i-1} + b_i x_i + c_i x_{i+1} = d_i`.
pub fn solve_tridiagonal(
    a: &[f64],
    b: &[f64],
    c: &[f64],
    d: &[f64],
) -> Result<Vec<f64>, SolverError> {
    let n = b.len();
    let mut cp = vec![0.0; n];
    let mut dp = vec![0.0; n];
    let mut denom = b[0];
    if denom == 0.0 {
        return Err(SolverError::SingularSystem);
    }
    cp[0] = c[0] / denom;
    dp[0] = d[0] / denom;
    for i in 1..n {
        denom = b[i] - a[i] * cp[i - 1];
        if denom == 0.0 || !denom.is_finite() {
            return Err(SolverError::SingularSystem);
        }
        cp[i] = c[i] / denom;
        dp[i] = (d[i] - a[i] * dp[i - 1]) / denom;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = dp[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = dp[i] - cp[i] * x[i + 1];
    }
    Ok(x)
}

enum Edge {
    Dirichlet(f64),
    Flat,
}

/// Space operator `A v_{j-1} + B v_j + C v_{j+1}` for diffusion `d` and advection `b`.
#[derive(Clone, Copy)]
struct Stencil {
    a: f64,
    b: f64,
    c: f64,
}

impl Stencil {
    fn new(diffusion: f64, advection: f64, h: f64) -> Self {
        Self {
            a: diffusion / (h * h) - advection / (2.0 * h),
            b: -2.0 * diffusion / (h * h),
            c: diffusion / (h * h) + advection / (2.0 * h),
        }
    }

    fn apply(&self, v: &[f64], j: usize) -> f64 {
        self.a * v[j - 1] + self.b * v[j] + self.c * v[j + 1]
    }
}

fn fill_edges(v: &mut [f64], left: &Edge, right: &Edge) {
    let n = v.len() - 1;
    v[0] = match left {
        Edge::Dirichlet(g) => *g,
        Edge::Flat => 2.0 * v[1] - v[2],
    };
    v[n] = match right {
        Edge::Dirichlet(g) => *g,
        Edge::Flat => 2.0 * v[n - 1] - v[n - 2],
    };
}

struct StepInput<'a> {
    pde: &'a EvolutionPde,
    cfg: &'a SolverConfig,
    dt: f64,
    old: &'a [f64],
    old_stencil: Stencil,
    new_stencil: Stencil,
    left: Edge,
    right: Edge,
    step: usize,
    t: f64,
}

/// One backward step `t + dt -> t`.
fn theta_step(inp: StepInput<'_>) -> Result<Vec<f64>, SolverError> {
    let n = inp.old.len() - 1;
    let th = inp.cfg.theta;
    let dt = inp.dt;
    let f = |z: f64| inp.pde.source.f(z);
    let df = |z: f64| inp.pde.source.df(z);

    let rhs: Vec<f64> = (1..n)
        .map(|j| inp.old[j] + dt * (1.0 - th) * (inp.old_stencil.apply(inp.old, j) + f(inp.old[j])))
        .collect();

    let mut v = inp.old.to_vec();
    fill_edges(&mut v, &inp.left, &inp.right);
    let s = inp.new_stencil;
    let m = n - 1;
    for _ in 0..inp.cfg.newton_max_iter {
        let mut sub = vec![-dt * th * s.a; m];
        let mut sup = vec![-dt * th * s.c; m];
        let mut diag = vec![0.0; m];
        let mut g = vec![0.0; m];
        for k in 0..m {
            let j = k + 1;
            diag[k] = 1.0 - dt * th * (s.b + df(v[j]));
            g[k] = v[j] - dt * th * (s.apply(&v, j) + f(v[j])) - rhs[k];
        }
        if let Edge::Flat = inp.left {
            diag[0] += -dt * th * s.a * 2.0;
            sup[0] += dt * th * s.a;
        }
        if let Edge::Flat = inp.right {
            diag[m - 1] += -dt * th * s.c * 2.0;
            sub[m - 1] += dt * th * s.c;
        }
        let neg: Vec<f64> = g.iter().map(|x| -x).collect();
        let delta = solve_tridiagonal(&sub, &diag, &sup, &neg)?;
        let mut size = 0.0f64;
        for k in 0..m {
            v[k + 1] += delta[k];
            size = size.max(delta[k].abs());
        }
        fill_edges(&mut v, &inp.left, &inp.right);
        if !size.is_finite() {
            break;
        }
        if size <= inp.cfg.newton_tol * (1.0 + v.iter().fold(0.0f64, |a, x| a.max(x.abs()))) {
            return Ok(v);
        }
    }
    Err(SolverError::NewtonDivergence {
        step: inp.step,
        t: inp.t,
    })
}

fn check_pde(pde: &EvolutionPde) -> Result<(), SolverError> {
    if pde.form != PdeForm::Bsm {
        return Err(SolverError::InvalidConfig(
            "solver works on the original equation".into(),
        ));
    }
    if !(pde.sigma > 0.0) {
        return Err(SolverError::InvalidConfig("sigma must be positive".into()));
    }
    Ok(())
}

/// Terminal-value problem on `y = log x` in `[y_min, y_max]`; `far` supplies
/// Dirichlet data `(x, t) -> u` when the far field is Dirichlet.
pub fn solve_terminal(
    pde: &EvolutionPde,
    payoff: &dyn Fn(f64) -> f64,
    grid: &Grid1D,
    cfg: &SolverConfig,
    far: Option<&dyn Fn(f64, f64) -> f64>,
) -> Result<NumericSolution, SolverError> {
    grid.validate()?;
    cfg.validate()?;
    check_pde(pde)?;
    if cfg.far_field == FarField::Dirichlet && far.is_none() {
        return Err(SolverError::InvalidConfig(
            "Dirichlet far field needs boundary data".into(),
        ));
    }
    let n = grid.n_space;
    let xs: Vec<f64> = (0..=n).map(|j| grid.y(j).exp()).collect();
    let s2 = pde.sigma * pde.sigma;
    let stencil = Stencil::new(0.5 * s2, pde.r - 0.5 * s2, grid.dy());

    let mut values = vec![Vec::new(); grid.n_time + 1];
    values[grid.n_time] = xs.iter().map(|&x| payoff(x)).collect();
    if values[grid.n_time].iter().any(|v| !v.is_finite()) {
        return Err(SolverError::Domain(
            "payoff is not finite on the grid".into(),
        ));
    }
    let edge = |x: f64, t: f64| match (cfg.far_field, far) {
        (FarField::Dirichlet, Some(g)) => Edge::Dirichlet(g(x, t)),
        _ => Edge::Flat,
    };
    for i in (0..grid.n_time).rev() {
        let t = grid.t(i);
        let next = theta_step(StepInput {
            pde,
            cfg,
            dt: grid.t(i + 1) - t,
            old: &values[i + 1],
            old_stencil: stencil,
            new_stencil: stencil,
            left: edge(xs[0], t),
            right: edge(xs[n], t),
            step: i,
            t,
        })?;
        values[i] = next;
    }
    Ok(NumericSolution {
        grid: *grid,
        values,
        x_nodes: vec![xs; grid.n_time + 1],
        coordinate: WorkingCoordinate::LogPrice,
        far_field: cfg.far_field,
    })
}

/// Data of a down-and-out problem on `x > H(t)`.
pub struct BarrierProblem<'a> {
    pub barrier: &'a dyn Fn(f64) -> f64,
    /// `H'(t) / H(t)`; central differences of `log H` when absent.
    pub barrier_rate: Option<&'a dyn Fn(f64) -> f64>,
    pub rebate: &'a dyn Fn(f64) -> f64,
    /// `u(x, T)`.
    pub terminal: &'a dyn Fn(f64) -> f64,
    /// Dirichlet data `(x, t) -> u` for the far boundary.
    pub far: Option<&'a dyn Fn(f64, f64) -> f64>,
}

/// Barrier problem in `z = log x - log H(t)`, `z` in `[y_min, y_max]` with `y_min = 0`
/// on the barrier.
pub fn solve_barrier(
    pde: &EvolutionPde,
    problem: &BarrierProblem<'_>,
    grid: &Grid1D,
    cfg: &SolverConfig,
) -> Result<NumericSolution, SolverError> {
    grid.validate()?;
    cfg.validate()?;
    check_pde(pde)?;
    if cfg.far_field == FarField::Dirichlet && problem.far.is_none() {
        return Err(SolverError::InvalidConfig(
            "Dirichlet far field needs boundary data".into(),
        ));
    }
    let n = grid.n_space;
    let log_h = |t: f64| -> Result<f64, SolverError> {
        let h = (problem.barrier)(t);
        if !(h > 0.0) || !h.is_finite() {
            return Err(SolverError::Domain(format!(
                "barrier H({t}) = {h} is not positive"
            )));
        }
        Ok(h.ln())
    };
    let rate = |t: f64| -> Result<f64, SolverError> {
        match problem.barrier_rate {
            Some(g) => Ok(g(t)),
            None => {
                let e = 1e-6 * (1.0 + t.abs());
                Ok((log_h(t + e)? - log_h(t - e)?) / (2.0 * e))
            }
        }
    };
    let s2 = pde.sigma * pde.sigma;
    let stencil_at = |t: f64| -> Result<Stencil, SolverError> {
        Ok(Stencil::new(
            0.5 * s2,
            pde.r - 0.5 * s2 - rate(t)?,
            grid.dy(),
        ))
    };
    let nodes_at = |t: f64| -> Result<Vec<f64>, SolverError> {
        let lh = log_h(t)?;
        Ok((0..=n).map(|j| (lh + grid.y(j)).exp()).collect())
    };

    let mut x_nodes = vec![Vec::new(); grid.n_time + 1];
    let mut values = vec![Vec::new(); grid.n_time + 1];
    x_nodes[grid.n_time] = nodes_at(grid.terminal_time)?;
    values[grid.n_time] = x_nodes[grid.n_time]
        .iter()
        .map(|&x| (problem.terminal)(x))
        .collect();
    if values[grid.n_time].iter().any(|v| !v.is_finite()) {
        return Err(SolverError::Domain(
            "terminal data is not finite on the grid".into(),
        ));
    }
    let mut old_stencil = stencil_at(grid.terminal_time)?;
    for i in (0..grid.n_time).rev() {
        let t = grid.t(i);
        let xs = nodes_at(t)?;
        let new_stencil = stencil_at(t)?;
        let right = match (cfg.far_field, problem.far) {
            (FarField::Dirichlet, Some(g)) => Edge::Dirichlet(g(xs[n], t)),
            _ => Edge::Flat,
        };
        values[i] = theta_step(StepInput {
            pde,
            cfg,
            dt: grid.t(i + 1) - t,
            old: &values[i + 1],
            old_stencil,
            new_stencil,
            left: Edge::Dirichlet((problem.rebate)(t)),
            right,
            step: i,
            t,
        })?;
        x_nodes[i] = xs;
        old_stencil = new_stencil;
    }
    Ok(NumericSolution {
        grid: *grid,
        values,
        x_nodes,
        coordinate: WorkingCoordinate::BarrierFixed,
        far_field: cfg.far_field,
    })
}

/// Barrier problem whose barrier, rebate, terminal and far-field data all come
/// from a closed-form solution, followed by the error against it.
pub fn solve_closed_form_barrier(
    s: &ClosedFormSolution,
    grid: &Grid1D,
    cfg: &SolverConfig,
    collar: usize,
) -> Result<(NumericSolution, ErrorReport), SolverError> {
    let dom = |e: crate::solutions::SolutionError| SolverError::Domain(e.to_string());
    for t in [grid.t0, grid.terminal_time] {
        s.eval_h(t).map_err(dom)?;
    }
    let barrier = |t: f64| s.eval_h(t).unwrap_or(f64::NAN);
    let rate = |t: f64| s.h_rate(t).unwrap_or(f64::NAN);
    let rebate = |t: f64| s.eval_r(t).unwrap_or(f64::NAN);
    let terminal_time = grid.terminal_time;
    let terminal = |x: f64| s.eval_u(x, terminal_time).unwrap_or(f64::NAN);
    let far = |x: f64, t: f64| s.eval_u(x, t).unwrap_or(f64::NAN);
    let problem = BarrierProblem {
        barrier: &barrier,
        barrier_rate: Some(&rate),
        rebate: &rebate,
        terminal: &terminal,
        far: Some(&far),
    };
    let num = solve_barrier(&s.pde(), &problem, grid, cfg)?;
    let exact = |x: f64, t: f64| s.eval_u(x, t).ok();
    let rep = error_report(&num, &exact, collar);
    Ok((num, rep))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorReport {
    pub l_inf: f64,
    /// Root mean square over the compared nodes.
    pub l2: f64,
    pub n_points: usize,
}

/// Errors over interior space nodes of every time row; `collar` nodes next to
/// each space boundary are skipped, as are nodes where `exact` returns `None`.
pub fn error_report(
    num: &NumericSolution,
    exact: &dyn Fn(f64, f64) -> Option<f64>,
    collar: usize,
) -> ErrorReport {
    let n = num.grid.n_space;
    let mut l_inf = 0.0f64;
    let mut sq = 0.0;
    let mut count = 0usize;
    for (i, row) in num.values.iter().enumerate() {
        let t = num.grid.t(i);
        let hi = n.saturating_sub(collar).max(1 + collar);
        for (v, &x) in row[1 + collar..hi]
            .iter()
            .zip(&num.x_nodes[i][1 + collar..hi])
        {
            if let Some(e) = exact(x, t) {
                let d = (v - e).abs();
                l_inf = l_inf.max(d);
                sq += d * d;
                count += 1;
            }
        }
    }
    ErrorReport {
        l_inf,
        l2: if count > 0 {
            (sq / count as f64).sqrt()
        } else {
            0.0
        },
        n_points: count,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub n_space: usize,
    pub n_time: usize,
    pub l_inf: f64,
    pub l2: f64,
    /// Observed order against the previous row, `log2(e_prev / e)` for halved steps.
    pub order: Option<f64>,
}

pub fn convergence_table(runs: &[(Grid1D, ErrorReport)]) -> Vec<ConvergenceRow> {
    let mut rows: Vec<ConvergenceRow> = Vec::with_capacity(runs.len());
    for (k, (g, rep)) in runs.iter().enumerate() {
        let order = if k == 0 {
            None
        } else {
            let (pg, prev) = &runs[k - 1];
            let ratio = g.n_space as f64 / pg.n_space as f64;
            Some((prev.l_inf / rep.l_inf).ln() / ratio.ln())
        };
        rows.push(ConvergenceRow {
            n_space: g.n_space,
            n_time: g.n_time,
            l_inf: rep.l_inf,
            l2: rep.l2,
            order,
        });
    }
    rows
}
