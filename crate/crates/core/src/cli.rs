//! Command-line driver. `run` parses arguments, executes one subcommand and
//! returns the process exit code.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use thiserror::Error;

use crate::classification::{
    generators_for, terminal_datum, terminal_subalgebra, ClassificationError, SourceCase,
};
use crate::equivalence::{bsm_to_heat, transport_barrier, EquivalenceError};
use crate::expr::Expr;
use crate::jet::{
    is_symmetry, terminal_invariance, EvolutionPde, PdeForm, SymmetryCheckConfig, VectorField,
};
use crate::solutions::{
    random_admissible, reduction_for, reference_solution, ClosedFormSolution, LogBarrierSolution,
    OdeForm, QuadraticBarrierSolution, SolutionError, VariantKind,
};
use crate::solver::{
    convergence_table, error_report, solve_barrier, solve_closed_form_barrier, BarrierProblem,
    FarField, Grid1D, SolverConfig, SolverError,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;
pub const EXIT_USAGE: i32 = 64;
pub const EXIT_DOMAIN: i32 = 65;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("{0}")]
    Domain(String),
    #[error("solver failure: {0}")]
    Solver(#[from] SolverError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Domain(_) => EXIT_DOMAIN,
            CliError::Solver(SolverError::Domain(_)) => EXIT_DOMAIN,
            CliError::Solver(_) => EXIT_SOLVER,
            CliError::Io(_) | CliError::Csv(_) => EXIT_FAILURE,
        }
    }
}

impl From<ClassificationError> for CliError {
    fn from(e: ClassificationError) -> Self {
        match e {
            ClassificationError::UnknownCase(_) => CliError::Usage(e.to_string()),
            _ => CliError::Domain(e.to_string()),
        }
    }
}

impl From<SolutionError> for CliError {
    fn from(e: SolutionError) -> Self {
        CliError::Domain(e.to_string())
    }
}

impl From<EquivalenceError> for CliError {
    fn from(e: EquivalenceError) -> Self {
        CliError::Domain(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "semilinear-bsm",
    version,
    about = "Symmetry, closed-form and solver checks for the semilinear BSM equation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub opts: Options,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check every registered generator, plus terminal subalgebras.
    VerifySymmetries,
    /// Boundary, residual and reduction checks for the closed forms.
    VerifySolutions,
    /// Map the barrier and terminal data to another coordinate system.
    Transform {
        #[arg(long, value_enum)]
        to: Target,
    },
    /// Tabulate a closed form, or solve the exponential-barrier problem.
    Price,
    /// Solver against closed form on two grids.
    Compare,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Target {
    Heat,
    Bsm,
}

#[derive(Debug, Clone, Default, Args)]
pub struct Options {
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub case: Option<String>,
    #[arg(long, global = true)]
    pub variant: Option<String>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    /// `NxM`: space intervals by time steps.
    #[arg(long, global = true)]
    pub grid: Option<String>,
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
    #[arg(long, global = true)]
    pub all: bool,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub alpha: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub beta: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub gamma: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub delta: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub sigma: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub r: Option<f64>,
    /// Terminal time, written `T=1` or `1`.
    #[arg(long, global = true)]
    pub terminal: Option<String>,
}

/// `[scenario]` table of a config file. Every key is optional.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub case: Option<String>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub gamma: Option<f64>,
    pub delta: Option<f64>,
    pub sigma: Option<f64>,
    pub r: Option<f64>,
    #[serde(rename = "T")]
    pub terminal_time: Option<f64>,
    pub variant: Option<String>,
    pub lambda: Option<f64>,
    pub mu: Option<f64>,
    pub kappa: Option<f64>,
    /// Integration constant of `H` in the closed forms.
    pub integration_a: Option<f64>,
    /// Second integration constant of the log family with `lambda = 0`.
    pub integration_c: Option<f64>,
    pub grid: Option<String>,
    pub z_max: Option<f64>,
    pub x_min: Option<f64>,
    pub x_max: Option<f64>,
    pub theta: Option<f64>,
    pub far_field: Option<FarField>,
    pub seed: Option<u64>,
    pub tol: Option<f64>,
    pub output: Option<PathBuf>,
    /// Exponential barrier `H(t) = b K exp(-a t)` with payoff `max(x - K, 0)`.
    pub strike: Option<f64>,
    pub barrier_decay: Option<f64>,
    pub barrier_level: Option<f64>,
    pub rebate: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    scenario: Scenario,
}

impl Scenario {
    pub fn from_text(text: &str) -> Result<Scenario, CliError> {
        let f: ConfigFile =
            toml::from_str(text).map_err(|e| CliError::Usage(format!("config: {e}")))?;
        Ok(f.scenario)
    }

    pub fn load(path: &Path) -> Result<Scenario, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
        Self::from_text(&text)
    }

    /// Command-line flags take precedence over the file.
    fn merge(mut self, o: &Options) -> Result<Scenario, CliError> {
        macro_rules! over {
            ($($f:ident),*) => { $( if o.$f.is_some() { self.$f = o.$f.clone(); } )* };
        }
        over!(case, variant, seed, tol, grid, alpha, beta, gamma, delta, sigma, r);
        if o.output.is_some() {
            self.output = o.output.clone();
        }
        if let Some(t) = &o.terminal {
            let v = t.strip_prefix("T=").unwrap_or(t);
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|_| CliError::Usage(format!("--terminal expects T=<number>, got {t}")))?;
            self.terminal_time = Some(v);
        }
        Ok(self)
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(42)
    }

    pub fn sigma(&self) -> f64 {
        self.sigma.unwrap_or(0.4)
    }

    pub fn rate(&self) -> f64 {
        self.r.unwrap_or(0.05)
    }

    pub fn terminal_time(&self) -> f64 {
        self.terminal_time.unwrap_or(1.0)
    }

    /// Case with the defaults of the `--all` sweep for missing parameters.
    pub fn source_case(&self) -> Result<Option<SourceCase>, CliError> {
        let Some(name) = self.case.as_deref() else {
            return Ok(None);
        };
        let d =
            default_case(name).ok_or_else(|| CliError::Usage(format!("unknown case '{name}'")))?;
        let pick = |v: Option<f64>, i: usize| v.or(d.get(i).copied());
        let case = SourceCase::from_name(
            name,
            pick(self.alpha, 0),
            pick(self.beta, 1),
            pick(self.gamma, 2),
            pick(self.delta, 3),
        )?;
        Ok(Some(case))
    }

    pub fn grid(&self) -> Result<(usize, usize), CliError> {
        match &self.grid {
            None => Ok((100, 100)),
            Some(g) => parse_grid(g),
        }
    }

    pub fn variant(&self) -> Result<Option<VariantKind>, CliError> {
        match self.variant.as_deref() {
            None => Ok(None),
            Some(v) => VariantKind::from_name(v)
                .map(Some)
                .ok_or_else(|| CliError::Usage(format!("unknown variant '{v}'"))),
        }
    }

    /// Closed form of `kind`; parameters not set fall back to the reference set.
    pub fn closed_form(&self, kind: VariantKind) -> Result<ClosedFormSolution, CliError> {
        let s = match reference_solution(kind) {
            ClosedFormSolution::Quadratic(q) => {
                let sigma = self.sigma.unwrap_or(q.sigma);
                let r = self.r.unwrap_or(q.r);
                let alpha = self.alpha.unwrap_or(q.alpha);
                let beta = self.beta.unwrap_or(q.beta);
                let a = self.integration_a.unwrap_or(q.a);
                match kind {
                    VariantKind::QuadraticC3Zero => {
                        QuadraticBarrierSolution::c3_zero(sigma, r, alpha, beta, a)?
                    }
                    _ => QuadraticBarrierSolution::c3_nonzero(
                        sigma,
                        r,
                        alpha,
                        beta,
                        self.lambda.unwrap_or(q.lambda),
                        self.kappa.unwrap_or(q.kappa),
                        a,
                    )?,
                }
                .into()
            }
            ClosedFormSolution::Log(l) => {
                let args = (
                    self.sigma.unwrap_or(l.sigma),
                    self.r.unwrap_or(l.r),
                    self.alpha.unwrap_or(l.alpha),
                    self.beta.unwrap_or(l.beta),
                    self.gamma.unwrap_or(l.gamma),
                    self.delta.unwrap_or(l.delta),
                );
                let mu = self.mu.unwrap_or(l.mu);
                let kappa = self.kappa.unwrap_or(l.kappa);
                let a = self.integration_a.unwrap_or(l.a);
                match kind {
                    VariantKind::LogLambdaZero => LogBarrierSolution::lambda_zero(
                        args.0,
                        args.1,
                        args.2,
                        args.3,
                        args.4,
                        args.5,
                        mu,
                        kappa,
                        a,
                        self.integration_c.unwrap_or(l.c),
                    )?,
                    _ => LogBarrierSolution::lambda_nonzero(
                        args.0,
                        args.1,
                        args.2,
                        args.3,
                        args.4,
                        args.5,
                        self.lambda.unwrap_or(l.lambda),
                        mu,
                        kappa,
                        a,
                    )?,
                }
                .into()
            }
        };
        Ok(s)
    }

    fn solver_config(&self, far_field: FarField) -> SolverConfig {
        SolverConfig {
            theta: self.theta.unwrap_or(0.5),
            far_field: self.far_field.unwrap_or(far_field),
            ..SolverConfig::default()
        }
    }

    fn exponential_barrier(&self) -> Option<ExponentialBarrier> {
        let strike = self.strike?;
        Some(ExponentialBarrier {
            strike,
            decay: self.barrier_decay.unwrap_or(0.0),
            level: self.barrier_level.unwrap_or(1.0),
            rebate: self.rebate.unwrap_or(0.0),
        })
    }
}

#[derive(Debug, Clone, Copy)]
struct ExponentialBarrier {
    strike: f64,
    decay: f64,
    level: f64,
    rebate: f64,
}

impl ExponentialBarrier {
    fn h(&self, t: f64) -> f64 {
        self.level * self.strike * (-self.decay * t).exp()
    }

    fn payoff(&self, x: f64) -> f64 {
        (x - self.strike).max(0.0)
    }

    fn validate(&self) -> Result<(), CliError> {
        if !(self.strike > 0.0) || !(self.level > 0.0) || !(self.decay >= 0.0) {
            return Err(CliError::Domain(
                "exponential barrier needs strike > 0, barrier_level > 0, barrier_decay >= 0"
                    .into(),
            ));
        }
        Ok(())
    }
}

fn default_case(name: &str) -> Option<Vec<f64>> {
    Some(match name {
        "arbitrary" => vec![],
        "log" => vec![0.5, 1.5, 0.7, 0.3],
        "quadratic" => vec![1.3, 0.6],
        "affine" => vec![0.4, 0.9],
        "constant" => vec![0.8],
        _ => return None,
    })
}

fn default_cases() -> Vec<SourceCase> {
    ["arbitrary", "log", "quadratic", "affine", "constant"]
        .iter()
        .map(|n| {
            let d = default_case(n).unwrap_or_default();
            SourceCase::from_name(
                n,
                d.first().copied(),
                d.get(1).copied(),
                d.get(2).copied(),
                d.get(3).copied(),
            )
            .unwrap_or_else(|e| unreachable!("default case rejected: {e}"))
        })
        .collect()
}

pub fn parse_grid(s: &str) -> Result<(usize, usize), CliError> {
    let bad = || CliError::Usage(format!("--grid expects NxM, got '{s}'"));
    let (a, b) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    let n: usize = a.trim().parse().map_err(|_| bad())?;
    let m: usize = b.trim().parse().map_err(|_| bad())?;
    if n < 8 || m < 4 {
        return Err(CliError::Usage(format!(
            "grid {s} too coarse (need N >= 8, M >= 4)"
        )));
    }
    Ok((n, m))
}

/// Parse `args` (including the program name), run, and write the report to `out`.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    EXIT_OK
                }
                _ => EXIT_USAGE,
            };
            let _ = if code == EXIT_OK {
                write!(out, "{e}")
            } else {
                write!(err, "{e}")
            };
            return code;
        }
    };
    match execute(&cli, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

fn execute(cli: &Cli, out: &mut dyn Write) -> Result<i32, CliError> {
    let base = match &cli.opts.config {
        Some(p) => Scenario::load(p)?,
        None => Scenario::default(),
    };
    let sc = base.merge(&cli.opts)?;
    match &cli.command {
        Command::VerifySymmetries => verify_symmetries(&sc, cli.opts.all, out),
        Command::VerifySolutions => verify_solutions(&sc, cli.opts.all, out),
        Command::Transform { to } => transform(&sc, *to, out),
        Command::Price => price(&sc, out),
        Command::Compare => compare(&sc, out),
    }
}

fn csv_sink(sc: &Scenario) -> Result<Option<csv::Writer<std::fs::File>>, CliError> {
    match &sc.output {
        Some(p) => Ok(Some(csv::Writer::from_path(p)?)),
        None => Ok(None),
    }
}

/// Writer for a table command: the output file, or the report stream.
fn table_writer<'a>(
    sc: &Scenario,
    out: &'a mut dyn Write,
) -> Result<csv::Writer<Box<dyn Write + 'a>>, CliError> {
    let w: Box<dyn Write + 'a> = match &sc.output {
        Some(p) => Box::new(std::fs::File::create(p)?),
        None => Box::new(out),
    };
    Ok(csv::Writer::from_writer(w))
}

#[derive(Debug, Clone)]
pub struct SymmetryRow {
    pub case: String,
    pub kind: &'static str,
    pub generator: String,
    pub max_residual: f64,
    pub pass: bool,
    /// Errata and controls are reported but not part of the verdict.
    pub counted: bool,
}

/// Rows of `verify-symmetries`.
pub fn symmetry_rows(sc: &Scenario, all: bool) -> Result<Vec<SymmetryRow>, CliError> {
    let mut cfg = SymmetryCheckConfig::for_form(PdeForm::Heat);
    cfg.seed = sc.seed();
    if let Some(t) = sc.tol {
        cfg.tol = t;
    }
    let chosen = if all { None } else { sc.source_case()? };
    let cases = match chosen {
        Some(c) => vec![c],
        None => default_cases(),
    };
    let mut rows = Vec::new();
    let jet = |e: crate::jet::JetError| CliError::Domain(e.to_string());
    for case in &cases {
        let pde = EvolutionPde::heat(*case);
        let alg = generators_for(case);
        let n_gen = alg.generators.len();
        for (i, g) in alg.all_fields().iter().enumerate() {
            let v = is_symmetry(g, &pde, &cfg).map_err(jet)?;
            rows.push(SymmetryRow {
                case: case.to_string(),
                kind: if i < n_gen { "generator" } else { "witness" },
                generator: g.label.clone(),
                max_residual: v.max_residual,
                pass: v.pass,
                counted: true,
            });
        }
        for e in &alg.errata {
            let v = is_symmetry(&e.typeset, &pde, &cfg).map_err(jet)?;
            rows.push(SymmetryRow {
                case: case.to_string(),
                kind: "erratum",
                generator: e.typeset.label.clone(),
                max_residual: v.max_residual,
                pass: v.pass,
                counted: false,
            });
        }
        if matches!(case, SourceCase::Quadratic { .. }) {
            let dx = VectorField::new("dx", Expr::one(), Expr::zero(), Expr::zero());
            let v = is_symmetry(&dx, &pde, &cfg).map_err(jet)?;
            rows.push(SymmetryRow {
                case: case.to_string(),
                kind: "control",
                generator: "dx".into(),
                max_residual: v.max_residual,
                pass: !v.pass && v.max_residual > 1e-3,
                counted: true,
            });
        }
    }

    let mut terminal_cases = Vec::new();
    if all {
        terminal_cases.push(SourceCase::Quadratic {
            alpha: 1.0,
            beta: 1.0,
        });
        terminal_cases.push(SourceCase::Log {
            alpha: 1.0,
            beta: -1.0,
            gamma: 1.0,
            delta: 0.0,
        });
    } else if sc.terminal_time.is_some() {
        terminal_cases.extend(
            cases
                .iter()
                .filter(|c| matches!(c, SourceCase::Quadratic { .. } | SourceCase::Log { .. }))
                .copied(),
        );
    }
    let big_t = sc.terminal_time();
    let datum = terminal_datum();
    for case in terminal_cases {
        let pde = EvolutionPde::heat(case);
        for f in terminal_subalgebra(&case, big_t)? {
            let v = is_symmetry(&f, &pde, &cfg).map_err(jet)?;
            let chk = terminal_invariance(&f, big_t, &datum, cfg.tol).map_err(jet)?;
            rows.push(SymmetryRow {
                case: case.to_string(),
                kind: "terminal",
                generator: f.label.clone(),
                max_residual: v.max_residual.max(chk.max_xi2).max(chk.max_surface),
                pass: v.pass && chk.passes(),
                counted: true,
            });
        }
    }
    Ok(rows)
}

fn verify_symmetries(sc: &Scenario, all: bool, out: &mut dyn Write) -> Result<i32, CliError> {
    let rows = symmetry_rows(sc, all)?;
    let tol = sc.tol.unwrap_or(1e-9);
    writeln!(
        out,
        "# verify-symmetries seed={} tol={tol:e} points=100",
        sc.seed()
    )?;
    let mut sink = csv_sink(sc)?;
    if let Some(w) = sink.as_mut() {
        w.write_record([
            "case",
            "kind",
            "generator",
            "max_residual",
            "pass",
            "counted",
        ])?;
    }
    let mut failed = Vec::new();
    for r in &rows {
        let status = match (r.pass, r.counted) {
            (true, true) => "PASS",
            (false, true) => "FAIL",
            (true, false) => "flagged: passes",
            (false, false) => "flagged: fails as typeset",
        };
        writeln!(
            out,
            "{:<40} {:<10} {:<22} {:>10.3e}  {status}",
            r.case, r.kind, r.generator, r.max_residual
        )?;
        if let Some(w) = sink.as_mut() {
            w.write_record([
                r.case.clone(),
                r.kind.to_string(),
                r.generator.clone(),
                format!("{:e}", r.max_residual),
                r.pass.to_string(),
                r.counted.to_string(),
            ])?;
        }
        if r.counted && !r.pass {
            failed.push(format!("{} {}", r.case, r.generator));
        }
    }
    if let Some(mut w) = sink {
        w.flush()?;
    }
    let counted = rows.iter().filter(|r| r.counted).count();
    writeln!(
        out,
        "# {} of {counted} checks passed",
        counted - failed.len()
    )?;
    if failed.is_empty() {
        Ok(EXIT_OK)
    } else {
        writeln!(out, "# failing: {}", failed.join(", "))?;
        Ok(EXIT_FAILURE)
    }
}

#[derive(Debug, Clone)]
pub struct SolutionRow {
    pub variant: &'static str,
    pub check: &'static str,
    pub worst: f64,
    pub worst_at: String,
    pub limit: f64,
    pub pass: bool,
    pub note: String,
}

/// Rows of `verify-solutions`.
pub fn solution_rows(sc: &Scenario, all: bool) -> Result<Vec<SolutionRow>, CliError> {
    let chosen = if all { None } else { sc.variant()? };
    let kinds: Vec<VariantKind> = match chosen {
        Some(k) => vec![k],
        None => VariantKind::ALL.to_vec(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(sc.seed());
    let red_tol = sc.tol.unwrap_or(1e-10);
    let mut rows = Vec::new();
    for kind in kinds {
        let name = kind.name();
        let subject = if chosen.is_some() {
            sc.closed_form(kind)?
        } else {
            reference_solution(kind)
        };

        let mut worst = (0.0f64, String::new());
        let sets: Vec<ClosedFormSolution> = if chosen.is_some() {
            vec![subject]
        } else {
            (0..50).map(|_| random_admissible(kind, &mut rng)).collect()
        };
        for s in &sets {
            for i in 0..20 {
                let t = i as f64 / 19.0;
                let rel = s.boundary_consistency(t)? / (1.0 + s.eval_r(t)?.abs());
                if rel >= worst.0 {
                    worst = (rel, format!("t={t:.4}"));
                }
            }
        }
        rows.push(SolutionRow {
            variant: name,
            check: "boundary",
            worst: worst.0,
            worst_at: worst.1,
            limit: 1e-9,
            pass: worst.0 <= 1e-9,
            note: format!("{} parameter sets x 20 times", sets.len()),
        });

        let mut worst = (0.0f64, String::new());
        let mut min_order = f64::INFINITY;
        for (t, k) in [(0.2, 0usize), (0.5, 2), (0.8, 4)] {
            let x = subject.eval_h(t)? * (1.2 + 0.3 * k as f64);
            let rel = subject.pde_residual(x, t, 1e-4)?.relative();
            if rel >= worst.0 {
                worst = (rel, format!("x={x:.4} t={t}"));
            }
            let hs = [1e-3, 5e-4, 2.5e-4];
            let mut rs = [0.0; 3];
            for (slot, h) in rs.iter_mut().zip(hs) {
                *slot = subject.pde_residual(x, t, h)?.residual.abs();
            }
            // Residuals at round-off carry no order information.
            if rs[0] > 1e-9 {
                min_order = min_order.min((rs[0] / rs[2]).ln() / (hs[0] / hs[2]).ln());
            }
        }
        rows.push(SolutionRow {
            variant: name,
            check: "pde_residual",
            worst: worst.0,
            worst_at: worst.1,
            limit: 1e-6,
            pass: worst.0 <= 1e-6,
            note: "h=1e-4, relative".into(),
        });
        let order_ok = min_order.is_infinite() || min_order >= 1.8;
        rows.push(SolutionRow {
            variant: name,
            check: "residual_order",
            worst: min_order,
            worst_at: "h in {1e-3, 5e-4, 2.5e-4}".into(),
            limit: 1.8,
            pass: order_ok,
            note: "minimum fitted order".into(),
        });

        let (ode, special) = reduction_for(kind, &subject, OdeForm::Derived);
        let mut worst = (0.0f64, String::new());
        for i in 0..50 {
            let z = 0.3 + 0.05 * i as f64;
            let r = crate::solutions::reduction_residual(&ode, &special, z)?;
            if r >= worst.0 {
                worst = (r, format!("zeta={z:.2}"));
            }
        }
        let note = match kind {
            VariantKind::QuadraticC3Zero => {
                "special F = beta - 6/(alpha zeta^2) (corrected)".to_string()
            }
            VariantKind::QuadraticC3NonZero => "derived ODE (4/alpha) with its special".to_string(),
            _ => "as printed".to_string(),
        };
        rows.push(SolutionRow {
            variant: name,
            check: "reduction",
            worst: worst.0,
            worst_at: worst.1,
            limit: red_tol,
            pass: worst.0 <= red_tol,
            note,
        });
    }
    Ok(rows)
}

fn verify_solutions(sc: &Scenario, all: bool, out: &mut dyn Write) -> Result<i32, CliError> {
    let rows = solution_rows(sc, all)?;
    writeln!(out, "# verify-solutions seed={}", sc.seed())?;
    let mut sink = csv_sink(sc)?;
    if let Some(w) = sink.as_mut() {
        w.write_record([
            "variant", "check", "worst", "worst_at", "limit", "pass", "note",
        ])?;
    }
    let mut failed = Vec::new();
    for r in &rows {
        writeln!(
            out,
            "{:<22} {:<15} {:>10.3e} ({}) limit {:e}  {}  {}",
            r.variant,
            r.check,
            r.worst,
            r.worst_at,
            r.limit,
            if r.pass { "PASS" } else { "FAIL" },
            r.note
        )?;
        if let Some(w) = sink.as_mut() {
            w.write_record([
                r.variant.to_string(),
                r.check.to_string(),
                format!("{:e}", r.worst),
                r.worst_at.clone(),
                format!("{:e}", r.limit),
                r.pass.to_string(),
                r.note.clone(),
            ])?;
        }
        if !r.pass {
            failed.push(format!("{} {} at {}", r.variant, r.check, r.worst_at));
        }
    }
    if let Some(mut w) = sink {
        w.flush()?;
    }
    if failed.is_empty() {
        Ok(EXIT_OK)
    } else {
        writeln!(out, "# failing: {}", failed.join("; "))?;
        Ok(EXIT_FAILURE)
    }
}

/// Barrier, rebate and terminal data of a scenario in original coordinates.
struct BarrierData {
    label: String,
    sigma: f64,
    r: f64,
    h: Box<dyn Fn(f64) -> f64>,
    rebate: Box<dyn Fn(f64) -> f64>,
    terminal: Box<dyn Fn(f64) -> f64>,
}

fn barrier_data(sc: &Scenario) -> Result<BarrierData, CliError> {
    let big_t = sc.terminal_time();
    if let Some(kind) = sc.variant()? {
        let s = sc.closed_form(kind)?;
        s.eval_h(big_t)?;
        return Ok(BarrierData {
            label: kind.name().to_string(),
            sigma: s.sigma(),
            r: s.r(),
            h: Box::new(move |t| s.eval_h(t).unwrap_or(f64::NAN)),
            rebate: Box::new(move |t| s.eval_r(t).unwrap_or(f64::NAN)),
            terminal: Box::new(move |x| s.eval_u(x, big_t).unwrap_or(f64::NAN)),
        });
    }
    let e = sc.exponential_barrier().ok_or_else(|| {
        CliError::Usage(
            "scenario needs a closed-form variant or a strike for the exponential barrier".into(),
        )
    })?;
    e.validate()?;
    Ok(BarrierData {
        label: "exponential_barrier".into(),
        sigma: sc.sigma(),
        r: sc.rate(),
        h: Box::new(move |t| e.h(t)),
        rebate: Box::new(move |_| e.rebate),
        terminal: Box::new(move |x| e.payoff(x)),
    })
}

fn transform(sc: &Scenario, to: Target, out: &mut dyn Write) -> Result<i32, CliError> {
    let d = barrier_data(sc)?;
    if !(d.sigma > 0.0) {
        return Err(CliError::Domain("sigma must be positive".into()));
    }
    let (n, m) = sc.grid()?;
    let big_t = sc.terminal_time();
    let chain = bsm_to_heat(d.sigma, d.r)?;
    let h_t = (d.h)(big_t);
    let x_min = sc.x_min.unwrap_or(h_t);
    let x_max = sc.x_max.unwrap_or(h_t * sc.z_max.unwrap_or(2.0).exp());
    writeln!(
        out,
        "# transform to={} source={} sigma={} r={} T={big_t} seed={}",
        match to {
            Target::Heat => "heat",
            Target::Bsm => "bsm",
        },
        d.label,
        d.sigma,
        d.r,
        sc.seed()
    )?;
    let mut rows: Vec<[String; 7]> = Vec::new();
    let fmt = |v: f64| format!("{v:.12e}");
    match to {
        Target::Heat => {
            let image = transport_barrier(&*d.h, &*d.rebate, d.sigma, d.r)?;
            for i in 0..=m {
                let t = big_t * i as f64 / m as f64;
                let [xh, th, uh] = image.chain().apply((d.h)(t), t, (d.rebate)(t))?;
                rows.push([
                    "barrier".into(),
                    fmt((d.h)(t)),
                    fmt(t),
                    fmt((d.rebate)(t)),
                    fmt(xh),
                    fmt(th),
                    fmt(uh),
                ]);
            }
            for j in 0..=n {
                let x = x_min + (x_max - x_min) * j as f64 / n as f64;
                let u = (d.terminal)(x);
                let [xh, th, uh] = chain.apply(x, big_t, u)?;
                rows.push([
                    "terminal".into(),
                    fmt(x),
                    fmt(big_t),
                    fmt(u),
                    fmt(xh),
                    fmt(th),
                    fmt(uh),
                ]);
            }
        }
        Target::Bsm => {
            // Heat-side samples: the barrier image and the terminal line, mapped back.
            let image = transport_barrier(&*d.h, &*d.rebate, d.sigma, d.r)?;
            for i in 0..=m {
                let t = big_t * i as f64 / m as f64;
                let [xh, th, uh] = image.chain().apply((d.h)(t), t, (d.rebate)(t))?;
                let [x, tb, u] = chain.apply_inverse(xh, th, uh)?;
                rows.push([
                    "barrier".into(),
                    fmt(xh),
                    fmt(th),
                    fmt(uh),
                    fmt(x),
                    fmt(tb),
                    fmt(u),
                ]);
            }
            let th_end = chain.apply(1.0, big_t, 0.0)?[1];
            let [lo, _, _] = chain.apply(x_min, big_t, 0.0)?;
            let [hi, _, _] = chain.apply(x_max, big_t, 0.0)?;
            for j in 0..=n {
                let xh = lo + (hi - lo) * j as f64 / n as f64;
                let uh = (-xh / 2.0).exp();
                let [x, tb, u] = chain.apply_inverse(xh, th_end, uh)?;
                rows.push([
                    "terminal".into(),
                    fmt(xh),
                    fmt(th_end),
                    fmt(uh),
                    fmt(x),
                    fmt(tb),
                    fmt(u),
                ]);
            }
        }
    }
    for r in &rows {
        if r.iter()
            .skip(1)
            .any(|v| v.contains("NaN") || v.contains("inf"))
        {
            return Err(CliError::Domain(format!(
                "non-finite mapped value in row {r:?}"
            )));
        }
    }
    let mut w = table_writer(sc, out)?;
    w.write_record(["kind", "x", "t", "u", "x_mapped", "t_mapped", "u_mapped"])?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(EXIT_OK)
}

fn price(sc: &Scenario, out: &mut dyn Write) -> Result<i32, CliError> {
    let (n, m) = sc.grid()?;
    let big_t = sc.terminal_time();
    let z_max = sc.z_max.unwrap_or(2.0);
    let mut header = format!(
        "# price seed={} grid={n}x{m} T={big_t} z_max={z_max}",
        sc.seed()
    );
    let mut rows: Vec<[String; 6]> = Vec::new();
    let fmt = |v: f64| format!("{v:.12e}");

    if let Some(kind) = sc.variant()? {
        let s = sc.closed_form(kind)?;
        let _ = write!(header, " source=closed-form variant={}", kind.name());
        let mut regular = 0usize;
        for i in 0..=m {
            let t = big_t * i as f64 / m as f64;
            let (h, r) = match (s.eval_h(t), s.eval_r(t)) {
                (Ok(h), Ok(r)) => (h, r),
                _ => {
                    rows.push([
                        fmt(t),
                        String::new(),
                        String::new(),
                        String::new(),
                        String::new(),
                        "singular".into(),
                    ]);
                    continue;
                }
            };
            for j in 0..=n {
                let x = h * (z_max * j as f64 / n as f64).exp();
                match s.eval_u(x, t) {
                    Ok(u) if u.is_finite() => {
                        regular += 1;
                        rows.push([fmt(t), fmt(h), fmt(r), fmt(x), fmt(u), "ok".into()]);
                    }
                    _ => rows.push([
                        fmt(t),
                        fmt(h),
                        fmt(r),
                        fmt(x),
                        String::new(),
                        "singular".into(),
                    ]),
                }
            }
        }
        writeln!(out, "{header}")?;
        if regular == 0 {
            writeln!(out, "# every grid point is singular")?;
            write_price(sc, out, rows)?;
            return Ok(EXIT_FAILURE);
        }
    } else {
        let d = barrier_data(sc)?;
        let case = sc
            .source_case()?
            .unwrap_or(SourceCase::Constant { alpha: 0.0 });
        let pde =
            EvolutionPde::bsm(d.sigma, d.r, case).map_err(|e| CliError::Domain(e.to_string()))?;
        let cfg = sc.solver_config(FarField::ZeroSecondDerivative);
        if cfg.far_field == FarField::Dirichlet {
            return Err(CliError::Usage(
                "the exponential barrier has no closed form for Dirichlet far-field data".into(),
            ));
        }
        let grid = Grid1D {
            n_space: n,
            n_time: m,
            y_min: 0.0,
            y_max: z_max,
            terminal_time: big_t,
            t0: 0.0,
        };
        let problem = BarrierProblem {
            barrier: &*d.h,
            barrier_rate: None,
            rebate: &*d.rebate,
            terminal: &*d.terminal,
            far: None,
        };
        let num = solve_barrier(&pde, &problem, &grid, &cfg)?;
        let _ = write!(
            header,
            " source=solver case={case} far_field={} theta={}",
            cfg.far_field.name(),
            cfg.theta
        );
        writeln!(out, "{header}")?;
        for (i, row) in num.values.iter().enumerate() {
            let t = grid.t(i);
            let (h, r) = ((d.h)(t), (d.rebate)(t));
            for (x, u) in num.x_nodes[i].iter().zip(row) {
                rows.push([fmt(t), fmt(h), fmt(r), fmt(*x), fmt(*u), "ok".into()]);
            }
        }
    }
    write_price(sc, out, rows)?;
    Ok(EXIT_OK)
}

fn write_price(sc: &Scenario, out: &mut dyn Write, rows: Vec<[String; 6]>) -> Result<(), CliError> {
    let mut w = table_writer(sc, out)?;
    w.write_record(["t", "H", "R", "x", "u", "status"])?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

fn compare(sc: &Scenario, out: &mut dyn Write) -> Result<i32, CliError> {
    let kind = sc.variant()?.unwrap_or(VariantKind::QuadraticC3Zero);
    let s = sc.closed_form(kind)?;
    let (n, m) = sc.grid()?;
    let cfg = sc.solver_config(FarField::Dirichlet);
    let grid = Grid1D {
        n_space: n,
        n_time: m,
        y_min: 0.0,
        y_max: sc.z_max.unwrap_or(2.0),
        terminal_time: sc.terminal_time(),
        t0: 0.0,
    };
    writeln!(
        out,
        "# compare seed={} variant={} far_field={} theta={} grid={n}x{m}",
        sc.seed(),
        kind.name(),
        cfg.far_field.name(),
        cfg.theta
    )?;
    let mut runs = Vec::new();
    for g in [grid, grid.refined(2)] {
        let (num, rep) = solve_closed_form_barrier(&s, &g, &cfg, 0)?;
        debug_assert_eq!(error_report(&num, &|x, t| s.eval_u(x, t).ok(), 0), rep);
        runs.push((g, rep));
    }
    let table = convergence_table(&runs);
    let mut w = table_writer(sc, out)?;
    w.write_record(["n_space", "n_time", "l_inf", "l2", "order"])?;
    for r in &table {
        w.write_record([
            r.n_space.to_string(),
            r.n_time.to_string(),
            format!("{:e}", r.l_inf),
            format!("{:e}", r.l2),
            r.order.map(|o| format!("{o:.4}")).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    drop(w);
    if let Some(o) = table.last().and_then(|r| r.order) {
        writeln!(
            out,
            "# observed order {o:.3} (L-inf ratio {:.3})",
            runs[0].1.l_inf / runs[1].1.l_inf
        )?;
    }
    Ok(EXIT_OK)
}
