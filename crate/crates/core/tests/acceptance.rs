use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use semilinear_bsm::classification::{
    generators_for, scaling_generator, terminal_datum, terminal_subalgebra,
    trivial_terminal_solution, SourceCase,
};
use semilinear_bsm::equivalence::{
    bsm_equivalence_map, heat_equivalence_map, heat_map, normalize_map, BsmEquivalenceParams,
    CoordinateMap, HeatEquivalenceParams,
};
use semilinear_bsm::expr::Expr;
use semilinear_bsm::jet::{
    is_symmetry, terminal_invariance, EvolutionPde, PdeForm, SymmetryCheckConfig, VectorField,
};
use semilinear_bsm::solutions::{
    random_admissible, reduction_for, reduction_residual, reference_solution, OdeForm,
    QuadC3ZeroSpecial, ReducedOde, SpecialSolution, VariantKind,
};
use semilinear_bsm::solver::{
    solve_closed_form_barrier, solve_terminal, FarField, Grid1D, SolverConfig,
};

type Outcome = Result<String, String>;
type Criterion = (&'static str, f64, fn() -> Outcome);

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn cases() -> Vec<SourceCase> {
    vec![
        SourceCase::Arbitrary,
        SourceCase::Log {
            alpha: 0.5,
            beta: 1.5,
            gamma: 0.7,
            delta: 0.3,
        },
        SourceCase::Quadratic {
            alpha: 1.3,
            beta: 0.6,
        },
        SourceCase::Affine {
            alpha: 0.4,
            beta: 0.9,
        },
        SourceCase::Constant { alpha: 0.8 },
    ]
}

fn heat_cfg() -> SymmetryCheckConfig {
    SymmetryCheckConfig::for_form(PdeForm::Heat)
}

fn classification() -> Outcome {
    let cfg = heat_cfg();
    let mut count = 0;
    let mut worst = 0.0f64;
    for case in cases() {
        let pde = EvolutionPde::heat(case);
        for g in generators_for(&case).all_fields() {
            let v = is_symmetry(&g, &pde, &cfg).map_err(|e| e.to_string())?;
            ensure(v.pass, format!("{case} {}: {:e}", g.label, v.max_residual))?;
            worst = worst.max(v.max_residual);
            count += 1;
        }
    }
    let dx = VectorField::new("dx", Expr::one(), Expr::zero(), Expr::zero());
    let quad = EvolutionPde::heat(SourceCase::Quadratic {
        alpha: 1.3,
        beta: 0.6,
    });
    let control = is_symmetry(&dx, &quad, &cfg).map_err(|e| e.to_string())?;
    ensure(
        control.max_residual > 1e-3,
        format!("negative control residual {:e}", control.max_residual),
    )?;
    Ok(format!(
        "{count} fields, worst {worst:.2e}; control dx {:.2e}",
        control.max_residual
    ))
}

fn terminal_subalgebras() -> Outcome {
    let datum = terminal_datum();
    let cfg = heat_cfg();
    let special = [
        (
            SourceCase::Quadratic {
                alpha: 1.0,
                beta: 1.0,
            },
            2,
        ),
        (
            SourceCase::Log {
                alpha: 1.0,
                beta: -1.0,
                gamma: 1.0,
                delta: 0.0,
            },
            3,
        ),
    ];
    for (case, n) in special {
        let fields = terminal_subalgebra(&case, 1.0).map_err(|e| e.to_string())?;
        ensure(
            fields.len() == n,
            format!("{case}: {} fields", fields.len()),
        )?;
        for f in fields {
            let v = is_symmetry(&f, &EvolutionPde::heat(case), &cfg).map_err(|e| e.to_string())?;
            let chk = terminal_invariance(&f, 1.0, &datum, 1e-9).map_err(|e| e.to_string())?;
            ensure(v.pass && chk.passes(), format!("{case} {}", f.label))?;
        }
    }
    let generic = [
        SourceCase::Quadratic {
            alpha: 1.0,
            beta: 0.5,
        },
        SourceCase::Log {
            alpha: 1.0,
            beta: 0.5,
            gamma: 1.0,
            delta: 0.0,
        },
    ];
    for case in generic {
        let fields = terminal_subalgebra(&case, 1.0).map_err(|e| e.to_string())?;
        ensure(
            fields == vec![scaling_generator()],
            format!("{case}: expected only 2dx - u du"),
        )?;
        let chk = terminal_invariance(&fields[0], 1.0, &datum, 1e-9).map_err(|e| e.to_string())?;
        ensure(
            chk.passes(),
            format!("{case}: scaling generator moves the datum"),
        )?;
    }
    Ok("Z1,Z2 (quadratic beta=1), Z1..Z3 (log beta=-alpha); generic cases keep only X2".into())
}

fn boundary_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut worst = 0.0f64;
    for kind in VariantKind::ALL {
        for _ in 0..50 {
            let s = random_admissible(kind, &mut rng);
            for i in 0..20 {
                let t = i as f64 / 19.0;
                let r = s.eval_r(t).map_err(|e| e.to_string())?;
                let gap = s.boundary_consistency(t).map_err(|e| e.to_string())?;
                let rel = gap / (1.0 + r.abs());
                ensure(rel <= 1e-9, format!("{} t={t}: {rel:e}", kind.name()))?;
                worst = worst.max(rel);
            }
        }
    }
    Ok(format!(
        "4 variants x 50 sets x 20 times, worst {worst:.2e}"
    ))
}

fn exact_solution_property() -> Outcome {
    let mut worst = 0.0f64;
    let mut min_order = f64::INFINITY;
    for kind in VariantKind::ALL {
        let s = reference_solution(kind);
        for (t, k) in [(0.2, 0usize), (0.5, 2), (0.8, 4)] {
            let x = s.eval_h(t).map_err(|e| e.to_string())? * (1.2 + 0.3 * k as f64);
            let rel = s
                .pde_residual(x, t, 1e-4)
                .map_err(|e| e.to_string())?
                .relative();
            ensure(rel <= 1e-6, format!("{} x={x} t={t}: {rel:e}", kind.name()))?;
            worst = worst.max(rel);
        }
        let x = s.eval_h(0.5).map_err(|e| e.to_string())? * 1.5;
        let hs = [1e-3, 5e-4, 2.5e-4];
        let mut rs = [0.0; 3];
        for (slot, h) in rs.iter_mut().zip(hs) {
            *slot = s
                .pde_residual(x, 0.5, h)
                .map_err(|e| e.to_string())?
                .residual
                .abs();
        }
        let order = (rs[0] / rs[2]).ln() / (hs[0] / hs[2]).ln();
        ensure(order >= 1.8, format!("{}: order {order:.3}", kind.name()))?;
        min_order = min_order.min(order);
    }
    Ok(format!(
        "worst relative residual {worst:.2e} at h=1e-4, min order {min_order:.3}"
    ))
}

fn reduced_ode_specials() -> Outcome {
    let mut worst = 0.0f64;
    for kind in VariantKind::ALL {
        let s = reference_solution(kind);
        let (ode, special) = reduction_for(kind, &s, OdeForm::Derived);
        for i in 0..50 {
            let z = 0.3 + 0.05 * i as f64;
            let r = reduction_residual(&ode, &special, z).map_err(|e| e.to_string())?;
            ensure(r <= 1e-10, format!("{} zeta={z}: {r:e}", kind.name()))?;
            worst = worst.max(r);
        }
    }
    // c3 = 0: the corrected special solves the reduction for any alpha, the printed one only for alpha = 1.
    let alpha = 2.5;
    let ode = ReducedOde::QuadC3Zero {
        alpha,
        beta: 0.7,
        lambda: 0.0,
        form: OdeForm::Typeset,
    };
    let pick = |choice| SpecialSolution::QuadC3Zero {
        alpha,
        beta: 0.7,
        choice,
    };
    let mut corrected = 0.0f64;
    let mut typeset = 0.0f64;
    for i in 0..50 {
        let z = 0.3 + 0.05 * i as f64;
        corrected = corrected.max(
            reduction_residual(&ode, &pick(QuadC3ZeroSpecial::Corrected), z)
                .map_err(|e| e.to_string())?,
        );
        typeset = typeset.max(
            reduction_residual(&ode, &pick(QuadC3ZeroSpecial::Typeset), z)
                .map_err(|e| e.to_string())?,
        );
    }
    ensure(
        corrected <= 1e-10,
        format!("c3=0 corrected special {corrected:e}"),
    )?;
    Ok(format!(
        "worst {worst:.2e}; c3=0 resolved as F = beta - 6/(alpha zeta^2) ({corrected:.1e}; printed form {typeset:.1e} at alpha=2.5)"
    ))
}

fn round_trip(m: &CoordinateMap, pts: &[[f64; 3]]) -> Result<f64, String> {
    let mut worst = 0.0f64;
    for p in pts {
        let f = m.apply(p[0], p[1], p[2]).map_err(|e| e.to_string())?;
        let b = m
            .apply_inverse(f[0], f[1], f[2])
            .map_err(|e| e.to_string())?;
        for k in 0..3 {
            worst = worst.max((b[k] - p[k]).abs() / (1.0 + p[k].abs()));
        }
    }
    Ok(worst)
}

fn random_bsm_params(rng: &mut ChaCha8Rng) -> BsmEquivalenceParams {
    let nz = |rng: &mut ChaCha8Rng| {
        let v: f64 = rng.random_range(0.6..1.4);
        if rng.random_bool(0.5) {
            v
        } else {
            -v
        }
    };
    BsmEquivalenceParams {
        delta1: rng.random_range(-0.3..0.3),
        delta2: rng.random_range(-0.5..0.5),
        delta3: nz(rng),
        delta4: rng.random_range(0.6..1.4),
        delta5: rng.random_range(-0.05..0.05),
        delta6: rng.random_range(0.8..1.2),
        delta7: rng.random_range(0.8..1.2),
    }
}

fn random_heat_params(rng: &mut ChaCha8Rng) -> HeatEquivalenceParams {
    HeatEquivalenceParams {
        delta1: rng.random_range(-0.3..0.3),
        delta2: rng.random_range(-0.5..0.5),
        delta3: rng.random_range(0.6..1.4),
        delta4: rng.random_range(-0.3..0.3),
        delta5: rng.random_range(0.7..1.3),
        ..HeatEquivalenceParams::IDENTITY
    }
}

fn coordinate_maps() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let bsm_pts: Vec<[f64; 3]> = (0..1000)
        .map(|_| {
            [
                rng.random_range(0.5..3.0),
                rng.random_range(0.0..1.0),
                rng.random_range(0.1..3.0),
            ]
        })
        .collect();
    let heat_pts: Vec<[f64; 3]> = (0..1000)
        .map(|_| {
            [
                rng.random_range(-2.0..2.0),
                rng.random_range(0.0..1.0),
                rng.random_range(0.1..3.0),
            ]
        })
        .collect();
    let (sigma, r) = (0.4, 0.05);
    let err = |e: semilinear_bsm::equivalence::EquivalenceError| e.to_string();
    let mut worst = 0.0f64;
    let mut check = |name: &str, m: &CoordinateMap, pts: &[[f64; 3]]| -> Result<(), String> {
        let w = round_trip(m, pts)?;
        ensure(w <= 1e-12, format!("{name} round trip {w:e}"))?;
        worst = worst.max(w);
        Ok(())
    };
    check(
        "normalize",
        &normalize_map(sigma, r).map_err(err)?,
        &bsm_pts,
    )?;
    // heat_map takes normalised coordinates; positive x only.
    check("heat", &heat_map(), &bsm_pts)?;
    let bp = random_bsm_params(&mut rng);
    check(
        "bsm group",
        &bsm_equivalence_map(&bp, sigma, r).map_err(err)?,
        &bsm_pts,
    )?;
    let hp = random_heat_params(&mut rng);
    check(
        "heat group",
        &heat_equivalence_map(&hp).map_err(err)?,
        &heat_pts,
    )?;
    for (a, b) in [(1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
        let d = HeatEquivalenceParams {
            alpha_sign: a,
            beta_sign: b,
            ..hp
        };
        check(
            "heat group (discrete)",
            &heat_equivalence_map(&d).map_err(err)?,
            &heat_pts,
        )?;
    }

    let mut closure = 0.0f64;
    for _ in 0..20 {
        let p = random_bsm_params(&mut rng);
        let q = random_bsm_params(&mut rng);
        let m1 = bsm_equivalence_map(&p, sigma, r).map_err(err)?;
        let (s1, r1) = p.target_params(sigma, r);
        let two = m1
            .then(&bsm_equivalence_map(&q, s1, r1).map_err(err)?)
            .map_err(err)?;
        let one = bsm_equivalence_map(&p.then(&q, sigma, r), sigma, r).map_err(err)?;
        ensure(
            two.params.to.approx_eq(&one.params.to),
            "bsm closure: target parameters differ",
        )?;
        for pt in bsm_pts.iter().take(10) {
            let a = two.apply(pt[0], pt[1], pt[2]).map_err(err)?;
            let b = one.apply(pt[0], pt[1], pt[2]).map_err(err)?;
            for k in 0..3 {
                closure = closure.max((a[k] - b[k]).abs() / (1.0 + b[k].abs()));
            }
        }
        let hp = random_heat_params(&mut rng);
        let hq = random_heat_params(&mut rng);
        let two = heat_equivalence_map(&hp)
            .map_err(err)?
            .then(&heat_equivalence_map(&hq).map_err(err)?)
            .map_err(err)?;
        let one = heat_equivalence_map(&hp.then(&hq).map_err(err)?).map_err(err)?;
        for pt in heat_pts.iter().take(10) {
            let a = two.apply(pt[0], pt[1], pt[2]).map_err(err)?;
            let b = one.apply(pt[0], pt[1], pt[2]).map_err(err)?;
            for k in 0..3 {
                closure = closure.max((a[k] - b[k]).abs() / (1.0 + b[k].abs()));
            }
        }
    }
    ensure(closure <= 1e-12, format!("closure mismatch {closure:e}"))?;
    Ok(format!(
        "round trips worst {worst:.2e} on 1000 points; 20+20 closure pairs worst {closure:.2e}"
    ))
}

fn solver_convergence() -> Outcome {
    let s = reference_solution(VariantKind::QuadraticC3Zero);
    let cfg = SolverConfig {
        far_field: FarField::Dirichlet,
        ..SolverConfig::default()
    };
    let grid = |n| Grid1D {
        n_space: n,
        n_time: n,
        y_min: 0.0,
        y_max: 2.0,
        terminal_time: 1.0,
        t0: 0.0,
    };
    let (_, coarse) =
        solve_closed_form_barrier(&s, &grid(100), &cfg, 0).map_err(|e| e.to_string())?;
    let (_, fine) =
        solve_closed_form_barrier(&s, &grid(200), &cfg, 0).map_err(|e| e.to_string())?;
    let ratio = coarse.l_inf / fine.l_inf;
    ensure((3.4..=4.6).contains(&ratio), format!("ratio {ratio:.3}"))?;
    ensure(fine.l_inf <= 1e-3, format!("fine L-inf {:e}", fine.l_inf))?;
    Ok(format!(
        "L-inf {:.3e} -> {:.3e}, ratio {ratio:.3}, far field {}",
        coarse.l_inf,
        fine.l_inf,
        cfg.far_field.name()
    ))
}

fn trivial_terminal() -> Outcome {
    let case = SourceCase::Quadratic {
        alpha: 1.0,
        beta: 2.0,
    };
    let pde = EvolutionPde::bsm(0.3, 0.05, case).map_err(|e| e.to_string())?;
    let g = Grid1D {
        n_space: 64,
        n_time: 200,
        y_min: -1.0,
        y_max: 1.0,
        terminal_time: 1.0,
        t0: 0.0,
    };
    let sol = solve_terminal(&pde, &|_| 1.0, &g, &SolverConfig::default(), None)
        .map_err(|e| e.to_string())?;
    let exact = trivial_terminal_solution(&case, 1.0)
        .map_err(|e| e.to_string())?
        .eval(0.5);
    let err = sol.values[sol.row_at(0.5)]
        .iter()
        .fold(0.0f64, |a, v| a.max((v - exact).abs()));
    ensure(err <= 1e-4, format!("L-inf {err:e}"))?;
    Ok(format!("C(0.5) = {exact:.10}, L-inf {err:.2e}"))
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("classification verification", 10.0, classification),
        ("terminal subalgebras", 2.0, terminal_subalgebras),
        ("boundary identities", 5.0, boundary_identities),
        ("exact-solution property", 5.0, exact_solution_property),
        ("reduced-ODE specials", f64::INFINITY, reduced_ode_specials),
        ("coordinate-map round trips", f64::INFINITY, coordinate_maps),
        ("solver convergence", 60.0, solver_convergence),
        (
            "trivial terminal solutions",
            f64::INFINITY,
            trivial_terminal,
        ),
    ];
    let mut failures = 0;
    for (name, budget, f) in criteria {
        let start = Instant::now();
        let outcome = f();
        let secs = start.elapsed().as_secs_f64();
        let outcome = match outcome {
            Ok(d) if secs > budget => Err(format!("{d}; took {secs:.2}s, budget {budget}s")),
            o => o,
        };
        match outcome {
            Ok(detail) => println!("PASS {name} ({secs:.2}s): {detail}"),
            Err(detail) => {
                failures += 1;
                println!("FAIL {name} ({secs:.2}s): {detail}");
            }
        }
    }
    if failures > 0 {
        std::process::exit(1);
    }
}
