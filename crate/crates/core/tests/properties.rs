use proptest::prelude::*;

use semilinear_bsm::classification::{generators_for, SourceCase};
use semilinear_bsm::equivalence::{bsm_to_heat, heat_equivalence_map, HeatEquivalenceParams};
use semilinear_bsm::expr::{differentiate, evaluate, substitute, Binding, Expr};
use semilinear_bsm::jet::{symmetry_residual, EvolutionPde, JetPoint};
use semilinear_bsm::solver::{solve_terminal, solve_tridiagonal, Grid1D, SolverConfig};

/// Smooth expressions in `x` and `u`, bounded on the sampled box.
fn arb_expr() -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![
        Just(Expr::sym("x")),
        Just(Expr::sym("u")),
        (-3i64..=3).prop_map(Expr::int),
        (-2.0f64..2.0).prop_map(Expr::float),
    ];
    leaf.prop_recursive(4, 24, 3, |inner| {
        prop_oneof![
            prop::collection::vec(inner.clone(), 2..4).prop_map(Expr::sum),
            prop::collection::vec(inner.clone(), 2..3).prop_map(Expr::product),
            inner
                .clone()
                .prop_map(|e| Expr::exp(Expr::rational(1, 4) * e)),
            (inner.clone(), 0i64..4).prop_map(|(e, n)| e.powi(n)),
            inner.prop_map(|e| Expr::log(e.clone() * e + Expr::one())),
        ]
    })
}

fn at(x: f64, u: f64) -> Binding {
    Binding::new().with_number("x", x).with_number("u", u)
}

fn ev(e: &Expr, x: f64, u: f64) -> f64 {
    evaluate(e, &at(x, u), None).unwrap()
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn derivative_is_linear(e1 in arb_expr(), e2 in arb_expr(), a in -2.0f64..2.0, b in -2.0f64..2.0,
                            x in -1.0f64..1.0, u in -1.0f64..1.0) {
        let combo = a * e1.clone() + b * e2.clone();
        let lhs = ev(&differentiate(&combo, "x").unwrap(), x, u);
        let rhs = a * ev(&differentiate(&e1, "x").unwrap(), x, u) + b * ev(&differentiate(&e2, "x").unwrap(), x, u);
        prop_assume!(lhs.is_finite() && rhs.is_finite());
        prop_assert!(close(lhs, rhs, 1e-9), "{lhs} vs {rhs}");
    }

    #[test]
    fn substitute_then_evaluate_commutes(e in arb_expr(), x in -1.0f64..1.0, u in -1.0f64..1.0) {
        let direct = ev(&e, x, u);
        let partial = substitute(&e, &Binding::new().with_number("x", x));
        prop_assert!(!partial.depends_on("x"));
        let later = evaluate(&partial, &Binding::new().with_number("u", u), None).unwrap();
        prop_assume!(direct.is_finite());
        prop_assert!(close(direct, later, 1e-12), "{direct} vs {later}");
    }

    #[test]
    fn derivative_matches_central_difference(e in arb_expr(), x in -1.0f64..1.0, u in -1.0f64..1.0) {
        let h = 1e-5;
        let fd = (ev(&e, x + h, u) - ev(&e, x - h, u)) / (2.0 * h);
        let exact = ev(&differentiate(&e, "x").unwrap(), x, u);
        prop_assume!(fd.is_finite() && exact.is_finite() && exact.abs() < 1e6);
        prop_assert!(close(fd, exact, 1e-5), "{fd} vs {exact}");
    }

    #[test]
    fn printed_form_parses_back(e in arb_expr(), x in -1.0f64..1.0, u in -1.0f64..1.0) {
        let back: Expr = e.to_string().parse().unwrap();
        let (a, b) = (ev(&e, x, u), ev(&back, x, u));
        prop_assume!(a.is_finite());
        prop_assert!(close(a, b, 1e-12));
    }

    #[test]
    fn symmetry_residual_vanishes_at_every_jet_point(
        x in -2.0f64..2.0, t in 0.0f64..1.0, u in 0.1f64..3.0,
        ux in -2.0f64..2.0, uxx in -2.0f64..2.0, uxxx in -2.0f64..2.0,
    ) {
        let case = SourceCase::Affine { alpha: 0.4, beta: 0.9 };
        let pde = EvolutionPde::heat(case);
        let p = JetPoint { x, t, u, u_x: ux, u_xx: uxx, u_xxx: uxxx };
        for g in generators_for(&case).all_fields() {
            let r = symmetry_residual(&g, &pde, &p).unwrap();
            prop_assert!(r.abs() <= 1e-9 * (1.0 + u.abs() + ux.abs() + uxx.abs()), "{}: {r}", g.label);
        }
    }

    #[test]
    fn bsm_to_heat_round_trip(sigma in 0.1f64..1.0, r in 0.0f64..0.2,
                              x in 0.2f64..5.0, t in 0.0f64..2.0, u in -3.0f64..3.0) {
        let m = bsm_to_heat(sigma, r).unwrap();
        let f = m.apply(x, t, u).unwrap();
        let b = m.apply_inverse(f[0], f[1], f[2]).unwrap();
        for (p, q) in b.iter().zip([x, t, u]) {
            prop_assert!(close(*p, q, 1e-10), "{b:?}");
        }
    }

    #[test]
    fn heat_group_round_trip(d1 in -1.0f64..1.0, d2 in -1.0f64..1.0, d3 in 0.2f64..2.0,
                             d4 in -1.0f64..1.0, d5 in 0.3f64..2.0, flip in any::<bool>(),
                             x in -2.0f64..2.0, t in 0.0f64..1.0, u in -3.0f64..3.0) {
        let p = HeatEquivalenceParams {
            delta1: d1, delta2: d2, delta3: d3, delta4: d4, delta5: d5,
            beta_sign: if flip { -1.0 } else { 1.0 },
            ..HeatEquivalenceParams::IDENTITY
        };
        let m = heat_equivalence_map(&p).unwrap();
        let f = m.apply(x, t, u).unwrap();
        let b = m.apply_inverse(f[0], f[1], f[2]).unwrap();
        for (p, q) in b.iter().zip([x, t, u]) {
            prop_assert!(close(*p, q, 1e-10), "{b:?}");
        }
    }

    #[test]
    fn thomas_solves_dominant_systems(rows in prop::collection::vec((-1.0f64..1.0, 2.5f64..4.0, -1.0f64..1.0, -5.0f64..5.0), 3..40)) {
        let n = rows.len();
        let a: Vec<f64> = rows.iter().enumerate().map(|(i, r)| if i == 0 { 0.0 } else { r.0 }).collect();
        let b: Vec<f64> = rows.iter().map(|r| r.1).collect();
        let c: Vec<f64> = rows.iter().enumerate().map(|(i, r)| if i == n - 1 { 0.0 } else { r.2 }).collect();
        let d: Vec<f64> = rows.iter().map(|r| r.3).collect();
        let x = solve_tridiagonal(&a, &b, &c, &d).unwrap();
        for i in 0..n {
            let mut lhs = b[i] * x[i];
            if i > 0 { lhs += a[i] * x[i - 1]; }
            if i + 1 < n { lhs += c[i] * x[i + 1]; }
            prop_assert!((lhs - d[i]).abs() < 1e-12 * (1.0 + d[i].abs()));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn linear_solver_scales_with_the_payoff(k in -3.0f64..3.0, sigma in 0.1f64..0.6, r in 0.0f64..0.1) {
        let pde = EvolutionPde::bsm(sigma, r, SourceCase::Constant { alpha: 0.0 }).unwrap();
        let g = Grid1D { n_space: 32, n_time: 16, y_min: -1.0, y_max: 1.0, terminal_time: 1.0, t0: 0.0 };
        let cfg = SolverConfig::default();
        let base = solve_terminal(&pde, &|x| (x - 1.0).max(0.0), &g, &cfg, None).unwrap();
        let scaled = solve_terminal(&pde, &|x| k * (x - 1.0).max(0.0), &g, &cfg, None).unwrap();
        for (p, q) in base.values.iter().flatten().zip(scaled.values.iter().flatten()) {
            prop_assert!((k * p - q).abs() < 1e-10);
        }
    }
}
