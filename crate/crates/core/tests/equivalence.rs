use semilinear_bsm::equivalence::{
    bsm_equivalence_map, bsm_to_heat, heat_image, verify_map_preserves_class, BsmEquivalenceParams,
    MapRecord,
};
use semilinear_bsm::jet::PdeForm;
use semilinear_bsm::solutions::{reference_solution, VariantKind};

fn sample_points(s: &semilinear_bsm::solutions::ClosedFormSolution) -> Vec<(f64, f64)> {
    [(0.2, 1.3), (0.5, 1.8), (0.8, 2.5)]
        .iter()
        .map(|&(t, k)| (s.eval_h(t).unwrap() * k, t))
        .collect()
}

#[test]
fn closed_forms_map_to_heat_solutions() {
    for kind in VariantKind::ALL {
        let s = reference_solution(kind);
        let pde = s.pde();
        let chain = bsm_to_heat(s.sigma(), s.r()).unwrap();
        let target = heat_image(s.sigma(), s.r(), s.source_case()).unwrap();
        assert_eq!(target.form, PdeForm::Heat);
        let u = |x: f64, t: f64| s.eval_u(x, t).unwrap();
        let chk =
            verify_map_preserves_class(&chain, &pde, &target, &u, &sample_points(&s)).unwrap();
        assert!(chk.pass, "{kind:?}: {chk:?}");
        assert!(chk.max_residual_in <= 1e-3, "{kind:?}: {chk:?}");
    }
}

#[test]
fn group_element_keeps_solutions() {
    let s = reference_solution(VariantKind::QuadraticC3Zero);
    let p = BsmEquivalenceParams {
        delta1: 0.1,
        delta2: 0.0,
        delta3: 1.0,
        delta4: 1.2,
        delta5: 0.02,
        delta6: 1.0,
        delta7: 1.1,
    };
    let m = bsm_equivalence_map(&p, s.sigma(), s.r()).unwrap();
    let target = m.transport_pde(&s.pde()).unwrap();
    let u = |x: f64, t: f64| s.eval_u(x, t).unwrap();
    let chk = verify_map_preserves_class(&m, &s.pde(), &target, &u, &sample_points(&s)).unwrap();
    assert!(chk.pass, "{chk:?}");
}

#[test]
fn wrong_target_is_detected() {
    let s = reference_solution(VariantKind::LogLambdaZero);
    let chain = bsm_to_heat(s.sigma(), s.r()).unwrap();
    let wrong = heat_image(
        s.sigma(),
        s.r(),
        semilinear_bsm::classification::SourceCase::Quadratic {
            alpha: 1.0,
            beta: 0.0,
        },
    )
    .unwrap();
    let u = |x: f64, t: f64| s.eval_u(x, t).unwrap();
    let chk = verify_map_preserves_class(&chain, &s.pde(), &wrong, &u, &sample_points(&s)).unwrap();
    assert!(!chk.pass);
}

#[test]
fn records_rebuild_the_same_map() {
    let m = bsm_to_heat(0.35, 0.03).unwrap();
    let text = m.record.to_text().unwrap();
    assert!(text.contains("[map]"));
    let back = MapRecord::from_text(&text).unwrap().build().unwrap();
    for (x, t, u) in [(0.7, 0.1, 1.0), (2.2, 0.9, -0.4)] {
        let a = m.apply(x, t, u).unwrap();
        let b = back.apply(x, t, u).unwrap();
        for k in 0..3 {
            assert!((a[k] - b[k]).abs() <= 1e-14 * (1.0 + a[k].abs()));
        }
    }
    assert!(MapRecord::from_text("[map]\nkind = \"nonsense\"\n").is_err());
}
