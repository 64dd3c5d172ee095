use sqdini::scenario::{run_verify, FieldSpec, ScenarioSpec};

fn within(a: f64, b: f64, factor: f64) -> bool {
    a.max(b) / a.min(b) <= factor
}

#[test]
fn fitted_constants_are_stable_under_refinement() {
    for n in [2, 3] {
        let run = |per_octave| {
            let spec = ScenarioSpec {
                n,
                field: FieldSpec::LogPower { amp: 0.5, s: 0.75 },
                per_octave,
                degree: 6,
                ..ScenarioSpec::default()
            };
            run_verify(&spec).unwrap()
        };
        let (a, b) = (run(16), run(32));
        let pairs = [
            ("u0'", a.bounds.c_u0, b.bounds.c_u0),
            ("r v'", a.bounds.c_rv, b.bounds.c_rv),
            ("grad w", a.bounds.c_w, b.bounds.c_w),
            ("v", a.bounds.c_v, b.bounds.c_v),
            ("phase", a.bounds.c_phase, b.bounds.c_phase),
            ("xi", a.xi_constant, b.xi_constant),
        ];
        for (name, x, y) in pairs {
            assert!(x.is_finite() && x > 0.0, "n = {n}, {name}: {x}");
            assert!(within(x, y, 2.0), "n = {n}, {name}: {x} vs {y}");
        }
        for o in [&a, &b] {
            assert!(o.fixed_point.picard_contraction < 1.0);
            assert!(o.fixed_point.contraction < 1.0);
            assert!(o.passed, "{:?}", o.failures(&ScenarioSpec::default()));
        }
    }
}

#[test]
fn decay_field_gradient_vanishes_at_the_origin() {
    let spec = ScenarioSpec {
        field: FieldSpec::LogPower { amp: -0.5, s: 0.75 },
        ..ScenarioSpec::default()
    };
    let o = run_verify(&spec).unwrap();
    assert!(o.passed);
    let rows: Vec<_> = o.ratio.gated().collect();
    let deep = rows.iter().min_by(|x, y| x.r.total_cmp(&y.r)).unwrap();
    let shallow = rows.iter().max_by(|x, y| x.r.total_cmp(&y.r)).unwrap();
    assert!(deep.m2_grad < shallow.m2_grad);
    assert!(deep.e < shallow.e);
}
