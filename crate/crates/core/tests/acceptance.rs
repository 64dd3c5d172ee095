//! Acceptance run: ten quantitative criteria, each printed as one PASS/FAIL
//! line with its measured value and wall time.  Exits nonzero if any fails.

use sqdini::scenario::{BoundarySpec, FieldSpec};
use sqdini::suites::{self, SuiteResult, SuiteTolerances};
use std::time::{Duration, Instant};

struct Criterion {
    id: usize,
    title: &'static str,
    budget: Duration,
    results: Vec<SuiteResult>,
    elapsed: Duration,
}

impl Criterion {
    fn passed(&self) -> bool {
        !self.results.is_empty() && self.results.iter().all(SuiteResult::passed) && self.elapsed <= self.budget
    }
}

fn run(
    id: usize,
    title: &'static str,
    budget_s: u64,
    f: impl FnOnce() -> sqdini::error::Result<Vec<SuiteResult>>,
) -> Criterion {
    let t = Instant::now();
    let results = match f() {
        Ok(r) => r,
        Err(e) => vec![SuiteResult {
            name: format!("error: {e}"),
            module: "-",
            value: f64::INFINITY,
            tolerance: 0.0,
            detail: String::new(),
        }],
    };
    Criterion {
        id,
        title,
        budget: Duration::from_secs(budget_s),
        results,
        elapsed: t.elapsed(),
    }
}

fn main() {
    let tol = SuiteTolerances::default();
    let seed = 20240611;
    let growth = FieldSpec::LogPower { amp: 0.5, s: 0.75 };
    let decay = FieldSpec::LogPower { amp: -0.5, s: 0.75 };
    let x1 = BoundarySpec {
        constant: 0.0,
        linear: [1.0, 0.0, 0.0],
        quadratic: 0.0,
    };

    let crits = vec![
        run(1, "sphere exactness", 1, || Ok(vec![suites::sphere_exactness(8, tol.sphere)?])),
        run(2, "reduced-matrix identity", 5, || Ok(vec![suites::gs_reduced_identity(tol.reduced_matrix)?])),
        run(3, "propagator bounds", 30, || Ok(vec![suites::propagator_bounds(seed, 100, tol.propagator)?])),
        run(4, "finite-energy branch", 30, || suites::finite_energy(seed, tol.finite_energy, tol.refinement_factor)),
        run(5, "Newtonian potentials", 30, || suites::manufactured(tol.manufactured, tol.refinement_factor)),
        run(6, "remainder fixed point", 120, || suites::fixed_point_gs(2, tol.fixed_point)),
        run(7, "direct vs constructive", 120, || Ok(vec![suites::oracle_equivalence_gs(2, tol.equivalence)?])),
        run(8, "gradient ratio, identity", 180, || {
            Ok(vec![
                suites::theorem1("identity", 2, FieldSpec::Identity, BoundarySpec::default(), tol.ratio_bound)?,
                suites::theorem1("identity, u = x1", 2, FieldSpec::Identity, x1.clone(), tol.ratio_bound)?,
            ])
        }),
        run(8, "gradient ratio, growth n = 2", 180, || {
            Ok(vec![suites::theorem1("growth n = 2", 2, growth.clone(), BoundarySpec::default(), tol.ratio_bound)?])
        }),
        run(8, "gradient ratio, growth n = 3", 180, || {
            Ok(vec![suites::theorem1("growth n = 3", 3, growth.clone(), BoundarySpec::default(), tol.ratio_bound)?])
        }),
        run(8, "gradient ratio, decay n = 2", 180, || {
            Ok(vec![suites::theorem1("decay n = 2", 2, decay.clone(), BoundarySpec::default(), tol.ratio_bound)?])
        }),
        run(9, "sharpness of the estimator", 60, || {
            Ok(vec![suites::sharpness(2, 0.5, tol.sharpness)?, suites::sharpness(3, 0.5, tol.sharpness)?])
        }),
        run(10, "square-Dini classifier", 1, || Ok(vec![suites::square_dini_classes()?])),
    ];

    let mut failed = 0;
    for c in &crits {
        println!(
            "{} criterion {:>2}: {} ({:.2} s, budget {} s)",
            if c.passed() { "PASS" } else { "FAIL" },
            c.id,
            c.title,
            c.elapsed.as_secs_f64(),
            c.budget.as_secs()
        );
        for r in &c.results {
            println!("      {}", r.line());
        }
        if !c.passed() {
            failed += 1;
        }
    }
    println!("{} of {} acceptance checks passed", crits.len() - failed, crits.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
