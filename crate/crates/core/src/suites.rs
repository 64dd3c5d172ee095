//! Quantitative checks of every module, each reduced to one number compared
//! against a tolerance.  Random inputs come from a seeded generator so that
//! runs are reproducible.

use crate::coeffs::{square_dini_integral, make_gs_field, GsProfile, Modulus};
use crate::dynsys::{
    fundamental_matrix, solve_block_system, time_estimator, verify_prop2_bounds, verify_propagator_bounds, BlockSystem,
    MatFn, PicardOptions, TimeGrid,
};
use crate::error::Result;
use crate::estimator::reduced_matrix;
use crate::grid::RadialGrid;
use crate::linalg::spectral_norm;
use crate::ode::Dopri;
use crate::pipeline::{
    gs_sharpness_check, localize_rhs, direct_solve_oracle, fixed_point_solve, ball_l2_norm, SharpnessOptions,
};
use crate::potential::{
    newtonian_solve_divergence, newtonian_solve_source, verify_prop3, ModalField, Prop3Source, VectorModalField,
};
use crate::scenario::{run_verify, BoundarySpec, FieldSpec, ScenarioSpec};
use crate::sphere::{build_sphere_rule, HarmonicBasis};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

#[derive(Clone, Debug)]
pub struct SuiteResult {
    pub name: String,
    pub module: &'static str,
    /// Measured quantity; the suite passes when `value <= tolerance`.
    pub value: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl SuiteResult {
    fn new(name: impl Into<String>, module: &'static str, value: f64, tolerance: f64, detail: String) -> Self {
        Self {
            name: name.into(),
            module,
            value,
            tolerance,
            detail,
        }
    }

    pub fn passed(&self) -> bool {
        self.value.is_finite() && self.value <= self.tolerance
    }

    /// `PASS name: value <= tol (detail)`.
    pub fn line(&self) -> String {
        format!(
            "{} [{}] {}: {:.3e} (tolerance {:.1e}) {}",
            if self.passed() { "PASS" } else { "FAIL" },
            self.module,
            self.name,
            self.value,
            self.tolerance,
            self.detail
        )
    }
}

/// Tolerances of the suites, all scaled together by the CLI.
#[derive(Clone, Debug)]
pub struct SuiteTolerances {
    pub sphere: f64,
    pub reduced_matrix: f64,
    pub propagator: f64,
    pub finite_energy: f64,
    pub refinement_factor: f64,
    pub manufactured: f64,
    pub fixed_point: f64,
    pub equivalence: f64,
    pub ratio_bound: f64,
    pub sharpness: f64,
}

impl Default for SuiteTolerances {
    fn default() -> Self {
        Self {
            sphere: 1e-12,
            reduced_matrix: 1e-10,
            propagator: 1e-8,
            finite_energy: 1e-8,
            refinement_factor: 2.0,
            manufactured: 1e-7,
            fixed_point: 1e-9,
            equivalence: 1e-4,
            ratio_bound: 3.0,
            sharpness: 0.10,
        }
    }
}

impl SuiteTolerances {
    /// Multiplies every tolerance by `factor` (factors stay at least 1).
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            sphere: self.sphere * factor,
            reduced_matrix: self.reduced_matrix * factor,
            propagator: self.propagator * factor,
            finite_energy: self.finite_energy * factor,
            refinement_factor: (self.refinement_factor * factor).max(1.0),
            manufactured: self.manufactured * factor,
            fixed_point: self.fixed_point * factor,
            equivalence: self.equivalence * factor,
            ratio_bound: (self.ratio_bound * factor).max(1.0),
            sharpness: self.sharpness * factor,
        }
    }
}

/// `⨍θ_k = 0` and `⨍θ_kθ_ℓ = δ_kℓ/n`, plus orthonormality of the harmonic basis.
pub fn sphere_exactness(degree: usize, tol: f64) -> Result<SuiteResult> {
    let mut worst = 0.0f64;
    for n in [2, 3] {
        let rule = build_sphere_rule(n, degree)?;
        for k in 0..n {
            worst = worst.max(rule.mean_of(|t| t[k]).abs());
            for l in 0..n {
                let exact = if k == l { 1.0 / n as f64 } else { 0.0 };
                worst = worst.max((rule.mean_of(|t| t[k] * t[l]) - exact).abs());
            }
        }
        let basis = HarmonicBasis::new(Arc::clone(&rule), degree)?;
        for a in 0..basis.num_modes() {
            for b in 0..=a {
                let ip: f64 = (0..rule.len()).map(|q| rule.weight(q) * basis.value(a, q) * basis.value(b, q)).sum();
                worst = worst.max((ip - if a == b { 1.0 } else { 0.0 }).abs());
            }
        }
    }
    Ok(SuiteResult::new("sphere moments and orthonormality", "sphere", worst, tol, format!("K = {degree}")))
}

/// `‖R(r) + ((n−1)/n) g(r) I‖` for Gilbarg–Serrin fields at 200 radii.
pub fn gs_reduced_identity(tol: f64) -> Result<SuiteResult> {
    let profile = GsProfile::LogPower { amp: 0.5, s: 0.75 };
    let mut worst = 0.0f64;
    for n in [2, 3] {
        let field = make_gs_field(n, profile.clone(), 1e-3)?;
        let rule = build_sphere_rule(n, 2)?;
        let nf = n as f64;
        for i in 0..200 {
            let r = (-(i as f64) / 199.0 * 30.0 * std::f64::consts::LN_2).exp();
            let m = reduced_matrix(&field, r, &rule) + DMatrix::identity(n, n) * ((nf - 1.0) / nf * profile.g(r));
            worst = worst.max(spectral_norm(&m));
        }
    }
    Ok(SuiteResult::new("reduced matrix of GS fields", "estimator", worst, tol, "200 radii in [2^-30, 1]".into()))
}

fn random_matrix(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0))
}

/// `‖Φ(t)‖ <= ℰ(t)` and `‖Φ(t)Φ⁻¹(s)‖ <= ℰ(t)/ℰ(s)` for random systems
/// `Φ' = −R₁Φ`, `R₁(t) = ϖ(t)(A + B cos(at) + C sin(bt))` normalized so that
/// `‖R₁‖ <= ϖ`.  Value: worst relative excess over the bound.
pub fn propagator_bounds(seed: u64, count: usize, tol: f64) -> Result<SuiteResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = TimeGrid::uniform(8.0, 800)?;
    let ode = Dopri::default();
    let mut worst = f64::NEG_INFINITY;
    let mut pairs = 0;
    for i in 0..count {
        let n = 2 + i % 2;
        let (a, b, c) = (random_matrix(&mut rng, n), random_matrix(&mut rng, n), random_matrix(&mut rng, n));
        let norm = spectral_norm(&a) + spectral_norm(&b) + spectral_norm(&c);
        let amp: f64 = rng.random_range(0.1..0.9);
        let s: f64 = rng.random_range(0.5..1.5);
        let (fa, fb): (f64, f64) = (rng.random_range(0.2..3.0), rng.random_range(0.2..3.0));
        let r1 = move |t: f64| (&a + &b * (fa * t).cos() + &c * (fb * t).sin()) * (amp * (1.0 + t).powf(-s) / norm);
        let phi = fundamental_matrix(&r1, &grid, &ode)?;
        let cal_e = time_estimator(&r1, &grid);
        let rep = verify_propagator_bounds(&phi, &cal_e, 8);
        worst = worst.max(-rep.worst_norm_margin).max(-rep.worst_pair_margin);
        pairs += rep.pairs_checked;
    }
    Ok(SuiteResult::new(
        "propagator bounds on random systems",
        "dynsys",
        worst.max(0.0),
        tol,
        format!("{count} systems, {pairs} pairs"),
    ))
}

/// Block system with the Gilbarg–Serrin coupling plus a random perturbation
/// of size `ϖ`, forced by a bump near `t = 2`.
fn prop2_system(seed: u64, n: usize, t_max: f64, intervals: usize) -> Result<BlockSystem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = TimeGrid::uniform(t_max, intervals)?;
    let nf = n as f64;
    let pert = random_matrix(&mut rng, 2 * n) * 0.2;
    let dir = DVector::from_fn(2 * n, |_, _| rng.random_range(-1.0..1.0));
    let varpi = |t: f64| 0.3 * (1.0 + t.max(0.0)).powf(-0.75);
    let coupling: MatFn = Arc::new(move |t: f64| {
        let mut m = DMatrix::zeros(2 * n, 2 * n);
        if t < 0.0 {
            return m;
        }
        let g = varpi(t);
        let k = g / (nf * (1.0 + g));
        for i in 0..n {
            m[(i, i)] = -(nf - 1.0) * k;
            m[(i, n + i)] = (nf - 1.0) * (nf - 1.0) * k;
            m[(n + i, i)] = -k;
            m[(n + i, n + i)] = (nf - 1.0) * k;
        }
        m + &pert * (g * g)
    });
    let times = grid.times();
    let forcing = times.iter().map(|&t| &dir * (-(t - 2.0) * (t - 2.0)).exp()).collect();
    Ok(BlockSystem {
        n,
        coupling,
        forcing,
        bound: times.iter().map(|&t| varpi(t)).collect(),
        delta: 0.1,
        grid,
    })
}

/// `ψ` on `[0, T/2]` is insensitive to doubling `T`, and the fitted
/// constants of the `φ`, `ψ` bounds are stable under halving the step.
pub fn finite_energy(seed: u64, tol: f64, factor: f64) -> Result<Vec<SuiteResult>> {
    let opts = PicardOptions {
        tol: 1e-13,
        max_iter: 200,
    };
    let mut change = 0.0f64;
    let mut spread = 1.0f64;
    for n in [2, 3] {
        let (t, m) = (24.0, 1200);
        let short = prop2_system(seed, n, t, m)?;
        let long = prop2_system(seed, n, 2.0 * t, 2 * m)?;
        let a = solve_block_system(&short, &DVector::zeros(n), &opts)?;
        let b = solve_block_system(&long, &DVector::zeros(n), &opts)?;
        let pa = a.trajectory.psi.as_ref().expect("ψ");
        let pb = b.trajectory.psi.as_ref().expect("ψ");
        let scale = pa.iter().map(|v| v.norm()).fold(0.0, f64::max);
        for j in 0..=m / 2 {
            change = change.max((&pa[j] - &pb[j]).norm() / scale);
        }

        let fine = prop2_system(seed, n, t, 2 * m)?;
        let c = solve_block_system(&fine, &DVector::zeros(n), &opts)?;
        let ea = time_estimator_of(&short);
        let ec = time_estimator_of(&fine);
        let ra = verify_prop2_bounds(&a, &short, &ea);
        let rc = verify_prop2_bounds(&c, &fine, &ec);
        for (x, y) in [(ra.c_phi, rc.c_phi), (ra.c_psi, rc.c_psi)] {
            spread = spread.max(x.max(y) / x.min(y));
        }
    }
    Ok(vec![
        SuiteResult::new("finite-energy branch under doubling T", "dynsys", change, tol, "T = 24 vs 48".into()),
        SuiteResult::new("phi/psi constants under refinement", "dynsys", spread, factor, "max/min of fitted c".into()),
    ])
}

fn time_estimator_of(bs: &BlockSystem) -> Vec<f64> {
    let n = bs.n;
    let c = Arc::clone(&bs.coupling);
    let r1 = move |t: f64| c(t).view((0, 0), (n, n)).into_owned();
    time_estimator(&r1, &bs.grid)
}

/// Gaussian in `log r` with centre `c` and width `w`: value, `d/dr`, `d²/dr²`.
fn bump(r: f64, c: f64, w: f64) -> (f64, f64, f64) {
    let x = r.ln() - c.ln();
    let e = (-(x / w).powi(2)).exp();
    let es = -2.0 * x / (w * w) * e;
    let ess = (4.0 * x * x / w.powi(4) - 2.0 / (w * w)) * e;
    (e, es / r, (ess - es) / (r * r))
}

/// Newtonian solves recover manufactured `w* = η(r) φ` for both source
/// forms, and the fitted annulus-bound constants agree across three sources.
pub fn manufactured(tol: f64, factor: f64) -> Result<Vec<SuiteResult>> {
    let sources = [(0.3, 0.5, 2usize, 0usize), (0.05, 0.3, 3, 1), (0.01, 0.8, 2, 1)];
    let mut err = 0.0f64;
    let mut spread_src = 1.0f64;
    let mut spread_div = 1.0f64;
    for n in [2, 3] {
        let rule = build_sphere_rule(n, 4)?;
        let basis = Arc::new(HarmonicBasis::new(rule, 4)?);
        let grid = RadialGrid::dyadic(32, 16, 4)?;
        let nf = n as f64;
        let mut cs = Vec::new();
        let mut cd = Vec::new();
        for &(c, w, k, off) in &sources {
            let mode = basis.degree_offset(k) + off;
            let lam = basis.eigenvalue(k);
            let f = ModalField::single_mode(
                &grid,
                &basis,
                mode,
                |r| {
                    let (e, e1, e2) = bump(r, c, w);
                    -(e2 + (nf - 1.0) * e1 / r - lam * e / (r * r))
                },
                |_| 0.0,
                |_| 0.0,
            );
            let ws = newtonian_solve_source(&f)?;
            let fv = VectorModalField::from_nodal(&grid, &basis, |j, out| {
                let r = grid.radius(j);
                let (e, e1, _) = bump(r, c, w);
                for (q, o) in out.iter_mut().enumerate() {
                    let th = basis.rule().node3(q);
                    let p = basis.value(mode, q);
                    let g = basis.gradient(mode, q);
                    for i in 0..3 {
                        o[i] = -(e1 * p * th[i] + e / r * g[i]);
                    }
                }
            });
            let wd = newtonian_solve_divergence(&fv)?;
            let mut scale = 0.0f64;
            let mut e_abs = 0.0f64;
            for j in 0..grid.len() {
                let r = grid.radius(j);
                let (e, e1, _) = bump(r, c, w);
                scale = scale.max(e.abs()).max((e1 * r).abs());
                for sol in [&ws, &wd] {
                    for md in 0..basis.num_modes() {
                        let exact = if md == mode { e } else { 0.0 };
                        e_abs = e_abs.max((sol.coeff(j, md) - exact).abs());
                    }
                    e_abs = e_abs.max((sol.coeff_deriv(j, mode).unwrap_or(f64::NAN) - e1).abs() * r);
                }
            }
            err = err.max(e_abs / scale);
            cs.push(verify_prop3(&ws, Prop3Source::Scalar(&f), 2)?.c_fit);
            cd.push(verify_prop3(&wd, Prop3Source::Vector(&fv), 2)?.c_fit);
        }
        let sp = |v: &[f64]| v.iter().cloned().fold(0.0, f64::max) / v.iter().cloned().fold(f64::INFINITY, f64::min);
        spread_src = spread_src.max(sp(&cs));
        spread_div = spread_div.max(sp(&cd));
    }
    Ok(vec![
        SuiteResult::new("manufactured Newtonian solutions", "potential", err, tol, "3 sources, n = 2, 3".into()),
        SuiteResult::new("source-form constant across sources", "potential", spread_src, factor, "max/min".into()),
        SuiteResult::new("divergence-form constant across sources", "potential", spread_div, factor, "max/min".into()),
    ])
}

/// `(log e/r)^{-s}` is square-Dini iff `s > 1/2`.  Value: number of
/// misclassified exponents.
pub fn square_dini_classes() -> Result<SuiteResult> {
    let mut wrong = Vec::new();
    for s in [0.4, 0.5, 0.6, 0.75, 1.0] {
        let rep = square_dini_integral(&Modulus::log_power(1.0, s), 0.5)?;
        if rep.convergent != (s > 0.5) {
            wrong.push(s);
        }
    }
    Ok(SuiteResult::new(
        "square-Dini classification of log powers",
        "coeffs",
        wrong.len() as f64,
        0.0,
        format!("misclassified: {wrong:?}"),
    ))
}

/// Remainder iteration for a small Gilbarg–Serrin field.  Returns the
/// final relative increment, with iteration count and contraction factor
/// as extra results.
pub fn fixed_point_gs(n: usize, tol: f64) -> Result<Vec<SuiteResult>> {
    let spec = ScenarioSpec {
        n,
        field: FieldSpec::LogPower { amp: 0.1, s: 0.75 },
        ..ScenarioSpec::default()
    };
    let s = spec.setup()?;
    let oracle = direct_solve_oracle(&s.field, &spec.boundary.sample(&s.basis)?, &s.grid, &s.basis)?;
    let rhs = localize_rhs(&oracle.u, &s.field, &spec.cutoff)?;
    let sol = fixed_point_solve(&s.field, &rhs, &spec.fixed_point)?;
    let r = &sol.report;
    let detail = format!(
        "n = {n}, ‖T_j‖ ≈ {:.2e}/{:.2e}/{:.2e}, ‖ξ‖_Y/‖u‖ = {:.3e}",
        r.t_ratios[0],
        r.t_ratios[1],
        r.t_ratios[2],
        r.xi_norm / ball_l2_norm(&oracle.u)?
    );
    Ok(vec![
        SuiteResult::new("remainder increment", "pipeline", *r.increments.last().unwrap_or(&f64::NAN), tol, detail),
        SuiteResult::new("remainder iterations", "pipeline", r.iterations as f64, 20.0, String::new()),
        SuiteResult::new("remainder contraction factor", "pipeline", r.contraction, 1.0 - 1e-12, String::new()),
    ])
}

/// Constructive versus direct solution on `[2^-10, 1/2]`, `K = 8`, at least
/// 64 radii per decade.
pub fn oracle_equivalence_gs(n: usize, tol: f64) -> Result<SuiteResult> {
    let spec = ScenarioSpec {
        n,
        field: FieldSpec::LogPower { amp: 0.5, s: 0.75 },
        per_octave: 20,
        degree: 8,
        ..ScenarioSpec::default()
    };
    let out = run_verify(&spec)?;
    Ok(SuiteResult::new(
        "constructive vs direct solution",
        "pipeline",
        out.equivalence.max_relative,
        tol,
        format!("n = {n}, weak residual {:.2e}", out.weak.max()),
    ))
}

/// Spread of `M₂(∇u)/(E‖u‖)` over levels 6..14, with the expected
/// direction of `M₂`.
pub fn theorem1(name: &str, n: usize, field: FieldSpec, boundary: BoundarySpec, bound: f64) -> Result<SuiteResult> {
    let mut spec = ScenarioSpec {
        n,
        field,
        boundary,
        ..ScenarioSpec::default()
    };
    spec.ratio.bound = bound;
    let out = run_verify(&spec)?;
    let value = if out.ratio.passed && out.trend_ok { out.ratio.spread } else { f64::INFINITY };
    Ok(SuiteResult::new(
        format!("gradient ratio, {name}"),
        "pipeline",
        value,
        bound,
        format!(
            "spread {:.4}, M₂ trend {:.4}, direct-solution spread {:.4}, blow-up {}",
            out.ratio.spread, out.ratio.gradient_trend, out.oracle_ratio.spread, out.ratio.blowup
        ),
    ))
}

/// `v/E` drift on `[2^-14, 2^-6]`.
pub fn sharpness(n: usize, amp: f64, tol: f64) -> Result<SuiteResult> {
    let opts = SharpnessOptions {
        tol,
        ..SharpnessOptions::default()
    };
    let rep = gs_sharpness_check(n, GsProfile::LogPower { amp, s: 0.75 }, &opts)?;
    Ok(SuiteResult::new(
        format!("v/E drift, n = {n}, amp = {amp}"),
        "pipeline",
        rep.drift,
        tol,
        format!("total variation of g {:.3}", rep.total_variation),
    ))
}

type JobFn = Box<dyn Fn() -> Result<Vec<SuiteResult>> + Send + Sync>;

/// One independent unit of work producing one or more results.
pub struct Job {
    pub name: &'static str,
    pub module: &'static str,
    run: JobFn,
}

impl Job {
    fn new(name: &'static str, module: &'static str, run: impl Fn() -> Result<Vec<SuiteResult>> + Send + Sync + 'static) -> Self {
        Self {
            name,
            module,
            run: Box::new(run),
        }
    }

    /// Errors become a single failed result.
    pub fn run(&self) -> Vec<SuiteResult> {
        (self.run)().unwrap_or_else(|e| {
            vec![SuiteResult::new(self.name, self.module, f64::INFINITY, 0.0, format!("error: {e}"))]
        })
    }
}

/// Every suite, in module order.
pub fn jobs(seed: u64, tol: &SuiteTolerances) -> Vec<Job> {
    let t = tol.clone();
    let one = |r: Result<SuiteResult>| r.map(|x| vec![x]);
    let mut out = vec![
        Job::new("sphere", "sphere", {
            let t = t.clone();
            move || one(sphere_exactness(8, t.sphere))
        }),
        Job::new("square-Dini", "coeffs", move || one(square_dini_classes())),
        Job::new("reduced matrix", "estimator", {
            let t = t.clone();
            move || one(gs_reduced_identity(t.reduced_matrix))
        }),
        Job::new("propagators", "dynsys", {
            let t = t.clone();
            move || one(propagator_bounds(seed, 100, t.propagator))
        }),
        Job::new("finite energy", "dynsys", {
            let t = t.clone();
            move || finite_energy(seed, t.finite_energy, t.refinement_factor)
        }),
        Job::new("manufactured", "potential", {
            let t = t.clone();
            move || manufactured(t.manufactured, t.refinement_factor)
        }),
        Job::new("fixed point", "pipeline", {
            let t = t.clone();
            move || fixed_point_gs(2, t.fixed_point)
        }),
        Job::new("equivalence", "pipeline", {
            let t = t.clone();
            move || one(oracle_equivalence_gs(2, t.equivalence))
        }),
    ];
    for n in [2, 3] {
        let t = t.clone();
        out.push(Job::new("sharpness", "pipeline", move || one(sharpness(n, 0.5, t.sharpness))));
    }
    out
}

/// Runs `jobs` on up to `threads` workers.  Results keep job order.
pub fn run_jobs(jobs: &[Job], threads: usize) -> Vec<SuiteResult> {
    let threads = threads.clamp(1, jobs.len().max(1));
    let next = std::sync::atomic::AtomicUsize::new(0);
    let slots: Vec<std::sync::Mutex<Vec<SuiteResult>>> = jobs.iter().map(|_| Default::default()).collect();
    std::thread::scope(|sc| {
        for _ in 0..threads {
            sc.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                let Some(job) = jobs.get(i) else { break };
                *slots[i].lock().expect("poisoned") = job.run();
            });
        }
    });
    slots.into_iter().flat_map(|m| m.into_inner().expect("poisoned")).collect()
}

pub fn run_all(seed: u64, tol: &SuiteTolerances) -> Vec<SuiteResult> {
    run_jobs(&jobs(seed, tol), 1)
}
