//! Verdicts on solutions: gradient growth against `E(r)`, sharpness on
//! rotation-invariant fields, agreement with the direct solver, weak-form
//! residuals and component bounds.

use super::fixed_point::FixedPointSolution;
use super::localize::{Cutoff, LocalizedRhs};
use super::oracle::direct_solve_oracle;
use crate::coeffs::{make_gs_field, CoefficientField, GsProfile};
use crate::error::{Error, Result};
use crate::estimator::{estimator_curve, EstimatorCurve, ReducedCurve};
use crate::grid::RadialGrid;
use crate::potential::{annulus_mean, annulus_mean_of_profile, gradient_annulus_mean, AnnulusProfile, ModalField, Power};
use crate::sphere::{build_sphere_rule, HarmonicBasis};
use std::io::Write;
use std::sync::Arc;

fn dyadic_level(r: f64) -> i64 {
    (-r.log2()).round() as i64
}

/// Indices of dyadic radii `2^{-j}` whose annulus `[r, 2r]` fits the grid.
fn dyadic_indices(grid: &RadialGrid) -> Vec<usize> {
    let m = grid.per_octave() as i64;
    (0..grid.len())
        .filter(|&i| grid.exponent(i) % m == 0 && grid.doubled(i).is_some())
        .collect()
}

/// `M₂(∇u, 2^{-j})` at every dyadic radius the grid resolves.
pub fn gradient_profile(u: &ModalField) -> Result<AnnulusProfile> {
    if !u.has_gradient() {
        return Err(Error::MissingDerivative("gradient profile needs ∇u".into()));
    }
    let grid = u.grid();
    let mut radii = Vec::new();
    let mut values = Vec::new();
    for i in dyadic_indices(grid) {
        let r = grid.radius(i);
        radii.push(r);
        values.push(gradient_annulus_mean(u, r, 2.0)?);
    }
    Ok(AnnulusProfile { radii, values })
}

#[derive(Clone, Debug)]
pub struct RatioOptions {
    pub j_min: i64,
    pub j_max: i64,
    /// Largest allowed `max ratio / min ratio` over gated levels.
    pub bound: f64,
    /// Levels at the deep end inspected for a monotone blow-up.
    pub trend_levels: usize,
    /// Growth over those levels that counts as blow-up.
    pub trend_factor: f64,
}

impl Default for RatioOptions {
    fn default() -> Self {
        Self {
            j_min: 6,
            j_max: 14,
            bound: 3.0,
            trend_levels: 4,
            trend_factor: 1.25,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RatioRow {
    pub j: i64,
    pub r: f64,
    pub m2_grad: f64,
    pub e: f64,
    pub ratio: f64,
    pub gated: bool,
}

#[derive(Clone, Debug)]
pub struct RatioReport {
    pub rows: Vec<RatioRow>,
    pub u_norm: f64,
    /// `max/min` of the ratio over gated levels.
    pub spread: f64,
    pub max_over_median: f64,
    /// `M₂(∇u)` at the deepest gated level over its value at the shallowest.
    pub gradient_trend: f64,
    pub blowup: bool,
    pub bound: f64,
    pub passed: bool,
}

impl RatioReport {
    pub fn gated(&self) -> impl Iterator<Item = &RatioRow> {
        self.rows.iter().filter(|r| r.gated)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "j,r,M2_grad,E,ratio,verdict")?;
        for row in &self.rows {
            let verdict = match (row.gated, self.passed) {
                (false, _) => "ungated",
                (true, true) => "PASS",
                (true, false) => "FAIL",
            };
            writeln!(
                out,
                "{},{:.16e},{:.16e},{:.16e},{:.16e},{}",
                row.j, row.r, row.m2_grad, row.e, row.ratio, verdict
            )?;
        }
        Ok(())
    }
}

/// `ratio_j = M₂(∇u, 2^{-j}) / (E(2^{-j}) ‖u‖)`.  Passes when the ratio
/// varies by at most `bound` over the gated levels and does not grow
/// monotonically at the deep end.
pub fn theorem1_check(profile: &AnnulusProfile, ec: &EstimatorCurve, u_norm: f64, opts: &RatioOptions) -> RatioReport {
    let rows: Vec<RatioRow> = profile
        .radii
        .iter()
        .zip(&profile.values)
        .filter(|(r, _)| **r <= 1.0)
        .map(|(&r, &m2)| {
            let j = dyadic_level(r);
            let e = ec.at(r);
            let ratio = m2 / (e * u_norm);
            RatioRow {
                j,
                r,
                m2_grad: m2,
                e,
                ratio,
                gated: j >= opts.j_min && j <= opts.j_max && ratio.is_finite() && ratio > 0.0,
            }
        })
        .collect();
    let mut gated: Vec<&RatioRow> = rows.iter().filter(|r| r.gated).collect();
    gated.sort_by_key(|r| r.j);
    let ratios: Vec<f64> = gated.iter().map(|r| r.ratio).collect();
    let (spread, max_over_median, gradient_trend, blowup) = if ratios.is_empty() {
        (f64::NAN, f64::NAN, f64::NAN, false)
    } else {
        let max = ratios.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
        let mut sorted = ratios.clone();
        sorted.sort_by(|a, b| a.total_cmp(b));
        let median = sorted[sorted.len() / 2];
        let trend = gated.last().unwrap().m2_grad / gated[0].m2_grad;
        let k = opts.trend_levels.min(ratios.len());
        let tail = &ratios[ratios.len() - k..];
        let blowup = k >= 2 && tail.windows(2).all(|w| w[1] > w[0]) && tail[k - 1] / tail[0] > opts.trend_factor;
        (max / min, max / median, trend, blowup)
    };
    let passed = spread.is_finite() && spread <= opts.bound && !blowup;
    RatioReport {
        rows,
        u_norm,
        spread,
        max_over_median,
        gradient_trend,
        blowup,
        bound: opts.bound,
        passed,
    }
}

#[derive(Clone, Debug)]
pub struct SharpnessOptions {
    pub per_octave: usize,
    pub depth_octaves: usize,
    pub j_lo: i64,
    pub j_hi: i64,
    pub tol: f64,
    pub rule_order: usize,
    pub boundary_axis: usize,
}

impl Default for SharpnessOptions {
    fn default() -> Self {
        Self {
            per_octave: 32,
            depth_octaves: 20,
            j_lo: 6,
            j_hi: 14,
            tol: 0.10,
            rule_order: 2,
            boundary_axis: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SharpnessReport {
    pub n: usize,
    /// Dyadic samples `2^{-j}` on the fitting window.
    pub radii: Vec<f64>,
    pub v: Vec<f64>,
    pub e: Vec<f64>,
    pub ratio: Vec<f64>,
    /// `(max − min)/min` of `v/E` over every grid radius in the window.
    pub drift: f64,
    /// Sampled total variation of `g` on `(0, 1]`.
    pub total_variation: f64,
    pub tol: f64,
    pub passed: bool,
}

/// Solves with boundary data `θ_j` and compares the linear part `v(r)` with
/// `E(r)` over `[2^{-j_hi}, 2^{-j_lo}]`.
pub fn gs_sharpness_check(n: usize, profile: GsProfile, opts: &SharpnessOptions) -> Result<SharpnessReport> {
    if opts.boundary_axis >= n {
        return Err(Error::InvalidParameter(format!("boundary axis {} in dimension {n}", opts.boundary_axis)));
    }
    if opts.j_lo >= opts.j_hi || opts.j_hi as usize > opts.depth_octaves {
        return Err(Error::InvalidParameter(format!(
            "window 2^-{}..2^-{} does not fit {} octaves",
            opts.j_hi, opts.j_lo, opts.depth_octaves
        )));
    }
    let field = make_gs_field(n, profile.clone(), 1e-3)?;
    let rule = build_sphere_rule(n, opts.rule_order)?;
    let basis = Arc::new(HarmonicBasis::new(Arc::clone(&rule), opts.rule_order)?);
    let grid = RadialGrid::dyadic(opts.per_octave, opts.depth_octaves, 1)?;
    let axis = opts.boundary_axis;
    let boundary = rule.sample(|t| t[axis]);
    let sol = direct_solve_oracle(&field, &boundary, &grid, &basis)?;
    let ec = estimator_curve(&ReducedCurve::compute(&field, &grid, &rule)?);
    let u1 = &sol.profiles[1];
    let lo = grid.index_of(2f64.powi(-opts.j_hi as i32)).expect("dyadic radius on grid");
    let hi = grid.index_of(2f64.powi(-opts.j_lo as i32)).expect("dyadic radius on grid");
    let window: Vec<f64> = (lo..=hi).map(|j| u1[j] / grid.radius(j) / ec.at(grid.radius(j))).collect();
    let max = window.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = window.iter().cloned().fold(f64::INFINITY, f64::min);
    let drift = (max - min) / min;
    let one = grid.index_of(1.0).expect("grid contains r = 1");
    let total_variation = (0..one).map(|j| (profile.g(grid.radius(j + 1)) - profile.g(grid.radius(j))).abs()).sum();
    let mut radii = Vec::new();
    let mut v = Vec::new();
    let mut e = Vec::new();
    let mut ratio = Vec::new();
    for jl in opts.j_lo..=opts.j_hi {
        let r = 2f64.powi(-jl as i32);
        let j = grid.index_of(r).expect("dyadic radius on grid");
        radii.push(r);
        v.push(u1[j] / r);
        e.push(ec.at(r));
        ratio.push(u1[j] / r / ec.at(r));
    }
    Ok(SharpnessReport {
        n,
        radii,
        v,
        e,
        ratio,
        drift,
        total_variation,
        tol: opts.tol,
        passed: drift.is_finite() && drift <= opts.tol,
    })
}

#[derive(Clone, Debug)]
pub struct EquivalenceReport {
    /// Inner radii of the dyadic annuli compared.
    pub radii: Vec<f64>,
    /// `‖ũ − χu‖ / ‖χu‖` in `L²` of each annulus.
    pub relative: Vec<f64>,
    pub max_relative: f64,
}

/// Compares a constructed `ũ` with `χ u` for the direct solution `u`, on the
/// dyadic annuli between `2^{-j_deep}` and the inner cutoff radius doubled.
pub fn oracle_equivalence(u_tilde: &ModalField, oracle: &ModalField, cutoff: &Cutoff, j_deep: i64) -> Result<EquivalenceReport> {
    u_tilde.grid().compatible(oracle.grid())?;
    let local = cutoff.apply(oracle)?;
    let diff = u_tilde.axpy(-1.0, &local)?;
    let grid = u_tilde.grid();
    let mut radii = Vec::new();
    let mut relative = Vec::new();
    for i in dyadic_indices(grid) {
        let r = grid.radius(i);
        if r > cutoff.inner * (1.0 + 1e-12) || dyadic_level(r) > j_deep {
            continue;
        }
        let den = annulus_mean(&local, r, 2.0)?;
        let num = annulus_mean(&diff, r, 2.0)?;
        radii.push(r);
        relative.push(if den > 0.0 { num / den } else { num });
    }
    let max_relative = relative.iter().cloned().fold(0.0, f64::max);
    Ok(EquivalenceReport {
        radii,
        relative,
        max_relative,
    })
}

#[derive(Clone, Debug)]
pub struct WeakResidual {
    /// Test functions `η(r)`.
    pub radial: f64,
    /// Test functions `η(r) x_ℓ`.
    pub linear: f64,
}

impl WeakResidual {
    pub fn max(&self) -> f64 {
        self.radial.max(self.linear)
    }
}

/// Residual of `div(A∇ũ) = div f + f₀` against the two radial test families,
/// in integrated form and relative to the size of the terms:
/// `r^{n−1}⨍θ·(A∇ũ − f) = ∫_0^r ⨍f₀ ρ^{n−1}` and
/// `r^n Q(r) = ∫_0^r ρ^{n−1}(⨍A∇ũ − ⨍f + ρ⨍f₀θ)` with `Q = ⨍(θ·(A∇ũ − f))θ`.
pub fn weak_residual(u: &ModalField, field: &CoefficientField, rhs: &LocalizedRhs) -> Result<WeakResidual> {
    let grid = u.grid();
    grid.compatible(rhs.grid())?;
    let rule = u.basis().rule();
    let n = field.dimension();
    let len = grid.len();
    let mut flux = vec![0.0; len];
    let mut q = vec![[0.0; 3]; len];
    let mut s = vec![[0.0; 3]; len];
    let mut size = vec![0.0; len];
    for j in 0..len {
        let r = grid.radius(j);
        let grads = u.gradient_at(j)?;
        for (qi, g) in grads.iter().enumerate() {
            let th = rule.node3(qi);
            let a = field.matrix_polar(r, rule.node(qi));
            let wq = rule.weight(qi);
            let mut ag = [0.0; 3];
            for i in 0..n {
                for k in 0..n {
                    ag[i] += a[i][k] * g[k];
                }
            }
            let tj: f64 = (0..n).map(|i| th[i] * ag[i]).sum();
            flux[j] += wq * tj;
            size[j] += wq * (0..n).map(|i| ag[i] * ag[i]).sum::<f64>().sqrt();
            for i in 0..n {
                q[j][i] += wq * tj * th[i];
                s[j][i] += wq * ag[i];
            }
        }
    }
    let quad = grid.quadrature();
    let rp = |j: usize, p: i32| grid.radius(j).powi(p);
    let ni = n as i32;

    // radial family: Φ(r) = r^{n−1}(⨍θ·J − f̃), Φ' = r^{n−1} f̄₀
    let phi: Vec<f64> = (0..len).map(|j| rp(j, ni - 1) * (flux[j] - rhs.f_tilde[j])).collect();
    let src: Vec<f64> = (0..len).map(|j| rp(j, ni) * rhs.f0_bar[j]).collect();
    let scale: Vec<f64> = (0..len).map(|j| rp(j, ni - 1) * (size[j] + rhs.f_tilde[j].abs())).collect();
    let radial = integrated_residual(&phi, &src, &scale, &quad);

    let mut linear = 0.0f64;
    for l in 0..n {
        let lhs: Vec<f64> = (0..len).map(|j| rp(j, ni) * (q[j][l] - rhs.f_radial_moment[j][l])).collect();
        let src: Vec<f64> = (0..len)
            .map(|j| rp(j, ni) * (s[j][l] - rhs.f_mean[j][l] + grid.radius(j) * rhs.f0_moment[j][l]))
            .collect();
        let scale: Vec<f64> = (0..len)
            .map(|j| rp(j, ni) * (size[j] + rhs.f_radial_moment[j][l].abs()))
            .collect();
        linear = linear.max(integrated_residual(&lhs, &src, &scale, &quad));
    }
    Ok(WeakResidual { radial, linear })
}

/// `max |Φ(r) − Φ(r_min) − ∫ src ds|` relative to the largest of `scale`
/// and `∫|src| ds`.
fn integrated_residual(phi: &[f64], src: &[f64], scale: &[f64], quad: &crate::quadrature::UniformQuadrature) -> f64 {
    let cum = quad.cumulative(src);
    let abs_cum = quad.cumulative(&src.iter().map(|v| v.abs()).collect::<Vec<_>>());
    let scale = scale.iter().zip(&abs_cum).map(|(p, c)| p.abs() + c).fold(0.0, f64::max);
    if scale == 0.0 {
        return 0.0;
    }
    let err = (0..phi.len()).map(|j| (phi[j] - phi[0] - cum[j]).abs()).fold(0.0, f64::max);
    err / scale
}

/// Fitted constants of the component estimates over dyadic `r <= r_max`:
/// `M₂(u₀'), M₂(r v'), M₂(∇w) <= c ω E ‖u‖`, `M₂(v) <= c E ‖u‖`, and the
/// closeness of `(φ, ψ)` to `((n v − v_t)/n², v_t/n²)` relative to
/// `ω (|v| + |v_t| + ⨍|∇w|)`.
#[derive(Clone, Debug)]
pub struct ComponentBounds {
    pub radii: Vec<f64>,
    pub c_u0: f64,
    pub c_rv: f64,
    pub c_w: f64,
    pub c_v: f64,
    pub c_phase: f64,
}

pub fn component_bounds(sol: &FixedPointSolution, field: &CoefficientField, u_norm: f64, r_max: f64) -> Result<ComponentBounds> {
    let dec = &sol.decomposition;
    let grid = &dec.grid;
    let n = dec.n;
    let nf = n as f64;
    let len = grid.len();
    let m = field.modulus();
    let ec = &sol.estimator;
    let du0_sq: Vec<f64> = dec.du0.iter().map(|x| x * x).collect();
    let rv_sq: Vec<f64> = (0..len)
        .map(|j| grid.radius(j).powi(2) * dec.dv[j].iter().map(|x| x * x).sum::<f64>())
        .collect();
    let v_sq: Vec<f64> = dec.v.iter().map(|v| v.iter().map(|x| x * x).sum()).collect();
    let w_sq = (0..len).map(|j| dec.w.gradient_power_mean(j, Power::Two)).collect::<Result<Vec<_>>>()?;

    let mut out = ComponentBounds {
        radii: Vec::new(),
        c_u0: 0.0,
        c_rv: 0.0,
        c_w: 0.0,
        c_v: 0.0,
        c_phase: 0.0,
    };
    for i in dyadic_indices(grid) {
        let r = grid.radius(i);
        if r > r_max * (1.0 + 1e-12) {
            continue;
        }
        let scale = ec.at(r) * u_norm;
        let mean = |t: &[f64]| annulus_mean_of_profile(grid, n, t, i, Power::Two);
        out.radii.push(r);
        out.c_u0 = out.c_u0.max(mean(&du0_sq)? / (m.eval(r) * scale));
        out.c_rv = out.c_rv.max(mean(&rv_sq)? / (m.eval(r) * scale));
        out.c_w = out.c_w.max(mean(&w_sq)? / (m.eval(r) * scale));
        out.c_v = out.c_v.max(mean(&v_sq)? / scale);
    }

    let vp = &sol.v_profile;
    let one = grid.index_of(1.0).ok_or_else(|| Error::GridMismatch("grid must contain r = 1".into()))?;
    for j in 0..=one {
        let r = grid.radius(j);
        if r > r_max * (1.0 + 1e-12) {
            continue;
        }
        let k = one - j;
        let (v, vt) = (&vp.v[j], &vp.v_t[j]);
        let phi0 = (v * nf - vt) / (nf * nf);
        let psi0 = vt / (nf * nf);
        let d = ((&vp.phi[k] - phi0).norm_squared() + (&vp.psi[k] - psi0).norm_squared()).sqrt();
        let size = v.norm() + vt.norm() + dec.w.gradient_power_mean(j, Power::One)?;
        if size > 0.0 {
            out.c_phase = out.c_phase.max(d / (m.eval(r) * size));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeffs::make_identity_field;
    use crate::pipeline::ball_l2_norm;
    use std::f64::consts::PI;

    fn setup(n: usize) -> (RadialGrid, Arc<HarmonicBasis>) {
        let rule = build_sphere_rule(n, 3).unwrap();
        let basis = Arc::new(HarmonicBasis::new(rule, 3).unwrap());
        (RadialGrid::dyadic(32, 16, 1).unwrap(), basis)
    }

    #[test]
    fn gradient_profile_of_linear_and_quadratic() {
        let (grid, basis) = setup(2);
        let mut x1 = ModalField::from_fn(&grid, &basis, |r, t| r * t[0]);
        x1.differentiate();
        let p = gradient_profile(&x1).unwrap();
        assert!(p.values.iter().all(|v| (v - 1.0).abs() < 1e-8));

        // u = r²φ has |∇u| ∝ r, so M₂ doubles per octave
        let mode = basis.degree_offset(2);
        let q = ModalField::single_mode(&grid, &basis, mode, |r| r * r, |r| 2.0 * r, |_| 2.0);
        let p = gradient_profile(&q).unwrap();
        for w in p.values.windows(2) {
            assert!((w[1] / w[0] - 2.0).abs() < 1e-6);
        }
    }

    #[test]
    fn identity_ratio_is_two_over_root_pi() {
        let (grid, basis) = setup(2);
        let field = make_identity_field(2).unwrap();
        let rule = basis.rule();
        let b = rule.sample(|t| t[0]);
        let u = direct_solve_oracle(&field, &b, &grid, &basis).unwrap().u;
        let ec = estimator_curve(&ReducedCurve::compute(&field, &grid, rule).unwrap());
        let rep = theorem1_check(&gradient_profile(&u).unwrap(), &ec, ball_l2_norm(&u).unwrap(), &RatioOptions::default());
        assert!(rep.passed);
        for row in rep.gated() {
            assert!((row.ratio - 2.0 / PI.sqrt()).abs() < 1e-8);
        }
        let mut csv = Vec::new();
        rep.write_csv(&mut csv).unwrap();
        assert!(String::from_utf8(csv).unwrap().starts_with("j,r,M2_grad,E,ratio,verdict\n"));
    }

    #[test]
    fn growth_trend_is_flagged() {
        let (grid, _) = setup(2);
        let radii: Vec<f64> = (6..=14).map(|j| 2f64.powi(-j)).collect();
        let values: Vec<f64> = (0..9).map(|i| 1.5f64.powi(i)).collect();
        let ec = EstimatorCurve::from_log_values(&grid, vec![0.0; grid.len()]).unwrap();
        let rep = theorem1_check(&AnnulusProfile { radii, values }, &ec, 1.0, &RatioOptions::default());
        assert!(rep.blowup && !rep.passed);
    }

    #[test]
    fn zero_profile_is_perfectly_sharp() {
        let rep = gs_sharpness_check(2, GsProfile::Constant(0.0), &SharpnessOptions::default()).unwrap();
        assert!(rep.drift < 1e-9);
        assert!(rep.ratio.iter().all(|x| (x - 1.0).abs() < 1e-9));
        assert_eq!(rep.total_variation, 0.0);
    }
}
