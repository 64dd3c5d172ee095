//! Direct solver for rotation-invariant fields `A = I + g(r) θθᵀ`.
//!
//! The weak form separates into radial equations
//! `(r^{n−1}(1+g)U')' = λ_k r^{n−3} U` per spherical harmonic.  With
//! `a = U r^{−k}` and `b = (1+g) r^{n−1} U' r^{−(k+n−2)}`, in `s = log r`,
//! `a_s = b/(1+g) − k a`, `b_s = λ a − (k+n−2) b`, which stays bounded for the
//! regular branch.  The integration starts at the inner grid radius on the
//! local regular eigenvector and runs outward.

use crate::coeffs::{CoefficientField, FieldKind};
use crate::error::{Error, Result};
use crate::grid::RadialGrid;
use crate::ode::Dopri;
use crate::potential::ModalField;
use crate::sphere::{harmonic_analyze_with_residual, HarmonicBasis, SphereSamples};
use std::sync::Arc;

#[derive(Clone, Debug)]
pub struct OracleSolution {
    pub u: ModalField,
    /// Radial profiles `U_k(r)` with `U_k(1) = 1`, indexed by degree.
    pub profiles: Vec<Vec<f64>>,
    /// Relative residual of the integrated radial equations on `r <= 1`.
    pub residual: f64,
    /// Part of the boundary data beyond the harmonic degree of the basis.
    pub truncation: f64,
}

fn profile_fn(field: &CoefficientField) -> Result<Box<dyn Fn(f64) -> f64 + Send + Sync>> {
    match field.kind() {
        FieldKind::Identity => Ok(Box::new(|_| 0.0)),
        FieldKind::GilbargSerrin(p) => {
            let p = p.clone();
            Ok(Box::new(move |r| p.g(r)))
        }
        FieldKind::Custom(_) => Err(Error::NonSeparable(
            "the direct solver needs a rotation-invariant field; use fixed_point_solve for general coefficients".into(),
        )),
    }
}

/// Profile of degree `k` with `U(1) = 1`: values `U`, derivatives `U'` and the
/// flux `Y = (1+g) r^{n−1} U'`.
fn radial_profile(
    n: usize,
    k: usize,
    g: &dyn Fn(f64) -> f64,
    grid: &RadialGrid,
    ode: &Dopri,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let nf = n as f64;
    let kf = k as f64;
    let lam = kf * (kf + nf - 2.0);
    let one = grid
        .index_of(1.0)
        .ok_or_else(|| Error::GridMismatch("oracle grid must contain r = 1".into()))?;
    let s: Vec<f64> = (0..grid.len()).map(|j| grid.log_radius(j)).collect();
    let g0 = g(grid.r_min());
    let nu = (-(nf - 2.0) + ((nf - 2.0).powi(2) + 4.0 * lam / (1.0 + g0)).sqrt()) / 2.0;
    let y0 = [1.0, (1.0 + g0) * nu];
    fn rhs(gs: &dyn Fn(f64) -> f64, kf: f64, nf: f64, lam: f64) -> impl Fn(f64, &[f64], &mut [f64]) + '_ {
        move |t: f64, y: &[f64], dy: &mut [f64]| {
            let gg = gs(t.exp());
            dy[0] = y[1] / (1.0 + gg) - kf * y[0];
            dy[1] = lam * y[0] - (kf + nf - 2.0) * y[1];
        }
    }
    let inner = ode.integrate(rhs(g, kf, nf, lam), s[0], &y0, &s[..=one])?;
    let zero = |_: f64| 0.0;
    let outer = if one + 1 < grid.len() {
        ode.integrate(rhs(&zero, kf, nf, lam), 0.0, &inner[one], &s[one + 1..])?
    } else {
        Vec::new()
    };
    let states: Vec<&Vec<f64>> = inner.iter().chain(outer.iter()).collect();
    let scale = states[one][0];
    let mut u = vec![0.0; grid.len()];
    let mut du = vec![0.0; grid.len()];
    let mut flux = vec![0.0; grid.len()];
    for j in 0..grid.len() {
        let r = grid.radius(j);
        let gg = if j <= one { g(r) } else { 0.0 };
        let (a, b) = (states[j][0] / scale, states[j][1] / scale);
        u[j] = a * r.powi(k as i32);
        du[j] = b * r.powf(kf - 1.0) / (1.0 + gg);
        flux[j] = b * r.powf(kf + nf - 2.0);
    }
    Ok((u, du, flux))
}

/// Solves `∂_j(a_ij ∂_i u) = 0` in the unit ball with Dirichlet data given at
/// the nodes of the basis rule.  Outside the ball the harmonic continuation
/// with matching value and flux is returned.
pub fn direct_solve_oracle(
    field: &CoefficientField,
    boundary: &SphereSamples,
    grid: &RadialGrid,
    basis: &Arc<HarmonicBasis>,
) -> Result<OracleSolution> {
    let g = profile_fn(field)?;
    if !boundary.is_scalar() {
        return Err(Error::InvalidParameter("boundary data must be scalar".into()));
    }
    if boundary.rule().len() != basis.rule().len() || field.dimension() != basis.dimension() {
        return Err(Error::GridMismatch("boundary samples do not live on the basis rule".into()));
    }
    let n = basis.dimension();
    let (bc, truncation) = harmonic_analyze_with_residual(boundary, basis);
    let ode = Dopri::with_tolerance(1e-13, 1e-15);
    let modes = basis.num_modes();
    let len = grid.len();
    let one = grid.index_of(1.0).ok_or_else(|| Error::GridMismatch("oracle grid must contain r = 1".into()))?;
    let mut c = vec![0.0; len * modes];
    let mut d = vec![0.0; len * modes];
    let mut profiles = vec![Vec::new(); basis.max_degree() + 1];
    let mut residual = 0.0f64;
    let q = grid.slice(0, one)?.quadrature();
    for k in 0..=basis.max_degree() {
        let off = basis.degree_offset(k);
        let cnt = basis.modes_in_degree(k);
        if bc[off..off + cnt].iter().all(|v| *v == 0.0) {
            continue;
        }
        let (u, du, flux) = radial_profile(n, k, g.as_ref(), grid, &ode)?;
        // Y(r) − Y(r_min) = λ ∫ r^{n−2} U d(log r)
        let lam = basis.eigenvalue(k);
        let integrand: Vec<f64> = (0..=one).map(|j| lam * grid.radius(j).powi(n as i32 - 2) * u[j]).collect();
        let cum = q.cumulative(&integrand);
        let abs_cum = q.cumulative(&integrand.iter().map(|v| v.abs()).collect::<Vec<_>>());
        let scale = (0..=one).map(|j| flux[j].abs() + abs_cum[j]).fold(0.0, f64::max);
        if scale > 0.0 {
            let res = (0..=one).map(|j| (flux[j] - flux[0] - cum[j]).abs()).fold(0.0, f64::max) / scale;
            residual = residual.max(res);
        }
        for mode in off..off + cnt {
            for j in 0..len {
                c[j * modes + mode] = bc[mode] * u[j];
                d[j * modes + mode] = bc[mode] * du[j];
            }
        }
        profiles[k] = u;
    }
    let mut u = ModalField::from_coeffs(grid, basis, c)?;
    u.set_derivatives(d, None)?;
    Ok(OracleSolution {
        u,
        profiles,
        residual,
        truncation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeffs::{make_custom_field, make_gs_field, make_identity_field, GsProfile, MatrixFn, IDENTITY3};
    use crate::sphere::build_sphere_rule;

    fn setup(n: usize) -> (RadialGrid, Arc<HarmonicBasis>) {
        let rule = build_sphere_rule(n, 4).unwrap();
        let basis = Arc::new(HarmonicBasis::new(rule, 4).unwrap());
        (RadialGrid::dyadic(32, 20, 2).unwrap(), basis)
    }

    #[test]
    fn identity_gives_harmonic_extension() {
        for n in [2, 3] {
            let (grid, basis) = setup(n);
            let field = make_identity_field(n).unwrap();
            let b = basis.rule().sample(|t| t[0]);
            let sol = direct_solve_oracle(&field, &b, &grid, &basis).unwrap();
            let x1 = ModalField::from_fn(&grid, &basis, |r, t| r * t[0]);
            let one = grid.index_of(1.0).unwrap();
            for j in 0..=one {
                for mode in 0..basis.num_modes() {
                    let e = sol.u.coeff(j, mode) - x1.coeff(j, mode);
                    assert!(e.abs() < 1e-10 * grid.radius(j).max(1e-300), "n={n} j={j}");
                }
            }
            assert!(sol.residual < 1e-7);

            // degree 2: r² φ_{2,1}
            let mode = basis.degree_offset(2);
            let vals = basis.mode_values(mode).to_vec();
            let b = SphereSamples::scalar(Arc::clone(basis.rule()), vals).unwrap();
            let sol = direct_solve_oracle(&field, &b, &grid, &basis).unwrap();
            for j in (0..=one).step_by(37) {
                let r = grid.radius(j);
                assert!((sol.u.coeff(j, mode) - r * r).abs() < 1e-10 * r * r);
                assert!((sol.u.coeff_deriv(j, mode).unwrap() - 2.0 * r).abs() < 1e-10 * r);
            }
        }
    }

    #[test]
    fn constant_g_gives_power_law() {
        // U = r^ν with ν from the indicial equation
        let n = 2;
        let (grid, basis) = setup(n);
        let g = 0.4;
        let field = make_gs_field(n, GsProfile::Constant(g), 0.1).unwrap();
        let b = basis.rule().sample(|t| t[1]);
        let sol = direct_solve_oracle(&field, &b, &grid, &basis).unwrap();
        let nu = 1.0 / (1.0f64 + g).sqrt();
        let p = &sol.profiles[1];
        let one = grid.index_of(1.0).unwrap();
        for j in (0..=one).step_by(41) {
            let r = grid.radius(j);
            assert!((p[j] - r.powf(nu)).abs() < 1e-9 * r.powf(nu), "r={r}");
        }
    }

    #[test]
    fn custom_fields_are_rejected() {
        let (grid, basis) = setup(2);
        let a: MatrixFn = Arc::new(|_| IDENTITY3);
        let f = make_custom_field(2, a, None, &grid, basis.rule()).unwrap();
        let b = basis.rule().sample(|t| t[0]);
        assert!(matches!(direct_solve_oracle(&f, &b, &grid, &basis), Err(Error::NonSeparable(_))));
    }
}
