//! Cutoff and the right-hand side `div f + f₀` of the localized problem.

use super::sphere_area;
use crate::coeffs::CoefficientField;
use crate::error::{Error, Result};
use crate::grid::RadialGrid;
use crate::potential::{ModalField, VectorModalField};

/// `χ = 1 − S((r − a)/(b − a))` with the quintic smoothstep `S`; `χ ≡ 1` on
/// `[0, a]` and `χ ≡ 0` on `[b, ∞)`.  The cutoff is C², so grids should
/// carry kinks at `a` and `b`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cutoff {
    pub inner: f64,
    pub outer: f64,
}

impl Default for Cutoff {
    fn default() -> Self {
        Self { inner: 0.25, outer: 0.5 }
    }
}

impl Cutoff {
    pub fn new(inner: f64, outer: f64) -> Result<Self> {
        if !(inner > 0.0 && inner < outer && outer < 1.0) {
            return Err(Error::Cutoff(format!(
                "cutoff must switch off inside the unit ball: need 0 < {inner} < {outer} < 1"
            )));
        }
        Ok(Self { inner, outer })
    }

    fn x(&self, r: f64) -> f64 {
        ((r - self.inner) / (self.outer - self.inner)).clamp(0.0, 1.0)
    }

    pub fn chi(&self, r: f64) -> f64 {
        let x = self.x(r);
        1.0 - x * x * x * (10.0 - 15.0 * x + 6.0 * x * x)
    }

    pub fn dchi(&self, r: f64) -> f64 {
        if r <= self.inner || r >= self.outer {
            return 0.0;
        }
        let x = self.x(r);
        -30.0 * x * x * (1.0 - x) * (1.0 - x) / (self.outer - self.inner)
    }

    /// Both switch radii must be grid nodes so that quadratures see the kinks.
    pub fn check_grid(&self, grid: &RadialGrid) -> Result<()> {
        for r in [self.inner, self.outer] {
            let i = grid
                .index_of(r)
                .ok_or_else(|| Error::Cutoff(format!("cutoff radius {r} is not a grid node")))?;
            if !grid.kink_indices().contains(&i) {
                return Err(Error::Cutoff(format!("grid has no kink at the cutoff radius {r}")));
            }
        }
        Ok(())
    }

    /// `χ u` in harmonic form (derivatives kept when `u` has them).
    pub fn apply(&self, u: &ModalField) -> Result<ModalField> {
        let grid = u.grid();
        let m = u.num_modes();
        let mut c = u.coeffs().to_vec();
        let mut d = if u.has_gradient() { Some(vec![0.0; c.len()]) } else { None };
        for j in 0..grid.len() {
            let r = grid.radius(j);
            let (x, dx) = (self.chi(r), self.dchi(r));
            for mode in 0..m {
                let v = c[j * m + mode];
                if let Some(d) = d.as_mut() {
                    d[j * m + mode] = x * u.coeff_deriv(j, mode).unwrap_or(0.0) + dx * v;
                }
                c[j * m + mode] = x * v;
            }
        }
        let mut out = ModalField::from_coeffs(grid, u.basis(), c)?;
        if let Some(d) = d {
            out.set_derivatives(d, None)?;
        }
        Ok(out)
    }
}

/// `f_j = a_ij χ' θ_i u` and `f₀ = χ' θ_j a_ij ∂_i u`, with the sphere
/// moments that enter the radial reduction.
#[derive(Clone, Debug)]
pub struct LocalizedRhs {
    pub cutoff: Cutoff,
    pub f: VectorModalField,
    /// Full harmonic content of `f₀` (degrees 0 and 1 included).
    pub f0: ModalField,
    /// `f̃ = ⨍ f·θ`.
    pub f_tilde: Vec<f64>,
    /// `f̄₀ = ⨍ f₀`.
    pub f0_bar: Vec<f64>,
    /// `⨍ (f·θ) θ`.
    pub f_radial_moment: Vec<[f64; 3]>,
    /// `⨍ f`.
    pub f_mean: Vec<[f64; 3]>,
    /// `⨍ f₀ θ`.
    pub f0_moment: Vec<[f64; 3]>,
    /// `f̃(r) + r^{1−n} ∫_0^r f̄₀ ρ^{n−1} dρ`.
    pub q_rhs: Vec<f64>,
    pub f_norm: f64,
    pub f0_norm: f64,
    /// `∫ f₀ dx` and `∫ |f₀| dx`.
    pub f0_integral: f64,
    pub f0_abs_integral: f64,
}

impl LocalizedRhs {
    pub fn grid(&self) -> &RadialGrid {
        self.f0.grid()
    }

    /// `|∫ f₀| / ∫ |f₀|` (zero for vanishing data).
    pub fn f0_integral_defect(&self) -> f64 {
        if self.f0_abs_integral == 0.0 {
            0.0
        } else {
            self.f0_integral.abs() / self.f0_abs_integral
        }
    }

    /// `(‖f‖ + ‖f₀‖) / ‖u‖`.
    pub fn norm_ratio(&self, u_norm: f64) -> f64 {
        (self.f_norm + self.f0_norm) / u_norm
    }

    /// Multiplies all data by `a`.
    pub fn scaled(&self, a: f64) -> Self {
        let v3 = |x: &Vec<[f64; 3]>| x.iter().map(|v| [a * v[0], a * v[1], a * v[2]]).collect::<Vec<_>>();
        let s = |x: &Vec<f64>| x.iter().map(|v| a * v).collect::<Vec<_>>();
        Self {
            cutoff: self.cutoff,
            f: self.f.scaled(a),
            f0: self.f0.scaled(a),
            f_tilde: s(&self.f_tilde),
            f0_bar: s(&self.f0_bar),
            f_radial_moment: v3(&self.f_radial_moment),
            f_mean: v3(&self.f_mean),
            f0_moment: v3(&self.f0_moment),
            q_rhs: s(&self.q_rhs),
            f_norm: a.abs() * self.f_norm,
            f0_norm: a.abs() * self.f0_norm,
            f0_integral: a * self.f0_integral,
            f0_abs_integral: a.abs() * self.f0_abs_integral,
        }
    }
}

/// Builds the localized data from a field `u` carrying a radial derivative table.
pub fn localize_rhs(u: &ModalField, field: &CoefficientField, cutoff: &Cutoff) -> Result<LocalizedRhs> {
    let grid = u.grid();
    cutoff.check_grid(grid)?;
    if field.dimension() != u.basis().dimension() {
        return Err(Error::GridMismatch("field and solution have different dimensions".into()));
    }
    if !u.has_gradient() {
        return Err(Error::MissingDerivative("localization needs ∇u".into()));
    }
    let basis = u.basis();
    let rule = basis.rule();
    let n = field.dimension();
    let nodes = rule.len();
    let len = grid.len();

    let mut f_nodal: Vec<Vec<[f64; 3]>> = vec![Vec::new(); len];
    let mut f0_nodal: Vec<Vec<f64>> = vec![Vec::new(); len];
    let mut f_tilde = vec![0.0; len];
    let mut f0_bar = vec![0.0; len];
    let mut f_radial_moment = vec![[0.0; 3]; len];
    let mut f_mean = vec![[0.0; 3]; len];
    let mut f0_moment = vec![[0.0; 3]; len];
    let mut f_sq = vec![0.0; len];
    let mut f0_sq = vec![0.0; len];
    let mut f0_abs = vec![0.0; len];
    for j in 0..len {
        let r = grid.radius(j);
        let dchi = cutoff.dchi(r);
        if dchi == 0.0 {
            continue;
        }
        let vals = u.values_at(j);
        let grads = u.gradient_at(j)?;
        let mut fv = vec![[0.0; 3]; nodes];
        let mut f0v = vec![0.0; nodes];
        for q in 0..nodes {
            let th = rule.node3(q);
            let a = field.matrix_polar(r, rule.node(q));
            let wq = rule.weight(q);
            let mut at = [0.0; 3];
            let mut ag = [0.0; 3];
            for i in 0..n {
                for k in 0..n {
                    at[i] += a[i][k] * th[k];
                    ag[i] += a[i][k] * grads[q][k];
                }
            }
            let mut fr = 0.0;
            let mut s = 0.0;
            for i in 0..n {
                fv[q][i] = dchi * vals[q] * at[i];
                fr += fv[q][i] * th[i];
                s += fv[q][i] * fv[q][i];
                f0v[q] += dchi * th[i] * ag[i];
            }
            f_tilde[j] += wq * fr;
            f0_bar[j] += wq * f0v[q];
            for i in 0..n {
                f_radial_moment[j][i] += wq * fr * th[i];
                f_mean[j][i] += wq * fv[q][i];
                f0_moment[j][i] += wq * f0v[q] * th[i];
            }
            f_sq[j] += wq * s;
            f0_sq[j] += wq * f0v[q] * f0v[q];
            f0_abs[j] += wq * f0v[q].abs();
        }
        f_nodal[j] = fv;
        f0_nodal[j] = f0v;
    }
    let f = VectorModalField::from_nodal(grid, basis, |j, out| {
        if !f_nodal[j].is_empty() {
            out.copy_from_slice(&f_nodal[j]);
        }
    });
    let f0 = ModalField::from_nodal(grid, basis, |j, out| {
        if !f0_nodal[j].is_empty() {
            out.copy_from_slice(&f0_nodal[j]);
        }
    });

    let q = grid.quadrature();
    let area = sphere_area(n);
    let rn = |j: usize| grid.radius(j).powi(n as i32);
    // ∫_0^r f̄₀ ρ^{n−1} dρ = ∫ f̄₀ ρ^n d(log ρ)
    let cum = q.cumulative(&(0..len).map(|j| f0_bar[j] * rn(j)).collect::<Vec<_>>());
    let q_rhs = (0..len)
        .map(|j| f_tilde[j] + grid.radius(j).powi(1 - n as i32) * cum[j])
        .collect();
    let vol = |g: &[f64]| area * q.integral(&(0..len).map(|j| g[j] * rn(j)).collect::<Vec<_>>());
    Ok(LocalizedRhs {
        cutoff: *cutoff,
        f,
        f0,
        f_tilde,
        f0_integral: area * cum[len - 1],
        f0_abs_integral: vol(&f0_abs),
        f0_bar,
        f_radial_moment,
        f_mean,
        f0_moment,
        q_rhs,
        f_norm: vol(&f_sq).sqrt(),
        f0_norm: vol(&f0_sq).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeffs::make_identity_field;
    use crate::pipeline::standard_grid;
    use crate::sphere::{build_sphere_rule, HarmonicBasis};
    use std::sync::Arc;

    fn setup(n: usize) -> (RadialGrid, Arc<HarmonicBasis>) {
        let rule = build_sphere_rule(n, 6).unwrap();
        let basis = Arc::new(HarmonicBasis::new(rule, 6).unwrap());
        (standard_grid(32, 6, 1, &Cutoff::default()).unwrap(), basis)
    }

    #[test]
    fn cutoff_shape() {
        let c = Cutoff::default();
        assert_eq!(c.chi(0.1), 1.0);
        assert_eq!(c.chi(0.25), 1.0);
        assert_eq!(c.chi(0.5), 0.0);
        assert_eq!(c.chi(0.9), 0.0);
        assert!((c.chi(0.375) - 0.5).abs() < 1e-15);
        let h = 1e-6;
        for r in [0.3, 0.375, 0.45] {
            let fd = (c.chi(r + h) - c.chi(r - h)) / (2.0 * h);
            assert!((fd - c.dchi(r)).abs() < 1e-8);
        }
        assert!(Cutoff::new(0.5, 0.25).is_err());
        assert!(Cutoff::new(0.25, 1.5).is_err());
    }

    #[test]
    fn cutoff_off_the_grid_is_rejected() {
        let (grid, basis) = setup(2);
        let u = ModalField::from_fn(&grid, &basis, |r, t| r * t[0]);
        let mut u = u;
        u.differentiate();
        let field = make_identity_field(2).unwrap();
        let c = Cutoff::new(0.3, 0.5).unwrap();
        assert!(matches!(localize_rhs(&u, &field, &c), Err(Error::Cutoff(_))));
    }

    #[test]
    fn harmonic_x1_has_compatible_data() {
        for n in [2, 3] {
            let (grid, basis) = setup(n);
            let mut u = ModalField::from_fn(&grid, &basis, |r, t| r * t[0]);
            u.differentiate();
            let field = make_identity_field(n).unwrap();
            let rhs = localize_rhs(&u, &field, &Cutoff::default()).unwrap();
            assert!(rhs.f0_abs_integral > 0.1);
            assert!(rhs.f0_integral_defect() < 1e-10);
            // f = χ' x₁ θ: radial spectrum is χ' r θ₁ in degree 1 only
            let lin = basis.degree_offset(1);
            for j in 0..grid.len() {
                let r = grid.radius(j);
                let expect = Cutoff::default().dchi(r) * r / (n as f64).sqrt();
                assert!((rhs.f.radial(j, lin) - expect).abs() < 1e-12);
                assert!(rhs.f_tilde[j].abs() < 1e-13);
            }
            // support inside the cutoff annulus
            for j in 0..grid.len() {
                let r = grid.radius(j);
                if r <= 0.25 || r >= 0.5 {
                    assert_eq!(rhs.f.sphere_power_mean(j, crate::potential::Power::Two), 0.0);
                    assert_eq!(rhs.f0_bar[j], 0.0);
                }
            }
        }
    }

    #[test]
    fn zero_data_near_annulus_gives_zero_rhs() {
        let (grid, basis) = setup(2);
        let mut u = ModalField::from_fn(&grid, &basis, |r, t| if r < 0.2 { r * r * t[0] * t[1] } else { 0.0 });
        u.differentiate();
        let rhs = localize_rhs(&u, &make_identity_field(2).unwrap(), &Cutoff::default()).unwrap();
        assert_eq!(rhs.f_norm, 0.0);
        assert_eq!(rhs.f0_norm, 0.0);
    }
}
