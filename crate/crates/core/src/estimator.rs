//! The reduced matrix `R(r) = ⨍ (A − n (Aθ) ⊗ θ)`, the functional
//! `μ[M]` and the growth estimator `E(r) = exp ∫_r^1 μ[−R(ρ)] dρ/ρ`.

use crate::coeffs::CoefficientField;
use crate::error::{Error, Result};
use crate::grid::RadialGrid;
use crate::linalg::{spectral_norm, top_symmetric_eigenvalue};
use crate::quadrature::UniformQuadrature;
use crate::sphere::SphereRule;
use nalgebra::DMatrix;

/// `⨍ A(rθ) − n (A(rθ)θ) ⊗ θ dθ`; zero for `r > 1`.
pub fn reduced_matrix(field: &CoefficientField, r: f64, rule: &SphereRule) -> DMatrix<f64> {
    let n = field.dimension();
    let mut out = DMatrix::zeros(n, n);
    if r > 1.0 {
        return out;
    }
    let nf = n as f64;
    for q in 0..rule.len() {
        let th = rule.node(q);
        let a = field.matrix_polar(r, th);
        let w = rule.weight(q);
        for i in 0..n {
            let ath: f64 = (0..n).map(|k| a[i][k] * th[k]).sum();
            for j in 0..n {
                out[(i, j)] += w * (a[i][j] - nf * ath * th[j]);
            }
        }
    }
    out
}

/// Largest eigenvalue of `(M + Mᵀ)/2`.
pub fn mu_max(m: &DMatrix<f64>) -> f64 {
    top_symmetric_eigenvalue(m)
}

/// `R(r_j)` and `μ[−R(r_j)]` on a log grid.
#[derive(Clone, Debug)]
pub struct ReducedCurve {
    grid: RadialGrid,
    matrices: Vec<DMatrix<f64>>,
    mu: Vec<f64>,
}

impl ReducedCurve {
    pub fn compute(field: &CoefficientField, grid: &RadialGrid, rule: &SphereRule) -> Result<Self> {
        if rule.dimension() != field.dimension() {
            return Err(Error::InvalidParameter(format!(
                "rule dimension {} vs field dimension {}",
                rule.dimension(),
                field.dimension()
            )));
        }
        if grid.index_of(1.0).is_none() {
            return Err(Error::GridMismatch("estimator grid must contain r = 1".into()));
        }
        let matrices: Vec<DMatrix<f64>> = (0..grid.len())
            .map(|i| reduced_matrix(field, grid.radius(i), rule))
            .collect();
        let mu = matrices.iter().map(|m| mu_max(&(-m))).collect();
        Ok(Self {
            grid: grid.clone(),
            matrices,
            mu,
        })
    }

    /// Builds a curve from precomputed matrices (e.g. a test-only profile).
    pub fn from_matrices(grid: &RadialGrid, matrices: Vec<DMatrix<f64>>) -> Result<Self> {
        if matrices.len() != grid.len() {
            return Err(Error::GridMismatch(format!("{} matrices for {} radii", matrices.len(), grid.len())));
        }
        let mu = matrices.iter().map(|m| mu_max(&(-m))).collect();
        Ok(Self {
            grid: grid.clone(),
            matrices,
            mu,
        })
    }

    pub fn grid(&self) -> &RadialGrid {
        &self.grid
    }

    pub fn matrices(&self) -> &[DMatrix<f64>] {
        &self.matrices
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    /// `max_j |R(r_j)| / ω(r_j)` over `r_j <= 1`, the fitted constant in `|R| <= c ω`.
    pub fn modulus_constant(&self, field: &CoefficientField) -> f64 {
        (0..self.grid.len())
            .filter(|&i| self.grid.radius(i) <= 1.0)
            .map(|i| spectral_norm(&self.matrices[i]) / field.modulus().eval(self.grid.radius(i)))
            .fold(0.0, f64::max)
    }
}

/// `E(r_j)` on the grid of a reduced curve, normalized by `E(1) = 1`.
#[derive(Clone, Debug)]
pub struct EstimatorCurve {
    grid: RadialGrid,
    mu: Vec<f64>,
    log_e: Vec<f64>,
}

/// Integrates `μ[−R]` in `log ρ` with the kink-aware rule of the grid.
/// Fields are extended by `I` outside the unit ball, so `μ` jumps at `r = 1`
/// and the rule always breaks there.
pub fn estimator_curve(rc: &ReducedCurve) -> EstimatorCurve {
    let grid = rc.grid.clone();
    let one = grid.index_of(1.0).expect("reduced curve grid contains 1");
    let mut breaks = grid.kink_indices();
    breaks.push(one);
    let cum = UniformQuadrature::with_breaks(grid.log_step(), grid.len(), &breaks).cumulative(&rc.mu);
    let log_e = cum.iter().map(|c| cum[one] - c).collect();
    EstimatorCurve {
        grid,
        mu: rc.mu.clone(),
        log_e,
    }
}

impl EstimatorCurve {
    /// Curve from tabulated `log E` values (used for synthetic checks).
    pub fn from_log_values(grid: &RadialGrid, log_e: Vec<f64>) -> Result<Self> {
        if log_e.len() != grid.len() {
            return Err(Error::GridMismatch(format!("{} values for {} radii", log_e.len(), grid.len())));
        }
        let d = grid.quadrature().derivative(&log_e);
        Ok(Self {
            grid: grid.clone(),
            mu: d.into_iter().map(|x| -x).collect(),
            log_e,
        })
    }

    pub fn grid(&self) -> &RadialGrid {
        &self.grid
    }

    pub fn log_values(&self) -> &[f64] {
        &self.log_e
    }

    pub fn values(&self) -> Vec<f64> {
        self.log_e.iter().map(|v| v.exp()).collect()
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    /// Whether `E(r)` would be extrapolated below the grid.
    pub fn is_extrapolated(&self, r: f64) -> bool {
        r < self.grid.r_min() * (1.0 - 1e-12)
    }

    /// `log E(r)`; linear in `log r` between nodes, continued below the grid
    /// with the last value of `μ`.
    pub fn log_at(&self, r: f64) -> f64 {
        if self.is_extrapolated(r) {
            return self.log_e[0] + self.mu[0] * (self.grid.r_min() / r).ln();
        }
        if r >= 1.0 {
            return 0.0;
        }
        self.grid.interpolate(&self.log_e, r)
    }

    pub fn at(&self, r: f64) -> f64 {
        self.log_at(r).exp()
    }

    /// `ℰ(t) = E(e^{−t})`.
    pub fn at_depth(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 1.0;
        }
        let lr = -t;
        if lr < self.grid.log_radius(0) {
            return (self.log_e[0] + self.mu[0] * (self.grid.log_radius(0) - lr)).exp();
        }
        self.at(lr.exp())
    }
}

#[derive(Clone, Debug)]
pub struct RegularityReport {
    pub lambda: f64,
    /// Both `E r^{−λ}` decreasing and `E r^{λ}` increasing on `grid ∩ (0, r0]`.
    pub r0: f64,
    pub holds_everywhere: bool,
    /// Smallest radius at which one of the conditions first fails, scanning upward.
    pub first_failure: Option<f64>,
}

/// Largest `r0 <= 1` below which `E(r) r^{−λ}` is decreasing and `E(r) r^{λ}`
/// is increasing on the grid.
pub fn check_regularity(ec: &EstimatorCurve, lambda: f64) -> Result<RegularityReport> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::InvalidParameter(format!("lambda = {lambda} must lie in (0, 1)")));
    }
    let g = &ec.grid;
    let idx: Vec<usize> = (0..g.len()).filter(|&i| g.radius(i) <= 1.0 + 1e-12).collect();
    let tol = 1e-13;
    let mut r0 = g.radius(idx[0]);
    let mut first_failure = None;
    for w in idx.windows(2) {
        let (a, b) = (w[0], w[1]);
        let dl = ec.log_e[b] - ec.log_e[a];
        let ds = g.log_radius(b) - g.log_radius(a);
        let dec = dl - lambda * ds <= tol;
        let inc = dl + lambda * ds >= -tol;
        if !(dec && inc) {
            first_failure = Some(g.radius(a));
            break;
        }
        r0 = g.radius(b);
    }
    Ok(RegularityReport {
        lambda,
        r0,
        holds_everywhere: first_failure.is_none(),
        first_failure,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeffs::{make_gs_field, make_identity_field, GsProfile};
    use crate::sphere::build_sphere_rule;

    #[test]
    fn mu_examples() {
        let d = DMatrix::from_row_slice(2, 2, &[0.3, 0.0, 0.0, -2.0]);
        assert!((mu_max(&d) - 0.3).abs() < 1e-15);
        let m = DMatrix::from_row_slice(2, 2, &[0.0, 2.0, 0.0, 0.0]);
        assert!((mu_max(&m) - 1.0).abs() < 1e-14);
        let a = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, -2.0, -1.0, 0.0, 3.0, 2.0, -3.0, 0.0]);
        assert!(mu_max(&a).abs() < 1e-15);
    }

    #[test]
    fn identity_reduces_to_zero() {
        for n in [2, 3] {
            let rule = build_sphere_rule(n, 8).unwrap();
            let f = make_identity_field(n).unwrap();
            let r = reduced_matrix(&f, 0.3, &rule);
            assert!(r.amax() < 1e-14);
        }
    }

    #[test]
    fn gs_reduced_matrix_is_scalar() {
        let rule2 = build_sphere_rule(2, 8).unwrap();
        let f2 = make_gs_field(2, GsProfile::Constant(0.5), 1e-3).unwrap();
        let r = reduced_matrix(&f2, 0.5, &rule2);
        let expect = DMatrix::<f64>::identity(2, 2) * -0.25;
        assert!((r - expect).amax() < 1e-14);
        let rule3 = build_sphere_rule(3, 8).unwrap();
        let f3 = make_gs_field(3, GsProfile::Constant(0.3), 1e-3).unwrap();
        let r = reduced_matrix(&f3, 0.5, &rule3);
        let expect = DMatrix::<f64>::identity(3, 3) * -0.2;
        assert!((r - expect).amax() < 1e-14);
        assert!(reduced_matrix(&f3, 1.5, &rule3).amax() == 0.0);
    }

    #[test]
    fn constant_profile_gives_power_law() {
        let rule = build_sphere_rule(2, 8).unwrap();
        let f = make_gs_field(2, GsProfile::Constant(0.4), 1e-3).unwrap();
        let grid = RadialGrid::dyadic(16, 12, 0).unwrap();
        let ec = estimator_curve(&ReducedCurve::compute(&f, &grid, &rule).unwrap());
        for i in 0..grid.len() {
            let r = grid.radius(i);
            let exact = r.powf(-0.2);
            assert!((ec.at(r) / exact - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn closed_form_gs_estimator_in_three_dimensions() {
        let (amp, s) = (0.5, 0.75);
        let rule = build_sphere_rule(3, 8).unwrap();
        let f = make_gs_field(3, GsProfile::LogPower { amp, s }, 1e-3).unwrap();
        let grid = RadialGrid::dyadic(16, 20, 0).unwrap();
        let ec = estimator_curve(&ReducedCurve::compute(&f, &grid, &rule).unwrap());
        for i in 0..grid.len() {
            let r = grid.radius(i);
            let l = 1.0 - r.ln();
            let exact = (2.0 * amp / 3.0 * (l.powf(1.0 - s) - 1.0) / (1.0 - s)).exp();
            assert!((ec.at(r) / exact - 1.0).abs() < 1e-8, "r = {r}");
        }
    }

    #[test]
    fn regularity_examples() {
        let grid = RadialGrid::dyadic(8, 10, 0).unwrap();
        let flat = EstimatorCurve::from_log_values(&grid, vec![0.0; grid.len()]).unwrap();
        assert!(check_regularity(&flat, 0.5).unwrap().holds_everywhere);
        let steep: Vec<f64> = (0..grid.len()).map(|i| -0.9 * grid.log_radius(i)).collect();
        let ec = EstimatorCurve::from_log_values(&grid, steep).unwrap();
        let rep = check_regularity(&ec, 0.5).unwrap();
        assert!(!rep.holds_everywhere);
    }
}
