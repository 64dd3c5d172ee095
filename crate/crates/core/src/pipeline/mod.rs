//! Constructive weak solutions near the origin.
//!
//! A solution is split as `u = u₀(r) + v(r)·x + w` with `w` orthogonal to
//! degrees 0 and 1 on every sphere.  After localization with a cutoff `χ`,
//! `v` solves a `2n`-dimensional block system, `u₀` follows from a radial
//! flux identity and `w` is a fixed point of Newtonian potentials.  A
//! mode-by-mode radial solver serves as an independent reference for
//! rotation-invariant fields.

mod checks;
mod fixed_point;
mod localize;
mod oracle;
mod reduction;

pub use checks::{
    component_bounds, gradient_profile, gs_sharpness_check, oracle_equivalence, theorem1_check, weak_residual,
    ComponentBounds, EquivalenceReport, RatioOptions, RatioReport, SharpnessOptions, SharpnessReport, WeakResidual,
};
pub use fixed_point::{fixed_point_solve, y_norm, FixedPointOptions, FixedPointReport, FixedPointSolution};
pub use localize::{localize_rhs, Cutoff, LocalizedRhs};
pub use oracle::{direct_solve_oracle, OracleSolution};
pub use reduction::{build_reduction, recover_u0, sphere_averages, Reduction, ReductionCoefficients, SphereAverages, U0Split, VProfile};

use crate::error::{Error, Result};
use crate::grid::RadialGrid;
use crate::potential::ModalField;
use std::f64::consts::PI;

/// `|S^{n−1}|`.
pub fn sphere_area(n: usize) -> f64 {
    match n {
        2 => 2.0 * PI,
        3 => 4.0 * PI,
        _ => f64::NAN,
    }
}

/// Pieces of `u₀` and `v` driven by `w` (superscript `w`) and by the
/// localized data alone (superscript `∘`).
#[derive(Clone, Debug)]
pub struct Split {
    pub u0_w: Vec<f64>,
    pub u0_c: Vec<f64>,
    pub v_w: Vec<[f64; 3]>,
    pub v_c: Vec<[f64; 3]>,
}

/// `u(rθ) = u₀(r) + v(r)·rθ + w(rθ)` on a radial grid.
#[derive(Clone, Debug)]
pub struct Decomposition {
    pub grid: RadialGrid,
    pub n: usize,
    pub u0: Vec<f64>,
    /// `u₀'(r)`.
    pub du0: Vec<f64>,
    pub v: Vec<[f64; 3]>,
    /// `v'(r)`.
    pub dv: Vec<[f64; 3]>,
    pub w: ModalField,
    pub split: Option<Split>,
}

impl Decomposition {
    /// Largest degree-0/1 coefficient of `w` relative to its largest coefficient.
    pub fn orthogonality_defect(&self) -> f64 {
        let scale = self.w.max_abs_coeff();
        if scale == 0.0 {
            0.0
        } else {
            self.w.low_mode_size() / scale
        }
    }
}

/// Sphere means: `u₀ = ⨍u`, `v_k = (n/r) ⨍u θ_k`, `w = u − Pu`.
pub fn sphere_decompose(u: &ModalField) -> Result<Decomposition> {
    let mut u = u.clone();
    if !u.has_gradient() {
        u.differentiate();
    }
    let grid = u.grid().clone();
    let basis = u.basis();
    let n = basis.dimension();
    let sn = (n as f64).sqrt();
    let lin = basis.degree_offset(1);
    let mut u0 = vec![0.0; grid.len()];
    let mut du0 = vec![0.0; grid.len()];
    let mut v = vec![[0.0; 3]; grid.len()];
    let mut dv = vec![[0.0; 3]; grid.len()];
    for j in 0..grid.len() {
        let r = grid.radius(j);
        u0[j] = u.coeff(j, 0);
        du0[j] = u.coeff_deriv(j, 0).unwrap_or(0.0);
        for l in 0..n {
            let c = u.coeff(j, lin + l);
            let dc = u.coeff_deriv(j, lin + l).unwrap_or(0.0);
            v[j][l] = sn * c / r;
            dv[j][l] = sn * (dc / r - c / (r * r));
        }
    }
    Ok(Decomposition {
        grid,
        n,
        u0,
        du0,
        v,
        dv,
        w: u.perp(),
        split: None,
    })
}

/// Pointwise sum `u₀ + v·x + w` in harmonic form, with a derivative table
/// when `w` carries one.
pub fn assemble(dec: &Decomposition) -> Result<ModalField> {
    let grid = &dec.grid;
    if dec.w.grid() != grid {
        return Err(Error::GridMismatch("remainder and radial tables use different grids".into()));
    }
    let len = grid.len();
    if dec.u0.len() != len || dec.du0.len() != len || dec.v.len() != len || dec.dv.len() != len {
        return Err(Error::GridMismatch("radial tables do not match the grid".into()));
    }
    let basis = dec.w.basis();
    let n = dec.n;
    let sn = (n as f64).sqrt();
    let modes = basis.num_modes();
    let lin = basis.degree_offset(1);
    let mut c = dec.w.coeffs().to_vec();
    let has_d = dec.w.has_gradient();
    let mut d = vec![0.0; c.len()];
    for j in 0..len {
        let r = grid.radius(j);
        c[j * modes] = dec.u0[j];
        d[j * modes] = dec.du0[j];
        for l in 0..n {
            c[j * modes + lin + l] = r * dec.v[j][l] / sn;
            d[j * modes + lin + l] = (dec.v[j][l] + r * dec.dv[j][l]) / sn;
        }
        if has_d {
            for mode in basis.degree_offset(2)..modes {
                d[j * modes + mode] = dec.w.coeff_deriv(j, mode).unwrap_or(0.0);
            }
        }
    }
    let mut out = ModalField::from_coeffs(grid, basis, c)?;
    if has_d {
        out.set_derivatives(d, None)?;
    }
    Ok(out)
}

/// `‖u‖_{L²(B₁)}` from the harmonic coefficients on `r <= 1`.
pub fn ball_l2_norm(u: &ModalField) -> Result<f64> {
    let grid = u.grid();
    let one = grid
        .index_of(1.0)
        .ok_or_else(|| Error::GridMismatch("grid must contain r = 1".into()))?;
    let n = u.basis().dimension();
    let m = u.num_modes();
    let sub = grid.slice(0, one)?;
    let vals: Vec<f64> = (0..=one)
        .map(|j| {
            let s: f64 = u.coeffs()[j * m..(j + 1) * m].iter().map(|c| c * c).sum();
            s * grid.radius(j).powi(n as i32)
        })
        .collect();
    Ok((sphere_area(n) * sub.quadrature().integral(&vals)).sqrt())
}

/// Standard grid for a dimension: `m` nodes per octave from `2^{-depth}` to
/// `2^{top}`, with kinks at the cutoff radii and at `r = 1`.
pub fn standard_grid(per_octave: usize, depth_octaves: usize, top_octaves: usize, cutoff: &Cutoff) -> Result<RadialGrid> {
    RadialGrid::dyadic(per_octave, depth_octaves, top_octaves)?.with_kinks_at(&[cutoff.inner, cutoff.outer, 1.0])
}

/// Depth at which the `r^{n}` decay of the finite-energy kernel has reached
/// `e^{-40}`.
pub fn default_depth(n: usize) -> usize {
    ((40.0 / n as f64) / std::f64::consts::LN_2).ceil() as usize
}
