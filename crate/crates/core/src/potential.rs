//! Fields on punctured space in spherical-harmonic form, annulus means and
//! mode-wise Newtonian potentials.
//!
//! A scalar field is `f(rθ) = Σ c_{k,m}(r) φ_{k,m}(θ)` with coefficients
//! tabulated on a [`RadialGrid`].  A vector field is stored through the two
//! spectra that its divergence sees: the radial part `⟨f·θ, φ⟩` and the
//! poloidal part `⟨f, ∇_S φ⟩`, together with exact per-radius means of `|f|`
//! and `|f|²` for norms.

use crate::error::{Error, Result};
use crate::grid::RadialGrid;
use crate::sphere::HarmonicBasis;
use std::sync::Arc;

/// Which power mean to use; only `p = 1` and `p = 2` are supported.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Power {
    One,
    Two,
}

impl Power {
    pub fn from_f64(p: f64) -> Result<Self> {
        if p == 1.0 {
            Ok(Self::One)
        } else if p == 2.0 {
            Ok(Self::Two)
        } else {
            Err(Error::InvalidParameter(format!("p = {p}; only p = 1 and p = 2 are supported")))
        }
    }

    fn exponent(self) -> f64 {
        match self {
            Self::One => 1.0,
            Self::Two => 2.0,
        }
    }
}

/// Scalar field in harmonic form on a radial grid.
#[derive(Clone, Debug)]
pub struct ModalField {
    grid: RadialGrid,
    basis: Arc<HarmonicBasis>,
    coeffs: Vec<f64>,
    deriv: Option<Vec<f64>>,
    second: Option<Vec<f64>>,
}

impl ModalField {
    pub fn zeros(grid: &RadialGrid, basis: &Arc<HarmonicBasis>) -> Self {
        Self {
            grid: grid.clone(),
            basis: Arc::clone(basis),
            coeffs: vec![0.0; grid.len() * basis.num_modes()],
            deriv: None,
            second: None,
        }
    }

    /// Coefficients laid out as `coeffs[j * modes + mode]`.
    pub fn from_coeffs(grid: &RadialGrid, basis: &Arc<HarmonicBasis>, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != grid.len() * basis.num_modes() {
            return Err(Error::GridMismatch(format!(
                "{} coefficients for {} radii × {} modes",
                coeffs.len(),
                grid.len(),
                basis.num_modes()
            )));
        }
        Ok(Self {
            grid: grid.clone(),
            basis: Arc::clone(basis),
            coeffs,
            deriv: None,
            second: None,
        })
    }

    /// Samples `f(r, θ)` at every node and analyzes it.
    pub fn from_fn<F: FnMut(f64, &[f64]) -> f64>(grid: &RadialGrid, basis: &Arc<HarmonicBasis>, mut f: F) -> Self {
        let rule = basis.rule();
        let modes = basis.num_modes();
        let mut coeffs = vec![0.0; grid.len() * modes];
        let mut vals = vec![0.0; rule.len()];
        for j in 0..grid.len() {
            let r = grid.radius(j);
            for (q, v) in vals.iter_mut().enumerate() {
                *v = rule.weight(q) * f(r, rule.node(q));
            }
            for mode in 0..modes {
                coeffs[j * modes + mode] = basis.mode_values(mode).iter().zip(&vals).map(|(p, v)| p * v).sum();
            }
        }
        Self {
            grid: grid.clone(),
            basis: Arc::clone(basis),
            coeffs,
            deriv: None,
            second: None,
        }
    }

    /// Analyzes node values; `fill(j, out)` writes `f(r_j θ_q)` into `out[q]`.
    pub fn from_nodal<F: FnMut(usize, &mut [f64])>(grid: &RadialGrid, basis: &Arc<HarmonicBasis>, mut fill: F) -> Self {
        let rule = basis.rule();
        let modes = basis.num_modes();
        let mut coeffs = vec![0.0; grid.len() * modes];
        let mut vals = vec![0.0; rule.len()];
        for j in 0..grid.len() {
            vals.iter_mut().for_each(|v| *v = 0.0);
            fill(j, &mut vals);
            if vals.iter().all(|v| *v == 0.0) {
                continue;
            }
            for (q, v) in vals.iter_mut().enumerate() {
                *v *= rule.weight(q);
            }
            for mode in 0..modes {
                coeffs[j * modes + mode] = basis.mode_values(mode).iter().zip(&vals).map(|(p, v)| p * v).sum();
            }
        }
        Self {
            grid: grid.clone(),
            basis: Arc::clone(basis),
            coeffs,
            deriv: None,
            second: None,
        }
    }

    /// Single mode `c(r) φ_mode(θ)` with derivative tables from closures.
    pub fn single_mode(
        grid: &RadialGrid,
        basis: &Arc<HarmonicBasis>,
        mode: usize,
        c: impl Fn(f64) -> f64,
        dc: impl Fn(f64) -> f64,
        ddc: impl Fn(f64) -> f64,
    ) -> Self {
        let modes = basis.num_modes();
        let mut f = Self::zeros(grid, basis);
        let mut d = vec![0.0; f.coeffs.len()];
        let mut dd = vec![0.0; f.coeffs.len()];
        for j in 0..grid.len() {
            let r = grid.radius(j);
            f.coeffs[j * modes + mode] = c(r);
            d[j * modes + mode] = dc(r);
            dd[j * modes + mode] = ddc(r);
        }
        f.deriv = Some(d);
        f.second = Some(dd);
        f
    }

    pub fn grid(&self) -> &RadialGrid {
        &self.grid
    }

    pub fn basis(&self) -> &Arc<HarmonicBasis> {
        &self.basis
    }

    pub fn num_modes(&self) -> usize {
        self.basis.num_modes()
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeff(&self, j: usize, mode: usize) -> f64 {
        self.coeffs[j * self.num_modes() + mode]
    }

    pub fn coeff_deriv(&self, j: usize, mode: usize) -> Option<f64> {
        self.deriv.as_ref().map(|d| d[j * self.num_modes() + mode])
    }

    /// Radial profile of one mode.
    pub fn mode_profile(&self, mode: usize) -> Vec<f64> {
        let m = self.num_modes();
        (0..self.grid.len()).map(|j| self.coeffs[j * m + mode]).collect()
    }

    pub fn has_gradient(&self) -> bool {
        self.deriv.is_some()
    }

    pub fn has_hessian(&self) -> bool {
        self.deriv.is_some() && self.second.is_some()
    }

    pub fn set_derivatives(&mut self, d: Vec<f64>, dd: Option<Vec<f64>>) -> Result<()> {
        if d.len() != self.coeffs.len() || dd.as_ref().is_some_and(|x| x.len() != self.coeffs.len()) {
            return Err(Error::GridMismatch("derivative table size".into()));
        }
        self.deriv = Some(d);
        self.second = dd;
        Ok(())
    }

    /// Fills derivative tables by kink-aware finite differences in `log r`.
    pub fn differentiate(&mut self) {
        let m = self.num_modes();
        let len = self.grid.len();
        let q = self.grid.quadrature();
        let mut d = vec![0.0; self.coeffs.len()];
        let mut dd = vec![0.0; self.coeffs.len()];
        for mode in 0..m {
            let c = self.mode_profile(mode);
            let cs = q.derivative(&c);
            let css = q.derivative(&cs);
            for j in 0..len {
                let r = self.grid.radius(j);
                d[j * m + mode] = cs[j] / r;
                dd[j * m + mode] = (css[j] - cs[j]) / (r * r);
            }
        }
        self.deriv = Some(d);
        self.second = Some(dd);
    }

    /// `self + a * other` (derivative tables kept only when both have them).
    pub fn axpy(&self, a: f64, other: &Self) -> Result<Self> {
        self.check_same(other)?;
        let comb = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(u, v)| u + a * v).collect::<Vec<_>>();
        Ok(Self {
            grid: self.grid.clone(),
            basis: Arc::clone(&self.basis),
            coeffs: comb(&self.coeffs, &other.coeffs),
            deriv: match (&self.deriv, &other.deriv) {
                (Some(x), Some(y)) => Some(comb(x, y)),
                _ => None,
            },
            second: match (&self.second, &other.second) {
                (Some(x), Some(y)) => Some(comb(x, y)),
                _ => None,
            },
        })
    }

    pub fn scaled(&self, a: f64) -> Self {
        let s = |x: &Vec<f64>| x.iter().map(|v| a * v).collect::<Vec<_>>();
        Self {
            grid: self.grid.clone(),
            basis: Arc::clone(&self.basis),
            coeffs: s(&self.coeffs),
            deriv: self.deriv.as_ref().map(s),
            second: self.second.as_ref().map(s),
        }
    }

    fn check_same(&self, other: &Self) -> Result<()> {
        if self.grid != other.grid || self.num_modes() != other.num_modes() {
            return Err(Error::GridMismatch("fields live on different grids or bases".into()));
        }
        Ok(())
    }

    /// Largest coefficient magnitude on degrees 0 and 1.
    pub fn low_mode_size(&self) -> f64 {
        let m = self.num_modes();
        let low = self.basis.degree_offset(2);
        (0..self.grid.len())
            .flat_map(|j| (0..low).map(move |mode| j * m + mode))
            .map(|i| self.coeffs[i].abs())
            .fold(0.0, f64::max)
    }

    pub fn max_abs_coeff(&self) -> f64 {
        self.coeffs.iter().fold(0.0, |a, b| a.max(b.abs()))
    }

    /// Removes degrees 0 and 1 (the projection `f ↦ f − Pf` radius by radius).
    pub fn perp(&self) -> Self {
        let mut out = self.clone();
        let m = self.num_modes();
        let low = self.basis.degree_offset(2);
        for j in 0..self.grid.len() {
            for mode in 0..low {
                out.coeffs[j * m + mode] = 0.0;
                if let Some(d) = out.deriv.as_mut() {
                    d[j * m + mode] = 0.0;
                }
                if let Some(d) = out.second.as_mut() {
                    d[j * m + mode] = 0.0;
                }
            }
        }
        out
    }

    /// Point values at the rule nodes on sphere `j`.
    pub fn values_at(&self, j: usize) -> Vec<f64> {
        let nodes = self.basis.rule().len();
        let m = self.num_modes();
        let mut out = vec![0.0; nodes];
        for mode in 0..m {
            let c = self.coeffs[j * m + mode];
            if c == 0.0 {
                continue;
            }
            for (o, p) in out.iter_mut().zip(self.basis.mode_values(mode)) {
                *o += c * p;
            }
        }
        out
    }

    /// `∇f` at the rule nodes on sphere `j`.
    pub fn gradient_at(&self, j: usize) -> Result<Vec<[f64; 3]>> {
        let d = self
            .deriv
            .as_ref()
            .ok_or_else(|| Error::MissingDerivative("gradient requested without a radial derivative table".into()))?;
        let rule = self.basis.rule();
        let nodes = rule.len();
        let m = self.num_modes();
        let r = self.grid.radius(j);
        let mut out = vec![[0.0; 3]; nodes];
        for mode in 0..m {
            let c = self.coeffs[j * m + mode];
            let dc = d[j * m + mode];
            if c == 0.0 && dc == 0.0 {
                continue;
            }
            for (q, o) in out.iter_mut().enumerate() {
                let th = rule.node3(q);
                let p = self.basis.value(mode, q);
                let g = self.basis.gradient(mode, q);
                for k in 0..3 {
                    o[k] += dc * p * th[k] + c / r * g[k];
                }
            }
        }
        Ok(out)
    }

    /// `⨍ |f|^p` on sphere `j`.
    pub fn sphere_power_mean(&self, j: usize, p: Power) -> f64 {
        let m = self.num_modes();
        match p {
            Power::Two => self.coeffs[j * m..(j + 1) * m].iter().map(|c| c * c).sum(),
            Power::One => {
                let w = self.basis.rule().weights();
                self.values_at(j).iter().zip(w).map(|(v, w)| w * v.abs()).sum()
            }
        }
    }

    /// `⨍ |∇f|^p` on sphere `j`.
    pub fn gradient_power_mean(&self, j: usize, p: Power) -> Result<f64> {
        let d = self
            .deriv
            .as_ref()
            .ok_or_else(|| Error::MissingDerivative("gradient mean without a radial derivative table".into()))?;
        let m = self.num_modes();
        let r = self.grid.radius(j);
        match p {
            Power::Two => Ok((0..m)
                .map(|mode| {
                    let c = self.coeffs[j * m + mode];
                    let dc = d[j * m + mode];
                    let lam = self.basis.eigenvalue(self.basis.degree(mode));
                    dc * dc + lam * c * c / (r * r)
                })
                .sum()),
            Power::One => {
                let w = self.basis.rule().weights();
                Ok(self
                    .gradient_at(j)?
                    .iter()
                    .zip(w)
                    .map(|(g, w)| w * (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt())
                    .sum())
            }
        }
    }

    /// `⨍ |D²f|²` on sphere `j`, summed mode by mode.
    pub fn hessian_square_mean(&self, j: usize) -> Result<f64> {
        let (d, dd) = match (&self.deriv, &self.second) {
            (Some(d), Some(dd)) => (d, dd),
            _ => return Err(Error::MissingDerivative("Hessian mean needs first and second radial derivatives".into())),
        };
        let m = self.num_modes();
        let n = self.basis.dimension() as f64;
        let r = self.grid.radius(j);
        Ok((0..m)
            .map(|mode| {
                let w = self.coeffs[j * m + mode];
                let w1 = d[j * m + mode];
                let w2 = dd[j * m + mode];
                let lam = self.basis.eigenvalue(self.basis.degree(mode));
                let mixed = w1 / r - w / (r * r);
                w2 * w2 + 2.0 * lam * mixed * mixed + (w / (r * r)).powi(2) * (lam * lam - (n - 2.0) * lam)
                    - 2.0 * lam * w * w1 / (r * r * r)
                    + (n - 1.0) * w1 * w1 / (r * r)
            })
            .sum())
    }
}

/// Vector field through its radial and poloidal spectra.
#[derive(Clone, Debug)]
pub struct VectorModalField {
    grid: RadialGrid,
    basis: Arc<HarmonicBasis>,
    radial: Vec<f64>,
    poloidal: Vec<f64>,
    abs_mean: Vec<f64>,
    sq_mean: Vec<f64>,
}

impl VectorModalField {
    pub fn zeros(grid: &RadialGrid, basis: &Arc<HarmonicBasis>) -> Self {
        let size = grid.len() * basis.num_modes();
        Self {
            grid: grid.clone(),
            basis: Arc::clone(basis),
            radial: vec![0.0; size],
            poloidal: vec![0.0; size],
            abs_mean: vec![0.0; grid.len()],
            sq_mean: vec![0.0; grid.len()],
        }
    }

    /// Builds the field from node values; `fill(j, out)` writes `f(r_j θ_q)`
    /// into `out[q]` (ℝ³ layout, unused entries zero).
    pub fn from_nodal<F: FnMut(usize, &mut [[f64; 3]])>(grid: &RadialGrid, basis: &Arc<HarmonicBasis>, mut fill: F) -> Self {
        let rule = basis.rule();
        let nodes = rule.len();
        let modes = basis.num_modes();
        let mut out = Self::zeros(grid, basis);
        let mut buf = vec![[0.0; 3]; nodes];
        let mut radial_w = vec![0.0; nodes];
        for j in 0..grid.len() {
            for b in buf.iter_mut() {
                *b = [0.0; 3];
            }
            fill(j, &mut buf);
            let mut am = 0.0;
            let mut sm = 0.0;
            for q in 0..nodes {
                let th = rule.node3(q);
                let v = buf[q];
                let w = rule.weight(q);
                radial_w[q] = w * (v[0] * th[0] + v[1] * th[1] + v[2] * th[2]);
                let s = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
                am += w * s.sqrt();
                sm += w * s;
            }
            out.abs_mean[j] = am;
            out.sq_mean[j] = sm;
            if sm == 0.0 {
                continue;
            }
            for mode in 0..modes {
                out.radial[j * modes + mode] = basis.mode_values(mode).iter().zip(&radial_w).map(|(p, v)| p * v).sum();
                if basis.degree(mode) == 0 {
                    continue;
                }
                let mut acc = 0.0;
                for q in 0..nodes {
                    let g = basis.gradient(mode, q);
                    let v = buf[q];
                    acc += rule.weight(q) * (g[0] * v[0] + g[1] * v[1] + g[2] * v[2]);
                }
                out.poloidal[j * modes + mode] = acc;
            }
        }
        out
    }

    pub fn grid(&self) -> &RadialGrid {
        &self.grid
    }

    pub fn basis(&self) -> &Arc<HarmonicBasis> {
        &self.basis
    }

    pub fn radial(&self, j: usize, mode: usize) -> f64 {
        self.radial[j * self.basis.num_modes() + mode]
    }

    pub fn poloidal(&self, j: usize, mode: usize) -> f64 {
        self.poloidal[j * self.basis.num_modes() + mode]
    }

    /// `⨍ |f|^p` on sphere `j`.
    pub fn sphere_power_mean(&self, j: usize, p: Power) -> f64 {
        match p {
            Power::One => self.abs_mean[j],
            Power::Two => self.sq_mean[j],
        }
    }

    pub fn axpy(&self, a: f64, other: &Self) -> Result<Self> {
        if self.grid != other.grid || self.basis.num_modes() != other.basis.num_modes() {
            return Err(Error::GridMismatch("vector fields live on different grids".into()));
        }
        let comb = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(u, v)| u + a * v).collect::<Vec<_>>();
        // norms of a combination are not determined by the spectra; keep a
        // triangle-inequality majorant for |f| and the exact value when a = 0
        Ok(Self {
            grid: self.grid.clone(),
            basis: Arc::clone(&self.basis),
            radial: comb(&self.radial, &other.radial),
            poloidal: comb(&self.poloidal, &other.poloidal),
            abs_mean: self.abs_mean.iter().zip(&other.abs_mean).map(|(x, y)| x + a.abs() * y).collect(),
            sq_mean: self
                .sq_mean
                .iter()
                .zip(&other.sq_mean)
                .map(|(x, y)| (x.sqrt() + a.abs() * y.sqrt()).powi(2))
                .collect(),
        })
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self {
            grid: self.grid.clone(),
            basis: Arc::clone(&self.basis),
            radial: self.radial.iter().map(|v| a * v).collect(),
            poloidal: self.poloidal.iter().map(|v| a * v).collect(),
            abs_mean: self.abs_mean.iter().map(|v| a.abs() * v).collect(),
            sq_mean: self.sq_mean.iter().map(|v| a * a * v).collect(),
        }
    }
}

/// `M_p` over `[r_i, 2 r_i]` from per-sphere means `sphere[j] = ⨍_S |f(r_j θ)|^p`:
/// volume-weighted in `log r`, then raised to `1/p`.  Exact on constants.
pub fn annulus_mean_of_profile(grid: &RadialGrid, n: usize, sphere: &[f64], i: usize, p: Power) -> Result<f64> {
    let i1 = grid.doubled(i).ok_or_else(|| {
        Error::OutOfGrid(format!(
            "annulus [{:.3e}, {:.3e}] leaves the grid",
            grid.radius(i),
            2.0 * grid.radius(i)
        ))
    })?;
    let q = grid.slice(i, i1)?.quadrature();
    let vol: Vec<f64> = (i..=i1).map(|j| grid.radius(j).powi(n as i32)).collect();
    let num: Vec<f64> = (i..=i1).map(|j| sphere[j] * vol[j - i]).collect();
    let mean = q.integral(&num) / q.integral(&vol);
    Ok(mean.max(0.0).powf(1.0 / p.exponent()))
}

fn index_of_radius(grid: &RadialGrid, r: f64) -> Result<usize> {
    grid.index_of(r)
        .ok_or_else(|| Error::OutOfGrid(format!("radius {r:.6e} is not a node of the grid")))
}

/// `M_p(f, r) = (⨍_{r<|x|<2r} |f|^p)^{1/p}`.
pub fn annulus_mean(f: &ModalField, r: f64, p: f64) -> Result<f64> {
    let p = Power::from_f64(p)?;
    let i = index_of_radius(&f.grid, r)?;
    let i1 = f.grid.doubled(i).ok_or_else(|| Error::OutOfGrid(format!("annulus at r = {r:e} leaves the grid")))?;
    let sphere: Vec<f64> = (0..f.grid.len())
        .map(|j| if j >= i && j <= i1 { f.sphere_power_mean(j, p) } else { 0.0 })
        .collect();
    annulus_mean_of_profile(&f.grid, f.basis.dimension(), &sphere, i, p)
}

/// `M_p(∇f, r)`.
pub fn gradient_annulus_mean(f: &ModalField, r: f64, p: f64) -> Result<f64> {
    let p = Power::from_f64(p)?;
    let i = index_of_radius(&f.grid, r)?;
    let i1 = f.grid.doubled(i).ok_or_else(|| Error::OutOfGrid(format!("annulus at r = {r:e} leaves the grid")))?;
    let mut sphere = vec![0.0; f.grid.len()];
    for (j, s) in sphere.iter_mut().enumerate().take(i1 + 1).skip(i) {
        *s = f.gradient_power_mean(j, p)?;
    }
    annulus_mean_of_profile(&f.grid, f.basis.dimension(), &sphere, i, p)
}

/// `M_{1,p} = r M_p(∇f) + M_p(f)` (order 1) or `r² M_2(D²f) + M_{1,2}` (order 2).
pub fn sobolev_annulus_mean(f: &ModalField, r: f64, p: f64, order: usize) -> Result<f64> {
    match order {
        1 => Ok(r * gradient_annulus_mean(f, r, p)? + annulus_mean(f, r, p)?),
        2 => {
            if p != 2.0 {
                return Err(Error::InvalidParameter("second-order means are implemented for p = 2".into()));
            }
            let i = index_of_radius(&f.grid, r)?;
            let i1 = f.grid.doubled(i).ok_or_else(|| Error::OutOfGrid(format!("annulus at r = {r:e} leaves the grid")))?;
            let mut sphere = vec![0.0; f.grid.len()];
            for (j, s) in sphere.iter_mut().enumerate().take(i1 + 1).skip(i) {
                *s = f.hessian_square_mean(j)?;
            }
            let h = annulus_mean_of_profile(&f.grid, f.basis.dimension(), &sphere, i, Power::Two)?;
            Ok(r * r * h + sobolev_annulus_mean(f, r, 2.0, 1)?)
        }
        _ => Err(Error::InvalidParameter(format!("order {order}; only 1 and 2 are supported"))),
    }
}

/// `M_p` of a vector field over `[r, 2r]`.
pub fn vector_annulus_mean(f: &VectorModalField, r: f64, p: f64) -> Result<f64> {
    let p = Power::from_f64(p)?;
    let i = index_of_radius(&f.grid, r)?;
    let sphere: Vec<f64> = (0..f.grid.len()).map(|j| f.sphere_power_mean(j, p)).collect();
    annulus_mean_of_profile(&f.grid, f.basis.dimension(), &sphere, i, p)
}

/// Dyadic radii with annulus means.
#[derive(Clone, Debug)]
pub struct AnnulusProfile {
    pub radii: Vec<f64>,
    pub values: Vec<f64>,
}

/// `M_{order,p}(f, 2^{-j})` for every dyadic radius whose annulus fits the grid
/// (`order = 0` means the plain mean).
pub fn annulus_profile(f: &ModalField, p: f64, order: usize) -> Result<AnnulusProfile> {
    let g = &f.grid;
    let m = g.per_octave();
    let mut radii = Vec::new();
    let mut values = Vec::new();
    for i in 0..g.len() {
        if g.exponent(i) % m as i64 != 0 || g.doubled(i).is_none() {
            continue;
        }
        let r = g.radius(i);
        let v = match order {
            0 => annulus_mean(f, r, p)?,
            _ => sobolev_annulus_mean(f, r, p, order)?,
        };
        radii.push(r);
        values.push(v);
    }
    Ok(AnnulusProfile { radii, values })
}

/// Kernel integrals `I⁻_a[F]` and `I⁺_b[F]` in `s = log r` over the grid.
fn kernels(grid: &RadialGrid, data: &[f64], a_minus: f64, a_plus: f64) -> (Vec<f64>, Vec<f64>) {
    let q = grid.quadrature();
    (q.decay_forward(data, a_minus), q.decay_backward(data, a_plus))
}

/// Solves `−Δw = f` for a source without degrees 0 and 1, mode by mode, with
/// the decaying Green kernel `r^k`, `r^{2−n−k}`.  Data outside the grid is
/// taken to be zero.  The result carries first and second radial derivatives.
pub fn newtonian_solve_source(f: &ModalField) -> Result<ModalField> {
    let scale = f.max_abs_coeff();
    let low = f.low_mode_size();
    if low > 1e-12 * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::NotOrthogonal(format!(
            "degree 0/1 coefficients up to {low:.3e} (largest coefficient {scale:.3e})"
        )));
    }
    let grid = &f.grid;
    let basis = &f.basis;
    let n = basis.dimension() as f64;
    let modes = basis.num_modes();
    let len = grid.len();
    let mut w = ModalField::zeros(grid, basis);
    let mut d = vec![0.0; w.coeffs.len()];
    let mut dd = vec![0.0; w.coeffs.len()];
    for mode in basis.degree_offset(2)..modes {
        let c = f.mode_profile(mode);
        if c.iter().all(|v| *v == 0.0) {
            continue;
        }
        let k = basis.degree(mode) as f64;
        let lam = basis.eigenvalue(basis.degree(mode));
        let denom = 2.0 * k + n - 2.0;
        let data: Vec<f64> = (0..len).map(|j| grid.radius(j).powi(2) * c[j]).collect();
        let (im, ip) = kernels(grid, &data, k + n - 2.0, k);
        for j in 0..len {
            let r = grid.radius(j);
            let wv = (im[j] + ip[j]) / denom;
            let w1 = ((2.0 - n - k) * im[j] + k * ip[j]) / (denom * r);
            let w2 = -(n - 1.0) * w1 / r + lam * wv / (r * r) - c[j];
            w.coeffs[j * modes + mode] = wv;
            d[j * modes + mode] = w1;
            dd[j * modes + mode] = w2;
        }
    }
    w.deriv = Some(d);
    w.second = Some(dd);
    Ok(w)
}

/// Solves `−Δw = [div f]^⊥` mode by mode.  The radial derivative in the
/// divergence is moved onto the kernel by parts, so only the spectra of `f`
/// enter the quadratures.  The result carries a first-derivative table.
pub fn newtonian_solve_divergence(f: &VectorModalField) -> Result<ModalField> {
    let grid = &f.grid;
    let basis = &f.basis;
    let n = basis.dimension() as f64;
    let modes = basis.num_modes();
    let len = grid.len();
    let mut w = ModalField::zeros(grid, basis);
    let mut d = vec![0.0; w.coeffs.len()];
    for mode in basis.degree_offset(2)..modes {
        let a: Vec<f64> = (0..len).map(|j| f.radial(j, mode)).collect();
        let b: Vec<f64> = (0..len).map(|j| f.poloidal(j, mode)).collect();
        if a.iter().chain(&b).all(|v| *v == 0.0) {
            continue;
        }
        let k = basis.degree(mode) as f64;
        let alpha = k + n - 2.0;
        let denom = 2.0 * k + n - 2.0;
        let ra: Vec<f64> = (0..len).map(|j| grid.radius(j) * a[j]).collect();
        let rb: Vec<f64> = (0..len).map(|j| grid.radius(j) * b[j]).collect();
        let (am, ap) = kernels(grid, &ra, alpha, k);
        let (bm, bp) = kernels(grid, &rb, alpha, k);
        for j in 0..len {
            let r = grid.radius(j);
            let wv = (-k * am[j] + alpha * ap[j] - bm[j] - bp[j]) / denom;
            let w1 = (alpha * k * (am[j] + ap[j]) + alpha * bm[j] - k * bp[j]) / (denom * r) - a[j];
            w.coeffs[j * modes + mode] = wv;
            d[j * modes + mode] = w1;
        }
    }
    w.deriv = Some(d);
    Ok(w)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolveMode {
    Source,
    Divergence,
}

/// Source of a Newtonian solve, for bound checks.
pub enum Prop3Source<'a> {
    Scalar(&'a ModalField),
    Vector(&'a VectorModalField),
}

#[derive(Clone, Debug)]
pub struct Prop3Report {
    pub mode: SolveMode,
    /// Dyadic radii used for the fit.
    pub radii: Vec<f64>,
    pub lhs: Vec<f64>,
    pub rhs: Vec<f64>,
    /// Minimal `c` with `lhs <= c · rhs` on the sampled radii.
    pub c_fit: f64,
}

/// Fits the constant in the annulus bounds for Newtonian potentials:
/// source: `M_{2,2}(w,r) <= c (r^{-n} ∫_0^r M_2(f,ρ) ρ^{n+1} dρ + r² ∫_r^∞ M_2(f,ρ) ρ^{-1} dρ)`,
/// divergence: `M_{1,2}(w,r) <= c (r^{-n} ∫_0^r M_2(f,ρ) ρ^n dρ + r² ∫_r^∞ M_2(f,ρ) ρ^{-2} dρ)`.
pub fn verify_prop3(w: &ModalField, f: Prop3Source<'_>, margin_octaves: usize) -> Result<Prop3Report> {
    let grid = &w.grid;
    let n = w.basis.dimension();
    let m = grid.per_octave();
    let (mode, sphere): (SolveMode, Vec<f64>) = match f {
        Prop3Source::Scalar(s) => {
            grid.compatible(&s.grid)?;
            (SolveMode::Source, (0..grid.len()).map(|j| s.sphere_power_mean(j, Power::Two)).collect())
        }
        Prop3Source::Vector(v) => {
            grid.compatible(&v.grid)?;
            (SolveMode::Divergence, (0..grid.len()).map(|j| v.sphere_power_mean(j, Power::Two)).collect())
        }
    };
    // annulus profile of the source at every node whose annulus fits
    let last = grid.len() - 1 - m;
    let prof: Vec<f64> = (0..=last)
        .map(|i| annulus_mean_of_profile(grid, n, &sphere, i, Power::Two))
        .collect::<Result<_>>()?;
    let sub = grid.slice(0, last)?;
    let q = sub.quadrature();
    let (inner_pow, outer_pow) = match mode {
        SolveMode::Source => (n as i32 + 2, 0),
        SolveMode::Divergence => (n as i32 + 1, -1),
    };
    let inner: Vec<f64> = (0..=last).map(|i| prof[i] * grid.radius(i).powi(inner_pow)).collect();
    let outer: Vec<f64> = (0..=last).map(|i| prof[i] * grid.radius(i).powi(outer_pow)).collect();
    let ci = q.cumulative(&inner);
    let co = q.cumulative(&outer);
    let total_o = *co.last().unwrap();
    let mut radii = Vec::new();
    let mut lhs = Vec::new();
    let mut rhs = Vec::new();
    let lo = margin_octaves * m;
    let hi = last.saturating_sub(margin_octaves * m);
    for i in lo..=hi {
        if grid.exponent(i) % m as i64 != 0 {
            continue;
        }
        let r = grid.radius(i);
        let right = r.powi(-(n as i32)) * ci[i] + r * r * (total_o - co[i]);
        let left = match mode {
            SolveMode::Source => sobolev_annulus_mean(w, r, 2.0, 2)?,
            SolveMode::Divergence => sobolev_annulus_mean(w, r, 2.0, 1)?,
        };
        radii.push(r);
        lhs.push(left);
        rhs.push(right);
    }
    let c_fit = lhs
        .iter()
        .zip(&rhs)
        .map(|(l, r)| if *l == 0.0 { 0.0 } else if *r == 0.0 { f64::INFINITY } else { l / r })
        .fold(0.0, f64::max);
    Ok(Prop3Report {
        mode,
        radii,
        lhs,
        rhs,
        c_fit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sphere::build_sphere_rule;

    fn setup(n: usize, depth: usize, top: usize) -> (RadialGrid, Arc<HarmonicBasis>) {
        let rule = build_sphere_rule(n, 8).unwrap();
        let basis = Arc::new(HarmonicBasis::new(rule, 8).unwrap());
        (RadialGrid::dyadic(32, depth, top).unwrap(), basis)
    }

    #[test]
    fn annulus_mean_examples() {
        let (grid, basis) = setup(2, 6, 3);
        let one = ModalField::from_fn(&grid, &basis, |_, _| 1.0);
        assert!((annulus_mean(&one, 0.25, 2.0).unwrap() - 1.0).abs() < 1e-14);
        assert!((annulus_mean(&one, 0.25, 1.0).unwrap() - 1.0).abs() < 1e-14);
        let r = 0.5;
        let radial = ModalField::from_fn(&grid, &basis, |r, _| r);
        let m = annulus_mean(&radial, r, 2.0).unwrap();
        assert!((m - r * 2.5f64.sqrt()).abs() < 1e-10);
        let t1 = ModalField::from_fn(&grid, &basis, |_, t| t[0]);
        assert!((annulus_mean(&t1, r, 2.0).unwrap() - 0.5f64.sqrt()).abs() < 1e-12);
        assert!(annulus_mean(&one, 8.0, 2.0).is_err());
    }

    #[test]
    fn sobolev_mean_of_coordinate() {
        let (grid, basis) = setup(3, 6, 3);
        let mut x1 = ModalField::from_fn(&grid, &basis, |r, t| r * t[0]);
        x1.differentiate();
        let r = 0.25;
        let exact_m2 = (r * r * (2f64.powi(5) - 1.0) / 5.0 / ((2f64.powi(3) - 1.0) / 3.0) / 3.0).sqrt();
        let m12 = sobolev_annulus_mean(&x1, r, 2.0, 1).unwrap();
        assert!((m12 - (r + exact_m2)).abs() < 1e-9, "{m12}");
        let doubled = x1.scaled(2.0);
        assert!((sobolev_annulus_mean(&doubled, r, 2.0, 1).unwrap() - 2.0 * m12).abs() < 1e-12);
        let plain = ModalField::from_fn(&grid, &basis, |r, t| r * t[0]);
        assert!(matches!(sobolev_annulus_mean(&plain, r, 2.0, 1), Err(Error::MissingDerivative(_))));
    }

    #[test]
    fn hessian_mean_of_quadratic() {
        for n in [2, 3] {
            let (grid, basis) = setup(n, 4, 2);
            let mut f = ModalField::from_fn(&grid, &basis, |r, t| r * r * t[0] * t[1]);
            f.differentiate();
            let j = grid.index_of(0.5).unwrap();
            assert!((f.hessian_square_mean(j).unwrap() - 2.0).abs() < 1e-8);
            let mut g = ModalField::from_fn(&grid, &basis, |r, t| r * r * (t[0] * t[0] - t[1] * t[1]));
            g.differentiate();
            assert!((g.hessian_square_mean(j).unwrap() - 8.0).abs() < 1e-8);
        }
    }

    /// Gaussian in `log r` centred at `r = 0.3`, negligible at the grid ends.
    fn bump(r: f64) -> (f64, f64, f64) {
        let (s0, sig) = (0.3f64.ln(), 0.5);
        let x = r.ln() - s0;
        let e = (-(x / sig).powi(2)).exp();
        let es = -2.0 * x / (sig * sig) * e;
        let ess = (4.0 * x * x / sig.powi(4) - 2.0 / (sig * sig)) * e;
        (e, es / r, (ess - es) / (r * r))
    }

    #[test]
    fn manufactured_source_is_recovered() {
        for n in [2, 3] {
            let (grid, basis) = setup(n, 12, 3);
            let mode = basis.degree_offset(2);
            let lam = basis.eigenvalue(2);
            let nf = n as f64;
            let f = ModalField::single_mode(
                &grid,
                &basis,
                mode,
                |r| {
                    let (e, e1, e2) = bump(r);
                    -(e2 + (nf - 1.0) * e1 / r - lam * e / (r * r))
                },
                |_| 0.0,
                |_| 0.0,
            );
            let w = newtonian_solve_source(&f).unwrap();
            let mut err = 0.0f64;
            for j in 0..grid.len() {
                let (e, e1, _) = bump(grid.radius(j));
                err = err.max((w.coeff(j, mode) - e).abs());
                err = err.max((w.coeff_deriv(j, mode).unwrap() - e1).abs() * grid.radius(j));
            }
            assert!(err < 1e-7, "n={n} err={err:e}");
            assert_eq!(w.low_mode_size(), 0.0);
        }
    }

    #[test]
    fn manufactured_divergence_is_recovered() {
        // f = −∇w*, w* = η(r) φ: radial spectrum −η', poloidal −λη/r
        for n in [2, 3] {
            let (grid, basis) = setup(n, 12, 3);
            let mode = basis.degree_offset(2) + 1;
            let f = VectorModalField::from_nodal(&grid, &basis, |j, out| {
                let r = grid.radius(j);
                let (e, e1, _) = bump(r);
                for (q, o) in out.iter_mut().enumerate() {
                    let th = basis.rule().node3(q);
                    let p = basis.value(mode, q);
                    let g = basis.gradient(mode, q);
                    for k in 0..3 {
                        o[k] = -(e1 * p * th[k] + e / r * g[k]);
                    }
                }
            });
            let w = newtonian_solve_divergence(&f).unwrap();
            let mut err = 0.0f64;
            for j in 0..grid.len() {
                let (e, e1, _) = bump(grid.radius(j));
                for md in 0..basis.num_modes() {
                    let exact = if md == mode { e } else { 0.0 };
                    err = err.max((w.coeff(j, md) - exact).abs());
                }
                err = err.max((w.coeff_deriv(j, mode).unwrap() - e1).abs() * grid.radius(j));
            }
            assert!(err < 1e-7, "n={n} err={err:e}");
        }
    }

    #[test]
    fn source_with_p_components_is_rejected() {
        let (grid, basis) = setup(2, 4, 1);
        let f = ModalField::from_fn(&grid, &basis, |_, t| t[0]);
        assert!(matches!(newtonian_solve_source(&f), Err(Error::NotOrthogonal(_))));
        let z = ModalField::zeros(&grid, &basis);
        assert_eq!(newtonian_solve_source(&z).unwrap().max_abs_coeff(), 0.0);
    }

    #[test]
    fn shell_source_has_power_law_tails() {
        // (r-1)(2-r) on 1 < r < 2 times φ_2: w = a r² inside, b r^{-3} outside (n = 3)
        let (grid, basis) = setup(3, 6, 5);
        let grid = grid.with_kinks_at(&[1.0, 2.0]).unwrap();
        let mode = basis.degree_offset(2);
        let f = ModalField::single_mode(&grid, &basis, mode, |r| if (1.0..=2.0).contains(&r) { (r - 1.0) * (2.0 - r) } else { 0.0 }, |_| 0.0, |_| 0.0);
        let w = newtonian_solve_source(&f).unwrap();
        // a = ∫_1^2 ρ^{1-k} c dρ / (2k+n-2), b = ∫_1^2 ρ^{k+n-1} c dρ / (2k+n-2)
        let a = (1.5 - 2.0 * std::f64::consts::LN_2) / 5.0;
        let b = (-127.0 / 7.0 + 31.5 - 62.0 / 5.0) / 5.0;
        for j in 0..grid.len() {
            let r = grid.radius(j);
            let c = w.coeff(j, mode);
            if r < 1.0 {
                assert!((c - a * r * r).abs() < 1e-10 * (1.0 + r * r));
            } else if r > 2.0 {
                assert!((c - b * r.powi(-3)).abs() < 1e-10);
            }
        }
    }
}
