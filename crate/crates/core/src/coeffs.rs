//! Coefficient fields `A(x)`, their moduli of continuity at the origin, the
//! square-Dini test and the Gilbarg–Serrin family `A = I + g(|x|) θθᵀ`.
//!
//! Every field is extended by `A = I` outside the unit ball and every modulus
//! by `ω(r) = ω(1)` for `r > 1`.

use crate::error::{Error, Result};
use crate::grid::RadialGrid;
use crate::linalg::symmetric_eigenvalues;
use crate::quadrature::adaptive_simpson;
use crate::sphere::SphereRule;
use nalgebra::DMatrix;
use std::fmt;
use std::sync::Arc;

/// Symmetric matrix stored in a fixed 3×3 array; for `n = 2` only the
/// leading 2×2 block is meaningful.
pub type Mat3 = [[f64; 3]; 3];

pub const IDENTITY3: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

pub type MatrixFn = Arc<dyn Fn(&[f64]) -> Mat3 + Send + Sync>;
pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum ModulusShape {
    Constant(f64),
    /// `amp · (1 + log(1/r))^{-s}` for `r <= 1`.
    LogPower { amp: f64, s: f64 },
    /// Values on a log grid, linear in `log r`, constant beyond both ends.
    Table { grid: RadialGrid, values: Vec<f64> },
}

impl fmt::Debug for ModulusShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Constant(c) => write!(f, "Constant({c})"),
            Self::LogPower { amp, s } => write!(f, "LogPower {{ amp: {amp}, s: {s} }}"),
            Self::Table { grid, .. } => write!(f, "Table({} nodes)", grid.len()),
        }
    }
}

/// Modulus of continuity `ω` together with the exponent `κ` and the
/// smallness budget `δ` used by the constructive solver.
#[derive(Clone, Debug)]
pub struct Modulus {
    shape: ModulusShape,
    pub kappa: f64,
    pub delta: f64,
}

impl Modulus {
    pub fn constant(c: f64) -> Self {
        Self::from_shape(ModulusShape::Constant(c))
    }

    pub fn log_power(amp: f64, s: f64) -> Self {
        Self::from_shape(ModulusShape::LogPower { amp, s })
    }

    pub fn from_table(grid: RadialGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "{} modulus values for {} radii",
                values.len(),
                grid.len()
            )));
        }
        Ok(Self::from_shape(ModulusShape::Table { grid, values }))
    }

    fn from_shape(shape: ModulusShape) -> Self {
        Self {
            shape,
            kappa: 0.5,
            delta: 0.1,
        }
    }

    pub fn with_kappa(mut self, kappa: f64) -> Self {
        self.kappa = kappa;
        self
    }

    pub fn with_delta(mut self, delta: f64) -> Self {
        self.delta = delta;
        self
    }

    pub fn shape(&self) -> &ModulusShape {
        &self.shape
    }

    /// `ω(r)`; for `r > 1` this is `ω(1)`.
    pub fn eval(&self, r: f64) -> f64 {
        let r = r.min(1.0);
        match &self.shape {
            ModulusShape::Table { grid, values } => grid.interpolate(values, r),
            _ => self.at_depth(-r.ln()),
        }
    }

    /// `ω(e^{-t})`, evaluated without forming tiny radii.
    pub fn at_depth(&self, t: f64) -> f64 {
        let t = t.max(0.0);
        match &self.shape {
            ModulusShape::Constant(c) => *c,
            ModulusShape::LogPower { amp, s } => amp.abs() * (1.0 + t).powf(-s),
            ModulusShape::Table { grid, values } => {
                let lr = -t;
                if lr <= grid.log_radius(0) {
                    values[0]
                } else {
                    grid.interpolate(values, lr.exp())
                }
            }
        }
    }

    /// Samples the monotonicity, positivity, `κ` and extension invariants.
    pub fn check(&self, grid: &RadialGrid) -> ModulusReport {
        let radii: Vec<f64> = grid.radii().into_iter().filter(|&r| r <= 1.0).collect();
        let vals: Vec<f64> = radii.iter().map(|&r| self.eval(r)).collect();
        let mut monotone = true;
        let mut positive = vals.iter().all(|&v| v > 0.0 && v.is_finite());
        for w in vals.windows(2) {
            if w[1] < w[0] * (1.0 - 1e-12) {
                monotone = false;
            }
        }
        if vals.is_empty() {
            positive = false;
        }
        // largest r0 such that ω r^{κ-1} is nonincreasing on grid ∩ (0, r0]
        let weighted: Vec<f64> = radii
            .iter()
            .zip(&vals)
            .map(|(r, v)| v * r.powf(self.kappa - 1.0))
            .collect();
        let mut kappa_radius = radii.first().copied().unwrap_or(0.0);
        for i in 1..weighted.len() {
            if weighted[i] > weighted[i - 1] * (1.0 + 1e-12) {
                break;
            }
            kappa_radius = radii[i];
        }
        let one = self.eval(1.0);
        let extension_ok = [1.5, 2.0, 10.0, 1e6].iter().all(|&r| self.eval(r).to_bits() == one.to_bits());
        ModulusReport {
            monotone,
            positive,
            kappa: self.kappa,
            kappa_radius,
            kappa_everywhere: kappa_radius >= 1.0 - 1e-12,
            extension_ok,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ModulusReport {
    pub monotone: bool,
    pub positive: bool,
    pub kappa: f64,
    /// `ω r^{κ-1}` is nonincreasing on the sampled grid below this radius.
    pub kappa_radius: f64,
    pub kappa_everywhere: bool,
    pub extension_ok: bool,
}

/// Outcome of the square-Dini test `∫_0^1 ω²(r) dr/r < ∞`.
#[derive(Clone, Debug)]
pub struct SquareDiniReport {
    /// `∫_{r0}^1 ω² dr/r`.
    pub head: f64,
    /// Estimate of `∫_0^{r0} ω² dr/r`; `None` when divergent.
    pub tail: Option<f64>,
    /// Condensation blocks `∫_{2^j}^{2^{j+1}} ω²(e^{-t}) dt`.
    pub blocks: Vec<f64>,
    /// Fitted geometric ratio of successive blocks.
    pub block_ratio: f64,
    pub convergent: bool,
}

impl SquareDiniReport {
    pub fn total(&self) -> Option<f64> {
        self.tail.map(|t| self.head + t)
    }
}

/// Ratio at or above which the block sums are treated as non-summable.
pub const SQUARE_DINI_RATIO_MARGIN: f64 = 0.02;
const CONDENSATION_BLOCKS: usize = 48;

/// `∫_{r0}^1 ω²(r)/r dr` plus a classification of the full integral.
///
/// In `t = log(1/r)` the integral is `∫ ω²(e^{-t}) dt`, summed in dyadic
/// blocks; the series of blocks is summable iff its fitted ratio is below one.
pub fn square_dini_integral(m: &Modulus, r0: f64) -> Result<SquareDiniReport> {
    if !(r0 > 0.0 && r0 < 1.0) {
        return Err(Error::InvalidParameter(format!("r0 = {r0} must lie in (0, 1)")));
    }
    let t0 = -r0.ln();
    // monotonicity in t (nonincreasing) on a log-spaced sample
    let mut prev = m.at_depth(0.0);
    for i in 1..=4000 {
        let t = (i as f64 / 4000.0 * (CONDENSATION_BLOCKS as f64 + 1.0) * std::f64::consts::LN_2).exp() - 1.0;
        let v = m.at_depth(t);
        if v > prev * (1.0 + 1e-12) + 1e-300 {
            return Err(Error::NonMonotoneModulus(format!(
                "omega increases towards the origin near r = e^-{t:.3e}"
            )));
        }
        prev = v;
    }
    let sq = |t: f64| {
        let w = m.at_depth(t);
        w * w
    };
    let integrate = |a: f64, b: f64| -> f64 {
        if b <= a {
            return 0.0;
        }
        // split into unit pieces in log(1+t) for robustness
        let la = (1.0 + a).ln();
        let lb = (1.0 + b).ln();
        let pieces = ((lb - la) / 0.25).ceil().max(1.0) as usize;
        (0..pieces)
            .map(|i| {
                let x0 = (la + (lb - la) * i as f64 / pieces as f64).exp() - 1.0;
                let x1 = (la + (lb - la) * (i + 1) as f64 / pieces as f64).exp() - 1.0;
                adaptive_simpson(&sq, x0, x1, 1e-14 * (x1 - x0).max(1.0))
            })
            .sum()
    };
    let head = integrate(0.0, t0);
    let blocks: Vec<f64> = (0..CONDENSATION_BLOCKS)
        .map(|j| integrate(2f64.powi(j as i32), 2f64.powi(j as i32 + 1)))
        .collect();
    // least-squares slope of log b_j over the last half of the blocks
    let fit: Vec<(f64, f64)> = blocks
        .iter()
        .enumerate()
        .skip(CONDENSATION_BLOCKS / 2)
        .filter(|(_, b)| **b > 0.0)
        .map(|(j, b)| (j as f64, b.ln()))
        .collect();
    let block_ratio = if fit.len() < 2 {
        0.0
    } else {
        let n = fit.len() as f64;
        let mx = fit.iter().map(|p| p.0).sum::<f64>() / n;
        let my = fit.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = fit.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = fit.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
        (sxy / sxx).exp()
    };
    let convergent = block_ratio <= 1.0 - SQUARE_DINI_RATIO_MARGIN;
    let tail = convergent.then(|| {
        let computed = integrate(t0, t0.max(1.0)) + {
            // whole blocks beyond max(t0, 1), with a partial first block
            let mut acc = 0.0;
            for j in 0..CONDENSATION_BLOCKS {
                let a = 2f64.powi(j as i32);
                let b = 2.0 * a;
                if b <= t0 {
                    continue;
                }
                acc += if a >= t0 { blocks[j] } else { integrate(t0, b) };
            }
            acc
        };
        let last = *blocks.last().unwrap();
        let geometric = if block_ratio > 0.0 { last * block_ratio / (1.0 - block_ratio) } else { 0.0 };
        computed + geometric
    });
    Ok(SquareDiniReport {
        head,
        tail,
        blocks,
        block_ratio,
        convergent,
    })
}

/// Radial profile `g` of a Gilbarg–Serrin field.
#[derive(Clone)]
pub enum GsProfile {
    /// `amp · (log(e/r))^{-s}`.
    LogPower { amp: f64, s: f64 },
    Constant(f64),
    Custom(ScalarFn),
}

impl fmt::Debug for GsProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::LogPower { amp, s } => write!(f, "LogPower {{ amp: {amp}, s: {s} }}"),
            Self::Constant(c) => write!(f, "Constant({c})"),
            Self::Custom(_) => write!(f, "Custom"),
        }
    }
}

impl GsProfile {
    /// `g(r)` for `r <= 1`; zero outside the unit ball.
    pub fn g(&self, r: f64) -> f64 {
        if r > 1.0 {
            return 0.0;
        }
        match self {
            Self::LogPower { amp, s } => amp * (1.0 - r.ln()).powf(-s),
            Self::Constant(c) => *c,
            Self::Custom(f) => f(r),
        }
    }

    /// `g(e^{-t})` for `t >= 0`.
    pub fn at_depth(&self, t: f64) -> f64 {
        if t < 0.0 {
            return 0.0;
        }
        match self {
            Self::LogPower { amp, s } => amp * (1.0 + t).powf(-s),
            _ => self.g((-t).exp()),
        }
    }

    /// `r g'(r)` for `r < 1`.
    pub fn r_dg(&self, r: f64) -> f64 {
        if r >= 1.0 {
            return 0.0;
        }
        match self {
            Self::LogPower { amp, s } => amp * s * (1.0 - r.ln()).powf(-s - 1.0),
            Self::Constant(_) => 0.0,
            Self::Custom(f) => {
                let h: f64 = 1e-5;
                (f(r * h.exp()) - f(r * (-h).exp())) / (2.0 * h)
            }
        }
    }

    fn range(&self) -> (f64, f64) {
        match self {
            Self::LogPower { amp, .. } => (amp.min(0.0), amp.max(0.0)),
            Self::Constant(c) => (*c, *c),
            Self::Custom(f) => {
                let mut lo = f64::INFINITY;
                let mut hi = f64::NEG_INFINITY;
                for i in 0..=60 * 64 {
                    let v = f((-(i as f64) / 64.0 * std::f64::consts::LN_2).exp());
                    lo = lo.min(v);
                    hi = hi.max(v);
                }
                (lo, hi)
            }
        }
    }

    /// Tight modulus `sup_{ρ <= r} |g(ρ)|`.
    fn modulus(&self) -> Result<Modulus> {
        match self {
            Self::LogPower { amp, s } => {
                if *s <= 0.0 {
                    return Err(Error::InvalidParameter(format!("log-power exponent s = {s} must be positive")));
                }
                Ok(Modulus::log_power(*amp, *s))
            }
            Self::Constant(c) => Ok(Modulus::constant(c.abs().max(1e-15))),
            Self::Custom(f) => {
                let grid = RadialGrid::from_exponents(64, -60 * 64, 0)?;
                let mut run = 0.0f64;
                let vals = (0..grid.len())
                    .map(|i| {
                        run = run.max(f(grid.radius(i)).abs());
                        run.max(1e-15)
                    })
                    .collect();
                Modulus::from_table(grid, vals)
            }
        }
    }
}

#[derive(Clone)]
pub enum FieldKind {
    Identity,
    GilbargSerrin(GsProfile),
    Custom(MatrixFn),
}

impl fmt::Debug for FieldKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Identity => write!(f, "Identity"),
            Self::GilbargSerrin(p) => write!(f, "GilbargSerrin({p:?})"),
            Self::Custom(_) => write!(f, "Custom"),
        }
    }
}

/// Symmetric, uniformly elliptic coefficient matrix `A(x)` on ℝⁿ.
#[derive(Clone, Debug)]
pub struct CoefficientField {
    dim: usize,
    kind: FieldKind,
    modulus: Modulus,
    pub lambda_min: f64,
    pub lambda_max: f64,
}

fn check_dim(n: usize) -> Result<()> {
    if n == 2 || n == 3 {
        Ok(())
    } else {
        Err(Error::UnsupportedDimension(n))
    }
}

/// `A ≡ I`; the modulus is the tiny constant `1e-15`.
pub fn make_identity_field(n: usize) -> Result<CoefficientField> {
    check_dim(n)?;
    Ok(CoefficientField {
        dim: n,
        kind: FieldKind::Identity,
        modulus: Modulus::constant(1e-15),
        lambda_min: 1.0,
        lambda_max: 1.0,
    })
}

/// `A = I + g(|x|) θθᵀ`, rejecting profiles with `g <= -1 + eps`.
pub fn make_gs_field(n: usize, profile: GsProfile, eps: f64) -> Result<CoefficientField> {
    check_dim(n)?;
    let (lo, hi) = profile.range();
    if !lo.is_finite() || !hi.is_finite() {
        return Err(Error::InvalidParameter("profile g is unbounded".into()));
    }
    if lo <= -1.0 + eps {
        return Err(Error::Ellipticity(format!("inf g = {lo} <= -1 + {eps}")));
    }
    let modulus = profile.modulus()?;
    Ok(CoefficientField {
        dim: n,
        kind: FieldKind::GilbargSerrin(profile),
        modulus,
        lambda_min: 1.0 + lo.min(0.0),
        lambda_max: 1.0 + hi.max(0.0),
    })
}

/// General field from a closure.  When no modulus is given it is estimated
/// as the running maximum over `grid` of `max_{nodes} max_{ij} |a_ij - δ_ij|`;
/// ellipticity bounds are sampled the same way (and may come out invalid,
/// which `check_field` then reports).
pub fn make_custom_field(
    n: usize,
    a: MatrixFn,
    modulus: Option<Modulus>,
    grid: &RadialGrid,
    rule: &SphereRule,
) -> Result<CoefficientField> {
    check_dim(n)?;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut devs = Vec::with_capacity(grid.len());
    let mut run = 0.0f64;
    for i in 0..grid.len() {
        let r = grid.radius(i);
        let mut dev = 0.0f64;
        for q in 0..rule.len() {
            let x: Vec<f64> = rule.node(q).iter().map(|t| r * t).collect();
            let m = if r > 1.0 { IDENTITY3 } else { a(&x) };
            let (elo, ehi) = eig_bounds(n, &m);
            lo = lo.min(elo);
            hi = hi.max(ehi);
            dev = dev.max(max_deviation(n, &m));
        }
        if r <= 1.0 {
            run = run.max(dev);
        }
        devs.push(run.max(1e-15));
    }
    // beyond 1 the tabulated value is held at ω(1)
    let one = grid.index_of(1.0).unwrap_or(grid.len() - 1);
    for i in one..grid.len() {
        devs[i] = devs[one];
    }
    let modulus = match modulus {
        Some(m) => m,
        None => Modulus::from_table(grid.clone(), devs)?,
    };
    Ok(CoefficientField {
        dim: n,
        kind: FieldKind::Custom(a),
        modulus,
        lambda_min: lo.min(1.0),
        lambda_max: hi.max(1.0),
    })
}

fn max_deviation(n: usize, m: &Mat3) -> f64 {
    let mut d = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let e = if i == j { 1.0 } else { 0.0 };
            d = d.max((m[i][j] - e).abs());
        }
    }
    d
}

fn eig_bounds(n: usize, m: &Mat3) -> (f64, f64) {
    let dm = DMatrix::from_fn(n, n, |i, j| m[i][j]);
    let ev = symmetric_eigenvalues(&dm);
    (ev[0], ev[n - 1])
}

impl CoefficientField {
    pub fn dimension(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> &FieldKind {
        &self.kind
    }

    pub fn modulus(&self) -> &Modulus {
        &self.modulus
    }

    pub fn set_modulus(&mut self, m: Modulus) {
        self.modulus = m;
    }

    pub fn gs_profile(&self) -> Option<&GsProfile> {
        match &self.kind {
            FieldKind::GilbargSerrin(p) => Some(p),
            _ => None,
        }
    }

    /// `A(x)`; the identity for `|x| > 1`.
    pub fn matrix(&self, x: &[f64]) -> Mat3 {
        match &self.kind {
            FieldKind::Identity => IDENTITY3,
            FieldKind::GilbargSerrin(p) => {
                let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                if r > 1.0 || r == 0.0 {
                    return IDENTITY3;
                }
                let g = p.g(r);
                let mut m = IDENTITY3;
                for i in 0..self.dim {
                    for j in 0..self.dim {
                        m[i][j] += g * x[i] * x[j] / (r * r);
                    }
                }
                m
            }
            FieldKind::Custom(f) => {
                let r2: f64 = x.iter().map(|v| v * v).sum();
                if r2 > 1.0 {
                    IDENTITY3
                } else {
                    f(x)
                }
            }
        }
    }

    /// `A(r θ)` for a unit vector `θ`.
    pub fn matrix_polar(&self, r: f64, theta: &[f64]) -> Mat3 {
        if r > 1.0 {
            return IDENTITY3;
        }
        match &self.kind {
            FieldKind::Identity => IDENTITY3,
            FieldKind::GilbargSerrin(p) => {
                let g = p.g(r);
                let mut m = IDENTITY3;
                for i in 0..self.dim {
                    for j in 0..self.dim {
                        m[i][j] += g * theta[i] * theta[j];
                    }
                }
                m
            }
            FieldKind::Custom(f) => {
                let x: Vec<f64> = theta.iter().map(|t| r * t).collect();
                f(&x)
            }
        }
    }

    pub fn matrix_dyn(&self, x: &[f64]) -> DMatrix<f64> {
        let m = self.matrix(x);
        DMatrix::from_fn(self.dim, self.dim, |i, j| m[i][j])
    }
}

#[derive(Clone, Debug)]
pub struct FieldReport {
    pub max_asymmetry: f64,
    pub lambda_min_observed: f64,
    pub lambda_max_observed: f64,
    pub ellipticity_ok: bool,
    /// `(r, sup_{|x|=r} max_ij |a_ij - δ_ij|)` for sampled `r <= 1`.
    pub deviation: Vec<(f64, f64)>,
    /// `min_r (ω(r) - deviation(r))`; negative means the modulus is violated.
    pub modulus_margin: f64,
    pub modulus_ok: bool,
    pub extension_ok: bool,
    pub modulus_report: ModulusReport,
}

impl FieldReport {
    pub fn passed(&self) -> bool {
        self.max_asymmetry <= 1e-14
            && self.ellipticity_ok
            && self.modulus_ok
            && self.extension_ok
            && self.modulus_report.monotone
            && self.modulus_report.positive
    }
}

/// Samples every field invariant on `grid × rule`.
pub fn check_field(field: &CoefficientField, grid: &RadialGrid, rule: &SphereRule) -> FieldReport {
    let n = field.dim;
    let mut asym = 0.0f64;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut deviation = Vec::new();
    let mut margin = f64::INFINITY;
    let mut extension_ok = true;
    for i in 0..grid.len() {
        let r = grid.radius(i);
        let mut dev = 0.0f64;
        for q in 0..rule.len() {
            let x: Vec<f64> = rule.node(q).iter().map(|t| r * t).collect();
            let m = field.matrix(&x);
            for a in 0..n {
                for b in 0..n {
                    asym = asym.max((m[a][b] - m[b][a]).abs());
                }
            }
            let (elo, ehi) = eig_bounds(n, &m);
            lo = lo.min(elo);
            hi = hi.max(ehi);
            dev = dev.max(max_deviation(n, &m));
            if r > 1.0 && m != IDENTITY3 {
                extension_ok = false;
            }
        }
        if r <= 1.0 {
            deviation.push((r, dev));
            margin = margin.min(field.modulus.eval(r) - dev);
        }
    }
    let tol = 1e-12;
    let modulus_report = field.modulus.check(grid);
    FieldReport {
        max_asymmetry: asym,
        lambda_min_observed: lo,
        lambda_max_observed: hi,
        ellipticity_ok: lo > 0.0 && lo >= field.lambda_min - tol && hi <= field.lambda_max + tol,
        deviation,
        modulus_margin: margin,
        modulus_ok: margin >= -tol,
        extension_ok: extension_ok && modulus_report.extension_ok,
        modulus_report,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sphere::build_sphere_rule;

    #[test]
    fn gs_matrix_examples() {
        let f = make_gs_field(2, GsProfile::Constant(0.5), 1e-3).unwrap();
        let m = f.matrix(&[0.3, 0.0]);
        assert_eq!(m[0][0], 1.5);
        assert_eq!(m[1][1], 1.0);
        assert_eq!(m[0][1], 0.0);
        assert_eq!(f.matrix(&[1.2, 0.0]), IDENTITY3);
        let z = make_gs_field(3, GsProfile::Constant(0.0), 1e-3).unwrap();
        assert_eq!(z.matrix(&[0.1, 0.2, 0.3]), IDENTITY3);
    }

    #[test]
    fn gs_rejects_degenerate_profiles() {
        assert!(matches!(
            make_gs_field(2, GsProfile::Constant(-1.0), 1e-3),
            Err(Error::Ellipticity(_))
        ));
        assert!(make_gs_field(2, GsProfile::LogPower { amp: -0.9995, s: 0.75 }, 1e-3).is_err());
    }

    #[test]
    fn log_power_modulus_is_continuous_and_extended() {
        let m = Modulus::log_power(0.5, 0.75);
        assert!((m.eval(1.0) - 0.5).abs() < 1e-15);
        assert_eq!(m.eval(3.0).to_bits(), m.eval(1.0).to_bits());
        let r: f64 = 1e-3;
        assert!((m.eval(r) - 0.5 * (1.0 - r.ln()).powf(-0.75)).abs() < 1e-15);
    }

    #[test]
    fn square_dini_classifies_constant_as_divergent() {
        let rep = square_dini_integral(&Modulus::constant(0.2), 0.01).unwrap();
        assert!(!rep.convergent);
        assert!(rep.tail.is_none());
        assert!((rep.head - 0.04 * (100f64).ln()).abs() < 1e-10);
    }

    #[test]
    fn square_dini_matches_substitution_oracle() {
        // ∫_{r0}^1 (log e/r)^{-1.5} dr/r = 2 (1 - (1+T)^{-1/2}),  T = log(1/r0)
        let r0: f64 = 1e-4;
        let rep = square_dini_integral(&Modulus::log_power(1.0, 0.75), r0).unwrap();
        let t = -r0.ln();
        assert!((rep.head - 2.0 * (1.0 - (1.0 + t).powf(-0.5))).abs() < 1e-10);
        assert!(rep.convergent);
        let total = rep.total().unwrap();
        assert!((total - 2.0).abs() < 0.02, "total {total}");
    }

    #[test]
    fn square_dini_rejects_non_monotone_modulus() {
        let grid = RadialGrid::from_exponents(8, -80, 0).unwrap();
        let vals = (0..grid.len()).map(|i| 1.0 + 0.5 * (i as f64).sin()).collect();
        let m = Modulus::from_table(grid, vals).unwrap();
        assert!(matches!(square_dini_integral(&m, 0.1), Err(Error::NonMonotoneModulus(_))));
    }

    #[test]
    fn check_field_identity_and_gs() {
        let grid = RadialGrid::dyadic(8, 12, 1).unwrap();
        let rule = build_sphere_rule(3, 8).unwrap();
        let id = make_identity_field(3).unwrap();
        assert!(check_field(&id, &grid, &rule).passed());
        let gs = make_gs_field(3, GsProfile::LogPower { amp: 0.5, s: 0.75 }, 1e-3).unwrap();
        let rep = check_field(&gs, &grid, &rule);
        assert!(rep.passed());
        let p = gs.gs_profile().unwrap();
        for (r, dev) in &rep.deviation {
            // sup over the sphere is |g| at θ = e_k; the nodes only come close
            assert!(*dev <= p.g(*r).abs() + 1e-14);
            assert!(*dev >= 0.95 * p.g(*r).abs());
        }
    }

    #[test]
    fn check_field_reports_ellipticity_failure() {
        let grid = RadialGrid::dyadic(8, 6, 1).unwrap();
        let rule = build_sphere_rule(2, 8).unwrap();
        let a: MatrixFn = Arc::new(|x: &[f64]| {
            let r2 = x[0] * x[0] + x[1] * x[1];
            let mut m = IDENTITY3;
            if r2 > 0.0 {
                for i in 0..2 {
                    for j in 0..2 {
                        m[i][j] -= x[i] * x[j] / r2;
                    }
                }
            }
            m
        });
        let f = make_custom_field(2, a, None, &grid, &rule).unwrap();
        let rep = check_field(&f, &grid, &rule);
        assert!(!rep.ellipticity_ok);
        assert!(!rep.passed());
    }

    #[test]
    fn kappa_condition_radius_is_reported() {
        let grid = RadialGrid::dyadic(16, 20, 0).unwrap();
        let rep = Modulus::log_power(0.5, 0.75).check(&grid);
        assert!(rep.monotone && rep.positive);
        // d/dlog r of log(ω r^{-1/2}) = s/(1 + log 1/r) - 1/2 <= 0 iff log(1/r) >= 2s - 1
        assert!(!rep.kappa_everywhere);
        assert!(rep.kappa_radius <= (-0.5f64).exp() + 1e-12);
        assert!(rep.kappa_radius > 0.5);
    }
}
