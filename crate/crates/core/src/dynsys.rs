//! Linear systems in the time variable `t = log(1/r)`.
//!
//! * `φ' = −R₁(t) φ + f` with fundamental matrix `Φ` and the bound
//!   `|Φ(t)Φ⁻¹(s)| <= ℰ(t)/ℰ(s)`, `ℰ(t) = exp ∫_0^t μ[−R₁]`.
//! * The block system `(φ, ψ)' + diag(0, −nI)(φ, ψ) + 𝓡(φ, ψ) = F` whose
//!   `ψ` component is selected by finite energy (no `e^{nt}` growth) and whose
//!   `φ` component is found by Picard iteration in the weighted norm
//!   `‖φ‖_X = sup |φ(t)| / ℰ(t)`.

use crate::error::{Error, Result};
use crate::estimator::mu_max;
use crate::grid::RadialGrid;
use crate::linalg::spectral_norm;
use crate::ode::Dopri;
use crate::quadrature::{adaptive_simpson, UniformQuadrature};
use nalgebra::{DMatrix, DVector};
use std::sync::Arc;

pub type MatFn = Arc<dyn Fn(f64) -> DMatrix<f64> + Send + Sync>;

/// Uniform grid `t_j = j h`, `j = 0..len`, with optional kink nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeGrid {
    h: f64,
    len: usize,
    breaks: Vec<usize>,
}

impl TimeGrid {
    pub fn uniform(t_max: f64, intervals: usize) -> Result<Self> {
        if !(t_max > 0.0) || intervals == 0 {
            return Err(Error::InvalidParameter(format!("time grid [0, {t_max}] with {intervals} intervals")));
        }
        Ok(Self {
            h: t_max / intervals as f64,
            len: intervals + 1,
            breaks: Vec::new(),
        })
    }

    pub fn with_breaks(mut self, breaks: Vec<usize>) -> Self {
        self.breaks = breaks;
        self
    }

    /// The part `r <= 1` of a radial grid, read in `t = −log r`; node `j`
    /// corresponds to radial index `index_of(1) − j`.
    pub fn from_radial(grid: &RadialGrid) -> Result<Self> {
        let one = grid
            .index_of(1.0)
            .ok_or_else(|| Error::GridMismatch("radial grid must contain r = 1".into()))?;
        let breaks = grid
            .kink_indices()
            .into_iter()
            .filter(|&k| k < one)
            .map(|k| one - k)
            .collect();
        Ok(Self {
            h: grid.log_step(),
            len: one + 1,
            breaks,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn step(&self) -> f64 {
        self.h
    }

    pub fn t(&self, j: usize) -> f64 {
        j as f64 * self.h
    }

    pub fn t_max(&self) -> f64 {
        self.t(self.len - 1)
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.len).map(|j| self.t(j)).collect()
    }

    pub fn breaks(&self) -> &[usize] {
        &self.breaks
    }

    pub fn quadrature(&self) -> UniformQuadrature {
        UniformQuadrature::with_breaks(self.h, self.len, &self.breaks)
    }

    /// Same step, twice the horizon.
    pub fn doubled(&self) -> Self {
        Self {
            h: self.h,
            len: 2 * (self.len - 1) + 1,
            breaks: self.breaks.clone(),
        }
    }

    /// Half the step on the same horizon.
    pub fn refined(&self) -> Self {
        Self {
            h: 0.5 * self.h,
            len: 2 * (self.len - 1) + 1,
            breaks: self.breaks.iter().map(|b| 2 * b).collect(),
        }
    }
}

/// `φ` (and `ψ` for block systems) on a time grid.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub phi: Vec<DVector<f64>>,
    pub psi: Option<Vec<DVector<f64>>>,
}

impl Trajectory {
    pub fn is_finite(&self) -> bool {
        let ok = |v: &Vec<DVector<f64>>| v.iter().all(|x| x.iter().all(|c| c.is_finite()));
        ok(&self.phi) && self.psi.as_ref().is_none_or(ok)
    }
}

fn components(v: &[DVector<f64>], k: usize) -> Vec<f64> {
    v.iter().map(|x| x[k]).collect()
}

fn from_components(cols: &[Vec<f64>]) -> Vec<DVector<f64>> {
    let len = cols[0].len();
    (0..len)
        .map(|j| DVector::from_iterator(cols.len(), cols.iter().map(|c| c[j])))
        .collect()
}

/// `Φ(t_j)` with `Φ' = −R₁Φ`, `Φ(0) = I`.
pub fn fundamental_matrix(r1: &dyn Fn(f64) -> DMatrix<f64>, grid: &TimeGrid, ode: &Dopri) -> Result<Vec<DMatrix<f64>>> {
    let n = r1(0.0).nrows();
    let y0: Vec<f64> = DMatrix::<f64>::identity(n, n).as_slice().to_vec();
    let sol = ode.integrate(
        |t, y, dy| {
            let m = DMatrix::from_column_slice(n, n, y);
            let d = -(r1(t) * m);
            dy.copy_from_slice(d.as_slice());
        },
        0.0,
        &y0,
        &grid.times(),
    )?;
    Ok(sol.into_iter().map(|y| DMatrix::from_column_slice(n, n, &y)).collect())
}

/// `ℰ(t_j) = exp ∫_0^{t_j} μ[−R₁]`.  `μ` has kinks where eigenvalues of the
/// symmetric part cross, so each grid interval is integrated adaptively.
pub fn time_estimator(r1: &dyn Fn(f64) -> DMatrix<f64>, grid: &TimeGrid) -> Vec<f64> {
    let mu = |t: f64| mu_max(&(-r1(t)));
    let times = grid.times();
    let mut acc = 0.0;
    let mut out = Vec::with_capacity(times.len());
    out.push(1.0);
    for w in times.windows(2) {
        acc += adaptive_simpson(&mu, w[0], w[1], 1e-14);
        out.push(acc.exp());
    }
    out
}

/// `|det Φ(t) − exp(−∫ tr R₁)| / exp(−∫ tr R₁)`, worst over the grid.
pub fn liouville_defect(phi: &[DMatrix<f64>], r1: &dyn Fn(f64) -> DMatrix<f64>, grid: &TimeGrid) -> f64 {
    let tr: Vec<f64> = grid.times().iter().map(|&t| -r1(t).trace()).collect();
    let cum = grid.quadrature().cumulative(&tr);
    phi.iter()
        .zip(cum)
        .map(|(p, c)| (p.determinant() / c.exp() - 1.0).abs())
        .fold(0.0, f64::max)
}

#[derive(Clone, Debug)]
pub struct PropagatorReport {
    /// `min_t (ℰ(t) − |Φ(t)|)/ℰ(t)`; negative means the bound is violated.
    pub worst_norm_margin: f64,
    /// `min_{s<t} (ℰ(t)/ℰ(s) − |Φ(t)Φ⁻¹(s)|)/(ℰ(t)/ℰ(s))`.
    pub worst_pair_margin: f64,
    pub pairs_checked: usize,
}

impl PropagatorReport {
    pub fn holds(&self, tol: f64) -> bool {
        self.worst_norm_margin >= -tol && self.worst_pair_margin >= -tol
    }
}

/// Spectral-norm check of `|Φ| <= ℰ` and `|Φ(t)Φ⁻¹(s)| <= ℰ(t)/ℰ(s)` over
/// all grid pairs `s < t` (every `stride`-th node).
pub fn verify_propagator_bounds(phi: &[DMatrix<f64>], cal_e: &[f64], stride: usize) -> PropagatorReport {
    let stride = stride.max(1);
    let mut worst_norm = f64::INFINITY;
    for (p, e) in phi.iter().zip(cal_e) {
        worst_norm = worst_norm.min((e - spectral_norm(p)) / e);
    }
    let idx: Vec<usize> = (0..phi.len()).step_by(stride).collect();
    let inv: Vec<DMatrix<f64>> = idx.iter().map(|&i| phi[i].clone().try_inverse().expect("Φ is invertible")).collect();
    let mut worst_pair = f64::INFINITY;
    let mut pairs = 0;
    for (a, &s) in idx.iter().enumerate() {
        for &t in idx.iter().skip(a + 1) {
            let bound = cal_e[t] / cal_e[s];
            let v = spectral_norm(&(&phi[t] * &inv[a]));
            worst_pair = worst_pair.min((bound - v) / bound);
            pairs += 1;
        }
    }
    PropagatorReport {
        worst_norm_margin: worst_norm,
        worst_pair_margin: if pairs == 0 { 0.0 } else { worst_pair },
        pairs_checked: pairs,
    }
}

#[derive(Clone, Debug)]
pub struct InhomogeneousSolution {
    pub trajectory: Trajectory,
    pub cal_e: Vec<f64>,
    /// `‖ℰ⁻¹ f‖_{L¹(0, T)}`.
    pub weighted_l1: f64,
    /// `min_t (ℰ(t)(|φ0| + ‖ℰ⁻¹f‖) − |φ(t)|) / (ℰ(t)(…))`.
    pub bound_margin: f64,
}

/// `φ(t) = Φ(t)(φ0 + ∫_0^t Φ⁻¹ f)`.
pub fn solve_inhomogeneous(
    r1: &dyn Fn(f64) -> DMatrix<f64>,
    f: &dyn Fn(f64) -> DVector<f64>,
    phi0: &DVector<f64>,
    grid: &TimeGrid,
    ode: &Dopri,
) -> Result<InhomogeneousSolution> {
    let n = phi0.len();
    let phi = fundamental_matrix(r1, grid, ode)?;
    let cal_e = time_estimator(r1, grid);
    let times = grid.times();
    let fv: Vec<DVector<f64>> = times.iter().map(|&t| f(t)).collect();
    let q = grid.quadrature();
    let weighted: Vec<f64> = fv.iter().zip(&cal_e).map(|(v, e)| v.norm() / e).collect();
    let cum_w = q.cumulative(&weighted);
    let weighted_l1 = *cum_w.last().unwrap();
    let half = cum_w[(grid.len() - 1) / 2];
    if !weighted_l1.is_finite() || (half > 0.0 && (weighted_l1 - half) > 0.5 * half) {
        return Err(Error::Divergent(format!(
            "‖ℰ⁻¹f‖ on [0, {:.3}] = {weighted_l1:.3e} does not settle (second half contributes {:.3e})",
            grid.t_max(),
            weighted_l1 - half
        )));
    }
    let y: Vec<DVector<f64>> = phi
        .iter()
        .zip(&fv)
        .map(|(p, v)| p.clone().try_inverse().expect("Φ is invertible") * v)
        .collect();
    let cols: Vec<Vec<f64>> = (0..n).map(|k| q.cumulative(&components(&y, k))).collect();
    let integral = from_components(&cols);
    let sol: Vec<DVector<f64>> = phi.iter().zip(&integral).map(|(p, i)| p * (phi0 + i)).collect();
    let p0 = phi0.norm();
    let bound_margin = sol
        .iter()
        .zip(&cal_e)
        .zip(&cum_w)
        .map(|((s, e), w)| {
            let b = e * (p0 + w);
            if b == 0.0 {
                if s.norm() == 0.0 {
                    0.0
                } else {
                    -1.0
                }
            } else {
                (b - s.norm()) / b
            }
        })
        .fold(f64::INFINITY, f64::min);
    Ok(InhomogeneousSolution {
        trajectory: Trajectory {
            times,
            phi: sol,
            psi: None,
        },
        cal_e,
        weighted_l1,
        bound_margin,
    })
}

/// Direct adaptive integration of `φ' = −R₁φ + f`, used as an independent check.
pub fn integrate_directly(
    r1: &dyn Fn(f64) -> DMatrix<f64>,
    f: &dyn Fn(f64) -> DVector<f64>,
    phi0: &DVector<f64>,
    times: &[f64],
    ode: &Dopri,
) -> Result<Vec<DVector<f64>>> {
    let sol = ode.integrate(
        |t, y, dy| {
            let v = DVector::from_column_slice(y);
            let d = -(r1(t) * v) + f(t);
            dy.copy_from_slice(d.as_slice());
        },
        0.0,
        phi0.as_slice(),
        times,
    )?;
    Ok(sol.into_iter().map(DVector::from_vec).collect())
}

/// Data of the block system; `𝓡(t)` is `2n × 2n` with blocks
/// `[[R₁, R₂], [R₃, R₄]]` and vanishes for `t < 0`.
#[derive(Clone)]
pub struct BlockSystem {
    pub n: usize,
    pub coupling: MatFn,
    /// `F(t_j) = (F₁, F₂)(t_j)`.
    pub forcing: Vec<DVector<f64>>,
    /// `ϖ(t_j) = ω(e^{−t_j})`.
    pub bound: Vec<f64>,
    pub delta: f64,
    pub grid: TimeGrid,
}

#[derive(Clone, Debug)]
pub struct PicardOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PicardOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 200,
        }
    }
}

#[derive(Clone, Debug)]
pub struct BlockSolution {
    pub trajectory: Trajectory,
    pub iterations: usize,
    /// Largest observed ratio of successive Picard increments in the X-norm.
    pub contraction: f64,
    /// X-norms of the Picard increments.
    pub increments: Vec<f64>,
}

/// Propagators and block samples of `𝓡` on a grid, reusable across forcings.
#[derive(Clone, Debug)]
pub struct BlockPropagators {
    n: usize,
    grid: TimeGrid,
    phi: Vec<DMatrix<f64>>,
    phi_inv: Vec<DMatrix<f64>>,
    psi: Vec<DMatrix<f64>>,
    psi_inv: Vec<DMatrix<f64>>,
    r2: Vec<DMatrix<f64>>,
    r3: Vec<DMatrix<f64>>,
    cal_e: Vec<f64>,
    /// `max_t max_j |R_j(t)| / ϖ(t)` when a bound is supplied.
    block_bound_ratio: Option<f64>,
}

fn block(m: &DMatrix<f64>, n: usize, i: usize, j: usize) -> DMatrix<f64> {
    m.view((i * n, j * n), (n, n)).into_owned()
}

impl BlockPropagators {
    pub fn new(n: usize, coupling: &MatFn, grid: &TimeGrid, bound: Option<&[f64]>, ode: &Dopri) -> Result<Self> {
        let c1 = Arc::clone(coupling);
        let r1 = move |t: f64| block(&c1(t), n, 0, 0);
        let c4 = Arc::clone(coupling);
        let r4 = move |t: f64| block(&c4(t), n, 1, 1);
        let phi = fundamental_matrix(&r1, grid, ode)?;
        let psi = fundamental_matrix(&r4, grid, ode)?;
        let inv = |v: &Vec<DMatrix<f64>>| -> Result<Vec<DMatrix<f64>>> {
            v.iter()
                .map(|m| {
                    m.clone()
                        .try_inverse()
                        .ok_or_else(|| Error::Contraction("singular fundamental matrix".into()))
                })
                .collect()
        };
        let phi_inv = inv(&phi)?;
        let psi_inv = inv(&psi)?;
        let samples: Vec<DMatrix<f64>> = grid.times().iter().map(|&t| coupling(t)).collect();
        let r2 = samples.iter().map(|m| block(m, n, 0, 1)).collect();
        let r3 = samples.iter().map(|m| block(m, n, 1, 0)).collect();
        let mu: Vec<f64> = samples.iter().map(|m| mu_max(&(-block(m, n, 0, 0)))).collect();
        let cal_e = grid.quadrature().cumulative(&mu).into_iter().map(f64::exp).collect();
        let block_bound_ratio = bound.map(|b| {
            samples
                .iter()
                .zip(b)
                .map(|(m, w)| {
                    let worst = (0..2)
                        .flat_map(|i| (0..2).map(move |j| (i, j)))
                        .map(|(i, j)| spectral_norm(&block(m, n, i, j)))
                        .fold(0.0, f64::max);
                    if worst == 0.0 {
                        0.0
                    } else {
                        worst / w
                    }
                })
                .fold(0.0, f64::max)
        });
        Ok(Self {
            n,
            grid: grid.clone(),
            phi,
            phi_inv,
            psi,
            psi_inv,
            r2,
            r3,
            cal_e,
            block_bound_ratio,
        })
    }

    pub fn cal_e(&self) -> &[f64] {
        &self.cal_e
    }

    pub fn phi(&self) -> &[DMatrix<f64>] {
        &self.phi
    }

    pub fn psi(&self) -> &[DMatrix<f64>] {
        &self.psi
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn block_bound_ratio(&self) -> Option<f64> {
        self.block_bound_ratio
    }

    /// `e^{nt} Ψ(t) ∫_t^T Ψ⁻¹(s) h(s) e^{−ns} ds`.
    fn finite_energy(&self, h: &[DVector<f64>], q: &UniformQuadrature) -> Vec<DVector<f64>> {
        let n = self.n;
        let y: Vec<DVector<f64>> = self.psi_inv.iter().zip(h).map(|(p, v)| p * v).collect();
        let cols: Vec<Vec<f64>> = (0..n).map(|k| q.decay_backward(&components(&y, k), n as f64)).collect();
        from_components(&cols)
            .iter()
            .zip(&self.psi)
            .map(|(v, p)| p * v)
            .collect()
    }

    /// `Φ(t) (φ0 + ∫_0^t Φ⁻¹ h)`.
    fn variation(&self, phi0: &DVector<f64>, h: &[DVector<f64>], q: &UniformQuadrature) -> Vec<DVector<f64>> {
        let n = self.n;
        let y: Vec<DVector<f64>> = self.phi_inv.iter().zip(h).map(|(p, v)| p * v).collect();
        let cols: Vec<Vec<f64>> = (0..n).map(|k| q.cumulative(&components(&y, k))).collect();
        from_components(&cols)
            .iter()
            .zip(&self.phi)
            .map(|(i, p)| p * (phi0 + i))
            .collect()
    }

    fn x_norm(&self, v: &[DVector<f64>]) -> f64 {
        v.iter().zip(&self.cal_e).map(|(x, e)| x.norm() / e).fold(0.0, f64::max)
    }

    /// Finite-energy solution for forcing `F` (length-`2n` vectors on the grid).
    pub fn solve(&self, forcing: &[DVector<f64>], phi0: &DVector<f64>, opts: &PicardOptions) -> Result<BlockSolution> {
        let n = self.n;
        if forcing.len() != self.grid.len() {
            return Err(Error::GridMismatch(format!("{} forcing samples for {} times", forcing.len(), self.grid.len())));
        }
        let q = self.grid.quadrature();
        let f1: Vec<DVector<f64>> = forcing.iter().map(|v| v.rows(0, n).into_owned()).collect();
        let f2: Vec<DVector<f64>> = forcing.iter().map(|v| v.rows(n, n).into_owned()).collect();
        let step = |phi: &[DVector<f64>]| -> (Vec<DVector<f64>>, Vec<DVector<f64>>) {
            let h: Vec<DVector<f64>> = self.r3.iter().zip(phi).zip(&f2).map(|((r, p), f)| r * p - f).collect();
            let psi = self.finite_energy(&h, &q);
            let src: Vec<DVector<f64>> = f1.iter().zip(&self.r2).zip(&psi).map(|((f, r), s)| f - r * s).collect();
            (self.variation(phi0, &src, &q), psi)
        };
        let zero = vec![DVector::zeros(n); self.grid.len()];
        let (mut phi, _) = step(&zero);
        let mut psi;
        let mut increments = Vec::new();
        let mut contraction = 0.0f64;
        let mut iterations = 1;
        loop {
            let (next_phi, next_psi) = step(&phi);
            let diff: Vec<DVector<f64>> = next_phi.iter().zip(&phi).map(|(a, b)| a - b).collect();
            let inc = self.x_norm(&diff);
            let size = self.x_norm(&next_phi);
            if let Some(&prev) = increments.last() {
                let prev: f64 = prev;
                if prev > 1e-14 * size.max(f64::MIN_POSITIVE) {
                    contraction = contraction.max(inc / prev);
                }
            }
            increments.push(inc);
            phi = next_phi;
            psi = next_psi;
            iterations += 1;
            if !inc.is_finite() {
                return Err(self.contraction_error(f64::INFINITY));
            }
            if inc <= opts.tol * size || inc == 0.0 {
                break;
            }
            if increments.len() >= 4 && contraction >= 1.0 {
                return Err(self.contraction_error(contraction));
            }
            if iterations >= opts.max_iter {
                return Err(Error::Contraction(format!(
                    "no convergence after {iterations} Picard iterations (last increment {inc:.3e}, factor {contraction:.3})"
                )));
            }
        }
        Ok(BlockSolution {
            trajectory: Trajectory {
                times: self.grid.times(),
                phi,
                psi: Some(psi),
            },
            iterations,
            contraction,
            increments,
        })
    }

    fn contraction_error(&self, factor: f64) -> Error {
        Error::Contraction(format!(
            "measured Picard factor {factor:.3} >= 1: the coupling is too large for the smallness budget \
             (sup |R_j|/ϖ = {:?}); rescale the coefficient deviation or reduce delta",
            self.block_bound_ratio
        ))
    }

    /// `max_k ‖S(ℰ e_k)‖_X`, a lower estimate of `‖S‖_{X→X}`.
    pub fn s_norm_estimate(&self) -> f64 {
        let n = self.n;
        let q = self.grid.quadrature();
        (0..n)
            .map(|k| {
                let phi: Vec<DVector<f64>> = self
                    .cal_e
                    .iter()
                    .map(|e| {
                        let mut v = DVector::zeros(n);
                        v[k] = *e;
                        v
                    })
                    .collect();
                let h: Vec<DVector<f64>> = self.r3.iter().zip(&phi).map(|(r, p)| r * p).collect();
                let psi = self.finite_energy(&h, &q);
                let src: Vec<DVector<f64>> = self.r2.iter().zip(&psi).map(|(r, s)| -(r * s)).collect();
                self.x_norm(&self.variation(&DVector::zeros(n), &src, &q))
            })
            .fold(0.0, f64::max)
    }
}

/// Builds propagators and solves once.
pub fn solve_block_system(bs: &BlockSystem, phi0: &DVector<f64>, opts: &PicardOptions) -> Result<BlockSolution> {
    let props = BlockPropagators::new(bs.n, &bs.coupling, &bs.grid, Some(&bs.bound), &Dopri::default())?;
    props.solve(&bs.forcing, phi0, opts)
}

#[derive(Clone, Debug)]
pub struct Prop2Report {
    pub c_alpha: f64,
    /// `c_α + |φ(0)| + ‖ℰ⁻¹F₁‖_{L¹}`.
    pub scale: f64,
    /// Minimal `c` with `|φ| <= c ℰ · scale` on the checked range.
    pub c_phi: f64,
    /// Minimal `c` with `|ψ| <= c ϖ ℰ · scale` on the checked range.
    pub c_psi: f64,
    /// Checks use `t <= t_checked` to stay clear of the truncated tail.
    pub t_checked: f64,
}

impl Prop2Report {
    pub fn constant(&self) -> f64 {
        self.c_phi.max(self.c_psi)
    }
}

/// Fits the constants in `|φ| <= c ℰ K`, `|ψ| <= c ϖ ℰ K` as the smallest
/// valid values on `[0, T/2]`.
pub fn verify_prop2_bounds(sol: &BlockSolution, bs: &BlockSystem, cal_e: &[f64]) -> Prop2Report {
    let n = bs.n;
    let q = bs.grid.quadrature();
    let alpha = n as f64 - bs.delta;
    let f1n: Vec<f64> = bs.forcing.iter().zip(cal_e).map(|(v, e)| v.rows(0, n).norm() / e).collect();
    let f2n: Vec<f64> = bs.forcing.iter().map(|v| v.rows(n, n).norm()).collect();
    let tail = q.decay_backward(&f2n, alpha);
    let half = (bs.grid.len() - 1) / 2;
    let ratio = |num: f64, den: f64| -> f64 {
        if num == 0.0 {
            0.0
        } else if den == 0.0 {
            f64::INFINITY
        } else {
            num / den
        }
    };
    let c_alpha = (0..=half)
        .map(|j| ratio(tail[j], bs.bound[j] * cal_e[j]))
        .fold(0.0, f64::max);
    let phi0 = sol.trajectory.phi[0].norm();
    let scale = c_alpha + phi0 + q.integral(&f1n);
    let psi = sol.trajectory.psi.as_ref().expect("block solution carries ψ");
    let c_phi = (0..=half)
        .map(|j| ratio(sol.trajectory.phi[j].norm(), cal_e[j] * scale))
        .fold(0.0, f64::max);
    let c_psi = (0..=half)
        .map(|j| ratio(psi[j].norm(), bs.bound[j] * cal_e[j] * scale))
        .fold(0.0, f64::max);
    Prop2Report {
        c_alpha,
        scale,
        c_phi,
        c_psi,
        t_checked: bs.grid.t(half),
    }
}

/// `max_{s≠t} ‖Ψ(t)Ψ⁻¹(s)‖ e^{−δ|t−s|}` over every `stride`-th node.
pub fn gronwall_ratio(psi: &[DMatrix<f64>], grid: &TimeGrid, delta: f64, stride: usize) -> f64 {
    let idx: Vec<usize> = (0..psi.len()).step_by(stride.max(1)).collect();
    let inv: Vec<DMatrix<f64>> = idx.iter().map(|&i| psi[i].clone().try_inverse().expect("Ψ is invertible")).collect();
    let mut worst = 0.0f64;
    for (a, &s) in idx.iter().enumerate() {
        for &t in &idx {
            if t == s {
                continue;
            }
            let v = spectral_norm(&(&psi[t] * &inv[a]));
            worst = worst.max(v * (-delta * (grid.t(t) - grid.t(s)).abs()).exp());
        }
    }
    worst
}

/// Smallest `c` with `∫_s^T e^{(δ−n)v} ℰ(v) dv <= c e^{(δ−n)s} ℰ(s)` for `s <= T/2`.
pub fn exponential_tail_constant(cal_e: &[f64], grid: &TimeGrid, n: usize, delta: f64) -> f64 {
    let tail = grid.quadrature().decay_backward(cal_e, n as f64 - delta);
    let half = (grid.len() - 1) / 2;
    (0..=half).map(|j| tail[j] / cal_e[j]).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(t: f64, m: usize) -> TimeGrid {
        TimeGrid::uniform(t, m).unwrap()
    }

    #[test]
    fn scalar_system_saturates_the_bound() {
        let g = grid(5.0, 200);
        let a = 0.7;
        let r1 = |_t: f64| DMatrix::<f64>::identity(2, 2) * a;
        let phi = fundamental_matrix(&r1, &g, &Dopri::default()).unwrap();
        let e = time_estimator(&r1, &g);
        for (j, p) in phi.iter().enumerate() {
            let exact = (-a * g.t(j)).exp();
            assert!((spectral_norm(p) - exact).abs() < 1e-10);
            assert!((e[j] - exact).abs() < 1e-12);
        }
        let rep = verify_propagator_bounds(&phi, &e, 10);
        assert!(rep.worst_norm_margin.abs() < 1e-9);
        assert!(rep.holds(1e-8));
    }

    #[test]
    fn rotation_has_unit_norm() {
        let g = grid(6.0, 120);
        let r1 = |_t: f64| DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let phi = fundamental_matrix(&r1, &g, &Dopri::default()).unwrap();
        let e = time_estimator(&r1, &g);
        for (p, ej) in phi.iter().zip(&e) {
            assert!((spectral_norm(p) - 1.0).abs() < 1e-9);
            assert!((ej - 1.0).abs() < 1e-14);
        }
        assert!(liouville_defect(&phi, &r1, &g) < 1e-8);
    }

    #[test]
    fn inhomogeneous_closed_form() {
        let g = grid(20.0, 400);
        let r1 = |_t: f64| DMatrix::<f64>::zeros(1, 1);
        let f = |t: f64| DVector::from_element(1, (-t).exp());
        let sol = solve_inhomogeneous(&r1, &f, &DVector::zeros(1), &g, &Dopri::default()).unwrap();
        for (j, p) in sol.trajectory.phi.iter().enumerate() {
            assert!((p[0] - (1.0 - (-g.t(j)).exp())).abs() < 1e-10);
        }
        assert!(sol.bound_margin >= -1e-12);
    }

    #[test]
    fn inhomogeneous_rejects_non_integrable_forcing() {
        let g = grid(20.0, 400);
        let r1 = |_t: f64| DMatrix::<f64>::zeros(1, 1);
        let f = |_t: f64| DVector::from_element(1, 1.0);
        let r = solve_inhomogeneous(&r1, &f, &DVector::zeros(1), &g, &Dopri::default());
        assert!(matches!(r, Err(Error::Divergent(_))));
    }

    #[test]
    fn decoupled_block_system_keeps_phi_constant() {
        let n = 2;
        let g = grid(10.0, 400);
        let bs = BlockSystem {
            n,
            coupling: Arc::new(move |_t| DMatrix::zeros(2 * n, 2 * n)),
            forcing: vec![DVector::zeros(2 * n); g.len()],
            bound: vec![0.1; g.len()],
            delta: 0.1,
            grid: g.clone(),
        };
        let phi0 = DVector::from_vec(vec![1.0, -2.0]);
        let sol = solve_block_system(&bs, &phi0, &PicardOptions::default()).unwrap();
        for (p, s) in sol.trajectory.phi.iter().zip(sol.trajectory.psi.as_ref().unwrap()) {
            assert!((p - &phi0).amax() < 1e-14);
            assert!(s.amax() == 0.0);
        }
    }

    #[test]
    fn finite_energy_branch_matches_closed_form() {
        // ψ' − 2ψ = e^{−4t}  ⇒  ψ = −e^{−4t}/6
        let n = 2;
        let g = grid(12.0, 1200);
        let forcing = g
            .times()
            .iter()
            .map(|&t| DVector::from_vec(vec![0.0, 0.0, (-4.0 * t).exp(), 0.0]))
            .collect();
        let bs = BlockSystem {
            n,
            coupling: Arc::new(move |_t| DMatrix::zeros(2 * n, 2 * n)),
            forcing,
            bound: vec![0.1; g.len()],
            delta: 0.1,
            grid: g.clone(),
        };
        let sol = solve_block_system(&bs, &DVector::zeros(n), &PicardOptions::default()).unwrap();
        let psi = sol.trajectory.psi.unwrap();
        for j in 0..g.len() / 2 {
            let exact = -(-4.0 * g.t(j)).exp() / 6.0;
            assert!((psi[j][0] - exact).abs() < 1e-10, "t = {}", g.t(j));
        }
    }
}
