//! Degree-0 and degree-1 parts of the weak form.
//!
//! Testing with `η(r)` gives the flux identity
//! `α u₀' + rβ·v' + γ·v + p[∇w] = f̃ + r^{1−n} ∫_0^r f̄₀ ρ^{n−1}`, and testing
//! with `η(r) x_ℓ` gives `(r^n Q)' = r^{n−1}(S − H + r ⨍f₀θ)` for the
//! moments `Q = ⨍(θ·A∇u)θ − ⨍(f·θ)θ`, `S = ⨍A∇u`, `H = ⨍f`.  Eliminating `u₀'`
//! and passing to `P = nQ` leaves a first-order system in `t = −log r` for
//! `(v, P)`, which the change of variables
//! `φ = ((n−1)v + P)/n²`, `ψ = (v − P)/n²` puts in block form with
//! `𝓡 ≡ 0` for `A = I`.  No terms are dropped: the blocks of `𝓡` are exact
//! rational functions of the sphere averages.

use super::localize::LocalizedRhs;
use crate::coeffs::CoefficientField;
use crate::dynsys::{BlockPropagators, BlockSolution, MatFn, PicardOptions, TimeGrid};
use crate::error::{Error, Result};
use crate::grid::RadialGrid;
use crate::ode::Dopri;
use crate::potential::ModalField;
use crate::sphere::SphereRule;
use nalgebra::{DMatrix, DVector};
use std::sync::Arc;

/// Sphere averages of the coefficients at one radius.
#[derive(Clone, Debug)]
pub struct SphereAverages {
    /// `⨍ θᵀAθ`.
    pub alpha: f64,
    /// `⨍ (θᵀAθ) θ`.
    pub beta: DVector<f64>,
    /// `⨍ Aθ`.
    pub gamma: DVector<f64>,
    /// `⨍ θ (Aθ)ᵀ`.
    pub b: DMatrix<f64>,
    /// `⨍ (θᵀAθ) θθᵀ`.
    pub c: DMatrix<f64>,
    /// `⨍ A`.
    pub d: DMatrix<f64>,
}

pub fn sphere_averages(field: &CoefficientField, r: f64, rule: &SphereRule) -> SphereAverages {
    let n = field.dimension();
    let mut alpha = 0.0;
    let mut beta = DVector::zeros(n);
    let mut gamma = DVector::zeros(n);
    let mut b = DMatrix::zeros(n, n);
    let mut c = DMatrix::zeros(n, n);
    let mut d = DMatrix::zeros(n, n);
    for q in 0..rule.len() {
        let th = rule.node(q);
        let w = rule.weight(q);
        let a = field.matrix_polar(r, th);
        let mut at = [0.0; 3];
        for i in 0..n {
            for k in 0..n {
                at[i] += a[i][k] * th[k];
            }
        }
        let tat: f64 = (0..n).map(|i| th[i] * at[i]).sum();
        alpha += w * tat;
        for i in 0..n {
            beta[i] += w * tat * th[i];
            gamma[i] += w * at[i];
            for k in 0..n {
                b[(i, k)] += w * th[i] * at[k];
                c[(i, k)] += w * tat * th[i] * th[k];
                d[(i, k)] += w * a[i][k];
            }
        }
    }
    SphereAverages {
        alpha,
        beta,
        gamma,
        b,
        c,
        d,
    }
}

/// Per-radius maps of the reduced system:
/// `v_t = K₁v + K₂P + σ_v`, `P_t = L₁v + L₂P + σ_P`.
#[derive(Clone, Debug)]
struct BlockMaps {
    alpha: f64,
    beta: DVector<f64>,
    gamma: DVector<f64>,
    c_hat_inv: DMatrix<f64>,
    e_hat: DMatrix<f64>,
    k1: DMatrix<f64>,
    k2: DMatrix<f64>,
    l1: DMatrix<f64>,
    l2: DMatrix<f64>,
}

fn block_maps(av: &SphereAverages, r: f64) -> Result<BlockMaps> {
    let n = av.beta.len();
    let nf = n as f64;
    if !(av.alpha > 0.0) {
        return Err(Error::NonPositiveAlpha { r, alpha: av.alpha });
    }
    let a = av.alpha;
    let b_hat = &av.b - &av.beta * av.gamma.transpose() / a;
    let c_hat = &av.c - &av.beta * av.beta.transpose() / a;
    let d_hat = &av.d - &av.gamma * av.gamma.transpose() / a;
    let e_hat = av.b.transpose() - &av.gamma * av.beta.transpose() / a;
    let c_hat_inv = c_hat
        .try_inverse()
        .ok_or_else(|| Error::Ellipticity(format!("degenerate radial moment matrix at r = {r:e}")))?;
    let k1 = &c_hat_inv * &b_hat;
    let k2 = -&c_hat_inv / nf;
    let l1 = -&d_hat * nf + &e_hat * &k1 * nf;
    let l2 = DMatrix::identity(n, n) * nf + &e_hat * &k2 * nf;
    Ok(BlockMaps {
        alpha: a,
        beta: av.beta.clone(),
        gamma: av.gamma.clone(),
        c_hat_inv,
        e_hat,
        k1,
        k2,
        l1,
        l2,
    })
}

/// `𝓡 = diag(0, nI) − T M T⁻¹` for `M = [[K₁, K₂], [L₁, L₂]]`.
fn coupling_from_maps(m: &BlockMaps) -> DMatrix<f64> {
    let n = m.k1.nrows();
    let nf = n as f64;
    let mut big = DMatrix::zeros(2 * n, 2 * n);
    big.view_mut((0, 0), (n, n)).copy_from(&m.k1);
    big.view_mut((0, n), (n, n)).copy_from(&m.k2);
    big.view_mut((n, 0), (n, n)).copy_from(&m.l1);
    big.view_mut((n, n), (n, n)).copy_from(&m.l2);
    let (t, ti) = transforms(n);
    let mut out = -(t * big * ti);
    for i in n..2 * n {
        out[(i, i)] += nf;
    }
    out
}

/// `T: (v, P) ↦ (φ, ψ)` and its inverse.
fn transforms(n: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let nf = n as f64;
    let mut t = DMatrix::zeros(2 * n, 2 * n);
    let mut ti = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        t[(i, i)] = (nf - 1.0) / (nf * nf);
        t[(i, n + i)] = 1.0 / (nf * nf);
        t[(n + i, i)] = 1.0 / (nf * nf);
        t[(n + i, n + i)] = -1.0 / (nf * nf);
        ti[(i, i)] = nf;
        ti[(i, n + i)] = nf;
        ti[(n + i, i)] = nf;
        ti[(n + i, n + i)] = -nf * (nf - 1.0);
    }
    (t, ti)
}

/// `v` and `v_t = −r v'` on the whole radial grid.
#[derive(Clone, Debug)]
pub struct VProfile {
    pub v: Vec<DVector<f64>>,
    pub v_t: Vec<DVector<f64>>,
    /// The `(φ, ψ)` trajectory on `r <= 1` (time order).
    pub phi: Vec<DVector<f64>>,
    pub psi: Vec<DVector<f64>>,
    pub picard_iterations: usize,
    pub picard_contraction: f64,
}

impl VProfile {
    pub fn zeros(n: usize, len: usize, t_len: usize) -> Self {
        Self {
            v: vec![DVector::zeros(n); len],
            v_t: vec![DVector::zeros(n); len],
            phi: vec![DVector::zeros(n); t_len],
            psi: vec![DVector::zeros(n); t_len],
            picard_iterations: 0,
            picard_contraction: 0.0,
        }
    }

    /// Values as fixed arrays and `v' = −v_t / r`.
    pub fn as_arrays(&self, grid: &RadialGrid) -> (Vec<[f64; 3]>, Vec<[f64; 3]>) {
        let mut v = vec![[0.0; 3]; grid.len()];
        let mut dv = vec![[0.0; 3]; grid.len()];
        for j in 0..grid.len() {
            let r = grid.radius(j);
            for i in 0..self.v[j].len() {
                v[j][i] = self.v[j][i];
                dv[j][i] = -self.v_t[j][i] / r;
            }
        }
        (v, dv)
    }

    pub fn add(&self, other: &Self) -> Self {
        let sum = |a: &Vec<DVector<f64>>, b: &Vec<DVector<f64>>| a.iter().zip(b).map(|(x, y)| x + y).collect();
        Self {
            v: sum(&self.v, &other.v),
            v_t: sum(&self.v_t, &other.v_t),
            phi: sum(&self.phi, &other.phi),
            psi: sum(&self.psi, &other.psi),
            picard_iterations: self.picard_iterations.max(other.picard_iterations),
            picard_contraction: self.picard_contraction.max(other.picard_contraction),
        }
    }
}

/// Terms of the reduction that depend on `w`: `p = ⨍θ·A∇w`, `q = ⨍(θ·A∇w)θ`,
/// `s = ⨍A∇w`, on radial indices up to `r = 1`.
#[derive(Clone, Debug)]
pub struct WTerms {
    pub p: Vec<f64>,
    pub q: Vec<DVector<f64>>,
    pub s: Vec<DVector<f64>>,
}

/// Reduced system of a coefficient field on a radial grid.
pub struct Reduction {
    n: usize,
    grid: RadialGrid,
    time: TimeGrid,
    one: usize,
    rule: Arc<SphereRule>,
    field: CoefficientField,
    maps: Vec<BlockMaps>,
    coupling: MatFn,
    props: BlockPropagators,
}

impl Reduction {
    pub fn new(field: &CoefficientField, grid: &RadialGrid, rule: &Arc<SphereRule>, ode: &Dopri) -> Result<Self> {
        let n = field.dimension();
        if rule.dimension() != n {
            return Err(Error::GridMismatch("sphere rule and field have different dimensions".into()));
        }
        let time = TimeGrid::from_radial(grid)?;
        let one = grid.index_of(1.0).expect("checked by the time grid");
        let maps = (0..=one)
            .map(|j| {
                let r = grid.radius(j);
                block_maps(&sphere_averages(field, r, rule), r)
            })
            .collect::<Result<Vec<_>>>()?;
        let f = field.clone();
        let ru = Arc::clone(rule);
        let coupling: MatFn = Arc::new(move |t: f64| {
            if t < 0.0 {
                return DMatrix::zeros(2 * n, 2 * n);
            }
            let r = (-t).exp();
            match block_maps(&sphere_averages(&f, r, &ru), r) {
                Ok(m) => coupling_from_maps(&m),
                Err(_) => DMatrix::from_element(2 * n, 2 * n, f64::NAN),
            }
        });
        let bound: Vec<f64> = time.times().iter().map(|&t| field.modulus().eval((-t).exp())).collect();
        let props = BlockPropagators::new(n, &coupling, &time, Some(&bound), ode)?;
        Ok(Self {
            n,
            grid: grid.clone(),
            time,
            one,
            rule: Arc::clone(rule),
            field: field.clone(),
            maps,
            coupling,
            props,
        })
    }

    pub fn grid(&self) -> &RadialGrid {
        &self.grid
    }

    pub fn time_grid(&self) -> &TimeGrid {
        &self.time
    }

    pub fn coupling(&self) -> &MatFn {
        &self.coupling
    }

    pub fn propagators(&self) -> &BlockPropagators {
        &self.props
    }

    /// Radial index of time node `k`.
    pub fn radial_index(&self, k: usize) -> usize {
        self.one - k
    }

    pub fn alpha(&self) -> Vec<f64> {
        (0..self.grid.len()).map(|j| if j <= self.one { self.maps[j].alpha } else { 1.0 }).collect()
    }

    pub fn beta(&self) -> Vec<DVector<f64>> {
        (0..self.grid.len())
            .map(|j| if j <= self.one { self.maps[j].beta.clone() } else { DVector::zeros(self.n) })
            .collect()
    }

    pub fn gamma(&self) -> Vec<DVector<f64>> {
        (0..self.grid.len())
            .map(|j| if j <= self.one { self.maps[j].gamma.clone() } else { DVector::zeros(self.n) })
            .collect()
    }

    /// `p`, `q`, `s` from node gradients `grads[j][q] = ∇w(r_j θ_q)`.
    pub fn w_terms(&self, grads: &[Vec<[f64; 3]>]) -> WTerms {
        let n = self.n;
        let mut p = vec![0.0; self.one + 1];
        let mut qv = vec![DVector::zeros(n); self.one + 1];
        let mut sv = vec![DVector::zeros(n); self.one + 1];
        for j in 0..=self.one {
            let r = self.grid.radius(j);
            for q in 0..self.rule.len() {
                let th = self.rule.node(q);
                let w = self.rule.weight(q);
                let a = self.field.matrix_polar(r, th);
                let g = &grads[j][q];
                let mut flux = [0.0; 3];
                for i in 0..n {
                    for k in 0..n {
                        flux[i] += a[i][k] * g[k];
                    }
                }
                let radial: f64 = (0..n).map(|i| th[i] * flux[i]).sum();
                p[j] += w * radial;
                for i in 0..n {
                    qv[j][i] += w * radial * th[i];
                    sv[j][i] += w * flux[i];
                }
            }
        }
        WTerms { p, q: qv, s: sv }
    }

    fn forcing(&self, sigma: &[(DVector<f64>, DVector<f64>)]) -> Vec<DVector<f64>> {
        let (t, _) = transforms(self.n);
        (0..self.time.len())
            .map(|k| {
                let (sv, sp) = &sigma[self.radial_index(k)];
                let mut x = DVector::zeros(2 * self.n);
                x.rows_mut(0, self.n).copy_from(sv);
                x.rows_mut(self.n, self.n).copy_from(sp);
                &t * x
            })
            .collect()
    }

    /// `(σ_v, σ_P)` per radial index (up to `r = 1`) and the block forcing `F`.
    pub fn forcing_from_w(&self, wt: &WTerms) -> (Vec<(DVector<f64>, DVector<f64>)>, Vec<DVector<f64>>) {
        let nf = self.n as f64;
        let sigma: Vec<_> = (0..=self.one)
            .map(|j| {
                let m = &self.maps[j];
                let q_src = &wt.q[j] - &m.beta * (wt.p[j] / m.alpha);
                let s_src = &wt.s[j] - &m.gamma * (wt.p[j] / m.alpha);
                let sv = &m.c_hat_inv * q_src;
                let sp = &m.e_hat * &sv * nf - s_src * nf;
                (sv, sp)
            })
            .collect();
        let f = self.forcing(&sigma);
        (sigma, f)
    }

    /// `(σ_v, σ_P)` and the block forcing `G` of the localized data.
    pub fn forcing_from_rhs(&self, rhs: &LocalizedRhs) -> (Vec<(DVector<f64>, DVector<f64>)>, Vec<DVector<f64>>) {
        let n = self.n;
        let nf = n as f64;
        let vec3 = |a: &[f64; 3]| DVector::from_fn(n, |i, _| a[i]);
        let sigma: Vec<_> = (0..=self.one)
            .map(|j| {
                let m = &self.maps[j];
                let r = self.grid.radius(j);
                let qr = rhs.q_rhs[j];
                let sv = &m.c_hat_inv * (&m.beta * (qr / m.alpha) - vec3(&rhs.f_radial_moment[j]));
                let sp = &m.e_hat * &sv * nf - &m.gamma * (nf * qr / m.alpha) + vec3(&rhs.f_mean[j]) * nf
                    - vec3(&rhs.f0_moment[j]) * (nf * r);
                (sv, sp)
            })
            .collect();
        let f = self.forcing(&sigma);
        (sigma, f)
    }

    /// Finite-energy solution with `φ(0) = 0` and the recovered `v`, `v_t`.
    /// For `r > 1` the data vanish and `v = nψ(0) r^{−n}`.
    pub fn solve_v(
        &self,
        forcing: &[DVector<f64>],
        sigma: &[(DVector<f64>, DVector<f64>)],
        opts: &PicardOptions,
    ) -> Result<VProfile> {
        let n = self.n;
        let nf = n as f64;
        let len = self.grid.len();
        if forcing.iter().all(|x| x.iter().all(|v| *v == 0.0)) {
            return Ok(VProfile::zeros(n, len, self.time.len()));
        }
        let sol: BlockSolution = self.props.solve(forcing, &DVector::zeros(n), opts)?;
        let phi = sol.trajectory.phi;
        let psi = sol.trajectory.psi.expect("block solutions carry ψ");
        let mut v = vec![DVector::zeros(n); len];
        let mut v_t = vec![DVector::zeros(n); len];
        for k in 0..self.time.len() {
            let j = self.radial_index(k);
            let m = &self.maps[j];
            let vv = (&phi[k] + &psi[k]) * nf;
            let pp = &phi[k] * nf - &psi[k] * (nf * (nf - 1.0));
            v_t[j] = &m.k1 * &vv + &m.k2 * &pp + &sigma[j].0;
            v[j] = vv;
        }
        let psi0 = &psi[0];
        for j in self.one + 1..len {
            let r: f64 = self.grid.radius(j);
            v[j] = psi0 * (nf * r.powf(-nf));
            v_t[j] = &v[j] * nf;
        }
        Ok(VProfile {
            v,
            v_t,
            phi,
            psi,
            picard_iterations: sol.iterations,
            picard_contraction: sol.contraction,
        })
    }

    /// `u₀' = α⁻¹(src − γ·v + β·v_t)`, zero for `r > 1`.
    pub fn u0_prime(&self, v: &VProfile, src: &[f64]) -> Vec<f64> {
        (0..self.grid.len())
            .map(|j| {
                if j > self.one {
                    return 0.0;
                }
                let m = &self.maps[j];
                (src[j] - m.gamma.dot(&v.v[j]) + m.beta.dot(&v.v_t[j])) / m.alpha
            })
            .collect()
    }

    /// `u₀(r) = −∫_r^1 u₀'`, so that `u₀ ≡ 0` for `r >= 1`.
    pub fn integrate_u0(&self, du0: &[f64]) -> Vec<f64> {
        let g: Vec<f64> = (0..self.grid.len()).map(|j| du0[j] * self.grid.radius(j)).collect();
        let cum = self.grid.quadrature().cumulative(&g);
        (0..self.grid.len())
            .map(|j| if j >= self.one { 0.0 } else { cum[j] - cum[self.one] })
            .collect()
    }
}

/// Radial tables of the reduction for a given remainder `w` and data.
#[derive(Clone, Debug)]
pub struct ReductionCoefficients {
    pub grid: RadialGrid,
    pub alpha: Vec<f64>,
    pub beta: Vec<DVector<f64>>,
    pub gamma: Vec<DVector<f64>>,
    /// `p[∇w]` (zero for `r > 1`).
    pub p: Vec<f64>,
    pub times: Vec<f64>,
    /// `𝓡(t_k)`.
    pub coupling: Vec<DMatrix<f64>>,
    /// `F(t_k, ∇w)`.
    pub forcing_w: Vec<DVector<f64>>,
    /// `G(t_k)`.
    pub forcing_rhs: Vec<DVector<f64>>,
}

impl ReductionCoefficients {
    /// `max(|α − 1|, |β|, |γ|) / ω(r)` over `r <= 1`.
    pub fn coefficient_bound_ratio(&self, field: &CoefficientField) -> f64 {
        let mut worst = 0.0f64;
        for j in 0..self.grid.len() {
            let r = self.grid.radius(j);
            if r > 1.0 {
                continue;
            }
            let dev = (self.alpha[j] - 1.0).abs().max(self.beta[j].norm()).max(self.gamma[j].norm());
            worst = worst.max(dev / field.modulus().eval(r));
        }
        worst
    }

    /// Largest `|G(t)|` outside `[log 2, 2 log 2]` relative to its maximum.
    pub fn rhs_support_leak(&self) -> f64 {
        let ln2 = std::f64::consts::LN_2;
        let max = self.forcing_rhs.iter().map(|g| g.norm()).fold(0.0, f64::max);
        if max == 0.0 {
            return 0.0;
        }
        self.times
            .iter()
            .zip(&self.forcing_rhs)
            .filter(|(t, _)| **t < ln2 * (1.0 - 1e-12) || **t > 2.0 * ln2 * (1.0 + 1e-12))
            .map(|(_, g)| g.norm())
            .fold(0.0, f64::max)
            / max
    }
}

/// Evaluates the reduction for `w` (which needs a derivative table) and data.
pub fn build_reduction(
    field: &CoefficientField,
    w: &ModalField,
    rhs: &LocalizedRhs,
    ode: &Dopri,
) -> Result<ReductionCoefficients> {
    let grid = w.grid();
    grid.compatible(rhs.grid())?;
    let rule = w.basis().rule();
    let red = Reduction::new(field, grid, rule, ode)?;
    let grads = (0..grid.len()).map(|j| w.gradient_at(j)).collect::<Result<Vec<_>>>()?;
    let wt = red.w_terms(&grads);
    let (_, fw) = red.forcing_from_w(&wt);
    let (_, fr) = red.forcing_from_rhs(rhs);
    let mut p = wt.p.clone();
    p.resize(grid.len(), 0.0);
    let times = red.time_grid().times();
    Ok(ReductionCoefficients {
        grid: grid.clone(),
        alpha: red.alpha(),
        beta: red.beta(),
        gamma: red.gamma(),
        p,
        coupling: times.iter().map(|&t| (red.coupling())(t)).collect(),
        times,
        forcing_w: fw,
        forcing_rhs: fr,
    })
}

/// `u₀'` split into the part driven by `w` and the part driven by the data,
/// and `u₀` itself (integrated inward from `u₀(1) = 0`).
#[derive(Clone, Debug)]
pub struct U0Split {
    pub du0_w: Vec<f64>,
    pub du0_data: Vec<f64>,
    pub u0: Vec<f64>,
}

/// `(u₀^w)' = α⁻¹(−p[∇w] − γ·v^w + β·v^w_t)` and
/// `(u₀°)' = α⁻¹(f̃ + r^{1−n}∫_0^r f̄₀ρ^{n−1}dρ − γ·v° + β·v°_t)` on `r <= 1`.
pub fn recover_u0(coeffs: &ReductionCoefficients, v_w: &VProfile, v_data: &VProfile, rhs: &LocalizedRhs) -> Result<U0Split> {
    let grid = &coeffs.grid;
    grid.compatible(rhs.grid())?;
    let len = grid.len();
    if v_w.v.len() != len || v_data.v.len() != len {
        return Err(Error::GridMismatch(format!("v tables of length {} / {} for {len} radii", v_w.v.len(), v_data.v.len())));
    }
    let one = grid.index_of(1.0).ok_or_else(|| Error::GridMismatch("grid must contain r = 1".into()))?;
    let mut du0_w = vec![0.0; len];
    let mut du0_data = vec![0.0; len];
    for j in 0..=one {
        let a = coeffs.alpha[j];
        if !(a > 0.0) {
            return Err(Error::NonPositiveAlpha { r: grid.radius(j), alpha: a });
        }
        let lin = |v: &VProfile| coeffs.beta[j].dot(&v.v_t[j]) - coeffs.gamma[j].dot(&v.v[j]);
        du0_w[j] = (lin(v_w) - coeffs.p[j]) / a;
        du0_data[j] = (lin(v_data) + rhs.q_rhs[j]) / a;
    }
    let g: Vec<f64> = (0..len).map(|j| (du0_w[j] + du0_data[j]) * grid.radius(j)).collect();
    let cum = grid.quadrature().cumulative(&g);
    let u0 = (0..len).map(|j| if j >= one { 0.0 } else { cum[j] - cum[one] }).collect();
    Ok(U0Split { du0_w, du0_data, u0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeffs::{make_custom_field, make_gs_field, make_identity_field, GsProfile, IDENTITY3};
    use crate::estimator::reduced_matrix;
    use crate::sphere::build_sphere_rule;

    #[test]
    fn identity_has_no_coupling() {
        for n in [2, 3] {
            let rule = build_sphere_rule(n, 4).unwrap();
            let f = make_identity_field(n).unwrap();
            let av = sphere_averages(&f, 0.3, &rule);
            let m = block_maps(&av, 0.3).unwrap();
            assert!(coupling_from_maps(&m).amax() < 1e-13);
        }
    }

    #[test]
    fn gs_blocks_match_scalar_reduction() {
        for n in [2usize, 3] {
            let nf = n as f64;
            let rule = build_sphere_rule(n, 4).unwrap();
            let prof = GsProfile::LogPower { amp: 0.5, s: 0.75 };
            let f = make_gs_field(n, prof.clone(), 0.1).unwrap();
            for r in [1e-4, 0.01, 0.3, 0.9] {
                let g = prof.g(r);
                let av = sphere_averages(&f, r, &rule);
                assert!((av.alpha - 1.0 - g).abs() < 1e-13);
                assert!(av.beta.norm() < 1e-13 && av.gamma.norm() < 1e-13);
                let c = coupling_from_maps(&block_maps(&av, r).unwrap());
                let d = nf * (1.0 + g);
                let want = [
                    -(nf - 1.0) * g / d,
                    (nf - 1.0).powi(2) * g / d,
                    -g / d,
                    (nf - 1.0) * g / d,
                ];
                for (b, w) in want.iter().enumerate() {
                    let (bi, bj) = (b / 2, b % 2);
                    for i in 0..n {
                        for k in 0..n {
                            let e = if i == k { *w } else { 0.0 };
                            assert!((c[(bi * n + i, bj * n + k)] - e).abs() < 1e-13);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn leading_block_is_transposed_reduced_matrix() {
        // A = I + ε M(θ) with a non-symmetric-average perturbation
        let n = 2;
        let rule = build_sphere_rule(n, 6).unwrap();
        let eps = 1e-4;
        let a: crate::coeffs::MatrixFn = Arc::new(move |x: &[f64]| {
            let r = (x[0] * x[0] + x[1] * x[1]).sqrt().max(1e-300);
            let (c, s) = (x[0] / r, x[1] / r);
            let mut m = IDENTITY3;
            m[0][0] += eps * (1.0 + c * s);
            m[0][1] += eps * (c * c - 0.3);
            m[1][0] += eps * (c * c - 0.3);
            m[1][1] += eps * (0.5 * s);
            m
        });
        let grid = RadialGrid::dyadic(8, 2, 0).unwrap();
        let f = make_custom_field(n, a, None, &grid, &rule).unwrap();
        let r = 0.5;
        let c = coupling_from_maps(&block_maps(&sphere_averages(&f, r, &rule), r).unwrap());
        let rr = reduced_matrix(&f, r, &rule);
        for i in 0..n {
            for k in 0..n {
                assert!((c[(i, k)] - rr[(k, i)]).abs() < 10.0 * eps * eps, "{i}{k}");
            }
        }
    }

    #[test]
    fn recover_u0_vanishes_without_data_and_matches_the_solver_split() {
        use crate::pipeline::{direct_solve_oracle, localize_rhs, standard_grid, Cutoff};
        use crate::sphere::HarmonicBasis;
        let cutoff = Cutoff::default();
        let grid = standard_grid(16, 16, 1, &cutoff).unwrap();
        let rule = build_sphere_rule(2, 4).unwrap();
        let basis = Arc::new(HarmonicBasis::new(Arc::clone(&rule), 4).unwrap());
        let ode = Dopri::default();

        let id = make_identity_field(2).unwrap();
        let zero = ModalField::zeros(&grid, &basis);
        let mut w = zero.clone();
        w.differentiate();
        let rhs0 = localize_rhs(&w, &id, &cutoff).unwrap();
        let c = build_reduction(&id, &w, &rhs0, &ode).unwrap();
        let v0 = VProfile::zeros(2, grid.len(), 1);
        let split = recover_u0(&c, &v0, &v0, &rhs0).unwrap();
        assert!(split.du0_w.iter().chain(&split.du0_data).chain(&split.u0).all(|x| *x == 0.0));

        // Gilbarg–Serrin: β = γ = 0, so the data part is q/α and the w part is −p/α
        let gs = make_gs_field(2, GsProfile::LogPower { amp: 0.3, s: 0.75 }, 1e-3).unwrap();
        let boundary = rule.sample(|t| 0.2 + t[0] + t[0] * t[1]);
        let u = direct_solve_oracle(&gs, &boundary, &grid, &basis).unwrap().u;
        let rhs = localize_rhs(&u, &gs, &cutoff).unwrap();
        let red = Reduction::new(&gs, &grid, &rule, &ode).unwrap();
        let (sig, g) = red.forcing_from_rhs(&rhs);
        let vc = red.solve_v(&g, &sig, &PicardOptions::default()).unwrap();
        let c = build_reduction(&gs, &w, &rhs, &ode).unwrap();
        let split = recover_u0(&c, &v0, &vc, &rhs).unwrap();
        let reference = red.u0_prime(&vc, &rhs.q_rhs);
        let one = grid.index_of(1.0).unwrap();
        for j in 0..=one {
            assert!(c.beta[j].norm() < 1e-14 && c.gamma[j].norm() < 1e-14);
            assert!((split.du0_data[j] - rhs.q_rhs[j] / c.alpha[j]).abs() <= 1e-12 * (1.0 + reference[j].abs()));
            assert!((split.du0_data[j] - reference[j]).abs() <= 1e-12 * (1.0 + reference[j].abs()));
        }
        // q vanishes inside r = 1/4, so u₀ is flat there.
        let quarter = grid.index_of(0.25).unwrap();
        assert!(split.u0[..quarter].iter().all(|x| (x - split.u0[0]).abs() < 1e-12));
    }

    #[test]
    fn recover_u0_rejects_non_positive_alpha() {
        use crate::pipeline::{localize_rhs, standard_grid, Cutoff};
        use crate::sphere::HarmonicBasis;
        let cutoff = Cutoff::default();
        let grid = standard_grid(8, 8, 1, &cutoff).unwrap();
        let rule = build_sphere_rule(2, 2).unwrap();
        let basis = Arc::new(HarmonicBasis::new(Arc::clone(&rule), 2).unwrap());
        let id = make_identity_field(2).unwrap();
        let mut w = ModalField::zeros(&grid, &basis);
        w.differentiate();
        let rhs = localize_rhs(&w, &id, &cutoff).unwrap();
        let mut c = build_reduction(&id, &w, &rhs, &Dopri::default()).unwrap();
        c.alpha[3] = 0.0;
        let v0 = VProfile::zeros(2, grid.len(), 1);
        assert!(matches!(recover_u0(&c, &v0, &v0, &rhs), Err(Error::NonPositiveAlpha { .. })));
    }
}
