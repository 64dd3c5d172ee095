//! Fixed point `w = ξ + N_div(Ω∇(w + v^w·x + u₀^w))` in the weighted space `Y`.
//!
//! `N_div F` solves `−Δz = [div F]^⊥` and `N_src f` solves `−Δz = f^⊥`; with
//! these, `ξ = −N_div f − N_src f₀ + N_div(Ω∇(v^∘·x + u₀^∘))`.

use super::localize::LocalizedRhs;
use super::reduction::{Reduction, VProfile};
use super::{Decomposition, Split};
use crate::coeffs::CoefficientField;
use crate::dynsys::PicardOptions;
use crate::error::{Error, Result};
use crate::estimator::{estimator_curve, EstimatorCurve, ReducedCurve};
use crate::ode::Dopri;
use crate::potential::{
    annulus_mean_of_profile, newtonian_solve_divergence, newtonian_solve_source, ModalField, Power, VectorModalField,
};

#[derive(Clone, Debug)]
pub struct FixedPointOptions {
    /// Stop when `‖w_{k+1} − w_k‖_Y <= tol ‖w_{k+1}‖_Y`.
    pub tol: f64,
    pub max_iter: usize,
    pub picard: PicardOptions,
    pub ode: Dopri,
}

impl Default for FixedPointOptions {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iter: 60,
            picard: PicardOptions {
                tol: 1e-12,
                max_iter: 200,
            },
            ode: Dopri::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct FixedPointReport {
    pub iterations: usize,
    /// Relative Y-norm increments.
    pub increments: Vec<f64>,
    /// Largest ratio of successive increments.
    pub contraction: f64,
    pub xi_norm: f64,
    pub w_norm: f64,
    /// `‖T_j w‖_Y / ‖w‖_Y` at the solution, `j = 1, 2, 3`.
    pub t_ratios: [f64; 3],
    pub picard_iterations: usize,
    pub picard_contraction: f64,
}

#[derive(Clone, Debug)]
pub struct FixedPointSolution {
    pub decomposition: Decomposition,
    pub report: FixedPointReport,
    pub estimator: EstimatorCurve,
    /// `v` of the assembled solution with its `(φ, ψ)` trajectory.
    pub v_profile: VProfile,
}

/// `‖y‖_Y = sup_{r<=1} M_{1,2}(y,r)/(ω(r) r E(r)) + sup_{r>1} M_{1,2}(y,r)/(δ r^{−n})`
/// over grid radii whose annulus fits the grid.
pub fn y_norm(y: &ModalField, field: &CoefficientField, ec: &EstimatorCurve) -> Result<f64> {
    let grid = y.grid();
    grid.compatible(ec.grid())?;
    let n = y.basis().dimension();
    let len = grid.len();
    let sq: Vec<f64> = (0..len).map(|j| y.sphere_power_mean(j, Power::Two)).collect();
    let gq = (0..len).map(|j| y.gradient_power_mean(j, Power::Two)).collect::<Result<Vec<_>>>()?;
    let m = field.modulus();
    let log_e = ec.log_values();
    let mut inner = 0.0f64;
    let mut outer = 0.0f64;
    for i in 0..len {
        if grid.doubled(i).is_none() {
            break;
        }
        let r = grid.radius(i);
        let val = r * annulus_mean_of_profile(grid, n, &gq, i, Power::Two)?
            + annulus_mean_of_profile(grid, n, &sq, i, Power::Two)?;
        if r <= 1.0 {
            inner = inner.max(val / (m.eval(r) * r * log_e[i].exp()));
        } else {
            outer = outer.max(val * r.powi(n as i32) / m.delta);
        }
    }
    Ok(inner + outer)
}

/// Node gradients of `u₀(r) + v(r)·x`: `u₀'θ + v − θ(θ·v_t)`.
fn low_gradient(n: usize, theta: &[f64], du0: f64, v: &nalgebra::DVector<f64>, vt: &nalgebra::DVector<f64>) -> [f64; 3] {
    let tvt: f64 = (0..n).map(|i| theta[i] * vt[i]).sum();
    let mut g = [0.0; 3];
    for i in 0..n {
        g[i] = du0 * theta[i] + v[i] - theta[i] * tvt;
    }
    g
}

/// `Ω G` for node vectors `G(j, q)`, as a vector field.
fn omega_times<G: Fn(usize, usize) -> [f64; 3]>(field: &CoefficientField, like: &ModalField, g: G) -> VectorModalField {
    let grid = like.grid();
    let rule = like.basis().rule();
    let n = field.dimension();
    VectorModalField::from_nodal(grid, like.basis(), |j, out| {
        let r = grid.radius(j);
        if r > 1.0 {
            return;
        }
        for (q, o) in out.iter_mut().enumerate() {
            let a = field.matrix_polar(r, rule.node(q));
            let v = g(j, q);
            for i in 0..n {
                let mut s = 0.0;
                for k in 0..n {
                    let om = a[i][k] - if i == k { 1.0 } else { 0.0 };
                    s += om * v[k];
                }
                o[i] = s;
            }
        }
    })
}

fn all_gradients(w: &ModalField) -> Result<Vec<Vec<[f64; 3]>>> {
    (0..w.grid().len()).map(|j| w.gradient_at(j)).collect()
}

/// `v^w`, `u₀^w'` driven by `w`.
fn w_driven(red: &Reduction, grads: &[Vec<[f64; 3]>], len: usize, picard: &PicardOptions) -> Result<(VProfile, Vec<f64>)> {
    let wt = red.w_terms(grads);
    let (sigma, forcing) = red.forcing_from_w(&wt);
    let v = red.solve_v(&forcing, &sigma, picard)?;
    let mut src: Vec<f64> = wt.p.iter().map(|p| -p).collect();
    src.resize(len, 0.0);
    let du0 = red.u0_prime(&v, &src);
    Ok((v, du0))
}

/// Solves the localized problem with data `rhs` and returns the decomposition
/// of its solution `ũ`.
pub fn fixed_point_solve(field: &CoefficientField, rhs: &LocalizedRhs, opts: &FixedPointOptions) -> Result<FixedPointSolution> {
    let grid = rhs.grid().clone();
    let basis = rhs.f0.basis().clone();
    let rule = basis.rule();
    let n = field.dimension();
    let len = grid.len();
    let red = Reduction::new(field, &grid, rule, &opts.ode)?;
    let ec = estimator_curve(&ReducedCurve::compute(field, &grid, rule)?);

    // data-driven parts of u₀ and v
    let (sig_c, g_forcing) = red.forcing_from_rhs(rhs);
    let vc = red.solve_v(&g_forcing, &sig_c, &opts.picard)?;
    let du0c = red.u0_prime(&vc, &rhs.q_rhs);
    let u0c = red.integrate_u0(&du0c);

    let xi_f = newtonian_solve_divergence(&rhs.f)?;
    let xi_0 = newtonian_solve_source(&rhs.f0.perp())?;
    let low_c = omega_times(field, &xi_f, |j, q| low_gradient(n, rule.node(q), du0c[j], &vc.v[j], &vc.v_t[j]));
    let xi = newtonian_solve_divergence(&low_c)?.axpy(-1.0, &xi_f)?.axpy(-1.0, &xi_0)?;
    let xi_norm = y_norm(&xi, field, &ec)?;

    let mut w = xi.clone();
    let mut increments = Vec::new();
    let mut contraction = 0.0f64;
    let mut iterations = 0;
    let mut picard_iterations = vc.picard_iterations;
    let mut picard_contraction = vc.picard_contraction;
    loop {
        iterations += 1;
        let grads = all_gradients(&w)?;
        let (vw, du0w) = w_driven(&red, &grads, len, &opts.picard)?;
        picard_iterations = picard_iterations.max(vw.picard_iterations);
        picard_contraction = picard_contraction.max(vw.picard_contraction);
        let flux = omega_times(field, &w, |j, q| {
            let lg = low_gradient(n, rule.node(q), du0w[j], &vw.v[j], &vw.v_t[j]);
            let gw = grads[j][q];
            [gw[0] + lg[0], gw[1] + lg[1], gw[2] + lg[2]]
        });
        let next = xi.axpy(1.0, &newtonian_solve_divergence(&flux)?)?;
        let size = y_norm(&next, field, &ec)?;
        let diff = y_norm(&next.axpy(-1.0, &w)?, field, &ec)?;
        let inc = if size == 0.0 { 0.0 } else { diff / size };
        if let Some(&prev) = increments.last() {
            let prev: f64 = prev;
            if prev > 1e-13 {
                contraction = contraction.max(inc / prev);
            }
        }
        increments.push(inc);
        w = next;
        if !inc.is_finite() {
            return Err(Error::Divergent("remainder iteration produced non-finite values".into()));
        }
        if inc <= opts.tol {
            break;
        }
        if iterations >= opts.max_iter || (increments.len() >= 4 && contraction >= 1.0) {
            return Err(Error::Contraction(format!(
                "remainder iteration stalled after {iterations} steps (increment {inc:.3e}, factor {contraction:.3}); \
                 reduce the coefficient amplitude so that the deviation budget delta = {} is met",
                field.modulus().delta
            )));
        }
    }

    // consistent low-degree parts for the final w, and the size of each map
    let grads = all_gradients(&w)?;
    let (vw, du0w) = w_driven(&red, &grads, len, &opts.picard)?;
    let u0w = red.integrate_u0(&du0w);
    let w_norm = y_norm(&w, field, &ec)?;
    let t_ratios = if w_norm > 0.0 {
        let t1 = omega_times(field, &w, |j, q| grads[j][q]);
        let zero = nalgebra::DVector::zeros(n);
        let t2 = omega_times(field, &w, |j, q| low_gradient(n, rule.node(q), 0.0, &vw.v[j], &vw.v_t[j]));
        let t3 = omega_times(field, &w, |j, q| low_gradient(n, rule.node(q), du0w[j], &zero, &zero));
        let mut out = [0.0; 3];
        for (o, f) in out.iter_mut().zip([t1, t2, t3]) {
            *o = y_norm(&newtonian_solve_divergence(&f)?, field, &ec)? / w_norm;
        }
        out
    } else {
        [0.0; 3]
    };

    let v_total = vw.add(&vc);
    let (v, dv) = v_total.as_arrays(&grid);
    let (v_w, _) = vw.as_arrays(&grid);
    let (v_c, _) = vc.as_arrays(&grid);
    let decomposition = Decomposition {
        grid: grid.clone(),
        n,
        u0: u0w.iter().zip(&u0c).map(|(a, b)| a + b).collect(),
        du0: du0w.iter().zip(&du0c).map(|(a, b)| a + b).collect(),
        v,
        dv,
        w,
        split: Some(Split {
            u0_w: u0w,
            u0_c: u0c,
            v_w,
            v_c,
        }),
    };
    Ok(FixedPointSolution {
        decomposition,
        report: FixedPointReport {
            iterations,
            increments,
            contraction,
            xi_norm,
            w_norm,
            t_ratios,
            picard_iterations,
            picard_contraction,
        },
        estimator: ec,
        v_profile: v_total,
    })
}
