//! Quadrature, mean values and real spherical harmonics on `S^{n-1}`, `n ∈ {2, 3}`.
//!
//! All integrals over the sphere are mean values: weights sum to one and the
//! harmonic basis is orthonormal for the mean, so `⨍ φ_{k,m}² = 1`.

use crate::error::{Error, Result};
use crate::quadrature::gauss_legendre;
use std::f64::consts::PI;
use std::sync::Arc;

/// Nodes and mean-normalized weights on the unit sphere.
#[derive(Clone, Debug)]
pub struct SphereRule {
    dim: usize,
    degree: usize,
    nodes: Vec<[f64; 3]>,
    weights: Vec<f64>,
    /// Polar angle (n = 3) or angle (n = 2), and azimuth (n = 3).
    angles: Vec<[f64; 2]>,
}

impl SphereRule {
    pub fn dimension(&self) -> usize {
        self.dim
    }

    /// Harmonics up to this degree are integrated exactly.
    pub fn exact_degree(&self) -> usize {
        self.degree
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Node `i` as a slice of length `n`.
    pub fn node(&self, i: usize) -> &[f64] {
        &self.nodes[i][..self.dim]
    }

    pub fn node3(&self, i: usize) -> [f64; 3] {
        self.nodes[i]
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Weighted sum of a function evaluated at the nodes.
    pub fn mean_of<F: FnMut(&[f64]) -> f64>(&self, mut f: F) -> f64 {
        (0..self.len()).map(|i| self.weights[i] * f(self.node(i))).sum()
    }

    pub fn sample<F: FnMut(&[f64]) -> f64>(self: &Arc<Self>, mut f: F) -> SphereSamples {
        let values = (0..self.len()).map(|i| f(self.node(i))).collect();
        SphereSamples {
            rule: Arc::clone(self),
            values,
            components: 1,
        }
    }

    pub fn sample_vector<F: FnMut(&[f64]) -> Vec<f64>>(self: &Arc<Self>, mut f: F) -> SphereSamples {
        let n = self.dim;
        let mut values = Vec::with_capacity(n * self.len());
        for i in 0..self.len() {
            let v = f(self.node(i));
            assert_eq!(v.len(), n);
            values.extend_from_slice(&v);
        }
        SphereSamples {
            rule: Arc::clone(self),
            values,
            components: n,
        }
    }
}

/// Rule exact on harmonics of degree `<= 4K + 1`, i.e. the minimal rule for
/// degree `2K` with a safety factor two in the node count.
pub fn build_sphere_rule(n: usize, k: usize) -> Result<Arc<SphereRule>> {
    if k == 0 {
        return Err(Error::InvalidParameter("harmonic degree K must be positive".into()));
    }
    match n {
        2 => {
            let count = 2 * (2 * k + 1);
            let w = 1.0 / count as f64;
            let mut nodes = Vec::with_capacity(count);
            let mut angles = Vec::with_capacity(count);
            for i in 0..count {
                let a = 2.0 * PI * i as f64 / count as f64;
                nodes.push([a.cos(), a.sin(), 0.0]);
                angles.push([a, 0.0]);
            }
            Ok(Arc::new(SphereRule {
                dim: 2,
                degree: count - 1,
                nodes,
                weights: vec![w; count],
                angles,
            }))
        }
        3 => {
            let npolar = 2 * k + 2;
            let nazim = 4 * k + 2;
            let (x, wx) = gauss_legendre(npolar);
            let mut nodes = Vec::with_capacity(npolar * nazim);
            let mut weights = Vec::with_capacity(npolar * nazim);
            let mut angles = Vec::with_capacity(npolar * nazim);
            for (xi, wi) in x.iter().zip(&wx) {
                let polar = xi.acos();
                let st = (1.0 - xi * xi).sqrt();
                for j in 0..nazim {
                    let az = 2.0 * PI * j as f64 / nazim as f64;
                    nodes.push([st * az.cos(), st * az.sin(), *xi]);
                    weights.push(0.5 * wi / nazim as f64);
                    angles.push([polar, az]);
                }
            }
            Ok(Arc::new(SphereRule {
                dim: 3,
                degree: (2 * npolar - 1).min(nazim - 1),
                nodes,
                weights,
                angles,
            }))
        }
        other => Err(Error::UnsupportedDimension(other)),
    }
}

/// Scalar or `n`-vector values at the nodes of a rule.
#[derive(Clone, Debug)]
pub struct SphereSamples {
    rule: Arc<SphereRule>,
    values: Vec<f64>,
    components: usize,
}

impl SphereSamples {
    pub fn scalar(rule: Arc<SphereRule>, values: Vec<f64>) -> Result<Self> {
        if values.len() != rule.len() {
            return Err(Error::InvalidParameter(format!(
                "{} values for {} nodes",
                values.len(),
                rule.len()
            )));
        }
        Ok(Self {
            rule,
            values,
            components: 1,
        })
    }

    pub fn rule(&self) -> &Arc<SphereRule> {
        &self.rule
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn is_scalar(&self) -> bool {
        self.components == 1
    }
}

/// `⨍ f`, one entry per component.
pub fn sphere_mean(f: &SphereSamples) -> Vec<f64> {
    let c = f.components;
    let mut out = vec![0.0; c];
    for (i, w) in f.rule.weights.iter().enumerate() {
        for (k, o) in out.iter_mut().enumerate() {
            *o += w * f.values[i * c + k];
        }
    }
    out
}

/// `(⨍ f θ_k)_k` for scalar samples.
pub fn first_moment(f: &SphereSamples) -> Vec<f64> {
    assert!(f.is_scalar(), "first_moment expects scalar samples");
    let n = f.rule.dim;
    let mut out = vec![0.0; n];
    for i in 0..f.rule.len() {
        let w = f.rule.weights[i] * f.values[i];
        for (k, o) in out.iter_mut().enumerate() {
            *o += w * f.rule.nodes[i][k];
        }
    }
    out
}

/// Projection onto `span{1, θ_1, …, θ_n}`: `⨍f + n θ·⨍fθ`.
pub fn project_p(f: &SphereSamples) -> SphereSamples {
    assert!(f.is_scalar(), "project_p expects scalar samples");
    let mean = sphere_mean(f)[0];
    let m = first_moment(f);
    let n = f.rule.dim as f64;
    let values = (0..f.rule.len())
        .map(|i| mean + n * f.rule.node(i).iter().zip(&m).map(|(t, mk)| t * mk).sum::<f64>())
        .collect();
    SphereSamples {
        rule: Arc::clone(&f.rule),
        values,
        components: 1,
    }
}

/// `f - P f`.
pub fn perp_part(f: &SphereSamples) -> SphereSamples {
    let p = project_p(f);
    let values = f.values.iter().zip(&p.values).map(|(a, b)| a - b).collect();
    SphereSamples {
        rule: Arc::clone(&f.rule),
        values,
        components: 1,
    }
}

/// Real orthonormal spherical harmonics up to degree `K` tabulated at the
/// nodes of a rule, with tangential gradients.
///
/// Ordering inside degree `k`: `cos(φ), sin(φ), …, cos(kφ), sin(kφ)` and,
/// for `n = 3`, the zonal function last.  Degree one is then exactly
/// `√n θ_1, …, √n θ_n`.
#[derive(Clone, Debug)]
pub struct HarmonicBasis {
    rule: Arc<SphereRule>,
    max_degree: usize,
    degrees: Vec<usize>,
    /// `values[mode * nodes + node]`
    values: Vec<f64>,
    /// `grads[(mode * nodes + node) * 3 + c]`, tangential gradient in ℝ³ coordinates.
    grads: Vec<f64>,
}

impl HarmonicBasis {
    pub fn new(rule: Arc<SphereRule>, max_degree: usize) -> Result<Self> {
        if 2 * max_degree > rule.exact_degree() {
            return Err(Error::InvalidParameter(format!(
                "basis degree {max_degree} exceeds what the rule resolves (exact to degree {})",
                rule.exact_degree()
            )));
        }
        let n = rule.dim;
        let nodes = rule.len();
        let modes = mode_count_up_to(n, max_degree);
        let mut degrees = Vec::with_capacity(modes);
        let mut values = vec![0.0; modes * nodes];
        let mut grads = vec![0.0; modes * nodes * 3];
        match n {
            2 => {
                for k in 0..=max_degree {
                    let count = if k == 0 { 1 } else { 2 };
                    for _ in 0..count {
                        degrees.push(k);
                    }
                }
                for i in 0..nodes {
                    let a = rule.angles[i][0];
                    let tangent = [-a.sin(), a.cos()];
                    values[i] = 1.0;
                    for k in 1..=max_degree {
                        let kf = k as f64;
                        let (s, c) = (kf * a).sin_cos();
                        let base = 2 * k - 1;
                        let r2 = 2f64.sqrt();
                        values[base * nodes + i] = r2 * c;
                        values[(base + 1) * nodes + i] = r2 * s;
                        let dc = -r2 * kf * s;
                        let ds = r2 * kf * c;
                        for d in 0..2 {
                            grads[(base * nodes + i) * 3 + d] = dc * tangent[d];
                            grads[((base + 1) * nodes + i) * 3 + d] = ds * tangent[d];
                        }
                    }
                }
            }
            3 => {
                for k in 0..=max_degree {
                    for _ in 0..(2 * k + 1) {
                        degrees.push(k);
                    }
                }
                let r2 = 2f64.sqrt();
                for i in 0..nodes {
                    let [polar, az] = rule.angles[i];
                    let (st, x) = polar.sin_cos();
                    let e_polar = [x * az.cos(), x * az.sin(), -st];
                    let e_az = [-az.sin(), az.cos(), 0.0];
                    let (q, dq) = normalized_legendre(max_degree, x, st);
                    for k in 0..=max_degree {
                        let base = k * k;
                        for m in 1..=k {
                            let mf = m as f64;
                            let (s, c) = (mf * az).sin_cos();
                            let qv = q[k][m];
                            let dqv = dq[k][m];
                            let ic = base + 2 * (m - 1);
                            let is = ic + 1;
                            values[ic * nodes + i] = r2 * qv * c;
                            values[is * nodes + i] = r2 * qv * s;
                            // ∇_S = e_polar ∂_polar + e_az (1/sin) ∂_az; m ≥ 1 so q/sin is finite
                            let q_over_sin = if st > 0.0 { qv / st } else { 0.0 };
                            for d in 0..3 {
                                grads[(ic * nodes + i) * 3 + d] =
                                    r2 * (dqv * c * e_polar[d] - mf * q_over_sin * s * e_az[d]);
                                grads[(is * nodes + i) * 3 + d] =
                                    r2 * (dqv * s * e_polar[d] + mf * q_over_sin * c * e_az[d]);
                            }
                        }
                        let iz = base + 2 * k;
                        values[iz * nodes + i] = q[k][0];
                        for d in 0..3 {
                            grads[(iz * nodes + i) * 3 + d] = dq[k][0] * e_polar[d];
                        }
                    }
                }
            }
            other => return Err(Error::UnsupportedDimension(other)),
        }
        Ok(Self {
            rule,
            max_degree,
            degrees,
            values,
            grads,
        })
    }

    pub fn rule(&self) -> &Arc<SphereRule> {
        &self.rule
    }

    pub fn dimension(&self) -> usize {
        self.rule.dim
    }

    pub fn max_degree(&self) -> usize {
        self.max_degree
    }

    pub fn num_modes(&self) -> usize {
        self.degrees.len()
    }

    pub fn degree(&self, mode: usize) -> usize {
        self.degrees[mode]
    }

    /// Dimension of the degree-`k` space.
    pub fn modes_in_degree(&self, k: usize) -> usize {
        modes_in_degree(self.rule.dim, k)
    }

    /// Index of the first mode of degree `k`.
    pub fn degree_offset(&self, k: usize) -> usize {
        mode_count_up_to(self.rule.dim, k) - modes_in_degree(self.rule.dim, k)
    }

    /// `k (k + n - 2)`, the eigenvalue of `-Δ_S` on degree `k`.
    pub fn eigenvalue(&self, k: usize) -> f64 {
        (k * (k + self.rule.dim - 2)) as f64
    }

    pub fn value(&self, mode: usize, node: usize) -> f64 {
        self.values[mode * self.rule.len() + node]
    }

    pub fn mode_values(&self, mode: usize) -> &[f64] {
        let n = self.rule.len();
        &self.values[mode * n..(mode + 1) * n]
    }

    /// Tangential gradient of mode at node, as a vector in ℝ³ (last entry 0 for n = 2).
    pub fn gradient(&self, mode: usize, node: usize) -> [f64; 3] {
        let b = (mode * self.rule.len() + node) * 3;
        [self.grads[b], self.grads[b + 1], self.grads[b + 2]]
    }
}

fn modes_in_degree(n: usize, k: usize) -> usize {
    match (n, k) {
        (_, 0) => 1,
        (2, _) => 2,
        _ => 2 * k + 1,
    }
}

fn mode_count_up_to(n: usize, k: usize) -> usize {
    (0..=k).map(|j| modes_in_degree(n, j)).sum()
}

/// `Q_l^m = sqrt((2l+1)(l-m)!/(l+m)!) P_l^m(x)` without Condon–Shortley phase,
/// and `dQ/dθ` for `x = cos θ`, `st = sin θ`.
fn normalized_legendre(lmax: usize, x: f64, st: f64) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut q = vec![vec![0.0; lmax + 1]; lmax + 1];
    let mut dq = vec![vec![0.0; lmax + 1]; lmax + 1];
    q[0][0] = 1.0;
    for m in 1..=lmax {
        let mf = m as f64;
        q[m][m] = ((2.0 * mf + 1.0) / (2.0 * mf)).sqrt() * st * q[m - 1][m - 1];
    }
    for m in 0..lmax {
        q[m + 1][m] = (2.0 * m as f64 + 3.0).sqrt() * x * q[m][m];
    }
    for m in 0..=lmax {
        for l in (m + 2)..=lmax {
            let lf = l as f64;
            let mf = m as f64;
            let a = ((4.0 * lf * lf - 1.0) / (lf * lf - mf * mf)).sqrt();
            let b = (((lf - 1.0) * (lf - 1.0) - mf * mf) / (4.0 * (lf - 1.0) * (lf - 1.0) - 1.0)).sqrt();
            q[l][m] = a * (x * q[l - 1][m] - b * q[l - 2][m]);
        }
    }
    for l in 1..=lmax {
        let lf = l as f64;
        for m in 0..=l {
            let mf = m as f64;
            let prev = if l > m { q[l - 1][m] } else { 0.0 };
            let c = ((2.0 * lf + 1.0) / (2.0 * lf - 1.0) * (lf - mf) * (lf + mf)).sqrt();
            dq[l][m] = if st > 0.0 { (lf * x * q[l][m] - c * prev) / st } else { 0.0 };
        }
    }
    (q, dq)
}

/// `c_{k,m} = ⟨f, φ_{k,m}⟩` on the rule.
pub fn harmonic_analyze(f: &SphereSamples, basis: &HarmonicBasis) -> Vec<f64> {
    assert!(f.is_scalar(), "harmonic_analyze expects scalar samples");
    let w = &basis.rule.weights;
    (0..basis.num_modes())
        .map(|mode| {
            basis
                .mode_values(mode)
                .iter()
                .zip(w)
                .zip(&f.values)
                .map(|((p, w), v)| p * w * v)
                .sum()
        })
        .collect()
}

/// Coefficients together with the rule-norm of the part of `f` outside the basis.
pub fn harmonic_analyze_with_residual(f: &SphereSamples, basis: &HarmonicBasis) -> (Vec<f64>, f64) {
    let c = harmonic_analyze(f, basis);
    let back = harmonic_synthesize(&c, basis);
    let res: f64 = basis
        .rule
        .weights
        .iter()
        .zip(f.values.iter().zip(&back.values))
        .map(|(w, (a, b))| w * (a - b) * (a - b))
        .sum();
    (c, res.sqrt())
}

/// `Σ c_{k,m} φ_{k,m}` at the nodes.
pub fn harmonic_synthesize(c: &[f64], basis: &HarmonicBasis) -> SphereSamples {
    assert_eq!(c.len(), basis.num_modes());
    let nodes = basis.rule.len();
    let mut values = vec![0.0; nodes];
    for (mode, cm) in c.iter().enumerate() {
        if *cm == 0.0 {
            continue;
        }
        for (v, p) in values.iter_mut().zip(basis.mode_values(mode)) {
            *v += cm * p;
        }
    }
    SphereSamples {
        rule: Arc::clone(&basis.rule),
        values,
        components: 1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rule(n: usize) -> Arc<SphereRule> {
        build_sphere_rule(n, 8).unwrap()
    }

    #[test]
    fn rejects_other_dimensions() {
        assert!(matches!(build_sphere_rule(4, 8), Err(Error::UnsupportedDimension(4))));
    }

    #[test]
    fn weights_sum_to_one_and_second_moments_are_isotropic() {
        for n in [2, 3] {
            let r = rule(n);
            let s: f64 = r.weights().iter().sum();
            assert!((s - 1.0).abs() < 1e-14);
            for k in 0..n {
                for l in 0..n {
                    let m = r.mean_of(|t| t[k] * t[l]);
                    let exact = if k == l { 1.0 / n as f64 } else { 0.0 };
                    assert!((m - exact).abs() < 1e-12);
                }
                assert!(r.mean_of(|t| t[k]).abs() < 1e-14);
            }
        }
        assert!(rule(2).len() >= 33);
    }

    #[test]
    fn sphere_mean_examples() {
        let r = rule(3);
        let f = r.sample(|t| t[0] * t[0] + t[1] * t[1]);
        assert!((sphere_mean(&f)[0] - 2.0 / 3.0).abs() < 1e-13);
        let r2 = rule(2);
        let g = r2.sample(|t| 3.0 * t[0] + t[1]);
        let m = first_moment(&g);
        assert!((m[0] - 1.5).abs() < 1e-14 && (m[1] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn projection_examples() {
        let r = rule(3);
        let f = r.sample(|t| 2.0 + t[0] + t[0] * t[1]);
        let p = perp_part(&f);
        for i in 0..r.len() {
            let t = r.node(i);
            assert!((p.values()[i] - t[0] * t[1]).abs() < 1e-12);
        }
        let q = project_p(&r.sample(|t| t[2]));
        for i in 0..r.len() {
            assert!((q.values()[i] - r.node(i)[2]).abs() < 1e-12);
        }
    }

    #[test]
    fn basis_is_orthonormal_on_the_rule() {
        for n in [2, 3] {
            let r = rule(n);
            let b = HarmonicBasis::new(Arc::clone(&r), 8).unwrap();
            assert_eq!(b.modes_in_degree(2), if n == 2 { 2 } else { 5 });
            for i in 0..b.num_modes() {
                for j in 0..b.num_modes() {
                    let ip: f64 = (0..r.len()).map(|q| r.weight(q) * b.value(i, q) * b.value(j, q)).sum();
                    let exact = if i == j { 1.0 } else { 0.0 };
                    assert!((ip - exact).abs() < 1e-10, "n={n} i={i} j={j} ip={ip}");
                }
            }
        }
    }

    #[test]
    fn degree_one_modes_are_scaled_coordinates() {
        for n in [2, 3] {
            let r = rule(n);
            let b = HarmonicBasis::new(Arc::clone(&r), 4).unwrap();
            let off = b.degree_offset(1);
            let s = (n as f64).sqrt();
            for k in 0..n {
                for q in 0..r.len() {
                    assert!((b.value(off + k, q) - s * r.node(q)[k]).abs() < 1e-12);
                    // tangential gradient of √n θ_k is √n (e_k - θ_k θ)
                    let g = b.gradient(off + k, q);
                    for d in 0..n {
                        let e = if d == k { 1.0 } else { 0.0 };
                        let exact = s * (e - r.node(q)[k] * r.node(q)[d]);
                        assert!((g[d] - exact).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn tangential_gradients_satisfy_green_identity() {
        // ⨍ ∇φ_i · ∇φ_j = λ_k δ_ij
        for n in [2, 3] {
            let r = rule(n);
            let b = HarmonicBasis::new(Arc::clone(&r), 6).unwrap();
            for i in 0..b.num_modes() {
                for j in 0..b.num_modes() {
                    let ip: f64 = (0..r.len())
                        .map(|q| {
                            let gi = b.gradient(i, q);
                            let gj = b.gradient(j, q);
                            r.weight(q) * (gi[0] * gj[0] + gi[1] * gj[1] + gi[2] * gj[2])
                        })
                        .sum();
                    let exact = if i == j { b.eigenvalue(b.degree(i)) } else { 0.0 };
                    assert!((ip - exact).abs() < 1e-9, "n={n} i={i} j={j}");
                }
            }
        }
    }

    #[test]
    fn analysis_picks_out_single_modes() {
        let r = rule(3);
        let b = HarmonicBasis::new(Arc::clone(&r), 8).unwrap();
        let m = b.degree_offset(2);
        let f = SphereSamples::scalar(Arc::clone(&r), b.mode_values(m).to_vec()).unwrap();
        let c = harmonic_analyze(&f, &b);
        for (i, ci) in c.iter().enumerate() {
            let exact = if i == m { 1.0 } else { 0.0 };
            assert!((ci - exact).abs() < 1e-10);
        }
    }
}
