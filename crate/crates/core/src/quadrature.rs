//! One-dimensional quadrature on uniform grids.
//!
//! Everything radial in this crate lives on a grid that is uniform in
//! `s = log r` (or `t = -log r`).  [`UniformQuadrature`] integrates sampled
//! data on such a grid with local Lagrange interpolation (six points by
//! default, sixth order), optionally against the exponential kernels that
//! appear in variation-of-constants formulas.  Stencils never straddle a
//! declared breakpoint, so data with kinks at known nodes keeps full order.

use std::f64::consts::PI;

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Kernel {
    Unit,
    /// `exp(-a (x_{j+1} - x))` over the interval `[x_j, x_{j+1}]`.
    DecayToRight(f64),
    /// `exp(-a (x - x_j))` over the interval `[x_j, x_{j+1}]`.
    DecayFromLeft(f64),
}

const MAX_STENCIL: usize = 8;

/// Composite quadrature for samples on a uniform grid `x_j = x_0 + j h`.
#[derive(Clone, Debug)]
pub struct UniformQuadrature {
    h: f64,
    len: usize,
    order: usize,
    /// Inclusive index ranges inside which data is smooth.
    segments: Vec<(usize, usize)>,
}

impl UniformQuadrature {
    pub fn new(h: f64, len: usize) -> Self {
        Self::with_breaks(h, len, &[])
    }

    /// `breaks` are node indices where the data may have a kink.
    pub fn with_breaks(h: f64, len: usize, breaks: &[usize]) -> Self {
        let mut cuts: Vec<usize> = breaks
            .iter()
            .copied()
            .filter(|&b| b > 0 && b + 1 < len)
            .collect();
        cuts.sort_unstable();
        cuts.dedup();
        let mut segments = Vec::with_capacity(cuts.len() + 1);
        let mut start = 0;
        for c in cuts {
            segments.push((start, c));
            start = c;
        }
        segments.push((start, len.saturating_sub(1)));
        Self {
            h,
            len,
            order: 8,
            segments,
        }
    }

    pub fn with_order(mut self, order: usize) -> Self {
        self.order = order.clamp(2, MAX_STENCIL);
        self
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

    fn segment_of_interval(&self, j: usize) -> (usize, usize) {
        for &(s, e) in &self.segments {
            if j >= s && j < e {
                return (s, e);
            }
        }
        (0, self.len - 1)
    }

    fn stencil(&self, j: usize) -> (usize, usize) {
        let (s, e) = self.segment_of_interval(j);
        let size = self.order.min(e - s + 1);
        let ideal = j as i64 - (size as i64 / 2 - 1);
        let start = ideal.clamp(s as i64, (e + 1 - size) as i64) as usize;
        (start, size)
    }

    fn weights(&self, j: usize, kernel: Kernel, cache: &mut WeightCache) -> (usize, usize, [f64; MAX_STENCIL]) {
        let (start, size) = self.stencil(j);
        let offset = start as i64 - j as i64;
        if let Some(w) = cache.get(offset, size) {
            return (start, size, w);
        }
        let w = interval_weights(offset, size, self.h, kernel);
        cache.put(offset, size, w);
        (start, size, w)
    }

    /// `C_j = ∫_{x_0}^{x_j} f`.
    pub fn cumulative(&self, f: &[f64]) -> Vec<f64> {
        assert_eq!(f.len(), self.len);
        let mut out = vec![0.0; self.len];
        let mut cache = WeightCache::default();
        for j in 0..self.len.saturating_sub(1) {
            let (start, size, w) = self.weights(j, Kernel::Unit, &mut cache);
            let piece: f64 = (0..size).map(|i| w[i] * f[start + i]).sum();
            out[j + 1] = out[j] + piece;
        }
        out
    }

    /// `∫_{x_0}^{x_{N-1}} f`.
    pub fn integral(&self, f: &[f64]) -> f64 {
        if self.len < 2 {
            return 0.0;
        }
        *self.cumulative(f).last().unwrap()
    }

    /// `∫_{x_i0}^{x_i1} f` for `i0 <= i1`.
    pub fn integral_between(&self, f: &[f64], i0: usize, i1: usize) -> f64 {
        let c = self.cumulative(f);
        c[i1] - c[i0]
    }

    /// `I_j = ∫_{x_0}^{x_j} exp(-a (x_j - x)) f(x) dx`, `a >= 0`.
    pub fn decay_forward(&self, f: &[f64], a: f64) -> Vec<f64> {
        assert_eq!(f.len(), self.len);
        let mut out = vec![0.0; self.len];
        let mut cache = WeightCache::default();
        let damp = (-a * self.h).exp();
        for j in 0..self.len.saturating_sub(1) {
            let (start, size, w) = self.weights(j, Kernel::DecayToRight(a), &mut cache);
            let piece: f64 = (0..size).map(|i| w[i] * f[start + i]).sum();
            out[j + 1] = damp * out[j] + piece;
        }
        out
    }

    /// `I_j = ∫_{x_j}^{x_{N-1}} exp(-a (x - x_j)) f(x) dx`, `a >= 0`.
    pub fn decay_backward(&self, f: &[f64], a: f64) -> Vec<f64> {
        assert_eq!(f.len(), self.len);
        let mut out = vec![0.0; self.len];
        let mut cache = WeightCache::default();
        let damp = (-a * self.h).exp();
        for j in (0..self.len.saturating_sub(1)).rev() {
            let (start, size, w) = self.weights(j, Kernel::DecayFromLeft(a), &mut cache);
            let piece: f64 = (0..size).map(|i| w[i] * f[start + i]).sum();
            out[j] = damp * out[j + 1] + piece;
        }
        out
    }

    /// First derivative of sampled data by local finite differences of the
    /// same order, segment-aware.
    pub fn derivative(&self, f: &[f64]) -> Vec<f64> {
        assert_eq!(f.len(), self.len);
        let mut out = vec![0.0; self.len];
        if self.len < 2 {
            return out;
        }
        for (j, o) in out.iter_mut().enumerate() {
            // pick the segment that contains j; at a break prefer the left one
            // for the last point of a segment and the right one otherwise
            let (s, e) = self
                .segments
                .iter()
                .copied()
                .find(|&(s, e)| j >= s && j <= e && !(j == e && e + 1 < self.len))
                .unwrap_or((0, self.len - 1));
            let size = (self.order + 1).min(e - s + 1);
            let ideal = j as i64 - (size as i64 / 2);
            let start = ideal.clamp(s as i64, (e + 1 - size) as i64) as usize;
            let xs: Vec<f64> = (0..size).map(|i| (start + i) as f64 - j as f64).collect();
            let w = fornberg(0.0, &xs, 1);
            *o = (0..size).map(|i| w[1][i] * f[start + i]).sum::<f64>() / self.h;
        }
        out
    }
}

#[derive(Default)]
struct WeightCache {
    entries: Vec<(i64, usize, [f64; MAX_STENCIL])>,
}

impl WeightCache {
    fn get(&self, offset: i64, size: usize) -> Option<[f64; MAX_STENCIL]> {
        self.entries
            .iter()
            .find(|(o, s, _)| *o == offset && *s == size)
            .map(|e| e.2)
    }

    fn put(&mut self, offset: i64, size: usize, w: [f64; MAX_STENCIL]) {
        self.entries.push((offset, size, w));
    }
}

fn interval_weights(offset: i64, size: usize, h: f64, kernel: Kernel) -> [f64; MAX_STENCIL] {
    let (gx, gw) = gauss_legendre(16);
    let nodes: Vec<f64> = (0..size).map(|i| (offset + i as i64) as f64).collect();
    let mut w = [0.0; MAX_STENCIL];
    for (x, wt) in gx.iter().zip(&gw) {
        let tau = 0.5 * (x + 1.0);
        let k = match kernel {
            Kernel::Unit => 1.0,
            Kernel::DecayToRight(a) => (-a * h * (1.0 - tau)).exp(),
            Kernel::DecayFromLeft(a) => (-a * h * tau).exp(),
        };
        for i in 0..size {
            let mut l = 1.0;
            for m in 0..size {
                if m != i {
                    l *= (tau - nodes[m]) / (nodes[i] - nodes[m]);
                }
            }
            w[i] += 0.5 * wt * k * l * h;
        }
    }
    w
}

/// Finite-difference weights (Fornberg) for derivatives up to `max_order`
/// at `x0` from nodes `xs`.  Returns `w[order][node]`.
pub fn fornberg(x0: f64, xs: &[f64], max_order: usize) -> Vec<Vec<f64>> {
    let n = xs.len();
    let mut c = vec![vec![0.0; n]; max_order + 1];
    let mut c1 = 1.0;
    let mut c4 = xs[0] - x0;
    c[0][0] = 1.0;
    for i in 1..n {
        let mn = i.min(max_order);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = xs[i] - x0;
        for j in 0..i {
            let c3 = xs[i] - xs[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[k][i] = c1 * (k as f64 * c[k - 1][i - 1] - c5 * c[k][i - 1]) / c2;
                }
                c[0][i] = -c1 * c5 * c[0][i - 1] / c2;
            }
            for k in (1..=mn).rev() {
                c[k][j] = (c4 * c[k][j] - k as f64 * c[k - 1][j]) / c3;
            }
            c[0][j] = c4 * c[0][j] / c3;
        }
        c1 = c2;
    }
    c
}

/// Adaptive Simpson quadrature of a smooth function on `[a, b]`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    fn rec<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) + rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
    let fa = f(a);
    let fb = f(b);
    let fm = f(0.5 * (a + b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    rec(f, a, b, fa, fm, fb, whole, tol, 48)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(7);
        let s: f64 = w.iter().sum();
        assert!((s - 2.0).abs() < 1e-14);
        // ∫ x^12 = 2/13
        let v: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(12)).sum();
        assert!((v - 2.0 / 13.0).abs() < 1e-14);
    }

    #[test]
    fn cumulative_is_sixth_order_on_smooth_data() {
        let n = 201;
        let h = 2.0 / (n - 1) as f64;
        let f: Vec<f64> = (0..n).map(|j| (j as f64 * h).sin()).collect();
        let q = UniformQuadrature::new(h, n);
        let c = q.cumulative(&f);
        for (j, cj) in c.iter().enumerate() {
            let exact = 1.0 - (j as f64 * h).cos();
            assert!((cj - exact).abs() < 1e-12, "j={j}");
        }
    }

    #[test]
    fn breakpoints_keep_accuracy_across_kinks() {
        // |x - 1| has a kink at x = 1 which is node 100
        let n = 201;
        let h = 2.0 / (n - 1) as f64;
        let f: Vec<f64> = (0..n).map(|j| (j as f64 * h - 1.0).abs().powi(3) + (j as f64 * h - 1.0).abs()).collect();
        let plain = UniformQuadrature::new(h, n).integral(&f);
        let aware = UniformQuadrature::with_breaks(h, n, &[100]).integral(&f);
        let exact = 2.0 * (0.25 + 0.5);
        assert!((aware - exact).abs() < 1e-13);
        assert!((plain - exact).abs() > (aware - exact).abs());
    }

    #[test]
    fn decay_kernels_match_closed_forms() {
        let n = 161;
        let h = 4.0 / (n - 1) as f64;
        let a = 3.0;
        let f: Vec<f64> = (0..n).map(|j| (j as f64 * h).cos()).collect();
        let q = UniformQuadrature::new(h, n);
        let fwd = q.decay_forward(&f, a);
        let bwd = q.decay_backward(&f, a);
        // ∫_0^x e^{-a(x-s)} cos s ds = (a cos x + sin x - a e^{-a x}) / (a^2 + 1)
        for j in 0..n {
            let x = j as f64 * h;
            let exact = (a * x.cos() + x.sin() - a * (-a * x).exp()) / (a * a + 1.0);
            assert!((fwd[j] - exact).abs() < 1e-11, "fwd j={j}");
        }
        // ∫_x^L e^{-a(s-x)} cos s ds
        let l = 4.0;
        for j in 0..n {
            let x = j as f64 * h;
            let prim = |s: f64| (-a * (s - x)).exp() * (-a * s.cos() + s.sin()) / (a * a + 1.0);
            let exact = prim(l) - prim(x);
            assert!((bwd[j] - exact).abs() < 1e-11, "bwd j={j}");
        }
    }

    #[test]
    fn derivative_matches_cosine() {
        let n = 101;
        let h = 1.0 / (n - 1) as f64;
        let f: Vec<f64> = (0..n).map(|j| (j as f64 * h).sin()).collect();
        let d = UniformQuadrature::new(h, n).derivative(&f);
        for (j, dj) in d.iter().enumerate() {
            assert!((dj - (j as f64 * h).cos()).abs() < 1e-9);
        }
    }

    #[test]
    fn simpson_handles_smooth_integrand() {
        let v = adaptive_simpson(&|x: f64| x.exp(), 0.0, 1.0, 1e-13);
        assert!((v - (1f64.exp() - 1.0)).abs() < 1e-12);
    }
}
