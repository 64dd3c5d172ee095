//! Dyadic logarithmic radial grids.
//!
//! Radii are `r_j = 2^{j/m}` for integers `lo <= j <= hi`.  Every grid with
//! the same `m` is a sub-grid of the same lattice, so dyadic radii `2^k` and
//! doubled radii `2r` are always nodes.

use crate::error::{Error, Result};
use crate::quadrature::UniformQuadrature;
use std::f64::consts::LN_2;

#[derive(Clone, Debug, PartialEq)]
pub struct RadialGrid {
    per_octave: usize,
    lo: i64,
    hi: i64,
    /// Lattice exponents where tabulated data may have a kink.
    kinks: Vec<i64>,
}

impl RadialGrid {
    /// Grid covering `[2^{-depth_octaves}, 2^{top_octaves}]`.
    pub fn dyadic(per_octave: usize, depth_octaves: usize, top_octaves: usize) -> Result<Self> {
        if per_octave == 0 {
            return Err(Error::InvalidParameter("per_octave must be positive".into()));
        }
        let m = per_octave as i64;
        Ok(Self {
            per_octave,
            lo: -(depth_octaves as i64) * m,
            hi: top_octaves as i64 * m,
            kinks: Vec::new(),
        })
    }

    pub fn from_exponents(per_octave: usize, lo: i64, hi: i64) -> Result<Self> {
        if per_octave == 0 || hi <= lo {
            return Err(Error::InvalidParameter(format!(
                "invalid grid exponents lo = {lo}, hi = {hi}, m = {per_octave}"
            )));
        }
        Ok(Self {
            per_octave,
            lo,
            hi,
            kinks: Vec::new(),
        })
    }

    /// Declares radii (which must be nodes) where data is only piecewise smooth.
    pub fn with_kinks_at(mut self, radii: &[f64]) -> Result<Self> {
        for &r in radii {
            let e = self.lattice_exponent(r).ok_or_else(|| {
                Error::GridMismatch(format!("kink radius {r} is not a lattice node"))
            })?;
            if e > self.lo && e < self.hi && !self.kinks.contains(&e) {
                self.kinks.push(e);
            }
        }
        self.kinks.sort_unstable();
        Ok(self)
    }

    pub fn per_octave(&self) -> usize {
        self.per_octave
    }

    pub fn len(&self) -> usize {
        (self.hi - self.lo + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Spacing in `log r`.
    pub fn log_step(&self) -> f64 {
        LN_2 / self.per_octave as f64
    }

    pub fn exponent(&self, i: usize) -> i64 {
        self.lo + i as i64
    }

    pub fn radius(&self, i: usize) -> f64 {
        (self.exponent(i) as f64 * self.log_step()).exp()
    }

    pub fn log_radius(&self, i: usize) -> f64 {
        self.exponent(i) as f64 * self.log_step()
    }

    pub fn radii(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.radius(i)).collect()
    }

    pub fn r_min(&self) -> f64 {
        self.radius(0)
    }

    pub fn r_max(&self) -> f64 {
        self.radius(self.len() - 1)
    }

    fn lattice_exponent(&self, r: f64) -> Option<i64> {
        if r <= 0.0 {
            return None;
        }
        let x = r.ln() / self.log_step();
        let e = x.round();
        ((x - e).abs() < 1e-8).then_some(e as i64)
    }

    /// Node index of radius `r`, if `r` is a node of this grid.
    pub fn index_of(&self, r: f64) -> Option<usize> {
        let e = self.lattice_exponent(r)?;
        (e >= self.lo && e <= self.hi).then(|| (e - self.lo) as usize)
    }

    /// Index of `2 r_i`.
    pub fn doubled(&self, i: usize) -> Option<usize> {
        let j = i + self.per_octave;
        (j < self.len()).then_some(j)
    }

    /// Node indices of declared kinks.
    pub fn kink_indices(&self) -> Vec<usize> {
        self.kinks.iter().map(|e| (e - self.lo) as usize).collect()
    }

    /// Quadrature in `s = log r` over the whole grid, kink-aware.
    pub fn quadrature(&self) -> UniformQuadrature {
        UniformQuadrature::with_breaks(self.log_step(), self.len(), &self.kink_indices())
    }

    /// Sub-grid `[i0, i1]` with the same lattice and the kinks inside it.
    pub fn slice(&self, i0: usize, i1: usize) -> Result<Self> {
        if i1 <= i0 || i1 >= self.len() {
            return Err(Error::OutOfGrid(format!("slice [{i0}, {i1}] of grid with {} nodes", self.len())));
        }
        let lo = self.exponent(i0);
        let hi = self.exponent(i1);
        Ok(Self {
            per_octave: self.per_octave,
            lo,
            hi,
            kinks: self.kinks.iter().copied().filter(|&e| e > lo && e < hi).collect(),
        })
    }

    /// Checks that `other` lies on the same lattice.
    pub fn compatible(&self, other: &Self) -> Result<()> {
        if self.per_octave != other.per_octave {
            return Err(Error::GridMismatch(format!(
                "{} vs {} points per octave",
                self.per_octave, other.per_octave
            )));
        }
        Ok(())
    }

    /// Linear interpolation of tabulated values in `log r`.  Outside the
    /// grid the end value is held constant.
    pub fn interpolate(&self, values: &[f64], r: f64) -> f64 {
        let x = (r.ln() / self.log_step()) - self.lo as f64;
        if x <= 0.0 {
            return values[0];
        }
        let last = self.len() - 1;
        if x >= last as f64 {
            return values[last];
        }
        let i = x.floor() as usize;
        let w = x - i as f64;
        values[i] * (1.0 - w) + values[i + 1] * w
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dyadic_nodes_are_exact_powers() {
        let g = RadialGrid::dyadic(16, 10, 2).unwrap();
        assert_eq!(g.len(), 12 * 16 + 1);
        assert!((g.r_min() - 2f64.powi(-10)).abs() < 1e-16);
        assert!((g.r_max() - 4.0).abs() < 1e-14);
        let i = g.index_of(0.25).unwrap();
        assert!((g.radius(i) - 0.25).abs() < 1e-15);
        assert_eq!(g.doubled(i), g.index_of(0.5));
    }

    #[test]
    fn kinks_must_be_nodes() {
        let g = RadialGrid::dyadic(8, 4, 1).unwrap();
        assert!(g.clone().with_kinks_at(&[0.3]).is_err());
        let g = g.with_kinks_at(&[0.25, 0.5, 1.0]).unwrap();
        assert_eq!(g.kink_indices().len(), 3);
    }
}
