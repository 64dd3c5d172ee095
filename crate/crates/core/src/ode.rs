//! Adaptive Dormand–Prince 5(4) integrator for small ODE systems.

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct Dopri {
    pub rtol: f64,
    pub atol: f64,
    pub h_min: f64,
    pub max_steps: usize,
}

impl Default for Dopri {
    fn default() -> Self {
        Self {
            rtol: 1e-12,
            atol: 1e-14,
            h_min: 1e-13,
            max_steps: 2_000_000,
        }
    }
}

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

impl Dopri {
    pub fn with_tolerance(rtol: f64, atol: f64) -> Self {
        Self {
            rtol,
            atol,
            ..Self::default()
        }
    }

    /// Integrates `y' = f(t, y)` from `t0` and returns the state at every
    /// time in `outputs` (non-decreasing, all `>= t0`).  Steps land exactly on
    /// every output time, so piecewise-smooth right-hand sides with kinks at
    /// output times are integrated at full order.
    pub fn integrate<F>(&self, mut f: F, t0: f64, y0: &[f64], outputs: &[f64]) -> Result<Vec<Vec<f64>>>
    where
        F: FnMut(f64, &[f64], &mut [f64]),
    {
        let dim = y0.len();
        let mut y = y0.to_vec();
        let mut t = t0;
        let mut out = Vec::with_capacity(outputs.len());
        let mut k = vec![vec![0.0; dim]; 7];
        let mut ytmp = vec![0.0; dim];
        let mut y5 = vec![0.0; dim];
        let mut h = 1e-3;
        let mut steps = 0usize;
        for &target in outputs {
            if target < t - 1e-14 * t.abs().max(1.0) {
                return Err(Error::InvalidParameter("output times must be non-decreasing".into()));
            }
            while target - t > 1e-14 * target.abs().max(1.0) {
                steps += 1;
                if steps > self.max_steps {
                    return Err(Error::StepUnderflow { t, h });
                }
                let remaining = target - t;
                let last = h >= remaining;
                let hh = if last { remaining } else { h };
                f(t, &y, &mut k[0]);
                for s in 1..7 {
                    for i in 0..dim {
                        let mut acc = y[i];
                        for (j, kj) in k.iter().enumerate().take(s) {
                            acc += hh * A[s][j] * kj[i];
                        }
                        ytmp[i] = acc;
                    }
                    let (head, tail) = k.split_at_mut(s);
                    let _ = head;
                    f(t + C[s] * hh, &ytmp, &mut tail[0]);
                }
                let mut err = 0.0f64;
                for i in 0..dim {
                    let mut s5 = y[i];
                    let mut s4 = y[i];
                    for s in 0..7 {
                        s5 += hh * B5[s] * k[s][i];
                        s4 += hh * B4[s] * k[s][i];
                    }
                    y5[i] = s5;
                    let sc = self.atol + self.rtol * y[i].abs().max(s5.abs());
                    let e = (s5 - s4) / sc;
                    err = err.max(e.abs());
                }
                if !err.is_finite() {
                    return Err(Error::StepUnderflow { t, h: hh });
                }
                if err <= 1.0 {
                    t = if last { target } else { t + hh };
                    y.copy_from_slice(&y5);
                    let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
                    if !last || fac < 1.0 {
                        h = hh * fac;
                    }
                } else {
                    h = hh * (0.9 * err.powf(-0.2)).clamp(0.1, 1.0);
                    if h < self.h_min {
                        return Err(Error::StepUnderflow { t, h });
                    }
                }
            }
            out.push(y.clone());
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn harmonic_oscillator_is_accurate() {
        let ts: Vec<f64> = (0..=20).map(|i| i as f64 * 0.5).collect();
        let sol = Dopri::default()
            .integrate(
                |_, y, dy| {
                    dy[0] = y[1];
                    dy[1] = -y[0];
                },
                0.0,
                &[1.0, 0.0],
                &ts,
            )
            .unwrap();
        for (t, y) in ts.iter().zip(&sol) {
            assert!((y[0] - t.cos()).abs() < 1e-10);
            assert!((y[1] + t.sin()).abs() < 1e-10);
        }
    }

    #[test]
    fn rejects_decreasing_outputs() {
        let r = Dopri::default().integrate(|_, _, dy| dy[0] = 0.0, 0.0, &[0.0], &[1.0, 0.5]);
        assert!(r.is_err());
    }
}
