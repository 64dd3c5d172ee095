//! End-to-end runs on a named coefficient family.

use crate::coeffs::{make_gs_field, make_identity_field, square_dini_integral, CoefficientField, GsProfile, SquareDiniReport};
use crate::error::{Error, Result};
use crate::estimator::{estimator_curve, EstimatorCurve, ReducedCurve};
use crate::grid::RadialGrid;
use crate::pipeline::{
    assemble, ball_l2_norm, component_bounds, default_depth, direct_solve_oracle, fixed_point_solve, gradient_profile,
    localize_rhs, oracle_equivalence, standard_grid, theorem1_check, weak_residual, ComponentBounds, Cutoff,
    EquivalenceReport, FixedPointOptions, FixedPointReport, RatioOptions, RatioReport, WeakResidual,
};
use crate::sphere::{build_sphere_rule, HarmonicBasis, SphereRule, SphereSamples};
use std::sync::Arc;

#[derive(Clone, Debug, PartialEq)]
pub enum FieldSpec {
    Identity,
    /// `g(r) = amp (log(e/r))^{-s}`.
    LogPower { amp: f64, s: f64 },
    Constant { g: f64 },
}

impl FieldSpec {
    pub fn profile(&self) -> Option<GsProfile> {
        match *self {
            Self::Identity => None,
            Self::LogPower { amp, s } => Some(GsProfile::LogPower { amp, s }),
            Self::Constant { g } => Some(GsProfile::Constant(g)),
        }
    }

    pub fn build(&self, n: usize, eps: f64) -> Result<CoefficientField> {
        match self.profile() {
            None => make_identity_field(n),
            Some(p) => make_gs_field(n, p, eps),
        }
    }

    /// Growth (`+1`), decay (`−1`) or neither (`0`) of `E` towards the origin.
    pub fn trend(&self) -> i32 {
        match *self {
            Self::Identity => 0,
            Self::LogPower { amp, .. } | Self::Constant { g: amp } => {
                if amp > 0.0 {
                    1
                } else if amp < 0.0 {
                    -1
                } else {
                    0
                }
            }
        }
    }
}

/// Dirichlet data `c + b·θ + q φ_{2,1}` on the unit sphere.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundarySpec {
    pub constant: f64,
    pub linear: [f64; 3],
    pub quadratic: f64,
}

impl Default for BoundarySpec {
    fn default() -> Self {
        Self {
            constant: 0.3,
            linear: [1.0, 0.0, 0.0],
            quadratic: 0.5,
        }
    }
}

impl BoundarySpec {
    pub fn sample(&self, basis: &HarmonicBasis) -> Result<SphereSamples> {
        let rule = basis.rule();
        let n = basis.dimension();
        if self.quadratic != 0.0 && basis.max_degree() < 2 {
            return Err(Error::InvalidParameter("quadratic boundary term needs harmonic degree >= 2".into()));
        }
        let mut vals: Vec<f64> = (0..rule.len())
            .map(|q| {
                let t = rule.node(q);
                self.constant + (0..n).map(|i| self.linear[i] * t[i]).sum::<f64>()
            })
            .collect();
        if self.quadratic != 0.0 {
            let phi = basis.mode_values(basis.degree_offset(2));
            for (v, p) in vals.iter_mut().zip(phi) {
                *v += self.quadratic * p;
            }
        }
        SphereSamples::scalar(Arc::clone(rule), vals)
    }
}

#[derive(Clone, Debug)]
pub struct ScenarioSpec {
    pub n: usize,
    pub field: FieldSpec,
    /// Ellipticity margin: profiles must keep `g > −1 + eps`.
    pub eps: f64,
    pub per_octave: usize,
    /// Octaves below `r = 1`; `None` picks the finite-energy default.
    pub depth: Option<usize>,
    pub top: usize,
    pub degree: usize,
    pub boundary: BoundarySpec,
    pub cutoff: Cutoff,
    pub ratio: RatioOptions,
    pub fixed_point: FixedPointOptions,
    /// Deepest dyadic level of the oracle comparison.
    pub compare_depth: i64,
    pub equivalence_tol: f64,
    pub weak_tol: f64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            n: 2,
            field: FieldSpec::LogPower { amp: 0.5, s: 0.75 },
            eps: 1e-3,
            per_octave: 32,
            depth: None,
            top: 2,
            degree: 8,
            boundary: BoundarySpec::default(),
            cutoff: Cutoff::default(),
            ratio: RatioOptions::default(),
            fixed_point: FixedPointOptions::default(),
            compare_depth: 10,
            equivalence_tol: 1e-4,
            weak_tol: 1e-6,
        }
    }
}

/// Shared pieces of a scenario.
pub struct Setup {
    pub field: CoefficientField,
    pub grid: RadialGrid,
    pub rule: Arc<SphereRule>,
    pub basis: Arc<HarmonicBasis>,
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n != 2 && self.n != 3 {
            return Err(Error::UnsupportedDimension(self.n));
        }
        if !(4..=256).contains(&self.per_octave) {
            return Err(Error::InvalidParameter(format!("per_octave = {} outside 4..=256", self.per_octave)));
        }
        if let Some(d) = self.depth {
            if !(2..=60).contains(&d) {
                return Err(Error::InvalidParameter(format!("depth = {d} octaves outside 2..=60")));
            }
        }
        if !(1..=6).contains(&self.top) {
            return Err(Error::InvalidParameter(format!("top = {} octaves outside 1..=6", self.top)));
        }
        if !(1..=16).contains(&self.degree) {
            return Err(Error::InvalidParameter(format!("harmonic degree {} outside 1..=16", self.degree)));
        }
        if !(self.eps > 0.0 && self.eps < 1.0) {
            return Err(Error::InvalidParameter(format!("eps = {} outside (0, 1)", self.eps)));
        }
        if let FieldSpec::LogPower { s, .. } = self.field {
            if !(s > 0.0) {
                return Err(Error::InvalidParameter(format!("log-power exponent s = {s} must be positive")));
            }
        }
        if self.ratio.j_min > self.ratio.j_max || self.ratio.bound < 1.0 {
            return Err(Error::InvalidParameter("ratio window or bound is empty".into()));
        }
        Cutoff::new(self.cutoff.inner, self.cutoff.outer)?;
        Ok(())
    }

    pub fn depth_octaves(&self) -> usize {
        self.depth.unwrap_or_else(|| default_depth(self.n).max(self.ratio.j_max as usize + 2))
    }

    pub fn setup(&self) -> Result<Setup> {
        self.validate()?;
        let field = self.field.build(self.n, self.eps)?;
        let grid = standard_grid(self.per_octave, self.depth_octaves(), self.top, &self.cutoff)?;
        let rule = build_sphere_rule(self.n, self.degree)?;
        let basis = Arc::new(HarmonicBasis::new(Arc::clone(&rule), self.degree)?);
        Ok(Setup { field, grid, rule, basis })
    }

    /// Square-Dini classification of the field's modulus, evaluated down to
    /// the bottom of the grid.
    pub fn square_dini(&self, field: &CoefficientField) -> Result<SquareDiniReport> {
        square_dini_integral(field.modulus(), 2f64.powi(-(self.depth_octaves() as i32)))
    }
}

/// `(r, μ[−R(r)], E(r))` for `r <= 1`.
#[derive(Clone, Debug)]
pub struct EstimateTable {
    pub r: Vec<f64>,
    pub mu: Vec<f64>,
    pub e: Vec<f64>,
}

pub fn estimate_table(spec: &ScenarioSpec) -> Result<EstimateTable> {
    let s = spec.setup()?;
    let ec = estimator_curve(&ReducedCurve::compute(&s.field, &s.grid, &s.rule)?);
    let one = s.grid.index_of(1.0).expect("standard grids contain r = 1");
    let e = ec.values();
    Ok(EstimateTable {
        r: (0..=one).map(|j| s.grid.radius(j)).collect(),
        mu: ec.mu()[..=one].to_vec(),
        e: e[..=one].to_vec(),
    })
}

#[derive(Clone, Debug)]
pub struct VerifyOutcome {
    pub square_dini: SquareDiniReport,
    pub u_norm: f64,
    pub oracle_residual: f64,
    pub truncation: f64,
    /// Ratio for the constructed solution.
    pub ratio: RatioReport,
    /// Same ratio for the direct solution.
    pub oracle_ratio: RatioReport,
    /// `M₂(∇u)` moves in the direction of `E` over the gated levels.
    pub trend_ok: bool,
    pub rhs_ratio: f64,
    pub f0_defect: f64,
    pub fixed_point: FixedPointReport,
    /// `‖ξ‖_Y / ‖u‖`.
    pub xi_constant: f64,
    pub equivalence: EquivalenceReport,
    pub weak: WeakResidual,
    pub bounds: ComponentBounds,
    pub passed: bool,
    pub estimator: EstimatorCurve,
}

impl VerifyOutcome {
    /// Failed gates by name.
    pub fn failures(&self, spec: &ScenarioSpec) -> Vec<&'static str> {
        let mut out = Vec::new();
        if !self.ratio.passed {
            out.push("ratio");
        }
        if !self.trend_ok {
            out.push("gradient trend");
        }
        if self.equivalence.max_relative >= spec.equivalence_tol {
            out.push("oracle equivalence");
        }
        if self.weak.max() >= spec.weak_tol {
            out.push("weak residual");
        }
        out
    }
}

/// Direct solution, localization, fixed point, assembly and all verdicts.
/// Fields whose modulus is not square-Dini are refused.
pub fn run_verify(spec: &ScenarioSpec) -> Result<VerifyOutcome> {
    let s = spec.setup()?;
    let square_dini = spec.square_dini(&s.field)?;
    if !square_dini.convergent && spec.field != FieldSpec::Identity {
        return Err(Error::NotSquareDini(format!(
            "∫ω²(r)/r dr diverges for {:?} (dyadic block ratio {:.4})",
            spec.field, square_dini.block_ratio
        )));
    }
    let boundary = spec.boundary.sample(&s.basis)?;
    let oracle = direct_solve_oracle(&s.field, &boundary, &s.grid, &s.basis)?;
    let u_norm = ball_l2_norm(&oracle.u)?;
    let ec = estimator_curve(&ReducedCurve::compute(&s.field, &s.grid, &s.rule)?);

    let rhs = localize_rhs(&oracle.u, &s.field, &spec.cutoff)?;
    let sol = fixed_point_solve(&s.field, &rhs, &spec.fixed_point)?;
    let u_tilde = assemble(&sol.decomposition)?;

    let ratio = theorem1_check(&gradient_profile(&u_tilde)?, &ec, u_norm, &spec.ratio);
    let oracle_ratio = theorem1_check(&gradient_profile(&oracle.u)?, &ec, u_norm, &spec.ratio);
    let trend_ok = match spec.field.trend() {
        0 => true,
        t => {
            let g: Vec<f64> = {
                let mut rows: Vec<_> = ratio.gated().collect();
                rows.sort_by_key(|r| r.j);
                rows.iter().map(|r| r.m2_grad).collect()
            };
            g.windows(2).all(|w| if t > 0 { w[1] > w[0] } else { w[1] < w[0] })
        }
    };
    let equivalence = oracle_equivalence(&u_tilde, &oracle.u, &spec.cutoff, spec.compare_depth)?;
    let weak = weak_residual(&u_tilde, &s.field, &rhs)?;
    let bounds = component_bounds(&sol, &s.field, u_norm, spec.cutoff.inner)?;
    let xi_constant = sol.report.xi_norm / u_norm;
    let mut out = VerifyOutcome {
        square_dini,
        u_norm,
        oracle_residual: oracle.residual,
        truncation: oracle.truncation,
        ratio,
        oracle_ratio,
        trend_ok,
        rhs_ratio: rhs.norm_ratio(u_norm),
        f0_defect: rhs.f0_integral_defect(),
        fixed_point: sol.report,
        xi_constant,
        equivalence,
        weak,
        bounds,
        passed: false,
        estimator: ec,
    };
    out.passed = out.failures(spec).is_empty();
    Ok(out)
}
