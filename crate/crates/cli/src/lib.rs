//! Command implementations behind the `sqdini` binary.

pub mod config;

use config::{ConfigError, ScenarioConfig};
use serde::Serialize;
use sqdini::coeffs::GsProfile;
use sqdini::error::Error as CoreError;
use sqdini::pipeline::gs_sharpness_check;
use sqdini::scenario::{estimate_table, run_verify, FieldSpec};
use sqdini::suites::{jobs, run_jobs};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Core(#[from] CoreError),
    #[error("cannot write {path}: {source}")]
    Output { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::Output { .. } => EXIT_CONFIG,
            Self::Core(e) => match e {
                CoreError::UnsupportedDimension(_)
                | CoreError::InvalidParameter(_)
                | CoreError::Ellipticity(_)
                | CoreError::NonMonotoneModulus(_)
                | CoreError::Cutoff(_)
                | CoreError::NotSquareDini(_) => EXIT_CONFIG,
                _ => EXIT_NUMERICAL,
            },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Estimate,
    Verify,
    Sharpness,
    Props,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Self::Estimate => "estimate",
            Self::Verify => "verify",
            Self::Sharpness => "sharpness",
            Self::Props => "props",
        }
    }
}

/// Command-line options shared by every command.
#[derive(Clone, Debug, Default)]
pub struct Options {
    pub config: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
}

/// What a command produced.
#[derive(Debug)]
pub struct Outcome {
    pub passed: bool,
    /// Human-readable report, one finding per line.
    pub report: String,
    pub files: Vec<PathBuf>,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        if self.passed {
            EXIT_PASS
        } else {
            EXIT_FAIL
        }
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    config: String,
    seed: u64,
    threads: usize,
    n: usize,
    field: String,
    verdict: &'a str,
    outputs: Vec<String>,
    metrics: BTreeMap<String, f64>,
}

/// Fixed 17-significant-digit decimal format used in every CSV.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

struct Run<'a> {
    cmd: Command,
    opts: &'a Options,
    cfg: ScenarioConfig,
    dir: PathBuf,
    files: Vec<PathBuf>,
    metrics: BTreeMap<String, f64>,
}

impl Run<'_> {
    fn write(&mut self, name: &str, body: &str) -> Result<(), CliError> {
        std::fs::create_dir_all(&self.dir).map_err(|source| CliError::Output {
            path: self.dir.clone(),
            source,
        })?;
        let path = self.dir.join(name);
        std::fs::write(&path, body).map_err(|source| CliError::Output {
            path: path.clone(),
            source,
        })?;
        self.files.push(path);
        Ok(())
    }

    fn seed(&self) -> u64 {
        self.opts.seed.unwrap_or_else(|| self.cfg.seed())
    }

    fn threads(&self) -> usize {
        self.opts
            .threads
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
            .max(1)
    }

    fn finish(mut self, passed: bool, report: String) -> Result<Outcome, CliError> {
        let manifest = Manifest {
            command: self.cmd.name(),
            version: env!("CARGO_PKG_VERSION"),
            config: self.opts.config.as_ref().map_or("(defaults)".into(), |p| p.display().to_string()),
            seed: self.seed(),
            threads: self.threads(),
            n: self.cfg.dimension(),
            field: format!("{:?}", self.cfg.field_spec()),
            verdict: if passed { "PASS" } else { "FAIL" },
            outputs: self
                .files
                .iter()
                .filter_map(|p| p.file_name().map(|f| f.to_string_lossy().into_owned()))
                .collect(),
            metrics: std::mem::take(&mut self.metrics),
        };
        let text = toml::to_string(&manifest).expect("manifest serializes");
        self.write(&format!("{}_manifest.toml", self.cmd.name()), &text)?;
        Ok(Outcome {
            passed,
            report,
            files: self.files,
        })
    }
}

/// Loads the configuration and runs one command.  Outputs go to `--out`,
/// then `output.dir` of the config, then the current directory.
pub fn run(cmd: Command, opts: &Options) -> Result<Outcome, CliError> {
    let cfg = match &opts.config {
        Some(p) => ScenarioConfig::load(p)?,
        None => ScenarioConfig::default(),
    };
    cfg.validate()?;
    let dir = opts
        .out
        .clone()
        .or_else(|| cfg.output.dir.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    let run = Run {
        cmd,
        opts,
        cfg,
        dir,
        files: Vec::new(),
        metrics: BTreeMap::new(),
    };
    match cmd {
        Command::Estimate => estimate(run),
        Command::Verify => verify(run),
        Command::Sharpness => sharpness(run),
        Command::Props => props(run),
    }
}

fn estimate(mut run: Run) -> Result<Outcome, CliError> {
    let spec = run.cfg.scenario()?;
    let t = estimate_table(&spec)?;
    let mut csv = String::from("r,mu,E\n");
    for i in 0..t.r.len() {
        let _ = writeln!(csv, "{},{},{}", fmt_f64(t.r[i]), fmt_f64(t.mu[i]), fmt_f64(t.e[i]));
    }
    run.write("estimate.csv", &csv)?;
    let (e_min, e_max) = t.e.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &e| (a.min(e), b.max(e)));
    run.metrics.insert("r_min".into(), t.r[0]);
    run.metrics.insert("E_at_r_min".into(), t.e[0]);
    let report = format!(
        "estimate: {} radii in [{:.3e}, 1], E ranges over [{:.6e}, {:.6e}], E(r_min) = {:.6e}\n",
        t.r.len(),
        t.r[0],
        e_min,
        e_max,
        t.e[0]
    );
    run.finish(true, report)
}

fn verify(mut run: Run) -> Result<Outcome, CliError> {
    let spec = run.cfg.scenario()?;
    let out = run_verify(&spec)?;
    let mut csv = Vec::new();
    out.ratio.write_csv(&mut csv).expect("writing to memory");
    run.write("ratio.csv", &String::from_utf8(csv).expect("ascii"))?;
    let mut csv = Vec::new();
    out.oracle_ratio.write_csv(&mut csv).expect("writing to memory");
    run.write("ratio_direct.csv", &String::from_utf8(csv).expect("ascii"))?;

    let fp = &out.fixed_point;
    let m = &mut run.metrics;
    m.insert("ratio_spread".into(), out.ratio.spread);
    m.insert("ratio_bound".into(), out.ratio.bound);
    m.insert("direct_ratio_spread".into(), out.oracle_ratio.spread);
    m.insert("gradient_trend".into(), out.ratio.gradient_trend);
    m.insert("u_norm".into(), out.u_norm);
    m.insert("square_dini_block_ratio".into(), out.square_dini.block_ratio);
    m.insert("fixed_point_iterations".into(), fp.iterations as f64);
    m.insert("fixed_point_contraction".into(), fp.contraction);
    m.insert("fixed_point_increment".into(), fp.increments.last().copied().unwrap_or(f64::NAN));
    m.insert("xi_constant".into(), out.xi_constant);
    m.insert("oracle_equivalence".into(), out.equivalence.max_relative);
    m.insert("weak_residual".into(), out.weak.max());
    m.insert("oracle_residual".into(), out.oracle_residual);

    let failures = out.failures(&spec);
    let mut report = String::new();
    let _ = writeln!(
        report,
        "field {:?}, n = {}: ratio spread {:.4} (bound {}), M2 trend {:.4}, blow-up {}",
        spec.field, spec.n, out.ratio.spread, out.ratio.bound, out.ratio.gradient_trend, out.ratio.blowup
    );
    let _ = writeln!(
        report,
        "remainder: {} iterations, contraction {:.3e}, last increment {:.3e}, |xi|_Y/|u| = {:.4e}",
        fp.iterations,
        fp.contraction,
        fp.increments.last().copied().unwrap_or(f64::NAN),
        out.xi_constant
    );
    let _ = writeln!(
        report,
        "direct vs constructive {:.3e} (tol {:.1e}), weak residual {:.3e} (tol {:.1e})",
        out.equivalence.max_relative,
        spec.equivalence_tol,
        out.weak.max(),
        spec.weak_tol
    );
    if failures.is_empty() {
        report.push_str("verdict: PASS\n");
    } else {
        let _ = writeln!(report, "verdict: FAIL ({})", failures.join(", "));
    }
    run.finish(out.passed, report)
}

fn sharpness(mut run: Run) -> Result<Outcome, CliError> {
    let opts = run.cfg.sharpness()?;
    let n = run.cfg.dimension();
    let profile = match run.cfg.field_spec() {
        FieldSpec::Identity => GsProfile::Constant(0.0),
        f => f.profile().expect("non-identity families carry a profile"),
    };
    let rep = gs_sharpness_check(n, profile, &opts)?;
    let mut csv = String::from("r,v,E,ratio\n");
    for i in 0..rep.radii.len() {
        let _ = writeln!(
            csv,
            "{},{},{},{}",
            fmt_f64(rep.radii[i]),
            fmt_f64(rep.v[i]),
            fmt_f64(rep.e[i]),
            fmt_f64(rep.ratio[i])
        );
    }
    run.write("sharpness.csv", &csv)?;
    run.metrics.insert("drift".into(), rep.drift);
    run.metrics.insert("tolerance".into(), rep.tol);
    run.metrics.insert("total_variation".into(), rep.total_variation);
    let report = format!(
        "{}: v/E drift {:.4e} on [2^-{}, 2^-{}] (tolerance {:.2})\n",
        if rep.passed { "PASS" } else { "FAIL" },
        rep.drift,
        opts.j_hi,
        opts.j_lo,
        rep.tol
    );
    run.finish(rep.passed, report)
}

fn props(mut run: Run) -> Result<Outcome, CliError> {
    let tol = run.cfg.suite_tolerances();
    let results = run_jobs(&jobs(run.seed(), &tol), run.threads());
    let mut csv = String::from("module,suite,value,tolerance,verdict\n");
    let mut report = String::new();
    for r in &results {
        let _ = writeln!(
            csv,
            "{},{},{},{},{}",
            r.module,
            r.name,
            fmt_f64(r.value),
            fmt_f64(r.tolerance),
            if r.passed() { "PASS" } else { "FAIL" }
        );
        report.push_str(&r.line());
        report.push('\n');
    }
    run.write("props.csv", &csv)?;
    let failed: Vec<String> = results
        .iter()
        .filter(|r| !r.passed())
        .map(|r| format!("{}: {}", r.module, r.name))
        .collect();
    run.metrics.insert("suites".into(), results.len() as f64);
    run.metrics.insert("failed".into(), failed.len() as f64);
    if failed.is_empty() {
        let _ = writeln!(report, "all {} suites passed", results.len());
    } else {
        let _ = writeln!(report, "{} of {} suites failed:", failed.len(), results.len());
        for f in &failed {
            let _ = writeln!(report, "  {f}");
        }
    }
    run.finish(failed.is_empty(), report)
}
