use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use tempfile::TempDir;

fn sqdini(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sqdini"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

fn column(csv: &Path, name: &str) -> Vec<f64> {
    let text = std::fs::read_to_string(csv).unwrap();
    let mut lines = text.lines();
    let idx = lines.next().unwrap().split(',').position(|h| h == name).expect("column");
    lines.map(|l| l.split(',').nth(idx).unwrap().parse().unwrap()).collect()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn identity_estimate_is_one() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "id.toml", "[field]\nfamily = \"identity\"\n");
    let o = sqdini(tmp.path(), &["estimate", "--config", cfg.to_str().unwrap(), "--out", "out"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let e = column(&tmp.path().join("out/estimate.csv"), "E");
    assert!(e.len() > 100);
    assert!(e.iter().all(|&x| (x - 1.0).abs() < 1e-12), "E column must be 1");
    assert!(tmp.path().join("out/estimate_manifest.toml").exists());
}

#[test]
fn growth_and_decay_estimates_follow_closed_form() {
    let tmp = TempDir::new().unwrap();
    for (amp, n) in [(0.5, 2usize), (-0.5, 2), (0.5, 3)] {
        let cfg = write_config(
            tmp.path(),
            "gs.toml",
            &format!("n = {n}\n[field]\namp = {amp}\ns = 0.75\n[boundary]\nlinear = {:?}\n", vec![1.0; n]),
        );
        let o = sqdini(tmp.path(), &["estimate", "--config", cfg.to_str().unwrap(), "--out", "gs"]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        let r = column(&tmp.path().join("gs/estimate.csv"), "r");
        let e = column(&tmp.path().join("gs/estimate.csv"), "E");
        // log E(r) = ((n−1)/n) amp ((log e/r)^{1−s} − 1)/(1−s)
        let nf = n as f64;
        for (ri, ei) in r.iter().zip(&e) {
            let exact = ((nf - 1.0) / nf * amp * ((1.0 - ri.ln()).powf(0.25) - 1.0) / 0.25).exp();
            assert!((ei / exact - 1.0).abs() < 1e-6, "r = {ri}: {ei} vs {exact}");
        }
        let monotone = e.windows(2).all(|w| if amp > 0.0 { w[0] > w[1] } else { w[0] < w[1] });
        assert!(monotone, "E must move monotonically towards the origin");
    }
}

#[test]
fn csv_output_is_deterministic() {
    let tmp = TempDir::new().unwrap();
    for d in ["a", "b"] {
        let o = sqdini(tmp.path(), &["estimate", "--out", d]);
        assert_eq!(o.status.code(), Some(0));
    }
    let a = std::fs::read(tmp.path().join("a/estimate.csv")).unwrap();
    let b = std::fs::read(tmp.path().join("b/estimate.csv")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn unknown_keys_and_bad_ranges_exit_with_config_code() {
    let tmp = TempDir::new().unwrap();
    for (name, body) in [
        ("unknown.toml", "foo = 1\n"),
        ("nested.toml", "[grid]\nper_octave = 32\nspacing = 2\n"),
        ("dim.toml", "n = 4\n"),
        ("eps.toml", "[field]\neps = 2.0\n"),
        ("family.toml", "[field]\nfamily = \"identity\"\namp = 0.5\n"),
        ("syntax.toml", "n = \n"),
    ] {
        let cfg = write_config(tmp.path(), name, body);
        let o = sqdini(tmp.path(), &["estimate", "--config", cfg.to_str().unwrap(), "--out", "x"]);
        assert_eq!(o.status.code(), Some(2), "{name}: {}", stderr(&o));
        assert!(stderr(&o).starts_with("error:"), "{name}");
    }
    let o = sqdini(tmp.path(), &["estimate", "--config", "missing.toml"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn non_square_dini_profile_is_refused() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "s04.toml", "[field]\namp = 0.5\ns = 0.4\n");
    let o = sqdini(tmp.path(), &["verify", "--config", cfg.to_str().unwrap(), "--out", "v"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("not square-Dini"), "{}", stderr(&o));
    assert!(!tmp.path().join("v/ratio.csv").exists());
}

#[test]
fn identity_verify_passes_at_flat_level() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "x1.toml",
        "[field]\nfamily = \"identity\"\n[boundary]\nconstant = 0.0\nlinear = [1.0, 0.0]\nquadratic = 0.0\n",
    );
    let o = sqdini(tmp.path(), &["verify", "--config", cfg.to_str().unwrap(), "--out", "v"]);
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
    assert!(stdout(&o).contains("verdict: PASS"));
    // u = x₁: M₂(∇u) = 1 and ‖u‖_{L²(B₁)} = √π/2.
    let level = 2.0 / std::f64::consts::PI.sqrt();
    let text = std::fs::read_to_string(tmp.path().join("v/ratio.csv")).unwrap();
    let gated: Vec<f64> = text
        .lines()
        .filter(|l| l.ends_with(",PASS"))
        .map(|l| l.split(',').nth(4).unwrap().parse().unwrap())
        .collect();
    assert_eq!(gated.len(), 9);
    for x in gated {
        assert!((x / level - 1.0).abs() < 1e-6, "{x}");
    }
    let manifest = std::fs::read_to_string(tmp.path().join("v/verify_manifest.toml")).unwrap();
    assert!(manifest.contains("verdict = \"PASS\""));
}

#[test]
fn growth_scenario_verify_passes() {
    let tmp = TempDir::new().unwrap();
    let o = sqdini(tmp.path(), &["verify", "--out", "v"]);
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
    let rows = std::fs::read_to_string(tmp.path().join("v/ratio.csv")).unwrap();
    assert_eq!(rows.lines().filter(|l| l.ends_with(",PASS")).count(), 9);
}

#[test]
fn contraction_failure_has_its_own_exit_code() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "big.toml", "[field]\namp = 4.0\n[grid]\nper_octave = 16\n");
    let o = sqdini(tmp.path(), &["verify", "--config", cfg.to_str().unwrap(), "--out", "v"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("contraction"));
}

#[test]
fn sharpness_of_zero_profile_is_exact() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "zero.toml", "[field]\nfamily = \"constant\"\ng = 0.0\n");
    let o = sqdini(tmp.path(), &["sharpness", "--config", cfg.to_str().unwrap(), "--out", "s"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for (v, e) in column(&tmp.path().join("s/sharpness.csv"), "v")
        .into_iter()
        .zip(column(&tmp.path().join("s/sharpness.csv"), "E"))
    {
        assert!((v - 1.0).abs() < 1e-8 && (e - 1.0).abs() < 1e-12, "v = {v}, E = {e}");
    }
}

#[test]
fn sharpness_of_growth_profiles_passes() {
    let tmp = TempDir::new().unwrap();
    for n in [2, 3] {
        let cfg = write_config(tmp.path(), "g.toml", &format!("n = {n}\n"));
        let o = sqdini(tmp.path(), &["sharpness", "--config", cfg.to_str().unwrap(), "--out", "s"]);
        assert_eq!(o.status.code(), Some(0), "n = {n}: {}{}", stdout(&o), stderr(&o));
        assert!(stdout(&o).starts_with("PASS"));
    }
}

#[test]
fn props_pass_by_default_and_failures_name_modules_when_tightened() {
    let tmp = TempDir::new().unwrap();
    let o = sqdini(tmp.path(), &["props", "--threads", "4", "--seed", "11", "--out", "p"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).contains("suites passed"));
    let manifest = std::fs::read_to_string(tmp.path().join("p/props_manifest.toml")).unwrap();
    assert!(manifest.contains("seed = 11"));

    let cfg = write_config(tmp.path(), "tight.toml", "[tolerances]\nsuite_scale = 1e-3\n");
    let o = sqdini(tmp.path(), &["props", "--config", cfg.to_str().unwrap(), "--threads", "4", "--out", "t"]);
    assert_eq!(o.status.code(), Some(1));
    let text = stdout(&o);
    assert!(text.contains("suites failed:"));
    for module in ["potential:", "pipeline:"] {
        assert!(text.contains(module), "{module} missing from\n{text}");
    }
    let csv = std::fs::read_to_string(tmp.path().join("t/props.csv")).unwrap();
    assert!(csv.lines().any(|l| l.ends_with(",FAIL")));
}
