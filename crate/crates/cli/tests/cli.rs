use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rieszdual_cli::run::FamilyReport;
use rieszdual_cli::{verify_dir, RunReport};

const INDICATOR: &str = r#"
seed = 5
[window]
dim = 1
radius = 8
[grid]
spacing = 0.03125
[[family]]
name = "indicator"
family = "bspline-indicator"
claimed_s = 5.0
"#;

const BUMPS: &str = r#"
seed = 9
[window]
dim = 1
radius = 8
[grid]
spacing = 0.03125
[tolerances]
inversion = 1e-6
lattice_sum = 1e-12
biorthogonality = 1e-6
quadrature = 1e-6
scaling = 1e-10
interlacing = 1e-10
[[family]]
name = "s5"
family = "polynomial-bump"
s = 5.0
[[family]]
name = "s6"
family = "polynomial-bump"
s = 6.0
[[family]]
name = "indicator"
family = "bspline-indicator"
claimed_s = 5.0
"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rieszdual"))
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("run.toml");
    fs::write(&path, text).unwrap();
    path
}

fn run(sub: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    bin()
        .arg(sub)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .unwrap()
}

fn report(out: &Path) -> RunReport {
    serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap()
}

fn family<'a>(r: &'a RunReport, name: &str) -> &'a FamilyReport {
    r.families.iter().find(|f| f.name == name).unwrap()
}

#[test]
fn indicator_is_orthonormal() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), INDICATOR);
    let out = tmp.path().join("out");
    let o = run("all", &cfg, &out, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(&out);
    let f = family(&r, "indicator");
    assert_eq!(f.a_est, Some(1.0));
    assert_eq!(f.b_est, Some(1.0));
    assert!(f.biorthogonality.unwrap() < 1e-12);
    assert_eq!(r.hard_failures(), 0);
}

#[test]
fn boundary_decay_exits_with_hypothesis_code() {
    let tmp = tempfile::tempdir().unwrap();
    let text = INDICATOR.replace("claimed_s = 5.0", "claimed_s = 3.0");
    let cfg = write_config(tmp.path(), &text);
    let o = run("report", &cfg, &tmp.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(3));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("hypothesis s > d+t violated"), "{err}");
}

#[test]
fn config_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &INDICATOR.replace("bspline-indicator", "wavelet"));
    assert_eq!(run("basis", &cfg, &tmp.path().join("out"), &[]).status.code(), Some(2));
    let missing = tmp.path().join("absent.toml");
    assert_eq!(run("basis", &missing, &tmp.path().join("out"), &[]).status.code(), Some(2));
}

#[test]
fn verify_on_empty_directory_exits_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let o = bin().arg("verify").arg("--out").arg(tmp.path()).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn earlier_stages_write_their_artifacts_only() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), INDICATOR);
    let out = tmp.path().join("out");
    assert!(run("gramian", &cfg, &out, &[]).status.success());
    let fam = out.join("indicator");
    assert!(fam.join("members.csv").exists());
    assert!(fam.join("gramian.csv").exists());
    assert!(fam.join("eigens.csv").exists());
    assert!(!fam.join("coeffs.csv").exists());
    assert!(!out.join("report.json").exists());
}

#[test]
fn runs_are_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), BUMPS);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert!(run("bounds", &cfg, &a, &["--seed", "42"]).status.success());
    assert!(run("bounds", &cfg, &b, &["--seed", "42"]).status.success());
    let mut compared = 0;
    for fam in ["s5", "s6", "indicator"] {
        for entry in fs::read_dir(a.join(fam)).unwrap() {
            let name = entry.unwrap().file_name();
            let x = fs::read(a.join(fam).join(&name)).unwrap();
            let y = fs::read(b.join(fam).join(&name)).unwrap();
            assert_eq!(x, y, "{fam}/{name:?}");
            compared += 1;
        }
    }
    assert_eq!(fs::read(a.join("constants.csv")).unwrap(), fs::read(b.join("constants.csv")).unwrap());
    assert!(compared > 10);
}

#[test]
fn suite_report_has_calibrated_constants() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), BUMPS);
    let out = tmp.path().join("out");
    let o = run("report", &cfg, &out, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(&out);
    assert!(r.e_emp.unwrap() > 0.0);
    for f in &r.families {
        assert!(f.d_theory.unwrap() >= f.d_emp.unwrap(), "{}", f.name);
    }
    let csv = fs::read_to_string(out.join("constants.csv")).unwrap();
    assert!(csv.starts_with("d,lemma,u,constant,binding,grid"));
    assert!(csv.contains("dimension_constant_E"));
}

#[test]
fn verify_accepts_a_run_and_rejects_corruption() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), BUMPS);
    let out = tmp.path().join("out");
    assert!(run("report", &cfg, &out, &[]).status.success());
    assert_eq!(verify_dir(&out).unwrap().failures(), 0);
    let o = bin().arg("verify").arg("--out").arg(&out).output().unwrap();
    assert!(o.status.success());

    // Perturb one symmetric pair of coefficients so the file stays symmetric.
    let path = out.join("s5").join("coeffs.csv");
    let text = fs::read_to_string(&path).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    let n = ((lines.len() - 1) as f64).sqrt() as usize;
    let (k, j) = (n / 2, n / 2 + 1);
    for (a, b) in [(k, j), (j, k)] {
        let line = &mut lines[1 + a * n + b];
        let v: f64 = line.split_whitespace().nth(2).unwrap().parse().unwrap();
        *line = format!("{a} {b} {:e}", v + 1e-3);
    }
    fs::write(&path, lines.join("\n") + "\n").unwrap();
    assert!(verify_dir(&out).unwrap().failures() > 0);
    let o = bin().arg("verify").arg("--out").arg(&out).output().unwrap();
    assert_eq!(o.status.code(), Some(5));
}

#[test]
fn shipped_configs_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    let mut seen = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let cfg = rieszdual_cli::RunConfig::load(&path).unwrap();
        let specs = cfg.validate().unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert!(!specs.is_empty());
        seen += 1;
    }
    assert!(seen >= 4);
}
