use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use nalgebra::DMatrix;
use rieszdual::gramian::{eigen_extremes, RieszBounds};
use rieszdual::{DecayMatrix, LatticeWindow};
use serde::Serialize;

use crate::invariants::{Invariant, Recorder};
use crate::run::{dual_file_name, family_dir, stored_interlacing, RunReport, REPORT_FILE};
use crate::CliError;

/// Outcome of re-checking a run directory.
#[derive(Debug, Clone, Serialize)]
pub struct VerifySummary {
    pub checks: Vec<Invariant>,
}

impl VerifySummary {
    pub fn failures(&self) -> usize {
        self.checks.iter().filter(|c| c.failed_hard()).count()
    }
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::Config(format!("missing artifact {}: {e}", path.display())))
}

fn parse_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("cannot parse {}: {e}", path.display()))
}

fn read_matrix(path: &Path) -> Result<DecayMatrix, CliError> {
    DecayMatrix::read_text(open(path)?).map_err(|e| parse_err(path, e))
}

/// Values column of a sampled-function CSV.
fn read_samples(path: &Path) -> Result<Vec<f64>, CliError> {
    let mut values = Vec::new();
    for line in open(path)?.lines().skip(1) {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let v = line
            .rsplit(',')
            .next()
            .and_then(|s| s.trim().parse::<f64>().ok())
            .ok_or_else(|| parse_err(path, format!("bad row `{line}`")))?;
        values.push(v);
    }
    Ok(values)
}

/// Re-checks the duals-stage claims of a finished run from its artifacts,
/// without assembling or inverting anything.
pub fn verify_dir(dir: &Path) -> Result<VerifySummary, CliError> {
    let report_path = dir.join(REPORT_FILE);
    let report: RunReport =
        serde_json::from_reader(open(&report_path)?).map_err(|e| parse_err(&report_path, e))?;
    let tol = report.config.tolerances.biorthogonality;
    let interlacing_tol = report.config.tolerances.interlacing;
    let dim = report.config.window.dim;
    let weight = report.settings.grid_spacing.powi(dim as i32);
    let mut checks = Vec::new();

    for fam in &report.families {
        let fdir = family_dir(dir, &fam.name);
        let mut r = Recorder::new(&mut checks, "verify", fam.name.clone());
        let m = read_matrix(&fdir.join("gramian.csv"))?;
        let c = read_matrix(&fdir.join("coeffs.csv"))?;
        let eig_path = fdir.join("eigens.csv");
        let eig = RieszBounds::read_csv(open(&eig_path)?).map_err(|e| parse_err(&eig_path, e))?;
        let conv = fam
            .convergence
            .as_ref()
            .ok_or_else(|| CliError::Config(format!("report lacks the duals stage for `{}`", fam.name)))?;
        if m.window() != c.window() {
            return Err(CliError::Config(format!("`{}`: Gramian and coefficients differ in window", fam.name)));
        }

        r.holds("gramian_symmetric", true, m.is_symmetric(), "stored Gramian");
        r.holds("coefficients_symmetric", true, c.is_symmetric(), "stored coefficients");

        let a = eig.a_est;
        let reported_a = fam.a_est.unwrap_or(f64::NAN);
        r.at_most("riesz_bound_consistent", true, (a - reported_a).abs(), 1e-12 * a.abs());
        r.at_most("interlacing", true, eig.interlacing_violation(), interlacing_tol);
        let recomputed = stored_interlacing(&m, &conv.radii)?;
        r.at_most("interlacing_from_gramian", true, recomputed, interlacing_tol);

        let core = LatticeWindow::new(dim, conv.core_radius).map_err(|e| CliError::Config(e.to_string()))?;
        let w = *m.window();
        let rows: Vec<usize> = core.iter().map(|k| w.position(&k).expect("core inside window")).collect();
        let product = c.entries() * m.entries();
        let mut residual = 0.0_f64;
        for &a_pos in &rows {
            for b in 0..w.len() {
                let target = if a_pos == b { 1.0 } else { 0.0 };
                residual = residual.max((product[(a_pos, b)] - target).abs());
            }
        }
        r.at_most("coefficients_invert_gramian", true, residual, tol);

        let n = rows.len();
        let block = DMatrix::from_fn(n, n, |i, j| c.entries()[(rows[i], rows[j])]);
        let bound = (1.0 + 1e-6) / a;
        r.at_most("inverse_norm_bound", true, eigen_extremes(&block).1, bound);

        let duals = core
            .iter()
            .map(|k| read_samples(&fdir.join(dual_file_name(&k))))
            .collect::<Result<Vec<_>, _>>()?;
        let max_norm = duals
            .iter()
            .map(|g| weight * g.iter().map(|v| v * v).sum::<f64>())
            .fold(0.0, f64::max);
        r.at_most("dual_norm_bound", true, max_norm, bound);
        let mut gram = 0.0_f64;
        for (i, gi) in duals.iter().enumerate() {
            for (j, gj) in duals.iter().enumerate() {
                if gi.len() != gj.len() {
                    return Err(CliError::Config(format!("`{}`: dual files differ in length", fam.name)));
                }
                let ip = weight * gi.iter().zip(gj).map(|(x, y)| x * y).sum::<f64>();
                gram = gram.max((ip - block[(i, j)]).abs());
            }
        }
        r.at_most("gram_of_duals", true, gram, tol);
    }
    Ok(VerifySummary { checks })
}
