//! Dual systems from finite-section inversion of the Gramian.
//!
//! The coefficients `c_kj = (M^{-1})_kj` come from the largest section; the
//! smaller sections only decide which central block has settled (the
//! stabilized core). Duals are synthesized as `g_k = sum_j c_kj f_j`.

use std::io::Write;

use nalgebra::{Cholesky, DMatrix};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{profile_over_grid, BasisSet, Samples, DECAY_WINDOW};
use crate::bounds::shell_tail_upper;
use crate::envelope::DecayMeasurement;
use crate::error::{Error, Result};
use crate::gramian::{offdiag_profile, DecayMatrix};
use crate::lattice::{max_norm, max_norm_int, Grid, LatticeWindow};

/// Central coefficient `c_00` at one section radius.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CentralEntry {
    pub radius: usize,
    pub value: f64,
    /// Change from the previous section, an a-posteriori estimate of the
    /// remaining error; `None` for the first section.
    pub estimate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub radii: Vec<usize>,
    pub tol: f64,
    pub core_radius: usize,
    /// Relative change of the core block between the two largest sections.
    pub core_change: f64,
    pub central: Vec<CentralEntry>,
}

/// Inverse-Gramian coefficients with their trust region.
#[derive(Debug, Clone)]
pub struct DualSystem {
    coeffs: DecayMatrix,
    report: ConvergenceReport,
}

fn invert_spd(m: &DecayMatrix) -> Result<DMatrix<f64>> {
    let chol = Cholesky::new(m.entries().clone()).ok_or(Error::SingularSection {
        radius: m.window().radius(),
    })?;
    let inv = chol.inverse();
    Ok((&inv + inv.transpose()) * 0.5)
}

fn central_value(window: &LatticeWindow, m: &DMatrix<f64>) -> f64 {
    let origin = vec![0i64; window.dim()];
    let p = window.position(&origin).expect("origin is in every window");
    m[(p, p)]
}

/// Inverts each section by Cholesky factorization and finds the largest
/// central block whose entries agree between the two largest sections to
/// relative tolerance `tol` (relative to the block's largest entry).
pub fn invert_section(sections: &[DecayMatrix], tol: f64) -> Result<DualSystem> {
    if sections.len() < 2 {
        return Err(Error::InvalidParameter(
            "finite-section inversion needs at least two nested sections".into(),
        ));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tolerance must be positive, got {tol}")));
    }
    if sections
        .windows(2)
        .any(|w| w[0].window().radius() >= w[1].window().radius() || w[0].window().dim() != w[1].window().dim())
    {
        return Err(Error::InvalidParameter(
            "section radii must be strictly increasing".into(),
        ));
    }
    let inverses = sections
        .par_iter()
        .map(invert_spd)
        .collect::<Result<Vec<_>>>()?;

    let mut central = Vec::with_capacity(sections.len());
    for (i, (sec, inv)) in sections.iter().zip(&inverses).enumerate() {
        let value = central_value(sec.window(), inv);
        let estimate = (i > 0).then(|| {
            let prev: &CentralEntry = &central[i - 1];
            (value - prev.value).abs() + 16.0 * f64::EPSILON * value.abs()
        });
        central.push(CentralEntry {
            radius: sec.window().radius(),
            value,
            estimate,
        });
    }

    let n = sections.len();
    let (small_w, big_w) = (sections[n - 2].window(), sections[n - 1].window());
    let (small, big) = (&inverses[n - 2], &inverses[n - 1]);
    let mut core = None;
    let mut change_at_zero = f64::INFINITY;
    for r in (0..=small_w.radius()).rev() {
        let ps = small_w.sub_positions(r);
        let pb = big_w.sub_positions(r);
        let mut diff = 0.0_f64;
        let mut scale = 0.0_f64;
        for (&sa, &ba) in ps.iter().zip(&pb) {
            for (&sb, &bb) in ps.iter().zip(&pb) {
                diff = diff.max((small[(sa, sb)] - big[(ba, bb)]).abs());
                scale = scale.max(big[(ba, bb)].abs());
            }
        }
        let change = if scale > 0.0 { diff / scale } else { diff };
        if change < tol {
            core = Some((r, change));
            break;
        }
        if r == 0 {
            change_at_zero = change;
        }
    }
    let (core_radius, core_change) = core.ok_or(Error::NonConvergence {
        change: change_at_zero,
        tol,
    })?;
    let coeffs = DecayMatrix::new(*big_w, inverses[n - 1].clone())?;
    Ok(DualSystem {
        coeffs,
        report: ConvergenceReport {
            radii: sections.iter().map(|s| s.window().radius()).collect(),
            tol,
            core_radius,
            core_change,
            central,
        },
    })
}

impl DualSystem {
    /// Coefficients of the largest section.
    pub fn coeffs(&self) -> &DecayMatrix {
        &self.coeffs
    }

    pub fn window(&self) -> &LatticeWindow {
        self.coeffs.window()
    }

    pub fn core_radius(&self) -> usize {
        self.report.core_radius
    }

    pub fn report(&self) -> &ConvergenceReport {
        &self.report
    }

    pub fn in_core(&self, k: &[i64]) -> bool {
        k.len() == self.window().dim() && max_norm_int(k) <= self.core_radius() as i64
    }

    /// Coefficient block on the stabilized core.
    pub fn core_block(&self) -> DecayMatrix {
        self.coeffs
            .section(self.core_radius())
            .expect("core lies inside the window")
    }

    pub fn core_indices(&self) -> Vec<Vec<i64>> {
        LatticeWindow::new(self.window().dim(), self.core_radius())
            .expect("positive dimension")
            .iter()
            .collect()
    }

    /// `max_j |c_kj| (1 + |k-j|)^u` over the window, the coefficient envelope of row `k`.
    pub fn coefficient_envelope(&self, k: &[i64], u: f64) -> Result<f64> {
        let w = self.window();
        let a = w
            .position(k)
            .ok_or_else(|| Error::IndexOutOfWindow(k.to_vec()))?;
        let mut diff = vec![0i64; w.dim()];
        Ok(w
            .iter()
            .enumerate()
            .map(|(b, j)| {
                for ((o, x), y) in diff.iter_mut().zip(k).zip(&j) {
                    *o = x - y;
                }
                self.coeffs.entries()[(a, b)].abs() * (1.0 + max_norm_int(&diff) as f64).powf(u)
            })
            .fold(0.0, f64::max))
    }

    /// Off-diagonal decay of the core coefficient block.
    pub fn core_decay(&self, u: f64) -> DecayMeasurement {
        offdiag_profile(&self.core_block(), u).finish()
    }

    /// Decay of the central row `|c_{0,j}|` over shells `r <= core radius`.
    pub fn central_row_decay(&self, u: f64) -> DecayMeasurement {
        let w = self.window();
        let origin = vec![0i64; w.dim()];
        let a = w.position(&origin).expect("origin is in every window");
        let mut prof = crate::envelope::ShellProfile::new(u);
        for (b, j) in w.iter().enumerate() {
            let r = max_norm_int(&j) as usize;
            if r <= self.core_radius() {
                prof.push(r as f64, self.coeffs.entries()[(a, b)]);
            }
        }
        prof.finish()
    }
}

/// Sampled dual function `g_k` on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledFunction {
    pub grid: Grid,
    pub center: Vec<i64>,
    pub values: Vec<f64>,
    /// Bound on `sup_x |sum_{j outside window} c_kj f_j(x)|` assuming the
    /// measured coefficient envelope at exponent `d+1` persists.
    pub tail_estimate: f64,
}

impl SampledFunction {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        crate::basis::write_samples_csv(out, &self.grid, &self.values)
    }

    /// `h^d sum_x |g(x)|^2`.
    pub fn norm_squared(&self) -> f64 {
        self.grid.weight() * self.values.iter().map(|v| v * v).sum::<f64>()
    }
}

fn check_pairing(dual: &DualSystem, basis: &BasisSet) -> Result<()> {
    if dual.window() != basis.window() {
        return Err(Error::DimensionMismatch {
            expected: dual.window().len(),
            got: basis.window().len(),
        });
    }
    Ok(())
}

/// `g_k(x) = sum_j c_kj f_j(x)` at every grid point, for `k` in the core.
pub fn synthesize_dual(dual: &DualSystem, basis: &BasisSet, k: &[i64], grid: &Grid) -> Result<SampledFunction> {
    let samples = basis.sample(grid)?;
    synthesize_from_samples(dual, basis, k, &samples)
}

/// Duals for several indices sharing one sampling of the basis.
pub fn synthesize_duals(
    dual: &DualSystem,
    basis: &BasisSet,
    ks: &[Vec<i64>],
    grid: &Grid,
) -> Result<Vec<SampledFunction>> {
    let samples = basis.sample(grid)?;
    ks.iter()
        .map(|k| synthesize_from_samples(dual, basis, k, &samples))
        .collect()
}

pub fn synthesize_from_samples(
    dual: &DualSystem,
    basis: &BasisSet,
    k: &[i64],
    samples: &Samples,
) -> Result<SampledFunction> {
    check_pairing(dual, basis)?;
    if !dual.in_core(k) {
        return Err(Error::OutsideCore {
            index: k.to_vec(),
            core_radius: dual.core_radius(),
        });
    }
    let w = dual.window();
    let a = w.position(k).expect("core lies inside the window");
    let row: Vec<f64> = (0..w.len()).map(|b| dual.coeffs.entries()[(a, b)]).collect();
    let npts = samples.grid.len();
    let chunk = 2048;
    let values: Vec<f64> = (0..npts.div_ceil(chunk))
        .into_par_iter()
        .flat_map_iter(|c| {
            let lo = c * chunk;
            let hi = ((c + 1) * chunk).min(npts);
            let mut acc = vec![0.0; hi - lo];
            for (cj, fj) in row.iter().zip(&samples.rows) {
                for (o, f) in acc.iter_mut().zip(&fj[lo..hi]) {
                    *o += cj * f;
                }
            }
            acc
        })
        .collect();
    let d = w.dim();
    let u = d as f64 + 1.0;
    let alpha = dual.coefficient_envelope(k, u)?;
    let margin = (w.radius() as i64 - max_norm_int(k)).max(0) as u64;
    let tail_estimate = alpha * basis.spec().claimed_c() * shell_tail_upper(u, d, margin);
    Ok(SampledFunction {
        grid: samples.grid,
        center: k.to_vec(),
        values,
        tail_estimate,
    })
}

/// `max |<g_k, f_j> - delta_kj|` over the given duals and every window index `j`.
pub fn biorthogonality_residual(duals: &[SampledFunction], basis: &BasisSet, grid: &Grid) -> Result<f64> {
    let samples = basis.sample(grid)?;
    biorthogonality_from_samples(duals, basis, &samples)
}

pub fn biorthogonality_from_samples(
    duals: &[SampledFunction],
    basis: &BasisSet,
    samples: &Samples,
) -> Result<f64> {
    let w = basis.window();
    let weight = samples.grid.weight();
    let mut worst = 0.0_f64;
    for g in duals {
        if g.grid != samples.grid {
            return Err(Error::InvalidParameter(
                "duals were sampled on a different grid".into(),
            ));
        }
        let kpos = w
            .position(&g.center)
            .ok_or_else(|| Error::IndexOutOfWindow(g.center.clone()))?;
        let r = samples
            .rows
            .par_iter()
            .enumerate()
            .map(|(j, fj)| {
                let ip = weight * g.values.iter().zip(fj).map(|(a, b)| a * b).sum::<f64>();
                let delta = if j == kpos { 1.0 } else { 0.0 };
                (ip - delta).abs()
            })
            .reduce(|| 0.0, f64::max);
        worst = worst.max(r);
    }
    Ok(worst)
}

/// Envelope of `g_k` at exponent `t` around its lattice node; the constant
/// is the least `D_emp` with `|g_k(x)| <= D_emp (1+|x-k|)^{-t}` on the grid.
pub fn dual_envelope(g: &SampledFunction, t: f64) -> Result<DecayMeasurement> {
    let center: Vec<f64> = g.center.iter().map(|&v| v as f64).collect();
    if !g.grid.covers(&center, DECAY_WINDOW) {
        return Err(Error::GridTooSmall {
            extent: g.grid.extent(),
            needed: max_norm(&center) + DECAY_WINDOW,
        });
    }
    Ok(profile_over_grid(&g.grid, &g.center, t, |i, _| g.values[i]).finish())
}

/// `max |<g_k, g_j> - c_kj|` over pairs of the given duals.
pub fn gram_duals_check(duals: &[SampledFunction], dual: &DualSystem) -> Result<f64> {
    let w = dual.window();
    let mut worst = 0.0_f64;
    for gk in duals {
        for gj in duals {
            if gk.grid != gj.grid {
                return Err(Error::InvalidParameter(
                    "duals were sampled on different grids".into(),
                ));
            }
            let a = w
                .position(&gk.center)
                .ok_or_else(|| Error::IndexOutOfWindow(gk.center.clone()))?;
            let b = w
                .position(&gj.center)
                .ok_or_else(|| Error::IndexOutOfWindow(gj.center.clone()))?;
            let ip = gk.grid.weight()
                * gk.values.iter().zip(&gj.values).map(|(x, y)| x * y).sum::<f64>();
            worst = worst.max((ip - dual.coeffs.entries()[(a, b)]).abs());
        }
    }
    Ok(worst)
}

/// Writes the envelope summary CSV `k,t,D_emp,exponent_fit`.
pub fn write_envelope_csv<W: Write>(mut out: W, rows: &[(Vec<i64>, u32, DecayMeasurement)]) -> Result<()> {
    writeln!(out, "k,t,D_emp,exponent_fit")?;
    for (k, t, m) in rows {
        let label: Vec<String> = k.iter().map(|v| v.to_string()).collect();
        writeln!(
            out,
            "{},{},{:e},{:e}",
            label.join(" "),
            t,
            m.envelope.constant,
            m.fitted_exponent()
        )?;
    }
    Ok(())
}
