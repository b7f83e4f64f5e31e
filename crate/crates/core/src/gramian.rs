//! Gramian assembly over a lattice window, the derivations `D_h`, Schur norm
//! bounds and Riesz bounds from nested finite sections.

use std::io::{BufRead, Write};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{BasisSet, Localized, MemberEnvelope};
use crate::envelope::{DecayMeasurement, ShellProfile};
use crate::error::{Error, Result};
use crate::lattice::{max_norm, max_norm_int, Grid, LatticeWindow};

/// Square matrix indexed by pairs of window positions.
#[derive(Debug, Clone, PartialEq)]
pub struct DecayMatrix {
    window: LatticeWindow,
    entries: DMatrix<f64>,
    symmetric: bool,
    pub decay_fit: Option<DecayMeasurement>,
}

impl DecayMatrix {
    /// Wraps `entries`; the symmetry flag is set when the matrix is exactly symmetric.
    pub fn new(window: LatticeWindow, entries: DMatrix<f64>) -> Result<Self> {
        let n = window.len();
        if entries.nrows() != n || entries.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: entries.nrows().max(entries.ncols()),
            });
        }
        let symmetric = entries == entries.transpose();
        Ok(Self {
            window,
            entries,
            symmetric,
            decay_fit: None,
        })
    }

    pub fn identity(window: LatticeWindow) -> Self {
        Self::new(window, DMatrix::identity(window.len(), window.len())).expect("square")
    }

    pub fn from_fn<F>(window: LatticeWindow, f: F) -> Self
    where
        F: Fn(&[i64], &[i64]) -> f64,
    {
        let idx: Vec<Vec<i64>> = window.iter().collect();
        let n = idx.len();
        Self::new(window, DMatrix::from_fn(n, n, |a, b| f(&idx[a], &idx[b]))).expect("square")
    }

    pub fn window(&self) -> &LatticeWindow {
        &self.window
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn into_entries(self) -> DMatrix<f64> {
        self.entries
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    /// Entry `(k, j)` addressed by lattice indices.
    pub fn get(&self, k: &[i64], j: &[i64]) -> Option<f64> {
        let a = self.window.position(k)?;
        let b = self.window.position(j)?;
        Some(self.entries[(a, b)])
    }

    pub fn scaled(&self, factor: f64) -> DecayMatrix {
        let mut out = self.clone();
        out.entries *= factor;
        out.decay_fit = None;
        out
    }

    /// Principal submatrix on the centered sub-window of radius `r`.
    pub fn section(&self, r: usize) -> Result<DecayMatrix> {
        if r > self.window.radius() {
            return Err(Error::InvalidParameter(format!(
                "section radius {r} exceeds window radius {}",
                self.window.radius()
            )));
        }
        let pos = self.window.sub_positions(r);
        let n = pos.len();
        let entries = DMatrix::from_fn(n, n, |a, b| self.entries[(pos[a], pos[b])]);
        Ok(DecayMatrix {
            window: LatticeWindow::new(self.window.dim(), r)?,
            entries,
            symmetric: self.symmetric,
            decay_fit: None,
        })
    }

    /// Writes the `d N symmetric` header followed by `k j value` rows, with
    /// `k`, `j` the enumeration positions of the window.
    pub fn write_text<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(
            out,
            "{} {} {}",
            self.window.dim(),
            self.window.radius(),
            self.symmetric
        )?;
        let n = self.window.len();
        for k in 0..n {
            for j in 0..n {
                writeln!(out, "{k} {j} {:e}", self.entries[(k, j)])?;
            }
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(input: R) -> Result<DecayMatrix> {
        let mut lines = input.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty matrix file".into()))??;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(Error::Parse(format!("bad matrix header `{header}`")));
        }
        let dim: usize = parse_field(fields[0], "dimension")?;
        let radius: usize = parse_field(fields[1], "radius")?;
        let symmetric = match fields[2] {
            "true" | "1" => true,
            "false" | "0" => false,
            other => return Err(Error::Parse(format!("bad symmetry flag `{other}`"))),
        };
        let window = LatticeWindow::new(dim, radius)?;
        let n = window.len();
        let mut entries = DMatrix::zeros(n, n);
        let mut seen = vec![false; n * n];
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() != 3 {
                return Err(Error::Parse(format!("bad matrix row `{line}`")));
            }
            let k: usize = parse_field(parts[0], "row")?;
            let j: usize = parse_field(parts[1], "column")?;
            let v: f64 = parse_field(parts[2], "value")?;
            if k >= n || j >= n {
                return Err(Error::Parse(format!("position ({k}, {j}) outside {n}x{n}")));
            }
            entries[(k, j)] = v;
            seen[k * n + j] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Parse("matrix file is missing entries".into()));
        }
        let mut m = DecayMatrix::new(window, entries)?;
        if symmetric && !m.symmetric {
            return Err(Error::Parse("matrix flagged symmetric is not".into()));
        }
        m.symmetric = symmetric && m.symmetric;
        Ok(m)
    }
}

fn parse_field<T: std::str::FromStr>(s: &str, what: &str) -> Result<T> {
    s.parse()
        .map_err(|_| Error::Parse(format!("cannot parse {what} from `{s}`")))
}

/// A quadrature value together with the analytic bound on the mass lost
/// outside the grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quadrature {
    pub value: f64,
    pub tail_bound: f64,
}

/// Bound on `int_{|y|>R} C_a (1+|y-a|)^{-s_a} C_b (1+|y-b|)^{-s_b} dy`.
///
/// Outside the cube `1 + |y - a| >= 1 + |y| - m` with `m = max(|a|, |b|)`, and
/// the max-norm sphere of radius `r` has measure `d 2^d r^{d-1}`.
pub fn pair_tail_bound(a: &MemberEnvelope, b: &MemberEnvelope, extent: f64, dim: usize) -> f64 {
    let inside = |e: &MemberEnvelope| {
        e.support_radius
            .is_some_and(|r| max_norm(&e.center) + r <= extent)
    };
    if inside(a) || inside(b) {
        return 0.0;
    }
    let m = max_norm(&a.center).max(max_norm(&b.center));
    let sigma = a.exponent + b.exponent;
    let d = dim as f64;
    if extent <= m || sigma <= d {
        return f64::INFINITY;
    }
    a.constant
        * b.constant
        * d
        * 2f64.powi(dim as i32)
        * (1.0 + m).powf(d - 1.0)
        * (1.0 + extent - m).powf(d - sigma)
        / (sigma - d)
}

/// Midpoint-rule inner product `<f, g>` over the grid.
pub fn inner_product<F: Localized, G: Localized>(f: &F, g: &G, grid: &Grid) -> Result<Quadrature> {
    let dim = grid.dim();
    for d in [f.dim(), g.dim()] {
        if d != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: d });
        }
    }
    let (ef, eg) = (f.envelope(), g.envelope());
    for e in [&ef, &eg] {
        if !grid.covers(&e.center, 1.0) {
            return Err(Error::GridTooSmall {
                extent: grid.extent(),
                needed: max_norm(&e.center) + 1.0,
            });
        }
    }
    let chunk = 4096;
    let n = grid.len();
    let sums: Vec<f64> = (0..n.div_ceil(chunk))
        .into_par_iter()
        .map(|c| {
            let mut x = vec![0.0; dim];
            let mut acc = 0.0;
            for i in c * chunk..((c + 1) * chunk).min(n) {
                grid.point_into(i, &mut x);
                acc += f.value(&x) * g.value(&x);
            }
            acc
        })
        .collect();
    Ok(Quadrature {
        value: grid.weight() * sums.iter().sum::<f64>(),
        tail_bound: pair_tail_bound(&ef, &eg, grid.extent(), dim),
    })
}

/// An assembled Gramian with its quadrature diagnostics.
#[derive(Debug, Clone)]
pub struct Assembly {
    pub matrix: DecayMatrix,
    /// Largest `|m_kj - m_jk|` before symmetrization.
    pub asymmetry: f64,
    /// Largest per-entry truncation bound.
    pub tail_bound: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = 4 * c;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in 4 * chunks..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Gramian `m_kj = <f_k, f_j>` of the basis over its window.
pub fn assemble(basis: &BasisSet, grid: &Grid) -> Result<Assembly> {
    let window = *basis.window();
    if grid.dim() != window.dim() {
        return Err(Error::DimensionMismatch {
            expected: window.dim(),
            got: grid.dim(),
        });
    }
    let envelopes: Vec<MemberEnvelope> = (0..basis.len()).map(|p| basis.member(p).envelope()).collect();
    for e in &envelopes {
        if !grid.covers(&e.center, 1.0) {
            return Err(Error::GridTooSmall {
                extent: grid.extent(),
                needed: max_norm(&e.center) + 1.0,
            });
        }
    }
    let samples = basis.sample(grid)?;
    let n = basis.len();
    let w = grid.weight();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|k| {
            (0..n)
                .map(|j| w * dot(&samples.rows[k], &samples.rows[j]))
                .collect()
        })
        .collect();
    let raw = DMatrix::from_fn(n, n, |k, j| rows[k][j]);
    let mut asymmetry = 0.0_f64;
    let mut tail_bound = 0.0_f64;
    for k in 0..n {
        for j in 0..n {
            asymmetry = asymmetry.max((raw[(k, j)] - raw[(j, k)]).abs());
        }
        for j in k..n {
            tail_bound = tail_bound.max(pair_tail_bound(
                &envelopes[k],
                &envelopes[j],
                grid.extent(),
                grid.dim(),
            ));
        }
    }
    let scale = raw.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let floor = 64.0 * f64::EPSILON * scale;
    if asymmetry > 100.0 * tail_bound.max(floor) {
        return Err(Error::Asymmetric {
            residual: asymmetry,
            tail: tail_bound,
        });
    }
    let sym = (&raw + raw.transpose()) * 0.5;
    Ok(Assembly {
        matrix: DecayMatrix::new(window, sym)?,
        asymmetry,
        tail_bound,
    })
}

/// `D_h^u(L)_{kj} = (k_h - j_h)^u l_{kj}` for the zero-based axis `h`.
pub fn apply_derivation(l: &DecayMatrix, axis: usize, u: u32) -> Result<DecayMatrix> {
    let dim = l.window.dim();
    if axis >= dim {
        return Err(Error::AxisOutOfRange { axis, dim });
    }
    let coord: Vec<i64> = l.window.iter().map(|k| k[axis]).collect();
    let n = coord.len();
    let entries = DMatrix::from_fn(n, n, |a, b| {
        let diff = (coord[a] - coord[b]) as f64;
        diff.powi(u as i32) * l.entries[(a, b)]
    });
    Ok(DecayMatrix {
        window: l.window,
        entries,
        symmetric: l.symmetric && u.is_multiple_of(2),
        decay_fit: None,
    })
}

/// `max(sup_k sum_j |l_kj|, sup_j sum_k |l_kj|)`, an upper bound on the
/// `l^2` operator norm.
pub fn schur_bound(l: &DecayMatrix) -> f64 {
    schur_bound_dense(&l.entries)
}

pub fn schur_bound_dense(m: &DMatrix<f64>) -> f64 {
    let row = m
        .row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0_f64, f64::max);
    let col = m
        .column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0_f64, f64::max);
    row.max(col)
}

/// Spectral norm via a dense eigensolve (symmetric) or SVD.
pub fn spectral_norm(l: &DecayMatrix) -> f64 {
    spectral_norm_dense(&l.entries, l.symmetric)
}

pub fn spectral_norm_dense(m: &DMatrix<f64>, symmetric: bool) -> f64 {
    if symmetric {
        m.clone()
            .symmetric_eigenvalues()
            .iter()
            .fold(0.0_f64, |a, v| a.max(v.abs()))
    } else {
        m.clone()
            .singular_values()
            .iter()
            .fold(0.0_f64, |a, v| a.max(*v))
    }
}

/// Smallest and largest eigenvalue of a symmetric matrix.
pub fn eigen_extremes(m: &DMatrix<f64>) -> (f64, f64) {
    let ev = m.clone().symmetric_eigenvalues();
    let lo = ev.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = ev.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SectionExtremes {
    pub radius: usize,
    pub lambda_min: f64,
    pub lambda_max: f64,
}

/// Estimates of the Riesz bounds `A`, `B` from nested sections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RieszBounds {
    pub a_est: f64,
    pub b_est: f64,
    pub sections: Vec<SectionExtremes>,
    pub converged: bool,
}

impl RieszBounds {
    pub const CONVERGENCE_TOL: f64 = 1e-6;

    /// Largest amount by which the extremes fail to be monotone in the radius
    /// (zero when interlacing holds).
    pub fn interlacing_violation(&self) -> f64 {
        self.sections
            .windows(2)
            .map(|w| {
                let lo = (w[1].lambda_min - w[0].lambda_min).max(0.0);
                let hi = (w[0].lambda_max - w[1].lambda_max).max(0.0);
                lo.max(hi)
            })
            .fold(0.0, f64::max)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "N,lambda_min,lambda_max")?;
        for s in &self.sections {
            writeln!(out, "{},{:e},{:e}", s.radius, s.lambda_min, s.lambda_max)?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<RieszBounds> {
        let mut sections = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            if i == 0 || line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 3 {
                return Err(Error::Parse(format!("bad eigen row `{line}`")));
            }
            sections.push(SectionExtremes {
                radius: parse_field(f[0], "radius")?,
                lambda_min: parse_field(f[1], "lambda_min")?,
                lambda_max: parse_field(f[2], "lambda_max")?,
            });
        }
        Self::from_extremes(sections)
    }

    fn from_extremes(sections: Vec<SectionExtremes>) -> Result<RieszBounds> {
        let last = *sections
            .last()
            .ok_or_else(|| Error::InvalidParameter("no sections given".into()))?;
        let converged = match sections.len() {
            0 | 1 => false,
            n => {
                let prev = sections[n - 2];
                let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(f64::MIN_POSITIVE);
                rel(prev.lambda_min, last.lambda_min) < Self::CONVERGENCE_TOL
                    && rel(prev.lambda_max, last.lambda_max) < Self::CONVERGENCE_TOL
            }
        };
        Ok(RieszBounds {
            a_est: last.lambda_min,
            b_est: last.lambda_max,
            sections,
            converged,
        })
    }
}

/// Eigenvalue extremes of nested sections with strictly increasing radii.
pub fn riesz_bounds(sections: &[DecayMatrix]) -> Result<RieszBounds> {
    if sections.is_empty() {
        return Err(Error::InvalidParameter("no sections given".into()));
    }
    if sections
        .windows(2)
        .any(|w| w[0].window.radius() >= w[1].window.radius())
    {
        return Err(Error::InvalidParameter(
            "section radii must be strictly increasing".into(),
        ));
    }
    let extremes = sections
        .par_iter()
        .map(|m| {
            let (lambda_min, lambda_max) = eigen_extremes(&m.entries);
            SectionExtremes {
                radius: m.window.radius(),
                lambda_min,
                lambda_max,
            }
        })
        .collect::<Vec<_>>();
    if let Some(bad) = extremes.iter().find(|e| !(e.lambda_min > 0.0)) {
        return Err(Error::NotRiesz {
            radius: bad.radius,
            lambda_min: bad.lambda_min,
        });
    }
    RieszBounds::from_extremes(extremes)
}

/// Sections of `m` at each radius in `radii`.
pub fn nested_sections(m: &DecayMatrix, radii: &[usize]) -> Result<Vec<DecayMatrix>> {
    radii.iter().map(|&r| m.section(r)).collect()
}

/// Off-diagonal decay of `|l_kj|` against `|k - j|`: max-envelope at
/// exponent `u` and the regression over shell maxima.
pub fn offdiag_fit(l: &DecayMatrix, u: f64) -> DecayMeasurement {
    offdiag_profile(l, u).finish()
}

pub(crate) fn offdiag_profile(l: &DecayMatrix, u: f64) -> ShellProfile {
    let idx: Vec<Vec<i64>> = l.window.iter().collect();
    let mut prof = ShellProfile::new(u);
    let mut diff = vec![0i64; l.window.dim()];
    for (a, ka) in idx.iter().enumerate() {
        for (b, kb) in idx.iter().enumerate() {
            for ((d, x), y) in diff.iter_mut().zip(ka).zip(kb) {
                *d = x - y;
            }
            prof.push(max_norm_int(&diff) as f64, l.entries[(a, b)]);
        }
    }
    prof
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{make_basis, Family, GeneratorSpec};
    use crate::envelope::DecayFlag;

    fn win(d: usize, n: usize) -> LatticeWindow {
        LatticeWindow::new(d, n).unwrap()
    }

    #[test]
    fn indicator_inner_products() {
        let b = make_basis(GeneratorSpec::new(Family::BsplineIndicator, 1), win(1, 1)).unwrap();
        let grid = Grid::new(1.0 / 64.0, 4.0, 1).unwrap();
        let p0 = b.window().position(&[0]).unwrap();
        let p1 = b.window().position(&[1]).unwrap();
        let same = inner_product(&b.member(p0), &b.member(p0), &grid).unwrap();
        assert_eq!(same.value, 1.0);
        assert_eq!(same.tail_bound, 0.0);
        let apart = inner_product(&b.member(p0), &b.member(p1), &grid).unwrap();
        assert_eq!(apart.value, 0.0);
        assert_eq!(apart.tail_bound, 0.0);
    }

    #[test]
    fn inner_product_rejects_small_grid() {
        let b = make_basis(GeneratorSpec::new(Family::BsplineIndicator, 1), win(1, 3)).unwrap();
        let grid = Grid::new(0.25, 2.0, 1).unwrap();
        let p = b.window().position(&[3]).unwrap();
        assert!(matches!(
            inner_product(&b.member(p), &b.member(p), &grid),
            Err(Error::GridTooSmall { .. })
        ));
    }

    #[test]
    fn indicator_gramian_is_identity() {
        let b = make_basis(GeneratorSpec::new(Family::BsplineIndicator, 1), win(1, 4)).unwrap();
        let grid = Grid::new(1.0 / 64.0, 8.0, 1).unwrap();
        let a = assemble(&b, &grid).unwrap();
        assert_eq!(a.matrix, DecayMatrix::identity(win(1, 4)));
        assert_eq!(a.asymmetry, 0.0);
        let fit = offdiag_fit(&a.matrix, 3.0);
        assert_eq!(fit.flag, DecayFlag::SuperPolynomial);
        assert_eq!(fit.envelope.constant, 1.0);
    }

    #[test]
    fn derivation_examples() {
        let w = win(1, 3);
        let id = DecayMatrix::identity(w);
        let d1 = apply_derivation(&id, 0, 1).unwrap();
        assert!(d1.entries().iter().all(|&v| v == 0.0));
        assert_eq!(apply_derivation(&id, 0, 0).unwrap(), id);
        let l = DecayMatrix::from_fn(w, |k, j| (1.0 + (k[0] - j[0]).abs() as f64).powi(-5));
        let d2 = apply_derivation(&l, 0, 2).unwrap();
        let v = d2.get(&[2], &[0]).unwrap();
        assert!((v - 4.0 * 3f64.powi(-5)).abs() < 1e-15);
        assert!((v - 0.016461).abs() < 1e-6);
        assert!(matches!(
            apply_derivation(&l, 1, 1),
            Err(Error::AxisOutOfRange { axis: 1, dim: 1 })
        ));
    }

    #[test]
    fn schur_of_identity() {
        assert_eq!(schur_bound(&DecayMatrix::identity(win(2, 2))), 1.0);
    }

    #[test]
    fn section_extracts_principal_block() {
        let w = win(1, 3);
        let l = DecayMatrix::from_fn(w, |k, j| (10 * k[0] + j[0]) as f64);
        let s = l.section(1).unwrap();
        assert_eq!(s.window().radius(), 1);
        assert_eq!(s.get(&[-1], &[1]), Some(-9.0));
        assert!(l.section(4).is_err());
    }

    #[test]
    fn text_format_roundtrip() {
        let w = win(2, 1);
        let l = DecayMatrix::from_fn(w, |k, j| {
            1.0 / (1.0 + ((k[0] - j[0]).abs() + (k[1] - j[1]).abs()) as f64) + 1e-17
        });
        let mut buf = Vec::new();
        l.write_text(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("2 1 true\n0 0 "));
        let back = DecayMatrix::read_text(&buf[..]).unwrap();
        assert_eq!(back, l);
        assert!(DecayMatrix::read_text(&b"1 1 true\n0 0 1\n"[..]).is_err());
    }

    #[test]
    fn riesz_bounds_of_identity() {
        let id = DecayMatrix::identity(win(1, 4));
        let rb = riesz_bounds(&nested_sections(&id, &[1, 2, 4]).unwrap()).unwrap();
        assert_eq!(rb.a_est, 1.0);
        assert_eq!(rb.b_est, 1.0);
        assert!(rb.converged);
        let neg = id.scaled(-1.0);
        assert!(matches!(
            riesz_bounds(&[neg]),
            Err(Error::NotRiesz { .. })
        ));
    }

    #[test]
    fn eigens_csv_roundtrip() {
        let id = DecayMatrix::identity(win(1, 4)).scaled(2.0);
        let rb = riesz_bounds(&nested_sections(&id, &[2, 4]).unwrap()).unwrap();
        let mut buf = Vec::new();
        rb.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf.clone()).unwrap().starts_with("N,lambda_min,lambda_max\n2,"));
        assert_eq!(RieszBounds::read_csv(&buf[..]).unwrap(), rb);
    }
}
