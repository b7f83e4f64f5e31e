//! Python module `rieszdual`: bases, Gramians, finite-section duals and the
//! lattice-sum and dual-decay constants.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use rieszdual::analysis::{analyze_family, Settings};
use rieszdual::bounds::leibniz_check as core_leibniz;
use rieszdual::gramian::{nested_sections, spectral_norm};
use rieszdual::{
    apply_derivation, assemble, invert_section, make_basis, riesz_bounds, schur_bound, BasisSet, DecayMatrix,
    Error, Family, GeneratorSpec, Grid, LatticeWindow, TheoreticalBound,
};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::NotRiesz { .. } | Error::SingularSection { .. } | Error::NonConvergence { .. } => {
            PyRuntimeError::new_err(e.to_string())
        }
        other => PyValueError::new_err(other.to_string()),
    }
}

fn rows(m: &DecayMatrix) -> Vec<Vec<f64>> {
    let e = m.entries();
    (0..e.nrows()).map(|i| e.row(i).iter().copied().collect()).collect()
}

fn spec(family: &str, dim: usize, param: Option<f64>, claimed_s: Option<f64>) -> PyResult<GeneratorSpec> {
    let mut spec = GeneratorSpec::new(Family::from_tag(family, param).map_err(to_py)?, dim);
    if let Some(s) = claimed_s {
        spec = spec.with_claimed_decay(s);
    }
    Ok(spec)
}

/// `W_u = sum_k (1 + |k|)^{-u}` over `Z^d` in max-norm; returns
/// `(value, tail_bound, radius)`.
#[pyfunction]
#[pyo3(signature = (u, d, tol = 1e-12))]
fn compute_w(u: f64, d: usize, tol: f64) -> PyResult<(f64, f64, u64)> {
    let w = rieszdual::compute_w(u, d, tol).map_err(to_py)?;
    Ok((w.value, w.tail_bound, w.radius))
}

#[pyfunction]
fn theoretical_d(c: f64, a: f64, s: f64, t: u32, d: usize, e: f64) -> PyResult<f64> {
    rieszdual::theoretical_d(&TheoreticalBound { c, a, s, t, d, e }).map_err(to_py)
}

/// Localized family `{f_k}` over the window `|k| <= radius`.
#[pyclass(module = "rieszdual", frozen)]
struct Basis {
    inner: BasisSet,
}

#[pymethods]
impl Basis {
    #[new]
    #[pyo3(signature = (family, dim, radius, param = None, claimed_s = None))]
    fn new(family: &str, dim: usize, radius: usize, param: Option<f64>, claimed_s: Option<f64>) -> PyResult<Self> {
        let window = LatticeWindow::new(dim, radius).map_err(to_py)?;
        let inner = make_basis(spec(family, dim, param, claimed_s)?, window).map_err(to_py)?;
        Ok(Self { inner })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn family(&self) -> &'static str {
        self.inner.spec().family().tag()
    }

    #[getter]
    fn claimed_c(&self) -> f64 {
        self.inner.spec().claimed_c()
    }

    #[getter]
    fn claimed_s(&self) -> f64 {
        self.inner.spec().claimed_s()
    }

    fn evaluate(&self, k: Vec<i64>, x: Vec<f64>) -> PyResult<f64> {
        self.inner.evaluate(&k, &x).map_err(to_py)
    }

    /// Quadrature Gramian on the grid of spacing `h` and extent `extent`.
    #[pyo3(signature = (h, extent = None))]
    fn gramian(&self, h: f64, extent: Option<f64>) -> PyResult<Gramian> {
        let w = self.inner.window();
        let extent = extent.unwrap_or(w.radius() as f64 + 8.0);
        let grid = Grid::new(h, extent, w.dim()).map_err(to_py)?;
        Ok(Gramian {
            inner: assemble(&self.inner, &grid).map_err(to_py)?.matrix,
        })
    }

    fn __repr__(&self) -> String {
        let w = self.inner.window();
        format!("Basis({:?}, dim={}, radius={})", self.family(), w.dim(), w.radius())
    }
}

/// Matrix indexed by a lattice window, in its enumeration order.
#[pyclass(module = "rieszdual", frozen, skip_from_py_object)]
#[derive(Clone)]
struct Gramian {
    inner: DecayMatrix,
}

#[pymethods]
impl Gramian {
    #[staticmethod]
    fn from_rows(dim: usize, radius: usize, rows: Vec<Vec<f64>>) -> PyResult<Self> {
        let window = LatticeWindow::new(dim, radius).map_err(to_py)?;
        let n = window.len();
        if rows.len() != n || rows.iter().any(|r| r.len() != n) {
            return Err(PyValueError::new_err(format!("expected a {n}x{n} matrix")));
        }
        let m = DecayMatrix::from_fn(window, |k, j| {
            rows[window.position(k).expect("in window")][window.position(j).expect("in window")]
        });
        Ok(Self { inner: m })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.window().dim()
    }

    #[getter]
    fn radius(&self) -> usize {
        self.inner.window().radius()
    }

    #[getter]
    fn indices(&self) -> Vec<Vec<i64>> {
        self.inner.window().iter().collect()
    }

    fn entries(&self) -> Vec<Vec<f64>> {
        rows(&self.inner)
    }

    fn get(&self, k: Vec<i64>, j: Vec<i64>) -> Option<f64> {
        self.inner.get(&k, &j)
    }

    fn is_symmetric(&self) -> bool {
        self.inner.is_symmetric()
    }

    fn schur_bound(&self) -> f64 {
        schur_bound(&self.inner)
    }

    fn spectral_norm(&self) -> f64 {
        spectral_norm(&self.inner)
    }

    /// `(A_est, B_est)` from nested sections at the given radii.
    fn riesz_bounds(&self, radii: Vec<usize>) -> PyResult<(f64, f64)> {
        let rb = riesz_bounds(&nested_sections(&self.inner, &radii).map_err(to_py)?).map_err(to_py)?;
        Ok((rb.a_est, rb.b_est))
    }

    /// `D_h^u`: entries multiplied by `(k_h - j_h)^u`.
    fn derivation(&self, axis: usize, u: u32) -> PyResult<Gramian> {
        Ok(Gramian {
            inner: apply_derivation(&self.inner, axis, u).map_err(to_py)?,
        })
    }

    fn __repr__(&self) -> String {
        format!("Gramian(dim={}, radius={})", self.dim(), self.radius())
    }
}

/// Inverse-Gramian coefficients from nested finite sections.
#[pyclass(module = "rieszdual", frozen)]
struct DualSystem {
    inner: rieszdual::DualSystem,
}

#[pymethods]
impl DualSystem {
    #[new]
    #[pyo3(signature = (gramian, radii, tol = 1e-8))]
    fn new(gramian: &Gramian, radii: Vec<usize>, tol: f64) -> PyResult<Self> {
        let sections = nested_sections(&gramian.inner, &radii).map_err(to_py)?;
        Ok(Self {
            inner: invert_section(&sections, tol).map_err(to_py)?,
        })
    }

    #[getter]
    fn core_radius(&self) -> usize {
        self.inner.core_radius()
    }

    fn coeffs(&self) -> Gramian {
        Gramian {
            inner: self.inner.coeffs().clone(),
        }
    }

    /// `(radius, c_00, estimate)` per section.
    fn central(&self) -> Vec<(usize, f64, Option<f64>)> {
        self.inner
            .report()
            .central
            .iter()
            .map(|c| (c.radius, c.value, c.estimate))
            .collect()
    }

    /// Samples of the dual `g_k` on the grid of spacing `h`.
    #[pyo3(signature = (basis, k, h, extent = None))]
    fn dual(&self, basis: &Basis, k: Vec<i64>, h: f64, extent: Option<f64>) -> PyResult<Vec<f64>> {
        let w = basis.inner.window();
        let extent = extent.unwrap_or(w.radius() as f64 + 8.0);
        let grid = Grid::new(h, extent, w.dim()).map_err(to_py)?;
        Ok(rieszdual::synthesize_dual(&self.inner, &basis.inner, &k, &grid)
            .map_err(to_py)?
            .values)
    }
}

/// Largest entry of `D(PQ) - D(P)Q - P D(Q)`.
#[pyfunction]
fn leibniz_check(p: &Gramian, q: &Gramian, axis: usize) -> PyResult<f64> {
    core_leibniz(&p.inner, &q.inner, axis).map_err(to_py)
}

/// Full pipeline for one family with default settings for the window.
#[pyfunction]
#[pyo3(signature = (family, dim, radius, param = None, claimed_s = None, t = 2, h = None))]
#[allow(clippy::too_many_arguments)]
fn analyze<'py>(
    py: Python<'py>,
    family: &str,
    dim: usize,
    radius: usize,
    param: Option<f64>,
    claimed_s: Option<f64>,
    t: u32,
    h: Option<f64>,
) -> PyResult<Bound<'py, PyDict>> {
    let mut settings = Settings::for_window(radius);
    settings.t = t;
    if let Some(h) = h {
        settings.grid_spacing = h;
    }
    let fa = analyze_family(family, spec(family, dim, param, claimed_s)?, &settings).map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("c_meas", fa.c_meas)?;
    out.set_item("a_est", fa.riesz.a_est)?;
    out.set_item("b_est", fa.riesz.b_est)?;
    out.set_item("core_radius", fa.dual.core_radius())?;
    out.set_item("biorthogonality", fa.biorthogonality)?;
    out.set_item("max_dual_norm_sq", fa.max_dual_norm_sq)?;
    out.set_item("d_emp", fa.d_emp)?;
    out.set_item("schur_dual_t", fa.schur_dual_t)?;
    out.set_item("coefficient_decay_exponent", fa.coefficient_decay.fitted_exponent())?;
    Ok(out)
}

#[pymodule]
#[pyo3(name = "rieszdual")]
fn rieszdual_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Basis>()?;
    m.add_class::<Gramian>()?;
    m.add_class::<DualSystem>()?;
    m.add_function(wrap_pyfunction!(compute_w, m)?)?;
    m.add_function(wrap_pyfunction!(theoretical_d, m)?)?;
    m.add_function(wrap_pyfunction!(leibniz_check, m)?)?;
    m.add_function(wrap_pyfunction!(analyze, m)?)?;
    m.add("FAMILIES", Family::TAGS.to_vec())?;
    Ok(())
}
