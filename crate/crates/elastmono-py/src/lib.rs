//! Python bindings: meshes, scenarios, ND matrices, and the reconstruction
//! pipelines, mirroring the CLI surface.
//!
//! Build with `cargo build --release -p elastmono-py`; the smoke test in
//! `python/smoke_test.py` shows how to load the resulting cdylib.

use std::collections::BTreeSet;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use elastmono::error::Error;
use elastmono::experiments::{
    calibrate_tau, run_convergence_study, run_localized_potentials, Scenario,
};
use elastmono::materials::BetaBounds;
use elastmono::mesh::{build_unit_square_mesh, refine, Side};
use elastmono::monotonicity::{loewner_min_eig, TestKit, TestMode};
use elastmono::ndmap::NdMatrix;
use elastmono::reconstruct::{
    inner_reconstruction, linearized_outer_reconstruction, outer_reconstruction, IndicatorMap,
};

fn to_py_err(e: Error) -> PyErr {
    match e {
        Error::Invalid { .. } => PyValueError::new_err(e.to_string()),
        Error::Numerical { .. } => PyRuntimeError::new_err(e.to_string()),
    }
}

fn parse_sides(sides: Vec<String>) -> PyResult<BTreeSet<Side>> {
    sides
        .into_iter()
        .map(|s| match s.as_str() {
            "bottom" => Ok(Side::Bottom),
            "right" => Ok(Side::Right),
            "top" => Ok(Side::Top),
            "left" => Ok(Side::Left),
            other => Err(PyValueError::new_err(format!("unknown side '{other}'"))),
        })
        .collect()
}

/// Structured triangulation of the unit square.
#[pyclass(name = "Mesh", frozen)]
struct PyMesh {
    inner: elastmono::mesh::Mesh,
}

#[pymethods]
impl PyMesh {
    #[new]
    fn new(n: usize, dirichlet_sides: Vec<String>) -> PyResult<Self> {
        let sides = parse_sides(dirichlet_sides)?;
        Ok(PyMesh {
            inner: build_unit_square_mesh(n, &sides).map_err(to_py_err)?,
        })
    }

    fn refine(&self) -> PyMesh {
        PyMesh {
            inner: refine(&self.inner),
        }
    }

    #[getter]
    fn n_nodes(&self) -> usize {
        self.inner.nodes.len()
    }

    #[getter]
    fn n_elements(&self) -> usize {
        self.inner.elements.len()
    }

    #[getter]
    fn n_boundary_edges(&self) -> usize {
        self.inner.boundary_edges.len()
    }

    #[getter]
    fn h(&self) -> f64 {
        self.inner.h
    }

    fn dump_text(&self) -> String {
        self.inner.dump_text()
    }

    fn __repr__(&self) -> String {
        format!(
            "Mesh(nodes={}, elements={}, h={:.6})",
            self.inner.nodes.len(),
            self.inner.elements.len(),
            self.inner.h
        )
    }
}

/// Dense symmetric ND matrix in a fixed boundary-load basis.
#[pyclass(name = "NdMatrix", frozen)]
struct PyNdMatrix {
    inner: NdMatrix,
}

#[pymethods]
impl PyNdMatrix {
    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn fingerprint(&self) -> String {
        self.inner.fingerprint.clone()
    }

    #[getter]
    fn provenance(&self) -> String {
        self.inner.provenance.clone()
    }

    #[getter]
    fn presym_asymmetry(&self) -> f64 {
        self.inner.presym_asymmetry
    }

    /// Entries as a list of rows.
    fn values(&self) -> Vec<Vec<f64>> {
        (0..self.inner.dim())
            .map(|i| (0..self.inner.dim()).map(|j| self.inner.matrix[(i, j)]).collect())
            .collect()
    }

    fn to_text(&self) -> String {
        self.inner.to_text()
    }

    /// Smallest eigenvalue of `self - other` (Loewner comparison).
    fn min_eig_vs(&self, other: &PyNdMatrix) -> PyResult<f64> {
        loewner_min_eig(&self.inner, &other.inner).map_err(to_py_err)
    }

    fn __repr__(&self) -> String {
        format!("NdMatrix(dim={}, provenance={:?})", self.inner.dim(), self.inner.provenance)
    }
}

/// Per-pixel indicators and the thresholded inclusion mask.
#[pyclass(name = "IndicatorMap", frozen)]
struct PyIndicatorMap {
    inner: IndicatorMap,
}

#[pymethods]
impl PyIndicatorMap {
    #[getter]
    fn p(&self) -> usize {
        self.inner.p
    }

    #[getter]
    fn tau(&self) -> f64 {
        self.inner.tau
    }

    /// Most violated consulted indicator per pixel.
    fn indicators(&self) -> Vec<f64> {
        self.inner.outcomes.iter().map(|o| o.worst()).collect()
    }

    fn mask(&self) -> Vec<bool> {
        self.inner.mask.clone()
    }

    fn masked_pixels(&self) -> Vec<usize> {
        self.inner.masked_pixels()
    }

    fn centers(&self) -> Vec<(f64, f64)> {
        self.inner.centers.iter().map(|c| (c[0], c[1])).collect()
    }

    fn to_csv(&self) -> String {
        self.inner.to_csv()
    }

    fn __repr__(&self) -> String {
        format!(
            "IndicatorMap(p={}, masked={}, tau={:.3e})",
            self.inner.p,
            self.inner.masked_pixels().len(),
            self.inner.tau
        )
    }
}

/// Full experiment description (strict JSON schema).
#[pyclass(name = "Scenario", frozen)]
struct PyScenario {
    inner: Scenario,
}

impl PyScenario {
    fn tau_and_kit_run<R>(
        &self,
        f: impl FnOnce(&elastmono::experiments::Prepared, &NdMatrix, TestKit) -> Result<R, Error>,
    ) -> PyResult<R> {
        let prep = self.inner.prepare().map_err(to_py_err)?;
        let measured = prep.measured().map_err(to_py_err)?;
        let (tau, _) = self.inner.resolve_tau().map_err(to_py_err)?;
        let mut kit =
            TestKit::new(&prep.mesh, &prep.background, &prep.basis, tau).map_err(to_py_err)?;
        kit.selection = self.inner.test.sides;
        f(&prep, &measured, kit).map_err(to_py_err)
    }
}

#[pymethods]
impl PyScenario {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PyScenario {
            inner: Scenario::from_json(text, &[]).map_err(to_py_err)?,
        })
    }

    #[staticmethod]
    fn from_file(path: &str) -> PyResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PyValueError::new_err(format!("cannot read {path}: {e}")))?;
        Self::from_json(&text)
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    /// Measured ND matrix per the scenario's data-generation settings.
    fn measured_nd(&self) -> PyResult<PyNdMatrix> {
        let prep = self.inner.prepare().map_err(to_py_err)?;
        Ok(PyNdMatrix {
            inner: prep.measured().map_err(to_py_err)?,
        })
    }

    /// Calibrated Loewner threshold from background-only data.
    fn calibrate_tau(&self) -> PyResult<f64> {
        Ok(calibrate_tau(&self.inner).map_err(to_py_err)?.tau)
    }

    fn reconstruct_outer(&self) -> PyResult<PyIndicatorMap> {
        self.tau_and_kit_run(|prep, measured, kit| {
            let grid = prep.grid()?;
            outer_reconstruction(measured, &grid, &kit)
        })
        .map(|inner| PyIndicatorMap { inner })
    }

    fn reconstruct_inner(&self) -> PyResult<PyIndicatorMap> {
        let scenario = &self.inner;
        let prep = scenario.prepare().map_err(to_py_err)?;
        let measured = prep.measured().map_err(to_py_err)?;
        let (tau, _) = scenario.resolve_tau().map_err(to_py_err)?;
        let fields = match scenario.test.mode {
            TestMode::Linearized => Some(prep.background_fields().map_err(to_py_err)?),
            TestMode::Full => None,
        };
        let mut kit =
            TestKit::new(&prep.mesh, &prep.background, &prep.basis, tau).map_err(to_py_err)?;
        kit.background_fields = fields.as_ref();
        let grid = prep.grid().map_err(to_py_err)?;
        let map = inner_reconstruction(
            &measured,
            &grid,
            scenario.test.beta,
            scenario.test.sign,
            scenario.test.mode,
            &kit,
        )
        .map_err(to_py_err)?;
        Ok(PyIndicatorMap { inner: map })
    }

    fn reconstruct_linearized(&self) -> PyResult<PyIndicatorMap> {
        let scenario = &self.inner;
        let prep = scenario.prepare().map_err(to_py_err)?;
        let measured = prep.measured().map_err(to_py_err)?;
        let (tau, _) = scenario.resolve_tau().map_err(to_py_err)?;
        let fields = prep.background_fields().map_err(to_py_err)?;
        let mut kit =
            TestKit::new(&prep.mesh, &prep.background, &prep.basis, tau).map_err(to_py_err)?;
        kit.selection = scenario.test.sides;
        kit.background_fields = Some(&fields);
        kit.phantom = Some(&prep.phantom);
        let bounds = BetaBounds::from_background(prep.background.background());
        let grid = prep.grid().map_err(to_py_err)?;
        let map = linearized_outer_reconstruction(&measured, &grid, scenario.test.beta, &bounds, &kit)
            .map_err(to_py_err)?;
        Ok(PyIndicatorMap { inner: map })
    }

    /// Truncation-convergence study: returns (points, slope, residual, pass).
    fn convergence_study(&self) -> PyResult<(Vec<(f64, f64)>, f64, f64, bool)> {
        let report = run_convergence_study(&self.inner).map_err(to_py_err)?;
        Ok((report.points, report.slope, report.residual, report.pass))
    }

    /// Localized loads: returns (ratios, loads, sigma).
    fn localized_potentials(&self) -> PyResult<(Vec<f64>, Vec<Vec<f64>>, f64)> {
        let report = run_localized_potentials(&self.inner).map_err(to_py_err)?;
        Ok((report.ratios, report.loads, report.sigma))
    }

    fn __repr__(&self) -> String {
        format!(
            "Scenario(n={}, inclusions={}, grid={})",
            self.inner.mesh.n,
            self.inner.inclusions.len(),
            self.inner.test.grid
        )
    }
}

#[pymodule]
fn elastmono_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyMesh>()?;
    m.add_class::<PyNdMatrix>()?;
    m.add_class::<PyIndicatorMap>()?;
    m.add_class::<PyScenario>()?;
    Ok(())
}
