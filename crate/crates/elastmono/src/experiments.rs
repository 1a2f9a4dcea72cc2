//! Scenario configuration and scripted studies: the truncation-convergence
//! rate of extreme operators, localized boundary loads, and threshold
//! calibration on background-only data.

use std::collections::{BTreeMap, BTreeSet};

#[cfg(test)]
use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::materials::{
    make_lame_field, truncate_extreme, BetaBounds, LameField, LameState,
};
use crate::mesh::{build_unit_square_mesh, label_regions, Mesh, RegionSpec, Shape, Side};
use crate::monotonicity::{InequalitySelection, InnerSign, TestKit, TestMode};
use crate::ndmap::{
    assemble_background_fields, assemble_nd_matrix, build_load_basis, measure_nd_matrix,
    spectral_norm_symmetric, BackgroundFields, ExtremeOpMode, LoadBasis, NdMatrix,
};
use crate::reconstruct::{outer_family, PixelGrid};

/// Default truncation ladder: two-plus decades to fit a slope.
pub const DEFAULT_EPSILONS: [f64; 7] = [1e-1, 3e-2, 1e-2, 3e-3, 1e-3, 3e-4, 1e-4];
/// Default step ladder for the derivative remainder check.
pub const DEFAULT_TS: [f64; 3] = [1e-2, 5e-3, 2.5e-3];
/// Convergence-study pass bound on the fitted slope.
pub const SLOPE_THRESHOLD: f64 = 0.45;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshBlock {
    pub n: usize,
    pub dirichlet_sides: Vec<Side>,
    /// Refinement levels for measured-data generation (0 commits the
    /// inverse crime).
    #[serde(default = "default_one")]
    pub data_refinement: usize,
}

fn default_one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackgroundBlock {
    pub lambda: f64,
    pub mu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InclusionBlock {
    pub id: String,
    pub shape: Shape,
    pub state: LameState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisBlock {
    /// Loads per Neumann edge; only the x/y pair is supported.
    pub directions_per_edge: usize,
}

impl Default for BasisBlock {
    fn default() -> Self {
        BasisBlock {
            directions_per_edge: 2,
        }
    }
}

/// Threshold: a fixed number or "calibrate".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TauSpec {
    Fixed(f64),
    Named(String),
}

impl Default for TauSpec {
    fn default() -> Self {
        TauSpec::Named("calibrate".into())
    }
}

impl TauSpec {
    pub fn is_calibrate(&self) -> bool {
        matches!(self, TauSpec::Named(s) if s == "calibrate")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TestBlock {
    pub tau: TauSpec,
    pub beta: f64,
    pub grid: usize,
    pub mode: TestMode,
    pub sign: InnerSign,
    pub sides: InequalitySelection,
}

impl Default for TestBlock {
    fn default() -> Self {
        TestBlock {
            tau: TauSpec::default(),
            beta: 0.5,
            grid: 8,
            mode: TestMode::Full,
            sign: InnerSign::Positive,
            sides: InequalitySelection::Both,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StudyBlock {
    pub epsilons: Vec<f64>,
    pub ts: Vec<f64>,
}

impl Default for StudyBlock {
    fn default() -> Self {
        StudyBlock {
            epsilons: DEFAULT_EPSILONS.to_vec(),
            ts: DEFAULT_TS.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalizeBlock {
    pub b: Shape,
    pub u: Shape,
    #[serde(default)]
    pub sigma: Option<f64>,
    #[serde(default = "default_top_k")]
    pub top_k: usize,
}

fn default_top_k() -> usize {
    3
}

/// Full experiment description; strict JSON with a version field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub version: u32,
    pub mesh: MeshBlock,
    pub background: BackgroundBlock,
    #[serde(default)]
    pub inclusions: Vec<InclusionBlock>,
    #[serde(default)]
    pub basis: BasisBlock,
    #[serde(default)]
    pub test: TestBlock,
    #[serde(default)]
    pub study: StudyBlock,
    #[serde(default)]
    pub localize: Option<LocalizeBlock>,
    #[serde(default)]
    pub noise_delta: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<String>,
}

impl Scenario {
    /// Parse from strict JSON, applying `key=value` overrides (dotted
    /// paths) after the file parse and before validation.
    pub fn from_json(text: &str, overrides: &[(String, String)]) -> Result<Scenario> {
        let mut value: serde_json::Value = serde_json::from_str(text)
            .map_err(|e| Error::invalid("experiments", format!("config parse: {e}")))?;
        for (path, raw) in overrides {
            apply_override(&mut value, path, raw)?;
        }
        let scenario: Scenario = serde_json::from_value(value)
            .map_err(|e| Error::invalid("experiments", format!("config: {e}")))?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid("experiments", m));
        if self.version != 1 {
            return bad(format!("unsupported config version {}", self.version));
        }
        if self.mesh.n < 2 {
            return bad(format!("mesh.n = {} must be >= 2", self.mesh.n));
        }
        let sides: BTreeSet<Side> = self.mesh.dirichlet_sides.iter().copied().collect();
        if sides.is_empty() || sides.len() == 4 {
            return bad("mesh.dirichlet_sides must be a non-empty proper subset".into());
        }
        if !(self.background.lambda > 0.0 && self.background.mu > 0.0) {
            return bad("background parameters must be positive".into());
        }
        if self.basis.directions_per_edge != 2 {
            return bad("basis.directions_per_edge: only 2 (x and y) is supported".into());
        }
        if self.test.grid < 1 {
            return bad("test.grid must be >= 1".into());
        }
        if !(self.test.beta > 0.0) {
            return bad("test.beta must be positive".into());
        }
        if let TauSpec::Named(s) = &self.test.tau {
            if s != "calibrate" {
                return bad(format!("test.tau must be a number or \"calibrate\", got {s:?}"));
            }
        }
        if let TauSpec::Fixed(t) = self.test.tau {
            if t < 0.0 {
                return bad("test.tau must be non-negative".into());
            }
        }
        if self.noise_delta < 0.0 {
            return bad("noise_delta must be non-negative".into());
        }
        for eps in &self.study.epsilons {
            if !(*eps > 0.0 && *eps < 1.0) {
                return bad(format!("study.epsilons entry {eps} outside (0, 1)"));
            }
        }
        for t in &self.study.ts {
            if !(*t > 0.0) {
                return bad(format!("study.ts entry {t} must be positive"));
            }
        }
        let mut ids = BTreeSet::new();
        for inc in &self.inclusions {
            if !ids.insert(inc.id.clone()) {
                return bad(format!("duplicate inclusion id '{}'", inc.id));
            }
            if let LameState::Finite { lambda, mu } = inc.state {
                if !(lambda > 0.0 && mu > 0.0) {
                    return bad(format!("inclusion '{}': finite parameters must be positive", inc.id));
                }
            }
        }
        if let Some(loc) = &self.localize {
            if loc.top_k < 1 {
                return bad("localize.top_k must be >= 1".into());
            }
        }
        Ok(())
    }

    pub fn dirichlet_set(&self) -> BTreeSet<Side> {
        self.mesh.dirichlet_sides.iter().copied().collect()
    }

    pub fn region_specs(&self) -> Vec<RegionSpec> {
        self.inclusions
            .iter()
            .map(|inc| RegionSpec {
                id: inc.id.clone(),
                shape: inc.shape.clone(),
            })
            .collect()
    }

    pub fn assignments(&self) -> BTreeMap<String, LameState> {
        self.inclusions
            .iter()
            .map(|inc| (inc.id.clone(), inc.state))
            .collect()
    }

    /// Copy with the inclusions removed (background-only duplicate).
    pub fn background_only(&self) -> Scenario {
        Scenario {
            inclusions: Vec::new(),
            ..self.clone()
        }
    }

    /// Build the mesh, basis, and material fields.
    pub fn prepare(&self) -> Result<Prepared> {
        let mesh = build_unit_square_mesh(self.mesh.n, &self.dirichlet_set())?;
        let mesh = label_regions(&mesh, &self.region_specs())?;
        let basis = build_load_basis(&mesh)?;
        let bg_pair = (self.background.lambda, self.background.mu);
        let background = LameField::homogeneous(&mesh, bg_pair)?;
        let phantom = make_lame_field(&mesh, bg_pair, &self.assignments())?;
        Ok(Prepared {
            scenario: self.clone(),
            mesh,
            basis,
            background,
            phantom,
            bounds: BetaBounds::from_background(bg_pair),
        })
    }
}

fn apply_override(value: &mut serde_json::Value, path: &str, raw: &str) -> Result<()> {
    let parsed: serde_json::Value = serde_json::from_str(raw)
        .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
    let mut cursor = value;
    let parts: Vec<&str> = path.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::invalid(
            "experiments",
            format!("bad override path '{path}'"),
        ));
    }
    for part in &parts[..parts.len() - 1] {
        cursor = cursor
            .as_object_mut()
            .ok_or_else(|| {
                Error::invalid(
                    "experiments",
                    format!("override path '{path}' crosses a non-object"),
                )
            })?
            .entry(part.to_string())
            .or_insert_with(|| serde_json::Value::Object(Default::default()));
    }
    let obj = cursor.as_object_mut().ok_or_else(|| {
        Error::invalid(
            "experiments",
            format!("override path '{path}' crosses a non-object"),
        )
    })?;
    obj.insert(parts.last().unwrap().to_string(), parsed);
    Ok(())
}

/// A scenario with its mesh, basis, and fields built.
pub struct Prepared {
    pub scenario: Scenario,
    pub mesh: Mesh,
    pub basis: LoadBasis,
    pub background: LameField,
    pub phantom: LameField,
    pub bounds: BetaBounds,
}

impl Prepared {
    /// Measured ND data per the scenario's data-generation settings.
    pub fn measured(&self) -> Result<NdMatrix> {
        measure_nd_matrix(
            &self.mesh,
            &self.phantom,
            &self.basis,
            self.scenario.mesh.data_refinement,
            self.scenario.noise_delta,
            self.scenario.seed,
        )
    }

    pub fn background_fields(&self) -> Result<BackgroundFields> {
        assemble_background_fields(&self.mesh, &self.background, &self.basis)
    }

    pub fn grid(&self) -> Result<PixelGrid> {
        PixelGrid::new(&self.mesh, self.scenario.test.grid)
    }
}

/// Table of (parameter, operator-norm error) with the fitted decay rate.
#[derive(Debug, Clone)]
pub struct StudyReport {
    pub points: Vec<(f64, f64)>,
    pub slope: f64,
    /// RMS residual of the log10-log10 fit.
    pub residual: f64,
    pub pass: bool,
}

impl StudyReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epsilon,error\n");
        for (eps, err) in &self.points {
            s.push_str(&format!("{eps:.17e},{err:.17e}\n"));
        }
        s
    }

    pub fn to_text(&self) -> String {
        format!(
            "truncation convergence: slope {:.4} (bound {SLOPE_THRESHOLD}), \
             fit residual {:.4}, {} points: {}\n",
            self.slope,
            self.residual,
            self.points.len(),
            if self.pass { "PASS" } else { "FAIL" }
        )
    }
}

/// Least-squares line through (log10 x, log10 y); returns slope and the RMS
/// of the fit residuals.
pub fn fit_loglog(points: &[(f64, f64)]) -> Result<(f64, f64)> {
    if points.len() < 2 {
        return Err(Error::invalid("experiments", "fit needs at least 2 points"));
    }
    if points.iter().any(|&(x, y)| x <= 0.0 || y <= 0.0) {
        return Err(Error::numerical(
            "experiments",
            "non-positive value in log-log fit",
        ));
    }
    let n = points.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for &(x, y) in points {
        let (lx, ly) = (x.log10(), y.log10());
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    let denom = n * sxx - sx * sx;
    if denom == 0.0 {
        return Err(Error::numerical("experiments", "degenerate abscissas in fit"));
    }
    let slope = (n * sxy - sx * sy) / denom;
    let intercept = (sy - slope * sx) / n;
    let mut ss = 0.0;
    for &(x, y) in points {
        let r = y.log10() - (slope * x.log10() + intercept);
        ss += r * r;
    }
    Ok((slope, (ss / n).sqrt()))
}

/// Truncation-convergence study: spectral-norm error between the exact
/// constrained extreme ND matrix and its epsilon-truncated approximations,
/// with the decay rate fitted over the ladder.
pub fn run_convergence_study(scenario: &Scenario) -> Result<StudyReport> {
    let prep = scenario.prepare()?;
    if !prep.phantom.has_extreme() {
        return Err(Error::invalid(
            "experiments",
            "convergence study needs at least one extreme (cavity or rigid) inclusion",
        ));
    }
    let mut ladder = scenario.study.epsilons.clone();
    ladder.sort_by(|a, b| b.partial_cmp(a).unwrap());
    ladder.dedup();
    if ladder.len() < 4 {
        return Err(Error::invalid(
            "experiments",
            format!("epsilon ladder has {} points; at least 4 required", ladder.len()),
        ));
    }
    let span = ladder.first().unwrap() / ladder.last().unwrap();
    if span < 100.0 {
        return Err(Error::invalid(
            "experiments",
            "epsilon ladder must span at least two decades",
        ));
    }

    let exact = assemble_nd_matrix(
        &prep.mesh,
        &prep.phantom,
        &prep.basis,
        ExtremeOpMode::Constrained,
    )?;
    let points: Vec<(f64, f64)> = ladder
        .par_iter()
        .map(|&eps| -> Result<(f64, f64)> {
            let truncated = truncate_extreme(&prep.phantom, eps)?;
            let m = assemble_nd_matrix(
                &prep.mesh,
                &truncated,
                &prep.basis,
                ExtremeOpMode::Constrained,
            )?;
            let err = spectral_norm_symmetric(&(&m.matrix - &exact.matrix));
            Ok((eps, err))
        })
        .collect::<Result<_>>()?;
    let (slope, residual) = fit_loglog(&points)?;
    Ok(StudyReport {
        points,
        slope,
        residual,
        pass: slope >= SLOPE_THRESHOLD,
    })
}

/// Ranked localized loads and their interior-energy ratios.
#[derive(Debug, Clone)]
pub struct LocalizeReport {
    /// Generalized Rayleigh quotients, descending.
    pub ratios: Vec<f64>,
    /// Basis-coefficient vectors of the ranked loads (unit Euclidean norm).
    pub loads: Vec<Vec<f64>>,
    pub sigma: f64,
    pub dim: usize,
}

impl LocalizeReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("rank,ratio\n");
        for (k, r) in self.ratios.iter().enumerate() {
            s.push_str(&format!("{k},{r:.17e}\n"));
        }
        s
    }
}

/// Localized-potential demonstrator: maximizes the interior energy in `B`
/// against the energy outside `U` over the load basis, via the generalized
/// symmetric eigenproblem `G_B x = theta (G_out + sigma I) x`.
pub fn run_localized_potentials(scenario: &Scenario) -> Result<LocalizeReport> {
    let loc = scenario.localize.clone().ok_or_else(|| {
        Error::invalid("experiments", "scenario has no localize block")
    })?;
    let prep = scenario.prepare()?;
    let mesh = &prep.mesh;

    let b_set: BTreeSet<usize> = mesh.elements_in_shape(&loc.b).into_iter().collect();
    let u_set: BTreeSet<usize> = mesh.elements_in_shape(&loc.u).into_iter().collect();
    if b_set.is_empty() {
        return Err(Error::invalid("experiments", "localize.b covers no element"));
    }
    // B compactly inside U: every element sharing a node with B lies in U.
    let mut b_nodes = BTreeSet::new();
    for &e in &b_set {
        b_nodes.extend(mesh.elements[e]);
    }
    for e in 0..mesh.elements.len() {
        if mesh.elements[e].iter().any(|v| b_nodes.contains(v)) && !u_set.contains(&e) {
            return Err(Error::invalid(
                "experiments",
                "localize.b is not compactly contained in localize.u",
            ));
        }
    }
    // U must reach the Neumann boundary.
    let touches = mesh.neumann_edges().iter().any(|&k| {
        let [p, q] = mesh.boundary_edges[k].nodes;
        let mid = [
            (mesh.nodes[p][0] + mesh.nodes[q][0]) / 2.0,
            (mesh.nodes[p][1] + mesh.nodes[q][1]) / 2.0,
        ];
        loc.u.contains(mid)
    });
    if !touches {
        return Err(Error::invalid(
            "experiments",
            "localize.u does not intersect the Neumann boundary",
        ));
    }

    let fields = prep.background_fields()?;
    let b_elems: Vec<usize> = b_set.iter().copied().collect();
    let outside: Vec<usize> = (0..mesh.elements.len())
        .filter(|e| !u_set.contains(e))
        .collect();
    let g_b = fields.region_gram(&b_elems, 1.0, 1.0);
    let g_out = fields.region_gram(&outside, 1.0, 1.0);

    let dim = g_b.nrows();
    let sigma = match loc.sigma {
        Some(s) => s,
        None => 1e-10 * g_out.trace() / dim as f64,
    };
    if !(sigma > 0.0) {
        return Err(Error::invalid(
            "experiments",
            format!("localization regularizer sigma = {sigma} must be positive"),
        ));
    }

    let mut pencil = g_out.clone();
    for i in 0..dim {
        pencil[(i, i)] += sigma;
    }
    let chol = pencil.cholesky().ok_or_else(|| {
        Error::numerical("experiments", "regularized outside-Gram not positive definite")
    })?;
    let l = chol.l();
    // C = L^-1 G_B L^-T, symmetric similar to the pencil problem.
    let y = l
        .solve_lower_triangular(&g_b)
        .ok_or_else(|| Error::numerical("experiments", "triangular solve failed"))?;
    let c = l
        .solve_lower_triangular(&y.transpose())
        .ok_or_else(|| Error::numerical("experiments", "triangular solve failed"))?;
    let c = (&c + c.transpose()) / 2.0;
    let eig = c.symmetric_eigen();

    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let k = loc.top_k.min(dim);
    let mut ratios = Vec::with_capacity(k);
    let mut loads = Vec::with_capacity(k);
    for &idx in order.iter().take(k) {
        ratios.push(eig.eigenvalues[idx]);
        let v = eig.eigenvectors.column(idx).into_owned();
        let x = l
            .transpose()
            .solve_upper_triangular(&v)
            .ok_or_else(|| Error::numerical("experiments", "triangular solve failed"))?;
        let x = &x / x.norm();
        loads.push(x.iter().copied().collect());
    }
    Ok(LocalizeReport {
        ratios,
        loads,
        sigma,
        dim,
    })
}

/// Calibration result on background-only data.
#[derive(Debug, Clone, Serialize)]
pub struct CalibrationReport {
    pub tau: f64,
    pub worst_min_eig: f64,
    pub n_tests: usize,
    pub noise_delta: f64,
}

/// Calibrate the Loewner threshold: run the configured outer test family on
/// a background-only duplicate and set
/// `tau = 2 |worst negative min-eig| + noise_delta`.
pub fn calibrate_tau(scenario: &Scenario) -> Result<CalibrationReport> {
    let bg_scenario = scenario.background_only();
    let prep = bg_scenario.prepare()?;
    let measured = measure_nd_matrix(
        &prep.mesh,
        &prep.phantom,
        &prep.basis,
        bg_scenario.scenario_data_refinement(),
        0.0,
        0,
    )?;
    let grid = prep.grid()?;
    let mut kit = TestKit::new(&prep.mesh, &prep.background, &prep.basis, 0.0)?;
    kit.selection = scenario.test.sides;
    let tests = outer_family(&measured, &grid, &kit)?;
    let worst = tests
        .iter()
        .map(|t| t.worst())
        .fold(f64::INFINITY, f64::min);
    let tau = 2.0 * worst.min(0.0).abs() + scenario.noise_delta;
    Ok(CalibrationReport {
        tau,
        worst_min_eig: worst,
        n_tests: tests.len(),
        noise_delta: scenario.noise_delta,
    })
}

impl Scenario {
    fn scenario_data_refinement(&self) -> usize {
        self.mesh.data_refinement
    }

    /// Resolve the scenario threshold, calibrating when requested.
    pub fn resolve_tau(&self) -> Result<(f64, Option<CalibrationReport>)> {
        match self.test.tau {
            TauSpec::Fixed(t) => Ok((t + self.noise_delta, None)),
            TauSpec::Named(_) => {
                let report = calibrate_tau(self)?;
                Ok((report.tau, Some(report)))
            }
        }
    }
}
