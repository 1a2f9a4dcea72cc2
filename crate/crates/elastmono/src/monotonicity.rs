//! Loewner-order tests comparing measured ND data against test operators.
//!
//! A test passes when the smallest eigenvalue of the (symmetrized)
//! difference matrix stays above `-tau`, where `tau` is the regularization
//! threshold calibrated on background-only data: the underlying operator
//! inequalities are exact for infinite-dimensional data, and `tau` absorbs
//! what discretization breaks.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::materials::{BetaBounds, LameField, LameState};
use crate::mesh::Mesh;
use crate::ndmap::{
    assemble_nd_matrix, BackgroundFields, ExtremeOpMode, LoadBasis, NdMatrix,
};

/// Outcome of one semidefiniteness test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoewnerResult {
    /// Smallest eigenvalue of the symmetrized difference.
    pub min_eig: f64,
    /// Whether `min_eig >= -tau`.
    pub holds: bool,
    /// Threshold used for the verdict.
    pub tau: f64,
}

impl LoewnerResult {
    pub fn new(min_eig: f64, tau: f64) -> Self {
        LoewnerResult {
            min_eig,
            holds: min_eig >= -tau,
            tau,
        }
    }
}

/// Smallest eigenvalue of `A - B` on matching bases.
pub fn loewner_min_eig(a: &NdMatrix, b: &NdMatrix) -> Result<f64> {
    a.check_compatible(b, "monotonicity")?;
    let diff = &a.matrix - &b.matrix;
    Ok(sym_min_eig(&diff))
}

/// Smallest eigenvalue of an exactly symmetrized matrix.
pub fn sym_min_eig(m: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) / 2.0;
    sym.symmetric_eigen()
        .eigenvalues
        .iter()
        .fold(f64::INFINITY, |a, &b| a.min(b))
}

/// Which of the two operator inequalities a test consults.
///
/// Purely positive inclusions only need the comparison against the rigid
/// test operator, purely negative ones only the cavity comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum InequalitySelection {
    #[default]
    Both,
    /// Only `measured >= (rigid-type operator)`.
    Positive,
    /// Only `(cavity-type operator) >= measured`.
    Negative,
}

/// Full (nonlinear) or linearized test operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TestMode {
    #[default]
    Full,
    Linearized,
}

/// Inner-test direction: probing inside rigid or cavity inclusions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum InnerSign {
    #[default]
    Positive,
    Negative,
}

/// Shared context for the shape tests: background data, basis, threshold.
pub struct TestKit<'a> {
    pub mesh: &'a Mesh,
    /// Homogeneous background field.
    pub background: &'a LameField,
    pub basis: &'a LoadBasis,
    pub tau: f64,
    pub extreme_mode: ExtremeOpMode,
    pub selection: InequalitySelection,
    /// Required by the linearized modes; holds the stored element fields.
    pub background_fields: Option<&'a BackgroundFields>,
    /// When present, the linearized outer test validates the contrast
    /// bounds against this phantom.
    pub phantom: Option<&'a LameField>,
}

impl<'a> TestKit<'a> {
    pub fn new(
        mesh: &'a Mesh,
        background: &'a LameField,
        basis: &'a LoadBasis,
        tau: f64,
    ) -> Result<Self> {
        if tau < 0.0 {
            return Err(Error::invalid(
                "monotonicity",
                format!("threshold tau = {tau} must be non-negative"),
            ));
        }
        Ok(TestKit {
            mesh,
            background,
            basis,
            tau,
            extreme_mode: ExtremeOpMode::Constrained,
            selection: InequalitySelection::Both,
            background_fields: None,
            phantom: None,
        })
    }

    pub fn kappa(&self) -> f64 {
        BetaBounds::from_background(self.background.background()).kappa
    }

    fn need_background_fields(&self) -> Result<&'a BackgroundFields> {
        self.background_fields.ok_or_else(|| {
            Error::invalid(
                "monotonicity",
                "linearized mode requires precomputed background fields",
            )
        })
    }

    /// ND operator with the background everywhere except `region`, which
    /// carries the given state.
    pub fn region_operator(&self, region: &[usize], state: LameState) -> Result<NdMatrix> {
        if region.is_empty() {
            return Err(Error::invalid(
                "monotonicity",
                "test region must be non-empty",
            ));
        }
        let field = self.background.with_elements_state(region, state);
        assemble_nd_matrix(self.mesh, &field, self.basis, self.extreme_mode)
    }

    fn perturbed_operator(&self, region: &[usize], beta: f64) -> Result<NdMatrix> {
        let (l0, m0) = self.background.background();
        self.region_operator(
            region,
            LameState::Finite {
                lambda: l0 + beta,
                mu: m0 + beta,
            },
        )
    }
}

/// Result of the two-sided outer test for one test set.
#[derive(Debug, Clone, Copy)]
pub struct OuterResult {
    /// `Lambda_C_cavity - measured`, when consulted.
    pub cavity_side: Option<LoewnerResult>,
    /// `measured - Lambda_C_rigid`, when consulted.
    pub rigid_side: Option<LoewnerResult>,
    pub holds: bool,
}

impl OuterResult {
    fn from_sides(cavity: Option<LoewnerResult>, rigid: Option<LoewnerResult>) -> Self {
        let holds = cavity.map(|r| r.holds).unwrap_or(true)
            && rigid.map(|r| r.holds).unwrap_or(true);
        OuterResult {
            cavity_side: cavity,
            rigid_side: rigid,
            holds,
        }
    }

    /// Most violated consulted indicator.
    pub fn worst(&self) -> f64 {
        [self.cavity_side, self.rigid_side]
            .into_iter()
            .flatten()
            .map(|r| r.min_eig)
            .fold(f64::INFINITY, f64::min)
    }
}

/// Outer test: does the test set `C` contain all inclusions?
///
/// Assembles the cavity and rigid test operators for `C` and checks
/// `Lambda_C_cavity >= measured >= Lambda_C_rigid` up to `tau`.
pub fn outer_test(measured: &NdMatrix, c: &[usize], kit: &TestKit) -> Result<OuterResult> {
    let cavity = match kit.selection {
        InequalitySelection::Positive => None,
        _ => {
            let op = kit.region_operator(c, LameState::Cavity)?;
            Some(LoewnerResult::new(loewner_min_eig(&op, measured)?, kit.tau))
        }
    };
    let rigid = match kit.selection {
        InequalitySelection::Negative => None,
        _ => {
            let op = kit.region_operator(c, LameState::Rigid)?;
            Some(LoewnerResult::new(loewner_min_eig(measured, &op)?, kit.tau))
        }
    };
    Ok(OuterResult::from_sides(cavity, rigid))
}

/// Inner test for rigid (positive-extreme) inclusions: does the probe set
/// `B` lie inside the inclusion? Checks `op(beta, B) >= measured` where the
/// operator is the perturbed ND map (full) or its linearization.
pub fn inner_test_pos(
    measured: &NdMatrix,
    b: &[usize],
    beta: f64,
    mode: TestMode,
    kit: &TestKit,
) -> Result<LoewnerResult> {
    let op = match mode {
        TestMode::Full => {
            if !(beta > 0.0) {
                return Err(Error::invalid(
                    "monotonicity",
                    format!("inner positive test needs beta > 0, got {beta}"),
                ));
            }
            kit.perturbed_operator(b, beta)?
        }
        TestMode::Linearized => {
            let kappa = kit.kappa();
            if !(beta > 0.0 && beta < kappa) {
                return Err(Error::invalid(
                    "monotonicity",
                    format!(
                        "linearized inner test needs 0 < beta < min(lambda0, mu0) = {kappa}, got {beta}"
                    ),
                ));
            }
            kit.need_background_fields()?.linearized_nd(b, beta)?
        }
    };
    Ok(LoewnerResult::new(loewner_min_eig(&op, measured)?, kit.tau))
}

/// Inner test for cavity (negative-extreme) inclusions: checks
/// `measured >= op(-beta, B)`.
pub fn inner_test_neg(
    measured: &NdMatrix,
    b: &[usize],
    beta: f64,
    mode: TestMode,
    kit: &TestKit,
) -> Result<LoewnerResult> {
    let kappa = kit.kappa();
    if !(beta > 0.0 && beta < kappa) {
        return Err(Error::invalid(
            "monotonicity",
            format!(
                "inner negative test needs 0 < beta < min(lambda0, mu0) = {kappa}, got {beta}"
            ),
        ));
    }
    let op = match mode {
        TestMode::Full => kit.perturbed_operator(b, -beta)?,
        TestMode::Linearized => kit.need_background_fields()?.linearized_nd(b, -beta)?,
    };
    Ok(LoewnerResult::new(loewner_min_eig(measured, &op)?, kit.tau))
}

/// Linearized outer test for non-extreme inclusions:
/// `Lambda_0 + DL_{-betaU*beta, C} >= measured >= Lambda_0 + DL_{beta, C}`.
pub fn linearized_outer_test(
    measured: &NdMatrix,
    c: &[usize],
    beta: f64,
    bounds: &BetaBounds,
    kit: &TestKit,
) -> Result<OuterResult> {
    if let Some(phantom) = kit.phantom {
        crate::materials::validate_linearized_bounds(phantom, beta, bounds)?;
    } else if !(beta > 0.0) {
        return Err(Error::invalid(
            "monotonicity",
            format!("contrast bound beta = {beta} must be positive"),
        ));
    }
    if c.is_empty() {
        return Err(Error::invalid(
            "monotonicity",
            "test region must be non-empty",
        ));
    }
    let fields = kit.need_background_fields()?;
    let upper_op = fields.linearized_nd(c, -bounds.beta_u * beta)?;
    let lower_op = fields.linearized_nd(c, beta)?;
    let cavity = match kit.selection {
        InequalitySelection::Positive => None,
        _ => Some(LoewnerResult::new(
            loewner_min_eig(&upper_op, measured)?,
            kit.tau,
        )),
    };
    let rigid = match kit.selection {
        InequalitySelection::Negative => None,
        _ => Some(LoewnerResult::new(
            loewner_min_eig(measured, &lower_op)?,
            kit.tau,
        )),
    };
    Ok(OuterResult::from_sides(cavity, rigid))
}
