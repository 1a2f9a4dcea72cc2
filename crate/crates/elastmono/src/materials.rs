//! Lamé parameter fields with finite, cavity, and rigid states.
//!
//! A field assigns one state per element over a fixed mesh. Finite states
//! carry positive (lambda, mu); Cavity stands for vanishing parameters and
//! Rigid for infinite ones. The constant background pair is kept alongside
//! for truncation, test operators, and the extension into cavities.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{self, Mesh};

/// Material state of a single element.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LameState {
    Finite { lambda: f64, mu: f64 },
    Cavity,
    Rigid,
}

impl LameState {
    /// Finite (lambda, mu) pair, if this state is finite.
    pub fn lame(&self) -> Option<(f64, f64)> {
        match self {
            LameState::Finite { lambda, mu } => Some((*lambda, *mu)),
            _ => None,
        }
    }
}

/// Per-element material field over a mesh, plus the constant background pair.
#[derive(Debug, Clone, PartialEq)]
pub struct LameField {
    states: Vec<LameState>,
    background: (f64, f64),
}

impl LameField {
    /// Homogeneous background field.
    pub fn homogeneous(mesh: &Mesh, background: (f64, f64)) -> Result<Self> {
        if !(background.0 > 0.0 && background.1 > 0.0) {
            return Err(Error::invalid(
                "materials",
                format!(
                    "background ({}, {}) must be positive",
                    background.0, background.1
                ),
            ));
        }
        Ok(LameField {
            states: vec![
                LameState::Finite {
                    lambda: background.0,
                    mu: background.1
                };
                mesh.elements.len()
            ],
            background,
        })
    }

    pub fn background(&self) -> (f64, f64) {
        self.background
    }

    pub fn states(&self) -> &[LameState] {
        &self.states
    }

    pub fn state(&self, e: usize) -> LameState {
        self.states[e]
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn all_finite(&self) -> bool {
        self.states
            .iter()
            .all(|s| matches!(s, LameState::Finite { .. }))
    }

    pub fn has_extreme(&self) -> bool {
        !self.all_finite()
    }

    pub fn cavity_elements(&self) -> Vec<usize> {
        (0..self.states.len())
            .filter(|&e| self.states[e] == LameState::Cavity)
            .collect()
    }

    pub fn rigid_elements(&self) -> Vec<usize> {
        (0..self.states.len())
            .filter(|&e| self.states[e] == LameState::Rigid)
            .collect()
    }

    /// Copy with the given elements overwritten by one state.
    ///
    /// This is the raw constructor used for test operators (where e.g. a
    /// test cavity may isolate part of the domain); it performs no phantom
    /// validation. Use `make_lame_field` for measured-data phantoms.
    pub fn with_elements_state(&self, elements: &[usize], state: LameState) -> LameField {
        let mut out = self.clone();
        for &e in elements {
            out.states[e] = state;
        }
        out
    }

    /// Field on the once-refined mesh: child `4e+k` inherits element `e`.
    pub fn refined(&self) -> LameField {
        let mut states = Vec::with_capacity(4 * self.states.len());
        for s in &self.states {
            states.extend(std::iter::repeat_n(*s, 4));
        }
        LameField {
            states,
            background: self.background,
        }
    }
}

/// Build a field from region-name assignments over a labeled mesh.
///
/// Elements of unassigned regions carry the finite background pair. Errors
/// on non-positive finite parameters, unknown region names, and cavity
/// regions that disconnect the background.
pub fn make_lame_field(
    mesh: &Mesh,
    background: (f64, f64),
    assignments: &BTreeMap<String, LameState>,
) -> Result<LameField> {
    let mut field = LameField::homogeneous(mesh, background)?;
    for (name, state) in assignments {
        let region = mesh.region_index(name).ok_or_else(|| {
            Error::invalid(
                "materials",
                format!("assignment references unknown region '{name}'"),
            )
        })?;
        if let LameState::Finite { lambda, mu } = state {
            if !(*lambda > 0.0 && *mu > 0.0) {
                return Err(Error::invalid(
                    "materials",
                    format!(
                        "region '{name}': finite parameters ({lambda}, {mu}) must be positive"
                    ),
                ));
            }
        }
        for e in mesh.region_elements(region) {
            field.states[e] = *state;
        }
    }

    // Assumption: the complement of the cavity set stays edge-connected, so
    // the displacement field on it reaches the Dirichlet boundary.
    let non_cavity: Vec<bool> = field
        .states
        .iter()
        .map(|s| *s != LameState::Cavity)
        .collect();
    if non_cavity.iter().any(|&b| b) {
        let comps = mesh::components_by_edge(mesh, &non_cavity);
        if comps.len() > 1 {
            return Err(Error::invalid(
                "materials",
                format!(
                    "cavity regions disconnect the background into {} components",
                    comps.len()
                ),
            ));
        }
    }
    Ok(field)
}

/// Replace extreme states by their epsilon-truncated finite counterparts:
/// cavities get (eps*lambda0, eps*mu0), rigid regions (lambda0/eps, mu0/eps).
pub fn truncate_extreme(field: &LameField, eps: f64) -> Result<LameField> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::invalid(
            "materials",
            format!("truncation level eps = {eps} must lie in (0, 1)"),
        ));
    }
    let (l0, m0) = field.background;
    let states = field
        .states
        .iter()
        .map(|s| match s {
            LameState::Finite { .. } => *s,
            LameState::Cavity => LameState::Finite {
                lambda: eps * l0,
                mu: eps * m0,
            },
            LameState::Rigid => LameState::Finite {
                lambda: l0 / eps,
                mu: m0 / eps,
            },
        })
        .collect();
    Ok(LameField {
        states,
        background: field.background,
    })
}

/// Background bounds entering the linearized contrast conditions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaBounds {
    /// min of the background pair.
    pub beta_l: f64,
    /// max of the background pair.
    pub beta_u: f64,
    /// Admissible-contrast bound for the inner tests; equals `beta_l`.
    pub kappa: f64,
}

impl BetaBounds {
    pub fn from_background(background: (f64, f64)) -> Self {
        let beta_l = background.0.min(background.1);
        let beta_u = background.0.max(background.1);
        BetaBounds {
            beta_l,
            beta_u,
            kappa: beta_l,
        }
    }
}

/// Check the contrast hypotheses of the linearized outer test: the positive
/// deviation must satisfy `max sup(lambda_+ - lambda_0), sup(mu_+ - mu_0) <= beta`
/// and the negative one `min inf(lambda_- - lambda_0), inf(mu_- - mu_0) >= -beta/(1+beta) * beta_l`.
pub fn validate_linearized_bounds(
    field: &LameField,
    beta: f64,
    bounds: &BetaBounds,
) -> Result<()> {
    if field.has_extreme() {
        return Err(Error::invalid(
            "materials",
            "linearized bounds are only defined for all-finite (non-extreme) fields",
        ));
    }
    if !(beta > 0.0) {
        return Err(Error::invalid(
            "materials",
            format!("contrast bound beta = {beta} must be positive"),
        ));
    }
    let (l0, m0) = field.background;
    let mut sup_pos = 0.0_f64;
    let mut inf_neg = 0.0_f64;
    for s in &field.states {
        let (l, m) = s.lame().expect("all-finite checked above");
        sup_pos = sup_pos.max(l - l0).max(m - m0);
        inf_neg = inf_neg.min(l - l0).min(m - m0);
    }
    if sup_pos > beta {
        return Err(Error::invalid(
            "materials",
            format!(
                "positive contrast {sup_pos} exceeds beta = {beta} (upper contrast bound violated)"
            ),
        ));
    }
    let neg_limit = -beta / (1.0 + beta) * bounds.beta_l;
    if inf_neg < neg_limit {
        return Err(Error::invalid(
            "materials",
            format!(
                "negative contrast {inf_neg} below {neg_limit} (lower contrast bound violated)"
            ),
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_unit_square_mesh, label_regions, RegionSpec, Shape, Side};
    use std::collections::BTreeSet;

    fn mesh_with_regions(n: usize) -> Mesh {
        let sides: BTreeSet<Side> = [Side::Bottom].into_iter().collect();
        let mesh = build_unit_square_mesh(n, &sides).unwrap();
        label_regions(
            &mesh,
            &[
                RegionSpec {
                    id: "disc".into(),
                    shape: Shape::Disc {
                        center: [0.35, 0.6],
                        radius: 0.15,
                    },
                },
                RegionSpec {
                    id: "rect".into(),
                    shape: Shape::Rect {
                        lo: [0.6, 0.3],
                        hi: [0.8, 0.5],
                    },
                },
            ],
        )
        .unwrap()
    }

    #[test]
    fn homogeneous_field() {
        let mesh = mesh_with_regions(8);
        let field = make_lame_field(&mesh, (1.0, 1.0), &BTreeMap::new()).unwrap();
        assert!(field.all_finite());
        assert!(field
            .states()
            .iter()
            .all(|s| s.lame() == Some((1.0, 1.0))));
    }

    #[test]
    fn rejects_non_positive_finite() {
        let mesh = mesh_with_regions(8);
        let mut asg = BTreeMap::new();
        asg.insert(
            "disc".to_string(),
            LameState::Finite {
                lambda: 0.0,
                mu: 1.0,
            },
        );
        assert!(make_lame_field(&mesh, (1.0, 1.0), &asg).is_err());
        assert!(LameField::homogeneous(&mesh, (-1.0, 1.0)).is_err());
    }

    #[test]
    fn mixed_extreme_field() {
        let mesh = mesh_with_regions(12);
        let mut asg = BTreeMap::new();
        asg.insert("disc".to_string(), LameState::Rigid);
        asg.insert("rect".to_string(), LameState::Cavity);
        let field = make_lame_field(&mesh, (1.0, 1.0), &asg).unwrap();
        assert!(!field.rigid_elements().is_empty());
        assert!(!field.cavity_elements().is_empty());
        assert!(field.has_extreme());
    }

    #[test]
    fn unknown_region_rejected() {
        let mesh = mesh_with_regions(8);
        let mut asg = BTreeMap::new();
        asg.insert("nope".to_string(), LameState::Rigid);
        assert!(make_lame_field(&mesh, (1.0, 1.0), &asg).is_err());
    }

    #[test]
    fn truncate_formulas() {
        let mesh = mesh_with_regions(12);
        let mut asg = BTreeMap::new();
        asg.insert("disc".to_string(), LameState::Rigid);
        asg.insert("rect".to_string(), LameState::Cavity);
        let field = make_lame_field(&mesh, (1.0, 2.0), &asg).unwrap();

        let t = truncate_extreme(&field, 1e-3).unwrap();
        assert!(t.all_finite());
        for e in field.rigid_elements() {
            assert_eq!(t.state(e).lame(), Some((1000.0, 2000.0)));
        }
        for e in field.cavity_elements() {
            assert_eq!(t.state(e).lame(), Some((1e-3, 2e-3)));
        }
        // Finite elements untouched.
        for (e, s) in field.states().iter().enumerate() {
            if s.lame().is_some() {
                assert_eq!(t.state(e), *s);
            }
        }
    }

    #[test]
    fn truncate_identity_on_finite_field() {
        let mesh = mesh_with_regions(8);
        let field = make_lame_field(&mesh, (1.0, 1.0), &BTreeMap::new()).unwrap();
        let t = truncate_extreme(&field, 0.37).unwrap();
        assert_eq!(t, field);
    }

    #[test]
    fn truncate_rejects_bad_eps() {
        let mesh = mesh_with_regions(8);
        let field = make_lame_field(&mesh, (1.0, 1.0), &BTreeMap::new()).unwrap();
        assert!(truncate_extreme(&field, 0.0).is_err());
        assert!(truncate_extreme(&field, 1.0).is_err());
        assert!(truncate_extreme(&field, -0.5).is_err());
    }

    #[test]
    fn truncate_monotone_in_eps() {
        let mesh = mesh_with_regions(16);
        let mut asg = BTreeMap::new();
        asg.insert("disc".to_string(), LameState::Rigid);
        asg.insert("rect".to_string(), LameState::Cavity);
        let field = make_lame_field(&mesh, (1.0, 1.0), &asg).unwrap();
        let ladder = [1e-1, 3e-2, 1e-2, 3e-3, 1e-3];
        for w in ladder.windows(2) {
            let (big, small) = (w[0], w[1]);
            let tb = truncate_extreme(&field, big).unwrap();
            let ts = truncate_extreme(&field, small).unwrap();
            for e in field.cavity_elements() {
                assert!(ts.state(e).lame().unwrap().0 <= tb.state(e).lame().unwrap().0);
            }
            for e in field.rigid_elements() {
                assert!(ts.state(e).lame().unwrap().0 >= tb.state(e).lame().unwrap().0);
            }
        }
    }

    #[test]
    fn cavity_disconnecting_background_rejected() {
        // A full-width cavity band splits the square in two.
        let sides: BTreeSet<Side> = [Side::Bottom].into_iter().collect();
        let mesh = build_unit_square_mesh(8, &sides).unwrap();
        let labeled = label_regions(
            &mesh,
            &[RegionSpec {
                id: "band".into(),
                shape: Shape::Rect {
                    lo: [0.125, 0.4],
                    hi: [0.875, 0.6],
                },
            }],
        )
        .unwrap();
        // The band keeps the one-element margin, so the remaining material
        // stays connected around it: this one must pass.
        let mut asg = BTreeMap::new();
        asg.insert("band".to_string(), LameState::Cavity);
        assert!(make_lame_field(&labeled, (1.0, 1.0), &asg).is_ok());

        // Manually carving the band across the full width must fail.
        let field = LameField::homogeneous(&mesh, (1.0, 1.0)).unwrap();
        let band: Vec<usize> = mesh.elements_in_shape(&Shape::Rect {
            lo: [0.0, 0.4],
            hi: [1.0, 0.6],
        });
        let cut = field.with_elements_state(&band, LameState::Cavity);
        let non_cavity: Vec<bool> = cut
            .states()
            .iter()
            .map(|s| *s != LameState::Cavity)
            .collect();
        assert!(crate::mesh::components_by_edge(&mesh, &non_cavity).len() > 1);
    }

    #[test]
    fn beta_bounds_from_constant_background() {
        let b = BetaBounds::from_background((1.5, 0.5));
        assert_eq!(b.beta_l, 0.5);
        assert_eq!(b.beta_u, 1.5);
        assert_eq!(b.kappa, 0.5);
    }

    #[test]
    fn linearized_bounds_checks() {
        let mesh = mesh_with_regions(8);
        let mut asg = BTreeMap::new();
        asg.insert(
            "disc".to_string(),
            LameState::Finite {
                lambda: 3.0,
                mu: 3.0,
            },
        );
        let field = make_lame_field(&mesh, (1.0, 1.0), &asg).unwrap();
        let bounds = BetaBounds::from_background((1.0, 1.0));
        assert!(validate_linearized_bounds(&field, 2.0, &bounds).is_ok());
        assert!(validate_linearized_bounds(&field, 1.5, &bounds).is_err());

        // Negative contrast 0.5 against beta = 2: need -0.5 >= -(2/3)*1.
        let mut asg = BTreeMap::new();
        asg.insert(
            "disc".to_string(),
            LameState::Finite {
                lambda: 0.5,
                mu: 0.5,
            },
        );
        let field = make_lame_field(&mesh, (1.0, 1.0), &asg).unwrap();
        assert!(validate_linearized_bounds(&field, 2.0, &bounds).is_ok());
        // beta = 0.5 gives limit -(1/3): violated by -0.5.
        assert!(validate_linearized_bounds(&field, 0.5, &bounds).is_err());
    }

    #[test]
    fn linearized_bounds_reject_extreme() {
        let mesh = mesh_with_regions(8);
        let mut asg = BTreeMap::new();
        asg.insert("disc".to_string(), LameState::Rigid);
        let field = make_lame_field(&mesh, (1.0, 1.0), &asg).unwrap();
        let bounds = BetaBounds::from_background((1.0, 1.0));
        assert!(validate_linearized_bounds(&field, 2.0, &bounds).is_err());
    }
}
