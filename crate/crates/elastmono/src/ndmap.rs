//! Discrete Neumann-to-Dirichlet operators in an orthonormal boundary-load
//! basis.
//!
//! The basis consists of per-Neumann-edge indicator loads in x and y,
//! scaled by 1/sqrt(edge length); supports are disjoint so the basis is
//! orthonormal in L2 on the Neumann boundary by construction. An ND matrix
//! holds `M[j][k] = <Lambda g_k, g_j>`, is stamped with the basis
//! fingerprint, and records which field produced it together with its
//! pre-symmetrization asymmetry.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fem::{assemble_system, boundary_pairing, Displacement, EdgeLoad};
use crate::materials::{truncate_extreme, LameField, LameState};
use crate::mesh::{refine, Mesh};

/// One basis load: a constant unit-norm traction along a single edge.
#[derive(Debug, Clone, Copy)]
pub struct BasisLoad {
    /// Index into `mesh.boundary_edges`.
    pub edge: usize,
    /// 0 for x, 1 for y.
    pub axis: usize,
    /// Normalization 1/sqrt(edge length).
    pub scale: f64,
}

impl BasisLoad {
    pub fn as_edge_load(&self) -> EdgeLoad {
        let mut g = [0.0; 2];
        g[self.axis] = self.scale;
        (self.edge, g)
    }
}

/// Orthonormal boundary-load basis tied to a specific mesh boundary.
#[derive(Debug, Clone)]
pub struct LoadBasis {
    pub loads: Vec<BasisLoad>,
    pub fingerprint: String,
}

impl LoadBasis {
    pub fn len(&self) -> usize {
        self.loads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.loads.is_empty()
    }
}

/// Fingerprint of the mesh boundary plus the basis construction parameters.
fn boundary_fingerprint(mesh: &Mesh) -> String {
    let mut hasher = Sha256::new();
    hasher.update(b"edge-indicator-basis-v1");
    for edge in &mesh.boundary_edges {
        for &v in &edge.nodes {
            hasher.update(mesh.nodes[v][0].to_le_bytes());
            hasher.update(mesh.nodes[v][1].to_le_bytes());
        }
        hasher.update([matches!(edge.tag, crate::mesh::BoundaryTag::Neumann) as u8]);
    }
    hex::encode(&hasher.finalize()[..8])
}

/// Build the per-edge indicator basis on the Neumann boundary.
pub fn build_load_basis(mesh: &Mesh) -> Result<LoadBasis> {
    let edges = mesh.neumann_edges();
    if edges.is_empty() {
        return Err(Error::invalid("ndmap", "mesh has no Neumann edges"));
    }
    let mut loads = Vec::with_capacity(2 * edges.len());
    for e in edges {
        let len = mesh.edge_length(mesh.boundary_edges[e].nodes);
        let scale = 1.0 / len.sqrt();
        for axis in 0..2 {
            loads.push(BasisLoad {
                edge: e,
                axis,
                scale,
            });
        }
    }
    Ok(LoadBasis {
        loads,
        fingerprint: boundary_fingerprint(mesh),
    })
}

/// Dense symmetric ND (or linearized ND) matrix in a fixed load basis.
#[derive(Debug, Clone)]
pub struct NdMatrix {
    pub matrix: DMatrix<f64>,
    pub fingerprint: String,
    pub provenance: String,
    /// Relative spectral asymmetry logged before symmetrization.
    pub presym_asymmetry: f64,
}

impl NdMatrix {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Wrap a raw symmetric matrix (used by parsing and tests).
    pub fn new_raw(matrix: DMatrix<f64>, fingerprint: String, provenance: String) -> Self {
        NdMatrix {
            matrix,
            fingerprint,
            provenance,
            presym_asymmetry: 0.0,
        }
    }

    pub(crate) fn check_compatible(&self, other: &NdMatrix, module: &'static str) -> Result<()> {
        if self.fingerprint != other.fingerprint {
            return Err(Error::invalid(
                module,
                format!(
                    "basis fingerprint mismatch: {} vs {} (operators live in different bases)",
                    self.fingerprint, other.fingerprint
                ),
            ));
        }
        if self.dim() != other.dim() {
            return Err(Error::invalid(
                module,
                format!("dimension mismatch: {} vs {}", self.dim(), other.dim()),
            ));
        }
        Ok(())
    }

    /// Entry-wise sum, used to form linearized test operators.
    pub fn add(&self, other: &NdMatrix) -> Result<NdMatrix> {
        self.check_compatible(other, "ndmap")?;
        Ok(NdMatrix {
            matrix: &self.matrix + &other.matrix,
            fingerprint: self.fingerprint.clone(),
            provenance: format!("{} + {}", self.provenance, other.provenance),
            presym_asymmetry: self.presym_asymmetry.max(other.presym_asymmetry),
        })
    }

    /// Symmetric additive perturbation with the given spectral norm.
    pub fn add_symmetric_noise(&mut self, delta: f64, seed: u64) {
        if delta <= 0.0 {
            return;
        }
        let n = self.dim();
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
        let raw = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let mut noise = (&raw + raw.transpose()) / 2.0;
        let norm = spectral_norm_symmetric(&noise);
        if norm > 0.0 {
            noise *= delta / norm;
            self.matrix += noise;
            self.provenance = format!("{} + noise(delta={delta:.3e})", self.provenance);
        }
    }

    /// Plain-text serialization: header plus row-major values with 17
    /// significant digits (binary64 round-trip exact).
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str("# ndmatrix v1\n");
        s.push_str(&format!("# fingerprint {}\n", self.fingerprint));
        s.push_str(&format!(
            "# provenance {}\n",
            self.provenance.replace('\n', " ")
        ));
        s.push_str(&format!("# presym_asymmetry {:.16e}\n", self.presym_asymmetry));
        s.push_str(&format!("# dim {}\n", self.dim()));
        for i in 0..self.dim() {
            let row: Vec<String> = (0..self.dim())
                .map(|j| format!("{:.16e}", self.matrix[(i, j)]))
                .collect();
            s.push_str(&row.join(" "));
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<NdMatrix> {
        let bad = |m: &str| Error::invalid("ndmap", format!("ndmatrix parse: {m}"));
        let mut fingerprint = None;
        let mut provenance = String::new();
        let mut presym = 0.0;
        let mut dim = None;
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                let rest = rest.trim();
                if let Some(v) = rest.strip_prefix("fingerprint ") {
                    fingerprint = Some(v.to_string());
                } else if let Some(v) = rest.strip_prefix("provenance ") {
                    provenance = v.to_string();
                } else if let Some(v) = rest.strip_prefix("presym_asymmetry ") {
                    presym = v.parse().map_err(|_| bad("bad asymmetry"))?;
                } else if let Some(v) = rest.strip_prefix("dim ") {
                    dim = Some(v.parse::<usize>().map_err(|_| bad("bad dim"))?);
                }
                continue;
            }
            let row: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|_| bad("bad value")))
                .collect::<Result<_>>()?;
            rows.push(row);
        }
        let dim = dim.ok_or_else(|| bad("missing dim header"))?;
        if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
            return Err(bad("row/column count does not match dim"));
        }
        let matrix = DMatrix::from_fn(dim, dim, |i, j| rows[i][j]);
        Ok(NdMatrix {
            matrix,
            fingerprint: fingerprint.ok_or_else(|| bad("missing fingerprint header"))?,
            provenance,
            presym_asymmetry: presym,
        })
    }
}

/// Spectral norm of a symmetric matrix (largest |eigenvalue|).
pub fn spectral_norm_symmetric(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    m.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .fold(0.0f64, |acc, &v| acc.max(v.abs()))
}

/// Spectral norm of a general square matrix via the Gram eigenvalues.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    let gram = m.transpose() * m;
    gram.symmetric_eigen()
        .eigenvalues
        .iter()
        .fold(0.0f64, |acc, &v| acc.max(v.max(0.0)))
        .sqrt()
}

/// Which discretization realizes the extreme states in a test operator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExtremeOpMode {
    /// Exact constrained solve (cavity removal, rigid condensation).
    Constrained,
    /// Epsilon-truncated finite approximation, for cross-validation.
    Truncated(f64),
}

fn field_tag(field: &LameField) -> String {
    let (l0, m0) = field.background();
    let mut cavity = 0usize;
    let mut rigid = 0usize;
    let mut perturbed = 0usize;
    for s in field.states() {
        match s {
            LameState::Cavity => cavity += 1,
            LameState::Rigid => rigid += 1,
            LameState::Finite { lambda, mu } => {
                if *lambda != l0 || *mu != m0 {
                    perturbed += 1;
                }
            }
        }
    }
    format!("field(bg=({l0},{m0}),cavity={cavity},rigid={rigid},perturbed={perturbed})")
}

/// Assemble the ND matrix of a field: one forward solve per basis load.
pub fn assemble_nd_matrix(
    mesh: &Mesh,
    field: &LameField,
    basis: &LoadBasis,
    mode: ExtremeOpMode,
) -> Result<NdMatrix> {
    let expected = boundary_fingerprint(mesh);
    if basis.fingerprint != expected {
        return Err(Error::invalid(
            "ndmap",
            format!(
                "basis fingerprint {} does not match this mesh ({expected})",
                basis.fingerprint
            ),
        ));
    }
    let (work_field, tag) = match mode {
        ExtremeOpMode::Constrained => (field.clone(), field_tag(field)),
        ExtremeOpMode::Truncated(eps) => (
            truncate_extreme(field, eps)?,
            format!("{},truncated(eps={eps:.3e})", field_tag(field)),
        ),
    };
    let sys = assemble_system(mesh, &work_field)?;
    let m = basis.len();
    let columns: Vec<Vec<f64>> = (0..m)
        .into_par_iter()
        .map(|k| -> Result<Vec<f64>> {
            let u = sys.solve_neumann(&[basis.loads[k].as_edge_load()])?;
            Ok(pairings_with_basis(mesh, basis, &u))
        })
        .collect::<Result<_>>()?;
    let matrix = DMatrix::from_fn(m, m, |j, k| columns[k][j]);
    Ok(finish_symmetric(matrix, basis.fingerprint.clone(), tag))
}

/// `<g_j, u>` for every basis load at once.
fn pairings_with_basis(mesh: &Mesh, basis: &LoadBasis, u: &Displacement) -> Vec<f64> {
    basis
        .loads
        .iter()
        .map(|l| {
            let [p, q] = mesh.boundary_edges[l.edge].nodes;
            let len = mesh.edge_length(mesh.boundary_edges[l.edge].nodes);
            len / 2.0 * l.scale * (u.nodal[p][l.axis] + u.nodal[q][l.axis])
        })
        .collect()
}

fn finish_symmetric(matrix: DMatrix<f64>, fingerprint: String, provenance: String) -> NdMatrix {
    let anti = (&matrix - matrix.transpose()) / 2.0;
    let norm = spectral_norm_symmetric(&((&matrix + matrix.transpose()) / 2.0));
    let presym_asymmetry = if norm > 0.0 {
        // the antisymmetric part is skew, use the general norm
        spectral_norm(&anti) * 2.0 / norm
    } else {
        0.0
    };
    let sym = (&matrix + matrix.transpose()) / 2.0;
    NdMatrix {
        matrix: sym,
        fingerprint,
        provenance,
        presym_asymmetry,
    }
}

/// Generate measured data: solve on a `data_refinement`-times refined mesh
/// and restrict to the coarse basis by edge aggregation, avoiding the
/// inverse crime; optional symmetric noise of spectral norm `noise_delta`.
pub fn measure_nd_matrix(
    mesh: &Mesh,
    field: &LameField,
    basis: &LoadBasis,
    data_refinement: usize,
    noise_delta: f64,
    seed: u64,
) -> Result<NdMatrix> {
    let mut out = if data_refinement == 0 {
        let mut m = assemble_nd_matrix(mesh, field, basis, ExtremeOpMode::Constrained)?;
        m.provenance = format!("measured[{}]", m.provenance);
        m
    } else {
        let mut fine_mesh = mesh.clone();
        let mut fine_field = field.clone();
        for _ in 0..data_refinement {
            fine_mesh = refine(&fine_mesh);
            fine_field = fine_field.refined();
        }
        // Map each fine Neumann edge onto the coarse edge containing it.
        let coarse_edges = mesh.neumann_edges();
        let fine_edges = fine_mesh.neumann_edges();
        let mut children: Vec<Vec<usize>> = vec![Vec::new(); mesh.boundary_edges.len()];
        for &fe in &fine_edges {
            let [p, q] = fine_mesh.boundary_edges[fe].nodes;
            let mid = [
                (fine_mesh.nodes[p][0] + fine_mesh.nodes[q][0]) / 2.0,
                (fine_mesh.nodes[p][1] + fine_mesh.nodes[q][1]) / 2.0,
            ];
            let parent = coarse_edges.iter().copied().find(|&ce| {
                let [a, b] = mesh.boundary_edges[ce].nodes;
                point_on_segment(mesh.nodes[a], mesh.nodes[b], mid)
            });
            match parent {
                Some(ce) => children[ce].push(fe),
                None => {
                    return Err(Error::numerical(
                        "ndmap",
                        "refined Neumann edge not contained in any coarse edge",
                    ))
                }
            }
        }

        let sys = assemble_system(&fine_mesh, &fine_field)?;
        let m = basis.len();
        let fine_load = |k: usize| -> Vec<EdgeLoad> {
            let l = &basis.loads[k];
            let mut g = [0.0; 2];
            g[l.axis] = l.scale;
            children[l.edge].iter().map(|&fe| (fe, g)).collect()
        };
        let columns: Vec<Vec<f64>> = (0..m)
            .into_par_iter()
            .map(|k| -> Result<Vec<f64>> {
                let u = sys.solve_neumann(&fine_load(k))?;
                Ok((0..m)
                    .map(|j| boundary_pairing(&fine_mesh, &fine_load(j), &u))
                    .collect())
            })
            .collect::<Result<_>>()?;
        let matrix = DMatrix::from_fn(m, m, |j, k| columns[k][j]);
        finish_symmetric(
            matrix,
            basis.fingerprint.clone(),
            format!(
                "measured[{},data_refinement={data_refinement}]",
                field_tag(field)
            ),
        )
    };
    out.add_symmetric_noise(noise_delta, seed);
    Ok(out)
}

fn point_on_segment(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> bool {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let ap = [p[0] - a[0], p[1] - a[1]];
    let cross = ab[0] * ap[1] - ab[1] * ap[0];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    if cross.abs() > 1e-12 * len2.sqrt() {
        return false;
    }
    let dot = ab[0] * ap[0] + ab[1] * ap[1];
    dot >= -1e-12 && dot <= len2 + 1e-12
}

/// Background solutions for all basis loads with their element fields
/// stored, plus the background ND matrix.
///
/// This is the shared ingredient of the linearized tests and of the
/// localized-potential study: any region Gram or Fréchet-derivative matrix
/// becomes a post-processing sum over stored element data, with no further
/// PDE solves.
pub struct BackgroundFields {
    pub background_nd: NdMatrix,
    pub fingerprint: String,
    /// E x m per-element, per-load constants.
    div: DMatrix<f64>,
    sxx: DMatrix<f64>,
    syy: DMatrix<f64>,
    sxy: DMatrix<f64>,
    areas: DVector<f64>,
}

/// Solve every basis load on the (all-finite) background field.
pub fn assemble_background_fields(
    mesh: &Mesh,
    field: &LameField,
    basis: &LoadBasis,
) -> Result<BackgroundFields> {
    if !field.all_finite() {
        return Err(Error::invalid(
            "ndmap",
            "background fields require an all-finite field",
        ));
    }
    let expected = boundary_fingerprint(mesh);
    if basis.fingerprint != expected {
        return Err(Error::invalid(
            "ndmap",
            "basis fingerprint does not match this mesh",
        ));
    }
    let sys = assemble_system(mesh, field)?;
    let m = basis.len();
    let ne = mesh.elements.len();
    let solutions: Vec<(Vec<f64>, Displacement)> = (0..m)
        .into_par_iter()
        .map(|k| -> Result<(Vec<f64>, Displacement)> {
            let u = sys.solve_neumann(&[basis.loads[k].as_edge_load()])?;
            Ok((pairings_with_basis(mesh, basis, &u), u))
        })
        .collect::<Result<_>>()?;

    let matrix = DMatrix::from_fn(m, m, |j, k| solutions[k].0[j]);
    let background_nd = finish_symmetric(
        matrix,
        basis.fingerprint.clone(),
        format!("background[{}]", field_tag(field)),
    );

    let mut div = DMatrix::zeros(ne, m);
    let mut sxx = DMatrix::zeros(ne, m);
    let mut syy = DMatrix::zeros(ne, m);
    let mut sxy = DMatrix::zeros(ne, m);
    for (k, (_, u)) in solutions.iter().enumerate() {
        for e in 0..ne {
            let (d, s) = u.fields_unchecked(e);
            div[(e, k)] = d;
            sxx[(e, k)] = s[0];
            syy[(e, k)] = s[1];
            sxy[(e, k)] = s[2];
        }
    }
    let areas = DVector::from_fn(ne, |e, _| mesh.signed_area(e));
    Ok(BackgroundFields {
        background_nd,
        fingerprint: basis.fingerprint.clone(),
        div,
        sxx,
        syy,
        sxy,
        areas,
    })
}

impl BackgroundFields {
    pub fn dim(&self) -> usize {
        self.background_nd.dim()
    }

    pub fn n_elements(&self) -> usize {
        self.div.nrows()
    }

    /// Region Gram matrix
    /// `G[j][k] = sum_e area_e (w_div div_j div_k + w_strain S_j : S_k)`.
    pub fn region_gram(&self, elements: &[usize], w_div: f64, w_strain: f64) -> DMatrix<f64> {
        let m = self.dim();
        let mut g = DMatrix::zeros(m, m);
        if elements.is_empty() {
            return g;
        }
        let weigh = |mat: &DMatrix<f64>, w: f64| -> DMatrix<f64> {
            let sub = mat.select_rows(elements.iter());
            let mut scaled = sub.clone();
            for (r, &e) in elements.iter().enumerate() {
                let a = self.areas[e] * w;
                scaled.row_mut(r).scale_mut(a);
            }
            sub.transpose() * scaled
        };
        g += weigh(&self.div, w_div);
        g += weigh(&self.sxx, w_strain);
        g += weigh(&self.syy, w_strain);
        // off-diagonal strain entries count twice in the Frobenius product
        g += weigh(&self.sxy, 2.0 * w_strain);
        g
    }

    /// Fréchet-derivative matrix of the ND map for the perturbation
    /// `beta * chi_region` of both parameters:
    /// `(DL)_jk = -beta int_region div_j div_k + 2 S_j : S_k`.
    pub fn frechet_matrix(&self, elements: &[usize], beta: f64) -> Result<NdMatrix> {
        if elements.is_empty() {
            return Err(Error::invalid(
                "ndmap",
                "Fréchet derivative of an empty region",
            ));
        }
        let gram = self.region_gram(elements, 1.0, 2.0);
        Ok(self.frechet_from_gram(&gram, beta, elements.len()))
    }

    /// Same as `frechet_matrix` for a precomputed region Gram (weights 1, 2).
    pub fn frechet_from_gram(&self, gram: &DMatrix<f64>, beta: f64, n_elems: usize) -> NdMatrix {
        NdMatrix {
            matrix: gram * (-beta),
            fingerprint: self.fingerprint.clone(),
            provenance: format!("frechet(beta={beta:.6e},elements={n_elems})"),
            presym_asymmetry: 0.0,
        }
    }

    /// Linearized operator `Lambda_0 + DLambda_{beta, region}`.
    pub fn linearized_nd(&self, elements: &[usize], beta: f64) -> Result<NdMatrix> {
        self.background_nd.add(&self.frechet_matrix(elements, beta)?)
    }
}

/// Convenience wrapper matching the one-shot operation signature.
pub fn assemble_frechet_matrix(
    mesh: &Mesh,
    background: &LameField,
    region: &[usize],
    beta: f64,
    basis: &LoadBasis,
) -> Result<NdMatrix> {
    let fields = assemble_background_fields(mesh, background, basis)?;
    fields.frechet_matrix(region, beta)
}
