//! P1 vector finite elements for the mixed Dirichlet/Neumann elasticity
//! problem with extreme inclusions.
//!
//! The weak form pairs displacements through
//! `a(u, v) = sum_T area_T * (lambda (div u)(div v) + 2 mu Shat(u):Shat(v))`
//! with constant-per-element integrands, so single-point integration is
//! exact. Cavity elements contribute nothing and their interior nodes leave
//! the system; rigid components are condensed to three rigid-motion
//! coordinates each, which enforces a vanishing symmetric gradient exactly
//! and satisfies the zero-net-traction condition variationally; Dirichlet
//! nodes are eliminated.

use crate::error::{Error, Result};
use crate::materials::{LameField, LameState};
use crate::mesh::{self, BoundaryTag, Mesh};
use crate::solver::{LinearSolver, ProfileBuilder};

/// A boundary load given as constant tractions on Neumann edges.
pub type EdgeLoad = (usize, [f64; 2]);

#[derive(Debug, Clone, Copy)]
pub(crate) struct ElementGeom {
    /// Shape function gradients for the three vertices.
    pub grads: [[f64; 2]; 3],
    pub area: f64,
}

pub(crate) fn element_geom(mesh: &Mesh, e: usize) -> Result<ElementGeom> {
    let [a, b, c] = mesh.elements[e];
    let pa = mesh.nodes[a];
    let pb = mesh.nodes[b];
    let pc = mesh.nodes[c];
    let det = (pb[0] - pa[0]) * (pc[1] - pa[1]) - (pc[0] - pa[0]) * (pb[1] - pa[1]);
    if det <= 0.0 {
        return Err(Error::invalid(
            "fem",
            format!("element {e} has non-positive signed area"),
        ));
    }
    let inv = 1.0 / det;
    Ok(ElementGeom {
        grads: [
            [(pb[1] - pc[1]) * inv, (pc[0] - pb[0]) * inv],
            [(pc[1] - pa[1]) * inv, (pa[0] - pc[0]) * inv],
            [(pa[1] - pb[1]) * inv, (pb[0] - pa[0]) * inv],
        ],
        area: det / 2.0,
    })
}

/// 6x6 element stiffness for a finite (lambda, mu) pair; DOF order
/// (u_ax, u_ay, u_bx, u_by, u_cx, u_cy).
pub(crate) fn element_stiffness(geom: &ElementGeom, lambda: f64, mu: f64) -> [[f64; 6]; 6] {
    let mut k = [[0.0; 6]; 6];
    for i in 0..3 {
        let gi = geom.grads[i];
        for j in 0..3 {
            let gj = geom.grads[j];
            let dot = gi[0] * gj[0] + gi[1] * gj[1];
            for a in 0..2 {
                for b in 0..2 {
                    let mut v = lambda * gi[a] * gj[b] + mu * gi[b] * gj[a];
                    if a == b {
                        v += mu * dot;
                    }
                    k[2 * i + a][2 * j + b] = geom.area * v;
                }
            }
        }
    }
    k
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum NodeKind {
    /// Two free displacement DOFs starting at the given column.
    Standard { dof: usize },
    /// Member of the rigid component with the given index.
    Rigid { comp: usize },
    /// Value pinned to zero (Dirichlet node or unloaded floating part).
    Fixed,
    /// Interior cavity node; undefined until the extension is applied.
    CavityInterior,
}

#[derive(Debug, Clone)]
struct RigidComponent {
    nodes: Vec<usize>,
    /// First of the three rigid-motion columns (a1, a2, b).
    coord0: usize,
}

/// Assembled and factored discrete system for one mesh/field pair.
pub struct DiscreteSystem {
    mesh: Mesh,
    field: LameField,
    node_kind: Vec<NodeKind>,
    /// Node belongs to an unloadable floating piece (pinned to zero).
    dropped: Vec<bool>,
    rigid: Vec<RigidComponent>,
    geom: Vec<ElementGeom>,
    solver: LinearSolver,
    n_dofs: usize,
}

/// Assemble the stiffness over the free DOFs and factor it.
pub fn assemble_system(mesh: &Mesh, field: &LameField) -> Result<DiscreteSystem> {
    if field.len() != mesh.elements.len() {
        return Err(Error::invalid(
            "fem",
            "material field length does not match the mesh element count",
        ));
    }
    let nn = mesh.nodes.len();
    let ne = mesh.elements.len();
    let geom: Vec<ElementGeom> = (0..ne)
        .map(|e| element_geom(mesh, e))
        .collect::<Result<_>>()?;

    let active: Vec<bool> = field
        .states()
        .iter()
        .map(|s| *s != LameState::Cavity)
        .collect();
    let dirichlet = mesh.dirichlet_nodes();

    // Node-connected components of the active region; pieces that never see
    // the Dirichlet boundary are pinned to zero (they carry no load in a
    // well-posed scenario and do not influence the boundary data).
    let mut dropped_elem = vec![false; ne];
    for comp in mesh::components_by_node(mesh, &active) {
        let anchored = comp
            .iter()
            .any(|&e| mesh.elements[e].iter().any(|&v| dirichlet[v]));
        if !anchored {
            for &e in &comp {
                dropped_elem[e] = true;
            }
        }
    }

    let mut incident_live = vec![false; nn]; // node touches a kept active element
    let mut incident_dropped = vec![false; nn];
    for e in 0..ne {
        if !active[e] {
            continue;
        }
        for &v in &mesh.elements[e] {
            if dropped_elem[e] {
                incident_dropped[v] = true;
            } else {
                incident_live[v] = true;
            }
        }
    }

    // Rigid components: node-connected groups of kept rigid elements, so
    // element sets that pinch at a single vertex still move as one body
    // and every node belongs to at most one component.
    let rigid_set: Vec<bool> = (0..ne)
        .map(|e| field.state(e) == LameState::Rigid && !dropped_elem[e])
        .collect();
    let rigid_groups = mesh::components_by_node(mesh, &rigid_set);

    let mut node_kind = vec![NodeKind::CavityInterior; nn];
    let mut rigid_of_node: Vec<Option<usize>> = vec![None; nn];
    let mut rigid: Vec<RigidComponent> = Vec::with_capacity(rigid_groups.len());
    for (k, group) in rigid_groups.into_iter().enumerate() {
        let mut nodes = Vec::new();
        for &e in &group {
            for &v in &mesh.elements[e] {
                if rigid_of_node[v].is_none() {
                    rigid_of_node[v] = Some(k);
                    nodes.push(v);
                }
            }
        }
        nodes.sort_unstable();
        if nodes.iter().any(|&v| dirichlet[v]) {
            return Err(Error::invalid(
                "fem",
                "a rigid component touches the Dirichlet boundary; inclusions must stay interior",
            ));
        }
        rigid.push(RigidComponent {
            nodes,
            coord0: usize::MAX,
        });
    }

    // Each rigid body needs at least two attachment points in the finite
    // material, otherwise its rotation stays unconstrained.
    let mut finite_incident = vec![false; nn];
    for e in 0..ne {
        if active[e] && !dropped_elem[e] && field.state(e) != LameState::Rigid {
            for &v in &mesh.elements[e] {
                finite_incident[v] = true;
            }
        }
    }
    for (k, comp) in rigid.iter().enumerate() {
        let attachments = comp
            .nodes
            .iter()
            .filter(|&&v| finite_incident[v])
            .count();
        if attachments < 2 {
            return Err(Error::numerical(
                "fem",
                format!(
                    "rigid component {k} is attached to the finite material at {attachments} node(s); \
                     its rotation is unconstrained"
                ),
            ));
        }
    }

    // Column layout: standard node DOFs in geometric (y, x) order, which
    // keeps the factorization envelope narrow whatever the node numbering
    // (refinement appends midpoints out of order); rigid coordinates are
    // appended per component.
    let mut by_position: Vec<usize> = (0..nn).collect();
    by_position.sort_by(|&a, &b| {
        let (pa, pb) = (mesh.nodes[a], mesh.nodes[b]);
        (pa[1], pa[0], a)
            .partial_cmp(&(pb[1], pb[0], b))
            .expect("finite coordinates")
    });
    let mut next = 0usize;
    for &v in &by_position {
        if dirichlet[v] {
            node_kind[v] = NodeKind::Fixed;
        } else if let Some(k) = rigid_of_node[v] {
            node_kind[v] = NodeKind::Rigid { comp: k };
        } else if incident_live[v] {
            node_kind[v] = NodeKind::Standard { dof: next };
            next += 2;
        } else if incident_dropped[v] {
            node_kind[v] = NodeKind::Fixed;
        }
        // else: CavityInterior
    }
    for comp in rigid.iter_mut() {
        comp.coord0 = next;
        next += 3;
    }
    let n_dofs = next;
    let dropped: Vec<bool> = (0..nn)
        .map(|v| incident_dropped[v] && !incident_live[v] && !dirichlet[v])
        .collect();

    // Columns touched by one node of an element.
    let node_cols = |v: usize, out: &mut Vec<usize>| match node_kind[v] {
        NodeKind::Standard { dof } => out.extend([dof, dof + 1]),
        NodeKind::Rigid { comp } => {
            let c0 = rigid[comp].coord0;
            out.extend([c0, c0 + 1, c0 + 2]);
        }
        _ => {}
    };

    let mut builder = ProfileBuilder::new(n_dofs);
    let mut cols = Vec::with_capacity(9);
    for e in 0..ne {
        if dropped_elem[e] || field.state(e).lame().is_none() {
            continue; // cavity and rigid elements add no stiffness
        }
        cols.clear();
        for &v in &mesh.elements[e] {
            node_cols(v, &mut cols);
        }
        for i in 0..cols.len() {
            for j in 0..i {
                builder.couple(cols[i], cols[j]);
            }
        }
    }
    let mut matrix = builder.build();

    // Scatter the condensed element blocks W^T k W, where W maps the unique
    // global columns of the element to its six expanded nodal DOFs.
    let mut gcols: Vec<usize> = Vec::with_capacity(9);
    let mut weights: Vec<Vec<(usize, f64)>> = vec![Vec::new(); 6];
    for e in 0..ne {
        let (lambda, mu) = match field.state(e) {
            LameState::Finite { lambda, mu } if !dropped_elem[e] => (lambda, mu),
            _ => continue,
        };
        let k_e = element_stiffness(&geom[e], lambda, mu);
        gcols.clear();
        for w in weights.iter_mut() {
            w.clear();
        }
        for (ln, &v) in mesh.elements[e].iter().enumerate() {
            match node_kind[v] {
                NodeKind::Standard { dof } => {
                    for a in 0..2 {
                        let slot = col_slot(&mut gcols, dof + a);
                        weights[2 * ln + a].push((slot, 1.0));
                    }
                }
                NodeKind::Rigid { comp } => {
                    let c0 = rigid[comp].coord0;
                    let [x, y] = mesh.nodes[v];
                    let s0 = col_slot(&mut gcols, c0);
                    let s1 = col_slot(&mut gcols, c0 + 1);
                    let s2 = col_slot(&mut gcols, c0 + 2);
                    weights[2 * ln].push((s0, 1.0));
                    weights[2 * ln].push((s2, -y));
                    weights[2 * ln + 1].push((s1, 1.0));
                    weights[2 * ln + 1].push((s2, x));
                }
                _ => {}
            }
        }
        let nc = gcols.len();
        let mut cond = [[0.0f64; 9]; 9];
        debug_assert!(nc <= 9);
        for p in 0..6 {
            for q in 0..6 {
                let v = k_e[p][q];
                if v == 0.0 {
                    continue;
                }
                for &(sp, wp) in &weights[p] {
                    for &(sq, wq) in &weights[q] {
                        cond[sp][sq] += wp * v * wq;
                    }
                }
            }
        }
        for s in 0..nc {
            for t in 0..=s {
                matrix.add(gcols[s], gcols[t], cond[s][t]);
            }
        }
    }

    let solver = if n_dofs > 0 {
        matrix.into_solver()?
    } else {
        return Err(Error::numerical(
            "fem",
            "no free degrees of freedom; the active material never reaches the Dirichlet boundary",
        ));
    };

    Ok(DiscreteSystem {
        mesh: mesh.clone(),
        field: field.clone(),
        node_kind,
        dropped,
        rigid,
        geom,
        solver,
        n_dofs,
    })
}

fn col_slot(gcols: &mut Vec<usize>, col: usize) -> usize {
    match gcols.iter().position(|&c| c == col) {
        Some(s) => s,
        None => {
            gcols.push(col);
            gcols.len() - 1
        }
    }
}

/// Displacement solution with per-element constant fields.
#[derive(Debug, Clone)]
pub struct Displacement {
    /// Nodal 2-vectors; meaningful where `node_defined` holds.
    pub nodal: Vec<[f64; 2]>,
    pub node_defined: Vec<bool>,
    element_div: Vec<f64>,
    /// Symmetric gradient per element as (Sxx, Syy, Sxy).
    element_strain: Vec<[f64; 3]>,
    element_defined: Vec<bool>,
    /// Rigid-motion coordinates (a1, a2, b) per rigid component.
    pub rigid_motions: Vec<[f64; 3]>,
}

impl Displacement {
    /// Per-element divergence and symmetric gradient (Sxx, Syy, Sxy).
    pub fn element_fields(&self, e: usize) -> Result<(f64, [f64; 3])> {
        if !self.element_defined[e] {
            return Err(Error::invalid(
                "fem",
                format!("element {e} lies in a cavity; apply the extension before querying it"),
            ));
        }
        Ok((self.element_div[e], self.element_strain[e]))
    }

    pub fn is_defined(&self, e: usize) -> bool {
        self.element_defined[e]
    }

    #[inline]
    pub(crate) fn fields_unchecked(&self, e: usize) -> (f64, [f64; 3]) {
        debug_assert!(self.element_defined[e]);
        (self.element_div[e], self.element_strain[e])
    }

    /// Frobenius norm of the symmetric gradient on one element.
    pub fn strain_frobenius(&self, e: usize) -> Result<f64> {
        let (_, s) = self.element_fields(e)?;
        Ok((s[0] * s[0] + s[1] * s[1] + 2.0 * s[2] * s[2]).sqrt())
    }
}

impl DiscreteSystem {
    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn field(&self) -> &LameField {
        &self.field
    }

    pub fn n_dofs(&self) -> usize {
        self.n_dofs
    }

    pub fn is_direct(&self) -> bool {
        self.solver.is_direct()
    }

    fn rhs(&self, load: &[EdgeLoad]) -> Result<Vec<f64>> {
        let mut f = vec![0.0; self.n_dofs];
        for &(edge_idx, g) in load {
            let edge = self.mesh.boundary_edges.get(edge_idx).ok_or_else(|| {
                Error::invalid("fem", format!("boundary edge index {edge_idx} out of range"))
            })?;
            if edge.tag != BoundaryTag::Neumann {
                return Err(Error::invalid(
                    "fem",
                    format!("edge {edge_idx} is Dirichlet-tagged; loads act on the Neumann boundary"),
                ));
            }
            let half = self.mesh.edge_length(edge.nodes) / 2.0;
            let c = [g[0] * half, g[1] * half];
            for &v in &edge.nodes {
                match self.node_kind[v] {
                    NodeKind::Standard { dof } => {
                        f[dof] += c[0];
                        f[dof + 1] += c[1];
                    }
                    NodeKind::Rigid { comp } => {
                        let c0 = self.rigid[comp].coord0;
                        let [x, y] = self.mesh.nodes[v];
                        f[c0] += c[0];
                        f[c0 + 1] += c[1];
                        f[c0 + 2] += -y * c[0] + x * c[1];
                    }
                    NodeKind::Fixed => {
                        if self.dropped[v] && (c[0] != 0.0 || c[1] != 0.0) {
                            return Err(Error::numerical(
                                "fem",
                                format!(
                                    "load applied at node {v} of a floating material piece; \
                                     the problem is ill-posed"
                                ),
                            ));
                        }
                        // Dirichlet closure: the trace vanishes, load drops.
                    }
                    NodeKind::CavityInterior => {
                        return Err(Error::invalid(
                            "fem",
                            format!("load applied at node {v} on a cavity; no material carries it"),
                        ));
                    }
                }
            }
        }
        Ok(f)
    }

    /// Solve the weak problem for the given Neumann load.
    pub fn solve_neumann(&self, load: &[EdgeLoad]) -> Result<Displacement> {
        let f = self.rhs(load)?;
        let q = self.solver.solve(&f)?;
        Ok(self.expand(&q))
    }

    fn expand(&self, q: &[f64]) -> Displacement {
        let nn = self.mesh.nodes.len();
        let ne = self.mesh.elements.len();
        let mut nodal = vec![[0.0; 2]; nn];
        let mut node_defined = vec![true; nn];
        let mut rigid_motions = Vec::with_capacity(self.rigid.len());
        for comp in &self.rigid {
            rigid_motions.push([q[comp.coord0], q[comp.coord0 + 1], q[comp.coord0 + 2]]);
        }
        for v in 0..nn {
            match self.node_kind[v] {
                NodeKind::Standard { dof } => nodal[v] = [q[dof], q[dof + 1]],
                NodeKind::Rigid { comp } => {
                    let [a1, a2, b] = rigid_motions[comp];
                    let [x, y] = self.mesh.nodes[v];
                    nodal[v] = [a1 - b * y, a2 + b * x];
                }
                NodeKind::Fixed => nodal[v] = [0.0, 0.0],
                NodeKind::CavityInterior => {
                    nodal[v] = [f64::NAN, f64::NAN];
                    node_defined[v] = false;
                }
            }
        }

        let mut element_div = vec![0.0; ne];
        let mut element_strain = vec![[0.0; 3]; ne];
        let mut element_defined = vec![true; ne];
        for e in 0..ne {
            match self.field.state(e) {
                LameState::Cavity => {
                    element_div[e] = f64::NAN;
                    element_strain[e] = [f64::NAN; 3];
                    element_defined[e] = false;
                }
                LameState::Rigid => {
                    // The condensation enforces a vanishing symmetric
                    // gradient; the stored fields are exact zeros.
                }
                LameState::Finite { .. } => {
                    let (d, s) = element_fields_from_nodal(&self.geom[e], &self.mesh.elements[e], &nodal);
                    element_div[e] = d;
                    element_strain[e] = s;
                }
            }
        }

        Displacement {
            nodal,
            node_defined,
            element_div,
            element_strain,
            element_defined,
            rigid_motions,
        }
    }
}

fn element_fields_from_nodal(
    geom: &ElementGeom,
    tri: &[usize; 3],
    nodal: &[[f64; 2]],
) -> (f64, [f64; 3]) {
    let mut grad = [[0.0f64; 2]; 2]; // grad[k][l] = du_k/dx_l
    for (i, &v) in tri.iter().enumerate() {
        let g = geom.grads[i];
        let u = nodal[v];
        grad[0][0] += u[0] * g[0];
        grad[0][1] += u[0] * g[1];
        grad[1][0] += u[1] * g[0];
        grad[1][1] += u[1] * g[1];
    }
    let div = grad[0][0] + grad[1][1];
    let strain = [grad[0][0], grad[1][1], (grad[0][1] + grad[1][0]) / 2.0];
    (div, strain)
}

/// Boundary pairing `<g, u|_GammaN>` for a piecewise-constant edge load.
pub fn boundary_pairing(mesh: &Mesh, load: &[EdgeLoad], u: &Displacement) -> f64 {
    let mut acc = 0.0;
    for &(edge_idx, g) in load {
        let edge = &mesh.boundary_edges[edge_idx];
        let [p, q] = edge.nodes;
        let half = mesh.edge_length(edge.nodes) / 2.0;
        acc += half
            * ((u.nodal[p][0] + u.nodal[q][0]) * g[0] + (u.nodal[p][1] + u.nodal[q][1]) * g[1]);
    }
    acc
}

/// Elastic extension into cavities: solves the background-coefficient
/// Dirichlet problem on each cavity interior with the outside trace as data,
/// leaving the displacement untouched elsewhere.
pub fn extend_e(mesh: &Mesh, field: &LameField, u: &Displacement) -> Result<Displacement> {
    let cavity: Vec<usize> = field.cavity_elements();
    if cavity.is_empty() {
        return Ok(u.clone());
    }
    let (l0, m0) = field.background();

    // Unknowns: nodes still undefined in u (cavity interiors).
    let nn = mesh.nodes.len();
    let boundary = mesh.boundary_nodes();
    let mut dof_of = vec![usize::MAX; nn];
    let mut next = 0usize;
    for &e in &cavity {
        for &v in &mesh.elements[e] {
            if !u.node_defined[v] && dof_of[v] == usize::MAX {
                if boundary[v] {
                    return Err(Error::invalid(
                        "fem",
                        format!(
                            "cavity reaches the domain boundary at node {v}; \
                             the interior extension is undefined there"
                        ),
                    ));
                }
                dof_of[v] = next;
                next += 2;
            }
        }
    }

    let mut out = u.clone();
    if next > 0 {
        let mut builder = ProfileBuilder::new(next);
        for &e in &cavity {
            let tri = mesh.elements[e];
            for i in 0..3 {
                for j in 0..i {
                    let (di, dj) = (dof_of[tri[i]], dof_of[tri[j]]);
                    if di != usize::MAX && dj != usize::MAX {
                        builder.couple(di, dj);
                        builder.couple(di, dj + 1);
                        builder.couple(di + 1, dj);
                        builder.couple(di + 1, dj + 1);
                    }
                }
                if dof_of[tri[i]] != usize::MAX {
                    builder.couple(dof_of[tri[i]], dof_of[tri[i]] + 1);
                }
            }
        }
        let mut matrix = builder.build();
        let mut rhs = vec![0.0; next];
        for &e in &cavity {
            let geom = element_geom(mesh, e)?;
            let k_e = element_stiffness(&geom, l0, m0);
            let tri = mesh.elements[e];
            for i in 0..3 {
                let di = dof_of[tri[i]];
                if di == usize::MAX {
                    continue;
                }
                for j in 0..3 {
                    let dj = dof_of[tri[j]];
                    for a in 0..2 {
                        for b in 0..2 {
                            let v = k_e[2 * i + a][2 * j + b];
                            if dj != usize::MAX {
                                // each unordered DOF pair scattered once
                                if di + a >= dj + b {
                                    matrix.add(di + a, dj + b, v);
                                }
                            } else {
                                rhs[di + a] -= v * u.nodal[tri[j]][b];
                            }
                        }
                    }
                }
            }
        }
        let solver = matrix.into_solver()?;
        let q = solver.solve(&rhs)?;
        for v in 0..nn {
            if dof_of[v] != usize::MAX {
                out.nodal[v] = [q[dof_of[v]], q[dof_of[v] + 1]];
                out.node_defined[v] = true;
            }
        }
    }

    for &e in &cavity {
        let geom = element_geom(mesh, e)?;
        let (d, s) = element_fields_from_nodal(&geom, &mesh.elements[e], &out.nodal);
        out.element_div[e] = d;
        out.element_strain[e] = s;
        out.element_defined[e] = true;
    }
    Ok(out)
}

/// Region energies `(int lambda |div u|^2, int 2 mu |Shat u|_F^2)` summed
/// exactly over the given elements with the coefficients of `field`.
///
/// Cavity and rigid elements contribute zero (vanishing coefficient weight
/// and vanishing strain respectively).
pub fn energy_on_region(
    u: &Displacement,
    field: &LameField,
    elements: &[usize],
    geom_mesh: &Mesh,
) -> Result<(f64, f64)> {
    let mut div_term = 0.0;
    let mut shear_term = 0.0;
    for &e in elements {
        match field.state(e) {
            LameState::Cavity => {}
            LameState::Rigid => {}
            LameState::Finite { lambda, mu } => {
                let (d, s) = u.element_fields(e)?;
                let area = geom_mesh.signed_area(e);
                div_term += area * lambda * d * d;
                shear_term += area * 2.0 * mu * (s[0] * s[0] + s[1] * s[1] + 2.0 * s[2] * s[2]);
            }
        }
    }
    Ok((div_term, shear_term))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::materials::make_lame_field;
    use crate::mesh::{build_unit_square_mesh, label_regions, RegionSpec, Shape, Side};
    use approx::assert_relative_eq;
    use std::collections::{BTreeMap, BTreeSet};

    fn sides(list: &[Side]) -> BTreeSet<Side> {
        list.iter().copied().collect()
    }

    fn top_load(mesh: &Mesh) -> Vec<EdgeLoad> {
        mesh.neumann_edges()
            .into_iter()
            .filter(|&k| {
                let [p, q] = mesh.boundary_edges[k].nodes;
                mesh.nodes[p][1] > 1.0 - 1e-12 && mesh.nodes[q][1] > 1.0 - 1e-12
            })
            .map(|k| (k, [0.0, 1.0]))
            .collect()
    }

    #[test]
    fn dof_count_homogeneous() {
        let mesh = build_unit_square_mesh(2, &sides(&[Side::Bottom])).unwrap();
        let field = LameField::homogeneous(&mesh, (1.0, 1.0)).unwrap();
        let sys = assemble_system(&mesh, &field).unwrap();
        // 9 nodes, 3 on the bottom eliminated.
        assert_eq!(sys.n_dofs(), 12);
    }

    #[test]
    fn element_stiffness_matches_quadrature_oracle() {
        // Independent oracle: B-matrix assembly with 3-point quadrature in
        // Voigt notation, sigma = lambda tr(eps) I + 2 mu eps.
        let mesh = build_unit_square_mesh(2, &sides(&[Side::Bottom])).unwrap();
        let geom = element_geom(&mesh, 0).unwrap();
        let k = element_stiffness(&geom, 1.0, 1.0);

        let tri = mesh.elements[0];
        let pts: Vec<[f64; 2]> = tri.iter().map(|&v| mesh.nodes[v]).collect();
        let (lambda, mu) = (1.0, 1.0);
        // D in Voigt (exx, eyy, gxy): quadratic form eps^T D eps equals
        // lambda div^2 + 2 mu |eps|_F^2.
        let d = [
            [lambda + 2.0 * mu, lambda, 0.0],
            [lambda, lambda + 2.0 * mu, 0.0],
            [0.0, 0.0, mu],
        ];
        // P1 gradients from the oracle's own formula.
        let det = (pts[1][0] - pts[0][0]) * (pts[2][1] - pts[0][1])
            - (pts[2][0] - pts[0][0]) * (pts[1][1] - pts[0][1]);
        let g = [
            [(pts[1][1] - pts[2][1]) / det, (pts[2][0] - pts[1][0]) / det],
            [(pts[2][1] - pts[0][1]) / det, (pts[0][0] - pts[2][0]) / det],
            [(pts[0][1] - pts[1][1]) / det, (pts[1][0] - pts[0][0]) / det],
        ];
        let mut b = [[0.0; 6]; 3];
        for i in 0..3 {
            b[0][2 * i] = g[i][0];
            b[1][2 * i + 1] = g[i][1];
            b[2][2 * i] = g[i][1];
            b[2][2 * i + 1] = g[i][0];
        }
        // 3-point rule on the triangle (midpoints of edges, weight area/3);
        // the integrand is constant so this is exact.
        let area = det.abs() / 2.0;
        let mut oracle = [[0.0; 6]; 6];
        for _qp in 0..3 {
            let w = area / 3.0;
            for r in 0..6 {
                for c in 0..6 {
                    let mut v = 0.0;
                    for x in 0..3 {
                        for y in 0..3 {
                            v += b[x][r] * d[x][y] * b[y][c];
                        }
                    }
                    oracle[r][c] += w * v;
                }
            }
        }
        for r in 0..6 {
            for c in 0..6 {
                assert_relative_eq!(k[r][c], oracle[r][c], epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn zero_load_zero_solution() {
        let mesh = build_unit_square_mesh(4, &sides(&[Side::Bottom])).unwrap();
        let field = LameField::homogeneous(&mesh, (1.0, 1.0)).unwrap();
        let sys = assemble_system(&mesh, &field).unwrap();
        let u = sys.solve_neumann(&[]).unwrap();
        assert!(u.nodal.iter().all(|p| p[0] == 0.0 && p[1] == 0.0));
    }

    #[test]
    fn energy_identity_and_upward_pull() {
        let mesh = build_unit_square_mesh(8, &sides(&[Side::Bottom])).unwrap();
        let field = LameField::homogeneous(&mesh, (1.0, 1.0)).unwrap();
        let sys = assemble_system(&mesh, &field).unwrap();
        let load = top_load(&mesh);
        let u = sys.solve_neumann(&load).unwrap();

        let pairing = boundary_pairing(&mesh, &load, &u);
        let all: Vec<usize> = (0..mesh.elements.len()).collect();
        let (ed, es) = energy_on_region(&u, &field, &all, &mesh).unwrap();
        let energy = ed + es;
        assert!(energy > 0.0);
        assert!(
            (pairing - energy).abs() <= 1e-9 * energy,
            "energy identity violated: {pairing} vs {energy}"
        );

        // <g, u> = mean vertical displacement on the top edge (up to length
        // scaling), so positivity of the energy forces an upward pull.
        assert!(pairing > 0.0);
    }

    #[test]
    fn rigid_component_strain_is_exactly_zero() {
        let mesh = build_unit_square_mesh(12, &sides(&[Side::Bottom])).unwrap();
        let labeled = label_regions(
            &mesh,
            &[RegionSpec {
                id: "disc".into(),
                shape: Shape::Disc {
                    center: [0.5, 0.6],
                    radius: 0.2,
                },
            }],
        )
        .unwrap();
        let mut asg = BTreeMap::new();
        asg.insert("disc".to_string(), crate::materials::LameState::Rigid);
        let field = make_lame_field(&labeled, (1.0, 1.0), &asg).unwrap();
        let sys = assemble_system(&labeled, &field).unwrap();
        let u = sys.solve_neumann(&top_load(&labeled)).unwrap();

        let mut any = false;
        for e in field.rigid_elements() {
            any = true;
            assert_eq!(u.strain_frobenius(e).unwrap(), 0.0);
            assert_eq!(u.element_fields(e).unwrap().0, 0.0);
        }
        assert!(any);
        // DOF drop: one rigid component of k condensed nodes gives 2k - 3.
        let field0 = LameField::homogeneous(&labeled, (1.0, 1.0)).unwrap();
        let sys0 = assemble_system(&labeled, &field0).unwrap();
        let rigid_nodes: std::collections::BTreeSet<usize> = field
            .rigid_elements()
            .iter()
            .flat_map(|&e| labeled.elements[e])
            .collect();
        assert_eq!(sys0.n_dofs() - sys.n_dofs(), 2 * rigid_nodes.len() - 3);
    }

    #[test]
    fn rigid_motion_and_linear_field_derivatives() {
        let mesh = build_unit_square_mesh(4, &sides(&[Side::Bottom])).unwrap();
        let geom: Vec<ElementGeom> = (0..mesh.elements.len())
            .map(|e| element_geom(&mesh, e).unwrap())
            .collect();

        // u = a + b(-y, x): both fields vanish.
        let a = [0.3, -0.7];
        let b = 1.3;
        let nodal: Vec<[f64; 2]> = mesh
            .nodes
            .iter()
            .map(|p| [a[0] - b * p[1], a[1] + b * p[0]])
            .collect();
        for (e, tri) in mesh.elements.iter().enumerate() {
            let (div, s) = element_fields_from_nodal(&geom[e], tri, &nodal);
            assert_relative_eq!(div, 0.0, epsilon = 1e-12);
            for v in s {
                assert_relative_eq!(v, 0.0, epsilon = 1e-12);
            }
        }

        // u = (x, 0): div = 1, strain = diag(1, 0).
        let nodal: Vec<[f64; 2]> = mesh.nodes.iter().map(|p| [p[0], 0.0]).collect();
        for (e, tri) in mesh.elements.iter().enumerate() {
            let (div, s) = element_fields_from_nodal(&geom[e], tri, &nodal);
            assert_relative_eq!(div, 1.0, epsilon = 1e-12);
            assert_relative_eq!(s[0], 1.0, epsilon = 1e-12);
            assert_relative_eq!(s[1], 0.0, epsilon = 1e-12);
            assert_relative_eq!(s[2], 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn trace_inequality_on_solutions() {
        let mesh = build_unit_square_mesh(6, &sides(&[Side::Bottom])).unwrap();
        let field = LameField::homogeneous(&mesh, (1.3, 0.8)).unwrap();
        let sys = assemble_system(&mesh, &field).unwrap();
        let u = sys.solve_neumann(&top_load(&mesh)).unwrap();
        for e in 0..mesh.elements.len() {
            let (div, s) = u.element_fields(e).unwrap();
            let frob = (s[0] * s[0] + s[1] * s[1] + 2.0 * s[2] * s[2]).sqrt();
            assert!(div.abs() <= 2.0_f64.sqrt() * frob + 1e-14);
        }
    }

    #[test]
    fn extension_identity_without_cavity() {
        let mesh = build_unit_square_mesh(6, &sides(&[Side::Bottom])).unwrap();
        let field = LameField::homogeneous(&mesh, (1.0, 1.0)).unwrap();
        let sys = assemble_system(&mesh, &field).unwrap();
        let u = sys.solve_neumann(&top_load(&mesh)).unwrap();
        let eu = extend_e(&mesh, &field, &u).unwrap();
        assert_eq!(u.nodal, eu.nodal);
    }

    #[test]
    fn extension_constant_trace_gives_constant() {
        let mesh = build_unit_square_mesh(10, &sides(&[Side::Bottom])).unwrap();
        let labeled = label_regions(
            &mesh,
            &[RegionSpec {
                id: "hole".into(),
                shape: Shape::Rect {
                    lo: [0.3, 0.3],
                    hi: [0.7, 0.7],
                },
            }],
        )
        .unwrap();
        let mut asg = BTreeMap::new();
        asg.insert("hole".to_string(), crate::materials::LameState::Cavity);
        let field = make_lame_field(&labeled, (1.0, 1.0), &asg).unwrap();
        let sys = assemble_system(&labeled, &field).unwrap();
        let mut u = sys.solve_neumann(&top_load(&labeled)).unwrap();

        // Overwrite the hole's boundary trace with a constant.
        let c = [0.25, -0.5];
        for v in 0..labeled.nodes.len() {
            if u.node_defined[v] {
                u.nodal[v] = c;
            }
        }
        let eu = extend_e(&labeled, &field, &u).unwrap();
        for v in 0..labeled.nodes.len() {
            assert_relative_eq!(eu.nodal[v][0], c[0], epsilon = 1e-9);
            assert_relative_eq!(eu.nodal[v][1], c[1], epsilon = 1e-9);
        }
        for e in field.cavity_elements() {
            let (div, s) = eu.element_fields(e).unwrap();
            assert_relative_eq!(div, 0.0, epsilon = 1e-9);
            for v in s {
                assert_relative_eq!(v, 0.0, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn extension_matches_independent_resolve() {
        // Oracle: assemble the background problem on the whole mesh, pin
        // every node outside the cavity interior to its trace value, and
        // solve; this must agree with extend_e to 1e-10.
        let mesh = build_unit_square_mesh(12, &sides(&[Side::Bottom])).unwrap();
        let labeled = label_regions(
            &mesh,
            &[RegionSpec {
                id: "hole".into(),
                shape: Shape::Disc {
                    center: [0.45, 0.55],
                    radius: 0.2,
                },
            }],
        )
        .unwrap();
        let mut asg = BTreeMap::new();
        asg.insert("hole".to_string(), crate::materials::LameState::Cavity);
        let field = make_lame_field(&labeled, (1.2, 0.9), &asg).unwrap();
        let sys = assemble_system(&labeled, &field).unwrap();
        let u = sys.solve_neumann(&top_load(&labeled)).unwrap();
        let eu = extend_e(&labeled, &field, &u).unwrap();

        // Independent dense re-solve over cavity elements only.
        let unknown: Vec<usize> = (0..labeled.nodes.len())
            .filter(|&v| !u.node_defined[v])
            .collect();
        let index_of = |v: usize| unknown.iter().position(|&w| w == v);
        let n = 2 * unknown.len();
        let mut a = nalgebra::DMatrix::<f64>::zeros(n, n);
        let mut rhs = nalgebra::DVector::<f64>::zeros(n);
        let (l0, m0) = field.background();
        for e in field.cavity_elements() {
            let geom = element_geom(&labeled, e).unwrap();
            let k_e = element_stiffness(&geom, l0, m0);
            let tri = labeled.elements[e];
            for i in 0..3 {
                let Some(ii) = index_of(tri[i]) else { continue };
                for j in 0..3 {
                    match index_of(tri[j]) {
                        Some(jj) => {
                            for p in 0..2 {
                                for q in 0..2 {
                                    a[(2 * ii + p, 2 * jj + q)] += k_e[2 * i + p][2 * j + q];
                                }
                            }
                        }
                        None => {
                            for p in 0..2 {
                                for q in 0..2 {
                                    rhs[2 * ii + p] -=
                                        k_e[2 * i + p][2 * j + q] * u.nodal[tri[j]][q];
                                }
                            }
                        }
                    }
                }
            }
        }
        let sol = a.lu().solve(&rhs).unwrap();
        for (ii, &v) in unknown.iter().enumerate() {
            assert!((eu.nodal[v][0] - sol[2 * ii]).abs() < 1e-10);
            assert!((eu.nodal[v][1] - sol[2 * ii + 1]).abs() < 1e-10);
        }
    }

    #[test]
    fn querying_cavity_before_extension_fails() {
        let mesh = build_unit_square_mesh(8, &sides(&[Side::Bottom])).unwrap();
        let labeled = label_regions(
            &mesh,
            &[RegionSpec {
                id: "hole".into(),
                shape: Shape::Rect {
                    lo: [0.3, 0.4],
                    hi: [0.6, 0.7],
                },
            }],
        )
        .unwrap();
        let mut asg = BTreeMap::new();
        asg.insert("hole".to_string(), crate::materials::LameState::Cavity);
        let field = make_lame_field(&labeled, (1.0, 1.0), &asg).unwrap();
        let sys = assemble_system(&labeled, &field).unwrap();
        let u = sys.solve_neumann(&top_load(&labeled)).unwrap();
        let hole = field.cavity_elements()[0];
        assert!(u.element_fields(hole).is_err());
    }

    #[test]
    fn energy_additive_over_disjoint_regions() {
        let mesh = build_unit_square_mesh(6, &sides(&[Side::Bottom])).unwrap();
        let field = LameField::homogeneous(&mesh, (1.0, 2.0)).unwrap();
        let sys = assemble_system(&mesh, &field).unwrap();
        let u = sys.solve_neumann(&top_load(&mesh)).unwrap();
        let all: Vec<usize> = (0..mesh.elements.len()).collect();
        let (left, right): (Vec<usize>, Vec<usize>) = all
            .iter()
            .partition(|&&e| mesh.barycenter(mesh.elements[e])[0] < 0.5);
        let whole = energy_on_region(&u, &field, &all, &mesh).unwrap();
        let l = energy_on_region(&u, &field, &left, &mesh).unwrap();
        let r = energy_on_region(&u, &field, &right, &mesh).unwrap();
        assert_relative_eq!(whole.0, l.0 + r.0, epsilon = 1e-12);
        assert_relative_eq!(whole.1, l.1 + r.1, epsilon = 1e-12);
    }

    #[test]
    fn boundary_trace_refinement_consistency() {
        // Fixed smooth load; the Neumann-trace change between successive
        // refinements must shrink by at least 1.7x per halving.
        let run = |n: usize| {
            let mesh = build_unit_square_mesh(n, &sides(&[Side::Bottom])).unwrap();
            let field = LameField::homogeneous(&mesh, (1.0, 1.0)).unwrap();
            let sys = assemble_system(&mesh, &field).unwrap();
            let u = sys.solve_neumann(&top_load(&mesh)).unwrap();
            (mesh, u)
        };
        let (m1, u1) = run(8);
        let (m2, u2) = run(16);
        let (m3, u3) = run(32);

        // L2 difference over the top edge, evaluating the coarse trace at
        // fine nodes by linear interpolation (Simpson is exact for the
        // quadratic integrand).
        let diff = |mc: &Mesh, uc: &Displacement, mf: &Mesh, uf: &Displacement| -> f64 {
            let nc = mc.cells_per_side();
            let coarse_at = |x: f64, dim: usize| -> f64 {
                let t = x * nc as f64;
                let i = (t.floor() as usize).min(nc - 1);
                let frac = t - i as f64;
                let np = nc + 1;
                let a = uc.nodal[nc * np + i][dim];
                let b = uc.nodal[nc * np + i + 1][dim];
                a * (1.0 - frac) + b * frac
            };
            let nf = mf.cells_per_side();
            let npf = nf + 1;
            let mut acc = 0.0;
            for i in 0..nf {
                let (xa, xb) = (i as f64 / nf as f64, (i + 1) as f64 / nf as f64);
                let len = 1.0 / nf as f64;
                for dim in 0..2 {
                    let da = uf.nodal[nf * npf + i][dim] - coarse_at(xa, dim);
                    let db = uf.nodal[nf * npf + i + 1][dim] - coarse_at(xb, dim);
                    let dm = (da + db) / 2.0;
                    acc += len / 6.0 * (da * da + 4.0 * dm * dm + db * db);
                }
            }
            acc.sqrt()
        };
        let e1 = diff(&m1, &u1, &m2, &u2);
        let e2 = diff(&m2, &u2, &m3, &u3);
        assert!(
            e1 / e2 >= 1.7,
            "refinement ratio {} below 1.7 (e1 = {e1}, e2 = {e2})",
            e1 / e2
        );
    }
}
