//! Structured triangulations of the unit square with tagged boundary pieces
//! and per-element region labels.
//!
//! The domain is always (0,1)^2. Each of the n x n grid cells is split into
//! two counterclockwise triangles along its lower-left/upper-right diagonal,
//! giving 2n^2 elements and (n+1)^2 nodes. Boundary edges carry a Dirichlet
//! or Neumann tag; both tags must be present. Elements carry exactly one
//! region label, index 0 being the background.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One of the four sides of the unit square.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Bottom,
    Right,
    Top,
    Left,
}

impl Side {
    pub const ALL: [Side; 4] = [Side::Bottom, Side::Right, Side::Top, Side::Left];
}

/// Boundary condition tag on a boundary edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryTag {
    Dirichlet,
    Neumann,
}

/// An edge on the domain boundary.
#[derive(Debug, Clone, Copy)]
pub struct BoundaryEdge {
    /// Endpoint node indices, ordered counterclockwise around the boundary.
    pub nodes: [usize; 2],
    pub tag: BoundaryTag,
}

/// Geometric shapes used to describe regions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Shape {
    Disc { center: [f64; 2], radius: f64 },
    Rect { lo: [f64; 2], hi: [f64; 2] },
    Polygon { vertices: Vec<[f64; 2]> },
}

impl Shape {
    /// Whether a point lies in the (closed) shape.
    pub fn contains(&self, p: [f64; 2]) -> bool {
        match self {
            Shape::Disc { center, radius } => {
                let dx = p[0] - center[0];
                let dy = p[1] - center[1];
                dx * dx + dy * dy <= radius * radius
            }
            Shape::Rect { lo, hi } => {
                p[0] >= lo[0] && p[0] <= hi[0] && p[1] >= lo[1] && p[1] <= hi[1]
            }
            Shape::Polygon { vertices } => {
                // Ray casting along +x.
                let n = vertices.len();
                let mut inside = false;
                for i in 0..n {
                    let a = vertices[i];
                    let b = vertices[(i + 1) % n];
                    if (a[1] > p[1]) != (b[1] > p[1]) {
                        let t = (p[1] - a[1]) / (b[1] - a[1]);
                        let x = a[0] + t * (b[0] - a[0]);
                        if p[0] < x {
                            inside = !inside;
                        }
                    }
                }
                inside
            }
        }
    }

    /// Axis-aligned bounding box of the shape.
    pub fn bounding_box(&self) -> ([f64; 2], [f64; 2]) {
        match self {
            Shape::Disc { center, radius } => (
                [center[0] - radius, center[1] - radius],
                [center[0] + radius, center[1] + radius],
            ),
            Shape::Rect { lo, hi } => (*lo, *hi),
            Shape::Polygon { vertices } => {
                let mut lo = [f64::INFINITY; 2];
                let mut hi = [f64::NEG_INFINITY; 2];
                for v in vertices {
                    for k in 0..2 {
                        lo[k] = lo[k].min(v[k]);
                        hi[k] = hi[k].max(v[k]);
                    }
                }
                (lo, hi)
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            Shape::Disc { radius, .. } => *radius > 0.0,
            Shape::Rect { lo, hi } => lo[0] < hi[0] && lo[1] < hi[1],
            Shape::Polygon { vertices } => {
                vertices.len() >= 3 && polygon_area(vertices).abs() > 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid("mesh", format!("degenerate shape {self:?}")))
        }
    }
}

fn polygon_area(vertices: &[[f64; 2]]) -> f64 {
    let n = vertices.len();
    let mut s = 0.0;
    for i in 0..n {
        let a = vertices[i];
        let b = vertices[(i + 1) % n];
        s += a[0] * b[1] - b[0] * a[1];
    }
    s / 2.0
}

/// A named geometric region used for inclusions and test sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionSpec {
    pub id: String,
    pub shape: Shape,
}

/// Triangulated unit square with boundary tags and region labels.
///
/// Immutable after construction; `label_regions` and `refine` return new
/// meshes. Safe to share read-only across parallel workers.
#[derive(Debug, Clone)]
pub struct Mesh {
    /// Node coordinates.
    pub nodes: Vec<[f64; 2]>,
    /// Counterclockwise node triples.
    pub elements: Vec<[usize; 3]>,
    /// Tagged boundary edges, counterclockwise around the square.
    pub boundary_edges: Vec<BoundaryEdge>,
    /// Region label per element; index into `region_names`, 0 = background.
    pub element_region: Vec<usize>,
    /// Region names; `region_names[0]` is always "background".
    pub region_names: Vec<String>,
    /// Maximum element diameter.
    pub h: f64,
}

/// Build the structured triangulation with `n` subdivisions per side.
///
/// `dirichlet_sides` must be a non-empty, proper subset of the four sides;
/// the remaining sides are tagged Neumann.
pub fn build_unit_square_mesh(n: usize, dirichlet_sides: &BTreeSet<Side>) -> Result<Mesh> {
    if n < 2 {
        return Err(Error::invalid(
            "mesh",
            format!("subdivisions n = {n} must be >= 2"),
        ));
    }
    if dirichlet_sides.is_empty() {
        return Err(Error::invalid(
            "mesh",
            "dirichlet_sides is empty; the Dirichlet boundary piece must be non-empty",
        ));
    }
    if dirichlet_sides.len() == 4 {
        return Err(Error::invalid(
            "mesh",
            "all four sides are Dirichlet; the Neumann boundary piece must be non-empty",
        ));
    }

    let np = n + 1;
    let mut nodes = Vec::with_capacity(np * np);
    for j in 0..np {
        for i in 0..np {
            nodes.push([i as f64 / n as f64, j as f64 / n as f64]);
        }
    }

    let mut elements = Vec::with_capacity(2 * n * n);
    for j in 0..n {
        for i in 0..n {
            let v00 = j * np + i;
            let v10 = v00 + 1;
            let v01 = v00 + np;
            let v11 = v01 + 1;
            elements.push([v00, v10, v11]);
            elements.push([v00, v11, v01]);
        }
    }

    let tag_of = |side: Side| {
        if dirichlet_sides.contains(&side) {
            BoundaryTag::Dirichlet
        } else {
            BoundaryTag::Neumann
        }
    };
    let mut boundary_edges = Vec::with_capacity(4 * n);
    for i in 0..n {
        boundary_edges.push(BoundaryEdge {
            nodes: [i, i + 1],
            tag: tag_of(Side::Bottom),
        });
    }
    for j in 0..n {
        boundary_edges.push(BoundaryEdge {
            nodes: [j * np + n, (j + 1) * np + n],
            tag: tag_of(Side::Right),
        });
    }
    for i in (0..n).rev() {
        boundary_edges.push(BoundaryEdge {
            nodes: [n * np + i + 1, n * np + i],
            tag: tag_of(Side::Top),
        });
    }
    for j in (0..n).rev() {
        boundary_edges.push(BoundaryEdge {
            nodes: [(j + 1) * np, j * np],
            tag: tag_of(Side::Left),
        });
    }

    Ok(Mesh {
        nodes,
        elements: elements.clone(),
        boundary_edges,
        element_region: vec![0; elements.len()],
        region_names: vec!["background".to_string()],
        h: std::f64::consts::SQRT_2 / n as f64,
    })
}

/// Label elements by barycenter membership in the given region shapes.
///
/// Elements whose barycenter lies in no shape keep the background label.
/// Shapes must be pairwise disjoint (no element may be claimed twice), carry
/// distinct ids, and keep at least one element layer of margin to the
/// domain boundary.
pub fn label_regions(mesh: &Mesh, specs: &[RegionSpec]) -> Result<Mesh> {
    let margin = cell_size(mesh);
    let mut ids = BTreeSet::new();
    for spec in specs {
        spec.shape.validate()?;
        if spec.id == "background" {
            return Err(Error::invalid("mesh", "region id 'background' is reserved"));
        }
        if !ids.insert(spec.id.clone()) {
            return Err(Error::invalid(
                "mesh",
                format!("duplicate region id '{}'", spec.id),
            ));
        }
        let (lo, hi) = spec.shape.bounding_box();
        let tol = 1e-12;
        if lo[0] < margin - tol || lo[1] < margin - tol
            || hi[0] > 1.0 - margin + tol || hi[1] > 1.0 - margin + tol
        {
            return Err(Error::invalid(
                "mesh",
                format!(
                    "region '{}' violates the interior margin of one element layer ({margin:.6})",
                    spec.id
                ),
            ));
        }
    }

    let mut out = mesh.clone();
    out.region_names = vec!["background".to_string()];
    out.region_names
        .extend(specs.iter().map(|s| s.id.clone()));
    out.element_region = vec![0; mesh.elements.len()];
    for (e, tri) in mesh.elements.iter().enumerate() {
        let b = mesh.barycenter(*tri);
        for (k, spec) in specs.iter().enumerate() {
            if spec.shape.contains(b) {
                if out.element_region[e] != 0 {
                    return Err(Error::invalid(
                        "mesh",
                        format!(
                            "regions '{}' and '{}' overlap (element {e} claimed twice)",
                            out.region_names[out.element_region[e]], spec.id
                        ),
                    ));
                }
                out.element_region[e] = k + 1;
            }
        }
    }
    Ok(out)
}

/// Uniform red refinement: each triangle splits into 4 congruent children.
///
/// Children of element `e` occupy indices `4e..4e+4` and inherit its region
/// label; boundary edges split in two with the parent tag; `h` halves.
pub fn refine(mesh: &Mesh) -> Mesh {
    let mut nodes = mesh.nodes.clone();
    let mut midpoint = HashMap::new();
    let mut mid = |a: usize, b: usize, nodes: &mut Vec<[f64; 2]>| -> usize {
        let key = (a.min(b), a.max(b));
        *midpoint.entry(key).or_insert_with(|| {
            let p = nodes[a];
            let q = nodes[b];
            nodes.push([(p[0] + q[0]) / 2.0, (p[1] + q[1]) / 2.0]);
            nodes.len() - 1
        })
    };

    let mut elements = Vec::with_capacity(4 * mesh.elements.len());
    let mut element_region = Vec::with_capacity(4 * mesh.elements.len());
    for (e, &[a, b, c]) in mesh.elements.iter().enumerate() {
        let mab = mid(a, b, &mut nodes);
        let mbc = mid(b, c, &mut nodes);
        let mca = mid(c, a, &mut nodes);
        elements.push([a, mab, mca]);
        elements.push([mab, b, mbc]);
        elements.push([mca, mbc, c]);
        elements.push([mab, mbc, mca]);
        element_region.extend(std::iter::repeat_n(mesh.element_region[e], 4));
    }

    let mut boundary_edges = Vec::with_capacity(2 * mesh.boundary_edges.len());
    for edge in &mesh.boundary_edges {
        let [p, q] = edge.nodes;
        let m = mid(p, q, &mut nodes);
        boundary_edges.push(BoundaryEdge {
            nodes: [p, m],
            tag: edge.tag,
        });
        boundary_edges.push(BoundaryEdge {
            nodes: [m, q],
            tag: edge.tag,
        });
    }

    Mesh {
        nodes,
        elements,
        boundary_edges,
        element_region,
        region_names: mesh.region_names.clone(),
        h: mesh.h / 2.0,
    }
}

/// Side length of one grid cell (the interior margin unit).
pub fn cell_size(mesh: &Mesh) -> f64 {
    mesh.h / std::f64::consts::SQRT_2
}

impl Mesh {
    /// Barycenter of a node triple.
    pub fn barycenter(&self, tri: [usize; 3]) -> [f64; 2] {
        let [a, b, c] = tri;
        [
            (self.nodes[a][0] + self.nodes[b][0] + self.nodes[c][0]) / 3.0,
            (self.nodes[a][1] + self.nodes[b][1] + self.nodes[c][1]) / 3.0,
        ]
    }

    /// Signed area of an element (positive for counterclockwise triples).
    pub fn signed_area(&self, e: usize) -> f64 {
        let [a, b, c] = self.elements[e];
        let pa = self.nodes[a];
        let pb = self.nodes[b];
        let pc = self.nodes[c];
        ((pb[0] - pa[0]) * (pc[1] - pa[1]) - (pc[0] - pa[0]) * (pb[1] - pa[1])) / 2.0
    }

    /// Number of grid cells per side (the mesh is always structured).
    pub fn cells_per_side(&self) -> usize {
        (std::f64::consts::SQRT_2 / self.h).round() as usize
    }

    /// Region label index for a region name.
    pub fn region_index(&self, name: &str) -> Option<usize> {
        self.region_names.iter().position(|r| r == name)
    }

    /// Elements labeled with the given region index.
    pub fn region_elements(&self, region: usize) -> Vec<usize> {
        (0..self.elements.len())
            .filter(|&e| self.element_region[e] == region)
            .collect()
    }

    /// Elements whose barycenter lies in `shape`.
    pub fn elements_in_shape(&self, shape: &Shape) -> Vec<usize> {
        (0..self.elements.len())
            .filter(|&e| shape.contains(self.barycenter(self.elements[e])))
            .collect()
    }

    /// Edge length between two nodes.
    pub fn edge_length(&self, nodes: [usize; 2]) -> f64 {
        let p = self.nodes[nodes[0]];
        let q = self.nodes[nodes[1]];
        ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt()
    }

    /// Neumann edge indices in boundary order.
    pub fn neumann_edges(&self) -> Vec<usize> {
        (0..self.boundary_edges.len())
            .filter(|&k| self.boundary_edges[k].tag == BoundaryTag::Neumann)
            .collect()
    }

    /// Nodes lying on the Dirichlet boundary (endpoints of Dirichlet edges).
    pub fn dirichlet_nodes(&self) -> Vec<bool> {
        let mut on = vec![false; self.nodes.len()];
        for edge in &self.boundary_edges {
            if edge.tag == BoundaryTag::Dirichlet {
                on[edge.nodes[0]] = true;
                on[edge.nodes[1]] = true;
            }
        }
        on
    }

    /// Nodes lying on any boundary edge.
    pub fn boundary_nodes(&self) -> Vec<bool> {
        let mut on = vec![false; self.nodes.len()];
        for edge in &self.boundary_edges {
            on[edge.nodes[0]] = true;
            on[edge.nodes[1]] = true;
        }
        on
    }

    /// Plain-text dump for debugging: one record per line.
    pub fn dump_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "# mesh nodes={} elements={} boundary_edges={} h={:.17e}",
            self.nodes.len(),
            self.elements.len(),
            self.boundary_edges.len(),
            self.h
        );
        for (i, p) in self.nodes.iter().enumerate() {
            let _ = writeln!(s, "node {i} {:.17e} {:.17e}", p[0], p[1]);
        }
        for (e, tri) in self.elements.iter().enumerate() {
            let _ = writeln!(
                s,
                "element {e} {} {} {} {}",
                tri[0], tri[1], tri[2], self.region_names[self.element_region[e]]
            );
        }
        for (k, edge) in self.boundary_edges.iter().enumerate() {
            let tag = match edge.tag {
                BoundaryTag::Dirichlet => "dirichlet",
                BoundaryTag::Neumann => "neumann",
            };
            let _ = writeln!(s, "edge {k} {} {} {tag}", edge.nodes[0], edge.nodes[1]);
        }
        s
    }
}

/// Connected components of an element subset, two elements being adjacent
/// when they share a full edge.
pub(crate) fn components_by_edge(mesh: &Mesh, in_set: &[bool]) -> Vec<Vec<usize>> {
    components(mesh, in_set, false)
}

/// Connected components of an element subset, two elements being adjacent
/// when they share at least one node.
pub(crate) fn components_by_node(mesh: &Mesh, in_set: &[bool]) -> Vec<Vec<usize>> {
    components(mesh, in_set, true)
}

fn components(mesh: &Mesh, in_set: &[bool], by_node: bool) -> Vec<Vec<usize>> {
    // Union-find keyed on element index.
    let ne = mesh.elements.len();
    let mut parent: Vec<usize> = (0..ne).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let union = |parent: &mut [usize], a: usize, b: usize| {
        let (ra, rb) = (find(parent, a), find(parent, b));
        if ra != rb {
            let (lo, hi) = (ra.min(rb), ra.max(rb));
            parent[hi] = lo;
        }
    };

    if by_node {
        let mut first_at_node: Vec<Option<usize>> = vec![None; mesh.nodes.len()];
        for e in 0..ne {
            if !in_set[e] {
                continue;
            }
            for &v in &mesh.elements[e] {
                match first_at_node[v] {
                    Some(f) => union(&mut parent, f, e),
                    None => first_at_node[v] = Some(e),
                }
            }
        }
    } else {
        let mut first_at_edge: HashMap<(usize, usize), usize> = HashMap::new();
        for e in 0..ne {
            if !in_set[e] {
                continue;
            }
            let [a, b, c] = mesh.elements[e];
            for (p, q) in [(a, b), (b, c), (c, a)] {
                let key = (p.min(q), p.max(q));
                match first_at_edge.get(&key) {
                    Some(&f) => union(&mut parent, f, e),
                    None => {
                        first_at_edge.insert(key, e);
                    }
                }
            }
        }
    }

    let mut groups: HashMap<usize, Vec<usize>> = HashMap::new();
    for e in 0..ne {
        if in_set[e] {
            let r = find(&mut parent, e);
            groups.entry(r).or_default().push(e);
        }
    }
    let mut out: Vec<Vec<usize>> = groups.into_values().collect();
    out.sort_by_key(|g| g[0]);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn dirichlet(sides: &[Side]) -> BTreeSet<Side> {
        sides.iter().copied().collect()
    }

    #[test]
    fn small_mesh_counts() {
        let mesh = build_unit_square_mesh(2, &dirichlet(&[Side::Bottom])).unwrap();
        assert_eq!(mesh.elements.len(), 8);
        assert_eq!(mesh.nodes.len(), 9);
        let nd = mesh
            .boundary_edges
            .iter()
            .filter(|e| e.tag == BoundaryTag::Dirichlet)
            .count();
        assert_eq!(nd, 2);
        assert_eq!(mesh.boundary_edges.len() - nd, 6);
    }

    #[test]
    fn rejects_bad_dirichlet_sets() {
        assert!(build_unit_square_mesh(2, &dirichlet(&[])).is_err());
        assert!(build_unit_square_mesh(2, &dirichlet(&Side::ALL)).is_err());
        assert!(build_unit_square_mesh(1, &dirichlet(&[Side::Bottom])).is_err());
    }

    #[test]
    fn mesh_32_h() {
        let mesh = build_unit_square_mesh(32, &dirichlet(&[Side::Bottom])).unwrap();
        assert_eq!(mesh.elements.len(), 2048);
        assert_relative_eq!(mesh.h, 2.0_f64.sqrt() / 32.0, epsilon = 1e-15);
        assert_eq!(mesh.cells_per_side(), 32);
    }

    #[test]
    fn areas_positive_and_sum_to_one() {
        let mesh = build_unit_square_mesh(7, &dirichlet(&[Side::Left])).unwrap();
        let mut total = 0.0;
        for e in 0..mesh.elements.len() {
            let a = mesh.signed_area(e);
            assert!(a > 0.0, "element {e} has non-positive signed area {a}");
            total += a;
        }
        assert_relative_eq!(total, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn label_disc_matches_brute_force_count() {
        let mesh = build_unit_square_mesh(32, &dirichlet(&[Side::Bottom])).unwrap();
        let spec = RegionSpec {
            id: "disc".into(),
            shape: Shape::Disc {
                center: [0.5, 0.5],
                radius: 0.2,
            },
        };
        let labeled = label_regions(&mesh, std::slice::from_ref(&spec)).unwrap();
        let count = labeled.region_elements(1).len();

        // Independent brute-force barycenter-in-disc count.
        let mut oracle = 0usize;
        for tri in &mesh.elements {
            let b = mesh.barycenter(*tri);
            let (dx, dy) = (b[0] - 0.5, b[1] - 0.5);
            if dx * dx + dy * dy <= 0.04 {
                oracle += 1;
            }
        }
        assert_eq!(count, oracle);

        // Within 10% of the continuum element count pi r^2 * 2 n^2.
        let expected = std::f64::consts::PI * 0.04 * 2048.0;
        assert!((count as f64 - expected).abs() <= 0.1 * expected);
    }

    #[test]
    fn empty_specs_all_background() {
        let mesh = build_unit_square_mesh(4, &dirichlet(&[Side::Bottom])).unwrap();
        let labeled = label_regions(&mesh, &[]).unwrap();
        assert!(labeled.element_region.iter().all(|&r| r == 0));
    }

    #[test]
    fn overlapping_regions_rejected() {
        let mesh = build_unit_square_mesh(16, &dirichlet(&[Side::Bottom])).unwrap();
        let specs = [
            RegionSpec {
                id: "rigid".into(),
                shape: Shape::Rect {
                    lo: [0.3, 0.3],
                    hi: [0.6, 0.6],
                },
            },
            RegionSpec {
                id: "cavity".into(),
                shape: Shape::Rect {
                    lo: [0.5, 0.5],
                    hi: [0.8, 0.8],
                },
            },
        ];
        let err = label_regions(&mesh, &specs).unwrap_err();
        assert!(err.to_string().contains("overlap"), "{err}");
    }

    #[test]
    fn margin_violation_rejected() {
        let mesh = build_unit_square_mesh(16, &dirichlet(&[Side::Bottom])).unwrap();
        let spec = RegionSpec {
            id: "disc".into(),
            shape: Shape::Disc {
                center: [0.5, 0.03],
                radius: 0.02,
            },
        };
        assert!(label_regions(&mesh, &[spec]).is_err());
    }

    #[test]
    fn refine_splits_in_four_and_halves_h() {
        let mesh = build_unit_square_mesh(2, &dirichlet(&[Side::Bottom])).unwrap();
        let fine = refine(&mesh);
        assert_eq!(fine.elements.len(), 32);
        assert_relative_eq!(fine.h, mesh.h / 2.0, epsilon = 0.0);
        let finer = refine(&fine);
        assert_relative_eq!(finer.h, mesh.h / 4.0, epsilon = 0.0);
    }

    #[test]
    fn refine_inherits_labels_positionally() {
        let mesh = build_unit_square_mesh(8, &dirichlet(&[Side::Bottom])).unwrap();
        let labeled = label_regions(
            &mesh,
            &[RegionSpec {
                id: "disc".into(),
                shape: Shape::Disc {
                    center: [0.5, 0.5],
                    radius: 0.25,
                },
            }],
        )
        .unwrap();
        let fine = refine(&labeled);
        for e in 0..labeled.elements.len() {
            for k in 0..4 {
                assert_eq!(fine.element_region[4 * e + k], labeled.element_region[e]);
            }
        }
    }

    #[test]
    fn refine_preserves_boundary_split() {
        let mesh = build_unit_square_mesh(5, &dirichlet(&[Side::Bottom, Side::Left])).unwrap();
        let fine = refine(&mesh);
        assert_eq!(fine.boundary_edges.len(), 2 * mesh.boundary_edges.len());
        for (k, edge) in mesh.boundary_edges.iter().enumerate() {
            assert_eq!(fine.boundary_edges[2 * k].tag, edge.tag);
            assert_eq!(fine.boundary_edges[2 * k + 1].tag, edge.tag);
        }
        let len = |m: &Mesh, tag: BoundaryTag| -> f64 {
            m.boundary_edges
                .iter()
                .filter(|e| e.tag == tag)
                .map(|e| m.edge_length(e.nodes))
                .sum()
        };
        assert_relative_eq!(
            len(&fine, BoundaryTag::Dirichlet),
            len(&mesh, BoundaryTag::Dirichlet),
            epsilon = 1e-12
        );
        assert_relative_eq!(
            len(&fine, BoundaryTag::Neumann),
            len(&mesh, BoundaryTag::Neumann),
            epsilon = 1e-12
        );
    }

    #[test]
    fn label_regions_idempotent() {
        let mesh = build_unit_square_mesh(12, &dirichlet(&[Side::Bottom])).unwrap();
        let specs = [RegionSpec {
            id: "tri".into(),
            shape: Shape::Polygon {
                vertices: vec![[0.3, 0.3], [0.7, 0.35], [0.5, 0.7]],
            },
        }];
        let once = label_regions(&mesh, &specs).unwrap();
        let twice = label_regions(&once, &specs).unwrap();
        assert_eq!(once.element_region, twice.element_region);
    }

    #[test]
    fn components_split_by_edge_vs_node() {
        // Two cells touching only at one node: elements sharing that node
        // are node-connected but not edge-connected.
        let mesh = build_unit_square_mesh(4, &dirichlet(&[Side::Bottom])).unwrap();
        // Cells (0,0) and (1,1): elements 0,1 and 2*(4+1)=10,11.
        let mut in_set = vec![false; mesh.elements.len()];
        for e in [0usize, 1, 10, 11] {
            in_set[e] = true;
        }
        assert_eq!(components_by_edge(&mesh, &in_set).len(), 2);
        assert_eq!(components_by_node(&mesh, &in_set).len(), 1);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn prop_area_sum_after_build_and_refine(n in 2usize..10, refinements in 0usize..3) {
            let mesh = build_unit_square_mesh(n, &dirichlet(&[Side::Bottom])).unwrap();
            let mut m = mesh;
            for _ in 0..refinements {
                m = refine(&m);
            }
            let total: f64 = (0..m.elements.len()).map(|e| m.signed_area(e)).sum();
            prop_assert!((total - 1.0).abs() <= 1e-12);
        }
    }
}
