//! Uniform Cartesian meshes of the bounding box.
//!
//! Nodes and elements are numbered lexicographically with the first axis
//! varying fastest. Along a periodic axis the last layer of nodes is
//! identified with the first, so that axis carries `el_size` nodes instead of
//! `el_size + 1`.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Largest supported spatial dimension.
pub const MAX_DIM: usize = 3;

/// Largest number of nodes on one element (a hexahedron).
pub const MAX_ELEMENT_NODES: usize = 1 << MAX_DIM;

/// Uniform structured grid over an axis-aligned box.
#[derive(Debug, Clone, PartialEq)]
pub struct CartesianMesh {
    dim: usize,
    el_size: [usize; MAX_DIM],
    origin: [f64; MAX_DIM],
    lengths: [f64; MAX_DIM],
    delta: [f64; MAX_DIM],
    periodic: [bool; MAX_DIM],
    nodes_per_axis: [usize; MAX_DIM],
}

impl CartesianMesh {
    /// Build a mesh with `el_size[i]` elements along axis `i`.
    ///
    /// `periodic` may be empty, meaning no periodic axes.
    pub fn new(
        dim: usize,
        el_size: &[usize],
        origin: &[f64],
        lengths: &[f64],
        periodic: &[bool],
    ) -> Result<Self> {
        if !(2..=MAX_DIM).contains(&dim) {
            return Err(Error::invalid(format!("dimension must be 2 or 3, got {dim}")));
        }
        if el_size.len() != dim || origin.len() != dim || lengths.len() != dim {
            return Err(Error::invalid(format!(
                "el_size, origin and lengths must all have {dim} entries"
            )));
        }
        if !periodic.is_empty() && periodic.len() != dim {
            return Err(Error::invalid(format!("periodic must have {dim} entries")));
        }
        let mut mesh = CartesianMesh {
            dim,
            el_size: [1; MAX_DIM],
            origin: [0.0; MAX_DIM],
            lengths: [1.0; MAX_DIM],
            delta: [1.0; MAX_DIM],
            periodic: [false; MAX_DIM],
            nodes_per_axis: [1; MAX_DIM],
        };
        for i in 0..dim {
            if el_size[i] == 0 {
                return Err(Error::invalid(format!("el_size[{i}] must be at least 1")));
            }
            if !(lengths[i] > 0.0) || !lengths[i].is_finite() {
                return Err(Error::invalid(format!(
                    "lengths[{i}] must be positive and finite, got {}",
                    lengths[i]
                )));
            }
            if !origin[i].is_finite() {
                return Err(Error::invalid(format!("origin[{i}] is not finite")));
            }
            let periodic = periodic.get(i).copied().unwrap_or(false);
            if periodic && el_size[i] < 2 {
                return Err(Error::invalid(format!(
                    "periodic axis {i} needs at least 2 elements"
                )));
            }
            mesh.el_size[i] = el_size[i];
            mesh.origin[i] = origin[i];
            mesh.lengths[i] = lengths[i];
            mesh.delta[i] = lengths[i] / el_size[i] as f64;
            mesh.periodic[i] = periodic;
            mesh.nodes_per_axis[i] = if periodic { el_size[i] } else { el_size[i] + 1 };
        }
        Ok(mesh)
    }

    /// Unit-box mesh `[0,1]^dim` without periodicity.
    pub fn unit(el_size: &[usize]) -> Result<Self> {
        let dim = el_size.len();
        Self::new(dim, el_size, &vec![0.0; dim], &vec![1.0; dim], &[])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn el_size(&self) -> &[usize] {
        &self.el_size[..self.dim]
    }

    pub fn origin(&self) -> &[f64] {
        &self.origin[..self.dim]
    }

    pub fn lengths(&self) -> &[f64] {
        &self.lengths[..self.dim]
    }

    /// Element side length per axis.
    pub fn delta(&self) -> &[f64] {
        &self.delta[..self.dim]
    }

    pub fn periodic(&self) -> &[bool] {
        &self.periodic[..self.dim]
    }

    pub fn is_periodic(&self, axis: usize) -> bool {
        self.periodic[axis]
    }

    pub fn nodes_per_axis(&self) -> &[usize] {
        &self.nodes_per_axis[..self.dim]
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes_per_axis().iter().product()
    }

    pub fn n_elements(&self) -> usize {
        self.el_size().iter().product()
    }

    /// Number of nodes on one element, `2^dim`.
    pub fn nodes_per_element(&self) -> usize {
        1 << self.dim
    }

    pub fn max_delta(&self) -> f64 {
        self.delta().iter().copied().fold(f64::MIN, f64::max)
    }

    pub fn min_delta(&self) -> f64 {
        self.delta().iter().copied().fold(f64::MAX, f64::min)
    }

    /// Volume of the bounding box.
    pub fn volume(&self) -> f64 {
        self.lengths().iter().product()
    }

    /// Volume of one element.
    pub fn element_volume(&self) -> f64 {
        self.delta().iter().product()
    }

    /// Absolute tolerance for coordinate comparisons in boundary indicators.
    pub fn tol(&self) -> f64 {
        1e-9 * self.lengths().iter().copied().fold(0.0, f64::max)
    }

    /// Approximate coordinate equality at the mesh tolerance.
    pub fn approx_eq(&self, a: f64, b: f64) -> bool {
        (a - b).abs() <= self.tol()
    }

    /// Upper corner coordinate along `axis`.
    pub fn upper(&self, axis: usize) -> f64 {
        self.origin[axis] + self.lengths[axis]
    }

    /// Node id from per-axis indices (indices are wrapped on periodic axes).
    pub fn node_id(&self, idx: &[usize]) -> usize {
        let mut id = 0;
        let mut stride = 1;
        for i in 0..self.dim {
            let n = self.nodes_per_axis[i];
            let k = if self.periodic[i] { idx[i] % n } else { idx[i] };
            debug_assert!(k < n, "node index out of range");
            id += k * stride;
            stride *= n;
        }
        id
    }

    /// Per-axis indices of a node.
    pub fn node_index(&self, id: usize) -> [usize; MAX_DIM] {
        let mut idx = [0; MAX_DIM];
        let mut rest = id;
        for (i, slot) in idx.iter_mut().enumerate().take(self.dim) {
            let n = self.nodes_per_axis[i];
            *slot = rest % n;
            rest /= n;
        }
        idx
    }

    pub fn node_coords(&self, id: usize) -> [f64; MAX_DIM] {
        let idx = self.node_index(id);
        let mut x = [0.0; MAX_DIM];
        for i in 0..self.dim {
            x[i] = self.origin[i] + idx[i] as f64 * self.delta[i];
        }
        x
    }

    /// Nearest node to a point; coordinates outside the box are clamped,
    /// except along periodic axes where they wrap.
    pub fn nearest_node(&self, x: &[f64]) -> usize {
        let mut idx = [0; MAX_DIM];
        for i in 0..self.dim {
            let t = ((x[i] - self.origin[i]) / self.delta[i]).round();
            idx[i] = if self.periodic[i] {
                (t as i64).rem_euclid(self.el_size[i] as i64) as usize
            } else {
                t.clamp(0.0, self.el_size[i] as f64) as usize
            };
        }
        self.node_id(&idx)
    }

    /// True when the node lies on the boundary of a non-periodic axis.
    pub fn is_boundary_node(&self, id: usize) -> bool {
        let idx = self.node_index(id);
        (0..self.dim).any(|i| !self.periodic[i] && (idx[i] == 0 || idx[i] == self.el_size[i]))
    }

    pub fn element_index(&self, e: usize) -> [usize; MAX_DIM] {
        let mut idx = [0; MAX_DIM];
        let mut rest = e;
        for (i, slot) in idx.iter_mut().enumerate().take(self.dim) {
            *slot = rest % self.el_size[i];
            rest /= self.el_size[i];
        }
        idx
    }

    pub fn element_id(&self, idx: &[usize]) -> usize {
        let mut id = 0;
        let mut stride = 1;
        for i in 0..self.dim {
            id += idx[i] * stride;
            stride *= self.el_size[i];
        }
        id
    }

    /// Global node ids of an element. Local node `a` sits at offset
    /// `(a >> i) & 1` along axis `i`.
    pub fn element_nodes(&self, e: usize) -> [usize; MAX_ELEMENT_NODES] {
        let base = self.element_index(e);
        let mut nodes = [0; MAX_ELEMENT_NODES];
        let mut idx = [0; MAX_DIM];
        for (a, slot) in nodes.iter_mut().enumerate().take(self.nodes_per_element()) {
            for i in 0..self.dim {
                idx[i] = base[i] + ((a >> i) & 1);
            }
            *slot = self.node_id(&idx);
        }
        nodes
    }

    /// Coordinates of the lower corner of an element.
    pub fn element_origin(&self, e: usize) -> [f64; MAX_DIM] {
        let idx = self.element_index(e);
        let mut x = [0.0; MAX_DIM];
        for i in 0..self.dim {
            x[i] = self.origin[i] + idx[i] as f64 * self.delta[i];
        }
        x
    }

    /// Neighbouring element across a face: `forward` selects `+axis`.
    /// Wraps along periodic axes; `None` across a non-periodic boundary.
    pub fn neighbour_element(&self, e: usize, axis: usize, forward: bool) -> Option<usize> {
        let mut idx = self.element_index(e);
        let n = self.el_size[axis];
        if forward {
            if idx[axis] + 1 < n {
                idx[axis] += 1;
            } else if self.periodic[axis] {
                idx[axis] = 0;
            } else {
                return None;
            }
        } else if idx[axis] > 0 {
            idx[axis] -= 1;
        } else if self.periodic[axis] {
            idx[axis] = n - 1;
        } else {
            return None;
        }
        Some(self.element_id(&idx))
    }

    /// Node grid of the unwrapped mesh: `el_size + 1` nodes on every axis.
    pub fn unwrapped_nodes_per_axis(&self) -> [usize; MAX_DIM] {
        let mut n = [1; MAX_DIM];
        for i in 0..self.dim {
            n[i] = self.el_size[i] + 1;
        }
        n
    }

    /// Map every node of the unwrapped grid (x-fastest) to its mesh node id.
    pub fn unwrapped_node_map(&self) -> Vec<usize> {
        let n = self.unwrapped_nodes_per_axis();
        let total: usize = n.iter().take(self.dim).product();
        let mut out = Vec::with_capacity(total);
        let mut idx = [0; MAX_DIM];
        for k in 0..total {
            let mut rest = k;
            for i in 0..self.dim {
                idx[i] = rest % n[i];
                rest /= n[i];
            }
            out.push(self.node_id(&idx));
        }
        out
    }
}

/// A boundary facet: the face of `element` normal to `axis`, on the lower
/// (`upper == false`) or upper side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Facet {
    pub element: usize,
    pub axis: usize,
    pub upper: bool,
}

impl Facet {
    /// Local element node numbers lying on this facet.
    pub fn local_nodes(&self, dim: usize) -> impl Iterator<Item = usize> + '_ {
        let side = usize::from(self.upper);
        (0..1usize << dim).filter(move |a| (a >> self.axis) & 1 == side)
    }

    /// Outward unit normal.
    pub fn normal(&self) -> [f64; MAX_DIM] {
        let mut n = [0.0; MAX_DIM];
        n[self.axis] = if self.upper { 1.0 } else { -1.0 };
        n
    }
}

/// Nodes and facets carrying one label.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Tag {
    /// Sorted, duplicate-free node ids.
    pub nodes: Vec<usize>,
    /// Boundary facets whose nodes are all tagged.
    pub facets: Vec<Facet>,
}

impl Tag {
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn contains(&self, node: usize) -> bool {
        self.nodes.binary_search(&node).is_ok()
    }
}

/// Result of a tagging call. Empty tags are legal but carry a warning.
#[derive(Debug, Clone, PartialEq)]
pub struct TagReport {
    pub nodes: usize,
    pub facets: usize,
    pub warning: Option<String>,
}

/// Named node/facet sets on a mesh.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BoundaryTagSet {
    tags: BTreeMap<String, Tag>,
}

impl BoundaryTagSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Tag the boundary nodes where `indicator` holds.
    pub fn tag_boundary<F>(&mut self, mesh: &CartesianMesh, name: &str, indicator: F) -> TagReport
    where
        F: Fn(&[f64]) -> bool,
    {
        self.tag_nodes(mesh, name, indicator, false)
    }

    /// Tag nodes where `indicator` holds. Interior nodes are only considered
    /// when `allow_interior` is set (e.g. to pin a point of a periodic cell).
    pub fn tag_nodes<F>(
        &mut self,
        mesh: &CartesianMesh,
        name: &str,
        indicator: F,
        allow_interior: bool,
    ) -> TagReport
    where
        F: Fn(&[f64]) -> bool,
    {
        let dim = mesh.dim();
        let nodes: Vec<usize> = (0..mesh.n_nodes())
            .filter(|&n| allow_interior || mesh.is_boundary_node(n))
            .filter(|&n| indicator(&mesh.node_coords(n)[..dim]))
            .collect();
        let facets = boundary_facets(mesh)
            .into_iter()
            .filter(|f| {
                let en = mesh.element_nodes(f.element);
                f.local_nodes(dim)
                    .all(|a| nodes.binary_search(&en[a]).is_ok())
            })
            .collect::<Vec<_>>();
        let warning = nodes
            .is_empty()
            .then(|| format!("tag '{name}' matched no nodes"));
        let report = TagReport {
            nodes: nodes.len(),
            facets: facets.len(),
            warning,
        };
        self.tags.insert(name.to_string(), Tag { nodes, facets });
        report
    }

    pub fn get(&self, name: &str) -> Option<&Tag> {
        self.tags.get(name)
    }

    pub fn require(&self, name: &str) -> Result<&Tag> {
        self.get(name)
            .ok_or_else(|| Error::invalid(format!("unknown boundary tag '{name}'")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tags.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tags.keys().map(String::as_str)
    }
}

/// All element faces on the non-periodic boundary of the box.
pub fn boundary_facets(mesh: &CartesianMesh) -> Vec<Facet> {
    let mut out = Vec::new();
    for e in 0..mesh.n_elements() {
        let idx = mesh.element_index(e);
        for axis in 0..mesh.dim() {
            if mesh.is_periodic(axis) {
                continue;
            }
            if idx[axis] == 0 {
                out.push(Facet { element: e, axis, upper: false });
            }
            if idx[axis] + 1 == mesh.el_size()[axis] {
                out.push(Facet { element: e, axis, upper: true });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_for_small_square() {
        let m = CartesianMesh::unit(&[2, 2]).unwrap();
        assert_eq!(m.n_nodes(), 9);
        assert_eq!(m.n_elements(), 4);
        assert_eq!(m.delta(), &[0.5, 0.5]);
    }

    #[test]
    fn periodic_identifies_nodes() {
        let m = CartesianMesh::new(2, &[2, 2], &[0.0, 0.0], &[1.0, 1.0], &[true, true]).unwrap();
        assert_eq!(m.n_nodes(), 4);
        assert_eq!(m.n_elements(), 4);
        // The upper-right node of the last element wraps to the origin.
        assert_eq!(m.element_nodes(3)[3], 0);
    }

    #[test]
    fn large_3d_node_count() {
        let m = CartesianMesh::unit(&[150, 150, 150]).unwrap();
        assert_eq!(m.n_nodes(), 151 * 151 * 151);
    }

    #[test]
    fn rejects_bad_sizes() {
        assert!(CartesianMesh::unit(&[0, 2]).is_err());
        assert!(CartesianMesh::new(2, &[2, 2], &[0.0, 0.0], &[1.0, -1.0], &[]).is_err());
        assert!(CartesianMesh::new(1, &[2], &[0.0], &[1.0], &[]).is_err());
    }

    #[test]
    fn lexicographic_numbering() {
        let m = CartesianMesh::unit(&[3, 2]).unwrap();
        let mut prev = None;
        for j in 0..3 {
            for i in 0..4 {
                let id = m.node_id(&[i, j]);
                if let Some(p) = prev {
                    assert!(id > p);
                }
                prev = Some(id);
            }
        }
        assert_eq!(m.element_nodes(0)[..4], [0, 1, 4, 5]);
    }

    #[test]
    fn element_volumes_sum_to_box() {
        let m = CartesianMesh::new(2, &[7, 3], &[0.5, -1.0], &[2.0, 0.3], &[]).unwrap();
        let total = m.element_volume() * m.n_elements() as f64;
        assert!((total - m.volume()).abs() <= 1e-14 * m.volume());
    }

    #[test]
    fn node_coordinate_round_trip() {
        let m = CartesianMesh::new(3, &[3, 4, 2], &[0.1, 0.2, 0.3], &[1.0, 2.0, 0.5], &[false, true, false])
            .unwrap();
        for n in 0..m.n_nodes() {
            assert_eq!(m.nearest_node(&m.node_coords(n)), n);
        }
    }

    #[test]
    fn periodic_neighbour_cycles() {
        let m = CartesianMesh::new(2, &[5, 3], &[0.0, 0.0], &[1.0, 1.0], &[true, false]).unwrap();
        let start = m.element_id(&[4, 1]);
        assert_eq!(m.neighbour_element(start, 0, true), Some(m.element_id(&[0, 1])));
        let mut e = start;
        for _ in 0..5 {
            e = m.neighbour_element(e, 0, true).unwrap();
        }
        assert_eq!(e, start);
        assert_eq!(m.neighbour_element(m.element_id(&[0, 2]), 1, true), None);
    }

    #[test]
    fn left_edge_tag() {
        let m = CartesianMesh::unit(&[2, 2]).unwrap();
        let mut tags = BoundaryTagSet::new();
        let r = tags.tag_boundary(&m, "left", |x| m.approx_eq(x[0], 0.0));
        assert_eq!(r.nodes, 3);
        assert_eq!(r.facets, 2);
        assert!(r.warning.is_none());
        let t = tags.get("left").unwrap();
        assert_eq!(t.nodes, vec![0, 3, 6]);
    }

    #[test]
    fn empty_tag_warns() {
        let m = CartesianMesh::unit(&[2, 2]).unwrap();
        let mut tags = BoundaryTagSet::new();
        let r = tags.tag_boundary(&m, "none", |_| false);
        assert_eq!(r.nodes, 0);
        assert!(r.warning.is_some());
        assert!(tags.get("none").unwrap().is_empty());
    }

    #[test]
    fn boundary_only_unless_interior_allowed() {
        let m = CartesianMesh::unit(&[4, 4]).unwrap();
        let mut tags = BoundaryTagSet::new();
        tags.tag_boundary(&m, "all", |_| true);
        assert_eq!(tags.get("all").unwrap().nodes.len(), 16);
        tags.tag_nodes(&m, "all", |_| true, true);
        assert_eq!(tags.get("all").unwrap().nodes.len(), 25);
    }
}
