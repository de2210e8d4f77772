//! Element loops: matrix/vector assembly, integration, and dual-number
//! derivative assembly.

use std::sync::Arc;

use rayon::prelude::*;

use super::basis::PointSet;
use super::sparse::CsrMatrix;
use super::{DynIntegrand, FieldValue, Integrand, NodalField, QuadPoint};
use crate::error::{Error, Result};
use crate::mesh::{BoundaryTagSet, CartesianMesh, Facet, MAX_DIM, MAX_ELEMENT_NODES};
use crate::scalar::{Dual, Scalar};

/// Elements handled per parallel batch; results are scattered in element
/// order after each batch so sums do not depend on the thread count.
const BATCH: usize = 4096;

/// Mesh, boundary tags and precomputed basis data shared by all spaces.
#[derive(Debug, Clone)]
pub struct Q1Context {
    mesh: CartesianMesh,
    tags: BoundaryTagSet,
    volume: PointSet,
    /// Indexed by `2 * axis + upper`.
    facets: Vec<PointSet>,
}

impl Q1Context {
    pub fn new(mesh: CartesianMesh, tags: BoundaryTagSet) -> Arc<Self> {
        let volume = PointSet::volume(&mesh);
        let mut facets = Vec::with_capacity(2 * mesh.dim());
        for axis in 0..mesh.dim() {
            facets.push(PointSet::facet(&mesh, axis, false));
            facets.push(PointSet::facet(&mesh, axis, true));
        }
        Arc::new(Q1Context {
            mesh,
            tags,
            volume,
            facets,
        })
    }

    pub fn mesh(&self) -> &CartesianMesh {
        &self.mesh
    }

    pub fn tags(&self) -> &BoundaryTagSet {
        &self.tags
    }

    pub fn volume_points(&self) -> &PointSet {
        &self.volume
    }

    pub fn facet_points(&self, axis: usize, upper: bool) -> &PointSet {
        &self.facets[2 * axis + usize::from(upper)]
    }

    fn check_phi(&self, phi: &[f64]) -> Result<()> {
        if phi.len() != self.mesh.n_nodes() {
            return Err(Error::invalid(format!(
                "level set has {} values, mesh has {} nodes",
                phi.len(),
                self.mesh.n_nodes()
            )));
        }
        Ok(())
    }

    fn check_fields(&self, fields: &[&NodalField]) -> Result<()> {
        for f in fields {
            if f.ncomp > MAX_DIM || f.values.len() != f.ncomp * self.mesh.n_nodes() {
                return Err(Error::invalid(format!(
                    "field with {} components has {} values, expected {}",
                    f.ncomp,
                    f.values.len(),
                    f.ncomp * self.mesh.n_nodes()
                )));
            }
        }
        Ok(())
    }

    /// Resolve the integration items of a domain: `(element, point set)`.
    fn items(&self, domain: Domain<'_>) -> Result<Vec<(usize, &PointSet)>> {
        Ok(match domain {
            Domain::Volume => (0..self.mesh.n_elements())
                .map(|e| (e, &self.volume))
                .collect(),
            Domain::Tag(name) => self.facet_items(&self.tags.require(name)?.facets),
            Domain::Facets(list) => self.facet_items(list),
        })
    }

    fn facet_items<'s>(&'s self, list: &[Facet]) -> Vec<(usize, &'s PointSet)> {
        list.iter()
            .map(|f| (f.element, self.facet_points(f.axis, f.upper)))
            .collect()
    }
}

/// Where an integrand is integrated.
#[derive(Debug, Clone, Copy)]
pub enum Domain<'a> {
    Volume,
    /// The facets of a named boundary tag.
    Tag(&'a str),
    Facets(&'a [Facet]),
}

/// Fixed values on the nodes of a tag, one value per component.
#[derive(Debug, Clone, PartialEq)]
pub struct DirichletBC {
    pub tag: String,
    pub values: Vec<f64>,
}

impl DirichletBC {
    pub fn zero(tag: &str, ncomp: usize) -> Self {
        DirichletBC {
            tag: tag.to_string(),
            values: vec![0.0; ncomp],
        }
    }
}

/// A Q1 space with `ncomp` components per node and Dirichlet constraints.
/// Degrees of freedom are interleaved: `node * ncomp + component`.
#[derive(Debug, Clone)]
pub struct FeSpace {
    ctx: Arc<Q1Context>,
    ncomp: usize,
    fixed: Vec<bool>,
    fixed_values: Vec<f64>,
}

impl FeSpace {
    pub fn new(ctx: Arc<Q1Context>, ncomp: usize, bcs: &[DirichletBC]) -> Result<Self> {
        if ncomp == 0 || ncomp > MAX_DIM {
            return Err(Error::invalid(format!(
                "number of components must be 1..={MAX_DIM}, got {ncomp}"
            )));
        }
        let n = ctx.mesh.n_nodes() * ncomp;
        let mut space = FeSpace {
            ctx,
            ncomp,
            fixed: vec![false; n],
            fixed_values: vec![0.0; n],
        };
        for bc in bcs {
            if bc.values.len() != ncomp {
                return Err(Error::invalid(format!(
                    "Dirichlet condition on '{}' has {} values, space has {ncomp} components",
                    bc.tag,
                    bc.values.len()
                )));
            }
            let nodes = space.ctx.tags.require(&bc.tag)?.nodes.clone();
            for node in nodes {
                for (c, &v) in bc.values.iter().enumerate() {
                    space.fix_dof(node * ncomp + c, v);
                }
            }
        }
        Ok(space)
    }

    pub fn fix_dof(&mut self, dof: usize, value: f64) {
        self.fixed[dof] = true;
        self.fixed_values[dof] = value;
    }

    pub fn context(&self) -> &Arc<Q1Context> {
        &self.ctx
    }

    pub fn mesh(&self) -> &CartesianMesh {
        &self.ctx.mesh
    }

    pub fn ncomp(&self) -> usize {
        self.ncomp
    }

    pub fn n_dofs(&self) -> usize {
        self.fixed.len()
    }

    pub fn is_fixed(&self, dof: usize) -> bool {
        self.fixed[dof]
    }

    pub fn n_fixed(&self) -> usize {
        self.fixed.iter().filter(|&&f| f).count()
    }

    pub fn fixed_values(&self) -> &[f64] {
        &self.fixed_values
    }

    /// Zero the entries of `v` on constrained dofs.
    pub fn zero_fixed(&self, v: &mut [f64]) {
        for (x, &f) in v.iter_mut().zip(&self.fixed) {
            if f {
                *x = 0.0;
            }
        }
    }

    /// Right-hand side for a system eliminated with lift vector `lift`.
    pub fn constrained_rhs(&self, lift: &[f64], raw: &[f64]) -> Vec<f64> {
        let mut b = raw.to_vec();
        for i in 0..b.len() {
            b[i] = if self.fixed[i] {
                self.fixed_values[i]
            } else {
                b[i] + lift[i]
            };
        }
        b
    }

    fn local_dofs(&self, nodes: &[usize; MAX_ELEMENT_NODES]) -> Vec<usize> {
        let nen = self.ctx.mesh.nodes_per_element();
        let mut out = Vec::with_capacity(nen * self.ncomp);
        for &n in &nodes[..nen] {
            for c in 0..self.ncomp {
                out.push(n * self.ncomp + c);
            }
        }
        out
    }
}

/// Sparsity pattern of a space plus, for every element, the positions of
/// its local entries in the CSR value array.
#[derive(Debug, Clone)]
pub struct Assembler {
    space: FeSpace,
    template: CsrMatrix,
    positions: Vec<usize>,
    nld: usize,
}

/// A system matrix with Dirichlet rows/columns eliminated symmetrically.
/// `lift` is the contribution of the fixed values to the free rows.
#[derive(Debug, Clone)]
pub struct AssembledMatrix {
    pub matrix: CsrMatrix,
    pub lift: Vec<f64>,
}

impl AssembledMatrix {
    /// Right-hand side consistent with the eliminated matrix.
    pub fn rhs(&self, space: &FeSpace, raw: &[f64]) -> Vec<f64> {
        space.constrained_rhs(&self.lift, raw)
    }
}

impl Assembler {
    pub fn new(space: FeSpace) -> Self {
        let mesh = &space.ctx.mesh;
        let n = space.n_dofs();
        let nld = mesh.nodes_per_element() * space.ncomp;
        let mut rows: Vec<Vec<usize>> = vec![Vec::new(); n];
        for e in 0..mesh.n_elements() {
            let dofs = space.local_dofs(&mesh.element_nodes(e));
            for &i in &dofs {
                rows[i].extend_from_slice(&dofs);
            }
        }
        let template = CsrMatrix::from_pattern(rows);
        let mut positions = Vec::with_capacity(mesh.n_elements() * nld * nld);
        for e in 0..mesh.n_elements() {
            let dofs = space.local_dofs(&mesh.element_nodes(e));
            for &i in &dofs {
                for &j in &dofs {
                    positions.push(template.position(i, j).expect("entry in pattern"));
                }
            }
        }
        Assembler {
            space,
            template,
            positions,
            nld,
        }
    }

    pub fn space(&self) -> &FeSpace {
        &self.space
    }

    /// Assemble `a(u, v)` where the integrand sees fields `[u, v]`.
    pub fn bilinear(&self, integrand: &dyn DynIntegrand, phi: &[f64]) -> Result<AssembledMatrix> {
        let mut matrix = self.raw_bilinear(integrand, phi)?;
        let lift = eliminate(&self.space, &mut matrix);
        Ok(AssembledMatrix { matrix, lift })
    }

    /// Assemble without applying Dirichlet conditions.
    pub fn raw_bilinear(&self, integrand: &dyn DynIntegrand, phi: &[f64]) -> Result<CsrMatrix> {
        let ctx = &*self.space.ctx;
        ctx.check_phi(phi)?;
        let mesh = &ctx.mesh;
        let mut matrix = self.template.clone();
        let nld = self.nld;
        let ncomp = self.space.ncomp;
        let dim = mesh.dim();
        let nen = mesh.nodes_per_element();
        let ps = &ctx.volume;
        batched(
            mesh.n_elements(),
            |e| {
                let nodes = mesh.element_nodes(e);
                let phi_loc = gather_phi::<f64>(phi, &nodes, nen);
                let origin = mesh.element_origin(e);
                let mut ke = vec![0.0; nld * nld];
                let mut fields = [FieldValue::<f64>::zero(); 2];
                for q in 0..ps.len() {
                    let (ph, pg) = interp_phi(ps, q, nen, dim, &phi_loc);
                    let x = point_coords(mesh, &origin, ps, q);
                    for i in 0..nld {
                        fields[1] = basis_field(ps, q, dim, i / ncomp, i % ncomp);
                        for j in 0..nld {
                            fields[0] = basis_field(ps, q, dim, j / ncomp, j % ncomp);
                            let qp = QuadPoint {
                                dim,
                                x,
                                normal: ps.normal,
                                phi: ph,
                                phi_grad: pg,
                                fields: &fields,
                            };
                            ke[i * nld + j] += ps.weights[q] * integrand.eval_f64(&qp);
                        }
                    }
                }
                ke
            },
            |e, ke| {
                let pos = &self.positions[e * nld * nld..(e + 1) * nld * nld];
                let vals = matrix.values_mut();
                for (p, v) in pos.iter().zip(&ke) {
                    vals[*p] += v;
                }
            },
        );
        Ok(matrix)
    }
}

/// Symmetric elimination of constrained dofs: constrained rows and columns
/// are zeroed, a unit diagonal is set, and the removed column entries times
/// the fixed values are returned (negated) as the lift vector.
fn eliminate(space: &FeSpace, m: &mut CsrMatrix) -> Vec<f64> {
    let n = m.n();
    let mut lift = vec![0.0; n];
    let row_ptr = m.row_ptr().to_vec();
    let col_idx = m.col_idx().to_vec();
    let vals = m.values_mut();
    for i in 0..n {
        for k in row_ptr[i]..row_ptr[i + 1] {
            let j = col_idx[k];
            if space.fixed[i] {
                vals[k] = if i == j { 1.0 } else { 0.0 };
            } else if space.fixed[j] {
                lift[i] -= vals[k] * space.fixed_values[j];
                vals[k] = 0.0;
            }
        }
    }
    lift
}

/// One-shot bilinear assembly (builds the sparsity pattern each call).
pub fn assemble_bilinear(
    space: &FeSpace,
    integrand: &dyn DynIntegrand,
    phi: &[f64],
) -> Result<AssembledMatrix> {
    Assembler::new(space.clone()).bilinear(integrand, phi)
}

/// A term of a linear form; the integrand sees fields `[v]`.
#[derive(Clone, Copy)]
pub enum LinearTerm<'a> {
    Volume(&'a dyn DynIntegrand),
    /// Integrated over the facets of a named tag.
    Boundary(&'a str, &'a dyn DynIntegrand),
}

/// Assemble `l(v)` over the dofs of `space`, without Dirichlet conditions.
pub fn assemble_linear(space: &FeSpace, terms: &[LinearTerm<'_>], phi: &[f64]) -> Result<Vec<f64>> {
    let ctx = &*space.ctx;
    ctx.check_phi(phi)?;
    let mesh = &ctx.mesh;
    let dim = mesh.dim();
    let nen = mesh.nodes_per_element();
    let ncomp = space.ncomp;
    let nld = nen * ncomp;
    let mut out = vec![0.0; space.n_dofs()];
    for term in terms {
        let (domain, integrand) = match *term {
            LinearTerm::Volume(f) => (Domain::Volume, f),
            LinearTerm::Boundary(tag, f) => (Domain::Tag(tag), f),
        };
        let items = ctx.items(domain)?;
        batched(
            items.len(),
            |k| {
                let (e, ps) = items[k];
                let nodes = mesh.element_nodes(e);
                let phi_loc = gather_phi::<f64>(phi, &nodes, nen);
                let origin = mesh.element_origin(e);
                let mut fe = vec![0.0; nld];
                let mut fields = [FieldValue::<f64>::zero(); 1];
                for q in 0..ps.len() {
                    let (ph, pg) = interp_phi(ps, q, nen, dim, &phi_loc);
                    let x = point_coords(mesh, &origin, ps, q);
                    for (i, slot) in fe.iter_mut().enumerate() {
                        fields[0] = basis_field(ps, q, dim, i / ncomp, i % ncomp);
                        let qp = QuadPoint {
                            dim,
                            x,
                            normal: ps.normal,
                            phi: ph,
                            phi_grad: pg,
                            fields: &fields,
                        };
                        *slot += ps.weights[q] * integrand.eval_f64(&qp);
                    }
                }
                fe
            },
            |k, fe| {
                let dofs = space.local_dofs(&mesh.element_nodes(items[k].0));
                for (d, v) in dofs.iter().zip(&fe) {
                    out[*d] += v;
                }
            },
        );
    }
    Ok(out)
}

/// Integrate a functional of `φ` and the given fields.
pub fn integrate(
    ctx: &Q1Context,
    domain: Domain<'_>,
    integrand: &dyn DynIntegrand,
    phi: &[f64],
    fields: &[&NodalField],
) -> Result<f64> {
    ctx.check_phi(phi)?;
    ctx.check_fields(fields)?;
    let mesh = &ctx.mesh;
    let dim = mesh.dim();
    let nen = mesh.nodes_per_element();
    let items = ctx.items(domain)?;
    let mut total = 0.0;
    batched(
        items.len(),
        |k| {
            let (e, ps) = items[k];
            let nodes = mesh.element_nodes(e);
            let phi_loc = gather_phi::<f64>(phi, &nodes, nen);
            let locals: Vec<_> = fields.iter().map(|f| gather_field(f, &nodes, nen)).collect();
            let origin = mesh.element_origin(e);
            let mut vals = vec![FieldValue::<f64>::zero(); fields.len()];
            let mut s = 0.0;
            for q in 0..ps.len() {
                let (ph, pg) = interp_phi(ps, q, nen, dim, &phi_loc);
                for (v, loc) in vals.iter_mut().zip(&locals) {
                    *v = interp_field(ps, q, nen, dim, loc);
                }
                let qp = QuadPoint {
                    dim,
                    x: point_coords(mesh, &origin, ps, q),
                    normal: ps.normal,
                    phi: ph,
                    phi_grad: pg,
                    fields: &vals,
                };
                s += ps.weights[q] * integrand.eval_f64(&qp);
            }
            s
        },
        |_, s| total += s,
    );
    Ok(total)
}

/// Nodal derivative `∂/∂φ_j ∫ f(φ, fields)` computed element by element with
/// dual numbers seeded on each local basis function.
pub fn assemble_phi_derivative(
    ctx: &Q1Context,
    domain: Domain<'_>,
    integrand: &dyn DynIntegrand,
    phi: &[f64],
    fields: &[&NodalField],
) -> Result<Vec<f64>> {
    ctx.check_phi(phi)?;
    ctx.check_fields(fields)?;
    let mesh = &ctx.mesh;
    let dim = mesh.dim();
    let nen = mesh.nodes_per_element();
    let items = ctx.items(domain)?;
    let mut out = vec![0.0; mesh.n_nodes()];
    batched(
        items.len(),
        |k| {
            let (e, ps) = items[k];
            let nodes = mesh.element_nodes(e);
            let phi_loc = gather_phi::<f64>(phi, &nodes, nen);
            let locals: Vec<_> = fields.iter().map(|f| gather_field(f, &nodes, nen)).collect();
            let origin = mesh.element_origin(e);
            let mut vals = vec![FieldValue::<Dual>::zero(); fields.len()];
            let mut de = [0.0; MAX_ELEMENT_NODES];
            for q in 0..ps.len() {
                let (ph, pg) = interp_phi(ps, q, nen, dim, &phi_loc);
                for (v, loc) in vals.iter_mut().zip(&locals) {
                    *v = interp_field(ps, q, nen, dim, loc).to_dual();
                }
                let x = point_coords(mesh, &origin, ps, q);
                for (a, slot) in de.iter_mut().enumerate().take(nen) {
                    let mut pg_d = [Dual::constant(0.0); MAX_DIM];
                    for i in 0..dim {
                        pg_d[i] = Dual::new(pg[i], ps.grads[q][a][i]);
                    }
                    let qp = QuadPoint {
                        dim,
                        x,
                        normal: ps.normal,
                        phi: Dual::new(ph, ps.values[q][a]),
                        phi_grad: pg_d,
                        fields: &vals,
                    };
                    *slot += ps.weights[q] * integrand.eval_dual(&qp).eps;
                }
            }
            de
        },
        |k, de| {
            let nodes = mesh.element_nodes(items[k].0);
            for a in 0..nen {
                out[nodes[a]] += de[a];
            }
        },
    );
    Ok(out)
}

/// Nodal derivative `∂/∂u ∫ f(φ, fields)` with respect to the dofs of
/// `fields[which]`.
pub fn assemble_field_derivative(
    ctx: &Q1Context,
    domain: Domain<'_>,
    integrand: &dyn DynIntegrand,
    phi: &[f64],
    fields: &[&NodalField],
    which: usize,
) -> Result<Vec<f64>> {
    ctx.check_phi(phi)?;
    ctx.check_fields(fields)?;
    if which >= fields.len() {
        return Err(Error::invalid(format!(
            "field index {which} out of range for {} fields",
            fields.len()
        )));
    }
    let mesh = &ctx.mesh;
    let dim = mesh.dim();
    let nen = mesh.nodes_per_element();
    let ncomp = fields[which].ncomp;
    let nld = nen * ncomp;
    let items = ctx.items(domain)?;
    let mut out = vec![0.0; mesh.n_nodes() * ncomp];
    batched(
        items.len(),
        |k| {
            let (e, ps) = items[k];
            let nodes = mesh.element_nodes(e);
            let phi_loc = gather_phi::<f64>(phi, &nodes, nen);
            let locals: Vec<_> = fields.iter().map(|f| gather_field(f, &nodes, nen)).collect();
            let origin = mesh.element_origin(e);
            let mut vals = vec![FieldValue::<Dual>::zero(); fields.len()];
            let mut de = vec![0.0; nld];
            for q in 0..ps.len() {
                let (ph, pg) = interp_phi(ps, q, nen, dim, &phi_loc);
                for (v, loc) in vals.iter_mut().zip(&locals) {
                    *v = interp_field(ps, q, nen, dim, loc).to_dual();
                }
                let base = vals[which];
                let x = point_coords(mesh, &origin, ps, q);
                let mut pg_d = [Dual::constant(0.0); MAX_DIM];
                for i in 0..dim {
                    pg_d[i] = Dual::constant(pg[i]);
                }
                for (l, slot) in de.iter_mut().enumerate() {
                    let (a, c) = (l / ncomp, l % ncomp);
                    let mut seeded = base;
                    seeded.val[c].eps = ps.values[q][a];
                    for i in 0..dim {
                        seeded.grad[c][i].eps = ps.grads[q][a][i];
                    }
                    vals[which] = seeded;
                    let qp = QuadPoint {
                        dim,
                        x,
                        normal: ps.normal,
                        phi: Dual::constant(ph),
                        phi_grad: pg_d,
                        fields: &vals,
                    };
                    *slot += ps.weights[q] * integrand.eval_dual(&qp).eps;
                }
                vals[which] = base;
            }
            de
        },
        |k, de| {
            let nodes = mesh.element_nodes(items[k].0);
            for (l, v) in de.iter().enumerate() {
                out[nodes[l / ncomp] * ncomp + l % ncomp] += v;
            }
        },
    );
    Ok(out)
}

/// Constant surface load `g · v` on the test field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceLoad {
    pub g: [f64; MAX_DIM],
}

impl Integrand for SurfaceLoad {
    fn eval<T: Scalar>(&self, q: &QuadPoint<'_, T>) -> T {
        let v = &q.fields[0];
        let mut s = T::zero();
        for c in 0..q.dim {
            s += v.val[c] * self.g[c];
        }
        s
    }
}

fn batched<R, F, S>(n: usize, compute: F, mut sink: S)
where
    R: Send,
    F: Fn(usize) -> R + Sync,
    S: FnMut(usize, R),
{
    let mut start = 0;
    while start < n {
        let end = (start + BATCH).min(n);
        let out: Vec<R> = (start..end).into_par_iter().map(&compute).collect();
        for (k, r) in out.into_iter().enumerate() {
            sink(start + k, r);
        }
        start = end;
    }
}

fn gather_phi<T: Scalar>(
    phi: &[f64],
    nodes: &[usize; MAX_ELEMENT_NODES],
    nen: usize,
) -> [T; MAX_ELEMENT_NODES] {
    let mut out = [T::zero(); MAX_ELEMENT_NODES];
    for a in 0..nen {
        out[a] = T::cst(phi[nodes[a]]);
    }
    out
}

struct LocalField {
    ncomp: usize,
    vals: [[f64; MAX_DIM]; MAX_ELEMENT_NODES],
}

fn gather_field(f: &NodalField, nodes: &[usize; MAX_ELEMENT_NODES], nen: usize) -> LocalField {
    let mut vals = [[0.0; MAX_DIM]; MAX_ELEMENT_NODES];
    for a in 0..nen {
        for c in 0..f.ncomp {
            vals[a][c] = f.values[nodes[a] * f.ncomp + c];
        }
    }
    LocalField {
        ncomp: f.ncomp,
        vals,
    }
}

fn interp_phi(
    ps: &PointSet,
    q: usize,
    nen: usize,
    dim: usize,
    phi: &[f64; MAX_ELEMENT_NODES],
) -> (f64, [f64; MAX_DIM]) {
    let mut v = 0.0;
    let mut g = [0.0; MAX_DIM];
    for a in 0..nen {
        v += ps.values[q][a] * phi[a];
        for i in 0..dim {
            g[i] += ps.grads[q][a][i] * phi[a];
        }
    }
    (v, g)
}

fn interp_field(ps: &PointSet, q: usize, nen: usize, dim: usize, f: &LocalField) -> FieldValue<f64> {
    let mut out = FieldValue::<f64>::zero();
    for a in 0..nen {
        let n = ps.values[q][a];
        let g = &ps.grads[q][a];
        for c in 0..f.ncomp {
            let u = f.vals[a][c];
            out.val[c] += n * u;
            for i in 0..dim {
                out.grad[c][i] += g[i] * u;
            }
        }
    }
    out
}

/// Vector basis function `N_a e_c` at a point.
fn basis_field(ps: &PointSet, q: usize, dim: usize, a: usize, c: usize) -> FieldValue<f64> {
    let mut f = FieldValue::<f64>::zero();
    f.val[c] = ps.values[q][a];
    f.grad[c][..dim].copy_from_slice(&ps.grads[q][a][..dim]);
    f
}

fn point_coords(
    mesh: &CartesianMesh,
    origin: &[f64; MAX_DIM],
    ps: &PointSet,
    q: usize,
) -> [f64; MAX_DIM] {
    let mut x = [0.0; MAX_DIM];
    for i in 0..mesh.dim() {
        x[i] = origin[i] + ps.ref_points[q][i] * mesh.delta()[i];
    }
    x
}
