//! Q1 shape functions and tensor-product Gauss rules.

use crate::mesh::{CartesianMesh, MAX_DIM, MAX_ELEMENT_NODES};

/// Quadrature rule on the reference element `[0,1]^dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub points: Vec<[f64; MAX_DIM]>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    /// Two Gauss points per axis; exact for polynomials of degree 3 per axis.
    pub fn gauss2(dim: usize) -> Self {
        let g = 0.5 / 3f64.sqrt();
        let pts1 = [0.5 - g, 0.5 + g];
        let n = 1 << dim;
        let mut points = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n);
        for k in 0..n {
            let mut p = [0.0; MAX_DIM];
            for (i, slot) in p.iter_mut().enumerate().take(dim) {
                *slot = pts1[(k >> i) & 1];
            }
            points.push(p);
            weights.push(0.5f64.powi(dim as i32));
        }
        QuadratureRule { points, weights }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Q1 basis values and reference gradients at `ref_point`.
///
/// Local node `a` sits at the vertex with coordinate `(a >> i) & 1` along
/// axis `i`.
pub fn q1_shape(
    dim: usize,
    ref_point: &[f64],
) -> ([f64; MAX_ELEMENT_NODES], [[f64; MAX_DIM]; MAX_ELEMENT_NODES]) {
    let mut val = [0.0; MAX_ELEMENT_NODES];
    let mut grad = [[0.0; MAX_DIM]; MAX_ELEMENT_NODES];
    for a in 0..(1usize << dim) {
        let mut f = [0.0; MAX_DIM];
        let mut df = [0.0; MAX_DIM];
        for i in 0..dim {
            if (a >> i) & 1 == 1 {
                f[i] = ref_point[i];
                df[i] = 1.0;
            } else {
                f[i] = 1.0 - ref_point[i];
                df[i] = -1.0;
            }
        }
        val[a] = f[..dim].iter().product();
        for i in 0..dim {
            let mut g = df[i];
            for j in 0..dim {
                if j != i {
                    g *= f[j];
                }
            }
            grad[a][i] = g;
        }
    }
    (val, grad)
}

/// Basis data at a set of points shared by every element of a uniform mesh
/// (either the volume rule or the rule on one face orientation).
#[derive(Debug, Clone)]
pub struct PointSet {
    pub ref_points: Vec<[f64; MAX_DIM]>,
    pub values: Vec<[f64; MAX_ELEMENT_NODES]>,
    /// Physical gradients.
    pub grads: Vec<[[f64; MAX_DIM]; MAX_ELEMENT_NODES]>,
    /// Physical weights (reference weight times measure).
    pub weights: Vec<f64>,
    /// Outward normal for facet rules, zero for the volume rule.
    pub normal: [f64; MAX_DIM],
}

impl PointSet {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Volume rule scaled to the mesh element.
    pub fn volume(mesh: &CartesianMesh) -> Self {
        let dim = mesh.dim();
        let rule = QuadratureRule::gauss2(dim);
        let measure = mesh.element_volume();
        let mut ps = PointSet::with_capacity(rule.len());
        for (p, w) in rule.points.iter().zip(&rule.weights) {
            ps.push(mesh, p, w * measure);
        }
        ps
    }

    /// Two-point rule on the face normal to `axis`, on the given side.
    pub fn facet(mesh: &CartesianMesh, axis: usize, upper: bool) -> Self {
        let dim = mesh.dim();
        let g = 0.5 / 3f64.sqrt();
        let pts1 = [0.5 - g, 0.5 + g];
        let measure: f64 = (0..dim).filter(|&i| i != axis).map(|i| mesh.delta()[i]).product();
        let free: Vec<usize> = (0..dim).filter(|&i| i != axis).collect();
        let n = 1 << free.len();
        let mut ps = PointSet::with_capacity(n);
        for k in 0..n {
            let mut p = [0.0; MAX_DIM];
            p[axis] = if upper { 1.0 } else { 0.0 };
            for (bit, &i) in free.iter().enumerate() {
                p[i] = pts1[(k >> bit) & 1];
            }
            ps.push(mesh, &p, measure / n as f64);
        }
        ps.normal[axis] = if upper { 1.0 } else { -1.0 };
        ps
    }

    fn with_capacity(n: usize) -> Self {
        PointSet {
            ref_points: Vec::with_capacity(n),
            values: Vec::with_capacity(n),
            grads: Vec::with_capacity(n),
            weights: Vec::with_capacity(n),
            normal: [0.0; MAX_DIM],
        }
    }

    fn push(&mut self, mesh: &CartesianMesh, p: &[f64; MAX_DIM], w: f64) {
        let dim = mesh.dim();
        let (v, mut g) = q1_shape(dim, p);
        for ga in g.iter_mut() {
            for i in 0..dim {
                ga[i] /= mesh.delta()[i];
            }
        }
        self.ref_points.push(*p);
        self.values.push(v);
        self.grads.push(g);
        self.weights.push(w);
    }
}
