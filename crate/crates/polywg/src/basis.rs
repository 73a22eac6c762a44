//! Scaled polynomial bases on cells, faces and simplices.
//!
//! All bases are monomials in locally centered, diameter-scaled coordinates:
//! `phi_alpha(x) = prod_i ((x_i - c_i)/h)^alpha_i`. Centering and scaling keep
//! Gram matrices well conditioned independently of the mesh size. Face bases
//! live in an affine in-plane frame derived from the face's sorted global
//! vertex ids, so the two cells sharing a face agree on every face function.

use nalgebra::{DMatrix, DVector, Vector3};
use std::collections::HashMap;

/// Multi-indices of total degree `<= degree` over `dim` variables,
/// ordered by total degree, then lexicographically. The first entry is
/// always the zero index, so the first basis function is identically 1.
pub fn multi_indices(dim: usize, degree: usize) -> Vec<[u32; 3]> {
    let mut out = Vec::new();
    for total in 0..=degree as u32 {
        match dim {
            1 => out.push([total, 0, 0]),
            2 => {
                for a in (0..=total).rev() {
                    out.push([a, total - a, 0]);
                }
            }
            3 => {
                for a in (0..=total).rev() {
                    for b in (0..=(total - a)).rev() {
                        out.push([a, b, total - a - b]);
                    }
                }
            }
            _ => panic!("unsupported dimension {dim}"),
        }
    }
    out
}

/// Dimension of the total-degree-`k` polynomial space in `dim` variables.
pub fn poly_space_dim(dim: usize, k: usize) -> usize {
    match dim {
        1 => k + 1,
        2 => (k + 1) * (k + 2) / 2,
        3 => (k + 1) * (k + 2) * (k + 3) / 6,
        _ => panic!("unsupported dimension {dim}"),
    }
}

/// Monomial basis in centered, scaled coordinates.
#[derive(Debug, Clone)]
pub struct ScaledMonomialBasis {
    pub dim: usize,
    pub degree: usize,
    pub center: Vector3<f64>,
    pub scale: f64,
    mults: Vec<[u32; 3]>,
    lookup: HashMap<[u32; 3], usize>,
}

impl ScaledMonomialBasis {
    pub fn new(dim: usize, degree: usize, center: Vector3<f64>, scale: f64) -> Self {
        assert!(scale > 0.0);
        let mults = multi_indices(dim, degree);
        let lookup = mults.iter().enumerate().map(|(i, &m)| (m, i)).collect();
        ScaledMonomialBasis {
            dim,
            degree,
            center,
            scale,
            mults,
            lookup,
        }
    }

    pub fn len(&self) -> usize {
        self.mults.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mults.is_empty()
    }

    pub fn mults(&self) -> &[[u32; 3]] {
        &self.mults
    }

    #[inline]
    fn local(&self, x: &Vector3<f64>) -> Vector3<f64> {
        (x - self.center) / self.scale
    }

    /// Values of every basis function at `x`.
    pub fn eval(&self, x: &Vector3<f64>) -> DVector<f64> {
        let xi = self.local(x);
        let mut v = DVector::zeros(self.len());
        for (j, m) in self.mults.iter().enumerate() {
            v[j] = xi.x.powi(m[0] as i32) * xi.y.powi(m[1] as i32) * xi.z.powi(m[2] as i32);
        }
        v
    }

    /// Row-per-point value matrix (`points.len() x len()`).
    pub fn values(&self, points: &[Vector3<f64>]) -> DMatrix<f64> {
        let mut v = DMatrix::zeros(points.len(), self.len());
        for (i, p) in points.iter().enumerate() {
            let xi = self.local(p);
            for (j, m) in self.mults.iter().enumerate() {
                v[(i, j)] =
                    xi.x.powi(m[0] as i32) * xi.y.powi(m[1] as i32) * xi.z.powi(m[2] as i32);
            }
        }
        v
    }

    /// Component `axis` of the gradient of every basis function, one row per point.
    pub fn gradient_values(&self, points: &[Vector3<f64>], axis: usize) -> DMatrix<f64> {
        let mut v = DMatrix::zeros(points.len(), self.len());
        for (i, p) in points.iter().enumerate() {
            let xi = self.local(p);
            for (j, m) in self.mults.iter().enumerate() {
                if m[axis] == 0 {
                    continue;
                }
                let mut g = m[axis] as f64 / self.scale;
                for c in 0..3 {
                    let e = if c == axis { m[c] - 1 } else { m[c] };
                    g *= xi[c].powi(e as i32);
                }
                v[(i, j)] = g;
            }
        }
        v
    }

    /// d/dx_axis of member `j` expressed in this same basis:
    /// returns `(factor, member)` with `d phi_j = factor * phi_member`,
    /// or `None` when the derivative vanishes.
    pub fn derivative_term(&self, j: usize, axis: usize) -> Option<(f64, usize)> {
        let m = self.mults[j];
        if m[axis] == 0 {
            return None;
        }
        let mut reduced = m;
        reduced[axis] -= 1;
        let idx = *self
            .lookup
            .get(&reduced)
            .expect("reduced multi-index must be a basis member");
        Some((m[axis] as f64 / self.scale, idx))
    }
}

/// L2-orthonormal polynomial basis on one simplex, stored as monomial
/// combinations: function j is `sum_m transform[(m, j)] * mono_m`.
///
/// Orthonormality removes every mass-matrix solve from the weak-gradient
/// pipeline and keeps high-degree bases perfectly conditioned.
#[derive(Debug, Clone)]
pub struct SimplexBasis {
    pub mono: ScaledMonomialBasis,
    pub transform: DMatrix<f64>,
}

impl SimplexBasis {
    /// Orthonormalizes the centered scaled monomials against the exact
    /// quadrature inner product on the simplex (two-pass modified
    /// Gram-Schmidt).
    pub fn orthonormal(
        dim: usize,
        degree: usize,
        center: Vector3<f64>,
        scale: f64,
        points: &[Vector3<f64>],
        weights: &[f64],
    ) -> Self {
        let mono = ScaledMonomialBasis::new(dim, degree, center, scale);
        let n = mono.len();
        let v = mono.values(points);
        let mut t = DMatrix::<f64>::identity(n, n);
        // W-inner product of coefficient columns through the value matrix
        let ip = |a: &DVector<f64>, b: &DVector<f64>| -> f64 {
            let va = &v * a;
            let vb = &v * b;
            va.iter()
                .zip(vb.iter())
                .zip(weights)
                .map(|((x, y), w)| w * x * y)
                .sum()
        };
        for j in 0..n {
            let mut col = t.column(j).clone_owned();
            for _pass in 0..2 {
                for i in 0..j {
                    let ti = t.column(i).clone_owned();
                    let r = ip(&col, &ti);
                    col -= ti * r;
                }
            }
            let norm = ip(&col, &col).sqrt();
            assert!(norm > 1e-14, "degenerate simplex basis");
            col /= norm;
            t.set_column(j, &col);
        }
        SimplexBasis { mono, transform: t }
    }

    pub fn len(&self) -> usize {
        self.mono.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mono.is_empty()
    }

    pub fn values(&self, points: &[Vector3<f64>]) -> DMatrix<f64> {
        self.mono.values(points) * &self.transform
    }

    pub fn eval(&self, x: &Vector3<f64>) -> DVector<f64> {
        self.transform.transpose() * self.mono.eval(x)
    }

    pub fn gradient_values(&self, points: &[Vector3<f64>], axis: usize) -> DMatrix<f64> {
        self.mono.gradient_values(points, axis) * &self.transform
    }

    pub fn eval_gradient_axis(&self, x: &Vector3<f64>, axis: usize) -> DVector<f64> {
        let row = self.mono.gradient_values(std::slice::from_ref(x), axis) * &self.transform;
        row.row(0).transpose()
    }
}

/// Affine in-plane frame of a mesh face.
///
/// `tangents[0]` (and `tangents[1]` in 3D) span the face plane; coordinates
/// are centered at `origin` and scaled by the face diameter. The frame is a
/// function of the face's vertex coordinates ordered by global id only, never
/// of the adjacent cells.
#[derive(Debug, Clone)]
pub struct FaceFrame {
    pub fdim: usize,
    pub origin: Vector3<f64>,
    pub tangents: [Vector3<f64>; 2],
    /// Unit normal with a global (cell-independent) orientation.
    pub normal: Vector3<f64>,
    pub scale: f64,
}

impl FaceFrame {
    /// Builds the frame from face vertex coordinates sorted by global id.
    pub fn from_sorted_vertices(dim: usize, verts: &[Vector3<f64>]) -> Self {
        let origin = verts.iter().sum::<Vector3<f64>>() / verts.len() as f64;
        let mut scale: f64 = 0.0;
        for i in 0..verts.len() {
            for j in (i + 1)..verts.len() {
                scale = scale.max((verts[i] - verts[j]).norm());
            }
        }
        if dim == 2 {
            let t = (verts[1] - verts[0]).normalize();
            let normal = Vector3::new(t.y, -t.x, 0.0);
            FaceFrame {
                fdim: 1,
                origin,
                tangents: [t, Vector3::zeros()],
                normal,
                scale,
            }
        } else {
            let t1 = (verts[1] - verts[0]).normalize();
            let w = verts[2] - verts[0];
            let t2 = (w - t1 * w.dot(&t1)).normalize();
            let normal = t1.cross(&t2);
            FaceFrame {
                fdim: 2,
                origin,
                tangents: [t1, t2],
                normal,
                scale,
            }
        }
    }

    /// In-plane coordinates of a physical point (components past `fdim` zero).
    pub fn local(&self, x: &Vector3<f64>) -> Vector3<f64> {
        let r = x - self.origin;
        let mut xi = Vector3::zeros();
        for i in 0..self.fdim {
            xi[i] = r.dot(&self.tangents[i]) / self.scale;
        }
        xi
    }
}

/// Polynomial basis of degree `degree` on a face, in frame coordinates.
#[derive(Debug, Clone)]
pub struct FaceBasis {
    pub frame: FaceFrame,
    pub degree: usize,
    mono: ScaledMonomialBasis,
}

impl FaceBasis {
    pub fn new(frame: FaceFrame, degree: usize) -> Self {
        let mono = ScaledMonomialBasis::new(frame.fdim, degree, Vector3::zeros(), 1.0);
        FaceBasis {
            frame,
            degree,
            mono,
        }
    }

    pub fn len(&self) -> usize {
        self.mono.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mono.is_empty()
    }

    /// Row-per-point value matrix at physical points on the face plane.
    pub fn values(&self, points: &[Vector3<f64>]) -> DMatrix<f64> {
        let local: Vec<Vector3<f64>> = points.iter().map(|p| self.frame.local(p)).collect();
        self.mono.values(&local)
    }

    pub fn eval(&self, x: &Vector3<f64>) -> DVector<f64> {
        self.mono.eval(&self.frame.local(x))
    }
}

/// Weighted Gram matrix `V^T diag(w) V` of a value matrix.
pub fn gram(values: &DMatrix<f64>, weights: &[f64]) -> DMatrix<f64> {
    let n = values.ncols();
    let mut g = DMatrix::zeros(n, n);
    for (i, &w) in weights.iter().enumerate() {
        for a in 0..n {
            let va = values[(i, a)] * w;
            for b in a..n {
                g[(a, b)] += va * values[(i, b)];
            }
        }
    }
    // mirror the upper triangle
    for a in 0..n {
        for b in (a + 1)..n {
            g[(b, a)] = g[(a, b)];
        }
    }
    g
}

/// Weighted right-hand sides `V^T diag(w) f` for projections.
pub fn weighted_moments(values: &DMatrix<f64>, weights: &[f64], f: &DVector<f64>) -> DVector<f64> {
    let n = values.ncols();
    let mut rhs = DVector::zeros(n);
    for i in 0..values.nrows() {
        let wf = weights[i] * f[i];
        for a in 0..n {
            rhs[a] += values[(i, a)] * wf;
        }
    }
    rhs
}
