//! Per-cell weak-gradient map and local stiffness matrix.
//!
//! For a cell T, the weak gradient of a local unknown v = {v_0, v_b} is the
//! member of the constrained gradient space satisfying
//!
//! ```text
//! (grad_w v, q)_T = -(v_0, div q)_T + <v_b, q.n>_dT    for all q,
//! ```
//!
//! realized as G = M^-1 B over the nullspace basis, with B assembled by
//! simplex and facet quadrature. The local stiffness is S_T = G^T M G.
//! Everything a cell contributes to assembly, projection and error
//! integration is translation invariant, so cells are grouped into
//! congruence classes and each class is built once.

use crate::basis::{gram, poly_space_dim, FaceBasis, ScaledMonomialBasis};
use crate::error::{Error, Result};
use crate::lambda::{build_lambda_space, LambdaSpace};
use crate::mesh::{split_cell, Mesh};
use crate::quadrature::{map_to_simplex, simplex_quadrature};
use nalgebra::{Cholesky, DMatrix, DVector, Dyn, Vector3};

use std::ops::Range;
use std::sync::{Arc, Mutex};

/// Local unknown layout on one cell: interior coefficients first, then one
/// block per face in cell-local face order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LocalDofLayout {
    pub n_int: usize,
    /// Coefficients per face block.
    pub face_dofs: usize,
    pub n_faces: usize,
    pub n_loc: usize,
}

impl LocalDofLayout {
    pub fn new(dim: usize, k: usize, n_faces: usize) -> Self {
        let n_int = poly_space_dim(dim, k);
        let face_dofs = poly_space_dim(dim - 1, k + 1);
        LocalDofLayout {
            n_int,
            face_dofs,
            n_faces,
            n_loc: n_int + n_faces * face_dofs,
        }
    }

    pub fn interior(&self) -> Range<usize> {
        0..self.n_int
    }

    pub fn face_block(&self, local_face: usize) -> Range<usize> {
        let start = self.n_int + local_face * self.face_dofs;
        start..start + self.face_dofs
    }
}

/// Weak-gradient map and local stiffness in the nullspace basis.
#[derive(Debug, Clone)]
pub struct LocalKernel {
    pub layout: LocalDofLayout,
    /// dlam x n_loc: local unknowns -> weak-gradient coordinates.
    pub g: DMatrix<f64>,
    /// n_loc x n_loc symmetric positive semidefinite local stiffness.
    pub s: DMatrix<f64>,
}

/// Right-hand-side matrix of the weak-gradient definition: entry (a, j) is
/// `-(phi_j, div s_a)_T + <psi_j, s_a.n>_dT` for superspace member `s_a`.
pub fn weak_gradient_moments(
    mesh: &Mesh,
    lambda: &LambdaSpace,
    layout: &LocalDofLayout,
    interior_basis: &ScaledMonomialBasis,
    face_bases: &[FaceBasis],
) -> Result<DMatrix<f64>> {
    let dim = mesh.dim;
    let k = lambda.k;
    let split = &lambda.split;
    let cell = &mesh.cells[lambda.cell];
    let cell_rule = simplex_quadrature(dim, 2 * k + 4)?;
    let facet_rule = simplex_quadrature(dim - 1, 2 * (k + 1) + 1)?;
    let mut r = DMatrix::zeros(lambda.dsup, layout.n_loc);

    // interior block: -(phi_j, div s_a) over each simplex
    for s in 0..split.n_simplices() {
        let mapped = map_to_simplex(&cell_rule, &split.simplex_coords(s));
        let ivals = interior_basis.values(&mapped.points);
        for c in 0..dim {
            let gvals = lambda.simplex_bases[s].gradient_values(&mapped.points, c);
            for m in 0..lambda.n_mono {
                let a = lambda.index(s, c, m);
                for j in 0..layout.n_int {
                    let mut acc = 0.0;
                    for (q, &w) in mapped.weights.iter().enumerate() {
                        acc += w * ivals[(q, j)] * gvals[(q, m)];
                    }
                    r[(a, j)] -= acc;
                }
            }
        }
    }

    // face blocks: <psi_r, s_a . n> over the covering facets
    for bf in &split.boundary_facets {
        let lf = bf.local_face;
        let normal = mesh.faces[cell.faces[lf]].normal * cell.outward[lf];
        let coords = split.facet_coords(&bf.verts);
        let mapped = map_to_simplex(&facet_rule, &coords);
        let fvals = face_bases[lf].values(&mapped.points);
        let mvals = lambda.simplex_bases[bf.simplex].values(&mapped.points);
        let block = layout.face_block(lf);
        for c in 0..dim {
            if normal[c] == 0.0 {
                continue;
            }
            for m in 0..lambda.n_mono {
                let a = lambda.index(bf.simplex, c, m);
                for (jr, j) in block.clone().enumerate() {
                    let mut acc = 0.0;
                    for (q, &w) in mapped.weights.iter().enumerate() {
                        acc += w * fvals[(q, jr)] * mvals[(q, m)];
                    }
                    r[(a, j)] += normal[c] * acc;
                }
            }
        }
    }
    Ok(r)
}

/// Weak-gradient map G = M^-1 N^T R in the nullspace basis.
pub fn weak_gradient_map(lambda: &LambdaSpace, moments: &DMatrix<f64>) -> DMatrix<f64> {
    let b = lambda.nullspace.transpose() * moments;
    lambda.mass_solve(&b)
}

/// Local stiffness S_T = G^T M G, symmetrized.
pub fn local_stiffness(g: &DMatrix<f64>, m_lambda: &DMatrix<f64>) -> DMatrix<f64> {
    let s = g.transpose() * m_lambda * g;
    (&s + s.transpose()) * 0.5
}

/// Everything a congruence class of cells contributes to the scheme.
///
/// All stored matrices and relative point sets are invariant under
/// translation of the cell, so one instance serves every congruent cell.
#[derive(Debug)]
pub struct CellOps {
    /// Representative cell this class was built from.
    pub cell: usize,
    pub k: usize,
    pub dim: usize,
    pub layout: LocalDofLayout,
    pub lambda: LambdaSpace,
    pub kernel: LocalKernel,
    /// Interior mass matrix on the cell.
    pub m_int: DMatrix<f64>,
    m_int_chol: Cholesky<f64, Dyn>,
    /// Interior gradient Gram matrix (for the discrete H1 seminorm).
    pub k_int: DMatrix<f64>,
    /// Per-face mass matrices in the face frame bases.
    pub face_mass: Vec<DMatrix<f64>>,
    /// Cell quadrature relative to the centroid, with interior basis values.
    pub cell_pts_rel: Vec<Vector3<f64>>,
    pub cell_wts: Vec<f64>,
    pub int_values: DMatrix<f64>,
    /// Per-face quadrature (all covering facets), relative to the centroid.
    pub face_pts_rel: Vec<Vec<Vector3<f64>>>,
    pub face_wts: Vec<Vec<f64>>,
    pub face_values: Vec<DMatrix<f64>>,
    pub face_int_values: Vec<DMatrix<f64>>,
}

/// Builds the full operator bundle for one cell.
pub fn build_cell_ops(mesh: &Mesh, ci: usize, k: usize) -> Result<CellOps> {
    let dim = mesh.dim;
    let cell = &mesh.cells[ci];
    let split = split_cell(mesh, ci)?;
    let lambda = build_lambda_space(mesh, split, k)?;
    let layout = LocalDofLayout::new(dim, k, cell.faces.len());
    let interior_basis = ScaledMonomialBasis::new(dim, k, cell.centroid, cell.diameter);
    let face_bases: Vec<FaceBasis> = cell
        .faces
        .iter()
        .map(|&fi| FaceBasis::new(mesh.face_frame(fi), k + 1))
        .collect();

    let moments = weak_gradient_moments(mesh, &lambda, &layout, &interior_basis, &face_bases)?;
    let g = weak_gradient_map(&lambda, &moments);
    let s = local_stiffness(&g, &lambda.m_lambda);
    let kernel = LocalKernel { layout, g, s };

    // cell quadrature and interior basis data
    let cell_rule = simplex_quadrature(dim, 2 * k + 4)?;
    let mut cell_pts_rel = Vec::new();
    let mut cell_wts = Vec::new();
    for si in 0..lambda.split.n_simplices() {
        let mapped = map_to_simplex(&cell_rule, &lambda.split.simplex_coords(si));
        for (p, w) in mapped.points.iter().zip(&mapped.weights) {
            cell_pts_rel.push(p - cell.centroid);
            cell_wts.push(*w);
        }
    }
    let cell_pts: Vec<Vector3<f64>> = cell_pts_rel.iter().map(|p| p + cell.centroid).collect();
    let int_values = interior_basis.values(&cell_pts);
    let m_int = gram(&int_values, &cell_wts);
    let m_int_chol = Cholesky::new(m_int.clone())
        .ok_or_else(|| Error::internal(format!("interior mass not SPD on cell {ci}")))?;
    let mut k_int = DMatrix::zeros(layout.n_int, layout.n_int);
    for axis in 0..dim {
        let gvals = interior_basis.gradient_values(&cell_pts, axis);
        k_int += gram(&gvals, &cell_wts);
    }

    // per-face quadrature over the covering facets
    let facet_rule = simplex_quadrature(dim - 1, 2 * (k + 1) + 1)?;
    let groups = lambda.split.facets_by_face(cell.faces.len());
    let mut face_pts_rel = Vec::with_capacity(cell.faces.len());
    let mut face_wts = Vec::with_capacity(cell.faces.len());
    let mut face_values = Vec::with_capacity(cell.faces.len());
    let mut face_int_values = Vec::with_capacity(cell.faces.len());
    let mut face_mass = Vec::with_capacity(cell.faces.len());
    for (lf, facet_ids) in groups.iter().enumerate() {
        let mut pts = Vec::new();
        let mut wts = Vec::new();
        for &bfi in facet_ids {
            let bf = &lambda.split.boundary_facets[bfi];
            let mapped = map_to_simplex(&facet_rule, &lambda.split.facet_coords(&bf.verts));
            pts.extend(mapped.points);
            wts.extend(mapped.weights);
        }
        let fvals = face_bases[lf].values(&pts);
        face_mass.push(gram(&fvals, &wts));
        face_int_values.push(interior_basis.values(&pts));
        face_values.push(fvals);
        face_pts_rel.push(pts.iter().map(|p| p - cell.centroid).collect());
        face_wts.push(wts);
    }

    Ok(CellOps {
        cell: ci,
        k,
        dim,
        layout,
        lambda,
        kernel,
        m_int,
        m_int_chol,
        k_int,
        face_mass,
        cell_pts_rel,
        cell_wts,
        int_values,
        face_pts_rel,
        face_wts,
        face_values,
        face_int_values,
    })
}

impl CellOps {
    /// Physical cell quadrature points for a congruent cell centered at
    /// `centroid`.
    pub fn cell_points(&self, centroid: &Vector3<f64>) -> Vec<Vector3<f64>> {
        self.cell_pts_rel.iter().map(|p| p + centroid).collect()
    }

    /// Load moments (f, phi_j)_T for the interior block.
    pub fn load_vector<F>(&self, centroid: &Vector3<f64>, f: F) -> DVector<f64>
    where
        F: Fn(&Vector3<f64>) -> f64,
    {
        let mut b = DVector::zeros(self.layout.n_int);
        for (q, p) in self.cell_pts_rel.iter().enumerate() {
            let x = p + centroid;
            let fw = self.cell_wts[q] * f(&x);
            for j in 0..self.layout.n_int {
                b[j] += self.int_values[(q, j)] * fw;
            }
        }
        b
    }

    /// L2 projection of `u` onto the interior polynomial space.
    pub fn project_interior<F>(&self, centroid: &Vector3<f64>, u: F) -> DVector<f64>
    where
        F: Fn(&Vector3<f64>) -> f64,
    {
        self.m_int_chol.solve(&self.load_vector(centroid, u))
    }

    /// L2(T)^2 of an interior coefficient difference.
    pub fn interior_l2_sq(&self, diff: &DVector<f64>) -> f64 {
        diff.dot(&(&self.m_int * diff)).max(0.0)
    }

    /// Local energy (weak-gradient) seminorm squared of local unknowns.
    pub fn energy_sq(&self, local: &DVector<f64>) -> f64 {
        local.dot(&(&self.kernel.s * local)).max(0.0)
    }

    /// Local discrete H1 seminorm squared:
    /// `|grad v_0|^2_T + h_T^-1 |v_0 - v_b|^2_dT`.
    pub fn h1h_sq(&self, local: &DVector<f64>, h_t: f64) -> f64 {
        let v0 = local.rows(0, self.layout.n_int);
        let mut total = v0.dot(&(&self.k_int * v0.clone_owned())).max(0.0);
        for lf in 0..self.layout.n_faces {
            let block = self.layout.face_block(lf);
            let vb = local.rows(block.start, self.layout.face_dofs);
            let mut jump_sq = 0.0;
            for (q, &w) in self.face_wts[lf].iter().enumerate() {
                let mut v0_here = 0.0;
                for j in 0..self.layout.n_int {
                    v0_here += self.face_int_values[lf][(q, j)] * v0[j];
                }
                let mut vb_here = 0.0;
                for j in 0..self.layout.face_dofs {
                    vb_here += self.face_values[lf][(q, j)] * vb[j];
                }
                jump_sq += w * (v0_here - vb_here) * (v0_here - vb_here);
            }
            total += jump_sq / h_t;
        }
        total
    }

    /// Local projection of a smooth function onto {P_k(T), P_{k+1}(faces)}.
    /// Face blocks use the same canonical frames as the kernel.
    pub fn project_local<F>(&self, centroid: &Vector3<f64>, u: F) -> DVector<f64>
    where
        F: Fn(&Vector3<f64>) -> f64,
    {
        let mut local = DVector::zeros(self.layout.n_loc);
        let q0 = self.project_interior(centroid, &u);
        local.rows_mut(0, self.layout.n_int).copy_from(&q0);
        for lf in 0..self.layout.n_faces {
            let mut rhs = DVector::zeros(self.layout.face_dofs);
            for (q, &w) in self.face_wts[lf].iter().enumerate() {
                let x = self.face_pts_rel[lf][q] + centroid;
                let uw = w * u(&x);
                for j in 0..self.layout.face_dofs {
                    rhs[j] += self.face_values[lf][(q, j)] * uw;
                }
            }
            let coeffs = Cholesky::new(self.face_mass[lf].clone())
                .expect("face mass is SPD")
                .solve(&rhs);
            local
                .rows_mut(self.layout.face_block(lf).start, self.layout.face_dofs)
                .copy_from(&coeffs);
        }
        local
    }
}

/// Translation-invariant geometry signature of a cell: combinatorial data
/// (face counts, split topology) as exact integers, continuous data
/// (relative coordinates, frames) as floats compared within a tolerance.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassSignature {
    combinatorics: Vec<i64>,
    geometry: Vec<f64>,
}

/// Relative tolerance for matching two cells into one congruence class.
/// Well above floating-point noise in the generators, far below any actual
/// shape difference the families produce.
const CLASS_TOL: f64 = 1e-12;

impl ClassSignature {
    fn matches(&self, other: &Self) -> bool {
        self.combinatorics == other.combinatorics
            && self.geometry.len() == other.geometry.len()
            && self
                .geometry
                .iter()
                .zip(&other.geometry)
                .all(|(a, b)| (a - b).abs() <= CLASS_TOL * a.abs().max(b.abs()).max(1.0))
    }
}

fn class_signature(mesh: &Mesh, ci: usize, k: usize) -> Result<ClassSignature> {
    let cell = &mesh.cells[ci];
    let split = split_cell(mesh, ci)?;
    let h = cell.diameter;
    let c = cell.centroid;
    let mut comb: Vec<i64> = vec![
        mesh.dim as i64,
        k as i64,
        cell.faces.len() as i64,
        split.n_simplices() as i64,
    ];
    for s in &split.simplices {
        comb.extend(s.iter().map(|&p| p as i64));
    }
    for f in &split.internal_facets {
        comb.push(f.left as i64);
        comb.push(f.right as i64);
        comb.extend(f.verts.iter().map(|&p| p as i64));
    }
    for f in &split.boundary_facets {
        comb.push(f.simplex as i64);
        comb.push(f.local_face as i64);
        comb.extend(f.verts.iter().map(|&p| p as i64));
    }

    let mut geo: Vec<f64> = vec![h];
    let push_vec = |geo: &mut Vec<f64>, v: Vector3<f64>| {
        for i in 0..3 {
            geo.push(v[i] / h);
        }
    };
    for p in &split.points {
        push_vec(&mut geo, p - c);
    }
    for f in &split.internal_facets {
        push_vec(&mut geo, f.normal);
    }
    for (lf, &fi) in cell.faces.iter().enumerate() {
        let frame = mesh.face_frame(fi);
        push_vec(&mut geo, frame.origin - c);
        push_vec(&mut geo, frame.tangents[0]);
        push_vec(&mut geo, frame.tangents[1]);
        push_vec(&mut geo, frame.normal * cell.outward[lf]);
        geo.push(frame.scale / h);
    }
    Ok(ClassSignature {
        combinatorics: comb,
        geometry: geo,
    })
}

/// Cache of per-congruence-class operator bundles. The built-in families
/// produce O(1) classes per level, so lookups scan the class list.
pub struct OpsCache {
    k: usize,
    classes: Mutex<Vec<(ClassSignature, Arc<CellOps>)>>,
}

impl OpsCache {
    pub fn new(k: usize) -> Self {
        OpsCache {
            k,
            classes: Mutex::new(Vec::new()),
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Operator bundle for a cell, built once per congruence class.
    pub fn get(&self, mesh: &Mesh, ci: usize) -> Result<Arc<CellOps>> {
        let sig = class_signature(mesh, ci, self.k)?;
        {
            let classes = self.classes.lock().unwrap();
            if let Some((_, ops)) = classes.iter().find(|(s, _)| s.matches(&sig)) {
                return Ok(ops.clone());
            }
        }
        let ops = Arc::new(build_cell_ops(mesh, ci, self.k)?);
        let mut classes = self.classes.lock().unwrap();
        if let Some((_, existing)) = classes.iter().find(|(s, _)| s.matches(&sig)) {
            return Ok(existing.clone());
        }
        classes.push((sig, ops.clone()));
        Ok(ops)
    }

    /// All distinct classes built so far.
    pub fn classes(&self) -> Vec<Arc<CellOps>> {
        self.classes.lock().unwrap().iter().map(|(_, o)| o.clone()).collect()
    }

    pub fn n_classes(&self) -> usize {
        self.classes.lock().unwrap().len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_quad_grid, build_quad_hex_grid, build_wedge_grid};
    use crate::poly::Polynomial;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_square() -> Mesh {
        Mesh::from_polygons(
            1,
            vec![
                Vector3::new(0.0, 0.0, 0.0),
                Vector3::new(1.0, 0.0, 0.0),
                Vector3::new(1.0, 1.0, 0.0),
                Vector3::new(0.0, 1.0, 0.0),
            ],
            vec![vec![0, 1, 2, 3]],
        )
        .unwrap()
    }

    fn constant_local(ops: &CellOps, c: f64) -> DVector<f64> {
        // first function of every block is identically 1
        let mut local = DVector::zeros(ops.layout.n_loc);
        local[0] = c;
        for lf in 0..ops.layout.n_faces {
            local[ops.layout.face_block(lf).start] = c;
        }
        local
    }

    #[test]
    fn constants_have_zero_weak_gradient() {
        for (mesh, kmax) in [
            (unit_square(), 3usize),
            (build_wedge_grid(1).unwrap(), 1),
        ] {
            for k in 0..=kmax {
                let ops = build_cell_ops(&mesh, 0, k).unwrap();
                let local = constant_local(&ops, 1.0);
                let z = &ops.kernel.g * &local;
                assert!(
                    ops.lambda.lambda_norm(&z) < 1e-12,
                    "dim {} k {k}",
                    mesh.dim
                );
                // and a zero row/column action of S_T
                let sv = &ops.kernel.s * &local;
                assert!(sv.norm() <= 1e-11 * ops.kernel.s.norm());
            }
        }
    }

    #[test]
    fn weak_gradient_of_projected_linear_is_its_gradient() {
        let grad = Vector3::new(0.3, -0.7, 0.0);
        let lin = move |x: &Vector3<f64>| grad.dot(x) + 0.2;
        for mesh in [unit_square(), build_quad_grid(2).unwrap()] {
            let k = 1;
            let ops = build_cell_ops(&mesh, 0, k).unwrap();
            let centroid = mesh.cells[0].centroid;
            let local = ops.project_local(&centroid, lin);
            let z = &ops.kernel.g * &local;
            let rule = simplex_quadrature(2, 2 * k + 4).unwrap();
            let z_exact = ops.lambda.project(|_| grad, &rule);
            let diff = ops.lambda.lambda_norm(&(z - z_exact));
            let scale = grad.norm() * mesh.cells[0].measure.sqrt();
            assert!(diff <= 1e-11 * scale, "{diff:.3e}");
            // energy of the projected linear equals |grad|^2 |T|
            let energy = ops.energy_sq(&local);
            assert_relative_eq!(
                energy,
                grad.norm_squared() * mesh.cells[0].measure,
                max_relative = 1e-10
            );
        }
    }

    /// Reduces a constraint matrix to a full-row-rank subset spanning the
    /// same row space (Gram-Schmidt with a drop tolerance); the homogeneous
    /// constraint set, hence the feasible space, is unchanged.
    fn independent_rows(c: &DMatrix<f64>) -> DMatrix<f64> {
        let mut kept: Vec<DVector<f64>> = Vec::new();
        let mut kept_raw: Vec<usize> = Vec::new();
        for r in 0..c.nrows() {
            let mut row = c.row(r).transpose().clone_owned();
            for q in &kept {
                let proj = q.dot(&row);
                row -= q * proj;
            }
            if row.norm() > 1e-8 {
                kept.push(row.normalize());
                kept_raw.push(r);
            }
        }
        let mut out = DMatrix::zeros(kept_raw.len(), c.ncols());
        for (to, &from) in kept_raw.iter().enumerate() {
            out.row_mut(to).copy_from(&c.row(from));
        }
        out
    }

    /// Independent saddle-point oracle: the weak gradient solves
    ///   min 1/2 g^T M g - g^T r   subject to C g = 0
    /// over superspace coefficients. The KKT system (with a full-rank row
    /// subset of C) is LU-solved with iterative refinement, bypassing the
    /// nullspace basis entirely.
    #[test]
    fn weak_gradient_matches_saddle_point_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (mesh, k) in [
            (unit_square(), 0usize),
            (unit_square(), 2),
            (build_wedge_grid(1).unwrap(), 1),
        ] {
            let ops = build_cell_ops(&mesh, 0, k).unwrap();
            let lambda = &ops.lambda;
            let interior_basis = ScaledMonomialBasis::new(
                mesh.dim,
                k,
                mesh.cells[0].centroid,
                mesh.cells[0].diameter,
            );
            let face_bases: Vec<FaceBasis> = mesh.cells[0]
                .faces
                .iter()
                .map(|&fi| FaceBasis::new(mesh.face_frame(fi), k + 1))
                .collect();
            let moments =
                weak_gradient_moments(&mesh, lambda, &ops.layout, &interior_basis, &face_bases)
                    .unwrap();
            let mut local = DVector::zeros(ops.layout.n_loc);
            for v in local.iter_mut() {
                *v = rng.random_range(-1.0..1.0);
            }
            let r = &moments * &local;
            let c_red = independent_rows(&lambda.constraints);
            let nc = c_red.nrows();
            let n = lambda.dsup + nc;
            let mut kkt = DMatrix::zeros(n, n);
            kkt.view_mut((0, 0), (lambda.dsup, lambda.dsup))
                .copy_from(&lambda.m_sup);
            kkt.view_mut((lambda.dsup, 0), (nc, lambda.dsup))
                .copy_from(&c_red);
            kkt.view_mut((0, lambda.dsup), (lambda.dsup, nc))
                .copy_from(&c_red.transpose());
            let mut rhs = DVector::zeros(n);
            rhs.rows_mut(0, lambda.dsup).copy_from(&r);
            let lu = kkt.clone().lu();
            let mut sol = lu.solve(&rhs).expect("KKT system is nonsingular");
            for _ in 0..2 {
                let resid = &rhs - &kkt * &sol;
                sol += lu.solve(&resid).unwrap();
            }
            let g_oracle = sol.rows(0, lambda.dsup).clone_owned();
            let g_ours = &lambda.nullspace * (&ops.kernel.g * &local);
            let rel = (&g_oracle - &g_ours).norm() / g_oracle.norm().max(1e-12);
            assert!(rel <= 1e-10, "dim {} k {k}: {rel:.3e}", mesh.dim);
        }
    }

    #[test]
    fn stiffness_is_psd_with_constant_kernel_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for (mesh, k) in [
            (unit_square(), 0usize),
            (unit_square(), 1),
            (build_wedge_grid(1).unwrap(), 0),
            (build_wedge_grid(1).unwrap(), 1),
        ] {
            let ops = build_cell_ops(&mesh, 0, k).unwrap();
            for _ in 0..5 {
                let mut local = DVector::zeros(ops.layout.n_loc);
                for v in local.iter_mut() {
                    *v = rng.random_range(-1.0..1.0);
                }
                assert!(ops.energy_sq(&local) >= 0.0);
            }
            let eig = nalgebra::SymmetricEigen::new(ops.kernel.s.clone());
            let max = eig.eigenvalues.max();
            let small = eig
                .eigenvalues
                .iter()
                .filter(|&&v| v < 1e-11 * max)
                .count();
            assert_eq!(small, 1, "dim {} k {k}", mesh.dim);
        }
    }

    /// Projection commutes with the weak gradient: for polynomials phi of
    /// degree <= k+2, grad_w of the projected unknowns equals the space
    /// projection of grad phi.
    #[test]
    fn weak_gradient_commutes_with_projections() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let cases: Vec<(Mesh, usize)> = vec![
            (unit_square(), 0),
            (unit_square(), 1),
            (build_quad_hex_grid(2).unwrap(), 1),
            (build_wedge_grid(1).unwrap(), 0),
            (build_wedge_grid(1).unwrap(), 1),
        ];
        for (mesh, k) in cases {
            let ci = mesh.n_cells() / 2;
            let ops = build_cell_ops(&mesh, ci, k).unwrap();
            let centroid = mesh.cells[ci].centroid;
            let rule = simplex_quadrature(mesh.dim, 2 * k + 4).unwrap();
            for _ in 0..20 {
                let phi = Polynomial::random(mesh.dim, k + 2, &mut rng);
                let local = ops.project_local(&centroid, |x| phi.eval(x));
                let z_wg = &ops.kernel.g * &local;
                let z_proj = ops.lambda.project(|x| phi.gradient(x), &rule);
                let resid = ops.lambda.lambda_norm(&(z_wg - z_proj));
                let grad_norm: f64 = ops
                    .cell_points(&centroid)
                    .iter()
                    .zip(&ops.cell_wts)
                    .map(|(x, &w)| w * phi.gradient(x).norm_squared())
                    .sum::<f64>()
                    .sqrt();
                assert!(
                    resid <= 1e-9 * grad_norm.max(1e-12),
                    "dim {} k {k}: {resid:.3e} vs {grad_norm:.3e}",
                    mesh.dim
                );
            }
        }
    }

    #[test]
    fn ops_cache_groups_congruent_cells() {
        let mesh = build_quad_grid(3).unwrap();
        let cache = OpsCache::new(1);
        for ci in 0..mesh.n_cells() {
            cache.get(&mesh, ci).unwrap();
        }
        // 64 cells collapse into a handful of shape classes
        assert!(cache.n_classes() <= 14, "{} classes", cache.n_classes());
        let mesh_fine = build_quad_grid(4).unwrap();
        let cache_fine = OpsCache::new(1);
        for ci in 0..mesh_fine.n_cells() {
            cache_fine.get(&mesh_fine, ci).unwrap();
        }
        assert_eq!(cache.n_classes(), cache_fine.n_classes());
    }

    #[test]
    fn projected_polynomial_is_reproduced_pointwise() {
        let mesh = build_quad_grid(2).unwrap();
        let k = 2;
        let ops = build_cell_ops(&mesh, 5, k).unwrap();
        let centroid = mesh.cells[5].centroid;
        // member of P_k: projection reproduces it at the quadrature points
        let u = |x: &Vector3<f64>| 1.0 + x.x + x.y * x.y;
        let q0 = ops.project_interior(&centroid, u);
        for (q, p) in ops.cell_points(&centroid).iter().enumerate() {
            let mut val = 0.0;
            for j in 0..ops.layout.n_int {
                val += ops.int_values[(q, j)] * q0[j];
            }
            assert_relative_eq!(val, u(p), epsilon = 1e-12);
        }
    }
}
