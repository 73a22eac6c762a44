//! Global degree-of-freedom numbering, sparse assembly, Dirichlet boundary
//! conditions and the SPD linear solve.
//!
//! Interior unknowns are numbered first (cell-major), then face unknowns
//! (face-major); a face block is shared by its two adjacent cells through
//! the canonical face frame, so no orientation flip is ever needed.

use crate::basis::{gram, poly_space_dim, FaceBasis};
use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::quadrature::{map_to_simplex, simplex_quadrature};
use crate::weak_gradient::OpsCache;
use nalgebra::{Cholesky, DMatrix, DVector, Vector3};
use rayon::prelude::*;
use std::fmt::Write as _;
use std::sync::Arc;

/// Global unknown numbering for one (mesh, k) pair.
#[derive(Debug, Clone)]
pub struct DofMap {
    pub dim: usize,
    pub k: usize,
    pub n_cells: usize,
    pub n_faces: usize,
    /// Interior coefficients per cell.
    pub n_int: usize,
    /// Coefficients per face.
    pub face_dofs: usize,
    pub n_dof: usize,
    /// Global indices of unknowns on boundary faces.
    pub boundary_dofs: Vec<usize>,
}

impl DofMap {
    pub fn new(mesh: &Mesh, k: usize) -> Self {
        let n_int = poly_space_dim(mesh.dim, k);
        let face_dofs = poly_space_dim(mesh.dim - 1, k + 1);
        let n_cells = mesh.n_cells();
        let n_faces = mesh.n_faces();
        let mut boundary_dofs = Vec::new();
        for (fi, face) in mesh.faces.iter().enumerate() {
            if face.boundary {
                let base = n_cells * n_int + fi * face_dofs;
                boundary_dofs.extend(base..base + face_dofs);
            }
        }
        DofMap {
            dim: mesh.dim,
            k,
            n_cells,
            n_faces,
            n_int,
            face_dofs,
            n_dof: n_cells * n_int + n_faces * face_dofs,
            boundary_dofs,
        }
    }

    pub fn interior_base(&self, ci: usize) -> usize {
        ci * self.n_int
    }

    pub fn face_base(&self, fi: usize) -> usize {
        self.n_cells * self.n_int + fi * self.face_dofs
    }

    /// Local-to-global map for a cell (interior block, then face blocks in
    /// cell-local order).
    pub fn cell_globals(&self, mesh: &Mesh, ci: usize) -> Vec<usize> {
        let cell = &mesh.cells[ci];
        let mut map = Vec::with_capacity(self.n_int + cell.faces.len() * self.face_dofs);
        map.extend(self.interior_base(ci)..self.interior_base(ci) + self.n_int);
        for &fi in &cell.faces {
            map.extend(self.face_base(fi)..self.face_base(fi) + self.face_dofs);
        }
        map
    }
}

/// A finite element function: one coefficient per global unknown.
#[derive(Debug, Clone)]
pub struct WgFunction {
    pub dofmap: Arc<DofMap>,
    pub coeffs: DVector<f64>,
}

impl WgFunction {
    pub fn zeros(dofmap: Arc<DofMap>) -> Self {
        let n = dofmap.n_dof;
        WgFunction {
            dofmap,
            coeffs: DVector::zeros(n),
        }
    }

    /// Local coefficient vector of a cell in kernel layout.
    pub fn local_dofs(&self, mesh: &Mesh, ci: usize) -> DVector<f64> {
        let map = self.dofmap.cell_globals(mesh, ci);
        DVector::from_iterator(map.len(), map.iter().map(|&g| self.coeffs[g]))
    }

    /// Interior coefficients of a cell.
    pub fn interior(&self, ci: usize) -> DVector<f64> {
        self.coeffs
            .rows(self.dofmap.interior_base(ci), self.dofmap.n_int)
            .clone_owned()
    }

    /// Value of the interior polynomial of cell `ci` at a point.
    pub fn eval_interior(&self, mesh: &Mesh, ci: usize, x: &Vector3<f64>) -> f64 {
        let cell = &mesh.cells[ci];
        let basis = crate::basis::ScaledMonomialBasis::new(
            self.dofmap.dim,
            self.dofmap.k,
            cell.centroid,
            cell.diameter,
        );
        basis.eval(x).dot(&self.interior(ci))
    }
}

/// Symmetric sparse matrix, upper triangle stored in CSR form.
#[derive(Debug, Clone)]
pub struct SparseSpd {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseSpd {
    /// Builds from upper-triangle COO entries (duplicates are summed).
    pub fn from_upper_coo(n: usize, mut coo: Vec<(usize, usize, f64)>) -> Self {
        debug_assert!(coo.iter().all(|&(i, j, _)| i <= j && j < n));
        coo.sort_unstable_by_key(|&(i, j, _)| (i, j));
        let mut rows: Vec<usize> = Vec::with_capacity(coo.len());
        let mut col_idx: Vec<usize> = Vec::with_capacity(coo.len());
        let mut values: Vec<f64> = Vec::with_capacity(coo.len());
        for (i, j, v) in coo {
            if rows.last() == Some(&i) && col_idx.last() == Some(&j) {
                *values.last_mut().unwrap() += v;
            } else {
                rows.push(i);
                col_idx.push(j);
                values.push(v);
            }
        }
        let mut row_ptr = vec![0usize; n + 1];
        for &i in &rows {
            row_ptr[i + 1] += 1;
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        SparseSpd {
            n,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// y = A x using the symmetric structure.
    pub fn mul_sym(&self, x: &DVector<f64>, y: &mut DVector<f64>) {
        y.fill(0.0);
        for i in 0..self.n {
            let xi = x[i];
            let mut yi = 0.0;
            for e in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.col_idx[e];
                let v = self.values[e];
                yi += v * x[j];
                if j != i {
                    y[j] += v * xi;
                }
            }
            y[i] += yi;
        }
    }

    pub fn diagonal(&self) -> DVector<f64> {
        let mut d = DVector::zeros(self.n);
        for i in 0..self.n {
            for e in self.row_ptr[i]..self.row_ptr[i + 1] {
                if self.col_idx[e] == i {
                    d[i] = self.values[e];
                }
            }
        }
        d
    }

    /// Dense symmetric copy (diagnostics on coarse systems only).
    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for e in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.col_idx[e];
                m[(i, j)] = self.values[e];
                m[(j, i)] = self.values[e];
            }
        }
        m
    }

    /// Matrix Market coordinate text (symmetric, lower triangle, 1-based).
    pub fn to_matrix_market(&self) -> String {
        let mut out = String::from("%%MatrixMarket matrix coordinate real symmetric\n");
        writeln!(out, "{} {} {}", self.n, self.n, self.nnz()).unwrap();
        for i in 0..self.n {
            for e in self.row_ptr[i]..self.row_ptr[i + 1] {
                // stored upper (i <= j); emitted transposed to the lower half
                writeln!(out, "{} {} {:.17e}", self.col_idx[e] + 1, i + 1, self.values[e])
                    .unwrap();
            }
        }
        out
    }
}

/// Assembles the global stiffness matrix and load vector.
/// Only interior unknowns receive load contributions.
pub fn assemble<F>(
    mesh: &Mesh,
    cache: &OpsCache,
    f: F,
) -> Result<(SparseSpd, DVector<f64>, Arc<DofMap>)>
where
    F: Fn(&Vector3<f64>) -> f64 + Sync,
{
    let dofmap = Arc::new(DofMap::new(mesh, cache.k()));
    let per_cell: Vec<(Arc<crate::weak_gradient::CellOps>, DVector<f64>)> = (0..mesh.n_cells())
        .into_par_iter()
        .map(|ci| -> Result<_> {
            let ops = cache.get(mesh, ci)?;
            let load = ops.load_vector(&mesh.cells[ci].centroid, &f);
            Ok((ops, load))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut b = DVector::zeros(dofmap.n_dof);
    let mut coo: Vec<(usize, usize, f64)> = Vec::new();
    for (ci, (ops, load)) in per_cell.iter().enumerate() {
        let map = dofmap.cell_globals(mesh, ci);
        debug_assert_eq!(map.len(), ops.layout.n_loc);
        let s = &ops.kernel.s;
        for li in 0..map.len() {
            for lj in 0..map.len() {
                let (gi, gj) = (map[li], map[lj]);
                if gi <= gj {
                    coo.push((gi, gj, s[(li, lj)]));
                }
            }
        }
        for (li, v) in load.iter().enumerate() {
            b[map[li]] += v;
        }
    }
    let a = SparseSpd::from_upper_coo(dofmap.n_dof, coo);
    Ok((a, b, dofmap))
}

/// The assembled system with boundary unknowns eliminated.
#[derive(Debug, Clone)]
pub struct ReducedSystem {
    pub a: SparseSpd,
    pub b: DVector<f64>,
    /// Reduced index -> global unknown.
    pub free: Vec<usize>,
    /// Global unknown -> reduced index.
    pub pos: Vec<Option<usize>>,
    /// Full-length vector holding the fixed boundary values.
    pub fixed: DVector<f64>,
    pub dofmap: Arc<DofMap>,
}

/// Face-wise L2 projection of `g` onto the face polynomial space.
pub fn project_face<G>(mesh: &Mesh, fi: usize, k: usize, g: G) -> Result<DVector<f64>>
where
    G: Fn(&Vector3<f64>) -> f64,
{
    let basis = FaceBasis::new(mesh.face_frame(fi), k + 1);
    let rule = simplex_quadrature(mesh.dim - 1, 2 * (k + 1) + 1)?;
    let mut mass = DMatrix::zeros(basis.len(), basis.len());
    let mut rhs = DVector::zeros(basis.len());
    for tri in mesh.face_fan(fi) {
        let mapped = map_to_simplex(&rule, &tri);
        let vals = basis.values(&mapped.points);
        mass += gram(&vals, &mapped.weights);
        for (q, &w) in mapped.weights.iter().enumerate() {
            let gw = w * g(&mapped.points[q]);
            for j in 0..basis.len() {
                rhs[j] += vals[(q, j)] * gw;
            }
        }
    }
    let chol = Cholesky::new(mass)
        .ok_or_else(|| Error::internal(format!("face {fi}: singular face mass matrix")))?;
    Ok(chol.solve(&rhs))
}

/// Fixes boundary-face unknowns to the face-wise projection of `g` and
/// eliminates them by row/column removal with right-hand-side correction.
/// For homogeneous data this is plain removal.
pub fn apply_dirichlet<G>(
    a: &SparseSpd,
    b: &DVector<f64>,
    g: G,
    mesh: &Mesh,
    dofmap: Arc<DofMap>,
) -> Result<ReducedSystem>
where
    G: Fn(&Vector3<f64>) -> f64,
{
    let mut fixed = DVector::zeros(dofmap.n_dof);
    let mut is_fixed = vec![false; dofmap.n_dof];
    for (fi, face) in mesh.faces.iter().enumerate() {
        if !face.boundary {
            continue;
        }
        let coeffs = project_face(mesh, fi, dofmap.k, &g)?;
        let base = dofmap.face_base(fi);
        for (r, &c) in coeffs.iter().enumerate() {
            fixed[base + r] = c;
            is_fixed[base + r] = true;
        }
    }

    let mut pos = vec![None; dofmap.n_dof];
    let mut free = Vec::with_capacity(dofmap.n_dof - dofmap.boundary_dofs.len());
    for gidx in 0..dofmap.n_dof {
        if !is_fixed[gidx] {
            pos[gidx] = Some(free.len());
            free.push(gidx);
        }
    }

    let mut rb = DVector::from_iterator(free.len(), free.iter().map(|&g| b[g]));
    let mut coo = Vec::with_capacity(a.nnz());
    for i in 0..a.n {
        for e in a.row_ptr[i]..a.row_ptr[i + 1] {
            let j = a.col_idx[e];
            let v = a.values[e];
            match (pos[i], pos[j]) {
                (Some(pi), Some(pj)) => coo.push((pi.min(pj), pi.max(pj), v)),
                (Some(pi), None) => rb[pi] -= v * fixed[j],
                (None, Some(pj)) => rb[pj] -= v * fixed[i],
                (None, None) => {}
            }
        }
    }
    let ra = SparseSpd::from_upper_coo(free.len(), coo);
    Ok(ReducedSystem {
        a: ra,
        b: rb,
        free,
        pos,
        fixed,
        dofmap,
    })
}

/// Linear solver selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolveMethod {
    /// Sparse Cholesky factorization.
    Direct,
    /// Diagonally preconditioned conjugate gradients.
    Cg,
    /// Direct up to a size threshold, CG beyond.
    Auto,
}

/// Unknown-count threshold for the automatic direct/CG switch.
pub const DIRECT_DOF_LIMIT: usize = 300_000;

fn expand(sys: &ReducedSystem, x: &DVector<f64>) -> WgFunction {
    let mut coeffs = sys.fixed.clone();
    for (ri, &gidx) in sys.free.iter().enumerate() {
        coeffs[gidx] = x[ri];
    }
    WgFunction {
        dofmap: sys.dofmap.clone(),
        coeffs,
    }
}

/// Solves the reduced system and re-expands to a full coefficient vector
/// including the fixed boundary values.
pub fn solve_reduced(
    sys: &ReducedSystem,
    method: SolveMethod,
    tol: f64,
    direct_limit: usize,
) -> Result<WgFunction> {
    let x = solve_spd(&sys.a, &sys.b, method, tol, direct_limit)?;
    Ok(expand(sys, &x))
}

/// Solves A x = b for the symmetric positive definite matrix A.
pub fn solve_spd(
    a: &SparseSpd,
    b: &DVector<f64>,
    method: SolveMethod,
    tol: f64,
    direct_limit: usize,
) -> Result<DVector<f64>> {
    let method = match method {
        SolveMethod::Auto => {
            if a.n <= direct_limit {
                SolveMethod::Direct
            } else {
                SolveMethod::Cg
            }
        }
        m => m,
    };
    match method {
        SolveMethod::Direct => solve_direct(a, b),
        SolveMethod::Cg => solve_cg(a, b, tol),
        SolveMethod::Auto => unreachable!(),
    }
}

fn solve_direct(a: &SparseSpd, b: &DVector<f64>) -> Result<DVector<f64>> {
    use faer::sparse::{SparseColMat, Triplet};
    let mut triplets = Vec::with_capacity(2 * a.nnz());
    for i in 0..a.n {
        for e in a.row_ptr[i]..a.row_ptr[i + 1] {
            let j = a.col_idx[e];
            let v = a.values[e];
            triplets.push(Triplet::new(i, j, v));
            if i != j {
                triplets.push(Triplet::new(j, i, v));
            }
        }
    }
    let mat = SparseColMat::<usize, f64>::try_new_from_triplets(a.n, a.n, &triplets)
        .map_err(|e| Error::solver(format!("sparse matrix construction failed: {e:?}")))?;
    let llt = mat
        .sp_cholesky(faer::Side::Lower)
        .map_err(|e| Error::solver(format!("sparse Cholesky breakdown (SPD violation): {e:?}")))?;
    use faer::linalg::solvers::Solve;
    let rhs = faer::Mat::from_fn(a.n, 1, |i, _| b[i]);
    let x = llt.solve(&rhs);
    Ok(DVector::from_fn(a.n, |i, _| x[(i, 0)]))
}

/// Conjugate gradients with diagonal preconditioning; the relative residual
/// target is measured against |b|.
fn solve_cg(a: &SparseSpd, b: &DVector<f64>, tol: f64) -> Result<DVector<f64>> {
    let n = a.n;
    let bnorm = b.norm();
    if bnorm == 0.0 {
        return Ok(DVector::zeros(n));
    }
    let max_iter = 50 * (n as f64).sqrt().ceil() as usize + 100;
    let diag = a.diagonal();
    let minv = diag.map(|d| if d > 0.0 { 1.0 / d } else { 1.0 });

    let mut x = DVector::zeros(n);
    let mut r = b.clone();
    let mut z = minv.component_mul(&r);
    let mut p = z.clone();
    let mut rz = r.dot(&z);
    let mut ap = DVector::zeros(n);
    let mut history = Vec::new();
    for it in 0..max_iter {
        a.mul_sym(&p, &mut ap);
        let pap = p.dot(&ap);
        if pap <= 0.0 {
            return Err(Error::Solver {
                message: format!("CG breakdown at iteration {it}: p^T A p = {pap:.3e}"),
                residual_history: history,
            });
        }
        let alpha = rz / pap;
        x.axpy(alpha, &p, 1.0);
        r.axpy(-alpha, &ap, 1.0);
        let rnorm = r.norm();
        if it % 16 == 0 || rnorm <= tol * bnorm {
            history.push(rnorm / bnorm);
        }
        if rnorm <= tol * bnorm {
            return Ok(x);
        }
        z = minv.component_mul(&r);
        let rz_new = r.dot(&z);
        let beta = rz_new / rz;
        rz = rz_new;
        p = &z + &p * beta;
    }
    Err(Error::Solver {
        message: format!(
            "CG did not reach a relative residual of {tol:.1e} within {max_iter} iterations"
        ),
        residual_history: history,
    })
}

/// Static condensation of the cell-interior unknowns onto the face system.
#[derive(Debug)]
pub struct CondensedSystem {
    /// Schur complement on the free face unknowns.
    pub a: SparseSpd,
    pub b: DVector<f64>,
    /// Condensed index -> reduced index.
    pub face_map: Vec<usize>,
    cells: Vec<CellBacksub>,
}

#[derive(Debug)]
struct CellBacksub {
    int_reduced: Vec<usize>,
    face_cond: Vec<usize>,
    /// A_II^-1 A_IF
    e: DMatrix<f64>,
    /// A_II^-1 b_I
    e_b: DVector<f64>,
}

/// Forms the Schur complement of the reduced system onto the face unknowns.
/// Interior blocks are cell-local, so the elimination is cell-by-cell.
pub fn condense_interior(sys: &ReducedSystem, mesh: &Mesh) -> Result<CondensedSystem> {
    let dofmap = &sys.dofmap;
    let n_int_total = dofmap.n_cells * dofmap.n_int;

    // condensed numbering of free face unknowns
    let mut face_map = Vec::new();
    let mut cond_of_reduced = vec![None; sys.free.len()];
    for (ri, &gidx) in sys.free.iter().enumerate() {
        if gidx >= n_int_total {
            cond_of_reduced[ri] = Some(face_map.len());
            face_map.push(ri);
        }
    }
    let n_face = face_map.len();

    // gather rows of the reduced matrix in both triangles
    let full_rows = {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); sys.free.len()];
        for i in 0..sys.a.n {
            for e in sys.a.row_ptr[i]..sys.a.row_ptr[i + 1] {
                let j = sys.a.col_idx[e];
                let v = sys.a.values[e];
                rows[i].push((j, v));
                if i != j {
                    rows[j].push((i, v));
                }
            }
        }
        rows
    };

    let mut coo: Vec<(usize, usize, f64)> = Vec::new();
    let mut b_face = DVector::zeros(n_face);
    // copy the face-face block
    for (ci_cond, &ri) in face_map.iter().enumerate() {
        b_face[ci_cond] = sys.b[ri];
        for &(j, v) in &full_rows[ri] {
            if let Some(cj) = cond_of_reduced[j] {
                if ci_cond <= cj {
                    coo.push((ci_cond, cj, v));
                }
            }
        }
    }

    let mut cells = Vec::with_capacity(dofmap.n_cells);
    for ci in 0..dofmap.n_cells {
        let base = dofmap.interior_base(ci);
        let int_reduced: Vec<usize> = (0..dofmap.n_int)
            .map(|r| sys.pos[base + r].expect("interior unknowns are never fixed"))
            .collect();
        // face columns touched by this cell's interior rows
        let mut face_cond: Vec<usize> = Vec::new();
        for &ri in &int_reduced {
            for &(j, _) in &full_rows[ri] {
                if let Some(cj) = cond_of_reduced[j] {
                    if !face_cond.contains(&cj) {
                        face_cond.push(cj);
                    }
                }
            }
        }
        face_cond.sort_unstable();
        let lookup = |cj: usize| face_cond.iter().position(|&c| c == cj);

        let ni = dofmap.n_int;
        let nf = face_cond.len();
        let mut a_ii = DMatrix::zeros(ni, ni);
        let mut a_if = DMatrix::zeros(ni, nf);
        let mut b_i = DVector::zeros(ni);
        for (li, &ri) in int_reduced.iter().enumerate() {
            b_i[li] = sys.b[ri];
            for &(j, v) in &full_rows[ri] {
                if let Some(cj) = cond_of_reduced[j] {
                    a_if[(li, lookup(cj).unwrap())] = v;
                } else if j >= int_reduced[0] && j < int_reduced[0] + ni {
                    a_ii[(li, j - int_reduced[0])] = v;
                }
            }
        }
        let chol = Cholesky::new(a_ii).ok_or_else(|| Error::Solver {
            message: format!("interior block of cell {ci} is not SPD"),
            residual_history: vec![],
        })?;
        let e = chol.solve(&a_if);
        let e_b = chol.solve(&b_i);

        // Schur updates: A_FF -= A_IF^T A_II^-1 A_IF, b_F -= A_IF^T A_II^-1 b_I
        for p in 0..nf {
            let cp = face_cond[p];
            let mut dot_b = 0.0;
            for li in 0..ni {
                dot_b += a_if[(li, p)] * e_b[li];
            }
            b_face[cp] -= dot_b;
            for q in 0..nf {
                let cq = face_cond[q];
                if cp <= cq {
                    let mut dot = 0.0;
                    for li in 0..ni {
                        dot += a_if[(li, p)] * e[(li, q)];
                    }
                    coo.push((cp, cq, -dot));
                }
            }
        }
        cells.push(CellBacksub {
            int_reduced,
            face_cond,
            e,
            e_b,
        });
    }

    Ok(CondensedSystem {
        a: SparseSpd::from_upper_coo(n_face, coo),
        b: b_face,
        face_map,
        cells,
    })
}

/// Solves the condensed face system and back-substitutes the interiors;
/// the result matches the uncondensed solve.
pub fn solve_condensed(
    cond: &CondensedSystem,
    sys: &ReducedSystem,
    method: SolveMethod,
    tol: f64,
    direct_limit: usize,
) -> Result<WgFunction> {
    let x_face = solve_spd(&cond.a, &cond.b, method, tol, direct_limit)?;
    let mut x = DVector::zeros(sys.free.len());
    for (cidx, &ri) in cond.face_map.iter().enumerate() {
        x[ri] = x_face[cidx];
    }
    for cell in &cond.cells {
        let mut xf = DVector::zeros(cell.face_cond.len());
        for (p, &c) in cell.face_cond.iter().enumerate() {
            xf[p] = x_face[c];
        }
        let xi = &cell.e_b - &cell.e * xf;
        for (li, &ri) in cell.int_reduced.iter().enumerate() {
            x[ri] = xi[li];
        }
    }
    Ok(expand(sys, &x))
}
