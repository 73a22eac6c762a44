//! The constrained piecewise vector-polynomial space the weak gradient
//! lives in.
//!
//! On a cell T with simplicial split {T_i}, the space consists of fields
//! that are [P_{k+1}]^d on every simplex, H(div,T)-conforming across the
//! internal facets, with a single polynomial divergence in P_k(T) and a
//! face-wide P_{k+1} normal trace on every boundary face of the cell. A
//! numerical basis is obtained as the orthonormal SVD nullspace of an
//! explicit constraint matrix over the per-simplex vector monomial
//! superspace.

use crate::basis::{gram, poly_space_dim, FaceBasis, ScaledMonomialBasis, SimplexBasis};
use crate::error::{Error, Result};
use crate::mesh::{CellSplit, Mesh};
use crate::quadrature::{map_to_simplex, simplex_quadrature, QuadratureRule};
use nalgebra::{Cholesky, DMatrix, DVector, Dyn, Vector3};
use rand_chacha::ChaCha8Rng;
use rand::{Rng, SeedableRng};

/// Relative singular-value cutoff separating constraint rank from nullspace.
pub const RANK_CUTOFF: f64 = 1e-10;

/// Numerical basis of the constrained gradient space on one cell.
#[derive(Debug, Clone)]
pub struct LambdaSpace {
    pub cell: usize,
    pub k: usize,
    pub dim: usize,
    pub split: CellSplit,
    /// Orthonormal scalar basis of degree k+1 per simplex (shared by the d
    /// vector components), built from centroid/diameter-scaled monomials.
    pub simplex_bases: Vec<SimplexBasis>,
    /// Scalar monomials per simplex.
    pub n_mono: usize,
    /// Superspace dimension: n_simplices * d * n_mono.
    pub dsup: usize,
    pub rank: usize,
    pub dlam: usize,
    /// dsup x dlam matrix with orthonormal columns spanning the nullspace.
    pub nullspace: DMatrix<f64>,
    /// Row-normalized constraint matrix (kept for diagnostics and oracles).
    pub constraints: DMatrix<f64>,
    /// Block-diagonal superspace mass matrix.
    pub m_sup: DMatrix<f64>,
    /// Mass matrix in the nullspace basis.
    pub m_lambda: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
}

/// Superspace coefficient index of (simplex, component, monomial).
#[inline]
pub fn superspace_index(dim: usize, n_mono: usize, simplex: usize, comp: usize, mono: usize) -> usize {
    (simplex * dim + comp) * n_mono + mono
}

/// Assembles the constraint matrix whose nullspace defines the space.
/// Three row groups:
///   (a) moments of the normal-component jump across every internal facet
///       against P_{k+1} on the facet;
///   (b) on boundary faces covered by several facets, equality of the
///       face-wide P_{k+1} expansion of the normal trace from every facet;
///   (c) equality of the per-simplex divergences as members of a cell-wide
///       P_k basis.
/// Rows are normalized to unit Euclidean length.
pub fn build_constraints(mesh: &Mesh, split: &CellSplit, k: usize) -> Result<DMatrix<f64>> {
    let dim = mesh.dim;
    let n_mono = poly_space_dim(dim, k + 1);
    let n_simp = split.n_simplices();
    let dsup = n_simp * dim * n_mono;
    let bases = simplex_bases(split, k);
    let facet_rule = simplex_quadrature(dim - 1, 2 * (k + 1) + 1)?;
    let cell_rule = simplex_quadrature(dim, 2 * k + 4)?;

    let idx = |s: usize, c: usize, m: usize| superspace_index(dim, n_mono, s, c, m);
    let mut rows: Vec<DVector<f64>> = Vec::new();

    // (a) jump moments on internal facets
    let n_facet_poly = poly_space_dim(dim - 1, k + 1);
    for facet in &split.internal_facets {
        let coords = split.facet_coords(&facet.verts);
        let frame = crate::basis::FaceFrame::from_sorted_vertices(dim, &coords);
        let fbasis = FaceBasis::new(frame, k + 1);
        let mapped = map_to_simplex(&facet_rule, &coords);
        let pvals = fbasis.values(&mapped.points);
        for r in 0..n_facet_poly {
            let mut row = DVector::zeros(dsup);
            for (side, sign) in [(facet.left, 1.0), (facet.right, -1.0)] {
                let mvals = bases[side].values(&mapped.points);
                for c in 0..dim {
                    let nc = facet.normal[c] * sign;
                    if nc == 0.0 {
                        continue;
                    }
                    for m in 0..n_mono {
                        let mut acc = 0.0;
                        for (q, &w) in mapped.weights.iter().enumerate() {
                            acc += w * pvals[(q, r)] * mvals[(q, m)];
                        }
                        row[idx(side, c, m)] += nc * acc;
                    }
                }
            }
            rows.push(row);
        }
    }

    // (b) one face-wide trace polynomial on subdivided boundary faces
    let cell = &mesh.cells[split.cell];
    let groups = split.facets_by_face(cell.faces.len());
    for (lf, facet_ids) in groups.iter().enumerate() {
        if facet_ids.len() < 2 {
            continue;
        }
        let fi = cell.faces[lf];
        let face_basis = FaceBasis::new(mesh.face_frame(fi), k + 1);
        let nb = face_basis.len();
        let normal = mesh.faces[fi].normal * cell.outward[lf];
        // per covering facet: expansion of the normal trace in the face frame
        let mut fits: Vec<(usize, DMatrix<f64>)> = Vec::new(); // (simplex, nb x (d*n_mono))
        for &bfi in facet_ids {
            let bf = &split.boundary_facets[bfi];
            let coords = split.facet_coords(&bf.verts);
            let mapped = map_to_simplex(&facet_rule, &coords);
            let pvals = face_basis.values(&mapped.points);
            let mass = gram(&pvals, &mapped.weights);
            let mvals = bases[bf.simplex].values(&mapped.points);
            let mut rhs = DMatrix::zeros(nb, dim * n_mono);
            for r in 0..nb {
                for c in 0..dim {
                    if normal[c] == 0.0 {
                        continue;
                    }
                    for m in 0..n_mono {
                        let mut acc = 0.0;
                        for (q, &w) in mapped.weights.iter().enumerate() {
                            acc += w * pvals[(q, r)] * mvals[(q, m)];
                        }
                        rhs[(r, c * n_mono + m)] += normal[c] * acc;
                    }
                }
            }
            let chol = Cholesky::new(mass).ok_or_else(|| Error::Geometry {
                cell: split.cell,
                message: format!("degenerate facet mass matrix on face {lf}"),
            })?;
            let fit = chol.solve(&rhs);
            fits.push((bf.simplex, fit));
        }
        let (s0, fit0) = &fits[0];
        for (sj, fitj) in &fits[1..] {
            for r in 0..nb {
                let mut row = DVector::zeros(dsup);
                for c in 0..dim {
                    for m in 0..n_mono {
                        row[idx(*sj, c, m)] += fitj[(r, c * n_mono + m)];
                        row[idx(*s0, c, m)] -= fit0[(r, c * n_mono + m)];
                    }
                }
                rows.push(row);
            }
        }
    }

    // (c) one-piece divergence: per-simplex divergences agree as members of
    // a cell-wide P_k basis
    let n_div = poly_space_dim(dim, k);
    let div_basis = ScaledMonomialBasis::new(dim, k, cell.centroid, cell.diameter);
    let mut div_fits: Vec<DMatrix<f64>> = Vec::with_capacity(n_simp);
    for (s, basis) in bases.iter().enumerate() {
        let mapped = map_to_simplex(&cell_rule, &split.simplex_coords(s));
        let dvals = div_basis.values(&mapped.points);
        let mass = gram(&dvals, &mapped.weights);
        let chol = Cholesky::new(mass).ok_or_else(|| Error::Geometry {
            cell: split.cell,
            message: format!("degenerate simplex {s} in divergence constraints"),
        })?;
        // moments of every basis derivative against the cell-wide basis;
        // the projection is exact since the derivatives have degree <= k
        let mut fit = DMatrix::zeros(n_div, dim * n_mono);
        for c in 0..dim {
            let gvals = basis.gradient_values(&mapped.points, c);
            let mut moments = DMatrix::zeros(n_div, n_mono);
            for r in 0..n_div {
                for m in 0..n_mono {
                    let mut acc = 0.0;
                    for (q, &w) in mapped.weights.iter().enumerate() {
                        acc += w * dvals[(q, r)] * gvals[(q, m)];
                    }
                    moments[(r, m)] = acc;
                }
            }
            let expand = chol.solve(&moments);
            fit.view_mut((0, c * n_mono), (n_div, n_mono)).copy_from(&expand);
        }
        div_fits.push(fit);
    }
    for s in 1..n_simp {
        for r in 0..n_div {
            let mut row = DVector::zeros(dsup);
            for c in 0..dim {
                for m in 0..n_mono {
                    row[idx(s, c, m)] += div_fits[s][(r, c * n_mono + m)];
                    row[idx(0, c, m)] -= div_fits[0][(r, c * n_mono + m)];
                }
            }
            rows.push(row);
        }
    }

    let mut c = DMatrix::zeros(rows.len(), dsup);
    for (r, row) in rows.iter().enumerate() {
        let norm = row.norm();
        let scale = if norm > 0.0 { 1.0 / norm } else { 1.0 };
        for j in 0..dsup {
            c[(r, j)] = row[j] * scale;
        }
    }
    Ok(c)
}

/// Orthonormal nullspace of a (possibly rank-deficient) constraint matrix,
/// via SVD with a relative cutoff. Returns (rank, nullspace basis).
pub fn nullspace_of(c: &DMatrix<f64>) -> (usize, DMatrix<f64>) {
    let n = c.ncols();
    if c.nrows() == 0 {
        return (0, DMatrix::identity(n, n));
    }
    // Zero-pad to square so the full right-singular basis is available.
    let rows = c.nrows().max(n);
    let mut padded = DMatrix::zeros(rows, n);
    padded.view_mut((0, 0), (c.nrows(), n)).copy_from(c);
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let smax = svd.singular_values.max();
    let rank = svd
        .singular_values
        .iter()
        .filter(|&&s| s > RANK_CUTOFF * smax)
        .count();
    let dlam = n - rank;
    let mut nullspace = DMatrix::zeros(n, dlam);
    for j in 0..dlam {
        for i in 0..n {
            nullspace[(i, j)] = v_t[(rank + j, i)];
        }
    }
    (rank, nullspace)
}

fn simplex_bases(split: &CellSplit, k: usize) -> Vec<SimplexBasis> {
    let rule = simplex_quadrature(split.dim, 2 * k + 4).expect("degree within range");
    (0..split.n_simplices())
        .map(|s| {
            let mapped = map_to_simplex(&rule, &split.simplex_coords(s));
            SimplexBasis::orthonormal(
                split.dim,
                k + 1,
                split.simplex_centroid(s),
                split.simplex_diameter(s),
                &mapped.points,
                &mapped.weights,
            )
        })
        .collect()
}

/// Builds the constrained space on one cell.
pub fn build_lambda_space(mesh: &Mesh, split: CellSplit, k: usize) -> Result<LambdaSpace> {
    let dim = mesh.dim;
    let n_mono = poly_space_dim(dim, k + 1);
    let n_simp = split.n_simplices();
    let dsup = n_simp * dim * n_mono;
    let constraints = build_constraints(mesh, &split, k)?;
    let (rank, nullspace) = nullspace_of(&constraints);
    let dlam = dsup - rank;

    // the space must contain all cell-wide [P_k]^d fields
    let min_dim = dim * poly_space_dim(dim, k);
    if dlam < min_dim {
        return Err(Error::internal(format!(
            "cell {}: constrained space dimension {dlam} below [P_{k}]^{dim} dimension {min_dim}",
            split.cell
        )));
    }

    // residual of the nullspace against the constraints
    let residual = (&constraints * &nullspace).norm();
    let scale = constraints.norm().max(1.0);
    if residual > 1e-10 * scale {
        return Err(Error::Constraint {
            cell: split.cell,
            residual,
            message: "nullspace does not satisfy the constraint matrix".into(),
        });
    }

    let bases = simplex_bases(&split, k);
    let cell_rule = simplex_quadrature(dim, 2 * k + 4)?;
    let mut m_sup = DMatrix::zeros(dsup, dsup);
    for s in 0..n_simp {
        let mapped = map_to_simplex(&cell_rule, &split.simplex_coords(s));
        let vals = bases[s].values(&mapped.points);
        let mass = gram(&vals, &mapped.weights);
        for c in 0..dim {
            let off = superspace_index(dim, n_mono, s, c, 0);
            m_sup
                .view_mut((off, off), (n_mono, n_mono))
                .copy_from(&mass);
        }
    }
    let m_lambda = nullspace.transpose() * &m_sup * &nullspace;
    let m_lambda_sym = (&m_lambda + m_lambda.transpose()) * 0.5;
    let chol = Cholesky::new(m_lambda_sym.clone()).ok_or_else(|| Error::Constraint {
        cell: split.cell,
        residual: f64::NAN,
        message: "mass matrix in the constrained basis is not SPD".into(),
    })?;

    Ok(LambdaSpace {
        cell: split.cell,
        k,
        dim,
        split,
        simplex_bases: bases,
        n_mono,
        dsup,
        rank,
        dlam,
        nullspace,
        constraints,
        m_sup,
        m_lambda: m_lambda_sym,
        chol,
    })
}

impl LambdaSpace {
    #[inline]
    pub fn index(&self, simplex: usize, comp: usize, mono: usize) -> usize {
        superspace_index(self.dim, self.n_mono, simplex, comp, mono)
    }

    /// Solves `M_lambda x = rhs`.
    pub fn mass_solve(&self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(rhs)
    }

    /// L2(T) norm of a field given in nullspace coordinates.
    pub fn lambda_norm(&self, z: &DVector<f64>) -> f64 {
        (z.dot(&(&self.m_lambda * z))).max(0.0).sqrt()
    }

    /// Evaluates a superspace coefficient vector on simplex `s` at `x`.
    pub fn eval_superspace(&self, coeffs: &DVector<f64>, s: usize, x: &Vector3<f64>) -> Vector3<f64> {
        let vals = self.simplex_bases[s].eval(x);
        let mut out = Vector3::zeros();
        for c in 0..self.dim {
            let off = self.index(s, c, 0);
            for m in 0..self.n_mono {
                out[c] += coeffs[off + m] * vals[m];
            }
        }
        out
    }

    /// Divergence of a superspace coefficient vector on simplex `s` at `x`.
    pub fn eval_superspace_div(&self, coeffs: &DVector<f64>, s: usize, x: &Vector3<f64>) -> f64 {
        let basis = &self.simplex_bases[s];
        let mut out = 0.0;
        for c in 0..self.dim {
            let gvals = basis.eval_gradient_axis(x, c);
            let off = self.index(s, c, 0);
            for m in 0..self.n_mono {
                out += coeffs[off + m] * gvals[m];
            }
        }
        out
    }

    /// Superspace coefficients of a field that is piecewise polynomial of
    /// degree <= k+1 on the split (exact via per-simplex L2 projection).
    pub fn superspace_coefficients<F>(&self, field: F) -> Result<DVector<f64>>
    where
        F: Fn(&Vector3<f64>) -> Vector3<f64>,
    {
        let rule = simplex_quadrature(self.dim, 2 * self.k + 4)?;
        let mut coeffs = DVector::zeros(self.dsup);
        for s in 0..self.split.n_simplices() {
            let mapped = map_to_simplex(&rule, &self.split.simplex_coords(s));
            let vals = self.simplex_bases[s].values(&mapped.points);
            let mass = gram(&vals, &mapped.weights);
            let chol = Cholesky::new(mass)
                .ok_or_else(|| Error::internal("singular simplex mass matrix".to_string()))?;
            let fx: Vec<Vector3<f64>> = mapped.points.iter().map(|p| field(p)).collect();
            for c in 0..self.dim {
                let mut rhs = DVector::zeros(self.n_mono);
                for (q, &w) in mapped.weights.iter().enumerate() {
                    let fw = w * fx[q][c];
                    for m in 0..self.n_mono {
                        rhs[m] += vals[(q, m)] * fw;
                    }
                }
                let sol = chol.solve(&rhs);
                let off = self.index(s, c, 0);
                for m in 0..self.n_mono {
                    coeffs[off + m] = sol[m];
                }
            }
        }
        Ok(coeffs)
    }

    /// L2 projection of an arbitrary vector field onto the space, returned
    /// in nullspace coordinates.
    pub fn project<F>(&self, field: F, rule: &QuadratureRule) -> DVector<f64>
    where
        F: Fn(&Vector3<f64>) -> Vector3<f64>,
    {
        let mut rhs = DVector::zeros(self.dsup);
        for s in 0..self.split.n_simplices() {
            let mapped = map_to_simplex(rule, &self.split.simplex_coords(s));
            let vals = self.simplex_bases[s].values(&mapped.points);
            for (q, &w) in mapped.weights.iter().enumerate() {
                let f = field(&mapped.points[q]);
                for c in 0..self.dim {
                    let off = self.index(s, c, 0);
                    let fw = w * f[c];
                    for m in 0..self.n_mono {
                        rhs[off + m] += vals[(q, m)] * fw;
                    }
                }
            }
        }
        let reduced = self.nullspace.transpose() * rhs;
        self.chol.solve(&reduced)
    }

    /// Residual of projecting a superspace coefficient vector onto the
    /// nullspace, relative to its norm (0 for members of the space).
    pub fn containment_residual(&self, coeffs: &DVector<f64>) -> f64 {
        let proj = &self.nullspace * (self.nullspace.transpose() * coeffs);
        (coeffs - proj).norm() / coeffs.norm().max(1e-300)
    }
}

/// Worst sampled violations of the three constraint groups for random
/// members of the space, after diameter scaling of L2-normalized members.
#[derive(Debug, Clone, Copy, Default)]
pub struct LambdaResiduals {
    pub normal_jump: f64,
    pub trace_misfit: f64,
    pub div_mismatch: f64,
}

impl LambdaResiduals {
    pub fn max(&self) -> f64 {
        self.normal_jump.max(self.trace_misfit).max(self.div_mismatch)
    }
}

/// Samples random members of the space at random points and reports the
/// largest pointwise constraint violations. Members are normalized to unit
/// L2(T) norm and residuals multiplied by h_T^(d/2), so the numbers are
/// scale-free.
pub fn lambda_sample_check(mesh: &Mesh, space: &LambdaSpace, seed: u64) -> Result<LambdaResiduals> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = space.dim;
    let cell = &mesh.cells[space.cell];
    let h_scale = cell.diameter.powf(dim as f64 / 2.0);
    let n_members = 8.min(space.dlam);
    let n_points = 12;
    let mut res = LambdaResiduals::default();

    let face_bases: Vec<FaceBasis> = cell
        .faces
        .iter()
        .map(|&fi| FaceBasis::new(mesh.face_frame(fi), space.k + 1))
        .collect();
    let facet_rule = simplex_quadrature(dim - 1, 2 * (space.k + 1) + 1)?;
    let groups = space.split.facets_by_face(cell.faces.len());

    for _ in 0..n_members {
        let mut z = DVector::zeros(space.dlam);
        for v in z.iter_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
        let norm = space.lambda_norm(&z);
        if norm == 0.0 {
            continue;
        }
        z /= norm;
        let coeffs = &space.nullspace * &z;

        // normal jumps on internal facets
        for facet in &space.split.internal_facets {
            let coords = space.split.facet_coords(&facet.verts);
            for _ in 0..n_points {
                let x = random_simplex_point(&mut rng, &coords);
                let vl = space.eval_superspace(&coeffs, facet.left, &x);
                let vr = space.eval_superspace(&coeffs, facet.right, &x);
                res.normal_jump = res
                    .normal_jump
                    .max((vl - vr).dot(&facet.normal).abs() * h_scale);
            }
        }

        // face-wide trace fit on subdivided boundary faces
        for (lf, facet_ids) in groups.iter().enumerate() {
            if facet_ids.len() < 2 {
                continue;
            }
            let fi = cell.faces[lf];
            let fb = &face_bases[lf];
            let normal = mesh.faces[fi].normal * cell.outward[lf];
            // project the piecewise trace onto the face-wide basis
            let mut mass = DMatrix::zeros(fb.len(), fb.len());
            let mut rhs = DVector::zeros(fb.len());
            for &bfi in facet_ids {
                let bf = &space.split.boundary_facets[bfi];
                let coords = space.split.facet_coords(&bf.verts);
                let mapped = map_to_simplex(&facet_rule, &coords);
                let pvals = fb.values(&mapped.points);
                mass += gram(&pvals, &mapped.weights);
                for (q, &w) in mapped.weights.iter().enumerate() {
                    let t = space
                        .eval_superspace(&coeffs, bf.simplex, &mapped.points[q])
                        .dot(&normal);
                    for r in 0..fb.len() {
                        rhs[r] += w * pvals[(q, r)] * t;
                    }
                }
            }
            let fit = Cholesky::new(mass)
                .ok_or_else(|| Error::internal("singular face mass in sample check"))?
                .solve(&rhs);
            for &bfi in facet_ids {
                let bf = &space.split.boundary_facets[bfi];
                let coords = space.split.facet_coords(&bf.verts);
                for _ in 0..n_points {
                    let x = random_simplex_point(&mut rng, &coords);
                    let t = space.eval_superspace(&coeffs, bf.simplex, &x).dot(&normal);
                    let p = fb.eval(&x).dot(&fit);
                    res.trace_misfit = res.trace_misfit.max((t - p).abs() * h_scale);
                }
            }
        }

        // divergence agreement across simplices (polynomials extend globally)
        for s in 1..space.split.n_simplices() {
            for _ in 0..n_points {
                let x = random_simplex_point(&mut rng, &space.split.simplex_coords(s));
                let d_here = space.eval_superspace_div(&coeffs, s, &x);
                let d_first = space.eval_superspace_div(&coeffs, 0, &x);
                res.div_mismatch = res
                    .div_mismatch
                    .max((d_here - d_first).abs() * h_scale * cell.diameter);
            }
        }
    }
    Ok(res)
}

fn random_simplex_point(rng: &mut ChaCha8Rng, verts: &[Vector3<f64>]) -> Vector3<f64> {
    // uniform barycentric coordinates via exponential spacings
    let mut bary: Vec<f64> = (0..verts.len())
        .map(|_| -f64::ln(rng.random_range(1e-12..1.0)))
        .collect();
    let total: f64 = bary.iter().sum();
    for b in bary.iter_mut() {
        *b /= total;
    }
    verts
        .iter()
        .zip(&bary)
        .map(|(v, &b)| v * b)
        .sum()
}

/// One CSV line per cell with the space dimensions and sampled residuals.
pub fn lambda_debug_csv(mesh: &Mesh, k: usize, seed: u64) -> Result<String> {
    let mut out = String::from("cell,dsup,rank,dlam,normal_jump,trace_misfit,div_mismatch\n");
    for ci in 0..mesh.n_cells() {
        let split = crate::mesh::split_cell(mesh, ci)?;
        let space = build_lambda_space(mesh, split, k)?;
        let res = lambda_sample_check(mesh, &space, seed)?;
        out.push_str(&format!(
            "{},{},{},{},{:.3e},{:.3e},{:.3e}\n",
            ci, space.dsup, space.rank, space.dlam, res.normal_jump, res.trace_misfit, res.div_mismatch
        ));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_quad_hex_grid, build_wedge_grid, split_cell};
    use approx::assert_relative_eq;

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

    /// Independent rank oracle: rebuilds the constraints by point sampling.
    /// Jumps, trace mismatches and divergence mismatches of polynomials are
    /// themselves polynomials, so vanishing at enough random points is
    /// equivalent to the moment conditions; the sampled matrix must have the
    /// same rank as the assembled one.
    fn sampled_rank(mesh: &Mesh, space: &LambdaSpace, seed: u64) -> usize {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = space.dim;
        let split = &space.split;
        let mut rows: Vec<DVector<f64>> = Vec::new();
        let unit = |c: usize| {
            let mut e = Vector3::zeros();
            e[c] = 1.0;
            e
        };

        let n_facet_poly = poly_space_dim(dim - 1, space.k + 1);
        for facet in &split.internal_facets {
            let coords = split.facet_coords(&facet.verts);
            for _ in 0..(n_facet_poly + 2) {
                let x = random_simplex_point(&mut rng, &coords);
                let mut row = DVector::zeros(space.dsup);
                for (side, sign) in [(facet.left, 1.0), (facet.right, -1.0)] {
                    let vals = space.simplex_bases[side].eval(&x);
                    for c in 0..dim {
                        let nc = facet.normal.dot(&unit(c)) * sign;
                        for m in 0..space.n_mono {
                            row[space.index(side, c, m)] += nc * vals[m];
                        }
                    }
                }
                rows.push(row);
            }
        }

        let cell = &mesh.cells[space.cell];
        let groups = split.facets_by_face(cell.faces.len());
        let n_face_poly = poly_space_dim(dim - 1, space.k + 1);
        for (lf, facet_ids) in groups.iter().enumerate() {
            if facet_ids.len() < 2 {
                continue;
            }
            let normal = mesh.faces[cell.faces[lf]].normal * cell.outward[lf];
            let first = split.boundary_facets[facet_ids[0]].simplex;
            let face_coords = split.facet_coords(&split.boundary_facets[facet_ids[0]].verts);
            for &bfi in &facet_ids[1..] {
                let other = split.boundary_facets[bfi].simplex;
                for _ in 0..(n_face_poly + 2) {
                    // any point of the face plane works: traces extend as
                    // polynomials; sample within the first facet
                    let x = random_simplex_point(&mut rng, &face_coords);
                    let mut row = DVector::zeros(space.dsup);
                    for (side, sign) in [(other, 1.0), (first, -1.0)] {
                        let vals = space.simplex_bases[side].eval(&x);
                        for c in 0..dim {
                            for m in 0..space.n_mono {
                                row[space.index(side, c, m)] += sign * normal[c] * vals[m];
                            }
                        }
                    }
                    rows.push(row);
                }
            }
        }

        let n_div = poly_space_dim(dim, space.k);
        for s in 1..split.n_simplices() {
            for _ in 0..(n_div + 2) {
                let x = random_simplex_point(&mut rng, &split.simplex_coords(s));
                let mut row = DVector::zeros(space.dsup);
                for (side, sign) in [(s, 1.0), (0usize, -1.0)] {
                    let basis = &space.simplex_bases[side];
                    for c in 0..dim {
                        let gvals = basis.eval_gradient_axis(&x, c);
                        for m in 0..space.n_mono {
                            row[space.index(side, c, m)] += sign * gvals[m];
                        }
                    }
                }
                rows.push(row);
            }
        }

        let mut c = DMatrix::zeros(rows.len(), space.dsup);
        for (r, row) in rows.iter().enumerate() {
            let n = row.norm();
            for j in 0..space.dsup {
                c[(r, j)] = row[j] / n;
            }
        }
        nullspace_of(&c).0
    }

    #[test]
    fn square_fan_k0_counts_and_rank() {
        let mesh = unit_square();
        let split = split_cell(&mesh, 0).unwrap();
        let c = build_constraints(&mesh, &split, 0).unwrap();
        // 4 internal spokes x dim P_1(e) = 8 rows, 3 divergence rows
        assert_eq!(c.nrows(), 11);
        assert_eq!(c.ncols(), 24);
        let space = build_lambda_space(&mesh, split, 0).unwrap();
        assert_eq!(space.dsup, 24);
        assert_eq!(space.dlam, 24 - space.rank);
        // independent sampled-rank oracle, two different samplings
        assert_eq!(sampled_rank(&mesh, &space, 1), space.rank);
        assert_eq!(sampled_rank(&mesh, &space, 2), space.rank);
    }

    #[test]
    fn constants_satisfy_all_constraints() {
        let mesh = unit_square();
        for k in 0..=2 {
            let split = split_cell(&mesh, 0).unwrap();
            let space = build_lambda_space(&mesh, split, k).unwrap();
            let coeffs = space
                .superspace_coefficients(|_| Vector3::new(0.7, -0.3, 0.0))
                .unwrap();
            let residual = (&space.constraints * &coeffs).norm();
            assert!(residual < 1e-12, "k={k}: {residual}");
            assert!(space.containment_residual(&coeffs) < 1e-12);
        }
    }

    #[test]
    fn gradients_of_cellwide_polynomials_are_members() {
        let mesh = unit_square();
        for k in 0..=2usize {
            let split = split_cell(&mesh, 0).unwrap();
            let space = build_lambda_space(&mesh, split, k).unwrap();
            // p(x,y) = (x + 0.5 y)^(k+2), grad p is one-piece of degree k+1
            let m = (k + 2) as i32;
            let grad = move |x: &Vector3<f64>| {
                let t = x.x + 0.5 * x.y;
                Vector3::new(
                    m as f64 * t.powi(m - 1),
                    0.5 * m as f64 * t.powi(m - 1),
                    0.0,
                )
            };
            let coeffs = space.superspace_coefficients(grad).unwrap();
            let rel = (&space.constraints * &coeffs).norm() / coeffs.norm();
            assert!(rel < 1e-11, "k={k}: {rel}");
            assert!(space.containment_residual(&coeffs) < 1e-10);
        }
    }

    #[test]
    fn vector_monomials_up_to_k_are_contained() {
        let mesh = build_quad_hex_grid(2).unwrap();
        let hex = (0..mesh.n_cells())
            .find(|&ci| mesh.cells[ci].vertices.len() == 6)
            .unwrap();
        for k in 0..=2usize {
            let split = split_cell(&mesh, hex).unwrap();
            let space = build_lambda_space(&mesh, split, k).unwrap();
            let center = mesh.cells[hex].centroid;
            let h = mesh.cells[hex].diameter;
            for mono in crate::basis::multi_indices(2, k) {
                for c in 0..2 {
                    let coeffs = space
                        .superspace_coefficients(|x: &Vector3<f64>| {
                            let xi = (x - center) / h;
                            let val = xi.x.powi(mono[0] as i32) * xi.y.powi(mono[1] as i32);
                            let mut v = Vector3::zeros();
                            v[c] = val;
                            v
                        })
                        .unwrap();
                    assert!(
                        space.containment_residual(&coeffs) < 1e-10,
                        "k={k} mono={mono:?} comp={c}"
                    );
                }
            }
        }
    }

    #[test]
    fn wedge_k1_dimension_and_containment() {
        let mesh = build_wedge_grid(1).unwrap();
        let split = split_cell(&mesh, 0).unwrap();
        let space = build_lambda_space(&mesh, split, 1).unwrap();
        // superspace: 3 tets * 3 comps * dim P_2(3d) = 3*3*10
        assert_eq!(space.dsup, 90);
        assert!(space.dlam >= 3 * poly_space_dim(3, 1));
        assert_eq!(sampled_rank(&mesh, &space, 7), space.rank);
        let coeffs = space
            .superspace_coefficients(|x: &Vector3<f64>| Vector3::new(x.y, x.z, x.x))
            .unwrap();
        assert!(space.containment_residual(&coeffs) < 1e-10);
    }

    #[test]
    fn nullspace_columns_orthonormal() {
        let mesh = unit_square();
        let split = split_cell(&mesh, 0).unwrap();
        let space = build_lambda_space(&mesh, split, 1).unwrap();
        let gram = space.nullspace.transpose() * &space.nullspace;
        let eye = DMatrix::identity(space.dlam, space.dlam);
        assert!((gram - eye).norm() < 1e-12);
    }

    #[test]
    fn rank_is_stable_under_row_permutation() {
        let mesh = build_wedge_grid(1).unwrap();
        let split = split_cell(&mesh, 0).unwrap();
        let c = build_constraints(&mesh, &split, 1).unwrap();
        let (rank, _) = nullspace_of(&c);
        // reverse and interleave the rows
        let mut order: Vec<usize> = (0..c.nrows()).collect();
        order.reverse();
        let mut perm = DMatrix::zeros(c.nrows(), c.ncols());
        for (to, &from) in order.iter().enumerate() {
            for j in 0..c.ncols() {
                perm[(to, j)] = c[(from, j)];
            }
        }
        assert_eq!(nullspace_of(&perm).0, rank);
        let mut odd_even: Vec<usize> = (0..c.nrows()).step_by(2).collect();
        odd_even.extend((1..c.nrows()).step_by(2));
        let mut perm2 = DMatrix::zeros(c.nrows(), c.ncols());
        for (to, &from) in odd_even.iter().enumerate() {
            for j in 0..c.ncols() {
                perm2[(to, j)] = c[(from, j)];
            }
        }
        assert_eq!(nullspace_of(&perm2).0, rank);
    }

    #[test]
    fn sample_check_residuals_are_tiny() {
        let meshes = [
            (unit_square(), 0usize),
            (build_wedge_grid(1).unwrap(), 0),
            (build_wedge_grid(1).unwrap(), 1),
        ];
        for (mesh, k) in meshes {
            let split = split_cell(&mesh, 0).unwrap();
            let space = build_lambda_space(&mesh, split, k).unwrap();
            let res = lambda_sample_check(&mesh, &space, 42).unwrap();
            assert!(res.max() < 1e-9, "k={k}: {res:?}");
        }
    }

    #[test]
    fn constant_member_has_zero_residuals() {
        let mesh = unit_square();
        let split = split_cell(&mesh, 0).unwrap();
        let space = build_lambda_space(&mesh, split, 0).unwrap();
        let coeffs = space
            .superspace_coefficients(|_| Vector3::new(1.0, 2.0, 0.0))
            .unwrap();
        // evaluate the jump of the constant across every internal facet
        for facet in &space.split.internal_facets {
            let coords = space.split.facet_coords(&facet.verts);
            let mid = coords.iter().sum::<Vector3<f64>>() / coords.len() as f64;
            let vl = space.eval_superspace(&coeffs, facet.left, &mid);
            let vr = space.eval_superspace(&coeffs, facet.right, &mid);
            assert_relative_eq!((vl - vr).norm(), 0.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn dlam_identical_across_congruent_cells() {
        let mesh = crate::mesh::build_quad_grid(2).unwrap();
        let mut dims = std::collections::HashMap::new();
        for ci in 0..mesh.n_cells() {
            let split = split_cell(&mesh, ci).unwrap();
            let space = build_lambda_space(&mesh, split, 1).unwrap();
            let interior = mesh.cells[ci]
                .faces
                .iter()
                .all(|&f| !mesh.faces[f].boundary);
            dims.entry(interior).or_insert_with(Vec::new).push(space.dlam);
        }
        let interior_dims = &dims[&true];
        assert!(interior_dims.windows(2).all(|w| w[0] == w[1]));
    }
}
