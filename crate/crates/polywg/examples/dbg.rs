use nalgebra::{DMatrix, DVector, Vector3};
use polywg::basis::{FaceBasis, ScaledMonomialBasis};
use polywg::mesh::Mesh;
use polywg::weak_gradient::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() {
    let mesh = Mesh::from_polygons(
        1,
        vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(1.0, 1.0, 0.0),
            Vector3::new(0.0, 1.0, 0.0),
        ],
        vec![vec![0, 1, 2, 3]],
    )
    .unwrap();
    let k = 0;
    let ops = build_cell_ops(&mesh, 0, k).unwrap();
    let lambda = &ops.lambda;
    let interior_basis =
        ScaledMonomialBasis::new(2, k, mesh.cells[0].centroid, mesh.cells[0].diameter);
    let face_bases: Vec<FaceBasis> = mesh.cells[0]
        .faces
        .iter()
        .map(|&fi| FaceBasis::new(mesh.face_frame(fi), k + 1))
        .collect();
    let moments =
        weak_gradient_moments(&mesh, lambda, &ops.layout, &interior_basis, &face_bases).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut local = DVector::zeros(ops.layout.n_loc);
    for v in local.iter_mut() {
        *v = rng.random_range(-1.0..1.0);
    }
    let r = &moments * &local;
    let nc = lambda.constraints.nrows();
    let n = lambda.dsup + nc;
    let mut kkt = DMatrix::zeros(n, n);
    kkt.view_mut((0, 0), (lambda.dsup, lambda.dsup)).copy_from(&lambda.m_sup);
    kkt.view_mut((lambda.dsup, 0), (nc, lambda.dsup)).copy_from(&lambda.constraints);
    kkt.view_mut((0, lambda.dsup), (lambda.dsup, nc)).copy_from(&lambda.constraints.transpose());
    let mut rhs = DVector::zeros(n);
    rhs.rows_mut(0, lambda.dsup).copy_from(&r);
    let svd = kkt.clone().svd(true, true);
    println!("kkt sv max {:.3e} min {:.3e}", svd.singular_values.max(), svd.singular_values.min());
    let sol = svd.solve(&rhs, 1e-12).unwrap();
    println!("kkt solve residual {:.3e}", (&kkt * &sol - &rhs).norm());
    let g_oracle = sol.rows(0, lambda.dsup).clone_owned();
    let g_ours = &lambda.nullspace * (&ops.kernel.g * &local);
    println!("|g_oracle| {:.3e}  |g_ours| {:.3e}  diff {:.3e}",
        g_oracle.norm(), g_ours.norm(), (&g_oracle - &g_ours).norm());
    println!("C*g_oracle {:.3e}  C*g_ours {:.3e}",
        (&lambda.constraints * &g_oracle).norm(), (&lambda.constraints * &g_ours).norm());
    // M g + C^T lam = r residuals
    let lam = sol.rows(lambda.dsup, nc).clone_owned();
    println!("first-block residual oracle: {:.3e}",
        (&lambda.m_sup * &g_oracle + lambda.constraints.transpose() * &lam - &r).norm());
    // our g: residual against ker-C test space
    let t1 = lambda.nullspace.transpose() * (&lambda.m_sup * &g_ours - &r);
    println!("N^T (M g_ours - r): {:.3e}", t1.norm());
    let t2 = lambda.nullspace.transpose() * (&lambda.m_sup * &g_oracle - &r);
    println!("N^T (M g_oracle - r): {:.3e}", t2.norm());
}
