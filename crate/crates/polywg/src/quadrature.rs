//! Quadrature on reference simplices.
//!
//! Segments use Gauss–Legendre points. Triangles and tetrahedra use conical
//! (collapsed Duffy) products of Gauss–Legendre lines, which deliver any
//! requested polynomial exactness degree with strictly positive weights.
//! Reference domains are the unit simplices: `[0,1]`, `{x,y >= 0, x+y <= 1}`
//! and `{x,y,z >= 0, x+y+z <= 1}`.

use crate::error::{Error, Result};
use nalgebra::Vector3;

/// Largest exactness degree the rule factory accepts.
pub const MAX_DEGREE: usize = 24;

/// A quadrature rule on a reference simplex.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    /// Spatial dimension of the reference simplex (1, 2 or 3).
    pub dim: usize,
    /// Guaranteed polynomial exactness degree.
    pub degree: usize,
    /// Points in reference coordinates; unused components are zero.
    pub points: Vec<Vector3<f64>>,
    /// Weights; they sum to the reference simplex measure `1/dim!`.
    pub weights: Vec<f64>,
}

/// Builds a rule exact for all polynomials of total degree `<= degree`.
pub fn simplex_quadrature(dim: usize, degree: usize) -> Result<QuadratureRule> {
    if degree > MAX_DEGREE {
        return Err(Error::config(format!(
            "quadrature degree {degree} exceeds supported maximum {MAX_DEGREE}"
        )));
    }
    let rule = match dim {
        1 => segment_rule(degree),
        2 => triangle_rule(degree),
        3 => tetrahedron_rule(degree),
        _ => {
            return Err(Error::config(format!(
                "unsupported quadrature dimension {dim}"
            )))
        }
    };
    Ok(rule)
}

fn segment_rule(degree: usize) -> QuadratureRule {
    let n = degree / 2 + 1;
    let (x, w) = gauss_legendre_01(n);
    QuadratureRule {
        dim: 1,
        degree,
        points: x.iter().map(|&xi| Vector3::new(xi, 0.0, 0.0)).collect(),
        weights: w,
    }
}

/// Collapsed product on the triangle: x = a, y = b(1-a), Jacobian (1-a).
fn triangle_rule(degree: usize) -> QuadratureRule {
    let na = (degree + 2) / 2 + 1;
    let nb = (degree + 1) / 2 + 1;
    let (xa, wa) = gauss_legendre_01(na);
    let (xb, wb) = gauss_legendre_01(nb);
    let mut points = Vec::with_capacity(na * nb);
    let mut weights = Vec::with_capacity(na * nb);
    for (&a, &wia) in xa.iter().zip(&wa) {
        for (&b, &wib) in xb.iter().zip(&wb) {
            points.push(Vector3::new(a, b * (1.0 - a), 0.0));
            weights.push(wia * wib * (1.0 - a));
        }
    }
    QuadratureRule {
        dim: 2,
        degree,
        points,
        weights,
    }
}

/// Collapsed product on the tetrahedron:
/// x = a, y = b(1-a), z = c(1-a)(1-b), Jacobian (1-a)^2 (1-b).
fn tetrahedron_rule(degree: usize) -> QuadratureRule {
    let na = (degree + 3) / 2 + 1;
    let nb = (degree + 2) / 2 + 1;
    let nc = (degree + 1) / 2 + 1;
    let (xa, wa) = gauss_legendre_01(na);
    let (xb, wb) = gauss_legendre_01(nb);
    let (xc, wc) = gauss_legendre_01(nc);
    let mut points = Vec::with_capacity(na * nb * nc);
    let mut weights = Vec::with_capacity(na * nb * nc);
    for (&a, &wia) in xa.iter().zip(&wa) {
        for (&b, &wib) in xb.iter().zip(&wb) {
            for (&c, &wic) in xc.iter().zip(&wc) {
                points.push(Vector3::new(a, b * (1.0 - a), c * (1.0 - a) * (1.0 - b)));
                weights.push(wia * wib * wic * (1.0 - a) * (1.0 - a) * (1.0 - b));
            }
        }
    }
    QuadratureRule {
        dim: 3,
        degree,
        points,
        weights,
    }
}

/// Gauss–Legendre nodes and weights on `[0,1]` (Newton iteration on P_n).
fn gauss_legendre_01(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Chebyshev-based initial guess on [-1,1].
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = 0.5 * (1.0 - x);
        nodes[n - 1 - i] = 0.5 * (1.0 + x);
        weights[i] = 0.5 * w;
        weights[n - 1 - i] = 0.5 * w;
    }
    (nodes, weights)
}

/// Value and derivative of the Legendre polynomial P_n at `x` on [-1,1].
fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for j in 2..=n {
        let jf = j as f64;
        let p2 = ((2.0 * jf - 1.0) * x * p1 - (jf - 1.0) * p0) / jf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// A reference rule pushed forward to a physical simplex.
#[derive(Debug, Clone)]
pub struct MappedRule {
    pub points: Vec<Vector3<f64>>,
    pub weights: Vec<f64>,
}

/// Affine image of a reference rule on the simplex spanned by `verts`
/// (`rule.dim + 1` vertices, possibly embedded in a higher dimension).
pub fn map_to_simplex(rule: &QuadratureRule, verts: &[Vector3<f64>]) -> MappedRule {
    assert_eq!(verts.len(), rule.dim + 1);
    let jac = simplex_measure_factor(rule.dim, verts);
    let points = rule
        .points
        .iter()
        .map(|xi| {
            let mut x = verts[0];
            for i in 0..rule.dim {
                x += (verts[i + 1] - verts[0]) * xi[i];
            }
            x
        })
        .collect();
    let weights = rule.weights.iter().map(|w| w * jac).collect();
    MappedRule { points, weights }
}

/// |det J| of the affine map from the reference simplex, so that
/// physical weights sum to the simplex measure.
pub fn simplex_measure_factor(sdim: usize, verts: &[Vector3<f64>]) -> f64 {
    match sdim {
        1 => (verts[1] - verts[0]).norm(),
        2 => (verts[1] - verts[0]).cross(&(verts[2] - verts[0])).norm(),
        3 => {
            let a = verts[1] - verts[0];
            let b = verts[2] - verts[0];
            let c = verts[3] - verts[0];
            a.cross(&b).dot(&c).abs()
        }
        _ => panic!("unsupported simplex dimension {sdim}"),
    }
}

/// Measure of the simplex spanned by `verts`.
pub fn simplex_measure(sdim: usize, verts: &[Vector3<f64>]) -> f64 {
    let factorial = [1.0, 1.0, 2.0, 6.0][sdim];
    simplex_measure_factor(sdim, verts) / factorial
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// Analytic monomial integral over the unit reference simplex:
    /// int x^a y^b z^c = a! b! c! / (a+b+c+dim)!.
    fn reference_monomial_integral(dim: usize, e: [u32; 3]) -> f64 {
        fn fact(n: u32) -> f64 {
            (1..=n).map(|k| k as f64).product()
        }
        let total = e[0] + e[1] + e[2] + dim as u32;
        fact(e[0]) * fact(e[1]) * fact(e[2]) / fact(total)
    }

    fn check_exactness(dim: usize, degree: usize) {
        let rule = simplex_quadrature(dim, degree).unwrap();
        for a in 0..=degree as u32 {
            for b in 0..=(degree as u32 - a) {
                let cmax = if dim == 3 { degree as u32 - a - b } else { 0 };
                for c in 0..=cmax {
                    if dim < 2 && b > 0 {
                        continue;
                    }
                    let num: f64 = rule
                        .points
                        .iter()
                        .zip(&rule.weights)
                        .map(|(p, w)| {
                            w * p.x.powi(a as i32) * p.y.powi(b as i32) * p.z.powi(c as i32)
                        })
                        .sum();
                    let exact = reference_monomial_integral(dim, [a, b, c]);
                    assert!(
                        (num - exact).abs() <= 1e-13 * exact.abs().max(1.0),
                        "dim {dim} deg {degree} monomial ({a},{b},{c}): {num} vs {exact}"
                    );
                }
            }
        }
    }

    #[test]
    fn segment_two_point_cubic() {
        // 2-point Gauss integrates x^3 over [0,1] exactly.
        let rule = simplex_quadrature(1, 3).unwrap();
        assert_eq!(rule.points.len(), 2);
        let v: f64 = rule
            .points
            .iter()
            .zip(&rule.weights)
            .map(|(p, w)| w * p.x.powi(3))
            .sum();
        assert_relative_eq!(v, 0.25, epsilon = 1e-15);
    }

    #[test]
    fn triangle_xy() {
        let rule = simplex_quadrature(2, 2).unwrap();
        let v: f64 = rule
            .points
            .iter()
            .zip(&rule.weights)
            .map(|(p, w)| w * p.x * p.y)
            .sum();
        assert_relative_eq!(v, 1.0 / 24.0, epsilon = 1e-15);
    }

    #[test]
    fn tetrahedron_x_squared() {
        let rule = simplex_quadrature(3, 2).unwrap();
        let v: f64 = rule
            .points
            .iter()
            .zip(&rule.weights)
            .map(|(p, w)| w * p.x * p.x)
            .sum();
        assert_relative_eq!(v, 1.0 / 60.0, epsilon = 1e-15);
    }

    #[test]
    fn exactness_all_used_degrees() {
        for dim in 1..=3 {
            for degree in 0..=12 {
                check_exactness(dim, degree);
            }
        }
        // Spot-check the top of the supported range.
        check_exactness(2, 20);
        check_exactness(3, 16);
    }

    #[test]
    fn weights_positive_and_sum_to_measure() {
        for dim in 1..=3 {
            for degree in [0, 1, 5, 11, 20] {
                let rule = simplex_quadrature(dim, degree).unwrap();
                assert!(rule.weights.iter().all(|&w| w > 0.0));
                let sum: f64 = rule.weights.iter().sum();
                let measure = [1.0, 1.0, 0.5, 1.0 / 6.0][dim];
                assert_relative_eq!(sum, measure, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn degree_out_of_range_is_config_error() {
        assert!(simplex_quadrature(2, MAX_DEGREE + 1).is_err());
    }

    #[test]
    fn mapped_rule_integrates_area() {
        // Triangle (0,0),(2,0),(0,1) has area 1.
        let rule = simplex_quadrature(2, 4).unwrap();
        let verts = [
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(2.0, 0.0, 0.0),
            Vector3::new(0.0, 1.0, 0.0),
        ];
        let mapped = map_to_simplex(&rule, &verts);
        let area: f64 = mapped.weights.iter().sum();
        assert_relative_eq!(area, 1.0, epsilon = 1e-14);
        // And x over the same triangle: int_T x = 2/3 * area = ... analytic: 2/3.
        let ix: f64 = mapped
            .points
            .iter()
            .zip(&mapped.weights)
            .map(|(p, w)| w * p.x)
            .sum();
        assert_relative_eq!(ix, 2.0 / 3.0, epsilon = 1e-14);
    }
}
