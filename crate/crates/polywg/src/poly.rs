//! Global polynomials with analytic derivatives.
//!
//! Used for manufactured polynomial solutions and for randomized identity
//! probes; gradients and Laplacians are computed by exponent manipulation,
//! never by numerical differentiation.

use crate::basis::multi_indices;
use nalgebra::Vector3;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// A polynomial `sum_alpha c_alpha x^alpha` in global coordinates.
#[derive(Debug, Clone)]
pub struct Polynomial {
    pub dim: usize,
    terms: Vec<([u32; 3], f64)>,
}

impl Polynomial {
    pub fn new(dim: usize, terms: Vec<([u32; 3], f64)>) -> Self {
        Polynomial { dim, terms }
    }

    /// Dense random polynomial of total degree `degree`, coefficients in
    /// [-1, 1].
    pub fn random(dim: usize, degree: usize, rng: &mut ChaCha8Rng) -> Self {
        let terms = multi_indices(dim, degree)
            .into_iter()
            .map(|m| (m, rng.random_range(-1.0..1.0)))
            .collect();
        Polynomial { dim, terms }
    }

    pub fn degree(&self) -> u32 {
        self.terms
            .iter()
            .map(|(m, _)| m[0] + m[1] + m[2])
            .max()
            .unwrap_or(0)
    }

    pub fn eval(&self, x: &Vector3<f64>) -> f64 {
        self.terms
            .iter()
            .map(|(m, c)| {
                c * x.x.powi(m[0] as i32) * x.y.powi(m[1] as i32) * x.z.powi(m[2] as i32)
            })
            .sum()
    }

    pub fn gradient(&self, x: &Vector3<f64>) -> Vector3<f64> {
        let mut g = Vector3::zeros();
        for (m, c) in &self.terms {
            for axis in 0..self.dim {
                if m[axis] == 0 {
                    continue;
                }
                let mut v = c * m[axis] as f64;
                for d in 0..3 {
                    let e = if d == axis { m[d] - 1 } else { m[d] };
                    v *= x[d].powi(e as i32);
                }
                g[axis] += v;
            }
        }
        g
    }

    pub fn laplacian(&self, x: &Vector3<f64>) -> f64 {
        let mut lap = 0.0;
        for (m, c) in &self.terms {
            for axis in 0..self.dim {
                if m[axis] < 2 {
                    continue;
                }
                let mut v = c * (m[axis] * (m[axis] - 1)) as f64;
                for d in 0..3 {
                    let e = if d == axis { m[d] - 2 } else { m[d] };
                    v *= x[d].powi(e as i32);
                }
                lap += v;
            }
        }
        lap
    }
}
