//! The three built-in mesh families on the unit square / cube.
//!
//! All families keep cell shapes fixed under refinement: each level halves
//! every cell of the previous one, so the set of cell shapes (up to
//! translation and the global scale) does not change with the level.

use super::Mesh;
use crate::error::{Error, Result};
use nalgebra::Vector3;

/// Vertical displacement amplitude of interior vertices of the
/// quadrilateral family, as a fraction of the cell size.
pub const QUAD_SIGMA: f64 = 0.1;

fn check_level(level: usize, max: usize, family: &str) -> Result<usize> {
    if level < 1 || level > max {
        return Err(Error::config(format!(
            "{family} level must be in 1..={max}, got {level}"
        )));
    }
    Ok(level)
}

/// Trapezoidal quadrilateral grid: n x n cells, n = 2^level. The vertex at
/// (i/n, j/n) is shifted vertically by (-1)^(i+j) * sigma / n for interior
/// vertices, so every interior cell is the same trapezoid at every level.
pub fn build_quad_grid(level: usize) -> Result<Mesh> {
    check_level(level, 10, "quad")?;
    let n = 1usize << level;
    let nf = n as f64;
    let mut vertices = Vec::with_capacity((n + 1) * (n + 1));
    for j in 0..=n {
        for i in 0..=n {
            let mut y = j as f64 / nf;
            if i > 0 && i < n && j > 0 && j < n {
                let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
                y += sign * QUAD_SIGMA / nf;
            }
            vertices.push(Vector3::new(i as f64 / nf, y, 0.0));
        }
    }
    let vid = |i: usize, j: usize| j * (n + 1) + i;
    let mut polygons = Vec::with_capacity(n * n);
    for j in 0..n {
        for i in 0..n {
            polygons.push(vec![
                vid(i, j),
                vid(i + 1, j),
                vid(i + 1, j + 1),
                vid(i, j + 1),
            ]);
        }
    }
    Mesh::from_polygons(level, vertices, polygons)
}

/// Brick grid with hanging midpoints: n x n square bricks, n = 2^level.
/// Horizontal interior edges away from the boundary columns carry a hanging
/// midpoint vertex, so interior bricks are combinatorial hexagons (4 corners
/// plus midpoints of the top and bottom edges), bricks in the top/bottom
/// rows are pentagons and the remaining boundary bricks quadrilaterals.
/// Boundary unknowns live on each sub-edge.
pub fn build_quad_hex_grid(level: usize) -> Result<Mesh> {
    check_level(level, 10, "quadhex")?;
    let n = 1usize << level;
    let nf = n as f64;
    let mut vertices = Vec::with_capacity((n + 1) * (n + 1) + n * n);
    for j in 0..=n {
        for i in 0..=n {
            vertices.push(Vector3::new(i as f64 / nf, j as f64 / nf, 0.0));
        }
    }
    let vid = |i: usize, j: usize| j * (n + 1) + i;
    // midpoint of the horizontal edge (i,j)-(i+1,j), when present
    let has_mid = |i: usize, j: usize| n > 2 && i >= 1 && i + 2 <= n && j >= 1 && j < n;
    let mut mid = std::collections::HashMap::new();
    for j in 1..n {
        for i in 0..n {
            if has_mid(i, j) {
                vertices.push(Vector3::new((i as f64 + 0.5) / nf, j as f64 / nf, 0.0));
                mid.insert((i, j), vertices.len() - 1);
            }
        }
    }
    let mut polygons = Vec::with_capacity(n * n);
    for j in 0..n {
        for i in 0..n {
            let mut poly = vec![vid(i, j)];
            if let Some(&m) = mid.get(&(i, j)) {
                poly.push(m);
            }
            poly.push(vid(i + 1, j));
            poly.push(vid(i + 1, j + 1));
            if let Some(&m) = mid.get(&(i, j + 1)) {
                poly.push(m);
            }
            poly.push(vid(i, j + 1));
            polygons.push(poly);
        }
    }
    Mesh::from_polygons(level, vertices, polygons)
}

/// Uniform wedge grid of the unit cube: n^3 subcubes, n = 2^(level-1), each
/// cut by the fixed diagonal plane through x = y into two wedges (triangular
/// prisms with 2 triangular and 3 rectangular faces).
pub fn build_wedge_grid(level: usize) -> Result<Mesh> {
    check_level(level, 7, "wedge")?;
    let n = 1usize << (level - 1);
    let nf = n as f64;
    let mut vertices = Vec::with_capacity((n + 1).pow(3));
    for l in 0..=n {
        for j in 0..=n {
            for i in 0..=n {
                vertices.push(Vector3::new(
                    i as f64 / nf,
                    j as f64 / nf,
                    l as f64 / nf,
                ));
            }
        }
    }
    let vid = |i: usize, j: usize, l: usize| (l * (n + 1) + j) * (n + 1) + i;
    let mut polyhedra = Vec::with_capacity(2 * n * n * n);
    for l in 0..n {
        for j in 0..n {
            for i in 0..n {
                // corners of the subcube, bottom then top
                let c = |di: usize, dj: usize, dl: usize| vid(i + di, j + dj, l + dl);
                // wedge on the y <= x side of the diagonal
                polyhedra.push(vec![
                    vec![c(0, 0, 0), c(1, 0, 0), c(1, 1, 0)],
                    vec![c(0, 0, 1), c(1, 0, 1), c(1, 1, 1)],
                    vec![c(0, 0, 0), c(1, 0, 0), c(1, 0, 1), c(0, 0, 1)],
                    vec![c(1, 0, 0), c(1, 1, 0), c(1, 1, 1), c(1, 0, 1)],
                    vec![c(0, 0, 0), c(1, 1, 0), c(1, 1, 1), c(0, 0, 1)],
                ]);
                // wedge on the y >= x side
                polyhedra.push(vec![
                    vec![c(0, 0, 0), c(1, 1, 0), c(0, 1, 0)],
                    vec![c(0, 0, 1), c(1, 1, 1), c(0, 1, 1)],
                    vec![c(0, 1, 0), c(1, 1, 0), c(1, 1, 1), c(0, 1, 1)],
                    vec![c(0, 0, 0), c(0, 1, 0), c(0, 1, 1), c(0, 0, 1)],
                    vec![c(0, 0, 0), c(1, 1, 0), c(1, 1, 1), c(0, 0, 1)],
                ]);
            }
        }
    }
    Mesh::from_polyhedra(level, vertices, polyhedra)
}
