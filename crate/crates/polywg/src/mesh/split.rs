//! Per-cell simplicial splits.
//!
//! 2d cells are fanned into triangles from their centroid, one triangle per
//! boundary edge. 3d cells are coned from their lowest-global-id vertex onto
//! the face triangulations of [`Mesh::face_fan`]; for a wedge this yields
//! exactly three tetrahedra, with every rectangular face cut into two
//! triangles along the diagonal from its lowest-global-id corner, so shared
//! faces are split identically from both sides.

use super::Mesh;
use crate::error::{Error, Result};
use crate::quadrature::simplex_measure;
use nalgebra::Vector3;
use std::collections::HashMap;

/// A facet shared by exactly two simplices of the split.
#[derive(Debug, Clone)]
pub struct InternalFacet {
    pub left: usize,
    pub right: usize,
    /// Local point ids (2 in 2d, 3 in 3d).
    pub verts: Vec<usize>,
    /// Unit normal oriented from `left` to `right`.
    pub normal: Vector3<f64>,
    pub measure: f64,
}

/// A simplex facet lying on a boundary face of the cell.
#[derive(Debug, Clone)]
pub struct BoundaryFacet {
    pub simplex: usize,
    /// Cell-local index of the mesh face this facet covers (part of).
    pub local_face: usize,
    pub verts: Vec<usize>,
    pub measure: f64,
}

/// Simplicial split of one cell.
#[derive(Debug, Clone)]
pub struct CellSplit {
    pub cell: usize,
    pub dim: usize,
    /// Local point set; the 2d fan appends the cell centroid at the end.
    pub points: Vec<Vector3<f64>>,
    /// dim+1 local point ids per simplex.
    pub simplices: Vec<Vec<usize>>,
    pub internal_facets: Vec<InternalFacet>,
    pub boundary_facets: Vec<BoundaryFacet>,
}

impl CellSplit {
    pub fn n_simplices(&self) -> usize {
        self.simplices.len()
    }

    pub fn simplex_coords(&self, s: usize) -> Vec<Vector3<f64>> {
        self.simplices[s].iter().map(|&p| self.points[p]).collect()
    }

    pub fn facet_coords(&self, verts: &[usize]) -> Vec<Vector3<f64>> {
        verts.iter().map(|&p| self.points[p]).collect()
    }

    pub fn simplex_measure(&self, s: usize) -> f64 {
        simplex_measure(self.dim, &self.simplex_coords(s))
    }

    pub fn simplex_centroid(&self, s: usize) -> Vector3<f64> {
        let coords = self.simplex_coords(s);
        coords.iter().sum::<Vector3<f64>>() / coords.len() as f64
    }

    pub fn simplex_diameter(&self, s: usize) -> f64 {
        let coords = self.simplex_coords(s);
        let mut d: f64 = 0.0;
        for i in 0..coords.len() {
            for j in (i + 1)..coords.len() {
                d = d.max((coords[i] - coords[j]).norm());
            }
        }
        d
    }

    /// Boundary facets grouped by cell-local face, preserving facet order.
    pub fn facets_by_face(&self, n_faces: usize) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); n_faces];
        for (i, bf) in self.boundary_facets.iter().enumerate() {
            groups[bf.local_face].push(i);
        }
        groups
    }
}

/// Splits a cell into simplices. 2d cells must be star-shaped with respect
/// to their centroid.
pub fn split_cell(mesh: &Mesh, ci: usize) -> Result<CellSplit> {
    let split = if mesh.dim == 2 {
        split_polygon(mesh, ci)?
    } else {
        split_polyhedron(mesh, ci)?
    };
    validate_split(mesh, &split)?;
    Ok(split)
}

fn split_polygon(mesh: &Mesh, ci: usize) -> Result<CellSplit> {
    let cell = &mesh.cells[ci];
    let n = cell.vertices.len();
    let mut points: Vec<Vector3<f64>> = cell
        .vertices
        .iter()
        .map(|&v| mesh.vertices[v])
        .collect();
    let center = points.len();
    points.push(cell.centroid);

    let mut simplices = Vec::with_capacity(n);
    for i in 0..n {
        let a = points[i];
        let b = points[(i + 1) % n];
        let c = cell.centroid;
        let area2 = (b - a).cross(&(c - a)).z;
        if area2 <= 1e-12 * cell.diameter * cell.diameter {
            return Err(Error::Geometry {
                cell: ci,
                message: "cell is not star-shaped with respect to its centroid".into(),
            });
        }
        // orientation (v_i, v_{i+1}, centroid) is counterclockwise
        simplices.push(vec![i, (i + 1) % n, center]);
    }

    let mut internal_facets = Vec::with_capacity(n);
    for i in 0..n {
        // spoke from vertex i to the centroid separates simplices i-1 and i
        let left = (i + n - 1) % n;
        let right = i;
        let t = (points[center] - points[i]).normalize();
        let mut normal = Vector3::new(t.y, -t.x, 0.0);
        let left_centroid =
            (points[simplices[left][0]] + points[simplices[left][1]] + points[simplices[left][2]])
                / 3.0;
        let facet_mid = (points[i] + points[center]) / 2.0;
        if normal.dot(&(facet_mid - left_centroid)) < 0.0 {
            normal = -normal;
        }
        internal_facets.push(InternalFacet {
            left,
            right,
            verts: vec![i, center],
            normal,
            measure: (points[center] - points[i]).norm(),
        });
    }

    let mut boundary_facets = Vec::with_capacity(n);
    for i in 0..n {
        let a = cell.vertices[i];
        let b = cell.vertices[(i + 1) % n];
        let local_face = find_local_face(mesh, ci, &[a, b])?;
        boundary_facets.push(BoundaryFacet {
            simplex: i,
            local_face,
            verts: vec![i, (i + 1) % n],
            measure: (points[(i + 1) % n] - points[i]).norm(),
        });
    }

    Ok(CellSplit {
        cell: ci,
        dim: 2,
        points,
        simplices,
        internal_facets,
        boundary_facets,
    })
}

fn split_polyhedron(mesh: &Mesh, ci: usize) -> Result<CellSplit> {
    let cell = &mesh.cells[ci];
    // cell.vertices is sorted, so the apex is the lowest global id
    let apex_global = cell.vertices[0];
    let local_of: HashMap<usize, usize> = cell
        .vertices
        .iter()
        .enumerate()
        .map(|(l, &g)| (g, l))
        .collect();
    let points: Vec<Vector3<f64>> = cell.vertices.iter().map(|&v| mesh.vertices[v]).collect();
    let apex = local_of[&apex_global];

    // Cone from the apex over every face triangle not containing it.
    let mut simplices: Vec<Vec<usize>> = Vec::new();
    let mut face_triangles: Vec<(usize, [usize; 3])> = Vec::new(); // (local_face, global ids)
    for (lf, &fi) in cell.faces.iter().enumerate() {
        for tri in face_fan_ids(mesh, fi) {
            face_triangles.push((lf, tri));
            if !tri.contains(&apex_global) {
                simplices.push(vec![
                    apex,
                    local_of[&tri[0]],
                    local_of[&tri[1]],
                    local_of[&tri[2]],
                ]);
            }
        }
    }

    // Classify tetrahedron facets: shared pairs are internal, singletons
    // must match a face triangle.
    let mut seen: HashMap<[usize; 3], Vec<(usize, [usize; 3])>> = HashMap::new();
    for (si, tet) in simplices.iter().enumerate() {
        for omit in 0..4 {
            let mut tri = [0usize; 3];
            let mut t = 0;
            for (li, &p) in tet.iter().enumerate() {
                if li != omit {
                    tri[t] = p;
                    t += 1;
                }
            }
            let mut key = tri;
            key.sort_unstable();
            seen.entry(key).or_default().push((si, tri));
        }
    }

    let mut internal_facets = Vec::new();
    let mut boundary_facets = Vec::new();
    let mut boundary_tris: HashMap<[usize; 3], usize> = HashMap::new();
    for (lf, tri) in &face_triangles {
        let mut key = [local_of[&tri[0]], local_of[&tri[1]], local_of[&tri[2]]];
        key.sort_unstable();
        boundary_tris.insert(key, *lf);
    }
    for (key, owners) in seen {
        let coords = |v: usize| points[v];
        match owners.len() {
            2 => {
                let (left, tri) = owners[0];
                let right = owners[1].0;
                let a = coords(tri[0]);
                let b = coords(tri[1]);
                let c = coords(tri[2]);
                let mut normal = (b - a).cross(&(c - a)).normalize();
                let left_centroid = simplices[left]
                    .iter()
                    .map(|&p| points[p])
                    .sum::<Vector3<f64>>()
                    / 4.0;
                let facet_centroid = (a + b + c) / 3.0;
                if normal.dot(&(facet_centroid - left_centroid)) < 0.0 {
                    normal = -normal;
                }
                internal_facets.push(InternalFacet {
                    left,
                    right,
                    verts: tri.to_vec(),
                    normal,
                    measure: 0.5 * (b - a).cross(&(c - a)).norm(),
                });
            }
            1 => {
                let (si, tri) = owners[0];
                let Some(&local_face) = boundary_tris.get(&key) else {
                    return Err(Error::Geometry {
                        cell: ci,
                        message: "split facet matches no face triangle".into(),
                    });
                };
                let a = coords(tri[0]);
                let b = coords(tri[1]);
                let c = coords(tri[2]);
                boundary_facets.push(BoundaryFacet {
                    simplex: si,
                    local_face,
                    verts: tri.to_vec(),
                    measure: 0.5 * (b - a).cross(&(c - a)).norm(),
                });
            }
            n => {
                return Err(Error::Geometry {
                    cell: ci,
                    message: format!("split facet shared by {n} simplices"),
                });
            }
        }
    }
    // deterministic ordering regardless of hash-map iteration
    internal_facets.sort_by_key(|f| {
        let mut v = f.verts.clone();
        v.sort_unstable();
        (f.left, f.right, v)
    });
    boundary_facets.sort_by_key(|f| {
        let mut v = f.verts.clone();
        v.sort_unstable();
        (f.local_face, f.simplex, v)
    });

    Ok(CellSplit {
        cell: ci,
        dim: 3,
        points,
        simplices,
        internal_facets,
        boundary_facets,
    })
}

/// Face-fan triangles as global vertex id triples (3d).
fn face_fan_ids(mesh: &Mesh, fi: usize) -> Vec<[usize; 3]> {
    let loop_ids = &mesh.faces[fi].vertices;
    let n = loop_ids.len();
    let low = (0..n).min_by_key(|&i| loop_ids[i]).unwrap();
    (1..(n - 1))
        .map(|j| {
            [
                loop_ids[low],
                loop_ids[(low + j) % n],
                loop_ids[(low + j + 1) % n],
            ]
        })
        .collect()
}

fn find_local_face(mesh: &Mesh, ci: usize, verts: &[usize]) -> Result<usize> {
    let mut want = verts.to_vec();
    want.sort_unstable();
    mesh.cells[ci]
        .faces
        .iter()
        .position(|&f| {
            let mut have = mesh.faces[f].vertices.clone();
            have.sort_unstable();
            have == want
        })
        .ok_or_else(|| Error::Geometry {
            cell: ci,
            message: format!("no cell face with vertices {want:?}"),
        })
}

fn validate_split(mesh: &Mesh, split: &CellSplit) -> Result<()> {
    let cell = &mesh.cells[split.cell];
    let total: f64 = (0..split.n_simplices())
        .map(|s| split.simplex_measure(s))
        .sum();
    if (total - cell.measure).abs() > 1e-12 * cell.measure.max(1e-300) * 8.0 {
        return Err(Error::Geometry {
            cell: split.cell,
            message: format!(
                "split measure {total} does not match cell measure {}",
                cell.measure
            ),
        });
    }
    // Each boundary face is exactly covered by whole simplex facets.
    let groups = split.facets_by_face(cell.faces.len());
    for (lf, facet_ids) in groups.iter().enumerate() {
        let face = &mesh.faces[cell.faces[lf]];
        let covered: f64 = facet_ids
            .iter()
            .map(|&i| split.boundary_facets[i].measure)
            .sum();
        if (covered - face.measure).abs() > 1e-12 * face.measure * 8.0 {
            return Err(Error::Geometry {
                cell: split.cell,
                message: format!("face {lf} covered measure {covered} != {}", face.measure),
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_quad_grid, build_quad_hex_grid, build_wedge_grid};
    use approx::assert_relative_eq;
    use nalgebra::Vector3;

    #[test]
    fn unit_square_fan() {
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
        let split = split_cell(&mesh, 0).unwrap();
        assert_eq!(split.n_simplices(), 4);
        for s in 0..4 {
            assert_relative_eq!(split.simplex_measure(s), 0.25, epsilon = 1e-14);
        }
        assert_eq!(split.internal_facets.len(), 4);
        assert_eq!(split.boundary_facets.len(), 4);
    }

    #[test]
    fn hexagon_cell_fans_into_six() {
        let mesh = build_quad_hex_grid(2).unwrap();
        let hex = (0..mesh.n_cells())
            .find(|&ci| mesh.cells[ci].vertices.len() == 6)
            .unwrap();
        let split = split_cell(&mesh, hex).unwrap();
        assert_eq!(split.n_simplices(), 6);
    }

    #[test]
    fn wedge_splits_into_three_tets() {
        let mesh = build_wedge_grid(1).unwrap();
        for ci in 0..mesh.n_cells() {
            let split = split_cell(&mesh, ci).unwrap();
            assert_eq!(split.n_simplices(), 3, "cell {ci}");
            let total: f64 = (0..3).map(|s| split.simplex_measure(s)).sum();
            assert_relative_eq!(total, mesh.cells[ci].measure, epsilon = 1e-12);
            // a prism split without interior edges has exactly 2 internal facets
            assert_eq!(split.internal_facets.len(), 2);
            // 2 whole triangular faces + 3 rectangles cut in two
            assert_eq!(split.boundary_facets.len(), 8);
        }
    }

    #[test]
    fn shared_wedge_faces_split_identically() {
        let mesh = build_wedge_grid(2).unwrap();
        // every interior face's triangulation is derived from the face alone
        for fi in 0..mesh.n_faces() {
            if mesh.faces[fi].boundary {
                continue;
            }
            let tris = face_fan_ids(&mesh, fi);
            assert_eq!(tris.len(), mesh.faces[fi].vertices.len() - 2);
            // lowest-global-id vertex starts every triangle
            let low = *mesh.faces[fi].vertices.iter().min().unwrap();
            for t in &tris {
                assert_eq!(t[0], low);
            }
        }
    }

    #[test]
    fn internal_facets_oriented_between_their_simplices() {
        let mesh = build_quad_grid(1).unwrap();
        for ci in 0..mesh.n_cells() {
            let split = split_cell(&mesh, ci).unwrap();
            for f in &split.internal_facets {
                let centroid = |s: usize| -> Vector3<f64> {
                    split.simplex_coords(s).iter().sum::<Vector3<f64>>()
                        / (split.dim + 1) as f64
                };
                let mid = split
                    .facet_coords(&f.verts)
                    .iter()
                    .sum::<Vector3<f64>>()
                    / f.verts.len() as f64;
                assert!(f.normal.dot(&(mid - centroid(f.left))) > 0.0);
                assert!(f.normal.dot(&(mid - centroid(f.right))) < 0.0);
            }
        }
    }

    #[test]
    fn non_star_shaped_cell_is_rejected() {
        // a "pac-man" style polygon whose centroid cannot see every edge
        let mesh = Mesh::from_polygons(
            1,
            vec![
                Vector3::new(0.0, 0.0, 0.0),
                Vector3::new(1.0, 0.0, 0.0),
                Vector3::new(1.0, 0.05, 0.0),
                Vector3::new(0.05, 0.05, 0.0),
                Vector3::new(0.05, 1.0, 0.0),
                Vector3::new(0.0, 1.0, 0.0),
            ],
            vec![vec![0, 1, 2, 3, 4, 5]],
        )
        .unwrap();
        let err = split_cell(&mesh, 0).unwrap_err();
        assert!(matches!(err, Error::Geometry { cell: 0, .. }));
    }
}
