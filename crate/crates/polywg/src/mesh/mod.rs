//! Polytopal meshes of the unit square / unit cube.
//!
//! A mesh stores vertices, faces (edges in 2d, planar polygons in 3d) and
//! cells (faces with outward orientation flags). Meshes are immutable after
//! construction and every query is a pure read, so per-cell loops may share
//! a mesh freely across threads.

mod families;
mod split;
mod vtk;

pub use families::{build_quad_grid, build_quad_hex_grid, build_wedge_grid};
pub use split::{split_cell, BoundaryFacet, CellSplit, InternalFacet};
pub use vtk::write_legacy_vtk;

use crate::basis::FaceFrame;
use crate::error::{Error, Result};
use nalgebra::Vector3;
use std::collections::HashMap;

const GEOM_TOL: f64 = 1e-12;

/// An edge (2d) or planar polygonal face (3d).
#[derive(Debug, Clone)]
pub struct Face {
    /// Polygon loop of vertex ids (2 entries in 2d).
    pub vertices: Vec<usize>,
    /// Adjacent cells; boundary faces have exactly one.
    pub cells: [Option<usize>; 2],
    pub boundary: bool,
    pub centroid: Vector3<f64>,
    /// Unit normal in a fixed global orientation (see [`Mesh::outward_normal`]).
    pub normal: Vector3<f64>,
    /// Length in 2d, area in 3d.
    pub measure: f64,
    pub diameter: f64,
}

/// A polygonal (2d) or polyhedral (3d) cell.
#[derive(Debug, Clone)]
pub struct Cell {
    /// 2d: counterclockwise vertex loop. 3d: vertex ids sorted ascending.
    pub vertices: Vec<usize>,
    /// Mesh face ids in cell-local order.
    pub faces: Vec<usize>,
    /// +1 / -1 per local face: sign turning the face normal outward.
    pub outward: Vec<f64>,
    pub measure: f64,
    pub centroid: Vector3<f64>,
    /// Cell diameter h_T (max pairwise vertex distance).
    pub diameter: f64,
}

#[derive(Debug, Clone)]
pub struct Mesh {
    pub dim: usize,
    /// Refinement index of the generating family (>= 1).
    pub level: usize,
    pub vertices: Vec<Vector3<f64>>,
    pub faces: Vec<Face>,
    pub cells: Vec<Cell>,
}

impl Mesh {
    /// Builds a 2d mesh from polygon vertex loops. Loops may be given in
    /// either orientation; they are stored counterclockwise.
    pub fn from_polygons(
        level: usize,
        vertices: Vec<Vector3<f64>>,
        polygons: Vec<Vec<usize>>,
    ) -> Result<Mesh> {
        let mut faces: Vec<Face> = Vec::new();
        let mut face_of: HashMap<(usize, usize), usize> = HashMap::new();
        let mut cells = Vec::with_capacity(polygons.len());

        for (ci, mut loop_ids) in polygons.into_iter().enumerate() {
            if signed_area(&vertices, &loop_ids) < 0.0 {
                loop_ids.reverse();
            }
            let n = loop_ids.len();
            if n < 3 {
                return Err(Error::Geometry {
                    cell: ci,
                    message: format!("polygon with {n} vertices"),
                });
            }
            let mut cell_faces = Vec::with_capacity(n);
            for i in 0..n {
                let a = loop_ids[i];
                let b = loop_ids[(i + 1) % n];
                let key = (a.min(b), a.max(b));
                let fi = *face_of.entry(key).or_insert_with(|| {
                    faces.push(edge_face(&vertices, key.0, key.1));
                    faces.len() - 1
                });
                if let Some(slot) = faces[fi].cells.iter_mut().find(|s| s.is_none()) {
                    *slot = Some(ci);
                } else {
                    return Err(Error::Geometry {
                        cell: ci,
                        message: format!("edge {key:?} adjacent to more than two cells"),
                    });
                }
                cell_faces.push(fi);
            }
            let (measure, centroid) = polygon_measure_centroid(&vertices, &loop_ids);
            let diameter = max_pairwise_distance(&vertices, &loop_ids);
            cells.push(Cell {
                vertices: loop_ids,
                faces: cell_faces,
                outward: Vec::new(),
                measure,
                centroid,
                diameter,
            });
        }

        let mut mesh = Mesh {
            dim: 2,
            level,
            vertices,
            faces,
            cells,
        };
        mesh.finalize()?;
        Ok(mesh)
    }

    /// Builds a 3d mesh from per-cell face loops (arbitrary orientation).
    pub fn from_polyhedra(
        level: usize,
        vertices: Vec<Vector3<f64>>,
        polyhedra: Vec<Vec<Vec<usize>>>,
    ) -> Result<Mesh> {
        let mut faces: Vec<Face> = Vec::new();
        let mut face_of: HashMap<Vec<usize>, usize> = HashMap::new();
        let mut cells = Vec::with_capacity(polyhedra.len());

        for (ci, cell_face_loops) in polyhedra.into_iter().enumerate() {
            let mut cell_faces = Vec::with_capacity(cell_face_loops.len());
            let mut vert_set: Vec<usize> = Vec::new();
            for loop_ids in &cell_face_loops {
                let mut key = loop_ids.clone();
                key.sort_unstable();
                vert_set.extend_from_slice(loop_ids);
                let fi = *face_of.entry(key).or_insert_with(|| {
                    faces.push(polygon_face(&vertices, loop_ids.clone()));
                    faces.len() - 1
                });
                if let Some(slot) = faces[fi].cells.iter_mut().find(|s| s.is_none()) {
                    *slot = Some(ci);
                } else {
                    return Err(Error::Geometry {
                        cell: ci,
                        message: "face adjacent to more than two cells".into(),
                    });
                }
                cell_faces.push(fi);
            }
            vert_set.sort_unstable();
            vert_set.dedup();
            let (measure, centroid) = polyhedron_measure_centroid(&vertices, &faces, &cell_faces);
            let diameter = max_pairwise_distance(&vertices, &vert_set);
            cells.push(Cell {
                vertices: vert_set,
                faces: cell_faces,
                outward: Vec::new(),
                measure,
                centroid,
                diameter,
            });
        }

        let mut mesh = Mesh {
            dim: 3,
            level,
            vertices,
            faces,
            cells,
        };
        mesh.finalize()?;
        Ok(mesh)
    }

    /// Marks boundary faces, assigns outward orientation signs and validates
    /// the construction invariants.
    fn finalize(&mut self) -> Result<()> {
        for face in &mut self.faces {
            face.boundary = face.cells[1].is_none();
        }
        for ci in 0..self.cells.len() {
            let mut outward = Vec::with_capacity(self.cells[ci].faces.len());
            if self.dim == 2 {
                // The stored loop is counterclockwise, so the outward normal
                // of the directed edge a->b is (b-a) rotated by -90 degrees.
                let loop_ids = self.cells[ci].vertices.clone();
                for (li, &fi) in self.cells[ci].faces.iter().enumerate() {
                    let a = loop_ids[li];
                    let face = &self.faces[fi];
                    outward.push(if face.vertices[0] == a { 1.0 } else { -1.0 });
                }
            } else {
                // 3d cells are star-shaped with respect to their centroid.
                for &fi in &self.cells[ci].faces {
                    let face = &self.faces[fi];
                    let s = face.normal.dot(&(face.centroid - self.cells[ci].centroid));
                    if s.abs() <= GEOM_TOL * self.cells[ci].diameter {
                        return Err(Error::Geometry {
                            cell: ci,
                            message: format!("cannot orient face {fi} (centroid on face plane)"),
                        });
                    }
                    outward.push(if s > 0.0 { 1.0 } else { -1.0 });
                }
            }
            self.cells[ci].outward = outward;
        }
        self.validate()
    }

    fn validate(&self) -> Result<()> {
        // Cells are non-degenerate and closed (divergence theorem on constants).
        for (ci, cell) in self.cells.iter().enumerate() {
            if cell.measure <= 0.0 {
                return Err(Error::Geometry {
                    cell: ci,
                    message: "non-positive cell measure".into(),
                });
            }
            let mut flux = Vector3::zeros();
            for (li, &fi) in cell.faces.iter().enumerate() {
                flux += self.faces[fi].normal * (cell.outward[li] * self.faces[fi].measure);
            }
            if flux.norm() > 1e-12 * cell.diameter.powi(self.dim as i32 - 1) * 16.0 {
                return Err(Error::Geometry {
                    cell: ci,
                    message: format!("cell not closed, surface flux {:.3e}", flux.norm()),
                });
            }
        }
        // Every boundary face lies on the boundary of the unit domain
        // (only meaningful when the mesh fills it), and 3d faces are planar.
        let fills_unit_domain = (self.total_measure() - 1.0).abs() < 1e-9;
        for (fi, face) in self.faces.iter().enumerate() {
            if face.boundary && fills_unit_domain {
                // The whole face must lie on one side of the unit domain.
                let on_boundary = (0..self.dim).any(|c| {
                    [0.0, 1.0].iter().any(|&b| {
                        face.vertices
                            .iter()
                            .all(|&v| (self.vertices[v][c] - b).abs() < 1e-12)
                    })
                });
                if !on_boundary {
                    return Err(Error::internal(format!(
                        "boundary face {fi} not on the domain boundary"
                    )));
                }
            }
            if self.dim == 3 {
                let h = self
                    .cells[face.cells[0].unwrap()]
                    .diameter;
                for &v in &face.vertices {
                    let d = (self.vertices[v] - face.centroid).dot(&face.normal).abs();
                    if d > 1e-12 * h {
                        return Err(Error::internal(format!("face {fi} not planar: {d:.3e}")));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn n_faces(&self) -> usize {
        self.faces.len()
    }

    /// Mesh size h = max_T h_T.
    pub fn mesh_size(&self) -> f64 {
        self.cells.iter().map(|c| c.diameter).fold(0.0, f64::max)
    }

    /// Outward unit normal of cell `ci` on its `local`-th face.
    pub fn outward_normal(&self, ci: usize, local: usize) -> Vector3<f64> {
        let cell = &self.cells[ci];
        self.faces[cell.faces[local]].normal * cell.outward[local]
    }

    /// Geometric summary of a cell: (h_T, centroid, per-face outward unit
    /// normals, per-face measures), faces in cell-local order.
    pub fn geometry(&self, ci: usize) -> (f64, Vector3<f64>, Vec<Vector3<f64>>, Vec<f64>) {
        let cell = &self.cells[ci];
        let normals = (0..cell.faces.len())
            .map(|l| self.outward_normal(ci, l))
            .collect();
        let measures = cell.faces.iter().map(|&f| self.faces[f].measure).collect();
        (cell.diameter, cell.centroid, normals, measures)
    }

    /// Canonical in-plane frame of a face, derived from vertex coordinates
    /// ordered by global id (identical for both adjacent cells).
    pub fn face_frame(&self, fi: usize) -> FaceFrame {
        let mut ids = self.faces[fi].vertices.clone();
        ids.sort_unstable();
        let coords: Vec<Vector3<f64>> = ids.iter().map(|&v| self.vertices[v]).collect();
        FaceFrame::from_sorted_vertices(self.dim, &coords)
    }

    /// Triangulation of a face used for integration over it: the edge itself
    /// in 2d, the fan from the lowest-global-id vertex in 3d. Both adjacent
    /// cells obtain the identical triangulation.
    pub fn face_fan(&self, fi: usize) -> Vec<Vec<Vector3<f64>>> {
        let face = &self.faces[fi];
        if self.dim == 2 {
            return vec![face.vertices.iter().map(|&v| self.vertices[v]).collect()];
        }
        let loop_ids = &face.vertices;
        let low = (0..loop_ids.len())
            .min_by_key(|&i| loop_ids[i])
            .unwrap();
        let n = loop_ids.len();
        let mut tris = Vec::with_capacity(n - 2);
        for j in 1..(n - 1) {
            let a = loop_ids[low];
            let b = loop_ids[(low + j) % n];
            let c = loop_ids[(low + j + 1) % n];
            tris.push(vec![
                self.vertices[a],
                self.vertices[b],
                self.vertices[c],
            ]);
        }
        tris
    }

    /// Sum of cell measures; equals the domain measure 1 for the built-in
    /// families.
    pub fn total_measure(&self) -> f64 {
        self.cells.iter().map(|c| c.measure).sum()
    }
}

fn edge_face(vertices: &[Vector3<f64>], a: usize, b: usize) -> Face {
    let pa = vertices[a];
    let pb = vertices[b];
    let t = (pb - pa).normalize();
    Face {
        vertices: vec![a, b],
        cells: [None, None],
        boundary: false,
        centroid: (pa + pb) / 2.0,
        normal: Vector3::new(t.y, -t.x, 0.0),
        measure: (pb - pa).norm(),
        diameter: (pb - pa).norm(),
    }
}

fn polygon_face(vertices: &[Vector3<f64>], loop_ids: Vec<usize>) -> Face {
    let pts: Vec<Vector3<f64>> = loop_ids.iter().map(|&v| vertices[v]).collect();
    // Newell's formula for the plane normal, then area/centroid by fanning.
    let mut normal = Vector3::zeros();
    let n = pts.len();
    for i in 0..n {
        let p = pts[i];
        let q = pts[(i + 1) % n];
        normal += p.cross(&q);
    }
    let normal = normal.normalize();
    let mut area = 0.0;
    let mut centroid = Vector3::zeros();
    for i in 1..(n - 1) {
        let a = 0.5 * (pts[i] - pts[0]).cross(&(pts[i + 1] - pts[0])).norm();
        area += a;
        centroid += (pts[0] + pts[i] + pts[i + 1]) * (a / 3.0);
    }
    centroid /= area;
    let mut diameter: f64 = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            diameter = diameter.max((pts[i] - pts[j]).norm());
        }
    }
    Face {
        vertices: loop_ids,
        cells: [None, None],
        boundary: false,
        centroid,
        normal,
        measure: area,
        diameter,
    }
}

fn signed_area(vertices: &[Vector3<f64>], loop_ids: &[usize]) -> f64 {
    let n = loop_ids.len();
    let mut s = 0.0;
    for i in 0..n {
        let p = vertices[loop_ids[i]];
        let q = vertices[loop_ids[(i + 1) % n]];
        s += p.x * q.y - q.x * p.y;
    }
    0.5 * s
}

fn polygon_measure_centroid(vertices: &[Vector3<f64>], loop_ids: &[usize]) -> (f64, Vector3<f64>) {
    let n = loop_ids.len();
    let mut area = 0.0;
    let mut cx = 0.0;
    let mut cy = 0.0;
    for i in 0..n {
        let p = vertices[loop_ids[i]];
        let q = vertices[loop_ids[(i + 1) % n]];
        let w = p.x * q.y - q.x * p.y;
        area += w;
        cx += (p.x + q.x) * w;
        cy += (p.y + q.y) * w;
    }
    area *= 0.5;
    (area, Vector3::new(cx / (6.0 * area), cy / (6.0 * area), 0.0))
}

/// Volume and centroid via tetrahedra fanned from the vertex average
/// (valid for cells star-shaped with respect to it).
fn polyhedron_measure_centroid(
    vertices: &[Vector3<f64>],
    faces: &[Face],
    cell_faces: &[usize],
) -> (f64, Vector3<f64>) {
    let mut ids: Vec<usize> = cell_faces
        .iter()
        .flat_map(|&f| faces[f].vertices.iter().copied())
        .collect();
    ids.sort_unstable();
    ids.dedup();
    let center = ids.iter().map(|&v| vertices[v]).sum::<Vector3<f64>>() / ids.len() as f64;

    let mut volume = 0.0;
    let mut centroid = Vector3::zeros();
    for &f in cell_faces {
        let loop_ids = &faces[f].vertices;
        let pts: Vec<Vector3<f64>> = loop_ids.iter().map(|&v| vertices[v]).collect();
        for i in 1..(pts.len() - 1) {
            let v = (pts[0] - center)
                .cross(&(pts[i] - center))
                .dot(&(pts[i + 1] - center))
                .abs()
                / 6.0;
            volume += v;
            centroid += (center + pts[0] + pts[i] + pts[i + 1]) * (v / 4.0);
        }
    }
    (volume, centroid / volume)
}

fn max_pairwise_distance(vertices: &[Vector3<f64>], ids: &[usize]) -> f64 {
    let mut d: f64 = 0.0;
    for i in 0..ids.len() {
        for j in (i + 1)..ids.len() {
            d = d.max((vertices[ids[i]] - vertices[ids[j]]).norm());
        }
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    pub(crate) fn unit_square_mesh() -> Mesh {
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

    #[test]
    fn unit_square_geometry() {
        let mesh = unit_square_mesh();
        let (h, c, normals, measures) = mesh.geometry(0);
        assert_relative_eq!(h, std::f64::consts::SQRT_2, epsilon = 1e-14);
        assert_relative_eq!(c.x, 0.5, epsilon = 1e-14);
        assert_relative_eq!(c.y, 0.5, epsilon = 1e-14);
        assert_eq!(normals.len(), 4);
        for m in measures {
            assert_relative_eq!(m, 1.0, epsilon = 1e-14);
        }
        // closed surface: sum of measure * outward normal vanishes
        let mut flux = Vector3::zeros();
        for l in 0..4 {
            flux += mesh.outward_normal(0, l);
        }
        assert!(flux.norm() < 1e-12);
    }

    #[test]
    fn reference_triangle_hypotenuse_normal() {
        let mesh = Mesh::from_polygons(
            1,
            vec![
                Vector3::new(0.0, 0.0, 0.0),
                Vector3::new(1.0, 0.0, 0.0),
                Vector3::new(0.0, 1.0, 0.0),
            ],
            vec![vec![0, 1, 2]],
        )
        .unwrap();
        let local = mesh.cells[0]
            .faces
            .iter()
            .position(|&f| {
                let vs = &mesh.faces[f].vertices;
                vs.contains(&1) && vs.contains(&2)
            })
            .unwrap();
        let n = mesh.outward_normal(0, local);
        let s = 1.0 / std::f64::consts::SQRT_2;
        assert_relative_eq!(n.x, s, epsilon = 1e-14);
        assert_relative_eq!(n.y, s, epsilon = 1e-14);
    }

    #[test]
    fn clockwise_input_is_reoriented() {
        let mesh = Mesh::from_polygons(
            1,
            vec![
                Vector3::new(0.0, 0.0, 0.0),
                Vector3::new(1.0, 0.0, 0.0),
                Vector3::new(1.0, 1.0, 0.0),
                Vector3::new(0.0, 1.0, 0.0),
            ],
            vec![vec![3, 2, 1, 0]],
        )
        .unwrap();
        assert!(mesh.cells[0].measure > 0.0);
        assert_relative_eq!(mesh.cells[0].measure, 1.0, epsilon = 1e-14);
    }
}
