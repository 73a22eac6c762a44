//! Legacy (ASCII) VTK export for visual inspection.
//!
//! 2d meshes are written as `POLYDATA` polygons with a zero z coordinate,
//! 3d meshes as an `UNSTRUCTURED_GRID` of `VTK_POLYHEDRON` (type 42) cells.
//! An optional scalar field is attached as `CELL_DATA`.

use super::Mesh;
use std::fmt::Write as _;

/// Renders the mesh (and optionally one scalar per cell) as a legacy VTK
/// ASCII string.
pub fn write_legacy_vtk(mesh: &Mesh, cell_data: Option<(&str, &[f64])>) -> String {
    let mut out = String::new();
    out.push_str("# vtk DataFile Version 3.0\n");
    out.push_str("polywg mesh\n");
    out.push_str("ASCII\n");

    if mesh.dim == 2 {
        out.push_str("DATASET POLYDATA\n");
    } else {
        out.push_str("DATASET UNSTRUCTURED_GRID\n");
    }

    writeln!(out, "POINTS {} double", mesh.vertices.len()).unwrap();
    for v in &mesh.vertices {
        writeln!(out, "{:.17e} {:.17e} {:.17e}", v.x, v.y, v.z).unwrap();
    }

    if mesh.dim == 2 {
        let size: usize = mesh.cells.iter().map(|c| c.vertices.len() + 1).sum();
        writeln!(out, "POLYGONS {} {}", mesh.n_cells(), size).unwrap();
        for cell in &mesh.cells {
            write!(out, "{}", cell.vertices.len()).unwrap();
            for &v in &cell.vertices {
                write!(out, " {v}").unwrap();
            }
            out.push('\n');
        }
    } else {
        // VTK_POLYHEDRON stream: count, nFaces, then (nPts, ids...) per face.
        let mut streams: Vec<Vec<usize>> = Vec::with_capacity(mesh.n_cells());
        for cell in &mesh.cells {
            let mut s = vec![cell.faces.len()];
            for &f in &cell.faces {
                let verts = &mesh.faces[f].vertices;
                s.push(verts.len());
                s.extend_from_slice(verts);
            }
            streams.push(s);
        }
        let size: usize = streams.iter().map(|s| s.len() + 1).sum();
        writeln!(out, "CELLS {} {}", mesh.n_cells(), size).unwrap();
        for s in &streams {
            write!(out, "{}", s.len()).unwrap();
            for v in s {
                write!(out, " {v}").unwrap();
            }
            out.push('\n');
        }
        writeln!(out, "CELL_TYPES {}", mesh.n_cells()).unwrap();
        for _ in 0..mesh.n_cells() {
            out.push_str("42\n");
        }
    }

    if let Some((name, values)) = cell_data {
        assert_eq!(values.len(), mesh.n_cells());
        writeln!(out, "CELL_DATA {}", mesh.n_cells()).unwrap();
        writeln!(out, "SCALARS {name} double 1").unwrap();
        out.push_str("LOOKUP_TABLE default\n");
        for v in values {
            writeln!(out, "{v:.17e}").unwrap();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_quad_grid, build_wedge_grid};

    #[test]
    fn polydata_export_is_well_formed() {
        let mesh = build_quad_grid(1).unwrap();
        let text = write_legacy_vtk(&mesh, Some(("u0", &[1.0, 2.0, 3.0, 4.0])));
        assert!(text.contains("DATASET POLYDATA"));
        assert!(text.contains("POINTS 9 double"));
        assert!(text.contains("POLYGONS 4 20"));
        assert!(text.contains("SCALARS u0 double 1"));
    }

    #[test]
    fn polyhedron_export_counts() {
        let mesh = build_wedge_grid(1).unwrap();
        let text = write_legacy_vtk(&mesh, None);
        assert!(text.contains("DATASET UNSTRUCTURED_GRID"));
        assert!(text.contains("CELLS 2"));
        let type_lines = text.lines().filter(|l| *l == "42").count();
        assert_eq!(type_lines, 2);
    }
}
