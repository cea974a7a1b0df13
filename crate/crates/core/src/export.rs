//! Legacy VTK point-data files and eigenvalue tables.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::mesh::FineMesh;
use crate::spectral::{AuxiliarySpaces, Family};

/// ASCII legacy VTK unstructured grid with one scalar array per entry of `fields`.
pub fn vtk_string(mesh: &FineMesh, title: &str, fields: &[(&str, &[f64])]) -> Result<String> {
    let nv = mesh.num_vertices();
    for (name, values) in fields {
        if values.len() != nv {
            return Err(Error::invalid(format!(
                "field {name} has {} values, mesh has {nv} vertices",
                values.len()
            )));
        }
    }
    let mut s = String::new();
    let _ = writeln!(s, "# vtk DataFile Version 3.0\n{title}\nASCII\nDATASET UNSTRUCTURED_GRID");
    let _ = writeln!(s, "POINTS {nv} double");
    for v in &mesh.vertices {
        let _ = writeln!(s, "{:?} {:?} 0", v[0], v[1]);
    }
    let nt = mesh.num_triangles();
    let _ = writeln!(s, "CELLS {nt} {}", 4 * nt);
    for t in &mesh.triangles {
        let _ = writeln!(s, "3 {} {} {}", t[0], t[1], t[2]);
    }
    let _ = writeln!(s, "CELL_TYPES {nt}");
    for _ in 0..nt {
        s.push_str("5\n");
    }
    let _ = writeln!(s, "POINT_DATA {nv}");
    for (name, values) in fields {
        let _ = writeln!(s, "SCALARS {name} double 1\nLOOKUP_TABLE default");
        for v in values.iter() {
            let _ = writeln!(s, "{v:?}");
        }
    }
    Ok(s)
}

/// Splits an interleaved displacement vector into its two components.
pub fn split_displacement(u: &[f64]) -> (Vec<f64>, Vec<f64>) {
    (u.iter().step_by(2).copied().collect(), u.iter().skip(1).step_by(2).copied().collect())
}

/// Writes `u1`, `u2` and `p` for one state.
pub fn write_state_vtk(path: &Path, mesh: &FineMesh, title: &str, u: &[f64], p: &[f64]) -> Result<()> {
    let (u1, u2) = split_displacement(u);
    let s = vtk_string(mesh, title, &[("u1", &u1), ("u2", &u2), ("p", p)])?;
    std::fs::write(path, s)?;
    Ok(())
}

/// `block_index,family,j,eigenvalue` for every retained eigenpair.
pub fn eigenvalue_csv(aux: &AuxiliarySpaces) -> String {
    let mut s = String::from("block_index,family,j,eigenvalue\n");
    for blk in &aux.blocks {
        for fam in [Family::Displacement, Family::Pressure] {
            for (j, ev) in blk.family(fam).eigenvalues.iter().enumerate() {
                let _ = writeln!(s, "{},{},{},{:e}", blk.block, fam.tag(), j, ev);
            }
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vtk_layout() {
        let mesh = FineMesh::new(2).unwrap();
        let p: Vec<f64> = (0..9).map(|v| v as f64).collect();
        let s = vtk_string(&mesh, "t", &[("p", &p)]).unwrap();
        assert!(s.contains("POINTS 9 double"));
        assert!(s.contains("CELLS 8 32"));
        assert!(s.contains("SCALARS p double 1"));
        assert_eq!(s.lines().last().unwrap(), "8.0");
        assert!(vtk_string(&mesh, "t", &[("p", &p[..3])]).is_err());
        let (a, b) = split_displacement(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!((a, b), (vec![1.0, 3.0], vec![2.0, 4.0]));
    }
}
