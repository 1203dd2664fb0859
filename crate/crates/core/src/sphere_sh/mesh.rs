//! Icosphere tessellation used for amplitude constraints, peak extraction,
//! and quadrature oracles.

use std::collections::HashMap;

use super::UnitDirection;
use crate::{Error, Result};

/// Triangulated sphere mesh. Vertex sets are antipodally symmetric (the
/// icosahedron is, and midpoint subdivision preserves the symmetry).
#[derive(Debug, Clone)]
pub struct SphereMesh {
    vertices: Vec<UnitDirection>,
    faces: Vec<[usize; 3]>,
    adjacency: Vec<Vec<usize>>,
}

impl SphereMesh {
    pub fn vertices(&self) -> &[UnitDirection] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn neighbors(&self, vertex: usize) -> &[usize] {
        &self.adjacency[vertex]
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    /// Per-vertex quadrature weights: one third of the spherical area of each
    /// incident triangle. Weights sum to the sphere area `4 pi`.
    pub fn vertex_weights(&self) -> Vec<f64> {
        let mut w = vec![0.0; self.vertices.len()];
        for f in &self.faces {
            let area = spherical_triangle_area(
                &self.vertices[f[0]],
                &self.vertices[f[1]],
                &self.vertices[f[2]],
            );
            let third = area / 3.0;
            for &v in f {
                w[v] += third;
            }
        }
        w
    }
}

/// Spherical excess via the Oosterom-Strackee formula.
fn spherical_triangle_area(a: &UnitDirection, b: &UnitDirection, c: &UnitDirection) -> f64 {
    let bc = b.cross(c);
    let triple = a.x() * bc[0] + a.y() * bc[1] + a.z() * bc[2];
    let denom = 1.0 + a.dot(b) + b.dot(c) + c.dot(a);
    2.0 * triple.abs().atan2(denom)
}

/// Icosahedron subdivided `subdivisions` times (`0..=6`), vertices projected
/// onto the sphere. Vertex count is `10 * 4^s + 2`.
pub fn tessellate_sphere(subdivisions: usize) -> Result<SphereMesh> {
    if subdivisions > 6 {
        return Err(Error::InvalidArgument(format!(
            "subdivision level {subdivisions} out of range 0..=6"
        )));
    }

    let phi = (1.0 + 5.0_f64.sqrt()) / 2.0;
    let raw = [
        [-1.0, phi, 0.0],
        [1.0, phi, 0.0],
        [-1.0, -phi, 0.0],
        [1.0, -phi, 0.0],
        [0.0, -1.0, phi],
        [0.0, 1.0, phi],
        [0.0, -1.0, -phi],
        [0.0, 1.0, -phi],
        [phi, 0.0, -1.0],
        [phi, 0.0, 1.0],
        [-phi, 0.0, -1.0],
        [-phi, 0.0, 1.0],
    ];
    let mut vertices: Vec<UnitDirection> = raw
        .iter()
        .map(|v| UnitDirection::normalize(v[0], v[1], v[2]).expect("icosahedron vertex"))
        .collect();

    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];

    for _ in 0..subdivisions {
        let mut midpoint: HashMap<(usize, usize), usize> = HashMap::new();
        let mut next_faces = Vec::with_capacity(faces.len() * 4);
        for f in &faces {
            let m01 = midpoint_index(f[0], f[1], &mut vertices, &mut midpoint);
            let m12 = midpoint_index(f[1], f[2], &mut vertices, &mut midpoint);
            let m20 = midpoint_index(f[2], f[0], &mut vertices, &mut midpoint);
            next_faces.push([f[0], m01, m20]);
            next_faces.push([f[1], m12, m01]);
            next_faces.push([f[2], m20, m12]);
            next_faces.push([m01, m12, m20]);
        }
        faces = next_faces;
    }

    let mut adjacency = vec![Vec::<usize>::new(); vertices.len()];
    for f in &faces {
        for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
            if !adjacency[a].contains(&b) {
                adjacency[a].push(b);
            }
            if !adjacency[b].contains(&a) {
                adjacency[b].push(a);
            }
        }
    }
    for list in &mut adjacency {
        list.sort_unstable();
    }

    Ok(SphereMesh { vertices, faces, adjacency })
}

fn midpoint_index(
    a: usize,
    b: usize,
    vertices: &mut Vec<UnitDirection>,
    cache: &mut HashMap<(usize, usize), usize>,
) -> usize {
    let key = (a.min(b), a.max(b));
    if let Some(&idx) = cache.get(&key) {
        return idx;
    }
    let va = vertices[a];
    let vb = vertices[b];
    let mid = UnitDirection::normalize(
        va.x() + vb.x(),
        va.y() + vb.y(),
        va.z() + vb.z(),
    )
    .expect("edge midpoint is non-degenerate");
    vertices.push(mid);
    let idx = vertices.len() - 1;
    cache.insert(key, idx);
    idx
}
