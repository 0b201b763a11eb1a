use std::collections::HashMap;
use std::io::Write;

use nalgebra::Vector3;

use crate::error::{Error, Result};

/// Largest supported subdivision level. Level 7 already has 163 842 vertices;
/// anything beyond that is almost certainly a caller bug.
pub const MAX_SUBDIVISIONS: u32 = 7;

/// Triangulated unit sphere obtained by midpoint subdivision of a regular
/// icosahedron, with every new vertex reprojected onto the sphere.
///
/// The seed icosahedron uses the golden-ratio vertex set
/// `(±1, ±φ, 0), (0, ±1, ±φ), (±φ, 0, ±1)` (normalised), in that order, so
/// vertex indices are stable across runs and platforms. Subdivision visits
/// faces in order and appends edge midpoints as they are first encountered,
/// which keeps the whole vertex ordering deterministic.
#[derive(Debug, Clone)]
pub struct IcosphereMesh {
    vertices: Vec<Vector3<f64>>,
    faces: Vec<[u32; 3]>,
    /// CSR layout: neighbours of vertex `i` are
    /// `neighbors[neighbor_offsets[i]..neighbor_offsets[i + 1]]`, sorted
    /// ascending by vertex index.
    neighbor_offsets: Vec<u32>,
    neighbors: Vec<u32>,
    subdivisions: u32,
}

const PHI: f64 = 1.618_033_988_749_894_8;

fn seed_vertices() -> Vec<Vector3<f64>> {
    let raw: [[f64; 3]; 12] = [
        [-1.0, PHI, 0.0],
        [1.0, PHI, 0.0],
        [-1.0, -PHI, 0.0],
        [1.0, -PHI, 0.0],
        [0.0, -1.0, PHI],
        [0.0, 1.0, PHI],
        [0.0, -1.0, -PHI],
        [0.0, 1.0, -PHI],
        [PHI, 0.0, -1.0],
        [PHI, 0.0, 1.0],
        [-PHI, 0.0, -1.0],
        [-PHI, 0.0, 1.0],
    ];
    raw.iter()
        .map(|v| Vector3::new(v[0], v[1], v[2]).normalize())
        .collect()
}

fn seed_faces() -> Vec<[u32; 3]> {
    vec![
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
    ]
}

/// Build an icosphere with `10·4^s + 2` vertices.
pub fn build_icosphere(subdivisions: u32) -> Result<IcosphereMesh> {
    if subdivisions > MAX_SUBDIVISIONS {
        return Err(Error::invalid(format!(
            "subdivision level {subdivisions} exceeds the maximum of {MAX_SUBDIVISIONS}"
        )));
    }

    let mut vertices = seed_vertices();
    let mut faces = seed_faces();

    for _ in 0..subdivisions {
        let mut midpoint_cache: HashMap<(u32, u32), u32> = HashMap::new();
        let mut midpoint = |a: u32, b: u32, vertices: &mut Vec<Vector3<f64>>| -> u32 {
            let key = (a.min(b), a.max(b));
            *midpoint_cache.entry(key).or_insert_with(|| {
                let m = (vertices[a as usize] + vertices[b as usize]).normalize();
                vertices.push(m);
                (vertices.len() - 1) as u32
            })
        };

        let mut next_faces = Vec::with_capacity(faces.len() * 4);
        for [a, b, c] in faces {
            let ab = midpoint(a, b, &mut vertices);
            let bc = midpoint(b, c, &mut vertices);
            let ca = midpoint(c, a, &mut vertices);
            next_faces.push([a, ab, ca]);
            next_faces.push([b, bc, ab]);
            next_faces.push([c, ca, bc]);
            next_faces.push([ab, bc, ca]);
        }
        faces = next_faces;
    }

    let n = vertices.len();
    let mut adjacency: Vec<Vec<u32>> = vec![Vec::with_capacity(6); n];
    let push_edge = |i: u32, j: u32, adjacency: &mut Vec<Vec<u32>>| {
        if !adjacency[i as usize].contains(&j) {
            adjacency[i as usize].push(j);
        }
    };
    for &[a, b, c] in &faces {
        for (i, j) in [(a, b), (b, a), (b, c), (c, b), (c, a), (a, c)] {
            push_edge(i, j, &mut adjacency);
        }
    }
    let mut neighbor_offsets = Vec::with_capacity(n + 1);
    let mut neighbors = Vec::new();
    neighbor_offsets.push(0u32);
    for list in &mut adjacency {
        list.sort_unstable();
        neighbors.extend_from_slice(list);
        neighbor_offsets.push(neighbors.len() as u32);
    }

    Ok(IcosphereMesh {
        vertices,
        faces,
        neighbor_offsets,
        neighbors,
        subdivisions,
    })
}

impl IcosphereMesh {
    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn vertices(&self) -> &[Vector3<f64>] {
        &self.vertices
    }

    pub fn vertex(&self, i: usize) -> Vector3<f64> {
        self.vertices[i]
    }

    pub fn faces(&self) -> &[[u32; 3]] {
        &self.faces
    }

    pub fn subdivisions(&self) -> u32 {
        self.subdivisions
    }

    pub fn neighbors_of(&self, i: usize) -> &[u32] {
        let lo = self.neighbor_offsets[i] as usize;
        let hi = self.neighbor_offsets[i + 1] as usize;
        &self.neighbors[lo..hi]
    }

    /// Number of directed edges (twice the undirected edge count).
    pub fn directed_edge_count(&self) -> usize {
        self.neighbors.len()
    }

    /// Flat index of the directed edge from `neighbors_of(i)[k]` into `i`.
    pub fn edge_id(&self, i: usize, k: usize) -> usize {
        self.neighbor_offsets[i] as usize + k
    }

    /// Index of the vertex minimising the great-circle distance to
    /// `direction`; ties broken by lowest index. Equivalent to minimising the
    /// haversine distance because arc length is strictly monotone in the dot
    /// product for unit vectors.
    pub fn nearest_vertex(&self, direction: &Vector3<f64>) -> Result<usize> {
        check_unit(direction, "direction")?;
        let mut best = 0usize;
        let mut best_dot = f64::NEG_INFINITY;
        for (i, v) in self.vertices.iter().enumerate() {
            let d = v.dot(direction);
            if d > best_dot {
                best_dot = d;
                best = i;
            }
        }
        Ok(best)
    }

    /// Write the mesh as ASCII OBJ (positions and 1-based face indices).
    pub fn write_obj<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for v in &self.vertices {
            writeln!(out, "v {} {} {}", v.x, v.y, v.z)?;
        }
        for f in &self.faces {
            writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1)?;
        }
        Ok(())
    }
}

pub(crate) fn check_unit(v: &Vector3<f64>, name: &str) -> Result<()> {
    if (v.norm() - 1.0).abs() > 1e-6 {
        return Err(Error::invalid(format!(
            "{name} must be unit-norm (got |v| = {})",
            v.norm()
        )));
    }
    Ok(())
}

/// Great-circle distance between unit vectors, in radians.
///
/// Uses `atan2(|u×v|, u·v)`, which stays accurate near 0 and π where
/// `acos(u·v)` loses digits.
pub fn haversine(u: &Vector3<f64>, v: &Vector3<f64>) -> Result<f64> {
    check_unit(u, "u")?;
    check_unit(v, "v")?;
    Ok(haversine_unchecked(u, v))
}

pub(crate) fn haversine_unchecked(u: &Vector3<f64>, v: &Vector3<f64>) -> f64 {
    u.cross(v).norm().atan2(u.dot(v))
}
