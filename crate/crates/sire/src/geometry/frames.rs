use std::f64::consts::TAU;

use nalgebra::{Rotation3, Unit, Vector3};

use super::mesh::IcosphereMesh;

/// Per-vertex orthonormal tangent frames plus per-directed-edge polar angles
/// and parallel-transport angles.
///
/// Conventions, used everywhere in the crate:
/// - the frame `(e1, e2)` at vertex `i` satisfies `e1 × e2 = v_i` (outward
///   normal), so angles measured in `(e1, e2)` act counter-clockwise when the
///   sphere is viewed from outside;
/// - the gauge (reference neighbour) fixes `e1` along the tangent-plane
///   projection of `v_ref − v_i`, hence the polar angle of the reference
///   neighbour is 0;
/// - `transport[e]` for the directed edge `j → i` is the angle by which the
///   coordinates of a tangent vector rotate when it is parallel-transported
///   from `j` to `i` along the connecting great circle: a vector at polar
///   angle `ψ` in frame `j` arrives at `ψ + transport` in frame `i`.
#[derive(Debug, Clone)]
pub struct TangentFrameAtlas {
    e1: Vec<Vector3<f64>>,
    e2: Vec<Vector3<f64>>,
    reference_neighbor: Vec<u32>,
    /// Polar angle of each neighbour in the tangent plane of the edge target,
    /// indexed by `IcosphereMesh::edge_id`. In `[0, 2π)`.
    theta: Vec<f64>,
    /// Transport angle for each directed edge `j → i` (same indexing).
    transport: Vec<f64>,
}

/// Build the atlas with the default gauge: the lowest-index neighbour.
pub fn compute_frames(mesh: &IcosphereMesh) -> TangentFrameAtlas {
    // Neighbour lists are sorted, so slot 0 is the lowest index.
    let gauge = vec![0usize; mesh.vertex_count()];
    compute_frames_with_gauge(mesh, &gauge)
}

/// Build the atlas with an arbitrary gauge. `gauge[i]` selects the reference
/// neighbour as a slot into `mesh.neighbors_of(i)`. Scalar network outputs
/// must not depend on this choice; tests re-gauge through this entry point.
pub fn compute_frames_with_gauge(mesh: &IcosphereMesh, gauge: &[usize]) -> TangentFrameAtlas {
    let n = mesh.vertex_count();
    assert_eq!(gauge.len(), n, "one gauge slot per vertex");

    let mut e1 = Vec::with_capacity(n);
    let mut e2 = Vec::with_capacity(n);
    let mut reference_neighbor = Vec::with_capacity(n);
    for i in 0..n {
        let v = mesh.vertex(i);
        let nbrs = mesh.neighbors_of(i);
        let r = nbrs[gauge[i]];
        reference_neighbor.push(r);
        let towards = mesh.vertex(r as usize) - v;
        let planar = towards - v * towards.dot(&v);
        let norm = planar.norm();
        // On an icosphere a neighbour is never (anti)parallel to the vertex
        // normal; a degenerate projection means corrupt input.
        assert!(
            norm > 1e-9,
            "degenerate tangent projection at vertex {i} (reference {r})"
        );
        let b1 = planar / norm;
        let b2 = v.cross(&b1);
        e1.push(b1);
        e2.push(b2);
    }

    let mut theta = vec![0.0; mesh.directed_edge_count()];
    let mut transport = vec![0.0; mesh.directed_edge_count()];
    for i in 0..n {
        let v = mesh.vertex(i);
        for (k, &jn) in mesh.neighbors_of(i).iter().enumerate() {
            let j = jn as usize;
            let eid = mesh.edge_id(i, k);
            let towards = mesh.vertex(j) - v;
            let planar = towards - v * towards.dot(&v);
            theta[eid] = wrap_angle(planar.dot(&e2[i]).atan2(planar.dot(&e1[i])));

            // Parallel transport along the great circle from j to i: rotate
            // about the axis j × i by the arc angle, then read the moved
            // basis of frame j in frame i.
            let rot = great_circle_rotation(&mesh.vertex(j), &v);
            let moved = rot * e1[j];
            transport[eid] = wrap_angle(moved.dot(&e2[i]).atan2(moved.dot(&e1[i])));
        }
    }

    TangentFrameAtlas {
        e1,
        e2,
        reference_neighbor,
        theta,
        transport,
    }
}

/// Rotation taking unit vector `from` onto unit vector `to` along their
/// connecting great circle.
pub fn great_circle_rotation(from: &Vector3<f64>, to: &Vector3<f64>) -> Rotation3<f64> {
    let axis = from.cross(to);
    let sin = axis.norm();
    let cos = from.dot(to);
    if sin < 1e-14 {
        // Identical directions; antipodal pairs never occur between mesh
        // neighbours.
        assert!(cos > 0.0, "cannot transport between antipodal directions");
        return Rotation3::identity();
    }
    Rotation3::from_axis_angle(&Unit::new_unchecked(axis / sin), sin.atan2(cos))
}

pub(crate) fn wrap_angle(a: f64) -> f64 {
    let mut w = a % TAU;
    if w < 0.0 {
        w += TAU;
    }
    // -1e-17 % TAU rounds to TAU itself; fold it back.
    if w >= TAU {
        w -= TAU;
    }
    w
}

impl TangentFrameAtlas {
    pub fn e1(&self, i: usize) -> Vector3<f64> {
        self.e1[i]
    }

    pub fn e2(&self, i: usize) -> Vector3<f64> {
        self.e2[i]
    }

    pub fn reference_neighbor(&self, i: usize) -> u32 {
        self.reference_neighbor[i]
    }

    /// Polar angle of neighbour slot `k` of vertex `i`.
    pub fn neighbor_angle(&self, mesh: &IcosphereMesh, i: usize, k: usize) -> f64 {
        self.theta[mesh.edge_id(i, k)]
    }

    /// Transport angle for the directed edge from `neighbors_of(i)[k]` to `i`.
    pub fn transport_angle(&self, mesh: &IcosphereMesh, i: usize, k: usize) -> f64 {
        self.transport[mesh.edge_id(i, k)]
    }

    #[cfg(test)]
    pub(crate) fn theta_raw(&self) -> &[f64] {
        &self.theta
    }

    #[cfg(test)]
    pub(crate) fn transport_raw(&self) -> &[f64] {
        &self.transport
    }

    /// Express a world-space tangent vector at vertex `i` in frame
    /// coordinates.
    pub fn to_frame(&self, i: usize, w: &Vector3<f64>) -> [f64; 2] {
        [w.dot(&self.e1[i]), w.dot(&self.e2[i])]
    }

    /// Convert frame coordinates at vertex `i` back to a world-space vector.
    pub fn from_frame(&self, i: usize, c: [f64; 2]) -> Vector3<f64> {
        self.e1[i] * c[0] + self.e2[i] * c[1]
    }
}
