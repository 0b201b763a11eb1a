use nalgebra::{Matrix3, Rotation3, Vector3};

use super::mesh::{build_icosphere, haversine_unchecked, IcosphereMesh};

/// The 60 rotations of the icosahedral rotation group.
///
/// Built by mapping the frame (vertex 0, its first neighbour) of the seed
/// icosahedron onto every (vertex, neighbour) pair and keeping the proper
/// rotations that map the vertex set onto itself. Every icosphere obtained by
/// subdividing the same seed shares these symmetries.
pub fn icosahedral_rotations() -> Vec<Rotation3<f64>> {
    let ico = build_icosphere(0).expect("level 0 is always valid");
    let v0 = ico.vertex(0);
    let n0 = ico.vertex(ico.neighbors_of(0)[0] as usize);
    let base = orthonormal_frame(&v0, &n0);

    let mut rotations = Vec::with_capacity(60);
    for vi in 0..ico.vertex_count() {
        let v = ico.vertex(vi);
        for &nb in ico.neighbors_of(vi) {
            let frame = orthonormal_frame(&v, &ico.vertex(nb as usize));
            let m = frame * base.transpose();
            let rot = Rotation3::from_matrix_unchecked(m);
            if maps_vertices_onto_themselves(&ico, &rot) {
                rotations.push(rot);
            }
        }
    }
    assert_eq!(rotations.len(), 60, "icosahedral rotation group has order 60");
    rotations
}

fn orthonormal_frame(v: &Vector3<f64>, towards: &Vector3<f64>) -> Matrix3<f64> {
    let t = (towards - v * towards.dot(v)).normalize();
    let b = v.cross(&t);
    Matrix3::from_columns(&[*v, t, b])
}

fn maps_vertices_onto_themselves(mesh: &IcosphereMesh, rot: &Rotation3<f64>) -> bool {
    vertex_permutation(mesh, rot).is_some()
}

/// The vertex permutation induced by `rot`, or `None` if `rot` does not map
/// the vertex set onto itself (within 1e-9 radians). `perm[i]` is the index
/// of the vertex at `rot * v_i`.
pub fn vertex_permutation(mesh: &IcosphereMesh, rot: &Rotation3<f64>) -> Option<Vec<usize>> {
    let n = mesh.vertex_count();
    let mut perm = vec![usize::MAX; n];
    let mut hit = vec![false; n];
    for i in 0..n {
        let target = rot * mesh.vertex(i);
        let mut best = usize::MAX;
        let mut best_dot = f64::NEG_INFINITY;
        for (j, v) in mesh.vertices().iter().enumerate() {
            let d = v.dot(&target);
            if d > best_dot {
                best_dot = d;
                best = j;
            }
        }
        if haversine_unchecked(&mesh.vertex(best), &target) > 1e-9 || hit[best] {
            return None;
        }
        perm[i] = best;
        hit[best] = true;
    }
    Some(perm)
}
