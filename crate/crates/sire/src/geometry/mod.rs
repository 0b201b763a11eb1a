//! The discrete spherical domain: icosphere meshes, per-vertex tangent
//! frames with a fixed gauge, neighbour polar angles and parallel-transport
//! angles. Meshes and atlases are immutable after construction and safe to
//! share across threads.

mod frames;
mod mesh;
mod symmetry;

pub use frames::{compute_frames, compute_frames_with_gauge, great_circle_rotation, TangentFrameAtlas};
pub use mesh::{build_icosphere, haversine, IcosphereMesh, MAX_SUBDIVISIONS};
pub use symmetry::{icosahedral_rotations, vertex_permutation};

pub(crate) use mesh::{check_unit, haversine_unchecked};

#[cfg(test)]
mod tests {
    use std::collections::HashSet;

    use super::frames::wrap_angle;
    use std::f64::consts::{PI, TAU};

    use nalgebra::Vector3;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    use super::*;

    fn random_unit(rng: &mut impl Rng) -> Vector3<f64> {
        loop {
            let v = Vector3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            let n = v.norm();
            if n > 1e-3 && n <= 1.0 {
                return v / n;
            }
        }
    }

    #[test]
    fn icosahedron_has_12_vertices_20_faces() {
        let mesh = build_icosphere(0).unwrap();
        assert_eq!(mesh.vertex_count(), 12);
        assert_eq!(mesh.faces().len(), 20);
    }

    #[test]
    fn subdiv_3_has_642_vertices() {
        let mesh = build_icosphere(3).unwrap();
        assert_eq!(mesh.vertex_count(), 642);
    }

    #[test]
    fn subdiv_1_counts_match_closed_forms() {
        // V = 10·4^s + 2, F = 20·4^s, directed E = 2·30·4^s.
        let mesh = build_icosphere(1).unwrap();
        assert_eq!(mesh.vertex_count(), 42);
        assert_eq!(mesh.faces().len(), 80);
        assert_eq!(mesh.directed_edge_count(), 240);
    }

    #[test]
    fn mesh_invariants_hold_at_all_desk_levels() {
        for s in 0..=4u32 {
            let mesh = build_icosphere(s).unwrap();
            let n = mesh.vertex_count();
            assert_eq!(n, 10 * 4usize.pow(s) + 2);

            for v in mesh.vertices() {
                assert!((v.norm() - 1.0).abs() < 1e-12);
            }

            let degree_5 = (0..n).filter(|&i| mesh.neighbors_of(i).len() == 5).count();
            let degree_6 = (0..n).filter(|&i| mesh.neighbors_of(i).len() == 6).count();
            assert_eq!(degree_5, 12);
            assert_eq!(degree_5 + degree_6, n);

            // Edge symmetry and sortedness.
            for i in 0..n {
                let nbrs = mesh.neighbors_of(i);
                assert!(nbrs.windows(2).all(|w| w[0] < w[1]));
                for &j in nbrs {
                    assert!(mesh.neighbors_of(j as usize).contains(&(i as u32)));
                }
            }

            // Euler characteristic of a closed 2-manifold sphere.
            let e = mesh.directed_edge_count() / 2;
            let f = mesh.faces().len();
            assert_eq!(n as i64 - e as i64 + f as i64, 2);
        }
    }

    #[test]
    fn subdivision_out_of_range_is_rejected() {
        assert!(build_icosphere(MAX_SUBDIVISIONS + 1).is_err());
    }

    #[test]
    fn construction_is_deterministic() {
        let a = build_icosphere(2).unwrap();
        let b = build_icosphere(2).unwrap();
        for (u, v) in a.vertices().iter().zip(b.vertices()) {
            assert_eq!(u, v);
        }
        assert_eq!(a.faces(), b.faces());
    }

    #[test]
    fn haversine_known_values() {
        let x = Vector3::x();
        let y = Vector3::y();
        assert_eq!(haversine(&x, &x).unwrap(), 0.0);
        assert!((haversine(&x, &(-x)).unwrap() - PI).abs() < 1e-15);
        assert!((haversine(&x, &y).unwrap() - PI / 2.0).abs() < 1e-15);
        assert!(haversine(&(x * 2.0), &y).is_err());
    }

    #[test]
    fn haversine_is_a_metric_on_sampled_triples() {
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..200 {
            let (u, v, w) = (
                random_unit(&mut rng),
                random_unit(&mut rng),
                random_unit(&mut rng),
            );
            let duv = haversine(&u, &v).unwrap();
            let dvu = haversine(&v, &u).unwrap();
            assert!((duv - dvu).abs() < 1e-9);
            assert!(haversine(&u, &u).unwrap() < 1e-9);
            let dvw = haversine(&v, &w).unwrap();
            let duw = haversine(&u, &w).unwrap();
            assert!(duw <= duv + dvw + 1e-9);
        }
    }

    #[test]
    fn nearest_vertex_returns_exact_hits_and_face_corners() {
        let mesh = build_icosphere(2).unwrap();
        for k in [0usize, 5, 41, 101] {
            let v = mesh.vertex(k);
            assert_eq!(mesh.nearest_vertex(&v).unwrap(), k);
        }
        for f in mesh.faces().iter().step_by(17) {
            let centroid = (mesh.vertex(f[0] as usize)
                + mesh.vertex(f[1] as usize)
                + mesh.vertex(f[2] as usize))
            .normalize();
            let hit = mesh.nearest_vertex(&centroid).unwrap() as u32;
            assert!(f.contains(&hit));
        }
    }

    #[test]
    fn nearest_vertex_never_exceeds_face_circumradius_bound() {
        let mesh = build_icosphere(3).unwrap();
        // Oracle: the farthest interior point of a spherical triangle from its
        // corners is the circumcentre, so the worst case over the whole sphere
        // is the largest circumradius over all faces.
        let mut bound: f64 = 0.0;
        for f in mesh.faces() {
            let c = (mesh.vertex(f[0] as usize)
                + mesh.vertex(f[1] as usize)
                + mesh.vertex(f[2] as usize))
            .normalize();
            for &k in f {
                bound = bound.max(haversine(&c, &mesh.vertex(k as usize)).unwrap());
            }
        }
        let mut rng = StdRng::seed_from_u64(11);
        for _ in 0..1000 {
            let d = random_unit(&mut rng);
            let k = mesh.nearest_vertex(&d).unwrap();
            assert!(haversine(&d, &mesh.vertex(k)).unwrap() <= bound + 1e-12);
        }
    }

    #[test]
    fn frames_are_orthonormal_with_outward_orientation() {
        let mesh = build_icosphere(2).unwrap();
        let atlas = compute_frames(&mesh);
        for i in 0..mesh.vertex_count() {
            let v = mesh.vertex(i);
            let (e1, e2) = (atlas.e1(i), atlas.e2(i));
            assert!(e1.dot(&v).abs() < 1e-12);
            assert!(e2.dot(&v).abs() < 1e-12);
            assert!(e1.dot(&e2).abs() < 1e-12);
            assert!((e1.norm() - 1.0).abs() < 1e-12);
            assert!((e2.norm() - 1.0).abs() < 1e-12);
            assert!((e1.cross(&e2) - v).norm() < 1e-12);
        }
    }

    #[test]
    fn reference_neighbor_sits_at_angle_zero() {
        let mesh = build_icosphere(1).unwrap();
        let atlas = compute_frames(&mesh);
        for i in 0..mesh.vertex_count() {
            let r = atlas.reference_neighbor(i);
            assert_eq!(r, mesh.neighbors_of(i)[0]);
            let theta = atlas.neighbor_angle(&mesh, i, 0);
            assert!(theta.abs() < 1e-12 || (theta - TAU).abs() < 1e-12);
        }
    }

    #[test]
    fn icosahedron_neighbor_angles_are_equispaced() {
        // Five-fold symmetry at every icosahedron vertex: sorted polar angles
        // step by exactly 2π/5.
        let mesh = build_icosphere(0).unwrap();
        let atlas = compute_frames(&mesh);
        for i in 0..mesh.vertex_count() {
            let mut angles: Vec<f64> = (0..mesh.neighbors_of(i).len())
                .map(|k| atlas.neighbor_angle(&mesh, i, k))
                .collect();
            angles.sort_by(|a, b| a.partial_cmp(b).unwrap());
            assert!(angles[0] < 1e-9);
            for (k, a) in angles.iter().enumerate() {
                assert!((a - k as f64 * TAU / 5.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn transport_round_trip_is_identity() {
        let mesh = build_icosphere(2).unwrap();
        let atlas = compute_frames(&mesh);
        for i in 0..mesh.vertex_count() {
            for (k, &jn) in mesh.neighbors_of(i).iter().enumerate() {
                let j = jn as usize;
                let k_back = mesh
                    .neighbors_of(j)
                    .iter()
                    .position(|&b| b as usize == i)
                    .unwrap();
                let fwd = atlas.transport_angle(&mesh, i, k); // j -> i
                let back = atlas.transport_angle(&mesh, j, k_back); // i -> j
                let sum = wrap_angle(fwd + back);
                assert!(
                    sum < 1e-10 || (TAU - sum) < 1e-10,
                    "round trip must compose to the identity (got {sum})"
                );

                // Transport e1(j) to i and back; it must return unchanged.
                let rot_fwd = great_circle_rotation(&mesh.vertex(j), &mesh.vertex(i));
                let rot_back = great_circle_rotation(&mesh.vertex(i), &mesh.vertex(j));
                let round = rot_back * (rot_fwd * atlas.e1(j));
                assert!((round - atlas.e1(j)).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn transport_matches_geodesic_angle_relation() {
        // Along a great circle, the transported "towards" direction at the
        // start becomes the "away" direction at the end:
        // g_{j→i} = θ_{ij} + π − θ_{ji} (mod 2π).
        let mesh = build_icosphere(2).unwrap();
        let atlas = compute_frames(&mesh);
        for i in 0..mesh.vertex_count() {
            for (k, &jn) in mesh.neighbors_of(i).iter().enumerate() {
                let j = jn as usize;
                let k_back = mesh
                    .neighbors_of(j)
                    .iter()
                    .position(|&b| b as usize == i)
                    .unwrap();
                let theta_ij = atlas.neighbor_angle(&mesh, i, k);
                let theta_ji = atlas.neighbor_angle(&mesh, j, k_back);
                let g = atlas.transport_angle(&mesh, i, k);
                let residual = wrap_angle(g - (theta_ij + PI - theta_ji));
                assert!(residual < 1e-10 || (TAU - residual) < 1e-10);
            }
        }
    }

    #[test]
    fn atlas_rebuild_is_bit_identical() {
        let mesh = build_icosphere(2).unwrap();
        let a = compute_frames(&mesh);
        let b = compute_frames(&mesh);
        assert_eq!(a.theta_raw(), b.theta_raw());
        assert_eq!(a.transport_raw(), b.transport_raw());
    }

    #[test]
    fn sixty_rotations_act_as_vertex_permutations() {
        let rotations = icosahedral_rotations();
        assert_eq!(rotations.len(), 60);
        let mesh = build_icosphere(2).unwrap();
        let mut seen = HashSet::new();
        for rot in &rotations {
            let perm = vertex_permutation(&mesh, rot).expect("symmetry must permute vertices");
            assert!(seen.insert(perm.clone()), "rotations must be distinct");
            // Permutation property.
            let mut sorted = perm.clone();
            sorted.sort_unstable();
            assert!(sorted.iter().enumerate().all(|(a, &b)| a == b));
        }
    }

    #[test]
    fn nearest_vertex_commutes_with_icosahedral_rotations() {
        let mesh = build_icosphere(2).unwrap();
        let rotations = icosahedral_rotations();
        let mut rng = StdRng::seed_from_u64(3);
        for _ in 0..50 {
            let d = random_unit(&mut rng);
            let base = mesh.nearest_vertex(&d).unwrap();
            for rot in rotations.iter().step_by(7) {
                let perm = vertex_permutation(&mesh, rot).unwrap();
                let rotated = mesh.nearest_vertex(&(rot * d)).unwrap();
                assert_eq!(rotated, perm[base]);
            }
        }
    }

    #[test]
    fn obj_export_lists_vertices_and_faces() {
        let mesh = build_icosphere(0).unwrap();
        let mut buf = Vec::new();
        mesh.write_obj(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().filter(|l| l.starts_with("v ")).count(), 12);
        assert_eq!(text.lines().filter(|l| l.starts_with("f ")).count(), 20);
    }
}
