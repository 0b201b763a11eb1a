//! Ready-made phantom corpora for training and validation.

use nalgebra::{Point3, Rotation3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;

use crate::error::Result;

use super::{
    arc_branch, fit_volume, generate, helix_branch, random_unit, straight_branch, BranchSpec,
    Phantom, PhantomSpec, RadiusProfile,
};

/// Default training corpus: 30 single-tube volumes with radii log-uniform in
/// [1.5, 25] mm, cycling through straight, arc, helix and tapering shapes,
/// CT-like intensities and a 30 mm boundary margin (the cap of the default
/// randomized training scales).
pub fn default_training_corpus(seed: u64) -> Vec<PhantomSpec> {
    build_corpus(seed, 30, 1.5, 25.0, 30.0)
}

/// Small-calibre corpus (radii in [1.5, 4] mm) for cross-calibre
/// generalisation runs; margin sized for probe scales up to 10 mm.
pub fn small_tube_corpus(seed: u64) -> Vec<PhantomSpec> {
    build_corpus(seed, 20, 1.5, 4.0, 10.0)
}

fn build_corpus(seed: u64, count: usize, r_lo: f64, r_hi: f64, margin: f64) -> Vec<PhantomSpec> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let radius = (rng.gen_range(r_lo.ln()..=r_hi.ln())).exp();
            single_tube_spec(&mut rng, i, radius, margin)
        })
        .collect()
}

fn rotate_controls(branch: &mut BranchSpec, rot: &Rotation3<f64>) {
    for p in &mut branch.control_points_mm {
        let q = rot * Point3::new(p[0], p[1], p[2]);
        *p = [q.x, q.y, q.z];
    }
}

fn single_tube_spec(rng: &mut ChaCha12Rng, index: usize, radius: f64, margin: f64) -> PhantomSpec {
    let length = (5.0 * radius).clamp(50.0, 140.0);
    let shape = index % 4;

    // The spacing floor below demands a min radius of 0.9 mm to stay
    // resolvable; keep tapers clear of it.
    let taper_end = (radius * rng.gen_range(0.45..0.7)).max(0.95);
    let min_radius = if shape == 3 { taper_end } else { radius * 0.85 };
    let s = (min_radius / 2.5).clamp(0.6, 1.6);
    let spacing = [0.85 * s, 0.85 * s, s];

    let mut branch = match shape {
        0 => {
            // Straight, sometimes with a sinusoidal radius.
            let dir = random_unit(rng);
            let half = dir * (length / 2.0);
            let mut b = straight_branch(
                [-half.x, -half.y, -half.z],
                [half.x, half.y, half.z],
                radius,
            );
            if rng.gen_bool(0.5) {
                b.radius = RadiusProfile::Sinusoidal {
                    mean_mm: radius,
                    amplitude_mm: 0.15 * radius,
                    omega: std::f64::consts::TAU * rng.gen_range(1.0..2.5),
                };
            }
            b
        }
        1 => {
            let r_curve = radius * rng.gen_range(4.0..10.0);
            let angle = (length / r_curve).min(0.6 * std::f64::consts::PI);
            arc_branch(
                [0.0, 0.0, 0.0],
                r_curve,
                angle,
                RadiusProfile::Constant { radius_mm: radius },
            )
        }
        2 => {
            let r_helix = radius * rng.gen_range(2.0..5.0);
            let pitch = r_helix * rng.gen_range(1.5..3.0);
            let turns = rng.gen_range(0.75..1.75);
            helix_branch(
                [0.0, 0.0, 0.0],
                r_helix,
                pitch,
                turns,
                RadiusProfile::Constant { radius_mm: radius },
            )
        }
        _ => {
            let dir = random_unit(rng);
            let half = dir * (length / 2.0);
            let mut b = straight_branch(
                [-half.x, -half.y, -half.z],
                [half.x, half.y, half.z],
                radius,
            );
            b.radius = RadiusProfile::Linear {
                start_mm: radius,
                end_mm: taper_end,
            };
            b
        }
    };

    // Random rigid orientation so tube directions cover the sphere.
    let rot = Rotation3::from_axis_angle(
        &nalgebra::Unit::new_normalize(random_unit(rng)),
        rng.gen_range(0.0..std::f64::consts::TAU),
    );
    rotate_controls(&mut branch, &rot);

    let branches = vec![branch];
    let (dims, origin) = fit_volume(&branches, margin, spacing);
    PhantomSpec {
        dims,
        spacing_mm: spacing,
        origin_mm: origin,
        branches,
        foreground: rng.gen_range(250.0..380.0),
        background: rng.gen_range(20.0..60.0),
        noise_sigma: rng.gen_range(15.0..30.0),
        boundary_softness_voxels: 1.0,
        margin_mm: margin,
        seed: rng.gen(),
    }
}

/// Generate every spec; distinct volumes run in parallel (each spec carries
/// its own RNG seed).
pub fn generate_corpus(specs: &[PhantomSpec]) -> Result<Vec<Phantom>> {
    specs.par_iter().map(generate).collect()
}
