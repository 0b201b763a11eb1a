//! Reusable experiment harnesses: the rotation-equivariance probe on trained
//! models and small statistics helpers shared by the CLI and the acceptance
//! suite.

use nalgebra::{Quaternion, Rotation3, UnitQuaternion};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::metrics::cosine_eval;
use crate::network::{extract_directions, Orienter, EVAL_SEPARATION};
use crate::sampler::{
    gt_directions, sample_spherical, sample_spherical_rotated, Dataset, ScaleSet, SphericalSignal,
};

/// Haar-uniform random rotation (normalised Gaussian quaternion).
pub fn random_rotation(rng: &mut impl Rng) -> Rotation3<f64> {
    let n = StandardNormal;
    let q = Quaternion::new(
        n.sample(rng),
        n.sample(rng),
        n.sample(rng),
        n.sample(rng),
    );
    UnitQuaternion::from_quaternion(q).to_rotation_matrix()
}

/// Median of a sample (averages the middle pair for even lengths).
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty());
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

#[derive(Debug, Clone)]
pub struct RotationTestReport {
    pub cosines_unrotated: Vec<f64>,
    pub cosines_rotated: Vec<f64>,
}

impl RotationTestReport {
    pub fn median_unrotated(&self) -> f64 {
        median(&self.cosines_unrotated)
    }

    pub fn median_rotated(&self) -> f64 {
        median(&self.cosines_rotated)
    }
}

/// Estimate direction accuracy on random centerline points, each processed
/// twice: as-is and under a random SO(3) rotation of the local problem
/// (sampling along rotated ray directions and rotating the predictions back).
/// A rotation-equivariant estimator scores the same either way.
pub fn rotation_equivariance_test(
    model: &dyn Orienter,
    dataset: &Dataset,
    scales: &ScaleSet,
    n_points: usize,
    eta: f64,
    seed: u64,
) -> Result<RotationTestReport> {
    if dataset.is_empty() {
        return Err(Error::invalid("dataset has no centerlines"));
    }
    let mesh = model.mesh().clone();
    let channels = model.input_channels();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut unrotated = Vec::with_capacity(n_points);
    let mut rotated = Vec::with_capacity(n_points);

    let mut drawn = 0usize;
    while drawn < n_points {
        let vol = &dataset.volumes[rng.gen_range(0..dataset.volumes.len())];
        if vol.centerlines.is_empty() {
            continue;
        }
        let line = &vol.centerlines[rng.gen_range(0..vol.centerlines.len())];
        let t = rng.gen_range(0.0..line.length());
        let Ok((g1, g2)) = gt_directions(line, t, eta) else {
            continue;
        };
        let x = line.position(t);
        let scales_mm = scales.draw(&mut rng);
        let rot = random_rotation(&mut rng);

        let plain: Vec<SphericalSignal> = scales_mm
            .iter()
            .map(|&r| sample_spherical(&vol.volume, &x, r, &mesh, channels))
            .collect::<Result<_>>()?;
        let out = model.forward_multiscale(&scales_mm, &plain)?;
        let peaks = extract_directions(&out.max, &mesh, EVAL_SEPARATION)?;
        unrotated.push(cosine_eval((&peaks.d1, &peaks.d2), (&g1, &g2))?);

        let turned: Vec<SphericalSignal> = scales_mm
            .iter()
            .map(|&r| sample_spherical_rotated(&vol.volume, &x, r, &mesh, channels, &rot))
            .collect::<Result<_>>()?;
        let out_r = model.forward_multiscale(&scales_mm, &turned)?;
        let peaks_r = extract_directions(&out_r.max, &mesh, EVAL_SEPARATION)?;
        let d1 = rot * peaks_r.d1;
        let d2 = rot * peaks_r.d2;
        rotated.push(cosine_eval((&d1, &d2), (&g1, &g2))?);

        drawn += 1;
    }

    Ok(RotationTestReport {
        cosines_unrotated: unrotated,
        cosines_rotated: rotated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;

    #[test]
    fn random_rotations_are_proper() {
        let mut rng = StdRng::seed_from_u64(1);
        for _ in 0..50 {
            let r = random_rotation(&mut rng);
            let m = r.matrix();
            assert!((m.determinant() - 1.0).abs() < 1e-12);
            assert!(((m.transpose() * m) - nalgebra::Matrix3::identity()).norm() < 1e-12);
        }
    }

    #[test]
    fn median_handles_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
