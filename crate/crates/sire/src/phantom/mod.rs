//! Synthetic CT-like volumes containing tubular structures with exactly known
//! centerlines and radii. These phantoms stand in for clinical data in
//! training and in every experiment that needs ground truth.

mod corpus;
mod spline;

use nalgebra::{Point3, Vector3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::centerline::Centerline;
use crate::error::{Error, Result};
use crate::volume::ImageVolume;

pub use corpus::{default_training_corpus, generate_corpus, small_tube_corpus};

/// Radius along a branch as a function of the normalised arc position
/// `s ∈ [0, 1]`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RadiusProfile {
    Constant { radius_mm: f64 },
    /// Linear taper from `start_mm` at the first point to `end_mm` at the
    /// last.
    Linear { start_mm: f64, end_mm: f64 },
    /// `r(s) = mean_mm + amplitude_mm · sin(omega · s)`.
    Sinusoidal {
        mean_mm: f64,
        amplitude_mm: f64,
        omega: f64,
    },
}

impl RadiusProfile {
    pub fn eval(&self, s: f64) -> f64 {
        match *self {
            RadiusProfile::Constant { radius_mm } => radius_mm,
            RadiusProfile::Linear { start_mm, end_mm } => start_mm + (end_mm - start_mm) * s,
            RadiusProfile::Sinusoidal {
                mean_mm,
                amplitude_mm,
                omega,
            } => mean_mm + amplitude_mm * (omega * s).sin(),
        }
    }

    pub fn min_radius(&self) -> f64 {
        match *self {
            RadiusProfile::Constant { radius_mm } => radius_mm,
            RadiusProfile::Linear { start_mm, end_mm } => start_mm.min(end_mm),
            RadiusProfile::Sinusoidal {
                mean_mm,
                amplitude_mm,
                ..
            } => mean_mm - amplitude_mm.abs(),
        }
    }

    pub fn max_radius(&self) -> f64 {
        match *self {
            RadiusProfile::Constant { radius_mm } => radius_mm,
            RadiusProfile::Linear { start_mm, end_mm } => start_mm.max(end_mm),
            RadiusProfile::Sinusoidal {
                mean_mm,
                amplitude_mm,
                ..
            } => mean_mm + amplitude_mm.abs(),
        }
    }
}

/// One tube: a cubic-spline centerline through the control points plus a
/// radius profile.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BranchSpec {
    pub control_points_mm: Vec<[f64; 3]>,
    pub radius: RadiusProfile,
}

/// Full description of a synthetic volume. `generate` is deterministic given
/// the spec (the RNG seed is part of it).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PhantomSpec {
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    #[serde(default)]
    pub origin_mm: [f64; 3],
    pub branches: Vec<BranchSpec>,
    /// Intensity inside the tubes (CT-like units).
    pub foreground: f32,
    /// Intensity elsewhere.
    pub background: f32,
    /// Standard deviation of additive Gaussian noise.
    #[serde(default)]
    pub noise_sigma: f32,
    /// Total width of the smoothstep boundary band, in voxels (of the largest
    /// spacing component). Models partial-volume softness.
    #[serde(default = "default_softness")]
    pub boundary_softness_voxels: f64,
    /// Required clearance between every tube surface and the volume boundary;
    /// set it to the largest probe scale the phantom will be used with.
    pub margin_mm: f64,
    pub seed: u64,
}

fn default_softness() -> f64 {
    1.0
}

/// Generated phantom: the image, one ground-truth centerline per branch, and
/// any Y-junction balls (shared branch endpoints) that evaluation may want to
/// exclude.
#[derive(Debug, Clone)]
pub struct Phantom {
    pub volume: ImageVolume,
    pub centerlines: Vec<Centerline>,
    /// Centers and radii (2× local tube radius) of detected Y-junctions.
    pub junctions: Vec<(Point3<f64>, f64)>,
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|&d| d < 2) {
            return Err(Error::invalid("phantom dims must be at least 2 per axis"));
        }
        if self.spacing_mm.iter().any(|&s| s <= 0.0) {
            return Err(Error::invalid("phantom spacing must be positive"));
        }
        if self.branches.is_empty() {
            return Err(Error::invalid("phantom needs at least one branch"));
        }
        let max_spacing = self.spacing_mm.iter().cloned().fold(0.0f64, f64::max);
        for (b, branch) in self.branches.iter().enumerate() {
            if branch.control_points_mm.len() < 2 {
                return Err(Error::invalid(format!(
                    "branch {b} needs at least two control points"
                )));
            }
            let min_r = branch.radius.min_radius();
            if min_r < 1.5 * max_spacing {
                return Err(Error::invalid(format!(
                    "branch {b}: min radius {min_r} mm is not resolvable at spacing {max_spacing} mm (needs ≥ 1.5×)"
                )));
            }
        }
        Ok(())
    }

    pub fn max_spacing(&self) -> f64 {
        self.spacing_mm.iter().cloned().fold(0.0f64, f64::max)
    }

    fn bounds(&self) -> (Point3<f64>, Point3<f64>) {
        let lo = Point3::new(self.origin_mm[0], self.origin_mm[1], self.origin_mm[2]);
        let hi = lo
            + Vector3::new(
                (self.dims[0] - 1) as f64 * self.spacing_mm[0],
                (self.dims[1] - 1) as f64 * self.spacing_mm[1],
                (self.dims[2] - 1) as f64 * self.spacing_mm[2],
            );
        (lo, hi)
    }
}

/// Rasterise the spec into a volume plus ground-truth centerlines.
///
/// Voxel intensity is `background + (foreground − background) · smoothstep`
/// over the signed distance to the nearest tube surface, softened over
/// `boundary_softness_voxels`, plus `N(0, σ²)` noise. Each centerline is a
/// dense polyline (arc step ≤ 0.25 · its min radius) carrying the analytic
/// radius profile.
pub fn generate(spec: &PhantomSpec) -> Result<Phantom> {
    spec.validate()?;
    let (lo, hi) = spec.bounds();
    let max_spacing = spec.max_spacing();
    let band_half = 0.5 * spec.boundary_softness_voxels * max_spacing;

    let nvox = spec.dims[0] * spec.dims[1] * spec.dims[2];
    // Signed distance to the nearest tube surface (negative inside), only
    // accurate within the stamped shell; +inf elsewhere, which clamps to
    // background.
    let mut signed = vec![f32::INFINITY; nvox];

    let mut centerlines = Vec::new();
    let mut endpoint_info: Vec<(Point3<f64>, f64)> = Vec::new();

    for (bi, branch) in spec.branches.iter().enumerate() {
        let controls: Vec<Point3<f64>> = branch
            .control_points_mm
            .iter()
            .map(|p| Point3::new(p[0], p[1], p[2]))
            .collect();
        let min_r = branch.radius.min_radius();
        let fine = spline::sample_spline(&controls, 0.05 * min_r.min(max_spacing));
        let total = fine.length();

        // Stamp step: fine enough that the discrete min over samples tracks
        // the true distance to well below a voxel.
        let stamp_step = (0.25 * min_r).min(0.5 * max_spacing);
        let stamped = fine.emit(stamp_step);

        // Margin check: every sample must keep (radius + margin) clearance to
        // the volume boundary.
        for &(t, p) in &stamped {
            let r = branch.radius.eval(t / total);
            if r <= 0.0 {
                return Err(Error::invalid(format!(
                    "branch {bi}: radius profile dips to {r} mm"
                )));
            }
            let need = r + spec.margin_mm;
            for a in 0..3 {
                if p[a] - need < lo[a] || p[a] + need > hi[a] {
                    return Err(Error::invalid(format!(
                        "branch {bi} violates the {} mm margin near ({:.1}, {:.1}, {:.1})",
                        spec.margin_mm, p.x, p.y, p.z
                    )));
                }
            }
        }

        // Stamp the signed distance field.
        for &(t, p) in &stamped {
            let r = branch.radius.eval(t / total);
            let reach = r + band_half + stamp_step;
            let i_lo = (((p.x - reach - lo.x) / spec.spacing_mm[0]).floor().max(0.0)) as usize;
            let j_lo = (((p.y - reach - lo.y) / spec.spacing_mm[1]).floor().max(0.0)) as usize;
            let k_lo = (((p.z - reach - lo.z) / spec.spacing_mm[2]).floor().max(0.0)) as usize;
            let i_hi =
                ((((p.x + reach - lo.x) / spec.spacing_mm[0]).ceil()) as usize).min(spec.dims[0] - 1);
            let j_hi =
                ((((p.y + reach - lo.y) / spec.spacing_mm[1]).ceil()) as usize).min(spec.dims[1] - 1);
            let k_hi =
                ((((p.z + reach - lo.z) / spec.spacing_mm[2]).ceil()) as usize).min(spec.dims[2] - 1);
            for k in k_lo..=k_hi {
                let z = lo.z + k as f64 * spec.spacing_mm[2];
                let dz2 = (z - p.z) * (z - p.z);
                for j in j_lo..=j_hi {
                    let y = lo.y + j as f64 * spec.spacing_mm[1];
                    let dyz2 = dz2 + (y - p.y) * (y - p.y);
                    let row = spec.dims[0] * (j + spec.dims[1] * k);
                    for i in i_lo..=i_hi {
                        let x = lo.x + i as f64 * spec.spacing_mm[0];
                        let d = ((x - p.x) * (x - p.x) + dyz2).sqrt() - r;
                        let cell = &mut signed[row + i];
                        if (d as f32) < *cell {
                            *cell = d as f32;
                        }
                    }
                }
            }
        }

        // Emit the ground-truth polyline at ≤ 0.25·min radius.
        let emitted = fine.emit(0.25 * min_r);
        let points: Vec<Point3<f64>> = emitted.iter().map(|&(_, p)| p).collect();
        let radii: Vec<f64> = emitted
            .iter()
            .map(|&(t, _)| branch.radius.eval(t / total))
            .collect();
        endpoint_info.push((points[0], radii[0]));
        endpoint_info.push((*points.last().unwrap(), *radii.last().unwrap()));
        centerlines.push(Centerline::new(points, radii)?);
    }

    // Blend intensities and add noise.
    let fg = spec.foreground as f64;
    let bg = spec.background as f64;
    let mut rng = ChaCha12Rng::seed_from_u64(spec.seed);
    let normal = Normal::new(0.0f64, 1.0).expect("unit normal");
    let mut data = Vec::with_capacity(nvox);
    for &d in &signed {
        let t = blend(d as f64, band_half);
        let mut v = bg + (fg - bg) * t;
        if spec.noise_sigma > 0.0 {
            v += spec.noise_sigma as f64 * normal.sample(&mut rng);
        }
        data.push(v as f32);
    }

    let volume = ImageVolume::new(
        spec.dims,
        Vector3::from_row_slice(&spec.spacing_mm),
        Point3::new(spec.origin_mm[0], spec.origin_mm[1], spec.origin_mm[2]),
        data,
    )?;

    // Y-junctions: branch endpoints that coincide (shared parent endpoint).
    let mut junctions = Vec::new();
    for a in 0..endpoint_info.len() {
        for b in a + 1..endpoint_info.len() {
            // Endpoints of the same branch are slots 2i and 2i+1.
            if a / 2 == b / 2 {
                continue;
            }
            let (pa, ra) = endpoint_info[a];
            let (pb, rb) = endpoint_info[b];
            if (pa - pb).norm() < 1e-6 {
                junctions.push((pa, 2.0 * ra.max(rb)));
            }
        }
    }

    Ok(Phantom {
        volume,
        centerlines,
        junctions,
    })
}

/// Smoothstep over the signed distance: 1 deep inside, 0 outside, 0.5 exactly
/// on the analytic surface.
fn blend(d: f64, band_half: f64) -> f64 {
    if band_half <= 0.0 {
        return if d < 0.0 { 1.0 } else { 0.0 };
    }
    if d <= -band_half {
        1.0
    } else if d >= band_half {
        0.0
    } else {
        let x = (band_half - d) / (2.0 * band_half);
        x * x * (3.0 - 2.0 * x)
    }
}

/// Subsample the known centerlines into an ordered queue of seed points at
/// arc intervals of `stride_mm`, each perturbed by a uniform random offset of
/// up to `jitter_frac` of the local radius (0 disables jitter). Mimics the
/// imperfect skeletons of an automatic segmentation.
pub fn skeleton_seeds(
    centerlines: &[Centerline],
    stride_mm: f64,
    jitter_frac: f64,
    rng: &mut impl Rng,
) -> Result<Vec<Point3<f64>>> {
    if stride_mm <= 0.0 {
        return Err(Error::invalid("seed stride must be positive"));
    }
    let mut seeds = Vec::new();
    for line in centerlines {
        let mut t = 0.0;
        while t <= line.length() + 1e-9 {
            let mut p = line.position(t);
            if jitter_frac > 0.0 {
                let dir = random_unit(rng);
                let amp = rng.gen_range(0.0..jitter_frac) * line.radius(t);
                p += dir * amp;
            }
            seeds.push(p);
            t += stride_mm;
        }
    }
    Ok(seeds)
}

/// Uniform random unit vector.
pub fn random_unit(rng: &mut impl Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.gen_range(-1.0..1.0f64),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    }
}

/// Straight tube between two points.
pub fn straight_branch(from: [f64; 3], to: [f64; 3], radius_mm: f64) -> BranchSpec {
    let a = Point3::from(from);
    let b = Point3::from(to);
    // Interior controls keep the Catmull-Rom segment exactly straight.
    let controls = (0..=4)
        .map(|k| {
            let p = a + (b - a) * (k as f64 / 4.0);
            [p.x, p.y, p.z]
        })
        .collect();
    BranchSpec {
        control_points_mm: controls,
        radius: RadiusProfile::Constant { radius_mm },
    }
}

/// Helical tube around the z axis through `center`: helix radius `r_helix`,
/// pitch `pitch` (axial advance per turn), `turns` full turns.
pub fn helix_branch(
    center: [f64; 3],
    r_helix: f64,
    pitch: f64,
    turns: f64,
    radius: RadiusProfile,
) -> BranchSpec {
    // Dense controls keep the interpolated tangent within ~2° of the analytic
    // helix even at the clamped spline ends.
    let n_ctrl = ((turns * 96.0).ceil() as usize).max(8);
    let controls = (0..=n_ctrl)
        .map(|k| {
            let u = turns * std::f64::consts::TAU * k as f64 / n_ctrl as f64;
            [
                center[0] + r_helix * u.cos(),
                center[1] + r_helix * u.sin(),
                center[2] + pitch * u / std::f64::consts::TAU,
            ]
        })
        .collect();
    BranchSpec {
        control_points_mm: controls,
        radius,
    }
}

/// Planar circular arc of curvature radius `r_curve` spanning `angle`
/// radians, in the xy plane around `center`.
pub fn arc_branch(center: [f64; 3], r_curve: f64, angle: f64, radius: RadiusProfile) -> BranchSpec {
    let n_ctrl = ((angle / 0.04).ceil() as usize).max(8);
    let controls = (0..=n_ctrl)
        .map(|k| {
            let u = angle * k as f64 / n_ctrl as f64;
            [
                center[0] + r_curve * u.cos(),
                center[1] + r_curve * u.sin(),
                center[2],
            ]
        })
        .collect();
    BranchSpec {
        control_points_mm: controls,
        radius,
    }
}

/// Compute a volume box (origin and dims) that fits all branches with the
/// given margin, for spec builders that auto-size their volume.
pub fn fit_volume(
    branches: &[BranchSpec],
    margin_mm: f64,
    spacing_mm: [f64; 3],
) -> ([usize; 3], [f64; 3]) {
    let mut lo = Point3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY);
    let mut hi = Point3::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for branch in branches {
        let controls: Vec<Point3<f64>> = branch
            .control_points_mm
            .iter()
            .map(|p| Point3::new(p[0], p[1], p[2]))
            .collect();
        let fine = spline::sample_spline(&controls, 0.5);
        let total = fine.length();
        for (i, p) in fine.points.iter().enumerate() {
            let r = branch.radius.eval(fine.arc[i] / total);
            for a in 0..3 {
                lo[a] = lo[a].min(p[a] - r - margin_mm);
                hi[a] = hi[a].max(p[a] + r + margin_mm);
            }
        }
    }
    // One spacing of slack on each side keeps boundary checks clear of
    // floating-point edge cases.
    let mut dims = [0usize; 3];
    let mut origin = [0.0f64; 3];
    for a in 0..3 {
        origin[a] = lo[a] - spacing_mm[a];
        dims[a] = (((hi[a] - origin[a]) / spacing_mm[a]).ceil() as usize) + 2;
    }
    (dims, origin)
}
