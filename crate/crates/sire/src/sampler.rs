//! Construction of multi-scale spherical input signals by ray casting, the
//! per-vertex regression target peaked at the two flow directions, the
//! finite-difference ground-truth directions, and the positive/negative
//! training sample stream.
//!
//! Everything here is a pure function of immutable volumes and meshes; sample
//! drawing takes its RNG explicitly.

use nalgebra::{Point3, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::centerline::Centerline;
use crate::error::{Error, Result};
use crate::geometry::{check_unit, haversine_unchecked, IcosphereMesh};
use crate::phantom::{random_unit, Phantom};
use crate::volume::ImageVolume;

/// Default heatmap sharpness (peak value `e^α`).
pub const DEFAULT_ALPHA: f64 = 3.0;
/// Default heatmap angular support radius, in radians.
pub const DEFAULT_BETA: f64 = 0.3;
/// Default fraction of the local radius used for the finite-difference
/// direction offsets.
pub const DEFAULT_ETA: f64 = 0.25;
/// Default ray channel count.
pub const DEFAULT_CHANNELS: usize = 32;
/// Probability of drawing a negative (off-vessel) sample.
pub const NEGATIVE_PROBABILITY: f64 = 0.1;

/// Per-vertex feature array on an icosphere: `channels` scalars per vertex,
/// vertex-major layout.
#[derive(Debug, Clone, PartialEq)]
pub struct SphericalSignal {
    n_vertices: usize,
    channels: usize,
    data: Vec<f64>,
}

impl SphericalSignal {
    pub fn zeros(mesh: &IcosphereMesh, channels: usize) -> Self {
        Self {
            n_vertices: mesh.vertex_count(),
            channels,
            data: vec![0.0; mesh.vertex_count() * channels],
        }
    }

    pub fn from_data(mesh: &IcosphereMesh, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != mesh.vertex_count() * channels {
            return Err(Error::invalid(format!(
                "signal length {} != {} vertices × {} channels",
                data.len(),
                mesh.vertex_count(),
                channels
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("signal values must be finite"));
        }
        Ok(Self {
            n_vertices: mesh.vertex_count(),
            channels,
            data,
        })
    }

    pub fn n_vertices(&self) -> usize {
        self.n_vertices
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, vertex: usize, channel: usize) -> f64 {
        self.data[vertex * self.channels + channel]
    }

    #[inline]
    pub fn set(&mut self, vertex: usize, channel: usize, value: f64) {
        self.data[vertex * self.channels + channel] = value;
    }

    pub fn vertex_row(&self, vertex: usize) -> &[f64] {
        &self.data[vertex * self.channels..(vertex + 1) * self.channels]
    }
}

/// Probe scales: a fixed list of radii or a uniform sampling rule applied
/// afresh for every sample.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScaleSet {
    Fixed { radii_mm: Vec<f64> },
    Uniform { lo_mm: f64, hi_mm: f64, count: usize },
}

impl ScaleSet {
    pub fn validate(&self) -> Result<()> {
        match self {
            ScaleSet::Fixed { radii_mm } => {
                if radii_mm.is_empty() || radii_mm.iter().any(|&r| r <= 0.0) {
                    return Err(Error::invalid("fixed scales must be positive and non-empty"));
                }
            }
            ScaleSet::Uniform { lo_mm, hi_mm, count } => {
                if *lo_mm <= 0.0 || hi_mm <= lo_mm || *count == 0 {
                    return Err(Error::invalid("uniform scale rule needs 0 < lo < hi, count ≥ 1"));
                }
            }
        }
        Ok(())
    }

    /// Materialise the scales for one sample.
    pub fn draw(&self, rng: &mut impl Rng) -> Vec<f64> {
        match self {
            ScaleSet::Fixed { radii_mm } => radii_mm.clone(),
            ScaleSet::Uniform { lo_mm, hi_mm, count } => (0..*count)
                .map(|_| rng.gen_range(*lo_mm..*hi_mm))
                .collect(),
        }
    }
}

/// One training sample: the multi-scale inputs plus either a target heatmap
/// (positive) or the negative flag.
#[derive(Debug, Clone)]
pub struct TrainingSample {
    pub center: Point3<f64>,
    pub scales_mm: Vec<f64>,
    pub inputs: Vec<SphericalSignal>,
    /// `Some(heatmap)` for positive samples, `None` for negatives.
    pub target: Option<SphericalSignal>,
}

impl TrainingSample {
    pub fn is_negative(&self) -> bool {
        self.target.is_none()
    }
}

/// Cast one ray per mesh vertex from `x`, reading `c` trilinear samples at
/// `t_k = (k+1)·r/c` along each (center excluded, endpoint included).
pub fn sample_spherical(
    volume: &ImageVolume,
    x: &Point3<f64>,
    r: f64,
    mesh: &IcosphereMesh,
    c: usize,
) -> Result<SphericalSignal> {
    if r <= 0.0 {
        return Err(Error::invalid("scale must be positive"));
    }
    if c < 2 {
        return Err(Error::invalid("need at least two ray samples"));
    }
    let mut out = SphericalSignal::zeros(mesh, c);
    for (vi, v) in mesh.vertices().iter().enumerate() {
        for k in 0..c {
            let t = (k + 1) as f64 * r / c as f64;
            let p = x + v * t;
            out.set(vi, k, volume.interpolate(&p));
        }
    }
    Ok(out)
}

/// The regression target: snap each direction to its nearest vertex, then per
/// vertex emit `exp(α(1 − D/β))` inside angular distance `β` of the nearer
/// snapped direction and 0 elsewhere (the cutoff is exact; the resulting unit
/// step at `D = β` is intentional).
pub fn target_heatmap(
    mesh: &IcosphereMesh,
    d1: &Vector3<f64>,
    d2: &Vector3<f64>,
    alpha: f64,
    beta: f64,
) -> Result<SphericalSignal> {
    check_unit(d1, "d1")?;
    check_unit(d2, "d2")?;
    let v1 = mesh.vertex(mesh.nearest_vertex(d1)?);
    let v2 = mesh.vertex(mesh.nearest_vertex(d2)?);
    let mut out = SphericalSignal::zeros(mesh, 1);
    for (vi, v) in mesh.vertices().iter().enumerate() {
        let d = haversine_unchecked(v, &v1).min(haversine_unchecked(v, &v2));
        if d < beta {
            out.set(vi, 0, (alpha * (1.0 - d / beta)).exp());
        }
    }
    Ok(out)
}

/// Up- and downstream directions at arc position `t` by finite differences at
/// `t ± η·ρ(t)`, offsets clamped to the branch ends. If one side degenerates
/// after clamping (t at an endpoint) it falls back to the negated opposite
/// difference, so both returned vectors are always unit-norm; a branch too
/// short for either difference is rejected.
pub fn gt_directions(
    line: &Centerline,
    t: f64,
    eta: f64,
) -> Result<(Vector3<f64>, Vector3<f64>)> {
    if !(0.0..=line.length()).contains(&t) {
        return Err(Error::invalid(format!(
            "arc position {t} outside [0, {}]",
            line.length()
        )));
    }
    let offset = eta * line.radius(t);
    let x = line.position(t);
    let fwd = line.position((t + offset).min(line.length())) - x;
    let bwd = line.position((t - offset).max(0.0)) - x;
    let eps = 1e-9 * offset.max(1e-12);
    match (fwd.norm() > eps, bwd.norm() > eps) {
        (true, true) => Ok((fwd.normalize(), bwd.normalize())),
        (true, false) => {
            let d1 = fwd.normalize();
            Ok((d1, -d1))
        }
        (false, true) => {
            let d2 = bwd.normalize();
            Ok((-d2, d2))
        }
        (false, false) => Err(Error::invalid(
            "both finite-difference offsets degenerate after clamping",
        )),
    }
}

/// A training dataset: phantoms with their ground-truth centerlines, volumes
/// already intensity-rescaled for the network.
pub struct Dataset {
    pub volumes: Vec<DatasetVolume>,
}

pub struct DatasetVolume {
    pub volume: ImageVolume,
    pub centerlines: Vec<Centerline>,
}

impl Dataset {
    pub fn from_phantoms(phantoms: Vec<Phantom>, window: f64, level: f64) -> Result<Self> {
        let volumes = phantoms
            .into_iter()
            .map(|p| {
                Ok(DatasetVolume {
                    volume: p.volume.rescale_window(window, level)?,
                    centerlines: p.centerlines,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { volumes })
    }

    pub fn is_empty(&self) -> bool {
        self.volumes.is_empty() || self.volumes.iter().all(|v| v.centerlines.is_empty())
    }
}

/// Parameters governing sample construction.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SamplerConfig {
    pub channels: usize,
    pub alpha: f64,
    pub beta: f64,
    pub eta: f64,
    pub negative_probability: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            channels: DEFAULT_CHANNELS,
            alpha: DEFAULT_ALPHA,
            beta: DEFAULT_BETA,
            eta: DEFAULT_ETA,
            negative_probability: NEGATIVE_PROBABILITY,
        }
    }
}

/// Draw one sample: with probability `1 − negative_probability` a positive at
/// a uniformly random arc position of a uniformly random branch (target from
/// the snapped heatmap); otherwise a negative centered at a perpendicular
/// offset of `(1, 3)·ρ` outside the lumen, with no target.
pub fn draw_sample(
    dataset: &Dataset,
    scales: &ScaleSet,
    mesh: &IcosphereMesh,
    cfg: &SamplerConfig,
    rng: &mut impl Rng,
) -> Result<TrainingSample> {
    if dataset.is_empty() {
        return Err(Error::invalid("dataset has no centerlines to sample"));
    }
    let scales_mm = scales.draw(rng);

    loop {
        let vol = &dataset.volumes[rng.gen_range(0..dataset.volumes.len())];
        if vol.centerlines.is_empty() {
            continue;
        }
        let line = &vol.centerlines[rng.gen_range(0..vol.centerlines.len())];
        let t = rng.gen_range(0.0..line.length());
        let negative = rng.gen_bool(cfg.negative_probability);

        let (center, target) = if negative {
            let tangent = line.tangent(t);
            let radial = perpendicular_unit(&tangent, rng);
            let distance = rng.gen_range(1.0..3.0) * line.radius(t);
            if distance <= line.radius(t) {
                continue; // border case of the open interval; redraw
            }
            (line.position(t) + radial * distance, None)
        } else {
            let Ok((d1, d2)) = gt_directions(line, t, cfg.eta) else {
                continue; // degenerate endpoint draw; redraw
            };
            let target = target_heatmap(mesh, &d1, &d2, cfg.alpha, cfg.beta)?;
            (line.position(t), Some(target))
        };

        let inputs = {
            use rayon::prelude::*;
            scales_mm
                .par_iter()
                .map(|&r| sample_spherical(&vol.volume, &center, r, mesh, cfg.channels))
                .collect::<Result<Vec<_>>>()?
        };

        return Ok(TrainingSample {
            center,
            scales_mm,
            inputs,
            target,
        });
    }
}

/// Like `sample_spherical`, but casting rays along rotated vertex directions
/// `R·v_j`. Sampling the original volume along rotated rays is the local
/// equivalent of rigidly rotating the image content about `x` by `R⁻¹`, which
/// is how rotation experiments probe the estimator without resampling whole
/// volumes.
pub fn sample_spherical_rotated(
    volume: &ImageVolume,
    x: &Point3<f64>,
    r: f64,
    mesh: &IcosphereMesh,
    c: usize,
    rotation: &nalgebra::Rotation3<f64>,
) -> Result<SphericalSignal> {
    if r <= 0.0 {
        return Err(Error::invalid("scale must be positive"));
    }
    if c < 2 {
        return Err(Error::invalid("need at least two ray samples"));
    }
    let mut out = SphericalSignal::zeros(mesh, c);
    for (vi, v) in mesh.vertices().iter().enumerate() {
        let dir = rotation * v;
        for k in 0..c {
            let t = (k + 1) as f64 * r / c as f64;
            let p = x + dir * t;
            out.set(vi, k, volume.interpolate(&p));
        }
    }
    Ok(out)
}

/// Random unit vector orthogonal to `axis`.
pub fn perpendicular_unit(axis: &Vector3<f64>, rng: &mut impl Rng) -> Vector3<f64> {
    loop {
        let v = random_unit(rng);
        let perp = v - axis * v.dot(axis);
        let n = perp.norm();
        if n > 1e-6 {
            return perp / n;
        }
    }
}

/// Interpolate a per-vertex scalar signal at an arbitrary direction by planar
/// barycentric weights within the containing face. Used to compare signals
/// across rotated meshes.
pub fn interpolate_signal(
    mesh: &IcosphereMesh,
    values: &[f64],
    direction: &Vector3<f64>,
) -> Result<f64> {
    check_unit(direction, "direction")?;
    if values.len() != mesh.vertex_count() {
        return Err(Error::invalid("one value per vertex"));
    }
    // The containing face maximises the minimum barycentric coordinate of the
    // ray-plane intersection.
    let mut best = (f64::NEG_INFINITY, 0.0);
    for f in mesh.faces() {
        let (a, b, c) = (
            mesh.vertex(f[0] as usize),
            mesh.vertex(f[1] as usize),
            mesh.vertex(f[2] as usize),
        );
        let n = (b - a).cross(&(c - a));
        let denom = direction.dot(&n);
        if denom.abs() < 1e-12 {
            continue;
        }
        let s = a.dot(&n) / denom;
        if s <= 0.0 {
            continue;
        }
        let p = direction * s;
        // Barycentric coordinates in the face plane.
        let (v0, v1, v2) = (b - a, c - a, p - a);
        let (d00, d01, d11) = (v0.dot(&v0), v0.dot(&v1), v1.dot(&v1));
        let (d20, d21) = (v2.dot(&v0), v2.dot(&v1));
        let det = d00 * d11 - d01 * d01;
        let wb = (d11 * d20 - d01 * d21) / det;
        let wc = (d00 * d21 - d01 * d20) / det;
        let wa = 1.0 - wb - wc;
        let min_w = wa.min(wb).min(wc);
        if min_w > best.0 {
            let value = wa * values[f[0] as usize]
                + wb * values[f[1] as usize]
                + wc * values[f[2] as usize];
            best = (min_w, value);
        }
    }
    Ok(best.1)
}
