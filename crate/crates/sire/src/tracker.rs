//! Iterative bidirectional centerline tracking with an entropy stopping
//! criterion, plus queue-based vessel-tree extraction.
//!
//! A track starts at a seed, finds the two principal directions (the second
//! after masking 90° around the first), walks each with fixed step `Δ`, and
//! terminates a leg when the moving average of the normalized softmax entropy
//! exceeds `τ`, the position leaves the volume, or the step guard trips.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::haversine_unchecked;
use crate::network::{extract_directions, MultiScaleOutput, Orienter, INIT_SEPARATION};
use crate::sampler::{sample_spherical, SphericalSignal};
use crate::volume::ImageVolume;

/// Forward cone half-angle for step direction selection.
pub const FORWARD_CONE: f64 = std::f64::consts::PI / 3.0;
/// Entropy moving-average window, in steps.
pub const ENTROPY_WINDOW: usize = 5;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrackerConfig {
    pub scales_mm: Vec<f64>,
    /// Step size Δ in millimetres.
    pub step_mm: f64,
    /// Normalized-entropy stopping threshold τ in (0, 1].
    pub tau: f64,
    /// Ray channels per vertex (must match the model).
    pub channels: usize,
    /// Per-leg step guard.
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
}

fn default_max_steps() -> usize {
    4000
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.scales_mm.is_empty() || self.scales_mm.iter().any(|&r| r <= 0.0) {
            return Err(Error::invalid("tracker scales must be positive, at least one"));
        }
        if self.step_mm <= 0.0 {
            return Err(Error::invalid("step size must be positive"));
        }
        if !(0.0 < self.tau && self.tau <= 1.0) {
            return Err(Error::invalid("tau must lie in (0, 1]"));
        }
        if self.max_steps == 0 {
            return Err(Error::invalid("max steps must be ≥ 1"));
        }
        Ok(())
    }
}

/// Why a tracking leg stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Entropy,
    MaxSteps,
    VolumeExit,
}

/// One visited position with its diagnostics.
#[derive(Debug, Clone)]
pub struct TrackStep {
    pub position: Point3<f64>,
    pub entropy: f64,
    pub entropy_ma: f64,
    /// Direction chosen at this position (the next step's heading).
    pub direction: Vector3<f64>,
    /// Scale of the winning vertex's argmax response.
    pub active_scale_mm: f64,
    pub peak: f64,
}

/// A tracked polyline: leg 2 reversed, then the seed, then leg 1, with
/// per-point diagnostics in the same order.
#[derive(Debug, Clone)]
pub struct TrackResult {
    pub seed: Point3<f64>,
    pub initial_directions: (Vector3<f64>, Vector3<f64>),
    pub steps: Vec<TrackStep>,
    /// Index of the seed inside `steps`.
    pub seed_index: usize,
    pub termination: (StopReason, StopReason),
}

impl TrackResult {
    pub fn points(&self) -> Vec<Point3<f64>> {
        self.steps.iter().map(|s| s.position).collect()
    }

    /// Per-step CSV: `k,x_mm,y_mm,z_mm,entropy,entropy_ma,active_scale_mm,peak`.
    pub fn save_steps_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let mut write = || -> std::io::Result<()> {
            writeln!(w, "k,x_mm,y_mm,z_mm,entropy,entropy_ma,active_scale_mm,peak")?;
            for (k, s) in self.steps.iter().enumerate() {
                writeln!(
                    w,
                    "{},{},{},{},{},{},{},{}",
                    k,
                    s.position.x,
                    s.position.y,
                    s.position.z,
                    s.entropy,
                    s.entropy_ma,
                    s.active_scale_mm,
                    s.peak
                )?;
            }
            w.flush()
        };
        write().map_err(|e| Error::io(path, e))
    }
}

/// Normalized softmax entropy of a scalar vertex signal: `H(softmax(f)) / ln N`,
/// in [0, 1].
pub fn entropy(values: &[f64]) -> f64 {
    assert!(values.len() >= 2, "entropy needs at least two activations");
    let mx = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for &v in values {
        z += (v - mx).exp();
    }
    let ln_z = z.ln();
    let mut h = 0.0;
    for &v in values {
        let logp = v - mx - ln_z;
        h -= logp.exp() * logp;
    }
    h / (values.len() as f64).ln()
}

/// Argmax vertex within the forward cone (< 60° of the previous direction);
/// ties by lowest index.
pub fn step_direction(
    values: &[f64],
    mesh: &crate::geometry::IcosphereMesh,
    prev_direction: &Vector3<f64>,
) -> Vector3<f64> {
    let mut best = usize::MAX;
    for (i, &v) in values.iter().enumerate() {
        if haversine_unchecked(&mesh.vertex(i), prev_direction) >= FORWARD_CONE {
            continue;
        }
        if best == usize::MAX || v > values[best] {
            best = i;
        }
    }
    assert!(
        best != usize::MAX,
        "a 60° cone always contains vertices on meshes of subdivision ≥ 1"
    );
    mesh.vertex(best)
}

struct Probe<'a> {
    volume: &'a ImageVolume,
    model: &'a dyn Orienter,
    config: &'a TrackerConfig,
}

struct ProbeOutput {
    out: MultiScaleOutput,
    entropy: f64,
}

impl<'a> Probe<'a> {
    fn at(&self, x: &Point3<f64>) -> Result<ProbeOutput> {
        let signals: Vec<SphericalSignal> = self
            .config
            .scales_mm
            .iter()
            .map(|&r| sample_spherical(self.volume, x, r, self.model.mesh(), self.config.channels))
            .collect::<Result<_>>()?;
        let out = self.model.forward_multiscale(&self.config.scales_mm, &signals)?;
        if !out.max.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite activations at ({:.2}, {:.2}, {:.2})",
                x.x, x.y, x.z
            )));
        }
        let entropy = entropy(&out.max);
        Ok(ProbeOutput { out, entropy })
    }
}

fn step_record(probe_out: &ProbeOutput, x: &Point3<f64>, ma: f64, dir: &Vector3<f64>, mesh: &crate::geometry::IcosphereMesh) -> TrackStep {
    // Active scale: the scale whose response wins at the chosen vertex.
    let vertex = mesh
        .nearest_vertex(dir)
        .expect("direction is a vertex position");
    TrackStep {
        position: *x,
        entropy: probe_out.entropy,
        entropy_ma: ma,
        direction: *dir,
        active_scale_mm: probe_out.out.active_scale_mm(vertex),
        peak: probe_out.out.max[vertex],
    }
}

/// Track both directions from a seed point.
pub fn track(
    volume: &ImageVolume,
    model: &dyn Orienter,
    seed: Point3<f64>,
    config: &TrackerConfig,
) -> Result<TrackResult> {
    config.validate()?;
    if !volume.contains(&seed) {
        return Err(Error::invalid(format!(
            "seed ({}, {}, {}) lies outside the volume",
            seed.x, seed.y, seed.z
        )));
    }
    let probe = Probe {
        volume,
        model,
        config,
    };
    let mesh = model.mesh().clone();

    let seed_probe = probe.at(&seed)?;
    let peaks = extract_directions(&seed_probe.out.max, &mesh, INIT_SEPARATION)?;
    let (d1, d2) = (peaks.d1, peaks.d2);

    let seed_step = step_record(&seed_probe, &seed, seed_probe.entropy, &d1, &mesh);

    let walk = |d0: Vector3<f64>| -> Result<(Vec<TrackStep>, StopReason)> {
        let mut steps = Vec::new();
        let mut entropies = vec![seed_probe.entropy];
        if seed_probe.entropy > config.tau {
            // The seed itself offers no directional evidence.
            return Ok((steps, StopReason::Entropy));
        }
        let mut x = seed;
        let mut dir = d0;
        for _ in 0..config.max_steps {
            x += dir * config.step_mm;
            if !volume.contains(&x) {
                return Ok((steps, StopReason::VolumeExit));
            }
            let p = probe.at(&x)?;
            entropies.push(p.entropy);
            let window = entropies.len().min(ENTROPY_WINDOW);
            let ma = entropies[entropies.len() - window..].iter().sum::<f64>() / window as f64;
            let next = step_direction(&p.out.max, &mesh, &dir);
            steps.push(step_record(&p, &x, ma, &next, &mesh));
            if ma > config.tau {
                return Ok((steps, StopReason::Entropy));
            }
            dir = next;
        }
        Ok((steps, StopReason::MaxSteps))
    };

    let (leg1, stop1) = walk(d1)?;
    let (leg2, stop2) = walk(d2)?;

    let mut steps = Vec::with_capacity(leg1.len() + leg2.len() + 1);
    steps.extend(leg2.iter().rev().cloned());
    let seed_index = steps.len();
    steps.push(seed_step);
    steps.extend(leg1);

    Ok(TrackResult {
        seed,
        initial_directions: (d1, d2),
        steps,
        seed_index,
        termination: (stop1, stop2),
    })
}

/// Queue-based tree extraction: pop the first seed, track, drop every
/// remaining seed within `max(Δ, active_scale/2)` of any tracked point, and
/// repeat until the queue empties.
pub fn extract_tree(
    volume: &ImageVolume,
    model: &dyn Orienter,
    seeds: &[Point3<f64>],
    config: &TrackerConfig,
) -> Result<Vec<TrackResult>> {
    config.validate()?;
    let mut queue: std::collections::VecDeque<Point3<f64>> = seeds.iter().cloned().collect();
    let mut results = Vec::new();
    while let Some(seed) = queue.pop_front() {
        if !volume.contains(&seed) {
            continue;
        }
        let result = track(volume, model, seed, config)?;
        queue.retain(|s| {
            !result.steps.iter().any(|step| {
                let radius = config.step_mm.max(step.active_scale_mm / 2.0);
                (s - step.position).norm() <= radius
            })
        });
        results.push(result);
    }
    Ok(results)
}
