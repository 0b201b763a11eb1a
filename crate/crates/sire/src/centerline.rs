//! Polyline centerlines with per-point radii, arc-length parameterisation and
//! the JSON interchange format (a list of branches, each an ordered list of
//! `{x_mm, y_mm, z_mm, radius_mm}` records).

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ordered 3D polyline with a radius at every point. Arc positions are
/// measured in millimetres from the first point; between samples both the
/// position and the radius interpolate linearly.
#[derive(Debug, Clone, PartialEq)]
pub struct Centerline {
    points: Vec<Point3<f64>>,
    radii: Vec<f64>,
    /// Cumulative arc length, same length as `points`, starts at 0.
    arc: Vec<f64>,
}

impl Centerline {
    pub fn new(points: Vec<Point3<f64>>, radii: Vec<f64>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::invalid("a centerline needs at least two points"));
        }
        if points.len() != radii.len() {
            return Err(Error::invalid("one radius per centerline point"));
        }
        if radii.iter().any(|&r| r <= 0.0 || !r.is_finite()) {
            return Err(Error::invalid("radii must be positive and finite"));
        }
        let mut arc = Vec::with_capacity(points.len());
        arc.push(0.0);
        for w in points.windows(2) {
            let step = (w[1] - w[0]).norm();
            arc.push(arc.last().unwrap() + step);
        }
        if *arc.last().unwrap() <= 0.0 {
            return Err(Error::invalid("centerline has zero length"));
        }
        Ok(Self { points, radii, arc })
    }

    pub fn points(&self) -> &[Point3<f64>] {
        &self.points
    }

    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    pub fn len_points(&self) -> usize {
        self.points.len()
    }

    /// Total arc length in millimetres.
    pub fn length(&self) -> f64 {
        *self.arc.last().unwrap()
    }

    pub fn min_radius(&self) -> f64 {
        self.radii.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max_radius(&self) -> f64 {
        self.radii.iter().cloned().fold(0.0, f64::max)
    }

    fn segment_at(&self, t: f64) -> (usize, f64) {
        let t = t.clamp(0.0, self.length());
        // Binary search for the segment containing arc position t.
        let idx = match self
            .arc
            .binary_search_by(|a| a.partial_cmp(&t).unwrap())
        {
            Ok(i) => i.min(self.points.len() - 2),
            Err(i) => i.saturating_sub(1).min(self.points.len() - 2),
        };
        let seg_len = self.arc[idx + 1] - self.arc[idx];
        let frac = if seg_len > 0.0 {
            (t - self.arc[idx]) / seg_len
        } else {
            0.0
        };
        (idx, frac)
    }

    /// Position at arc parameter `t` (clamped to the branch range).
    pub fn position(&self, t: f64) -> Point3<f64> {
        let (i, f) = self.segment_at(t);
        self.points[i] + (self.points[i + 1] - self.points[i]) * f
    }

    /// Radius at arc parameter `t` (clamped, linearly interpolated).
    pub fn radius(&self, t: f64) -> f64 {
        let (i, f) = self.segment_at(t);
        self.radii[i] * (1.0 - f) + self.radii[i + 1] * f
    }

    /// Unit tangent at arc parameter `t` (direction of the containing
    /// segment).
    pub fn tangent(&self, t: f64) -> Vector3<f64> {
        let (i, _) = self.segment_at(t);
        (self.points[i + 1] - self.points[i]).normalize()
    }

    /// Re-emit the line with points spaced at most `step` apart along the
    /// arc, endpoints included, radii interpolated.
    pub fn resampled(&self, step: f64) -> Result<Centerline> {
        if step <= 0.0 {
            return Err(Error::invalid("resample step must be positive"));
        }
        let n = (self.length() / step).ceil() as usize;
        let n = n.max(1);
        let mut points = Vec::with_capacity(n + 1);
        let mut radii = Vec::with_capacity(n + 1);
        for k in 0..=n {
            let t = self.length() * k as f64 / n as f64;
            points.push(self.position(t));
            radii.push(self.radius(t));
        }
        Centerline::new(points, radii)
    }

    /// Distance from `p` to the nearest polyline vertex, together with that
    /// vertex's index.
    pub fn nearest_point(&self, p: &Point3<f64>) -> (usize, f64) {
        let mut best = (0usize, f64::INFINITY);
        for (i, q) in self.points.iter().enumerate() {
            let d = (p - q).norm();
            if d < best.1 {
                best = (i, d);
            }
        }
        best
    }

    /// Distance from `p` to the polyline treated as connected segments.
    pub fn distance_to_segments(&self, p: &Point3<f64>) -> f64 {
        let mut best = f64::INFINITY;
        for w in self.points.windows(2) {
            best = best.min(point_segment_distance(p, &w[0], &w[1]));
        }
        best
    }
}

pub(crate) fn point_segment_distance(p: &Point3<f64>, a: &Point3<f64>, b: &Point3<f64>) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 == 0.0 {
        return (p - a).norm();
    }
    let t = ((p - a).dot(&ab) / len2).clamp(0.0, 1.0);
    (p - (a + ab * t)).norm()
}

#[derive(Serialize, Deserialize)]
struct PointRecord {
    x_mm: f64,
    y_mm: f64,
    z_mm: f64,
    radius_mm: f64,
}

/// Write branches as a JSON list of branches, each an ordered list of point
/// records.
pub fn save_centerlines(branches: &[Centerline], path: &Path) -> Result<()> {
    let doc: Vec<Vec<PointRecord>> = branches
        .iter()
        .map(|b| {
            b.points()
                .iter()
                .zip(b.radii())
                .map(|(p, &r)| PointRecord {
                    x_mm: p.x,
                    y_mm: p.y,
                    z_mm: p.z,
                    radius_mm: r,
                })
                .collect()
        })
        .collect();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    serde_json::to_writer(BufWriter::new(file), &doc).map_err(|e| Error::Json {
        path: path.into(),
        source: e,
    })
}

pub fn load_centerlines(path: &Path) -> Result<Vec<Centerline>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let doc: Vec<Vec<PointRecord>> =
        serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::Json {
            path: path.into(),
            source: e,
        })?;
    doc.into_iter()
        .map(|records| {
            let points = records
                .iter()
                .map(|r| Point3::new(r.x_mm, r.y_mm, r.z_mm))
                .collect();
            let radii = records.iter().map(|r| r.radius_mm).collect();
            Centerline::new(points, radii)
        })
        .collect()
}
