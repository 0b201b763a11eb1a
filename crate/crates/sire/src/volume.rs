//! 3D scalar images on an axis-aligned grid with anisotropic physical
//! spacing, trilinear sampling in world millimetres, window/level intensity
//! rescaling and a small self-describing file format.
//!
//! Volumes are immutable after construction; concurrent read-only sampling is
//! the expected access pattern.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, VolumeFormatError};

pub const VOLUME_MAGIC: &[u8; 8] = b"SIREVOL1";

/// Window/level used throughout for CT-like intensities.
pub const DEFAULT_WINDOW: f64 = 1200.0;
pub const DEFAULT_LEVEL: f64 = 200.0;

/// Scalar 3D image. Voxel values sit at voxel centers; the world position of
/// voxel `(i, j, k)` is `origin + (i·sx, j·sy, k·sz)`.
#[derive(Debug, Clone)]
pub struct ImageVolume {
    dims: [usize; 3],
    spacing: Vector3<f64>,
    inv_spacing: Vector3<f64>,
    origin: Point3<f64>,
    data: Vec<f32>,
}

impl ImageVolume {
    pub fn new(
        dims: [usize; 3],
        spacing: Vector3<f64>,
        origin: Point3<f64>,
        data: Vec<f32>,
    ) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::invalid("volume dims must be positive"));
        }
        if spacing.iter().any(|&s| s <= 0.0) {
            return Err(Error::invalid("voxel spacing must be strictly positive"));
        }
        let expected = dims[0] * dims[1] * dims[2];
        if data.len() != expected {
            return Err(Error::invalid(format!(
                "data length {} does not match dims {:?} ({} voxels)",
                data.len(),
                dims,
                expected
            )));
        }
        Ok(Self {
            dims,
            spacing,
            inv_spacing: spacing.map(|s| 1.0 / s),
            origin,
            data,
        })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> Vector3<f64> {
        self.spacing
    }

    pub fn origin(&self) -> Point3<f64> {
        self.origin
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn max_spacing(&self) -> f64 {
        self.spacing.x.max(self.spacing.y).max(self.spacing.z)
    }

    #[inline]
    pub fn voxel_index(&self, i: usize, j: usize, k: usize) -> usize {
        // x-fastest ordering, matching the file layout.
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn voxel(&self, i: usize, j: usize, k: usize) -> f32 {
        self.data[self.voxel_index(i, j, k)]
    }

    pub fn voxel_mut(&mut self, i: usize, j: usize, k: usize) -> &mut f32 {
        let idx = self.voxel_index(i, j, k);
        &mut self.data[idx]
    }

    /// World position of a voxel center.
    pub fn voxel_center(&self, i: usize, j: usize, k: usize) -> Point3<f64> {
        self.origin
            + Vector3::new(
                i as f64 * self.spacing.x,
                j as f64 * self.spacing.y,
                k as f64 * self.spacing.z,
            )
    }

    /// Axis-aligned bounding box of the voxel centers (the sampling hull).
    pub fn bounds(&self) -> (Point3<f64>, Point3<f64>) {
        (
            self.origin,
            self.voxel_center(self.dims[0] - 1, self.dims[1] - 1, self.dims[2] - 1),
        )
    }

    /// Whether a world point lies inside the voxel-center hull.
    pub fn contains(&self, p: &Point3<f64>) -> bool {
        let (lo, hi) = self.bounds();
        (0..3).all(|a| p[a] >= lo[a] && p[a] <= hi[a])
    }

    /// Trilinear interpolation at a world point in millimetres. Points
    /// outside the voxel-center hull read the fill value 0.0.
    ///
    /// Voxel coordinates within 1e-9 voxel of an integer snap to it, so voxel
    /// centers reproduce their stored value exactly even when
    /// `(p − origin) / spacing` rounds.
    pub fn interpolate(&self, p: &Point3<f64>) -> f64 {
        let snap = |x: f64| {
            let r = x.round();
            if (x - r).abs() < 1e-9 {
                r
            } else {
                x
            }
        };
        let u = [
            snap((p.x - self.origin.x) * self.inv_spacing.x),
            snap((p.y - self.origin.y) * self.inv_spacing.y),
            snap((p.z - self.origin.z) * self.inv_spacing.z),
        ];
        for (a, &ua) in u.iter().enumerate() {
            if !(0.0..=(self.dims[a] - 1) as f64).contains(&ua) {
                return 0.0;
            }
        }
        // Clamp the base cell so that points exactly on the upper hull read
        // the last cell with fraction 1. Single-voxel axes degenerate to the
        // lone sample with fraction 0.
        let i0 = (u[0].floor() as usize).min(self.dims[0].saturating_sub(2));
        let j0 = (u[1].floor() as usize).min(self.dims[1].saturating_sub(2));
        let k0 = (u[2].floor() as usize).min(self.dims[2].saturating_sub(2));
        let fx = u[0] - i0 as f64;
        let fy = u[1] - j0 as f64;
        let fz = u[2] - k0 as f64;
        let i1 = (i0 + 1).min(self.dims[0] - 1);
        let j1 = (j0 + 1).min(self.dims[1] - 1);
        let k1 = (k0 + 1).min(self.dims[2] - 1);

        let c = |i: usize, j: usize, k: usize| self.voxel(i, j, k) as f64;
        let c00 = c(i0, j0, k0) * (1.0 - fx) + c(i1, j0, k0) * fx;
        let c10 = c(i0, j1, k0) * (1.0 - fx) + c(i1, j1, k0) * fx;
        let c01 = c(i0, j0, k1) * (1.0 - fx) + c(i1, j0, k1) * fx;
        let c11 = c(i0, j1, k1) * (1.0 - fx) + c(i1, j1, k1) * fx;
        let c0 = c00 * (1.0 - fy) + c10 * fy;
        let c1 = c01 * (1.0 - fy) + c11 * fy;
        c0 * (1.0 - fz) + c1 * fz
    }

    /// Map intensities through a window/level ramp to roughly `[0, 1]`,
    /// without clipping: `I' = (I − (level − window/2)) / window`.
    pub fn rescale_window(&self, window: f64, level: f64) -> Result<ImageVolume> {
        if window <= 0.0 {
            return Err(Error::invalid("window must be positive"));
        }
        let lo = level - window / 2.0;
        let data = self
            .data
            .iter()
            .map(|&v| ((v as f64 - lo) / window) as f32)
            .collect();
        Ok(ImageVolume {
            dims: self.dims,
            spacing: self.spacing,
            inv_spacing: self.inv_spacing,
            origin: self.origin,
            data,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let mut write = || -> std::io::Result<()> {
            w.write_all(VOLUME_MAGIC)?;
            let header = VolumeHeader {
                dims: self.dims,
                spacing_mm: [self.spacing.x, self.spacing.y, self.spacing.z],
                origin_mm: [self.origin.x, self.origin.y, self.origin.z],
                dtype: "f32".into(),
                byte_order: "little".into(),
            };
            let mut line = serde_json::to_string(&header).expect("header serialises");
            line.push('\n');
            w.write_all(line.as_bytes())?;
            for v in &self.data {
                w.write_all(&v.to_le_bytes())?;
            }
            w.flush()
        };
        write().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<ImageVolume> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);

        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|e| Error::io(path, e))?;
        if &magic != VOLUME_MAGIC {
            return Err(VolumeFormatError::BadMagic.into());
        }

        let mut header_bytes = Vec::new();
        loop {
            let mut b = [0u8; 1];
            r.read_exact(&mut b).map_err(|e| Error::io(path, e))?;
            if b[0] == b'\n' {
                break;
            }
            header_bytes.push(b[0]);
            if header_bytes.len() > 1 << 16 {
                return Err(VolumeFormatError::BadHeader("unterminated header".into()).into());
            }
        }
        let header: VolumeHeader = serde_json::from_slice(&header_bytes)
            .map_err(|e| VolumeFormatError::BadHeader(e.to_string()))?;
        if header.dtype != "f32" {
            return Err(VolumeFormatError::UnsupportedDtype(header.dtype).into());
        }
        if header.byte_order != "little" {
            return Err(VolumeFormatError::UnsupportedByteOrder(header.byte_order).into());
        }

        let expected = header.dims[0] * header.dims[1] * header.dims[2];
        let mut payload = Vec::new();
        r.read_to_end(&mut payload).map_err(|e| Error::io(path, e))?;
        if payload.len() != expected * 4 {
            return Err(VolumeFormatError::SizeMismatch {
                expected,
                actual: payload.len() / 4,
            }
            .into());
        }
        let data: Vec<f32> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();

        ImageVolume::new(
            header.dims,
            Vector3::from_row_slice(&header.spacing_mm),
            Point3::new(header.origin_mm[0], header.origin_mm[1], header.origin_mm[2]),
            data,
        )
    }
}

#[derive(Serialize, Deserialize)]
struct VolumeHeader {
    dims: [usize; 3],
    spacing_mm: [f64; 3],
    origin_mm: [f64; 3],
    dtype: String,
    byte_order: String,
}
