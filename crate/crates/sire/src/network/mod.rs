//! The trainable orientation estimator: gauge-equivariant mesh convolutions
//! (GEM), a feature-attention variant (GAT), norm-based equivariant
//! nonlinearities, shared-weight multi-scale application with vertex-wise max
//! aggregation, direction extraction, and the weights file format.

mod fields;
mod gat;
mod gem;
mod scalar;

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, WeightsFormatError};
use crate::geometry::{haversine_unchecked, IcosphereMesh};
use crate::sampler::SphericalSignal;

pub use fields::{Architecture, FieldGroup, FieldSig, ManifestEntry, ParamLayout};
pub use gat::{gat_manifest, GatNet, GatRun};
pub use gem::{gem_manifest, ForwardRun, GemNet, MeshContext, NORM_EPS};
pub use scalar::{Precision, Scalar};

pub const WEIGHTS_MAGIC: &[u8; 8] = b"SIREWTS1";

/// Direction-extraction separations used by the tracker initialisation and by
/// evaluation, in radians.
pub const INIT_SEPARATION: f64 = std::f64::consts::PI / 2.0;
pub const EVAL_SEPARATION: f64 = std::f64::consts::PI / 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Gem,
    Gat,
}

/// Precision-agnostic model snapshot; this is what the weights file stores
/// (payload always 32-bit floats, in manifest order).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    pub variant: Variant,
    pub arch: Architecture,
    pub values: Vec<f32>,
}

#[derive(Serialize, Deserialize)]
struct WeightsHeader {
    variant: Variant,
    architecture: Architecture,
    manifest: Vec<ManifestEntry>,
}

impl ModelWeights {
    pub fn manifest(&self) -> Result<ParamLayout> {
        match self.variant {
            Variant::Gem => gem_manifest(&self.arch),
            Variant::Gat => gat_manifest(&self.arch),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let layout = self.manifest()?;
        if layout.total() != self.values.len() {
            return Err(WeightsFormatError::SizeMismatch {
                expected: layout.total(),
                actual: self.values.len(),
            }
            .into());
        }
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let header = WeightsHeader {
            variant: self.variant,
            architecture: self.arch.clone(),
            manifest: layout.entries().to_vec(),
        };
        let mut line = serde_json::to_string(&header).expect("header serialises");
        line.push('\n');
        let mut write = || -> std::io::Result<()> {
            w.write_all(WEIGHTS_MAGIC)?;
            w.write_all(line.as_bytes())?;
            for v in &self.values {
                w.write_all(&v.to_le_bytes())?;
            }
            w.flush()
        };
        write().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<ModelWeights> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|e| Error::io(path, e))?;
        if &magic != WEIGHTS_MAGIC {
            return Err(WeightsFormatError::BadMagic.into());
        }
        let mut header_bytes = Vec::new();
        loop {
            let mut b = [0u8; 1];
            r.read_exact(&mut b).map_err(|e| Error::io(path, e))?;
            if b[0] == b'\n' {
                break;
            }
            header_bytes.push(b[0]);
            if header_bytes.len() > 1 << 20 {
                return Err(WeightsFormatError::BadHeader("unterminated header".into()).into());
            }
        }
        let header: WeightsHeader = serde_json::from_slice(&header_bytes)
            .map_err(|e| WeightsFormatError::BadHeader(e.to_string()))?;
        let layout = match header.variant {
            Variant::Gem => gem_manifest(&header.architecture),
            Variant::Gat => gat_manifest(&header.architecture),
        }?;
        if layout.entries() != header.manifest.as_slice() {
            return Err(WeightsFormatError::ManifestMismatch(
                "stored manifest differs from the canonical layout of the architecture".into(),
            )
            .into());
        }
        let mut payload = Vec::new();
        r.read_to_end(&mut payload).map_err(|e| Error::io(path, e))?;
        if payload.len() != layout.total() * 4 {
            return Err(WeightsFormatError::SizeMismatch {
                expected: layout.total(),
                actual: payload.len() / 4,
            }
            .into());
        }
        let values = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(ModelWeights {
            variant: header.variant,
            arch: header.architecture,
            values,
        })
    }
}

impl<F: Scalar> GemNet<F> {
    pub fn to_weights(&self) -> ModelWeights {
        ModelWeights {
            variant: Variant::Gem,
            arch: self.arch().clone(),
            values: self.params.iter().map(|v| v.as_f32()).collect(),
        }
    }

    pub fn from_weights(w: &ModelWeights, mesh: Arc<IcosphereMesh>) -> Result<Self> {
        if w.variant != Variant::Gem {
            return Err(Error::invalid("weights are not a GEM model"));
        }
        let params = w.values.iter().map(|&v| F::from_f32(v)).collect();
        let ctx = MeshContext::new(mesh, w.arch.max_irrep());
        GemNet::from_parts(w.arch.clone(), params, ctx)
    }
}

impl<F: Scalar> GatNet<F> {
    pub fn to_weights(&self) -> ModelWeights {
        ModelWeights {
            variant: Variant::Gat,
            arch: self.arch().clone(),
            values: self.params.iter().map(|v| v.as_f32()).collect(),
        }
    }

    pub fn from_weights(w: &ModelWeights, mesh: Arc<IcosphereMesh>) -> Result<Self> {
        if w.variant != Variant::Gat {
            return Err(Error::invalid("weights are not a GAT model"));
        }
        let params = w.values.iter().map(|&v| F::from_f32(v)).collect();
        GatNet::from_parts(w.arch.clone(), params, mesh)
    }
}

/// Output of a shared-weight multi-scale forward pass.
#[derive(Debug, Clone)]
pub struct MultiScaleOutput {
    pub scales_mm: Vec<f64>,
    /// One scalar signal per scale, in input order.
    pub per_scale: Vec<Vec<f64>>,
    /// Vertex-wise maximum across scales.
    pub max: Vec<f64>,
}

impl MultiScaleOutput {
    /// Index of the scale attaining the maximum at `vertex` (ties: the
    /// smallest scale value).
    pub fn active_scale_index(&self, vertex: usize) -> usize {
        let mut best = 0usize;
        for s in 1..self.per_scale.len() {
            let better = self.per_scale[s][vertex] > self.per_scale[best][vertex];
            let tie = self.per_scale[s][vertex] == self.per_scale[best][vertex]
                && self.scales_mm[s] < self.scales_mm[best];
            if better || tie {
                best = s;
            }
        }
        best
    }

    pub fn active_scale_mm(&self, vertex: usize) -> f64 {
        self.scales_mm[self.active_scale_index(vertex)]
    }
}

/// Anything that maps multi-scale spherical signals to scalar vertex
/// activations. The tracker and the evaluation code talk to models through
/// this surface.
pub trait Orienter: Send + Sync {
    fn mesh(&self) -> &Arc<IcosphereMesh>;
    fn input_channels(&self) -> usize;
    fn forward_scalar(&self, signal: &SphericalSignal) -> Result<Vec<f64>>;

    /// Process every scale independently with shared weights and aggregate by
    /// the vertex-wise maximum. Scales run in parallel; the result does not
    /// depend on their order beyond the per-scale list itself.
    fn forward_multiscale(
        &self,
        scales_mm: &[f64],
        signals: &[SphericalSignal],
    ) -> Result<MultiScaleOutput> {
        if scales_mm.len() != signals.len() || signals.is_empty() {
            return Err(Error::invalid("one signal per scale, at least one scale"));
        }
        let per_scale: Vec<Vec<f64>> = signals
            .par_iter()
            .map(|s| self.forward_scalar(s))
            .collect::<Result<_>>()?;
        let n = per_scale[0].len();
        let mut max = per_scale[0].clone();
        for scale in per_scale.iter().skip(1) {
            for v in 0..n {
                if scale[v] > max[v] {
                    max[v] = scale[v];
                }
            }
        }
        Ok(MultiScaleOutput {
            scales_mm: scales_mm.to_vec(),
            per_scale,
            max,
        })
    }
}

impl<F: Scalar> Orienter for GemNet<F> {
    fn mesh(&self) -> &Arc<IcosphereMesh> {
        GemNet::mesh(self)
    }
    fn input_channels(&self) -> usize {
        self.arch().input_channels
    }
    fn forward_scalar(&self, signal: &SphericalSignal) -> Result<Vec<f64>> {
        self.forward(signal)
    }
}

impl<F: Scalar> Orienter for GatNet<F> {
    fn mesh(&self) -> &Arc<IcosphereMesh> {
        &self.mesh
    }
    fn input_channels(&self) -> usize {
        self.arch().input_channels
    }
    fn forward_scalar(&self, signal: &SphericalSignal) -> Result<Vec<f64>> {
        self.forward(signal)
    }
}

/// Variant- and precision-erased model for the CLI and tracker.
pub enum AnyNet {
    GemF32(GemNet<f32>),
    GemF64(GemNet<f64>),
    GatF32(GatNet<f32>),
    GatF64(GatNet<f64>),
}

impl AnyNet {
    pub fn from_weights(
        w: &ModelWeights,
        mesh: Arc<IcosphereMesh>,
        precision: Precision,
    ) -> Result<Self> {
        Ok(match (w.variant, precision) {
            (Variant::Gem, Precision::F32) => AnyNet::GemF32(GemNet::from_weights(w, mesh)?),
            (Variant::Gem, Precision::F64) => AnyNet::GemF64(GemNet::from_weights(w, mesh)?),
            (Variant::Gat, Precision::F32) => AnyNet::GatF32(GatNet::from_weights(w, mesh)?),
            (Variant::Gat, Precision::F64) => AnyNet::GatF64(GatNet::from_weights(w, mesh)?),
        })
    }

    fn inner(&self) -> &dyn Orienter {
        match self {
            AnyNet::GemF32(n) => n,
            AnyNet::GemF64(n) => n,
            AnyNet::GatF32(n) => n,
            AnyNet::GatF64(n) => n,
        }
    }
}

impl Orienter for AnyNet {
    fn mesh(&self) -> &Arc<IcosphereMesh> {
        self.inner().mesh()
    }
    fn input_channels(&self) -> usize {
        self.inner().input_channels()
    }
    fn forward_scalar(&self, signal: &SphericalSignal) -> Result<Vec<f64>> {
        self.inner().forward_scalar(signal)
    }
}

/// The two principal directions of a scalar vertex signal.
#[derive(Debug, Clone, Copy)]
pub struct DirectionPeaks {
    pub d1: Vector3<f64>,
    pub d2: Vector3<f64>,
    pub vertex1: usize,
    pub vertex2: usize,
    pub peak1: f64,
    pub peak2: f64,
}

/// Global argmax vertex, then the argmax outside `min_separation` radians of
/// it; ties broken by lowest vertex index.
pub fn extract_directions(
    values: &[f64],
    mesh: &IcosphereMesh,
    min_separation: f64,
) -> Result<DirectionPeaks> {
    if values.len() != mesh.vertex_count() {
        return Err(Error::invalid("one value per vertex"));
    }
    let mut i1 = 0usize;
    for (i, &v) in values.iter().enumerate() {
        if v > values[i1] {
            i1 = i;
        }
    }
    let v1 = mesh.vertex(i1);
    let mut i2 = usize::MAX;
    for (i, &v) in values.iter().enumerate() {
        if haversine_unchecked(&mesh.vertex(i), &v1) < min_separation {
            continue;
        }
        if i2 == usize::MAX || v > values[i2] {
            i2 = i;
        }
    }
    // A separation of ≤ 90° can never mask the whole sphere.
    assert!(
        i2 != usize::MAX,
        "masking {min_separation} rad removed every vertex"
    );
    Ok(DirectionPeaks {
        d1: v1,
        d2: mesh.vertex(i2),
        vertex1: i1,
        vertex2: i2,
        peak1: values[i1],
        peak2: values[i2],
    })
}
