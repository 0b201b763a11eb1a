//! Feature-field bookkeeping: irreducible SO(2) field types, layer
//! signatures, and the flat parameter layout shared by the in-memory nets and
//! the weights file.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A group of `mult` feature fields of the same irrep index. Type-0 fields
/// are gauge-invariant scalars; a type-n field (n ≥ 1) is a 2-vector whose
/// coordinates rotate by `n·g` under a gauge rotation `g`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldGroup {
    pub irrep: u32,
    pub mult: usize,
}

impl FieldGroup {
    pub fn field_dim(&self) -> usize {
        if self.irrep == 0 {
            1
        } else {
            2
        }
    }
}

/// Ordered field signature of a layer boundary. Groups must be sorted by
/// ascending irrep with no duplicates, so the scalar block always sits at the
/// start of a vertex row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FieldSig(pub Vec<FieldGroup>);

impl FieldSig {
    pub fn scalars(mult: usize) -> Self {
        FieldSig(vec![FieldGroup { irrep: 0, mult }])
    }

    pub fn validate(&self) -> Result<()> {
        if self.0.is_empty() || self.0.iter().all(|g| g.mult == 0) {
            return Err(Error::invalid("field signature must not be empty"));
        }
        for w in self.0.windows(2) {
            if w[0].irrep >= w[1].irrep {
                return Err(Error::invalid(
                    "field groups must be sorted by ascending irrep, without duplicates",
                ));
            }
        }
        Ok(())
    }

    /// Scalar multiplicity (the irrep-0 block).
    pub fn m0(&self) -> usize {
        self.0
            .iter()
            .find(|g| g.irrep == 0)
            .map(|g| g.mult)
            .unwrap_or(0)
    }

    /// Total per-vertex dimension.
    pub fn dim(&self) -> usize {
        self.0.iter().map(|g| g.mult * g.field_dim()).sum()
    }

    /// Rotating groups as `(irrep, mult, row offset)`.
    pub fn rot_groups(&self) -> Vec<(u32, usize, usize)> {
        let mut offset = 0;
        let mut out = Vec::new();
        for g in &self.0 {
            if g.irrep > 0 {
                out.push((g.irrep, g.mult, offset));
            }
            offset += g.mult * g.field_dim();
        }
        out
    }

    /// Number of rotating (irrep ≥ 1) fields.
    pub fn rot_field_count(&self) -> usize {
        self.0.iter().filter(|g| g.irrep > 0).map(|g| g.mult).sum()
    }

    pub fn max_irrep(&self) -> u32 {
        self.0.iter().map(|g| g.irrep).max().unwrap_or(0)
    }

    pub fn is_scalar_only(&self) -> bool {
        self.0.iter().all(|g| g.irrep == 0)
    }
}

/// Network architecture: the input channel count (irrep-0 fields fed by ray
/// casting) and the output signature of every convolution layer. The last
/// layer must emit exactly one scalar field; norm nonlinearities sit between
/// convolutions (none after the last).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_channels: usize,
    pub layers: Vec<FieldSig>,
}

impl Architecture {
    /// The default estimator: 32 ray channels → two mixed scalar/vector
    /// layers → one scalar heatmap field, linear output.
    pub fn default_gem(input_channels: usize) -> Self {
        let hidden = FieldSig(vec![
            FieldGroup { irrep: 0, mult: 16 },
            FieldGroup { irrep: 1, mult: 8 },
        ]);
        Architecture {
            input_channels,
            layers: vec![hidden.clone(), hidden, FieldSig::scalars(1)],
        }
    }

    /// Scalar-only attention variant of comparable width.
    pub fn default_gat(input_channels: usize) -> Self {
        Architecture {
            input_channels,
            layers: vec![
                FieldSig::scalars(32),
                FieldSig::scalars(32),
                FieldSig::scalars(1),
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_channels < 1 {
            return Err(Error::invalid("need at least one input channel"));
        }
        if self.layers.is_empty() {
            return Err(Error::invalid("architecture needs at least one layer"));
        }
        for sig in &self.layers {
            sig.validate()?;
        }
        let last = self.layers.last().unwrap();
        if last.0.len() != 1 || last.0[0].irrep != 0 || last.0[0].mult != 1 {
            return Err(Error::invalid(
                "the final layer must emit exactly one scalar field",
            ));
        }
        Ok(())
    }

    pub fn input_sig(&self) -> FieldSig {
        FieldSig::scalars(self.input_channels)
    }

    /// Signatures at each layer boundary: input, hidden…, output.
    pub fn boundary_sigs(&self) -> Vec<FieldSig> {
        let mut sigs = vec![self.input_sig()];
        sigs.extend(self.layers.iter().cloned());
        sigs
    }

    pub fn max_irrep(&self) -> u32 {
        self.boundary_sigs()
            .iter()
            .map(|s| s.max_irrep())
            .max()
            .unwrap_or(0)
    }
}

/// One named tensor inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

impl ManifestEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Flat parameter layout: ordered named blocks with offsets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    entries: Vec<ManifestEntry>,
    offsets: Vec<usize>,
    total: usize,
}

impl ParamLayout {
    pub fn new(entries: Vec<ManifestEntry>) -> Self {
        let mut offsets = Vec::with_capacity(entries.len());
        let mut total = 0;
        for e in &entries {
            offsets.push(total);
            total += e.len();
        }
        Self {
            entries,
            offsets,
            total,
        }
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn offset_of(&self, name: &str) -> Option<usize> {
        self.entries
            .iter()
            .position(|e| e.name == name)
            .map(|i| self.offsets[i])
    }
}
