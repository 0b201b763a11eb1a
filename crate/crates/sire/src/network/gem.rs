//! Gauge-equivariant mesh convolution network.
//!
//! Feature fields on the icosphere are typed by SO(2) irreps. Along each
//! directed edge `j → i` the layer applies the angle-conditioned kernel
//! `Θ_nm(θ) = ρ_n(θ) · C_nm · ρ_m(−θ)` to the parallel-transported neighbour
//! feature `ρ_m(g_{j→i}) f_m(j)`; this kernel family is the complete solution
//! of the gauge constraint `Θ(θ − g) = ρ_n(−g) Θ(θ) ρ_m(g)`, so scalar
//! outputs are exactly independent of the per-vertex gauge choice. The
//! self-interaction is constrained to `a·I + b·J` between fields of equal
//! irrep (a plain scalar for type 0) and zero otherwise; biases exist on
//! type-0 outputs only.
//!
//! The factorised edge computation used below:
//!   `u = ρ(g − θ) f(j)`, `t = C_total · u`, `y(i) += ρ(θ) t`,
//! where `C_total` is the dense block matrix of all `C_nm` and the `ρ`s act
//! blockwise per field.

use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::{compute_frames, IcosphereMesh, TangentFrameAtlas};
use crate::sampler::SphericalSignal;

use super::fields::{Architecture, FieldSig, ManifestEntry, ParamLayout};
use super::scalar::{axpy, dot, Scalar};

/// Epsilon guarding the norm nonlinearity's division.
pub const NORM_EPS: f64 = 1e-8;

/// Per-mesh precomputation shared by every forward pass: frames and, for each
/// directed edge and irrep index, the rotation coefficients for the incoming
/// transport-minus-polar angle and the outgoing polar angle.
pub struct MeshContext<F: Scalar> {
    pub mesh: Arc<IcosphereMesh>,
    pub atlas: TangentFrameAtlas,
    /// `rot[k-1]` holds the tables for irrep k, laid out per directed edge.
    rot: Vec<EdgeRotations<F>>,
}

struct EdgeRotations<F> {
    cos_in: Vec<F>,
    sin_in: Vec<F>,
    cos_out: Vec<F>,
    sin_out: Vec<F>,
}

impl<F: Scalar> MeshContext<F> {
    pub fn new(mesh: Arc<IcosphereMesh>, max_irrep: u32) -> Self {
        let atlas = compute_frames(&mesh);
        Self::with_atlas(mesh, atlas, max_irrep)
    }

    /// Build with an explicit atlas (used to probe gauge invariance).
    pub fn with_atlas(mesh: Arc<IcosphereMesh>, atlas: TangentFrameAtlas, max_irrep: u32) -> Self {
        let n_edges = mesh.directed_edge_count();
        let mut rot = Vec::new();
        for k in 1..=max_irrep {
            let mut t = EdgeRotations {
                cos_in: Vec::with_capacity(n_edges),
                sin_in: Vec::with_capacity(n_edges),
                cos_out: Vec::with_capacity(n_edges),
                sin_out: Vec::with_capacity(n_edges),
            };
            for i in 0..mesh.vertex_count() {
                for slot in 0..mesh.neighbors_of(i).len() {
                    let theta = atlas.neighbor_angle(&mesh, i, slot);
                    let g = atlas.transport_angle(&mesh, i, slot);
                    let a_in = k as f64 * (g - theta);
                    let a_out = k as f64 * theta;
                    t.cos_in.push(F::from_f64(a_in.cos()));
                    t.sin_in.push(F::from_f64(a_in.sin()));
                    t.cos_out.push(F::from_f64(a_out.cos()));
                    t.sin_out.push(F::from_f64(a_out.sin()));
                }
            }
            rot.push(t);
        }
        Self { mesh, atlas, rot }
    }
}

/// Offsets of one GEM layer's parameter blocks in the flat vector.
#[derive(Debug, Clone)]
struct GemLayerOffsets {
    neighbor: usize,
    self0: Option<usize>,
    /// `(irrep, a offset, b offset, m_out, m_in, out row offset, in row offset)`
    self_rot: Vec<(u32, usize, usize, usize, usize, usize, usize)>,
    bias: Option<usize>,
    /// Norm-nonlinearity biases for this layer's output (absent on the last
    /// layer, which is linear).
    norm_bias: Option<usize>,
}

/// The GEM network: architecture, flat parameters and the mesh context.
pub struct GemNet<F: Scalar> {
    arch: Architecture,
    sigs: Vec<FieldSig>,
    layout: ParamLayout,
    offsets: Vec<GemLayerOffsets>,
    pub params: Vec<F>,
    pub ctx: MeshContext<F>,
}

/// Build the canonical parameter manifest for a GEM architecture.
pub fn gem_manifest(arch: &Architecture) -> Result<ParamLayout> {
    arch.validate()?;
    let sigs = arch.boundary_sigs();
    let mut entries = Vec::new();
    for l in 0..arch.layers.len() {
        let (sin, sout) = (&sigs[l], &sigs[l + 1]);
        entries.push(ManifestEntry {
            name: format!("layers.{l}.neighbor"),
            shape: vec![sout.dim(), sin.dim()],
        });
        if sout.m0() > 0 && sin.m0() > 0 {
            entries.push(ManifestEntry {
                name: format!("layers.{l}.self.k0"),
                shape: vec![sout.m0(), sin.m0()],
            });
        }
        for (k, m_out, _) in sout.rot_groups() {
            if let Some((_, m_in, _)) = sin.rot_groups().iter().find(|(ki, _, _)| *ki == k) {
                entries.push(ManifestEntry {
                    name: format!("layers.{l}.self.k{k}.a"),
                    shape: vec![m_out, *m_in],
                });
                entries.push(ManifestEntry {
                    name: format!("layers.{l}.self.k{k}.b"),
                    shape: vec![m_out, *m_in],
                });
            }
        }
        if sout.m0() > 0 {
            entries.push(ManifestEntry {
                name: format!("layers.{l}.bias"),
                shape: vec![sout.m0()],
            });
        }
        if l + 1 < arch.layers.len() && sout.rot_field_count() > 0 {
            entries.push(ManifestEntry {
                name: format!("layers.{l}.norm_bias"),
                shape: vec![sout.rot_field_count()],
            });
        }
    }
    Ok(ParamLayout::new(entries))
}

fn layer_offsets(arch: &Architecture, layout: &ParamLayout) -> Vec<GemLayerOffsets> {
    let sigs = arch.boundary_sigs();
    (0..arch.layers.len())
        .map(|l| {
            let (sin, sout) = (&sigs[l], &sigs[l + 1]);
            let mut self_rot = Vec::new();
            for (k, m_out, out_off) in sout.rot_groups() {
                if let Some((_, m_in, in_off)) =
                    sin.rot_groups().iter().find(|(ki, _, _)| *ki == k)
                {
                    self_rot.push((
                        k,
                        layout.offset_of(&format!("layers.{l}.self.k{k}.a")).unwrap(),
                        layout.offset_of(&format!("layers.{l}.self.k{k}.b")).unwrap(),
                        m_out,
                        *m_in,
                        out_off,
                        *in_off,
                    ));
                }
            }
            GemLayerOffsets {
                neighbor: layout.offset_of(&format!("layers.{l}.neighbor")).unwrap(),
                self0: layout.offset_of(&format!("layers.{l}.self.k0")),
                self_rot,
                bias: layout.offset_of(&format!("layers.{l}.bias")),
                norm_bias: layout.offset_of(&format!("layers.{l}.norm_bias")),
            }
        })
        .collect()
}

/// Activations kept for the backward pass.
pub struct LayerCache<F> {
    /// Convolution output, before the nonlinearity.
    pub(crate) pre: Vec<F>,
    /// After the nonlinearity (equals `pre` on the last, linear layer).
    pub(crate) post: Vec<F>,
}

pub struct ForwardRun<F> {
    pub(crate) layers: Vec<LayerCache<F>>,
}

impl<F: Scalar> ForwardRun<F> {
    pub fn output(&self) -> &[F] {
        &self.layers.last().unwrap().post
    }
}

impl<F: Scalar> GemNet<F> {
    pub fn init(arch: Architecture, mesh: Arc<IcosphereMesh>, rng: &mut impl Rng) -> Result<Self> {
        let layout = gem_manifest(&arch)?;
        let sigs = arch.boundary_sigs();
        let mut params = vec![F::zero(); layout.total()];
        // Uniform fan-in init; neighbour sums run over ~7 contributors
        // (self + 6 neighbours).
        for l in 0..arch.layers.len() {
            let din = sigs[l].dim() as f64;
            let neighbor_limit = (3.0 / (din * 7.0)).sqrt();
            let self_limit = (3.0 / din).sqrt() * 0.5;
            for e in layout.entries() {
                let off = layout.offset_of(&e.name).unwrap();
                let prefix = format!("layers.{l}.");
                if !e.name.starts_with(&prefix) {
                    continue;
                }
                let limit = if e.name.ends_with(".neighbor") {
                    neighbor_limit
                } else if e.name.contains(".self.") {
                    self_limit
                } else {
                    0.0 // biases and norm biases start at zero
                };
                if limit > 0.0 {
                    for v in params[off..off + e.len()].iter_mut() {
                        *v = F::from_f64(rng.gen_range(-limit..limit));
                    }
                }
            }
        }
        let ctx = MeshContext::new(mesh, arch.max_irrep());
        let offsets = layer_offsets(&arch, &layout);
        Ok(Self {
            arch,
            sigs,
            layout,
            offsets,
            params,
            ctx,
        })
    }

    /// Assemble from existing parts (weights loading, gauge experiments).
    pub fn from_parts(arch: Architecture, params: Vec<F>, ctx: MeshContext<F>) -> Result<Self> {
        let layout = gem_manifest(&arch)?;
        if params.len() != layout.total() {
            return Err(Error::invalid(format!(
                "parameter vector has {} values, layout needs {}",
                params.len(),
                layout.total()
            )));
        }
        let sigs = arch.boundary_sigs();
        let offsets = layer_offsets(&arch, &layout);
        Ok(Self {
            arch,
            sigs,
            layout,
            offsets,
            params,
            ctx,
        })
    }

    /// Swap in a different mesh context (same architecture), e.g. a re-gauged
    /// atlas or a finer mesh.
    pub fn with_context(&self, ctx: MeshContext<F>) -> Self {
        Self {
            arch: self.arch.clone(),
            sigs: self.sigs.clone(),
            layout: self.layout.clone(),
            offsets: self.offsets.clone(),
            params: self.params.clone(),
            ctx,
        }
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn mesh(&self) -> &Arc<IcosphereMesh> {
        &self.ctx.mesh
    }

    fn n_vertices(&self) -> usize {
        self.ctx.mesh.vertex_count()
    }

    /// Convert an input signal to the flat row-major activation buffer.
    pub fn signal_to_input(&self, signal: &SphericalSignal) -> Result<Vec<F>> {
        if signal.channels() != self.arch.input_channels
            || signal.n_vertices() != self.n_vertices()
        {
            return Err(Error::invalid(format!(
                "signal is {}×{}, the model expects {}×{}",
                signal.n_vertices(),
                signal.channels(),
                self.n_vertices(),
                self.arch.input_channels
            )));
        }
        Ok(signal.data().iter().map(|&v| F::from_f64(v)).collect())
    }

    /// Full forward pass keeping every intermediate activation.
    pub fn forward_cached(&self, input: &[F]) -> ForwardRun<F> {
        let n = self.n_vertices();
        let n_layers = self.arch.layers.len();
        let mut layers: Vec<LayerCache<F>> = Vec::with_capacity(n_layers);
        let mut x: &[F] = input;
        for l in 0..n_layers {
            let pre = self.conv_forward(l, x);
            let post = if l + 1 < n_layers {
                self.nonlin_forward(l, &pre)
            } else {
                pre.clone()
            };
            layers.push(LayerCache { pre, post });
            x = &layers.last().unwrap().post;
            debug_assert_eq!(x.len(), n * self.sigs[l + 1].dim());
        }
        ForwardRun { layers }
    }

    /// Scalar output per vertex (converted to f64).
    pub fn forward(&self, signal: &SphericalSignal) -> Result<Vec<f64>> {
        let input = self.signal_to_input(signal)?;
        let run = self.forward_cached(&input);
        Ok(run.output().iter().map(|v| v.as_f64()).collect())
    }

    fn conv_forward(&self, l: usize, x: &[F]) -> Vec<F> {
        let mesh = &self.ctx.mesh;
        let n = self.n_vertices();
        let (sin, sout) = (&self.sigs[l], &self.sigs[l + 1]);
        let (din, dout) = (sin.dim(), sout.dim());
        let off = &self.offsets[l];
        let p = &self.params;
        let in_rot = sin.rot_groups();
        let out_rot = sout.rot_groups();
        let (m0_in, m0_out) = (sin.m0(), sout.m0());

        let mut y = vec![F::zero(); n * dout];

        // Bias on scalar outputs.
        if let Some(b) = off.bias {
            for v in 0..n {
                let row = &mut y[v * dout..v * dout + m0_out];
                for (o, slot) in row.iter_mut().enumerate() {
                    *slot = p[b + o];
                }
            }
        }

        // Self interaction.
        if let Some(s0) = off.self0 {
            for v in 0..n {
                let xr = &x[v * din..v * din + m0_in];
                let yr = &mut y[v * dout..v * dout + m0_out];
                for o in 0..m0_out {
                    yr[o] += dot(&p[s0 + o * m0_in..s0 + (o + 1) * m0_in], xr);
                }
            }
        }
        for &(_, a_off, b_off, m_out, m_in, o_off, i_off) in &off.self_rot {
            for v in 0..n {
                let xrow = &x[v * din..(v + 1) * din];
                let yrow = &mut y[v * dout..(v + 1) * dout];
                for o in 0..m_out {
                    let mut acc_x = F::zero();
                    let mut acc_y = F::zero();
                    for i in 0..m_in {
                        let a = p[a_off + o * m_in + i];
                        let b = p[b_off + o * m_in + i];
                        let vx = xrow[i_off + 2 * i];
                        let vy = xrow[i_off + 2 * i + 1];
                        // (a + bJ) v with J the 90° rotation.
                        acc_x += a * vx - b * vy;
                        acc_y += a * vy + b * vx;
                    }
                    yrow[o_off + 2 * o] += acc_x;
                    yrow[o_off + 2 * o + 1] += acc_y;
                }
            }
        }

        // Neighbour messages. The kernel is applied in transposed axpy form
        // (t += u_i · row_i of Wᵀ), which vectorises where a per-row dot
        // product stalls on the accumulator.
        let w_nb = &p[off.neighbor..off.neighbor + dout * din];
        let mut w_t = vec![F::zero(); dout * din];
        for o in 0..dout {
            for i in 0..din {
                w_t[i * dout + o] = w_nb[o * din + i];
            }
        }
        let mut u = vec![F::zero(); din];
        let mut t = vec![F::zero(); dout];
        for i in 0..n {
            let nbrs = mesh.neighbors_of(i);
            for (slot, &jn) in nbrs.iter().enumerate() {
                let j = jn as usize;
                let e = mesh.edge_id(i, slot);
                let xj = &x[j * din..(j + 1) * din];

                // u = ρ(g − θ) f(j): scalars copy, vector fields rotate.
                u[..m0_in].copy_from_slice(&xj[..m0_in]);
                for &(k, mult, goff) in &in_rot {
                    let tbl = &self.ctx.rot[(k - 1) as usize];
                    let (c, s) = (tbl.cos_in[e], tbl.sin_in[e]);
                    for f in 0..mult {
                        let vx = xj[goff + 2 * f];
                        let vy = xj[goff + 2 * f + 1];
                        u[goff + 2 * f] = c * vx - s * vy;
                        u[goff + 2 * f + 1] = s * vx + c * vy;
                    }
                }

                // t = C_total · u
                t.iter_mut().for_each(|v| *v = F::zero());
                for (idx, &uv) in u.iter().enumerate() {
                    axpy(uv, &w_t[idx * dout..(idx + 1) * dout], &mut t);
                }

                // y(i) += ρ(θ) t
                let yrow = &mut y[i * dout..(i + 1) * dout];
                for (o, t_o) in t.iter().enumerate().take(m0_out) {
                    yrow[o] += *t_o;
                }
                for &(k, mult, goff) in &out_rot {
                    let tbl = &self.ctx.rot[(k - 1) as usize];
                    let (c, s) = (tbl.cos_out[e], tbl.sin_out[e]);
                    for f in 0..mult {
                        let tx = t[goff + 2 * f];
                        let ty = t[goff + 2 * f + 1];
                        yrow[goff + 2 * f] += c * tx - s * ty;
                        yrow[goff + 2 * f + 1] += s * tx + c * ty;
                    }
                }
            }
        }
        y
    }

    fn nonlin_forward(&self, l: usize, pre: &[F]) -> Vec<F> {
        let n = self.n_vertices();
        let sout = &self.sigs[l + 1];
        let dout = sout.dim();
        let m0 = sout.m0();
        let rot = sout.rot_groups();
        let nb_off = self.offsets[l].norm_bias;
        let eps = F::from_f64(NORM_EPS);

        let mut post = vec![F::zero(); pre.len()];
        for v in 0..n {
            let prow = &pre[v * dout..(v + 1) * dout];
            let orow = &mut post[v * dout..(v + 1) * dout];
            for o in 0..m0 {
                orow[o] = if prow[o] > F::zero() {
                    prow[o]
                } else {
                    F::zero()
                };
            }
            let mut field_idx = 0usize;
            for &(_, mult, goff) in &rot {
                for f in 0..mult {
                    let vx = prow[goff + 2 * f];
                    let vy = prow[goff + 2 * f + 1];
                    let norm = (vx * vx + vy * vy).sqrt();
                    let b = nb_off
                        .map(|nb| self.params[nb + field_idx])
                        .unwrap_or_else(F::zero);
                    let gated = norm + b;
                    if gated > F::zero() {
                        let factor = gated / (norm + eps);
                        orow[goff + 2 * f] = vx * factor;
                        orow[goff + 2 * f + 1] = vy * factor;
                    }
                    field_idx += 1;
                }
            }
        }
        post
    }

    /// Reverse pass. `g_out` is the loss gradient w.r.t. the scalar output;
    /// parameter gradients are accumulated into `grad` (same layout as
    /// `params`).
    pub fn backward(&self, input: &[F], run: &ForwardRun<F>, g_out: &[F], grad: &mut [F]) {
        assert_eq!(grad.len(), self.params.len());
        let n_layers = self.arch.layers.len();
        let mut g_post: Vec<F> = g_out.to_vec();
        for l in (0..n_layers).rev() {
            let g_pre = if l + 1 < n_layers {
                self.nonlin_backward(l, &run.layers[l].pre, &g_post, grad)
            } else {
                g_post
            };
            let layer_in: &[F] = if l == 0 {
                input
            } else {
                &run.layers[l - 1].post
            };
            g_post = self.conv_backward(l, layer_in, &g_pre, grad, l > 0);
        }
    }

    fn nonlin_backward(&self, l: usize, pre: &[F], g_post: &[F], grad: &mut [F]) -> Vec<F> {
        let n = self.n_vertices();
        let sout = &self.sigs[l + 1];
        let dout = sout.dim();
        let m0 = sout.m0();
        let rot = sout.rot_groups();
        let nb_off = self.offsets[l].norm_bias;
        let eps = F::from_f64(NORM_EPS);

        let mut g_pre = vec![F::zero(); pre.len()];
        for v in 0..n {
            let prow = &pre[v * dout..(v + 1) * dout];
            let grow = &g_post[v * dout..(v + 1) * dout];
            let orow = &mut g_pre[v * dout..(v + 1) * dout];
            for o in 0..m0 {
                if prow[o] > F::zero() {
                    orow[o] = grow[o];
                }
            }
            let mut field_idx = 0usize;
            for &(_, mult, goff) in &rot {
                for f in 0..mult {
                    let vx = prow[goff + 2 * f];
                    let vy = prow[goff + 2 * f + 1];
                    let gx = grow[goff + 2 * f];
                    let gy = grow[goff + 2 * f + 1];
                    let norm = (vx * vx + vy * vy).sqrt();
                    let b = nb_off
                        .map(|nb| self.params[nb + field_idx])
                        .unwrap_or_else(F::zero);
                    let gated = norm + b;
                    if gated > F::zero() && norm > F::from_f64(1e-30) {
                        let denom = norm + eps;
                        let factor = gated / denom;
                        // d factor / d norm = (ε − b) / denom²
                        let dfactor = (eps - b) / (denom * denom);
                        let vg = vx * gx + vy * gy;
                        let radial = dfactor * vg / norm;
                        orow[goff + 2 * f] = gx * factor + vx * radial;
                        orow[goff + 2 * f + 1] = gy * factor + vy * radial;
                        if let Some(nb) = nb_off {
                            grad[nb + field_idx] += vg / denom;
                        }
                    }
                    field_idx += 1;
                }
            }
        }
        g_pre
    }

    fn conv_backward(&self, l: usize, x: &[F], g_y: &[F], grad: &mut [F], need_input_grad: bool) -> Vec<F> {
        let mesh = &self.ctx.mesh;
        let n = self.n_vertices();
        let (sin, sout) = (&self.sigs[l], &self.sigs[l + 1]);
        let (din, dout) = (sin.dim(), sout.dim());
        let off = &self.offsets[l];
        let p = &self.params;
        let in_rot = sin.rot_groups();
        let out_rot = sout.rot_groups();
        let (m0_in, m0_out) = (sin.m0(), sout.m0());

        let mut g_x = vec![F::zero(); x.len()];

        if let Some(b) = off.bias {
            for v in 0..n {
                let grow = &g_y[v * dout..v * dout + m0_out];
                for (o, g) in grow.iter().enumerate() {
                    grad[b + o] += *g;
                }
            }
        }

        if let Some(s0) = off.self0 {
            for v in 0..n {
                let xr = &x[v * din..v * din + m0_in];
                let grow = &g_y[v * dout..v * dout + m0_out];
                let gxr = &mut g_x[v * din..v * din + m0_in];
                for (o, g) in grow.iter().enumerate() {
                    axpy(*g, xr, &mut grad[s0 + o * m0_in..s0 + (o + 1) * m0_in]);
                    if need_input_grad {
                        axpy(*g, &p[s0 + o * m0_in..s0 + (o + 1) * m0_in], gxr);
                    }
                }
            }
        }
        for &(_, a_off, b_off, m_out, m_in, o_off, i_off) in &off.self_rot {
            for v in 0..n {
                let xrow = &x[v * din..(v + 1) * din];
                let grow = &g_y[v * dout..(v + 1) * dout];
                let gxrow = &mut g_x[v * din..(v + 1) * din];
                for o in 0..m_out {
                    let gx = grow[o_off + 2 * o];
                    let gy = grow[o_off + 2 * o + 1];
                    for i in 0..m_in {
                        let a = p[a_off + o * m_in + i];
                        let b = p[b_off + o * m_in + i];
                        let vx = xrow[i_off + 2 * i];
                        let vy = xrow[i_off + 2 * i + 1];
                        grad[a_off + o * m_in + i] += gx * vx + gy * vy;
                        grad[b_off + o * m_in + i] += gy * vx - gx * vy;
                        gxrow[i_off + 2 * i] += a * gx + b * gy;
                        gxrow[i_off + 2 * i + 1] += a * gy - b * gx;
                    }
                }
            }
        }

        // Neighbour messages: replay each edge, rotate the output gradient
        // back, accumulate the kernel gradient against the transported input.
        let w_nb = &p[off.neighbor..off.neighbor + dout * din];
        let mut u = vec![F::zero(); din];
        let mut g_t = vec![F::zero(); dout];
        let mut g_u = vec![F::zero(); din];
        for i in 0..n {
            let nbrs = mesh.neighbors_of(i);
            let gyrow = &g_y[i * dout..(i + 1) * dout];
            for (slot, &jn) in nbrs.iter().enumerate() {
                let j = jn as usize;
                let e = mesh.edge_id(i, slot);
                let xj = &x[j * din..(j + 1) * din];

                u[..m0_in].copy_from_slice(&xj[..m0_in]);
                for &(k, mult, goff) in &in_rot {
                    let tbl = &self.ctx.rot[(k - 1) as usize];
                    let (c, s) = (tbl.cos_in[e], tbl.sin_in[e]);
                    for f in 0..mult {
                        let vx = xj[goff + 2 * f];
                        let vy = xj[goff + 2 * f + 1];
                        u[goff + 2 * f] = c * vx - s * vy;
                        u[goff + 2 * f + 1] = s * vx + c * vy;
                    }
                }

                // g_t = ρ(θ)ᵀ g_y(i)
                g_t[..m0_out].copy_from_slice(&gyrow[..m0_out]);
                for &(k, mult, goff) in &out_rot {
                    let tbl = &self.ctx.rot[(k - 1) as usize];
                    let (c, s) = (tbl.cos_out[e], tbl.sin_out[e]);
                    for f in 0..mult {
                        let gx = gyrow[goff + 2 * f];
                        let gy = gyrow[goff + 2 * f + 1];
                        g_t[goff + 2 * f] = c * gx + s * gy;
                        g_t[goff + 2 * f + 1] = -s * gx + c * gy;
                    }
                }

                // Kernel gradient and input gradient.
                g_u.iter_mut().for_each(|g| *g = F::zero());
                for (o, gt) in g_t.iter().enumerate() {
                    axpy(*gt, &u, &mut grad[off.neighbor + o * din..off.neighbor + (o + 1) * din]);
                    if need_input_grad {
                        axpy(*gt, &w_nb[o * din..(o + 1) * din], &mut g_u);
                    }
                }

                if !need_input_grad {
                    continue;
                }
                // g_x(j) += ρ(g − θ)ᵀ g_u
                let gxj = &mut g_x[j * din..(j + 1) * din];
                for (idx, gu) in g_u.iter().enumerate().take(m0_in) {
                    gxj[idx] += *gu;
                }
                for &(k, mult, goff) in &in_rot {
                    let tbl = &self.ctx.rot[(k - 1) as usize];
                    let (c, s) = (tbl.cos_in[e], tbl.sin_in[e]);
                    for f in 0..mult {
                        let gx = g_u[goff + 2 * f];
                        let gy = g_u[goff + 2 * f + 1];
                        gxj[goff + 2 * f] += c * gx + s * gy;
                        gxj[goff + 2 * f + 1] += -s * gx + c * gy;
                    }
                }
            }
        }
        g_x
    }
}
