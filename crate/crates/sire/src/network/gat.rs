//! Attention-based graph convolution on the icosphere, scalar features only.
//! Purely feature-driven: no edge geometry enters the scores, which is what
//! separates this variant from the GEM convolution.
//!
//! Scoring is two-stage: shared linear maps on source and destination
//! features, additive combination, leaky rectifier, then a learned scoring
//! vector; weights normalise by softmax over `N(i) ∪ {i}`.

use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::IcosphereMesh;
use crate::sampler::SphericalSignal;

use super::fields::{Architecture, ManifestEntry, ParamLayout};
use super::scalar::Scalar;

const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone)]
struct GatLayerOffsets {
    w_dst: usize,
    w_src: usize,
    attn: usize,
    w_val: usize,
    bias: usize,
    d_in: usize,
    d_out: usize,
}

pub struct GatNet<F: Scalar> {
    arch: Architecture,
    layout: ParamLayout,
    offsets: Vec<GatLayerOffsets>,
    pub params: Vec<F>,
    pub mesh: Arc<IcosphereMesh>,
}

pub fn gat_manifest(arch: &Architecture) -> Result<ParamLayout> {
    arch.validate()?;
    if !arch.layers.iter().all(|s| s.is_scalar_only()) {
        return Err(Error::invalid(
            "the attention variant works on scalar fields only",
        ));
    }
    let sigs = arch.boundary_sigs();
    let mut entries = Vec::new();
    for l in 0..arch.layers.len() {
        let (din, dout) = (sigs[l].dim(), sigs[l + 1].dim());
        entries.push(ManifestEntry {
            name: format!("layers.{l}.w_dst"),
            shape: vec![dout, din],
        });
        entries.push(ManifestEntry {
            name: format!("layers.{l}.w_src"),
            shape: vec![dout, din],
        });
        entries.push(ManifestEntry {
            name: format!("layers.{l}.attn"),
            shape: vec![dout],
        });
        entries.push(ManifestEntry {
            name: format!("layers.{l}.w_val"),
            shape: vec![dout, din],
        });
        entries.push(ManifestEntry {
            name: format!("layers.{l}.bias"),
            shape: vec![dout],
        });
    }
    Ok(ParamLayout::new(entries))
}

fn layer_offsets(arch: &Architecture, layout: &ParamLayout) -> Vec<GatLayerOffsets> {
    let sigs = arch.boundary_sigs();
    (0..arch.layers.len())
        .map(|l| GatLayerOffsets {
            w_dst: layout.offset_of(&format!("layers.{l}.w_dst")).unwrap(),
            w_src: layout.offset_of(&format!("layers.{l}.w_src")).unwrap(),
            attn: layout.offset_of(&format!("layers.{l}.attn")).unwrap(),
            w_val: layout.offset_of(&format!("layers.{l}.w_val")).unwrap(),
            bias: layout.offset_of(&format!("layers.{l}.bias")).unwrap(),
            d_in: sigs[l].dim(),
            d_out: sigs[l + 1].dim(),
        })
        .collect()
}

pub struct GatLayerCache<F> {
    /// Attention weights per vertex over `self ∪ neighbours`, flattened in
    /// visit order.
    alpha: Vec<F>,
    pre: Vec<F>,
    post: Vec<F>,
}

pub struct GatRun<F> {
    layers: Vec<GatLayerCache<F>>,
}

impl<F: Scalar> GatRun<F> {
    pub fn output(&self) -> &[F] {
        &self.layers.last().unwrap().post
    }
}

impl<F: Scalar> GatNet<F> {
    pub fn init(arch: Architecture, mesh: Arc<IcosphereMesh>, rng: &mut impl Rng) -> Result<Self> {
        let layout = gat_manifest(&arch)?;
        let sigs = arch.boundary_sigs();
        let mut params = vec![F::zero(); layout.total()];
        for l in 0..arch.layers.len() {
            let din = sigs[l].dim() as f64;
            let limit = (3.0 / din).sqrt();
            for name in ["w_dst", "w_src", "w_val"] {
                let e = format!("layers.{l}.{name}");
                let off = layout.offset_of(&e).unwrap();
                let len = layout
                    .entries()
                    .iter()
                    .find(|en| en.name == e)
                    .unwrap()
                    .len();
                for v in params[off..off + len].iter_mut() {
                    *v = F::from_f64(rng.gen_range(-limit..limit));
                }
            }
            let attn = layout.offset_of(&format!("layers.{l}.attn")).unwrap();
            let dout = sigs[l + 1].dim();
            let alimit = (3.0 / dout as f64).sqrt();
            for v in params[attn..attn + dout].iter_mut() {
                *v = F::from_f64(rng.gen_range(-alimit..alimit));
            }
        }
        let offsets = layer_offsets(&arch, &layout);
        Ok(Self {
            arch,
            layout,
            offsets,
            params,
            mesh,
        })
    }

    pub fn from_parts(arch: Architecture, params: Vec<F>, mesh: Arc<IcosphereMesh>) -> Result<Self> {
        let layout = gat_manifest(&arch)?;
        if params.len() != layout.total() {
            return Err(Error::invalid(format!(
                "parameter vector has {} values, layout needs {}",
                params.len(),
                layout.total()
            )));
        }
        let offsets = layer_offsets(&arch, &layout);
        Ok(Self {
            arch,
            layout,
            offsets,
            params,
            mesh,
        })
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn signal_to_input(&self, signal: &SphericalSignal) -> Result<Vec<F>> {
        if signal.channels() != self.arch.input_channels
            || signal.n_vertices() != self.mesh.vertex_count()
        {
            return Err(Error::invalid("signal shape does not match the model"));
        }
        Ok(signal.data().iter().map(|&v| F::from_f64(v)).collect())
    }

    pub fn forward(&self, signal: &SphericalSignal) -> Result<Vec<f64>> {
        let input = self.signal_to_input(signal)?;
        let run = self.forward_cached(&input);
        Ok(run.output().iter().map(|v| v.as_f64()).collect())
    }

    pub fn forward_cached(&self, input: &[F]) -> GatRun<F> {
        let n_layers = self.arch.layers.len();
        let mut layers: Vec<GatLayerCache<F>> = Vec::with_capacity(n_layers);
        let mut x: &[F] = input;
        for l in 0..n_layers {
            let (pre, alpha) = self.layer_forward(l, x);
            let post = if l + 1 < n_layers {
                pre.iter()
                    .map(|&v| if v > F::zero() { v } else { F::zero() })
                    .collect()
            } else {
                pre.clone()
            };
            layers.push(GatLayerCache { alpha, pre, post });
            x = &layers.last().unwrap().post;
        }
        GatRun { layers }
    }

    /// Visit order for vertex `i`: self first, then neighbours in CSR order.
    fn layer_forward(&self, l: usize, x: &[F]) -> (Vec<F>, Vec<F>) {
        let off = &self.offsets[l];
        let (din, dout) = (off.d_in, off.d_out);
        let n = self.mesh.vertex_count();
        let p = &self.params;
        let slope = F::from_f64(LEAKY_SLOPE);

        let matvec = |w_off: usize, row: &[F], out: &mut [F]| {
            for (o, slot) in out.iter_mut().enumerate() {
                let wrow = &p[w_off + o * din..w_off + (o + 1) * din];
                let mut acc = F::zero();
                for (w, v) in wrow.iter().zip(row) {
                    acc += *w * *v;
                }
                *slot = acc;
            }
        };

        let mut y = vec![F::zero(); n * dout];
        let mut alpha_all = Vec::with_capacity(n * 7);
        let mut dst_part = vec![F::zero(); dout];
        let mut src_part = vec![F::zero(); dout];
        let mut logits: Vec<F> = Vec::with_capacity(8);
        for i in 0..n {
            let nbrs = self.mesh.neighbors_of(i);
            matvec(off.w_dst, &x[i * din..(i + 1) * din], &mut dst_part);

            logits.clear();
            for peer in std::iter::once(i).chain(nbrs.iter().map(|&j| j as usize)) {
                matvec(off.w_src, &x[peer * din..(peer + 1) * din], &mut src_part);
                let mut score = F::zero();
                for o in 0..dout {
                    let z = dst_part[o] + src_part[o];
                    let lrelu = if z > F::zero() { z } else { slope * z };
                    score += p[off.attn + o] * lrelu;
                }
                logits.push(score);
            }

            // Stable softmax over self ∪ neighbours.
            let mx = logits.iter().cloned().fold(F::neg_infinity(), F::max);
            let mut sum = F::zero();
            for v in logits.iter_mut() {
                *v = (*v - mx).exp();
                sum += *v;
            }
            for v in logits.iter_mut() {
                *v = *v / sum;
            }

            let yrow = &mut y[i * dout..(i + 1) * dout];
            for o in 0..dout {
                yrow[o] = p[off.bias + o];
            }
            for (idx, peer) in std::iter::once(i)
                .chain(nbrs.iter().map(|&j| j as usize))
                .enumerate()
            {
                let a = logits[idx];
                matvec(off.w_val, &x[peer * din..(peer + 1) * din], &mut src_part);
                for o in 0..dout {
                    yrow[o] += a * src_part[o];
                }
            }
            alpha_all.extend_from_slice(&logits);
        }
        (y, alpha_all)
    }

    pub fn backward(&self, input: &[F], run: &GatRun<F>, g_out: &[F], grad: &mut [F]) {
        assert_eq!(grad.len(), self.params.len());
        let n_layers = self.arch.layers.len();
        let mut g_post: Vec<F> = g_out.to_vec();
        for l in (0..n_layers).rev() {
            let g_pre: Vec<F> = if l + 1 < n_layers {
                run.layers[l]
                    .pre
                    .iter()
                    .zip(&g_post)
                    .map(|(&p, &g)| if p > F::zero() { g } else { F::zero() })
                    .collect()
            } else {
                g_post
            };
            let layer_in: &[F] = if l == 0 {
                input
            } else {
                &run.layers[l - 1].post
            };
            g_post = self.layer_backward(l, layer_in, &run.layers[l].alpha, &g_pre, grad);
        }
    }

    fn layer_backward(
        &self,
        l: usize,
        x: &[F],
        alpha: &[F],
        g_y: &[F],
        grad: &mut [F],
    ) -> Vec<F> {
        let off = &self.offsets[l];
        let (din, dout) = (off.d_in, off.d_out);
        let n = self.mesh.vertex_count();
        let p = &self.params;
        let slope = F::from_f64(LEAKY_SLOPE);

        let matvec = |w_off: usize, row: &[F], out: &mut [F]| {
            for (o, slot) in out.iter_mut().enumerate() {
                let wrow = &p[w_off + o * din..w_off + (o + 1) * din];
                let mut acc = F::zero();
                for (w, v) in wrow.iter().zip(row) {
                    acc += *w * *v;
                }
                *slot = acc;
            }
        };

        let mut g_x = vec![F::zero(); x.len()];
        let mut dst_part = vec![F::zero(); dout];
        let mut src_part = vec![F::zero(); dout];
        let mut g_alpha: Vec<F> = Vec::with_capacity(8);
        let mut g_z = vec![F::zero(); dout];
        let mut cursor = 0usize;
        for i in 0..n {
            let nbrs = self.mesh.neighbors_of(i);
            let peers: Vec<usize> = std::iter::once(i)
                .chain(nbrs.iter().map(|&j| j as usize))
                .collect();
            let a = &alpha[cursor..cursor + peers.len()];
            cursor += peers.len();
            let gyrow = &g_y[i * dout..(i + 1) * dout];

            for (o, g) in gyrow.iter().enumerate() {
                grad[off.bias + o] += *g;
            }

            // Value path: y_i = Σ α_e W_val x_e.
            g_alpha.clear();
            for (&peer, &a_e) in peers.iter().zip(a) {
                let xr = &x[peer * din..(peer + 1) * din];
                matvec(off.w_val, xr, &mut src_part);
                let mut ga = F::zero();
                for o in 0..dout {
                    ga += gyrow[o] * src_part[o];
                    let gv = a_e * gyrow[o];
                    let wrow = &mut grad[off.w_val + o * din..off.w_val + (o + 1) * din];
                    for (w, xv) in wrow.iter_mut().zip(xr) {
                        *w += gv * *xv;
                    }
                }
                let gxr = &mut g_x[peer * din..(peer + 1) * din];
                for (idx, gx) in gxr.iter_mut().enumerate() {
                    let mut acc = F::zero();
                    for o in 0..dout {
                        acc += p[off.w_val + o * din + idx] * (a_e * gyrow[o]);
                    }
                    *gx += acc;
                }
                g_alpha.push(ga);
            }

            // Softmax backward: g_logit = α ⊙ (g_α − Σ α g_α).
            let mut dot = F::zero();
            for (&a_e, &ga) in a.iter().zip(&g_alpha) {
                dot += a_e * ga;
            }

            matvec(off.w_dst, &x[i * din..(i + 1) * din], &mut dst_part);
            for ((&peer, &a_e), &ga) in peers.iter().zip(a).zip(&g_alpha) {
                let g_logit = a_e * (ga - dot);
                if g_logit == F::zero() {
                    continue;
                }
                let xr = &x[peer * din..(peer + 1) * din];
                matvec(off.w_src, xr, &mut src_part);
                // score = Σ attn_o · lrelu(dst_o + src_o)
                for o in 0..dout {
                    let z = dst_part[o] + src_part[o];
                    let (lrelu, dz) = if z > F::zero() {
                        (z, F::one())
                    } else {
                        (slope * z, slope)
                    };
                    grad[off.attn + o] += g_logit * lrelu;
                    g_z[o] = g_logit * p[off.attn + o] * dz;
                }
                let xi = &x[i * din..(i + 1) * din];
                for (o, gz) in g_z.iter().enumerate() {
                    let wdst = &mut grad[off.w_dst + o * din..off.w_dst + (o + 1) * din];
                    for (w, xv) in wdst.iter_mut().zip(xi) {
                        *w += *gz * *xv;
                    }
                    let wsrc = &mut grad[off.w_src + o * din..off.w_src + (o + 1) * din];
                    for (w, xv) in wsrc.iter_mut().zip(xr) {
                        *w += *gz * *xv;
                    }
                }
                for idx in 0..din {
                    let mut acc_dst = F::zero();
                    let mut acc_src = F::zero();
                    for (o, gz) in g_z.iter().enumerate() {
                        acc_dst += p[off.w_dst + o * din + idx] * *gz;
                        acc_src += p[off.w_src + o * din + idx] * *gz;
                    }
                    g_x[i * din + idx] += acc_dst;
                    g_x[peer * din + idx] += acc_src;
                }
            }
        }
        g_x
    }
}
