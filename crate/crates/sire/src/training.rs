//! Optimisation of estimator parameters on streams of training samples:
//! the mean-squared-error objective (against the heatmap for positives, the
//! zero signal for negatives), per-sample adaptive-moment updates, randomized
//! scales, checkpointing, and finite-difference gradient verification.

use std::fs::File;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{build_icosphere, IcosphereMesh};
use crate::network::{
    Architecture, ForwardRun, GatNet, GatRun, GemNet, ModelWeights, Orienter, Precision, Scalar,
    Variant,
};
use crate::sampler::{draw_sample, Dataset, SamplerConfig, ScaleSet, SphericalSignal, TrainingSample};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Training configuration; serialises to the JSON config file consumed by the
/// command-line `train` subcommand.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_samples_per_epoch")]
    pub samples_per_epoch: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_scales")]
    pub scales: ScaleSet,
    #[serde(default)]
    pub sampler: SamplerConfig,
    #[serde(default)]
    pub seed: u64,
    /// Checkpoint cadence in epochs; 0 disables checkpoints.
    #[serde(default)]
    pub checkpoint_every: usize,
    #[serde(default)]
    pub precision: Precision,
    #[serde(default = "default_variant")]
    pub variant: Variant,
    /// Icosphere subdivision level of the estimator's domain.
    #[serde(default = "default_subdivisions")]
    pub subdivisions: u32,
    /// Explicit architecture; defaults to the variant's standard layout fed
    /// by `sampler.channels` ray channels.
    #[serde(default)]
    pub architecture: Option<Architecture>,
}

fn default_epochs() -> usize {
    300
}
fn default_samples_per_epoch() -> usize {
    256
}
fn default_lr() -> f64 {
    1e-4
}
fn default_scales() -> ScaleSet {
    ScaleSet::Uniform {
        lo_mm: 1.0,
        hi_mm: 30.0,
        count: 8,
    }
}
fn default_variant() -> Variant {
    Variant::Gem
}
fn default_subdivisions() -> u32 {
    3
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: default_epochs(),
            samples_per_epoch: default_samples_per_epoch(),
            learning_rate: default_lr(),
            scales: default_scales(),
            sampler: SamplerConfig::default(),
            seed: 0,
            checkpoint_every: 0,
            precision: Precision::default(),
            variant: default_variant(),
            subdivisions: default_subdivisions(),
            architecture: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.samples_per_epoch == 0 {
            return Err(Error::invalid("epochs and samples per epoch must be ≥ 1"));
        }
        if self.learning_rate < 0.0 {
            return Err(Error::invalid("learning rate must be non-negative"));
        }
        self.scales.validate()?;
        if !(0.0..=1.0).contains(&self.sampler.negative_probability) {
            return Err(Error::invalid("negative probability must be in [0, 1]"));
        }
        Ok(())
    }

    pub fn resolve_architecture(&self) -> Architecture {
        self.architecture.clone().unwrap_or_else(|| match self.variant {
            Variant::Gem => Architecture::default_gem(self.sampler.channels),
            Variant::Gat => Architecture::default_gat(self.sampler.channels),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_reader(std::io::BufReader::new(file)).map_err(|e| Error::Json {
            path: path.into(),
            source: e,
        })
    }
}

/// Per-epoch loss summary, also the CSV row format.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub mean_pos_loss: f64,
    pub mean_neg_loss: f64,
}

pub fn save_history(history: &[EpochStats], path: &Path) -> Result<()> {
    let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut write = || -> std::io::Result<()> {
        writeln!(file, "epoch,mean_loss,mean_pos_loss,mean_neg_loss")?;
        for h in history {
            writeln!(
                file,
                "{},{},{},{}",
                h.epoch, h.mean_loss, h.mean_pos_loss, h.mean_neg_loss
            )?;
        }
        Ok(())
    };
    write().map_err(|e| Error::io(path, e))
}

pub struct TrainOutcome {
    pub weights: ModelWeights,
    pub history: Vec<EpochStats>,
}

/// Mean-squared-error objective on the aggregated output: positives compare
/// against the target heatmap, negatives against the zero signal.
pub fn loss(f_max: &[f64], target: Option<&SphericalSignal>) -> Result<f64> {
    if let Some(t) = target {
        if t.n_vertices() != f_max.len() || t.channels() != 1 {
            return Err(Error::invalid("target shape mismatch"));
        }
    }
    let n = f_max.len() as f64;
    let sum: f64 = match target {
        Some(t) => f_max
            .iter()
            .enumerate()
            .map(|(v, &p)| {
                let d = p - t.get(v, 0);
                d * d
            })
            .sum(),
        None => f_max.iter().map(|&p| p * p).sum(),
    };
    Ok(sum / n)
}

/// Internal surface the optimiser drives; implemented by both network
/// variants at both precisions.
pub(crate) trait Trainable<F: Scalar>: Orienter + Sized {
    type Run: Send + Sync;
    fn params(&self) -> &[F];
    fn params_mut(&mut self) -> &mut [F];
    fn to_weights_snapshot(&self) -> ModelWeights;
    fn input_of(&self, signal: &SphericalSignal) -> Result<Vec<F>>;
    fn run_forward(&self, input: &[F]) -> Self::Run;
    fn run_output<'a>(&self, run: &'a Self::Run) -> &'a [F];
    fn run_backward(&self, input: &[F], run: &Self::Run, g_out: &[F], grad: &mut [F]);
}

impl<F: Scalar> Trainable<F> for GemNet<F> {
    type Run = ForwardRun<F>;
    fn params(&self) -> &[F] {
        &self.params
    }
    fn params_mut(&mut self) -> &mut [F] {
        &mut self.params
    }
    fn to_weights_snapshot(&self) -> ModelWeights {
        self.to_weights()
    }
    fn input_of(&self, signal: &SphericalSignal) -> Result<Vec<F>> {
        self.signal_to_input(signal)
    }
    fn run_forward(&self, input: &[F]) -> Self::Run {
        self.forward_cached(input)
    }
    fn run_output<'a>(&self, run: &'a Self::Run) -> &'a [F] {
        run.output()
    }
    fn run_backward(&self, input: &[F], run: &Self::Run, g_out: &[F], grad: &mut [F]) {
        self.backward(input, run, g_out, grad)
    }
}

impl<F: Scalar> Trainable<F> for GatNet<F> {
    type Run = GatRun<F>;
    fn params(&self) -> &[F] {
        &self.params
    }
    fn params_mut(&mut self) -> &mut [F] {
        &mut self.params
    }
    fn to_weights_snapshot(&self) -> ModelWeights {
        self.to_weights()
    }
    fn input_of(&self, signal: &SphericalSignal) -> Result<Vec<F>> {
        self.signal_to_input(signal)
    }
    fn run_forward(&self, input: &[F]) -> Self::Run {
        self.forward_cached(input)
    }
    fn run_output<'a>(&self, run: &'a Self::Run) -> &'a [F] {
        run.output()
    }
    fn run_backward(&self, input: &[F], run: &Self::Run, g_out: &[F], grad: &mut [F]) {
        self.backward(input, run, g_out, grad)
    }
}

/// Forward the sample through every scale, aggregate by vertex-wise max and
/// compute the loss; when `grad` is given, also run the reverse pass. The
/// gradient of the max routes each vertex to its winning scale (ties go to
/// the smallest scale value, which keeps duplicated and permuted scale lists
/// on identical trajectories).
pub(crate) fn loss_and_grad<F: Scalar, N: Trainable<F>>(
    net: &N,
    sample: &TrainingSample,
    grad: Option<&mut [F]>,
) -> Result<f64> {
    let inputs: Vec<Vec<F>> = sample
        .inputs
        .iter()
        .map(|s| net.input_of(s))
        .collect::<Result<_>>()?;
    let runs: Vec<N::Run> = inputs.par_iter().map(|i| net.run_forward(i)).collect();
    let n = net.mesh().vertex_count();

    let mut f_max = vec![f64::NEG_INFINITY; n];
    let mut winner = vec![0usize; n];
    for (s, run) in runs.iter().enumerate() {
        let out = net.run_output(run);
        for v in 0..n {
            let val = out[v].as_f64();
            let better = val > f_max[v];
            let tie = val == f_max[v] && sample.scales_mm[s] < sample.scales_mm[winner[v]];
            if better || tie {
                f_max[v] = val;
                winner[v] = s;
            }
        }
    }

    let loss_value = loss(&f_max, sample.target.as_ref())?;

    if let Some(grad) = grad {
        // d loss / d f_max, then routed to the winning scale per vertex.
        let scale_count = runs.len();
        let mut g_scale: Vec<Vec<F>> = vec![vec![F::zero(); n]; scale_count];
        for v in 0..n {
            let target = sample.target.as_ref().map(|t| t.get(v, 0)).unwrap_or(0.0);
            let g = 2.0 * (f_max[v] - target) / n as f64;
            g_scale[winner[v]][v] = F::from_f64(g);
        }
        let partials: Vec<Vec<F>> = runs
            .par_iter()
            .zip(inputs.par_iter())
            .zip(g_scale.par_iter())
            .map(|((run, input), g_out)| {
                let mut g = vec![F::zero(); net.params().len()];
                net.run_backward(input, run, g_out, &mut g);
                g
            })
            .collect();
        for partial in partials {
            for (g, p) in grad.iter_mut().zip(partial) {
                *g += p;
            }
        }
    }
    Ok(loss_value)
}

pub(crate) struct AdamState<F> {
    m: Vec<F>,
    v: Vec<F>,
    t: u64,
}

impl<F: Scalar> AdamState<F> {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![F::zero(); n],
            v: vec![F::zero(); n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [F], grad: &[F], lr: f64) {
        self.t += 1;
        let b1 = F::from_f64(ADAM_BETA1);
        let b2 = F::from_f64(ADAM_BETA2);
        let eps = F::from_f64(ADAM_EPS);
        let one = F::one();
        let bc1 = F::from_f64(1.0 - ADAM_BETA1.powi(self.t as i32));
        let bc2 = F::from_f64(1.0 - ADAM_BETA2.powi(self.t as i32));
        let lr = F::from_f64(lr);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = b1 * self.m[i] + (one - b1) * g;
            self.v[i] = b2 * self.v[i] + (one - b2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] = params[i] - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

fn train_net<F: Scalar, N: Trainable<F>>(
    net: &mut N,
    dataset: &Dataset,
    cfg: &TrainConfig,
    mesh: &IcosphereMesh,
    checkpoint_dir: Option<&Path>,
) -> Result<Vec<EpochStats>> {
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::new(net.params().len());
    let mut grad = vec![F::zero(); net.params().len()];
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut global_step = 0usize;

    for epoch in 0..cfg.epochs {
        let mut sum = 0.0;
        let mut pos = (0.0, 0usize);
        let mut neg = (0.0, 0usize);
        for _ in 0..cfg.samples_per_epoch {
            let sample = draw_sample(dataset, &cfg.scales, mesh, &cfg.sampler, &mut rng)?;
            grad.iter_mut().for_each(|g| *g = F::zero());
            let l = loss_and_grad(net, &sample, Some(&mut grad))?;
            if !l.is_finite() {
                return Err(Error::NonFiniteLoss {
                    sample: global_step,
                    scales: sample.scales_mm.clone(),
                });
            }
            adam.step(net.params_mut(), &grad, cfg.learning_rate);
            sum += l;
            if sample.is_negative() {
                neg = (neg.0 + l, neg.1 + 1);
            } else {
                pos = (pos.0 + l, pos.1 + 1);
            }
            global_step += 1;
        }
        history.push(EpochStats {
            epoch,
            mean_loss: sum / cfg.samples_per_epoch as f64,
            mean_pos_loss: if pos.1 > 0 { pos.0 / pos.1 as f64 } else { 0.0 },
            mean_neg_loss: if neg.1 > 0 { neg.0 / neg.1 as f64 } else { 0.0 },
        });

        if cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0 {
            if let Some(dir) = checkpoint_dir {
                write_checkpoint(&net.to_weights_snapshot(), dir, epoch + 1)?;
            }
        }
    }
    Ok(history)
}

/// Atomic checkpoint write: temp file in the same directory, then rename.
fn write_checkpoint(weights: &ModelWeights, dir: &Path, epoch: usize) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let tmp = dir.join(format!(".checkpoint_{epoch:05}.swts.tmp"));
    weights.save(&tmp)?;
    let final_path = dir.join(format!("checkpoint_{epoch:05}.swts"));
    std::fs::rename(&tmp, &final_path).map_err(|e| Error::io(&final_path, e))?;
    Ok(())
}

/// Train a fresh model of the configured variant and precision.
pub fn train(
    dataset: &Dataset,
    cfg: &TrainConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::invalid("training dataset is empty"));
    }
    let arch = cfg.resolve_architecture();
    if arch.input_channels != cfg.sampler.channels {
        return Err(Error::invalid(
            "architecture input channels must match the sampler channel count",
        ));
    }
    let mesh = Arc::new(build_icosphere(cfg.subdivisions)?);
    let mut init_rng = ChaCha12Rng::seed_from_u64(cfg.seed ^ 0x5eed_1717);
    match (cfg.variant, cfg.precision) {
        (Variant::Gem, Precision::F32) => {
            let mut net: GemNet<f32> = GemNet::init(arch, mesh.clone(), &mut init_rng)?;
            let history = train_net(&mut net, dataset, cfg, &mesh, checkpoint_dir)?;
            Ok(TrainOutcome {
                weights: net.to_weights(),
                history,
            })
        }
        (Variant::Gem, Precision::F64) => {
            let mut net: GemNet<f64> = GemNet::init(arch, mesh.clone(), &mut init_rng)?;
            let history = train_net(&mut net, dataset, cfg, &mesh, checkpoint_dir)?;
            Ok(TrainOutcome {
                weights: net.to_weights(),
                history,
            })
        }
        (Variant::Gat, Precision::F32) => {
            let mut net: GatNet<f32> = GatNet::init(arch, mesh.clone(), &mut init_rng)?;
            let history = train_net(&mut net, dataset, cfg, &mesh, checkpoint_dir)?;
            Ok(TrainOutcome {
                weights: net.to_weights(),
                history,
            })
        }
        (Variant::Gat, Precision::F64) => {
            let mut net: GatNet<f64> = GatNet::init(arch, mesh.clone(), &mut init_rng)?;
            let history = train_net(&mut net, dataset, cfg, &mesh, checkpoint_dir)?;
            Ok(TrainOutcome {
                weights: net.to_weights(),
                history,
            })
        }
    }
}

/// Compare analytic gradients against 64-bit central finite differences with
/// `h = 1e-5·(1 + |θ|)` on `n_params` randomly chosen parameters; returns the
/// maximum relative error `|a − f| / max(|a|, |f|, 1)`.
pub fn gradient_check(
    weights: &ModelWeights,
    sample: &TrainingSample,
    mesh: Arc<IcosphereMesh>,
    n_params: usize,
    seed: u64,
) -> Result<f64> {
    match weights.variant {
        Variant::Gem => {
            let net: GemNet<f64> = GemNet::from_weights(weights, mesh)?;
            gradient_check_net(net, sample, n_params, seed)
        }
        Variant::Gat => {
            let net: GatNet<f64> = GatNet::from_weights(weights, mesh)?;
            gradient_check_net(net, sample, n_params, seed)
        }
    }
}

fn gradient_check_net<N: Trainable<f64>>(
    mut net: N,
    sample: &TrainingSample,
    n_params: usize,
    seed: u64,
) -> Result<f64> {
    let total = net.params().len();
    let mut analytic = vec![0.0f64; total];
    loss_and_grad(&net, sample, Some(&mut analytic))?;

    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut indices: Vec<usize> = if n_params >= total {
        (0..total).collect()
    } else {
        let mut set = std::collections::HashSet::new();
        while set.len() < n_params {
            set.insert(rng.gen_range(0..total));
        }
        set.into_iter().collect()
    };
    indices.sort_unstable();

    let mut worst = 0.0f64;
    for idx in indices {
        let theta = net.params()[idx];
        let h = 1e-5 * (1.0 + theta.abs());
        net.params_mut()[idx] = theta + h;
        let lp = loss_and_grad(&net, sample, None)?;
        net.params_mut()[idx] = theta - h;
        let lm = loss_and_grad(&net, sample, None)?;
        net.params_mut()[idx] = theta;
        let fd = (lp - lm) / (2.0 * h);
        let a = analytic[idx];
        let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1.0);
        if rel > worst {
            worst = rel;
        }
    }
    Ok(worst)
}


/// Timing probe used by the calibration harness: one full loss+gradient
/// evaluation on an f32 GEM model.
#[doc(hidden)]
pub fn profile_step(net: &GemNet<f32>, sample: &TrainingSample) -> f64 {
    let mut grad = vec![0.0f32; net.params.len()];
    loss_and_grad(net, sample, Some(&mut grad)).unwrap()
}
