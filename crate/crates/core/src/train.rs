//! Surrogate-gradient BPTT, spike-count cross-entropy, optimizers and the
//! train/evaluate loops.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::neuron::{Activation, Network};
use crate::rng::{stream, Stream};
use crate::spike::{SampleFilter, SpikeSet, SpikeTensor};

/// Fast-sigmoid surrogate derivative `1 / (1 + k|u|)²` of the spike step at
/// `u = mem − theta`.
#[inline]
pub fn surrogate_grad(u: f64, k: f64) -> f64 {
    let d = 1.0 + k * u.abs();
    1.0 / (d * d)
}

/// Recorded forward pass of one layer. All buffers are row-major `[T × width]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerTrace {
    pub inputs: Vec<f64>,
    pub syn: Vec<f64>,
    pub mem: Vec<f64>,
    pub spikes: Vec<f64>,
}

/// Everything reverse-mode differentiation needs from an unrolled forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace {
    pub timesteps: usize,
    pub activation: Activation,
    pub layers: Vec<LayerTrace>,
}

impl ForwardTrace {
    /// Per-neuron spike totals of the last layer.
    pub fn output_counts(&self) -> Vec<f64> {
        let last = self.layers.last().expect("trace of a nonempty network");
        let width = last.spikes.len() / self.timesteps;
        let mut counts = vec![0.0; width];
        for row in last.spikes.chunks_exact(width) {
            for (c, s) in counts.iter_mut().zip(row) {
                *c += s;
            }
        }
        counts
    }
}

/// Runs `net` on `input` recording every intermediate quantity.
pub fn forward_trace(net: &Network, input: &SpikeTensor, act: Activation) -> Result<ForwardTrace> {
    if net.is_empty() {
        return Err(invalid("cannot trace an empty network"));
    }
    if net.input_size() != Some(input.neurons()) {
        return Err(invalid(format!(
            "input has {} neurons, network expects {:?}",
            input.neurons(),
            net.input_size()
        )));
    }
    let steps = input.timesteps();
    let mut x_all: Vec<f64> = (0..steps).flat_map(|t| input.row_f64(t)).collect();
    let mut layers = Vec::with_capacity(net.len());
    for (li, layer) in net.layers().iter().enumerate() {
        let (n_in, n_out) = (layer.inputs(), layer.outputs());
        let mut syn_all = vec![0.0; steps * n_out];
        let mut mem_all = vec![0.0; steps * n_out];
        let mut spk_all = vec![0.0; steps * n_out];
        let mut syn = vec![0.0; n_out];
        let mut mem = vec![0.0; n_out];
        let mut prev = vec![0.0; n_out];
        let mut cur = vec![0.0; n_out];
        for t in 0..steps {
            let x = &x_all[t * n_in..(t + 1) * n_in];
            layer.step_kernel(x, &mut syn, &mut mem, &prev, &mut cur, act);
            if let Some(i) = mem.iter().position(|m| !m.is_finite()) {
                return Err(Error::Numeric {
                    layer: li,
                    timestep: t,
                    detail: format!("membrane of neuron {i} is {}", mem[i]),
                });
            }
            syn_all[t * n_out..(t + 1) * n_out].copy_from_slice(&syn);
            mem_all[t * n_out..(t + 1) * n_out].copy_from_slice(&mem);
            spk_all[t * n_out..(t + 1) * n_out].copy_from_slice(&cur);
            std::mem::swap(&mut prev, &mut cur);
        }
        let next_x = spk_all.clone();
        layers.push(LayerTrace {
            inputs: std::mem::replace(&mut x_all, next_x),
            syn: syn_all,
            mem: mem_all,
            spikes: spk_all,
        });
    }
    Ok(ForwardTrace {
        timesteps: steps,
        activation: act,
        layers,
    })
}

/// Softmax cross-entropy over per-class spike counts. Returns the loss and
/// its gradient with respect to the counts.
pub fn count_cross_entropy(counts: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if label >= counts.len() {
        return Err(invalid(format!(
            "label {label} out of range for {} classes",
            counts.len()
        )));
    }
    let max = counts.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = counts.iter().map(|c| (c - max).exp()).collect();
    let z: f64 = exp.iter().sum();
    let loss = z.ln() + max - counts[label];
    let mut grad: Vec<f64> = exp.iter().map(|e| e / z).collect();
    grad[label] -= 1.0;
    Ok((loss, grad))
}

pub fn loss_spike_count_ce(output: &SpikeTensor, label: usize) -> Result<(f64, Vec<f64>)> {
    let counts: Vec<f64> = output
        .counts_per_neuron()
        .into_iter()
        .map(f64::from)
        .collect();
    count_cross_entropy(&counts, label)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrad {
    pub w: Vec<f64>,
    pub v: Vec<f64>,
}

/// Parameter gradients, one entry per layer of the differentiated network.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        Self {
            layers: net
                .layers()
                .iter()
                .map(|l| LayerGrad {
                    w: vec![0.0; l.w().len()],
                    v: vec![0.0; l.v().len()],
                })
                .collect(),
        }
    }

    fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.w.iter_mut().zip(&b.w).for_each(|(x, y)| *x += y);
            a.v.iter_mut().zip(&b.v).for_each(|(x, y)| *x += y);
        }
    }

    fn scale(&mut self, s: f64) {
        for l in &mut self.layers {
            l.w.iter_mut().chain(l.v.iter_mut()).for_each(|x| *x *= s);
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.w.iter().chain(&l.v))
            .fold(0.0, |m, x| m.max(x.abs()))
    }
}

/// Reverse-mode gradients of the unrolled network through time, with the
/// spike derivative replaced by [`surrogate_grad`]. Gradients flow through
/// the recurrent weights and the soft-reset term. `loss_grad` is the
/// derivative of the loss with respect to the output spike counts.
pub fn bptt_backward(
    net: &Network,
    trace: &ForwardTrace,
    loss_grad: &[f64],
    slope: f64,
) -> Result<Gradients> {
    if trace.layers.len() != net.len() {
        return Err(invalid("trace does not match network depth"));
    }
    let steps = trace.timesteps;
    let out_width = net.output_size().unwrap_or(0);
    if loss_grad.len() != out_width {
        return Err(invalid(format!(
            "loss gradient has {} entries, expected {out_width}",
            loss_grad.len()
        )));
    }
    if let Some(i) = loss_grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::Numeric {
            layer: net.len() - 1,
            timestep: steps,
            detail: format!("loss gradient entry {i} is non-finite"),
        });
    }

    let mut grads = Gradients::zeros_like(net);
    // dL/ds_t for the layer currently being processed.
    let mut g_spikes: Vec<f64> = (0..steps).flat_map(|_| loss_grad.iter().copied()).collect();

    for li in (0..net.len()).rev() {
        let layer = &net.layers()[li];
        let lt = &trace.layers[li];
        let p = layer.params();
        let (n_in, n_out) = (layer.inputs(), layer.outputs());
        let need_dx = li > 0;
        let mut g_x = if need_dx {
            vec![0.0; steps * n_in]
        } else {
            Vec::new()
        };
        let mut g_syn_next = vec![0.0; n_out];
        let mut g_mem_next = vec![0.0; n_out];
        let mut g_syn = vec![0.0; n_out];
        let mut g_mem = vec![0.0; n_out];
        let LayerGrad { w: dw, v: dv } = &mut grads.layers[li];
        let (w, v) = (layer.w(), layer.v());

        for t in (0..steps).rev() {
            for i in 0..n_out {
                let mut gs = g_spikes[t * n_out + i] - p.theta * g_mem_next[i];
                if layer.is_recurrent() {
                    for j in 0..n_out {
                        gs += v[j * n_out + i] * g_syn_next[j];
                    }
                }
                let u = lt.mem[t * n_out + i] - p.theta;
                g_mem[i] = p.beta * g_mem_next[i] + gs * surrogate_grad(u, slope);
                g_syn[i] = p.alpha * g_syn_next[i] + g_mem[i];
            }
            if let Some(i) = g_syn.iter().position(|g| !g.is_finite()) {
                return Err(Error::Numeric {
                    layer: li,
                    timestep: t,
                    detail: format!("gradient of synaptic current {i} is non-finite"),
                });
            }

            let x = &lt.inputs[t * n_in..(t + 1) * n_in];
            for (j, &xj) in x.iter().enumerate() {
                if xj != 0.0 {
                    for i in 0..n_out {
                        dw[i * n_in + j] += g_syn[i] * xj;
                    }
                }
            }
            if layer.is_recurrent() && t > 0 {
                let prev = &lt.spikes[(t - 1) * n_out..t * n_out];
                for (j, &sj) in prev.iter().enumerate() {
                    if sj != 0.0 {
                        for i in 0..n_out {
                            dv[i * n_out + j] += g_syn[i] * sj;
                        }
                    }
                }
            }
            if need_dx {
                let gx = &mut g_x[t * n_in..(t + 1) * n_in];
                for (i, &gi) in g_syn.iter().enumerate() {
                    if gi != 0.0 {
                        let row = &w[i * n_in..(i + 1) * n_in];
                        gx.iter_mut().zip(row).for_each(|(a, b)| *a += gi * b);
                    }
                }
            }
            std::mem::swap(&mut g_syn_next, &mut g_syn);
            std::mem::swap(&mut g_mem_next, &mut g_mem);
        }
        g_spikes = g_x;
    }
    Ok(grads)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerConfig {
    Adam { beta1: f64, beta2: f64, eps: f64 },
    Sgd,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub eta: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub surrogate_slope: f64,
    pub seed: u64,
    pub optimizer: OptimizerConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            eta: 1e-3,
            epochs: 50,
            batch_size: 32,
            surrogate_slope: 25.0,
            seed: 0,
            optimizer: OptimizerConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(invalid(format!(
                "eta must be finite and >= 0, got {}",
                self.eta
            )));
        }
        if self.batch_size == 0 {
            return Err(invalid("batch_size must be >= 1"));
        }
        if self.surrogate_slope.is_nan() || self.surrogate_slope <= 0.0 {
            return Err(invalid("surrogate slope must be > 0"));
        }
        Ok(())
    }
}

/// Adam moments, lazily shaped on the first step.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OptimizerState {
    step: u64,
    m: Vec<LayerGrad>,
    v: Vec<LayerGrad>,
}

/// Applies one update to every layer of `net`. Feedback weights of
/// non-recurrent layers are never touched.
pub fn optimizer_step(
    net: &mut Network,
    grads: &Gradients,
    cfg: &TrainConfig,
    state: &mut OptimizerState,
) -> Result<()> {
    if grads.layers.len() != net.len()
        || grads
            .layers
            .iter()
            .zip(net.layers())
            .any(|(g, l)| g.w.len() != l.w().len() || g.v.len() != l.v().len())
    {
        return Err(invalid("gradient shapes do not match network"));
    }
    let eta = cfg.eta;
    match cfg.optimizer {
        OptimizerConfig::Sgd => {
            for (layer, g) in net.layers_mut().iter_mut().zip(&grads.layers) {
                layer
                    .w_mut()
                    .iter_mut()
                    .zip(&g.w)
                    .for_each(|(p, d)| *p -= eta * d);
                if let Some(v) = layer.v_mut() {
                    v.iter_mut().zip(&g.v).for_each(|(p, d)| *p -= eta * d);
                }
            }
        }
        OptimizerConfig::Adam { beta1, beta2, eps } => {
            if state.m.is_empty() {
                let zero = Gradients::zeros_like(net);
                state.m = zero.layers.clone();
                state.v = zero.layers;
            }
            state.step += 1;
            let c1 = 1.0 - beta1.powi(state.step as i32);
            let c2 = 1.0 - beta2.powi(state.step as i32);
            let update = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
                for i in 0..p.len() {
                    m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                    v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                    let mh = m[i] / c1;
                    let vh = v[i] / c2;
                    p[i] -= eta * mh / (vh.sqrt() + eps);
                }
            };
            for (li, layer) in net.layers_mut().iter_mut().enumerate() {
                let g = &grads.layers[li];
                let (m, v) = (&mut state.m[li], &mut state.v[li]);
                update(layer.w_mut(), &g.w, &mut m.w, &mut v.w);
                if let Some(vw) = layer.v_mut() {
                    update(vw, &g.v, &mut m.v, &mut v.v);
                }
            }
        }
    }
    Ok(())
}

/// Index of the largest count; ties resolve to the lowest index.
pub fn argmax(counts: &[f64]) -> usize {
    let mut best = 0;
    for (i, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = i;
        }
    }
    best
}

/// Predicted class of a single input: argmax of output spike counts.
pub fn predict(net: &Network, input: &SpikeTensor) -> Result<usize> {
    let out = net.forward_output(input)?;
    let counts: Vec<f64> = out.counts_per_neuron().into_iter().map(f64::from).collect();
    Ok(argmax(&counts))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
}

/// Holds optimizer state and the shuffle stream across epochs.
pub struct Trainer {
    cfg: TrainConfig,
    state: OptimizerState,
    rng: ChaCha8Rng,
    epoch: usize,
}

impl Trainer {
    /// `stream_index` separates the shuffle streams of different training phases.
    pub fn new(cfg: TrainConfig, stream_index: u32) -> Result<Self> {
        cfg.validate()?;
        let rng = stream(cfg.seed, Stream::Shuffle, stream_index);
        Ok(Self {
            cfg,
            state: OptimizerState::default(),
            rng,
            epoch: 0,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    /// One pass over `data` in seeded-shuffled minibatches. Loss and accuracy
    /// are measured on the forward passes that produced each update.
    pub fn train_epoch(
        &mut self,
        net: &mut Network,
        data: &[(SpikeTensor, u16)],
    ) -> Result<EpochStats> {
        if data.is_empty() {
            return Err(invalid("training data is empty"));
        }
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut self.rng);
        let act = Activation::Heaviside;
        let slope = self.cfg.surrogate_slope;
        let mut total_loss = 0.0;
        let mut correct = 0usize;
        for batch in order.chunks(self.cfg.batch_size) {
            let snapshot: &Network = net;
            let per_sample: Vec<Result<(f64, bool, Gradients)>> = batch
                .par_iter()
                .map(|&i| {
                    let (x, label) = &data[i];
                    let trace = forward_trace(snapshot, x, act)?;
                    let counts = trace.output_counts();
                    let (loss, g) = count_cross_entropy(&counts, usize::from(*label))?;
                    let grads = bptt_backward(snapshot, &trace, &g, slope)?;
                    Ok((loss, argmax(&counts) == usize::from(*label), grads))
                })
                .collect();
            // Reduce in sample order so results do not depend on scheduling.
            let mut sum = Gradients::zeros_like(net);
            for r in per_sample {
                let (loss, hit, g) = r?;
                total_loss += loss;
                correct += usize::from(hit);
                sum.add_assign(&g);
            }
            sum.scale(1.0 / batch.len() as f64);
            optimizer_step(net, &sum, &self.cfg, &mut self.state)?;
        }
        self.epoch += 1;
        Ok(EpochStats {
            epoch: self.epoch,
            loss: total_loss / data.len() as f64,
            accuracy: correct as f64 / data.len() as f64,
        })
    }
}

/// Trains for `cfg.epochs` epochs and returns the per-epoch statistics.
pub fn train_epochs(
    net: &mut Network,
    data: &[(SpikeTensor, u16)],
    cfg: &TrainConfig,
) -> Result<Vec<EpochStats>> {
    if data.is_empty() {
        return Err(invalid("training data is empty"));
    }
    let mut trainer = Trainer::new(cfg.clone(), 0)?;
    (0..cfg.epochs)
        .map(|_| trainer.train_epoch(net, data))
        .collect()
}

/// Top-1 accuracy over `(input, label)` pairs.
pub fn accuracy<'a>(
    net: &Network,
    samples: impl IntoIterator<Item = (&'a SpikeTensor, u16)>,
) -> Result<f64> {
    let samples: Vec<_> = samples.into_iter().collect();
    if samples.is_empty() {
        return Err(invalid("no samples to evaluate"));
    }
    let hits: Vec<Result<bool>> = samples
        .par_iter()
        .map(|(x, y)| Ok(predict(net, x)? == usize::from(*y)))
        .collect();
    let mut correct = 0usize;
    for h in hits {
        correct += usize::from(h?);
    }
    Ok(correct as f64 / samples.len() as f64)
}

/// Top-1 accuracy on the samples of `set` matching `filter`.
pub fn evaluate(net: &Network, set: &SpikeSet, filter: Option<&SampleFilter>) -> Result<f64> {
    let all = SampleFilter::default();
    let f = filter.unwrap_or(&all);
    let n = set.filtered(f).count();
    if n == 0 {
        return Err(invalid("evaluation subset is empty"));
    }
    accuracy(net, set.filtered(f).map(|s| (&s.tensor, s.class_id)))
}
