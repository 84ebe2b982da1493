//! Recurrent second-order (synaptic-conductance) LIF layers and networks.
//!
//! Per timestep, with input spikes `x`, previous output spikes `s⁻`:
//!
//! ```text
//! syn' = alpha·syn + W·x + V·s⁻
//! mem' = beta·mem + syn' − theta·s⁻        (soft reset by subtraction)
//! s    = [mem' ≥ theta]
//! ```

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::spike::SpikeTensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeuronParams {
    /// Synaptic current decay per step.
    pub alpha: f64,
    /// Membrane decay per step.
    pub beta: f64,
    /// Firing threshold.
    pub theta: f64,
}

impl Default for NeuronParams {
    fn default() -> Self {
        Self {
            alpha: 0.9,
            beta: 0.8,
            theta: 1.0,
        }
    }
}

impl NeuronParams {
    pub fn validate(&self) -> Result<()> {
        let unit = 0.0..1.0;
        if !unit.contains(&self.alpha) || !unit.contains(&self.beta) {
            return Err(invalid(format!(
                "alpha and beta must lie in [0, 1), got {} and {}",
                self.alpha, self.beta
            )));
        }
        if !(self.theta > 0.0 && self.theta.is_finite()) {
            return Err(invalid(format!("theta must be > 0, got {}", self.theta)));
        }
        Ok(())
    }
}

/// Gaussian weight initialization scaled by fan-in.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightInit {
    /// Std of feed-forward weights is `gain / sqrt(inputs)`.
    pub gain: f64,
    /// Std of recurrent weights is `recurrent_gain / sqrt(outputs)`.
    pub recurrent_gain: f64,
}

impl Default for WeightInit {
    fn default() -> Self {
        Self {
            gain: 0.5,
            recurrent_gain: 0.1,
        }
    }
}

/// How the forward pass turns `u = mem − theta` into a spike value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    /// Binary spikes, the model proper.
    Heaviside,
    /// `u / (1 + k|u|)`, whose derivative is exactly the fast-sigmoid
    /// surrogate. Only used to check gradients against finite differences.
    FastSigmoid { slope: f64 },
}

impl Activation {
    #[inline]
    pub fn apply(self, u: f64) -> f64 {
        match self {
            Activation::Heaviside => {
                if u >= 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::FastSigmoid { slope } => u / (1.0 + slope * u.abs()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RecurrentLayer {
    inputs: usize,
    outputs: usize,
    /// Row-major `[outputs × inputs]`.
    w: Vec<f64>,
    /// Row-major `[outputs × outputs]`; all zero when `recurrent` is false.
    v: Vec<f64>,
    recurrent: bool,
    params: NeuronParams,
}

impl RecurrentLayer {
    /// `v = None` builds a layer without feedback connections.
    pub fn new(
        inputs: usize,
        outputs: usize,
        w: Vec<f64>,
        v: Option<Vec<f64>>,
        params: NeuronParams,
    ) -> Result<Self> {
        params.validate()?;
        if inputs == 0 || outputs == 0 {
            return Err(invalid("layer dimensions must be nonzero"));
        }
        if w.len() != inputs * outputs {
            return Err(invalid(format!(
                "W has {} entries, expected {outputs}x{inputs}",
                w.len()
            )));
        }
        let recurrent = v.is_some();
        let v = v.unwrap_or_else(|| vec![0.0; outputs * outputs]);
        if v.len() != outputs * outputs {
            return Err(invalid(format!(
                "V has {} entries, expected {outputs}x{outputs}",
                v.len()
            )));
        }
        if w.iter().chain(&v).any(|x| !x.is_finite()) {
            return Err(invalid("non-finite weight"));
        }
        Ok(Self {
            inputs,
            outputs,
            w,
            v,
            recurrent,
            params,
        })
    }

    pub fn zeros(
        inputs: usize,
        outputs: usize,
        recurrent: bool,
        params: NeuronParams,
    ) -> Result<Self> {
        let v = recurrent.then(|| vec![0.0; outputs * outputs]);
        Self::new(inputs, outputs, vec![0.0; inputs * outputs], v, params)
    }

    pub fn random<R: Rng + ?Sized>(
        inputs: usize,
        outputs: usize,
        recurrent: bool,
        params: NeuronParams,
        init: WeightInit,
        rng: &mut R,
    ) -> Result<Self> {
        let ff = Normal::new(0.0, init.gain / (inputs as f64).sqrt())
            .map_err(|e| invalid(e.to_string()))?;
        let w = (0..inputs * outputs).map(|_| ff.sample(rng)).collect();
        let v = if recurrent {
            let rec = Normal::new(0.0, init.recurrent_gain / (outputs as f64).sqrt())
                .map_err(|e| invalid(e.to_string()))?;
            Some((0..outputs * outputs).map(|_| rec.sample(rng)).collect())
        } else {
            None
        };
        Self::new(inputs, outputs, w, v, params)
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn is_recurrent(&self) -> bool {
        self.recurrent
    }

    pub fn params(&self) -> NeuronParams {
        self.params
    }

    pub fn w(&self) -> &[f64] {
        &self.w
    }

    pub fn v(&self) -> &[f64] {
        &self.v
    }

    pub fn w_mut(&mut self) -> &mut [f64] {
        &mut self.w
    }

    /// Mutable feedback weights; `None` for a non-recurrent layer, whose V stays zero.
    pub fn v_mut(&mut self) -> Option<&mut [f64]> {
        self.recurrent.then_some(self.v.as_mut_slice())
    }

    /// One timestep on real-valued state. `x` and `spk_prev` may be binary
    /// (0.0/1.0) or relaxed spike values. Updates `syn`/`mem` in place and
    /// writes the new spikes into `spk_out`.
    pub(crate) fn step_kernel(
        &self,
        x: &[f64],
        syn: &mut [f64],
        mem: &mut [f64],
        spk_prev: &[f64],
        spk_out: &mut [f64],
        act: Activation,
    ) {
        let NeuronParams { alpha, beta, theta } = self.params;
        let x_nz: Vec<(usize, f64)> = nonzero(x);
        let s_nz: Vec<(usize, f64)> = if self.recurrent {
            nonzero(spk_prev)
        } else {
            Vec::new()
        };
        for i in 0..self.outputs {
            let wrow = &self.w[i * self.inputs..(i + 1) * self.inputs];
            let mut drive = 0.0;
            for &(j, xj) in &x_nz {
                drive += wrow[j] * xj;
            }
            if !s_nz.is_empty() {
                let vrow = &self.v[i * self.outputs..(i + 1) * self.outputs];
                for &(j, sj) in &s_nz {
                    drive += vrow[j] * sj;
                }
            }
            syn[i] = alpha * syn[i] + drive;
            mem[i] = beta * mem[i] + syn[i] - theta * spk_prev[i];
            spk_out[i] = act.apply(mem[i] - theta);
        }
    }

    /// Runs the layer over a full spike train from zeroed state.
    pub fn forward(&self, input: &SpikeTensor) -> Result<SpikeTensor> {
        if input.neurons() != self.inputs {
            return Err(invalid(format!(
                "input has {} neurons, layer expects {}",
                input.neurons(),
                self.inputs
            )));
        }
        let steps = input.timesteps();
        let mut out = SpikeTensor::zeros(steps, self.outputs)?;
        let mut syn = vec![0.0; self.outputs];
        let mut mem = vec![0.0; self.outputs];
        let mut prev = vec![0.0; self.outputs];
        let mut cur = vec![0.0; self.outputs];
        for t in 0..steps {
            let x = input.row_f64(t);
            self.step_kernel(
                &x,
                &mut syn,
                &mut mem,
                &prev,
                &mut cur,
                Activation::Heaviside,
            );
            if let Some(i) = mem.iter().position(|m| !m.is_finite()) {
                return Err(Error::Numeric {
                    layer: 0,
                    timestep: t,
                    detail: format!("membrane of neuron {i} is {}", mem[i]),
                });
            }
            for (n, &s) in cur.iter().enumerate() {
                if s != 0.0 {
                    out.set(t, n);
                }
            }
            std::mem::swap(&mut prev, &mut cur);
        }
        Ok(out)
    }
}

fn nonzero(v: &[f64]) -> Vec<(usize, f64)> {
    v.iter()
        .enumerate()
        .filter(|(_, &x)| x != 0.0)
        .map(|(j, &x)| (j, x))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerState {
    pub syn: Vec<f64>,
    pub mem: Vec<f64>,
    pub spk_prev: Vec<bool>,
}

impl LayerState {
    pub fn new(outputs: usize) -> Self {
        Self {
            syn: vec![0.0; outputs],
            mem: vec![0.0; outputs],
            spk_prev: vec![false; outputs],
        }
    }

    pub fn reset(&mut self) {
        self.syn.fill(0.0);
        self.mem.fill(0.0);
        self.spk_prev.fill(false);
    }
}

/// A single timestep of `layer` on binary input.
pub fn layer_step(
    layer: &RecurrentLayer,
    x_t: &[bool],
    state: &LayerState,
) -> Result<(Vec<bool>, LayerState)> {
    let out = layer.outputs;
    if x_t.len() != layer.inputs
        || state.syn.len() != out
        || state.mem.len() != out
        || state.spk_prev.len() != out
    {
        return Err(invalid("layer_step dimension mismatch"));
    }
    if state.syn.iter().chain(&state.mem).any(|v| !v.is_finite()) {
        return Err(Error::Numeric {
            layer: 0,
            timestep: 0,
            detail: "non-finite input state".into(),
        });
    }
    let x: Vec<f64> = x_t.iter().map(|&b| f64::from(u8::from(b))).collect();
    let prev: Vec<f64> = state
        .spk_prev
        .iter()
        .map(|&b| f64::from(u8::from(b)))
        .collect();
    let mut next = state.clone();
    let mut spk = vec![0.0; out];
    layer.step_kernel(
        &x,
        &mut next.syn,
        &mut next.mem,
        &prev,
        &mut spk,
        Activation::Heaviside,
    );
    if next.syn.iter().chain(&next.mem).any(|v| !v.is_finite()) {
        return Err(Error::Numeric {
            layer: 0,
            timestep: 0,
            detail: "state became non-finite".into(),
        });
    }
    next.spk_prev = spk.iter().map(|&s| s != 0.0).collect();
    Ok((next.spk_prev.clone(), next))
}

pub fn layer_forward(layer: &RecurrentLayer, input: &SpikeTensor) -> Result<SpikeTensor> {
    layer.forward(input)
}

/// An ordered stack of layers with a split index `K`: layers `[0, K)` are
/// frozen during continual learning, `[K, L)` keep learning.
///
/// A network with no layers is the identity map; it only arises as the
/// frozen half of a split at `K = 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    layers: Vec<RecurrentLayer>,
    split_index: usize,
}

impl Network {
    pub fn new(layers: Vec<RecurrentLayer>, split_index: usize) -> Result<Self> {
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].outputs != pair[1].inputs {
                return Err(invalid(format!(
                    "layer {i} outputs {} but layer {} expects {}",
                    pair[0].outputs,
                    i + 1,
                    pair[1].inputs
                )));
            }
        }
        if !(split_index < layers.len() || (layers.is_empty() && split_index == 0)) {
            return Err(invalid(format!(
                "split index {split_index} must be < layer count {}",
                layers.len()
            )));
        }
        Ok(Self {
            layers,
            split_index,
        })
    }

    /// Random network over `sizes = [inputs, h1, ..., outputs]`. Hidden layers
    /// are recurrent, the output layer is not.
    pub fn build<R: Rng + ?Sized>(
        sizes: &[usize],
        params: NeuronParams,
        init: WeightInit,
        split_index: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(invalid(
                "network needs at least an input and an output size",
            ));
        }
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| RecurrentLayer::random(w[0], w[1], i != last, params, init, rng))
            .collect::<Result<Vec<_>>>()?;
        Self::new(layers, split_index)
    }

    pub fn layers(&self) -> &[RecurrentLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [RecurrentLayer] {
        &mut self.layers
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn split_index(&self) -> usize {
        self.split_index
    }

    pub fn set_split_index(&mut self, k: usize) -> Result<()> {
        if k >= self.layers.len() {
            return Err(invalid(format!("split index {k} >= {}", self.layers.len())));
        }
        self.split_index = k;
        Ok(())
    }

    pub fn input_size(&self) -> Option<usize> {
        self.layers.first().map(|l| l.inputs)
    }

    pub fn output_size(&self) -> Option<usize> {
        self.layers.last().map(|l| l.outputs)
    }

    /// Output spikes of every layer, in order.
    pub fn forward(&self, input: &SpikeTensor) -> Result<Vec<SpikeTensor>> {
        let mut outs: Vec<SpikeTensor> = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let x = outs.last().unwrap_or(input);
            let y = layer.forward(x).map_err(|e| with_layer(e, i))?;
            outs.push(y);
        }
        Ok(outs)
    }

    /// Output of the last layer, or the input itself for the empty network.
    pub fn forward_output(&self, input: &SpikeTensor) -> Result<SpikeTensor> {
        if let Some(n) = self.input_size() {
            if input.neurons() != n {
                return Err(invalid(format!(
                    "input has {} neurons, network expects {n}",
                    input.neurons()
                )));
            }
        }
        let mut x = input.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(&x).map_err(|e| with_layer(e, i))?;
        }
        Ok(x)
    }

    /// Splits into `(frozen [0, k), learning [k, L))`.
    pub fn split(&self, k: usize) -> Result<(Network, Network)> {
        if k >= self.layers.len() {
            return Err(invalid(format!(
                "split index {k} must be < layer count {}",
                self.layers.len()
            )));
        }
        let frozen = Network {
            layers: self.layers[..k].to_vec(),
            split_index: 0,
        };
        let learning = Network {
            layers: self.layers[k..].to_vec(),
            split_index: 0,
        };
        Ok((frozen, learning))
    }

    /// Inverse of [`Network::split`]; the split index becomes `frozen.len()`.
    pub fn join(frozen: Network, learning: Network) -> Result<Network> {
        let k = frozen.len();
        let mut layers = frozen.layers;
        layers.extend(learning.layers);
        Network::new(layers, k)
    }

    /// CRC32 over the bit patterns of every weight, for freeze checks and golden values.
    pub fn fingerprint(&self) -> u32 {
        let mut h = crc32fast::Hasher::new();
        for l in &self.layers {
            for x in l.w.iter().chain(&l.v) {
                h.update(&x.to_bits().to_le_bytes());
            }
        }
        h.finalize()
    }

    /// Fingerprint restricted to layers `[0, k)`.
    pub fn prefix_fingerprint(&self, k: usize) -> u32 {
        Network {
            layers: self.layers[..k.min(self.layers.len())].to_vec(),
            split_index: 0,
        }
        .fingerprint()
    }
}

fn with_layer(e: Error, layer: usize) -> Error {
    match e {
        Error::Numeric {
            timestep, detail, ..
        } => Error::Numeric {
            layer,
            timestep,
            detail,
        },
        other => other,
    }
}

pub fn network_forward(net: &Network, input: &SpikeTensor) -> Result<Vec<SpikeTensor>> {
    net.forward(input)
}

pub fn split_network(net: &Network, k: usize) -> Result<(Network, Network)> {
    net.split(k)
}
