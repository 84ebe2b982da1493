//! Latent-replay continual learning: pretraining, replay capture, new-class
//! re-initialization and the incremental training loop for the
//! sample-incremental, class-incremental and multi-class-incremental protocols.

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::time::Instant;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::metrics::{MetricsRecord, ReportRow};
use crate::neuron::{Network, NeuronParams, WeightInit};
use crate::replay::{
    buffer_extend, capture_latents, mix_for_training, select_class_balanced, Codec, ReplayBuffer,
};
use crate::rng::{stream, Stream};
use crate::spike::{Sample, SampleFilter, SpikeSet, SpikeTensor};
use crate::train::{accuracy, OptimizerConfig, TrainConfig, Trainer};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolKind {
    /// New data from an unseen scenario of known classes.
    SampleIncremental,
    /// One or more unseen classes, learned with a fixed replay buffer.
    ClassIncremental,
    /// Unseen classes learned one at a time; each step adds its own latents to the buffer.
    MultiClassIncremental,
}

impl ProtocolKind {
    fn adds_classes(self) -> bool {
        !matches!(self, ProtocolKind::SampleIncremental)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CLScenario {
    pub kind: ProtocolKind,
    /// Classes seen during pretraining; defaults to every class not in the
    /// schedule (class protocols) or every class (sample-incremental).
    #[serde(default)]
    pub pretrain_classes: Option<Vec<u16>>,
    /// Scenarios seen during pretraining; defaults analogously.
    #[serde(default)]
    pub pretrain_scenarios: Option<Vec<u16>>,
    /// Scenario ids (sample-incremental) or class ids (class protocols) to learn, in order.
    pub schedule: Vec<u16>,
    /// Split index K: latents are captured at the output of layer K-1, or raw inputs when 0.
    pub layer_index: usize,
    /// Total replay entries drawn class-balanced from the pretraining data.
    #[serde(default)]
    pub replay_count: usize,
    /// Entries per class, used instead of `replay_count` by the multi-class protocol.
    #[serde(default)]
    pub per_class_quota: usize,
    #[serde(default)]
    pub codec: Codec,
    /// Redraw the new class's output weights before learning it.
    #[serde(default = "default_true")]
    pub reinit: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    /// `[inputs, hidden..., outputs]`.
    pub sizes: Vec<usize>,
    pub neuron: NeuronParams,
    pub init: WeightInit,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            sizes: vec![700, 200, 100, 50, 20],
            neuron: NeuronParams::default(),
            init: WeightInit::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhaseConfig {
    pub epochs: usize,
    pub eta: f64,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
}

impl Default for PhaseConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            eta: 1e-3,
            batch_size: 32,
            optimizer: OptimizerConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub train: PathBuf,
    /// Held-out set; when absent, `test_fraction` of `train` is split off per (class, scenario).
    #[serde(default)]
    pub test: Option<PathBuf>,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
}

fn default_test_fraction() -> f64 {
    0.25
}

/// A complete experiment description, loaded from one JSON file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub network: NetworkConfig,
    #[serde(default = "default_slope")]
    pub surrogate_slope: f64,
    #[serde(default)]
    pub pretrain: PhaseConfig,
    #[serde(default)]
    pub continual: PhaseConfig,
    pub scenario: CLScenario,
    /// Start from this checkpoint directory instead of pretraining.
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    /// Fill `wall_ms` columns with measured time. Off by default so that reruns
    /// produce byte-identical metric files.
    #[serde(default)]
    pub record_wall_time: bool,
}

fn default_slope() -> f64 {
    25.0
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn train_config(&self, phase: &PhaseConfig) -> TrainConfig {
        TrainConfig {
            eta: phase.eta,
            epochs: phase.epochs,
            batch_size: phase.batch_size,
            surrogate_slope: self.surrogate_slope,
            seed: self.seed,
            optimizer: phase.optimizer,
        }
    }
}

/// `before − after`; positive means accuracy on old data dropped.
pub fn forgetting(acc_old_before: f64, acc_old_after: f64) -> f64 {
    acc_old_before - acc_old_after
}

/// Redraws the output-layer weights of `class_id` from a normal distribution
/// matching the mean and std of the feed-forward weights of the `reference`
/// output neurons. Recurrent weights of that neuron (row and column) are redrawn
/// from the same distribution if the layer has any.
pub fn reinit_output_neuron<R: Rng + ?Sized>(
    net: &mut Network,
    class_id: usize,
    reference: &[usize],
    rng: &mut R,
) -> Result<()> {
    let out = net
        .layers_mut()
        .last_mut()
        .ok_or_else(|| invalid("cannot reinit an empty network"))?;
    let (n_in, n_out) = (out.inputs(), out.outputs());
    if class_id >= n_out {
        return Err(invalid(format!(
            "class {class_id} >= {n_out} output neurons"
        )));
    }
    let refs: Vec<usize> = reference
        .iter()
        .copied()
        .filter(|&r| r != class_id && r < n_out)
        .collect();
    if refs.is_empty() {
        return Err(invalid(
            "no other output neurons to estimate weight statistics from",
        ));
    }
    let w = out.w();
    let vals: Vec<f64> = refs
        .iter()
        .flat_map(|&r| w[r * n_in..(r + 1) * n_in].iter().copied())
        .collect();
    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
    let var = vals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / vals.len() as f64;
    let dist = Normal::new(mean, var.sqrt()).map_err(|e| invalid(e.to_string()))?;
    for x in &mut out.w_mut()[class_id * n_in..(class_id + 1) * n_in] {
        *x = dist.sample(rng);
    }
    if let Some(v) = out.v_mut() {
        for j in 0..n_out {
            v[class_id * n_out + j] = dist.sample(rng);
            if j != class_id {
                v[j * n_out + class_id] = dist.sample(rng);
            }
        }
    }
    Ok(())
}

/// [`reinit_output_neuron`] using every other output neuron as reference.
pub fn reinit_new_class<R: Rng + ?Sized>(
    net: &mut Network,
    class_id: usize,
    rng: &mut R,
) -> Result<()> {
    let n = net.output_size().unwrap_or(0);
    let others: Vec<usize> = (0..n).filter(|&c| c != class_id).collect();
    reinit_output_neuron(net, class_id, &others, rng)
}

/// Stratified train/test split per (class, scenario) cell.
pub fn split_train_test(
    set: &SpikeSet,
    test_fraction: f64,
    seed: u64,
) -> Result<(SpikeSet, SpikeSet)> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(invalid("test_fraction must lie in [0, 1)"));
    }
    let mut rng = stream(seed, Stream::Split, 0);
    let mut cells: std::collections::BTreeMap<(u16, u16), Vec<usize>> = Default::default();
    for (i, s) in set.samples().iter().enumerate() {
        cells
            .entry((s.class_id, s.scenario_id))
            .or_default()
            .push(i);
    }
    let mut is_test = vec![false; set.len()];
    for idx in cells.values_mut() {
        use rand::seq::SliceRandom;
        idx.shuffle(&mut rng);
        let n = (idx.len() as f64 * test_fraction).round() as usize;
        for &i in &idx[..n] {
            is_test[i] = true;
        }
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (s, t) in set.samples().iter().zip(is_test) {
        if t { &mut test } else { &mut train }.push(s.clone());
    }
    Ok((set.with_samples(train)?, set.with_samples(test)?))
}

/// Summary of one increment step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepSummary {
    pub step: usize,
    /// Scenario or class id learned in this step.
    pub item: u16,
    pub new_samples: usize,
    pub replay_entries: usize,
    pub replay_bytes: u64,
    pub acc_old_before: f64,
    pub acc_new_before: f64,
    pub acc_old_after: f64,
    pub acc_new_after: f64,
    pub acc_full_after: f64,
    pub forgetting: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CLReport {
    pub pretrain: Vec<MetricsRecord>,
    pub baseline_acc_full: f64,
    pub baseline_acc_old: f64,
    pub rows: Vec<ReportRow>,
    pub steps: Vec<StepSummary>,
}

impl CLReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn average_forgetting(&self) -> f64 {
        if self.steps.is_empty() {
            return 0.0;
        }
        self.steps.iter().map(|s| s.forgetting).sum::<f64>() / self.steps.len() as f64
    }
}

/// Sample counts and replay footprints a configuration will produce.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub kind: ProtocolKind,
    pub train_samples: usize,
    pub test_samples: usize,
    pub pretrain_samples: usize,
    pub pretrain_classes: Vec<u16>,
    pub pretrain_scenarios: Vec<u16>,
    pub layer_index: usize,
    pub latent_neurons: usize,
    pub codec: Codec,
    pub initial_replay_entries: usize,
    pub initial_replay_bytes: u64,
    pub steps: Vec<PlannedStep>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlannedStep {
    pub step: usize,
    pub item: u16,
    pub new_train_samples: usize,
    pub replay_entries: usize,
    pub replay_bytes: u64,
}

/// Drives one protocol run. The steps can be called individually
/// ([`ContinualRunner::pretrain`], [`ContinualRunner::capture`],
/// [`ContinualRunner::run_increment`]) or all at once with [`ContinualRunner::run`].
pub struct ContinualRunner<'a> {
    cfg: &'a ExperimentConfig,
    train: &'a SpikeSet,
    test: &'a SpikeSet,
    net: Network,
    buffer: ReplayBuffer,
    pretrain_classes: Vec<u16>,
    pretrain_scenarios: Vec<u16>,
    report: CLReport,
}

impl<'a> ContinualRunner<'a> {
    /// Builds the runner with a freshly initialized network, or `initial` if given.
    pub fn new(
        cfg: &'a ExperimentConfig,
        train: &'a SpikeSet,
        test: &'a SpikeSet,
        initial: Option<Network>,
    ) -> Result<Self> {
        let (pretrain_classes, pretrain_scenarios) = validate(cfg, train, test)?;
        let sc = &cfg.scenario;
        let mut net = match initial {
            Some(n) => n,
            None => Network::build(
                &cfg.network.sizes,
                cfg.network.neuron,
                cfg.network.init,
                sc.layer_index,
                &mut stream(cfg.seed, Stream::Init, 0),
            )?,
        };
        if net.input_size() != Some(train.neurons())
            || net.output_size() != Some(usize::from(train.num_classes()))
        {
            return Err(invalid("network shape does not match dataset"));
        }
        net.set_split_index(sc.layer_index)?;
        let latent_neurons = latent_width(&net, sc.layer_index);
        let buffer =
            ReplayBuffer::new(sc.codec, sc.layer_index, latent_neurons, train.timesteps())?;
        Ok(Self {
            cfg,
            train,
            test,
            net,
            buffer,
            pretrain_classes,
            pretrain_scenarios,
            report: CLReport::default(),
        })
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn report(&self) -> &CLReport {
        &self.report
    }

    pub fn into_parts(self) -> (Network, ReplayBuffer, CLReport) {
        (self.net, self.buffer, self.report)
    }

    fn pretrain_filter(&self) -> SampleFilter {
        SampleFilter {
            classes: Some(self.pretrain_classes.clone()),
            scenarios: Some(self.pretrain_scenarios.clone()),
        }
    }

    /// Data known before `step`: the pretraining filter widened by the schedule prefix.
    fn old_filter(&self, step: usize) -> SampleFilter {
        let mut f = self.pretrain_filter();
        let seen = &self.cfg.scenario.schedule[..step];
        if self.cfg.scenario.kind.adds_classes() {
            f.classes.as_mut().expect("set").extend_from_slice(seen);
        } else {
            f.scenarios.as_mut().expect("set").extend_from_slice(seen);
        }
        f
    }

    fn new_filter(&self, step: usize) -> SampleFilter {
        let item = self.cfg.scenario.schedule[step];
        let mut f = self.pretrain_filter();
        if self.cfg.scenario.kind.adds_classes() {
            f.classes = Some(vec![item]);
        } else {
            f.scenarios = Some(vec![item]);
        }
        f
    }

    fn elapsed(&self, start: Instant) -> u64 {
        if self.cfg.record_wall_time {
            start.elapsed().as_millis() as u64
        } else {
            0
        }
    }

    /// Trains the whole network on the pretraining subset and records baselines.
    pub fn pretrain(&mut self) -> Result<&[MetricsRecord]> {
        let start = Instant::now();
        let filter = self.pretrain_filter();
        let data = labeled(self.train.filtered(&filter));
        if data.is_empty() {
            return Err(invalid("pretraining subset is empty"));
        }
        let test_all = labeled(self.test.samples());
        let test_old = labeled(self.test.filtered(&filter));
        let nf = self.new_filter(0);
        let test_new = labeled(self.test.filtered(&nf));
        let cfg = self.cfg.train_config(&self.cfg.pretrain);
        let mut trainer = Trainer::new(cfg, 0)?;
        for _ in 0..self.cfg.pretrain.epochs {
            let stats = trainer.train_epoch(&mut self.net, &data)?;
            self.report.pretrain.push(MetricsRecord {
                epoch: stats.epoch,
                phase: "pretrain".into(),
                loss: stats.loss,
                acc_all: acc_or_zero(&self.net, &test_all)?,
                acc_old: acc_or_zero(&self.net, &test_old)?,
                acc_new: acc_or_zero(&self.net, &test_new)?,
                wall_ms: self.elapsed(start),
            });
        }
        self.record_baseline()?;
        Ok(&self.report.pretrain)
    }

    /// Records baseline accuracies without training (used when starting from a checkpoint).
    pub fn record_baseline(&mut self) -> Result<()> {
        let f = self.pretrain_filter();
        self.report.baseline_acc_full = acc_or_zero(&self.net, &labeled(self.test.samples()))?;
        self.report.baseline_acc_old = acc_or_zero(&self.net, &labeled(self.test.filtered(&f)))?;
        Ok(())
    }

    /// Fills the replay buffer from the pretraining data through the frozen layers.
    pub fn capture(&mut self) -> Result<()> {
        let sc = &self.cfg.scenario;
        let filter = self.pretrain_filter();
        let pool: Vec<&Sample> = self.train.filtered(&filter).collect();
        let count = self.initial_replay_count();
        let labels: Vec<u16> = pool.iter().map(|s| s.class_id).collect();
        let picked = select_class_balanced(
            &labels,
            count,
            &mut stream(self.cfg.seed, Stream::ReplaySelect, 0),
        );
        let (frozen, _) = self.net.split(sc.layer_index)?;
        if picked.is_empty() {
            self.buffer = ReplayBuffer::new(
                sc.codec,
                sc.layer_index,
                self.buffer.neurons(),
                self.train.timesteps(),
            )?;
        } else {
            self.buffer = capture_latents(
                &frozen,
                picked.iter().map(|&i| (&pool[i].tensor, pool[i].class_id)),
                sc.codec,
            )?;
        }
        Ok(())
    }

    fn initial_replay_count(&self) -> usize {
        let sc = &self.cfg.scenario;
        match sc.kind {
            ProtocolKind::MultiClassIncremental => sc.per_class_quota * self.pretrain_classes.len(),
            _ => sc.replay_count,
        }
    }

    /// Learns schedule item `step`: frozen layers fixed, learning layers trained
    /// on new latents mixed with decompressed replays.
    pub fn run_increment(&mut self, step: usize) -> Result<StepSummary> {
        let start = Instant::now();
        let sc = &self.cfg.scenario;
        let item = *sc
            .schedule
            .get(step)
            .ok_or_else(|| invalid(format!("no schedule entry {step}")))?;
        let k = sc.layer_index;
        let (frozen, mut learning) = self.net.split(k)?;

        // Test latents once per step; the frozen half does not change.
        let old_f = self.old_filter(step);
        let new_f = self.new_filter(step);
        let eval: Vec<(SpikeTensor, u16, bool)> = self
            .test
            .samples()
            .par_iter()
            .filter(|s| old_f.matches(s) || new_f.matches(s))
            .map(|s| {
                Ok((
                    frozen.forward_output(&s.tensor)?,
                    s.class_id,
                    new_f.matches(s),
                ))
            })
            .collect::<Result<_>>()?;
        let old_eval: Vec<(&SpikeTensor, u16)> =
            eval.iter().filter(|e| !e.2).map(|e| (&e.0, e.1)).collect();
        let new_eval: Vec<(&SpikeTensor, u16)> =
            eval.iter().filter(|e| e.2).map(|e| (&e.0, e.1)).collect();
        let all_eval: Vec<(&SpikeTensor, u16)> = eval.iter().map(|e| (&e.0, e.1)).collect();

        let measure = |net: &Network| -> Result<(f64, f64, f64)> {
            Ok((
                acc_or_zero(net, &all_eval)?,
                acc_or_zero(net, &old_eval)?,
                acc_or_zero(net, &new_eval)?,
            ))
        };
        let (full0, old0, new0) = measure(&learning)?;
        self.report.rows.push(ReportRow {
            step,
            epoch: 0,
            acc_full: full0,
            acc_old: old0,
            acc_new: new0,
            forgetting: 0.0,
            replay_bytes: self.buffer.footprint_bytes(),
            wall_ms: self.elapsed(start),
        });

        if sc.kind.adds_classes() && sc.reinit {
            let mut reference: Vec<usize> = self
                .pretrain_classes
                .iter()
                .map(|&c| usize::from(c))
                .collect();
            reference.extend(sc.schedule[..step].iter().map(|&c| usize::from(c)));
            reinit_output_neuron(
                &mut learning,
                usize::from(item),
                &reference,
                &mut stream(self.cfg.seed, Stream::Reinit, step as u32),
            )?;
        }

        let new_data: Vec<&Sample> = self.train.filtered(&new_f).collect();
        if new_data.is_empty() {
            return Err(invalid(format!(
                "no training data for schedule item {item}"
            )));
        }
        let new_latents: Vec<(SpikeTensor, u16)> = new_data
            .par_iter()
            .map(|s| Ok((frozen.forward_output(&s.tensor)?, s.class_id)))
            .collect::<Result<_>>()?;
        let mixed = mix_for_training(
            &self.buffer,
            new_latents.clone(),
            self.cfg.seed.wrapping_add(step as u64),
        )?;

        let cfg = self.cfg.train_config(&self.cfg.continual);
        let mut trainer = Trainer::new(cfg, step as u32 + 1)?;
        let mut last = (full0, old0, new0);
        for _ in 0..self.cfg.continual.epochs {
            let stats = trainer.train_epoch(&mut learning, &mixed)?;
            last = measure(&learning)?;
            self.report.rows.push(ReportRow {
                step,
                epoch: stats.epoch,
                acc_full: last.0,
                acc_old: last.1,
                acc_new: last.2,
                forgetting: forgetting(old0, last.1),
                replay_bytes: self.buffer.footprint_bytes(),
                wall_ms: self.elapsed(start),
            });
        }

        let mut net = Network::join(frozen.clone(), learning)?;
        net.set_split_index(k)?;
        self.net = net;

        if sc.kind == ProtocolKind::MultiClassIncremental {
            let labels: Vec<u16> = new_latents.iter().map(|(_, c)| *c).collect();
            let picked = select_class_balanced(
                &labels,
                sc.per_class_quota,
                &mut stream(self.cfg.seed, Stream::ReplaySelect, step as u32 + 1),
            );
            let chosen: Vec<(SpikeTensor, u16)> =
                picked.iter().map(|&i| new_latents[i].clone()).collect();
            self.buffer = buffer_extend(&self.buffer, &chosen, sc.per_class_quota)?;
        }

        let summary = StepSummary {
            step,
            item,
            new_samples: new_data.len(),
            replay_entries: self.buffer.len(),
            replay_bytes: self.buffer.footprint_bytes(),
            acc_old_before: old0,
            acc_new_before: new0,
            acc_old_after: last.1,
            acc_new_after: last.2,
            acc_full_after: last.0,
            forgetting: forgetting(old0, last.1),
        };
        self.report.steps.push(summary.clone());
        Ok(summary)
    }

    /// Pretrain (unless started from a checkpoint), capture, then every increment.
    pub fn run(mut self, pretrained: bool) -> Result<(Network, ReplayBuffer, CLReport)> {
        if pretrained {
            self.record_baseline()?;
        } else {
            self.pretrain()?;
        }
        self.capture()?;
        for step in 0..self.cfg.scenario.schedule.len() {
            self.run_increment(step)?;
        }
        Ok(self.into_parts())
    }
}

/// Runs the configured protocol end to end on a train/test pair.
pub fn run_protocol(
    cfg: &ExperimentConfig,
    train: &SpikeSet,
    test: &SpikeSet,
    initial: Option<Network>,
) -> Result<CLReport> {
    let pretrained = initial.is_some();
    let runner = ContinualRunner::new(cfg, train, test, initial)?;
    Ok(runner.run(pretrained)?.2)
}

/// Resolves sample counts and footprints without training.
pub fn plan(cfg: &ExperimentConfig, train: &SpikeSet, test: &SpikeSet) -> Result<Plan> {
    let (pretrain_classes, pretrain_scenarios) = validate(cfg, train, test)?;
    let sc = &cfg.scenario;
    let sizes = &cfg.network.sizes;
    let latent_neurons = sizes[sc.layer_index];
    let t = train.timesteps();
    let pre = SampleFilter {
        classes: Some(pretrain_classes.clone()),
        scenarios: Some(pretrain_scenarios.clone()),
    };
    let pool: Vec<u16> = train.filtered(&pre).map(|s| s.class_id).collect();
    let count = match sc.kind {
        ProtocolKind::MultiClassIncremental => sc.per_class_quota * pretrain_classes.len(),
        _ => sc.replay_count,
    };
    let initial =
        select_class_balanced(&pool, count, &mut stream(cfg.seed, Stream::ReplaySelect, 0)).len();
    let mut entries = initial;
    let mut steps = Vec::new();
    for (step, &item) in sc.schedule.iter().enumerate() {
        let f = if sc.kind.adds_classes() {
            SampleFilter {
                classes: Some(vec![item]),
                scenarios: Some(pretrain_scenarios.clone()),
            }
        } else {
            SampleFilter {
                classes: Some(pretrain_classes.clone()),
                scenarios: Some(vec![item]),
            }
        };
        let new_train_samples = train.filtered(&f).count();
        steps.push(PlannedStep {
            step,
            item,
            new_train_samples,
            replay_entries: entries,
            replay_bytes: sc.codec.footprint_bytes(entries, latent_neurons, t),
        });
        if sc.kind == ProtocolKind::MultiClassIncremental {
            entries += sc.per_class_quota.min(new_train_samples);
        }
    }
    Ok(Plan {
        kind: sc.kind,
        train_samples: train.len(),
        test_samples: test.len(),
        pretrain_samples: pool.len(),
        pretrain_classes,
        pretrain_scenarios,
        layer_index: sc.layer_index,
        latent_neurons,
        codec: sc.codec,
        initial_replay_entries: initial,
        initial_replay_bytes: sc.codec.footprint_bytes(initial, latent_neurons, t),
        steps,
    })
}

fn latent_width(net: &Network, k: usize) -> usize {
    if k == 0 {
        net.input_size().unwrap_or(0)
    } else {
        net.layers()[k - 1].outputs()
    }
}

fn labeled<'s>(samples: impl IntoIterator<Item = &'s Sample>) -> Vec<(SpikeTensor, u16)> {
    samples
        .into_iter()
        .map(|s| (s.tensor.clone(), s.class_id))
        .collect()
}

fn acc_or_zero<T: std::borrow::Borrow<SpikeTensor> + Sync>(
    net: &Network,
    data: &[(T, u16)],
) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    accuracy(net, data.iter().map(|(x, y)| (x.borrow(), *y)))
}

/// Checks the configuration against the data and resolves the pretraining filter.
fn validate(
    cfg: &ExperimentConfig,
    train: &SpikeSet,
    test: &SpikeSet,
) -> Result<(Vec<u16>, Vec<u16>)> {
    let sc = &cfg.scenario;
    let sizes = &cfg.network.sizes;
    if sizes.len() < 2 {
        return Err(invalid("network.sizes needs at least two entries"));
    }
    if sizes[0] != train.neurons() {
        return Err(invalid(format!(
            "network input size {} does not match dataset neurons {}",
            sizes[0],
            train.neurons()
        )));
    }
    if *sizes.last().expect("nonempty") != usize::from(train.num_classes()) {
        return Err(invalid(format!(
            "network output size {} does not match dataset classes {}",
            sizes.last().expect("nonempty"),
            train.num_classes()
        )));
    }
    if (test.timesteps(), test.neurons(), test.num_classes())
        != (train.timesteps(), train.neurons(), train.num_classes())
    {
        return Err(invalid("train and test sets have different shapes"));
    }
    if sc.layer_index >= sizes.len() - 1 {
        return Err(invalid(format!(
            "layer_index {} must be < layer count {}",
            sc.layer_index,
            sizes.len() - 1
        )));
    }
    sc.codec.validate(train.timesteps())?;
    if sc.schedule.is_empty() {
        return Err(invalid("schedule is empty"));
    }
    let adds = sc.kind.adds_classes();
    let (limit, what) = if adds {
        (train.num_classes(), "class")
    } else {
        (train.num_scenarios(), "scenario")
    };
    let mut seen = BTreeSet::new();
    for &id in &sc.schedule {
        if id >= limit {
            return Err(invalid(format!("schedule {what} {id} out of range")));
        }
        if !seen.insert(id) {
            return Err(invalid(format!("schedule repeats {what} {id}")));
        }
    }
    let all_classes: Vec<u16> = (0..train.num_classes()).collect();
    let all_scenarios: Vec<u16> = (0..train.num_scenarios()).collect();
    let not_scheduled = |all: &[u16]| {
        all.iter()
            .copied()
            .filter(|x| !seen.contains(x))
            .collect::<Vec<_>>()
    };
    let classes = match (&sc.pretrain_classes, adds) {
        (Some(c), _) => c.clone(),
        (None, true) => not_scheduled(&all_classes),
        (None, false) => all_classes.clone(),
    };
    let scenarios = match (&sc.pretrain_scenarios, adds) {
        (Some(s), _) => s.clone(),
        (None, true) => all_scenarios.clone(),
        (None, false) => not_scheduled(&all_scenarios),
    };
    let pre_ids = if adds { &classes } else { &scenarios };
    if pre_ids.iter().any(|id| seen.contains(id)) {
        return Err(invalid(format!(
            "schedule overlaps the pretraining {what}s"
        )));
    }
    if classes.iter().any(|&c| c >= train.num_classes())
        || scenarios.iter().any(|&s| s >= train.num_scenarios())
    {
        return Err(invalid("pretraining filter references unknown ids"));
    }
    if adds && classes.is_empty() && sc.reinit {
        return Err(invalid(
            "class protocols need at least one pretrained class",
        ));
    }
    Ok((classes, scenarios))
}
