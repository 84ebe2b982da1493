//! `spiking-replay`: dataset generation, pretraining, continual-learning runs
//! and replay-memory benchmarks.

mod manifest;
mod membench;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use spiking_replay::checkpoint::{load_checkpoint, save_checkpoint};
use spiking_replay::continual::{plan, split_train_test, ContinualRunner, ExperimentConfig};
use spiking_replay::metrics::{metrics_csv, report_csv};
use spiking_replay::replay::Codec;
use spiking_replay::spike::{LabelNames, SampleFilter, SpikeSet};
use spiking_replay::synth::{generate, label_names, SynthSpec};
use spiking_replay::train::evaluate;

use manifest::{config_hash, guard_overwrite, RunManifest};

#[derive(Debug)]
pub enum CliError {
    /// Bad arguments, configuration, or input files (exit 2).
    Usage(String),
    /// Training diverged (exit 3).
    Numeric(String),
}

impl CliError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Usage(format!("{}: {e}", path.display()))
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Numeric(m) => f.write_str(m),
        }
    }
}

impl From<spiking_replay::Error> for CliError {
    fn from(e: spiking_replay::Error) -> Self {
        match e {
            spiking_replay::Error::Numeric { .. } => CliError::Numeric(e.to_string()),
            other => CliError::Usage(other.to_string()),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Parser)]
#[command(
    name = "spiking-replay",
    version,
    about = "Spiking networks with compressed latent replay"
)]
struct Cli {
    /// Worker threads for batch-parallel work (default: all cores).
    #[arg(long, global = true, env = "SPIKING_REPLAY_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic spike dataset.
    Synth(SynthArgs),
    /// Train the full network on the pretraining subset and save a checkpoint.
    Pretrain(RunArgs),
    /// Run a continual-learning protocol and write its report.
    Continual(RunArgs),
    /// Print replay-buffer footprints for a grid of codecs and layer widths.
    Membench(MembenchArgs),
    /// Evaluate a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Validate a dataset file and summarize its contents.
    ConvertCheck(CheckArgs),
}

#[derive(Args, Serialize)]
struct SynthArgs {
    /// JSON generator spec; fields left out take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output dataset path.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    classes: Option<u16>,
    #[arg(long)]
    scenarios: Option<u16>,
    /// Samples per (class, scenario) pair.
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    timesteps: Option<usize>,
    #[arg(long)]
    neurons: Option<usize>,
    #[arg(long)]
    #[serde(skip)]
    force: bool,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment JSON; relative paths inside resolve against its directory.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    force: bool,
    /// Print the resolved plan and exit without training.
    #[arg(long)]
    dry_run: bool,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum CodecKind {
    Chunk,
    Aggregate,
    Hybrid,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Table,
    Csv,
    Json,
}

#[derive(Args, Serialize)]
struct MembenchArgs {
    #[arg(long, default_value_t = 2560)]
    entries: usize,
    /// Latent widths, one column each.
    #[arg(long, value_delimiter = ',', default_value = "700,200,100,50")]
    neurons: Vec<usize>,
    #[arg(long, default_value_t = 100)]
    timesteps: usize,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "chunk")]
    codec: Vec<CodecKind>,
    /// Compression ratios for the chunk and hybrid codecs.
    #[arg(long, value_delimiter = ',', default_value = "1,5,10")]
    ratios: Vec<usize>,
    /// Chunk-threshold spike threshold.
    #[arg(long, default_value_t = 1)]
    threshold: usize,
    #[arg(long, value_enum, default_value = "table")]
    #[serde(skip)]
    format: Format,
    /// Also write the grid as CSV to this path.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    force: bool,
}

#[derive(Args, Serialize)]
struct EvalArgs {
    /// Checkpoint directory.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset file.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_delimiter = ',')]
    classes: Option<Vec<u16>>,
    #[arg(long, value_delimiter = ',')]
    scenarios: Option<Vec<u16>>,
    /// Write the result as JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    force: bool,
}

#[derive(Args, Serialize)]
struct CheckArgs {
    /// Dataset file to validate.
    path: PathBuf,
    /// Write the summary as JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    force: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Pretrain(a) => cmd_run(a, false),
        Command::Continual(a) => cmd_run(a, true),
        Command::Membench(a) => cmd_membench(a),
        Command::Eval(a) => cmd_eval(a),
        Command::ConvertCheck(a) => cmd_convert_check(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

/// Manifest location for a single-file output.
fn file_manifest(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> CliResult<()> {
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

fn to_json<T: Serialize>(v: &T) -> CliResult<String> {
    serde_json::to_string_pretty(v)
        .map(|s| s + "\n")
        .map_err(|e| CliError::Usage(e.to_string()))
}

fn cmd_synth(a: SynthArgs) -> CliResult<()> {
    let mut spec: SynthSpec = match &a.config {
        Some(p) => {
            let bytes = fs::read(p).map_err(|e| CliError::io(p, e))?;
            serde_json::from_slice(&bytes)
                .map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?
        }
        None => SynthSpec::default(),
    };
    if let Some(v) = a.classes {
        spec.classes = v;
    }
    if let Some(v) = a.scenarios {
        spec.scenarios = v;
    }
    if let Some(v) = a.samples {
        spec.samples = v;
    }
    if let Some(v) = a.timesteps {
        spec.timesteps = v;
    }
    if let Some(v) = a.neurons {
        spec.neurons = v;
    }
    let manifest_path = file_manifest(&a.out);
    let hash = config_hash(&(&spec, a.seed))?;
    guard_overwrite(&manifest_path, &hash, a.force)?;
    let mut manifest = RunManifest::start("synth", hash, a.seed);
    let set = generate(&spec, a.seed)?;
    set.save(&a.out)?;
    let labels = LabelNames::sidecar_path(&a.out);
    label_names(&spec).save(&labels)?;
    manifest.outputs = vec![a.out.clone(), labels];
    manifest.finish(&manifest_path)?;
    println!(
        "wrote {} samples ({} classes x {} scenarios, {}x{}) to {}",
        set.len(),
        spec.classes,
        spec.scenarios,
        spec.timesteps,
        spec.neurons,
        a.out.display()
    );
    Ok(())
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Loads the experiment config; returns it with the seed override applied
/// (for hashing) and a copy whose paths are resolved against the config's directory.
fn load_config(path: &Path, seed: Option<u64>) -> CliResult<(ExperimentConfig, ExperimentConfig)> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    let mut cfg: ExperimentConfig = serde_json::from_slice(&bytes)
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let base = path.parent().unwrap_or(Path::new("."));
    let mut resolved = cfg.clone();
    resolved.dataset.train = resolve(base, &cfg.dataset.train);
    resolved.dataset.test = cfg.dataset.test.as_deref().map(|p| resolve(base, p));
    resolved.checkpoint = cfg.checkpoint.as_deref().map(|p| resolve(base, p));
    Ok((cfg, resolved))
}

fn load_set(path: &Path) -> CliResult<SpikeSet> {
    SpikeSet::load(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn load_data(cfg: &ExperimentConfig) -> CliResult<(SpikeSet, SpikeSet)> {
    let train = load_set(&cfg.dataset.train)?;
    match &cfg.dataset.test {
        Some(p) => Ok((train, load_set(p)?)),
        None => Ok(split_train_test(
            &train,
            cfg.dataset.test_fraction,
            cfg.seed,
        )?),
    }
}

#[derive(Serialize)]
struct PretrainSummary {
    seed: u64,
    epochs: usize,
    baseline_acc_full: f64,
    baseline_acc_old: f64,
    final_loss: Option<f64>,
}

#[derive(Serialize)]
struct ContinualSummary<'a> {
    seed: u64,
    kind: spiking_replay::continual::ProtocolKind,
    layer_index: usize,
    codec: Codec,
    baseline_acc_full: f64,
    baseline_acc_old: f64,
    average_forgetting: f64,
    steps: &'a [spiking_replay::continual::StepSummary],
}

/// `pretrain` (continual = false) and `continual` share setup and output handling.
fn cmd_run(a: RunArgs, continual: bool) -> CliResult<()> {
    let (raw, cfg) = load_config(&a.config, a.seed)?;
    let hash = config_hash(&raw)?;
    let (train, test) = load_data(&cfg)?;
    if a.dry_run {
        let p = plan(&cfg, &train, &test)?;
        print!("{}", to_json(&p)?);
        return Ok(());
    }
    let out = &a.out;
    let manifest_path = out.join("manifest.json");
    guard_overwrite(&manifest_path, &hash, a.force)?;
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let command = if continual { "continual" } else { "pretrain" };
    let mut manifest = RunManifest::start(command, hash, cfg.seed);

    let initial = match (&cfg.checkpoint, continual) {
        (Some(dir), true) => Some(
            load_checkpoint(dir)
                .map_err(|e| CliError::Usage(format!("{}: {e}", dir.display())))?
                .0,
        ),
        _ => None,
    };
    let pretrained = initial.is_some();
    let mut runner = ContinualRunner::new(&cfg, &train, &test, initial)?;
    if pretrained {
        runner.record_baseline()?;
    } else {
        runner.pretrain()?;
        let csv_path = out.join("pretrain_metrics.csv");
        write(&csv_path, metrics_csv(&runner.report().pretrain))?;
        let ck = out.join("checkpoint");
        save_checkpoint(runner.network(), cfg.seed, &ck)?;
        manifest.outputs.extend([csv_path, ck]);
    }

    if !continual {
        let r = runner.report();
        let summary = PretrainSummary {
            seed: cfg.seed,
            epochs: cfg.pretrain.epochs,
            baseline_acc_full: r.baseline_acc_full,
            baseline_acc_old: r.baseline_acc_old,
            final_loss: r.pretrain.last().map(|m| m.loss),
        };
        let path = out.join("summary.json");
        write(&path, to_json(&summary)?)?;
        manifest.outputs.push(path);
        println!(
            "pretrained {} epochs: acc_old {:.4}, acc_full {:.4}",
            cfg.pretrain.epochs, r.baseline_acc_old, r.baseline_acc_full
        );
        return manifest.finish(&manifest_path);
    }

    runner.capture()?;
    let replay_path = out.join("replay_initial.bin");
    runner.buffer().save(&replay_path)?;
    manifest.outputs.push(replay_path);
    for step in 0..cfg.scenario.schedule.len() {
        let s = runner.run_increment(step)?;
        let ck = out.join("checkpoints").join(format!("step_{step:02}"));
        save_checkpoint(runner.network(), cfg.seed, &ck)?;
        manifest.outputs.push(ck);
        println!(
            "step {step} (item {}): acc_old {:.4} -> {:.4}, acc_new {:.4} -> {:.4}, replay {}",
            s.item,
            s.acc_old_before,
            s.acc_old_after,
            s.acc_new_before,
            s.acc_new_after,
            membench::human_bytes(s.replay_bytes)
        );
    }
    if cfg.scenario.kind == spiking_replay::continual::ProtocolKind::MultiClassIncremental {
        let path = out.join("replay_final.bin");
        runner.buffer().save(&path)?;
        manifest.outputs.push(path);
    }
    let (_, _, report) = runner.into_parts();
    let report_path = out.join("report.csv");
    write(&report_path, report_csv(&report.rows))?;
    let summary = ContinualSummary {
        seed: cfg.seed,
        kind: cfg.scenario.kind,
        layer_index: cfg.scenario.layer_index,
        codec: cfg.scenario.codec,
        baseline_acc_full: report.baseline_acc_full,
        baseline_acc_old: report.baseline_acc_old,
        average_forgetting: report.average_forgetting(),
        steps: &report.steps,
    };
    let summary_path = out.join("summary.json");
    write(&summary_path, to_json(&summary)?)?;
    manifest.outputs.extend([report_path, summary_path]);
    manifest.finish(&manifest_path)
}

fn cmd_membench(a: MembenchArgs) -> CliResult<()> {
    let mut codecs = Vec::new();
    for kind in &a.codec {
        match kind {
            CodecKind::Chunk => {
                codecs.extend(a.ratios.iter().map(|&ratio| Codec::ChunkThreshold {
                    ratio,
                    threshold: a.threshold,
                }))
            }
            CodecKind::Aggregate => codecs.push(Codec::Aggregate),
            CodecKind::Hybrid => {
                codecs.extend(a.ratios.iter().map(|&ratio| Codec::Hybrid { ratio }))
            }
        }
    }
    if a.neurons.is_empty() || codecs.is_empty() {
        return Err(CliError::Usage("empty grid".into()));
    }
    for c in &codecs {
        c.validate(a.timesteps)?;
    }
    let cells = membench::grid(&codecs, a.entries, &a.neurons, a.timesteps);
    match a.format {
        Format::Table => print!("{}", membench::table(&cells, &a.neurons)),
        Format::Csv => print!("{}", membench::csv(&cells)),
        Format::Json => print!("{}", to_json(&cells)?),
    }
    if let Some(out) = &a.out {
        let manifest_path = file_manifest(out);
        let hash = config_hash(&a)?;
        guard_overwrite(&manifest_path, &hash, a.force)?;
        let mut manifest = RunManifest::start("membench", hash, 0);
        write(out, membench::csv(&cells))?;
        manifest.outputs.push(out.clone());
        manifest.finish(&manifest_path)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct EvalResult {
    samples: usize,
    accuracy: f64,
}

fn cmd_eval(a: EvalArgs) -> CliResult<()> {
    let (net, seed) = load_checkpoint(&a.checkpoint)
        .map_err(|e| CliError::Usage(format!("{}: {e}", a.checkpoint.display())))?;
    let set = load_set(&a.data)?;
    if net.input_size() != Some(set.neurons()) {
        return Err(CliError::Usage(format!(
            "checkpoint expects {:?} inputs, dataset has {}",
            net.input_size(),
            set.neurons()
        )));
    }
    let filter = SampleFilter {
        classes: a.classes.clone(),
        scenarios: a.scenarios.clone(),
    };
    let samples = set.filtered(&filter).count();
    let accuracy = evaluate(&net, &set, Some(&filter))?;
    let result = EvalResult { samples, accuracy };
    let text = to_json(&result)?;
    print!("{text}");
    if let Some(out) = &a.out {
        let manifest_path = file_manifest(out);
        let hash = config_hash(&a)?;
        guard_overwrite(&manifest_path, &hash, a.force)?;
        let mut manifest = RunManifest::start("eval", hash, seed);
        write(out, text)?;
        manifest.outputs.push(out.clone());
        manifest.finish(&manifest_path)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct CheckSummary {
    samples: usize,
    timesteps: usize,
    neurons: usize,
    classes: u16,
    scenarios: u16,
    class_histogram: Vec<usize>,
    scenario_histogram: Vec<usize>,
    spikes: u64,
    labels: Option<LabelNames>,
}

fn cmd_convert_check(a: CheckArgs) -> CliResult<()> {
    let set = load_set(&a.path)?;
    let sidecar = LabelNames::sidecar_path(&a.path);
    let labels = if sidecar.exists() {
        let l = LabelNames::load(&sidecar)
            .map_err(|e| CliError::Usage(format!("{}: {e}", sidecar.display())))?;
        if l.classes.len() != usize::from(set.num_classes())
            || l.scenarios.len() != usize::from(set.num_scenarios())
        {
            return Err(CliError::Usage(format!(
                "{}: label counts do not match the dataset header",
                sidecar.display()
            )));
        }
        Some(l)
    } else {
        None
    };
    let summary = CheckSummary {
        samples: set.len(),
        timesteps: set.timesteps(),
        neurons: set.neurons(),
        classes: set.num_classes(),
        scenarios: set.num_scenarios(),
        class_histogram: set.class_histogram(),
        scenario_histogram: set.scenario_histogram(),
        spikes: set.samples().iter().map(|s| s.tensor.popcount()).sum(),
        labels,
    };
    let text = to_json(&summary)?;
    print!("{text}");
    if let Some(out) = &a.out {
        let manifest_path = file_manifest(out);
        let hash = config_hash(&a)?;
        guard_overwrite(&manifest_path, &hash, a.force)?;
        let mut manifest = RunManifest::start("convert-check", hash, 0);
        write(out, text)?;
        manifest.outputs.push(out.clone());
        manifest.finish(&manifest_path)?;
    }
    Ok(())
}
