//! Python bindings: spike tensors and datasets, replay codecs, networks,
//! synthetic data and evaluation.

use pyo3::exceptions::{PyArithmeticError, PyIOError, PyIndexError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyBytes;

use spiking_replay::checkpoint;
use spiking_replay::continual;
use spiking_replay::neuron::{Network, NeuronParams, WeightInit};
use spiking_replay::replay::{self, compress_tensor, decompress_payload};
use spiking_replay::rng::{stream, Stream};
use spiking_replay::spike::{SampleFilter, SpikeSet, SpikeTensor};
use spiking_replay::synth::{generate, SynthSpec};
use spiking_replay::train;
use spiking_replay::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyIOError::new_err(e.to_string()),
        e @ Error::Numeric { .. } => PyArithmeticError::new_err(e.to_string()),
        e => PyValueError::new_err(e.to_string()),
    }
}

trait IntoPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> IntoPy<T> for spiking_replay::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

/// Python bools and 0/1 ints both arrive as integers.
fn bools(v: &[u8]) -> Vec<bool> {
    v.iter().map(|&b| b != 0).collect()
}

/// Bit-packed binary spike raster, indexed `[t][neuron]`.
#[pyclass(
    name = "SpikeTensor",
    module = "spiking_replay",
    frozen,
    skip_from_py_object
)]
#[derive(Clone)]
struct PySpikeTensor {
    inner: SpikeTensor,
}

#[pymethods]
impl PySpikeTensor {
    /// Builds a tensor from a list of rows of booleans (or 0/1 ints).
    #[new]
    fn new(rows: Vec<Vec<u8>>) -> PyResult<Self> {
        let rows: Vec<Vec<bool>> = rows.iter().map(|r| bools(r)).collect();
        Ok(Self {
            inner: SpikeTensor::pack(&rows).py()?,
        })
    }

    #[staticmethod]
    fn zeros(timesteps: usize, neurons: usize) -> PyResult<Self> {
        Ok(Self {
            inner: SpikeTensor::zeros(timesteps, neurons).py()?,
        })
    }

    #[getter]
    fn timesteps(&self) -> usize {
        self.inner.timesteps()
    }

    #[getter]
    fn neurons(&self) -> usize {
        self.inner.neurons()
    }

    fn get(&self, t: usize, n: usize) -> PyResult<bool> {
        self.inner
            .get(t, n)
            .map_err(|e| PyIndexError::new_err(e.to_string()))
    }

    fn to_list(&self) -> Vec<Vec<bool>> {
        self.inner.unpack()
    }

    fn popcount(&self) -> u64 {
        self.inner.popcount()
    }

    fn counts_per_neuron(&self) -> Vec<u32> {
        self.inner.counts_per_neuron()
    }

    fn payload<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, self.inner.payload())
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        format!(
            "SpikeTensor(timesteps={}, neurons={}, spikes={})",
            self.inner.timesteps(),
            self.inner.neurons(),
            self.inner.popcount()
        )
    }
}

/// A labeled collection of equally shaped spike tensors.
#[pyclass(name = "SpikeSet", module = "spiking_replay", frozen)]
struct PySpikeSet {
    inner: SpikeSet,
}

#[pymethods]
impl PySpikeSet {
    #[staticmethod]
    fn load(path: std::path::PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: SpikeSet::load(path).py()?,
        })
    }

    #[staticmethod]
    fn from_bytes(data: &[u8]) -> PyResult<Self> {
        Ok(Self {
            inner: SpikeSet::from_bytes(data).py()?,
        })
    }

    fn save(&self, path: std::path::PathBuf) -> PyResult<()> {
        self.inner.save(path).py()
    }

    fn to_bytes<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &self.inner.to_bytes())
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    /// `(tensor, class_id, scenario_id)` of sample `i`.
    fn __getitem__(&self, i: usize) -> PyResult<(PySpikeTensor, u16, u16)> {
        let s = self
            .inner
            .samples()
            .get(i)
            .ok_or_else(|| PyIndexError::new_err(format!("sample {i} out of range")))?;
        Ok((
            PySpikeTensor {
                inner: s.tensor.clone(),
            },
            s.class_id,
            s.scenario_id,
        ))
    }

    #[getter]
    fn timesteps(&self) -> usize {
        self.inner.timesteps()
    }

    #[getter]
    fn neurons(&self) -> usize {
        self.inner.neurons()
    }

    #[getter]
    fn num_classes(&self) -> u16 {
        self.inner.num_classes()
    }

    #[getter]
    fn num_scenarios(&self) -> u16 {
        self.inner.num_scenarios()
    }

    fn class_histogram(&self) -> Vec<usize> {
        self.inner.class_histogram()
    }

    fn scenario_histogram(&self) -> Vec<usize> {
        self.inner.scenario_histogram()
    }

    /// Samples whose class and scenario are in the given lists (`None` = any).
    #[pyo3(signature = (classes=None, scenarios=None))]
    fn subset(&self, classes: Option<Vec<u16>>, scenarios: Option<Vec<u16>>) -> Self {
        Self {
            inner: self.inner.subset(&SampleFilter { classes, scenarios }),
        }
    }

    /// Stratified `(train, test)` split per (class, scenario) cell.
    fn split(&self, test_fraction: f64, seed: u64) -> PyResult<(Self, Self)> {
        let (a, b) = continual::split_train_test(&self.inner, test_fraction, seed).py()?;
        Ok((Self { inner: a }, Self { inner: b }))
    }

    fn __repr__(&self) -> String {
        format!(
            "SpikeSet(samples={}, timesteps={}, neurons={}, classes={}, scenarios={})",
            self.inner.len(),
            self.inner.timesteps(),
            self.inner.neurons(),
            self.inner.num_classes(),
            self.inner.num_scenarios()
        )
    }
}

/// Replay codec: `Codec.chunk(ratio, threshold)`, `Codec.aggregate()` or `Codec.hybrid(ratio)`.
#[pyclass(name = "Codec", module = "spiking_replay", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyCodec {
    inner: replay::Codec,
}

#[pymethods]
impl PyCodec {
    #[staticmethod]
    #[pyo3(signature = (ratio, threshold=1))]
    fn chunk(ratio: usize, threshold: usize) -> Self {
        Self {
            inner: replay::Codec::ChunkThreshold { ratio, threshold },
        }
    }

    #[staticmethod]
    fn aggregate() -> Self {
        Self {
            inner: replay::Codec::Aggregate,
        }
    }

    #[staticmethod]
    fn hybrid(ratio: usize) -> Self {
        Self {
            inner: replay::Codec::Hybrid { ratio },
        }
    }

    fn bits_per_sequence(&self, timesteps: usize) -> PyResult<u64> {
        self.inner.validate(timesteps).py()?;
        Ok(self.inner.bits_per_sequence(timesteps))
    }

    fn footprint_bytes(&self, entries: usize, neurons: usize, timesteps: usize) -> PyResult<u64> {
        self.inner.validate(timesteps).py()?;
        Ok(self.inner.footprint_bytes(entries, neurons, timesteps))
    }

    /// Compresses and decompresses `tensor`, as a replayed latent would be.
    fn roundtrip(&self, tensor: &PySpikeTensor) -> PyResult<PySpikeTensor> {
        let x = &tensor.inner;
        let p = compress_tensor(self.inner, x).py()?;
        let inner = decompress_payload(self.inner, &p, x.neurons(), x.timesteps()).py()?;
        Ok(PySpikeTensor { inner })
    }

    fn __repr__(&self) -> String {
        format!("Codec({:?})", self.inner)
    }
}

/// Stack of recurrent second-order LIF layers; the last layer is the non-recurrent readout.
#[pyclass(name = "Network", module = "spiking_replay")]
struct PyNetwork {
    inner: Network,
}

#[pymethods]
impl PyNetwork {
    /// `sizes = [inputs, hidden..., outputs]`.
    #[new]
    #[pyo3(signature = (sizes, split_index=0, seed=0, alpha=0.9, beta=0.8, theta=1.0))]
    fn new(
        sizes: Vec<usize>,
        split_index: usize,
        seed: u64,
        alpha: f64,
        beta: f64,
        theta: f64,
    ) -> PyResult<Self> {
        let params = NeuronParams { alpha, beta, theta };
        let mut rng = stream(seed, Stream::Init, 0);
        let inner =
            Network::build(&sizes, params, WeightInit::default(), split_index, &mut rng).py()?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(dir: std::path::PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: checkpoint::load_checkpoint(dir).py()?.0,
        })
    }

    #[pyo3(signature = (dir, seed=0))]
    fn save(&self, dir: std::path::PathBuf, seed: u64) -> PyResult<()> {
        checkpoint::save_checkpoint(&self.inner, seed, dir).py()
    }

    #[getter]
    fn sizes(&self) -> Vec<usize> {
        let mut s: Vec<usize> = self.inner.input_size().into_iter().collect();
        s.extend(self.inner.layers().iter().map(|l| l.outputs()));
        s
    }

    #[getter]
    fn split_index(&self) -> usize {
        self.inner.split_index()
    }

    /// Spike outputs of every layer.
    fn forward(&self, x: &PySpikeTensor) -> PyResult<Vec<PySpikeTensor>> {
        let outs = self.inner.forward(&x.inner).py()?;
        Ok(outs
            .into_iter()
            .map(|inner| PySpikeTensor { inner })
            .collect())
    }

    fn predict(&self, x: &PySpikeTensor) -> PyResult<usize> {
        train::predict(&self.inner, &x.inner).py()
    }

    /// Top-1 accuracy on `dataset`, optionally restricted to classes/scenarios.
    #[pyo3(signature = (dataset, classes=None, scenarios=None))]
    fn evaluate(
        &self,
        dataset: &PySpikeSet,
        classes: Option<Vec<u16>>,
        scenarios: Option<Vec<u16>>,
    ) -> PyResult<f64> {
        let f = SampleFilter { classes, scenarios };
        train::evaluate(&self.inner, &dataset.inner, Some(&f)).py()
    }

    /// Trains all layers on `dataset` and returns per-epoch `(loss, accuracy)`.
    #[pyo3(signature = (dataset, epochs=10, eta=1e-3, batch_size=32, seed=0))]
    fn fit(
        &mut self,
        dataset: &PySpikeSet,
        epochs: usize,
        eta: f64,
        batch_size: usize,
        seed: u64,
    ) -> PyResult<Vec<(f64, f64)>> {
        let data: Vec<(SpikeTensor, u16)> = dataset
            .inner
            .samples()
            .iter()
            .map(|s| (s.tensor.clone(), s.class_id))
            .collect();
        let cfg = train::TrainConfig {
            eta,
            epochs,
            batch_size,
            seed,
            ..Default::default()
        };
        let stats = train::train_epochs(&mut self.inner, &data, &cfg).py()?;
        Ok(stats.into_iter().map(|s| (s.loss, s.accuracy)).collect())
    }

    /// Redraws output neuron `class_id` from the statistics of the other output rows.
    fn reinit_class(&mut self, class_id: usize, seed: u64) -> PyResult<()> {
        let mut rng = stream(seed, Stream::Reinit, 0);
        continual::reinit_new_class(&mut self.inner, class_id, &mut rng).py()
    }

    /// CRC32 of the weights of the first `k` layers (all layers when omitted).
    #[pyo3(signature = (k=None))]
    fn fingerprint(&self, k: Option<usize>) -> u32 {
        match k {
            Some(k) => self.inner.prefix_fingerprint(k),
            None => self.inner.fingerprint(),
        }
    }

    fn __repr__(&self) -> String {
        format!(
            "Network(sizes={:?}, split_index={})",
            self.sizes(),
            self.inner.split_index()
        )
    }
}

/// Synthetic dataset: `samples` per (class, scenario) pair.
#[pyfunction]
#[pyo3(signature = (classes=4, scenarios=2, samples=50, timesteps=100, neurons=64, seed=0))]
fn synth(
    classes: u16,
    scenarios: u16,
    samples: usize,
    timesteps: usize,
    neurons: usize,
    seed: u64,
) -> PyResult<PySpikeSet> {
    let spec = SynthSpec {
        classes,
        scenarios,
        samples,
        timesteps,
        neurons,
        ..Default::default()
    };
    Ok(PySpikeSet {
        inner: generate(&spec, seed).py()?,
    })
}

#[pyfunction]
#[pyo3(signature = (u, slope=25.0))]
fn surrogate_grad(u: f64, slope: f64) -> f64 {
    train::surrogate_grad(u, slope)
}

#[pyfunction]
fn forgetting(acc_old_before: f64, acc_old_after: f64) -> f64 {
    continual::forgetting(acc_old_before, acc_old_after)
}

#[pyfunction]
fn count_width(max: usize) -> u32 {
    replay::count_width(max)
}

#[pyfunction]
#[pyo3(signature = (seq, ratio, threshold=1))]
fn compress_chunk_threshold(seq: Vec<u8>, ratio: usize, threshold: usize) -> PyResult<Vec<bool>> {
    replay::compress_chunk_threshold(&bools(&seq), ratio, threshold).py()
}

#[pyfunction]
fn decompress_chunk_threshold(comp: Vec<u8>, ratio: usize) -> Vec<bool> {
    replay::decompress_chunk_threshold(&bools(&comp), ratio)
}

/// Runs a continual-learning experiment described by a JSON config string
/// on a train/test pair and returns the report as JSON.
#[pyfunction]
fn run_protocol(
    config_json: &str,
    train_set: &PySpikeSet,
    test_set: &PySpikeSet,
    py: Python<'_>,
) -> PyResult<String> {
    let cfg = continual::ExperimentConfig::from_json(config_json).py()?;
    let report = py
        .detach(|| continual::run_protocol(&cfg, &train_set.inner, &test_set.inner, None))
        .py()?;
    report.to_json().py()
}

#[pymodule]
#[pyo3(name = "spiking_replay")]
fn spiking_replay_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySpikeTensor>()?;
    m.add_class::<PySpikeSet>()?;
    m.add_class::<PyCodec>()?;
    m.add_class::<PyNetwork>()?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(surrogate_grad, m)?)?;
    m.add_function(wrap_pyfunction!(forgetting, m)?)?;
    m.add_function(wrap_pyfunction!(count_width, m)?)?;
    m.add_function(wrap_pyfunction!(compress_chunk_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(decompress_chunk_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(run_protocol, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
