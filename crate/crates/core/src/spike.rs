//! Bit-packed spike tensors, labeled spike datasets and the `SPKS` file format.
//!
//! A [`SpikeTensor`] stores `timesteps × neurons` binary activations row-major
//! by timestep: bit `t·N + n` lives in byte `(t·N + n) / 8` at bit position
//! `(t·N + n) % 8` (LSB first). Padding is per tensor, so the payload is
//! exactly `ceil(T·N / 8)` bytes and the unused high bits of the last byte
//! are always zero.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{format_err, invalid, Result};

#[derive(Clone, PartialEq, Eq, Hash)]
pub struct SpikeTensor {
    timesteps: usize,
    neurons: usize,
    bits: Vec<u8>,
}

impl std::fmt::Debug for SpikeTensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpikeTensor")
            .field("timesteps", &self.timesteps)
            .field("neurons", &self.neurons)
            .field("popcount", &self.popcount())
            .finish()
    }
}

impl SpikeTensor {
    /// Payload size in bytes of a `timesteps × neurons` tensor.
    pub const fn payload_len(timesteps: usize, neurons: usize) -> usize {
        (timesteps * neurons).div_ceil(8)
    }

    pub fn zeros(timesteps: usize, neurons: usize) -> Result<Self> {
        if timesteps == 0 || neurons == 0 {
            return Err(invalid(format!(
                "spike tensor dimensions must be nonzero, got {timesteps}x{neurons}"
            )));
        }
        Ok(Self {
            timesteps,
            neurons,
            bits: vec![0; Self::payload_len(timesteps, neurons)],
        })
    }

    /// Packs a dense `[timesteps][neurons]` boolean matrix.
    pub fn pack<R: AsRef<[bool]>>(dense: &[R]) -> Result<Self> {
        let timesteps = dense.len();
        let neurons = dense.first().map_or(0, |r| r.as_ref().len());
        let mut out = Self::zeros(timesteps, neurons)?;
        for (t, row) in dense.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != neurons {
                return Err(invalid(format!(
                    "ragged matrix: row {t} has {} columns, expected {neurons}",
                    row.len()
                )));
            }
            for (n, &b) in row.iter().enumerate() {
                if b {
                    out.set(t, n);
                }
            }
        }
        Ok(out)
    }

    pub fn from_fn(
        timesteps: usize,
        neurons: usize,
        mut f: impl FnMut(usize, usize) -> bool,
    ) -> Result<Self> {
        let mut out = Self::zeros(timesteps, neurons)?;
        for t in 0..timesteps {
            for n in 0..neurons {
                if f(t, n) {
                    out.set(t, n);
                }
            }
        }
        Ok(out)
    }

    /// Wraps an existing packed payload, validating its length and padding.
    pub fn from_payload(timesteps: usize, neurons: usize, bits: Vec<u8>) -> Result<Self> {
        if timesteps == 0 || neurons == 0 {
            return Err(invalid("spike tensor dimensions must be nonzero"));
        }
        let expected = Self::payload_len(timesteps, neurons);
        if bits.len() != expected {
            return Err(invalid(format!(
                "payload has {} bytes, expected {expected}",
                bits.len()
            )));
        }
        let used = (timesteps * neurons) % 8;
        if used != 0 && bits[expected - 1] >> used != 0 {
            return Err(invalid("nonzero padding bits in payload"));
        }
        Ok(Self {
            timesteps,
            neurons,
            bits,
        })
    }

    pub fn unpack(&self) -> Vec<Vec<bool>> {
        (0..self.timesteps)
            .map(|t| (0..self.neurons).map(|n| self.bit(t, n)).collect())
            .collect()
    }

    pub fn timesteps(&self) -> usize {
        self.timesteps
    }

    pub fn neurons(&self) -> usize {
        self.neurons
    }

    pub fn payload(&self) -> &[u8] {
        &self.bits
    }

    pub fn into_payload(self) -> Vec<u8> {
        self.bits
    }

    /// Bounds-checked read.
    pub fn get(&self, t: usize, n: usize) -> Result<bool> {
        if t >= self.timesteps || n >= self.neurons {
            return Err(invalid(format!(
                "index ({t}, {n}) out of range for {}x{} tensor",
                self.timesteps, self.neurons
            )));
        }
        Ok(self.bit(t, n))
    }

    /// Unchecked-by-contract read; panics only if the flat index leaves the payload.
    #[inline]
    pub fn bit(&self, t: usize, n: usize) -> bool {
        let i = t * self.neurons + n;
        (self.bits[i >> 3] >> (i & 7)) & 1 == 1
    }

    #[inline]
    pub(crate) fn set(&mut self, t: usize, n: usize) {
        let i = t * self.neurons + n;
        self.bits[i >> 3] |= 1 << (i & 7);
    }

    pub fn popcount(&self) -> u64 {
        self.bits.iter().map(|b| u64::from(b.count_ones())).sum()
    }

    /// Indices of neurons spiking at timestep `t`, ascending.
    pub fn active(&self, t: usize) -> Vec<usize> {
        let start = t * self.neurons;
        let end = start + self.neurons;
        let mut out = Vec::new();
        let mut byte = start >> 3;
        while byte << 3 < end {
            let mut b = self.bits[byte];
            while b != 0 {
                let i = (byte << 3) + b.trailing_zeros() as usize;
                if i >= start && i < end {
                    out.push(i - start);
                }
                b &= b - 1;
            }
            byte += 1;
        }
        out
    }

    /// Row `t` as 0.0/1.0 values.
    pub fn row_f64(&self, t: usize) -> Vec<f64> {
        (0..self.neurons)
            .map(|n| if self.bit(t, n) { 1.0 } else { 0.0 })
            .collect()
    }

    /// Total spikes emitted by each neuron over all timesteps.
    pub fn counts_per_neuron(&self) -> Vec<u32> {
        let mut counts = vec![0u32; self.neurons];
        for t in 0..self.timesteps {
            for n in self.active(t) {
                counts[n] += 1;
            }
        }
        counts
    }

    /// The time series of neuron `n`.
    pub fn neuron_sequence(&self, n: usize) -> Vec<bool> {
        (0..self.timesteps).map(|t| self.bit(t, n)).collect()
    }

    /// Builds a tensor from one time series per neuron (all of length `timesteps`).
    pub fn from_neuron_sequences(timesteps: usize, seqs: &[Vec<bool>]) -> Result<Self> {
        let mut out = Self::zeros(timesteps, seqs.len())?;
        for (n, seq) in seqs.iter().enumerate() {
            if seq.len() != timesteps {
                return Err(invalid(format!(
                    "neuron {n} sequence has length {}, expected {timesteps}",
                    seq.len()
                )));
            }
            for (t, &b) in seq.iter().enumerate() {
                if b {
                    out.set(t, n);
                }
            }
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sample {
    pub tensor: SpikeTensor,
    pub class_id: u16,
    pub scenario_id: u16,
}

/// Restricts a dataset to a set of classes and/or scenarios. `None` means no restriction.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleFilter {
    #[serde(default)]
    pub classes: Option<Vec<u16>>,
    #[serde(default)]
    pub scenarios: Option<Vec<u16>>,
}

impl SampleFilter {
    pub fn classes(ids: impl IntoIterator<Item = u16>) -> Self {
        Self {
            classes: Some(ids.into_iter().collect()),
            scenarios: None,
        }
    }

    pub fn scenarios(ids: impl IntoIterator<Item = u16>) -> Self {
        Self {
            classes: None,
            scenarios: Some(ids.into_iter().collect()),
        }
    }

    pub fn matches(&self, s: &Sample) -> bool {
        self.classes
            .as_ref()
            .is_none_or(|c| c.contains(&s.class_id))
            && self
                .scenarios
                .as_ref()
                .is_none_or(|c| c.contains(&s.scenario_id))
    }
}

/// A labeled collection of equally-shaped spike tensors.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SpikeSet {
    timesteps: usize,
    neurons: usize,
    num_classes: u16,
    num_scenarios: u16,
    samples: Vec<Sample>,
}

const MAGIC: &[u8; 4] = b"SPKS";
pub const FORMAT_VERSION: u16 = 1;
/// magic + version + T + N + classes + scenarios + count
pub const HEADER_LEN: usize = 4 + 2 + 4 + 4 + 2 + 2 + 4;

impl SpikeSet {
    pub fn new(
        timesteps: usize,
        neurons: usize,
        num_classes: u16,
        num_scenarios: u16,
        samples: Vec<Sample>,
    ) -> Result<Self> {
        if timesteps == 0 || neurons == 0 {
            return Err(invalid("spike set dimensions must be nonzero"));
        }
        if timesteps > u32::MAX as usize || neurons > u32::MAX as usize {
            return Err(invalid("spike set dimensions exceed u32"));
        }
        for (i, s) in samples.iter().enumerate() {
            if s.tensor.timesteps() != timesteps || s.tensor.neurons() != neurons {
                return Err(invalid(format!(
                    "sample {i} has shape {}x{}, expected {timesteps}x{neurons}",
                    s.tensor.timesteps(),
                    s.tensor.neurons()
                )));
            }
            if s.class_id >= num_classes {
                return Err(invalid(format!(
                    "sample {i} class {} >= {num_classes}",
                    s.class_id
                )));
            }
            if s.scenario_id >= num_scenarios {
                return Err(invalid(format!(
                    "sample {i} scenario {} >= {num_scenarios}",
                    s.scenario_id
                )));
            }
        }
        Ok(Self {
            timesteps,
            neurons,
            num_classes,
            num_scenarios,
            samples,
        })
    }

    pub fn timesteps(&self) -> usize {
        self.timesteps
    }

    pub fn neurons(&self) -> usize {
        self.neurons
    }

    pub fn num_classes(&self) -> u16 {
        self.num_classes
    }

    pub fn num_scenarios(&self) -> u16 {
        self.num_scenarios
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn filtered<'a>(&'a self, filter: &'a SampleFilter) -> impl Iterator<Item = &'a Sample> {
        self.samples.iter().filter(move |s| filter.matches(s))
    }

    /// A new set with the same declared dimensions holding only the matching samples.
    pub fn subset(&self, filter: &SampleFilter) -> SpikeSet {
        SpikeSet {
            samples: self.filtered(filter).cloned().collect(),
            ..self.header_only()
        }
    }

    /// A new set with the same declared dimensions holding `samples`.
    pub fn with_samples(&self, samples: Vec<Sample>) -> Result<SpikeSet> {
        SpikeSet::new(
            self.timesteps,
            self.neurons,
            self.num_classes,
            self.num_scenarios,
            samples,
        )
    }

    fn header_only(&self) -> SpikeSet {
        SpikeSet {
            samples: Vec::new(),
            ..*self
        }
    }

    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; usize::from(self.num_classes)];
        for s in &self.samples {
            h[usize::from(s.class_id)] += 1;
        }
        h
    }

    pub fn scenario_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; usize::from(self.num_scenarios)];
        for s in &self.samples {
            h[usize::from(s.scenario_id)] += 1;
        }
        h
    }

    /// Encoded file size for a set with these dimensions and sample count.
    pub fn encoded_len(timesteps: usize, neurons: usize, samples: usize) -> usize {
        HEADER_LEN + samples * (4 + SpikeTensor::payload_len(timesteps, neurons)) + 4
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out =
            Vec::with_capacity(Self::encoded_len(self.timesteps, self.neurons, self.len()));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.timesteps as u32).to_le_bytes());
        out.extend_from_slice(&(self.neurons as u32).to_le_bytes());
        out.extend_from_slice(&self.num_classes.to_le_bytes());
        out.extend_from_slice(&self.num_scenarios.to_le_bytes());
        out.extend_from_slice(&(self.samples.len() as u32).to_le_bytes());
        for s in &self.samples {
            out.extend_from_slice(&s.class_id.to_le_bytes());
            out.extend_from_slice(&s.scenario_id.to_le_bytes());
            out.extend_from_slice(s.tensor.payload());
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4)?;
        if magic != MAGIC {
            return Err(format_err(0, format!("bad magic {magic:02x?}")));
        }
        let version = r.u16()?;
        if version != FORMAT_VERSION {
            return Err(format_err(4, format!("unsupported version {version}")));
        }
        let timesteps = r.u32()? as usize;
        let neurons = r.u32()? as usize;
        let num_classes = r.u16()?;
        let num_scenarios = r.u16()?;
        let count = r.u32()? as usize;
        if timesteps == 0 || neurons == 0 {
            return Err(format_err(6, "zero tensor dimension"));
        }

        let payload = SpikeTensor::payload_len(timesteps, neurons);
        let expected = HEADER_LEN as u64 + count as u64 * (4 + payload as u64) + 4;
        if (bytes.len() as u64) < expected {
            return Err(format_err(
                bytes.len() as u64,
                format!("truncated file: expected {expected} bytes"),
            ));
        }
        if bytes.len() as u64 > expected {
            return Err(format_err(expected, "trailing bytes after checksum"));
        }
        let body = expected as usize - 4;
        let stored = u32::from_le_bytes(bytes[body..].try_into().expect("4 bytes"));
        let actual = crc32fast::hash(&bytes[..body]);
        if stored != actual {
            return Err(format_err(
                body as u64,
                format!("checksum mismatch: stored {stored:08x}, computed {actual:08x}"),
            ));
        }

        let mut samples = Vec::with_capacity(count);
        for _ in 0..count {
            let at = r.pos as u64;
            let class_id = r.u16()?;
            let scenario_id = r.u16()?;
            if class_id >= num_classes || scenario_id >= num_scenarios {
                return Err(format_err(
                    at,
                    format!("label ({class_id}, {scenario_id}) out of declared range"),
                ));
            }
            let payload_at = r.pos as u64;
            let tensor = SpikeTensor::from_payload(timesteps, neurons, r.take(payload)?.to_vec())
                .map_err(|e| format_err(payload_at, e.to_string()))?;
            samples.push(Sample {
                tensor,
                class_id,
                scenario_id,
            });
        }
        Ok(Self {
            timesteps,
            neurons,
            num_classes,
            num_scenarios,
            samples,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(format_err(
                self.bytes.len() as u64,
                format!("truncated file: needed {n} bytes at offset {}", self.pos),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(
            self.take(2)?.try_into().expect("2 bytes"),
        ))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }
}

/// Human-readable names for the dense labels of a [`SpikeSet`], kept beside the
/// binary file as JSON.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelNames {
    pub classes: Vec<String>,
    pub scenarios: Vec<String>,
}

impl LabelNames {
    /// `data.spks` -> `data.spks.labels.json`
    pub fn sidecar_path(set_path: &Path) -> std::path::PathBuf {
        let mut s = set_path.as_os_str().to_owned();
        s.push(".labels.json");
        s.into()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }
}
