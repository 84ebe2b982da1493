//! Latent-replay capture, time-axis spike codecs and the compressed replay buffer.
//!
//! Three codecs operate on each neuron's spike sequence independently:
//!
//! * `chunk_threshold`: split the sequence into chunks of `ratio` steps and
//!   emit one spike per chunk whose spike count reaches `threshold`.
//!   Decompression puts that spike on the first step of the chunk.
//! * `aggregate`: store only the total spike count; expansion fills the first
//!   `count` steps.
//! * `hybrid`: store the per-chunk spike counts; expansion fills the first
//!   `count` steps of each chunk.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{format_err, invalid, Result};
use crate::neuron::Network;
use crate::rng::{stream, Stream};
use crate::spike::SpikeTensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Codec {
    ChunkThreshold { ratio: usize, threshold: usize },
    Aggregate,
    Hybrid { ratio: usize },
}

impl Default for Codec {
    fn default() -> Self {
        Codec::ChunkThreshold {
            ratio: 1,
            threshold: 1,
        }
    }
}

/// Bits needed to store any integer in `0..=max`, i.e. `ceil(log2(max + 1))`.
pub fn count_width(max: usize) -> u32 {
    usize::BITS - max.leading_zeros()
}

impl Codec {
    pub fn chunk(ratio: usize) -> Self {
        Codec::ChunkThreshold {
            ratio,
            threshold: 1,
        }
    }

    pub fn ratio(&self) -> Option<usize> {
        match *self {
            Codec::ChunkThreshold { ratio, .. } | Codec::Hybrid { ratio } => Some(ratio),
            Codec::Aggregate => None,
        }
    }

    pub fn validate(&self, timesteps: usize) -> Result<()> {
        if let Codec::ChunkThreshold { threshold, ratio } = *self {
            if threshold == 0 || threshold > ratio {
                return Err(invalid(format!(
                    "threshold must lie in 1..={ratio}, got {threshold}"
                )));
            }
        }
        if let Some(ratio) = self.ratio() {
            if ratio == 0 {
                return Err(invalid("compression ratio must be >= 1"));
            }
            if !timesteps.is_multiple_of(ratio) {
                return Err(invalid(format!(
                    "sequence length {timesteps} is not divisible by compression ratio {ratio}"
                )));
            }
        }
        Ok(())
    }

    /// Stored bits for one neuron's sequence of `timesteps` steps.
    pub fn bits_per_sequence(&self, timesteps: usize) -> u64 {
        match *self {
            Codec::ChunkThreshold { ratio, .. } => (timesteps / ratio) as u64,
            Codec::Aggregate => u64::from(count_width(timesteps)),
            Codec::Hybrid { ratio } => (timesteps / ratio) as u64 * u64::from(count_width(ratio)),
        }
    }

    /// Payload bytes of `entries` latents of `neurons × timesteps`, headers
    /// and labels excluded.
    pub fn footprint_bytes(&self, entries: usize, neurons: usize, timesteps: usize) -> u64 {
        (entries as u64 * neurons as u64 * self.bits_per_sequence(timesteps)).div_ceil(8)
    }
}

fn check_chunks(len: usize, ratio: usize) -> Result<()> {
    if ratio == 0 {
        return Err(invalid("compression ratio must be >= 1"));
    }
    if !len.is_multiple_of(ratio) {
        return Err(invalid(format!(
            "sequence length {len} is not divisible by compression ratio {ratio}"
        )));
    }
    Ok(())
}

pub fn compress_chunk_threshold(seq: &[bool], ratio: usize, threshold: usize) -> Result<Vec<bool>> {
    check_chunks(seq.len(), ratio)?;
    Ok(seq
        .chunks_exact(ratio)
        .map(|c| c.iter().filter(|&&b| b).count() >= threshold)
        .collect())
}

pub fn decompress_chunk_threshold(comp: &[bool], ratio: usize) -> Vec<bool> {
    let mut out = vec![false; comp.len() * ratio];
    for (i, &b) in comp.iter().enumerate() {
        out[i * ratio] = b;
    }
    out
}

pub fn compress_aggregate(seq: &[bool]) -> usize {
    seq.iter().filter(|&&b| b).count()
}

pub fn expand_aggregate(count: usize, timesteps: usize) -> Result<Vec<bool>> {
    if count > timesteps {
        return Err(invalid(format!(
            "spike count {count} exceeds sequence length {timesteps}"
        )));
    }
    Ok((0..timesteps).map(|t| t < count).collect())
}

pub fn compress_hybrid(seq: &[bool], ratio: usize) -> Result<Vec<usize>> {
    check_chunks(seq.len(), ratio)?;
    Ok(seq.chunks_exact(ratio).map(compress_aggregate).collect())
}

pub fn expand_hybrid(counts: &[usize], ratio: usize) -> Result<Vec<bool>> {
    let mut out = Vec::with_capacity(counts.len() * ratio);
    for &c in counts {
        out.extend(expand_aggregate(c, ratio)?);
    }
    Ok(out)
}

/// Fixed-width unsigned integers packed LSB-first into bytes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PackedCounts {
    width: u32,
    len: usize,
    bytes: Vec<u8>,
}

impl PackedCounts {
    pub fn byte_len(width: u32, len: usize) -> usize {
        (len * width as usize).div_ceil(8)
    }

    pub fn pack(values: &[usize], width: u32) -> Result<Self> {
        let mut bytes = vec![0u8; Self::byte_len(width, values.len())];
        for (i, &v) in values.iter().enumerate() {
            if width < usize::BITS && v >> width != 0 {
                return Err(invalid(format!("value {v} does not fit in {width} bits")));
            }
            for b in 0..width as usize {
                if (v >> b) & 1 == 1 {
                    let bit = i * width as usize + b;
                    bytes[bit >> 3] |= 1 << (bit & 7);
                }
            }
        }
        Ok(Self {
            width,
            len: values.len(),
            bytes,
        })
    }

    pub fn from_bytes(width: u32, len: usize, bytes: Vec<u8>) -> Result<Self> {
        if bytes.len() != Self::byte_len(width, len) {
            return Err(invalid("packed count payload has the wrong length"));
        }
        Ok(Self { width, len, bytes })
    }

    pub fn get(&self, i: usize) -> usize {
        let mut v = 0;
        for b in 0..self.width as usize {
            let bit = i * self.width as usize + b;
            v |= usize::from((self.bytes[bit >> 3] >> (bit & 7)) & 1) << b;
        }
        v
    }

    pub fn unpack(&self) -> Vec<usize> {
        (0..self.len).map(|i| self.get(i)).collect()
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }
}

/// One compressed latent.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Payload {
    /// `[T/ratio × neurons]` compressed spikes.
    Spikes(SpikeTensor),
    /// Aggregate: one count per neuron. Hybrid: `[T/ratio × neurons]` counts, chunk-major.
    Counts(PackedCounts),
}

impl Payload {
    pub fn bytes(&self) -> &[u8] {
        match self {
            Payload::Spikes(t) => t.payload(),
            Payload::Counts(c) => c.bytes(),
        }
    }
}

/// Stored size in bytes of one entry under `codec`.
fn entry_bytes(codec: Codec, neurons: usize, timesteps: usize) -> usize {
    match codec {
        Codec::ChunkThreshold { ratio, .. } => SpikeTensor::payload_len(timesteps / ratio, neurons),
        Codec::Aggregate => PackedCounts::byte_len(count_width(timesteps), neurons),
        Codec::Hybrid { ratio } => {
            PackedCounts::byte_len(count_width(ratio), (timesteps / ratio) * neurons)
        }
    }
}

pub fn compress_tensor(codec: Codec, latent: &SpikeTensor) -> Result<Payload> {
    let steps = latent.timesteps();
    let neurons = latent.neurons();
    codec.validate(steps)?;
    match codec {
        Codec::ChunkThreshold { ratio, threshold } => {
            let mut counts = vec![0usize; neurons];
            let out = SpikeTensor::from_fn(steps / ratio, neurons, |c, n| {
                if n == 0 {
                    counts.fill(0);
                    for t in c * ratio..(c + 1) * ratio {
                        for a in latent.active(t) {
                            counts[a] += 1;
                        }
                    }
                }
                counts[n] >= threshold
            })?;
            Ok(Payload::Spikes(out))
        }
        Codec::Aggregate => {
            let counts: Vec<usize> = latent
                .counts_per_neuron()
                .into_iter()
                .map(|c| c as usize)
                .collect();
            Ok(Payload::Counts(PackedCounts::pack(
                &counts,
                count_width(steps),
            )?))
        }
        Codec::Hybrid { ratio } => {
            let mut counts = vec![0usize; (steps / ratio) * neurons];
            for t in 0..steps {
                for n in latent.active(t) {
                    counts[(t / ratio) * neurons + n] += 1;
                }
            }
            Ok(Payload::Counts(PackedCounts::pack(
                &counts,
                count_width(ratio),
            )?))
        }
    }
}

pub fn decompress_payload(
    codec: Codec,
    payload: &Payload,
    neurons: usize,
    timesteps: usize,
) -> Result<SpikeTensor> {
    codec.validate(timesteps)?;
    match (codec, payload) {
        (Codec::ChunkThreshold { ratio, .. }, Payload::Spikes(c)) => {
            if c.neurons() != neurons || c.timesteps() * ratio != timesteps {
                return Err(invalid("compressed tensor shape does not match codec"));
            }
            SpikeTensor::from_fn(timesteps, neurons, |t, n| {
                t % ratio == 0 && c.bit(t / ratio, n)
            })
        }
        (Codec::Aggregate, Payload::Counts(c)) => {
            let counts = c.unpack();
            if counts.len() != neurons || counts.iter().any(|&k| k > timesteps) {
                return Err(invalid("aggregate counts do not match codec"));
            }
            SpikeTensor::from_fn(timesteps, neurons, |t, n| t < counts[n])
        }
        (Codec::Hybrid { ratio }, Payload::Counts(c)) => {
            let counts = c.unpack();
            if counts.len() != (timesteps / ratio) * neurons || counts.iter().any(|&k| k > ratio) {
                return Err(invalid("hybrid counts do not match codec"));
            }
            SpikeTensor::from_fn(timesteps, neurons, |t, n| {
                t % ratio < counts[(t / ratio) * neurons + n]
            })
        }
        _ => Err(invalid("payload kind does not match codec")),
    }
}

/// Compressed latents grouped by class, all captured at the same layer with
/// the same codec.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReplayBuffer {
    codec: Codec,
    layer_index: usize,
    neurons: usize,
    timesteps: usize,
    entries: BTreeMap<u16, Vec<Payload>>,
}

impl ReplayBuffer {
    pub fn new(codec: Codec, layer_index: usize, neurons: usize, timesteps: usize) -> Result<Self> {
        codec.validate(timesteps)?;
        if neurons == 0 {
            return Err(invalid("replay latents need at least one neuron"));
        }
        Ok(Self {
            codec,
            layer_index,
            neurons,
            timesteps,
            entries: BTreeMap::new(),
        })
    }

    pub fn codec(&self) -> Codec {
        self.codec
    }

    pub fn layer_index(&self) -> usize {
        self.layer_index
    }

    pub fn neurons(&self) -> usize {
        self.neurons
    }

    pub fn timesteps(&self) -> usize {
        self.timesteps
    }

    pub fn len(&self) -> usize {
        self.entries.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn class_counts(&self) -> BTreeMap<u16, usize> {
        self.entries.iter().map(|(&c, v)| (c, v.len())).collect()
    }

    pub fn entries(&self) -> &BTreeMap<u16, Vec<Payload>> {
        &self.entries
    }

    /// Closed-form payload footprint in bytes.
    pub fn footprint_bytes(&self) -> u64 {
        self.codec
            .footprint_bytes(self.len(), self.neurons, self.timesteps)
    }

    /// Bytes actually held, including the per-entry padding to a whole byte.
    pub fn stored_bytes(&self) -> u64 {
        self.entries
            .values()
            .flatten()
            .map(|p| p.bytes().len() as u64)
            .sum()
    }

    fn check_latent(&self, latent: &SpikeTensor) -> Result<()> {
        if latent.neurons() != self.neurons || latent.timesteps() != self.timesteps {
            return Err(invalid(format!(
                "latent shape {}x{} does not match buffer {}x{}",
                latent.timesteps(),
                latent.neurons(),
                self.timesteps,
                self.neurons
            )));
        }
        Ok(())
    }

    /// Compresses and stores one uncompressed latent.
    pub fn insert(&mut self, latent: &SpikeTensor, label: u16) -> Result<()> {
        self.check_latent(latent)?;
        let payload = compress_tensor(self.codec, latent)?;
        self.entries.entry(label).or_default().push(payload);
        Ok(())
    }

    /// Every entry expanded back to full length, ordered by class then insertion.
    pub fn decompress_all(&self) -> Result<Vec<(SpikeTensor, u16)>> {
        let flat: Vec<(&Payload, u16)> = self
            .entries
            .iter()
            .flat_map(|(&c, v)| v.iter().map(move |p| (p, c)))
            .collect();
        flat.par_iter()
            .map(|&(p, c)| {
                Ok((
                    decompress_payload(self.codec, p, self.neurons, self.timesteps)?,
                    c,
                ))
            })
            .collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let header = BufferHeader {
            format: BUFFER_FORMAT.into(),
            version: 1,
            codec: self.codec,
            layer_index: self.layer_index,
            neurons: self.neurons,
            timesteps: self.timesteps,
            entry_bytes: entry_bytes(self.codec, self.neurons, self.timesteps),
            classes: self.class_counts().into_iter().collect(),
        };
        let mut out = serde_json::to_vec(&header)?;
        out.push(b'\n');
        for p in self.entries.values().flatten() {
            out.write_all(p.bytes())?;
        }
        fs::write(path, out)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = fs::read(path)?;
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| format_err(0, "missing buffer header line"))?;
        let header: BufferHeader = serde_json::from_slice(&bytes[..nl])
            .map_err(|e| format_err(0, format!("bad buffer header: {e}")))?;
        if header.format != BUFFER_FORMAT || header.version != 1 {
            return Err(format_err(0, "not a version 1 replay buffer"));
        }
        let mut buf = ReplayBuffer::new(
            header.codec,
            header.layer_index,
            header.neurons,
            header.timesteps,
        )?;
        let size = entry_bytes(buf.codec, buf.neurons, buf.timesteps);
        if header.entry_bytes != size {
            return Err(format_err(0, "entry size in header does not match codec"));
        }
        let blob = &bytes[nl + 1..];
        let total: usize = header.classes.iter().map(|(_, n)| n).sum();
        if blob.len() != total * size {
            return Err(format_err(
                (nl + 1 + blob.len().min(total * size)) as u64,
                format!(
                    "payload has {} bytes, expected {}",
                    blob.len(),
                    total * size
                ),
            ));
        }
        let mut chunks = blob.chunks_exact(size.max(1)).enumerate();
        for (class, n) in header.classes {
            let list = buf.entries.entry(class).or_default();
            for _ in 0..n {
                let (i, raw) = chunks.next().expect("length checked above");
                let at = (nl + 1 + i * size) as u64;
                let payload = match buf.codec {
                    Codec::ChunkThreshold { ratio, .. } => Payload::Spikes(
                        SpikeTensor::from_payload(buf.timesteps / ratio, buf.neurons, raw.to_vec())
                            .map_err(|e| format_err(at, e.to_string()))?,
                    ),
                    Codec::Aggregate => Payload::Counts(PackedCounts::from_bytes(
                        count_width(buf.timesteps),
                        buf.neurons,
                        raw.to_vec(),
                    )?),
                    Codec::Hybrid { ratio } => Payload::Counts(PackedCounts::from_bytes(
                        count_width(ratio),
                        (buf.timesteps / ratio) * buf.neurons,
                        raw.to_vec(),
                    )?),
                };
                list.push(payload);
            }
        }
        Ok(buf)
    }
}

const BUFFER_FORMAT: &str = "spiking-replay-buffer";

#[derive(Serialize, Deserialize)]
struct BufferHeader {
    format: String,
    version: u32,
    codec: Codec,
    layer_index: usize,
    neurons: usize,
    timesteps: usize,
    entry_bytes: usize,
    classes: Vec<(u16, usize)>,
}

/// Runs each sample through the frozen layers and stores the compressed output
/// of the last frozen layer. With an empty frozen network the raw inputs are stored.
pub fn capture_latents<'a>(
    frozen: &Network,
    samples: impl IntoIterator<Item = (&'a SpikeTensor, u16)>,
    codec: Codec,
) -> Result<ReplayBuffer> {
    let samples: Vec<(&SpikeTensor, u16)> = samples.into_iter().collect();
    let timesteps = match samples.first() {
        Some((x, _)) => x.timesteps(),
        None => return Err(invalid("no samples to capture")),
    };
    let neurons = match frozen.output_size() {
        Some(n) => n,
        None => samples[0].0.neurons(),
    };
    let mut buf = ReplayBuffer::new(codec, frozen.len(), neurons, timesteps)?;
    let payloads: Vec<Result<(Payload, u16)>> = samples
        .par_iter()
        .map(|&(x, label)| {
            let latent = frozen.forward_output(x)?;
            buf.check_latent(&latent)?;
            Ok((compress_tensor(codec, &latent)?, label))
        })
        .collect();
    for r in payloads {
        let (p, label) = r?;
        buf.entries.entry(label).or_default().push(p);
    }
    Ok(buf)
}

/// Decompresses the buffer, unions it with `new_latents` and shuffles the result.
pub fn mix_for_training(
    buffer: &ReplayBuffer,
    new_latents: Vec<(SpikeTensor, u16)>,
    seed: u64,
) -> Result<Vec<(SpikeTensor, u16)>> {
    for (x, _) in &new_latents {
        if !buffer.is_empty() {
            buffer.check_latent(x)?;
        }
    }
    let mut all = buffer.decompress_all()?;
    all.extend(new_latents);
    all.shuffle(&mut stream(seed, Stream::Mix, 0));
    Ok(all)
}

/// A copy of `buffer` with at most `per_class_quota` of `new_entries` added
/// for each class, taken in the given order.
pub fn buffer_extend(
    buffer: &ReplayBuffer,
    new_entries: &[(SpikeTensor, u16)],
    per_class_quota: usize,
) -> Result<ReplayBuffer> {
    let mut out = buffer.clone();
    let mut taken: BTreeMap<u16, usize> = BTreeMap::new();
    for (x, label) in new_entries {
        let n = taken.entry(*label).or_default();
        if *n < per_class_quota {
            out.insert(x, *label)?;
            *n += 1;
        }
    }
    Ok(out)
}

/// Picks up to `count` indices spread evenly over the classes in `labels`,
/// uniformly at random within each class. Remainders go to the lowest class
/// ids; classes with too few samples contribute all they have.
pub fn select_class_balanced<R: Rng + ?Sized>(
    labels: &[u16],
    count: usize,
    rng: &mut R,
) -> Vec<usize> {
    let mut by_class: BTreeMap<u16, Vec<usize>> = BTreeMap::new();
    for (i, &c) in labels.iter().enumerate() {
        by_class.entry(c).or_default().push(i);
    }
    if by_class.is_empty() {
        return Vec::new();
    }
    let k = by_class.len();
    let mut out = Vec::with_capacity(count);
    for (rank, idx) in by_class.values_mut().enumerate() {
        let quota = count / k + usize::from(rank < count % k);
        idx.shuffle(rng);
        out.extend(idx.iter().take(quota));
    }
    out
}
