//! Synthetic keyword-spotting-like spike data.
//!
//! Each class is a Gaussian band of elevated firing whose center sweeps
//! linearly across the neuron axis over time. A scenario (speaker) delays the
//! pattern in time and shifts it along the neuron axis, so classes stay
//! separable while scenarios differ in distribution.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::rng::{stream, Stream};
use crate::spike::{LabelNames, Sample, SpikeSet, SpikeTensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub classes: u16,
    pub scenarios: u16,
    /// Samples per (class, scenario) pair.
    pub samples: usize,
    pub timesteps: usize,
    pub neurons: usize,
    /// Peak spike probability inside the class band.
    pub peak_rate: f64,
    /// Background spike probability.
    pub base_rate: f64,
    /// Band width (std, in neurons) as a fraction of the neuron count.
    pub band_width: f64,
    /// Per-scenario delay, as a fraction of the sequence length.
    pub scenario_delay: f64,
    /// Per-scenario neuron-axis shift, as a fraction of the neuron count.
    pub scenario_shift: f64,
    /// Max per-sample timing jitter in steps.
    pub jitter: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            classes: 4,
            scenarios: 2,
            samples: 50,
            timesteps: 100,
            neurons: 64,
            peak_rate: 0.6,
            base_rate: 0.02,
            band_width: 0.05,
            scenario_delay: 0.1,
            scenario_shift: 0.08,
            jitter: 3,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(invalid("need at least 2 classes"));
        }
        if self.scenarios < 1 {
            return Err(invalid("need at least 1 scenario"));
        }
        if self.timesteps == 0 || self.neurons == 0 {
            return Err(invalid("timesteps and neurons must be nonzero"));
        }
        for (name, p) in [("peak_rate", self.peak_rate), ("base_rate", self.base_rate)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(invalid(format!("{name} must be a probability, got {p}")));
            }
        }
        if self.band_width.is_nan() || self.band_width <= 0.0 {
            return Err(invalid("band_width must be > 0"));
        }
        Ok(())
    }
}

/// Generates the dataset; samples are ordered by class, then scenario.
pub fn generate(spec: &SynthSpec, seed: u64) -> Result<SpikeSet> {
    spec.validate()?;
    let mut rng = stream(seed, Stream::Synth, 0);
    let n = spec.neurons as f64;
    let k = usize::from(spec.classes);

    // Evenly spaced start and end positions, paired by a random permutation,
    // keep class trajectories apart.
    let lane = |i: usize| n * (0.15 + 0.7 * (i as f64 + 0.5) / k as f64);
    let mut ends: Vec<usize> = (0..k).collect();
    ends.shuffle(&mut rng);
    let trajectories: Vec<(f64, f64)> = (0..k).map(|c| (lane(c), lane(ends[c]))).collect();

    let width = (spec.band_width * n).max(1.0);
    let steps = spec.timesteps as f64;
    let mut samples = Vec::with_capacity(k * usize::from(spec.scenarios) * spec.samples);
    for (c, &(start, end)) in trajectories.iter().enumerate() {
        for s in 0..spec.scenarios {
            let delay = (f64::from(s) * spec.scenario_delay * steps).round() as i64;
            let shift = f64::from(s) * spec.scenario_shift * n;
            for _ in 0..spec.samples {
                let jitter = if spec.jitter == 0 {
                    0
                } else {
                    rng.random_range(-(spec.jitter as i64)..=spec.jitter as i64)
                };
                let gain = rng.random_range(0.8..1.2);
                let tensor = SpikeTensor::from_fn(spec.timesteps, spec.neurons, |t, i| {
                    let local = t as i64 - delay - jitter;
                    let mut p = spec.base_rate;
                    if (0..spec.timesteps as i64).contains(&local) {
                        let frac = local as f64 / steps;
                        let center = start + (end - start) * frac + shift;
                        let d = (i as f64 - center) / width;
                        p += gain * spec.peak_rate * (-0.5 * d * d).exp();
                    }
                    rng.random_bool(p.min(1.0))
                })?;
                samples.push(Sample {
                    tensor,
                    class_id: c as u16,
                    scenario_id: s,
                });
            }
        }
    }
    SpikeSet::new(
        spec.timesteps,
        spec.neurons,
        spec.classes,
        spec.scenarios,
        samples,
    )
}

pub fn label_names(spec: &SynthSpec) -> LabelNames {
    LabelNames {
        classes: (0..spec.classes).map(|c| format!("class_{c}")).collect(),
        scenarios: (0..spec.scenarios)
            .map(|s| format!("scenario_{s}"))
            .collect(),
    }
}
