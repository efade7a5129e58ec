//! Poisson rate coding of images, the one-hot teacher signal, and the
//! counter-based random streams behind both.
//!
//! Every random draw is a hash of `(seed, domain, sample, step, neuron)`, so
//! a spike raster never depends on how work is split across threads.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SnnError};

pub const DOMAIN_INPUT: u64 = 1;
pub const DOMAIN_TEACHER: u64 = 2;
pub const DOMAIN_WEIGHTS: u64 = 3;
pub const DOMAIN_SHUFFLE: u64 = 4;
/// Input spike trains of frozen evaluation passes.
pub const DOMAIN_EVAL: u64 = 5;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

/// Identifies one logical stream: a purpose (`domain`) and a sample key.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StreamId {
    pub domain: u64,
    pub sample: u64,
}

impl StreamId {
    pub fn new(domain: u64, sample: u64) -> Self {
        StreamId { domain, sample }
    }

    /// Same stream re-keyed for a boosted re-presentation.
    pub fn with_boost(self, boost: u32) -> Self {
        StreamId {
            domain: self.domain,
            sample: self.sample ^ (u64::from(boost) << 48),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngStream {
    pub seed: u64,
}

/// Hash state for one `(stream, step)`; per-neuron draws are derived from it.
#[derive(Clone, Copy, Debug)]
pub struct StepKey(u64);

impl RngStream {
    pub fn new(seed: u64) -> Self {
        RngStream { seed }
    }

    pub fn step_key(&self, stream: StreamId, step: u64) -> StepKey {
        let mut h = mix64(self.seed ^ GOLDEN);
        h = mix64(h ^ stream.domain.wrapping_mul(0xd1b5_4a32_d192_ed03));
        h = mix64(h ^ stream.sample.wrapping_mul(0xabc9_8388_fb8f_ac03));
        h = mix64(h ^ step.wrapping_mul(0x8cb9_2ba7_2f3d_8dd7));
        StepKey(h)
    }

    /// Uniform draw on `[0, 1)` for `(stream, neuron, step)`.
    pub fn uniform(&self, stream: StreamId, neuron: u64, step: u64) -> f64 {
        self.step_key(stream, step).uniform(neuron)
    }
}

impl StepKey {
    #[inline]
    pub fn bits(self, neuron: u64) -> u64 {
        mix64(self.0 ^ neuron.wrapping_add(1).wrapping_mul(GOLDEN))
    }

    #[inline]
    pub fn uniform(self, neuron: u64) -> f64 {
        (self.bits(neuron) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    #[inline]
    pub fn bernoulli(self, neuron: u64, p: f64) -> bool {
        self.uniform(neuron) < p
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncodingParams {
    /// Full-intensity rate is `255 / base_divisor` Hz.
    pub base_divisor: f64,
    /// Added to the full-intensity rate per retry (Hz).
    pub rate_boost: f64,
    pub max_retries: u32,
    /// Teacher firing rate for the labelled output neuron (Hz).
    pub teacher_rate: f64,
    /// Fewer hidden spikes than this during a stimulus triggers a retry.
    pub min_hidden_spikes: u32,
}

impl Default for EncodingParams {
    fn default() -> Self {
        EncodingParams {
            base_divisor: 4.0,
            rate_boost: 32.0,
            max_retries: 10,
            teacher_rate: 200.0,
            min_hidden_spikes: 5,
        }
    }
}

impl EncodingParams {
    pub fn max_rate(&self, boost_level: u32) -> f64 {
        255.0 / self.base_divisor + f64::from(boost_level) * self.rate_boost
    }

    pub fn validate(&self, dt: f64) -> Result<()> {
        if !(self.base_divisor > 0.0) {
            return Err(SnnError::config("encoding.base_divisor", "must be > 0"));
        }
        if !(self.rate_boost >= 0.0) {
            return Err(SnnError::config("encoding.rate_boost", "must be >= 0"));
        }
        if !(self.teacher_rate >= 0.0) {
            return Err(SnnError::config("encoding.teacher_rate", "must be >= 0"));
        }
        if self.max_rate(self.max_retries) * dt / 1000.0 > 1.0 {
            return Err(SnnError::config(
                "encoding.max_retries",
                "highest boosted rate exceeds one spike per step",
            ));
        }
        if self.teacher_rate * dt / 1000.0 > 1.0 {
            return Err(SnnError::config(
                "encoding.teacher_rate",
                "exceeds one spike per step",
            ));
        }
        Ok(())
    }

    /// Whether a presentation that drove `hidden_spike_count` hidden spikes
    /// at `boost_level` should be repeated at `boost_level + 1`.
    pub fn needs_retry(&self, hidden_spike_count: u32, boost_level: u32) -> bool {
        hidden_spike_count < self.min_hidden_spikes && boost_level < self.max_retries
    }
}

/// Firing rates (Hz) proportional to pixel intensity on a `[0, 255]` scale.
pub fn image_to_rates(pixels: &[f64], boost_level: u32, params: &EncodingParams) -> Vec<f64> {
    let r_max = params.max_rate(boost_level);
    pixels.iter().map(|&p| p / 255.0 * r_max).collect()
}

/// Bernoulli approximation of independent Poisson trains, with zero-rate
/// neurons skipped entirely.
#[derive(Clone, Debug)]
pub struct PoissonSource {
    active: Vec<u32>,
    prob: Vec<f64>,
}

impl PoissonSource {
    pub fn new(rates: &[f64], dt: f64) -> Self {
        let mut active = Vec::new();
        let mut prob = Vec::new();
        for (i, &r) in rates.iter().enumerate() {
            if r > 0.0 {
                active.push(i as u32);
                prob.push(r * dt / 1000.0);
            }
        }
        PoissonSource { active, prob }
    }

    /// Appends the neurons spiking at `step` to `out`, in ascending order.
    pub fn sample(&self, rng: &RngStream, stream: StreamId, step: u64, out: &mut Vec<usize>) {
        if self.active.is_empty() {
            return;
        }
        let key = rng.step_key(stream, step);
        for (&i, &p) in self.active.iter().zip(&self.prob) {
            if key.bernoulli(u64::from(i), p) {
                out.push(i as usize);
            }
        }
    }
}

pub fn sample_input_spikes(
    rates: &[f64],
    dt: f64,
    step: u64,
    rng: &RngStream,
    stream: StreamId,
) -> Vec<usize> {
    let mut out = Vec::new();
    PoissonSource::new(rates, dt).sample(rng, stream, step, &mut out);
    out
}

/// One-hot Poisson teacher: only `label` may fire.
pub fn teacher_spikes(
    label: usize,
    step: u64,
    dt: f64,
    rng: &RngStream,
    stream: StreamId,
    params: &EncodingParams,
) -> Option<usize> {
    let p = params.teacher_rate * dt / 1000.0;
    (p > 0.0 && rng.step_key(stream, step).bernoulli(label as u64, p)).then_some(label)
}
