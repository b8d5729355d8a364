//! Synthetic periodic sensor signals with injected point spikes.

use std::f64::consts::TAU;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::rng_for;
use crate::training::LabeledSequence;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub seq_len: usize,
    /// Independent channels per sample.
    pub channels: usize,
    pub spike_prob: f64,
    pub amp_range: (f64, f64),
    /// Cycles per step.
    pub freq_range: (f64, f64),
    pub noise_std: f64,
    /// Spike size in multiples of the channel amplitude.
    pub spike_magnitude_range: (f64, f64),
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            n_train: 10_000,
            n_test: 2_000,
            seq_len: 100,
            channels: 1,
            spike_prob: 0.05,
            amp_range: (0.5, 2.0),
            freq_range: (0.02, 0.1),
            noise_std: 0.05,
            spike_magnitude_range: (3.0, 6.0),
            seed: 0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.n_train == 0 || self.n_test == 0 || self.seq_len == 0 || self.channels == 0 {
            return bad("n_train, n_test, seq_len and channels must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.spike_prob) {
            return bad(format!("spike_prob {} outside [0, 1]", self.spike_prob));
        }
        for (name, (lo, hi)) in [
            ("amp_range", self.amp_range),
            ("freq_range", self.freq_range),
            ("spike_magnitude_range", self.spike_magnitude_range),
        ] {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return bad(format!("{name} must be a finite interval with lo <= hi"));
            }
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad("noise_std must be finite and >= 0".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: Vec<LabeledSequence>,
    pub test: Vec<LabeledSequence>,
    pub config: GenConfig,
}

fn uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

/// One sequence. Each channel is `a sin(2π ω t + φ) + noise`; at every step,
/// with probability `spike_prob`, one random channel gets a spike of
/// `±u a` with `u` drawn from `spike_magnitude_range`, and the step is
/// labeled 1.
pub fn generate_sequence(config: &GenConfig, rng: &mut impl Rng) -> LabeledSequence {
    let m = config.channels;
    let noise = Normal::new(0.0, config.noise_std).expect("validated noise_std");
    let waves: Vec<(f64, f64, f64)> = (0..m)
        .map(|_| {
            let a = uniform(rng, config.amp_range);
            let w = uniform(rng, config.freq_range);
            let phi = rng.random_range(0.0..TAU);
            (a, w, phi)
        })
        .collect();
    let mut xs = Vec::with_capacity(config.seq_len);
    let mut ys = Vec::with_capacity(config.seq_len);
    for t in 0..config.seq_len {
        let mut x: Vec<f64> = waves
            .iter()
            .map(|&(a, w, phi)| a * (TAU * w * t as f64 + phi).sin() + noise.sample(rng))
            .collect();
        let spike = rng.random_bool(config.spike_prob);
        if spike {
            let ch = if m == 1 { 0 } else { rng.random_range(0..m) };
            let size = uniform(rng, config.spike_magnitude_range) * waves[ch].0;
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            x[ch] += sign * size;
        }
        xs.push(x);
        ys.push(u8::from(spike));
    }
    LabeledSequence::new(xs, ys).expect("generator emits valid sequences")
}

fn generate_split(config: &GenConfig, label: &str, n: usize) -> Vec<LabeledSequence> {
    (0..n)
        .into_par_iter()
        .map(|i| generate_sequence(config, &mut rng_for(config.seed, label, i as u64)))
        .collect()
}

/// Train and test splits from independent seed sub-streams. Sequence `i` of
/// a split depends only on `(seed, split, i)`.
pub fn generate_dataset(config: &GenConfig) -> Result<Dataset> {
    config.validate()?;
    Ok(Dataset {
        train: generate_split(config, "datagen-train", config.n_train),
        test: generate_split(config, "datagen-test", config.n_test),
        config: config.clone(),
    })
}
