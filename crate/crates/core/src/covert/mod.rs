//! The poisoning-based covert channel between a sending and a receiving
//! client.
//!
//! Sender and receiver share a [`CovertConfig`]: which flat parameter
//! indices carry the signal, how many rounds make one cycle, how many
//! cycles are sent, and how the bits are read back. During a cycle the
//! sender overwrites every agreed coordinate of its submitted model with
//! `±factor` (the sign is the bit); FedAvg dilutes that by the number of
//! clients, and the receiver recovers the bit from the mean of the global
//! value over the cycle.

mod capacity;
mod channel;
mod codec;
mod decode;

pub use capacity::{capacity, Capacity};
pub use channel::{compute_factor, embed_bits, select_positions, zero_back, FactorValue};
pub use codec::{
    bit_error_rate, decode_bitmap, decode_text, encode_bitmap, encode_text, hamming_distance,
    parse_bits, read_pbm, write_pbm, Bitmap, Bitstream, Codec,
};
pub use decode::{cycle_statistics, decode, CycleStatistics, ObservationLog};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FactorPolicy {
    /// Constant magnitude.
    Fixed(f64),
    /// Root mean square of `sample_size` coordinates of the sender's own
    /// trained model, drawn with replacement.
    Rms { sample_size: usize },
}

impl Default for FactorPolicy {
    fn default() -> Self {
        FactorPolicy::Rms { sample_size: 500 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdPolicy {
    /// Bit is 1 when the cycle mean is strictly positive.
    #[default]
    Zero,
    /// Bit is 1 when the cycle mean exceeds the position's mean over every
    /// recorded round.
    #[serde(alias = "mean")]
    RunningMean,
}

impl std::str::FromStr for ThresholdPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero" => Ok(Self::Zero),
            "mean" | "running_mean" => Ok(Self::RunningMean),
            other => Err(Error::config(format!("unknown threshold policy `{other}`"))),
        }
    }
}

/// The secret shared by sender and receiver.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovertConfig {
    /// Agreed flat indices, distinct.
    pub positions: Vec<usize>,
    /// Rounds per cycle (`n`).
    pub cycle_rounds: usize,
    /// Cycles transmitted.
    pub num_cycles: usize,
    /// Payload length; decoding truncates to it.
    pub payload_bits: usize,
    pub factor_policy: FactorPolicy,
    pub threshold_policy: ThresholdPolicy,
    /// Rounds of zeroing before the first cycle.
    pub warmup_rounds: usize,
    pub shared_seed: u64,
}

/// What the sender does in a given round.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Warmup,
    Transmit { cycle: usize, offset: usize },
    Idle,
}

impl CovertConfig {
    /// Builds a config for a payload of `payload_bits` bits, drawing the
    /// positions from `shared_seed` and using as many cycles as the payload
    /// needs (at least one).
    #[allow(clippy::too_many_arguments)]
    pub fn for_payload(
        parameter_count: usize,
        num_positions: usize,
        cycle_rounds: usize,
        payload_bits: usize,
        factor_policy: FactorPolicy,
        threshold_policy: ThresholdPolicy,
        warmup_rounds: usize,
        shared_seed: u64,
    ) -> Result<Self> {
        let positions = select_positions(parameter_count, num_positions, shared_seed)?;
        let num_cycles = if num_positions == 0 {
            1
        } else {
            payload_bits.div_ceil(num_positions).max(1)
        };
        let config = Self {
            positions,
            cycle_rounds,
            num_cycles,
            payload_bits,
            factor_policy,
            threshold_policy,
            warmup_rounds,
            shared_seed,
        };
        config.validate(parameter_count)?;
        Ok(config)
    }

    pub fn validate(&self, parameter_count: usize) -> Result<()> {
        if self.cycle_rounds == 0 {
            return Err(Error::config("cycle_rounds must be positive"));
        }
        if self.num_cycles == 0 {
            return Err(Error::config("num_cycles must be positive"));
        }
        let mut seen = std::collections::HashSet::with_capacity(self.positions.len());
        for &p in &self.positions {
            if p >= parameter_count {
                return Err(Error::config(format!(
                    "position {p} outside 0..{parameter_count}"
                )));
            }
            if !seen.insert(p) {
                return Err(Error::config(format!("position {p} listed twice")));
            }
        }
        if self.payload_bits > self.positions.len() * self.num_cycles {
            return Err(Error::CapacityExceeded {
                requested: self.payload_bits,
                capacity: self.positions.len() * self.num_cycles,
            });
        }
        match self.factor_policy {
            FactorPolicy::Fixed(v) if !(v > 0.0 && v.is_finite()) => {
                return Err(Error::config("fixed factor must be positive and finite"))
            }
            FactorPolicy::Rms { sample_size } if sample_size == 0 || sample_size > parameter_count => {
                return Err(Error::config(format!(
                    "RMS sample_size must be in 1..={parameter_count}"
                )))
            }
            _ => {}
        }
        Ok(())
    }

    /// Rounds the receiver must record before every cycle is complete.
    pub fn transmission_rounds(&self) -> usize {
        self.warmup_rounds + self.num_cycles * self.cycle_rounds
    }

    pub fn phase(&self, round_index: usize) -> Phase {
        if round_index < self.warmup_rounds {
            return Phase::Warmup;
        }
        let k = round_index - self.warmup_rounds;
        let cycle = k / self.cycle_rounds;
        if cycle < self.num_cycles {
            Phase::Transmit {
                cycle,
                offset: k % self.cycle_rounds,
            }
        } else {
            Phase::Idle
        }
    }

    /// The slice of `payload` carried in `cycle`; shorter than
    /// `positions.len()` (possibly empty) for the final cycle.
    pub fn cycle_bits<'a>(&self, payload: &'a [bool], cycle: usize) -> &'a [bool] {
        let width = self.positions.len();
        let start = (cycle * width).min(payload.len());
        let end = ((cycle + 1) * width).min(payload.len());
        &payload[start..end]
    }
}
