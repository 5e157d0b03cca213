use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Channel capacity over a training run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Capacity {
    /// Bits deliverable in the run, `floor(T / n) · positions`.
    pub total_bits: usize,
    /// Rounds in the run (`T`), the rate's denominator.
    pub rounds: usize,
}

impl Capacity {
    /// Bits per round, `B / T`.
    pub fn rate(&self) -> f64 {
        self.total_bits as f64 / self.rounds as f64
    }
}

/// Capacity of `num_positions` coordinates cycling every `cycle_rounds`
/// rounds over `rounds` rounds. A cycle longer than the run yields zero bits.
pub fn capacity(rounds: usize, num_positions: usize, cycle_rounds: usize) -> Result<Capacity> {
    if rounds == 0 || cycle_rounds == 0 {
        return Err(Error::config("rounds and cycle_rounds must be positive"));
    }
    Ok(Capacity {
        total_bits: (rounds / cycle_rounds) * num_positions,
        rounds,
    })
}
