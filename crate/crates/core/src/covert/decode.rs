use serde::{Deserialize, Serialize};

use super::{Bitstream, CovertConfig, ThresholdPolicy};
use crate::error::{Error, Result};
use crate::model::ParamVector;

/// Global values at the agreed positions, one entry per recorded round.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ObservationLog {
    width: usize,
    rounds: Vec<usize>,
    entries: Vec<Vec<f64>>,
}

impl ObservationLog {
    pub fn new(width: usize) -> Self {
        Self {
            width,
            rounds: Vec::new(),
            entries: Vec::new(),
        }
    }

    /// Appends one round. Rounds must strictly increase and every entry must
    /// have one value per position.
    pub fn push(&mut self, round_index: usize, values: Vec<f64>) -> Result<()> {
        if values.len() != self.width {
            return Err(Error::Dimension {
                expected: self.width,
                actual: values.len(),
            });
        }
        if let Some(&last) = self.rounds.last() {
            if round_index <= last {
                return Err(Error::config(format!(
                    "observation for round {round_index} recorded after round {last}"
                )));
            }
        }
        self.rounds.push(round_index);
        self.entries.push(values);
        Ok(())
    }

    /// Reads `positions` out of `global` and appends them.
    pub fn record(&mut self, round_index: usize, global: &ParamVector, positions: &[usize]) -> Result<()> {
        let values = global.values();
        let observed = positions
            .iter()
            .map(|&p| {
                values.get(p).copied().ok_or_else(|| {
                    Error::config(format!("position {p} outside 0..{}", values.len()))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        self.push(round_index, observed)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn rounds(&self) -> &[usize] {
        &self.rounds
    }

    pub fn entries(&self) -> &[Vec<f64>] {
        &self.entries
    }

    /// The first `len` entries.
    pub fn prefix(&self, len: usize) -> Self {
        let len = len.min(self.entries.len());
        Self {
            width: self.width,
            rounds: self.rounds[..len].to_vec(),
            entries: self.entries[..len].to_vec(),
        }
    }

    fn rows_in(&self, start: usize, end: usize) -> &[Vec<f64>] {
        let lo = self.rounds.partition_point(|&r| r < start);
        let hi = self.rounds.partition_point(|&r| r < end);
        &self.entries[lo..hi]
    }
}

/// Per-cycle means and the thresholds they are compared against.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CycleStatistics {
    /// `means[s][j]`: mean of position `j` over cycle `s`.
    pub means: Vec<Vec<f64>>,
    /// Threshold per position.
    pub thresholds: Vec<f64>,
}

impl CycleStatistics {
    /// Decoded bits, cycle-major then position-minor, truncated to
    /// `payload_bits`.
    pub fn bits(&self, payload_bits: usize) -> Vec<bool> {
        self.means
            .iter()
            .flat_map(|cycle| cycle.iter().zip(&self.thresholds).map(|(m, t)| m > t))
            .take(payload_bits)
            .collect()
    }

    /// `m - θ` for each payload bit in transmission order.
    pub fn margins(&self, payload_bits: usize) -> Vec<f64> {
        self.means
            .iter()
            .flat_map(|cycle| cycle.iter().zip(&self.thresholds).map(|(m, t)| m - t))
            .take(payload_bits)
            .collect()
    }

    /// Mean of `(2b - 1)(m - θ)` over the sent bits: how far, on average,
    /// each cycle mean sits on the correct side of its threshold.
    pub fn signal_amplitude(&self, sent: &[bool]) -> f64 {
        let margins = self.margins(sent.len());
        if margins.is_empty() {
            return 0.0;
        }
        margins
            .iter()
            .zip(sent)
            .map(|(m, &b)| if b { *m } else { -*m })
            .sum::<f64>()
            / margins.len() as f64
    }
}

pub fn cycle_statistics(log: &ObservationLog, config: &CovertConfig) -> Result<CycleStatistics> {
    let width = config.positions.len();
    if log.width() != width {
        return Err(Error::Dimension {
            expected: width,
            actual: log.width(),
        });
    }
    let required = config.transmission_rounds();
    let n = config.cycle_rounds;
    let mut means = Vec::with_capacity(config.num_cycles);
    for s in 0..config.num_cycles {
        let start = config.warmup_rounds + s * n;
        let rows = log.rows_in(start, start + n);
        if rows.len() < n {
            return Err(Error::IncompleteTransmission {
                required,
                available: log.len(),
            });
        }
        means.push(column_means(rows, width));
    }
    let thresholds = match config.threshold_policy {
        ThresholdPolicy::Zero => vec![0.0; width],
        ThresholdPolicy::RunningMean => column_means(log.entries(), width),
    };
    Ok(CycleStatistics { means, thresholds })
}

/// Cycle-mean decoding of a receiver's log.
pub fn decode(log: &ObservationLog, config: &CovertConfig) -> Result<Bitstream> {
    let stats = cycle_statistics(log, config)?;
    Ok(Bitstream::raw(stats.bits(config.payload_bits)))
}

fn column_means(rows: &[Vec<f64>], width: usize) -> Vec<f64> {
    let mut sums = vec![0.0; width];
    for row in rows {
        for (s, v) in sums.iter_mut().zip(row) {
            *s += v;
        }
    }
    let n = rows.len().max(1) as f64;
    sums.into_iter().map(|s| s / n).collect()
}
