//! Scenario runner for the `fedcovert` simulator: JSON scenario files,
//! single runs and sweeps, artifact files, and the pieces of the
//! `fedcovert` command-line tool.

pub mod error;
pub mod run;
pub mod scenario;
pub mod sweep;

use std::path::Path;

use fedcovert::covert::{capacity, decode, hamming_distance, Bitstream, ThresholdPolicy};
use fedcovert::fmt::sig9;

pub use error::{HarnessError, Result};
pub use run::{run_scenario, RunArtifacts, Summary};
pub use scenario::{Overrides, PayloadSource, Scenario};
pub use sweep::{run_sweep, SweepAxis, SweepSummary};

/// `B=<bits> R=<bits per round>`, with `R` always shown with a decimal
/// point.
pub fn capacity_line(rounds: usize, positions: usize, cycle_rounds: usize) -> Result<String> {
    let c = capacity(rounds, positions, cycle_rounds)?;
    let mut r = sig9(c.rate());
    if !r.contains(['.', 'e']) {
        r.push_str(".0");
    }
    Ok(format!("B={} R={}", c.total_bits, r))
}

#[derive(Clone, Debug)]
pub struct TraceDecode {
    pub received: Bitstream,
    /// Bit errors against the scenario's payload.
    pub bit_errors: usize,
}

/// Re-decodes a recorded `observations.csv` with the scenario's channel,
/// optionally under a different threshold policy.
pub fn decode_trace(
    scenario: &Scenario,
    observations: &Path,
    threshold: Option<ThresholdPolicy>,
) -> Result<TraceDecode> {
    let sent = scenario.payload()?;
    let Some(mut covert) = scenario.covert_config(sent.len())? else {
        return Err(HarnessError::Usage("scenario has no channel".into()));
    };
    if let Some(t) = threshold {
        covert.threshold_policy = t;
    }
    let log = run::read_observations(observations, &covert.positions)?;
    let bits = decode(&log, &covert)?.into_bits();
    let bit_errors = hamming_distance(sent.bits(), &bits);
    let received = Bitstream::with_codec(bits.clone(), sent.codec()).unwrap_or_else(|_| Bitstream::raw(bits));
    Ok(TraceDecode { received, bit_errors })
}
