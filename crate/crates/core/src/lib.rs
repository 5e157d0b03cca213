//! Deterministic federated-learning simulation of a poisoning-based covert
//! channel, together with the server-side defenses evaluated against it.
//!
//! * [`model`]: a small tanh classifier, synthetic data and SGD.
//! * [`sim`]: the federated round loop, FedAvg and the noise defense.
//! * [`covert`]: position agreement, embedding, decoding, codecs, capacity.
//! * [`detect`]: norm, cosine, accuracy and weight-change detectors.
//!
//! ```
//! use fedcovert::covert::capacity;
//!
//! let c = capacity(200, 1000, 20).unwrap();
//! assert_eq!(c.total_bits, 10_000);
//! assert_eq!(c.rate(), 50.0);
//! ```

pub mod covert;
pub mod detect;
pub mod error;
pub mod fmt;
pub mod model;
pub mod rng;
pub mod sim;

pub use error::{Error, Result};
pub use model::{Dataset, ModelSpec, ParamVector, TrainingConfig};
pub use sim::{run_simulation, FedConfig, Simulation, SimulationOutcome};

#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/federation.md")]
    mod federation {}
    #[doc = include_str!("../../../book/src/channel.md")]
    mod channel {}
    #[doc = include_str!("../../../book/src/codecs.md")]
    mod codecs {}
    #[doc = include_str!("../../../book/src/detection.md")]
    mod detection {}
    #[doc = include_str!("../../../book/src/harness.md")]
    mod harness {}
}
