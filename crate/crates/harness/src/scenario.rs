//! Scenario files.
//!
//! A scenario is a JSON document holding a federation config, an optional
//! covert channel, the payload and the server defenses. Paths inside it are
//! resolved relative to the file that names them.

use std::fs;
use std::path::{Path, PathBuf};

use fedcovert::covert::{
    encode_bitmap, encode_text, parse_bits, read_pbm, select_positions, Bitstream, CovertConfig,
    FactorPolicy, ThresholdPolicy,
};
use fedcovert::detect::DetectorThresholds;
use fedcovert::rng::SplitMix64;
use fedcovert::FedConfig;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub fed: FedConfig,
    #[serde(default)]
    pub channel: Option<ChannelSpec>,
    #[serde(default)]
    pub payload: PayloadSource,
    #[serde(default)]
    pub defense: DefenseConfig,
    /// Exit successfully even when decoding does not reproduce the payload.
    #[serde(default)]
    pub best_effort: bool,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

/// The covert channel as written in a scenario. Positions are drawn from
/// `shared_seed` unless listed explicitly; the cycle count defaults to what
/// the payload needs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSpec {
    #[serde(default)]
    pub num_positions: Option<usize>,
    #[serde(default)]
    pub positions: Option<Vec<usize>>,
    pub cycle_rounds: usize,
    #[serde(default)]
    pub num_cycles: Option<usize>,
    #[serde(default)]
    pub factor: FactorPolicy,
    #[serde(default)]
    pub threshold: ThresholdPolicy,
    #[serde(default)]
    pub warmup_rounds: usize,
    #[serde(default)]
    pub shared_seed: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PayloadSource {
    #[default]
    None,
    /// Inline `0`/`1` characters.
    Bits(String),
    /// Inline text, 8 bits per character.
    Text(String),
    TextFile(PathBuf),
    /// P1 bitmap, row-major.
    PbmFile(PathBuf),
    Random { bits: usize, seed: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DefenseConfig {
    /// Run the norm, cosine and accuracy detectors every round.
    pub detectors: bool,
    pub thresholds: DetectorThresholds,
    /// Record every submitted coordinate and score it afterwards.
    pub recorder: bool,
    /// Cycle lengths the recorder tries; empty means the channel's own.
    pub cycle_hypotheses: Vec<usize>,
}

impl Default for DefenseConfig {
    fn default() -> Self {
        Self {
            detectors: true,
            thresholds: DetectorThresholds::default(),
            recorder: false,
            cycle_hypotheses: Vec::new(),
        }
    }
}

impl Scenario {
    /// Reads a scenario and makes its file paths absolute.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let mut scenario: Scenario =
            serde_json::from_str(&text).map_err(|e| HarnessError::parse(path, e))?;
        scenario.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(scenario)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        match &mut self.payload {
            PayloadSource::TextFile(p) | PayloadSource::PbmFile(p) if p.is_relative() => {
                *p = base.join(&*p);
            }
            _ => {}
        }
    }

    pub fn payload(&self) -> Result<Bitstream> {
        self.payload.load()
    }

    /// The channel as both parties know it, sized for `payload_bits`.
    pub fn covert_config(&self, payload_bits: usize) -> Result<Option<CovertConfig>> {
        let Some(ch) = &self.channel else {
            if payload_bits > 0 {
                return Err(HarnessError::Usage("a payload needs a channel section".into()));
            }
            return Ok(None);
        };
        let parameter_count = self.fed.model.parameter_count();
        let positions = match (&ch.positions, ch.num_positions) {
            (Some(p), None) => p.clone(),
            (Some(p), Some(n)) if p.len() == n => p.clone(),
            (None, Some(n)) => select_positions(parameter_count, n, ch.shared_seed)?,
            (Some(_), Some(_)) => {
                return Err(HarnessError::Usage(
                    "num_positions disagrees with the listed positions".into(),
                ))
            }
            (None, None) => {
                return Err(HarnessError::Usage(
                    "channel needs num_positions or positions".into(),
                ))
            }
        };
        let num_cycles = ch.num_cycles.unwrap_or_else(|| {
            if positions.is_empty() {
                1
            } else {
                payload_bits.div_ceil(positions.len()).max(1)
            }
        });
        let config = CovertConfig {
            positions,
            cycle_rounds: ch.cycle_rounds,
            num_cycles,
            payload_bits,
            factor_policy: ch.factor,
            threshold_policy: ch.threshold,
            warmup_rounds: ch.warmup_rounds,
            shared_seed: ch.shared_seed,
        };
        config.validate(parameter_count)?;
        Ok(Some(config))
    }

    /// Applies command-line overrides.
    pub fn apply_overrides(&mut self, o: &Overrides) -> Result<()> {
        if let Some(seed) = o.seed {
            self.fed.master_seed = seed;
        }
        if let Some(noise) = o.noise {
            self.fed.noise_level = noise;
        }
        if let Some(threshold) = o.threshold {
            match &mut self.channel {
                Some(ch) => ch.threshold = threshold,
                None => return Err(HarnessError::Usage("--threshold needs a channel".into())),
            }
        }
        if let Some(out) = &o.output_dir {
            self.output_dir = Some(out.clone());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub noise: Option<f64>,
    pub threshold: Option<ThresholdPolicy>,
    pub output_dir: Option<PathBuf>,
}

impl PayloadSource {
    pub fn load(&self) -> Result<Bitstream> {
        Ok(match self {
            PayloadSource::None => Bitstream::default(),
            PayloadSource::Bits(s) => Bitstream::raw(parse_bits(s)?),
            PayloadSource::Text(s) => encode_text(s)?,
            PayloadSource::TextFile(p) => {
                let text = fs::read_to_string(p).map_err(|e| HarnessError::io(p, e))?;
                encode_text(&text)?
            }
            PayloadSource::PbmFile(p) => {
                let text = fs::read_to_string(p).map_err(|e| HarnessError::io(p, e))?;
                encode_bitmap(&read_pbm(&text)?)
            }
            PayloadSource::Random { bits, seed } => {
                let mut rng = SplitMix64::new(*seed);
                Bitstream::raw((0..*bits).map(|_| rng.next_u64() >> 63 == 1).collect())
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use fedcovert::covert::Codec;

    fn minimal() -> &'static str {
        r#"{
            "name": "t",
            "fed": {
                "num_clients": 3, "total_rounds": 4, "attacker_ratio": 0.34,
                "model": {"input_dim": 30, "hidden_dim": 20, "num_classes": 2}
            },
            "channel": {"num_positions": 2, "cycle_rounds": 2},
            "payload": {"bits": "1011"}
        }"#
    }

    #[test]
    fn defaults_fill_omitted_fields() {
        let s: Scenario = serde_json::from_str(minimal()).unwrap();
        assert_eq!(s.fed.training, Default::default());
        assert!(s.defense.detectors);
        assert!(!s.best_effort);
        let bits = s.payload().unwrap();
        let c = s.covert_config(bits.len()).unwrap().unwrap();
        assert_eq!(c.num_cycles, 2);
        assert_eq!(c.positions.len(), 2);
        assert_eq!(c.factor_policy, FactorPolicy::Rms { sample_size: 500 });
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let bad = minimal().replace("\"name\"", "\"nmae\": 1, \"name\"");
        assert!(serde_json::from_str::<Scenario>(&bad).is_err());
    }

    #[test]
    fn payload_variants_parse() {
        let p: PayloadSource = serde_json::from_str(r#"{"text": "hi"}"#).unwrap();
        let b = p.load().unwrap();
        assert_eq!(b.len(), 16);
        assert_eq!(b.codec(), Codec::Text8);
        let p: PayloadSource = serde_json::from_str(r#"{"random": {"bits": 33, "seed": 5}}"#).unwrap();
        assert_eq!(p.load().unwrap().len(), 33);
        let p: PayloadSource = serde_json::from_str(r#""none""#).unwrap();
        assert!(p.load().unwrap().is_empty());
    }

    #[test]
    fn relative_payload_paths_follow_the_scenario() {
        let mut s: Scenario = serde_json::from_str(minimal()).unwrap();
        s.payload = PayloadSource::PbmFile("img.pbm".into());
        s.resolve_paths(Path::new("/data/scen"));
        assert_eq!(s.payload, PayloadSource::PbmFile("/data/scen/img.pbm".into()));
    }

    #[test]
    fn threshold_override_needs_a_channel() {
        let mut s: Scenario = serde_json::from_str(minimal()).unwrap();
        s.channel = None;
        let o = Overrides {
            threshold: Some(ThresholdPolicy::RunningMean),
            ..Default::default()
        };
        assert!(s.apply_overrides(&o).is_err());
    }
}
