//! One-axis parameter sweeps.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};
use crate::run::{round9, run_scenario, Summary};
use crate::scenario::Scenario;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// Client counts. The number of senders is held at the base scenario's.
    Clients(Vec<usize>),
    AttackerRatio(Vec<f64>),
    Noise(Vec<f64>),
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::Clients(_) => "clients",
            SweepAxis::AttackerRatio(_) => "attacker_ratio",
            SweepAxis::Noise(_) => "noise",
        }
    }

    pub fn values(&self) -> Vec<f64> {
        match self {
            SweepAxis::Clients(v) => v.iter().map(|&n| n as f64).collect(),
            SweepAxis::AttackerRatio(v) | SweepAxis::Noise(v) => v.clone(),
        }
    }

    /// Builds the axis from a name and comma-separated values.
    pub fn parse(name: &str, values: &str) -> Result<Self> {
        let items: Vec<&str> = values.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
        let bad = |v: &str| HarnessError::Usage(format!("bad {name} value `{v}`"));
        Ok(match name {
            "clients" => SweepAxis::Clients(
                items.iter().map(|v| v.parse().map_err(|_| bad(v))).collect::<Result<_>>()?,
            ),
            "attacker_ratio" | "noise" => {
                let v = items.iter().map(|v| v.parse().map_err(|_| bad(v))).collect::<Result<_>>()?;
                if name == "noise" {
                    SweepAxis::Noise(v)
                } else {
                    SweepAxis::AttackerRatio(v)
                }
            }
            other => return Err(HarnessError::Usage(format!("unknown sweep axis `{other}`"))),
        })
    }

    fn apply(&self, base: &Scenario, index: usize) -> Scenario {
        let mut s = base.clone();
        match self {
            SweepAxis::Clients(v) => {
                let senders = base.fed.num_senders();
                s.fed.num_clients = v[index];
                s.fed.attacker_ratio = (senders as f64 / v[index] as f64).min(1.0);
            }
            SweepAxis::AttackerRatio(v) => s.fed.attacker_ratio = v[index],
            SweepAxis::Noise(v) => s.fed.noise_level = v[index],
        }
        s
    }
}

/// A sweep file: a base scenario (inline or by path), an axis and the seeds
/// each point is repeated over.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub base: BaseScenario,
    pub axis: SweepAxis,
    #[serde(default)]
    pub seeds: Vec<u64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BaseScenario {
    Path(PathBuf),
    Inline(Box<Scenario>),
}

impl SweepSpec {
    pub fn load(path: &Path) -> Result<(Scenario, SweepAxis, Vec<u64>)> {
        let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let spec: SweepSpec = serde_json::from_str(&text).map_err(|e| HarnessError::parse(path, e))?;
        let dir = path.parent().unwrap_or(Path::new("."));
        let base = match spec.base {
            BaseScenario::Path(p) => Scenario::load(&dir.join(p))?,
            BaseScenario::Inline(mut s) => {
                s.resolve_paths(dir);
                *s
            }
        };
        Ok((base, spec.axis, spec.seeds))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRun {
    pub value: f64,
    pub seed: u64,
    pub summary: Summary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    pub runs: usize,
    pub mean_final_accuracy: f64,
    pub mean_signal_amplitude: Option<f64>,
    pub mean_ber: Option<f64>,
    pub decoded_ok: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub axis: String,
    pub points: Vec<SweepPoint>,
    /// Largest difference between any two points' mean final accuracy.
    pub max_accuracy_gap: f64,
    /// Spearman rank correlation of axis value against mean amplitude.
    pub amplitude_spearman: Option<f64>,
    pub runs: Vec<SweepRun>,
}

/// Runs the base scenario once per axis value and seed. With no seeds the
/// base scenario's own seed is used. Runs write into per-run
/// subdirectories of the base output directory, and the sweep summary goes
/// next to them.
pub fn run_sweep(base: &Scenario, axis: &SweepAxis, seeds: &[u64]) -> Result<SweepSummary> {
    let values = axis.values();
    if values.is_empty() {
        return Err(HarnessError::Usage("sweep axis has no values".into()));
    }
    let seeds = if seeds.is_empty() {
        vec![base.fed.master_seed]
    } else {
        seeds.to_vec()
    };

    let mut runs = Vec::new();
    let mut points = Vec::new();
    for (i, &value) in values.iter().enumerate() {
        let mut acc = Vec::new();
        let mut amp = Vec::new();
        let mut ber = Vec::new();
        let mut ok = 0;
        for &seed in &seeds {
            let mut s = axis.apply(base, i);
            s.fed.master_seed = seed;
            s.name = format!("{}-{}-{}-seed{}", base.name, axis.name(), value, seed);
            s.output_dir = base
                .output_dir
                .as_ref()
                .map(|d| d.join(format!("{}-{}-seed{}", axis.name(), value, seed)));
            let summary = run_scenario(&s)?.summary;
            acc.push(summary.final_global_accuracy);
            amp.extend(summary.signal_amplitude);
            ber.extend(summary.ber);
            ok += summary.decoded_ok as usize;
            runs.push(SweepRun { value, seed, summary });
        }
        points.push(SweepPoint {
            value,
            runs: seeds.len(),
            mean_final_accuracy: round9(mean(&acc)),
            mean_signal_amplitude: (!amp.is_empty()).then(|| round9(mean(&amp))),
            mean_ber: (!ber.is_empty()).then(|| round9(mean(&ber))),
            decoded_ok: ok,
        });
    }

    let accs: Vec<f64> = points.iter().map(|p| p.mean_final_accuracy).collect();
    let max_accuracy_gap = accs.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - accs.iter().cloned().fold(f64::INFINITY, f64::min);
    let amps: Option<Vec<f64>> = points.iter().map(|p| p.mean_signal_amplitude).collect();
    let amplitude_spearman = amps.and_then(|a| spearman(&values, &a)).map(round9);

    let summary = SweepSummary {
        axis: axis.name().to_string(),
        points,
        max_accuracy_gap: round9(max_accuracy_gap),
        amplitude_spearman,
        runs,
    };
    if let Some(dir) = &base.output_dir {
        write_sweep(dir, &summary)?;
    }
    Ok(summary)
}

fn write_sweep(dir: &Path, summary: &SweepSummary) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let path = dir.join("sweep.csv");
    let err = |e: csv::Error| HarnessError::parse(&path, e);
    let file = fs::File::create(&path).map_err(|e| HarnessError::io(&path, e))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(["value", "seed", "final_accuracy", "signal_amplitude", "ber", "first_success_round"])
        .map_err(err)?;
    let opt = |x: Option<f64>| x.map(fedcovert::fmt::sig9).unwrap_or_default();
    for r in &summary.runs {
        w.write_record([
            fedcovert::fmt::sig9(r.value),
            r.seed.to_string(),
            fedcovert::fmt::sig9(r.summary.final_global_accuracy),
            opt(r.summary.signal_amplitude),
            opt(r.summary.ber),
            r.summary.first_success_round.map(|n| n.to_string()).unwrap_or_default(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| HarnessError::io(&path, e))?;
    let path = dir.join("sweep_summary.json");
    let mut text = serde_json::to_string_pretty(summary).expect("serializable");
    text.push('\n');
    fs::write(&path, text).map_err(|e| HarnessError::io(&path, e))
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Ranks with ties sharing their average rank.
fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut r = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Pearson correlation of the ranks; `None` when either side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let (mx, my) = (mean(&rx), mean(&ry));
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        return None;
    }
    Some(cov / (vx * vy).sqrt())
}
