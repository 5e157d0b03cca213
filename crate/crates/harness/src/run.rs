//! Running one scenario and writing its artifacts.

use std::fs;
use std::io::Write;
use std::path::Path;

use fedcovert::covert::{
    cycle_statistics, decode, decode_bitmap, decode_text, hamming_distance, write_pbm, Bitstream,
    Codec, CovertConfig, ObservationLog,
};
use fedcovert::detect::{
    recorder_report, write_detection_csv, AccuracyReport, L2Report, RoundDetection,
    SimilarityReport, Suspicion,
};
use fedcovert::fmt::sig9;
use fedcovert::sim::{ClientRole, RoundReport, TraceSelection};
use fedcovert::Simulation;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};
use crate::scenario::Scenario;

/// Everything a run produced, in memory.
#[derive(Clone, Debug)]
pub struct RunArtifacts {
    pub summary: Summary,
    pub covert: Option<CovertConfig>,
    pub sent: Bitstream,
    pub received: Bitstream,
    pub reports: Vec<RoundReport>,
    pub log: ObservationLog,
    pub roles: Vec<ClientRole>,
    pub detections: Vec<RoundDetection>,
    /// Ranked recorder output, when the recorder was on.
    pub suspicions: Vec<Suspicion>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub name: String,
    pub master_seed: u64,
    pub num_clients: usize,
    pub total_rounds: usize,
    pub noise_level: f64,
    pub payload_bits: usize,
    pub bit_errors: usize,
    pub ber: Option<f64>,
    pub per_cycle_ber: Vec<f64>,
    pub cumulative_ber: Vec<f64>,
    /// Smallest number of recorded rounds after which decoding yields the
    /// payload exactly.
    pub first_success_round: Option<usize>,
    /// Mean over payload bits of `(2b - 1)(cycle mean - threshold)`.
    pub signal_amplitude: Option<f64>,
    pub decoded_ok: bool,
    pub final_global_accuracy: f64,
    pub final_local_accuracies: Vec<f64>,
    pub detection: Option<DetectionSummary>,
    pub recorder: Option<RecorderSummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionSummary {
    pub rounds: usize,
    pub clients: Vec<ClientDetection>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClientDetection {
    pub client: usize,
    pub role: ClientRole,
    pub l2_flags: usize,
    pub cosine_flags: usize,
    pub accuracy_flags: usize,
    /// Rounds in which this client's mean similarity fell inside the
    /// `[min, max]` of pairwise similarities among the other benign clients.
    pub cosine_in_band: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecorderSummary {
    pub scored: usize,
    pub above_half: usize,
    /// Of the top `positions · senders` entries, how many are a sender at
    /// an agreed position.
    pub top_hits: usize,
    pub top_considered: usize,
}

impl RunArtifacts {
    pub fn client_detection(&self, client: usize) -> Option<&ClientDetection> {
        self.summary.detection.as_ref()?.clients.get(client)
    }

    pub fn senders(&self) -> Vec<usize> {
        ids_with(&self.roles, |r| r == ClientRole::Sender)
    }
}

fn ids_with(roles: &[ClientRole], f: impl Fn(ClientRole) -> bool) -> Vec<usize> {
    roles.iter().enumerate().filter(|(_, &r)| f(r)).map(|(i, _)| i).collect()
}

/// Rounds `x` to the nine significant digits used in every output file.
pub fn round9(x: f64) -> f64 {
    if x.is_finite() {
        sig9(x).parse().unwrap_or(x)
    } else {
        x
    }
}

/// Runs the scenario and, when it names an output directory, writes the
/// artifacts there. A payload that fails to decode is reported in the
/// summary, not as an error.
pub fn run_scenario(scenario: &Scenario) -> Result<RunArtifacts> {
    let sent = scenario.payload()?;
    let covert = scenario.covert_config(sent.len())?;
    let defense = &scenario.defense;

    let mut sim = Simulation::new(scenario.fed.clone(), covert.clone(), &sent)?;
    let hypotheses = if defense.recorder {
        let h = if defense.cycle_hypotheses.is_empty() {
            covert.as_ref().map(|c| vec![c.cycle_rounds]).unwrap_or_default()
        } else {
            defense.cycle_hypotheses.clone()
        };
        if h.is_empty() {
            return Err(HarnessError::Usage("recorder needs cycle_hypotheses".into()));
        }
        sim = sim.with_trace(TraceSelection::All);
        h
    } else {
        Vec::new()
    };

    let th = defense.thresholds;
    let mut detections = Vec::new();
    while !sim.is_finished() {
        let out = sim.step()?;
        if defense.detectors && out.report.l2_norms.len() >= 2 {
            let r = &out.report;
            detections.push(RoundDetection {
                l2: L2Report::from_norms(r.l2_norms.clone(), th.l2_z),
                cosine: SimilarityReport::from_matrix(
                    r.round_index,
                    r.l2_norms.clone(),
                    r.cosine_matrix.clone(),
                    th.cosine_sigmas,
                ),
                accuracy: AccuracyReport::from_accuracies(r.local_accuracies.clone(), th.accuracy_sigmas),
            });
        }
    }
    let outcome = sim.finish()?;

    let suspicions = match &outcome.trace {
        Some(trace) => recorder_report(trace, &hypotheses)?,
        None => Vec::new(),
    };

    let received = outcome.received.clone();
    let payload_bits = sent.len();
    let bit_errors = hamming_distance(sent.bits(), received.bits());
    let (per_cycle_ber, cumulative_ber) = match &covert {
        Some(c) if payload_bits > 0 => cycle_ber(c, sent.bits(), received.bits()),
        _ => (Vec::new(), Vec::new()),
    };
    let (first_success_round, signal_amplitude) = match &covert {
        Some(c) if payload_bits > 0 => {
            let stats = cycle_statistics(&outcome.log, c)?;
            (
                first_success(&outcome.log, c, sent.bits())?,
                Some(round9(stats.signal_amplitude(sent.bits()))),
            )
        }
        _ => (None, None),
    };

    let detection = (!detections.is_empty()).then(|| summarize_detection(&detections, &outcome.roles));
    let recorder = outcome.trace.as_ref().map(|_| {
        let senders = ids_with(&outcome.roles, |r| r == ClientRole::Sender);
        let positions = covert.as_ref().map(|c| c.positions.clone()).unwrap_or_default();
        let top = (positions.len() * senders.len()).min(suspicions.len());
        RecorderSummary {
            scored: suspicions.len(),
            above_half: suspicions.iter().filter(|s| s.score > 0.5).count(),
            top_hits: suspicions[..top]
                .iter()
                .filter(|s| senders.contains(&s.client) && positions.contains(&s.position))
                .count(),
            top_considered: top,
        }
    });

    let last = outcome.reports.last();
    let summary = Summary {
        name: scenario.name.clone(),
        master_seed: scenario.fed.master_seed,
        num_clients: scenario.fed.num_clients,
        total_rounds: scenario.fed.total_rounds,
        noise_level: scenario.fed.noise_level,
        payload_bits,
        bit_errors,
        ber: (payload_bits > 0).then(|| round9(bit_errors as f64 / payload_bits as f64)),
        per_cycle_ber,
        cumulative_ber,
        first_success_round,
        signal_amplitude,
        decoded_ok: bit_errors == 0,
        final_global_accuracy: round9(last.map_or(0.0, |r| r.global_accuracy)),
        final_local_accuracies: last
            .map(|r| r.local_accuracies.iter().copied().map(round9).collect())
            .unwrap_or_default(),
        detection,
        recorder,
    };

    let artifacts = RunArtifacts {
        summary,
        covert,
        sent,
        received,
        reports: outcome.reports,
        log: outcome.log,
        roles: outcome.roles,
        detections,
        suspicions,
    };
    if let Some(dir) = &scenario.output_dir {
        write_artifacts(dir, scenario, &artifacts)?;
    }
    Ok(artifacts)
}

fn cycle_ber(c: &CovertConfig, sent: &[bool], received: &[bool]) -> (Vec<f64>, Vec<f64>) {
    let mut per = Vec::new();
    let mut cum = Vec::new();
    let mut errors = 0usize;
    for cycle in 0..c.num_cycles {
        let s = c.cycle_bits(sent, cycle);
        if s.is_empty() {
            break;
        }
        let start = cycle * c.positions.len();
        let r = &received[start.min(received.len())..(start + s.len()).min(received.len())];
        let e = hamming_distance(s, r);
        errors += e;
        per.push(round9(e as f64 / s.len() as f64));
        cum.push(round9(errors as f64 / (start + s.len()) as f64));
    }
    (per, cum)
}

fn first_success(log: &ObservationLog, c: &CovertConfig, sent: &[bool]) -> Result<Option<usize>> {
    let need = c.transmission_rounds();
    for len in need..=log.len() {
        if decode(&log.prefix(len), c)?.bits() == sent {
            return Ok(Some(len));
        }
    }
    Ok(None)
}

fn summarize_detection(detections: &[RoundDetection], roles: &[ClientRole]) -> DetectionSummary {
    let benign = ids_with(roles, |r| r != ClientRole::Sender);
    let clients = roles
        .iter()
        .enumerate()
        .map(|(client, &role)| {
            let others: Vec<usize> = benign.iter().copied().filter(|&b| b != client).collect();
            let mut d = ClientDetection {
                client,
                role,
                l2_flags: 0,
                cosine_flags: 0,
                accuracy_flags: 0,
                cosine_in_band: 0,
            };
            for det in detections {
                d.l2_flags += det.l2.is_flagged(client) as usize;
                d.cosine_flags += det.cosine.is_flagged(client) as usize;
                d.accuracy_flags += det.accuracy.is_flagged(client) as usize;
                if let Some((lo, hi)) = det.cosine.pair_band(&others) {
                    let s = det.cosine.mean_similarity[client];
                    d.cosine_in_band += (lo <= s && s <= hi) as usize;
                }
            }
            d
        })
        .collect();
    DetectionSummary {
        rounds: detections.len(),
        clients,
    }
}

fn create(path: &Path) -> Result<std::io::BufWriter<fs::File>> {
    fs::File::create(path)
        .map(std::io::BufWriter::new)
        .map_err(|e| HarnessError::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

pub fn write_artifacts(dir: &Path, scenario: &Scenario, a: &RunArtifacts) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let io = |p: &Path| {
        let p = p.to_path_buf();
        move |e: std::io::Error| HarnessError::io(p.clone(), e)
    };

    write_text(&dir.join("scenario.json"), &to_json(scenario))?;

    let path = dir.join("rounds.csv");
    let mut w = csv::Writer::from_writer(create(&path)?);
    let csv_err = |p: &Path| {
        let p = p.to_path_buf();
        move |e: csv::Error| HarnessError::parse(p.clone(), e)
    };
    w.write_record([
        "round",
        "global_accuracy",
        "applied_noise",
        "client",
        "role",
        "local_accuracy",
        "l2_norm",
        "mean_cosine",
    ])
    .map_err(csv_err(&path))?;
    for r in &a.reports {
        let n = r.local_accuracies.len();
        for c in 0..n {
            let mean_cos = if n > 1 {
                (0..n).filter(|&j| j != c).map(|j| r.cosine_matrix[c][j]).sum::<f64>() / (n - 1) as f64
            } else {
                1.0
            };
            w.write_record([
                r.round_index.to_string(),
                sig9(r.global_accuracy),
                sig9(r.applied_noise),
                c.to_string(),
                role_name(a.roles[c]).to_string(),
                sig9(r.local_accuracies[c]),
                sig9(r.l2_norms[c]),
                sig9(mean_cos),
            ])
            .map_err(csv_err(&path))?;
        }
    }
    w.flush().map_err(io(&path))?;

    if let Some(c) = &a.covert {
        let path = dir.join("observations.csv");
        write_observations(&path, &a.log, &c.positions)?;
        write_text(&dir.join("sent_bits.txt"), &format!("{}\n", a.sent.to_bit_string()))?;
        write_text(&dir.join("decoded_bits.txt"), &format!("{}\n", a.received.to_bit_string()))?;
        match a.sent.codec() {
            Codec::Text8 => {
                if let Ok(text) = decode_text(&a.received) {
                    write_text(&dir.join("decoded.txt"), &text)?;
                }
            }
            Codec::Bitmap1 { width, height } => {
                if let Ok(img) = decode_bitmap(&a.received, width, height) {
                    write_text(&dir.join("decoded.pbm"), &write_pbm(&img))?;
                }
            }
            Codec::RawBits => {}
        }
    }

    if !a.detections.is_empty() {
        let path = dir.join("detection.csv");
        let mut f = create(&path)?;
        write_detection_csv(&mut f, &a.detections).map_err(io(&path))?;
        f.flush().map_err(io(&path))?;
        let flags: Vec<_> = a
            .detections
            .iter()
            .map(|d| {
                serde_json::json!({
                    "round": d.cosine.round_index,
                    "l2": d.l2.flagged.iter().map(|f| f.client).collect::<Vec<_>>(),
                    "cosine": d.cosine.flagged.iter().map(|f| f.client).collect::<Vec<_>>(),
                    "accuracy": d.accuracy.flagged.iter().map(|f| f.client).collect::<Vec<_>>(),
                })
            })
            .collect();
        write_text(&dir.join("detection.json"), &to_json(&flags))?;
    }

    if !a.suspicions.is_empty() {
        let path = dir.join("recorder.csv");
        let mut f = create(&path)?;
        writeln!(f, "rank,client,position,score,cycle_rounds").map_err(io(&path))?;
        for (rank, s) in a.suspicions.iter().enumerate().filter(|(_, s)| s.score > 0.0) {
            writeln!(f, "{},{},{},{},{}", rank, s.client, s.position, sig9(s.score), s.cycle_rounds)
                .map_err(io(&path))?;
        }
        f.flush().map_err(io(&path))?;
    }

    write_text(&dir.join("summary.json"), &to_json(&a.summary))
}

fn role_name(r: ClientRole) -> &'static str {
    match r {
        ClientRole::Benign => "benign",
        ClientRole::Sender => "sender",
        ClientRole::Receiver => "receiver",
    }
}

/// `round,w<p0>,w<p1>,...` with one row per recorded round.
pub fn write_observations(path: &Path, log: &ObservationLog, positions: &[usize]) -> Result<()> {
    let err = |e: csv::Error| HarnessError::parse(path, e);
    let mut w = csv::Writer::from_writer(create(path)?);
    let header = std::iter::once("round".to_string()).chain(positions.iter().map(|p| format!("w{p}")));
    w.write_record(header).map_err(err)?;
    for (round, values) in log.rounds().iter().zip(log.entries()) {
        let row = std::iter::once(round.to_string()).chain(values.iter().map(|&v| sig9(v)));
        w.write_record(row).map_err(err)?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

/// Reads back an `observations.csv`, checking its columns against the
/// agreed positions.
pub fn read_observations(path: &Path, positions: &[usize]) -> Result<ObservationLog> {
    let err = |e: csv::Error| HarnessError::parse(path, e);
    let file = fs::File::open(path).map_err(|e| HarnessError::io(path, e))?;
    let mut r = csv::Reader::from_reader(file);
    let header = r.headers().map_err(err)?.clone();
    let expected: Vec<String> = std::iter::once("round".to_string())
        .chain(positions.iter().map(|p| format!("w{p}")))
        .collect();
    if header.iter().ne(expected.iter().map(String::as_str)) {
        return Err(HarnessError::parse(path, "columns do not match the channel's positions"));
    }
    let mut log = ObservationLog::new(positions.len());
    for record in r.records() {
        let record = record.map_err(err)?;
        let round: usize = record[0]
            .parse()
            .map_err(|e| HarnessError::parse(path, format!("round `{}`: {e}", &record[0])))?;
        let values = record
            .iter()
            .skip(1)
            .map(|v| v.parse::<f64>().map_err(|e| HarnessError::parse(path, format!("value `{v}`: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        log.push(round, values)?;
    }
    Ok(log)
}
