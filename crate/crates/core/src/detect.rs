//! Server-side inspection of submitted models.
//!
//! Three snapshot detectors look at one round at a time: update norms,
//! pairwise cosine similarity and validation accuracy. The weight-change
//! recorder looks across rounds for coordinates that a client holds at a
//! constant magnitude and sign for whole cycles.
//!
//! All detectors consume the parameter vectors as the server receives them,
//! after any server-side noise.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fmt::sig9;
use crate::model::{evaluate, Dataset, ParamVector};

/// Extra slack below a `mean - k·std` bound so float noise among identical
/// clients never raises a flag.
const FLAG_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorThresholds {
    /// |z| above which an update norm is flagged.
    pub l2_z: f64,
    /// Standard deviations below the leave-one-out mean similarity.
    pub cosine_sigmas: f64,
    /// Standard deviations below the round's mean accuracy.
    pub accuracy_sigmas: f64,
}

impl Default for DetectorThresholds {
    fn default() -> Self {
        Self {
            l2_z: 3.0,
            cosine_sigmas: 3.0,
            accuracy_sigmas: 3.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlagReason {
    L2Norm,
    Cosine,
    Accuracy,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Flag {
    pub client: usize,
    pub reason: FlagReason,
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = values.clone().sum::<f64>() / n as f64;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    (mean, var.sqrt())
}

fn check_same_spec(updates: &[ParamVector], min: usize) -> Result<()> {
    if updates.len() < min {
        return Err(Error::config(format!(
            "need at least {min} client updates, got {}",
            updates.len()
        )));
    }
    let spec = updates[0].spec();
    if let Some(u) = updates.iter().find(|u| u.spec() != spec) {
        return Err(Error::Dimension {
            expected: spec.parameter_count(),
            actual: u.len(),
        });
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct L2Report {
    pub norms: Vec<f64>,
    /// Population z-score of each norm within the round.
    pub z_scores: Vec<f64>,
    pub flagged: Vec<Flag>,
}

impl L2Report {
    pub fn from_norms(norms: Vec<f64>, z_threshold: f64) -> Self {
        let (mean, std) = mean_std(norms.iter().copied());
        let z_scores: Vec<f64> = norms
            .iter()
            .map(|n| if std > 0.0 { (n - mean) / std } else { 0.0 })
            .collect();
        let flagged = z_scores
            .iter()
            .enumerate()
            .filter(|(_, z)| z.abs() > z_threshold)
            .map(|(client, _)| Flag {
                client,
                reason: FlagReason::L2Norm,
            })
            .collect();
        Self {
            norms,
            z_scores,
            flagged,
        }
    }

    pub fn is_flagged(&self, client: usize) -> bool {
        self.flagged.iter().any(|f| f.client == client)
    }
}

pub fn l2_report(updates: &[ParamVector], z_threshold: f64) -> Result<L2Report> {
    check_same_spec(updates, 2)?;
    let norms = updates.iter().map(|u| l2_norm(u.values())).collect();
    Ok(L2Report::from_norms(norms, z_threshold))
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Option<f64> {
    let na = l2_norm(a);
    let nb = l2_norm(b);
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Some((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Symmetric matrix with an exact unit diagonal.
pub fn cosine_matrix(updates: &[ParamVector]) -> Result<Vec<Vec<f64>>> {
    if let Some(client) = updates.iter().position(|u| l2_norm(u.values()) == 0.0) {
        return Err(Error::UndefinedSimilarity { client });
    }
    let n = updates.len();
    let mut m = vec![vec![1.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let c = cosine_similarity(updates[i].values(), updates[j].values())
                .expect("norms checked above");
            m[i][j] = c;
            m[j][i] = c;
        }
    }
    Ok(m)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    pub round_index: usize,
    pub l2_norms: Vec<f64>,
    pub pairwise_cosine: Vec<Vec<f64>>,
    /// Each client's mean similarity to every other client.
    pub mean_similarity: Vec<f64>,
    pub flagged: Vec<Flag>,
}

impl SimilarityReport {
    /// Flags client `i` when its mean similarity to the others falls more
    /// than `sigmas` standard deviations below the mean of the remaining
    /// clients' mean similarities.
    pub fn from_matrix(
        round_index: usize,
        l2_norms: Vec<f64>,
        pairwise_cosine: Vec<Vec<f64>>,
        sigmas: f64,
    ) -> Self {
        let n = pairwise_cosine.len();
        let mean_similarity: Vec<f64> = (0..n)
            .map(|i| {
                if n < 2 {
                    return 1.0;
                }
                (0..n).filter(|&j| j != i).map(|j| pairwise_cosine[i][j]).sum::<f64>()
                    / (n - 1) as f64
            })
            .collect();
        let flagged = (0..n)
            .filter(|&i| {
                let others = (0..n).filter(|&j| j != i).map(|j| mean_similarity[j]);
                let (mean, std) = mean_std(others);
                n > 2 && mean_similarity[i] < mean - sigmas * std - FLAG_EPS
            })
            .map(|client| Flag {
                client,
                reason: FlagReason::Cosine,
            })
            .collect();
        Self {
            round_index,
            l2_norms,
            pairwise_cosine,
            mean_similarity,
            flagged,
        }
    }

    pub fn is_flagged(&self, client: usize) -> bool {
        self.flagged.iter().any(|f| f.client == client)
    }

    /// `[min, max]` of `cos(i, j)` over distinct pairs drawn from `clients`.
    pub fn pair_band(&self, clients: &[usize]) -> Option<(f64, f64)> {
        let mut band: Option<(f64, f64)> = None;
        for (a, &i) in clients.iter().enumerate() {
            for &j in &clients[a + 1..] {
                let c = self.pairwise_cosine[i][j];
                band = Some(band.map_or((c, c), |(lo, hi)| (lo.min(c), hi.max(c))));
            }
        }
        band
    }
}

pub fn cosine_report(round_index: usize, updates: &[ParamVector], sigmas: f64) -> Result<SimilarityReport> {
    check_same_spec(updates, 2)?;
    let matrix = cosine_matrix(updates)?;
    let norms = updates.iter().map(|u| l2_norm(u.values())).collect();
    Ok(SimilarityReport::from_matrix(round_index, norms, matrix, sigmas))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub accuracies: Vec<f64>,
    pub flagged: Vec<Flag>,
}

impl AccuracyReport {
    pub fn from_accuracies(accuracies: Vec<f64>, sigmas: f64) -> Self {
        let (mean, std) = mean_std(accuracies.iter().copied());
        let flagged = accuracies
            .iter()
            .enumerate()
            .filter(|(_, &a)| a < mean - sigmas * std - FLAG_EPS)
            .map(|(client, _)| Flag {
                client,
                reason: FlagReason::Accuracy,
            })
            .collect();
        Self { accuracies, flagged }
    }

    pub fn is_flagged(&self, client: usize) -> bool {
        self.flagged.iter().any(|f| f.client == client)
    }
}

pub fn accuracy_report(updates: &[ParamVector], validation: &Dataset, sigmas: f64) -> Result<AccuracyReport> {
    check_same_spec(updates, 1)?;
    let accuracies = updates
        .iter()
        .map(|u| evaluate(u, validation))
        .collect::<Result<Vec<_>>>()?;
    Ok(AccuracyReport::from_accuracies(accuracies, sigmas))
}

/// Submitted values of every client at a set of recorded coordinates,
/// round by round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightTrace {
    num_clients: usize,
    positions: Vec<usize>,
    /// `rounds × clients × positions`, flattened.
    values: Vec<f64>,
    rounds: usize,
}

impl WeightTrace {
    pub fn new(num_clients: usize, positions: Vec<usize>) -> Self {
        Self {
            num_clients,
            positions,
            values: Vec::new(),
            rounds: 0,
        }
    }

    /// Traces every coordinate of a model with `parameter_count` entries.
    pub fn all_positions(num_clients: usize, parameter_count: usize) -> Self {
        Self::new(num_clients, (0..parameter_count).collect())
    }

    pub fn push_round(&mut self, submitted: &[ParamVector]) -> Result<()> {
        if submitted.len() != self.num_clients {
            return Err(Error::Dimension {
                expected: self.num_clients,
                actual: submitted.len(),
            });
        }
        for update in submitted {
            let values = update.values();
            for &p in &self.positions {
                let v = *values.get(p).ok_or_else(|| {
                    Error::config(format!("traced position {p} outside 0..{}", values.len()))
                })?;
                self.values.push(v);
            }
        }
        self.rounds += 1;
        Ok(())
    }

    /// Appends one round given as `values[client][k]` for traced position
    /// index `k`.
    pub fn push_values(&mut self, values: &[Vec<f64>]) -> Result<()> {
        if values.len() != self.num_clients || values.iter().any(|v| v.len() != self.positions.len()) {
            return Err(Error::Dimension {
                expected: self.num_clients * self.positions.len(),
                actual: values.iter().map(Vec::len).sum(),
            });
        }
        for row in values {
            self.values.extend_from_slice(row);
        }
        self.rounds += 1;
        Ok(())
    }

    pub fn rounds(&self) -> usize {
        self.rounds
    }

    pub fn num_clients(&self) -> usize {
        self.num_clients
    }

    pub fn positions(&self) -> &[usize] {
        &self.positions
    }

    /// Time series of `client` at traced position index `k`.
    pub fn series(&self, client: usize, k: usize) -> impl Iterator<Item = f64> + '_ {
        let stride = self.num_clients * self.positions.len();
        let offset = client * self.positions.len() + k;
        (0..self.rounds).map(move |r| self.values[r * stride + offset])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Suspicion {
    pub client: usize,
    pub position: usize,
    pub score: f64,
    /// Cycle length that produced the score.
    pub cycle_rounds: usize,
}

/// Magnitudes closer than this count as equal.
pub const PINNED_TOLERANCE: f64 = 1e-9;

/// For each round `t`, the length of the longest run ending at `t` in which
/// every value shares the sign of the run's first value and its magnitude
/// within [`PINNED_TOLERANCE`].
fn pinned_runs(series: &[f64]) -> Vec<usize> {
    let mut runs = Vec::with_capacity(series.len());
    let mut anchor = f64::NAN;
    let mut len = 0usize;
    for &x in series {
        let same = len > 0
            && (x.abs() - anchor.abs()).abs() <= PINNED_TOLERANCE
            && sign(x) == sign(anchor);
        if same {
            len += 1;
        } else {
            anchor = x;
            len = 1;
        }
        runs.push(len);
    }
    runs
}

fn sign(x: f64) -> i8 {
    if x.abs() <= PINNED_TOLERANCE {
        0
    } else if x > 0.0 {
        1
    } else {
        -1
    }
}

/// Best fraction of pinned cycles over every hypothesis and alignment.
///
/// For cycle length `n` and offset `o`, the series is cut into the full
/// blocks `[o + kn, o + (k+1)n)`; a block is pinned when it lies inside one
/// constant-magnitude, constant-sign run. Returns `(score, n)`, preferring
/// the longest hypothesis among equal scores.
pub fn pinned_score(series: &[f64], cycle_hypotheses: &[usize]) -> (f64, usize) {
    let runs = pinned_runs(series);
    let mut best = (0.0, cycle_hypotheses.first().copied().unwrap_or(0));
    for &n in cycle_hypotheses {
        for offset in 0..n {
            let blocks = (series.len().saturating_sub(offset)) / n;
            if blocks == 0 {
                continue;
            }
            let pinned = (0..blocks)
                .filter(|k| runs[offset + (k + 1) * n - 1] >= n)
                .count();
            let frac = pinned as f64 / blocks as f64;
            // a cycle of n also pins every divisor of n; report the longest
            if frac > best.0 || (frac > 0.0 && frac == best.0 && n > best.1) {
                best = (frac, n);
            }
        }
    }
    best
}

/// Scores every traced (client, position) series and returns them ranked by
/// descending score, ties broken by client then position.
pub fn recorder_report(trace: &WeightTrace, cycle_hypotheses: &[usize]) -> Result<Vec<Suspicion>> {
    if cycle_hypotheses.is_empty() || cycle_hypotheses.contains(&0) {
        return Err(Error::config("cycle hypotheses must be non-empty and positive"));
    }
    let longest = *cycle_hypotheses.iter().max().expect("non-empty");
    if trace.rounds() < 2 * longest {
        return Err(Error::InsufficientTrace {
            required: 2 * longest,
            available: trace.rounds(),
        });
    }
    let mut out = Vec::with_capacity(trace.num_clients() * trace.positions().len());
    let mut series = Vec::with_capacity(trace.rounds());
    for client in 0..trace.num_clients() {
        for (k, &position) in trace.positions().iter().enumerate() {
            series.clear();
            series.extend(trace.series(client, k));
            let (score, cycle_rounds) = pinned_score(&series, cycle_hypotheses);
            out.push(Suspicion {
                client,
                position,
                score,
                cycle_rounds,
            });
        }
    }
    out.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.client.cmp(&b.client))
            .then(a.position.cmp(&b.position))
    });
    Ok(out)
}

/// Snapshot-detector output for one round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundDetection {
    pub l2: L2Report,
    pub cosine: SimilarityReport,
    pub accuracy: AccuracyReport,
}

impl RoundDetection {
    pub fn flagged(&self, client: usize) -> Vec<FlagReason> {
        let mut reasons = Vec::new();
        if self.l2.is_flagged(client) {
            reasons.push(FlagReason::L2Norm);
        }
        if self.cosine.is_flagged(client) {
            reasons.push(FlagReason::Cosine);
        }
        if self.accuracy.is_flagged(client) {
            reasons.push(FlagReason::Accuracy);
        }
        reasons
    }
}

/// Writes one CSV row per client per round:
/// `round,client,l2_norm,l2_z,mean_cosine,accuracy,l2_flag,cosine_flag,accuracy_flag`.
pub fn write_detection_csv<W: Write>(out: &mut W, rounds: &[RoundDetection]) -> std::io::Result<()> {
    writeln!(
        out,
        "round,client,l2_norm,l2_z,mean_cosine,accuracy,l2_flag,cosine_flag,accuracy_flag"
    )?;
    for det in rounds {
        for client in 0..det.l2.norms.len() {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                det.cosine.round_index,
                client,
                sig9(det.l2.norms[client]),
                sig9(det.l2.z_scores[client]),
                sig9(det.cosine.mean_similarity[client]),
                sig9(det.accuracy.accuracies[client]),
                det.l2.is_flagged(client) as u8,
                det.cosine.is_flagged(client) as u8,
                det.accuracy.is_flagged(client) as u8,
            )?;
        }
    }
    Ok(())
}
