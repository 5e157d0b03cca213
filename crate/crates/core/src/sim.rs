//! The federated round loop.
//!
//! Every round each client starts from the current global model and trains
//! on its own data. A sender then overwrites the agreed coordinates
//! according to the covert schedule. The server optionally blends submitted
//! models with Gaussian noise, averages them coordinate-wise, and the
//! receiver records the agreed coordinates of the new global model.
//!
//! Client work inside a round runs in parallel; every random stream is
//! derived from `(master_seed, client_id, round_index)` alone, so results do
//! not depend on scheduling.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covert::{
    capacity, compute_factor, decode, embed_bits, zero_back, Bitstream, CovertConfig, FactorValue,
    ObservationLog, Phase,
};
use crate::detect::{cosine_similarity, l2_norm, WeightTrace};
use crate::error::{Error, Result};
use crate::model::{
    evaluate, init_params, train_local, Dataset, ModelSpec, ParamVector, SyntheticTask, TrainingConfig,
};
use crate::rng::{client_round_seed, derive_seed, SplitMix64};

const TAG_TASK: u64 = 1;
const TAG_VALIDATION: u64 = 2;
const TAG_CLIENT_DATA: u64 = 3;
const TAG_INIT: u64 = 4;
const TAG_TRAIN: u64 = 5;
const TAG_NOISE: u64 = 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClientRole {
    Benign,
    Sender,
    Receiver,
}

/// Which submitted models the server perturbs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseTarget {
    #[default]
    All,
    Senders,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    /// Training samples per class held by each client.
    pub samples_per_class: usize,
    /// Server validation samples per class.
    pub validation_per_class: usize,
    pub cluster_spread: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            samples_per_class: 10,
            validation_per_class: 20,
            cluster_spread: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FedConfig {
    pub num_clients: usize,
    /// Rounds in the run (`T`).
    pub total_rounds: usize,
    /// Fraction of clients that act as senders; the count is
    /// `round(attacker_ratio · num_clients)`.
    #[serde(default)]
    pub attacker_ratio: f64,
    /// Whether one benign client is designated the receiver.
    #[serde(default)]
    pub receiver: bool,
    /// Noise level `N_l` in `[0, 1]`.
    #[serde(default)]
    pub noise_level: f64,
    #[serde(default)]
    pub noise_target: NoiseTarget,
    pub model: ModelSpec,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub master_seed: u64,
}

impl FedConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.training.validate()?;
        if self.num_clients == 0 {
            return Err(Error::config("num_clients must be positive"));
        }
        if self.total_rounds == 0 {
            return Err(Error::config("total_rounds must be positive"));
        }
        if !(0.0..=1.0).contains(&self.attacker_ratio) {
            return Err(Error::config("attacker_ratio must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.noise_level) {
            return Err(Error::config("noise level must lie in [0, 1]"));
        }
        if self.receiver && self.num_clients < 2 {
            return Err(Error::config("a receiver needs at least two clients"));
        }
        if self.data.samples_per_class == 0 || self.data.validation_per_class == 0 {
            return Err(Error::config("sample counts must be positive"));
        }
        if !(self.data.cluster_spread > 0.0 && self.data.cluster_spread.is_finite()) {
            return Err(Error::config("cluster_spread must be positive"));
        }
        Ok(())
    }

    pub fn num_senders(&self) -> usize {
        ((self.attacker_ratio * self.num_clients as f64).round() as usize).min(self.num_clients)
    }

    /// Senders take the lowest client ids; the receiver, when configured and
    /// a benign client is left, is the highest.
    pub fn roles(&self) -> Vec<ClientRole> {
        let senders = self.num_senders();
        (0..self.num_clients)
            .map(|id| {
                if id < senders {
                    ClientRole::Sender
                } else if self.receiver && id == self.num_clients - 1 {
                    ClientRole::Receiver
                } else {
                    ClientRole::Benign
                }
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round_index: usize,
    pub global_accuracy: f64,
    pub local_accuracies: Vec<f64>,
    pub l2_norms: Vec<f64>,
    pub cosine_matrix: Vec<Vec<f64>>,
    /// Noise level applied this round (0 if no update was perturbed).
    pub applied_noise: f64,
}

/// One federated participant.
#[derive(Clone, Debug)]
pub struct ClientState {
    pub id: usize,
    pub role: ClientRole,
    pub data: Dataset,
    factor: Option<(usize, FactorValue)>,
}

impl ClientState {
    pub fn new(id: usize, role: ClientRole, data: Dataset) -> Self {
        Self {
            id,
            role,
            data,
            factor: None,
        }
    }
}

/// Coordinate-wise mean with uniform weights.
///
/// Each coordinate is summed in sorted order, which makes the result
/// independent of the order of `client_params`.
pub fn fed_avg(client_params: &[ParamVector]) -> Result<ParamVector> {
    let first = client_params
        .first()
        .ok_or_else(|| Error::Aggregation("no client updates to aggregate".into()))?;
    let spec = first.spec();
    if client_params.iter().any(|p| p.spec() != spec) {
        return Err(Error::Aggregation("client updates have different model specs".into()));
    }
    let rows: Vec<&[f64]> = client_params.iter().map(|p| p.values()).collect();
    ParamVector::new(spec, coordinate_mean(&rows)?)
}

/// The aggregation behind [`fed_avg`] on plain equal-length rows.
pub fn coordinate_mean(rows: &[&[f64]]) -> Result<Vec<f64>> {
    let width = rows
        .first()
        .ok_or_else(|| Error::Aggregation("no client updates to aggregate".into()))?
        .len();
    if let Some(bad) = rows.iter().find(|r| r.len() != width) {
        return Err(Error::Dimension {
            expected: width,
            actual: bad.len(),
        });
    }
    let k = rows.len() as f64;
    let mut column = Vec::with_capacity(rows.len());
    Ok((0..width)
        .map(|i| {
            column.clear();
            column.extend(rows.iter().map(|r| r[i]));
            column.sort_by(f64::total_cmp);
            column.iter().sum::<f64>() / k
        })
        .collect())
}

/// `(1 - N_l)·w + N_l·g` with `g ~ N(0, σ²)` and `σ` the sample standard
/// deviation of `w`.
pub fn apply_noise(params: &ParamVector, noise_level: f64, seed: u64) -> Result<ParamVector> {
    if !(0.0..=1.0).contains(&noise_level) {
        return Err(Error::config(format!("noise level {noise_level} outside [0, 1]")));
    }
    if noise_level == 0.0 {
        return Ok(params.clone());
    }
    let values = params.values();
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let mut rng = SplitMix64::new(seed);
    let keep = 1.0 - noise_level;
    let noisy = values
        .iter()
        .map(|&w| keep * w + noise_level * sd * rng.next_gaussian())
        .collect();
    ParamVector::new(params.spec(), noisy)
}

/// Everything a round needs besides the mutable client states.
#[derive(Clone, Copy, Debug)]
pub struct RoundEnv<'a> {
    pub config: &'a FedConfig,
    pub covert: Option<&'a CovertConfig>,
    pub payload: &'a [bool],
    pub validation: &'a Dataset,
}

#[derive(Clone, Debug)]
pub struct RoundOutput {
    pub new_global: ParamVector,
    pub report: RoundReport,
    /// Models as the server received them (after noise).
    pub submitted: Vec<ParamVector>,
}

fn client_update(
    global: &ParamVector,
    client: &mut ClientState,
    round_index: usize,
    env: &RoundEnv<'_>,
) -> Result<ParamVector> {
    let seed = client_round_seed(env.config.master_seed, client.id, round_index);
    let trained = train_local(global, &client.data, &env.config.training, derive_seed(seed, TAG_TRAIN))?;
    let covert = match (client.role, env.covert) {
        (ClientRole::Sender, Some(c)) => c,
        _ => return Ok(trained),
    };
    match covert.phase(round_index) {
        Phase::Warmup => zero_back(&trained, &covert.positions),
        Phase::Transmit { cycle, .. } => {
            let factor = match client.factor {
                Some((c, f)) if c == cycle => f,
                _ => {
                    let f = compute_factor(
                        &trained,
                        covert.factor_policy,
                        derive_seed(covert.shared_seed ^ client.id as u64, cycle as u64),
                    )?;
                    client.factor = Some((cycle, f));
                    f
                }
            };
            embed_bits(&trained, covert.cycle_bits(env.payload, cycle), &covert.positions, factor)
        }
        Phase::Idle => Ok(trained),
    }
}

/// Runs one round: local training and embedding, server noise, FedAvg, and
/// the per-round metrics.
pub fn run_round(
    global: &ParamVector,
    clients: &mut [ClientState],
    round_index: usize,
    env: &RoundEnv<'_>,
) -> Result<RoundOutput> {
    let config = env.config;
    if round_index >= config.total_rounds {
        return Err(Error::config(format!(
            "round {round_index} is past the configured {} rounds",
            config.total_rounds
        )));
    }

    let mut submitted = clients
        .par_iter_mut()
        .map(|client| client_update(global, client, round_index, env))
        .collect::<Result<Vec<_>>>()?;

    let mut applied_noise = 0.0;
    if config.noise_level > 0.0 {
        for (client, update) in clients.iter().zip(submitted.iter_mut()) {
            let targeted = match config.noise_target {
                NoiseTarget::All => true,
                NoiseTarget::Senders => client.role == ClientRole::Sender,
            };
            if targeted {
                let seed = client_round_seed(config.master_seed, client.id, round_index);
                *update = apply_noise(update, config.noise_level, derive_seed(seed, TAG_NOISE))?;
                applied_noise = config.noise_level;
            }
        }
    }

    let new_global = fed_avg(&submitted)?;

    let local_accuracies = submitted
        .par_iter()
        .map(|u| evaluate(u, env.validation))
        .collect::<Result<Vec<_>>>()?;
    let report = RoundReport {
        round_index,
        global_accuracy: evaluate(&new_global, env.validation)?,
        local_accuracies,
        l2_norms: submitted.iter().map(|u| l2_norm(u.values())).collect(),
        cosine_matrix: report_cosines(&submitted),
        applied_noise,
    };
    Ok(RoundOutput {
        new_global,
        report,
        submitted,
    })
}

/// Pairwise cosines with a unit diagonal; a pair involving a zero vector
/// reports 0.
fn report_cosines(updates: &[ParamVector]) -> Vec<Vec<f64>> {
    let n = updates.len();
    let mut m = vec![vec![1.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let c = cosine_similarity(updates[i].values(), updates[j].values()).unwrap_or(0.0);
            m[i][j] = c;
            m[j][i] = c;
        }
    }
    m
}

/// Which submitted coordinates to keep for the weight-change recorder.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceSelection {
    #[default]
    None,
    All,
    Positions(Vec<usize>),
}

#[derive(Clone, Debug)]
pub struct SimulationOutcome {
    pub reports: Vec<RoundReport>,
    pub received: Bitstream,
    pub log: ObservationLog,
    pub trace: Option<WeightTrace>,
    pub roles: Vec<ClientRole>,
    pub final_global: ParamVector,
    pub validation: Dataset,
}

/// A configured run, stepped round by round or driven to completion.
pub struct Simulation {
    config: FedConfig,
    covert: Option<CovertConfig>,
    payload: Vec<bool>,
    validation: Dataset,
    clients: Vec<ClientState>,
    global: ParamVector,
    log: ObservationLog,
    trace: Option<WeightTrace>,
    reports: Vec<RoundReport>,
    round: usize,
}

impl Simulation {
    /// Validates the configuration and the payload against the channel
    /// capacity `capacity(T - Z, positions, n)` before any round runs.
    pub fn new(config: FedConfig, covert: Option<CovertConfig>, message: &Bitstream) -> Result<Self> {
        config.validate()?;
        let parameter_count = config.model.parameter_count();
        if let Some(c) = &covert {
            c.validate(parameter_count)?;
            let usable = config.total_rounds.saturating_sub(c.warmup_rounds);
            let cap = if usable == 0 {
                0
            } else {
                capacity(usable, c.positions.len(), c.cycle_rounds)?.total_bits
            };
            if message.len() > cap {
                return Err(Error::CapacityExceeded {
                    requested: message.len(),
                    capacity: cap,
                });
            }
            if message.len() != c.payload_bits {
                return Err(Error::config(format!(
                    "message has {} bits but the covert config expects {}",
                    message.len(),
                    c.payload_bits
                )));
            }
            if c.payload_bits > 0 && c.transmission_rounds() > config.total_rounds {
                return Err(Error::config(format!(
                    "{} cycles need {} rounds, only {} configured",
                    c.num_cycles,
                    c.transmission_rounds(),
                    config.total_rounds
                )));
            }
        } else if !message.is_empty() {
            return Err(Error::config("a message needs a covert config"));
        }

        let master = config.master_seed;
        let task = SyntheticTask::new(config.model, derive_seed(master, TAG_TASK));
        let spread = config.data.cluster_spread;
        let validation = task.sample(
            config.data.validation_per_class,
            spread,
            derive_seed(master, TAG_VALIDATION),
        );
        let clients = config
            .roles()
            .into_iter()
            .enumerate()
            .map(|(id, role)| {
                let seed = derive_seed(derive_seed(master, TAG_CLIENT_DATA), id as u64);
                ClientState::new(id, role, task.sample(config.data.samples_per_class, spread, seed))
            })
            .collect();
        let global = init_params(config.model, derive_seed(master, TAG_INIT));
        let width = covert.as_ref().map_or(0, |c| c.positions.len());
        Ok(Self {
            config,
            covert,
            payload: message.bits().to_vec(),
            validation,
            clients,
            global,
            log: ObservationLog::new(width),
            trace: None,
            reports: Vec::new(),
            round: 0,
        })
    }

    /// Records the submitted values at the selected coordinates every round.
    pub fn with_trace(mut self, selection: TraceSelection) -> Self {
        let n = self.config.num_clients;
        self.trace = match selection {
            TraceSelection::None => None,
            TraceSelection::All => Some(WeightTrace::all_positions(n, self.config.model.parameter_count())),
            TraceSelection::Positions(p) => Some(WeightTrace::new(n, p)),
        };
        self
    }

    pub fn config(&self) -> &FedConfig {
        &self.config
    }

    pub fn global(&self) -> &ParamVector {
        &self.global
    }

    pub fn validation(&self) -> &Dataset {
        &self.validation
    }

    pub fn clients(&self) -> &[ClientState] {
        &self.clients
    }

    pub fn log(&self) -> &ObservationLog {
        &self.log
    }

    pub fn is_finished(&self) -> bool {
        self.round >= self.config.total_rounds
    }

    /// Runs the next round and returns its output.
    pub fn step(&mut self) -> Result<RoundOutput> {
        let env = RoundEnv {
            config: &self.config,
            covert: self.covert.as_ref(),
            payload: &self.payload,
            validation: &self.validation,
        };
        let out = run_round(&self.global, &mut self.clients, self.round, &env)?;
        if let Some(c) = &self.covert {
            self.log.record(self.round, &out.new_global, &c.positions)?;
        }
        if let Some(trace) = &mut self.trace {
            trace.push_round(&out.submitted)?;
        }
        self.global = out.new_global.clone();
        self.reports.push(out.report.clone());
        self.round += 1;
        Ok(out)
    }

    pub fn run(mut self) -> Result<SimulationOutcome> {
        while !self.is_finished() {
            self.step()?;
        }
        self.finish()
    }

    /// Decodes the log and returns the outcome of the rounds run so far.
    pub fn finish(self) -> Result<SimulationOutcome> {
        let received = match &self.covert {
            Some(c) if c.payload_bits > 0 => decode(&self.log, c)?,
            _ => Bitstream::default(),
        };
        Ok(SimulationOutcome {
            reports: self.reports,
            received,
            log: self.log,
            trace: self.trace,
            roles: self.clients.iter().map(|c| c.role).collect(),
            final_global: self.global,
            validation: self.validation,
        })
    }
}

/// Runs all `T` rounds and decodes the receiver's log.
pub fn run_simulation(config: &FedConfig, covert: &CovertConfig, message: &Bitstream) -> Result<SimulationOutcome> {
    Simulation::new(config.clone(), Some(covert.clone()), message)?.run()
}
