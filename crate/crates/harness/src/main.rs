use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fedcovert::covert::{decode_text, encode_text, Codec, ThresholdPolicy};
use fedcovert::fmt::sig9;
use fedcovert_harness::sweep::SweepSpec;
use fedcovert_harness::{
    capacity_line, decode_trace, run_scenario, run_sweep, HarnessError, Overrides, Result, Scenario,
    SweepAxis,
};

#[derive(Parser)]
#[command(name = "fedcovert", version, about = "Federated-learning covert channel simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write its artifacts.
    Run(RunArgs),
    /// Run a scenario once per value of one axis.
    Sweep(SweepArgs),
    /// Print the channel capacity for T rounds, P positions and n-round cycles.
    Capacity {
        rounds: usize,
        positions: usize,
        cycle_rounds: usize,
    },
    /// Print the 8-bit encoding of a text.
    EncodeText {
        text: Option<String>,
        #[arg(long, conflicts_with = "text")]
        file: Option<PathBuf>,
    },
    /// Decode a recorded observations.csv offline.
    DecodeTrace {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        threshold: Option<ThresholdPolicy>,
    },
}

#[derive(Args)]
struct Common {
    /// Scenario (or sweep) JSON file.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the master seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threshold: Option<ThresholdPolicy>,
    /// Overrides the noise level N_l.
    #[arg(long)]
    noise: Option<f64>,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            noise: self.noise,
            threshold: self.threshold,
            output_dir: self.out.clone(),
        }
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    /// `clients`, `attacker_ratio` or `noise`; when given, --config is a
    /// plain scenario.
    #[arg(long, requires = "values")]
    axis: Option<String>,
    /// Comma-separated axis values.
    #[arg(long)]
    values: Option<String>,
    /// Comma-separated seeds to repeat each point over.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn execute(command: Command) -> Result<ExitCode> {
    match command {
        Command::Run(args) => {
            let mut scenario = Scenario::load(&args.common.config)?;
            scenario.apply_overrides(&args.common.overrides())?;
            let a = run_scenario(&scenario)?;
            let s = &a.summary;
            let mut line = format!("final_accuracy={}", sig9(s.final_global_accuracy));
            if let Some(ber) = s.ber {
                line.push_str(&format!(" ber={}", sig9(ber)));
                match s.first_success_round {
                    Some(r) => line.push_str(&format!(" first_success_round={r}")),
                    None => line.push_str(" first_success_round=none"),
                }
            }
            println!("{line}");
            if s.payload_bits > 0 && !s.decoded_ok && !scenario.best_effort {
                return Err(HarnessError::DecodeFailed {
                    bit_errors: s.bit_errors,
                    payload_bits: s.payload_bits,
                });
            }
        }
        Command::Sweep(args) => {
            let (mut base, axis, mut seeds) = match (&args.axis, &args.values) {
                (Some(name), Some(values)) => {
                    (Scenario::load(&args.common.config)?, SweepAxis::parse(name, values)?, Vec::new())
                }
                _ => SweepSpec::load(&args.common.config)?,
            };
            base.apply_overrides(&args.common.overrides())?;
            if !args.seeds.is_empty() {
                seeds = args.seeds;
            }
            let summary = run_sweep(&base, &axis, &seeds)?;
            println!("{},final_accuracy,signal_amplitude,ber,decoded_ok", summary.axis);
            for p in &summary.points {
                println!(
                    "{},{},{},{},{}/{}",
                    sig9(p.value),
                    sig9(p.mean_final_accuracy),
                    p.mean_signal_amplitude.map(sig9).unwrap_or_default(),
                    p.mean_ber.map(sig9).unwrap_or_default(),
                    p.decoded_ok,
                    p.runs
                );
            }
            println!("max_accuracy_gap={}", sig9(summary.max_accuracy_gap));
            if let Some(r) = summary.amplitude_spearman {
                println!("amplitude_spearman={}", sig9(r));
            }
        }
        Command::Capacity {
            rounds,
            positions,
            cycle_rounds,
        } => println!("{}", capacity_line(rounds, positions, cycle_rounds)?),
        Command::EncodeText { text, file } => {
            let text = match (text, file) {
                (Some(t), None) => t,
                (None, Some(p)) => std::fs::read_to_string(&p).map_err(|e| HarnessError::Io { path: p, source: e })?,
                _ => return Err(HarnessError::Usage("give a text or --file".into())),
            };
            println!("{}", encode_text(&text)?.to_bit_string());
        }
        Command::DecodeTrace {
            config,
            trace,
            threshold,
        } => {
            let scenario = Scenario::load(&config)?;
            let d = decode_trace(&scenario, &trace, threshold)?;
            println!("{}", d.received.to_bit_string());
            if d.received.codec() == Codec::Text8 {
                if let Ok(text) = decode_text(&d.received) {
                    println!("{text}");
                }
            }
            let n = d.received.len().max(1);
            println!("bit_errors={} ber={}", d.bit_errors, sig9(d.bit_errors as f64 / n as f64));
        }
    }
    Ok(ExitCode::SUCCESS)
}
