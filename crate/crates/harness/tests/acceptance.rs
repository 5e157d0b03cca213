//! Acceptance criteria, one PASS/FAIL line each.
//!
//! Runs as a plain binary so the lines reach the terminal under
//! `cargo test`. Arguments that are criterion numbers restrict the run to
//! those criteria. The large-model image run only happens with
//! `FEDCOVERT_SLOW=1`.

use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use fedcovert::covert::{capacity, decode_text, Bitstream, CovertConfig, FactorPolicy, ThresholdPolicy};
use fedcovert::model::{generate_dataset, init_params, loss, loss_and_gradient};
use fedcovert::rng::SplitMix64;
use fedcovert::sim::{coordinate_mean, DataConfig, NoiseTarget};
use fedcovert::{run_simulation, FedConfig, ModelSpec, ParamVector, TrainingConfig};
use fedcovert_harness::sweep::SweepSpec;
use fedcovert_harness::{capacity_line, run_scenario, run_sweep, RunArtifacts, Scenario};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn load(name: &str) -> Scenario {
    Scenario::load(&scenario_path(name)).expect("scenario loads")
}

fn run(name: &str) -> RunArtifacts {
    run_scenario(&load(name)).expect("scenario runs")
}

fn c1_capacity() -> Outcome {
    let c = capacity(200, 1000, 20).unwrap();
    let exact = c.total_bits == 10_000 && c.rounds == 200 && c.total_bits == 50 * c.rounds && c.rate() == 50.0;
    let line = capacity_line(200, 1000, 20).unwrap();
    outcome(exact && line == "B=10000 R=50.0", line)
}

fn c2_text() -> Outcome {
    let t = Instant::now();
    let a = run("text.json");
    let s = &a.summary;
    let text = decode_text(&a.received).unwrap_or_default();
    let secs = t.elapsed().as_secs_f64();
    outcome(
        s.ber == Some(0.0) && s.first_success_round == Some(80) && secs < 120.0,
        format!(
            "BER={:?} first_success={:?} payload_bits={} decoded={text:?} in {secs:.1}s",
            s.ber, s.first_success_round, s.payload_bits
        ),
    )
}

fn c3_image() -> Outcome {
    let a = run("image.json");
    let s = &a.summary;
    let positions = a.covert.as_ref().map_or(0, |c| c.positions.len());
    let mut pass = s.payload_bits == 11_040
        && positions == 552
        && s.ber == Some(0.0)
        && s.first_success_round == Some(800);
    let mut detail = format!(
        "proportional: {} bits over {} positions, BER={:?} first_success={:?}",
        s.payload_bits, positions, s.ber, s.first_success_round
    );
    if std::env::var_os("FEDCOVERT_SLOW").is_some() {
        let l = run("image_large.json");
        let ls = &l.summary;
        let big = l.covert.as_ref().map_or(0, |c| c.positions.len()) == 2250
            && load("image_large.json").fed.model.parameter_count() >= 225_000
            && ls.ber == Some(0.0)
            && ls.first_success_round == Some(200);
        pass &= big;
        detail.push_str(&format!(
            "; large: BER={:?} first_success={:?}",
            ls.ber, ls.first_success_round
        ));
    } else {
        detail.push_str("; large-model config skipped (set FEDCOVERT_SLOW=1)");
    }
    outcome(pass, detail)
}

fn c4_accuracy() -> Outcome {
    let (base, axis, seeds) = SweepSpec::load(&scenario_path("sweep_attackers.json")).unwrap();
    let positions = base.channel.as_ref().and_then(|c| c.num_positions).unwrap_or(0);
    let fraction = positions as f64 / base.fed.model.parameter_count() as f64;
    let s = run_sweep(&base, &axis, &seeds).unwrap();
    let accs: Vec<String> = s
        .points
        .iter()
        .map(|p| format!("{}:{:.4}", p.value, p.mean_final_accuracy))
        .collect();
    outcome(
        seeds.len() == 5 && fraction <= 0.01 && s.max_accuracy_gap < 0.03,
        format!(
            "positions {:.2}% of params, mean accuracy over {} seeds [{}], gap {:.2} points",
            100.0 * fraction,
            seeds.len(),
            accs.join(" "),
            100.0 * s.max_accuracy_gap
        ),
    )
}

fn stealth_run() -> RunArtifacts {
    run("stealth.json")
}

fn c5_cosine(a: &RunArtifacts) -> Outcome {
    let sender = a.senders()[0];
    let d = a.client_detection(sender).unwrap();
    let rounds = a.summary.detection.as_ref().unwrap().rounds;
    outcome(
        rounds == 200 && d.cosine_in_band as f64 >= 0.95 * rounds as f64 && (d.cosine_flags as f64) < 0.05 * rounds as f64,
        format!(
            "sender in benign band {}/{} rounds, cosine flags {}/{}",
            d.cosine_in_band, rounds, d.cosine_flags, rounds
        ),
    )
}

fn c6_l2_accuracy(a: &RunArtifacts) -> Outcome {
    let sender = a.senders()[0];
    let d = a.client_detection(sender).unwrap();
    let rounds = a.summary.detection.as_ref().unwrap().rounds as f64;
    outcome(
        (d.l2_flags as f64) < 0.05 * rounds && (d.accuracy_flags as f64) < 0.05 * rounds,
        format!("L2 flags {}/{rounds}, accuracy flags {}/{rounds}", d.l2_flags, d.accuracy_flags),
    )
}

fn c7_noise() -> Outcome {
    let (base, axis, seeds) = SweepSpec::load(&scenario_path("sweep_noise.json")).unwrap();
    let s = run_sweep(&base, &axis, &seeds).unwrap();
    let point = |n: f64| s.points.iter().find(|p| p.value == n).expect("noise level swept");
    let (p1, p5, p8) = (point(0.1), point(0.5), point(0.8));
    let amp = |p: &fedcovert_harness::sweep::SweepPoint| p.mean_signal_amplitude.unwrap();
    outcome(
        base.payload().unwrap().to_bit_string() == "11010"
            && seeds.len() == 10
            && p1.decoded_ok >= 9
            && p5.decoded_ok >= 9
            && amp(p8) < amp(p1),
        format!(
            "BER 0 in {}/10 at 0.1, {}/10 at 0.5; amplitude {:.4} at 0.1, {:.4} at 0.5, {:.4} at 0.8",
            p1.decoded_ok,
            p5.decoded_ok,
            amp(p1),
            amp(p5),
            amp(p8)
        ),
    )
}

fn c8_clients() -> Outcome {
    let (base, axis, seeds) = SweepSpec::load(&scenario_path("sweep_clients.json")).unwrap();
    let s = run_sweep(&base, &axis, &seeds).unwrap();
    let amps: Vec<String> = s
        .points
        .iter()
        .map(|p| format!("{}:{:.4}", p.value, p.mean_signal_amplitude.unwrap_or(f64::NAN)))
        .collect();
    let rho = s.amplitude_spearman;
    outcome(
        seeds.len() == 5 && rho.is_some_and(|r| r <= -0.9),
        format!("mean amplitude over {} seeds [{}], spearman {:?}", seeds.len(), amps.join(" "), rho),
    )
}

fn c9_recorder() -> Outcome {
    let a = run("recorder.json");
    let r = a.summary.recorder.clone().unwrap();
    let expected = a.covert.as_ref().unwrap().positions.len() * a.senders().len();
    let ranked = r.top_considered == expected && r.top_hits == expected;

    let clean = load("recorder_clean.json");
    let mut total = 0usize;
    let mut flagged = 0usize;
    let mut dirty_seeds = 0usize;
    for seed in 1..=20 {
        let mut s = clean.clone();
        s.fed.master_seed = seed;
        let out = run_scenario(&s).unwrap();
        let mut hot: Vec<usize> = out.suspicions.iter().filter(|x| x.score > 0.5).map(|x| x.position).collect();
        hot.sort_unstable();
        hot.dedup();
        total += s.fed.model.parameter_count();
        flagged += hot.len();
        dirty_seeds += !hot.is_empty() as usize;
    }
    let clean_frac = 1.0 - flagged as f64 / total as f64;
    outcome(
        ranked && clean_frac >= 0.99,
        format!(
            "covert run: {}/{} top entries are agreed positions; covert-free: {:.4}% of positions clean over 20 seeds, {} seeds with any flag",
            r.top_hits,
            expected,
            100.0 * clean_frac,
            dirty_seeds
        ),
    )
}

fn fed_avg_oracle() -> (bool, f64) {
    let mut rng = SplitMix64::new(2024);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let rows: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..4).map(|_| rng.uniform(-10.0, 10.0)).collect())
            .collect();
        let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
        let got = coordinate_mean(&refs).unwrap();
        for (j, g) in got.iter().enumerate() {
            let brute = (rows[0][j] + rows[1][j] + rows[2][j]) / 3.0;
            worst = worst.max((g - brute).abs());
        }
    }
    (worst <= 1e-12, worst)
}

fn gradient_oracle() -> (bool, f64) {
    let mut worst = 0.0f64;
    let h = 1e-5;
    for (i, dims) in [(3, 3, 2), (4, 6, 3), (2, 4, 5)].into_iter().enumerate() {
        let spec = ModelSpec::new(dims.0, dims.1, dims.2).unwrap();
        assert!(spec.parameter_count() <= 100);
        let data = generate_dataset(spec, 3, 0.7, 10 + i as u64).unwrap();
        let mut rng = SplitMix64::new(77 + i as u64);
        let values: Vec<f64> = init_params(spec, 5 + i as u64)
            .values()
            .iter()
            .map(|v| v + rng.uniform(-0.5, 0.5))
            .collect();
        let params = ParamVector::new(spec, values.clone()).unwrap();
        let (_, grad) = loss_and_gradient(&params, &data).unwrap();
        for k in 0..values.len() {
            let at = |d: f64| {
                let mut v = values.clone();
                v[k] += d;
                loss(&ParamVector::new(spec, v).unwrap(), &data).unwrap()
            };
            let fd = (at(h) - at(-h)) / (2.0 * h);
            let rel = (grad[k] - fd).abs() / grad[k].abs().max(fd.abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    (worst <= 1e-5, worst)
}

fn round_trip_oracle() -> (bool, String) {
    let strategy = (1usize..=3, 1usize..=3, 2usize..=3, 1usize..=4, 0usize..=2, 0usize..=2, any::<u64>(), any::<bool>())
        .prop_flat_map(|(i, h, c, cycle, warmup, idle, seed, fixed)| {
            let spec = ModelSpec::new(i, h, c).unwrap();
            let n = spec.parameter_count();
            (1usize..=n).prop_flat_map(move |positions| {
                let max_bits = positions * 3;
                (
                    Just((spec, cycle, warmup, idle, seed, fixed, positions)),
                    proptest::collection::vec(any::<bool>(), 1..=max_bits),
                )
            })
        });
    let mut runner = TestRunner::new(Config {
        cases: 1000,
        failure_persistence: None,
        ..Config::default()
    });
    let cases = std::cell::Cell::new(0usize);
    let result = runner.run(&strategy, |((spec, cycle, warmup, idle, seed, fixed, positions), bits)| {
        cases.set(cases.get() + 1);
        // warmup can zero the whole model, where an RMS factor is undefined
        let (factor, warmup) = if fixed {
            (FactorPolicy::Fixed(0.25), warmup)
        } else {
            (
                FactorPolicy::Rms {
                    sample_size: spec.parameter_count(),
                },
                0,
            )
        };
        let covert = CovertConfig::for_payload(
            spec.parameter_count(),
            positions,
            cycle,
            bits.len(),
            factor,
            ThresholdPolicy::Zero,
            warmup,
            seed,
        )
        .unwrap();
        let fed = FedConfig {
            num_clients: 1,
            total_rounds: covert.transmission_rounds() + idle,
            attacker_ratio: 1.0,
            receiver: false,
            noise_level: 0.0,
            noise_target: NoiseTarget::All,
            model: spec,
            training: TrainingConfig {
                epochs: 1,
                learning_rate: 0.1,
                batch_size: 4,
            },
            data: DataConfig {
                samples_per_class: 2,
                validation_per_class: 1,
                cluster_spread: 1.0,
            },
            master_seed: seed ^ 0x5eed,
        };
        let sent = Bitstream::raw(bits.clone());
        let out = run_simulation(&fed, &covert, &sent).unwrap();
        prop_assert_eq!(out.received.bits(), &bits[..]);
        Ok(())
    });
    match result {
        Ok(()) => (true, format!("{} payloads recovered", cases.get())),
        Err(e) => (false, format!("failed: {e}")),
    }
}

fn c10_oracles() -> Outcome {
    let (avg_ok, avg_err) = fed_avg_oracle();
    let (grad_ok, grad_err) = gradient_oracle();
    let (rt_ok, rt) = round_trip_oracle();
    outcome(
        avg_ok && grad_ok && rt_ok,
        format!("fed_avg max error {avg_err:.1e}; gradient max relative error {grad_err:.1e}; round trip: {rt}"),
    )
}

fn main() {
    let filter: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wanted = |n: usize| filter.is_empty() || filter.contains(&n);
    let mut stderr = std::io::stderr();
    let mut failed = Vec::new();
    let mut report = |n: usize, name: &str, f: &mut dyn FnMut() -> Outcome| {
        if !wanted(n) {
            return;
        }
        let t = Instant::now();
        let o = f();
        let status = if o.pass { "PASS" } else { "FAIL" };
        writeln!(
            stderr,
            "{status} criterion {n:>2} ({name}): {} [{:.1}s]",
            o.detail,
            t.elapsed().as_secs_f64()
        )
        .ok();
        if !o.pass {
            failed.push(n);
        }
    };

    report(1, "capacity", &mut c1_capacity);
    report(2, "text round trip", &mut c2_text);
    report(3, "image round trip", &mut c3_image);
    report(4, "accuracy non-destruction", &mut c4_accuracy);
    let stealth = (wanted(5) || wanted(6)).then(stealth_run);
    if let Some(a) = &stealth {
        report(5, "cosine stealth", &mut || c5_cosine(a));
        report(6, "L2 and accuracy stealth", &mut || c6_l2_accuracy(a));
    }
    report(7, "noise robustness", &mut c7_noise);
    report(8, "client-count attenuation", &mut c8_clients);
    report(9, "recorder defense", &mut c9_recorder);
    report(10, "oracle equivalences", &mut c10_oracles);

    if !failed.is_empty() {
        eprintln!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
