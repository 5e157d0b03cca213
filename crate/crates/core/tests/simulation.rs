use fedcovert::covert::{CovertConfig, FactorPolicy, ThresholdPolicy};
use fedcovert::detect::recorder_report;
use fedcovert::model::{generate_dataset, init_params, loss, loss_and_gradient};
use fedcovert::sim::{DataConfig, NoiseTarget, TraceSelection};
use fedcovert::{covert::Bitstream, FedConfig, ModelSpec, ParamVector, Simulation, TrainingConfig};

fn fed(num_clients: usize, senders: usize, rounds: usize) -> FedConfig {
    FedConfig {
        num_clients,
        total_rounds: rounds,
        attacker_ratio: senders as f64 / num_clients as f64,
        receiver: true,
        noise_level: 0.0,
        noise_target: NoiseTarget::All,
        model: ModelSpec::new(4, 6, 3).unwrap(),
        training: TrainingConfig {
            epochs: 1,
            learning_rate: 0.1,
            batch_size: 8,
        },
        data: DataConfig {
            samples_per_class: 6,
            validation_per_class: 5,
            cluster_spread: 1.0,
        },
        master_seed: 9,
    }
}

fn channel(params: usize, bits: usize, warmup: usize) -> CovertConfig {
    CovertConfig::for_payload(params, 5, 4, bits, FactorPolicy::Fixed(0.5), ThresholdPolicy::Zero, warmup, 3).unwrap()
}

fn bits(pattern: &str) -> Bitstream {
    Bitstream::raw(pattern.chars().map(|c| c == '1').collect())
}

#[test]
fn central_differences_agree_with_backprop() {
    for (i, (d, h, k)) in [(3, 3, 2), (4, 6, 3)].into_iter().enumerate() {
        let spec = ModelSpec::new(d, h, k).unwrap();
        let data = generate_dataset(spec, 2, 1.0, i as u64).unwrap();
        let p = init_params(spec, 40 + i as u64);
        let (_, g) = loss_and_gradient(&p, &data).unwrap();
        for j in 0..p.len() {
            let shifted = |e: f64| {
                let mut v = p.values().to_vec();
                v[j] += e;
                loss(&ParamVector::new(spec, v).unwrap(), &data).unwrap()
            };
            let fd = (shifted(1e-5) - shifted(-1e-5)) / 2e-5;
            let scale = g[j].abs().max(fd.abs()).max(1e-6);
            assert!((g[j] - fd).abs() / scale <= 1e-5, "coordinate {j}: {} vs {fd}", g[j]);
        }
    }
}

#[test]
fn identical_configs_give_identical_runs() {
    let cfg = fed(5, 1, 12);
    let m = bits("1011001110");
    let c = channel(cfg.model.parameter_count(), m.len(), 0);
    let a = Simulation::new(cfg.clone(), Some(c.clone()), &m).unwrap().run().unwrap();
    let b = Simulation::new(cfg, Some(c), &m).unwrap().run().unwrap();
    assert_eq!(a.final_global, b.final_global);
    assert_eq!(a.reports, b.reports);
    assert_eq!(a.log, b.log);
    assert_eq!(a.received, b.received);
}

#[test]
fn without_senders_the_channel_changes_nothing() {
    let cfg = fed(5, 0, 10);
    let c = channel(cfg.model.parameter_count(), 0, 0);
    let with = Simulation::new(cfg.clone(), Some(c), &Bitstream::default()).unwrap().run().unwrap();
    let without = Simulation::new(cfg, None, &Bitstream::default()).unwrap().run().unwrap();
    assert_eq!(with.final_global, without.final_global);
    assert_eq!(with.reports, without.reports);
}

#[test]
fn warmup_shrinks_the_agreed_coordinates() {
    let mut cfg = fed(20, 1, 10);
    cfg.model = ModelSpec::new(8, 16, 4).unwrap();
    let positions = channel(cfg.model.parameter_count(), 1, 10).positions;
    let c = CovertConfig {
        positions: positions.clone(),
        cycle_rounds: 1,
        num_cycles: 1,
        payload_bits: 0,
        factor_policy: FactorPolicy::Fixed(0.5),
        threshold_policy: ThresholdPolicy::Zero,
        warmup_rounds: 10,
        shared_seed: 3,
    };
    let with = Simulation::new(cfg.clone(), Some(c), &Bitstream::default()).unwrap().run().unwrap();
    let plain = Simulation::new(cfg, None, &Bitstream::default()).unwrap().run().unwrap();
    let magnitude = |p: &ParamVector| positions.iter().map(|&i| p.values()[i].abs()).sum::<f64>();
    assert!(magnitude(&with.final_global) < magnitude(&plain.final_global));
}

#[test]
fn capacity_is_checked_after_warmup() {
    let cfg = fed(3, 1, 12);
    let n = cfg.model.parameter_count();
    // 12 rounds fit three 4-round cycles, but only two once 4 go to warmup
    let fits = channel(n, 15, 0);
    assert!(Simulation::new(cfg.clone(), Some(fits), &Bitstream::raw(vec![true; 15])).is_ok());
    let late = channel(n, 15, 4);
    let err = Simulation::new(cfg, Some(late), &Bitstream::raw(vec![true; 15])).err().unwrap();
    assert!(matches!(err, fedcovert::Error::CapacityExceeded { requested: 15, capacity: 10 }));
}

#[test]
fn a_lone_sender_is_heard_exactly() {
    let mut cfg = fed(1, 1, 8);
    cfg.receiver = false;
    let m = bits("0110100111");
    let c = channel(cfg.model.parameter_count(), m.len(), 0);
    let out = Simulation::new(cfg, Some(c), &m).unwrap().run().unwrap();
    assert_eq!(out.received, m);
}

#[test]
fn benign_training_does_not_look_pinned() {
    let cfg = fed(6, 0, 40);
    let out = Simulation::new(cfg, None, &Bitstream::default())
        .unwrap()
        .with_trace(TraceSelection::All)
        .run()
        .unwrap();
    let ranked = recorder_report(out.trace.as_ref().unwrap(), &[5, 10, 20]).unwrap();
    let hot = ranked.iter().filter(|s| s.score > 0.5).count();
    assert!(hot * 100 <= ranked.len(), "{hot} of {} series look pinned", ranked.len());
}

#[test]
fn senders_only_noise_leaves_benign_updates_alone() {
    let mut cfg = fed(4, 1, 3);
    cfg.noise_level = 0.5;
    cfg.noise_target = NoiseTarget::Senders;
    let noisy = Simulation::new(cfg.clone(), None, &Bitstream::default()).unwrap().run().unwrap();
    cfg.noise_level = 0.0;
    let clean = Simulation::new(cfg, None, &Bitstream::default()).unwrap().run().unwrap();
    let first_noisy = &noisy.reports[0];
    let first_clean = &clean.reports[0];
    assert_eq!(first_noisy.l2_norms[1..], first_clean.l2_norms[1..]);
    assert_ne!(first_noisy.l2_norms[0], first_clean.l2_norms[0]);
    assert_eq!(first_noisy.applied_noise, 0.5);
}
