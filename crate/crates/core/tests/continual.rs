use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use spiking_replay::continual::*;
use spiking_replay::metrics::report_csv;
use spiking_replay::neuron::{Network, NeuronParams, RecurrentLayer};
use spiking_replay::replay::Codec;
use spiking_replay::spike::SpikeSet;
use spiking_replay::synth::{generate, SynthSpec};

fn small_data(seed: u64) -> (SpikeSet, SpikeSet) {
    let spec = SynthSpec {
        scenarios: 2,
        samples: 12,
        timesteps: 40,
        neurons: 24,
        ..Default::default()
    };
    split_train_test(&generate(&spec, seed).unwrap(), 0.25, seed).unwrap()
}

fn config(kind: &str, schedule: &[u16], k: usize) -> ExperimentConfig {
    serde_json::from_value(serde_json::json!({
        "seed": 11,
        "dataset": {"train": "unused"},
        "network": {"sizes": [24, 16, 12, 4]},
        "pretrain": {"epochs": 3, "eta": 0.001, "batch_size": 8},
        "continual": {"epochs": 2, "eta": 0.001, "batch_size": 8},
        "scenario": {
            "kind": kind,
            "schedule": schedule,
            "layer_index": k,
            "replay_count": 12,
            "per_class_quota": 5,
            "codec": {"kind": "chunk_threshold", "ratio": 4, "threshold": 1}
        }
    }))
    .unwrap()
}

#[test]
fn reinit_matches_reference_moments() {
    let n_in = 10_000;
    let w: Vec<f64> = (0..2 * n_in)
        .map(|i| {
            if i < n_in {
                if i % 2 == 0 {
                    0.1
                } else {
                    0.5
                }
            } else {
                9.0
            }
        })
        .collect();
    let layer = RecurrentLayer::new(n_in, 2, w, None, NeuronParams::default()).unwrap();
    let mut net = Network::new(vec![layer], 0).unwrap();
    reinit_new_class(&mut net, 1, &mut ChaCha8Rng::seed_from_u64(99)).unwrap();
    let row = &net.layers()[0].w()[n_in..];
    let mean = row.iter().sum::<f64>() / n_in as f64;
    let std = (row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n_in as f64).sqrt();
    assert!((mean - 0.3).abs() < 0.01, "mean {mean}");
    assert!((std - 0.2).abs() < 0.01, "std {std}");
}

#[test]
fn increment_leaves_frozen_layers_untouched() {
    let (train, test) = small_data(1);
    let cfg = config("class_incremental", &[3], 2);
    let mut runner = ContinualRunner::new(&cfg, &train, &test, None).unwrap();
    runner.pretrain().unwrap();
    runner.capture().unwrap();
    let before = runner.network().clone();
    runner.run_increment(0).unwrap();
    let after = runner.network();
    assert_eq!(after.prefix_fingerprint(2), before.prefix_fingerprint(2));
    for i in 0..2 {
        assert_eq!(after.layers()[i], before.layers()[i]);
    }
    assert_ne!(after.layers()[2].w(), before.layers()[2].w());
    // The output layer has no recurrent weights to learn.
    assert!(after.layers()[2].v().iter().all(|&x| x == 0.0));
}

#[test]
fn protocol_runs_are_deterministic() {
    let (train, test) = small_data(2);
    for (kind, schedule) in [
        ("sample_incremental", vec![1]),
        ("class_incremental", vec![2, 3]),
    ] {
        let cfg = config(kind, &schedule, 1);
        let a = run_protocol(&cfg, &train, &test, None).unwrap();
        let b = run_protocol(&cfg, &train, &test, None).unwrap();
        assert_eq!(report_csv(&a.rows), report_csv(&b.rows));
        assert_eq!(a.rows.len(), schedule.len() * 3);
        assert_eq!(a.steps.len(), schedule.len());
    }
}

#[test]
fn multi_class_buffer_grows_by_quota() {
    let (train, test) = small_data(3);
    let cfg = config("multi_class_incremental", &[2, 3], 1);
    let codec = cfg.scenario.codec;
    let report = run_protocol(&cfg, &train, &test, None).unwrap();
    // Two pretrained classes with five entries each, then five per learned class.
    let entries: Vec<usize> = report.steps.iter().map(|s| s.replay_entries).collect();
    assert_eq!(entries, vec![15, 20]);
    for s in &report.steps {
        assert_eq!(
            s.replay_bytes,
            codec.footprint_bytes(s.replay_entries, 16, 40)
        );
    }
    let p = plan(&cfg, &train, &test).unwrap();
    assert_eq!(p.initial_replay_entries, 10);
    assert_eq!(
        p.steps.iter().map(|s| s.replay_entries).collect::<Vec<_>>(),
        vec![10, 15]
    );
}

#[test]
fn invalid_schedules_are_rejected() {
    let (train, test) = small_data(4);
    let mut cfg = config("class_incremental", &[3, 3], 1);
    assert!(run_protocol(&cfg, &train, &test, None).is_err());
    cfg.scenario.schedule = vec![7];
    assert!(run_protocol(&cfg, &train, &test, None).is_err());
    cfg.scenario.schedule = vec![3];
    cfg.scenario.layer_index = 3;
    assert!(run_protocol(&cfg, &train, &test, None).is_err());
    cfg.scenario.layer_index = 1;
    cfg.scenario.pretrain_classes = Some(vec![0, 3]);
    assert!(run_protocol(&cfg, &train, &test, None).is_err());
}

#[test]
fn empty_frozen_part_stores_raw_inputs() {
    let (train, test) = small_data(5);
    let mut cfg = config("class_incremental", &[3], 0);
    cfg.scenario.codec = Codec::Aggregate;
    let mut runner = ContinualRunner::new(&cfg, &train, &test, None).unwrap();
    runner.pretrain().unwrap();
    runner.capture().unwrap();
    assert_eq!(runner.buffer().neurons(), 24);
    assert_eq!(runner.buffer().len(), 12);
    runner.run_increment(0).unwrap();
}
