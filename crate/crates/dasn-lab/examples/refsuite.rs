//! Scratch harness for exploring reference-suite settings: runs the four
//! leave-one-domain-out tasks with baseline and DASN training and prints
//! the probe gaps, held-out AUCs, and SiF-loss slopes.

use std::time::Instant;

use dasn_lab::config::Task;
use dasn_lab::metrics::auc;
use dasn_lab::model::FactorKind;
use dasn_lab::probe::{extract_features, majority_fraction, train_probe};
use dasn_lab::synthdata::{benchmark_domain_specs, leave_one_domain_out, FactorModel, GenParams};
use dasn_lab::trainer::{lsq_slope, train, TrainConfig, TrainMode};

fn main() {
    let mut args = std::env::args().skip(1);
    let lr: f64 = args.next().map(|s| s.parse().unwrap()).unwrap_or(1e-3);
    let epochs: usize = args.next().map(|s| s.parse().unwrap()).unwrap_or(30);
    let lambda_mult: f64 = args.next().map(|s| s.parse().unwrap()).unwrap_or(1.0);
    let samples: usize = args.next().map(|s| s.parse().unwrap()).unwrap_or(240);
    let sigma: f64 = args.next().map(|s| s.parse().unwrap()).unwrap_or(0.3);
    let skew: f64 = args.next().map(|s| s.parse().unwrap()).unwrap_or(0.8);
    let jitter: f64 = args.next().map(|s| s.parse().unwrap()).unwrap_or(0.8);
    let strength: f64 = args.next().map(|s| s.parse().unwrap()).unwrap_or(1.2);
    let start = Instant::now();

    let params = GenParams {
        samples_per_domain: samples,
        noise_sigma: sigma,
        sensor_spoof_skew: skew,
        spoof_dir_jitter: jitter,
        spoof_strength: strength,
        ..GenParams::default()
    };
    let gen = FactorModel::build(params, benchmark_domain_specs());
    let suite: Vec<_> = (0..4).map(|d| gen.gen_domain_dataset(d).unwrap()).collect();

    let mut dasn_wins = 0;
    for task in Task::ALL {
        let (train_set, test_set) = leave_one_domain_out(&suite, task.held_out()).unwrap();
        let mut results = Vec::new();
        for mode in [TrainMode::Baseline, TrainMode::Dasn] {
            let mut config = TrainConfig {
                mode,
                lr,
                epochs,
                ..TrainConfig::default()
            };
            for (k, base) in [("identity", 0.05), ("environment", 0.08), ("sensor", 0.08)] {
                config.lambda.insert(k.to_string(), base * lambda_mult);
            }
            let state = train(config, &train_set).unwrap();
            // held-out AUC
            let (x, y) = test_set.full_matrix().unwrap();
            let scores = state.model.infer(&x).unwrap();
            let labels: Vec<u8> = y.iter().map(|&v| 1 - v as u8).collect();
            let set = dasn_lab::metrics::ScoreSet::new(scores, labels).unwrap();
            let a = auc(&set).unwrap();
            // identity probe on training-domain features
            let features = extract_features(&state.model, &train_set).unwrap();
            let id_labels: Vec<usize> = train_set
                .samples
                .iter()
                .map(|s| train_set.factor_label(s, FactorKind::Identity))
                .collect();
            let probe = train_probe(&features, &id_labels, train_set.n_identity, 1).unwrap();
            // sif slopes over final 80%
            let slopes: Vec<f64> = if mode == TrainMode::Dasn {
                FactorKind::SIFS
                    .iter()
                    .map(|k| {
                        let series = state.history.sif_series(*k).unwrap();
                        let from = series.len() / 5;
                        lsq_slope(&series[from..])
                    })
                    .collect()
            } else {
                vec![]
            };
            results.push((mode, a, probe, slopes));
        }
        let chance = {
            let id_labels: Vec<usize> = train_set
                .samples
                .iter()
                .map(|s| train_set.factor_label(s, FactorKind::Identity))
                .collect();
            majority_fraction(&id_labels)
        };
        let (_, auc_b, probe_b, _) = &results[0];
        let (_, auc_d, probe_d, slopes) = &results[1];
        if auc_d >= auc_b {
            dasn_wins += 1;
        }
        println!(
            "{}: auc base {:.4} dasn {:.4} | id-probe base {:.3} dasn {:.3} gap {:.1}pt (chance {:.3}, base-above {:.1}pt) | slopes {:?}",
            task.name(),
            auc_b,
            auc_d,
            probe_b,
            probe_d,
            (probe_b - probe_d) * 100.0,
            chance,
            (probe_b - chance) * 100.0,
            slopes.iter().map(|s| format!("{s:+.1e}")).collect::<Vec<_>>()
        );
    }
    println!(
        "dasn auc wins: {dasn_wins}/4; elapsed {:.1}s",
        start.elapsed().as_secs_f64()
    );
}
