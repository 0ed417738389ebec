//! Command implementations behind the `dasn-lab` binary. Each command is a
//! pure function of (config, input files) to (output files), so re-running
//! with identical inputs rewrites identical bytes.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::config::{RunConfig, Task};
use crate::error::{Error, Result};
use crate::metrics::{EvalReport, ScoreSet};
use crate::model::DasnModel;
use crate::probe::{features_csv, suppression_report};
use crate::synthdata::{benchmark_domain_specs, leave_one_domain_out, FactorDataset, FactorModel};
use crate::trainer::{divergence_report, TrainState};

fn domain_file(data_dir: &Path, name: &str) -> PathBuf {
    data_dir.join(format!("domain_{name}.csv"))
}

/// Generate the four-domain suite and its manifest.
pub fn cmd_gen_data(config: &RunConfig) -> Result<()> {
    let dir = &config.paths.data_dir;
    std::fs::create_dir_all(dir)?;
    let specs = benchmark_domain_specs();
    let model = FactorModel::build(config.data.clone(), specs.clone());
    for (d, spec) in specs.iter().enumerate() {
        let dataset = model.gen_domain_dataset(d)?;
        dataset.save(&domain_file(dir, &spec.name))?;
    }
    let manifest = serde_json::json!({
        "params": config.data,
        "domains": specs,
    });
    std::fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)? + "\n",
    )?;
    config.write_resolved(dir)?;
    Ok(())
}

/// Load the generated suite from disk in the canonical M, C, I, O order.
pub fn load_suite(data_dir: &Path) -> Result<Vec<FactorDataset>> {
    benchmark_domain_specs()
        .iter()
        .map(|spec| FactorDataset::load(&domain_file(data_dir, &spec.name)))
        .collect()
}

/// Load the (train, test) pair for the configured task.
pub fn load_task(config: &RunConfig) -> Result<(FactorDataset, FactorDataset, Task)> {
    let task = config.task()?;
    let suite = load_suite(&config.paths.data_dir)?;
    let (train, test) = leave_one_domain_out(&suite, task.held_out())?;
    Ok((train, test, task))
}

/// Train per config, writing checkpoint, loss history, trend summary, and
/// a resumable state file.
pub fn cmd_train(config: &RunConfig, resume: bool) -> Result<()> {
    let (train_set, _, _) = load_task(config)?;
    let out = &config.paths.out_dir;
    std::fs::create_dir_all(out)?;
    let state_path = out.join("train_state.json");

    let mut state = if resume && state_path.exists() {
        let mut state = TrainState::from_json(&std::fs::read_to_string(&state_path)?)?;
        // the resumed run may extend the epoch budget
        state.config.epochs = config.train.epochs;
        state
    } else {
        TrainState::new(config.train.clone(), &train_set)?
    };
    state.run(&train_set, None)?;

    state.model.save(&out.join("checkpoint.ckpt"))?;
    std::fs::write(out.join("history.csv"), state.history.to_csv())?;
    std::fs::write(&state_path, state.to_json()? + "\n")?;
    if !state.history.factors.is_empty() && state.history.rows.len() >= 2 {
        let trends = divergence_report(&state.history, 20.min(state.history.rows.len()))?;
        std::fs::write(
            out.join("sif_trends.json"),
            serde_json::to_string_pretty(&trends)? + "\n",
        )?;
    }
    config.write_resolved(out)?;
    Ok(())
}

/// Score a dataset with a model: genuine probability per sample, paired
/// with genuine labels (1 = genuine, 0 = spoof).
pub fn score_dataset(model: &DasnModel, dataset: &FactorDataset) -> Result<ScoreSet> {
    let (x, y) = dataset.full_matrix()?;
    let scores = model.infer(&x)?;
    let labels: Vec<u8> = y.iter().map(|&yi| 1 - yi as u8).collect();
    ScoreSet::new(scores, labels)
}

/// Evaluate a checkpoint on the held-out domain of the configured task.
pub fn cmd_eval(config: &RunConfig, checkpoint: &Path) -> Result<()> {
    let (_, test_set, _) = load_task(config)?;
    let model = DasnModel::load(checkpoint)?;
    if model.config.input_dim != test_set.input_dim {
        return Err(Error::Config(format!(
            "checkpoint input dim {} does not match dataset input dim {}",
            model.config.input_dim, test_set.input_dim
        )));
    }
    let out = &config.paths.out_dir;
    std::fs::create_dir_all(out)?;
    let scores = score_dataset(&model, &test_set)?;
    std::fs::write(out.join("scores.csv"), scores.to_csv())?;
    let report = EvalReport::compute(&scores)?;
    std::fs::write(
        out.join("eval_report.json"),
        serde_json::to_string_pretty(&report)? + "\n",
    )?;
    std::fs::write(out.join("eval_report.csv"), report.to_csv())?;
    config.write_resolved(out)?;
    Ok(())
}

/// Probe two checkpoints (baseline vs suppression-trained) on the task's
/// training domains and dump raw features for external visualization.
pub fn cmd_probe(config: &RunConfig) -> Result<()> {
    let baseline_path = config.report.baseline_checkpoint.as_ref().ok_or_else(|| {
        Error::Config("probe needs report.baseline_checkpoint".into())
    })?;
    let dasn_path = config.report.dasn_checkpoint.as_ref().ok_or_else(|| {
        Error::Config("probe needs report.dasn_checkpoint".into())
    })?;
    let (train_set, _, _) = load_task(config)?;
    let baseline = DasnModel::load(baseline_path)?;
    let dasn = DasnModel::load(dasn_path)?;
    let out = &config.paths.out_dir;
    std::fs::create_dir_all(out)?;
    let report = suppression_report(
        &baseline,
        &dasn,
        &train_set,
        &crate::model::FactorKind::SIFS,
        config.train.seed,
    )?;
    std::fs::write(
        out.join("probe_report.json"),
        serde_json::to_string_pretty(&report)? + "\n",
    )?;
    std::fs::write(out.join("probe_report.csv"), report.to_csv())?;
    std::fs::write(out.join("features_baseline.csv"), features_csv(&baseline, &train_set)?)?;
    std::fs::write(out.join("features_dasn.csv"), features_csv(&dasn, &train_set)?)?;
    config.write_resolved(out)?;
    Ok(())
}

/// Ablation table over labeled checkpoints: AUC/HTER on the held-out
/// domain plus per-factor probe accuracies on the training domains.
pub fn cmd_report(config: &RunConfig) -> Result<()> {
    if config.report.entries.is_empty() {
        return Err(Error::Config("report needs at least one report.entries item".into()));
    }
    let (train_set, test_set, task) = load_task(config)?;
    let out = &config.paths.out_dir;
    std::fs::create_dir_all(out)?;

    let mut md = String::new();
    let _ = writeln!(md, "# Ablation report — task {}", task.name());
    let _ = writeln!(md);
    let _ = writeln!(
        md,
        "| run | AUC | HTER | probe id | probe env | probe sensor |"
    );
    let _ = writeln!(md, "|---|---|---|---|---|---|");
    let mut csv = String::from("label,auc,hter,probe_identity,probe_environment,probe_sensor\n");

    for entry in &config.report.entries {
        if !entry.checkpoint.exists() {
            return Err(Error::Config(format!(
                "missing checkpoint {}",
                entry.checkpoint.display()
            )));
        }
        let model = DasnModel::load(&entry.checkpoint)?;
        let scores = score_dataset(&model, &test_set)?;
        let report = EvalReport::compute(&scores)?;
        let features = crate::probe::extract_features(&model, &train_set)?;
        let mut probe_accs = Vec::new();
        for (i, kind) in crate::model::FactorKind::SIFS.iter().enumerate() {
            let labels: Vec<usize> = train_set
                .samples
                .iter()
                .map(|s| train_set.factor_label(s, *kind))
                .collect();
            probe_accs.push(crate::probe::train_probe(
                &features,
                &labels,
                train_set.class_count(*kind),
                crate::rng::mix_seed(&[config.train.seed, 0xAB, i as u64]),
            )?);
        }
        let _ = writeln!(
            md,
            "| {} | {:.4} | {:.4} | {:.3} | {:.3} | {:.3} |",
            entry.label, report.auc, report.hter, probe_accs[0], probe_accs[1], probe_accs[2]
        );
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{}",
            entry.label, report.auc, report.hter, probe_accs[0], probe_accs[1], probe_accs[2]
        );
    }
    std::fs::write(out.join("ablation.md"), md)?;
    std::fs::write(out.join("ablation.csv"), csv)?;
    config.write_resolved(out)?;
    Ok(())
}
