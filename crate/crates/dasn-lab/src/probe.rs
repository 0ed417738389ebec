//! Linear probes on frozen encoder features.
//!
//! A probe is a fresh multinomial logistic regression (one dense layer +
//! softmax) trained on extracted features with a deterministic 80/20 split.
//! Probe accuracy measures how linearly decodable a label is from the
//! representation; the drop between a baseline encoder and a suppression-
//! trained encoder quantifies SiF suppression.

use std::fmt::Write as _;

use serde::Serialize;

use crate::autodiff::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::losses::sif_cls_loss;
use crate::model::{DasnModel, FactorKind};
use crate::nn::{AdamState, Binding, DenseLayer, Mlp};
use crate::rng::{mix_seed, Xoshiro256StarStar};
use crate::synthdata::FactorDataset;

/// Fixed probe training schedule.
const PROBE_EPOCHS: usize = 200;
const PROBE_LR: f64 = 0.05;
const MIN_PER_CLASS: usize = 10;

/// Encoder outputs for every sample, in dataset order. Records no
/// gradients and leaves the model untouched.
pub fn extract_features(model: &DasnModel, dataset: &FactorDataset) -> Result<Tensor> {
    if dataset.input_dim != model.config.input_dim {
        return Err(Error::Dimension(format!(
            "dataset input dim {} vs model input dim {}",
            dataset.input_dim, model.config.input_dim
        )));
    }
    let (x, _) = dataset.full_matrix()?;
    let mut tape = Tape::new();
    let mut binding = Binding::new();
    let xv = tape.leaf(x)?;
    let f = model.encode(&mut tape, &mut binding, xv)?;
    Ok(tape.value(f).clone())
}

fn rows(features: &Tensor) -> (usize, usize) {
    (features.shape()[0], features.shape()[1])
}

/// Train a linear probe and return held-out accuracy.
///
/// Deterministic: the 80/20 split and the probe initialization both derive
/// from `seed`. Requires at least 2 classes present and at least 10 samples
/// per present class.
pub fn train_probe(
    features: &Tensor,
    labels: &[usize],
    n_classes: usize,
    seed: u64,
) -> Result<f64> {
    let (n, dim) = rows(features);
    if labels.len() != n {
        return Err(Error::Dimension(format!(
            "{n} feature rows but {} labels",
            labels.len()
        )));
    }
    if n_classes < 2 {
        return Err(Error::Data("probe needs at least 2 classes".into()));
    }
    let mut counts = vec![0usize; n_classes];
    for &l in labels {
        if l >= n_classes {
            return Err(Error::Label(format!(
                "probe label {l} out of range for {n_classes} classes"
            )));
        }
        counts[l] += 1;
    }
    let present: Vec<usize> = counts.iter().filter(|&&c| c > 0).copied().collect();
    if present.len() < 2 {
        return Err(Error::Data(
            "probe labels are constant: need at least 2 classes present".into(),
        ));
    }
    if let Some(&starved) = present.iter().find(|&&c| c < MIN_PER_CLASS) {
        return Err(Error::Data(format!(
            "class starvation: a present class has only {starved} samples (minimum {MIN_PER_CLASS})"
        )));
    }

    // deterministic 80/20 split
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = Xoshiro256StarStar::seed_from_u64(mix_seed(&[seed, 0x9B0B]));
    rng.shuffle(&mut indices);
    let n_train = (n * 4) / 5;
    let (train_idx, test_idx) = indices.split_at(n_train.max(1));
    if test_idx.is_empty() {
        return Err(Error::Data("probe split left no held-out samples".into()));
    }

    let gather = |idx: &[usize]| -> (Tensor, Vec<usize>) {
        let mut data = Vec::with_capacity(idx.len() * dim);
        let mut y = Vec::with_capacity(idx.len());
        for &i in idx {
            data.extend_from_slice(&features.data()[i * dim..(i + 1) * dim]);
            y.push(labels[i]);
        }
        (Tensor::new(vec![idx.len(), dim], data).unwrap(), y)
    };
    let (train_x, train_y) = gather(train_idx);
    let (test_x, test_y) = gather(test_idx);

    // single dense layer, full-batch Adam
    let mut probe = Mlp::new(
        "probe",
        vec![DenseLayer::xavier(
            dim,
            n_classes,
            crate::nn::Activation::None,
            &mut rng,
        )],
    );
    let mut adam = AdamState::new(PROBE_LR);
    for _ in 0..PROBE_EPOCHS {
        let mut tape = Tape::new();
        let mut binding = Binding::new();
        let x = tape.leaf(train_x.clone())?;
        let logits = probe.forward(&mut tape, &mut binding, x)?;
        let loss = sif_cls_loss(&mut tape, logits, &train_y)?;
        let grads = tape.backward(loss)?;
        let grad_map = binding.collect_grads(&grads);
        adam.step(&mut probe.params_mut(), &grad_map)?;
    }

    // held-out accuracy by argmax
    let mut tape = Tape::new();
    let mut binding = Binding::new();
    let x = tape.leaf(test_x)?;
    let logits = probe.forward(&mut tape, &mut binding, x)?;
    let v = tape.value(logits);
    let mut correct = 0usize;
    for (i, &label) in test_y.iter().enumerate() {
        let row = &v.data()[i * n_classes..(i + 1) * n_classes];
        let argmax = row
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(j, _)| j)
            .unwrap();
        if argmax == label {
            correct += 1;
        }
    }
    Ok(correct as f64 / test_y.len() as f64)
}

/// Majority-class frequency of a label list (chance level for a probe).
pub fn majority_fraction(labels: &[usize]) -> f64 {
    let mut counts = std::collections::HashMap::new();
    for &l in labels {
        *counts.entry(l).or_insert(0usize) += 1;
    }
    counts.values().copied().max().unwrap_or(0) as f64 / labels.len().max(1) as f64
}

/// Probe accuracies of one encoder on one dataset.
#[derive(Debug, Clone, Serialize)]
pub struct ModelProbes {
    pub spoof_accuracy: f64,
    /// (factor name, probe accuracy, majority-class chance)
    pub factors: Vec<(String, f64, f64)>,
}

fn probe_model(
    model: &DasnModel,
    dataset: &FactorDataset,
    factors: &[FactorKind],
    seed: u64,
) -> Result<ModelProbes> {
    let features = extract_features(model, dataset)?;
    let spoof_labels: Vec<usize> = dataset.samples.iter().map(|s| s.y).collect();
    let spoof_accuracy = train_probe(&features, &spoof_labels, 2, mix_seed(&[seed, 0x50]))?;
    let mut out = Vec::new();
    for (i, &kind) in factors.iter().enumerate() {
        let labels: Vec<usize> = dataset
            .samples
            .iter()
            .map(|s| dataset.factor_label(s, kind))
            .collect();
        let acc = train_probe(
            &features,
            &labels,
            dataset.class_count(kind),
            mix_seed(&[seed, 0xFA, i as u64]),
        )?;
        out.push((
            kind.name().to_string(),
            acc,
            majority_fraction(&labels),
        ));
    }
    Ok(ModelProbes {
        spoof_accuracy,
        factors: out,
    })
}

/// Side-by-side probe report for two encoders plus (baseline - other)
/// deltas per factor.
#[derive(Debug, Clone, Serialize)]
pub struct ProbeReport {
    pub baseline: ModelProbes,
    pub dasn: ModelProbes,
    /// (factor name, baseline accuracy - dasn accuracy)
    pub deltas: Vec<(String, f64)>,
}

pub fn suppression_report(
    baseline_model: &DasnModel,
    dasn_model: &DasnModel,
    dataset: &FactorDataset,
    factors: &[FactorKind],
    seed: u64,
) -> Result<ProbeReport> {
    if baseline_model.config.input_dim != dasn_model.config.input_dim {
        return Err(Error::Config(
            "probe report needs models with matching input dims".into(),
        ));
    }
    let baseline = probe_model(baseline_model, dataset, factors, seed)?;
    let dasn = probe_model(dasn_model, dataset, factors, seed)?;
    let deltas = baseline
        .factors
        .iter()
        .zip(&dasn.factors)
        .map(|(b, d)| (b.0.clone(), b.1 - d.1))
        .collect();
    Ok(ProbeReport {
        baseline,
        dasn,
        deltas,
    })
}

impl ProbeReport {
    /// Flat CSV: one row per (model, factor) plus spoof rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("model,factor,accuracy,majority_chance\n");
        for (name, probes) in [("baseline", &self.baseline), ("dasn", &self.dasn)] {
            let _ = writeln!(out, "{name},spoof,{},", probes.spoof_accuracy);
            for (factor, acc, chance) in &probes.factors {
                let _ = writeln!(out, "{name},{factor},{acc},{chance}");
            }
        }
        out
    }
}

/// Feature dump CSV for external visualization: per row, the spoof label,
/// factor labels, then the feature vector.
pub fn features_csv(model: &DasnModel, dataset: &FactorDataset) -> Result<String> {
    let features = extract_features(model, dataset)?;
    let (_, dim) = rows(&features);
    let mut out = String::from("y,f_identity,f_environment,f_sensor,domain");
    for j in 0..dim {
        let _ = write!(out, ",z_{j}");
    }
    out.push('\n');
    for (i, s) in dataset.samples.iter().enumerate() {
        let _ = write!(
            out,
            "{},{},{},{},{}",
            s.y, s.f_identity, s.f_environment, s.f_sensor, s.domain
        );
        for v in &features.data()[i * dim..(i + 1) * dim] {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    Ok(out)
}
