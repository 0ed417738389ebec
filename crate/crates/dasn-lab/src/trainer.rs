//! The two-step alternating training loop.
//!
//! Each mini-batch runs Step 1 (backward of the step-1 objective, Adam on
//! {E, C, S}) and then Step 2 (backward of the step-2 objective, Adam on
//! {I.k, D.k}). Both steps see the same batch. Each step keeps its own
//! Adam state so the disjoint parameter groups never share moments.
//!
//! Modes: `baseline` trains {E, C} on the spoof loss alone; `ASN` adds the
//! first adversarial game (SiF suppression) without the secondary
//! classifier; `ASN_d` is ASN with the source-domain index as the single
//! pseudo-factor; `DASN` runs both adversarial games.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::losses::{step1_objective, step2_objective, LossWeights};
use crate::model::{DasnConfig, DasnModel, FactorKind};
use crate::nn::{AdamState, Binding};
use crate::rng::{mix_seed, Xoshiro256StarStar};
use crate::synthdata::{Batch, FactorDataset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrainMode {
    #[serde(rename = "baseline")]
    Baseline,
    #[serde(rename = "ASN")]
    Asn,
    #[serde(rename = "ASN_d")]
    AsnD,
    #[serde(rename = "DASN")]
    Dasn,
}

impl TrainMode {
    pub fn name(&self) -> &'static str {
        match self {
            TrainMode::Baseline => "baseline",
            TrainMode::Asn => "ASN",
            TrainMode::AsnD => "ASN_d",
            TrainMode::Dasn => "DASN",
        }
    }

    /// Whether the secondary-classifier losses participate.
    pub fn uses_secondary(&self) -> bool {
        matches!(self, TrainMode::Dasn)
    }
}

fn d_lr() -> f64 {
    1e-5
}
fn d_batch() -> usize {
    32
}
fn d_epochs() -> usize {
    60
}
fn d_seed() -> u64 {
    1
}
fn d_dim() -> usize {
    32
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: TrainMode,
    /// Active factors; `null` picks the mode default (all three SiFs for
    /// ASN/DASN, the domain pseudo-factor for ASN_d, none for baseline).
    #[serde(default)]
    pub factors: Option<Vec<FactorKind>>,
    /// Per-factor lambda overrides by factor name.
    #[serde(default)]
    pub lambda: HashMap<String, f64>,
    #[serde(default = "d_lr")]
    pub lr: f64,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_epochs")]
    pub epochs: usize,
    #[serde(default = "d_seed")]
    pub seed: u64,
    /// Checkpoint-callback cadence in epochs; 0 disables.
    #[serde(default)]
    pub eval_every: usize,
    #[serde(default = "d_dim")]
    pub feature_dim: usize,
    #[serde(default = "d_dim")]
    pub hidden_dim: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: TrainMode::Dasn,
            factors: None,
            lambda: HashMap::new(),
            lr: d_lr(),
            batch_size: d_batch(),
            epochs: d_epochs(),
            seed: d_seed(),
            eval_every: 0,
            feature_dim: d_dim(),
            hidden_dim: d_dim(),
        }
    }
}

impl TrainConfig {
    /// The factor set implied by mode and the optional explicit list.
    pub fn resolved_factors(&self) -> Result<Vec<FactorKind>> {
        let factors = match (&self.factors, self.mode) {
            (None, TrainMode::Baseline) => vec![],
            (None, TrainMode::AsnD) => vec![FactorKind::Domain],
            (None, _) => FactorKind::SIFS.to_vec(),
            (Some(f), _) => f.clone(),
        };
        match self.mode {
            TrainMode::Baseline if !factors.is_empty() => Err(Error::Config(
                "baseline mode requires an empty factor set".into(),
            )),
            TrainMode::AsnD if factors != vec![FactorKind::Domain] => Err(Error::Config(
                "ASN_d mode requires exactly the 'domain' pseudo-factor".into(),
            )),
            TrainMode::Asn | TrainMode::Dasn
                if factors.is_empty() || factors.contains(&FactorKind::Domain) =>
            {
                Err(Error::Config(format!(
                    "{} mode needs a nonempty subset of {{identity, environment, sensor}}",
                    self.mode.name()
                )))
            }
            _ => Ok(factors),
        }
    }

    pub fn loss_weights(&self) -> Result<LossWeights> {
        let mut w = LossWeights::defaults();
        for (name, &value) in &self.lambda {
            w.set(FactorKind::parse(name)?, value);
        }
        // validate nonnegativity
        LossWeights::new(
            self.resolved_factors()?
                .iter()
                .map(|&k| w.get(k).map(|v| (k, v)))
                .collect::<Result<Vec<_>>>()?,
        )?;
        Ok(w)
    }

    /// Architecture config for a given dataset.
    pub fn model_config(&self, dataset: &FactorDataset) -> Result<DasnConfig> {
        let factors = self.resolved_factors()?;
        let class_counts: Vec<usize> = factors.iter().map(|&k| dataset.class_count(k)).collect();
        let config = DasnConfig {
            input_dim: dataset.input_dim,
            feature_dim: self.feature_dim,
            hidden_dim: self.hidden_dim,
            factors,
            class_counts,
        };
        config.validate().map_err(|e| {
            Error::Config(format!("config/dataset mismatch: {e}"))
        })?;
        Ok(config)
    }
}

/// One recorded iteration of the loss history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub iteration: usize,
    pub l_cls: f64,
    /// Aligned with `LossHistory::factors`.
    pub l_sif: Vec<f64>,
    /// `None` in modes that disable the secondary losses.
    pub l_scls: Vec<Option<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossHistory {
    pub factors: Vec<FactorKind>,
    pub has_secondary: bool,
    pub rows: Vec<HistoryRow>,
}

impl LossHistory {
    /// Series of L_sif values for one factor.
    pub fn sif_series(&self, kind: FactorKind) -> Option<Vec<f64>> {
        let idx = self.factors.iter().position(|&k| k == kind)?;
        Some(self.rows.iter().map(|r| r.l_sif[idx]).collect())
    }

    /// CSV: iteration, L_cls, then per-factor L_sif.<k>, L_scls.<k>.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,L_cls");
        for k in &self.factors {
            let _ = write!(out, ",L_sif.{}", k.name());
            if self.has_secondary {
                let _ = write!(out, ",L_scls.{}", k.name());
            }
        }
        out.push('\n');
        for row in &self.rows {
            let _ = write!(out, "{},{}", row.iteration, row.l_cls);
            for i in 0..self.factors.len() {
                let _ = write!(out, ",{}", row.l_sif[i]);
                if self.has_secondary {
                    let _ = write!(out, ",{}", row.l_scls[i].unwrap_or(f64::NAN));
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Full training state: model, the two optimizers, history, and the
/// shuffling PRNG.
pub struct TrainState {
    pub config: TrainConfig,
    pub model: DasnModel,
    pub weights: LossWeights,
    pub step1_adam: AdamState,
    pub step2_adam: AdamState,
    pub epoch: usize,
    pub iteration: usize,
    pub history: LossHistory,
}

impl TrainState {
    pub fn new(config: TrainConfig, dataset: &FactorDataset) -> Result<Self> {
        if dataset.is_empty() {
            return Err(Error::Config("dataset is empty".into()));
        }
        let model_config = config.model_config(dataset)?;
        let weights = config.loss_weights()?;
        let model = DasnModel::init(model_config, config.seed)?;
        let factors = model.config.factors.clone();
        Ok(TrainState {
            weights,
            step1_adam: AdamState::new(config.lr),
            step2_adam: AdamState::new(config.lr),
            epoch: 0,
            iteration: 0,
            history: LossHistory {
                factors,
                has_secondary: config.mode.uses_secondary(),
                rows: Vec::new(),
            },
            model,
            config,
        })
    }

    /// Groups updated in Step 1 for the active mode.
    pub fn step1_groups(&self) -> Vec<String> {
        let mut groups = vec!["E".to_string(), "C".to_string()];
        if self.config.mode.uses_secondary() {
            groups.push("S".to_string());
        }
        groups
    }

    /// Groups updated in Step 2 (the discrimination heads).
    pub fn step2_groups(&self) -> Vec<String> {
        self.model
            .config
            .factors
            .iter()
            .flat_map(|k| [format!("I.{}", k.name()), format!("D.{}", k.name())])
            .collect()
    }

    fn divergence(&self, term: &str, err: Error) -> Error {
        match err {
            Error::NonFinite(_) => Error::Divergence {
                iteration: self.iteration,
                term: term.to_string(),
            },
            other => other,
        }
    }

    fn check_finite(&self, term: &str, value: f64) -> Result<f64> {
        if !value.is_finite() {
            return Err(Error::Divergence {
                iteration: self.iteration,
                term: term.to_string(),
            });
        }
        Ok(value)
    }

    /// Run Step 1 then Step 2 on one batch and append to the history.
    pub fn train_iteration(&mut self, batch: &Batch) -> Result<()> {
        let use_secondary = self.config.mode.uses_secondary();

        // Step 1: update encoder and spoof classifiers
        let mut tape = Tape::new();
        let mut binding = Binding::new();
        let obj = step1_objective(
            &self.model,
            &mut tape,
            &mut binding,
            batch,
            &self.weights,
            use_secondary,
        )
        .map_err(|e| self.divergence("step1", e))?;
        let grads = tape
            .backward(obj.root)
            .map_err(|e| self.divergence("step1", e))?;
        let grad_map = binding.collect_grads(&grads);
        let groups = self.step1_groups();
        let group_refs: Vec<&str> = groups.iter().map(String::as_str).collect();
        self.step1_adam
            .step(&mut self.model.group_params_mut(&group_refs), &grad_map)?;

        let l_cls = self.check_finite("L_cls", obj.l_cls.unwrap_or(f64::NAN))?;
        let mut l_sif = Vec::with_capacity(obj.factors.len());
        let mut l_scls = Vec::with_capacity(obj.factors.len());
        for term in &obj.factors {
            l_sif.push(self.check_finite(&format!("L_sif.{}", term.kind.name()), term.l_sif)?);
            l_scls.push(match term.l_scls {
                Some(v) => Some(self.check_finite(&format!("L_scls.{}", term.kind.name()), v)?),
                None => None,
            });
        }

        // Step 2: update discrimination heads
        if !self.model.config.factors.is_empty() {
            let mut tape = Tape::new();
            let mut binding = Binding::new();
            let obj = step2_objective(
                &self.model,
                &mut tape,
                &mut binding,
                batch,
                &self.weights,
                use_secondary,
            )
            .map_err(|e| self.divergence("step2", e))?;
            let grads = tape
                .backward(obj.root)
                .map_err(|e| self.divergence("step2", e))?;
            let grad_map = binding.collect_grads(&grads);
            let groups = self.step2_groups();
            let group_refs: Vec<&str> = groups.iter().map(String::as_str).collect();
            self.step2_adam
                .step(&mut self.model.group_params_mut(&group_refs), &grad_map)?;
        }

        self.history.rows.push(HistoryRow {
            iteration: self.iteration,
            l_cls,
            l_sif,
            l_scls,
        });
        self.iteration += 1;
        Ok(())
    }

    /// Deterministically shuffled batch index lists for one epoch.
    fn epoch_batches(&self, n: usize, epoch: usize) -> Vec<Vec<usize>> {
        let mut indices: Vec<usize> = (0..n).collect();
        let mut rng = Xoshiro256StarStar::seed_from_u64(mix_seed(&[
            self.config.seed,
            0x5801,
            epoch as u64,
        ]));
        rng.shuffle(&mut indices);
        indices
            .chunks(self.config.batch_size.max(1))
            .map(|c| c.to_vec())
            .collect()
    }

    /// Full training run over the dataset, with an optional per-epoch
    /// callback at the configured cadence.
    pub fn run(
        &mut self,
        dataset: &FactorDataset,
        mut on_epoch: Option<&mut dyn FnMut(usize, &DasnModel)>,
    ) -> Result<()> {
        let factors = self.model.config.factors.clone();
        for epoch in self.epoch..self.config.epochs {
            for batch_indices in self.epoch_batches(dataset.len(), epoch) {
                let batch = dataset.batch(&batch_indices, &factors)?;
                self.train_iteration(&batch)?;
            }
            self.epoch = epoch + 1;
            if self.config.eval_every > 0 && (epoch + 1) % self.config.eval_every == 0 {
                if let Some(cb) = on_epoch.as_deref_mut() {
                    cb(epoch + 1, &self.model);
                }
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Resumable state image (JSON). Maps are sorted so re-writing the file for
// the same state is byte-identical.
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct AdamImage {
    lr: f64,
    t: u64,
    m: std::collections::BTreeMap<String, Vec<f64>>,
    v: std::collections::BTreeMap<String, Vec<f64>>,
}

impl AdamImage {
    fn of(adam: &AdamState) -> Self {
        let (m, v, t) = adam.export_moments();
        AdamImage { lr: adam.lr, t, m, v }
    }

    fn restore(self) -> AdamState {
        let mut adam = AdamState::new(self.lr);
        adam.import_moments(self.m, self.v, self.t);
        adam
    }
}

#[derive(Serialize, Deserialize)]
struct StateImage {
    config: TrainConfig,
    model_config: DasnConfig,
    epoch: usize,
    iteration: usize,
    params: std::collections::BTreeMap<String, (Vec<usize>, Vec<f64>)>,
    step1_adam: AdamImage,
    step2_adam: AdamImage,
    history: LossHistory,
}

impl TrainState {
    /// Serialize the full training state (parameters, both optimizers,
    /// history, counters) for later resumption.
    pub fn to_json(&self) -> Result<String> {
        let params = self
            .model
            .params()
            .into_iter()
            .map(|(name, t)| (name, (t.shape().to_vec(), t.data().to_vec())))
            .collect();
        let image = StateImage {
            config: self.config.clone(),
            model_config: self.model.config.clone(),
            epoch: self.epoch,
            iteration: self.iteration,
            params,
            step1_adam: AdamImage::of(&self.step1_adam),
            step2_adam: AdamImage::of(&self.step2_adam),
            history: self.history.clone(),
        };
        Ok(serde_json::to_string(&image)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let image: StateImage = serde_json::from_str(text)?;
        let mut model = DasnModel::init(image.model_config, 0)?;
        for (name, value) in model.params_mut() {
            let (shape, data) = image.params.get(&name).ok_or_else(|| {
                Error::Format(format!("state file missing parameter {name}"))
            })?;
            if shape != value.shape() {
                return Err(Error::Format(format!(
                    "state shape {shape:?} vs model shape {:?} for {name}",
                    value.shape()
                )));
            }
            *value = crate::autodiff::Tensor::new(shape.clone(), data.clone())?;
        }
        let weights = image.config.loss_weights()?;
        Ok(TrainState {
            weights,
            step1_adam: image.step1_adam.restore(),
            step2_adam: image.step2_adam.restore(),
            epoch: image.epoch,
            iteration: image.iteration,
            history: image.history,
            model,
            config: image.config,
        })
    }
}

/// Train a model from scratch; returns the trained state (model + history).
pub fn train(config: TrainConfig, dataset: &FactorDataset) -> Result<TrainState> {
    let mut state = TrainState::new(config, dataset)?;
    state.run(dataset, None)?;
    Ok(state)
}

/// Least-squares slope of a series over indices `start..len`.
pub fn lsq_slope(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let nf = n as f64;
    let mean_x = (nf - 1.0) / 2.0;
    let mean_y = values.iter().sum::<f64>() / nf;
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, &y) in values.iter().enumerate() {
        let dx = i as f64 - mean_x;
        num += dx * (y - mean_y);
        den += dx * dx;
    }
    num / den
}

/// Per-factor trend of the SiF losses: least-squares slope over window
/// means plus the fraction of consecutive window-mean increases.
#[derive(Debug, Clone, Serialize)]
pub struct TrendSummary {
    pub factor: String,
    pub slope: f64,
    pub monotonicity: f64,
}

pub fn divergence_report(history: &LossHistory, n_windows: usize) -> Result<Vec<TrendSummary>> {
    let n_windows = n_windows.max(2);
    if history.rows.len() < n_windows {
        return Err(Error::Data(format!(
            "history of {} rows is shorter than {n_windows} windows",
            history.rows.len()
        )));
    }
    let mut out = Vec::new();
    for &kind in &history.factors {
        let series = history.sif_series(kind).unwrap();
        let window = series.len() / n_windows;
        let means: Vec<f64> = series
            .chunks(window.max(1))
            .map(|c| c.iter().sum::<f64>() / c.len() as f64)
            .collect();
        let ups = means.windows(2).filter(|w| w[1] > w[0]).count();
        out.push(TrendSummary {
            factor: kind.name().to_string(),
            slope: lsq_slope(&means),
            monotonicity: if means.len() > 1 {
                ups as f64 / (means.len() - 1) as f64
            } else {
                0.0
            },
        });
    }
    Ok(out)
}
