//! The suppression-network architecture: encoder E, spoof classifier C,
//! one shared secondary spoof classifier S, and per-factor discrimination
//! heads (intermediate layer I.k plus discriminator D.k).
//!
//! Inference uses only E and C; the heads and S exist for training.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, VarId};
use crate::error::{Error, Result};
use crate::nn::{snapshot, Activation, Binding, DenseLayer, Mlp};
use crate::rng::Xoshiro256StarStar;

/// A spoof-irrelevant factor the network can be asked to suppress.
/// `Domain` is the pseudo-factor whose classes are source-domain indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FactorKind {
    Identity,
    Environment,
    Sensor,
    Domain,
}

impl FactorKind {
    pub fn name(&self) -> &'static str {
        match self {
            FactorKind::Identity => "identity",
            FactorKind::Environment => "environment",
            FactorKind::Sensor => "sensor",
            FactorKind::Domain => "domain",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(FactorKind::Identity),
            "environment" => Ok(FactorKind::Environment),
            "sensor" => Ok(FactorKind::Sensor),
            "domain" => Ok(FactorKind::Domain),
            other => Err(Error::Config(format!("unknown factor '{other}'"))),
        }
    }

    /// The three real spoof-irrelevant factors.
    pub const SIFS: [FactorKind; 3] = [
        FactorKind::Identity,
        FactorKind::Environment,
        FactorKind::Sensor,
    ];
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DasnConfig {
    pub input_dim: usize,
    pub feature_dim: usize,
    pub hidden_dim: usize,
    /// Active factors in a fixed order. Empty for the plain baseline.
    pub factors: Vec<FactorKind>,
    /// Number of classes per active factor, aligned with `factors`.
    pub class_counts: Vec<usize>,
}

impl DasnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.factors.len() != self.class_counts.len() {
            return Err(Error::Config(format!(
                "{} factors but {} class counts",
                self.factors.len(),
                self.class_counts.len()
            )));
        }
        for (k, &n) in self.factors.iter().zip(&self.class_counts) {
            if n < 2 {
                return Err(Error::Config(format!(
                    "factor {} needs at least 2 classes, got {n}",
                    k.name()
                )));
            }
        }
        let mut seen = std::collections::HashSet::new();
        for k in &self.factors {
            if !seen.insert(*k) {
                return Err(Error::Config(format!("duplicate factor {}", k.name())));
            }
        }
        Ok(())
    }
}

/// One discrimination head: SiF-aware intermediate layer and discriminator.
#[derive(Debug, Clone)]
pub struct FactorHead {
    pub kind: FactorKind,
    pub intermediate: Mlp, // I.<k>: feature_dim -> feature_dim, one layer + relu
    pub discriminator: Mlp, // D.<k>: feature_dim -> hidden -> N^k
}

#[derive(Debug, Clone)]
pub struct DasnModel {
    pub config: DasnConfig,
    pub encoder: Mlp,        // E
    pub spoof_head: Mlp,     // C
    pub secondary_head: Mlp, // S (single, shared across all factors)
    pub heads: Vec<FactorHead>,
}

pub const SPOOF_CLASSES: usize = 2;
/// Index of the genuine class in the two-logit spoof heads. The spoof label
/// y=1 marks a spoof sample and indexes the softmax directly, so class 0 is
/// the genuine class. Only inference cares about this constant.
pub const GENUINE_CLASS: usize = 0;

impl DasnModel {
    /// Xavier-initialized model; all randomness comes from `seed`.
    pub fn init(config: DasnConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = Xoshiro256StarStar::seed_from_u64(crate::rng::mix_seed(&[seed, 0xA0DE]));
        let encoder = Mlp::new(
            "E",
            vec![
                DenseLayer::xavier(config.input_dim, config.hidden_dim, Activation::Relu, &mut rng),
                DenseLayer::xavier(config.hidden_dim, config.feature_dim, Activation::Relu, &mut rng),
            ],
        );
        let spoof_head = Mlp::new(
            "C",
            vec![DenseLayer::xavier(
                config.feature_dim,
                SPOOF_CLASSES,
                Activation::None,
                &mut rng,
            )],
        );
        let secondary_head = Mlp::new(
            "S",
            vec![DenseLayer::xavier(
                config.feature_dim,
                SPOOF_CLASSES,
                Activation::None,
                &mut rng,
            )],
        );
        let mut heads = Vec::new();
        for (kind, &n_classes) in config.factors.iter().zip(&config.class_counts) {
            let intermediate = Mlp::new(
                format!("I.{}", kind.name()),
                vec![DenseLayer::xavier(
                    config.feature_dim,
                    config.feature_dim,
                    Activation::Relu,
                    &mut rng,
                )],
            );
            let discriminator = Mlp::new(
                format!("D.{}", kind.name()),
                vec![
                    DenseLayer::xavier(config.feature_dim, config.hidden_dim, Activation::Relu, &mut rng),
                    DenseLayer::xavier(config.hidden_dim, n_classes, Activation::None, &mut rng),
                ],
            );
            heads.push(FactorHead { kind: *kind, intermediate, discriminator });
        }
        Ok(DasnModel { config, encoder, spoof_head, secondary_head, heads })
    }

    fn head(&self, kind: FactorKind) -> Result<&FactorHead> {
        self.heads.iter().find(|h| h.kind == kind).ok_or_else(|| {
            Error::Config(format!("factor {} is not active in this model", kind.name()))
        })
    }

    /// E(x).
    pub fn encode(&self, tape: &mut Tape, binding: &mut Binding, x: VarId) -> Result<VarId> {
        self.encoder.forward(tape, binding, x)
    }

    /// C(features) logits.
    pub fn classify_spoof(&self, tape: &mut Tape, binding: &mut Binding, features: VarId) -> Result<VarId> {
        self.spoof_head.forward(tape, binding, features)
    }

    /// I^k then D^k on the features. With `reverse_into_encoder` a GRL sits
    /// between the encoder output and the head, so encoder gradients from
    /// this path arrive negated. Returns (intermediate, sif_logits).
    pub fn head_forward(
        &self,
        tape: &mut Tape,
        binding: &mut Binding,
        kind: FactorKind,
        features: VarId,
        reverse_into_encoder: bool,
    ) -> Result<(VarId, VarId)> {
        let head = self.head(kind)?;
        let input = if reverse_into_encoder {
            tape.grl(features)?
        } else {
            features
        };
        let intermediate = head.intermediate.forward(tape, binding, input)?;
        let sif_logits = head.discriminator.forward(tape, binding, intermediate)?;
        Ok((intermediate, sif_logits))
    }

    /// S(I^k(features)) logits. With `reverse_into_intermediate` a GRL sits
    /// between I^k and S, so the intermediate layer receives negated
    /// gradients from this path.
    pub fn secondary_classify(
        &self,
        tape: &mut Tape,
        binding: &mut Binding,
        kind: FactorKind,
        features: VarId,
        reverse_into_intermediate: bool,
    ) -> Result<VarId> {
        let head = self.head(kind)?;
        let intermediate = head.intermediate.forward(tape, binding, features)?;
        let s_input = if reverse_into_intermediate {
            tape.grl(intermediate)?
        } else {
            intermediate
        };
        self.secondary_head.forward(tape, binding, s_input)
    }

    /// Genuine-class probability per row: softmax(C(E(x)))[GENUINE_CLASS].
    /// Touches no head and no secondary classifier.
    pub fn infer(&self, x: &Tensor) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let mut binding = Binding::new();
        let xv = tape.leaf(x.clone())?;
        let features = self.encode(&mut tape, &mut binding, xv)?;
        let logits = self.classify_spoof(&mut tape, &mut binding, features)?;
        let probs = tape.softmax(logits)?;
        let v = tape.value(probs);
        let rows = v.shape()[0];
        Ok((0..rows)
            .map(|i| v.data()[i * SPOOF_CLASSES + GENUINE_CLASS])
            .collect())
    }

    /// All parameters in a fixed order: E, C, S, then per-factor I.k, D.k.
    pub fn params(&self) -> Vec<(String, &Tensor)> {
        let mut out = self.encoder.params();
        out.extend(self.spoof_head.params());
        out.extend(self.secondary_head.params());
        for head in &self.heads {
            out.extend(head.intermediate.params());
            out.extend(head.discriminator.params());
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = self.encoder.params_mut();
        out.extend(self.spoof_head.params_mut());
        out.extend(self.secondary_head.params_mut());
        for head in &mut self.heads {
            out.extend(head.intermediate.params_mut());
            out.extend(head.discriminator.params_mut());
        }
        out
    }

    /// Group name ("E", "C", "S", "I.<k>", "D.<k>") of a parameter name.
    pub fn group_of(param_name: &str) -> &str {
        let mut parts = param_name.splitn(3, '.');
        let first = parts.next().unwrap_or("");
        match first {
            "I" | "D" => {
                let second = parts.next().unwrap_or("");
                &param_name[..first.len() + 1 + second.len()]
            }
            _ => first,
        }
    }

    /// Parameters restricted to the given groups, in fixed order.
    pub fn group_params(&self, groups: &[&str]) -> Vec<(String, &Tensor)> {
        self.params()
            .into_iter()
            .filter(|(name, _)| groups.contains(&Self::group_of(name)))
            .collect()
    }

    pub fn group_params_mut(&mut self, groups: &[&str]) -> Vec<(String, &mut Tensor)> {
        self.params_mut()
            .into_iter()
            .filter(|(name, _)| groups.contains(&Self::group_of(name)))
            .collect()
    }

    /// Byte image of the given groups (used by freeze checks and tests).
    pub fn snapshot_groups(&self, groups: &[&str]) -> Vec<u8> {
        snapshot(&self.group_params(groups))
    }

    /// Names of all groups present in the model.
    pub fn group_names(&self) -> Vec<String> {
        let mut out = vec!["E".to_string(), "C".to_string(), "S".to_string()];
        for head in &self.heads {
            out.push(format!("I.{}", head.kind.name()));
            out.push(format!("D.{}", head.kind.name()));
        }
        out
    }

    /// Save the full parameter set to a checkpoint file, prefixed with a
    /// JSON config line so the architecture can be rebuilt on load.
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let header = serde_json::to_string(&self.config)?;
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&(header.len() as u32).to_le_bytes());
        bytes.extend_from_slice(header.as_bytes());
        bytes.extend_from_slice(&snapshot(&self.params()));
        std::fs::write(path, bytes)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        if bytes.len() < 4 {
            return Err(Error::Format("checkpoint file too short".into()));
        }
        let header_len = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
        if bytes.len() < 4 + header_len {
            return Err(Error::Format("checkpoint header truncated".into()));
        }
        let config: DasnConfig = serde_json::from_slice(&bytes[4..4 + header_len])?;
        let mut model = DasnModel::init(config, 0)?;
        crate::nn::restore(&bytes[4 + header_len..], &mut model.params_mut())?;
        Ok(model)
    }
}
