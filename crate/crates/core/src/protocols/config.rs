use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{PartitionMethod, PartitionSpec};
use crate::error::{Error, Result};
use crate::hydra::HydraConfig;
use crate::nn::OptimizerConfig;
use crate::scheduling::OrderKind;
use crate::split::SplitSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    /// SplitFedV2: parallel part-1 at clients, one sequential part-2 at the server.
    Sfl,
    /// SFL with a shared part-2a and per-group part-2b heads.
    SflHydra,
    /// Per-client replicas of both parts, both averaged every round.
    #[serde(rename = "splitfed_v1")]
    SplitFedV1,
    /// Plain FedAvg on the unsplit model; reference for SplitFedV1.
    Fl,
    /// Per-client part-1 kept local, part-2 averaged.
    #[serde(rename = "splitfed_v3")]
    SplitFedV3,
    /// Sequential relay of a single part-1 from client to client.
    #[serde(rename = "splitnn")]
    SplitNn,
    /// FL with a shared body and one head per client group.
    MultiheadFl,
}

impl Protocol {
    pub fn uses_groups(self) -> bool {
        matches!(self, Protocol::SflHydra | Protocol::MultiheadFl)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Hidden layer widths; each hidden layer is a Dense followed by a ReLU.
    pub hidden: Vec<usize>,
}

impl ModelConfig {
    pub fn layer_count(&self) -> usize {
        2 * self.hidden.len() + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrderConfig {
    pub kind: OrderKind,
    #[serde(default = "one")]
    pub phi: usize,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum L2Mode {
    #[default]
    None,
    /// Penalise server-side (part-2) weights only.
    Part2Only,
    FullModel,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Regularization {
    #[serde(default)]
    pub mode: L2Mode,
    #[serde(default)]
    pub lambda: f64,
}

impl Regularization {
    /// `(part-1 lambda, part-2 lambda)`.
    pub fn lambdas(&self) -> (f64, f64) {
        match self.mode {
            L2Mode::None => (0.0, 0.0),
            L2Mode::Part2Only => (0.0, self.lambda),
            L2Mode::FullModel => (self.lambda, self.lambda),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub protocol: Protocol,
    #[serde(default = "default_rounds")]
    pub rounds: usize,
    pub model: ModelConfig,
    pub split: SplitSpec,
    pub order: OrderConfig,
    pub partition: PartitionSpec,
    #[serde(default)]
    pub hydra: Option<HydraConfig>,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub regularization: Regularization,
    /// Fraction of each label held out for evaluation.
    #[serde(default = "default_holdout")]
    pub holdout: f64,
    /// Keep part-1 at its initial weights (clients skip their update).
    #[serde(default)]
    pub freeze_part1: bool,
}

fn default_rounds() -> usize {
    100
}

fn default_holdout() -> f64 {
    0.2
}

fn field(name: &str, e: Error) -> Error {
    Error::InvalidParam(format!("{name}: {e}"))
}

impl ExperimentConfig {
    /// Checks every cross-field constraint that can be known before data is touched.
    pub fn validate(&self, num_labels: usize) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::InvalidParam("rounds: must be at least 1".into()));
        }
        if self.model.hidden.contains(&0) {
            return Err(Error::InvalidParam("model.hidden: widths must be positive".into()));
        }
        self.split
            .validate(self.model.layer_count())
            .map_err(|e| field("split", e))?;
        self.partition
            .validate(num_labels)
            .map_err(|e| field("partition", e))?;
        self.optimizer.validate().map_err(|e| field("optimizer", e))?;
        let reg = self.regularization;
        if !(reg.lambda >= 0.0 && reg.lambda.is_finite()) {
            return Err(Error::InvalidParam(format!(
                "regularization.lambda: must be >= 0, got {}",
                reg.lambda
            )));
        }
        if !(self.holdout > 0.0 && self.holdout < 1.0) {
            return Err(Error::InvalidParam(format!(
                "holdout: must lie in (0, 1), got {}",
                self.holdout
            )));
        }
        if self.order.kind.is_cyclic() {
            if self.order.phi == 0 || self.order.phi * num_labels != self.partition.clients {
                return Err(Error::InvalidParam(format!(
                    "order.phi: cyclic order needs phi * L == clients, got {} * {num_labels} != {}",
                    self.order.phi, self.partition.clients
                )));
            }
            match self.partition.method {
                PartitionMethod::DominantLabel { phi, .. } if phi != self.order.phi => {
                    return Err(Error::InvalidParam(format!(
                        "order.phi: {} differs from partition phi {phi}",
                        self.order.phi
                    )));
                }
                PartitionMethod::Iid | PartitionMethod::Dirichlet { .. } => {
                    return Err(Error::InvalidParam(
                        "order.kind: cyclic orders need a partition with dominant labels".into(),
                    ));
                }
                _ => {}
            }
        }
        if self.protocol.uses_groups() {
            if self.split.cut2.is_none() {
                return Err(Error::InvalidParam(
                    "split.cut2: required by grouped protocols".into(),
                ));
            }
            let hydra = self.hydra.clone().unwrap_or_default();
            hydra.validate(num_labels).map_err(|e| field("hydra", e))?;
            if self.partition.clients < hydra.head_count(num_labels) {
                return Err(Error::InvalidParam(format!(
                    "hydra.heads: {} heads for {} clients",
                    hydra.head_count(num_labels),
                    self.partition.clients
                )));
            }
        }
        Ok(())
    }

    pub fn hydra_config(&self) -> HydraConfig {
        self.hydra.clone().unwrap_or_default()
    }

    /// Stable digest over every field of the configuration.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serialises");
        let digest = Sha256::digest(text.as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn base() -> ExperimentConfig {
        ExperimentConfig {
            protocol: Protocol::Sfl,
            rounds: 3,
            model: ModelConfig { hidden: vec![8, 8] },
            split: SplitSpec::new(1, Some(4)),
            order: OrderConfig {
                kind: OrderKind::Cyclic,
                phi: 1,
            },
            partition: PartitionSpec {
                clients: 4,
                method: PartitionMethod::DominantLabel { p: 80.0, phi: 1 },
            },
            hydra: None,
            optimizer: OptimizerConfig::default(),
            regularization: Regularization::default(),
            holdout: 0.2,
            freeze_part1: false,
        }
    }

    #[test]
    fn valid_base() {
        base().validate(4).unwrap();
    }

    #[test]
    fn phi_mismatch_rejected_with_field_name() {
        let mut c = base();
        c.partition.clients = 6;
        c.partition.method = PartitionMethod::DominantLabel { p: 80.0, phi: 1 };
        let msg = c.validate(4).unwrap_err().to_string();
        assert!(msg.contains("partition") || msg.contains("order.phi"), "{msg}");
    }

    #[test]
    fn cyclic_on_iid_rejected() {
        let mut c = base();
        c.partition.method = PartitionMethod::Iid;
        assert!(c.validate(4).is_err());
        c.order.kind = OrderKind::Random;
        assert!(c.validate(4).is_ok());
    }

    #[test]
    fn grouped_protocol_needs_cut2() {
        let mut c = base();
        c.protocol = Protocol::SflHydra;
        c.split.cut2 = None;
        assert!(c.validate(4).is_err());
    }

    #[test]
    fn hash_tracks_every_field() {
        let b = base();
        let mut variants = Vec::new();
        let mut push = |f: &dyn Fn(&mut ExperimentConfig)| {
            let mut c = base();
            f(&mut c);
            variants.push(c);
        };
        push(&|c| c.protocol = Protocol::SflHydra);
        push(&|c| c.rounds = 4);
        push(&|c| c.model.hidden = vec![8, 9]);
        push(&|c| c.split.cut1 = 2);
        push(&|c| c.split.cut2 = None);
        push(&|c| c.order.kind = OrderKind::CyclicAndReverse);
        push(&|c| c.order.phi = 2);
        push(&|c| c.partition.clients = 5);
        push(&|c| c.partition.method = PartitionMethod::DominantLabel { p: 60.0, phi: 1 });
        push(&|c| c.hydra = Some(HydraConfig::default()));
        push(&|c| c.optimizer.learning_rate = 0.1);
        push(&|c| c.optimizer.decay = 0.99);
        push(&|c| c.optimizer.min_lr = 0.001);
        push(&|c| c.optimizer.batch_size = 32);
        push(&|c| c.regularization.mode = L2Mode::FullModel);
        push(&|c| c.regularization.lambda = 1e-4);
        push(&|c| c.holdout = 0.25);
        push(&|c| c.freeze_part1 = true);
        let mut hashes: Vec<String> = variants.iter().map(ExperimentConfig::hash).collect();
        hashes.push(b.hash());
        let n = hashes.len();
        hashes.sort();
        hashes.dedup();
        assert_eq!(hashes.len(), n);
        assert_eq!(base().hash(), b.hash());
    }
}
