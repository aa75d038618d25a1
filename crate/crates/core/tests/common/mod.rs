#![allow(dead_code)]

use splitfed::data::{generate_synthetic, Dataset, PartitionMethod, PartitionSpec};
use splitfed::hydra::HydraConfig;
use splitfed::nn::{LayerStack, OptimizerConfig};
use splitfed::protocols::{
    ExperimentConfig, ModelConfig, OrderConfig, Protocol, Regularization, RunOutput,
};
use splitfed::scheduling::OrderKind;
use splitfed::split::SplitSpec;

pub fn dataset() -> Dataset {
    generate_synthetic(4, 6, 60, 2.0, 99).unwrap()
}

/// Four dominant-label clients in cyclic order, a 7-layer MLP, three rounds.
pub fn config(protocol: Protocol) -> ExperimentConfig {
    ExperimentConfig {
        protocol,
        rounds: 3,
        model: ModelConfig {
            hidden: vec![7, 6, 5],
        },
        split: SplitSpec::new(2, Some(5)),
        order: OrderConfig {
            kind: OrderKind::Cyclic,
            phi: 1,
        },
        partition: PartitionSpec {
            clients: 4,
            method: PartitionMethod::DominantLabel { p: 70.0, phi: 1 },
        },
        hydra: protocol.uses_groups().then(HydraConfig::default),
        optimizer: OptimizerConfig {
            batch_size: 16,
            ..OptimizerConfig::default()
        },
        regularization: Regularization::default(),
        holdout: 0.2,
        freeze_part1: false,
    }
}

pub fn single_group() -> HydraConfig {
    HydraConfig {
        heads: Some(1),
        label_to_group: Some(vec![0; 4]),
        ..HydraConfig::default()
    }
}

/// The named parts of a run's final model, concatenated in order.
pub fn joined(out: &RunOutput, names: &[&str]) -> LayerStack {
    let parts: Vec<&LayerStack> = names
        .iter()
        .map(|n| {
            &out.model
                .parts
                .iter()
                .find(|(name, _)| name == n)
                .unwrap_or_else(|| panic!("no part {n}"))
                .1
        })
        .collect();
    LayerStack::concat(&parts).unwrap()
}

pub fn bits(stack: &LayerStack) -> Vec<u64> {
    stack.params_flat().iter().map(|v| v.to_bits()).collect()
}
