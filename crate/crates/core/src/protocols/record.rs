use serde::{Deserialize, Serialize};

use super::config::Protocol;
use crate::nn::LayerStack;
use crate::scheduling::OrderKind;

/// Per-round accuracies of one run plus the schedule metadata metrics need.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub protocol: Protocol,
    pub seed: u64,
    pub config_hash: String,
    pub rounds: usize,
    pub labels: usize,
    /// `per_label_acc[r][l]`: accuracy of label `l` after round `r`.
    pub per_label_acc: Vec<Vec<f64>>,
    pub global_acc: Vec<f64>,
    pub order: OrderKind,
    pub label_order: Vec<usize>,
    /// Cycle position of each label in round 0 (cyclic orders only).
    pub position_of_label: Option<Vec<usize>>,
    /// Where the final model was written, when it was.
    #[serde(default)]
    pub checkpoint: Option<String>,
}

impl RunRecord {
    /// Label processed at cycle position `position` in round `round`.
    pub fn label_at_position(&self, round: usize, position: usize) -> Option<usize> {
        let l = self.label_order.len();
        match self.order {
            OrderKind::Random => None,
            OrderKind::CyclicAndReverse if round % 2 == 1 => {
                (position < l).then(|| self.label_order[l - 1 - position])
            }
            _ => self.label_order.get(position).copied(),
        }
    }
}

/// Named model parts at the end of a run, e.g. `part1`, `part2`, `head/3`.
#[derive(Debug, Clone, PartialEq)]
pub struct FinalModel {
    pub parts: Vec<(String, LayerStack)>,
}
