//! Server processing order of clients within a round.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::ClientShard;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderKind {
    /// Fresh uniform permutation every round (first-come-first-served proxy).
    Random,
    /// Label blocks in a fixed order, identical every round.
    Cyclic,
    /// The cyclic sequence on even rounds and its exact reverse on odd rounds.
    CyclicAndReverse,
}

impl OrderKind {
    pub fn is_cyclic(self) -> bool {
        !matches!(self, OrderKind::Random)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrderPolicy {
    pub kind: OrderKind,
    /// Clients per dominant label.
    pub phi: usize,
    /// Label cycle, a permutation of `0..L` drawn once per experiment.
    pub label_order: Vec<usize>,
}

impl OrderPolicy {
    pub fn new(kind: OrderKind, phi: usize, label_order: Vec<usize>) -> Result<Self> {
        let mut sorted = label_order.clone();
        sorted.sort_unstable();
        if sorted.iter().enumerate().any(|(i, &l)| i != l) {
            return Err(Error::Schedule(format!(
                "label order {label_order:?} is not a permutation"
            )));
        }
        if kind.is_cyclic() && phi == 0 {
            return Err(Error::Schedule("phi must be positive".into()));
        }
        Ok(Self {
            kind,
            phi,
            label_order,
        })
    }

    pub fn random_label_order<R: Rng + ?Sized>(labels: usize, rng: &mut R) -> Vec<usize> {
        let mut order: Vec<usize> = (0..labels).collect();
        order.shuffle(rng);
        order
    }

    /// Label whose clients occupy cycle position `position` in round `round`,
    /// for cyclic kinds.
    pub fn label_at_position(&self, round: usize, position: usize) -> Option<usize> {
        let l = self.label_order.len();
        match self.kind {
            OrderKind::Random => None,
            OrderKind::Cyclic => self.label_order.get(position).copied(),
            OrderKind::CyclicAndReverse if round.is_multiple_of(2) => self.label_order.get(position).copied(),
            OrderKind::CyclicAndReverse => position
                .checked_add(1)
                .filter(|&p| p <= l)
                .map(|p| self.label_order[l - p]),
        }
    }
}

/// Who is scheduled: a client and the label it is dominant in, if any.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Participant {
    pub client_id: usize,
    pub dominant_label: Option<usize>,
}

impl From<&ClientShard> for Participant {
    fn from(s: &ClientShard) -> Self {
        Self {
            client_id: s.client_id,
            dominant_label: s.dominant_label,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundSchedule {
    pub round: usize,
    /// Client ids in processing order.
    pub clients: Vec<usize>,
    /// `position_of_label[l]` is the cycle position of label `l` this round.
    pub position_of_label: Option<Vec<usize>>,
}

pub fn build_schedule<R: Rng + ?Sized>(
    policy: &OrderPolicy,
    round: usize,
    clients: &[Participant],
    rng: &mut R,
) -> Result<RoundSchedule> {
    let mut ids: Vec<usize> = clients.iter().map(|c| c.client_id).collect();
    ids.sort_unstable();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Schedule("duplicate client ids".into()));
    }
    if policy.kind == OrderKind::Random {
        ids.shuffle(rng);
        return Ok(RoundSchedule {
            round,
            clients: ids,
            position_of_label: None,
        });
    }

    let labels = policy.label_order.len();
    let mut blocks: Vec<Vec<usize>> = vec![Vec::new(); labels];
    for c in clients {
        let label = c.dominant_label.ok_or_else(|| {
            Error::Schedule(format!(
                "cyclic order needs dominant labels; client {} has none",
                c.client_id
            ))
        })?;
        blocks
            .get_mut(label)
            .ok_or_else(|| Error::Schedule(format!("dominant label {label} out of range")))?
            .push(c.client_id);
    }
    for (label, block) in blocks.iter_mut().enumerate() {
        if block.len() != policy.phi {
            return Err(Error::Schedule(format!(
                "label {label} has {} dominant clients, cyclic order needs phi={}",
                block.len(),
                policy.phi
            )));
        }
        block.sort_unstable();
    }
    let mut sequence: Vec<usize> = policy
        .label_order
        .iter()
        .flat_map(|&l| blocks[l].iter().copied())
        .collect();
    let reversed = policy.kind == OrderKind::CyclicAndReverse && round % 2 == 1;
    if reversed {
        sequence.reverse();
    }
    let mut position_of_label = vec![0; labels];
    for k in 0..labels {
        let label = policy.label_at_position(round, k).expect("k < L");
        position_of_label[label] = k;
    }
    Ok(RoundSchedule {
        round,
        clients: sequence,
        position_of_label: Some(position_of_label),
    })
}
