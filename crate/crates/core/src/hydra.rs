//! Server-side multi-head machinery: grouping clients by label statistics,
//! routing their activations to per-group heads, and folding the heads back
//! into one at the end of each round.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::ClientShard;
use crate::error::{Error, Result};
use crate::nn::LayerStack;
use crate::split::{fedavg, ActivationPacket, Replica};

/// How head replicas are weighted when they are averaged.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadWeighting {
    /// By the number of samples routed to each head this round.
    #[default]
    Samples,
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HydraConfig {
    /// Number of heads `G`; defaults to the number of labels.
    #[serde(default)]
    pub heads: Option<usize>,
    /// Optional label -> group map for `G < L`.
    #[serde(default)]
    pub label_to_group: Option<Vec<usize>>,
    #[serde(default)]
    pub head_weighting: HeadWeighting,
}

impl Default for HydraConfig {
    fn default() -> Self {
        Self {
            heads: None,
            label_to_group: None,
            head_weighting: HeadWeighting::Samples,
        }
    }
}

impl HydraConfig {
    pub fn head_count(&self, labels: usize) -> usize {
        self.heads
            .or_else(|| {
                self.label_to_group
                    .as_ref()
                    .map(|m| m.iter().max().map_or(0, |g| g + 1))
            })
            .unwrap_or(labels)
    }

    pub fn validate(&self, labels: usize) -> Result<()> {
        let g = self.head_count(labels);
        if g == 0 || g > labels {
            return Err(Error::Grouping(format!("need 1 <= G <= L, got G={g}, L={labels}")));
        }
        match &self.label_to_group {
            Some(map) => {
                if map.len() != labels {
                    return Err(Error::Grouping(format!(
                        "label_to_group has {} entries for {labels} labels",
                        map.len()
                    )));
                }
                let mut hit = vec![false; g];
                for &grp in map {
                    *hit.get_mut(grp).ok_or_else(|| {
                        Error::Grouping(format!("group {grp} out of range for G={g}"))
                    })? = true;
                }
                if hit.contains(&false) {
                    return Err(Error::Grouping("label_to_group is not onto 0..G".into()));
                }
            }
            None if g != labels => {
                return Err(Error::Grouping(format!(
                    "G={g} < L={labels} requires label_to_group"
                )));
            }
            None => {}
        }
        Ok(())
    }

    /// Label -> group map. Without an explicit map, group `g` is associated
    /// with label `label_order[g]`.
    pub fn resolve_label_to_group(&self, label_order: &[usize]) -> Result<Vec<usize>> {
        self.validate(label_order.len())?;
        Ok(match &self.label_to_group {
            Some(map) => map.clone(),
            None => {
                let mut map = vec![0; label_order.len()];
                for (g, &l) in label_order.iter().enumerate() {
                    map[l] = g;
                }
                map
            }
        })
    }
}

/// A client's per-group sample counts (its label histogram collapsed onto groups).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupStats {
    pub client_id: usize,
    pub counts: Vec<u64>,
}

pub fn group_stats(shards: &[ClientShard], label_to_group: &[usize], groups: usize) -> Vec<GroupStats> {
    shards
        .iter()
        .map(|s| {
            let mut counts = vec![0u64; groups];
            for (l, &k) in s.histogram.iter().enumerate() {
                counts[label_to_group[l]] += k as u64;
            }
            GroupStats {
                client_id: s.client_id,
                counts,
            }
        })
        .collect()
}

/// Client -> group mapping; each client belongs to exactly one group.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "AssignmentRepr", try_from = "AssignmentRepr")]
pub struct GroupAssignment {
    groups: usize,
    // Sorted, distinct client ids and their groups.
    ids: Vec<usize>,
    group: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct AssignmentRepr {
    groups: usize,
    group_of: BTreeMap<usize, usize>,
}

impl From<GroupAssignment> for AssignmentRepr {
    fn from(a: GroupAssignment) -> Self {
        Self {
            groups: a.groups,
            group_of: a.mapping().collect(),
        }
    }
}

impl TryFrom<AssignmentRepr> for GroupAssignment {
    type Error = Error;

    fn try_from(r: AssignmentRepr) -> Result<Self> {
        Self::new(r.groups, r.group_of)
    }
}

impl GroupAssignment {
    pub fn new(groups: usize, group_of: BTreeMap<usize, usize>) -> Result<Self> {
        let (ids, group) = group_of.into_iter().unzip();
        Self::from_sorted(groups, ids, group)
    }

    fn from_sorted(groups: usize, ids: Vec<usize>, group: Vec<usize>) -> Result<Self> {
        debug_assert!(ids.windows(2).all(|w| w[0] < w[1]));
        if let Some((c, g)) = ids.iter().zip(&group).find(|(_, &g)| g >= groups) {
            return Err(Error::Grouping(format!("client {c} in group {g} of {groups}")));
        }
        Ok(Self { groups, ids, group })
    }

    pub fn groups(&self) -> usize {
        self.groups
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn group_of(&self, client_id: usize) -> Option<usize> {
        self.ids.binary_search(&client_id).ok().map(|i| self.group[i])
    }

    /// `(client_id, group)` pairs in ascending client id.
    pub fn mapping(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.ids.iter().copied().zip(self.group.iter().copied())
    }

    /// Binary `C x G` matrix, rows in ascending client id.
    pub fn u(&self) -> Vec<Vec<u8>> {
        self.group
            .iter()
            .map(|&g| (0..self.groups).map(|k| u8::from(k == g)).collect())
            .collect()
    }

    pub fn group_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.groups];
        for &g in &self.group {
            sizes[g] += 1;
        }
        sizes
    }

    pub fn members(&self, group: usize) -> Vec<usize> {
        self.mapping().filter(|&(_, g)| g == group).map(|(c, _)| c).collect()
    }
}

/// Greedy balanced assignment: groups take turns, each claiming the
/// unassigned client with the most samples of its associated label(s).
/// Ties go to the lowest client id.
pub fn assign_groups(stats: &[GroupStats], groups: usize) -> Result<GroupAssignment> {
    let c = stats.len();
    if groups == 0 {
        return Err(Error::Grouping("at least one group is required".into()));
    }
    if c < groups {
        return Err(Error::Grouping(format!("{c} clients cannot fill {groups} groups")));
    }
    if let Some(s) = stats.iter().find(|s| s.counts.len() != groups) {
        return Err(Error::Grouping(format!(
            "client {} has {} group counts, expected {groups}",
            s.client_id,
            s.counts.len()
        )));
    }
    let mut by_id: Vec<u32> = (0..c as u32).collect();
    if !stats.windows(2).all(|w| w[0].client_id < w[1].client_id) {
        by_id.sort_unstable_by_key(|&i| stats[i as usize].client_id);
        if let Some(w) = by_id
            .windows(2)
            .find(|w| stats[w[0] as usize].client_id == stats[w[1] as usize].client_id)
        {
            return Err(Error::Grouping(format!(
                "duplicate client id {}",
                stats[w[0] as usize].client_id
            )));
        }
    }
    // Group-major copy of the counts, in id order.
    let mut columns = vec![0u64; c * groups];
    for (pos, &i) in by_id.iter().enumerate() {
        for (g, &n) in stats[i as usize].counts.iter().enumerate() {
            columns[g * c + pos] = n;
        }
    }
    // Each group walks its clients in (count desc, id asc) order, skipping
    // clients already claimed, which makes every pick the argmax over the
    // unassigned set. Queue entries are positions in id order.
    let queues: Vec<Vec<u32>> = columns.chunks(c).map(radix_order_desc).collect();
    let mut cursor = vec![0usize; groups];
    let mut taken = vec![0u64; c.div_ceil(64)];
    let mut group_at = vec![0usize; c];
    let mut assigned = 0;
    'passes: loop {
        for (g, queue) in queues.iter().enumerate() {
            if assigned == c {
                break 'passes;
            }
            let pos = loop {
                let pos = queue[cursor[g]] as usize;
                if taken[pos / 64] & (1 << (pos % 64)) == 0 {
                    break pos;
                }
                cursor[g] += 1;
            };
            taken[pos / 64] |= 1 << (pos % 64);
            group_at[pos] = g;
            assigned += 1;
        }
    }
    let ids = by_id.iter().map(|&i| stats[i as usize].client_id).collect();
    GroupAssignment::from_sorted(groups, ids, group_at)
}

/// Positions of `keys` ordered by descending key, ties by position.
/// Stable LSD radix sort, 8 bits per pass.
fn radix_order_desc(keys: &[u64]) -> Vec<u32> {
    let max = keys.iter().copied().max().unwrap_or(0);
    let mut cur: Vec<u32> = (0..keys.len() as u32).collect();
    let mut next = vec![0u32; keys.len()];
    let mut shift = 0;
    // Sorting `max - key` ascending keeps the pass count bounded by `max`.
    while shift < 64 && (max >> shift) > 0 {
        let digit = |p: u32| (((max - keys[p as usize]) >> shift) & 0xff) as usize;
        let mut offsets = [0usize; 256];
        for &p in &cur {
            offsets[digit(p)] += 1;
        }
        let mut total = 0;
        for o in offsets.iter_mut() {
            (*o, total) = (total, total + *o);
        }
        for &p in &cur {
            let d = digit(p);
            next[offsets[d]] = p;
            offsets[d] += 1;
        }
        std::mem::swap(&mut cur, &mut next);
        shift += 8;
    }
    cur
}

/// Worst group's mean count of its associated label(s).
pub fn objective_value(assignment: &GroupAssignment, stats: &[GroupStats]) -> Result<f64> {
    let g = assignment.groups();
    let mut sums = vec![0u64; g];
    let mut sizes = vec![0u64; g];
    for s in stats {
        let grp = assignment
            .group_of(s.client_id)
            .ok_or(Error::UnknownClient(s.client_id))?;
        sums[grp] += s.counts[grp];
        sizes[grp] += 1;
    }
    if let Some(empty) = sizes.iter().position(|&n| n == 0) {
        return Err(Error::Grouping(format!("group {empty} is empty")));
    }
    Ok(sums
        .iter()
        .zip(&sizes)
        .map(|(&s, &n)| s as f64 / n as f64)
        .fold(f64::INFINITY, f64::min))
}

/// Largest instance the exhaustive search accepts, in assignments enumerated.
pub const EXACT_MAX_ASSIGNMENTS: u64 = 1 << 20;

/// Exhaustive maximiser of [`objective_value`] over all exactly-one
/// assignments (group sizes unconstrained, empty groups infeasible). Ties keep
/// the lexicographically smallest binary matrix `u` (rows in client-id order),
/// which is the largest group sequence.
pub fn exact_assignment(stats: &[GroupStats], groups: usize) -> Result<GroupAssignment> {
    let c = stats.len();
    if groups == 0 || c < groups {
        return Err(Error::Grouping(format!("{c} clients cannot fill {groups} groups")));
    }
    let total = (groups as u64)
        .checked_pow(c as u32)
        .filter(|&n| n <= EXACT_MAX_ASSIGNMENTS)
        .ok_or_else(|| {
            Error::Grouping(format!("{groups}^{c} assignments exceed the enumeration cap"))
        })?;
    let mut order: Vec<&GroupStats> = stats.iter().collect();
    order.sort_by_key(|s| s.client_id);
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut digits = vec![0usize; c];
    for _ in 0..total {
        let mut sums = vec![0u64; groups];
        let mut sizes = vec![0u64; groups];
        for (s, &g) in order.iter().zip(&digits) {
            sums[g] += s.counts[g];
            sizes[g] += 1;
        }
        if sizes.iter().all(|&n| n > 0) {
            let value = sums
                .iter()
                .zip(&sizes)
                .map(|(&s, &n)| s as f64 / n as f64)
                .fold(f64::INFINITY, f64::min);
            if best.as_ref().is_none_or(|(b, _)| value >= *b) {
                best = Some((value, digits.clone()));
            }
        }
        // Increment with the last client as the least significant digit, so
        // sequences are visited in increasing lexicographic order and `>=`
        // keeps the last (largest) of any tie.
        for d in digits.iter_mut().rev() {
            *d += 1;
            if *d < groups {
                break;
            }
            *d = 0;
        }
    }
    let (_, digits) = best.expect("c >= groups admits a feasible assignment");
    GroupAssignment::new(
        groups,
        order.iter().zip(digits).map(|(s, g)| (s.client_id, g)).collect(),
    )
}

/// Exported view of an assignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentReport {
    pub groups: usize,
    pub group_of: BTreeMap<String, usize>,
    pub objective: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exact_objective: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gap: Option<f64>,
}

impl AssignmentReport {
    pub fn new(assignment: &GroupAssignment, stats: &[GroupStats], with_exact: bool) -> Result<Self> {
        let objective = objective_value(assignment, stats)?;
        let exact_objective = if with_exact {
            let exact = exact_assignment(stats, assignment.groups())?;
            Some(objective_value(&exact, stats)?)
        } else {
            None
        };
        Ok(Self {
            groups: assignment.groups(),
            group_of: assignment
                .mapping()
                .map(|(c, g)| (c.to_string(), g))
                .collect(),
            objective,
            exact_objective,
            gap: exact_objective.map(|e| e - objective),
        })
    }
}

/// `G` replicas of part-2b plus the samples routed to each this round.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadBank {
    heads: Vec<LayerStack>,
    routed: Vec<usize>,
}

impl HeadBank {
    pub fn new(part2b: &LayerStack, groups: usize) -> Result<Self> {
        if groups == 0 {
            return Err(Error::Grouping("a head bank needs at least one head".into()));
        }
        Ok(Self {
            heads: vec![part2b.clone(); groups],
            routed: vec![0; groups],
        })
    }

    pub fn len(&self) -> usize {
        self.heads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heads.is_empty()
    }

    pub fn head(&self, g: usize) -> &LayerStack {
        &self.heads[g]
    }

    pub fn head_mut(&mut self, g: usize) -> &mut LayerStack {
        &mut self.heads[g]
    }

    pub fn heads(&self) -> &[LayerStack] {
        &self.heads
    }

    pub fn routed(&self) -> &[usize] {
        &self.routed
    }

    /// Head for the packet's client; counts its rows against that head.
    pub fn route(&mut self, packet: &ActivationPacket, assignment: &GroupAssignment) -> Result<usize> {
        let g = assignment
            .group_of(packet.client_id)
            .ok_or(Error::UnknownClient(packet.client_id))?;
        if g >= self.heads.len() {
            return Err(Error::Grouping(format!("group {g} has no head")));
        }
        self.routed[g] += packet.activations.rows();
        Ok(g)
    }

    /// Averages the heads, resets every replica to the average and zeroes the
    /// counters.
    pub fn aggregate(&mut self, weighting: HeadWeighting) -> Result<LayerStack> {
        if self.routed.iter().all(|&n| n == 0) {
            return Err(Error::InvalidWeights("no samples were routed to any head".into()));
        }
        let replicas: Vec<Replica<'_>> = self
            .heads
            .iter()
            .enumerate()
            .map(|(g, h)| {
                let w = match weighting {
                    HeadWeighting::Samples => self.routed[g] as f64,
                    HeadWeighting::Uniform => 1.0,
                };
                Replica::new(g, h, w)
            })
            .collect();
        let merged = fedavg(&replicas)?;
        for h in &mut self.heads {
            h.clone_from(&merged);
        }
        self.routed.iter_mut().for_each(|n| *n = 0);
        Ok(merged)
    }
}
