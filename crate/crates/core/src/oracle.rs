//! Slow, literal reference implementations used to check the fast paths.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{partition, Dataset};
use crate::error::{Error, Result};
use crate::hydra::{GroupAssignment, GroupStats};
use crate::nn::{loss_and_grad, sgd_step, LayerStack, Tensor2D};
use crate::protocols::ExperimentConfig;
use crate::scheduling::{build_schedule, OrderPolicy, Participant};

/// Outcome of comparing analytic and central-difference gradients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub params: usize,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
}

/// Checks every parameter's analytic gradient of the mean cross-entropy
/// against a central difference with step `eps`.
///
/// Relative error is `|a - n| / max(|a| + |n|, floor)`, where the floor keeps
/// gradients that are zero up to rounding from dominating.
pub fn grad_check(stack: &LayerStack, x: &Tensor2D, labels: &[usize], eps: f64) -> Result<GradCheck> {
    let (logits, tape) = stack.forward(x)?;
    let (_, g) = loss_and_grad(&logits, labels)?;
    let (grads, _) = stack.backward(&tape, &g)?;
    compare_gradients(stack, x, labels, &grads.flat(), eps)
}

/// Compares a flat gradient (in parameter order) with central differences.
pub fn compare_gradients(
    stack: &LayerStack,
    x: &Tensor2D,
    labels: &[usize],
    analytic: &[f64],
    eps: f64,
) -> Result<GradCheck> {
    const FLOOR: f64 = 1e-7;
    let base = stack.params_flat();
    if analytic.len() != base.len() {
        return Err(Error::Shape(format!(
            "{} gradients for {} parameters",
            analytic.len(),
            base.len()
        )));
    }
    let mut probe = stack.clone();
    let mut loss_at = |params: &[f64]| -> Result<f64> {
        probe.set_params_flat(params)?;
        let (logits, _) = probe.forward(x)?;
        Ok(loss_and_grad(&logits, labels)?.0)
    };
    let mut params = base.clone();
    let mut out = GradCheck {
        params: base.len(),
        max_rel_err: 0.0,
        max_abs_err: 0.0,
    };
    for i in 0..base.len() {
        params[i] = base[i] + eps;
        let up = loss_at(&params)?;
        params[i] = base[i] - eps;
        let down = loss_at(&params)?;
        params[i] = base[i];
        let numeric = (up - down) / (2.0 * eps);
        let abs = (analytic[i] - numeric).abs();
        let rel = abs / (analytic[i].abs() + numeric.abs()).max(FLOOR);
        out.max_abs_err = out.max_abs_err.max(abs);
        out.max_rel_err = out.max_rel_err.max(rel);
    }
    Ok(out)
}

/// A seeded MLP with at most `max_params` parameters, a batch of inputs and
/// labels for it.
pub fn random_problem(seed: u64, max_params: usize) -> Result<(LayerStack, Tensor2D, Vec<usize>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let input = rng.random_range(2..=8);
        let classes = rng.random_range(2..=5);
        let depth = rng.random_range(0..=3);
        let hidden: Vec<usize> = (0..depth).map(|_| rng.random_range(2..=12)).collect();
        let stack = LayerStack::mlp(input, &hidden, classes, &mut rng)?;
        if stack.param_count() > max_params {
            continue;
        }
        let rows = rng.random_range(1..=16);
        let data = (0..rows * input).map(|_| rng.random_range(-2.0..2.0)).collect();
        let x = Tensor2D::new(rows, input, data)?;
        let labels = (0..rows).map(|_| rng.random_range(0..classes)).collect();
        return Ok((stack, x, labels));
    }
}

/// Minibatch SGD on the unsplit model, visiting every client's batches in
/// schedule order with no averaging. Draws from the experiment RNG in the
/// same order as the round engines, so a split pipeline that is transparent
/// must reproduce it bit-for-bit.
pub fn sequential_sgd(config: &ExperimentConfig, data: &Dataset, seed: u64) -> Result<LayerStack> {
    let labels = data.num_labels();
    config.validate(labels)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (train, _) = data.holdout(config.holdout, &mut rng)?;
    let partition_seed: u64 = rng.random();
    let shards = partition(&train, &config.partition, partition_seed)?;
    let participants: Vec<Participant> = shards.iter().map(Participant::from).collect();
    let label_order = OrderPolicy::random_label_order(labels, &mut rng);
    let policy = OrderPolicy::new(config.order.kind, config.order.phi, label_order)?;
    let mut model = LayerStack::mlp(data.dim(), &config.model.hidden, labels, &mut rng)?;
    let (l2_front, l2_back) = config.regularization.lambdas();
    for round in 0..config.rounds {
        let lr = config.optimizer.lr_at(round);
        let schedule = build_schedule(&policy, round, &participants, &mut rng)?;
        for client in schedule.clients {
            let shard = shards
                .iter()
                .find(|s| s.client_id == client)
                .ok_or(Error::UnknownClient(client))?;
            let mut idx = shard.indices.clone();
            idx.shuffle(&mut rng);
            for chunk in idx.chunks(config.optimizer.batch_size) {
                let (x, y) = train.batch(chunk);
                let (logits, tape) = model.forward(&x)?;
                let (_, g) = loss_and_grad(&logits, &y)?;
                let (grads, _) = model.backward(&tape, &g)?;
                let (front, back) = grads.split_at(config.split.cut1);
                sgd_step(&mut model, &back, lr, l2_back)?;
                if !config.freeze_part1 {
                    sgd_step(&mut model, &front, lr, l2_front)?;
                }
            }
        }
    }
    Ok(model)
}

/// Backward transfer as a plain double loop over labels and earlier rounds.
pub fn backward_transfer_brute(a: &[Vec<f64>]) -> f64 {
    let r_last = a.len() - 1;
    let labels = a[0].len();
    let mut total = 0.0;
    for l in 0..labels {
        let mut best = f64::NEG_INFINITY;
        for row in &a[..r_last] {
            let d = row[l] - a[r_last][l];
            if d > best {
                best = d;
            }
        }
        total += best;
    }
    total / labels as f64
}

/// Performance gap in its pairwise form: for each label, the largest
/// shortfall `|min(0, a_l - a_k)|` against any other label.
pub fn performance_gap_pairwise(row: &[f64]) -> f64 {
    let mut total = 0.0;
    for &al in row {
        let mut worst = 0.0f64;
        for &ak in row {
            worst = worst.max((al - ak).min(0.0).abs());
        }
        total += worst;
    }
    total / row.len() as f64
}

/// Greedy grouping written as the textbook loop: every pick rescans all
/// unassigned clients. Ties go to the lowest client id.
pub fn greedy_rescan(stats: &[GroupStats], groups: usize) -> Result<GroupAssignment> {
    if groups == 0 || stats.len() < groups {
        return Err(Error::Grouping(format!(
            "{} clients cannot fill {groups} groups",
            stats.len()
        )));
    }
    let mut unassigned: Vec<&GroupStats> = stats.iter().collect();
    let mut group_of = BTreeMap::new();
    while !unassigned.is_empty() {
        for g in 0..groups {
            let Some((pos, _)) = unassigned.iter().enumerate().max_by(|(_, a), (_, b)| {
                a.counts[g]
                    .cmp(&b.counts[g])
                    .then(b.client_id.cmp(&a.client_id))
            }) else {
                break;
            };
            let s = unassigned.remove(pos);
            group_of.insert(s.client_id, g);
        }
    }
    GroupAssignment::new(groups, group_of)
}

/// Largest gap between the metric implementations and the brute-force forms
/// over `cases` random accuracy matrices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricCheck {
    pub cases: usize,
    pub max_bw_err: f64,
    pub max_pg_err: f64,
    /// Between the pairwise and mean-gap-to-best forms.
    pub max_pg_identity_err: f64,
}

pub fn metric_check(seed: u64, cases: usize) -> Result<MetricCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = MetricCheck {
        cases,
        max_bw_err: 0.0,
        max_pg_err: 0.0,
        max_pg_identity_err: 0.0,
    };
    for _ in 0..cases {
        let rounds = rng.random_range(2..=12);
        let labels = rng.random_range(1..=10);
        let a: Vec<Vec<f64>> = (0..rounds)
            .map(|_| (0..labels).map(|_| rng.random::<f64>()).collect())
            .collect();
        let bw = crate::metrics::backward_transfer(&a)?;
        out.max_bw_err = out.max_bw_err.max((bw - backward_transfer_brute(&a)).abs());
        for row in &a {
            let pg = crate::metrics::performance_gap(row);
            let pairwise = performance_gap_pairwise(row);
            let simplified = simplified_gap(row);
            out.max_pg_err = out.max_pg_err.max((pg - pairwise).abs());
            out.max_pg_identity_err = out.max_pg_identity_err.max((pairwise - simplified).abs());
        }
    }
    Ok(out)
}

fn simplified_gap(row: &[f64]) -> f64 {
    let mut best = row[0];
    for &x in row {
        if x > best {
            best = x;
        }
    }
    let mut total = 0.0;
    for &x in row {
        total += best - x;
    }
    total / row.len() as f64
}
