use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{ExperimentConfig, Protocol};
use super::eval::{argmax, evaluate, evaluate_predictions, Evaluation};
use super::record::{FinalModel, RunRecord};
use crate::data::{partition, ClientShard, Dataset};
use crate::error::{Error, Result};
use crate::hydra::{assign_groups, group_stats, AssignmentReport, GroupAssignment, HeadBank};
use crate::nn::{loss_and_grad, sgd_step, softmax, LayerStack, Tensor2D};
use crate::scheduling::{build_schedule, OrderPolicy, Participant, RoundSchedule};
use crate::split::{fedavg, split, ActivationPacket, GradientPacket, Replica};

/// One server-side batch update, as seen by an [`Observer`].
pub struct ServerStep<'a> {
    pub round: usize,
    pub packet: &'a ActivationPacket,
    pub reply: &'a GradientPacket,
    /// Head the packet was routed to (grouped protocols only).
    pub head: Option<usize>,
    /// Server-side layers before and after the update; only filled for
    /// detailed observers.
    pub server_before: Option<&'a LayerStack>,
    pub server_after: Option<&'a LayerStack>,
}

/// One client-side part-1 update (detailed observers only).
pub struct ClientStep<'a> {
    pub round: usize,
    pub client_id: usize,
    pub batch_index: usize,
    pub lr: f64,
    pub inputs: &'a Tensor2D,
    pub gradient: &'a Tensor2D,
    pub before: &'a LayerStack,
    pub after: &'a LayerStack,
}

/// SplitNN relay: the part-1 a client received and the one it passed on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Part1Handoff {
    pub round: usize,
    pub client_id: usize,
    pub received_hash: String,
    pub returned_hash: String,
}

/// Multihead-FL: a client trained its local copy of `head`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeadUpdate {
    pub round: usize,
    pub client_id: usize,
    pub head: usize,
}

/// Hooks into the round engines, used by tests to check ordering contracts.
pub trait Observer {
    /// Whether to materialise before/after snapshots for each step.
    fn detailed(&self) -> bool {
        false
    }
    fn server_step(&mut self, _step: &ServerStep<'_>) {}
    fn client_step(&mut self, _step: &ClientStep<'_>) {}
    fn part1_handoff(&mut self, _handoff: &Part1Handoff) {}
    fn head_update(&mut self, _update: &HeadUpdate) {}
    fn round_end(&mut self, _round: usize, _schedule: &RoundSchedule) {}
}

pub struct NoopObserver;

impl Observer for NoopObserver {}

pub struct RunOutput {
    pub record: RunRecord,
    pub model: FinalModel,
    pub assignment: Option<AssignmentReport>,
}

struct Setup<'c> {
    config: &'c ExperimentConfig,
    seed: u64,
    train: Dataset,
    eval: Dataset,
    shards: Vec<ClientShard>,
    participants: Vec<Participant>,
    policy: OrderPolicy,
    model: LayerStack,
    rng: ChaCha8Rng,
    rows: Vec<Vec<f64>>,
    global: Vec<f64>,
    first_positions: Option<Vec<usize>>,
}

struct RoundPlan {
    schedule: RoundSchedule,
    /// `(client_id, batches)` in processing order.
    work: Vec<(usize, Vec<Vec<usize>>)>,
}

impl<'c> Setup<'c> {
    fn new(config: &'c ExperimentConfig, dataset: &Dataset, seed: u64) -> Result<Self> {
        let labels = dataset.num_labels();
        config.validate(labels)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (train, eval) = dataset.holdout(config.holdout, &mut rng)?;
        let partition_seed: u64 = rng.random();
        let shards = partition(&train, &config.partition, partition_seed)?;
        let participants = shards.iter().map(Participant::from).collect();
        let label_order = OrderPolicy::random_label_order(labels, &mut rng);
        let policy = OrderPolicy::new(config.order.kind, config.order.phi, label_order)?;
        let model = LayerStack::mlp(dataset.dim(), &config.model.hidden, labels, &mut rng)?;
        Ok(Self {
            config,
            seed,
            train,
            eval,
            shards,
            participants,
            policy,
            model,
            rng,
            rows: Vec::with_capacity(config.rounds),
            global: Vec::with_capacity(config.rounds),
            first_positions: None,
        })
    }

    fn plan(&mut self, round: usize) -> Result<RoundPlan> {
        let schedule = build_schedule(&self.policy, round, &self.participants, &mut self.rng)?;
        if round == 0 {
            self.first_positions = schedule.position_of_label.clone();
        }
        let batch = self.config.optimizer.batch_size;
        let mut work = Vec::with_capacity(schedule.clients.len());
        for &c in &schedule.clients {
            let mut idx = self.shard(c)?.indices.clone();
            idx.shuffle(&mut self.rng);
            work.push((c, idx.chunks(batch).map(<[usize]>::to_vec).collect()));
        }
        Ok(RoundPlan { schedule, work })
    }

    fn shard(&self, client: usize) -> Result<&ClientShard> {
        self.shards
            .iter()
            .find(|s| s.client_id == client)
            .ok_or(Error::UnknownClient(client))
    }

    fn weight(&self, client: usize) -> Result<f64> {
        Ok(self.shard(client)?.len() as f64)
    }

    fn lr(&self, round: usize) -> f64 {
        self.config.optimizer.lr_at(round)
    }

    fn push(&mut self, e: Evaluation) {
        self.global.push(e.global);
        self.rows.push(e.per_label);
    }

    fn groups(&self) -> Result<(GroupAssignment, AssignmentReport)> {
        let hydra = self.config.hydra_config();
        let g = hydra.head_count(self.train.num_labels());
        let map = hydra.resolve_label_to_group(&self.policy.label_order)?;
        let stats = group_stats(&self.shards, &map, g);
        let assignment = assign_groups(&stats, g)?;
        let with_exact = (g as u64)
            .checked_pow(stats.len() as u32)
            .is_some_and(|n| n <= 1 << 16);
        let report = AssignmentReport::new(&assignment, &stats, with_exact)?;
        Ok((assignment, report))
    }

    fn finish(self, model: FinalModel, assignment: Option<AssignmentReport>) -> RunOutput {
        RunOutput {
            record: RunRecord {
                protocol: self.config.protocol,
                seed: self.seed,
                config_hash: self.config.hash(),
                rounds: self.config.rounds,
                labels: self.train.num_labels(),
                per_label_acc: self.rows,
                global_acc: self.global,
                order: self.policy.kind,
                label_order: self.policy.label_order.clone(),
                position_of_label: self.first_positions,
                checkpoint: None,
            },
            model,
            assignment,
        }
    }
}

/// Runs a client's batches through its part-1, handing each activation packet
/// to `server` and applying the returned cut-layer gradient.
#[allow(clippy::too_many_arguments)]
fn client_pass<F>(
    setup: &Setup<'_>,
    round: usize,
    client: usize,
    batches: &[Vec<usize>],
    part1: &mut LayerStack,
    obs: &mut dyn Observer,
    mut server: F,
) -> Result<()>
where
    F: FnMut(ActivationPacket, &mut dyn Observer) -> Result<GradientPacket>,
{
    let lr = setup.lr(round);
    let (l2_client, _) = setup.config.regularization.lambdas();
    for (b, idx) in batches.iter().enumerate() {
        let (x, y) = setup.train.batch(idx);
        let (activations, tape) = part1.forward(&x)?;
        let packet = ActivationPacket::new(client, b, activations, y)?;
        let reply = server(packet, obs)?;
        if reply.client_id != client || reply.batch_index != b {
            return Err(Error::Shape(format!(
                "reply for client {} batch {} delivered to client {client} batch {b}",
                reply.client_id, reply.batch_index
            )));
        }
        if setup.config.freeze_part1 {
            continue;
        }
        let (grads, _) = part1.backward(&tape, &reply.gradients)?;
        let before = obs.detailed().then(|| part1.clone());
        sgd_step(part1, &grads, lr, l2_client)?;
        if let Some(before) = before {
            obs.client_step(&ClientStep {
                round,
                client_id: client,
                batch_index: b,
                lr,
                inputs: &x,
                gradient: &reply.gradients,
                before: &before,
                after: part1,
            });
        }
    }
    Ok(())
}

/// Server update on a single part-2: forward, loss, backward, reply, then
/// update. The reply is computed from the weights before the update.
fn plain_server_step(
    round: usize,
    part2: &mut LayerStack,
    packet: ActivationPacket,
    lr: f64,
    l2: f64,
    obs: &mut dyn Observer,
) -> Result<GradientPacket> {
    let (logits, tape) = part2.forward(&packet.activations)?;
    let (_, logit_grad) = loss_and_grad(&logits, &packet.labels)?;
    let (grads, cut_grad) = part2.backward(&tape, &logit_grad)?;
    let reply = GradientPacket::reply_to(&packet, cut_grad)?;
    let before = obs.detailed().then(|| part2.clone());
    sgd_step(part2, &grads, lr, l2)?;
    obs.server_step(&ServerStep {
        round,
        packet: &packet,
        reply: &reply,
        head: None,
        server_before: before.as_ref(),
        server_after: before.as_ref().map(|_| &*part2),
    });
    Ok(reply)
}

fn average(items: &[(usize, LayerStack, f64)]) -> Result<LayerStack> {
    let replicas: Vec<Replica<'_>> = items
        .iter()
        .map(|(id, s, w)| Replica::new(*id, s, *w))
        .collect();
    fedavg(&replicas)
}

/// One local SGD step on an unsplit model, with part-1 and part-2 lambdas
/// applied on either side of `cut1`.
fn local_step(
    model: &mut LayerStack,
    x: &Tensor2D,
    y: &[usize],
    lr: f64,
    cut1: usize,
    lambdas: (f64, f64),
    freeze_part1: bool,
) -> Result<()> {
    let (logits, tape) = model.forward(x)?;
    let (_, g) = loss_and_grad(&logits, y)?;
    let (grads, _) = model.backward(&tape, &g)?;
    let (front, back) = grads.split_at(cut1);
    sgd_step(model, &back, lr, lambdas.1)?;
    if !freeze_part1 {
        sgd_step(model, &front, lr, lambdas.0)?;
    }
    Ok(())
}

pub fn run(config: &ExperimentConfig, dataset: &Dataset, seed: u64) -> Result<RunOutput> {
    run_observed(config, dataset, seed, &mut NoopObserver)
}

pub fn run_observed(
    config: &ExperimentConfig,
    dataset: &Dataset,
    seed: u64,
    obs: &mut dyn Observer,
) -> Result<RunOutput> {
    match config.protocol {
        Protocol::Sfl => sfl(config, dataset, seed, obs),
        Protocol::SflHydra => sfl_hydra(config, dataset, seed, obs),
        Protocol::SplitFedV1 => splitfed_v1(config, dataset, seed, obs),
        Protocol::Fl => fl_reference(config, dataset, seed, obs),
        Protocol::SplitFedV3 => splitfed_v3(config, dataset, seed, obs),
        Protocol::SplitNn => splitnn(config, dataset, seed, obs),
        Protocol::MultiheadFl => multihead_fl(config, dataset, seed, obs),
    }
}

fn expect(config: &ExperimentConfig, protocol: Protocol) -> Result<()> {
    if config.protocol == protocol {
        Ok(())
    } else {
        Err(Error::InvalidParam(format!(
            "protocol: expected {protocol:?}, config says {:?}",
            config.protocol
        )))
    }
}

pub fn run_sfl(config: &ExperimentConfig, dataset: &Dataset, seed: u64) -> Result<RunOutput> {
    expect(config, Protocol::Sfl)?;
    sfl(config, dataset, seed, &mut NoopObserver)
}

pub fn run_sfl_hydra(config: &ExperimentConfig, dataset: &Dataset, seed: u64) -> Result<RunOutput> {
    expect(config, Protocol::SflHydra)?;
    sfl_hydra(config, dataset, seed, &mut NoopObserver)
}

pub fn run_splitfedv1(config: &ExperimentConfig, dataset: &Dataset, seed: u64) -> Result<RunOutput> {
    expect(config, Protocol::SplitFedV1)?;
    splitfed_v1(config, dataset, seed, &mut NoopObserver)
}

pub fn run_fl_reference(config: &ExperimentConfig, dataset: &Dataset, seed: u64) -> Result<RunOutput> {
    expect(config, Protocol::Fl)?;
    fl_reference(config, dataset, seed, &mut NoopObserver)
}

pub fn run_splitfedv3(config: &ExperimentConfig, dataset: &Dataset, seed: u64) -> Result<RunOutput> {
    expect(config, Protocol::SplitFedV3)?;
    splitfed_v3(config, dataset, seed, &mut NoopObserver)
}

pub fn run_splitnn(config: &ExperimentConfig, dataset: &Dataset, seed: u64) -> Result<RunOutput> {
    expect(config, Protocol::SplitNn)?;
    splitnn(config, dataset, seed, &mut NoopObserver)
}

pub fn run_multihead_fl(config: &ExperimentConfig, dataset: &Dataset, seed: u64) -> Result<RunOutput> {
    expect(config, Protocol::MultiheadFl)?;
    multihead_fl(config, dataset, seed, &mut NoopObserver)
}

fn sfl(
    config: &ExperimentConfig,
    dataset: &Dataset,
    seed: u64,
    obs: &mut dyn Observer,
) -> Result<RunOutput> {
    let mut setup = Setup::new(config, dataset, seed)?;
    let parts = split(&setup.model, config.split)?;
    let mut part1 = parts.part1.clone();
    let mut part2 = parts.part2()?;
    let (_, l2_server) = config.regularization.lambdas();
    for round in 0..config.rounds {
        let plan = setup.plan(round)?;
        let lr = setup.lr(round);
        let mut locals = Vec::with_capacity(plan.work.len());
        for (client, batches) in &plan.work {
            let mut local = part1.clone();
            client_pass(&setup, round, *client, batches, &mut local, obs, |packet, obs| {
                plain_server_step(round, &mut part2, packet, lr, l2_server, obs)
            })?;
            locals.push((*client, local, setup.weight(*client)?));
        }
        part1 = average(&locals)?;
        let e = evaluate(&LayerStack::concat(&[&part1, &part2])?, &setup.eval)?;
        setup.push(e);
        obs.round_end(round, &plan.schedule);
    }
    let model = FinalModel {
        parts: vec![("part1".into(), part1), ("part2".into(), part2)],
    };
    Ok(setup.finish(model, None))
}

fn sfl_hydra(
    config: &ExperimentConfig,
    dataset: &Dataset,
    seed: u64,
    obs: &mut dyn Observer,
) -> Result<RunOutput> {
    let mut setup = Setup::new(config, dataset, seed)?;
    let (assignment, report) = setup.groups()?;
    let weighting = config.hydra_config().head_weighting;
    let parts = split(&setup.model, config.split)?;
    let mut part1 = parts.part1.clone();
    let mut part2a = parts.part2a.clone();
    let mut bank = HeadBank::new(&parts.part2b, assignment.groups())?;
    let mut head = parts.part2b.clone();
    let (_, l2_server) = config.regularization.lambdas();
    for round in 0..config.rounds {
        let plan = setup.plan(round)?;
        let lr = setup.lr(round);
        let mut locals = Vec::with_capacity(plan.work.len());
        for (client, batches) in &plan.work {
            let mut local = part1.clone();
            client_pass(&setup, round, *client, batches, &mut local, obs, |packet, obs| {
                let (mid, tape_a) = part2a.forward(&packet.activations)?;
                let g = bank.route(&packet, &assignment)?;
                let head_g = bank.head_mut(g);
                let (logits, tape_b) = head_g.forward(&mid)?;
                let (_, logit_grad) = loss_and_grad(&logits, &packet.labels)?;
                let (grads_b, mid_grad) = head_g.backward(&tape_b, &logit_grad)?;
                let (grads_a, cut_grad) = part2a.backward(&tape_a, &mid_grad)?;
                let reply = GradientPacket::reply_to(&packet, cut_grad)?;
                let before = if obs.detailed() {
                    Some(LayerStack::concat(&[&part2a, head_g])?)
                } else {
                    None
                };
                sgd_step(&mut part2a, &grads_a, lr, l2_server)?;
                sgd_step(head_g, &grads_b, lr, l2_server)?;
                let after = match before {
                    Some(_) => Some(LayerStack::concat(&[&part2a, bank.head(g)])?),
                    None => None,
                };
                obs.server_step(&ServerStep {
                    round,
                    packet: &packet,
                    reply: &reply,
                    head: Some(g),
                    server_before: before.as_ref(),
                    server_after: after.as_ref(),
                });
                Ok(reply)
            })?;
            locals.push((*client, local, setup.weight(*client)?));
        }
        part1 = average(&locals)?;
        head = bank.aggregate(weighting)?;
        let e = evaluate(&LayerStack::concat(&[&part1, &part2a, &head])?, &setup.eval)?;
        setup.push(e);
        obs.round_end(round, &plan.schedule);
    }
    let model = FinalModel {
        parts: vec![
            ("part1".into(), part1),
            ("part2a".into(), part2a),
            ("part2b".into(), head),
        ],
    };
    Ok(setup.finish(model, Some(report)))
}

fn splitfed_v1(
    config: &ExperimentConfig,
    dataset: &Dataset,
    seed: u64,
    obs: &mut dyn Observer,
) -> Result<RunOutput> {
    let mut setup = Setup::new(config, dataset, seed)?;
    let parts = split(&setup.model, config.split)?;
    let mut part1 = parts.part1.clone();
    let mut part2 = parts.part2()?;
    let (_, l2_server) = config.regularization.lambdas();
    for round in 0..config.rounds {
        let plan = setup.plan(round)?;
        let lr = setup.lr(round);
        let mut p1s = Vec::with_capacity(plan.work.len());
        let mut p2s = Vec::with_capacity(plan.work.len());
        for (client, batches) in &plan.work {
            let mut local1 = part1.clone();
            let mut local2 = part2.clone();
            client_pass(&setup, round, *client, batches, &mut local1, obs, |packet, obs| {
                plain_server_step(round, &mut local2, packet, lr, l2_server, obs)
            })?;
            let w = setup.weight(*client)?;
            p1s.push((*client, local1, w));
            p2s.push((*client, local2, w));
        }
        part1 = average(&p1s)?;
        part2 = average(&p2s)?;
        let e = evaluate(&LayerStack::concat(&[&part1, &part2])?, &setup.eval)?;
        setup.push(e);
        obs.round_end(round, &plan.schedule);
    }
    let model = FinalModel {
        parts: vec![("part1".into(), part1), ("part2".into(), part2)],
    };
    Ok(setup.finish(model, None))
}

/// FedAvg on the unsplit model, written without any packet exchange.
fn fl_reference(
    config: &ExperimentConfig,
    dataset: &Dataset,
    seed: u64,
    obs: &mut dyn Observer,
) -> Result<RunOutput> {
    let mut setup = Setup::new(config, dataset, seed)?;
    let mut model = setup.model.clone();
    let lambdas = config.regularization.lambdas();
    for round in 0..config.rounds {
        let plan = setup.plan(round)?;
        let lr = setup.lr(round);
        let mut locals = Vec::with_capacity(plan.work.len());
        for (client, batches) in &plan.work {
            let mut local = model.clone();
            for idx in batches {
                let (x, y) = setup.train.batch(idx);
                local_step(&mut local, &x, &y, lr, config.split.cut1, lambdas, config.freeze_part1)?;
            }
            locals.push((*client, local, setup.weight(*client)?));
        }
        model = average(&locals)?;
        let e = evaluate(&model, &setup.eval)?;
        setup.push(e);
        obs.round_end(round, &plan.schedule);
    }
    let model = FinalModel {
        parts: vec![("model".into(), model)],
    };
    Ok(setup.finish(model, None))
}

fn splitfed_v3(
    config: &ExperimentConfig,
    dataset: &Dataset,
    seed: u64,
    obs: &mut dyn Observer,
) -> Result<RunOutput> {
    let mut setup = Setup::new(config, dataset, seed)?;
    let parts = split(&setup.model, config.split)?;
    let mut part1s: BTreeMap<usize, LayerStack> = setup
        .shards
        .iter()
        .map(|s| (s.client_id, parts.part1.clone()))
        .collect();
    let mut part2 = parts.part2()?;
    let (_, l2_server) = config.regularization.lambdas();
    for round in 0..config.rounds {
        let plan = setup.plan(round)?;
        let lr = setup.lr(round);
        let mut p2s = Vec::with_capacity(plan.work.len());
        for (client, batches) in &plan.work {
            let local1 = part1s.get_mut(client).ok_or(Error::UnknownClient(*client))?;
            let mut local2 = part2.clone();
            client_pass(&setup, round, *client, batches, local1, obs, |packet, obs| {
                plain_server_step(round, &mut local2, packet, lr, l2_server, obs)
            })?;
            p2s.push((*client, local2, setup.weight(*client)?));
        }
        part2 = average(&p2s)?;
        let e = most_confident(&part1s, &part2, &setup.eval)?;
        setup.push(e);
        obs.round_end(round, &plan.schedule);
    }
    let mut out: Vec<(String, LayerStack)> = part1s
        .into_iter()
        .map(|(c, p)| (format!("part1/{c}"), p))
        .collect();
    out.push(("part2".into(), part2));
    Ok(setup.finish(FinalModel { parts: out }, None))
}

/// Each sample is classified by whichever client's part-1 gives the most
/// confident softmax output; ties go to the lowest client id.
fn most_confident(
    part1s: &BTreeMap<usize, LayerStack>,
    part2: &LayerStack,
    eval: &Dataset,
) -> Result<Evaluation> {
    let n = eval.len();
    let mut best = vec![(f64::NEG_INFINITY, 0usize); n];
    for p1 in part1s.values() {
        let probs = softmax(&part2.predict(&p1.predict(eval.features())?)?);
        for (i, slot) in best.iter_mut().enumerate() {
            let row = probs.row(i);
            let k = argmax(row);
            if row[k] > slot.0 {
                *slot = (row[k], k);
            }
        }
    }
    let preds: Vec<usize> = best.into_iter().map(|(_, k)| k).collect();
    evaluate_predictions(&preds, eval.labels(), eval.num_labels())
}

fn splitnn(
    config: &ExperimentConfig,
    dataset: &Dataset,
    seed: u64,
    obs: &mut dyn Observer,
) -> Result<RunOutput> {
    let mut setup = Setup::new(config, dataset, seed)?;
    let parts = split(&setup.model, config.split)?;
    let mut part1 = parts.part1.clone();
    let mut part2 = parts.part2()?;
    let (_, l2_server) = config.regularization.lambdas();
    for round in 0..config.rounds {
        let plan = setup.plan(round)?;
        let lr = setup.lr(round);
        for (client, batches) in &plan.work {
            let received_hash = part1.param_hash();
            client_pass(&setup, round, *client, batches, &mut part1, obs, |packet, obs| {
                plain_server_step(round, &mut part2, packet, lr, l2_server, obs)
            })?;
            obs.part1_handoff(&Part1Handoff {
                round,
                client_id: *client,
                received_hash,
                returned_hash: part1.param_hash(),
            });
        }
        let e = evaluate(&LayerStack::concat(&[&part1, &part2])?, &setup.eval)?;
        setup.push(e);
        obs.round_end(round, &plan.schedule);
    }
    let model = FinalModel {
        parts: vec![("part1".into(), part1), ("part2".into(), part2)],
    };
    Ok(setup.finish(model, None))
}

fn multihead_fl(
    config: &ExperimentConfig,
    dataset: &Dataset,
    seed: u64,
    obs: &mut dyn Observer,
) -> Result<RunOutput> {
    let mut setup = Setup::new(config, dataset, seed)?;
    let (assignment, report) = setup.groups()?;
    let cut2 = config.split.cut2.expect("validated");
    let mut body = setup.model.slice(0..cut2)?;
    let mut heads = vec![setup.model.slice(cut2..setup.model.len())?; assignment.groups()];
    let lambdas = config.regularization.lambdas();
    for round in 0..config.rounds {
        let plan = setup.plan(round)?;
        let lr = setup.lr(round);
        let mut bodies = Vec::with_capacity(plan.work.len());
        let mut by_group: Vec<Vec<(usize, LayerStack, f64)>> = vec![Vec::new(); heads.len()];
        for (client, batches) in &plan.work {
            let g = assignment
                .group_of(*client)
                .ok_or(Error::UnknownClient(*client))?;
            let mut local = LayerStack::concat(&[&body, &heads[g]])?;
            for idx in batches {
                let (x, y) = setup.train.batch(idx);
                local_step(&mut local, &x, &y, lr, config.split.cut1, lambdas, config.freeze_part1)?;
            }
            obs.head_update(&HeadUpdate {
                round,
                client_id: *client,
                head: g,
            });
            let w = setup.weight(*client)?;
            bodies.push((*client, local.slice(0..cut2)?, w));
            by_group[g].push((*client, local.slice(cut2..local.len())?, w));
        }
        body = average(&bodies)?;
        for (g, members) in by_group.iter().enumerate() {
            if !members.is_empty() {
                heads[g] = average(members)?;
            }
        }
        let e = best_head(&body, &heads, &setup.eval)?;
        setup.push(e);
        obs.round_end(round, &plan.schedule);
    }
    let mut parts = vec![("body".to_string(), body)];
    parts.extend(heads.into_iter().enumerate().map(|(g, h)| (format!("head/{g}"), h)));
    Ok(setup.finish(FinalModel { parts }, Some(report)))
}

/// Predicts the label with the highest softmax value across all heads.
fn best_head(body: &LayerStack, heads: &[LayerStack], eval: &Dataset) -> Result<Evaluation> {
    let features = body.predict(eval.features())?;
    let mut best = vec![(f64::NEG_INFINITY, 0usize); eval.len()];
    for head in heads {
        let probs = softmax(&head.predict(&features)?);
        for (i, slot) in best.iter_mut().enumerate() {
            let row = probs.row(i);
            let k = argmax(row);
            if row[k] > slot.0 {
                *slot = (row[k], k);
            }
        }
    }
    let preds: Vec<usize> = best.into_iter().map(|(_, k)| k).collect();
    evaluate_predictions(&preds, eval.labels(), eval.num_labels())
}
