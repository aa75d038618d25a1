//! Acceptance checks, one per criterion. Prints a PASS/FAIL line for each and
//! exits non-zero if any fails.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use splitfed::data::{generate_synthetic, partition, Dataset, PartitionMethod, PartitionSpec};
use splitfed::hydra::{assign_groups, exact_assignment, objective_value, HydraConfig};
use splitfed::metrics::{backward_transfer, median, performance_gap};
use splitfed::nn::{LayerStack, OptimizerConfig};
use splitfed::oracle::sequential_sgd;
use splitfed::protocols::{
    run, ExperimentConfig, ModelConfig, OrderConfig, Protocol, Regularization, RunOutput,
};
use splitfed::scheduling::{build_schedule, OrderKind, OrderPolicy, Participant};
use splitfed::split::SplitSpec;
use splitfed_harness::oracles::{grad_check_nets, metric_check_cases, random_group_stats};
use splitfed_harness::{run_suite, ConfigOutcome, Suite};

type Check = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn FnMut() -> Check + 'a>);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(limit: Duration, started: Instant) -> Result<(), String> {
    let took = started.elapsed();
    ensure(took <= limit, || format!("took {took:.1?}, limit {limit:?}"))
}

// 1

fn gradient_correctness() -> Check {
    let t = Instant::now();
    let outcome = grad_check_nets(20, 0, 1000, 1e-5).map_err(|e| e.to_string())?;
    within(Duration::from_secs(30), t)?;
    ensure(outcome.pass, || outcome.detail.clone())?;
    Ok(outcome.detail)
}

// Shared small setup for the exactness criteria.

fn small_data() -> Dataset {
    generate_synthetic(4, 6, 60, 2.0, 99).unwrap()
}

fn small_config(protocol: Protocol) -> ExperimentConfig {
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

fn part(out: &RunOutput, names: &[&str]) -> LayerStack {
    let parts: Vec<&LayerStack> = names
        .iter()
        .map(|n| &out.model.parts.iter().find(|(m, _)| m == n).unwrap().1)
        .collect();
    LayerStack::concat(&parts).unwrap()
}

fn bits(s: &LayerStack) -> Vec<u64> {
    s.params_flat().iter().map(|v| v.to_bits()).collect()
}

// 2

fn split_transparency() -> Check {
    let t = Instant::now();
    let data = small_data();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut pairs = Vec::new();
    for _ in 0..5 {
        let cut1 = rng.random_range(1..7);
        let seed: u64 = rng.random_range(0..1000);
        pairs.push((cut1, seed));
        // One client: the split pipeline is plain minibatch SGD.
        let mut one = small_config(Protocol::Sfl);
        one.partition = PartitionSpec {
            clients: 1,
            method: PartitionMethod::Iid,
        };
        one.order.kind = OrderKind::Random;
        one.split = SplitSpec::new(cut1, None);
        let reference = bits(&sequential_sgd(&one, &data, seed).map_err(|e| e.to_string())?);
        let sfl = run(&one, &data, seed).map_err(|e| e.to_string())?;
        ensure(bits(&part(&sfl, &["part1", "part2"])) == reference, || {
            format!("single-client SFL differs from unsplit SGD at cut1={cut1} seed={seed}")
        })?;
        // Several clients relayed in order: SplitNN against the same SGD.
        let mut relay = small_config(Protocol::SplitNn);
        relay.split = SplitSpec::new(cut1, None);
        let reference = bits(&sequential_sgd(&relay, &data, seed).map_err(|e| e.to_string())?);
        let out = run(&relay, &data, seed).map_err(|e| e.to_string())?;
        ensure(bits(&part(&out, &["part1", "part2"])) == reference, || {
            format!("SplitNN differs from unsplit SGD at cut1={cut1} seed={seed}")
        })?;
    }
    within(Duration::from_secs(60), t)?;
    Ok(format!("bit-identical for (cut1, seed) = {pairs:?}"))
}

// 3

fn protocol_equivalences() -> Check {
    let t = Instant::now();
    let data = small_data();
    let mut compared = 0;
    for rounds in 1..=3 {
        for seed in [11, 12] {
            let mut sfl = small_config(Protocol::Sfl);
            sfl.rounds = rounds;
            let mut hydra = sfl.clone();
            hydra.protocol = Protocol::SflHydra;
            hydra.hydra = Some(HydraConfig {
                heads: Some(1),
                label_to_group: Some(vec![0; 4]),
                ..HydraConfig::default()
            });
            let a = run(&sfl, &data, seed).map_err(|e| e.to_string())?;
            let b = run(&hydra, &data, seed).map_err(|e| e.to_string())?;
            ensure(
                bits(&part(&a, &["part1", "part2"])) == bits(&part(&b, &["part1", "part2a", "part2b"]))
                    && a.record.per_label_acc == b.record.per_label_acc,
                || format!("(a) Hydra G=1 diverges from SFL after {rounds} rounds, seed {seed}"),
            )?;
            let mut v1 = sfl.clone();
            v1.protocol = Protocol::SplitFedV1;
            let mut fl = sfl.clone();
            fl.protocol = Protocol::Fl;
            let a = run(&v1, &data, seed).map_err(|e| e.to_string())?;
            let b = run(&fl, &data, seed).map_err(|e| e.to_string())?;
            ensure(bits(&part(&a, &["part1", "part2"])) == bits(&part(&b, &["model"])), || {
                format!("(b) SplitFedV1 diverges from FedAvg after {rounds} rounds, seed {seed}")
            })?;
            let reference = bits(&part(&a, &["part1", "part2"]));
            for cut1 in 1..7 {
                let mut c = v1.clone();
                c.split = SplitSpec::new(cut1, None);
                let out = run(&c, &data, seed).map_err(|e| e.to_string())?;
                ensure(bits(&part(&out, &["part1", "part2"])) == reference, || {
                    format!("(c) SplitFedV1 depends on cut1={cut1} after {rounds} rounds")
                })?;
            }
            compared += 1;
        }
    }
    within(Duration::from_secs(120), t)?;
    Ok(format!(
        "(a), (b), (c) bit-identical over {compared} (rounds, seed) trajectory prefixes"
    ))
}

// 4

fn grouping() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut instances = 0;
    let mut worst_gap = 0.0f64;
    for c in 1..=8 {
        for g in 1..=3usize.min(c) {
            for _ in 0..12 {
                let stats = random_group_stats(&mut rng, c, g);
                let greedy = assign_groups(&stats, g).map_err(|e| e.to_string())?;
                ensure(
                    greedy.u().iter().all(|row| row.iter().map(|&b| b as u32).sum::<u32>() == 1)
                        && greedy.len() == c,
                    || format!("exactly-one violated at C={c} G={g}"),
                )?;
                let sizes = greedy.group_sizes();
                ensure(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1, || {
                    format!("unbalanced sizes {sizes:?} at C={c} G={g}")
                })?;
                let gv = objective_value(&greedy, &stats).map_err(|e| e.to_string())?;
                let exact = exact_assignment(&stats, g).map_err(|e| e.to_string())?;
                let ev = objective_value(&exact, &stats).map_err(|e| e.to_string())?;
                ensure(ev >= gv, || format!("exact {ev} < greedy {gv} at C={c} G={g}"))?;
                worst_gap = worst_gap.max(ev - gv);
                instances += 1;
            }
        }
    }
    ensure(instances >= 200, || format!("only {instances} instances"))?;
    let (c_exp, g_exp) = greedy_scaling();
    ensure((0.8..=1.2).contains(&c_exp) && (0.8..=1.2).contains(&g_exp), || {
        format!("runtime exponents: clients {c_exp:.3}, groups {g_exp:.3}")
    })?;
    Ok(format!(
        "{instances} instances feasible, balanced and dominated by the exact optimum (largest gap {worst_gap:.2}); runtime exponent {c_exp:.2} in C, {g_exp:.2} in G"
    ))
}

/// Least-squares slope of log(time) against log(size).
fn loglog_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    cov / var
}

fn time_greedy(clients: usize, groups: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64((clients * 31 + groups) as u64);
    let stats = random_group_stats(&mut rng, clients, groups);
    (0..11)
        .map(|_| {
            let t = Instant::now();
            std::hint::black_box(assign_groups(std::hint::black_box(&stats), groups).unwrap());
            t.elapsed().as_secs_f64()
        })
        .fold(f64::INFINITY, f64::min)
}

/// Median over three sweeps of the fitted exponent in C (G fixed) and in G
/// (C fixed), each over a 10x range.
fn greedy_scaling() -> (f64, f64) {
    let sweep = |points: &[(usize, usize)], by_groups: bool| {
        let slopes: Vec<f64> = (0..3)
            .map(|_| {
                let fit: Vec<(f64, f64)> = points
                    .iter()
                    .map(|&(c, g)| ((if by_groups { g } else { c }) as f64, time_greedy(c, g)))
                    .collect();
                loglog_slope(&fit)
            })
            .collect();
        median(&slopes)
    };
    let by_clients = [5000, 10000, 20000, 30000, 50000].map(|c| (c, 4));
    let by_groups = [10, 20, 40, 60, 100].map(|g| (20000, g));
    (sweep(&by_clients, false), sweep(&by_groups, true))
}

// 5

fn metric_oracles() -> Check {
    let outcome = metric_check_cases(1000, 5).map_err(|e| e.to_string())?;
    ensure(outcome.pass, || outcome.detail.clone())?;
    let bw = backward_transfer(&[vec![0.5, 0.2], vec![0.9, 0.4], vec![0.6, 0.5]])
        .map_err(|e| e.to_string())?;
    ensure((bw - 0.1).abs() <= 1e-15, || format!("BW fixture gave {bw}"))?;
    let pg = performance_gap(&[0.5, 0.9, 0.7]);
    ensure((pg - 0.2).abs() <= 1e-15, || format!("PG fixture gave {pg}"))?;
    Ok(format!("{}; fixtures BW={bw}, PG={pg}", outcome.detail))
}

// 6

fn schedule_laws() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut schedules = 0;
    let kinds = [OrderKind::Random, OrderKind::Cyclic, OrderKind::CyclicAndReverse];
    while schedules < 10_000 {
        let kind = kinds[rng.random_range(0..3)];
        let labels = rng.random_range(2..=6);
        let phi = rng.random_range(1..=4);
        let mut ids: Vec<usize> = (0..labels * phi).map(|i| i * 7 + 3).collect();
        ids.shuffle(&mut rng);
        let clients: Vec<Participant> = ids
            .iter()
            .enumerate()
            .map(|(i, &id)| Participant {
                client_id: id,
                dominant_label: Some(i % labels),
            })
            .collect();
        let label_of: BTreeMap<usize, usize> =
            clients.iter().map(|c| (c.client_id, c.dominant_label.unwrap())).collect();
        let order = OrderPolicy::random_label_order(labels, &mut rng);
        let policy = OrderPolicy::new(kind, phi, order).map_err(|e| e.to_string())?;
        let start = rng.random_range(0..50);
        let a = build_schedule(&policy, start, &clients, &mut rng).map_err(|e| e.to_string())?;
        let b = build_schedule(&policy, start + 1, &clients, &mut rng).map_err(|e| e.to_string())?;
        schedules += 2;
        let mut sorted_ids = ids.clone();
        sorted_ids.sort_unstable();
        for s in [&a, &b] {
            let mut got = s.clients.clone();
            got.sort_unstable();
            ensure(got == sorted_ids, || format!("{kind:?}: not a permutation"))?;
        }
        match kind {
            OrderKind::Random => {}
            OrderKind::Cyclic => {
                ensure(a.clients == b.clients, || "cyclic order changed between rounds".into())?
            }
            OrderKind::CyclicAndReverse => {
                let mut rev = a.clients.clone();
                rev.reverse();
                ensure(b.clients == rev, || "next round is not the exact reverse".into())?;
            }
        }
        if kind.is_cyclic() {
            for s in [&a, &b] {
                let blocks: Vec<usize> = s
                    .clients
                    .chunks(phi)
                    .map(|chunk| {
                        let l = label_of[&chunk[0]];
                        if chunk.iter().all(|c| label_of[c] == l) {
                            Ok(l)
                        } else {
                            Err(format!("block {chunk:?} mixes labels"))
                        }
                    })
                    .collect::<Result<_, _>>()?;
                let mut distinct = blocks.clone();
                distinct.sort_unstable();
                distinct.dedup();
                ensure(distinct.len() == labels, || format!("blocks {blocks:?} repeat a label"))?;
            }
        }
    }
    Ok(format!("{schedules} schedules: permutations, fixed cycles, exact reversals, contiguous label blocks"))
}

// 7

fn label_entropy(h: &[usize]) -> f64 {
    let n: usize = h.iter().sum();
    h.iter()
        .filter(|&&k| k > 0)
        .map(|&k| {
            let p = k as f64 / n as f64;
            -p * p.ln()
        })
        .sum()
}

fn partition_laws() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut checked = 0;
    while checked < 100 {
        let labels = rng.random_range(2..=6);
        let per_label = rng.random_range(30..=120);
        let data = generate_synthetic(labels, 6, per_label, 1.0, rng.random()).unwrap();
        let method = match rng.random_range(0..4) {
            0 => PartitionMethod::Iid,
            1 => PartitionMethod::DominantLabel {
                p: rng.random_range(20..=100) as f64,
                phi: rng.random_range(1..=3),
            },
            2 => PartitionMethod::Dirichlet {
                alpha: rng.random_range(0.1..10.0),
            },
            _ => PartitionMethod::Sharding {
                p: rng.random_range(20..=100) as f64,
                n: rng.random_range(2..=labels),
            },
        };
        let clients = match method {
            PartitionMethod::DominantLabel { phi, .. } => phi * labels,
            PartitionMethod::Sharding { .. } => labels * rng.random_range(1..=2),
            _ => rng.random_range(2..=8),
        };
        let spec = PartitionSpec { clients, method };
        let seed: u64 = rng.random();
        let shards = partition(&data, &spec, seed).map_err(|e| format!("{spec:?}: {e}"))?;
        let mut seen = vec![0u8; data.len()];
        for s in &shards {
            let mut h = vec![0; labels];
            for &i in &s.indices {
                seen[i] += 1;
                h[data.labels()[i]] += 1;
            }
            ensure(h == s.histogram, || format!("{spec:?}: histogram disagrees with samples"))?;
        }
        ensure(seen.iter().all(|&k| k == 1), || {
            format!("{spec:?}: samples lost or duplicated")
        })?;
        checked += 1;
    }
    let data = generate_synthetic(5, 6, 40, 1.0, 3).unwrap();
    let spec = PartitionSpec {
        clients: 5,
        method: PartitionMethod::DominantLabel { p: 100.0, phi: 1 },
    };
    for s in partition(&data, &spec, 1).map_err(|e| e.to_string())? {
        let l = s.dominant_label.ok_or("no dominant label")?;
        let mut expected = vec![0; 5];
        expected[l] = 40;
        ensure(s.histogram == expected, || {
            format!("p=100 client {} holds {:?}", s.client_id, s.histogram)
        })?;
    }
    let data = generate_synthetic(10, 10, 100, 1.0, 8).unwrap();
    let mut medians = Vec::new();
    for alpha in [0.1, 0.3, 10.0] {
        let per_seed: Vec<f64> = (0..50)
            .map(|seed| {
                let spec = PartitionSpec {
                    clients: 10,
                    method: PartitionMethod::Dirichlet { alpha },
                };
                let shards = partition(&data, &spec, seed).unwrap();
                shards.iter().map(|s| label_entropy(&s.histogram)).sum::<f64>() / shards.len() as f64
            })
            .collect();
        medians.push(median(&per_seed));
    }
    ensure(medians[0] < medians[1] && medians[1] < medians[2], || {
        format!("entropy medians {medians:?} not increasing in alpha")
    })?;
    Ok(format!(
        "{checked} partitions conserve samples with consistent histograms; p=100 exact; entropy {:.3} < {:.3} < {:.3}",
        medians[0], medians[1], medians[2]
    ))
}

// 8, 9, 10

const TOY_SUITE: &str = r#"
seeds = [0, 1, 2, 3, 4]

[data]
kind = "synthetic"
labels = 4
dim = 8
per_label = 500
separation = 2.0
seed = 7

[base]
protocol = "sfl"
rounds = 30
model = { hidden = [32, 32] }
split = { cut1 = 1 }
order = { kind = "cyclic", phi = 1 }
partition = { clients = 4, method = { kind = "dominant_label", p = 80.0, phi = 1 } }
optimizer = { batch_size = 32 }

[[variants]]
name = "sfl-shallow"

[[variants]]
name = "hydra"
protocol = "sfl_hydra"
split = { cut2 = 4 }

[[variants]]
name = "sfl-deep"
split = { cut1 = 4 }
"#;

struct Toy {
    outcomes: Vec<ConfigOutcome>,
    took: Duration,
}

impl Toy {
    fn get(&self, name: &str) -> &ConfigOutcome {
        self.outcomes.iter().find(|o| o.name == name).unwrap()
    }
}

fn toy_runs(dir: &Path) -> Result<Toy, String> {
    let t = Instant::now();
    let suite = Suite::parse(TOY_SUITE, dir).map_err(|e| e.to_string())?;
    let jobs = std::thread::available_parallelism().map_or(1, |n| n.get());
    let outcomes = run_suite(&suite, dir, jobs).map_err(|e| e.to_string())?;
    Ok(Toy {
        outcomes,
        took: t.elapsed(),
    })
}

fn last_rounds_median(row: &[f64]) -> f64 {
    median(&row[row.len().saturating_sub(5)..])
}

fn intra_round_forgetting(toy: &Result<Toy, String>) -> Check {
    let toy = toy.as_ref().map_err(Clone::clone)?;
    let sfl = toy.get("sfl-shallow");
    let pp = sfl.report.per_position.as_ref().ok_or("no per-position matrix")?;
    let first = last_rounds_median(&pp[0]);
    let last = last_rounds_median(&pp[3]);
    ensure(last - first >= 0.05, || {
        format!("position 4 {last:.3} vs position 1 {first:.3}")
    })?;
    Ok(format!(
        "position 4 accuracy {last:.3} vs position 1 {first:.3} (+{:.1} points); 15 runs in {:.1?}",
        100.0 * (last - first),
        toy.took
    ))
}

fn hydra_benefit(toy: &Result<Toy, String>) -> Check {
    let toy = toy.as_ref().map_err(Clone::clone)?;
    let sfl = toy.get("sfl-shallow");
    let hydra = toy.get("hydra");
    let wins = sfl
        .report
        .per_run
        .iter()
        .zip(&hydra.report.per_run)
        .filter(|(s, h)| h.reported_pg < s.reported_pg && h.reported_acc > s.reported_acc)
        .count();
    let reduction = 1.0 - hydra.report.reported_pg.median / sfl.report.reported_pg.median;
    ensure(wins >= 4 && reduction >= 0.2, || {
        format!("{wins}/5 seeds improved, PG reduction {:.1}%", 100.0 * reduction)
    })?;
    ensure(toy.took <= Duration::from_secs(360), || format!("took {:.1?}", toy.took))?;
    Ok(format!(
        "Hydra better on PG and accuracy in {wins}/5 seeds; PG {:.3} -> {:.3} ({:.1}% lower), accuracy {:.3} -> {:.3}",
        sfl.report.reported_pg.median,
        hydra.report.reported_pg.median,
        100.0 * reduction,
        sfl.report.reported_acc.median,
        hydra.report.reported_acc.median
    ))
}

fn cut_layer_trend(toy: &Result<Toy, String>) -> Check {
    let toy = toy.as_ref().map_err(Clone::clone)?;
    let shallow = toy.get("sfl-shallow").report.reported_pg.median;
    let deep = toy.get("sfl-deep").report.reported_pg.median;
    ensure(deep <= shallow, || format!("deep PG {deep:.3} > shallow PG {shallow:.3}"))?;
    Ok(format!("deep-cut PG {deep:.3} <= shallow-cut PG {shallow:.3}"))
}

// 11

const DETERMINISM_SUITE: &str = r#"
seeds = [3, 9]

[data]
kind = "synthetic"
labels = 4
dim = 6
per_label = 50
separation = 2.0
seed = 1

[base]
protocol = "sfl"
rounds = 3
model = { hidden = [8, 8] }
split = { cut1 = 1, cut2 = 4 }
order = { kind = "cyclic_and_reverse", phi = 1 }
partition = { clients = 4, method = { kind = "dominant_label", p = 80.0, phi = 1 } }
optimizer = { batch_size = 16 }

[[variants]]
name = "sfl"

[[variants]]
name = "hydra"
protocol = "sfl_hydra"

[[variants]]
name = "v3"
protocol = "splitfed_v3"

[[variants]]
name = "multihead"
protocol = "multihead_fl"
"#;

fn snapshot(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).map_err(|e| e.to_string())? {
        let entry = entry.map_err(|e| e.to_string())?;
        let name = entry.file_name().to_string_lossy().into_owned();
        out.insert(name, std::fs::read(entry.path()).map_err(|e| e.to_string())?);
    }
    Ok(out)
}

fn determinism() -> Check {
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (a, b) = (root.path().join("a"), root.path().join("b"));
    let suite = Suite::parse(DETERMINISM_SUITE, root.path()).map_err(|e| e.to_string())?;
    run_suite(&suite, &a, 1).map_err(|e| e.to_string())?;
    let first = snapshot(&a)?;
    run_suite(&suite, &a, 3).map_err(|e| e.to_string())?;
    run_suite(&suite, &b, 4).map_err(|e| e.to_string())?;
    let rerun = snapshot(&a)?;
    let fresh = snapshot(&b)?;
    ensure(first.len() > 20, || format!("only {} files written", first.len()))?;
    for (name, bytes) in &first {
        ensure(rerun.get(name) == Some(bytes), || format!("{name} changed on rerun"))?;
        ensure(fresh.get(name) == Some(bytes), || format!("{name} differs in a fresh directory"))?;
    }
    ensure(first.len() == rerun.len() && first.len() == fresh.len(), || {
        "file sets differ".into()
    })?;
    Ok(format!(
        "{} CSV/JSON files byte-identical across reruns, output directories and job counts",
        first.len()
    ))
}

fn main() {
    let toy_dir = tempfile::tempdir().expect("temp dir");
    let mut toy: Option<Result<Toy, String>> = None;
    let mut failed = 0;
    let criteria: Vec<Criterion> = vec![
        ("gradient correctness", Box::new(gradient_correctness)),
        ("split transparency", Box::new(split_transparency)),
        ("protocol equivalences", Box::new(protocol_equivalences)),
        ("grouping", Box::new(grouping)),
        ("metric oracles", Box::new(metric_oracles)),
        ("schedule laws", Box::new(schedule_laws)),
        ("partitioner laws", Box::new(partition_laws)),
        (
            "intra-round forgetting",
            Box::new(|| intra_round_forgetting(toy.get_or_insert_with(|| toy_runs(toy_dir.path())))),
        ),
    ];
    let mut run_one = |i: usize, name: &str, f: &mut dyn FnMut() -> Check| {
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            Err(format!("panic: {msg}"))
        });
        match result {
            Ok(detail) => println!("criterion {i} ({name}): PASS: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {i} ({name}): FAIL: {detail}");
            }
        }
    };
    for (i, (name, mut f)) in criteria.into_iter().enumerate() {
        run_one(i + 1, name, &mut *f);
    }
    let toy = toy.unwrap_or_else(|| toy_runs(toy_dir.path()));
    run_one(9, "hydra benefit", &mut || hydra_benefit(&toy));
    run_one(10, "cut-layer trend", &mut || cut_layer_trend(&toy));
    run_one(11, "determinism", &mut determinism);
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
    println!("all 11 criteria passed");
}
