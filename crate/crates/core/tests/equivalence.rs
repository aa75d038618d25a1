mod common;

use common::{bits, config, dataset, joined, single_group};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use splitfed::data::{Dataset, PartitionMethod, PartitionSpec};
use splitfed::nn::LayerStack;
use splitfed::oracle::sequential_sgd;
use splitfed::protocols::{run, ExperimentConfig, OrderConfig, Protocol};
use splitfed::scheduling::OrderKind;
use splitfed::split::SplitSpec;

fn one_client(protocol: Protocol, cut1: usize) -> ExperimentConfig {
    let mut c = config(protocol);
    c.partition = PartitionSpec {
        clients: 1,
        method: PartitionMethod::Iid,
    };
    c.order = OrderConfig {
        kind: OrderKind::Random,
        phi: 1,
    };
    c.split = SplitSpec::new(cut1, None);
    c.rounds = 2;
    c
}

fn final_model(c: &ExperimentConfig, data: &Dataset, seed: u64) -> LayerStack {
    let out = run(c, data, seed).unwrap();
    match c.protocol {
        Protocol::Fl => joined(&out, &["model"]),
        Protocol::SplitFedV3 => {
            let p1 = out.model.parts.iter().find(|(n, _)| n.starts_with("part1/")).unwrap();
            LayerStack::concat(&[&p1.1, &joined(&out, &["part2"])]).unwrap()
        }
        Protocol::SflHydra => joined(&out, &["part1", "part2a", "part2b"]),
        Protocol::MultiheadFl => joined(&out, &["body", "head/0"]),
        _ => joined(&out, &["part1", "part2"]),
    }
}

#[test]
fn split_training_matches_centralized_sgd() {
    let data = dataset();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..5 {
        let cut1 = rng.random_range(1..7);
        let seed: u64 = rng.random();
        let reference = bits(&sequential_sgd(&one_client(Protocol::Sfl, cut1), &data, seed).unwrap());
        for protocol in [
            Protocol::Sfl,
            Protocol::SplitFedV1,
            Protocol::SplitFedV3,
            Protocol::SplitNn,
            Protocol::Fl,
        ] {
            let got = bits(&final_model(&one_client(protocol, cut1), &data, seed));
            assert_eq!(got, reference, "{protocol:?} cut1={cut1} seed={seed}");
        }
    }
}

#[test]
fn splitnn_is_sequential_sgd() {
    let data = dataset();
    for (cut1, seed) in [(1, 3), (3, 4), (6, 5)] {
        for kind in [OrderKind::Cyclic, OrderKind::CyclicAndReverse] {
            let mut c = config(Protocol::SplitNn);
            c.split = SplitSpec::new(cut1, None);
            c.order.kind = kind;
            let reference = bits(&sequential_sgd(&c, &data, seed).unwrap());
            assert_eq!(bits(&final_model(&c, &data, seed)), reference, "cut1={cut1}");
        }
    }
}

#[test]
fn single_head_hydra_follows_sfl() {
    let data = dataset();
    for rounds in 1..=3 {
        for seed in [1, 2] {
            let mut sfl = config(Protocol::Sfl);
            sfl.rounds = rounds;
            let mut hydra = sfl.clone();
            hydra.protocol = Protocol::SflHydra;
            hydra.hydra = Some(single_group());
            let a = run(&sfl, &data, seed).unwrap();
            let b = run(&hydra, &data, seed).unwrap();
            assert_eq!(
                bits(&joined(&a, &["part1", "part2"])),
                bits(&joined(&b, &["part1", "part2a", "part2b"])),
                "rounds={rounds} seed={seed}"
            );
            assert_eq!(a.record.per_label_acc, b.record.per_label_acc);
        }
    }
}

#[test]
fn splitfed_v1_follows_fedavg_reference() {
    let data = dataset();
    for rounds in 1..=3 {
        let v1 = {
            let mut c = config(Protocol::SplitFedV1);
            c.rounds = rounds;
            c
        };
        let mut fl = v1.clone();
        fl.protocol = Protocol::Fl;
        let a = run(&v1, &data, 5).unwrap();
        let b = run(&fl, &data, 5).unwrap();
        assert_eq!(bits(&joined(&a, &["part1", "part2"])), bits(&joined(&b, &["model"])));
        assert_eq!(a.record.global_acc, b.record.global_acc);
    }
}

#[test]
fn splitfed_v1_ignores_the_cut() {
    let data = dataset();
    let mut reference = None;
    for cut1 in 1..7 {
        let mut c = config(Protocol::SplitFedV1);
        c.split = SplitSpec::new(cut1, None);
        let got = bits(&final_model(&c, &data, 8));
        match &reference {
            None => reference = Some(got),
            Some(r) => assert_eq!(&got, r, "cut1={cut1}"),
        }
    }
}

#[test]
fn fedavg_reference_with_l2_matches_splitfed_v1() {
    use splitfed::protocols::{L2Mode, Regularization};
    let data = dataset();
    for mode in [L2Mode::Part2Only, L2Mode::FullModel] {
        let mut v1 = config(Protocol::SplitFedV1);
        v1.regularization = Regularization { mode, lambda: 1e-3 };
        let mut fl = v1.clone();
        fl.protocol = Protocol::Fl;
        assert_eq!(bits(&final_model(&v1, &data, 4)), bits(&final_model(&fl, &data, 4)));
    }
}

#[test]
fn single_head_multihead_is_fedavg() {
    let data = dataset();
    let mut mh = config(Protocol::MultiheadFl);
    mh.hydra = Some(single_group());
    let mut fl = mh.clone();
    fl.protocol = Protocol::Fl;
    fl.hydra = None;
    let a = run(&mh, &data, 3).unwrap();
    let b = run(&fl, &data, 3).unwrap();
    assert_eq!(bits(&joined(&a, &["body", "head/0"])), bits(&joined(&b, &["model"])));
}

#[test]
fn frozen_splitfed_v3_matches_frozen_v1_on_the_server() {
    let data = dataset();
    let mut v3 = config(Protocol::SplitFedV3);
    v3.freeze_part1 = true;
    let mut v1 = v3.clone();
    v1.protocol = Protocol::SplitFedV1;
    let a = run(&v3, &data, 6).unwrap();
    let b = run(&v1, &data, 6).unwrap();
    assert_eq!(bits(&joined(&a, &["part2"])), bits(&joined(&b, &["part2"])));
    let initial = bits(&joined(&b, &["part1"]));
    for (name, p) in &a.model.parts {
        if name.starts_with("part1/") {
            assert_eq!(bits(p), initial, "{name}");
        }
    }
}

#[test]
fn runs_are_reproducible_and_seed_sensitive() {
    let data = dataset();
    for protocol in [
        Protocol::Sfl,
        Protocol::SflHydra,
        Protocol::SplitFedV1,
        Protocol::Fl,
        Protocol::SplitFedV3,
        Protocol::SplitNn,
        Protocol::MultiheadFl,
    ] {
        let c = config(protocol);
        let a = run(&c, &data, 10).unwrap();
        let b = run(&c, &data, 10).unwrap();
        let other = run(&c, &data, 11).unwrap();
        assert_eq!(a.record, b.record, "{protocol:?}");
        assert_eq!(a.model, b.model, "{protocol:?}");
        assert_ne!(a.model, other.model, "{protocol:?}");
        assert_eq!(a.record.per_label_acc.len(), c.rounds);
        for row in &a.record.per_label_acc {
            assert_eq!(row.len(), 4);
            assert!(row.iter().all(|v| (0.0..=1.0).contains(v)));
        }
        assert!(a.record.global_acc.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

#[test]
fn invalid_config_is_rejected_before_training() {
    let data = dataset();
    let mut c = config(Protocol::Sfl);
    c.partition.clients = 6;
    let err = run(&c, &data, 0).err().unwrap().to_string();
    assert!(err.contains("phi"), "{err}");
}
