use vran_core::experiment::benchmark;
use vran_core::features::{scaled_features, sequence};
use vran_core::model::{Link, Node, NodeKind, Scenario, SplitOption, SystemParams};
use vran_core::nn::checkpoint::Checkpoint;
use vran_core::nn::{policy_forward, Decode, PolicyConfig};
use vran_core::topology::build_topology;
use vran_core::train::{
    pretrain_ensemble, train, train_from, PenaltyMode, TrainConfig, TrainOutput, TrainState,
};

fn small(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch: 16,
        lr_agent: 1e-2,
        network: PolicyConfig { embed: 8, hidden: 8, ..PolicyConfig::default() },
        ..TrainConfig::default()
    }
}

/// One DU 1500 km from the CU: far too distant for S2 and S3, and S1 is cheaper
/// than S0.
fn far_single_du() -> Scenario {
    let nodes = vec![
        Node { id: 0, kind: NodeKind::CU, x_km: Some(0.0), y_km: Some(0.0) },
        Node { id: 1, kind: NodeKind::DU, x_km: Some(1500.0), y_km: Some(0.0) },
    ];
    let links = vec![Link { a: 1, b: 0, capacity_mbps: 10_000.0, cost_per_mbps: 1e-3, length_km: None }];
    Scenario::new(build_topology(nodes, links).unwrap(), vec![100.0], SystemParams::default()).unwrap()
}

#[test]
fn single_du_learns_its_only_sensible_split() {
    let s = far_single_du();
    let out = train(&small(300), &s).unwrap();
    let feats = sequence(&scaled_features(&s), &[0], None);
    let r = policy_forward(&out.state.policy, &feats, Decode::Greedy, 1.0).unwrap();
    assert_eq!(r.actions, vec![SplitOption::S1]);
    assert!(r.step_probs[0][1] > 0.99, "{:?}", r.step_probs[0]);
}

#[test]
fn resumed_run_replays_exactly() {
    let s = benchmark::standard();
    let cfg = TrainConfig { batch: 4, ..small(6) };
    let full = train(&cfg, &s).unwrap();

    let first = train(&TrainConfig { epochs: 3, ..cfg.clone() }, &s).unwrap();
    let bytes = first.state.to_checkpoint().to_bytes();
    let restored = TrainState::from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
    let rest = train_from(&cfg, &s, restored, &TrainOutput::default()).unwrap();

    assert_eq!(rest.state, full.state);
    let joined: Vec<_> = first.log.iter().chain(&rest.log).collect();
    assert_eq!(joined.len(), full.log.len());
    for (a, b) in joined.iter().zip(&full.log) {
        assert_eq!(a.loss.to_bits(), b.loss.to_bits(), "epoch {}", b.epoch);
        assert_eq!(a.lagrangian.to_bits(), b.lagrangian.to_bits());
    }
}

#[test]
fn ensemble_members_differ_and_single_member_equals_train() {
    let s = benchmark::standard();
    let cfg = TrainConfig { batch: 4, seed: 11, ..small(3) };
    let three = pretrain_ensemble(&cfg, &s, 3, None).unwrap();
    let hashes: Vec<String> = three.iter().map(|o| o.state.to_checkpoint().hash()).collect();
    assert!(hashes[0] != hashes[1] && hashes[1] != hashes[2] && hashes[0] != hashes[2]);
    let one = pretrain_ensemble(&cfg, &s, 1, None).unwrap();
    assert_eq!(one[0].state, train(&cfg, &s).unwrap().state);
    assert_eq!(hashes[0], one[0].state.to_checkpoint().hash());
}

#[test]
fn ensemble_writes_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig { batch: 2, ..small(2) };
    pretrain_ensemble(&cfg, &far_single_du(), 2, Some(dir.path())).unwrap();
    for k in 0..2 {
        Checkpoint::load(&dir.path().join(format!("model_{k}.ckpt"))).unwrap();
    }
}

/// Over the last tenth of a run the critic leaves less variance in
/// `L - b` than there is in `L` itself.
#[test]
fn baseline_reduces_variance() {
    let s = benchmark::standard();
    let cfg = TrainConfig { batch: 32, lr_agent: 1e-3, ..small(400) };
    let out = train(&cfg, &s).unwrap();
    let tail = &out.log[out.log.len() * 9 / 10..];
    let var_l: f64 = tail.iter().map(|e| e.var_l).sum();
    let var_adv: f64 = tail.iter().map(|e| e.var_adv).sum();
    assert!(var_adv < var_l, "var(L - b) {var_adv} vs var(L) {var_l}");
}

#[test]
fn adaptive_coefficients_never_go_negative() {
    let cfg = TrainConfig {
        penalty: PenaltyMode::Adaptive { mu0: [0.0; 4], lr: 0.5 },
        batch: 8,
        ..small(20)
    };
    let out = train(&cfg, &benchmark::standard()).unwrap();
    let mut prev = [0.0; 4];
    for e in &out.log {
        for i in 0..4 {
            assert!(e.mu[i] >= prev[i], "coefficients only grow from zero");
        }
        prev = e.mu;
    }
}
