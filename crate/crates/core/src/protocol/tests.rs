use super::*;
use crate::data::{generate_blobs, partition_heterogeneous, BlobSpec, MinorClasses};
use crate::model::{Activation, OptimizerKind, Schedule};
use crate::weighting::simple_weights;

fn setup(n: usize) -> (Graph, Partition, Dataset, ModelSpec) {
    let ds = generate_blobs(BlobSpec {
        num_classes: 4,
        dim: 4,
        per_class: 40,
        spread: 0.3,
        seed: 5,
    })
    .unwrap();
    let (train, test) = ds.split_per_class(8).unwrap();
    let part = partition_heterogeneous(&train, n, MinorClasses::Fixed(2), None, 5).unwrap();
    let spec = ModelSpec::new(vec![4, 6, 4], Activation::Tanh).unwrap();
    (Graph::ring(n).unwrap(), part, test, spec)
}

fn cfg(scheme: Scheme, c: usize) -> RoundConfig {
    RoundConfig {
        epochs: 3,
        consensus_steps: c,
        batch_size: 8,
        scheme,
        seed: 11,
        optimizer: OptimizerConfig {
            kind: OptimizerKind::Adam,
            base_lr: 1e-2,
            schedule: Schedule::Constant,
        },
        init: InitMode::PerServer,
        record_timing: false,
    }
}

#[test]
fn adaptive_epoch_sends_one_message_per_directed_edge_per_kind() {
    let (g, part, test, spec) = setup(4);
    let mut counts = Vec::new();
    run_decentralized_observed(
        &cfg(Scheme::Dynaweight, 1),
        &g,
        &part,
        &spec,
        &test,
        &mut |v| {
            counts.push(v.messages);
            Ok(())
        },
    )
    .unwrap();
    let directed = 2 * g.edge_count();
    for m in counts {
        assert_eq!(
            m,
            MessageStats {
                params: directed,
                losses: directed,
                centralities: directed
            }
        );
    }
}

#[test]
fn extra_consensus_steps_reexchange_parameters() {
    let (g, part, test, spec) = setup(4);
    let mut counts = Vec::new();
    run_decentralized_observed(
        &cfg(Scheme::Dynaweight, 3),
        &g,
        &part,
        &spec,
        &test,
        &mut |v| {
            counts.push(v.messages.params);
            Ok(())
        },
    )
    .unwrap();
    assert!(counts.iter().all(|&p| p == 3 * 2 * g.edge_count()));

    let mut counts = Vec::new();
    run_decentralized_observed(&cfg(Scheme::Simple, 2), &g, &part, &spec, &test, &mut |v| {
        counts.push(v.messages);
        Ok(())
    })
    .unwrap();
    let directed = 2 * g.edge_count();
    assert!(counts.iter().all(|m| *m
        == MessageStats {
            params: 2 * directed,
            losses: 0,
            centralities: 0
        }));
}

#[test]
fn doubly_stochastic_gossip_preserves_the_mean() {
    let (g, part, _, spec) = setup(6);
    let c = cfg(Scheme::Metropolis, 4);
    let mut servers = make_servers(&c, &spec, &part.shards).unwrap();
    let before = average_params(&servers.iter().map(|s| &s.params).collect::<Vec<_>>()).unwrap();
    let mut mb = Mailbox::new(&g);
    gossip_phase(&mut servers, &g, &metropolis_weights(&g), 4, &mut mb, None).unwrap();
    let after = average_params(&servers.iter().map(|s| &s.params).collect::<Vec<_>>()).unwrap();
    for (a, b) in before.iter().zip(after.iter()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn gossip_rejects_matrix_off_the_graph() {
    let (g, part, _, spec) = setup(4);
    let c = cfg(Scheme::Simple, 1);
    let mut servers = make_servers(&c, &spec, &part.shards).unwrap();
    let w = WeightMatrix::from_dense(4, vec![0.25; 16]).unwrap();
    let mut mb = Mailbox::new(&g);
    assert!(matches!(
        gossip_phase(&mut servers, &g, &w, 1, &mut mb, None),
        Err(Error::Sparsity { .. })
    ));
}

#[test]
fn fedavg_leaves_all_servers_identical() {
    let (_, part, test, spec) = setup(4);
    let logs = run_fedavg(
        &cfg(Scheme::Fedavg, 1),
        &part.shards,
        &spec,
        &test,
        &mut |_| Ok(()),
    )
    .unwrap();
    assert!(logs.iter().all(|l| l.consensus_error == 0.0));
}

#[test]
fn non_decentralized_scheme_is_rejected() {
    let (g, part, test, spec) = setup(4);
    assert!(Simulation::new(&cfg(Scheme::Fedavg, 1), &g, &part.shards, &spec, &test).is_err());
    assert_eq!("dynaweight".parse::<Scheme>().unwrap(), Scheme::Dynaweight);
    assert!("gossip".parse::<Scheme>().is_err());
}

#[test]
fn runs_are_reproducible_and_errors_carry_the_epoch() {
    let (g, part, test, spec) = setup(4);
    let a = run_decentralized(&cfg(Scheme::Dynaweight, 1), &g, &part, &spec, &test).unwrap();
    let b = run_decentralized(&cfg(Scheme::Dynaweight, 1), &g, &part, &spec, &test).unwrap();
    assert_eq!(a, b);
    assert_eq!(a[0].epoch, 1);
    assert!(a[0].weight_rows.is_some());

    let err =
        run_decentralized_observed(&cfg(Scheme::Simple, 1), &g, &part, &spec, &test, &mut |v| {
            if v.epoch == 2 {
                Err(Error::Contract("stop".into()))
            } else {
                Ok(())
            }
        })
        .unwrap_err();
    assert!(matches!(err, Error::Epoch { epoch: 2, .. }));
}

fn sgd(lr: f64) -> OptimizerConfig {
    OptimizerConfig {
        kind: OptimizerKind::Sgd,
        base_lr: lr,
        schedule: Schedule::Constant,
    }
}

#[test]
fn local_epoch_examples() {
    let (_, part, _, spec) = setup(4);
    let shard = &part.shards[0];
    let p = init_params(&spec, 1);

    let mut s = ServerState::new(0, p.clone(), shard, OptimizerState::new(sgd(0.0), p.len()));
    local_epoch(&mut s, &spec, 0, 8, 3).unwrap();
    assert_eq!(s.params, p);

    let mut s = ServerState::new(0, p.clone(), shard, OptimizerState::new(sgd(0.1), p.len()));
    local_epoch(&mut s, &spec, 0, shard.len(), 3).unwrap();
    let g = crate::model::gradient(&p, &spec, shard).unwrap();
    let expected: Vec<f64> = p.iter().zip(g.iter()).map(|(t, d)| t - 0.1 * d).collect();
    assert_eq!(s.params.0, expected);

    let mut a = ServerState::new(2, p.clone(), shard, OptimizerState::new(sgd(0.05), p.len()));
    let mut b = a.clone();
    local_epoch(&mut a, &spec, 4, 8, 3).unwrap();
    local_epoch(&mut b, &spec, 4, 8, 3).unwrap();
    assert_eq!(a.params, b.params);
}

#[test]
fn readout_message_counts() {
    let (_, part, _, spec) = setup(8);
    let c = cfg(Scheme::Dynaweight, 1);
    let servers = make_servers(&c, &spec, &part.shards).unwrap();
    for (g, total) in [
        (Graph::ring(8).unwrap(), 16),
        (Graph::line(8).unwrap(), 14),
        (Graph::chordal(8).unwrap(), 32),
    ] {
        let mut mb = Mailbox::new(&g);
        let got = readout_phase(&servers, &g, &mut mb).unwrap();
        assert_eq!(mb.stats().params, total);
        for (i, r) in got.iter().enumerate() {
            assert_eq!(r.len(), g.neighbors(i).len());
        }
    }
    let g = Graph::line(8).unwrap();
    assert_eq!(
        readout_phase(&servers, &g, &mut Mailbox::new(&g)).unwrap()[0].len(),
        1
    );
}

#[test]
fn zero_params_give_uniform_loss_centrality() {
    let ds = generate_blobs(BlobSpec {
        num_classes: 10,
        dim: 3,
        per_class: 8,
        spread: 0.5,
        seed: 1,
    })
    .unwrap();
    let part = crate::data::partition_iid(&ds, 4, 2).unwrap();
    let spec = ModelSpec::new(vec![3, 5, 10], Activation::Tanh).unwrap();
    let g = Graph::ring(4).unwrap();
    let mut servers: Vec<ServerState<'_>> = part
        .shards
        .iter()
        .enumerate()
        .map(|(i, s)| {
            ServerState::new(
                i,
                ParamVector::zeros(spec.param_count()),
                s,
                OptimizerState::new(sgd(0.0), spec.param_count()),
            )
        })
        .collect();
    let mut mb = Mailbox::new(&g);
    let got = readout_phase(&servers, &g, &mut mb).unwrap();
    let table = evaluation_phase(&mut servers, &g, &spec, &got, &mut mb).unwrap();
    let ln10 = 10f64.ln();
    for j in 0..4 {
        for &(_, l) in table.row(j) {
            assert!((l - ln10).abs() < 1e-12);
        }
        assert!((table.centralities()[j] - 1.0 / ln10).abs() < 1e-12);
    }
    assert_eq!(mb.stats().losses, 8);
}

#[test]
fn gossip_fixed_points() {
    let (g, part, _, spec) = setup(6);
    let c = cfg(Scheme::Simple, 1);
    let mut servers = make_servers(&c, &spec, &part.shards).unwrap();
    let before: Vec<ParamVector> = servers.iter().map(|s| s.params.clone()).collect();
    gossip_phase(
        &mut servers,
        &g,
        &WeightMatrix::identity(6),
        3,
        &mut Mailbox::new(&g),
        None,
    )
    .unwrap();
    assert!(servers.iter().zip(&before).all(|(s, b)| s.params == *b));

    let shared = init_params(&spec, 4);
    for s in &mut servers {
        s.params = shared.clone();
    }
    gossip_phase(
        &mut servers,
        &g,
        &simple_weights(&g),
        2,
        &mut Mailbox::new(&g),
        None,
    )
    .unwrap();
    for s in &servers {
        for (a, b) in s.params.iter().zip(shared.iter()) {
            assert!((a - b).abs() <= 1e-15);
        }
    }
}

#[test]
fn equal_losses_reproduce_simple_weights() {
    let ds = generate_blobs(BlobSpec {
        num_classes: 3,
        dim: 4,
        per_class: 20,
        spread: 0.3,
        seed: 2,
    })
    .unwrap();
    let shards = vec![ds.clone(); 5];
    let spec = ModelSpec::new(vec![4, 6, 3], Activation::Tanh).unwrap();
    let g = Graph::ring(5).unwrap();
    let mut c = cfg(Scheme::Dynaweight, 1);
    c.init = InitMode::Shared;
    // No training keeps every model identical, so all losses agree.
    c.optimizer = sgd(0.0);
    let mut sim = Simulation::new(&c, &g, &shards, &spec, &ds).unwrap();
    sim.step().unwrap();
    let w = sim.last_weights().unwrap();
    let s = simple_weights(&g);
    for (a, b) in w.as_slice().iter().zip(s.as_slice()) {
        assert!((a - b).abs() <= 1e-12);
    }
}

#[test]
fn average_of_two_vectors() {
    let avg = average_params(&[vec![0.0, 2.0], vec![2.0, 0.0]]).unwrap();
    assert_eq!(avg.0, vec![1.0, 1.0]);
}

#[test]
fn centralized_training_on_separable_blobs() {
    let ds = generate_blobs(BlobSpec {
        num_classes: 2,
        dim: 4,
        per_class: 120,
        spread: 0.2,
        seed: 3,
    })
    .unwrap();
    let (train, test) = ds.split_per_class(20).unwrap();
    let spec = ModelSpec::new(vec![4, 8, 2], Activation::Tanh).unwrap();
    let mut c = cfg(Scheme::Centralized, 1);
    c.epochs = 20;
    c.batch_size = 16;
    c.optimizer = OptimizerConfig {
        kind: OptimizerKind::Adam,
        base_lr: 1e-3,
        schedule: Schedule::Constant,
    };
    let mut losses = Vec::new();
    let logs = run_centralized(&c, &train, &spec, &test, &mut |v| {
        losses.push(crate::model::loss(&v.servers[0].params, &spec, &train)?);
        Ok(())
    })
    .unwrap();
    assert!(losses[..5].windows(2).all(|w| w[1] <= w[0]), "{losses:?}");
    assert!(logs.iter().any(|l| l.avg_test_accuracy > 0.95));
}
