use fedssa_core::experiment::{two_regime_federation, TwoRegimeSpec};
use fedssa_core::federation::*;
use fedssa_core::graphs::{FederationDataset, LocalGraph, TaskKind};
use fedssa_core::models::{AdamConfig, ClientModel, ModelDims, PairSampling};
use fedssa_core::numcore::DenseMatrix;
use fedssa_core::rng::SeedStream;
use fedssa_core::semantic::ClusterFeature;
use std::collections::BTreeSet;

fn small_spec(clients: usize) -> TwoRegimeSpec {
    TwoRegimeSpec {
        clients,
        nodes: 40,
        classes: 3,
        dim: 10,
        marker_len: 2,
        ..TwoRegimeSpec::default()
    }
}

fn small_cfg(method: Method) -> FedConfig {
    FedConfig {
        rounds: 3,
        epochs: 2,
        order: 2,
        hidden: 8,
        latent: 3,
        method,
        ..FedConfig::default()
    }
}

fn dataset(clients: usize, seed: u64) -> FederationDataset {
    two_regime_federation(&small_spec(clients), seed).unwrap()
}

fn csv_bytes(rounds: &[RoundMetrics]) -> (Vec<u8>, Vec<u8>) {
    let (mut m, mut d) = (Vec::new(), Vec::new());
    write_metrics_csv(rounds, &mut m).unwrap();
    write_diagnostics_csv(rounds, &mut d).unwrap();
    (m, d)
}

#[test]
fn client_visiting_order_does_not_change_results() {
    let ds = dataset(4, 1);
    for method in [Method::FedSsa, Method::FedAvg, Method::Local] {
        let cfg = small_cfg(method);
        let a = run_federation(&ds, &cfg, 9).unwrap();
        let b = run_federation_ordered(&ds, &cfg, 9, &[2, 0, 3, 1]).unwrap();
        assert_eq!(csv_bytes(&a.rounds), csv_bytes(&b.rounds), "{method}");
        assert_eq!(a.models, b.models, "{method}");
    }
}

#[test]
fn repeated_runs_are_byte_identical() {
    let ds = dataset(4, 2);
    let cfg = small_cfg(Method::FedSsa);
    let a = run_federation(&ds, &cfg, 5).unwrap();
    let b = run_federation(&ds, &cfg, 5).unwrap();
    assert_eq!(csv_bytes(&a.rounds), csv_bytes(&b.rounds));
    let c = run_federation(&ds, &cfg, 6).unwrap();
    assert_ne!(csv_bytes(&a.rounds).0, csv_bytes(&c.rounds).0);
}

#[test]
fn local_training_sends_nothing() {
    let out = run_federation(&dataset(4, 3), &small_cfg(Method::Local), 0).unwrap();
    assert_eq!(out.uploads_built, 0);
    assert_eq!(out.messages, (0, 0));
    assert!(out.last_uploads.is_empty() && out.last_server.is_none());
    for r in &out.rounds {
        assert!(r.diagnostics.is_none());
        assert!(r.clients.iter().all(|c| c.bytes_up == 0 && c.bytes_down == 0));
    }
}

#[test]
fn disabling_both_branches_reproduces_local_training() {
    let ds = dataset(4, 4);
    let local = run_federation(&ds, &small_cfg(Method::Local), 1).unwrap();
    let cfg = FedConfig {
        ablation: Ablation {
            semantic: false,
            structural: false,
        },
        ..small_cfg(Method::FedSsa)
    };
    let off = run_federation(&ds, &cfg, 1).unwrap();
    assert_eq!(local.models, off.models);
    for (l, o) in local.rounds.iter().zip(&off.rounds) {
        for (a, b) in l.clients.iter().zip(&o.clients) {
            assert_eq!(a.eval, b.eval);
        }
    }
}

#[test]
fn averaging_leaves_every_client_with_the_same_parameters() {
    let out = run_federation(&dataset(4, 5), &small_cfg(Method::FedAvg), 2).unwrap();
    assert!(out.models.windows(2).all(|w| w[0] == w[1]));
    assert_eq!(out.messages, (12, 12));
}

#[test]
fn zero_epochs_keep_the_common_initialization() {
    let ds = dataset(4, 6);
    let cfg = FedConfig {
        epochs: 0,
        ..small_cfg(Method::FedSsa)
    };
    let out = run_federation(&ds, &cfg, 3).unwrap();
    let dims = ModelDims {
        features: ds.feature_dim(),
        classes: ds.num_classes(),
        order: cfg.order,
        hidden: cfg.hidden,
        latent: cfg.latent,
    };
    let init = ClientModel::init(dims, &mut SeedStream::new(3).named("init").rng());
    assert!(out.models.iter().all(|m| *m == init));
}

#[test]
fn byte_counts_match_the_messages_sent() {
    let out = run_federation(&dataset(4, 7), &small_cfg(Method::FedSsa), 4).unwrap();
    let last = out.rounds.last().unwrap();
    let server = out.last_server.as_ref().unwrap();
    for ((row, up), b) in last.clients.iter().zip(&out.last_uploads).zip(&server.broadcasts) {
        assert_eq!(row.client, up.client);
        assert_eq!(row.bytes_up, up.wire_bytes());
        assert_eq!(row.bytes_down, b.wire_bytes());
    }
    assert_eq!(out.uploads_built, 12);
}

#[test]
fn uploads_carry_only_model_statistics() {
    let ds = dataset(4, 8);
    let cfg = small_cfg(Method::FedSsa);
    let out = run_federation(&ds, &cfg, 0).unwrap();
    for up in &out.last_uploads {
        let json = serde_json::to_value(up).unwrap();
        let keys: BTreeSet<&str> = json.as_object().unwrap().keys().map(String::as_str).collect();
        assert_eq!(
            keys,
            BTreeSet::from(["client", "coeffs", "class_gaussians", "energy", "sample_counts"])
        );
        let n = ds.clients()[up.client].node_count();
        let d = ds.feature_dim();
        assert_eq!(up.coeffs.len(), cfg.order + 1);
        assert_eq!(up.energy.s.shape(), (d, cfg.order + 1));
        assert_eq!(up.energy.q.shape(), (d, cfg.order + 1));
        assert_eq!(up.sample_counts.len(), ds.num_classes());
        for g in &up.class_gaussians {
            assert_eq!(g.mean.len(), cfg.latent);
            assert_eq!(g.cov.shape(), (cfg.latent, cfg.latent));
        }
        // Nothing node-indexed leaves the client.
        assert!(cfg.latent < n && d < n);
        let train = ds.clients()[up.client].masks().train.len();
        assert_eq!(up.sample_counts.iter().sum::<usize>(), train);
    }
}

fn uploads(seed: u64) -> (Vec<ClientUpload>, ServerConfig) {
    let out = run_federation(&dataset(4, seed), &small_cfg(Method::FedSsa), seed).unwrap();
    let cfg = ServerConfig {
        num_classes: 3,
        k_node: 3,
        k_struct: 2,
        cluster_feature: ClusterFeature::Sample,
    };
    (out.last_uploads, cfg)
}

#[test]
fn missing_upload_is_a_protocol_error_naming_the_client() {
    let (mut ups, cfg) = uploads(10);
    ups.remove(2);
    let err = server_round(&ups, &[0, 1, 2, 3], &cfg, &SeedStream::new(0)).unwrap_err();
    assert!(matches!(err, FederationError::Protocol { client: 2, .. }), "{err}");

    let (mut ups, cfg) = uploads(10);
    let extra = ups[0].clone();
    ups.push(extra);
    let err = server_round(&ups, &[0, 1, 2, 3], &cfg, &SeedStream::new(0)).unwrap_err();
    assert!(matches!(err, FederationError::Protocol { client: 0, .. }), "{err}");
}

fn assert_echo(up: &ClientUpload, b: &ServerBroadcast) {
    assert_eq!(b.client, up.client);
    assert_eq!(b.coeff_mean, up.coeffs);
    assert_eq!(b.representatives.len(), up.class_gaussians.len());
    for (r, g) in b.representatives.iter().zip(&up.class_gaussians) {
        assert_eq!(r.class, g.class);
        for (x, y) in r.mean.iter().zip(&g.mean) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!(r.cov.sub(&g.cov).unwrap().max_abs() < 1e-12);
    }
}

#[test]
fn singleton_clusters_echo_each_clients_own_upload() {
    let (ups, mut cfg) = uploads(11);
    cfg.k_node = 4;
    cfg.k_struct = 4;
    cfg.cluster_feature = ClusterFeature::Mean;
    let out = server_round(&ups, &[0, 1, 2, 3], &cfg, &SeedStream::new(1)).unwrap();
    for (up, b) in ups.iter().zip(&out.broadcasts) {
        assert_echo(up, b);
    }

    let one = vec![ups[1].clone()];
    let out = server_round(&one, &[1], &cfg, &SeedStream::new(1)).unwrap();
    assert_echo(&one[0], &out.broadcasts[0]);
}

#[test]
fn broadcast_for_another_client_is_rejected() {
    let (ups, cfg) = uploads(12);
    let out = server_round(&ups, &[0, 1, 2, 3], &cfg, &SeedStream::new(0)).unwrap();
    let ds = dataset(4, 12);
    let dims = ModelDims {
        features: ds.feature_dim(),
        classes: 3,
        order: 2,
        hidden: 8,
        latent: 3,
    };
    let model = ClientModel::init(dims, &mut SeedStream::new(0).rng());
    let mut client = ClientState::new(0, ds.clients()[0].clone(), TaskKind::Multiclass, model, AdamConfig::default()).unwrap();
    let obj = LocalObjective {
        semantic: true,
        structural: true,
        lambda1: 1e-3,
        lambda2: 1e-3,
        pair_sampling: PairSampling::Balanced,
        w_max: 5.0,
    };
    let err = client
        .client_round(Some(&out.broadcasts[1]), 1, &obj, 2, &SeedStream::new(0))
        .unwrap_err();
    assert!(matches!(err, FederationError::Protocol { client: 0, .. }));
    assert_eq!(client.uploads_built(), 0);
}

#[test]
fn divergence_rolls_back_and_names_the_client() {
    let g = dataset(2, 13).clients()[0].clone();
    let huge = g.features().map(|v| v * 1e300);
    let g = LocalGraph::new(g.node_count(), g.edges().to_vec(), huge, g.labels().to_vec(), g.num_classes(), g.masks().clone()).unwrap();
    let dims = ModelDims {
        features: g.feature_dim(),
        classes: g.num_classes(),
        order: 2,
        hidden: 8,
        latent: 3,
    };
    let model = ClientModel::init(dims, &mut SeedStream::new(0).rng());
    let mut client = ClientState::new(7, g, TaskKind::Multiclass, model.clone(), AdamConfig::default()).unwrap();
    let obj = LocalObjective {
        semantic: false,
        structural: false,
        lambda1: 0.0,
        lambda2: 0.0,
        pair_sampling: PairSampling::Balanced,
        w_max: 5.0,
    };
    let err = client.train(None, 3, &obj, 4, &SeedStream::new(0)).unwrap_err();
    assert!(
        matches!(err, FederationError::Divergence { client: 7, round: 4, .. }),
        "{err}"
    );
    assert_eq!(*client.model(), model);
}

#[test]
fn invalid_configurations_are_rejected() {
    let ds = dataset(2, 14);
    let bad = [
        FedConfig {
            k_node: 0,
            ..small_cfg(Method::FedSsa)
        },
        FedConfig {
            lambda1: -1.0,
            ..small_cfg(Method::FedSsa)
        },
        FedConfig {
            order: 20,
            ..small_cfg(Method::FedSsa)
        },
    ];
    for cfg in bad {
        assert!(matches!(run_federation(&ds, &cfg, 0), Err(FederationError::Config(_))));
    }
    assert!(matches!(
        run_federation_ordered(&ds, &small_cfg(Method::Local), 0, &[0, 0]),
        Err(FederationError::Config(_))
    ));
}

#[test]
fn diagnostics_are_reported_every_fedssa_round() {
    let out = run_federation(&dataset(4, 15), &small_cfg(Method::FedSsa), 0).unwrap();
    for r in &out.rounds {
        let d = r.diagnostics.as_ref().unwrap();
        assert!(d.floor.value > 0.0 && d.floor.value.is_finite());
        assert!(d.heterogeneity.eps_u <= d.unclustered.eps_u + 1e-12);
        assert!(d.heterogeneity.delta_mu <= d.unclustered.delta_mu + 1e-12);
    }
    let (_, diag) = csv_bytes(&out.rounds);
    let text = String::from_utf8(diag).unwrap();
    assert_eq!(text.lines().next().unwrap(), DIAGNOSTICS_HEADER.join(","));
    assert_eq!(text.lines().filter(|l| l.contains(",clustered,")).count(), 3);
}

#[test]
fn matrices_in_messages_round_trip_through_json() {
    let (ups, _) = uploads(16);
    let json = serde_json::to_string(&ups[0]).unwrap();
    let back: ClientUpload = serde_json::from_str(&json).unwrap();
    assert_eq!(back, ups[0]);
    let _: DenseMatrix = back.energy.q;
}
