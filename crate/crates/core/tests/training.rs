use mgfn::fusion::{agglomerative_cluster, fuse_patterns, FuseOp, Linkage, MobilityPattern};
use mgfn::ingest::{aggregate_flow, FlowMatrix};
use mgfn::mgd::{pairwise_mgd, MgdConfig};
use mgfn::model::{init_params, ModelDims};
use mgfn::synth::{generate_city, SynthConfig};
use mgfn::training::{train, train_from, OptimizerKind, TrainConfig};

fn small_problem() -> (Vec<MobilityPattern>, FlowMatrix, ModelDims) {
    let cfg = SynthConfig { n_residential: 4, n_office: 4, days: 2, ..SynthConfig::default() };
    let (mg, _) = generate_city(&cfg).unwrap();
    let d = pairwise_mgd(&mg, &MgdConfig::default()).unwrap();
    let asg = agglomerative_cluster(&d, 3, Linkage::Average).unwrap();
    let patterns = fuse_patterns(&mg, &asg, FuseOp::Mean).unwrap();
    (patterns, aggregate_flow(&mg), ModelDims::new(8, 3, 8, 2, 1).unwrap())
}

#[test]
fn zero_learning_rate_freezes_parameters() {
    let (patterns, flow, dims) = small_problem();
    for optimizer in [OptimizerKind::adam(), OptimizerKind::Sgd] {
        let cfg = TrainConfig { epochs: 5, learning_rate: 0.0, optimizer, ..TrainConfig::default() };
        let out = train(&patterns, &flow, dims, &cfg).unwrap();
        assert_eq!(out.params, init_params(dims, cfg.seed).unwrap());
        let losses = out.history.losses();
        assert!(losses.iter().all(|l| *l == losses[0]));
        assert_eq!(out.final_loss, losses[0]);
    }
}

#[test]
fn training_is_deterministic_for_a_seed() {
    let (patterns, flow, dims) = small_problem();
    let cfg = TrainConfig { epochs: 20, seed: 3, ..TrainConfig::default() };
    let a = train(&patterns, &flow, dims, &cfg).unwrap();
    let b = train(&patterns, &flow, dims, &cfg).unwrap();
    assert_eq!(a.history.losses(), b.history.losses());
    assert_eq!(a.embedding, b.embedding);
    let c = train(&patterns, &flow, dims, &TrainConfig { seed: 4, ..cfg }).unwrap();
    assert_ne!(a.embedding, c.embedding);
}

#[test]
fn history_has_one_record_per_epoch() {
    let (patterns, flow, dims) = small_problem();
    let out = train(&patterns, &flow, dims, &TrainConfig { epochs: 7, ..TrainConfig::default() }).unwrap();
    let epochs: Vec<usize> = out.history.records.iter().map(|r| r.epoch).collect();
    assert_eq!(epochs, (0..7).collect::<Vec<_>>());
    assert!(out.history.records.windows(2).all(|w| w[1].seconds >= w[0].seconds));
}

#[test]
fn resuming_matches_a_longer_run_under_sgd() {
    // SGD carries no optimiser state, so 10 + 10 epochs equals 20
    let (patterns, flow, dims) = small_problem();
    let cfg = TrainConfig { epochs: 10, optimizer: OptimizerKind::Sgd, learning_rate: 1e-9, ..TrainConfig::default() };
    let half = train(&patterns, &flow, dims, &cfg).unwrap();
    let resumed = train_from(half.params, &patterns, &flow, &cfg).unwrap();
    let full = train(&patterns, &flow, dims, &TrainConfig { epochs: 20, ..cfg }).unwrap();
    assert_eq!(resumed.params, full.params);
}

#[test]
fn invalid_hyperparameters_are_rejected() {
    let (patterns, flow, dims) = small_problem();
    let bad = [
        TrainConfig { epochs: 0, ..TrainConfig::default() },
        TrainConfig { learning_rate: -1.0, ..TrainConfig::default() },
        TrainConfig { learning_rate: f64::NAN, ..TrainConfig::default() },
    ];
    for cfg in bad {
        assert_eq!(train(&patterns, &flow, dims, &cfg).unwrap_err().exit_code(), 3);
    }
}
