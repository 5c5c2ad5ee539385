use tgnn::export::Embeddings;
use tgnn::model::{encode_all, ModelParams};
use tgnn::objective::total_loss;
use tgnn::params::Checkpoint;
use tgnn::sampler::Fanout;
use tgnn::seed::Seed;
use tgnn::synthetic::{gen_synthetic, SyntheticGraph, SyntheticSpec};
use tgnn::tensor::Tape;
use tgnn::train::{adam_step, epoch_means, train, train_from, AdamConfig, TrainConfig, TrainState};

fn tiny() -> SyntheticGraph {
    let mut spec = SyntheticSpec::planted_benchmark();
    for (t, n) in spec.types.iter_mut().zip([8, 8, 4]) {
        t.count = n;
    }
    spec.feature_dim = 6;
    gen_synthetic(&spec).unwrap()
}

fn config(epochs: usize) -> TrainConfig {
    TrainConfig {
        hidden_dim: 6,
        metric_dim: 3,
        walks_per_node: 3,
        walk_length: 8,
        batch_size: 32,
        learning_rate: 0.01,
        epochs,
        seed: 3,
        ..TrainConfig::default()
    }
}

#[test]
fn loss_falls_on_a_twenty_node_graph() {
    let s = tiny();
    assert_eq!(s.graph.node_count(), 20);
    let out = train(&s.graph, &s.schemas, &config(5)).unwrap();
    assert!(out.log.iter().all(|r| r.loss.is_finite() && r.loss > 0.0));
    let means = epoch_means(&out.log);
    assert_eq!(means.len(), 5);
    assert!(means[4] < means[0], "epoch means {means:?}");
}

#[test]
fn zero_epochs_returns_the_initial_parameters() {
    let s = tiny();
    let cfg = config(0);
    let out = train(&s.graph, &s.schemas, &cfg).unwrap();
    assert!(out.log.is_empty());
    assert_eq!(out.state, TrainState::new(&s.graph, &cfg));
}

#[test]
fn same_seed_same_run_and_other_seed_differs() {
    let s = tiny();
    let a = train(&s.graph, &s.schemas, &config(2)).unwrap();
    let b = train(&s.graph, &s.schemas, &config(2)).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.params().checkpoint().to_json(), b.params().checkpoint().to_json());
    let c = train(&s.graph, &s.schemas, &TrainConfig { seed: 4, ..config(2) }).unwrap();
    assert_ne!(a.log, c.log);
}

#[test]
fn checkpoint_reload_encodes_identically() {
    let s = tiny();
    let out = train(&s.graph, &s.schemas, &config(2)).unwrap();
    let json = out.params().checkpoint().to_json();
    let back = ModelParams::from_checkpoint(&s.graph, &Checkpoint::from_json(&json).unwrap()).unwrap();
    assert_eq!(&back, out.params());
    let e1 = encode_all(&s.graph, &s.schemas, out.params(), Fanout::Unlimited, Seed(0)).unwrap();
    let e2 = encode_all(&s.graph, &s.schemas, &back, Fanout::Unlimited, Seed(0)).unwrap();
    assert_eq!(e1, e2);
}

#[test]
fn resumed_run_matches_uninterrupted() {
    let s = tiny();
    let full = train(&s.graph, &s.schemas, &config(4)).unwrap();
    let half = train(&s.graph, &s.schemas, &config(2)).unwrap();
    let params = ModelParams::from_checkpoint(
        &s.graph,
        &Checkpoint::from_json(&half.params().checkpoint().to_json()).unwrap(),
    )
    .unwrap();
    let state = TrainState::from_parts(params, &half.state.optimizer_json()).unwrap();
    let rest = train_from(&s.graph, &s.schemas, &config(4), state, &mut ()).unwrap();
    assert_eq!(rest.state, full.state);
    let mut log = half.log.clone();
    log.extend(rest.log);
    assert_eq!(log, full.log);
}

#[test]
fn penalty_alone_shrinks_parameters() {
    let s = tiny();
    let cfg = TrainConfig { lambda: 0.1, ..config(0) };
    let mut state = TrainState::new(&s.graph, &cfg);
    let mut norm = state.params.store.sum_squares();
    for _ in 0..20 {
        let mut tape = Tape::new();
        let bound = state.params.store.bind(&mut tape);
        let empty = tgnn::model::encode_with_plan(
            &mut tape,
            &s.graph,
            &state.params,
            &bound,
            &[],
            &[],
            &Default::default(),
        )
        .unwrap();
        let loss = total_loss(&mut tape, &s.graph, &state.params, &bound, &empty, &[], cfg.lambda).unwrap();
        tape.backward(loss).unwrap();
        let grads: Vec<_> = bound.vars().iter().map(|&v| tape.grad(v)).collect();
        adam_step(&mut state.params.store, &grads, &mut state.optimizer, AdamConfig::from(&cfg)).unwrap();
        let next = state.params.store.sum_squares();
        assert!(next < norm, "{next} !< {norm}");
        norm = next;
    }
}

#[test]
fn exported_rows_are_name_then_values() {
    let s = tiny();
    let out = train(&s.graph, &s.schemas, &config(1)).unwrap();
    let enc = encode_all(&s.graph, &s.schemas, out.params(), Fanout::Unlimited, Seed(0)).unwrap();
    let emb = Embeddings::from_batch(&s.graph, &enc);
    let dir = tempfile::tempdir().unwrap();
    let files = emb.write_dir(dir.path()).unwrap();
    assert_eq!(files.len(), s.graph.type_count());
    let mut rows = 0;
    for f in &files {
        for line in std::fs::read_to_string(f).unwrap().lines() {
            let fields: Vec<&str> = line.split('\t').collect();
            assert_eq!(fields.len(), 2);
            assert!(s.graph.node_by_name(fields[0]).is_some());
            let values: Vec<f64> = fields[1].split(',').map(|v| v.parse().unwrap()).collect();
            assert_eq!(values, emb.get(fields[0]).unwrap());
            rows += 1;
        }
    }
    assert_eq!(rows, s.graph.node_count());
    let again = Embeddings::read_path(dir.path()).unwrap();
    assert_eq!(again, emb);
}
