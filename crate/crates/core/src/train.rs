//! Mini-batch Adam training of the encoder on the graph-context loss.

use std::collections::BTreeSet;
use std::io::Write;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{HetGraph, NodeId, TreeSchema};
use crate::model::{encode_with_plan, Dims, ModelParams};
use crate::objective::{extract_pairs, generate_walks, reachable_type_pairs, total_loss, MetricMode, PairKey, TrainingPair, WalkCorpus};
use crate::params::{CheckpointEntry, ParamStore};
use crate::sampler::{build_plan, sample_forest, AggregationPlan, Fanout};
use crate::seed::Seed;
use crate::tensor::{Tape, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub hidden_dim: usize,
    pub learning_rate: f64,
    pub lambda: f64,
    pub window: usize,
    pub negatives: usize,
    pub metric: MetricMode,
    pub metric_dim: usize,
    pub walks_per_node: usize,
    pub walk_length: usize,
    /// Per-parent child cap while training; `null` keeps every child.
    pub fanout: Fanout,
    /// Child cap used when encoding after training.
    pub eval_fanout: Fanout,
    /// Training pairs per optimizer step.
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Fresh walks every epoch instead of one corpus for the whole run.
    pub regenerate_walks: bool,
    /// Global gradient norm cap; `null` disables clipping.
    pub clip_norm: Option<f64>,
    /// Redraw negatives that coincide with the positive context.
    pub exclude_positive: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden_dim: 128,
            learning_rate: 1e-3,
            lambda: 1e-4,
            window: 2,
            negatives: 3,
            metric: MetricMode::Perceptron,
            metric_dim: 32,
            walks_per_node: 10,
            walk_length: 20,
            fanout: Fanout::Cap(10),
            eval_fanout: Fanout::Unlimited,
            batch_size: 128,
            epochs: 30,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            regenerate_walks: true,
            clip_norm: Some(5.0),
            exclude_positive: false,
        }
    }
}

impl TrainConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: TrainConfig = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("hidden_dim", self.hidden_dim),
            ("window", self.window),
            ("negatives", self.negatives),
            ("metric_dim", self.metric_dim),
            ("walks_per_node", self.walks_per_node),
            ("walk_length", self.walk_length),
            ("batch_size", self.batch_size),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Contract(format!("{name} must be at least 1")));
            }
        }
        if let Fanout::Cap(0) = self.fanout {
            return Err(Error::Contract("fanout must be at least 1".into()));
        }
        if let Fanout::Cap(0) = self.eval_fanout {
            return Err(Error::Contract("eval_fanout must be at least 1".into()));
        }
        let positive = [
            ("learning_rate", self.learning_rate),
            ("epsilon", self.epsilon),
            ("clip_norm", self.clip_norm.unwrap_or(1.0)),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Contract(format!("{name} must be positive and finite")));
            }
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Contract("lambda must be non-negative".into()));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Contract(format!("{name} must lie in [0, 1)")));
            }
        }
        Ok(())
    }

    pub fn dims(&self, graph: &HetGraph) -> Dims {
        Dims {
            input: graph.feature_dim(),
            hidden: self.hidden_dim,
        }
    }
}

/// Fresh parameters, with metric parameters for every type pair a walk
/// window can connect.
pub fn init_params(graph: &HetGraph, config: &TrainConfig) -> ModelParams {
    let pairs: Vec<_> = reachable_type_pairs(graph, config.window).into_iter().collect();
    let mut rng = Seed(config.seed).derive("init", 0).rng();
    ModelParams::init(graph, config.dims(graph), config.metric, config.metric_dim, &pairs, &mut rng)
}

/// Adam moments, one pair per parameter in store order.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl OptimizerState {
    pub fn new(store: &ParamStore) -> Self {
        let mut s = OptimizerState {
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        };
        s.sync(store);
        s
    }

    /// Adds zero moments for parameters registered since the last call.
    pub fn sync(&mut self, store: &ParamStore) {
        for t in &store.values()[self.m.len()..] {
            self.m.push(Tensor::zeros(t.rows(), t.cols()));
            self.v.push(Tensor::zeros(t.rows(), t.cols()));
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl From<&TrainConfig> for AdamConfig {
    fn from(c: &TrainConfig) -> Self {
        AdamConfig {
            learning_rate: c.learning_rate,
            beta1: c.beta1,
            beta2: c.beta2,
            epsilon: c.epsilon,
        }
    }
}

/// One bias-corrected Adam update. Non-finite gradients abort the step
/// before anything is modified.
pub fn adam_step(store: &mut ParamStore, grads: &[Tensor], state: &mut OptimizerState, cfg: AdamConfig) -> Result<()> {
    if grads.len() != store.len() || state.m.len() != store.len() {
        return Err(Error::Contract(format!(
            "{} gradients and {} moment slots for {} parameters",
            grads.len(),
            state.m.len(),
            store.len()
        )));
    }
    for (i, g) in grads.iter().enumerate() {
        if g.shape() != store.values()[i].shape() {
            return Err(Error::Shape {
                op: "adam_step",
                shapes: format!("{}: {:?} vs {:?}", store.name(crate::params::ParamId(i)), g.shape(), store.values()[i].shape()),
            });
        }
        if !g.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite gradient for {}",
                store.name(crate::params::ParamId(i))
            )));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (i, g) in grads.iter().enumerate() {
        let p = store.get_mut(crate::params::ParamId(i)).data_mut();
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for k in 0..g.len() {
            let gk = g.data()[k];
            m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * gk;
            v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * gk * gk;
            let m_hat = m[k] / c1;
            let v_hat = v[k] / c2;
            p[k] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }
    Ok(())
}

/// Scales `grads` so their joint L2 norm is at most `max_norm`. Returns the
/// norm before scaling.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads.iter().map(Tensor::sum_squares).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|x| *x *= s);
        }
    }
    norm
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub epoch: usize,
    pub batch: usize,
    pub loss: f64,
}

/// CSV with header `epoch,batch,loss`.
pub fn write_loss_log(log: &[LossRecord], mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "epoch,batch,loss")?;
    for r in log {
        writeln!(out, "{},{},{}", r.epoch, r.batch, r.loss)?;
    }
    Ok(())
}

/// Mean loss of each epoch, in epoch order.
pub fn epoch_means(log: &[LossRecord]) -> Vec<f64> {
    let mut out: Vec<(f64, usize)> = Vec::new();
    for r in log {
        if out.len() <= r.epoch {
            out.resize(r.epoch + 1, (0.0, 0));
        }
        out[r.epoch].0 += r.loss;
        out[r.epoch].1 += 1;
    }
    out.into_iter().map(|(s, n)| if n == 0 { f64::NAN } else { s / n as f64 }).collect()
}

/// Everything needed to continue a run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub params: ModelParams,
    pub optimizer: OptimizerState,
    /// Number of completed epochs.
    pub epoch: usize,
}

#[derive(Serialize, Deserialize)]
struct OptimizerFile {
    epoch: usize,
    step: u64,
    m: Vec<CheckpointEntry>,
    v: Vec<CheckpointEntry>,
}

impl TrainState {
    pub fn new(graph: &HetGraph, config: &TrainConfig) -> Self {
        let params = init_params(graph, config);
        let optimizer = OptimizerState::new(&params.store);
        TrainState {
            params,
            optimizer,
            epoch: 0,
        }
    }

    /// Optimizer moments and progress as JSON; parameters go in the
    /// checkpoint.
    pub fn optimizer_json(&self) -> String {
        let entries = |ts: &[Tensor]| -> Vec<CheckpointEntry> {
            self.params
                .store
                .iter()
                .zip(ts)
                .map(|((_, name, _), t)| CheckpointEntry {
                    name: name.to_string(),
                    shape: [t.rows(), t.cols()],
                    values: t.data().to_vec(),
                })
                .collect()
        };
        serde_json::to_string(&OptimizerFile {
            epoch: self.epoch,
            step: self.optimizer.step,
            m: entries(&self.optimizer.m),
            v: entries(&self.optimizer.v),
        })
        .expect("optimizer state serializes")
    }

    pub fn from_parts(params: ModelParams, optimizer_json: &str) -> Result<Self> {
        let file: OptimizerFile = serde_json::from_str(optimizer_json)?;
        let tensors = |entries: Vec<CheckpointEntry>| -> Result<Vec<Tensor>> {
            if entries.len() != params.store.len() {
                return Err(Error::Contract("optimizer state does not match the checkpoint".into()));
            }
            entries
                .into_iter()
                .zip(params.store.iter())
                .map(|(e, (_, name, t))| {
                    if e.name != name || e.shape != [t.rows(), t.cols()] {
                        return Err(Error::Contract(format!("optimizer entry {} does not match parameter {name}", e.name)));
                    }
                    Tensor::new(e.shape[0], e.shape[1], e.values)
                })
                .collect()
        };
        let optimizer = OptimizerState {
            step: file.step,
            m: tensors(file.m)?,
            v: tensors(file.v)?,
        };
        Ok(TrainState {
            params,
            optimizer,
            epoch: file.epoch,
        })
    }
}

/// Hooks for inspecting a run as it progresses.
pub trait TrainObserver {
    fn on_corpus(&mut self, _epoch: usize, _corpus: &WalkCorpus) {}
    fn on_batch(&mut self, _epoch: usize, _batch: usize, _plan: &AggregationPlan, _loss: f64) {}
}

impl TrainObserver for () {}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub state: TrainState,
    pub log: Vec<LossRecord>,
}

impl TrainOutcome {
    pub fn params(&self) -> &ModelParams {
        &self.state.params
    }
}

pub fn train(graph: &HetGraph, schemas: &[TreeSchema], config: &TrainConfig) -> Result<TrainOutcome> {
    train_from(graph, schemas, config, TrainState::new(graph, config), &mut ())
}

/// Runs epochs `state.epoch..config.epochs`. Every random draw is derived
/// from the config seed and the epoch, so a resumed run matches an
/// uninterrupted one.
pub fn train_from(
    graph: &HetGraph,
    schemas: &[TreeSchema],
    config: &TrainConfig,
    mut state: TrainState,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome> {
    config.validate()?;
    if state.params.dims != config.dims(graph) {
        return Err(Error::Contract(format!(
            "parameters have dims {:?}, config asks for {:?}",
            state.params.dims,
            config.dims(graph)
        )));
    }
    let seed = Seed(config.seed);
    let adam = AdamConfig::from(config);
    let mut log = Vec::new();
    let mut corpus: Option<WalkCorpus> = None;
    while state.epoch < config.epochs {
        let epoch = state.epoch;
        let walk_index = if config.regenerate_walks { epoch as u64 } else { 0 };
        if corpus.is_none() || config.regenerate_walks {
            corpus = Some(generate_walks(
                graph,
                config.walks_per_node,
                config.walk_length,
                seed.derive("walks", walk_index),
            )?);
        }
        let corpus_ref = corpus.as_ref().expect("generated above");
        observer.on_corpus(epoch, corpus_ref);
        let mut pairs = extract_pairs(
            graph,
            corpus_ref,
            config.window,
            config.negatives,
            config.exclude_positive,
            seed.derive("pairs", epoch as u64),
        )?;
        pairs.shuffle(&mut seed.derive("shuffle", epoch as u64).rng());
        let tree_seed = seed.derive("trees", epoch as u64);
        for (b, batch) in pairs.chunks(config.batch_size).enumerate() {
            let loss = train_batch(graph, schemas, config, &mut state, batch, tree_seed, adam, observer, epoch, b)?;
            log.push(LossRecord { epoch, batch: b, loss });
        }
        state.epoch += 1;
    }
    Ok(TrainOutcome { state, log })
}

#[allow(clippy::too_many_arguments)]
fn train_batch(
    graph: &HetGraph,
    schemas: &[TreeSchema],
    config: &TrainConfig,
    state: &mut TrainState,
    batch: &[TrainingPair],
    tree_seed: Seed,
    adam: AdamConfig,
    observer: &mut dyn TrainObserver,
    epoch: usize,
    index: usize,
) -> Result<f64> {
    let params = &mut state.params;
    for p in batch {
        if let PairKey::Cross(pair) = p.pair_key {
            let mut rng = Seed(config.seed)
                .derive("metric-pair", (pair.first.0 * graph.type_count() + pair.second.0) as u64)
                .rng();
            params.metric.ensure_pair(graph, &mut params.store, pair, params.dims.hidden, &mut rng);
        }
    }
    state.optimizer.sync(&params.store);

    let nodes: Vec<NodeId> = batch
        .iter()
        .flat_map(|p| [p.center, p.context].into_iter().chain(p.negatives.iter().copied()))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let (trees, per_node) = sample_forest(graph, &nodes, schemas, config.fanout, tree_seed)?;
    let plan = build_plan(&trees);
    let mut tape = Tape::new();
    let bound = params.store.bind(&mut tape);
    let encoded = encode_with_plan(&mut tape, graph, params, &bound, &nodes, &per_node, &plan)?;
    let loss = total_loss(&mut tape, graph, params, &bound, &encoded, batch, config.lambda)?;
    let value = tape.value(loss).item();
    if !value.is_finite() {
        return Err(Error::Numeric(format!("loss is {value} at epoch {epoch}, batch {index}")));
    }
    observer.on_batch(epoch, index, &plan, value);
    tape.backward(loss)?;
    let mut grads: Vec<Tensor> = bound.vars().iter().map(|&v| tape.grad(v)).collect();
    if let Some(max) = config.clip_norm {
        clip_global_norm(&mut grads, max);
    }
    adam_step(&mut params.store, &grads, &mut state.optimizer, adam)
        .map_err(|e| match e {
            Error::Numeric(m) => Error::Numeric(format!("{m} at epoch {epoch}, batch {index}")),
            other => other,
        })?;
    Ok(value)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(v: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("w", Tensor::scalar(v));
        s
    }

    fn adam(lr: f64) -> AdamConfig {
        AdamConfig {
            learning_rate: lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut s = scalar_store(1.5);
        let mut st = OptimizerState::new(&s);
        adam_step(&mut s, &[Tensor::scalar(0.0)], &mut st, adam(0.1)).unwrap();
        assert_eq!(s.get(crate::params::ParamId(0)).item(), 1.5);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut s = scalar_store(1.0);
        let mut st = OptimizerState::new(&s);
        adam_step(&mut s, &[Tensor::scalar(1.0)], &mut st, adam(0.1)).unwrap();
        // m_hat = 1, v_hat = 1 after bias correction
        let expect = 1.0 - 0.1 * 1.0 / (1.0 + 1e-8);
        assert!((s.get(crate::params::ParamId(0)).item() - expect).abs() < 1e-15);
        assert!((s.get(crate::params::ParamId(0)).item() - 0.9).abs() < 1e-6);
    }

    #[test]
    fn quadratic_loss_decreases_under_adam() {
        let mut s = scalar_store(2.0);
        let mut st = OptimizerState::new(&s);
        let loss = |w: f64| w * w;
        let mut prev = loss(2.0);
        for _ in 0..2 {
            let w = s.get(crate::params::ParamId(0)).item();
            adam_step(&mut s, &[Tensor::scalar(2.0 * w)], &mut st, adam(0.1)).unwrap();
            let now = loss(s.get(crate::params::ParamId(0)).item());
            assert!(now < prev);
            prev = now;
        }
    }

    #[test]
    fn non_finite_gradient_aborts_without_update() {
        let mut s = scalar_store(1.0);
        let mut st = OptimizerState::new(&s);
        let err = adam_step(&mut s, &[Tensor::scalar(f64::NAN)], &mut st, adam(0.1)).unwrap_err();
        assert!(err.is_numeric());
        assert_eq!(st.step, 0);
        assert_eq!(s.get(crate::params::ParamId(0)).item(), 1.0);
    }

    #[test]
    fn clipping_caps_the_joint_norm() {
        let mut g = vec![Tensor::row(&[3.0, 0.0]), Tensor::row(&[0.0, 4.0])];
        assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
        let n: f64 = g.iter().map(Tensor::sum_squares).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-15);
        let mut small = vec![Tensor::row(&[0.1])];
        clip_global_norm(&mut small, 1.0);
        assert_eq!(small[0].item(), 0.1);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        assert!(TrainConfig::from_json(r#"{"hidden_dim": 8, "bogus": 1}"#).is_err());
        let c = TrainConfig::from_json(r#"{"hidden_dim": 8, "fanout": null, "metric": "dot"}"#).unwrap();
        assert_eq!(c.fanout, Fanout::Unlimited);
        assert_eq!(c.metric, MetricMode::Dot);
        assert_eq!(TrainConfig::from_json(&c.to_json()).unwrap(), c);
    }

    #[test]
    fn epoch_means_average_batches() {
        let log = [
            LossRecord { epoch: 0, batch: 0, loss: 1.0 },
            LossRecord { epoch: 0, batch: 1, loss: 3.0 },
            LossRecord { epoch: 1, batch: 0, loss: 0.5 },
        ];
        assert_eq!(epoch_means(&log), vec![2.0, 0.5]);
        let mut buf = Vec::new();
        write_loss_log(&log, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "epoch,batch,loss\n0,0,1\n0,1,3\n1,0,0.5\n");
    }
}
