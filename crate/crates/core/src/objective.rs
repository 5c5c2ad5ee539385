//! Relational similarity metrics and the skip-gram graph-context loss.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::IndexedRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{HetGraph, NodeId, TypeId};
use crate::model::{EncodedVars, ModelParams};
use crate::params::{glorot, uniform, Bound, ParamId, ParamStore};
use crate::seed::{Rng, Seed};
use crate::tensor::{log_sigmoid, Tape, Tensor, Var};

/// Exponent applied to corpus frequencies in the negative-sampling table.
pub const NEGATIVE_POWER: f64 = 0.75;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricMode {
    Dot,
    Bilinear,
    #[default]
    Perceptron,
}

impl MetricMode {
    pub fn as_str(self) -> &'static str {
        match self {
            MetricMode::Dot => "dot",
            MetricMode::Bilinear => "bilinear",
            MetricMode::Perceptron => "perceptron",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "dot" => Ok(MetricMode::Dot),
            "bilinear" => Ok(MetricMode::Bilinear),
            "perceptron" => Ok(MetricMode::Perceptron),
            other => Err(Error::Contract(format!("unknown metric mode {other:?}"))),
        }
    }
}

/// Unordered node-type pair stored in canonical (sorted) order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TypePair {
    pub first: TypeId,
    pub second: TypeId,
}

impl TypePair {
    pub fn new(a: TypeId, b: TypeId) -> Self {
        TypePair {
            first: a.min(b),
            second: a.max(b),
        }
    }

    pub fn is_same_type(self) -> bool {
        self.first == self.second
    }

    pub fn label(self, graph: &HetGraph) -> String {
        format!("{}|{}", graph.type_name(self.first), graph.type_name(self.second))
    }
}

/// Cross-type metric parameters. Only the active mode's maps are populated.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricParams {
    pub mode: MetricMode,
    pub metric_dim: usize,
    pub bilinear: BTreeMap<TypePair, ParamId>,
    pub perceptron_type: BTreeMap<TypeId, ParamId>,
    pub perceptron_pair: BTreeMap<TypePair, ParamId>,
}

impl MetricParams {
    pub fn new(mode: MetricMode, metric_dim: usize) -> Self {
        MetricParams {
            mode,
            metric_dim,
            bilinear: BTreeMap::new(),
            perceptron_type: BTreeMap::new(),
            perceptron_pair: BTreeMap::new(),
        }
    }

    pub(crate) fn add_type_projection(&mut self, graph: &HetGraph, store: &mut ParamStore, t: TypeId, hidden: usize, rng: &mut Rng) {
        if !self.perceptron_type.contains_key(&t) {
            let id = store.add(
                format!("metric.perceptron.type.{}", graph.type_name(t)),
                glorot(self.metric_dim, hidden, rng),
            );
            self.perceptron_type.insert(t, id);
        }
    }

    /// Creates the parameters scoring `pair` if the mode needs any and they
    /// do not exist yet. Returns whether anything was added.
    pub fn ensure_pair(&mut self, graph: &HetGraph, store: &mut ParamStore, pair: TypePair, hidden: usize, rng: &mut Rng) -> bool {
        if pair.is_same_type() || self.has_pair(pair) {
            return false;
        }
        match self.mode {
            MetricMode::Dot => false,
            MetricMode::Bilinear => {
                let id = store.add(format!("metric.bilinear.{}", pair.label(graph)), glorot(hidden, hidden, rng));
                self.bilinear.insert(pair, id);
                true
            }
            MetricMode::Perceptron => {
                self.add_type_projection(graph, store, pair.first, hidden, rng);
                self.add_type_projection(graph, store, pair.second, hidden, rng);
                let id = store.add(
                    format!("metric.perceptron.pair.{}", pair.label(graph)),
                    uniform(1, self.metric_dim, crate::model::VECTOR_INIT_BOUND, rng),
                );
                self.perceptron_pair.insert(pair, id);
                true
            }
        }
    }

    pub fn has_pair(&self, pair: TypePair) -> bool {
        match self.mode {
            _ if pair.is_same_type() => true,
            MetricMode::Dot => true,
            MetricMode::Bilinear => self.bilinear.contains_key(&pair),
            MetricMode::Perceptron => self.perceptron_pair.contains_key(&pair),
        }
    }

    /// The parameters used when scoring `pair`, in evaluation order.
    pub fn params_for(&self, pair: TypePair) -> Result<Vec<ParamId>> {
        let missing = || Error::Reference(format!("no metric parameters for type pair ({}, {})", pair.first.0, pair.second.0));
        if pair.is_same_type() {
            return Ok(Vec::new());
        }
        match self.mode {
            MetricMode::Dot => Ok(Vec::new()),
            MetricMode::Bilinear => Ok(vec![*self.bilinear.get(&pair).ok_or_else(missing)?]),
            MetricMode::Perceptron => Ok(vec![
                *self.perceptron_type.get(&pair.first).ok_or_else(missing)?,
                *self.perceptron_type.get(&pair.second).ok_or_else(missing)?,
                *self.perceptron_pair.get(&pair).ok_or_else(missing)?,
            ]),
        }
    }
}

/// Row-wise similarity of `left` (type `tl`) and `right` (type `tr`), both
/// `n x d'`. Returns `n x 1`.
pub fn similarity_rows(
    tape: &mut Tape,
    metric: &MetricParams,
    bound: &Bound,
    left: Var,
    tl: TypeId,
    right: Var,
    tr: TypeId,
) -> Result<Var> {
    if tape.shape(left) != tape.shape(right) {
        return Err(Error::Shape {
            op: "similarity",
            shapes: format!("{:?} vs {:?}", tape.shape(left), tape.shape(right)),
        });
    }
    let pair = TypePair::new(tl, tr);
    let (first, second) = if tl <= tr { (left, right) } else { (right, left) };
    let ids = metric.params_for(pair)?;
    match ids.as_slice() {
        [] => {
            let prod = tape.mul(left, right)?;
            Ok(tape.row_sums(prod))
        }
        [m] => {
            let proj = tape.matmul(first, bound.var(*m))?;
            let prod = tape.mul(proj, second)?;
            Ok(tape.row_sums(prod))
        }
        [m_first, m_second, m_pair] => {
            let a = tape.matmul_bt(first, bound.var(*m_first))?;
            let b = tape.matmul_bt(second, bound.var(*m_second))?;
            let s = tape.add(a, b)?;
            let hidden = tape.tanh(s);
            tape.matmul_bt(hidden, bound.var(*m_pair))
        }
        _ => unreachable!("metric parameter lists have 0, 1 or 3 entries"),
    }
}

/// Value-level similarity of two representation vectors.
pub fn similarity(params: &ModelParams, u_i: &[f64], t_i: TypeId, u_j: &[f64], t_j: TypeId) -> Result<f64> {
    let mut tape = Tape::new();
    let bound = params.store.bind(&mut tape);
    let a = tape.constant(Tensor::row(u_i));
    let b = tape.constant(Tensor::row(u_j));
    let s = similarity_rows(&mut tape, &params.metric, &bound, a, t_i, b, t_j)?;
    Ok(tape.value(s).item())
}

/// `-[log sig(s_pos) + sum log sig(-s_neg)]`.
pub fn pair_loss(s_pos: f64, s_neg: &[f64]) -> Result<f64> {
    if !s_pos.is_finite() || s_neg.iter().any(|s| !s.is_finite()) {
        return Err(Error::Numeric("non-finite similarity in pair loss".into()));
    }
    Ok(-(log_sigmoid(s_pos) + s_neg.iter().map(|&s| log_sigmoid(-s)).sum::<f64>()))
}

/// Exact softmax probability of `context` among all nodes of its type,
/// given `center`. `embedding` must cover every node of that type.
pub fn context_probability_reference(
    graph: &HetGraph,
    params: &ModelParams,
    center: NodeId,
    context: NodeId,
    embedding: impl Fn(NodeId) -> Option<Vec<f64>>,
) -> Result<f64> {
    let missing = |n: NodeId| Error::Reference(format!("no embedding for node {}", graph.node_name(n)));
    let tc = graph.node_type(center);
    let u_c = embedding(center).ok_or_else(|| missing(center))?;
    let t = graph.node_type(context);
    let mut scores = Vec::new();
    let mut target = None;
    for n in graph.nodes_of_type(t) {
        let u = embedding(n).ok_or_else(|| missing(n))?;
        if n == context {
            target = Some(scores.len());
        }
        scores.push(similarity(params, &u_c, tc, &u, t)?);
    }
    let target = target.expect("context is a node of its own type");
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = scores.iter().map(|s| (s - max).exp()).sum();
    Ok((scores[target] - max).exp() / total)
}

/// Per-type sampling tables proportional to `f^{3/4}`.
#[derive(Clone, Debug)]
pub struct NegativeSampler {
    tables: Vec<Option<(Vec<NodeId>, WeightedIndex<f64>)>>,
    probability: Vec<f64>,
}

impl NegativeSampler {
    /// `freq[n]` is node `n`'s corpus count. Types whose nodes never occur
    /// have no table.
    pub fn from_frequencies(graph: &HetGraph, freq: &[u64]) -> Self {
        let mut tables = Vec::with_capacity(graph.type_count());
        let mut probability = vec![0.0; graph.node_count()];
        for t in graph.type_ids() {
            let nodes: Vec<NodeId> = graph.nodes_of_type(t).into_iter().filter(|&n| freq[n] > 0).collect();
            let weights: Vec<f64> = nodes.iter().map(|&n| (freq[n] as f64).powf(NEGATIVE_POWER)).collect();
            let total: f64 = weights.iter().sum();
            for (&n, w) in nodes.iter().zip(&weights) {
                probability[n] = w / total;
            }
            tables.push(WeightedIndex::new(&weights).ok().map(|w| (nodes, w)));
        }
        NegativeSampler { tables, probability }
    }

    /// Analytic sampling probability of `node` within its type.
    pub fn probability(&self, node: NodeId) -> f64 {
        self.probability[node]
    }

    pub fn sample(&self, t: TypeId, rng: &mut Rng) -> Option<NodeId> {
        let (nodes, dist) = self.tables.get(t.0)?.as_ref()?;
        Some(nodes[dist.sample(rng)])
    }
}

/// Random-walk paths with their node frequency table.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WalkCorpus {
    pub paths: Vec<Vec<NodeId>>,
    pub node_freq: Vec<u64>,
}

impl WalkCorpus {
    pub fn from_paths(node_count: usize, paths: Vec<Vec<NodeId>>) -> Self {
        let mut node_freq = vec![0; node_count];
        for &n in paths.iter().flatten() {
            node_freq[n] += 1;
        }
        WalkCorpus { paths, node_freq }
    }

    pub fn token_count(&self) -> usize {
        self.paths.iter().map(Vec::len).sum()
    }

    pub fn sampler(&self, graph: &HetGraph) -> NegativeSampler {
        NegativeSampler::from_frequencies(graph, &self.node_freq)
    }

    /// One walk per line, space-separated node ids.
    pub fn write(&self, mut out: impl Write) -> std::io::Result<()> {
        for path in &self.paths {
            let line: Vec<String> = path.iter().map(|n| n.to_string()).collect();
            writeln!(out, "{}", line.join(" "))?;
        }
        Ok(())
    }

    pub fn read(reader: impl BufRead, source_name: &str, graph: &HetGraph) -> Result<Self> {
        let mut paths = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io(source_name, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let mut path = Vec::new();
            for tok in line.split_whitespace() {
                let n: NodeId = tok.parse().map_err(|_| Error::Parse {
                    source_name: source_name.to_string(),
                    line: i + 1,
                    message: format!("bad node id {tok:?}"),
                })?;
                if n >= graph.node_count() {
                    return Err(Error::Reference(format!("{source_name}:{}: node id {n} out of range", i + 1)));
                }
                path.push(n);
            }
            paths.push(path);
        }
        Ok(WalkCorpus::from_paths(graph.node_count(), paths))
    }
}

/// Uniform type-agnostic walks over forward and reverse adjacency. Each
/// start node draws from its own derived stream.
pub fn generate_walks(graph: &HetGraph, walks_per_node: usize, walk_length: usize, seed: Seed) -> Result<WalkCorpus> {
    if walk_length == 0 {
        return Err(Error::Contract("walk_length must be at least 1".into()));
    }
    let mut paths = Vec::with_capacity(graph.node_count() * walks_per_node);
    for start in 0..graph.node_count() {
        let mut rng = seed.derive("walk", start as u64).rng();
        for _ in 0..walks_per_node {
            let mut path = Vec::with_capacity(walk_length);
            path.push(start);
            let mut cur = start;
            while path.len() < walk_length {
                match graph.all_neighbors(cur).choose(&mut rng) {
                    Some(&next) => {
                        path.push(next);
                        cur = next;
                    }
                    None => break,
                }
            }
            paths.push(path);
        }
    }
    Ok(WalkCorpus::from_paths(graph.node_count(), paths))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PairKey {
    SameType(TypeId),
    Cross(TypePair),
}

impl PairKey {
    pub fn of(a: TypeId, b: TypeId) -> Self {
        if a == b {
            PairKey::SameType(a)
        } else {
            PairKey::Cross(TypePair::new(a, b))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrainingPair {
    pub center: NodeId,
    pub context: NodeId,
    pub pair_key: PairKey,
    pub negatives: Vec<NodeId>,
}

/// Skip-gram pairs within `window` positions, with negatives for each.
/// Self-pairs are skipped. With `exclude_positive`, a negative equal to
/// the context node is redrawn (types with a single candidate keep it).
pub fn extract_pairs(
    graph: &HetGraph,
    corpus: &WalkCorpus,
    window: usize,
    negatives: usize,
    exclude_positive: bool,
    seed: Seed,
) -> Result<Vec<TrainingPair>> {
    if window == 0 {
        return Err(Error::Contract("window must be at least 1".into()));
    }
    let sampler = corpus.sampler(graph);
    let mut rng = seed.derive("negatives", 0).rng();
    let mut pairs = Vec::new();
    for path in &corpus.paths {
        for (i, &center) in path.iter().enumerate() {
            let lo = i.saturating_sub(window);
            let hi = (i + window).min(path.len() - 1);
            for (j, &context) in path.iter().enumerate().take(hi + 1).skip(lo) {
                if j == i || context == center {
                    continue;
                }
                let t = graph.node_type(context);
                let mut negs = Vec::with_capacity(negatives);
                for _ in 0..negatives {
                    let mut draw = sampler.sample(t, &mut rng).expect("context type occurs in the corpus");
                    if exclude_positive {
                        for _ in 0..64 {
                            if draw != context {
                                break;
                            }
                            draw = sampler.sample(t, &mut rng).expect("table exists");
                        }
                    }
                    negs.push(draw);
                }
                pairs.push(TrainingPair {
                    center,
                    context,
                    pair_key: PairKey::of(graph.node_type(center), t),
                    negatives: negs,
                });
            }
        }
    }
    Ok(pairs)
}

/// Type pairs a walk window of size `window` can produce: pairs of types
/// joined by a type-level walk of length `1..=window`.
pub fn reachable_type_pairs(graph: &HetGraph, window: usize) -> BTreeSet<TypePair> {
    let mut adjacent: Vec<BTreeSet<TypeId>> = vec![BTreeSet::new(); graph.type_count()];
    for r in graph.relations() {
        adjacent[r.source.0].insert(r.target);
        adjacent[r.target.0].insert(r.source);
    }
    let mut pairs = BTreeSet::new();
    for start in graph.type_ids() {
        let mut frontier = BTreeSet::from([start]);
        for _ in 0..window {
            frontier = frontier.iter().flat_map(|t| adjacent[t.0].iter().copied()).collect();
            for &t in &frontier {
                if t != start {
                    pairs.insert(TypePair::new(start, t));
                }
            }
        }
    }
    pairs
}

/// Mean pair loss over `pairs` plus `lambda * sum ||theta||^2`, on tape.
/// `encoded` must hold every center, context and negative.
pub fn total_loss(
    tape: &mut Tape,
    graph: &HetGraph,
    params: &ModelParams,
    bound: &Bound,
    encoded: &EncodedVars,
    pairs: &[TrainingPair],
    lambda: f64,
) -> Result<Var> {
    let mut row_of = BTreeMap::new();
    for (i, &n) in encoded.nodes.iter().enumerate() {
        row_of.entry(n).or_insert(i);
    }
    let row = |n: NodeId| -> Result<usize> {
        row_of
            .get(&n)
            .copied()
            .ok_or_else(|| Error::Reference(format!("no embedding for node {}", graph.node_name(n))))
    };

    // (center type, other type, sign) -> (center rows, other rows)
    let mut groups: BTreeMap<(TypeId, TypeId, bool), (Vec<usize>, Vec<usize>)> = BTreeMap::new();
    for p in pairs {
        let tc = graph.node_type(p.center);
        let c = row(p.center)?;
        let g = groups.entry((tc, graph.node_type(p.context), true)).or_default();
        g.0.push(c);
        g.1.push(row(p.context)?);
        for &n in &p.negatives {
            let g = groups.entry((tc, graph.node_type(n), false)).or_default();
            g.0.push(c);
            g.1.push(row(n)?);
        }
    }
    let mut terms = Vec::new();
    for ((tc, to, positive), (centers, others)) in groups {
        let a = tape.gather_rows(encoded.u, centers)?;
        let b = tape.gather_rows(encoded.u, others)?;
        let s = similarity_rows(tape, &params.metric, bound, a, tc, b, to)?;
        let signed = if positive { s } else { tape.scale(s, -1.0) };
        let ls = tape.log_sigmoid(signed);
        terms.push(tape.sum(ls));
    }
    let mut loss = tape.constant(Tensor::scalar(0.0));
    if !pairs.is_empty() {
        let stacked = tape.concat_cols(&terms)?;
        let sum = tape.sum(stacked);
        loss = tape.scale(sum, -1.0 / pairs.len() as f64);
    }
    if lambda != 0.0 {
        let mut penalties = Vec::with_capacity(bound.vars().len());
        for &v in bound.vars() {
            let sq = tape.mul(v, v)?;
            penalties.push(tape.sum(sq));
        }
        if !penalties.is_empty() {
            let all = tape.concat_cols(&penalties)?;
            let total = tape.sum(all);
            let scaled = tape.scale(total, lambda);
            loss = tape.add(loss, scaled)?;
        }
    }
    Ok(loss)
}

/// Value-level total loss from per-node embeddings.
pub fn total_loss_value(
    graph: &HetGraph,
    params: &ModelParams,
    embedding: impl Fn(NodeId) -> Option<Vec<f64>>,
    pairs: &[TrainingPair],
    lambda: f64,
) -> Result<f64> {
    let get = |n: NodeId| embedding(n).ok_or_else(|| Error::Reference(format!("no embedding for node {}", graph.node_name(n))));
    let mut sum = 0.0;
    for p in pairs {
        let tc = graph.node_type(p.center);
        let uc = get(p.center)?;
        let s_pos = similarity(params, &uc, tc, &get(p.context)?, graph.node_type(p.context))?;
        let mut s_neg = Vec::with_capacity(p.negatives.len());
        for &n in &p.negatives {
            s_neg.push(similarity(params, &uc, tc, &get(n)?, graph.node_type(n))?);
        }
        sum += pair_loss(s_pos, &s_neg)?;
    }
    let mean = if pairs.is_empty() { 0.0 } else { sum / pairs.len() as f64 };
    Ok(mean + lambda * params.store.sum_squares())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::GraphBuilder;
    use crate::model::Dims;

    fn two_types() -> HetGraph {
        let mut b = GraphBuilder::new();
        let p = b.add_type("P");
        let a = b.add_type("A");
        let pa = b.add_relation("PA", p, a).unwrap();
        let pn = b.add_node("p", p, &[0.0]).unwrap();
        let an = b.add_node("a", a, &[0.0]).unwrap();
        b.add_edge(pa, pn, an).unwrap();
        b.build()
    }

    fn params(g: &HetGraph, mode: MetricMode, hidden: usize, dm: usize) -> ModelParams {
        let pair = TypePair::new(TypeId(0), TypeId(1));
        ModelParams::init(g, Dims { input: 1, hidden }, mode, dm, &[pair], &mut Seed(2).rng())
    }

    #[test]
    fn type_pairs_are_canonical() {
        assert_eq!(TypePair::new(TypeId(3), TypeId(1)), TypePair::new(TypeId(1), TypeId(3)));
        assert_eq!(TypePair::new(TypeId(3), TypeId(1)).first, TypeId(1));
    }

    #[test]
    fn bilinear_identity_reduces_to_dot() {
        let g = two_types();
        let mut p = params(&g, MetricMode::Bilinear, 2, 1);
        let id = p.metric.bilinear[&TypePair::new(TypeId(0), TypeId(1))];
        *p.store.get_mut(id) = Tensor::identity(2);
        assert_eq!(similarity(&p, &[1.0, 0.0], TypeId(0), &[0.0, 1.0], TypeId(1)).unwrap(), 0.0);
        assert_eq!(similarity(&p, &[1.0, 2.0], TypeId(1), &[3.0, 4.0], TypeId(0)).unwrap(), 11.0);
    }

    #[test]
    fn bilinear_orders_arguments_by_type() {
        let g = two_types();
        let mut p = params(&g, MetricMode::Bilinear, 2, 1);
        let id = p.metric.bilinear[&TypePair::new(TypeId(0), TypeId(1))];
        *p.store.get_mut(id) = Tensor::new(2, 2, vec![0.0, 1.0, 0.0, 0.0]).unwrap();
        // u_P^T M u_A = u_P[0] * u_A[1]
        let up = [2.0, 0.0];
        let ua = [0.0, 3.0];
        assert_eq!(similarity(&p, &up, TypeId(0), &ua, TypeId(1)).unwrap(), 6.0);
        assert_eq!(similarity(&p, &ua, TypeId(1), &up, TypeId(0)).unwrap(), 6.0);
    }

    #[test]
    fn perceptron_scalar_oracle_and_zero_vector() {
        let g = two_types();
        let mut p = params(&g, MetricMode::Perceptron, 1, 1);
        for id in (0..p.store.len()).map(ParamId) {
            if p.store.name(id).starts_with("metric.") {
                *p.store.get_mut(id) = Tensor::scalar(1.0);
            }
        }
        let s = similarity(&p, &[1.0], TypeId(0), &[1.0], TypeId(1)).unwrap();
        assert!((s - 2f64.tanh()).abs() < 1e-15);
        assert!((s - 0.96403).abs() < 5e-6);
        let pair = p.metric.perceptron_pair[&TypePair::new(TypeId(0), TypeId(1))];
        *p.store.get_mut(pair) = Tensor::scalar(0.0);
        assert_eq!(similarity(&p, &[0.3], TypeId(0), &[-9.0], TypeId(1)).unwrap(), 0.0);
    }

    #[test]
    fn same_type_is_always_dot() {
        let g = two_types();
        for mode in [MetricMode::Dot, MetricMode::Bilinear, MetricMode::Perceptron] {
            let p = params(&g, mode, 2, 3);
            assert_eq!(similarity(&p, &[1.0, 2.0], TypeId(1), &[3.0, -1.0], TypeId(1)).unwrap(), 1.0);
        }
    }

    #[test]
    fn missing_pair_is_reference_error() {
        let g = two_types();
        let p = ModelParams::init(&g, Dims { input: 1, hidden: 2 }, MetricMode::Bilinear, 1, &[], &mut Seed(0).rng());
        assert!(matches!(
            similarity(&p, &[1.0, 0.0], TypeId(0), &[1.0, 0.0], TypeId(1)),
            Err(Error::Reference(_))
        ));
    }

    #[test]
    fn pair_loss_examples() {
        assert!((pair_loss(0.0, &[0.0; 3]).unwrap() - 4.0 * 2f64.ln()).abs() < 1e-12);
        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
        let expect = -(sig(2.0).ln() + sig(2.0).ln());
        assert!((pair_loss(2.0, &[-2.0]).unwrap() - expect).abs() < 1e-12);
        assert!((expect - 0.25386).abs() < 5e-6);
        assert!(pair_loss(3.0, &[0.5]).unwrap() < pair_loss(1.0, &[0.5]).unwrap());
        assert!(pair_loss(1.0, &[0.5]).unwrap() < pair_loss(1.0, &[0.9]).unwrap());
        assert!(matches!(pair_loss(f64::NAN, &[]), Err(Error::Numeric(_))));
    }

    #[test]
    fn walks_alternate_and_stop_at_sinks() {
        let g = two_types();
        let corpus = generate_walks(&g, 1, 3, Seed(0)).unwrap();
        assert_eq!(corpus.paths[0], vec![0, 1, 0]);
        assert_eq!(corpus.token_count(), 6);
        assert_eq!(corpus.node_freq.iter().sum::<u64>(), 6);

        let mut b = GraphBuilder::new();
        let t = b.add_type("T");
        b.add_node("lonely", t, &[0.0]).unwrap();
        let g = b.build();
        assert_eq!(generate_walks(&g, 2, 5, Seed(0)).unwrap().paths, vec![vec![0], vec![0]]);
        assert!(generate_walks(&g, 2, 0, Seed(0)).is_err());
    }

    #[test]
    fn sampling_table_uses_three_quarter_power() {
        let mut b = GraphBuilder::new();
        let t = b.add_type("T");
        b.add_node("n1", t, &[0.0]).unwrap();
        b.add_node("n2", t, &[0.0]).unwrap();
        let g = b.build();
        let s = NegativeSampler::from_frequencies(&g, &[16, 1]);
        assert!((s.probability(0) - 8.0 / 9.0).abs() < 1e-15);
        assert!((s.probability(1) - 1.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn window_pairs_and_self_skip() {
        let mut b = GraphBuilder::new();
        let t = b.add_type("T");
        for n in ["a", "b", "c"] {
            b.add_node(n, t, &[0.0]).unwrap();
        }
        let g = b.build();
        let corpus = WalkCorpus::from_paths(3, vec![vec![0, 1, 2]]);
        let pairs = extract_pairs(&g, &corpus, 1, 2, false, Seed(0)).unwrap();
        let got: Vec<(usize, usize)> = pairs.iter().map(|p| (p.center, p.context)).collect();
        assert_eq!(got, vec![(0, 1), (1, 0), (1, 2), (2, 1)]);
        assert!(pairs.iter().all(|p| p.negatives.len() == 2));

        let corpus = WalkCorpus::from_paths(3, vec![vec![0, 1, 0]]);
        let pairs = extract_pairs(&g, &corpus, 2, 1, false, Seed(0)).unwrap();
        assert!(pairs.iter().all(|p| p.center != p.context));
        assert_eq!(pairs.len(), 4);
    }

    #[test]
    fn corpus_round_trip() {
        let g = two_types();
        let corpus = generate_walks(&g, 3, 4, Seed(9)).unwrap();
        let mut buf = Vec::new();
        corpus.write(&mut buf).unwrap();
        assert_eq!(WalkCorpus::read(&buf[..], "c", &g).unwrap(), corpus);
        assert!(matches!(WalkCorpus::read(&b"0 7\n"[..], "c", &g), Err(Error::Reference(_))));
    }

    #[test]
    fn reachable_pairs_follow_window() {
        let mut b = GraphBuilder::new();
        let p = b.add_type("P");
        let a = b.add_type("A");
        let v = b.add_type("V");
        b.add_relation("PA", p, a).unwrap();
        b.add_relation("PV", p, v).unwrap();
        let g = b.build();
        assert_eq!(reachable_type_pairs(&g, 1).len(), 2);
        assert_eq!(reachable_type_pairs(&g, 2).len(), 3);
    }
}
