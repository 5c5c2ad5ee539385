//! The tree-schema encoder.
//!
//! Every node of a sampled tree gets a hidden state bottom-up: level-0 nodes
//! start from their features, a level-`a` node runs the shared GRU on its own
//! features and the relation-specific mean of its children's states. The
//! root's state is the schema output `z`. Schema outputs are fused with the
//! projected self-features `z^0 = W_t x` by softmax attention and a ReLU.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{HetGraph, NodeId, RelationId, TreeSchema, TypeId};
use crate::objective::{MetricMode, MetricParams, TypePair};
use crate::params::{glorot, uniform, Bound, Checkpoint, ParamId, ParamStore};
use crate::sampler::{build_plan, sample_forest, AggregationPlan, Fanout, NeighborTree};
use crate::seed::{Rng, Seed};
use crate::tensor::{Tape, Tensor, Var};

/// Half-width of the uniform init for attention and metric vectors.
pub const VECTOR_INIT_BOUND: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    /// Input feature dimension `d`.
    pub input: usize,
    /// Hidden and representation dimension `d'`.
    pub hidden: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GruParams {
    pub a_z: ParamId,
    pub b_z: ParamId,
    pub a_r: ParamId,
    pub b_r: ParamId,
    pub a_h: ParamId,
    pub b_h: ParamId,
}

const GRU_NAMES: [&str; 6] = ["A_z", "B_z", "A_r", "B_r", "A_h", "B_h"];

/// Every trainable weight: one shared GRU, `W_r` per relation, `W_t` and an
/// attention vector per node type, and the similarity metric parameters.
///
/// Parameter names: `gru.A_z` .. `gru.B_h`, `rel.<relation>.W`,
/// `type.<type>.W`, `attn.<type>`, `metric.bilinear.<A>|<B>`,
/// `metric.perceptron.type.<type>`, `metric.perceptron.pair.<A>|<B>`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub store: ParamStore,
    pub dims: Dims,
    pub gru: GruParams,
    pub relation_w: Vec<ParamId>,
    pub type_w: Vec<ParamId>,
    pub attention: Vec<ParamId>,
    pub metric: MetricParams,
}

impl ModelParams {
    /// Fresh parameters. Matrices use Glorot-uniform init, vectors uniform
    /// on `+-0.1`. Metric parameters are created for `metric_pairs` only.
    pub fn init(
        graph: &HetGraph,
        dims: Dims,
        mode: MetricMode,
        metric_dim: usize,
        metric_pairs: &[TypePair],
        rng: &mut Rng,
    ) -> Self {
        let (d, h) = (dims.input, dims.hidden);
        let mut store = ParamStore::new();
        let mut gru_ids = [ParamId(0); 6];
        for (slot, name) in gru_ids.iter_mut().zip(GRU_NAMES) {
            let cols = if name.starts_with('A') { d } else { h };
            *slot = store.add(format!("gru.{name}"), glorot(h, cols, rng));
        }
        let [a_z, b_z, a_r, b_r, a_h, b_h] = gru_ids;
        let relation_w = graph
            .relations()
            .iter()
            .map(|r| store.add(format!("rel.{}.W", r.name), glorot(h, h, rng)))
            .collect();
        let type_w = graph
            .type_ids()
            .map(|t| store.add(format!("type.{}.W", graph.type_name(t)), glorot(h, d, rng)))
            .collect();
        let attention = graph
            .type_ids()
            .map(|t| store.add(format!("attn.{}", graph.type_name(t)), uniform(1, 2 * h, VECTOR_INIT_BOUND, rng)))
            .collect();
        let mut metric = MetricParams::new(mode, metric_dim);
        if mode == MetricMode::Perceptron {
            for t in graph.type_ids() {
                metric.add_type_projection(graph, &mut store, t, h, rng);
            }
        }
        for &pair in metric_pairs {
            metric.ensure_pair(graph, &mut store, pair, h, rng);
        }
        ModelParams {
            store,
            dims,
            gru: GruParams {
                a_z,
                b_z,
                a_r,
                b_r,
                a_h,
                b_h,
            },
            relation_w,
            type_w,
            attention,
            metric,
        }
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut ckpt = self.store.to_checkpoint();
        ckpt.meta = BTreeMap::from([
            ("metric_mode".to_string(), self.metric.mode.as_str().to_string()),
            ("metric_dim".to_string(), self.metric.metric_dim.to_string()),
        ]);
        ckpt
    }

    /// Rebuilds parameters from a checkpoint, resolving names against
    /// `graph`'s type and relation rosters. Parameter order follows the
    /// checkpoint so that a reload re-serializes identically.
    pub fn from_checkpoint(graph: &HetGraph, ckpt: &Checkpoint) -> Result<Self> {
        let mode = match ckpt.meta.get("metric_mode") {
            Some(m) => MetricMode::parse(m)?,
            None => return Err(Error::Contract("checkpoint lacks metric_mode".into())),
        };
        let metric_dim: usize = ckpt
            .meta
            .get("metric_dim")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::Contract("checkpoint lacks metric_dim".into()))?;
        let unknown = |what: &str, name: &str| Error::Reference(format!("checkpoint names unknown {what} {name:?}"));
        let type_of = |name: &str| graph.type_by_name(name).ok_or_else(|| unknown("type", name));
        let pair_of = |name: &str| -> Result<TypePair> {
            let (a, b) = name.split_once('|').ok_or_else(|| unknown("type pair", name))?;
            Ok(TypePair::new(type_of(a)?, type_of(b)?))
        };

        let mut store = ParamStore::new();
        let mut gru: [Option<ParamId>; 6] = [None; 6];
        let mut relation_w = vec![None; graph.relation_count()];
        let mut type_w = vec![None; graph.type_count()];
        let mut attention = vec![None; graph.type_count()];
        let mut metric = MetricParams::new(mode, metric_dim);
        for entry in &ckpt.params {
            let value = Tensor::new(entry.shape[0], entry.shape[1], entry.values.clone())?;
            let name = entry.name.as_str();
            let id = store.add(name, value);
            if let Some(g) = name.strip_prefix("gru.") {
                let slot = GRU_NAMES.iter().position(|n| *n == g).ok_or_else(|| unknown("parameter", name))?;
                gru[slot] = Some(id);
            } else if let Some(r) = name.strip_prefix("rel.").and_then(|s| s.strip_suffix(".W")) {
                let r = graph.relation_by_name(r).ok_or_else(|| unknown("relation", r))?;
                relation_w[r.0] = Some(id);
            } else if let Some(t) = name.strip_prefix("type.").and_then(|s| s.strip_suffix(".W")) {
                type_w[type_of(t)?.0] = Some(id);
            } else if let Some(t) = name.strip_prefix("attn.") {
                attention[type_of(t)?.0] = Some(id);
            } else if let Some(p) = name.strip_prefix("metric.bilinear.") {
                metric.bilinear.insert(pair_of(p)?, id);
            } else if let Some(t) = name.strip_prefix("metric.perceptron.type.") {
                metric.perceptron_type.insert(type_of(t)?, id);
            } else if let Some(p) = name.strip_prefix("metric.perceptron.pair.") {
                metric.perceptron_pair.insert(pair_of(p)?, id);
            } else {
                return Err(unknown("parameter", name));
            }
        }
        let missing = |what: &str| Error::Contract(format!("checkpoint is missing {what}"));
        let gru_ids: Vec<ParamId> = gru.iter().map(|g| g.ok_or_else(|| missing("GRU weights"))).collect::<Result<_>>()?;
        let collect = |v: Vec<Option<ParamId>>, what: &str| -> Result<Vec<ParamId>> {
            v.into_iter().map(|x| x.ok_or_else(|| missing(what))).collect()
        };
        let a_z = store.get(gru_ids[0]);
        let dims = Dims {
            input: a_z.cols(),
            hidden: a_z.rows(),
        };
        let params = ModelParams {
            dims,
            gru: GruParams {
                a_z: gru_ids[0],
                b_z: gru_ids[1],
                a_r: gru_ids[2],
                b_r: gru_ids[3],
                a_h: gru_ids[4],
                b_h: gru_ids[5],
            },
            relation_w: collect(relation_w, "relation weights")?,
            type_w: collect(type_w, "type projections")?,
            attention: collect(attention, "attention vectors")?,
            metric,
            store,
        };
        params.check_shapes()?;
        Ok(params)
    }

    fn check_shapes(&self) -> Result<()> {
        let (d, h) = (self.dims.input, self.dims.hidden);
        let expect = |id: ParamId, shape: (usize, usize)| -> Result<()> {
            let got = self.store.get(id).shape();
            if got != shape {
                return Err(Error::Shape {
                    op: "model parameters",
                    shapes: format!("{} is {:?}, expected {:?}", self.store.name(id), got, shape),
                });
            }
            Ok(())
        };
        let g = self.gru;
        for id in [g.a_z, g.a_r, g.a_h] {
            expect(id, (h, d))?;
        }
        for id in [g.b_z, g.b_r, g.b_h] {
            expect(id, (h, h))?;
        }
        for &id in &self.relation_w {
            expect(id, (h, h))?;
        }
        for &id in &self.type_w {
            expect(id, (h, d))?;
        }
        for &id in &self.attention {
            expect(id, (1, 2 * h))?;
        }
        let dm = self.metric.metric_dim;
        for &id in self.metric.bilinear.values() {
            expect(id, (h, h))?;
        }
        for &id in self.metric.perceptron_type.values() {
            expect(id, (dm, h))?;
        }
        for &id in self.metric.perceptron_pair.values() {
            expect(id, (1, dm))?;
        }
        Ok(())
    }
}

fn features_tensor(graph: &HetGraph, nodes: &[NodeId]) -> Tensor {
    let rows: Vec<&[f64]> = nodes.iter().map(|&n| graph.features(n)).collect();
    Tensor::from_rows(&rows, graph.feature_dim()).expect("uniform feature dimension")
}

/// `z = sig(A_z x + B_z h)`, `r = sig(A_r x + B_r h)`,
/// `h~ = tanh(A_h x + B_h (r o h))`, output `z o h + (1 - z) o h~`.
/// Rows of `x` (`n x d`) and `h` (`n x d'`) are independent cells.
pub fn gru_cell(tape: &mut Tape, params: &ModelParams, bound: &Bound, x: Var, h: Var) -> Result<Var> {
    let (sx, sh) = (tape.shape(x), tape.shape(h));
    if sx.1 != params.dims.input || sh.1 != params.dims.hidden || sx.0 != sh.0 {
        return Err(Error::Shape {
            op: "gru_cell",
            shapes: format!("x {}x{}, h {}x{} with d={}, d'={}", sx.0, sx.1, sh.0, sh.1, params.dims.input, params.dims.hidden),
        });
    }
    let g = params.gru;
    let gate = |tape: &mut Tape, a: ParamId, b: ParamId, hin: Var| -> Result<Var> {
        let ax = tape.matmul_bt(x, bound.var(a))?;
        let bh = tape.matmul_bt(hin, bound.var(b))?;
        tape.add(ax, bh)
    };
    let z_pre = gate(tape, g.a_z, g.b_z, h)?;
    let z = tape.sigmoid(z_pre);
    let r_pre = gate(tape, g.a_r, g.b_r, h)?;
    let r = tape.sigmoid(r_pre);
    let rh = tape.mul(r, h)?;
    let cand_pre = gate(tape, g.a_h, g.b_h, rh)?;
    let cand = tape.tanh(cand_pre);
    let keep = tape.mul(z, h)?;
    let one_minus_z = tape.one_minus(z);
    let update = tape.mul(one_minus_z, cand)?;
    tape.add(keep, update)
}

/// `(1 / |children|) * sum_j W_r h_j`; zero message without children.
pub fn aggregate_relation(
    tape: &mut Tape,
    params: &ModelParams,
    bound: &Bound,
    children: &[Var],
    relation: RelationId,
) -> Result<Var> {
    let w = *params
        .relation_w
        .get(relation.0)
        .ok_or_else(|| Error::Reference(format!("unknown relation id {}", relation.0)))?;
    if children.is_empty() {
        return Ok(tape.constant(Tensor::zeros(1, params.dims.hidden)));
    }
    let stacked = tape.concat_rows(children)?;
    let projected = tape.matmul_bt(stacked, bound.var(w))?;
    Ok(tape.mean_rows(projected))
}

/// Level-0 state: raw features when `d == d'`, else `W_{t_0} x`.
pub fn level0_state(tape: &mut Tape, params: &ModelParams, bound: &Bound, x: Var, t0: TypeId) -> Result<Var> {
    if params.dims.input == params.dims.hidden {
        Ok(x)
    } else {
        tape.matmul_bt(x, bound.var(params.type_w[t0.0]))
    }
}

/// Schema output of `tree`'s root by direct recursion over the tree.
pub fn hierarchical_aggregate(
    tape: &mut Tape,
    graph: &HetGraph,
    params: &ModelParams,
    bound: &Bound,
    tree: &NeighborTree,
) -> Result<Var> {
    fn state(
        tape: &mut Tape,
        graph: &HetGraph,
        params: &ModelParams,
        bound: &Bound,
        tree: &NeighborTree,
        memo: &mut HashMap<(usize, NodeId), Var>,
        level: usize,
        node: NodeId,
    ) -> Result<Var> {
        if let Some(&v) = memo.get(&(level, node)) {
            return Ok(v);
        }
        let x = tape.constant(Tensor::row(graph.features(node)));
        let out = if level == 0 {
            level0_state(tape, params, bound, x, tree.schema.types[0])?
        } else {
            let mut kids = Vec::new();
            for &c in tree.children_of(level, node) {
                kids.push(state(tape, graph, params, bound, tree, memo, level - 1, c)?);
            }
            let msg = aggregate_relation(tape, params, bound, &kids, tree.schema.relation_into(level))?;
            gru_cell(tape, params, bound, x, msg)?
        };
        memo.insert((level, node), out);
        Ok(out)
    }
    let mut memo = HashMap::new();
    state(tape, graph, params, bound, tree, &mut memo, tree.depth(), tree.root)
}

/// Attention fusion for one node. Returns `u` (`1 x d'`) and the weights
/// `alpha` (`1 x (k + 1)`, self term first).
pub fn integrate(
    tape: &mut Tape,
    params: &ModelParams,
    bound: &Bound,
    x_root: Var,
    schema_outputs: &[Var],
    root_type: TypeId,
) -> Result<(Var, Var)> {
    let (u, alpha) = integrate_rows(tape, params, bound, x_root, schema_outputs, root_type)?;
    Ok((u, alpha))
}

/// Row-batched attention fusion: all inputs have one row per node.
fn integrate_rows(
    tape: &mut Tape,
    params: &ModelParams,
    bound: &Bound,
    x: Var,
    outputs: &[Var],
    t: TypeId,
) -> Result<(Var, Var)> {
    let h = params.dims.hidden;
    let w_t = *params
        .type_w
        .get(t.0)
        .ok_or_else(|| Error::Reference(format!("unknown type id {}", t.0)))?;
    let z0 = tape.matmul_bt(x, bound.var(w_t))?;
    let attn = bound.var(params.attention[t.0]);
    let a_self = tape.slice_cols(attn, 0, h)?;
    let a_other = tape.slice_cols(attn, h, h)?;
    let base = tape.matmul_bt(z0, a_self)?;
    let mut candidates = Vec::with_capacity(outputs.len() + 1);
    candidates.push(z0);
    candidates.extend_from_slice(outputs);
    let mut logits = Vec::with_capacity(candidates.len());
    for &z in &candidates {
        if tape.shape(z) != tape.shape(z0) {
            return Err(Error::Shape {
                op: "integrate",
                shapes: format!("{:?} vs {:?}", tape.shape(z), tape.shape(z0)),
            });
        }
        let other = tape.matmul_bt(z, a_other)?;
        let e = tape.add(base, other)?;
        logits.push(tape.leaky_relu(e));
    }
    let logits = tape.concat_cols(&logits)?;
    let alpha = tape.softmax_rows(logits);
    let mut acc = None;
    for (i, &z) in candidates.iter().enumerate() {
        let w = tape.slice_cols(alpha, i, 1)?;
        let term = tape.scale_rows(z, w)?;
        acc = Some(match acc {
            None => term,
            Some(prev) => tape.add(prev, term)?,
        });
    }
    let u = tape.relu(acc.expect("z^0 always present"));
    Ok((u, alpha))
}

/// Executes a plan stage by stage. Returns one state matrix per group, rows
/// aligned with the group's node list.
pub fn execute_plan(
    tape: &mut Tape,
    graph: &HetGraph,
    params: &ModelParams,
    bound: &Bound,
    plan: &AggregationPlan,
) -> Result<Vec<Var>> {
    let mut states: Vec<Var> = Vec::with_capacity(plan.groups.len());
    for group in &plan.groups {
        let x = tape.constant(features_tensor(graph, &group.nodes));
        let state = match (group.child_group, group.relation()) {
            (None, _) | (_, None) => level0_state(tape, params, bound, x, group.types[0])?,
            (Some(child), Some(rel)) => {
                let w = *params
                    .relation_w
                    .get(rel.0)
                    .ok_or_else(|| Error::Reference(format!("unknown relation id {}", rel.0)))?;
                let child_states = states[child];
                let projected = tape.matmul_bt(child_states, bound.var(w))?;
                let msg = tape.segment_mean(projected, group.children.clone())?;
                gru_cell(tape, params, bound, x, msg)?
            }
        };
        states.push(state);
    }
    Ok(states)
}

/// Per-type slice of an encoded batch.
#[derive(Clone, Debug)]
pub struct TypeBlock {
    pub node_type: TypeId,
    /// Batch positions of this block's rows.
    pub positions: Vec<usize>,
    pub alpha: Var,
    pub schema_outputs: Vec<Var>,
}

#[derive(Clone, Debug)]
pub struct EncodedVars {
    pub nodes: Vec<NodeId>,
    /// `n x d'` representations in batch order.
    pub u: Var,
    pub blocks: Vec<TypeBlock>,
}

/// Encodes `nodes` on `tape` from a plan over their trees. `per_node[i]`
/// lists the plan outputs (tree indices) of `nodes[i]` in schema order.
pub fn encode_with_plan(
    tape: &mut Tape,
    graph: &HetGraph,
    params: &ModelParams,
    bound: &Bound,
    nodes: &[NodeId],
    per_node: &[Vec<usize>],
    plan: &AggregationPlan,
) -> Result<EncodedVars> {
    let states = execute_plan(tape, graph, params, bound, plan)?;
    let mut by_type: BTreeMap<TypeId, Vec<usize>> = BTreeMap::new();
    for (pos, &n) in nodes.iter().enumerate() {
        by_type.entry(graph.node_type(n)).or_default().push(pos);
    }
    let mut blocks = Vec::new();
    let mut block_u = Vec::new();
    let mut order = Vec::with_capacity(nodes.len());
    for (t, positions) in by_type {
        let k = per_node[positions[0]].len();
        let mut outputs = Vec::with_capacity(k);
        for j in 0..k {
            let first = plan.outputs[per_node[positions[0]][j]];
            let mut rows = Vec::with_capacity(positions.len());
            for &pos in &positions {
                let trees = &per_node[pos];
                if trees.len() != k {
                    return Err(Error::Contract(format!(
                        "nodes of type {} have differing schema counts",
                        graph.type_name(t)
                    )));
                }
                let out = plan.outputs[trees[j]];
                if out.group != first.group {
                    return Err(Error::Contract("schema outputs span several plan groups".into()));
                }
                rows.push(out.row);
            }
            outputs.push(tape.gather_rows(states[first.group], rows)?);
        }
        let block_nodes: Vec<NodeId> = positions.iter().map(|&p| nodes[p]).collect();
        let x = tape.constant(features_tensor(graph, &block_nodes));
        let (u, alpha) = integrate_rows(tape, params, bound, x, &outputs, t)?;
        block_u.push(u);
        order.extend(positions.iter().copied());
        blocks.push(TypeBlock {
            node_type: t,
            positions,
            alpha,
            schema_outputs: outputs,
        });
    }
    let u = if block_u.is_empty() {
        tape.constant(Tensor::zeros(0, params.dims.hidden))
    } else {
        let stacked = tape.concat_rows(&block_u)?;
        let mut inverse = vec![0; order.len()];
        for (row, &pos) in order.iter().enumerate() {
            inverse[pos] = row;
        }
        tape.gather_rows(stacked, inverse)?
    };
    Ok(EncodedVars {
        nodes: nodes.to_vec(),
        u,
        blocks,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeEncoding {
    pub u: Vec<f64>,
    /// Attention weights, self term first then one per schema.
    pub alpha: Vec<f64>,
    pub schema_outputs: Vec<Vec<f64>>,
}

/// Representations of a batch of nodes.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EncodedBatch {
    pub dim: usize,
    pub nodes: BTreeMap<NodeId, NodeEncoding>,
}

impl EncodedBatch {
    pub fn from_tape(tape: &Tape, vars: &EncodedVars, dim: usize) -> Self {
        let mut nodes = BTreeMap::new();
        for block in &vars.blocks {
            let alpha = tape.value(block.alpha);
            let outs: Vec<&Tensor> = block.schema_outputs.iter().map(|&v| tape.value(v)).collect();
            for (row, &pos) in block.positions.iter().enumerate() {
                nodes.insert(
                    vars.nodes[pos],
                    NodeEncoding {
                        u: tape.value(vars.u).row_slice(pos).to_vec(),
                        alpha: alpha.row_slice(row).to_vec(),
                        schema_outputs: outs.iter().map(|t| t.row_slice(row).to_vec()).collect(),
                    },
                );
            }
        }
        EncodedBatch { dim, nodes }
    }

    pub fn get(&self, node: NodeId) -> Option<&[f64]> {
        self.nodes.get(&node).map(|e| e.u.as_slice())
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Samples trees for `nodes`, then encodes them through one aggregation
/// plan. Deterministic in (`seed`, `fanout`).
pub fn encode_nodes(
    graph: &HetGraph,
    nodes: &[NodeId],
    schemas: &[TreeSchema],
    params: &ModelParams,
    fanout: Fanout,
    seed: Seed,
) -> Result<EncodedBatch> {
    let (trees, per_node) = sample_forest(graph, nodes, schemas, fanout, seed)?;
    let plan = build_plan(&trees);
    let mut tape = Tape::new();
    let bound = params.store.bind(&mut tape);
    let vars = encode_with_plan(&mut tape, graph, params, &bound, nodes, &per_node, &plan)?;
    Ok(EncodedBatch::from_tape(&tape, &vars, params.dims.hidden))
}

/// Encodes every node of the graph.
pub fn encode_all(
    graph: &HetGraph,
    schemas: &[TreeSchema],
    params: &ModelParams,
    fanout: Fanout,
    seed: Seed,
) -> Result<EncodedBatch> {
    let nodes: Vec<NodeId> = (0..graph.node_count()).collect();
    encode_nodes(graph, &nodes, schemas, params, fanout, seed)
}
