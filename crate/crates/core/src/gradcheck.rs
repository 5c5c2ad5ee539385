//! Full-model gradient check on a small fixed instance.
//!
//! Trees and training pairs are sampled once and frozen, so the loss is a
//! deterministic smooth function of the parameters alone.

use crate::error::Result;
use crate::graph::{GraphBuilder, HetGraph, NodeId, TreeSchema};
use crate::model::{encode_with_plan, Dims, ModelParams};
use crate::objective::{extract_pairs, generate_walks, reachable_type_pairs, total_loss, MetricMode, TrainingPair};
use crate::params::Bound;
use crate::sampler::{build_plan, sample_forest, AggregationPlan, Fanout};
use crate::seed::Seed;
use crate::tensor::{grad_check, GradCheckReport, Tensor};

pub const TOY_DIM: usize = 4;
pub const TOY_LAMBDA: f64 = 1e-3;
pub const TOY_EPS: f64 = 1e-5;

/// Eight nodes of types P and A joined by PA and its reverse AP, with one
/// depth-1 schema rooted at P and one depth-2 schema rooted at A.
pub fn toy_graph(seed: Seed) -> (HetGraph, Vec<TreeSchema>) {
    use rand::Rng as _;
    let mut rng = seed.derive("toy-features", 0).rng();
    let mut b = GraphBuilder::new();
    let p = b.add_type("P");
    let a = b.add_type("A");
    let pa = b.add_relation("PA", p, a).expect("fresh relation");
    let ap = b.add_relation("AP", a, p).expect("fresh relation");
    let mut feats = || -> Vec<f64> { (0..TOY_DIM).map(|_| rng.random_range(-1.0..1.0)).collect() };
    let ps: Vec<NodeId> = (0..4).map(|i| b.add_node(&format!("p{i}"), p, &feats()).expect("unique")).collect();
    let as_: Vec<NodeId> = (0..4).map(|i| b.add_node(&format!("a{i}"), a, &feats()).expect("unique")).collect();
    for (pi, ai) in [(0, 0), (0, 1), (1, 1), (2, 1), (2, 2), (3, 3), (1, 3)] {
        b.add_edge(pa, ps[pi], as_[ai]).expect("valid edge");
        b.add_edge(ap, as_[ai], ps[pi]).expect("valid edge");
    }
    let g = b.build();
    let schemas = vec![
        TreeSchema::from_relations(&g, a, &[ap]),
        TreeSchema::from_relations(&g, a, &[ap, pa]),
    ];
    (g, schemas)
}

/// A frozen loss instance: parameters, node batch, trees and pairs.
pub struct FrozenInstance {
    pub graph: HetGraph,
    pub params: ModelParams,
    pub nodes: Vec<NodeId>,
    pub per_node: Vec<Vec<usize>>,
    pub plan: AggregationPlan,
    pub pairs: Vec<TrainingPair>,
    pub lambda: f64,
}

impl FrozenInstance {
    pub fn toy(seed: Seed) -> Result<Self> {
        let (graph, schemas) = toy_graph(seed);
        let pairs_types: Vec<_> = reachable_type_pairs(&graph, 2).into_iter().collect();
        let params = ModelParams::init(
            &graph,
            Dims {
                input: TOY_DIM,
                hidden: TOY_DIM,
            },
            MetricMode::Perceptron,
            TOY_DIM,
            &pairs_types,
            &mut seed.derive("toy-init", 0).rng(),
        );
        let corpus = generate_walks(&graph, 1, 4, seed.derive("toy-walks", 0))?;
        let pairs = extract_pairs(&graph, &corpus, 2, 2, false, seed.derive("toy-pairs", 0))?;
        let nodes: Vec<NodeId> = (0..graph.node_count()).collect();
        let (trees, per_node) = sample_forest(&graph, &nodes, &schemas, Fanout::Unlimited, seed.derive("toy-trees", 0))?;
        let plan = build_plan(&trees);
        Ok(FrozenInstance {
            graph,
            params,
            nodes,
            per_node,
            plan,
            pairs,
            lambda: TOY_LAMBDA,
        })
    }

    /// Current parameter values, in store order.
    pub fn values(&self) -> Vec<Tensor> {
        self.params.store.values().to_vec()
    }

    pub fn check(&self, eps: f64) -> Result<GradCheckReport> {
        grad_check(&self.values(), eps, |tape, vars| {
            let bound = Bound::from_vars(vars.to_vec());
            let enc = encode_with_plan(tape, &self.graph, &self.params, &bound, &self.nodes, &self.per_node, &self.plan)?;
            total_loss(tape, &self.graph, &self.params, &bound, &enc, &self.pairs, self.lambda)
        })
    }
}

/// Gradient check of the whole model on the toy instance.
pub fn gradcheck_toy(seed: Seed) -> Result<GradCheckReport> {
    FrozenInstance::toy(seed)?.check(TOY_EPS)
}
