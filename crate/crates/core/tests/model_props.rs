use proptest::prelude::*;

use tgnn::graph::{GraphBuilder, HetGraph, RelationId, TypeId};
use tgnn::model::{aggregate_relation, encode_nodes, gru_cell, Dims, ModelParams};
use tgnn::objective::{pair_loss, similarity, MetricMode, TypePair};
use tgnn::params::ParamId;
use tgnn::sampler::{schema_set_for_type, Fanout};
use tgnn::seed::Seed;
use tgnn::synthetic::{gen_synthetic, SyntheticSpec};
use tgnn::tensor::{Tape, Tensor};

fn three_types() -> HetGraph {
    let mut b = GraphBuilder::new();
    let p = b.add_type("P");
    let a = b.add_type("A");
    let v = b.add_type("V");
    b.add_relation("AP", a, p).unwrap();
    b.add_relation("PV", p, v).unwrap();
    b.add_node("p", p, &[0.0, 0.0, 0.0]).unwrap();
    b.build()
}

fn params(mode: MetricMode, hidden: usize, seed: u64) -> (HetGraph, ModelParams) {
    let g = three_types();
    let pairs: Vec<TypePair> = g.type_ids().flat_map(|a| g.type_ids().map(move |b| TypePair::new(a, b))).collect();
    let p = ModelParams::init(&g, Dims { input: 3, hidden }, mode, 2, &pairs, &mut Seed(seed).rng());
    (g, p)
}

fn vec_of(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0f64..3.0, n)
}

proptest! {
    #[test]
    fn gru_output_is_bounded(x in vec_of(3), h in vec_of(4), seed in any::<u64>(), scale in 0.1f64..20.0) {
        let (_, mut p) = params(MetricMode::Dot, 4, seed);
        for id in (0..p.store.len()).map(ParamId) {
            for v in p.store.get_mut(id).data_mut() {
                *v *= scale;
            }
        }
        let mut tape = Tape::new();
        let bound = p.store.bind(&mut tape);
        let xv = tape.constant(Tensor::row(&x));
        let hv = tape.constant(Tensor::row(&h));
        let out = gru_cell(&mut tape, &p, &bound, xv, hv).unwrap();
        for (o, h) in tape.value(out).data().iter().zip(&h) {
            prop_assert!(o.abs() <= h.abs().max(1.0) + 1e-12);
        }
    }

    #[test]
    fn child_order_does_not_change_the_aggregate(rows in prop::collection::vec(vec_of(4), 1..6), seed in any::<u64>(), rot in 0usize..6) {
        let (_, p) = params(MetricMode::Dot, 4, seed);
        let mut tape = Tape::new();
        let bound = p.store.bind(&mut tape);
        let vars: Vec<_> = rows.iter().map(|r| tape.constant(Tensor::row(r))).collect();
        let mut permuted = vars.clone();
        permuted.rotate_left(rot % vars.len());
        permuted.reverse();
        let a = aggregate_relation(&mut tape, &p, &bound, &vars, RelationId(0)).unwrap();
        let b = aggregate_relation(&mut tape, &p, &bound, &permuted, RelationId(0)).unwrap();
        for (x, y) in tape.value(a).data().iter().zip(tape.value(b).data()) {
            prop_assert!((x - y).abs() <= 1e-12 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn softmax_ignores_a_shared_logit_offset(logits in vec_of(5), shift in -50.0f64..50.0) {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::row(&logits));
        let shifted: Vec<f64> = logits.iter().map(|l| l + shift).collect();
        let b = tape.constant(Tensor::row(&shifted));
        let sa = tape.softmax_rows(a);
        let sb = tape.softmax_rows(b);
        let total: f64 = tape.value(sa).data().iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        for (x, y) in tape.value(sa).data().iter().zip(tape.value(sb).data()) {
            prop_assert!(*x >= 0.0);
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn pair_loss_is_monotone(pos in -5.0f64..5.0, negs in vec_of(3), bump in 1e-3f64..2.0, which in 0usize..3) {
        let base = pair_loss(pos, &negs).unwrap();
        prop_assert!(pair_loss(pos + bump, &negs).unwrap() < base);
        let mut up = negs.clone();
        up[which] += bump;
        prop_assert!(pair_loss(pos, &up).unwrap() > base);
    }

    #[test]
    fn identity_bilinear_equals_dot(u in vec_of(3), v in vec_of(3), a in 0usize..3, b in 0usize..3) {
        let (_, mut bil) = params(MetricMode::Bilinear, 3, 0);
        let (_, dot) = params(MetricMode::Dot, 3, 0);
        let ids: Vec<ParamId> = bil.metric.bilinear.values().copied().collect();
        for id in ids {
            *bil.store.get_mut(id) = Tensor::identity(3);
        }
        let (ta, tb) = (TypeId(a), TypeId(b));
        prop_assert_eq!(similarity(&bil, &u, ta, &v, tb).unwrap(), similarity(&dot, &u, ta, &v, tb).unwrap());
    }
}

#[test]
fn both_orientations_share_metric_parameters() {
    for mode in [MetricMode::Bilinear, MetricMode::Perceptron] {
        let (g, p) = params(mode, 3, 1);
        for a in g.type_ids() {
            for b in g.type_ids().filter(|&b| b != a) {
                assert_eq!(
                    p.metric.params_for(TypePair::new(a, b)).unwrap(),
                    p.metric.params_for(TypePair::new(b, a)).unwrap()
                );
            }
        }
    }
}

#[test]
fn mixed_type_batches_encode_every_schema() {
    let bench = gen_synthetic(&SyntheticSpec::dblp_scaled()).unwrap();
    let g = &bench.graph;
    let nodes: Vec<usize> = (0..g.node_count()).step_by(7).collect();
    let p = ModelParams::init(g, Dims { input: g.feature_dim(), hidden: 5 }, MetricMode::Perceptron, 3, &[], &mut Seed(3).rng());
    let enc = encode_nodes(g, &nodes, &bench.schemas, &p, Fanout::Cap(4), Seed(3)).unwrap();
    let mut depths = std::collections::BTreeSet::new();
    for &n in &nodes {
        let e = &enc.nodes[&n];
        let set = schema_set_for_type(&bench.schemas, g.node_type(n));
        depths.extend(set.iter().map(|s| s.depth()));
        assert_eq!(e.schema_outputs.len(), set.len());
        assert_eq!(e.alpha.len(), set.len() + 1);
        assert!(e.alpha.iter().all(|&a| a >= 0.0));
        assert!((e.alpha.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(e.u.iter().all(|x| x.is_finite() && *x >= 0.0));
    }
    assert!(depths.len() > 1, "roots of different depths are mixed in one batch");
}
