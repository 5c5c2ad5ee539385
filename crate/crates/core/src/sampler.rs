//! Tree-structured neighborhoods and the deduplicated aggregation plan.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Direction, HetGraph, NodeId, RelationId, TreeSchema, TypeId};
use crate::seed::{Rng, Seed};

/// Per-parent child cap. `Unlimited` reproduces the full neighborhood.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Option<usize>", into = "Option<usize>")]
pub enum Fanout {
    Unlimited,
    Cap(usize),
}

impl From<Option<usize>> for Fanout {
    fn from(v: Option<usize>) -> Self {
        v.map_or(Fanout::Unlimited, Fanout::Cap)
    }
}

impl From<Fanout> for Option<usize> {
    fn from(f: Fanout) -> Self {
        match f {
            Fanout::Unlimited => None,
            Fanout::Cap(c) => Some(c),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct NeighborTree {
    pub schema: TreeSchema,
    pub root: NodeId,
    /// `levels[a]` holds the distinct level-`a` nodes, sorted; `levels[m] == [root]`.
    pub levels: Vec<Vec<NodeId>>,
    /// `children[a][node]` lists the level-`a - 1` children of a level-`a`
    /// node; `children[0]` is empty.
    pub children: Vec<BTreeMap<NodeId, Vec<NodeId>>>,
    pub fanout: Fanout,
}

impl NeighborTree {
    pub fn depth(&self) -> usize {
        self.schema.depth()
    }

    pub fn children_of(&self, level: usize, node: NodeId) -> &[NodeId] {
        self.children[level].get(&node).map_or(&[], Vec::as_slice)
    }
}

/// Expands the schema's neighborhood of `root` level by level, from the root
/// down to level 0. Children of a level-`a` node are the sources of its
/// incoming `r_a` edges; when there are more than the cap, a uniform sample
/// without replacement is kept.
pub fn sample_tree(
    graph: &HetGraph,
    root: NodeId,
    schema: &TreeSchema,
    fanout: Fanout,
    rng: &mut Rng,
) -> Result<NeighborTree> {
    if root >= graph.node_count() {
        return Err(Error::Reference(format!("unknown node id {root}")));
    }
    if graph.node_type(root) != schema.root_type() {
        return Err(Error::Contract(format!(
            "node {} has type {} but schema {} is rooted at {}",
            graph.node_name(root),
            graph.type_name(graph.node_type(root)),
            schema.name,
            graph.type_name(schema.root_type())
        )));
    }
    let m = schema.depth();
    let mut levels = vec![Vec::new(); m + 1];
    let mut children = vec![BTreeMap::new(); m + 1];
    levels[m] = vec![root];
    for a in (1..=m).rev() {
        let rel = schema.relation_into(a);
        let mut next = BTreeSet::new();
        for &parent in &levels[a] {
            let nbrs = graph.neighbors(parent, rel, Direction::Reverse)?;
            let chosen: Vec<NodeId> = match fanout {
                Fanout::Cap(cap) if nbrs.len() > cap => {
                    let mut picked: Vec<NodeId> = rand::seq::index::sample(rng, nbrs.len(), cap)
                        .into_iter()
                        .map(|i| nbrs[i])
                        .collect();
                    picked.sort_unstable();
                    picked
                }
                _ => nbrs.to_vec(),
            };
            next.extend(chosen.iter().copied());
            children[a].insert(parent, chosen);
        }
        levels[a - 1] = next.into_iter().collect();
    }
    Ok(NeighborTree {
        schema: schema.clone(),
        root,
        levels,
        children,
        fanout,
    })
}

/// Schemas rooted at `t`, in configuration order.
pub fn schema_set_for_type(schemas: &[TreeSchema], t: TypeId) -> Vec<&TreeSchema> {
    schemas.iter().filter(|s| s.root_type() == t).collect()
}

/// Trees for every (node, schema of its type) pair. Each root draws from its
/// own stream derived from `seed`, so the result does not depend on batch
/// composition. Returns the trees and, per input node, the indices of its
/// trees in schema order.
pub fn sample_forest(
    graph: &HetGraph,
    nodes: &[NodeId],
    schemas: &[TreeSchema],
    fanout: Fanout,
    seed: Seed,
) -> Result<(Vec<NeighborTree>, Vec<Vec<usize>>)> {
    let mut trees = Vec::new();
    let mut per_node = Vec::with_capacity(nodes.len());
    for &n in nodes {
        if n >= graph.node_count() {
            return Err(Error::Reference(format!("unknown node id {n}")));
        }
        let t = graph.node_type(n);
        let mut idx = Vec::new();
        for (si, schema) in schemas.iter().enumerate().filter(|(_, s)| s.root_type() == t) {
            let mut rng = seed.derive("root", n as u64).derive("schema", si as u64).rng();
            idx.push(trees.len());
            trees.push(sample_tree(graph, n, schema, fanout, &mut rng)?);
        }
        per_node.push(idx);
    }
    Ok((trees, per_node))
}

/// One deduplicated batch of hidden states: every distinct (node, child
/// list) pair reached through the same schema prefix.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PlanGroup {
    pub level: usize,
    /// Prefix `t_0 ..= t_level`.
    pub types: Vec<TypeId>,
    /// Prefix `r_1 ..= r_level`.
    pub relations: Vec<RelationId>,
    /// Group holding the children's states (`None` at level 0).
    pub child_group: Option<usize>,
    pub nodes: Vec<NodeId>,
    /// Row indices into `child_group`, one list per entry of `nodes`.
    pub children: Vec<Vec<usize>>,
}

impl PlanGroup {
    pub fn relation(&self) -> Option<RelationId> {
        self.relations.last().copied()
    }

    pub fn node_type(&self) -> TypeId {
        *self.types.last().expect("prefix is non-empty")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct PlanOutput {
    pub root: NodeId,
    pub group: usize,
    pub row: usize,
}

/// Bottom-up schedule over many trees where shared sub-computations appear
/// once. `outputs[i]` locates the root state of the `i`-th input tree.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct AggregationPlan {
    pub groups: Vec<PlanGroup>,
    pub outputs: Vec<PlanOutput>,
}

impl AggregationPlan {
    /// Total number of hidden states computed by the plan.
    pub fn state_count(&self) -> usize {
        self.groups.iter().map(|g| g.nodes.len()).sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }
}

#[derive(Default)]
struct GroupBuilder {
    group: Option<PlanGroup>,
    rows: HashMap<(NodeId, Vec<usize>), usize>,
}

pub fn build_plan(trees: &[NeighborTree]) -> AggregationPlan {
    type PrefixKey = (Vec<TypeId>, Vec<RelationId>);
    let mut by_prefix: HashMap<PrefixKey, usize> = HashMap::new();
    let mut builders: Vec<GroupBuilder> = Vec::new();
    let mut outputs = Vec::with_capacity(trees.len());

    for tree in trees {
        let schema = &tree.schema;
        let mut below: HashMap<NodeId, usize> = HashMap::new();
        let mut below_group = None;
        for a in 0..=schema.depth() {
            let key = (schema.types[..=a].to_vec(), schema.relations[..a].to_vec());
            let gid = *by_prefix.entry(key).or_insert_with(|| {
                builders.push(GroupBuilder {
                    group: Some(PlanGroup {
                        level: a,
                        types: schema.types[..=a].to_vec(),
                        relations: schema.relations[..a].to_vec(),
                        child_group: below_group,
                        nodes: Vec::new(),
                        children: Vec::new(),
                    }),
                    rows: HashMap::new(),
                });
                builders.len() - 1
            });
            let b = &mut builders[gid];
            let mut here = HashMap::with_capacity(tree.levels[a].len());
            for &node in &tree.levels[a] {
                let child_rows: Vec<usize> = tree.children_of(a, node).iter().map(|c| below[c]).collect();
                let group = b.group.as_mut().expect("group present");
                let row = *b.rows.entry((node, child_rows.clone())).or_insert_with(|| {
                    group.nodes.push(node);
                    group.children.push(child_rows);
                    group.nodes.len() - 1
                });
                here.insert(node, row);
            }
            below = here;
            below_group = Some(gid);
        }
        outputs.push(PlanOutput {
            root: tree.root,
            group: below_group.expect("depth >= 0"),
            row: below[&tree.root],
        });
    }

    // stable reorder so that stages run level 0 upward
    let mut order: Vec<usize> = (0..builders.len()).collect();
    order.sort_by_key(|&g| builders[g].group.as_ref().map_or(0, |g| g.level));
    let mut new_index = vec![0; order.len()];
    for (new, &old) in order.iter().enumerate() {
        new_index[old] = new;
    }
    let groups = order
        .iter()
        .map(|&old| {
            let mut g = builders[old].group.take().expect("group present");
            g.child_group = g.child_group.map(|c| new_index[c]);
            g
        })
        .collect();
    for o in &mut outputs {
        o.group = new_index[o.group];
    }
    AggregationPlan { groups, outputs }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::GraphBuilder;
    use rand::SeedableRng;

    /// Fig. 1 style academic neighborhood: P -PA-> A -AO-> O.
    fn academic() -> (HetGraph, TreeSchema) {
        let mut b = GraphBuilder::new();
        let p = b.add_type("P");
        let a = b.add_type("A");
        let o = b.add_type("O");
        let pa = b.add_relation("PA", p, a).unwrap();
        let ao = b.add_relation("AO", a, o).unwrap();
        let o1 = b.add_node("o1", o, &[0.0]).unwrap();
        let a1 = b.add_node("a1", a, &[0.0]).unwrap();
        let a2 = b.add_node("a2", a, &[0.0]).unwrap();
        let ps: Vec<_> = (1..=4).map(|i| b.add_node(&format!("p{i}"), p, &[0.0]).unwrap()).collect();
        b.add_edge(ao, a1, o1).unwrap();
        b.add_edge(ao, a2, o1).unwrap();
        for &pi in &ps[..3] {
            b.add_edge(pa, pi, a1).unwrap();
        }
        b.add_edge(pa, ps[2], a2).unwrap();
        b.add_edge(pa, ps[3], a2).unwrap();
        let g = b.build();
        let schema = TreeSchema::from_relations(&g, p, &[pa, ao]);
        (g, schema)
    }

    fn rng(seed: u64) -> Rng {
        Rng::seed_from_u64(seed)
    }

    #[test]
    fn three_level_tree_matches_breadth_first_expansion() {
        let (g, s) = academic();
        let id = |n: &str| g.node_by_name(n).unwrap();
        let tree = sample_tree(&g, id("o1"), &s, Fanout::Unlimited, &mut rng(0)).unwrap();
        assert_eq!(tree.levels[2], vec![id("o1")]);
        assert_eq!(tree.levels[1], vec![id("a1"), id("a2")]);
        assert_eq!(tree.levels[0], vec![id("p1"), id("p2"), id("p3"), id("p4")]);
        // p3 sits under both authors
        assert!(tree.children_of(1, id("a1")).contains(&id("p3")));
        assert!(tree.children_of(1, id("a2")).contains(&id("p3")));
    }

    #[test]
    fn root_without_neighbors_gives_empty_levels() {
        let (g, s) = academic();
        let lonely_graph = g.filter_edges(|_, _, _| false);
        let tree = sample_tree(&lonely_graph, g.node_by_name("o1").unwrap(), &s, Fanout::Unlimited, &mut rng(0)).unwrap();
        assert!(tree.levels[0].is_empty() && tree.levels[1].is_empty());
    }

    #[test]
    fn type_mismatch_is_a_contract_error() {
        let (g, s) = academic();
        let err = sample_tree(&g, g.node_by_name("a1").unwrap(), &s, Fanout::Unlimited, &mut rng(0)).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn capped_fanout_draws_distinct_children_deterministically() {
        let mut b = GraphBuilder::new();
        let c = b.add_type("C");
        let p = b.add_type("P");
        let cp = b.add_relation("CP", c, p).unwrap();
        let parent = b.add_node("parent", p, &[0.0]).unwrap();
        let kids: Vec<_> = (0..5).map(|i| b.add_node(&format!("c{i}"), c, &[0.0]).unwrap()).collect();
        for &k in &kids {
            b.add_edge(cp, k, parent).unwrap();
        }
        let g = b.build();
        let s = TreeSchema::from_relations(&g, c, &[cp]);
        let mut seen = BTreeSet::new();
        for seed in 0..200 {
            let t1 = sample_tree(&g, parent, &s, Fanout::Cap(2), &mut rng(seed)).unwrap();
            let t2 = sample_tree(&g, parent, &s, Fanout::Cap(2), &mut rng(seed)).unwrap();
            assert_eq!(t1, t2);
            let chosen = t1.children_of(1, parent).to_vec();
            assert_eq!(chosen.len(), 2);
            assert!(chosen[0] < chosen[1]);
            assert!(chosen.iter().all(|k| kids.contains(k)));
            seen.insert(chosen);
        }
        // the sample space is the 10 two-element subsets
        assert_eq!(seen.len(), 10);
    }

    #[test]
    fn schema_sets_follow_config_order() {
        let mut b = GraphBuilder::new();
        let p = b.add_type("P");
        let a = b.add_type("A");
        let t = b.add_type("T");
        let v = b.add_type("V");
        let ap = b.add_relation("AP", a, p).unwrap();
        let tp = b.add_relation("TP", t, p).unwrap();
        let pa = b.add_relation("PA", p, a).unwrap();
        let pv = b.add_relation("PV", p, v).unwrap();
        let g = b.build();
        let schemas = vec![
            TreeSchema::from_relations(&g, a, &[ap]),
            TreeSchema::from_relations(&g, t, &[tp]),
            TreeSchema::from_relations(&g, t, &[tp, pa]),
            TreeSchema::from_relations(&g, t, &[tp, pv]),
            TreeSchema::from_relations(&g, a, &[ap, pv]),
        ];
        let names = |ty| schema_set_for_type(&schemas, ty).iter().map(|s| s.name.clone()).collect::<Vec<_>>();
        assert_eq!(names(v), ["TPV", "APV"]);
        assert_eq!(names(a), ["TPA"]);
        assert!(names(t).is_empty());
    }

    #[test]
    fn shared_prefix_is_planned_once() {
        // TP rooted at p1 and TPA rooted at a1, where a1 wrote p1
        let mut b = GraphBuilder::new();
        let t = b.add_type("T");
        let p = b.add_type("P");
        let a = b.add_type("A");
        let tp = b.add_relation("TP", t, p).unwrap();
        let pa = b.add_relation("PA", p, a).unwrap();
        let t1 = b.add_node("t1", t, &[0.0]).unwrap();
        let t2 = b.add_node("t2", t, &[0.0]).unwrap();
        let p1 = b.add_node("p1", p, &[0.0]).unwrap();
        let a1 = b.add_node("a1", a, &[0.0]).unwrap();
        b.add_edge(tp, t1, p1).unwrap();
        b.add_edge(tp, t2, p1).unwrap();
        b.add_edge(pa, p1, a1).unwrap();
        let g = b.build();
        let s_tp = TreeSchema::from_relations(&g, t, &[tp]);
        let s_tpa = TreeSchema::from_relations(&g, t, &[tp, pa]);
        let trees = vec![
            sample_tree(&g, p1, &s_tp, Fanout::Unlimited, &mut rng(0)).unwrap(),
            sample_tree(&g, a1, &s_tpa, Fanout::Unlimited, &mut rng(0)).unwrap(),
        ];
        let plan = build_plan(&trees);
        let tp_stage: Vec<_> = plan.groups.iter().filter(|g| g.level == 1 && g.relations == [tp]).collect();
        assert_eq!(tp_stage.len(), 1);
        assert_eq!(tp_stage[0].nodes, vec![p1]);
        assert_eq!(plan.outputs[0].group, plan.groups.iter().position(|g| g.relations == [tp]).unwrap());
        // level-0 terms computed once as well
        assert_eq!(plan.state_count(), 2 + 1 + 1);
        let levels: Vec<_> = plan.groups.iter().map(|g| g.level).collect();
        assert!(levels.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn single_tree_plan_is_its_stage_list() {
        let (g, s) = academic();
        let tree = sample_tree(&g, g.node_by_name("o1").unwrap(), &s, Fanout::Unlimited, &mut rng(0)).unwrap();
        let plan = build_plan(std::slice::from_ref(&tree));
        assert_eq!(plan.groups.len(), 3);
        for (a, group) in plan.groups.iter().enumerate() {
            assert_eq!(group.level, a);
            assert_eq!(group.nodes, tree.levels[a]);
        }
        assert_eq!(plan.outputs, vec![PlanOutput { root: tree.root, group: 2, row: 0 }]);
    }

    #[test]
    fn fanout_serde_uses_null_for_unlimited() {
        assert_eq!(serde_json::to_string(&Fanout::Unlimited).unwrap(), "null");
        assert_eq!(serde_json::from_str::<Fanout>("10").unwrap(), Fanout::Cap(10));
    }
}
