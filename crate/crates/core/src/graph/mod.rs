//! Typed heterogeneous graph.
//!
//! Nodes carry a type and a dense feature vector; edges belong to directed
//! relations whose endpoint types are declared up front. Adjacency is kept
//! in both directions per relation, duplicate-free and sorted, so every read
//! is deterministic.

mod io;
mod schema;

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{load_graph, load_graph_files, read_labels, resolve_schemas, write_edges, write_labels, write_nodes, RelationDecl, SchemaConfig};
pub use schema::{validate_schemas, SchemaViolation, TreeSchema};

pub type NodeId = usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TypeId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RelationId(pub usize);

impl TypeId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl RelationId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Targets of edges leaving the node.
    Forward,
    /// Sources of edges entering the node.
    Reverse,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Relation {
    pub name: String,
    pub source: TypeId,
    pub target: TypeId,
}

/// Compressed sparse rows over global node ids.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
struct Csr {
    offsets: Vec<usize>,
    targets: Vec<NodeId>,
}

impl Csr {
    fn from_lists(lists: Vec<Vec<NodeId>>) -> Self {
        let mut offsets = Vec::with_capacity(lists.len() + 1);
        let mut targets = Vec::new();
        offsets.push(0);
        for mut list in lists {
            list.sort_unstable();
            list.dedup();
            targets.extend(list);
            offsets.push(targets.len());
        }
        Csr { offsets, targets }
    }

    fn row(&self, node: NodeId) -> &[NodeId] {
        &self.targets[self.offsets[node]..self.offsets[node + 1]]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HetGraph {
    type_names: Vec<String>,
    relations: Vec<Relation>,
    node_names: Vec<String>,
    name_index: HashMap<String, NodeId>,
    node_types: Vec<TypeId>,
    feature_dim: usize,
    features: Vec<f64>,
    forward: Vec<Csr>,
    reverse: Vec<Csr>,
    undirected: Csr,
    edge_count: usize,
}

impl HetGraph {
    pub fn node_count(&self) -> usize {
        self.node_types.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn type_count(&self) -> usize {
        self.type_names.len()
    }

    pub fn relation_count(&self) -> usize {
        self.relations.len()
    }

    pub fn type_ids(&self) -> impl Iterator<Item = TypeId> {
        (0..self.type_names.len()).map(TypeId)
    }

    pub fn relation_ids(&self) -> impl Iterator<Item = RelationId> {
        (0..self.relations.len()).map(RelationId)
    }

    pub fn type_name(&self, t: TypeId) -> &str {
        &self.type_names[t.0]
    }

    pub fn type_by_name(&self, name: &str) -> Option<TypeId> {
        self.type_names.iter().position(|n| n == name).map(TypeId)
    }

    pub fn relation(&self, r: RelationId) -> &Relation {
        &self.relations[r.0]
    }

    pub fn relations(&self) -> &[Relation] {
        &self.relations
    }

    pub fn relation_by_name(&self, name: &str) -> Option<RelationId> {
        self.relations.iter().position(|r| r.name == name).map(RelationId)
    }

    pub fn node_type(&self, node: NodeId) -> TypeId {
        self.node_types[node]
    }

    pub fn node_name(&self, node: NodeId) -> &str {
        &self.node_names[node]
    }

    pub fn node_by_name(&self, name: &str) -> Option<NodeId> {
        self.name_index.get(name).copied()
    }

    pub fn features(&self, node: NodeId) -> &[f64] {
        let d = self.feature_dim;
        &self.features[node * d..(node + 1) * d]
    }

    pub fn nodes_of_type(&self, t: TypeId) -> Vec<NodeId> {
        (0..self.node_count()).filter(|&n| self.node_types[n] == t).collect()
    }

    fn check_node(&self, node: NodeId) -> Result<()> {
        if node >= self.node_count() {
            return Err(Error::Reference(format!("unknown node id {node}")));
        }
        Ok(())
    }

    /// Neighbors of `node` under `relation`, sorted and duplicate-free.
    pub fn neighbors(&self, node: NodeId, relation: RelationId, direction: Direction) -> Result<&[NodeId]> {
        self.check_node(node)?;
        if relation.0 >= self.relations.len() {
            return Err(Error::Reference(format!("unknown relation id {}", relation.0)));
        }
        Ok(match direction {
            Direction::Forward => self.forward[relation.0].row(node),
            Direction::Reverse => self.reverse[relation.0].row(node),
        })
    }

    /// Union of neighbors over every relation and both directions.
    pub fn all_neighbors(&self, node: NodeId) -> &[NodeId] {
        self.undirected.row(node)
    }

    pub fn has_edge(&self, relation: RelationId, src: NodeId, dst: NodeId) -> bool {
        src < self.node_count() && self.forward[relation.0].row(src).binary_search(&dst).is_ok()
    }

    /// All edges in canonical order: by relation, then source, then target.
    pub fn edges(&self) -> impl Iterator<Item = (RelationId, NodeId, NodeId)> + '_ {
        self.relation_ids().flat_map(move |r| {
            (0..self.node_count()).flat_map(move |src| self.forward[r.0].row(src).iter().map(move |&dst| (r, src, dst)))
        })
    }

    /// Copy of the graph keeping only edges accepted by `keep`. Node ids and
    /// rosters are unchanged.
    pub fn filter_edges(&self, mut keep: impl FnMut(RelationId, NodeId, NodeId) -> bool) -> HetGraph {
        let mut b = self.roster_builder();
        for n in 0..self.node_count() {
            b.push_node_unchecked(self.node_names[n].clone(), self.node_types[n], self.features(n));
        }
        for (r, s, d) in self.edges() {
            if keep(r, s, d) {
                b.push_edge_unchecked(r, s, d);
            }
        }
        b.build()
    }

    /// Induced subgraph without `removed` nodes. Surviving nodes are
    /// renumbered densely in their original order; the returned vector maps
    /// new ids to old ids.
    pub fn without_nodes(&self, removed: &BTreeSet<NodeId>) -> (HetGraph, Vec<NodeId>) {
        let mut b = self.roster_builder();
        let mut new_id = vec![usize::MAX; self.node_count()];
        let mut old_of_new = Vec::new();
        for n in 0..self.node_count() {
            if removed.contains(&n) {
                continue;
            }
            new_id[n] = old_of_new.len();
            old_of_new.push(n);
            b.push_node_unchecked(self.node_names[n].clone(), self.node_types[n], self.features(n));
        }
        for (r, s, d) in self.edges() {
            if new_id[s] != usize::MAX && new_id[d] != usize::MAX {
                b.push_edge_unchecked(r, new_id[s], new_id[d]);
            }
        }
        (b.build(), old_of_new)
    }

    fn roster_builder(&self) -> GraphBuilder {
        let mut b = GraphBuilder::new();
        for name in &self.type_names {
            b.add_type(name);
        }
        for rel in &self.relations {
            b.relations.push(rel.clone());
        }
        b.feature_dim = Some(self.feature_dim);
        b
    }
}

impl fmt::Display for HetGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "HetGraph({} nodes, {} edges, {} types, {} relations, d={})",
            self.node_count(),
            self.edge_count,
            self.type_count(),
            self.relation_count(),
            self.feature_dim
        )
    }
}

/// Incremental graph construction with per-edge validation.
///
/// Errors carry the location last set with [`GraphBuilder::at`], which the
/// file loader uses to report line numbers.
#[derive(Debug, Default)]
pub struct GraphBuilder {
    type_names: Vec<String>,
    relations: Vec<Relation>,
    node_names: Vec<String>,
    name_index: HashMap<String, NodeId>,
    node_types: Vec<TypeId>,
    feature_dim: Option<usize>,
    features: Vec<f64>,
    edges: Vec<(RelationId, NodeId, NodeId)>,
    edge_set: HashSet<(RelationId, NodeId, NodeId)>,
    location: (String, usize),
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self {
            location: ("<builder>".to_string(), 0),
            ..Default::default()
        }
    }

    pub fn at(&mut self, source_name: &str, line: usize) -> &mut Self {
        if self.location.0 != source_name {
            self.location.0 = source_name.to_string();
        }
        self.location.1 = line;
        self
    }

    fn located(&self, msg: String) -> String {
        if self.location.1 == 0 {
            msg
        } else {
            format!("{}:{}: {}", self.location.0, self.location.1, msg)
        }
    }

    /// Registers a node type, returning the existing id if already known.
    pub fn add_type(&mut self, name: &str) -> TypeId {
        if let Some(t) = self.type_by_name(name) {
            return t;
        }
        self.type_names.push(name.to_string());
        TypeId(self.type_names.len() - 1)
    }

    pub fn type_by_name(&self, name: &str) -> Option<TypeId> {
        self.type_names.iter().position(|n| n == name).map(TypeId)
    }

    pub fn relation_by_name(&self, name: &str) -> Option<RelationId> {
        self.relations.iter().position(|r| r.name == name).map(RelationId)
    }

    pub fn node_by_name(&self, name: &str) -> Option<NodeId> {
        self.name_index.get(name).copied()
    }

    pub fn add_relation(&mut self, name: &str, source: TypeId, target: TypeId) -> Result<RelationId> {
        if self.relation_by_name(name).is_some() {
            return Err(Error::Contract(self.located(format!("relation {name:?} declared twice"))));
        }
        for t in [source, target] {
            if t.0 >= self.type_names.len() {
                return Err(Error::Reference(self.located(format!("unknown type id {}", t.0))));
            }
        }
        self.relations.push(Relation {
            name: name.to_string(),
            source,
            target,
        });
        Ok(RelationId(self.relations.len() - 1))
    }

    pub fn add_node(&mut self, name: &str, node_type: TypeId, features: &[f64]) -> Result<NodeId> {
        if node_type.0 >= self.type_names.len() {
            return Err(Error::Reference(self.located(format!("unknown type id {}", node_type.0))));
        }
        if self.name_index.contains_key(name) {
            return Err(Error::Contract(self.located(format!("node {name:?} declared twice"))));
        }
        match self.feature_dim {
            None => self.feature_dim = Some(features.len()),
            Some(d) if d != features.len() => {
                return Err(Error::Dimension {
                    source_name: self.location.0.clone(),
                    line: self.location.1,
                    expected: d,
                    found: features.len(),
                })
            }
            Some(_) => {}
        }
        if let Some(bad) = features.iter().find(|v| !v.is_finite()) {
            return Err(Error::Contract(self.located(format!("non-finite feature value {bad}"))));
        }
        Ok(self.push_node_unchecked(name.to_string(), node_type, features))
    }

    fn push_node_unchecked(&mut self, name: String, node_type: TypeId, features: &[f64]) -> NodeId {
        let id = self.node_types.len();
        self.name_index.insert(name.clone(), id);
        self.node_names.push(name);
        self.node_types.push(node_type);
        self.features.extend_from_slice(features);
        id
    }

    /// Adds a directed edge `src -> dst`. Self-loops and parallel edges are
    /// rejected.
    pub fn add_edge(&mut self, relation: RelationId, src: NodeId, dst: NodeId) -> Result<()> {
        let rel = self
            .relations
            .get(relation.0)
            .ok_or_else(|| Error::Reference(self.located(format!("unknown relation id {}", relation.0))))?;
        for n in [src, dst] {
            if n >= self.node_types.len() {
                return Err(Error::Reference(self.located(format!("unknown node id {n}"))));
            }
        }
        if self.node_types[src] != rel.source || self.node_types[dst] != rel.target {
            return Err(Error::Contract(self.located(format!(
                "edge {} -> {} has types ({}, {}) but relation {} is declared ({}, {})",
                self.node_names[src],
                self.node_names[dst],
                self.type_names[self.node_types[src].0],
                self.type_names[self.node_types[dst].0],
                rel.name,
                self.type_names[rel.source.0],
                self.type_names[rel.target.0],
            ))));
        }
        if src == dst {
            return Err(Error::Contract(self.located(format!(
                "self-loop on {} under {} (self-loops are not supported)",
                self.node_names[src], rel.name
            ))));
        }
        if self.edge_set.contains(&(relation, src, dst)) {
            return Err(Error::Contract(self.located(format!(
                "parallel edge {} -> {} under {} (parallel edges are not supported)",
                self.node_names[src], self.node_names[dst], rel.name
            ))));
        }
        self.push_edge_unchecked(relation, src, dst);
        Ok(())
    }

    fn push_edge_unchecked(&mut self, relation: RelationId, src: NodeId, dst: NodeId) {
        self.edge_set.insert((relation, src, dst));
        self.edges.push((relation, src, dst));
    }

    pub fn build(self) -> HetGraph {
        let n = self.node_types.len();
        let r_count = self.relations.len();
        let mut fwd = vec![vec![Vec::new(); n]; r_count];
        let mut rev = vec![vec![Vec::new(); n]; r_count];
        let mut und = vec![Vec::new(); n];
        for &(r, s, d) in &self.edges {
            fwd[r.0][s].push(d);
            rev[r.0][d].push(s);
            und[s].push(d);
            und[d].push(s);
        }
        HetGraph {
            type_names: self.type_names,
            relations: self.relations,
            node_names: self.node_names,
            name_index: self.name_index,
            node_types: self.node_types,
            feature_dim: self.feature_dim.unwrap_or(0),
            features: self.features,
            forward: fwd.into_iter().map(Csr::from_lists).collect(),
            reverse: rev.into_iter().map(Csr::from_lists).collect(),
            undirected: Csr::from_lists(und),
            edge_count: self.edges.len(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn paper_author() -> HetGraph {
        let mut b = GraphBuilder::new();
        let a = b.add_type("A");
        let p = b.add_type("P");
        let pa = b.add_relation("PA", p, a).unwrap();
        let a1 = b.add_node("a1", a, &[0.0]).unwrap();
        let a2 = b.add_node("a2", a, &[0.0]).unwrap();
        let p1 = b.add_node("p1", p, &[1.0]).unwrap();
        let p2 = b.add_node("p2", p, &[1.0]).unwrap();
        b.add_node("lonely", a, &[2.0]).unwrap();
        b.add_edge(pa, p1, a2).unwrap();
        b.add_edge(pa, p1, a1).unwrap();
        b.add_edge(pa, p2, a1).unwrap();
        b.build()
    }

    #[test]
    fn forward_and_reverse_reads() {
        let g = paper_author();
        let pa = g.relation_by_name("PA").unwrap();
        let p1 = g.node_by_name("p1").unwrap();
        let a1 = g.node_by_name("a1").unwrap();
        let a2 = g.node_by_name("a2").unwrap();
        assert_eq!(g.neighbors(p1, pa, Direction::Forward).unwrap(), &[a1, a2]);
        assert_eq!(g.neighbors(a1, pa, Direction::Reverse).unwrap(), &[p1, g.node_by_name("p2").unwrap()]);
        let lonely = g.node_by_name("lonely").unwrap();
        assert!(g.neighbors(lonely, pa, Direction::Forward).unwrap().is_empty());
        assert!(g.neighbors(lonely, pa, Direction::Reverse).unwrap().is_empty());
        assert!(g.all_neighbors(lonely).is_empty());
    }

    #[test]
    fn unknown_ids_are_reference_errors() {
        let g = paper_author();
        assert!(matches!(g.neighbors(99, RelationId(0), Direction::Forward), Err(Error::Reference(_))));
        assert!(matches!(g.neighbors(0, RelationId(5), Direction::Forward), Err(Error::Reference(_))));
    }

    #[test]
    fn rejects_self_loops_parallel_edges_and_type_mismatch() {
        let mut b = GraphBuilder::new();
        let a = b.add_type("A");
        let p = b.add_type("P");
        let aa = b.add_relation("AA", a, a).unwrap();
        let pa = b.add_relation("PA", p, a).unwrap();
        let a1 = b.add_node("a1", a, &[0.0]).unwrap();
        let a2 = b.add_node("a2", a, &[0.0]).unwrap();
        let p1 = b.add_node("p1", p, &[0.0]).unwrap();
        let err = b.add_edge(aa, a1, a1).unwrap_err();
        assert!(err.to_string().contains("self-loop"));
        b.add_edge(aa, a1, a2).unwrap();
        let err = b.add_edge(aa, a1, a2).unwrap_err();
        assert!(err.to_string().contains("parallel"));
        assert!(matches!(b.add_edge(pa, a1, p1), Err(Error::Contract(_))));
        assert!(matches!(b.add_node("x", a, &[1.0, 2.0]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn induced_subgraph_renumbers_densely() {
        let g = paper_author();
        let p1 = g.node_by_name("p1").unwrap();
        let (sub, map) = g.without_nodes(&BTreeSet::from([p1]));
        assert_eq!(sub.node_count(), g.node_count() - 1);
        assert_eq!(sub.edge_count(), 1);
        for (new, &old) in map.iter().enumerate() {
            assert_eq!(sub.node_name(new), g.node_name(old));
        }
    }
}
