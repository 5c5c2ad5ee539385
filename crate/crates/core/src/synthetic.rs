//! Planted-community heterogeneous graphs for tests and benchmarks.
//!
//! Nodes of every type are dealt round-robin into `communities` groups.
//! Each relation attaches every child node to `branching` distinct parent
//! nodes; a parent is drawn from the child's own community with probability
//! `1 - noise` and uniformly from all parents otherwise. Features are a
//! per-community Gaussian centroid plus isotropic noise.

use std::fs;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use rand::seq::IndexedRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{resolve_schemas, write_edges, write_labels, write_nodes, GraphBuilder, HetGraph, NodeId, RelationDecl, SchemaConfig, TreeSchema};
use crate::seed::Seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TypeSpec {
    pub name: String,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelationSpec {
    pub name: String,
    /// Child type; edges run from child to parent.
    pub from: String,
    pub to: String,
    /// Parents per child.
    pub branching: usize,
    /// Name of a reverse relation carrying the same edges, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mirror: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub types: Vec<TypeSpec>,
    pub relations: Vec<RelationSpec>,
    /// Schema chains per root type, as in the schema configuration file.
    pub schemas: IndexMap<String, Vec<Vec<String>>>,
    pub communities: usize,
    /// Probability that a parent is drawn without regard to community.
    pub noise: f64,
    pub feature_dim: usize,
    pub feature_noise: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }

    pub fn schema_config(&self) -> SchemaConfig {
        let mut relations = Vec::new();
        for r in &self.relations {
            relations.push(RelationDecl {
                name: r.name.clone(),
                from: r.from.clone(),
                to: r.to.clone(),
            });
            if let Some(m) = &r.mirror {
                relations.push(RelationDecl {
                    name: m.clone(),
                    from: r.to.clone(),
                    to: r.from.clone(),
                });
            }
        }
        SchemaConfig {
            types: self.types.iter().map(|t| t.name.clone()).collect(),
            relations,
            schemas: self.schemas.clone(),
        }
    }

    /// Three types P, A, V; ~600 nodes in 4 communities.
    pub fn planted_benchmark() -> Self {
        SyntheticSpec {
            types: vec![type_spec("P", 300), type_spec("A", 240), type_spec("V", 60)],
            relations: vec![relation_spec("PV", "P", "V", 1, Some("VP")), relation_spec("AP", "A", "P", 3, Some("PA"))],
            schemas: IndexMap::from([
                ("P".to_string(), vec![chain(&["A", "AP"]), chain(&["V", "VP"])]),
                ("A".to_string(), vec![chain(&["V", "VP", "PA"])]),
                ("V".to_string(), vec![chain(&["A", "AP", "PV"])]),
            ]),
            communities: 4,
            noise: 0.05,
            feature_dim: 16,
            feature_noise: 0.5,
            seed: 7,
        }
    }

    /// The DBLP roster at 1/50 scale. Venues stay at 12, term count is a
    /// stand-in.
    pub fn dblp_scaled() -> Self {
        SyntheticSpec {
            types: vec![type_spec("P", 411), type_spec("A", 385), type_spec("T", 200), type_spec("V", 12)],
            relations: vec![
                relation_spec("AP", "A", "P", 2, Some("PA")),
                relation_spec("TP", "T", "P", 4, None),
                relation_spec("PV", "P", "V", 1, None),
            ],
            schemas: IndexMap::from([
                ("P".to_string(), vec![chain(&["A", "AP"]), chain(&["T", "TP"])]),
                ("A".to_string(), vec![chain(&["T", "TP", "PA"])]),
                ("V".to_string(), vec![chain(&["T", "TP", "PV"]), chain(&["A", "AP", "PV"])]),
            ]),
            communities: 4,
            noise: 0.1,
            feature_dim: 16,
            feature_noise: 0.5,
            seed: 50,
        }
    }
}

fn type_spec(name: &str, count: usize) -> TypeSpec {
    TypeSpec {
        name: name.into(),
        count,
    }
}

fn relation_spec(name: &str, from: &str, to: &str, branching: usize, mirror: Option<&str>) -> RelationSpec {
    RelationSpec {
        name: name.into(),
        from: from.into(),
        to: to.into(),
        branching,
        mirror: mirror.map(Into::into),
    }
}

fn chain(parts: &[&str]) -> Vec<String> {
    parts.iter().map(|s| s.to_string()).collect()
}

/// A generated graph with its schemas and planted community per node.
#[derive(Clone, Debug)]
pub struct SyntheticGraph {
    pub graph: HetGraph,
    pub schemas: Vec<TreeSchema>,
    pub schema_config: SchemaConfig,
    /// Community of each node, indexed by node id.
    pub communities: Vec<usize>,
}

impl SyntheticGraph {
    pub fn label_name(community: usize) -> String {
        format!("c{community}")
    }

    /// Writes `nodes.tsv`, `edges.tsv`, `labels.tsv` and `schemas.json`
    /// into `dir` and returns their paths in that order.
    pub fn write_files(&self, dir: &Path) -> Result<[PathBuf; 4]> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let paths = ["nodes.tsv", "edges.tsv", "labels.tsv", "schemas.json"].map(|f| dir.join(f));
        let mut buf = Vec::new();
        write_nodes(&self.graph, &mut buf).expect("in-memory write");
        fs::write(&paths[0], &buf).map_err(|e| Error::io(&paths[0], e))?;
        buf.clear();
        write_edges(&self.graph, &mut buf).expect("in-memory write");
        fs::write(&paths[1], &buf).map_err(|e| Error::io(&paths[1], e))?;
        buf.clear();
        let labels: Vec<String> = self.communities.iter().map(|&c| Self::label_name(c)).collect();
        let rows = (0..self.graph.node_count()).map(|n| (self.graph.node_name(n), labels[n].as_str()));
        write_labels(rows, &mut buf).expect("in-memory write");
        fs::write(&paths[2], &buf).map_err(|e| Error::io(&paths[2], e))?;
        let cfg = self.schema_config.to_json() + "\n";
        fs::write(&paths[3], cfg).map_err(|e| Error::io(&paths[3], e))?;
        Ok(paths)
    }
}

pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<SyntheticGraph> {
    if spec.communities == 0 {
        return Err(Error::Contract("at least one community is required".into()));
    }
    if !(0.0..1.0).contains(&spec.noise) && spec.noise != 1.0 {
        return Err(Error::Contract(format!("noise {} outside [0, 1]", spec.noise)));
    }
    if spec.feature_dim == 0 || !(spec.feature_noise >= 0.0 && spec.feature_noise.is_finite()) {
        return Err(Error::Contract("feature_dim must be positive and feature_noise non-negative".into()));
    }
    let config = spec.schema_config();
    let seed = Seed(spec.seed);

    let mut b = GraphBuilder::new();
    let mut rng = seed.derive("features", 0).rng();
    let unit = Normal::new(0.0, 1.0).expect("valid normal");
    let centroids: Vec<Vec<f64>> = (0..spec.communities)
        .map(|_| (0..spec.feature_dim).map(|_| unit.sample(&mut rng)).collect())
        .collect();
    let mut communities = Vec::new();
    // members[type][community] lists node ids
    let mut members: Vec<Vec<Vec<NodeId>>> = Vec::new();
    for t in &spec.types {
        let tid = b.add_type(&t.name);
        let mut per = vec![Vec::new(); spec.communities];
        for i in 0..t.count {
            let c = i % spec.communities;
            let features: Vec<f64> = centroids[c]
                .iter()
                .map(|&m| m + spec.feature_noise * unit.sample(&mut rng))
                .collect();
            let id = b.add_node(&format!("{}{i}", t.name.to_lowercase()), tid, &features)?;
            per[c].push(id);
            communities.push(c);
        }
        members.push(per);
    }
    for decl in &config.relations {
        let from = b
            .type_by_name(&decl.from)
            .ok_or_else(|| Error::Reference(format!("relation {} names unknown type {:?}", decl.name, decl.from)))?;
        let to = b
            .type_by_name(&decl.to)
            .ok_or_else(|| Error::Reference(format!("relation {} names unknown type {:?}", decl.name, decl.to)))?;
        b.add_relation(&decl.name, from, to)?;
    }

    for (ri, rel) in spec.relations.iter().enumerate() {
        let child_t = b.type_by_name(&rel.from).expect("declared above");
        let parent_t = b.type_by_name(&rel.to).expect("declared above");
        let parents: Vec<NodeId> = members[parent_t.0].iter().flatten().copied().collect();
        let self_typed = usize::from(child_t == parent_t);
        if rel.branching == 0 || rel.branching + self_typed > parents.len() {
            return Err(Error::Contract(format!(
                "relation {} needs {} distinct parents per child but type {} has {}",
                rel.name,
                rel.branching,
                rel.to,
                parents.len()
            )));
        }
        let r = b.relation_by_name(&rel.name).expect("declared above");
        let mirror = rel.mirror.as_ref().map(|m| b.relation_by_name(m).expect("declared above"));
        let mut rng = seed.derive("edges", ri as u64).rng();
        let children: Vec<NodeId> = members[child_t.0].iter().flatten().copied().collect();
        for child in children {
            let own = &members[parent_t.0][communities[child]];
            let own_eligible = own.len() - usize::from(own.contains(&child));
            let mut chosen: Vec<NodeId> = Vec::with_capacity(rel.branching);
            while chosen.len() < rel.branching {
                let pool = if !own.is_empty() && rng.random::<f64>() >= spec.noise && own_eligible >= rel.branching {
                    own
                } else {
                    &parents
                };
                let p = *pool.choose(&mut rng).expect("non-empty pool");
                if !chosen.contains(&p) && p != child {
                    chosen.push(p);
                }
            }
            chosen.sort_unstable();
            for p in chosen {
                b.add_edge(r, child, p)?;
                if let Some(m) = mirror {
                    b.add_edge(m, p, child)?;
                }
            }
        }
    }
    let graph = b.build();
    let schemas = resolve_schemas(&graph, &config)?;
    Ok(SyntheticGraph {
        graph,
        schemas,
        schema_config: config,
        communities,
    })
}
