//! Text formats: TSV node and edge lists, JSON schema configuration, TSV
//! labels.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::{GraphBuilder, HetGraph, TreeSchema, TypeId};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationDecl {
    pub name: String,
    pub from: String,
    pub to: String,
}

/// Relation roster plus per-root-type schema lists. A schema is written as
/// its start type followed by relation names, e.g. `["T", "TP", "PA"]`.
/// Intermediate type names may be interleaved (`["T", "TP", "P", "PA"]`).
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaConfig {
    /// Optional explicit type roster. When present, no other type names are
    /// accepted.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub types: Vec<String>,
    pub relations: Vec<RelationDecl>,
    #[serde(default)]
    pub schemas: IndexMap<String, Vec<Vec<String>>>,
}

impl SchemaConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("schema config serializes")
    }

    /// Configuration describing `graph`'s rosters and `schemas`.
    pub fn from_graph(graph: &HetGraph, schemas: &[TreeSchema]) -> Self {
        let mut grouped: IndexMap<String, Vec<Vec<String>>> = IndexMap::new();
        for s in schemas {
            let mut chain = vec![graph.type_name(s.types[0]).to_string()];
            chain.extend(s.relations.iter().map(|&r| graph.relation(r).name.clone()));
            grouped.entry(graph.type_name(s.root_type()).to_string()).or_default().push(chain);
        }
        SchemaConfig {
            types: graph.type_ids().map(|t| graph.type_name(t).to_string()).collect(),
            relations: graph
                .relations()
                .iter()
                .map(|r| RelationDecl {
                    name: r.name.clone(),
                    from: graph.type_name(r.source).to_string(),
                    to: graph.type_name(r.target).to_string(),
                })
                .collect(),
            schemas: grouped,
        }
    }
}

fn declared_type(b: &mut GraphBuilder, closed: bool, name: &str, what: &str) -> Result<TypeId> {
    match b.type_by_name(name) {
        Some(t) => Ok(t),
        None if closed => Err(Error::Reference(format!("{what} names undeclared type {name:?}"))),
        None => Ok(b.add_type(name)),
    }
}

fn split_fields<'a>(line: &'a str, source_name: &str, lineno: usize, want: usize) -> Result<Vec<&'a str>> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != want {
        return Err(Error::Parse {
            source_name: source_name.to_string(),
            line: lineno,
            message: format!("expected {want} tab-separated fields, found {}", fields.len()),
        });
    }
    Ok(fields)
}

fn content_lines<'a, R: BufRead + 'a>(reader: R, source_name: &'a str) -> impl Iterator<Item = Result<(usize, String)>> + 'a {
    reader.lines().enumerate().filter_map(move |(i, line)| match line {
        Ok(l) if l.trim().is_empty() => None,
        Ok(l) => Some(Ok((i + 1, l.trim_end_matches('\r').to_string()))),
        Err(e) => Some(Err(Error::io(source_name, e))),
    })
}

/// Parses nodes, edges and schema configuration into a canonical graph and
/// its validated schemas (in configuration order).
pub fn load_graph(
    nodes: impl BufRead,
    nodes_name: &str,
    edges: impl BufRead,
    edges_name: &str,
    config: &SchemaConfig,
) -> Result<(HetGraph, Vec<TreeSchema>)> {
    let mut b = GraphBuilder::new();
    let closed = !config.types.is_empty();
    for t in &config.types {
        b.add_type(t);
    }
    for rel in &config.relations {
        let from = declared_type(&mut b, closed, &rel.from, "relation")?;
        let to = declared_type(&mut b, closed, &rel.to, "relation")?;
        b.add_relation(&rel.name, from, to)?;
    }

    for item in content_lines(nodes, nodes_name) {
        let (lineno, line) = item?;
        let fields = split_fields(&line, nodes_name, lineno, 3)?;
        let features = fields[2]
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse {
                source_name: nodes_name.to_string(),
                line: lineno,
                message: format!("bad feature value: {e}"),
            })?;
        let t = declared_type(&mut b, closed, fields[1], &format!("{nodes_name}:{lineno}"))?;
        b.at(nodes_name, lineno).add_node(fields[0], t, &features)?;
    }

    for item in content_lines(edges, edges_name) {
        let (lineno, line) = item?;
        let fields = split_fields(&line, edges_name, lineno, 3)?;
        let lookup = |name: &str| {
            b.node_by_name(name)
                .ok_or_else(|| Error::Reference(format!("{edges_name}:{lineno}: unknown node id {name:?}")))
        };
        let (src, dst) = (lookup(fields[0])?, lookup(fields[1])?);
        let rel = b
            .relation_by_name(fields[2])
            .ok_or_else(|| Error::Reference(format!("{edges_name}:{lineno}: unknown relation {:?}", fields[2])))?;
        b.at(edges_name, lineno).add_edge(rel, src, dst)?;
    }

    let graph = b.build();
    let schemas = resolve_schemas(&graph, config)?;
    Ok((graph, schemas))
}

/// Resolves the configuration's schema chains against `graph` and validates
/// them.
pub fn resolve_schemas(graph: &HetGraph, config: &SchemaConfig) -> Result<Vec<TreeSchema>> {
    let (schemas, mut problems) = parse_schemas(graph, config)?;
    if let Err(violations) = super::validate_schemas(graph, &schemas) {
        problems.extend(violations.iter().map(|v| v.to_string()));
    }
    if !problems.is_empty() {
        return Err(Error::Schema(problems));
    }
    Ok(schemas)
}

fn parse_schemas(graph: &HetGraph, config: &SchemaConfig) -> Result<(Vec<TreeSchema>, Vec<String>)> {
    let mut schemas = Vec::new();
    let mut problems = Vec::new();
    for (root_name, chains) in &config.schemas {
        let root = graph
            .type_by_name(root_name)
            .ok_or_else(|| Error::Reference(format!("schemas listed under undeclared type {root_name:?}")))?;
        for chain in chains {
            let schema = parse_chain(graph, chain)?;
            if schema.root_type() != root {
                problems.push(
                    super::SchemaViolation::RootMismatch {
                        schema: schema.name.clone(),
                        listed_under: root_name.clone(),
                        root: graph.type_name(schema.root_type()).to_string(),
                    }
                    .to_string(),
                );
            }
            schemas.push(schema);
        }
    }
    Ok((schemas, problems))
}

fn parse_chain(graph: &HetGraph, chain: &[String]) -> Result<TreeSchema> {
    let (first, rest) = chain
        .split_first()
        .ok_or_else(|| Error::Contract("empty schema chain".to_string()))?;
    let start = graph
        .type_by_name(first)
        .ok_or_else(|| Error::Reference(format!("schema starts at undeclared type {first:?}")))?;
    let mut types = vec![start];
    let mut relations = Vec::new();
    let mut explicit_type_allowed = false;
    for name in rest {
        if let Some(r) = graph.relation_by_name(name) {
            relations.push(r);
            types.push(graph.relation(r).target);
            explicit_type_allowed = true;
        } else if let (Some(t), true) = (graph.type_by_name(name), explicit_type_allowed) {
            // an interleaved type overrides the relation's declared target so
            // that validation can report the mismatch
            *types.last_mut().expect("non-empty") = t;
            explicit_type_allowed = false;
        } else {
            return Err(Error::Reference(format!(
                "schema {chain:?} names unknown relation {name:?}"
            )));
        }
    }
    let name = types.iter().map(|&t| graph.type_name(t)).collect();
    Ok(TreeSchema { name, types, relations })
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

pub fn load_graph_files(nodes: &Path, edges: &Path, schema_config: &Path) -> Result<(HetGraph, Vec<TreeSchema>)> {
    let text = std::fs::read_to_string(schema_config).map_err(|e| Error::io(schema_config, e))?;
    let config = SchemaConfig::from_json(&text)?;
    load_graph(
        open(nodes)?,
        &nodes.display().to_string(),
        open(edges)?,
        &edges.display().to_string(),
        &config,
    )
}

pub fn write_nodes(graph: &HetGraph, mut out: impl Write) -> std::io::Result<()> {
    for n in 0..graph.node_count() {
        let feats: Vec<String> = graph.features(n).iter().map(|v| v.to_string()).collect();
        writeln!(
            out,
            "{}\t{}\t{}",
            graph.node_name(n),
            graph.type_name(graph.node_type(n)),
            feats.join(",")
        )?;
    }
    Ok(())
}

pub fn write_edges(graph: &HetGraph, mut out: impl Write) -> std::io::Result<()> {
    for (r, s, d) in graph.edges() {
        writeln!(out, "{}\t{}\t{}", graph.node_name(s), graph.node_name(d), graph.relation(r).name)?;
    }
    Ok(())
}

pub fn write_labels<'a>(labels: impl IntoIterator<Item = (&'a str, &'a str)>, mut out: impl Write) -> std::io::Result<()> {
    for (node, label) in labels {
        writeln!(out, "{node}\t{label}")?;
    }
    Ok(())
}

/// Reads `node_id<TAB>label` rows in file order.
pub fn read_labels(reader: impl BufRead, source_name: &str) -> Result<Vec<(String, String)>> {
    let mut rows = Vec::new();
    for item in content_lines(reader, source_name) {
        let (lineno, line) = item?;
        let fields = split_fields(&line, source_name, lineno, 2)?;
        rows.push((fields[0].to_string(), fields[1].to_string()));
    }
    Ok(rows)
}
