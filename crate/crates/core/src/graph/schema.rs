use std::fmt;

use serde::{Deserialize, Serialize};

use super::{HetGraph, RelationId, TypeId};

/// A directed type/relation chain `t_0 -r_1-> t_1 ... -r_m-> t_m` whose
/// relations all point toward the root type `t_m`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TreeSchema {
    pub name: String,
    /// `t_0 ..= t_m`
    pub types: Vec<TypeId>,
    /// `r_1 ..= r_m`
    pub relations: Vec<RelationId>,
}

impl TreeSchema {
    /// Chain built from a start type and the relations to follow; each level
    /// type is the declared target of the relation entering it.
    pub fn from_relations(graph: &HetGraph, start: TypeId, relations: &[RelationId]) -> TreeSchema {
        let mut types = vec![start];
        types.extend(relations.iter().map(|&r| graph.relation(r).target));
        let name = types.iter().map(|&t| graph.type_name(t)).collect();
        TreeSchema {
            name,
            types,
            relations: relations.to_vec(),
        }
    }

    pub fn depth(&self) -> usize {
        self.relations.len()
    }

    pub fn root_type(&self) -> TypeId {
        *self.types.last().expect("schema chain has at least one type")
    }

    /// Relation `r_level` connecting level `level - 1` to `level`.
    pub fn relation_into(&self, level: usize) -> RelationId {
        self.relations[level - 1]
    }

    /// True when `self` equals a root-aligned contiguous tail of `other`.
    pub fn is_suffix_of(&self, other: &TreeSchema) -> bool {
        self.types.len() <= other.types.len()
            && other.types.ends_with(&self.types)
            && other.relations.ends_with(&self.relations)
    }
}

impl fmt::Display for TreeSchema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SchemaViolation {
    Empty {
        schema: String,
    },
    UnknownId {
        schema: String,
    },
    TypeMismatch {
        schema: String,
        position: usize,
        relation: String,
        declared: (String, String),
        found: (String, String),
    },
    RootMismatch {
        schema: String,
        listed_under: String,
        root: String,
    },
    Subsequence {
        root: String,
        contained: String,
        container: String,
    },
}

impl fmt::Display for SchemaViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SchemaViolation::Empty { schema } => write!(f, "schema {schema} has no relations"),
            SchemaViolation::UnknownId { schema } => write!(f, "schema {schema} references unknown types or relations"),
            SchemaViolation::TypeMismatch {
                schema,
                position,
                relation,
                declared,
                found,
            } => write!(
                f,
                "schema {schema}: relation {relation} at position {position} is declared {}->{} but used as {}->{}",
                declared.0, declared.1, found.0, found.1
            ),
            SchemaViolation::RootMismatch {
                schema,
                listed_under,
                root,
            } => write!(f, "schema {schema} is listed under type {listed_under} but is rooted at {root}"),
            SchemaViolation::Subsequence {
                root,
                contained,
                container,
            } => write!(f, "schemas for {root}: {contained} is a root-aligned subsequence of {container}"),
        }
    }
}

/// Checks every schema's chain against the declared relation endpoints and
/// every pair of schemas sharing a root type for root-aligned containment.
pub fn validate_schemas(graph: &HetGraph, schemas: &[TreeSchema]) -> Result<(), Vec<SchemaViolation>> {
    let mut violations = Vec::new();
    let mut well_formed = vec![false; schemas.len()];
    for (i, s) in schemas.iter().enumerate() {
        if s.relations.is_empty() || s.types.len() != s.relations.len() + 1 {
            violations.push(SchemaViolation::Empty { schema: s.name.clone() });
            continue;
        }
        if s.types.iter().any(|t| t.0 >= graph.type_count()) || s.relations.iter().any(|r| r.0 >= graph.relation_count())
        {
            violations.push(SchemaViolation::UnknownId { schema: s.name.clone() });
            continue;
        }
        well_formed[i] = true;
        for (a, &r) in s.relations.iter().enumerate() {
            let rel = graph.relation(r);
            let (from, to) = (s.types[a], s.types[a + 1]);
            if rel.source != from || rel.target != to {
                violations.push(SchemaViolation::TypeMismatch {
                    schema: s.name.clone(),
                    position: a + 1,
                    relation: rel.name.clone(),
                    declared: (graph.type_name(rel.source).into(), graph.type_name(rel.target).into()),
                    found: (graph.type_name(from).into(), graph.type_name(to).into()),
                });
            }
        }
    }
    for i in 0..schemas.len() {
        for j in 0..schemas.len() {
            if i == j || !well_formed[i] || !well_formed[j] {
                continue;
            }
            let (si, sj) = (&schemas[i], &schemas[j]);
            if si.root_type() != sj.root_type() || !si.is_suffix_of(sj) {
                continue;
            }
            // identical chains are reported once
            if si == sj && i > j {
                continue;
            }
            violations.push(SchemaViolation::Subsequence {
                root: graph.type_name(si.root_type()).into(),
                contained: si.name.clone(),
                container: sj.name.clone(),
            });
        }
    }
    if violations.is_empty() {
        Ok(())
    } else {
        Err(violations)
    }
}
