//! Embedding files: one TSV per node type, `node_id<TAB>v_1,...,v_d`.
//!
//! Values are written in the shortest form that parses back to the same
//! `f64`, so export, reload and re-export is byte-identical.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::graph::HetGraph;
use crate::model::EncodedBatch;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Embeddings {
    pub dim: usize,
    /// Type name to rows in file order.
    types: BTreeMap<String, Vec<(String, Vec<f64>)>>,
    index: HashMap<String, (String, usize)>,
}

impl Embeddings {
    pub fn new(dim: usize) -> Self {
        Embeddings {
            dim,
            ..Default::default()
        }
    }

    pub fn push(&mut self, node_type: &str, node: &str, values: Vec<f64>) -> Result<()> {
        if values.len() != self.dim {
            return Err(Error::Contract(format!(
                "embedding for {node} has {} values, expected {}",
                values.len(),
                self.dim
            )));
        }
        if self.index.contains_key(node) {
            return Err(Error::Contract(format!("duplicate embedding for {node}")));
        }
        let rows = self.types.entry(node_type.to_string()).or_default();
        self.index.insert(node.to_string(), (node_type.to_string(), rows.len()));
        rows.push((node.to_string(), values));
        Ok(())
    }

    /// Rows of an encoded batch grouped by type, each type in node-id order.
    pub fn from_batch(graph: &HetGraph, batch: &EncodedBatch) -> Self {
        let mut e = Embeddings::new(batch.dim);
        for (&n, enc) in &batch.nodes {
            e.push(graph.type_name(graph.node_type(n)), graph.node_name(n), enc.u.clone())
                .expect("batch rows are unique and sized");
        }
        e
    }

    pub fn get(&self, node: &str) -> Option<&[f64]> {
        let (t, i) = self.index.get(node)?;
        Some(&self.types[t][*i].1)
    }

    pub fn type_of(&self, node: &str) -> Option<&str> {
        self.index.get(node).map(|(t, _)| t.as_str())
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn type_names(&self) -> impl Iterator<Item = &str> {
        self.types.keys().map(String::as_str)
    }

    pub fn rows_of_type(&self, node_type: &str) -> &[(String, Vec<f64>)] {
        self.types.get(node_type).map_or(&[], Vec::as_slice)
    }

    pub fn write_type(&self, node_type: &str, mut out: impl Write) -> std::io::Result<()> {
        for (node, values) in self.rows_of_type(node_type) {
            let vals: Vec<String> = values.iter().map(|v| v.to_string()).collect();
            writeln!(out, "{node}\t{}", vals.join(","))?;
        }
        Ok(())
    }

    /// Writes `<dir>/<type>.tsv` for each type present and returns the paths.
    pub fn write_dir(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        if self.is_empty() {
            return Err(Error::Contract("nothing to export".into()));
        }
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut paths = Vec::new();
        for t in self.types.keys() {
            let path = dir.join(format!("{t}.tsv"));
            let mut buf = Vec::new();
            self.write_type(t, &mut buf).expect("in-memory write");
            fs::write(&path, buf).map_err(|e| Error::io(&path, e))?;
            paths.push(path);
        }
        Ok(paths)
    }

    pub fn read_type(&mut self, node_type: &str, reader: impl BufRead, source_name: &str) -> Result<()> {
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io(source_name, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let bad = |message: String| Error::Parse {
                source_name: source_name.to_string(),
                line: i + 1,
                message,
            };
            let (node, vals) = line
                .split_once('\t')
                .ok_or_else(|| bad("expected node id, a tab, then values".into()))?;
            let values = vals
                .split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| bad(format!("bad value: {e}")))?;
            if self.dim == 0 && self.is_empty() {
                self.dim = values.len();
            }
            if values.len() != self.dim {
                return Err(Error::Dimension {
                    source_name: source_name.to_string(),
                    line: i + 1,
                    expected: self.dim,
                    found: values.len(),
                });
            }
            self.push(node_type, node, values)?;
        }
        Ok(())
    }

    /// Reads one file (type taken from the file stem) or every `*.tsv` in a
    /// directory, in file-name order.
    pub fn read_path(path: &Path) -> Result<Self> {
        let mut files = Vec::new();
        if path.is_dir() {
            for entry in fs::read_dir(path).map_err(|e| Error::io(path, e))? {
                let p = entry.map_err(|e| Error::io(path, e))?.path();
                if p.extension().is_some_and(|x| x == "tsv") {
                    files.push(p);
                }
            }
            files.sort();
        } else {
            files.push(path.to_path_buf());
        }
        let mut e = Embeddings::new(0);
        for f in files {
            let t = f
                .file_stem()
                .and_then(|s| s.to_str())
                .ok_or_else(|| Error::Contract(format!("cannot derive a type name from {}", f.display())))?
                .to_string();
            let file = fs::File::open(&f).map_err(|err| Error::io(&f, err))?;
            e.read_type(&t, BufReader::new(file), &f.display().to_string())?;
        }
        Ok(e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_row_format() {
        let mut e = Embeddings::new(2);
        e.push("N", "n0", vec![0.0, 1.0]).unwrap();
        let mut buf = Vec::new();
        e.write_type("N", &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "n0\t0,1\n");
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let mut e = Embeddings::new(3);
        e.push("A", "a1", vec![0.1, -2.5e-17, 1.0 / 3.0]).unwrap();
        e.push("A", "a0", vec![f64::MIN_POSITIVE, 7.0, -0.0]).unwrap();
        e.push("P", "p", vec![1e300, 2.0, 3.0]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let first = e.write_dir(&dir.path().join("one")).unwrap();
        assert_eq!(first.len(), 2);
        let back = Embeddings::read_path(&dir.path().join("one")).unwrap();
        assert_eq!(back, e);
        let second = back.write_dir(&dir.path().join("two")).unwrap();
        for (a, b) in first.iter().zip(&second) {
            assert_eq!(fs::read(a).unwrap(), fs::read(b).unwrap());
        }
    }

    #[test]
    fn ragged_rows_are_rejected() {
        let mut e = Embeddings::new(0);
        let err = e.read_type("A", &b"a\t1,2\nb\t1\n"[..], "A.tsv").unwrap_err();
        assert!(matches!(err, Error::Dimension { line: 2, .. }));
    }
}
