//! Bipartite product–attribute graph with values as edge labels.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::extraction::AttributeSet;

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("unknown product ids: {}", .0.join(", "))]
    NotFound(Vec<String>),
    #[error("query {0} cannot also be a candidate")]
    QueryIsCandidate(String),
    #[error("graph file line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("graph file: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AttributeGraph {
    products: BTreeSet<String>,
    attributes: BTreeSet<String>,
    edges: BTreeMap<(String, String), String>,
    by_attribute: BTreeMap<String, BTreeSet<String>>,
}

impl AttributeGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_product(&mut self, product_id: &str) {
        self.products.insert(product_id.to_string());
    }

    /// Adds or relabels the edge (product, attribute).
    pub fn add_edge(&mut self, product_id: &str, attribute: &str, value: &str) {
        self.add_product(product_id);
        self.attributes.insert(attribute.to_string());
        self.edges
            .insert((product_id.to_string(), attribute.to_string()), value.to_string());
        self.by_attribute
            .entry(attribute.to_string())
            .or_default()
            .insert(product_id.to_string());
    }

    /// Replaces all edges of a product, adding the product if it is new.
    pub fn set_product_attributes<'a, I>(&mut self, product_id: &str, pairs: I)
    where
        I: IntoIterator<Item = (&'a str, &'a str)>,
    {
        let old: Vec<String> = self.neighbors(product_id).keys().map(|a| a.to_string()).collect();
        for a in old {
            self.edges.remove(&(product_id.to_string(), a.clone()));
            if let Some(ps) = self.by_attribute.get_mut(&a) {
                ps.remove(product_id);
                if ps.is_empty() {
                    self.by_attribute.remove(&a);
                    self.attributes.remove(&a);
                }
            }
        }
        self.add_product(product_id);
        for (a, v) in pairs {
            self.add_edge(product_id, a, v);
        }
    }

    pub fn products(&self) -> &BTreeSet<String> {
        &self.products
    }

    pub fn attributes(&self) -> &BTreeSet<String> {
        &self.attributes
    }

    pub fn edges(&self) -> impl Iterator<Item = (&str, &str, &str)> {
        self.edges
            .iter()
            .map(|((p, a), v)| (p.as_str(), a.as_str(), v.as_str()))
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn contains_product(&self, product_id: &str) -> bool {
        self.products.contains(product_id)
    }

    pub fn value(&self, product_id: &str, attribute: &str) -> Option<&str> {
        self.edges
            .get(&(product_id.to_string(), attribute.to_string()))
            .map(String::as_str)
    }

    /// Attribute → value for one product, in attribute order.
    pub fn neighbors(&self, product_id: &str) -> BTreeMap<&str, &str> {
        let start = (product_id.to_string(), String::new());
        self.edges
            .range(start..)
            .take_while(|((p, _), _)| p == product_id)
            .map(|((_, a), v)| (a.as_str(), v.as_str()))
            .collect()
    }

    pub fn degree(&self, product_id: &str) -> usize {
        self.neighbors(product_id).len()
    }

    /// Products that have an edge to `attribute`.
    pub fn products_with(&self, attribute: &str) -> Option<&BTreeSet<String>> {
        self.by_attribute.get(attribute)
    }

    /// Products whose value for `attribute` equals `value` after
    /// case-insensitive comparison.
    pub fn lookup(&self, attribute: &str, value: &str) -> Vec<&str> {
        let want = crate::text::comparable_value(value);
        self.by_attribute
            .get(attribute)
            .into_iter()
            .flatten()
            .filter(|p| {
                self.value(p, attribute)
                    .is_some_and(|v| crate::text::comparable_value(v) == want)
            })
            .map(String::as_str)
            .collect()
    }

    pub fn by_attribute_is_consistent(&self) -> bool {
        let mut inverse: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
        for (p, a) in self.edges.keys() {
            inverse.entry(a).or_default().insert(p);
        }
        inverse.len() == self.by_attribute.len()
            && self.by_attribute.iter().all(|(a, ps)| {
                inverse
                    .get(a.as_str())
                    .is_some_and(|s| s.iter().copied().eq(ps.iter().map(String::as_str)))
            })
    }

    /// Builds a one-hop subgraph around a query and its retrieved candidates.
    pub fn local_subgraph(&self, query_id: &str, candidate_ids: &[String]) -> Result<LocalSubgraph, GraphError> {
        let missing: Vec<String> = std::iter::once(query_id)
            .chain(candidate_ids.iter().map(String::as_str))
            .filter(|id| !self.contains_product(id))
            .map(str::to_string)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        if !missing.is_empty() {
            return Err(GraphError::NotFound(missing));
        }
        if candidate_ids.iter().any(|c| c == query_id) {
            return Err(GraphError::QueryIsCandidate(query_id.to_string()));
        }
        let mut edges = BTreeMap::new();
        for id in std::iter::once(query_id).chain(candidate_ids.iter().map(String::as_str)) {
            for (a, v) in self.neighbors(id) {
                edges.insert((id.to_string(), a.to_string()), v.to_string());
            }
        }
        let attribute_nodes = edges.keys().map(|(_, a)| a.clone()).collect();
        Ok(LocalSubgraph {
            query_id: query_id.to_string(),
            candidate_ids: candidate_ids.to_vec(),
            attribute_nodes,
            edges,
            schema_order: Vec::new(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), GraphError> {
        let io = |e: std::io::Error| GraphError::Io(e.to_string());
        let mut out = BufWriter::new(File::create(path).map_err(io)?);
        self.write_to(&mut out).map_err(io)?;
        out.flush().map_err(io)
    }

    /// Header line with counts, then one line per isolated product
    /// (`{"p": id}`) and one line per edge (`{"p","a","v"}`).
    pub fn write_to<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        let header = Header {
            products: self.products.len(),
            attributes: self.attributes.len(),
            edges: self.edges.len(),
        };
        serde_json::to_writer(&mut *out, &header)?;
        out.write_all(b"\n")?;
        for p in &self.products {
            if self.degree(p) == 0 {
                serde_json::to_writer(&mut *out, &Line { p: p.clone(), a: None, v: None })?;
                out.write_all(b"\n")?;
            }
        }
        for ((p, a), v) in &self.edges {
            let line = Line {
                p: p.clone(),
                a: Some(a.clone()),
                v: Some(v.clone()),
            };
            serde_json::to_writer(&mut *out, &line)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, GraphError> {
        let f = File::open(path).map_err(|e| GraphError::Io(format!("{}: {e}", path.display())))?;
        Self::read_from(BufReader::new(f))
    }

    pub fn read_from<R: BufRead>(reader: R) -> Result<Self, GraphError> {
        let parse = |line: usize, reason: String| GraphError::Parse { line, reason };
        let mut lines = reader.lines().enumerate();
        let header: Header = match lines.next() {
            Some((_, l)) => {
                let l = l.map_err(|e| GraphError::Io(e.to_string()))?;
                serde_json::from_str(&l).map_err(|e| parse(1, e.to_string()))?
            }
            None => return Err(parse(1, "missing header".into())),
        };
        let mut g = AttributeGraph::new();
        let mut last = 1;
        for (i, l) in lines {
            last = i + 1;
            let l = l.map_err(|e| GraphError::Io(e.to_string()))?;
            if l.trim().is_empty() {
                continue;
            }
            let line: Line = serde_json::from_str(&l).map_err(|e| parse(i + 1, e.to_string()))?;
            match (line.a, line.v) {
                (Some(a), Some(v)) => g.add_edge(&line.p, &a, &v),
                (None, None) => g.add_product(&line.p),
                _ => return Err(parse(i + 1, "edge needs both \"a\" and \"v\"".into())),
            }
        }
        let found = (g.products.len(), g.attributes.len(), g.edges.len());
        if found != (header.products, header.attributes, header.edges) {
            return Err(parse(
                last,
                format!(
                    "header promises {} products, {} attributes, {} edges; file has {}, {}, {}",
                    header.products, header.attributes, header.edges, found.0, found.1, found.2
                ),
            ));
        }
        Ok(g)
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    products: usize,
    attributes: usize,
    edges: usize,
}

#[derive(Serialize, Deserialize)]
struct Line {
    p: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    a: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    v: Option<String>,
}

/// One node per attribute set, one edge per extracted pair.
pub fn build_graph<'a, I>(sets: I) -> AttributeGraph
where
    I: IntoIterator<Item = &'a AttributeSet>,
{
    let mut g = AttributeGraph::new();
    for set in sets {
        g.add_product(&set.product_id);
        for (a, v) in &set.pairs {
            g.add_edge(&set.product_id, a, v);
        }
    }
    g
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LocalSubgraph {
    pub query_id: String,
    pub candidate_ids: Vec<String>,
    pub attribute_nodes: BTreeSet<String>,
    edges: BTreeMap<(String, String), String>,
    schema_order: Vec<String>,
}

/// A query attribute paired with the candidate's value, if any.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Triple {
    pub attribute: String,
    pub query_value: String,
    pub candidate_value: Option<String>,
}

impl LocalSubgraph {
    /// Sets the attribute order used by [`LocalSubgraph::shared_triples`];
    /// attributes not listed follow in lexicographic order.
    pub fn with_schema_order(mut self, order: Vec<String>) -> Self {
        self.schema_order = order;
        self
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> impl Iterator<Item = (&str, &str, &str)> {
        self.edges
            .iter()
            .map(|((p, a), v)| (p.as_str(), a.as_str(), v.as_str()))
    }

    pub fn value(&self, product_id: &str, attribute: &str) -> Option<&str> {
        self.edges
            .get(&(product_id.to_string(), attribute.to_string()))
            .map(String::as_str)
    }

    pub fn attributes_of(&self, product_id: &str) -> BTreeMap<&str, &str> {
        let start = (product_id.to_string(), String::new());
        self.edges
            .range(start..)
            .take_while(|((p, _), _)| p == product_id)
            .map(|((_, a), v)| (a.as_str(), v.as_str()))
            .collect()
    }

    fn order_key<'s>(&self, attribute: &'s str) -> (usize, &'s str) {
        let pos = self
            .schema_order
            .iter()
            .position(|a| a == attribute)
            .unwrap_or(self.schema_order.len());
        (pos, attribute)
    }

    /// One triple per attribute the query has; the candidate value is `None`
    /// when the candidate lacks that attribute.
    pub fn shared_triples(&self, candidate_id: &str) -> Vec<Triple> {
        let mut triples: Vec<Triple> = self
            .attributes_of(&self.query_id)
            .into_iter()
            .map(|(a, qv)| Triple {
                attribute: a.to_string(),
                query_value: qv.to_string(),
                candidate_value: self.value(candidate_id, a).map(str::to_string),
            })
            .collect();
        triples.sort_by(|x, y| self.order_key(&x.attribute).cmp(&self.order_key(&y.attribute)));
        triples
    }

    /// Candidate attributes the query lacks, in the same order as triples.
    pub fn candidate_only(&self, candidate_id: &str) -> Vec<(String, String)> {
        let query = self.attributes_of(&self.query_id);
        let mut extra: Vec<(String, String)> = self
            .attributes_of(candidate_id)
            .into_iter()
            .filter(|(a, _)| !query.contains_key(a))
            .map(|(a, v)| (a.to_string(), v.to_string()))
            .collect();
        extra.sort_by(|x, y| self.order_key(&x.0).cmp(&self.order_key(&y.0)));
        extra
    }
}
