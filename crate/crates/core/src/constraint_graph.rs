//! Bipartite relation/type constraint graph.
//!
//! Node layout is relations first (`0..n_r`), then types (`n_r..n_r+n_t`).
//! A constraint `(head_type, relation, tail_type)` contributes the edges
//! `head_type → relation` and `relation → tail_type`. NA is linked to every
//! type in both directions and every node carries a self-loop.

use std::collections::BTreeSet;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Instance, Schema};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Constraint triple by name, as read from a constraint file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NamedConstraint {
    pub head_type: String,
    pub relation: String,
    pub tail_type: String,
    pub line: usize,
}

/// Reads `head_type<TAB>relation<TAB>tail_type` lines. Blank lines and lines
/// starting with `#` are ignored.
pub fn parse_constraints<R: BufRead>(reader: R, source_name: &str) -> Result<Vec<NamedConstraint>> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split('\t').map(str::trim).collect();
        if fields.len() != 3 || fields.iter().any(|f| f.is_empty()) {
            return Err(Error::Parse {
                source_name: source_name.to_string(),
                line: idx + 1,
                message: format!("expected 3 tab-separated fields, got {:?}", fields),
            });
        }
        out.push(NamedConstraint {
            head_type: fields[0].to_string(),
            relation: fields[1].to_string(),
            tail_type: fields[2].to_string(),
            line: idx + 1,
        });
    }
    Ok(out)
}

pub fn load_constraints(path: &Path) -> Result<Vec<NamedConstraint>> {
    let file = std::fs::File::open(path)?;
    parse_constraints(std::io::BufReader::new(file), &path.display().to_string())
}

/// Node and edge counts of a built graph.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildReport {
    pub nodes: usize,
    pub relation_nodes: usize,
    pub type_nodes: usize,
    pub constraint_triples: usize,
    /// Distinct type→relation and relation→type edges from non-NA constraints.
    pub constraint_edges: usize,
    /// Edges added by the NA-connects-everything rule (not already present).
    pub na_edges: usize,
    pub self_loops: usize,
    /// Nonzero adjacency entries.
    pub total_edges: usize,
    /// Non-NA relations without any constraint.
    pub dangling_relations: Vec<String>,
    /// Constraints dropped because they reference an unknown type.
    pub rejected_constraints: Vec<String>,
}

impl BuildReport {
    pub fn render(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("nodes: {}\n", self.nodes));
        s.push_str(&format!("relation_nodes: {}\n", self.relation_nodes));
        s.push_str(&format!("type_nodes: {}\n", self.type_nodes));
        s.push_str(&format!("constraint_triples: {}\n", self.constraint_triples));
        s.push_str(&format!("constraint_edges: {}\n", self.constraint_edges));
        s.push_str(&format!("na_edges: {}\n", self.na_edges));
        s.push_str(&format!("self_loops: {}\n", self.self_loops));
        s.push_str(&format!("total_edges: {}\n", self.total_edges));
        s.push_str(&format!("dangling_relations: {}\n", self.dangling_relations.len()));
        for r in &self.dangling_relations {
            s.push_str(&format!("  warning: no constraint for {r}\n"));
        }
        s.push_str(&format!("rejected_constraints: {}\n", self.rejected_constraints.len()));
        for c in &self.rejected_constraints {
            s.push_str(&format!("  rejected: {c}\n"));
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstraintGraph {
    relations: Vec<String>,
    types: Vec<String>,
    /// `(head_type, relation, tail_type)` by id.
    constraints: BTreeSet<(usize, usize, usize)>,
    /// Directed edges `(from, to)` over node ids, self-loops included.
    edges: BTreeSet<(usize, usize)>,
    predecessors: Vec<Vec<usize>>,
    successors: Vec<Vec<usize>>,
}

impl ConstraintGraph {
    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn num_types(&self) -> usize {
        self.types.len()
    }

    pub fn num_nodes(&self) -> usize {
        self.relations.len() + self.types.len()
    }

    pub fn relations(&self) -> &[String] {
        &self.relations
    }

    pub fn types(&self) -> &[String] {
        &self.types
    }

    pub fn constraints(&self) -> &BTreeSet<(usize, usize, usize)> {
        &self.constraints
    }

    pub fn edges(&self) -> &BTreeSet<(usize, usize)> {
        &self.edges
    }

    pub fn type_node(&self, type_id: usize) -> usize {
        self.relations.len() + type_id
    }

    pub fn has_edge(&self, from: usize, to: usize) -> bool {
        self.edges.contains(&(from, to))
    }

    /// Binary adjacency, `A[i][j] = 1` iff `(v_i, v_j)` is an edge.
    pub fn adjacency(&self) -> Tensor {
        let n = self.num_nodes();
        let mut a = Tensor::zeros(&[n, n]);
        for &(i, j) in &self.edges {
            a.set(i, j, 1.0);
        }
        a
    }

    /// `D_out^{-1/2} A D_in^{-1/2}`; every node has a self-loop so no degree
    /// is zero.
    pub fn normalized_adjacency(&self) -> Tensor {
        let n = self.num_nodes();
        let mut out_deg = vec![0.0; n];
        let mut in_deg = vec![0.0; n];
        for &(i, j) in &self.edges {
            out_deg[i] += 1.0;
            in_deg[j] += 1.0;
        }
        let mut a = Tensor::zeros(&[n, n]);
        for &(i, j) in &self.edges {
            a.set(i, j, 1.0 / (out_deg[i] * in_deg[j] as f64).sqrt());
        }
        a
    }

    pub fn adjacency_matrix(&self, normalize: bool) -> Tensor {
        if normalize {
            self.normalized_adjacency()
        } else {
            self.adjacency()
        }
    }

    /// Predecessor and successor type ids of relation `r`.
    pub fn relation_neighbors(&self, r: usize) -> Result<(&[usize], &[usize])> {
        if r >= self.relations.len() {
            return Err(Error::domain(format!(
                "relation id {r} out of range ({} relations)",
                self.relations.len()
            )));
        }
        Ok((&self.predecessors[r], &self.successors[r]))
    }

    /// True when the type pair is not licensed for `r`. NA never violates,
    /// and neither does a relation with no constraints at all.
    pub fn violates(&self, head_type: usize, tail_type: usize, r: usize) -> Result<bool> {
        let (pred, succ) = self.relation_neighbors(r)?;
        if head_type >= self.types.len() || tail_type >= self.types.len() {
            return Err(Error::domain(format!(
                "type id out of range: ({head_type}, {tail_type})"
            )));
        }
        if r == 0 || (pred.is_empty() && succ.is_empty()) {
            return Ok(false);
        }
        Ok(!(pred.contains(&head_type) && succ.contains(&tail_type)))
    }

    pub fn check_constraint_violation(&self, inst: &Instance, r: usize) -> Result<bool> {
        self.violates(inst.head_type(), inst.tail_type(), r)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Builds the graph from a schema and named constraints.
pub fn build_constraint_graph(
    schema: &Schema,
    constraints: &[NamedConstraint],
) -> Result<(ConstraintGraph, BuildReport)> {
    let n_r = schema.num_relations();
    let n_t = schema.num_types();
    let mut triples = BTreeSet::new();
    let mut rejected = Vec::new();
    for c in constraints {
        let r = schema.relation_id(&c.relation).ok_or_else(|| {
            Error::schema(format!("line {}: unknown relation {:?}", c.line, c.relation))
        })?;
        match (schema.known_type_id(&c.head_type), schema.known_type_id(&c.tail_type)) {
            (Some(h), Some(t)) => {
                triples.insert((h, r, t));
            }
            _ => rejected.push(format!(
                "line {}: {}\t{}\t{}",
                c.line, c.head_type, c.relation, c.tail_type
            )),
        }
    }

    let mut predecessors: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n_r];
    let mut successors: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n_r];
    for &(h, r, t) in &triples {
        predecessors[r].insert(h);
        successors[r].insert(t);
    }
    let mut edges = BTreeSet::new();
    for r in 1..n_r {
        for &h in &predecessors[r] {
            edges.insert((n_r + h, r));
        }
        for &t in &successors[r] {
            edges.insert((r, n_r + t));
        }
    }
    let constraint_edges = edges.len();
    for t in 0..n_t {
        predecessors[0].insert(t);
        successors[0].insert(t);
        edges.insert((n_r + t, 0));
        edges.insert((0, n_r + t));
    }
    let na_edges = edges.len() - constraint_edges;
    for i in 0..n_r + n_t {
        edges.insert((i, i));
    }

    let dangling_relations = (1..n_r)
        .filter(|&r| predecessors[r].is_empty())
        .map(|r| schema.relations[r].clone())
        .collect();
    for r in &dangling_relations {
        log::warn!("relation {r} has no constraints");
    }
    let report = BuildReport {
        nodes: n_r + n_t,
        relation_nodes: n_r,
        type_nodes: n_t,
        constraint_triples: triples.len(),
        constraint_edges,
        na_edges,
        self_loops: n_r + n_t,
        total_edges: edges.len(),
        dangling_relations,
        rejected_constraints: rejected,
    };
    let graph = ConstraintGraph {
        relations: schema.relations.clone(),
        types: schema.types.clone(),
        constraints: triples,
        edges,
        predecessors: predecessors.into_iter().map(|s| s.into_iter().collect()).collect(),
        successors: successors.into_iter().map(|s| s.into_iter().collect()).collect(),
    };
    Ok((graph, report))
}
