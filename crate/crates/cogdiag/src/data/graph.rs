use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::InteractionLog;
use crate::error::{Error, Result};

/// Concept dependency edges plus the exercise–concept mapping.
///
/// Prerequisite edges `(a, b)` mean `a` is a prerequisite of `b`; the
/// prerequisite neighbours of `b` are therefore its parents. Correlative edges
/// are stored in both directions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RelationGraph {
    n_concepts: usize,
    prereq: Vec<(usize, usize)>,
    corr: Vec<(usize, usize)>,
    qc: Vec<Vec<usize>>,
    prereq_in: Vec<Vec<usize>>,
    corr_adj: Vec<Vec<usize>>,
}

impl RelationGraph {
    /// Validates and normalises edge lists: duplicates removed, correlative
    /// edges symmetrised, every exercise required to have a concept.
    pub fn new(
        n_concepts: usize,
        prereq: impl IntoIterator<Item = (usize, usize)>,
        corr: impl IntoIterator<Item = (usize, usize)>,
        qc: Vec<BTreeSet<usize>>,
    ) -> Result<Self> {
        let check = |kind: &str, a: usize, b: usize| -> Result<()> {
            if a >= n_concepts || b >= n_concepts {
                return Err(Error::Validation(format!(
                    "{kind} edge ({a}, {b}) has a dangling endpoint"
                )));
            }
            if a == b {
                return Err(Error::Validation(format!("{kind} self-edge on concept {a}")));
            }
            Ok(())
        };
        let mut p = BTreeSet::new();
        for (a, b) in prereq {
            check("prereq", a, b)?;
            p.insert((a, b));
        }
        let mut c = BTreeSet::new();
        for (a, b) in corr {
            check("corr", a, b)?;
            c.insert((a, b));
            c.insert((b, a));
        }
        let missing: Vec<usize> = qc
            .iter()
            .enumerate()
            .filter(|(_, s)| s.is_empty())
            .map(|(q, _)| q)
            .collect();
        if !missing.is_empty() {
            return Err(Error::Validation(format!("exercises without concepts: {missing:?}")));
        }
        if let Some(bad) = qc.iter().flatten().find(|&&c| c >= n_concepts) {
            return Err(Error::Validation(format!("qc edge to unknown concept {bad}")));
        }

        let mut prereq_in = vec![Vec::new(); n_concepts];
        for &(a, b) in &p {
            prereq_in[b].push(a);
        }
        let mut corr_adj = vec![Vec::new(); n_concepts];
        for &(a, b) in &c {
            corr_adj[a].push(b);
        }
        Ok(Self {
            n_concepts,
            prereq: p.into_iter().collect(),
            corr: c.into_iter().collect(),
            qc: qc.into_iter().map(|s| s.into_iter().collect()).collect(),
            prereq_in,
            corr_adj,
        })
    }

    pub fn n_concepts(&self) -> usize {
        self.n_concepts
    }

    pub fn n_exercises(&self) -> usize {
        self.qc.len()
    }

    /// Prerequisite edges `(parent, child)`, sorted.
    pub fn prereq_edges(&self) -> &[(usize, usize)] {
        &self.prereq
    }

    /// Correlative edges in both directions, sorted.
    pub fn corr_edges(&self) -> &[(usize, usize)] {
        &self.corr
    }

    /// Concepts that are prerequisites of `c`.
    pub fn prereq_neighbors(&self, c: usize) -> &[usize] {
        &self.prereq_in[c]
    }

    pub fn corr_neighbors(&self, c: usize) -> &[usize] {
        &self.corr_adj[c]
    }

    pub fn exercise_concepts(&self, q: usize) -> &[usize] {
        &self.qc[q]
    }

    pub fn all_exercise_concepts(&self) -> &[Vec<usize>] {
        &self.qc
    }

    /// Kahn's algorithm over prerequisite edges; `None` when a cycle exists.
    pub fn topological_order(&self) -> Option<Vec<usize>> {
        let mut indeg: Vec<usize> = self.prereq_in.iter().map(Vec::len).collect();
        let mut children = vec![Vec::new(); self.n_concepts];
        for &(a, b) in &self.prereq {
            children[a].push(b);
        }
        let mut ready: Vec<usize> = (0..self.n_concepts).filter(|&c| indeg[c] == 0).rev().collect();
        let mut order = Vec::with_capacity(self.n_concepts);
        while let Some(c) = ready.pop() {
            order.push(c);
            for &ch in children[c].iter().rev() {
                indeg[ch] -= 1;
                if indeg[ch] == 0 {
                    ready.push(ch);
                }
            }
        }
        (order.len() == self.n_concepts).then_some(order)
    }
}

/// Reads a tab-separated edge file against the entities of `log`.
///
/// Lines are `prereq<TAB>cA<TAB>cB`, `corr<TAB>cA<TAB>cB` or `qc<TAB>q<TAB>c`.
/// Exercise concepts are the union of `qc` lines and the concepts listed in
/// the interaction records; concepts first named by a `qc` line are added to
/// the log's concept table.
pub fn load_graph(path: impl AsRef<Path>, log: &mut InteractionLog) -> Result<RelationGraph> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    let mut lines = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim_end_matches(['\r', '\n']);
        if trimmed.trim().is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<String> = trimmed.split('\t').map(str::to_owned).collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                path: path.to_owned(),
                line: i + 1,
                msg: format!("expected 3 tab-separated fields, got {}", fields.len()),
            });
        }
        if !matches!(fields[0].as_str(), "prereq" | "corr" | "qc") {
            return Err(Error::Parse {
                path: path.to_owned(),
                line: i + 1,
                msg: format!("unknown edge kind `{}`", fields[0]),
            });
        }
        lines.push((i + 1, fields));
    }

    let mut qc: Vec<BTreeSet<usize>> = (0..log.n_exercises()).map(|q| log.listed_concepts(q).clone()).collect();
    for (line, f) in lines.iter().filter(|(_, f)| f[0] == "qc") {
        let q = log
            .exercises
            .get(&f[1])
            .ok_or_else(|| Error::Validation(format!("{}:{line}: dangling exercise `{}`", path.display(), f[1])))?;
        if f[2].trim().is_empty() {
            return Err(Error::Validation(format!("{}:{line}: blank concept", path.display())));
        }
        let c = log.register_concept(&f[2]);
        qc[q].insert(c);
    }

    let mut prereq = Vec::new();
    let mut corr = Vec::new();
    for (line, f) in lines.iter().filter(|(_, f)| f[0] != "qc") {
        let concept = |key: &str| {
            log.concepts
                .get(key)
                .ok_or_else(|| Error::Validation(format!("{}:{line}: dangling concept `{key}`", path.display())))
        };
        let edge = (concept(&f[1])?, concept(&f[2])?);
        if edge.0 == edge.1 {
            return Err(Error::Validation(format!(
                "{}:{line}: {} self-edge on `{}`",
                path.display(),
                f[0],
                f[1]
            )));
        }
        if f[0] == "prereq" {
            prereq.push(edge);
        } else {
            corr.push(edge);
        }
    }
    graph_with_names(log, prereq, corr, qc)
}

/// Builds a graph over the log's entities, naming exercises that end up
/// without concepts.
pub(crate) fn graph_with_names(
    log: &InteractionLog,
    prereq: Vec<(usize, usize)>,
    corr: Vec<(usize, usize)>,
    qc: Vec<BTreeSet<usize>>,
) -> Result<RelationGraph> {
    let missing: Vec<&str> = qc
        .iter()
        .enumerate()
        .filter(|(_, s)| s.is_empty())
        .map(|(q, _)| log.exercises.key(q))
        .collect();
    if !missing.is_empty() {
        return Err(Error::Validation(format!("exercises without concepts: {missing:?}")));
    }
    RelationGraph::new(log.n_concepts(), prereq, corr, qc)
}

/// Writes the graph in the format read by [`load_graph`]; correlative pairs are
/// written once.
pub fn write_graph(graph: &RelationGraph, log: &InteractionLog, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let c = |i: usize| log.concepts.key(i);
    for &(a, b) in graph.prereq_edges() {
        writeln!(w, "prereq\t{}\t{}", c(a), c(b))?;
    }
    for &(a, b) in graph.corr_edges() {
        if a < b {
            writeln!(w, "corr\t{}\t{}", c(a), c(b))?;
        }
    }
    for q in 0..graph.n_exercises() {
        for &cc in graph.exercise_concepts(q) {
            writeln!(w, "qc\t{}\t{}", log.exercises.key(q), c(cc))?;
        }
    }
    w.flush()?;
    Ok(())
}
