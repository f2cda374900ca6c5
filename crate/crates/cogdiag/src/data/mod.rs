//! Interaction logs, relation graphs and dataset splits.

mod graph;
mod log;
mod split;

pub use graph::{load_graph, write_graph, RelationGraph};
pub use log::{load_interactions, write_interactions, Interaction, InteractionLog};
pub use split::{make_split, DatasetSplit, SplitMode};

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntityKind {
    Student,
    Exercise,
    Concept,
}

impl EntityKind {
    /// Key namespace used in embedding files.
    pub fn prefix(self) -> &'static str {
        match self {
            EntityKind::Student => "s",
            EntityKind::Exercise => "q",
            EntityKind::Concept => "c",
        }
    }
}

/// A student, exercise or concept, identified by its key within its kind.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntityId {
    pub kind: EntityKind,
    pub key: String,
}

impl EntityId {
    pub fn new(kind: EntityKind, key: impl Into<String>) -> Self {
        Self { kind, key: key.into() }
    }

    pub fn concept(key: impl Into<String>) -> Self {
        Self::new(EntityKind::Concept, key)
    }

    pub fn exercise(key: impl Into<String>) -> Self {
        Self::new(EntityKind::Exercise, key)
    }

    pub fn student(key: impl Into<String>) -> Self {
        Self::new(EntityKind::Student, key)
    }
}

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.kind.prefix(), self.key)
    }
}

/// Dense index assignment for the keys of one entity kind, in order of first
/// appearance.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Interner {
    keys: Vec<String>,
    index: HashMap<String, usize>,
}

impl Interner {
    pub fn intern(&mut self, key: &str) -> usize {
        if let Some(&i) = self.index.get(key) {
            return i;
        }
        self.keys.push(key.to_owned());
        self.index.insert(key.to_owned(), self.keys.len() - 1);
        self.keys.len() - 1
    }

    pub fn get(&self, key: &str) -> Option<usize> {
        self.index.get(key).copied()
    }

    pub fn key(&self, i: usize) -> &str {
        &self.keys[i]
    }

    pub fn keys(&self) -> &[String] {
        &self.keys
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }
}

impl<S: AsRef<str>> FromIterator<S> for Interner {
    fn from_iter<I: IntoIterator<Item = S>>(iter: I) -> Self {
        let mut out = Interner::default();
        for k in iter {
            out.intern(k.as_ref());
        }
        out
    }
}

/// An interaction log together with its validated relation graph.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub log: InteractionLog,
    pub graph: RelationGraph,
}

impl Dataset {
    /// Concepts of exercise `q` according to the graph.
    pub fn concepts_of(&self, q: usize) -> &[usize] {
        self.graph.exercise_concepts(q)
    }
}
