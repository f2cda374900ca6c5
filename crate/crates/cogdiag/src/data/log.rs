use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Interner;
use crate::error::{Error, Result};

/// One response record. Indices refer to the owning [`InteractionLog`]'s
/// interners.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Interaction {
    pub student: usize,
    pub exercise: usize,
    pub response: u8,
    /// Position within the student's own log.
    pub ordinal: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct InteractionLog {
    pub students: Interner,
    pub exercises: Interner,
    pub concepts: Interner,
    interactions: Vec<Interaction>,
    /// Concepts named for each exercise in the log itself (sorted, may be empty).
    listed_concepts: Vec<BTreeSet<usize>>,
    by_student: Vec<Vec<usize>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Record {
    student: String,
    exercise: String,
    #[serde(default)]
    concepts: Vec<String>,
    response: i64,
}

impl InteractionLog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a record, interning any new keys. Ordinals follow insertion order
    /// per student.
    pub fn push(&mut self, student: &str, exercise: &str, concepts: &[&str], response: u8) -> Result<()> {
        if response > 1 {
            return Err(Error::Validation(format!("response {response} is not 0 or 1")));
        }
        for (what, key) in [("student", student), ("exercise", exercise)] {
            if key.trim().is_empty() {
                return Err(Error::Validation(format!("empty {what} key")));
            }
        }
        if let Some(c) = concepts.iter().find(|c| c.trim().is_empty()) {
            return Err(Error::Validation(format!(
                "exercise `{exercise}` references an unknown (blank) concept `{c}`"
            )));
        }
        let s = self.students.intern(student);
        let q = self.exercises.intern(exercise);
        if s == self.by_student.len() {
            self.by_student.push(Vec::new());
        }
        if q == self.listed_concepts.len() {
            self.listed_concepts.push(BTreeSet::new());
        }
        for c in concepts {
            let ci = self.concepts.intern(c);
            self.listed_concepts[q].insert(ci);
        }
        let ordinal = self.by_student[s].len();
        self.by_student[s].push(self.interactions.len());
        self.interactions.push(Interaction {
            student: s,
            exercise: q,
            response,
            ordinal,
        });
        Ok(())
    }

    pub fn interactions(&self) -> &[Interaction] {
        &self.interactions
    }

    pub fn len(&self) -> usize {
        self.interactions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.interactions.is_empty()
    }

    pub fn n_students(&self) -> usize {
        self.students.len()
    }

    pub fn n_exercises(&self) -> usize {
        self.exercises.len()
    }

    pub fn n_concepts(&self) -> usize {
        self.concepts.len()
    }

    /// Interaction indices of student `s`, in ordinal order.
    pub fn student_interactions(&self, s: usize) -> &[usize] {
        &self.by_student[s]
    }

    /// Adds a concept named only by the graph file.
    pub(crate) fn register_concept(&mut self, key: &str) -> usize {
        self.concepts.intern(key)
    }

    /// Concepts listed for exercise `q` in the interaction records.
    pub fn listed_concepts(&self, q: usize) -> &BTreeSet<usize> {
        &self.listed_concepts[q]
    }
}

/// Reads a line-delimited JSON interaction file.
///
/// Each line is `{"student": .., "exercise": .., "concepts": [..], "response": 0|1}`;
/// blank lines are skipped and line order defines per-student ordinals.
pub fn load_interactions(path: impl AsRef<Path>) -> Result<InteractionLog> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    let mut log = InteractionLog::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |msg: String| Error::Parse {
            path: path.to_owned(),
            line: i + 1,
            msg,
        };
        let rec: Record = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        let response = match rec.response {
            0 => 0,
            1 => 1,
            other => return Err(parse_err(format!("response must be 0 or 1, got {other}"))),
        };
        let concepts: Vec<&str> = rec.concepts.iter().map(String::as_str).collect();
        log.push(&rec.student, &rec.exercise, &concepts, response)
            .map_err(|e| match e {
                Error::Validation(msg) => Error::Validation(format!("{}:{}: {msg}", path.display(), i + 1)),
                other => other,
            })?;
    }
    log::info!(
        "loaded {} interactions: {} students, {} exercises, {} concepts",
        log.len(),
        log.n_students(),
        log.n_exercises(),
        log.n_concepts()
    );
    Ok(log)
}

/// Writes the log in the format read by [`load_interactions`]. `concepts_of`
/// supplies each exercise's concept list.
pub fn write_interactions<'a, F>(log: &InteractionLog, concepts_of: F, path: impl AsRef<Path>) -> Result<()>
where
    F: Fn(usize) -> &'a [usize],
{
    let mut w = BufWriter::new(File::create(path)?);
    for it in log.interactions() {
        let rec = Record {
            student: log.students.key(it.student).to_owned(),
            exercise: log.exercises.key(it.exercise).to_owned(),
            concepts: concepts_of(it.exercise)
                .iter()
                .map(|&c| log.concepts.key(c).to_owned())
                .collect(),
            response: i64::from(it.response),
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}
