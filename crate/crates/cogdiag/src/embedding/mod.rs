//! Semantic vectors for concepts, exercises and students.
//!
//! Vectors come from an [`EmbeddingTable`] produced by an external text
//! pipeline, from the deterministic [`PseudoEmbedder`], or both (table first).

mod provider;
mod pseudo;
mod table;

pub use provider::EmbeddingProvider;
pub use pseudo::{tokenize, PseudoEmbedder};
pub use table::{load_embeddings, write_embeddings, EmbeddingTable};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// A student's response history in text-ready form: `(concept key, response)`
/// pairs in the order they were recorded.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StudentHistoryKey {
    entries: Vec<(String, u8)>,
}

impl StudentHistoryKey {
    pub fn new(entries: Vec<(String, u8)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Usage("student history must not be empty".into()));
        }
        if let Some((c, r)) = entries.iter().find(|(_, r)| *r > 1) {
            return Err(Error::Validation(format!("response {r} for `{c}` is not binary")));
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[(String, u8)] {
        &self.entries
    }

    /// Textual interaction history, one `concept: X, response: correct` line
    /// per record, in recorded order.
    pub fn text(&self) -> String {
        let mut out = String::new();
        for (c, r) in &self.entries {
            out.push_str(&history_line(c, *r));
        }
        out
    }

    /// Order-free key: the history lines sorted, hashed with SHA-256, first 16
    /// hex digits. Embedding files store cold-start student vectors as
    /// `h:<hash>`.
    pub fn canonical_hash(&self) -> String {
        let mut lines: Vec<String> = self.entries.iter().map(|(c, r)| history_line(c, *r)).collect();
        lines.sort();
        let mut h = Sha256::new();
        for l in &lines {
            h.update(l.as_bytes());
        }
        h.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn history_line(concept: &str, response: u8) -> String {
    let r = if response == 1 { "correct" } else { "incorrect" };
    format!("concept: {concept}, response: {r}\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_ignores_order_but_not_content() {
        let a = StudentHistoryKey::new(vec![("x".into(), 1), ("y".into(), 0)]).unwrap();
        let b = StudentHistoryKey::new(vec![("y".into(), 0), ("x".into(), 1)]).unwrap();
        let c = StudentHistoryKey::new(vec![("y".into(), 1), ("x".into(), 1)]).unwrap();
        assert_eq!(a.canonical_hash(), b.canonical_hash());
        assert_ne!(a.canonical_hash(), c.canonical_hash());
        assert_eq!(a.canonical_hash().len(), 16);
        assert_eq!(
            a.text(),
            "concept: x, response: correct\nconcept: y, response: incorrect\n"
        );
    }

    #[test]
    fn empty_or_non_binary_histories_are_rejected() {
        assert!(StudentHistoryKey::new(vec![]).is_err());
        assert!(StudentHistoryKey::new(vec![("x".into(), 2)]).is_err());
    }
}
