use super::{tokenize, EmbeddingTable, PseudoEmbedder, StudentHistoryKey};
use crate::error::{Error, Result};

/// Resolves semantic vectors for entities.
///
/// Lookup order: table row, then the pseudo-embedder if one is configured,
/// otherwise a lookup error. Exercises without a `q:` row fall back to the
/// normalised sum of their concept vectors (exercise text = concept text) in
/// pseudo mode.
#[derive(Clone, Debug)]
pub struct EmbeddingProvider {
    table: Option<EmbeddingTable>,
    pseudo: Option<PseudoEmbedder>,
}

impl EmbeddingProvider {
    pub fn new(table: Option<EmbeddingTable>, pseudo: Option<PseudoEmbedder>) -> Result<Self> {
        match (&table, &pseudo) {
            (None, None) => Err(Error::Usage(
                "embedding provider needs a table or a pseudo-embedder".into(),
            )),
            (Some(t), Some(p)) if t.dim() != p.dim() => Err(Error::Usage(format!(
                "table dimension {} differs from pseudo dimension {}",
                t.dim(),
                p.dim()
            ))),
            _ => Ok(Self { table, pseudo }),
        }
    }

    pub fn strict(table: EmbeddingTable) -> Self {
        Self {
            table: Some(table),
            pseudo: None,
        }
    }

    pub fn pseudo(pseudo: PseudoEmbedder) -> Self {
        Self {
            table: None,
            pseudo: Some(pseudo),
        }
    }

    pub fn dim(&self) -> usize {
        match (&self.table, &self.pseudo) {
            (Some(t), _) => t.dim(),
            (None, Some(p)) => p.dim(),
            (None, None) => unreachable!("constructor requires one source"),
        }
    }

    pub fn is_pseudo(&self) -> bool {
        self.pseudo.is_some()
    }

    pub fn table(&self) -> Option<&EmbeddingTable> {
        self.table.as_ref()
    }

    fn table_row(&self, key: &str) -> Option<Vec<f64>> {
        self.table.as_ref().and_then(|t| t.get(key))
    }

    pub fn concept_vec(&self, concept: &str) -> Result<Vec<f64>> {
        let key = format!("c:{concept}");
        if let Some(v) = self.table_row(&key) {
            return Ok(v);
        }
        match &self.pseudo {
            Some(p) => Ok(p.embed_tokens(&tokenize(concept))),
            None => Err(Error::Lookup(format!("no embedding for `{key}`"))),
        }
    }

    pub fn exercise_vec(&self, exercise: &str, concepts: &[&str]) -> Result<Vec<f64>> {
        let key = format!("q:{exercise}");
        if let Some(v) = self.table_row(&key) {
            return Ok(v);
        }
        if self.pseudo.is_none() {
            return Err(Error::Lookup(format!("no embedding for `{key}`")));
        }
        if concepts.is_empty() {
            return Err(Error::Lookup(format!("`{key}` has neither a vector nor concepts")));
        }
        let mut acc = vec![0.0; self.dim()];
        for c in concepts {
            for (a, v) in acc.iter_mut().zip(self.concept_vec(c)?) {
                *a += v;
            }
        }
        Ok(normalize(acc))
    }

    /// Student vector for a history. Tries `h:<canonical hash>`, then
    /// `s:<student>` when a key is given, then the pseudo-embedder.
    pub fn student_vec(&self, student: Option<&str>, history: &StudentHistoryKey) -> Result<Vec<f64>> {
        let hkey = format!("h:{}", history.canonical_hash());
        if let Some(v) = self.table_row(&hkey) {
            return Ok(v);
        }
        if let Some(s) = student {
            if let Some(v) = self.table_row(&format!("s:{s}")) {
                return Ok(v);
            }
        }
        match &self.pseudo {
            Some(p) => Ok(p.embed_history(history)),
            None => Err(Error::Lookup(format!(
                "no student embedding for {} (`{hkey}`)",
                student.map_or_else(|| "anonymous history".to_owned(), |s| format!("`s:{s}`"))
            ))),
        }
    }
}

fn normalize(mut v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        for x in &mut v {
            *x /= n;
        }
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hist(entries: &[(&str, u8)]) -> StudentHistoryKey {
        StudentHistoryKey::new(entries.iter().map(|(c, r)| (c.to_string(), *r)).collect()).unwrap()
    }

    #[test]
    fn stored_vectors_are_returned_verbatim() {
        let mut t = EmbeddingTable::new(4);
        t.insert("c:exponents", &[0.5, -0.25, 0.125, 1.0]).unwrap();
        let p = EmbeddingProvider::strict(t);
        assert_eq!(p.concept_vec("exponents").unwrap(), vec![0.5, -0.25, 0.125, 1.0]);
        assert!(matches!(p.concept_vec("logs"), Err(Error::Lookup(_))));
        assert!(matches!(p.exercise_vec("q1", &["exponents"]), Err(Error::Lookup(_))));
        assert!(matches!(
            p.student_vec(Some("s1"), &hist(&[("exponents", 1)])),
            Err(Error::Lookup(_))
        ));
    }

    #[test]
    fn exercise_without_text_uses_its_concepts() {
        let p = EmbeddingProvider::pseudo(PseudoEmbedder::new(128, 4));
        let c = p.concept_vec("fractions").unwrap();
        let close = |x: &[f64], y: &[f64]| x.iter().zip(y).all(|(a, b)| (a - b).abs() < 1e-12);
        assert!(close(&p.exercise_vec("q9", &["fractions"]).unwrap(), &c));
        let two = p.exercise_vec("q9", &["fractions", "decimals"]).unwrap();
        let d = p.concept_vec("decimals").unwrap();
        let expected = normalize(c.iter().zip(&d).map(|(a, b)| a + b).collect());
        assert!(close(&two, &expected));
    }

    #[test]
    fn single_correct_record_embeds_as_the_concept_pattern() {
        let pe = PseudoEmbedder::new(256, 9);
        let p = EmbeddingProvider::pseudo(pe.clone());
        let v = p.student_vec(None, &hist(&[("c7", 1)])).unwrap();
        assert_eq!(v, pe.embed_tokens(&["c7"]));
    }

    #[test]
    fn history_hash_rows_take_precedence() {
        let h = hist(&[("a", 1), ("b", 0)]);
        let mut t = EmbeddingTable::new(2);
        t.insert(format!("h:{}", h.canonical_hash()), &[1.0, 0.0]).unwrap();
        t.insert("s:amy", &[0.0, 1.0]).unwrap();
        let p = EmbeddingProvider::strict(t);
        assert_eq!(p.student_vec(Some("amy"), &h).unwrap(), vec![1.0, 0.0]);
        assert_eq!(p.student_vec(Some("amy"), &hist(&[("a", 1)])).unwrap(), vec![0.0, 1.0]);
    }

    #[test]
    fn mismatched_dimensions_are_refused() {
        let t = EmbeddingTable::new(8);
        assert!(EmbeddingProvider::new(Some(t), Some(PseudoEmbedder::new(16, 0))).is_err());
    }
}
