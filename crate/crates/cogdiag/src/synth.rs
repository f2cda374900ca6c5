//! Synthetic students, concept graphs and responses with known ground truth.
//!
//! Concepts sit in layers; every concept outside the first layer has one or
//! two prerequisites in the previous layer, and concepts of one layer may be
//! correlated. A student's mastery of concept `c` is
//! `sigmoid(a·θ + σ·u_c + δ_c)`, then capped along prerequisites so that a
//! child never exceeds its weakest parent by more than the configured margin.
//! Responses follow a guess/slip model on the mean mastery of the exercise's
//! concepts.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{derive_seed, sigmoid};
use crate::data::{write_graph, write_interactions, InteractionLog, RelationGraph};
use crate::embedding::{write_embeddings, EmbeddingProvider, EmbeddingTable, PseudoEmbedder};
use crate::error::{Error, Result};
use crate::metrics::auc;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_students: usize,
    pub n_exercises: usize,
    pub n_concepts: usize,
    /// Interactions per student.
    pub per_student: usize,
    pub layers: usize,
    /// Probability of a correlative edge between two concepts of one layer.
    pub corr_prob: f64,
    /// Loading of the general ability θ.
    pub ability_scale: f64,
    /// Scale of the concept-specific deviation u_c.
    pub concept_scale: f64,
    /// Correlation between a concept's deviation and the mean deviation of
    /// its prerequisites.
    pub parent_corr: f64,
    /// Scale of the per-concept offset δ_c.
    pub difficulty_scale: f64,
    /// A child's mastery is at most its weakest parent's plus this margin.
    pub prereq_margin: f64,
    pub max_guess: f64,
    pub max_slip: f64,
    /// Probability that an exercise covers two concepts instead of one.
    pub two_concept_prob: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            n_students: 200,
            n_exercises: 100,
            n_concepts: 20,
            per_student: 60,
            layers: 4,
            corr_prob: 0.3,
            ability_scale: 3.0,
            concept_scale: 0.5,
            parent_corr: 0.8,
            difficulty_scale: 2.5,
            prereq_margin: 0.2,
            max_guess: 0.2,
            max_slip: 0.2,
            two_concept_prob: 0.3,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        if self.n_concepts < 5 {
            return Err(Error::Config(format!(
                "need at least 5 concepts, got {}",
                self.n_concepts
            )));
        }
        if self.n_students == 0 || self.n_exercises == 0 || self.per_student == 0 {
            return Err(Error::Config(
                "student, exercise and interaction counts must be positive".into(),
            ));
        }
        if self.n_exercises < self.n_concepts {
            return Err(Error::Config(format!(
                "{} exercises cannot cover {} concepts",
                self.n_exercises, self.n_concepts
            )));
        }
        if self.n_students * self.per_student < self.n_exercises {
            return Err(Error::Config(format!(
                "{} interactions cannot cover {} exercises",
                self.n_students * self.per_student,
                self.n_exercises
            )));
        }
        if self.layers < 2 || self.layers > self.n_concepts {
            return Err(Error::Config(format!(
                "layers must lie in [2, {}], got {}",
                self.n_concepts, self.layers
            )));
        }
        for (name, v) in [("max_guess", self.max_guess), ("max_slip", self.max_slip)] {
            if !(0.0..=0.3).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 0.3], got {v}")));
            }
        }
        for (name, v) in [
            ("corr_prob", self.corr_prob),
            ("two_concept_prob", self.two_concept_prob),
            ("parent_corr", self.parent_corr),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must be a probability, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentStudent {
    /// Mastery per concept, indexed like the generated log's concepts.
    pub mastery: Vec<f64>,
    pub guess: f64,
    pub slip: f64,
}

impl LatentStudent {
    /// `p = (1 − s)·m̄ + g·(1 − m̄)` with `m̄` the mean mastery of `concepts`.
    pub fn prob(&self, concepts: &[usize]) -> f64 {
        let m = concepts.iter().map(|&c| self.mastery[c]).sum::<f64>() / concepts.len() as f64;
        (1.0 - self.slip) * m + self.guess * (1.0 - m)
    }
}

/// Draws a binary response with success probability `p`.
pub fn sample_response<R: Rng + ?Sized>(p: f64, rng: &mut R) -> u8 {
    u8::from(rng.gen::<f64>() < p)
}

#[derive(Clone, Debug)]
pub struct SynthDataset {
    pub config: SynthConfig,
    pub log: InteractionLog,
    pub graph: RelationGraph,
    /// Students in log order.
    pub students: Vec<LatentStudent>,
    /// True response probability of every interaction, in log order.
    pub truth: Vec<f64>,
    /// Layer of every concept (log order).
    pub layer: Vec<usize>,
}

fn concept_name(i: usize) -> String {
    format!("k{i:02}")
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthDataset> {
    cfg.validate()?;
    let k = cfg.n_concepts;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "synth.graph"));

    // Concepts 0..k in layer order, layer sizes as even as possible.
    let layer: Vec<usize> = (0..k).map(|c| c * cfg.layers / k).collect();
    let members = |l: usize| -> Vec<usize> { (0..k).filter(|&c| layer[c] == l).collect() };
    let mut prereq = Vec::new();
    let mut corr = Vec::new();
    for l in 0..cfg.layers {
        let here = members(l);
        if l > 0 {
            let prev = members(l - 1);
            for &c in &here {
                let n = if prev.len() > 1 && rng.gen_bool(0.5) { 2 } else { 1 };
                for i in sample(&mut rng, prev.len(), n) {
                    prereq.push((prev[i], c));
                }
            }
        }
        for (i, &a) in here.iter().enumerate() {
            for &b in &here[i + 1..] {
                if rng.gen_bool(cfg.corr_prob) {
                    corr.push((a, b));
                }
            }
        }
    }
    let mut parents = vec![Vec::new(); k];
    for &(p, c) in &prereq {
        parents[c].push(p);
    }

    // The first K exercises cover every concept once.
    let exercise_concepts: Vec<Vec<usize>> = (0..cfg.n_exercises)
        .map(|q| {
            let n = if rng.gen_bool(cfg.two_concept_prob) { 2 } else { 1 };
            let mut s: Vec<usize> = sample(&mut rng, k, n).into_vec();
            if q < k && !s.contains(&q) {
                s[0] = q;
            }
            s.sort_unstable();
            s
        })
        .collect();
    let difficulty: Vec<f64> = (0..k)
        .map(|_| cfg.difficulty_scale * rng.sample::<f64, _>(StandardNormal))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "synth.students"));
    let mut latent = Vec::with_capacity(cfg.n_students);
    for _ in 0..cfg.n_students {
        let theta: f64 = StandardNormal.sample(&mut rng);
        let mut u = vec![0.0; k];
        for c in 0..k {
            let z: f64 = StandardNormal.sample(&mut rng);
            u[c] = if parents[c].is_empty() {
                z
            } else {
                let pm = parents[c].iter().map(|&p| u[p]).sum::<f64>() / parents[c].len() as f64;
                cfg.parent_corr * pm + (1.0 - cfg.parent_corr * cfg.parent_corr).sqrt() * z
            };
        }
        let mut mastery: Vec<f64> = (0..k)
            .map(|c| sigmoid(cfg.ability_scale * theta + cfg.concept_scale * u[c] + difficulty[c]))
            .collect();
        // Concept indices follow layer order, so parents are final before children.
        for c in 0..k {
            if let Some(cap) = parents[c].iter().map(|&p| mastery[p]).reduce(f64::min) {
                mastery[c] = mastery[c].min(cap + cfg.prereq_margin);
            }
        }
        latent.push(LatentStudent {
            mastery,
            guess: rng.gen_range(0.0..=cfg.max_guess),
            slip: rng.gen_range(0.0..=cfg.max_slip),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "synth.responses"));
    let mut log = InteractionLog::new();
    let mut truth = Vec::with_capacity(cfg.n_students * cfg.per_student);
    let names: Vec<String> = (0..k).map(concept_name).collect();
    // Every exercise is drawn at least once; the remaining draws are uniform
    // with replacement, and the combined sequence is shuffled.
    let total = cfg.n_students * cfg.per_student;
    let mut draws: Vec<usize> = (0..cfg.n_exercises).collect();
    draws.extend((cfg.n_exercises..total).map(|_| rng.gen_range(0..cfg.n_exercises)));
    draws.shuffle(&mut rng);
    let mut draws = draws.into_iter();
    for (s, st) in latent.iter().enumerate() {
        for _ in 0..cfg.per_student {
            let q = draws.next().expect("one draw per interaction");
            let cs = &exercise_concepts[q];
            let p = st.prob(cs);
            let r = sample_response(p, &mut rng);
            let listed: Vec<&str> = cs.iter().map(|&c| names[c].as_str()).collect();
            log.push(&format!("u{s:04}"), &format!("e{q:04}"), &listed, r)?;
            truth.push(p);
        }
    }

    // Re-index concepts and exercises to the log's interning order.
    let cmap: Vec<usize> = names.iter().map(|n| log.register_concept(n)).collect();
    let mut qc = vec![std::collections::BTreeSet::new(); log.n_exercises()];
    for (q, cs) in exercise_concepts.iter().enumerate() {
        if let Some(qi) = log.exercises.get(&format!("e{q:04}")) {
            qc[qi] = cs.iter().map(|&c| cmap[c]).collect();
        }
    }
    let graph = RelationGraph::new(
        k,
        prereq.iter().map(|&(a, b)| (cmap[a], cmap[b])),
        corr.iter().map(|&(a, b)| (cmap[a], cmap[b])),
        qc,
    )?;
    let mut students = Vec::with_capacity(latent.len());
    for st in &latent {
        let mut mastery = vec![0.0; k];
        for (c, &m) in st.mastery.iter().enumerate() {
            mastery[cmap[c]] = m;
        }
        students.push(LatentStudent { mastery, ..st.clone() });
    }
    let mut layer_by_log = vec![0; k];
    for c in 0..k {
        layer_by_log[cmap[c]] = layer[c];
    }
    Ok(SynthDataset {
        config: cfg.clone(),
        log,
        graph,
        students,
        truth,
        layer: layer_by_log,
    })
}

/// AUC of the true probabilities against the realised responses: the ceiling
/// for any predictor on the same interactions.
pub fn bayes_optimal_auc(truth: &[f64], labels: &[f64]) -> Result<f64> {
    auc(truth, labels)
}

impl SynthDataset {
    /// Labels of the listed interactions.
    pub fn labels(&self, idx: &[usize]) -> Vec<f64> {
        idx.iter()
            .map(|&i| f64::from(self.log.interactions()[i].response))
            .collect()
    }

    pub fn truth_of(&self, idx: &[usize]) -> Vec<f64> {
        idx.iter().map(|&i| self.truth[i]).collect()
    }

    /// Concept text: the concept's own name followed by the names of its
    /// prerequisites, successors and correlates.
    pub fn concept_text(&self, c: usize) -> String {
        let name = |i: usize| self.log.concepts.key(i).to_owned();
        let mut parts = vec![name(c)];
        parts.extend(self.graph.prereq_neighbors(c).iter().map(|&p| name(p)));
        parts.extend(
            self.graph
                .prereq_edges()
                .iter()
                .filter(|&&(p, _)| p == c)
                .map(|&(_, ch)| name(ch)),
        );
        parts.extend(self.graph.corr_neighbors(c).iter().map(|&n| name(n)));
        parts.join(" ")
    }

    /// `c:` rows from the concept texts and `q:` rows from each exercise's
    /// concepts, embedded with `pseudo`.
    pub fn embedding_table(&self, pseudo: &PseudoEmbedder) -> Result<EmbeddingTable> {
        let mut table = EmbeddingTable::new(pseudo.dim());
        let concept_vecs: Vec<Vec<f64>> = (0..self.log.n_concepts())
            .map(|c| pseudo.embed_text(&self.concept_text(c)))
            .collect();
        for (c, v) in concept_vecs.iter().enumerate() {
            table.insert(format!("c:{}", self.log.concepts.key(c)), v)?;
        }
        for q in 0..self.log.n_exercises() {
            let mut acc = vec![0.0; pseudo.dim()];
            for &c in self.graph.exercise_concepts(q) {
                for (a, v) in acc.iter_mut().zip(&concept_vecs[c]) {
                    *a += v;
                }
            }
            let n = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
            acc.iter_mut().for_each(|v| *v /= n);
            table.insert(format!("q:{}", self.log.exercises.key(q)), &acc)?;
        }
        Ok(table)
    }

    /// Table-backed concept and exercise vectors, pseudo-embedded students.
    pub fn provider(&self, dim: usize, seed: u64) -> Result<EmbeddingProvider> {
        let pseudo = PseudoEmbedder::new(dim, seed);
        let table = self.embedding_table(&pseudo)?;
        EmbeddingProvider::new(Some(table), Some(pseudo))
    }

    /// Writes `interactions.jsonl`, `graph.tsv`, `embeddings.txt` and
    /// `truth.jsonl` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>, pseudo: &PseudoEmbedder) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        write_interactions(
            &self.log,
            |q| self.graph.exercise_concepts(q),
            dir.join("interactions.jsonl"),
        )?;
        write_graph(&self.graph, &self.log, dir.join("graph.tsv"))?;
        write_embeddings(&self.embedding_table(pseudo)?, dir.join("embeddings.txt"))?;
        let mut w = BufWriter::new(File::create(dir.join("truth.jsonl"))?);
        for (i, &p) in self.truth.iter().enumerate() {
            serde_json::to_writer(&mut w, &serde_json::json!({"index": i, "p": p}))?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Reads a `truth.jsonl` file back into per-interaction probabilities.
pub fn load_truth(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    #[derive(Deserialize)]
    struct Row {
        index: usize,
        p: f64,
    }
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let row: Row = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.to_owned(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        if row.index != out.len() {
            return Err(Error::Parse {
                path: path.to_owned(),
                line: i + 1,
                msg: format!("expected index {}, got {}", out.len(), row.index),
            });
        }
        out.push(row.p);
    }
    Ok(out)
}
