//! Training and evaluation protocols: standard, new-student and new-exercise
//! splits, plus per-concept diagnosis.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::data::{load_graph, load_interactions, DatasetSplit, InteractionLog, RelationGraph, SplitMode};
use crate::embedding::{load_embeddings, EmbeddingProvider, PseudoEmbedder};
use crate::error::{Error, Result};
use crate::metrics::{self, Metrics};
use crate::model::{Model, ModelInputs};
use crate::synth::SynthDataset;
use crate::train::{columns, train, TrainOutcome};

/// Everything a run reads: the log, its graph and the text vectors.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub log: InteractionLog,
    pub graph: RelationGraph,
    pub provider: EmbeddingProvider,
}

impl Corpus {
    /// Loads the interaction and graph files. Text vectors come from
    /// `embeddings`, from a pseudo-embedder of dimension `pseudo.0` seeded
    /// with `pseudo.1`, or from both (the table wins where it has a row).
    pub fn load(
        interactions: impl AsRef<Path>,
        graph: impl AsRef<Path>,
        embeddings: Option<&Path>,
        pseudo: Option<(usize, u64)>,
    ) -> Result<Self> {
        let mut log = load_interactions(interactions)?;
        let graph = load_graph(graph, &mut log)?;
        let table = embeddings.map(load_embeddings).transpose()?;
        let pseudo = pseudo.map(|(dim, seed)| PseudoEmbedder::new(dim, seed));
        let provider = EmbeddingProvider::new(table, pseudo)?;
        Ok(Self { log, graph, provider })
    }

    pub fn synthetic(ds: &SynthDataset, dim: usize, seed: u64) -> Result<Self> {
        Ok(Self {
            log: ds.log.clone(),
            graph: ds.graph.clone(),
            provider: ds.provider(dim, seed)?,
        })
    }

    /// Model inputs in which every student is described by `visible` only.
    pub fn inputs(&self, visible: &[usize]) -> Result<ModelInputs> {
        ModelInputs::build(&self.log, &self.graph, &self.provider, visible)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConceptMetrics {
    pub concept: String,
    pub n: usize,
    /// `None` when the concept's test records are all of one class.
    pub auc: Option<f64>,
    pub acc: f64,
    pub mean_prediction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: String,
    pub config_hash: String,
    pub n: usize,
    pub auc: f64,
    pub acc: f64,
    pub rmse: f64,
    pub per_concept: Vec<ConceptMetrics>,
    /// Test records per evaluated exercise, keyed by exercise id.
    pub per_exercise_counts: BTreeMap<String, usize>,
    /// Students or exercises left out of the evaluation, with the reason.
    pub skipped: Vec<String>,
}

impl EvalReport {
    pub fn metrics(&self) -> Metrics {
        Metrics {
            auc: self.auc,
            acc: self.acc,
            rmse: self.rmse,
        }
    }
}

/// A trained model and the inputs it was trained with.
#[derive(Clone, Debug)]
pub struct Fitted {
    pub outcome: TrainOutcome<Model>,
    pub inputs: ModelInputs,
}

impl Fitted {
    pub fn model(&self) -> &Model {
        &self.outcome.best
    }
}

/// Trains a fresh model on `split.train`, early-stopping on `split.valid`.
/// Students are described by their training records only.
pub fn fit(corpus: &Corpus, cfg: &Config, split: &DatasetSplit) -> Result<Fitted> {
    cfg.validate()?;
    let inputs = corpus.inputs(&split.train)?;
    let model = Model::new(&cfg.model, &inputs, cfg.train.seed)?;
    log::info!(
        "training {} parameters on {} interactions ({})",
        model.params().scalar_count(),
        split.train.len(),
        split.describe()
    );
    let outcome = train(model, &inputs, &corpus.log, &split.train, &split.valid, &cfg.train)?;
    Ok(Fitted { outcome, inputs })
}

fn check_dims(model: &Model, inputs: &ModelInputs) -> Result<()> {
    let have = inputs.dims(model.config());
    if have != model.dims() {
        return Err(Error::Checkpoint(format!(
            "checkpoint was trained for {:?}, dataset gives {:?}",
            model.dims(),
            have
        )));
    }
    Ok(())
}

/// Scores the interactions `idx`. Records the model cannot score (a student
/// without history or text, an exercise without text) are dropped and listed
/// in `skipped`.
pub fn evaluate_on(
    model: &Model,
    corpus: &Corpus,
    inputs: &ModelInputs,
    idx: &[usize],
    split: &str,
) -> Result<EvalReport> {
    check_dims(model, inputs)?;
    let cfg = model.config();
    let log = &corpus.log;
    let mut skipped_students = BTreeMap::new();
    let mut skipped_exercises = BTreeMap::new();
    let kept: Vec<usize> = idx
        .iter()
        .copied()
        .filter(|&i| {
            let it = log.interactions()[i];
            let student_ok = (!cfg.uses_state() || inputs.has_history(it.student))
                && (!cfg.uses_student_text() || cfg.ablation.llm || inputs.has_student_text(it.student));
            let exercise_ok = !cfg.uses_exercise_text() || cfg.ablation.llm || inputs.has_exercise_text(it.exercise);
            if !student_ok {
                *skipped_students.entry(it.student).or_insert(0usize) += 1;
            }
            if !exercise_ok {
                *skipped_exercises.entry(it.exercise).or_insert(0usize) += 1;
            }
            student_ok && exercise_ok
        })
        .collect();
    let mut skipped: Vec<String> = skipped_students
        .iter()
        .map(|(&s, n)| format!("student {}: no history or text ({n} records)", log.students.key(s)))
        .collect();
    skipped.extend(
        skipped_exercises
            .iter()
            .map(|(&q, n)| format!("exercise {}: no text vector ({n} records)", log.exercises.key(q))),
    );
    for line in &skipped {
        log::warn!("skipped {line}");
    }
    if kept.is_empty() {
        return Err(Error::Usage(format!("nothing to evaluate in {split}")));
    }

    let (s, q, y) = columns(log, &kept);
    let pred = model.predict(inputs, &s, &q)?;
    let m = metrics::evaluate(&pred, &y)?;

    let mut by_concept: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    let mut per_exercise_counts = BTreeMap::new();
    for (j, &qi) in q.iter().enumerate() {
        for &c in corpus.graph.exercise_concepts(qi) {
            by_concept.entry(c).or_default().push(j);
        }
        *per_exercise_counts.entry(log.exercises.key(qi).to_owned()).or_insert(0) += 1;
    }
    let per_concept = by_concept
        .into_iter()
        .map(|(c, rows)| {
            let p: Vec<f64> = rows.iter().map(|&j| pred[j]).collect();
            let l: Vec<f64> = rows.iter().map(|&j| y[j]).collect();
            let auc = match metrics::auc(&p, &l) {
                Ok(a) => Some(a),
                Err(Error::UndefinedMetric(_)) => None,
                Err(e) => return Err(e),
            };
            Ok(ConceptMetrics {
                concept: log.concepts.key(c).to_owned(),
                n: rows.len(),
                auc,
                acc: metrics::acc(&p, &l)?,
                mean_prediction: p.iter().sum::<f64>() / p.len() as f64,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(EvalReport {
        split: split.to_owned(),
        config_hash: cfg.hash(),
        n: kept.len(),
        auc: m.auc,
        acc: m.acc,
        rmse: m.rmse,
        per_concept,
        per_exercise_counts,
        skipped,
    })
}

/// Single-component ablations of `base`, the unmodified model first.
pub fn ablation_variants(base: &Config) -> Vec<(&'static str, Config)> {
    let variant = |f: fn(&mut Config)| {
        let mut c = base.clone();
        f(&mut c);
        c
    };
    vec![
        ("full", base.clone()),
        ("no_text", variant(|c| c.model.ablation.text = true)),
        ("no_state", variant(|c| c.model.ablation.state = true)),
        ("id_embeddings", variant(|c| c.model.ablation.llm = true)),
        ("no_moe", variant(|c| c.model.moe.enabled = false)),
        ("no_gat", variant(|c| c.model.state.gat = false)),
    ]
}

/// ID-only control for held-out students: ID rows replace the text vectors
/// and the pooled state is dropped, so nothing describes an unseen student.
pub fn new_student_control(base: &Config) -> Config {
    let mut c = base.clone();
    c.model.ablation.llm = true;
    c.model.ablation.state = true;
    c
}

/// Model for held-out exercises: they have no trained ID row, so the
/// exercise representation comes from text alone.
pub fn new_exercise_model(base: &Config) -> Config {
    let mut c = base.clone();
    c.model.head.exercise_id = false;
    c
}

/// ID-only control for held-out exercises: the exercise ID row replaces the
/// exercise text.
pub fn new_exercise_control(base: &Config) -> Config {
    let mut c = base.clone();
    c.model.text.exercise = false;
    c.model.head.exercise_id = true;
    c
}

fn expect_mode(split: &DatasetSplit, mode: SplitMode) -> Result<()> {
    if split.mode != mode {
        return Err(Error::Usage(format!(
            "expected a {mode:?} split, got {}",
            split.describe()
        )));
    }
    Ok(())
}

/// Test metrics for a standard split; students are described by their
/// training records, as during training.
pub fn eval_standard(model: &Model, corpus: &Corpus, split: &DatasetSplit) -> Result<EvalReport> {
    expect_mode(split, SplitMode::Standard)?;
    let inputs = corpus.inputs(&split.train)?;
    evaluate_on(model, corpus, &inputs, &split.test, &split.describe())
}

/// Metrics on held-out students, each described by the first `K` records of
/// their log and scored on the rest.
pub fn eval_new_students(model: &Model, corpus: &Corpus, split: &DatasetSplit) -> Result<EvalReport> {
    expect_mode(split, SplitMode::NewStudent)?;
    let mut visible = split.train.clone();
    visible.extend_from_slice(&split.history);
    visible.sort_unstable();
    let inputs = corpus.inputs(&visible)?;
    let mut report = evaluate_on(model, corpus, &inputs, &split.test, &split.describe())?;
    let k = split.history_len.unwrap_or(0);
    report.skipped.extend(
        split
            .skipped_students
            .iter()
            .map(|&s| format!("student {}: at most {k} records", corpus.log.students.key(s))),
    );
    Ok(report)
}

/// Metrics on interactions with held-out exercises.
pub fn eval_new_exercises(model: &Model, corpus: &Corpus, split: &DatasetSplit) -> Result<EvalReport> {
    expect_mode(split, SplitMode::NewExercise)?;
    let inputs = corpus.inputs(&split.train)?;
    evaluate_on(model, corpus, &inputs, &split.test, &split.describe())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConceptDiagnosis {
    pub concept: String,
    /// Mean predicted probability of a correct response over the probes.
    pub probability: f64,
    pub probes: usize,
}

/// Predicted mastery of `student` for each listed concept: the mean
/// prediction over every exercise tagged with that concept. Concepts without
/// any exercise are omitted with a warning.
pub fn diagnose(
    model: &Model,
    corpus: &Corpus,
    inputs: &ModelInputs,
    student: usize,
    concepts: &[usize],
) -> Result<Vec<ConceptDiagnosis>> {
    check_dims(model, inputs)?;
    let mut out = Vec::with_capacity(concepts.len());
    for &c in concepts {
        let probes: Vec<usize> = (0..corpus.graph.n_exercises())
            .filter(|&q| corpus.graph.exercise_concepts(q).contains(&c))
            .filter(|&q| {
                !model.config().uses_exercise_text() || model.config().ablation.llm || inputs.has_exercise_text(q)
            })
            .collect();
        let name = corpus.log.concepts.key(c).to_owned();
        if probes.is_empty() {
            log::warn!("concept {name} has no probe exercise");
            continue;
        }
        let pred = model.predict(inputs, &vec![student; probes.len()], &probes)?;
        out.push(ConceptDiagnosis {
            concept: name,
            probability: pred.iter().sum::<f64>() / pred.len() as f64,
            probes: probes.len(),
        });
    }
    Ok(out)
}
