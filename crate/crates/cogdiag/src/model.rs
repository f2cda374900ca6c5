//! The assembled diagnosis model and the constant inputs it reads.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{derive_seed, xavier_init, Bound, ParamId, ParamStore, Tape, Tensor, Var};
use crate::config::{ConceptInit, ModelConfig};
use crate::data::{InteractionLog, RelationGraph};
use crate::embedding::{EmbeddingProvider, StudentHistoryKey};
use crate::error::{Error, Result};
use crate::graph_encoder::{GraphEncoder, GraphStructure, StudentPool};
use crate::head::{fuse_exercise, fuse_student, PredictHead};
use crate::moe::Adaptor;

/// Sizes a model is built for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub n_students: usize,
    pub n_exercises: usize,
    pub n_concepts: usize,
    /// Width of the semantic vectors.
    pub text_dim: usize,
    /// Model dimension.
    pub d: usize,
}

/// Dataset-derived constants: graph structure, pooled histories and the
/// semantic vector of every entity.
#[derive(Clone, Debug)]
pub struct ModelInputs {
    pub structure: GraphStructure,
    pub pool: StudentPool,
    student_text: Tensor,
    exercise_text: Tensor,
    concept_text: Option<Tensor>,
    student_text_ok: Vec<bool>,
    exercise_text_ok: Vec<bool>,
}

/// History of one student in text-ready form: one `(concept, response)`
/// entry per concept of each visible record.
pub fn history_key(log: &InteractionLog, graph: &RelationGraph, records: &[usize]) -> Result<StudentHistoryKey> {
    let mut entries = Vec::new();
    for &i in records {
        let it = log.interactions()[i];
        for &c in graph.exercise_concepts(it.exercise) {
            entries.push((log.concepts.key(c).to_owned(), it.response));
        }
    }
    StudentHistoryKey::new(entries)
}

/// Visible record indices grouped per student, in ordinal order.
pub fn visible_histories(log: &InteractionLog, visible: &[usize]) -> Vec<Vec<usize>> {
    let mut per: Vec<Vec<usize>> = vec![Vec::new(); log.n_students()];
    for &i in visible {
        per[log.interactions()[i].student].push(i);
    }
    for h in &mut per {
        h.sort_unstable_by_key(|&i| log.interactions()[i].ordinal);
    }
    per
}

fn missing(e: &Error) -> bool {
    matches!(e, Error::Lookup(_))
}

impl ModelInputs {
    /// Builds inputs where each student is described by the `visible`
    /// interactions only (training records, plus evaluation histories of
    /// cold-start students).
    pub fn build(
        log: &InteractionLog,
        graph: &RelationGraph,
        provider: &EmbeddingProvider,
        visible: &[usize],
    ) -> Result<Self> {
        let structure = GraphStructure::new(graph);
        let per = visible_histories(log, visible);
        let pairs: Vec<Vec<(usize, u8)>> = per
            .iter()
            .map(|h| {
                h.iter()
                    .map(|&i| {
                        let it = log.interactions()[i];
                        (it.exercise, it.response)
                    })
                    .collect()
            })
            .collect();
        let pool = StudentPool::new(&pairs, &structure);
        let dim = provider.dim();

        let mut student_text = Tensor::zeros(log.n_students(), dim);
        let mut student_text_ok = vec![false; log.n_students()];
        for (s, h) in per.iter().enumerate() {
            if h.is_empty() {
                continue;
            }
            let key = history_key(log, graph, h)?;
            match provider.student_vec(Some(log.students.key(s)), &key) {
                Ok(v) => {
                    student_text.row_mut(s).copy_from_slice(&v);
                    student_text_ok[s] = true;
                }
                Err(e) if missing(&e) => {}
                Err(e) => return Err(e),
            }
        }

        let mut exercise_text = Tensor::zeros(log.n_exercises(), dim);
        let mut exercise_text_ok = vec![false; log.n_exercises()];
        for q in 0..log.n_exercises() {
            let concepts: Vec<&str> = graph
                .exercise_concepts(q)
                .iter()
                .map(|&c| log.concepts.key(c))
                .collect();
            match provider.exercise_vec(log.exercises.key(q), &concepts) {
                Ok(v) => {
                    exercise_text.row_mut(q).copy_from_slice(&v);
                    exercise_text_ok[q] = true;
                }
                Err(e) if missing(&e) => {}
                Err(e) => return Err(e),
            }
        }

        let mut concept_text = Some(Tensor::zeros(log.n_concepts(), dim));
        for c in 0..log.n_concepts() {
            match provider.concept_vec(log.concepts.key(c)) {
                Ok(v) => {
                    if let Some(t) = concept_text.as_mut() {
                        t.row_mut(c).copy_from_slice(&v);
                    }
                }
                Err(e) if missing(&e) => concept_text = None,
                Err(e) => return Err(e),
            }
        }

        Ok(Self {
            structure,
            pool,
            student_text,
            exercise_text,
            concept_text,
            student_text_ok,
            exercise_text_ok,
        })
    }

    pub fn n_students(&self) -> usize {
        self.pool.len()
    }

    pub fn text_dim(&self) -> usize {
        self.student_text.cols()
    }

    pub fn has_history(&self, s: usize) -> bool {
        self.pool.history_len(s) > 0
    }

    pub fn has_student_text(&self, s: usize) -> bool {
        self.student_text_ok[s]
    }

    pub fn has_exercise_text(&self, q: usize) -> bool {
        self.exercise_text_ok[q]
    }

    /// Replaces the semantic vector of an exercise.
    pub fn set_exercise_text(&mut self, q: usize, v: &[f64]) -> Result<()> {
        if v.len() != self.text_dim() {
            return Err(Error::Shape {
                op: "set_exercise_text",
                detail: format!("{} values for dimension {}", v.len(), self.text_dim()),
            });
        }
        self.exercise_text.row_mut(q).copy_from_slice(v);
        self.exercise_text_ok[q] = true;
        Ok(())
    }

    /// Student text vectors of the listed students (zero rows where absent).
    pub fn student_text_rows(&self, idx: &[usize]) -> Tensor {
        Self::rows(&self.student_text, idx)
    }

    /// Exercise text vectors of the listed exercises (zero rows where absent).
    pub fn exercise_text_rows(&self, idx: &[usize]) -> Tensor {
        Self::rows(&self.exercise_text, idx)
    }

    pub fn dims(&self, config: &ModelConfig) -> Dims {
        let k = self.structure.n_concepts();
        Dims {
            n_students: self.n_students(),
            n_exercises: self.structure.n_exercises(),
            n_concepts: k,
            text_dim: self.text_dim(),
            d: config.dim.unwrap_or(k),
        }
    }

    fn rows(t: &Tensor, idx: &[usize]) -> Tensor {
        let mut out = Tensor::zeros(idx.len(), t.cols());
        for (r, &i) in idx.iter().enumerate() {
            out.row_mut(r).copy_from_slice(t.row(i));
        }
        out
    }
}

#[derive(Clone, Debug)]
enum TextSide {
    Adaptor(Adaptor),
    Ids(ParamId),
}

#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    dims: Dims,
    store: ParamStore,
    student_text: Option<TextSide>,
    exercise_text: Option<TextSide>,
    encoder: Option<GraphEncoder>,
    exercise_id: Option<ParamId>,
    head: PredictHead,
}

impl Model {
    /// Freshly initialised model sized for `inputs`.
    pub fn new(config: &ModelConfig, inputs: &ModelInputs, seed: u64) -> Result<Self> {
        config.validate()?;
        let dims = inputs.dims(config);
        let concept_text = if config.uses_state() && config.state.concept_init == ConceptInit::Text {
            Some(
                inputs
                    .concept_text
                    .as_ref()
                    .ok_or_else(|| Error::Lookup("state.concept_init=text needs a vector for every concept".into()))?,
            )
        } else {
            None
        };
        Self::build(config, dims, seed, concept_text)
    }

    /// Model skeleton with the given sizes; parameter values are placeholders
    /// until replaced (used when restoring checkpoints).
    pub fn skeleton(config: &ModelConfig, dims: Dims) -> Result<Self> {
        config.validate()?;
        Self::build(config, dims, 0, None)
    }

    fn build(config: &ModelConfig, dims: Dims, seed: u64, concept_text: Option<&Tensor>) -> Result<Self> {
        let Dims {
            n_students,
            n_exercises,
            n_concepts,
            text_dim,
            d,
        } = dims;
        let mut store = ParamStore::new();
        let k = config.experts();
        let id_table = |store: &mut ParamStore, name: &str, rows: usize| {
            store.insert(name, xavier_init(rows, d, derive_seed(seed, name)))
        };
        let student_text = if !config.uses_student_text() {
            None
        } else if config.ablation.llm {
            Some(TextSide::Ids(id_table(&mut store, "text.student_id", n_students)))
        } else {
            Some(TextSide::Adaptor(Adaptor::register(
                &mut store,
                "text.student",
                text_dim,
                d,
                k,
                seed,
            )?))
        };
        let exercise_text = if !config.uses_exercise_text() {
            None
        } else if config.ablation.llm {
            Some(TextSide::Ids(id_table(&mut store, "text.exercise_id", n_exercises)))
        } else {
            Some(TextSide::Adaptor(Adaptor::register(
                &mut store,
                "text.exercise",
                text_dim,
                d,
                k,
                seed,
            )?))
        };
        let encoder = if config.uses_state() {
            let init = match (concept_text, &exercise_text) {
                (Some(ct), Some(TextSide::Adaptor(a))) => Some(a.apply(&store, ct)?),
                (Some(_), _) => {
                    return Err(Error::Config(
                        "state.concept_init=text needs the exercise text adaptor".into(),
                    ))
                }
                (None, _) => None,
            };
            Some(GraphEncoder::register(
                &mut store,
                &config.state,
                n_concepts,
                n_exercises,
                d,
                seed,
                init,
            )?)
        } else {
            None
        };
        let exercise_id = config
            .head
            .exercise_id
            .then(|| id_table(&mut store, "head.exercise_id", n_exercises));
        let head = PredictHead::register(&mut store, d, &config.head.hidden, config.head.dropout, seed)?;
        Ok(Self {
            config: config.clone(),
            dims,
            store,
            student_text,
            exercise_text,
            encoder,
            exercise_id,
            head,
        })
    }

    /// Scalar parameter count implied by a configuration, computed from the
    /// layer shapes rather than from a built model.
    pub fn expected_param_count(config: &ModelConfig, dims: Dims) -> usize {
        let Dims {
            n_students,
            n_exercises,
            n_concepts,
            text_dim,
            d,
        } = dims;
        let mut n = 0;
        let adaptor = Adaptor::param_count(text_dim, d, config.experts());
        if config.uses_student_text() {
            n += if config.ablation.llm { n_students * d } else { adaptor };
        }
        if config.uses_exercise_text() {
            n += if config.ablation.llm { n_exercises * d } else { adaptor };
        }
        if config.uses_state() {
            n += GraphEncoder::param_count(&config.state, n_concepts, n_exercises, d);
        }
        if config.head.exercise_id {
            n += n_exercises * d;
        }
        n + PredictHead::param_count(d, &config.head.hidden)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn encoder(&self) -> Option<&GraphEncoder> {
        self.encoder.as_ref()
    }

    fn check_batch(&self, inputs: &ModelInputs, students: &[usize], exercises: &[usize]) -> Result<()> {
        if students.len() != exercises.len() {
            return Err(Error::Shape {
                op: "forward",
                detail: format!("{} students for {} exercises", students.len(), exercises.len()),
            });
        }
        if inputs.dims(&self.config) != self.dims {
            return Err(Error::Shape {
                op: "forward",
                detail: format!("inputs {:?} vs model {:?}", inputs.dims(&self.config), self.dims),
            });
        }
        for &s in students {
            if s >= self.dims.n_students {
                return Err(Error::Lookup(format!("student index {s}")));
            }
            if self.encoder.is_some() && !inputs.has_history(s) {
                return Err(Error::Usage(format!("student {s} has an empty history")));
            }
            if matches!(self.student_text, Some(TextSide::Adaptor(_))) && !inputs.has_student_text(s) {
                return Err(Error::Lookup(format!("no text vector for student {s}")));
            }
        }
        for &q in exercises {
            if q >= self.dims.n_exercises {
                return Err(Error::Lookup(format!("exercise index {q}")));
            }
            if matches!(self.exercise_text, Some(TextSide::Adaptor(_))) && !inputs.has_exercise_text(q) {
                return Err(Error::Lookup(format!("no text vector for exercise {q}")));
            }
        }
        Ok(())
    }

    fn text(
        &self,
        side: &Option<TextSide>,
        tape: &mut Tape,
        p: &Bound,
        table: &Tensor,
        idx: &[usize],
    ) -> Result<Option<Var>> {
        match side {
            None => Ok(None),
            Some(TextSide::Ids(id)) => Ok(Some(tape.gather_rows(p[*id], idx.to_vec())?)),
            Some(TextSide::Adaptor(a)) => {
                let x = tape.constant(ModelInputs::rows(table, idx));
                Ok(Some(a.forward(tape, p, x)?))
            }
        }
    }

    /// Student representations `h_s` for a batch.
    pub fn student_repr(&self, tape: &mut Tape, p: &Bound, inputs: &ModelInputs, students: &[usize]) -> Result<Var> {
        let state = match &self.encoder {
            Some(enc) => {
                let ec = enc.concepts(tape, p, &inputs.structure)?;
                let eq = enc.exercises(tape, p, &inputs.structure)?;
                let pool = inputs.pool.select(students);
                Some(enc.state(tape, p, &pool, ec, eq)?)
            }
            None => None,
        };
        let text = self.text(&self.student_text, tape, p, &inputs.student_text, students)?;
        fuse_student(tape, text, state)
    }

    /// Exercise representations `h_q`; `None` when every part is disabled.
    pub fn exercise_repr(
        &self,
        tape: &mut Tape,
        p: &Bound,
        inputs: &ModelInputs,
        exercises: &[usize],
    ) -> Result<Option<Var>> {
        let text = self.text(&self.exercise_text, tape, p, &inputs.exercise_text, exercises)?;
        let id = match self.exercise_id {
            Some(id) => Some(tape.gather_rows(p[id], exercises.to_vec())?),
            None => None,
        };
        fuse_exercise(tape, text, id)
    }

    /// Predicted probabilities (`n × 1`) for the `(student, exercise)` pairs.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        p: &Bound,
        inputs: &ModelInputs,
        students: &[usize],
        exercises: &[usize],
        rng: &mut R,
    ) -> Result<Var> {
        self.check_batch(inputs, students, exercises)?;
        let h_s = self.student_repr(tape, p, inputs, students)?;
        let h_q = self.exercise_repr(tape, p, inputs, exercises)?;
        self.head.predict(tape, p, h_s, h_q, rng)
    }

    /// Eval-mode probabilities, computed in fixed-size chunks.
    pub fn predict(&self, inputs: &ModelInputs, students: &[usize], exercises: &[usize]) -> Result<Vec<f64>> {
        const CHUNK: usize = 4096;
        self.check_batch(inputs, students, exercises)?;
        let mut out = Vec::with_capacity(students.len());
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        for (s, q) in students.chunks(CHUNK).zip(exercises.chunks(CHUNK)) {
            let mut tape = Tape::new();
            let p = self.store.bind(&mut tape, false);
            let y = self.forward(&mut tape, &p, inputs, s, q, &mut rng)?;
            out.extend_from_slice(tape.value(y).data());
        }
        Ok(out)
    }

    /// Knowledge state `h_state` of the listed students (eval mode).
    pub fn knowledge_state(&self, inputs: &ModelInputs, students: &[usize]) -> Result<Option<Tensor>> {
        let Some(enc) = &self.encoder else {
            return Ok(None);
        };
        let mut tape = Tape::new();
        let p = self.store.bind(&mut tape, false);
        let ec = enc.concepts(&mut tape, &p, &inputs.structure)?;
        let eq = enc.exercises(&mut tape, &p, &inputs.structure)?;
        let pool = inputs.pool.select(students);
        let st = enc.state(&mut tape, &p, &pool, ec, eq)?;
        Ok(Some(tape.value(st).clone()))
    }
}
