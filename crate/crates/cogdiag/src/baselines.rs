//! ID-based baselines: one-parameter IRT and inner-product matrix
//! factorisation, optionally enriched with adapted text vectors.
//!
//! With text injection each latent vector becomes the sum of its ID
//! embedding and the adaptor output for the entity's text vector.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{derive_seed, xavier_init, Bound, ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::model::ModelInputs;
use crate::moe::Adaptor;
use crate::train::Trainable;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    /// `σ(θ_s − b_q)`.
    Irt,
    /// `σ(u_s · v_q)`.
    Mf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub kind: BaselineKind,
    /// Latent size for MF; IRT always uses 1.
    pub dim: usize,
    /// Add adapted text vectors to the ID embeddings.
    pub text: bool,
    /// Adaptor experts; `None` for a single linear map.
    pub experts: Option<usize>,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            kind: BaselineKind::Mf,
            dim: 20,
            text: false,
            experts: Some(4),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Baseline {
    config: BaselineConfig,
    store: ParamStore,
    student_id: ParamId,
    exercise_id: ParamId,
    text: Option<(Adaptor, Adaptor)>,
}

impl Baseline {
    pub fn new(
        config: &BaselineConfig,
        n_students: usize,
        n_exercises: usize,
        text_dim: usize,
        seed: u64,
    ) -> Result<Self> {
        let d = match config.kind {
            BaselineKind::Irt => 1,
            BaselineKind::Mf => config.dim,
        };
        if d == 0 {
            return Err(Error::Config("baseline dim must be positive".into()));
        }
        let mut store = ParamStore::new();
        let student_id = store.insert(
            "base.student",
            xavier_init(n_students, d, derive_seed(seed, "base.student")),
        );
        let exercise_id = store.insert(
            "base.exercise",
            xavier_init(n_exercises, d, derive_seed(seed, "base.exercise")),
        );
        let text = if config.text {
            Some((
                Adaptor::register(&mut store, "base.text.student", text_dim, d, config.experts, seed)?,
                Adaptor::register(&mut store, "base.text.exercise", text_dim, d, config.experts, seed)?,
            ))
        } else {
            None
        };
        Ok(Self {
            config: config.clone(),
            store,
            student_id,
            exercise_id,
            text,
        })
    }

    pub fn config(&self) -> &BaselineConfig {
        &self.config
    }

    fn latent(
        &self,
        tape: &mut Tape,
        p: &Bound,
        ids: ParamId,
        idx: &[usize],
        text: Option<(&Adaptor, Tensor)>,
    ) -> Result<Var> {
        let id = tape.gather_rows(p[ids], idx.to_vec())?;
        match text {
            None => Ok(id),
            Some((a, rows)) => {
                let x = tape.constant(rows);
                let t = a.forward(tape, p, x)?;
                tape.add(id, t)
            }
        }
    }

    fn probs(
        &self,
        tape: &mut Tape,
        p: &Bound,
        ctx: &ModelInputs,
        students: &[usize],
        exercises: &[usize],
    ) -> Result<Var> {
        if students.len() != exercises.len() {
            return Err(Error::Shape {
                op: "baseline",
                detail: format!("{} students for {} exercises", students.len(), exercises.len()),
            });
        }
        let (st, et) = match &self.text {
            Some((a, b)) => (
                Some((a, ctx.student_text_rows(students))),
                Some((b, ctx.exercise_text_rows(exercises))),
            ),
            None => (None, None),
        };
        let u = self.latent(tape, p, self.student_id, students, st)?;
        let v = self.latent(tape, p, self.exercise_id, exercises, et)?;
        let logit = match self.config.kind {
            BaselineKind::Irt => tape.sub(u, v)?,
            BaselineKind::Mf => {
                let prod = tape.mul(u, v)?;
                let ones = tape.constant(Tensor::from_vec(self.config.dim, 1, vec![1.0; self.config.dim])?);
                tape.matmul(prod, ones)?
            }
        };
        tape.sigmoid(logit)
    }
}

impl Trainable for Baseline {
    type Ctx = ModelInputs;

    fn params(&self) -> &ParamStore {
        &self.store
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn forward(
        &self,
        ctx: &ModelInputs,
        tape: &mut Tape,
        p: &Bound,
        students: &[usize],
        exercises: &[usize],
        _rng: &mut ChaCha8Rng,
    ) -> Result<Var> {
        self.probs(tape, p, ctx, students, exercises)
    }

    fn predict(&self, ctx: &ModelInputs, students: &[usize], exercises: &[usize]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let p = self.store.bind(&mut tape, false);
        let y = self.probs(&mut tape, &p, ctx, students, exercises)?;
        Ok(tape.value(y).data().to_vec())
    }
}
