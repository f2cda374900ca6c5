//! Mini-batch training with AdamW and early stopping on validation AUC.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{derive_seed, AdamW, Bound, ParamStore, Tape, Var};
use crate::checkpoint::round_to_f32;
use crate::config::TrainConfig;
use crate::data::InteractionLog;
use crate::error::{Error, Result};
use crate::metrics::{auc, Metrics};
use crate::model::{Model, ModelInputs};

/// A model that predicts response probabilities for `(student, exercise)`
/// index pairs given some constant context.
pub trait Trainable: Clone {
    type Ctx: ?Sized;

    fn params(&self) -> &ParamStore;

    fn params_mut(&mut self) -> &mut ParamStore;

    /// Probabilities (`n × 1`) recorded on `tape`.
    fn forward(
        &self,
        ctx: &Self::Ctx,
        tape: &mut Tape,
        p: &Bound,
        students: &[usize],
        exercises: &[usize],
        rng: &mut ChaCha8Rng,
    ) -> Result<Var>;

    fn predict(&self, ctx: &Self::Ctx, students: &[usize], exercises: &[usize]) -> Result<Vec<f64>>;
}

impl Trainable for Model {
    type Ctx = ModelInputs;

    fn params(&self) -> &ParamStore {
        Model::params(self)
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        Model::params_mut(self)
    }

    fn forward(
        &self,
        ctx: &ModelInputs,
        tape: &mut Tape,
        p: &Bound,
        students: &[usize],
        exercises: &[usize],
        rng: &mut ChaCha8Rng,
    ) -> Result<Var> {
        Model::forward(self, tape, p, ctx, students, exercises, rng)
    }

    fn predict(&self, ctx: &ModelInputs, students: &[usize], exercises: &[usize]) -> Result<Vec<f64>> {
        Model::predict(self, ctx, students, exercises)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    /// Mean per-interaction loss over the epoch's training batches.
    pub train_loss: f64,
    pub valid: Option<Metrics>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<M> {
    /// Parameters of the best validation epoch, rounded to checkpoint precision.
    pub best: M,
    pub best_epoch: usize,
    pub best_valid_auc: Option<f64>,
    pub epochs: Vec<EpochLog>,
    pub stopped_early: bool,
    /// Eval-mode mean loss on the training set before the first update and
    /// for the returned parameters.
    pub initial_loss: f64,
    pub final_loss: f64,
    pub skipped_updates: usize,
}

/// `(students, exercises, labels)` for a set of interaction indices.
pub fn columns(log: &InteractionLog, idx: &[usize]) -> (Vec<usize>, Vec<usize>, Vec<f64>) {
    let its = log.interactions();
    (
        idx.iter().map(|&i| its[i].student).collect(),
        idx.iter().map(|&i| its[i].exercise).collect(),
        idx.iter().map(|&i| f64::from(its[i].response)).collect(),
    )
}

fn mean_loss<M: Trainable>(model: &M, ctx: &M::Ctx, log: &InteractionLog, idx: &[usize]) -> Result<f64> {
    let (s, q, y) = columns(log, idx);
    let pred = model.predict(ctx, &s, &q)?;
    Ok(pred
        .iter()
        .zip(&y)
        .map(|(&p, &r)| crate::autodiff::bce(p, r))
        .sum::<f64>()
        / y.len() as f64)
}

fn validation_auc<M: Trainable>(
    model: &M,
    ctx: &M::Ctx,
    log: &InteractionLog,
    idx: &[usize],
) -> Result<Option<Metrics>> {
    if idx.is_empty() {
        return Ok(None);
    }
    let (s, q, y) = columns(log, idx);
    let pred = model.predict(ctx, &s, &q)?;
    match auc(&pred, &y) {
        Ok(_) => Ok(Some(crate::metrics::evaluate(&pred, &y)?)),
        Err(Error::UndefinedMetric(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Trains `model` on the `train` interactions, keeping the parameters with
/// the best validation AUC. Without a usable validation set the last epoch
/// is kept.
pub fn train<M: Trainable>(
    mut model: M,
    ctx: &M::Ctx,
    log: &InteractionLog,
    train_idx: &[usize],
    valid_idx: &[usize],
    cfg: &TrainConfig,
) -> Result<TrainOutcome<M>> {
    cfg.validate()?;
    if train_idx.is_empty() {
        return Err(Error::Usage("empty training set".into()));
    }
    let mut order_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "train.order"));
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "train.dropout"));
    let mut opt = AdamW::new(model.params(), cfg.optimizer.clone());
    let initial_loss = mean_loss(&model, ctx, log, train_idx)?;
    let mut lr = cfg.lr;
    let mut order = train_idx.to_vec();
    let mut epochs = Vec::new();
    let mut best: Option<(M, usize, Option<f64>)> = None;
    let mut since_best = 0;
    let mut stopped_early = false;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut order_rng);
        let mut total = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let (s, q, y) = columns(log, batch);
            let diverged = |e: Error| match e {
                Error::Numeric { op, node } => {
                    log::error!("non-finite value in `{op}` (node {node}) at epoch {epoch}, batch {b}");
                    Error::Diverged { epoch, batch: b }
                }
                other => other,
            };
            let mut tape = Tape::training();
            let p = model.params().bind(&mut tape, true);
            let pred = model
                .forward(ctx, &mut tape, &p, &s, &q, &mut dropout_rng)
                .map_err(diverged)?;
            let loss = tape.bce_loss(pred, &y, cfg.reduction).map_err(diverged)?;
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(Error::Diverged { epoch, batch: b });
            }
            total += match cfg.reduction {
                crate::autodiff::Reduction::Sum => value,
                crate::autodiff::Reduction::Mean => value * y.len() as f64,
            };
            tape.backward(loss)?;
            let grads = model.params().grads(&tape, &p);
            opt.step(model.params_mut(), &grads, lr);
        }
        let valid = validation_auc(&model, ctx, log, valid_idx)?;
        let train_loss = total / order.len() as f64;
        log::info!(
            "epoch {epoch}: lr {lr:.2e} train loss {train_loss:.5} valid auc {}",
            valid.map_or("-".to_owned(), |m| format!("{:.4}", m.auc))
        );
        epochs.push(EpochLog {
            epoch,
            lr,
            train_loss,
            valid,
        });
        let score = valid.map(|m| m.auc);
        let improved = match (&best, score) {
            (None, _) => true,
            (Some((_, _, Some(b))), Some(s)) => s > *b,
            (Some((_, _, None)), _) => true,
            (Some(_), None) => true,
        };
        if improved {
            let mut snapshot = model.clone();
            round_to_f32(snapshot.params_mut());
            best = Some((snapshot, epoch, score));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                stopped_early = epoch < cfg.epochs;
                break;
            }
        }
        lr *= cfg.lr_decay;
    }

    let (best, best_epoch, best_valid_auc) = best.expect("at least one epoch ran");
    let final_loss = mean_loss(&best, ctx, log, train_idx)?;
    Ok(TrainOutcome {
        best,
        best_epoch,
        best_valid_auc,
        epochs,
        stopped_early,
        initial_loss,
        final_loss,
        skipped_updates: opt.skipped(),
    })
}
