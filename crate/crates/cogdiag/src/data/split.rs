use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::InteractionLog;
use crate::error::{Error, Result};

const TRAIN_FRACTION: f64 = 0.7;
const VALID_FRACTION: f64 = 0.1;
const HOLD_OUT_FRACTION: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    /// Global 70/10/20 shuffle of interactions.
    Standard,
    /// 20% of students never seen in training.
    NewStudent,
    /// 20% of exercises never seen in training.
    NewExercise,
}

/// Disjoint interaction index sets. All index lists are sorted.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub mode: SplitMode,
    pub seed: u64,
    /// Number of leading records given as evaluation history (new-student mode).
    pub history_len: Option<usize>,
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
    /// Evaluation-time histories of held-out students.
    pub history: Vec<usize>,
    /// Held-out students or exercises, depending on the mode.
    pub held_out: Vec<usize>,
    /// Held-out students with too few records for the requested history.
    pub skipped_students: Vec<usize>,
}

impl DatasetSplit {
    /// Short human-readable description used in reports.
    pub fn describe(&self) -> String {
        match (self.mode, self.history_len) {
            (SplitMode::NewStudent, Some(k)) => format!("new_student(k={k}, seed={})", self.seed),
            (SplitMode::NewExercise, _) => format!("new_exercise(seed={})", self.seed),
            _ => format!("standard(seed={})", self.seed),
        }
    }
}

fn shuffled(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut v: Vec<usize> = (0..n).collect();
    v.shuffle(rng);
    v
}

/// Splits the remaining (non-test) interactions 7:1 into train and valid,
/// mirroring the 70/10 ratio of the standard split.
fn train_valid(mut pool: Vec<usize>, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    pool.shuffle(rng);
    let n_valid = (pool.len() as f64 * VALID_FRACTION / (TRAIN_FRACTION + VALID_FRACTION)).round() as usize;
    let mut valid = pool.split_off(pool.len() - n_valid);
    pool.sort_unstable();
    valid.sort_unstable();
    (pool, valid)
}

pub fn make_split(
    log: &InteractionLog,
    mode: SplitMode,
    seed: u64,
    history_len: Option<usize>,
) -> Result<DatasetSplit> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = log.len();
    let mut split = DatasetSplit {
        mode,
        seed,
        history_len: None,
        train: Vec::new(),
        valid: Vec::new(),
        test: Vec::new(),
        history: Vec::new(),
        held_out: Vec::new(),
        skipped_students: Vec::new(),
    };
    match mode {
        SplitMode::Standard => {
            let order = shuffled(n, &mut rng);
            let n_train = (n as f64 * TRAIN_FRACTION).round() as usize;
            let n_valid = (n as f64 * VALID_FRACTION).round() as usize;
            split.train = order[..n_train].to_vec();
            split.valid = order[n_train..n_train + n_valid].to_vec();
            split.test = order[n_train + n_valid..].to_vec();
        }
        SplitMode::NewStudent => {
            let k = history_len
                .filter(|&k| k > 0)
                .ok_or_else(|| Error::Usage("new-student split needs a positive history length".into()))?;
            split.history_len = Some(k);
            let order = shuffled(log.n_students(), &mut rng);
            let n_hold = (log.n_students() as f64 * HOLD_OUT_FRACTION).round() as usize;
            let mut held = order[..n_hold].to_vec();
            held.sort_unstable();
            let mut is_held = vec![false; log.n_students()];
            for &s in &held {
                is_held[s] = true;
                let records = log.student_interactions(s);
                if records.len() <= k {
                    split.skipped_students.push(s);
                    continue;
                }
                split.history.extend_from_slice(&records[..k]);
                split.test.extend_from_slice(&records[k..]);
            }
            if !split.skipped_students.is_empty() {
                log::warn!(
                    "{} held-out students have at most {k} records and were skipped",
                    split.skipped_students.len()
                );
            }
            let pool: Vec<usize> = (0..n).filter(|&i| !is_held[log.interactions()[i].student]).collect();
            (split.train, split.valid) = train_valid(pool, &mut rng);
            split.held_out = held;
        }
        SplitMode::NewExercise => {
            let order = shuffled(log.n_exercises(), &mut rng);
            let n_hold = (log.n_exercises() as f64 * HOLD_OUT_FRACTION).round() as usize;
            let mut held = order[..n_hold].to_vec();
            held.sort_unstable();
            let mut is_held = vec![false; log.n_exercises()];
            for &q in &held {
                is_held[q] = true;
            }
            let (test, pool): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| is_held[log.interactions()[i].exercise]);
            split.test = test;
            (split.train, split.valid) = train_valid(pool, &mut rng);
            split.held_out = held;
        }
    }
    split.train.sort_unstable();
    split.valid.sort_unstable();
    split.test.sort_unstable();
    split.history.sort_unstable();
    Ok(split)
}
