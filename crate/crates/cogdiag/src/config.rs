//! Model and training configuration.
//!
//! Configs are JSON documents. Individual keys can be overridden with dotted
//! paths such as `moe.k=2` or `train.lr=0.005`; the value is parsed as JSON
//! and falls back to a bare string.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::autodiff::{AdamWConfig, Reduction};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MoeConfig {
    /// Number of experts.
    pub k: usize,
    /// `false` replaces the mixture with one linear map per side.
    pub enabled: bool,
}

impl Default for MoeConfig {
    fn default() -> Self {
        Self { k: 4, enabled: true }
    }
}

/// Query vector used when attending over an exercise's concepts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionQuery {
    /// Mean base vector of the exercise's concepts.
    ConceptMean,
    /// The exercise's own base vector.
    Exercise,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConceptInit {
    Xavier,
    /// Adapted concept text vectors from the freshly initialised exercise adaptor.
    Text,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StateConfig {
    pub enabled: bool,
    /// `false` swaps attention for a linear map over the unweighted neighbour mean.
    pub gat: bool,
    pub heads: usize,
    pub layers: usize,
    pub query: AttentionQuery,
    pub concept_init: ConceptInit,
}

impl Default for StateConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            gat: true,
            heads: 1,
            layers: 1,
            query: AttentionQuery::ConceptMean,
            concept_init: ConceptInit::Xavier,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeadConfig {
    pub hidden: Vec<usize>,
    pub dropout: f64,
    /// Adds the learnable exercise ID row to the exercise representation.
    pub exercise_id: bool,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            hidden: vec![256, 128],
            dropout: 0.5,
            exercise_id: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TextConfig {
    pub student: bool,
    pub exercise: bool,
}

impl Default for TextConfig {
    fn default() -> Self {
        Self {
            student: true,
            exercise: true,
        }
    }
}

/// Component removals for ablation runs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    /// Drop the text representations on both sides.
    pub text: bool,
    /// Drop the pooled knowledge state.
    pub state: bool,
    /// Replace text vectors with learnable ID embeddings.
    pub llm: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Model dimension; defaults to the number of concepts.
    pub dim: Option<usize>,
    pub moe: MoeConfig,
    pub state: StateConfig,
    pub head: HeadConfig,
    pub text: TextConfig,
    pub ablation: AblationConfig,
}

impl ModelConfig {
    pub fn hash(&self) -> String {
        short_hash(self)
    }

    pub fn uses_state(&self) -> bool {
        self.state.enabled && !self.ablation.state
    }

    pub fn uses_student_text(&self) -> bool {
        !self.ablation.text && self.text.student
    }

    pub fn uses_exercise_text(&self) -> bool {
        !self.ablation.text && self.text.exercise
    }

    /// Expert count, or `None` for the single-linear adaptor.
    pub fn experts(&self) -> Option<usize> {
        self.moe.enabled.then_some(self.moe.k)
    }

    pub fn validate(&self) -> Result<()> {
        if self.moe.enabled && self.moe.k == 0 {
            return Err(Error::Config("moe.k must be at least 1".into()));
        }
        if self.uses_state() && (self.state.heads == 0 || self.state.layers == 0) {
            return Err(Error::Config("state.heads and state.layers must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.head.dropout) {
            return Err(Error::Config(format!(
                "head.dropout {} outside [0, 1)",
                self.head.dropout
            )));
        }
        if self.head.hidden.contains(&0) {
            return Err(Error::Config("head.hidden sizes must be positive".into()));
        }
        if self.dim == Some(0) {
            return Err(Error::Config("dim must be positive".into()));
        }
        if !self.uses_student_text() && !self.uses_state() {
            return Err(Error::Config("student representation would be empty".into()));
        }
        if self.uses_state()
            && self.state.concept_init == ConceptInit::Text
            && (self.ablation.llm || self.ablation.text)
        {
            return Err(Error::Config("state.concept_init=text needs the text adaptor".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Epochs without validation-AUC improvement before stopping.
    pub patience: usize,
    pub reduction: Reduction,
    /// Multiplicative learning-rate decay applied after every epoch.
    pub lr_decay: f64,
    pub optimizer: AdamWConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch_size: 400,
            epochs: 30,
            seed: 0,
            patience: 5,
            reduction: Reduction::Sum,
            lr_decay: 1.0,
            optimizer: AdamWConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("train.lr must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config(
                "train.batch_size and train.epochs must be positive".into(),
            ));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Config(format!(
                "train.lr_decay {} outside (0, 1]",
                self.lr_decay
            )));
        }
        Ok(())
    }
}

/// Everything needed to reproduce a run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    #[serde(flatten)]
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Config {
    pub fn from_json(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text)?;
        check_keys(&value, &serde_json::to_value(Config::default())?, "")?;
        serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Applies a `dotted.key=value` override.
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let (path, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
        let new: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_owned()));
        let mut doc = serde_json::to_value(&*self)?;
        let mut slot = &mut doc;
        for part in path.split('.') {
            slot = slot
                .as_object_mut()
                .and_then(|o| o.get_mut(part))
                .ok_or_else(|| Error::Config(format!("unknown config key `{path}`")))?;
        }
        *slot = new;
        *self = serde_json::from_value(doc).map_err(|e| Error::Config(format!("{path}: {e}")))?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        short_hash(self)
    }
}

/// First 16 hex digits of the SHA-256 of the value's JSON form.
fn short_hash<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_string(value).expect("config serialises");
    Sha256::digest(json.as_bytes())[..8]
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Rejects keys absent from the default document. `dim` may be null by
/// default, so anything under a null default is accepted.
fn check_keys(value: &Value, reference: &Value, prefix: &str) -> Result<()> {
    if let (Value::Object(v), Value::Object(r)) = (value, reference) {
        for (k, sub) in v {
            let path = if prefix.is_empty() {
                k.clone()
            } else {
                format!("{prefix}.{k}")
            };
            match r.get(k) {
                None => return Err(Error::Config(format!("unknown config key `{path}`"))),
                Some(rsub) => check_keys(sub, rsub, &path)?,
            }
        }
    }
    Ok(())
}
