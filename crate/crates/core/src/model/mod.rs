//! Classification heads, marginalization, losses, inference and the model file.

pub mod head;
pub mod loss;
pub mod marginal;
pub mod predict;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::EncoderConfig;
use crate::schema::{SchemaError, TaskId, TaskSchema};

pub use head::Head;
pub use loss::{joint_loss, mtl_loss, objective, softmax_cross_entropy, LossBreakdown};
pub use marginal::{log_sum_exp, marginal_probabilities, marginalize_logits, softmax};
pub use predict::{argmax, predict, predict_logits, Inference, Prediction};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("{what} width mismatch: expected {expected}, found {found}")]
    Shape {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("gold index {gold} out of range for {classes} classes")]
    GoldIndex { gold: usize, classes: usize },
    #[error("task {task} label group {position} is empty")]
    EmptyGroup { task: TaskId, position: usize },
    #[error("example has no observed task for this schema")]
    EmptySupervision,
    #[error("gold labels `{0}` are not a valid combination for this schema")]
    InvalidGold(String),
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error("model file: {0}")]
    File(String),
}

/// Which loss a head is trained with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TrainingMode {
    /// One task, its own label alphabet.
    Single { task: TaskId },
    /// Joint labels only.
    Joint,
    /// Joint loss plus marginalized per-task losses.
    Multitask,
}

impl TrainingMode {
    pub fn short_name(&self) -> &'static str {
        match self {
            TrainingMode::Single { .. } => "S",
            TrainingMode::Joint => "D",
            TrainingMode::Multitask => "MTL",
        }
    }

    pub fn check_schema(&self, schema: &TaskSchema) -> Result<(), ModelError> {
        let ok = match self {
            TrainingMode::Single { task } => schema.tasks() == [*task],
            TrainingMode::Joint | TrainingMode::Multitask => schema.is_chain(),
        };
        if ok {
            Ok(())
        } else {
            Err(ModelError::File(format!(
                "mode {} does not fit a schema over tasks {:?}",
                self.short_name(),
                schema.tasks()
            )))
        }
    }
}

/// Mode plus the orthogonal multilingual (ALL) and back-translation (BT) flags.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModeFlags {
    pub mode: TrainingMode,
    pub all: bool,
    pub bt: bool,
}

impl ModeFlags {
    /// Variant tag such as `(MTL) (ALL) (D)`.
    pub fn tag(&self) -> String {
        let mut parts = Vec::new();
        match self.mode {
            TrainingMode::Single { .. } => parts.push("(S)"),
            TrainingMode::Joint => {}
            TrainingMode::Multitask => parts.push("(MTL)"),
        }
        if self.all {
            parts.push("(ALL)");
        }
        if self.bt {
            parts.push("(BT)");
        }
        if !matches!(self.mode, TrainingMode::Single { .. }) {
            parts.push("(D)");
        }
        parts.join(" ")
    }
}

pub const MODEL_VERSION: &str = "mtml-1";

/// Everything needed to run a trained head: schema, encoder and parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub version: String,
    pub schema: TaskSchema,
    pub encoder: EncoderConfig,
    pub mode: ModeFlags,
    pub head: Head,
}

impl ModelFile {
    pub fn new(schema: TaskSchema, encoder: EncoderConfig, mode: ModeFlags, head: Head) -> Self {
        ModelFile {
            version: MODEL_VERSION.to_string(),
            schema,
            encoder,
            mode,
            head,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.version != MODEL_VERSION {
            return Err(ModelError::File(format!(
                "unsupported version `{}`, expected `{MODEL_VERSION}`",
                self.version
            )));
        }
        self.mode.mode.check_schema(&self.schema)?;
        if self.head.classes() != self.schema.len() {
            return Err(ModelError::Shape {
                what: "head classes",
                expected: self.schema.len(),
                found: self.head.classes(),
            });
        }
        if self.head.input_width() != self.encoder.width() {
            return Err(ModelError::Shape {
                what: "head input",
                expected: self.encoder.width(),
                found: self.head.input_width(),
            });
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string(self).expect("model serializes");
        s.push('\n');
        s
    }

    pub fn from_json(s: &str) -> Result<Self, ModelError> {
        let model: ModelFile =
            serde_json::from_str(s).map_err(|e| ModelError::File(e.to_string()))?;
        model.validate()?;
        Ok(model)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| ModelError::File(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}
