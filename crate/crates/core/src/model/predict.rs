use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::features::Encoded;
use crate::schema::{join_parts, Label, TaskId, TaskSchema};

use super::head::Head;
use super::marginal::{check_width, marginalize_logits};
use super::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Inference {
    /// Argmax over joint labels, then decomposed per task.
    #[default]
    Direct,
    /// Per-task argmax over marginalized probabilities.
    Marginal,
}

impl FromStr for Inference {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "direct" => Ok(Inference::Direct),
            "marginal" => Ok(Inference::Marginal),
            other => Err(format!("unknown inference mode `{other}`")),
        }
    }
}

impl fmt::Display for Inference {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Inference::Direct => "direct",
            Inference::Marginal => "marginal",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prediction {
    pub labels: [Option<Label>; 3],
    /// Matching joint label index, `None` for an invalid marginal combination.
    pub joint: Option<usize>,
}

impl Prediction {
    pub fn label(&self, task: TaskId) -> Option<Label> {
        self.labels[task.index()]
    }

    pub fn is_consistent(&self) -> bool {
        self.joint.is_some()
    }

    /// Hyphen-joined labels over the schema tasks.
    pub fn name(&self) -> String {
        join_parts(&self.labels)
    }
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn predict_logits(
    z: &[f64],
    schema: &TaskSchema,
    inference: Inference,
) -> Result<Prediction, ModelError> {
    check_width(z, schema)?;
    match inference {
        Inference::Direct => {
            let k = argmax(z);
            Ok(Prediction {
                labels: schema.joint_labels()[k].parts(),
                joint: Some(k),
            })
        }
        Inference::Marginal => {
            let mut labels = [None; 3];
            for &t in schema.tasks() {
                let task_logits = marginalize_logits(z, schema, t)?;
                labels[t.index()] = Some(schema.alphabet(t)?[argmax(&task_logits)]);
            }
            Ok(Prediction {
                labels,
                joint: schema.joint_index_of(&labels),
            })
        }
    }
}

pub fn predict(
    head: &Head,
    x: &Encoded,
    schema: &TaskSchema,
    inference: Inference,
) -> Result<Prediction, ModelError> {
    let z = head.forward(x)?;
    predict_logits(&z, schema, inference)
}
