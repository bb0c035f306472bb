//! Log-space marginalization of joint logits onto task labels.
//!
//! A task logit is the log-sum-exp of the joint logits in its group, so
//! `softmax(task_logits)` equals the group sums of `softmax(joint_logits)`
//! without ever forming the partition function.

use crate::schema::{TaskId, TaskSchema};

use super::ModelError;

/// `ln Σ exp(x)` with max-shift; `-inf` for an empty slice.
pub fn log_sum_exp(x: &[f64]) -> f64 {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + x.iter().map(|&v| (v - max).exp()).sum::<f64>().ln()
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Task-level logits for `task`, one per label of the task alphabet.
pub fn marginalize_logits(
    z: &[f64],
    schema: &TaskSchema,
    task: TaskId,
) -> Result<Vec<f64>, ModelError> {
    check_width(z, schema)?;
    schema
        .groups(task)?
        .iter()
        .enumerate()
        .map(|(pos, group)| {
            if group.is_empty() {
                return Err(ModelError::EmptyGroup {
                    task,
                    position: pos,
                });
            }
            let members: Vec<f64> = group.iter().map(|&k| z[k]).collect();
            Ok(log_sum_exp(&members))
        })
        .collect()
}

/// Marginal task probabilities, `softmax(marginalize_logits(z))`.
pub fn marginal_probabilities(
    z: &[f64],
    schema: &TaskSchema,
    task: TaskId,
) -> Result<Vec<f64>, ModelError> {
    Ok(softmax(&marginalize_logits(z, schema, task)?))
}

pub(crate) fn check_width(z: &[f64], schema: &TaskSchema) -> Result<(), ModelError> {
    if z.len() == schema.len() {
        Ok(())
    } else {
        Err(ModelError::Shape {
            what: "logits",
            expected: schema.len(),
            found: z.len(),
        })
    }
}
