//! Cross-entropy losses over joint and marginalized task logits.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::schema::{GoldLabels, TaskId, TaskSchema};

use super::marginal::{check_width, log_sum_exp, marginalize_logits, softmax};
use super::{ModelError, TrainingMode};

/// `ln Σ exp(z) - z[gold]` and its gradient `softmax(z) - onehot(gold)`.
pub fn softmax_cross_entropy(z: &[f64], gold: usize) -> Result<(f64, Vec<f64>), ModelError> {
    if gold >= z.len() {
        return Err(ModelError::GoldIndex {
            gold,
            classes: z.len(),
        });
    }
    let (argmax, max) =
        z.iter()
            .copied()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, v)| {
                if v > best.1 {
                    (i, v)
                } else {
                    best
                }
            });
    // Summing everything but the max term and using ln_1p keeps tiny losses
    // (confident, correct predictions) accurate.
    let rest: f64 = z
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != argmax)
        .map(|(_, &v)| (v - max).exp())
        .sum();
    let loss = (max - z[gold]) + rest.ln_1p();
    let mut grad = softmax(z);
    grad[gold] -= 1.0;
    Ok((loss, grad))
}

/// `-ln Σ_{k in set} softmax(z)_k`: cross-entropy against a set of
/// acceptable classes. Reduces to [`softmax_cross_entropy`] for one class.
pub fn set_cross_entropy(z: &[f64], set: &[usize]) -> Result<(f64, Vec<f64>), ModelError> {
    if let [only] = set {
        return softmax_cross_entropy(z, *only);
    }
    if set.is_empty() {
        return Err(ModelError::EmptySupervision);
    }
    if let Some(&bad) = set.iter().find(|&&k| k >= z.len()) {
        return Err(ModelError::GoldIndex {
            gold: bad,
            classes: z.len(),
        });
    }
    let inside: Vec<f64> = set.iter().map(|&k| z[k]).collect();
    let inner = log_sum_exp(&inside);
    let loss = log_sum_exp(z) - inner;
    let mut grad = softmax(z);
    for &k in set {
        grad[k] -= (z[k] - inner).exp();
    }
    Ok((loss.max(0.0), grad))
}

/// Cross-entropy of the marginalized task logits against the gold task
/// label, with the gradient pulled back onto the joint logits.
pub fn task_cross_entropy(
    z: &[f64],
    schema: &TaskSchema,
    task: TaskId,
    gold: crate::schema::Label,
) -> Result<(f64, Vec<f64>), ModelError> {
    let task_logits = marginalize_logits(z, schema, task)?;
    let gold_pos = schema.label_position(task, gold)?;
    let (loss, d_task) = softmax_cross_entropy(&task_logits, gold_pos)?;
    // d m_l / d z_k = exp(z_k - m_l) for k in group(l)
    let mut grad = vec![0.0; z.len()];
    for (pos, group) in schema.groups(task)?.iter().enumerate() {
        for &k in group {
            grad[k] = d_task[pos] * (z[k] - task_logits[pos]).exp();
        }
    }
    Ok((loss, grad))
}

/// Loss components for one example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    /// Joint-label loss; `None` when the joint label is unobserved.
    pub joint: Option<f64>,
    pub tasks: BTreeMap<TaskId, f64>,
    pub total: f64,
    #[serde(skip)]
    pub grad: Vec<f64>,
}

/// Joint cross-entropy plus one marginalized cross-entropy per observed task.
///
/// When some schema task is unobserved the joint term is skipped and only the
/// observed task terms remain.
pub fn mtl_loss(
    z: &[f64],
    gold: &GoldLabels,
    schema: &TaskSchema,
) -> Result<LossBreakdown, ModelError> {
    check_width(z, schema)?;
    let observed: Vec<_> = schema
        .tasks()
        .iter()
        .filter_map(|&t| gold.get(t).map(|l| (t, l)))
        .collect();
    if observed.is_empty() {
        return Err(ModelError::EmptySupervision);
    }
    let mut grad = vec![0.0; z.len()];
    let mut total = 0.0;
    let joint = match schema.joint_index_for(gold) {
        Some(k) => {
            let (loss, g) = softmax_cross_entropy(z, k)?;
            add_into(&mut grad, &g);
            total += loss;
            Some(loss)
        }
        None if observed.len() == schema.tasks().len() => {
            return Err(ModelError::InvalidGold(crate::schema::join_parts(
                &gold.parts(),
            )));
        }
        None => None,
    };
    let mut tasks = BTreeMap::new();
    for (t, label) in observed {
        let (loss, g) = task_cross_entropy(z, schema, t, label)?;
        add_into(&mut grad, &g);
        total += loss;
        tasks.insert(t, loss);
    }
    Ok(LossBreakdown {
        joint,
        tasks,
        total,
        grad,
    })
}

/// Joint-label loss; unobserved tasks are summed out of the target set.
pub fn joint_loss(
    z: &[f64],
    gold: &GoldLabels,
    schema: &TaskSchema,
) -> Result<LossBreakdown, ModelError> {
    check_width(z, schema)?;
    if schema.tasks().iter().all(|&t| gold.get(t).is_none()) {
        return Err(ModelError::EmptySupervision);
    }
    let set = schema.compatible_indices(gold);
    if set.is_empty() {
        return Err(ModelError::InvalidGold(crate::schema::join_parts(
            &gold.parts(),
        )));
    }
    let (loss, grad) = set_cross_entropy(z, &set)?;
    Ok(LossBreakdown {
        joint: Some(loss),
        tasks: BTreeMap::new(),
        total: loss,
        grad,
    })
}

/// Training objective of `mode`.
pub fn objective(
    mode: TrainingMode,
    z: &[f64],
    gold: &GoldLabels,
    schema: &TaskSchema,
) -> Result<LossBreakdown, ModelError> {
    match mode {
        TrainingMode::Multitask => mtl_loss(z, gold, schema),
        TrainingMode::Joint | TrainingMode::Single { .. } => joint_loss(z, gold, schema),
    }
}

fn add_into(acc: &mut [f64], g: &[f64]) {
    for (a, b) in acc.iter_mut().zip(g) {
        *a += b;
    }
}
