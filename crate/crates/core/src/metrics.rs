//! Per-label precision/recall/F1, macro and weighted F1, confusion matrices
//! and prediction scoring.
//!
//! Zero-division convention: precision, recall and F1 are 0 whenever their
//! denominator is 0. Macro F1 averages over the scoring labels that occur in
//! the gold or the predicted sequence, so a label that is neither gold nor
//! predicted does not drag the average down, while a predicted-but-absent
//! label counts with F1 = 0.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{self, BufRead, Write};
use std::str::FromStr;

use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::corpus::Corpus;
use crate::model::Prediction;
use crate::schema::{Label, SchemaError, TaskId, TaskSchema};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("gold has {gold} labels but predictions have {pred}")]
    LengthMismatch { gold: usize, pred: usize },
    #[error("gold label {0} is outside the scoring labels")]
    UnscoredGold(Label),
    #[error("missing predictions for ids: {}", .0.join(", "))]
    MissingIds(Vec<String>),
    #[error("duplicate prediction ids: {}", .0.join(", "))]
    DuplicateIds(Vec<String>),
    #[error("prediction for `{id}`: {source}")]
    BadPrediction {
        id: String,
        #[source]
        source: SchemaError,
    },
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Schema(#[from] SchemaError),
}

/// Which rows and labels count when scoring tasks B and C.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Scope {
    /// Only rows whose gold B/C label is not `NONE`; `NONE` is not a scoring label.
    #[default]
    Hateful,
    /// Every labelled row, `NONE` scored like any other label.
    Padded,
}

impl FromStr for Scope {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "hateful" => Ok(Scope::Hateful),
            "padded" => Ok(Scope::Padded),
            other => Err(format!(
                "unknown scope `{other}` (expected hateful or padded)"
            )),
        }
    }
}

fn round6<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_f64((v * 1e6).round() / 1e6)
}

/// Square count matrix; rows are gold labels, columns predicted labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<Label>,
    pub counts: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    pub fn new(labels: Vec<Label>) -> Self {
        let n = labels.len();
        ConfusionMatrix {
            labels,
            counts: vec![vec![0; n]; n],
        }
    }

    fn position(&self, label: Label) -> Option<usize> {
        self.labels.iter().position(|&l| l == label)
    }

    pub fn add(&mut self, gold: Label, pred: Label) {
        let (g, p) = (self.position(gold).unwrap(), self.position(pred).unwrap());
        self.counts[g][p] += 1;
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn get(&self, gold: Label, pred: Label) -> usize {
        match (self.position(gold), self.position(pred)) {
            (Some(g), Some(p)) => self.counts[g][p],
            _ => 0,
        }
    }

    pub fn true_positives(&self, label: Label) -> usize {
        self.get(label, label)
    }

    /// Gold count of `label`.
    pub fn support(&self, label: Label) -> usize {
        self.position(label)
            .map_or(0, |i| self.counts[i].iter().sum())
    }

    pub fn predicted(&self, label: Label) -> usize {
        self.position(label)
            .map_or(0, |j| self.counts.iter().map(|row| row[j]).sum())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabelScores {
    pub label: Label,
    #[serde(serialize_with = "round6")]
    pub precision: f64,
    #[serde(serialize_with = "round6")]
    pub recall: f64,
    #[serde(serialize_with = "round6")]
    pub f1: f64,
    pub support: usize,
    pub predicted: usize,
}

impl LabelScores {
    /// Whether the label takes part in macro averaging.
    pub fn is_active(&self) -> bool {
        self.support > 0 || self.predicted > 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskReport {
    pub examples: usize,
    #[serde(serialize_with = "round6")]
    pub weighted_f1: f64,
    #[serde(serialize_with = "round6")]
    pub macro_f1: f64,
    pub per_label: Vec<LabelScores>,
    pub confusion: ConfusionMatrix,
}

impl TaskReport {
    pub fn label(&self, label: Label) -> Option<&LabelScores> {
        self.per_label.iter().find(|s| s.label == label)
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Scores one task. `labels` are the scoring labels in report order; every
/// gold label must be one of them, predictions may fall outside.
pub fn f1_scores(
    gold: &[Label],
    pred: &[Label],
    labels: &[Label],
) -> Result<TaskReport, MetricsError> {
    if gold.len() != pred.len() {
        return Err(MetricsError::LengthMismatch {
            gold: gold.len(),
            pred: pred.len(),
        });
    }
    if let Some(&g) = gold.iter().find(|g| !labels.contains(g)) {
        return Err(MetricsError::UnscoredGold(g));
    }
    let mut all: Vec<Label> = labels.to_vec();
    for &p in pred {
        if !all.contains(&p) {
            all.push(p);
        }
    }
    let mut confusion = ConfusionMatrix::new(all);
    for (&g, &p) in gold.iter().zip(pred) {
        confusion.add(g, p);
    }

    let per_label: Vec<LabelScores> = labels
        .iter()
        .map(|&label| {
            let tp = confusion.true_positives(label);
            let support = confusion.support(label);
            let predicted = confusion.predicted(label);
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, support);
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            LabelScores {
                label,
                precision,
                recall,
                f1,
                support,
                predicted,
            }
        })
        .collect();

    let active: Vec<&LabelScores> = per_label.iter().filter(|s| s.is_active()).collect();
    let macro_f1 = if active.is_empty() {
        0.0
    } else {
        active.iter().map(|s| s.f1).sum::<f64>() / active.len() as f64
    };
    let total_support: usize = per_label.iter().map(|s| s.support).sum();
    let weighted_f1 = if total_support == 0 {
        0.0
    } else {
        per_label
            .iter()
            .map(|s| s.support as f64 * s.f1)
            .sum::<f64>()
            / total_support as f64
    };
    Ok(TaskReport {
        examples: gold.len(),
        weighted_f1,
        macro_f1,
        per_label,
        confusion,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub scope: Scope,
    pub tasks: BTreeMap<TaskId, TaskReport>,
}

impl MetricsReport {
    pub fn task(&self, task: TaskId) -> Option<&TaskReport> {
        self.tasks.get(&task)
    }

    /// Pretty JSON with fixed key order and scores rounded to 6 decimals.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

/// Scoring labels for `task` under `scope`.
pub fn scoring_labels(
    schema: &TaskSchema,
    task: TaskId,
    scope: Scope,
) -> Result<Vec<Label>, MetricsError> {
    Ok(schema
        .alphabet(task)?
        .iter()
        .copied()
        .filter(|&l| !(scope == Scope::Hateful && task != TaskId::A && l == Label::NONE))
        .collect())
}

/// Scores per-task predictions against a gold corpus. `predicted` maps id to
/// the per-task labels, e.g. parsed from a predictions file.
pub fn score_labels(
    gold: &Corpus,
    predicted: &HashMap<String, [Option<Label>; 3]>,
    schema: &TaskSchema,
    scope: Scope,
) -> Result<MetricsReport, MetricsError> {
    let missing: Vec<String> = gold
        .examples
        .iter()
        .filter(|e| !predicted.contains_key(&e.id))
        .map(|e| e.id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(MetricsError::MissingIds(missing));
    }
    let mut tasks = BTreeMap::new();
    for &task in schema.tasks() {
        let labels = scoring_labels(schema, task, scope)?;
        let mut g = Vec::new();
        let mut p = Vec::new();
        for ex in &gold.examples {
            let Some(gold_label) = ex.gold.get(task) else {
                continue;
            };
            if scope == Scope::Hateful && task != TaskId::A && gold_label == Label::NONE {
                continue;
            }
            let Some(pred_label) = predicted[&ex.id][task.index()] else {
                continue;
            };
            g.push(gold_label);
            p.push(pred_label);
        }
        tasks.insert(task, f1_scores(&g, &p, &labels)?);
    }
    Ok(MetricsReport { scope, tasks })
}

/// Scores `(id, label string)` rows, the string being a joint label or a
/// single task label depending on the schema.
pub fn score_predictions(
    gold: &Corpus,
    predictions: &[(String, String)],
    schema: &TaskSchema,
    scope: Scope,
) -> Result<MetricsReport, MetricsError> {
    let mut parsed = HashMap::with_capacity(predictions.len());
    let mut duplicates = BTreeSet::new();
    for (id, label) in predictions {
        let parts = schema
            .parse_parts(label)
            .map_err(|source| MetricsError::BadPrediction {
                id: id.clone(),
                source,
            })?;
        if parsed.insert(id.clone(), parts).is_some() {
            duplicates.insert(id.clone());
        }
    }
    if !duplicates.is_empty() {
        return Err(MetricsError::DuplicateIds(duplicates.into_iter().collect()));
    }
    score_labels(gold, &parsed, schema, scope)
}

/// Reads `text_id<TAB>label[<TAB>...]` rows; a leading `text_id` header is skipped.
pub fn read_predictions<R: BufRead>(reader: R) -> Result<Vec<(String, String)>, MetricsError> {
    let mut rows = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() || (i == 0 && line.starts_with("text_id\t")) {
            continue;
        }
        let mut fields = line.split('\t');
        match (fields.next(), fields.next()) {
            (Some(id), Some(label)) if !id.is_empty() => {
                rows.push((id.to_string(), label.to_string()))
            }
            _ => {
                return Err(MetricsError::Format {
                    line: i + 1,
                    message: "expected `text_id<TAB>label`".into(),
                })
            }
        }
    }
    Ok(rows)
}

/// Writes predictions as `text_id, joint_label, <per-task columns>, consistent`.
pub fn write_predictions<W: Write>(
    mut out: W,
    schema: &TaskSchema,
    rows: &[(String, Prediction)],
) -> io::Result<()> {
    let mut header = vec!["text_id", "joint_label"];
    header.extend(schema.tasks().iter().map(|t| t.column()));
    header.push("consistent");
    writeln!(out, "{}", header.join("\t"))?;
    for (id, p) in rows {
        write!(out, "{id}\t{}", p.name())?;
        for &t in schema.tasks() {
            write!(out, "\t{}", p.label(t).map(Label::as_str).unwrap_or(""))?;
        }
        writeln!(out, "\t{}", p.is_consistent())?;
    }
    Ok(())
}

/// Spread of one label's F1 across several models.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabelVariation {
    pub split: String,
    pub task: TaskId,
    pub label: Label,
    pub models: usize,
    #[serde(serialize_with = "round6")]
    pub min: f64,
    #[serde(serialize_with = "round6")]
    pub max: f64,
    #[serde(serialize_with = "round6")]
    pub mean: f64,
    /// Population standard deviation.
    #[serde(serialize_with = "round6")]
    pub std: f64,
}

impl LabelVariation {
    pub fn range(&self) -> f64 {
        self.max - self.min
    }
}

/// A report tagged with the model that produced it and the split it scores.
#[derive(Debug, Clone)]
pub struct TaggedReport {
    pub model: String,
    pub split: String,
    pub report: MetricsReport,
}

pub fn per_label_variation(reports: &[TaggedReport]) -> Vec<LabelVariation> {
    let mut values: BTreeMap<(String, TaskId, Label), Vec<f64>> = BTreeMap::new();
    for r in reports {
        for (&task, tr) in &r.report.tasks {
            for s in &tr.per_label {
                values
                    .entry((r.split.clone(), task, s.label))
                    .or_default()
                    .push(s.f1);
            }
        }
    }
    values
        .into_iter()
        .map(|((split, task, label), v)| {
            let n = v.len() as f64;
            let mean = v.iter().sum::<f64>() / n;
            let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
            LabelVariation {
                split,
                task,
                label,
                models: v.len(),
                min: v.iter().copied().fold(f64::INFINITY, f64::min),
                max: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                mean,
                std: var.sqrt(),
            }
        })
        .collect()
}
