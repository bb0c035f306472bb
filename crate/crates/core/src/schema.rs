//! Sub-tasks, label alphabets and the restricted joint label space.
//!
//! The three sub-tasks form a chain: A decides hateful/offensive (`HOF`) versus
//! not (`NOT`); B and C refine only the `HOF` posts. Combining them gives a
//! joint label space of seven valid labels instead of the 24 unrestricted
//! products, so any prediction in that space decomposes into a consistent
//! triple.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SchemaError {
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("task {0} is not part of this schema")]
    MissingTask(TaskId),
    #[error("unknown label `{part}` at position {position} of `{input}`")]
    UnknownLabel {
        input: String,
        part: String,
        position: usize,
    },
    #[error("`{0}` is not a valid label combination")]
    InvalidCombination(String),
    #[error("`{input}` has {found} parts, schema expects {expected}")]
    WrongArity {
        input: String,
        found: usize,
        expected: usize,
    },
}

/// Sub-task identifier. Ordering `A < B < C` is the serialization order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TaskId {
    A,
    B,
    C,
}

impl TaskId {
    pub const ALL: [TaskId; 3] = [TaskId::A, TaskId::B, TaskId::C];

    pub fn index(self) -> usize {
        match self {
            TaskId::A => 0,
            TaskId::B => 1,
            TaskId::C => 2,
        }
    }

    /// Column name used by the HASOC releases (`task_1` .. `task_3`).
    pub fn column(self) -> &'static str {
        match self {
            TaskId::A => "task_1",
            TaskId::B => "task_2",
            TaskId::C => "task_3",
        }
    }

    /// Full label alphabet, `NONE` padding included for B and C.
    pub fn alphabet(self) -> &'static [Label] {
        match self {
            TaskId::A => &[Label::HOF, Label::NOT],
            TaskId::B => &[Label::HATE, Label::OFFN, Label::PRFN, Label::NONE],
            TaskId::C => &[Label::TIN, Label::UNT, Label::NONE],
        }
    }

    pub fn accepts(self, label: Label) -> bool {
        self.alphabet().contains(&label)
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TaskId::A => "A",
            TaskId::B => "B",
            TaskId::C => "C",
        };
        f.write_str(s)
    }
}

impl FromStr for TaskId {
    type Err = SchemaError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "A" | "a" | "task_1" => Ok(TaskId::A),
            "B" | "b" | "task_2" => Ok(TaskId::B),
            "C" | "c" | "task_3" => Ok(TaskId::C),
            other => Err(SchemaError::InvalidSchema(format!(
                "unknown task `{other}`"
            ))),
        }
    }
}

/// Every label string used across the three sub-tasks.
#[allow(clippy::upper_case_acronyms)]
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Label {
    HOF,
    NOT,
    HATE,
    OFFN,
    PRFN,
    TIN,
    UNT,
    NONE,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::HOF => "HOF",
            Label::NOT => "NOT",
            Label::HATE => "HATE",
            Label::OFFN => "OFFN",
            Label::PRFN => "PRFN",
            Label::TIN => "TIN",
            Label::UNT => "UNT",
            Label::NONE => "NONE",
        }
    }

    /// Case-sensitive parse; HASOC files use upper case throughout.
    pub fn parse(s: &str) -> Option<Label> {
        Some(match s {
            "HOF" => Label::HOF,
            "NOT" => Label::NOT,
            "HATE" => Label::HATE,
            "OFFN" => Label::OFFN,
            "PRFN" => Label::PRFN,
            "TIN" => Label::TIN,
            "UNT" => Label::UNT,
            "NONE" => Label::NONE,
            _ => return None,
        })
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for Label {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Label::parse(&s).ok_or_else(|| serde::de::Error::custom(format!("unknown label `{s}`")))
    }
}

/// A label tied to the task it belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TaskLabel {
    pub task: TaskId,
    pub label: Label,
}

impl TaskLabel {
    pub fn new(task: TaskId, label: Label) -> Result<Self, SchemaError> {
        if task.accepts(label) {
            Ok(TaskLabel { task, label })
        } else {
            Err(SchemaError::InvalidCombination(format!(
                "{label} is not a task {task} label"
            )))
        }
    }
}

/// Per-task gold (or predicted) labels; `None` marks an unobserved task.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct GoldLabels([Option<Label>; 3]);

impl GoldLabels {
    pub fn new(a: Option<Label>, b: Option<Label>, c: Option<Label>) -> Self {
        GoldLabels([a, b, c])
    }

    pub fn get(&self, task: TaskId) -> Option<Label> {
        self.0[task.index()]
    }

    pub fn set(&mut self, task: TaskId, label: Option<Label>) {
        self.0[task.index()] = label;
    }

    pub fn is_empty(&self) -> bool {
        self.0.iter().all(Option::is_none)
    }

    pub fn observed(&self) -> impl Iterator<Item = (TaskId, Label)> + '_ {
        TaskId::ALL
            .into_iter()
            .filter_map(move |t| self.get(t).map(|l| (t, l)))
    }

    pub fn parts(&self) -> [Option<Label>; 3] {
        self.0
    }
}

/// The seven valid full-chain combinations, in canonical index order.
const FULL_JOINT: [[Label; 3]; 7] = [
    [Label::NOT, Label::NONE, Label::NONE],
    [Label::HOF, Label::HATE, Label::TIN],
    [Label::HOF, Label::HATE, Label::UNT],
    [Label::HOF, Label::OFFN, Label::TIN],
    [Label::HOF, Label::OFFN, Label::UNT],
    [Label::HOF, Label::PRFN, Label::TIN],
    [Label::HOF, Label::PRFN, Label::UNT],
];

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct JointLabel {
    pub index: usize,
    parts: [Option<Label>; 3],
}

impl JointLabel {
    pub fn part(&self, task: TaskId) -> Option<Label> {
        self.parts[task.index()]
    }

    pub fn parts(&self) -> [Option<Label>; 3] {
        self.parts
    }

    /// Hyphen-joined name over the present tasks, e.g. `HOF-OFFN-TIN`.
    pub fn name(&self) -> String {
        join_parts(&self.parts)
    }
}

impl fmt::Display for JointLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

pub(crate) fn join_parts(parts: &[Option<Label>; 3]) -> String {
    parts
        .iter()
        .flatten()
        .map(|l| l.as_str())
        .collect::<Vec<_>>()
        .join("-")
}

/// Task set, the joint labels restricted to it, and the marginal groups.
///
/// Two shapes exist. Chain schemas always contain task A (and B whenever C is
/// present); their alphabets carry `NONE` padding for B and C. Single-task
/// schemas hold only one of B or C, optionally without `NONE`, and are used by
/// single-task models trained on the hateful subset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskSchema {
    tasks: Vec<TaskId>,
    alphabets: [Vec<Label>; 3],
    joint_labels: Vec<JointLabel>,
    groups: [Vec<Vec<usize>>; 3],
}

impl TaskSchema {
    pub fn full() -> Self {
        Self::build(&TaskId::ALL).expect("full schema is valid")
    }

    /// Builds the chain schema for `tasks`.
    pub fn build(tasks: &[TaskId]) -> Result<Self, SchemaError> {
        let mut tasks = tasks.to_vec();
        tasks.sort();
        tasks.dedup();
        if !tasks.contains(&TaskId::A) {
            return Err(SchemaError::InvalidSchema("task A is required".into()));
        }
        if tasks.contains(&TaskId::C) && !tasks.contains(&TaskId::B) {
            return Err(SchemaError::InvalidSchema("task C requires task B".into()));
        }
        let mut alphabets: [Vec<Label>; 3] = Default::default();
        for &t in &tasks {
            alphabets[t.index()] = t.alphabet().to_vec();
        }
        let combos = FULL_JOINT.iter().map(|full| {
            let mut parts = [None; 3];
            for &t in &tasks {
                parts[t.index()] = Some(full[t.index()]);
            }
            parts
        });
        let combos: Vec<_> = combos.collect();
        Ok(Self::assemble(tasks, alphabets, combos.into_iter()))
    }

    /// Schema for a model of a single task.
    ///
    /// With `padded == false` the `NONE` label is dropped from B/C, which is
    /// the usual setup for training on hateful posts only.
    pub fn single_task(task: TaskId, padded: bool) -> Self {
        if task == TaskId::A {
            return Self::build(&[TaskId::A]).expect("task A alone is valid");
        }
        let alphabet: Vec<Label> = task
            .alphabet()
            .iter()
            .copied()
            .filter(|&l| padded || l != Label::NONE)
            .collect();
        let mut alphabets: [Vec<Label>; 3] = Default::default();
        alphabets[task.index()] = alphabet.clone();
        let combos = FULL_JOINT.iter().filter_map(|full| {
            let l = full[task.index()];
            alphabet.contains(&l).then(|| {
                let mut parts = [None; 3];
                parts[task.index()] = Some(l);
                parts
            })
        });
        Self::assemble(vec![task], alphabets, combos)
    }

    fn assemble(
        tasks: Vec<TaskId>,
        alphabets: [Vec<Label>; 3],
        combos: impl Iterator<Item = [Option<Label>; 3]>,
    ) -> Self {
        let mut joint_labels: Vec<JointLabel> = Vec::new();
        for parts in combos {
            if !joint_labels.iter().any(|j| j.parts == parts) {
                joint_labels.push(JointLabel {
                    index: joint_labels.len(),
                    parts,
                });
            }
        }
        let mut groups: [Vec<Vec<usize>>; 3] = Default::default();
        for &t in &tasks {
            groups[t.index()] = alphabets[t.index()]
                .iter()
                .map(|&l| {
                    joint_labels
                        .iter()
                        .filter(|j| j.part(t) == Some(l))
                        .map(|j| j.index)
                        .collect()
                })
                .collect();
        }
        TaskSchema {
            tasks,
            alphabets,
            joint_labels,
            groups,
        }
    }

    pub fn tasks(&self) -> &[TaskId] {
        &self.tasks
    }

    pub fn has_task(&self, task: TaskId) -> bool {
        self.tasks.contains(&task)
    }

    /// True for schemas built by [`TaskSchema::build`].
    pub fn is_chain(&self) -> bool {
        self.has_task(TaskId::A)
    }

    pub fn len(&self) -> usize {
        self.joint_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joint_labels.is_empty()
    }

    pub fn joint_labels(&self) -> &[JointLabel] {
        &self.joint_labels
    }

    pub fn joint(&self, index: usize) -> Option<&JointLabel> {
        self.joint_labels.get(index)
    }

    pub fn alphabet(&self, task: TaskId) -> Result<&[Label], SchemaError> {
        self.require(task)?;
        Ok(&self.alphabets[task.index()])
    }

    /// Joint indices grouped by the task label they carry, aligned with
    /// [`TaskSchema::alphabet`].
    pub fn groups(&self, task: TaskId) -> Result<&[Vec<usize>], SchemaError> {
        self.require(task)?;
        Ok(&self.groups[task.index()])
    }

    pub fn group(&self, task: TaskId, label: Label) -> Result<&[usize], SchemaError> {
        let pos = self.label_position(task, label)?;
        Ok(&self.groups[task.index()][pos])
    }

    /// Position of `label` within the task alphabet.
    pub fn label_position(&self, task: TaskId, label: Label) -> Result<usize, SchemaError> {
        self.alphabet(task)?
            .iter()
            .position(|&l| l == label)
            .ok_or_else(|| {
                SchemaError::InvalidCombination(format!("{label} is not a task {task} label here"))
            })
    }

    fn require(&self, task: TaskId) -> Result<(), SchemaError> {
        if self.has_task(task) {
            Ok(())
        } else {
            Err(SchemaError::MissingTask(task))
        }
    }

    pub fn extract_task_label(
        &self,
        joint: &JointLabel,
        task: TaskId,
    ) -> Result<TaskLabel, SchemaError> {
        self.require(task)?;
        let label = joint.part(task).ok_or(SchemaError::MissingTask(task))?;
        Ok(TaskLabel { task, label })
    }

    /// Splits a hyphen-joined string into per-task labels, validating each
    /// part against its task alphabet but not the combination itself.
    pub fn parse_parts(&self, s: &str) -> Result<[Option<Label>; 3], SchemaError> {
        let pieces: Vec<&str> = s.split('-').collect();
        if pieces.len() != self.tasks.len() {
            return Err(SchemaError::WrongArity {
                input: s.to_string(),
                found: pieces.len(),
                expected: self.tasks.len(),
            });
        }
        let mut parts = [None; 3];
        for (position, (&task, piece)) in self.tasks.iter().zip(&pieces).enumerate() {
            let label = Label::parse(piece)
                .filter(|l| self.alphabets[task.index()].contains(l))
                .ok_or_else(|| SchemaError::UnknownLabel {
                    input: s.to_string(),
                    part: piece.to_string(),
                    position,
                })?;
            parts[task.index()] = Some(label);
        }
        Ok(parts)
    }

    pub fn parse_joint_label(&self, s: &str) -> Result<&JointLabel, SchemaError> {
        let parts = self.parse_parts(s)?;
        self.joint_labels
            .iter()
            .find(|j| j.parts == parts)
            .ok_or_else(|| SchemaError::InvalidCombination(s.to_string()))
    }

    /// Joint index whose parts equal `parts` on every schema task.
    pub fn joint_index_of(&self, parts: &[Option<Label>; 3]) -> Option<usize> {
        self.joint_labels
            .iter()
            .find(|j| self.tasks.iter().all(|t| j.part(*t) == parts[t.index()]))
            .map(|j| j.index)
    }

    /// Joint index for a fully observed gold assignment, `None` when any
    /// schema task is unobserved or the combination is invalid.
    pub fn joint_index_for(&self, gold: &GoldLabels) -> Option<usize> {
        if self.tasks.iter().any(|&t| gold.get(t).is_none()) {
            return None;
        }
        self.joint_index_of(&gold.parts())
    }

    /// Joint indices agreeing with every observed schema task in `gold`.
    pub fn compatible_indices(&self, gold: &GoldLabels) -> Vec<usize> {
        self.joint_labels
            .iter()
            .filter(|j| {
                self.tasks
                    .iter()
                    .all(|&t| gold.get(t).is_none_or(|g| j.part(t) == Some(g)))
            })
            .map(|j| j.index)
            .collect()
    }

    /// Size of the unrestricted product of the task alphabets.
    pub fn count_unrestricted_combinations(&self) -> usize {
        self.tasks
            .iter()
            .map(|t| self.alphabets[t.index()].len())
            .product()
    }
}

#[derive(Serialize, Deserialize)]
struct SchemaDoc {
    tasks: Vec<TaskId>,
    joint_labels: Vec<String>,
}

impl Serialize for TaskSchema {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        SchemaDoc {
            tasks: self.tasks.clone(),
            joint_labels: self.joint_labels.iter().map(JointLabel::name).collect(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for TaskSchema {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let doc = SchemaDoc::deserialize(deserializer)?;
        let schema = if doc.tasks.contains(&TaskId::A) {
            TaskSchema::build(&doc.tasks).map_err(D::Error::custom)?
        } else if let [task] = doc.tasks[..] {
            TaskSchema::single_task(task, doc.joint_labels.iter().any(|s| s == "NONE"))
        } else {
            return Err(D::Error::custom(
                "schema without task A must hold exactly one task",
            ));
        };
        let names: Vec<String> = schema.joint_labels.iter().map(JointLabel::name).collect();
        if names != doc.joint_labels {
            return Err(D::Error::custom(format!(
                "joint labels {:?} do not match the schema for tasks {:?}",
                doc.joint_labels, doc.tasks
            )));
        }
        Ok(schema)
    }
}
