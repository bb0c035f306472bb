//! HASOC-style TSV ingestion, multilingual merging and label statistics.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::schema::{GoldLabels, Label, SchemaError, TaskId, TaskSchema};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Read(#[from] io::Error),
    #[error("line {line}: bad header: {message}")]
    Header { line: usize, message: String },
    #[error("line {line}: expected {expected} columns, found {found}")]
    Row {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: {message}")]
    Validation { line: usize, message: String },
    #[error("duplicate example ids: {}", .0.join(", "))]
    DuplicateIds(Vec<String>),
    #[error("cannot merge: {0}")]
    Merge(String),
    #[error("example {id}: {message}")]
    Format { id: String, message: String },
    #[error(transparent)]
    Schema(#[from] SchemaError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Language {
    En,
    Hi,
    De,
}

impl Language {
    pub const ALL: [Language; 3] = [Language::En, Language::Hi, Language::De];

    /// Lower-case ISO 639-1 code, also used as the id prefix.
    pub fn code(self) -> &'static str {
        match self {
            Language::En => "en",
            Language::Hi => "hi",
            Language::De => "de",
        }
    }

    pub fn id_prefix(self) -> String {
        format!("{}_", self.code())
    }

    /// Language recovered from a prefixed id such as `en_123`.
    pub fn from_id(id: &str) -> Option<Language> {
        Language::ALL
            .into_iter()
            .find(|l| id.starts_with(&l.id_prefix()))
    }
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.code().to_uppercase())
    }
}

impl FromStr for Language {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "en" => Ok(Language::En),
            "hi" => Ok(Language::Hi),
            "de" => Ok(Language::De),
            other => Err(format!(
                "unknown language `{other}` (expected en, hi or de)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub id: String,
    pub language: Language,
    pub text: String,
    pub gold: GoldLabels,
    pub augmented: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub examples: Vec<Example>,
    pub split: Split,
    pub schema: TaskSchema,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Example> {
        self.examples.iter().find(|e| e.id == id)
    }

    /// SHA-256 over ids, texts and labels in corpus order.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        for ex in &self.examples {
            hasher.update(ex.id.as_bytes());
            hasher.update([0x1f]);
            hasher.update(ex.text.as_bytes());
            for t in TaskId::ALL {
                hasher.update([0x1f]);
                if let Some(l) = ex.gold.get(t) {
                    hasher.update(l.as_str().as_bytes());
                }
            }
            hasher.update([u8::from(ex.augmented), b'\n']);
        }
        hex::encode(hasher.finalize())
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    /// Rewrite labels that contradict task A instead of rejecting the row:
    /// B/C become `NONE` under `NOT`, and a `NONE` under `HOF` becomes unobserved.
    pub coerce: bool,
}

const BASE_COLUMNS: [&str; 2] = ["text_id", "text"];

pub fn load_tsv(
    path: impl AsRef<Path>,
    language: Language,
    split: Split,
    options: LoadOptions,
) -> Result<Corpus, CorpusError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_tsv(BufReader::new(file), language, split, options)
}

pub fn read_tsv<R: BufRead>(
    reader: R,
    language: Language,
    split: Split,
    options: LoadOptions,
) -> Result<Corpus, CorpusError> {
    let mut lines = reader.lines();
    let header = match lines.next() {
        Some(line) => line?,
        None => {
            return Err(CorpusError::Header {
                line: 1,
                message: "file is empty".into(),
            })
        }
    };
    let tasks = parse_header(header.trim_end_matches('\r'))?;
    let columns = BASE_COLUMNS.len() + tasks.len();
    let schema = if tasks.is_empty() {
        TaskSchema::build(&[TaskId::A])?
    } else {
        TaskSchema::build(&tasks).map_err(|e| CorpusError::Header {
            line: 1,
            message: e.to_string(),
        })?
    };

    let prefix = language.id_prefix();
    let mut seen = HashSet::new();
    let mut examples = Vec::new();
    let mut pending_blank = None;
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            pending_blank.get_or_insert(line_no);
            continue;
        }
        if let Some(blank) = pending_blank {
            return Err(CorpusError::Row {
                line: blank,
                expected: columns,
                found: 0,
            });
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != columns {
            return Err(CorpusError::Row {
                line: line_no,
                expected: columns,
                found: fields.len(),
            });
        }
        let mut gold = GoldLabels::default();
        for (&task, cell) in tasks.iter().zip(&fields[2..]) {
            if cell.is_empty() {
                continue;
            }
            let label = Label::parse(cell)
                .filter(|&l| task.accepts(l))
                .ok_or_else(|| CorpusError::Validation {
                    line: line_no,
                    message: format!("unknown {} label `{cell}`", task.column()),
                })?;
            gold.set(task, Some(label));
        }
        let gold =
            check_consistency(gold, options.coerce).map_err(|message| CorpusError::Validation {
                line: line_no,
                message,
            })?;
        let raw_id = fields[0];
        let id = if raw_id.starts_with(&prefix) {
            raw_id.to_string()
        } else {
            format!("{prefix}{raw_id}")
        };
        if !seen.insert(id.clone()) {
            return Err(CorpusError::Validation {
                line: line_no,
                message: format!("duplicate text_id `{id}`"),
            });
        }
        examples.push(Example {
            id,
            language,
            text: fields[1].to_string(),
            gold,
            augmented: false,
        });
    }
    Ok(Corpus {
        examples,
        split,
        schema,
    })
}

fn parse_header(header: &str) -> Result<Vec<TaskId>, CorpusError> {
    let cols: Vec<&str> = header.split('\t').collect();
    let bad = |message: String| CorpusError::Header { line: 1, message };
    if cols.len() < 2 || cols[..2] != BASE_COLUMNS {
        return Err(bad(format!(
            "expected `text_id<TAB>text` first, got `{header}`"
        )));
    }
    let task_cols = &cols[2..];
    if task_cols.len() > 3 {
        return Err(bad(format!("too many columns in `{header}`")));
    }
    task_cols
        .iter()
        .zip(TaskId::ALL)
        .map(|(&col, task)| {
            if col == task.column() {
                Ok(task)
            } else {
                Err(bad(format!(
                    "expected column `{}`, got `{col}`",
                    task.column()
                )))
            }
        })
        .collect()
}

fn check_consistency(mut gold: GoldLabels, coerce: bool) -> Result<GoldLabels, String> {
    let fine = [TaskId::B, TaskId::C];
    match gold.get(TaskId::A) {
        None => {
            if !gold.is_empty() {
                return Err("task_2/task_3 label present without a task_1 label".into());
            }
        }
        Some(Label::NOT) => {
            for t in fine {
                if matches!(gold.get(t), Some(l) if l != Label::NONE) {
                    if !coerce {
                        return Err(format!(
                            "NOT row carries {} label {}",
                            t.column(),
                            gold.get(t).unwrap()
                        ));
                    }
                    gold.set(t, Some(Label::NONE));
                }
            }
        }
        Some(_) => {
            for t in fine {
                if gold.get(t) == Some(Label::NONE) {
                    if !coerce {
                        return Err(format!("HOF row carries NONE for {}", t.column()));
                    }
                    gold.set(t, None);
                }
            }
        }
    }
    Ok(gold)
}

/// Writes the corpus back in the ingestion format; unobserved labels become
/// empty cells.
pub fn write_tsv<W: Write>(corpus: &Corpus, mut out: W) -> Result<(), CorpusError> {
    let tasks: Vec<TaskId> = TaskId::ALL
        .into_iter()
        .filter(|&t| corpus.schema.has_task(t))
        .collect();
    let mut header: Vec<&str> = BASE_COLUMNS.to_vec();
    header.extend(tasks.iter().map(|t| t.column()));
    writeln!(out, "{}", header.join("\t"))?;
    for ex in &corpus.examples {
        for field in [&ex.id, &ex.text] {
            if field.contains(['\t', '\n', '\r']) {
                return Err(CorpusError::Format {
                    id: ex.id.clone(),
                    message: "field contains a tab or newline".into(),
                });
            }
        }
        write!(out, "{}\t{}", ex.id, ex.text)?;
        for &t in &tasks {
            write!(out, "\t{}", ex.gold.get(t).map(Label::as_str).unwrap_or(""))?;
        }
        writeln!(out)?;
    }
    Ok(())
}

pub fn save_tsv(corpus: &Corpus, path: impl AsRef<Path>) -> Result<(), CorpusError> {
    let mut buf = Vec::new();
    write_tsv(corpus, &mut buf)?;
    let path = path.as_ref();
    std::fs::write(path, buf).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Concatenates corpora of one split into a single multilingual corpus.
pub fn merge_multilingual(corpora: &[Corpus]) -> Result<Corpus, CorpusError> {
    let first = corpora
        .first()
        .ok_or_else(|| CorpusError::Merge("no corpora given".into()))?;
    if let Some(other) = corpora.iter().find(|c| c.split != first.split) {
        return Err(CorpusError::Merge(format!(
            "mixed splits {:?} and {:?}",
            first.split, other.split
        )));
    }
    let tasks: BTreeSet<TaskId> = corpora
        .iter()
        .flat_map(|c| c.schema.tasks().iter().copied())
        .collect();
    let tasks: Vec<TaskId> = tasks.into_iter().collect();
    let schema = if tasks.contains(&TaskId::A) {
        TaskSchema::build(&tasks)?
    } else {
        first.schema.clone()
    };

    let mut seen = HashSet::new();
    let mut duplicates = BTreeSet::new();
    let mut examples = Vec::with_capacity(corpora.iter().map(Corpus::len).sum());
    for ex in corpora.iter().flat_map(|c| &c.examples) {
        if !seen.insert(ex.id.as_str()) {
            duplicates.insert(ex.id.clone());
        }
        examples.push(ex.clone());
    }
    if !duplicates.is_empty() {
        return Err(CorpusError::DuplicateIds(duplicates.into_iter().collect()));
    }
    Ok(Corpus {
        examples,
        split: first.split,
        schema,
    })
}

/// Per-task label counts. Tasks no example carries are absent.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct LabelDistribution(pub BTreeMap<TaskId, BTreeMap<Label, usize>>);

impl LabelDistribution {
    pub fn task(&self, task: TaskId) -> Option<&BTreeMap<Label, usize>> {
        self.0.get(&task)
    }

    pub fn total(&self, task: TaskId) -> usize {
        self.task(task).map_or(0, |m| m.values().sum())
    }
}

pub fn label_distribution(corpus: &Corpus) -> LabelDistribution {
    let mut dist = LabelDistribution::default();
    for ex in &corpus.examples {
        for (task, label) in ex.gold.observed() {
            *dist.0.entry(task).or_default().entry(label).or_default() += 1;
        }
    }
    dist
}

/// Keeps only examples whose task-A label is `HOF`.
pub fn filter_hateful(corpus: &Corpus) -> Corpus {
    Corpus {
        examples: corpus
            .examples
            .iter()
            .filter(|e| e.gold.get(TaskId::A) == Some(Label::HOF))
            .cloned()
            .collect(),
        split: corpus.split,
        schema: corpus.schema.clone(),
    }
}
