//! Which words back-translation introduces or removes, per gold label.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use serde::Serialize;

use crate::corpus::Corpus;
use crate::features::tokenize;
use crate::schema::{GoldLabels, TaskId};

use super::{AugmentError, BT_SUFFIX};

pub const DEFAULT_TOP_GLOBAL: usize = 50;
pub const DEFAULT_TOP_PER_LABEL: usize = 5;

/// Lowercased tokens, no truncation.
pub fn analysis_tokens(text: &str) -> Vec<String> {
    tokenize(text, true, usize::MAX)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChangePair {
    pub id: String,
    pub original: String,
    pub augmented: String,
    pub gold: GoldLabels,
}

/// Pairs every original with `id_bt` in `augmented`, falling back to the
/// same id.
pub fn pair_corpora(
    original: &Corpus,
    augmented: &Corpus,
) -> Result<Vec<ChangePair>, AugmentError> {
    let by_id: HashMap<&str, &str> = augmented
        .examples
        .iter()
        .map(|e| (e.id.as_str(), e.text.as_str()))
        .collect();
    let mut missing = Vec::new();
    let mut pairs = Vec::with_capacity(original.len());
    for ex in &original.examples {
        let bt_id = format!("{}{BT_SUFFIX}", ex.id);
        match by_id
            .get(bt_id.as_str())
            .or_else(|| by_id.get(ex.id.as_str()))
        {
            Some(text) => pairs.push(ChangePair {
                id: ex.id.clone(),
                original: ex.text.clone(),
                augmented: text.to_string(),
                gold: ex.gold,
            }),
            None => missing.push(ex.id.clone()),
        }
    }
    if missing.is_empty() {
        Ok(pairs)
    } else {
        Err(AugmentError::Pairing(missing))
    }
}

pub type WordCounts = Vec<(String, usize)>;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct TaskWordChanges {
    /// Keyed by label string, so iteration is alphabetical.
    pub introduced: BTreeMap<String, WordCounts>,
    pub removed: BTreeMap<String, WordCounts>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct WordChangeReport {
    /// Most frequently changed words overall; excluded from the label lists.
    pub stop_list: WordCounts,
    pub tasks: BTreeMap<TaskId, TaskWordChanges>,
}

fn ranked(counts: &HashMap<String, usize>, skip: &BTreeSet<&str>, top: usize) -> WordCounts {
    let mut v: WordCounts = counts
        .iter()
        .filter(|(w, _)| !skip.contains(w.as_str()))
        .map(|(w, &c)| (w.clone(), c))
        .collect();
    v.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    v.truncate(top);
    v
}

/// Counts, per task and gold label, the pairs in which each word was
/// introduced or removed (a word counts once per pair).
///
/// The `top_global` most frequent changed words across all pairs form a
/// stop-list; each label then keeps its `top_per_label` most frequent
/// remaining words. Ties break alphabetically.
pub fn word_change_analysis(
    pairs: &[ChangePair],
    top_global: usize,
    top_per_label: usize,
) -> WordChangeReport {
    type Tally = HashMap<String, usize>;
    type LabelTallies = BTreeMap<String, Tally>;
    let mut overall: Tally = HashMap::new();
    let mut per_task: BTreeMap<TaskId, (LabelTallies, LabelTallies)> = BTreeMap::new();

    for pair in pairs {
        let before: BTreeSet<String> = analysis_tokens(&pair.original).into_iter().collect();
        let after: BTreeSet<String> = analysis_tokens(&pair.augmented).into_iter().collect();
        let introduced: Vec<&String> = after.difference(&before).collect();
        let removed: Vec<&String> = before.difference(&after).collect();
        for w in introduced.iter().chain(&removed) {
            *overall.entry((*w).clone()).or_default() += 1;
        }
        for (task, label) in pair.gold.observed() {
            let (intro, rem) = per_task.entry(task).or_default();
            let intro = intro.entry(label.as_str().to_string()).or_default();
            for w in &introduced {
                *intro.entry((*w).clone()).or_default() += 1;
            }
            let rem = rem.entry(label.as_str().to_string()).or_default();
            for w in &removed {
                *rem.entry((*w).clone()).or_default() += 1;
            }
        }
    }

    let stop_list = ranked(&overall, &BTreeSet::new(), top_global);
    let skip: BTreeSet<&str> = stop_list.iter().map(|(w, _)| w.as_str()).collect();
    let tasks = per_task
        .into_iter()
        .map(|(task, (intro, rem))| {
            let rank = |m: LabelTallies| {
                m.into_iter()
                    .map(|(label, tally)| (label, ranked(&tally, &skip, top_per_label)))
                    .collect()
            };
            (
                task,
                TaskWordChanges {
                    introduced: rank(intro),
                    removed: rank(rem),
                },
            )
        })
        .collect();
    WordChangeReport { stop_list, tasks }
}

/// Python `repr` of a string.
pub(crate) fn py_repr(s: &str) -> String {
    let quote = if s.contains('\'') && !s.contains('"') {
        '"'
    } else {
        '\''
    };
    let mut out = String::with_capacity(s.len() + 2);
    out.push(quote);
    for ch in s.chars() {
        match ch {
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c if c == quote => {
                out.push('\\');
                out.push(c);
            }
            c if c.is_control() => {
                let _ = write!(out, "\\x{:02x}", c as u32);
            }
            c => out.push(c),
        }
    }
    out.push(quote);
    out
}

/// `[('word', 3), ('other', 1)]`
pub fn format_word_counts(words: &[(String, usize)]) -> String {
    let items: Vec<String> = words
        .iter()
        .map(|(w, c)| format!("({}, {c})", py_repr(w)))
        .collect();
    format!("[{}]", items.join(", "))
}

impl WordChangeReport {
    /// Plain-text listing, one block per task and direction:
    ///
    /// ```text
    /// task_1 introduced_words
    /// HOF [('asset', 3)]
    /// NOT []
    /// ```
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (task, changes) in &self.tasks {
            for (direction, lists) in [
                ("introduced_words", &changes.introduced),
                ("removed_words", &changes.removed),
            ] {
                let _ = writeln!(out, "{} {direction}", task.column());
                for (label, words) in lists {
                    let _ = writeln!(out, "{label} {}", format_word_counts(words));
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::Label;

    fn pair(orig: &str, aug: &str, a: Label) -> ChangePair {
        ChangePair {
            id: orig.to_string(),
            original: orig.to_string(),
            augmented: aug.to_string(),
            gold: GoldLabels::new(Some(a), None, None),
        }
    }

    #[test]
    fn repr_matches_python() {
        assert_eq!(py_repr("word"), "'word'");
        assert_eq!(py_repr("don't"), "\"don't\"");
        assert_eq!(py_repr("a'b\"c"), "'a\\'b\"c'");
        assert_eq!(py_repr("back\\slash"), "'back\\\\slash'");
        assert_eq!(format_word_counts(&[]), "[]");
        assert_eq!(
            format_word_counts(&[("x".into(), 2), ("y".into(), 1)]),
            "[('x', 2), ('y', 1)]"
        );
    }

    #[test]
    fn stop_list_and_ranking() {
        let pairs = vec![
            pair("the cat sat", "a cat sat", Label::HOF),
            pair("the dog ran", "a dog ran", Label::HOF),
            pair("you idiot", "you fool", Label::HOF),
            pair("nice day", "lovely day", Label::NOT),
        ];
        let report = word_change_analysis(&pairs, 1, 5);
        // "a" and "the" both change twice; "a" wins the alphabetical tie
        assert_eq!(report.stop_list, vec![("a".to_string(), 2)]);
        let t1 = &report.tasks[&TaskId::A];
        assert_eq!(t1.introduced["HOF"], vec![("fool".to_string(), 1)]);
        assert_eq!(
            t1.removed["HOF"],
            vec![("the".to_string(), 2), ("idiot".to_string(), 1)]
        );
        assert_eq!(t1.introduced["NOT"], vec![("lovely".to_string(), 1)]);
        let text = report.to_text();
        assert!(
            text.starts_with("task_1 introduced_words\nHOF [('fool', 1)]\nNOT [('lovely', 1)]\n")
        );
    }

    #[test]
    fn repeated_word_counts_once_per_pair() {
        let pairs = vec![pair("x", "go go go", Label::NOT)];
        let report = word_change_analysis(&pairs, 0, 5);
        assert_eq!(
            report.tasks[&TaskId::A].introduced["NOT"],
            vec![("go".to_string(), 1)]
        );
    }

    #[test]
    fn identical_texts_give_empty_lists() {
        let pairs = vec![pair("same text", "same text", Label::HOF)];
        let report = word_change_analysis(&pairs, 50, 5);
        assert!(report.stop_list.is_empty());
        assert!(report.tasks[&TaskId::A].introduced["HOF"].is_empty());
    }
}
