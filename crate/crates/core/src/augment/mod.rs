//! Back-translation data augmentation and its change statistics.

pub mod analysis;
pub mod backend;

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::Serialize;
use thiserror::Error;

use crate::corpus::{Corpus, Example, Language};

pub use analysis::{word_change_analysis, ChangePair, WordChangeReport};
pub use backend::{
    BackendError, CachedBackend, HttpBackend, IdentityBackend, MockBackend, RetryPolicy,
    TranslationBackend,
};

/// Suffix marking a back-translated copy's id.
pub const BT_SUFFIX: &str = "_bt";

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("no pivot language configured for {0}")]
    NoPivot(Language),
    #[error("pivot for {0} equals the source language")]
    PivotIsSource(Language),
    #[error("translation failed for {} example(s): {}", .ids.len(), .ids.join(", "))]
    Failed {
        ids: Vec<String>,
        first: BackendError,
    },
    #[error("id `{0}` collides with a back-translated copy")]
    DuplicateId(String),
    #[error("no counterpart for ids: {}", .0.join(", "))]
    Pairing(Vec<String>),
}

/// Pivot language per source language plus request settings.
#[derive(Debug, Clone)]
pub struct RoundTripConfig {
    pub pivots: BTreeMap<Language, String>,
    pub concurrency: usize,
    pub retry: RetryPolicy,
}

impl Default for RoundTripConfig {
    /// EN → FR → EN, HI → EN → HI, DE → EN → DE.
    fn default() -> Self {
        RoundTripConfig {
            pivots: BTreeMap::from([
                (Language::En, "fr".to_string()),
                (Language::Hi, "en".to_string()),
                (Language::De, "en".to_string()),
            ]),
            concurrency: 4,
            retry: RetryPolicy::default(),
        }
    }
}

impl RoundTripConfig {
    pub fn pivot(&self, language: Language) -> Result<&str, AugmentError> {
        let pivot = self
            .pivots
            .get(&language)
            .ok_or(AugmentError::NoPivot(language))?;
        if pivot.eq_ignore_ascii_case(language.code()) {
            return Err(AugmentError::PivotIsSource(language));
        }
        Ok(pivot)
    }
}

/// Returns the originals followed by one back-translated copy of each.
///
/// Copies keep the gold labels, are flagged `augmented` and get the `_bt` id
/// suffix. Unchanged translations are kept. If any example still fails after
/// the retries nothing is returned.
pub fn backtranslate_corpus(
    corpus: &Corpus,
    backend: &dyn TranslationBackend,
    config: &RoundTripConfig,
) -> Result<Corpus, AugmentError> {
    for ex in &corpus.examples {
        config.pivot(ex.language)?;
    }
    let results = backend::run_bounded(corpus.len(), config.concurrency, |i| {
        let ex = &corpus.examples[i];
        let src = ex.language.code();
        let pivot = config.pivot(ex.language).expect("checked above");
        let there = config
            .retry
            .run(|| backend.translate(&ex.text, src, pivot))?;
        config.retry.run(|| backend.translate(&there, pivot, src))
    });

    let mut failed = Vec::new();
    let mut first_error = None;
    let mut copies = Vec::with_capacity(corpus.len());
    for (ex, result) in corpus.examples.iter().zip(results) {
        match result {
            Ok(text) => copies.push(Example {
                id: format!("{}{BT_SUFFIX}", ex.id),
                language: ex.language,
                text,
                gold: ex.gold,
                augmented: true,
            }),
            Err(e) => {
                failed.push(ex.id.clone());
                first_error.get_or_insert(e);
            }
        }
    }
    if let Some(first) = first_error {
        return Err(AugmentError::Failed { ids: failed, first });
    }

    let mut seen = HashSet::new();
    for ex in corpus.examples.iter().chain(&copies) {
        if !seen.insert(ex.id.as_str()) {
            return Err(AugmentError::DuplicateId(ex.id.clone()));
        }
    }
    let mut examples = corpus.examples.clone();
    examples.extend(copies);
    Ok(Corpus {
        examples,
        split: corpus.split,
        schema: corpus.schema.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PairChange {
    pub id: String,
    pub changed: bool,
    /// Tokens present in the copy but not the original (multiset difference).
    pub introduced: usize,
    pub removed: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ChangeSummary {
    pub pairs: usize,
    pub unchanged: usize,
    pub changed: usize,
    pub per_pair: Vec<PairChange>,
}

fn multiset_difference(a: &[String], b: &[String]) -> usize {
    let mut counts: HashMap<&str, isize> = HashMap::new();
    for t in a {
        *counts.entry(t).or_default() += 1;
    }
    for t in b {
        *counts.entry(t).or_default() -= 1;
    }
    counts
        .values()
        .filter(|&&c| c > 0)
        .map(|&c| c as usize)
        .sum()
}

/// Compares each original with its `_bt` copy. Texts are compared
/// case-sensitively; diff sizes use the analysis tokenizer.
pub fn change_statistics(
    original: &Corpus,
    augmented: &Corpus,
) -> Result<ChangeSummary, AugmentError> {
    let by_id: HashMap<&str, &Example> = augmented
        .examples
        .iter()
        .map(|e| (e.id.as_str(), e))
        .collect();
    let mut missing = Vec::new();
    let mut per_pair = Vec::with_capacity(original.len());
    for ex in &original.examples {
        let Some(copy) = by_id.get(format!("{}{BT_SUFFIX}", ex.id).as_str()) else {
            missing.push(ex.id.clone());
            continue;
        };
        let before = analysis::analysis_tokens(&ex.text);
        let after = analysis::analysis_tokens(&copy.text);
        per_pair.push(PairChange {
            id: ex.id.clone(),
            changed: ex.text != copy.text,
            introduced: multiset_difference(&after, &before),
            removed: multiset_difference(&before, &after),
        });
    }
    if !missing.is_empty() {
        return Err(AugmentError::Pairing(missing));
    }
    let changed = per_pair.iter().filter(|p| p.changed).count();
    Ok(ChangeSummary {
        pairs: per_pair.len(),
        unchanged: per_pair.len() - changed,
        changed,
        per_pair,
    })
}
