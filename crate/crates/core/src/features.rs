//! Text to vectors: a tokenizer, signed hashed n-gram features and a loader
//! for precomputed dense embeddings.
//!
//! Hashing uses 64-bit FNV-1a (offset basis `0xcbf29ce484222325`, prime
//! `0x100000001b3`) over the UTF-8 bytes of a tagged n-gram string. The low
//! bits select the index (`hash & (dimension - 1)`), bit 63 selects the sign.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("invalid feature config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("row {row}: {message}")]
    Format { row: usize, message: String },
    #[error("row {row}: non-finite value `{value}`")]
    Value { row: usize, value: String },
    #[error("no embedding for id `{0}`")]
    MissingId(String),
    #[error("expected width {expected}, got {found}")]
    Width { expected: usize, found: usize },
}

pub const FNV_OFFSET_BASIS: u64 = 0xcbf2_9ce4_8422_2325;
pub const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET_BASIS, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(FNV_PRIME)
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub dimension: usize,
    pub word_ngrams: BTreeSet<usize>,
    pub char_ngrams: BTreeSet<usize>,
    pub lowercase: bool,
    pub max_tokens: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            dimension: 1 << 18,
            word_ngrams: BTreeSet::from([1, 2]),
            char_ngrams: BTreeSet::new(),
            lowercase: true,
            max_tokens: 128,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<(), FeatureError> {
        if self.dimension < 2 || !self.dimension.is_power_of_two() {
            return Err(FeatureError::Config(format!(
                "dimension must be a power of two >= 2, got {}",
                self.dimension
            )));
        }
        if self.word_ngrams.contains(&0) || self.char_ngrams.contains(&0) {
            return Err(FeatureError::Config("n-gram orders must be >= 1".into()));
        }
        if self.max_tokens == 0 {
            return Err(FeatureError::Config("max_tokens must be >= 1".into()));
        }
        Ok(())
    }
}

/// Sparse vector with strictly increasing indices.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureVector {
    pub dimension: usize,
    pub entries: Vec<(usize, f64)>,
}

impl FeatureVector {
    pub fn norm(&self) -> f64 {
        self.entries.iter().map(|(_, v)| v * v).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut dense = vec![0.0; self.dimension];
        for &(i, v) in &self.entries {
            dense[i] = v;
        }
        dense
    }
}

fn is_mark(c: char) -> bool {
    matches!(c as u32,
        0x0300..=0x036F
        | 0x0483..=0x0489
        | 0x0591..=0x05BD
        | 0x0610..=0x061A
        | 0x064B..=0x065F
        | 0x0900..=0x0903
        | 0x093A..=0x094F
        | 0x0951..=0x0957
        | 0x0962..=0x0963
        | 0x0981..=0x0983
        | 0x1AB0..=0x1AFF
        | 0x1DC0..=0x1DFF
        | 0x200C..=0x200D
        | 0x20D0..=0x20FF
        | 0xFE20..=0xFE2F)
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_' || is_mark(c)
}

fn is_apostrophe(c: char) -> bool {
    c == '\'' || c == '\u{2019}'
}

/// Splits text into word and punctuation tokens.
///
/// Words are runs of alphanumerics, `_` and combining marks, with inner
/// apostrophes kept (`don't`). A `#` or `@` directly before a word stays
/// attached to it. Any other run of non-space symbols is one token.
pub fn tokenize(text: &str, lowercase: bool, max_tokens: usize) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < chars.len() && tokens.len() < max_tokens {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        let starts_word = is_word_char(c)
            || ((c == '#' || c == '@') && chars.get(i + 1).is_some_and(|&n| is_word_char(n)));
        if starts_word {
            i += 1;
            while i < chars.len() {
                let inner_apostrophe = is_apostrophe(chars[i])
                    && is_word_char(chars[i - 1])
                    && chars.get(i + 1).is_some_and(|&n| is_word_char(n));
                if !(is_word_char(chars[i]) || inner_apostrophe) {
                    break;
                }
                i += 1;
            }
        } else {
            i += 1;
            while i < chars.len() {
                let n = chars[i];
                let tag_start =
                    (n == '#' || n == '@') && chars.get(i + 1).is_some_and(|&m| is_word_char(m));
                if n.is_whitespace() || is_word_char(n) || tag_start {
                    break;
                }
                i += 1;
            }
        }
        let token: String = chars[start..i].iter().collect();
        tokens.push(if lowercase {
            token.to_lowercase()
        } else {
            token
        });
    }
    tokens
}

/// Hashes word and character n-grams of `text` into a signed, L2-normalized
/// sparse vector.
pub fn featurize(text: &str, config: &FeatureConfig) -> FeatureVector {
    let tokens = tokenize(text, config.lowercase, config.max_tokens);
    let mask = (config.dimension - 1) as u64;
    // Integer accumulation keeps the result independent of n-gram order.
    let mut counts: BTreeMap<usize, i64> = BTreeMap::new();
    let mut add = |key: &str| {
        let h = fnv1a64(key.as_bytes());
        let sign = if h >> 63 == 1 { -1 } else { 1 };
        *counts.entry((h & mask) as usize).or_default() += sign;
    };

    for &n in &config.word_ngrams {
        for gram in tokens.windows(n) {
            add(&format!("w{n}\u{1f}{}", gram.join("\u{1f}")));
        }
    }
    for &n in &config.char_ngrams {
        for tok in &tokens {
            let padded: Vec<char> = format!("<{tok}>").chars().collect();
            for gram in padded.windows(n) {
                add(&format!("c{n}\u{1f}{}", gram.iter().collect::<String>()));
            }
        }
    }

    let entries: Vec<(usize, f64)> = counts
        .into_iter()
        .filter(|&(_, c)| c != 0)
        .map(|(i, c)| (i, c as f64))
        .collect();
    let norm = entries.iter().map(|(_, v)| v * v).sum::<f64>().sqrt();
    FeatureVector {
        dimension: config.dimension,
        entries: entries.into_iter().map(|(i, v)| (i, v / norm)).collect(),
    }
}

/// Dense vectors of a fixed width keyed by example id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EmbeddingTable {
    width: usize,
    rows: HashMap<String, Vec<f64>>,
    order: Vec<String>,
}

impl EmbeddingTable {
    pub fn new(width: usize) -> Self {
        EmbeddingTable {
            width,
            ..Default::default()
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn insert(&mut self, id: impl Into<String>, vector: Vec<f64>) -> Result<(), FeatureError> {
        if vector.len() != self.width {
            return Err(FeatureError::Width {
                expected: self.width,
                found: vector.len(),
            });
        }
        let id = id.into();
        if self.rows.insert(id.clone(), vector).is_none() {
            self.order.push(id);
        }
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.rows.get(id).map(Vec::as_slice)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.order.iter().map(String::as_str)
    }

    pub fn write<W: Write>(&self, mut out: W) -> io::Result<()> {
        for id in &self.order {
            let values: Vec<String> = self.rows[id].iter().map(|v| v.to_string()).collect();
            writeln!(out, "{id}\t{}", values.join(" "))?;
        }
        Ok(())
    }
}

pub fn read_embeddings<R: BufRead>(reader: R) -> Result<EmbeddingTable, FeatureError> {
    let mut table: Option<EmbeddingTable> = None;
    for (i, line) in reader.lines().enumerate() {
        let row = i + 1;
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let (id, values) = line.split_once('\t').ok_or_else(|| FeatureError::Format {
            row,
            message: "expected `text_id<TAB>values`".into(),
        })?;
        let vector = values
            .split(' ')
            .filter(|s| !s.is_empty())
            .map(|s| match s.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                Ok(_) => Err(FeatureError::Value {
                    row,
                    value: s.into(),
                }),
                Err(_) => Err(FeatureError::Format {
                    row,
                    message: format!("cannot parse `{s}` as a number"),
                }),
            })
            .collect::<Result<Vec<f64>, _>>()?;
        let table = table.get_or_insert_with(|| EmbeddingTable::new(vector.len()));
        if vector.len() != table.width {
            return Err(FeatureError::Format {
                row,
                message: format!("width {} differs from {}", vector.len(), table.width),
            });
        }
        if table.rows.contains_key(id) {
            return Err(FeatureError::Format {
                row,
                message: format!("duplicate id `{id}`"),
            });
        }
        table.insert(id, vector)?;
    }
    Ok(table.unwrap_or_default())
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingTable, FeatureError> {
    read_embeddings(BufReader::new(File::open(path)?))
}

/// How example text becomes a model input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EncoderConfig {
    Hashed(FeatureConfig),
    Embeddings { width: usize },
}

impl EncoderConfig {
    pub fn width(&self) -> usize {
        match self {
            EncoderConfig::Hashed(c) => c.dimension,
            EncoderConfig::Embeddings { width } => *width,
        }
    }

    /// Encodes one example. Embedding encoders look the id up in `table`.
    pub fn encode(
        &self,
        id: &str,
        text: &str,
        table: Option<&EmbeddingTable>,
    ) -> Result<Encoded, FeatureError> {
        match self {
            EncoderConfig::Hashed(c) => Ok(Encoded::Sparse(featurize(text, c))),
            EncoderConfig::Embeddings { width } => {
                let table = table.ok_or_else(|| FeatureError::MissingId(id.to_string()))?;
                if table.width() != *width {
                    return Err(FeatureError::Width {
                        expected: *width,
                        found: table.width(),
                    });
                }
                let v = table
                    .get(id)
                    .ok_or_else(|| FeatureError::MissingId(id.to_string()))?;
                Ok(Encoded::Dense(v.to_vec()))
            }
        }
    }
}

/// An encoded example, either hashed-sparse or dense.
#[derive(Debug, Clone, PartialEq)]
pub enum Encoded {
    Sparse(FeatureVector),
    Dense(Vec<f64>),
}

impl Encoded {
    pub fn width(&self) -> usize {
        match self {
            Encoded::Sparse(v) => v.dimension,
            Encoded::Dense(v) => v.len(),
        }
    }

    /// Calls `f(index, value)` for every stored entry.
    pub fn for_each_nonzero(&self, mut f: impl FnMut(usize, f64)) {
        match self {
            Encoded::Sparse(v) => v.entries.iter().for_each(|&(i, x)| f(i, x)),
            Encoded::Dense(v) => v.iter().enumerate().for_each(|(i, &x)| f(i, x)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tok(s: &str) -> Vec<String> {
        tokenize(s, true, 128)
    }

    #[test]
    fn tokenizer_rules() {
        assert_eq!(tok("Happy #WorldCup2019!"), ["happy", "#worldcup2019", "!"]);
        assert!(tok("").is_empty());
        assert_eq!(tok("@politico No."), ["@politico", "no", "."]);
        assert_eq!(tok("don't stop!!"), ["don't", "stop", "!!"]);
        assert_eq!(tok("a # b"), ["a", "#", "b"]);
        assert_eq!(tokenize("One Two Three", false, 2), ["One", "Two"]);
        assert_eq!(tok("नमस्ते दुनिया"), ["नमस्ते", "दुनिया"]);
    }

    #[test]
    fn fnv_reference_values() {
        // Published FNV-1a 64 test vectors.
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn empty_text_is_zero() {
        let v = featurize("", &FeatureConfig::default());
        assert!(v.is_zero());
    }

    #[test]
    fn config_validation() {
        let mut c = FeatureConfig::default();
        assert!(c.validate().is_ok());
        c.dimension = 1000;
        assert!(c.validate().is_err());
        c.dimension = 1024;
        c.max_tokens = 0;
        assert!(c.validate().is_err());
        c.max_tokens = 1;
        c.word_ngrams.insert(0);
        assert!(c.validate().is_err());
    }

    #[test]
    fn char_ngrams_contribute() {
        let config = FeatureConfig {
            word_ngrams: BTreeSet::new(),
            char_ngrams: BTreeSet::from([3]),
            ..Default::default()
        };
        let v = featurize("hello", &config);
        assert!(!v.is_zero());
        assert!((v.norm() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn embeddings_parse_and_reject() {
        let t = read_embeddings("a\t1 2 3 4\nb\t0.5 0 0 -1\n".as_bytes()).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.width(), 4);
        assert_eq!(t.get("b").unwrap(), &[0.5, 0.0, 0.0, -1.0]);
        assert!(matches!(
            read_embeddings("a\t1 2 3\nb\t1 2 3 4\n".as_bytes()),
            Err(FeatureError::Format { row: 2, .. })
        ));
        assert!(matches!(
            read_embeddings("a\t1 NaN\n".as_bytes()),
            Err(FeatureError::Value { row: 1, .. })
        ));
        assert!(matches!(
            read_embeddings("a\t1 inf\n".as_bytes()),
            Err(FeatureError::Value { .. })
        ));
    }

    fn word_text() -> impl Strategy<Value = Vec<String>> {
        prop::collection::vec("[a-z]{1,6}", 0..20)
    }

    proptest! {
        #[test]
        fn nonzero_vectors_are_unit(words in word_text()) {
            let config = FeatureConfig { dimension: 1 << 10, ..Default::default() };
            let v = featurize(&words.join(" "), &config);
            let norm = v.entries.iter().map(|(_, x)| x * x).sum::<f64>().sqrt();
            prop_assert!(v.is_zero() || (norm - 1.0).abs() < 1e-9);
            prop_assert!(v.entries.iter().all(|&(i, x)| i < config.dimension && x.is_finite()));
            prop_assert_eq!(featurize(&words.join(" "), &config), v);
        }

        #[test]
        fn unigrams_ignore_token_order(mut words in word_text(), seed in any::<u64>()) {
            let config = FeatureConfig {
                dimension: 1 << 12,
                word_ngrams: BTreeSet::from([1]),
                ..Default::default()
            };
            let before = featurize(&words.join(" "), &config);
            if !words.is_empty() {
                let n = words.len();
                words.rotate_left((seed as usize) % n);
                words.swap(0, (seed as usize / 7) % n);
            }
            prop_assert_eq!(featurize(&words.join(" "), &config), before);
        }

        #[test]
        fn truncation_ignores_tail(head in prop::collection::vec("[a-z]{1,5}", 4), a in word_text(), b in word_text()) {
            let config = FeatureConfig { dimension: 1 << 12, max_tokens: 4, ..Default::default() };
            let left = format!("{} {}", head.join(" "), a.join(" "));
            let right = format!("{} {}", head.join(" "), b.join(" "));
            prop_assert_eq!(featurize(&left, &config), featurize(&right, &config));
        }

        #[test]
        fn embeddings_round_trip(rows in prop::collection::vec(prop::collection::vec(-1e6f64..1e6, 5), 1..8)) {
            let mut table = EmbeddingTable::new(5);
            for (i, row) in rows.iter().enumerate() {
                table.insert(format!("id{i}"), row.clone()).unwrap();
            }
            let mut buf = Vec::new();
            table.write(&mut buf).unwrap();
            let back = read_embeddings(buf.as_slice()).unwrap();
            for (i, row) in rows.iter().enumerate() {
                let got = back.get(&format!("id{i}")).unwrap();
                for (x, y) in got.iter().zip(row) {
                    prop_assert!((x - y).abs() <= 1e-12 * y.abs().max(1.0));
                }
            }
        }
    }
}
