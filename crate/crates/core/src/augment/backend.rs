//! Translation backends: a seeded mock, an HTTP client, and a caching wrapper.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::features::fnv1a64;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("translation failed: {0}")]
pub struct BackendError(pub String);

/// Translates `text` from language code `source` to `target`.
pub trait TranslationBackend: Sync {
    fn translate(&self, text: &str, source: &str, target: &str) -> Result<String, BackendError>;
}

impl<F> TranslationBackend for F
where
    F: Fn(&str, &str, &str) -> Result<String, BackendError> + Sync,
{
    fn translate(&self, text: &str, source: &str, target: &str) -> Result<String, BackendError> {
        self(text, source, target)
    }
}

/// Returns the input unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityBackend;

impl TranslationBackend for IdentityBackend {
    fn translate(&self, text: &str, _: &str, _: &str) -> Result<String, BackendError> {
        Ok(text.to_string())
    }
}

/// Offline stand-in for a translation service: per-word synonym substitution
/// and word dropout, driven by an RNG seeded from `(seed, source, target,
/// text)`, so the output depends only on its inputs and never on call order.
#[derive(Debug, Clone)]
pub struct MockBackend {
    pub seed: u64,
    pub substitution_rate: f64,
    pub dropout_rate: f64,
    pub synonyms: HashMap<String, String>,
}

const DEFAULT_SYNONYMS: &[(&str, &str)] = &[
    ("should", "must"),
    ("must", "should"),
    ("remember", "not forget"),
    ("very", "really"),
    ("really", "very"),
    ("clearly", "plainly"),
    ("just", "only"),
    ("big", "large"),
    ("large", "big"),
    ("happy", "glad"),
    ("stupid", "dumb"),
    ("people", "persons"),
    ("think", "believe"),
    ("know", "understand"),
    ("said", "stated"),
    ("go", "leave"),
    ("now", "currently"),
    ("every", "each"),
    ("than", "compared to"),
    ("being", "existing"),
    ("fuck", "damn"),
    ("fucking", "damn"),
    ("he's", "he is"),
    ("don't", "do not"),
    ("it's", "it is"),
    ("you're", "you are"),
    ("what", "which"),
    ("them", "they"),
];

impl MockBackend {
    pub fn new(seed: u64) -> Self {
        MockBackend {
            seed,
            substitution_rate: 0.5,
            dropout_rate: 0.05,
            synonyms: DEFAULT_SYNONYMS
                .iter()
                .map(|&(a, b)| (a.to_string(), b.to_string()))
                .collect(),
        }
    }
}

impl TranslationBackend for MockBackend {
    fn translate(&self, text: &str, source: &str, target: &str) -> Result<String, BackendError> {
        let mut key = self.seed.to_le_bytes().to_vec();
        for part in [source, target, text] {
            key.extend_from_slice(part.as_bytes());
            key.push(0);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(fnv1a64(&key));
        let words: Vec<&str> = text.split_whitespace().collect();
        let mut out: Vec<String> = Vec::with_capacity(words.len());
        for (i, word) in words.iter().enumerate() {
            let remaining = words.len() - i;
            let keep_one = out.is_empty() && remaining == 1;
            if !keep_one && rng.random::<f64>() < self.dropout_rate {
                continue;
            }
            let lower = word.to_lowercase();
            match self.synonyms.get(&lower) {
                Some(s) if rng.random::<f64>() < self.substitution_rate => out.push(s.clone()),
                _ => out.push(word.to_string()),
            }
        }
        Ok(out.join(" "))
    }
}

/// Client for a Google-Translate-v2-style JSON endpoint.
///
/// Sends `{"q", "source", "target", "format": "text"}` and reads
/// `data.translations[0].translatedText`. The API key, when set, goes in the
/// `key` query parameter.
pub struct HttpBackend {
    pub endpoint: String,
    api_key: Option<String>,
    agent: ureq::Agent,
}

pub const API_KEY_VAR: &str = "TRANSLATE_API_KEY";
pub const DEFAULT_ENDPOINT: &str = "https://translation.googleapis.com/language/translate/v2";

impl HttpBackend {
    pub fn new(endpoint: impl Into<String>, api_key: Option<String>) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(30)))
            .build();
        HttpBackend {
            endpoint: endpoint.into(),
            api_key,
            agent: config.into(),
        }
    }

    /// Reads the key from `TRANSLATE_API_KEY`.
    pub fn from_env(endpoint: impl Into<String>) -> Self {
        Self::new(endpoint, std::env::var(API_KEY_VAR).ok())
    }
}

impl TranslationBackend for HttpBackend {
    fn translate(&self, text: &str, source: &str, target: &str) -> Result<String, BackendError> {
        let body = serde_json::json!({
            "q": text,
            "source": source,
            "target": target,
            "format": "text",
        });
        let mut request = self
            .agent
            .post(&self.endpoint)
            .header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            request = request.query("key", key);
        }
        let mut response = request
            .send(body.to_string())
            .map_err(|e| BackendError(e.to_string()))?;
        let raw = response
            .body_mut()
            .read_to_string()
            .map_err(|e| BackendError(e.to_string()))?;
        parse_translation_response(&raw)
    }
}

pub(crate) fn parse_translation_response(raw: &str) -> Result<String, BackendError> {
    let value: serde_json::Value =
        serde_json::from_str(raw).map_err(|e| BackendError(format!("bad response: {e}")))?;
    value
        .pointer("/data/translations/0/translatedText")
        .and_then(|v| v.as_str())
        .map(str::to_string)
        .ok_or_else(|| BackendError(format!("response lacks translatedText: {raw}")))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub attempts: usize,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 3,
            base_delay: Duration::from_millis(200),
        }
    }
}

impl RetryPolicy {
    /// Calls `f` until it succeeds or the attempts run out, doubling the
    /// delay after each failure.
    pub fn run<T>(
        &self,
        mut f: impl FnMut() -> Result<T, BackendError>,
    ) -> Result<T, BackendError> {
        let mut delay = self.base_delay;
        let mut last = BackendError("no attempts made".into());
        for attempt in 0..self.attempts.max(1) {
            match f() {
                Ok(v) => return Ok(v),
                Err(e) => last = e,
            }
            if attempt + 1 < self.attempts && !delay.is_zero() {
                thread::sleep(delay);
                delay *= 2;
            }
        }
        Err(last)
    }
}

type CacheKey = (String, String, String);

/// Memoizes another backend, optionally persisted as a TSV sidecar with rows
/// `text<TAB>src<TAB>tgt<TAB>translation`.
pub struct CachedBackend<B> {
    inner: B,
    entries: Mutex<HashMap<CacheKey, String>>,
    path: Option<PathBuf>,
}

impl<B: TranslationBackend> CachedBackend<B> {
    pub fn in_memory(inner: B) -> Self {
        CachedBackend {
            inner,
            entries: Mutex::new(HashMap::new()),
            path: None,
        }
    }

    /// Loads existing entries from `path` if the file exists.
    pub fn with_file(inner: B, path: impl Into<PathBuf>) -> io::Result<Self> {
        let path = path.into();
        let mut entries = HashMap::new();
        if path.exists() {
            let reader = BufReader::new(fs::File::open(&path)?);
            for (i, line) in reader.lines().enumerate() {
                let line = line?;
                let fields: Vec<&str> = line.split('\t').collect();
                if let [text, src, tgt, translation] = fields[..] {
                    entries.insert(
                        (text.to_string(), src.to_string(), tgt.to_string()),
                        translation.to_string(),
                    );
                } else if !line.is_empty() {
                    return Err(io::Error::new(
                        io::ErrorKind::InvalidData,
                        format!(
                            "{}:{}: expected 4 tab-separated fields",
                            path.display(),
                            i + 1
                        ),
                    ));
                }
            }
        }
        Ok(CachedBackend {
            inner,
            entries: Mutex::new(entries),
            path: Some(path),
        })
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Writes the cache sidecar, rows sorted by key.
    pub fn save(&self) -> io::Result<()> {
        let Some(path) = &self.path else {
            return Ok(());
        };
        let entries = self.entries.lock().unwrap();
        let sorted: BTreeMap<&CacheKey, &String> = entries.iter().collect();
        let mut buf = Vec::new();
        for ((text, src, tgt), translation) in sorted {
            if [text, src, tgt]
                .iter()
                .any(|s| s.contains(['\t', '\n', '\r']))
            {
                continue;
            }
            writeln!(buf, "{text}\t{src}\t{tgt}\t{translation}")?;
        }
        write_atomic(path, &buf)
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(tmp, path)
}

impl<B: TranslationBackend> TranslationBackend for CachedBackend<B> {
    fn translate(&self, text: &str, source: &str, target: &str) -> Result<String, BackendError> {
        let key = (text.to_string(), source.to_string(), target.to_string());
        if let Some(hit) = self.entries.lock().unwrap().get(&key) {
            return Ok(hit.clone());
        }
        let translated = self.inner.translate(text, source, target)?;
        // Keeps sidecar rows one line each.
        let translated = translated.replace(['\t', '\n', '\r'], " ");
        self.entries.lock().unwrap().insert(key, translated.clone());
        Ok(translated)
    }
}

/// Runs `job(i)` for `i in 0..n` on up to `concurrency` threads; results come
/// back in index order regardless of completion order.
pub fn run_bounded<T: Send>(
    n: usize,
    concurrency: usize,
    job: impl Fn(usize) -> T + Sync,
) -> Vec<T> {
    let workers = concurrency.clamp(1, n.max(1));
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<T>>> = Mutex::new((0..n).map(|_| None).collect());
    thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let out = job(i);
                slots.lock().unwrap()[i] = Some(out);
            });
        }
    });
    slots
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|s| s.expect("every job ran"))
        .collect()
}
