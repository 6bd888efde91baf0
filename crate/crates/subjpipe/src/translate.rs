//! Language adaptation: convert non-English splits to English through a
//! pluggable machine-translation backend, with a persistent on-disk cache
//! keyed by (source language, SHA-256 of the text).
//!
//! English splits pass through untouched. Backend calls retry up to three
//! times; a sentence that still fails aborts the whole split so train and
//! test stay aligned. Up to four requests may be in flight at once, but
//! results are assembled in input order and cache writes are serialized.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use sha2::{Digest, Sha256};

use crate::corpus::{CorpusSplit, Language};
use crate::error::{Error, Result};
use crate::ioutil;

/// Credential for the HTTP backend; when unset the CLI falls back to the
/// offline stub.
pub const MT_KEY_ENV: &str = "SUBJPIPE_MT_KEY";
/// Endpoint for the HTTP backend.
pub const MT_URL_ENV: &str = "SUBJPIPE_MT_URL";

const MAX_ATTEMPTS: u32 = 3;
#[cfg(feature = "parallel")]
const MAX_IN_FLIGHT: usize = 4;

/// A machine-translation service able to turn source-language text into
/// English.
pub trait TranslationBackend: Send + Sync {
    fn name(&self) -> &str;

    fn translate(&self, text: &str, source: Language) -> Result<String>;

    /// Pause between retry attempts. HTTP backends keep the one-second
    /// default; offline backends return zero.
    fn retry_backoff(&self) -> Duration {
        Duration::from_secs(1)
    }
}

pub fn content_hash(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    let mut out = String::with_capacity(64);
    for byte in digest {
        out.push_str(&format!("{byte:02x}"));
    }
    out
}

fn escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for ch in text.chars() {
        match ch {
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            _ => out.push(ch),
        }
    }
    out
}

fn unescape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut chars = text.chars();
    while let Some(ch) = chars.next() {
        if ch == '\\' {
            match chars.next() {
                Some('n') => out.push('\n'),
                Some('t') => out.push('\t'),
                Some('\\') => out.push('\\'),
                Some(other) => {
                    out.push('\\');
                    out.push(other);
                }
                None => out.push('\\'),
            }
        } else {
            out.push(ch);
        }
    }
    out
}

/// Persistent translation memory backed by a line-oriented TSV file
/// (`lang\tsha256\ttranslation`, with newlines and tabs escaped).
#[derive(Debug)]
pub struct TranslationCache {
    entries: HashMap<(Language, String), String>,
    path: PathBuf,
    dirty: bool,
}

impl TranslationCache {
    /// Load the cache at `path`, starting empty if the file does not exist.
    pub fn open(path: &Path) -> Result<TranslationCache> {
        let mut entries = HashMap::new();
        if path.exists() {
            let content = ioutil::read_lossy(path)?;
            for (lineno, line) in ioutil::data_lines(&content) {
                let fields: Vec<&str> = line.splitn(3, '\t').collect();
                if fields.len() != 3 {
                    return Err(Error::Malformed {
                        path: path.to_path_buf(),
                        line: lineno,
                        msg: "expected `lang\\tsha256\\ttranslation`".to_string(),
                    });
                }
                let lang = Language::from_tag(fields[0])?;
                entries.insert((lang, fields[1].to_string()), unescape(fields[2]));
            }
        }
        Ok(TranslationCache {
            entries,
            path: path.to_path_buf(),
            dirty: false,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn get(&self, lang: Language, text: &str) -> Option<&str> {
        self.entries
            .get(&(lang, content_hash(text)))
            .map(String::as_str)
    }

    pub fn insert(&mut self, lang: Language, text: &str, translation: String) {
        self.entries.insert((lang, content_hash(text)), translation);
        self.dirty = true;
    }

    /// Persist to disk (sorted, atomic). No-op when nothing changed.
    pub fn save(&mut self) -> Result<()> {
        if !self.dirty {
            return Ok(());
        }
        let mut rows: Vec<(&(Language, String), &String)> = self.entries.iter().collect();
        rows.sort_by(|a, b| (a.0 .0.tag(), &a.0 .1).cmp(&(b.0 .0.tag(), &b.0 .1)));
        let mut out = String::new();
        for ((lang, hash), translation) in rows {
            out.push_str(lang.tag());
            out.push('\t');
            out.push_str(hash);
            out.push('\t');
            out.push_str(&escape(translation));
            out.push('\n');
        }
        ioutil::write_atomic(&self.path, out.as_bytes())?;
        self.dirty = false;
        Ok(())
    }
}

fn translate_with_retry(
    backend: &dyn TranslationBackend,
    id: &str,
    text: &str,
    source: Language,
) -> Result<String> {
    let mut last = String::new();
    for attempt in 1..=MAX_ATTEMPTS {
        match backend.translate(text, source) {
            Ok(translation) => return Ok(translation),
            Err(err) => {
                last = err.to_string();
                if attempt < MAX_ATTEMPTS {
                    let backoff = backend.retry_backoff();
                    if !backoff.is_zero() {
                        std::thread::sleep(backoff);
                    }
                }
            }
        }
    }
    Err(Error::Translation {
        id: id.to_string(),
        attempts: MAX_ATTEMPTS,
        reason: last,
    })
}

#[cfg(feature = "parallel")]
fn run_pending(
    backend: &dyn TranslationBackend,
    pending: &[(usize, String, String)],
    source: Language,
) -> Vec<Result<String>> {
    use rayon::prelude::*;
    let threads = MAX_IN_FLIGHT.min(pending.len()).max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .expect("translation pool");
    pool.install(|| {
        pending
            .par_iter()
            .map(|(_, id, text)| translate_with_retry(backend, id, text, source))
            .collect()
    })
}

#[cfg(not(feature = "parallel"))]
fn run_pending(
    backend: &dyn TranslationBackend,
    pending: &[(usize, String, String)],
    source: Language,
) -> Vec<Result<String>> {
    pending
        .iter()
        .map(|(_, id, text)| translate_with_retry(backend, id, text, source))
        .collect()
}

/// Translate every row of a non-English split to English, preserving ids,
/// labels, confidence flags, and order. Cache hits never call the backend;
/// every backend result is written back to the cache file.
pub fn translate_split(
    split: &CorpusSplit,
    backend: &dyn TranslationBackend,
    cache: &mut TranslationCache,
) -> Result<CorpusSplit> {
    if split.language == Language::En {
        return Ok(split.clone());
    }
    let source = split.language;

    let mut texts: Vec<Option<String>> = Vec::with_capacity(split.rows.len());
    let mut pending: Vec<(usize, String, String)> = Vec::new();
    for (i, row) in split.rows.iter().enumerate() {
        match cache.get(source, &row.text) {
            Some(hit) => texts.push(Some(hit.to_string())),
            None => {
                texts.push(None);
                pending.push((i, row.sentence_id.clone(), row.text.clone()));
            }
        }
    }

    if !pending.is_empty() {
        let results = run_pending(backend, &pending, source);
        for ((i, _, text), result) in pending.iter().zip(results) {
            let translation = result?;
            cache.insert(source, text, translation.clone());
            texts[*i] = Some(translation);
        }
        cache.save()?;
    }

    let rows = split
        .rows
        .iter()
        .zip(texts)
        .map(|(row, text)| {
            let mut row = row.clone();
            row.text = text.expect("every row translated");
            row.language = Language::En;
            row
        })
        .collect();
    Ok(CorpusSplit {
        language: Language::En,
        rows,
        ..*split
    })
}

/// Offline test double: a fixed source-to-English lookup table. Unmapped
/// text comes back prefixed with `EN:` so fallthrough is detectable.
#[derive(Debug, Default)]
pub struct StubBackend {
    mapping: HashMap<String, String>,
}

impl StubBackend {
    /// Stub with an empty table: every text falls through to `EN:` + text.
    pub fn empty() -> StubBackend {
        StubBackend::default()
    }

    /// Load a two-column `source\tenglish` TSV.
    pub fn from_path(path: &Path) -> Result<StubBackend> {
        let content = ioutil::read_lossy(path)?;
        let mut mapping = HashMap::new();
        for (_lineno, line) in ioutil::data_lines(&content) {
            if let Some((source, english)) = line.split_once('\t') {
                mapping.insert(source.to_string(), english.to_string());
            }
        }
        Ok(StubBackend { mapping })
    }
}

impl TranslationBackend for StubBackend {
    fn name(&self) -> &str {
        "stub"
    }

    fn translate(&self, text: &str, _source: Language) -> Result<String> {
        Ok(self
            .mapping
            .get(text)
            .cloned()
            .unwrap_or_else(|| format!("EN:{text}")))
    }

    fn retry_backoff(&self) -> Duration {
        Duration::ZERO
    }
}

/// Vendor-neutral HTTP adapter. Sends
/// `POST <endpoint>` with JSON body `{"text": ..., "source": ..., "target": "en"}`
/// and a `Bearer` credential, and expects `{"translation": ...}` back.
pub struct HttpBackend {
    endpoint: String,
    api_key: String,
    backoff: Duration,
    agent: ureq::Agent,
}

impl HttpBackend {
    pub fn new(endpoint: impl Into<String>, api_key: impl Into<String>) -> HttpBackend {
        HttpBackend {
            endpoint: endpoint.into(),
            api_key: api_key.into(),
            backoff: Duration::from_secs(1),
            agent: ureq::Agent::new_with_defaults(),
        }
    }

    /// Read the credential from [`MT_KEY_ENV`].
    pub fn from_env(endpoint: impl Into<String>) -> Result<HttpBackend> {
        let key = std::env::var(MT_KEY_ENV)
            .map_err(|_| Error::invalid(format!("{MT_KEY_ENV} is not set")))?;
        Ok(HttpBackend::new(endpoint, key))
    }

    pub fn with_backoff(mut self, backoff: Duration) -> HttpBackend {
        self.backoff = backoff;
        self
    }

    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Backend {
            name: "http".to_string(),
            msg: msg.into(),
        }
    }
}

impl TranslationBackend for HttpBackend {
    fn name(&self) -> &str {
        "http"
    }

    fn translate(&self, text: &str, source: Language) -> Result<String> {
        let body = serde_json::json!({
            "text": text,
            "source": source.tag(),
            "target": "en",
        });
        let mut response = self
            .agent
            .post(&self.endpoint)
            .header("authorization", &format!("Bearer {}", self.api_key))
            .send_json(&body)
            .map_err(|e| self.err(e.to_string()))?;
        let payload: serde_json::Value = response
            .body_mut()
            .read_json()
            .map_err(|e| self.err(format!("bad response body: {e}")))?;
        payload
            .get("translation")
            .and_then(|v| v.as_str())
            .map(str::to_string)
            .ok_or_else(|| self.err("response is missing \"translation\""))
    }

    fn retry_backoff(&self) -> Duration {
        self.backoff
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{LabeledSentence, SplitKind, SubjLabel};
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn split(language: Language, texts: &[&str]) -> CorpusSplit {
        CorpusSplit {
            split: SplitKind::Train,
            language,
            rows: texts
                .iter()
                .enumerate()
                .map(|(i, t)| LabeledSentence {
                    sentence_id: format!("s{i}"),
                    text: t.to_string(),
                    label: Some(if i % 2 == 0 { SubjLabel::Obj } else { SubjLabel::Subj }),
                    language,
                    solved_conflict: None,
                })
                .collect(),
            skipped_count: 0,
        }
    }

    struct Counting<B> {
        inner: B,
        calls: AtomicUsize,
    }

    impl<B: TranslationBackend> Counting<B> {
        fn new(inner: B) -> Self {
            Counting { inner, calls: AtomicUsize::new(0) }
        }
    }

    impl<B: TranslationBackend> TranslationBackend for Counting<B> {
        fn name(&self) -> &str {
            self.inner.name()
        }
        fn translate(&self, text: &str, source: Language) -> Result<String> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            self.inner.translate(text, source)
        }
        fn retry_backoff(&self) -> Duration {
            Duration::ZERO
        }
    }

    struct FailingBackend {
        failures_before_success: usize,
        calls: AtomicUsize,
    }

    impl TranslationBackend for FailingBackend {
        fn name(&self) -> &str {
            "failing"
        }
        fn translate(&self, text: &str, _source: Language) -> Result<String> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            if n < self.failures_before_success {
                Err(Error::Backend { name: "failing".into(), msg: "boom".into() })
            } else {
                Ok(format!("EN:{text}"))
            }
        }
        fn retry_backoff(&self) -> Duration {
            Duration::ZERO
        }
    }

    #[test]
    fn english_split_passes_through_without_backend_calls() {
        let dir = tempfile::tempdir().unwrap();
        let mut cache = TranslationCache::open(&dir.path().join("cache.tsv")).unwrap();
        let backend = Counting::new(StubBackend::empty());
        let input = split(Language::En, &["Hello.", "More."]);
        let out = translate_split(&input, &backend, &mut cache).unwrap();
        assert_eq!(out, input);
        assert_eq!(backend.calls.load(Ordering::SeqCst), 0);
        assert!(!cache.path().exists());
    }

    #[test]
    fn stub_mapping_and_fallthrough() {
        let dir = tempfile::tempdir().unwrap();
        let mapping = dir.path().join("map.tsv");
        std::fs::write(&mapping, "Das stimmt.\tThat is right.\n").unwrap();
        let backend = StubBackend::from_path(&mapping).unwrap();
        assert_eq!(backend.translate("Das stimmt.", Language::De).unwrap(), "That is right.");
        assert_eq!(backend.translate("xyz", Language::De).unwrap(), "EN:xyz");

        let empty = StubBackend::empty();
        assert_eq!(empty.translate("abc", Language::De).unwrap(), "EN:abc");
    }

    #[test]
    fn stub_requires_mapping_file() {
        assert!(StubBackend::from_path(Path::new("/nonexistent/map.tsv")).is_err());
    }

    #[test]
    fn translation_replaces_text_and_keeps_labels_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let mapping = dir.path().join("map.tsv");
        std::fs::write(&mapping, "È un fatto.\tIt is a fact.\n").unwrap();
        let backend = StubBackend::from_path(&mapping).unwrap();
        let mut cache = TranslationCache::open(&dir.path().join("cache.tsv")).unwrap();
        let input = split(Language::It, &["È un fatto.", "Altro testo."]);
        let out = translate_split(&input, &backend, &mut cache).unwrap();
        assert_eq!(out.language, Language::En);
        assert_eq!(out.rows[0].text, "It is a fact.");
        assert_eq!(out.rows[1].text, "EN:Altro testo.");
        for (a, b) in input.rows.iter().zip(&out.rows) {
            assert_eq!(a.sentence_id, b.sentence_id);
            assert_eq!(a.label, b.label);
            assert_eq!(b.language, Language::En);
        }
    }

    #[test]
    fn cache_hit_skips_backend_and_second_run_is_identical() {
        let dir = tempfile::tempdir().unwrap();
        let cache_path = dir.path().join("cache.tsv");
        let input = split(Language::De, &["Das ist gut.", "Noch einer."]);

        let backend = Counting::new(StubBackend::empty());
        let mut cache = TranslationCache::open(&cache_path).unwrap();
        let first = translate_split(&input, &backend, &mut cache).unwrap();
        assert_eq!(backend.calls.load(Ordering::SeqCst), 2);

        // reload the cache from disk: zero backend calls, identical output
        let backend2 = Counting::new(StubBackend::empty());
        let mut cache2 = TranslationCache::open(&cache_path).unwrap();
        let second = translate_split(&input, &backend2, &mut cache2).unwrap();
        assert_eq!(backend2.calls.load(Ordering::SeqCst), 0);
        assert_eq!(first, second);
    }

    #[test]
    fn seeded_cache_value_wins_over_backend() {
        let dir = tempfile::tempdir().unwrap();
        let cache_path = dir.path().join("cache.tsv");
        let mut cache = TranslationCache::open(&cache_path).unwrap();
        cache.insert(Language::De, "Das ist gut.", "This is good.".to_string());
        let backend = Counting::new(StubBackend::empty());
        let input = split(Language::De, &["Das ist gut."]);
        let out = translate_split(&input, &backend, &mut cache).unwrap();
        assert_eq!(out.rows[0].text, "This is good.");
        assert_eq!(backend.calls.load(Ordering::SeqCst), 0);
    }

    #[test]
    fn cache_round_trips_tabs_and_newlines() {
        let dir = tempfile::tempdir().unwrap();
        let cache_path = dir.path().join("cache.tsv");
        let tricky = "line one\nline\ttwo \\n literal";
        {
            let mut cache = TranslationCache::open(&cache_path).unwrap();
            cache.insert(Language::Ar, "مرحبا", tricky.to_string());
            cache.save().unwrap();
        }
        let cache = TranslationCache::open(&cache_path).unwrap();
        assert_eq!(cache.get(Language::Ar, "مرحبا"), Some(tricky));
        assert_eq!(cache.len(), 1);
    }

    #[test]
    fn hash_is_lowercase_hex_sha256() {
        // SHA-256 of the empty string, a fixed vector
        assert_eq!(
            content_hash(""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }

    #[test]
    fn retries_then_succeeds() {
        let backend = FailingBackend { failures_before_success: 2, calls: AtomicUsize::new(0) };
        let dir = tempfile::tempdir().unwrap();
        let mut cache = TranslationCache::open(&dir.path().join("cache.tsv")).unwrap();
        let input = split(Language::Bg, &["Текст."]);
        let out = translate_split(&input, &backend, &mut cache).unwrap();
        assert_eq!(out.rows[0].text, "EN:Текст.");
        assert_eq!(backend.calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn failure_after_three_attempts_names_the_sentence() {
        let backend = FailingBackend { failures_before_success: 99, calls: AtomicUsize::new(0) };
        let dir = tempfile::tempdir().unwrap();
        let mut cache = TranslationCache::open(&dir.path().join("cache.tsv")).unwrap();
        let input = split(Language::Bg, &["Текст."]);
        let err = translate_split(&input, &backend, &mut cache).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("s0"), "sentence id missing from: {msg}");
        assert!(msg.contains('3'), "attempt count missing from: {msg}");
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn labels_and_order_survive_translation(texts in prop::collection::vec("[a-zA-Zäöü ]{1,12}", 1..12)) {
                let dir = tempfile::tempdir().unwrap();
                let mut cache = TranslationCache::open(&dir.path().join("cache.tsv")).unwrap();
                let backend = StubBackend::empty();
                let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
                let input = split(Language::De, &refs);
                let out = translate_split(&input, &backend, &mut cache).unwrap();
                prop_assert_eq!(out.rows.len(), input.rows.len());
                for (a, b) in input.rows.iter().zip(&out.rows) {
                    prop_assert_eq!(&a.sentence_id, &b.sentence_id);
                    prop_assert_eq!(a.label, b.label);
                }
            }
        }
    }
}
