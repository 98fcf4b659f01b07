//! Uniform access to masked-language-model backends.
//!
//! A backend answers two questions: the ranked fill-in candidates for a text
//! with one [`MASK_PLACEHOLDER`], and whether a word is a single vocabulary
//! token in post-"to " position. [`Client`] wraps a backend with request
//! validation, the on-disk prediction cache and a bounded worker fan-out.

pub mod cache;
pub mod mock;
pub mod protocol;
pub mod transport;

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::patterns::MASK_PLACEHOLDER;

pub use cache::{CacheStats, PredictionCache};
pub use mock::{FnBackend, MockBackend, MockKind};
pub use transport::{HttpBackend, RetryPolicy, StdioBackend};

/// A ranked fill-mask candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub token: String,
    pub score: f64,
}

impl Prediction {
    pub fn new(token: impl Into<String>, score: f64) -> Self {
        Prediction {
            token: token.into(),
            score,
        }
    }
}

/// Word-boundary markers used by common subword vocabularies.
const BOUNDARY_MARKERS: [&str; 3] = ["Ġ", "▁", "##"];

/// Strips vocabulary boundary markers and surrounding whitespace.
pub fn normalize_token(token: &str) -> &str {
    let mut t = token.trim();
    loop {
        match BOUNDARY_MARKERS.iter().find_map(|m| t.strip_prefix(m)) {
            Some(rest) => t = rest.trim_start(),
            None => return t,
        }
    }
}

/// How a predicted token is compared to the ACT verb.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchPolicy {
    #[default]
    CaseSensitive,
    CaseInsensitive,
}

impl MatchPolicy {
    pub fn matches(self, predicted: &str, act: &str) -> bool {
        let predicted = normalize_token(predicted);
        match self {
            MatchPolicy::CaseSensitive => predicted == act,
            MatchPolicy::CaseInsensitive => predicted.to_lowercase() == act.to_lowercase(),
        }
    }
}

/// A masked language model reachable by the harness.
///
/// Implementations must be deterministic: the same text always yields the
/// same ranking, ties included.
pub trait MaskedLm: Send + Sync {
    fn backend_id(&self) -> &str;

    /// The model's own mask string, when known.
    fn mask_token(&self) -> Option<String>;

    /// Ranked predictions for every text, in request order.
    fn fill_mask_batch(&self, texts: &[String], top_k: usize) -> Result<Vec<Vec<Prediction>>>;

    /// Single-token answers for every word, in request order.
    fn single_token_batch(&self, words: &[String]) -> Result<Vec<bool>>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Endpoint {
    Mock(MockKind),
    Http(String),
    /// Shell command speaking the wire protocol on stdin/stdout.
    Stdio(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub backend_id: String,
    pub mask_token: Option<String>,
    pub endpoint: Endpoint,
}

pub fn mock_backend(kind: MockKind) -> BackendDescriptor {
    BackendDescriptor {
        backend_id: kind.backend_id().to_string(),
        mask_token: Some(mock::MOCK_MASK_TOKEN.to_string()),
        endpoint: Endpoint::Mock(kind),
    }
}

impl BackendDescriptor {
    /// `backend` is either `mock:<kind>` (no endpoint allowed) or a
    /// checkpoint id served at `endpoint` (`http(s)://...` or
    /// `stdio:<command>`).
    pub fn parse(backend: &str, endpoint: Option<&str>) -> Result<Self> {
        if let Some(kind) = backend.strip_prefix("mock:") {
            if let Some(e) = endpoint {
                return Err(Error::InvalidInput(format!(
                    "mock backend {backend} does not take an endpoint (got {e})"
                )));
            }
            return Ok(mock_backend(kind.parse()?));
        }
        if backend.trim().is_empty() {
            return Err(Error::InvalidInput("empty backend id".into()));
        }
        let endpoint = endpoint.ok_or_else(|| {
            Error::InvalidInput(format!("backend {backend} needs an endpoint"))
        })?;
        let endpoint = match endpoint.strip_prefix("stdio:") {
            Some(cmd) => Endpoint::Stdio(cmd.to_string()),
            None if endpoint.starts_with("http://") || endpoint.starts_with("https://") => {
                Endpoint::Http(endpoint.to_string())
            }
            None => {
                return Err(Error::InvalidInput(format!(
                    "unsupported endpoint {endpoint:?}"
                )))
            }
        };
        Ok(BackendDescriptor {
            backend_id: backend.to_string(),
            mask_token: None,
            endpoint,
        })
    }

    pub fn connect(&self, retry: RetryPolicy) -> Result<Arc<dyn MaskedLm>> {
        Ok(match &self.endpoint {
            Endpoint::Mock(kind) => Arc::new(MockBackend::new(*kind)),
            Endpoint::Http(url) => Arc::new(HttpBackend::new(&self.backend_id, url, retry)),
            Endpoint::Stdio(cmd) => Arc::new(StdioBackend::new(&self.backend_id, cmd, retry)),
        })
    }
}

impl fmt::Display for BackendDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.backend_id)
    }
}

/// A validated fill-mask request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskQuery {
    pub text: String,
    pub top_k: usize,
}

impl MaskQuery {
    pub fn new(text: impl Into<String>, top_k: usize) -> Result<Self> {
        let text = text.into();
        validate_text(&text)?;
        if top_k == 0 {
            return Err(Error::InvalidInput("top_k must be at least 1".into()));
        }
        Ok(MaskQuery { text, top_k })
    }
}

fn validate_text(text: &str) -> Result<()> {
    match text.matches(MASK_PLACEHOLDER).count() {
        1 => Ok(()),
        n => Err(Error::InvalidInput(format!(
            "expected exactly one {MASK_PLACEHOLDER} in {text:?}, found {n}"
        ))),
    }
}

fn validate_word(word: &str) -> Result<()> {
    if word.is_empty() {
        Err(Error::InvalidInput("empty word".into()))
    } else if word.chars().any(char::is_whitespace) {
        Err(Error::InvalidInput(format!("word {word:?} contains whitespace")))
    } else {
        Ok(())
    }
}

/// Normalizes tokens and checks the response contract for one text.
fn check_response(text: &str, top_k: usize, preds: Vec<Prediction>) -> Result<Vec<Prediction>> {
    if preds.is_empty() || preds.len() > top_k {
        return Err(Error::Protocol(format!(
            "{} predictions for top_k={top_k} on {text:?}",
            preds.len()
        )));
    }
    let mut out = Vec::with_capacity(preds.len());
    let mut last = f64::INFINITY;
    for p in preds {
        let token = normalize_token(&p.token);
        if token.is_empty() {
            return Err(Error::Protocol(format!("empty token for {text:?}")));
        }
        if p.score.is_nan() || p.score > last {
            return Err(Error::Protocol(format!("scores not ranked for {text:?}")));
        }
        last = p.score;
        out.push(Prediction::new(token, p.score));
    }
    Ok(out)
}

pub const DEFAULT_WORKERS: usize = 4;
pub const DEFAULT_BATCH_SIZE: usize = 64;

/// Backend handle used by selection and evaluation.
#[derive(Clone)]
pub struct Client {
    backend: Arc<dyn MaskedLm>,
    cache: Option<Arc<PredictionCache>>,
    workers: usize,
    batch_size: usize,
    matching: MatchPolicy,
}

impl fmt::Debug for Client {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Client")
            .field("backend", &self.backend.backend_id())
            .field("workers", &self.workers)
            .field("batch_size", &self.batch_size)
            .field("matching", &self.matching)
            .finish()
    }
}

impl Client {
    pub fn new(backend: Arc<dyn MaskedLm>) -> Self {
        Client {
            backend,
            cache: None,
            workers: DEFAULT_WORKERS,
            batch_size: DEFAULT_BATCH_SIZE,
            matching: MatchPolicy::default(),
        }
    }

    pub fn mock(kind: MockKind) -> Self {
        Client::new(Arc::new(MockBackend::new(kind)))
    }

    pub fn with_cache(mut self, cache: Arc<PredictionCache>) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers.max(1);
        self
    }

    pub fn with_batch_size(mut self, batch_size: usize) -> Self {
        self.batch_size = batch_size.max(1);
        self
    }

    pub fn with_match_policy(mut self, matching: MatchPolicy) -> Self {
        self.matching = matching;
        self
    }

    pub fn backend_id(&self) -> &str {
        self.backend.backend_id()
    }

    pub fn mask_token(&self) -> Option<String> {
        self.backend.mask_token()
    }

    pub fn match_policy(&self) -> MatchPolicy {
        self.matching
    }

    pub fn cache_stats(&self) -> CacheStats {
        self.cache.as_ref().map(|c| c.stats()).unwrap_or_default()
    }

    pub fn matches(&self, predicted: &str, act: &str) -> bool {
        self.matching.matches(predicted, act)
    }

    /// Ranked predictions for every text, served from the cache when
    /// possible; misses are fanned out to the backend in fixed-size batches.
    pub fn fill_mask(&self, texts: &[String], top_k: usize) -> Result<Vec<Vec<Prediction>>> {
        if top_k == 0 {
            return Err(Error::InvalidInput("top_k must be at least 1".into()));
        }
        for t in texts {
            validate_text(t)?;
        }
        let backend_id = self.backend.backend_id();
        let mut out: Vec<Option<Vec<Prediction>>> = match &self.cache {
            Some(cache) => texts.iter().map(|t| cache.get(backend_id, t, top_k)).collect(),
            None => vec![None; texts.len()],
        };
        let missing: Vec<usize> = (0..texts.len()).filter(|&i| out[i].is_none()).collect();
        if missing.is_empty() {
            return Ok(out.into_iter().flatten().collect());
        }
        let fetched = self.fan_out(&missing, |batch: &[usize]| {
            let batch_texts: Vec<String> = batch.iter().map(|&i| texts[i].clone()).collect();
            let responses = self.backend.fill_mask_batch(&batch_texts, top_k)?;
            if responses.len() != batch_texts.len() {
                return Err(Error::Protocol(format!(
                    "{} responses for {} texts",
                    responses.len(),
                    batch_texts.len()
                )));
            }
            let checked = batch_texts
                .iter()
                .zip(responses)
                .map(|(t, preds)| check_response(t, top_k, preds))
                .collect::<Result<Vec<_>>>()?;
            if let Some(cache) = &self.cache {
                cache.put_many(backend_id, top_k, batch_texts.iter().zip(&checked))?;
            }
            Ok(checked)
        })?;
        for (i, preds) in missing.into_iter().zip(fetched) {
            out[i] = Some(preds);
        }
        Ok(out.into_iter().flatten().collect())
    }

    /// Normalized top-1 token for every text.
    pub fn top1(&self, texts: &[String]) -> Result<Vec<String>> {
        Ok(self
            .fill_mask(texts, 1)?
            .into_iter()
            .map(|mut preds| preds.swap_remove(0).token)
            .collect())
    }

    pub fn single_token(&self, words: &[String]) -> Result<Vec<bool>> {
        for w in words {
            validate_word(w)?;
        }
        let idx: Vec<usize> = (0..words.len()).collect();
        self.fan_out(&idx, |batch: &[usize]| {
            let batch_words: Vec<String> = batch.iter().map(|&i| words[i].clone()).collect();
            let answers = self.backend.single_token_batch(&batch_words)?;
            if answers.len() != batch_words.len() {
                return Err(Error::Protocol(format!(
                    "{} answers for {} words",
                    answers.len(),
                    batch_words.len()
                )));
            }
            Ok(answers)
        })
    }

    /// Runs `f` over batches of `items` on at most `workers` threads and
    /// reassembles results in input order. The error reported is the one of
    /// the earliest failing batch.
    fn fan_out<I, T, F>(&self, items: &[I], f: F) -> Result<Vec<T>>
    where
        I: Sync,
        T: Send,
        F: Fn(&[I]) -> Result<Vec<T>> + Sync,
    {
        let batches: Vec<&[I]> = items.chunks(self.batch_size).collect();
        let workers = self.workers.min(batches.len());
        if workers <= 1 {
            return batches.into_iter().try_fold(Vec::new(), |mut acc, b| {
                acc.extend(f(b)?);
                Ok(acc)
            });
        }
        let next = AtomicUsize::new(0);
        let abort = AtomicBool::new(false);
        let slots: Mutex<Vec<Option<Result<Vec<T>>>>> =
            Mutex::new((0..batches.len()).map(|_| None).collect());
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    if abort.load(Ordering::Relaxed) {
                        break;
                    }
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    let Some(batch) = batches.get(i) else { break };
                    let r = f(batch);
                    if r.is_err() {
                        abort.store(true, Ordering::Relaxed);
                    }
                    slots.lock().expect("fan-out slots poisoned")[i] = Some(r);
                });
            }
        });
        let mut out = Vec::with_capacity(items.len());
        for slot in slots.into_inner().expect("fan-out slots poisoned") {
            match slot {
                Some(r) => out.extend(r?),
                // unstarted batches all come after the failing one
                None => unreachable!("batch skipped without a preceding error"),
            }
        }
        Ok(out)
    }
}

/// Single fill-mask query.
pub fn fill_mask(client: &Client, q: &MaskQuery) -> Result<Vec<Prediction>> {
    Ok(client
        .fill_mask(std::slice::from_ref(&q.text), q.top_k)?
        .swap_remove(0))
}

pub fn is_single_token(client: &Client, word: &str) -> Result<bool> {
    Ok(client.single_token(&[word.to_string()])?[0])
}

impl FromStr for MatchPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "case_sensitive" | "case-sensitive" => Ok(MatchPolicy::CaseSensitive),
            "case_insensitive" | "case-insensitive" => Ok(MatchPolicy::CaseInsensitive),
            other => Err(Error::InvalidInput(format!("unknown match policy {other:?}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_strips_markers() {
        assert_eq!(normalize_token("Ġsmoke"), "smoke");
        assert_eq!(normalize_token("▁dance"), "dance");
        assert_eq!(normalize_token("##ing"), "ing");
        assert_eq!(normalize_token("  chat "), "chat");
        assert_eq!(normalize_token("Smoke"), "Smoke");
    }

    #[test]
    fn match_policies() {
        assert!(MatchPolicy::CaseSensitive.matches("Ġsmoke", "smoke"));
        assert!(!MatchPolicy::CaseSensitive.matches("Smoke", "smoke"));
        assert!(MatchPolicy::CaseInsensitive.matches("Smoke", "smoke"));
    }

    #[test]
    fn query_preconditions() {
        assert!(MaskQuery::new("no mask here.", 1).is_err());
        assert!(MaskQuery::new("⟨MASK⟩ and ⟨MASK⟩.", 1).is_err());
        assert!(MaskQuery::new("She is happy to ⟨MASK⟩.", 0).is_err());
        assert!(MaskQuery::new("She is happy to ⟨MASK⟩.", 3).is_ok());
    }

    #[test]
    fn single_token_preconditions() {
        let client = Client::mock(MockKind::Perfect);
        assert!(is_single_token(&client, "sail").unwrap());
        assert!(matches!(is_single_token(&client, ""), Err(Error::InvalidInput(_))));
        assert!(is_single_token(&client, "give up").is_err());
    }

    #[test]
    fn response_contract() {
        let ok = check_response("t", 2, vec![Prediction::new("Ġa", 0.9), Prediction::new("b", 0.1)]);
        assert_eq!(ok.unwrap()[0].token, "a");
        assert!(check_response("t", 1, vec![Prediction::new("a", 0.9), Prediction::new("b", 0.1)]).is_err());
        assert!(check_response("t", 2, vec![Prediction::new("a", 0.1), Prediction::new("b", 0.9)]).is_err());
        assert!(check_response("t", 2, vec![Prediction::new("Ġ", 0.1)]).is_err());
        assert!(check_response("t", 2, vec![]).is_err());
    }

    #[test]
    fn descriptor_parsing() {
        let d = BackendDescriptor::parse("mock:perfect", None).unwrap();
        assert_eq!(d.backend_id, "mock:perfect");
        assert!(BackendDescriptor::parse("mock:blind", Some("http://x")).is_err());
        assert!(BackendDescriptor::parse("mock:clever", None).is_err());
        assert!(BackendDescriptor::parse("roberta-large", None).is_err());
        let h = BackendDescriptor::parse("roberta-large", Some("http://localhost:8000/v1")).unwrap();
        assert_eq!(h.endpoint, Endpoint::Http("http://localhost:8000/v1".into()));
        let s = BackendDescriptor::parse("bert-base-cased", Some("stdio:python serve.py")).unwrap();
        assert_eq!(s.endpoint, Endpoint::Stdio("python serve.py".into()));
        assert!(BackendDescriptor::parse("bert-base-cased", Some("ftp://x")).is_err());
    }

    #[test]
    fn fan_out_preserves_order_for_any_worker_count() {
        let texts: Vec<String> = (0..50)
            .map(|i| format!("Ann is a cook who likes to {}. She is happy to ⟨MASK⟩.", "v".repeat(i + 1)))
            .collect();
        let reference = Client::mock(MockKind::Blind)
            .with_workers(1)
            .top1(&texts)
            .unwrap();
        for workers in [2, 3, 16] {
            let c = Client::mock(MockKind::Blind)
                .with_workers(workers)
                .with_batch_size(3);
            assert_eq!(c.top1(&texts).unwrap(), reference);
        }
        assert_eq!(reference[7], "vvvvvvvv");
    }
}
