//! Completion-endpoint client: rank classification, generation, caching and
//! bounded-parallel dispatch, plus a scripted mock model and server.

mod cache;
mod http;
pub mod mock;
mod server;
pub mod wire;

use std::collections::HashMap;
use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed;
use crate::tokenizer::Tokenizer;

pub use cache::ResponseCache;
pub use http::HttpBackend;
pub use mock::{BehaviorRule, GenerationBehavior, GenerationRule, MockModel, MockScript, Sampling};
pub use server::{mock_serve, MockServerHandle};

pub const DEFAULT_TOP_K: u32 = 100;
/// Tokens requested by the generation fallback for classification.
pub const FALLBACK_MAX_TOKENS: u32 = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LmError {
    #[error("endpoint unavailable: {0}")]
    EndpointUnavailable(String),
    #[error("transient endpoint failure (HTTP {status}): {message}")]
    Transient { status: u16, message: String },
    #[error("endpoint rejected the request (HTTP {status}): {message}")]
    Rejected { status: u16, message: String },
    #[error("endpoint returned no next-token log-probabilities")]
    LogprobsUnsupported,
    #[error("malformed endpoint response: {0}")]
    MalformedResponse(String),
    #[error("cache error: {0}")]
    Cache(String),
    #[error("port {0} is already in use")]
    PortInUse(u16),
    #[error("invalid mock script: {0}")]
    InvalidScript(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model_name: String,
    /// Environment variable holding the API key, if any.
    pub api_key_env: Option<String>,
    pub max_parallel: usize,
    pub request_timeout_secs: u64,
    /// Total attempts per request, including the first.
    pub max_retries: u32,
    pub backoff_base_ms: u64,
    pub logprob_top_k: u32,
    /// Use `/v1/chat/completions` instead of `/v1/completions`.
    pub chat: bool,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8000".to_string(),
            model_name: "mock".to_string(),
            api_key_env: None,
            max_parallel: 8,
            request_timeout_secs: 120,
            max_retries: 5,
            backoff_base_ms: 250,
            logprob_top_k: DEFAULT_TOP_K,
            chat: false,
        }
    }
}

impl EndpointConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_parallel == 0 {
            return Err("max_parallel must be >= 1".to_string());
        }
        if self.max_retries == 0 {
            return Err("max_retries must be >= 1".to_string());
        }
        if self.logprob_top_k == 0 {
            return Err("logprob_top_k must be >= 1".to_string());
        }
        Ok(())
    }
}

/// Decoding request in endpoint-neutral form. Temperature is always zero.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub model: String,
    pub prompt: String,
    pub max_tokens: u32,
    pub logprobs: Option<u32>,
    pub chat: bool,
}

impl CompletionRequest {
    /// Content address: model, full prompt and decoding parameters.
    pub fn cache_key(&self) -> String {
        let params = format!(
            "max_tokens={};temperature=0;logprobs={};chat={}",
            self.max_tokens,
            self.logprobs.map_or_else(|| "none".to_string(), |k| k.to_string()),
            self.chat
        );
        seed::digest_hex(&[self.model.as_bytes(), self.prompt.as_bytes(), params.as_bytes()])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

/// Endpoint answer in endpoint-neutral form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResponse {
    pub text: String,
    /// First-position alternatives, or `None` when the endpoint gave none.
    pub top_tokens: Option<Vec<(String, f64)>>,
    pub usage: Usage,
}

pub trait CompletionBackend: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, LmError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseKind {
    Classification,
    Generation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmResponse {
    pub kind: ResponseKind,
    /// Sorted by descending log-probability, at most `top_k` long.
    pub top_tokens: Vec<(String, f64)>,
    pub completion_text: String,
    pub usage: Usage,
    pub cache_hit: bool,
    /// Classification answered through constrained generation.
    pub fallback: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Prediction {
    Option(usize),
    NoMatch,
}

impl Prediction {
    pub fn option(self) -> Option<usize> {
        match self {
            Prediction::Option(i) => Some(i),
            Prediction::NoMatch => None,
        }
    }
}

/// Options of a task with the text of each option's first token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OptionSet {
    pub options: Vec<String>,
    pub first_tokens: Vec<String>,
}

impl OptionSet {
    pub fn new(options: &[String], tokenizer: &dyn Tokenizer) -> Self {
        let first_tokens = options
            .iter()
            .map(|o| tokenizer.first_token(o).unwrap_or(o).to_string())
            .collect();
        Self {
            options: options.to_vec(),
            first_tokens,
        }
    }

    /// Option a returned next-token string refers to.
    pub fn match_token(&self, token: &str) -> Option<usize> {
        let token = token.trim_start();
        if token.is_empty() {
            return None;
        }
        if let Some(i) = self.first_tokens.iter().position(|f| f == token) {
            return Some(i);
        }
        let mut hits = self
            .options
            .iter()
            .enumerate()
            .filter(|(_, o)| o.starts_with(token));
        match (hits.next(), hits.next()) {
            (Some((i, _)), None) => Some(i),
            _ => None,
        }
    }

    /// Option sharing the longest prefix with a generated completion.
    pub fn match_completion(&self, completion: &str) -> Option<usize> {
        let completion = completion.trim_start();
        let shared = |option: &str| {
            option
                .chars()
                .zip(completion.chars())
                .take_while(|(a, b)| a == b)
                .count()
        };
        let lengths: Vec<usize> = self.options.iter().map(|o| shared(o)).collect();
        let best = lengths.iter().copied().max().unwrap_or(0);
        if best == 0 || lengths.iter().filter(|&&l| l == best).count() > 1 {
            return None;
        }
        lengths.iter().position(|&l| l == best)
    }
}

/// Argmax over option first tokens among the returned alternatives.
pub fn rank_classify(top_tokens: &[(String, f64)], options: &OptionSet) -> Prediction {
    let mut best: Option<(f64, usize)> = None;
    for (token, logprob) in top_tokens {
        if let Some(i) = options.match_token(token) {
            if best.map_or(true, |(lp, _)| *logprob > lp) {
                best = Some((*logprob, i));
            }
        }
    }
    best.map_or(Prediction::NoMatch, |(_, i)| Prediction::Option(i))
}

fn sorted_top(mut tokens: Vec<(String, f64)>, top_k: u32) -> Vec<(String, f64)> {
    tokens.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    tokens.truncate(top_k as usize);
    tokens
}

#[derive(Debug, Clone)]
pub enum JobKind {
    Classify(Arc<OptionSet>),
    Generate { max_tokens: u32 },
}

#[derive(Debug, Clone)]
pub struct Job {
    pub text: String,
    pub kind: JobKind,
    /// Jobs with equal group keys share a context prefix and are sent together.
    pub group: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobOutcome {
    pub prediction: Option<Prediction>,
    pub response: LmResponse,
}

#[derive(Debug, Default, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DispatchReport {
    pub jobs: usize,
    pub succeeded: usize,
    pub failed: usize,
    pub network_requests: usize,
    pub cache_hits: usize,
    pub failures: Vec<(usize, String)>,
}

#[derive(Debug)]
pub struct BatchOutcome {
    /// One entry per input job, in input order.
    pub results: Vec<Result<JobOutcome, LmError>>,
    pub report: DispatchReport,
}

pub struct LmClient {
    backend: Arc<dyn CompletionBackend>,
    cache: ResponseCache,
    config: EndpointConfig,
    network_requests: AtomicUsize,
    cache_hits: AtomicUsize,
}

impl fmt::Debug for LmClient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LmClient")
            .field("config", &self.config)
            .field("cache", &self.cache)
            .finish()
    }
}

impl LmClient {
    pub fn new(backend: Arc<dyn CompletionBackend>, cache: ResponseCache, config: EndpointConfig) -> Self {
        Self {
            backend,
            cache,
            config,
            network_requests: AtomicUsize::new(0),
            cache_hits: AtomicUsize::new(0),
        }
    }

    /// Client for a live endpoint described by `config`.
    pub fn http(config: EndpointConfig, cache: ResponseCache) -> Result<Self, LmError> {
        let backend = HttpBackend::new(&config)?;
        Ok(Self::new(Arc::new(backend), cache, config))
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.config
    }

    pub fn network_requests(&self) -> usize {
        self.network_requests.load(Ordering::SeqCst)
    }

    pub fn cache_hits(&self) -> usize {
        self.cache_hits.load(Ordering::SeqCst)
    }

    fn request(&self, prompt: &str, max_tokens: u32, logprobs: Option<u32>) -> CompletionRequest {
        CompletionRequest {
            model: self.config.model_name.clone(),
            prompt: prompt.to_string(),
            max_tokens,
            logprobs,
            chat: self.config.chat,
        }
    }

    /// Cached call with retries on transient failures. Returns the response
    /// and whether it came from the cache.
    fn call(&self, request: &CompletionRequest) -> Result<(CompletionResponse, bool), LmError> {
        let key = request.cache_key();
        if let Some(hit) = self.cache.get(&key)? {
            self.cache_hits.fetch_add(1, Ordering::SeqCst);
            return Ok((hit, true));
        }
        let attempts = self.config.max_retries.max(1);
        let mut last = None;
        for attempt in 0..attempts {
            if attempt > 0 {
                let delay = self.config.backoff_base_ms.saturating_mul(1 << (attempt - 1).min(16));
                std::thread::sleep(Duration::from_millis(delay));
            }
            self.network_requests.fetch_add(1, Ordering::SeqCst);
            match self.backend.complete(request) {
                Ok(response) => {
                    self.cache.put(&key, &response)?;
                    return Ok((response, false));
                }
                Err(err @ LmError::Transient { .. }) => {
                    log::warn!("attempt {} of {attempts} failed: {err}", attempt + 1);
                    last = Some(err);
                }
                Err(err) => return Err(err),
            }
        }
        Err(LmError::EndpointUnavailable(format!(
            "{attempts} attempts failed; last error: {}",
            last.map_or_else(String::new, |e| e.to_string())
        )))
    }

    /// Rank classification over the options' first tokens.
    pub fn classify(&self, query: &str, options: &OptionSet) -> Result<(Prediction, LmResponse), LmError> {
        let top_k = self.config.logprob_top_k;
        let (response, cache_hit) = self.call(&self.request(query, 1, Some(top_k)))?;
        match response.top_tokens {
            Some(tokens) => {
                let top_tokens = sorted_top(tokens, top_k);
                let prediction = rank_classify(&top_tokens, options);
                Ok((
                    prediction,
                    LmResponse {
                        kind: ResponseKind::Classification,
                        top_tokens,
                        completion_text: response.text,
                        usage: response.usage,
                        cache_hit,
                        fallback: false,
                    },
                ))
            }
            None => {
                log::debug!("{}", LmError::LogprobsUnsupported);
                let (generated, cache_hit) =
                    self.call(&self.request(query, FALLBACK_MAX_TOKENS, None))?;
                let prediction = options
                    .match_completion(&generated.text)
                    .map_or(Prediction::NoMatch, Prediction::Option);
                Ok((
                    prediction,
                    LmResponse {
                        kind: ResponseKind::Classification,
                        top_tokens: Vec::new(),
                        completion_text: generated.text,
                        usage: generated.usage,
                        cache_hit,
                        fallback: true,
                    },
                ))
            }
        }
    }

    /// Greedy generation; the completion is returned untrimmed.
    pub fn generate(&self, query: &str, max_tokens: u32) -> Result<(String, LmResponse), LmError> {
        let (response, cache_hit) = self.call(&self.request(query, max_tokens, None))?;
        let text = response.text.clone();
        Ok((
            text,
            LmResponse {
                kind: ResponseKind::Generation,
                top_tokens: Vec::new(),
                completion_text: response.text,
                usage: response.usage,
                cache_hit,
                fallback: false,
            },
        ))
    }

    fn run_job(&self, job: &Job) -> Result<JobOutcome, LmError> {
        match &job.kind {
            JobKind::Classify(options) => {
                let (prediction, response) = self.classify(&job.text, options)?;
                Ok(JobOutcome {
                    prediction: Some(prediction),
                    response,
                })
            }
            JobKind::Generate { max_tokens } => {
                let (_, response) = self.generate(&job.text, *max_tokens)?;
                Ok(JobOutcome {
                    prediction: None,
                    response,
                })
            }
        }
    }

    /// Run jobs with at most `max_parallel` requests in flight.
    ///
    /// Jobs are issued grouped by their `group` key (first-appearance order)
    /// so shared prefixes reach the server back to back. Results come back in
    /// input order; failures are reported per job.
    pub fn dispatch_batch(&self, jobs: &[Job]) -> BatchOutcome {
        let mut first_seen: HashMap<u64, usize> = HashMap::new();
        for (i, job) in jobs.iter().enumerate() {
            first_seen.entry(job.group).or_insert(i);
        }
        let mut order: Vec<usize> = (0..jobs.len()).collect();
        order.sort_by_key(|&i| (first_seen[&jobs[i].group], i));

        let before_requests = self.network_requests();
        let before_hits = self.cache_hits();
        let slots: Mutex<Vec<Option<Result<JobOutcome, LmError>>>> =
            Mutex::new((0..jobs.len()).map(|_| None).collect());
        let next = AtomicUsize::new(0);
        let workers = self.config.max_parallel.max(1).min(jobs.len().max(1));
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let position = next.fetch_add(1, Ordering::SeqCst);
                    let Some(&index) = order.get(position) else { break };
                    let outcome = self.run_job(&jobs[index]);
                    slots.lock().expect("result slots poisoned")[index] = Some(outcome);
                });
            }
        });

        let results: Vec<Result<JobOutcome, LmError>> = slots
            .into_inner()
            .expect("result slots poisoned")
            .into_iter()
            .map(|slot| slot.expect("every job ran"))
            .collect();
        let failures: Vec<(usize, String)> = results
            .iter()
            .enumerate()
            .filter_map(|(i, r)| r.as_ref().err().map(|e| (i, e.to_string())))
            .collect();
        BatchOutcome {
            report: DispatchReport {
                jobs: jobs.len(),
                succeeded: jobs.len() - failures.len(),
                failed: failures.len(),
                network_requests: self.network_requests() - before_requests,
                cache_hits: self.cache_hits() - before_hits,
                failures,
            },
            results,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::WhitespaceTokenizer;
    use std::sync::atomic::AtomicBool;

    fn options(names: &[&str]) -> OptionSet {
        let owned: Vec<String> = names.iter().map(|s| s.to_string()).collect();
        OptionSet::new(&owned, &WhitespaceTokenizer)
    }

    fn top(pairs: &[(&str, f64)]) -> Vec<(String, f64)> {
        pairs.iter().map(|(t, l)| (t.to_string(), *l)).collect()
    }

    #[test]
    fn argmax_over_first_tokens() {
        let opts = options(&["World", "Sports", "Business", "Technology"]);
        let tokens = top(&[(" World", -0.1), (" Sports", -2.3)]);
        assert_eq!(rank_classify(&tokens, &opts), Prediction::Option(0));
        let tokens = top(&[(" the", -0.1), (" Sports", -2.3), (" World", -2.5)]);
        assert_eq!(rank_classify(&tokens, &opts), Prediction::Option(1));
    }

    #[test]
    fn no_option_token_is_no_match() {
        let opts = options(&["yes", "no"]);
        let tokens = top(&[(" maybe", -0.1), ("\n", -1.0)]);
        assert_eq!(rank_classify(&tokens, &opts), Prediction::NoMatch);
        assert_eq!(rank_classify(&[], &opts), Prediction::NoMatch);
    }

    #[test]
    fn subword_tokens_match_unique_prefix() {
        let opts = options(&["Business", "World"]);
        assert_eq!(opts.match_token(" Bus"), Some(0));
        let ambiguous = options(&["Bus", "Business"]);
        assert_eq!(ambiguous.match_token("Bu"), None);
        assert_eq!(ambiguous.match_token("Bus"), Some(0));
    }

    #[test]
    fn completion_prefix_matching() {
        let opts = options(&["positive", "negative", "neutral"]);
        assert_eq!(opts.match_completion(" positive."), Some(0));
        assert_eq!(opts.match_completion(" neg"), Some(1));
        assert_eq!(opts.match_completion(" ne"), None);
        assert_eq!(opts.match_completion("xyz"), None);
    }

    struct Scripted {
        calls: AtomicUsize,
        fail_first: usize,
        status: u16,
        top: Option<Vec<(String, f64)>>,
        text: String,
        in_flight: AtomicUsize,
        max_in_flight: AtomicUsize,
        sleep_ms: u64,
    }

    impl Scripted {
        fn new(top: Option<Vec<(String, f64)>>, text: &str) -> Self {
            Self {
                calls: AtomicUsize::new(0),
                fail_first: 0,
                status: 503,
                top,
                text: text.to_string(),
                in_flight: AtomicUsize::new(0),
                max_in_flight: AtomicUsize::new(0),
                sleep_ms: 0,
            }
        }
    }

    impl CompletionBackend for Scripted {
        fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, LmError> {
            let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
            self.max_in_flight.fetch_max(now, Ordering::SeqCst);
            if self.sleep_ms > 0 {
                std::thread::sleep(Duration::from_millis(self.sleep_ms));
            }
            self.in_flight.fetch_sub(1, Ordering::SeqCst);
            let call = self.calls.fetch_add(1, Ordering::SeqCst);
            if call < self.fail_first {
                return Err(LmError::Transient {
                    status: self.status,
                    message: "busy".into(),
                });
            }
            Ok(CompletionResponse {
                text: if request.max_tokens == 0 { String::new() } else { self.text.clone() },
                top_tokens: if request.logprobs.is_some() { self.top.clone() } else { None },
                usage: Usage::default(),
            })
        }
    }

    fn config(max_parallel: usize) -> EndpointConfig {
        EndpointConfig {
            max_parallel,
            backoff_base_ms: 1,
            ..EndpointConfig::default()
        }
    }

    #[test]
    fn transient_errors_are_retried() {
        let mut backend = Scripted::new(Some(top(&[(" yes", -0.1)])), "");
        backend.fail_first = 2;
        let client = LmClient::new(Arc::new(backend), ResponseCache::disabled(), config(1));
        let (prediction, _) = client.classify("q", &options(&["yes", "no"])).unwrap();
        assert_eq!(prediction, Prediction::Option(0));
        assert_eq!(client.network_requests(), 3);
    }

    #[test]
    fn retries_exhaust_to_unavailable() {
        let mut backend = Scripted::new(None, "");
        backend.fail_first = usize::MAX;
        backend.status = 429;
        let client = LmClient::new(Arc::new(backend), ResponseCache::disabled(), config(1));
        let err = client.generate("q", 5).unwrap_err();
        assert!(matches!(err, LmError::EndpointUnavailable(_)));
        assert_eq!(client.network_requests(), 5);
    }

    #[test]
    fn missing_logprobs_fall_back_to_generation() {
        let backend = Scripted::new(None, " Sports news");
        let client = LmClient::new(Arc::new(backend), ResponseCache::disabled(), config(1));
        let (prediction, response) = client
            .classify("q", &options(&["World", "Sports"]))
            .unwrap();
        assert_eq!(prediction, Prediction::Option(1));
        assert!(response.fallback);
    }

    #[test]
    fn generation_with_zero_tokens_is_empty() {
        let backend = Scripted::new(None, "anything");
        let client = LmClient::new(Arc::new(backend), ResponseCache::disabled(), config(1));
        assert_eq!(client.generate("q", 0).unwrap().0, "");
    }

    #[test]
    fn cache_warm_fraction_skips_requests() {
        let dir = tempfile::tempdir().unwrap();
        let opts = Arc::new(options(&["yes", "no"]));
        let jobs: Vec<Job> = (0..400)
            .map(|i| Job {
                text: format!("prompt {i}"),
                kind: JobKind::Classify(opts.clone()),
                group: i / 10,
            })
            .collect();
        let warm = LmClient::new(
            Arc::new(Scripted::new(Some(top(&[(" yes", -0.1)])), "")),
            ResponseCache::open(dir.path()).unwrap(),
            config(4),
        );
        let warmed = warm.dispatch_batch(&jobs[..80]);
        assert_eq!(warmed.report.network_requests, 80);

        let client = LmClient::new(
            Arc::new(Scripted::new(Some(top(&[(" yes", -0.1)])), "")),
            ResponseCache::open(dir.path()).unwrap(),
            config(4),
        );
        let outcome = client.dispatch_batch(&jobs);
        assert_eq!(outcome.report.network_requests, 320);
        assert_eq!(outcome.report.cache_hits, 80);
        assert_eq!(outcome.report.failed, 0);
        let rerun = client.dispatch_batch(&jobs);
        assert_eq!(rerun.report.network_requests, 0);
        let strip = |r: &Result<JobOutcome, LmError>| r.as_ref().unwrap().prediction;
        assert_eq!(
            outcome.results.iter().map(strip).collect::<Vec<_>>(),
            rerun.results.iter().map(strip).collect::<Vec<_>>()
        );
    }

    #[test]
    fn parallelism_is_bounded() {
        for max_parallel in [1usize, 3] {
            let mut backend = Scripted::new(Some(top(&[(" no", -0.2)])), "");
            backend.sleep_ms = 5;
            let backend = Arc::new(backend);
            let client = LmClient::new(backend.clone(), ResponseCache::disabled(), config(max_parallel));
            let opts = Arc::new(options(&["yes", "no"]));
            let jobs: Vec<Job> = (0..24)
                .map(|i| Job {
                    text: format!("p{i}"),
                    kind: JobKind::Classify(opts.clone()),
                    group: 0,
                })
                .collect();
            let outcome = client.dispatch_batch(&jobs);
            assert!(outcome.results.iter().all(|r| r.as_ref().unwrap().prediction == Some(Prediction::Option(1))));
            let seen = backend.max_in_flight.load(Ordering::SeqCst);
            assert!(seen <= max_parallel, "{seen} > {max_parallel}");
        }
    }

    #[test]
    fn failures_are_reported_not_raised() {
        struct Down(AtomicBool);
        impl CompletionBackend for Down {
            fn complete(&self, _: &CompletionRequest) -> Result<CompletionResponse, LmError> {
                self.0.store(true, Ordering::SeqCst);
                Err(LmError::EndpointUnavailable("connection refused".into()))
            }
        }
        let client = LmClient::new(Arc::new(Down(AtomicBool::new(false))), ResponseCache::disabled(), config(2));
        let jobs: Vec<Job> = (0..5)
            .map(|i| Job {
                text: format!("p{i}"),
                kind: JobKind::Generate { max_tokens: 3 },
                group: i,
            })
            .collect();
        let outcome = client.dispatch_batch(&jobs);
        assert_eq!(outcome.report.failed, 5);
        assert_eq!(outcome.report.failures.len(), 5);
    }

    #[test]
    fn cache_key_covers_decoding_parameters() {
        let base = CompletionRequest {
            model: "m".into(),
            prompt: "p".into(),
            max_tokens: 1,
            logprobs: Some(100),
            chat: false,
        };
        let mut other = base.clone();
        other.logprobs = Some(20);
        assert_ne!(base.cache_key(), other.cache_key());
        let mut other = base.clone();
        other.model = "n".into();
        assert_ne!(base.cache_key(), other.cache_key());
        assert_eq!(base.cache_key(), base.clone().cache_key());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn classification_ignores_option_order(
                logprobs in proptest::collection::vec(-10.0f64..0.0, 4),
                rotation in 0usize..4,
            ) {
                let names = ["alpha", "bravo", "charlie", "delta"];
                let tokens: Vec<(String, f64)> = names.iter().zip(&logprobs).map(|(n, l)| (format!(" {n}"), *l)).collect();
                let mut rotated = names.to_vec();
                rotated.rotate_left(rotation);
                let a = rank_classify(&tokens, &options(&names)).option().map(|i| names[i]);
                let b = rank_classify(&tokens, &options(&rotated)).option().map(|i| rotated[i]);
                prop_assert_eq!(a, b);
            }
        }
    }
}
