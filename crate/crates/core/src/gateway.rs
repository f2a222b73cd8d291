//! Chat-completion transport with retries, a per-model in-flight cap, a
//! scripted mock backend, the zero-shot best-of-N protocol and cost reports.

use crate::operators::templates::Templates;
use crate::tasks::Task;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

pub const URL_ENV: &str = "EVOSCOPE_LLM_URL";
pub const KEY_ENV: &str = "EVOSCOPE_LLM_KEY";
pub const DEFAULT_MAX_TOKENS: u32 = 2048;
pub const DEFAULT_IN_FLIGHT: usize = 4;
pub const ZERO_SHOT_TEMPERATURES: [f64; 6] = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0];
pub const ZERO_SHOT_SAMPLES_PER_TEMPERATURE: usize = 2;

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("configuration error: {0}")]
    Configuration(String),
    #[error("transport error after {} attempt(s): {message}", exchange.attempts)]
    Transport {
        message: String,
        exchange: Box<ChatExchange>,
    },
    #[error("invalid price table: {0}")]
    Prices(String),
    #[error("mock backend: {0}")]
    Mock(String),
}

/// One logical chat call, including its retries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatExchange {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_id: Option<String>,
    pub model: String,
    pub system: String,
    pub user: String,
    pub temperature: f64,
    pub reply: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    /// Token counts were estimated from character counts.
    #[serde(default)]
    pub tokens_estimated: bool,
    pub latency_ms: u64,
    pub attempts: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChatRequest {
    pub model: String,
    pub system: String,
    pub user: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BackendReply {
    pub text: String,
    pub prompt_tokens: Option<u64>,
    pub completion_tokens: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum BackendError {
    Transport(String),
    Status(u16, String),
}

impl BackendError {
    fn retryable(&self) -> bool {
        match self {
            BackendError::Transport(_) => true,
            BackendError::Status(code, _) => *code == 429 || *code >= 500,
        }
    }
}

impl std::fmt::Display for BackendError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BackendError::Transport(m) => write!(f, "{m}"),
            BackendError::Status(code, m) if m.is_empty() => write!(f, "HTTP {code}"),
            BackendError::Status(code, m) => write!(f, "HTTP {code}: {m}"),
        }
    }
}

pub trait ChatBackend: Send + Sync {
    fn send(&self, req: &ChatRequest) -> Result<BackendReply, BackendError>;
}

impl<F> ChatBackend for F
where
    F: Fn(&ChatRequest) -> Result<BackendReply, BackendError> + Send + Sync,
{
    fn send(&self, req: &ChatRequest) -> Result<BackendReply, BackendError> {
        self(req)
    }
}

/// Chat-completions over HTTP with a bearer token.
pub struct HttpBackend {
    url: String,
    key: String,
    agent: ureq::Agent,
}

impl HttpBackend {
    pub fn new(url: impl Into<String>, key: impl Into<String>) -> Self {
        let mut url = url.into();
        if !url.ends_with("/chat/completions") {
            url = format!("{}/chat/completions", url.trim_end_matches('/'));
        }
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(300)))
            .http_status_as_error(false)
            .build()
            .into();
        HttpBackend {
            url,
            key: key.into(),
            agent,
        }
    }

    pub fn from_env() -> Result<Self, GatewayError> {
        let url = std::env::var(URL_ENV)
            .map_err(|_| GatewayError::Configuration(format!("{URL_ENV} is not set")))?;
        let key = std::env::var(KEY_ENV)
            .map_err(|_| GatewayError::Configuration(format!("{KEY_ENV} is not set")))?;
        if key.trim().is_empty() {
            return Err(GatewayError::Configuration(format!("{KEY_ENV} is empty")));
        }
        Ok(HttpBackend::new(url, key))
    }
}

impl ChatBackend for HttpBackend {
    fn send(&self, req: &ChatRequest) -> Result<BackendReply, BackendError> {
        let body = serde_json::json!({
            "model": req.model,
            "messages": [
                {"role": "system", "content": req.system},
                {"role": "user", "content": req.user},
            ],
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        });
        let mut resp = self
            .agent
            .post(&self.url)
            .header("Authorization", &format!("Bearer {}", self.key))
            .send_json(&body)
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        if !(200..300).contains(&status) {
            let snippet: String = text.chars().take(200).collect();
            return Err(BackendError::Status(status, snippet));
        }
        parse_completion(&text)
    }
}

/// Pull the reply text and usage out of a chat-completions response body.
pub fn parse_completion(body: &str) -> Result<BackendReply, BackendError> {
    let v: serde_json::Value = serde_json::from_str(body)
        .map_err(|e| BackendError::Transport(format!("malformed response: {e}")))?;
    let text = v
        .pointer("/choices/0/message/content")
        .and_then(|c| c.as_str())
        .ok_or_else(|| BackendError::Transport("response has no message content".into()))?;
    let usage = |k: &str| v.get("usage").and_then(|u| u.get(k)).and_then(|t| t.as_u64());
    Ok(BackendReply {
        text: text.to_string(),
        prompt_tokens: usage("prompt_tokens"),
        completion_tokens: usage("completion_tokens"),
    })
}

/// One scripted response of the mock backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockResponse {
    #[serde(default)]
    pub text: Option<String>,
    #[serde(default)]
    pub status: Option<u16>,
    #[serde(default)]
    pub prompt_tokens: Option<u64>,
    #[serde(default)]
    pub completion_tokens: Option<u64>,
}

/// A mock rule: matching constraints plus responses served in turn, cycling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockRule {
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default)]
    pub temperature: Option<f64>,
    /// Substring the user message must contain.
    #[serde(default)]
    pub contains: Option<String>,
    #[serde(default)]
    pub reply: Option<String>,
    #[serde(default)]
    pub responses: Vec<MockResponse>,
}

impl MockRule {
    fn matches(&self, req: &ChatRequest) -> bool {
        self.model.as_ref().is_none_or(|m| *m == req.model)
            && self
                .temperature
                .is_none_or(|t| (t - req.temperature).abs() < 1e-9)
            && self.contains.as_ref().is_none_or(|s| req.user.contains(s.as_str()))
    }
}

/// Scripted replies: the first matching rule answers.
pub struct MockBackend {
    rules: Vec<(MockRule, AtomicUsize)>,
}

impl MockBackend {
    pub fn new(rules: Vec<MockRule>) -> Result<Self, GatewayError> {
        for (i, r) in rules.iter().enumerate() {
            if r.reply.is_none() && r.responses.is_empty() {
                return Err(GatewayError::Mock(format!("rule {i} has neither reply nor responses")));
            }
        }
        Ok(MockBackend {
            rules: rules.into_iter().map(|r| (r, AtomicUsize::new(0))).collect(),
        })
    }

    pub fn fixed(reply: impl Into<String>) -> Self {
        MockBackend::new(vec![MockRule {
            model: None,
            temperature: None,
            contains: None,
            reply: Some(reply.into()),
            responses: vec![],
        }])
        .expect("fixed rule is well formed")
    }

    /// One JSON rule per line; blank lines and `#` comments skipped.
    pub fn from_jsonl(text: &str) -> Result<Self, GatewayError> {
        let mut rules = Vec::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let rule: MockRule = serde_json::from_str(line)
                .map_err(|e| GatewayError::Mock(format!("line {}: {e}", no + 1)))?;
            rules.push(rule);
        }
        MockBackend::new(rules)
    }

    pub fn from_file(path: &Path) -> Result<Self, GatewayError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| GatewayError::Mock(format!("{}: {e}", path.display())))?;
        MockBackend::from_jsonl(&text)
    }
}

impl ChatBackend for MockBackend {
    fn send(&self, req: &ChatRequest) -> Result<BackendReply, BackendError> {
        let (rule, counter) = self
            .rules
            .iter()
            .find(|(r, _)| r.matches(req))
            .ok_or_else(|| BackendError::Status(404, "no mock rule matches".into()))?;
        if rule.responses.is_empty() {
            return Ok(BackendReply {
                text: rule.reply.clone().unwrap_or_default(),
                ..Default::default()
            });
        }
        let k = counter.fetch_add(1, Ordering::SeqCst) % rule.responses.len();
        let r = &rule.responses[k];
        match r.status {
            Some(code) if !(200..300).contains(&code) => Err(BackendError::Status(code, String::new())),
            _ => Ok(BackendReply {
                text: r.text.clone().or_else(|| rule.reply.clone()).unwrap_or_default(),
                prompt_tokens: r.prompt_tokens,
                completion_tokens: r.completion_tokens,
            }),
        }
    }
}

/// Counting semaphore keyed by model id.
struct InFlight {
    cap: usize,
    counts: Mutex<HashMap<String, usize>>,
    freed: Condvar,
}

struct InFlightGuard<'a> {
    owner: &'a InFlight,
    model: String,
}

impl InFlight {
    fn acquire(&self, model: &str) -> InFlightGuard<'_> {
        let mut counts = self.counts.lock().expect("in-flight lock");
        while counts.get(model).copied().unwrap_or(0) >= self.cap {
            counts = self.freed.wait(counts).expect("in-flight lock");
        }
        *counts.entry(model.to_string()).or_insert(0) += 1;
        InFlightGuard {
            owner: self,
            model: model.to_string(),
        }
    }
}

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        let mut counts = self.owner.counts.lock().expect("in-flight lock");
        if let Some(c) = counts.get_mut(&self.model) {
            *c -= 1;
        }
        self.owner.freed.notify_all();
    }
}

type Sleeper = Arc<dyn Fn(Duration) + Send + Sync>;

/// Shareable front end over a backend.
pub struct Gateway {
    backend: Box<dyn ChatBackend>,
    backoff: Vec<Duration>,
    max_tokens: u32,
    sleeper: Sleeper,
    in_flight: InFlight,
}

impl Gateway {
    pub fn new(backend: Box<dyn ChatBackend>) -> Self {
        Gateway {
            backend,
            backoff: vec![Duration::from_secs(1), Duration::from_secs(2), Duration::from_secs(4)],
            max_tokens: DEFAULT_MAX_TOKENS,
            sleeper: Arc::new(std::thread::sleep),
            in_flight: InFlight {
                cap: DEFAULT_IN_FLIGHT,
                counts: Mutex::new(HashMap::new()),
                freed: Condvar::new(),
            },
        }
    }

    pub fn mock(backend: MockBackend) -> Self {
        Gateway::new(Box::new(backend))
    }

    pub fn from_env() -> Result<Self, GatewayError> {
        Ok(Gateway::new(Box::new(HttpBackend::from_env()?)))
    }

    /// Replace the sleep used between retries (tests pass a recorder).
    pub fn with_sleeper(mut self, sleeper: impl Fn(Duration) + Send + Sync + 'static) -> Self {
        self.sleeper = Arc::new(sleeper);
        self
    }

    pub fn with_in_flight_cap(mut self, cap: usize) -> Self {
        self.in_flight.cap = cap.max(1);
        self
    }

    pub fn with_max_tokens(mut self, max_tokens: u32) -> Self {
        self.max_tokens = max_tokens;
        self
    }

    pub fn max_retries(&self) -> usize {
        self.backoff.len()
    }

    pub fn chat(
        &self,
        model: &str,
        system: &str,
        user: &str,
        temperature: f64,
    ) -> Result<ChatExchange, GatewayError> {
        let req = ChatRequest {
            model: model.to_string(),
            system: system.to_string(),
            user: user.to_string(),
            temperature,
            max_tokens: self.max_tokens,
        };
        let _slot = self.in_flight.acquire(model);
        let start = Instant::now();
        let mut attempts = 0u32;
        let outcome = loop {
            attempts += 1;
            match self.backend.send(&req) {
                Ok(reply) => break Ok(reply),
                Err(e) if e.retryable() && (attempts as usize) <= self.backoff.len() => {
                    log::debug!("{model}: attempt {attempts} failed ({e}), retrying");
                    (self.sleeper)(self.backoff[attempts as usize - 1]);
                }
                Err(e) => break Err(e),
            }
        };
        let latency_ms = start.elapsed().as_millis() as u64;
        let prompt_estimate = estimate_tokens(&req.system) + estimate_tokens(&req.user);
        let mut exchange = ChatExchange {
            run_id: None,
            model: req.model,
            system: req.system,
            user: req.user,
            temperature,
            reply: String::new(),
            prompt_tokens: prompt_estimate,
            completion_tokens: 0,
            tokens_estimated: true,
            latency_ms,
            attempts,
            error: None,
        };
        match outcome {
            Ok(reply) => {
                exchange.tokens_estimated =
                    reply.prompt_tokens.is_none() || reply.completion_tokens.is_none();
                exchange.prompt_tokens = reply.prompt_tokens.unwrap_or(prompt_estimate);
                exchange.completion_tokens = reply
                    .completion_tokens
                    .unwrap_or_else(|| estimate_tokens(&reply.text));
                exchange.reply = reply.text;
                Ok(exchange)
            }
            Err(e) => {
                exchange.error = Some(e.to_string());
                Err(GatewayError::Transport {
                    message: e.to_string(),
                    exchange: Box::new(exchange),
                })
            }
        }
    }
}

/// `ceil(chars / 4)`.
pub fn estimate_tokens(text: &str) -> u64 {
    (text.chars().count() as u64).div_ceil(4)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZeroShotSample {
    pub temperature: f64,
    pub raw_fitness: f64,
    pub valid: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZeroShotResult {
    pub best: f64,
    pub all_invalid: bool,
    pub samples: Vec<ZeroShotSample>,
    pub exchanges: Vec<ChatExchange>,
}

/// Two samples at each of six temperatures; the best valid fitness, or the
/// task's invalid sentinel when nothing valid came back.
pub fn zero_shot_best_of_n(
    gateway: &Gateway,
    task: &dyn Task,
    model: &str,
    templates: &Templates,
) -> ZeroShotResult {
    let (system, user) = templates.zero_shot.render(&task.prompt_fields(), "", 0);
    let mut samples = Vec::new();
    let mut exchanges = Vec::new();
    for &t in &ZERO_SHOT_TEMPERATURES {
        for _ in 0..ZERO_SHOT_SAMPLES_PER_TEMPERATURE {
            let (reply, exchange) = match gateway.chat(model, &system, &user, t) {
                Ok(ex) => (Some(ex.reply.clone()), ex),
                Err(GatewayError::Transport { exchange, .. }) => (None, *exchange),
                Err(e) => unreachable!("chat only fails with transport errors: {e}"),
            };
            exchanges.push(exchange);
            let eval = reply
                .and_then(|r| task.extract_genome(&r).ok())
                .map(|g| task.evaluate(&task.normalize(g)));
            samples.push(match eval {
                Some(e) if e.valid => ZeroShotSample {
                    temperature: t,
                    raw_fitness: e.raw_fitness,
                    valid: true,
                },
                _ => ZeroShotSample {
                    temperature: t,
                    raw_fitness: task.invalid_fitness(),
                    valid: false,
                },
            });
        }
    }
    let best = samples
        .iter()
        .filter(|s| s.valid)
        .map(|s| s.raw_fitness)
        .fold(f64::NEG_INFINITY, f64::max);
    let all_invalid = !best.is_finite();
    ZeroShotResult {
        best: if all_invalid { task.invalid_fitness() } else { best },
        all_invalid,
        samples,
        exchanges,
    }
}

/// Prices per million tokens.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Price {
    pub input: f64,
    pub output: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PriceTable(pub BTreeMap<String, Price>);

impl PriceTable {
    pub fn from_json(text: &str) -> Result<Self, GatewayError> {
        let table: PriceTable =
            serde_json::from_str(text).map_err(|e| GatewayError::Prices(e.to_string()))?;
        for (model, p) in &table.0 {
            if !(p.input >= 0.0 && p.output >= 0.0) {
                return Err(GatewayError::Prices(format!("{model}: prices must be non-negative")));
            }
        }
        Ok(table)
    }

    pub fn insert(&mut self, model: impl Into<String>, input: f64, output: f64) {
        self.0.insert(model.into(), Price { input, output });
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UsageLine {
    pub calls: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub cost: f64,
}

impl UsageLine {
    fn add(&mut self, ex: &ChatExchange, cost: f64) {
        self.calls += 1;
        self.prompt_tokens += ex.prompt_tokens;
        self.completion_tokens += ex.completion_tokens;
        self.cost += cost;
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub total: f64,
    pub per_model: BTreeMap<String, UsageLine>,
    pub per_run: BTreeMap<String, UsageLine>,
    /// Models with no price; their usage is listed but not costed.
    pub missing_prices: BTreeMap<String, UsageLine>,
}

pub fn cost_report(exchanges: &[ChatExchange], prices: &PriceTable) -> CostReport {
    let mut report = CostReport::default();
    for ex in exchanges {
        let run = ex.run_id.clone().unwrap_or_else(|| "-".into());
        match prices.0.get(&ex.model) {
            Some(p) => {
                let cost = (ex.prompt_tokens as f64 * p.input + ex.completion_tokens as f64 * p.output) / 1e6;
                report.total += cost;
                report.per_model.entry(ex.model.clone()).or_default().add(ex, cost);
                report.per_run.entry(run).or_default().add(ex, cost);
            }
            None => {
                report.missing_prices.entry(ex.model.clone()).or_default().add(ex, 0.0);
                report.per_run.entry(run).or_default().add(ex, 0.0);
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex(model: &str, p: u64, c: u64) -> ChatExchange {
        ChatExchange {
            run_id: None,
            model: model.into(),
            system: String::new(),
            user: String::new(),
            temperature: 0.7,
            reply: String::new(),
            prompt_tokens: p,
            completion_tokens: c,
            tokens_estimated: false,
            latency_ms: 0,
            attempts: 1,
            error: None,
        }
    }

    #[test]
    fn cost_arithmetic() {
        let mut prices = PriceTable::default();
        prices.insert("a", 1.0, 2.0);
        let r = cost_report(&[ex("a", 1_000_000, 1_000_000)], &prices);
        assert!((r.total - 3.0).abs() < 1e-12);
        assert_eq!(cost_report(&[], &prices).total, 0.0);
        let r = cost_report(&[ex("a", 1_000_000, 0), ex("b", 5, 5)], &prices);
        assert!((r.total - 1.0).abs() < 1e-12);
        assert!(r.missing_prices.contains_key("b"));
    }

    #[test]
    fn token_estimate_rounds_up() {
        assert_eq!(estimate_tokens(""), 0);
        assert_eq!(estimate_tokens("abcde"), 2);
        assert_eq!(estimate_tokens("abcd"), 1);
    }

    #[test]
    fn completion_parsing() {
        let body = r#"{"choices":[{"message":{"content":"hi"}}],"usage":{"prompt_tokens":3,"completion_tokens":1}}"#;
        let r = parse_completion(body).unwrap();
        assert_eq!(r.text, "hi");
        assert_eq!(r.prompt_tokens, Some(3));
        let r = parse_completion(r#"{"choices":[{"message":{"content":"hi"}}]}"#).unwrap();
        assert_eq!(r.completion_tokens, None);
        assert!(parse_completion("{}").is_err());
    }

    #[test]
    fn price_table_rejects_negative() {
        assert!(PriceTable::from_json(r#"{"m": {"input": -1, "output": 1}}"#).is_err());
        let t = PriceTable::from_json(r#"{"m": {"input": 0.5, "output": 1}}"#).unwrap();
        assert_eq!(t.0["m"].input, 0.5);
    }
}
