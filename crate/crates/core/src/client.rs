//! Chat-completion client abstraction shared by endpoint generation and evaluation.

use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::thread;
use std::time::Duration;

/// Environment variable holding the bearer token for HTTP endpoints.
pub const API_KEY_ENV: &str = "CSFORGE_API_KEY";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: "system".into(),
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: "user".into(),
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    pub temperature: f64,
    pub max_tokens: u32,
    pub n: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("endpoint returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("expected {expected} completions, got {got}")]
    ShortResponse { expected: usize, got: usize },
}

impl ClientError {
    fn retryable(&self) -> bool {
        match self {
            ClientError::Transport(_) => true,
            ClientError::Status { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

/// Anything that turns a chat transcript into `params.n` sampled completions.
///
/// Implementations return exactly `params.n` texts or an error; a shorter
/// list is never returned.
pub trait ModelClient: Send + Sync {
    fn complete(&self, messages: &[ChatMessage], params: &SamplingParams) -> Result<Vec<String>, ClientError>;
}

impl<C: ModelClient + ?Sized> ModelClient for &C {
    fn complete(&self, messages: &[ChatMessage], params: &SamplingParams) -> Result<Vec<String>, ClientError> {
        (**self).complete(messages, params)
    }
}

impl<C: ModelClient + ?Sized> ModelClient for Box<C> {
    fn complete(&self, messages: &[ChatMessage], params: &SamplingParams) -> Result<Vec<String>, ClientError> {
        (**self).complete(messages, params)
    }
}

#[derive(Debug, Serialize)]
struct CompletionRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
    max_tokens: u32,
    n: usize,
}

#[derive(Debug, Deserialize)]
struct CompletionResponse {
    choices: Vec<CompletionChoice>,
}

#[derive(Debug, Deserialize)]
struct CompletionChoice {
    message: ResponseMessage,
}

#[derive(Debug, Deserialize)]
struct ResponseMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Debug, Clone)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            initial_backoff: Duration::from_millis(250),
        }
    }
}

/// Blocking HTTP client for a chat-completions endpoint.
pub struct HttpClient {
    url: String,
    model: String,
    api_key: Option<String>,
    retry: RetryPolicy,
    http: reqwest::blocking::Client,
}

impl HttpClient {
    pub fn new(url: impl Into<String>, model: impl Into<String>) -> Result<Self, ClientError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| ClientError::Transport(e.to_string()))?;
        Ok(Self {
            url: url.into(),
            model: model.into(),
            api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
            retry: RetryPolicy::default(),
            http,
        })
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_api_key(mut self, key: Option<String>) -> Self {
        self.api_key = key;
        self
    }

    fn post_once(&self, messages: &[ChatMessage], params: &SamplingParams, n: usize) -> Result<Vec<String>, ClientError> {
        let body = CompletionRequest {
            model: &self.model,
            messages,
            temperature: params.temperature,
            max_tokens: params.max_tokens,
            n,
        };
        let mut req = self.http.post(&self.url).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| ClientError::Transport(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| ClientError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(ClientError::Status {
                status: status.as_u16(),
                body: text.chars().take(500).collect(),
            });
        }
        let parsed: CompletionResponse =
            serde_json::from_str(&text).map_err(|e| ClientError::Malformed(e.to_string()))?;
        Ok(parsed
            .choices
            .into_iter()
            .map(|c| c.message.content.unwrap_or_default())
            .collect())
    }

    fn post_with_retry(&self, messages: &[ChatMessage], params: &SamplingParams, n: usize) -> Result<Vec<String>, ClientError> {
        let mut backoff = self.retry.initial_backoff;
        let mut attempt = 0;
        loop {
            match self.post_once(messages, params, n) {
                Err(e) if e.retryable() && attempt < self.retry.max_retries => {
                    log::warn!("request failed ({e}); retrying in {backoff:?}");
                    thread::sleep(backoff);
                    backoff *= 2;
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}

impl ModelClient for HttpClient {
    fn complete(&self, messages: &[ChatMessage], params: &SamplingParams) -> Result<Vec<String>, ClientError> {
        let mut out = Vec::with_capacity(params.n);
        // some servers ignore `n`; top up with follow-up requests
        for _ in 0..params.n {
            if out.len() >= params.n {
                break;
            }
            let batch = self.post_with_retry(messages, params, params.n - out.len())?;
            if batch.is_empty() {
                break;
            }
            out.extend(batch);
        }
        if out.len() < params.n {
            return Err(ClientError::ShortResponse {
                expected: params.n,
                got: out.len(),
            });
        }
        out.truncate(params.n);
        Ok(out)
    }
}

/// Deterministic offline clients, used by tests and the CLI `--mock` flag.
pub mod mock {
    use super::*;
    use crate::eval::{build_prompt, PromptVariant};
    use crate::dataset::{Label, McqItem};
    use crate::util::stable_hash;

    fn last_user(messages: &[ChatMessage]) -> &str {
        messages
            .iter()
            .rev()
            .find(|m| m.role == "user")
            .map(|m| m.content.as_str())
            .unwrap_or("")
    }

    /// Returns the user message unchanged.
    pub struct EchoClient;

    impl ModelClient for EchoClient {
        fn complete(&self, messages: &[ChatMessage], params: &SamplingParams) -> Result<Vec<String>, ClientError> {
            Ok(vec![last_user(messages).to_string(); params.n])
        }
    }

    /// Returns the same text for every request.
    pub struct FixedClient(pub String);

    impl ModelClient for FixedClient {
        fn complete(&self, _: &[ChatMessage], params: &SamplingParams) -> Result<Vec<String>, ClientError> {
            Ok(vec![self.0.clone(); params.n])
        }
    }

    /// Always fails with a transport error.
    pub struct DownClient;

    impl ModelClient for DownClient {
        fn complete(&self, _: &[ChatMessage], _: &SamplingParams) -> Result<Vec<String>, ClientError> {
            Err(ClientError::Transport("connection refused".into()))
        }
    }

    /// Maps exact user prompts to scripted completions. Unknown prompts
    /// get `fallback` repeated.
    #[derive(Default)]
    pub struct ScriptedClient {
        pub scripts: HashMap<String, Vec<String>>,
        pub fallback: String,
    }

    impl ModelClient for ScriptedClient {
        fn complete(&self, messages: &[ChatMessage], params: &SamplingParams) -> Result<Vec<String>, ClientError> {
            match self.scripts.get(last_user(messages)) {
                Some(script) => Ok((0..params.n).map(|i| script[i % script.len()].clone()).collect()),
                None => Ok(vec![self.fallback.clone(); params.n]),
            }
        }
    }

    /// Answers every known question correctly with probability `accuracy`,
    /// decided per (prompt, sample) by a seeded hash so runs are repeatable.
    /// Wrong answers pick a distractor the same way.
    pub struct OracleClient {
        answers: HashMap<String, Label>,
        accuracy: f64,
        seed: u64,
    }

    impl OracleClient {
        pub fn new<'a, I>(items: I, variant: PromptVariant, accuracy: f64, seed: u64) -> Self
        where
            I: IntoIterator<Item = &'a McqItem>,
        {
            let answers = items
                .into_iter()
                .filter_map(|item| build_prompt(item, variant).ok().map(|p| (p, item.answer_key)))
                .collect();
            Self {
                answers,
                accuracy: accuracy.clamp(0.0, 1.0),
                seed,
            }
        }

        pub fn always_correct<'a, I>(items: I, variant: PromptVariant) -> Self
        where
            I: IntoIterator<Item = &'a McqItem>,
        {
            Self::new(items, variant, 1.0, 0)
        }
    }

    impl ModelClient for OracleClient {
        fn complete(&self, messages: &[ChatMessage], params: &SamplingParams) -> Result<Vec<String>, ClientError> {
            let prompt = last_user(messages);
            let Some(&answer) = self.answers.get(prompt) else {
                return Ok(vec!["I am not sure".to_string(); params.n]);
            };
            let base = stable_hash(prompt.as_bytes()) ^ self.seed;
            Ok((0..params.n as u64)
                .map(|i| {
                    let h = crate::util::mix64(base.wrapping_add(i));
                    let roll = (h >> 11) as f64 / (1u64 << 53) as f64;
                    if roll < self.accuracy {
                        answer.to_string()
                    } else {
                        let wrong: Vec<Label> = Label::ALL.into_iter().filter(|&l| l != answer).collect();
                        wrong[(h % wrong.len() as u64) as usize].to_string()
                    }
                })
                .collect())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::{Arc, Mutex};

    /// Serves canned HTTP responses in order and records request bodies.
    fn serve(responses: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<(String, String)>>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let seen = Arc::new(Mutex::new(Vec::new()));
        let seen2 = Arc::clone(&seen);
        thread::spawn(move || {
            for (status, body) in responses {
                let (mut stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0;
                let mut auth = String::new();
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                    let lower = line.to_ascii_lowercase();
                    if let Some(v) = lower.strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                    if lower.starts_with("authorization:") {
                        auth = line.trim().to_string();
                    }
                }
                let mut buf = vec![0; len];
                reader.read_exact(&mut buf).unwrap();
                seen2.lock().unwrap().push((auth, String::from_utf8(buf).unwrap()));
                let reply = format!(
                    "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                    body.len()
                );
                stream.write_all(reply.as_bytes()).unwrap();
            }
        });
        (format!("http://{addr}/v1/chat/completions"), seen)
    }

    fn choices(texts: &[&str]) -> String {
        let c: Vec<_> = texts
            .iter()
            .map(|t| serde_json::json!({"index": 0, "message": {"role": "assistant", "content": t}}))
            .collect();
        serde_json::json!({ "choices": c }).to_string()
    }

    fn params(n: usize) -> SamplingParams {
        SamplingParams {
            temperature: 0.7,
            max_tokens: 16,
            n,
        }
    }

    fn fast_retry() -> RetryPolicy {
        RetryPolicy {
            max_retries: 2,
            initial_backoff: Duration::from_millis(1),
        }
    }

    #[test]
    fn request_wire_format() {
        let (url, seen) = serve(vec![(200, choices(&["A", "B"]))]);
        let client = HttpClient::new(url, "tiny").unwrap().with_api_key(Some("sk-test".into()));
        let out = client.complete(&[ChatMessage::user("Q?")], &params(2)).unwrap();
        assert_eq!(out, ["A", "B"]);
        let seen = seen.lock().unwrap();
        assert_eq!(seen[0].0.to_ascii_lowercase(), "authorization: bearer sk-test");
        let body: serde_json::Value = serde_json::from_str(&seen[0].1).unwrap();
        assert_eq!(body["model"], "tiny");
        assert_eq!(body["n"], 2);
        assert_eq!(body["max_tokens"], 16);
        assert_eq!(body["temperature"], 0.7);
        assert_eq!(body["messages"][0]["role"], "user");
        assert_eq!(body["messages"][0]["content"], "Q?");
    }

    #[test]
    fn tops_up_when_server_ignores_n() {
        let (url, seen) = serve(vec![(200, choices(&["A"])), (200, choices(&["C", "D"]))]);
        let client = HttpClient::new(url, "m").unwrap();
        let out = client.complete(&[ChatMessage::user("x")], &params(3)).unwrap();
        assert_eq!(out, ["A", "C", "D"]);
        let seen = seen.lock().unwrap();
        let second: serde_json::Value = serde_json::from_str(&seen[1].1).unwrap();
        assert_eq!(second["n"], 2);
    }

    #[test]
    fn retries_server_errors_then_succeeds() {
        let (url, _) = serve(vec![(503, "{}".into()), (200, choices(&["E"]))]);
        let client = HttpClient::new(url, "m").unwrap().with_retry(fast_retry());
        assert_eq!(client.complete(&[ChatMessage::user("x")], &params(1)).unwrap(), ["E"]);
    }

    #[test]
    fn client_errors_are_not_retried() {
        let (url, seen) = serve(vec![(400, "{\"error\":\"bad\"}".into())]);
        let client = HttpClient::new(url, "m").unwrap().with_retry(fast_retry());
        let err = client.complete(&[ChatMessage::user("x")], &params(1)).unwrap_err();
        assert!(matches!(err, ClientError::Status { status: 400, .. }));
        assert_eq!(seen.lock().unwrap().len(), 1);
    }

    #[test]
    fn unreachable_endpoint_is_transport_error() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        drop(listener);
        let client = HttpClient::new(format!("http://{addr}/"), "m").unwrap().with_retry(fast_retry());
        let err = client.complete(&[ChatMessage::user("x")], &params(1)).unwrap_err();
        assert!(matches!(err, ClientError::Transport(_)));
    }

    #[test]
    fn empty_choices_is_short_response() {
        let (url, _) = serve(vec![(200, choices(&[]))]);
        let client = HttpClient::new(url, "m").unwrap();
        let err = client.complete(&[ChatMessage::user("x")], &params(2)).unwrap_err();
        assert!(matches!(err, ClientError::ShortResponse { expected: 2, got: 0 }));
    }
}
