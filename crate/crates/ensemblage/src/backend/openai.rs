//! OpenAI-compatible chat-completion adapter.
//!
//! One well-tested adapter covers most hosted providers and local servers
//! that speak the `/chat/completions` JSON dialect. Credentials come from
//! environment variables so config files stay secret-free:
//!
//! - `ENSEMBLAGE_API_KEY_<PROVIDER>`: bearer token (required)
//! - `ENSEMBLAGE_BASE_URL_<PROVIDER>`: endpoint base, e.g.
//!   `http://localhost:8000/v1` (required except for `openai`, which
//!   defaults to `https://api.openai.com/v1`)
//!
//! `<PROVIDER>` is the uppercased provider name (`openai` ->
//! `ENSEMBLAGE_API_KEY_OPENAI`).

use std::time::{Duration, Instant};

use serde_json::{json, Value};

use super::{Backend, BackendError, ModelRequest, ModelResponse, RetryPolicy};

const DEFAULT_OPENAI_BASE: &str = "https://api.openai.com/v1";
const DEFAULT_TIMEOUT: Duration = Duration::from_secs(120);

pub struct OpenAiCompatBackend {
    base_url: String,
    api_key: String,
    retry: RetryPolicy,
    agent: ureq::Agent,
    /// Test hook: when set, sleeps are skipped and recorded here instead.
    #[allow(clippy::type_complexity)]
    sleeper: Box<dyn Fn(Duration) + Send + Sync>,
}

pub fn api_key_var(provider: &str) -> String {
    format!("ENSEMBLAGE_API_KEY_{}", provider.to_uppercase())
}

pub fn base_url_var(provider: &str) -> String {
    format!("ENSEMBLAGE_BASE_URL_{}", provider.to_uppercase())
}

impl OpenAiCompatBackend {
    /// Resolve credentials and endpoint for `provider` from the environment.
    pub fn from_env(provider: &str) -> Result<Self, BackendError> {
        let key_var = api_key_var(provider);
        let api_key = std::env::var(&key_var)
            .map_err(|_| BackendError::MissingCredential(key_var.clone()))?;
        let base_url = match std::env::var(base_url_var(provider)) {
            Ok(url) => url,
            Err(_) if provider.eq_ignore_ascii_case("openai") => DEFAULT_OPENAI_BASE.to_string(),
            Err(_) => return Err(BackendError::MissingCredential(base_url_var(provider))),
        };
        Ok(Self::new(base_url, api_key))
    }

    pub fn new(base_url: impl Into<String>, api_key: impl Into<String>) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(DEFAULT_TIMEOUT))
            .http_status_as_error(false)
            .build();
        OpenAiCompatBackend {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key: api_key.into(),
            retry: RetryPolicy::default(),
            agent: config.into(),
            sleeper: Box::new(std::thread::sleep),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build();
        self.agent = config.into();
        self
    }

    #[cfg(test)]
    pub(crate) fn with_sleeper(mut self, f: impl Fn(Duration) + Send + Sync + 'static) -> Self {
        self.sleeper = Box::new(f);
        self
    }

    fn request_body(request: &ModelRequest) -> Value {
        let mut messages = Vec::new();
        if let Some(sys) = &request.system_instructions {
            messages.push(json!({"role": "system", "content": sys}));
        }
        messages.push(json!({"role": "user", "content": request.user_message}));
        let mut body = json!({
            "model": request.model_id,
            "messages": messages,
        });
        let obj = body.as_object_mut().expect("body is an object");
        if let Some(t) = request.temperature {
            obj.insert("temperature".into(), json!(t));
        }
        if let Some(n) = request.max_tokens {
            obj.insert("max_tokens".into(), json!(n));
        }
        for (k, v) in &request.extra_params {
            obj.insert(k.clone(), v.clone());
        }
        body
    }

    fn attempt(&self, request: &ModelRequest) -> Result<String, BackendError> {
        let url = format!("{}/chat/completions", self.base_url);
        let body = Self::request_body(request);
        let result = self
            .agent
            .post(&url)
            .header("authorization", &format!("Bearer {}", self.api_key))
            .send_json(&body);
        let mut response = match result {
            Ok(r) => r,
            Err(ureq::Error::Timeout(t)) => return Err(BackendError::Timeout(t.to_string())),
            Err(e) => return Err(BackendError::Network(e.to_string())),
        };
        let status = response.status().as_u16();
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| BackendError::Network(format!("reading response body: {e}")))?;
        match status {
            200..=299 => parse_completion(&text),
            401 | 403 => Err(BackendError::Auth(format!("status {status}: {text}"))),
            _ => Err(BackendError::Provider { status, body: text }),
        }
    }
}

fn parse_completion(body: &str) -> Result<String, BackendError> {
    let value: Value = serde_json::from_str(body).map_err(|e| BackendError::Provider {
        status: 200,
        body: format!("unparseable completion body: {e}"),
    })?;
    value["choices"][0]["message"]["content"]
        .as_str()
        .map(|s| s.to_string())
        .ok_or_else(|| BackendError::Provider {
            status: 200,
            body: format!("completion body missing choices[0].message.content: {body}"),
        })
}

impl Backend for OpenAiCompatBackend {
    fn complete(&self, request: &ModelRequest) -> Result<ModelResponse, BackendError> {
        request.validate()?;
        let start = Instant::now();
        let mut attempt_count = 0;
        loop {
            attempt_count += 1;
            match self.attempt(request) {
                Ok(text) => {
                    return Ok(ModelResponse {
                        text: text.trim_end().to_string(),
                        model_id: request.model_id.clone(),
                        latency: start.elapsed(),
                        attempt_count,
                    });
                }
                Err(err) => {
                    if !err.is_retryable() || attempt_count >= self.retry.max_attempts {
                        return Err(err);
                    }
                    (self.sleeper)(self.retry.delay_after(attempt_count));
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_key_is_a_credential_error() {
        // Provider name chosen so no ambient environment variable can match.
        let err = match OpenAiCompatBackend::from_env("definitely_unset_provider") {
            Err(e) => e,
            Ok(_) => panic!("expected a missing-credential error"),
        };
        assert!(matches!(err, BackendError::MissingCredential(v)
            if v == "ENSEMBLAGE_API_KEY_DEFINITELY_UNSET_PROVIDER"));
    }

    #[test]
    fn body_shape_is_openai_chat() {
        let mut req = ModelRequest::new("gpt-4o", "hello")
            .with_system("sys text")
            .with_temperature(0.3)
            .with_max_tokens(64);
        req.extra_params
            .insert("top_p".into(), serde_json::json!(0.9));
        let body = OpenAiCompatBackend::request_body(&req);
        assert_eq!(body["model"], "gpt-4o");
        assert_eq!(body["messages"][0]["role"], "system");
        assert_eq!(body["messages"][0]["content"], "sys text");
        assert_eq!(body["messages"][1]["role"], "user");
        assert_eq!(body["messages"][1]["content"], "hello");
        assert_eq!(body["temperature"], 0.3);
        assert_eq!(body["max_tokens"], 64);
        assert_eq!(body["top_p"], 0.9);
    }

    #[test]
    fn no_temperature_unless_set() {
        let body = OpenAiCompatBackend::request_body(&ModelRequest::new("m", "x"));
        assert!(body.get("temperature").is_none());
        assert!(body.get("max_tokens").is_none());
        assert_eq!(body["messages"].as_array().unwrap().len(), 1);
    }

    #[test]
    fn parse_completion_happy_and_sad() {
        let ok = r#"{"choices":[{"message":{"role":"assistant","content":"hi there"}}]}"#;
        assert_eq!(parse_completion(ok).unwrap(), "hi there");
        assert!(parse_completion("{}").is_err());
        assert!(parse_completion("not json").is_err());
    }

    mod stub_server {
        use super::*;
        use std::io::{Read, Write};
        use std::net::TcpListener;
        use std::sync::atomic::{AtomicUsize, Ordering};
        use std::sync::{Arc, Mutex};

        /// Serve one canned response per connection, counting requests.
        fn serve(responses: Vec<(u16, String)>) -> (String, Arc<AtomicUsize>) {
            let listener = TcpListener::bind("127.0.0.1:0").unwrap();
            let addr = listener.local_addr().unwrap();
            let hits = Arc::new(AtomicUsize::new(0));
            let hits_inner = Arc::clone(&hits);
            std::thread::spawn(move || {
                for (status, body) in responses {
                    let (mut stream, _) = match listener.accept() {
                        Ok(conn) => conn,
                        Err(_) => return,
                    };
                    hits_inner.fetch_add(1, Ordering::SeqCst);
                    // Drain the request head; the exact bytes are irrelevant.
                    let mut buf = [0u8; 4096];
                    let _ = stream.read(&mut buf);
                    let reply = format!(
                        "HTTP/1.1 {status} X\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                        body.len()
                    );
                    let _ = stream.write_all(reply.as_bytes());
                }
            });
            (format!("http://{addr}"), hits)
        }

        fn ok_body(text: &str) -> String {
            format!(r#"{{"choices":[{{"message":{{"role":"assistant","content":"{text}"}}}}]}}"#)
        }

        #[test]
        fn invalid_key_fails_on_first_attempt() {
            let (base, hits) = serve(vec![(401, r#"{"error":"bad key"}"#.into())]);
            let backend = OpenAiCompatBackend::new(base, "wrong-key");
            let err = backend.complete(&ModelRequest::new("m", "hi")).unwrap_err();
            assert!(matches!(err, BackendError::Auth(_)), "{err}");
            assert_eq!(hits.load(Ordering::SeqCst), 1, "auth errors must not retry");
        }

        #[test]
        fn transient_500s_retry_then_succeed() {
            let (base, hits) = serve(vec![
                (500, "oops".into()),
                (503, "still warming".into()),
                (200, ok_body("recovered")),
            ]);
            let delays: Arc<Mutex<Vec<Duration>>> = Arc::default();
            let delays_in = Arc::clone(&delays);
            let backend = OpenAiCompatBackend::new(base, "k")
                .with_retry(RetryPolicy {
                    max_attempts: 3,
                    base_backoff: Duration::from_millis(10),
                    backoff_multiplier: 2.0,
                })
                .with_sleeper(move |d| delays_in.lock().unwrap().push(d));
            let response = backend.complete(&ModelRequest::new("m", "hi")).unwrap();
            assert_eq!(response.text, "recovered");
            assert_eq!(response.attempt_count, 3);
            assert_eq!(hits.load(Ordering::SeqCst), 3);
            let delays = delays.lock().unwrap();
            assert_eq!(delays.len(), 2);
            assert!(delays[0] <= delays[1], "backoff must be non-decreasing");
        }

        #[test]
        fn rate_limit_429_is_retried() {
            let (base, hits) = serve(vec![(429, "slow down".into()), (200, ok_body("ok"))]);
            let backend = OpenAiCompatBackend::new(base, "k")
                .with_retry(RetryPolicy {
                    max_attempts: 2,
                    base_backoff: Duration::from_millis(1),
                    backoff_multiplier: 1.0,
                })
                .with_sleeper(|_| {});
            let response = backend.complete(&ModelRequest::new("m", "hi")).unwrap();
            assert_eq!(response.attempt_count, 2);
            assert_eq!(hits.load(Ordering::SeqCst), 2);
        }

        #[test]
        fn malformed_request_400_is_never_retried() {
            let (base, hits) = serve(vec![(400, r#"{"error":"bad request"}"#.into())]);
            let backend = OpenAiCompatBackend::new(base, "k").with_sleeper(|_| {});
            let err = backend.complete(&ModelRequest::new("m", "hi")).unwrap_err();
            assert!(
                matches!(err, BackendError::Provider { status: 400, .. }),
                "{err}"
            );
            assert_eq!(hits.load(Ordering::SeqCst), 1);
        }

        #[test]
        fn retries_exhausted_surfaces_provider_error() {
            let (base, hits) = serve(vec![
                (500, "a".into()),
                (500, "b".into()),
                (500, "c".into()),
            ]);
            let backend = OpenAiCompatBackend::new(base, "k")
                .with_retry(RetryPolicy {
                    max_attempts: 3,
                    base_backoff: Duration::from_millis(1),
                    backoff_multiplier: 1.0,
                })
                .with_sleeper(|_| {});
            let err = backend.complete(&ModelRequest::new("m", "hi")).unwrap_err();
            assert!(matches!(err, BackendError::Provider { status: 500, .. }));
            assert_eq!(hits.load(Ordering::SeqCst), 3);
        }

        #[test]
        fn response_text_keeps_leading_trims_trailing_whitespace() {
            let (base, _) = serve(vec![(200, ok_body(r"  indented\n"))]);
            let backend = OpenAiCompatBackend::new(base, "k");
            let response = backend.complete(&ModelRequest::new("m", "hi")).unwrap();
            assert_eq!(response.text, "  indented");
        }
    }
}
