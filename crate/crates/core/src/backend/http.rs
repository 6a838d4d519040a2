//! OpenAI-compatible HTTP backend.

use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::{StatusCode, Url};
use serde::Deserialize;
use serde_json::{json, Value};

use super::{
    apply_stops, BackendError, CompletionBackend, CompletionMode, CompletionRequest, CompletionResult, FinishReason,
};

pub const API_KEY_ENV: &str = "HMT_API_KEY";

/// Stop applied on the client side only: servers drop the stop text, and the
/// question mark has to survive for Stage-1 parsing.
const CLIENT_SIDE_STOP: &str = "?";

#[derive(Debug, Clone)]
pub struct HttpBackendConfig {
    pub endpoint: String,
    pub api_key: Option<String>,
    pub model: String,
    pub timeout: Duration,
    pub max_attempts: u32,
    pub backoff_base: Duration,
}

impl HttpBackendConfig {
    pub fn new(endpoint: impl Into<String>, api_key: Option<String>, model: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            api_key,
            model: model.into(),
            timeout: Duration::from_secs(60),
            max_attempts: 3,
            backoff_base: Duration::from_millis(500),
        }
    }
}

#[derive(Debug)]
pub struct HttpBackend {
    base: Url,
    config: HttpBackendConfig,
    client: Client,
}

pub fn http_backend(
    endpoint: &str,
    credentials: Option<String>,
    model_name: &str,
) -> Result<HttpBackend, BackendError> {
    HttpBackend::new(HttpBackendConfig::new(endpoint, credentials, model_name))
}

#[derive(Deserialize)]
struct ChoiceBody {
    #[serde(default)]
    text: Option<String>,
    #[serde(default)]
    message: Option<MessageBody>,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct MessageBody {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct ResponseBody {
    choices: Vec<ChoiceBody>,
}

enum Attempt {
    Done(Result<CompletionResult, BackendError>),
    Retry(BackendError),
}

impl HttpBackend {
    pub fn new(config: HttpBackendConfig) -> Result<Self, BackendError> {
        let mut base = Url::parse(&config.endpoint)
            .map_err(|e| BackendError::InvalidRequest(format!("endpoint `{}`: {e}", config.endpoint)))?;
        if !matches!(base.scheme(), "http" | "https") {
            return Err(BackendError::InvalidRequest(format!(
                "endpoint `{}` must be http or https",
                config.endpoint
            )));
        }
        if !base.path().ends_with('/') {
            let path = format!("{}/", base.path());
            base.set_path(&path);
        }
        let client = Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        Ok(Self { base, config, client })
    }

    pub fn config(&self) -> &HttpBackendConfig {
        &self.config
    }

    /// JSON body sent for `request`.
    pub fn request_body(&self, request: &CompletionRequest) -> Value {
        let c = &request.config;
        let mut body = json!({
            "model": self.config.model,
            "temperature": c.temperature,
            "max_tokens": c.max_tokens,
            "top_p": c.top_p,
            "frequency_penalty": c.frequency_penalty,
            "presence_penalty": c.presence_penalty,
        });
        match request.mode {
            CompletionMode::Completion => body["prompt"] = json!(request.prompt.as_str()),
            CompletionMode::Chat => {
                body["messages"] = json!([{ "role": "user", "content": request.prompt.as_str() }]);
            }
        }
        let server_stops: Vec<&str> = c
            .stop_sequences
            .iter()
            .map(String::as_str)
            .filter(|s| *s != CLIENT_SIDE_STOP)
            .collect();
        if !server_stops.is_empty() {
            body["stop"] = json!(server_stops);
        }
        body
    }

    fn url_for(&self, mode: CompletionMode) -> Url {
        let path = match mode {
            CompletionMode::Completion => "completions",
            CompletionMode::Chat => "chat/completions",
        };
        self.base.join(path).expect("relative path joins onto a base url")
    }

    fn attempt(&self, request: &CompletionRequest, key: &str) -> Attempt {
        let response = self
            .client
            .post(self.url_for(request.mode))
            .bearer_auth(key)
            .json(&self.request_body(request))
            .send();
        let response = match response {
            Ok(r) => r,
            Err(e) => return Attempt::Retry(BackendError::Transport(e.to_string())),
        };
        let status = response.status();
        let body = response.text().unwrap_or_default();
        if status.is_success() {
            return Attempt::Done(parse_response(&body, request));
        }
        match status {
            StatusCode::UNAUTHORIZED | StatusCode::FORBIDDEN => Attempt::Done(Err(BackendError::Auth(body))),
            StatusCode::TOO_MANY_REQUESTS => Attempt::Retry(BackendError::RateLimited(body)),
            s if s.is_server_error() => Attempt::Retry(BackendError::Transport(format!("{s}: {body}"))),
            s => Attempt::Done(Err(BackendError::Rejected {
                status: s.as_u16(),
                body,
            })),
        }
    }
}

fn parse_response(body: &str, request: &CompletionRequest) -> Result<CompletionResult, BackendError> {
    let parsed: ResponseBody = serde_json::from_str(body).map_err(|e| BackendError::Protocol(e.to_string()))?;
    let choice = parsed
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| BackendError::Protocol("response has no choices".into()))?;
    let raw = match request.mode {
        CompletionMode::Completion => choice.text,
        CompletionMode::Chat => choice.message.and_then(|m| m.content),
    }
    .ok_or_else(|| BackendError::Protocol("choice has no text".into()))?;

    // Idempotent for stops the server already applied; catches the client-side one.
    let (text, matched) = apply_stops(&raw, &request.config.stop_sequences);
    if let Some(stop) = matched {
        return Ok(CompletionResult::stopped(text, stop));
    }
    let finish_reason = match choice.finish_reason.as_deref() {
        Some("length") => FinishReason::Length,
        _ => FinishReason::End,
    };
    Ok(CompletionResult {
        text: raw,
        finish_reason,
        matched_stop: None,
    })
}

impl CompletionBackend for HttpBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, BackendError> {
        request.validate()?;
        let key = self
            .config
            .api_key
            .as_deref()
            .filter(|k| !k.trim().is_empty())
            .ok_or_else(|| BackendError::Auth(format!("no API key configured (set {API_KEY_ENV})")))?;
        let attempts = self.config.max_attempts.max(1);
        let mut last = BackendError::Transport("no attempt made".into());
        for attempt in 0..attempts {
            if attempt > 0 {
                std::thread::sleep(self.config.backoff_base * 2u32.pow(attempt - 1));
            }
            match self.attempt(request, key) {
                Attempt::Done(result) => return result,
                Attempt::Retry(err) => last = err,
            }
        }
        Err(last)
    }
}

#[cfg(test)]
mod tests {
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::{Arc, Mutex};

    use axum::extract::State;
    use axum::http::StatusCode as AxumStatus;
    use axum::routing::post;
    use axum::{Json, Router};

    use super::*;
    use crate::backend::GenerationConfig;
    use crate::prompt::{PromptKind, PromptText};

    #[derive(Clone, Default)]
    struct Stub {
        hits: Arc<AtomicUsize>,
        bodies: Arc<Mutex<Vec<Value>>>,
        /// Statuses returned before the first success.
        failures: Arc<Mutex<Vec<u16>>>,
    }

    async fn handle(State(stub): State<Stub>, Json(body): Json<Value>) -> (AxumStatus, Json<Value>) {
        stub.hits.fetch_add(1, Ordering::SeqCst);
        stub.bodies.lock().unwrap().push(body.clone());
        let failure = {
            let mut f = stub.failures.lock().unwrap();
            (!f.is_empty()).then(|| f.remove(0))
        };
        if let Some(code) = failure {
            return (AxumStatus::from_u16(code).unwrap(), Json(json!({"error": "stub"})));
        }
        let reply = if body.get("messages").is_some() {
            json!({"choices": [{"message": {"role": "assistant", "content": "What is the mood? Fine"}, "finish_reason": "stop"}]})
        } else {
            json!({"choices": [{"text": " What is the occasion?\nAnswer: A party", "finish_reason": "stop"}]})
        };
        (AxumStatus::OK, Json(reply))
    }

    /// Serves the stub on a background runtime; returns its base URL.
    fn serve(stub: Stub) -> String {
        let (tx, rx) = std::sync::mpsc::channel();
        std::thread::spawn(move || {
            let rt = tokio::runtime::Builder::new_current_thread()
                .enable_all()
                .build()
                .unwrap();
            rt.block_on(async move {
                let app = Router::new()
                    .route("/v1/completions", post(handle))
                    .route("/v1/chat/completions", post(handle))
                    .with_state(stub);
                let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
                tx.send(listener.local_addr().unwrap()).unwrap();
                axum::serve(listener, app).await.unwrap();
            });
        });
        format!("http://{}/v1", rx.recv().unwrap())
    }

    fn backend(endpoint: &str, key: Option<&str>) -> HttpBackend {
        let mut config = HttpBackendConfig::new(endpoint, key.map(String::from), "test-model");
        config.backoff_base = Duration::from_millis(1);
        config.timeout = Duration::from_secs(5);
        HttpBackend::new(config).unwrap()
    }

    fn request(mode: CompletionMode, stops: &[&str]) -> CompletionRequest {
        CompletionRequest::new(
            PromptText {
                text: "I am a famous poet.\nQuestion:".into(),
                kind: PromptKind::Stage1,
            },
            GenerationConfig::default().with_stops(stops.iter().copied()),
            mode,
        )
    }

    #[test]
    fn default_body_fields() {
        let stub = Stub::default();
        let url = serve(stub.clone());
        let b = backend(&url, Some("k"));
        let r = b
            .complete(&request(CompletionMode::Completion, &["Answer:", "?"]))
            .unwrap();
        assert_eq!(r.text, " What is the occasion");
        assert_eq!(r.matched_stop.as_deref(), Some("?"));
        let body = stub.bodies.lock().unwrap()[0].clone();
        assert_eq!(body["temperature"], json!(0.7));
        assert_eq!(body["max_tokens"], json!(512));
        assert_eq!(body["top_p"], json!(1.0));
        assert_eq!(body["model"], json!("test-model"));
        assert_eq!(body["prompt"], json!("I am a famous poet.\nQuestion:"));
        assert_eq!(body["stop"], json!(["Answer:"]));
    }

    #[test]
    fn chat_wraps_single_user_message() {
        let stub = Stub::default();
        let url = serve(stub.clone());
        let r = backend(&url, Some("k"))
            .complete(&request(CompletionMode::Chat, &[]))
            .unwrap();
        assert_eq!(r.text, "What is the mood? Fine");
        assert_eq!(r.finish_reason, FinishReason::End);
        let body = stub.bodies.lock().unwrap()[0].clone();
        assert_eq!(
            body["messages"],
            json!([{"role": "user", "content": "I am a famous poet.\nQuestion:"}])
        );
        assert!(body.get("prompt").is_none());
        assert!(body.get("stop").is_none());
    }

    #[test]
    fn missing_credentials_fail_without_request() {
        let stub = Stub::default();
        let url = serve(stub.clone());
        for key in [None, Some("  ")] {
            let err = backend(&url, key)
                .complete(&request(CompletionMode::Completion, &[]))
                .unwrap_err();
            assert!(matches!(err, BackendError::Auth(_)));
        }
        assert_eq!(stub.hits.load(Ordering::SeqCst), 0);
    }

    #[test]
    fn server_errors_are_retried() {
        let stub = Stub::default();
        stub.failures.lock().unwrap().extend([503, 429]);
        let url = serve(stub.clone());
        let r = backend(&url, Some("k")).complete(&request(CompletionMode::Completion, &[]));
        assert!(r.is_ok());
        assert_eq!(stub.hits.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn retries_are_bounded() {
        let stub = Stub::default();
        stub.failures.lock().unwrap().extend([429, 429, 429, 429]);
        let url = serve(stub.clone());
        let err = backend(&url, Some("k"))
            .complete(&request(CompletionMode::Completion, &[]))
            .unwrap_err();
        assert!(matches!(err, BackendError::RateLimited(_)));
        assert_eq!(stub.hits.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn client_errors_are_not_retried() {
        let stub = Stub::default();
        stub.failures.lock().unwrap().push(400);
        let url = serve(stub.clone());
        let err = backend(&url, Some("k"))
            .complete(&request(CompletionMode::Completion, &[]))
            .unwrap_err();
        assert!(matches!(err, BackendError::Rejected { status: 400, .. }));
        assert_eq!(stub.hits.load(Ordering::SeqCst), 1);

        stub.failures.lock().unwrap().push(401);
        let err = backend(&url, Some("k"))
            .complete(&request(CompletionMode::Completion, &[]))
            .unwrap_err();
        assert!(matches!(err, BackendError::Auth(_)));
    }

    #[test]
    fn unreachable_endpoint_is_transport_error() {
        let err = backend("http://127.0.0.1:9/v1", Some("k"))
            .complete(&request(CompletionMode::Completion, &[]))
            .unwrap_err();
        assert!(matches!(err, BackendError::Transport(_)));
    }

    #[test]
    fn bad_endpoint_rejected() {
        assert!(matches!(
            http_backend("not a url", Some("k".into()), "m"),
            Err(BackendError::InvalidRequest(_))
        ));
        assert!(http_backend("ftp://x", Some("k".into()), "m").is_err());
    }
}
