//! HTTP client for chat-completions compatible providers.

use std::sync::{Arc, Mutex};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use super::{fit_embedding, ChatBackend, ChatRequest, Embedder, LlmError};

/// Called with each backoff delay. Tests substitute a recorder.
pub type Sleeper = Arc<dyn Fn(Duration) + Send + Sync>;

#[derive(Debug, Clone, PartialEq)]
pub struct RemoteConfig {
    pub base_url: String,
    pub api_key: Option<String>,
    pub model: String,
    pub embedding_model: String,
    /// Per-attempt timeout.
    pub timeout: Duration,
    pub max_retries: u32,
    /// First backoff delay; doubles on each retry.
    pub backoff_base: Duration,
    /// Relative jitter applied to each delay, e.g. 0.2 for ±20%.
    pub jitter: f64,
    pub jitter_seed: u64,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            base_url: "https://api.openai.com".into(),
            api_key: None,
            model: "gpt-3.5-turbo".into(),
            embedding_model: "text-embedding-3-small".into(),
            timeout: Duration::from_secs(30),
            max_retries: 3,
            backoff_base: Duration::from_secs(1),
            jitter: 0.2,
            jitter_seed: 0,
        }
    }
}

impl RemoteConfig {
    /// Reads `LLM_API_KEY` (required), `LLM_BASE_URL`, `LLM_MODEL` and
    /// `LLM_EMBEDDING_MODEL`.
    pub fn from_env() -> Result<Self, LlmError> {
        let api_key = std::env::var("LLM_API_KEY")
            .ok()
            .filter(|k| !k.is_empty())
            .ok_or_else(|| LlmError::Config("LLM_API_KEY is not set".into()))?;
        let mut cfg = Self {
            api_key: Some(api_key),
            ..Self::default()
        };
        if let Ok(url) = std::env::var("LLM_BASE_URL") {
            if !url.is_empty() {
                cfg.base_url = url;
            }
        }
        if let Ok(m) = std::env::var("LLM_MODEL") {
            cfg.model = m;
        }
        if let Ok(m) = std::env::var("LLM_EMBEDDING_MODEL") {
            cfg.embedding_model = m;
        }
        Ok(cfg)
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base_url.trim_end_matches('/'))
    }
}

/// Delays before each retry: `base·2^i` scaled by a factor in `[1−j, 1+j]`.
pub fn backoff_schedule(
    base: Duration,
    retries: u32,
    jitter: f64,
    rng: &mut impl Rng,
) -> Vec<Duration> {
    (0..retries)
        .map(|i| {
            let factor = if jitter > 0.0 {
                rng.gen_range(1.0 - jitter..=1.0 + jitter)
            } else {
                1.0
            };
            base.mul_f64(2f64.powi(i as i32) * factor)
        })
        .collect()
}

pub struct RemoteBackend {
    config: RemoteConfig,
    client: reqwest::blocking::Client,
    sleeper: Sleeper,
    rng: Mutex<ChaCha8Rng>,
}

impl RemoteBackend {
    pub fn new(config: RemoteConfig) -> Result<Self, LlmError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| LlmError::Config(e.to_string()))?;
        let rng = Mutex::new(ChaCha8Rng::seed_from_u64(config.jitter_seed));
        Ok(Self {
            config,
            client,
            sleeper: Arc::new(std::thread::sleep),
            rng,
        })
    }

    pub fn from_env() -> Result<Self, LlmError> {
        Self::new(RemoteConfig::from_env()?)
    }

    pub fn with_sleeper(mut self, sleeper: Sleeper) -> Self {
        self.sleeper = sleeper;
        self
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    /// POST with retries on transport errors, 429 and 5xx.
    fn post_json(&self, path: &str, body: &Value) -> Result<Value, LlmError> {
        let delays = {
            let mut rng = self.rng.lock().expect("jitter rng");
            backoff_schedule(
                self.config.backoff_base,
                self.config.max_retries,
                self.config.jitter,
                &mut *rng,
            )
        };
        let url = self.config.url(path);
        let mut last = String::new();
        for attempt in 0..=self.config.max_retries {
            if attempt > 0 {
                (self.sleeper)(delays[attempt as usize - 1]);
            }
            let mut req = self.client.post(&url).json(body);
            if let Some(key) = &self.config.api_key {
                req = req.bearer_auth(key);
            }
            match req.send() {
                Err(e) => last = e.to_string(),
                Ok(resp) => {
                    let status = resp.status();
                    if status.is_success() {
                        return resp
                            .json::<Value>()
                            .map_err(|e| LlmError::BadResponse(e.to_string()));
                    }
                    let text = resp.text().unwrap_or_default();
                    if status.as_u16() == 429 || status.is_server_error() {
                        last = format!("status {status}: {text}");
                    } else {
                        return Err(LlmError::Rejected {
                            status: status.as_u16(),
                            body: text,
                        });
                    }
                }
            }
            tracing::warn!(attempt = attempt + 1, error = %last, "llm request failed");
        }
        Err(LlmError::Transport {
            attempts: self.config.max_retries + 1,
            message: last,
        })
    }
}

impl ChatBackend for RemoteBackend {
    fn complete(&self, request: &ChatRequest) -> Result<String, LlmError> {
        request.validate()?;
        let model = if request.model_tag.is_empty() {
            &self.config.model
        } else {
            &request.model_tag
        };
        let body = json!({
            "model": model,
            "messages": request.messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        let value = self.post_json("/v1/chat/completions", &body)?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| LlmError::BadResponse("missing choices[0].message.content".into()))
    }
}

/// Provider embeddings refit to the crate's fixed dimension.
pub struct RemoteEmbedder {
    backend: RemoteBackend,
}

impl RemoteEmbedder {
    pub fn new(backend: RemoteBackend) -> Self {
        Self { backend }
    }
}

impl Embedder for RemoteEmbedder {
    fn embed(&self, text: &str) -> Result<Vec<f64>, LlmError> {
        if text.trim().is_empty() {
            return Err(LlmError::EmptyText);
        }
        let body = json!({ "model": self.backend.config.embedding_model, "input": text });
        let value = self.backend.post_json("/v1/embeddings", &body)?;
        let raw = value["data"][0]["embedding"]
            .as_array()
            .ok_or_else(|| LlmError::BadResponse("missing data[0].embedding".into()))?
            .iter()
            .map(|x| {
                x.as_f64()
                    .ok_or_else(|| LlmError::BadResponse("non-numeric embedding component".into()))
            })
            .collect::<Result<Vec<f64>, _>>()?;
        fit_embedding(raw)
    }

    fn tag(&self) -> String {
        format!("remote:{}", self.backend.config.embedding_model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use axum::extract::State;
    use axum::http::StatusCode;
    use axum::routing::post;
    use axum::{Json, Router};
    use std::sync::atomic::{AtomicUsize, Ordering};

    /// Serves `failures` 503s, then a valid response.
    fn stub_server(failures: usize) -> (String, Arc<AtomicUsize>) {
        let hits = Arc::new(AtomicUsize::new(0));
        let state = (hits.clone(), failures);
        let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        listener.set_nonblocking(true).unwrap();
        let addr = listener.local_addr().unwrap();
        std::thread::spawn(move || {
            let rt = tokio::runtime::Builder::new_current_thread()
                .enable_all()
                .build()
                .unwrap();
            rt.block_on(async move {
                async fn chat(
                    State((hits, failures)): State<(Arc<AtomicUsize>, usize)>,
                    Json(body): Json<Value>,
                ) -> (StatusCode, Json<Value>) {
                    let n = hits.fetch_add(1, Ordering::SeqCst);
                    if n < failures {
                        return (StatusCode::SERVICE_UNAVAILABLE, Json(json!({})));
                    }
                    let last = body["messages"][0]["content"].as_str().unwrap_or("").to_string();
                    (StatusCode::OK, Json(json!({"choices": [{"message": {"role": "assistant", "content": format!("echo {last}")}}]})))
                }
                async fn embed(State((hits, _)): State<(Arc<AtomicUsize>, usize)>) -> Json<Value> {
                    hits.fetch_add(1, Ordering::SeqCst);
                    Json(json!({"data": [{"embedding": [0.0, 2.0, 0.0]}]}))
                }
                let app = Router::new()
                    .route("/v1/chat/completions", post(chat))
                    .route("/v1/embeddings", post(embed))
                    .with_state(state);
                let listener = tokio::net::TcpListener::from_std(listener).unwrap();
                axum::serve(listener, app).await.unwrap();
            });
        });
        (format!("http://{addr}"), hits)
    }

    fn backend(url: String, slept: Arc<Mutex<Vec<Duration>>>) -> RemoteBackend {
        let cfg = RemoteConfig {
            base_url: url,
            api_key: Some("k".into()),
            ..RemoteConfig::default()
        };
        RemoteBackend::new(cfg)
            .unwrap()
            .with_sleeper(Arc::new(move |d| slept.lock().unwrap().push(d)))
    }

    #[test]
    fn schedule_is_exponential_with_bounded_jitter() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let s = backoff_schedule(Duration::from_secs(1), 3, 0.2, &mut rng);
            assert_eq!(s.len(), 3);
            for (i, d) in s.iter().enumerate() {
                let nominal = 2f64.powi(i as i32);
                assert!(
                    d.as_secs_f64() >= 0.8 * nominal - 1e-9
                        && d.as_secs_f64() <= 1.2 * nominal + 1e-9
                );
            }
        }
    }

    #[test]
    fn retries_then_succeeds() {
        let (url, hits) = stub_server(2);
        let slept = Arc::new(Mutex::new(Vec::new()));
        let b = backend(url, slept.clone());
        assert_eq!(b.complete(&ChatRequest::user("hi")).unwrap(), "echo hi");
        assert_eq!(hits.load(Ordering::SeqCst), 3);
        assert_eq!(slept.lock().unwrap().len(), 2);
    }

    #[test]
    fn gives_up_after_four_attempts() {
        let (url, hits) = stub_server(usize::MAX);
        let slept = Arc::new(Mutex::new(Vec::new()));
        let b = backend(url, slept.clone());
        assert!(matches!(
            b.complete(&ChatRequest::user("hi")),
            Err(LlmError::Transport { attempts: 4, .. })
        ));
        assert_eq!(hits.load(Ordering::SeqCst), 4);
        assert_eq!(slept.lock().unwrap().len(), 3);
    }

    #[test]
    fn unreachable_host_is_transport_error() {
        let slept = Arc::new(Mutex::new(Vec::new()));
        let b = backend("http://127.0.0.1:9".into(), slept.clone());
        assert!(matches!(
            b.complete(&ChatRequest::user("hi")),
            Err(LlmError::Transport { attempts: 4, .. })
        ));
    }

    #[test]
    fn remote_embedding_is_refit() {
        let (url, _) = stub_server(0);
        let e = RemoteEmbedder::new(backend(url, Arc::new(Mutex::new(Vec::new()))));
        let v = e.embed("anything").unwrap();
        assert_eq!(v.len(), 256);
        assert_eq!(v[1], 1.0);
        assert_eq!(e.embed(" "), Err(LlmError::EmptyText));
    }
}
