//! Text-completion clients for the teacher and judge models.
//!
//! Every network call goes through [`TextCompletion`]. Cassettes map a SHA-256
//! of the prompt to a recorded response: [`ReplayClient`] answers only from a
//! cassette and never touches the network; [`RecordingClient`] appends new
//! responses from a live client.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::sync::{Arc, Condvar, Mutex, RwLock};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::jsonl::{self, JsonlError};

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("endpoint unreachable: {0}")]
    Unreachable(String),
    #[error("endpoint returned HTTP {status}")]
    Status { status: u16 },
    #[error("unexpected response shape: {0}")]
    BadResponse(String),
    #[error("no cassette entry for request {key}")]
    CassetteMiss { key: String },
    #[error("cassette is read-only")]
    ReadOnlyCassette,
    #[error("cassette: {0}")]
    Cassette(#[from] JsonlError),
    #[error("cassette write: {0}")]
    CassetteWrite(#[from] std::io::Error),
}

pub trait TextCompletion: Send + Sync {
    fn complete(&self, prompt: &str) -> Result<String, ClientError>;

    /// True when the client is guaranteed never to open a network connection.
    fn is_offline(&self) -> bool {
        false
    }
}

impl<T: TextCompletion + ?Sized> TextCompletion for Arc<T> {
    fn complete(&self, prompt: &str) -> Result<String, ClientError> {
        (**self).complete(prompt)
    }

    fn is_offline(&self) -> bool {
        (**self).is_offline()
    }
}

/// Content hash identifying a request in a cassette.
pub fn request_key(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CassetteEntry {
    pub key: String,
    pub prompt: String,
    pub response: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CassetteMode {
    Replay,
    Record,
}

/// Recorded responses keyed by request hash. Later entries for a key win.
#[derive(Debug)]
pub struct Cassette {
    mode: CassetteMode,
    entries: RwLock<HashMap<String, String>>,
    sink: Mutex<Option<File>>,
}

impl Cassette {
    pub fn from_entries(entries: impl IntoIterator<Item = CassetteEntry>) -> Self {
        Cassette {
            mode: CassetteMode::Replay,
            entries: RwLock::new(entries.into_iter().map(|e| (e.key, e.response)).collect()),
            sink: Mutex::new(None),
        }
    }

    fn read_entries(path: &Path) -> Result<Vec<CassetteEntry>, JsonlError> {
        Ok(jsonl::read_records_from::<CassetteEntry>(path)?
            .into_iter()
            .map(|l| l.value)
            .collect())
    }

    /// Read-only cassette for replay.
    pub fn load(path: &Path) -> Result<Self, ClientError> {
        Ok(Self::from_entries(Self::read_entries(path)?))
    }

    /// Appendable cassette; existing entries (if the file exists) are served first.
    pub fn open_for_record(path: &Path) -> Result<Self, ClientError> {
        let existing = if path.exists() {
            Self::read_entries(path)?
        } else {
            Vec::new()
        };
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        let mut c = Self::from_entries(existing);
        c.mode = CassetteMode::Record;
        c.sink = Mutex::new(Some(file));
        Ok(c)
    }

    pub fn mode(&self) -> CassetteMode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cassette lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn lookup(&self, prompt: &str) -> Option<String> {
        self.entries
            .read()
            .expect("cassette lock")
            .get(&request_key(prompt))
            .cloned()
    }

    pub fn record(&self, prompt: &str, response: &str) -> Result<(), ClientError> {
        if self.mode != CassetteMode::Record {
            return Err(ClientError::ReadOnlyCassette);
        }
        let entry = CassetteEntry {
            key: request_key(prompt),
            prompt: prompt.to_string(),
            response: response.to_string(),
        };
        let mut sink = self.sink.lock().expect("cassette sink lock");
        if let Some(f) = sink.as_mut() {
            let mut line = serde_json::to_vec(&entry).expect("entry serializes");
            line.push(b'\n');
            f.write_all(&line)?;
            f.flush()?;
        }
        self.entries
            .write()
            .expect("cassette lock")
            .insert(entry.key, entry.response);
        Ok(())
    }
}

/// Serves responses from a cassette only.
#[derive(Debug, Clone)]
pub struct ReplayClient {
    cassette: Arc<Cassette>,
}

impl ReplayClient {
    pub fn new(cassette: Arc<Cassette>) -> Self {
        ReplayClient { cassette }
    }

    pub fn load(path: &Path) -> Result<Self, ClientError> {
        Ok(Self::new(Arc::new(Cassette::load(path)?)))
    }
}

impl TextCompletion for ReplayClient {
    fn complete(&self, prompt: &str) -> Result<String, ClientError> {
        self.cassette.lookup(prompt).ok_or_else(|| ClientError::CassetteMiss {
            key: request_key(prompt),
        })
    }

    fn is_offline(&self) -> bool {
        true
    }
}

/// Answers from the cassette when possible, otherwise asks `inner` and records.
pub struct RecordingClient<C> {
    inner: C,
    cassette: Arc<Cassette>,
}

impl<C: TextCompletion> RecordingClient<C> {
    pub fn new(inner: C, cassette: Arc<Cassette>) -> Self {
        RecordingClient { inner, cassette }
    }
}

impl<C: TextCompletion> TextCompletion for RecordingClient<C> {
    fn complete(&self, prompt: &str) -> Result<String, ClientError> {
        if let Some(hit) = self.cassette.lookup(prompt) {
            return Ok(hit);
        }
        let response = self.inner.complete(prompt)?;
        self.cassette.record(prompt, &response)?;
        Ok(response)
    }
}

/// Counting semaphore bounding in-flight requests.
#[derive(Debug)]
struct Semaphore {
    permits: Mutex<usize>,
    freed: Condvar,
}

impl Semaphore {
    fn new(n: usize) -> Self {
        Semaphore {
            permits: Mutex::new(n.max(1)),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.permits.lock().expect("semaphore lock");
        while *n == 0 {
            n = self.freed.wait(n).expect("semaphore lock");
        }
        *n -= 1;
        Permit { sem: self }
    }
}

struct Permit<'a> {
    sem: &'a Semaphore,
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.sem.permits.lock().expect("semaphore lock") += 1;
        self.sem.freed.notify_one();
    }
}

/// Where and how to reach a chat-completions style endpoint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EndpointDescriptor {
    pub url: String,
    pub api_key: Option<String>,
    pub model: Option<String>,
}

impl EndpointDescriptor {
    /// Reads `{PREFIX}_ENDPOINT`, `{PREFIX}_API_KEY` and `{PREFIX}_MODEL`.
    pub fn from_env(prefix: &str) -> Option<Self> {
        let url = std::env::var(format!("{prefix}_ENDPOINT")).ok()?;
        Some(EndpointDescriptor {
            url,
            api_key: std::env::var(format!("{prefix}_API_KEY")).ok(),
            model: std::env::var(format!("{prefix}_MODEL")).ok(),
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 4,
            initial_backoff: Duration::from_millis(500),
        }
    }
}

/// Blocking client for an OpenAI-compatible `chat/completions` endpoint.
///
/// The prompt is sent as a single user message with temperature 0.
pub struct HttpCompletion {
    endpoint: EndpointDescriptor,
    agent: ureq::Agent,
    retry: RetryPolicy,
    in_flight: Semaphore,
}

impl HttpCompletion {
    pub fn new(endpoint: EndpointDescriptor, max_in_flight: usize, retry: RetryPolicy) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(120)))
            .http_status_as_error(false)
            .build()
            .into();
        HttpCompletion {
            endpoint,
            agent,
            retry,
            in_flight: Semaphore::new(max_in_flight),
        }
    }

    fn request_body(&self, prompt: &str) -> Value {
        json!({
            "model": self.endpoint.model.as_deref().unwrap_or("default"),
            "temperature": 0,
            "messages": [{"role": "user", "content": prompt}],
        })
    }

    fn attempt(&self, body: &Value) -> Result<String, ClientError> {
        let mut req = self.agent.post(&self.endpoint.url);
        if let Some(key) = &self.endpoint.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(body)
            .map_err(|e| ClientError::Unreachable(e.to_string()))?;
        let status = resp.status().as_u16();
        if status != 200 {
            return Err(ClientError::Status { status });
        }
        let v: Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| ClientError::BadResponse(e.to_string()))?;
        v.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| ClientError::BadResponse("missing choices[0].message.content".into()))
    }
}

fn retryable(e: &ClientError) -> bool {
    match e {
        ClientError::Unreachable(_) => true,
        ClientError::Status { status } => *status == 429 || *status >= 500,
        _ => false,
    }
}

impl TextCompletion for HttpCompletion {
    fn complete(&self, prompt: &str) -> Result<String, ClientError> {
        let _permit = self.in_flight.acquire();
        let body = self.request_body(prompt);
        let mut backoff = self.retry.initial_backoff;
        let mut attempt = 1;
        loop {
            match self.attempt(&body) {
                Err(e) if retryable(&e) && attempt < self.retry.max_attempts => {
                    std::thread::sleep(backoff);
                    backoff *= 2;
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}
