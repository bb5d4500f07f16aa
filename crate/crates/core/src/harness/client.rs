use std::collections::{BTreeMap, HashSet};
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use futures::StreamExt;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::mpsc;

use super::{read_responses, write_responses, ResponseRecord, Status};
use crate::error::{Error, Result};
use crate::evalgen::{CaseReader, EvalCase};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EndpointConfig {
    /// Everything before `/chat/completions`, e.g. `http://localhost:8000/v1`.
    pub base_url: String,
    pub model_id: String,
    /// Name of the environment variable holding the bearer token. When set,
    /// the variable must exist.
    pub auth_env_var: Option<String>,
    pub max_output_tokens: u32,
    pub temperature: f64,
    pub request_timeout_secs: f64,
    pub max_concurrency: usize,
    pub retries: u32,
    pub backoff_base_ms: u64,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8000/v1".into(),
            model_id: "model".into(),
            auth_env_var: None,
            max_output_tokens: 64,
            temperature: 0.0,
            request_timeout_secs: 600.0,
            max_concurrency: 8,
            retries: 3,
            backoff_base_ms: 500,
        }
    }
}

impl EndpointConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_concurrency == 0 {
            return Err(Error::config("max_concurrency must be >= 1"));
        }
        if !(self.request_timeout_secs > 0.0) {
            return Err(Error::config("request_timeout_secs must be > 0"));
        }
        if !(self.temperature >= 0.0) {
            return Err(Error::config("temperature must be >= 0"));
        }
        reqwest::Url::parse(&self.base_url).map_err(|e| Error::config(format!("bad base_url: {e}")))?;
        Ok(())
    }

    /// The bearer token, read only from the configured variable.
    pub fn token(&self) -> Result<Option<String>> {
        match &self.auth_env_var {
            None => Ok(None),
            Some(var) => std::env::var(var)
                .map(Some)
                .map_err(|_| Error::config(format!("auth variable {var} is not set"))),
        }
    }

    pub fn url(&self) -> String {
        format!("{}/chat/completions", self.base_url.trim_end_matches('/'))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSummary {
    pub cases: usize,
    pub skipped: usize,
    pub attempted: usize,
    pub ok: usize,
    pub errors: usize,
    /// HTTP requests sent, retries included.
    pub requests: u64,
}

impl RunSummary {
    pub fn check(&self) -> Result<()> {
        if self.errors > 0 {
            return Err(Error::Endpoint(format!(
                "{} of {} cases failed after retries",
                self.errors, self.cases
            )));
        }
        Ok(())
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct Usage {
    prompt_tokens: Option<u64>,
    completion_tokens: Option<u64>,
}

enum Attempt {
    Done(ResponseRecord),
    Retry(String, String),
    Fatal(String, String),
}

struct Client {
    http: reqwest::Client,
    cfg: EndpointConfig,
    token: Option<String>,
    requests: AtomicU64,
}

impl Client {
    async fn attempt(&self, case: &EvalCase) -> Attempt {
        let body = json!({
            "model": self.cfg.model_id,
            "messages": [{"role": "user", "content": case.prompt}],
            "temperature": self.cfg.temperature,
            "max_tokens": self.cfg.max_output_tokens,
        });
        let mut req = self.http.post(self.cfg.url()).json(&body);
        if let Some(t) = &self.token {
            req = req.bearer_auth(t);
        }
        self.requests.fetch_add(1, Ordering::Relaxed);
        let start = Instant::now();
        let resp = match req.send().await {
            Ok(r) => r,
            Err(e) if e.is_timeout() => return Attempt::Retry("timeout".into(), e.to_string()),
            Err(e) => return Attempt::Retry("connect".into(), e.to_string()),
        };
        let status = resp.status();
        if !status.is_success() {
            let msg = format!("HTTP {status}");
            return if status.is_server_error() || status.as_u16() == 429 {
                Attempt::Retry("http_status".into(), msg)
            } else {
                Attempt::Fatal("http_status".into(), msg)
            };
        }
        let parsed: ChatResponse = match resp.json().await {
            Ok(p) => p,
            Err(e) if e.is_timeout() => return Attempt::Retry("timeout".into(), e.to_string()),
            Err(e) => return Attempt::Fatal("decode".into(), e.to_string()),
        };
        let latency = start.elapsed().as_millis() as u64;
        let Some(choice) = parsed.choices.into_iter().next() else {
            return Attempt::Fatal("decode".into(), "response has no choices".into());
        };
        let usage = parsed.usage;
        Attempt::Done(ResponseRecord {
            case_id: case.case_id.clone(),
            response_text: choice.message.content.unwrap_or_default(),
            latency_ms: Some(latency),
            status: Status::Ok,
            error_kind: None,
            prompt_tokens: usage.as_ref().and_then(|u| u.prompt_tokens),
            completion_tokens: usage.as_ref().and_then(|u| u.completion_tokens),
        })
    }

    async fn complete(&self, case: EvalCase) -> ResponseRecord {
        let mut tries = 0;
        loop {
            let (kind, msg) = match self.attempt(&case).await {
                Attempt::Done(r) => return r,
                Attempt::Fatal(kind, msg) => (kind, msg),
                Attempt::Retry(_, msg) if tries < self.cfg.retries => {
                    let wait = self.cfg.backoff_base_ms.saturating_mul(1 << tries.min(16));
                    log::debug!("{}: {msg}; retrying in {wait} ms", case.case_id);
                    tokio::time::sleep(Duration::from_millis(wait)).await;
                    tries += 1;
                    continue;
                }
                Attempt::Retry(kind, msg) => (kind, msg),
            };
            log::warn!("{}: giving up: {msg}", case.case_id);
            return ResponseRecord {
                case_id: case.case_id,
                response_text: String::new(),
                latency_ms: None,
                status: Status::Error,
                error_kind: Some(kind),
                prompt_tokens: None,
                completion_tokens: None,
            };
        }
    }
}

/// Sends every case in `case_file` to the endpoint and writes one record per
/// case to `output`, sorted by case id. With `resume`, cases that already
/// have an `ok` record in `output` are skipped; error records are retried.
///
/// Cases that still fail after retries become error records; check
/// [`RunSummary::check`] to turn them into an endpoint error.
pub fn run(case_file: &Path, endpoint: &EndpointConfig, output: &Path, resume: bool) -> Result<RunSummary> {
    endpoint.validate()?;
    let token = endpoint.token()?;
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| Error::io("tokio runtime", e))?;
    rt.block_on(run_async(case_file, endpoint, token, output, resume))
}

async fn run_async(
    case_file: &Path,
    endpoint: &EndpointConfig,
    token: Option<String>,
    output: &Path,
    resume: bool,
) -> Result<RunSummary> {
    let mut ids = Vec::new();
    let mut seen = HashSet::new();
    for (i, case) in CaseReader::open(case_file)?.enumerate() {
        let id = case?.case_id;
        if !seen.insert(id.clone()) {
            return Err(Error::format(case_file.display().to_string(), i, format!("duplicate case id {id}")));
        }
        ids.push(id);
    }

    let mut previous: BTreeMap<String, ResponseRecord> = BTreeMap::new();
    if resume && output.exists() {
        for r in read_responses(output)? {
            previous.insert(r.case_id.clone(), r);
        }
    }
    let done: HashSet<String> = previous
        .values()
        .filter(|r| r.is_ok() && seen.contains(&r.case_id))
        .map(|r| r.case_id.clone())
        .collect();

    let client = Arc::new(Client {
        http: reqwest::Client::builder()
            .timeout(Duration::from_secs_f64(endpoint.request_timeout_secs))
            .build()
            .map_err(|e| Error::config(format!("http client: {e}")))?,
        cfg: endpoint.clone(),
        token,
        requests: AtomicU64::new(0),
    });

    // Records are appended as they complete by a single writer task.
    let mut file = std::fs::OpenOptions::new()
        .create(true)
        .append(resume)
        .write(true)
        .truncate(!resume)
        .open(output)
        .map_err(|e| Error::io(output, e))?;
    let (tx, mut rx) = mpsc::channel::<ResponseRecord>(endpoint.max_concurrency * 2);
    let out_path = output.to_path_buf();
    let writer = tokio::spawn(async move {
        let mut fresh = Vec::new();
        while let Some(r) = rx.recv().await {
            let mut line = serde_json::to_vec(&r).expect("record serializes");
            line.push(b'\n');
            file.write_all(&line).map_err(|e| Error::io(&out_path, e))?;
            fresh.push(r);
        }
        Ok::<_, Error>(fresh)
    });

    let pending = CaseReader::open(case_file)?.filter(|c| !matches!(c, Ok(c) if done.contains(&c.case_id)));
    let results = futures::stream::iter(pending)
        .map(|case| {
            let client = client.clone();
            let tx = tx.clone();
            async move {
                let record = client.complete(case?).await;
                tx.send(record).await.map_err(|_| Error::Endpoint("response writer stopped".into()))
            }
        })
        .buffer_unordered(endpoint.max_concurrency)
        .collect::<Vec<Result<()>>>()
        .await;
    drop(tx);
    let fresh = writer.await.map_err(|e| Error::Endpoint(format!("writer task: {e}")))??;
    results.into_iter().collect::<Result<()>>()?;

    let attempted = fresh.len();
    for r in fresh {
        previous.insert(r.case_id.clone(), r);
    }
    let records: Vec<ResponseRecord> = previous.into_values().filter(|r| seen.contains(&r.case_id)).collect();
    let tmp = output.with_extension("tmp");
    write_responses(&tmp, &records)?;
    std::fs::rename(&tmp, output).map_err(|e| Error::io(output, e))?;

    let errors = records.iter().filter(|r| !r.is_ok()).count();
    Ok(RunSummary {
        cases: ids.len(),
        skipped: done.len(),
        attempted,
        ok: records.len() - errors,
        errors,
        requests: client.requests.load(Ordering::Relaxed),
    })
}
