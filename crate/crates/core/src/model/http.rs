//! HTTP adapter for remote completion/fine-tune endpoints.
//!
//! ```text
//! POST /v1/complete        {model_id, prompt, max_new_tokens, deterministic}  -> {completion}
//! POST /v1/finetune        {base_model_id, pairs, hyperparams}                 -> {job_id}
//! GET  /v1/finetune/{id}   -> {status, checkpoints, result_model_id?, error?}
//! ```
//!
//! Responses carrying token probabilities or logits are rejected: the audit
//! must stay label-only.

use std::time::Duration;

use reqwest::blocking::{Client, RequestBuilder, Response};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use super::{CompletionReply, FineTuneSpec, Hyperparams, JobSnapshot, ModelBackend};
use crate::error::{Error, Result};

#[derive(Serialize)]
struct CompleteRequest<'a> {
    model_id: &'a str,
    prompt: &'a str,
    max_new_tokens: usize,
    deterministic: bool,
}

#[derive(Serialize)]
struct WirePair<'a> {
    prompt: &'a str,
    completion: &'a str,
}

#[derive(Serialize)]
struct FinetuneRequest<'a> {
    base_model_id: &'a str,
    pairs: Vec<WirePair<'a>>,
    hyperparams: &'a Hyperparams,
}

#[derive(Debug, Clone)]
pub struct HttpBackend {
    base_url: String,
    token: Option<String>,
    http: Client,
}

fn forbidden_key(key: &str) -> bool {
    let k = key.to_ascii_lowercase();
    k.contains("prob") || k.contains("logit")
}

/// Rejects probability-bearing keys anywhere in the response.
fn check_label_only(value: &Value) -> Result<()> {
    match value {
        Value::Object(map) => {
            if let Some(k) = map.keys().find(|k| forbidden_key(k)) {
                return Err(Error::ProtocolViolation(format!(
                    "response field `{k}` exposes probabilities; only labels are accepted"
                )));
            }
            map.values().try_for_each(check_label_only)
        }
        Value::Array(items) => items.iter().try_for_each(check_label_only),
        _ => Ok(()),
    }
}

fn field<T: DeserializeOwned>(map: &mut Map<String, Value>, key: &str, what: &str) -> Result<T> {
    let v = map
        .remove(key)
        .ok_or_else(|| Error::ProtocolViolation(format!("{what} response lacks `{key}`")))?;
    serde_json::from_value(v).map_err(|e| Error::ProtocolViolation(format!("{what} `{key}`: {e}")))
}

impl HttpBackend {
    pub fn new(base_url: &str, token: Option<String>) -> Result<Self> {
        Self::with_timeout(base_url, token, Duration::from_secs(120))
    }

    pub fn with_timeout(base_url: &str, token: Option<String>, timeout: Duration) -> Result<Self> {
        let http = Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| Error::Transport(e.to_string()))?;
        Ok(Self {
            base_url: base_url.trim_end_matches('/').to_string(),
            token,
            http,
        })
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base_url)
    }

    fn send(&self, req: RequestBuilder) -> Result<Response> {
        let req = match &self.token {
            Some(t) => req.bearer_auth(t),
            None => req,
        };
        req.send().map_err(|e| Error::Transport(e.to_string()))
    }

    /// Checks status and returns the body as a JSON object.
    fn object(resp: Response, what: &str) -> Result<Map<String, Value>> {
        let status = resp.status();
        let text = resp.text().map_err(|e| Error::Transport(e.to_string()))?;
        if !status.is_success() {
            let message = serde_json::from_str::<Value>(&text)
                .ok()
                .and_then(|v| v.get("error").and_then(Value::as_str).map(str::to_string))
                .unwrap_or(text);
            return Err(Error::Endpoint {
                status: status.as_u16(),
                message,
            });
        }
        let value: Value = serde_json::from_str(&text)
            .map_err(|e| Error::ProtocolViolation(format!("{what} response is not JSON: {e}")))?;
        check_label_only(&value)?;
        match value {
            Value::Object(map) => Ok(map),
            _ => Err(Error::ProtocolViolation(format!(
                "{what} response is not an object"
            ))),
        }
    }
}

impl ModelBackend for HttpBackend {
    fn complete(
        &self,
        model_id: &str,
        prompt: &str,
        max_new_tokens: usize,
    ) -> Result<CompletionReply> {
        let body = CompleteRequest {
            model_id,
            prompt,
            max_new_tokens,
            deterministic: true,
        };
        let resp = self.send(self.http.post(self.url("/v1/complete")).json(&body))?;
        let mut map = Self::object(resp, "complete")?;
        let text: String = field(&mut map, "completion", "complete")?;
        Ok(CompletionReply {
            text,
            ignored_fields: map.keys().cloned().collect(),
        })
    }

    fn start_finetune(&self, base_model_id: &str, spec: &FineTuneSpec) -> Result<String> {
        let body = FinetuneRequest {
            base_model_id,
            pairs: spec
                .pairs
                .iter()
                .map(|p| WirePair {
                    prompt: &p.prompt,
                    completion: &p.completion,
                })
                .collect(),
            hyperparams: &spec.hyperparams,
        };
        let resp = self.send(self.http.post(self.url("/v1/finetune")).json(&body))?;
        field(&mut Self::object(resp, "finetune")?, "job_id", "finetune")
    }

    fn fetch_job(&self, job_id: &str) -> Result<JobSnapshot> {
        let resp = self.send(self.http.get(self.url(&format!("/v1/finetune/{job_id}"))))?;
        if resp.status().as_u16() == 404 {
            return Err(Error::UnknownJob(job_id.into()));
        }
        let map = Self::object(resp, "job")?;
        serde_json::from_value(Value::Object(map))
            .map_err(|e| Error::ProtocolViolation(format!("job {job_id}: {e}")))
    }
}
