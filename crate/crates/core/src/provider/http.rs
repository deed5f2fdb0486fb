use std::time::Duration;

use parking_lot::{Condvar, Mutex};
use serde_json::{json, Value};

use super::{ChatProvider, ChatRequest, ProviderConfig, ProviderError};

/// Caps the number of concurrent requests to one provider.
pub(crate) struct Gate {
    limit: usize,
    in_flight: Mutex<usize>,
    freed: Condvar,
}

pub(crate) struct Permit<'a>(&'a Gate);

impl Gate {
    pub(crate) fn new(limit: usize) -> Self {
        Gate { limit: limit.max(1), in_flight: Mutex::new(0), freed: Condvar::new() }
    }

    pub(crate) fn acquire(&self) -> Permit<'_> {
        let mut n = self.in_flight.lock();
        while *n >= self.limit {
            self.freed.wait(&mut n);
        }
        *n += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.in_flight.lock() -= 1;
        self.0.freed.notify_one();
    }
}

pub(crate) fn post_json(agent: &ureq::Agent, cfg: &ProviderConfig, payload: &Value) -> Result<Value, ProviderError> {
    let mut req = agent.post(&cfg.endpoint).header("Content-Type", "application/json");
    if let Ok(key) = std::env::var(&cfg.api_key_env) {
        req = req.header("Authorization", &format!("Bearer {key}"));
    }
    let mut resp = req.send_json(payload).map_err(|e| ProviderError::Transport(e.to_string()))?;
    let status = resp.status().as_u16();
    let body = resp.body_mut().read_to_string().map_err(|e| ProviderError::Transport(e.to_string()))?;
    if !(200..300).contains(&status) {
        return Err(ProviderError::Status { status, body: body.chars().take(200).collect() });
    }
    serde_json::from_str(&body).map_err(|e| ProviderError::Malformed(e.to_string()))
}

/// Pulls the first text content out of common chat response shapes.
pub(crate) fn first_text(body: &Value) -> Option<String> {
    let candidates = [
        body.pointer("/choices/0/message/content"),
        body.pointer("/choices/0/text"),
        body.pointer("/content/0/text"),
        body.pointer("/message/content"),
        body.get("content"),
        body.get("output_text"),
        body.get("text"),
    ];
    candidates.into_iter().flatten().find_map(|v| v.as_str().map(str::to_string))
}

/// Chat provider over HTTP JSON.
pub struct HttpChat {
    cfg: ProviderConfig,
    agent: ureq::Agent,
    gate: Gate,
}

impl HttpChat {
    pub fn new(cfg: ProviderConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(cfg.timeout_secs.max(1))))
            .http_status_as_error(false)
            .build()
            .into();
        let gate = Gate::new(cfg.max_in_flight);
        HttpChat { cfg, agent, gate }
    }
}

impl ChatProvider for HttpChat {
    fn chat(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        let _permit = self.gate.acquire();
        let payload = json!({
            "model": request.model,
            "temperature": request.temperature,
            "messages": request.messages,
        });
        let mut last = ProviderError::Transport("no attempt made".into());
        for _ in 0..=self.cfg.max_retries {
            match post_json(&self.agent, &self.cfg, &payload) {
                Ok(body) => return first_text(&body).ok_or_else(|| ProviderError::Malformed("response has no text content".into())),
                Err(e @ ProviderError::Status { status, .. }) if status < 500 && status != 429 => return Err(e),
                Err(e) => last = e,
            }
        }
        Err(last)
    }
}
