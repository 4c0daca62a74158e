//! Chat-completions oracle client.
//!
//! Transport failures are retried with exponential backoff; an unparseable
//! reply is re-asked once. Tokens from every attempt that produced a reply
//! are billed, including failed ones.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{parse_response, Oracle, OracleAnswer, OracleQuery};
use crate::error::{Error, Result};
use crate::select::{estimate_tokens, Pricing};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpOracleConfig {
    pub endpoint: String,
    pub model: String,
    /// Environment variable holding the bearer token.
    pub api_key_env: Option<String>,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub backoff_ms: u64,
}

impl Default for HttpOracleConfig {
    fn default() -> Self {
        Self {
            endpoint: String::new(),
            model: String::new(),
            api_key_env: Some("OPENAI_API_KEY".into()),
            timeout_secs: 60,
            max_retries: 2,
            backoff_ms: 500,
        }
    }
}

pub struct HttpLlmOracle {
    cfg: HttpOracleConfig,
    client: reqwest::blocking::Client,
    api_key: Option<String>,
    pricing: Pricing,
    chars_per_token: usize,
}

struct Reply {
    text: String,
    tokens_in: u64,
    tokens_out: u64,
}

impl HttpLlmOracle {
    pub fn new(cfg: HttpOracleConfig, pricing: Pricing, chars_per_token: usize) -> Result<Self> {
        let api_key = match &cfg.api_key_env {
            Some(var) => Some(
                std::env::var(var)
                    .map_err(|_| Error::Config(format!("environment variable {var} is not set")))?,
            ),
            None => None,
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(cfg.timeout_secs))
            .build()
            .map_err(|e| Error::Config(format!("http client: {e}")))?;
        Ok(Self {
            cfg,
            client,
            api_key,
            pricing,
            chars_per_token: chars_per_token.max(1),
        })
    }

    fn post_once(&self, prompt: &str) -> std::result::Result<Reply, String> {
        let body = json!({
            "model": self.cfg.model,
            "messages": [{"role": "user", "content": prompt}],
        });
        let mut req = self.client.post(&self.cfg.endpoint).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| e.to_string())?;
        let status = resp.status();
        if !status.is_success() {
            return Err(format!("http status {status}"));
        }
        let v: serde_json::Value = resp.json().map_err(|e| e.to_string())?;
        let text = v
            .pointer("/choices/0/message/content")
            .and_then(|c| c.as_str())
            .ok_or_else(|| "response has no choices[0].message.content".to_string())?
            .to_string();
        let usage = |key: &str| v.pointer(&format!("/usage/{key}")).and_then(|x| x.as_u64());
        Ok(Reply {
            tokens_in: usage("prompt_tokens")
                .unwrap_or_else(|| estimate_tokens(prompt, self.chars_per_token)),
            tokens_out: usage("completion_tokens")
                .unwrap_or_else(|| estimate_tokens(&text, self.chars_per_token)),
            text,
        })
    }

    /// Post with transport retries.
    fn post(&self, prompt: &str) -> std::result::Result<Reply, String> {
        let mut attempt = 0;
        loop {
            match self.post_once(prompt) {
                Ok(r) => return Ok(r),
                Err(e) if attempt >= self.cfg.max_retries => return Err(e),
                Err(e) => {
                    let wait = self.cfg.backoff_ms.saturating_mul(1 << attempt);
                    log::warn!("oracle request failed ({e}); retrying in {wait} ms");
                    std::thread::sleep(Duration::from_millis(wait));
                    attempt += 1;
                }
            }
        }
    }
}

impl Oracle for HttpLlmOracle {
    fn ask(&mut self, q: &OracleQuery) -> Result<OracleAnswer> {
        let (mut tokens_in, mut tokens_out) = (0u64, 0u64);
        let mut last_reply = String::new();
        for _ in 0..2 {
            let reply = self.post(&q.prompt).map_err(|message| Error::Oracle {
                message,
                tokens_in,
                tokens_out,
            })?;
            tokens_in += reply.tokens_in;
            tokens_out += reply.tokens_out;
            match parse_response(&reply.text, q.candidates.len()) {
                Ok(choice) => {
                    return Ok(OracleAnswer {
                        choice,
                        reply: reply.text,
                        tokens_in,
                        tokens_out,
                        cost: self.pricing.cost(tokens_in, tokens_out),
                    })
                }
                Err(_) => last_reply = reply.text,
            }
        }
        Err(Error::Oracle {
            message: format!("unparseable reply {last_reply:?}"),
            tokens_in,
            tokens_out,
        })
    }
}
