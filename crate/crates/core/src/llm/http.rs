//! Chat-completion HTTP backend.

use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{LlmError, Provider, ProviderRequest, ProviderResponse, Usage};

/// Environment variable holding the bearer token.
pub const API_KEY_ENV: &str = "APIKG_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpSettings {
    /// Base URL; requests go to `<base_url>/chat/completions`.
    pub base_url: String,
    pub model: String,
    pub max_in_flight: usize,
    pub attempts: u32,
    pub initial_backoff_ms: u64,
    pub timeout_secs: u64,
}

impl Default for HttpSettings {
    fn default() -> Self {
        Self {
            base_url: "https://api.openai.com/v1".into(),
            model: "gpt-4o".into(),
            max_in_flight: 4,
            attempts: 3,
            initial_backoff_ms: 500,
            timeout_secs: 60,
        }
    }
}

struct Permits {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Permits {
    fn acquire(&self) -> PermitGuard<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        PermitGuard(self)
    }
}

struct PermitGuard<'a>(&'a Permits);

impl Drop for PermitGuard<'_> {
    fn drop(&mut self) {
        let mut free = self.0.free.lock().unwrap_or_else(|e| e.into_inner());
        *free += 1;
        self.0.cv.notify_one();
    }
}

enum Failure {
    Transient(String),
    Fatal(String),
}

pub struct HttpProvider {
    settings: HttpSettings,
    api_key: Option<String>,
    agent: ureq::Agent,
    permits: Permits,
    id: String,
}

impl HttpProvider {
    /// Reads the API key from [`API_KEY_ENV`] if set.
    pub fn new(settings: HttpSettings) -> Self {
        let key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
        Self::with_key(settings, key)
    }

    pub fn with_key(settings: HttpSettings, api_key: Option<String>) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(settings.timeout_secs.max(1))))
            .http_status_as_error(false)
            .build()
            .into();
        let permits = Permits {
            free: Mutex::new(settings.max_in_flight.max(1)),
            cv: Condvar::new(),
        };
        let id = format!("http:{}", settings.model);
        Self {
            settings,
            api_key,
            agent,
            permits,
            id,
        }
    }

    fn endpoint(&self) -> String {
        format!(
            "{}/chat/completions",
            self.settings.base_url.trim_end_matches('/')
        )
    }

    fn body(&self, request: &ProviderRequest) -> serde_json::Value {
        json!({
            "model": self.settings.model,
            "messages": [{"role": "user", "content": request.rendered_prompt}],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
            "n": request.n,
            "frequency_penalty": request.frequency_penalty,
            "presence_penalty": request.presence_penalty,
        })
    }

    fn attempt(&self, body: &serde_json::Value) -> Result<ProviderResponse, Failure> {
        let mut req = self.agent.post(&self.endpoint());
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(body)
            .map_err(|e| Failure::Transient(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| Failure::Transient(e.to_string()))?;
        if status == 429 || status >= 500 {
            return Err(Failure::Transient(format!("HTTP {status}")));
        }
        if status != 200 {
            return Err(Failure::Fatal(format!("HTTP {status}: {text}")));
        }
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| Failure::Fatal(e.to_string()))?;
        let raw_text = value["choices"][0]["message"]["content"]
            .as_str()
            .ok_or_else(|| Failure::Fatal("response has no choices[0].message.content".into()))?
            .to_string();
        let usage = value.get("usage").and_then(|u| {
            Some(Usage {
                prompt_tokens: u.get("prompt_tokens")?.as_u64()?,
                completion_tokens: u.get("completion_tokens")?.as_u64()?,
            })
        });
        Ok(ProviderResponse {
            raw_text,
            provider_id: self.id.clone(),
            usage,
        })
    }
}

impl Provider for HttpProvider {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, request: &ProviderRequest) -> Result<ProviderResponse, LlmError> {
        let _permit = self.permits.acquire();
        let body = self.body(request);
        let attempts = self.settings.attempts.max(1);
        let mut backoff = Duration::from_millis(self.settings.initial_backoff_ms);
        let mut last = String::new();
        for n in 1..=attempts {
            match self.attempt(&body) {
                Ok(r) => return Ok(r),
                Err(Failure::Fatal(msg)) => {
                    return Err(LlmError::ProviderUnavailable {
                        provider: self.id.clone(),
                        attempts: n,
                        message: msg,
                    })
                }
                Err(Failure::Transient(msg)) => {
                    log::warn!("{}: attempt {n}/{attempts} failed: {msg}", self.id);
                    last = msg;
                    if n < attempts {
                        thread::sleep(backoff);
                        backoff *= 2;
                    }
                }
            }
        }
        Err(LlmError::ProviderUnavailable {
            provider: self.id.clone(),
            attempts,
            message: last,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::Unit;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::Arc;

    fn quick(base_url: String) -> HttpSettings {
        HttpSettings {
            base_url,
            model: "test-model".into(),
            initial_backoff_ms: 1,
            timeout_secs: 5,
            ..HttpSettings::default()
        }
    }

    /// Serves the given (status, body) pairs, one per connection, and
    /// returns the received request bodies and headers.
    fn serve(replies: Vec<(u16, String)>) -> (String, thread::JoinHandle<Vec<(String, String)>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let handle = thread::spawn(move || {
            let mut seen = Vec::new();
            for (status, body) in replies {
                let (stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut headers = String::new();
                let mut len = 0usize;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                    headers.push_str(&line);
                }
                let mut buf = vec![0u8; len];
                reader.read_exact(&mut buf).unwrap();
                seen.push((headers, String::from_utf8(buf).unwrap()));
                let mut stream = stream;
                write!(
                    stream,
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                )
                .unwrap();
                stream.flush().unwrap();
            }
            seen
        });
        (format!("http://{addr}/v1"), handle)
    }

    fn ok_body(content: &str) -> String {
        json!({
            "choices": [{"message": {"role": "assistant", "content": content}}],
            "usage": {"prompt_tokens": 12, "completion_tokens": 3}
        })
        .to_string()
    }

    #[test]
    fn unreachable_endpoint_gives_up_after_three_attempts() {
        // bind then drop to get a port nobody listens on
        let port = TcpListener::bind("127.0.0.1:0")
            .unwrap()
            .local_addr()
            .unwrap()
            .port();
        let p = HttpProvider::with_key(quick(format!("http://127.0.0.1:{port}")), None);
        let req = ProviderRequest::for_unit(Unit::EntityExtraction, "hello".into());
        match p.complete(&req) {
            Err(LlmError::ProviderUnavailable { attempts, .. }) => assert_eq!(attempts, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn posts_chat_completion_body() {
        let (url, server) = serve(vec![(200, ok_body("HashMap\nHashtable"))]);
        let p = HttpProvider::with_key(quick(url), Some("secret".into()));
        let req = ProviderRequest::for_unit(Unit::EntityExtraction, "the prompt".into());
        let resp = p.complete(&req).unwrap();
        assert_eq!(resp.raw_text, "HashMap\nHashtable");
        assert_eq!(
            resp.usage,
            Some(Usage {
                prompt_tokens: 12,
                completion_tokens: 3
            })
        );
        let seen = server.join().unwrap();
        let (headers, body) = &seen[0];
        assert!(headers.starts_with("POST /v1/chat/completions"));
        assert!(headers
            .to_ascii_lowercase()
            .contains("authorization: bearer secret"));
        let v: serde_json::Value = serde_json::from_str(body).unwrap();
        assert_eq!(v["model"], "test-model");
        assert_eq!(v["temperature"], 0.0);
        assert_eq!(v["max_tokens"], 128);
        assert_eq!(v["n"], 1);
        assert_eq!(v["frequency_penalty"], 0.0);
        assert_eq!(v["presence_penalty"], 0.0);
        assert_eq!(v["messages"][0]["content"], "the prompt");
    }

    #[test]
    fn retries_transient_status_then_succeeds() {
        let (url, server) = serve(vec![
            (503, "{}".into()),
            (429, "{}".into()),
            (200, ok_body("ok")),
        ]);
        let p = HttpProvider::with_key(quick(url), None);
        let req = ProviderRequest::for_unit(Unit::EntityTypeFusion, "p".into());
        assert_eq!(p.complete(&req).unwrap().raw_text, "ok");
        assert_eq!(server.join().unwrap().len(), 3);
    }

    #[test]
    fn client_errors_are_not_retried() {
        let (url, server) = serve(vec![(401, "{\"error\":\"bad key\"}".into())]);
        let p = HttpProvider::with_key(quick(url), None);
        let req = ProviderRequest::for_unit(Unit::EntityExtraction, "p".into());
        match p.complete(&req) {
            Err(LlmError::ProviderUnavailable { attempts, .. }) => assert_eq!(attempts, 1),
            other => panic!("unexpected {other:?}"),
        }
        server.join().unwrap();
    }

    #[test]
    fn in_flight_limit_is_respected() {
        let permits = Arc::new(Permits {
            free: Mutex::new(2),
            cv: Condvar::new(),
        });
        let active = Arc::new(Mutex::new((0usize, 0usize)));
        let handles: Vec<_> = (0..8)
            .map(|_| {
                let permits = Arc::clone(&permits);
                let active = Arc::clone(&active);
                thread::spawn(move || {
                    let _g = permits.acquire();
                    {
                        let mut a = active.lock().unwrap();
                        a.0 += 1;
                        a.1 = a.1.max(a.0);
                    }
                    thread::sleep(Duration::from_millis(5));
                    active.lock().unwrap().0 -= 1;
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        assert!(active.lock().unwrap().1 <= 2);
    }
}
