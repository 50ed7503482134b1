//! Chat-completions HTTP client (OpenAI-compatible wire format).

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{LlmClient, LlmError, PromptPair};

/// Default environment variable holding the API credential.
pub const DEFAULT_API_KEY_ENV: &str = "OPENAI_API_KEY";

#[derive(Debug, Clone)]
pub struct HttpClientConfig {
    /// Endpoint base, e.g. `https://api.openai.com/v1`.
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable carrying the credential. The value
    /// itself is held in memory only; it is never logged or written out.
    pub api_key_env: String,
    pub timeout: std::time::Duration,
}

impl Default for HttpClientConfig {
    fn default() -> Self {
        Self {
            base_url: "https://api.openai.com/v1".to_string(),
            model: "gpt-4".to_string(),
            api_key_env: DEFAULT_API_KEY_ENV.to_string(),
            timeout: std::time::Duration::from_secs(60),
        }
    }
}

pub struct HttpLlmClient {
    config: HttpClientConfig,
    api_key: String,
    agent: ureq::Agent,
}

impl std::fmt::Debug for HttpLlmClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        // The credential never appears in debug output.
        f.debug_struct("HttpLlmClient")
            .field("config", &self.config)
            .field("api_key", &"<redacted>")
            .finish()
    }
}

#[derive(Serialize)]
struct WireMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireResponseMessage,
}

#[derive(Deserialize)]
struct WireResponseMessage {
    content: Option<String>,
}

impl HttpLlmClient {
    /// Build a client, reading the credential from the configured
    /// environment variable.
    pub fn from_env(config: HttpClientConfig) -> Result<Self, LlmError> {
        let api_key = std::env::var(&config.api_key_env).map_err(|_| {
            LlmError::Fatal(format!(
                "credential environment variable {} is not set",
                config.api_key_env
            ))
        })?;
        Ok(Self::with_key(config, api_key))
    }

    pub fn with_key(config: HttpClientConfig, api_key: String) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .build()
            .into();
        Self { config, api_key, agent }
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }
}

impl LlmClient for HttpLlmClient {
    fn model_id(&self) -> &str {
        &self.config.model
    }

    fn complete(&self, prompt: &PromptPair) -> Result<String, LlmError> {
        // Temperature pinned to 0 so reruns are as repeatable as the
        // provider allows.
        let body = json!({
            "model": self.config.model,
            "temperature": 0,
            "messages": [
                WireMessage { role: "system", content: &prompt.system_message },
                WireMessage { role: "user", content: &prompt.user_message },
            ],
        });
        let response = self
            .agent
            .post(&self.endpoint())
            .header("authorization", &format!("Bearer {}", self.api_key))
            .header("content-type", "application/json")
            .send_json(&body);
        let mut response = match response {
            Ok(r) => r,
            Err(ureq::Error::StatusCode(code)) if code == 429 || code >= 500 => {
                return Err(LlmError::Transient(format!("http status {code}")))
            }
            Err(ureq::Error::StatusCode(code)) => {
                return Err(LlmError::Fatal(format!("http status {code}")))
            }
            Err(err) => return Err(LlmError::Transient(err.to_string())),
        };
        let parsed: WireResponse = response
            .body_mut()
            .read_json()
            .map_err(|e| LlmError::Fatal(format!("malformed completion response: {e}")))?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| LlmError::Fatal("completion response has no choices".to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;

    /// Minimal single-threaded HTTP server: answers each connection with the
    /// next canned response and records request bodies.
    fn serve(
        responses: Vec<(u16, String)>,
    ) -> (String, std::thread::JoinHandle<Vec<String>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let handle = std::thread::spawn(move || {
            let mut bodies = Vec::new();
            for (status, body) in responses {
                let (stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream);
                let mut content_length = 0usize;
                let mut saw_auth = false;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    let line = line.trim_end();
                    if line.is_empty() {
                        break;
                    }
                    let lower = line.to_ascii_lowercase();
                    if let Some(v) = lower.strip_prefix("content-length:") {
                        content_length = v.trim().parse().unwrap();
                    }
                    if lower.starts_with("authorization: bearer") {
                        saw_auth = true;
                    }
                }
                let mut buf = vec![0u8; content_length];
                reader.read_exact(&mut buf).unwrap();
                let mut recorded = String::from_utf8(buf).unwrap();
                if !saw_auth {
                    recorded = format!("NO_AUTH {recorded}");
                }
                bodies.push(recorded);
                let reply = format!(
                    "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                    body.len()
                );
                let mut stream = reader.into_inner();
                stream.write_all(reply.as_bytes()).unwrap();
            }
            bodies
        });
        (format!("http://{addr}"), handle)
    }

    fn ok_body(text: &str) -> String {
        serde_json::json!({
            "choices": [{"message": {"role": "assistant", "content": text}}]
        })
        .to_string()
    }

    fn test_client(base_url: String) -> HttpLlmClient {
        let config = HttpClientConfig {
            base_url,
            model: "test-model".to_string(),
            ..Default::default()
        };
        HttpLlmClient::with_key(config, "sk-test".to_string())
    }

    #[test]
    fn sends_expected_request_shape_and_parses_response() {
        let (url, handle) = serve(vec![(200, ok_body("A fine description."))]);
        let client = test_client(url);
        let prompt = super::super::build_prompt(&crate::mind::CategoryKey("a-b".into()));
        let out = client.complete(&prompt).unwrap();
        assert_eq!(out, "A fine description.");

        let bodies = handle.join().unwrap();
        let sent: serde_json::Value = serde_json::from_str(&bodies[0]).unwrap();
        assert_eq!(sent["model"], "test-model");
        assert_eq!(sent["temperature"], 0);
        assert_eq!(sent["messages"][0]["role"], "system");
        assert_eq!(sent["messages"][1]["role"], "user");
        assert_eq!(sent["messages"][1]["content"], "The news category is a-b");
        assert!(!bodies[0].starts_with("NO_AUTH"), "bearer credential was attached");
    }

    #[test]
    fn server_errors_are_transient_and_retryable() {
        let (url, handle) = serve(vec![
            (500, "{}".to_string()),
            (200, ok_body("recovered")),
        ]);
        let client = test_client(url);
        let prompt = super::super::build_prompt(&crate::mind::CategoryKey("a-b".into()));
        let policy = super::super::RetryPolicy::immediate();
        let out = policy.run(|| client.complete(&prompt)).unwrap();
        assert_eq!(out, "recovered");
        handle.join().unwrap();
    }

    #[test]
    fn auth_failure_is_fatal() {
        let (url, handle) = serve(vec![(401, "{}".to_string())]);
        let client = test_client(url);
        let prompt = super::super::build_prompt(&crate::mind::CategoryKey("a-b".into()));
        let err = client.complete(&prompt).unwrap_err();
        assert!(matches!(err, LlmError::Fatal(_)));
        handle.join().unwrap();
    }

    #[test]
    fn missing_credential_env_is_a_clear_error() {
        let config = HttpClientConfig {
            api_key_env: "NEWSREC_TEST_KEY_THAT_DOES_NOT_EXIST".to_string(),
            ..Default::default()
        };
        let err = HttpLlmClient::from_env(config).unwrap_err();
        assert!(err.to_string().contains("NEWSREC_TEST_KEY_THAT_DOES_NOT_EXIST"));
    }
}
