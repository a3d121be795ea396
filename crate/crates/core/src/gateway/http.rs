//! Generic chat-completions client.
//!
//! Wire format: `POST <endpoint>` with a JSON body carrying `model`,
//! `temperature` and a `messages` array of role/content pairs, bearer-token
//! auth. The reply text is read from `choices[0].message.content`.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{BackendConfig, BackendKind, ChatBackend, GatewayError};

const BACKOFF_BASE: Duration = Duration::from_millis(200);

#[derive(Debug, Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    temperature: f64,
    messages: [ChatMessage<'a>; 1],
}

#[derive(Debug, Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Debug, Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Debug, Deserialize)]
struct Choice {
    message: ReplyMessage,
}

#[derive(Debug, Deserialize)]
struct ReplyMessage {
    content: Option<String>,
}

pub struct HttpChatBackend {
    endpoint: String,
    model: String,
    api_key: String,
    max_retries: u32,
    agent: ureq::Agent,
}

impl std::fmt::Debug for HttpChatBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpChatBackend")
            .field("endpoint", &self.endpoint)
            .field("model", &self.model)
            .field("max_retries", &self.max_retries)
            .finish_non_exhaustive()
    }
}

/// TLS is mandatory except for loopback hosts.
fn check_endpoint(endpoint: &str) -> Result<(), GatewayError> {
    if endpoint.starts_with("https://") {
        return Ok(());
    }
    let Some(rest) = endpoint.strip_prefix("http://") else {
        return Err(GatewayError::Config(format!("endpoint `{endpoint}` must be an http(s) URL")));
    };
    let authority = rest.split('/').next().unwrap_or_default();
    let host = if let Some(v6) = authority.strip_prefix('[') {
        v6.split(']').next().unwrap_or_default()
    } else {
        authority.split(':').next().unwrap_or_default()
    };
    if matches!(host, "localhost" | "127.0.0.1" | "::1") {
        Ok(())
    } else {
        Err(GatewayError::Config(format!("endpoint `{endpoint}` must use https (plain http is only allowed for localhost)")))
    }
}

impl HttpChatBackend {
    /// Fails with [`GatewayError::Auth`] when the credential variable is
    /// unset, before any network traffic.
    pub fn new(config: &BackendConfig) -> Result<Self, GatewayError> {
        let api_key = std::env::var(&config.api_key_env)
            .ok()
            .filter(|k| !k.trim().is_empty())
            .ok_or_else(|| GatewayError::Auth(format!("environment variable {} is not set", config.api_key_env)))?;
        let endpoint = config
            .endpoint
            .clone()
            .ok_or_else(|| GatewayError::Config("HTTP chat backend needs an endpoint".into()))?;
        check_endpoint(&endpoint)?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout()))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self { endpoint, model: config.model_name.clone(), api_key, max_retries: config.max_retries, agent })
    }

    fn attempt(&self, body: &str) -> Result<String, Attempt> {
        let response = self
            .agent
            .post(&self.endpoint)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .header("Content-Type", "application/json")
            .send(body)
            .map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = response.status().as_u16();
        let text = response.into_body().read_to_string().map_err(|e| Attempt::Retry(e.to_string()))?;
        match status {
            200..=299 => {
                let parsed: ChatResponse = serde_json::from_str(&text)
                    .map_err(|e| Attempt::Fatal(GatewayError::Transport(format!("unexpected response body: {e}"))))?;
                parsed
                    .choices
                    .into_iter()
                    .next()
                    .and_then(|c| c.message.content)
                    .ok_or_else(|| Attempt::Fatal(GatewayError::Transport("response has no message content".into())))
            }
            401 | 403 => Err(Attempt::Fatal(GatewayError::Auth(format!("endpoint rejected credentials ({status})")))),
            408 | 429 | 500..=599 => Err(Attempt::Retry(format!("HTTP {status}"))),
            _ => Err(Attempt::Fatal(GatewayError::Transport(format!("HTTP {status}: {}", text.trim())))),
        }
    }
}

enum Attempt {
    Retry(String),
    Fatal(GatewayError),
}

impl ChatBackend for HttpChatBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::HttpChat
    }

    fn complete(&self, prompt: &str, temperature: f64) -> Result<String, GatewayError> {
        let body = serde_json::to_string(&ChatRequest {
            model: &self.model,
            temperature,
            messages: [ChatMessage { role: "user", content: prompt }],
        })
        .expect("request serialization is infallible");
        let mut last = String::new();
        for attempt in 0..=self.max_retries {
            if attempt > 0 {
                std::thread::sleep(BACKOFF_BASE * 2u32.saturating_pow(attempt - 1));
            }
            match self.attempt(&body) {
                Ok(text) => return Ok(text),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(msg)) => {
                    log::warn!("chat request attempt {} failed: {msg}", attempt + 1);
                    last = msg;
                }
            }
        }
        Err(GatewayError::Transport(format!("{last} (after {} retries)", self.max_retries)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::mpsc;

    /// Serves one canned (status, body) per connection and forwards each
    /// request (headers + body) to the returned channel.
    fn serve(replies: Vec<(u16, String)>) -> (String, mpsc::Receiver<String>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            for (status, body) in replies {
                let (stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream);
                let mut head = String::new();
                let mut len = 0usize;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                    head.push_str(&line);
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                }
                let mut buf = vec![0; len];
                reader.read_exact(&mut buf).unwrap();
                head.push_str(&String::from_utf8(buf).unwrap());
                tx.send(head).unwrap();
                let mut stream = reader.into_inner();
                write!(
                    stream,
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                )
                .unwrap();
            }
        });
        (format!("http://127.0.0.1:{}/v1/chat/completions", addr.port()), rx)
    }

    fn config(endpoint: &str, env: &str) -> BackendConfig {
        BackendConfig {
            endpoint: Some(endpoint.to_string()),
            api_key_env: env.to_string(),
            max_retries: 2,
            timeout_secs: 5.0,
            ..BackendConfig::default()
        }
    }

    const OK_BODY: &str = r#"{"choices": [{"message": {"role": "assistant", "content": "Day 1: 0 -> 0"}}]}"#;

    #[test]
    fn unset_credential_is_auth_error() {
        let c = config("https://example.invalid/v1", "ROUTEFORGE_TEST_UNSET_KEY_VAR");
        assert!(matches!(HttpChatBackend::new(&c), Err(GatewayError::Auth(_))));
    }

    #[test]
    fn plain_http_only_for_loopback() {
        assert!(check_endpoint("https://api.example.com/v1").is_ok());
        assert!(check_endpoint("http://localhost:8080/v1").is_ok());
        assert!(check_endpoint("http://127.0.0.1/v1").is_ok());
        assert!(check_endpoint("http://[::1]:9/v1").is_ok());
        assert!(check_endpoint("http://api.example.com/v1").is_err());
        assert!(check_endpoint("ftp://x").is_err());
    }

    #[test]
    fn sends_chat_wire_format() {
        std::env::set_var("ROUTEFORGE_TEST_KEY_WIRE", "sekret");
        let (url, rx) = serve(vec![(200, OK_BODY.to_string())]);
        let b = HttpChatBackend::new(&config(&url, "ROUTEFORGE_TEST_KEY_WIRE")).unwrap();
        assert_eq!(b.complete("hello model", 0.0).unwrap(), "Day 1: 0 -> 0");
        let request = rx.recv().unwrap();
        assert!(request.starts_with("POST /v1/chat/completions"));
        assert!(request.to_ascii_lowercase().contains("authorization: bearer sekret"));
        let body: serde_json::Value = serde_json::from_str(request.split("\r\n\r\n").nth(1).unwrap()).unwrap();
        assert_eq!(body["model"], "gpt-4-turbo");
        assert_eq!(body["messages"][0]["role"], "user");
        assert_eq!(body["messages"][0]["content"], "hello model");
        assert_eq!(body["temperature"], 0.0);
    }

    #[test]
    fn retries_server_errors() {
        std::env::set_var("ROUTEFORGE_TEST_KEY_RETRY", "k");
        let (url, rx) = serve(vec![(503, "{}".into()), (200, OK_BODY.to_string())]);
        let b = HttpChatBackend::new(&config(&url, "ROUTEFORGE_TEST_KEY_RETRY")).unwrap();
        assert_eq!(b.complete("p", 0.7).unwrap(), "Day 1: 0 -> 0");
        assert_eq!(rx.try_iter().count(), 2);
    }

    #[test]
    fn gives_up_after_retries() {
        std::env::set_var("ROUTEFORGE_TEST_KEY_GIVEUP", "k");
        let (url, _rx) = serve(vec![(500, "{}".into()), (500, "{}".into()), (500, "{}".into())]);
        let b = HttpChatBackend::new(&config(&url, "ROUTEFORGE_TEST_KEY_GIVEUP")).unwrap();
        assert!(matches!(b.complete("p", 0.7), Err(GatewayError::Transport(_))));
    }

    #[test]
    fn rejected_credentials() {
        std::env::set_var("ROUTEFORGE_TEST_KEY_401", "k");
        let (url, _rx) = serve(vec![(401, "{}".into())]);
        let b = HttpChatBackend::new(&config(&url, "ROUTEFORGE_TEST_KEY_401")).unwrap();
        assert!(matches!(b.complete("p", 0.7), Err(GatewayError::Auth(_))));
    }
}
