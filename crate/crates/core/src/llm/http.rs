//! OpenAI-style HTTP chat-completion backend.

use std::time::{Duration, Instant};

use serde_json::json;

use crate::llm::{BackendReply, ChatBackend, LlmError, LlmRequest};

pub struct HttpBackend {
    endpoint: String,
    api_key: Option<String>,
    model: String,
    transport_retries: u32,
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    pub fn new(endpoint: &str, api_key: Option<String>, model: &str) -> Result<Self, LlmError> {
        Self::with_timeout(endpoint, api_key, model, Duration::from_secs(120))
    }

    pub fn with_timeout(
        endpoint: &str,
        api_key: Option<String>,
        model: &str,
        timeout: Duration,
    ) -> Result<Self, LlmError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| LlmError::Config(format!("http client: {e}")))?;
        Ok(Self {
            endpoint: endpoint.to_string(),
            api_key,
            model: model.to_string(),
            transport_retries: 2,
            client,
        })
    }

    fn post_once(&self, body: &serde_json::Value) -> Result<String, String> {
        let mut request = self.client.post(&self.endpoint).json(body);
        if let Some(key) = &self.api_key {
            request = request.bearer_auth(key);
        }
        let response = request.send().map_err(|e| e.to_string())?;
        let status = response.status();
        let text = response.text().map_err(|e| e.to_string())?;
        if !status.is_success() {
            return Err(format!("status {status}: {}", text.chars().take(200).collect::<String>()));
        }
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| format!("invalid JSON body: {e}"))?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| "response missing choices[0].message.content".to_string())
    }
}

impl ChatBackend for HttpBackend {
    fn send(&self, req: &LlmRequest) -> Result<BackendReply, LlmError> {
        let mut messages = Vec::new();
        if !req.system_prompt.is_empty() {
            messages.push(json!({"role": "system", "content": req.system_prompt}));
        }
        messages.push(json!({"role": "user", "content": req.user_prompt}));
        let mut body = json!({
            "model": self.model,
            "messages": messages,
            "max_tokens": req.decode.max_output_tokens,
        });
        if let Some(beam) = req.decode.beam_width {
            body["beam_width"] = json!(beam);
        }
        let started = Instant::now();
        let mut last_err = String::new();
        for attempt in 0..=self.transport_retries {
            match self.post_once(&body) {
                Ok(text) => {
                    return Ok(BackendReply {
                        text,
                        simulated_latency_ms: None,
                    })
                }
                Err(e) => last_err = e,
            }
            if attempt < self.transport_retries {
                std::thread::sleep(Duration::from_millis(200 * (attempt as u64 + 1)));
            }
        }
        Err(LlmError::Transport {
            reason: last_err,
            elapsed_ms: started.elapsed().as_millis() as u64,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{CallTag, DecodeParams};
    use std::io::{Read, Write};
    use std::net::TcpListener;

    fn spawn_server(body: &'static str, respond: bool) -> String {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                let mut stream = match stream {
                    Ok(s) => s,
                    Err(_) => break,
                };
                let mut buf = [0u8; 8192];
                let _ = stream.read(&mut buf);
                if respond {
                    let payload = format!(
                        "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
                        body.len(),
                        body
                    );
                    let _ = stream.write_all(payload.as_bytes());
                }
            }
        });
        format!("http://{addr}/v1/chat/completions")
    }

    fn request() -> LlmRequest {
        LlmRequest {
            backend_id: "http".into(),
            query_id: "q".into(),
            tag: CallTag::Generate,
            system_prompt: String::new(),
            user_prompt: "hello".into(),
            decode: DecodeParams::default(),
        }
    }

    #[test]
    fn parses_openai_style_response() {
        let endpoint = spawn_server(
            r#"{"choices":[{"message":{"role":"assistant","content":"ANSWER: hi"}}]}"#,
            true,
        );
        let backend = HttpBackend::new(&endpoint, None, "test-model").unwrap();
        let reply = backend.send(&request()).unwrap();
        assert_eq!(reply.text, "ANSWER: hi");
    }

    #[test]
    fn timeout_surfaces_as_transport_error() {
        let endpoint = spawn_server("", false);
        let backend = HttpBackend::with_timeout(
            &endpoint,
            None,
            "test-model",
            Duration::from_millis(200),
        )
        .unwrap();
        match backend.send(&request()) {
            Err(LlmError::Transport { elapsed_ms, .. }) => assert!(elapsed_ms >= 200),
            other => panic!("expected transport error, got {other:?}"),
        }
    }
}
