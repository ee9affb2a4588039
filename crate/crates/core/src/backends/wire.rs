//! HTTP backends speaking a neutral JSON protocol.
//!
//! Generation: `POST <url>` with
//! `{"channel", "messages": [{"role", "content"}], "max_tokens"}`; the reply
//! body is `{"text", "tool_calls", "usage"}` as in [`GenerationResponse`].
//!
//! Proving: `POST <url>` with `{"goal", "simulations", "timeout_ms", "seed"}`;
//! the reply body is a [`ProverOutcome`].
//!
//! The bearer token is read from `NEXUS_LLM_TOKEN` when present.

use std::time::Duration;

use serde::Serialize;

use super::{
    BackendError, Capabilities, FocusedProver, GenerationRequest, GenerationResponse, LanguageModel, Message,
    ProverBudget, ProverOutcome,
};

pub const TOKEN_ENV: &str = "NEXUS_LLM_TOKEN";

fn agent(timeout: Duration) -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(Some(timeout))
        .http_status_as_error(true)
        .build()
        .into()
}

fn post_json<B: Serialize, T: serde::de::DeserializeOwned>(
    agent: &ureq::Agent,
    url: &str,
    token: Option<&str>,
    body: &B,
) -> Result<T, BackendError> {
    let mut req = agent.post(url);
    if let Some(token) = token {
        req = req.header("Authorization", &format!("Bearer {token}"));
    }
    let mut resp = req
        .send_json(body)
        .map_err(|e| BackendError::Transport(e.to_string()))?;
    resp.body_mut()
        .read_json::<T>()
        .map_err(|e| BackendError::Transport(format!("malformed reply: {e}")))
}

#[derive(Serialize)]
struct WireGenerate<'a> {
    channel: &'a str,
    messages: &'a [Message],
    max_tokens: u32,
}

pub struct WireLlm {
    url: String,
    token: Option<String>,
    agent: ureq::Agent,
}

impl WireLlm {
    /// Reads the bearer token from the environment.
    pub fn from_env(url: impl Into<String>, timeout: Duration) -> Self {
        WireLlm {
            url: url.into(),
            token: std::env::var(TOKEN_ENV).ok().filter(|t| !t.is_empty()),
            agent: agent(timeout),
        }
    }
}

impl LanguageModel for WireLlm {
    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResponse, BackendError> {
        request.validate()?;
        let body = WireGenerate {
            channel: &request.channel,
            messages: &request.messages,
            max_tokens: request.max_turn_tokens,
        };
        post_json(&self.agent, &self.url, self.token.as_deref(), &body)
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            concurrent: true,
            replayable: false,
        }
    }
}

#[derive(Serialize)]
struct WireProve<'a> {
    goal: &'a str,
    simulations: u32,
    timeout_ms: u64,
    seed: u64,
}

pub struct WireProver {
    url: String,
    token: Option<String>,
}

impl WireProver {
    pub fn from_env(url: impl Into<String>) -> Self {
        WireProver {
            url: url.into(),
            token: std::env::var(TOKEN_ENV).ok().filter(|t| !t.is_empty()),
        }
    }
}

impl FocusedProver for WireProver {
    fn prove(&self, goal_text: &str, budget: &ProverBudget, seed: u64) -> Result<ProverOutcome, BackendError> {
        if goal_text.trim().is_empty() {
            return Err(BackendError::InvalidRequest("goal text is empty".into()));
        }
        let body = WireProve {
            goal: goal_text,
            simulations: budget.simulations,
            timeout_ms: budget.timeout_ms,
            seed,
        };
        let agent = agent(Duration::from_millis(budget.timeout_ms.max(1)));
        let outcome: ProverOutcome = post_json(&agent, &self.url, self.token.as_deref(), &body)?;
        if !outcome.is_well_formed() {
            return Err(BackendError::Transport(
                "prover reply is missing its script or feedback".into(),
            ));
        }
        Ok(outcome)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{Role, ToolCall};
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::thread;

    /// Serves one request and returns (request body, response sent).
    fn serve_once(reply: &'static str) -> (String, thread::JoinHandle<String>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1", listener.local_addr().unwrap());
        let handle = thread::spawn(move || {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut length = 0usize;
            let mut headers = String::new();
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line == "\r\n" || line.is_empty() {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    length = v.trim().parse().unwrap();
                }
                headers.push_str(&line);
            }
            let mut body = vec![0u8; length];
            reader.read_exact(&mut body).unwrap();
            let mut stream = stream;
            write!(
                stream,
                "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
                reply.len(),
                reply
            )
            .unwrap();
            format!("{headers}\n{}", String::from_utf8(body).unwrap())
        });
        (url, handle)
    }

    fn squash(s: &str) -> String {
        s.split_whitespace().collect()
    }

    #[test]
    fn wire_llm_maps_reply() {
        let (url, server) = serve_once(
            r#"{"text":"ok","tool_calls":[{"tool":"end_episode"}],"usage":{"input_tokens":7,"cache_read_tokens":1,"output_tokens":2}}"#,
        );
        let llm = WireLlm {
            url,
            token: Some("secret".into()),
            agent: agent(Duration::from_secs(5)),
        };
        let out = llm
            .generate(&GenerationRequest {
                channel: "prover-0".into(),
                messages: vec![Message::new(Role::User, "hello")],
                max_turn_tokens: 64,
            })
            .unwrap();
        assert_eq!(out.tool_calls, vec![ToolCall::EndEpisode { summary: None }]);
        assert_eq!(out.usage.input_tokens, 7);
        let seen = server.join().unwrap();
        assert!(seen.to_ascii_lowercase().contains("authorization: bearer secret"));
        assert!(squash(&seen).contains("\"max_tokens\":64"));
    }

    #[test]
    fn wire_prover_round_trip() {
        let (url, server) = serve_once(r#"{"verdict":"proved","script":"eval"}"#);
        let prover = WireProver { url, token: None };
        let out = prover.prove("⊢ 1 = 1", &ProverBudget::default(), 3).unwrap();
        assert_eq!(out, ProverOutcome::proved("eval"));
        let seen = server.join().unwrap();
        assert!(squash(&seen).contains("\"simulations\":400"), "{seen}");
    }

    #[test]
    fn unreachable_endpoint_is_transport_error() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/", listener.local_addr().unwrap());
        drop(listener);
        let llm = WireLlm {
            url,
            token: None,
            agent: agent(Duration::from_secs(2)),
        };
        let err = llm
            .generate(&GenerationRequest {
                channel: "p".into(),
                messages: vec![Message::new(Role::User, "x")],
                max_turn_tokens: 1,
            })
            .unwrap_err();
        assert!(matches!(err, BackendError::Transport(_)));
    }
}
