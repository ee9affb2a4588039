use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{BackendError, Capabilities, GenerationRequest, GenerationResponse, LanguageModel};

/// Pre-recorded responses for one conversation channel.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ChannelScript {
    pub responses: Vec<GenerationResponse>,
    /// Start over from the first response instead of running dry.
    #[serde(default)]
    pub cycle: bool,
}

/// Script file: `{"version": 1, "channels": {"prover-0": {"responses": [...]}}}`.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ReplayScript {
    #[serde(default = "default_version")]
    pub version: u32,
    pub channels: BTreeMap<String, ChannelScript>,
}

fn default_version() -> u32 {
    1
}

impl ReplayScript {
    pub fn new() -> Self {
        ReplayScript {
            version: 1,
            channels: BTreeMap::new(),
        }
    }

    pub fn with_channel(mut self, channel: impl Into<String>, responses: Vec<GenerationResponse>) -> Self {
        self.channels.insert(
            channel.into(),
            ChannelScript {
                responses,
                cycle: false,
            },
        );
        self
    }

    pub fn with_cycling_channel(mut self, channel: impl Into<String>, responses: Vec<GenerationResponse>) -> Self {
        self.channels
            .insert(channel.into(), ChannelScript { responses, cycle: true });
        self
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }
}

/// Language model that plays back a [`ReplayScript`], keyed by
/// (channel, call index within the channel).
#[derive(Debug)]
pub struct ReplayLlm {
    script: ReplayScript,
    positions: Mutex<HashMap<String, usize>>,
}

impl ReplayLlm {
    pub fn new(script: ReplayScript) -> Self {
        ReplayLlm {
            script,
            positions: Mutex::new(HashMap::new()),
        }
    }

    pub fn script(&self) -> &ReplayScript {
        &self.script
    }
}

impl LanguageModel for ReplayLlm {
    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResponse, BackendError> {
        request.validate()?;
        let mut positions = self.positions.lock().expect("replay position lock poisoned");
        let position = positions.entry(request.channel.clone()).or_insert(0);
        let exhausted = || BackendError::ScriptExhausted {
            channel: request.channel.clone(),
            position: *position,
        };
        let channel = self.script.channels.get(&request.channel).ok_or_else(exhausted)?;
        let index = if channel.cycle && !channel.responses.is_empty() {
            *position % channel.responses.len()
        } else {
            *position
        };
        let response = channel.responses.get(index).cloned().ok_or_else(exhausted)?;
        *position += 1;
        Ok(response)
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            concurrent: true,
            replayable: true,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{Message, Role, TokenUsage, ToolCall};

    fn request(channel: &str) -> GenerationRequest {
        GenerationRequest {
            channel: channel.into(),
            messages: vec![Message::new(Role::User, "go")],
            max_turn_tokens: 100,
        }
    }

    fn text(t: &str) -> GenerationResponse {
        GenerationResponse {
            text: t.into(),
            tool_calls: vec![],
            usage: TokenUsage {
                input_tokens: 10,
                cache_read_tokens: 0,
                output_tokens: 5,
            },
        }
    }

    #[test]
    fn runs_dry_after_script() {
        let llm = ReplayLlm::new(ReplayScript::new().with_channel("p", vec![text("a"), text("b"), text("c")]));
        for expected in ["a", "b", "c"] {
            assert_eq!(llm.generate(&request("p")).unwrap().text, expected);
        }
        assert!(matches!(
            llm.generate(&request("p")),
            Err(BackendError::ScriptExhausted { position: 3, .. })
        ));
        assert!(matches!(
            llm.generate(&request("other")),
            Err(BackendError::ScriptExhausted { .. })
        ));
    }

    #[test]
    fn cycling_channel_repeats() {
        let llm = ReplayLlm::new(ReplayScript::new().with_cycling_channel("r", vec![text("x"), text("y")]));
        let got: Vec<_> = (0..5).map(|_| llm.generate(&request("r")).unwrap().text).collect();
        assert_eq!(got, ["x", "y", "x", "y", "x"]);
    }

    #[test]
    fn tool_calls_survive_the_script_format() {
        let json = r#"{"version":1,"channels":{"p":{"responses":[
            {"text":"edit","tool_calls":[{"tool":"search_replace","search":"sorry","replace":"eval"}],
             "usage":{"input_tokens":3,"output_tokens":2}}]}}}"#;
        let script: ReplayScript = serde_json::from_str(json).unwrap();
        let llm = ReplayLlm::new(script);
        let out = llm.generate(&request("p")).unwrap();
        assert_eq!(
            out.tool_calls,
            vec![ToolCall::SearchReplace {
                search: "sorry".into(),
                replace: "eval".into()
            }]
        );
        assert_eq!(out.usage.cache_read_tokens, 0);
    }

    #[test]
    fn empty_messages_rejected_without_consuming() {
        let llm = ReplayLlm::new(ReplayScript::new().with_channel("p", vec![text("a")]));
        let mut bad = request("p");
        bad.messages.clear();
        assert!(matches!(llm.generate(&bad), Err(BackendError::InvalidRequest(_))));
        assert_eq!(llm.generate(&request("p")).unwrap().text, "a");
    }
}
