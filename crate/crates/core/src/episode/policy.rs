//! Agent policies: the conversation-side counterpart of the environment.
//!
//! A policy maps the message history to the next raw assistant string. Two
//! implementations ship: [`ScriptedPolicy`] replays a fixed message list
//! (deterministically), and [`RemotePolicy`] POSTs the history to a
//! chat-completions-compatible endpoint.

use std::fs;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Message, Role};

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("policy endpoint unreachable: {0}")]
    Unreachable(String),
    #[error("policy script unreadable: {0}")]
    Script(String),
}

/// Emitted once a scripted policy has exhausted its messages; carries no tool
/// calls, so the episode ends with a policy stop.
pub const SCRIPT_EXHAUSTED_MESSAGE: &str = "No further action required.";

pub trait Policy: Send {
    fn next_message(&mut self, messages: &[Message]) -> Result<String, PolicyError>;
}

/// Replays an ordered message list; optionally cycles forever.
#[derive(Debug, Clone)]
pub struct ScriptedPolicy {
    messages: Vec<String>,
    cursor: usize,
    repeating: bool,
}

impl ScriptedPolicy {
    pub fn new(messages: Vec<String>) -> Self {
        Self {
            messages,
            cursor: 0,
            repeating: false,
        }
    }

    /// Cycle through `messages` forever instead of stopping.
    pub fn repeating(messages: Vec<String>) -> Self {
        Self {
            messages,
            cursor: 0,
            repeating: true,
        }
    }

    /// Load a JSON array of message strings.
    pub fn from_json_file(path: &Path) -> Result<Self, PolicyError> {
        let bytes = fs::read(path).map_err(|e| PolicyError::Script(e.to_string()))?;
        let messages: Vec<String> =
            serde_json::from_slice(&bytes).map_err(|e| PolicyError::Script(e.to_string()))?;
        Ok(Self::new(messages))
    }
}

impl Policy for ScriptedPolicy {
    fn next_message(&mut self, _messages: &[Message]) -> Result<String, PolicyError> {
        if self.messages.is_empty() {
            return Ok(SCRIPT_EXHAUSTED_MESSAGE.to_string());
        }
        if self.cursor >= self.messages.len() {
            if self.repeating {
                self.cursor = 0;
            } else {
                return Ok(SCRIPT_EXHAUSTED_MESSAGE.to_string());
            }
        }
        let message = self.messages[self.cursor].clone();
        self.cursor += 1;
        Ok(message)
    }
}

#[derive(Serialize)]
struct WireMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Deserialize)]
struct WireReply {
    content: String,
}

/// Chat-completion wire call to a configured endpoint: POST
/// `{"messages": [{"role", "content"}…]}`, expecting `{"content": …}` back.
#[derive(Debug, Clone)]
pub struct RemotePolicy {
    url: String,
    bearer_token: Option<String>,
    timeout: Duration,
}

impl RemotePolicy {
    pub fn new(url: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            bearer_token: None,
            timeout: Duration::from_secs(600),
        }
    }

    pub fn with_bearer_token(mut self, token: Option<String>) -> Self {
        self.bearer_token = token;
        self
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }
}

impl Policy for RemotePolicy {
    fn next_message(&mut self, messages: &[Message]) -> Result<String, PolicyError> {
        let wire: Vec<WireMessage> = messages
            .iter()
            .map(|m| WireMessage {
                role: role_name(m.role),
                content: &m.content,
            })
            .collect();
        let body = serde_json::json!({ "messages": wire }).to_string();

        let mut request = ureq::post(&self.url)
            .timeout(self.timeout)
            .set("Content-Type", "application/json");
        if let Some(token) = &self.bearer_token {
            request = request.set("Authorization", &format!("Bearer {token}"));
        }
        let response = request
            .send_string(&body)
            .map_err(|e| PolicyError::Unreachable(e.to_string()))?;
        let text = response
            .into_string()
            .map_err(|e| PolicyError::Unreachable(e.to_string()))?;
        let reply: WireReply = serde_json::from_str(&text)
            .map_err(|e| PolicyError::Unreachable(format!("malformed reply: {e}")))?;
        Ok(reply.content)
    }
}

fn role_name(role: Role) -> &'static str {
    match role {
        Role::System => "system",
        Role::User => "user",
        Role::Assistant => "assistant",
        Role::Tool => "tool",
    }
}

/// Declarative policy configuration, instantiated once per episode so every
/// episode gets an independent cursor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PolicySpec {
    Scripted {
        path: String,
        #[serde(default)]
        repeating: bool,
    },
    ScriptedInline {
        messages: Vec<String>,
        #[serde(default)]
        repeating: bool,
    },
    Remote {
        url: String,
    },
}

impl PolicySpec {
    pub fn instantiate(
        &self,
        bearer_token: Option<String>,
    ) -> Result<Box<dyn Policy>, PolicyError> {
        match self {
            PolicySpec::Scripted { path, repeating } => {
                let mut policy = ScriptedPolicy::from_json_file(Path::new(path))?;
                policy.repeating = *repeating;
                Ok(Box::new(policy))
            }
            PolicySpec::ScriptedInline {
                messages,
                repeating,
            } => {
                let policy = if *repeating {
                    ScriptedPolicy::repeating(messages.clone())
                } else {
                    ScriptedPolicy::new(messages.clone())
                };
                Ok(Box::new(policy))
            }
            PolicySpec::Remote { url } => Ok(Box::new(
                RemotePolicy::new(url.clone()).with_bearer_token(bearer_token),
            )),
        }
    }
}

/// Builds one policy per episode; `seed` varies per (run, problem, rollout)
/// for stochastic implementations.
pub trait PolicyFactory: Sync {
    fn create(&self, problem_id: &str, seed: u64) -> Result<Box<dyn Policy>, PolicyError>;
}

/// Factory that instantiates the same [`PolicySpec`] for every episode.
pub struct SpecPolicyFactory {
    spec: PolicySpec,
    bearer_token: Option<String>,
}

impl SpecPolicyFactory {
    pub fn new(spec: PolicySpec) -> Self {
        Self {
            spec,
            bearer_token: None,
        }
    }

    pub fn with_bearer_token(mut self, token: Option<String>) -> Self {
        self.bearer_token = token;
        self
    }
}

impl PolicyFactory for SpecPolicyFactory {
    fn create(&self, _problem_id: &str, _seed: u64) -> Result<Box<dyn Policy>, PolicyError> {
        self.spec.instantiate(self.bearer_token.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scripted_policy_replays_then_stops() {
        let mut policy = ScriptedPolicy::new(vec!["one".into(), "two".into()]);
        assert_eq!(policy.next_message(&[]).unwrap(), "one");
        assert_eq!(policy.next_message(&[]).unwrap(), "two");
        assert_eq!(policy.next_message(&[]).unwrap(), SCRIPT_EXHAUSTED_MESSAGE);
        assert_eq!(policy.next_message(&[]).unwrap(), SCRIPT_EXHAUSTED_MESSAGE);
    }

    #[test]
    fn repeating_policy_cycles() {
        let mut policy = ScriptedPolicy::repeating(vec!["a".into(), "b".into()]);
        let seen: Vec<String> = (0..5).map(|_| policy.next_message(&[]).unwrap()).collect();
        assert_eq!(seen, vec!["a", "b", "a", "b", "a"]);
    }

    #[test]
    fn scripted_policy_is_deterministic() {
        let messages = vec!["x".to_string(), "y".to_string()];
        let run = || {
            let mut policy = ScriptedPolicy::new(messages.clone());
            (0..4)
                .map(|_| policy.next_message(&[]).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn spec_round_trips_through_json() {
        let spec = PolicySpec::ScriptedInline {
            messages: vec!["m".into()],
            repeating: true,
        };
        let json = serde_json::to_string(&spec).unwrap();
        let back: PolicySpec = serde_json::from_str(&json).unwrap();
        assert_eq!(spec, back);
    }
}
