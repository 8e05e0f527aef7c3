//! Deterministic rule-driven backend.

use serde::{Deserialize, Serialize};

use super::{ChatBackend, ChatRequest, LlmError};

/// A rule fires when every `all_of` substring is present in the request
/// text, no `none_of` substring is, and `digest` (if set) equals the request
/// digest. An empty rule matches everything.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScriptRule {
    pub all_of: Vec<String>,
    pub none_of: Vec<String>,
    pub digest: Option<String>,
    pub response: String,
}

impl ScriptRule {
    pub fn contains(needle: impl Into<String>, response: impl Into<String>) -> Self {
        Self {
            all_of: vec![needle.into()],
            response: response.into(),
            ..Self::default()
        }
    }

    pub fn matches(&self, request: &ChatRequest) -> bool {
        if let Some(d) = &self.digest {
            if *d != request.digest() {
                return false;
            }
        }
        let text = request.text();
        self.all_of.iter().all(|s| text.contains(s.as_str()))
            && !self.none_of.iter().any(|s| text.contains(s.as_str()))
    }
}

/// First matching rule wins; otherwise the declared default, if any.
/// Immutable after construction.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScriptedBackend {
    pub rules: Vec<ScriptRule>,
    pub default: Option<String>,
}

impl ScriptedBackend {
    pub fn new(rules: Vec<ScriptRule>, default: Option<String>) -> Self {
        Self { rules, default }
    }

    /// Always answers with `response`.
    pub fn constant(response: impl Into<String>) -> Self {
        Self::new(Vec::new(), Some(response.into()))
    }

    /// Parse a script file in TOML form (`[[rules]]` tables plus `default`).
    pub fn from_toml(text: &str) -> Result<Self, LlmError> {
        toml::from_str(text).map_err(|e| LlmError::Config(format!("script: {e}")))
    }
}

impl ChatBackend for ScriptedBackend {
    fn complete(&self, request: &ChatRequest) -> Result<String, LlmError> {
        request.validate()?;
        self.rules
            .iter()
            .find(|r| r.matches(request))
            .map(|r| r.response.clone())
            .or_else(|| self.default.clone())
            .ok_or(LlmError::NoScriptMatch)
    }
}
