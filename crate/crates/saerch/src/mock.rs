//! Scripted completion client for tests and offline runs.
//!
//! The script is a JSON document:
//!
//! ```json
//! {
//!   "rules": [
//!     {"role": "interpreter", "feature_id": 3, "replies": ["FINAL: dust lanes"]},
//!     {"role": "predictor", "feature_id": 3, "contains": "dust", "replies": ["PREDICTION: 1"], "repeat": true},
//!     {"role": "predictor", "replies": ["PREDICTION: -1"], "repeat": true}
//!   ],
//!   "fallback": "FINAL: unknown"
//! }
//! ```
//!
//! A request takes the next reply of the first rule that matches its role,
//! its subject id (when the rule names one) and a substring of the prompt
//! (when the rule gives one), skipping rules that have run out. `repeat`
//! keeps returning the last reply once the list is used up.

use std::path::Path;
use std::sync::Mutex;

use saerch_core::autointerp::{CompletionClient, CompletionRequest, Role};
use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptRule {
    pub role: Role,
    #[serde(default)]
    pub feature_id: Option<usize>,
    #[serde(default)]
    pub contains: Option<String>,
    pub replies: Vec<String>,
    #[serde(default)]
    pub repeat: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Script {
    pub rules: Vec<ScriptRule>,
    #[serde(default)]
    pub fallback: Option<String>,
}

/// A recorded request: role, subject id and the full prompt.
pub type LoggedRequest = (Role, Option<usize>, String);

pub struct ScriptedClient {
    script: Script,
    cursors: Mutex<Vec<usize>>,
    log: Mutex<Vec<LoggedRequest>>,
}

impl ScriptedClient {
    pub fn new(script: Script) -> Self {
        let cursors = Mutex::new(vec![0; script.rules.len()]);
        Self { script, cursors, log: Mutex::new(Vec::new()) }
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(Self::new(crate::formats::read_json(path)?))
    }

    /// Every request seen so far, in arrival order.
    pub fn requests(&self) -> Vec<LoggedRequest> {
        self.log.lock().unwrap().clone()
    }
}

impl CompletionClient for ScriptedClient {
    fn complete(&self, request: &CompletionRequest<'_>) -> saerch_core::Result<String> {
        self.log.lock().unwrap().push((request.role, request.subject_id, request.prompt.to_string()));
        let mut cursors = self.cursors.lock().unwrap();
        for (rule, cursor) in self.script.rules.iter().zip(cursors.iter_mut()) {
            if rule.role != request.role
                || rule.feature_id.is_some_and(|f| Some(f) != request.subject_id)
                || rule.contains.as_deref().is_some_and(|s| !request.prompt.contains(s))
            {
                continue;
            }
            if *cursor < rule.replies.len() {
                *cursor += 1;
                return Ok(rule.replies[*cursor - 1].clone());
            }
            if rule.repeat {
                if let Some(last) = rule.replies.last() {
                    return Ok(last.clone());
                }
            }
        }
        self.script.fallback.clone().ok_or_else(|| {
            saerch_core::Error::Client(format!(
                "script has no reply for role {} subject {:?}",
                request.role.as_str(),
                request.subject_id
            ))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req<'a>(role: Role, id: usize, prompt: &'a str) -> CompletionRequest<'a> {
        CompletionRequest { role, subject_id: Some(id), prompt, temperature: 0.0 }
    }

    #[test]
    fn sequential_then_fallthrough() {
        let script: Script = serde_json::from_str(
            r#"{"rules": [
                {"role": "interpreter", "feature_id": 1, "replies": ["a", "b"]},
                {"role": "interpreter", "replies": ["any"], "repeat": true}
            ]}"#,
        )
        .unwrap();
        let c = ScriptedClient::new(script);
        assert_eq!(c.complete(&req(Role::Interpreter, 1, "")).unwrap(), "a");
        assert_eq!(c.complete(&req(Role::Interpreter, 2, "")).unwrap(), "any");
        assert_eq!(c.complete(&req(Role::Interpreter, 1, "")).unwrap(), "b");
        assert_eq!(c.complete(&req(Role::Interpreter, 1, "")).unwrap(), "any");
        assert!(c.complete(&req(Role::Predictor, 1, "")).is_err());
        assert_eq!(c.requests().len(), 5);
    }

    #[test]
    fn substring_rules() {
        let script: Script = serde_json::from_str(
            r#"{"rules": [{"role": "predictor", "contains": "quasar", "replies": ["PREDICTION: 1"], "repeat": true}],
                "fallback": "PREDICTION: -1"}"#,
        )
        .unwrap();
        let c = ScriptedClient::new(script);
        assert_eq!(c.complete(&req(Role::Predictor, 0, "a quasar")).unwrap(), "PREDICTION: 1");
        assert_eq!(c.complete(&req(Role::Predictor, 0, "a comet")).unwrap(), "PREDICTION: -1");
        assert_eq!(c.complete(&req(Role::Predictor, 0, "quasar again")).unwrap(), "PREDICTION: 1");
    }
}
