use std::collections::VecDeque;
use std::path::Path;
use std::sync::Mutex;

use super::{BackendKind, ChatBackend, GatewayError};

/// Answers prompts from a fixed queue, in order, ignoring prompt content.
///
/// Meant for a single run: a call that arrives while another is in flight
/// fails with [`GatewayError::ConcurrentUse`].
#[derive(Debug, Default)]
pub struct ScriptedBackend {
    queue: Mutex<VecDeque<String>>,
}

impl ScriptedBackend {
    pub fn new<I, S>(responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self { queue: Mutex::new(responses.into_iter().map(Into::into).collect()) }
    }

    /// Loads a JSON array of response strings.
    pub fn from_file(path: &Path) -> Result<Self, GatewayError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| GatewayError::Config(format!("cannot read script {}: {e}", path.display())))?;
        let responses: Vec<String> = serde_json::from_str(&text)
            .map_err(|e| GatewayError::Config(format!("script {} is not a JSON string array: {e}", path.display())))?;
        Ok(Self::new(responses))
    }

    pub fn remaining(&self) -> usize {
        self.queue.lock().map(|q| q.len()).unwrap_or(0)
    }
}

impl ChatBackend for ScriptedBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Scripted
    }

    fn complete(&self, _prompt: &str, _temperature: f64) -> Result<String, GatewayError> {
        let mut queue = self.queue.try_lock().map_err(|_| GatewayError::ConcurrentUse)?;
        queue.pop_front().ok_or(GatewayError::ScriptExhausted)
    }
}
