//! Tool registry, tool adapters and expert-agent execution.

mod expert;
mod remote;
pub mod wire;

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::Arc;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

pub use expert::{
    invoke_expert, sequential_prompt_pipeline, DecisionDetails, FusionTrace, Prediction,
    SequentialOutcome, ToolEvidence, ToolFailure,
};
pub use remote::{RemoteTool, DEFAULT_TIMEOUT};

use crate::error::{Error, Result};
use crate::types::{ImageRef, Mask, Measurement, TaskKind};
use wire::InferResponse;

/// Decoded tool result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolOutput {
    pub tool_id: String,
    pub task: TaskKind,
    pub payload: ToolPayload,
    pub latency_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ToolPayload {
    Label {
        label: String,
        #[serde(default)]
        scores: BTreeMap<String, f64>,
    },
    Mask(Mask),
    Scalar(Measurement),
}

impl ToolOutput {
    pub fn label(&self) -> Option<&str> {
        match &self.payload {
            ToolPayload::Label { label, .. } => Some(label),
            _ => None,
        }
    }

    /// Confidence of the predicted label (1.0 when no scores were sent).
    pub fn confidence(&self) -> Option<f64> {
        match &self.payload {
            ToolPayload::Label { label, scores } => Some(scores.get(label).copied().unwrap_or(1.0)),
            _ => None,
        }
    }

    pub fn mask(&self) -> Option<&Mask> {
        match &self.payload {
            ToolPayload::Mask(m) => Some(m),
            _ => None,
        }
    }

    pub fn measurement(&self) -> Option<&Measurement> {
        match &self.payload {
            ToolPayload::Scalar(m) => Some(m),
            _ => None,
        }
    }
}

/// Canned responses of one tool keyed by image id.
#[derive(Debug, Clone, Default)]
pub struct FixtureStore {
    responses: HashMap<String, InferResponse>,
}

impl FixtureStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, image_id: impl Into<String>, response: InferResponse) {
        self.responses.insert(image_id.into(), response);
    }

    pub fn get(&self, image_id: &str) -> Option<&InferResponse> {
        self.responses.get(image_id)
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    /// Loads `<image_id>.json` files from a tool's fixture directory.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let mut store = Self::new();
        let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        for entry in entries {
            let path = entry.map_err(|e| Error::io(dir, e))?.path();
            if path.extension().is_some_and(|e| e == "json") {
                let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                let resp: InferResponse = serde_json::from_str(&text)?;
                let id = path.file_stem().unwrap().to_string_lossy().into_owned();
                store.insert(id, resp);
            }
        }
        Ok(store)
    }

    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut ids: Vec<&String> = self.responses.keys().collect();
        ids.sort();
        for id in ids {
            let path = dir.join(format!("{id}.json"));
            let text = serde_json::to_string_pretty(&self.responses[id])?;
            std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub enum Adapter {
    InProcess(Arc<FixtureStore>),
    Remote(RemoteTool),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdapterKind {
    InProcess,
    Remote,
}

#[derive(Debug, Clone)]
pub struct RegisteredTool {
    pub id: String,
    pub task: TaskKind,
    pub adapter: Adapter,
    /// Set when the remote health probe failed at registration.
    pub degraded: bool,
}

impl RegisteredTool {
    pub fn adapter_kind(&self) -> AdapterKind {
        match self.adapter {
            Adapter::InProcess(_) => AdapterKind::InProcess,
            Adapter::Remote(_) => AdapterKind::Remote,
        }
    }
}

/// Tools by id, in registration order.
#[derive(Debug, Clone, Default)]
pub struct ToolRegistry {
    tools: IndexMap<String, RegisteredTool>,
}

impl ToolRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a tool. Remote tools are probed once; a failed probe still
    /// registers the tool, flagged as degraded.
    pub fn register(&mut self, id: impl Into<String>, task: TaskKind, adapter: Adapter) -> Result<&RegisteredTool> {
        let id = id.into();
        if self.tools.contains_key(&id) {
            return Err(Error::DuplicateToolId(id));
        }
        let degraded = match &adapter {
            Adapter::InProcess(_) => false,
            Adapter::Remote(client) => client.health(&id).is_err(),
        };
        self.tools.insert(
            id.clone(),
            RegisteredTool {
                id: id.clone(),
                task,
                adapter,
                degraded,
            },
        );
        Ok(&self.tools[&id])
    }

    pub fn get(&self, id: &str) -> Option<&RegisteredTool> {
        self.tools.get(id)
    }

    pub fn len(&self) -> usize {
        self.tools.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tools.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &RegisteredTool> {
        self.tools.values()
    }

    /// Re-runs the health probe of a remote tool.
    pub fn probe(&self, id: &str) -> Result<()> {
        let tool = self.get(id).ok_or_else(|| Error::UnknownTool(id.to_string()))?;
        match &tool.adapter {
            Adapter::InProcess(_) => Ok(()),
            Adapter::Remote(client) => client.health(id),
        }
    }

    /// One tool call: fixture lookup in-process, one wire request remotely.
    pub fn invoke(&self, id: &str, image: &ImageRef, params: &serde_json::Value) -> Result<ToolOutput> {
        let tool = self.get(id).ok_or_else(|| Error::UnknownTool(id.to_string()))?;
        let response = match &tool.adapter {
            Adapter::InProcess(store) => store
                .get(&image.id)
                .cloned()
                .ok_or_else(|| Error::MissingFixture {
                    tool: id.to_string(),
                    image: image.id.clone(),
                })?,
            Adapter::Remote(client) => {
                let req = wire::request_for(id, tool.task, image, params)?;
                client.infer(id, &req)?
            }
        };
        response.decode(id, tool.task, image)
    }
}
