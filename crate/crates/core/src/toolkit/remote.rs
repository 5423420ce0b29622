use std::time::Duration;

#[cfg(feature = "remote")]
use super::wire::HealthResponse;
use super::wire::{InferRequest, InferResponse};
use crate::error::{Error, Result};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(10);

/// HTTP client for one tool service.
#[derive(Debug, Clone)]
pub struct RemoteTool {
    pub endpoint: String,
    pub timeout: Duration,
    /// Extra attempts after a transport failure.
    pub retries: u32,
}

impl RemoteTool {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into().trim_end_matches('/').to_string(),
            timeout: DEFAULT_TIMEOUT,
            retries: 1,
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    #[cfg(feature = "remote")]
    fn agent(&self) -> ureq::Agent {
        ureq::AgentBuilder::new().timeout(self.timeout).build()
    }

    #[cfg(feature = "remote")]
    pub fn health(&self, tool_id: &str) -> Result<()> {
        let unavailable = |reason: String| Error::ToolUnavailable {
            tool: tool_id.to_string(),
            reason,
        };
        let resp = self
            .agent()
            .get(&format!("{}/v1/health", self.endpoint))
            .call()
            .map_err(|e| unavailable(e.to_string()))?;
        let body: HealthResponse = resp.into_json().map_err(|e| unavailable(e.to_string()))?;
        if body.status == "ok" {
            Ok(())
        } else {
            Err(unavailable(format!("health status {:?}", body.status)))
        }
    }

    #[cfg(feature = "remote")]
    pub fn infer(&self, tool_id: &str, req: &InferRequest) -> Result<InferResponse> {
        let url = format!("{}/v1/tools/{}/infer", self.endpoint, tool_id);
        let mut last = None;
        for _ in 0..=self.retries {
            match self.agent().post(&url).send_json(req) {
                Ok(resp) => {
                    return resp.into_json::<InferResponse>().map_err(|e| Error::MalformedOutput {
                        tool: tool_id.to_string(),
                        reason: e.to_string(),
                    });
                }
                Err(ureq::Error::Status(404, _)) => {
                    return Err(Error::MissingFixture {
                        tool: tool_id.to_string(),
                        image: req.image_id.clone(),
                    });
                }
                Err(e) => last = Some(e.to_string()),
            }
        }
        Err(Error::ToolUnavailable {
            tool: tool_id.to_string(),
            reason: last.unwrap_or_default(),
        })
    }

    #[cfg(not(feature = "remote"))]
    pub fn health(&self, tool_id: &str) -> Result<()> {
        Err(Error::ToolUnavailable {
            tool: tool_id.to_string(),
            reason: "built without remote support".into(),
        })
    }

    #[cfg(not(feature = "remote"))]
    pub fn infer(&self, tool_id: &str, _req: &InferRequest) -> Result<InferResponse> {
        Err(Error::ToolUnavailable {
            tool: tool_id.to_string(),
            reason: "built without remote support".into(),
        })
    }
}
