use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::{Guidance, GuidanceError, GuidanceGradient, GuidanceRequest};

/// JSON body of `POST {endpoint}/gradient`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WireRequest {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    /// Base64 of the little-endian f32 raster, row-major.
    pub image: String,
    pub prompt: String,
    pub step: u64,
    #[serde(default)]
    pub params: Map<String, Value>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WireResponse {
    pub gradient: String,
    pub scale: f32,
}

pub fn encode_raster(data: &[f32]) -> String {
    let mut bytes = Vec::with_capacity(data.len() * 4);
    for v in data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    B64.encode(bytes)
}

pub fn decode_raster(text: &str) -> Result<Vec<f32>, GuidanceError> {
    let bytes = B64.decode(text).map_err(|e| GuidanceError::Malformed(format!("base64: {e}")))?;
    if bytes.len() % 4 != 0 {
        return Err(GuidanceError::Malformed(format!("raster byte length {} is not a multiple of 4", bytes.len())));
    }
    Ok(bytes.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect())
}

/// Client for a score-distillation server speaking the gradient protocol.
#[derive(Clone, Debug)]
pub struct RemoteGuidance {
    endpoint: String,
    timeout: Duration,
    agent: ureq::Agent,
}

impl RemoteGuidance {
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self { endpoint: endpoint.into().trim_end_matches('/').to_owned(), timeout, agent }
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    pub fn timeout(&self) -> Duration {
        self.timeout
    }

    fn post_once(&self, body: &[u8]) -> Result<(u16, String), GuidanceError> {
        let url = format!("{}/gradient", self.endpoint);
        let mut resp = self
            .agent
            .post(&url)
            .header("content-type", "application/json")
            .send(body)
            .map_err(map_transport)?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .with_config()
            .limit(1 << 30)
            .read_to_string()
            .map_err(map_transport)?;
        Ok((status, text))
    }
}

fn map_transport(e: ureq::Error) -> GuidanceError {
    match e {
        ureq::Error::Timeout(_) => GuidanceError::Timeout,
        ureq::Error::Io(io) if matches!(io.kind(), std::io::ErrorKind::TimedOut | std::io::ErrorKind::WouldBlock) => {
            GuidanceError::Timeout
        }
        other => GuidanceError::Transport(other.to_string()),
    }
}

impl Guidance for RemoteGuidance {
    fn gradient(&self, request: &GuidanceRequest<'_>) -> Result<GuidanceGradient, GuidanceError> {
        let img = request.image;
        let wire = WireRequest {
            width: img.width,
            height: img.height,
            channels: img.channels,
            image: encode_raster(&img.data),
            prompt: request.prompt.to_owned(),
            step: request.step,
            params: request.params.clone(),
        };
        let body = serde_json::to_vec(&wire).map_err(|e| GuidanceError::Malformed(e.to_string()))?;
        let (status, text) = match self.post_once(&body) {
            Err(GuidanceError::Timeout) => {
                log::warn!("guidance request to {} timed out; retrying once", self.endpoint);
                self.post_once(&body)?
            }
            other => other?,
        };
        if status != 200 {
            return Err(GuidanceError::Http { status, body: text });
        }
        let resp: WireResponse = serde_json::from_str(&text).map_err(|e| GuidanceError::Malformed(e.to_string()))?;
        let data = decode_raster(&resp.gradient)?;
        let expected = img.width * img.height * img.channels;
        if data.len() != expected {
            return Err(GuidanceError::ResolutionMismatch {
                expected: (img.width, img.height, img.channels),
                found: (data.len(), 1, 1),
            });
        }
        Ok(GuidanceGradient { width: img.width, height: img.height, channels: img.channels, data, scale: resp.scale })
    }
}

/// One-shot call of the remote protocol.
pub fn remote_sds_gradient(
    endpoint: &str,
    request: &GuidanceRequest<'_>,
    timeout: Duration,
) -> Result<GuidanceGradient, GuidanceError> {
    RemoteGuidance::new(endpoint, timeout).gradient(request)
}
