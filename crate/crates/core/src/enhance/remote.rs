//! HTTP client for an external enhancer service.
//!
//! `POST {endpoint}/enhance` with multipart parts `rgb` (8-bit PNG), `depth`
//! (PFM, invalid pixels negative), `uncertainty` (PFM) and `meta` (JSON
//! `{view_id, fx, fy, cx, cy, prompt?}`). A 200 response carries an 8-bit
//! PNG. 4xx answers are protocol errors; 5xx answers, timeouts and
//! connection failures are retried.

use std::time::Duration;

use reqwest::blocking::multipart::{Form, Part};
use reqwest::blocking::Client;
use serde::Serialize;

use super::{EnhanceError, EnhanceRequest, Enhancer};
use crate::harness::dataset::encode_depth;
use crate::image::Image;

#[derive(Clone, Debug, PartialEq)]
pub struct RemoteConfig {
    /// Base URL, e.g. `http://127.0.0.1:8080`.
    pub endpoint: String,
    pub timeout: Duration,
    /// Extra attempts after the first.
    pub retries: u32,
    pub backoff: Duration,
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            timeout: Duration::from_secs(30),
            retries: 2,
            backoff: Duration::from_millis(200),
        }
    }
}

#[derive(Serialize)]
struct Meta<'a> {
    view_id: u64,
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    prompt: Option<&'a str>,
}

#[derive(Clone, Debug)]
pub struct RemoteEnhancer {
    config: RemoteConfig,
    client: Client,
}

enum Attempt {
    Done(Result<Image, EnhanceError>),
    Retry(String),
}

impl RemoteEnhancer {
    pub fn new(config: RemoteConfig) -> Result<Self, EnhanceError> {
        let client = Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| EnhanceError::Unavailable {
                attempts: 0,
                last: e.to_string(),
            })?;
        Ok(Self { config, client })
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.config.endpoint.trim_end_matches('/'))
    }

    /// `GET /healthz` answered with 200 `ok`.
    pub fn healthy(&self) -> bool {
        match self.client.get(self.url("/healthz")).send() {
            Ok(r) => r.status().is_success() && r.text().map(|t| t.trim() == "ok").unwrap_or(false),
            Err(_) => false,
        }
    }

    fn form(req: &EnhanceRequest) -> Result<Form, EnhanceError> {
        let intr = &req.camera.intrinsics;
        let meta = Meta {
            view_id: req.view_id,
            fx: intr.fx,
            fy: intr.fy,
            cx: intr.cx,
            cy: intr.cy,
            prompt: req.prompt.as_deref(),
        };
        let part = |bytes: Vec<u8>, name: &str, mime: &str| {
            Part::bytes(bytes)
                .file_name(name.to_string())
                .mime_str(mime)
                .map_err(|e| EnhanceError::InvalidRequest(e.to_string()))
        };
        Ok(Form::new()
            .part("rgb", part(req.rgb.to_png_bytes(), "rgb.png", "image/png")?)
            .part(
                "depth",
                part(encode_depth(&req.depth, &req.depth_valid).to_pfm_bytes(), "depth.pfm", "application/octet-stream")?,
            )
            .part("uncertainty", part(req.uncertainty.to_pfm_bytes(), "uncertainty.pfm", "application/octet-stream")?)
            .part(
                "meta",
                part(serde_json::to_vec(&meta).expect("meta serializes"), "meta.json", "application/json")?,
            ))
    }

    fn attempt(&self, req: &EnhanceRequest) -> Attempt {
        let form = match Self::form(req) {
            Ok(f) => f,
            Err(e) => return Attempt::Done(Err(e)),
        };
        let resp = match self.client.post(self.url("/enhance")).multipart(form).send() {
            Ok(r) => r,
            Err(e) => return Attempt::Retry(e.to_string()),
        };
        let status = resp.status();
        if status.is_server_error() {
            return Attempt::Retry(format!("server answered {status}"));
        }
        if !status.is_success() {
            let body = resp.text().unwrap_or_default();
            return Attempt::Done(Err(EnhanceError::Protocol(format!("server answered {status}: {body}"))));
        }
        match resp.bytes() {
            Ok(bytes) => Attempt::Done(
                Image::from_png_bytes(&bytes).map_err(|e| EnhanceError::Protocol(format!("response body: {e}"))),
            ),
            Err(e) => Attempt::Retry(e.to_string()),
        }
    }
}

impl Enhancer for RemoteEnhancer {
    fn generate(&self, req: &EnhanceRequest) -> Result<Image, EnhanceError> {
        let attempts = self.config.retries + 1;
        let mut last = String::new();
        for i in 0..attempts {
            if i > 0 {
                std::thread::sleep(self.config.backoff);
            }
            match self.attempt(req) {
                Attempt::Done(result) => return result,
                Attempt::Retry(reason) => last = reason,
            }
        }
        Err(EnhanceError::Unavailable { attempts, last })
    }
}
