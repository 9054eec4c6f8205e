//! HTTP client for an externally served latent-diffusion model.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::wire::{self, *};
use super::{Capability, DenoiseBackend};
use crate::ddim::{DiffusionConfig, LatentTensor};
use crate::error::{Error, Result};
use crate::imagecore::ImageRgb;

pub const ENV_BACKEND_URL: &str = "PRISM_BACKEND_URL";
pub const ENV_BACKEND_TIMEOUT: &str = "PRISM_BACKEND_TIMEOUT_S";

const BODY_EXCERPT: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RemoteConfig {
    pub base_url: String,
    pub timeout_s: f64,
    /// Extra attempts after the first one, for transport failures and 5xx replies.
    pub retries: u32,
    /// Upper bound on concurrent in-flight requests.
    pub max_in_flight: usize,
    /// Expected model id; `None` accepts whatever the service reports.
    pub model_id: Option<String>,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:7860".into(),
            timeout_s: 120.0,
            retries: 2,
            max_in_flight: 4,
            model_id: None,
        }
    }
}

impl RemoteConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            ..Self::default()
        }
    }

    /// Apply `PRISM_BACKEND_URL` / `PRISM_BACKEND_TIMEOUT_S` when set.
    pub fn with_env_overrides(mut self) -> Result<Self> {
        if let Ok(url) = std::env::var(ENV_BACKEND_URL) {
            if !url.trim().is_empty() {
                self.base_url = url.trim().to_string();
            }
        }
        if let Ok(t) = std::env::var(ENV_BACKEND_TIMEOUT) {
            self.timeout_s = t
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{ENV_BACKEND_TIMEOUT}={t:?} is not a number")))?;
        }
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        if !(self.base_url.starts_with("http://") || self.base_url.starts_with("https://")) {
            return Err(Error::Config(format!(
                "backend url {:?} must start with http:// or https://",
                self.base_url
            )));
        }
        if !(self.timeout_s > 0.0 && self.timeout_s.is_finite()) {
            return Err(Error::Config("backend timeout must be a positive number of seconds".into()));
        }
        if self.max_in_flight == 0 {
            return Err(Error::Config("max_in_flight must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// Counting semaphore bounding concurrent requests.
struct InFlight {
    limit: usize,
    busy: Mutex<usize>,
    freed: Condvar,
}

impl InFlight {
    fn acquire(&self) -> InFlightGuard<'_> {
        let mut busy = self.busy.lock().unwrap_or_else(|p| p.into_inner());
        while *busy >= self.limit {
            busy = self.freed.wait(busy).unwrap_or_else(|p| p.into_inner());
        }
        *busy += 1;
        InFlightGuard(self)
    }
}

struct InFlightGuard<'a>(&'a InFlight);

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        let mut busy = self.0.busy.lock().unwrap_or_else(|p| p.into_inner());
        *busy -= 1;
        self.0.freed.notify_one();
    }
}

pub struct RemoteBackend {
    config: RemoteConfig,
    client: reqwest::blocking::Client,
    capabilities: BTreeSet<Capability>,
    dims: BTreeMap<String, usize>,
    model_id: String,
    in_flight: InFlight,
}

impl std::fmt::Debug for RemoteBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteBackend")
            .field("base_url", &self.config.base_url)
            .field("model_id", &self.model_id)
            .field("capabilities", &self.capabilities)
            .finish()
    }
}

impl RemoteBackend {
    /// Build the client and negotiate capabilities with `GET /v1/capabilities`.
    pub fn connect(config: RemoteConfig) -> Result<Self> {
        let mut backend = Self::with_capabilities(config, BTreeSet::new())?;
        let caps: CapabilitiesResponse = backend.get_json(wire::PATH_CAPABILITIES)?;
        if let Some(expected) = &backend.config.model_id {
            if expected != &caps.model_id {
                return Err(Error::Config(format!(
                    "service serves model {:?}, config expects {expected:?}",
                    caps.model_id
                )));
            }
        }
        backend.capabilities = caps.capabilities.into_iter().collect();
        backend.dims = caps.dims;
        backend.model_id = caps.model_id;
        Ok(backend)
    }

    /// Build with a known capability set, skipping the handshake.
    pub fn with_capabilities(config: RemoteConfig, capabilities: BTreeSet<Capability>) -> Result<Self> {
        config.validate()?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(config.timeout_s))
            .build()
            .map_err(|e| Error::Config(format!("cannot build HTTP client: {e}")))?;
        let model_id = config.model_id.clone().unwrap_or_else(|| "remote".into());
        let in_flight = InFlight {
            limit: config.max_in_flight,
            busy: Mutex::new(0),
            freed: Condvar::new(),
        };
        Ok(Self {
            config,
            client,
            capabilities,
            dims: BTreeMap::new(),
            model_id,
            in_flight,
        })
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    /// Vector dimensions reported by the handshake (e.g. `embed`, `features`).
    pub fn dims(&self) -> &BTreeMap<String, usize> {
        &self.dims
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.config.base_url.trim_end_matches('/'), path)
    }

    fn require(&self, capability: Capability) -> Result<()> {
        if self.capabilities.contains(&capability) {
            Ok(())
        } else {
            Err(Error::Unsupported(capability))
        }
    }

    fn get_json<R: DeserializeOwned>(&self, path: &str) -> Result<R> {
        self.send(path, None)
    }

    fn post_json<B: Serialize, R: DeserializeOwned>(&self, path: &str, body: &B) -> Result<R> {
        let body = serde_json::to_vec(body).map_err(|e| Error::Serde(e.to_string()))?;
        self.send(path, Some(body))
    }

    fn send<R: DeserializeOwned>(&self, path: &str, body: Option<Vec<u8>>) -> Result<R> {
        let url = self.url(path);
        let request_id = {
            let mut h = Sha256::new();
            h.update(path.as_bytes());
            h.update(body.as_deref().unwrap_or_default());
            h.finalize()
                .iter()
                .take(16)
                .map(|b| format!("{b:02x}"))
                .collect::<String>()
        };
        let attempts_allowed = self.config.retries + 1;
        let _slot = self.in_flight.acquire();
        let mut attempt = 0;
        loop {
            attempt += 1;
            let last = attempt >= attempts_allowed;
            let req = match &body {
                Some(b) => self
                    .client
                    .post(&url)
                    .header("content-type", "application/json")
                    .body(b.clone()),
                None => self.client.get(&url),
            }
            .header(wire::REQUEST_ID_HEADER, &request_id);
            match req.send() {
                Ok(resp) => {
                    let status = resp.status();
                    let text = resp.text().map_err(|e| Error::Transport {
                        endpoint: path.into(),
                        message: e.to_string(),
                        attempts: attempt,
                    })?;
                    if status.is_success() {
                        return serde_json::from_str(&text)
                            .map_err(|e| Error::Decode(format!("{path} reply: {e}")));
                    }
                    if status.is_server_error() && !last {
                        log::warn!("{path}: status {status}, retrying ({attempt}/{attempts_allowed})");
                        continue;
                    }
                    return Err(Error::Backend {
                        endpoint: path.into(),
                        status: status.as_u16(),
                        body: text.chars().take(BODY_EXCERPT).collect(),
                        attempts: attempt,
                    });
                }
                Err(e) if last => {
                    return Err(if e.is_timeout() {
                        Error::Timeout {
                            endpoint: path.into(),
                            attempts: attempt,
                        }
                    } else {
                        Error::Transport {
                            endpoint: path.into(),
                            message: e.to_string(),
                            attempts: attempt,
                        }
                    });
                }
                Err(e) => {
                    log::warn!("{path}: {e}, retrying ({attempt}/{attempts_allowed})");
                }
            }
        }
    }

    /// Run the service's own img2img in one round trip.
    pub fn remote_img2img(&self, image: &ImageRgb, cfg: &DiffusionConfig) -> Result<ImageRgb> {
        self.require(Capability::FullImg2img)?;
        let req = img2img_request(image, cfg);
        let resp: Img2ImgResponse = self.post_json(wire::PATH_IMG2IMG, &req)?;
        wire::image_from_b64(&resp.image_b64)
    }
}

/// The request body [`RemoteBackend::remote_img2img`] sends.
pub fn img2img_request(image: &ImageRgb, cfg: &DiffusionConfig) -> Img2ImgRequest {
    Img2ImgRequest {
        image_b64: wire::image_to_b64(image),
        prompt: cfg.prompt.clone(),
        steps: cfg.steps,
        strength: cfg.strength,
        guidance: cfg.guidance,
        seed: cfg.seed,
        eta: cfg.eta,
    }
}

impl DenoiseBackend for RemoteBackend {
    fn capabilities(&self) -> BTreeSet<Capability> {
        self.capabilities.clone()
    }

    fn model_id(&self) -> String {
        self.model_id.clone()
    }

    fn encode(&self, image: &ImageRgb) -> Result<LatentTensor> {
        self.require(Capability::Encode)?;
        let body = ImagePayload {
            image_b64: wire::image_to_b64(image),
        };
        let latent: LatentPayload = self.post_json(wire::PATH_ENCODE, &body)?;
        latent.try_into()
    }

    fn decode(&self, z: &LatentTensor) -> Result<ImageRgb> {
        self.require(Capability::Decode)?;
        let resp: ImagePayload = self.post_json(wire::PATH_DECODE, &LatentPayload::from(z))?;
        wire::image_from_b64(&resp.image_b64)
    }

    fn predict_eps(&self, z: &LatentTensor, t: usize, prompt: &str, guidance: f64) -> Result<LatentTensor> {
        self.require(Capability::PredictEps)?;
        let body = PredictEpsRequest {
            latent: z.into(),
            t,
            prompt: prompt.into(),
            guidance,
        };
        let out: LatentTensor = self.post_json::<_, LatentPayload>(wire::PATH_PREDICT_EPS, &body)?.try_into()?;
        if out.shape() != z.shape() {
            return Err(Error::Decode(format!(
                "predict_eps returned shape {:?} for input {:?}",
                out.shape(),
                z.shape()
            )));
        }
        Ok(out)
    }

    fn img2img(&self, image: &ImageRgb, cfg: &DiffusionConfig) -> Result<ImageRgb> {
        self.remote_img2img(image, cfg)
    }

    fn embed_image(&self, image: &ImageRgb) -> Result<Vec<f64>> {
        self.require(Capability::EmbedImage)?;
        let body = EmbedRequest {
            image_b64: Some(wire::image_to_b64(image)),
            text: None,
        };
        self.post_json::<_, VectorResponse>(wire::PATH_EMBED, &body)?.into_checked()
    }

    fn embed_text(&self, text: &str) -> Result<Vec<f64>> {
        self.require(Capability::EmbedText)?;
        let body = EmbedRequest {
            image_b64: None,
            text: Some(text.into()),
        };
        self.post_json::<_, VectorResponse>(wire::PATH_EMBED, &body)?.into_checked()
    }

    fn extract_features(&self, image: &ImageRgb) -> Result<Vec<f64>> {
        self.require(Capability::ExtractFeatures)?;
        let body = ImagePayload {
            image_b64: wire::image_to_b64(image),
        };
        self.post_json::<_, VectorResponse>(wire::PATH_FEATURES, &body)?.into_checked()
    }
}
