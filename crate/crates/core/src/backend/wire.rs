//! JSON bodies of the backend HTTP protocol.
//!
//! | method | path               | request                | response                |
//! |--------|--------------------|------------------------|-------------------------|
//! | GET    | `/v1/capabilities` | –                      | [`CapabilitiesResponse`]|
//! | POST   | `/v1/img2img`      | [`Img2ImgRequest`]     | [`Img2ImgResponse`]     |
//! | POST   | `/v1/encode`       | [`ImagePayload`]       | [`LatentPayload`]       |
//! | POST   | `/v1/decode`       | [`LatentPayload`]      | [`ImagePayload`]        |
//! | POST   | `/v1/predict_eps`  | [`PredictEpsRequest`]  | [`LatentPayload`]       |
//! | POST   | `/v1/embed`        | [`EmbedRequest`]       | [`VectorResponse`]      |
//! | POST   | `/v1/features`     | [`ImagePayload`]       | [`VectorResponse`]      |
//!
//! Images travel as base64 (standard alphabet, padded) PNG bytes. Latents are
//! a `[channels, height, width]` shape plus a flat channel-major value list.
//! Every request carries an `x-request-id` header derived from its body, so a
//! retried request keeps its id.

use std::collections::BTreeMap;

use base64::Engine;
use serde::{Deserialize, Serialize};

use super::Capability;
use crate::ddim::LatentTensor;
use crate::error::{Error, Result};
use crate::imagecore::{decode_raster, encode_png, ImageRgb};

pub const PATH_CAPABILITIES: &str = "/v1/capabilities";
pub const PATH_IMG2IMG: &str = "/v1/img2img";
pub const PATH_ENCODE: &str = "/v1/encode";
pub const PATH_DECODE: &str = "/v1/decode";
pub const PATH_PREDICT_EPS: &str = "/v1/predict_eps";
pub const PATH_EMBED: &str = "/v1/embed";
pub const PATH_FEATURES: &str = "/v1/features";
pub const REQUEST_ID_HEADER: &str = "x-request-id";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Img2ImgRequest {
    pub image_b64: String,
    pub prompt: String,
    pub steps: u32,
    pub strength: f64,
    pub guidance: f64,
    pub seed: u64,
    pub eta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Img2ImgResponse {
    pub image_b64: String,
    pub model_id: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImagePayload {
    pub image_b64: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentPayload {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictEpsRequest {
    pub latent: LatentPayload,
    pub t: usize,
    pub prompt: String,
    pub guidance: f64,
}

/// Exactly one of `image_b64` / `text` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedRequest {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub image_b64: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub text: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorResponse {
    pub vector: Vec<f64>,
    pub dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapabilitiesResponse {
    pub capabilities: Vec<Capability>,
    #[serde(default)]
    pub dims: BTreeMap<String, usize>,
    pub model_id: String,
}

pub fn image_to_b64(image: &ImageRgb) -> String {
    base64::engine::general_purpose::STANDARD.encode(encode_png(image))
}

pub fn image_from_b64(b64: &str) -> Result<ImageRgb> {
    let bytes = base64::engine::general_purpose::STANDARD
        .decode(b64.trim())
        .map_err(|e| Error::Decode(format!("base64 image: {e}")))?;
    decode_raster(&bytes)
}

impl From<&LatentTensor> for LatentPayload {
    fn from(z: &LatentTensor) -> Self {
        Self {
            shape: z.shape().to_vec(),
            data: z.values().to_vec(),
        }
    }
}

impl TryFrom<LatentPayload> for LatentTensor {
    type Error = Error;

    fn try_from(p: LatentPayload) -> Result<Self> {
        let shape: [usize; 3] = p
            .shape
            .as_slice()
            .try_into()
            .map_err(|_| Error::Decode(format!("latent shape must have 3 entries, got {:?}", p.shape)))?;
        LatentTensor::new(shape, p.data).map_err(|e| Error::Decode(e.to_string()))
    }
}

impl VectorResponse {
    pub fn into_checked(self) -> Result<Vec<f64>> {
        if self.vector.len() != self.dim {
            return Err(Error::Decode(format!(
                "vector has {} entries but dim says {}",
                self.vector.len(),
                self.dim
            )));
        }
        Ok(self.vector)
    }
}
