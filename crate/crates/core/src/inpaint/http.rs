//! Adapter for a diffusion inference service speaking HTTP/JSON.
//!
//! `POST <endpoint>` with a [`WireRequest`]; images and masks travel as
//! base64-encoded PNG. The service answers with a [`WireResponse`].

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{BinaryMask, RasterImage};
use crate::io::{decode_image, encode_mask_png, encode_png};

use super::{BackendDescriptor, InpaintBackend, InpaintRequest, Variant};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WireRequest {
    pub background: String,
    pub inpaint_region: String,
    pub boundary_condition: String,
    pub surface_reference: Option<String>,
    pub noise_strength: f64,
    pub sampling_steps: u32,
    pub seed: u64,
    pub variant: Variant,
    pub scheduler: Option<String>,
    pub noised_background_init: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WireResponse {
    pub image: String,
    #[serde(default)]
    pub metadata: serde_json::Value,
}

fn b64_decode(field: &str, s: &str) -> Result<Vec<u8>> {
    B64.decode(s)
        .map_err(|e| Error::InvalidRaster(format!("{field}: bad base64: {e}")))
}

fn decode_mask(field: &str, s: &str) -> Result<BinaryMask> {
    let img = image::load_from_memory(&b64_decode(field, s)?)?.to_luma8();
    BinaryMask::from_gray8(img.height() as usize, img.width() as usize, img.as_raw())
}

impl WireRequest {
    pub fn encode(request: &InpaintRequest, descriptor: &BackendDescriptor) -> Result<Self> {
        Ok(Self {
            background: B64.encode(encode_png(&request.background)?),
            inpaint_region: B64.encode(encode_mask_png(&request.inpaint_region)?),
            boundary_condition: B64.encode(encode_mask_png(&request.boundary_condition)?),
            surface_reference: request
                .surface_reference
                .as_deref()
                .map(|s| encode_png(s).map(|b| B64.encode(b)))
                .transpose()?,
            noise_strength: request.noise_strength,
            sampling_steps: request.sampling_steps,
            seed: request.seed,
            variant: descriptor.variant,
            scheduler: descriptor.scheduler.clone(),
            noised_background_init: descriptor.noised_background_init,
        })
    }

    /// Decodes the payload back into an in-process request (server side).
    pub fn decode(&self) -> Result<InpaintRequest> {
        let bg = decode_image(&b64_decode("background", &self.background)?)?;
        let mut req = InpaintRequest::new(
            bg,
            decode_mask("inpaint_region", &self.inpaint_region)?,
            decode_mask("boundary_condition", &self.boundary_condition)?,
        );
        if let Some(s) = &self.surface_reference {
            req = req.with_surface(decode_image(&b64_decode("surface_reference", s)?)?);
        }
        req.noise_strength = self.noise_strength;
        req.sampling_steps = self.sampling_steps;
        req.seed = self.seed;
        Ok(req)
    }
}

impl WireResponse {
    pub fn from_image(img: &RasterImage, metadata: serde_json::Value) -> Result<Self> {
        Ok(Self {
            image: B64.encode(encode_png(img)?),
            metadata,
        })
    }

    pub fn decode_image(&self) -> Result<RasterImage> {
        decode_image(&b64_decode("image", &self.image)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpBackendConfig {
    pub endpoint: String,
    pub timeout_secs: f64,
    /// Extra attempts after a transport error or 5xx answer.
    pub retries: u32,
    pub max_in_flight: usize,
}

impl Default for HttpBackendConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://127.0.0.1:7860/inpaint".into(),
            timeout_secs: 300.0,
            retries: 2,
            max_in_flight: 4,
        }
    }
}

struct Permits {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Permits {
    fn acquire(&self) -> PermitGuard<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        PermitGuard(self)
    }
}

struct PermitGuard<'a>(&'a Permits);

impl Drop for PermitGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

pub struct HttpBackend {
    descriptor: BackendDescriptor,
    config: HttpBackendConfig,
    client: reqwest::blocking::Client,
    permits: Permits,
}

impl HttpBackend {
    pub fn new(descriptor: BackendDescriptor, config: HttpBackendConfig) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(config.timeout_secs))
            .build()
            .map_err(|e| Error::BackendUnavailable(e.to_string()))?;
        Ok(Self {
            permits: Permits {
                free: Mutex::new(config.max_in_flight.max(1)),
                cv: Condvar::new(),
            },
            descriptor,
            config,
            client,
        })
    }

    fn attempt(&self, body: &WireRequest) -> std::result::Result<RasterImage, (bool, String)> {
        let resp = self
            .client
            .post(&self.config.endpoint)
            .json(body)
            .send()
            .map_err(|e| (true, e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            let text = resp.text().unwrap_or_default();
            return Err((status.is_server_error(), format!("{status}: {text}")));
        }
        let wire: WireResponse = resp.json().map_err(|e| (false, e.to_string()))?;
        wire.decode_image().map_err(|e| (false, e.to_string()))
    }
}

impl InpaintBackend for HttpBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn generate(&self, request: &InpaintRequest) -> Result<RasterImage> {
        let body = WireRequest::encode(request, &self.descriptor)?;
        let _permit = self.permits.acquire();
        let mut last = String::new();
        for attempt in 0..=self.config.retries {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(50 * attempt as u64));
            }
            match self.attempt(&body) {
                Ok(img) => return Ok(img),
                Err((retryable, msg)) => {
                    tracing::warn!(attempt, endpoint = %self.config.endpoint, "inpaint request failed: {msg}");
                    last = msg;
                    if !retryable {
                        break;
                    }
                }
            }
        }
        Err(Error::BackendUnavailable(format!("{}: {last}", self.config.endpoint)))
    }
}
