//! Inpainting contract shared by every generation backend.
//!
//! Backends produce a full-frame image; [`inpaint`] then copies the background
//! back over every pixel outside the inpaint region, so no backend can alter
//! content the region does not cover.

mod classic;
mod http;
mod plan;
mod toy;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{BinaryMask, RasterImage};

pub use classic::{ClassicBackend, POISSON_SWEEPS};
pub use http::{HttpBackend, HttpBackendConfig, WireRequest, WireResponse};
pub use plan::{plan_generation, Background, Condition, PlanOptions, PlannedRequest};
pub use toy::{ToyBackend, FEATHER_PX};

pub const DEFAULT_NOISE_STRENGTH: f64 = 0.85;
pub const DEFAULT_SAMPLING_STEPS: u32 = 50;
/// Default radius of the disk that grows a boundary condition into its inpaint region.
pub const DEFAULT_REGION_DILATION: usize = 16;

#[derive(Clone, Debug, PartialEq)]
pub struct InpaintRequest {
    pub background: Arc<RasterImage>,
    pub inpaint_region: Arc<BinaryMask>,
    pub boundary_condition: Arc<BinaryMask>,
    /// Cropped lesion image; its presence selects the surface-conditioned variant.
    pub surface_reference: Option<Arc<RasterImage>>,
    pub noise_strength: f64,
    pub sampling_steps: u32,
    pub seed: u64,
}

impl InpaintRequest {
    pub fn new(background: RasterImage, inpaint_region: BinaryMask, boundary_condition: BinaryMask) -> Self {
        Self {
            background: Arc::new(background),
            inpaint_region: Arc::new(inpaint_region),
            boundary_condition: Arc::new(boundary_condition),
            surface_reference: None,
            noise_strength: DEFAULT_NOISE_STRENGTH,
            sampling_steps: DEFAULT_SAMPLING_STEPS,
            seed: 0,
        }
    }

    pub fn with_surface(mut self, surface: RasterImage) -> Self {
        self.surface_reference = Some(Arc::new(surface));
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let dims = self.background.dims();
        for m in [&self.inpaint_region, &self.boundary_condition] {
            if m.dims() != dims {
                return Err(Error::DimMismatch {
                    expected: dims,
                    actual: m.dims(),
                });
            }
        }
        if !(self.noise_strength > 0.0 && self.noise_strength <= 1.0) {
            return Err(Error::InvalidRaster(format!(
                "noise strength {} outside (0, 1]",
                self.noise_strength
            )));
        }
        if self.sampling_steps == 0 {
            return Err(Error::InvalidRaster("sampling steps must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// Boundary-conditioned.
    #[serde(rename = "v1")]
    V1,
    /// Boundary- and surface-conditioned.
    #[serde(rename = "v2")]
    V2,
    #[serde(rename = "sd-baseline")]
    SdBaseline,
    #[serde(rename = "toy")]
    Toy,
    /// Pastes the surface reference inside the boundary condition.
    #[serde(rename = "copy-paste")]
    CopyPaste,
    /// Gradient-domain blend of the surface reference.
    #[serde(rename = "poisson")]
    Poisson,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::V1,
        Variant::V2,
        Variant::SdBaseline,
        Variant::Toy,
        Variant::CopyPaste,
        Variant::Poisson,
    ];

    pub fn accepts_surface(self) -> bool {
        matches!(self, Variant::V2 | Variant::CopyPaste | Variant::Poisson)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::V1 => "v1",
            Variant::V2 => "v2",
            Variant::SdBaseline => "sd-baseline",
            Variant::Toy => "toy",
            Variant::CopyPaste => "copy-paste",
            Variant::Poisson => "poisson",
        })
    }
}

/// Fine-tuning hyperparameters a backend's weights were produced with.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub steps: u32,
    pub learning_rate: f64,
    pub batch_size: u32,
}

impl fmt::Display for TrainingRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} steps, lr {:e}, batch {}",
            self.steps, self.learning_rate, self.batch_size
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub name: String,
    pub variant: Variant,
    pub training_provenance: Option<TrainingRecord>,
    /// Sampler the backend runs; informational.
    pub scheduler: Option<String>,
    /// Starts sampling from a forward-noised background rather than pure noise.
    pub noised_background_init: bool,
}

impl BackendDescriptor {
    pub fn sd_inpaint() -> Self {
        Self {
            name: "sd-inpaint".into(),
            variant: Variant::SdBaseline,
            training_provenance: Some(TrainingRecord {
                steps: 2_000,
                learning_rate: 1e-5,
                batch_size: 4,
            }),
            scheduler: Some("UniPCMultistepScheduler".into()),
            noised_background_init: true,
        }
    }

    pub fn v1_controlnet() -> Self {
        Self {
            name: "controlnet-v1".into(),
            variant: Variant::V1,
            training_provenance: Some(TrainingRecord {
                steps: 15_000,
                learning_rate: 5e-5,
                batch_size: 4,
            }),
            ..Self::sd_inpaint()
        }
    }

    pub fn v2_controlnet() -> Self {
        Self {
            name: "controlnet-v2".into(),
            variant: Variant::V2,
            training_provenance: Some(TrainingRecord {
                steps: 16_000,
                learning_rate: 5e-5,
                batch_size: 2,
            }),
            ..Self::sd_inpaint()
        }
    }

    /// Non-generative compositing baselines; `variant` must be copy-paste or Poisson.
    pub fn classic(variant: Variant) -> Self {
        Self {
            name: variant.to_string(),
            variant,
            training_provenance: None,
            scheduler: None,
            noised_background_init: false,
        }
    }

    pub fn toy(variant: Variant) -> Self {
        Self {
            name: format!("toy-{variant}"),
            variant,
            training_provenance: None,
            scheduler: None,
            noised_background_init: true,
        }
    }

    /// Rejects requests whose surface reference presence disagrees with the variant.
    pub fn check_request(&self, request: &InpaintRequest) -> Result<()> {
        let has_surface = request.surface_reference.is_some();
        if has_surface != self.variant.accepts_surface() {
            return Err(Error::VariantMismatch {
                backend: self.name.clone(),
                variant: self.variant.to_string(),
                reason: if has_surface {
                    "does not accept a surface reference"
                } else {
                    "requires a surface reference"
                },
            });
        }
        Ok(())
    }
}

/// A generation backend. Implementations must be safe to call concurrently.
pub trait InpaintBackend: Send + Sync {
    fn descriptor(&self) -> &BackendDescriptor;

    /// Produces a full-frame image with the background's dimensions.
    fn generate(&self, request: &InpaintRequest) -> Result<RasterImage>;
}

/// Runs a backend and keeps every pixel outside the inpaint region identical to the background.
pub fn inpaint(request: &InpaintRequest, backend: &dyn InpaintBackend) -> Result<RasterImage> {
    request.validate()?;
    backend.descriptor().check_request(request)?;
    let generated = backend.generate(request)?;
    composite(&request.background, &generated, &request.inpaint_region)
}

/// `generated` inside `region`, `background` elsewhere.
pub fn composite(background: &RasterImage, generated: &RasterImage, region: &BinaryMask) -> Result<RasterImage> {
    if generated.dims() != background.dims() || region.dims() != background.dims() {
        return Err(Error::DimMismatch {
            expected: background.dims(),
            actual: generated.dims(),
        });
    }
    let generated = match (background.channels(), generated.channels()) {
        (a, b) if a == b => generated.clone(),
        (3, 1) => generated.to_rgb(),
        _ => {
            return Err(Error::InvalidRaster(format!(
                "backend returned {} channels for a {}-channel background",
                generated.channels(),
                background.channels()
            )))
        }
    };
    let ch = background.channels();
    let mut data = background.data().to_vec();
    for (i, &inside) in region.data().iter().enumerate() {
        if inside {
            data[i * ch..(i + 1) * ch].copy_from_slice(&generated.data()[i * ch..(i + 1) * ch]);
        }
    }
    RasterImage::new(background.height(), background.width(), ch, data)
}

/// Lesion removal settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RemovalParams {
    pub noise_strength: f64,
    pub sampling_steps: u32,
    pub seed: u64,
}

impl Default for RemovalParams {
    fn default() -> Self {
        Self {
            noise_strength: 1.0,
            sampling_steps: DEFAULT_SAMPLING_STEPS,
            seed: 0,
        }
    }
}

/// Turns a positive image into a negative by inpainting the dilated lesion with no condition.
pub fn remove_lesion(
    image: &RasterImage,
    lesion_mask: &BinaryMask,
    dilation: usize,
    backend: &dyn InpaintBackend,
) -> Result<RasterImage> {
    remove_lesion_with(image, lesion_mask, dilation, backend, RemovalParams::default())
}

pub fn remove_lesion_with(
    image: &RasterImage,
    lesion_mask: &BinaryMask,
    dilation: usize,
    backend: &dyn InpaintBackend,
    params: RemovalParams,
) -> Result<RasterImage> {
    if lesion_mask.dims() != image.dims() {
        return Err(Error::DimMismatch {
            expected: image.dims(),
            actual: lesion_mask.dims(),
        });
    }
    if lesion_mask.is_empty() {
        return Err(Error::EmptyMask);
    }
    let (h, w) = image.dims();
    let mut request = InpaintRequest::new(image.clone(), lesion_mask.dilate(dilation), BinaryMask::empty(h, w));
    request.noise_strength = params.noise_strength;
    request.sampling_steps = params.sampling_steps;
    request.seed = params.seed;
    inpaint(&request, backend)
}
