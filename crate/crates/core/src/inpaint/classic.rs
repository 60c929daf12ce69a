//! Copy-paste and Poisson-blending baselines.
//!
//! Both place the surface reference, resampled to the boundary condition's
//! bounding box, inside the condition. Copy-paste replaces the pixels outright.
//! Poisson blending keeps the reference's gradients and takes its boundary
//! values from the background, solving the discrete Poisson equation with a
//! fixed number of SOR sweeps in raster order.

use crate::error::{Error, Result};
use crate::imaging::{clamp_unit, RasterImage};

use super::toy::paste_surface;
use super::{BackendDescriptor, InpaintBackend, InpaintRequest, Variant};

pub const POISSON_SWEEPS: usize = 400;
const SOR_OMEGA: f64 = 1.8;

#[derive(Clone, Debug)]
pub struct ClassicBackend {
    descriptor: BackendDescriptor,
}

impl ClassicBackend {
    pub fn new(variant: Variant) -> Result<Self> {
        if !matches!(variant, Variant::CopyPaste | Variant::Poisson) {
            return Err(Error::VariantMismatch {
                backend: "classic".into(),
                variant: variant.to_string(),
                reason: "is not a compositing baseline",
            });
        }
        Ok(Self {
            descriptor: BackendDescriptor::classic(variant),
        })
    }
}

impl InpaintBackend for ClassicBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn generate(&self, req: &InpaintRequest) -> Result<RasterImage> {
        let bg = &*req.background;
        let (h, w) = bg.dims();
        let ch = bg.channels();
        let condition = &*req.boundary_condition;
        let surface = req
            .surface_reference
            .as_deref()
            .ok_or_else(|| Error::VariantMismatch {
                backend: self.descriptor.name.clone(),
                variant: self.descriptor.variant.to_string(),
                reason: "requires a surface reference",
            })?;
        if condition.is_empty() {
            return Ok(bg.clone());
        }
        let source = paste_surface(surface, condition, ch);
        let mut out = bg.data().to_vec();
        if self.descriptor.variant == Variant::CopyPaste {
            for (i, _) in condition.data().iter().enumerate().filter(|(_, &m)| m) {
                out[i * ch..(i + 1) * ch].copy_from_slice(&source[i * ch..(i + 1) * ch]);
            }
        } else {
            let bb = condition.bbox().expect("non-empty condition");
            let in_box = |r: usize, c: usize| (bb.top..bb.bottom).contains(&r) && (bb.left..bb.right).contains(&c);
            let inside: Vec<usize> = (0..h * w).filter(|&i| condition.data()[i]).collect();
            let mut f: Vec<f64> = out.iter().map(|&v| v as f64).collect();
            for _ in 0..POISSON_SWEEPS {
                for &i in &inside {
                    let (r, c) = (i / w, i % w);
                    let neighbours = [
                        (r > 0).then(|| i - w),
                        (r + 1 < h).then(|| i + w),
                        (c > 0).then(|| i - 1),
                        (c + 1 < w).then(|| i + 1),
                    ];
                    for k in 0..ch {
                        let (mut sum, mut n) = (0.0, 0.0);
                        for q in neighbours.into_iter().flatten() {
                            let gq = if in_box(q / w, q % w) { source[q * ch + k] } else { source[i * ch + k] };
                            sum += f[q * ch + k] + (source[i * ch + k] - gq) as f64;
                            n += 1.0;
                        }
                        let j = i * ch + k;
                        f[j] += SOR_OMEGA * (sum / n - f[j]);
                    }
                }
            }
            for &i in &inside {
                for k in 0..ch {
                    out[i * ch + k] = f[i * ch + k] as f32;
                }
            }
        }
        out.iter_mut().for_each(|v| *v = clamp_unit(*v));
        RasterImage::new(h, w, ch, out)
    }
}
