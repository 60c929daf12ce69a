//! Deterministic CPU compositor standing in for a diffusion model.
//!
//! Inside the inpaint region the background is pulled toward a fill that is
//! diffused inward from the region border, by `noise_strength`. Inside the
//! boundary condition a lesion is composited with an alpha that ramps over
//! [`FEATHER_PX`] pixels: the surface reference resampled to the condition's
//! bounding box when one is given, otherwise a tinted, shaded version of the
//! fill with hash-derived grain. All arithmetic is plain `f32` in a fixed
//! order, so outputs are bit-reproducible.

use crate::error::Result;
use crate::imaging::{clamp_unit, BinaryMask, RasterImage};
use crate::seed::splitmix64;

use super::{BackendDescriptor, InpaintBackend, InpaintRequest, Variant};

/// Width of the lesion's alpha ramp, in pixels.
pub const FEATHER_PX: u32 = 3;

const LESION_TINT_RGB: [f32; 3] = [1.10, 0.72, 0.70];
const LESION_TINT_GRAY: f32 = 0.85;
const DOME_GAIN: f32 = 0.12;

#[derive(Clone, Debug)]
pub struct ToyBackend {
    descriptor: BackendDescriptor,
}

impl ToyBackend {
    pub fn new(variant: Variant) -> Self {
        Self {
            descriptor: BackendDescriptor::toy(variant),
        }
    }
}

impl InpaintBackend for ToyBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn generate(&self, req: &InpaintRequest) -> Result<RasterImage> {
        let bg = &*req.background;
        let (h, w) = bg.dims();
        let ch = bg.channels();
        let region = &*req.inpaint_region;
        let condition = &*req.boundary_condition;

        let fill = border_fill(bg, region);
        let strength = req.noise_strength as f32;
        let mut out = bg.data().to_vec();
        for (i, _) in region.data().iter().enumerate().filter(|(_, &m)| m) {
            for k in 0..ch {
                let j = i * ch + k;
                out[j] = bg.data()[j] + strength * (fill[j] - bg.data()[j]);
            }
        }

        if !condition.is_empty() {
            let dist = condition.inner_distance();
            let lesion = match &req.surface_reference {
                Some(surface) => paste_surface(surface, condition, ch),
                None => synthesize_lesion(&fill, condition, &dist, ch, req.seed),
            };
            for (i, &d) in dist.iter().enumerate() {
                if d == 0 {
                    continue;
                }
                let alpha = d.min(FEATHER_PX) as f32 / FEATHER_PX as f32;
                for k in 0..ch {
                    let j = i * ch + k;
                    out[j] += alpha * (lesion[j] - out[j]);
                }
            }
        }
        out.iter_mut().for_each(|v| *v = clamp_unit(*v));
        RasterImage::new(h, w, ch, out)
    }
}

/// Mean of `values` computed relative to their minimum, so equal inputs come back exactly.
fn anchored_mean(values: &[f32]) -> f32 {
    let base = values.iter().copied().fold(f32::INFINITY, f32::min);
    let mut acc = 0.0f32;
    for &v in values {
        acc += v - base;
    }
    base + acc / values.len() as f32
}

/// Onion-peel fill of `region`: each layer takes the mean of its already known 8-neighbours.
/// Pixels outside the region keep their background value.
pub(crate) fn border_fill(bg: &RasterImage, region: &BinaryMask) -> Vec<f32> {
    let (h, w) = bg.dims();
    let ch = bg.channels();
    let mut values = bg.data().to_vec();
    let mut known: Vec<bool> = region.data().iter().map(|&m| !m).collect();
    if !known.iter().any(|&k| k) {
        // nothing to diffuse from: use the global mean color
        for k in 0..ch {
            let plane: Vec<f32> = bg.data().iter().skip(k).step_by(ch).copied().collect();
            let m = anchored_mean(&plane);
            values.iter_mut().skip(k).step_by(ch).for_each(|v| *v = m);
        }
        return values;
    }
    let mut scratch: Vec<f32> = Vec::with_capacity(8);
    loop {
        let mut layer: Vec<(usize, Vec<f32>)> = Vec::new();
        for r in 0..h {
            for c in 0..w {
                let i = r * w + c;
                if known[i] {
                    continue;
                }
                let neighbours: Vec<usize> = neighbours8(r, c, h, w).filter(|&j| known[j]).collect();
                if neighbours.is_empty() {
                    continue;
                }
                let px = (0..ch)
                    .map(|k| {
                        scratch.clear();
                        scratch.extend(neighbours.iter().map(|&j| values[j * ch + k]));
                        anchored_mean(&scratch)
                    })
                    .collect();
                layer.push((i, px));
            }
        }
        if layer.is_empty() {
            break;
        }
        for (i, px) in layer {
            values[i * ch..(i + 1) * ch].copy_from_slice(&px);
            known[i] = true;
        }
    }
    values
}

fn neighbours8(r: usize, c: usize, h: usize, w: usize) -> impl Iterator<Item = usize> {
    const OFFSETS: [(i64, i64); 8] = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)];
    OFFSETS.iter().filter_map(move |&(dr, dc)| {
        let (nr, nc) = (r as i64 + dr, c as i64 + dc);
        (nr >= 0 && nc >= 0 && nr < h as i64 && nc < w as i64).then(|| nr as usize * w + nc as usize)
    })
}

/// Surface reference resampled (nearest) onto the condition's bounding box.
pub(crate) fn paste_surface(surface: &RasterImage, condition: &BinaryMask, ch: usize) -> Vec<f32> {
    let (h, w) = condition.dims();
    let bb = condition.bbox().expect("non-empty condition");
    let (sh, sw) = surface.dims();
    let mut lesion = vec![0.0f32; h * w * ch];
    for r in bb.top..bb.bottom {
        for c in bb.left..bb.right {
            let sr = (r - bb.top) * sh / bb.height();
            let sc = (c - bb.left) * sw / bb.width();
            let px = surface.pixel(sr, sc);
            for k in 0..ch {
                lesion[(r * w + c) * ch + k] = match (ch, px.len()) {
                    (1, 3) => (px[0] + px[1] + px[2]) / 3.0,
                    (3, 1) => px[0],
                    _ => px[k],
                };
            }
        }
    }
    lesion
}

fn synthesize_lesion(fill: &[f32], condition: &BinaryMask, dist: &[u32], ch: usize, seed: u64) -> Vec<f32> {
    let depth = dist.iter().copied().max().unwrap_or(1).max(1) as f32;
    let mut lesion = vec![0.0f32; fill.len()];
    for (i, &inside) in condition.data().iter().enumerate() {
        if !inside {
            continue;
        }
        let grain = (splitmix64(seed ^ (i as u64).wrapping_mul(0x2545_F491_4F6C_DD1D)) % 61) as f32 - 30.0;
        let shade = DOME_GAIN * dist[i] as f32 / depth + grain / 1000.0;
        for k in 0..ch {
            let tint = if ch == 3 { LESION_TINT_RGB[k] } else { LESION_TINT_GRAY };
            lesion[i * ch + k] = fill[i * ch + k] * tint + shade;
        }
    }
    lesion
}
