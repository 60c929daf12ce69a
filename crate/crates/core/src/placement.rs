//! Choosing where a lesion goes in a background.
//!
//! Candidate centers lie on a stride grid anchored at `(0, 0)`. Each candidate
//! window has the size of the region's bounding box and is compared to the
//! reference crop by the distance between mean CIELAB colors. Window sums run
//! over fixed-point Lab values held in integral images, so costs are exact
//! functions of the pixel data and independent of scan order.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{BinaryMask, RasterImage};

/// Fixed-point scale for Lab components.
pub const LAB_SCALE: f64 = 65536.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlacementParams {
    pub stride: usize,
    /// Scan every pixel position instead of the stride grid.
    pub exhaustive: bool,
}

impl Default for PlacementParams {
    fn default() -> Self {
        Self {
            stride: 8,
            exhaustive: false,
        }
    }
}

impl PlacementParams {
    pub fn effective_stride(&self) -> usize {
        if self.exhaustive {
            1
        } else {
            self.stride.max(1)
        }
    }
}

fn srgb_to_linear(v: f64) -> f64 {
    if v <= 0.04045 {
        v / 12.92
    } else {
        ((v + 0.055) / 1.055).powf(2.4)
    }
}

fn lab_f(t: f64) -> f64 {
    const D: f64 = 6.0 / 29.0;
    if t > D * D * D {
        t.cbrt()
    } else {
        t / (3.0 * D * D) + 4.0 / 29.0
    }
}

/// sRGB (D65) to CIELAB.
pub fn srgb_to_lab(rgb: [f64; 3]) -> [f64; 3] {
    let [r, g, b] = rgb.map(srgb_to_linear);
    let x = 0.4124564 * r + 0.3575761 * g + 0.1804375 * b;
    let y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b;
    let z = 0.0193339 * r + 0.1191920 * g + 0.9503041 * b;
    let (fx, fy, fz) = (lab_f(x / 0.95047), lab_f(y), lab_f(z / 1.08883));
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

/// Fixed-point Lab of one pixel (gray pixels are treated as neutral RGB).
pub fn pixel_lab_fixed(px: &[f32]) -> [i64; 3] {
    let rgb = if px.len() >= 3 {
        [px[0] as f64, px[1] as f64, px[2] as f64]
    } else {
        [px[0] as f64; 3]
    };
    srgb_to_lab(rgb).map(|v| (v * LAB_SCALE).round() as i64)
}

/// Mean Lab color from fixed-point channel sums over `n` pixels.
pub fn mean_lab(sums: [i64; 3], n: usize) -> [f64; 3] {
    sums.map(|s| s as f64 / (n as f64 * LAB_SCALE))
}

pub fn lab_distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    let d0 = a[0] - b[0];
    let d1 = a[1] - b[1];
    let d2 = a[2] - b[2];
    (d0 * d0 + d1 * d1 + d2 * d2).sqrt()
}

/// Mean Lab color of a whole image.
pub fn image_mean_lab(img: &RasterImage) -> [f64; 3] {
    let mut sums = [0i64; 3];
    for r in 0..img.height() {
        for c in 0..img.width() {
            let lab = pixel_lab_fixed(img.pixel(r, c));
            for k in 0..3 {
                sums[k] += lab[k];
            }
        }
    }
    mean_lab(sums, img.height() * img.width())
}

/// Window top-left for a window of `extent` centered on `center`, if any.
pub fn window_origin(center: usize, extent: usize) -> Option<usize> {
    center.checked_sub(extent / 2)
}

struct Integral {
    width: usize,
    lab: Vec<[i64; 3]>,
    blocked: Vec<u32>,
}

impl Integral {
    fn build(img: &RasterImage, exclusion: Option<&BinaryMask>) -> Self {
        let (h, w) = img.dims();
        let iw = w + 1;
        let mut lab = vec![[0i64; 3]; (h + 1) * iw];
        let mut blocked = vec![0u32; (h + 1) * iw];
        for r in 0..h {
            let mut row = [0i64; 3];
            let mut row_blocked = 0u32;
            for c in 0..w {
                let px = pixel_lab_fixed(img.pixel(r, c));
                for k in 0..3 {
                    row[k] += px[k];
                }
                row_blocked += exclusion.is_some_and(|m| m.get(r, c)) as u32;
                let above = lab[r * iw + c + 1];
                lab[(r + 1) * iw + c + 1] = [above[0] + row[0], above[1] + row[1], above[2] + row[2]];
                blocked[(r + 1) * iw + c + 1] = blocked[r * iw + c + 1] + row_blocked;
            }
        }
        Self {
            width: iw,
            lab,
            blocked,
        }
    }

    fn lab_sum(&self, top: usize, left: usize, h: usize, w: usize) -> [i64; 3] {
        let (a, b) = (top * self.width + left, top * self.width + left + w);
        let (c, d) = ((top + h) * self.width + left, (top + h) * self.width + left + w);
        std::array::from_fn(|k| self.lab[d][k] - self.lab[b][k] - self.lab[c][k] + self.lab[a][k])
    }

    fn blocked(&self, top: usize, left: usize, h: usize, w: usize) -> u32 {
        let (a, b) = (top * self.width + left, top * self.width + left + w);
        let (c, d) = ((top + h) * self.width + left, (top + h) * self.width + left + w);
        self.blocked[d] + self.blocked[a] - self.blocked[b] - self.blocked[c]
    }
}

/// A scored candidate center.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchChoice {
    pub center: (usize, usize),
    pub cost: f64,
}

/// Every feasible candidate, cheapest first; ties by `(row, col)`.
pub fn rank_patches(
    background: &RasterImage,
    reference: &RasterImage,
    region: &BinaryMask,
    stride: usize,
    exclusion: Option<&BinaryMask>,
) -> Result<Vec<PatchChoice>> {
    if let Some(ex) = exclusion {
        if ex.dims() != background.dims() {
            return Err(Error::DimMismatch {
                expected: background.dims(),
                actual: ex.dims(),
            });
        }
    }
    let stride = stride.max(1);
    let bb = region.bbox().ok_or(Error::EmptyMask)?;
    let (bh, bw) = (bb.height(), bb.width());
    let (h, w) = background.dims();
    let target = image_mean_lab(reference);
    let integral = Integral::build(background, exclusion);
    let rows: Vec<usize> = (0..h).step_by(stride).collect();
    let mut out: Vec<PatchChoice> = rows
        .par_iter()
        .flat_map_iter(|&r| {
            let integral = &integral;
            (0..w).step_by(stride).filter_map(move |c| {
                let top = window_origin(r, bh)?;
                let left = window_origin(c, bw)?;
                if top + bh > h || left + bw > w || integral.blocked(top, left, bh, bw) > 0 {
                    return None;
                }
                let mean = mean_lab(integral.lab_sum(top, left, bh, bw), bh * bw);
                Some(PatchChoice {
                    center: (r, c),
                    cost: lab_distance(target, mean),
                })
            })
        })
        .collect();
    out.sort_by(|a, b| a.cost.total_cmp(&b.cost).then(a.center.cmp(&b.center)));
    Ok(out)
}

/// Background position whose window color best matches the reference.
pub fn find_patch(
    background: &RasterImage,
    reference: &RasterImage,
    region: &BinaryMask,
    stride: usize,
    exclusion: Option<&BinaryMask>,
) -> Result<PatchChoice> {
    rank_patches(background, reference, region, stride, exclusion)?
        .into_iter()
        .next()
        .ok_or(Error::NoFeasiblePlacement)
}

/// Where the conditions ended up and how they got there.
#[derive(Clone, Debug, PartialEq)]
pub struct PlacementResult {
    pub target_center: (usize, usize),
    pub offset: (i64, i64),
    pub moved_inpaint_region: BinaryMask,
    pub moved_condition: BinaryMask,
    pub similarity_cost: f64,
    /// Candidates rejected for clipping before this one was accepted.
    pub rejected_candidates: usize,
}

/// Moves the inpaint region and boundary condition by one shared integer offset so the
/// region's centroid lands on the best-matching background patch.
pub fn place_conditions(
    background: &RasterImage,
    inpaint_region: &BinaryMask,
    condition: &BinaryMask,
    reference: &RasterImage,
    params: &PlacementParams,
    exclusion: Option<&BinaryMask>,
) -> Result<PlacementResult> {
    for m in [inpaint_region, condition] {
        if m.dims() != background.dims() {
            return Err(Error::DimMismatch {
                expected: background.dims(),
                actual: m.dims(),
            });
        }
    }
    if condition.is_empty() {
        return Err(Error::EmptyMask);
    }
    let (cr, cc) = inpaint_region.centroid()?;
    let ranked = rank_patches(
        background,
        reference,
        inpaint_region,
        params.effective_stride(),
        exclusion,
    )?;
    for (i, cand) in ranked.iter().enumerate() {
        let offset = (
            (cand.center.0 as f64 - cr).round() as i64,
            (cand.center.1 as f64 - cc).round() as i64,
        );
        let region = inpaint_region.translate(offset.0, offset.1);
        if region.clipped > 0 {
            continue;
        }
        let cond = condition.translate(offset.0, offset.1);
        if cond.clipped > 0 {
            continue;
        }
        return Ok(PlacementResult {
            target_center: cand.center,
            offset,
            moved_inpaint_region: region.mask,
            moved_condition: cond.mask,
            similarity_cost: cand.cost,
            rejected_candidates: i,
        });
    }
    Err(Error::NoFeasiblePlacement)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn disk(h: usize, w: usize, center: (usize, usize), radius: f64) -> BinaryMask {
        BinaryMask::from_fn(h, w, |r, c| {
            let dr = r as f64 - center.0 as f64;
            let dc = c as f64 - center.1 as f64;
            dr * dr + dc * dc <= radius * radius
        })
    }

    #[test]
    fn lab_reference_values() {
        let white = srgb_to_lab([1.0, 1.0, 1.0]);
        assert!((white[0] - 100.0).abs() < 1e-3 && white[1].abs() < 1e-2 && white[2].abs() < 1e-2);
        let red = srgb_to_lab([1.0, 0.0, 0.0]);
        assert!((red[0] - 53.24).abs() < 0.05 && (red[1] - 80.09).abs() < 0.1 && (red[2] - 67.20).abs() < 0.1);
    }

    #[test]
    fn uniform_background_picks_top_left_feasible() {
        let bg = RasterImage::filled(40, 40, &[0.5, 0.4, 0.3]).unwrap();
        let reference = RasterImage::filled(3, 3, &[0.9, 0.1, 0.1]).unwrap();
        // 5x5 bbox: centers need row, col >= 2 -> first stride-4 grid point is (4, 4)
        let region = BinaryMask::from_fn(40, 40, |r, c| (10..15).contains(&r) && (10..15).contains(&c));
        let best = find_patch(&bg, &reference, &region, 4, None).unwrap();
        assert_eq!(best.center, (4, 4));
    }

    #[test]
    fn red_reference_lands_in_red_half() {
        let bg = RasterImage::from_fn(32, 64, 3, |_, c, k| match (c < 32, k) {
            (true, 0) | (false, 2) => 1.0,
            _ => 0.0,
        })
        .unwrap();
        let reference = RasterImage::filled(4, 4, &[1.0, 0.0, 0.0]).unwrap();
        let region = disk(32, 64, (16, 40), 3.0);
        let best = find_patch(&bg, &reference, &region, 2, None).unwrap();
        assert!(best.center.1 + 3 < 32, "{best:?}");
        assert!(best.cost < 1e-3);
    }

    #[test]
    fn oversized_region_is_infeasible() {
        let bg = RasterImage::filled(8, 8, &[0.5, 0.5, 0.5]).unwrap();
        let reference = RasterImage::filled(2, 2, &[0.5, 0.5, 0.5]).unwrap();
        // the region lives on a larger canvas than the background
        let region = BinaryMask::full(10, 10);
        assert!(matches!(
            find_patch(&bg, &reference, &region, 1, None),
            Err(Error::NoFeasiblePlacement)
        ));
    }

    #[test]
    fn exclusion_blocks_windows() {
        let bg = RasterImage::filled(20, 20, &[0.5, 0.5, 0.5]).unwrap();
        let reference = bg.crop(0, 0, 2, 2).unwrap();
        let region = disk(20, 20, (10, 10), 1.0);
        let exclusion = BinaryMask::from_fn(20, 20, |r, _| r < 10);
        let best = find_patch(&bg, &reference, &region, 1, Some(&exclusion)).unwrap();
        assert_eq!(best.center, (11, 1));
    }

    #[test]
    fn place_applies_shared_offset() {
        let bg = RasterImage::from_fn(48, 48, 3, |r, c, _| {
            if (18..23).contains(&r) && (23..28).contains(&c) {
                0.9
            } else {
                0.2
            }
        })
        .unwrap();
        let reference = RasterImage::filled(3, 3, &[0.9, 0.9, 0.9]).unwrap();
        let m1 = disk(48, 48, (10, 10), 2.0);
        let m2 = disk(48, 48, (10, 10), 1.0);
        let res = place_conditions(&bg, &m1, &m2, &reference, &PlacementParams { stride: 1, exhaustive: false }, None).unwrap();
        assert_eq!(res.target_center, (20, 25));
        assert_eq!(res.offset, (10, 15));
        assert_eq!(res.moved_inpaint_region, disk(48, 48, (20, 25), 2.0));
        assert_eq!(res.moved_condition, disk(48, 48, (20, 25), 1.0));
    }

    #[test]
    fn already_centered_region_is_not_moved() {
        // background is exactly the region's window size, so one center is feasible
        let bg = RasterImage::filled(5, 5, &[0.3, 0.3, 0.3]).unwrap();
        let m1 = disk(5, 5, (2, 2), 2.0);
        let m2 = disk(5, 5, (2, 2), 1.0);
        let res = place_conditions(&bg, &m1, &m2, &bg, &PlacementParams::default(), None);
        // default stride 8 never visits (2, 2)
        assert!(matches!(res, Err(Error::NoFeasiblePlacement)));
        let res = place_conditions(&bg, &m1, &m2, &bg, &PlacementParams { stride: 1, exhaustive: true }, None).unwrap();
        assert_eq!(res.offset, (0, 0));
        assert_eq!(res.moved_inpaint_region, m1);
        assert_eq!(res.moved_condition, m2);
    }

    #[test]
    fn falls_back_when_best_candidate_clips() {
        // The region's centroid sits far from its bbox center, so centering the
        // centroid on the bbox-feasible best window pushes pixels off the frame.
        let h = 24;
        let line = (0..20).map(|c| (10, c));
        let block = (8..13).flat_map(|r| (15..20).map(move |c| (r, c)));
        let m1 = BinaryMask::from_pixels(h, h, line.chain(block));
        let m2 = m1.clone();
        let bg = RasterImage::from_fn(h, h, 3, |_, c, _| if c < 6 { 0.9 } else { 0.1 }).unwrap();
        let reference = RasterImage::filled(2, 2, &[0.9, 0.9, 0.9]).unwrap();
        let params = PlacementParams { stride: 1, exhaustive: true };
        let ranked = rank_patches(&bg, &reference, &m1, 1, None).unwrap();
        let res = place_conditions(&bg, &m1, &m2, &reference, &params, None).unwrap();
        assert!(res.rejected_candidates > 0);
        assert_ne!(res.target_center, ranked[0].center);
        // exhaustive check: the accepted candidate is the first one in rank order that does not clip
        let (cr, cc) = m1.centroid().unwrap();
        let first_ok = ranked
            .iter()
            .find(|cand| {
                let d = ((cand.center.0 as f64 - cr).round() as i64, (cand.center.1 as f64 - cc).round() as i64);
                m1.translate(d.0, d.1).clipped == 0
            })
            .unwrap();
        assert_eq!(res.target_center, first_ok.center);
        assert_eq!(res.moved_inpaint_region.count(), m1.count());
    }
}
