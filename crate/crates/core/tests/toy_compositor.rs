//! Pixel-level reference for the toy compositor, written without reusing its helpers.

use polypaug_core::inpaint::{inpaint, remove_lesion, InpaintRequest, ToyBackend, Variant, FEATHER_PX};
use polypaug_core::{BinaryMask, RasterImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn textured(h: usize, w: usize, seed: u64) -> RasterImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<f32> = (0..h * w * 3).map(|_| rng.random::<f32>()).collect();
    RasterImage::new(h, w, 3, data).unwrap()
}

/// City-block distance to the nearest pixel outside the mask, treating the frame as outside.
fn distance_to_outside(m: &BinaryMask, r: usize, c: usize) -> u32 {
    let (h, w) = m.dims();
    if !m.get(r, c) {
        return 0;
    }
    let mut best = (r + 1).min(c + 1).min(h - r).min(w - c);
    for rr in 0..h {
        for cc in 0..w {
            if !m.get(rr, cc) {
                best = best.min(rr.abs_diff(r) + cc.abs_diff(c));
            }
        }
    }
    best as u32
}

fn mean_from_min(values: &[f32]) -> f32 {
    let lo = values.iter().copied().fold(f32::INFINITY, f32::min);
    let mut acc = 0.0f32;
    for v in values {
        acc += v - lo;
    }
    lo + acc / values.len() as f32
}

/// Layer-by-layer inward diffusion using only pixels resolved in earlier layers.
fn reference_fill(bg: &RasterImage, region: &BinaryMask) -> Vec<Vec<f32>> {
    let (h, w) = bg.dims();
    let mut value: Vec<Vec<f32>> = (0..h * w).map(|i| bg.pixel(i / w, i % w).to_vec()).collect();
    let mut resolved: Vec<bool> = (0..h * w).map(|i| !region.get(i / w, i % w)).collect();
    loop {
        let snapshot = resolved.clone();
        let mut updates = Vec::new();
        for r in 0..h {
            for c in 0..w {
                if snapshot[r * w + c] {
                    continue;
                }
                let mut nbrs = Vec::new();
                for dr in -1i64..=1 {
                    for dc in -1i64..=1 {
                        let (nr, nc) = (r as i64 + dr, c as i64 + dc);
                        if (dr, dc) != (0, 0) && nr >= 0 && nc >= 0 && nr < h as i64 && nc < w as i64 {
                            let j = nr as usize * w + nc as usize;
                            if snapshot[j] {
                                nbrs.push(j);
                            }
                        }
                    }
                }
                if !nbrs.is_empty() {
                    let px: Vec<f32> = (0..3)
                        .map(|k| mean_from_min(&nbrs.iter().map(|&j| value[j][k]).collect::<Vec<_>>()))
                        .collect();
                    updates.push((r * w + c, px));
                }
            }
        }
        if updates.is_empty() {
            return value;
        }
        for (i, px) in updates {
            value[i] = px;
            resolved[i] = true;
        }
    }
}

#[test]
fn surface_paste_matches_reference() {
    let (h, w) = (40, 48);
    for case in 0..6u64 {
        let bg = textured(h, w, case);
        let surface = textured(7 + case as usize, 9, 100 + case);
        let (cr, cc) = (12 + 3 * case as usize, 15 + 4 * case as usize);
        let m2 = BinaryMask::from_fn(h, w, |r, c| {
            let (dy, dx) = (r as f64 - cr as f64, c as f64 - cc as f64);
            (dy / 5.0).powi(2) + (dx / 7.0).powi(2) <= 1.0
        });
        let m1 = BinaryMask::from_fn(h, w, |r, c| r.abs_diff(cr) <= 9 && c.abs_diff(cc) <= 11);
        let mut req = InpaintRequest::new(bg.clone(), m1.clone(), m2.clone()).with_surface(surface.clone());
        req.noise_strength = 0.7;
        let out = inpaint(&req, &ToyBackend::new(Variant::V2)).unwrap();

        let fill = reference_fill(&bg, &m1);
        let bb = m2.bbox().unwrap();
        let (sh, sw) = surface.dims();
        for r in 0..h {
            for c in 0..w {
                for k in 0..3 {
                    let b = bg.sample(r, c, k);
                    let mut expect = if m1.get(r, c) { b + 0.7 * (fill[r * w + c][k] - b) } else { b };
                    let d = distance_to_outside(&m2, r, c);
                    if d > 0 {
                        let sr = (r - bb.top) * sh / bb.height();
                        let sc = (c - bb.left) * sw / bb.width();
                        let alpha = d.min(FEATHER_PX) as f32 / FEATHER_PX as f32;
                        expect += alpha * (surface.sample(sr, sc, k) - expect);
                    }
                    let got = out.sample(r, c, k);
                    assert!(
                        (got - expect.clamp(0.0, 1.0)).abs() < 1e-5,
                        "case {case} ({r},{c},{k}): {got} vs {expect}"
                    );
                    if !m1.get(r, c) {
                        assert_eq!(got.to_bits(), b.to_bits());
                    }
                }
            }
        }
        // full alpha at depth >= 3 means the interior is the surface itself
        let deep = (0..h * w).find(|&i| distance_to_outside(&m2, i / w, i % w) >= FEATHER_PX).unwrap();
        let (r, c) = (deep / w, deep % w);
        let (sr, sc) = ((r - bb.top) * sh / bb.height(), (c - bb.left) * sw / bb.width());
        assert_eq!(out.pixel(r, c), surface.pixel(sr, sc));
    }
}

#[test]
fn uniform_background_stays_uniform() {
    let bg = RasterImage::filled(30, 30, &[0.25, 0.5, 0.75]).unwrap();
    let region = BinaryMask::from_fn(30, 30, |r, c| (5..25).contains(&r) && (3..20).contains(&c));
    let req = InpaintRequest::new(bg.clone(), region, BinaryMask::empty(30, 30));
    assert_eq!(inpaint(&req, &ToyBackend::new(Variant::V1)).unwrap(), bg);
}

#[test]
fn removal_changes_only_the_dilated_lesion() {
    for seed in 0..10u64 {
        let img = textured(32, 32, seed);
        let lesion = BinaryMask::from_fn(32, 32, |r, c| r.abs_diff(16) + c.abs_diff(10 + seed as usize) <= 4);
        let out = remove_lesion(&img, &lesion, 5, &ToyBackend::new(Variant::Toy)).unwrap();
        let region = lesion.dilate(5);
        for (r, c) in region.complement().foreground() {
            assert_eq!(out.pixel(r, c), img.pixel(r, c));
        }
        assert_ne!(out, img);
    }
}

#[test]
fn variant_checks_at_the_contract() {
    let bg = textured(16, 16, 1);
    let m2 = BinaryMask::from_fn(16, 16, |r, c| r.abs_diff(8) + c.abs_diff(8) <= 2);
    let plain = InpaintRequest::new(bg.clone(), m2.dilate(2), m2.clone());
    let with_surface = plain.clone().with_surface(textured(4, 4, 2));
    assert!(inpaint(&plain, &ToyBackend::new(Variant::V1)).is_ok());
    assert!(inpaint(&with_surface, &ToyBackend::new(Variant::V1)).is_err());
    assert!(inpaint(&plain, &ToyBackend::new(Variant::V2)).is_err());
    assert!(inpaint(&with_surface, &ToyBackend::new(Variant::V2)).is_ok());
}
