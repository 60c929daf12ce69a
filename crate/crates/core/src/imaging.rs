//! Pixel containers and mask geometry.
//!
//! Coordinates are `(row, col)`, zero-indexed, with pixel centers at integer
//! positions. All operations are pure: they borrow their inputs and return new
//! values.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Gray value at or above which an 8-bit mask pixel counts as foreground.
pub const MASK_THRESHOLD_U8: u8 = 128;

/// A row-major image with interleaved channels and intensities in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RasterImage {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl RasterImage {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidRaster(format!(
                "dimensions must be positive, got {height}x{width}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidRaster(format!(
                "channel count must be 1 or 3, got {channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::InvalidRaster(format!(
                "expected {} samples, got {}",
                height * width * channels,
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidRaster(format!(
                "intensity {bad} outside [0, 1]"
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    /// Builds an image from a per-sample function; values are clamped to `[0, 1]`.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * channels);
        for r in 0..height {
            for c in 0..width {
                for ch in 0..channels {
                    data.push(clamp_unit(f(r, c, ch)));
                }
            }
        }
        Self::new(height, width, channels, data)
    }

    pub fn filled(height: usize, width: usize, color: &[f32]) -> Result<Self> {
        Self::from_fn(height, width, color.len(), |_, _, ch| color[ch])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn pixel(&self, row: usize, col: usize) -> &[f32] {
        let i = (row * self.width + col) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn sample(&self, row: usize, col: usize, ch: usize) -> f32 {
        self.data[(row * self.width + col) * self.channels + ch]
    }

    /// Returns the image as three-channel, replicating gray if needed.
    pub fn to_rgb(&self) -> RasterImage {
        if self.channels == 3 {
            return self.clone();
        }
        let data = self.data.iter().flat_map(|&v| [v, v, v]).collect();
        RasterImage {
            height: self.height,
            width: self.width,
            channels: 3,
            data,
        }
    }

    /// Sub-image `[top, top+height) x [left, left+width)`; the window must be in bounds.
    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 || top + height > self.height || left + width > self.width {
            return Err(Error::InvalidRaster(format!(
                "crop {height}x{width}+{top}+{left} outside {}x{}",
                self.height, self.width
            )));
        }
        let mut data = Vec::with_capacity(height * width * self.channels);
        for r in top..top + height {
            let start = (r * self.width + left) * self.channels;
            data.extend_from_slice(&self.data[start..start + width * self.channels]);
        }
        Ok(Self {
            height,
            width,
            channels: self.channels,
            data,
        })
    }

    /// Bilinear resampling with half-pixel centers.
    pub fn resize_bilinear(&self, height: usize, width: usize) -> Result<Self> {
        if (height, width) == self.dims() {
            return Ok(self.clone());
        }
        if height == 0 || width == 0 {
            return Err(Error::InvalidRaster("resize target must be positive".into()));
        }
        let rows = crate::resample::axis_weights(self.height, height);
        let cols = crate::resample::axis_weights(self.width, width);
        let ch = self.channels;
        let mut data = vec![0.0f32; height * width * ch];
        for (r, rw) in rows.iter().enumerate() {
            for (c, cw) in cols.iter().enumerate() {
                for k in 0..ch {
                    let mut acc = 0.0f64;
                    for &(sr, wr) in rw {
                        for &(sc, wc) in cw {
                            acc += wr * wc * self.sample(sr, sc, k) as f64;
                        }
                    }
                    data[(r * width + c) * ch + k] = clamp_unit(acc as f32);
                }
            }
        }
        Self::new(height, width, ch, data)
    }

    /// Nearest-neighbour resampling; each output pixel copies exactly one source pixel.
    pub fn resize_nearest(&self, height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidRaster("resize target must be positive".into()));
        }
        Self::from_fn(height, width, self.channels, |r, c, k| {
            self.sample(r * self.height / height, c * self.width / width, k)
        })
    }

    /// Per-channel mean over all pixels.
    pub fn mean_color(&self) -> Vec<f64> {
        let mut sums = vec![0.0f64; self.channels];
        for px in self.data.chunks_exact(self.channels) {
            for (s, &v) in sums.iter_mut().zip(px) {
                *s += v as f64;
            }
        }
        let n = (self.height * self.width) as f64;
        sums.into_iter().map(|s| s / n).collect()
    }
}

pub(crate) fn clamp_unit(v: f32) -> f32 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 1.0)
    }
}

/// Tight bounding box, half-open on the bottom/right edges.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub top: usize,
    pub left: usize,
    pub bottom: usize,
    pub right: usize,
}

impl BoundingBox {
    pub fn height(&self) -> usize {
        self.bottom - self.top
    }

    pub fn width(&self) -> usize {
        self.right - self.left
    }
}

/// Result of shifting a mask: the shifted mask and how many foreground pixels fell off.
#[derive(Clone, Debug, PartialEq)]
pub struct Translated {
    pub mask: BinaryMask,
    pub clipped: usize,
}

/// A binary mask. Foreground pixels are `true`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidRaster(format!(
                "mask dimensions must be positive, got {height}x{width}"
            )));
        }
        if data.len() != height * width {
            return Err(Error::InvalidRaster(format!(
                "expected {} mask pixels, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![false; height * width],
        }
    }

    pub fn full(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![true; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    /// Mask with exactly the listed pixels set; out-of-range pixels are ignored.
    pub fn from_pixels(
        height: usize,
        width: usize,
        pixels: impl IntoIterator<Item = (usize, usize)>,
    ) -> Self {
        let mut m = Self::empty(height, width);
        for (r, c) in pixels {
            if r < height && c < width {
                m.data[r * width + c] = true;
            }
        }
        m
    }

    /// Binarizes an 8-bit gray buffer at [`MASK_THRESHOLD_U8`].
    pub fn from_gray8(height: usize, width: usize, gray: &[u8]) -> Result<Self> {
        Self::new(
            height,
            width,
            gray.iter().map(|&v| v >= MASK_THRESHOLD_U8).collect(),
        )
    }

    /// Thresholds a real-valued map: `value >= threshold` is foreground.
    pub fn from_threshold(height: usize, width: usize, values: &[f64], threshold: f64) -> Result<Self> {
        Self::new(height, width, values.iter().map(|&v| v >= threshold).collect())
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.data[row * self.width + col]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&v| v)
    }

    pub fn to_gray8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| if v { 255 } else { 0 }).collect()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect()
    }

    pub fn foreground(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.width;
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &v)| v)
            .map(move |(i, _)| (i / w, i % w))
    }

    pub(crate) fn check_same_dims(&self, other: &BinaryMask) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::DimMismatch {
                expected: self.dims(),
                actual: other.dims(),
            });
        }
        Ok(())
    }

    pub fn intersection_count(&self, other: &BinaryMask) -> Result<usize> {
        self.check_same_dims(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .filter(|(&a, &b)| a && b)
            .count())
    }

    pub fn is_subset_of(&self, other: &BinaryMask) -> Result<bool> {
        self.check_same_dims(other)?;
        Ok(self.data.iter().zip(&other.data).all(|(&a, &b)| !a || b))
    }

    pub fn union(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.zip_with(other, |a, b| a || b)
    }

    pub fn intersection(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.zip_with(other, |a, b| a && b)
    }

    fn zip_with(&self, other: &BinaryMask, f: impl Fn(bool, bool) -> bool) -> Result<BinaryMask> {
        self.check_same_dims(other)?;
        Ok(BinaryMask {
            height: self.height,
            width: self.width,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn complement(&self) -> BinaryMask {
        BinaryMask {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| !v).collect(),
        }
    }

    pub fn bbox(&self) -> Option<BoundingBox> {
        let mut bb: Option<BoundingBox> = None;
        for (r, c) in self.foreground() {
            let b = bb.get_or_insert(BoundingBox {
                top: r,
                left: c,
                bottom: r + 1,
                right: c + 1,
            });
            b.top = b.top.min(r);
            b.left = b.left.min(c);
            b.bottom = b.bottom.max(r + 1);
            b.right = b.right.max(c + 1);
        }
        bb
    }

    /// Mean `(row, col)` of the foreground pixels.
    pub fn centroid(&self) -> Result<(f64, f64)> {
        let (mut sr, mut sc, mut n) = (0u64, 0u64, 0u64);
        for (r, c) in self.foreground() {
            sr += r as u64;
            sc += c as u64;
            n += 1;
        }
        if n == 0 {
            return Err(Error::EmptyMask);
        }
        Ok((sr as f64 / n as f64, sc as f64 / n as f64))
    }

    /// Shifts every foreground pixel by `(d_row, d_col)`, dropping pixels that leave the frame.
    pub fn translate(&self, d_row: i64, d_col: i64) -> Translated {
        let mut out = BinaryMask::empty(self.height, self.width);
        let mut clipped = 0;
        for (r, c) in self.foreground() {
            let nr = r as i64 + d_row;
            let nc = c as i64 + d_col;
            if nr < 0 || nc < 0 || nr >= self.height as i64 || nc >= self.width as i64 {
                clipped += 1;
            } else {
                out.data[nr as usize * self.width + nc as usize] = true;
            }
        }
        Translated { mask: out, clipped }
    }

    /// Block-majority downsampling; a block is foreground when at least half its pixels are.
    pub fn downsample(&self, factor: usize) -> Result<BinaryMask> {
        if factor == 0 || self.height % factor != 0 || self.width % factor != 0 {
            return Err(Error::BadFactor {
                factor,
                height: self.height,
                width: self.width,
            });
        }
        if factor == 1 {
            return Ok(self.clone());
        }
        let (h, w) = (self.height / factor, self.width / factor);
        let area = factor * factor;
        Ok(BinaryMask::from_fn(h, w, |br, bc| {
            let mut n = 0;
            for r in br * factor..(br + 1) * factor {
                for c in bc * factor..(bc + 1) * factor {
                    n += self.get(r, c) as usize;
                }
            }
            2 * n >= area
        }))
    }

    /// Morphological dilation with a Euclidean disk of the given radius.
    pub fn dilate(&self, radius: usize) -> BinaryMask {
        if radius == 0 {
            return self.clone();
        }
        let rad = radius as i64;
        let offsets: Vec<(i64, i64)> = (-rad..=rad)
            .flat_map(|dr| (-rad..=rad).map(move |dc| (dr, dc)))
            .filter(|(dr, dc)| dr * dr + dc * dc <= rad * rad)
            .collect();
        let mut out = self.clone();
        let (h, w) = (self.height as i64, self.width as i64);
        for (r, c) in self.foreground() {
            // Interior pixels add nothing beyond what their boundary neighbours stamp.
            let (ri, ci) = (r as i64, c as i64);
            let interior = [(-1, 0), (1, 0), (0, -1), (0, 1)].iter().all(|(dr, dc)| {
                let (nr, nc) = (ri + dr, ci + dc);
                nr >= 0 && nc >= 0 && nr < h && nc < w && self.get(nr as usize, nc as usize)
            });
            if interior {
                continue;
            }
            for &(dr, dc) in &offsets {
                let (nr, nc) = (ri + dr, ci + dc);
                if nr >= 0 && nc >= 0 && nr < h && nc < w {
                    out.data[nr as usize * self.width + nc as usize] = true;
                }
            }
        }
        out
    }

    /// Nearest-neighbour resize.
    pub fn resize_nearest(&self, height: usize, width: usize) -> BinaryMask {
        if (height, width) == self.dims() {
            return self.clone();
        }
        BinaryMask::from_fn(height, width, |r, c| {
            self.get(r * self.height / height, c * self.width / width)
        })
    }

    /// Bilinear resize of the 0/1 indicator followed by a 0.5 threshold.
    pub fn resize_bilinear(&self, height: usize, width: usize) -> BinaryMask {
        if (height, width) == self.dims() {
            return self.clone();
        }
        let values = crate::resample::resize_plane(&self.to_f64(), self.height, self.width, height, width);
        BinaryMask {
            height,
            width,
            data: values.into_iter().map(|v| v >= 0.5).collect(),
        }
    }

    /// City-block distance (in pixels) from each foreground pixel to the
    /// nearest background pixel or frame edge; background pixels get 0.
    pub fn inner_distance(&self) -> Vec<u32> {
        let (h, w) = (self.height, self.width);
        let mut dist = vec![u32::MAX; h * w];
        let mut queue = std::collections::VecDeque::new();
        for r in 0..h {
            for c in 0..w {
                let i = r * w + c;
                if !self.data[i] {
                    dist[i] = 0;
                } else if r == 0 || c == 0 || r + 1 == h || c + 1 == w || {
                    !self.data[i - w] || !self.data[i + w] || !self.data[i - 1] || !self.data[i + 1]
                } {
                    dist[i] = 1;
                    queue.push_back(i);
                }
            }
        }
        while let Some(i) = queue.pop_front() {
            let (r, c) = (i / w, i % w);
            let d = dist[i] + 1;
            let mut visit = |j: usize| {
                if dist[j] > d {
                    dist[j] = d;
                    queue.push_back(j);
                }
            };
            if r > 0 {
                visit(i - w);
            }
            if r + 1 < h {
                visit(i + w);
            }
            if c > 0 {
                visit(i - 1);
            }
            if c + 1 < w {
                visit(i + 1);
            }
        }
        dist
    }
}

/// Crops `img` to the mask's bounding box grown by `padding` on every side, clipped to the frame.
pub fn crop_to_bbox(img: &RasterImage, mask: &BinaryMask, padding: usize) -> Result<RasterImage> {
    if img.dims() != mask.dims() {
        return Err(Error::DimMismatch {
            expected: img.dims(),
            actual: mask.dims(),
        });
    }
    let bb = mask.bbox().ok_or(Error::EmptyMask)?;
    let top = bb.top.saturating_sub(padding);
    let left = bb.left.saturating_sub(padding);
    let bottom = (bb.bottom + padding).min(img.height());
    let right = (bb.right + padding).min(img.width());
    img.crop(top, left, bottom - top, right - left)
}
