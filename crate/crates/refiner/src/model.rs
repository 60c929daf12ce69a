//! Region-gated pyramid segmentation network.
//!
//! A full-resolution stem feeds a pyramid encoder; each pyramid level is gated by the
//! inpaint region, projected by a lateral 1x1 convolution, upsampled to the finest level
//! and summed. The fused map is upsampled to the input size, concatenated with the stem
//! features and reduced to one logit per pixel.

use std::sync::Arc;

use polypaug_core::{BinaryMask, RasterImage};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{RefinerError, Result};
use crate::loss::{structure_loss, LossParts};
use crate::tensor::{
    avg_pool, avg_pool_backward, conv2d, conv2d_backward, relu, relu_backward, sigmoid, upsample, upsample_backward,
    Tensor,
};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GatingMode {
    #[default]
    Multiply,
    SpatialAttention,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backbone {
    #[default]
    ToyCnn,
    /// Frozen external encoder attached with [`Refiner::with_encoder`].
    PluggablePyramid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefinerConfig {
    pub gating_mode: GatingMode,
    pub backbone: Backbone,
    pub feature_strides: Vec<usize>,
    pub input_size: usize,
    pub binarize_threshold: f64,
    pub stem_channels: usize,
    pub encoder_channels: usize,
    pub decoder_channels: usize,
    /// Window of the boundary-weight pooling in the loss.
    pub loss_kernel: usize,
}

impl Default for RefinerConfig {
    fn default() -> Self {
        Self {
            gating_mode: GatingMode::Multiply,
            backbone: Backbone::ToyCnn,
            feature_strides: vec![4, 8, 16, 32],
            input_size: 352,
            binarize_threshold: 0.5,
            stem_channels: 8,
            encoder_channels: 16,
            decoder_channels: 8,
            loss_kernel: 31,
        }
    }
}

impl RefinerConfig {
    /// Small preset for CPU experiments on 64 px inputs.
    pub fn toy() -> Self {
        Self {
            input_size: 64,
            loss_kernel: 15,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(RefinerError::InvalidConfig(m));
        let s = &self.feature_strides;
        if s.is_empty() {
            return bad("feature_strides is empty".into());
        }
        if self.input_size == 0 {
            return bad("input_size must be positive".into());
        }
        for (i, &st) in s.iter().enumerate() {
            if st == 0 || self.input_size % st != 0 {
                return bad(format!("stride {st} does not divide input_size {}", self.input_size));
            }
            if i > 0 && (st <= s[i - 1] || st % s[i - 1] != 0) {
                return bad(format!("stride {st} must be a strictly larger multiple of {}", s[i - 1]));
            }
        }
        if !(self.binarize_threshold > 0.0 && self.binarize_threshold < 1.0) {
            return bad(format!("binarize_threshold {} outside (0, 1)", self.binarize_threshold));
        }
        if self.stem_channels == 0 || self.encoder_channels == 0 || self.decoder_channels == 0 {
            return bad("channel counts must be positive".into());
        }
        if self.loss_kernel % 2 == 0 {
            return bad("loss_kernel must be odd".into());
        }
        Ok(())
    }
}

/// A frozen multi-scale feature extractor supplied from outside the crate.
pub trait PyramidEncoder: Send + Sync {
    fn strides(&self) -> Vec<usize>;
    fn channels(&self) -> Vec<usize>;
    /// Feature maps for a `3 x input_size x input_size` image, one per stride.
    fn encode(&self, image: &Tensor) -> Result<Vec<Tensor>>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Gradients laid out like the model's parameter list.
pub type Grads = Vec<Vec<f64>>;

#[derive(Clone, Debug)]
struct Layout {
    stem: usize,
    enc: Vec<usize>,
    gate: Vec<usize>,
    lat: Vec<usize>,
    fuse: usize,
    head: usize,
}

/// Hidden conv biases start slightly positive: with exact-zero gating a zero bias would
/// park decoder activations on the ReLU kink.
const HIDDEN_BIAS_INIT: f64 = 0.01;

/// Each conv is a weight param followed by its bias param.
fn conv_params(name: &str, cout: usize, cin: usize, k: usize, gain: f64, bias: f64, rng: &mut ChaCha8Rng, out: &mut Vec<Param>) -> usize {
    let fan_in = (cin * k * k) as f64;
    let normal = Normal::new(0.0, gain * (2.0 / fan_in).sqrt()).expect("finite std");
    out.push(Param {
        name: format!("{name}.weight"),
        shape: vec![cout, cin, k, k],
        data: (0..cout * cin * k * k).map(|_| normal.sample(rng)).collect(),
    });
    out.push(Param {
        name: format!("{name}.bias"),
        shape: vec![cout],
        data: vec![bias; cout],
    });
    out.len() - 2
}

fn build_params(config: &RefinerConfig, encoder_channels: &[usize], seed: u64) -> (Vec<Param>, Layout) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = Vec::new();
    let stem = conv_params("stem", config.stem_channels, 3, 3, 1.0, HIDDEN_BIAS_INIT, &mut rng, &mut p);
    let mut enc = Vec::new();
    if config.backbone == Backbone::ToyCnn {
        let mut cin = config.stem_channels;
        for i in 0..config.feature_strides.len() {
            enc.push(conv_params(&format!("enc{i}"), config.encoder_channels, cin, 3, 1.0, HIDDEN_BIAS_INIT, &mut rng, &mut p));
            cin = config.encoder_channels;
        }
    }
    let mut gate = Vec::new();
    if config.gating_mode == GatingMode::SpatialAttention {
        for i in 0..config.feature_strides.len() {
            // mean, max, region; region starts at 1 so the gate initially follows the prior
            p.push(Param {
                name: format!("gate{i}.weight"),
                shape: vec![3],
                data: vec![0.0, 0.0, 1.0],
            });
            p.push(Param {
                name: format!("gate{i}.bias"),
                shape: vec![1],
                data: vec![0.0],
            });
            gate.push(p.len() - 2);
        }
    }
    let lat = encoder_channels
        .iter()
        .enumerate()
        .map(|(i, &c)| conv_params(&format!("lat{i}"), config.decoder_channels, c, 1, 1.0, HIDDEN_BIAS_INIT, &mut rng, &mut p))
        .collect();
    let fuse = conv_params("fuse", config.decoder_channels, config.decoder_channels, 3, 1.0, HIDDEN_BIAS_INIT, &mut rng, &mut p);
    // small head so the untrained model starts near p = 0.5 everywhere
    let head = conv_params("head", 1, config.decoder_channels + config.stem_channels, 3, 0.1, 0.0, &mut rng, &mut p);
    (
        p,
        Layout {
            stem,
            enc,
            gate,
            lat,
            fuse,
            head,
        },
    )
}

/// Multiply gate or learned spatial attention applied to one pyramid level.
#[derive(Clone, Debug)]
struct GateCache {
    region: Vec<f64>,
    /// Attention map, or `None` in multiply mode.
    attention: Option<Vec<f64>>,
    argmax: Vec<usize>,
    mean: Vec<f64>,
    max: Vec<f64>,
}

fn gate_level(feat: &Tensor, region: Vec<f64>, mode: GatingMode, gate: Option<(&[f64], f64)>) -> (Tensor, GateCache) {
    let hw = feat.hw();
    match mode {
        GatingMode::Multiply => {
            let mut out = feat.clone();
            for k in 0..feat.c {
                out.plane_mut(k).iter_mut().zip(&region).for_each(|(v, m)| *v *= m);
            }
            (
                out,
                GateCache {
                    region,
                    attention: None,
                    argmax: Vec::new(),
                    mean: Vec::new(),
                    max: Vec::new(),
                },
            )
        }
        GatingMode::SpatialAttention => {
            let (wt, b) = gate.expect("attention parameters");
            let mut mean = vec![0.0; hw];
            let mut max = vec![f64::NEG_INFINITY; hw];
            let mut argmax = vec![0usize; hw];
            for k in 0..feat.c {
                for (i, &v) in feat.plane(k).iter().enumerate() {
                    mean[i] += v;
                    if v > max[i] {
                        max[i] = v;
                        argmax[i] = k;
                    }
                }
            }
            mean.iter_mut().for_each(|m| *m /= feat.c as f64);
            let att: Vec<f64> = (0..hw)
                .map(|i| sigmoid(wt[0] * mean[i] + wt[1] * max[i] + wt[2] * region[i] + b))
                .collect();
            let mut out = feat.clone();
            for k in 0..feat.c {
                out.plane_mut(k).iter_mut().zip(&att).for_each(|(v, a)| *v *= a);
            }
            (
                out,
                GateCache {
                    region,
                    attention: Some(att),
                    argmax,
                    mean,
                    max,
                },
            )
        }
    }
}

/// Returns the feature gradient; accumulates attention parameter gradients into `dgate`.
fn gate_level_backward(feat: &Tensor, cache: &GateCache, dy: &Tensor, gate: Option<(&[f64], &mut [f64], &mut [f64])>) -> Tensor {
    let hw = feat.hw();
    let mut dx = dy.clone();
    match &cache.attention {
        None => {
            for k in 0..feat.c {
                dx.plane_mut(k).iter_mut().zip(&cache.region).for_each(|(g, m)| *g *= m);
            }
        }
        Some(att) => {
            let (wt, dw, db) = gate.expect("attention parameters");
            let mut da = vec![0.0; hw];
            for k in 0..feat.c {
                for (i, (&g, &x)) in dy.plane(k).iter().zip(feat.plane(k)).enumerate() {
                    da[i] += g * x;
                }
            }
            for k in 0..feat.c {
                dx.plane_mut(k).iter_mut().zip(att).for_each(|(g, a)| *g *= a);
            }
            let inv_c = 1.0 / feat.c as f64;
            for i in 0..hw {
                let dpre = da[i] * att[i] * (1.0 - att[i]);
                dw[0] += dpre * cache.mean[i];
                dw[1] += dpre * cache.max[i];
                dw[2] += dpre * cache.region[i];
                db[0] += dpre;
                for k in 0..feat.c {
                    dx.data[k * hw + i] += dpre * wt[0] * inv_c;
                }
                dx.data[cache.argmax[i] * hw + i] += dpre * wt[1];
            }
        }
    }
    dx
}

/// Applies the region gate to every pyramid level. Features for stride `s` must be
/// `input / s` on a side where `input` is the region's size.
pub fn gate_features(
    features: &[Tensor],
    region: &BinaryMask,
    strides: &[usize],
    mode: GatingMode,
    attention: Option<&[([f64; 3], f64)]>,
) -> Result<Vec<Tensor>> {
    if features.len() != strides.len() {
        return Err(RefinerError::InvalidConfig(format!(
            "{} feature maps for {} strides",
            features.len(),
            strides.len()
        )));
    }
    features
        .iter()
        .zip(strides)
        .enumerate()
        .map(|(i, (f, &s))| {
            let m = region.downsample(s)?;
            if m.dims() != (f.h, f.w) {
                return Err(RefinerError::DimMismatch {
                    expected: m.dims(),
                    actual: (f.h, f.w),
                });
            }
            let g = attention.map(|a| (&a[i].0[..], a[i].1));
            Ok(gate_level(f, m.to_f64(), mode, g).0)
        })
        .collect()
}

/// Intermediate values kept for the backward pass.
#[derive(Clone, Debug)]
pub struct Forward {
    input: Tensor,
    stem: Tensor,
    pooled: Vec<Tensor>,
    enc: Vec<Tensor>,
    gates: Vec<GateCache>,
    gated: Vec<Tensor>,
    lat: Vec<Tensor>,
    fsum: Tensor,
    fused: Tensor,
    cat: Tensor,
    /// Per-pixel logits at input resolution.
    pub logits: Vec<f64>,
    /// Region at input resolution.
    pub region: BinaryMask,
}

impl Forward {
    pub fn gated_features(&self) -> &[Tensor] {
        &self.gated
    }

    pub fn encoder_features(&self) -> &[Tensor] {
        &self.enc
    }
}

/// Refined pseudo-mask and the probabilities it came from.
#[derive(Clone, Debug, PartialEq)]
pub struct RefinerOutput {
    /// Row-major probabilities at `input_size x input_size`.
    pub probability_map: Vec<f64>,
    pub input_size: usize,
    /// Mask at the caller's image dimensions.
    pub refined_mask: BinaryMask,
}

/// One training triple already resampled to the model's input size.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSample {
    pub image: Tensor,
    pub region: BinaryMask,
    pub target: Vec<f64>,
}

impl TrainSample {
    pub fn prepare(image: &RasterImage, region: &BinaryMask, target: &BinaryMask, input_size: usize) -> Result<Self> {
        for m in [region, target] {
            if m.dims() != image.dims() {
                return Err(RefinerError::DimMismatch {
                    expected: image.dims(),
                    actual: m.dims(),
                });
            }
        }
        Ok(Self {
            image: image_tensor(image, input_size)?,
            region: region.resize_nearest(input_size, input_size),
            target: target.resize_bilinear(input_size, input_size).to_f64(),
        })
    }
}

/// RGB tensor at `size x size`, bilinear resampled; gray images are replicated.
pub fn image_tensor(image: &RasterImage, size: usize) -> Result<Tensor> {
    let rgb = image.to_rgb();
    let resized = if rgb.dims() == (size, size) {
        rgb
    } else {
        rgb.resize_bilinear(size, size)?
    };
    let hw = size * size;
    let mut data = vec![0.0; 3 * hw];
    for (i, px) in resized.data().chunks_exact(3).enumerate() {
        for k in 0..3 {
            data[k * hw + i] = px[k] as f64;
        }
    }
    Ok(Tensor::from_vec(3, size, size, data))
}

#[derive(Clone)]
pub struct Refiner {
    config: RefinerConfig,
    params: Vec<Param>,
    layout: Layout,
    encoder: Option<Arc<dyn PyramidEncoder>>,
}

impl std::fmt::Debug for Refiner {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Refiner")
            .field("config", &self.config)
            .field("parameters", &self.parameter_count())
            .field("encoder", &self.encoder.is_some())
            .finish()
    }
}

impl Refiner {
    /// Toy-backbone model with seeded He-normal initialization.
    pub fn new(config: RefinerConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        if config.backbone != Backbone::ToyCnn {
            return Err(RefinerError::InvalidConfig(
                "pluggable backbones are built with Refiner::with_encoder".into(),
            ));
        }
        let channels = vec![config.encoder_channels; config.feature_strides.len()];
        let (params, layout) = build_params(&config, &channels, seed);
        Ok(Self {
            config,
            params,
            layout,
            encoder: None,
        })
    }

    /// Model on a frozen external encoder; only the stem, gates and decoder are trained.
    pub fn with_encoder(mut config: RefinerConfig, encoder: Arc<dyn PyramidEncoder>, seed: u64) -> Result<Self> {
        config.backbone = Backbone::PluggablePyramid;
        config.feature_strides = encoder.strides();
        config.validate()?;
        let (params, layout) = build_params(&config, &encoder.channels(), seed);
        Ok(Self {
            config,
            params,
            layout,
            encoder: Some(encoder),
        })
    }

    /// Rebuilds a model from stored parameters, checking names and shapes.
    pub fn from_params(config: RefinerConfig, params: Vec<Param>, encoder: Option<Arc<dyn PyramidEncoder>>) -> Result<Self> {
        config.validate()?;
        let channels = match (&config.backbone, &encoder) {
            (Backbone::ToyCnn, _) => vec![config.encoder_channels; config.feature_strides.len()],
            (Backbone::PluggablePyramid, Some(e)) => e.channels(),
            (Backbone::PluggablePyramid, None) => {
                return Err(RefinerError::WeightsMissing("pyramid encoder not attached".into()))
            }
        };
        let (template, layout) = build_params(&config, &channels, 0);
        if template.len() != params.len() {
            return Err(RefinerError::Checkpoint(format!(
                "expected {} parameter tensors, found {}",
                template.len(),
                params.len()
            )));
        }
        for (t, p) in template.iter().zip(&params) {
            if t.name != p.name || t.shape != p.shape || t.data.len() != p.data.len() {
                return Err(RefinerError::Checkpoint(format!("parameter {} does not match {}", p.name, t.name)));
            }
        }
        Ok(Self {
            config,
            params,
            layout,
            encoder,
        })
    }

    pub fn config(&self) -> &RefinerConfig {
        &self.config
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    pub fn zero_grads(&self) -> Grads {
        self.params.iter().map(|p| vec![0.0; p.data.len()]).collect()
    }

    fn w(&self, idx: usize) -> (&[f64], &[f64]) {
        (&self.params[idx].data, &self.params[idx + 1].data)
    }

    fn conv(&self, x: &Tensor, idx: usize) -> Tensor {
        let shape = &self.params[idx].shape;
        let (w, b) = self.w(idx);
        conv2d(x, w, b, shape[0], shape[2])
    }

    fn conv_back(&self, x: &Tensor, idx: usize, dy: &Tensor, grads: &mut Grads, need_dx: bool) -> Option<Tensor> {
        let k = self.params[idx].shape[2];
        let (dw, rest) = grads[idx..].split_at_mut(1);
        conv2d_backward(x, &self.params[idx].data, k, dy, &mut dw[0], &mut rest[0], need_dx)
    }

    fn attention(&self, i: usize) -> Option<(&[f64], f64)> {
        self.layout.gate.get(i).map(|&g| (&self.params[g].data[..], self.params[g + 1].data[0]))
    }

    /// Forward pass on an input-size tensor and input-size region.
    pub fn forward(&self, x: &Tensor, region: &BinaryMask) -> Result<Forward> {
        let s = self.config.input_size;
        if (x.c, x.h, x.w) != (3, s, s) {
            return Err(RefinerError::DimMismatch {
                expected: (s, s),
                actual: (x.h, x.w),
            });
        }
        if region.dims() != (s, s) {
            return Err(RefinerError::DimMismatch {
                expected: (s, s),
                actual: region.dims(),
            });
        }
        let stem = relu(&self.conv(x, self.layout.stem));
        let strides = &self.config.feature_strides;
        let mut pooled = Vec::new();
        let mut enc = Vec::new();
        match &self.encoder {
            None => {
                let mut prev_stride = 1;
                for (i, &st) in strides.iter().enumerate() {
                    let src = enc.last().unwrap_or(&stem);
                    let p = avg_pool(src, st / prev_stride);
                    let e = relu(&self.conv(&p, self.layout.enc[i]));
                    pooled.push(p);
                    enc.push(e);
                    prev_stride = st;
                }
            }
            Some(encoder) => {
                enc = encoder.encode(x)?;
                for (f, &st) in enc.iter().zip(strides) {
                    if (f.h, f.w) != (s / st, s / st) {
                        return Err(RefinerError::DimMismatch {
                            expected: (s / st, s / st),
                            actual: (f.h, f.w),
                        });
                    }
                }
            }
        }
        let mut gates = Vec::new();
        let mut gated = Vec::new();
        for (i, (f, &st)) in enc.iter().zip(strides).enumerate() {
            let m = region.downsample(st)?.to_f64();
            let (g, cache) = gate_level(f, m, self.config.gating_mode, self.attention(i));
            gates.push(cache);
            gated.push(g);
        }
        let fine = s / strides[0];
        let mut fsum_pre = Tensor::zeros(self.config.decoder_channels, fine, fine);
        let mut lat = Vec::new();
        for (i, g) in gated.iter().enumerate() {
            let l = self.conv(g, self.layout.lat[i]);
            fsum_pre.add_assign(&upsample(&l, fine, fine));
            lat.push(l);
        }
        let fsum = relu(&fsum_pre);
        let fused = relu(&self.conv(&fsum, self.layout.fuse));
        let cat = Tensor::concat(&upsample(&fused, s, s), &stem);
        let logits = self.conv(&cat, self.layout.head).data;
        Ok(Forward {
            input: x.clone(),
            stem,
            pooled,
            enc,
            gates,
            gated,
            lat,
            fsum,
            fused,
            cat,
            logits,
            region: region.clone(),
        })
    }

    /// Output probabilities at input resolution; forced to 0 outside the region in
    /// multiply mode.
    pub fn probabilities(&self, fwd: &Forward) -> Vec<f64> {
        let gate = self.config.gating_mode == GatingMode::Multiply;
        fwd.logits
            .iter()
            .zip(fwd.region.data())
            .map(|(&z, &m)| if gate && !m { 0.0 } else { sigmoid(z) })
            .collect()
    }

    /// Backpropagates a logit gradient into parameter gradients.
    pub fn backward(&self, fwd: &Forward, dlogits: &[f64]) -> Grads {
        let s = self.config.input_size;
        let mut grads = self.zero_grads();
        let dz = Tensor::from_vec(1, s, s, dlogits.to_vec());
        let dcat = self.conv_back(&fwd.cat, self.layout.head, &dz, &mut grads, true).expect("dx");
        let (dup, mut dstem) = dcat.split_channels(self.config.decoder_channels);
        let fine = fwd.fused.h;
        let dfused = relu_backward(&fwd.fused, &upsample_backward(&dup, fine, fine));
        let dfsum = self.conv_back(&fwd.fsum, self.layout.fuse, &dfused, &mut grads, true).expect("dx");
        let dfsum_pre = relu_backward(&fwd.fsum, &dfsum);

        let levels = fwd.enc.len();
        let mut denc: Vec<Tensor> = Vec::with_capacity(levels);
        for i in 0..levels {
            let l = &fwd.lat[i];
            let dl = upsample_backward(&dfsum_pre, l.h, l.w);
            let dg = self.conv_back(&fwd.gated[i], self.layout.lat[i], &dl, &mut grads, true).expect("dx");
            let gate = self.layout.gate.get(i).map(|&g| g);
            let de = match gate {
                Some(g) => {
                    let (head, tail) = grads.split_at_mut(g + 1);
                    gate_level_backward(
                        &fwd.enc[i],
                        &fwd.gates[i],
                        &dg,
                        Some((&self.params[g].data, &mut head[g], &mut tail[0])),
                    )
                }
                None => gate_level_backward(&fwd.enc[i], &fwd.gates[i], &dg, None),
            };
            denc.push(de);
        }

        if self.encoder.is_none() {
            let strides = &self.config.feature_strides;
            // walk the encoder top-down, carrying the gradient into the level below
            let mut carry: Option<Tensor> = None;
            for i in (0..levels).rev() {
                let mut de = denc[i].clone();
                if let Some(c) = carry.take() {
                    de.add_assign(&c);
                }
                let dpre = relu_backward(&fwd.enc[i], &de);
                let dp = self.conv_back(&fwd.pooled[i], self.layout.enc[i], &dpre, &mut grads, true).expect("dx");
                let factor = strides[i] / if i == 0 { 1 } else { strides[i - 1] };
                let dsrc = avg_pool_backward(&dp, factor);
                if i == 0 {
                    dstem.add_assign(&dsrc);
                } else {
                    carry = Some(dsrc);
                }
            }
        }
        let dstem_pre = relu_backward(&fwd.stem, &dstem);
        self.conv_back(&fwd.input, self.layout.stem, &dstem_pre, &mut grads, false);
        grads
    }

    /// Structure loss of one sample and its parameter gradients.
    pub fn loss_and_grad(&self, sample: &TrainSample) -> Result<(LossParts, Grads)> {
        let fwd = self.forward(&sample.image, &sample.region)?;
        let (parts, dlogits) = self.loss_of(&fwd, &sample.target);
        Ok((parts, self.backward(&fwd, &dlogits)))
    }

    pub fn loss(&self, sample: &TrainSample) -> Result<LossParts> {
        let fwd = self.forward(&sample.image, &sample.region)?;
        Ok(self.loss_of(&fwd, &sample.target).0)
    }

    fn loss_of(&self, fwd: &Forward, target: &[f64]) -> (LossParts, Vec<f64>) {
        let s = self.config.input_size;
        let gate = (self.config.gating_mode == GatingMode::Multiply).then(|| fwd.region.data());
        structure_loss(&fwd.logits, target, gate, s, s, self.config.loss_kernel)
    }

    /// Binarized prediction at input resolution.
    pub fn predict_input(&self, sample_image: &Tensor, region: &BinaryMask) -> Result<BinaryMask> {
        let fwd = self.forward(sample_image, region)?;
        let s = self.config.input_size;
        Ok(BinaryMask::from_threshold(s, s, &self.probabilities(&fwd), self.config.binarize_threshold)?)
    }

    /// Refines the pseudo-mask of `image` inside `region` (both at the caller's size).
    ///
    /// The probability map is bilinearly resampled back to the caller's size before
    /// thresholding; in multiply mode the result is intersected with `region` there too.
    pub fn refine(&self, image: &RasterImage, region: &BinaryMask) -> Result<RefinerOutput> {
        if region.dims() != image.dims() {
            return Err(RefinerError::DimMismatch {
                expected: image.dims(),
                actual: region.dims(),
            });
        }
        let s = self.config.input_size;
        let x = image_tensor(image, s)?;
        let fwd = self.forward(&x, &region.resize_nearest(s, s))?;
        let prob = self.probabilities(&fwd);
        let (h, w) = image.dims();
        let back = if (h, w) == (s, s) {
            prob.clone()
        } else {
            polypaug_core::resample::resize_plane(&prob, s, s, h, w)
        };
        let mut mask = BinaryMask::from_threshold(h, w, &back, self.config.binarize_threshold)?;
        if self.config.gating_mode == GatingMode::Multiply {
            mask = mask.intersection(region)?;
        }
        Ok(RefinerOutput {
            probability_map: prob,
            input_size: s,
            refined_mask: mask,
        })
    }

    /// Reads one parameter scalar by flat index over the parameter list.
    pub fn get_flat(&self, mut index: usize) -> f64 {
        for p in &self.params {
            if index < p.data.len() {
                return p.data[index];
            }
            index -= p.data.len();
        }
        panic!("parameter index out of range")
    }

    pub fn set_flat(&mut self, mut index: usize, value: f64) {
        for p in &mut self.params {
            if index < p.data.len() {
                p.data[index] = value;
                return;
            }
            index -= p.data.len();
        }
        panic!("parameter index out of range")
    }
}

/// Flat view of one gradient entry, matching [`Refiner::get_flat`].
pub fn grad_flat(grads: &Grads, mut index: usize) -> f64 {
    for g in grads {
        if index < g.len() {
            return g[index];
        }
        index -= g.len();
    }
    panic!("gradient index out of range")
}
