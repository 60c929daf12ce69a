use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::imaging::{BinaryMask, RasterImage};
use crate::seed;

use super::{InpaintRequest, DEFAULT_NOISE_STRENGTH, DEFAULT_REGION_DILATION, DEFAULT_SAMPLING_STEPS};

/// A lesion shape to inpaint, optionally with its cropped appearance.
#[derive(Clone, Debug)]
pub struct Condition {
    pub id: String,
    pub mask: Arc<BinaryMask>,
    pub surface: Option<Arc<RasterImage>>,
}

/// A negative image and the dataset it came from.
#[derive(Clone, Debug)]
pub struct Background {
    pub id: String,
    pub dataset_id: String,
    pub image: Arc<RasterImage>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlanOptions {
    pub region_dilation: usize,
    pub noise_strength: f64,
    pub sampling_steps: u32,
}

impl Default for PlanOptions {
    fn default() -> Self {
        Self {
            region_dilation: DEFAULT_REGION_DILATION,
            noise_strength: DEFAULT_NOISE_STRENGTH,
            sampling_steps: DEFAULT_SAMPLING_STEPS,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PlannedRequest {
    pub condition_id: String,
    pub background_id: String,
    pub dataset_id: String,
    pub request: InpaintRequest,
}

/// Pairs every condition with `backgrounds_per_condition` backgrounds.
///
/// Background buckets (one per dataset, in id order) are visited round-robin, so the
/// backgrounds for one condition are spread evenly over datasets. Inside a bucket the
/// backgrounds are walked in a seeded order with a cursor that persists across
/// conditions: one condition never sees the same background twice, and usage is even
/// across the bucket. Conditions are resized (nearest) to a background's frame when the
/// dimensions differ, and the inpaint region is the condition dilated by a disk.
pub fn plan_generation(
    conditions: &[Condition],
    backgrounds: &[Background],
    backgrounds_per_condition: usize,
    seed: u64,
    options: PlanOptions,
) -> Result<Vec<PlannedRequest>> {
    if conditions.is_empty() {
        return Err(Error::EmptyInput("condition pool is empty"));
    }
    if backgrounds.is_empty() {
        return Err(Error::EmptyInput("background pool is empty"));
    }
    let mut buckets: BTreeMap<&str, Vec<&Background>> = BTreeMap::new();
    for b in backgrounds {
        buckets.entry(&b.dataset_id).or_default().push(b);
    }
    let n_buckets = buckets.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut orders: Vec<(&str, Vec<&Background>)> = buckets
        .into_iter()
        .map(|(id, mut bucket)| {
            bucket.sort_by(|a, b| a.id.cmp(&b.id));
            bucket.shuffle(&mut rng);
            (id, bucket)
        })
        .collect();
    // how many backgrounds each bucket contributes per condition
    let shares: Vec<usize> = (0..n_buckets)
        .map(|b| (0..backgrounds_per_condition).filter(|j| j % n_buckets == b).count())
        .collect();
    for ((id, bucket), &share) in orders.iter().zip(&shares) {
        if share > bucket.len() {
            return Err(Error::PoolExhausted {
                bucket: id.to_string(),
                available: bucket.len(),
                requested: share,
            });
        }
    }

    let mut cursors = vec![0usize; n_buckets];
    let mut masks: HashMap<(usize, (usize, usize)), (Arc<BinaryMask>, Arc<BinaryMask>)> = HashMap::new();
    let mut out = Vec::with_capacity(conditions.len() * backgrounds_per_condition);
    for (ci, cond) in conditions.iter().enumerate() {
        for j in 0..backgrounds_per_condition {
            let b = j % n_buckets;
            let (_, bucket) = &mut orders[b];
            let bg = bucket[(cursors[b] + j / n_buckets) % bucket.len()];
            let dims = bg.image.dims();
            let (region, condition) = masks
                .entry((ci, dims))
                .or_insert_with(|| {
                    let m2 = if cond.mask.dims() == dims {
                        cond.mask.clone()
                    } else {
                        Arc::new(cond.mask.resize_nearest(dims.0, dims.1))
                    };
                    (Arc::new(m2.dilate(options.region_dilation)), m2)
                })
                .clone();
            let index = out.len() as u64;
            out.push(PlannedRequest {
                condition_id: cond.id.clone(),
                background_id: bg.id.clone(),
                dataset_id: bg.dataset_id.clone(),
                request: InpaintRequest {
                    background: bg.image.clone(),
                    inpaint_region: region,
                    boundary_condition: condition,
                    surface_reference: cond.surface.clone(),
                    noise_strength: options.noise_strength,
                    sampling_steps: options.sampling_steps,
                    seed: seed::derive(seed, index),
                },
            });
        }
        for (b, &share) in shares.iter().enumerate() {
            cursors[b] += share;
        }
    }
    Ok(out)
}
