//! Student saliency maps from intermediate features and gradients.
//!
//! Grad-CAM is the default; CAM and SmoothGrad cover the ablation variants.
//! All methods min-max normalize their raw response so downstream losses can
//! assume values in `[0, 1 - epsilon)`.

use ndarray::{Array3, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::maps::{minmax_normalize_raw, SaliencyMap};

pub const DEFAULT_EPSILON: f64 = 1e-6;

/// Features and matching gradients of one stage for one sample, with the
/// class whose score the gradients differentiate.
#[derive(Debug, Clone)]
pub struct AttributionRequest {
    pub features: Array3<f64>,
    pub gradients: Array3<f64>,
    pub target_class: usize,
    pub epsilon: f64,
}

impl AttributionRequest {
    pub fn new(features: Array3<f64>, gradients: Array3<f64>, target_class: usize) -> Self {
        Self { features, gradients, target_class, epsilon: DEFAULT_EPSILON }
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }
}

/// Cached intermediates of a Grad-CAM forward, enough to propagate a map
/// gradient back to the stage features with the channel weights and the
/// normalization range treated as constants.
#[derive(Debug, Clone)]
pub struct GradCamCache {
    pub alphas: Vec<f64>,
    raw: Vec<f64>,
    min: f64,
    max: f64,
    epsilon: f64,
    dims: (usize, usize, usize),
}

/// Grad-CAM: weight each feature channel by the spatial mean of its
/// gradient, ReLU the weighted sum, min-max normalize.
pub fn grad_cam(req: &AttributionRequest) -> Result<SaliencyMap> {
    grad_cam_with_cache(req).map(|(map, _)| map)
}

pub fn grad_cam_with_cache(req: &AttributionRequest) -> Result<(SaliencyMap, GradCamCache)> {
    if req.features.dim() != req.gradients.dim() {
        return Err(Error::invalid(format!(
            "feature dims {:?} do not match gradient dims {:?}",
            req.features.dim(),
            req.gradients.dim()
        )));
    }
    let alphas: Vec<f64> =
        req.gradients.axis_iter(Axis(0)).map(|g| g.mean().unwrap_or(0.0)).collect();
    weighted_relu_map(&req.features, &alphas, req.epsilon)
}

/// CAM: like Grad-CAM but with externally supplied per-channel weights
/// (classically the classifier weights of the target class).
pub fn cam(features: &Array3<f64>, class_weights: &[f64], epsilon: f64) -> Result<SaliencyMap> {
    if class_weights.len() != features.dim().0 {
        return Err(Error::invalid(format!(
            "got {} weights for {} channels",
            class_weights.len(),
            features.dim().0
        )));
    }
    weighted_relu_map(features, class_weights, epsilon).map(|(map, _)| map)
}

fn weighted_relu_map(
    features: &Array3<f64>,
    weights: &[f64],
    epsilon: f64,
) -> Result<(SaliencyMap, GradCamCache)> {
    let (channels, h, w) = features.dim();
    let mut raw = vec![0.0f64; h * w];
    for (c, plane) in features.axis_iter(Axis(0)).enumerate() {
        let alpha = weights[c];
        if alpha == 0.0 {
            continue;
        }
        for r in 0..h {
            for k in 0..w {
                raw[r * w + k] += alpha * plane[[r, k]];
            }
        }
    }
    for v in &mut raw {
        *v = v.max(0.0);
    }
    let min = raw.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let map = minmax_normalize_raw(h, w, &raw, epsilon);
    let cache = GradCamCache {
        alphas: weights.to_vec(),
        raw,
        min,
        max,
        epsilon,
        dims: (channels, h, w),
    };
    Ok((map, cache))
}

/// Vector-Jacobian product of the Grad-CAM map w.r.t. the stage features,
/// holding channel weights and the normalization range fixed. `map_grad` is
/// dLoss/dS in row-major order.
pub fn grad_cam_vjp(cache: &GradCamCache, map_grad: &[f64]) -> Array3<f64> {
    let (channels, h, w) = cache.dims;
    assert_eq!(map_grad.len(), h * w);
    let range = cache.max - cache.min;
    let mut out = Array3::<f64>::zeros((channels, h, w));
    if range <= 0.0 {
        return out; // all-equal raw map normalized to zero; no gradient flows
    }
    let top = 1.0 - cache.epsilon;
    for r in 0..h {
        for k in 0..w {
            let idx = r * w + k;
            let raw = cache.raw[idx];
            // ReLU gate and clamp gate.
            if raw <= 0.0 {
                continue;
            }
            let normalized = (raw - cache.min) / range;
            if normalized >= top || normalized <= 0.0 {
                continue;
            }
            let g = map_grad[idx] / range;
            if g == 0.0 {
                continue;
            }
            for (c, &alpha) in cache.alphas.iter().enumerate() {
                if alpha != 0.0 {
                    out[[c, r, k]] += g * alpha;
                }
            }
        }
    }
    out
}

/// Anything that can produce the gradient of a class score w.r.t. the
/// input image (channels x H x W).
pub trait InputGradient {
    fn input_gradient(&self, image: &Array3<f64>, target_class: usize) -> Result<Array3<f64>>;
}

/// SmoothGrad: average absolute input gradients over Gaussian-perturbed
/// copies of the image, channel-max to one plane, min-max normalize.
/// `sigma = 0` reduces to a single plain gradient map.
pub fn smooth_grad(
    model: &dyn InputGradient,
    image: &Array3<f64>,
    target_class: usize,
    n_samples: usize,
    sigma: f64,
    rng: &mut ChaCha8Rng,
    epsilon: f64,
) -> Result<SaliencyMap> {
    if n_samples < 1 {
        return Err(Error::invalid("smooth_grad needs n_samples >= 1"));
    }
    if sigma < 0.0 {
        return Err(Error::invalid("smooth_grad sigma must be >= 0"));
    }
    let (channels, h, w) = image.dim();
    let mut acc = Array3::<f64>::zeros((channels, h, w));
    if sigma == 0.0 {
        acc = image_abs_grad(model, image, target_class)?;
    } else {
        let normal = Normal::new(0.0, sigma).expect("valid normal");
        for _ in 0..n_samples {
            let mut perturbed = image.clone();
            for v in perturbed.iter_mut() {
                *v += normal.sample(rng);
            }
            acc += &image_abs_grad(model, &perturbed, target_class)?;
        }
        acc /= n_samples as f64;
    }
    // Channel max collapses to a single plane.
    let mut raw = vec![0.0f64; h * w];
    for plane in acc.axis_iter(Axis(0)) {
        for r in 0..h {
            for c in 0..w {
                raw[r * w + c] = raw[r * w + c].max(plane[[r, c]]);
            }
        }
    }
    Ok(minmax_normalize_raw(h, w, &raw, epsilon))
}

fn image_abs_grad(
    model: &dyn InputGradient,
    image: &Array3<f64>,
    target_class: usize,
) -> Result<Array3<f64>> {
    let mut g = model.input_gradient(image, target_class)?;
    g.mapv_inplace(f64::abs);
    Ok(g)
}

/// Convenience used by smoke tests: deterministic random request.
pub fn random_request(rng: &mut ChaCha8Rng, channels: usize, h: usize, w: usize) -> AttributionRequest {
    let features = Array3::from_shape_fn((channels, h, w), |_| rng.gen_range(-1.0..1.0));
    let gradients = Array3::from_shape_fn((channels, h, w), |_| rng.gen_range(-1.0..1.0));
    AttributionRequest::new(features, gradients, 0)
}
