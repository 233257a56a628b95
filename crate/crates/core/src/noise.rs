//! Synthetic saliency-drift noise: randomly posed ellipses combined by
//! element-wise max, re-centered by a random crop/resize, blurred, and
//! injected into randomly selected feature channels.
//!
//! All randomness flows through explicit seeded states; the same seed and
//! dimensions reproduce a noise map bit-for-bit.

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::maps::{resize_map, SaliencyMap};
use crate::numeric::sin_cos;

/// Six-parameter description of one noise ellipse.
///
/// `center_x` indexes rows (height axis), `center_y` columns.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EllipseParams {
    pub center_x: f64,
    pub center_y: f64,
    pub major_a: f64,
    pub minor_b: f64,
    pub angle_alpha: f64,
    pub weight_w: f64,
}

/// A generated noise map together with the seed and parameters that
/// produced it.
#[derive(Debug, Clone)]
pub struct NoiseMap {
    pub map: SaliencyMap,
    pub seed: u64,
    pub ellipses: Vec<EllipseParams>,
    /// Square crop applied before resizing back: (top row, left col, side).
    pub crop: (usize, usize, usize),
}

/// How a noise map is combined with a selected feature channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseMode {
    /// `f <- f * S` (the default reading of masking).
    Multiply,
    /// `f <- f + S`.
    Add,
    /// `f <- (1 - S) * f + S * max(f)` with the channel max as the fill level.
    Blend,
}

impl Default for NoiseMode {
    fn default() -> Self {
        NoiseMode::Multiply
    }
}

/// Draw one ellipse: centers, angle and weight uniform; axes Gaussian with
/// mean half the image extent and sigma a sixth of it, clipped to the
/// half-extent.
pub fn sample_ellipse(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Result<EllipseParams> {
    if h < 2 || w < 2 {
        return Err(Error::invalid(format!("ellipse sampling needs dims >= 2, got {h}x{w}")));
    }
    let (hf, wf) = (h as f64, w as f64);
    let center_x = rng.gen_range(0.0..hf);
    let center_y = rng.gen_range(0.0..wf);
    let angle_alpha = rng.gen_range(0.0..std::f64::consts::TAU);
    let weight_w = rng.gen_range(0.0..=1.0);
    let max_side = hf.max(wf);
    let min_side = hf.min(wf);
    let major_a = Normal::new(max_side / 2.0, max_side / 6.0)
        .expect("valid normal")
        .sample(rng)
        .clamp(0.0, max_side / 2.0);
    let minor_b = Normal::new(min_side / 2.0, min_side / 6.0)
        .expect("valid normal")
        .sample(rng)
        .clamp(0.0, min_side / 2.0);
    Ok(EllipseParams { center_x, center_y, major_a, minor_b, angle_alpha, weight_w })
}

/// Rasterize one ellipse: pixels inside the rotated ellipse take the mask
/// weight, the rest 0. Degenerate axes yield the all-zero map.
pub fn render_ellipse(p: &EllipseParams, h: usize, w: usize) -> SaliencyMap {
    if p.major_a <= 0.0 || p.minor_b <= 0.0 || p.weight_w <= 0.0 {
        return SaliencyMap::zeros(h, w);
    }
    let (sin_a, cos_a) = sin_cos(p.angle_alpha);
    let weight = p.weight_w.clamp(0.0, 1.0);
    SaliencyMap::from_fn(h, w, |r, c| {
        let du = r as f64 - p.center_x;
        let dv = c as f64 - p.center_y;
        let u = du * cos_a + dv * sin_a;
        let v = -du * sin_a + dv * cos_a;
        let q = (u / p.major_a).powi(2) + (v / p.minor_b).powi(2);
        if q <= 1.0 {
            weight
        } else {
            0.0
        }
    })
}

/// Gaussian blur kernel size for an image: the closest odd integer to
/// `min(h, w) / 20`, never below 1 (1 means no blur).
pub fn blur_kernel_size(h: usize, w: usize) -> usize {
    let x = h.min(w) as f64 / 20.0;
    let k = 2 * (x / 2.0).floor() as usize + 1;
    k.max(1)
}

/// Separable Gaussian blur with replicate padding; sigma = kernel / 6.
fn gaussian_blur(map: &SaliencyMap, kernel: usize) -> SaliencyMap {
    if kernel <= 1 {
        return map.clone();
    }
    let half = (kernel / 2) as isize;
    let sigma = kernel as f64 / 6.0;
    let mut weights = Vec::with_capacity(kernel);
    for i in -half..=half {
        weights.push((-((i * i) as f64) / (2.0 * sigma * sigma)).exp());
    }
    let sum: f64 = weights.iter().sum();
    for wgt in &mut weights {
        *wgt /= sum;
    }
    let (h, w) = (map.height() as isize, map.width() as isize);
    // Horizontal pass.
    let mut tmp = vec![0.0f64; (h * w) as usize];
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0;
            for (k, wgt) in weights.iter().enumerate() {
                let cc = (c + k as isize - half).clamp(0, w - 1);
                acc += wgt * map.get(r as usize, cc as usize);
            }
            tmp[(r * w + c) as usize] = acc;
        }
    }
    // Vertical pass.
    SaliencyMap::from_fn(map.height(), map.width(), |r, c| {
        let mut acc = 0.0;
        for (k, wgt) in weights.iter().enumerate() {
            let rr = (r as isize + k as isize - half).clamp(0, h - 1);
            acc += wgt * tmp[(rr * w + c as isize) as usize];
        }
        acc
    })
}

/// Generate one noise map, drawing a fresh sub-seed from `rng` so the
/// result can be reproduced later from [`NoiseMap::seed`] alone.
pub fn generate_noise_map(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Result<NoiseMap> {
    let seed = rng.gen::<u64>();
    generate_noise_map_from_seed(seed, h, w)
}

/// Deterministic noise-map generation from an explicit seed.
///
/// Draw order: ellipse count k in {3,4,5}; k ellipses; crop side uniform in
/// [min/2, min]; crop top-left uniform among placements fully inside; then
/// resize back and Gaussian-blur with the [`blur_kernel_size`] kernel.
pub fn generate_noise_map_from_seed(seed: u64, h: usize, w: usize) -> Result<NoiseMap> {
    if h < 8 || w < 8 {
        return Err(Error::invalid(format!("noise map dims must be >= 8, got {h}x{w}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = rng.gen_range(3..=5usize);
    let mut ellipses = Vec::with_capacity(k);
    let mut combined = SaliencyMap::zeros(h, w);
    for _ in 0..k {
        let params = sample_ellipse(&mut rng, h, w)?;
        let rendered = render_ellipse(&params, h, w);
        combined = SaliencyMap::from_fn(h, w, |r, c| combined.get(r, c).max(rendered.get(r, c)));
        ellipses.push(params);
    }

    let min_side = h.min(w);
    let side_f = rng.gen_range(min_side as f64 / 2.0..=min_side as f64);
    let side = (side_f.round() as usize).clamp(1, min_side);
    let top = rng.gen_range(0..=h - side);
    let left = rng.gen_range(0..=w - side);
    let cropped =
        SaliencyMap::from_fn(side, side, |r, c| combined.get(top + r, left + c));
    let resized = resize_map(&cropped, h, w);

    let kernel = blur_kernel_size(h, w);
    let blurred = gaussian_blur(&resized, kernel);
    let map = SaliencyMap::from_fn(h, w, |r, c| blurred.get(r, c).clamp(0.0, 1.0));
    Ok(NoiseMap { map, seed, ellipses, crop: (top, left, side) })
}

/// Source of per-channel noise maps; swapped out in tests.
pub trait NoiseSource {
    fn next_map(&mut self, rng: &mut ChaCha8Rng, h: usize, w: usize) -> Result<SaliencyMap>;
}

/// Default source backed by [`generate_noise_map`]. Feature stages smaller
/// than the generator's 8x8 minimum are served by generating at the minimum
/// size and resizing down (the per-stage placement path).
pub struct GeneratedNoise;

impl NoiseSource for GeneratedNoise {
    fn next_map(&mut self, rng: &mut ChaCha8Rng, h: usize, w: usize) -> Result<SaliencyMap> {
        let gh = h.max(8);
        let gw = w.max(8);
        let noise = generate_noise_map(rng, gh, gw)?;
        if gh == h && gw == w {
            Ok(noise.map)
        } else {
            Ok(resize_map(&noise.map, h, w))
        }
    }
}

/// Outcome of one injection call: the modified block plus the noise map
/// applied to each selected channel (needed for backward passes).
pub struct Injection {
    pub features: Array3<f64>,
    pub applied: Vec<(usize, SaliencyMap)>,
    pub mode: NoiseMode,
}

/// Mask `ceil(channel_fraction * C)` randomly selected channels of a
/// `C x h x w` feature block with independent noise maps. Unselected
/// channels pass through bit-identically.
pub fn inject_noise(
    features: &Array3<f64>,
    rng: &mut ChaCha8Rng,
    channel_fraction: f64,
    mode: NoiseMode,
) -> Result<Array3<f64>> {
    inject_noise_with(features, rng, channel_fraction, mode, &mut GeneratedNoise)
        .map(|inj| inj.features)
}

/// As [`inject_noise`] but with an explicit noise source and full details
/// of what was applied.
pub fn inject_noise_with(
    features: &Array3<f64>,
    rng: &mut ChaCha8Rng,
    channel_fraction: f64,
    mode: NoiseMode,
    source: &mut dyn NoiseSource,
) -> Result<Injection> {
    if !(channel_fraction > 0.0 && channel_fraction <= 1.0) {
        return Err(Error::invalid(format!(
            "channel_fraction must lie in (0, 1], got {channel_fraction}"
        )));
    }
    let (channels, h, w) = features.dim();
    if channels == 0 {
        return Err(Error::invalid("feature block has no channels"));
    }
    let n_select = ((channel_fraction * channels as f64).ceil() as usize).clamp(1, channels);
    let mut selected: Vec<usize> =
        rand::seq::index::sample(rng, channels, n_select).into_iter().collect();
    selected.sort_unstable();

    let mut out = features.clone();
    let mut applied = Vec::with_capacity(n_select);
    for &ch in &selected {
        let noise = source.next_map(rng, h, w)?;
        {
            let mut plane = out.index_axis_mut(ndarray::Axis(0), ch);
            match mode {
                NoiseMode::Multiply => {
                    for r in 0..h {
                        for c in 0..w {
                            plane[[r, c]] *= noise.get(r, c);
                        }
                    }
                }
                NoiseMode::Add => {
                    for r in 0..h {
                        for c in 0..w {
                            plane[[r, c]] += noise.get(r, c);
                        }
                    }
                }
                NoiseMode::Blend => {
                    let fill = plane.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    for r in 0..h {
                        for c in 0..w {
                            let s = noise.get(r, c);
                            plane[[r, c]] = (1.0 - s) * plane[[r, c]] + s * fill;
                        }
                    }
                }
            }
        }
        applied.push((ch, noise));
    }
    Ok(Injection { features: out, applied, mode })
}
