//! The neural components: a small staged convolutional backbone, a growing
//! bias-free classifier head, and a low-level decoder that predicts
//! saliency/boundary planes at input resolution.
//!
//! Four stride-2 blocks; blocks 2-4 expose their post-ReLU outputs as the
//! three supervision stages. Forward passes return explicit caches so the
//! engine can run several differently-shaped backward passes per batch
//! (training gradients, stage attribution gradients, input gradients).

pub mod layers;
pub mod optim;

use ndarray::{Array2, Array3, Array4, Axis};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::maps::SaliencyMap;
use crate::noise::{inject_noise_with, NoiseMode, NoiseSource};
use layers::{
    bilinear_resize, bilinear_resize_backward, global_avg_pool, global_avg_pool_backward, relu,
    relu_backward, sigmoid, sigmoid_backward, Conv2d, ConvCache, Linear, ParamGrad,
};

pub const EMBED_DIM: usize = 64;
pub const STAGE_CHANNELS: [usize; 3] = [32, 64, 64];

/// Four stride-2 conv blocks; the stem halves resolution, each later block
/// halves again, so stages live at 1/4, 1/8 and 1/16 of the input.
#[derive(Debug, Clone)]
pub struct ReferenceBackbone {
    stem: Conv2d,
    block1: Conv2d,
    block2: Conv2d,
    block3: Conv2d,
}

impl ReferenceBackbone {
    fn new(rng: &mut ChaCha8Rng) -> Self {
        Self {
            stem: Conv2d::new(3, 16, 3, 2, 1, rng),
            block1: Conv2d::new(16, STAGE_CHANNELS[0], 3, 2, 1, rng),
            block2: Conv2d::new(STAGE_CHANNELS[0], STAGE_CHANNELS[1], 3, 2, 1, rng),
            block3: Conv2d::new(STAGE_CHANNELS[1], STAGE_CHANNELS[2], 3, 2, 1, rng),
        }
    }
}

/// Bias-free weight bank over all classes seen so far. New rows are
/// zero-initialized so growth cannot move existing logits.
#[derive(Debug, Clone)]
pub struct GrowingClassifier {
    head: Linear,
}

impl GrowingClassifier {
    pub fn new() -> Self {
        Self { head: Linear::zeros(0, EMBED_DIM) }
    }

    pub fn num_classes(&self) -> usize {
        self.head.weight.nrows()
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.head.weight
    }

    /// Append `new_classes` zero rows, preserving existing rows bit-exactly.
    pub fn grow(&mut self, new_classes: usize) -> Result<()> {
        if new_classes == 0 {
            return Err(Error::invalid("grow_head needs at least one new class"));
        }
        let old = self.head.weight.nrows();
        let mut weight = Array2::zeros((old + new_classes, EMBED_DIM));
        weight.slice_mut(ndarray::s![..old, ..]).assign(&self.head.weight);
        self.head = Linear { grad_weight: Array2::zeros(weight.raw_dim()), weight };
        Ok(())
    }
}

impl Default for GrowingClassifier {
    fn default() -> Self {
        Self::new()
    }
}

/// Decoder head: stage-3 features to two sigmoid planes (saliency,
/// boundary) at input resolution.
#[derive(Debug, Clone)]
pub struct LowLevelDecoder {
    c1: Conv2d,
    c2: Conv2d,
    c3: Conv2d,
}

impl LowLevelDecoder {
    fn new(rng: &mut ChaCha8Rng) -> Self {
        Self {
            c1: Conv2d::new(STAGE_CHANNELS[2], 16, 3, 1, 1, rng),
            c2: Conv2d::new(16, 8, 3, 1, 1, rng),
            c3: Conv2d::new(8, 2, 1, 1, 0, rng),
        }
    }
}

pub struct DecoderCache {
    c1: ConvCache,
    y1: Array4<f64>,
    c2: ConvCache,
    y2: Array4<f64>,
    c3: ConvCache,
}

/// Noise masks applied during one injected forward, per stage and sample.
pub struct InjectionRecord {
    pub per_sample: Vec<Vec<(usize, SaliencyMap)>>,
    pub mode: NoiseMode,
}

/// One forward pass with everything backward needs.
pub struct ForwardPass {
    /// Post-ReLU stage outputs before any injection (the supervision view).
    pub stages: [Array4<f64>; 3],
    pub z: Array2<f64>,
    pub logits: Array2<f64>,
    /// Sigmoid decoder planes (N, 2, H, W) when requested.
    pub planes: Option<Array4<f64>>,
    stem_out: Array4<f64>,
    conv_caches: [ConvCache; 4],
    decoder_cache: Option<DecoderCache>,
    injections: Option<[InjectionRecord; 3]>,
    input_dims: (usize, usize, usize, usize),
}

impl ForwardPass {
    pub fn injected(&self) -> bool {
        self.injections.is_some()
    }
}

/// Noise-injection settings for one forward pass.
pub struct InjectOptions<'a> {
    pub channel_fraction: f64,
    pub mode: NoiseMode,
    pub rng: &'a mut ChaCha8Rng,
    pub source: &'a mut dyn NoiseSource,
}

pub struct BackwardSignals<'a> {
    pub dlogits: Option<&'a Array2<f64>>,
    pub dplanes: Option<&'a Array4<f64>>,
    /// Extra gradients w.r.t. the (clean) stage tensors, e.g. from boundary
    /// supervision. Only meaningful on non-injected passes.
    pub dstages: [Option<Array4<f64>>; 3],
}

impl<'a> Default for BackwardSignals<'a> {
    fn default() -> Self {
        Self { dlogits: None, dplanes: None, dstages: [None, None, None] }
    }
}

#[derive(Debug, Clone)]
pub struct ModelBundle {
    pub backbone: ReferenceBackbone,
    pub classifier: GrowingClassifier,
    pub decoder: LowLevelDecoder,
    pub image_hw: (usize, usize),
}

impl ModelBundle {
    /// Build a fresh model for `image_hw` inputs (both dims must be
    /// multiples of 16 so the stages and decoder tile exactly).
    pub fn new(image_hw: (usize, usize), rng: &mut ChaCha8Rng) -> Result<Self> {
        let (h, w) = image_hw;
        if h < 16 || w < 16 || h % 16 != 0 || w % 16 != 0 {
            return Err(Error::invalid(format!(
                "image dims must be multiples of 16 and at least 16, got {h}x{w}"
            )));
        }
        Ok(Self {
            backbone: ReferenceBackbone::new(rng),
            classifier: GrowingClassifier::new(),
            decoder: LowLevelDecoder::new(rng),
            image_hw,
        })
    }

    /// Immutable copy for method plugins and evaluation.
    pub fn snapshot(&self) -> Self {
        self.clone()
    }

    pub fn param_count(&self) -> usize {
        self.backbone.stem.param_count()
            + self.backbone.block1.param_count()
            + self.backbone.block2.param_count()
            + self.backbone.block3.param_count()
            + self.classifier.head.param_count()
            + self.decoder.c1.param_count()
            + self.decoder.c2.param_count()
            + self.decoder.c3.param_count()
    }

    pub fn zero_grads(&mut self) {
        self.backbone.stem.zero_grads();
        self.backbone.block1.zero_grads();
        self.backbone.block2.zero_grads();
        self.backbone.block3.zero_grads();
        self.classifier.head.zero_grads();
        self.decoder.c1.zero_grads();
        self.decoder.c2.zero_grads();
        self.decoder.c3.zero_grads();
    }

    /// All parameter tensors with their gradients, in a stable order.
    pub fn param_grads(&mut self) -> Vec<ParamGrad<'_>> {
        let mut out = Vec::new();
        out.extend(self.backbone.stem.param_grads());
        out.extend(self.backbone.block1.param_grads());
        out.extend(self.backbone.block2.param_grads());
        out.extend(self.backbone.block3.param_grads());
        out.extend(self.classifier.head.param_grads());
        out.extend(self.decoder.c1.param_grads());
        out.extend(self.decoder.c2.param_grads());
        out.extend(self.decoder.c3.param_grads());
        out
    }

    /// Spatial dims of each stage for this model's input size.
    pub fn stage_dims(&self) -> [(usize, usize); 3] {
        let (h, w) = self.image_hw;
        [(h / 4, w / 4), (h / 8, w / 8), (h / 16, w / 16)]
    }

    /// Full staged forward. When `inject` is set, every stage output is
    /// noise-masked per sample before the next block consumes it. Planes
    /// are decoded from this pass's stage-3 tensor when `want_planes`.
    pub fn forward(
        &self,
        x: &Array4<f64>,
        mut inject: Option<InjectOptions<'_>>,
        want_planes: bool,
    ) -> Result<ForwardPass> {
        let (n, c, h, w) = x.dim();
        if c != 3 || (h, w) != self.image_hw {
            return Err(Error::invalid(format!(
                "input {c}x{h}x{w} does not match model input 3x{}x{}",
                self.image_hw.0, self.image_hw.1
            )));
        }
        let (t0, cache0) = self.backbone.stem.forward(x);
        let stem_out = relu(&t0);

        let mut stages: Vec<Array4<f64>> = Vec::with_capacity(3);
        let mut records: Vec<InjectionRecord> = Vec::with_capacity(3);
        let mut caches: Vec<ConvCache> = vec![cache0];

        let mut current = stem_out.clone();
        for (idx, conv) in
            [&self.backbone.block1, &self.backbone.block2, &self.backbone.block3].iter().enumerate()
        {
            let (t, cache) = conv.forward(&current);
            caches.push(cache);
            let stage_clean = relu(&t);
            stages.push(stage_clean.clone());
            current = stage_clean;
            if let Some(opts) = inject.as_mut() {
                let mut per_sample = Vec::with_capacity(n);
                for ni in 0..n {
                    let sample = current.index_axis(Axis(0), ni).to_owned();
                    let inj = inject_noise_with(
                        &sample,
                        opts.rng,
                        opts.channel_fraction,
                        opts.mode,
                        opts.source,
                    )?;
                    current.index_axis_mut(Axis(0), ni).assign(&inj.features);
                    per_sample.push(inj.applied);
                }
                records.push(InjectionRecord { per_sample, mode: opts.mode });
            }
            let _ = idx;
        }

        let z = global_avg_pool(&current);
        let logits = self.classifier.head.forward(&z);

        let (planes, decoder_cache) = if want_planes {
            let (p, cache) = self.decode(&current)?;
            (Some(p), Some(cache))
        } else {
            (None, None)
        };

        let caches: [ConvCache; 4] = caches.try_into().map_err(|_| Error::invalid("cache count"))?;
        let stages: [Array4<f64>; 3] =
            stages.try_into().map_err(|_| Error::invalid("stage count"))?;
        let injections = if inject.is_some() {
            let recs: [InjectionRecord; 3] =
                records.try_into().map_err(|_| Error::invalid("injection count"))?;
            Some(recs)
        } else {
            None
        };
        Ok(ForwardPass {
            stages,
            z,
            logits,
            planes,
            stem_out,
            conv_caches: caches,
            decoder_cache,
            injections,
            input_dims: (n, c, h, w),
        })
    }

    fn decode(&self, s3: &Array4<f64>) -> Result<(Array4<f64>, DecoderCache)> {
        let (h, w) = self.image_hw;
        let (t1, c1) = self.decoder.c1.forward(s3);
        let y1 = relu(&t1);
        let u1 = bilinear_resize(&y1, h / 4, w / 4);
        let (t2, c2) = self.decoder.c2.forward(&u1);
        let y2 = relu(&t2);
        let u2 = bilinear_resize(&y2, h, w);
        let (t3, c3) = self.decoder.c3.forward(&u2);
        let planes = sigmoid(&t3);
        Ok((planes, DecoderCache { c1, y1, c2, y2, c3 }))
    }

    fn decoder_backward(
        &mut self,
        pass: &ForwardPass,
        dplanes: &Array4<f64>,
        accumulate: bool,
    ) -> Array4<f64> {
        let cache = pass.decoder_cache.as_ref().expect("decoder ran in this pass");
        let planes = pass.planes.as_ref().expect("decoder ran in this pass");
        let dt3 = sigmoid_backward(dplanes, planes);
        let du2 = self.decoder.c3.backward(&cache.c3, &dt3, accumulate, true).expect("input grad");
        let dy2 = bilinear_resize_backward(&du2, cache.y2.dim());
        let dt2 = relu_backward(&dy2, &cache.y2);
        let du1 = self.decoder.c2.backward(&cache.c2, &dt2, accumulate, true).expect("input grad");
        let dy1 = bilinear_resize_backward(&du1, cache.y1.dim());
        let dt1 = relu_backward(&dy1, &cache.y1);
        self.decoder.c1.backward(&cache.c1, &dt1, accumulate, true).expect("input grad")
    }

    /// Training backward: accumulates parameter gradients for every signal
    /// and returns nothing. Stage gradients in `signals.dstages` are added
    /// at the corresponding stage outputs.
    pub fn backward(&mut self, pass: &ForwardPass, signals: BackwardSignals<'_>) {
        let n = pass.input_dims.0;
        let mut gs3 = if let Some(dlogits) = signals.dlogits {
            let gz = self.classifier.head.backward(&pass.z, dlogits, true);
            global_avg_pool_backward(&gz, stage_dims_of(&pass.stages[2], n))
        } else {
            Array4::zeros(stage_dims_of(&pass.stages[2], n))
        };
        if let Some(dplanes) = signals.dplanes {
            gs3 += &self.decoder_backward(pass, dplanes, true);
        }
        if let Some(ds) = &signals.dstages[2] {
            gs3 += ds;
        }
        let mut grad = gs3;
        for stage_idx in (0..3).rev() {
            if let Some(recs) = &pass.injections {
                injection_backward(&mut grad, &recs[stage_idx]);
            }
            let grad_pre = relu_backward(&grad, &pass.stages[stage_idx]);
            let conv = match stage_idx {
                0 => &mut self.backbone.block1,
                1 => &mut self.backbone.block2,
                _ => &mut self.backbone.block3,
            };
            let gin = conv
                .backward(&pass.conv_caches[stage_idx + 1], &grad_pre, true, true)
                .expect("input grad");
            grad = gin;
            if stage_idx > 0 {
                if let Some(ds) = &signals.dstages[stage_idx - 1] {
                    grad += ds;
                }
            }
        }
        let gstem = relu_backward(&grad, &pass.stem_out);
        self.backbone.stem.backward(&pass.conv_caches[0], &gstem, true, false);
    }

    /// Input-only backward from a logit cotangent on a clean pass: returns
    /// the gradients w.r.t. each (post-ReLU) stage tensor and, when asked,
    /// w.r.t. the input image. Parameter gradients are untouched.
    pub fn input_grads_from_logits(
        &self,
        pass: &ForwardPass,
        dlogits: &Array2<f64>,
        want_input: bool,
    ) -> ([Array4<f64>; 3], Option<Array4<f64>>) {
        assert!(!pass.injected(), "attribution gradients come from clean passes");
        let n = pass.input_dims.0;
        let gz = self.classifier.head.backward_input(dlogits);
        let gs3 = global_avg_pool_backward(&gz, stage_dims_of(&pass.stages[2], n));

        let mut stage_grads: [Option<Array4<f64>>; 3] = [None, None, None];
        let mut grad = gs3;
        for stage_idx in (0..3).rev() {
            stage_grads[stage_idx] = Some(grad.clone());
            let grad_pre = relu_backward(&grad, &pass.stages[stage_idx]);
            let conv = match stage_idx {
                0 => &self.backbone.block1,
                1 => &self.backbone.block2,
                _ => &self.backbone.block3,
            };
            grad = conv.backward_input(&pass.conv_caches[stage_idx + 1], &grad_pre);
        }
        let input_grad = if want_input {
            let gstem = relu_backward(&grad, &pass.stem_out);
            Some(self.backbone.stem.backward_input(&pass.conv_caches[0], &gstem))
        } else {
            None
        };
        (
            [
                stage_grads[0].take().unwrap(),
                stage_grads[1].take().unwrap(),
                stage_grads[2].take().unwrap(),
            ],
            input_grad,
        )
    }
}

fn stage_dims_of(stage: &Array4<f64>, n: usize) -> (usize, usize, usize, usize) {
    let (_, c, h, w) = stage.dim();
    (n, c, h, w)
}

fn injection_backward(grad: &mut Array4<f64>, rec: &InjectionRecord) {
    for (ni, applied) in rec.per_sample.iter().enumerate() {
        for (ch, map) in applied {
            let mut plane = grad.index_axis_mut(Axis(0), ni);
            let mut plane = plane.index_axis_mut(Axis(0), *ch);
            match rec.mode {
                NoiseMode::Multiply => {
                    for r in 0..plane.nrows() {
                        for c in 0..plane.ncols() {
                            plane[[r, c]] *= map.get(r, c);
                        }
                    }
                }
                NoiseMode::Add => {}
                NoiseMode::Blend => {
                    // channel max treated as constant
                    for r in 0..plane.nrows() {
                        for c in 0..plane.ncols() {
                            plane[[r, c]] *= 1.0 - map.get(r, c);
                        }
                    }
                }
            }
        }
    }
}

impl crate::attribution::InputGradient for ModelBundle {
    fn input_gradient(&self, image: &Array3<f64>, target_class: usize) -> Result<Array3<f64>> {
        if target_class >= self.classifier.num_classes() {
            return Err(Error::invalid(format!(
                "class {target_class} out of range for {} classes",
                self.classifier.num_classes()
            )));
        }
        let x = image.clone().insert_axis(Axis(0));
        let pass = self.forward(&x, None, false)?;
        let mut dlogits = Array2::zeros((1, self.classifier.num_classes()));
        dlogits[[0, target_class]] = 1.0;
        let (_, input_grad) = self.input_grads_from_logits(&pass, &dlogits, true);
        Ok(input_grad.expect("requested input grad").index_axis(Axis(0), 0).to_owned())
    }
}
