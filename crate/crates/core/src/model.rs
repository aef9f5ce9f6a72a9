//! Attention-merge slice classifier.
//!
//! A three-block strided CNN produces `f_img`; a 1×1 convolution with a
//! sigmoid produces the spatial attention map `A_m`. The attended features
//! `f_att = f_img ∘ A_m` are blended with the originals as
//! `f_merged = α·f_img + β·f_att` (β = 1 − α), average-pooled per channel
//! into `f_final`, and scored by a dense sigmoid head.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::numkernel::{conv2d, Tape, Tensor, Var};

pub const DEFAULT_ALPHA: f64 = 0.5;
pub const DEFAULT_INPUT_SIZE: usize = 64;
pub const BACKBONE_CHANNELS: [usize; 3] = [8, 16, 16];
const KERNEL: usize = 3;
const STRIDE: usize = 2;
const PAD: usize = 1;
/// Pixel scale applied before the backbone; zero stays zero.
pub const INPUT_GAIN: f64 = 16.0;
/// Total spatial downsampling of the backbone.
pub const DOWNSAMPLE: usize = 8;

/// Backbone output `[H', W', C]` (`f_img`, `f_att` or `f_merged`).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap(Tensor);

impl FeatureMap {
    pub fn new(t: Tensor) -> Result<Self> {
        match t.shape() {
            [h, w, c] if *h > 0 && *w > 0 && *c > 0 => Ok(FeatureMap(t)),
            other => Err(Error::InvalidShape(format!("feature map must be [H, W, C], got {other:?}"))),
        }
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        let s = self.0.shape();
        (s[0], s[1], s[2])
    }
}

/// Spatial weights `[H', W']` in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap(Tensor);

impl AttentionMap {
    pub fn new(t: Tensor) -> Result<Self> {
        if t.rank() != 2 {
            return Err(Error::InvalidShape(format!("attention map must be [H, W], got {:?}", t.shape())));
        }
        if let Some(v) = t.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!("attention value {v} outside [0, 1]")));
        }
        Ok(AttentionMap(t))
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }
}

/// Blend weights with `beta` always derived as `1 - alpha`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MergeWeights {
    alpha: f64,
}

impl Default for MergeWeights {
    fn default() -> Self {
        MergeWeights { alpha: DEFAULT_ALPHA }
    }
}

impl MergeWeights {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::InvalidArgument(format!("alpha must be in [0, 1], got {alpha}")));
        }
        Ok(MergeWeights { alpha })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        1.0 - self.alpha
    }
}

/// Probability in `[0, 1]` that one slice shows disease.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct SliceConfidence(f64);

impl SliceConfidence {
    pub fn new(value: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::InvalidArgument(format!("confidence {value} outside [0, 1]")));
        }
        Ok(SliceConfidence(value))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// All learnable tensors of the slice classifier plus the fixed merge weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub conv_weights: [Tensor; 3],
    pub conv_biases: [Tensor; 3],
    pub attention_weight: Tensor,
    pub attention_bias: Tensor,
    pub head_weight: Tensor,
    pub head_bias: Tensor,
    pub merge: MergeWeights,
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let s = 1.0 / (fan_in as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-s..=s)).collect();
    Tensor::new(shape, data).expect("init shape")
}

impl ModelParams {
    /// Seeded uniform initialisation in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn init(seed: u64, merge: MergeWeights) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cin = 1;
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for &cout in &BACKBONE_CHANNELS {
            let fan_in = KERNEL * KERNEL * cin;
            weights.push(uniform(&mut rng, &[KERNEL, KERNEL, cin, cout], fan_in));
            biases.push(uniform(&mut rng, &[cout], fan_in));
            cin = cout;
        }
        let c = cin;
        ModelParams {
            conv_weights: weights.try_into().expect("three blocks"),
            conv_biases: biases.try_into().expect("three blocks"),
            attention_weight: uniform(&mut rng, &[1, 1, c, 1], c),
            attention_bias: uniform(&mut rng, &[1], c),
            head_weight: uniform(&mut rng, &[c, 1], c),
            head_bias: uniform(&mut rng, &[1], c),
            merge,
        }
    }

    /// Width `C` of `f_final`.
    pub fn channels(&self) -> usize {
        self.head_weight.shape()[0]
    }

    /// Named learnable tensors in a stable order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, (w, b)) in self.conv_weights.iter().zip(&self.conv_biases).enumerate() {
            out.push((format!("backbone.conv{}.weight", i + 1), w));
            out.push((format!("backbone.conv{}.bias", i + 1), b));
        }
        out.push(("attention.weight".into(), &self.attention_weight));
        out.push(("attention.bias".into(), &self.attention_bias));
        out.push(("head.weight".into(), &self.head_weight));
        out.push(("head.bias".into(), &self.head_bias));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        for (w, b) in self.conv_weights.iter_mut().zip(self.conv_biases.iter_mut()) {
            out.push(w);
            out.push(b);
        }
        out.push(&mut self.attention_weight);
        out.push(&mut self.attention_bias);
        out.push(&mut self.head_weight);
        out.push(&mut self.head_bias);
        out
    }

    /// Checks that every tensor has the shape the architecture expects.
    pub fn validate(&self) -> Result<()> {
        let expected = ModelParams::init(0, self.merge);
        for ((name, got), (_, want)) in self.named_tensors().into_iter().zip(expected.named_tensors()) {
            if got.shape() != want.shape() {
                return Err(Error::InvalidShape(format!(
                    "{name} has shape {:?}, expected {:?}",
                    got.shape(),
                    want.shape()
                )));
            }
            if !got.is_finite() {
                return Err(Error::NonFinite(name));
            }
        }
        Ok(())
    }
}

/// Tape handles for every model parameter, in [`ModelParams::named_tensors`] order.
#[derive(Debug, Clone, Copy)]
pub struct ParamVars {
    pub conv_weights: [Var; 3],
    pub conv_biases: [Var; 3],
    pub attention_weight: Var,
    pub attention_bias: Var,
    pub head_weight: Var,
    pub head_bias: Var,
}

impl ParamVars {
    /// Records the parameters as leaves; they carry gradients iff `trainable`.
    pub fn record(tape: &mut Tape, params: &ModelParams, trainable: bool) -> Self {
        let mut put = |t: &Tensor| {
            if trainable {
                tape.variable(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        ParamVars {
            conv_weights: [
                put(&params.conv_weights[0]),
                put(&params.conv_weights[1]),
                put(&params.conv_weights[2]),
            ],
            conv_biases: [
                put(&params.conv_biases[0]),
                put(&params.conv_biases[1]),
                put(&params.conv_biases[2]),
            ],
            attention_weight: put(&params.attention_weight),
            attention_bias: put(&params.attention_bias),
            head_weight: put(&params.head_weight),
            head_bias: put(&params.head_bias),
        }
    }

    pub fn all(&self) -> Vec<Var> {
        let mut out = Vec::new();
        for (w, b) in self.conv_weights.iter().zip(&self.conv_biases) {
            out.push(*w);
            out.push(*b);
        }
        out.extend([self.attention_weight, self.attention_bias, self.head_weight, self.head_bias]);
        out
    }
}

/// Taped stages of the slice model. Each method mirrors one of the free
/// functions below, so both routes share a single definition.
pub mod graph {
    use super::*;

    /// `[H, W, 1]` input -> `f_img` `[H/8, W/8, C]`.
    pub fn extract_features(tape: &mut Tape, input: Var, p: &ParamVars) -> Result<Var> {
        let shape = tape.value(input)?.shape().to_vec();
        let [h, w, c] = shape[..] else {
            return Err(Error::InvalidShape(format!("model input must be [H, W, 1], got {shape:?}")));
        };
        if c != 1 {
            return Err(Error::shape("input channels", 1, c));
        }
        if h % DOWNSAMPLE != 0 || w % DOWNSAMPLE != 0 {
            return Err(Error::InvalidArgument(format!(
                "input {h}x{w} is not divisible by {DOWNSAMPLE}; resize the slice first \
                 (e.g. to {DEFAULT_INPUT_SIZE}x{DEFAULT_INPUT_SIZE})"
            )));
        }
        let mut x = input;
        for (wk, b) in p.conv_weights.iter().zip(&p.conv_biases) {
            x = tape.conv2d(x, *wk, STRIDE, PAD)?;
            x = tape.add_bias(x, *b)?;
            x = tape.relu(x)?;
        }
        Ok(x)
    }

    /// `A_m[h, w] = sigmoid(sum_c k_c f_img[h, w, c] + b)`.
    pub fn attention_map(tape: &mut Tape, f_img: Var, p: &ParamVars) -> Result<Var> {
        let shape = tape.value(f_img)?.shape().to_vec();
        let c_kernel = tape.value(p.attention_weight)?.shape()[2];
        if shape.len() != 3 {
            return Err(Error::InvalidShape(format!("features must be [H, W, C], got {shape:?}")));
        }
        if shape[2] != c_kernel {
            return Err(Error::shape("attention kernel channels", shape[2], c_kernel));
        }
        let logits = tape.conv2d(f_img, p.attention_weight, 1, 0)?;
        let logits = tape.add_bias(logits, p.attention_bias)?;
        let logits = tape.reshape(logits, &[shape[0], shape[1]])?;
        tape.sigmoid(logits)
    }

    pub fn attend(tape: &mut Tape, f_img: Var, a_m: Var) -> Result<Var> {
        tape.spatial_mul(f_img, a_m)
    }

    pub fn merge(tape: &mut Tape, f_img: Var, f_att: Var, w: MergeWeights) -> Result<Var> {
        let a = tape.scale(f_img, w.alpha())?;
        let b = tape.scale(f_att, w.beta())?;
        tape.add(a, b)
    }

    pub fn pool_final(tape: &mut Tape, f_merged: Var) -> Result<Var> {
        tape.global_avg_pool(f_merged)
    }

    /// `sigmoid(f_final · w + b)` as a single-element tensor.
    pub fn confidence(tape: &mut Tape, f_final: Var, p: &ParamVars) -> Result<Var> {
        let c = tape.value(f_final)?.len();
        let c_head = tape.value(p.head_weight)?.shape()[0];
        if c != c_head {
            return Err(Error::shape("head input width", c_head, c));
        }
        let row = tape.reshape(f_final, &[1, c])?;
        let logit = tape.matmul(row, p.head_weight)?;
        let logit = tape.reshape(logit, &[1])?;
        let logit = tape.add_bias(logit, p.head_bias)?;
        tape.sigmoid(logit)
    }

    /// Full slice pass; returns `(confidence, f_final)`.
    pub fn forward(tape: &mut Tape, input: Var, p: &ParamVars, merge_w: MergeWeights) -> Result<(Var, Var)> {
        let f_img = extract_features(tape, input, p)?;
        let a_m = attention_map(tape, f_img, p)?;
        let f_att = attend(tape, f_img, a_m)?;
        let f_merged = merge(tape, f_img, f_att, merge_w)?;
        let f_final = pool_final(tape, f_merged)?;
        let conf = confidence(tape, f_final, p)?;
        Ok((conf, f_final))
    }
}

fn frozen(params: &ModelParams) -> (Tape, ParamVars) {
    let mut tape = Tape::new();
    let vars = ParamVars::record(&mut tape, params, false);
    (tape, vars)
}

/// Backbone input for a slice: pixels scaled by [`INPUT_GAIN`].
pub fn input_tensor(image: &Image) -> Tensor {
    let mut t = image.to_tensor();
    t.data_mut().iter_mut().for_each(|v| *v *= INPUT_GAIN);
    t
}

pub fn extract_features(image: &Image, params: &ModelParams) -> Result<FeatureMap> {
    let (mut tape, p) = frozen(params);
    let x = tape.constant(input_tensor(image));
    let f = graph::extract_features(&mut tape, x, &p)?;
    FeatureMap::new(tape.value(f)?.clone())
}

pub fn compute_attention_map(f_img: &FeatureMap, params: &ModelParams) -> Result<AttentionMap> {
    let (mut tape, p) = frozen(params);
    let f = tape.constant(f_img.tensor().clone());
    let a = graph::attention_map(&mut tape, f, &p)?;
    AttentionMap::new(tape.value(a)?.clone())
}

pub fn attend(f_img: &FeatureMap, a_m: &AttentionMap) -> Result<FeatureMap> {
    let mut tape = Tape::new();
    let f = tape.constant(f_img.tensor().clone());
    let a = tape.constant(a_m.tensor().clone());
    let out = graph::attend(&mut tape, f, a)?;
    FeatureMap::new(tape.value(out)?.clone())
}

pub fn merge(f_img: &FeatureMap, f_att: &FeatureMap, w: MergeWeights) -> Result<FeatureMap> {
    let mut tape = Tape::new();
    let a = tape.constant(f_img.tensor().clone());
    let b = tape.constant(f_att.tensor().clone());
    let out = graph::merge(&mut tape, a, b, w)?;
    FeatureMap::new(tape.value(out)?.clone())
}

pub fn pool_final(f_merged: &FeatureMap) -> Tensor {
    let mut tape = Tape::new();
    let f = tape.constant(f_merged.tensor().clone());
    let out = graph::pool_final(&mut tape, f).expect("feature map is [H, W, C]");
    tape.value(out).expect("recorded").clone()
}

pub fn slice_confidence(f_final: &Tensor, params: &ModelParams) -> Result<SliceConfidence> {
    let (mut tape, p) = frozen(params);
    let f = tape.constant(f_final.clone());
    let out = graph::confidence(&mut tape, f, &p)?;
    SliceConfidence::new(tape.value(out)?.item()?)
}

/// Confidence and pooled features for one slice (no resizing).
pub fn forward_slice(image: &Image, params: &ModelParams) -> Result<(SliceConfidence, Tensor)> {
    let (mut tape, p) = frozen(params);
    let x = tape.constant(input_tensor(image));
    let (conf, f_final) = graph::forward(&mut tape, x, &p, params.merge)?;
    let c = SliceConfidence::new(tape.value(conf)?.item()?)?;
    Ok((c, tape.value(f_final)?.clone()))
}

/// Whether each backbone relu is active (`pre-activation > 0`) for `input`.
pub fn backbone_activation_pattern(input: &Tensor, params: &ModelParams) -> Result<Vec<bool>> {
    let mut pattern = Vec::new();
    let mut x = input.clone();
    for (wk, b) in params.conv_weights.iter().zip(&params.conv_biases) {
        let mut z = conv2d(&x, wk, STRIDE, PAD)?;
        let c = b.len();
        for (i, v) in z.data_mut().iter_mut().enumerate() {
            *v += b.data()[i % c];
        }
        pattern.extend(z.data().iter().map(|&v| v > 0.0));
        z.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
        x = z;
    }
    Ok(pattern)
}

/// Outcome of [`grad_check_forward`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForwardGradCheck {
    /// Largest `|analytic - numeric| / max(1, |analytic|)` over checked coordinates.
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates whose `±h` probes change the relu activation pattern; a
    /// central difference across a kink does not estimate the derivative.
    pub skipped_kinks: usize,
}

/// Central-difference check of the slice confidence with respect to every
/// parameter, against the taped gradient.
pub fn grad_check_forward(input: &Tensor, params: &ModelParams, h: f64) -> Result<ForwardGradCheck> {
    let mut tape = Tape::new();
    let vars = ParamVars::record(&mut tape, params, true);
    let x = tape.constant(input.clone());
    let (conf, _) = graph::forward(&mut tape, x, &vars, params.merge)?;
    let grads = tape.backward(conf)?;
    let analytic: Vec<Tensor> = vars
        .all()
        .iter()
        .zip(params.named_tensors())
        .map(|(v, (_, t))| grads.get(*v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();

    let eval = |p: &ModelParams| -> Result<(f64, Vec<bool>)> {
        let (mut tape, vars) = frozen(p);
        let x = tape.constant(input.clone());
        let (conf, _) = graph::forward(&mut tape, x, &vars, p.merge)?;
        Ok((tape.value(conf)?.item()?, backbone_activation_pattern(input, p)?))
    };
    let mut report = ForwardGradCheck {
        max_rel_error: 0.0,
        checked: 0,
        skipped_kinks: 0,
    };
    let mut probe = params.clone();
    for (t, a) in analytic.iter().enumerate() {
        for i in 0..a.len() {
            let orig = probe.tensors_mut()[t].data()[i];
            probe.tensors_mut()[t].data_mut()[i] = orig + h;
            let (plus, pat_plus) = eval(&probe)?;
            probe.tensors_mut()[t].data_mut()[i] = orig - h;
            let (minus, pat_minus) = eval(&probe)?;
            probe.tensors_mut()[t].data_mut()[i] = orig;
            if pat_plus != pat_minus {
                report.skipped_kinks += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * h);
            let an = a.data()[i];
            report.max_rel_error = report.max_rel_error.max((an - numeric).abs() / an.abs().max(1.0));
            report.checked += 1;
        }
    }
    Ok(report)
}

/// Resizes a raw slice to the model's working resolution.
pub fn prepare_slice(image: &Image, size: usize) -> Result<Image> {
    image.resize(size, size)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_params() -> ModelParams {
        let mut p = ModelParams::init(1, MergeWeights::default());
        for t in p.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        p
    }

    #[test]
    fn feature_shape_for_64() {
        let p = ModelParams::init(3, MergeWeights::default());
        let img = Image::filled(64, 64, 0.4).unwrap();
        let f = extract_features(&img, &p).unwrap();
        assert_eq!(f.dims(), (8, 8, 16));
    }

    #[test]
    fn zero_image_zero_bias_gives_zero_features() {
        let mut p = ModelParams::init(3, MergeWeights::default());
        for b in p.conv_biases.iter_mut() {
            b.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let f = extract_features(&Image::filled(16, 16, 0.0).unwrap(), &p).unwrap();
        assert!(f.tensor().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn indivisible_input_asks_for_resize() {
        let p = ModelParams::init(3, MergeWeights::default());
        let err = extract_features(&Image::filled(20, 16, 0.1).unwrap(), &p).unwrap_err();
        assert!(err.to_string().contains("resize"), "{err}");
    }

    #[test]
    fn attention_saturation() {
        let mut p = zero_params();
        let f = FeatureMap::new(Tensor::zeros(&[2, 3, 16])).unwrap();
        let a = compute_attention_map(&f, &p).unwrap();
        assert!(a.tensor().data().iter().all(|&v| v == 0.5));
        p.attention_bias.data_mut()[0] = 20.0;
        let a = compute_attention_map(&f, &p).unwrap();
        assert!(a.tensor().data().iter().all(|&v| v > 1.0 - 1e-8));

        let bad = FeatureMap::new(Tensor::zeros(&[2, 2, 4])).unwrap();
        assert!(compute_attention_map(&bad, &p).is_err());
    }

    #[test]
    fn attend_examples() {
        let f = FeatureMap::new(Tensor::full(&[2, 2, 3], 1.0)).unwrap();
        let a = AttentionMap::new(Tensor::new(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap()).unwrap();
        let out = attend(&f, &a).unwrap();
        for c in 0..3 {
            let ch: Vec<f64> = (0..4).map(|p| out.tensor().data()[p * 3 + c]).collect();
            assert_eq!(ch, vec![1.0, 0.0, 0.0, 1.0]);
        }
        let z = AttentionMap::new(Tensor::zeros(&[2, 2])).unwrap();
        assert!(attend(&f, &z).unwrap().tensor().data().iter().all(|&v| v == 0.0));

        let wrong = AttentionMap::new(Tensor::zeros(&[2, 3])).unwrap();
        assert!(attend(&f, &wrong).is_err());
    }

    #[test]
    fn merge_endpoints() {
        let a = FeatureMap::new(Tensor::full(&[2, 2, 2], 2.0)).unwrap();
        let b = FeatureMap::new(Tensor::zeros(&[2, 2, 2])).unwrap();
        let m = merge(&a, &b, MergeWeights::new(1.0).unwrap()).unwrap();
        assert_eq!(m, a);
        let m = merge(&a, &b, MergeWeights::default()).unwrap();
        assert!(m.tensor().data().iter().all(|&v| v == 1.0));
        let c = FeatureMap::new(Tensor::zeros(&[2, 2, 3])).unwrap();
        assert!(merge(&a, &c, MergeWeights::default()).is_err());
        assert!(MergeWeights::new(1.5).is_err());
    }

    #[test]
    fn pool_examples() {
        let f = FeatureMap::new(Tensor::new(&[2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap()).unwrap();
        assert_eq!(pool_final(&f).data(), &[2.5]);
        let f = FeatureMap::new(Tensor::full(&[3, 5, 2], -1.5)).unwrap();
        assert_eq!(pool_final(&f).data(), &[-1.5, -1.5]);
    }

    #[test]
    fn head_examples() {
        let mut p = zero_params();
        assert_eq!(slice_confidence(&Tensor::zeros(&[16]), &p).unwrap().value(), 0.5);
        p.head_bias.data_mut()[0] = 20.0;
        assert!(slice_confidence(&Tensor::zeros(&[16]), &p).unwrap().value() > 1.0 - 1e-8);
        assert!(slice_confidence(&Tensor::zeros(&[8]), &p).is_err());
    }

    #[test]
    fn forward_equals_manual_composition() {
        let p = ModelParams::init(11, MergeWeights::default());
        let mut pixels = Vec::new();
        for i in 0..64 * 64 {
            pixels.push(((i * 37 % 101) as f32) / 100.0);
        }
        let img = Image::new(64, 64, pixels).unwrap();
        let f_img = extract_features(&img, &p).unwrap();
        let a_m = compute_attention_map(&f_img, &p).unwrap();
        let f_att = attend(&f_img, &a_m).unwrap();
        let f_merged = merge(&f_img, &f_att, p.merge).unwrap();
        let f_final = pool_final(&f_merged);
        let conf = slice_confidence(&f_final, &p).unwrap();
        let (c2, f2) = forward_slice(&img, &p).unwrap();
        assert_eq!(conf, c2);
        assert_eq!(f_final, f2);
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let a = ModelParams::init(5, MergeWeights::default());
        let b = ModelParams::init(5, MergeWeights::default());
        assert_eq!(a, b);
        a.validate().unwrap();
        let s = 1.0 / 9f64.sqrt();
        assert!(a.conv_weights[0].data().iter().all(|v| v.abs() <= s));
        assert_ne!(a, ModelParams::init(6, MergeWeights::default()));
    }
}
