//! Slow and fast 3D-convolutional encoders with multi-depth feature taps.
//!
//! Each encoder is four conv→batchnorm→ReLU stages named `res2..res5`. Every
//! stage keeps the temporal length and halves height and width:
//!
//! | stage | kernel (t,h,w)      | stride  | padding (t,h,w) |
//! |-------|---------------------|---------|-----------------|
//! | res2  | (3 or 1, 3, 3)      | (1,2,2) | (1 or 0, 1, 1)  |
//! | res3  | (3 or 1, 3, 3)      | (1,2,2) | (1 or 0, 1, 1)  |
//! | res4  | (3 or 1, 3, 3)      | (1,2,2) | (1 or 0, 1, 1)  |
//! | res5  | (3 or 1, 3, 3)      | (1,2,2) | (1 or 0, 1, 1)  |
//!
//! The temporal extent is 3 when the stage's `temporal_kernel` flag is set.
//! An extent `E` maps to `(E - 1) / 2 + 1`, so a 64×64 input gives 32, 16, 8
//! and 4 pixels at `res2..res5`. Only stages up to the deepest tap are built.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{relu_backward, relu_in_place, BatchNorm, BatchNormCache, Conv3d, Param};
use crate::seed::{stream_rng, STREAM_PARAM_INIT};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pathway {
    Slow,
    Fast,
}

impl Pathway {
    pub fn name(self) -> &'static str {
        match self {
            Pathway::Slow => "slow",
            Pathway::Fast => "fast",
        }
    }

    pub fn other(self) -> Pathway {
        match self {
            Pathway::Slow => Pathway::Fast,
            Pathway::Fast => Pathway::Slow,
        }
    }
}

impl fmt::Display for Pathway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Pathway {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "slow" => Ok(Pathway::Slow),
            "fast" => Ok(Pathway::Fast),
            _ => Err(Error::Config(format!("unknown pathway `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tap {
    Res2,
    Res3,
    Res4,
    Res5,
}

impl Tap {
    pub const ALL: [Tap; 4] = [Tap::Res2, Tap::Res3, Tap::Res4, Tap::Res5];

    pub fn stage(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Tap::Res2 => "res2",
            Tap::Res3 => "res3",
            Tap::Res4 => "res4",
            Tap::Res5 => "res5",
        }
    }

    /// The `d` deepest taps, e.g. `d = 2` gives `{res4, res5}`.
    pub fn deepest(d: usize) -> Result<Vec<Tap>> {
        if d == 0 || d > 4 {
            return Err(Error::Config(format!("number of levels {d} outside 1..=4")));
        }
        Ok(Tap::ALL[4 - d..].to_vec())
    }
}

impl fmt::Display for Tap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Tap {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Tap::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown tap `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; caches kept for backward.
    Train,
    /// Frozen running statistics.
    Eval,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub pathway: Pathway,
    pub stage_channels: Vec<usize>,
    pub taps: Vec<Tap>,
    pub temporal_kernel: Vec<bool>,
    pub in_channels: usize,
    /// Expected clip length (`64/τ` slow, `α·64/τ` fast).
    pub frames: usize,
    pub height: usize,
    pub width: usize,
}

impl EncoderConfig {
    pub fn slow_default() -> Self {
        Self {
            pathway: Pathway::Slow,
            stage_channels: vec![8, 16, 32, 64],
            taps: vec![Tap::Res3, Tap::Res4, Tap::Res5],
            temporal_kernel: vec![true; 4],
            in_channels: 3,
            frames: 8,
            height: 64,
            width: 64,
        }
    }

    /// Fast counterpart: widths scaled by `multiplier` (rounded, at least 1).
    pub fn fast_from(slow: &EncoderConfig, multiplier: f64, frames: usize) -> Self {
        Self {
            pathway: Pathway::Fast,
            stage_channels: slow
                .stage_channels
                .iter()
                .map(|&c| ((c as f64 * multiplier).round() as usize).max(1))
                .collect(),
            frames,
            ..slow.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stage_channels.len() != 4 || self.stage_channels.contains(&0) {
            return Err(Error::Config(format!(
                "stage_channels must list 4 positive widths, got {:?}",
                self.stage_channels
            )));
        }
        if self.temporal_kernel.len() != 4 {
            return Err(Error::Config("temporal_kernel must have 4 flags".into()));
        }
        if self.taps.is_empty() {
            return Err(Error::Config("taps must be non-empty".into()));
        }
        if self.taps.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!(
                "taps must be strictly increasing in depth, got {:?}",
                self.taps
            )));
        }
        if self.in_channels == 0 || self.frames == 0 || self.height == 0 || self.width == 0 {
            return Err(Error::Config("input dimensions must be positive".into()));
        }
        Ok(())
    }

    pub fn final_tap(&self) -> Tap {
        *self.taps.last().expect("validated non-empty taps")
    }

    fn stage_count(&self) -> usize {
        self.final_tap().stage() + 1
    }

    pub fn tap_channels(&self, tap: Tap) -> usize {
        self.stage_channels[tap.stage()]
    }

    /// `[C, T', H', W']` of every tap for the configured input size.
    pub fn tap_shapes(&self) -> Result<BTreeMap<Tap, [usize; 4]>> {
        self.validate()?;
        let (mut h, mut w) = (self.height, self.width);
        let mut out = BTreeMap::new();
        for s in 0..self.stage_count() {
            h = (h - 1) / 2 + 1;
            w = (w - 1) / 2 + 1;
            let tap = Tap::ALL[s];
            if self.taps.contains(&tap) {
                out.insert(tap, [self.stage_channels[s], self.frames, h, w]);
            }
        }
        Ok(out)
    }
}

/// Number of learnable parameters the encoder for `config` holds.
pub fn count_params(config: &EncoderConfig) -> Result<usize> {
    config.validate()?;
    let mut cin = config.in_channels;
    let mut total = 0;
    for s in 0..config.stage_count() {
        let cout = config.stage_channels[s];
        let kt = if config.temporal_kernel[s] { 3 } else { 1 };
        total += cin * cout * kt * 9 + 2 * cout;
        cin = cout;
    }
    Ok(total)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Stage<R> {
    pub conv: Conv3d<R>,
    pub bn: BatchNorm<R>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Encoder<R> {
    pub config: EncoderConfig,
    pub stages: Vec<Stage<R>>,
}

/// Per-tap activations of one clip.
#[derive(Clone, Debug, PartialEq)]
pub struct FeaturePyramid<R> {
    /// `[C_k, T'_k, H'_k, W'_k]` before pooling.
    pub activations: BTreeMap<Tap, Tensor<R>>,
    /// Global average of each activation, length `C_k`.
    pub pooled: BTreeMap<Tap, Vec<R>>,
}

/// Per-tap activations of a batch.
#[derive(Clone, Debug)]
pub struct BatchPyramid<R> {
    /// `[B, C_k, T'_k, H'_k, W'_k]`.
    pub activations: BTreeMap<Tap, Tensor<R>>,
    /// `[B, C_k]`.
    pub pooled: BTreeMap<Tap, Tensor<R>>,
}

impl<R: Real> BatchPyramid<R> {
    pub fn sample(&self, b: usize) -> FeaturePyramid<R> {
        let mut activations = BTreeMap::new();
        let mut pooled = BTreeMap::new();
        for (&tap, act) in &self.activations {
            activations.insert(
                tap,
                Tensor::from_vec(&act.shape()[1..], act.slab(b).to_vec()).expect("slab shape"),
            );
            pooled.insert(tap, self.pooled[&tap].slab(b).to_vec());
        }
        FeaturePyramid { activations, pooled }
    }
}

#[derive(Clone, Debug)]
pub struct EncoderCache<R> {
    inputs: Vec<Tensor<R>>,
    outputs: Vec<Tensor<R>>,
    bn: Vec<BatchNormCache<R>>,
}

/// Mean over every axis but the first of `[C, ...]`.
pub fn global_avg_pool<R: Real>(activation: &Tensor<R>) -> Result<Vec<R>> {
    let s = activation.shape();
    if s.len() < 2 || s.contains(&0) {
        return Err(Error::Shape(format!("cannot pool shape {s:?}")));
    }
    let per = activation.inner_len();
    let inv = R::one() / R::of(per as f64);
    Ok((0..s[0])
        .map(|c| activation.slab(c).iter().copied().sum::<R>() * inv)
        .collect())
}

fn pool_batch<R: Real>(act: &Tensor<R>) -> Result<Tensor<R>> {
    let s = act.shape();
    let mut data = Vec::with_capacity(s[0] * s[1]);
    for b in 0..s[0] {
        let one = Tensor::from_vec(&s[1..], act.slab(b).to_vec())?;
        data.extend(global_avg_pool(&one)?);
    }
    Tensor::from_vec(&[s[0], s[1]], data)
}

/// Gradient of `pool_batch`: spread each pooled gradient evenly.
pub fn pool_backward<R: Real>(shape: &[usize], dpooled: &Tensor<R>) -> Tensor<R> {
    let mut out = Tensor::zeros(shape);
    let spatial: usize = shape[2..].iter().product();
    let inv = R::one() / R::of(spatial as f64);
    for (chunk, &g) in out.data_mut().chunks_mut(spatial).zip(dpooled.data()) {
        chunk.iter_mut().for_each(|v| *v = g * inv);
    }
    out
}

/// `[T, H, W, C]` clips to an encoder batch `[B, C, T, H, W]`.
pub fn clips_to_batch<R: Real>(clips: &[&Tensor<f32>]) -> Result<Tensor<R>> {
    let first = clips
        .first()
        .ok_or_else(|| Error::Shape("empty clip batch".into()))?;
    let s = first.shape().to_vec();
    if s.len() != 4 {
        return Err(Error::Shape(format!("clip must be [T, H, W, C], got {s:?}")));
    }
    let (t, h, w, c) = (s[0], s[1], s[2], s[3]);
    let mut out = Tensor::zeros(&[clips.len(), c, t, h, w]);
    let plane = t * h * w;
    for (b, clip) in clips.iter().enumerate() {
        if clip.shape() != s.as_slice() {
            return Err(Error::Shape(format!(
                "clip shapes differ in batch: {:?} vs {:?}",
                clip.shape(),
                s
            )));
        }
        let dst = out.slab_mut(b);
        for (p, px) in clip.data().chunks_exact(c).enumerate() {
            for (ch, &v) in px.iter().enumerate() {
                dst[ch * plane + p] = R::of(v as f64);
            }
        }
    }
    Ok(out)
}

impl<R: Real> Encoder<R> {
    pub fn new(config: EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = stream_rng(seed, STREAM_PARAM_INIT, config.pathway as u64);
        let mut cin = config.in_channels;
        let mut stages = Vec::new();
        for s in 0..config.stage_count() {
            let name = format!("{}.{}", config.pathway, Tap::ALL[s]);
            let cout = config.stage_channels[s];
            let (kt, pt) = if config.temporal_kernel[s] { (3, 1) } else { (1, 0) };
            stages.push(Stage {
                conv: Conv3d::new(
                    &format!("{name}.conv"),
                    cin,
                    cout,
                    [kt, 3, 3],
                    [1, 2, 2],
                    [pt, 1, 1],
                    &mut rng,
                ),
                bn: BatchNorm::new(&format!("{name}.bn"), cout),
            });
            cin = cout;
        }
        Ok(Self { config, stages })
    }

    pub fn params(&self) -> Vec<&Param<R>> {
        self.stages
            .iter()
            .flat_map(|s| [&s.conv.weight, &s.bn.gamma, &s.bn.beta])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<R>> {
        self.stages
            .iter_mut()
            .flat_map(|s| [&mut s.conv.weight, &mut s.bn.gamma, &mut s.bn.beta])
            .collect()
    }

    /// Non-learnable state (running statistics) keyed by path.
    pub fn buffers(&self) -> Vec<(String, &Vec<R>)> {
        self.stages
            .iter()
            .flat_map(|s| {
                let n = s.bn.gamma.name.trim_end_matches(".gamma").to_string();
                [
                    (format!("{n}.running_mean"), &s.bn.running_mean),
                    (format!("{n}.running_var"), &s.bn.running_var),
                ]
            })
            .collect()
    }

    pub fn buffers_mut(&mut self) -> Vec<(String, &mut Vec<R>)> {
        self.stages
            .iter_mut()
            .flat_map(|s| {
                let n = s.bn.gamma.name.trim_end_matches(".gamma").to_string();
                [
                    (format!("{n}.running_mean"), &mut s.bn.running_mean),
                    (format!("{n}.running_var"), &mut s.bn.running_var),
                ]
            })
            .collect()
    }

    fn check_batch(&self, x: &Tensor<R>) -> Result<()> {
        let s = x.shape();
        let c = &self.config;
        let want = [c.in_channels, c.frames, c.height, c.width];
        if s.len() != 5 || s[1..] != want {
            return Err(Error::Shape(format!(
                "{} encoder expects [B, {}, {}, {}, {}], got {:?}",
                c.pathway, want[0], want[1], want[2], want[3], s
            )));
        }
        Ok(())
    }

    pub fn forward_batch(&self, x: &Tensor<R>, mode: Mode) -> Result<(BatchPyramid<R>, EncoderCache<R>)> {
        self.check_batch(x)?;
        let mut cache = EncoderCache {
            inputs: Vec::new(),
            outputs: Vec::new(),
            bn: Vec::new(),
        };
        let mut activations = BTreeMap::new();
        let mut pooled = BTreeMap::new();
        let mut h = x.clone();
        for (s, stage) in self.stages.iter().enumerate() {
            let z = stage.conv.forward(&h)?;
            let mut y = match mode {
                Mode::Train => {
                    let (y, bc) = stage.bn.forward_train(&z)?;
                    cache.bn.push(bc);
                    y
                }
                Mode::Eval => stage.bn.forward_eval(&z)?,
            };
            relu_in_place(&mut y);
            let tap = Tap::ALL[s];
            if self.config.taps.contains(&tap) {
                pooled.insert(tap, pool_batch(&y)?);
                activations.insert(tap, y.clone());
            }
            if mode == Mode::Train {
                cache.inputs.push(std::mem::replace(&mut h, y.clone()));
                cache.outputs.push(y);
            } else {
                h = y;
            }
        }
        Ok((BatchPyramid { activations, pooled }, cache))
    }

    /// Eval-mode pyramid of a single `[T, H, W, C]` clip.
    pub fn encode(&self, clip: &Tensor<f32>) -> Result<FeaturePyramid<R>> {
        let x = clips_to_batch::<R>(&[clip])?;
        let (pyr, _) = self.forward_batch(&x, Mode::Eval)?;
        Ok(pyr.sample(0))
    }

    /// Accumulate parameter gradients given the loss gradient at each tap.
    pub fn backward(&mut self, cache: &EncoderCache<R>, tap_grads: &BTreeMap<Tap, Tensor<R>>) -> Result<()> {
        if cache.bn.len() != self.stages.len() {
            return Err(Error::Config("backward needs a training-mode forward cache".into()));
        }
        let mut upstream: Option<Tensor<R>> = None;
        for s in (0..self.stages.len()).rev() {
            let mut g = match (upstream.take(), tap_grads.get(&Tap::ALL[s])) {
                (Some(mut u), Some(t)) => {
                    for (a, &b) in u.data_mut().iter_mut().zip(t.data()) {
                        *a += b;
                    }
                    u
                }
                (Some(u), None) => u,
                (None, Some(t)) => t.clone(),
                (None, None) => continue,
            };
            relu_backward(&cache.outputs[s], &mut g);
            let stage = &mut self.stages[s];
            let dz = stage.bn.backward(&cache.bn[s], &g)?;
            upstream = stage.conv.backward(&cache.inputs[s], &dz, s > 0)?;
        }
        Ok(())
    }

    pub fn update_running_stats(&mut self, cache: &EncoderCache<R>) {
        for (stage, bc) in self.stages.iter_mut().zip(&cache.bn) {
            stage.bn.update_running(bc);
        }
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(|p| p.zero_grad());
    }

    pub fn cast<S: Real>(&self) -> Encoder<S> {
        let conv = |c: &Conv3d<R>| Conv3d {
            weight: cast_param(&c.weight),
            in_channels: c.in_channels,
            out_channels: c.out_channels,
            kernel: c.kernel,
            stride: c.stride,
            padding: c.padding,
        };
        Encoder {
            config: self.config.clone(),
            stages: self
                .stages
                .iter()
                .map(|s| Stage {
                    conv: conv(&s.conv),
                    bn: BatchNorm {
                        gamma: cast_param(&s.bn.gamma),
                        beta: cast_param(&s.bn.beta),
                        running_mean: s.bn.running_mean.iter().map(|v| S::of(v.f64())).collect(),
                        running_var: s.bn.running_var.iter().map(|v| S::of(v.f64())).collect(),
                        eps: s.bn.eps,
                        momentum: s.bn.momentum,
                    },
                })
                .collect(),
        }
    }
}

pub fn cast_param<R: Real, S: Real>(p: &Param<R>) -> Param<S> {
    Param {
        name: p.name.clone(),
        shape: p.shape.clone(),
        value: p.value.iter().map(|v| S::of(v.f64())).collect(),
        grad: p.grad.iter().map(|v| S::of(v.f64())).collect(),
        decay: p.decay,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn tiny(pathway: Pathway) -> EncoderConfig {
        EncoderConfig {
            pathway,
            stage_channels: vec![2, 2, 2, 2],
            taps: vec![Tap::Res3, Tap::Res4, Tap::Res5],
            temporal_kernel: vec![true; 4],
            in_channels: 3,
            frames: 8,
            height: 16,
            width: 16,
        }
    }

    fn random_clip(t: usize, h: usize, w: usize, seed: u64) -> Tensor<f32> {
        let mut rng = stream_rng(seed, 42, 0);
        Tensor::from_vec(&[t, h, w, 3], (0..t * h * w * 3).map(|_| rng.random::<f32>()).collect()).unwrap()
    }

    #[test]
    fn tiny_pyramid_matches_stride_table() {
        let cfg = tiny(Pathway::Slow);
        let enc = Encoder::<f64>::new(cfg.clone(), 0).unwrap();
        let pyr = enc.encode(&random_clip(8, 16, 16, 1)).unwrap();
        let want: BTreeMap<Tap, Vec<usize>> = [
            (Tap::Res3, vec![2, 8, 4, 4]),
            (Tap::Res4, vec![2, 8, 2, 2]),
            (Tap::Res5, vec![2, 8, 1, 1]),
        ]
        .into_iter()
        .collect();
        for (tap, shape) in &want {
            assert_eq!(pyr.activations[tap].shape(), shape.as_slice());
            assert_eq!(pyr.pooled[tap].len(), shape[0]);
        }
        let table = cfg.tap_shapes().unwrap();
        for (tap, shape) in want {
            assert_eq!(table[&tap].to_vec(), shape);
        }
        assert_eq!(pyr.activations.keys().copied().collect::<Vec<_>>(), cfg.taps);
    }

    #[test]
    fn default_pyramid_sizes() {
        let table = EncoderConfig::slow_default().tap_shapes().unwrap();
        assert_eq!(table[&Tap::Res3], [16, 8, 16, 16]);
        assert_eq!(table[&Tap::Res4], [32, 8, 8, 8]);
        assert_eq!(table[&Tap::Res5], [64, 8, 4, 4]);
    }

    #[test]
    fn pooled_equals_gap_of_activation() {
        let enc = Encoder::<f32>::new(tiny(Pathway::Fast), 3).unwrap();
        let pyr = enc.encode(&random_clip(8, 16, 16, 2)).unwrap();
        for (tap, act) in &pyr.activations {
            assert_eq!(global_avg_pool(act).unwrap(), pyr.pooled[tap]);
        }
        let x = clips_to_batch::<f32>(&[&random_clip(8, 16, 16, 2)]).unwrap();
        let (batch, _) = enc.forward_batch(&x, Mode::Train).unwrap();
        for (tap, act) in &batch.activations {
            let one = Tensor::from_vec(&act.shape()[1..], act.slab(0).to_vec()).unwrap();
            assert_eq!(global_avg_pool(&one).unwrap(), batch.pooled[tap].slab(0));
        }
    }

    #[test]
    fn zero_final_stage_gives_zero_vector() {
        let mut enc = Encoder::<f64>::new(tiny(Pathway::Slow), 0).unwrap();
        let last = enc.stages.last_mut().unwrap();
        last.conv.weight.value.iter_mut().for_each(|v| *v = 0.0);
        last.bn.beta.value.iter_mut().for_each(|v| *v = 0.0);
        let pyr = enc.encode(&random_clip(8, 16, 16, 5)).unwrap();
        assert!(pyr.pooled[&Tap::Res5].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn static_clip_gives_time_constant_activations() {
        let enc = Encoder::<f64>::new(tiny(Pathway::Slow), 9).unwrap();
        let frame = random_clip(1, 16, 16, 6);
        let data: Vec<f32> = (0..8).flat_map(|_| frame.data().to_vec()).collect();
        let clip = Tensor::from_vec(&[8, 16, 16, 3], data).unwrap();
        let pyr = enc.encode(&clip).unwrap();
        for act in pyr.activations.values() {
            let [c, t, h, w] = [act.shape()[0], act.shape()[1], act.shape()[2], act.shape()[3]];
            for ci in 0..c {
                for ti in 1..t {
                    for p in 0..h * w {
                        let a = act.data()[(ci * t) * h * w + p];
                        let b = act.data()[(ci * t + ti) * h * w + p];
                        assert!((a - b).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn wrong_clip_length_is_a_shape_error() {
        let enc = Encoder::<f32>::new(tiny(Pathway::Slow), 0).unwrap();
        assert!(matches!(enc.encode(&random_clip(16, 16, 16, 0)), Err(Error::Shape(_))));
    }

    #[test]
    fn param_count_scales_quadratically_with_width() {
        let base = EncoderConfig::slow_default();
        let doubled = EncoderConfig {
            stage_channels: base.stage_channels.iter().map(|c| 2 * c).collect(),
            ..base.clone()
        };
        let conv_only = |c: &EncoderConfig| count_params(c).unwrap() - 2 * c.stage_channels.iter().sum::<usize>();
        let ratio = conv_only(&doubled) as f64 / conv_only(&base) as f64;
        assert!(ratio > 3.8 && ratio <= 4.0, "ratio {ratio}");
        let empty = EncoderConfig {
            taps: vec![],
            ..base.clone()
        };
        assert!(count_params(&empty).is_err());
        // Documented in the README.
        assert_eq!(count_params(&base).unwrap(), 73_464);
        let enc = Encoder::<f32>::new(base.clone(), 0).unwrap();
        assert_eq!(enc.params().iter().map(|p| p.len()).sum::<usize>(), 73_464);
    }

    #[test]
    fn forward_is_deterministic() {
        let enc = Encoder::<f32>::new(tiny(Pathway::Slow), 4).unwrap();
        let clip = random_clip(8, 16, 16, 8);
        let a = enc.encode(&clip).unwrap();
        let b = enc.encode(&clip).unwrap();
        assert_eq!(a, b);
    }
}
