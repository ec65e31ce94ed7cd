//! Pretraining loop: tempo-pair batches through both encoders and heads,
//! hierarchical loss, SGD under a half-period cosine schedule, bank updates
//! and per-epoch checkpoints.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Container, ContainerKind, FORMAT_VERSION};
use crate::contrastive::{hierarchical_loss, HeadSet, LossConfig, NegativePlan, ProjectionHead};
use crate::encoder::{clips_to_batch, Encoder, EncoderConfig, Mode, Pathway, Tap};
use crate::error::{Error, Result};
use crate::memory_bank::{BankSet, MemoryBank};
use crate::nn::Param;
use crate::optim::{cosine_lr, Sgd};
use crate::seed::{stream_rng, STREAM_CLIP_START, STREAM_EPOCH_ORDER, STREAM_NEGATIVES, STREAM_PARAM_INIT};
use crate::synth_data::{
    check_tempo, instance_discrimination_pair, make_tempo_pair, sample_raw_clip, Dataset, TempoPair,
    RAW_CLIP_FRAMES,
};
use crate::tensor::{Real, Tensor};

/// Largest negative count used at any corpus size.
pub const MAX_NEGATIVES: usize = 16384;

/// How the fast clip of a positive pair is produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pairing {
    /// Slow clip at stride `τ`, fast clip at stride `τ/α`.
    Tempo,
    /// Both encoders receive the same slow clip.
    Instance,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr0: f64,
    pub batch_size: usize,
    pub sgd_momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub temperature: f64,
    pub alpha: usize,
    pub tau: usize,
    pub taps: Vec<Tap>,
    /// One weight per tap; empty means all 1.
    pub level_weights: Vec<f64>,
    pub bank_momentum: f64,
    pub embed_dim: usize,
    /// Negatives per query; 0 means `min(16384, n − 1)`.
    pub negatives: usize,
    pub stage_channels: Vec<usize>,
    pub fast_width: f64,
    pub temporal_kernel: Vec<bool>,
    pub pairing: Pairing,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: 0.03,
            batch_size: 32,
            sgd_momentum: 0.9,
            weight_decay: 1e-4,
            epochs: 50,
            temperature: 0.07,
            alpha: 2,
            tau: 8,
            taps: vec![Tap::Res3, Tap::Res4, Tap::Res5],
            level_weights: Vec::new(),
            bank_momentum: 0.5,
            embed_dim: 128,
            negatives: 0,
            stage_channels: vec![8, 16, 32, 64],
            fast_width: 0.5,
            temporal_kernel: vec![true; 4],
            pairing: Pairing::Tempo,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lr0", self.lr0 >= 0.0),
            ("batch_size", self.batch_size > 0),
            ("temperature", self.temperature > 0.0),
            ("embed_dim", self.embed_dim > 0),
            ("fast_width", self.fast_width > 0.0 && self.fast_width <= 1.0),
            ("sgd_momentum", (0.0..1.0).contains(&self.sgd_momentum)),
            ("weight_decay", self.weight_decay >= 0.0),
            ("bank_momentum", (0.0..=1.0).contains(&self.bank_momentum)),
        ];
        for (key, ok) in positive {
            if !ok {
                return Err(Error::Config(format!("{key} out of range")));
            }
        }
        check_tempo(self.tau, self.alpha)?;
        if self.pairing == Pairing::Instance && self.alpha != 1 {
            return Err(Error::Config("pairing=instance requires alpha=1".into()));
        }
        if !self.level_weights.is_empty() {
            if self.level_weights.len() != self.taps.len() {
                return Err(Error::Config(format!(
                    "level_weights has {} entries for {} taps",
                    self.level_weights.len(),
                    self.taps.len()
                )));
            }
            if self.level_weights.iter().any(|&w| !(w > 0.0)) {
                return Err(Error::Config("level_weights must be positive".into()));
            }
        }
        self.slow_encoder(64, 64, 3).validate()
    }

    pub fn slow_frames(&self) -> usize {
        RAW_CLIP_FRAMES / self.tau
    }

    pub fn fast_frames(&self) -> usize {
        self.alpha * self.slow_frames()
    }

    pub fn slow_encoder(&self, height: usize, width: usize, channels: usize) -> EncoderConfig {
        EncoderConfig {
            pathway: Pathway::Slow,
            stage_channels: self.stage_channels.clone(),
            taps: self.taps.clone(),
            temporal_kernel: self.temporal_kernel.clone(),
            in_channels: channels,
            frames: self.slow_frames(),
            height,
            width,
        }
    }

    pub fn fast_encoder(&self, height: usize, width: usize, channels: usize) -> EncoderConfig {
        EncoderConfig::fast_from(&self.slow_encoder(height, width, channels), self.fast_width, self.fast_frames())
    }

    pub fn loss_config(&self, num_instances: usize) -> LossConfig {
        let negatives = if self.negatives == 0 {
            MAX_NEGATIVES.min(num_instances.saturating_sub(1))
        } else {
            self.negatives
        };
        let levels = self
            .taps
            .iter()
            .enumerate()
            .map(|(i, &t)| (t, self.level_weights.get(i).copied().unwrap_or(1.0)))
            .collect();
        LossConfig {
            temperature: self.temperature,
            negatives,
            levels,
        }
    }

    pub fn steps_per_epoch(&self, num_instances: usize) -> u64 {
        num_instances.div_ceil(self.batch_size) as u64
    }

    pub fn total_steps(&self, num_instances: usize) -> u64 {
        self.epochs as u64 * self.steps_per_epoch(num_instances)
    }
}

/// Everything that evolves during pretraining.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState<R> {
    pub config: TrainConfig,
    pub num_instances: usize,
    pub slow: Encoder<R>,
    pub fast: Encoder<R>,
    pub heads: HeadSet<R>,
    pub banks: BankSet<R>,
    pub optimizer: Sgd<R>,
    pub step: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: u64,
    pub lr: f64,
    pub total: f64,
    pub levels: BTreeMap<Tap, f64>,
}

impl StepMetrics {
    /// `step= lr= loss_total= loss_<tap>=…` with round-trip float formatting.
    pub fn log_line(&self) -> String {
        let mut s = format!("step={} lr={} loss_total={}", self.step, self.lr, self.total);
        for (tap, v) in &self.levels {
            s.push_str(&format!(" loss_{tap}={v}"));
        }
        s
    }
}

fn build_heads<R: Real>(
    config: &TrainConfig,
    slow: &EncoderConfig,
    fast: &EncoderConfig,
) -> HeadSet<R> {
    let mut heads = BTreeMap::new();
    for &tap in &config.taps {
        for (pathway, enc) in [(Pathway::Fast, fast), (Pathway::Slow, slow)] {
            let mut rng = stream_rng(config.seed, STREAM_PARAM_INIT, 100 + 8 * pathway as u64 + tap.stage() as u64);
            heads.insert(
                (pathway, tap),
                ProjectionHead::new(
                    &format!("head.{pathway}.{tap}"),
                    enc.tap_channels(tap),
                    config.embed_dim,
                    &mut rng,
                ),
            );
        }
    }
    HeadSet { heads }
}

impl<R: Real> TrainState<R> {
    /// Fresh state for a corpus of `num_instances` clips of `height×width×channels`.
    pub fn new(config: TrainConfig, num_instances: usize, height: usize, width: usize, channels: usize) -> Result<Self> {
        config.validate()?;
        if num_instances < 2 {
            return Err(Error::Config(format!(
                "need at least 2 instances for negatives, got {num_instances}"
            )));
        }
        config.loss_config(num_instances).validate(num_instances)?;
        let slow_cfg = config.slow_encoder(height, width, channels);
        let fast_cfg = config.fast_encoder(height, width, channels);
        let slow = Encoder::new(slow_cfg.clone(), config.seed)?;
        let fast = Encoder::new(fast_cfg.clone(), config.seed)?;
        let heads = build_heads(&config, &slow_cfg, &fast_cfg);
        let banks = BankSet::new(num_instances, config.embed_dim, config.seed, &config.taps, config.bank_momentum)?;
        let optimizer = Sgd::new(config.sgd_momentum, config.weight_decay);
        Ok(Self {
            config,
            num_instances,
            slow,
            fast,
            heads,
            banks,
            optimizer,
            step: 0,
        })
    }

    pub fn params(&self) -> Vec<&Param<R>> {
        let mut v = self.slow.params();
        v.extend(self.fast.params());
        v.extend(self.heads.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param<R>> {
        let mut v = self.slow.params_mut();
        v.extend(self.fast.params_mut());
        v.extend(self.heads.params_mut());
        v
    }

    pub fn total_steps(&self) -> u64 {
        self.config.total_steps(self.num_instances)
    }

    pub fn steps_per_epoch(&self) -> u64 {
        self.config.steps_per_epoch(self.num_instances)
    }

    /// One SGD step on `Σ_k λ_k (L_f^k + L_s^k)` followed by bank updates.
    pub fn train_step(&mut self, batch: &[TempoPair]) -> Result<StepMetrics> {
        if batch.is_empty() {
            return Err(Error::Config("empty batch".into()));
        }
        let indices: Vec<usize> = batch.iter().map(|p| p.instance_id).collect();
        if indices.iter().collect::<BTreeSet<_>>().len() != indices.len() {
            return Err(Error::Validation("instance ids repeat within a batch".into()));
        }
        let lr = cosine_lr(self.step, self.total_steps(), self.config.lr0);
        let slow_in = clips_to_batch::<R>(&batch.iter().map(|p| &p.slow).collect::<Vec<_>>())?;
        let fast_in = clips_to_batch::<R>(&batch.iter().map(|p| &p.fast).collect::<Vec<_>>())?;
        let (slow_pyr, slow_cache) = self.slow.forward_batch(&slow_in, Mode::Train)?;
        let (fast_pyr, fast_cache) = self.fast.forward_batch(&fast_in, Mode::Train)?;

        let loss_cfg = self.config.loss_config(self.num_instances);
        let mut plans = BTreeMap::new();
        for &tap in loss_cfg.levels.keys() {
            let mut rng = stream_rng(
                self.config.seed,
                STREAM_NEGATIVES,
                self.step * 8 + tap.stage() as u64,
            );
            plans.insert(
                tap,
                NegativePlan::sample(
                    self.banks.get(Pathway::Fast, tap)?,
                    self.banks.get(Pathway::Slow, tap)?,
                    &indices,
                    loss_cfg.negatives,
                    &mut rng,
                )?,
            );
        }
        let loss = hierarchical_loss(&fast_pyr, &slow_pyr, &self.heads, &self.banks, &indices, &plans, &loss_cfg)?;
        if !loss.total.is_finite() {
            let dump = loss
                .levels
                .iter()
                .map(|(tap, l)| {
                    format!(
                        "{tap}: fast_logits={:?} slow_logits={:?}",
                        l.sample_logits[0], l.sample_logits[1]
                    )
                })
                .collect::<Vec<_>>()
                .join("; ");
            return Err(Error::NonFinite { step: self.step, dump });
        }

        self.params_mut().into_iter().for_each(|p| p.zero_grad());
        let grads = loss.backward(&mut self.heads)?;
        self.fast.backward(&fast_cache, &grads.fast)?;
        self.slow.backward(&slow_cache, &grads.slow)?;
        let mut opt = std::mem::replace(&mut self.optimizer, Sgd::new(0.0, 0.0));
        opt.step(self.params_mut(), lr);
        self.optimizer = opt;
        self.fast.update_running_stats(&fast_cache);
        self.slow.update_running_stats(&slow_cache);

        for ((pathway, tap), unit) in loss.unit_embeddings() {
            self.banks.get_mut(pathway, tap)?.update(&indices, &unit)?;
        }

        let metrics = StepMetrics {
            step: self.step,
            lr,
            total: loss.total.f64(),
            levels: loss.levels.iter().map(|(&t, l)| (t, l.total().f64())).collect(),
        };
        self.step += 1;
        Ok(metrics)
    }
}

/// Shuffled instance ids of `epoch`, split into batches.
pub fn epoch_batches(num_instances: usize, batch_size: usize, seed: u64, epoch: u64) -> Vec<Vec<usize>> {
    let mut ids: Vec<usize> = (0..num_instances).collect();
    ids.shuffle(&mut stream_rng(seed, STREAM_EPOCH_ORDER, epoch));
    ids.chunks(batch_size).map(|c| c.to_vec()).collect()
}

/// Positive pair of instance `id` for `epoch`.
pub fn pair_for(dataset: &Dataset, config: &TrainConfig, id: usize, epoch: u64) -> Result<TempoPair> {
    let video = dataset
        .instances
        .get(id)
        .ok_or_else(|| Error::Bounds(format!("instance {id} not in dataset")))?;
    let spare = video.total_frames() - RAW_CLIP_FRAMES;
    let start = if spare > 0 {
        stream_rng(config.seed, STREAM_CLIP_START, epoch * dataset.len() as u64 + id as u64).random_range(0..=spare)
    } else {
        0
    };
    let raw = sample_raw_clip(video, start)?;
    match config.pairing {
        Pairing::Tempo => make_tempo_pair(&raw, config.tau, config.alpha),
        Pairing::Instance => instance_discrimination_pair(&raw, config.tau),
    }
}

#[derive(Clone, Debug, Default)]
pub struct PretrainOptions {
    /// Directory for `train.log` and per-epoch checkpoints.
    pub out_dir: Option<PathBuf>,
    /// Stop after this many completed epochs (total, counting resumed ones).
    pub stop_after_epoch: Option<usize>,
    /// Echo log lines to stdout.
    pub echo: bool,
}

#[derive(Clone, Debug)]
pub struct PretrainOutcome<R> {
    pub state: TrainState<R>,
    pub trace: Vec<StepMetrics>,
}

pub fn pretrain<R: Real>(dataset: &Dataset, config: &TrainConfig, opts: &PretrainOptions) -> Result<PretrainOutcome<R>> {
    let first = dataset
        .instances
        .first()
        .ok_or_else(|| Error::Config("empty dataset".into()))?;
    let state = TrainState::new(config.clone(), dataset.len(), first.height(), first.width(), first.frames.shape()[3])?;
    resume(state, dataset, opts)
}

/// Continue training from `state`, which must sit on an epoch boundary.
pub fn resume<R: Real>(mut state: TrainState<R>, dataset: &Dataset, opts: &PretrainOptions) -> Result<PretrainOutcome<R>> {
    if dataset.len() != state.num_instances {
        return Err(Error::Validation(format!(
            "checkpoint covers {} instances, dataset has {}",
            state.num_instances,
            dataset.len()
        )));
    }
    let per_epoch = state.steps_per_epoch();
    if !state.step.is_multiple_of(per_epoch) {
        return Err(Error::Validation(format!(
            "step {} is not on an epoch boundary ({} steps per epoch)",
            state.step, per_epoch
        )));
    }
    let mut log = match &opts.out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let path = dir.join("train.log");
            Some((
                OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(&path)
                    .map_err(|e| Error::io(&path, e))?,
                path,
            ))
        }
        None => None,
    };
    let last_epoch = opts.stop_after_epoch.unwrap_or(state.config.epochs).min(state.config.epochs);
    let mut trace = Vec::new();
    let start_epoch = (state.step / per_epoch) as usize;
    for epoch in start_epoch..last_epoch {
        for ids in epoch_batches(dataset.len(), state.config.batch_size, state.config.seed, epoch as u64) {
            let batch = ids
                .iter()
                .map(|&id| pair_for(dataset, &state.config, id, epoch as u64))
                .collect::<Result<Vec<_>>>()?;
            let m = state.train_step(&batch)?;
            let line = m.log_line();
            if opts.echo {
                let _ = writeln!(std::io::stdout(), "{line}");
            }
            if let Some((f, path)) = log.as_mut() {
                writeln!(f, "{line}").map_err(|e| Error::io(path.as_path(), e))?;
            }
            trace.push(m);
        }
        if let Some(dir) = &opts.out_dir {
            let c = state.to_container();
            c.save(&dir.join(format!("epoch_{:04}.vtck", epoch + 1)))?;
            c.save(&dir.join("last.vtck"))?;
        }
    }
    if let (Some(dir), true) = (&opts.out_dir, start_epoch >= last_epoch) {
        state.to_container().save(&dir.join("last.vtck"))?;
    }
    Ok(PretrainOutcome { state, trace })
}

#[derive(Serialize, Deserialize)]
struct BankMeta {
    pathway: Pathway,
    level: Tap,
    momentum: f64,
    seed: u64,
}

#[derive(Serialize, Deserialize)]
struct FullMeta {
    format_version: u32,
    step: u64,
    num_instances: usize,
    train_config: TrainConfig,
    slow_encoder: EncoderConfig,
    fast_encoder: EncoderConfig,
    banks: Vec<BankMeta>,
    /// The encoder kept for downstream use.
    export_target: Pathway,
}

#[derive(Serialize, Deserialize)]
struct ExportMeta {
    format_version: u32,
    encoder: EncoderConfig,
}

fn to_f32<R: Real>(shape: &[usize], v: &[R]) -> Tensor<f32> {
    Tensor::from_vec(shape, v.iter().map(|x| x.f64() as f32).collect()).expect("param shape")
}

fn encoder_entries<R: Real>(enc: &Encoder<R>, out: &mut BTreeMap<String, Tensor<f32>>) {
    for p in enc.params() {
        out.insert(format!("param/{}", p.name), to_f32(&p.shape, &p.value));
    }
    for (name, buf) in enc.buffers() {
        out.insert(format!("buffer/{name}"), to_f32(&[buf.len()], buf));
    }
}

fn fill_param<R: Real>(c: &Container, key: &str, shape: &[usize], dst: &mut Vec<R>) -> Result<()> {
    let t = c.tensor(key)?;
    if t.shape() != shape {
        return Err(Error::Validation(format!(
            "entry `{key}` has shape {:?}, expected {:?}",
            t.shape(),
            shape
        )));
    }
    *dst = t.data().iter().map(|&v| R::of(v as f64)).collect();
    Ok(())
}

fn load_encoder<R: Real>(c: &Container, cfg: EncoderConfig) -> Result<Encoder<R>> {
    let mut enc = Encoder::new(cfg, 0)?;
    for p in enc.params_mut() {
        let shape = p.shape.clone();
        fill_param(c, &format!("param/{}", p.name), &shape, &mut p.value)?;
    }
    for (name, buf) in enc.buffers_mut() {
        let len = buf.len();
        fill_param(c, &format!("buffer/{name}"), &[len], buf)?;
    }
    Ok(enc)
}

fn meta<T: for<'de> Deserialize<'de>>(c: &Container) -> Result<T> {
    serde_json::from_value(c.metadata.clone())
        .map_err(|e| Error::Validation(format!("checkpoint metadata: {e}")))
}

impl<R: Real> TrainState<R> {
    pub fn to_container(&self) -> Container {
        let mut tensors = BTreeMap::new();
        encoder_entries(&self.slow, &mut tensors);
        encoder_entries(&self.fast, &mut tensors);
        for p in self.heads.params() {
            tensors.insert(format!("param/{}", p.name), to_f32(&p.shape, &p.value));
        }
        for (name, v) in &self.optimizer.velocity {
            tensors.insert(format!("optim/{name}"), to_f32(&[v.len()], v));
        }
        let mut banks = Vec::new();
        for ((pathway, tap), bank) in &self.banks.banks {
            tensors.insert(
                format!("bank/{pathway}/{tap}"),
                to_f32(&[bank.len(), bank.dim()], bank.rows().data()),
            );
            banks.push(BankMeta {
                pathway: *pathway,
                level: *tap,
                momentum: bank.momentum,
                seed: bank.seed,
            });
        }
        let m = FullMeta {
            format_version: FORMAT_VERSION,
            step: self.step,
            num_instances: self.num_instances,
            train_config: self.config.clone(),
            slow_encoder: self.slow.config.clone(),
            fast_encoder: self.fast.config.clone(),
            banks,
            export_target: Pathway::Slow,
        };
        Container {
            kind: ContainerKind::Full,
            metadata: serde_json::to_value(m).expect("metadata serializes"),
            tensors,
        }
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        if c.kind != ContainerKind::Full {
            return Err(Error::Validation("expected a full training checkpoint".into()));
        }
        let m: FullMeta = meta(c)?;
        let slow = load_encoder(c, m.slow_encoder.clone())?;
        let fast = load_encoder(c, m.fast_encoder.clone())?;
        let mut heads = build_heads::<R>(&m.train_config, &m.slow_encoder, &m.fast_encoder);
        for p in heads.params_mut() {
            let shape = p.shape.clone();
            fill_param(c, &format!("param/{}", p.name), &shape, &mut p.value)?;
        }
        let mut bank_map = BTreeMap::new();
        for b in &m.banks {
            let t = c.tensor(&format!("bank/{}/{}", b.pathway, b.level))?;
            bank_map.insert(
                (b.pathway, b.level),
                MemoryBank::from_rows(t.cast::<R>(), b.momentum, b.pathway, b.level, b.seed)?,
            );
        }
        let mut optimizer = Sgd::new(m.train_config.sgd_momentum, m.train_config.weight_decay);
        for (name, t) in &c.tensors {
            if let Some(p) = name.strip_prefix("optim/") {
                optimizer.velocity.insert(p.to_string(), t.data().iter().map(|&v| R::of(v as f64)).collect());
            }
        }
        Ok(Self {
            config: m.train_config,
            num_instances: m.num_instances,
            slow,
            fast,
            heads,
            banks: BankSet { banks: bank_map },
            optimizer,
            step: m.step,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::load(path)?)
    }
}

/// Slow-encoder-only artifact: parameters, running statistics and config.
pub fn export_container<R: Real>(encoder: &Encoder<R>) -> Container {
    let mut tensors = BTreeMap::new();
    encoder_entries(encoder, &mut tensors);
    Container {
        kind: ContainerKind::SlowEncoder,
        metadata: serde_json::to_value(ExportMeta {
            format_version: FORMAT_VERSION,
            encoder: encoder.config.clone(),
        })
        .expect("metadata serializes"),
        tensors,
    }
}

/// Slow encoder from either a full checkpoint or an export.
pub fn load_slow_encoder<R: Real>(c: &Container) -> Result<Encoder<R>> {
    match c.kind {
        ContainerKind::Full => {
            let m: FullMeta = meta(c)?;
            load_encoder(c, m.slow_encoder)
        }
        ContainerKind::SlowEncoder => {
            let m: ExportMeta = meta(c)?;
            load_encoder(c, m.encoder)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth_data::{generate_dataset, GeneratorConfig};

    pub(crate) fn tiny_config() -> TrainConfig {
        TrainConfig {
            batch_size: 4,
            epochs: 5,
            stage_channels: vec![4, 4, 8, 8],
            embed_dim: 16,
            ..TrainConfig::default()
        }
    }

    fn tiny_data(n: usize) -> Dataset {
        let g = GeneratorConfig {
            height: 16,
            width: 16,
            radius_min: 3.0,
            radius_max: 4.0,
            ..GeneratorConfig::default()
        };
        generate_dataset(n, 0, &g).unwrap()
    }

    #[test]
    fn single_instance_is_rejected() {
        let err = TrainState::<f32>::new(tiny_config(), 1, 16, 16, 3).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn invalid_tempo_is_rejected() {
        let cfg = TrainConfig {
            alpha: 3,
            ..tiny_config()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn zero_lr_steps_leave_params_unchanged() {
        let data = tiny_data(8);
        let cfg = TrainConfig {
            lr0: 0.0,
            ..tiny_config()
        };
        let mut state = TrainState::<f32>::new(cfg.clone(), 8, 16, 16, 3).unwrap();
        let before: Vec<Vec<f32>> = state.params().iter().map(|p| p.value.clone()).collect();
        let batch: Vec<_> = (0..4).map(|i| pair_for(&data, &cfg, i, 0).unwrap()).collect();
        state.train_step(&batch).unwrap();
        let mid: Vec<Vec<f32>> = state.params().iter().map(|p| p.value.clone()).collect();
        state.train_step(&batch).unwrap();
        let after: Vec<Vec<f32>> = state.params().iter().map(|p| p.value.clone()).collect();
        assert_eq!(before, mid);
        assert_eq!(mid, after);
    }

    #[test]
    fn step_touches_only_batch_rows_of_banks() {
        let data = tiny_data(8);
        let cfg = tiny_config();
        let mut state = TrainState::<f32>::new(cfg.clone(), 8, 16, 16, 3).unwrap();
        let banks_before = state.banks.clone();
        let params_before: Vec<Vec<f32>> = state.params().iter().map(|p| p.value.clone()).collect();
        let batch: Vec<_> = [1, 3, 4, 6].iter().map(|&i| pair_for(&data, &cfg, i, 0).unwrap()).collect();
        let m = state.train_step(&batch).unwrap();
        assert!(m.total.is_finite());
        for (key, bank) in &state.banks.banks {
            let old = &banks_before.banks[key];
            for i in 0..8 {
                let same = bank.row(i).unwrap() == old.row(i).unwrap();
                assert_eq!(same, ![1, 3, 4, 6].contains(&i), "{key:?} row {i}");
            }
        }
        let changed = state
            .params()
            .iter()
            .zip(&params_before)
            .filter(|(p, b)| &p.value != *b)
            .count();
        assert_eq!(changed, params_before.len());
    }

    #[test]
    fn initial_loss_is_near_uniform() {
        let data = tiny_data(200);
        let cfg = TrainConfig {
            embed_dim: 128,
            ..tiny_config()
        };
        let mut state = TrainState::<f32>::new(cfg.clone(), 200, 16, 16, 3).unwrap();
        let batch: Vec<_> = (0..8).map(|i| pair_for(&data, &cfg, i, 0).unwrap()).collect();
        let m = state.train_step(&batch).unwrap();
        let uniform = 2.0 * 3.0 * (200f64).ln();
        assert!((m.total - uniform).abs() < 0.2 * uniform, "{} vs {}", m.total, uniform);
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let data = tiny_data(8);
        let cfg = TrainConfig {
            epochs: 1,
            ..tiny_config()
        };
        let mut out = pretrain::<f32>(&data, &cfg, &PretrainOptions::default()).unwrap();
        out.state.params_mut().into_iter().for_each(|p| p.zero_grad());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.vtck");
        out.state.save(&path).unwrap();
        let back = TrainState::<f32>::load(&path).unwrap();
        assert_eq!(back, out.state);
        assert_eq!(back.to_container().to_bytes(), out.state.to_container().to_bytes());
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let data = tiny_data(8);
        let cfg = TrainConfig {
            epochs: 0,
            ..tiny_config()
        };
        let out = pretrain::<f32>(&data, &cfg, &PretrainOptions::default()).unwrap();
        assert!(out.trace.is_empty());
        assert_eq!(out.state, TrainState::new(cfg, 8, 16, 16, 3).unwrap());
    }

    #[test]
    fn log_line_grammar() {
        let m = StepMetrics {
            step: 3,
            lr: 0.5,
            total: 1.25,
            levels: [(Tap::Res4, 0.5), (Tap::Res5, 0.75)].into_iter().collect(),
        };
        assert_eq!(m.log_line(), "step=3 lr=0.5 loss_total=1.25 loss_res4=0.5 loss_res5=0.75");
    }
}
