//! Frozen-encoder linear probes on the generator's shape and speed labels,
//! plus the α × D ablation grid.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::encoder::{Encoder, Tap};
use crate::error::{Error, Result};
use crate::seed::{stream_rng, STREAM_PROBE};
use crate::synth_data::{sample_raw_clip, slow_indices, Dataset, VideoInstance};
use crate::tensor::{Real, Tensor};
use crate::trainer::TrainConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelKind {
    Shape,
    Speed,
}

impl LabelKind {
    pub fn classes(self) -> usize {
        3
    }

    pub fn of(self, video: &VideoInstance) -> usize {
        match self {
            LabelKind::Shape => video.shape_label.index(),
            LabelKind::Speed => video.speed_label.index(),
        }
    }
}

impl fmt::Display for LabelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LabelKind::Shape => "shape",
            LabelKind::Speed => "speed",
        })
    }
}

impl FromStr for LabelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shape" => Ok(LabelKind::Shape),
            "speed" => Ok(LabelKind::Speed),
            _ => Err(Error::Config(format!("unknown label `{s}` (expected shape or speed)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    /// Share of instances held out for testing.
    pub test_fraction: f64,
    /// Slow sampling stride used to build probe clips.
    pub tau: usize,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 1e-4,
            batch_size: 16,
            test_fraction: 0.3,
            tau: 8,
            seed: 0,
        }
    }
}

/// Train/test instance ids.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    /// Seeded shuffle of `0..n`, the last `test_fraction` share held out.
    pub fn random(n: usize, test_fraction: f64, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&test_fraction) || n < 2 {
            return Err(Error::Config(format!(
                "cannot split {n} instances with test_fraction={test_fraction}"
            )));
        }
        let mut ids: Vec<usize> = (0..n).collect();
        ids.shuffle(&mut stream_rng(seed, STREAM_PROBE, 0));
        let test = ((n as f64 * test_fraction).round() as usize).clamp(1, n - 1);
        let train = ids.split_off(test);
        Ok(Self { train, test: ids })
    }

    pub fn check_disjoint(&self) -> Result<()> {
        let train: BTreeSet<_> = self.train.iter().collect();
        if let Some(id) = self.test.iter().find(|id| train.contains(id)) {
            return Err(Error::Validation(format!("instance {id} appears in both train and test splits")));
        }
        Ok(())
    }
}

/// GAP of the final tap of the slow encoder, eval mode.
pub fn extract_representation<R: Real>(encoder: &Encoder<R>, clip: &Tensor<f32>) -> Result<Vec<f64>> {
    let tap = encoder.config.final_tap();
    let pyr = encoder.encode(clip)?;
    let pooled = pyr
        .pooled
        .get(&tap)
        .ok_or_else(|| Error::Config(format!("encoder does not expose {tap}")))?;
    Ok(pooled.iter().map(|v| v.f64()).collect())
}

/// Slow-stride clip starting at frame 0.
pub fn probe_clip(video: &VideoInstance, tau: usize) -> Result<Tensor<f32>> {
    let raw = sample_raw_clip(video, 0)?;
    let per = raw.frames.inner_len();
    let mut data = Vec::new();
    for i in slow_indices(tau) {
        data.extend_from_slice(raw.frames.slab(i));
    }
    let mut shape = raw.frames.shape().to_vec();
    shape[0] = data.len() / per;
    Tensor::from_vec(&shape, data)
}

pub fn encoder_features<R: Real>(encoder: &Encoder<R>, dataset: &Dataset, tau: usize) -> Result<Vec<Vec<f64>>> {
    dataset
        .instances
        .iter()
        .map(|v| extract_representation(encoder, &probe_clip(v, tau)?))
        .collect()
}

/// Per-channel mean intensity of the probe clip; a deliberately weak feature.
pub fn pixel_mean_features(dataset: &Dataset, tau: usize) -> Result<Vec<Vec<f64>>> {
    dataset
        .instances
        .iter()
        .map(|v| {
            let clip = probe_clip(v, tau)?;
            let c = clip.shape()[3];
            let mut sums = vec![0.0; c];
            for px in clip.data().chunks(c) {
                for (s, &x) in sums.iter_mut().zip(px) {
                    *s += x as f64;
                }
            }
            let count = (clip.len() / c) as f64;
            Ok(sums.into_iter().map(|s| s / count).collect())
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub accuracy: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

fn standardize(train: &[&Vec<f64>], all: &[&Vec<f64>]) -> Vec<Vec<f64>> {
    let dim = train[0].len();
    let n = train.len() as f64;
    let mut mean = vec![0.0; dim];
    for x in train {
        for (m, v) in mean.iter_mut().zip(x.iter()) {
            *m += v / n;
        }
    }
    let mut var = vec![0.0; dim];
    for x in train {
        for ((s, v), m) in var.iter_mut().zip(x.iter()).zip(&mean) {
            *s += (v - m).powi(2) / n;
        }
    }
    all.iter()
        .map(|x| {
            x.iter()
                .zip(&mean)
                .zip(&var)
                .map(|((v, m), s)| (v - m) / (s.sqrt() + 1e-8))
                .collect()
        })
        .collect()
}

/// Softmax regression on standardized features, evaluated on the test rows.
pub fn fit_linear_head(
    train_x: &[&Vec<f64>],
    train_y: &[usize],
    test_x: &[&Vec<f64>],
    test_y: &[usize],
    classes: usize,
    config: &ProbeConfig,
) -> Result<ProbeResult> {
    if train_x.is_empty() || test_x.is_empty() {
        return Err(Error::Config("probe needs non-empty train and test sets".into()));
    }
    let dim = train_x[0].len();
    let all: Vec<&Vec<f64>> = train_x.iter().chain(test_x).copied().collect();
    let z = standardize(train_x, &all);
    let (ztrain, ztest) = z.split_at(train_x.len());

    let mut w = vec![0.0f64; classes * (dim + 1)];
    let mut vel = vec![0.0f64; w.len()];
    let mut order: Vec<usize> = (0..ztrain.len()).collect();
    let mut rng = stream_rng(config.seed, STREAM_PROBE, 1);
    let mut probs = vec![0.0; classes];
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size.max(1)) {
            let mut grad = vec![0.0f64; w.len()];
            for &i in chunk {
                logits_into(&w, &ztrain[i], &mut probs);
                softmax_in_place(&mut probs);
                probs[train_y[i]] -= 1.0;
                for (k, p) in probs.iter().enumerate() {
                    let row = &mut grad[k * (dim + 1)..(k + 1) * (dim + 1)];
                    for (g, x) in row.iter_mut().zip(ztrain[i].iter()) {
                        *g += p * x;
                    }
                    row[dim] += p;
                }
            }
            let scale = 1.0 / chunk.len() as f64;
            for ((wv, v), g) in w.iter_mut().zip(vel.iter_mut()).zip(&grad) {
                *v = config.momentum * *v + g * scale + config.weight_decay * *wv;
                *wv -= config.lr * *v;
            }
        }
    }

    let mut confusion = vec![vec![0usize; classes]; classes];
    let mut correct = 0;
    for (x, &y) in ztest.iter().zip(test_y) {
        logits_into(&w, x, &mut probs);
        let pred = argmax(&probs);
        confusion[y][pred] += 1;
        correct += usize::from(pred == y);
    }
    Ok(ProbeResult {
        accuracy: correct as f64 / test_y.len() as f64,
        confusion,
    })
}

fn logits_into(w: &[f64], x: &[f64], out: &mut [f64]) {
    let dim = x.len();
    for (k, o) in out.iter_mut().enumerate() {
        let row = &w[k * (dim + 1)..(k + 1) * (dim + 1)];
        *o = row[..dim].iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + row[dim];
    }
}

fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Test accuracy of always predicting the most frequent training class.
pub fn majority_accuracy(train_y: &[usize], test_y: &[usize], classes: usize) -> f64 {
    let mut counts = vec![0usize; classes];
    for &y in train_y {
        counts[y] += 1;
    }
    let top = (0..classes).max_by_key(|&c| (counts[c], std::cmp::Reverse(c))).unwrap_or(0);
    test_y.iter().filter(|&&y| y == top).count() as f64 / test_y.len() as f64
}

/// Probe `features` (one row per instance) on `label` over `split`.
pub fn probe_features(
    features: &[Vec<f64>],
    dataset: &Dataset,
    split: &Split,
    label: LabelKind,
    config: &ProbeConfig,
) -> Result<ProbeResult> {
    split.check_disjoint()?;
    let pick = |ids: &[usize]| -> Result<(Vec<&Vec<f64>>, Vec<usize>)> {
        ids.iter()
            .map(|&id| {
                let video = dataset
                    .instances
                    .get(id)
                    .ok_or(Error::Lookup { index: id, len: dataset.len() })?;
                let f = features.get(id).ok_or(Error::Lookup { index: id, len: features.len() })?;
                Ok((f, label.of(video)))
            })
            .collect::<Result<Vec<_>>>()
            .map(|v| v.into_iter().unzip())
    };
    let (train_x, train_y) = pick(&split.train)?;
    let (test_x, test_y) = pick(&split.test)?;
    fit_linear_head(&train_x, &train_y, &test_x, &test_y, label.classes(), config)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub label: LabelKind,
    pub accuracy: f64,
    pub confusion: Vec<Vec<usize>>,
    pub random_init_accuracy: f64,
    pub random_init_confusion: Vec<Vec<usize>>,
    pub majority_accuracy: f64,
    pub train_size: usize,
    pub test_size: usize,
    pub fingerprint: String,
}

impl fmt::Display for ProbeReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "label            {}", self.label)?;
        writeln!(f, "accuracy         {:.4}", self.accuracy)?;
        writeln!(f, "random-init      {:.4}", self.random_init_accuracy)?;
        writeln!(f, "majority         {:.4}", self.majority_accuracy)?;
        writeln!(f, "train/test       {}/{}", self.train_size, self.test_size)?;
        writeln!(f, "fingerprint      {}", self.fingerprint)?;
        writeln!(f, "confusion (rows = true class)")?;
        for row in &self.confusion {
            writeln!(f, "  {}", row.iter().map(|c| format!("{c:4}")).collect::<String>())?;
        }
        Ok(())
    }
}

/// FNV-1a over the probe settings and every encoder parameter bit.
pub fn fingerprint<R: Real>(encoder: &Encoder<R>, config: &ProbeConfig, label: LabelKind) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |bytes: &[u8]| {
        for &b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    };
    eat(serde_json::to_string(config).expect("config serializes").as_bytes());
    eat(label.to_string().as_bytes());
    eat(serde_json::to_string(&encoder.config).expect("config serializes").as_bytes());
    for p in encoder.params() {
        for v in &p.value {
            eat(&v.f64().to_bits().to_le_bytes());
        }
    }
    for (_, buf) in encoder.buffers() {
        for v in buf {
            eat(&v.f64().to_bits().to_le_bytes());
        }
    }
    format!("{h:016x}")
}

/// Probe `encoder` and a freshly initialized encoder of the same shape under
/// one protocol.
pub fn linear_probe<R: Real>(
    dataset: &Dataset,
    split: &Split,
    encoder: &Encoder<R>,
    label: LabelKind,
    config: &ProbeConfig,
) -> Result<ProbeReport> {
    split.check_disjoint()?;
    let trained = probe_features(&encoder_features(encoder, dataset, config.tau)?, dataset, split, label, config)?;
    let random = Encoder::<R>::new(encoder.config.clone(), config.seed.wrapping_add(0x5eed))?;
    let baseline = probe_features(&encoder_features(&random, dataset, config.tau)?, dataset, split, label, config)?;
    let labels = |ids: &[usize]| ids.iter().map(|&i| label.of(&dataset.instances[i])).collect::<Vec<_>>();
    Ok(ProbeReport {
        label,
        accuracy: trained.accuracy,
        confusion: trained.confusion,
        random_init_accuracy: baseline.accuracy,
        random_init_confusion: baseline.confusion,
        majority_accuracy: majority_accuracy(&labels(&split.train), &labels(&split.test), label.classes()),
        train_size: split.train.len(),
        test_size: split.test.len(),
        fingerprint: fingerprint(encoder, config, label),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub alpha: usize,
    pub depth: usize,
    pub report: std::result::Result<ProbeReport, String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub label: LabelKind,
    pub cells: Vec<AblationCell>,
    /// Accuracy does not drop as α grows, at every depth.
    pub alpha_trend: bool,
    /// Accuracy does not drop as D grows, at every α.
    pub depth_trend: bool,
}

impl AblationTable {
    pub fn accuracy(&self, alpha: usize, depth: usize) -> Option<f64> {
        self.cells
            .iter()
            .find(|c| c.alpha == alpha && c.depth == depth)
            .and_then(|c| c.report.as_ref().ok())
            .map(|r| r.accuracy)
    }

    /// Tab-separated `alpha depth accuracy random_init majority` rows.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("alpha\tdepth\taccuracy\trandom_init\tmajority\tstatus\n");
        for c in &self.cells {
            match &c.report {
                Ok(r) => s.push_str(&format!(
                    "{}\t{}\t{:.4}\t{:.4}\t{:.4}\tok\n",
                    c.alpha, c.depth, r.accuracy, r.random_init_accuracy, r.majority_accuracy
                )),
                Err(e) => s.push_str(&format!("{}\t{}\t\t\t\terror: {}\n", c.alpha, c.depth, e)),
            }
        }
        s
    }
}

/// Config of grid cell (α, D): taps are the `D` deepest stages.
pub fn cell_config(base: &TrainConfig, alpha: usize, depth: usize) -> Result<TrainConfig> {
    let mut cfg = base.clone();
    cfg.alpha = alpha;
    cfg.taps = Tap::deepest(depth)?;
    cfg.level_weights = Vec::new();
    cfg.validate()?;
    Ok(cfg)
}

/// Train and probe every (α, D) cell. `train` maps a cell config to a slow
/// encoder, which lets callers cache runs shared across cells.
pub fn ablation_suite<F>(
    base: &TrainConfig,
    alphas: &[usize],
    depths: &[usize],
    dataset: &Dataset,
    split: &Split,
    label: LabelKind,
    probe: &ProbeConfig,
    mut train: F,
) -> AblationTable
where
    F: FnMut(&TrainConfig) -> Result<Encoder<f32>>,
{
    let mut cells = Vec::new();
    for &alpha in alphas {
        for &depth in depths {
            let report = cell_config(base, alpha, depth)
                .and_then(|cfg| train(&cfg))
                .and_then(|enc| linear_probe(dataset, split, &enc, label, probe))
                .map_err(|e| e.to_string());
            cells.push(AblationCell { alpha, depth, report });
        }
    }
    let mut table = AblationTable {
        label,
        cells,
        alpha_trend: true,
        depth_trend: true,
    };
    let nondecreasing = |xs: Vec<Option<f64>>| {
        let xs: Vec<f64> = xs.into_iter().flatten().collect();
        xs.windows(2).all(|w| w[1] >= w[0])
    };
    let mut sorted_a = alphas.to_vec();
    sorted_a.sort_unstable();
    let mut sorted_d = depths.to_vec();
    sorted_d.sort_unstable();
    table.alpha_trend = sorted_d
        .iter()
        .all(|&d| nondecreasing(sorted_a.iter().map(|&a| table.accuracy(a, d)).collect()));
    table.depth_trend = sorted_a
        .iter()
        .all(|&a| nondecreasing(sorted_d.iter().map(|&d| table.accuracy(a, d)).collect()));
    table
}

/// Summary of a label's class counts, used in reports.
pub fn class_counts(dataset: &Dataset, ids: &[usize], label: LabelKind) -> BTreeMap<usize, usize> {
    let mut m = BTreeMap::new();
    for &i in ids {
        *m.entry(label.of(&dataset.instances[i])).or_insert(0) += 1;
    }
    m
}
