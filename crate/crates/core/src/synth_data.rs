//! Procedural "moving shapes" videos and the slow/fast tempo-pair sampler.
//!
//! Each instance holds one shape travelling in a straight line and bouncing
//! off the frame walls over a static per-instance noise texture. The shape
//! and speed labels live on [`VideoInstance`] only; [`RawClip`] and
//! [`TempoPair`] carry no labels, so pretraining code cannot read them.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{stream_rng, STREAM_INSTANCE};
use crate::tensor::Tensor;

/// Frames in a raw clip.
pub const RAW_CLIP_FRAMES: usize = 64;

const FRAMES_MAGIC: &[u8; 4] = b"VTCL";
const FRAMES_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeLabel {
    Circle,
    Square,
    Triangle,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpeedLabel {
    Slow,
    Medium,
    Fast,
}

impl ShapeLabel {
    pub const ALL: [ShapeLabel; 3] = [ShapeLabel::Circle, ShapeLabel::Square, ShapeLabel::Triangle];

    pub fn index(self) -> usize {
        self as usize
    }
}

impl SpeedLabel {
    pub const ALL: [SpeedLabel; 3] = [SpeedLabel::Slow, SpeedLabel::Medium, SpeedLabel::Fast];

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub frames: usize,
    /// Standard deviation of the static background texture.
    pub noise_sigma: f64,
    pub background_level: f64,
    pub radius_min: f64,
    pub radius_max: f64,
    /// Pixels per frame for slow, medium and fast instances.
    pub speeds: [f64; 3],
    /// Number of palette colours the shape colour is drawn from.
    pub palette_size: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            channels: 3,
            frames: RAW_CLIP_FRAMES,
            noise_sigma: 0.05,
            background_level: 0.3,
            radius_min: 9.0,
            radius_max: 12.0,
            speeds: [0.25, 0.75, 2.0],
            palette_size: 4,
        }
    }
}

const PALETTE: [[f64; 3]; 6] = [
    [0.95, 0.25, 0.2],
    [0.2, 0.9, 0.3],
    [0.25, 0.45, 0.95],
    [0.95, 0.9, 0.25],
    [0.9, 0.35, 0.9],
    [0.3, 0.9, 0.95],
];

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.height < 16 || self.width < 16 {
            return Err(Error::Config(format!(
                "frame size {}x{} below the 16x16 minimum",
                self.height, self.width
            )));
        }
        if self.frames < RAW_CLIP_FRAMES {
            return Err(Error::Config(format!(
                "frames={} below the raw clip length {}",
                self.frames, RAW_CLIP_FRAMES
            )));
        }
        if self.channels != 1 && self.channels != 3 {
            return Err(Error::Config(format!("channels={} must be 1 or 3", self.channels)));
        }
        if !(self.noise_sigma >= 0.0) || !(0.0..=1.0).contains(&self.background_level) {
            return Err(Error::Config("noise_sigma/background_level out of range".into()));
        }
        let min_side = self.height.min(self.width) as f64;
        if !(self.radius_min > 0.0 && self.radius_min <= self.radius_max && 2.0 * self.radius_max < min_side)
        {
            return Err(Error::Config(format!(
                "radius range [{}, {}] does not fit a {}-pixel frame",
                self.radius_min, self.radius_max, min_side
            )));
        }
        if self.speeds.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Config("speeds must be positive".into()));
        }
        if self.palette_size == 0 || self.palette_size > PALETTE.len() {
            return Err(Error::Config(format!(
                "palette_size must be in 1..={}",
                PALETTE.len()
            )));
        }
        Ok(())
    }
}

/// Trajectory of the single shape in an instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Motion {
    pub start: [f64; 2],
    /// Pixels per frame, (x, y).
    pub velocity: [f64; 2],
    pub radius: f64,
    pub color: [f64; 3],
}

impl Motion {
    /// Shape centre at frame `t` with reflection off the walls.
    pub fn center(&self, t: usize, height: usize, width: usize) -> [f64; 2] {
        let r = self.radius;
        [
            reflect(self.start[0] + self.velocity[0] * t as f64, r, width as f64 - r),
            reflect(self.start[1] + self.velocity[1] * t as f64, r, height as f64 - r),
        ]
    }
}

fn reflect(x: f64, lo: f64, hi: f64) -> f64 {
    let span = hi - lo;
    let y = (x - lo).rem_euclid(2.0 * span);
    if y > span {
        lo + 2.0 * span - y
    } else {
        lo + y
    }
}

fn inside(shape: ShapeLabel, dx: f64, dy: f64, r: f64) -> bool {
    match shape {
        ShapeLabel::Circle => dx * dx + dy * dy <= r * r,
        ShapeLabel::Square => {
            let s = 0.85 * r;
            dx.abs() <= s && dy.abs() <= s
        }
        ShapeLabel::Triangle => {
            // Upward triangle inscribed in the radius-r circle.
            let top = -r;
            let base = 0.5 * r;
            if dy < top || dy > base {
                return false;
            }
            let half = (dy - top) / (base - top) * (r * 3f64.sqrt() / 2.0);
            dx.abs() <= half
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VideoInstance {
    pub instance_id: usize,
    /// `[T_total, H, W, C]`, values in `[0, 1]`.
    pub frames: Tensor<f32>,
    pub shape_label: ShapeLabel,
    pub speed_label: SpeedLabel,
    pub seed: u64,
    pub motion: Motion,
}

impl VideoInstance {
    pub fn total_frames(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.frames.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.frames.shape()[2]
    }

    /// Ground-truth object occupancy of frame `t`, row-major `H×W`.
    pub fn object_mask(&self, t: usize) -> Vec<bool> {
        let (h, w) = (self.height(), self.width());
        render_mask(self.shape_label, &self.motion, t, h, w)
    }
}

fn render_mask(shape: ShapeLabel, motion: &Motion, t: usize, h: usize, w: usize) -> Vec<bool> {
    let [cx, cy] = motion.center(t, h, w);
    let mut mask = vec![false; h * w];
    for y in 0..h {
        for x in 0..w {
            let dx = x as f64 + 0.5 - cx;
            let dy = y as f64 + 0.5 - cy;
            mask[y * w + x] = inside(shape, dx, dy, motion.radius);
        }
    }
    mask
}

/// Labels for instance `i`: a fixed walk over the 3×3 (shape, speed) grid.
pub fn labels_for(instance_id: usize) -> (ShapeLabel, SpeedLabel) {
    let cell = instance_id % 9;
    (ShapeLabel::ALL[cell / 3], SpeedLabel::ALL[cell % 3])
}

pub fn generate_instance(config: &GeneratorConfig, seed: u64, instance_id: usize) -> Result<VideoInstance> {
    config.validate()?;
    let (shape_label, speed_label) = labels_for(instance_id);
    let mut rng = stream_rng(seed, STREAM_INSTANCE, instance_id as u64);
    let (h, w, c, t_total) = (config.height, config.width, config.channels, config.frames);

    let radius = rng.random_range(config.radius_min..=config.radius_max);
    let start = [
        rng.random_range(radius..=(w as f64 - radius)),
        rng.random_range(radius..=(h as f64 - radius)),
    ];
    let angle = rng.random_range(0.0..std::f64::consts::TAU);
    let speed = config.speeds[speed_label.index()];
    let velocity = [speed * angle.cos(), speed * angle.sin()];
    let color = PALETTE[rng.random_range(0..config.palette_size)];
    let motion = Motion {
        start,
        velocity,
        radius,
        color,
    };

    let normal = Normal::new(0.0, config.noise_sigma.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::Config(e.to_string()))?;
    let texture: Vec<f64> = (0..h * w * c)
        .map(|_| {
            if config.noise_sigma > 0.0 {
                normal.sample(&mut rng)
            } else {
                0.0
            }
        })
        .collect();

    let mut data = Vec::with_capacity(t_total * h * w * c);
    for t in 0..t_total {
        let mask = render_mask(shape_label, &motion, t, h, w);
        for (p, &on) in mask.iter().enumerate() {
            for ch in 0..c {
                let v = if on {
                    if c == 1 {
                        color.iter().sum::<f64>() / 3.0
                    } else {
                        color[ch]
                    }
                } else {
                    config.background_level + texture[p * c + ch]
                };
                data.push(v.clamp(0.0, 1.0) as f32);
            }
        }
    }
    Ok(VideoInstance {
        instance_id,
        frames: Tensor::from_vec(&[t_total, h, w, c], data)?,
        shape_label,
        speed_label,
        seed,
        motion,
    })
}

/// Generate `num_instances` instances with balanced labels.
pub fn generate_dataset(num_instances: usize, seed: u64, config: &GeneratorConfig) -> Result<Dataset> {
    if num_instances == 0 {
        return Err(Error::Config("num_instances must be at least 1".into()));
    }
    config.validate()?;
    let instances = (0..num_instances)
        .map(|i| generate_instance(config, seed, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        config: config.clone(),
        seed,
        instances,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct RawClip {
    /// `[64, H, W, C]`.
    pub frames: Tensor<f32>,
    pub instance_id: usize,
    pub start_frame: usize,
}

pub fn sample_raw_clip(video: &VideoInstance, start: usize) -> Result<RawClip> {
    let total = video.total_frames();
    if start + RAW_CLIP_FRAMES > total {
        return Err(Error::Bounds(format!(
            "start {} + {} exceeds {} frames",
            start, RAW_CLIP_FRAMES, total
        )));
    }
    let per = video.frames.inner_len();
    let data = video.frames.data()[start * per..(start + RAW_CLIP_FRAMES) * per].to_vec();
    let mut shape = video.frames.shape().to_vec();
    shape[0] = RAW_CLIP_FRAMES;
    Ok(RawClip {
        frames: Tensor::from_vec(&shape, data)?,
        instance_id: video.instance_id,
        start_frame: start,
    })
}

/// Slow/fast positive pair re-sampled from one raw clip.
#[derive(Clone, Debug, PartialEq)]
pub struct TempoPair {
    /// `[64 / tau, H, W, C]`.
    pub slow: Tensor<f32>,
    /// `[alpha * 64 / tau, H, W, C]`.
    pub fast: Tensor<f32>,
    pub instance_id: usize,
    pub alpha: usize,
    pub tau: usize,
}

pub fn check_tempo(tau: usize, alpha: usize) -> Result<()> {
    if tau == 0 || !RAW_CLIP_FRAMES.is_multiple_of(tau) {
        return Err(Error::Config(format!("tau={} must divide {}", tau, RAW_CLIP_FRAMES)));
    }
    if alpha == 0 || !tau.is_multiple_of(alpha) {
        return Err(Error::Config(format!("alpha={} must divide tau={}", alpha, tau)));
    }
    Ok(())
}

pub fn slow_indices(tau: usize) -> Vec<usize> {
    (0..RAW_CLIP_FRAMES / tau).map(|j| j * tau).collect()
}

pub fn fast_indices(tau: usize, alpha: usize) -> Vec<usize> {
    let stride = tau / alpha;
    (0..alpha * RAW_CLIP_FRAMES / tau).map(|j| j * stride).collect()
}

fn gather_frames(frames: &Tensor<f32>, idx: &[usize]) -> Tensor<f32> {
    let per = frames.inner_len();
    let mut data = Vec::with_capacity(idx.len() * per);
    for &i in idx {
        data.extend_from_slice(frames.slab(i));
    }
    let mut shape = frames.shape().to_vec();
    shape[0] = idx.len();
    Tensor::from_vec(&shape, data).expect("gathered size matches")
}

pub fn make_tempo_pair(raw: &RawClip, tau: usize, alpha: usize) -> Result<TempoPair> {
    check_tempo(tau, alpha)?;
    Ok(TempoPair {
        slow: gather_frames(&raw.frames, &slow_indices(tau)),
        fast: gather_frames(&raw.frames, &fast_indices(tau, alpha)),
        instance_id: raw.instance_id,
        alpha,
        tau,
    })
}

/// Instance-discrimination input: both encoders see the identical slow clip.
pub fn instance_discrimination_pair(raw: &RawClip, tau: usize) -> Result<TempoPair> {
    check_tempo(tau, 1)?;
    let slow = gather_frames(&raw.frames, &slow_indices(tau));
    Ok(TempoPair {
        fast: slow.clone(),
        slow,
        instance_id: raw.instance_id,
        alpha: 1,
        tau,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub config: GeneratorConfig,
    pub seed: u64,
    pub instances: Vec<VideoInstance>,
}

#[derive(Serialize, Deserialize)]
struct InstanceMeta {
    instance_id: usize,
    shape_label: ShapeLabel,
    speed_label: SpeedLabel,
    seed: u64,
    motion: Motion,
}

#[derive(Serialize, Deserialize)]
struct DatasetMeta {
    num_instances: usize,
    seed: u64,
    generator: GeneratorConfig,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn instance_dir(root: &Path, id: usize) -> PathBuf {
        root.join(format!("instance_{:05}", id))
    }

    pub fn save(&self, root: &Path) -> Result<()> {
        fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        let meta = DatasetMeta {
            num_instances: self.instances.len(),
            seed: self.seed,
            generator: self.config.clone(),
        };
        write_json(&root.join("dataset.json"), &meta)?;
        for inst in &self.instances {
            let dir = Self::instance_dir(root, inst.instance_id);
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            write_frames(&dir.join("frames.bin"), &inst.frames)?;
            write_json(
                &dir.join("meta.json"),
                &InstanceMeta {
                    instance_id: inst.instance_id,
                    shape_label: inst.shape_label,
                    speed_label: inst.speed_label,
                    seed: inst.seed,
                    motion: inst.motion.clone(),
                },
            )?;
        }
        Ok(())
    }

    pub fn load(root: &Path) -> Result<Self> {
        let meta: DatasetMeta = read_json(&root.join("dataset.json"))?;
        let mut instances = Vec::with_capacity(meta.num_instances);
        for id in 0..meta.num_instances {
            let dir = Self::instance_dir(root, id);
            let im: InstanceMeta = read_json(&dir.join("meta.json"))?;
            let frames = read_frames(&dir.join("frames.bin"))?;
            instances.push(VideoInstance {
                instance_id: im.instance_id,
                frames,
                shape_label: im.shape_label,
                speed_label: im.speed_label,
                seed: im.seed,
                motion: im.motion,
            });
        }
        Ok(Self {
            config: meta.generator,
            seed: meta.seed,
            instances,
        })
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::format(path, e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

/// Write a `[T, H, W, C]` tensor as `frames.bin`.
///
/// Layout (little-endian): `b"VTCL"`, `u32` version, `u32` T, H, W, C, then
/// `T·H·W·C` `f32` values in row-major order.
pub fn write_frames(path: &Path, frames: &Tensor<f32>) -> Result<()> {
    if frames.shape().len() != 4 {
        return Err(Error::Shape(format!("frames must be 4-d, got {:?}", frames.shape())));
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut put = |bytes: &[u8]| w.write_all(bytes).map_err(|e| Error::io(path, e));
    put(FRAMES_MAGIC)?;
    put(&FRAMES_VERSION.to_le_bytes())?;
    for &d in frames.shape() {
        put(&(d as u32).to_le_bytes())?;
    }
    for v in frames.data() {
        put(&v.to_le_bytes())?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_frames(path: &Path) -> Result<Tensor<f32>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    BufReader::new(file)
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < 24 || &bytes[0..4] != FRAMES_MAGIC {
        return Err(Error::format(path, "missing VTCL header"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
    if word(0) != FRAMES_VERSION {
        return Err(Error::format(path, format!("unsupported version {}", word(0))));
    }
    let shape: Vec<usize> = (1..5).map(|i| word(i) as usize).collect();
    let n: usize = shape.iter().product();
    let payload = &bytes[24..];
    if payload.len() != 4 * n {
        return Err(Error::format(
            path,
            format!("payload has {} bytes, expected {}", payload.len(), 4 * n),
        ));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Tensor::from_vec(&shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn small() -> GeneratorConfig {
        GeneratorConfig {
            height: 16,
            width: 16,
            radius_min: 3.0,
            radius_max: 4.0,
            ..GeneratorConfig::default()
        }
    }

    #[test]
    fn nine_instances_cover_the_label_grid() {
        let ds = generate_dataset(9, 0, &small()).unwrap();
        let cells: std::collections::BTreeSet<_> =
            ds.instances.iter().map(|v| (v.shape_label, v.speed_label)).collect();
        assert_eq!(cells.len(), 9);
    }

    #[test]
    fn regeneration_is_bit_identical() {
        let a = generate_dataset(9, 0, &small()).unwrap();
        let b = generate_dataset(9, 0, &small()).unwrap();
        for (x, y) in a.instances.iter().zip(&b.instances) {
            let xb: Vec<u32> = x.frames.data().iter().map(|v| v.to_bits()).collect();
            let yb: Vec<u32> = y.frames.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(xb, yb);
        }
        let c = generate_dataset(9, 1, &small()).unwrap();
        assert_ne!(a.instances[0].frames, c.instances[0].frames);
    }

    #[test]
    fn class_counts_are_balanced_for_200() {
        let mut counts = BTreeMap::new();
        for i in 0..200 {
            *counts.entry(labels_for(i)).or_insert(0usize) += 1;
        }
        assert_eq!(counts.len(), 9);
        let ideal = 200.0 / 9.0;
        for (_, c) in counts {
            assert!((c as f64 - ideal).abs() <= 1.0, "count {c}");
        }
    }

    #[test]
    fn pixels_in_unit_range_and_min_size_enforced() {
        let v = generate_instance(&small(), 3, 4).unwrap();
        assert!(v.frames.data().iter().all(|&p| (0.0..=1.0).contains(&p)));
        let bad = GeneratorConfig {
            height: 8,
            ..small()
        };
        assert!(matches!(generate_dataset(1, 0, &bad), Err(Error::Config(_))));
        assert!(matches!(generate_dataset(0, 0, &small()), Err(Error::Config(_))));
    }

    #[test]
    fn raw_clip_bounds() {
        let cfg = GeneratorConfig {
            frames: 128,
            ..small()
        };
        let v = generate_instance(&cfg, 0, 0).unwrap();
        let clip = sample_raw_clip(&v, 64).unwrap();
        assert_eq!(clip.frames.data(), &v.frames.data()[64 * v.frames.inner_len()..]);
        let full = generate_instance(&small(), 0, 0).unwrap();
        assert_eq!(sample_raw_clip(&full, 0).unwrap().frames, full.frames);
        let cfg = GeneratorConfig {
            frames: 100,
            ..small()
        };
        let v = generate_instance(&cfg, 0, 0).unwrap();
        assert!(matches!(sample_raw_clip(&v, 40), Err(Error::Bounds(_))));
    }

    #[test]
    fn tempo_pair_strides() {
        assert_eq!(slow_indices(8), (0..8).map(|j| 8 * j).collect::<Vec<_>>());
        assert_eq!(fast_indices(8, 2), (0..16).map(|j| 4 * j).collect::<Vec<_>>());
        assert_eq!(fast_indices(8, 4), (0..32).map(|j| 2 * j).collect::<Vec<_>>());
        let v = generate_instance(&small(), 0, 5).unwrap();
        let raw = sample_raw_clip(&v, 0).unwrap();
        let pair = make_tempo_pair(&raw, 8, 2).unwrap();
        assert_eq!(pair.slow.shape()[0], 8);
        assert_eq!(pair.fast.shape()[0], 16);
        for j in 0..8 {
            assert_eq!(pair.slow.slab(j), raw.frames.slab(8 * j));
        }
        for j in 0..16 {
            assert_eq!(pair.fast.slab(j), raw.frames.slab(4 * j));
        }
        let same = make_tempo_pair(&raw, 8, 1).unwrap();
        assert_eq!(same.slow, same.fast);
        assert_eq!(same, instance_discrimination_pair(&raw, 8).unwrap());
        assert!(matches!(make_tempo_pair(&raw, 8, 3), Err(Error::Config(_))));
        assert!(matches!(make_tempo_pair(&raw, 6, 1), Err(Error::Config(_))));
    }

    #[test]
    fn reflect_stays_in_bounds() {
        for i in 0..500 {
            let x = -300.0 + i as f64 * 1.37;
            let y = reflect(x, 5.0, 20.0);
            assert!((5.0..=20.0).contains(&y));
        }
        assert_eq!(reflect(22.0, 5.0, 20.0), 18.0);
    }

    #[test]
    fn frames_file_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let ds = generate_dataset(3, 11, &small()).unwrap();
        ds.save(dir.path()).unwrap();
        let back = Dataset::load(dir.path()).unwrap();
        assert_eq!(back, ds);
        let bytes = fs::read(dir.path().join("instance_00000/frames.bin")).unwrap();
        assert_eq!(&bytes[0..4], b"VTCL");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 64);
        assert_eq!(bytes.len(), 24 + 4 * 64 * 16 * 16 * 3);
    }

    #[test]
    fn mask_matches_rendered_pixels() {
        let v = generate_instance(&small(), 2, 1).unwrap();
        let mask = v.object_mask(10);
        let frame = v.frames.slab(10);
        let color = v.motion.color;
        for (p, &on) in mask.iter().enumerate() {
            if on {
                assert_eq!(frame[p * 3], color[0] as f32);
            }
        }
        assert!(mask.iter().any(|&m| m));
    }
}
