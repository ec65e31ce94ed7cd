//! Instance correspondence maps: every location of one pathway's pre-pool
//! activation is projected through that pathway's head and compared with the
//! other pathway's pooled embedding.

use std::fs;
use std::path::{Path, PathBuf};

use crate::contrastive::{HeadSet, ProjectionHead};
use crate::encoder::{Encoder, Pathway, Tap};
use crate::error::{Error, Result};
use crate::synth_data::{fast_indices, slow_indices, TempoPair, VideoInstance};
use crate::tensor::{dot, normalize_in_place, Real, Tensor};

/// Floor on the outside-mask mean in [`localization_score`].
pub const SCORE_EPSILON: f64 = 1e-6;

/// Weight of the heat colour in rendered overlays; a zero map leaves
/// `(1 − OVERLAY_ALPHA) · frame`.
pub const OVERLAY_ALPHA: f64 = 0.5;

const HEAT_COLOR: [f64; 3] = [1.0, 0.15, 0.0];

#[derive(Clone, Debug, PartialEq)]
pub struct CorrespondenceMap {
    /// `[T', H', W']` cosine (or raw inner-product) values.
    pub values: Tensor<f64>,
    /// `values` min-max scaled over the whole clip, or zeros when flat.
    pub normalized: Tensor<f64>,
    pub instance_id: usize,
    /// Pathway whose pooled embedding is the reference.
    pub reference: Pathway,
    pub tap: Tap,
    /// Raw-clip frame index of each map frame.
    pub frame_indices: Vec<usize>,
}

/// `normalize(φ(activation[:, t, h, w]))·reference` at every location.
/// `head = None` uses the identity projection; `normalize = false` skips the
/// per-location normalization.
pub fn compute_icm<R: Real>(
    activation: &Tensor<R>,
    reference: &[R],
    head: Option<&ProjectionHead<R>>,
    normalize: bool,
) -> Result<Tensor<f64>> {
    let s = activation.shape();
    if s.len() != 4 {
        return Err(Error::Shape(format!("activation must be [C, T, H, W], got {s:?}")));
    }
    let (c, locs) = (s[0], s[1] * s[2] * s[3]);
    if let Some(h) = head {
        if h.input_dim() != c {
            return Err(Error::Shape(format!(
                "activation has {c} channels, head expects {}",
                h.input_dim()
            )));
        }
    }
    let mut rows = vec![R::zero(); locs * c];
    for ch in 0..c {
        for (l, &v) in activation.data()[ch * locs..(ch + 1) * locs].iter().enumerate() {
            rows[l * c + ch] = v;
        }
    }
    let rows = Tensor::from_vec(&[locs, c], rows)?;
    let projected = match head {
        Some(h) => h.forward(&rows)?.0,
        None => rows,
    };
    let d = projected.shape()[1];
    if reference.len() != d {
        return Err(Error::Shape(format!(
            "reference has length {}, projection has width {d}",
            reference.len()
        )));
    }
    let mut r = reference.to_vec();
    normalize_in_place(&mut r);
    let mut values = Vec::with_capacity(locs);
    for row in projected.data().chunks(d) {
        let mut v = row.to_vec();
        if normalize {
            normalize_in_place(&mut v);
        }
        values.push(dot(&v, &r).f64());
    }
    Tensor::from_vec(&s[1..], values)
}

/// `(v − min)/(max − min)` over the whole tensor, zeros when flat.
pub fn min_max(values: &Tensor<f64>) -> Tensor<f64> {
    let lo = values.data().iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        values.map(|v| (v - lo) / (hi - lo))
    } else {
        values.map(|_| 0.0)
    }
}

/// Map on the non-reference pathway of `pair` at `tap`.
pub fn pair_icm<R: Real>(
    slow: &Encoder<R>,
    fast: &Encoder<R>,
    heads: &HeadSet<R>,
    pair: &TempoPair,
    tap: Tap,
    reference: Pathway,
    normalize: bool,
) -> Result<CorrespondenceMap> {
    let slow_pyr = slow.encode(&pair.slow)?;
    let fast_pyr = fast.encode(&pair.fast)?;
    let pyr = |p: Pathway| if p == Pathway::Slow { &slow_pyr } else { &fast_pyr };
    let target = reference.other();
    let pooled = pyr(reference)
        .pooled
        .get(&tap)
        .ok_or_else(|| Error::Config(format!("{reference} encoder does not expose {tap}")))?;
    let pooled = Tensor::from_vec(&[1, pooled.len()], pooled.clone())?;
    let mut reference_emb = heads.get(reference, tap)?.forward(&pooled)?.0.into_data();
    normalize_in_place(&mut reference_emb);
    let activation = pyr(target)
        .activations
        .get(&tap)
        .ok_or_else(|| Error::Config(format!("{target} encoder does not expose {tap}")))?;
    let values = compute_icm(activation, &reference_emb, Some(heads.get(target, tap)?), normalize)?;
    let frame_indices = match target {
        Pathway::Slow => slow_indices(pair.tau),
        Pathway::Fast => fast_indices(pair.tau, pair.alpha),
    };
    Ok(CorrespondenceMap {
        normalized: min_max(&values),
        values,
        instance_id: pair.instance_id,
        reference,
        tap,
        frame_indices,
    })
}

/// Map of the slow clip against its own pooled feature with identity
/// projection; the only variant available from a slow-encoder export.
pub fn self_reference_icm<R: Real>(
    slow: &Encoder<R>,
    clip: &Tensor<f32>,
    instance_id: usize,
    tau: usize,
    normalize: bool,
) -> Result<CorrespondenceMap> {
    let tap = slow.config.final_tap();
    let pyr = slow.encode(clip)?;
    let values = compute_icm(&pyr.activations[&tap], &pyr.pooled[&tap], None, normalize)?;
    Ok(CorrespondenceMap {
        normalized: min_max(&values),
        values,
        instance_id,
        reference: Pathway::Slow,
        tap,
        frame_indices: slow_indices(tau),
    })
}

/// Fraction of each map cell covered by `mask` (`H×W`, row-major).
pub fn downsample_mask(mask: &[bool], height: usize, width: usize, mh: usize, mw: usize) -> Vec<f64> {
    let mut sums = vec![0.0; mh * mw];
    let mut counts = vec![0.0; mh * mw];
    for y in 0..height {
        for x in 0..width {
            let cell = (y * mh / height) * mw + x * mw / width;
            counts[cell] += 1.0;
            if mask[y * width + x] {
                sums[cell] += 1.0;
            }
        }
    }
    sums.iter().zip(&counts).map(|(s, c)| s / c).collect()
}

/// Coverage-weighted mean of `normalized` inside the mask divided by the mean
/// outside it, the latter floored at [`SCORE_EPSILON`].
pub fn localization_score(normalized: &Tensor<f64>, coverage: &[f64]) -> Result<f64> {
    if coverage.len() != normalized.len() {
        return Err(Error::Shape(format!(
            "mask has {} cells, map has {}",
            coverage.len(),
            normalized.len()
        )));
    }
    let (mut win, mut vin, mut wout, mut vout) = (0.0, 0.0, 0.0, 0.0);
    for (&m, &v) in coverage.iter().zip(normalized.data()) {
        win += m;
        vin += m * v;
        wout += 1.0 - m;
        vout += (1.0 - m) * v;
    }
    if win <= 0.0 {
        return Err(Error::Degenerate("object mask is empty at map resolution".into()));
    }
    if wout <= 0.0 {
        return Err(Error::Degenerate("object mask covers the whole map".into()));
    }
    Ok((vin / win) / (vout / wout).max(SCORE_EPSILON))
}

/// Score of `map` against the instance's ground-truth object masks, using
/// the raw clip starting at `start`.
pub fn score_against(map: &CorrespondenceMap, video: &VideoInstance, start: usize) -> Result<f64> {
    let s = map.normalized.shape();
    let (mh, mw) = (s[1], s[2]);
    let mut coverage = Vec::with_capacity(map.normalized.len());
    for &f in &map.frame_indices {
        coverage.extend(downsample_mask(&video.object_mask(start + f), video.height(), video.width(), mh, mw));
    }
    localization_score(&map.normalized, &coverage)
}

/// Bilinear (half-pixel centred) upsampling of one `[h, w]` plane.
pub fn upsample_bilinear(plane: &[f64], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f64> {
    let sample = |i: usize, out: usize, n: usize| {
        let p = ((i as f64 + 0.5) * n as f64 / out as f64 - 0.5).clamp(0.0, (n - 1) as f64);
        let i0 = p.floor() as usize;
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, p - i0 as f64)
    };
    let mut out = Vec::with_capacity(out_h * out_w);
    for y in 0..out_h {
        let (y0, y1, fy) = sample(y, out_h, h);
        for x in 0..out_w {
            let (x0, x1, fx) = sample(x, out_w, w);
            let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
            let bottom = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    out
}

/// Overlay of map frame `t` on `frame` (`[H, W, C]`) as 8-bit RGB.
pub fn overlay_frame(map: &CorrespondenceMap, t: usize, frame: &[f32], height: usize, width: usize, channels: usize) -> Vec<u8> {
    let s = map.normalized.shape();
    let heat = upsample_bilinear(map.normalized.slab(t), s[1], s[2], height, width);
    let mut out = Vec::with_capacity(height * width * 3);
    for (p, &v) in heat.iter().enumerate() {
        for (k, &hc) in HEAT_COLOR.iter().enumerate() {
            let src = frame[p * channels + k.min(channels - 1)] as f64;
            let mixed = (1.0 - OVERLAY_ALPHA) * src + OVERLAY_ALPHA * v * hc;
            out.push((mixed.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    out
}

/// Writes `frame_000.png …` plus `icm.json` into `out_dir`.
pub fn render_icm(map: &CorrespondenceMap, source: &Tensor<f32>, start: usize, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let s = source.shape();
    let (height, width, channels) = (s[1], s[2], s[3]);
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();
    for (t, &f) in map.frame_indices.iter().enumerate() {
        let idx = start + f;
        if idx >= s[0] {
            return Err(Error::Bounds(format!("frame {idx} outside {} source frames", s[0])));
        }
        let rgb = overlay_frame(map, t, source.slab(idx), height, width, channels);
        let path = out_dir.join(format!("frame_{t:03}.png"));
        write_png(&path, &rgb, width, height)?;
        written.push(path);
    }
    Ok(written)
}

fn write_png(path: &Path, rgb: &[u8], width: usize, height: usize) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(std::io::BufWriter::new(file), width as u32, height as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut w = enc.write_header().map_err(|e| Error::format(path, e.to_string()))?;
    w.write_image_data(rgb).map_err(|e| Error::format(path, e.to_string()))?;
    w.finish().map_err(|e| Error::format(path, e.to_string()))
}

/// `1 − cos` between the normalized mean of projected locations and the
/// projection of the pooled activation.
pub fn gap_deviation<R: Real>(activation: &Tensor<R>, head: Option<&ProjectionHead<R>>) -> Result<f64> {
    let s = activation.shape();
    let (c, locs) = (s[0], s[1] * s[2] * s[3]);
    let mut rows = vec![R::zero(); locs * c];
    let mut pooled = vec![R::zero(); c];
    for ch in 0..c {
        for (l, &v) in activation.data()[ch * locs..(ch + 1) * locs].iter().enumerate() {
            rows[l * c + ch] = v;
            pooled[ch] += v / R::of(locs as f64);
        }
    }
    let project = |x: Tensor<R>| -> Result<Tensor<R>> {
        match head {
            Some(h) => Ok(h.forward(&x)?.0),
            None => Ok(x),
        }
    };
    let proj_rows = project(Tensor::from_vec(&[locs, c], rows)?)?;
    let d = proj_rows.shape()[1];
    let mut mean = vec![R::zero(); d];
    for row in proj_rows.data().chunks(d) {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v / R::of(locs as f64);
        }
    }
    let mut gap = project(Tensor::from_vec(&[1, c], pooled)?)?.into_data();
    normalize_in_place(&mut mean);
    normalize_in_place(&mut gap);
    Ok(1.0 - dot(&mean, &gap).f64())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Linear;

    fn identity_head(c: usize) -> ProjectionHead<f64> {
        let eye = |name: &str| {
            let mut rng = crate::seed::stream_rng(0, 0, 0);
            let mut l = Linear::<f64>::new(name, c, c, &mut rng);
            for i in 0..c {
                for j in 0..c {
                    l.weight.value[i * c + j] = if i == j { 1.0 } else { 0.0 };
                }
            }
            l.bias.value.iter_mut().for_each(|b| *b = 0.0);
            l
        };
        ProjectionHead {
            fc1: eye("fc1"),
            fc2: eye("fc2"),
        }
    }

    #[test]
    fn parallel_constant_activation_gives_ones() {
        let act = Tensor::from_vec(&[2, 2, 2, 2], [vec![0.6; 8], vec![0.8; 8]].concat()).unwrap();
        let head = identity_head(2);
        let v = compute_icm(&act, &[3.0, 4.0], Some(&head), true).unwrap();
        assert!(v.data().iter().all(|&x| (x - 1.0).abs() < 1e-12));
        assert!(min_max(&v).data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn orthogonal_reference_gives_zeros() {
        let act = Tensor::from_vec(&[2, 1, 2, 2], vec![0.3, 1.0, 2.0, 0.5, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let v = compute_icm(&act, &[0.0, 1.0], Some(&identity_head(2)), true).unwrap();
        assert!(v.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn hand_filled_map() {
        let act = Tensor::from_vec(&[2, 1, 2, 2], vec![1.0, 0.0, 3.0, 1.0, 0.0, 2.0, 4.0, 1.0]).unwrap();
        let v = compute_icm(&act, &[1.0, 0.0], Some(&identity_head(2)), true).unwrap();
        let expect = [1.0, 0.0, 0.6, 1.0 / 2f64.sqrt()];
        for (a, b) in v.data().iter().zip(expect) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
        assert_eq!(v.shape(), &[1, 2, 2]);
        let raw = compute_icm(&act, &[2.0, 0.0], None, false).unwrap();
        assert_eq!(raw.data(), &[1.0, 0.0, 3.0, 1.0]);
    }

    #[test]
    fn channel_mismatch_is_a_shape_error() {
        let act = Tensor::<f64>::zeros(&[3, 1, 2, 2]);
        let err = compute_icm(&act, &[1.0, 0.0], Some(&identity_head(2)), true).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
    }

    #[test]
    fn scores_of_reference_maps() {
        let uniform = Tensor::from_vec(&[1, 2, 2], vec![0.4; 4]).unwrap();
        let mask = [1.0, 0.0, 0.0, 0.0];
        assert!((localization_score(&uniform, &mask).unwrap() - 1.0).abs() < 1e-12);
        let same = Tensor::from_vec(&[1, 2, 2], mask.to_vec()).unwrap();
        assert_eq!(localization_score(&same, &mask).unwrap(), 1.0 / SCORE_EPSILON);
        let err = localization_score(&uniform, &[0.0; 4]).unwrap_err();
        assert!(matches!(err, Error::Degenerate(_)));
    }

    #[test]
    fn mask_downsampling_averages_blocks() {
        let mut mask = vec![false; 16];
        mask[0] = true;
        mask[1] = true;
        mask[4] = true;
        mask[5] = true;
        mask[15] = true;
        let cov = downsample_mask(&mask, 4, 4, 2, 2);
        assert_eq!(cov, vec![1.0, 0.0, 0.0, 0.25]);
    }

    fn map_of(values: Vec<f64>, h: usize, w: usize) -> CorrespondenceMap {
        let v = Tensor::from_vec(&[1, h, w], values).unwrap();
        CorrespondenceMap {
            normalized: min_max(&v),
            values: v,
            instance_id: 0,
            reference: Pathway::Fast,
            tap: Tap::Res5,
            frame_indices: vec![0],
        }
    }

    #[test]
    fn zero_map_leaves_scaled_source() {
        let map = map_of(vec![0.0; 4], 2, 2);
        let frame: Vec<f32> = (0..8 * 8 * 3).map(|i| (i % 7) as f32 / 7.0).collect();
        let out = overlay_frame(&map, 0, &frame, 8, 8, 3);
        for (o, f) in out.iter().zip(&frame) {
            assert_eq!(*o, (((1.0 - OVERLAY_ALPHA) * *f as f64) * 255.0).round() as u8);
        }
    }

    #[test]
    fn single_peak_is_brightest_at_its_location() {
        let mut vals = vec![0.0; 16];
        vals[2 * 4 + 1] = 1.0;
        let map = map_of(vals, 4, 4);
        let frame = vec![0.5f32; 16 * 16 * 3];
        let out = overlay_frame(&map, 0, &frame, 16, 16, 3);
        let (best, _) = out
            .chunks(3)
            .enumerate()
            .max_by_key(|(i, px)| (px[0], std::cmp::Reverse(*i)))
            .unwrap();
        let (y, x) = (best / 16, best % 16);
        assert!((8..12).contains(&y) && (4..8).contains(&x), "peak at ({y}, {x})");
    }

    #[test]
    fn render_writes_stable_pngs() {
        let map = map_of(vec![0.0, 0.5, 1.0, 0.25], 2, 2);
        let src = Tensor::from_vec(&[1, 8, 8, 3], vec![0.2f32; 192]).unwrap();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let pa = render_icm(&map, &src, 0, a.path()).unwrap();
        let pb = render_icm(&map, &src, 0, b.path()).unwrap();
        assert_eq!(pa.len(), 1);
        assert_eq!(fs::read(&pa[0]).unwrap(), fs::read(&pb[0]).unwrap());
        assert!(pa[0].ends_with("frame_000.png"));
    }

    #[test]
    fn gap_deviation_vanishes_for_linear_projection() {
        let act = Tensor::from_vec(&[2, 1, 2, 2], vec![1.0, 0.0, 3.0, 1.0, 0.0, 2.0, 4.0, 1.0]).unwrap();
        assert!(gap_deviation(&act, None).unwrap().abs() < 1e-12);
        assert!(gap_deviation(&act, Some(&identity_head(2))).unwrap().abs() < 1e-12);
    }
}
