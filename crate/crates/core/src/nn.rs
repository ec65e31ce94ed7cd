//! Layers with explicit forward/backward passes.
//!
//! Activations are laid out `[B, C, T, H, W]`, row-major. Layers are
//! immutable during forward; backward accumulates into `Param::grad`.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::tensor::{gemm, Real, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct Param<R> {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<R>,
    pub grad: Vec<R>,
    /// Whether weight decay applies.
    pub decay: bool,
}

impl<R: Real> Param<R> {
    pub fn new(name: impl Into<String>, shape: &[usize], value: Vec<R>, decay: bool) -> Self {
        assert_eq!(shape.iter().product::<usize>(), value.len());
        let grad = vec![R::zero(); value.len()];
        Self {
            name: name.into(),
            shape: shape.to_vec(),
            value,
            grad,
            decay,
        }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = R::zero());
    }
}

fn gaussian<R: Real>(rng: &mut impl Rng, n: usize, std: f64) -> Vec<R> {
    (0..n)
        .map(|_| R::of(rng.sample::<f64, _>(StandardNormal) * std))
        .collect()
}

/// 3D convolution without bias.
///
/// Temporal padding replicates the edge frames; spatial padding is zero.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv3d<R> {
    pub weight: Param<R>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
}

impl<R: Real> Conv3d<R> {
    pub fn new(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: [usize; 3],
        stride: [usize; 3],
        padding: [usize; 3],
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = in_channels * kernel.iter().product::<usize>();
        let n = out_channels * fan_in;
        let value = gaussian(rng, n, (2.0 / fan_in as f64).sqrt());
        Self {
            weight: Param::new(
                format!("{name}.weight"),
                &[out_channels, in_channels, kernel[0], kernel[1], kernel[2]],
                value,
                true,
            ),
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
        }
    }

    pub fn out_dims(&self, dims: [usize; 3]) -> Result<[usize; 3]> {
        let mut out = [0; 3];
        for a in 0..3 {
            let padded = dims[a] + 2 * self.padding[a];
            if padded < self.kernel[a] {
                return Err(Error::Shape(format!(
                    "{}: input extent {} too small for kernel {}",
                    self.weight.name, dims[a], self.kernel[a]
                )));
            }
            out[a] = (padded - self.kernel[a]) / self.stride[a] + 1;
        }
        Ok(out)
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel.iter().product::<usize>()
    }

    /// Unfold one sample `[Cin, T, H, W]` into `[Cin·kt·kh·kw, T'·H'·W']`.
    fn im2col(&self, input: &[R], dims: [usize; 3], out: [usize; 3], col: &mut [R]) {
        let [t_in, h_in, w_in] = dims;
        let [t_out, h_out, w_out] = out;
        let [kt, kh, kw] = self.kernel;
        let [st, sh, sw] = self.stride;
        let [pt, ph, pw] = self.padding;
        let p = t_out * h_out * w_out;
        let mut row = 0;
        for ci in 0..self.in_channels {
            let plane = &input[ci * t_in * h_in * w_in..(ci + 1) * t_in * h_in * w_in];
            for a in 0..kt {
                for b in 0..kh {
                    for c in 0..kw {
                        let dst = &mut col[row * p..(row + 1) * p];
                        let mut q = 0;
                        for to in 0..t_out {
                            let ti = (to * st + a) as isize - pt as isize;
                            let ti = ti.clamp(0, t_in as isize - 1) as usize;
                            let frame = &plane[ti * h_in * w_in..(ti + 1) * h_in * w_in];
                            for yo in 0..h_out {
                                let yi = (yo * sh + b) as isize - ph as isize;
                                if yi < 0 || yi >= h_in as isize {
                                    dst[q..q + w_out].iter_mut().for_each(|v| *v = R::zero());
                                    q += w_out;
                                    continue;
                                }
                                let line = &frame[yi as usize * w_in..(yi as usize + 1) * w_in];
                                for xo in 0..w_out {
                                    let xi = (xo * sw + c) as isize - pw as isize;
                                    dst[q] = if xi < 0 || xi >= w_in as isize {
                                        R::zero()
                                    } else {
                                        line[xi as usize]
                                    };
                                    q += 1;
                                }
                            }
                        }
                        row += 1;
                    }
                }
            }
        }
    }

    /// Fold `[Cin·kt·kh·kw, P]` back into `[Cin, T, H, W]`, accumulating.
    fn col2im(&self, col: &[R], dims: [usize; 3], out: [usize; 3], grad: &mut [R]) {
        let [t_in, h_in, w_in] = dims;
        let [t_out, h_out, w_out] = out;
        let [kt, kh, kw] = self.kernel;
        let [st, sh, sw] = self.stride;
        let [pt, ph, pw] = self.padding;
        let p = t_out * h_out * w_out;
        let mut row = 0;
        for ci in 0..self.in_channels {
            let base = ci * t_in * h_in * w_in;
            for a in 0..kt {
                for b in 0..kh {
                    for c in 0..kw {
                        let src = &col[row * p..(row + 1) * p];
                        let mut q = 0;
                        for to in 0..t_out {
                            let ti = (to * st + a) as isize - pt as isize;
                            let ti = ti.clamp(0, t_in as isize - 1) as usize;
                            for yo in 0..h_out {
                                let yi = (yo * sh + b) as isize - ph as isize;
                                if yi < 0 || yi >= h_in as isize {
                                    q += w_out;
                                    continue;
                                }
                                let line = base + ti * h_in * w_in + yi as usize * w_in;
                                for xo in 0..w_out {
                                    let xi = (xo * sw + c) as isize - pw as isize;
                                    if xi >= 0 && xi < w_in as isize {
                                        grad[line + xi as usize] += src[q];
                                    }
                                    q += 1;
                                }
                            }
                        }
                        row += 1;
                    }
                }
            }
        }
    }

    fn check_input(&self, x: &Tensor<R>) -> Result<[usize; 3]> {
        let s = x.shape();
        if s.len() != 5 || s[1] != self.in_channels {
            return Err(Error::Shape(format!(
                "{}: expected [B, {}, T, H, W], got {:?}",
                self.weight.name, self.in_channels, s
            )));
        }
        Ok([s[2], s[3], s[4]])
    }

    pub fn forward(&self, x: &Tensor<R>) -> Result<Tensor<R>> {
        let dims = self.check_input(x)?;
        let out = self.out_dims(dims)?;
        let batch = x.shape()[0];
        let p: usize = out.iter().product();
        let k = self.patch_len();
        let mut col = vec![R::zero(); k * p];
        let mut y = Tensor::zeros(&[batch, self.out_channels, out[0], out[1], out[2]]);
        for b in 0..batch {
            self.im2col(x.slab(b), dims, out, &mut col);
            gemm(
                self.out_channels,
                k,
                p,
                &self.weight.value,
                false,
                &col,
                false,
                y.slab_mut(b),
                false,
            );
        }
        Ok(y)
    }

    /// Accumulates the weight gradient; returns the input gradient when asked.
    pub fn backward(&mut self, x: &Tensor<R>, dy: &Tensor<R>, want_dx: bool) -> Result<Option<Tensor<R>>> {
        let dims = self.check_input(x)?;
        let out = self.out_dims(dims)?;
        let batch = x.shape()[0];
        let p: usize = out.iter().product();
        let k = self.patch_len();
        let mut col = vec![R::zero(); k * p];
        let mut dcol = vec![R::zero(); k * p];
        let mut dx = want_dx.then(|| Tensor::zeros(x.shape()));
        for b in 0..batch {
            self.im2col(x.slab(b), dims, out, &mut col);
            let g = dy.slab(b);
            gemm(self.out_channels, p, k, g, false, &col, true, &mut self.weight.grad, true);
            if let Some(dx) = dx.as_mut() {
                gemm(k, self.out_channels, p, &self.weight.value, true, g, false, &mut dcol, false);
                self.col2im(&dcol, dims, out, dx.slab_mut(b));
            }
        }
        Ok(dx)
    }
}

/// Per-channel normalization over `(B, T, H, W)`.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm<R> {
    pub gamma: Param<R>,
    pub beta: Param<R>,
    pub running_mean: Vec<R>,
    pub running_var: Vec<R>,
    pub eps: f64,
    pub momentum: f64,
}

#[derive(Clone, Debug)]
pub struct BatchNormCache<R> {
    xhat: Vec<R>,
    inv_std: Vec<R>,
    mean: Vec<R>,
    var: Vec<R>,
    count: usize,
}

impl<R: Real> BatchNorm<R> {
    pub fn new(name: &str, channels: usize) -> Self {
        Self {
            gamma: Param::new(format!("{name}.gamma"), &[channels], vec![R::one(); channels], false),
            beta: Param::new(format!("{name}.beta"), &[channels], vec![R::zero(); channels], false),
            running_mean: vec![R::zero(); channels],
            running_var: vec![R::one(); channels],
            eps: 1e-5,
            momentum: 0.1,
        }
    }

    fn channels(&self) -> usize {
        self.gamma.len()
    }

    fn layout(&self, x: &Tensor<R>) -> Result<(usize, usize)> {
        let s = x.shape();
        if s.len() < 2 || s[1] != self.channels() {
            return Err(Error::Shape(format!(
                "{}: expected {} channels, got {:?}",
                self.gamma.name,
                self.channels(),
                s
            )));
        }
        Ok((s[0], s[2..].iter().product()))
    }

    pub fn forward_train(&self, x: &Tensor<R>) -> Result<(Tensor<R>, BatchNormCache<R>)> {
        let (batch, spatial) = self.layout(x)?;
        let c_n = self.channels();
        let count = batch * spatial;
        let inv_count = R::one() / R::of(count as f64);
        let eps = R::of(self.eps);
        let mut mean = vec![R::zero(); c_n];
        let mut var = vec![R::zero(); c_n];
        let data = x.data();
        for c in 0..c_n {
            let mut s = R::zero();
            for b in 0..batch {
                let off = (b * c_n + c) * spatial;
                s += data[off..off + spatial].iter().copied().sum::<R>();
            }
            mean[c] = s * inv_count;
            let mut v = R::zero();
            for b in 0..batch {
                let off = (b * c_n + c) * spatial;
                v += data[off..off + spatial]
                    .iter()
                    .map(|&z| (z - mean[c]) * (z - mean[c]))
                    .sum::<R>();
            }
            var[c] = v * inv_count;
        }
        let inv_std: Vec<R> = var.iter().map(|&v| R::one() / (v + eps).sqrt()).collect();
        let mut xhat = vec![R::zero(); data.len()];
        let mut y = Tensor::zeros(x.shape());
        let out = y.data_mut();
        for b in 0..batch {
            for c in 0..c_n {
                let off = (b * c_n + c) * spatial;
                let (g, bt) = (self.gamma.value[c], self.beta.value[c]);
                for i in off..off + spatial {
                    let h = (data[i] - mean[c]) * inv_std[c];
                    xhat[i] = h;
                    out[i] = g * h + bt;
                }
            }
        }
        Ok((
            y,
            BatchNormCache {
                xhat,
                inv_std,
                mean,
                var,
                count,
            },
        ))
    }

    pub fn forward_eval(&self, x: &Tensor<R>) -> Result<Tensor<R>> {
        let (batch, spatial) = self.layout(x)?;
        let c_n = self.channels();
        let eps = R::of(self.eps);
        let mut y = x.clone();
        let out = y.data_mut();
        for b in 0..batch {
            for c in 0..c_n {
                let off = (b * c_n + c) * spatial;
                let scale = self.gamma.value[c] / (self.running_var[c] + eps).sqrt();
                let shift = self.beta.value[c] - self.running_mean[c] * scale;
                out[off..off + spatial].iter_mut().for_each(|v| *v = *v * scale + shift);
            }
        }
        Ok(y)
    }

    /// Fold the batch statistics of a training forward into the running ones.
    pub fn update_running(&mut self, cache: &BatchNormCache<R>) {
        let m = R::of(self.momentum);
        let unbias = if cache.count > 1 {
            R::of(cache.count as f64 / (cache.count - 1) as f64)
        } else {
            R::one()
        };
        for c in 0..self.channels() {
            self.running_mean[c] = (R::one() - m) * self.running_mean[c] + m * cache.mean[c];
            self.running_var[c] = (R::one() - m) * self.running_var[c] + m * cache.var[c] * unbias;
        }
    }

    pub fn backward(&mut self, cache: &BatchNormCache<R>, dy: &Tensor<R>) -> Result<Tensor<R>> {
        let (batch, spatial) = self.layout(dy)?;
        let c_n = self.channels();
        let n = R::of(cache.count as f64);
        let g = dy.data();
        let mut dx = Tensor::zeros(dy.shape());
        for c in 0..c_n {
            let mut sum_g = R::zero();
            let mut sum_gx = R::zero();
            for b in 0..batch {
                let off = (b * c_n + c) * spatial;
                for (&gi, &xi) in g[off..off + spatial].iter().zip(&cache.xhat[off..off + spatial]) {
                    sum_g += gi;
                    sum_gx += gi * xi;
                }
            }
            self.beta.grad[c] += sum_g;
            self.gamma.grad[c] += sum_gx;
            let k = self.gamma.value[c] * cache.inv_std[c] / n;
            let out = dx.data_mut();
            for b in 0..batch {
                let off = (b * c_n + c) * spatial;
                for i in off..off + spatial {
                    out[i] = k * (n * g[i] - sum_g - cache.xhat[i] * sum_gx);
                }
            }
        }
        Ok(dx)
    }
}

/// `y = x Wᵀ + b` on `[B, in]` inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear<R> {
    pub weight: Param<R>,
    pub bias: Param<R>,
}

impl<R: Real> Linear<R> {
    pub fn new(name: &str, input: usize, output: usize, rng: &mut impl Rng) -> Self {
        let value = gaussian(rng, input * output, (2.0 / input as f64).sqrt());
        let bound = 1.0 / (input as f64).sqrt();
        let bias = (0..output).map(|_| R::of(rng.random_range(-bound..bound))).collect();
        Self {
            weight: Param::new(format!("{name}.weight"), &[output, input], value, true),
            bias: Param::new(format!("{name}.bias"), &[output], bias, true),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.shape[1]
    }

    pub fn output_dim(&self) -> usize {
        self.weight.shape[0]
    }

    pub fn forward(&self, x: &Tensor<R>) -> Result<Tensor<R>> {
        let s = x.shape();
        if s.len() != 2 || s[1] != self.input_dim() {
            return Err(Error::Shape(format!(
                "{}: expected [B, {}], got {:?}",
                self.weight.name,
                self.input_dim(),
                s
            )));
        }
        let (b, o) = (s[0], self.output_dim());
        let mut y = Tensor::zeros(&[b, o]);
        for row in y.data_mut().chunks_mut(o) {
            row.copy_from_slice(&self.bias.value);
        }
        gemm(b, self.input_dim(), o, x.data(), false, &self.weight.value, true, y.data_mut(), true);
        Ok(y)
    }

    pub fn backward(&mut self, x: &Tensor<R>, dy: &Tensor<R>) -> Tensor<R> {
        let (b, i, o) = (x.shape()[0], self.input_dim(), self.output_dim());
        gemm(o, b, i, dy.data(), true, x.data(), false, &mut self.weight.grad, true);
        for row in dy.data().chunks(o) {
            for (g, &d) in self.bias.grad.iter_mut().zip(row) {
                *g += d;
            }
        }
        let mut dx = Tensor::zeros(&[b, i]);
        gemm(b, o, i, dy.data(), false, &self.weight.value, false, dx.data_mut(), false);
        dx
    }
}

pub fn relu_in_place<R: Real>(x: &mut Tensor<R>) {
    x.data_mut().iter_mut().for_each(|v| {
        if *v < R::zero() {
            *v = R::zero()
        }
    });
}

/// Gradient through ReLU given its output.
pub fn relu_backward<R: Real>(y: &Tensor<R>, dy: &mut Tensor<R>) {
    for (g, &v) in dy.data_mut().iter_mut().zip(y.data()) {
        if v <= R::zero() {
            *g = R::zero();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::stream_rng;

    /// Direct-loop reference convolution with the same padding rules.
    fn conv_ref(conv: &Conv3d<f64>, x: &Tensor<f64>) -> Tensor<f64> {
        let s = x.shape();
        let dims = [s[2], s[3], s[4]];
        let out = conv.out_dims(dims).unwrap();
        let mut y = Tensor::zeros(&[s[0], conv.out_channels, out[0], out[1], out[2]]);
        let [kt, kh, kw] = conv.kernel;
        for b in 0..s[0] {
            for co in 0..conv.out_channels {
                for to in 0..out[0] {
                    for yo in 0..out[1] {
                        for xo in 0..out[2] {
                            let mut acc = 0.0;
                            for ci in 0..conv.in_channels {
                                for a in 0..kt {
                                    for bb in 0..kh {
                                        for c in 0..kw {
                                            let ti = (to * conv.stride[0] + a) as isize - conv.padding[0] as isize;
                                            let ti = ti.clamp(0, dims[0] as isize - 1) as usize;
                                            let yi = (yo * conv.stride[1] + bb) as isize - conv.padding[1] as isize;
                                            let xi = (xo * conv.stride[2] + c) as isize - conv.padding[2] as isize;
                                            if yi < 0 || xi < 0 || yi >= dims[1] as isize || xi >= dims[2] as isize {
                                                continue;
                                            }
                                            let xv = x.data()[(((b * conv.in_channels + ci) * dims[0] + ti) * dims[1]
                                                + yi as usize)
                                                * dims[2]
                                                + xi as usize];
                                            let wv = conv.weight.value
                                                [(((co * conv.in_channels + ci) * kt + a) * kh + bb) * kw + c];
                                            acc += xv * wv;
                                        }
                                    }
                                }
                            }
                            let idx = (((b * conv.out_channels + co) * out[0] + to) * out[1] + yo) * out[2] + xo;
                            y.data_mut()[idx] = acc;
                        }
                    }
                }
            }
        }
        y
    }

    fn random_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = stream_rng(seed, 99, 0);
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn conv_matches_direct_loops() {
        let mut rng = stream_rng(1, 0, 0);
        let conv = Conv3d::<f64>::new("c", 2, 3, [3, 3, 3], [1, 2, 2], [1, 1, 1], &mut rng);
        let x = random_tensor(&[2, 2, 4, 7, 6], 3);
        let y = conv.forward(&x).unwrap();
        let want = conv_ref(&conv, &x);
        assert_eq!(y.shape(), want.shape());
        for (a, b) in y.data().iter().zip(want.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    fn fd_check(f: impl Fn(&[f64]) -> f64, x: &[f64], analytic: &[f64]) {
        let h = 1e-6;
        for i in 0..x.len() {
            let mut p = x.to_vec();
            p[i] += h;
            let mut m = x.to_vec();
            m[i] -= h;
            let num = (f(&p) - f(&m)) / (2.0 * h);
            let err = (num - analytic[i]).abs() / num.abs().max(analytic[i].abs()).max(1e-8);
            assert!(err < 1e-6, "coord {i}: numeric {num} analytic {}", analytic[i]);
        }
    }

    #[test]
    fn conv_backward_matches_finite_differences() {
        let mut rng = stream_rng(2, 0, 0);
        let conv = Conv3d::<f64>::new("c", 2, 2, [3, 3, 3], [1, 2, 2], [1, 1, 1], &mut rng);
        let x = random_tensor(&[1, 2, 3, 5, 4], 4);
        let probe = random_tensor(conv.forward(&x).unwrap().shape(), 5);
        let loss = |c: &Conv3d<f64>, x: &Tensor<f64>| crate::tensor::dot(c.forward(x).unwrap().data(), probe.data());

        let mut c2 = conv.clone();
        let dx = c2.backward(&x, &probe, true).unwrap().unwrap();
        fd_check(
            |xs| loss(&conv, &Tensor::from_vec(x.shape(), xs.to_vec()).unwrap()),
            x.data(),
            dx.data(),
        );
        fd_check(
            |ws| {
                let mut c = conv.clone();
                c.weight.value = ws.to_vec();
                loss(&c, &x)
            },
            &conv.weight.value,
            &c2.weight.grad,
        );
    }

    #[test]
    fn batchnorm_backward_matches_finite_differences() {
        let mut bn = BatchNorm::<f64>::new("bn", 2);
        bn.gamma.value = vec![1.3, 0.7];
        bn.beta.value = vec![0.1, -0.2];
        let x = random_tensor(&[2, 2, 2, 2, 1], 6);
        let probe = random_tensor(x.shape(), 7);
        let (_, cache) = bn.forward_train(&x).unwrap();
        let mut b2 = bn.clone();
        let dx = b2.backward(&cache, &probe).unwrap();
        let loss = |b: &BatchNorm<f64>, x: &Tensor<f64>| crate::tensor::dot(b.forward_train(x).unwrap().0.data(), probe.data());
        fd_check(
            |xs| loss(&bn, &Tensor::from_vec(x.shape(), xs.to_vec()).unwrap()),
            x.data(),
            dx.data(),
        );
        fd_check(
            |g| {
                let mut b = bn.clone();
                b.gamma.value = g.to_vec();
                loss(&b, &x)
            },
            &bn.gamma.value,
            &b2.gamma.grad,
        );
    }

    #[test]
    fn batchnorm_eval_uses_running_stats() {
        let mut bn = BatchNorm::<f64>::new("bn", 1);
        bn.running_mean = vec![2.0];
        bn.running_var = vec![4.0 - 1e-5];
        let x = Tensor::from_vec(&[1, 1, 2], vec![2.0, 4.0]).unwrap();
        let y = bn.forward_eval(&x).unwrap();
        assert!((y.data()[0]).abs() < 1e-12);
        assert!((y.data()[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn linear_backward_matches_finite_differences() {
        let mut rng = stream_rng(3, 0, 0);
        let lin = Linear::<f64>::new("l", 3, 2, &mut rng);
        let x = random_tensor(&[4, 3], 8);
        let probe = random_tensor(&[4, 2], 9);
        let mut l2 = lin.clone();
        let dx = l2.backward(&x, &probe);
        let loss = |l: &Linear<f64>, x: &Tensor<f64>| crate::tensor::dot(l.forward(x).unwrap().data(), probe.data());
        fd_check(
            |xs| loss(&lin, &Tensor::from_vec(x.shape(), xs.to_vec()).unwrap()),
            x.data(),
            dx.data(),
        );
        fd_check(
            |ws| {
                let mut l = lin.clone();
                l.weight.value = ws.to_vec();
                loss(&l, &x)
            },
            &lin.weight.value,
            &l2.weight.grad,
        );
    }
}
