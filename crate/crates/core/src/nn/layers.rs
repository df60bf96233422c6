//! The seven layer kinds and their forward/backward kernels.
//!
//! Activations are `[batch, ...]` row-major tensors; image layers expect
//! `[batch, channels, height, width]`. Linear layers flatten whatever
//! per-sample shape they receive.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{gemm, MatRef, Real, Tensor};

/// Batch-norm epsilon used by every preset.
pub const BN_EPS: f64 = 1e-5;
/// Batch-norm running-statistics momentum used by every preset.
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    BatchNorm2d {
        channels: usize,
        eps: f64,
        momentum: f64,
    },
    Relu,
    MaxPool2d {
        kernel: usize,
        stride: usize,
    },
    Dropout {
        p: f64,
    },
    Linear {
        in_features: usize,
        out_features: usize,
    },
    Softmax,
}

impl LayerSpec {
    pub fn conv2d(in_channels: usize, out_channels: usize, kernel: usize, padding: usize) -> Self {
        LayerSpec::Conv2d {
            in_channels,
            out_channels,
            kernel,
            stride: 1,
            padding,
        }
    }

    pub fn batchnorm2d(channels: usize) -> Self {
        LayerSpec::BatchNorm2d {
            channels,
            eps: BN_EPS,
            momentum: BN_MOMENTUM,
        }
    }

    pub fn maxpool2d(kernel: usize) -> Self {
        LayerSpec::MaxPool2d {
            kernel,
            stride: kernel,
        }
    }

    pub fn linear(in_features: usize, out_features: usize) -> Self {
        LayerSpec::Linear {
            in_features,
            out_features,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::BatchNorm2d { .. } => "batchnorm2d",
            LayerSpec::Relu => "relu",
            LayerSpec::MaxPool2d { .. } => "maxpool2d",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::Linear { .. } => "linear",
            LayerSpec::Softmax => "softmax",
        }
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let bad = |why: String| Err(Error::config(format!("{}: {why}", self.kind())));
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                let &[c, h, w] = input else {
                    return bad(format!("expects [channels, height, width], got {input:?}"));
                };
                if c != in_channels {
                    return bad(format!("expects {in_channels} input channels, got {c}"));
                }
                if kernel == 0 || stride == 0 || out_channels == 0 {
                    return bad("kernel, stride and channels must be positive".into());
                }
                if h + 2 * padding < kernel || w + 2 * padding < kernel {
                    return bad(format!("kernel {kernel} larger than padded input {h}x{w}"));
                }
                Ok(vec![
                    out_channels,
                    (h + 2 * padding - kernel) / stride + 1,
                    (w + 2 * padding - kernel) / stride + 1,
                ])
            }
            LayerSpec::BatchNorm2d {
                channels,
                eps,
                momentum,
            } => {
                if eps.is_nan() || eps <= 0.0 {
                    return bad(format!("eps must be positive, got {eps}"));
                }
                if !(0.0..=1.0).contains(&momentum) {
                    return bad(format!("momentum must be in [0,1], got {momentum}"));
                }
                if input.first() != Some(&channels) {
                    return bad(format!("expects {channels} channels, got {input:?}"));
                }
                Ok(input.to_vec())
            }
            LayerSpec::MaxPool2d { kernel, stride } => {
                let &[c, h, w] = input else {
                    return bad(format!("expects [channels, height, width], got {input:?}"));
                };
                if kernel == 0 || stride == 0 || h < kernel || w < kernel {
                    return bad(format!("kernel {kernel} does not fit {h}x{w}"));
                }
                Ok(vec![
                    c,
                    (h - kernel) / stride + 1,
                    (w - kernel) / stride + 1,
                ])
            }
            LayerSpec::Dropout { p } => {
                if !(0.0..1.0).contains(&p) {
                    return bad(format!("p must be in [0,1), got {p}"));
                }
                Ok(input.to_vec())
            }
            LayerSpec::Linear {
                in_features,
                out_features,
            } => {
                let n: usize = input.iter().product();
                if n != in_features {
                    return bad(format!(
                        "expects {in_features} features, got {input:?} = {n}"
                    ));
                }
                if out_features == 0 {
                    return bad("out_features must be positive".into());
                }
                Ok(vec![out_features])
            }
            LayerSpec::Relu => Ok(input.to_vec()),
            LayerSpec::Softmax => {
                if input.len() != 1 {
                    return bad(format!("expects a flat feature vector, got {input:?}"));
                }
                Ok(input.to_vec())
            }
        }
    }

    /// Names and shapes of the trainable parameters.
    pub fn param_shapes(&self) -> Vec<(&'static str, Vec<usize>)> {
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => vec![
                ("weight", vec![out_channels, in_channels, kernel, kernel]),
                ("bias", vec![out_channels]),
            ],
            LayerSpec::BatchNorm2d { channels, .. } => {
                vec![("weight", vec![channels]), ("bias", vec![channels])]
            }
            LayerSpec::Linear {
                in_features,
                out_features,
            } => vec![
                ("weight", vec![out_features, in_features]),
                ("bias", vec![out_features]),
            ],
            _ => Vec::new(),
        }
    }

    /// Non-trainable state (batch-norm running statistics).
    pub fn buffer_shapes(&self) -> Vec<(&'static str, Vec<usize>)> {
        match *self {
            LayerSpec::BatchNorm2d { channels, .. } => vec![
                ("running_mean", vec![channels]),
                ("running_var", vec![channels]),
            ],
            _ => Vec::new(),
        }
    }

    /// Fan-in used for weight initialisation.
    pub(crate) fn fan_in(&self) -> Option<usize> {
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                kernel,
                ..
            } => Some(in_channels * kernel * kernel),
            LayerSpec::Linear { in_features, .. } => Some(in_features),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-layer state saved by the forward pass for the backward pass.
#[derive(Debug, Clone)]
pub enum LayerCache<T> {
    None,
    Conv {
        /// im2col matrix, `[in_channels*k*k, batch*out_h*out_w]`.
        cols: Vec<T>,
    },
    BatchNorm {
        xhat: Vec<T>,
        inv_std: Vec<T>,
        batch_mean: Vec<T>,
        batch_var: Vec<T>,
    },
    MaxPool {
        argmax: Vec<u32>,
    },
    Dropout {
        mask: Vec<T>,
    },
}

pub(crate) struct Forward<T> {
    pub output: Tensor<T>,
    pub cache: LayerCache<T>,
}

pub(crate) struct Backward<T> {
    pub dinput: Option<Tensor<T>>,
    pub dparams: Vec<Tensor<T>>,
}

fn batched(batch: usize, sample_shape: &[usize]) -> Vec<usize> {
    let mut s = Vec::with_capacity(sample_shape.len() + 1);
    s.push(batch);
    s.extend_from_slice(sample_shape);
    s
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn forward<T: Real, R: Rng + ?Sized>(
    spec: &LayerSpec,
    params: &[Tensor<T>],
    buffers: &[Tensor<T>],
    input: &Tensor<T>,
    out_shape: &[usize],
    mode: Mode,
    rng: &mut R,
) -> Forward<T> {
    let n = input.rows();
    let shape = batched(n, out_shape);
    match *spec {
        LayerSpec::Conv2d {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
        } => {
            let s = input.shape();
            let geo = ConvGeometry {
                channels: in_channels,
                height: s[2],
                width: s[3],
                kernel,
                stride,
                padding,
                out_h: out_shape[1],
                out_w: out_shape[2],
            };
            let cols = im2col(input.data(), n, &geo);
            let l = geo.out_h * geo.out_w;
            let ckk = geo.rows();
            let mut tmp = vec![T::zero(); out_channels * n * l];
            gemm(
                out_channels,
                ckk,
                n * l,
                T::one(),
                MatRef::rows(params[0].data(), ckk),
                MatRef::rows(&cols, n * l),
                T::zero(),
                &mut tmp,
                n * l,
            );
            let bias = params[1].data();
            let mut out = Tensor::zeros(&shape);
            let od = out.data_mut();
            for s in 0..n {
                for (oc, &b) in bias.iter().enumerate() {
                    let src = &tmp[oc * n * l + s * l..oc * n * l + (s + 1) * l];
                    let dst = &mut od[(s * out_channels + oc) * l..(s * out_channels + oc + 1) * l];
                    for (d, &v) in dst.iter_mut().zip(src) {
                        *d = v + b;
                    }
                }
            }
            Forward {
                output: out,
                cache: LayerCache::Conv { cols },
            }
        }
        LayerSpec::BatchNorm2d { channels, eps, .. } => {
            let spatial = input.row_len() / channels;
            let gamma = params[0].data();
            let beta = params[1].data();
            let x = input.data();
            let mut out = Tensor::zeros(&shape);
            match mode {
                Mode::Train => {
                    let m = (n * spatial) as f64;
                    let mut mean = vec![T::zero(); channels];
                    let mut var = vec![T::zero(); channels];
                    let mut inv_std = vec![T::zero(); channels];
                    let mut xhat = vec![T::zero(); x.len()];
                    for c in 0..channels {
                        let mut sum = 0.0f64;
                        for s in 0..n {
                            let base = (s * channels + c) * spatial;
                            sum += x[base..base + spatial]
                                .iter()
                                .map(|v| v.as_f64())
                                .sum::<f64>();
                        }
                        let mu = sum / m;
                        let mut sq = 0.0f64;
                        for s in 0..n {
                            let base = (s * channels + c) * spatial;
                            sq += x[base..base + spatial]
                                .iter()
                                .map(|v| {
                                    let d = v.as_f64() - mu;
                                    d * d
                                })
                                .sum::<f64>();
                        }
                        let v = sq / m;
                        let is = 1.0 / (v + eps).sqrt();
                        mean[c] = T::from_f64(mu);
                        var[c] = T::from_f64(v);
                        inv_std[c] = T::from_f64(is);
                        let od = out.data_mut();
                        for s in 0..n {
                            let base = (s * channels + c) * spatial;
                            for i in base..base + spatial {
                                let xh = T::from_f64((x[i].as_f64() - mu) * is);
                                xhat[i] = xh;
                                od[i] = gamma[c] * xh + beta[c];
                            }
                        }
                    }
                    Forward {
                        output: out,
                        cache: LayerCache::BatchNorm {
                            xhat,
                            inv_std,
                            batch_mean: mean,
                            batch_var: var,
                        },
                    }
                }
                Mode::Eval => {
                    let rm = buffers[0].data();
                    let rv = buffers[1].data();
                    let od = out.data_mut();
                    for c in 0..channels {
                        let is = T::from_f64(1.0 / (rv[c].as_f64() + eps).sqrt());
                        for s in 0..n {
                            let base = (s * channels + c) * spatial;
                            for i in base..base + spatial {
                                od[i] = gamma[c] * (x[i] - rm[c]) * is + beta[c];
                            }
                        }
                    }
                    Forward {
                        output: out,
                        cache: LayerCache::None,
                    }
                }
            }
        }
        LayerSpec::Relu => {
            let mut out = input.clone();
            for v in out.data_mut() {
                if *v <= T::zero() {
                    *v = T::zero();
                }
            }
            Forward {
                output: out,
                cache: LayerCache::None,
            }
        }
        LayerSpec::MaxPool2d { kernel, stride } => {
            let s = input.shape();
            let (c, h, w) = (s[1], s[2], s[3]);
            let (oh, ow) = (out_shape[1], out_shape[2]);
            let x = input.data();
            let mut out = Tensor::zeros(&shape);
            let mut argmax = vec![0u32; out.len()];
            let od = out.data_mut();
            let mut o = 0;
            for plane in 0..n * c {
                let base = plane * h * w;
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut best = base + oy * stride * w + ox * stride;
                        for ky in 0..kernel {
                            for kx in 0..kernel {
                                let i = base + (oy * stride + ky) * w + ox * stride + kx;
                                if x[i] > x[best] {
                                    best = i;
                                }
                            }
                        }
                        od[o] = x[best];
                        argmax[o] = best as u32;
                        o += 1;
                    }
                }
            }
            Forward {
                output: out,
                cache: LayerCache::MaxPool { argmax },
            }
        }
        LayerSpec::Dropout { p } => {
            if mode == Mode::Eval || p == 0.0 {
                return Forward {
                    output: input.clone(),
                    cache: LayerCache::None,
                };
            }
            let keep = T::from_f64(1.0 / (1.0 - p));
            let mask: Vec<T> = (0..input.len())
                .map(|_| {
                    if rng.random::<f64>() < p {
                        T::zero()
                    } else {
                        keep
                    }
                })
                .collect();
            let mut out = input.clone();
            for (v, &m) in out.data_mut().iter_mut().zip(&mask) {
                *v = *v * m;
            }
            Forward {
                output: out,
                cache: LayerCache::Dropout { mask },
            }
        }
        LayerSpec::Linear {
            in_features,
            out_features,
        } => {
            let w = params[0].data();
            let b = params[1].data();
            let mut out = Tensor::zeros(&shape);
            let od = out.data_mut();
            for row in od.chunks_exact_mut(out_features) {
                row.copy_from_slice(b);
            }
            gemm(
                n,
                in_features,
                out_features,
                T::one(),
                MatRef::rows(input.data(), in_features),
                MatRef::rows_t(w, in_features),
                T::one(),
                od,
                out_features,
            );
            Forward {
                output: out,
                cache: LayerCache::None,
            }
        }
        LayerSpec::Softmax => {
            let mut out = input.clone();
            let width = input.row_len();
            for row in out.data_mut().chunks_exact_mut(width) {
                softmax_in_place(row);
            }
            Forward {
                output: out,
                cache: LayerCache::None,
            }
        }
    }
}

/// Numerically stable softmax of one row.
pub(crate) fn softmax_in_place<T: Real>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum = sum + *v;
    }
    for v in row.iter_mut() {
        *v = *v / sum;
    }
}

/// Backward kernel. `need_dinput` is false for the first layer, whose input
/// gradient nobody consumes.
#[allow(clippy::too_many_arguments)]
pub(crate) fn backward<T: Real>(
    spec: &LayerSpec,
    params: &[Tensor<T>],
    input: &Tensor<T>,
    output: &Tensor<T>,
    cache: &LayerCache<T>,
    dout: &Tensor<T>,
    need_dinput: bool,
) -> Result<Backward<T>> {
    let n = input.rows();
    let missing = || {
        Error::shape(format!(
            "{}: forward cache missing (trace not from train mode?)",
            spec.kind()
        ))
    };
    match *spec {
        LayerSpec::Conv2d {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
        } => {
            let LayerCache::Conv { cols } = cache else {
                return Err(missing());
            };
            let s = input.shape();
            let geo = ConvGeometry {
                channels: in_channels,
                height: s[2],
                width: s[3],
                kernel,
                stride,
                padding,
                out_h: output.shape()[2],
                out_w: output.shape()[3],
            };
            let l = geo.out_h * geo.out_w;
            let ckk = geo.rows();
            let dy = dout.data();
            // regroup dout to [out_channels, batch*l]
            let mut dtmp = vec![T::zero(); out_channels * n * l];
            let mut db = vec![T::zero(); out_channels];
            for s in 0..n {
                for oc in 0..out_channels {
                    let src = &dy[(s * out_channels + oc) * l..(s * out_channels + oc + 1) * l];
                    dtmp[oc * n * l + s * l..oc * n * l + (s + 1) * l].copy_from_slice(src);
                }
            }
            for oc in 0..out_channels {
                db[oc] = dtmp[oc * n * l..(oc + 1) * n * l].iter().copied().sum();
            }
            let mut dw = vec![T::zero(); out_channels * ckk];
            gemm(
                out_channels,
                n * l,
                ckk,
                T::one(),
                MatRef::rows(&dtmp, n * l),
                MatRef::rows_t(cols, n * l),
                T::zero(),
                &mut dw,
                ckk,
            );
            let dinput = if need_dinput {
                let mut dcols = vec![T::zero(); ckk * n * l];
                gemm(
                    ckk,
                    out_channels,
                    n * l,
                    T::one(),
                    MatRef::rows_t(params[0].data(), ckk),
                    MatRef::rows(&dtmp, n * l),
                    T::zero(),
                    &mut dcols,
                    n * l,
                );
                let mut dx = Tensor::zeros(input.shape());
                col2im(&dcols, n, &geo, dx.data_mut());
                Some(dx)
            } else {
                None
            };
            Ok(Backward {
                dinput,
                dparams: vec![
                    Tensor::from_vec(params[0].shape(), dw)?,
                    Tensor::from_vec(&[out_channels], db)?,
                ],
            })
        }
        LayerSpec::BatchNorm2d { channels, .. } => {
            let LayerCache::BatchNorm { xhat, inv_std, .. } = cache else {
                return Err(missing());
            };
            let spatial = input.row_len() / channels;
            let m = (n * spatial) as f64;
            let gamma = params[0].data();
            let dy = dout.data();
            let mut dgamma = vec![T::zero(); channels];
            let mut dbeta = vec![T::zero(); channels];
            let mut dx = Tensor::zeros(input.shape());
            for c in 0..channels {
                let mut sg = 0.0f64;
                let mut sb = 0.0f64;
                for s in 0..n {
                    let base = (s * channels + c) * spatial;
                    for i in base..base + spatial {
                        sg += (dy[i] * xhat[i]).as_f64();
                        sb += dy[i].as_f64();
                    }
                }
                dgamma[c] = T::from_f64(sg);
                dbeta[c] = T::from_f64(sb);
                if need_dinput {
                    let scale = gamma[c].as_f64() * inv_std[c].as_f64() / m;
                    let dxd = dx.data_mut();
                    for s in 0..n {
                        let base = (s * channels + c) * spatial;
                        for i in base..base + spatial {
                            let v = m * dy[i].as_f64() - sb - xhat[i].as_f64() * sg;
                            dxd[i] = T::from_f64(scale * v);
                        }
                    }
                }
            }
            Ok(Backward {
                dinput: need_dinput.then_some(dx),
                dparams: vec![
                    Tensor::from_vec(&[channels], dgamma)?,
                    Tensor::from_vec(&[channels], dbeta)?,
                ],
            })
        }
        LayerSpec::Relu => {
            let mut dx = dout.clone();
            for (d, &x) in dx.data_mut().iter_mut().zip(input.data()) {
                if x <= T::zero() {
                    *d = T::zero();
                }
            }
            Ok(Backward {
                dinput: Some(dx),
                dparams: Vec::new(),
            })
        }
        LayerSpec::MaxPool2d { .. } => {
            let LayerCache::MaxPool { argmax } = cache else {
                return Err(missing());
            };
            let mut dx = Tensor::zeros(input.shape());
            let dxd = dx.data_mut();
            for (&i, &g) in argmax.iter().zip(dout.data()) {
                dxd[i as usize] = dxd[i as usize] + g;
            }
            Ok(Backward {
                dinput: Some(dx),
                dparams: Vec::new(),
            })
        }
        LayerSpec::Dropout { .. } => {
            let mut dx = dout.clone();
            if let LayerCache::Dropout { mask } = cache {
                for (d, &m) in dx.data_mut().iter_mut().zip(mask) {
                    *d = *d * m;
                }
            }
            Ok(Backward {
                dinput: Some(dx),
                dparams: Vec::new(),
            })
        }
        LayerSpec::Linear {
            in_features,
            out_features,
        } => {
            let dy = dout.data();
            let mut dw = vec![T::zero(); out_features * in_features];
            gemm(
                out_features,
                n,
                in_features,
                T::one(),
                MatRef::rows_t(dy, out_features),
                MatRef::rows(input.data(), in_features),
                T::zero(),
                &mut dw,
                in_features,
            );
            let mut db = vec![T::zero(); out_features];
            for row in dy.chunks_exact(out_features) {
                for (b, &g) in db.iter_mut().zip(row) {
                    *b = *b + g;
                }
            }
            let dinput = if need_dinput {
                let mut dx = Tensor::zeros(input.shape());
                gemm(
                    n,
                    out_features,
                    in_features,
                    T::one(),
                    MatRef::rows(dy, out_features),
                    MatRef::rows(params[0].data(), in_features),
                    T::zero(),
                    dx.data_mut(),
                    in_features,
                );
                Some(dx)
            } else {
                None
            };
            Ok(Backward {
                dinput,
                dparams: vec![
                    Tensor::from_vec(&[out_features, in_features], dw)?,
                    Tensor::from_vec(&[out_features], db)?,
                ],
            })
        }
        LayerSpec::Softmax => {
            let width = output.row_len();
            let mut dx = dout.clone();
            for (drow, yrow) in dx
                .data_mut()
                .chunks_exact_mut(width)
                .zip(output.data().chunks_exact(width))
            {
                let dot: T = drow.iter().zip(yrow).map(|(&d, &y)| d * y).sum();
                for (d, &y) in drow.iter_mut().zip(yrow) {
                    *d = y * (*d - dot);
                }
            }
            Ok(Backward {
                dinput: Some(dx),
                dparams: Vec::new(),
            })
        }
    }
}

struct ConvGeometry {
    channels: usize,
    height: usize,
    width: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    out_h: usize,
    out_w: usize,
}

impl ConvGeometry {
    fn rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    /// Input pixel feeding column `(oy, ox)` of kernel tap `(ky, kx)`, if not padding.
    #[inline]
    fn source(&self, oy: usize, ox: usize, ky: usize, kx: usize) -> Option<(usize, usize)> {
        let iy = (oy * self.stride + ky).checked_sub(self.padding)?;
        let ix = (ox * self.stride + kx).checked_sub(self.padding)?;
        (iy < self.height && ix < self.width).then_some((iy, ix))
    }
}

fn im2col<T: Real>(x: &[T], n: usize, g: &ConvGeometry) -> Vec<T> {
    let l = g.out_h * g.out_w;
    let width = n * l;
    let mut cols = vec![T::zero(); g.rows() * width];
    let plane = g.height * g.width;
    for c in 0..g.channels {
        for ky in 0..g.kernel {
            for kx in 0..g.kernel {
                let row = (c * g.kernel + ky) * g.kernel + kx;
                for s in 0..n {
                    let src = &x[(s * g.channels + c) * plane..(s * g.channels + c + 1) * plane];
                    let dst = &mut cols[row * width + s * l..row * width + (s + 1) * l];
                    for oy in 0..g.out_h {
                        for ox in 0..g.out_w {
                            if let Some((iy, ix)) = g.source(oy, ox, ky, kx) {
                                dst[oy * g.out_w + ox] = src[iy * g.width + ix];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im<T: Real>(cols: &[T], n: usize, g: &ConvGeometry, dx: &mut [T]) {
    let l = g.out_h * g.out_w;
    let width = n * l;
    let plane = g.height * g.width;
    for c in 0..g.channels {
        for ky in 0..g.kernel {
            for kx in 0..g.kernel {
                let row = (c * g.kernel + ky) * g.kernel + kx;
                for s in 0..n {
                    let src = &cols[row * width + s * l..row * width + (s + 1) * l];
                    let dst =
                        &mut dx[(s * g.channels + c) * plane..(s * g.channels + c + 1) * plane];
                    for oy in 0..g.out_h {
                        for ox in 0..g.out_w {
                            if let Some((iy, ix)) = g.source(oy, ox, ky, kx) {
                                let d = &mut dst[iy * g.width + ix];
                                *d = *d + src[oy * g.out_w + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(0)
    }

    #[test]
    fn output_shapes_follow_listings() {
        let conv = LayerSpec::conv2d(1, 32, 3, 1);
        assert_eq!(conv.output_shape(&[1, 16, 16]).unwrap(), vec![32, 16, 16]);
        let conv = LayerSpec::conv2d(32, 64, 3, 0);
        assert_eq!(conv.output_shape(&[32, 8, 8]).unwrap(), vec![64, 6, 6]);
        assert_eq!(
            LayerSpec::maxpool2d(2).output_shape(&[64, 6, 6]).unwrap(),
            vec![64, 3, 3]
        );
        assert_eq!(
            LayerSpec::linear(576, 144)
                .output_shape(&[64, 3, 3])
                .unwrap(),
            vec![144]
        );
        assert!(LayerSpec::linear(575, 144)
            .output_shape(&[64, 3, 3])
            .is_err());
        assert!(LayerSpec::Dropout { p: 1.0 }.output_shape(&[4]).is_err());
        let bn = LayerSpec::BatchNorm2d {
            channels: 2,
            eps: 0.0,
            momentum: 0.1,
        };
        assert!(bn.output_shape(&[2, 3, 3]).is_err());
    }

    #[test]
    fn conv_matches_direct_loop() {
        let spec = LayerSpec::Conv2d {
            in_channels: 2,
            out_channels: 3,
            kernel: 3,
            stride: 2,
            padding: 1,
        };
        let out_shape = spec.output_shape(&[2, 5, 4]).unwrap();
        let x: Vec<f64> = (0..2 * 2 * 5 * 4)
            .map(|i| ((i * 7) % 11) as f64 - 5.0)
            .collect();
        let x = Tensor::from_vec(&[2, 2, 5, 4], x).unwrap();
        let w: Vec<f64> = (0..3 * 2 * 9)
            .map(|i| ((i * 5) % 7) as f64 * 0.25 - 0.5)
            .collect();
        let w = Tensor::from_vec(&[3, 2, 3, 3], w).unwrap();
        let b = Tensor::from_vec(&[3], vec![0.5, -1.0, 2.0]).unwrap();
        let f = forward(
            &spec,
            &[w.clone(), b.clone()],
            &[],
            &x,
            &out_shape,
            Mode::Eval,
            &mut rng(),
        );
        let (oh, ow) = (out_shape[1], out_shape[2]);
        for s in 0..2 {
            for oc in 0..3 {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = b.data()[oc];
                        for c in 0..2 {
                            for ky in 0..3 {
                                for kx in 0..3 {
                                    let iy = (oy * 2 + ky) as isize - 1;
                                    let ix = (ox * 2 + kx) as isize - 1;
                                    if iy < 0 || ix < 0 || iy >= 5 || ix >= 4 {
                                        continue;
                                    }
                                    acc += w.data()[((oc * 2 + c) * 3 + ky) * 3 + kx]
                                        * x.data()
                                            [((s * 2 + c) * 5 + iy as usize) * 4 + ix as usize];
                                }
                            }
                        }
                        let got = f.output.data()[((s * 3 + oc) * oh + oy) * ow + ox];
                        assert!((got - acc).abs() < 1e-12, "{got} vs {acc}");
                    }
                }
            }
        }
    }

    #[test]
    fn linear_weight_gradient_is_outer_product() {
        let spec = LayerSpec::linear(2, 2);
        let w = Tensor::<f64>::zeros(&[2, 2]);
        let b = Tensor::<f64>::zeros(&[2]);
        let x = Tensor::from_vec(&[1, 2], vec![2.0, 3.0]).unwrap();
        let f = forward(
            &spec,
            &[w.clone(), b.clone()],
            &[],
            &x,
            &[2],
            Mode::Train,
            &mut rng(),
        );
        let delta = Tensor::from_vec(&[1, 2], vec![1.0, 0.0]).unwrap();
        let g = backward(&spec, &[w, b], &x, &f.output, &f.cache, &delta, true).unwrap();
        assert_eq!(g.dparams[0].data(), &[2.0, 3.0, 0.0, 0.0]);
        assert_eq!(g.dparams[1].data(), &[1.0, 0.0]);
    }

    #[test]
    fn maxpool_routes_each_gradient_once() {
        let spec = LayerSpec::maxpool2d(2);
        let x: Vec<f64> = (0..16).map(|i| ((i * 13) % 16) as f64).collect();
        let x = Tensor::from_vec(&[1, 1, 4, 4], x).unwrap();
        let f = forward(&spec, &[], &[], &x, &[1, 2, 2], Mode::Train, &mut rng());
        let dy = Tensor::from_vec(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let g = backward(&spec, &[], &x, &f.output, &f.cache, &dy, true).unwrap();
        let dx = g.dinput.unwrap();
        assert_eq!(dx.data().iter().filter(|&&v| v != 0.0).count(), 4);
        assert_eq!(dx.data().iter().sum::<f64>(), 10.0);
    }

    #[test]
    fn dropout_eval_is_identity_and_train_is_inverted() {
        let spec = LayerSpec::Dropout { p: 0.5 };
        let x = Tensor::<f64>::filled(&[4, 100], 1.0);
        let f = forward(&spec, &[], &[], &x, &[100], Mode::Eval, &mut rng());
        assert_eq!(f.output, x);
        let f = forward(&spec, &[], &[], &x, &[100], Mode::Train, &mut rng());
        assert!(f.output.data().iter().all(|&v| v == 0.0 || v == 2.0));
        let kept = f.output.data().iter().filter(|&&v| v == 2.0).count();
        assert!((150..250).contains(&kept), "kept {kept}");
    }
}
