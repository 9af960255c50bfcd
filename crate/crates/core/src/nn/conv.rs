use rand::Rng;

use super::{Module, Param};
use crate::error::{Error, Result};
use crate::tensor::{gemm, MatLayout, Scalar, Tensor};

/// Geometry of a strided convolution from an "image" side `(c, h, w)` to a
/// "column" side `(ho, wo)`. A transposed convolution uses the same geometry
/// with the roles of input and output swapped.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Geom {
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geom {
    fn rows(&self) -> usize {
        self.c * self.k * self.k
    }

    /// Range of output columns `o` for which `o * stride + kk - pad` lands in
    /// `[0, extent)`.
    #[inline]
    fn valid_range(&self, kk: usize, extent: usize, out: usize) -> (usize, usize) {
        let s = self.stride as isize;
        let off = kk as isize - self.pad as isize;
        // smallest o with o*s + off >= 0
        let lo = if off >= 0 { 0 } else { ((-off) + s - 1) / s };
        // largest o with o*s + off <= extent - 1
        let hi_num = extent as isize - 1 - off;
        let hi = if hi_num < 0 { -1 } else { hi_num / s };
        let lo = lo.max(0) as usize;
        let hi = (hi.min(out as isize - 1) + 1).max(0) as usize;
        (lo.min(hi), hi)
    }
}

/// Unfold `n` images of shape `(c, h, w)` into a `(c*k*k) x (n*ho*wo)` matrix.
fn im2col<T: Scalar>(x: &[T], n: usize, g: &Geom, col: &mut [T]) {
    let hwo = g.ho * g.wo;
    let ncols = n * hwo;
    let img = g.c * g.h * g.w;
    debug_assert_eq!(col.len(), g.rows() * ncols);
    for c in 0..g.c {
        for kh in 0..g.k {
            let (oh_lo, oh_hi) = g.valid_range(kh, g.h, g.ho);
            for kw in 0..g.k {
                let (ow_lo, ow_hi) = g.valid_range(kw, g.w, g.wo);
                let row = (c * g.k + kh) * g.k + kw;
                let row_base = row * ncols;
                for b in 0..n {
                    let dst = &mut col[row_base + b * hwo..row_base + (b + 1) * hwo];
                    let src = &x[b * img + c * g.h * g.w..b * img + (c + 1) * g.h * g.w];
                    for oh in 0..g.ho {
                        let drow = &mut dst[oh * g.wo..(oh + 1) * g.wo];
                        if oh < oh_lo || oh >= oh_hi {
                            drow.iter_mut().for_each(|v| *v = T::ZERO);
                            continue;
                        }
                        let ih = oh * g.stride + kh - g.pad;
                        let srow = &src[ih * g.w..(ih + 1) * g.w];
                        drow[..ow_lo].iter_mut().for_each(|v| *v = T::ZERO);
                        drow[ow_hi..].iter_mut().for_each(|v| *v = T::ZERO);
                        let base = ow_lo * g.stride + kw - g.pad;
                        for (j, d) in drow[ow_lo..ow_hi].iter_mut().enumerate() {
                            *d = srow[base + j * g.stride];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulate columns back into images (`x` must be
/// zeroed by the caller if accumulation is not wanted).
fn col2im<T: Scalar>(col: &[T], n: usize, g: &Geom, x: &mut [T]) {
    let hwo = g.ho * g.wo;
    let ncols = n * hwo;
    let img = g.c * g.h * g.w;
    for c in 0..g.c {
        for kh in 0..g.k {
            let (oh_lo, oh_hi) = g.valid_range(kh, g.h, g.ho);
            for kw in 0..g.k {
                let (ow_lo, ow_hi) = g.valid_range(kw, g.w, g.wo);
                let row = (c * g.k + kh) * g.k + kw;
                let row_base = row * ncols;
                for b in 0..n {
                    let src = &col[row_base + b * hwo..row_base + (b + 1) * hwo];
                    let dst = &mut x[b * img + c * g.h * g.w..b * img + (c + 1) * g.h * g.w];
                    for oh in oh_lo..oh_hi {
                        let ih = oh * g.stride + kh - g.pad;
                        let base = ih * g.w + ow_lo * g.stride + kw - g.pad;
                        let srow = &src[oh * g.wo + ow_lo..oh * g.wo + ow_hi];
                        for (j, &v) in srow.iter().enumerate() {
                            dst[base + j * g.stride] += v;
                        }
                    }
                }
            }
        }
    }
}

/// `(n, c, hw)` -> `(c, n*hw)`.
fn to_channel_major<T: Scalar>(x: &[T], n: usize, c: usize, hw: usize) -> Vec<T> {
    let mut out = vec![T::ZERO; x.len()];
    for b in 0..n {
        for ch in 0..c {
            let src = &x[(b * c + ch) * hw..(b * c + ch + 1) * hw];
            out[ch * n * hw + b * hw..ch * n * hw + (b + 1) * hw].copy_from_slice(src);
        }
    }
    out
}

/// `(c, n*hw)` -> `(n, c, hw)`, adding `bias[c]` if given.
fn from_channel_major<T: Scalar>(m: &[T], n: usize, c: usize, hw: usize, bias: Option<&[T]>) -> Vec<T> {
    let mut out = vec![T::ZERO; m.len()];
    for b in 0..n {
        for ch in 0..c {
            let src = &m[ch * n * hw + b * hw..ch * n * hw + (b + 1) * hw];
            let dst = &mut out[(b * c + ch) * hw..(b * c + ch + 1) * hw];
            match bias {
                Some(bs) => {
                    let bv = bs[ch];
                    for (d, &s) in dst.iter_mut().zip(src) {
                        *d = s + bv;
                    }
                }
                None => dst.copy_from_slice(src),
            }
        }
    }
    out
}

fn add_bias_grad<T: Scalar>(dy: &[T], n: usize, c: usize, hw: usize, grad: &mut [T]) {
    for b in 0..n {
        for ch in 0..c {
            let s: f64 = dy[(b * c + ch) * hw..(b * c + ch + 1) * hw]
                .iter()
                .map(|v| v.to_f64())
                .sum();
            grad[ch] += T::of(s);
        }
    }
}

fn out_size(input: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if padded < k {
        None
    } else {
        Some((padded - k) / stride + 1)
    }
}

enum ConvSaved<T> {
    /// Unfolded input, for the GEMM path.
    Col(Vec<T>),
    /// Raw input, for the direct path.
    Input(Vec<T>),
}

struct ConvCache<T> {
    saved: ConvSaved<T>,
    n: usize,
    geom: Geom,
}

/// Below this many output channels a GEMM degenerates to a skinny product
/// that runs far below peak; such layers are computed directly.
const DIRECT_MAX_OUT: usize = 4;

/// Direct convolution: `y[b, o] = bias[o] + sum_{c, kh, kw} w[o, c, kh, kw] * shifted x[b, c]`.
fn direct_forward<T: Scalar>(x: &[T], n: usize, g: &Geom, w: &[T], bias: &[T], out_c: usize) -> Vec<T> {
    let (hw_in, hw_out) = (g.h * g.w, g.ho * g.wo);
    let mut y = vec![T::ZERO; n * out_c * hw_out];
    for b in 0..n {
        for o in 0..out_c {
            let dst = &mut y[(b * out_c + o) * hw_out..(b * out_c + o + 1) * hw_out];
            dst.iter_mut().for_each(|v| *v = bias[o]);
            for c in 0..g.c {
                let src = &x[(b * g.c + c) * hw_in..(b * g.c + c + 1) * hw_in];
                for kh in 0..g.k {
                    let (oh_lo, oh_hi) = g.valid_range(kh, g.h, g.ho);
                    for kw in 0..g.k {
                        let (ow_lo, ow_hi) = g.valid_range(kw, g.w, g.wo);
                        let wv = w[((o * g.c + c) * g.k + kh) * g.k + kw];
                        for oh in oh_lo..oh_hi {
                            let ih = oh * g.stride + kh - g.pad;
                            let base = ih * g.w + ow_lo * g.stride + kw - g.pad;
                            let drow = &mut dst[oh * g.wo + ow_lo..oh * g.wo + ow_hi];
                            if g.stride == 1 {
                                let len = drow.len();
                                for (d, &s) in drow.iter_mut().zip(&src[base..base + len]) {
                                    *d += wv * s;
                                }
                            } else {
                                for (j, d) in drow.iter_mut().enumerate() {
                                    *d += wv * src[base + j * g.stride];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    y
}

/// Weight gradient and (optionally) input gradient of [`direct_forward`].
#[allow(clippy::too_many_arguments)]
fn direct_backward<T: Scalar>(
    x: &[T],
    dy: &[T],
    n: usize,
    g: &Geom,
    w: &[T],
    dw: &mut [T],
    out_c: usize,
    mut dx: Option<&mut [T]>,
) {
    let (hw_in, hw_out) = (g.h * g.w, g.ho * g.wo);
    for b in 0..n {
        for o in 0..out_c {
            let gy = &dy[(b * out_c + o) * hw_out..(b * out_c + o + 1) * hw_out];
            for c in 0..g.c {
                let src = &x[(b * g.c + c) * hw_in..(b * g.c + c + 1) * hw_in];
                for kh in 0..g.k {
                    let (oh_lo, oh_hi) = g.valid_range(kh, g.h, g.ho);
                    for kw in 0..g.k {
                        let (ow_lo, ow_hi) = g.valid_range(kw, g.w, g.wo);
                        let wi = ((o * g.c + c) * g.k + kh) * g.k + kw;
                        let wv = w[wi];
                        let mut acc = T::ZERO;
                        for oh in oh_lo..oh_hi {
                            let ih = oh * g.stride + kh - g.pad;
                            let base = ih * g.w + ow_lo * g.stride + kw - g.pad;
                            let grow = &gy[oh * g.wo + ow_lo..oh * g.wo + ow_hi];
                            if g.stride == 1 {
                                let srow = &src[base..base + grow.len()];
                                let mut part = T::ZERO;
                                for (&a, &s) in grow.iter().zip(srow) {
                                    part += a * s;
                                }
                                acc += part;
                                if let Some(dx) = dx.as_deref_mut() {
                                    let off = (b * g.c + c) * hw_in + base;
                                    for (d, &a) in dx[off..off + grow.len()].iter_mut().zip(grow) {
                                        *d += wv * a;
                                    }
                                }
                            } else {
                                for (j, &a) in grow.iter().enumerate() {
                                    acc += a * src[base + j * g.stride];
                                }
                                if let Some(dx) = dx.as_deref_mut() {
                                    let off = (b * g.c + c) * hw_in + base;
                                    for (j, &a) in grow.iter().enumerate() {
                                        dx[off + j * g.stride] += wv * a;
                                    }
                                }
                            }
                        }
                        dw[wi] += acc;
                    }
                }
            }
        }
    }
}

/// 2-D convolution with square kernels; weight layout `(out, in, k, k)`.
pub struct Conv2d<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    cache: Option<ConvCache<T>>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new<R: Rng + ?Sized>(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        init_std: f64,
        rng: &mut R,
    ) -> Self {
        Conv2d {
            weight: Param::normal(
                "weight",
                vec![out_channels, in_channels, kernel, kernel],
                0.0,
                init_std,
                rng,
            ),
            bias: Param::zeros("bias", vec![out_channels]),
            in_channels,
            out_channels,
            kernel,
            stride,
            pad,
            cache: None,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        Some((
            out_size(h, self.kernel, self.stride, self.pad)?,
            out_size(w, self.kernel, self.stride, self.pad)?,
        ))
    }

    pub fn forward(&mut self, x: &Tensor<T>, record: bool) -> Result<Tensor<T>> {
        let (y, cache) = self.run(x, record)?;
        self.cache = cache;
        Ok(y)
    }

    /// Forward pass that leaves the layer untouched.
    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.run(x, false)?.0)
    }

    fn run(&self, x: &Tensor<T>, record: bool) -> Result<(Tensor<T>, Option<ConvCache<T>>)> {
        let [n, c, h, w] = x.shape();
        if c != self.in_channels {
            return Err(Error::shape(
                format!("{} input channels", self.in_channels),
                x.shape(),
            ));
        }
        let (ho, wo) = self
            .output_hw(h, w)
            .ok_or_else(|| Error::shape(format!("spatial size >= {}", self.kernel), x.shape()))?;
        let geom = Geom {
            c,
            h,
            w,
            k: self.kernel,
            stride: self.stride,
            pad: self.pad,
            ho,
            wo,
        };
        if self.out_channels <= DIRECT_MAX_OUT {
            let y = direct_forward(x.data(), n, &geom, &self.weight.value, &self.bias.value, self.out_channels);
            let cache = record.then(|| ConvCache {
                saved: ConvSaved::Input(x.data().to_vec()),
                n,
                geom,
            });
            return Ok((Tensor::from_vec([n, self.out_channels, ho, wo], y)?, cache));
        }
        let ncols = n * ho * wo;
        let mut col = vec![T::ZERO; geom.rows() * ncols];
        im2col(x.data(), n, &geom, &mut col);
        let mut out = vec![T::ZERO; self.out_channels * ncols];
        gemm(
            T::ONE,
            &self.weight.value,
            MatLayout::rm(self.out_channels, geom.rows()),
            &col,
            MatLayout::rm(geom.rows(), ncols),
            T::ZERO,
            &mut out,
            MatLayout::rm(self.out_channels, ncols),
        );
        let y = from_channel_major(&out, n, self.out_channels, ho * wo, Some(&self.bias.value));
        let cache = record.then_some(ConvCache {
            saved: ConvSaved::Col(col),
            n,
            geom,
        });
        Ok((Tensor::from_vec([n, self.out_channels, ho, wo], y)?, cache))
    }

    /// Accumulates weight/bias gradients; returns the input gradient when
    /// `need_input_grad` is set.
    pub fn backward(&mut self, dy: &Tensor<T>, need_input_grad: bool) -> Result<Option<Tensor<T>>> {
        self.backward_impl(dy, need_input_grad, true)
    }

    /// Input gradient only; parameter gradients are left untouched.
    pub fn backward_input(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.backward_impl(dy, true, false)?.expect("input gradient requested"))
    }

    fn backward_impl(&mut self, dy: &Tensor<T>, need_input_grad: bool, need_param_grad: bool) -> Result<Option<Tensor<T>>> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::Config("conv backward without a recorded forward".into()))?;
        let g = cache.geom;
        let n = cache.n;
        dy.expect_shape([n, self.out_channels, g.ho, g.wo])?;
        let hwo = g.ho * g.wo;
        let ncols = n * hwo;
        if need_param_grad {
            add_bias_grad(dy.data(), n, self.out_channels, hwo, &mut self.bias.grad);
        }
        let col = match cache.saved {
            ConvSaved::Col(col) => col,
            ConvSaved::Input(x) => {
                let mut dx = need_input_grad.then(|| vec![T::ZERO; x.len()]);
                let mut scratch = Vec::new();
                let dw = if need_param_grad {
                    &mut self.weight.grad
                } else {
                    scratch.resize(self.weight.value.len(), T::ZERO);
                    &mut scratch
                };
                direct_backward(&x, dy.data(), n, &g, &self.weight.value, dw, self.out_channels, dx.as_deref_mut());
                return dx.map(|d| Tensor::from_vec([n, g.c, g.h, g.w], d)).transpose();
            }
        };
        let dy_m = to_channel_major(dy.data(), n, self.out_channels, hwo);
        if need_param_grad {
            gemm(
                T::ONE,
                &dy_m,
                MatLayout::rm(self.out_channels, ncols),
                &col,
                MatLayout::rm_t(g.rows(), ncols),
                T::ONE,
                &mut self.weight.grad,
                MatLayout::rm(self.out_channels, g.rows()),
            );
        }
        if !need_input_grad {
            return Ok(None);
        }
        let mut dcol = col;
        gemm(
            T::ONE,
            &self.weight.value,
            MatLayout::rm_t(self.out_channels, g.rows()),
            &dy_m,
            MatLayout::rm(self.out_channels, ncols),
            T::ZERO,
            &mut dcol,
            MatLayout::rm(g.rows(), ncols),
        );
        let mut dx = vec![T::ZERO; n * g.c * g.h * g.w];
        col2im(&dcol, n, &g, &mut dx);
        Ok(Some(Tensor::from_vec([n, g.c, g.h, g.w], dx)?))
    }
}

impl<T: Scalar> Module<T> for Conv2d<T> {
    fn params(&self) -> Vec<&Param<T>> {
        vec![&self.weight, &self.bias]
    }
    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.weight, &mut self.bias]
    }
}

struct ConvTCache<T> {
    x_cm: Vec<T>,
    n: usize,
    geom: Geom,
}

/// Transposed 2-D convolution; weight layout `(in, out, k, k)`.
pub struct ConvTranspose2d<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    cache: Option<ConvTCache<T>>,
}

impl<T: Scalar> ConvTranspose2d<T> {
    pub fn new<R: Rng + ?Sized>(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        init_std: f64,
        rng: &mut R,
    ) -> Self {
        ConvTranspose2d {
            weight: Param::normal(
                "weight",
                vec![in_channels, out_channels, kernel, kernel],
                0.0,
                init_std,
                rng,
            ),
            bias: Param::zeros("bias", vec![out_channels]),
            in_channels,
            out_channels,
            kernel,
            stride,
            pad,
            cache: None,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let f = |v: usize| ((v - 1) * self.stride + self.kernel).checked_sub(2 * self.pad);
        if h == 0 || w == 0 {
            return None;
        }
        Some((f(h)?, f(w)?))
    }

    pub fn forward(&mut self, x: &Tensor<T>, record: bool) -> Result<Tensor<T>> {
        let (y, cache) = self.run(x, record)?;
        self.cache = cache;
        Ok(y)
    }

    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.run(x, false)?.0)
    }

    fn run(&self, x: &Tensor<T>, record: bool) -> Result<(Tensor<T>, Option<ConvTCache<T>>)> {
        let [n, c, h, w] = x.shape();
        if c != self.in_channels {
            return Err(Error::shape(
                format!("{} input channels", self.in_channels),
                x.shape(),
            ));
        }
        let (ho, wo) = self
            .output_hw(h, w)
            .ok_or_else(|| Error::shape("non-empty spatial size", x.shape()))?;
        let geom = Geom {
            c: self.out_channels,
            h: ho,
            w: wo,
            k: self.kernel,
            stride: self.stride,
            pad: self.pad,
            ho: h,
            wo: w,
        };
        let hw_in = h * w;
        let ncols = n * hw_in;
        let x_cm = to_channel_major(x.data(), n, c, hw_in);
        let mut cols = vec![T::ZERO; geom.rows() * ncols];
        gemm(
            T::ONE,
            &self.weight.value,
            MatLayout::rm_t(self.in_channels, geom.rows()),
            &x_cm,
            MatLayout::rm(c, ncols),
            T::ZERO,
            &mut cols,
            MatLayout::rm(geom.rows(), ncols),
        );
        let mut out = vec![T::ZERO; n * self.out_channels * ho * wo];
        col2im(&cols, n, &geom, &mut out);
        let hwo = ho * wo;
        for b in 0..n {
            for ch in 0..self.out_channels {
                let bv = self.bias.value[ch];
                out[(b * self.out_channels + ch) * hwo..(b * self.out_channels + ch + 1) * hwo]
                    .iter_mut()
                    .for_each(|v| *v += bv);
            }
        }
        let cache = record.then_some(ConvTCache { x_cm, n, geom });
        Ok((Tensor::from_vec([n, self.out_channels, ho, wo], out)?, cache))
    }

    pub fn backward(&mut self, dy: &Tensor<T>, need_input_grad: bool) -> Result<Option<Tensor<T>>> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::Config("conv-transpose backward without a recorded forward".into()))?;
        let g = cache.geom;
        let n = cache.n;
        dy.expect_shape([n, self.out_channels, g.h, g.w])?;
        add_bias_grad(dy.data(), n, self.out_channels, g.h * g.w, &mut self.bias.grad);
        let ncols = n * g.ho * g.wo;
        let mut dcol = vec![T::ZERO; g.rows() * ncols];
        im2col(dy.data(), n, &g, &mut dcol);
        gemm(
            T::ONE,
            &cache.x_cm,
            MatLayout::rm(self.in_channels, ncols),
            &dcol,
            MatLayout::rm_t(g.rows(), ncols),
            T::ONE,
            &mut self.weight.grad,
            MatLayout::rm(self.in_channels, g.rows()),
        );
        if !need_input_grad {
            return Ok(None);
        }
        let mut dx_cm = cache.x_cm;
        gemm(
            T::ONE,
            &self.weight.value,
            MatLayout::rm(self.in_channels, g.rows()),
            &dcol,
            MatLayout::rm(g.rows(), ncols),
            T::ZERO,
            &mut dx_cm,
            MatLayout::rm(self.in_channels, ncols),
        );
        let dx = from_channel_major(&dx_cm, n, self.in_channels, g.ho * g.wo, None);
        Ok(Some(Tensor::from_vec([n, self.in_channels, g.ho, g.wo], dx)?))
    }
}

impl<T: Scalar> Module<T> for ConvTranspose2d<T> {
    fn params(&self) -> Vec<&Param<T>> {
        vec![&self.weight, &self.bias]
    }
    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.weight, &mut self.bias]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Direct definition of a strided, zero-padded cross-correlation.
    fn naive_conv(x: &Tensor<f64>, wt: &[f64], bias: &[f64], o: usize, k: usize, s: usize, p: usize) -> Tensor<f64> {
        let [n, c, h, w] = x.shape();
        let ho = (h + 2 * p - k) / s + 1;
        let wo = (w + 2 * p - k) / s + 1;
        Tensor::from_fn([n, o, ho, wo], |[b, oc, i, j]| {
            let mut acc = bias[oc];
            for ic in 0..c {
                for kh in 0..k {
                    for kw in 0..k {
                        let ih = (i * s + kh) as isize - p as isize;
                        let iw = (j * s + kw) as isize - p as isize;
                        if ih < 0 || iw < 0 || ih >= h as isize || iw >= w as isize {
                            continue;
                        }
                        acc += wt[((oc * c + ic) * k + kh) * k + kw] * x.get([b, ic, ih as usize, iw as usize]);
                    }
                }
            }
            acc
        })
    }

    /// Scatter definition of a transposed convolution.
    fn naive_convt(x: &Tensor<f64>, wt: &[f64], bias: &[f64], o: usize, k: usize, s: usize, p: usize) -> Tensor<f64> {
        let [n, c, h, w] = x.shape();
        let ho = (h - 1) * s + k - 2 * p;
        let wo = (w - 1) * s + k - 2 * p;
        let mut out = Tensor::from_fn([n, o, ho, wo], |[_, oc, _, _]| bias[oc]);
        for b in 0..n {
            for ic in 0..c {
                for i in 0..h {
                    for j in 0..w {
                        for oc in 0..o {
                            for kh in 0..k {
                                for kw in 0..k {
                                    let oh = (i * s + kh) as isize - p as isize;
                                    let ow = (j * s + kw) as isize - p as isize;
                                    if oh < 0 || ow < 0 || oh >= ho as isize || ow >= wo as isize {
                                        continue;
                                    }
                                    let idx = [b, oc, oh as usize, ow as usize];
                                    let v = out.get(idx) + wt[((ic * o + oc) * k + kh) * k + kw] * x.get([b, ic, i, j]);
                                    out.set(idx, v);
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    fn random_tensor(shape: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn conv_forward_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cases = [(4, 2, 1, 8), (4, 1, 1, 5), (3, 1, 1, 6), (4, 2, 1, 2)];
        for (&(k, s, p, h), o) in cases.iter().flat_map(|c| [(c, 5), (c, 1), (c, 2)]) {
            let mut conv = Conv2d::<f64>::new(3, o, k, s, p, 0.5, &mut rng);
            conv.bias.value.iter_mut().for_each(|b| *b = rng.random_range(-1.0..1.0));
            let x = random_tensor([2, 3, h, h + 1], &mut rng);
            let y = conv.forward(&x, false).unwrap();
            let want = naive_conv(&x, &conv.weight.value, &conv.bias.value, o, k, s, p);
            assert_eq!(y.shape(), want.shape());
            for (a, b) in y.data().iter().zip(want.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_transpose_forward_matches_scatter() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for &h in &[1usize, 2, 5] {
            let mut ct = ConvTranspose2d::<f64>::new(3, 2, 4, 2, 1, 0.5, &mut rng);
            ct.bias.value = vec![0.25, -0.5];
            let x = random_tensor([2, 3, h, h], &mut rng);
            let y = ct.forward(&x, false).unwrap();
            assert_eq!(y.shape(), [2, 2, 2 * h, 2 * h]);
            let want = naive_convt(&x, &ct.weight.value, &ct.bias.value, 2, 4, 2, 1);
            for (a, b) in y.data().iter().zip(want.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    /// Backward passes must be the exact adjoint of the forward maps:
    /// <dy, J dx> == <J^T dy, dx> and similarly for weights.
    #[test]
    fn backward_is_adjoint_of_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut conv = Conv2d::<f64>::new(2, 3, 4, 2, 1, 0.5, &mut rng);
        let x = random_tensor([2, 2, 6, 6], &mut rng);
        let dx = random_tensor([2, 2, 6, 6], &mut rng);
        let y0 = conv.forward(&x, false).unwrap();
        let x1 = x.zip_map(&dx, |a, b| a + b).unwrap();
        let y1 = conv.forward(&x1, false).unwrap();
        let dy = random_tensor(y0.shape(), &mut rng);
        conv.forward(&x, true).unwrap();
        let gx = conv.backward(&dy, true).unwrap().unwrap();
        // linear in x up to bias: J dx = y1 - y0
        let lhs: f64 = dy.data().iter().zip(y1.data().iter().zip(y0.data())).map(|(d, (a, b))| d * (a - b)).sum();
        let rhs: f64 = gx.data().iter().zip(dx.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");

        let mut ct = ConvTranspose2d::<f64>::new(3, 2, 4, 2, 1, 0.5, &mut rng);
        let x = random_tensor([2, 3, 3, 3], &mut rng);
        let dx = random_tensor([2, 3, 3, 3], &mut rng);
        let y0 = ct.forward(&x, false).unwrap();
        let y1 = ct.forward(&x.zip_map(&dx, |a, b| a + b).unwrap(), false).unwrap();
        let dy = random_tensor(y0.shape(), &mut rng);
        ct.forward(&x, true).unwrap();
        let gx = ct.backward(&dy, true).unwrap().unwrap();
        let lhs: f64 = dy.data().iter().zip(y1.data().iter().zip(y0.data())).map(|(d, (a, b))| d * (a - b)).sum();
        let rhs: f64 = gx.data().iter().zip(dx.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
    }

    /// Both conv paths: input and weight gradients against the forward map.
    #[test]
    fn conv_gradients_are_adjoint_for_both_paths() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for &(o, k, s) in &[(1, 3, 1), (2, 4, 2), (6, 3, 1), (6, 4, 2)] {
            let mut conv = Conv2d::<f64>::new(3, o, k, s, 1, 0.5, &mut rng);
            let x = random_tensor([2, 3, 7, 6], &mut rng);
            let dx = random_tensor([2, 3, 7, 6], &mut rng);
            let y0 = conv.forward(&x, false).unwrap();
            let dy = random_tensor(y0.shape(), &mut rng);
            let dot = |a: &Tensor<f64>, b: &Tensor<f64>| -> f64 { a.data().iter().zip(b.data()).map(|(p, q)| p * q).sum() };

            conv.forward(&x, true).unwrap();
            let gx = conv.backward(&dy, true).unwrap().unwrap();
            let y1 = conv.forward(&x.zip_map(&dx, |a, b| a + b).unwrap(), false).unwrap();
            let lhs = dot(&dy, &y1) - dot(&dy, &y0);
            assert!((lhs - dot(&gx, &dx)).abs() < 1e-10, "input grad, out {o}");

            let gw = conv.weight.grad.clone();
            let gb: f64 = conv.bias.grad.iter().sum::<f64>();
            let dw: Vec<f64> = (0..gw.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            conv.weight.value.iter_mut().zip(&dw).for_each(|(w, d)| *w += d);
            let y2 = conv.forward(&x, false).unwrap();
            let lhs = dot(&dy, &y2) - dot(&dy, &y0);
            let rhs: f64 = gw.iter().zip(&dw).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-10, "weight grad, out {o}");
            let want_gb: f64 = dy.data().iter().sum();
            assert!((gb - want_gb).abs() < 1e-10);
        }
    }

    #[test]
    fn backward_without_forward_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut conv = Conv2d::<f32>::new(1, 1, 3, 1, 1, 0.02, &mut rng);
        let dy = Tensor::zeros([1, 1, 4, 4]);
        assert!(conv.backward(&dy, true).is_err());
    }

    #[test]
    fn rejects_wrong_channel_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut conv = Conv2d::<f32>::new(2, 1, 3, 1, 1, 0.02, &mut rng);
        assert!(matches!(conv.forward(&Tensor::zeros([1, 3, 4, 4]), false), Err(Error::Shape { .. })));
    }
}
