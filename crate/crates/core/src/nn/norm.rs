use super::{Module, Param};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

const EPS: f64 = 1e-5;
const MOMENTUM: f64 = 0.1;

enum NormCache<T> {
    /// Normalized activations and per-channel `1/sqrt(var + eps)`.
    Batch { xhat: Vec<T>, inv_std: Vec<T> },
    Running { inv_std: Vec<T> },
    /// A single value per channel has no usable variance; the layer was a
    /// pass-through.
    Identity,
}

/// Batch normalization over `(N, H, W)` per channel with learnable affine
/// parameters and running statistics for inference.
pub struct BatchNorm2d<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Param<T>,
    pub running_var: Param<T>,
    channels: usize,
    cache: Option<NormCache<T>>,
}

impl<T: Scalar> BatchNorm2d<T> {
    pub fn new(gamma: Param<T>, channels: usize) -> Self {
        debug_assert_eq!(gamma.len(), channels);
        BatchNorm2d {
            gamma,
            beta: Param::zeros("beta", vec![channels]),
            running_mean: Param::zeros("running_mean", vec![channels]),
            running_var: Param::filled("running_var", vec![channels], T::ONE),
            channels,
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor<T>, batch_stats: bool, record: bool) -> Result<Tensor<T>> {
        let [n, c, h, w] = x.shape();
        if c != self.channels {
            return Err(Error::shape(format!("{} channels", self.channels), x.shape()));
        }
        let hw = h * w;
        let count = n * hw;
        let mut y = x.clone();
        if batch_stats && count == 1 {
            self.cache = record.then_some(NormCache::Identity);
            return Ok(y);
        }
        if batch_stats {
            let mut inv_std = vec![T::ZERO; c];
            let mut xhat = if record { vec![T::ZERO; x.len()] } else { Vec::new() };
            for ch in 0..c {
                let mut sum = 0.0;
                for b in 0..n {
                    let base = (b * c + ch) * hw;
                    sum += x.data()[base..base + hw].iter().map(|v| v.to_f64()).sum::<f64>();
                }
                let mean = sum / count as f64;
                let mut sq = 0.0;
                for b in 0..n {
                    let base = (b * c + ch) * hw;
                    sq += x.data()[base..base + hw]
                        .iter()
                        .map(|v| {
                            let d = v.to_f64() - mean;
                            d * d
                        })
                        .sum::<f64>();
                }
                let var = sq / count as f64;
                let unbiased = sq / (count - 1) as f64;
                let rm = &mut self.running_mean.value[ch];
                *rm = T::of((1.0 - MOMENTUM) * rm.to_f64() + MOMENTUM * mean);
                let rv = &mut self.running_var.value[ch];
                *rv = T::of((1.0 - MOMENTUM) * rv.to_f64() + MOMENTUM * unbiased);

                let is = T::of(1.0 / (var + EPS).sqrt());
                inv_std[ch] = is;
                let m = T::of(mean);
                let (g, bt) = (self.gamma.value[ch], self.beta.value[ch]);
                for b in 0..n {
                    let base = (b * c + ch) * hw;
                    for i in base..base + hw {
                        let xh = (x.data()[i] - m) * is;
                        if record {
                            xhat[i] = xh;
                        }
                        y.data_mut()[i] = g * xh + bt;
                    }
                }
            }
            self.cache = record.then_some(NormCache::Batch { xhat, inv_std });
        } else {
            let (y, inv_std) = self.run_frozen(x);
            self.cache = record.then_some(NormCache::Running { inv_std });
            return Ok(y);
        }
        Ok(y)
    }

    /// Normalization with the running statistics; leaves the layer untouched.
    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        if x.channels() != self.channels {
            return Err(Error::shape(format!("{} channels", self.channels), x.shape()));
        }
        Ok(self.run_frozen(x).0)
    }

    fn run_frozen(&self, x: &Tensor<T>) -> (Tensor<T>, Vec<T>) {
        let [n, c, h, w] = x.shape();
        let hw = h * w;
        let mut y = x.clone();
        let mut inv_std = vec![T::ZERO; c];
        for ch in 0..c {
            let is = T::of(1.0 / (self.running_var.value[ch].to_f64() + EPS).sqrt());
            inv_std[ch] = is;
            let m = self.running_mean.value[ch];
            let (g, bt) = (self.gamma.value[ch], self.beta.value[ch]);
            for b in 0..n {
                let base = (b * c + ch) * hw;
                for v in &mut y.data_mut()[base..base + hw] {
                    *v = g * ((*v - m) * is) + bt;
                }
            }
        }
        (y, inv_std)
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::Config("batch-norm backward without a recorded forward".into()))?;
        let [n, c, h, w] = dy.shape();
        let hw = h * w;
        let count = (n * hw) as f64;
        let mut dx = dy.clone();
        match cache {
            NormCache::Identity => {}
            NormCache::Running { inv_std } => {
                for ch in 0..c {
                    let k = self.gamma.value[ch] * inv_std[ch];
                    for b in 0..n {
                        let base = (b * c + ch) * hw;
                        for v in &mut dx.data_mut()[base..base + hw] {
                            *v *= k;
                        }
                    }
                }
                // Affine gradients are not needed for frozen-statistics passes.
            }
            NormCache::Batch { xhat, inv_std } => {
                if xhat.len() != dy.len() {
                    return Err(Error::shape(xhat.len(), dy.len()));
                }
                for ch in 0..c {
                    let mut sum_dy = 0.0;
                    let mut sum_dy_xhat = 0.0;
                    for b in 0..n {
                        let base = (b * c + ch) * hw;
                        for i in base..base + hw {
                            let d = dy.data()[i].to_f64();
                            sum_dy += d;
                            sum_dy_xhat += d * xhat[i].to_f64();
                        }
                    }
                    self.beta.grad[ch] += T::of(sum_dy);
                    self.gamma.grad[ch] += T::of(sum_dy_xhat);
                    let g = self.gamma.value[ch].to_f64();
                    let scale = T::of(g * inv_std[ch].to_f64() / count);
                    let mean_term = T::of(sum_dy);
                    let xhat_term = T::of(sum_dy_xhat);
                    let cnt = T::of(count);
                    for b in 0..n {
                        let base = (b * c + ch) * hw;
                        for i in base..base + hw {
                            dx.data_mut()[i] = scale * (cnt * dy.data()[i] - mean_term - xhat[i] * xhat_term);
                        }
                    }
                }
            }
        }
        Ok(dx)
    }
}

impl<T: Scalar> Module<T> for BatchNorm2d<T> {
    fn params(&self) -> Vec<&Param<T>> {
        vec![&self.gamma, &self.beta]
    }
    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.gamma, &mut self.beta]
    }
    fn buffers(&self) -> Vec<&Param<T>> {
        vec![&self.running_mean, &self.running_var]
    }
    fn buffers_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.running_mean, &mut self.running_var]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bn(c: usize) -> BatchNorm2d<f64> {
        BatchNorm2d::new(Param::filled("gamma", vec![c], 1.0), c)
    }

    #[test]
    fn batch_stats_normalize_each_channel() {
        let x = Tensor::<f64>::from_fn([3, 2, 2, 2], |[n, c, h, w]| (n * 7 + h * 3 + w) as f64 * (c as f64 + 1.0));
        let mut layer = bn(2);
        let y = layer.forward(&x, true, false).unwrap();
        for c in 0..2 {
            let vals: Vec<f64> = (0..3)
                .flat_map(|n| (0..4).map(move |i| (n, i)))
                .map(|(n, i)| y.get([n, c, i / 2, i % 2]))
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-3);
        }
        // running stats moved toward the batch statistics
        assert!(layer.running_mean.value[0] > 0.0);
    }

    #[test]
    fn single_value_per_channel_passes_through() {
        let x = Tensor::<f64>::from_vec([1, 2, 1, 1], vec![3.0, -2.0]).unwrap();
        let mut layer = bn(2);
        let y = layer.forward(&x, true, true).unwrap();
        assert_eq!(y, x);
        assert_eq!(layer.running_mean.value, vec![0.0, 0.0]);
        let dx = layer.backward(&x).unwrap();
        assert_eq!(dx, x);
    }

    #[test]
    fn running_stats_used_in_inference() {
        let mut layer = bn(1);
        layer.running_mean.value[0] = 2.0;
        layer.running_var.value[0] = 4.0 - EPS;
        layer.gamma.value[0] = 3.0;
        layer.beta.value[0] = 1.0;
        let x = Tensor::<f64>::from_vec([1, 1, 1, 2], vec![2.0, 4.0]).unwrap();
        let y = layer.forward(&x, false, false).unwrap();
        assert!((y.data()[0] - 1.0).abs() < 1e-12);
        assert!((y.data()[1] - 4.0).abs() < 1e-12);
    }
}
