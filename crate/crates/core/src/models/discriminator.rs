use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Activation, BatchNorm2d, Conv2d, ForwardMode, Module, Param};
use crate::tensor::{Scalar, Tensor};

use super::INIT_STD;

const LEAK: f64 = 0.2;

/// Map of per-patch real/fake probabilities, shape `(n, 1, h, w)`.
pub type ProbabilityMap<T = f32> = Tensor<T>;

/// Conditional patch discriminator hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorSpec {
    /// Source and candidate target concatenated along channels.
    pub in_channels: usize,
    pub filter_schedule: Vec<usize>,
}

impl DiscriminatorSpec {
    /// 64-128-256-512 over a conditional pair of `image_channels` images.
    pub fn full_scale(image_channels: usize) -> Self {
        DiscriminatorSpec {
            in_channels: 2 * image_channels,
            filter_schedule: vec![64, 128, 256, 512],
        }
    }

    /// Same layout with the filter counts starting at `base`.
    pub fn scaled(image_channels: usize, base: usize) -> Self {
        DiscriminatorSpec {
            in_channels: 2 * image_channels,
            filter_schedule: (0..4).map(|i| base << i).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 {
            return Err(Error::Config("discriminator needs at least one input channel".into()));
        }
        if self.filter_schedule.is_empty() {
            return Err(Error::Config("discriminator filter schedule is empty".into()));
        }
        if self.filter_schedule[0] == 0 || self.filter_schedule.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config(format!(
                "discriminator filter schedule must be positive and strictly increasing, got {:?}",
                self.filter_schedule
            )));
        }
        Ok(())
    }

    /// Stride of each schedule layer: 2 everywhere except the last, which is 1.
    pub fn strides(&self) -> Vec<usize> {
        let n = self.filter_schedule.len();
        (0..n).map(|i| if i + 1 == n { 1 } else { 2 }).collect()
    }

    /// Output map size for an `h x w` input, or `None` if the input is too
    /// small to produce any patch.
    pub fn output_hw(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let step = |v: usize, s: usize| -> Option<usize> {
            let padded = v + 2;
            (padded >= 4).then(|| (padded - 4) / s + 1)
        };
        let (mut h, mut w) = (h, w);
        for s in self.strides() {
            h = step(h, s)?;
            w = step(w, s)?;
        }
        let (h, w) = (step(h, 1)?, step(w, 1)?);
        (h > 0 && w > 0).then_some((h, w))
    }
}

struct Block<T> {
    conv: Conv2d<T>,
    norm: Option<BatchNorm2d<T>>,
    out: Option<Tensor<T>>,
}

/// Scores `(source, candidate target)` pairs patch by patch. The network
/// never sees which translation direction produced the pair.
pub struct Discriminator<T> {
    spec: DiscriminatorSpec,
    blocks: Vec<Block<T>>,
    head: Conv2d<T>,
}

impl<T: Scalar> Discriminator<T> {
    pub fn new<R: Rng + ?Sized>(spec: DiscriminatorSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let mut blocks = Vec::new();
        let mut prev = spec.in_channels;
        for (i, (&ch, s)) in spec.filter_schedule.iter().zip(spec.strides()).enumerate() {
            let mut conv = Conv2d::new(prev, ch, 4, s, 1, INIT_STD, rng);
            conv.prefix_names(&format!("block{i}.conv"));
            let norm = (i > 0).then(|| {
                let mut bn = BatchNorm2d::new(Param::normal("gamma", vec![ch], 1.0, INIT_STD, rng), ch);
                bn.prefix_names(&format!("block{i}.bn"));
                bn
            });
            blocks.push(Block { conv, norm, out: None });
            prev = ch;
        }
        let mut head = Conv2d::new(prev, 1, 4, 1, 1, INIT_STD, rng);
        head.prefix_names("head.conv");
        Ok(Discriminator { spec, blocks, head })
    }

    pub fn spec(&self) -> &DiscriminatorSpec {
        &self.spec
    }

    fn check_pair(&self, source: &Tensor<T>, target: &Tensor<T>) -> Result<()> {
        if source.shape() != target.shape() {
            return Err(Error::shape(source.shape(), target.shape()));
        }
        let [_, c, h, w] = source.shape();
        if 2 * c != self.spec.in_channels {
            return Err(Error::shape(
                format!("pair of {}-channel images", self.spec.in_channels / 2),
                source.shape(),
            ));
        }
        if self.spec.output_hw(h, w).is_none() {
            return Err(Error::shape("larger spatial size", source.shape()));
        }
        Ok(())
    }

    /// Pre-sigmoid patch scores.
    pub fn forward_logits(&mut self, source: &Tensor<T>, target: &Tensor<T>, mode: ForwardMode) -> Result<Tensor<T>> {
        self.check_pair(source, target)?;
        let mut h = Tensor::concat_channels(source, target)?;
        for block in &mut self.blocks {
            let mut y = block.conv.forward(&h, mode.record)?;
            if let Some(bn) = block.norm.as_mut() {
                y = bn.forward(&y, mode.batch_stats, mode.record)?;
            }
            Activation::LeakyRelu(LEAK).apply(&mut y);
            if mode.record {
                block.out = Some(y.clone());
            }
            h = y;
        }
        self.head.forward(&h, mode.record)
    }

    /// Patch probabilities (sigmoid of the scores).
    pub fn forward(&mut self, source: &Tensor<T>, target: &Tensor<T>, mode: ForwardMode) -> Result<ProbabilityMap<T>> {
        let mut p = self.forward_logits(source, target, mode)?;
        Activation::Sigmoid.apply(&mut p);
        Ok(p)
    }

    /// Inference with running statistics; does not mutate the network.
    pub fn infer(&self, source: &Tensor<T>, target: &Tensor<T>) -> Result<ProbabilityMap<T>> {
        self.check_pair(source, target)?;
        let mut h = Tensor::concat_channels(source, target)?;
        for block in &self.blocks {
            let mut y = block.conv.infer(&h)?;
            if let Some(bn) = block.norm.as_ref() {
                y = bn.infer(&y)?;
            }
            Activation::LeakyRelu(LEAK).apply(&mut y);
            h = y;
        }
        let mut p = self.head.infer(&h)?;
        Activation::Sigmoid.apply(&mut p);
        Ok(p)
    }

    /// Backpropagate `d loss / d logits`. Returns the gradient with respect to
    /// the candidate target when `need_target_grad` is set.
    pub fn backward(&mut self, dlogits: &Tensor<T>, need_target_grad: bool) -> Result<Option<Tensor<T>>> {
        self.backward_impl(dlogits, need_target_grad, true)
    }

    /// Gradient with respect to the candidate target only. Convolution
    /// parameter gradients are not accumulated; normalization parameter
    /// gradients are, so callers should still zero them.
    pub fn backward_target(&mut self, dlogits: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.backward_impl(dlogits, true, false)?.expect("target gradient requested"))
    }

    fn backward_impl(&mut self, dlogits: &Tensor<T>, need_target_grad: bool, need_param_grad: bool) -> Result<Option<Tensor<T>>> {
        let mut g = if need_param_grad {
            self.head.backward(dlogits, true)?.expect("input gradient requested")
        } else {
            self.head.backward_input(dlogits)?
        };
        let n = self.blocks.len();
        for i in (0..n).rev() {
            let block = &mut self.blocks[i];
            let out = block
                .out
                .take()
                .ok_or_else(|| Error::Config("discriminator backward without a recorded forward".into()))?;
            Activation::LeakyRelu(LEAK).backward(&out, &mut g);
            if let Some(bn) = block.norm.as_mut() {
                g = bn.backward(&g)?;
            }
            let need = i > 0 || need_target_grad;
            if !need_param_grad {
                g = block.conv.backward_input(&g)?;
                continue;
            }
            match block.conv.backward(&g, need)? {
                Some(next) => g = next,
                None => return Ok(None),
            }
        }
        let (_, g_target) = g.split_channels(self.spec.in_channels / 2);
        Ok(Some(g_target))
    }

    /// Zero the final layer so every patch scores exactly 0.5.
    pub fn zero_head(&mut self) {
        self.head.weight.value.iter_mut().for_each(|v| *v = T::ZERO);
        self.head.bias.value.iter_mut().for_each(|v| *v = T::ZERO);
    }
}

impl<T: Scalar> Module<T> for Discriminator<T> {
    fn params(&self) -> Vec<&Param<T>> {
        let mut v = Vec::new();
        for b in &self.blocks {
            v.extend(b.conv.params());
            if let Some(n) = &b.norm {
                v.extend(n.params());
            }
        }
        v.extend(self.head.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = Vec::new();
        for b in &mut self.blocks {
            v.extend(b.conv.params_mut());
            if let Some(n) = &mut b.norm {
                v.extend(n.params_mut());
            }
        }
        v.extend(self.head.params_mut());
        v
    }

    fn buffers(&self) -> Vec<&Param<T>> {
        self.blocks
            .iter()
            .filter_map(|b| b.norm.as_ref())
            .flat_map(|n| n.buffers())
            .collect()
    }

    fn buffers_mut(&mut self) -> Vec<&mut Param<T>> {
        self.blocks
            .iter_mut()
            .filter_map(|b| b.norm.as_mut())
            .flat_map(|n| n.buffers_mut())
            .collect()
    }
}
