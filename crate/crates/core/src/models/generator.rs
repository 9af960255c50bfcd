use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Activation, BatchNorm2d, Conv2d, ConvTranspose2d, Dropout, ForwardMode, Module, Param};
use crate::tensor::{Scalar, Tensor};

use super::INIT_STD;

const LEAK: f64 = 0.2;
/// Number of innermost decoder blocks that carry dropout (the noise input).
const DROPOUT_BLOCKS: usize = 3;

/// U-Net generator hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    /// Number of stride-2 downsamplings.
    pub depth: usize,
    pub base_filters: usize,
    pub max_filters: usize,
    pub dropout_p: f64,
}

impl GeneratorSpec {
    /// The 256x256 single-channel configuration: eight downsamplings from 64 to
    /// 512 filters.
    pub fn full_scale() -> Self {
        GeneratorSpec {
            in_channels: 1,
            out_channels: 1,
            depth: 8,
            base_filters: 64,
            max_filters: 512,
            dropout_p: 0.5,
        }
    }

    /// The desk-scale configuration used for the synthetic experiments.
    pub fn desk(channels: usize) -> Self {
        GeneratorSpec {
            in_channels: channels,
            out_channels: channels,
            depth: 6,
            base_filters: 32,
            max_filters: 512,
            dropout_p: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth < 2 {
            return Err(Error::Config(format!("generator depth must be >= 2, got {}", self.depth)));
        }
        if self.depth > 16 {
            return Err(Error::Config(format!("generator depth {} is unreasonably large", self.depth)));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::Config("generator channel counts must be positive".into()));
        }
        if self.base_filters == 0 || self.max_filters < self.base_filters {
            return Err(Error::Config(format!(
                "need 0 < base_filters <= max_filters, got {} and {}",
                self.base_filters, self.max_filters
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config(format!("dropout_p must be in [0, 1), got {}", self.dropout_p)));
        }
        Ok(())
    }

    /// Output channels of each encoder level: `min(base * 2^i, max)`.
    pub fn encoder_channels(&self) -> Vec<usize> {
        (0..self.depth)
            .map(|i| (self.base_filters << i.min(30)).min(self.max_filters))
            .collect()
    }

    /// Output channels of each decoder block, before concatenation with the
    /// mirrored encoder features.
    pub fn decoder_output_channels(&self) -> Vec<usize> {
        let enc = self.encoder_channels();
        let d = self.depth;
        (0..d)
            .map(|j| if j + 2 <= d { enc[d - 2 - j] } else { self.base_filters })
            .collect()
    }

    /// Input channels of each decoder block (after skip concatenation).
    pub fn decoder_input_channels(&self) -> Vec<usize> {
        let enc = self.encoder_channels();
        let out = self.decoder_output_channels();
        let d = self.depth;
        (0..d)
            .map(|j| if j == 0 { enc[d - 1] } else { out[j - 1] + enc[d - 1 - j] })
            .collect()
    }

    /// Images must have sides divisible by `2^depth`.
    pub fn size_multiple(&self) -> usize {
        1 << self.depth
    }

    pub fn check_input(&self, shape: [usize; 4]) -> Result<()> {
        let m = self.size_multiple();
        let [_, c, h, w] = shape;
        if c != self.in_channels || h == 0 || w == 0 || h % m != 0 || w % m != 0 {
            return Err(Error::shape(
                format!("(n, {}, k*{m}, k*{m})", self.in_channels),
                shape,
            ));
        }
        Ok(())
    }
}

struct EncoderBlock<T> {
    conv: Conv2d<T>,
    norm: Option<BatchNorm2d<T>>,
    out: Option<Tensor<T>>,
}

struct DecoderBlock<T> {
    conv: ConvTranspose2d<T>,
    norm: BatchNorm2d<T>,
    dropout: Option<Dropout<T>>,
    /// Post-ReLU, pre-dropout activations.
    out: Option<Tensor<T>>,
}

/// Encoder-decoder with skip connections between mirrored levels.
pub struct Generator<T> {
    spec: GeneratorSpec,
    encoder: Vec<EncoderBlock<T>>,
    decoder: Vec<DecoderBlock<T>>,
    head: Conv2d<T>,
    head_out: Option<Tensor<T>>,
}

impl<T: Scalar> Generator<T> {
    pub fn new<R: Rng + ?Sized>(spec: GeneratorSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let enc_ch = spec.encoder_channels();
        let mut encoder = Vec::with_capacity(spec.depth);
        let mut prev = spec.in_channels;
        for (i, &ch) in enc_ch.iter().enumerate() {
            let mut conv = Conv2d::new(prev, ch, 4, 2, 1, INIT_STD, rng);
            conv.prefix_names(&format!("enc{i}.conv"));
            let norm = (i > 0).then(|| {
                let mut bn = BatchNorm2d::new(Param::normal("gamma", vec![ch], 1.0, INIT_STD, rng), ch);
                bn.prefix_names(&format!("enc{i}.bn"));
                bn
            });
            encoder.push(EncoderBlock { conv, norm, out: None });
            prev = ch;
        }
        let dec_in = spec.decoder_input_channels();
        let dec_out = spec.decoder_output_channels();
        let mut decoder = Vec::with_capacity(spec.depth);
        for j in 0..spec.depth {
            let mut conv = ConvTranspose2d::new(dec_in[j], dec_out[j], 4, 2, 1, INIT_STD, rng);
            conv.prefix_names(&format!("dec{j}.convt"));
            let mut norm = BatchNorm2d::new(Param::normal("gamma", vec![dec_out[j]], 1.0, INIT_STD, rng), dec_out[j]);
            norm.prefix_names(&format!("dec{j}.bn"));
            let dropout = (j < DROPOUT_BLOCKS && spec.dropout_p > 0.0).then(|| Dropout::new(spec.dropout_p));
            decoder.push(DecoderBlock {
                conv,
                norm,
                dropout,
                out: None,
            });
        }
        let mut head = Conv2d::new(dec_out[spec.depth - 1], spec.out_channels, 3, 1, 1, INIT_STD, rng);
        head.prefix_names("head.conv");
        Ok(Generator {
            spec,
            encoder,
            decoder,
            head,
            head_out: None,
        })
    }

    pub fn spec(&self) -> &GeneratorSpec {
        &self.spec
    }

    /// Output channel count of each convolution in encoder order, for
    /// architecture inspection.
    pub fn encoder_layer_channels(&self) -> Vec<usize> {
        self.encoder.iter().map(|b| b.conv.out_channels()).collect()
    }

    /// Input channel count of each decoder transposed convolution.
    pub fn decoder_layer_input_channels(&self) -> Vec<usize> {
        self.decoder.iter().map(|b| b.conv.in_channels()).collect()
    }

    /// Spatial size of the innermost feature map for an `h x w` input.
    pub fn bottleneck_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (h >> self.spec.depth, w >> self.spec.depth)
    }

    /// Forward pass. `rng` feeds dropout; it is untouched when dropout is off.
    pub fn forward<R: Rng + ?Sized>(&mut self, x: &Tensor<T>, mode: ForwardMode, rng: &mut R) -> Result<Tensor<T>> {
        self.spec.check_input(x.shape())?;
        let d = self.spec.depth;
        let mut skips: Vec<Tensor<T>> = Vec::with_capacity(d);
        for (i, block) in self.encoder.iter_mut().enumerate() {
            let input = if i == 0 { x } else { &skips[i - 1] };
            let mut h = block.conv.forward(input, mode.record)?;
            if let Some(bn) = block.norm.as_mut() {
                h = bn.forward(&h, mode.batch_stats, mode.record)?;
            }
            Activation::LeakyRelu(LEAK).apply(&mut h);
            skips.push(h);
        }
        let mut h = skips[d - 1].clone();
        for (j, block) in self.decoder.iter_mut().enumerate() {
            if j > 0 {
                h = Tensor::concat_channels(&h, &skips[d - 1 - j])?;
            }
            let mut y = block.conv.forward(&h, mode.record)?;
            y = block.norm.forward(&y, mode.batch_stats, mode.record)?;
            Activation::Relu.apply(&mut y);
            if let Some(drop) = block.dropout.as_mut() {
                if mode.record {
                    block.out = Some(y.clone());
                }
                drop.forward(&mut y, mode.dropout, mode.record, rng);
            } else if mode.record {
                block.out = Some(y.clone());
            }
            h = y;
        }
        let mut out = self.head.forward(&h, mode.record)?;
        Activation::Tanh.apply(&mut out);
        if mode.record {
            for (block, s) in self.encoder.iter_mut().zip(skips) {
                block.out = Some(s);
            }
            self.head_out = Some(out.clone());
        }
        Ok(out)
    }

    /// Deterministic translation with running statistics; never mutates the
    /// generator, so a built model can be shared across threads.
    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.spec.check_input(x.shape())?;
        let d = self.spec.depth;
        let mut skips: Vec<Tensor<T>> = Vec::with_capacity(d);
        for (i, block) in self.encoder.iter().enumerate() {
            let input = if i == 0 { x } else { &skips[i - 1] };
            let mut h = block.conv.infer(input)?;
            if let Some(bn) = block.norm.as_ref() {
                h = bn.infer(&h)?;
            }
            Activation::LeakyRelu(LEAK).apply(&mut h);
            skips.push(h);
        }
        let mut h = skips[d - 1].clone();
        for (j, block) in self.decoder.iter().enumerate() {
            if j > 0 {
                h = Tensor::concat_channels(&h, &skips[d - 1 - j])?;
            }
            let mut y = block.norm.infer(&block.conv.infer(&h)?)?;
            Activation::Relu.apply(&mut y);
            h = y;
        }
        let mut out = self.head.infer(&h)?;
        Activation::Tanh.apply(&mut out);
        Ok(out)
    }

    /// Backpropagate `d loss / d output` through the last recorded forward,
    /// accumulating parameter gradients.
    pub fn backward(&mut self, dout: &Tensor<T>) -> Result<()> {
        let d = self.spec.depth;
        let out = self
            .head_out
            .take()
            .ok_or_else(|| Error::Config("generator backward without a recorded forward".into()))?;
        let mut g = dout.clone();
        Activation::Tanh.backward(&out, &mut g);
        let mut g = self
            .head
            .backward(&g, true)?
            .expect("input gradient requested");

        let mut skip_grads: Vec<Option<Tensor<T>>> = (0..d).map(|_| None).collect();
        for j in (0..d).rev() {
            let block = &mut self.decoder[j];
            if let Some(drop) = block.dropout.as_mut() {
                drop.backward(&mut g);
            }
            let relu_out = block
                .out
                .take()
                .ok_or_else(|| Error::Config("decoder cache missing".into()))?;
            Activation::Relu.backward(&relu_out, &mut g);
            let g_norm = block.norm.backward(&g)?;
            let g_in = block.conv.backward(&g_norm, true)?.expect("input gradient requested");
            if j > 0 {
                let prev_ch = self.spec.decoder_output_channels()[j - 1];
                let (g_prev, g_skip) = g_in.split_channels(prev_ch);
                accumulate(&mut skip_grads[d - 1 - j], g_skip);
                g = g_prev;
            } else {
                accumulate(&mut skip_grads[d - 1], g_in);
                g = Tensor::zeros([0, 0, 0, 0]);
            }
        }
        drop(g);

        let mut from_above: Option<Tensor<T>> = None;
        for i in (0..d).rev() {
            let mut g = skip_grads[i].take().expect("every encoder level feeds the decoder");
            if let Some(extra) = from_above.take() {
                g.add_assign(&extra);
            }
            let block = &mut self.encoder[i];
            let out = block
                .out
                .take()
                .ok_or_else(|| Error::Config("encoder cache missing".into()))?;
            Activation::LeakyRelu(LEAK).backward(&out, &mut g);
            if let Some(bn) = block.norm.as_mut() {
                g = bn.backward(&g)?;
            }
            from_above = block.conv.backward(&g, i > 0)?;
        }
        Ok(())
    }
}

fn accumulate<T: Scalar>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) {
    match slot {
        Some(s) => s.add_assign(&g),
        None => *slot = Some(g),
    }
}

impl<T: Scalar> Module<T> for Generator<T> {
    fn params(&self) -> Vec<&Param<T>> {
        let mut v = Vec::new();
        for b in &self.encoder {
            v.extend(b.conv.params());
            if let Some(n) = &b.norm {
                v.extend(n.params());
            }
        }
        for b in &self.decoder {
            v.extend(b.conv.params());
            v.extend(b.norm.params());
        }
        v.extend(self.head.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = Vec::new();
        for b in &mut self.encoder {
            v.extend(b.conv.params_mut());
            if let Some(n) = &mut b.norm {
                v.extend(n.params_mut());
            }
        }
        for b in &mut self.decoder {
            v.extend(b.conv.params_mut());
            v.extend(b.norm.params_mut());
        }
        v.extend(self.head.params_mut());
        v
    }

    fn buffers(&self) -> Vec<&Param<T>> {
        let mut v = Vec::new();
        for b in &self.encoder {
            if let Some(n) = &b.norm {
                v.extend(n.buffers());
            }
        }
        for b in &self.decoder {
            v.extend(b.norm.buffers());
        }
        v
    }

    fn buffers_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = Vec::new();
        for b in &mut self.encoder {
            if let Some(n) = &mut b.norm {
                v.extend(n.buffers_mut());
            }
        }
        for b in &mut self.decoder {
            v.extend(b.norm.buffers_mut());
        }
        v
    }
}
