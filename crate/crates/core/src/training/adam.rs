use crate::error::{Error, Result};
use crate::models::{Checkpoint, NamedArray};
use crate::nn::Module;

/// Adam with bias correction and a constant learning rate.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    /// Updates applied so far.
    pub steps: u64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(model: &dyn Module<f32>, lr: f64, beta1: f64, beta2: f64) -> Self {
        let zeros: Vec<Vec<f32>> = model.params().iter().map(|p| vec![0.0; p.len()]).collect();
        Adam {
            lr: lr as f32,
            beta1: beta1 as f32,
            beta2: beta2 as f32,
            eps: 1e-8,
            steps: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// Apply one update from the accumulated gradients and reset those
    /// gradients to zero.
    pub fn step(&mut self, model: &mut dyn Module<f32>) {
        self.steps += 1;
        let t = self.steps as i32;
        let c1 = (1.0 - f64::from(self.beta1).powi(t)) as f32;
        let c2 = (1.0 - f64::from(self.beta2).powi(t)) as f32;
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for ((p, m), v) in model.params_mut().into_iter().zip(&mut self.m).zip(&mut self.v) {
            let lanes = p.value.iter_mut().zip(p.grad.iter_mut()).zip(m.iter_mut().zip(v.iter_mut()));
            for ((w, g), (m, v)) in lanes {
                let gi = *g;
                *m = b1 * *m + (1.0 - b1) * gi;
                *v = b2 * *v + (1.0 - b2) * gi * gi;
                *w -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                *g = 0.0;
            }
        }
    }

    /// Moments named `prefix.m.<param>` and `prefix.v.<param>`.
    pub fn export(&self, model: &dyn Module<f32>, prefix: &str) -> Vec<NamedArray> {
        let params = model.params();
        let mut out = Vec::with_capacity(2 * params.len());
        for (tag, moments) in [("m", &self.m), ("v", &self.v)] {
            for (p, data) in params.iter().zip(moments) {
                out.push(NamedArray {
                    name: format!("{prefix}.{tag}.{}", p.name),
                    shape: p.shape.clone(),
                    data: data.clone(),
                });
            }
        }
        out
    }

    pub fn import(&mut self, model: &dyn Module<f32>, prefix: &str, ckpt: &Checkpoint, steps: u64) -> Result<()> {
        let params = model.params();
        for (tag, moments) in [("m", &mut self.m), ("v", &mut self.v)] {
            for (p, slot) in params.iter().zip(moments.iter_mut()) {
                let name = format!("{prefix}.{tag}.{}", p.name);
                let t = ckpt.tensor(&name).ok_or_else(|| Error::CheckpointTensor {
                    name: name.clone(),
                    detail: "optimizer moment missing from checkpoint".into(),
                })?;
                if t.shape != p.shape {
                    return Err(Error::CheckpointTensor {
                        name,
                        detail: format!("checkpoint shape {:?}, model expects {:?}", t.shape, p.shape),
                    });
                }
                slot.copy_from_slice(&t.data);
            }
        }
        self.steps = steps;
        Ok(())
    }
}
