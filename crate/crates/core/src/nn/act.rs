use rand::Rng;

use crate::tensor::{Scalar, Tensor};

/// Pointwise nonlinearities. Backward passes are written in terms of the
/// activation *output*, which is what the blocks keep around.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    LeakyRelu(f64),
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn apply<T: Scalar>(self, x: &mut Tensor<T>) {
        match self {
            Activation::LeakyRelu(slope) => {
                let s = T::of(slope);
                x.data_mut().iter_mut().for_each(|v| {
                    if *v < T::ZERO {
                        *v *= s
                    }
                });
            }
            Activation::Relu => x.data_mut().iter_mut().for_each(|v| {
                if *v < T::ZERO {
                    *v = T::ZERO
                }
            }),
            Activation::Tanh => x.data_mut().iter_mut().for_each(|v| *v = v.tanh()),
            Activation::Sigmoid => x.data_mut().iter_mut().for_each(|v| *v = sigmoid(*v)),
        }
    }

    /// `dy <- dy * f'(x)` given `out = f(x)`.
    pub fn backward<T: Scalar>(self, out: &Tensor<T>, dy: &mut Tensor<T>) {
        assert_eq!(out.shape(), dy.shape());
        let pairs = dy.data_mut().iter_mut().zip(out.data());
        match self {
            Activation::LeakyRelu(slope) => {
                let s = T::of(slope);
                // slope > 0 keeps the sign, so the output identifies the branch.
                pairs.for_each(|(d, &o)| {
                    if o < T::ZERO {
                        *d *= s
                    }
                });
            }
            Activation::Relu => pairs.for_each(|(d, &o)| {
                if o <= T::ZERO {
                    *d = T::ZERO
                }
            }),
            Activation::Tanh => pairs.for_each(|(d, &o)| *d *= T::ONE - o * o),
            Activation::Sigmoid => pairs.for_each(|(d, &o)| *d *= o * (T::ONE - o)),
        }
    }
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::ZERO {
        T::ONE / (T::ONE + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::ONE + e)
    }
}

/// Inverted dropout: kept units are scaled by `1 / (1 - p)`.
pub struct Dropout<T> {
    p: f64,
    mask: Option<Vec<T>>,
}

impl<T: Scalar> Dropout<T> {
    pub fn new(p: f64) -> Self {
        Dropout { p, mask: None }
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn forward<R: Rng + ?Sized>(&mut self, x: &mut Tensor<T>, active: bool, record: bool, rng: &mut R) {
        if !active || self.p == 0.0 {
            self.mask = None;
            return;
        }
        let keep = T::of(1.0 / (1.0 - self.p));
        let mask: Vec<T> = (0..x.len())
            .map(|_| if rng.random::<f64>() < self.p { T::ZERO } else { keep })
            .collect();
        for (v, &m) in x.data_mut().iter_mut().zip(&mask) {
            *v *= m;
        }
        self.mask = record.then_some(mask);
    }

    pub fn backward(&mut self, dy: &mut Tensor<T>) {
        if let Some(mask) = self.mask.take() {
            for (d, m) in dy.data_mut().iter_mut().zip(mask) {
                *d *= m;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(0.0f64), 0.5);
        assert!(sigmoid(-800.0f64) >= 0.0);
        assert!(sigmoid(800.0f64) <= 1.0);
        assert!((sigmoid(2.0f64) + sigmoid(-2.0f64) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn activation_derivatives_match_finite_differences() {
        let xs = [-1.3f64, -0.2, 0.35, 0.9, 2.1];
        for act in [Activation::LeakyRelu(0.2), Activation::Relu, Activation::Tanh, Activation::Sigmoid] {
            for &x0 in &xs {
                let f = |v: f64| {
                    let mut t = Tensor::from_vec([1, 1, 1, 1], vec![v]).unwrap();
                    act.apply(&mut t);
                    t.data()[0]
                };
                let h = 1e-6;
                let num = (f(x0 + h) - f(x0 - h)) / (2.0 * h);
                let out = Tensor::from_vec([1, 1, 1, 1], vec![f(x0)]).unwrap();
                let mut d = Tensor::from_vec([1, 1, 1, 1], vec![1.0]).unwrap();
                act.backward(&out, &mut d);
                assert!((d.data()[0] - num).abs() < 1e-6, "{act:?} at {x0}");
            }
        }
    }
}
