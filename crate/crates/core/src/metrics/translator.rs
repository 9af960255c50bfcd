use std::collections::HashMap;

use crate::datasets::PairedDataset;
use crate::error::{Error, Result};
use crate::models::{Direction, Generator};
use crate::tensor::ImageTensor;

use super::direction_pair;

/// Anything that maps a model-space image batch to another.
pub trait Translator {
    fn translate(&self, x: &ImageTensor) -> Result<ImageTensor>;
}

impl Translator for Generator<f32> {
    fn translate(&self, x: &ImageTensor) -> Result<ImageTensor> {
        self.infer(x)
    }
}

impl<T: Translator + ?Sized> Translator for &T {
    fn translate(&self, x: &ImageTensor) -> Result<ImageTensor> {
        (**self).translate(x)
    }
}

/// Returns its input.
#[derive(Clone, Copy, Debug, Default)]
pub struct Identity;

impl Translator for Identity {
    fn translate(&self, x: &ImageTensor) -> Result<ImageTensor> {
        Ok(x.clone())
    }
}

/// Returns a constant image of the input's shape.
#[derive(Clone, Copy, Debug)]
pub struct ConstantOutput(pub f32);

impl Translator for ConstantOutput {
    fn translate(&self, x: &ImageTensor) -> Result<ImageTensor> {
        Ok(ImageTensor::full(x.shape(), self.0))
    }
}

/// `v -> -v`, the exact map of the negation task in model space.
#[derive(Clone, Copy, Debug, Default)]
pub struct AnalyticInvolution;

impl Translator for AnalyticInvolution {
    fn translate(&self, x: &ImageTensor) -> Result<ImageTensor> {
        Ok(x.map(|v| -v))
    }
}

/// Wraps a closure.
pub struct FnTranslator<F>(pub F);

impl<F: Fn(&ImageTensor) -> Result<ImageTensor>> Translator for FnTranslator<F> {
    fn translate(&self, x: &ImageTensor) -> Result<ImageTensor> {
        (self.0)(x)
    }
}

/// Returns the dataset label of a known input, bit for bit.
pub struct LabelLookup {
    table: HashMap<Vec<u32>, ImageTensor>,
}

impl LabelLookup {
    pub fn new(dataset: &PairedDataset, direction: Direction) -> Self {
        let table = dataset
            .samples
            .iter()
            .map(|s| {
                let (input, label) = direction_pair(s, direction);
                (key(input), label.clone())
            })
            .collect();
        LabelLookup { table }
    }
}

fn key(x: &ImageTensor) -> Vec<u32> {
    x.data().iter().map(|v| v.to_bits()).collect()
}

impl Translator for LabelLookup {
    fn translate(&self, x: &ImageTensor) -> Result<ImageTensor> {
        self.table
            .get(&key(x))
            .cloned()
            .ok_or_else(|| Error::Dataset("label lookup: input is not in the dataset".into()))
    }
}
