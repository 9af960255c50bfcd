//! Flat training configuration: the file format of `train --config` and the
//! overlay of command-line flags on top of it.

use std::path::Path;

use serde::{Deserialize, Serialize};

use one2one::models::{DiscriminatorSpec, TrainMode};
use one2one::training::{Alternation, TrainConfig};

use crate::CliError;

/// Every field is optional; unset fields fall through to the next layer
/// (flags, then file, then desk defaults).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlatConfig {
    pub mode: Option<TrainMode>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    pub adam_beta1: Option<f64>,
    pub adam_beta2: Option<f64>,
    pub seed: Option<u64>,
    pub lambda_l1: Option<f64>,
    pub load_size: Option<usize>,
    pub crop_size: Option<usize>,
    /// Jitter on or off.
    pub augment: Option<bool>,
    pub checkpoint_every: Option<u64>,
    pub log_every: Option<u64>,
    pub alternation: Option<Alternation>,
    /// Image channels; sets the generator input/output and discriminator input.
    pub channels: Option<usize>,
    pub depth: Option<usize>,
    pub base_filters: Option<usize>,
    pub max_filters: Option<usize>,
    pub dropout_p: Option<f64>,
    pub filter_schedule: Option<Vec<usize>>,
}

macro_rules! overlay_fields {
    ($dst:ident, $src:ident, $($f:ident),*) => {
        $(if $src.$f.is_some() { $dst.$f = $src.$f.clone(); })*
    };
}

impl FlatConfig {
    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config file {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("config file {}: {e}", path.display())))
    }

    /// `self` with every field set in `top` replaced.
    pub fn overlay(mut self, top: &FlatConfig) -> Self {
        let dst = &mut self;
        overlay_fields!(
            dst, top, mode, epochs, batch_size, lr, adam_beta1, adam_beta2, seed, lambda_l1, load_size, crop_size,
            augment, checkpoint_every, log_every, alternation, channels, depth, base_filters, max_filters, dropout_p,
            filter_schedule
        );
        self
    }

    /// Names of the fields that are set.
    pub fn set_fields(&self) -> Vec<&'static str> {
        let v = serde_json::to_value(self).expect("plain struct");
        let mut names = Vec::new();
        for (name, value) in v.as_object().expect("struct serializes to an object") {
            if !value.is_null() {
                names.push(FIELD_NAMES.iter().copied().find(|n| n == name).expect("known field"));
            }
        }
        names
    }

    /// Resolve against the desk defaults.
    pub fn resolve(&self) -> TrainConfig {
        let channels = self.channels.unwrap_or(1);
        let mut cfg = TrainConfig::desk(self.mode.unwrap_or(TrainMode::One2One), channels);
        self.apply_runtime(&mut cfg);
        macro_rules! set {
            ($dst:expr, $f:ident) => {
                if let Some(v) = self.$f {
                    $dst = v;
                }
            };
        }
        set!(cfg.batch_size, batch_size);
        set!(cfg.lr, lr);
        set!(cfg.adam_beta1, adam_beta1);
        set!(cfg.adam_beta2, adam_beta2);
        set!(cfg.seed, seed);
        set!(cfg.loss.lambda_l1, lambda_l1);
        set!(cfg.augment.load_size, load_size);
        set!(cfg.augment.crop_size, crop_size);
        set!(cfg.augment.enabled, augment);
        set!(cfg.alternation, alternation);
        set!(cfg.generator.depth, depth);
        set!(cfg.generator.base_filters, base_filters);
        set!(cfg.generator.max_filters, max_filters);
        set!(cfg.generator.dropout_p, dropout_p);
        if let Some(s) = &self.filter_schedule {
            cfg.discriminator = DiscriminatorSpec {
                in_channels: 2 * channels,
                filter_schedule: s.clone(),
            };
        }
        cfg
    }

    /// The fields a resumed run may change: length and output cadence.
    pub fn apply_runtime(&self, cfg: &mut TrainConfig) {
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.checkpoint_every {
            cfg.checkpoint_every = v;
        }
        if let Some(v) = self.log_every {
            cfg.log_every = v;
        }
    }
}

pub const RUNTIME_FIELDS: [&str; 3] = ["epochs", "checkpoint_every", "log_every"];

const FIELD_NAMES: [&str; 20] = [
    "mode",
    "epochs",
    "batch_size",
    "lr",
    "adam_beta1",
    "adam_beta2",
    "seed",
    "lambda_l1",
    "load_size",
    "crop_size",
    "augment",
    "checkpoint_every",
    "log_every",
    "alternation",
    "channels",
    "depth",
    "base_filters",
    "max_filters",
    "dropout_p",
    "filter_schedule",
];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_beat_file_beat_defaults() {
        let file: FlatConfig = serde_json::from_str(r#"{"epochs": 3, "lr": 0.001, "depth": 4}"#).unwrap();
        let flags = FlatConfig {
            epochs: Some(5),
            ..FlatConfig::default()
        };
        let cfg = file.overlay(&flags).resolve();
        assert_eq!(cfg.epochs, 5);
        assert_eq!(cfg.lr, 0.001);
        assert_eq!(cfg.generator.depth, 4);
        assert_eq!(cfg.batch_size, TrainConfig::desk(TrainMode::One2One, 1).batch_size);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_str::<FlatConfig>(r#"{"epoch": 3}"#).is_err());
    }

    #[test]
    fn every_field_is_named() {
        let all: FlatConfig = serde_json::from_str(
            r#"{"mode":"pix2pixB","epochs":1,"batch_size":1,"lr":0.1,"adam_beta1":0.1,"adam_beta2":0.2,"seed":1,
            "lambda_l1":1,"load_size":8,"crop_size":8,"augment":false,"checkpoint_every":1,"log_every":1,
            "alternation":"interleaved","channels":3,"depth":3,"base_filters":4,"max_filters":8,"dropout_p":0,
            "filter_schedule":[2,4]}"#,
        )
        .unwrap();
        assert_eq!(all.set_fields().len(), FIELD_NAMES.len());
        let cfg = all.resolve();
        assert_eq!(cfg.mode, TrainMode::Pix2PixB);
        assert_eq!(cfg.generator.in_channels, 3);
        assert_eq!(cfg.discriminator.in_channels, 6);
        assert_eq!(cfg.discriminator.filter_schedule, vec![2, 4]);
        assert!(!cfg.augment.enabled);
        assert_eq!(cfg.alternation, Alternation::Interleaved);
    }
}
