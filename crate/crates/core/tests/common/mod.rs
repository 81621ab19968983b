#![allow(dead_code)]

use treadmatch::dataset::{synthesize, ShoeInstance, SyntheticSpec};
use treadmatch::encoder::Backbone;
use treadmatch::{EncoderConfig, Frame};

pub const TINY_FRAME: Frame = Frame::new(128, 64);

/// Small CNN on a 128x64 frame: a 4x2 feature grid with 16 channels.
pub fn tiny_encoder_config(seed: u64) -> EncoderConfig {
    EncoderConfig {
        backbone: Backbone::SmallCnn,
        small_cnn_channels: vec![4, 8, 8, 16, 16],
        head_conv_channels: vec![16, 16],
        feature_channels: 16,
        frame: TINY_FRAME,
        init_seed: seed,
        ..EncoderConfig::default()
    }
}

pub fn tiny_instances(n_models: usize, seed: u64) -> Vec<ShoeInstance> {
    synthesize(&SyntheticSpec { frame: TINY_FRAME, ..SyntheticSpec::new(n_models, 2, seed) }).unwrap()
}
