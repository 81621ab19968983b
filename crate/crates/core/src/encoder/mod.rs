//! Spatial encoder: two-channel (depth, print) image to a `[C, Hf, Wf]` feature grid.
//!
//! The input image goes into its modality's channel and the other channel is
//! zero. Global pooling is never applied, so every feature cell keeps a
//! position on the sole; [`mask_features`] restricts a comparison to the
//! cells a query mask covers.

mod checkpoint;
mod mask;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::image::{Frame, Image};
use crate::nn::{ConvSpec, Init, Layer, Network, NetworkBuilder, ParamInfo, Tape, Tensor};

pub use checkpoint::{Checkpoint, CheckpointTensor, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use mask::{
    mask_features, mask_features_backward, mask_features_cells, sample_rect_mask, CellMask, MaskedFeatures,
    VisibilityMask,
};

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("encoder weights are not loaded")]
    UnloadedWeights,
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("checkpoint config does not match: {0}")]
    ConfigMismatch(String),
    #[error("invalid encoder config: {0}")]
    InvalidConfig(String),
    #[error("mask covers no feature cell")]
    EmptyMask,
    #[error("masked features are identically zero")]
    ZeroVector,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    Depth,
    Print,
}

impl Channel {
    pub fn index(self) -> usize {
        match self {
            Channel::Depth => 0,
            Channel::Print => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backbone {
    /// 50-layer bottleneck residual stack, truncated before global pooling.
    ReferenceResnetStyle,
    /// Five stride-2 conv blocks.
    SmallCnn,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub backbone: Backbone,
    pub feature_channels: usize,
    pub downsample_factor: usize,
    pub head_conv_channels: Vec<usize>,
    pub input_channels: usize,
    /// Output channels of each stride-2 block of the small backbone.
    pub small_cnn_channels: Vec<usize>,
    /// Stem width of the residual backbone (64 for the standard layout).
    pub resnet_base_width: usize,
    /// Bottleneck blocks per stage of the residual backbone.
    pub resnet_blocks: [usize; 4],
    pub frame: Frame,
    pub init_seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            backbone: Backbone::ReferenceResnetStyle,
            feature_channels: 128,
            downsample_factor: 32,
            head_conv_channels: vec![256, 128],
            input_channels: 2,
            small_cnn_channels: vec![8, 16, 32, 64, 128],
            resnet_base_width: 64,
            resnet_blocks: [3, 4, 6, 3],
            frame: Frame::default(),
            init_seed: 0,
        }
    }
}

impl EncoderConfig {
    /// Desk-scale preset: small backbone and a lighter head.
    pub fn small() -> Self {
        Self {
            backbone: Backbone::SmallCnn,
            head_conv_channels: vec![128, 128],
            ..Self::default()
        }
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.frame.height / self.downsample_factor, self.frame.width / self.downsample_factor)
    }

    pub fn validate(&self) -> Result<(), EncoderError> {
        let bad = |m: String| Err(EncoderError::InvalidConfig(m));
        if self.input_channels != 2 {
            return bad(format!("input_channels must be 2, got {}", self.input_channels));
        }
        if self.head_conv_channels.last() != Some(&self.feature_channels) {
            return bad(format!(
                "last head channel {:?} must equal feature_channels {}",
                self.head_conv_channels.last(),
                self.feature_channels
            ));
        }
        if self.head_conv_channels.contains(&0) || self.feature_channels == 0 {
            return bad("channel counts must be positive".into());
        }
        let f = self.downsample_factor;
        if f == 0 || self.frame.height % f != 0 || self.frame.width % f != 0 {
            return bad(format!(
                "frame {}x{} is not divisible by downsample factor {f}",
                self.frame.height, self.frame.width
            ));
        }
        let actual = match self.backbone {
            Backbone::SmallCnn => {
                if self.small_cnn_channels.is_empty() || self.small_cnn_channels.contains(&0) {
                    return bad("small_cnn_channels must be non-empty and positive".into());
                }
                1usize << self.small_cnn_channels.len()
            }
            Backbone::ReferenceResnetStyle => {
                if self.resnet_base_width == 0 || self.resnet_blocks.contains(&0) {
                    return bad("residual backbone needs a positive width and >= 1 block per stage".into());
                }
                32
            }
        };
        if actual != f {
            return bad(format!("backbone downsamples by {actual}, config says {f}"));
        }
        Ok(())
    }

    /// True when two configs describe the same architecture (seed aside).
    pub fn same_architecture(&self, other: &EncoderConfig) -> bool {
        let mut a = self.clone();
        a.init_seed = other.init_seed;
        &a == other
    }
}

/// Encoder output, row-major `[C, Hf, Wf]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpatialFeatureMap {
    pub c: usize,
    pub hf: usize,
    pub wf: usize,
    pub values: Vec<f32>,
}

impl SpatialFeatureMap {
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.c, self.hf, self.wf)
    }

    fn from_tensor(t: Tensor) -> Self {
        Self { c: t.c, hf: t.h, wf: t.w, values: t.data }
    }
}

fn build_network(config: &EncoderConfig) -> (Network, Vec<f32>) {
    let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
    let mut b = NetworkBuilder::new(&mut rng);
    let mut layers = Vec::new();
    let mut in_c = config.input_channels;
    match config.backbone {
        Backbone::SmallCnn => {
            for (i, &out_c) in config.small_cnn_channels.iter().enumerate() {
                let spec = ConvSpec { in_c, out_c, kernel: 3, stride: 2, pad: 1 };
                layers.push(Layer::Conv(b.conv(format!("backbone.block{i}.conv"), spec, Init::He)));
                layers.push(Layer::Relu);
                in_c = out_c;
            }
        }
        Backbone::ReferenceResnetStyle => {
            let w = config.resnet_base_width;
            let stem = ConvSpec { in_c, out_c: w, kernel: 7, stride: 2, pad: 3 };
            layers.push(Layer::Conv(b.conv("backbone.stem", stem, Init::He)));
            layers.push(Layer::Relu);
            layers.push(Layer::MaxPool { kernel: 3, stride: 2, pad: 1 });
            in_c = w;
            for (stage, &blocks) in config.resnet_blocks.iter().enumerate() {
                let mid = w << stage;
                let out_c = mid * 4;
                for block in 0..blocks {
                    let stride = if block == 0 && stage > 0 { 2 } else { 1 };
                    let name = format!("backbone.stage{stage}.block{block}");
                    let c1 = b.conv(format!("{name}.conv1"), ConvSpec { in_c, out_c: mid, kernel: 1, stride: 1, pad: 0 }, Init::He);
                    let c2 = b.conv(format!("{name}.conv2"), ConvSpec { in_c: mid, out_c: mid, kernel: 3, stride, pad: 1 }, Init::He);
                    let c3 = b.conv(format!("{name}.conv3"), ConvSpec { in_c: mid, out_c, kernel: 1, stride: 1, pad: 0 }, Init::Zero);
                    let shortcut = (in_c != out_c || stride != 1).then(|| {
                        b.conv(format!("{name}.shortcut"), ConvSpec { in_c, out_c, kernel: 1, stride, pad: 0 }, Init::Lecun)
                    });
                    layers.push(Layer::Residual {
                        branch: vec![Layer::Conv(c1), Layer::Relu, Layer::Conv(c2), Layer::Relu, Layer::Conv(c3)],
                        shortcut,
                    });
                    layers.push(Layer::Relu);
                    in_c = out_c;
                }
            }
        }
    }
    let n_head = config.head_conv_channels.len();
    for (i, &out_c) in config.head_conv_channels.iter().enumerate() {
        let last = i + 1 == n_head;
        let spec = ConvSpec { in_c, out_c, kernel: 3, stride: 1, pad: 1 };
        let init = if last { Init::Lecun } else { Init::He };
        layers.push(Layer::Conv(b.conv(format!("head.conv{i}"), spec, init)));
        if !last {
            layers.push(Layer::Relu);
        }
        in_c = out_c;
    }
    b.finish(layers)
}

/// Encoder weights plus architecture.
#[derive(Clone, Debug)]
pub struct Encoder {
    config: EncoderConfig,
    net: Network,
    params: Vec<f32>,
}

impl Encoder {
    /// Builds the network with seeded initial weights.
    pub fn new(config: EncoderConfig) -> Result<Self, EncoderError> {
        config.validate()?;
        let (net, params) = build_network(&config);
        Ok(Self { config, net, params })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn frame(&self) -> Frame {
        self.config.frame
    }

    pub fn feature_shape(&self) -> (usize, usize, usize) {
        let (hf, wf) = self.config.grid();
        (self.config.feature_channels, hf, wf)
    }

    pub fn params(&self) -> &[f32] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f32] {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn param_infos(&self) -> Vec<ParamInfo> {
        self.net.param_infos()
    }

    /// Places `image` in its modality channel, zeros in the other.
    pub fn input_tensor(&self, image: &Image, channel: Channel) -> Result<Tensor, EncoderError> {
        if image.frame() != self.config.frame {
            return Err(EncoderError::ShapeMismatch(format!(
                "input {}x{}, encoder frame {}x{}",
                image.height(),
                image.width(),
                self.config.frame.height,
                self.config.frame.width
            )));
        }
        let plane = image.height() * image.width();
        let mut data = vec![0.0f32; 2 * plane];
        let off = channel.index() * plane;
        data[off..off + plane].copy_from_slice(image.pixels());
        Ok(Tensor::from_vec(2, image.height(), image.width(), data))
    }

    pub fn encode(&self, image: &Image, channel: Channel) -> Result<SpatialFeatureMap, EncoderError> {
        let x = self.input_tensor(image, channel)?;
        Ok(self.forward_tensor(x))
    }

    /// Raw forward pass on an already stacked two-channel input.
    pub fn forward_tensor(&self, x: Tensor) -> SpatialFeatureMap {
        SpatialFeatureMap::from_tensor(self.net.forward(&self.params, x))
    }

    pub fn encode_train(&self, image: &Image, channel: Channel) -> Result<(SpatialFeatureMap, Tape), EncoderError> {
        let x = self.input_tensor(image, channel)?;
        let (y, tape) = self.net.forward_train(&self.params, x);
        Ok((SpatialFeatureMap::from_tensor(y), tape))
    }

    /// Accumulates parameter gradients for one image given the gradient of
    /// the loss with respect to its feature map.
    pub fn backward(&self, tape: Tape, grad_features: Vec<f32>, grads: &mut [f32]) {
        let (c, hf, wf) = self.feature_shape();
        self.net.backward_params(&self.params, tape, Tensor::from_vec(c, hf, wf, grad_features), grads);
    }

    /// SHA-256 over the architecture and every parameter.
    pub fn fingerprint(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        let cfg = serde_json::to_vec(&self.config).expect("config serializes");
        h.update(&cfg);
        for p in &self.params {
            h.update(p.to_le_bytes());
        }
        h.finalize().into()
    }

    /// Hash of the encoder output on a fixed small probe image, used to
    /// verify checkpoint round-trips.
    pub fn probe_hash(&self) -> [u8; 32] {
        let f = self.config.downsample_factor;
        let (h, w) = (2 * f, f);
        let data: Vec<f32> = (0..2 * h * w).map(|i| ((i * 7919) % 251) as f32 / 251.0).collect();
        let out = self.net.forward(&self.params, Tensor::from_vec(2, h, w, data));
        let mut hasher = Sha256::new();
        for v in &out.data {
            hasher.update(v.to_le_bytes());
        }
        hasher.finalize().into()
    }

    pub(crate) fn from_parts(config: EncoderConfig, params: Vec<f32>) -> Result<Self, EncoderError> {
        config.validate()?;
        let (net, _) = build_network(&config);
        if params.len() != net.n_params() {
            return Err(EncoderError::CorruptCheckpoint(format!(
                "{} parameters, architecture needs {}",
                params.len(),
                net.n_params()
            )));
        }
        Ok(Self { config, net, params })
    }
}
