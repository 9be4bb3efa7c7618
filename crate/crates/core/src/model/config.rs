use serde::{Deserialize, Serialize};

pub use super::layers::Activation;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WaveformStream {
    Cnn,
    Attention,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvBlock {
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl ConvBlock {
    pub const fn new(channels: usize, kernel: usize, stride: usize) -> Self {
        ConvBlock { channels, kernel, stride }
    }
}

/// Convolutional waveform stream; ends with a global average pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CnnConfig {
    pub blocks: Vec<ConvBlock>,
    pub activation: Activation,
}

impl Default for CnnConfig {
    fn default() -> Self {
        CnnConfig {
            blocks: [16, 32, 64, 64].map(|c| ConvBlock::new(c, 9, 4)).to_vec(),
            activation: Activation::Relu,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PosEncoding {
    /// Sinusoidal code of length `pos_enc_len` appended to each token.
    Concat,
    /// Sinusoidal code added to the projected token.
    Sum,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttentionConfig {
    pub token_len: usize,
    pub pos_enc_len: usize,
    /// Token projection width.
    pub width: usize,
    pub heads: usize,
    pub depth: usize,
    /// Feed-forward hidden width as a multiple of the model width.
    pub ff_mult: usize,
    pub pos_encoding: PosEncoding,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        AttentionConfig {
            token_len: 1000,
            pos_enc_len: 100,
            width: 64,
            heads: 4,
            depth: 2,
            ff_mult: 2,
            pos_encoding: PosEncoding::Concat,
        }
    }
}

impl AttentionConfig {
    /// Width of the token vectors seen by the attention layers.
    pub fn model_width(&self) -> usize {
        match self.pos_encoding {
            PosEncoding::Concat => self.width + self.pos_enc_len,
            PosEncoding::Sum | PosEncoding::None => self.width,
        }
    }

    pub fn tokens_per_channel(&self, samples: usize) -> usize {
        samples.div_ceil(self.token_len)
    }
}

/// Convolutions over frames of the stacked MFCC/log-mel matrix, then flatten.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureStreamConfig {
    pub blocks: Vec<ConvBlock>,
    pub activation: Activation,
    /// Standardize each feature row with frozen training-set statistics.
    pub normalize: bool,
}

impl Default for FeatureStreamConfig {
    fn default() -> Self {
        FeatureStreamConfig {
            blocks: vec![ConvBlock::new(32, 3, 1), ConvBlock::new(32, 3, 2)],
            activation: Activation::Relu,
            normalize: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub waveform_stream: WaveformStream,
    pub n_channels: usize,
    pub input_samples: usize,
    /// Features per channel and frame (MFCC + mel bands).
    pub feature_dim: usize,
    pub n_frames: usize,
    /// Divide the waveform by its RMS over all channels before the stream.
    pub rms_normalize: bool,
    pub cnn: CnnConfig,
    pub attention: AttentionConfig,
    pub feature: FeatureStreamConfig,
    pub head_hidden: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            waveform_stream: WaveformStream::Cnn,
            n_channels: 8,
            input_samples: 24000,
            feature_dim: 53,
            n_frames: 48,
            rms_normalize: true,
            cnn: CnnConfig::default(),
            attention: AttentionConfig::default(),
            feature: FeatureStreamConfig::default(),
            head_hidden: 64,
            seed: 0,
        }
    }
}

fn conv_chain(what: &str, mut len: usize, blocks: &[ConvBlock]) -> Result<usize> {
    if blocks.is_empty() {
        return Err(Error::invalid(format!("{what}: at least one conv block required")));
    }
    for (i, b) in blocks.iter().enumerate() {
        if b.channels == 0 || b.kernel == 0 || b.stride == 0 {
            return Err(Error::invalid(format!("{what} block {i}: sizes must be positive")));
        }
        if len < b.kernel {
            return Err(Error::invalid(format!(
                "{what} block {i}: input length {len} shorter than kernel {}",
                b.kernel
            )));
        }
        len = (len - b.kernel) / b.stride + 1;
    }
    Ok(len)
}

impl ModelConfig {
    /// A very small model over 2 channels of 24 samples, for gradient
    /// checks and smoke tests.
    pub fn tiny(stream: WaveformStream) -> ModelConfig {
        ModelConfig {
            waveform_stream: stream,
            n_channels: 2,
            input_samples: 24,
            feature_dim: 3,
            n_frames: 6,
            rms_normalize: false,
            cnn: CnnConfig {
                blocks: vec![ConvBlock::new(3, 5, 2), ConvBlock::new(4, 3, 2)],
                activation: Activation::Relu,
            },
            attention: AttentionConfig {
                token_len: 8,
                pos_enc_len: 4,
                width: 4,
                heads: 2,
                depth: 1,
                ff_mult: 2,
                pos_encoding: PosEncoding::Concat,
            },
            feature: FeatureStreamConfig {
                blocks: vec![ConvBlock::new(3, 3, 1), ConvBlock::new(2, 2, 2)],
                activation: Activation::Relu,
                normalize: true,
            },
            head_hidden: 5,
            seed: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_channels == 0 || self.input_samples == 0 || self.feature_dim == 0 || self.n_frames == 0 {
            return Err(Error::invalid("model input dimensions must be positive"));
        }
        if self.head_hidden == 0 {
            return Err(Error::invalid("head_hidden must be positive"));
        }
        match self.waveform_stream {
            WaveformStream::Cnn => {
                conv_chain("cnn", self.input_samples, &self.cnn.blocks)?;
            }
            WaveformStream::Attention => {
                let a = &self.attention;
                if a.token_len == 0 || a.pos_enc_len == 0 || a.width == 0 || a.heads == 0 || a.ff_mult == 0 {
                    return Err(Error::invalid("attention sizes must be positive"));
                }
                if !a.model_width().is_multiple_of(a.heads) {
                    return Err(Error::invalid(format!(
                        "attention width {} not divisible by {} heads",
                        a.model_width(),
                        a.heads
                    )));
                }
            }
        }
        conv_chain("feature", self.n_frames, &self.feature.blocks)?;
        Ok(())
    }

    pub fn waveform_embedding_len(&self) -> usize {
        match self.waveform_stream {
            WaveformStream::Cnn => self.cnn.blocks.last().map_or(0, |b| b.channels),
            WaveformStream::Attention => self.attention.model_width(),
        }
    }

    pub fn feature_embedding_len(&self) -> usize {
        let frames = conv_chain("feature", self.n_frames, &self.feature.blocks).unwrap_or(0);
        self.feature.blocks.last().map_or(0, |b| b.channels) * frames
    }

    /// Rows of the stacked feature matrix.
    pub fn feature_rows(&self) -> usize {
        self.n_channels * self.feature_dim
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let cfg = ModelConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.waveform_embedding_len(), 64);
        // 48 -> 46 -> 22 frames, 32 channels
        assert_eq!(cfg.feature_embedding_len(), 32 * 22);
        let att = ModelConfig {
            waveform_stream: WaveformStream::Attention,
            ..cfg
        };
        att.validate().unwrap();
        assert_eq!(att.attention.model_width(), 164);
        assert_eq!(att.attention.tokens_per_channel(24000), 24);
    }

    #[test]
    fn rejects_bad_shapes() {
        let cfg = ModelConfig {
            input_samples: 5,
            ..ModelConfig::default()
        };
        assert!(cfg.validate().is_err());
        let mut cfg = ModelConfig {
            waveform_stream: WaveformStream::Attention,
            ..ModelConfig::default()
        };
        cfg.attention.heads = 5;
        assert!(cfg.validate().is_err());
        let mut cfg = ModelConfig::default();
        cfg.feature.blocks.clear();
        assert!(cfg.validate().is_err());
    }
}
