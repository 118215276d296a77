//! The fixed-architecture network: convolution blocks with zero same-padding
//! and GLU (or ReLU) activations, frequency-only max-pooling, a bidirectional
//! GRU, and a dense head — softmax rows for the CTC head, per-class sigmoids
//! for the GMP/GAP heads. Every backward pass is derived by hand and checked
//! against central finite differences in the tests.

mod adam;
mod checkpoint;
mod conv;
mod gru;
mod head;
mod model;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, Normalizer};
pub use conv::{freq_max_pool_backward, freq_max_pool_forward, Conv2dGrads, Conv2dSame, GluCache, GluConv, GluGrads};
pub use gru::{Bgru, BgruCache, BgruGrads, GruCell, GruGrads};
pub use head::{
    bce_loss, gap_backward, gap_pool, gmp_backward, gmp_pool, sigmoid_mat, softmax_rows, Dense, DenseGrads,
};
pub use model::{Model, ModelCache, ModelGrads, ParamRef};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("kernel sizes must be odd, got {0}x{1}")]
    EvenKernel(usize, usize),
    #[error("frequency axis of {m} bins is not divisible by pool factor {factor}")]
    NotDivisible { m: usize, factor: usize },
    #[error("non-finite gradient in {0}; update skipped")]
    NanGradient(String),
    #[error("bad config: {0}")]
    BadConfig(String),
}

/// How clip-level predictions are read off the frame-level output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    /// Softmax over 2K+1 boundary tokens per frame, trained with CTC.
    Ctc,
    /// Per-class sigmoid per frame, global max pooling, trained with BCE.
    Gmp,
    /// Per-class sigmoid per frame, global average pooling, trained with BCE.
    Gap,
}

impl HeadKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            HeadKind::Ctc => "ctc",
            HeadKind::Gmp => "gmp",
            HeadKind::Gap => "gap",
        }
    }
}

/// Activation of the convolution blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gating {
    Glu,
    /// The no-GLU baseline: a single convolution followed by ReLU.
    Relu,
}

impl Gating {
    pub fn as_str(&self) -> &'static str {
        match self {
            Gating::Glu => "glu",
            Gating::Relu => "relu",
        }
    }
}

/// One convolution block: conv (+gate), then frequency max-pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvBlockSpec {
    pub channels: usize,
    pub kernel_t: usize,
    pub kernel_m: usize,
    pub pool: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Number of event classes K.
    pub classes: usize,
    pub head: HeadKind,
    pub gating: Gating,
    pub blocks: Vec<ConvBlockSpec>,
    pub rnn_hidden: usize,
    pub dropout: f64,
    /// Mel bins of the input features.
    pub n_mels: usize,
}

impl ModelConfig {
    /// The default architecture: three conv blocks (16/32/32 channels, 3x3
    /// kernels, each pooling the 64 mel bins by 2), BGRU with hidden size 32,
    /// dropout 0.2.
    pub fn paper_shape(classes: usize, head: HeadKind, gating: Gating) -> Self {
        let block = |channels| ConvBlockSpec {
            channels,
            kernel_t: 3,
            kernel_m: 3,
            pool: 2,
        };
        ModelConfig {
            classes,
            head,
            gating,
            blocks: vec![block(16), block(32), block(32)],
            rnn_hidden: 32,
            dropout: 0.2,
            n_mels: 64,
        }
    }

    /// A smaller configuration for fast experiments on the 4-class preset.
    pub fn desk_shape(classes: usize, head: HeadKind, gating: Gating, n_mels: usize) -> Self {
        let block = |channels| ConvBlockSpec {
            channels,
            kernel_t: 3,
            kernel_m: 3,
            pool: 2,
        };
        ModelConfig {
            classes,
            head,
            gating,
            blocks: vec![block(8), block(16)],
            rnn_hidden: 16,
            dropout: 0.2,
            n_mels,
        }
    }

    /// Width of the dense head: 2K+1 boundary tokens + blank for CTC, K
    /// sigmoid units otherwise.
    pub fn output_width(&self) -> usize {
        match self.head {
            HeadKind::Ctc => 2 * self.classes + 1,
            HeadKind::Gmp | HeadKind::Gap => self.classes,
        }
    }

    /// Mel bins left after all pooling stages.
    pub fn pooled_mels(&self) -> usize {
        self.blocks.iter().fold(self.n_mels, |m, b| m / b.pool.max(1))
    }

    /// Flattened per-frame width feeding the recurrent layer.
    pub fn rnn_input_width(&self) -> usize {
        let channels = self.blocks.last().map_or(1, |b| b.channels);
        channels * self.pooled_mels()
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if self.classes == 0 {
            return Err(NnError::BadConfig("need at least one class".into()));
        }
        if self.blocks.is_empty() {
            return Err(NnError::BadConfig("need at least one conv block".into()));
        }
        if self.rnn_hidden == 0 {
            return Err(NnError::BadConfig("rnn_hidden must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(NnError::BadConfig(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        let mut mels = self.n_mels;
        for (i, b) in self.blocks.iter().enumerate() {
            if b.kernel_t % 2 == 0 || b.kernel_m % 2 == 0 {
                return Err(NnError::EvenKernel(b.kernel_t, b.kernel_m));
            }
            if b.channels == 0 {
                return Err(NnError::BadConfig(format!("block {i} has zero channels")));
            }
            if b.pool == 0 || mels % b.pool != 0 {
                return Err(NnError::NotDivisible {
                    m: mels,
                    factor: b.pool,
                });
            }
            mels /= b.pool;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn head_widths_match_alphabet() {
        let ctc = ModelConfig::paper_shape(10, HeadKind::Ctc, Gating::Glu);
        assert_eq!(ctc.output_width(), 21);
        let gmp = ModelConfig::paper_shape(10, HeadKind::Gmp, Gating::Glu);
        assert_eq!(gmp.output_width(), 10);
        let gap = ModelConfig::paper_shape(10, HeadKind::Gap, Gating::Glu);
        assert_eq!(gap.output_width(), 10);
    }

    #[test]
    fn paper_shape_pools_64_mels_to_8() {
        let cfg = ModelConfig::paper_shape(10, HeadKind::Ctc, Gating::Glu);
        assert_eq!(cfg.pooled_mels(), 8);
        assert_eq!(cfg.rnn_input_width(), 32 * 8);
        cfg.validate().unwrap();
    }

    #[test]
    fn validation_catches_bad_configs() {
        let mut cfg = ModelConfig::paper_shape(4, HeadKind::Ctc, Gating::Glu);
        cfg.blocks[0].kernel_t = 2;
        assert!(matches!(cfg.validate(), Err(NnError::EvenKernel(2, 3))));

        let mut cfg = ModelConfig::paper_shape(4, HeadKind::Ctc, Gating::Glu);
        cfg.n_mels = 63;
        assert!(matches!(cfg.validate(), Err(NnError::NotDivisible { .. })));

        let mut cfg = ModelConfig::paper_shape(4, HeadKind::Ctc, Gating::Glu);
        cfg.dropout = 1.0;
        assert!(matches!(cfg.validate(), Err(NnError::BadConfig(_))));
    }
}
