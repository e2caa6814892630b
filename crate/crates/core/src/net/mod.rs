//! Style encoder, content encoder and the part-wise stylizing decoder.

mod checkpoint;
mod layers;
mod model;

use serde::{Deserialize, Serialize};

use crate::skeletal::Reach;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use layers::{adain, atn, bp_adain, bp_atn, bp_stylenet, AttentionRecord, Forward};
pub use model::{Model, StyleFeatures, StyleVars};

/// Network hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    /// Channels at the finest style level; the other levels use 2× and 4×, the
    /// input/output projections half.
    pub base_channels: usize,
    pub reach: Reach,
    /// Temporal kernels of the three encoder convolutions.
    pub encoder_kt: [usize; 3],
    /// Temporal kernel of the residual blocks.
    pub residual_kt: usize,
    /// Temporal kernels of the decoder style blocks, coarse to fine (G3, G2, G1).
    pub decoder_kt: [usize; 3],
    /// Separate attention maps per body part instead of one per level.
    pub atn_per_part: bool,
    /// Initial weight scale of the AdaIN affine generators relative to fan-in init.
    pub adain_gen_scale: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            base_channels: 128,
            reach: Reach::MAIN,
            encoder_kt: [7, 5, 5],
            residual_kt: 3,
            decoder_kt: [5, 5, 7],
            atn_per_part: false,
            adain_gen_scale: 0.1,
        }
    }
}

impl NetConfig {
    pub fn with_base(base_channels: usize) -> Self {
        NetConfig {
            base_channels,
            ..NetConfig::default()
        }
    }

    /// Channel width at each graph level (G1, G2, G3).
    pub fn level_channels(&self) -> [usize; 3] {
        let c = self.base_channels;
        [c, 2 * c, 4 * c]
    }

    /// Width of the 1×1 projections next to the 15-dimensional joint features.
    pub fn io_channels(&self) -> usize {
        (self.base_channels / 2).max(1)
    }
}
