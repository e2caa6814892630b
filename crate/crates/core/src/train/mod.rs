//! End-to-end optimization: style mixing, the objective, optimizer and trainer loop.

mod losses;
mod mixing;
mod optim;
mod trainer;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::NetConfig;

pub use losses::{
    frame_differences, loss_cyc, loss_rec, loss_root, loss_smooth, loss_smooth_pair, root_velocity,
    LossReport, LossWeights, SmoothPairs,
};
pub use mixing::{mix_styles, MixDraw};
pub use optim::{radam_rectifier, Ema, LrSchedule, OptimizerConfig, OptimizerKind, OptimizerState};
pub use trainer::{pair_objective, PairTerms, Trainer, LOG_HEADER};

/// Training hyperparameters, loadable from TOML.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lambda_cyc: f64,
    pub lambda_root: f64,
    pub lambda_sm: f64,
    /// Probability that a mixing draw switches any part to the source style.
    pub mix_prob: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Fixed step count; overrides `epochs` when set.
    pub steps: Option<usize>,
    pub ema_decay: f64,
    /// Probability of temporally cropping each sampled clip.
    pub crop_rate: f64,
    pub seed: u64,
    pub smooth_pairs: SmoothPairs,
    /// Write a checkpoint every this many steps (0: only at the end).
    pub checkpoint_every: usize,
    pub optimizer: OptimizerConfig,
    /// Applied over `total_steps` of the archive being trained on.
    pub lr_schedule: LrSchedule,
    pub net: NetConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda_cyc: 1.0,
            lambda_root: 1.0,
            lambda_sm: 1.0,
            mix_prob: 0.5,
            batch_size: 8,
            epochs: 10,
            steps: None,
            ema_decay: 0.999,
            crop_rate: 0.2,
            seed: 0,
            smooth_pairs: SmoothPairs::Symmetric,
            checkpoint_every: 0,
            optimizer: OptimizerConfig::default(),
            lr_schedule: LrSchedule::Constant,
            net: NetConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: TrainConfig =
            toml::from_str(text).map_err(|e| Error::Format(format!("training config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            cyc: self.lambda_cyc,
            root: self.lambda_root,
            sm: self.lambda_sm,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Contract(m));
        for (name, v) in [
            ("lambda_cyc", self.lambda_cyc),
            ("lambda_root", self.lambda_root),
            ("lambda_sm", self.lambda_sm),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be a finite value ≥ 0, got {v}"));
            }
        }
        for (name, v) in [("mix_prob", self.mix_prob), ("crop_rate", self.crop_rate)] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return bad(format!(
                "ema_decay must lie in [0, 1), got {}",
                self.ema_decay
            ));
        }
        if !(self.optimizer.lr > 0.0) {
            return bad(format!(
                "learning rate must be positive, got {}",
                self.optimizer.lr
            ));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        Ok(())
    }

    /// Number of optimizer steps for an archive of `clips` clips.
    pub fn total_steps(&self, clips: usize) -> usize {
        self.steps
            .unwrap_or_else(|| self.epochs * clips.div_ceil(self.batch_size))
    }
}
