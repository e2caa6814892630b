//! Per-body-part style mixing between a source and a target style set.

use rand::seq::index::sample;
use rand::Rng;

/// Which parts take the source style in one mixing draw.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MixDraw {
    pub from_source: [bool; 5],
}

impl MixDraw {
    /// With probability `prob`, switch a uniformly sized (1..=5) uniformly chosen
    /// subset of parts to the source style; otherwise keep the target style everywhere.
    pub fn sample<R: Rng>(rng: &mut R, prob: f64) -> MixDraw {
        let mut draw = MixDraw::default();
        if rng.gen::<f64>() < prob {
            let n = rng.gen_range(1..=5);
            for p in sample(rng, 5, n) {
                draw.from_source[p] = true;
            }
        }
        draw
    }

    pub fn all_target(&self) -> bool {
        !self.from_source.iter().any(|&b| b)
    }

    pub fn switched(&self) -> usize {
        self.from_source.iter().filter(|&&b| b).count()
    }

    pub fn apply<T: Clone>(&self, src: &[[T; 5]; 3], tar: &[[T; 5]; 3]) -> [[T; 5]; 3] {
        std::array::from_fn(|l| {
            std::array::from_fn(|p| {
                if self.from_source[p] {
                    src[l][p].clone()
                } else {
                    tar[l][p].clone()
                }
            })
        })
    }
}

/// Draws a mix and applies it; returns the mixed set and the draw.
pub fn mix_styles<T: Clone, R: Rng>(
    src: &[[T; 5]; 3],
    tar: &[[T; 5]; 3],
    rng: &mut R,
    prob: f64,
) -> ([[T; 5]; 3], MixDraw) {
    let draw = MixDraw::sample(rng, prob);
    (draw.apply(src, tar), draw)
}
