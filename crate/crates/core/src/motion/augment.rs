//! Clip slicing and augmentation: windowing, mirroring, temporal random cropping.

use nalgebra::UnitQuaternion;
use rand::Rng;

use super::features::{MotionClip, FWD, POS, ROOT_VEL, UP, VEL};
use super::skeleton::{Skeleton, DOF, N_JOINTS};

pub const STOCK_WINDOW: usize = 120;
pub const STOCK_OVERLAP: usize = 60;

/// Start frames of every full window; empty when `len < window`.
pub fn window_starts(len: usize, window: usize, overlap: usize) -> Vec<usize> {
    assert!(
        overlap < window,
        "overlap {overlap} must be smaller than window {window}"
    );
    if len < window {
        return Vec::new();
    }
    (0..=len - window).step_by(window - overlap).collect()
}

pub fn clip_dataset(clip: &MotionClip, window: usize, overlap: usize) -> Vec<MotionClip> {
    window_starts(clip.frames(), window, overlap)
        .into_iter()
        .map(|s| clip.slice(s, window))
        .collect()
}

/// Reflects the clip across the character's sagittal plane.
pub fn mirror(clip: &MotionClip, skeleton: &Skeleton) -> MotionClip {
    let map = skeleton.mirror_map();
    let mut out = clip.clone();
    for t in 0..clip.frames() {
        for j in 0..N_JOINTS {
            let src = clip.row(t, map[j]);
            let dst = out.row_mut(t, j);
            dst.copy_from_slice(src);
            for base in [POS, FWD, UP, VEL] {
                dst[base] = -dst[base];
            }
            dst[ROOT_VEL] = -dst[ROOT_VEL];
            dst[ROOT_VEL + 2] = -dst[ROOT_VEL + 2];
        }
    }
    out
}

/// One draw of the temporal random crop.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CropPlan {
    pub span: usize,
    pub start: usize,
    pub gamma: f64,
}

impl CropPlan {
    /// Span uniform in `[T/2, T]`; speed factor from `[1, 2]` for spans under
    /// `3T/4`, otherwise from `[0.5, 1]`.
    pub fn sample<R: Rng>(frames: usize, rng: &mut R) -> CropPlan {
        let span = rng.gen_range(frames / 2..=frames).max(1);
        let start = rng.gen_range(0..=frames - span);
        let gamma = if 4 * span < 3 * frames {
            rng.gen_range(1.0..=2.0)
        } else {
            rng.gen_range(0.5..=1.0)
        };
        CropPlan { span, start, gamma }
    }
}

fn lerp_row(a: &[f64], b: &[f64], w: f64, gamma: f64, out: &mut [f64]) {
    let mix = |x: f64, y: f64| if w == 0.0 { x } else { x + (y - x) * w };
    for k in POS..POS + 3 {
        out[k] = mix(a[k], b[k]);
    }
    for k in (VEL..VEL + 3).chain(ROOT_VEL..ROOT_VEL + 3) {
        out[k] = mix(a[k], b[k]) / gamma;
    }
    if w == 0.0 {
        out[FWD..UP + 3].copy_from_slice(&a[FWD..UP + 3]);
    }
}

/// Resamples `plan.span` frames from `plan.start` at `plan.gamma` times the
/// original duration, then cuts or edge-pads to the input length.
pub fn apply_crop(clip: &MotionClip, plan: &CropPlan) -> MotionClip {
    let frames = clip.frames();
    let produced = ((plan.span as f64 * plan.gamma).round() as usize).clamp(1, frames);
    let last = (plan.start + plan.span - 1) as f64;
    let mut out = MotionClip::zeros(frames);
    out.fps = clip.fps;
    for i in 0..produced {
        let s = (plan.start as f64 + i as f64 / plan.gamma).min(last);
        let t0 = s.floor() as usize;
        let t1 = (t0 + 1).min(clip.frames() - 1);
        let w = s - t0 as f64;
        for j in 0..N_JOINTS {
            let mut row = [0.0; DOF];
            lerp_row(clip.row(t0, j), clip.row(t1, j), w, plan.gamma, &mut row);
            out.row_mut(i, j).copy_from_slice(&row);
            if w != 0.0 {
                let qa = UnitQuaternion::from_rotation_matrix(&clip.rotation(t0, j));
                let qb = UnitQuaternion::from_rotation_matrix(&clip.rotation(t1, j));
                let q = qa.try_slerp(&qb, w, 1e-9).unwrap_or(qa);
                out.set_rotation(i, j, &q.to_rotation_matrix());
            }
        }
    }
    let tail = out.frame(produced - 1).to_vec();
    let width = N_JOINTS * DOF;
    for t in produced..frames {
        out.data_mut()[t * width..(t + 1) * width].copy_from_slice(&tail);
    }
    out
}

pub fn temporal_random_crop<R: Rng>(clip: &MotionClip, rng: &mut R) -> MotionClip {
    let plan = CropPlan::sample(clip.frames(), rng);
    apply_crop(clip, &plan)
}
