//! Procedural locomotion on the stock skeleton, used for tests and desk-scale training.

use std::f64::consts::{PI, TAU};

use nalgebra::{Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::features::{yaw_rotation, RawMotion};
use super::skeleton::{Skeleton, N_JOINTS};

/// Gait parameters; angles in radians, distances in meters, rates per frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StyleParams {
    pub name: String,
    pub speed: f64,
    pub cadence: f64,
    pub turn_rate: f64,
    pub leg_swing: f64,
    pub knee_bend: f64,
    pub arm_swing: f64,
    pub arm_lower: f64,
    pub elbow_bend: f64,
    pub lean: f64,
    pub sway: f64,
    pub bounce: f64,
    pub head_tilt: f64,
}

impl Default for StyleParams {
    fn default() -> Self {
        StyleParams {
            name: "neutral".into(),
            speed: 0.022,
            cadence: TAU / 60.0,
            turn_rate: 0.0,
            leg_swing: 0.45,
            knee_bend: 0.6,
            arm_swing: 0.35,
            arm_lower: 1.25,
            elbow_bend: 0.25,
            lean: 0.0,
            sway: 0.03,
            bounce: 0.015,
            head_tilt: 0.0,
        }
    }
}

impl StyleParams {
    /// A small fixed set of visually distinct gaits.
    pub fn presets() -> Vec<StyleParams> {
        let base = StyleParams::default();
        vec![
            base.clone(),
            StyleParams {
                name: "proud".into(),
                lean: -0.12,
                arm_swing: 0.55,
                head_tilt: -0.2,
                leg_swing: 0.5,
                ..base.clone()
            },
            StyleParams {
                name: "depressed".into(),
                speed: 0.012,
                cadence: TAU / 80.0,
                lean: 0.3,
                head_tilt: 0.45,
                arm_swing: 0.08,
                leg_swing: 0.25,
                knee_bend: 0.35,
                bounce: 0.004,
                ..base.clone()
            },
            StyleParams {
                name: "angry".into(),
                speed: 0.03,
                cadence: TAU / 45.0,
                arm_swing: 0.7,
                elbow_bend: 0.9,
                lean: 0.15,
                knee_bend: 0.8,
                bounce: 0.025,
                ..base.clone()
            },
            StyleParams {
                name: "childlike".into(),
                cadence: TAU / 40.0,
                bounce: 0.04,
                arm_lower: 0.7,
                arm_swing: 0.6,
                sway: 0.08,
                ..base.clone()
            },
            StyleParams {
                name: "old".into(),
                speed: 0.01,
                cadence: TAU / 90.0,
                lean: 0.35,
                knee_bend: 0.9,
                leg_swing: 0.2,
                arm_swing: 0.1,
                elbow_bend: 0.6,
                bounce: 0.003,
                ..base.clone()
            },
            StyleParams {
                name: "strutting".into(),
                sway: 0.14,
                arm_swing: 0.5,
                leg_swing: 0.55,
                knee_bend: 0.3,
                lean: -0.05,
                turn_rate: 0.004,
                ..base
            },
        ]
    }
}

/// Walk cycle; `seed` varies initial phase, heading and small amplitude jitter.
pub fn walk(skeleton: &Skeleton, style: &StyleParams, frames: usize, seed: u64) -> RawMotion {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phase0: f64 = rng.gen_range(0.0..TAU);
    let mut heading: f64 = rng.gen_range(-PI..PI);
    let jitter = |rng: &mut ChaCha8Rng, x: f64| x * rng.gen_range(0.92..1.08);
    let s = StyleParams {
        leg_swing: jitter(&mut rng, style.leg_swing),
        arm_swing: jitter(&mut rng, style.arm_swing),
        speed: jitter(&mut rng, style.speed),
        ..style.clone()
    };
    let leg_len =
        skeleton.offset(2).norm() + skeleton.offset(3).norm() + skeleton.offset(1).y.abs();
    let ankle_height = skeleton.offset(4).y.abs();
    let mut root = Vector3::new(rng.gen_range(-1.0..1.0), 0.0, rng.gen_range(-1.0..1.0));
    let rx = |a: f64| Rotation3::from_axis_angle(&Vector3::x_axis(), a);
    let rz = |a: f64| Rotation3::from_axis_angle(&Vector3::z_axis(), a);

    let mut root_positions = Vec::with_capacity(frames);
    let mut rotations = Vec::with_capacity(frames);
    for t in 0..frames {
        let ph = phase0 + s.cadence * t as f64;
        heading += s.turn_rate;
        root += yaw_rotation(heading) * Vector3::new(0.0, 0.0, s.speed);
        let bob = s.bounce * (2.0 * ph).cos();
        let mut r = vec![Rotation3::identity(); N_JOINTS];
        r[0] = yaw_rotation(heading + 0.08 * s.sway * ph.sin())
            * rz(s.sway * ph.sin())
            * rx(s.lean * 0.5);
        // legs: swing about X, negative angle moves the foot forward
        for (side, hip) in [(0.0, 1), (PI, 5)] {
            let p = ph + side;
            r[hip] = rx(-s.leg_swing * p.sin());
            let bend = s.knee_bend * (0.5 + 0.5 * (p + 0.6 * PI).sin()).powi(2);
            r[hip + 1] = rx(bend);
            r[hip + 2] = rx(-0.5 * bend + 0.1 * p.cos());
        }
        r[9] = rx(s.lean * 0.5);
        r[10] = rx(s.lean * 0.3) * rz(-0.6 * s.sway * ph.sin());
        r[11] = rx(s.head_tilt * 0.5);
        r[12] = rx(s.head_tilt * 0.5);
        // arms hang by rotating about Z, then swing opposite to the same-side leg
        for (dir, shoulder, p) in [(-1.0, 13, ph + PI), (1.0, 17, ph)] {
            r[shoulder + 1] = rx(-s.arm_swing * p.sin()) * rz(dir * s.arm_lower);
            r[shoulder + 2] = Rotation3::from_axis_angle(&Vector3::y_axis(), -dir * s.elbow_bend);
        }
        root_positions.push(Vector3::new(
            root.x,
            leg_len + ankle_height + bob - 0.02,
            root.z,
        ));
        rotations.push(r);
    }
    RawMotion {
        root_positions,
        rotations,
        fps: 60.0,
    }
}

/// Rest pose held still at `root`, rotated by `yaw`.
pub fn static_pose(_skeleton: &Skeleton, frames: usize, yaw: f64, root: Vector3<f64>) -> RawMotion {
    let mut r = vec![Rotation3::identity(); N_JOINTS];
    r[0] = yaw_rotation(yaw);
    RawMotion {
        root_positions: vec![root; frames],
        rotations: vec![r; frames],
        fps: 60.0,
    }
}

/// Rest pose sliding along world +Z at `speed` meters per frame.
pub fn translating(_skeleton: &Skeleton, frames: usize, speed: f64) -> RawMotion {
    RawMotion {
        root_positions: (0..frames)
            .map(|t| Vector3::new(0.0, 1.0, speed * t as f64))
            .collect(),
        rotations: vec![vec![Rotation3::identity(); N_JOINTS]; frames],
        fps: 60.0,
    }
}

/// Rest pose spinning about the vertical axis at `rate` radians per frame.
pub fn turning_in_place(_skeleton: &Skeleton, frames: usize, rate: f64) -> RawMotion {
    RawMotion {
        root_positions: vec![Vector3::new(0.0, 1.0, 0.0); frames],
        rotations: (0..frames)
            .map(|t| {
                let mut r = vec![Rotation3::identity(); N_JOINTS];
                r[0] = yaw_rotation(rate * t as f64);
                r
            })
            .collect(),
        fps: 60.0,
    }
}

/// Rest pose moving along a circle: forward `speed` per frame while turning `2π/period` per frame.
pub fn circle(_skeleton: &Skeleton, frames: usize, period: usize, speed: f64) -> RawMotion {
    let rate = TAU / period as f64;
    let mut pos = Vector3::new(0.0, 1.0, 0.0);
    let mut root_positions = Vec::with_capacity(frames);
    let mut rotations = Vec::with_capacity(frames);
    for t in 0..frames {
        let heading = rate * t as f64;
        if t > 0 {
            pos += yaw_rotation(heading) * Vector3::new(0.0, 0.0, speed);
        }
        let mut r = vec![Rotation3::identity(); N_JOINTS];
        r[0] = yaw_rotation(heading);
        root_positions.push(pos);
        rotations.push(r);
    }
    RawMotion {
        root_positions,
        rotations,
        fps: 60.0,
    }
}
