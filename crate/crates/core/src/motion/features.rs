//! Pose-feature representation relative to the character's forward-facing frame.
//!
//! Each frame holds one 15-scalar row per joint:
//! `[position(3), forward axis(3), up axis(3), velocity(3), root vx, root vz, root yaw rate]`.
//! Positions and velocities are in meters (per frame), the yaw rate in radians per frame.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Rotation3, Vector3};

use super::skeleton::{BodyPart, Skeleton, DOF, N_JOINTS};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const POS: usize = 0;
pub const FWD: usize = 3;
pub const UP: usize = 6;
pub const VEL: usize = 9;
pub const ROOT_VEL: usize = 12;

/// Half width of the centered moving average applied to facing directions (5 frames).
const FACING_SMOOTH_RADIUS: usize = 2;

/// Parsed motion: global root position plus local joint rotations per frame.
#[derive(Clone, Debug, PartialEq)]
pub struct RawMotion {
    pub root_positions: Vec<Vector3<f64>>,
    /// `rotations[t][j]` is joint `j`'s rotation relative to its parent.
    pub rotations: Vec<Vec<Rotation3<f64>>>,
    pub fps: f64,
}

impl RawMotion {
    pub fn new(
        root_positions: Vec<Vector3<f64>>,
        rotations: Vec<Vec<Rotation3<f64>>>,
        fps: f64,
    ) -> Result<Self> {
        if root_positions.len() != rotations.len() {
            return Err(Error::Contract(format!(
                "{} root positions for {} rotation frames",
                root_positions.len(),
                rotations.len()
            )));
        }
        if let Some((t, r)) = rotations
            .iter()
            .enumerate()
            .find(|(_, r)| r.len() != N_JOINTS)
        {
            return Err(Error::Contract(format!(
                "frame {t} has {} joint rotations",
                r.len()
            )));
        }
        Ok(RawMotion {
            root_positions,
            rotations,
            fps,
        })
    }

    pub fn frames(&self) -> usize {
        self.root_positions.len()
    }

    /// Forward kinematics: global joint positions and rotations at frame `t`.
    pub fn global_pose(
        &self,
        skeleton: &Skeleton,
        t: usize,
    ) -> (Vec<Vector3<f64>>, Vec<Rotation3<f64>>) {
        let mut pos: Vec<Vector3<f64>> = Vec::with_capacity(N_JOINTS);
        let mut rot: Vec<Rotation3<f64>> = Vec::with_capacity(N_JOINTS);
        for j in 0..N_JOINTS {
            let local = self.rotations[t][j];
            match skeleton.parent(j) {
                Some(p) => {
                    pos.push(pos[p] + rot[p] * skeleton.offset(j));
                    rot.push(rot[p] * local);
                }
                None => {
                    pos.push(self.root_positions[t]);
                    rot.push(local);
                }
            }
        }
        (pos, rot)
    }

    /// Applies a rotation about the vertical axis followed by a planar translation.
    pub fn rigid_planar(&self, yaw: f64, dx: f64, dz: f64) -> RawMotion {
        let r = yaw_rotation(yaw);
        let shift = Vector3::new(dx, 0.0, dz);
        RawMotion {
            root_positions: self.root_positions.iter().map(|p| r * p + shift).collect(),
            rotations: self
                .rotations
                .iter()
                .map(|f| {
                    let mut f = f.clone();
                    f[0] = r * f[0];
                    f
                })
                .collect(),
            fps: self.fps,
        }
    }
}

/// Rotation about +Y by `angle`; maps local +Z to `(sin a, 0, cos a)`.
pub fn yaw_rotation(angle: f64) -> Rotation3<f64> {
    Rotation3::from_axis_angle(&Vector3::y_axis(), angle)
}

pub fn wrap_angle(a: f64) -> f64 {
    let mut a = (a + PI) % (2.0 * PI);
    if a < 0.0 {
        a += 2.0 * PI;
    }
    a - PI
}

/// Rebuilds an orthonormal rotation from its forward (Z) and upward (Y) columns.
pub fn rotation_from_axes(fwd: Vector3<f64>, up: Vector3<f64>) -> Rotation3<f64> {
    let z = fwd.try_normalize(1e-12).unwrap_or_else(Vector3::z);
    let x = up.cross(&z).try_normalize(1e-12).unwrap_or_else(|| {
        // up parallel to forward: pick any perpendicular
        let alt = if z.x.abs() < 0.9 {
            Vector3::x()
        } else {
            Vector3::y()
        };
        alt.cross(&z).normalize()
    });
    let y = z.cross(&x);
    Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[x, y, z]))
}

/// A `T × 21 × 15` pose-feature sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionClip {
    frames: usize,
    data: Vec<f64>,
    pub fps: f64,
}

/// Planar root placement and heading at one frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RootState {
    pub x: f64,
    pub z: f64,
    pub heading: f64,
}

impl MotionClip {
    pub fn new(frames: usize, data: Vec<f64>) -> Result<Self> {
        if frames == 0 || data.len() != frames * N_JOINTS * DOF {
            return Err(Error::Contract(format!(
                "clip data of length {} does not hold {frames} frames of {N_JOINTS}x{DOF}",
                data.len()
            )));
        }
        Ok(MotionClip {
            frames,
            data,
            fps: 60.0,
        })
    }

    pub fn zeros(frames: usize) -> Self {
        MotionClip {
            frames,
            data: vec![0.0; frames * N_JOINTS * DOF],
            fps: 60.0,
        }
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.data[t * N_JOINTS * DOF..(t + 1) * N_JOINTS * DOF]
    }

    pub fn row(&self, t: usize, j: usize) -> &[f64] {
        let o = (t * N_JOINTS + j) * DOF;
        &self.data[o..o + DOF]
    }

    pub fn row_mut(&mut self, t: usize, j: usize) -> &mut [f64] {
        let o = (t * N_JOINTS + j) * DOF;
        &mut self.data[o..o + DOF]
    }

    fn vec3(&self, t: usize, j: usize, at: usize) -> Vector3<f64> {
        let r = self.row(t, j);
        Vector3::new(r[at], r[at + 1], r[at + 2])
    }

    fn set_vec3(&mut self, t: usize, j: usize, at: usize, v: Vector3<f64>) {
        self.row_mut(t, j)[at..at + 3].copy_from_slice(v.as_slice());
    }

    pub fn position(&self, t: usize, j: usize) -> Vector3<f64> {
        self.vec3(t, j, POS)
    }

    pub fn set_position(&mut self, t: usize, j: usize, p: Vector3<f64>) {
        self.set_vec3(t, j, POS, p);
    }

    pub fn velocity(&self, t: usize, j: usize) -> Vector3<f64> {
        self.vec3(t, j, VEL)
    }

    pub fn set_velocity(&mut self, t: usize, j: usize, v: Vector3<f64>) {
        self.set_vec3(t, j, VEL, v);
    }

    pub fn forward_axis(&self, t: usize, j: usize) -> Vector3<f64> {
        self.vec3(t, j, FWD)
    }

    pub fn up_axis(&self, t: usize, j: usize) -> Vector3<f64> {
        self.vec3(t, j, UP)
    }

    pub fn rotation(&self, t: usize, j: usize) -> Rotation3<f64> {
        rotation_from_axes(self.forward_axis(t, j), self.up_axis(t, j))
    }

    pub fn set_rotation(&mut self, t: usize, j: usize, r: &Rotation3<f64>) {
        let m = r.matrix();
        self.set_vec3(t, j, FWD, m.column(2).into_owned());
        self.set_vec3(t, j, UP, m.column(1).into_owned());
    }

    /// Root `(vx, vz, yaw rate)`, averaged over the joint rows that replicate it.
    pub fn root_velocity(&self, t: usize) -> [f64; 3] {
        let mut acc = [0.0; 3];
        for j in 0..N_JOINTS {
            let r = self.row(t, j);
            for k in 0..3 {
                acc[k] += r[ROOT_VEL + k];
            }
        }
        acc.map(|v| v / N_JOINTS as f64)
    }

    pub fn set_root_velocity(&mut self, t: usize, v: [f64; 3]) {
        for j in 0..N_JOINTS {
            self.row_mut(t, j)[ROOT_VEL..ROOT_VEL + 3].copy_from_slice(&v);
        }
    }

    pub fn slice(&self, start: usize, len: usize) -> MotionClip {
        let w = N_JOINTS * DOF;
        MotionClip {
            frames: len,
            data: self.data[start * w..(start + len) * w].to_vec(),
            fps: self.fps,
        }
    }

    /// Repeats the final frame until the clip has `frames` frames, or truncates.
    pub fn fit_length(&self, frames: usize) -> MotionClip {
        let w = N_JOINTS * DOF;
        let mut data = Vec::with_capacity(frames * w);
        for t in 0..frames {
            data.extend_from_slice(self.frame(t.min(self.frames - 1)));
        }
        MotionClip {
            frames,
            data,
            fps: self.fps,
        }
    }

    pub fn to_tensor<F: Scalar>(&self) -> Tensor<F> {
        Tensor::new(
            &[self.frames, N_JOINTS, DOF],
            self.data.iter().map(|&x| F::lit(x)).collect(),
        )
        .expect("clip layout")
    }

    pub fn from_tensor<F: Scalar>(t: &Tensor<F>) -> Result<Self> {
        if t.shape().len() != 3 || t.shape()[1] != N_JOINTS || t.shape()[2] != DOF {
            return Err(Error::Shape(format!(
                "expected (T, {N_JOINTS}, {DOF}), got {:?}",
                t.shape()
            )));
        }
        MotionClip::new(t.shape()[0], t.to_f64_vec())
    }

    pub fn max_abs_diff(&self, other: &MotionClip) -> f64 {
        assert_eq!(self.frames, other.frames);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

fn facing_directions(skeleton: &Skeleton, raw: &RawMotion) -> Result<Vec<Vector3<f64>>> {
    let left_hip = skeleton.joints_of(BodyPart::LL)[0];
    let right_hip = skeleton.joints_of(BodyPart::RL)[0];
    let up = Vector3::y();
    let rawdirs: Vec<Vector3<f64>> = (0..raw.frames())
        .map(|t| {
            let (pos, _) = raw.global_pose(skeleton, t);
            let across = pos[left_hip] - pos[right_hip];
            across.cross(&up)
        })
        .collect();
    let n = rawdirs.len();
    (0..n)
        .map(|t| {
            // symmetric window shrinking at the ends keeps uniform turning unbiased
            let r = FACING_SMOOTH_RADIUS.min(t).min(n - 1 - t);
            let sum: Vector3<f64> = rawdirs[t - r..=t + r].iter().sum();
            let planar = Vector3::new(sum.x, 0.0, sum.z);
            planar.try_normalize(1e-9).ok_or_else(|| {
                Error::Extraction(format!(
                    "degenerate facing direction at frame {t} (zero hip vector)"
                ))
            })
        })
        .collect()
}

/// Converts raw motion into pose features in the per-frame forward-facing frame.
pub fn extract_features(raw: &RawMotion, skeleton: &Skeleton) -> Result<MotionClip> {
    let n = raw.frames();
    if n < 2 {
        return Err(Error::Contract(format!(
            "need at least 2 frames for velocities, got {n}"
        )));
    }
    let facing = facing_directions(skeleton, raw)?;
    let headings: Vec<f64> = facing.iter().map(|f| f.x.atan2(f.z)).collect();
    let mut clip = MotionClip::zeros(n);
    clip.fps = raw.fps;
    let mut grounds = Vec::with_capacity(n);
    for t in 0..n {
        let (pos, rot) = raw.global_pose(skeleton, t);
        let inv = yaw_rotation(headings[t]).inverse();
        let ground = Vector3::new(pos[0].x, 0.0, pos[0].z);
        for j in 0..N_JOINTS {
            clip.set_position(t, j, inv * (pos[j] - ground));
            clip.set_rotation(t, j, &(inv * rot[j]));
        }
        grounds.push(ground);
    }
    for t in 1..n {
        for j in 0..N_JOINTS {
            let v = clip.position(t, j) - clip.position(t - 1, j);
            clip.set_velocity(t, j, v);
        }
        let d = yaw_rotation(headings[t]).inverse() * (grounds[t] - grounds[t - 1]);
        clip.set_root_velocity(t, [d.x, d.z, wrap_angle(headings[t] - headings[t - 1])]);
    }
    for j in 0..N_JOINTS {
        let v = clip.velocity(1, j);
        clip.set_velocity(0, j, v);
    }
    let r1 = clip.root_velocity(1);
    clip.set_root_velocity(0, r1);
    Ok(clip)
}

/// Accumulates root velocities from the origin with zero initial heading.
///
/// Frame `t` has heading `Σ_{k≤t} yaw_k` and position `Σ_{k≤t} R(heading_k)·(vx_k, vz_k)`.
pub fn integrate_root(clip: &MotionClip) -> Vec<RootState> {
    let mut out = Vec::with_capacity(clip.frames());
    let (mut x, mut z, mut heading) = (0.0, 0.0, 0.0);
    for t in 0..clip.frames() {
        let [vx, vz, va] = clip.root_velocity(t);
        heading += va;
        let d = yaw_rotation(heading) * Vector3::new(vx, 0.0, vz);
        x += d.x;
        z += d.z;
        out.push(RootState { x, z, heading });
    }
    out
}

/// Global joint positions per frame, composing the integrated root with local positions.
pub fn to_world(clip: &MotionClip) -> Vec<Vec<Vector3<f64>>> {
    integrate_root(clip)
        .iter()
        .enumerate()
        .map(|(t, rs)| {
            let r = yaw_rotation(rs.heading);
            let g = Vector3::new(rs.x, 0.0, rs.z);
            (0..N_JOINTS).map(|j| r * clip.position(t, j) + g).collect()
        })
        .collect()
}

/// Inverse of [`extract_features`] up to the integration origin: global root
/// positions and parent-relative rotations for writing BVH.
pub fn to_raw(clip: &MotionClip, skeleton: &Skeleton) -> RawMotion {
    let roots = integrate_root(clip);
    let mut root_positions = Vec::with_capacity(clip.frames());
    let mut rotations = Vec::with_capacity(clip.frames());
    for (t, rs) in roots.iter().enumerate() {
        let r = yaw_rotation(rs.heading);
        let global: Vec<Rotation3<f64>> = (0..N_JOINTS).map(|j| r * clip.rotation(t, j)).collect();
        let local = (0..N_JOINTS)
            .map(|j| match skeleton.parent(j) {
                Some(p) => global[p].inverse() * global[j],
                None => global[j],
            })
            .collect();
        root_positions.push(r * clip.position(t, 0) + Vector3::new(rs.x, 0.0, rs.z));
        rotations.push(local);
    }
    RawMotion {
        root_positions,
        rotations,
        fps: clip.fps,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::synth;

    #[test]
    fn standing_still_has_zero_velocities() {
        let sk = Skeleton::standard();
        let raw = synth::static_pose(&sk, 10, 0.3, Vector3::new(1.0, 0.95, -2.0));
        let clip = extract_features(&raw, &sk).unwrap();
        for t in 0..10 {
            assert_eq!(clip.root_velocity(t), [0.0; 3]);
            for j in 0..N_JOINTS {
                assert!(clip.velocity(t, j).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn forward_translation() {
        let sk = Skeleton::standard();
        let raw = synth::translating(&sk, 30, 0.02);
        let clip = extract_features(&raw, &sk).unwrap();
        for t in 0..30 {
            let [vx, vz, va] = clip.root_velocity(t);
            assert!((vz - 0.02).abs() < 1e-12 && vx.abs() < 1e-12 && va.abs() < 1e-12);
        }
    }

    #[test]
    fn constant_turn_rate() {
        let sk = Skeleton::standard();
        let raw = synth::turning_in_place(&sk, 60, 1f64.to_radians());
        let clip = extract_features(&raw, &sk).unwrap();
        for t in 0..60 {
            assert!(
                (clip.root_velocity(t)[2] - PI / 180.0).abs() < 1e-6,
                "frame {t}"
            );
        }
    }

    #[test]
    fn degenerate_hips_are_rejected() {
        let mut joints = Skeleton::standard().joints().to_vec();
        joints[1].offset = Vector3::new(0.0, -0.06, 0.0);
        joints[5].offset = Vector3::new(0.0, -0.06, 0.0);
        let sk = Skeleton::new(joints).unwrap();
        let raw = synth::static_pose(&sk, 4, 0.0, Vector3::new(0.0, 1.0, 0.0));
        assert!(matches!(
            extract_features(&raw, &sk),
            Err(Error::Extraction(_))
        ));
    }

    #[test]
    fn single_frame_rejected() {
        let sk = Skeleton::standard();
        let raw = synth::static_pose(&sk, 1, 0.0, Vector3::new(0.0, 1.0, 0.0));
        assert!(extract_features(&raw, &sk).is_err());
    }

    #[test]
    fn rotation_axes_orthonormal() {
        let sk = Skeleton::standard();
        let raw = synth::walk(&sk, &synth::StyleParams::default(), 40, 0);
        let clip = extract_features(&raw, &sk).unwrap();
        for t in 0..40 {
            for j in 0..N_JOINTS {
                let (f, u) = (clip.forward_axis(t, j), clip.up_axis(t, j));
                assert!((f.norm() - 1.0).abs() < 1e-9 && (u.norm() - 1.0).abs() < 1e-9);
                assert!(f.dot(&u).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn integrate_zero_and_straight() {
        let clip = MotionClip::zeros(5);
        assert!(integrate_root(&clip)
            .iter()
            .all(|r| r.x == 0.0 && r.z == 0.0 && r.heading == 0.0));
        let mut clip = MotionClip::zeros(100);
        for t in 0..100 {
            clip.set_root_velocity(t, [0.0, 0.02, 0.0]);
        }
        let last = *integrate_root(&clip).last().unwrap();
        assert!(last.x.abs() < 1e-12 && (last.z - 2.0).abs() < 1e-9);
    }

    #[test]
    fn axes_round_trip() {
        let r = Rotation3::from_euler_angles(0.3, -1.1, 2.0);
        let m = r.matrix();
        let back = rotation_from_axes(m.column(2).into_owned(), m.column(1).into_owned());
        assert!((back.matrix() - m).norm() < 1e-12);
    }
}
